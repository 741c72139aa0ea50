//! Complex-valued grid fields with homogeneous Dirichlet boundary (values are
//! stored at interior nodes only; boundary values are implicit zeros).

use num_complex::Complex64;
use thiserror::Error;

use crate::geometry::Mesh;

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("field length {got} does not match interior node count {want}")]
    LengthMismatch { got: usize, want: usize },
    #[error("non-finite entry at interior node {0}")]
    NonFinite(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexGridField {
    values: Vec<Complex64>,
}

impl ComplexGridField {
    pub fn zeros(mesh: &Mesh) -> Self {
        Self { values: vec![Complex64::new(0.0, 0.0); mesh.interior_count()] }
    }

    pub fn from_values(mesh: &Mesh, values: Vec<Complex64>) -> Result<Self, FieldError> {
        if values.len() != mesh.interior_count() {
            return Err(FieldError::LengthMismatch { got: values.len(), want: mesh.interior_count() });
        }
        let field = Self { values };
        field.check_finite()?;
        Ok(field)
    }

    pub fn from_fn(mesh: &Mesh, f: impl Fn(&[f64]) -> Complex64) -> Self {
        let values =
            (0..mesh.interior_count()).map(|i| f(&mesh.interior_position(i))).collect();
        Self { values }
    }

    pub fn check_finite(&self) -> Result<(), FieldError> {
        for (i, v) in self.values.iter().enumerate() {
            if !v.re.is_finite() || !v.im.is_finite() {
                return Err(FieldError::NonFinite(i));
            }
        }
        Ok(())
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    pub fn scale(&self, c: Complex64) -> Self {
        Self { values: self.values.iter().map(|v| v * c).collect() }
    }

    pub fn add(&self, other: &Self) -> Self {
        Self { values: self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect() }
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self { values: self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect() }
    }
}

/// Discrete squared L² and H¹ norms: `l2_sq` sums |y|²·cellvol over interior
/// nodes; `h1_sq` adds the forward-difference gradient energy including the
/// one-sided cells touching the Dirichlet boundary (so it equals
/// ⟨−Δ_h y, y⟩·cellvol + l2_sq exactly).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Norms {
    pub l2_sq: f64,
    pub h1_sq: f64,
}

pub fn norms(mesh: &Mesh, field: &ComplexGridField) -> Norms {
    let vol = mesh.cell_volume();
    let l2_sq: f64 = field.values().iter().map(|v| v.norm_sqr()).sum::<f64>() * vol;
    let mut grad = 0.0;
    for d in 0..mesh.dim() {
        let h = mesh.spacing()[d];
        for i in 0..mesh.interior_count() {
            let here = field.values()[i];
            // forward edge (covers all interior-interior and interior-upper-boundary edges)
            let up = mesh.neighbor(i, d, 1).map_or(Complex64::new(0.0, 0.0), |j| field.values()[j]);
            grad += (up - here).norm_sqr() / (h * h) * vol;
            // edge down to the lower boundary, owned by the first interior node
            if mesh.neighbor(i, d, -1).is_none() {
                grad += here.norm_sqr() / (h * h) * vol;
            }
        }
    }
    Norms { l2_sq, h1_sq: l2_sq + grad }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_mesh, Domain};
    use std::f64::consts::PI;

    fn unit_mesh(n: usize) -> Mesh {
        build_mesh(&Domain::new(vec![0.0], vec![1.0], vec![-1.0]).unwrap(), &[n]).unwrap()
    }

    #[test]
    fn zero_field_zero_norms() {
        let mesh = unit_mesh(8);
        let f = ComplexGridField::zeros(&mesh);
        let n = norms(&mesh, &f);
        assert_eq!((n.l2_sq, n.h1_sq), (0.0, 0.0));
    }

    #[test]
    fn sine_mode_norms_converge_second_order() {
        // ∫ sin²(πx) = 1/2 exactly on the grid (discrete orthogonality);
        // gradient energy → π²/2 at O(h²)
        let errs: Vec<f64> = [64usize, 128]
            .iter()
            .map(|&n| {
                let mesh = unit_mesh(n);
                let f = ComplexGridField::from_fn(&mesh, |x| {
                    Complex64::new((PI * x[0]).sin(), 0.0)
                });
                let nm = norms(&mesh, &f);
                assert!((nm.l2_sq - 0.5).abs() < 1e-12);
                ((nm.h1_sq - nm.l2_sq) - PI * PI / 2.0).abs()
            })
            .collect();
        let ratio = errs[0] / errs[1];
        assert!((3.2..=4.8).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn scaling_quadruples_quadratic_norms() {
        let mesh = unit_mesh(16);
        let f = ComplexGridField::from_fn(&mesh, |x| Complex64::new(x[0], 0.3 - x[0]));
        let g = f.scale(Complex64::new(2.0, 0.0));
        let nf = norms(&mesh, &f);
        let ng = norms(&mesh, &g);
        assert_eq!(ng.l2_sq, 4.0 * nf.l2_sq);
        assert_eq!(ng.h1_sq, 4.0 * nf.h1_sq);
    }

    #[test]
    fn gradient_energy_matches_laplacian_quadratic_form_2d() {
        let dom = Domain::new(vec![0.0, 0.0], vec![1.0, 2.0], vec![-1.0, 0.3]).unwrap();
        let mesh = build_mesh(&dom, &[6, 8]).unwrap();
        let f = ComplexGridField::from_fn(&mesh, |x| {
            Complex64::new((2.1 * x[0]).sin() * x[1], (x[0] - x[1]).cos())
        });
        // assemble ⟨−Δ_h f, f⟩ vol directly
        let mut quad = 0.0;
        for i in 0..mesh.interior_count() {
            let mut lap = Complex64::new(0.0, 0.0);
            for d in 0..2 {
                let h = mesh.spacing()[d];
                let up = mesh.neighbor(i, d, 1).map_or(Complex64::new(0.0, 0.0), |j| f.values()[j]);
                let dn = mesh.neighbor(i, d, -1).map_or(Complex64::new(0.0, 0.0), |j| f.values()[j]);
                lap += (up - 2.0 * f.values()[i] + dn) / (h * h);
            }
            quad += (-lap * f.values()[i].conj()).re * mesh.cell_volume();
        }
        let nm = norms(&mesh, &f);
        let grad = nm.h1_sq - nm.l2_sq;
        assert!((grad - quad).abs() <= 1e-12 * grad.abs(), "{grad} vs {quad}");
    }
}
