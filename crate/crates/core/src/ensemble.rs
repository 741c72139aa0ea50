//! Seeded initial-data ensembles: combinations of the lowest Dirichlet modes
//! with complex Gaussian weights, reproducible from the seed alone.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::field::{norms, ComplexGridField};
use crate::geometry::Mesh;

/// Stream offset separating ensemble draws from Brownian path streams.
const ENSEMBLE_STREAM_BASE: u64 = 0x5eed_0000_0000_0000;

/// Dirichlet eigenmode shapes ordered by frequency (1D: sin kπx̂; 2D:
/// products ordered by k1² + k2²).
fn mode_indices(dim: usize, count: usize) -> Vec<[usize; 2]> {
    match dim {
        1 => (1..=count).map(|k| [k, 0]).collect(),
        _ => {
            let mut all: Vec<[usize; 2]> = (1..=count)
                .flat_map(|k1| (1..=count).map(move |k2| [k1, k2]))
                .collect();
            all.sort_by_key(|k| (k[0] * k[0] + k[1] * k[1], k[0]));
            all.truncate(count);
            all
        }
    }
}

fn mode_value(mesh: &Mesh, k: &[usize; 2], x: &[f64]) -> f64 {
    let dom = mesh.domain();
    let mut v = 1.0;
    for d in 0..mesh.dim() {
        let xc = (x[d] - dom.lo()[d]) / (dom.hi()[d] - dom.lo()[d]);
        v *= (k[d] as f64 * std::f64::consts::PI * xc).sin();
    }
    v
}

/// `members` random fields y0 = Σ_k w_k · mode_k with complex Gaussian w_k,
/// optionally normalized to |y0|_{H¹₀} = 1.
pub fn fourier_ensemble(
    mesh: &Mesh,
    n_modes: usize,
    members: usize,
    seed: u64,
    normalize_h1: bool,
) -> Vec<ComplexGridField> {
    let modes = mode_indices(mesh.dim(), n_modes);
    (0..members)
        .map(|member| {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            rng.set_stream(ENSEMBLE_STREAM_BASE | member as u64);
            let weights: Vec<Complex64> = modes
                .iter()
                .map(|_| {
                    Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
                })
                .collect();
            let mut field = ComplexGridField::from_fn(mesh, |x| {
                modes
                    .iter()
                    .zip(&weights)
                    .map(|(k, w)| w * mode_value(mesh, k, x))
                    .sum()
            });
            if normalize_h1 {
                let h1 = norms(mesh, &field).h1_sq.sqrt();
                if h1 > 0.0 {
                    field = field.scale(Complex64::new(1.0 / h1, 0.0));
                }
            }
            field
        })
        .collect()
}

/// A single pure Dirichlet mode (useful as a deterministic datum).
pub fn dirichlet_mode(mesh: &Mesh, k: &[usize; 2]) -> ComplexGridField {
    ComplexGridField::from_fn(mesh, |x| Complex64::new(mode_value(mesh, k, x), 0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_mesh, Domain};

    #[test]
    fn deterministic_and_member_independent() {
        let mesh =
            build_mesh(&Domain::new(vec![0.0], vec![1.0], vec![-1.0]).unwrap(), &[16]).unwrap();
        let a = fourier_ensemble(&mesh, 4, 3, 9, true);
        let b = fourier_ensemble(&mesh, 4, 3, 9, true);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.values(), y.values());
        }
        assert_ne!(a[0].values(), a[1].values());
        for f in &a {
            let h1 = norms(&mesh, f).h1_sq;
            assert!((h1 - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn mode_ordering_2d_by_frequency() {
        let idx = mode_indices(2, 4);
        assert_eq!(idx[0], [1, 1]);
        assert!(idx.contains(&[1, 2]) && idx.contains(&[2, 1]));
    }
}
