//! Semilinear state observation and pathwise reconstruction.
//!
//! The semilinear equation replaces the sources by globally Lipschitz
//! nonlinearities F1, F2 of |z| (F1(0) = 0); its observation map is
//! M(z0) = ∂z/∂ν on (0,T) × Γ0. The stability scan measures the constant of
//! |z0 − ẑ0|_{L²} ≤ C·|M(z0) − M(ẑ0)|_{Σ0}. Reconstruction is the pathwise
//! linear case (known Brownian realization, an announced inverse crime):
//! Tikhonov least squares solved by conjugate gradients on the normal
//! equations, with the adjoint built by reverse-order transposition of the
//! time stepping.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::brownian::BrownianPath;
use crate::field::{norms, ComplexGridField};
use crate::geometry::{gamma0_nodes, Mesh};
use crate::mc::{mc_expectation, McResult};
use crate::sde::{
    run_scheme, simulate_forward, trace_with_window, Coefficients, ObservationTrace, SimError,
};

#[derive(Debug, Error)]
pub enum InverseError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("reconstruction requires the stored Brownian path (pathwise mode)")]
    PathRequired,
    #[error("Lipschitz spot-check failed for {name}: |F(a)-F(b)| = {lhs} > L|a-b| = {rhs}")]
    LipschitzViolated { name: &'static str, lhs: f64, rhs: f64 },
}

/// Named nonlinearity profiles: zero, linear c·r, and the saturating
/// c·r/(1+r); all globally Lipschitz with constant |c| and F(0) = 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NlProfile {
    Zero,
    Linear { c: f64 },
    Sat { c: f64 },
}

impl NlProfile {
    #[inline]
    pub fn eval(&self, r: f64) -> f64 {
        match self {
            NlProfile::Zero => 0.0,
            NlProfile::Linear { c } => c * r,
            NlProfile::Sat { c } => c * r / (1.0 + r),
        }
    }

    pub fn lipschitz(&self) -> f64 {
        match self {
            NlProfile::Zero => 0.0,
            NlProfile::Linear { c } | NlProfile::Sat { c } => c.abs(),
        }
    }
}

/// F1 drives the drift (returned as a real multiple of 1 + 0i), F2 the noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NonlinearityPair {
    pub f1: NlProfile,
    pub f2: NlProfile,
}

impl NonlinearityPair {
    pub const ZERO: NonlinearityPair = NonlinearityPair { f1: NlProfile::Zero, f2: NlProfile::Zero };

    pub fn is_zero(&self) -> bool {
        matches!((self.f1, self.f2), (NlProfile::Zero, NlProfile::Zero))
    }

    /// Spot-check |F(a) − F(b)| ≤ L|a − b| on random nonnegative pairs.
    pub fn validate_lipschitz(&self, seed: u64) -> Result<(), InverseError> {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        for (name, profile) in [("F1", self.f1), ("F2", self.f2)] {
            let lip = profile.lipschitz();
            for _ in 0..256 {
                let a = 10.0 * rng.gen::<f64>();
                let b = 10.0 * rng.gen::<f64>();
                let lhs = (profile.eval(a) - profile.eval(b)).abs();
                let rhs = lip * (a - b).abs();
                if lhs > rhs + 1e-12 {
                    return Err(InverseError::LipschitzViolated { name, lhs, rhs });
                }
            }
            debug_assert_eq!(profile.eval(0.0), 0.0);
        }
        Ok(())
    }
}

/// One trajectory of the semilinear equation; nl = zero takes the identical
/// arithmetic path as [`simulate_forward`], so the reduction is bit-exact.
pub fn solve_semilinear(
    mesh: &Mesh,
    coeffs: &Coefficients,
    nl: &NonlinearityPair,
    z0: &ComplexGridField,
    path: &BrownianPath,
) -> Result<Vec<ComplexGridField>, SimError> {
    let mut fields = Vec::with_capacity(path.steps() + 1);
    run_scheme(mesh, coeffs, nl, z0, path, |_, y| fields.push(y.clone()))?;
    Ok(fields)
}

/// M(z0) = ∂z/∂ν on (0,T) × Γ0 with the window quadrature attached.
pub fn observation_map(
    mesh: &Mesh,
    coeffs: &Coefficients,
    nl: &NonlinearityPair,
    z0: &ComplexGridField,
    path: &BrownianPath,
) -> Result<ObservationTrace, SimError> {
    let fields = solve_semilinear(mesh, coeffs, nl, z0, path)?;
    Ok(trace_with_window(mesh, &fields, path.dt, &gamma0_nodes(mesh)))
}

/// A stored observation: the trace, its seed provenance, and (for the
/// pathwise reconstruction mode) the Brownian realization itself.
#[derive(Debug, Clone)]
pub struct ObservationRecord {
    pub base_seed: u64,
    pub path_index: u64,
    pub trace: ObservationTrace,
    pub stored_path: Option<BrownianPath>,
}

// ---------------------------------------------------------------------------
// stability scan (Theorem-style quotient measurement)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct StabilityRow {
    pub pair_index: usize,
    /// |z0 − ẑ0|_{L²(G)}
    pub initial_gap: f64,
    /// √(E ∫_{Σ0} |∂(z−ẑ)/∂ν|²)
    pub trace_gap: f64,
    pub trace_gap_se: f64,
    /// initial_gap / trace_gap; 0 for an identical pair (0/0 consistent).
    pub ratio: f64,
}

#[derive(Debug, Clone)]
pub struct StabilityReport {
    pub rows: Vec<StabilityRow>,
    pub max_ratio: f64,
}

/// Measured stability constant over initial-data pairs and common seeded
/// paths. For nl = zero the difference y = z − ẑ solves the linear equation
/// with f = g = 0 and the scan computes it through that reduction (one
/// simulation of the difference field per path).
pub fn stability_scan(
    mesh: &Mesh,
    coeffs: &Coefficients,
    nl: &NonlinearityPair,
    pairs: &[(ComplexGridField, ComplexGridField)],
    paths: usize,
    base_seed: u64,
    steps: usize,
    t_final: f64,
) -> Result<StabilityReport, SimError> {
    let dt = t_final / steps as f64;
    let mut rows = Vec::with_capacity(pairs.len());
    for (idx, (z0, z0_hat)) in pairs.iter().enumerate() {
        let initial_gap = norms(mesh, &z0.sub(z0_hat)).l2_sq.sqrt();
        let energy: McResult = if nl.is_zero() {
            let homog = coeffs.without_sources();
            let diff0 = z0.sub(z0_hat);
            mc_expectation(
                |seed, k| {
                    let path = BrownianPath::generate(seed, k, dt, steps);
                    let fields = simulate_forward(mesh, &homog, &diff0, &path)
                        .expect("difference simulation");
                    trace_with_window(mesh, &fields, dt, &gamma0_nodes(mesh)).energy()
                },
                paths,
                base_seed,
            )
        } else {
            mc_expectation(
                |seed, k| {
                    let path = BrownianPath::generate(seed, k, dt, steps);
                    let ta = observation_map(mesh, coeffs, nl, z0, &path).expect("pair z");
                    let tb = observation_map(mesh, coeffs, nl, z0_hat, &path).expect("pair ẑ");
                    ta.sub(&tb).energy()
                },
                paths,
                base_seed,
            )
        };
        let trace_gap = energy.mean.max(0.0).sqrt();
        let ratio = if trace_gap > 0.0 { initial_gap / trace_gap } else { 0.0 };
        rows.push(StabilityRow {
            pair_index: idx,
            initial_gap,
            trace_gap,
            trace_gap_se: energy.std_error,
            ratio,
        });
    }
    let max_ratio = rows.iter().map(|r| r.ratio).fold(0.0, f64::max);
    Ok(StabilityReport { rows, max_ratio })
}

// ---------------------------------------------------------------------------
// pathwise forward/adjoint map and Tikhonov reconstruction
// ---------------------------------------------------------------------------

/// Discrete pathwise observation map for the linear homogeneous dynamics on
/// a frozen Brownian realization, with its exact adjoint.
pub struct PathwiseMap<'a> {
    mesh: &'a Mesh,
    coeffs: Coefficients,
    path: &'a BrownianPath,
    node_ids: Vec<usize>,
    node_weights: Vec<f64>,
    time_weights: Vec<f64>,
}

impl<'a> PathwiseMap<'a> {
    /// The homogeneous-linear part of the dynamics (sources dropped); the
    /// affine offset M(0) is handled by the caller.
    pub fn new(mesh: &'a Mesh, coeffs: &Coefficients, path: &'a BrownianPath) -> Self {
        let node_ids = gamma0_nodes(mesh);
        let node_weights = node_ids.iter().map(|&id| mesh.boundary()[id].weight).collect();
        let time_weights = crate::sde::window_time_weights(path.steps(), path.dt);
        Self { mesh, coeffs: coeffs.without_sources(), path, node_ids, node_weights, time_weights }
    }

    pub fn node_count(&self) -> usize {
        self.node_ids.len()
    }

    pub fn steps(&self) -> usize {
        self.path.steps()
    }

    /// L z0: Γ0 trace rows at every time node.
    pub fn apply(&self, z0: &ComplexGridField) -> Vec<Vec<Complex64>> {
        let mut rows = Vec::with_capacity(self.steps() + 1);
        run_scheme(self.mesh, &self.coeffs, &NonlinearityPair::ZERO, z0, self.path, |_, y| {
            rows.push(self.trace_row(y));
        })
        .expect("linear pathwise forward");
        rows
    }

    fn trace_row(&self, y: &ComplexGridField) -> Vec<Complex64> {
        self.node_ids
            .iter()
            .map(|&id| {
                let b = &self.mesh.boundary()[id];
                let h = self.mesh.spacing()[b.face / 2];
                let v1 = b.stencil[0].map_or(Complex64::new(0.0, 0.0), |i| y.values()[i]);
                let v2 = b.stencil[1].map_or(Complex64::new(0.0, 0.0), |i| y.values()[i]);
                (-4.0 * v1 + v2) / (2.0 * h)
            })
            .collect()
    }

    /// Tr* u scaled into the domain inner product: Σ_b γ_b coef(b,·) u_b / cellvol.
    fn trace_adjoint_into(&self, u: &[Complex64], out: &mut ComplexGridField) {
        let vol = self.mesh.cell_volume();
        for ((&id, &gamma), &ub) in self.node_ids.iter().zip(&self.node_weights).zip(u) {
            let b = &self.mesh.boundary()[id];
            let h = self.mesh.spacing()[b.face / 2];
            if let Some(i) = b.stencil[0] {
                out.values_mut()[i] += gamma * ub * (-4.0 / (2.0 * h)) / vol;
            }
            if let Some(i) = b.stencil[1] {
                out.values_mut()[i] += gamma * ub * (1.0 / (2.0 * h)) / vol;
            }
        }
    }

    /// L* w for trace-shaped w (one row per time node): reverse-order
    /// transposition of the time stepping. Uses A^H = B, so the adjoint
    /// solve is the conjugated forward solve.
    pub fn apply_adjoint(&self, w: &[Vec<Complex64>]) -> ComplexGridField {
        let mesh = self.mesh;
        let stepper = crate::sde::Stepper::new(mesh, &self.coeffs, self.path.dt);
        let n = mesh.interior_count();
        let mut r = ComplexGridField::zeros(mesh);
        let steps = self.steps();
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for m in (0..steps).rev() {
            // r += Tr*(ω_{m+1} w^{m+1})
            let weighted: Vec<Complex64> =
                w[m + 1].iter().map(|v| self.time_weights[m + 1] * v).collect();
            self.trace_adjoint_into(&weighted, &mut r);
            // r ← C_m^H B^{-1} r;  B^{-1}x = conj(A^{-1} conj(x))
            for (slot, v) in buf.iter_mut().zip(r.values()) {
                *slot = v.conj();
            }
            stepper.solve_cn(&mut buf);
            for (slot, v) in r.values_mut().iter_mut().zip(&buf) {
                *slot = v.conj();
            }
            stepper.apply_step_adjoint(self.path.increments[m], &mut r);
        }
        // ω_0 = 0, so no q_0 contribution
        r
    }

    /// ⟨u, v⟩ over the observation surface with the attached quadrature.
    pub fn data_inner(&self, a: &[Vec<Complex64>], b: &[Vec<Complex64>]) -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for ((tw, ra), rb) in self.time_weights.iter().zip(a).zip(b) {
            if *tw == 0.0 {
                continue;
            }
            for ((gw, va), vb) in self.node_weights.iter().zip(ra).zip(rb) {
                acc += tw * gw * va * vb.conj();
            }
        }
        acc
    }

    pub fn domain_inner(&self, a: &ComplexGridField, b: &ComplexGridField) -> Complex64 {
        let vol = self.mesh.cell_volume();
        a.values().iter().zip(b.values()).map(|(x, y)| x * y.conj()).sum::<Complex64>() * vol
    }
}

/// Relative adjoint-consistency error |⟨Lu, w⟩ − ⟨u, L*w⟩| / |⟨Lu, w⟩| on
/// random complex u, w.
pub fn adjoint_consistency(map: &PathwiseMap<'_>, seed: u64) -> f64 {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let randc =
        |s: &mut ChaCha12Rng| Complex64::new(s.sample(StandardNormal), s.sample(StandardNormal));
    let u = {
        let mut f = ComplexGridField::zeros(map.mesh);
        for v in f.values_mut() {
            *v = randc(&mut rng);
        }
        f
    };
    let w: Vec<Vec<Complex64>> =
        (0..=map.steps()).map(|_| (0..map.node_count()).map(|_| randc(&mut rng)).collect()).collect();
    let lu = map.apply(&u);
    let lhs = map.data_inner(&lu, &w);
    let rhs = map.domain_inner(&u, &map.apply_adjoint(&w));
    (lhs - rhs).norm() / lhs.norm().max(1e-300)
}

#[derive(Debug, Clone, Copy)]
pub struct ReconstructOptions {
    pub alpha: f64,
    pub max_iter: usize,
    pub grad_tol: f64,
}

impl Default for ReconstructOptions {
    fn default() -> Self {
        Self { alpha: 1e-6, max_iter: 500, grad_tol: 1e-8 }
    }
}

#[derive(Debug, Clone)]
pub struct IterationRow {
    pub iter: usize,
    pub objective: f64,
    pub misfit: f64,
    pub penalty: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone)]
pub struct ReconstructionResult {
    pub z0_hat: ComplexGridField,
    pub converged: bool,
    pub iterations: usize,
    pub history: Vec<IterationRow>,
}

/// Minimize J(z0) = ½‖M_path(z0) − h‖²_{Σ0} + (α/2)‖z0‖²_{L²} by CG on the
/// normal equations (L*L + αI) z0 = L*(h − M_path(0)). Linear dynamics only;
/// the Brownian path must be stored in the record (inverse-crime pathwise
/// mode, declared in reports).
pub fn reconstruct(
    mesh: &Mesh,
    coeffs: &Coefficients,
    record: &ObservationRecord,
    opts: ReconstructOptions,
) -> Result<ReconstructionResult, InverseError> {
    let path = record.stored_path.as_ref().ok_or(InverseError::PathRequired)?;
    let map = PathwiseMap::new(mesh, coeffs, path);

    // affine offset from sources/noise offsets: h_eff = h − M(0)
    let offset: Vec<Vec<Complex64>> = if coeffs.f_zero && coeffs.g_zero {
        vec![vec![Complex64::new(0.0, 0.0); map.node_count()]; map.steps() + 1]
    } else {
        let zero = ComplexGridField::zeros(mesh);
        let fields = simulate_forward(mesh, coeffs, &zero, path)?;
        fields.iter().map(|f| {
            let t = trace_with_window(mesh, std::slice::from_ref(f), path.dt, &gamma0_nodes(mesh));
            t.values[0].clone()
        }).collect()
    };
    let h_eff: Vec<Vec<Complex64>> = record
        .trace
        .values
        .iter()
        .zip(&offset)
        .map(|(row, off)| row.iter().zip(off).map(|(h, o)| h - o).collect())
        .collect();

    let alpha = opts.alpha;
    let rhs = map.apply_adjoint(&h_eff);
    let mut x = ComplexGridField::zeros(mesh);
    let mut dx: Vec<Vec<Complex64>> =
        vec![vec![Complex64::new(0.0, 0.0); map.node_count()]; map.steps() + 1]; // L x
    let mut r = rhs.clone();
    let mut rr = map.domain_inner(&r, &r).re;
    let grad0 = rr.sqrt();
    let mut history = Vec::new();

    let record_row = |history: &mut Vec<IterationRow>,
                      iter: usize,
                      x: &ComplexGridField,
                      dx: &[Vec<Complex64>],
                      grad_norm: f64,
                      map: &PathwiseMap<'_>| {
        let resid: Vec<Vec<Complex64>> = dx
            .iter()
            .zip(&h_eff)
            .map(|(a, b)| a.iter().zip(b).map(|(p, q)| p - q).collect())
            .collect();
        let misfit = 0.5 * map.data_inner(&resid, &resid).re;
        let penalty = 0.5 * alpha * map.domain_inner(x, x).re;
        history.push(IterationRow { iter, objective: misfit + penalty, misfit, penalty, grad_norm });
    };
    record_row(&mut history, 0, &x, &dx, grad0, &map);

    if grad0 == 0.0 {
        return Ok(ReconstructionResult { z0_hat: x, converged: true, iterations: 0, history });
    }

    let mut p = r.clone();
    let mut converged = false;
    let mut iterations = 0;
    for iter in 1..=opts.max_iter {
        let lp = map.apply(&p);
        let mut np = map.apply_adjoint(&lp);
        for (slot, v) in np.values_mut().iter_mut().zip(p.values()) {
            *slot += alpha * v;
        }
        let denom = map.domain_inner(&p, &np).re;
        if denom <= 0.0 {
            break;
        }
        let step = rr / denom;
        for (xs, ps) in x.values_mut().iter_mut().zip(p.values()) {
            *xs += step * ps;
        }
        for (rowx, rowp) in dx.iter_mut().zip(&lp) {
            for (a, b) in rowx.iter_mut().zip(rowp) {
                *a += step * b;
            }
        }
        for (rs, ns) in r.values_mut().iter_mut().zip(np.values()) {
            *rs -= step * ns;
        }
        let rr_new = map.domain_inner(&r, &r).re;
        let grad_norm = rr_new.sqrt();
        record_row(&mut history, iter, &x, &dx, grad_norm, &map);
        iterations = iter;
        if grad_norm < opts.grad_tol * grad0 {
            converged = true;
            break;
        }
        let beta = rr_new / rr;
        rr = rr_new;
        for (ps, rs) in p.values_mut().iter_mut().zip(r.values()) {
            *ps = rs + beta * *ps;
        }
    }

    Ok(ReconstructionResult { z0_hat: x, converged, iterations, history })
}

/// J and its gradient L*(L z0 + c − h) + α z0 at z0 (for finite-difference
/// gradient checks; gradient w.r.t. the real inner product Re⟨·,·⟩_{L²}).
pub fn objective_and_gradient(
    mesh: &Mesh,
    coeffs: &Coefficients,
    record: &ObservationRecord,
    alpha: f64,
    z0: &ComplexGridField,
) -> Result<(f64, ComplexGridField), InverseError> {
    let path = record.stored_path.as_ref().ok_or(InverseError::PathRequired)?;
    let map = PathwiseMap::new(mesh, coeffs, path);
    // full forward (with sources) minus data
    let fields = solve_semilinear(mesh, coeffs, &NonlinearityPair::ZERO, z0, path)?;
    let full = trace_with_window(mesh, &fields, path.dt, &gamma0_nodes(mesh));
    let resid: Vec<Vec<Complex64>> = full
        .values
        .iter()
        .zip(&record.trace.values)
        .map(|(a, b)| a.iter().zip(b).map(|(p, q)| p - q).collect())
        .collect();
    let misfit = 0.5 * map.data_inner(&resid, &resid).re;
    let penalty = 0.5 * alpha * map.domain_inner(z0, z0).re;
    let mut grad = map.apply_adjoint(&resid);
    for (gs, zs) in grad.values_mut().iter_mut().zip(z0.values()) {
        *gs += alpha * zs;
    }
    Ok((misfit + penalty, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::dirichlet_mode;
    use crate::geometry::{build_mesh, Domain};
    use std::sync::Arc;

    fn unit_mesh(n: usize) -> Mesh {
        build_mesh(&Domain::new(vec![0.0], vec![1.0], vec![-1.0]).unwrap(), &[n]).unwrap()
    }

    fn test_coeffs() -> Coefficients {
        Coefficients::zero(1)
            .with_a3(Arc::new(|_| 0.5))
            .with_a2(Arc::new(|_| Complex64::new(0.3, 0.1)))
            .with_b1(vec![Arc::new(|x: &[f64]| 0.4 * (std::f64::consts::PI * x[0]).sin())])
    }

    #[test]
    fn profiles_lipschitz_and_zero_at_zero() {
        let nl = NonlinearityPair { f1: NlProfile::Sat { c: 1.0 }, f2: NlProfile::Linear { c: 0.5 } };
        nl.validate_lipschitz(3).unwrap();
        assert_eq!(nl.f1.eval(0.0), 0.0);
        assert_eq!(NlProfile::Sat { c: 2.0 }.lipschitz(), 2.0);
    }

    #[test]
    fn zero_profiles_bit_identical_to_linear_solver() {
        let mesh = unit_mesh(24);
        let coeffs = test_coeffs();
        let path = BrownianPath::generate(3, 1, 1.0 / 64.0, 64);
        let z0 = dirichlet_mode(&mesh, &[2, 0]);
        let a = solve_semilinear(&mesh, &coeffs, &NonlinearityPair::ZERO, &z0, &path).unwrap();
        let b = simulate_forward(&mesh, &coeffs, &z0, &path).unwrap();
        for (fa, fb) in a.iter().zip(&b) {
            assert_eq!(fa.values(), fb.values());
        }
    }

    #[test]
    fn zero_initial_zero_trace() {
        let mesh = unit_mesh(16);
        let coeffs = Coefficients::zero(1);
        let nl = NonlinearityPair { f1: NlProfile::Sat { c: 1.0 }, f2: NlProfile::Sat { c: 0.5 } };
        let path = BrownianPath::generate(1, 0, 1.0 / 32.0, 32);
        let trace =
            observation_map(&mesh, &coeffs, &nl, &ComplexGridField::zeros(&mesh), &path).unwrap();
        assert_eq!(trace.energy(), 0.0);
    }

    #[test]
    fn observation_map_linear_in_z0_frozen_path() {
        let mesh = unit_mesh(24);
        let coeffs = test_coeffs();
        let path = BrownianPath::generate(9, 0, 1.0 / 64.0, 64);
        let za = dirichlet_mode(&mesh, &[1, 0]);
        let zb = dirichlet_mode(&mesh, &[3, 0]);
        let a = Complex64::new(0.7, -0.4);
        let b = Complex64::new(-0.2, 1.1);
        let combo = za.scale(a).add(&zb.scale(b));
        let t_combo = observation_map(&mesh, &coeffs, &NonlinearityPair::ZERO, &combo, &path).unwrap();
        let ta = observation_map(&mesh, &coeffs, &NonlinearityPair::ZERO, &za, &path).unwrap();
        let tb = observation_map(&mesh, &coeffs, &NonlinearityPair::ZERO, &zb, &path).unwrap();
        let mut worst = 0.0f64;
        for n in 0..t_combo.values.len() {
            for j in 0..t_combo.values[n].len() {
                let want = a * ta.values[n][j] + b * tb.values[n][j];
                worst = worst.max((t_combo.values[n][j] - want).norm());
            }
        }
        let scale = t_combo.energy().sqrt().max(1e-300);
        assert!(worst / scale < 1e-11, "nonlinearity in the linear map: {worst}");
    }

    #[test]
    fn adjoint_consistency_tight() {
        let mesh = unit_mesh(20);
        let coeffs = test_coeffs();
        let path = BrownianPath::generate(5, 0, 1.0 / 48.0, 48);
        let map = PathwiseMap::new(&mesh, &coeffs, &path);
        let err = adjoint_consistency(&map, 7);
        assert!(err < 1e-11, "adjoint error {err}");
    }

    #[test]
    fn reconstruct_zero_data_returns_zero() {
        let mesh = unit_mesh(16);
        let coeffs = Coefficients::zero(1);
        let path = BrownianPath::generate(2, 0, 1.0 / 32.0, 32);
        let steps = path.steps();
        let record = ObservationRecord {
            base_seed: 2,
            path_index: 0,
            trace: ObservationTrace {
                dt: path.dt,
                node_ids: gamma0_nodes(&mesh),
                node_weights: vec![1.0],
                time_weights: crate::sde::window_time_weights(steps, path.dt),
                values: vec![vec![Complex64::new(0.0, 0.0)]; steps + 1],
            },
            stored_path: Some(path),
        };
        let res = reconstruct(&mesh, &coeffs, &record, ReconstructOptions::default()).unwrap();
        assert!(res.converged);
        assert!(res.z0_hat.values().iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn inverse_crime_reconstruction_small() {
        let mesh = unit_mesh(32);
        let coeffs = test_coeffs();
        let path = BrownianPath::generate(11, 4, 1.0 / 128.0, 128);
        let truth = dirichlet_mode(&mesh, &[1, 0])
            .add(&dirichlet_mode(&mesh, &[2, 0]).scale(Complex64::new(0.0, 0.5)));
        let trace = observation_map(&mesh, &coeffs, &NonlinearityPair::ZERO, &truth, &path).unwrap();
        let record =
            ObservationRecord { base_seed: 11, path_index: 4, trace, stored_path: Some(path) };
        let res = reconstruct(
            &mesh,
            &coeffs,
            &record,
            ReconstructOptions { alpha: 1e-8, max_iter: 500, grad_tol: 1e-10 },
        )
        .unwrap();
        let err = norms(&mesh, &res.z0_hat.sub(&truth)).l2_sq.sqrt()
            / norms(&mesh, &truth).l2_sq.sqrt();
        assert!(err < 0.05, "relative L² error {err}");
    }

    #[test]
    fn tikhonov_monotonicity_in_alpha() {
        let mesh = unit_mesh(24);
        let coeffs = test_coeffs();
        let path = BrownianPath::generate(13, 0, 1.0 / 64.0, 64);
        let truth = dirichlet_mode(&mesh, &[1, 0]);
        let trace = observation_map(&mesh, &coeffs, &NonlinearityPair::ZERO, &truth, &path).unwrap();
        let record = ObservationRecord {
            base_seed: 13,
            path_index: 0,
            trace,
            stored_path: Some(path),
        };
        let mut last_misfit = -1.0;
        let mut last_penalty = f64::INFINITY;
        for &alpha in &[1e-8, 1e-4, 1e-1] {
            let res = reconstruct(
                &mesh,
                &coeffs,
                &record,
                ReconstructOptions { alpha, max_iter: 400, grad_tol: 1e-10 },
            )
            .unwrap();
            let row = res.history.last().unwrap();
            assert!(row.misfit >= last_misfit - 1e-12, "misfit not nondecreasing in α");
            let penalty_unweighted = row.penalty / alpha;
            assert!(penalty_unweighted <= last_penalty + 1e-12, "penalty not nonincreasing in α");
            last_misfit = row.misfit;
            last_penalty = penalty_unweighted;
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mesh = unit_mesh(16);
        let coeffs = test_coeffs();
        let path = BrownianPath::generate(17, 0, 1.0 / 32.0, 32);
        let truth = dirichlet_mode(&mesh, &[2, 0]);
        let trace = observation_map(&mesh, &coeffs, &NonlinearityPair::ZERO, &truth, &path).unwrap();
        let record =
            ObservationRecord { base_seed: 17, path_index: 0, trace, stored_path: Some(path) };
        let alpha = 1e-4;
        let z0 = dirichlet_mode(&mesh, &[1, 0]).scale(Complex64::new(0.3, 0.2));
        let (_, grad) = objective_and_gradient(&mesh, &coeffs, &record, alpha, &z0).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(23);
        let eps = 1e-4;
        for trial in 0..5 {
            let dir = {
                let mut f = ComplexGridField::zeros(&mesh);
                for v in f.values_mut() {
                    *v = Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal));
                }
                f
            };
            let plus = z0.add(&dir.scale(Complex64::new(eps, 0.0)));
            let minus = z0.sub(&dir.scale(Complex64::new(eps, 0.0)));
            let (jp, _) = objective_and_gradient(&mesh, &coeffs, &record, alpha, &plus).unwrap();
            let (jm, _) = objective_and_gradient(&mesh, &coeffs, &record, alpha, &minus).unwrap();
            let fd = (jp - jm) / (2.0 * eps);
            let vol = mesh.cell_volume();
            let analytic: f64 = grad
                .values()
                .iter()
                .zip(dir.values())
                .map(|(g, d)| (g * d.conj()).re)
                .sum::<f64>()
                * vol;
            let rel = (fd - analytic).abs() / analytic.abs().max(1e-12);
            assert!(rel < 1e-5, "trial {trial}: fd {fd} vs {analytic} (rel {rel})");
        }
    }
}
