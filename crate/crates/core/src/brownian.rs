//! Seeded Brownian increments: one scalar motion per path, reproducible from
//! (base_seed, path_index) alone via independent ChaCha streams.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

#[derive(Debug, Clone)]
pub struct BrownianPath {
    pub base_seed: u64,
    pub path_index: u64,
    pub dt: f64,
    pub increments: Vec<f64>,
}

impl BrownianPath {
    /// Increments ΔB_k ~ N(0, Δt); path k draws from stream k of the seeded
    /// generator, so any subset of paths is reproducible in isolation.
    pub fn generate(base_seed: u64, path_index: u64, dt: f64, steps: usize) -> Self {
        assert!(dt > 0.0 && steps > 0);
        let mut rng = ChaCha12Rng::seed_from_u64(base_seed);
        rng.set_stream(path_index);
        let sqrt_dt = dt.sqrt();
        let increments =
            (0..steps).map(|_| sqrt_dt * rng.sample::<f64, _>(StandardNormal)).collect();
        Self { base_seed, path_index, dt, increments }
    }

    /// Same Brownian motion on a grid twice as coarse: consecutive increments
    /// are pair-summed.
    pub fn coarsen(&self) -> Self {
        assert!(self.increments.len() % 2 == 0, "need an even number of increments");
        let increments =
            self.increments.chunks_exact(2).map(|pair| pair[0] + pair[1]).collect();
        Self {
            base_seed: self.base_seed,
            path_index: self.path_index,
            dt: 2.0 * self.dt,
            increments,
        }
    }

    pub fn steps(&self) -> usize {
        self.increments.len()
    }
}
