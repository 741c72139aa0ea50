//! Complex linear solvers for the Crank-Nicolson step: a factored tridiagonal
//! (Thomas) solver in 1D and a factored block-tridiagonal solver for the
//! 5-point Laplacian in 2D (dense LU per line block).

use num_complex::Complex64;

/// Tridiagonal solver with precomputed forward-elimination coefficients;
/// the matrix is factored once and reused for every time step.
#[derive(Debug, Clone)]
pub struct Tridiag {
    n: usize,
    sub: Vec<Complex64>,
    cprime: Vec<Complex64>,
    inv_denom: Vec<Complex64>,
}

impl Tridiag {
    pub fn factor(sub: &[Complex64], diag: &[Complex64], sup: &[Complex64]) -> Self {
        let n = diag.len();
        assert!(n >= 1 && sub.len() == n - 1 && sup.len() == n - 1);
        let mut cprime = vec![Complex64::new(0.0, 0.0); n];
        let mut inv_denom = vec![Complex64::new(0.0, 0.0); n];
        let mut denom = diag[0];
        assert!(denom.norm() > 0.0, "singular pivot");
        inv_denom[0] = 1.0 / denom;
        if n > 1 {
            cprime[0] = sup[0] * inv_denom[0];
        }
        for i in 1..n {
            denom = diag[i] - sub[i - 1] * cprime[i - 1];
            assert!(denom.norm() > 0.0, "singular pivot");
            inv_denom[i] = 1.0 / denom;
            if i + 1 < n {
                cprime[i] = sup[i] * inv_denom[i];
            }
        }
        Self { n, sub: sub.to_vec(), cprime, inv_denom }
    }

    pub fn solve_in_place(&self, rhs: &mut [Complex64]) {
        assert_eq!(rhs.len(), self.n);
        rhs[0] *= self.inv_denom[0];
        for i in 1..self.n {
            rhs[i] = (rhs[i] - self.sub[i - 1] * rhs[i - 1]) * self.inv_denom[i];
        }
        for i in (0..self.n - 1).rev() {
            let next = rhs[i + 1];
            rhs[i] -= self.cprime[i] * next;
        }
    }
}

/// Dense complex LU with partial pivoting (for 2D line blocks).
#[derive(Debug, Clone)]
pub struct DenseLu {
    n: usize,
    lu: Vec<Complex64>,
    piv: Vec<usize>,
}

impl DenseLu {
    pub fn factor(a: &[Complex64], n: usize) -> Self {
        assert_eq!(a.len(), n * n);
        let mut lu = a.to_vec();
        let mut piv = vec![0usize; n];
        for col in 0..n {
            let mut pivot = col;
            let mut best = lu[col * n + col].norm();
            for row in col + 1..n {
                let mag = lu[row * n + col].norm();
                if mag > best {
                    best = mag;
                    pivot = row;
                }
            }
            assert!(best > 0.0, "singular matrix");
            piv[col] = pivot;
            if pivot != col {
                for k in 0..n {
                    lu.swap(col * n + k, pivot * n + k);
                }
            }
            let inv = 1.0 / lu[col * n + col];
            for row in col + 1..n {
                let factor = lu[row * n + col] * inv;
                lu[row * n + col] = factor;
                for k in col + 1..n {
                    let sub = factor * lu[col * n + k];
                    lu[row * n + k] -= sub;
                }
            }
        }
        Self { n, lu, piv }
    }

    pub fn solve_in_place(&self, b: &mut [Complex64]) {
        let n = self.n;
        assert_eq!(b.len(), n);
        // the stored L has all row swaps applied, so permute b fully first
        for col in 0..n {
            b.swap(col, self.piv[col]);
        }
        for col in 0..n {
            let bc = b[col];
            if bc != Complex64::new(0.0, 0.0) {
                for row in col + 1..n {
                    let sub = self.lu[row * n + col] * bc;
                    b[row] -= sub;
                }
            }
        }
        for row in (0..n).rev() {
            let mut acc = b[row];
            for k in row + 1..n {
                acc -= self.lu[row * n + k] * b[k];
            }
            b[row] = acc / self.lu[row * n + row];
        }
    }
}

/// Factored solver for block-tridiagonal systems with constant blocks
/// [e·I, D, e·I]: the structure of I − iγΔ_h on a tensor grid, one block per
/// x-line. Uses the standard block LU recursion Λ_i = D − e² Λ_{i−1}^{-1}.
#[derive(Debug)]
pub struct BlockTridiag {
    lines: usize,
    m: usize,
    e: Complex64,
    lambda_lu: Vec<DenseLu>,
}

impl BlockTridiag {
    /// `d_sub/d_diag/d_sup`: the tridiagonal in-line block D (length m);
    /// `e`: the scalar inter-line coupling; `lines`: number of blocks.
    pub fn factor(
        d_sub: &[Complex64],
        d_diag: &[Complex64],
        d_sup: &[Complex64],
        e: Complex64,
        lines: usize,
    ) -> Self {
        let m = d_diag.len();
        let mut dmat = vec![Complex64::new(0.0, 0.0); m * m];
        for i in 0..m {
            dmat[i * m + i] = d_diag[i];
            if i + 1 < m {
                dmat[i * m + i + 1] = d_sup[i];
                dmat[(i + 1) * m + i] = d_sub[i];
            }
        }
        let mut lambda = dmat.clone();
        let mut lambda_lu = Vec::with_capacity(lines);
        lambda_lu.push(DenseLu::factor(&lambda, m));
        let e2 = e * e;
        let mut inv_prev = invert(lambda_lu.last().unwrap(), m);
        for _ in 1..lines {
            lambda = dmat.clone();
            for (slot, ip) in lambda.iter_mut().zip(inv_prev.iter()) {
                *slot -= e2 * ip;
            }
            let lu = DenseLu::factor(&lambda, m);
            inv_prev = invert(&lu, m);
            lambda_lu.push(lu);
        }
        Self { lines, m, e, lambda_lu }
    }

    /// Solve in place; `rhs` is the row-major stack of the line blocks.
    pub fn solve_in_place(&self, rhs: &mut [Complex64]) {
        let (m, lines) = (self.m, self.lines);
        assert_eq!(rhs.len(), m * lines);
        // forward: z_i = r_i − e Λ_{i−1}^{-1} z_{i−1}
        let mut carry = vec![Complex64::new(0.0, 0.0); m];
        for i in 1..lines {
            carry.copy_from_slice(&rhs[(i - 1) * m..i * m]);
            self.lambda_lu[i - 1].solve_in_place(&mut carry);
            for k in 0..m {
                let sub = self.e * carry[k];
                rhs[i * m + k] -= sub;
            }
        }
        // back: y_K = Λ_K^{-1} z_K; y_i = Λ_i^{-1}(z_i − e y_{i+1})
        self.lambda_lu[lines - 1].solve_in_place(&mut rhs[(lines - 1) * m..lines * m]);
        for i in (0..lines - 1).rev() {
            for k in 0..m {
                let sub = self.e * rhs[(i + 1) * m + k];
                rhs[i * m + k] -= sub;
            }
            self.lambda_lu[i].solve_in_place(&mut rhs[i * m..(i + 1) * m]);
        }
    }
}

fn invert(lu: &DenseLu, m: usize) -> Vec<Complex64> {
    let mut inv = vec![Complex64::new(0.0, 0.0); m * m];
    let mut col = vec![Complex64::new(0.0, 0.0); m];
    for j in 0..m {
        col.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
        col[j] = Complex64::new(1.0, 0.0);
        lu.solve_in_place(&mut col);
        for i in 0..m {
            inv[i * m + j] = col[i];
        }
    }
    inv
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn tridiag_recovers_rhs() {
        let n = 40;
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let diag: Vec<Complex64> =
            (0..n).map(|_| c(3.0 + rng.gen::<f64>(), rng.gen::<f64>())).collect();
        let sub: Vec<Complex64> =
            (0..n - 1).map(|_| c(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)).collect();
        let sup: Vec<Complex64> =
            (0..n - 1).map(|_| c(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)).collect();
        let x: Vec<Complex64> =
            (0..n).map(|_| c(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)).collect();
        // b = T x
        let mut b = vec![c(0.0, 0.0); n];
        for i in 0..n {
            b[i] = diag[i] * x[i];
            if i > 0 {
                b[i] += sub[i - 1] * x[i - 1];
            }
            if i + 1 < n {
                b[i] += sup[i] * x[i + 1];
            }
        }
        let solver = Tridiag::factor(&sub, &diag, &sup);
        solver.solve_in_place(&mut b);
        for i in 0..n {
            assert!((b[i] - x[i]).norm() < 1e-12, "i={i}");
        }
    }

    #[test]
    fn dense_lu_recovers_rhs() {
        let n = 12;
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        let a: Vec<Complex64> =
            (0..n * n).map(|_| c(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)).collect();
        let x: Vec<Complex64> =
            (0..n).map(|_| c(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)).collect();
        let mut b = vec![c(0.0, 0.0); n];
        for i in 0..n {
            for j in 0..n {
                b[i] += a[i * n + j] * x[j];
            }
        }
        let lu = DenseLu::factor(&a, n);
        lu.solve_in_place(&mut b);
        for i in 0..n {
            assert!((b[i] - x[i]).norm() < 5e-9, "i={i}: {:?} vs {:?}", b[i], x[i]);
        }
    }

    #[test]
    fn block_tridiag_matches_direct_apply() {
        let m = 7;
        let lines = 5;
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        let diag: Vec<Complex64> = (0..m).map(|_| c(4.0 + rng.gen::<f64>(), 1.0)).collect();
        let sub: Vec<Complex64> = (0..m - 1).map(|_| c(-0.5, 0.2 * rng.gen::<f64>())).collect();
        let sup = sub.clone();
        let e = c(0.0, -0.8);
        let x: Vec<Complex64> =
            (0..m * lines).map(|_| c(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)).collect();
        // b = A x with A block-tridiag [eI, D, eI]
        let mut b = vec![c(0.0, 0.0); m * lines];
        for line in 0..lines {
            for i in 0..m {
                let mut acc = diag[i] * x[line * m + i];
                if i > 0 {
                    acc += sub[i - 1] * x[line * m + i - 1];
                }
                if i + 1 < m {
                    acc += sup[i] * x[line * m + i + 1];
                }
                if line > 0 {
                    acc += e * x[(line - 1) * m + i];
                }
                if line + 1 < lines {
                    acc += e * x[(line + 1) * m + i];
                }
                b[line * m + i] = acc;
            }
        }
        let solver = BlockTridiag::factor(&sub, &diag, &sup, e, lines);
        solver.solve_in_place(&mut b);
        for i in 0..m * lines {
            assert!((b[i] - x[i]).norm() < 1e-10, "i={i}: {:?} vs {:?}", b[i], x[i]);
        }
    }
}
