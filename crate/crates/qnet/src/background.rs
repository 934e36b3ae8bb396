//! The modulating background chain on `{0,1}^K`.
//!
//! Blocks fail and recover independently, so the joint generator is the
//! Kronecker sum of K two-state generators, the stationary law and the
//! transition matrix factor over blocks, and the deviation matrix follows
//! from the fundamental-matrix identity. State `k` encodes block `b`
//! (0-based) in bit `K-1-b`, with 0 = down and 1 = up.

use nalgebra::{DMatrix, DVector};

use crate::linalg;
use crate::model::BlockSpec;
use crate::{Error, Result};

/// The analyzed background chain. Immutable after construction.
#[derive(Debug, Clone)]
pub struct BackgroundChain {
    blocks: Vec<BlockSpec>,
    q: DMatrix<f64>,
    pi: DVector<f64>,
    deviation: DMatrix<f64>,
}

impl BackgroundChain {
    /// Builds the chain from per-block failure/repair rates. `blocks` may be
    /// empty, giving the single always-state with a 1x1 zero generator.
    pub fn new(blocks: &[BlockSpec]) -> Result<Self> {
        if blocks.len() > crate::model::MAX_BLOCKS {
            return Err(Error::Capacity(format!("{} blocks", blocks.len())));
        }
        let q = build_generator(blocks);
        let pi = stationary_product_form(blocks);
        let deviation = deviation_from_fundamental(&q, &pi)?;
        Ok(BackgroundChain {
            blocks: blocks.to_vec(),
            q,
            pi,
            deviation,
        })
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    /// `2^K`.
    pub fn state_count(&self) -> usize {
        1usize << self.blocks.len()
    }

    pub fn generator(&self) -> &DMatrix<f64> {
        &self.q
    }

    /// Stationary law, as a (row) vector.
    pub fn stationary(&self) -> &DVector<f64> {
        &self.pi
    }

    /// Deviation matrix `D = integral of (P(t) - Pi) dt`.
    pub fn deviation_matrix(&self) -> &DMatrix<f64> {
        &self.deviation
    }

    /// Total outflow rate `q_k = -q_kk` of state `k`.
    pub fn exit_rate(&self, k: usize) -> f64 {
        -self.q[(k, k)]
    }

    /// Stationary up-probability of block `b`.
    pub fn block_up_probability(&self, b: usize) -> f64 {
        let bl = &self.blocks[b];
        bl.q_down_to_up / (bl.q_down_to_up + bl.q_up_to_down)
    }

    fn block_bit(&self, b: usize, k: usize) -> bool {
        (k >> (self.blocks.len() - 1 - b)) & 1 == 1
    }

    /// Transition matrix `P(t)` via the per-block product form.
    pub fn transition_matrix(&self, t: f64) -> Result<DMatrix<f64>> {
        if t < 0.0 {
            return Err(Error::NegativeTime(t));
        }
        let kbar = self.state_count();
        let mut p = DMatrix::zeros(kbar, kbar);
        for k in 0..kbar {
            for l in 0..kbar {
                let mut prod = 1.0;
                for (b, bl) in self.blocks.iter().enumerate() {
                    let q = bl.q_down_to_up + bl.q_up_to_down;
                    let pi_b = bl.q_down_to_up / q;
                    let decay = (-q * t).exp();
                    let p11 = pi_b + (1.0 - pi_b) * decay;
                    let p00 = 1.0 - pi_b + pi_b * decay;
                    prod *= match (self.block_bit(b, k), self.block_bit(b, l)) {
                        (true, true) => p11,
                        (true, false) => 1.0 - p11,
                        (false, true) => 1.0 - p00,
                        (false, false) => p00,
                    };
                }
                p[(k, l)] = prod;
            }
        }
        Ok(p)
    }

    /// Transition matrix via the matrix exponential `e^{Qt}`; kept as the
    /// independent cross-check route for [`Self::transition_matrix`].
    pub fn transition_matrix_exp(&self, t: f64) -> Result<DMatrix<f64>> {
        if t < 0.0 {
            return Err(Error::NegativeTime(t));
        }
        Ok((self.q.clone() * t).exp())
    }

    /// FCLT matrix `Sigma = diag(pi) D + D^T diag(pi)`.
    pub fn fclt_sigma(&self) -> DMatrix<f64> {
        let dp = DMatrix::from_diagonal(&self.pi);
        let s = &dp * &self.deviation + self.deviation.transpose() * &dp;
        // Symmetrize exactly; the expression above is symmetric up to
        // floating-point noise.
        (&s + s.transpose()) * 0.5
    }
}

/// Generator as the Kronecker sum of the per-block 2x2 generators. K=0 gives
/// the 1x1 zero matrix.
pub fn build_generator(blocks: &[BlockSpec]) -> DMatrix<f64> {
    let mut q = DMatrix::zeros(1, 1);
    for bl in blocks {
        let qb = DMatrix::from_row_slice(
            2,
            2,
            &[
                -bl.q_down_to_up,
                bl.q_down_to_up,
                bl.q_up_to_down,
                -bl.q_up_to_down,
            ],
        );
        let dim = q.nrows();
        let eye = DMatrix::identity(dim, dim);
        q = q.kronecker(&DMatrix::identity(2, 2)) + eye.kronecker(&qb);
    }
    q
}

/// Generator by direct enumeration of single-bit flips; test oracle for the
/// Kronecker construction and the bit encoding.
pub fn build_generator_bitflip(blocks: &[BlockSpec]) -> DMatrix<f64> {
    let kk = blocks.len();
    let kbar = 1usize << kk;
    let mut q = DMatrix::zeros(kbar, kbar);
    for k in 0..kbar {
        for (b, bl) in blocks.iter().enumerate() {
            let bit = kk - 1 - b;
            let up = (k >> bit) & 1 == 1;
            let rate = if up { bl.q_up_to_down } else { bl.q_down_to_up };
            let l = k ^ (1 << bit);
            q[(k, l)] += rate;
            q[(k, k)] -= rate;
        }
    }
    q
}

/// Stationary law via the per-block product form.
pub fn stationary_product_form(blocks: &[BlockSpec]) -> DVector<f64> {
    let kk = blocks.len();
    let kbar = 1usize << kk;
    let mut pi = DVector::zeros(kbar);
    for k in 0..kbar {
        let mut p = 1.0;
        for (b, bl) in blocks.iter().enumerate() {
            let pi_b = bl.q_down_to_up / (bl.q_down_to_up + bl.q_up_to_down);
            let up = (k >> (kk - 1 - b)) & 1 == 1;
            p *= if up { pi_b } else { 1.0 - pi_b };
        }
        pi[k] = p;
    }
    pi
}

/// Stationary law via the null-space solve of `pi Q = 0`, normalized; kept
/// as the independent cross-check route.
pub fn stationary_null_solve(q: &DMatrix<f64>) -> Result<DVector<f64>> {
    let kbar = q.nrows();
    // Replace the last column of Q^T-system with the normalization row.
    let mut a = q.clone();
    for k in 0..kbar {
        a[(k, kbar - 1)] = 1.0;
    }
    let mut b = DVector::zeros(kbar);
    b[kbar - 1] = 1.0;
    linalg::solve_row_system(&a, &b)
}

fn deviation_from_fundamental(q: &DMatrix<f64>, pi: &DVector<f64>) -> Result<DMatrix<f64>> {
    let kbar = q.nrows();
    let ones = DVector::from_element(kbar, 1.0);
    let big_pi = &ones * pi.transpose();
    let fundamental = (&big_pi - q)
        .try_inverse()
        .ok_or_else(|| Error::Numerical("fundamental matrix solve failed".into()))?;
    Ok(fundamental - big_pi)
}
