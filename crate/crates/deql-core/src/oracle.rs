//! Independent checks on the solvers: a Monte-Carlo estimator of the dropout
//! objective, its exact closed-form expectation, a local-minimality probe,
//! and a positive-definiteness certificate.
//!
//! The estimator and the expectation are deliberately written against the
//! objective's definition (draw masks, weight residuals), not against any
//! solver internals, so agreement between a solver's output and these
//! numbers is evidence rather than tautology.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{GramBundle, InteractionMatrix};
use crate::error::{Error, Result};
use crate::mat::{dot, Cholesky, CholeskyOutcome, Mat};
use crate::model::WeightMatrix;
use crate::seeds::{derive, splitmix64};
use crate::solver::{build_h_v, coefficients, Hyperparameters, Variant};

/// Monte-Carlo estimate of the expected training loss.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LossEstimate {
    pub mean: f64,
    /// Standard error of the mean (sample standard deviation over
    /// sqrt(num_samples)).
    pub std_error: f64,
    pub num_samples: usize,
}

/// 53-bit uniform in [0, 1) for one (sample, user, item) cell, derived
/// purely from the key so the stream is independent of iteration order and
/// thread count.
fn cell_uniform(seed: u64, sample: u64, user: u64, item: u64) -> f64 {
    let mut x = seed;
    x = splitmix64(x ^ sample.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    x = splitmix64(x ^ user.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    x = splitmix64(x ^ item.wrapping_mul(0x94D0_49BB_1331_11EB));
    (x >> 11) as f64 * (1.0 / 9_007_199_254_740_992.0)
}

/// Sum with a fixed pairwise reduction tree, so the result depends only on
/// the slice contents and not on how they were produced.
fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 32 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Monte-Carlo estimate of the expected emphasized reconstruction loss of W
/// on R under entrywise dropout.
///
/// Each sample draws an independent keep/drop mask over all m*n cells,
/// feeds the masked rows through W, and weights squared residuals by a^2 on
/// dropped cells and b^2 on retained ones. Costs O(num_samples * m * n)
/// work; per-sample losses are computed in parallel but reduced through a
/// fixed tree, so the estimate is a pure function of (R, W, hp, num_samples,
/// seed).
pub fn sample_loss(
    r: &InteractionMatrix,
    w: &Mat,
    hp: &Hyperparameters,
    num_samples: usize,
    seed: u64,
) -> LossEstimate {
    assert!(num_samples >= 2, "need at least 2 samples for a standard error");
    let (m, n) = (r.num_users(), r.num_items());
    assert_eq!(w.rows(), n, "weight matrix must be n x n");
    assert_eq!(w.cols(), n, "weight matrix must be n x n");
    let (a2, b2, p) = (hp.a * hp.a, hp.b * hp.b, hp.p);
    let rows = r.rows();
    let mut r01 = vec![vec![0.0f64; n]; m];
    for (z, items) in rows.iter().enumerate() {
        for &j in items {
            r01[z][j] = 1.0;
        }
    }

    let per_sample: Vec<f64> = (0..num_samples)
        .into_par_iter()
        .map(|s| {
            let mut dropped = vec![false; n];
            let mut yhat = vec![0.0f64; n];
            let mut total = 0.0;
            for z in 0..m {
                for (j, d) in dropped.iter_mut().enumerate() {
                    *d = cell_uniform(seed, s as u64, z as u64, j as u64) < p;
                }
                yhat.fill(0.0);
                for &k in &rows[z] {
                    if !dropped[k] {
                        let wr = w.row(k);
                        for (y, &wv) in yhat.iter_mut().zip(wr) {
                            *y += wv;
                        }
                    }
                }
                let rz = &r01[z];
                for j in 0..n {
                    let weight = if dropped[j] { a2 } else { b2 };
                    let res = rz[j] - yhat[j];
                    total += weight * res * res;
                }
            }
            total
        })
        .collect();

    let mean = pairwise_sum(&per_sample) / num_samples as f64;
    let sq: Vec<f64> = per_sample.iter().map(|&x| (x - mean) * (x - mean)).collect();
    let variance = pairwise_sum(&sq) / (num_samples as f64 - 1.0);
    LossEstimate {
        mean,
        std_error: (variance / num_samples as f64).sqrt(),
        num_samples,
    }
}

/// Exact expected loss of W under the dropout objective, computed from the
/// Gram matrix alone:
///
/// ```text
///     sum_i [ x_i^T H(i) x_i - 2 x_i^T v(i) + c0 G[i][i] ],   x_i = W[*, i].
/// ```
///
/// This is what [`sample_loss`] estimates; the two agree to within Monte-
/// Carlo error for any W, which is the independent check on the coefficient
/// table.
pub fn expected_loss(gram: &GramBundle, w: &Mat, hp: &Hyperparameters) -> f64 {
    let n = gram.n;
    assert_eq!(w.rows(), n, "weight matrix must be n x n");
    assert_eq!(w.cols(), n, "weight matrix must be n x n");
    let coeffs = coefficients(hp);
    let mut total = 0.0;
    for i in 0..n {
        let (h, v) = build_h_v(gram, &coeffs, i);
        let x = w.col(i);
        let hx = h.matvec(&x);
        total += dot(&x, &hx) - 2.0 * dot(&x, &v) + coeffs.c0 * gram.gram[(i, i)];
    }
    total
}

/// The ridge baseline's training objective from the Gram matrix:
/// ||R - RW||_F^2 + lambda ||W||_F^2 expanded as
/// tr(G) - 2 tr(W^T G) + tr(W^T G W) + lambda ||W||_F^2.
pub fn ridge_objective(gram: &GramBundle, w: &Mat, lambda: f64) -> f64 {
    let n = gram.n;
    let mut total = 0.0;
    for i in 0..n {
        total += gram.gram[(i, i)];
        let x = w.col(i);
        let gx = gram.gram.matvec(&x);
        let g_col = gram.gram.col(i);
        total += dot(&x, &gx) - 2.0 * dot(&x, &g_col) + lambda * dot(&x, &x);
    }
    total
}

fn frobenius(m: &Mat) -> f64 {
    dot(m.as_slice(), m.as_slice()).sqrt()
}

/// Objective value a probe direction is scored under, matching the variant
/// the weight matrix was trained for.
fn probe_objective(gram: &GramBundle, w: &Mat, hp: &Hyperparameters) -> f64 {
    match hp.variant {
        Variant::Ease => ridge_objective(gram, w, hp.lambda),
        Variant::L2 | Variant::ZeroDiagL2 => {
            expected_loss(gram, w, hp) + hp.lambda * dot(w.as_slice(), w.as_slice())
        }
        _ => expected_loss(gram, w, hp),
    }
}

/// Check that W sits at a local minimum of its variant's objective: evaluate
/// the objective at W + epsilon*D for random unit-Frobenius directions D and
/// return the margins objective(W + epsilon*D) - objective(W).
///
/// Directions respect the variant's feasible set: for the zero-diagonal
/// variants D has a zero diagonal. All margins should be >= 0 up to
/// rounding; the ridge variants additionally satisfy
/// margin >= lambda * epsilon^2.
///
/// For low_rank the probe is only meaningful at full rank; dense
/// perturbations step off the rank manifold, so a rank budget below n is
/// rejected.
pub fn minimality_probe(
    gram: &GramBundle,
    weight: &WeightMatrix,
    epsilon: f64,
    num_directions: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let n = gram.n;
    assert_eq!(weight.n, n, "weight matrix size must match the Gram matrix");
    let pv = &weight.provenance;
    let hp = Hyperparameters {
        a: pv.a,
        b: pv.b,
        p: pv.p,
        lambda: pv.lambda,
        variant: pv.variant,
        rank_k: pv.rank_k,
    };
    if hp.variant == Variant::LowRank && hp.rank_k != Some(n) {
        return Err(Error::InvalidHyperparameters(
            "the minimality probe supports low_rank only at full rank; \
             dense perturbations leave the rank manifold"
                .into(),
        ));
    }
    let zero_diag = hp.variant.zero_diagonal();
    let base = probe_objective(gram, &weight.w, &hp);

    use rand::Rng as _;
    use rand::SeedableRng as _;
    let mut margins = Vec::with_capacity(num_directions);
    for d in 0..num_directions {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(derive(seed, d as u64));
        let mut dir = Mat::zeros(n, n);
        loop {
            for r in 0..n {
                for c in 0..n {
                    dir[(r, c)] = if zero_diag && r == c {
                        0.0
                    } else {
                        rng.random_range(-1.0..1.0)
                    };
                }
            }
            let norm = frobenius(&dir);
            if norm > 0.0 {
                let inv = 1.0 / norm;
                for v in dir.as_mut_slice() {
                    *v *= inv;
                }
                break;
            }
        }
        let mut perturbed = weight.w.clone();
        for (pw, dv) in perturbed.as_mut_slice().iter_mut().zip(dir.as_slice()) {
            *pw += epsilon * dv;
        }
        margins.push(probe_objective(gram, &perturbed, &hp) - base);
    }
    Ok(margins)
}

/// Outcome of attempting a Cholesky factorization: whether the matrix passed
/// the pivot test and the smallest pivot encountered.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct PdCertificate {
    pub is_pd: bool,
    /// Smallest diagonal value reached during elimination (before the square
    /// root); negative or tiny values are what fail the test.
    pub min_pivot: f64,
}

/// Certify positive definiteness of a symmetric matrix by Cholesky pivots:
/// the matrix passes when every pivot exceeds
/// [`crate::mat::PD_PIVOT_FACTOR`] times its largest diagonal entry.
pub fn pd_certificate(h: &Mat) -> PdCertificate {
    match Cholesky::factor(h) {
        CholeskyOutcome::Factored(f) => PdCertificate { is_pd: true, min_pivot: f.min_pivot() },
        CholeskyOutcome::NotPd { min_pivot } => PdCertificate { is_pd: false, min_pivot },
    }
}
