//! Rank-limited solution for the a = b family.
//!
//! At a = b the per-column Hessians coincide, so the objective collapses to
//! a single generalized least-squares problem with second-moment matrices
//!
//! ```text
//!     Sxx[k][l] = (1-p) b^2 G[k][l] * ((1-p) off-diagonal, 1 on it)
//!     Sxy       = (1-p) b^2 G
//! ```
//!
//! and the best weight matrix of rank at most k is the whitened truncation
//!
//! ```text
//!     M = Sxx^(-1/2) Sxy,    W*_k = Sxx^(-1/2) [M]_k,
//! ```
//!
//! where [M]_k keeps the top-k part of M's singular expansion. [M]_k is
//! formed as M V_k V_k^T with V_k the leading eigenvectors of M^T M, which
//! avoids dividing by small singular values. At k = n the truncation is the
//! identity and the result matches the full-rank solvers.

use serde::{Deserialize, Serialize};

use crate::data::GramBundle;
use crate::error::{Error, Result};
use crate::mat::{symmetric_eigen, Mat};
use crate::model::{Provenance, SolverKind, WeightMatrix};
use crate::solver::{Hyperparameters, Variant};

/// Eigenvalues of Sxx below this fraction of the largest one are treated as
/// singular directions; the whitening would amplify them without bound.
pub const NEAR_SINGULAR_FACTOR: f64 = 1e-10;

/// Singular values and the rank actually realized, reported alongside the
/// weight matrix for rank-budget diagnostics.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RankProfile {
    /// Singular values of the whitened target, descending.
    pub singular_values: Vec<f64>,
    pub rank_k: usize,
}

/// Solve the a = b objective under a rank budget; see the module docs.
///
/// Fails with [`Error::NearSingular`] when Sxx has an eigenvalue below
/// [`NEAR_SINGULAR_FACTOR`] times its largest (an all-zero item column is
/// the common cause).
pub fn solve_low_rank(gram: &GramBundle, hp: &Hyperparameters) -> Result<WeightMatrix> {
    Ok(solve_low_rank_profiled(gram, hp)?.0)
}

/// [`solve_low_rank`] plus the singular-value profile of the whitened
/// target.
pub fn solve_low_rank_profiled(
    gram: &GramBundle,
    hp: &Hyperparameters,
) -> Result<(WeightMatrix, RankProfile)> {
    hp.validate()?;
    if hp.variant != Variant::LowRank {
        return Err(Error::InvalidHyperparameters(format!(
            "solve_low_rank requires the low_rank variant, got {}",
            hp.variant
        )));
    }
    let n = gram.n;
    let k = hp.rank_k.expect("validate guarantees rank_k");
    if k > n {
        return Err(Error::InvalidHyperparameters(format!(
            "rank_k = {k} exceeds the number of items n = {n}"
        )));
    }

    let q = 1.0 - hp.p;
    let scale = q * hp.b * hp.b;
    let mut sxx = Mat::zeros(n, n);
    let mut sxy = Mat::zeros(n, n);
    for r in 0..n {
        for c in 0..n {
            let gv = gram.gram[(r, c)];
            sxy[(r, c)] = scale * gv;
            sxx[(r, c)] = if r == c { scale * gv } else { scale * q * gv };
        }
    }

    let eig = symmetric_eigen(&sxx);
    let max_ev = eig.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let threshold = NEAR_SINGULAR_FACTOR * max_ev.max(0.0);
    if let Some(&bad) = eig.values.iter().find(|&&v| v <= threshold) {
        return Err(Error::NearSingular { eigenvalue: bad, threshold });
    }

    // Sxx^(-1/2) = Q diag(1/sqrt(ev)) Q^T.
    let inv_sqrt = {
        let mut scaled = eig.q.clone();
        for c in 0..n {
            let f = 1.0 / eig.values[c].sqrt();
            for r in 0..n {
                scaled[(r, c)] *= f;
            }
        }
        scaled.matmul(&eig.q.transpose())
    };

    let m = inv_sqrt.matmul(&sxy);
    let mtm = m.transpose().matmul(&m);
    let inner = symmetric_eigen(&mtm);

    // Descending order, index ascending on ties, so the kept subspace is
    // deterministic.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| {
        inner.values[y]
            .partial_cmp(&inner.values[x])
            .unwrap()
            .then(x.cmp(&y))
    });
    let singular_values: Vec<f64> =
        order.iter().map(|&j| inner.values[j].max(0.0).sqrt()).collect();

    // Projection V_k V_k^T onto the leading right-singular subspace.
    let mut vk = Mat::zeros(n, k);
    for (col, &j) in order.iter().take(k).enumerate() {
        for r in 0..n {
            vk[(r, col)] = inner.q[(r, j)];
        }
    }
    let projection = vk.matmul(&vk.transpose());
    let w = inv_sqrt.matmul(&m.matmul(&projection));

    let weight = WeightMatrix {
        n,
        w,
        provenance: Provenance::new(hp, SolverKind::ClosedForm),
    };
    Ok((weight, RankProfile { singular_values, rank_k: k }))
}
