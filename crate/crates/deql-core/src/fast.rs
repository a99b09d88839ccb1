//! O(n^3) solver for the b > 0 families.
//!
//! Column i's Hessian differs from the column-independent base matrix
//! H0 = C0 ⊙ G by two rank-1 corrections confined to row i and column i:
//!
//! ```text
//!     H(i) = H0 + e1(i) l(i)^T + l(i) e2(i)^T
//! ```
//!
//! with l(i) the i-th standard basis vector, e1(i) column i of C1 ⊙ G, and
//! e2(i) row i of C2 ⊙ G (zero at position i). One Cholesky inverse of H0
//! (plus λI for the ridge variants) is shared across all columns; each
//! column then applies the two corrections to vectors only, via the rank-1
//! inverse-update identity
//!
//! ```text
//!     (P + c r^T)^-1 x = P^-1 x - (P^-1 c) (r^T P^-1 x) / (1 + r^T P^-1 c)
//! ```
//!
//! ([`miller_update`] is the same identity applied to a whole matrix). The
//! per-column work is a few dot products and saxpys, so the total cost is
//! the three matrix products in the precomputation.
//!
//! When a = b both correction tables are identically zero and the update
//! steps are skipped outright, leaving the base solve untouched bitwise.
//! Denominators within [`MILLER_GUARD`] of zero make the update identity
//! unusable for that column; the column falls back to its own direct
//! factorization and is recorded in the provenance.

use rayon::prelude::*;

use crate::data::GramBundle;
use crate::error::{Error, Result};
use crate::mat::{dot, Cholesky, CholeskyOutcome, Mat};
use crate::model::{Provenance, SolverKind, WeightMatrix};
use crate::solver::{
    coefficients, collect_columns, direct_column, require_invertible, EmphasisCoefficients,
    Hyperparameters, Variant,
};

/// Smallest rank-1 update denominator accepted before the column falls back
/// to a direct solve.
pub const MILLER_GUARD: f64 = 1e-12;

/// Rank-1 inverse update: given P^-1, return (P + col row^T)^-1.
///
/// Fails with [`Error::SingularUpdate`] when |1 + row^T P^-1 col| falls
/// below [`MILLER_GUARD`], i.e. when the update makes the matrix (near)
/// singular.
pub fn miller_update(p_inv: &Mat, col: &[f64], row: &[f64]) -> Result<Mat> {
    let n = p_inv.rows();
    assert_eq!(p_inv.cols(), n, "p_inv must be square");
    assert_eq!(col.len(), n, "col length must match");
    assert_eq!(row.len(), n, "row length must match");
    let y = p_inv.matvec(col);
    let denominator = 1.0 + dot(row, &y);
    if !(denominator.abs() >= MILLER_GUARD) {
        return Err(Error::SingularUpdate { denominator });
    }
    // z = row^T P^-1, computed row-wise.
    let mut z = vec![0.0; n];
    for k in 0..n {
        let rk = row[k];
        if rk == 0.0 {
            continue;
        }
        for (zj, &pj) in z.iter_mut().zip(p_inv.row(k)) {
            *zj += rk * pj;
        }
    }
    let mut out = p_inv.clone();
    for i in 0..n {
        let yi = y[i] / denominator;
        if yi == 0.0 {
            continue;
        }
        for j in 0..n {
            out[(i, j)] -= yi * z[j];
        }
    }
    Ok(out)
}

/// Knobs for [`solve_fast_with`]; the default is the production path.
#[derive(Clone, Copy, Debug, Default)]
pub struct FastOptions {
    /// Self-test fault: negates both rank-1 update denominators so the
    /// fast-vs-direct equivalence check must fail. Never set in production.
    pub flip_update_denominator: bool,
}

struct Precomputed {
    h0_inv: Mat,
    /// H0^-1 (U ⊙ G); column i is the base solve for column i's right-hand
    /// side.
    p_uv: Mat,
    /// H0^-1 (C1 ⊙ G); column i is H0^-1 e1(i).
    p_g1: Mat,
    coeffs: EmphasisCoefficients,
    lambda: f64,
}

fn precompute(gram: &GramBundle, hp: &Hyperparameters, lambda: f64) -> Result<Precomputed> {
    let n = gram.n;
    let g = &gram.gram;
    let coeffs = coefficients(hp);
    let mut h0 = Mat::zeros(n, n);
    let mut ug = Mat::zeros(n, n);
    let mut g1g = Mat::zeros(n, n);
    for k in 0..n {
        for l in 0..n {
            let gv = g[(k, l)];
            if k == l {
                h0[(k, l)] = coeffs.g0_diag * gv + lambda;
                ug[(k, l)] = coeffs.u_diag * gv;
                g1g[(k, l)] = coeffs.g1_diag * gv;
            } else {
                h0[(k, l)] = coeffs.g0_off * gv;
                ug[(k, l)] = coeffs.u_off * gv;
                g1g[(k, l)] = coeffs.g1_off * gv;
            }
        }
    }
    let factor = match Cholesky::factor(&h0) {
        CholeskyOutcome::Factored(f) => f,
        CholeskyOutcome::NotPd { min_pivot } => {
            return Err(Error::FactorizationFailed { min_pivot })
        }
    };
    let h0_inv = factor.inverse();
    let p_uv = h0_inv.matmul(&ug);
    let p_g1 = h0_inv.matmul(&g1g);
    Ok(Precomputed { h0_inv, p_uv, p_g1, coeffs, lambda })
}

enum ColumnOutcome {
    Updated(Vec<f64>),
    FellBack(Vec<f64>),
}

fn fast_column(
    gram: &GramBundle,
    pre: &Precomputed,
    variant: Variant,
    opts: &FastOptions,
    i: usize,
) -> Result<ColumnOutcome> {
    let n = gram.n;
    let c = &pre.coeffs;
    let sign = if opts.flip_update_denominator { -1.0 } else { 1.0 };
    // a = b: both corrections vanish identically, so the base solve is
    // already the answer for this column.
    let no_updates = c.g1_diag == 0.0 && c.g1_off == 0.0 && c.g2_off == 0.0;

    let fallback = |()| -> Result<ColumnOutcome> {
        direct_column(gram, c, variant, pre.lambda, i).map(ColumnOutcome::FellBack)
    };

    let (x_v, t, d2) = if no_updates {
        (pre.p_uv.col(i), pre.h0_inv.col(i), 1.0)
    } else {
        let r = pre.p_uv.col(i);
        let w = pre.p_g1.col(i);
        let d1 = sign * (1.0 + w[i]);
        if d1.abs() < MILLER_GUARD {
            return fallback(());
        }
        // First correction, applied to both right-hand sides v(i) and l(i).
        let s: Vec<f64> = {
            let scale = r[i] / d1;
            r.iter().zip(&w).map(|(rv, wv)| rv - scale * wv).collect()
        };
        let t: Vec<f64> = {
            let h_col = pre.h0_inv.col(i);
            let scale = h_col[i] / d1;
            h_col.iter().zip(&w).map(|(hv, wv)| hv - scale * wv).collect()
        };
        // e2(i) dot products; entry i of e2 is zero by construction.
        let g_row = gram.gram.row(i);
        let mut e2s = 0.0;
        let mut e2t = 0.0;
        for l in 0..n {
            if l == i {
                continue;
            }
            let e = c.g2_off * g_row[l];
            e2s += e * s[l];
            e2t += e * t[l];
        }
        let d2 = sign * (1.0 + e2t);
        if d2.abs() < MILLER_GUARD {
            return fallback(());
        }
        let scale = e2s / d2;
        let x_v: Vec<f64> = s.iter().zip(&t).map(|(sv, tv)| sv - scale * tv).collect();
        (x_v, t, d2)
    };

    match variant {
        Variant::ZeroDiagL2 => {
            // Second right-hand side l(i): its corrected solve collapses to
            // t / d2. Combining the two solutions cancels the diagonal.
            let x_l: Vec<f64> = t.iter().map(|tv| tv / d2).collect();
            if x_l[i].abs() < MILLER_GUARD {
                return fallback(());
            }
            let scale = x_v[i] / x_l[i];
            let mut x: Vec<f64> =
                x_v.iter().zip(&x_l).map(|(xv, xl)| xv - scale * xl).collect();
            x[i] = 0.0;
            Ok(ColumnOutcome::Updated(x))
        }
        _ => Ok(ColumnOutcome::Updated(x_v)),
    }
}

/// Fast solver with explicit options; see [`solve_fast`].
pub fn solve_fast_with(
    gram: &GramBundle,
    hp: &Hyperparameters,
    opts: &FastOptions,
) -> Result<WeightMatrix> {
    hp.validate()?;
    let lambda = match hp.variant {
        Variant::Plain => 0.0,
        Variant::L2 | Variant::ZeroDiagL2 => hp.lambda,
        other => {
            return Err(Error::InvalidHyperparameters(format!(
                "the fast route covers plain, l2, zero_diag_l2; got {other}"
            )))
        }
    };
    require_invertible(gram, lambda)?;
    let pre = precompute(gram, hp, lambda)?;
    let outcomes: Vec<Result<ColumnOutcome>> = (0..gram.n)
        .into_par_iter()
        .map(|i| fast_column(gram, &pre, hp.variant, opts, i))
        .collect();

    let mut fallback_columns = Vec::new();
    let mut columns = Vec::with_capacity(gram.n);
    for (i, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(ColumnOutcome::Updated(x)) => columns.push(Ok(x)),
            Ok(ColumnOutcome::FellBack(x)) => {
                fallback_columns.push(i);
                columns.push(Ok(x));
            }
            Err(e) => columns.push(Err(e)),
        }
    }
    let w = collect_columns(gram.n, columns)?;
    let mut provenance = Provenance::new(hp, SolverKind::Fast);
    provenance.fallback_columns = fallback_columns;
    Ok(WeightMatrix { n: gram.n, w, provenance })
}

/// O(n^3) solver for plain, l2, and zero_diag_l2: one shared factorization
/// plus per-column rank-1 corrections. Agrees with [`crate::solver::solve_direct`]
/// to tight tolerance; columns whose update denominators are degenerate fall
/// back to the direct path and are listed in the provenance.
pub fn solve_fast(gram: &GramBundle, hp: &Hyperparameters) -> Result<WeightMatrix> {
    solve_fast_with(gram, hp, &FastOptions::default())
}
