//! Closed-form solvers for linear-autoencoder recommenders.
//!
//! All solvers consume only the Gram matrix G = R^T R. The training
//! objective is the expected value, under entrywise dropout, of an emphasized
//! reconstruction error: each cell of R is independently retained with
//! probability 1-p, the model sees the masked input, and residuals are
//! weighted a where the cell was dropped and b where it was retained. Taking
//! the expectation decouples the loss over output columns: column i of the
//! optimal W solves the SPD system
//!
//! ```text
//!     H(i) x = v(i),   H(i) = C(i) ⊙ G,   v(i) = u(i) ⊙ G[*, i]
//! ```
//!
//! where C(i) and u(i) are closed-form polynomials in (a, b, p) taking one
//! value on the diagonal, another on row/column i, and a third elsewhere (the
//! four-case table in [`EmphasisCoefficients`]). Solvers:
//!
//! - [`solve_direct`]: factors every H(i) separately, O(n^4). The reference
//!   implementation all others are checked against.
//! - [`crate::fast::solve_fast`]: O(n^3) route that shares one inverse across
//!   columns via rank-1 inverse updates.
//! - [`solve_b_zero`]: the b = 0 family, where row and column i of H(i)
//!   vanish and the off-diagonal subsystem is solved instead (the diagonal of
//!   W is a free choice there).
//! - [`solve_steck`]: the classical single-inversion form of the b = 0
//!   solution with a zero diagonal; agrees with [`solve_b_zero`].
//! - [`solve_ease`]: the ridge baseline W = I - P diag(P)^-1,
//!   P = (G + λI)^-1, under the zero-diagonal constraint.
//! - [`crate::lowrank::solve_low_rank`]: rank-limited solution for a = b.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::GramBundle;
use crate::error::{Error, Result};
use crate::mat::{Cholesky, CholeskyOutcome, Mat};
use crate::model::{Provenance, SolverKind, WeightMatrix};

/// Which solution family to compute.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// b > 0, unregularized: H(i) x = v(i).
    Plain,
    /// b > 0 with ridge term: (H(i) + λI) x = v(i).
    L2,
    /// b > 0 ridge under the constraint diag(W) = 0.
    ZeroDiagL2,
    /// b = 0: off-diagonal subsystem solve, free diagonal.
    BZero,
    /// Ridge baseline with zero diagonal; ignores (a, b, p).
    Ease,
    /// a = b with a rank budget.
    LowRank,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Plain => "plain",
            Variant::L2 => "l2",
            Variant::ZeroDiagL2 => "zero_diag_l2",
            Variant::BZero => "b_zero",
            Variant::Ease => "ease",
            Variant::LowRank => "low_rank",
        }
    }

    /// Variants whose minimizer carries the zero-diagonal constraint.
    pub fn zero_diagonal(self) -> bool {
        matches!(self, Variant::ZeroDiagL2 | Variant::BZero | Variant::Ease)
    }
}

impl std::str::FromStr for Variant {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "plain" => Ok(Variant::Plain),
            "l2" => Ok(Variant::L2),
            "zero_diag_l2" => Ok(Variant::ZeroDiagL2),
            "b_zero" => Ok(Variant::BZero),
            "ease" => Ok(Variant::Ease),
            "low_rank" => Ok(Variant::LowRank),
            other => Err(format!(
                "unknown variant `{other}` (expected plain, l2, zero_diag_l2, b_zero, ease, low_rank)"
            )),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Objective hyperparameters: emphasis weights, dropout rate, ridge
/// coefficient, solution family, and the rank budget for [`Variant::LowRank`].
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Hyperparameters {
    /// Emphasis on dropped cells.
    pub a: f64,
    /// Emphasis on retained cells.
    pub b: f64,
    /// Dropout probability, strictly inside (0, 1).
    pub p: f64,
    /// Ridge coefficient; meaningful for l2, zero_diag_l2, b_zero, ease.
    pub lambda: f64,
    pub variant: Variant,
    /// Rank budget; required for low_rank.
    pub rank_k: Option<usize>,
}

impl Hyperparameters {
    pub fn validate(&self) -> Result<()> {
        let err = |msg: String| Err(Error::InvalidHyperparameters(msg));
        if !(self.p > 0.0 && self.p < 1.0) {
            return err(format!("p must lie strictly in (0,1), got {}", self.p));
        }
        if !(self.a >= 0.0 && self.a.is_finite()) || !(self.b >= 0.0 && self.b.is_finite()) {
            return err(format!("a and b must be finite and >= 0, got a={}, b={}", self.a, self.b));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return err(format!("lambda must be finite and >= 0, got {}", self.lambda));
        }
        match self.variant {
            Variant::Plain => {
                if self.b <= 0.0 {
                    return err("plain requires b > 0".into());
                }
                if self.lambda != 0.0 {
                    return err("plain has no ridge term; set lambda to 0 or use l2".into());
                }
            }
            Variant::L2 | Variant::ZeroDiagL2 => {
                if self.b <= 0.0 {
                    return err(format!("{} requires b > 0", self.variant));
                }
            }
            Variant::BZero => {
                if self.b != 0.0 {
                    return err("b_zero requires b == 0".into());
                }
                if self.a <= 0.0 {
                    return err("b_zero requires a > 0".into());
                }
            }
            Variant::Ease => {
                if self.lambda <= 0.0 {
                    return err("ease requires lambda > 0".into());
                }
            }
            Variant::LowRank => {
                if !(self.a == self.b && self.b > 0.0) {
                    return err("low_rank requires a == b > 0".into());
                }
                if self.lambda != 0.0 {
                    return err("low_rank has no ridge term; set lambda to 0".into());
                }
                match self.rank_k {
                    None => return err("low_rank requires rank_k".into()),
                    Some(0) => return err("rank_k must be at least 1".into()),
                    Some(_) => {}
                }
            }
        }
        Ok(())
    }
}

/// The closed-form scalar coefficients of the decoupled objective, all pure
/// polynomials in (a, b, p).
///
/// With q = 1-p and writing d = a^2 - b^2:
///
/// | field        | value              | role                                   |
/// |--------------|--------------------|----------------------------------------|
/// | g0_diag      | qp a^2 + q^2 b^2   | base table, diagonal                   |
/// | g0_off       | q^2 p a^2 + q^3 b^2| base table, off-diagonal               |
/// | g1_diag      | -qp d              | column-i correction, diagonal entry    |
/// | g1_off       | -q^2 p d           | column-i correction, off-diagonal      |
/// | g2_off       | -q^2 p d           | row-i correction (zero at position i)  |
/// | u_diag       | q b^2              | right-hand side, entry i               |
/// | u_off        | qp a^2 + q^2 b^2   | right-hand side, entries k != i        |
/// | g_minus_diag | qp a^2             | b = 0 subsystem, diagonal              |
/// | g_minus_off  | q^2 p a^2          | b = 0 subsystem, off-diagonal          |
/// | u_minus      | qp a^2             | b = 0 right-hand side                  |
/// | c0           | p a^2 + q b^2      | constant term E[A^2] per Gram diagonal |
///
/// The full table for H(i) = C(i) ⊙ G assembles as base + corrections:
/// entry (i,i) is g0_diag + g1_diag = q b^2, entries on row/column i are
/// g0_off + g1_off = q^2 b^2, and all other entries take the base values.
/// At a = b every correction vanishes and H(i) stops depending on i.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EmphasisCoefficients {
    pub g0_diag: f64,
    pub g0_off: f64,
    pub g1_diag: f64,
    pub g1_off: f64,
    pub g2_off: f64,
    pub u_diag: f64,
    pub u_off: f64,
    pub g_minus_diag: f64,
    pub g_minus_off: f64,
    pub u_minus: f64,
    pub c0: f64,
}

/// Evaluate every coefficient at (a, b, p).
pub fn coefficients(hp: &Hyperparameters) -> EmphasisCoefficients {
    let (a2, b2, p) = (hp.a * hp.a, hp.b * hp.b, hp.p);
    let q = 1.0 - p;
    let d = a2 - b2;
    EmphasisCoefficients {
        g0_diag: q * p * a2 + q * q * b2,
        g0_off: q * q * p * a2 + q * q * q * b2,
        g1_diag: -(q * p * d),
        g1_off: -(q * q * p * d),
        g2_off: -(q * q * p * d),
        u_diag: q * b2,
        u_off: q * p * a2 + q * q * b2,
        g_minus_diag: q * p * a2,
        g_minus_off: q * q * p * a2,
        u_minus: q * p * a2,
        c0: p * a2 + q * b2,
    }
}

/// Assemble column i's system: H(i) = C(i) ⊙ G and v(i) = u(i) ⊙ G[*, i].
///
/// The table is symmetric in (k, l), so H(i) is symmetric whenever the Gram
/// matrix is. At b = 0 both row i and column i of H(i) are zero and v(i)[i]
/// is zero, which is what makes the diagonal of W a free choice there.
pub fn build_h_v(gram: &GramBundle, coeffs: &EmphasisCoefficients, i: usize) -> (Mat, Vec<f64>) {
    let n = gram.n;
    assert!(i < n, "column {i} out of range for n={n}");
    let g = &gram.gram;
    let mut h = Mat::zeros(n, n);
    let cross = coeffs.g0_off + coeffs.g1_off;
    for k in 0..n {
        for l in 0..n {
            let c = if k == i && l == i {
                coeffs.g0_diag + coeffs.g1_diag
            } else if k == i || l == i {
                cross
            } else if k == l {
                coeffs.g0_diag
            } else {
                coeffs.g0_off
            };
            h[(k, l)] = c * g[(k, l)];
        }
    }
    let v = (0..n)
        .map(|k| {
            let u = if k == i { coeffs.u_diag } else { coeffs.u_off };
            u * g[(k, i)]
        })
        .collect();
    (h, v)
}

/// Fail unless every item has at least one interaction, or the ridge term
/// makes the shifted systems positive definite regardless.
pub(crate) fn require_invertible(gram: &GramBundle, ridge: f64) -> Result<()> {
    if ridge > 0.0 {
        return Ok(());
    }
    let zero: Vec<usize> = gram
        .item_counts
        .iter()
        .enumerate()
        .filter(|(_, &c)| c == 0)
        .map(|(i, _)| i)
        .collect();
    if zero.is_empty() {
        Ok(())
    } else {
        Err(Error::ZeroColumns(zero))
    }
}

/// Solve one column of the ridge-shifted system directly; used by the direct
/// solver and as the per-column fallback of the fast one.
pub(crate) fn direct_column(
    gram: &GramBundle,
    coeffs: &EmphasisCoefficients,
    variant: Variant,
    lambda: f64,
    i: usize,
) -> Result<Vec<f64>> {
    let n = gram.n;
    let (mut h, v) = build_h_v(gram, coeffs, i);
    for k in 0..n {
        h[(k, k)] += lambda;
    }
    let factor = match Cholesky::factor(&h) {
        CholeskyOutcome::Factored(f) => f,
        CholeskyOutcome::NotPd { min_pivot } => {
            return Err(Error::NotPositiveDefinite { column: i, min_pivot })
        }
    };
    match variant {
        Variant::ZeroDiagL2 => {
            let s = factor.solve(&v);
            let mut e = vec![0.0; n];
            e[i] = 1.0;
            let t = factor.solve(&e);
            if t[i] == 0.0 {
                return Err(Error::DegeneratePivot { column: i });
            }
            let scale = s[i] / t[i];
            let mut x: Vec<f64> = s.iter().zip(&t).map(|(sv, tv)| sv - scale * tv).collect();
            // The combination cancels entry i exactly in real arithmetic;
            // pin it so the zero-diagonal invariant holds bitwise.
            x[i] = 0.0;
            Ok(x)
        }
        _ => Ok(factor.solve(&v)),
    }
}

/// Collect per-column results computed in parallel, surfacing the
/// lowest-index error so failures are deterministic.
pub(crate) fn collect_columns(
    n: usize,
    results: Vec<Result<Vec<f64>>>,
) -> Result<Mat> {
    let mut w = Mat::zeros(n, n);
    for (i, res) in results.into_iter().enumerate() {
        w.set_col(i, &res?);
    }
    Ok(w)
}

/// Reference solver: factors H(i) (plus λI for the ridge variants) for every
/// column independently. O(n^4), kept deliberately simple; everything faster
/// is validated against it.
pub fn solve_direct(gram: &GramBundle, hp: &Hyperparameters) -> Result<WeightMatrix> {
    hp.validate()?;
    let lambda = match hp.variant {
        Variant::Plain => 0.0,
        Variant::L2 | Variant::ZeroDiagL2 => hp.lambda,
        other => {
            return Err(Error::InvalidHyperparameters(format!(
                "solve_direct handles plain, l2, zero_diag_l2; got {other}"
            )))
        }
    };
    require_invertible(gram, lambda)?;
    let coeffs = coefficients(hp);
    let results: Vec<Result<Vec<f64>>> = (0..gram.n)
        .into_par_iter()
        .map(|i| direct_column(gram, &coeffs, hp.variant, lambda, i))
        .collect();
    let w = collect_columns(gram.n, results)?;
    Ok(WeightMatrix {
        n: gram.n,
        w,
        provenance: Provenance::new(hp, SolverKind::Direct),
    })
}

/// The b = 0 solution: for each column i, solve the (n-1)-dimensional
/// subsystem over the other items and scatter into the off-diagonal; the
/// diagonal is a free choice (`diag_values`, default all zeros), since the
/// objective does not see it at b = 0.
///
/// With lambda > 0 the full shifted system (H(i) + λI) x = v(i) is solved
/// instead; row i of that system reads λ x_i = 0, so the zero diagonal comes
/// out exactly without the subsystem machinery.
pub fn solve_b_zero(
    gram: &GramBundle,
    hp: &Hyperparameters,
    diag_values: Option<&[f64]>,
) -> Result<WeightMatrix> {
    hp.validate()?;
    if hp.variant != Variant::BZero {
        return Err(Error::InvalidHyperparameters(format!(
            "solve_b_zero requires the b_zero variant, got {}",
            hp.variant
        )));
    }
    let n = gram.n;
    if let Some(d) = diag_values {
        assert_eq!(d.len(), n, "diag_values length must match n");
    }
    require_invertible(gram, hp.lambda)?;
    let coeffs = coefficients(hp);

    let results: Vec<Result<Vec<f64>>> = if hp.lambda > 0.0 {
        (0..n)
            .into_par_iter()
            .map(|i| direct_column(gram, &coeffs, Variant::L2, hp.lambda, i))
            .collect()
    } else {
        (0..n)
            .into_par_iter()
            .map(|i| {
                let g = &gram.gram;
                let mut h = Mat::zeros(n - 1, n - 1);
                let mut v = vec![0.0; n - 1];
                // Subsystem over items != i, with the compressed index
                // skipping position i.
                let full = |idx: usize| if idx < i { idx } else { idx + 1 };
                for k in 0..n - 1 {
                    let fk = full(k);
                    for l in 0..n - 1 {
                        let fl = full(l);
                        let c = if fk == fl { coeffs.g_minus_diag } else { coeffs.g_minus_off };
                        h[(k, l)] = c * g[(fk, fl)];
                    }
                    v[k] = coeffs.u_minus * g[(fk, i)];
                }
                let factor = match Cholesky::factor(&h) {
                    CholeskyOutcome::Factored(f) => f,
                    CholeskyOutcome::NotPd { min_pivot } => {
                        return Err(Error::NotPositiveDefinite { column: i, min_pivot })
                    }
                };
                let sub = factor.solve(&v);
                let mut x = vec![0.0; n];
                for (k, &val) in sub.iter().enumerate() {
                    x[full(k)] = val;
                }
                Ok(x)
            })
            .collect()
    };

    let mut w = collect_columns(n, results)?;
    if let Some(d) = diag_values {
        for i in 0..n {
            w[(i, i)] = d[i];
        }
    }
    Ok(WeightMatrix {
        n,
        w,
        provenance: Provenance::new(hp, SolverKind::Direct),
    })
}

/// Single-inversion form of the b = 0 zero-diagonal solution:
///
/// ```text
///     C = (G + p/(1-p) · I ⊙ G)^-1,
///     W = 1/(1-p) · (I - C diag(C)^-1),  diag(W) = 0.
/// ```
///
/// Agrees elementwise with [`solve_b_zero`] at the same p (any a; the b = 0
/// solution depends on a only through an overall factor that cancels).
pub fn solve_steck(gram: &GramBundle, p: f64) -> Result<WeightMatrix> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidHyperparameters(format!(
            "p must lie strictly in (0,1), got {p}"
        )));
    }
    require_invertible(gram, 0.0)?;
    let n = gram.n;
    let ratio = p / (1.0 - p);
    let mut inner = gram.gram.clone();
    for i in 0..n {
        inner[(i, i)] += ratio * gram.gram[(i, i)];
    }
    let factor = match Cholesky::factor(&inner) {
        CholeskyOutcome::Factored(f) => f,
        CholeskyOutcome::NotPd { min_pivot } => {
            return Err(Error::FactorizationFailed { min_pivot })
        }
    };
    let c = factor.inverse();
    let scale = 1.0 / (1.0 - p);
    let mut w = Mat::zeros(n, n);
    for j in 0..n {
        for i in 0..n {
            if i != j {
                w[(i, j)] = -scale * c[(i, j)] / c[(j, j)];
            }
        }
    }
    let hp = Hyperparameters {
        a: 1.0,
        b: 0.0,
        p,
        lambda: 0.0,
        variant: Variant::BZero,
        rank_k: None,
    };
    Ok(WeightMatrix {
        n,
        w,
        provenance: Provenance::new(&hp, SolverKind::ClosedForm),
    })
}

/// Ridge baseline: P = (G + λI)^-1, W = I - P diag(P)^-1, so diag(W) = 0 and
/// W[j][i] = -P[j][i] / P[i][i] off the diagonal.
pub fn solve_ease(gram: &GramBundle, lambda: f64) -> Result<WeightMatrix> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidHyperparameters(format!(
            "ease requires lambda > 0, got {lambda}"
        )));
    }
    let n = gram.n;
    let mut shifted = gram.gram.clone();
    for i in 0..n {
        shifted[(i, i)] += lambda;
    }
    let factor = match Cholesky::factor(&shifted) {
        CholeskyOutcome::Factored(f) => f,
        CholeskyOutcome::NotPd { min_pivot } => {
            return Err(Error::FactorizationFailed { min_pivot })
        }
    };
    let p_inv = factor.inverse();
    let mut w = Mat::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                w[(j, i)] = -p_inv[(j, i)] / p_inv[(i, i)];
            }
        }
    }
    let hp = Hyperparameters {
        a: 0.0,
        b: 0.0,
        p: 0.5,
        lambda,
        variant: Variant::Ease,
        rank_k: None,
    };
    Ok(WeightMatrix {
        n,
        w,
        provenance: Provenance::new(&hp, SolverKind::ClosedForm),
    })
}

/// Solver route selection for [`solve`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolverChoice {
    Direct,
    Fast,
    /// Fast when the variant supports it, otherwise each variant's native
    /// route.
    Auto,
}

impl SolverChoice {
    pub fn as_str(self) -> &'static str {
        match self {
            SolverChoice::Direct => "direct",
            SolverChoice::Fast => "fast",
            SolverChoice::Auto => "auto",
        }
    }
}

impl std::str::FromStr for SolverChoice {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "direct" => Ok(SolverChoice::Direct),
            "fast" => Ok(SolverChoice::Fast),
            "auto" => Ok(SolverChoice::Auto),
            other => Err(format!("unknown solver `{other}` (expected direct, fast, auto)")),
        }
    }
}

impl std::fmt::Display for SolverChoice {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Dispatch to the right solver for the variant.
pub fn solve(gram: &GramBundle, hp: &Hyperparameters, choice: SolverChoice) -> Result<WeightMatrix> {
    hp.validate()?;
    match hp.variant {
        Variant::Plain | Variant::L2 | Variant::ZeroDiagL2 => match choice {
            SolverChoice::Direct => solve_direct(gram, hp),
            SolverChoice::Fast | SolverChoice::Auto => crate::fast::solve_fast(gram, hp),
        },
        Variant::BZero => match choice {
            SolverChoice::Fast => Err(Error::InvalidHyperparameters(
                "the fast route covers plain, l2, zero_diag_l2; use direct or auto for b_zero"
                    .into(),
            )),
            _ => solve_b_zero(gram, hp, None),
        },
        Variant::Ease => match choice {
            SolverChoice::Fast => Err(Error::InvalidHyperparameters(
                "the fast route covers plain, l2, zero_diag_l2; use direct or auto for ease".into(),
            )),
            _ => solve_ease(gram, hp.lambda),
        },
        Variant::LowRank => match choice {
            SolverChoice::Fast => Err(Error::InvalidHyperparameters(
                "the fast route covers plain, l2, zero_diag_l2; use direct or auto for low_rank"
                    .into(),
            )),
            _ => crate::lowrank::solve_low_rank(gram, hp),
        },
    }
}
