//! Self-contained property battery over a synthetic instance.
//!
//! Every check is deterministic in the seed, so two runs with the same
//! arguments produce byte-identical reports. The optional fault flag negates
//! the rank-1 update denominators in the fast route, which must make the
//! fast-vs-direct check (and only that check) fail.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::Args;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use deql_core::data::{self, GramBundle, InteractionMatrix};
use deql_core::fast::{self, FastOptions};
use deql_core::mat::{Cholesky, CholeskyOutcome, Mat};
use deql_core::oracle;
use deql_core::seeds;
use deql_core::solver::{self, Hyperparameters, Variant};
use deql_core::SPEC_VERSION;

use crate::pipeline::{ensure_out_dir, write_json};

#[derive(Args, Debug)]
pub struct VerifyArgs {
    /// Items in the synthetic instance.
    #[arg(long, default_value_t = 30)]
    pub n: usize,
    /// Users in the synthetic instance.
    #[arg(long, default_value_t = 50)]
    pub m: usize,
    #[arg(long, default_value_t = 0.2)]
    pub density: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Fault injection: negate the rank-1 update denominators in the fast
    /// route so the equivalence check fails.
    #[arg(long)]
    pub flip_miller_denominator: bool,
    /// Directory for verify.json (report prints to stdout either way).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

struct Check {
    name: &'static str,
    pass: bool,
    measured: f64,
    tolerance: f64,
}

impl Check {
    fn bounded(name: &'static str, measured: f64, tolerance: f64) -> Check {
        Check { name, pass: measured <= tolerance, measured, tolerance }
    }
}

fn hp(variant: Variant, a: f64, b: f64, p: f64, lambda: f64) -> Hyperparameters {
    Hyperparameters { a, b, p, lambda, variant, rank_k: None }
}

/// The dropout-variant sweep shared by the equivalence and stationarity
/// checks: one hyperparameter point per family, crossed with two dropout
/// rates.
fn sweep() -> Vec<Hyperparameters> {
    let mut out = Vec::new();
    for p in [0.1, 0.5] {
        out.push(hp(Variant::Plain, 1.0, 1.0, p, 0.0));
        out.push(hp(Variant::L2, 1.0, 0.5, p, 10.0));
        out.push(hp(Variant::ZeroDiagL2, 1.0, 1.5, p, 100.0));
    }
    out
}

fn check_fast_equals_direct(gram: &GramBundle, opts: &FastOptions) -> Result<Check> {
    let mut measured = 0.0f64;
    for hp in sweep() {
        let wd = solver::solve_direct(gram, &hp)?;
        let wf = fast::solve_fast_with(gram, &hp, opts)?;
        measured = measured.max(wd.w.max_abs_diff(&wf.w));
    }
    Ok(Check::bounded("fast_equals_direct", measured, 1e-8))
}

fn check_stationarity(gram: &GramBundle) -> Result<Check> {
    let mut measured = 0.0f64;
    for hp in sweep() {
        let wd = solver::solve_direct(gram, &hp)?;
        let coeffs = solver::coefficients(&hp);
        let lambda = if hp.variant == Variant::Plain { 0.0 } else { hp.lambda };
        for i in 0..gram.n {
            let (h, v) = solver::build_h_v(gram, &coeffs, i);
            let x = wd.w.col(i);
            let hx = h.matvec(&x);
            let scale = 1.0 + v.iter().fold(0.0f64, |acc, &t| acc.max(t.abs()));
            for k in 0..gram.n {
                if hp.variant == Variant::ZeroDiagL2 && k == i {
                    continue;
                }
                let resid = hx[k] + lambda * x[k] - v[k];
                measured = measured.max(resid.abs() / scale);
            }
        }
    }
    Ok(Check::bounded("stationarity", measured, 1e-9))
}

fn check_b_zero_equivalence(gram: &GramBundle) -> Result<Check> {
    let mut measured = 0.0f64;
    for p in [0.1, 0.5, 0.8] {
        let ws = solver::solve_steck(gram, p)?;
        let wb = solver::solve_b_zero(gram, &hp(Variant::BZero, 1.0, 0.0, p, 0.0), None)?;
        measured = measured.max(ws.w.max_abs_diff(&wb.w));
    }
    Ok(Check::bounded("b_zero_equivalence", measured, 1e-8))
}

fn check_pd_certificates(gram: &GramBundle) -> Check {
    let coeffs = solver::coefficients(&hp(Variant::L2, 1.0, 0.5, 0.3, 0.0));
    let mut all_pd = true;
    let mut min_pivot = f64::INFINITY;
    for i in 0..gram.n {
        let (h, _) = solver::build_h_v(gram, &coeffs, i);
        let cert = oracle::pd_certificate(&h);
        all_pd &= cert.is_pd;
        min_pivot = min_pivot.min(cert.min_pivot);
    }
    let coeffs_b0 = solver::coefficients(&hp(Variant::BZero, 1.0, 0.0, 0.3, 0.0));
    let (h0, _) = solver::build_h_v(gram, &coeffs_b0, 0);
    let b0_singular = !oracle::pd_certificate(&h0).is_pd;
    Check {
        name: "pd_certificates",
        pass: all_pd && b0_singular,
        measured: min_pivot,
        tolerance: 0.0,
    }
}

fn check_miller_identity(seed: u64) -> Result<Check> {
    let n = 10;
    let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(seed, 2));
    let mut measured = 0.0f64;
    for _ in 0..100 {
        let mut a = Mat::zeros(n, n);
        for r in 0..n {
            for c in 0..n {
                a[(r, c)] = rng.random_range(-1.0..1.0);
            }
        }
        let mut p = a.transpose().matmul(&a);
        for d in 0..n {
            p[(d, d)] += 1.0;
        }
        let p_inv = match Cholesky::factor(&p) {
            CholeskyOutcome::Factored(f) => f.inverse(),
            CholeskyOutcome::NotPd { min_pivot } => {
                bail!("shifted product matrix failed to factor (min pivot {min_pivot})")
            }
        };
        let col: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let row: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let updated_inv = fast::miller_update(&p_inv, &col, &row)?;
        let mut updated = p.clone();
        for r in 0..n {
            for c in 0..n {
                updated[(r, c)] += col[r] * row[c];
            }
        }
        let product = updated.matmul(&updated_inv);
        let eye = Mat::identity(n);
        measured = measured.max(product.max_abs_diff(&eye));
    }
    Ok(Check::bounded("miller_identity", measured, 1e-10))
}

fn check_scalar_invariance(gram: &GramBundle) -> Result<Check> {
    let w1 = solver::solve_direct(gram, &hp(Variant::L2, 1.0, 0.7, 0.3, 10.0))?;
    let w2 = solver::solve_direct(gram, &hp(Variant::L2, 2.0, 1.4, 0.3, 40.0))?;
    Ok(Check::bounded("scalar_invariance", w1.w.max_abs_diff(&w2.w), 1e-10))
}

fn check_diag_independence(gram: &GramBundle, seed: u64) -> Result<Check> {
    let hp = hp(Variant::BZero, 1.0, 0.0, 0.3, 0.0);
    let w0 = solver::solve_b_zero(gram, &hp, None)?;
    let loss0 = oracle::expected_loss(gram, &w0.w, &hp);
    let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(seed, 3));
    let mut measured = 0.0f64;
    for _ in 0..5 {
        let diag: Vec<f64> = (0..gram.n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let wt = solver::solve_b_zero(gram, &hp, Some(&diag))?;
        let losst = oracle::expected_loss(gram, &wt.w, &hp);
        measured = measured.max((losst - loss0).abs() / (1.0 + loss0.abs()));
    }
    Ok(Check::bounded("diag_independence_b_zero", measured, 1e-10))
}

fn check_monte_carlo(r: &InteractionMatrix, gram: &GramBundle, seed: u64) -> Result<Check> {
    let cases = [
        hp(Variant::L2, 1.0, 0.5, 0.3, 10.0),
        hp(Variant::Plain, 1.0, 1.0, 0.5, 0.0),
        hp(Variant::BZero, 1.0, 0.0, 0.5, 0.0),
    ];
    let mut measured = 0.0f64;
    for (idx, hp) in cases.iter().enumerate() {
        let w = solver::solve(gram, hp, solver::SolverChoice::Auto)?;
        let expected = oracle::expected_loss(gram, &w.w, hp);
        let est = oracle::sample_loss(r, &w.w, hp, 10_000, seeds::derive(seed, 4 + idx as u64));
        measured = measured.max((est.mean - expected).abs() / est.std_error);
    }
    Ok(Check::bounded("monte_carlo_agreement", measured, 4.0))
}

fn check_low_rank(gram: &GramBundle) -> Result<(Check, Check)> {
    let n = gram.n;
    let mut full = hp(Variant::LowRank, 0.8, 0.8, 0.3, 0.0);
    full.rank_k = Some(n);
    let w_full = deql_core::lowrank::solve_low_rank(gram, &full)?;
    let w_direct = solver::solve_direct(gram, &hp(Variant::Plain, 0.8, 0.8, 0.3, 0.0))?;
    let full_rank = Check::bounded(
        "low_rank_full_rank",
        w_full.w.max_abs_diff(&w_direct.w),
        1e-7,
    );

    let mut losses = Vec::with_capacity(n);
    for k in 1..=n {
        let mut hp_k = full;
        hp_k.rank_k = Some(k);
        let w = deql_core::lowrank::solve_low_rank(gram, &hp_k)?;
        losses.push(oracle::expected_loss(gram, &w.w, &hp_k));
    }
    let scale = 1.0 + losses[0].abs();
    let mut measured = 0.0f64;
    for pair in losses.windows(2) {
        measured = measured.max((pair[1] - pair[0]) / scale);
    }
    let monotone = Check::bounded("low_rank_monotonicity", measured, 1e-9);
    Ok((full_rank, monotone))
}

pub fn cmd_verify(args: &VerifyArgs) -> Result<ExitCode> {
    let r = data::synthetic_interactions(args.m, args.n, args.density, seeds::derive(args.seed, 0));
    let gram = data::gram(&r);
    let opts = FastOptions { flip_update_denominator: args.flip_miller_denominator };

    let mut checks = Vec::new();
    checks.push(check_fast_equals_direct(&gram, &opts)?);
    checks.push(check_stationarity(&gram)?);
    checks.push(check_b_zero_equivalence(&gram)?);
    checks.push(check_pd_certificates(&gram));
    checks.push(check_miller_identity(args.seed)?);
    checks.push(check_scalar_invariance(&gram)?);
    checks.push(check_diag_independence(&gram, args.seed)?);
    checks.push(check_monte_carlo(&r, &gram, args.seed)?);
    let (full_rank, monotone) = check_low_rank(&gram)?;
    checks.push(full_rank);
    checks.push(monotone);

    let all_pass = checks.iter().all(|c| c.pass);
    for c in &checks {
        println!(
            "check {:<28} {} (measured {:e}, tolerance {:e})",
            c.name,
            if c.pass { "pass" } else { "FAIL" },
            c.measured,
            c.tolerance
        );
    }
    println!("verify: {}", if all_pass { "all checks passed" } else { "FAILED" });

    if let Some(out) = &args.out {
        ensure_out_dir(out)?;
        let checks_json: Vec<_> = checks
            .iter()
            .map(|c| {
                json!({
                    "name": c.name,
                    "pass": c.pass,
                    "measured": c.measured,
                    "tolerance": c.tolerance,
                })
            })
            .collect();
        write_json(
            &out.join("verify.json"),
            &json!({
                "spec_version": SPEC_VERSION,
                "n": args.n,
                "m": args.m,
                "density": args.density,
                "seed": args.seed,
                "flip_miller_denominator": args.flip_miller_denominator,
                "checks": checks_json,
                "all_pass": all_pass,
            }),
        )?;
    }
    Ok(if all_pass { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}
