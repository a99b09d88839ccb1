//! Hyperparameter grid search with a carved-out validation split.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::Args;
use serde_json::json;

use deql_core::data::{self, SplitMode, SplitSpec};
use deql_core::eval;
use deql_core::seeds;
use deql_core::solver::{self, SolverChoice, Variant};
use deql_core::SPEC_VERSION;

use crate::config::{Config, HpArgs};
use crate::pipeline::{ensure_out_dir, load_training, write_json};

/// Ranking cutoff used for the leaderboard ordering.
const LEADERBOARD_K: usize = 20;

#[derive(Args, Debug)]
pub struct GridArgs {
    /// Training interactions for the search.
    #[arg(long)]
    pub train: PathBuf,
    /// Item id table fixing column order; defaults to first-appearance order.
    #[arg(long)]
    pub items: Option<PathBuf>,
    /// Config file with `b_grid`, `lambda_grid`, `p_grid` lists plus
    /// optional `variant`, `a`, `rank_k`, and `validation_*` keys.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// direct, fast, or auto.
    #[arg(long, default_value = "auto")]
    pub solver: SolverChoice,
    /// Drop items with no training interactions before the search.
    #[arg(long)]
    pub drop_zero_items: bool,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

struct GridRow {
    b: f64,
    lambda: f64,
    p: f64,
    ndcg: f64,
    recall: f64,
    error: Option<String>,
}

/// Search the configured (b, lambda, p) grid on a validation split carved
/// from the training data, write the leaderboard, and refit the winner on
/// the full training set. Exits nonzero when every grid point fails.
pub fn cmd_grid(args: &GridArgs) -> Result<ExitCode> {
    ensure_out_dir(&args.out)?;
    let config = Config::load(&args.config)?;

    let variant = config
        .get("variant")
        .map(|v| v.parse::<Variant>().map_err(anyhow::Error::msg))
        .transpose()?
        .unwrap_or(Variant::L2);
    let a = config.get_f64("a")?.unwrap_or(1.0);
    let rank_k = config.get_usize("rank_k")?;
    let b_grid = config.get_f64_list("b_grid")?.unwrap_or_else(|| {
        vec![if variant == Variant::BZero { 0.0 } else { 1.0 }]
    });
    let lambda_grid = config.get_f64_list("lambda_grid")?.unwrap_or_else(|| vec![0.0]);
    let p_grid = config.get_f64_list("p_grid")?.unwrap_or_else(|| vec![0.5]);

    let validation_mode = match config.get("validation_mode").unwrap_or("strong") {
        "strong" => SplitMode::Strong,
        "weak" => SplitMode::Weak,
        other => anyhow::bail!("unknown validation_mode `{other}` (expected strong or weak)"),
    };
    let validation = SplitSpec {
        mode: validation_mode,
        test_fraction: config.get_f64("validation_test_fraction")?.unwrap_or(0.2),
        holdout_fraction: config.get_f64("validation_holdout_fraction")?.unwrap_or(0.5),
        seed: seeds::derive(args.seed, 1),
    };

    let training = load_training(&args.train, args.items.as_deref(), args.drop_zero_items)?;
    let split = data::split(&training.matrix, &validation)?;
    let gram_val = data::gram(&split.train);

    let mut rows: Vec<GridRow> = Vec::new();
    for &b in &b_grid {
        for &lambda in &lambda_grid {
            for &p in &p_grid {
                let point = HpArgs {
                    variant: Some(variant),
                    a: Some(a),
                    b: Some(b),
                    p: Some(p),
                    lambda: Some(lambda),
                    rank_k,
                };
                let outcome = point.resolve().map_err(|e| e.to_string()).and_then(|hp| {
                    solver::solve(&gram_val, &hp, args.solver).map_err(|e| e.to_string())
                });
                let row = match outcome {
                    Ok(weight) => {
                        let report = eval::evaluate(
                            &split.test_input,
                            &split.test_target,
                            &weight,
                            &[LEADERBOARD_K],
                            false,
                            None,
                        )?;
                        GridRow {
                            b,
                            lambda,
                            p,
                            ndcg: report.ndcg_at_k[&LEADERBOARD_K],
                            recall: report.recall_at_k[&LEADERBOARD_K],
                            error: None,
                        }
                    }
                    Err(error) => {
                        GridRow { b, lambda, p, ndcg: f64::NAN, recall: f64::NAN, error: Some(error) }
                    }
                };
                rows.push(row);
            }
        }
    }

    // Successful points by NDCG desc, Recall desc, then the smaller
    // (b, lambda, p) lexicographically; failures keep grid order at the end.
    let (mut ok, failed): (Vec<GridRow>, Vec<GridRow>) =
        rows.into_iter().partition(|r| r.error.is_none());
    ok.sort_by(|x, y| {
        y.ndcg
            .total_cmp(&x.ndcg)
            .then(y.recall.total_cmp(&x.recall))
            .then(x.b.total_cmp(&y.b))
            .then(x.lambda.total_cmp(&y.lambda))
            .then(x.p.total_cmp(&y.p))
    });

    let mut board = String::from("variant\ta\tb\tlambda\tp\tndcg_at_20\trecall_at_20\tstatus\terror\n");
    for row in ok.iter() {
        board.push_str(&format!(
            "{variant}\t{a}\t{}\t{}\t{}\t{}\t{}\tok\t\n",
            row.b, row.lambda, row.p, row.ndcg, row.recall
        ));
    }
    for row in failed.iter() {
        board.push_str(&format!(
            "{variant}\t{a}\t{}\t{}\t{}\tnan\tnan\tfailed\t{}\n",
            row.b,
            row.lambda,
            row.p,
            row.error.as_deref().unwrap_or("")
        ));
    }
    std::fs::write(args.out.join("leaderboard.tsv"), board)
        .with_context(|| format!("writing {}", args.out.join("leaderboard.tsv").display()))?;

    let total = ok.len() + failed.len();
    let best_json;
    let found_best;
    if let Some(best) = ok.first() {
        let hp = HpArgs {
            variant: Some(variant),
            a: Some(a),
            b: Some(best.b),
            p: Some(best.p),
            lambda: Some(best.lambda),
            rank_k,
        }
        .resolve()?;
        let gram_full = data::gram(&training.matrix);
        let weight = solver::solve(&gram_full, &hp, args.solver)?;
        weight.save(&args.out.join("model.bin"))?;
        data::write_id_map(args.out.join("model_items.tsv"), &training.items)?;
        best_json = json!({
            "b": best.b,
            "lambda": best.lambda,
            "p": best.p,
            "ndcg_at_20": best.ndcg,
            "recall_at_20": best.recall,
        });
        println!(
            "grid: {} points ({} failed); best b={} lambda={} p={} ndcg@20={:.4}; refit on full train",
            total,
            failed.len(),
            best.b,
            best.lambda,
            best.p,
            best.ndcg
        );
        found_best = true;
    } else {
        best_json = serde_json::Value::Null;
        eprintln!("grid: all {total} points failed; see leaderboard.tsv");
        found_best = false;
    }

    write_json(
        &args.out.join("grid.json"),
        &json!({
            "spec_version": SPEC_VERSION,
            "variant": variant,
            "a": a,
            "rank_k": rank_k,
            "b_grid": b_grid,
            "lambda_grid": lambda_grid,
            "p_grid": p_grid,
            "validation": {
                "mode": validation.mode,
                "test_fraction": validation.test_fraction,
                "holdout_fraction": validation.holdout_fraction,
                "seed": validation.seed,
            },
            "points": total,
            "failed_points": failed.len(),
            "best": best_json,
            "model": if found_best { json!("model.bin") } else { serde_json::Value::Null },
        }),
    )?;
    Ok(if found_best { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}
