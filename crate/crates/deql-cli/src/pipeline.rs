//! Dataset pipeline subcommands: ingest, split, train, evaluate.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::Args;
use serde_json::json;

use deql_core::data::{self, InteractionMatrix, SplitMode, SplitSpec};
use deql_core::eval;
use deql_core::model::WeightMatrix;
use deql_core::solver::{self, SolverChoice, Variant};
use deql_core::SPEC_VERSION;

use crate::config::{Config, HpArgs};

pub(crate) fn ensure_out_dir(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)
        .with_context(|| format!("creating output directory {}", out.display()))
}

pub(crate) fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Parse `user<TAB>item` files against a shared item table. Users are
/// interned across all files in order of first appearance, so every returned
/// matrix shares one (user, item) index space; items must already be in the
/// table.
pub(crate) fn load_against_items(
    paths: &[&Path],
    items: &[String],
) -> Result<(Vec<InteractionMatrix>, Vec<String>)> {
    let lookup: HashMap<&str, usize> =
        items.iter().enumerate().map(|(k, id)| (id.as_str(), k)).collect();
    if lookup.len() != items.len() {
        bail!("item table contains duplicate ids");
    }
    let mut user_index: HashMap<String, usize> = HashMap::new();
    let mut users: Vec<String> = Vec::new();
    let mut per_file: Vec<Vec<(usize, usize)>> = Vec::new();

    for path in paths {
        let (matrix, maps) = data::load_interactions(path)?;
        let mut entries = Vec::with_capacity(matrix.num_entries());
        for (u, i) in matrix.entries() {
            let user_id = &maps.users[u];
            let gu = *user_index.entry(user_id.clone()).or_insert_with(|| {
                users.push(user_id.clone());
                users.len() - 1
            });
            let item_id = &maps.items[i];
            let gi = *lookup.get(item_id.as_str()).ok_or_else(|| {
                anyhow::anyhow!(
                    "{}: item id `{item_id}` is not in the item table",
                    path.display()
                )
            })?;
            entries.push((gu, gi));
        }
        per_file.push(entries);
    }

    let m = users.len();
    let matrices = per_file
        .into_iter()
        .map(|e| InteractionMatrix::from_entries(m, items.len(), e))
        .collect();
    Ok((matrices, users))
}

/// Training matrix plus the item table matching its columns.
pub(crate) struct TrainingData {
    pub matrix: InteractionMatrix,
    pub items: Vec<String>,
    pub dropped_items: usize,
}

/// Load training interactions, fixing the column order by `items` when
/// given (first-appearance order of the file otherwise), then optionally
/// dropping items with no interactions.
pub(crate) fn load_training(
    train: &Path,
    items: Option<&Path>,
    drop_zero_items: bool,
) -> Result<TrainingData> {
    let (matrix, item_ids) = match items {
        Some(path) => {
            let ids = data::read_id_map(path)?;
            let (matrices, _) = load_against_items(&[train], &ids)?;
            (matrices.into_iter().next().expect("one matrix per path"), ids)
        }
        None => {
            let (matrix, maps) = data::load_interactions(train)?;
            (matrix, maps.items)
        }
    };
    if !drop_zero_items {
        return Ok(TrainingData { matrix, items: item_ids, dropped_items: 0 });
    }
    let (kept_matrix, kept) = data::drop_zero_items(&matrix);
    let dropped = item_ids.len() - kept.len();
    let kept_ids = kept.iter().map(|&j| item_ids[j].clone()).collect();
    Ok(TrainingData { matrix: kept_matrix, items: kept_ids, dropped_items: dropped })
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    /// Raw `user<TAB>item` interaction file.
    #[arg(long)]
    pub input: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

/// Canonicalize a raw interaction file: dedup, index ids in first-appearance
/// order, and write the matrix plus both id tables.
pub fn cmd_ingest(args: &IngestArgs) -> Result<ExitCode> {
    ensure_out_dir(&args.out)?;
    let (matrix, maps) = data::load_interactions(&args.input)?;
    data::write_interactions(args.out.join("interactions.tsv"), &matrix, &maps)?;
    data::write_id_map(args.out.join("user_ids.tsv"), &maps.users)?;
    data::write_id_map(args.out.join("item_ids.tsv"), &maps.items)?;
    write_json(
        &args.out.join("ingest.json"),
        &json!({
            "spec_version": SPEC_VERSION,
            "input": args.input.display().to_string(),
            "num_users": matrix.num_users(),
            "num_items": matrix.num_items(),
            "num_entries": matrix.num_entries(),
        }),
    )?;
    println!(
        "ingested {} entries ({} users x {} items) into {}",
        matrix.num_entries(),
        matrix.num_users(),
        matrix.num_items(),
        args.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn parse_split_mode(s: &str) -> std::result::Result<SplitMode, String> {
    match s {
        "strong" => Ok(SplitMode::Strong),
        "weak" => Ok(SplitMode::Weak),
        other => Err(format!("unknown split mode `{other}` (expected strong or weak)")),
    }
}

#[derive(Args, Debug)]
pub struct SplitArgs {
    /// Interaction file to split (`user<TAB>item`).
    #[arg(long)]
    pub input: PathBuf,
    /// strong holds out whole users and folds part of their history back in
    /// as input; weak holds out individual entries.
    #[arg(long, default_value = "strong", value_parser = parse_split_mode)]
    pub mode: SplitMode,
    /// Fraction of users (strong) or entries (weak) on the test side.
    #[arg(long, default_value_t = 0.2)]
    pub test_fraction: f64,
    /// Strong mode: fraction of each test user's items held out as target.
    #[arg(long, default_value_t = 0.5)]
    pub holdout_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn cmd_split(args: &SplitArgs) -> Result<ExitCode> {
    ensure_out_dir(&args.out)?;
    let (matrix, maps) = data::load_interactions(&args.input)?;
    let spec = SplitSpec {
        mode: args.mode,
        test_fraction: args.test_fraction,
        holdout_fraction: args.holdout_fraction,
        seed: args.seed,
    };
    let result = data::split(&matrix, &spec)?;
    data::write_interactions(args.out.join("train.tsv"), &result.train, &maps)?;
    data::write_interactions(args.out.join("test_input.tsv"), &result.test_input, &maps)?;
    data::write_interactions(args.out.join("test_target.tsv"), &result.test_target, &maps)?;
    data::write_id_map(args.out.join("user_ids.tsv"), &maps.users)?;
    data::write_id_map(args.out.join("item_ids.tsv"), &maps.items)?;
    write_json(
        &args.out.join("split.json"),
        &json!({
            "spec_version": SPEC_VERSION,
            "mode": spec.mode,
            "test_fraction": spec.test_fraction,
            "holdout_fraction": spec.holdout_fraction,
            "seed": spec.seed,
            "num_users": matrix.num_users(),
            "num_items": matrix.num_items(),
            "train_entries": result.train.num_entries(),
            "test_input_entries": result.test_input.num_entries(),
            "test_target_entries": result.test_target.num_entries(),
            "skipped_users": result.skipped_users,
        }),
    )?;
    println!(
        "split {} entries into train={} target={} (skipped_users={})",
        matrix.num_entries(),
        result.train.num_entries(),
        result.test_target.num_entries(),
        result.skipped_users
    );
    Ok(ExitCode::SUCCESS)
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Training interactions (`user<TAB>item`).
    #[arg(long)]
    pub train: PathBuf,
    /// Item id table fixing the model's column order; defaults to
    /// first-appearance order of the training file.
    #[arg(long)]
    pub items: Option<PathBuf>,
    /// Config file supplying hyperparameters; flags override its keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// plain, l2, zero_diag_l2, b_zero, ease, or low_rank.
    #[arg(long)]
    pub variant: Option<Variant>,
    /// Reconstruction emphasis on dropped entries.
    #[arg(long)]
    pub a: Option<f64>,
    /// Reconstruction emphasis on retained entries.
    #[arg(long)]
    pub b: Option<f64>,
    /// Dropout probability.
    #[arg(long)]
    pub p: Option<f64>,
    /// Ridge strength.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Target rank for the low_rank variant.
    #[arg(long)]
    pub rank_k: Option<usize>,
    /// direct, fast, or auto.
    #[arg(long, default_value = "auto")]
    pub solver: SolverChoice,
    /// Drop items with no training interactions instead of failing on the
    /// singular columns they would produce.
    #[arg(long)]
    pub drop_zero_items: bool,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn cmd_train(args: &TrainArgs) -> Result<ExitCode> {
    ensure_out_dir(&args.out)?;
    let config = match &args.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    let hp = HpArgs {
        variant: args.variant,
        a: args.a,
        b: args.b,
        p: args.p,
        lambda: args.lambda,
        rank_k: args.rank_k,
    }
    .merge_config(&config)?
    .resolve()?;

    let training = load_training(&args.train, args.items.as_deref(), args.drop_zero_items)?;
    let start = Instant::now();
    let gram = data::gram(&training.matrix);
    let weight = solver::solve(&gram, &hp, args.solver)?;
    let wall_time_seconds = start.elapsed().as_secs_f64();

    let model_path = args.out.join("model.bin");
    weight.save(&model_path)?;
    data::write_id_map(args.out.join("model_items.tsv"), &training.items)?;

    let prov = &weight.provenance;
    write_json(
        &args.out.join("train.json"),
        &json!({
            "spec_version": SPEC_VERSION,
            "variant": prov.variant,
            "hyperparameters": {
                "a": hp.a,
                "b": hp.b,
                "p": hp.p,
                "lambda": hp.lambda,
                "rank_k": hp.rank_k,
            },
            "requested_solver": args.solver.to_string(),
            "solver": prov.solver,
            "fallback_columns": prov.fallback_columns.len(),
            "num_users": training.matrix.num_users(),
            "num_items": training.matrix.num_items(),
            "num_entries": training.matrix.num_entries(),
            "dropped_items": training.dropped_items,
            "wall_time_seconds": wall_time_seconds,
            "model": "model.bin",
            "items": "model_items.tsv",
        }),
    )?;
    println!(
        "trained {} ({} items, solver {}, {} fallback columns) in {:.3}s",
        hp.variant,
        training.matrix.num_items(),
        prov.solver.as_str(),
        prov.fallback_columns.len(),
        wall_time_seconds
    );
    Ok(ExitCode::SUCCESS)
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Trained model file.
    #[arg(long)]
    pub model: PathBuf,
    /// Item id table matching the model's columns (model_items.tsv from
    /// training).
    #[arg(long)]
    pub items: PathBuf,
    /// Fold-in interactions scored to produce recommendations.
    #[arg(long)]
    pub test_input: PathBuf,
    /// Held-out interactions the recommendations are judged against.
    #[arg(long)]
    pub test_target: PathBuf,
    /// Ranking cutoffs.
    #[arg(long, value_delimiter = ',', default_values_t = vec![5usize, 10, 20])]
    pub k: Vec<usize>,
    /// Also report reconstruction error over the held-out cells.
    #[arg(long)]
    pub mse: bool,
    /// Histogram the model diagonal into this many uniform bins.
    #[arg(long)]
    pub histogram_bins: Option<usize>,
    #[arg(long, default_value_t = -1.0)]
    pub histogram_min: f64,
    #[arg(long, default_value_t = 1.0)]
    pub histogram_max: f64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<ExitCode> {
    ensure_out_dir(&args.out)?;
    let weight = WeightMatrix::load(&args.model)?;
    let items = data::read_id_map(&args.items)?;
    if items.len() != weight.n {
        bail!(
            "item table {} has {} entries but the model has {} columns; \
             pass the model_items.tsv written at training time",
            args.items.display(),
            items.len(),
            weight.n
        );
    }
    let (matrices, _) =
        load_against_items(&[&args.test_input, &args.test_target], &items)?;
    let [input, target]: [InteractionMatrix; 2] =
        matrices.try_into().expect("one matrix per path");

    let histogram = args
        .histogram_bins
        .map(|bins| (bins, (args.histogram_min, args.histogram_max)));
    let report = eval::evaluate(&input, &target, &weight, &args.k, args.mse, histogram)?;

    if let Some(hist) = &report.diag_histogram {
        let mut text = String::from("bin_lower\tcount\n");
        for (edge, count) in hist {
            text.push_str(&format!("{edge}\t{count}\n"));
        }
        std::fs::write(args.out.join("diag_histogram.tsv"), text)?;
    }

    let prov = &weight.provenance;
    write_json(
        &args.out.join("eval.json"),
        &json!({
            "spec_version": SPEC_VERSION,
            "variant": prov.variant,
            "hyperparameters": {
                "a": prov.a,
                "b": prov.b,
                "p": prov.p,
                "lambda": prov.lambda,
                "rank_k": prov.rank_k,
            },
            "solver": prov.solver,
            "k": args.k,
            "recall_at_k": report.recall_at_k,
            "ndcg_at_k": report.ndcg_at_k,
            "mse": report.mse,
            "num_users_evaluated": report.num_users_evaluated,
            "skipped_users": report.skipped_users,
        }),
    )?;
    let k_main = args.k.iter().copied().max().unwrap_or(20);
    println!(
        "evaluated {} users (skipped {}): recall@{k_main}={:.4} ndcg@{k_main}={:.4}",
        report.num_users_evaluated,
        report.skipped_users,
        report.recall_at_k.get(&k_main).copied().unwrap_or(f64::NAN),
        report.ndcg_at_k.get(&k_main).copied().unwrap_or(f64::NAN),
    );
    Ok(ExitCode::SUCCESS)
}
