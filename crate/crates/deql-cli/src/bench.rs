//! Direct-vs-fast timing comparison across problem sizes.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::Args;

use deql_core::data;
use deql_core::fast;
use deql_core::seeds;
use deql_core::solver::{self, Hyperparameters, Variant};

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// Item counts to benchmark; users are 2n per instance.
    #[arg(long, value_delimiter = ',', default_values_t = vec![100usize, 200, 400])]
    pub n: Vec<usize>,
    #[arg(long, default_value_t = 0.1)]
    pub density: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Repetitions per route; the median is reported.
    #[arg(long, default_value_t = 3)]
    pub reps: usize,
    /// Directory for bench.tsv (the table prints to stdout either way).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Median wall time over `reps` runs of `solve`, single-threaded so the
/// ratio reflects the per-column-factorization versus shared-factorization
/// arithmetic rather than how well each route parallelizes.
fn median_seconds<F>(pool: &rayon::ThreadPool, reps: usize, solve: F) -> Result<f64>
where
    F: Fn() -> deql_core::error::Result<deql_core::model::WeightMatrix> + Sync,
{
    let mut times = Vec::with_capacity(reps);
    for _ in 0..reps {
        let start = Instant::now();
        let w = pool.install(&solve)?;
        times.push(start.elapsed().as_secs_f64());
        std::hint::black_box(&w);
    }
    times.sort_by(f64::total_cmp);
    Ok(times[times.len() / 2])
}

pub fn cmd_bench(args: &BenchArgs) -> Result<ExitCode> {
    anyhow::ensure!(args.reps >= 1, "--reps must be at least 1");
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .context("building the single-threaded timing pool")?;
    let hp = Hyperparameters {
        a: 1.0,
        b: 0.5,
        p: 0.3,
        lambda: 1.0,
        variant: Variant::L2,
        rank_k: None,
    };

    let mut table = String::from("n\tt_direct_seconds\tt_fast_seconds\tratio\n");
    println!("n\tt_direct_seconds\tt_fast_seconds\tratio");
    for &n in &args.n {
        let r = data::synthetic_interactions(2 * n, n, args.density, seeds::derive(args.seed, n as u64));
        let gram = data::gram(&r);
        let t_direct = median_seconds(&pool, args.reps, || solver::solve_direct(&gram, &hp))?;
        let t_fast = median_seconds(&pool, args.reps, || fast::solve_fast(&gram, &hp))?;
        let ratio = t_direct / t_fast;
        let line = format!("{n}\t{t_direct:.6}\t{t_fast:.6}\t{ratio:.3}");
        println!("{line}");
        table.push_str(&line);
        table.push('\n');
    }

    if let Some(out) = &args.out {
        crate::pipeline::ensure_out_dir(out)?;
        std::fs::write(out.join("bench.tsv"), table)
            .with_context(|| format!("writing {}", out.join("bench.tsv").display()))?;
    }
    Ok(ExitCode::SUCCESS)
}
