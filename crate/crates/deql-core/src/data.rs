//! Interaction data: ingestion, train/test splitting, and the Gram matrix.
//!
//! Interactions are a sparse binary m×n matrix R over dense 0-based user and
//! item indices; membership in the entry set means R[u][i] = 1. Splits come
//! in two modes:
//!
//! - **strong**: a fraction of users becomes the test set; part of each test
//!   user's history is folded in as model input, the rest is the ranking
//!   target. Test users' rows leave the training matrix entirely.
//! - **weak**: a fraction of entries becomes the target; the training matrix
//!   doubles as the test input, so users appear on both sides.
//!
//! All randomness is ChaCha-based and derived from the split seed (per-user
//! holdout streams derive from (seed, user index)), so a split is a pure
//! function of its inputs.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::seeds;

/// Sparse binary user-item interaction matrix.
///
/// Entries are kept in a `BTreeSet` ordered by (user, item), which gives
/// every traversal a canonical order for free.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InteractionMatrix {
    num_users: usize,
    num_items: usize,
    entries: BTreeSet<(usize, usize)>,
}

impl InteractionMatrix {
    /// Build from entries, validating bounds. Duplicates collapse via the set.
    pub fn from_entries(
        num_users: usize,
        num_items: usize,
        entries: impl IntoIterator<Item = (usize, usize)>,
    ) -> Self {
        let entries: BTreeSet<(usize, usize)> = entries.into_iter().collect();
        for &(u, i) in &entries {
            assert!(u < num_users && i < num_items, "entry ({u},{i}) out of bounds");
        }
        InteractionMatrix { num_users, num_items, entries }
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn num_entries(&self) -> usize {
        self.entries.len()
    }

    pub fn contains(&self, user: usize, item: usize) -> bool {
        self.entries.contains(&(user, item))
    }

    /// Entries in (user, item) order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.entries.iter().copied()
    }

    /// Items of one user, ascending.
    pub fn row_items(&self, user: usize) -> Vec<usize> {
        self.entries
            .range((user, 0)..(user + 1, 0))
            .map(|&(_, i)| i)
            .collect()
    }

    /// All rows as ascending item lists (empty rows included).
    pub fn rows(&self) -> Vec<Vec<usize>> {
        let mut rows = vec![Vec::new(); self.num_users];
        for &(u, i) in &self.entries {
            rows[u].push(i);
        }
        rows
    }

    /// Interactions per item (the Gram diagonal).
    pub fn item_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.num_items];
        for &(_, i) in &self.entries {
            counts[i] += 1;
        }
        counts
    }
}

/// String id ↔ dense index tables produced at ingestion.
///
/// `users[k]` / `items[k]` is the original id of dense index k
/// (first-appearance order).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdMaps {
    pub users: Vec<String>,
    pub items: Vec<String>,
}

/// Parse a `user<TAB>item` file into a matrix plus its id tables.
///
/// Nonempty lines must have exactly two tab-separated fields; lines starting
/// with `#` are ignored. String ids map to dense 0-based indices in
/// first-appearance order; duplicate pairs collapse to one entry.
pub fn load_interactions(path: impl AsRef<Path>) -> Result<(InteractionMatrix, IdMaps)> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    parse_interactions(&text, &path.display().to_string())
}

/// [`load_interactions`] on in-memory text; `source` names the input in errors.
pub fn parse_interactions(text: &str, source: &str) -> Result<(InteractionMatrix, IdMaps)> {
    let mut user_index = std::collections::HashMap::new();
    let mut item_index = std::collections::HashMap::new();
    let mut users = Vec::new();
    let mut items = Vec::new();
    let mut entries = BTreeSet::new();

    for (lineno, line) in text.lines().enumerate() {
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split('\t');
        let (user, item) = match (fields.next(), fields.next(), fields.next()) {
            (Some(u), Some(i), None) => (u, i),
            _ => {
                return Err(Error::MalformedLine {
                    path: source.to_string(),
                    line: lineno + 1,
                    found: line.split('\t').count(),
                })
            }
        };
        let u = *user_index.entry(user.to_string()).or_insert_with(|| {
            users.push(user.to_string());
            users.len() - 1
        });
        let i = *item_index.entry(item.to_string()).or_insert_with(|| {
            items.push(item.to_string());
            items.len() - 1
        });
        entries.insert((u, i));
    }

    if entries.is_empty() {
        return Err(Error::EmptyInput { path: source.to_string() });
    }
    let matrix = InteractionMatrix {
        num_users: users.len(),
        num_items: items.len(),
        entries,
    };
    Ok((matrix, IdMaps { users, items }))
}

/// Serialize a matrix back to `pair_tsv` using the id tables.
pub fn write_interactions(
    path: impl AsRef<Path>,
    matrix: &InteractionMatrix,
    maps: &IdMaps,
) -> Result<()> {
    let mut out = String::new();
    for (u, i) in matrix.entries() {
        writeln!(out, "{}\t{}", maps.users[u], maps.items[i]).expect("string write");
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Persist one id table as `id<TAB>index` lines.
pub fn write_id_map(path: impl AsRef<Path>, ids: &[String]) -> Result<()> {
    let mut out = String::new();
    for (index, id) in ids.iter().enumerate() {
        writeln!(out, "{id}\t{index}").expect("string write");
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Read an id table written by [`write_id_map`].
pub fn read_id_map(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let mut ids = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split('\t');
        match (fields.next(), fields.next(), fields.next()) {
            (Some(id), Some(index), None) if index.trim().parse::<usize>() == Ok(ids.len()) => {
                ids.push(id.to_string());
            }
            _ => {
                return Err(Error::MalformedLine {
                    path: path.display().to_string(),
                    line: lineno + 1,
                    found: line.split('\t').count(),
                })
            }
        }
    }
    Ok(ids)
}

/// How a dataset is divided for evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitMode {
    Strong,
    Weak,
}

/// Split parameters; the seed fully determines the outcome.
#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
pub struct SplitSpec {
    pub mode: SplitMode,
    /// Fraction of users (strong) or entries (weak) on the test side.
    pub test_fraction: f64,
    /// Strong mode only: fraction of each test user's items held out as the
    /// ranking target; the remainder is folded in as input.
    pub holdout_fraction: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = |f: f64| f > 0.0 && f < 1.0;
        if !ok(self.test_fraction) {
            return Err(Error::InvalidHyperparameters(format!(
                "test_fraction must lie strictly in (0,1), got {}",
                self.test_fraction
            )));
        }
        if self.mode == SplitMode::Strong && !ok(self.holdout_fraction) {
            return Err(Error::InvalidHyperparameters(format!(
                "holdout_fraction must lie strictly in (0,1), got {}",
                self.holdout_fraction
            )));
        }
        Ok(())
    }
}

/// Split output. All three matrices keep the parent's (m, n) shape so user
/// and item indices line up across them; non-test rows are simply empty on
/// the test side.
#[derive(Clone, Debug)]
pub struct SplitResult {
    pub train: InteractionMatrix,
    pub test_input: InteractionMatrix,
    pub test_target: InteractionMatrix,
    /// Strong mode: selected test users with fewer than 2 interactions, who
    /// therefore stayed in train.
    pub skipped_users: usize,
}

/// `round(fraction * count)` (half up), clamped so both sides stay nonempty.
/// Degenerate inputs (count < 2) select nothing.
fn rounded_take(fraction: f64, count: usize) -> usize {
    if count < 2 {
        return 0;
    }
    let raw = (fraction * count as f64 + 0.5).floor() as usize;
    raw.clamp(1, count - 1)
}

/// Partition interactions for evaluation without losing entries. Weak mode:
/// train and test_target partition the entry set and test_input aliases
/// train. Strong mode: train, test_input, and test_target partition it, with
/// each selected test user's row split between input and target.
pub fn split(r: &InteractionMatrix, spec: &SplitSpec) -> Result<SplitResult> {
    spec.validate()?;
    let (m, n) = (r.num_users(), r.num_items());

    match spec.mode {
        SplitMode::Weak => {
            let mut entries: Vec<(usize, usize)> = r.entries().collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(spec.seed, 0));
            entries.shuffle(&mut rng);
            let take = rounded_take(spec.test_fraction, entries.len());
            let target: BTreeSet<_> = entries[..take].iter().copied().collect();
            let train: BTreeSet<_> = entries[take..].iter().copied().collect();
            let train = InteractionMatrix { num_users: m, num_items: n, entries: train };
            Ok(SplitResult {
                test_input: train.clone(),
                train,
                test_target: InteractionMatrix { num_users: m, num_items: n, entries: target },
                skipped_users: 0,
            })
        }
        SplitMode::Strong => {
            let mut users: Vec<usize> = (0..m).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(spec.seed, 0));
            users.shuffle(&mut rng);
            let num_test = rounded_take(spec.test_fraction, m);
            let test_users: BTreeSet<usize> = users[..num_test].iter().copied().collect();

            let mut train = BTreeSet::new();
            let mut input = BTreeSet::new();
            let mut target = BTreeSet::new();
            let mut skipped = 0usize;
            for (u, items) in r.rows().into_iter().enumerate() {
                if !test_users.contains(&u) {
                    train.extend(items.into_iter().map(|i| (u, i)));
                    continue;
                }
                if items.len() < 2 {
                    skipped += 1;
                    train.extend(items.into_iter().map(|i| (u, i)));
                    continue;
                }
                let mut items = items;
                // Per-user stream: the holdout choice must not depend on how
                // many users came before this one.
                let mut urng =
                    ChaCha8Rng::seed_from_u64(seeds::derive(spec.seed, 1 + u as u64));
                items.shuffle(&mut urng);
                let hold = rounded_take(spec.holdout_fraction, items.len());
                target.extend(items[..hold].iter().map(|&i| (u, i)));
                input.extend(items[hold..].iter().map(|&i| (u, i)));
            }

            Ok(SplitResult {
                train: InteractionMatrix { num_users: m, num_items: n, entries: train },
                test_input: InteractionMatrix { num_users: m, num_items: n, entries: input },
                test_target: InteractionMatrix { num_users: m, num_items: n, entries: target },
                skipped_users: skipped,
            })
        }
    }
}

/// Dense Gram matrix R᳀R with its integer diagonal.
#[derive(Clone, Debug)]
pub struct GramBundle {
    pub n: usize,
    /// Exactly symmetric: built from integer co-occurrence counts.
    pub gram: Mat,
    /// Diagonal of R᳀R: interactions per item.
    pub item_counts: Vec<usize>,
}

/// Compute R᳀R by pairwise counting over each user's sorted item list.
///
/// Counts accumulate as integers and convert to f64 once, so the matrix is
/// bit-exactly symmetric and immune to summation order.
pub fn gram(r: &InteractionMatrix) -> GramBundle {
    let n = r.num_items();
    let mut counts = vec![0u64; n * n];
    for items in r.rows() {
        for (a, &k) in items.iter().enumerate() {
            for &l in &items[a..] {
                counts[k * n + l] += 1;
            }
        }
    }
    let mut g = Mat::zeros(n, n);
    for k in 0..n {
        for l in k..n {
            let c = counts[k * n + l] as f64;
            g[(k, l)] = c;
            g[(l, k)] = c;
        }
    }
    let item_counts = (0..n).map(|i| g[(i, i)] as usize).collect();
    GramBundle { n, gram: g, item_counts }
}

/// Random binary instance for self-tests and benchmarks: every cell is
/// included independently with probability `density`, then items that came
/// out empty get one interaction so the no-zero-column precondition holds.
/// A pure function of its arguments.
pub fn synthetic_interactions(
    num_users: usize,
    num_items: usize,
    density: f64,
    seed: u64,
) -> InteractionMatrix {
    use rand::Rng;
    assert!(num_users > 0 && num_items > 0, "need a nonempty shape");
    let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(seed, 0));
    let mut entries = BTreeSet::new();
    for u in 0..num_users {
        for i in 0..num_items {
            if rng.random::<f64>() < density {
                entries.insert((u, i));
            }
        }
    }
    let mut counts = vec![0usize; num_items];
    for &(_, i) in &entries {
        counts[i] += 1;
    }
    for (i, &c) in counts.iter().enumerate() {
        if c == 0 {
            entries.insert((rng.random_range(0..num_users), i));
        }
    }
    InteractionMatrix { num_users, num_items, entries }
}

/// Indices of items with zero interactions. An empty result certifies that
/// every column of R is nonzero, the precondition the b>0 solvers rely on.
pub fn check_no_zero_columns(r: &InteractionMatrix) -> Vec<usize> {
    r.item_counts()
        .iter()
        .enumerate()
        .filter(|(_, &c)| c == 0)
        .map(|(i, _)| i)
        .collect()
}

/// Remove zero-interaction items and compact the remaining indices.
///
/// Returns the remapped matrix plus `kept`, where `kept[new] = old`.
pub fn drop_zero_items(r: &InteractionMatrix) -> (InteractionMatrix, Vec<usize>) {
    let counts = r.item_counts();
    let kept: Vec<usize> = (0..r.num_items()).filter(|&i| counts[i] > 0).collect();
    let mut new_index = vec![usize::MAX; r.num_items()];
    for (new, &old) in kept.iter().enumerate() {
        new_index[old] = new;
    }
    let entries = r.entries().map(|(u, i)| (u, new_index[i]));
    let matrix = InteractionMatrix {
        num_users: r.num_users(),
        num_items: kept.len(),
        entries: entries.collect(),
    };
    (matrix, kept)
}
