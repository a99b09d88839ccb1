//! PyO3 bindings for Python interop.
//!
//! Exposes the solver pipeline as a `deql_py` module: build or load
//! interaction data, split it, fit any solution family, and score or
//! evaluate the result without leaving the process.

use std::collections::HashMap;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use deql_core::data::{self, IdMaps, InteractionMatrix, SplitMode, SplitSpec};
use deql_core::eval;
use deql_core::model::WeightMatrix;
use deql_core::solver::{self, Hyperparameters, SolverChoice, Variant};

fn value_err(err: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(err.to_string())
}

fn parse_split_mode(mode: &str) -> PyResult<SplitMode> {
    match mode {
        "strong" => Ok(SplitMode::Strong),
        "weak" => Ok(SplitMode::Weak),
        other => Err(value_err(format!("unknown split mode `{other}` (expected strong or weak)"))),
    }
}

// =============================================================================
// Interactions — sparse binary user-item data
// =============================================================================

/// A deduplicated binary interaction matrix with its string id tables.
///
/// Usage from Python:
///
///     from deql_py import Interactions, train, evaluate
///     data = Interactions([("u1", "apples"), ("u1", "pears"), ("u2", "apples")])
///     tr, inp, tgt, skipped = data.split(mode="strong", seed=7)
///     model = train(tr, variant="l2", b=0.5, p=0.3, lam=10.0)
///     print(evaluate(model, inp, tgt, ks=[10]))
#[pyclass]
struct Interactions {
    matrix: InteractionMatrix,
    maps: IdMaps,
}

impl Interactions {
    fn with_same_ids(&self, matrix: InteractionMatrix) -> Interactions {
        Interactions { matrix, maps: self.maps.clone() }
    }
}

#[pymethods]
impl Interactions {
    /// Build from (user, item) string pairs; duplicates collapse and ids get
    /// dense indices in first-appearance order.
    #[new]
    fn new(pairs: Vec<(String, String)>) -> PyResult<Self> {
        let mut user_index: HashMap<String, usize> = HashMap::new();
        let mut item_index: HashMap<String, usize> = HashMap::new();
        let mut users: Vec<String> = Vec::new();
        let mut items: Vec<String> = Vec::new();
        let mut entries = Vec::with_capacity(pairs.len());
        for (user, item) in &pairs {
            let u = *user_index.entry(user.clone()).or_insert_with(|| {
                users.push(user.clone());
                users.len() - 1
            });
            let i = *item_index.entry(item.clone()).or_insert_with(|| {
                items.push(item.clone());
                items.len() - 1
            });
            entries.push((u, i));
        }
        if entries.is_empty() {
            return Err(value_err("need at least one (user, item) pair"));
        }
        let matrix = InteractionMatrix::from_entries(users.len(), items.len(), entries);
        Ok(Interactions { matrix, maps: IdMaps { users, items } })
    }

    /// Load a `user<TAB>item` file.
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let (matrix, maps) = data::load_interactions(path).map_err(value_err)?;
        Ok(Interactions { matrix, maps })
    }

    /// Generate a random instance where every item has at least one
    /// interaction; ids are "u0".."uN" and "i0".."iN".
    #[staticmethod]
    #[pyo3(signature = (num_users, num_items, density=0.1, seed=0))]
    fn synthetic(num_users: usize, num_items: usize, density: f64, seed: u64) -> PyResult<Self> {
        if num_users == 0 || num_items == 0 {
            return Err(value_err("need at least one user and one item"));
        }
        let matrix = data::synthetic_interactions(num_users, num_items, density, seed);
        let maps = IdMaps {
            users: (0..num_users).map(|k| format!("u{k}")).collect(),
            items: (0..num_items).map(|k| format!("i{k}")).collect(),
        };
        Ok(Interactions { matrix, maps })
    }

    /// Write as a `user<TAB>item` file.
    fn save(&self, path: &str) -> PyResult<()> {
        data::write_interactions(path, &self.matrix, &self.maps).map_err(value_err)
    }

    fn num_users(&self) -> usize {
        self.matrix.num_users()
    }

    fn num_items(&self) -> usize {
        self.matrix.num_items()
    }

    fn num_entries(&self) -> usize {
        self.matrix.num_entries()
    }

    /// All entries as (user, item) string pairs in index order.
    fn pairs(&self) -> Vec<(String, String)> {
        self.matrix
            .entries()
            .map(|(u, i)| (self.maps.users[u].clone(), self.maps.items[i].clone()))
            .collect()
    }

    /// Item ids in model column order.
    fn item_ids(&self) -> Vec<String> {
        self.maps.items.clone()
    }

    /// Partition into (train, test_input, test_target, skipped_users). All
    /// three parts keep this matrix's user and item index space, so they can
    /// be fed to train and evaluate together.
    ///
    /// Args:
    ///     mode: "strong" holds out whole users and folds part of their
    ///         history back in as input; "weak" holds out single entries.
    ///     test_fraction: users (strong) or entries (weak) on the test side.
    ///     holdout_fraction: strong mode, fraction of a test user's items
    ///         held out as the ranking target.
    ///     seed: determines the outcome completely.
    #[pyo3(signature = (mode="strong", test_fraction=0.2, holdout_fraction=0.5, seed=0))]
    fn split(
        &self,
        mode: &str,
        test_fraction: f64,
        holdout_fraction: f64,
        seed: u64,
    ) -> PyResult<(Interactions, Interactions, Interactions, usize)> {
        let spec = SplitSpec {
            mode: parse_split_mode(mode)?,
            test_fraction,
            holdout_fraction,
            seed,
        };
        let result = data::split(&self.matrix, &spec).map_err(value_err)?;
        Ok((
            self.with_same_ids(result.train),
            self.with_same_ids(result.test_input),
            self.with_same_ids(result.test_target),
            result.skipped_users,
        ))
    }

    fn __repr__(&self) -> String {
        format!(
            "Interactions(users={}, items={}, entries={})",
            self.matrix.num_users(),
            self.matrix.num_items(),
            self.matrix.num_entries()
        )
    }
}

// =============================================================================
// Model — a trained weight matrix
// =============================================================================

/// A fitted item-item weight matrix with its training provenance.
#[pyclass]
struct Model {
    weight: WeightMatrix,
}

#[pymethods]
impl Model {
    /// Load a model file written by `save` (or the CLI).
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let weight = WeightMatrix::load(std::path::Path::new(path)).map_err(value_err)?;
        Ok(Model { weight })
    }

    /// Write the weights and provenance to a model file.
    fn save(&self, path: &str) -> PyResult<()> {
        self.weight.save(std::path::Path::new(path)).map_err(value_err)
    }

    /// Number of items (the matrix is n x n).
    fn n(&self) -> usize {
        self.weight.n
    }

    /// The diagonal of W.
    fn diag(&self) -> Vec<f64> {
        self.weight.diag()
    }

    /// Full weights as a row-major list of rows.
    fn weights(&self) -> Vec<Vec<f64>> {
        (0..self.weight.n).map(|r| self.weight.w.row(r).to_vec()).collect()
    }

    /// How the model was trained: variant, hyperparameters, solver route,
    /// and any columns the fast route recomputed directly.
    fn provenance<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let prov = &self.weight.provenance;
        let dict = PyDict::new(py);
        dict.set_item("variant", prov.variant.as_str())?;
        dict.set_item("a", prov.a)?;
        dict.set_item("b", prov.b)?;
        dict.set_item("p", prov.p)?;
        dict.set_item("lambda", prov.lambda)?;
        dict.set_item("rank_k", prov.rank_k)?;
        dict.set_item("solver", prov.solver.as_str())?;
        dict.set_item("fallback_columns", prov.fallback_columns.clone())?;
        Ok(dict)
    }

    /// Score all items for one user given their item indices; the input
    /// items themselves come back as -inf so they cannot be recommended.
    fn score(&self, input_items: Vec<usize>) -> PyResult<Vec<f64>> {
        for &i in &input_items {
            if i >= self.weight.n {
                return Err(value_err(format!(
                    "item index {i} out of range for a model with {} items",
                    self.weight.n
                )));
            }
        }
        Ok(eval::score_user(&input_items, &self.weight))
    }

    fn __repr__(&self) -> String {
        let prov = &self.weight.provenance;
        format!(
            "Model(n={}, variant={}, solver={})",
            self.weight.n,
            prov.variant.as_str(),
            prov.solver.as_str()
        )
    }
}

// =============================================================================
// Training and evaluation
// =============================================================================

/// Fit a weight matrix on interaction data.
///
/// Args:
///     data: training interactions.
///     variant: plain, l2, zero_diag_l2, b_zero, ease, or low_rank.
///     a: emphasis on dropped cells.
///     b: emphasis on retained cells (0 for b_zero).
///     p: dropout probability in (0, 1).
///     lam: ridge strength.
///     rank_k: rank budget, low_rank only.
///     solver: direct, fast, or auto.
#[pyfunction]
#[pyo3(signature = (data, variant="l2", a=1.0, b=1.0, p=0.5, lam=0.0, rank_k=None, solver="auto"))]
#[allow(clippy::too_many_arguments)]
fn train(
    data: &Interactions,
    variant: &str,
    a: f64,
    b: f64,
    p: f64,
    lam: f64,
    rank_k: Option<usize>,
    solver: &str,
) -> PyResult<Model> {
    let variant: Variant = variant.parse().map_err(value_err)?;
    let choice: SolverChoice = solver.parse().map_err(value_err)?;
    let hp = Hyperparameters { a, b, p, lambda: lam, variant, rank_k };
    let gram = data::gram(&data.matrix);
    let weight = solver::solve(&gram, &hp, choice).map_err(value_err)?;
    Ok(Model { weight })
}

/// Rank held-out items for every test user and average the metrics.
///
/// `test_input` and `test_target` must share one index space (use the parts
/// returned by `Interactions.split`). Returns a dict with `recall_at_k`,
/// `ndcg_at_k`, optional `mse`, `num_users_evaluated`, and `skipped_users`.
#[pyfunction]
#[pyo3(signature = (model, test_input, test_target, ks=vec![5, 10, 20], mse=false))]
fn evaluate<'py>(
    py: Python<'py>,
    model: &Model,
    test_input: &Interactions,
    test_target: &Interactions,
    ks: Vec<usize>,
    mse: bool,
) -> PyResult<Bound<'py, PyDict>> {
    if test_input.matrix.num_users() != test_target.matrix.num_users() {
        return Err(value_err("test_input and test_target must cover the same users"));
    }
    if test_input.matrix.num_items() != model.weight.n
        || test_target.matrix.num_items() != model.weight.n
    {
        return Err(value_err(format!(
            "item dimension mismatch: model has {} items, test_input {}, test_target {}",
            model.weight.n,
            test_input.matrix.num_items(),
            test_target.matrix.num_items()
        )));
    }
    if ks.is_empty() || ks.contains(&0) {
        return Err(value_err("ks must be a nonempty list of cutoffs >= 1"));
    }
    let report = eval::evaluate(
        &test_input.matrix,
        &test_target.matrix,
        &model.weight,
        &ks,
        mse,
        None,
    )
    .map_err(value_err)?;

    let dict = PyDict::new(py);
    let recall = PyDict::new(py);
    let ndcg = PyDict::new(py);
    for (k, v) in &report.recall_at_k {
        recall.set_item(k, v)?;
    }
    for (k, v) in &report.ndcg_at_k {
        ndcg.set_item(k, v)?;
    }
    dict.set_item("recall_at_k", recall)?;
    dict.set_item("ndcg_at_k", ndcg)?;
    dict.set_item("mse", report.mse)?;
    dict.set_item("num_users_evaluated", report.num_users_evaluated)?;
    dict.set_item("skipped_users", report.skipped_users)?;
    Ok(dict)
}

// =============================================================================
// Module registration
// =============================================================================

#[pymodule]
fn deql_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<Interactions>()?;
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    Ok(())
}
