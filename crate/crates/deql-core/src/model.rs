//! Trained model container and its on-disk format.
//!
//! A model is the dense n x n weight matrix plus a provenance record of the
//! hyperparameters and solver route that produced it. The binary layout is
//!
//! ```text
//!     "DEQLW001"            8-byte magic
//!     n                     u64, little-endian
//!     weights               n*n f64, little-endian, row-major
//!     provenance            UTF-8 JSON
//!     provenance length     u64, little-endian (last 8 bytes)
//! ```
//!
//! The trailing length field lets a reader locate the JSON without scanning,
//! and round-trips are bit-exact on the weights.

use std::io::{Read as _, Write as _};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::solver::{Hyperparameters, Variant};

const MAGIC: &[u8; 8] = b"DEQLW001";

/// Which route produced a weight matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    /// Per-column factorizations.
    Direct,
    /// Shared-inverse route with rank-1 updates.
    Fast,
    /// Single-expression solutions (steck, ease, low_rank).
    ClosedForm,
}

impl SolverKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SolverKind::Direct => "direct",
            SolverKind::Fast => "fast",
            SolverKind::ClosedForm => "closed_form",
        }
    }
}

/// Everything needed to reproduce a trained matrix: hyperparameters, the
/// solver route, and any columns the fast route handed back to the direct
/// one. For steck the record shows b_zero at a = 1 (the b = 0 solution is
/// the same for every a); for ease only lambda is meaningful.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub variant: Variant,
    pub a: f64,
    pub b: f64,
    pub p: f64,
    pub lambda: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank_k: Option<usize>,
    pub solver: SolverKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fallback_columns: Vec<usize>,
}

impl Provenance {
    pub fn new(hp: &Hyperparameters, solver: SolverKind) -> Self {
        Provenance {
            variant: hp.variant,
            a: hp.a,
            b: hp.b,
            p: hp.p,
            lambda: hp.lambda,
            rank_k: hp.rank_k,
            solver,
            fallback_columns: Vec::new(),
        }
    }
}

/// A trained item-item weight matrix with provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightMatrix {
    pub n: usize,
    pub w: Mat,
    pub provenance: Provenance,
}

impl WeightMatrix {
    pub fn diag(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.w[(i, i)]).collect()
    }

    /// Largest absolute diagonal entry; the zero-diagonal variants keep this
    /// at or near zero.
    pub fn max_abs_diag(&self) -> f64 {
        self.diag().iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_vec(&self.provenance)?;
        let mut buf =
            Vec::with_capacity(8 + 8 + self.n * self.n * 8 + json.len() + 8);
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&(self.n as u64).to_le_bytes());
        for &v in self.w.as_slice() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf.extend_from_slice(&json);
        buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
        let mut file = std::fs::File::create(path)?;
        file.write_all(&buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let fail = |msg: &str| Error::ModelFormat(format!("{}: {msg}", path.display()));
        if bytes.len() < 24 {
            return Err(fail("file too short for header and trailer"));
        }
        if &bytes[..8] != MAGIC {
            return Err(fail("bad magic (expected DEQLW001)"));
        }
        let n = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let trailer_len =
            u64::from_le_bytes(bytes[bytes.len() - 8..].try_into().unwrap()) as usize;
        let expected = 8usize
            .checked_add(8)
            .and_then(|s| n.checked_mul(n).and_then(|nn| nn.checked_mul(8)).map(|w| s + w))
            .and_then(|s| s.checked_add(trailer_len))
            .and_then(|s| s.checked_add(8));
        match expected {
            Some(len) if len == bytes.len() => {}
            _ => return Err(fail("length does not match header dimensions")),
        }
        let mut data = Vec::with_capacity(n * n);
        let mut off = 16;
        for _ in 0..n * n {
            data.push(f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap()));
            off += 8;
        }
        let json = &bytes[off..off + trailer_len];
        let provenance: Provenance = serde_json::from_slice(json)
            .map_err(|e| fail(&format!("provenance is not valid JSON: {e}")))?;
        Ok(WeightMatrix {
            n,
            w: Mat::from_rows(n, n, &data),
            provenance,
        })
    }
}
