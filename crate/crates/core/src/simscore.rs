//! Embedding similarity scoring and label-space helpers for the similarity
//! model's training targets.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pairgen::CandidatePair;

/// Precomputed article embeddings sharing one dimension.
#[derive(Debug, Clone)]
pub struct EmbeddingStore {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

#[derive(Deserialize)]
struct EmbeddingRecord {
    id: String,
    vec: Vec<f64>,
}

impl EmbeddingStore {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidInput("embedding dimension must be positive".into()));
        }
        Ok(Self {
            dim,
            vectors: HashMap::new(),
        })
    }

    pub fn insert(&mut self, id: impl Into<String>, vec: Vec<f64>) -> Result<()> {
        if vec.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: vec.len(),
            });
        }
        let id = id.into();
        if vec.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite entry in embedding `{id}`")));
        }
        self.vectors.insert(id, vec);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.vectors.get(id).map(Vec::as_slice)
    }

    /// Text format: a `dim=<D>` header line, then `{"id": .., "vec": [..]}`
    /// per line.
    pub fn load_jsonl(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(file).lines();
        let header = lines
            .next()
            .transpose()
            .map_err(|e| Error::io(path, e))?
            .unwrap_or_default();
        let dim: usize = header
            .trim()
            .strip_prefix("dim=")
            .and_then(|d| d.parse().ok())
            .ok_or_else(|| Error::InvalidInput(format!("expected `dim=<D>` header, got `{header}`")))?;
        let mut store = Self::new(dim)?;
        for line in lines {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: EmbeddingRecord = serde_json::from_str(&line)?;
            store.insert(rec.id, rec.vec)?;
        }
        Ok(store)
    }

    /// Binary format: row-major little-endian `f32` matrix plus a sidecar
    /// file with one id per line in row order.
    pub fn load_binary(matrix: &Path, ids: &Path, dim: usize) -> Result<Self> {
        let mut bytes = Vec::new();
        File::open(matrix)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(matrix, e))?;
        let id_list: Vec<String> = std::fs::read_to_string(ids)
            .map_err(|e| Error::io(ids, e))?
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| l.trim().to_owned())
            .collect();
        let row_bytes = dim * 4;
        if dim == 0 || bytes.len() != row_bytes * id_list.len() {
            return Err(Error::InvalidInput(format!(
                "binary matrix of {} bytes does not hold {} rows of dimension {dim}",
                bytes.len(),
                id_list.len()
            )));
        }
        let mut store = Self::new(dim)?;
        for (row, id) in bytes.chunks_exact(row_bytes).zip(id_list) {
            let v = row
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
                .collect();
            store.insert(id, v)?;
        }
        Ok(store)
    }
}

/// Cosine similarity clamped to [-1, 1].
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            expected: u.len(),
            found: v.len(),
        });
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if nu == 0.0 {
        return Err(Error::ZeroVector("left operand".into()));
    }
    if nv == 0.0 {
        return Err(Error::ZeroVector("right operand".into()));
    }
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPair {
    #[serde(rename = "a")]
    pub id_a: String,
    #[serde(rename = "b")]
    pub id_b: String,
    pub similarity: f64,
}

#[derive(Debug, Default)]
pub struct ScoreOutcome {
    pub scored: Vec<ScoredPair>,
    pub skipped_missing: usize,
    pub skipped_degenerate: usize,
}

/// Scores pairs whose article ids are the embedding keys.
pub fn score_pairs(pairs: &[CandidatePair], store: &EmbeddingStore) -> Result<ScoreOutcome> {
    score_pairs_with(pairs, store, Some)
}

/// Scores pairs, resolving each article id to its embedding key with `key`.
/// Pairs with an unresolvable side are skipped and counted.
pub fn score_pairs_with<'a, F>(pairs: &'a [CandidatePair], store: &EmbeddingStore, key: F) -> Result<ScoreOutcome>
where
    F: Fn(&'a str) -> Option<&'a str> + Sync,
{
    enum Step {
        Scored(ScoredPair),
        Missing,
        Degenerate,
    }
    let steps: Vec<Step> = pairs
        .par_iter()
        .map(|p| {
            let (Some(u), Some(v)) = (
                key(&p.id_a).and_then(|k| store.get(k)),
                key(&p.id_b).and_then(|k| store.get(k)),
            ) else {
                return Ok(Step::Missing);
            };
            match cosine(u, v) {
                Ok(s) => Ok(Step::Scored(ScoredPair {
                    id_a: p.id_a.clone(),
                    id_b: p.id_b.clone(),
                    similarity: s,
                })),
                Err(Error::ZeroVector(_)) => Ok(Step::Degenerate),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_>>()?;
    let mut out = ScoreOutcome::default();
    for s in steps {
        match s {
            Step::Scored(p) => out.scored.push(p),
            Step::Missing => out.skipped_missing += 1,
            Step::Degenerate => out.skipped_degenerate += 1,
        }
    }
    if out.skipped_missing > 0 {
        log::warn!("{} pairs skipped: missing embedding", out.skipped_missing);
    }
    if out.skipped_degenerate > 0 {
        log::warn!("{} pairs skipped: zero embedding", out.skipped_degenerate);
    }
    Ok(out)
}

/// Affine map from the four-point rating scale [1, 4] onto [l, r].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabelMapping {
    l: f64,
    r: f64,
}

impl LabelMapping {
    pub const UNSIGNED: LabelMapping = LabelMapping { l: 0.0, r: 1.0 };
    pub const SIGNED: LabelMapping = LabelMapping { l: -1.0, r: 1.0 };

    pub fn new(l: f64, r: f64) -> Result<Self> {
        if !l.is_finite() || !r.is_finite() || r <= l {
            return Err(Error::InvalidInput(format!("label range needs r > l, got [{l}, {r}]")));
        }
        Ok(Self { l, r })
    }

    pub fn slope(&self) -> f64 {
        (self.r - self.l) / 3.0
    }

    pub fn offset(&self) -> f64 {
        (-self.r + 4.0 * self.l) / 3.0
    }
}

pub fn map_label(x: f64, mapping: &LabelMapping) -> Result<f64> {
    if !(1.0..=4.0).contains(&x) {
        return Err(Error::OutOfRange {
            value: x,
            range: "[1, 4]",
        });
    }
    // endpoints are pinned so 1 and 4 land exactly on l and r
    if x == 1.0 {
        return Ok(mapping.l);
    }
    if x == 4.0 {
        return Ok(mapping.r);
    }
    Ok(mapping.slope() * x + mapping.offset())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CubicVariant {
    /// `t^3` on [0, 1].
    Unsigned,
    /// `(2t - 1)^3 / 2 + 1/2` on [-1, 1], as published. Leaves [-1, 1] for
    /// negative inputs.
    SignedVerbatim,
    /// `t^3` on [-1, 1]; odd and range preserving.
    SignedOdd,
}

pub fn cubic_transform(t: f64, variant: CubicVariant) -> Result<f64> {
    match variant {
        CubicVariant::Unsigned => {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::OutOfRange {
                    value: t,
                    range: "[0, 1]",
                });
            }
            Ok(t * t * t)
        }
        CubicVariant::SignedVerbatim | CubicVariant::SignedOdd => {
            if !(-1.0..=1.0).contains(&t) {
                return Err(Error::OutOfRange {
                    value: t,
                    range: "[-1, 1]",
                });
            }
            if variant == CubicVariant::SignedOdd {
                Ok(t * t * t)
            } else {
                Ok((2.0 * t - 1.0).powi(3) / 2.0 + 0.5)
            }
        }
    }
}

/// Per-pair annotation on the four-point scale.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AspectLabels {
    pub overall: f64,
    pub geo: Option<f64>,
    pub ent: Option<f64>,
    pub time: Option<f64>,
    pub nar: Option<f64>,
    pub style: Option<f64>,
    pub tone: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IntegrationScheme {
    /// Overall blended with the entity and narrative aspects.
    Y1,
    /// Overall blended with all six aspects.
    Y2,
}

pub const DEFAULT_Y1_WEIGHT: f64 = 0.8;

pub fn integrated_label(labels: &AspectLabels, scheme: IntegrationScheme, w: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&w) {
        return Err(Error::OutOfRange {
            value: w,
            range: "[0, 1]",
        });
    }
    let required: &[(&'static str, Option<f64>)] = match scheme {
        IntegrationScheme::Y1 => &[("ent", labels.ent), ("nar", labels.nar)],
        IntegrationScheme::Y2 => &[
            ("geo", labels.geo),
            ("ent", labels.ent),
            ("time", labels.time),
            ("nar", labels.nar),
            ("style", labels.style),
            ("tone", labels.tone),
        ],
    };
    let mut sum = 0.0;
    for &(name, v) in required {
        let v = v.ok_or(Error::MissingAspect(name))?;
        if !(1.0..=4.0).contains(&v) {
            return Err(Error::OutOfRange {
                value: v,
                range: "[1, 4]",
            });
        }
        sum += v;
    }
    let mean = sum / required.len() as f64;
    if w == 1.0 {
        return Ok(labels.overall);
    }
    Ok(w * labels.overall + (1.0 - w) * mean)
}

pub const DEFAULT_HEAD: usize = 456;
pub const DEFAULT_TAIL: usize = 56;

/// Keeps the first `head` and last `tail` tokens of long inputs.
pub fn head_tail_select<T: Clone>(tokens: &[T], head: usize, tail: usize) -> Vec<T> {
    if tokens.len() <= head + tail {
        return tokens.to_vec();
    }
    let mut out = Vec::with_capacity(head + tail);
    out.extend_from_slice(&tokens[..head]);
    out.extend_from_slice(&tokens[tokens.len() - tail..]);
    out
}

/// Sample Pearson correlation.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::DimensionMismatch {
            expected: xs.len(),
            found: ys.len(),
        });
    }
    if xs.len() < 2 {
        return Err(Error::Undefined("correlation needs at least two points".into()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Undefined("correlation of a constant sequence".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}
