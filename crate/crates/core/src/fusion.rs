//! Score fusion by linear interpolation of min-max normalized scores.

use std::collections::HashMap;

use crate::error::{invalid, Result};
use crate::ranked::{RankedList, Scored, TopK};

pub const DEFAULT_ALPHA: f64 = 0.5;
pub const DEFAULT_IMPUTE_FACTOR: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionConfig {
    /// Weight of the sparse score.
    pub alpha: f64,
    pub impute_factor: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            impute_factor: DEFAULT_IMPUTE_FACTOR,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(invalid(format!(
                "alpha = {} must lie in [0, 1]",
                self.alpha
            )));
        }
        if !self.impute_factor.is_finite() || self.impute_factor < 0.0 {
            return Err(invalid(format!(
                "impute_factor = {} must be finite and non-negative",
                self.impute_factor
            )));
        }
        Ok(())
    }
}

/// Affine map taking `[min, max]` onto `[0, 1]`; constant ranges map to 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinMax {
    pub min: f64,
    pub max: f64,
}

impl MinMax {
    pub fn of(scores: impl IntoIterator<Item = f64>) -> Option<Self> {
        scores.into_iter().fold(None, |acc, s| match acc {
            None => Some(Self { min: s, max: s }),
            Some(m) => Some(Self {
                min: m.min.min(s),
                max: m.max.max(s),
            }),
        })
    }

    pub fn apply(&self, s: f64) -> f64 {
        let span = self.max - self.min;
        if span > 0.0 {
            (s - self.min) / span
        } else {
            1.0
        }
    }
}

pub fn minmax_normalize(ranked: &RankedList) -> RankedList {
    match MinMax::of(ranked.scores()) {
        None => RankedList::empty(),
        Some(mm) => ranked.map_scores(|s| mm.apply(s).clamp(0.0, 1.0)),
    }
}

/// Raw score assigned to a document the system did not retrieve.
///
/// Equals `factor × min` for a non-negative minimum; for a negative minimum
/// the floor is pushed further down by the same relative margin so it stays
/// below every retrieved score.
pub fn impute_floor(min: f64, factor: f64) -> f64 {
    min - (1.0 - factor) * min.abs()
}

/// Fuses sparse results with dense scores of the candidates the dense side
/// actually scored. Returns the top `k` of the union.
pub fn fuse(
    sparse: &RankedList,
    dense_candidates: &[Scored],
    config: &FusionConfig,
    k: usize,
) -> Result<RankedList> {
    config.validate()?;
    let sparse_mm = MinMax::of(sparse.scores());
    let dense_mm = MinMax::of(dense_candidates.iter().map(|e| e.score));
    let sparse_floor = sparse_mm.map(|m| impute_floor(m.min, config.impute_factor));
    let dense_floor = dense_mm.map(|m| impute_floor(m.min, config.impute_factor));

    let norm = |mm: Option<MinMax>, floor: Option<f64>, raw: Option<f64>| -> f64 {
        match (mm, raw, floor) {
            (Some(mm), Some(s), _) => mm.apply(s),
            // a constant range maps retrieved scores to 1; the floor sits below it
            (Some(mm), None, Some(f)) if mm.max > mm.min => mm.apply(f),
            _ => 0.0,
        }
    };

    let dense_map: HashMap<u32, f64> = dense_candidates
        .iter()
        .map(|e| (e.doc_id, e.score))
        .collect();
    let mut sparse_map: HashMap<u32, f64> = HashMap::with_capacity(sparse.len());
    let mut top = TopK::new(k);
    for e in sparse.entries() {
        sparse_map.insert(e.doc_id, e.score);
        let s = norm(sparse_mm, sparse_floor, Some(e.score));
        let d = norm(dense_mm, dense_floor, dense_map.get(&e.doc_id).copied());
        top.push(e.doc_id, config.alpha * s + (1.0 - config.alpha) * d);
    }
    for e in dense_candidates {
        if sparse_map.contains_key(&e.doc_id) {
            continue;
        }
        let s = norm(sparse_mm, sparse_floor, None);
        let d = norm(dense_mm, dense_floor, Some(e.score));
        top.push(e.doc_id, config.alpha * s + (1.0 - config.alpha) * d);
    }
    Ok(top.into_ranked())
}
