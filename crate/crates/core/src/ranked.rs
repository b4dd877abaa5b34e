//! Scored result lists and a bounded top-k collector.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

/// A document with a retrieval score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scored {
    pub doc_id: u32,
    pub score: f64,
}

impl Scored {
    pub fn new(doc_id: u32, score: f64) -> Self {
        Self { doc_id, score }
    }
}

/// Result ordering: score descending, then doc id ascending.
/// `Less` means `a` ranks ahead of `b`.
#[inline]
pub fn rank_order(a: &Scored, b: &Scored) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.doc_id.cmp(&b.doc_id))
}

/// A descending list of scored documents with unique doc ids.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    entries: Vec<Scored>,
}

impl RankedList {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Sorts `entries` under the result ordering and keeps the best `k`.
    ///
    /// Callers must not pass duplicate doc ids.
    pub fn from_unsorted(mut entries: Vec<Scored>, k: usize) -> Self {
        entries.sort_by(rank_order);
        entries.truncate(k);
        debug_assert!(has_unique_ids(&entries));
        Self { entries }
    }

    pub fn entries(&self) -> &[Scored] {
        &self.entries
    }

    pub fn into_entries(self) -> Vec<Scored> {
        self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn doc_ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.entries.iter().map(|e| e.doc_id)
    }

    pub fn scores(&self) -> impl Iterator<Item = f64> + '_ {
        self.entries.iter().map(|e| e.score)
    }

    /// Replaces every score while keeping the order; used by normalization.
    pub(crate) fn map_scores(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .map(|e| Scored::new(e.doc_id, f(e.score)))
                .collect(),
        }
    }

    /// True when entries are strictly ordered and doc ids unique.
    pub fn is_well_formed(&self) -> bool {
        self.entries
            .windows(2)
            .all(|w| rank_order(&w[0], &w[1]) == Ordering::Less)
            && has_unique_ids(&self.entries)
    }
}

fn has_unique_ids(entries: &[Scored]) -> bool {
    let mut ids: Vec<u32> = entries.iter().map(|e| e.doc_id).collect();
    ids.sort_unstable();
    ids.windows(2).all(|w| w[0] != w[1])
}

#[derive(Debug, Clone, Copy)]
struct Worst(Scored);

impl PartialEq for Worst {
    fn eq(&self, other: &Self) -> bool {
        rank_order(&self.0, &other.0) == Ordering::Equal
    }
}
impl Eq for Worst {}
impl PartialOrd for Worst {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Worst {
    // the heap top is the entry that ranks last
    fn cmp(&self, other: &Self) -> Ordering {
        rank_order(&self.0, &other.0)
    }
}

/// Fixed-capacity collector of the best `k` scored documents.
#[derive(Debug)]
pub struct TopK {
    k: usize,
    heap: BinaryHeap<Worst>,
}

impl TopK {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            heap: BinaryHeap::with_capacity(k.min(1 << 16) + 1),
        }
    }

    #[inline]
    pub fn push(&mut self, doc_id: u32, score: f64) {
        if self.k == 0 {
            return;
        }
        let cand = Scored::new(doc_id, score);
        if self.heap.len() < self.k {
            self.heap.push(Worst(cand));
        } else if let Some(top) = self.heap.peek() {
            if rank_order(&cand, &top.0) == Ordering::Less {
                self.heap.pop();
                self.heap.push(Worst(cand));
            }
        }
    }

    pub fn into_ranked(self) -> RankedList {
        let entries = self
            .heap
            .into_sorted_vec()
            .into_iter()
            .map(|w| w.0)
            .collect();
        RankedList { entries }
    }
}
