//! Documents and queries, plus their relevance judgments.
//!
//! A document carries a sparse lexical vector and a dense embedding of a
//! corpus-wide dimension. Doc ids are the contiguous range `0..D`, which lets
//! every other component index documents with flat arrays.

mod format;
mod qrels;
mod synth;

pub use format::{
    encoded_len, load_corpus, load_corpus_remapped, load_queries, read_corpus, save_corpus,
    save_queries, write_corpus, FORMAT_VERSION, RECORD_MAGIC,
};
pub use qrels::{load_qrels, parse_qrels, save_qrels, Qrels};
pub use synth::{generate_synthetic, generate_synthetic_labeled, SynthConfig, SynthOutput};

use crate::error::{invalid, Error, Result};

/// Weighted term tokens, sorted by term id, weights strictly positive.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseVector {
    entries: Vec<(u32, f32)>,
}

impl SparseVector {
    pub fn new(entries: Vec<(u32, f32)>) -> Result<Self> {
        validate_sparse(&entries, 0)?;
        Ok(Self { entries })
    }

    /// Builds a vector from pairs in any order, summing duplicate terms and
    /// dropping non-positive totals.
    pub fn from_unsorted(mut pairs: Vec<(u32, f32)>) -> Result<Self> {
        pairs.sort_by_key(|p| p.0);
        let mut entries: Vec<(u32, f32)> = Vec::with_capacity(pairs.len());
        for (t, w) in pairs {
            if !w.is_finite() {
                return Err(Error::NonFinite { record: 0 });
            }
            match entries.last_mut() {
                Some(last) if last.0 == t => last.1 += w,
                _ => entries.push((t, w)),
            }
        }
        entries.retain(|e| e.1 > 0.0);
        Ok(Self { entries })
    }

    pub(crate) fn from_validated(entries: Vec<(u32, f32)>) -> Self {
        Self { entries }
    }

    pub fn entries(&self) -> &[(u32, f32)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Lexical score: dot product over shared terms, in ascending term order.
    pub fn dot(&self, other: &SparseVector) -> f64 {
        let (a, b) = (&self.entries, &other.entries);
        let (mut i, mut j, mut s) = (0, 0, 0.0f64);
        while i < a.len() && j < b.len() {
            match a[i].0.cmp(&b[j].0) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    s += a[i].1 as f64 * b[j].1 as f64;
                    i += 1;
                    j += 1;
                }
            }
        }
        s
    }
}

pub(crate) fn validate_sparse(entries: &[(u32, f32)], record: u64) -> Result<()> {
    for (i, &(term, weight)) in entries.iter().enumerate() {
        if i > 0 {
            let prev = entries[i - 1].0;
            if term == prev {
                return Err(Error::DuplicateTerm { record, term });
            }
            if term < prev {
                return Err(Error::NonMonotoneTerms { record, prev, term });
            }
        }
        if !weight.is_finite() {
            return Err(Error::NonFinite { record });
        }
        if weight <= 0.0 {
            return Err(Error::InvalidWeight {
                record,
                term,
                weight,
            });
        }
    }
    Ok(())
}

/// A fixed-dimension embedding with finite components.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseVector(Vec<f32>);

impl DenseVector {
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { record: 0 });
        }
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.0
    }
}

/// An owned document used to assemble a [`Corpus`].
#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub doc_id: u32,
    pub sparse: SparseVector,
    pub dense: DenseVector,
}

/// A borrowed view of one document in a [`Corpus`].
#[derive(Debug, Clone, Copy)]
pub struct DocumentRef<'a> {
    pub doc_id: u32,
    pub sparse: &'a SparseVector,
    pub dense: &'a [f32],
}

/// Document collection with dense vectors stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    dim: usize,
    sparse: Vec<SparseVector>,
    dense: Vec<f32>,
}

impl Corpus {
    pub fn new(dim: usize, docs: Vec<Document>) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("dense dimension must be at least 1"));
        }
        let mut sparse = Vec::with_capacity(docs.len());
        let mut dense = Vec::with_capacity(docs.len() * dim);
        for (i, doc) in docs.into_iter().enumerate() {
            if doc.doc_id as usize != i {
                return Err(Error::NonContiguousId {
                    record: i as u64,
                    expected: i as u64,
                    found: doc.doc_id as u64,
                });
            }
            if doc.dense.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: doc.dense.dim(),
                });
            }
            sparse.push(doc.sparse);
            dense.extend_from_slice(doc.dense.as_slice());
        }
        Ok(Self { dim, sparse, dense })
    }

    pub(crate) fn from_parts(dim: usize, sparse: Vec<SparseVector>, dense: Vec<f32>) -> Self {
        debug_assert_eq!(sparse.len() * dim, dense.len());
        Self { dim, sparse, dense }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.sparse.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sparse.is_empty()
    }

    pub fn sparse(&self, doc_id: u32) -> &SparseVector {
        &self.sparse[doc_id as usize]
    }

    pub fn dense(&self, doc_id: u32) -> &[f32] {
        let start = doc_id as usize * self.dim;
        &self.dense[start..start + self.dim]
    }

    /// All dense vectors, row-major `D × dim`.
    pub fn dense_matrix(&self) -> &[f32] {
        &self.dense
    }

    pub fn documents(&self) -> impl Iterator<Item = DocumentRef<'_>> + '_ {
        self.sparse
            .iter()
            .zip(self.dense.chunks_exact(self.dim))
            .enumerate()
            .map(|(i, (sparse, dense))| DocumentRef {
                doc_id: i as u32,
                sparse,
                dense,
            })
    }

    /// Total stored sparse entries across all documents.
    pub fn sparse_nnz(&self) -> usize {
        self.sparse.iter().map(SparseVector::len).sum()
    }
}

/// A query with both representations.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryRecord {
    pub query_id: u32,
    pub sparse: SparseVector,
    pub dense: DenseVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuerySet {
    dim: usize,
    queries: Vec<QueryRecord>,
}

impl QuerySet {
    pub fn new(dim: usize, queries: Vec<QueryRecord>) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("dense dimension must be at least 1"));
        }
        if let Some(q) = queries.iter().find(|q| q.dense.dim() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: q.dense.dim(),
            });
        }
        Ok(Self { dim, queries })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, QueryRecord> {
        self.queries.iter()
    }

    pub fn queries(&self) -> &[QueryRecord] {
        &self.queries
    }

    /// Splits into the first `n` queries and the rest.
    pub fn split_at(&self, n: usize) -> (QuerySet, QuerySet) {
        let n = n.min(self.queries.len());
        let (a, b) = self.queries.split_at(n);
        (
            QuerySet {
                dim: self.dim,
                queries: a.to_vec(),
            },
            QuerySet {
                dim: self.dim,
                queries: b.to_vec(),
            },
        )
    }
}

impl<'a> IntoIterator for &'a QuerySet {
    type Item = &'a QueryRecord;
    type IntoIter = std::slice::Iter<'a, QueryRecord>;
    fn into_iter(self) -> Self::IntoIter {
        self.queries.iter()
    }
}
