//! Exact top-k lexical retrieval over an inverted index, and rank binning of
//! the resulting list.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use crate::corpus::{Corpus, SparseVector};
use crate::error::{invalid, Error, Result};
use crate::ranked::{RankedList, Scored, TopK};

pub const INDEX_MAGIC: &[u8; 4] = b"CLSI";
const INDEX_VERSION: u32 = 1;

/// Default retrieval depth.
pub const DEFAULT_DEPTH: usize = 1000;

/// Rank cut points of the sparse result bins: top-10, 11-25, 26-50, 51-100,
/// 101-200, 201-500 and 501-k.
pub const DEFAULT_BIN_BOUNDARIES: [usize; 7] = [10, 25, 50, 100, 200, 500, 1000];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PostingList {
    doc_ids: Vec<u32>,
    weights: Vec<f32>,
}

impl PostingList {
    pub fn len(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_ids.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, f32)> + '_ {
        self.doc_ids
            .iter()
            .copied()
            .zip(self.weights.iter().copied())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InvertedIndex {
    postings: BTreeMap<u32, PostingList>,
    doc_count: usize,
}

impl InvertedIndex {
    pub fn build(corpus: &Corpus) -> Self {
        let mut postings: BTreeMap<u32, PostingList> = BTreeMap::new();
        // documents are visited in id order, so every list comes out sorted
        for doc in corpus.documents() {
            for &(term, weight) in doc.sparse.entries() {
                let list = postings.entry(term).or_default();
                list.doc_ids.push(doc.doc_id);
                list.weights.push(weight);
            }
        }
        Self {
            postings,
            doc_count: corpus.len(),
        }
    }

    pub fn doc_count(&self) -> usize {
        self.doc_count
    }

    pub fn num_terms(&self) -> usize {
        self.postings.len()
    }

    pub fn postings(&self, term: u32) -> Option<&PostingList> {
        self.postings.get(&term)
    }

    pub fn terms(&self) -> impl Iterator<Item = (u32, &PostingList)> + '_ {
        self.postings.iter().map(|(&t, p)| (t, p))
    }

    pub fn num_postings(&self) -> usize {
        self.postings.values().map(PostingList::len).sum()
    }

    /// Exact top-k by lexical dot product. Documents sharing no term with the
    /// query are never returned.
    pub fn search(&self, query: &SparseVector, k: usize) -> RankedList {
        let mut acc = vec![0.0f64; self.doc_count];
        let mut touched: Vec<u32> = Vec::new();
        for &(term, qw) in query.entries() {
            let Some(list) = self.postings.get(&term) else {
                continue;
            };
            let qw = qw as f64;
            for (d, w) in list.iter() {
                let slot = &mut acc[d as usize];
                if *slot == 0.0 {
                    touched.push(d);
                }
                *slot += qw * w as f64;
            }
        }
        let mut top = TopK::new(k);
        for d in touched {
            let s = acc[d as usize];
            if s > 0.0 {
                top.push(d, s);
            }
        }
        top.into_ranked()
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> io::Result<()> {
        w.write_all(INDEX_MAGIC)?;
        w.write_u32::<LE>(INDEX_VERSION)?;
        w.write_u64::<LE>(self.doc_count as u64)?;
        w.write_u32::<LE>(self.postings.len() as u32)?;
        for (&term, list) in &self.postings {
            w.write_u32::<LE>(term)?;
            w.write_u32::<LE>(list.len() as u32)?;
            for (d, wt) in list.iter() {
                w.write_u32::<LE>(d)?;
                w.write_f32::<LE>(wt)?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != INDEX_MAGIC {
            return Err(Error::BadMagic {
                expected: "CLSI".into(),
                found: String::from_utf8_lossy(&magic).into_owned(),
            });
        }
        let version = r.read_u32::<LE>()?;
        if version != INDEX_VERSION {
            return Err(Error::UnsupportedVersion {
                expected: INDEX_VERSION,
                found: version,
            });
        }
        let doc_count = r.read_u64::<LE>()? as usize;
        let num_terms = r.read_u32::<LE>()?;
        let mut postings = BTreeMap::new();
        for _ in 0..num_terms {
            let term = r.read_u32::<LE>()?;
            let len = r.read_u32::<LE>()? as usize;
            let mut list = PostingList {
                doc_ids: Vec::with_capacity(len),
                weights: Vec::with_capacity(len),
            };
            for _ in 0..len {
                let d = r.read_u32::<LE>()?;
                if d as usize >= doc_count || list.doc_ids.last().is_some_and(|&p| p >= d) {
                    return Err(Error::MalformedHeader(format!(
                        "posting list of term {term} is not strictly increasing within 0..{doc_count}"
                    )));
                }
                list.doc_ids.push(d);
                list.weights.push(r.read_f32::<LE>()?);
            }
            postings.insert(term, list);
        }
        Ok(Self {
            postings,
            doc_count,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }
}

pub fn build_index(corpus: &Corpus) -> InvertedIndex {
    InvertedIndex::build(corpus)
}

pub fn sparse_search(index: &InvertedIndex, query: &SparseVector, k: usize) -> Result<RankedList> {
    if k == 0 {
        return Err(invalid("retrieval depth k must be at least 1"));
    }
    Ok(index.search(query, k))
}

/// A ranked list partitioned into consecutive rank bins.
///
/// Bin `j` holds 1-based ranks in `(boundaries[j-1], boundaries[j]]`, with an
/// implicit leading boundary of 0.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseBins {
    boundaries: Vec<usize>,
    bins: Vec<Vec<Scored>>,
}

impl SparseBins {
    pub fn boundaries(&self) -> &[usize] {
        &self.boundaries
    }

    pub fn bins(&self) -> &[Vec<Scored>] {
        &self.bins
    }

    pub fn num_bins(&self) -> usize {
        self.bins.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.bins.iter().map(Vec::len).collect()
    }

    /// Every entry with its bin index, in rank order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, &Scored)> + '_ {
        self.bins
            .iter()
            .enumerate()
            .flat_map(|(j, b)| b.iter().map(move |s| (j, s)))
    }

    /// Capacity of each bin by its rank interval.
    pub fn widths(&self) -> Vec<usize> {
        let mut prev = 0;
        self.boundaries
            .iter()
            .map(|&b| {
                let w = b - prev;
                prev = b;
                w
            })
            .collect()
    }
}

pub fn partition_bins(ranked: &RankedList, boundaries: &[usize]) -> Result<SparseBins> {
    if boundaries.is_empty() {
        return Err(invalid("at least one bin boundary is required"));
    }
    if boundaries[0] == 0 || boundaries.windows(2).any(|w| w[0] >= w[1]) {
        return Err(invalid(format!(
            "bin boundaries must be positive and strictly ascending, got {boundaries:?}"
        )));
    }
    let last = *boundaries.last().unwrap();
    if ranked.len() > last {
        return Err(invalid(format!(
            "ranked list of {} entries exceeds the last bin boundary {last}",
            ranked.len()
        )));
    }
    let mut bins = vec![Vec::new(); boundaries.len()];
    let mut j = 0;
    for (i, e) in ranked.entries().iter().enumerate() {
        let rank = i + 1;
        while rank > boundaries[j] {
            j += 1;
        }
        bins[j].push(*e);
    }
    Ok(SparseBins {
        boundaries: boundaries.to_vec(),
        bins,
    })
}

/// Boundaries adjusted to retrieval depth `k`: the last bin always ends at
/// `k` and inner cut points at or beyond `k` are dropped.
pub fn boundaries_for_depth(boundaries: &[usize], k: usize) -> Vec<usize> {
    let inner = &boundaries[..boundaries.len().saturating_sub(1)];
    let mut out: Vec<usize> = inner.iter().copied().filter(|&b| b < k).collect();
    out.push(k);
    out
}
