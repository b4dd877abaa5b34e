//! Cluster-aligned on-disk embedding store with I/O accounting.
//!
//! Layout (little-endian): magic `CLSS`, version `u32`, cluster count `u32`,
//! dim `u32`, document count `u64`, then one directory entry per cluster
//! (absolute byte offset `u64`, byte length `u64`, document count `u32`),
//! then the data region. Each record is a `u64` doc id followed by `dim`
//! `f32` values, written cluster by cluster in ascending cluster id.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use byteorder::{ByteOrder, LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::cluster::ClusterModel;
use crate::corpus::Corpus;
use crate::error::{invalid, Error, Result};

pub const STORE_MAGIC: &[u8; 4] = b"CLSS";
pub const STORE_VERSION: u32 = 1;
/// Seconds charged per read operation by the simulated cost model.
pub const DEFAULT_PER_OP_OVERHEAD: f64 = 0.15e-3;

const HEADER_LEN: u64 = 4 + 4 + 4 + 4 + 8;
const DIR_ENTRY_LEN: u64 = 8 + 8 + 4;

pub fn record_size(dim: usize) -> u64 {
    8 + 4 * dim as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Extent {
    pub offset: u64,
    pub length: u64,
    pub count: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct IoStats {
    pub read_ops: u64,
    pub bytes_read: u64,
    /// Always `read_ops × per_op_overhead`, in seconds.
    pub simulated_overhead: f64,
    pub wall_time: f64,
    pub per_op_overhead: f64,
}

impl IoStats {
    pub fn new(per_op_overhead: f64) -> Self {
        Self {
            per_op_overhead,
            ..Self::default()
        }
    }

    fn record(&mut self, ops: u64, bytes: u64, wall: f64) {
        self.read_ops += ops;
        self.bytes_read += bytes;
        self.wall_time += wall;
        self.simulated_overhead = self.read_ops as f64 * self.per_op_overhead;
    }

    /// Counters accumulated since `earlier` was captured.
    pub fn since(&self, earlier: &IoStats) -> IoStats {
        let read_ops = self.read_ops - earlier.read_ops;
        IoStats {
            read_ops,
            bytes_read: self.bytes_read - earlier.bytes_read,
            simulated_overhead: read_ops as f64 * self.per_op_overhead,
            wall_time: self.wall_time - earlier.wall_time,
            per_op_overhead: self.per_op_overhead,
        }
    }

    pub fn merge(&mut self, other: &IoStats) {
        self.record(other.read_ops, other.bytes_read, other.wall_time);
    }
}

/// Embeddings of one fetched cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterBlock {
    pub cluster_id: u32,
    pub doc_ids: Vec<u32>,
    /// Row-major `doc_ids.len() × dim`.
    pub vectors: Vec<f32>,
}

impl ClusterBlock {
    pub fn rows(&self) -> impl Iterator<Item = (u32, &[f32])> + '_ {
        let dim = if self.doc_ids.is_empty() {
            1
        } else {
            self.vectors.len() / self.doc_ids.len()
        };
        self.doc_ids
            .iter()
            .copied()
            .zip(self.vectors.chunks_exact(dim.max(1)))
    }
}

pub fn write_store(corpus: &Corpus, model: &ClusterModel, path: &Path) -> Result<()> {
    model.check_compatible(corpus)?;
    let n = model.num_clusters();
    let dim = corpus.dim();
    let rs = record_size(dim);
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(STORE_MAGIC)?;
    w.write_u32::<LittleEndian>(STORE_VERSION)?;
    w.write_u32::<LittleEndian>(n as u32)?;
    w.write_u32::<LittleEndian>(dim as u32)?;
    w.write_u64::<LittleEndian>(corpus.len() as u64)?;
    let mut offset = HEADER_LEN + DIR_ENTRY_LEN * n as u64;
    for c in 0..n as u32 {
        let count = model.members(c).len() as u64;
        w.write_u64::<LittleEndian>(offset)?;
        w.write_u64::<LittleEndian>(count * rs)?;
        w.write_u32::<LittleEndian>(count as u32)?;
        offset += count * rs;
    }
    for c in 0..n as u32 {
        for &d in model.members(c) {
            w.write_u64::<LittleEndian>(d as u64)?;
            for &x in corpus.dense(d) {
                w.write_f32::<LittleEndian>(x)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug)]
pub struct DiskStore {
    path: PathBuf,
    file: File,
    dim: usize,
    num_docs: u64,
    directory: Vec<Extent>,
    /// Record index (position in the data region) of every doc id.
    position: Vec<u64>,
    data_start: u64,
    coalesce: bool,
    stats: IoStats,
}

impl DiskStore {
    /// Opens a store and indexes record positions with one untimed scan.
    pub fn open(path: &Path) -> Result<Self> {
        let mut file = File::open(path)?;
        let mut header = [0u8; HEADER_LEN as usize];
        file.read_exact(&mut header)
            .map_err(|_| Error::Truncated { record: 0 })?;
        if &header[..4] != STORE_MAGIC {
            return Err(Error::BadMagic {
                expected: String::from_utf8_lossy(STORE_MAGIC).into_owned(),
                found: String::from_utf8_lossy(&header[..4]).into_owned(),
            });
        }
        let version = LittleEndian::read_u32(&header[4..8]);
        if version != STORE_VERSION {
            return Err(Error::UnsupportedVersion {
                expected: STORE_VERSION,
                found: version,
            });
        }
        let n = LittleEndian::read_u32(&header[8..12]) as usize;
        let dim = LittleEndian::read_u32(&header[12..16]) as usize;
        let num_docs = LittleEndian::read_u64(&header[16..24]);
        let rs = record_size(dim);
        let data_start = HEADER_LEN + DIR_ENTRY_LEN * n as u64;
        let mut directory = Vec::with_capacity(n);
        let mut expected = data_start;
        for c in 0..n {
            let e = Extent {
                offset: file.read_u64::<LittleEndian>()?,
                length: file.read_u64::<LittleEndian>()?,
                count: file.read_u32::<LittleEndian>()?,
            };
            if e.offset != expected || e.length != e.count as u64 * rs {
                return Err(Error::MalformedHeader(format!(
                    "cluster {c} extent {e:?} is not contiguous"
                )));
            }
            expected += e.length;
            directory.push(e);
        }
        if expected != data_start + num_docs * rs {
            return Err(Error::MalformedHeader(
                "extents do not cover the data region".into(),
            ));
        }
        let file_len = file.metadata()?.len();
        if file_len != expected {
            return Err(Error::MalformedHeader(format!(
                "file is {file_len} bytes, expected {expected}"
            )));
        }
        let mut data = Vec::new();
        file.read_to_end(&mut data)?;
        let mut position = vec![u64::MAX; num_docs as usize];
        for (i, rec) in data.chunks_exact(rs as usize).enumerate() {
            let id = LittleEndian::read_u64(&rec[..8]);
            let slot = position
                .get_mut(id as usize)
                .ok_or_else(|| Error::MalformedHeader(format!("doc id {id} out of range")))?;
            if *slot != u64::MAX {
                return Err(Error::MalformedHeader(format!("doc id {id} stored twice")));
            }
            *slot = i as u64;
        }
        Ok(Self {
            path: path.to_path_buf(),
            file,
            dim,
            num_docs,
            directory,
            position,
            data_start,
            coalesce: true,
            stats: IoStats::new(DEFAULT_PER_OP_OVERHEAD),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_docs(&self) -> u64 {
        self.num_docs
    }

    pub fn num_clusters(&self) -> usize {
        self.directory.len()
    }

    pub fn directory(&self) -> &[Extent] {
        &self.directory
    }

    pub fn set_per_op_overhead(&mut self, seconds: f64) {
        self.stats.per_op_overhead = seconds;
        self.stats.simulated_overhead = self.stats.read_ops as f64 * seconds;
    }

    /// Whether adjacent per-document reads are merged into one operation.
    pub fn set_coalescing(&mut self, on: bool) {
        self.coalesce = on;
    }

    pub fn stats(&self) -> &IoStats {
        &self.stats
    }

    pub fn reset_stats(&mut self) {
        self.stats = IoStats::new(self.stats.per_op_overhead);
    }

    fn read_span(&self, offset: u64, len: u64) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; len as usize];
        self.file.read_exact_at(&mut buf, offset)?;
        Ok(buf)
    }

    fn decode(&self, bytes: &[u8], ids: &mut Vec<u32>, vectors: &mut Vec<f32>) {
        for rec in bytes.chunks_exact(record_size(self.dim) as usize) {
            ids.push(LittleEndian::read_u64(&rec[..8]) as u32);
            let start = vectors.len();
            vectors.resize(start + self.dim, 0.0);
            LittleEndian::read_f32_into(&rec[8..], &mut vectors[start..]);
        }
    }

    /// Reads whole clusters; runs of consecutive cluster ids share one read.
    /// Blocks come back in the requested order.
    pub fn fetch_clusters(&mut self, cluster_ids: &[u32]) -> Result<(Vec<ClusterBlock>, IoStats)> {
        let before = self.stats;
        let start = Instant::now();
        for &c in cluster_ids {
            if c as usize >= self.directory.len() {
                return Err(Error::UnknownId {
                    kind: "cluster",
                    id: c as u64,
                });
            }
        }
        let mut sorted: Vec<u32> = cluster_ids.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        let mut blocks: Vec<ClusterBlock> = Vec::with_capacity(sorted.len());
        let (mut ops, mut bytes) = (0u64, 0u64);
        let mut i = 0;
        while i < sorted.len() {
            let mut j = i + 1;
            while j < sorted.len() && sorted[j] == sorted[j - 1] + 1 {
                j += 1;
            }
            let first = self.directory[sorted[i] as usize];
            let last = self.directory[sorted[j - 1] as usize];
            let len = last.offset + last.length - first.offset;
            let buf = self.read_span(first.offset, len)?;
            ops += 1;
            bytes += len;
            for &c in &sorted[i..j] {
                let e = self.directory[c as usize];
                let lo = (e.offset - first.offset) as usize;
                let mut block = ClusterBlock {
                    cluster_id: c,
                    doc_ids: Vec::with_capacity(e.count as usize),
                    vectors: Vec::with_capacity(e.count as usize * self.dim),
                };
                self.decode(
                    &buf[lo..lo + e.length as usize],
                    &mut block.doc_ids,
                    &mut block.vectors,
                );
                blocks.push(block);
            }
            i = j;
        }
        let ordered = cluster_ids
            .iter()
            .map(|c| blocks[sorted.binary_search(c).expect("fetched")].clone())
            .collect();
        self.stats.record(ops, bytes, start.elapsed().as_secs_f64());
        Ok((ordered, self.stats.since(&before)))
    }

    /// Reads individual documents. With coalescing on, requests are served in
    /// storage order and runs of adjacent records inside one cluster extent
    /// count as one operation; otherwise every document costs one operation.
    /// Returns ids and row-major vectors in the requested order.
    pub fn fetch_documents(&mut self, doc_ids: &[u32]) -> Result<(Vec<u32>, Vec<f32>, IoStats)> {
        let before = self.stats;
        let start = Instant::now();
        let rs = record_size(self.dim);
        let mut req: Vec<(u64, usize)> = Vec::with_capacity(doc_ids.len());
        for (i, &d) in doc_ids.iter().enumerate() {
            let pos = *self.position.get(d as usize).ok_or(Error::UnknownId {
                kind: "document",
                id: d as u64,
            })?;
            req.push((pos, i));
        }
        if self.coalesce {
            req.sort_unstable();
        }
        let mut vectors = vec![0f32; doc_ids.len() * self.dim];
        let (mut ops, mut bytes) = (0u64, 0u64);
        let mut i = 0;
        while i < req.len() {
            let mut j = i + 1;
            if self.coalesce {
                while j < req.len()
                    && req[j].0 == req[j - 1].0 + 1
                    && self.cluster_at(req[j].0) == self.cluster_at(req[i].0)
                {
                    j += 1;
                }
            }
            let len = (req[j - 1].0 - req[i].0 + 1) * rs;
            let buf = self.read_span(self.data_start + req[i].0 * rs, len)?;
            ops += 1;
            bytes += len;
            for &(pos, slot) in &req[i..j] {
                let lo = ((pos - req[i].0) * rs) as usize;
                LittleEndian::read_f32_into(
                    &buf[lo + 8..lo + rs as usize],
                    &mut vectors[slot * self.dim..(slot + 1) * self.dim],
                );
            }
            i = j;
        }
        self.stats.record(ops, bytes, start.elapsed().as_secs_f64());
        Ok((doc_ids.to_vec(), vectors, self.stats.since(&before)))
    }

    fn cluster_at(&self, record: u64) -> usize {
        let off = self.data_start + record * record_size(self.dim);
        self.directory
            .partition_point(|e| e.offset + e.length <= off)
    }

    /// Every record in storage order, bypassing the statistics.
    pub fn read_all(&self) -> Result<(Vec<u32>, Vec<f32>)> {
        let rs = record_size(self.dim);
        let buf = self.read_span(self.data_start, self.num_docs * rs)?;
        let (mut ids, mut vecs) = (Vec::new(), Vec::new());
        self.decode(&buf, &mut ids, &mut vecs);
        Ok((ids, vecs))
    }

    pub fn check_compatible(&self, model: &ClusterModel) -> Result<()> {
        if self.directory.len() != model.num_clusters() || self.num_docs != model.num_docs() as u64
        {
            return Err(Error::Incompatible(format!(
                "store has {} clusters / {} docs, model has {} / {}",
                self.directory.len(),
                self.num_docs,
                model.num_clusters(),
                model.num_docs()
            )));
        }
        if self.dim != model.dim() {
            return Err(Error::DimensionMismatch {
                expected: model.dim(),
                found: self.dim,
            });
        }
        if let Some(c) = (0..model.num_clusters())
            .find(|&c| self.directory[c].count as usize != model.members(c as u32).len())
        {
            return Err(invalid(format!(
                "cluster {c} size differs between store and model"
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::kmeans_fit;
    use crate::corpus::{generate_synthetic, SynthConfig};

    fn fixture(n: usize) -> (Corpus, ClusterModel, tempfile::TempDir, PathBuf) {
        let (corpus, _, _) = generate_synthetic(&SynthConfig {
            num_docs: 400,
            num_queries: 1,
            dim: 8,
            vocab_size: 50,
            num_topics: 4,
            sparse_terms_per_doc: 4,
            ..SynthConfig::default()
        })
        .unwrap();
        let model = kmeans_fit(&corpus, n, 10, 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.clss");
        write_store(&corpus, &model, &path).unwrap();
        (corpus, model, dir, path)
    }

    #[test]
    fn single_cluster_covers_everything() {
        let (corpus, _, _dir, path) = fixture(1);
        let store = DiskStore::open(&path).unwrap();
        assert_eq!(store.directory().len(), 1);
        assert_eq!(
            store.directory()[0].length,
            corpus.len() as u64 * record_size(8)
        );
    }

    #[test]
    fn extents_sum_to_data_size_and_round_trip() {
        let (corpus, model, _dir, path) = fixture(12);
        let store = DiskStore::open(&path).unwrap();
        let total: u64 = store.directory().iter().map(|e| e.length).sum();
        assert_eq!(total, 400 * (8 + 32));
        assert_eq!(
            std::fs::metadata(&path).unwrap().len(),
            HEADER_LEN + 12 * DIR_ENTRY_LEN + total
        );
        let (ids, vecs) = store.read_all().unwrap();
        for (i, &d) in ids.iter().enumerate() {
            assert_eq!(&vecs[i * 8..(i + 1) * 8], corpus.dense(d));
        }
        store.check_compatible(&model).unwrap();
    }

    #[test]
    fn cluster_fetch_counts_one_op_per_run() {
        let (corpus, model, _dir, path) = fixture(12);
        let mut store = DiskStore::open(&path).unwrap();
        let (_, s) = store.fetch_clusters(&[]).unwrap();
        assert_eq!(s.read_ops, 0);
        let (blocks, s) = store.fetch_clusters(&[9, 1, 3, 5, 7]).unwrap();
        assert_eq!(s.read_ops, 5);
        let docs: usize = blocks.iter().map(|b| b.doc_ids.len()).sum();
        let expected: usize = [9u32, 1, 3, 5, 7]
            .iter()
            .map(|&c| model.members(c).len())
            .sum();
        assert_eq!(docs, expected);
        assert_eq!(blocks[0].cluster_id, 9);
        for b in &blocks {
            assert_eq!(b.doc_ids, model.members(b.cluster_id));
            for (d, v) in b.rows() {
                assert_eq!(v, corpus.dense(d));
            }
        }
        let (_, s) = store.fetch_clusters(&[2, 3, 4]).unwrap();
        assert_eq!(s.read_ops, 1);
        assert!(store.fetch_clusters(&[12]).is_err());
        assert_eq!(store.stats().read_ops, 6);
        assert_eq!(
            store.stats().simulated_overhead,
            6.0 * DEFAULT_PER_OP_OVERHEAD
        );
    }

    #[test]
    fn document_fetch_with_and_without_coalescing() {
        let (corpus, model, _dir, path) = fixture(2);
        let mut store = DiskStore::open(&path).unwrap();
        let members: Vec<u32> = model.members(0).iter().copied().take(100).collect();
        assert!(members.len() >= 50);
        let (ids, vecs, s) = store.fetch_documents(&members).unwrap();
        assert_eq!(s.read_ops, 1);
        assert_eq!(ids, members);
        for (i, &d) in ids.iter().enumerate() {
            assert_eq!(&vecs[i * 8..(i + 1) * 8], corpus.dense(d));
        }
        store.set_coalescing(false);
        let (_, _, s) = store.fetch_documents(&members).unwrap();
        assert_eq!(s.read_ops, members.len() as u64);
        let (_, _, s) = store.fetch_documents(&members[..1]).unwrap();
        assert_eq!(s.read_ops, 1);
        assert!(store.fetch_documents(&[400]).is_err());
    }

    #[test]
    fn coalescing_stops_at_cluster_boundaries() {
        let (_, model, _dir, path) = fixture(2);
        let mut store = DiskStore::open(&path).unwrap();
        let a = *model.members(0).last().unwrap();
        let b = model.members(1)[0];
        let (_, _, s) = store.fetch_documents(&[a, b]).unwrap();
        assert_eq!(s.read_ops, 2);
    }

    #[test]
    fn corrupt_header_is_rejected() {
        let (_, _, dir, path) = fixture(3);
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'Z';
        let bad = dir.path().join("bad");
        std::fs::write(&bad, &bytes).unwrap();
        assert!(matches!(DiskStore::open(&bad), Err(Error::BadMagic { .. })));
        let short = dir.path().join("short");
        let full = std::fs::read(&path).unwrap();
        std::fs::write(&short, &full[..full.len() - 4]).unwrap();
        assert!(DiskStore::open(&short).is_err());
    }
}
