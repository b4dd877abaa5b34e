//! Plain product quantization with asymmetric distance scoring.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::cluster::{lloyd, DEFAULT_MAX_ITERS};
use crate::corpus::Corpus;
use crate::error::{invalid, Error, Result};
use crate::ranked::{RankedList, TopK};
use crate::vecmath::dot;

pub const CENTROIDS_PER_SUBSPACE: usize = 256;
pub const PQ_MAGIC: &[u8; 4] = b"CLSP";
pub const PQ_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct PqCodebook {
    dim: usize,
    num_subspaces: usize,
    /// `num_subspaces × 256 × sub_dim`, row-major.
    codebooks: Vec<f32>,
    /// `D × num_subspaces` code bytes.
    codes: Vec<u8>,
}

impl PqCodebook {
    pub fn num_subspaces(&self) -> usize {
        self.num_subspaces
    }

    pub fn sub_dim(&self) -> usize {
        self.dim / self.num_subspaces
    }

    pub fn num_docs(&self) -> usize {
        self.codes.len() / self.num_subspaces
    }

    pub fn codes(&self, doc_id: u32) -> &[u8] {
        let m = self.num_subspaces;
        &self.codes[doc_id as usize * m..(doc_id as usize + 1) * m]
    }

    fn centroid(&self, subspace: usize, code: u8) -> &[f32] {
        let sd = self.sub_dim();
        let start = (subspace * CENTROIDS_PER_SUBSPACE + code as usize) * sd;
        &self.codebooks[start..start + sd]
    }

    pub fn reconstruct(&self, doc_id: u32) -> Vec<f32> {
        self.codes(doc_id)
            .iter()
            .enumerate()
            .flat_map(|(s, &c)| self.centroid(s, c).iter().copied())
            .collect()
    }

    /// Mean squared reconstruction error per vector (summed over dimensions).
    pub fn reconstruction_mse(&self, corpus: &Corpus) -> f64 {
        if corpus.is_empty() {
            return 0.0;
        }
        let total: f64 = corpus
            .documents()
            .map(|d| {
                self.reconstruct(d.doc_id)
                    .iter()
                    .zip(d.dense)
                    .map(|(a, b)| {
                        let e = *a as f64 - *b as f64;
                        e * e
                    })
                    .sum::<f64>()
            })
            .sum();
        total / corpus.len() as f64
    }

    /// Per-subspace lookup table of query/centroid dot products.
    pub fn lookup_table(&self, query: &[f32]) -> Vec<f64> {
        let sd = self.sub_dim();
        let mut lut = Vec::with_capacity(self.num_subspaces * CENTROIDS_PER_SUBSPACE);
        for s in 0..self.num_subspaces {
            let q = &query[s * sd..(s + 1) * sd];
            for c in 0..CENTROIDS_PER_SUBSPACE {
                lut.push(dot(q, self.centroid(s, c as u8)));
            }
        }
        lut
    }

    /// Top-k over all documents by approximate scores.
    pub fn search(&self, query: &[f32], k: usize) -> RankedList {
        let lut = self.lookup_table(query);
        let mut top = TopK::new(k);
        for d in 0..self.num_docs() as u32 {
            let s: f64 = self
                .codes(d)
                .iter()
                .enumerate()
                .map(|(s, &c)| lut[s * CENTROIDS_PER_SUBSPACE + c as usize])
                .sum();
            top.push(d, s);
        }
        top.into_ranked()
    }
}

impl PqCodebook {
    /// Magic, version, dim `u32`, subspaces `u32`, doc count `u64`, then the
    /// codebooks as `f32` and one code byte per (document, subspace).
    pub fn write_to<W: Write>(&self, w: &mut W) -> io::Result<()> {
        w.write_all(PQ_MAGIC)?;
        w.write_u32::<LittleEndian>(PQ_VERSION)?;
        w.write_u32::<LittleEndian>(self.dim as u32)?;
        w.write_u32::<LittleEndian>(self.num_subspaces as u32)?;
        w.write_u64::<LittleEndian>(self.num_docs() as u64)?;
        for &x in &self.codebooks {
            w.write_f32::<LittleEndian>(x)?;
        }
        w.write_all(&self.codes)
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|_| Error::Truncated { record: 0 })?;
        if &magic != PQ_MAGIC {
            return Err(Error::BadMagic {
                expected: String::from_utf8_lossy(PQ_MAGIC).into_owned(),
                found: String::from_utf8_lossy(&magic).into_owned(),
            });
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != PQ_VERSION {
            return Err(Error::UnsupportedVersion {
                expected: PQ_VERSION,
                found: version,
            });
        }
        let dim = r.read_u32::<LittleEndian>()? as usize;
        let num_subspaces = r.read_u32::<LittleEndian>()? as usize;
        let docs = r.read_u64::<LittleEndian>()? as usize;
        if num_subspaces == 0 || dim % num_subspaces != 0 {
            return Err(Error::MalformedHeader(format!(
                "{dim} dims cannot split into {num_subspaces} subspaces"
            )));
        }
        let mut codebooks =
            vec![0f32; num_subspaces * CENTROIDS_PER_SUBSPACE * (dim / num_subspaces)];
        r.read_f32_into::<LittleEndian>(&mut codebooks)
            .map_err(|_| Error::Truncated { record: 0 })?;
        let mut codes = vec![0u8; docs * num_subspaces];
        r.read_exact(&mut codes)
            .map_err(|_| Error::Truncated { record: 0 })?;
        Ok(Self {
            dim,
            num_subspaces,
            codebooks,
            codes,
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

/// Trains one 256-centroid codebook per subspace and encodes the corpus.
/// With fewer than 256 documents only the first `D` codewords are used.
pub fn pq_train(corpus: &Corpus, num_subspaces: usize, seed: u64) -> Result<PqCodebook> {
    let dim = corpus.dim();
    if num_subspaces == 0 || dim % num_subspaces != 0 {
        return Err(invalid(format!(
            "dimension {dim} is not divisible into {num_subspaces} subspaces"
        )));
    }
    if corpus.is_empty() {
        return Err(invalid("cannot train a codebook on an empty corpus"));
    }
    let sd = dim / num_subspaces;
    let n = corpus.len();
    let k = CENTROIDS_PER_SUBSPACE.min(n);
    let mut codebooks = vec![0f32; num_subspaces * CENTROIDS_PER_SUBSPACE * sd];
    let mut codes = vec![0u8; n * num_subspaces];
    let mut sub = vec![0f32; n * sd];
    for s in 0..num_subspaces {
        for (d, row) in corpus.dense_matrix().chunks_exact(dim).enumerate() {
            sub[d * sd..(d + 1) * sd].copy_from_slice(&row[s * sd..(s + 1) * sd]);
        }
        let fit = lloyd(&sub, sd, k, DEFAULT_MAX_ITERS, seed.wrapping_add(s as u64))?;
        let base = s * CENTROIDS_PER_SUBSPACE * sd;
        for (dst, &x) in codebooks[base..base + k * sd]
            .iter_mut()
            .zip(&fit.centroids)
        {
            *dst = x as f32;
        }
        for (d, &c) in fit.assignment.iter().enumerate() {
            codes[d * num_subspaces + s] = c as u8;
        }
    }
    Ok(PqCodebook {
        dim,
        num_subspaces,
        codebooks,
        codes,
    })
}

/// Asymmetric score of a query against one encoded document.
pub fn pq_score(codebook: &PqCodebook, query: &[f32], doc_id: u32) -> f64 {
    let sd = codebook.sub_dim();
    codebook
        .codes(doc_id)
        .iter()
        .enumerate()
        .map(|(s, &c)| dot(&query[s * sd..(s + 1) * sd], codebook.centroid(s, c)))
        .sum()
}
