//! Binary corpus/query files.
//!
//! Little-endian layout:
//!
//! ```text
//! magic "CLSD" | version u32 | count u64 | dim u32
//! per record: id u64 | nnz u32 | (term u32, weight f32) * nnz | f32 * dim
//! ```
//!
//! Weights are rounded to three decimals on write so that saving the same
//! corpus always yields the same bytes.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use super::{validate_sparse, Corpus, DenseVector, QueryRecord, QuerySet, SparseVector};
use crate::error::{Error, Result};

pub const RECORD_MAGIC: &[u8; 4] = b"CLSD";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: u64 = 4 + 4 + 8 + 4;

pub(crate) fn quantize_weight(w: f32) -> f32 {
    ((w as f64 * 1000.0).round() / 1000.0) as f32
}

/// Byte size of the encoded corpus file.
pub fn encoded_len(corpus: &Corpus) -> u64 {
    let per_doc_fixed = 8 + 4 + 4 * corpus.dim() as u64;
    HEADER_LEN
        + corpus
            .documents()
            .map(|d| {
                let nnz = d
                    .sparse
                    .entries()
                    .iter()
                    .filter(|e| quantize_weight(e.1) > 0.0)
                    .count() as u64;
                per_doc_fixed + 8 * nnz
            })
            .sum::<u64>()
}

fn write_header<W: Write>(w: &mut W, count: u64, dim: usize) -> io::Result<()> {
    w.write_all(RECORD_MAGIC)?;
    w.write_u32::<LE>(FORMAT_VERSION)?;
    w.write_u64::<LE>(count)?;
    w.write_u32::<LE>(dim as u32)
}

fn write_record<W: Write>(
    w: &mut W,
    id: u64,
    sparse: &SparseVector,
    dense: &[f32],
) -> io::Result<()> {
    w.write_u64::<LE>(id)?;
    let kept: Vec<(u32, f32)> = sparse
        .entries()
        .iter()
        .map(|&(t, wt)| (t, quantize_weight(wt)))
        .filter(|e| e.1 > 0.0)
        .collect();
    w.write_u32::<LE>(kept.len() as u32)?;
    for (t, wt) in kept {
        w.write_u32::<LE>(t)?;
        w.write_f32::<LE>(wt)?;
    }
    for &v in dense {
        w.write_f32::<LE>(v)?;
    }
    Ok(())
}

pub fn write_corpus<W: Write>(w: &mut W, corpus: &Corpus) -> Result<()> {
    write_header(w, corpus.len() as u64, corpus.dim())?;
    for d in corpus.documents() {
        write_record(w, d.doc_id as u64, d.sparse, d.dense)?;
    }
    Ok(())
}

pub fn save_corpus(corpus: &Corpus, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_corpus(&mut w, corpus)?;
    w.flush()?;
    Ok(())
}

pub fn save_queries(queries: &QuerySet, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_header(&mut w, queries.len() as u64, queries.dim())?;
    for q in queries {
        write_record(&mut w, q.query_id as u64, &q.sparse, q.dense.as_slice())?;
    }
    w.flush()?;
    Ok(())
}

struct RawRecord {
    id: u64,
    sparse: SparseVector,
    dense: Vec<f32>,
}

fn eof_as_truncated(record: u64) -> impl Fn(io::Error) -> Error {
    move |e| {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            Error::Truncated { record }
        } else {
            Error::Io(e)
        }
    }
}

fn read_header<R: Read>(r: &mut R) -> Result<(u64, usize)> {
    let short = |e: io::Error| {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            Error::MalformedHeader("file shorter than header".into())
        } else {
            Error::Io(e)
        }
    };
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(short)?;
    if &magic != RECORD_MAGIC {
        return Err(Error::BadMagic {
            expected: String::from_utf8_lossy(RECORD_MAGIC).into_owned(),
            found: String::from_utf8_lossy(&magic).into_owned(),
        });
    }
    let version = r.read_u32::<LE>().map_err(short)?;
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion {
            expected: FORMAT_VERSION,
            found: version,
        });
    }
    let count = r.read_u64::<LE>().map_err(short)?;
    let dim = r.read_u32::<LE>().map_err(short)? as usize;
    if dim == 0 {
        return Err(Error::MalformedHeader("dimension is zero".into()));
    }
    Ok((count, dim))
}

fn read_record<R: Read>(r: &mut R, record: u64, dim: usize) -> Result<RawRecord> {
    let trunc = eof_as_truncated(record);
    let id = r.read_u64::<LE>().map_err(&trunc)?;
    let nnz = r.read_u32::<LE>().map_err(&trunc)? as usize;
    let mut entries = Vec::with_capacity(nnz.min(1 << 20));
    for _ in 0..nnz {
        let t = r.read_u32::<LE>().map_err(&trunc)?;
        let w = r.read_f32::<LE>().map_err(&trunc)?;
        entries.push((t, w));
    }
    validate_sparse(&entries, record)?;
    let mut dense = vec![0f32; dim];
    r.read_f32_into::<LE>(&mut dense).map_err(&trunc)?;
    if dense.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { record });
    }
    Ok(RawRecord {
        id,
        sparse: SparseVector::from_validated(entries),
        dense,
    })
}

fn read_all<R: Read>(r: &mut R) -> Result<(usize, Vec<RawRecord>)> {
    let (count, dim) = read_header(r)?;
    let mut records = Vec::with_capacity(count.min(1 << 24) as usize);
    for i in 0..count {
        records.push(read_record(r, i, dim)?);
    }
    let mut probe = [0u8; 1];
    if r.read(&mut probe)? != 0 {
        return Err(Error::MalformedHeader(format!(
            "data continues past the {count} records declared in the header"
        )));
    }
    Ok((dim, records))
}

/// Reads a corpus, requiring doc ids `0..D` in order.
pub fn read_corpus<R: Read>(r: &mut R) -> Result<Corpus> {
    let (dim, records) = read_all(r)?;
    let mut sparse = Vec::with_capacity(records.len());
    let mut dense = Vec::with_capacity(records.len() * dim);
    for (i, rec) in records.into_iter().enumerate() {
        if rec.id != i as u64 {
            return Err(Error::NonContiguousId {
                record: i as u64,
                expected: i as u64,
                found: rec.id,
            });
        }
        sparse.push(rec.sparse);
        dense.extend_from_slice(&rec.dense);
    }
    Ok(Corpus::from_parts(dim, sparse, dense))
}

pub fn load_corpus(path: &Path) -> Result<Corpus> {
    read_corpus(&mut BufReader::new(File::open(path)?))
}

/// Loads a corpus with arbitrary unique ids, renumbering documents to
/// `0..D` in file order. Returns the original id of every new doc id.
pub fn load_corpus_remapped(path: &Path) -> Result<(Corpus, Vec<u64>)> {
    let (dim, records) = read_all(&mut BufReader::new(File::open(path)?))?;
    let mut seen = std::collections::HashSet::with_capacity(records.len());
    let mut original = Vec::with_capacity(records.len());
    let mut sparse = Vec::with_capacity(records.len());
    let mut dense = Vec::with_capacity(records.len() * dim);
    for (i, rec) in records.into_iter().enumerate() {
        if !seen.insert(rec.id) {
            return Err(Error::InvalidArgument(format!(
                "record {i}: duplicate document id {}",
                rec.id
            )));
        }
        original.push(rec.id);
        sparse.push(rec.sparse);
        dense.extend_from_slice(&rec.dense);
    }
    Ok((Corpus::from_parts(dim, sparse, dense), original))
}

pub fn load_queries(path: &Path) -> Result<QuerySet> {
    let (dim, records) = read_all(&mut BufReader::new(File::open(path)?))?;
    let queries = records
        .into_iter()
        .enumerate()
        .map(|(i, rec)| {
            let query_id = u32::try_from(rec.id).map_err(|_| {
                Error::InvalidArgument(format!("record {i}: query id {} exceeds u32", rec.id))
            })?;
            Ok(QueryRecord {
                query_id,
                sparse: rec.sparse,
                dense: DenseVector(rec.dense),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    QuerySet::new(dim, queries)
}
