use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Graded relevance judgments. Absent pairs have grade 0.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Qrels {
    judgments: BTreeMap<u32, BTreeMap<u32, u32>>,
}

impl Qrels {
    pub fn new() -> Self {
        Self::default()
    }

    /// Sets a grade, returning the previous one if the pair was judged.
    pub fn insert(&mut self, query_id: u32, doc_id: u32, grade: u32) -> Option<u32> {
        self.judgments
            .entry(query_id)
            .or_default()
            .insert(doc_id, grade)
    }

    pub fn grade(&self, query_id: u32, doc_id: u32) -> u32 {
        self.judgments
            .get(&query_id)
            .and_then(|m| m.get(&doc_id))
            .copied()
            .unwrap_or(0)
    }

    pub fn judged(&self, query_id: u32) -> Option<&BTreeMap<u32, u32>> {
        self.judgments.get(&query_id)
    }

    /// Doc ids with grade ≥ 1 for a query.
    pub fn relevant(&self, query_id: u32) -> impl Iterator<Item = u32> + '_ {
        self.judgments
            .get(&query_id)
            .into_iter()
            .flat_map(|m| m.iter().filter(|(_, &g)| g >= 1).map(|(&d, _)| d))
    }

    pub fn num_relevant(&self, query_id: u32) -> usize {
        self.relevant(query_id).count()
    }

    pub fn query_ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.judgments.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.judgments.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Parses TREC qrels lines `query_id iter doc_id grade`.
///
/// Returns the judgments and the number of duplicate pairs encountered; for
/// duplicates the last grade wins.
pub fn parse_qrels<R: BufRead>(reader: R) -> Result<(Qrels, usize)> {
    let mut qrels = Qrels::new();
    let mut duplicates = 0;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        let text = line.trim();
        if text.is_empty() || text.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = text.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("expected 4 fields, found {}", fields.len()),
            });
        }
        let num = |s: &str, what: &str| -> Result<i64> {
            s.parse::<i64>().map_err(|_| Error::Parse {
                line: lineno,
                msg: format!("invalid {what} `{s}`"),
            })
        };
        let query = num(fields[0], "query id")?;
        let doc = num(fields[2], "doc id")?;
        let grade = num(fields[3], "grade")?;
        if grade < 0 {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("negative grade {grade}"),
            });
        }
        let (query, doc, grade) = match (
            u32::try_from(query),
            u32::try_from(doc),
            u32::try_from(grade),
        ) {
            (Ok(q), Ok(d), Ok(g)) => (q, d, g),
            _ => {
                return Err(Error::Parse {
                    line: lineno,
                    msg: "id or grade out of range".into(),
                })
            }
        };
        if qrels.insert(query, doc, grade).is_some() {
            duplicates += 1;
            log::warn!("qrels line {lineno}: duplicate judgment for query {query} doc {doc}; keeping grade {grade}");
        }
    }
    Ok((qrels, duplicates))
}

pub fn load_qrels(path: &Path) -> Result<Qrels> {
    parse_qrels(BufReader::new(File::open(path)?)).map(|(q, _)| q)
}

pub fn save_qrels(qrels: &Qrels, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for (q, docs) in &qrels.judgments {
        for (d, g) in docs {
            writeln!(w, "{q} 0 {d} {g}")?;
        }
    }
    w.flush()?;
    Ok(())
}
