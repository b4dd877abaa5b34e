use crate::corpus::Qrels;
use crate::error::{invalid, Result};
use crate::ranked::RankedList;

/// Averages `per_query` over queries that have at least one relevant document.
fn mean_over_judged<'a>(
    results: impl IntoIterator<Item = (u32, &'a RankedList)>,
    qrels: &Qrels,
    per_query: impl Fn(u32, &RankedList) -> f64,
) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for (qid, ranked) in results {
        if qrels.num_relevant(qid) == 0 {
            continue;
        }
        sum += per_query(qid, ranked);
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

pub fn mrr_at_k<'a>(
    results: impl IntoIterator<Item = (u32, &'a RankedList)>,
    qrels: &Qrels,
    k: usize,
) -> f64 {
    mean_over_judged(results, qrels, |q, r| {
        r.doc_ids()
            .take(k)
            .position(|d| qrels.grade(q, d) >= 1)
            .map_or(0.0, |p| 1.0 / (p + 1) as f64)
    })
}

pub fn recall_at_k<'a>(
    results: impl IntoIterator<Item = (u32, &'a RankedList)>,
    qrels: &Qrels,
    k: usize,
) -> f64 {
    mean_over_judged(results, qrels, |q, r| {
        let found = r
            .doc_ids()
            .take(k)
            .filter(|&d| qrels.grade(q, d) >= 1)
            .count();
        found as f64 / qrels.num_relevant(q) as f64
    })
}

fn gain(grade: u32) -> f64 {
    2f64.powi(grade as i32) - 1.0
}

fn discount(rank: usize) -> f64 {
    (rank as f64 + 1.0).log2()
}

pub fn ndcg_at_k<'a>(
    results: impl IntoIterator<Item = (u32, &'a RankedList)>,
    qrels: &Qrels,
    k: usize,
) -> f64 {
    mean_over_judged(results, qrels, |q, r| {
        let dcg: f64 = r
            .doc_ids()
            .take(k)
            .enumerate()
            .map(|(i, d)| gain(qrels.grade(q, d)) / discount(i + 1))
            .sum();
        let mut grades: Vec<u32> = qrels
            .judged(q)
            .map(|m| m.values().copied().filter(|&g| g >= 1).collect())
            .unwrap_or_default();
        grades.sort_unstable_by(|a, b| b.cmp(a));
        let idcg: f64 = grades
            .iter()
            .take(k)
            .enumerate()
            .map(|(i, &g)| gain(g) / discount(i + 1))
            .sum();
        if idcg == 0.0 {
            0.0
        } else {
            dcg / idcg
        }
    })
}

/// Mean and nearest-rank 99th percentile.
pub fn latency_stats(samples: &[f64]) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(invalid("latency statistics need at least one sample"));
    }
    let mean = samples.iter().sum::<f64>() / samples.len() as f64;
    Ok((mean, percentile(samples, 0.99)?))
}

/// Nearest-rank percentile: the `ceil(p·n)`-th smallest sample.
pub fn percentile(samples: &[f64], p: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(invalid("percentile of an empty sample"));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((p * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    Ok(sorted[rank - 1])
}
