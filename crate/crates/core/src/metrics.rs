//! AUC, user-weighted AUC, MRR and NDCG@k over scored candidates.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use crate::data::Domain;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ScoredExample {
    pub user_id: String,
    pub score: f64,
    pub label: u8,
    /// Candidate set: one positive and its sampled negatives.
    pub group: usize,
}

fn check_scores(examples: &[ScoredExample]) -> Result<()> {
    if let Some(e) = examples.iter().find(|e| e.score.is_nan()) {
        return Err(Error::NonFinite(format!("score for user {:?}", e.user_id)));
    }
    Ok(())
}

/// Probability that a positive outscores a negative, counting ties as half.
pub fn auc(examples: &[ScoredExample]) -> Result<f64> {
    check_scores(examples)?;
    let mut sorted: Vec<(f64, u8)> = examples.iter().map(|e| (e.score, e.label)).collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (mut negs_below, mut wins, mut pos, mut neg) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        let (mut p, mut n) = (0.0, 0.0);
        while j < sorted.len() && sorted[j].0 == sorted[i].0 {
            if sorted[j].1 == 1 {
                p += 1.0;
            } else {
                n += 1.0;
            }
            j += 1;
        }
        wins += p * negs_below + 0.5 * p * n;
        negs_below += n;
        pos += p;
        neg += n;
        i = j;
    }
    if pos == 0.0 || neg == 0.0 {
        return Err(Error::InvalidArgument("AUC needs both positive and negative examples".into()));
    }
    Ok(wins / (pos * neg))
}

/// Per-user AUC averaged with weights equal to each user's positive count;
/// users with a single class are skipped.
pub fn gauc(examples: &[ScoredExample]) -> Result<f64> {
    check_scores(examples)?;
    let mut by_user: BTreeMap<&str, Vec<ScoredExample>> = BTreeMap::new();
    for e in examples {
        by_user.entry(&e.user_id).or_default().push(e.clone());
    }
    let (mut num, mut den) = (0.0, 0.0);
    for rows in by_user.values() {
        let pos = rows.iter().filter(|e| e.label == 1).count();
        if pos == 0 || pos == rows.len() {
            continue;
        }
        num += pos as f64 * auc(rows)?;
        den += pos as f64;
    }
    if den == 0.0 {
        return Err(Error::InvalidArgument("no user has both positive and negative examples".into()));
    }
    Ok(num / den)
}

/// Rank of each set's positive: one plus the negatives scoring at least as high.
fn positive_ranks(examples: &[ScoredExample]) -> Result<Vec<usize>> {
    check_scores(examples)?;
    let mut sets: BTreeMap<usize, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for e in examples {
        let entry = sets.entry(e.group).or_default();
        if e.label == 1 {
            entry.0.push(e.score);
        } else {
            entry.1.push(e.score);
        }
    }
    if sets.is_empty() {
        return Err(Error::InvalidArgument("no candidate sets".into()));
    }
    sets.into_iter()
        .map(|(group, (pos, negs))| match pos[..] {
            [p] => Ok(1 + negs.iter().filter(|&&n| n >= p).count()),
            _ => Err(Error::InvalidArgument(format!(
                "candidate set {group} has {} positives",
                pos.len()
            ))),
        })
        .collect()
}

/// Mean reciprocal rank of the positive in each candidate set.
pub fn mrr(examples: &[ScoredExample]) -> Result<f64> {
    let ranks = positive_ranks(examples)?;
    Ok(ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / ranks.len() as f64)
}

/// Mean `1/log₂(1+rank)` over candidate sets, zero beyond rank `k`.
pub fn ndcg_at_k(examples: &[ScoredExample], k: usize) -> Result<f64> {
    if k < 1 {
        return Err(Error::InvalidArgument("NDCG cutoff must be at least 1".into()));
    }
    let ranks = positive_ranks(examples)?;
    let gain = |r: usize| if r <= k { 1.0 / ((1 + r) as f64).log2() } else { 0.0 };
    Ok(ranks.iter().map(|&r| gain(r)).sum::<f64>() / ranks.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DomainMetrics {
    pub auc: f64,
    pub gauc: f64,
    pub mrr: f64,
    pub ndcg10: f64,
}

impl DomainMetrics {
    pub const NAMES: [&'static str; 4] = ["auc", "gauc", "mrr", "ndcg10"];

    pub fn compute(examples: &[ScoredExample]) -> Result<Self> {
        Ok(Self {
            auc: auc(examples)?,
            gauc: gauc(examples)?,
            mrr: mrr(examples)?,
            ndcg10: ndcg_at_k(examples, 10)?,
        })
    }

    pub fn values(&self) -> [f64; 4] {
        [self.auc, self.gauc, self.mrr, self.ndcg10]
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        Self::NAMES.iter().position(|&n| n == name).map(|i| self.values()[i])
    }
}

/// Metrics for whichever domains were evaluated.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MetricsReport {
    pub domains: [Option<DomainMetrics>; 2],
}

impl MetricsReport {
    pub fn get(&self, d: Domain) -> Option<&DomainMetrics> {
        self.domains[d.index()].as_ref()
    }

    /// `(domain, metric, value)` rows in a fixed order.
    pub fn rows(&self) -> Vec<(Domain, &'static str, f64)> {
        let mut rows = Vec::new();
        for d in Domain::BOTH {
            if let Some(m) = self.get(d) {
                for (name, v) in DomainMetrics::NAMES.iter().zip(m.values()) {
                    rows.push((d, *name, v));
                }
            }
        }
        rows
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("domain,metric,value\n");
        for (d, name, v) in self.rows() {
            s.push_str(&format!("{},{name},{v}\n", d.tag()));
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_csv().as_bytes()).map_err(|e| Error::io(path, e))
    }
}
