//! Retrieval metrics (Recall@k, AP@k, MAP@k) and the retriever ablation.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::corpus::Question;
use crate::fusion::{rrf_fuse, FusionConfig, FusionError};
use crate::ranked::{PassageRef, RankedList};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MetricsError {
    #[error("gold set is empty")]
    EmptyGold,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("fusion failed: {0}")]
    Fusion(#[from] FusionError),
}

/// Denominator used by AP@k.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApNormalization {
    /// `min(|gold|, k)`: a perfect truncated ranking scores 1.
    #[default]
    MinGoldK,
    /// `|gold|`.
    Gold,
}

fn check(gold: &HashSet<PassageRef>, k: usize) -> Result<(), MetricsError> {
    if gold.is_empty() {
        return Err(MetricsError::EmptyGold);
    }
    if k == 0 {
        return Err(MetricsError::ZeroK);
    }
    Ok(())
}

pub fn recall_at_k(ranked: &RankedList, gold: &HashSet<PassageRef>, k: usize) -> Result<f64, MetricsError> {
    check(gold, k)?;
    let hits = ranked.top(k).iter().filter(|e| gold.contains(&e.passage_ref())).count();
    Ok(hits as f64 / gold.len() as f64)
}

pub fn average_precision_at_k(ranked: &RankedList, gold: &HashSet<PassageRef>, k: usize) -> Result<f64, MetricsError> {
    average_precision_with(ranked, gold, k, ApNormalization::MinGoldK)
}

pub fn average_precision_with(
    ranked: &RankedList,
    gold: &HashSet<PassageRef>,
    k: usize,
    norm: ApNormalization,
) -> Result<f64, MetricsError> {
    check(gold, k)?;
    let denom = match norm {
        ApNormalization::MinGoldK => gold.len().min(k),
        ApNormalization::Gold => gold.len(),
    };
    let mut hits = 0u128;
    let mut exact = Some(Ratio::ZERO);
    let mut sum = 0.0;
    for (i, e) in ranked.top(k).iter().enumerate() {
        if gold.contains(&e.passage_ref()) {
            hits += 1;
            let rank = (i + 1) as u128;
            exact = exact.and_then(|r| r.add(hits, rank));
            sum += hits as f64 / rank as f64;
        }
    }
    match exact.and_then(|r| r.div_int(denom as u128)).and_then(Ratio::to_f64) {
        Some(v) => Ok(v),
        None => Ok(sum / denom as f64),
    }
}

/// Non-negative fraction in lowest terms; `None` on overflow.
#[derive(Debug, Clone, Copy)]
struct Ratio {
    num: u128,
    den: u128,
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

impl Ratio {
    const ZERO: Ratio = Ratio { num: 0, den: 1 };

    fn reduced(num: u128, den: u128) -> Ratio {
        let g = gcd(num, den).max(1);
        Ratio { num: num / g, den: den / g }
    }

    fn add(self, num: u128, den: u128) -> Option<Ratio> {
        let g = gcd(self.den, den);
        let l = (self.den / g).checked_mul(den)?;
        let a = self.num.checked_mul(l / self.den)?;
        let b = num.checked_mul(l / den)?;
        Some(Ratio::reduced(a.checked_add(b)?, l))
    }

    fn div_int(self, d: u128) -> Option<Ratio> {
        Some(Ratio::reduced(self.num, self.den.checked_mul(d)?))
    }

    /// Correctly rounded when both parts are exact in an f64.
    fn to_f64(self) -> Option<f64> {
        const EXACT: u128 = 1 << 53;
        (self.num <= EXACT && self.den <= EXACT).then(|| self.num as f64 / self.den as f64)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QueryScores {
    pub recall_at: BTreeMap<usize, f64>,
    pub ap_at: BTreeMap<usize, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub retriever_id: String,
    pub ks: Vec<usize>,
    pub normalization: ApNormalization,
    pub per_query: BTreeMap<String, QueryScores>,
    /// Macro averages: every labeled query weighs the same.
    pub aggregate: QueryScores,
}

impl RetrievalReport {
    pub fn recall(&self, k: usize) -> f64 {
        self.aggregate.recall_at.get(&k).copied().unwrap_or(0.0)
    }

    pub fn map(&self, k: usize) -> f64 {
        self.aggregate.ap_at.get(&k).copied().unwrap_or(0.0)
    }
}

/// Scores one list per labeled question. A question with no list counts as
/// an empty ranking; unlabeled questions are skipped.
pub fn evaluate(
    retriever_id: &str,
    lists: &HashMap<String, RankedList>,
    questions: &[Question],
    ks: &[usize],
    norm: ApNormalization,
) -> Result<RetrievalReport, MetricsError> {
    if ks.contains(&0) {
        return Err(MetricsError::ZeroK);
    }
    let mut ks: Vec<usize> = ks.to_vec();
    ks.sort_unstable();
    ks.dedup();
    let mut per_query = BTreeMap::new();
    for q in questions {
        if !q.is_labeled() {
            log::warn!("skipping unlabeled question {}", q.question_id);
            continue;
        }
        let gold = q.gold_set();
        let empty = RankedList::empty(q.question_id.clone(), retriever_id);
        let list = lists.get(&q.question_id).unwrap_or(&empty);
        let mut s = QueryScores::default();
        for &k in &ks {
            s.recall_at.insert(k, recall_at_k(list, &gold, k)?);
            s.ap_at.insert(k, average_precision_with(list, &gold, k, norm)?);
        }
        per_query.insert(q.question_id.clone(), s);
    }
    let n = per_query.len().max(1) as f64;
    let mut aggregate = QueryScores::default();
    for &k in &ks {
        aggregate.recall_at.insert(k, per_query.values().map(|s| s.recall_at[&k]).sum::<f64>() / n);
        aggregate.ap_at.insert(k, per_query.values().map(|s| s.ap_at[&k]).sum::<f64>() / n);
    }
    Ok(RetrievalReport { retriever_id: retriever_id.to_string(), ks, normalization: norm, per_query, aggregate })
}

/// Raw per-question runs of one retriever.
pub type RunSet = HashMap<String, RankedList>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub retrievers: Vec<String>,
    pub fused: bool,
    pub report: RetrievalReport,
}

/// Every non-empty subset of `ids` in size order, then by index order.
pub fn subsets(ids: &[String]) -> Vec<Vec<String>> {
    let n = ids.len();
    let mut masks: Vec<u32> = (1..(1u32 << n)).collect();
    masks.sort_by_key(|m| {
        let members: Vec<usize> = (0..n).filter(|i| m & (1 << i) != 0).collect();
        (members.len(), members)
    });
    masks.into_iter().map(|m| (0..n).filter(|i| m & (1 << i) != 0).map(|i| ids[i].clone()).collect()).collect()
}

/// Evaluates all `2^n − 1` subsets of the retrievers in `runs`. Singletons
/// are scored on their raw lists; larger subsets are fused first. Rows come
/// sorted by Recall at the smallest k, descending (stable).
pub fn run_ablation(
    runs: &BTreeMap<String, RunSet>,
    questions: &[Question],
    beta: f64,
    ks: &[usize],
    norm: ApNormalization,
) -> Result<Vec<AblationRow>, MetricsError> {
    let ids: Vec<String> = runs.keys().cloned().collect();
    if ids.is_empty() {
        return Err(FusionError::InvalidConfig("no retrievers".into()).into());
    }
    let min_k = ks.iter().copied().min().ok_or(MetricsError::ZeroK)?;
    let depth = ks.iter().copied().max().unwrap_or(min_k);
    let mut rows = Vec::new();
    for subset in subsets(&ids) {
        let row = if subset.len() == 1 {
            let id = &subset[0];
            AblationRow {
                retrievers: subset.clone(),
                fused: false,
                report: evaluate(id, &runs[id], questions, ks, norm)?,
            }
        } else {
            let config = FusionConfig::new(beta, subset.clone())?;
            let mut fused = RunSet::new();
            for q in questions {
                let lists: Vec<RankedList> = subset
                    .iter()
                    .map(|id| {
                        runs[id]
                            .get(&q.question_id)
                            .cloned()
                            .unwrap_or_else(|| RankedList::empty(q.question_id.clone(), id.clone()))
                    })
                    .collect();
                fused.insert(q.question_id.clone(), rrf_fuse(&lists, &config, depth)?);
            }
            let refs: Vec<&str> = subset.iter().map(String::as_str).collect();
            let rid = crate::fusion::fused_retriever_id(&refs);
            AblationRow {
                retrievers: subset.clone(),
                fused: true,
                report: evaluate(&rid, &fused, questions, ks, norm)?,
            }
        };
        rows.push(row);
    }
    rows.sort_by(|a, b| b.report.recall(min_k).total_cmp(&a.report.recall(min_k)));
    Ok(rows)
}

/// Aligned text table: one row per retriever set with Recall and MAP columns.
pub fn render_table(rows: &[AblationRow], ks: &[usize]) -> String {
    let names: Vec<String> = rows.iter().map(|r| r.retrievers.join(" + ")).collect();
    let width = names.iter().map(String::len).chain(std::iter::once("Retrievers".len())).max().unwrap_or(0);
    let mut header = format!("{:<width$}", "Retrievers");
    for k in ks {
        header.push_str(&format!("  {:>9}", format!("Recall@{k}")));
    }
    for k in ks {
        header.push_str(&format!("  {:>9}", format!("MAP@{k}")));
    }
    let mut out = vec![header.clone(), "-".repeat(header.len())];
    for (name, row) in names.iter().zip(rows) {
        let mut line = format!("{name:<width$}");
        for &k in ks {
            line.push_str(&format!("  {:>9.4}", row.report.recall(k)));
        }
        for &k in ks {
            line.push_str(&format!("  {:>9.4}", row.report.map(k)));
        }
        out.push(line);
    }
    out.join("\n") + "\n"
}
