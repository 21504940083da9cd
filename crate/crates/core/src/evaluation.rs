//! Ranked-retrieval evaluation of tag similarities: taxonomy learning,
//! duplicate detection and cross-system translation, scored with HR@k and
//! MAP plus percentile-bootstrap confidence intervals.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{TagSystem, TaxonomyEdge};
use crate::embeddings::SimilarityMatrix;
use crate::error::{Error, Result};
use crate::sampling::DuplicationPlan;

/// Candidates of one query, ranked by descending similarity.
#[derive(Clone, Debug, PartialEq)]
pub struct RankedQuery {
    pub query: String,
    pub ranked: Vec<String>,
    /// Similarity of `ranked[i]`.
    pub scores: Vec<f64>,
    pub relevant: BTreeSet<String>,
    /// 1-based ranks of the relevant candidates, ascending.
    pub relevant_ranks: Vec<usize>,
    /// Adjacent equal-score pairs resolved by candidate index.
    pub ties: usize,
}

impl RankedQuery {
    /// Ranks `(candidate, score)` pairs, given in candidate-index order, by
    /// descending score; equal scores keep candidate-index order.
    pub fn rank(query: impl Into<String>, candidates: &[(&str, f64)], relevant: &[&str]) -> Result<Self> {
        let query = query.into();
        let mut order: Vec<usize> = (0..candidates.len()).collect();
        order.sort_by(|&a, &b| candidates[b].1.total_cmp(&candidates[a].1).then(a.cmp(&b)));
        let ranked: Vec<String> = order.iter().map(|&i| candidates[i].0.to_string()).collect();
        let scores: Vec<f64> = order.iter().map(|&i| candidates[i].1).collect();
        let ties = scores.windows(2).filter(|w| w[0] == w[1]).count();
        let relevant: BTreeSet<String> = relevant.iter().map(|s| s.to_string()).collect();
        if let Some(missing) = relevant.iter().find(|r| !ranked.contains(r)) {
            return Err(Error::Parameter(format!(
                "query {query}: relevant tag {missing} is not a candidate"
            )));
        }
        let relevant_ranks = ranked
            .iter()
            .enumerate()
            .filter(|(_, c)| relevant.contains(*c))
            .map(|(i, _)| i + 1)
            .collect();
        Ok(Self {
            query,
            ranked,
            scores,
            relevant,
            relevant_ranks,
            ties,
        })
    }

    pub fn hit_at(&self, k: usize) -> bool {
        self.relevant_ranks.first().is_some_and(|&r| r <= k)
    }

    /// Mean of the precision at each relevant candidate's rank.
    pub fn average_precision(&self) -> Option<f64> {
        if self.relevant_ranks.is_empty() {
            return None;
        }
        let sum: f64 = self
            .relevant_ranks
            .iter()
            .enumerate()
            .map(|(found, &rank)| (found + 1) as f64 / rank as f64)
            .sum();
        Some(sum / self.relevant_ranks.len() as f64)
    }
}

/// Fraction of queries with at least one relevant candidate in the top `k`.
pub fn hit_rate_at_k(queries: &[RankedQuery], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::Parameter("k must be at least 1".into()));
    }
    if queries.is_empty() {
        return Err(Error::EmptyDataset("no queries".into()));
    }
    let hits = queries.iter().filter(|q| q.hit_at(k)).count();
    Ok(hits as f64 / queries.len() as f64)
}

/// Mean of per-query average precision; queries without ground truth are
/// skipped.
pub fn mean_average_precision(queries: &[RankedQuery]) -> Result<f64> {
    if queries.is_empty() {
        return Err(Error::EmptyDataset("no queries".into()));
    }
    let aps: Vec<f64> = queries.iter().filter_map(RankedQuery::average_precision).collect();
    let skipped = queries.len() - aps.len();
    if skipped > 0 {
        log::warn!("MAP: skipped {skipped} quer(ies) without ground truth");
    }
    if aps.is_empty() {
        return Err(Error::EmptyDataset("no query has ground truth".into()));
    }
    Ok(aps.iter().sum::<f64>() / aps.len() as f64)
}

/// Half-width of the percentile-bootstrap interval of the mean of `values`.
///
/// Resample `r` draws from its own ChaCha stream, so the result does not
/// depend on how resamples are spread over threads.
pub fn bootstrap_ci(values: &[f64], level: f64, resamples: usize, seed: u64) -> Result<f64> {
    if values.len() < 2 {
        return Err(Error::UndefinedCi(format!(
            "need at least 2 values, got {}",
            values.len()
        )));
    }
    if !(level > 0.0 && level < 1.0) || resamples == 0 {
        return Err(Error::Parameter("need 0 < level < 1 and resamples >= 1".into()));
    }
    let n = values.len();
    let mut means: Vec<f64> = (0..resamples)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            let total: f64 = (0..n).map(|_| values[rng.random_range(0..n)]).sum();
            total / n as f64
        })
        .collect();
    means.sort_by(f64::total_cmp);
    let alpha = (1.0 - level) / 2.0;
    Ok((quantile(&means, 1.0 - alpha) - quantile(&means, alpha)) / 2.0)
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSettings {
    pub ks: Vec<usize>,
    pub level: f64,
    pub resamples: usize,
    pub seed: u64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            ks: vec![1, 2],
            level: 0.95,
            resamples: 10_000,
            seed: 0,
        }
    }
}

/// A row/column pair reported for manual inspection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairScore {
    pub row: String,
    pub col: String,
    pub similarity: f64,
    pub ground_truth: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RankedEvaluation {
    pub task: String,
    pub embedding_kind: Option<String>,
    pub queries: Vec<RankedQuery>,
    pub hr: BTreeMap<usize, f64>,
    pub map: Option<f64>,
    /// Half-widths keyed `hr@k` / `map`.
    pub ci95: BTreeMap<String, f64>,
    pub unmatched_pairs: Vec<PairScore>,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryReport {
    pub query: String,
    pub relevant: Vec<String>,
    pub relevant_ranks: Vec<usize>,
    pub top: Option<String>,
    pub average_precision: Option<f64>,
}

/// JSON form of a [`RankedEvaluation`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub task: String,
    pub embedding_kind: Option<String>,
    pub n_queries: usize,
    pub hr: BTreeMap<String, f64>,
    pub map: Option<f64>,
    pub ci95: BTreeMap<String, f64>,
    pub per_query: Vec<QueryReport>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub unmatched_pairs: Vec<PairScore>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl RankedEvaluation {
    /// Scores `queries` with HR@k for every configured `k`, MAP, and their
    /// bootstrap intervals.
    pub fn score(task: &str, queries: Vec<RankedQuery>, settings: &EvalSettings, mut warnings: Vec<String>) -> Result<Self> {
        let mut hr = BTreeMap::new();
        let mut ci95 = BTreeMap::new();
        let mut map = None;
        if !queries.is_empty() {
            for &k in &settings.ks {
                hr.insert(k, hit_rate_at_k(&queries, k)?);
            }
            map = Some(mean_average_precision(&queries)?);
            if queries.len() >= 2 {
                for &k in &settings.ks {
                    let hits: Vec<f64> = queries.iter().map(|q| q.hit_at(k) as u8 as f64).collect();
                    ci95.insert(format!("hr@{k}"), bootstrap_ci(&hits, settings.level, settings.resamples, settings.seed)?);
                }
                let aps: Vec<f64> = queries.iter().filter_map(RankedQuery::average_precision).collect();
                if aps.len() >= 2 {
                    ci95.insert("map".into(), bootstrap_ci(&aps, settings.level, settings.resamples, settings.seed)?);
                }
            } else {
                warnings.push("fewer than 2 queries: confidence intervals undefined".into());
            }
        } else {
            warnings.push("no queries: metrics omitted".into());
        }
        for w in &warnings {
            log::warn!("{task}: {w}");
        }
        Ok(Self {
            task: task.to_string(),
            embedding_kind: None,
            queries,
            hr,
            map,
            ci95,
            unmatched_pairs: Vec::new(),
            warnings,
        })
    }

    pub fn with_kind(mut self, kind: impl Into<String>) -> Self {
        self.embedding_kind = Some(kind.into());
        self
    }

    pub fn report(&self) -> EvaluationReport {
        EvaluationReport {
            task: self.task.clone(),
            embedding_kind: self.embedding_kind.clone(),
            n_queries: self.queries.len(),
            hr: self.hr.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            map: self.map,
            ci95: self.ci95.clone(),
            per_query: self
                .queries
                .iter()
                .map(|q| QueryReport {
                    query: q.query.clone(),
                    relevant: q.relevant.iter().cloned().collect(),
                    relevant_ranks: q.relevant_ranks.clone(),
                    top: q.ranked.first().cloned(),
                    average_precision: q.average_precision(),
                })
                .collect(),
            unmatched_pairs: self.unmatched_pairs.clone(),
            warnings: self.warnings.clone(),
        }
    }

    pub fn report_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.report())?)
    }
}

fn row_candidates<'a>(sim: &'a SimilarityMatrix, row: usize, cols: &[usize]) -> Vec<(&'a str, f64)> {
    cols.iter().map(|&j| (sim.cols.tag(j), sim.values[[row, j]])).collect()
}

/// Ranks, for every child tag in the similarity rows, the parent tags found
/// among the columns. A child with several parents scores a hit if any of
/// them is retrieved.
pub fn eval_taxonomy(sim: &SimilarityMatrix, taxonomy: &[TaxonomyEdge], settings: &EvalSettings) -> Result<RankedEvaluation> {
    let mut parents_of: HashMap<&str, Vec<&str>> = HashMap::new();
    let parent_set: BTreeSet<&str> = taxonomy.iter().map(|e| e.parent.as_str()).collect();
    for e in taxonomy {
        parents_of.entry(e.child.as_str()).or_default().push(e.parent.as_str());
    }
    let cols: Vec<usize> = (0..sim.cols.len())
        .filter(|&j| parent_set.contains(sim.cols.tag(j)))
        .collect();
    if cols.is_empty() {
        return Err(Error::Parameter("no parent tag among similarity columns".into()));
    }
    let mut warnings = Vec::new();
    let mut queries = Vec::new();
    for (i, tag) in sim.rows.tags().iter().enumerate() {
        match parents_of.get(tag.as_str()) {
            None => {
                if !parent_set.contains(tag.as_str()) {
                    warnings.push(format!("{tag}: no parent in taxonomy, excluded"));
                }
            }
            Some(parents) => {
                let relevant: Vec<&str> = parents.iter().copied().filter(|p| sim.cols.contains(p)).collect();
                if relevant.is_empty() {
                    warnings.push(format!("{tag}: parent(s) not among candidates, excluded"));
                    continue;
                }
                let cands: Vec<usize> = cols.iter().copied().filter(|&j| sim.cols.tag(j) != tag).collect();
                queries.push(RankedQuery::rank(tag.clone(), &row_candidates(sim, i, &cands), &relevant)?);
            }
        }
    }
    RankedEvaluation::score("taxonomy", queries, settings, warnings)
}

/// For every split subtag, retrieves its counterpart among all other tags.
/// Runs in both directions (`t1 -> t2` and `t2 -> t1`).
pub fn eval_dedup(sim: &SimilarityMatrix, plan: &DuplicationPlan, settings: &EvalSettings) -> Result<RankedEvaluation> {
    let mut warnings = Vec::new();
    let mut queries = Vec::new();
    for (i, tag) in sim.rows.tags().iter().enumerate() {
        let Some(counterpart) = plan.counterpart(tag) else {
            warnings.push(format!("{tag}: no duplicate counterpart, excluded"));
            continue;
        };
        if !sim.cols.contains(counterpart) {
            warnings.push(format!("{tag}: counterpart {counterpart} not among columns, excluded"));
            continue;
        }
        let cands: Vec<usize> = (0..sim.cols.len()).filter(|&j| sim.cols.tag(j) != tag).collect();
        queries.push(RankedQuery::rank(tag.clone(), &row_candidates(sim, i, &cands), &[counterpart])?);
    }
    RankedEvaluation::score("dedup", queries, settings, warnings)
}

/// Tag name with any `system:` prefix removed, lowercased.
pub fn normalized_name(tag: &str) -> String {
    tag.split_once(':').map_or(tag, |(_, rest)| rest).to_lowercase()
}

/// Fraction of ground-truth pairs recovered by exact normalized-name matching.
pub fn string_match_hit_rate(rows: &TagSystem, cols: &TagSystem, pairs: &[(String, String)]) -> Option<f64> {
    let by_name: HashMap<String, &str> = cols.tags().iter().map(|t| (normalized_name(t), t.as_str())).collect();
    let queries: Vec<&(String, String)> = pairs.iter().filter(|(a, _)| rows.contains(a)).collect();
    if queries.is_empty() {
        return None;
    }
    let hits = queries
        .iter()
        .filter(|(a, b)| by_name.get(&normalized_name(a)) == Some(&b.as_str()))
        .count();
    Some(hits as f64 / queries.len() as f64)
}

/// Translation of system-A tags (rows) into system-B tags (columns).
///
/// Besides the metrics, reports the `top_n` most similar pairs among tags
/// that have no exact (normalized) name match on the other side.
pub fn eval_translation(
    cross_sim: &SimilarityMatrix,
    ground_truth: &[(String, String)],
    settings: &EvalSettings,
    top_n: usize,
) -> Result<RankedEvaluation> {
    let mut truth: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    let mut warnings = Vec::new();
    for (a, b) in ground_truth {
        if !cross_sim.rows.contains(a) || !cross_sim.cols.contains(b) {
            warnings.push(format!("ground truth {a} -> {b} not in similarity matrix, ignored"));
            continue;
        }
        truth.entry(a.as_str()).or_default().push(b.as_str());
    }
    let all_cols: Vec<usize> = (0..cross_sim.cols.len()).collect();
    let mut queries = Vec::new();
    for (i, tag) in cross_sim.rows.tags().iter().enumerate() {
        if let Some(relevant) = truth.get(tag.as_str()) {
            queries.push(RankedQuery::rank(tag.clone(), &row_candidates(cross_sim, i, &all_cols), relevant)?);
        }
    }

    let row_names: BTreeSet<String> = cross_sim.rows.tags().iter().map(|t| normalized_name(t)).collect();
    let col_names: BTreeSet<String> = cross_sim.cols.tags().iter().map(|t| normalized_name(t)).collect();
    let gt_pairs: BTreeSet<(&str, &str)> = ground_truth.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
    let unmatched_pairs: Vec<PairScore> = cross_sim
        .ranked_pairs()
        .into_iter()
        .filter(|&(i, j, _)| {
            !col_names.contains(&normalized_name(cross_sim.rows.tag(i)))
                && !row_names.contains(&normalized_name(cross_sim.cols.tag(j)))
        })
        .take(top_n)
        .map(|(i, j, v)| {
            let (row, col) = (cross_sim.rows.tag(i), cross_sim.cols.tag(j));
            PairScore {
                row: row.to_string(),
                col: col.to_string(),
                similarity: v,
                ground_truth: gt_pairs.contains(&(row, col)),
            }
        })
        .collect();

    let mut eval = RankedEvaluation::score("translation", queries, settings, warnings)?;
    eval.unmatched_pairs = unmatched_pairs;
    Ok(eval)
}
