//! Exact cosine-ranked retrieval over an in-memory index, the three patient
//! evaluation protocols, ranking metrics and k-NN classification.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::descriptor::l2_norm;
use crate::error::{Error, Result};
use crate::metric::cosine_distance;

/// Tolerance on embedding norms accepted by the index.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-6;
/// Default number of candidates returned by a query.
pub const DEFAULT_K: usize = 9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub id: String,
    pub embedding: Vec<f64>,
    pub patient_id: String,
    pub study_id: String,
    pub lesion_type: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Index {
    dim: usize,
    entries: Vec<IndexEntry>,
    positions: HashMap<String, usize>,
}

fn check_unit(id: &str, v: &[f64]) -> Result<()> {
    let norm = l2_norm(v);
    if !norm.is_finite() || (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
        return Err(Error::NotUnitNorm {
            id: id.to_string(),
            norm,
        });
    }
    Ok(())
}

/// Build an index, preserving insertion order for tie-breaking.
pub fn build_index(entries: Vec<IndexEntry>) -> Result<Index> {
    let mut index = Index::default();
    for e in entries {
        index.insert(e)?;
    }
    Ok(index)
}

impl Index {
    pub fn new() -> Self {
        Self::default()
    }

    /// Embedding dimension; 0 while the index is empty.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn get(&self, id: &str) -> Option<&IndexEntry> {
        self.positions.get(id).map(|&i| &self.entries[i])
    }

    pub fn insert(&mut self, entry: IndexEntry) -> Result<()> {
        if self.positions.contains_key(&entry.id) {
            return Err(Error::DuplicateId(entry.id));
        }
        if !self.entries.is_empty() && entry.embedding.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: entry.embedding.len(),
            });
        }
        if entry.embedding.is_empty() {
            return Err(Error::InvalidArgument(format!("embedding for `{}` is empty", entry.id)));
        }
        check_unit(&entry.id, &entry.embedding)?;
        self.dim = entry.embedding.len();
        self.positions.insert(entry.id.clone(), self.entries.len());
        self.entries.push(entry);
        Ok(())
    }

    /// Lesion types in first-seen order.
    pub fn label_set(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for e in &self.entries {
            if !out.contains(&e.lesion_type) {
                out.push(e.lesion_type.clone());
            }
        }
        out
    }

    pub fn label_histogram(&self) -> BTreeMap<String, usize> {
        let mut h = BTreeMap::new();
        for e in &self.entries {
            *h.entry(e.lesion_type.clone()).or_insert(0) += 1;
        }
        h
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalSetting {
    AllPatients,
    SamePatient,
    CrossPatient,
}

impl EvalSetting {
    pub const ALL: [EvalSetting; 3] = [
        EvalSetting::AllPatients,
        EvalSetting::SamePatient,
        EvalSetting::CrossPatient,
    ];

    /// Whether `candidate_patient` belongs to the pool of a query from `query_patient`.
    pub fn admits(&self, query_patient: Option<&str>, candidate_patient: &str) -> bool {
        match self {
            EvalSetting::AllPatients => true,
            EvalSetting::SamePatient => query_patient == Some(candidate_patient),
            EvalSetting::CrossPatient => query_patient != Some(candidate_patient),
        }
    }
}

impl fmt::Display for EvalSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(match self {
            EvalSetting::AllPatients => "all_patients",
            EvalSetting::SamePatient => "same_patient",
            EvalSetting::CrossPatient => "cross_patient",
        })
    }
}

impl FromStr for EvalSetting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" | "all_patients" => Ok(EvalSetting::AllPatients),
            "same" | "same_patient" => Ok(EvalSetting::SamePatient),
            "cross" | "cross_patient" => Ok(EvalSetting::CrossPatient),
            other => Err(Error::InvalidArgument(format!(
                "unknown setting `{other}`, expected all, same or cross"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub id: String,
    pub distance: f64,
}

/// Candidates in ascending cosine distance.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub query_id: Option<String>,
    pub hits: Vec<Hit>,
}

impl RankedList {
    pub fn len(&self) -> usize {
        self.hits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hits.is_empty()
    }

    pub fn ids(&self) -> Vec<&str> {
        self.hits.iter().map(|h| h.id.as_str()).collect()
    }
}

/// Candidate selection for a query.
#[derive(Clone, Debug, PartialEq)]
pub struct QueryOptions<'a> {
    pub k: usize,
    pub setting: EvalSetting,
    pub patient_id: Option<&'a str>,
    pub exclude_id: Option<&'a str>,
}

impl Default for QueryOptions<'_> {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            setting: EvalSetting::AllPatients,
            patient_id: None,
            exclude_id: None,
        }
    }
}

/// All pool members ranked by distance, ties by insertion order.
fn rank_pool(index: &Index, q: &[f64], opts: &QueryOptions<'_>) -> Result<Vec<(usize, f64)>> {
    let mut scored = Vec::new();
    for (pos, e) in index.entries.iter().enumerate() {
        if Some(e.id.as_str()) == opts.exclude_id || !opts.setting.admits(opts.patient_id, &e.patient_id) {
            continue;
        }
        scored.push((pos, cosine_distance(q, &e.embedding)?));
    }
    scored.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    Ok(scored)
}

fn check_query(index: &Index, q: &[f64], opts: &QueryOptions<'_>) -> Result<()> {
    if opts.k == 0 {
        return Err(Error::InvalidArgument("k must be >= 1".into()));
    }
    if opts.setting != EvalSetting::AllPatients && opts.patient_id.is_none() {
        return Err(Error::InvalidArgument(format!(
            "setting {} needs the query's patient id",
            opts.setting
        )));
    }
    if !index.is_empty() && q.len() != index.dim {
        return Err(Error::DimensionMismatch {
            expected: index.dim,
            found: q.len(),
        });
    }
    check_unit("query", q)
}

/// Exact top-`k` query. An empty candidate pool yields an empty list.
pub fn query(index: &Index, q: &[f64], opts: &QueryOptions<'_>) -> Result<RankedList> {
    check_query(index, q, opts)?;
    let ranked = rank_pool(index, q, opts)?;
    Ok(RankedList {
        query_id: opts.exclude_id.map(str::to_string),
        hits: ranked
            .into_iter()
            .take(opts.k)
            .map(|(pos, distance)| Hit {
                id: index.entries[pos].id.clone(),
                distance,
            })
            .collect(),
    })
}

/// `|top-min(k, len) ∩ relevant| / k`.
pub fn precision_at_k(ranked: &RankedList, relevant: &HashSet<String>, k: usize) -> f64 {
    assert!(k >= 1, "k must be >= 1");
    let hits = ranked.hits.iter().take(k).filter(|h| relevant.contains(&h.id)).count();
    hits as f64 / k as f64
}

/// Truncated average precision, normalized by `min(|relevant ∩ pool|, k)`.
/// `relevant_in_pool` is that intersection's size; zero gives AP = 0.
pub fn average_precision_at_k(
    ranked: &RankedList,
    relevant: &HashSet<String>,
    relevant_in_pool: usize,
    k: usize,
) -> f64 {
    assert!(k >= 1, "k must be >= 1");
    let denom = relevant_in_pool.min(k);
    if denom == 0 {
        return 0.0;
    }
    let mut found = 0usize;
    let mut sum = 0.0;
    for (i, h) in ranked.hits.iter().take(k).enumerate() {
        if relevant.contains(&h.id) {
            found += 1;
            sum += found as f64 / (i + 1) as f64;
        }
    }
    sum / denom as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryScore {
    pub id: String,
    pub average_precision: f64,
    pub precision_at_1: f64,
    pub precision_at_10: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub setting: EvalSetting,
    pub map_at_10: f64,
    pub precision_at_1: f64,
    pub precision_at_10: f64,
    pub query_count: usize,
    /// Queries skipped because their candidate pool was empty.
    pub skipped_queries: usize,
    pub per_query: Vec<QueryScore>,
}

/// Scores for one query drawn from the index (self always excluded);
/// `None` when its pool is empty.
fn score_query(index: &Index, query: &IndexEntry, setting: EvalSetting) -> Result<Option<QueryScore>> {
    let opts = QueryOptions {
        k: 10,
        setting,
        patient_id: Some(&query.patient_id),
        exclude_id: Some(&query.id),
    };
    let ranked = rank_pool(index, &query.embedding, &opts)?;
    if ranked.is_empty() {
        return Ok(None);
    }
    let relevant: HashSet<String> = ranked
        .iter()
        .map(|&(pos, _)| &index.entries[pos])
        .filter(|e| e.lesion_type == query.lesion_type)
        .map(|e| e.id.clone())
        .collect();
    let list = RankedList {
        query_id: Some(query.id.clone()),
        hits: ranked
            .iter()
            .take(10)
            .map(|&(pos, distance)| Hit {
                id: index.entries[pos].id.clone(),
                distance,
            })
            .collect(),
    };
    Ok(Some(QueryScore {
        id: query.id.clone(),
        average_precision: average_precision_at_k(&list, &relevant, relevant.len(), 10),
        precision_at_1: precision_at_k(&list, &relevant, 1),
        precision_at_10: precision_at_k(&list, &relevant, 10),
    }))
}

/// Evaluate `queries` against `index` under `setting`. Relevance is a shared
/// lesion type; a query never retrieves itself.
pub fn evaluate(index: &Index, queries: &[IndexEntry], setting: EvalSetting) -> Result<EvalReport> {
    if index.is_empty() {
        return Err(Error::InvalidArgument("cannot evaluate an empty index".into()));
    }
    for q in queries {
        check_unit(&q.id, &q.embedding)?;
        if q.embedding.len() != index.dim {
            return Err(Error::DimensionMismatch {
                expected: index.dim,
                found: q.embedding.len(),
            });
        }
    }
    let scored: Vec<Option<QueryScore>> = queries
        .par_iter()
        .map(|q| score_query(index, q, setting))
        .collect::<Result<_>>()?;
    let per_query: Vec<QueryScore> = scored.iter().flatten().cloned().collect();
    if per_query.is_empty() {
        let reason = match setting {
            EvalSetting::SamePatient => "every query's patient has no other lesion in the index",
            EvalSetting::CrossPatient => "no lesion belongs to a different patient than its query",
            EvalSetting::AllPatients => "the index holds no candidate besides each query itself",
        };
        return Err(Error::NoUsableQueries {
            setting: setting.to_string(),
            reason: reason.into(),
        });
    }
    let n = per_query.len() as f64;
    let mean = |f: fn(&QueryScore) -> f64| per_query.iter().map(f).sum::<f64>() / n;
    Ok(EvalReport {
        setting,
        map_at_10: mean(|q| q.average_precision),
        precision_at_1: mean(|q| q.precision_at_1),
        precision_at_10: mean(|q| q.precision_at_10),
        query_count: per_query.len(),
        skipped_queries: queries.len() - per_query.len(),
        per_query,
    })
}

/// Every index entry queried against the rest of the index.
pub fn evaluate_index(index: &Index, setting: EvalSetting) -> Result<EvalReport> {
    evaluate(index, index.entries(), setting)
}

/// Majority lesion type among the top-`k`; ties go to the smaller mean
/// distance, then to the label seen first in the index.
pub fn knn_classify(index: &Index, q: &[f64], k: usize, exclude_id: Option<&str>) -> Result<String> {
    if index.is_empty() {
        return Err(Error::InvalidArgument("cannot classify against an empty index".into()));
    }
    let ranked = query(
        index,
        q,
        &QueryOptions {
            k,
            exclude_id,
            ..QueryOptions::default()
        },
    )?;
    let order = index.label_set();
    let mut votes: HashMap<&str, (usize, f64)> = HashMap::new();
    for h in &ranked.hits {
        let label = index.get(&h.id).expect("hit comes from the index").lesion_type.as_str();
        let slot = votes.entry(label).or_insert((0, 0.0));
        slot.0 += 1;
        slot.1 += h.distance;
    }
    order
        .iter()
        .filter_map(|l| votes.get(l.as_str()).map(|&(c, s)| (l, c, s / c as f64)))
        .enumerate()
        .min_by(|(ia, a), (ib, b)| b.1.cmp(&a.1).then(a.2.total_cmp(&b.2)).then(ia.cmp(ib)))
        .map(|(_, (l, _, _))| l.clone())
        .ok_or_else(|| Error::InvalidArgument("no candidates to vote".into()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_class_f1: BTreeMap<String, f64>,
}

/// Accuracy and unweighted mean of per-class F1 over classes seen in either list.
pub fn classification_report<S: AsRef<str>>(predictions: &[S], truths: &[S]) -> Result<ClassificationReport> {
    if predictions.len() != truths.len() {
        return Err(Error::DimensionMismatch {
            expected: truths.len(),
            found: predictions.len(),
        });
    }
    if truths.is_empty() {
        return Err(Error::InvalidArgument("classification report needs at least one item".into()));
    }
    let mut counts: BTreeMap<String, (usize, usize, usize)> = BTreeMap::new();
    let mut correct = 0;
    for (p, t) in predictions.iter().zip(truths) {
        let (p, t) = (p.as_ref(), t.as_ref());
        if p == t {
            correct += 1;
            counts.entry(t.to_string()).or_default().0 += 1;
        } else {
            counts.entry(p.to_string()).or_default().1 += 1;
            counts.entry(t.to_string()).or_default().2 += 1;
        }
    }
    let per_class_f1: BTreeMap<String, f64> = counts
        .into_iter()
        .map(|(label, (tp, fp, fn_))| {
            let denom = 2 * tp + fp + fn_;
            let f1 = if denom == 0 { 0.0 } else { 2.0 * tp as f64 / denom as f64 };
            (label, f1)
        })
        .collect();
    let macro_f1 = per_class_f1.values().sum::<f64>() / per_class_f1.len() as f64;
    Ok(ClassificationReport {
        accuracy: correct as f64 / truths.len() as f64,
        macro_f1,
        per_class_f1,
    })
}

/// Leave-one-out k-NN classification of every index entry.
pub fn knn_report(index: &Index, k: usize) -> Result<ClassificationReport> {
    let predictions: Vec<String> = index
        .entries()
        .par_iter()
        .map(|e| knn_classify(index, &e.embedding, k, Some(&e.id)))
        .collect::<Result<_>>()?;
    let truths: Vec<String> = index.entries().iter().map(|e| e.lesion_type.clone()).collect();
    classification_report(&predictions, &truths)
}
