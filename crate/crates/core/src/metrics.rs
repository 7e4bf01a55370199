//! Judge evaluation: confusion counts, precision, negative predictive value
//! and average precision of verdicts against ground truth.

use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("length mismatch: {0} predictions vs {1} labels")]
    LengthMismatch(usize, usize),
    #[error("nothing to score")]
    Empty,
    #[error("no positive example")]
    NoPositives,
    #[error("{0}")]
    Input(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

fn check_lengths(a: usize, b: usize) -> Result<(), MetricsError> {
    if a != b {
        return Err(MetricsError::LengthMismatch(a, b));
    }
    if a == 0 {
        return Err(MetricsError::Empty);
    }
    Ok(())
}

pub fn confusion(preds: &[bool], truth: &[bool]) -> Result<ConfusionMatrix, MetricsError> {
    check_lengths(preds.len(), truth.len())?;
    let mut m = ConfusionMatrix::default();
    for (&p, &t) in preds.iter().zip(truth) {
        match (p, t) {
            (true, true) => m.tp += 1,
            (true, false) => m.fp += 1,
            (false, false) => m.tn += 1,
            (false, true) => m.fn_ += 1,
        }
    }
    Ok(m)
}

/// Precision and NPV; `None` where the denominator is zero.
pub fn precision_npv(m: &ConfusionMatrix) -> (Option<f64>, Option<f64>) {
    let ratio = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
    (ratio(m.tp, m.tp + m.fp), ratio(m.tn, m.tn + m.fn_))
}

/// Mean precision at the rank of each positive, ranking by descending score
/// with ties kept in input order.
pub fn average_precision(scores: &[f64], truth: &[bool]) -> Result<f64, MetricsError> {
    check_lengths(scores.len(), truth.len())?;
    if scores.iter().any(|s| s.is_nan()) {
        return Err(MetricsError::Input("scores contain NaN".into()));
    }
    let positives = truth.iter().filter(|&&t| t).count();
    if positives == 0 {
        return Err(MetricsError::NoPositives);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut hits = 0;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if truth[i] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(sum / positives as f64)
}

/// Score summary of one prediction file against ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub source: String,
    /// Number of judged middle states, when the predictions state it.
    pub history: Option<usize>,
    pub scored: usize,
    /// Predictions without a ground-truth entry.
    pub unmatched: usize,
    pub confusion: ConfusionMatrix,
    pub precision: Option<f64>,
    pub npv: Option<f64>,
    pub average_precision: Option<f64>,
}

#[derive(Deserialize)]
struct Verdict {
    correctness: bool,
    #[serde(default)]
    confidence: Option<f64>,
}

/// A prediction line: either flat `{episode_id, correctness, confidence?}`
/// or a trajectory record carrying a `judgment` object.
#[derive(Deserialize)]
struct PredictionLine {
    episode_id: String,
    #[serde(default)]
    correctness: Option<bool>,
    #[serde(default)]
    confidence: Option<f64>,
    #[serde(default)]
    judgment: Option<Verdict>,
    #[serde(default)]
    history_len: Option<usize>,
}

/// A ground-truth line: `{episode_id, success}` or a trajectory record with
/// `env_success`.
#[derive(Deserialize)]
struct TruthLine {
    episode_id: String,
    #[serde(default)]
    success: Option<bool>,
    #[serde(default)]
    env_success: Option<bool>,
}

pub struct Prediction {
    pub episode_id: String,
    pub correct: bool,
    /// Confidence that the episode succeeded; the verdict as 1/0 otherwise.
    pub score: f64,
    pub history_len: Option<usize>,
}

fn jsonl<T: serde::de::DeserializeOwned>(text: &str, source: &str) -> Result<Vec<T>, MetricsError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| MetricsError::Input(format!("{source}:{}: {e}", i + 1))))
        .collect()
}

pub fn parse_predictions(text: &str, source: &str) -> Result<Vec<Prediction>, MetricsError> {
    let lines: Vec<PredictionLine> = jsonl(text, source)?;
    let mut out = Vec::new();
    for l in lines {
        let (correct, confidence) = match (l.correctness, l.judgment) {
            (Some(c), _) => (c, l.confidence),
            (None, Some(v)) => (v.correctness, v.confidence.or(l.confidence)),
            // Discarded episodes carry no verdict.
            (None, None) => continue,
        };
        out.push(Prediction {
            episode_id: l.episode_id,
            correct,
            score: confidence.unwrap_or(if correct { 1.0 } else { 0.0 }),
            history_len: l.history_len,
        });
    }
    Ok(out)
}

pub fn parse_truth(text: &str, source: &str) -> Result<HashMap<String, bool>, MetricsError> {
    let lines: Vec<TruthLine> = jsonl(text, source)?;
    let mut out = HashMap::new();
    for l in lines {
        let v = l
            .success
            .or(l.env_success)
            .ok_or_else(|| MetricsError::Input(format!("{source}: `{}` has no success field", l.episode_id)))?;
        out.insert(l.episode_id, v);
    }
    Ok(out)
}

pub fn bench_judge(preds: &[Prediction], truth: &HashMap<String, bool>, source: &str) -> Result<BenchReport, MetricsError> {
    let mut p = Vec::new();
    let mut s = Vec::new();
    let mut t = Vec::new();
    let mut unmatched = 0;
    for pred in preds {
        match truth.get(&pred.episode_id) {
            Some(&gt) => {
                p.push(pred.correct);
                s.push(pred.score);
                t.push(gt);
            }
            None => unmatched += 1,
        }
    }
    let m = confusion(&p, &t)?;
    let (precision, npv) = precision_npv(&m);
    let ap = match average_precision(&s, &t) {
        Ok(v) => Some(v),
        Err(MetricsError::NoPositives) => None,
        Err(e) => return Err(e),
    };
    let first = preds.first().and_then(|x| x.history_len);
    let history = preds.iter().all(|x| x.history_len == first).then_some(first).flatten();
    Ok(BenchReport {
        source: source.to_string(),
        history,
        scored: p.len(),
        unmatched,
        confusion: m,
        precision,
        npv,
        average_precision: ap,
    })
}

/// Scores a prediction file against a ground-truth file.
pub fn bench_judge_files(pred: &Path, gt: &Path) -> Result<BenchReport, MetricsError> {
    let read = |p: &Path| std::fs::read_to_string(p).map_err(|e| MetricsError::Input(format!("{}: {e}", p.display())));
    let source = pred.display().to_string();
    let preds = parse_predictions(&read(pred)?, &source)?;
    let truth = parse_truth(&read(gt)?, &gt.display().to_string())?;
    bench_judge(&preds, &truth, &source)
}

/// CSV of the metrics curve across prediction files; the x axis is the
/// stated history length, or the file's position when absent.
pub fn curve_csv(reports: &[BenchReport]) -> String {
    let cell = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.6}"));
    let mut out = String::from("history,source,scored,precision,npv,average_precision\n");
    for (i, r) in reports.iter().enumerate() {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.history.unwrap_or(i + 1),
            r.source.replace(',', "_"),
            r.scored,
            cell(r.precision),
            cell(r.npv),
            cell(r.average_precision)
        ));
    }
    out
}
