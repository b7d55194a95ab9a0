//! Threshold selection, point classification and detection metrics.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `(1+β²)·P·R / (β²·P + R)`, defined as 0 when `P = R = 0`.
pub fn f_beta(precision: f64, recall: f64, beta: f64) -> f64 {
    let b2 = beta * beta;
    let den = b2 * precision + recall;
    if den == 0.0 {
        return 0.0;
    }
    (1.0 + b2) * precision * recall / den
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMethod {
    Supervised,
    Unsupervised,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub tau: f64,
    pub method: ThresholdMethod,
    pub beta: Option<f64>,
    pub candidate_count: Option<usize>,
    pub best_f_beta: Option<f64>,
    pub score_mean: Option<f64>,
    pub score_std: Option<f64>,
}

fn check_scores(scores: &[f64]) -> Result<()> {
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("anomaly scores".into()));
    }
    Ok(())
}

/// Exhaustive F_β maximization over the unique scores plus `max + 1`.
/// Among equal F_β the largest threshold wins.
pub fn select_threshold_supervised(scores: &[f64], truth: &[bool], beta: f64) -> Result<Threshold> {
    if scores.len() != truth.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} scores with {} labels",
            scores.len(),
            truth.len()
        )));
    }
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(Error::InvalidConfig(format!("beta must be positive, got {beta}")));
    }
    check_scores(scores)?;
    let positives = truth.iter().filter(|&&t| t).count();
    if positives == 0 || positives == truth.len() {
        return Err(Error::DegenerateValidation(format!(
            "{positives} anomalous among {} points; need both classes",
            truth.len()
        )));
    }

    // Sweep descending: after consuming every point with score > τ we know
    // TP and FP for threshold τ.
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let max = scores[order[0]];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut best = (f_beta(0.0, 0.0, beta), max + 1.0);
    let mut candidates = 1usize;
    let mut i = 0;
    while i < order.len() {
        let tau = scores[order[i]];
        candidates += 1;
        // points strictly above tau are already counted
        let precision = if tp + fp > 0 { tp as f64 / (tp + fp) as f64 } else { 0.0 };
        let f = f_beta(precision, tp as f64 / positives as f64, beta);
        if f > best.0 {
            best = (f, tau);
        }
        while i < order.len() && scores[order[i]] == tau {
            if truth[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
    }
    Ok(Threshold {
        tau: best.1,
        method: ThresholdMethod::Supervised,
        beta: Some(beta),
        candidate_count: Some(candidates),
        best_f_beta: Some(best.0),
        score_mean: None,
        score_std: None,
    })
}

/// `τ = mean + population standard deviation` of the given scores.
pub fn select_threshold_unsupervised(scores: &[f64]) -> Result<Threshold> {
    if scores.len() < 2 {
        return Err(Error::EmptySubset(format!(
            "unsupervised threshold needs at least 2 scores, got {}",
            scores.len()
        )));
    }
    check_scores(scores)?;
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let std = (scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n).sqrt();
    Ok(Threshold {
        tau: mean + std,
        method: ThresholdMethod::Unsupervised,
        beta: None,
        candidate_count: None,
        best_f_beta: None,
        score_mean: Some(mean),
        score_std: Some(std),
    })
}

/// `a > τ` is anomalous; equality is normal.
pub fn classify(scores: &[f64], tau: f64) -> Vec<bool> {
    scores.iter().map(|&a| a > tau).collect()
}

/// TPR/FPR with explicit sentinels for a zero denominator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LikelihoodRatio {
    Finite(f64),
    /// FPR = 0 and TPR > 0.
    Infinite,
    /// TPR = FPR = 0.
    Undefined,
}

impl LikelihoodRatio {
    pub fn value(&self) -> f64 {
        match self {
            LikelihoodRatio::Finite(v) => *v,
            LikelihoodRatio::Infinite => f64::INFINITY,
            LikelihoodRatio::Undefined => f64::NAN,
        }
    }
}

impl fmt::Display for LikelihoodRatio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LikelihoodRatio::Finite(v) => write!(f, "{v:.2}"),
            LikelihoodRatio::Infinite => f.write_str("inf"),
            LikelihoodRatio::Undefined => f.write_str("undef"),
        }
    }
}

impl Serialize for LikelihoodRatio {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            LikelihoodRatio::Finite(v) => s.serialize_f64(*v),
            other => s.serialize_str(&other.to_string()),
        }
    }
}

impl<'de> Deserialize<'de> for LikelihoodRatio {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(LikelihoodRatio::Finite(v)),
            Raw::Text(t) if t == "inf" => Ok(LikelihoodRatio::Infinite),
            Raw::Text(t) if t == "undef" => Ok(LikelihoodRatio::Undefined),
            Raw::Text(t) => Err(serde::de::Error::custom(format!("bad likelihood ratio `{t}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub beta: f64,
    pub f_beta: f64,
    pub tpr: f64,
    pub fpr: f64,
    pub plr: LikelihoodRatio,
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Point-level confusion counts and rates; anomalous is the positive class.
pub fn evaluate(pred: &[bool], truth: &[bool], beta: f64) -> Result<Metrics> {
    if pred.len() != truth.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} predictions for {} labels",
            pred.len(),
            truth.len()
        )));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&p, &t) in pred.iter().zip(truth) {
        match (p, t) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let fpr = ratio(fp, fp + tn);
    let plr = if fpr > 0.0 {
        LikelihoodRatio::Finite(recall / fpr)
    } else if recall > 0.0 {
        LikelihoodRatio::Infinite
    } else {
        LikelihoodRatio::Undefined
    };
    Ok(Metrics {
        tp,
        fp,
        tn,
        fn_,
        precision,
        recall,
        beta,
        f_beta: f_beta(precision, recall, beta),
        tpr: recall,
        fpr,
        plr,
    })
}

/// Probability that a random positive outranks a random negative (ties count half).
pub fn ranking_auc(scores: &[f64], truth: &[bool]) -> Result<f64> {
    if scores.len() != truth.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} scores with {} labels",
            scores.len(),
            truth.len()
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // average ranks over tie groups
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j + 1) as f64 / 2.0;
        rank_sum_pos += avg_rank * order[i..j].iter().filter(|&&k| truth[k]).count() as f64;
        i = j;
    }
    let np = truth.iter().filter(|&&t| t).count() as f64;
    let nn = truth.len() as f64 - np;
    if np == 0.0 || nn == 0.0 {
        return Err(Error::DegenerateValidation("AUC needs both classes".into()));
    }
    Ok((rank_sum_pos - np * (np + 1.0) / 2.0) / (np * nn))
}

/// One results-table row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub dataset: String,
    pub window_length: usize,
    pub hidden_size: usize,
    pub threshold: Threshold,
    pub metrics: Metrics,
}

pub fn format_table(rows: &[ReportRow]) -> String {
    let mut out = format!(
        "{:<16} {:>5} {:>5} {:>6} {:>6} {:>6} {:>7} {:>9}\n",
        "dataset", "L", "c", "beta", "P", "R", "F_beta", "TPR/FPR"
    );
    for r in rows {
        let m = &r.metrics;
        out.push_str(&format!(
            "{:<16} {:>5} {:>5} {:>6} {:>6.2} {:>6.2} {:>7.2} {:>9}\n",
            r.dataset,
            r.window_length,
            r.hidden_size,
            m.beta,
            m.precision,
            m.recall,
            m.f_beta,
            m.plr.to_string()
        ));
    }
    out
}
