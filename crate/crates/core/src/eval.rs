//! Group-level confusion counts and the metrics derived from them.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{BrowsingRecord, GroundTruth};
use crate::error::{Error, Result};
use crate::linker::{link_rankings, score_components, LinkerConfig, Prediction, Rankings};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Confusion {
    pub fn new(tp: u64, fp: u64, tn: u64, fn_: u64) -> Self {
        Confusion { tp, fp, tn, fn_ }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

impl std::ops::AddAssign for Confusion {
    fn add_assign(&mut self, o: Confusion) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.tn += o.tn;
        self.fn_ += o.fn_;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
    /// No predicted groups; precision reported as 0.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub precision_undefined: bool,
    /// No positives at all; recall reported as 0.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub recall_undefined: bool,
}

/// What counts as a correctly predicted group.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchMode {
    /// The group is exactly one user's tracked devices.
    #[default]
    Strict,
    /// All members belong to one user.
    Lenient,
}

/// Number of tracked devices per user, where tracked means predicted.
fn tracked_counts<'t>(pred: &Prediction, truth: &'t GroundTruth) -> Result<HashMap<&'t str, usize>> {
    let mut counts = HashMap::new();
    for d in pred.devices() {
        let user = truth.user_of(d).ok_or_else(|| Error::UnknownDevice(d.to_string()))?;
        *counts.entry(user).or_insert(0) += 1;
    }
    Ok(counts)
}

fn score_with(pred: &Prediction, truth: &GroundTruth, counts: &HashMap<&str, usize>, mode: MatchMode) -> Result<Confusion> {
    let user = |d: &str| truth.user_of(d).ok_or_else(|| Error::UnknownDevice(d.to_string()));
    let mut c = Confusion::default();
    for g in &pred.groups {
        let owners: BTreeSet<&str> = g.iter().map(|d| user(d)).collect::<Result<_>>()?;
        let hit = owners.len() == 1
            && match mode {
                MatchMode::Strict => counts[owners.first().unwrap()] == g.len(),
                MatchMode::Lenient => true,
            };
        if hit {
            c.tp += 1;
        } else {
            c.fp += 1;
        }
    }
    for d in &pred.no_match {
        if counts[user(d)?] == 1 {
            c.tn += 1;
        } else {
            c.fn_ += 1;
        }
    }
    Ok(c)
}

pub fn score_predictions(pred: &Prediction, truth: &GroundTruth, mode: MatchMode) -> Result<Confusion> {
    let counts = tracked_counts(pred, truth)?;
    score_with(pred, truth, &counts, mode)
}

pub fn compute_metrics(c: &Confusion) -> Result<Metrics> {
    if c.total() == 0 {
        return Err(Error::EmptyConfusion);
    }
    let ratio = |num: u64, den: u64| if den == 0 { (0.0, true) } else { (num as f64 / den as f64, false) };
    let (precision, precision_undefined) = ratio(c.tp, c.tp + c.fp);
    let (recall, recall_undefined) = ratio(c.tp, c.tp + c.fn_);
    let f_score = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(Metrics {
        accuracy: (c.tp + c.tn) as f64 / c.total() as f64,
        precision,
        recall,
        f_score,
        precision_undefined,
        recall_undefined,
    })
}

/// Metrics together with the counts they came from.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(flatten)]
    pub metrics: Metrics,
    pub confusion: Confusion,
}

pub fn evaluate(pred: &Prediction, truth: &GroundTruth, mode: MatchMode) -> Result<MetricsReport> {
    let confusion = score_predictions(pred, truth, mode)?;
    Ok(MetricsReport {
        metrics: compute_metrics(&confusion)?,
        confusion,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stratum {
    pub users: usize,
    pub accuracy: f64,
    pub confusion: Confusion,
}

/// Accuracy among users owning a given number of tracked devices.
///
/// A predicted group is scored in every stratum it touches, so a group
/// mixing users of different sizes counts against each of them.
pub fn per_group_size_breakdown(pred: &Prediction, truth: &GroundTruth, mode: MatchMode) -> Result<BTreeMap<usize, Stratum>> {
    let counts = tracked_counts(pred, truth)?;
    let mut strata: BTreeMap<usize, BTreeSet<String>> = BTreeMap::new();
    for d in pred.devices() {
        let n = counts[truth.user_of(d).expect("checked by tracked_counts")];
        strata.entry(n).or_default().insert(d.to_string());
    }
    let mut out = BTreeMap::new();
    for (size, devices) in strata {
        let part = pred.restrict_to(&devices);
        let confusion = score_with(&part, truth, &counts, mode)?;
        let users: BTreeSet<&str> = devices.iter().filter_map(|d| truth.user_of(d)).collect();
        out.insert(
            size,
            Stratum {
                users: users.len(),
                accuracy: compute_metrics(&confusion)?.accuracy,
                confusion,
            },
        );
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub threshold: f64,
    #[serde(flatten)]
    pub report: MetricsReport,
    pub edge_count: usize,
}

/// Difference between a device's best and second best score in one
/// component graph; a lone candidate counts against zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreGap {
    pub component: usize,
    pub device_id: String,
    pub gap: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub points: Vec<SweepPoint>,
    pub gaps: Vec<ScoreGap>,
}

impl Sweep {
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for p in &self.points {
            serde_json::to_writer(&mut w, p)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Plot-ready table, one row per threshold.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record([
            "threshold", "accuracy", "precision", "recall", "f_score", "tp", "fp", "tn", "fn", "edge_count",
        ])
        .map_err(csv_err)?;
        for p in &self.points {
            let (m, c) = (&p.report.metrics, &p.report.confusion);
            wr.write_record([
                p.threshold.to_string(),
                m.accuracy.to_string(),
                m.precision.to_string(),
                m.recall.to_string(),
                m.f_score.to_string(),
                c.tp.to_string(),
                c.fp.to_string(),
                c.tn.to_string(),
                c.fn_.to_string(),
                p.edge_count.to_string(),
            ])
            .map_err(csv_err)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn write_gaps_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        for g in &self.gaps {
            wr.serialize(g).map_err(csv_err)?;
        }
        wr.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Sweep fixed thresholds over precomputed rankings.
pub fn sweep_rankings(
    rankings: &[Rankings],
    cfg: &LinkerConfig,
    thresholds: &[f64],
    truth: &GroundTruth,
    mode: MatchMode,
) -> Result<Sweep> {
    let points = thresholds
        .par_iter()
        .map(|&t| {
            let cfg = LinkerConfig {
                fixed_threshold: Some(t),
                ..cfg.clone()
            };
            let out = link_rankings(rankings, &cfg, None)?;
            Ok(SweepPoint {
                threshold: t,
                report: evaluate(&out.prediction, truth, mode)?,
                edge_count: out.similarity.edge_count(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut gaps = Vec::new();
    for (component, r) in rankings.iter().enumerate() {
        for (list, id) in r.lists.iter().zip(&r.ids) {
            if let Some(first) = list.entries.first() {
                let second = list.entries.get(1).map_or(0.0, |c| c.score);
                gaps.push(ScoreGap {
                    component,
                    device_id: id.clone(),
                    gap: first.score - second,
                });
            }
        }
    }
    Ok(Sweep { points, gaps })
}

/// Score once, then link and evaluate at every threshold.
pub fn threshold_sweep(
    records: &[BrowsingRecord],
    cfg: &LinkerConfig,
    thresholds: &[f64],
    truth: &GroundTruth,
    mode: MatchMode,
) -> Result<Sweep> {
    let rankings = score_components(records, cfg, (cfg.k - 1).max(2))?;
    sweep_rankings(&rankings, cfg, thresholds, truth, mode)
}
