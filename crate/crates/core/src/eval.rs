//! Extreme-event labels and ROC scoring of causal-magnitude series.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::causal::MagnitudeSeries;
use crate::dynamics::fmt_f64;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMethod {
    GammaSigma,
    Oni,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventLabels {
    pub labels: Vec<u8>,
    pub positive_count: usize,
    pub method: LabelMethod,
    /// ONI only: +1 inside warm events, -1 inside cold events.
    pub phase: Option<Vec<i8>>,
}

impl EventLabels {
    fn new(labels: Vec<u8>, method: LabelMethod, phase: Option<Vec<i8>>) -> Self {
        let positive_count = labels.iter().filter(|&&l| l == 1).count();
        Self {
            labels,
            positive_count,
            method,
            phase,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Labels at the given sample indices.
    pub fn select(&self, idx: &[usize]) -> Result<EventLabels> {
        let labels = idx
            .iter()
            .map(|&i| {
                self.labels
                    .get(i)
                    .copied()
                    .ok_or_else(|| Error::Dimension(format!("no label for sample {i}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let phase = self.phase.as_ref().map(|p| idx.iter().map(|&i| p[i]).collect());
        Ok(EventLabels::new(labels, self.method, phase))
    }
}

/// 1 where `|x - mean| >= gamma * sigma` with the population standard
/// deviation. A constant series has no extremes.
pub fn extreme_labels(series: &[f64], gamma: f64) -> Result<EventLabels> {
    if series.len() < 2 {
        return Err(Error::InvalidArgument("need at least two samples to label extremes".into()));
    }
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::InvalidArgument(format!("gamma {gamma} outside [0, 1]")));
    }
    if series.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument("series is not finite".into()));
    }
    let n = series.len() as f64;
    let mean = series.iter().sum::<f64>() / n;
    let sigma = (series.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt();
    let labels = if sigma == 0.0 {
        vec![0; series.len()]
    } else {
        series
            .iter()
            .map(|x| u8::from((x - mean).abs() >= gamma * sigma))
            .collect()
    };
    Ok(EventLabels::new(labels, LabelMethod::GammaSigma, None))
}

/// Centred 3-month running mean; the first and last months average the two
/// months available.
pub fn running_mean3(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    (0..n)
        .map(|m| {
            let lo = m.saturating_sub(1);
            let hi = (m + 2).min(n);
            x[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

/// Minimum run of qualifying running means that makes an event.
pub const ONI_MIN_RUN: usize = 5;

/// Warm / cold episodes: runs of at least five running means at or beyond
/// `+threshold` / `-threshold`. Anomalies are taken as given, no baseline is
/// removed here.
pub fn oni_labels(sst_anomaly: &[f64], threshold: f64) -> Result<EventLabels> {
    if sst_anomaly.len() < 7 {
        return Err(Error::InvalidArgument(format!(
            "ONI labelling needs at least 7 months, got {}",
            sst_anomaly.len()
        )));
    }
    if !(threshold >= 0.0) {
        return Err(Error::InvalidArgument(format!("threshold {threshold} must be >= 0")));
    }
    let rm = running_mean3(sst_anomaly);
    let mut phase = vec![0i8; rm.len()];
    for sign in [1i8, -1] {
        let hit = |v: f64| f64::from(sign) * v >= threshold;
        let mut start = 0;
        while start < rm.len() {
            if !hit(rm[start]) {
                start += 1;
                continue;
            }
            let mut end = start;
            while end < rm.len() && hit(rm[end]) {
                end += 1;
            }
            if end - start >= ONI_MIN_RUN {
                phase[start..end].fill(sign);
            }
            start = end;
        }
    }
    let labels = phase.iter().map(|&p| u8::from(p != 0)).collect();
    Ok(EventLabels::new(labels, LabelMethod::Oni, Some(phase)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// Descending; the first is `+inf` for the empty prediction set.
    pub thresholds: Vec<f64>,
    pub fpr: Vec<f64>,
    pub tpr: Vec<f64>,
    pub auroc: f64,
    pub positives: usize,
    pub negatives: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocSummary {
    pub auroc: f64,
    pub positives: usize,
    pub negatives: usize,
}

impl RocCurve {
    pub fn summary(&self) -> RocSummary {
        RocSummary {
            auroc: self.auroc,
            positives: self.positives,
            negatives: self.negatives,
        }
    }

    /// CSV `threshold,fpr,tpr`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "threshold,fpr,tpr")?;
        for i in 0..self.thresholds.len() {
            writeln!(
                w,
                "{},{},{}",
                fmt_f64(self.thresholds[i]),
                fmt_f64(self.fpr[i]),
                fmt_f64(self.tpr[i])
            )?;
        }
        Ok(())
    }

    pub fn summary_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.summary())?)
    }
}

/// Area under the ROC curve via the Mann-Whitney statistic, ties counted
/// one half, together with the full curve.
pub fn auroc(scores: &[f64], labels: &EventLabels) -> Result<RocCurve> {
    if scores.len() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidArgument("scores contain NaN".into()));
    }
    let positives = labels.positive_count;
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::SingleClass { positives, negatives });
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    // Walk tie groups from the highest score down. Twice the U statistic
    // stays an integer.
    let mut thresholds = vec![f64::INFINITY];
    let mut fpr = vec![0.0];
    let mut tpr = vec![0.0];
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut u2: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let (mut gp, mut gn) = (0u64, 0u64);
        while i < order.len() && scores[order[i]] == s {
            if labels.labels[order[i]] == 1 {
                gp += 1;
            } else {
                gn += 1;
            }
            i += 1;
        }
        // Each positive in the group beats every negative strictly below
        // and ties with the group's negatives.
        let negatives_below = negatives as u64 - fp - gn;
        u2 += gp * (2 * negatives_below + gn);
        tp += gp;
        fp += gn;
        thresholds.push(s);
        fpr.push(fp as f64 / negatives as f64);
        tpr.push(tp as f64 / positives as f64);
    }
    let pairs2 = 2 * positives as u64 * negatives as u64;
    // Dividing the smaller side keeps auroc(s) + auroc(-s) == 1 exactly.
    let complement = pairs2 - u2;
    let auroc = if u2 <= complement {
        u2 as f64 / pairs2 as f64
    } else {
        1.0 - complement as f64 / pairs2 as f64
    };
    Ok(RocCurve {
        thresholds,
        fpr,
        tpr,
        auroc,
        positives,
        negatives,
    })
}

/// Scores each window's magnitude against the label of the sample it
/// predicts (the window's last sample).
pub fn magnitude_auroc(series: &MagnitudeSeries, labels: &EventLabels) -> Result<RocCurve> {
    let aligned = labels.select(&series.label_indices())?;
    auroc(&series.magnitude, &aligned)
}
