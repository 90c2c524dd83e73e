//! Volumetric overlap metrics and their per-dataset aggregation.

use serde::Serialize;

use crate::error::{Error, Result};

/// Voxel-level confusion counts between a predicted and a reference mask.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Confusion {
    pub true_pos: u64,
    pub false_pos: u64,
    pub false_neg: u64,
    pub true_neg: u64,
}

impl Confusion {
    pub fn add(&mut self, other: &Confusion) {
        self.true_pos += other.true_pos;
        self.false_pos += other.false_pos;
        self.false_neg += other.false_neg;
        self.true_neg += other.true_neg;
    }

    pub fn pred_count(&self) -> u64 {
        self.true_pos + self.false_pos
    }

    pub fn truth_count(&self) -> u64 {
        self.true_pos + self.false_neg
    }
}

/// Count agreement between two binary masks; any nonzero voxel is foreground.
pub fn confusion(pred: &[u8], truth: &[u8]) -> Result<Confusion> {
    if pred.len() != truth.len() {
        return Err(Error::dim(format!(
            "prediction ({}) and reference ({}) sizes differ",
            pred.len(),
            truth.len()
        )));
    }
    let mut c = Confusion::default();
    for (&p, &t) in pred.iter().zip(truth) {
        match (p != 0, t != 0) {
            (true, true) => c.true_pos += 1,
            (true, false) => c.false_pos += 1,
            (false, true) => c.false_neg += 1,
            (false, false) => c.true_neg += 1,
        }
    }
    Ok(c)
}

/// Dice overlap; two empty masks count as perfect agreement.
pub fn dice(c: &Confusion) -> f64 {
    let denom = 2 * c.true_pos + c.false_pos + c.false_neg;
    if denom == 0 {
        1.0
    } else {
        2.0 * c.true_pos as f64 / denom as f64
    }
}

/// Volumetric overlap error, one minus intersection over union.
pub fn voe(c: &Confusion) -> f64 {
    let union = c.true_pos + c.false_pos + c.false_neg;
    if union == 0 {
        0.0
    } else {
        1.0 - c.true_pos as f64 / union as f64
    }
}

/// Signed relative volume difference; undefined for an empty reference.
pub fn rvd(c: &Confusion) -> Option<f64> {
    let truth = c.truth_count();
    if truth == 0 {
        None
    } else {
        Some((c.pred_count() as f64 - truth as f64) / truth as f64)
    }
}

/// Sensitivity; undefined when the reference has no foreground.
pub fn tpr(c: &Confusion) -> Option<f64> {
    let pos = c.true_pos + c.false_neg;
    (pos > 0).then(|| c.true_pos as f64 / pos as f64)
}

/// Specificity; undefined when the reference has no background.
pub fn tnr(c: &Confusion) -> Option<f64> {
    let neg = c.true_neg + c.false_pos;
    (neg > 0).then(|| c.true_neg as f64 / neg as f64)
}

/// Balanced accuracy, the mean of sensitivity and specificity.
pub fn accuracy(c: &Confusion) -> Option<f64> {
    match (tpr(c), tnr(c)) {
        (Some(a), Some(b)) => Some(0.5 * (a + b)),
        _ => None,
    }
}

/// Metrics of a single evaluated case.
#[derive(Debug, Clone, Serialize)]
pub struct CaseMetrics {
    pub case_id: String,
    pub dice: f64,
    pub voe: f64,
    pub rvd: Option<f64>,
    pub tpr: Option<f64>,
    pub tnr: Option<f64>,
    pub acc: Option<f64>,
    pub confusion: Confusion,
}

impl CaseMetrics {
    pub fn from_masks(case_id: impl Into<String>, pred: &[u8], truth: &[u8]) -> Result<Self> {
        let c = confusion(pred, truth)?;
        Ok(CaseMetrics {
            case_id: case_id.into(),
            dice: dice(&c),
            voe: voe(&c),
            rvd: rvd(&c),
            tpr: tpr(&c),
            tnr: tnr(&c),
            acc: accuracy(&c),
            confusion: c,
        })
    }
}

/// Aggregated evaluation over a set of cases.
#[derive(Debug, Clone, Serialize)]
pub struct MetricsReport {
    pub cases: Vec<CaseMetrics>,
    /// Mean of per-case dice scores.
    pub dice_per_case: f64,
    /// Dice of the confusion counts pooled over all cases.
    pub dice_global: f64,
    pub mean_voe: f64,
    /// Mean signed volume difference over cases with a nonempty reference.
    pub mean_rvd: Option<f64>,
    /// Cases skipped by the volume-difference mean.
    pub rvd_excluded: usize,
    pub mean_tpr: Option<f64>,
    pub mean_tnr: Option<f64>,
    pub mean_acc: Option<f64>,
}

fn mean_of(vals: impl Iterator<Item = Option<f64>>) -> (Option<f64>, usize) {
    let mut sum = 0.0;
    let mut n = 0usize;
    let mut skipped = 0usize;
    for v in vals {
        match v {
            Some(x) => {
                sum += x;
                n += 1;
            }
            None => skipped += 1,
        }
    }
    ((n > 0).then(|| sum / n as f64), skipped)
}

/// Combine per-case metrics into a report.
pub fn aggregate(cases: Vec<CaseMetrics>) -> Result<MetricsReport> {
    if cases.is_empty() {
        return Err(Error::usage("cannot aggregate zero cases"));
    }
    let n = cases.len() as f64;
    let dice_per_case = cases.iter().map(|c| c.dice).sum::<f64>() / n;
    let mean_voe = cases.iter().map(|c| c.voe).sum::<f64>() / n;
    let mut pooled = Confusion::default();
    for c in &cases {
        pooled.add(&c.confusion);
    }
    let (mean_rvd, rvd_excluded) = mean_of(cases.iter().map(|c| c.rvd));
    let (mean_tpr, _) = mean_of(cases.iter().map(|c| c.tpr));
    let (mean_tnr, _) = mean_of(cases.iter().map(|c| c.tnr));
    let (mean_acc, _) = mean_of(cases.iter().map(|c| c.acc));
    Ok(MetricsReport {
        dice_per_case,
        dice_global: dice(&pooled),
        mean_voe,
        mean_rvd,
        rvd_excluded,
        mean_tpr,
        mean_tnr,
        mean_acc,
        cases,
    })
}

fn csv_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

impl MetricsReport {
    /// Fixed-field CSV: one row per case, a `mean` row, and a `pooled` row
    /// carrying the globally pooled dice.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("case_id,dice,voe,rvd,tpr,tnr,acc\n");
        for c in &self.cases {
            s.push_str(&format!(
                "{},{:.6},{:.6},{},{},{},{}\n",
                c.case_id,
                c.dice,
                c.voe,
                csv_opt(c.rvd),
                csv_opt(c.tpr),
                csv_opt(c.tnr),
                csv_opt(c.acc),
            ));
        }
        s.push_str(&format!(
            "mean,{:.6},{:.6},{},{},{},{}\n",
            self.dice_per_case,
            self.mean_voe,
            csv_opt(self.mean_rvd),
            csv_opt(self.mean_tpr),
            csv_opt(self.mean_tnr),
            csv_opt(self.mean_acc),
        ));
        s.push_str(&format!("pooled,{:.6},,,,,\n", self.dice_global));
        s
    }

    /// Human-readable table.
    pub fn to_table(&self) -> String {
        fn cell(v: Option<f64>) -> String {
            v.map(|x| format!("{x:8.4}")).unwrap_or_else(|| format!("{:>8}", "-"))
        }
        let mut s = format!(
            "{:<16} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}\n",
            "case", "dice", "voe", "rvd", "tpr", "tnr", "acc"
        );
        for c in &self.cases {
            s.push_str(&format!(
                "{:<16} {:8.4} {:8.4} {} {} {} {}\n",
                c.case_id,
                c.dice,
                c.voe,
                cell(c.rvd),
                cell(c.tpr),
                cell(c.tnr),
                cell(c.acc),
            ));
        }
        s.push_str(&format!(
            "{:<16} {:8.4} {:8.4} {} {} {} {}\n",
            "mean",
            self.dice_per_case,
            self.mean_voe,
            cell(self.mean_rvd),
            cell(self.mean_tpr),
            cell(self.mean_tnr),
            cell(self.mean_acc),
        ));
        s.push_str(&format!("dice pooled over all voxels: {:.4}\n", self.dice_global));
        if self.rvd_excluded > 0 {
            s.push_str(&format!(
                "warning: {} case(s) with empty reference excluded from mean rvd\n",
                self.rvd_excluded
            ));
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }
}
