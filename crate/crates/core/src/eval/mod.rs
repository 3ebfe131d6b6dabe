//! Binary classification metrics with bona fide as the positive class.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Label;
use crate::error::{Error, Result};

pub const REPORT_FILE: &str = "report.json";
pub const ROC_FILE: &str = "roc.csv";
pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// A classifier score with the true label.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scored {
    pub score: f64,
    pub label: Label,
}

impl Scored {
    pub fn new(score: f64, label: Label) -> Self {
        Scored { score, label }
    }
}

fn check_scores(set: &[Scored]) -> Result<()> {
    if set.is_empty() {
        return Err(Error::EmptyInput("no scored samples".into()));
    }
    if let Some(bad) = set.iter().find(|s| !s.score.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "non-finite score {}",
            bad.score
        )));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Confusion {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn accuracy(&self) -> f64 {
        (self.tp + self.tn) as f64 / self.total() as f64
    }

    /// `tp / (tp + fn)`, `None` without positives.
    pub fn tpr(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// `fp / (fp + tn)`, `None` without negatives.
    pub fn fpr(&self) -> Option<f64> {
        ratio(self.fp, self.fp + self.tn)
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Threshold-level summary.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdStats {
    pub threshold: f64,
    pub confusion: Confusion,
    pub accuracy: f64,
    pub tpr: Option<f64>,
    pub fpr: Option<f64>,
}

/// Counts at `threshold`; `score >= threshold` predicts bona fide.
pub fn confusion(set: &[Scored], threshold: f64) -> Result<ThresholdStats> {
    check_scores(set)?;
    let mut c = Confusion::default();
    for s in set {
        match (s.score >= threshold, s.label) {
            (true, Label::BonaFide) => c.tp += 1,
            (true, Label::Attack) => c.fp += 1,
            (false, Label::Attack) => c.tn += 1,
            (false, Label::BonaFide) => c.fn_ += 1,
        }
    }
    Ok(ThresholdStats {
        threshold,
        confusion: c,
        accuracy: c.accuracy(),
        tpr: c.tpr(),
        fpr: c.fpr(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
}

/// ROC points for a descending sweep over the distinct scores, starting at
/// `(0, 0)` and ending at `(1, 1)`. Tied scores move together.
pub fn roc_curve(set: &[Scored]) -> Result<Vec<RocPoint>> {
    check_scores(set)?;
    let pos = set.iter().filter(|s| s.label == Label::BonaFide).count();
    let neg = set.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::DegenerateInput("ROC needs both labels".into()));
    }
    let mut sorted = set.to_vec();
    sorted.sort_by(|a, b| b.score.total_cmp(&a.score));
    let mut points = vec![RocPoint { fpr: 0.0, tpr: 0.0 }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let s = sorted[i].score;
        while i < sorted.len() && sorted[i].score == s {
            match sorted[i].label {
                Label::BonaFide => tp += 1,
                Label::Attack => fp += 1,
            }
            i += 1;
        }
        points.push(RocPoint {
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
        });
    }
    Ok(points)
}

/// Trapezoidal area under a ROC polyline.
pub fn auc(points: &[RocPoint]) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "AUC needs at least 2 points, got {}",
            points.len()
        )));
    }
    Ok(points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[0].tpr + w[1].tpr) / 2.0)
        .sum())
}

/// Everything reported for one scored set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub threshold: f64,
    pub samples: u64,
    pub confusion: Confusion,
    pub accuracy: f64,
    pub tpr: Option<f64>,
    pub fpr: Option<f64>,
    pub auc: f64,
    pub roc: Vec<RocPoint>,
}

pub fn evaluate(set: &[Scored], threshold: f64) -> Result<EvalReport> {
    let stats = confusion(set, threshold)?;
    let roc = roc_curve(set)?;
    Ok(EvalReport {
        threshold,
        samples: set.len() as u64,
        confusion: stats.confusion,
        accuracy: stats.accuracy,
        tpr: stats.tpr,
        fpr: stats.fpr,
        auc: auc(&roc)?,
        roc,
    })
}

/// Writes `report.json` and `roc.csv` into `dir`.
pub fn emit_report(report: &EvalReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut json =
        serde_json::to_string_pretty(report).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    json.push('\n');
    let path = dir.join(REPORT_FILE);
    fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    let mut csv = String::from("fpr,tpr\n");
    for p in &report.roc {
        // `{:?}` prints the shortest round-tripping decimal
        writeln!(csv, "{:?},{:?}", p.fpr, p.tpr).expect("string write");
    }
    let path = dir.join(ROC_FILE);
    fs::write(&path, csv).map_err(|e| Error::io(&path, e))
}

pub fn load_report(dir: &Path) -> Result<EvalReport> {
    let path = dir.join(REPORT_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path,
        line: e.line(),
        message: e.to_string(),
    })
}

/// Reads `roc.csv` back into points.
pub fn load_roc_csv(dir: &Path) -> Result<Vec<RocPoint>> {
    let path = dir.join(ROC_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "fpr,tpr")) => {}
        _ => {
            return Err(Error::Parse {
                path,
                line: 1,
                message: "expected header fpr,tpr".into(),
            })
        }
    }
    lines
        .map(|(i, line)| {
            let bad = |m: &str| Error::Parse {
                path: path.clone(),
                line: i + 1,
                message: m.to_string(),
            };
            let (a, b) = line
                .split_once(',')
                .ok_or_else(|| bad("expected two fields"))?;
            Ok(RocPoint {
                fpr: a.parse().map_err(|_| bad("bad fpr"))?,
                tpr: b.parse().map_err(|_| bad("bad tpr"))?,
            })
        })
        .collect()
}
