//! Overlap metrics and per-slice size profiles.

use std::fmt::Write as _;

use crate::data::MaskVolume;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    fn add(&mut self, o: &ConfusionCounts) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
        self.tn += o.tn;
    }

    /// `TP/(TP+FP)`; 1 when nothing was predicted and nothing was missed.
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp, self.fn_)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_, self.fp)
    }

    /// `2TP/(2TP+FP+FN)`, which equals the harmonic mean of precision and recall.
    pub fn f1(&self) -> f64 {
        ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_, 0)
    }

    pub fn iou(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp + self.fn_, 0)
    }

    pub fn dice(&self) -> f64 {
        self.f1()
    }
}

/// `num/den`, with the empty case resolved to 1 if `other` is also zero
/// (nothing to find, nothing wrongly found) and 0 otherwise.
fn ratio(num: u64, den: u64, other: u64) -> f64 {
    if den == 0 {
        if other == 0 {
            1.0
        } else {
            0.0
        }
    } else {
        num as f64 / den as f64
    }
}

fn check_dims(pred: &MaskVolume, gt: &MaskVolume) -> Result<()> {
    if pred.dims() != gt.dims() {
        return Err(Error::shape(
            "metrics",
            format!("prediction dims {:?} differ from reference dims {:?}", pred.dims(), gt.dims()),
        ));
    }
    Ok(())
}

fn count(pred: &[u8], gt: &[u8]) -> ConfusionCounts {
    let mut c = ConfusionCounts::default();
    for (&p, &g) in pred.iter().zip(gt) {
        match (p, g) {
            (1, 1) => c.tp += 1,
            (1, _) => c.fp += 1,
            (_, 1) => c.fn_ += 1,
            _ => c.tn += 1,
        }
    }
    c
}

pub fn confusion_counts(pred: &MaskVolume, gt: &MaskVolume) -> Result<ConfusionCounts> {
    check_dims(pred, gt)?;
    Ok(count(pred.data(), gt.data()))
}

/// Per-slice confusion counts.
pub fn slice_counts(pred: &MaskVolume, gt: &MaskVolume) -> Result<Vec<ConfusionCounts>> {
    check_dims(pred, gt)?;
    Ok((0..gt.slices()).map(|t| count(pred.slice(t), gt.slice(t))).collect())
}

/// Foreground fraction of each slice.
pub fn size_profile(mask: &MaskVolume) -> Vec<f64> {
    let n = mask.slice_len() as f64;
    (0..mask.slices())
        .map(|t| mask.slice(t).iter().map(|&v| f64::from(v)).sum::<f64>() / n)
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricSet {
    pub case_id: String,
    pub counts: ConfusionCounts,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub iou: f64,
    /// Mean per-slice Dice over slices where either mask is nonempty.
    pub dsc: f64,
    pub gt_profile: Vec<f64>,
    pub pred_profile: Vec<f64>,
}

/// Precision, recall, F1 and IoU from volume-wide counts; DSC averaged over
/// slices. Slices empty in both masks are left out of the DSC mean, and a
/// volume empty in both scores 1 everywhere.
pub fn volume_metrics(case_id: &str, pred: &MaskVolume, gt: &MaskVolume) -> Result<MetricSet> {
    let per_slice = slice_counts(pred, gt)?;
    let mut counts = ConfusionCounts::default();
    for c in &per_slice {
        counts.add(c);
    }
    let scored: Vec<f64> = per_slice
        .iter()
        .filter(|c| c.tp + c.fp + c.fn_ > 0)
        .map(ConfusionCounts::dice)
        .collect();
    let dsc = if scored.is_empty() {
        1.0
    } else {
        scored.iter().sum::<f64>() / scored.len() as f64
    };
    Ok(MetricSet {
        case_id: case_id.to_string(),
        counts,
        precision: counts.precision(),
        recall: counts.recall(),
        f1: counts.f1(),
        iou: counts.iou(),
        dsc,
        gt_profile: size_profile(gt),
        pred_profile: size_profile(pred),
    })
}

/// Mean of each metric across volumes.
#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub iou: f64,
    pub dsc: f64,
    pub cases: usize,
}

pub fn aggregate_report(per_volume: &[MetricSet]) -> Result<Summary> {
    if per_volume.is_empty() {
        return Err(Error::invalid("aggregate_report", "no evaluated volumes"));
    }
    let n = per_volume.len() as f64;
    let mean = |f: fn(&MetricSet) -> f64| per_volume.iter().map(f).sum::<f64>() / n;
    Ok(Summary {
        precision: mean(|m| m.precision),
        recall: mean(|m| m.recall),
        f1: mean(|m| m.f1),
        iou: mean(|m| m.iou),
        dsc: mean(|m| m.dsc),
        cases: per_volume.len(),
    })
}

pub const REPORT_HEADER: &str = "case,precision,recall,f1,dsc,iou";
pub const PROFILE_HEADER: &str = "case,slice,gt_rel_size,pred_rel_size";

/// Per-case rows plus a `MEAN` footer, columns as in [`report_table`].
pub fn report_csv(per_volume: &[MetricSet], summary: &Summary) -> String {
    let mut s = format!("{REPORT_HEADER}\n");
    for m in per_volume {
        let _ = writeln!(
            s,
            "{},{:.6},{:.6},{:.6},{:.6},{:.6}",
            m.case_id, m.precision, m.recall, m.f1, m.dsc, m.iou
        );
    }
    let _ = writeln!(
        s,
        "MEAN,{:.6},{:.6},{:.6},{:.6},{:.6}",
        summary.precision, summary.recall, summary.f1, summary.dsc, summary.iou
    );
    s
}

/// Aligned text table in the column order Precision, Recall, F1-score, DSC, IoU.
pub fn report_table(per_volume: &[MetricSet], summary: &Summary) -> String {
    let width = per_volume.iter().map(|m| m.case_id.len()).max().unwrap_or(0).max(4);
    let mut s = format!(
        "{:<width$}  {:>9}  {:>9}  {:>9}  {:>9}  {:>9}\n",
        "case", "Precision", "Recall", "F1-score", "DSC", "IoU"
    );
    let mut row = |id: &str, p: f64, r: f64, f: f64, d: f64, i: f64| {
        let _ = writeln!(s, "{id:<width$}  {p:>9.4}  {r:>9.4}  {f:>9.4}  {d:>9.4}  {i:>9.4}");
    };
    for m in per_volume {
        row(&m.case_id, m.precision, m.recall, m.f1, m.dsc, m.iou);
    }
    row("MEAN", summary.precision, summary.recall, summary.f1, summary.dsc, summary.iou);
    s
}

/// Profile rows for every case, header included.
pub fn profile_csv(per_volume: &[MetricSet]) -> String {
    let mut s = format!("{PROFILE_HEADER}\n");
    for m in per_volume {
        for (t, (g, p)) in m.gt_profile.iter().zip(&m.pred_profile).enumerate() {
            let _ = writeln!(s, "{},{},{:.6},{:.6}", m.case_id, t, g, p);
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(s: usize, h: usize, w: usize, v: &[u8]) -> MaskVolume {
        MaskVolume::new("m", [s, h, w], v.to_vec()).unwrap()
    }

    #[test]
    fn hand_counted_case() {
        let p = mask(1, 2, 2, &[1, 0, 1, 0]);
        let g = mask(1, 2, 2, &[1, 1, 0, 0]);
        let c = confusion_counts(&p, &g).unwrap();
        assert_eq!((c.tp, c.fp, c.fn_, c.tn), (1, 1, 1, 1));
        let m = volume_metrics("x", &p, &g).unwrap();
        assert_eq!((m.precision, m.recall, m.f1, m.dsc), (0.5, 0.5, 0.5, 0.5));
        assert!((m.iou - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn empty_conventions() {
        let z = mask(2, 2, 2, &[0; 8]);
        let m = volume_metrics("e", &z, &z).unwrap();
        assert_eq!([m.precision, m.recall, m.f1, m.iou, m.dsc], [1.0; 5]);
        let one = mask(2, 2, 2, &[0, 0, 0, 0, 1, 0, 0, 0]);
        let m = volume_metrics("e", &z, &one).unwrap();
        assert_eq!([m.precision, m.recall, m.f1, m.iou, m.dsc], [0.0; 5]);
    }

    #[test]
    fn aggregate_means_and_csv_shape() {
        let g = mask(1, 1, 2, &[1, 1]);
        let mut a = volume_metrics("a", &g, &g).unwrap();
        let mut b = a.clone();
        a.dsc = 0.6;
        b.dsc = 0.8;
        b.case_id = "b".into();
        let s = aggregate_report(&[a.clone(), b.clone()]).unwrap();
        assert!((s.dsc - 0.7).abs() < 1e-15);
        let csv = report_csv(&[a, b], &s);
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines[0], REPORT_HEADER);
        assert!(lines[3].starts_with("MEAN,"));
        assert!(aggregate_report(&[]).is_err());
    }
}
