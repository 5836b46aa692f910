//! Segmentation and reconstruction quality measures.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Bitmap3D;
use crate::render::{render_mask, Camera, RadianceSource, RenderOptions};
use crate::train::psnr_from_mse;

/// Pixel (or voxel) confusion counts of a binary prediction.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// `TP / (TP + FP + FN)`, 1 when both masks are empty.
    pub fn iou(&self) -> f64 {
        let union = self.tp + self.fp + self.fn_;
        if union == 0 {
            1.0
        } else {
            self.tp as f64 / union as f64
        }
    }

    pub fn accuracy(&self) -> f64 {
        if self.total() == 0 {
            1.0
        } else {
            (self.tp + self.tn) as f64 / self.total() as f64
        }
    }
}

fn same_len(a: usize, b: usize, what: &str) -> Result<()> {
    if a != b {
        return Err(Error::ShapeMismatch(format!("{what}: {a} vs {b} elements")));
    }
    Ok(())
}

pub fn confusion(pred: &[bool], gt: &[bool]) -> Result<Confusion> {
    same_len(pred.len(), gt.len(), "prediction vs ground truth")?;
    let mut c = Confusion::default();
    for (&p, &g) in pred.iter().zip(gt) {
        match (p, g) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

pub fn iou(pred: &[bool], gt: &[bool]) -> Result<f64> {
    Ok(confusion(pred, gt)?.iou())
}

pub fn accuracy(pred: &[bool], gt: &[bool]) -> Result<f64> {
    Ok(confusion(pred, gt)?.accuracy())
}

/// IoU of two voxel bitmaps over the same grid.
pub fn voxel_iou(pred: &Bitmap3D, gt: &Bitmap3D) -> Result<f64> {
    pred.geometry().ensure_same(gt.geometry(), "voxel IoU")?;
    let inter = pred.intersect(gt)?.count_ones();
    let union = pred.union(gt)?.count_ones();
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AveragePrecision {
    pub value: f64,
    /// The ground truth had no positives; `value` is then 0.
    pub gt_empty: bool,
}

/// Area under the precision-recall curve, sweeping the threshold over every
/// distinct score (predict `score >= t`) and integrating with trapezoids.
/// The curve starts at recall 0 with the precision of the highest threshold.
pub fn average_precision(scores: &[f64], gt: &[bool]) -> Result<AveragePrecision> {
    same_len(scores.len(), gt.len(), "scores vs ground truth")?;
    if scores.iter().any(|s| !(0.0..=1.0).contains(s)) {
        return Err(Error::InvalidInput("scores must lie in [0, 1]".into()));
    }
    let positives = gt.iter().filter(|&&g| g).count();
    if positives == 0 {
        return Ok(AveragePrecision { value: 0.0, gt_empty: true });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut prev: Option<(f64, f64)> = None;
    let mut area = 0.0;
    let mut k = 0;
    while k < order.len() {
        let t = scores[order[k]];
        while k < order.len() && scores[order[k]] == t {
            if gt[order[k]] {
                tp += 1;
            } else {
                fp += 1;
            }
            k += 1;
        }
        let recall = tp as f64 / positives as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        let (r0, p0) = prev.unwrap_or((0.0, precision));
        area += (recall - r0) * (precision + p0) / 2.0;
        prev = Some((recall, precision));
    }
    Ok(AveragePrecision { value: area, gt_empty: false })
}

/// `10 log10(1 / MSE)` over values in `[0, 1]`, capped at 100 dB.
pub fn psnr(img: &[f64], reference: &[f64]) -> Result<f64> {
    same_len(img.len(), reference.len(), "image vs reference")?;
    if img.is_empty() {
        return Err(Error::InvalidInput("cannot compare empty images".into()));
    }
    let mse = img.iter().zip(reference).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / img.len() as f64;
    Ok(psnr_from_mse(mse))
}

/// Scores of one view.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewScore {
    pub iou: f64,
    pub accuracy: f64,
    pub ap: f64,
    pub gt_empty: bool,
}

/// Binary prediction `pred`, soft scores for AP, and the ground truth.
pub fn score_view(scores: &[f64], pred: &[bool], gt: &[bool]) -> Result<ViewScore> {
    let c = confusion(pred, gt)?;
    let ap = average_precision(scores, gt)?;
    Ok(ViewScore { iou: c.iou(), accuracy: c.accuracy(), ap: ap.value, gt_empty: ap.gt_empty })
}

/// Renders the predicted and ground-truth masks from every camera and scores
/// them. The prediction's soft alpha serves as the AP score.
pub fn score_rendered_masks(
    pred_source: &dyn RadianceSource,
    pred_mask: &Bitmap3D,
    gt_source: &dyn RadianceSource,
    gt_mask: &Bitmap3D,
    cameras: &[Camera],
    opts: &RenderOptions,
) -> Result<Vec<ViewScore>> {
    cameras
        .iter()
        .map(|cam| {
            let (alpha, pred) = render_mask(pred_source, pred_mask, cam, opts);
            let (_, gt) = render_mask(gt_source, gt_mask, cam, opts);
            score_view(&alpha, &pred, &gt)
        })
        .collect()
}

/// Per-view metrics averaged over views.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskMetrics {
    pub mean_iou: f64,
    pub accuracy: f64,
    pub map: f64,
}

impl MaskMetrics {
    pub fn mean(views: &[ViewScore]) -> Result<Self> {
        if views.is_empty() {
            return Err(Error::InsufficientData("no views to average".into()));
        }
        let n = views.len() as f64;
        Ok(Self {
            mean_iou: views.iter().map(|v| v.iou).sum::<f64>() / n,
            accuracy: views.iter().map(|v| v.accuracy).sum::<f64>() / n,
            map: views.iter().map(|v| v.ap).sum::<f64>() / n,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub scene: String,
    pub method: String,
    pub views: usize,
    pub metrics: MaskMetrics,
    /// Voxel IoU when 3D ground truth is available.
    pub voxel_iou: Option<f64>,
}

/// Rows of scene x method results, printed as a plain text table.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub rows: Vec<ReportRow>,
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sw = self.rows.iter().map(|r| r.scene.len()).max().unwrap_or(0).max(5);
        let mw = self.rows.iter().map(|r| r.method.len()).max().unwrap_or(0).max(6);
        writeln!(
            f,
            "{:<sw$}  {:<mw$}  {:>5}  {:>8}  {:>8}  {:>6}  {:>9}",
            "scene", "method", "views", "mean IoU", "accuracy", "mAP", "voxel IoU"
        )?;
        for r in &self.rows {
            let vox = r.voxel_iou.map_or("-".to_string(), |v| format!("{v:.3}"));
            writeln!(
                f,
                "{:<sw$}  {:<mw$}  {:>5}  {:>8.3}  {:>8.3}  {:>6.3}  {:>9}",
                r.scene, r.method, r.views, r.metrics.mean_iou, r.metrics.accuracy, r.metrics.map, vox
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Counts predictions above each distinct threshold directly.
    fn ap_oracle(scores: &[f64], gt: &[bool]) -> f64 {
        let mut ts: Vec<f64> = scores.to_vec();
        ts.sort_by(|a, b| b.total_cmp(a));
        ts.dedup();
        let p = gt.iter().filter(|&&g| g).count() as f64;
        let mut pts = Vec::new();
        for t in ts {
            let sel: Vec<bool> = scores.iter().map(|&s| s >= t).collect();
            let tp = sel.iter().zip(gt).filter(|(s, g)| **s && **g).count() as f64;
            let n = sel.iter().filter(|&&s| s).count() as f64;
            pts.push((tp / p, tp / n));
        }
        let mut area = 0.0;
        let mut last = (0.0, pts[0].1);
        for (r, pr) in pts {
            area += (r - last.0) * (pr + last.1) * 0.5;
            last = (r, pr);
        }
        area
    }

    #[test]
    fn trivial_cases() {
        let gt = [true, false, true, false];
        assert_eq!(iou(&gt, &gt).unwrap(), 1.0);
        assert_eq!(accuracy(&gt, &gt).unwrap(), 1.0);
        assert_eq!(iou(&[true, false], &[false, true]).unwrap(), 0.0);
        assert_eq!(iou(&[false; 3], &[false; 3]).unwrap(), 1.0);
        assert_eq!(iou(&[true], &[true, false]).unwrap_err().kind(), "shape_mismatch");
        let scores: Vec<f64> = gt.iter().map(|&g| if g { 1.0 } else { 0.0 }).collect();
        assert_eq!(average_precision(&scores, &gt).unwrap().value, 1.0);
        assert_eq!(average_precision(&[0.5; 4], &gt).unwrap().value, 0.5);
        let half = [true, false, false, false];
        assert_eq!(average_precision(&[0.5; 4], &half).unwrap().value, 0.25);
        let empty = average_precision(&[0.3, 0.9], &[false, false]).unwrap();
        assert!(empty.gt_empty && empty.value == 0.0);
        assert_eq!(average_precision(&[1.5], &[true]).unwrap_err().kind(), "invalid_input");
    }

    #[test]
    fn voxel_iou_counts_nodes() {
        let g = crate::grid::GridGeometry::cube(4, 1.0).unwrap();
        let a = Bitmap3D::from_fn(g.clone(), |i| i < 20);
        let b = Bitmap3D::from_fn(g.clone(), |i| (10..30).contains(&i));
        assert_eq!(voxel_iou(&a, &b).unwrap(), 10.0 / 30.0);
        let other = Bitmap3D::empty(crate::grid::GridGeometry::cube(3, 1.0).unwrap());
        assert_eq!(voxel_iou(&a, &other).unwrap_err().kind(), "geometry_mismatch");
    }

    #[test]
    fn rendered_masks_of_identical_fields_score_perfectly() {
        use crate::field::VoxelField;
        use crate::grid::{GridGeometry, Vec3};
        use crate::render::{Decoder, FieldSource};
        let g = GridGeometry::cube(8, 1.0).unwrap();
        let mut field = VoxelField::empty(g.clone(), 3, 0).unwrap();
        for (i, v) in field.density_mut().as_dense_mut().unwrap().values_mut().iter_mut().enumerate() {
            let c = g.coords(i);
            *v = if c.iter().all(|&x| (2..6).contains(&x)) { 8.0 } else { -8.0 };
        }
        let src = FieldSource::new(&field, &Decoder::Direct);
        let mask = Bitmap3D::from_fn(g.clone(), |i| g.coords(i).iter().all(|&x| (2..6).contains(&x)));
        let cams: Vec<Camera> = [-3.0, 3.0]
            .iter()
            .map(|&z| Camera::look_at(Vec3::new(0.3, 0.2, z), Vec3::zeros(), Vec3::y(), 12.0, 12, 12).unwrap())
            .collect();
        let views = score_rendered_masks(&src, &mask, &src, &mask, &cams, &RenderOptions::default()).unwrap();
        for v in &views {
            assert_eq!((v.iou, v.accuracy, v.gt_empty), (1.0, 1.0, false));
            assert!(v.ap > 0.99);
        }
        let empty = Bitmap3D::empty(g.clone());
        let views = score_rendered_masks(&src, &empty, &src, &mask, &cams, &RenderOptions::default()).unwrap();
        assert!(views.iter().all(|v| v.iou == 0.0));
    }

    #[test]
    fn psnr_cases() {
        let a = [0.2, 0.4, 0.9];
        assert_eq!(psnr(&a, &a).unwrap(), 100.0);
        let b: Vec<f64> = a.iter().map(|x| x + 0.1).collect();
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
        assert_eq!(psnr(&a, &b[..2]).unwrap_err().kind(), "shape_mismatch");
    }

    #[test]
    fn report_table_lists_rows() {
        let m = MaskMetrics { mean_iou: 0.95, accuracy: 0.99, map: 0.97 };
        let report = Report {
            rows: vec![
                ReportRow {
                    scene: "two-objects".into(),
                    method: "stroke".into(),
                    views: 4,
                    metrics: m,
                    voxel_iou: Some(0.9),
                },
                ReportRow { scene: "sphere".into(), method: "stroke".into(), views: 2, metrics: m, voxel_iou: None },
            ],
        };
        let text = report.to_string();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].contains("mean IoU") && lines[0].contains("mAP"));
        assert!(lines[1].contains("two-objects") && lines[1].contains("0.950") && lines[1].contains("0.900"));
        assert!(lines[2].trim_end().ends_with('-'));
    }

    proptest! {
        #[test]
        fn iou_matches_confusion_identity(bits in proptest::collection::vec((any::<bool>(), any::<bool>()), 1..200)) {
            let (pred, gt): (Vec<bool>, Vec<bool>) = bits.into_iter().unzip();
            let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
            for i in 0..pred.len() {
                if pred[i] && gt[i] { tp += 1 } else if pred[i] { fp += 1 } else if gt[i] { fn_ += 1 } else { tn += 1 }
            }
            let expect = if tp + fp + fn_ == 0 { 1.0 } else { tp as f64 / (tp + fp + fn_) as f64 };
            prop_assert_eq!(iou(&pred, &gt).unwrap(), expect);
            prop_assert_eq!(accuracy(&pred, &gt).unwrap(), (tp + tn) as f64 / pred.len() as f64);
        }

        #[test]
        fn ap_matches_threshold_sweep(pairs in proptest::collection::vec((0u8..=20, any::<bool>()), 1..120)) {
            let scores: Vec<f64> = pairs.iter().map(|p| p.0 as f64 / 20.0).collect();
            let gt: Vec<bool> = pairs.iter().map(|p| p.1).collect();
            prop_assume!(gt.iter().any(|&g| g));
            let ap = average_precision(&scores, &gt).unwrap().value;
            prop_assert!((ap - ap_oracle(&scores, &gt)).abs() < 1e-9);
            prop_assert!((0.0..=1.0 + 1e-12).contains(&ap));
        }

        #[test]
        fn ap_invariant_under_monotone_maps(pairs in proptest::collection::vec((0.0f64..=1.0, any::<bool>()), 1..120)) {
            let scores: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let gt: Vec<bool> = pairs.iter().map(|p| p.1).collect();
            let ap = average_precision(&scores, &gt).unwrap().value;
            let halved: Vec<f64> = scores.iter().map(|s| 0.5 * s).collect();
            prop_assert_eq!(average_precision(&halved, &gt).unwrap().value, ap);
            let cubed: Vec<f64> = scores.iter().map(|s| s * s * s).collect();
            let distinct = |v: &[f64]| { let mut w = v.to_vec(); w.sort_by(|a, b| a.total_cmp(b)); w.dedup(); w.len() };
            prop_assume!(distinct(&cubed) == distinct(&scores));
            prop_assert!((average_precision(&cubed, &gt).unwrap().value - ap).abs() < 1e-12);
        }

        #[test]
        fn psnr_matches_naive_mse(pairs in proptest::collection::vec((0.0f64..=1.0, 0.0f64..=1.0), 1..100)) {
            let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let mut mse = 0.0;
            for i in 0..a.len() { mse += (a[i] - b[i]).powi(2); }
            mse /= a.len() as f64;
            let expect = if mse < 1e-10 { 100.0 } else { -10.0 * mse.log10() };
            prop_assert!((psnr(&a, &b).unwrap() - expect).abs() < 1e-6);
        }

        #[test]
        fn mean_metrics_is_mean_of_views(views in proptest::collection::vec((0.0f64..=1.0, 0.0f64..=1.0, 0.0f64..=1.0), 1..10)) {
            let vs: Vec<ViewScore> = views.iter().map(|&(iou, accuracy, ap)| ViewScore { iou, accuracy, ap, gt_empty: false }).collect();
            let m = MaskMetrics::mean(&vs).unwrap();
            let n = vs.len() as f64;
            prop_assert!((m.mean_iou - views.iter().map(|v| v.0).sum::<f64>() / n).abs() < 1e-12);
            prop_assert!((m.map - views.iter().map(|v| v.2).sum::<f64>() / n).abs() < 1e-12);
        }
    }
}
