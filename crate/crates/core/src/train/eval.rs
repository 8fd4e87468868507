use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{SketchSample, TrainError};
use crate::geometry::{angle_difference_deg, mesh_voxel_iou};
use crate::nn::{decode_mesh, encode, predict_view, view_code, ModelWeights, TemplateMesh};

/// Averages over one class (or over class averages for the overall row).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub count: usize,
    /// Voxel IoU of the mesh decoded at the ground-truth pose.
    pub iou_gt_pose: f64,
    /// Voxel IoU of the mesh decoded at the predicted pose.
    pub iou_pred_pose: f64,
    /// Degrees.
    pub elevation_mae: f64,
    /// Degrees, wrapped.
    pub azimuth_mae: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub resolution: usize,
    pub classes: BTreeMap<String, ClassMetrics>,
    pub mean: ClassMetrics,
}

impl EvalReport {
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<10} {:>6} {:>8} {:>9} {:>9} {:>9}",
            "class", "n", "GT Pos", "Pred Pos", "elev MAE", "azim MAE"
        );
        let rows = self.classes.iter().map(|(k, v)| (k.as_str(), v)).chain([("mean", &self.mean)]);
        for (name, m) in rows {
            let _ = writeln!(
                out,
                "{:<10} {:>6} {:>8.4} {:>9.4} {:>9.2} {:>9.2}",
                name, m.count, m.iou_gt_pose, m.iou_pred_pose, m.elevation_mae, m.azimuth_mae
            );
        }
        out
    }
}

/// Voxel IoU against each sample's ground-truth mesh (decoded at the true
/// and at the predicted pose) and viewpoint errors, per class.
pub fn evaluate(weights: &ModelWeights, samples: &[SketchSample], resolution: usize) -> Result<EvalReport, TrainError> {
    if samples.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let template = TemplateMesh::from_config(&weights.config);
    let mut sums: BTreeMap<String, ClassMetrics> = BTreeMap::new();
    for s in samples {
        let enc = encode(&s.sketch, weights)?;
        let pred = predict_view(&enc.features, weights)?;
        let at_gt = decode_mesh(&enc.shape_code, &view_code(&s.gt_pose, weights)?, weights, &template)?;
        let at_pred = decode_mesh(&enc.shape_code, &view_code(&pred, weights)?, weights, &template)?;
        let m = sums.entry(s.class.name().to_string()).or_default();
        m.count += 1;
        m.iou_gt_pose += mesh_voxel_iou(&at_gt, &s.mesh, resolution)?;
        m.iou_pred_pose += mesh_voxel_iou(&at_pred, &s.mesh, resolution)?;
        m.elevation_mae += (pred.elevation - s.gt_pose.elevation).abs();
        m.azimuth_mae += angle_difference_deg(pred.azimuth, s.gt_pose.azimuth).abs();
    }
    let mut mean = ClassMetrics::default();
    for m in sums.values_mut() {
        let n = m.count as f64;
        m.iou_gt_pose /= n;
        m.iou_pred_pose /= n;
        m.elevation_mae /= n;
        m.azimuth_mae /= n;
        mean.count += m.count;
        mean.iou_gt_pose += m.iou_gt_pose;
        mean.iou_pred_pose += m.iou_pred_pose;
        mean.elevation_mae += m.elevation_mae;
        mean.azimuth_mae += m.azimuth_mae;
    }
    let k = sums.len() as f64;
    mean.iou_gt_pose /= k;
    mean.iou_pred_pose /= k;
    mean.elevation_mae /= k;
    mean.azimuth_mae /= k;
    Ok(EvalReport {
        resolution,
        classes: sums,
        mean,
    })
}
