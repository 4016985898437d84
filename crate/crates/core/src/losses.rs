//! Restoration, depth and reblur losses.
//!
//! All three are usable as standalone quality measures; the reblur loss is
//! also the objective driving the plane-sweep estimator. Components are
//! summed unweighted into the total.

use ndarray::Array3;
use serde::Serialize;

use crate::depth::InverseDepthMap;
use crate::error::{Error, Result};
use crate::optics::CameraConfig;
use crate::simulator::{simulate_fast, DpPair, RgbdImage};

/// The three loss components and their unweighted sum.
#[derive(Debug, Clone, Serialize)]
pub struct LossReport {
    pub restoration: f64,
    pub depth: f64,
    pub reblur: f64,
    pub total: f64,
}

impl LossReport {
    pub fn new(restoration: f64, depth: f64, reblur: f64) -> Self {
        LossReport { restoration, depth, reblur, total: restoration + depth + reblur }
    }
}

impl std::fmt::Display for LossReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "restoration={}", self.restoration)?;
        writeln!(f, "depth={}", self.depth)?;
        writeln!(f, "reblur={}", self.reblur)?;
        write!(f, "total={}", self.total)
    }
}

fn check_same_shape(a: &Array3<f64>, b: &Array3<f64>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::shape(format!("image shapes {:?} and {:?} differ", a.dim(), b.dim())));
    }
    Ok(())
}

/// Mean over pixels of the per-pixel channel-vector l2 norm of the
/// difference.
pub fn restoration_loss(pred: &Array3<f64>, target: &Array3<f64>) -> Result<f64> {
    check_same_shape(pred, target)?;
    let (h, w, c) = pred.dim();
    let mut sum = 0.0;
    for z in 0..h {
        for y in 0..w {
            let mut sq = 0.0;
            for ch in 0..c {
                let d = pred[[z, y, ch]] - target[[z, y, ch]];
                sq += d * d;
            }
            sum += sq.sqrt();
        }
    }
    Ok(sum / (h * w) as f64)
}

/// Smooth-l1 penalty: quadratic inside the unit error band, linear outside.
#[inline]
pub fn smooth_l1(x: f64) -> f64 {
    let a = x.abs();
    if a < 1.0 {
        0.5 * x * x
    } else {
        a - 0.5
    }
}

/// Mean smooth-l1 error over pixels where the target is valid.
pub fn depth_loss(pred: &InverseDepthMap, target: &InverseDepthMap) -> Result<f64> {
    if pred.values.dim() != target.values.dim() {
        return Err(Error::shape(format!(
            "inverse depth shapes {:?} and {:?} differ",
            pred.values.dim(),
            target.values.dim()
        )));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for ((idx, &valid), (&p, &g)) in target
        .mask
        .indexed_iter()
        .zip(pred.values.iter().zip(target.values.iter()))
    {
        let _ = idx;
        if valid {
            sum += smooth_l1(p - g);
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(sum / count as f64)
}

/// Residual between the observed pair and the pair re-synthesized from
/// `sharp` and `inv_depth`, averaged over both views.
///
/// Pixels with invalid inverse depth contribute no scatter; valid entries
/// must invert to depths beyond the focal length or the simulator rejects
/// them.
pub fn reblur_loss(
    sharp: &Array3<f64>,
    inv_depth: &InverseDepthMap,
    observed: &DpPair,
    cfg: &CameraConfig,
) -> Result<f64> {
    check_same_shape(sharp, &observed.left)?;
    check_same_shape(sharp, &observed.right)?;
    let (h, w, _) = sharp.dim();
    if inv_depth.values.dim() != (h, w) {
        return Err(Error::shape(format!(
            "inverse depth {:?} does not match image {:?}",
            inv_depth.values.dim(),
            (h, w)
        )));
    }
    let depth = inv_depth.to_depth();
    let rgbd = RgbdImage::new(sharp.clone(), depth.values, depth.mask)?;
    let (pair, _) = simulate_fast(&rgbd, cfg)?;
    let l = restoration_loss(&pair.left, &observed.left)?;
    let r = restoration_loss(&pair.right, &observed.right)?;
    Ok(0.5 * (l + r))
}

/// Bundles the three losses for a candidate (sharp image, inverse depth)
/// against ground truth and an observed pair.
pub fn loss_report(
    sharp: &Array3<f64>,
    inv_depth: &InverseDepthMap,
    observed: &DpPair,
    sharp_target: Option<&Array3<f64>>,
    inv_depth_target: Option<&InverseDepthMap>,
    cfg: &CameraConfig,
) -> Result<LossReport> {
    let restoration = match sharp_target {
        Some(t) => restoration_loss(sharp, t)?,
        None => 0.0,
    };
    let depth = match inv_depth_target {
        Some(t) => depth_loss(inv_depth, t)?,
        None => 0.0,
    };
    let reblur = reblur_loss(sharp, inv_depth, observed, cfg)?;
    Ok(LossReport::new(restoration, depth, reblur))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::{Array, Array2, Array3};
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

    fn example_config() -> CameraConfig {
        CameraConfig::split_aperture(100.0, 105.0, 20.0).unwrap()
    }

    #[test]
    fn restoration_zero_on_identical() {
        let a = Array3::from_elem((4, 4, 3), 0.3);
        assert_eq!(restoration_loss(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn restoration_constant_offset() {
        let a = Array3::zeros((5, 5, 3));
        let b = Array3::from_elem((5, 5, 3), 0.5);
        assert_abs_diff_eq!(restoration_loss(&a, &b).unwrap(), 0.5 * 3f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn restoration_single_pixel() {
        let a = Array3::zeros((4, 8, 1));
        let mut b = a.clone();
        b[[2, 3, 0]] = 1.0;
        assert_abs_diff_eq!(restoration_loss(&a, &b).unwrap(), 1.0 / 32.0, epsilon = 1e-15);
    }

    #[test]
    fn restoration_shape_mismatch() {
        let a = Array3::<f64>::zeros((4, 4, 1));
        let b = Array3::<f64>::zeros((4, 5, 1));
        assert!(matches!(restoration_loss(&a, &b), Err(Error::Shape(_))));
    }

    #[test]
    fn depth_loss_branches() {
        let g = InverseDepthMap::full(Array2::zeros((3, 3)));
        let quad = InverseDepthMap::full(Array2::from_elem((3, 3), 0.5));
        let lin = InverseDepthMap::full(Array2::from_elem((3, 3), 2.0));
        assert_abs_diff_eq!(depth_loss(&g, &g).unwrap(), 0.0);
        assert_abs_diff_eq!(depth_loss(&quad, &g).unwrap(), 0.125, epsilon = 1e-15);
        assert_abs_diff_eq!(depth_loss(&lin, &g).unwrap(), 1.5, epsilon = 1e-15);
    }

    #[test]
    fn depth_loss_empty_mask() {
        let mut g = InverseDepthMap::full(Array2::zeros((2, 2)));
        g.mask.fill(false);
        let p = InverseDepthMap::full(Array2::zeros((2, 2)));
        assert!(matches!(depth_loss(&p, &g), Err(Error::EmptyMask)));
    }

    #[test]
    fn reblur_self_consistency() {
        let cfg = example_config();
        let mut rng = ChaCha12Rng::seed_from_u64(29);
        let sharp = Array::from_shape_fn((24, 24, 1), |_| rng.random::<f64>());
        let depth = Array::from_shape_fn((24, 24), |_| 300.0 + rng.random::<f64>() * 4000.0);
        let img = RgbdImage::with_full_mask(sharp.clone(), depth.clone()).unwrap();
        let (observed, _) = simulate_fast(&img, &cfg).unwrap();
        let inv = crate::depth::DepthMap::full(depth).to_inverse();
        let loss = reblur_loss(&sharp, &inv, &observed, &cfg).unwrap();
        assert!(loss < 1e-8, "self reblur loss {loss}");
    }

    #[test]
    fn reblur_detects_depth_perturbation() {
        let cfg = example_config();
        let mut rng = ChaCha12Rng::seed_from_u64(31);
        let sharp = Array::from_shape_fn((24, 24, 1), |_| rng.random::<f64>());
        let depth = Array2::from_elem((24, 24), 420.0);
        let img = RgbdImage::with_full_mask(sharp.clone(), depth.clone()).unwrap();
        let (observed, _) = simulate_fast(&img, &cfg).unwrap();
        let perturbed = crate::depth::DepthMap::full(depth.map(|d| d * 1.1)).to_inverse();
        let loss = reblur_loss(&sharp, &perturbed, &observed, &cfg).unwrap();
        assert!(loss > 1e-4, "perturbed reblur loss {loss}");
    }

    #[test]
    fn reblur_on_in_focus_scene_equals_restoration() {
        let cfg = example_config();
        let mut rng = ChaCha12Rng::seed_from_u64(37);
        let sharp = Array::from_shape_fn((12, 12, 1), |_| rng.random::<f64>());
        let depth = Array2::from_elem((12, 12), 2100.0);
        let inv = crate::depth::DepthMap::full(depth).to_inverse();
        // An arbitrary observed pair: in focus, the simulator is the
        // identity, so reblur reduces to plain restoration per view.
        let observed = DpPair {
            left: Array::from_shape_fn((12, 12, 1), |_| rng.random::<f64>()),
            right: Array::from_shape_fn((12, 12, 1), |_| rng.random::<f64>()),
        };
        let reblur = reblur_loss(&sharp, &inv, &observed, &cfg).unwrap();
        let expected = 0.5
            * (restoration_loss(&sharp, &observed.left).unwrap()
                + restoration_loss(&sharp, &observed.right).unwrap());
        assert_abs_diff_eq!(reblur, expected, epsilon = 1e-9);
    }

    #[test]
    fn report_totals_components() {
        let r = LossReport::new(0.25, 0.5, 0.125);
        assert_eq!(r.total, 0.875);
    }
}
