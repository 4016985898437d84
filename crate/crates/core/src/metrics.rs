//! Evaluation metrics for depth maps and restored images.
//!
//! Depth metrics run over masked pixels only; the mask is intersected with
//! `gt > 0` so missing-depth zeros never poison the statistics. The affine-
//! invariant metrics fit `a * pred + b` to the ground truth by least squares
//! first, removing the scale/offset ambiguity inherent to defocus cues, and
//! are normalized by the ground-truth range.

use ndarray::{Array2, Array3};
use serde::Serialize;

use crate::error::{Error, Result};

/// Depth accuracy report. `ai1`, `ai2` and `spearman_term` are `None` when
/// the prediction is constant over the mask and no fit exists.
#[derive(Debug, Clone, Serialize)]
pub struct DepthMetricReport {
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rmse: f64,
    pub rmse_log: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
    pub ai1: Option<f64>,
    pub ai2: Option<f64>,
    pub spearman_term: Option<f64>,
}

impl std::fmt::Display for DepthMetricReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "abs_rel={}", self.abs_rel)?;
        writeln!(f, "sq_rel={}", self.sq_rel)?;
        writeln!(f, "rmse={}", self.rmse)?;
        writeln!(f, "rmse_log={}", self.rmse_log)?;
        writeln!(f, "delta1={}", self.delta1)?;
        writeln!(f, "delta2={}", self.delta2)?;
        writeln!(f, "delta3={}", self.delta3)?;
        let opt = |v: Option<f64>| v.map_or("NA".to_string(), |x| x.to_string());
        writeln!(f, "ai1={}", opt(self.ai1))?;
        writeln!(f, "ai2={}", opt(self.ai2))?;
        write!(f, "spearman_term={}", opt(self.spearman_term))
    }
}

/// Restored-image quality report.
#[derive(Debug, Clone, Serialize)]
pub struct ImageMetricReport {
    /// Peak signal-to-noise ratio in dB on the `[0,1]` scale, capped at 100.
    pub psnr: f64,
    /// Mean structural similarity over channels.
    pub ssim: f64,
    /// RMSE as a percentage of full scale (equivalent to RMSE/255 on 8-bit).
    pub rmse_rel: f64,
}

impl std::fmt::Display for ImageMetricReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "psnr={}", self.psnr)?;
        writeln!(f, "ssim={}", self.ssim)?;
        write!(f, "rmse_rel={}", self.rmse_rel)
    }
}

fn masked_pairs(pred: &Array2<f64>, gt: &Array2<f64>, mask: &Array2<bool>) -> Result<Vec<(f64, f64)>> {
    if pred.dim() != gt.dim() || pred.dim() != mask.dim() {
        return Err(Error::shape(format!(
            "pred {:?}, gt {:?} and mask {:?} must agree",
            pred.dim(),
            gt.dim(),
            mask.dim()
        )));
    }
    let pairs: Vec<(f64, f64)> = pred
        .iter()
        .zip(gt.iter())
        .zip(mask.iter())
        .filter(|((_, &g), &m)| m && g > 0.0)
        .map(|((&p, &g), _)| (p, g))
        .collect();
    if pairs.is_empty() {
        return Err(Error::EmptyMask);
    }
    Ok(pairs)
}

/// Standard depth metrics plus the affine-invariant and rank terms over
/// `mask ∧ gt > 0`.
pub fn depth_metrics(pred: &Array2<f64>, gt: &Array2<f64>, mask: &Array2<bool>) -> Result<DepthMetricReport> {
    let pairs = masked_pairs(pred, gt, mask)?;
    if pairs.iter().any(|(p, _)| *p <= 0.0) {
        return Err(Error::domain("nonpositive predicted depth enters the log metric"));
    }
    let n = pairs.len() as f64;
    let mut abs_rel = 0.0;
    let mut sq_rel = 0.0;
    let mut mse = 0.0;
    let mut mse_log = 0.0;
    let mut inliers = [0usize; 3];
    let thresholds = [1.25, 1.25f64.powi(2), 1.25f64.powi(3)];
    for &(p, g) in &pairs {
        let diff = p - g;
        abs_rel += diff.abs() / g;
        sq_rel += diff * diff / g;
        mse += diff * diff;
        let dl = p.ln() - g.ln();
        mse_log += dl * dl;
        let ratio = (p / g).max(g / p);
        for (i, t) in thresholds.iter().enumerate() {
            if ratio < *t {
                inliers[i] += 1;
            }
        }
    }
    let ai = match affine_invariant_metrics(pred, gt, mask) {
        Ok((a1, a2)) => (Some(a1), Some(a2)),
        Err(Error::DegenerateFit(_)) => (None, None),
        Err(e) => return Err(e),
    };
    let sp = match spearman_term(pred, gt, mask) {
        Ok(v) => Some(v),
        Err(Error::DegenerateFit(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(DepthMetricReport {
        abs_rel: abs_rel / n,
        sq_rel: sq_rel / n,
        rmse: (mse / n).sqrt(),
        rmse_log: (mse_log / n).sqrt(),
        delta1: inliers[0] as f64 / n,
        delta2: inliers[1] as f64 / n,
        delta3: inliers[2] as f64 / n,
        ai1: ai.0,
        ai2: ai.1,
        spearman_term: sp,
    })
}

/// Affine-invariant MAE and RMSE: residuals of the least-squares fit
/// `a * pred + b ≈ gt`, normalized by the ground-truth range.
pub fn affine_invariant_metrics(
    pred: &Array2<f64>,
    gt: &Array2<f64>,
    mask: &Array2<bool>,
) -> Result<(f64, f64)> {
    let pairs = masked_pairs(pred, gt, mask)?;
    if pairs.len() < 2 {
        return Err(Error::DegenerateFit("need at least two valid pixels".into()));
    }
    let n = pairs.len() as f64;
    let mean_p = pairs.iter().map(|(p, _)| p).sum::<f64>() / n;
    let mean_g = pairs.iter().map(|(_, g)| g).sum::<f64>() / n;
    let mut var_p = 0.0;
    let mut cov = 0.0;
    for &(p, g) in &pairs {
        var_p += (p - mean_p) * (p - mean_p);
        cov += (p - mean_p) * (g - mean_g);
    }
    if var_p <= 0.0 {
        return Err(Error::DegenerateFit("prediction is constant over the mask".into()));
    }
    let (g_min, g_max) = pairs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(_, g)| (lo.min(g), hi.max(g)));
    let range = g_max - g_min;
    if range <= 0.0 {
        return Err(Error::DegenerateFit("ground truth is constant over the mask".into()));
    }
    let a = cov / var_p;
    let b = mean_g - a * mean_p;
    let mut abs_sum = 0.0;
    let mut sq_sum = 0.0;
    for &(p, g) in &pairs {
        let r = a * p + b - g;
        abs_sum += r.abs();
        sq_sum += r * r;
    }
    Ok((abs_sum / n / range, (sq_sum / n).sqrt() / range))
}

/// Average ranks with tie averaging.
fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

/// `1 - |rho_s|` with average-rank tie handling.
pub fn spearman_term(pred: &Array2<f64>, gt: &Array2<f64>, mask: &Array2<bool>) -> Result<f64> {
    let pairs = masked_pairs(pred, gt, mask)?;
    if pairs.len() < 2 {
        return Err(Error::DegenerateFit("need at least two valid pixels".into()));
    }
    let p: Vec<f64> = pairs.iter().map(|(p, _)| *p).collect();
    let g: Vec<f64> = pairs.iter().map(|(_, g)| *g).collect();
    let rp = ranks(&p);
    let rg = ranks(&g);
    let n = rp.len() as f64;
    let mp = rp.iter().sum::<f64>() / n;
    let mg = rg.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vp = 0.0;
    let mut vg = 0.0;
    for (a, b) in rp.iter().zip(rg.iter()) {
        cov += (a - mp) * (b - mg);
        vp += (a - mp) * (a - mp);
        vg += (b - mg) * (b - mg);
    }
    if vp <= 0.0 || vg <= 0.0 {
        return Err(Error::DegenerateFit("constant input has no rank correlation".into()));
    }
    let rho = cov / (vp.sqrt() * vg.sqrt());
    Ok(1.0 - rho.abs())
}

/// PSNR, SSIM and relative RMSE between two images on the `[0,1]` scale.
pub fn image_metrics(pred: &Array3<f64>, gt: &Array3<f64>) -> Result<ImageMetricReport> {
    if pred.dim() != gt.dim() {
        return Err(Error::shape(format!("image shapes {:?} and {:?} differ", pred.dim(), gt.dim())));
    }
    let n = pred.len() as f64;
    let mse = pred
        .iter()
        .zip(gt.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n;
    let psnr = if mse == 0.0 { 100.0 } else { 10.0 * (1.0 / mse).log10() };
    let rmse_rel = 100.0 * mse.sqrt();
    let ssim = ssim_mean(pred, gt);
    Ok(ImageMetricReport { psnr, ssim, rmse_rel })
}

const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;
const SSIM_RADIUS: usize = 5;
const SSIM_SIGMA: f64 = 1.5;

fn gaussian_kernel(radius: usize, sigma: f64) -> Vec<f64> {
    let mut k: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let x = i as f64 - radius as f64;
            (-x * x / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = k.iter().sum();
    for v in &mut k {
        *v /= s;
    }
    k
}

/// Separable Gaussian filter evaluated only where the full window fits.
/// Output dimensions shrink by `2 * radius` per axis.
fn gaussian_valid(src: &Array2<f64>, kernel: &[f64]) -> Array2<f64> {
    let r = kernel.len() / 2;
    let (h, w) = src.dim();
    let mut horiz = Array2::zeros((h, w - 2 * r));
    for z in 0..h {
        for y in 0..w - 2 * r {
            let mut s = 0.0;
            for (i, k) in kernel.iter().enumerate() {
                s += k * src[[z, y + i]];
            }
            horiz[[z, y]] = s;
        }
    }
    let mut out = Array2::zeros((h - 2 * r, w - 2 * r));
    for z in 0..h - 2 * r {
        for y in 0..w - 2 * r {
            let mut s = 0.0;
            for (i, k) in kernel.iter().enumerate() {
                s += k * horiz[[z + i, y]];
            }
            out[[z, y]] = s;
        }
    }
    out
}

fn ssim_mean(pred: &Array3<f64>, gt: &Array3<f64>) -> f64 {
    let (h, w, c) = pred.dim();
    // Shrink the window on images too small for the standard 11x11 one.
    let radius = SSIM_RADIUS.min((h.saturating_sub(1)) / 2).min((w.saturating_sub(1)) / 2);
    let kernel = gaussian_kernel(radius, SSIM_SIGMA);
    let c1 = (SSIM_K1 * 1.0f64).powi(2);
    let c2 = (SSIM_K2 * 1.0f64).powi(2);
    let mut total = 0.0;
    for ch in 0..c {
        let x = Array2::from_shape_fn((h, w), |(z, y)| pred[[z, y, ch]]);
        let y_img = Array2::from_shape_fn((h, w), |(z, y)| gt[[z, y, ch]]);
        let mu_x = gaussian_valid(&x, &kernel);
        let mu_y = gaussian_valid(&y_img, &kernel);
        let xx = gaussian_valid(&x.map(|v| v * v), &kernel);
        let yy = gaussian_valid(&y_img.map(|v| v * v), &kernel);
        let xy = gaussian_valid(&(&x * &y_img), &kernel);
        let mut sum = 0.0;
        for (idx, mx) in mu_x.indexed_iter() {
            let my = mu_y[idx];
            let sx = xx[idx] - mx * mx;
            let sy = yy[idx] - my * my;
            let sxy = xy[idx] - mx * my;
            sum += ((2.0 * mx * my + c1) * (2.0 * sxy + c2))
                / ((mx * mx + my * my + c1) * (sx + sy + c2));
        }
        total += sum / mu_x.len() as f64;
    }
    total / c as f64
}
