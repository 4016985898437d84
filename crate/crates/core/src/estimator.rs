//! Classical depth recovery from a DP pair.
//!
//! Two estimators are provided: a reblur-consistency plane sweep that scores
//! a discrete set of depth hypotheses by re-simulating the pair from a known
//! sharp image, and small-search block matching directly on the two views.
//! Both mark low-texture pixels invalid, since their objectives are flat on
//! constant regions.

use ndarray::{Array2, Array3};
use rayon::prelude::*;

use crate::depth::{DepthMap, DisparityMap};
use crate::error::{Error, Result};
use crate::optics::CameraConfig;
use crate::simulator::{simulate_fast, DpPair, RgbdImage};

/// Default local-variance threshold below which a pixel counts as
/// textureless, in squared `[0,1]` intensity units.
pub const DEFAULT_TEXTURE_THRESHOLD: f64 = 1e-4;

/// Plane-sweep parameters.
#[derive(Debug, Clone)]
pub struct SweepConfig {
    /// Candidate depths, strictly increasing, pixel units.
    pub hypotheses: Vec<f64>,
    /// Patch radius for residual aggregation; the window side is
    /// `2 * window + 1`.
    pub window: usize,
    /// Local-variance gate for marking textureless pixels invalid.
    pub texture_threshold: f64,
}

impl SweepConfig {
    pub fn new(hypotheses: Vec<f64>, window: usize) -> Result<Self> {
        if hypotheses.is_empty() {
            return Err(Error::domain("hypothesis list is empty"));
        }
        for pair in hypotheses.windows(2) {
            if !(pair[1] > pair[0]) {
                return Err(Error::domain(format!(
                    "hypotheses must be strictly increasing, got {} then {}",
                    pair[0], pair[1]
                )));
            }
        }
        if hypotheses.iter().any(|d| !d.is_finite() || *d <= 0.0) {
            return Err(Error::domain("hypotheses must be finite and positive"));
        }
        Ok(SweepConfig { hypotheses, window, texture_threshold: DEFAULT_TEXTURE_THRESHOLD })
    }

    /// `count` hypotheses spanning `[d_near, d_far]`, uniform in inverse
    /// depth (approximately uniform in blur scale).
    pub fn uniform_inverse(d_near: f64, d_far: f64, count: usize, window: usize) -> Result<Self> {
        if !(d_near > 0.0 && d_far > d_near) {
            return Err(Error::domain(format!(
                "need 0 < d_near < d_far, got {d_near}, {d_far}"
            )));
        }
        if count < 2 {
            return Err(Error::domain("need at least two hypotheses"));
        }
        let inv_near = 1.0 / d_near;
        let inv_far = 1.0 / d_far;
        let hypotheses: Vec<f64> = (0..count)
            .map(|k| {
                let t = k as f64 / (count - 1) as f64;
                1.0 / (inv_near + t * (inv_far - inv_near))
            })
            .collect();
        SweepConfig::new(hypotheses, window)
    }
}

/// Block-matching parameters.
#[derive(Debug, Clone)]
pub struct MatchConfig {
    /// Search half-range in pixels; DP baselines are tiny, so keep it small.
    pub max_disparity: usize,
    /// Odd block side, at least 3.
    pub block: usize,
    /// Refine the integer minimum with a parabolic fit over its neighbors.
    pub subpixel: bool,
    pub texture_threshold: f64,
}

impl MatchConfig {
    pub fn new(max_disparity: usize, block: usize, subpixel: bool) -> Result<Self> {
        if max_disparity < 1 {
            return Err(Error::domain("max_disparity must be at least 1"));
        }
        if block < 3 || block % 2 == 0 {
            return Err(Error::domain(format!("block must be odd and >= 3, got {block}")));
        }
        Ok(MatchConfig { max_disparity, block, subpixel, texture_threshold: DEFAULT_TEXTURE_THRESHOLD })
    }
}

/// Plane-sweep result: selected depth plus the per-pixel winning residual.
#[derive(Debug, Clone)]
pub struct SweepResult {
    pub depth: DepthMap,
    /// Mean squared residual per window pixel at the selected hypothesis.
    pub min_residual: Array2<f64>,
    /// Index of the selected hypothesis.
    pub argmin: Array2<u16>,
}

/// Zero-padded 2D prefix sums for constant-time rectangle sums.
struct Prefix {
    p: Array2<f64>,
}

impl Prefix {
    fn new(src: &Array2<f64>) -> Self {
        let (h, w) = src.dim();
        let mut p = Array2::zeros((h + 1, w + 1));
        for z in 0..h {
            let mut acc = 0.0;
            for y in 0..w {
                acc += src[[z, y]];
                p[[z + 1, y + 1]] = p[[z, y + 1]] + acc;
            }
        }
        Prefix { p }
    }

    /// Sum over rows `z0..=z1`, columns `y0..=y1` (inclusive).
    fn rect(&self, z0: usize, z1: usize, y0: usize, y1: usize) -> f64 {
        self.p[[z1 + 1, y1 + 1]] - self.p[[z0, y1 + 1]] - self.p[[z1 + 1, y0]] + self.p[[z0, y0]]
    }
}

fn clamped_window(center: usize, radius: usize, len: usize) -> (usize, usize) {
    let lo = center.saturating_sub(radius);
    let hi = (center + radius).min(len - 1);
    (lo, hi)
}

/// Channel-mean image.
fn luma(img: &Array3<f64>) -> Array2<f64> {
    let (h, w, c) = img.dim();
    Array2::from_shape_fn((h, w), |(z, y)| {
        let mut s = 0.0;
        for ch in 0..c {
            s += img[[z, y, ch]];
        }
        s / c as f64
    })
}

/// Per-pixel local intensity variance over a `(2r+1)` window, truncated at
/// the borders.
fn local_variance(img: &Array2<f64>, radius: usize) -> Array2<f64> {
    let (h, w) = img.dim();
    let sq = img.map(|v| v * v);
    let ps = Prefix::new(img);
    let ps2 = Prefix::new(&sq);
    Array2::from_shape_fn((h, w), |(z, y)| {
        let (z0, z1) = clamped_window(z, radius, h);
        let (y0, y1) = clamped_window(y, radius, w);
        let n = ((z1 - z0 + 1) * (y1 - y0 + 1)) as f64;
        let s = ps.rect(z0, z1, y0, y1);
        let s2 = ps2.rect(z0, z1, y0, y1);
        (s2 / n - (s / n).powi(2)).max(0.0)
    })
}

/// Squared residual between two pairs, summed over channels and views.
fn pair_residual(a: &DpPair, b: &DpPair) -> Array2<f64> {
    let (h, w, c) = a.left.dim();
    Array2::from_shape_fn((h, w), |(z, y)| {
        let mut s = 0.0;
        for ch in 0..c {
            let dl = a.left[[z, y, ch]] - b.left[[z, y, ch]];
            let dr = a.right[[z, y, ch]] - b.right[[z, y, ch]];
            s += dl * dl + dr * dr;
        }
        s
    })
}

/// Recovers depth by scoring each hypothesis with the reblur residual.
///
/// For every candidate depth the DP pair is re-simulated from `sharp` at
/// that constant depth and compared against `observed`; squared residuals
/// are aggregated over the window and each pixel takes the hypothesis with
/// the smallest aggregate. Ties break toward the smaller index.
pub fn sweep_depth(
    sharp: &Array3<f64>,
    observed: &DpPair,
    cfg: &CameraConfig,
    sw: &SweepConfig,
) -> Result<SweepResult> {
    if sharp.dim() != observed.left.dim() || sharp.dim() != observed.right.dim() {
        return Err(Error::shape(format!(
            "sharp {:?} and observed {:?} shapes differ",
            sharp.dim(),
            observed.left.dim()
        )));
    }
    for &d in &sw.hypotheses {
        if d <= cfg.focal_length {
            return Err(Error::domain(format!(
                "hypothesis {d} does not exceed the focal length {}",
                cfg.focal_length
            )));
        }
    }
    let (h, w, _) = sharp.dim();

    let mut best = Array2::from_elem((h, w), f64::INFINITY);
    let mut argmin = Array2::from_elem((h, w), 0u16);
    // Hypotheses are scored in waves but folded strictly in index order, so
    // the result does not depend on the worker count.
    let wave = rayon::current_num_threads().max(1);
    let mut k0 = 0usize;
    while k0 < sw.hypotheses.len() {
        let k1 = (k0 + wave).min(sw.hypotheses.len());
        let aggs: Vec<Array2<f64>> = sw.hypotheses[k0..k1]
            .par_iter()
            .map(|&d| -> Result<Array2<f64>> {
                let depth = Array2::from_elem((h, w), d);
                let rgbd = RgbdImage::with_full_mask(sharp.clone(), depth)?;
                let (sim, _) = simulate_fast(&rgbd, cfg)?;
                let resid = pair_residual(&sim, observed);
                let ps = Prefix::new(&resid);
                Ok(Array2::from_shape_fn((h, w), |(z, y)| {
                    let (z0, z1) = clamped_window(z, sw.window, h);
                    let (y0, y1) = clamped_window(y, sw.window, w);
                    ps.rect(z0, z1, y0, y1)
                }))
            })
            .collect::<Result<_>>()?;
        for (j, agg) in aggs.iter().enumerate() {
            let k = (k0 + j) as u16;
            for ((idx, b), a) in best.indexed_iter_mut().zip(agg.iter()) {
                if *a < *b {
                    *b = *a;
                    argmin[idx] = k;
                }
            }
        }
        k0 = k1;
    }

    let variance = local_variance(&luma(sharp), sw.window.max(1));
    let mask = variance.map(|v| *v >= sw.texture_threshold);
    let values = argmin.map(|&k| sw.hypotheses[k as usize]);
    let min_residual = Array2::from_shape_fn((h, w), |(z, y)| {
        let (z0, z1) = clamped_window(z, sw.window, h);
        let (y0, y1) = clamped_window(y, sw.window, w);
        let n = ((z1 - z0 + 1) * (y1 - y0 + 1)) as f64;
        best[[z, y]] / n
    });
    Ok(SweepResult { depth: DepthMap { values, mask }, min_residual, argmin })
}

/// One-dimensional SSD block matching along the horizontal axis.
///
/// Returns the disparity (left position minus right position) of the best
/// match; positive cost offsets into the right view therefore come out
/// negated. Pixels whose full search window leaves the frame, or whose
/// block variance is below the texture threshold, are invalid.
pub fn block_match(observed: &DpPair, mc: &MatchConfig) -> Result<DisparityMap> {
    if observed.left.dim() != observed.right.dim() {
        return Err(Error::shape(format!(
            "left {:?} and right {:?} shapes differ",
            observed.left.dim(),
            observed.right.dim()
        )));
    }
    let (h, w, c) = observed.left.dim();
    let hb = mc.block / 2;
    let m = mc.max_disparity as isize;
    let offsets: Vec<isize> = (-m..=m).collect();

    // One squared-difference plane per offset, box-filtered into block SSDs.
    let costs: Vec<Array2<f64>> = offsets
        .par_iter()
        .map(|&o| {
            let mut sq = Array2::zeros((h, w));
            for z in 0..h {
                for y in 0..w {
                    let yr = y as isize + o;
                    if yr < 0 || yr >= w as isize {
                        continue;
                    }
                    let mut s = 0.0;
                    for ch in 0..c {
                        let d = observed.left[[z, y, ch]] - observed.right[[z, yr as usize, ch]];
                        s += d * d;
                    }
                    sq[[z, y]] = s;
                }
            }
            let ps = Prefix::new(&sq);
            Array2::from_shape_fn((h, w), |(z, y)| {
                if z < hb || z + hb >= h || y < hb || y + hb >= w {
                    f64::INFINITY
                } else {
                    ps.rect(z - hb, z + hb, y - hb, y + hb)
                }
            })
        })
        .collect();

    let variance = local_variance(&luma(&observed.left), hb);

    let mut values = Array2::zeros((h, w));
    let mut mask = Array2::from_elem((h, w), false);
    let lo_y = hb + mc.max_disparity;
    if w < 2 * lo_y + 1 || h < 2 * hb + 1 {
        return Ok(DisparityMap { values, mask });
    }
    for z in hb..h - hb {
        for y in lo_y..w - lo_y {
            if variance[[z, y]] < mc.texture_threshold {
                continue;
            }
            let mut best_i = 0usize;
            let mut best = f64::INFINITY;
            for (i, cost) in costs.iter().enumerate() {
                let v = cost[[z, y]];
                if v < best {
                    best = v;
                    best_i = i;
                }
            }
            let mut offset = offsets[best_i] as f64;
            // A zero-cost minimum is already exact; the parabola would only
            // drag it toward the larger neighbor.
            if mc.subpixel && best > 0.0 && best_i > 0 && best_i + 1 < costs.len() {
                let c0 = costs[best_i - 1][[z, y]];
                let c1 = best;
                let c2 = costs[best_i + 1][[z, y]];
                let denom = c0 - 2.0 * c1 + c2;
                if denom > 0.0 {
                    offset += (0.5 * (c0 - c2) / denom).clamp(-0.5, 0.5);
                }
            }
            values[[z, y]] = -offset;
            mask[[z, y]] = true;
        }
    }
    Ok(DisparityMap { values, mask })
}

/// Pixelwise inversion of disparity into depth. Disparities outside the
/// attainable range are invalidated, not clamped.
pub fn disparity_to_depth_map(disp: &DisparityMap, cfg: &CameraConfig) -> DepthMap {
    let mut mask = disp.mask.clone();
    let values = Array2::from_shape_fn(disp.values.dim(), |idx| {
        if !mask[idx] {
            return 0.0;
        }
        match cfg.depth_for_disparity(disp.values[idx]) {
            Ok(d) => d,
            Err(_) => {
                mask[idx] = false;
                0.0
            }
        }
    });
    DepthMap { values, mask }
}

/// Median of the valid entries; `None` when everything is masked out.
pub fn masked_median(values: &Array2<f64>, mask: &Array2<bool>) -> Option<f64> {
    let mut v: Vec<f64> = values
        .iter()
        .zip(mask.iter())
        .filter_map(|(x, m)| if *m { Some(*x) } else { None })
        .collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Some(v[v.len() / 2])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::Array;
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

    fn example_config() -> CameraConfig {
        CameraConfig::split_aperture(100.0, 105.0, 20.0).unwrap()
    }

    fn textured(h: usize, w: usize, seed: u64) -> Array3<f64> {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        Array::from_shape_fn((h, w, 1), |_| rng.random::<f64>())
    }

    #[test]
    fn sweep_recovers_constant_depth_scene() {
        let cfg = example_config();
        let sharp = textured(48, 48, 41);
        let d_true = 420.0;
        let img = RgbdImage::with_full_mask(sharp.clone(), Array2::from_elem((48, 48), d_true)).unwrap();
        let (observed, _) = simulate_fast(&img, &cfg).unwrap();
        let mut sw = SweepConfig::uniform_inverse(200.0, 4000.0, 32, 2).unwrap();
        // Place the exact depth in the set.
        sw.hypotheses[7] = d_true;
        sw.hypotheses.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let result = sweep_depth(&sharp, &observed, &cfg, &sw).unwrap();
        let mut checked = 0;
        for (idx, &ok) in result.depth.mask.indexed_iter() {
            if ok {
                assert_abs_diff_eq!(result.depth.values[idx], d_true, epsilon = 1e-9);
                assert!(result.min_residual[idx] <= 1e-8);
                checked += 1;
            }
        }
        assert!(checked > 1000, "too few textured pixels: {checked}");
    }

    #[test]
    fn sweep_prefers_in_focus_hypothesis_on_sharp_pair() {
        let cfg = example_config();
        let sharp = textured(32, 32, 43);
        let img = RgbdImage::with_full_mask(sharp.clone(), Array2::from_elem((32, 32), 2100.0)).unwrap();
        let (observed, _) = simulate_fast(&img, &cfg).unwrap();
        let sw = SweepConfig::new(vec![300.0, 800.0, 2100.0, 5000.0], 1).unwrap();
        let result = sweep_depth(&sharp, &observed, &cfg, &sw).unwrap();
        for (idx, &ok) in result.depth.mask.indexed_iter() {
            if ok {
                assert_eq!(result.argmin[idx], 2, "wrong hypothesis at {idx:?}");
            }
        }
    }

    #[test]
    fn sweep_two_plane_scene_recovers_both_sides() {
        let cfg = example_config();
        let sharp = textured(48, 64, 47);
        let (d1, d2) = (420.0, 1200.0);
        let depth = Array2::from_shape_fn((48, 64), |(_, y)| if y < 32 { d1 } else { d2 });
        let img = RgbdImage::with_full_mask(sharp.clone(), depth).unwrap();
        let (observed, _) = simulate_fast(&img, &cfg).unwrap();
        let sw = SweepConfig::new(vec![300.0, d1, 700.0, d2, 2100.0], 1).unwrap();
        let result = sweep_depth(&sharp, &observed, &cfg, &sw).unwrap();
        // Widest footprint at d=420: about 1.9 px, use an 8 px guard band.
        for (idx, &ok) in result.depth.mask.indexed_iter() {
            if !ok {
                continue;
            }
            let y = idx.1;
            if y < 24 {
                assert_abs_diff_eq!(result.depth.values[idx], d1, epsilon = 1e-9);
            } else if y >= 40 {
                assert_abs_diff_eq!(result.depth.values[idx], d2, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn sweep_rejects_bad_hypotheses() {
        let cfg = example_config();
        let sharp = textured(8, 8, 1);
        let observed = DpPair { left: sharp.clone(), right: sharp.clone() };
        let sw = SweepConfig::new(vec![50.0, 400.0], 1).unwrap();
        assert!(matches!(sweep_depth(&sharp, &observed, &cfg, &sw), Err(Error::Domain(_))));
    }

    #[test]
    fn sweep_config_validation() {
        assert!(SweepConfig::new(vec![], 1).is_err());
        assert!(SweepConfig::new(vec![300.0, 300.0], 1).is_err());
        assert!(SweepConfig::new(vec![300.0, 200.0], 1).is_err());
        let sw = SweepConfig::uniform_inverse(200.0, 4000.0, 16, 2).unwrap();
        assert_eq!(sw.hypotheses.len(), 16);
        assert!(sw.hypotheses.windows(2).all(|p| p[1] > p[0]));
        assert_abs_diff_eq!(sw.hypotheses[0], 200.0, epsilon = 1e-9);
        assert_abs_diff_eq!(sw.hypotheses[15], 4000.0, epsilon = 1e-9);
    }

    #[test]
    fn block_match_zero_disparity_on_identical_views() {
        let img = textured(24, 24, 53);
        let observed = DpPair { left: img.clone(), right: img };
        let mc = MatchConfig::new(3, 5, true).unwrap();
        let disp = block_match(&observed, &mc).unwrap();
        let mut any = false;
        for (idx, &ok) in disp.mask.indexed_iter() {
            if ok {
                assert_abs_diff_eq!(disp.values[idx], 0.0, epsilon = 1e-12);
                any = true;
            }
        }
        assert!(any);
    }

    #[test]
    fn block_match_integer_shift() {
        let base = textured(24, 40, 59);
        let (h, w, _) = base.dim();
        // right(y) = left(y - 2): a feature at x in the left sits at x + 2 in
        // the right, so the disparity convention gives -2.
        let right = Array3::from_shape_fn((h, w, 1), |(z, y, c)| {
            if y >= 2 {
                base[[z, y - 2, c]]
            } else {
                0.0
            }
        });
        let observed = DpPair { left: base, right };
        let mc = MatchConfig::new(3, 5, false).unwrap();
        let disp = block_match(&observed, &mc).unwrap();
        let med = masked_median(&disp.values, &disp.mask).unwrap();
        assert_abs_diff_eq!(med, -2.0, epsilon = 1e-12);
    }

    #[test]
    fn block_match_shift_equivariance() {
        let base = textured(26, 40, 61);
        let (h, w, _) = base.dim();
        let shift = 3usize;
        let shifted =
            Array3::from_shape_fn((h, w, 1), |(z, y, c)| if y >= shift { base[[z, y - shift, c]] } else { 0.0 });
        let mc = MatchConfig::new(2, 5, true).unwrap();
        let d0 = block_match(&observed_pair(&base, 1), &mc).unwrap();
        let d1 = block_match(&observed_pair(&shifted, 1), &mc).unwrap();
        // Compare on the shared interior.
        for z in 0..h {
            for y in 0..w - shift {
                if d0.mask[[z, y]] && d1.mask[[z, y + shift]] {
                    assert_abs_diff_eq!(d0.values[[z, y]], d1.values[[z, y + shift]], epsilon = 1e-9);
                }
            }
        }
    }

    fn observed_pair(img: &Array3<f64>, shift: usize) -> DpPair {
        let (h, w, c) = img.dim();
        let right = Array3::from_shape_fn((h, w, c), |(z, y, ch)| {
            if y >= shift {
                img[[z, y - shift, ch]]
            } else {
                0.0
            }
        });
        DpPair { left: img.clone(), right }
    }

    #[test]
    fn block_match_on_simulated_scene_matches_analytic() {
        let cfg = example_config();
        let sharp = textured(48, 64, 67);
        let img = RgbdImage::with_full_mask(sharp, Array2::from_elem((48, 64), 420.0)).unwrap();
        let (observed, _) = simulate_fast(&img, &cfg).unwrap();
        let mc = MatchConfig::new(4, 7, true).unwrap();
        let disp = block_match(&observed, &mc).unwrap();
        let med = masked_median(&disp.values, &disp.mask).unwrap();
        let expected = cfg.disparity_for_depth(420.0).unwrap();
        assert!((med - expected).abs() < 0.3, "median {med} vs analytic {expected}");
        let depth = disparity_to_depth_map(&disp, &cfg);
        let med_d = masked_median(&depth.values, &depth.mask).unwrap();
        assert!((med_d - 420.0).abs() / 420.0 < 0.05, "median depth {med_d}");
    }

    #[test]
    fn disparity_map_inversion() {
        let cfg = example_config();
        let mut values = Array2::zeros((2, 3));
        values[[0, 1]] = -1.9048;
        values[[1, 2]] = 5.0; // beyond the attainable range
        let mask = Array2::from_elem((2, 3), true);
        let disp = DisparityMap::new(values, mask).unwrap();
        let depth = disparity_to_depth_map(&disp, &cfg);
        assert_abs_diff_eq!(depth.values[[0, 0]], 2100.0, epsilon = 1e-9);
        assert_abs_diff_eq!(depth.values[[0, 1]], 420.0, epsilon = 0.05);
        assert!(!depth.mask[[1, 2]]);
    }

    #[test]
    fn match_config_validation() {
        assert!(MatchConfig::new(0, 5, true).is_err());
        assert!(MatchConfig::new(2, 4, true).is_err());
        assert!(MatchConfig::new(2, 1, true).is_err());
        assert!(MatchConfig::new(2, 3, true).is_ok());
    }
}
