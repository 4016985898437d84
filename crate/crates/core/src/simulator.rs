//! Synthesis of a dual-pixel image pair from an RGB-D image.
//!
//! Every source pixel scatters its intensity uniformly over one footprint
//! rectangle per half-aperture (see [`crate::optics`]). The fast path writes
//! four signed, bilinearly split corner deltas per footprint into a
//! differential image and recovers the views with a single 2D prefix sum, so
//! its cost does not depend on footprint size. The brute-force path loops
//! over every covered pixel and is kept as the correctness oracle.
//!
//! Deposit convention shared by both paths: a footprint rectangle with raw
//! area `A` deposits density `value / max(A, 1)` over the rectangle, each
//! integer pixel weighted by its fractional overlap with the rectangle
//! (pixel `(y, z)` owns the cell `[y, y+1) x [z, z+1)`). When `A < 1`, the
//! remaining mass `value * (1 - A)` is deposited as a point splat at the
//! footprint center, so total energy is conserved for every footprint and an
//! exactly in-focus pixel reduces to a unit deposit on its own site.
//! Footprint parts falling outside the frame are clipped and the lost energy
//! is accumulated in a per-view, per-channel counter.
//!
//! Accumulation is banded over output rows with a fixed band height, and
//! bands are filled in source order, so results are bitwise identical for
//! any worker count.

use ndarray::{Array2, Array3, ArrayViewMut3, Axis};
use ndarray::parallel::prelude::*;

use crate::error::{Error, Result};
use crate::optics::{BlurRegion, CameraConfig};

/// Output rows per accumulation band. Fixed so that the set of deposits per
/// band, and therefore the floating-point result, never depends on the
/// number of workers.
const BAND_ROWS: usize = 32;

/// A sharp intensity image with per-pixel metric depth.
///
/// Intensity is `(H, W, C)` with `C` of 1 or 3 and values in `[0, 1]`;
/// depth is `(H, W)` in pixel units. `mask` flags pixels whose depth is
/// usable; masked-out pixels contribute nothing to simulation.
#[derive(Debug, Clone)]
pub struct RgbdImage {
    pub intensity: Array3<f64>,
    pub depth: Array2<f64>,
    pub mask: Array2<bool>,
}

impl RgbdImage {
    pub fn new(intensity: Array3<f64>, depth: Array2<f64>, mask: Array2<bool>) -> Result<Self> {
        let (h, w, c) = intensity.dim();
        if c != 1 && c != 3 {
            return Err(Error::shape(format!("intensity must have 1 or 3 channels, got {c}")));
        }
        if depth.dim() != (h, w) {
            return Err(Error::shape(format!(
                "depth dimensions {:?} do not match intensity {:?}",
                depth.dim(),
                (h, w)
            )));
        }
        if mask.dim() != (h, w) {
            return Err(Error::shape(format!(
                "mask dimensions {:?} do not match intensity {:?}",
                mask.dim(),
                (h, w)
            )));
        }
        Ok(RgbdImage {
            intensity: to_standard(intensity),
            depth,
            mask,
        })
    }

    /// Image whose every depth is valid.
    pub fn with_full_mask(intensity: Array3<f64>, depth: Array2<f64>) -> Result<Self> {
        let mask = Array2::from_elem(depth.dim(), true);
        RgbdImage::new(intensity, depth, mask)
    }

    /// `(height, width, channels)`.
    pub fn dim(&self) -> (usize, usize, usize) {
        self.intensity.dim()
    }

    /// Errors unless every masked depth is finite and beyond the focal
    /// length of `cfg`.
    pub fn validate_depths(&self, cfg: &CameraConfig) -> Result<()> {
        for ((rc, m), d) in self.mask.indexed_iter().zip(self.depth.iter()) {
            if *m && !(d.is_finite() && *d > cfg.focal_length) {
                return Err(Error::domain(format!(
                    "depth {d} at {rc:?} is not beyond the focal length {}",
                    cfg.focal_length
                )));
            }
        }
        Ok(())
    }
}

/// The two single-exposure sub-aperture views.
#[derive(Debug, Clone)]
pub struct DpPair {
    pub left: Array3<f64>,
    pub right: Array3<f64>,
}

impl DpPair {
    pub fn dim(&self) -> (usize, usize, usize) {
        self.left.dim()
    }
}

/// Accumulated signed corner deltas prior to integration.
#[derive(Debug, Clone)]
pub struct DifferentialImage {
    pub values: Array3<f64>,
}

impl DifferentialImage {
    pub fn zeros(h: usize, w: usize, c: usize) -> Self {
        DifferentialImage { values: Array3::zeros((h, w, c)) }
    }

    /// Total signed sum per channel. Zero when no deposit was clipped at the
    /// frame border (interior corner deltas cancel in quadruples).
    pub fn signed_sum(&self) -> Vec<f64> {
        let c = self.values.dim().2;
        (0..c).map(|ch| self.values.index_axis(Axis(2), ch).sum()).collect()
    }
}

/// Diagnostics from one simulation run.
#[derive(Debug, Clone, Default)]
pub struct SimulateStats {
    /// Energy lost at the frame border, per channel, left view.
    pub clipped_energy_left: Vec<f64>,
    /// Energy lost at the frame border, per channel, right view.
    pub clipped_energy_right: Vec<f64>,
    /// Total magnitude of negative output values clamped to zero.
    pub clamped_negative_energy: f64,
    /// Number of output samples that were clamped.
    pub clamped_samples: usize,
    /// Source pixels that contributed (valid depth mask).
    pub covered_source_pixels: usize,
    pub total_source_pixels: usize,
}

/// One rectangle deposit: uniform density over `[y0,y1) x [z0,z1)` plus an
/// optional point remainder that keeps sub-pixel footprints mass-conserving.
#[derive(Debug, Clone, Copy)]
struct BoxSplat {
    y0: f64,
    y1: f64,
    z0: f64,
    z1: f64,
    /// `1 / max(raw_area, 1)`.
    inv_area: f64,
    /// `max(1 - raw_area, 0)`: fraction of the pixel value deposited at the
    /// footprint center.
    res_frac: f64,
    res_y: f64,
    res_z: f64,
}

impl BoxSplat {
    fn from_region(region: &BlurRegion) -> Self {
        let raw = region.raw_area();
        let (cy, cz) = region.center();
        BoxSplat {
            y0: region.y_min,
            y1: region.y_max,
            z0: region.z_min,
            z1: region.z_max,
            inv_area: 1.0 / raw.max(1.0),
            res_frac: (1.0 - raw).max(0.0),
            res_y: cy,
            res_z: cz,
        }
    }

    /// Fraction of the pixel value lost outside the `w x h` frame.
    fn clipped_fraction(&self, w: usize, h: usize) -> f64 {
        let ov_main = overlap_len(self.y0, self.y1, w as f64) * overlap_len(self.z0, self.z1, h as f64);
        let raw = (self.y1 - self.y0) * (self.z1 - self.z0);
        let ov_res = overlap_len(self.res_y, self.res_y + 1.0, w as f64)
            * overlap_len(self.res_z, self.res_z + 1.0, h as f64);
        self.inv_area * (raw - ov_main) + self.res_frac * (1.0 - ov_res)
    }

    /// Lowest and highest differential-image row this splat can touch.
    fn row_span(&self, h: usize) -> (usize, usize) {
        let hf = h as f64;
        let lo = self.z0.min(self.res_z).clamp(0.0, hf).floor() as usize;
        let hi = (self.z1.max(self.res_z + 1.0)).clamp(0.0, hf).floor() as usize + 1;
        (lo.min(h.saturating_sub(1)), hi.min(h.saturating_sub(1)))
    }
}

/// `|[a, b] ∩ [0, hi]|`.
fn overlap_len(a: f64, b: f64, hi: f64) -> f64 {
    (b.min(hi) - a.max(0.0)).max(0.0)
}

/// Splits a clamped coordinate into its lower integer site and the weights
/// of the two neighboring sites.
#[inline]
fn split_coord(v: f64) -> (usize, f64, f64) {
    let i = v.floor();
    let frac = v - i;
    (i as usize, 1.0 - frac, frac)
}

/// Writes the four signed corner deltas of one box deposit into a horizontal
/// band of the differential image. `dens` is the per-channel density; sites
/// outside the band or the frame are skipped.
fn splat_box_into_band(
    band: &mut ArrayViewMut3<'_, f64>,
    band_lo: usize,
    w: usize,
    h: usize,
    y0: f64,
    y1: f64,
    z0: f64,
    z1: f64,
    dens: &[f64],
) {
    let (wf, hf) = (w as f64, h as f64);
    let (y0, y1) = (y0.clamp(0.0, wf), y1.clamp(0.0, wf));
    let (z0, z1) = (z0.clamp(0.0, hf), z1.clamp(0.0, hf));
    if y0 >= y1 || z0 >= z1 {
        // Coinciding corners cancel exactly; nothing lands in frame.
        return;
    }
    let band_hi = (band_lo + band.dim().0).min(h);
    let (iy0, wy00, wy01) = split_coord(y0);
    let (iy1, wy10, wy11) = split_coord(y1);
    let (iz0, wz00, wz01) = split_coord(z0);
    let (iz1, wz10, wz11) = split_coord(z1);
    // Sign pattern: +(y0,z0) -(y1,z0) -(y0,z1) +(y1,z1).
    let corners = [
        (iy0, wy00, wy01, iz0, wz00, wz01, 1.0),
        (iy1, wy10, wy11, iz0, wz00, wz01, -1.0),
        (iy0, wy00, wy01, iz1, wz10, wz11, -1.0),
        (iy1, wy10, wy11, iz1, wz10, wz11, 1.0),
    ];
    for (iy, wy_a, wy_b, iz, wz_a, wz_b, sign) in corners {
        for (zs, wz) in [(iz, wz_a), (iz + 1, wz_b)] {
            if zs < band_lo || zs >= band_hi || wz == 0.0 {
                continue;
            }
            let zl = zs - band_lo;
            for (ys, wy) in [(iy, wy_a), (iy + 1, wy_b)] {
                if ys >= w || wy == 0.0 {
                    continue;
                }
                let wgt = sign * wy * wz;
                for (c, d) in dens.iter().enumerate() {
                    band[[zl, ys, c]] += d * wgt;
                }
            }
        }
    }
}

/// Deposits the footprint `region` of a pixel with per-channel intensities
/// `values` into the differential image. Energy falling outside the frame is
/// added to the per-channel `clipped` counter.
pub fn splat_corners(
    diff: &mut DifferentialImage,
    region: &BlurRegion,
    values: &[f64],
    clipped: &mut [f64],
) {
    let (h, w, c) = diff.values.dim();
    assert_eq!(values.len(), c, "one intensity per channel");
    assert_eq!(clipped.len(), c, "one clip counter per channel");
    let splat = BoxSplat::from_region(region);
    let mut band = diff.values.view_mut();
    apply_splat(&mut band, 0, w, h, &splat, values);
    let frac = splat.clipped_fraction(w, h);
    for (acc, v) in clipped.iter_mut().zip(values) {
        *acc += frac * v;
    }
}

fn apply_splat(
    band: &mut ArrayViewMut3<'_, f64>,
    band_lo: usize,
    w: usize,
    h: usize,
    splat: &BoxSplat,
    values: &[f64],
) {
    let mut dens = [0.0f64; 4];
    let c = values.len();
    for ch in 0..c {
        dens[ch] = values[ch] * splat.inv_area;
    }
    splat_box_into_band(band, band_lo, w, h, splat.y0, splat.y1, splat.z0, splat.z1, &dens[..c]);
    if splat.res_frac > 0.0 {
        for ch in 0..c {
            dens[ch] = values[ch] * splat.res_frac;
        }
        splat_box_into_band(
            band,
            band_lo,
            w,
            h,
            splat.res_y,
            splat.res_y + 1.0,
            splat.res_z,
            splat.res_z + 1.0,
            &dens[..c],
        );
    }
}

/// 2D inclusive prefix sum (summed-area table) of the differential image,
/// per channel: rows first, then columns.
pub fn integrate(diff: &DifferentialImage) -> Array3<f64> {
    let mut out = diff.values.clone();
    let c = out.dim().2;
    out.axis_iter_mut(Axis(0)).into_par_iter().for_each(|mut row_plane| {
        // row_plane: (W, C)
        let n = row_plane.dim().0;
        for ch in 0..c {
            let mut acc = 0.0;
            for y in 0..n {
                acc += row_plane[[y, ch]];
                row_plane[[y, ch]] = acc;
            }
        }
    });
    out.axis_iter_mut(Axis(1)).into_par_iter().for_each(|mut col_plane| {
        // col_plane: (H, C)
        let n = col_plane.dim().0;
        for ch in 0..c {
            let mut acc = 0.0;
            for z in 0..n {
                acc += col_plane[[z, ch]];
                col_plane[[z, ch]] = acc;
            }
        }
    });
    out
}

struct PixelSplat {
    row: u32,
    col: u32,
    left: BoxSplat,
    right: BoxSplat,
}

/// Simulates the DP pair through the differential-mask + prefix-sum path.
///
/// Cost per source pixel is constant in the footprint size. Output is
/// bitwise identical for any worker count.
pub fn simulate_fast(img: &RgbdImage, cfg: &CameraConfig) -> Result<(DpPair, SimulateStats)> {
    cfg.validate()?;
    let (h, w, c) = img.dim();
    let intensity = img.intensity.as_slice().expect("standard layout");

    // Per-row footprint construction; row order is restored by collect.
    let rows: Vec<(Vec<PixelSplat>, Vec<f64>, Vec<f64>, usize)> = (0..h)
        .into_par_iter()
        .map(|r| -> Result<_> {
            let mut splats = Vec::new();
            let mut clip_l = vec![0.0; c];
            let mut clip_r = vec![0.0; c];
            let mut covered = 0usize;
            for col in 0..w {
                if !img.mask[[r, col]] {
                    continue;
                }
                let d = img.depth[[r, col]];
                let pixel = (col as f64, r as f64);
                let (rl, rr) = cfg.blur_regions(pixel, d)?;
                let left = BoxSplat::from_region(&rl);
                let right = BoxSplat::from_region(&rr);
                let fl = left.clipped_fraction(w, h);
                let fr = right.clipped_fraction(w, h);
                if fl != 0.0 || fr != 0.0 {
                    let base = (r * w + col) * c;
                    for ch in 0..c {
                        clip_l[ch] += fl * intensity[base + ch];
                        clip_r[ch] += fr * intensity[base + ch];
                    }
                }
                covered += 1;
                splats.push(PixelSplat { row: r as u32, col: col as u32, left, right });
            }
            Ok((splats, clip_l, clip_r, covered))
        })
        .collect::<Result<_>>()?;

    let mut records = Vec::new();
    let mut stats = SimulateStats {
        clipped_energy_left: vec![0.0; c],
        clipped_energy_right: vec![0.0; c],
        total_source_pixels: h * w,
        ..Default::default()
    };
    for (splats, clip_l, clip_r, covered) in rows {
        records.extend(splats);
        for ch in 0..c {
            stats.clipped_energy_left[ch] += clip_l[ch];
            stats.clipped_energy_right[ch] += clip_r[ch];
        }
        stats.covered_source_pixels += covered;
    }

    // Bucket record indices by the output bands they can touch.
    let n_bands = h.div_ceil(BAND_ROWS);
    let mut buckets: Vec<Vec<u32>> = vec![Vec::new(); n_bands];
    for (i, rec) in records.iter().enumerate() {
        let (ll, lh) = rec.left.row_span(h);
        let (rl, rh) = rec.right.row_span(h);
        let lo = ll.min(rl) / BAND_ROWS;
        let hi = lh.max(rh) / BAND_ROWS;
        for bucket in buckets.iter_mut().take(hi + 1).skip(lo) {
            bucket.push(i as u32);
        }
    }

    let mut diff_l = DifferentialImage::zeros(h, w, c);
    let mut diff_r = DifferentialImage::zeros(h, w, c);
    diff_l
        .values
        .axis_chunks_iter_mut(Axis(0), BAND_ROWS)
        .into_par_iter()
        .zip(diff_r.values.axis_chunks_iter_mut(Axis(0), BAND_ROWS).into_par_iter())
        .enumerate()
        .for_each(|(b, (mut band_l, mut band_r))| {
            let band_lo = b * BAND_ROWS;
            let mut band_l = band_l.view_mut();
            let mut band_r = band_r.view_mut();
            for &i in &buckets[b] {
                let rec = &records[i as usize];
                let base = (rec.row as usize * w + rec.col as usize) * c;
                let values = &intensity[base..base + c];
                apply_splat(&mut band_l, band_lo, w, h, &rec.left, values);
                apply_splat(&mut band_r, band_lo, w, h, &rec.right, values);
            }
        });

    let mut left = integrate(&diff_l);
    let mut right = integrate(&diff_r);
    for img in [&mut left, &mut right] {
        let (neg_sum, neg_count) = clamp_negatives(img);
        stats.clamped_negative_energy += neg_sum;
        stats.clamped_samples += neg_count;
    }
    Ok((DpPair { left, right }, stats))
}

/// Clamps negative values to zero in place, returning the clamped magnitude
/// and sample count. Row results are combined in order.
fn clamp_negatives(img: &mut Array3<f64>) -> (f64, usize) {
    let per_row: Vec<(f64, usize)> = img
        .axis_iter_mut(Axis(0))
        .into_par_iter()
        .map(|mut plane| {
            let mut sum = 0.0;
            let mut count = 0usize;
            for v in plane.iter_mut() {
                if *v < 0.0 {
                    sum -= *v;
                    count += 1;
                    *v = 0.0;
                }
            }
            (sum, count)
        })
        .collect();
    per_row.into_iter().fold((0.0, 0), |(s, n), (rs, rn)| (s + rs, n + rn))
}

/// Direct scatter: loops over every integer pixel overlapped by each
/// footprint. Serves as the correctness oracle for [`simulate_fast`]; its
/// cost grows with footprint area.
pub fn simulate_brute(img: &RgbdImage, cfg: &CameraConfig) -> Result<(DpPair, SimulateStats)> {
    cfg.validate()?;
    let (h, w, c) = img.dim();
    let intensity = img.intensity.as_slice().expect("standard layout");
    let mut left = Array3::zeros((h, w, c));
    let mut right = Array3::zeros((h, w, c));
    let mut stats = SimulateStats {
        clipped_energy_left: vec![0.0; c],
        clipped_energy_right: vec![0.0; c],
        total_source_pixels: h * w,
        ..Default::default()
    };
    for r in 0..h {
        for col in 0..w {
            if !img.mask[[r, col]] {
                continue;
            }
            let d = img.depth[[r, col]];
            let pixel = (col as f64, r as f64);
            let (rl, rr) = cfg.blur_regions(pixel, d)?;
            stats.covered_source_pixels += 1;
            let base = (r * w + col) * c;
            let values = &intensity[base..base + c];
            for (region, out, clip) in [
                (&rl, &mut left, &mut stats.clipped_energy_left),
                (&rr, &mut right, &mut stats.clipped_energy_right),
            ] {
                let splat = BoxSplat::from_region(region);
                deposit_overlap(out, &splat, values);
                let frac = splat.clipped_fraction(w, h);
                for ch in 0..c {
                    clip[ch] += frac * values[ch];
                }
            }
        }
    }
    for img in [&mut left, &mut right] {
        let (neg_sum, neg_count) = clamp_negatives(img);
        stats.clamped_negative_energy += neg_sum;
        stats.clamped_samples += neg_count;
    }
    Ok((DpPair { left, right }, stats))
}

/// Overlap-weighted direct deposit of one footprint (box part plus point
/// remainder), clipped to the frame.
fn deposit_overlap(out: &mut Array3<f64>, splat: &BoxSplat, values: &[f64]) {
    let (h, w, c) = out.dim();
    deposit_box(out, splat.y0, splat.y1, splat.z0, splat.z1, splat.inv_area, values, h, w, c);
    if splat.res_frac > 0.0 {
        deposit_box(
            out,
            splat.res_y,
            splat.res_y + 1.0,
            splat.res_z,
            splat.res_z + 1.0,
            splat.res_frac,
            values,
            h,
            w,
            c,
        );
    }
}

#[allow(clippy::too_many_arguments)]
fn deposit_box(
    out: &mut Array3<f64>,
    y0: f64,
    y1: f64,
    z0: f64,
    z1: f64,
    density: f64,
    values: &[f64],
    h: usize,
    w: usize,
    c: usize,
) {
    if y1 <= 0.0 || z1 <= 0.0 || y0 >= w as f64 || z0 >= h as f64 || y1 <= y0 || z1 <= z0 {
        return;
    }
    let zs = z0.max(0.0).floor() as usize;
    let ze = (z1.min(h as f64).ceil() as usize).min(h);
    let ys = y0.max(0.0).floor() as usize;
    let ye = (y1.min(w as f64).ceil() as usize).min(w);
    for z in zs..ze {
        let ov_z = (z1.min(z as f64 + 1.0) - z0.max(z as f64)).max(0.0);
        if ov_z == 0.0 {
            continue;
        }
        for y in ys..ye {
            let ov_y = (y1.min(y as f64 + 1.0) - y0.max(y as f64)).max(0.0);
            if ov_y == 0.0 {
                continue;
            }
            let wgt = density * ov_y * ov_z;
            for (ch, v) in values.iter().enumerate().take(c) {
                out[[z, y, ch]] += v * wgt;
            }
        }
    }
}

fn to_standard(a: Array3<f64>) -> Array3<f64> {
    if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().to_owned()
    }
}
