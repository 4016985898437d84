//! RGB-D ingestion and bulk DP dataset generation.
//!
//! A manifest lists RGB/depth file pairs plus sampling ranges for the camera
//! parameters. Each entry gets its own camera drawn deterministically from
//! the manifest seed and entry index (the in-focus plane is placed uniformly
//! inside the scene's valid depth range), is simulated, and is written out
//! as one directory holding the two views, the sharp image, the inverse
//! depth map and a sidecar recording the exact sampled parameters. Entries
//! run in parallel; the report and every output byte are independent of the
//! worker count.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::optics::CameraConfig;
use crate::simulator::{simulate_fast, RgbdImage};

/// Sampling ranges for randomized camera parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CameraRanges {
    /// Focal length range in pixel units.
    pub focal_length: [f64; 2],
    /// Full aperture width range in pixel units (the split halves are each
    /// half this wide).
    pub aperture_width: [f64; 2],
}

impl Default for CameraRanges {
    fn default() -> Self {
        CameraRanges { focal_length: [80.0, 250.0], aperture_width: [8.0, 32.0] }
    }
}

/// One RGB-D input.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// RGB image path, relative to the manifest file.
    pub rgb: String,
    /// Depth map path (16-bit PNG of scaled integers, or PFM), relative to
    /// the manifest file.
    pub depth: String,
    /// Multiplier converting stored depth values to pixel units.
    pub depth_scale: f64,
    /// Fixed camera for this entry; when absent one is sampled.
    #[serde(default)]
    pub camera: Option<CameraConfig>,
}

/// Dataset generation request.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    #[serde(default)]
    pub camera_ranges: CameraRanges,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<DatasetManifest> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }
}

/// Outcome of one manifest entry.
#[derive(Debug, Clone, Serialize)]
pub struct SampleRecord {
    pub index: usize,
    pub directory: String,
    pub ok: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Border-clipped energy summed over channels, per view.
    pub clipped_energy: [f64; 2],
}

/// Batch summary, assembled in manifest order.
#[derive(Debug, Clone, Serialize)]
pub struct GenerationReport {
    pub successes: usize,
    pub failures: usize,
    pub total_clipped_energy: f64,
    pub samples: Vec<SampleRecord>,
}

/// Everything recorded next to one generated sample.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleSidecar {
    pub entry_index: usize,
    pub rgb: String,
    pub depth: String,
    pub depth_scale: f64,
    pub camera: CameraConfig,
    pub in_focus_depth: Option<f64>,
    /// The stored views are divided by this before 16-bit encoding, so
    /// superposed intensities above 1 survive the round trip. Multiply the
    /// decoded views by it to recover simulator output.
    pub intensity_scale: f64,
    pub clipped_energy: [f64; 2],
    /// Pixels whose stored depth was missing (zero/NaN).
    pub missing_depth_pixels: usize,
    /// Valid pixels masked out because they fell at or inside the focal
    /// length under the sampled camera.
    pub below_focal_pixels: usize,
}

/// Loads an RGB image and its depth map into pixel units.
///
/// Intensities are normalized to `[0,1]`. Depth values are multiplied by
/// `depth_scale`; zeros and NaNs are masked invalid.
pub fn load_rgbd(rgb: &Path, depth: &Path, depth_scale: f64) -> Result<RgbdImage> {
    let intensity = io::load_png(rgb)?;
    let raw = if depth.extension().is_some_and(|e| e.eq_ignore_ascii_case("pfm")) {
        io::read_pfm(depth)?
    } else {
        io::load_png16_gray(depth)?
    };
    let (h, w, _) = intensity.dim();
    if raw.dim() != (h, w) {
        return Err(Error::shape(format!(
            "depth {:?} does not match rgb {:?}",
            raw.dim(),
            (h, w)
        )));
    }
    let mut mask = Array2::from_elem((h, w), true);
    let scaled = Array2::from_shape_fn((h, w), |idx| {
        let v = raw[idx];
        if v.is_finite() && v > 0.0 {
            v * depth_scale
        } else {
            mask[idx] = false;
            0.0
        }
    });
    RgbdImage::new(intensity, scaled, mask)
}

/// Bounds of the valid depths, if any.
fn depth_bounds(img: &RgbdImage) -> Option<(f64, f64)> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (d, m) in img.depth.iter().zip(img.mask.iter()) {
        if *m {
            lo = lo.min(*d);
            hi = hi.max(*d);
        }
    }
    if lo.is_finite() {
        Some((lo, hi))
    } else {
        None
    }
}

/// Draws a camera for one entry: focal length and aperture width uniform in
/// their ranges, in-focus plane uniform inside the scene's valid depth span.
fn sample_camera(ranges: &CameraRanges, seed: u64, index: usize, scene: (f64, f64)) -> Result<CameraConfig> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let f = rng.random_range(ranges.focal_length[0]..=ranges.focal_length[1]);
    let width = rng.random_range(ranges.aperture_width[0]..=ranges.aperture_width[1]);
    let lo = scene.0.max(f * 1.05);
    let hi = scene.1;
    if !(hi > lo) {
        return Err(Error::domain(format!(
            "scene depths [{}, {}] leave no room for an in-focus plane beyond f = {f}",
            scene.0, scene.1
        )));
    }
    let focus = rng.random_range(lo..=hi);
    let sensor_distance = f * focus / (focus - f);
    let mut cfg = CameraConfig::split_aperture(f, sensor_distance, width)?;
    cfg.magnification_normalized = true;
    Ok(cfg)
}

struct SampleOutput {
    record: SampleRecord,
}

fn generate_one(
    manifest: &DatasetManifest,
    base: &Path,
    out_dir: &Path,
    index: usize,
) -> Result<SampleOutput> {
    let entry = &manifest.entries[index];
    let dir_name = format!("sample_{index:05}");
    let dir = out_dir.join(&dir_name);

    let img = load_rgbd(&base.join(&entry.rgb), &base.join(&entry.depth), entry.depth_scale)?;
    let missing = img.mask.iter().filter(|m| !**m).count();

    let cfg = match &entry.camera {
        Some(c) => {
            c.validate()?;
            c.clone()
        }
        None => {
            let bounds = depth_bounds(&img)
                .ok_or_else(|| Error::domain("entry has no valid depth pixels".to_string()))?;
            sample_camera(&manifest.camera_ranges, manifest.seed, index, bounds)?
        }
    };

    // Depths at or inside the focal length cannot scatter; mask them out.
    let mut img = img;
    let mut below_focal = 0usize;
    for (m, d) in img.mask.iter_mut().zip(img.depth.iter()) {
        if *m && *d <= cfg.focal_length {
            *m = false;
            below_focal += 1;
        }
    }
    if img.mask.iter().all(|m| !*m) {
        return Err(Error::domain(format!(
            "every depth is at or inside the sampled focal length {}",
            cfg.focal_length
        )));
    }

    let (pair, stats) = simulate_fast(&img, &cfg)?;
    let clipped = [
        stats.clipped_energy_left.iter().sum::<f64>(),
        stats.clipped_energy_right.iter().sum::<f64>(),
    ];

    // Superposition at depth edges can push view intensities beyond 1;
    // normalize by the peak so nothing is clamped away in the encoding.
    let peak = pair
        .left
        .iter()
        .chain(pair.right.iter())
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let intensity_scale = peak.max(1.0);

    fs::create_dir_all(&dir)?;
    io::save_png16(&dir.join("left.png"), &pair.left.map(|v| v / intensity_scale))?;
    io::save_png16(&dir.join("right.png"), &pair.right.map(|v| v / intensity_scale))?;
    io::save_png16(&dir.join("sharp.png"), &img.intensity)?;
    let inv = Array2::from_shape_fn(img.depth.dim(), |idx| {
        if img.mask[idx] {
            1.0 / img.depth[idx]
        } else {
            0.0
        }
    });
    io::write_pfm(&dir.join("inv_depth.pfm"), &inv)?;
    let sidecar = SampleSidecar {
        entry_index: index,
        rgb: entry.rgb.clone(),
        depth: entry.depth.clone(),
        depth_scale: entry.depth_scale,
        camera: cfg.clone(),
        in_focus_depth: cfg.in_focus_depth(),
        intensity_scale,
        clipped_energy: clipped,
        missing_depth_pixels: missing,
        below_focal_pixels: below_focal,
    };
    fs::write(dir.join("camera.json"), serde_json::to_string_pretty(&sidecar).unwrap())?;

    Ok(SampleOutput {
        record: SampleRecord { index, directory: dir_name, ok: true, error: None, clipped_energy: clipped },
    })
}

/// Generates the whole manifest into `out_dir`.
///
/// Per-entry failures are recorded in the report rather than aborting the
/// batch. Rerunning with the same manifest and seed reproduces every output
/// byte, for any number of workers.
pub fn generate_dataset(manifest: &DatasetManifest, base: &Path, out_dir: &Path) -> Result<GenerationReport> {
    fs::create_dir_all(out_dir)?;
    let records: Vec<SampleRecord> = (0..manifest.entries.len())
        .into_par_iter()
        .map(|i| match generate_one(manifest, base, out_dir, i) {
            Ok(out) => out.record,
            Err(e) => SampleRecord {
                index: i,
                directory: format!("sample_{i:05}"),
                ok: false,
                error: Some(e.to_string()),
                clipped_energy: [0.0, 0.0],
            },
        })
        .collect();
    let successes = records.iter().filter(|r| r.ok).count();
    let report = GenerationReport {
        successes,
        failures: records.len() - successes,
        total_clipped_energy: records.iter().map(|r| r.clipped_energy[0] + r.clipped_energy[1]).sum(),
        samples: records,
    };
    fs::write(out_dir.join("index.json"), serde_json::to_string_pretty(&report).unwrap())?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::depth::DepthMap;
    use crate::losses::reblur_loss;
    use crate::simulator::DpPair;
    use ndarray::{Array, Array3};
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;
    use std::path::Path;

    fn write_fixture(dir: &Path, name: &str, seed: u64, h: usize, w: usize) -> (String, String) {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let rgb = Array::from_shape_fn((h, w, 3), |_| rng.random::<f64>());
        let rgb_name = format!("{name}_rgb.png");
        io::save_png16(&dir.join(&rgb_name), &rgb).unwrap();
        // Depth stored in millimetre-like integers, 1.2m to 5m.
        let depth = Array3::from_shape_fn((h, w, 1), |_| {
            (1200.0 + rng.random::<f64>() * 3800.0) / 65535.0
        });
        let depth_name = format!("{name}_depth.png");
        io::save_png16(&dir.join(&depth_name), &depth).unwrap();
        (rgb_name, depth_name)
    }

    fn fixture_manifest(dir: &Path, n: usize) -> DatasetManifest {
        let entries = (0..n)
            .map(|i| {
                let (rgb, depth) = write_fixture(dir, &format!("e{i}"), 1000 + i as u64, 24, 32);
                ManifestEntry { rgb, depth, depth_scale: 1.0, camera: None }
            })
            .collect();
        DatasetManifest { seed: 42, camera_ranges: CameraRanges::default(), entries }
    }

    #[test]
    fn load_rgbd_masks_missing_depth() {
        let dir = tempfile::tempdir().unwrap();
        let rgb = Array3::from_elem((4, 4, 3), 0.5);
        io::save_png16(&dir.path().join("rgb.png"), &rgb).unwrap();
        let mut depth = Array3::from_elem((4, 4, 1), 0.5);
        depth[[1, 2, 0]] = 0.0; // missing-depth convention
        io::save_png16(&dir.path().join("d.png"), &depth).unwrap();
        let img = load_rgbd(&dir.path().join("rgb.png"), &dir.path().join("d.png"), 2.0).unwrap();
        assert!(!img.mask[[1, 2]]);
        assert!(img.mask[[0, 0]]);
        // depth_scale applied: 0.5 * 65535 rounded, times 2.
        assert!((img.depth[[0, 0]] - 2.0 * (0.5f64 * 65535.0).round()).abs() < 1e-9);
    }

    #[test]
    fn load_rgbd_rejects_mismatched_shapes() {
        let dir = tempfile::tempdir().unwrap();
        let rgb = Array3::from_elem((4, 4, 3), 0.5);
        io::save_png16(&dir.path().join("rgb.png"), &rgb).unwrap();
        let depth = Array3::from_elem((5, 4, 1), 0.5);
        io::save_png16(&dir.path().join("d.png"), &depth).unwrap();
        assert!(matches!(
            load_rgbd(&dir.path().join("rgb.png"), &dir.path().join("d.png"), 1.0),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn generation_is_deterministic_and_loadable() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = fixture_manifest(dir.path(), 3);
        let out_a = dir.path().join("out_a");
        let out_b = dir.path().join("out_b");
        let rep_a = generate_dataset(&manifest, dir.path(), &out_a).unwrap();
        let rep_b = generate_dataset(&manifest, dir.path(), &out_b).unwrap();
        assert_eq!(rep_a.successes, 3);
        assert_eq!(rep_b.failures, 0);
        for i in 0..3 {
            for name in ["left.png", "right.png", "sharp.png", "inv_depth.pfm", "camera.json"] {
                let a = fs::read(out_a.join(format!("sample_{i:05}")).join(name)).unwrap();
                let b = fs::read(out_b.join(format!("sample_{i:05}")).join(name)).unwrap();
                assert_eq!(a, b, "{name} differs for sample {i}");
            }
        }

        // Round-trip one sample and check reblur self-consistency after the
        // 16-bit quantization.
        let sdir = out_a.join("sample_00000");
        let sidecar: SampleSidecar =
            serde_json::from_str(&fs::read_to_string(sdir.join("camera.json")).unwrap()).unwrap();
        let sharp = io::load_png(&sdir.join("sharp.png")).unwrap();
        let s = sidecar.intensity_scale;
        let left = io::load_png(&sdir.join("left.png")).unwrap().map(|v| v * s);
        let right = io::load_png(&sdir.join("right.png")).unwrap().map(|v| v * s);
        let inv_raw = io::read_pfm(&sdir.join("inv_depth.pfm")).unwrap();
        let mask = inv_raw.map(|v| *v > 0.0);
        let inv = crate::depth::InverseDepthMap::new(inv_raw, mask).unwrap();
        let observed = DpPair { left, right };
        let loss = reblur_loss(&sharp, &inv, &observed, &sidecar.camera).unwrap();
        assert!(loss < 1e-3, "quantized reblur self-consistency {loss}");
        let _ = DepthMap::full(Array2::zeros((1, 1)));
    }

    #[test]
    fn failed_entry_does_not_poison_batch() {
        let dir = tempfile::tempdir().unwrap();
        let mut manifest = fixture_manifest(dir.path(), 2);
        manifest.entries.push(ManifestEntry {
            rgb: "missing.png".into(),
            depth: "missing_d.png".into(),
            depth_scale: 1.0,
            camera: None,
        });
        let out = dir.path().join("out");
        let report = generate_dataset(&manifest, dir.path(), &out).unwrap();
        assert_eq!(report.successes, 2);
        assert_eq!(report.failures, 1);
        assert!(!report.samples[2].ok);
        assert!(report.samples[2].error.is_some());
    }

    #[test]
    fn empty_manifest_is_empty_report() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = DatasetManifest {
            seed: 1,
            camera_ranges: CameraRanges::default(),
            entries: vec![],
        };
        let report = generate_dataset(&manifest, dir.path(), &dir.path().join("out")).unwrap();
        assert_eq!(report.successes, 0);
        assert_eq!(report.failures, 0);
        assert!(report.samples.is_empty());
    }

    #[test]
    fn entry_with_unfocusable_depths_fails_cleanly() {
        let dir = tempfile::tempdir().unwrap();
        let rgb = Array3::from_elem((8, 8, 1), 0.5);
        io::save_png16(&dir.path().join("rgb.png"), &rgb).unwrap();
        // All depths around 60 px-units: below every focal length in range.
        let depth = Array3::from_elem((8, 8, 1), 60.0 / 65535.0);
        io::save_png16(&dir.path().join("d.png"), &depth).unwrap();
        let manifest = DatasetManifest {
            seed: 7,
            camera_ranges: CameraRanges::default(),
            entries: vec![ManifestEntry {
                rgb: "rgb.png".into(),
                depth: "d.png".into(),
                depth_scale: 1.0,
                camera: None,
            }],
        };
        let report = generate_dataset(&manifest, dir.path(), &dir.path().join("out")).unwrap();
        assert_eq!(report.failures, 1);
    }

    #[test]
    fn manifest_json_round_trip() {
        let manifest = DatasetManifest {
            seed: 9,
            camera_ranges: CameraRanges { focal_length: [90.0, 120.0], aperture_width: [10.0, 20.0] },
            entries: vec![ManifestEntry {
                rgb: "a.png".into(),
                depth: "b.pfm".into(),
                depth_scale: 3.5,
                camera: Some(CameraConfig::split_aperture(100.0, 105.0, 20.0).unwrap()),
            }],
        };
        let text = serde_json::to_string(&manifest).unwrap();
        let back: DatasetManifest = serde_json::from_str(&text).unwrap();
        assert_eq!(back.seed, 9);
        assert_eq!(back.entries[0].depth_scale, 3.5);
        assert!(back.entries[0].camera.is_some());
    }
}
