//! Thin-lens geometry for a split-aperture camera.
//!
//! The camera is modelled as a thin lens in the plane `X = 0` with a sensor
//! plane at `X = F` behind it. A scene point at depth `d` focuses at the
//! virtual depth `d' = f d / (d - f)`; rays through a lens-plane point
//! `C = (Y0, Z0)` land on the sensor at
//!
//! ```text
//!     (d' - F)/d' * (Y0, Z0) + F * (y/f, z/f)
//! ```
//!
//! so the footprint of one half-aperture is a scaled, translated copy of the
//! aperture rectangle. All lengths, including depth, are expressed in pixel
//! units.
//!
//! Left/right naming and the disparity sign are an internal convention: with
//! the default split aperture (left half at negative Y), scene points closer
//! than the in-focus plane have negative disparity, defined as the left-view
//! position minus the right-view position of the same scene point. Real
//! sensors may wire their two readouts either way round.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned rectangle in the lens plane, in pixel units.
///
/// `y` is the horizontal (column) axis and `z` the vertical (row) axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApertureRect {
    pub y_min: f64,
    pub y_max: f64,
    pub z_min: f64,
    pub z_max: f64,
}

impl ApertureRect {
    pub fn new(y_min: f64, y_max: f64, z_min: f64, z_max: f64) -> Self {
        ApertureRect { y_min, y_max, z_min, z_max }
    }

    pub fn width(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn height(&self) -> f64 {
        self.z_max - self.z_min
    }

    /// Geometric centroid `(y, z)`.
    pub fn centroid(&self) -> (f64, f64) {
        (0.5 * (self.y_min + self.y_max), 0.5 * (self.z_min + self.z_max))
    }

    /// The four corners in (top-left, top-right, bottom-left, bottom-right)
    /// order, where "top" is `z_min` and "left" is `y_min`.
    pub fn corners(&self) -> [(f64, f64); 4] {
        [
            (self.y_min, self.z_min),
            (self.y_max, self.z_min),
            (self.y_min, self.z_max),
            (self.y_max, self.z_max),
        ]
    }

    fn validate(&self, name: &str) -> Result<()> {
        let vals = [self.y_min, self.y_max, self.z_min, self.z_max];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain(format!("{name}: aperture bounds must be finite")));
        }
        if self.width() <= 0.0 || self.height() <= 0.0 {
            return Err(Error::domain(format!(
                "{name}: aperture must have positive extent in both axes, got {} x {}",
                self.width(),
                self.height()
            )));
        }
        Ok(())
    }
}

/// Which half of the aperture an image was formed through.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ApertureSide {
    Left,
    Right,
}

/// Thin-lens and sensor parameters, pixel units throughout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraConfig {
    /// Focal length of the lens.
    pub focal_length: f64,
    /// Distance from the lens to the sensor plane. Not the focal length.
    pub sensor_distance: f64,
    /// Lens region feeding the left view.
    pub aperture_left: ApertureRect,
    /// Lens region feeding the right view.
    pub aperture_right: ApertureRect,
    /// When set, sensor coordinates are rescaled by `focal_length /
    /// sensor_distance` so an in-focus point lands exactly on its own input
    /// pixel. Required whenever synthesized views are compared against the
    /// input grid.
    pub magnification_normalized: bool,
}

impl CameraConfig {
    /// Camera with a square `width x width` aperture split into mirror-image
    /// left/right halves along the vertical axis.
    pub fn split_aperture(focal_length: f64, sensor_distance: f64, width: f64) -> Result<Self> {
        let half = 0.5 * width;
        let cfg = CameraConfig {
            focal_length,
            sensor_distance,
            aperture_left: ApertureRect::new(-half, 0.0, -half, half),
            aperture_right: ApertureRect::new(0.0, half, -half, half),
            magnification_normalized: true,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.focal_length > 0.0) || !self.focal_length.is_finite() {
            return Err(Error::domain(format!(
                "focal length must be finite and > 0, got {}",
                self.focal_length
            )));
        }
        if !(self.sensor_distance > 0.0) || !self.sensor_distance.is_finite() {
            return Err(Error::domain(format!(
                "sensor distance must be finite and > 0, got {}",
                self.sensor_distance
            )));
        }
        self.aperture_left.validate("aperture_left")?;
        self.aperture_right.validate("aperture_right")?;
        Ok(())
    }

    pub fn aperture(&self, side: ApertureSide) -> &ApertureRect {
        match side {
            ApertureSide::Left => &self.aperture_left,
            ApertureSide::Right => &self.aperture_right,
        }
    }

    /// Scale applied to sensor coordinates: `f/F` under magnification
    /// normalization, 1 otherwise.
    pub fn sensor_scale(&self) -> f64 {
        if self.magnification_normalized {
            self.focal_length / self.sensor_distance
        } else {
            1.0
        }
    }

    /// Depth of the scene plane imaged exactly onto the sensor,
    /// `f F / (F - f)`. Infinite (`None`) when `F <= f`, in which case no
    /// finite scene depth is in focus.
    pub fn in_focus_depth(&self) -> Option<f64> {
        let (f, sd) = (self.focal_length, self.sensor_distance);
        if sd > f {
            Some(f * sd / (sd - f))
        } else {
            None
        }
    }

    /// Depth of the virtual image of a scene point at depth `d`.
    ///
    /// `d' = f d / (d - f)`; strictly decreasing in `d`, approaching `f`
    /// from above as `d` grows.
    pub fn virtual_depth(&self, d: f64) -> Result<f64> {
        if !d.is_finite() {
            return Err(Error::domain(format!("depth must be finite, got {d}")));
        }
        if d <= self.focal_length {
            return Err(Error::domain(format!(
                "depth {d} must exceed the focal length {}",
                self.focal_length
            )));
        }
        Ok(self.focal_length * d / (d - self.focal_length))
    }

    /// Signed footprint scale `(d' - F)/d'` for a scene depth `d`.
    ///
    /// Positive when the sensor lies in front of the virtual point, negative
    /// behind it (the footprint is then inverted), zero exactly in focus.
    pub fn footprint_scale(&self, d: f64) -> Result<f64> {
        let dv = self.virtual_depth(d)?;
        Ok((dv - self.sensor_distance) / dv)
    }

    /// Sensor-plane landing point of the ray from pixel `(y, z)` at depth
    /// `d` through the lens-plane point `corner`.
    pub fn scatter_point(&self, pixel: (f64, f64), d: f64, corner: (f64, f64)) -> Result<(f64, f64)> {
        let s = self.footprint_scale(d)?;
        let k = self.sensor_scale();
        if self.magnification_normalized {
            // k * (s*C + F*(y/f, z/f)) with k = f/F makes the constant term
            // exactly the pixel coordinate.
            Ok((k * s * corner.0 + pixel.0, k * s * corner.1 + pixel.1))
        } else {
            let m = self.sensor_distance / self.focal_length;
            Ok((s * corner.0 + m * pixel.0, s * corner.1 + m * pixel.1))
        }
    }

    /// Footprint of pixel `(y, z)` at depth `d` seen through `aperture`.
    ///
    /// Maps the four aperture corners through [`scatter_point`] and
    /// normalizes the bounds, so the region stays well-ordered when the
    /// scale is negative and the footprint inverts.
    ///
    /// [`scatter_point`]: CameraConfig::scatter_point
    pub fn blur_region(&self, pixel: (f64, f64), d: f64, aperture: &ApertureRect) -> Result<BlurRegion> {
        let s = self.footprint_scale(d)?;
        let k = self.sensor_scale();
        let m = if self.magnification_normalized {
            1.0
        } else {
            self.sensor_distance / self.focal_length
        };
        let (cy, cz) = (m * pixel.0, m * pixel.1);
        let a = k * s * aperture.y_min + cy;
        let b = k * s * aperture.y_max + cy;
        let c = k * s * aperture.z_min + cz;
        let e = k * s * aperture.z_max + cz;
        Ok(BlurRegion::from_corners(a.min(b), a.max(b), c.min(e), c.max(e), s))
    }

    /// Footprints of both half-apertures for the same pixel and depth.
    pub fn blur_regions(&self, pixel: (f64, f64), d: f64) -> Result<(BlurRegion, BlurRegion)> {
        Ok((
            self.blur_region(pixel, d, &self.aperture_left)?,
            self.blur_region(pixel, d, &self.aperture_right)?,
        ))
    }

    /// Signed horizontal offset between the left and right footprints of a
    /// point at depth `d` (left position minus right position).
    ///
    /// The footprints are translates of each other, so this is a single
    /// number per depth: `k * s * (c_L - c_R)_y` for aperture centroids
    /// `c_L`, `c_R`. Zero exactly at the in-focus depth.
    pub fn disparity_for_depth(&self, d: f64) -> Result<f64> {
        let s = self.footprint_scale(d)?;
        Ok(self.sensor_scale() * s * self.centroid_gap())
    }

    /// Scene depth whose disparity is `disp`; the inverse of
    /// [`disparity_for_depth`] on `(f, inf)`.
    ///
    /// [`disparity_for_depth`]: CameraConfig::disparity_for_depth
    pub fn depth_for_disparity(&self, disp: f64) -> Result<f64> {
        if !disp.is_finite() {
            return Err(Error::Range(format!("disparity must be finite, got {disp}")));
        }
        let gap = self.sensor_scale() * self.centroid_gap();
        if gap == 0.0 {
            return Err(Error::Range(
                "aperture centroids coincide horizontally; disparity carries no depth".into(),
            ));
        }
        // disp = gap * (1 - F/d')  =>  d' = F / (1 - disp/gap)
        let denom = 1.0 - disp / gap;
        if denom <= 0.0 {
            return Err(Error::Range(format!(
                "disparity {disp} requires a non-positive virtual depth"
            )));
        }
        let dv = self.sensor_distance / denom;
        if dv <= self.focal_length {
            return Err(Error::Range(format!(
                "disparity {disp} is outside the range attainable by any depth > f"
            )));
        }
        // d' = f d / (d - f)  =>  d = f d' / (d' - f)
        Ok(self.focal_length * dv / (dv - self.focal_length))
    }

    fn centroid_gap(&self) -> f64 {
        self.aperture_left.centroid().0 - self.aperture_right.centroid().0
    }
}

/// A pixel's scatter footprint on the sensor: a scaled, translated (and
/// possibly inverted) copy of the half-aperture rectangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlurRegion {
    pub y_min: f64,
    pub y_max: f64,
    pub z_min: f64,
    pub z_max: f64,
    /// Signed scale factor `(d' - F)/d'`.
    pub scale: f64,
    /// Effective pixel count `max(width * height, 1)`.
    pub area: f64,
}

impl BlurRegion {
    pub fn from_corners(y_min: f64, y_max: f64, z_min: f64, z_max: f64, scale: f64) -> Self {
        let raw = (y_max - y_min) * (z_max - z_min);
        BlurRegion { y_min, y_max, z_min, z_max, scale, area: raw.max(1.0) }
    }

    pub fn width(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn height(&self) -> f64 {
        self.z_max - self.z_min
    }

    /// Rectangle area before the floor of 1 is applied.
    pub fn raw_area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.y_min + self.y_max), 0.5 * (self.z_min + self.z_max))
    }
}
