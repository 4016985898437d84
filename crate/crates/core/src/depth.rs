//! Depth, inverse-depth and disparity maps with validity masks.

use ndarray::Array2;

use crate::error::{Error, Result};

/// Per-pixel scene depth in pixel units, with a validity mask.
#[derive(Debug, Clone)]
pub struct DepthMap {
    pub values: Array2<f64>,
    pub mask: Array2<bool>,
}

/// Per-pixel inverse depth `1/d` in reciprocal pixel units.
#[derive(Debug, Clone)]
pub struct InverseDepthMap {
    pub values: Array2<f64>,
    pub mask: Array2<bool>,
}

/// Per-pixel signed horizontal disparity (left position minus right
/// position), in pixels.
#[derive(Debug, Clone)]
pub struct DisparityMap {
    pub values: Array2<f64>,
    pub mask: Array2<bool>,
}

fn checked(values: Array2<f64>, mask: Array2<bool>) -> Result<(Array2<f64>, Array2<bool>)> {
    if values.dim() != mask.dim() {
        return Err(Error::shape(format!(
            "values {:?} and mask {:?} differ",
            values.dim(),
            mask.dim()
        )));
    }
    Ok((values, mask))
}

impl DepthMap {
    pub fn new(values: Array2<f64>, mask: Array2<bool>) -> Result<Self> {
        let (values, mask) = checked(values, mask)?;
        Ok(DepthMap { values, mask })
    }

    pub fn full(values: Array2<f64>) -> Self {
        let mask = Array2::from_elem(values.dim(), true);
        DepthMap { values, mask }
    }

    /// Pixelwise reciprocal; nonpositive or non-finite depths become
    /// invalid.
    pub fn to_inverse(&self) -> InverseDepthMap {
        let mut mask = self.mask.clone();
        let values = Array2::from_shape_fn(self.values.dim(), |idx| {
            let d = self.values[idx];
            if mask[idx] && d.is_finite() && d > 0.0 {
                1.0 / d
            } else {
                mask[idx] = false;
                0.0
            }
        });
        InverseDepthMap { values, mask }
    }
}

impl InverseDepthMap {
    pub fn new(values: Array2<f64>, mask: Array2<bool>) -> Result<Self> {
        let (values, mask) = checked(values, mask)?;
        Ok(InverseDepthMap { values, mask })
    }

    pub fn full(values: Array2<f64>) -> Self {
        let mask = Array2::from_elem(values.dim(), true);
        InverseDepthMap { values, mask }
    }

    /// Pixelwise reciprocal; nonpositive or non-finite entries become
    /// invalid.
    pub fn to_depth(&self) -> DepthMap {
        let mut mask = self.mask.clone();
        let values = Array2::from_shape_fn(self.values.dim(), |idx| {
            let v = self.values[idx];
            if mask[idx] && v.is_finite() && v > 0.0 {
                1.0 / v
            } else {
                mask[idx] = false;
                0.0
            }
        });
        DepthMap { values, mask }
    }
}

impl DisparityMap {
    pub fn new(values: Array2<f64>, mask: Array2<bool>) -> Result<Self> {
        let (values, mask) = checked(values, mask)?;
        Ok(DisparityMap { values, mask })
    }
}
