//! Distortion metrics: MSE, PSNR and the PSNR-floor / MSE-ceiling threshold.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::tensor::Tensor;

/// PSNR reported for identical inputs (and the ceiling for everything else).
pub const PSNR_CAP_DB: f64 = 300.0;

/// `‖x − y‖² / numel`.
pub fn mse(x: &Tensor, y: &Tensor) -> Result<f64> {
    x.require_same_shape(y)?;
    Ok(mse_slices(x.data(), y.data()))
}

pub(crate) fn mse_slices(x: &[f64], y: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), y.len());
    let sum: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    sum / x.len() as f64
}

/// `10·log10(M² / MSE)` in dB, capped at [`PSNR_CAP_DB`].
pub fn psnr(x: &Tensor, y: &Tensor, peak: f64) -> Result<f64> {
    Ok(psnr_from_mse(mse(x, y)?, peak))
}

pub fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    debug_assert!(peak > 0.0);
    if mse <= 0.0 {
        return PSNR_CAP_DB;
    }
    (10.0 * (peak * peak / mse).log10()).min(PSNR_CAP_DB)
}

/// Hit-test threshold, stated as a PSNR floor and enforced as an MSE ceiling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceThreshold {
    pub psnr_floor_db: f64,
    pub mse_ceiling: f64,
}

impl DistanceThreshold {
    pub fn from_psnr(psnr_floor_db: f64, peak: f64) -> Self {
        Self {
            psnr_floor_db,
            mse_ceiling: peak * peak * 10f64.powf(-psnr_floor_db / 10.0),
        }
    }

    pub fn from_mse_ceiling(mse_ceiling: f64, peak: f64) -> Self {
        Self {
            psnr_floor_db: 10.0 * (peak * peak / mse_ceiling).log10(),
            mse_ceiling,
        }
    }

    pub fn accepts(&self, mse: f64) -> bool {
        mse < self.mse_ceiling
    }
}

pub fn threshold_from_psnr(psnr_floor_db: f64, peak: f64) -> DistanceThreshold {
    DistanceThreshold::from_psnr(psnr_floor_db, peak)
}
