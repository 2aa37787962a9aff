//! Posed RGB-D frames and metric densification of relative monocular depth.
//!
//! A global affine map `sensor ≈ scale · mono + shift` is fit by least squares
//! over pixels where both maps are valid, refit once after discarding
//! residuals beyond two standard deviations, and used to fill sensor holes.

use image::RgbImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::Vec3;

/// Lower clamp for filled depth so densified maps carry no zero holes.
pub const MIN_FILLED_DEPTH: f64 = 1e-3;

#[derive(Debug, Error, PartialEq)]
pub enum DepthError {
    #[error("insufficient overlap: {valid} valid pixels, need at least 2")]
    InsufficientOverlap { valid: usize },
    #[error("frame has no monocular depth")]
    MissingMono,
    #[error("fit is degenerate (constant monocular depth)")]
    DegenerateFit,
    #[error("invalid frame: {0}")]
    InvalidFrame(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

/// Rigid 4x4 transform, row-major.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose(pub [[f64; 4]; 4]);

impl Pose {
    pub const IDENTITY: Pose = Pose([
        [1.0, 0.0, 0.0, 0.0],
        [0.0, 1.0, 0.0, 0.0],
        [0.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
    ]);

    pub fn from_row_major(v: &[f64]) -> Option<Pose> {
        if v.len() != 16 {
            return None;
        }
        let mut m = [[0.0; 4]; 4];
        for (i, x) in v.iter().enumerate() {
            m[i / 4][i % 4] = *x;
        }
        Some(Pose(m))
    }

    pub fn to_row_major(&self) -> Vec<f64> {
        self.0.iter().flatten().copied().collect()
    }

    /// Camera at `eye` looking toward `target`, in the pinhole convention
    /// x right, y down, z forward.
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3) -> Pose {
        let z = (target - eye) * (1.0 / (target - eye).norm());
        let x = z.cross(up);
        let x = x * (1.0 / x.norm());
        let y = z.cross(x);
        Pose([
            [x.x, y.x, z.x, eye.x],
            [x.y, y.y, z.y, eye.y],
            [x.z, y.z, z.z, eye.z],
            [0.0, 0.0, 0.0, 1.0],
        ])
    }

    pub fn transform_point(&self, p: Vec3) -> Vec3 {
        let m = &self.0;
        Vec3::new(
            m[0][0] * p.x + m[0][1] * p.y + m[0][2] * p.z + m[0][3],
            m[1][0] * p.x + m[1][1] * p.y + m[1][2] * p.z + m[1][3],
            m[2][0] * p.x + m[2][1] * p.y + m[2][2] * p.z + m[2][3],
        )
    }

    /// Inverse of a rigid transform: transpose the rotation, rotate-negate the translation.
    pub fn rigid_inverse(&self) -> Pose {
        let m = &self.0;
        let mut r = [[0.0; 4]; 4];
        for i in 0..3 {
            for j in 0..3 {
                r[i][j] = m[j][i];
            }
        }
        for row in r.iter_mut().take(3) {
            row[3] = -(row[0] * m[0][3] + row[1] * m[1][3] + row[2] * m[2][3]);
        }
        r[3][3] = 1.0;
        Pose(r)
    }

    pub fn is_rigid(&self, tol: f64) -> bool {
        let m = &self.0;
        if m[3] != [0.0, 0.0, 0.0, 1.0] {
            return false;
        }
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| m[k][i] * m[k][j]).sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                if (dot - expect).abs() > tol {
                    return false;
                }
            }
        }
        let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
        det > 0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthFrame {
    pub width: u32,
    pub height: u32,
    /// Row-major meters; 0 marks a missing reading.
    pub sensor_depth: Vec<f32>,
    /// Row-major relative depth, unitless.
    pub mono_depth: Option<Vec<f32>>,
    pub rgb: Option<RgbImage>,
    pub intrinsics: Intrinsics,
    pub pose_world_from_camera: Pose,
}

impl DepthFrame {
    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn validate(&self) -> Result<(), DepthError> {
        let n = self.pixel_count();
        let bad = |m: &str| Err(DepthError::InvalidFrame(m.to_string()));
        if self.sensor_depth.len() != n {
            return bad("sensor depth size mismatch");
        }
        if self.sensor_depth.iter().any(|d| !d.is_finite() || *d < 0.0) {
            return bad("sensor depth must be finite and non-negative");
        }
        if self.mono_depth.as_ref().is_some_and(|m| m.len() != n) {
            return bad("mono depth size mismatch");
        }
        if self
            .rgb
            .as_ref()
            .is_some_and(|img| img.width() != self.width || img.height() != self.height)
        {
            return bad("rgb size mismatch");
        }
        if !self.pose_world_from_camera.is_rigid(1e-5) {
            return bad("pose is not a rigid transform");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DepthConfig {
    /// Sensor readings at or beyond this range (meters) are invalid.
    pub max_range: f64,
    /// Force `shift = 0`.
    pub scale_only: bool,
}

impl Default for DepthConfig {
    fn default() -> Self {
        Self {
            max_range: 10.0,
            scale_only: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleShift {
    pub scale: f64,
    pub shift: f64,
    pub inlier_count: usize,
    pub degenerate: bool,
}

fn sensor_valid(d: f32, max_range: f64) -> bool {
    let d = d as f64;
    d > 0.0 && d < max_range
}

/// Least-squares affine (or scale-only) fit over `(mono, sensor)` pairs.
fn least_squares(pairs: &[(f64, f64)], scale_only: bool) -> (f64, f64, bool) {
    let n = pairs.len() as f64;
    if scale_only {
        let mm: f64 = pairs.iter().map(|(m, _)| m * m).sum();
        let ms: f64 = pairs.iter().map(|(m, s)| m * s).sum();
        if mm == 0.0 {
            return (0.0, 0.0, true);
        }
        return (ms / mm, 0.0, false);
    }
    let mean_m = pairs.iter().map(|(m, _)| m).sum::<f64>() / n;
    let mean_s = pairs.iter().map(|(_, s)| s).sum::<f64>() / n;
    let (var, cov) = pairs.iter().fold((0.0, 0.0), |(v, c), (m, s)| {
        let dm = m - mean_m;
        (v + dm * dm, c + dm * (s - mean_s))
    });
    let scale_ref = pairs.iter().map(|(m, _)| m * m).sum::<f64>();
    if var <= 1e-18 * scale_ref.max(f64::MIN_POSITIVE) {
        return (0.0, mean_s, true);
    }
    let scale = cov / var;
    (scale, mean_s - scale * mean_m, false)
}

/// Fits `sensor ≈ scale · mono + shift` with one 2σ-trimmed refit.
pub fn fit_scale_shift(frame: &DepthFrame, cfg: &DepthConfig) -> Result<ScaleShift, DepthError> {
    let mono = frame.mono_depth.as_ref().ok_or(DepthError::MissingMono)?;
    let pairs: Vec<(f64, f64)> = frame
        .sensor_depth
        .iter()
        .zip(mono)
        .filter(|(s, m)| sensor_valid(**s, cfg.max_range) && m.is_finite())
        .map(|(s, m)| (*m as f64, *s as f64))
        .collect();
    fit_pairs(&pairs, cfg.scale_only)
}

/// The fit on explicit `(mono, sensor)` samples; pixel order is irrelevant.
pub fn fit_pairs(pairs: &[(f64, f64)], scale_only: bool) -> Result<ScaleShift, DepthError> {
    if pairs.len() < 2 {
        return Err(DepthError::InsufficientOverlap { valid: pairs.len() });
    }
    let (scale, shift, degenerate) = least_squares(pairs, scale_only);
    if degenerate {
        return Ok(ScaleShift {
            scale,
            shift,
            inlier_count: pairs.len(),
            degenerate: true,
        });
    }
    let residual = |(m, s): &(f64, f64)| s - (scale * m + shift);
    let sigma = (pairs.iter().map(|p| residual(p).powi(2)).sum::<f64>() / pairs.len() as f64).sqrt();
    let mean_abs = pairs.iter().map(|(_, s)| s.abs()).sum::<f64>() / pairs.len() as f64;
    // Residuals at storage precision are not outliers.
    if sigma <= 1e-6 * mean_abs.max(1.0) {
        return Ok(ScaleShift {
            scale,
            shift,
            inlier_count: pairs.len(),
            degenerate: false,
        });
    }
    let inliers: Vec<(f64, f64)> = pairs
        .iter()
        .copied()
        .filter(|p| residual(p).abs() <= 2.0 * sigma)
        .collect();
    if inliers.len() < 2 || inliers.len() == pairs.len() {
        return Ok(ScaleShift {
            scale,
            shift,
            inlier_count: pairs.len(),
            degenerate: false,
        });
    }
    let (scale2, shift2, degenerate2) = least_squares(&inliers, scale_only);
    if degenerate2 {
        // Trimming collapsed the mono spread; keep the untrimmed fit.
        return Ok(ScaleShift {
            scale,
            shift,
            inlier_count: pairs.len(),
            degenerate: false,
        });
    }
    Ok(ScaleShift {
        scale: scale2,
        shift: shift2,
        inlier_count: inliers.len(),
        degenerate: false,
    })
}

/// Fills invalid sensor pixels with the fitted monocular depth.
pub fn densify(frame: &DepthFrame, fit: &ScaleShift, cfg: &DepthConfig) -> Result<Vec<f32>, DepthError> {
    if fit.degenerate {
        return Err(DepthError::DegenerateFit);
    }
    let mono = frame.mono_depth.as_ref().ok_or(DepthError::MissingMono)?;
    Ok(frame
        .sensor_depth
        .iter()
        .zip(mono)
        .map(|(&s, &m)| {
            if sensor_valid(s, cfg.max_range) {
                s
            } else if m.is_finite() {
                (fit.scale * m as f64 + fit.shift).clamp(MIN_FILLED_DEPTH, cfg.max_range) as f32
            } else {
                s
            }
        })
        .collect())
}

/// Best available metric depth for a frame: densified when a usable fit
/// exists, otherwise the raw sensor map.
pub fn metric_depth(frame: &DepthFrame, cfg: &DepthConfig) -> (Vec<f32>, Option<ScaleShift>) {
    match fit_scale_shift(frame, cfg) {
        Ok(fit) if !fit.degenerate => {
            let dense = densify(frame, &fit, cfg).expect("non-degenerate fit with mono present");
            (dense, Some(fit))
        }
        Ok(fit) => (frame.sensor_depth.clone(), Some(fit)),
        Err(_) => (frame.sensor_depth.clone(), None),
    }
}
