//! Edge-preserving guided filter.
//!
//! Inside every `(2r+1)²` window the output is modeled as a linear function
//! of the guidance, `q = a·I + b`. The per-window coefficients are the
//! ridge-regularized least-squares fit of `p` on `I`:
//!
//! ```text
//! a_k = (mean(I·p) − μ_k·p̄_k) / (σ_k² + ε)
//! b_k = p̄_k − a_k·μ_k
//! ```
//!
//! and each pixel averages the coefficients of all windows covering it
//! before evaluating `q_i = ā_i·I_i + b̄_i`. Every mean is a [`box_mean`],
//! so the cost is linear in the pixel count and independent of the radius.
//!
//! Channels are filtered independently. Self-guidance (`I = p`) is the
//! forensic setting; any same-shaped guide is accepted.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{box_mean, Image, Plane};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GuidedFilterParams {
    pub radius: usize,
    pub epsilon: f64,
}

impl Default for GuidedFilterParams {
    fn default() -> Self {
        GuidedFilterParams {
            radius: 2,
            epsilon: 1e-2,
        }
    }
}

impl GuidedFilterParams {
    pub fn new(radius: usize, epsilon: f64) -> Result<Self> {
        let params = GuidedFilterParams { radius, epsilon };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if self.radius < 1 {
            return Err(Error::InvalidParameter(
                "guided filter radius must be at least 1".into(),
            ));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "guided filter epsilon must be positive and finite, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// Window statistics of one channel.
#[derive(Debug, Clone)]
pub struct WindowStats {
    /// μ_k, window mean of the guide.
    pub mean_guide: Plane,
    /// σ_k², window variance of the guide, clamped at zero.
    pub var_guide: Plane,
    /// p̄_k, window mean of the input.
    pub mean_input: Plane,
    /// Window mean of guide·input.
    pub mean_cross: Plane,
    /// Window covariance of guide and input.
    pub covariance: Plane,
    /// The guide itself, needed to evaluate the output.
    guide: Plane,
}

/// Per-window and averaged linear coefficients of one channel.
#[derive(Debug, Clone)]
pub struct CoefficientMaps {
    pub a: Plane,
    pub b: Plane,
    pub a_bar: Plane,
    pub b_bar: Plane,
}

fn check_pair(p: &Image, guide: &Image) -> Result<()> {
    if !p.same_shape(guide) {
        return Err(Error::DimensionMismatch(format!(
            "input is {}x{}x{}, guide is {}x{}x{}",
            p.width(),
            p.height(),
            p.channels(),
            guide.width(),
            guide.height(),
            guide.channels()
        )));
    }
    Ok(())
}

pub fn plane_window_stats(p: &Plane, guide: &Plane, radius: usize) -> Result<WindowStats> {
    if !p.same_dims(guide) {
        return Err(Error::DimensionMismatch(
            "input and guide planes differ in size".into(),
        ));
    }
    // Moments are taken about the first pixel so that constant planes give
    // exactly zero variance and covariance.
    let g0 = guide.data()[0];
    let p0 = p.data()[0];
    let gs = guide.map(|v| v - g0);
    let ps = p.map(|v| v - p0);
    let mg = box_mean(&gs, radius)?;
    let mp = box_mean(&ps, radius)?;
    let mgg = box_mean(&gs.map(|v| v * v), radius)?;
    let mgp = box_mean(&gs.zip_map(&ps, |a, b| a * b), radius)?;
    let var_guide = mgg.zip_map(&mg, |sq, mu| (sq - mu * mu).max(0.0));
    let covariance = mgp.zip_map(&mg.zip_map(&mp, |a, b| a * b), |c, m| c - m);
    Ok(WindowStats {
        mean_guide: mg.map(|v| v + g0),
        var_guide,
        mean_input: mp.map(|v| v + p0),
        mean_cross: box_mean(&guide.zip_map(p, |i, v| i * v), radius)?,
        covariance,
        guide: guide.clone(),
    })
}

/// Window statistics for every channel of `p` under guidance `guide`.
pub fn window_stats(
    p: &Image,
    guide: &Image,
    params: &GuidedFilterParams,
) -> Result<Vec<WindowStats>> {
    params.validate()?;
    check_pair(p, guide)?;
    p.planes()
        .iter()
        .zip(guide.planes())
        .map(|(pp, gg)| plane_window_stats(pp, gg, params.radius))
        .collect()
}

pub fn plane_coefficients(stats: &WindowStats, params: &GuidedFilterParams) -> Result<CoefficientMaps> {
    let eps = params.epsilon;
    let n = stats.mean_guide.len();
    let (w, h) = (stats.mean_guide.width(), stats.mean_guide.height());
    let mut a = Vec::with_capacity(n);
    let mut b = Vec::with_capacity(n);
    for k in 0..n {
        let mu = stats.mean_guide.data()[k];
        let pbar = stats.mean_input.data()[k];
        let ak = stats.covariance.data()[k] / (stats.var_guide.data()[k] + eps);
        a.push(ak);
        b.push(pbar - ak * mu);
    }
    let a = Plane::new(w, h, a)?;
    let b = Plane::new(w, h, b)?;
    let a_bar = box_mean(&a, params.radius)?;
    let b0 = b.data()[0];
    let b_bar = box_mean(&b.map(|v| v - b0), params.radius)?.map(|v| v + b0);
    Ok(CoefficientMaps { a, b, a_bar, b_bar })
}

pub fn fit_coefficients(
    stats: &[WindowStats],
    params: &GuidedFilterParams,
) -> Result<Vec<CoefficientMaps>> {
    params.validate()?;
    stats.iter().map(|s| plane_coefficients(s, params)).collect()
}

fn apply(coeffs: &CoefficientMaps, guide: &Plane) -> Plane {
    let ab = coeffs.a_bar.zip_map(guide, |a, i| a * i);
    ab.zip_map(&coeffs.b_bar, |ai, b| ai + b)
}

/// Filters one plane; the result is not clamped.
pub fn guided_filter_plane(p: &Plane, guide: &Plane, params: &GuidedFilterParams) -> Result<Plane> {
    params.validate()?;
    let stats = plane_window_stats(p, guide, params.radius)?;
    let coeffs = plane_coefficients(&stats, params)?;
    Ok(apply(&coeffs, &stats.guide))
}

/// Filters every channel of `p` with the matching channel of `guide`.
pub fn guided_filter(p: &Image, guide: &Image, params: &GuidedFilterParams) -> Result<Image> {
    params.validate()?;
    check_pair(p, guide)?;
    let planes = p
        .planes()
        .iter()
        .zip(guide.planes())
        .map(|(pp, gg)| guided_filter_plane(pp, gg, params))
        .collect::<Result<Vec<_>>>()?;
    Image::from_planes(planes)
}
