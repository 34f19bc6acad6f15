//! Manipulation trace extraction.
//!
//! The guided residual `|p − q|`, with `q` the self-guided filter output,
//! keeps what the local linear model cannot explain: fine texture and
//! additive high-frequency patterns in otherwise flat regions. A fixed 3×3
//! high-pass predictor residual is provided as the comparison baseline.

use std::hash::Hasher;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::guided::{guided_filter, GuidedFilterParams};
use crate::image::{Image, Plane, Region};

/// 4-neighbour Laplacian scaled so that the response is `p − mean(4-neighbours)`.
pub const HIGHPASS_KERNEL: [[f64; 3]; 3] = [
    [0.0, -0.25, 0.0],
    [-0.25, 1.0, -0.25],
    [0.0, -0.25, 0.0],
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResidualMethod {
    Guided,
    Highpass,
}

impl std::str::FromStr for ResidualMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "guided" => Ok(ResidualMethod::Guided),
            "highpass" => Ok(ResidualMethod::Highpass),
            other => Err(Error::InvalidParameter(format!(
                "unknown residual method {other:?} (expected guided or highpass)"
            ))),
        }
    }
}

/// Nonnegative residual magnitudes with the settings that produced them.
#[derive(Debug, Clone)]
pub struct ResidualImage {
    pub residual: Image,
    pub method: ResidualMethod,
    pub params: Option<GuidedFilterParams>,
    pub source_hash: u64,
}

impl ResidualImage {
    pub fn mean(&self) -> f64 {
        self.residual.mean()
    }

    pub fn max(&self) -> f64 {
        self.residual.values().fold(0.0, f64::max)
    }

    /// Mean residual over all channels inside `region`.
    pub fn region_mean(&self, region: &Region) -> f64 {
        region_means(&self.residual, region).0
    }

    /// Ratio of the mean residual inside `region` to the mean outside it.
    pub fn contrast(&self, region: &Region) -> f64 {
        let (inside, outside) = region_means(&self.residual, region);
        inside / outside.max(f64::MIN_POSITIVE)
    }
}

/// Mean over `region` and over its complement, all channels pooled.
pub fn region_means(img: &Image, region: &Region) -> (f64, f64) {
    let (mut si, mut ni, mut so, mut no) = (0.0, 0usize, 0.0, 0usize);
    for plane in img.planes() {
        for y in 0..plane.height() {
            for x in 0..plane.width() {
                let v = plane.get(x, y);
                if region.contains(x, y) {
                    si += v;
                    ni += 1;
                } else {
                    so += v;
                    no += 1;
                }
            }
        }
    }
    let mean = |s: f64, n: usize| if n == 0 { 0.0 } else { s / n as f64 };
    (mean(si, ni), mean(so, no))
}

/// FNV-1a over the raw intensity bits.
pub fn image_hash(img: &Image) -> u64 {
    struct Fnv(u64);
    impl Hasher for Fnv {
        fn finish(&self) -> u64 {
            self.0
        }
        fn write(&mut self, bytes: &[u8]) {
            for &b in bytes {
                self.0 ^= b as u64;
                self.0 = self.0.wrapping_mul(0x0100_0000_01b3);
            }
        }
    }
    let mut h = Fnv(0xcbf2_9ce4_8422_2325);
    h.write_u64(img.width() as u64);
    h.write_u64(img.height() as u64);
    h.write_u64(img.channels() as u64);
    for v in img.values() {
        h.write_u64(v.to_bits());
    }
    h.finish()
}

pub fn extract_guided_residual(p: &Image, params: &GuidedFilterParams) -> Result<ResidualImage> {
    let q = guided_filter(p, p, params)?;
    let planes = p
        .planes()
        .iter()
        .zip(q.planes())
        .map(|(pp, qq)| pp.zip_map(qq, |a, b| (a - b).abs()))
        .collect();
    Ok(ResidualImage {
        residual: Image::from_planes(planes)?,
        method: ResidualMethod::Guided,
        params: Some(*params),
        source_hash: image_hash(p),
    })
}

fn highpass_plane(p: &Plane) -> Plane {
    let (w, h) = (p.width() as isize, p.height() as isize);
    let at = |x: isize, y: isize| p.get(x.clamp(0, w - 1) as usize, y.clamp(0, h - 1) as usize);
    Plane::from_fn(p.width(), p.height(), |x, y| {
        let (x, y) = (x as isize, y as isize);
        let mut acc = 0.0;
        for (dy, row) in HIGHPASS_KERNEL.iter().enumerate() {
            for (dx, &k) in row.iter().enumerate() {
                if k != 0.0 {
                    acc += k * at(x + dx as isize - 1, y + dy as isize - 1);
                }
            }
        }
        acc.abs()
    })
}

/// `|k * p|` with [`HIGHPASS_KERNEL`] and replicated borders.
pub fn extract_highpass_residual(p: &Image) -> ResidualImage {
    ResidualImage {
        residual: p.map_planes(highpass_plane),
        method: ResidualMethod::Highpass,
        params: None,
        source_hash: image_hash(p),
    }
}

pub fn extract_residual(
    p: &Image,
    method: ResidualMethod,
    params: &GuidedFilterParams,
) -> Result<ResidualImage> {
    match method {
        ResidualMethod::Guided => extract_guided_residual(p, params),
        ResidualMethod::Highpass => Ok(extract_highpass_residual(p)),
    }
}

/// Amplified residual for display: `min(gain·r, 1)`.
pub fn visualize_residual(r: &ResidualImage, gain: f64) -> Result<Image> {
    if !(gain > 0.0 && gain.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "visualization gain must be positive, got {gain}"
        )));
    }
    Ok(r.residual.map(move |v| (gain * v).min(1.0)))
}
