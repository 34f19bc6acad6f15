//! Procedural stand-ins for pristine and manipulated images.
//!
//! Base content is smooth (low-frequency sinusoids plus soft-edged
//! ellipses). Manipulations are additive high-frequency patterns confined
//! to a rectangle, and the two post-processing scenarios (block-DCT
//! compression at quality 60, 5×5 mean filtering) reproduce the way real
//! pipelines wash such traces out.

mod dataset;
mod jpeg;

pub use dataset::{
    build_dataset, derive_seed, generate_split, DatasetConfig, DatasetManifest, ManifestEntry,
    SampleRecord, Split,
};
pub use jpeg::{dct8x8, degrade_jpeg_like, idct8x8, quant_table};

use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{box_mean, Image, Plane, Region};

/// Side length of generated images.
pub const IMAGE_SIZE: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceKind {
    None,
    Checkerboard,
    PeriodicHighfreq,
    BlockdctArtifact,
}

impl TraceKind {
    pub const MANIPULATIONS: [TraceKind; 3] = [
        TraceKind::Checkerboard,
        TraceKind::PeriodicHighfreq,
        TraceKind::BlockdctArtifact,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TraceKind::None => "none",
            TraceKind::Checkerboard => "checkerboard",
            TraceKind::PeriodicHighfreq => "periodic_highfreq",
            TraceKind::BlockdctArtifact => "blockdct_artifact",
        }
    }
}

impl fmt::Display for TraceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TraceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [TraceKind::None]
            .into_iter()
            .chain(TraceKind::MANIPULATIONS)
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown trace kind {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    Raw,
    Jp60,
    Me5,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [Scenario::Raw, Scenario::Jp60, Scenario::Me5];

    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::Raw => "raw",
            Scenario::Jp60 => "jp60",
            Scenario::Me5 => "me5",
        }
    }

    /// Applies the scenario's post-processing.
    pub fn apply(self, img: &Image) -> Result<Image> {
        match self {
            Scenario::Raw => Ok(img.clone()),
            Scenario::Jp60 => degrade_jpeg_like(img, 60),
            Scenario::Me5 => degrade_mean_filter(img, 5),
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown scenario {s:?}")))
    }
}

fn smoothstep(e0: f64, e1: f64, x: f64) -> f64 {
    let t = ((x - e0) / (e1 - e0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Smooth random 64×64 RGB content, deterministic in `seed`.
pub fn generate_base(seed: u64) -> Image {
    generate_base_sized(seed, IMAGE_SIZE, IMAGE_SIZE)
}

pub fn generate_base_sized(seed: u64, width: usize, height: usize) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (wf, hf) = (width as f64, height as f64);

    struct Wave {
        fx: f64,
        fy: f64,
        phase: f64,
        amp: [f64; 3],
    }
    let waves: Vec<Wave> = (0..4)
        .map(|_| Wave {
            fx: rng.random_range(-3.0..3.0),
            fy: rng.random_range(-3.0..3.0),
            phase: rng.random_range(0.0..TAU),
            amp: [(); 3].map(|_| rng.random_range(0.02..0.09)),
        })
        .collect();

    struct Ellipse {
        cx: f64,
        cy: f64,
        rx: f64,
        ry: f64,
        cos: f64,
        sin: f64,
        soft: f64,
        color: [f64; 3],
    }
    let n_ellipses = rng.random_range(2..=4);
    let ellipses: Vec<Ellipse> = (0..n_ellipses)
        .map(|_| {
            let theta: f64 = rng.random_range(0.0..TAU);
            Ellipse {
                cx: rng.random_range(0.0..wf),
                cy: rng.random_range(0.0..hf),
                rx: rng.random_range(0.12..0.35) * wf,
                ry: rng.random_range(0.12..0.35) * hf,
                cos: theta.cos(),
                sin: theta.sin(),
                soft: rng.random_range(3.0..6.0),
                color: [(); 3].map(|_| rng.random_range(-0.2..0.2)),
            }
        })
        .collect();
    let level: [f64; 3] = [(); 3].map(|_| rng.random_range(0.35..0.65));

    let planes = (0..3)
        .map(|c| {
            Plane::from_fn(width, height, |x, y| {
                let (xf, yf) = (x as f64, y as f64);
                let mut v = level[c];
                for wv in &waves {
                    v += wv.amp[c] * (TAU * (wv.fx * xf / wf + wv.fy * yf / hf) + wv.phase).sin();
                }
                for e in &ellipses {
                    let (dx, dy) = (xf - e.cx, yf - e.cy);
                    let u = (dx * e.cos + dy * e.sin) / e.rx;
                    let w = (-dx * e.sin + dy * e.cos) / e.ry;
                    // signed distance to the rim, roughly in pixels
                    let d = ((u * u + w * w).sqrt() - 1.0) * e.rx.min(e.ry);
                    v += e.color[c] * (1.0 - smoothstep(-e.soft, e.soft, d));
                }
                0.1 + 0.8 * v.clamp(0.0, 1.0)
            })
        })
        .collect();
    Image::from_planes(planes).expect("generated planes share dimensions")
}

/// Additive pattern value of a trace at pixel `(x, y)`, in units of the amplitude.
fn trace_pattern(kind: TraceKind, pattern_seed: u64) -> Box<dyn Fn(usize, usize) -> f64> {
    match kind {
        TraceKind::None => Box::new(|_, _| 0.0),
        TraceKind::Checkerboard => Box::new(|x, y| if (x + y) % 2 == 0 { 1.0 } else { -1.0 }),
        TraceKind::PeriodicHighfreq => {
            let mut rng = ChaCha8Rng::seed_from_u64(pattern_seed);
            let phase = rng.random_range(0.0..TAU);
            let fy = rng.random_range(0.05..0.2);
            Box::new(move |x, y| (TAU * (0.42 * x as f64 + fy * y as f64) + phase).sin())
        }
        TraceKind::BlockdctArtifact => Box::new(move |x, y| {
            let block = ((y / 8) as u64) << 32 | (x / 8) as u64;
            if derive_seed(pattern_seed, block) & 1 == 0 {
                1.0
            } else {
                -1.0
            }
        }),
    }
}

/// Adds a `kind` pattern of peak `amplitude` inside `region`, clamped to `[0, 1]`.
///
/// Checkerboard adds `+amplitude` where `x + y` is even and `-amplitude`
/// elsewhere; the periodic trace is a near-Nyquist 2-D sinusoid; the block
/// trace shifts each aligned 8×8 block by `±amplitude`. `pattern_seed` fixes
/// the sinusoid phase and block signs.
pub fn inject_trace(
    img: &Image,
    kind: TraceKind,
    amplitude: f64,
    region: &Region,
    pattern_seed: u64,
) -> Result<Image> {
    if !(amplitude > 0.0 && amplitude <= 0.2) {
        return Err(Error::InvalidParameter(format!(
            "trace amplitude must be in (0, 0.2], got {amplitude}"
        )));
    }
    if !region.fits(img.width(), img.height()) {
        return Err(Error::InvalidParameter(format!(
            "region {region:?} does not fit a {}x{} image",
            img.width(),
            img.height()
        )));
    }
    let pattern = trace_pattern(kind, pattern_seed);
    Ok(img.map_planes(|p| {
        Plane::from_fn(p.width(), p.height(), |x, y| {
            let v = p.get(x, y);
            if region.contains(x, y) {
                (v + amplitude * pattern(x, y)).clamp(0.0, 1.0)
            } else {
                v
            }
        })
    }))
}

/// `kernel × kernel` mean filter (odd kernel ≥ 3), shrinking at borders.
pub fn degrade_mean_filter(img: &Image, kernel: usize) -> Result<Image> {
    if kernel < 3 || kernel.is_multiple_of(2) {
        return Err(Error::InvalidParameter(format!(
            "mean filter kernel must be odd and at least 3, got {kernel}"
        )));
    }
    let planes = img
        .planes()
        .iter()
        .map(|p| box_mean(p, (kernel - 1) / 2))
        .collect::<Result<Vec<_>>>()?;
    Image::from_planes(planes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn base_is_deterministic_and_in_range() {
        let a = generate_base(7);
        assert_eq!(a, generate_base(7));
        assert_eq!((a.width(), a.height(), a.channels()), (64, 64, 3));
        assert!(a.values().all(|v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn different_seeds_differ() {
        for s in 0..10u64 {
            let (a, b) = (generate_base(s), generate_base(s + 1000));
            let n = a.values().count();
            let differing = a
                .values()
                .zip(b.values())
                .filter(|(x, y)| (x - y).abs() > 1.0 / 255.0)
                .count();
            assert!(differing * 2 >= n, "seed {s}: {differing}/{n}");
        }
    }

    #[test]
    fn checkerboard_alternates_exactly() {
        let img = Image::filled(10, 10, 3, 0.5);
        let region = Region::new(2, 3, 4, 5);
        let out = inject_trace(&img, TraceKind::Checkerboard, 0.1, &region, 0).unwrap();
        for p in out.planes() {
            for y in 0..10 {
                for x in 0..10 {
                    let v = p.get(x, y);
                    if region.contains(x, y) {
                        let want = if (x + y) % 2 == 0 { 0.6 } else { 0.4 };
                        assert!((v - want).abs() < 1e-15);
                    } else {
                        assert_eq!(v, 0.5);
                    }
                }
            }
        }
    }

    #[test]
    fn trace_contract() {
        let img = Image::filled(16, 16, 1, 0.5);
        let r = Region::new(0, 0, 8, 8);
        assert!(inject_trace(&img, TraceKind::Checkerboard, 0.0, &r, 0).is_err());
        assert!(inject_trace(&img, TraceKind::Checkerboard, 0.25, &r, 0).is_err());
        assert!(inject_trace(&img, TraceKind::Checkerboard, 0.2, &r, 0).is_ok());
        let outside = Region::new(10, 10, 8, 8);
        assert!(inject_trace(&img, TraceKind::Checkerboard, 0.1, &outside, 0).is_err());
    }

    #[test]
    fn block_trace_is_constant_per_block() {
        let img = Image::filled(32, 32, 1, 0.5);
        let out =
            inject_trace(&img, TraceKind::BlockdctArtifact, 0.05, &Region::full(&img), 3).unwrap();
        let p = out.plane(0);
        let mut signs = Vec::new();
        for by in 0..4 {
            for bx in 0..4 {
                let v = p.get(bx * 8, by * 8);
                assert!((v - 0.5).abs() > 0.049);
                for y in 0..8 {
                    for x in 0..8 {
                        assert_eq!(p.get(bx * 8 + x, by * 8 + y), v);
                    }
                }
                signs.push(v > 0.5);
            }
        }
        assert!(signs.iter().any(|&s| s) && signs.iter().any(|&s| !s));
    }

    #[test]
    fn mean_filter_cases() {
        let img = Image::filled(9, 9, 3, 0.25);
        assert_eq!(degrade_mean_filter(&img, 5).unwrap(), img);
        let mut p = Plane::filled(9, 9, 0.0);
        p.set(4, 4, 1.0);
        let imp = Image::from_planes(vec![p.clone()]).unwrap();
        let out = degrade_mean_filter(&imp, 5).unwrap();
        for y in 0..9 {
            for x in 0..9 {
                let inside = (2..=6).contains(&x) && (2..=6).contains(&y);
                let want = if inside { 1.0 / 25.0 } else { 0.0 };
                assert!((out.plane(0).get(x, y) - want).abs() < 1e-15);
            }
        }
        assert_eq!(out.plane(0), &box_mean(&p, 2).unwrap());
        assert!(degrade_mean_filter(&img, 4).is_err());
        assert!(degrade_mean_filter(&img, 1).is_err());
    }

    #[test]
    fn names_round_trip() {
        for k in [TraceKind::None].into_iter().chain(TraceKind::MANIPULATIONS) {
            assert_eq!(k.as_str().parse::<TraceKind>().unwrap(), k);
        }
        for s in Scenario::ALL {
            assert_eq!(s.as_str().parse::<Scenario>().unwrap(), s);
        }
        assert!("jp50".parse::<Scenario>().is_err());
    }
}
