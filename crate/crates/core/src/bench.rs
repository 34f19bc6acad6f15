//! Guided-filter timing across window radii.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::guided::{guided_filter, GuidedFilterParams};
use crate::synth::generate_base_sized;

pub const DEFAULT_RADII: [usize; 4] = [2, 4, 8, 16];

/// Largest allowed ratio between the slowest and fastest radius.
pub const MAX_RADIUS_RATIO: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub radius: usize,
    /// Best of the repeats.
    pub seconds: f64,
    pub megapixels_per_second: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub rows: Vec<BenchRow>,
    /// Time at the largest radius over time at the smallest.
    pub ratio: f64,
    pub passed: bool,
}

/// Times self-guided filtering of a `size×size` RGB image at each radius.
pub fn bench_guided(size: usize, radii: &[usize], repeats: usize, epsilon: f64) -> Result<BenchReport> {
    if radii.is_empty() || repeats == 0 {
        return Err(Error::InvalidParameter("need at least one radius and one repeat".into()));
    }
    let img = generate_base_sized(0x6265_6e63, size, size);
    let mut rows = Vec::with_capacity(radii.len());
    for &radius in radii {
        let params = GuidedFilterParams::new(radius, epsilon)?;
        let mut best = f64::INFINITY;
        for _ in 0..repeats {
            let t = Instant::now();
            let out = guided_filter(&img, &img, &params)?;
            best = best.min(t.elapsed().as_secs_f64());
            std::hint::black_box(out);
        }
        rows.push(BenchRow {
            radius,
            seconds: best,
            megapixels_per_second: (size * size) as f64 / 1e6 / best,
        });
    }
    let by_radius = |pick: fn(&BenchRow, &BenchRow) -> bool| {
        rows.iter().fold(&rows[0], |acc, r| if pick(r, acc) { r } else { acc })
    };
    let smallest = by_radius(|r, acc| r.radius < acc.radius);
    let largest = by_radius(|r, acc| r.radius > acc.radius);
    let ratio = largest.seconds / smallest.seconds;
    Ok(BenchReport {
        width: size,
        height: size,
        channels: img.channels(),
        passed: ratio <= MAX_RADIUS_RATIO,
        ratio,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_bench_has_one_row_per_radius() {
        let r = bench_guided(32, &[1, 2, 4], 1, 1e-2).unwrap();
        assert_eq!(r.rows.len(), 3);
        assert!(r.rows.iter().all(|row| row.seconds > 0.0));
        assert!(bench_guided(32, &[], 1, 1e-2).is_err());
        assert!(bench_guided(8, &[8], 1, 1e-2).is_err());
    }
}
