//! Block-DCT quantization in the style of baseline JPEG.
//!
//! Each channel is level-shifted to `[-128, 127]`, split into 8×8 blocks
//! (edge-replicated at ragged borders), transformed with the orthonormal
//! DCT-II, quantized with the standard luminance table scaled for the quality
//! factor, and transformed back. There is no entropy coding, no chroma
//! subsampling and no 8-bit rounding of the reconstruction. The DC term is
//! carried through unquantized, so flat blocks are reproduced exactly and
//! only the AC detail, where high-frequency traces live, is laundered.

use std::f64::consts::PI;
use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::image::{Image, Plane};

const LUMA_TABLE: [[u16; 8]; 8] = [
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99],
];

/// Luminance quantizer steps for `quality` using the IJG scaling rule.
pub fn quant_table(quality: u8) -> [[f64; 8]; 8] {
    let q = quality.clamp(1, 100) as u32;
    let scale = if q < 50 { 5000 / q } else { 200 - 2 * q };
    let mut out = [[0.0; 8]; 8];
    for (v, row) in LUMA_TABLE.iter().enumerate() {
        for (u, &base) in row.iter().enumerate() {
            out[v][u] = ((base as u32 * scale + 50) / 100).clamp(1, 255) as f64;
        }
    }
    out
}

/// `basis[k][n] = c(k)·cos((2n+1)kπ/16)` with orthonormal scaling.
fn basis() -> &'static [[f64; 8]; 8] {
    static BASIS: OnceLock<[[f64; 8]; 8]> = OnceLock::new();
    BASIS.get_or_init(|| {
        let mut b = [[0.0; 8]; 8];
        for (k, row) in b.iter_mut().enumerate() {
            let c = if k == 0 { (1.0f64 / 8.0).sqrt() } else { (2.0f64 / 8.0).sqrt() };
            for (n, v) in row.iter_mut().enumerate() {
                *v = c * (((2 * n + 1) * k) as f64 * PI / 16.0).cos();
            }
        }
        b
    })
}

pub fn dct8x8(block: &[[f64; 8]; 8]) -> [[f64; 8]; 8] {
    let b = basis();
    let mut tmp = [[0.0; 8]; 8];
    for y in 0..8 {
        for u in 0..8 {
            tmp[y][u] = (0..8).map(|x| b[u][x] * block[y][x]).sum();
        }
    }
    let mut out = [[0.0; 8]; 8];
    for v in 0..8 {
        for u in 0..8 {
            out[v][u] = (0..8).map(|y| b[v][y] * tmp[y][u]).sum();
        }
    }
    out
}

pub fn idct8x8(coef: &[[f64; 8]; 8]) -> [[f64; 8]; 8] {
    let b = basis();
    let mut tmp = [[0.0; 8]; 8];
    for v in 0..8 {
        for x in 0..8 {
            tmp[v][x] = (0..8).map(|u| b[u][x] * coef[v][u]).sum();
        }
    }
    let mut out = [[0.0; 8]; 8];
    for y in 0..8 {
        for x in 0..8 {
            out[y][x] = (0..8).map(|v| b[v][y] * tmp[v][x]).sum();
        }
    }
    out
}

fn degrade_plane(p: &Plane, table: &[[f64; 8]; 8]) -> Plane {
    let (w, h) = (p.width(), p.height());
    let mut out = Plane::filled(w, h, 0.0);
    for by in (0..h).step_by(8) {
        for bx in (0..w).step_by(8) {
            let mut block = [[0.0; 8]; 8];
            for (y, row) in block.iter_mut().enumerate() {
                for (x, v) in row.iter_mut().enumerate() {
                    let sx = (bx + x).min(w - 1);
                    let sy = (by + y).min(h - 1);
                    *v = p.get(sx, sy) * 255.0 - 128.0;
                }
            }
            let mut coef = dct8x8(&block);
            for v in 0..8 {
                for u in 0..8 {
                    if u + v > 0 {
                        coef[v][u] = (coef[v][u] / table[v][u]).round() * table[v][u];
                    }
                }
            }
            let rec = idct8x8(&coef);
            for y in 0..8.min(h - by) {
                for x in 0..8.min(w - bx) {
                    out.set(bx + x, by + y, ((rec[y][x] + 128.0) / 255.0).clamp(0.0, 1.0));
                }
            }
        }
    }
    out
}

/// Simulated JPEG compression at `quality` ∈ [10, 95], applied per channel.
pub fn degrade_jpeg_like(img: &Image, quality: u8) -> Result<Image> {
    if !(10..=95).contains(&quality) {
        return Err(Error::InvalidParameter(format!(
            "JPEG quality must be in 10..=95, got {quality}"
        )));
    }
    let table = quant_table(quality);
    Ok(img.map_planes(|p| degrade_plane(p, &table)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn dct_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        let mut block = [[0.0; 8]; 8];
        for row in block.iter_mut() {
            for v in row.iter_mut() {
                *v = rng.random_range(-128.0..128.0);
            }
        }
        let back = idct8x8(&dct8x8(&block));
        for y in 0..8 {
            for x in 0..8 {
                assert!((back[y][x] - block[y][x]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn dct_of_flat_block_is_dc_only() {
        let c = dct8x8(&[[10.0; 8]; 8]);
        assert!((c[0][0] - 80.0).abs() < 1e-12);
        for v in 0..8 {
            for u in 0..8 {
                if u + v > 0 {
                    assert!(c[v][u].abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn quality_tables() {
        assert_eq!(quant_table(50)[0][0], 16.0);
        assert_eq!(quant_table(60)[0][0], 13.0);
        assert_eq!(quant_table(60)[7][7], 79.0);
        assert_eq!(quant_table(95)[0][0], 2.0);
    }

    #[test]
    fn constants_survive() {
        for q in [10, 60, 95] {
            let img = Image::filled(20, 12, 3, 0.37);
            let out = degrade_jpeg_like(&img, q).unwrap();
            assert!(out.values().all(|v| (v - 0.37).abs() < 1e-6));
        }
    }

    #[test]
    fn quality_range_is_enforced() {
        let img = Image::filled(8, 8, 1, 0.5);
        assert!(degrade_jpeg_like(&img, 9).is_err());
        assert!(degrade_jpeg_like(&img, 96).is_err());
    }
}
