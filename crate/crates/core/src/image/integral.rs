use super::Plane;
use crate::error::{Error, Result};

/// Summed-area table of one plane with a zero guard row and column.
///
/// Entry `(x, y)` holds the sum of all pixels strictly above and to the left,
/// so any axis-aligned rectangle sum costs four lookups.
#[derive(Debug, Clone)]
pub struct IntegralImage {
    width: usize,
    height: usize,
    table: Vec<f64>,
}

impl IntegralImage {
    pub fn new(plane: &Plane) -> Self {
        let (w, h) = (plane.width(), plane.height());
        let stride = w + 1;
        let mut table = vec![0.0; stride * (h + 1)];
        let data = plane.data();
        for y in 0..h {
            let mut row_sum = 0.0;
            for x in 0..w {
                row_sum += data[y * w + x];
                table[(y + 1) * stride + x + 1] = table[y * stride + x + 1] + row_sum;
            }
        }
        IntegralImage {
            width: w,
            height: h,
            table,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Sum over the half-open rectangle `[x0, x1) × [y0, y1)`.
    #[inline]
    pub fn rect_sum(&self, x0: usize, y0: usize, x1: usize, y1: usize) -> f64 {
        debug_assert!(x0 <= x1 && x1 <= self.width && y0 <= y1 && y1 <= self.height);
        let s = self.width + 1;
        self.table[y1 * s + x1] - self.table[y0 * s + x1] - self.table[y1 * s + x0]
            + self.table[y0 * s + x0]
    }
}

/// Mean over the `(2r+1)²` window around each pixel, clipped to the image.
///
/// Border windows are normalized by their in-bounds pixel count, so constant
/// planes map to themselves exactly.
pub fn box_mean(plane: &Plane, radius: usize) -> Result<Plane> {
    let (w, h) = (plane.width(), plane.height());
    if radius >= w.min(h) {
        return Err(Error::InvalidParameter(format!(
            "box radius {radius} must be smaller than min(width, height) = {}",
            w.min(h)
        )));
    }
    if radius == 0 {
        return Ok(plane.clone());
    }
    let integral = IntegralImage::new(plane);
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        let y0 = y.saturating_sub(radius);
        let y1 = (y + radius + 1).min(h);
        for x in 0..w {
            let x0 = x.saturating_sub(radius);
            let x1 = (x + radius + 1).min(w);
            let count = ((x1 - x0) * (y1 - y0)) as f64;
            out.push(integral.rect_sum(x0, y0, x1, y1) / count);
        }
    }
    Plane::new(w, h, out)
}
