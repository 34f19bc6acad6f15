//! Planar raster images with real-valued intensities.
//!
//! Intensities are stored in `[0, 1]` after loading. Filter outputs may leave
//! that range; they are clamped only when written to disk. Color images keep
//! their planes in R, G, B order.

mod integral;
mod io;

pub use integral::{box_mean, IntegralImage};
pub use io::{load_image, save_image, quantize};

use crate::error::{Error, Result};

/// A single channel of real intensities, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Plane {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "plane of {width}x{height} needs {} values, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Plane {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Plane {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Plane {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: f64) {
        self.data[y * self.width + x] = value;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn same_dims(&self, other: &Plane) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Applies `f` pixel-wise to `self` and `other`, which must share dimensions.
    pub fn zip_map(&self, other: &Plane, f: impl Fn(f64, f64) -> f64) -> Plane {
        debug_assert!(self.same_dims(other));
        Plane {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Plane {
        Plane {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }
}

/// Multi-channel planar image (1 or 3 channels).
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    planes: Vec<Plane>,
}

impl Image {
    pub fn from_planes(planes: Vec<Plane>) -> Result<Self> {
        let first = planes.first().ok_or(Error::EmptyImage {
            width: 0,
            height: 0,
            channels: 0,
        })?;
        let (width, height) = (first.width, first.height);
        if width == 0 || height == 0 {
            return Err(Error::EmptyImage {
                width,
                height,
                channels: planes.len(),
            });
        }
        if planes.len() != 1 && planes.len() != 3 {
            return Err(Error::InvalidParameter(format!(
                "images carry 1 or 3 channels, got {}",
                planes.len()
            )));
        }
        if planes.iter().any(|p| p.width != width || p.height != height) {
            return Err(Error::DimensionMismatch(
                "all planes of an image must share dimensions".into(),
            ));
        }
        Ok(Image {
            width,
            height,
            planes,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        assert!(channels == 1 || channels == 3, "channels must be 1 or 3");
        Image {
            width,
            height,
            planes: vec![Plane::filled(width, height, value); channels],
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.planes.len()
    }

    pub fn plane(&self, c: usize) -> &Plane {
        &self.planes[c]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut Plane {
        &mut self.planes[c]
    }

    pub fn planes(&self) -> &[Plane] {
        &self.planes
    }

    pub fn into_planes(self) -> Vec<Plane> {
        self.planes
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width
            && self.height == other.height
            && self.channels() == other.channels()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64 + Copy) -> Image {
        Image {
            width: self.width,
            height: self.height,
            planes: self.planes.iter().map(|p| p.map(f)).collect(),
        }
    }

    pub fn map_planes(&self, f: impl Fn(&Plane) -> Plane) -> Image {
        Image {
            width: self.width,
            height: self.height,
            planes: self.planes.iter().map(f).collect(),
        }
    }

    /// All intensities, channel-major.
    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.planes.iter().flat_map(|p| p.data.iter().copied())
    }

    pub fn mean(&self) -> f64 {
        self.values().sum::<f64>() / (self.width * self.height * self.channels()) as f64
    }

    pub fn clamp_unit(&self) -> Image {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    /// Horizontal mirror.
    pub fn flip_horizontal(&self) -> Image {
        self.map_planes(|p| Plane::from_fn(p.width, p.height, |x, y| p.get(p.width - 1 - x, y)))
    }
}

/// Axis-aligned pixel rectangle `[x, x+width) × [y, y+height)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Region {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl Region {
    pub fn new(x: usize, y: usize, width: usize, height: usize) -> Self {
        Region {
            x,
            y,
            width,
            height,
        }
    }

    pub fn full(img: &Image) -> Self {
        Region::new(0, 0, img.width(), img.height())
    }

    #[inline]
    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x && y >= self.y && x < self.x + self.width && y < self.y + self.height
    }

    pub fn fits(&self, width: usize, height: usize) -> bool {
        self.width > 0
            && self.height > 0
            && self.x + self.width <= width
            && self.y + self.height <= height
    }

    pub fn area(&self) -> usize {
        self.width * self.height
    }
}
