//! Raster file I/O.
//!
//! Netpbm (`P2`, `P3`, `P5`, `P6`, maxval up to 65535) is always available
//! for reading; `.pgm`/`.ppm`/`.pnm` files are written as binary `P5`/`P6`.
//! PNG (8/16-bit gray or RGB, alpha dropped) is read and written through the
//! `png` crate. Stored codes map to intensities as `code / maxval`; writing
//! clamps to `[0, 1]` and quantizes to 8 bits with [`quantize`].

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Image, Plane};
use crate::error::{Error, Result};

/// 8-bit code for an intensity: clamp to `[0, 1]`, scale by 255, round half
/// away from zero. `0.5` therefore encodes as 128.
#[inline]
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

enum Format {
    Pnm,
    Png,
}

fn format_for(path: &Path) -> Result<Format> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase());
    match ext.as_deref() {
        Some("pgm" | "ppm" | "pnm") => Ok(Format::Pnm),
        Some("png") => Ok(Format::Png),
        other => Err(Error::UnsupportedFormat {
            path: path.to_path_buf(),
            reason: format!("extension {:?}", other.unwrap_or("")),
        }),
    }
}

pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|f| BufReader::new(f).read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(b"\x89PNG") {
        decode_png(path, &bytes)
    } else if bytes.first() == Some(&b'P') {
        decode_pnm(path, &bytes)
    } else {
        Err(Error::UnsupportedFormat {
            path: path.to_path_buf(),
            reason: "unrecognized signature".into(),
        })
    }
}

pub fn save_image(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let format = format_for(path)?;
    let (w, h, c) = (img.width(), img.height(), img.channels());
    let mut interleaved = Vec::with_capacity(w * h * c);
    for i in 0..w * h {
        for plane in img.planes() {
            interleaved.push(quantize(plane.data()[i]));
        }
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    match format {
        Format::Pnm => {
            let magic = if c == 1 { "P5" } else { "P6" };
            write!(out, "{magic}\n{w} {h}\n255\n")
                .and_then(|_| out.write_all(&interleaved))
                .map_err(|e| Error::io(path, e))?;
        }
        Format::Png => {
            let mut enc = png::Encoder::new(&mut out, w as u32, h as u32);
            enc.set_color(if c == 1 {
                png::ColorType::Grayscale
            } else {
                png::ColorType::Rgb
            });
            enc.set_depth(png::BitDepth::Eight);
            let png_err = |e: png::EncodingError| Error::MalformedImage {
                path: path.to_path_buf(),
                reason: e.to_string(),
            };
            let mut writer = enc.write_header().map_err(png_err)?;
            writer.write_image_data(&interleaved).map_err(png_err)?;
            writer.finish().map_err(png_err)?;
        }
    }
    out.flush().map_err(|e| Error::io(path, e))
}

fn planes_from_interleaved(
    path: &Path,
    w: usize,
    h: usize,
    stored: usize,
    kept: usize,
    samples: impl Iterator<Item = f64>,
) -> Result<Image> {
    if w == 0 || h == 0 {
        return Err(Error::EmptyImage {
            width: w,
            height: h,
            channels: kept,
        });
    }
    let mut planes = vec![Vec::with_capacity(w * h); kept];
    let mut n = 0;
    for (i, v) in samples.take(w * h * stored).enumerate() {
        let c = i % stored;
        if c < kept {
            planes[c].push(v);
        }
        n += 1;
    }
    if n != w * h * stored {
        return Err(Error::MalformedImage {
            path: path.to_path_buf(),
            reason: format!("expected {} samples, found {n}", w * h * stored),
        });
    }
    Image::from_planes(
        planes
            .into_iter()
            .map(|d| Plane::new(w, h, d))
            .collect::<Result<_>>()?,
    )
}

fn decode_png(path: &Path, bytes: &[u8]) -> Result<Image> {
    let malformed = |e: png::DecodingError| Error::MalformedImage {
        path: path.to_path_buf(),
        reason: e.to_string(),
    };
    let mut decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(malformed)?;
    let size = reader.output_buffer_size().ok_or_else(|| Error::MalformedImage {
        path: path.to_path_buf(),
        reason: "image too large".into(),
    })?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(malformed)?;
    let (stored, kept) = match info.color_type {
        png::ColorType::Grayscale => (1, 1),
        png::ColorType::GrayscaleAlpha => (2, 1),
        png::ColorType::Rgb => (3, 3),
        png::ColorType::Rgba => (4, 3),
        png::ColorType::Indexed => {
            return Err(Error::UnsupportedFormat {
                path: path.to_path_buf(),
                reason: "unexpanded palette".into(),
            })
        }
    };
    let (w, h) = (info.width as usize, info.height as usize);
    let data = &buf[..info.line_size * h];
    match info.bit_depth {
        png::BitDepth::Eight => planes_from_interleaved(
            path,
            w,
            h,
            stored,
            kept,
            data.iter().map(|&b| b as f64 / 255.0),
        ),
        png::BitDepth::Sixteen => planes_from_interleaved(
            path,
            w,
            h,
            stored,
            kept,
            data.chunks_exact(2)
                .map(|b| u16::from_be_bytes([b[0], b[1]]) as f64 / 65535.0),
        ),
        depth => Err(Error::UnsupportedFormat {
            path: path.to_path_buf(),
            reason: format!("bit depth {depth:?}"),
        }),
    }
}

struct PnmHeader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> PnmHeader<'a> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                b if b.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self) -> Option<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()?
            .parse()
            .ok()
    }
}

fn decode_pnm(path: &Path, bytes: &[u8]) -> Result<Image> {
    let malformed = |reason: &str| Error::MalformedImage {
        path: path.to_path_buf(),
        reason: reason.into(),
    };
    if bytes.len() < 2 {
        return Err(malformed("truncated header"));
    }
    let (channels, binary) = match &bytes[..2] {
        b"P2" => (1, false),
        b"P3" => (3, false),
        b"P5" => (1, true),
        b"P6" => (3, true),
        other => {
            return Err(Error::UnsupportedFormat {
                path: path.to_path_buf(),
                reason: format!("netpbm magic {:?}", String::from_utf8_lossy(other)),
            })
        }
    };
    let mut header = PnmHeader { bytes, pos: 2 };
    let w = header.number().ok_or_else(|| malformed("missing width"))?;
    let h = header.number().ok_or_else(|| malformed("missing height"))?;
    let maxval = header.number().ok_or_else(|| malformed("missing maxval"))?;
    if maxval == 0 || maxval > 65535 {
        return Err(malformed("maxval must be in 1..=65535"));
    }
    let scale = maxval as f64;
    if binary {
        // exactly one whitespace byte separates the header from the raster
        let start = header.pos + 1;
        let raster = bytes.get(start..).unwrap_or(&[]);
        if maxval < 256 {
            planes_from_interleaved(
                path,
                w,
                h,
                channels,
                channels,
                raster.iter().map(|&b| b as f64 / scale),
            )
        } else {
            planes_from_interleaved(
                path,
                w,
                h,
                channels,
                channels,
                raster
                    .chunks_exact(2)
                    .map(|b| u16::from_be_bytes([b[0], b[1]]) as f64 / scale),
            )
        }
    } else {
        let mut values = Vec::with_capacity(w * h * channels);
        while let Some(v) = header.number() {
            values.push((v.min(maxval)) as f64 / scale);
        }
        planes_from_interleaved(path, w, h, channels, channels, values.into_iter())
    }
}
