//! Images as `height x width x channels` grids of `f64` in `[0, 1]`,
//! channels last. Files are either binary/ASCII PGM/PPM or raw little-endian
//! `f64` grids whose shape comes from the model config.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::Invalid(format!(
                "image data length {} != {height}x{width}x{channels}",
                data.len()
            )));
        }
        Ok(Image {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Image {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Replicates a single gray channel into `channels` channels.
    pub fn expand_gray(&self, channels: usize) -> Image {
        if self.channels == channels || self.channels != 1 {
            return self.clone();
        }
        let data = self
            .data
            .iter()
            .flat_map(|&v| std::iter::repeat(v).take(channels))
            .collect();
        Image {
            height: self.height,
            width: self.width,
            channels,
            data,
        }
    }
}

/// Loads an image. PGM/PPM are recognized by their magic number; anything
/// else is read as raw `f64` with the given expected shape.
pub fn load_image(path: &Path, side: usize, channels: usize) -> Result<Image> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let img = if bytes.len() >= 2 && bytes[0] == b'P' && matches!(bytes[1], b'2' | b'3' | b'5' | b'6')
    {
        parse_pnm(&bytes).map_err(|reason| Error::Parse {
            path: path.to_path_buf(),
            reason,
        })?
    } else {
        let expected = side * side * channels * 8;
        if bytes.len() != expected {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                reason: format!(
                    "raw f64 image has {} bytes, expected {expected} ({side}x{side}x{channels})",
                    bytes.len()
                ),
            });
        }
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Image::new(side, side, channels, data)?
    };
    Ok(img.expand_gray(channels))
}

pub fn save_raw(img: &Image, path: &Path) -> Result<()> {
    let bytes: Vec<u8> = img.data.iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes an 8-bit binary PGM (one channel) or PPM (three channels).
pub fn save_pnm(img: &Image, path: &Path) -> Result<()> {
    let magic = match img.channels {
        1 => "P5",
        3 => "P6",
        c => return Err(Error::Invalid(format!("cannot write {c}-channel image as PNM"))),
    };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(
        img.data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn parse_pnm(bytes: &[u8]) -> std::result::Result<Image, String> {
    let ascii = matches!(bytes[1], b'2' | b'3');
    let channels = if matches!(bytes[1], b'2' | b'5') { 1 } else { 3 };
    let mut pos = 2;
    let mut header = [0usize; 3];
    for slot in &mut header {
        *slot = next_number(bytes, &mut pos)?;
    }
    let [width, height, maxval] = header;
    if maxval == 0 || maxval > 65535 {
        return Err(format!("bad maxval {maxval}"));
    }
    let n = width * height * channels;
    let scale = 1.0 / maxval as f64;
    let data: Vec<f64> = if ascii {
        (0..n)
            .map(|_| next_number(bytes, &mut pos).map(|v| v as f64 * scale))
            .collect::<std::result::Result<_, _>>()?
    } else {
        // exactly one whitespace byte separates the header from the raster
        pos += 1;
        let wide = maxval > 255;
        let need = n * if wide { 2 } else { 1 };
        let raster = bytes
            .get(pos..pos + need)
            .ok_or_else(|| format!("raster truncated: need {need} bytes"))?;
        if wide {
            raster
                .chunks_exact(2)
                .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 * scale)
                .collect()
        } else {
            raster.iter().map(|&b| b as f64 * scale).collect()
        }
    };
    Ok(Image {
        height,
        width,
        channels,
        data,
    })
}

fn next_number(bytes: &[u8], pos: &mut usize) -> std::result::Result<usize, String> {
    loop {
        match bytes.get(*pos) {
            Some(b'#') => {
                while !matches!(bytes.get(*pos), Some(b'\n') | None) {
                    *pos += 1;
                }
            }
            Some(c) if c.is_ascii_whitespace() => *pos += 1,
            Some(_) => break,
            None => return Err("unexpected end of header".into()),
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(u8::is_ascii_digit) {
        *pos += 1;
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| format!("expected a number at byte {start}"))
}
