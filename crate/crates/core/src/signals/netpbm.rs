//! Binary PGM (P5) / PPM (P6) with maxval 255.

use std::path::Path;

use crate::error::{Error, Result};
use crate::signals::SampledSignal;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetpbmImage {
    pub width: usize,
    pub height: usize,
    /// 1 for PGM, 3 for PPM.
    pub channels: usize,
    pub data: Vec<u8>,
}

impl NetpbmImage {
    pub fn into_signal(self) -> Result<SampledSignal> {
        let values = self.data.iter().map(|&b| b as f64 / 255.0).collect();
        SampledSignal::from_grid(vec![self.height, self.width], self.channels, values)
    }

    /// Quantizes `[0,1]` values (clamped, then rounded) into 8-bit samples.
    pub fn from_values(width: usize, height: usize, channels: usize, values: &[f64]) -> Result<Self> {
        if values.len() != width * height * channels {
            return Err(Error::LengthMismatch {
                left: values.len(),
                right: width * height * channels,
            });
        }
        let data = values.iter().map(|&v| quantize(v)).collect();
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn encode(&self) -> Vec<u8> {
        let magic = if self.channels == 1 { "P5" } else { "P6" };
        let mut out = format!("{magic}\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }
}

pub fn quantize(v: f64) -> u8 {
    let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    (v * 255.0).round() as u8
}

/// Writes a 2D signal-shaped value buffer as PGM or PPM.
pub fn write_values(path: &Path, grid_shape: &[usize], channels: usize, values: &[f64]) -> Result<()> {
    if grid_shape.len() != 2 {
        return Err(Error::Config("only 2D signals can be written as images".into()));
    }
    NetpbmImage::from_values(grid_shape[1], grid_shape[0], channels, values)?.write(path)
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn skip_ws_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_ws_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::format("netpbm header", format!("bad {what}")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<NetpbmImage> {
    if bytes.len() < 2 {
        return Err(Error::format("netpbm", "file too short"));
    }
    let channels = match &bytes[..2] {
        b"P5" => 1,
        b"P6" => 3,
        other => {
            return Err(Error::format(
                "netpbm",
                format!("unsupported magic {:?}", String::from_utf8_lossy(other)),
            ))
        }
    };
    let mut h = Header { bytes, pos: 2 };
    let width = h.number("width")?;
    let height = h.number("height")?;
    let maxval = h.number("maxval")?;
    if maxval != 255 {
        return Err(Error::format("netpbm", format!("maxval {maxval}, only 255 supported")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    if h.pos >= bytes.len() || !bytes[h.pos].is_ascii_whitespace() {
        return Err(Error::format("netpbm", "missing raster separator"));
    }
    let start = h.pos + 1;
    let need = width * height * channels;
    if bytes.len() < start + need {
        return Err(Error::format(
            "netpbm",
            format!("raster truncated: need {need} bytes, have {}", bytes.len().saturating_sub(start)),
        ));
    }
    Ok(NetpbmImage {
        width,
        height,
        channels,
        data: bytes[start..start + need].to_vec(),
    })
}
