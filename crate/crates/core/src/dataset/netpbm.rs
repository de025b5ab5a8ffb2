//! Binary 8-bit PGM (P5) and PPM (P6) reading and writing.

use std::fs;
use std::path::Path;

use crate::error::{GadError, Result};

/// Interleaved 8-bit raster: `channels` is 1 for P5 and 3 for P6.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub pixels: Vec<u8>,
}

impl Raster {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Raster {
            width,
            height,
            channels,
            pixels: vec![0; width * height * channels],
        }
    }

    pub fn set_rgb(&mut self, row: usize, col: usize, rgb: [u8; 3]) {
        let i = (row * self.width + col) * self.channels;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn encode(&self) -> Vec<u8> {
        let magic = if self.channels == 3 { "P6" } else { "P5" };
        let mut out = format!("{magic}\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
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

pub fn decode(bytes: &[u8], path: &Path) -> Result<Raster> {
    let fail = |reason: String| GadError::ImageFormat {
        path: path.to_path_buf(),
        reason,
    };
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(fail("bad magic number, expected P5 or P6".into())),
    };
    let mut cur = Cursor { bytes, pos: 2 };
    let (Some(width), Some(height), Some(maxval)) = (cur.number(), cur.number(), cur.number())
    else {
        return Err(fail("malformed header".into()));
    };
    if width == 0 || height == 0 {
        return Err(fail(format!("empty image {width}x{height}")));
    }
    if maxval == 0 || maxval > 255 {
        return Err(fail(format!("unsupported maxval {maxval}, need 8-bit")));
    }
    match bytes.get(cur.pos) {
        Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
        _ => return Err(fail("missing separator after header".into())),
    }
    let need = width * height * channels;
    let payload = &bytes[cur.pos..];
    if payload.len() < need {
        return Err(fail(format!(
            "truncated payload: {} of {need} bytes",
            payload.len()
        )));
    }
    let mut pixels = payload[..need].to_vec();
    if maxval != 255 {
        for p in &mut pixels {
            if *p as usize > maxval {
                return Err(fail(format!("sample {p} exceeds maxval {maxval}")));
            }
            *p = ((*p as usize * 255 + maxval / 2) / maxval) as u8;
        }
    }
    Ok(Raster {
        width,
        height,
        channels,
        pixels,
    })
}

pub fn read(path: &Path) -> Result<Raster> {
    let bytes = fs::read(path).map_err(|e| GadError::io(path, e))?;
    decode(&bytes, path)
}

pub fn write(path: &Path, raster: &Raster) -> Result<()> {
    fs::write(path, raster.encode()).map_err(|e| GadError::io(path, e))
}
