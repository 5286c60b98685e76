//! Binary netpbm readers and writers.
//!
//! Label maps are PGM (P5) with maxval 65535, big-endian sample order as the
//! format requires. Images are PPM (P6) with maxval 255. Header tokens are
//! separated by whitespace; `#` comments are allowed anywhere between tokens.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::dataio::LabelMap;
use crate::error::{Error, Result};
use crate::RgbImage;

const LABEL_MAXVAL: u32 = 65535;

/// Pulls the next whitespace-delimited token, skipping `#` comments.
struct TokenReader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> TokenReader<'a> {
    fn new(data: &'a [u8]) -> Self {
        TokenReader { data, pos: 0 }
    }

    fn next_token(&mut self) -> Option<&'a [u8]> {
        loop {
            while self.pos < self.data.len() && self.data[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
            if self.pos >= self.data.len() {
                return None;
            }
            if self.data[self.pos] == b'#' {
                while self.pos < self.data.len() && self.data[self.pos] != b'\n' {
                    self.pos += 1;
                }
                continue;
            }
            let start = self.pos;
            while self.pos < self.data.len()
                && !self.data[self.pos].is_ascii_whitespace()
                && self.data[self.pos] != b'#'
            {
                self.pos += 1;
            }
            return Some(&self.data[start..self.pos]);
        }
    }

    fn next_u32(&mut self, what: &str) -> Result<u32> {
        let tok = self
            .next_token()
            .ok_or_else(|| Error::PgmHeader {
                detail: format!("missing {what}"),
            })?;
        std::str::from_utf8(tok)
            .ok()
            .and_then(|s| s.parse::<u32>().ok())
            .ok_or_else(|| Error::PgmHeader {
                detail: format!("{what} is not a decimal integer"),
            })
    }

    /// Consumes exactly one whitespace byte after the last header token.
    fn skip_single_whitespace(&mut self) -> Result<usize> {
        if self.pos >= self.data.len() || !self.data[self.pos].is_ascii_whitespace() {
            return Err(Error::PgmHeader {
                detail: "header not terminated by whitespace".into(),
            });
        }
        Ok(self.pos + 1)
    }
}

/// Reads a 16-bit PGM label map. Maxval must be exactly 65535; samples are
/// big-endian u16. The maxval sample decodes to the ignore label.
pub fn read_label_map(path: &Path) -> Result<LabelMap> {
    let data = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (map, _) = parse_label_map(&data)?;
    Ok(map)
}

fn parse_label_map(data: &[u8]) -> Result<(LabelMap, usize)> {
    let mut tr = TokenReader::new(data);
    match tr.next_token() {
        Some(b"P5") => {}
        _ => {
            return Err(Error::PgmHeader {
                detail: "magic is not P5".into(),
            })
        }
    }
    let width = tr.next_u32("width")?;
    let height = tr.next_u32("height")?;
    let maxval = tr.next_u32("maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::PgmZeroDimension { width, height });
    }
    if maxval != LABEL_MAXVAL {
        return Err(Error::PgmMaxval { found: maxval });
    }
    let body = tr.skip_single_whitespace()?;
    let expected = (width as usize) * (height as usize) * 2;
    let got = data.len() - body;
    if got < expected {
        return Err(Error::PgmTruncated { expected, got });
    }
    let raster = &data[body..body + expected];
    let labels: Vec<u16> = raster
        .chunks_exact(2)
        .map(|b| u16::from_be_bytes([b[0], b[1]]))
        .collect();
    let map = LabelMap::new(width, height, labels)?;
    Ok((map, body + expected))
}

/// Writes a label map as 16-bit big-endian PGM with maxval 65535.
pub fn write_label_map(path: &Path, map: &LabelMap) -> Result<()> {
    let mut out = Vec::with_capacity(32 + map.pixel_count() * 2);
    write!(out, "P5\n{} {}\n{}\n", map.width(), map.height(), LABEL_MAXVAL)
        .expect("vec write is infallible");
    for &label in map.labels() {
        out.extend_from_slice(&label.to_be_bytes());
    }
    fs::write(path, &out).map_err(|e| Error::io(path, e))
}

/// Reads an 8-bit PPM image. Maxval must be 255.
pub fn read_ppm(path: &Path) -> Result<RgbImage> {
    let data = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut tr = TokenReader::new(&data);
    match tr.next_token() {
        Some(b"P6") => {}
        _ => {
            return Err(Error::PpmHeader {
                detail: "magic is not P6".into(),
            })
        }
    }
    let parse = |what: &str, tr: &mut TokenReader| -> Result<u32> {
        tr.next_u32(what).map_err(|e| match e {
            Error::PgmHeader { detail } => Error::PpmHeader { detail },
            other => other,
        })
    };
    let width = parse("width", &mut tr)?;
    let height = parse("height", &mut tr)?;
    let maxval = parse("maxval", &mut tr)?;
    if width == 0 || height == 0 {
        return Err(Error::PpmHeader {
            detail: format!("zero dimension {width}x{height}"),
        });
    }
    if maxval != 255 {
        return Err(Error::PpmHeader {
            detail: format!("maxval is {maxval}, expected 255"),
        });
    }
    let body = tr.skip_single_whitespace().map_err(|e| match e {
        Error::PgmHeader { detail } => Error::PpmHeader { detail },
        other => other,
    })?;
    let expected = (width as usize) * (height as usize) * 3;
    let got = data.len() - body;
    if got < expected {
        return Err(Error::PpmTruncated { expected, got });
    }
    RgbImage::new(width, height, data[body..body + expected].to_vec())
}

/// Writes an image as binary PPM with maxval 255.
pub fn write_ppm(path: &Path, image: &RgbImage) -> Result<()> {
    let mut out = Vec::with_capacity(32 + image.data().len());
    write!(out, "P6\n{} {}\n255\n", image.width(), image.height())
        .expect("vec write is infallible");
    out.extend_from_slice(image.data());
    fs::write(path, &out).map_err(|e| Error::io(path, e))
}
