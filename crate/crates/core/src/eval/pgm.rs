//! 8-bit grayscale Netpbm (PGM) reading and writing. Binary `P5` and plain
//! `P2` are read; `P5` is written.

use std::path::Path;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Image;

fn format_err(msg: impl Into<String>) -> Error {
    Error::Format {
        kind: "PGM",
        msg: msg.into(),
    }
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Header<'a> {
    fn skip_space_and_comments(&mut self) {
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

    fn token(&mut self) -> Result<&'a [u8]> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() && self.bytes[self.pos] != b'#' {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(format_err("truncated header"));
        }
        Ok(&self.bytes[start..self.pos])
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        let tok = self.token()?;
        std::str::from_utf8(tok)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| format_err(format!("bad {what} `{}`", String::from_utf8_lossy(tok))))
    }
}

/// Decodes a PGM image with values scaled to `[0, 1]` by the file's maxval
/// (255 for ordinary 8-bit files).
pub fn decode_pgm(bytes: &[u8]) -> Result<Image<f64>> {
    if bytes.starts_with(b"\x89PNG") {
        return Err(Error::UnsupportedImage("PNG input is not supported; convert to PGM".into()));
    }
    let mut h = Header { bytes, pos: 0 };
    let magic = h.token()?;
    let binary = match magic {
        b"P5" => true,
        b"P2" => false,
        b"P1" | b"P4" => return Err(Error::UnsupportedImage("bitmap (PBM) input; expected 8-bit grayscale".into())),
        b"P3" | b"P6" => return Err(Error::UnsupportedImage("color (PPM) input; expected 8-bit grayscale".into())),
        other => {
            return Err(format_err(format!(
                "unknown magic `{}`",
                String::from_utf8_lossy(&other[..other.len().min(8)])
            )))
        }
    };
    let width = h.number("width")?;
    let height = h.number("height")?;
    let maxval = h.number("maxval")?;
    if maxval > 255 {
        return Err(Error::UnsupportedImage(format!(
            "16-bit PGM (maxval {maxval}); only 8-bit grayscale is supported"
        )));
    }
    if maxval == 0 || width == 0 || height == 0 {
        return Err(format_err(format!("invalid header {width}x{height} maxval {maxval}")));
    }
    let n = width * height;
    let scale = maxval as f64;
    let data: Vec<f64> = if binary {
        // Exactly one whitespace byte separates the header from the raster.
        let start = h.pos + 1;
        let raster = bytes
            .get(start..start + n)
            .ok_or_else(|| format_err(format!("raster truncated: expected {n} bytes")))?;
        raster.iter().map(|&b| b as f64 / scale).collect()
    } else {
        (0..n)
            .map(|_| {
                let v = h.number("sample")?;
                if v > maxval {
                    return Err(format_err(format!("sample {v} exceeds maxval {maxval}")));
                }
                Ok(v as f64 / scale)
            })
            .collect::<Result<_>>()?
    };
    if data.iter().any(|&v| v > 1.0) {
        return Err(format_err("sample exceeds maxval"));
    }
    Image::new(height, width, data)
}

/// Quantises `[0, 1]` values to 8 bits, clamping out-of-range values.
pub fn quantize<T: Real>(v: T) -> u8 {
    let v = v.f64();
    if v.is_nan() {
        return 0;
    }
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Encodes an image as binary PGM (`P5`, maxval 255).
pub fn encode_pgm<T: Real>(image: &Image<T>) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.extend(image.data().iter().map(|&v| quantize(v)));
    out
}

pub fn load_image(path: impl AsRef<Path>) -> Result<Image<f64>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes).map_err(|e| match e {
        Error::Format { kind, msg } => Error::Format {
            kind,
            msg: format!("{}: {msg}", path.display()),
        },
        Error::UnsupportedImage(msg) => Error::UnsupportedImage(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn save_image<T: Real>(path: impl AsRef<Path>, image: &Image<T>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_pgm(image)).map_err(|e| Error::io(path, e))
}
