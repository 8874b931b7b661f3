//! PNG and binary PNM (P5/P6) codecs.
//!
//! PNM output layout, byte for byte: `P6` (RGB) or `P5` (gray), `\n`,
//! `<width> <height>\n`, `255\n`, then samples as single bytes, row-major with
//! channels interleaved. No comments are written. The reader accepts comments,
//! any whitespace between header fields and maxval up to 65535 (two bytes per
//! sample, big-endian, when maxval > 255).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{ColorSpace, Image};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum BitDepth {
    #[default]
    Eight,
    Sixteen,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Format {
    Png,
    Pnm,
}

fn format_for(path: &Path) -> Result<Format> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default();
    match ext.as_str() {
        "png" => Ok(Format::Png),
        "ppm" | "pgm" | "pnm" => Ok(Format::Pnm),
        other => Err(Error::UnsupportedFormat(format!("extension {other:?}"))),
    }
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::FileNotFound(path.to_path_buf()),
        _ => Error::Io(e),
    })
}

pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let format = format_for(path)?;
    let file = open(path)?;
    match format {
        Format::Png => decode_png(BufReader::new(file)),
        Format::Pnm => {
            let mut bytes = Vec::new();
            BufReader::new(file).read_to_end(&mut bytes)?;
            decode_pnm(&bytes)
        }
    }
}

pub fn save_image(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    save_image_with_depth(img, path, BitDepth::Eight)
}

/// PNM output is always 8-bit; `depth` only affects PNG.
pub fn save_image_with_depth(img: &Image, path: impl AsRef<Path>, depth: BitDepth) -> Result<()> {
    let path = path.as_ref();
    let format = format_for(path)?;
    if img.colorspace() == ColorSpace::YCbCr {
        return Err(Error::UnsupportedFormat("YCbCr images cannot be written directly".into()));
    }
    let mut out = BufWriter::new(File::create(path)?);
    match format {
        Format::Png => encode_png(img, depth, &mut out)?,
        Format::Pnm => out.write_all(&encode_pnm(img))?,
    }
    out.flush()?;
    Ok(())
}

fn quantize8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn quantize16(v: f64) -> u16 {
    (v.clamp(0.0, 1.0) * 65535.0).round() as u16
}

/// Planar -> interleaved sample order.
fn interleaved(img: &Image) -> impl Iterator<Item = f64> + '_ {
    let n = img.width() * img.height();
    let c = img.channels();
    (0..n * c).map(move |i| img.pixels()[(i % c) * n + i / c])
}

fn from_interleaved(width: usize, height: usize, cs: ColorSpace, samples: &[f64]) -> Result<Image> {
    let c = cs.channels();
    let n = width * height;
    let mut planar = vec![0.0; n * c];
    for (i, &v) in samples.iter().enumerate() {
        planar[(i % c) * n + i / c] = v;
    }
    Image::new(width, height, cs, planar)
}

fn decode_png(reader: impl Read) -> Result<Image> {
    let mut decoder = png::Decoder::new(reader);
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(png_err)?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let frame = reader.next_frame(&mut buf).map_err(png_err)?;
    let (width, height) = (frame.width as usize, frame.height as usize);
    let (src_channels, cs) = match frame.color_type {
        png::ColorType::Grayscale => (1, ColorSpace::Gray),
        png::ColorType::GrayscaleAlpha => (2, ColorSpace::Gray),
        png::ColorType::Rgb => (3, ColorSpace::Rgb),
        png::ColorType::Rgba => (4, ColorSpace::Rgb),
        other => return Err(Error::UnsupportedFormat(format!("PNG color type {other:?}"))),
    };
    let values: Vec<f64> = match frame.bit_depth {
        png::BitDepth::Eight => buf[..frame.buffer_size()].iter().map(|&b| b as f64 / 255.0).collect(),
        png::BitDepth::Sixteen => buf[..frame.buffer_size()]
            .chunks_exact(2)
            .map(|p| u16::from_be_bytes([p[0], p[1]]) as f64 / 65535.0)
            .collect(),
        other => return Err(Error::UnsupportedFormat(format!("PNG bit depth {other:?}"))),
    };
    let keep = cs.channels();
    let samples: Vec<f64> = values
        .chunks_exact(src_channels)
        .flat_map(|px| px[..keep].iter().copied())
        .collect();
    if samples.len() != width * height * keep {
        return Err(Error::Malformed("PNG frame shorter than header".into()));
    }
    from_interleaved(width, height, cs, &samples)
}

fn png_err(e: png::DecodingError) -> Error {
    match e {
        png::DecodingError::IoError(io) if io.kind() == std::io::ErrorKind::UnexpectedEof => {
            Error::Malformed("truncated PNG".into())
        }
        png::DecodingError::IoError(io) => Error::Io(io),
        other => Error::Malformed(other.to_string()),
    }
}

fn encode_png(img: &Image, depth: BitDepth, out: impl Write) -> Result<()> {
    let mut enc = png::Encoder::new(out, img.width() as u32, img.height() as u32);
    enc.set_color(match img.colorspace() {
        ColorSpace::Gray => png::ColorType::Grayscale,
        _ => png::ColorType::Rgb,
    });
    let data: Vec<u8> = match depth {
        BitDepth::Eight => {
            enc.set_depth(png::BitDepth::Eight);
            interleaved(img).map(quantize8).collect()
        }
        BitDepth::Sixteen => {
            enc.set_depth(png::BitDepth::Sixteen);
            interleaved(img).flat_map(|v| quantize16(v).to_be_bytes()).collect()
        }
    };
    let mut writer = enc.write_header().map_err(|e| Error::Malformed(e.to_string()))?;
    writer.write_image_data(&data).map_err(|e| Error::Malformed(e.to_string()))?;
    writer.finish().map_err(|e| Error::Malformed(e.to_string()))?;
    Ok(())
}

pub(crate) fn encode_pnm(img: &Image) -> Vec<u8> {
    let magic = if img.colorspace() == ColorSpace::Gray { "P5" } else { "P6" };
    let mut bytes = format!("{magic}\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    bytes.extend(interleaved(img).map(quantize8));
    bytes
}

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderCursor<'_> {
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

    fn number(&mut self) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Malformed("bad PNM header field".into()))
    }
}

pub(crate) fn decode_pnm(bytes: &[u8]) -> Result<Image> {
    let cs = match bytes.get(..2) {
        Some(b"P6") => ColorSpace::Rgb,
        Some(b"P5") => ColorSpace::Gray,
        _ => return Err(Error::UnsupportedFormat("only binary P5/P6 PNM is supported".into())),
    };
    let mut cur = HeaderCursor { bytes, pos: 2 };
    let width = cur.number()?;
    let height = cur.number()?;
    let maxval = cur.number()?;
    if maxval == 0 || maxval > 65535 {
        return Err(Error::Malformed(format!("PNM maxval {maxval}")));
    }
    // exactly one whitespace byte separates the header from the raster
    if cur.pos >= bytes.len() || !bytes[cur.pos].is_ascii_whitespace() {
        return Err(Error::Malformed("truncated PNM header".into()));
    }
    let raster = &bytes[cur.pos + 1..];
    let n = width * height * cs.channels();
    let bytes_per = if maxval > 255 { 2 } else { 1 };
    if raster.len() < n * bytes_per {
        return Err(Error::Malformed(format!("truncated PNM raster: {} of {} bytes", raster.len(), n * bytes_per)));
    }
    let scale = maxval as f64;
    let samples: Vec<f64> = if bytes_per == 1 {
        raster[..n].iter().map(|&b| (b as f64 / scale).min(1.0)).collect()
    } else {
        raster[..2 * n]
            .chunks_exact(2)
            .map(|p| (u16::from_be_bytes([p[0], p[1]]) as f64 / scale).min(1.0))
            .collect()
    };
    from_interleaved(width, height, cs, &samples)
}
