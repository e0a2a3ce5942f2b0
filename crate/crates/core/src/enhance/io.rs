//! Image files: binary PGM (P5), grayscale/RGB PNG, and planar float dumps.
//!
//! The planar float format has a 16-byte little-endian header: a 4-byte magic
//! (`IM3F` for enhanced images, `CAM1` for activation maps), then `u32` height,
//! `u32` width and `u32` channel count, followed by `f32` samples, plane by plane.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::{Depth, EnhanceError, GrayImage, Pixels, PlanarImage, Result};

pub const IM3F_MAGIC: [u8; 4] = *b"IM3F";
pub const CAM1_MAGIC: [u8; 4] = *b"CAM1";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> EnhanceError + '_ {
    move |source| EnhanceError::Io { path: path.display().to_string(), source }
}

fn fmt_err(msg: impl Into<String>) -> EnhanceError {
    EnhanceError::Format(msg.into())
}

/// Encode as P5. Unit images are written as 8-bit.
pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let (maxval, body): (u32, Vec<u8>) = match img.pixels() {
        Pixels::U8(p) => (255, p.clone()),
        Pixels::U16(p) => (65535, p.iter().flat_map(|v| v.to_be_bytes()).collect()),
        Pixels::Unit(_) => return encode_pgm(&img.to_u8()),
    };
    let mut out = format!("P5\n{} {}\n{}\n", img.width(), img.height(), maxval).into_bytes();
    out.extend(body);
    out
}

pub fn decode_pgm(bytes: &[u8]) -> Result<GrayImage> {
    let mut pos = 0;
    let mut token = || -> Result<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(fmt_err("truncated PGM header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token()? != "P5" {
        return Err(fmt_err("not a binary PGM (P5)"));
    }
    let mut num = |what: &str| -> Result<usize> {
        token()?.parse::<usize>().map_err(|_| fmt_err(format!("bad PGM {what}")))
    };
    let (w, h, maxval) = (num("width")?, num("height")?, num("maxval")?);
    // exactly one whitespace byte separates the header from the raster
    let body = bytes.get(pos + 1..).ok_or_else(|| fmt_err("PGM has no raster"))?;
    match maxval {
        1..=255 => {
            let raster = body.get(..w * h).ok_or_else(|| fmt_err("truncated PGM raster"))?;
            let scale = 255.0 / maxval as f64;
            if maxval == 255 {
                GrayImage::from_u8(w, h, raster.to_vec())
            } else {
                let vals: Vec<f64> = raster.iter().map(|&v| f64::from(v) * scale).collect();
                GrayImage::from_values(w, h, Depth::U8, &vals)
            }
        }
        256..=65535 => {
            let raster = body.get(..2 * w * h).ok_or_else(|| fmt_err("truncated PGM raster"))?;
            let px: Vec<u16> = raster.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect();
            if maxval == 65535 {
                GrayImage::from_u16(w, h, px)
            } else {
                let scale = 65535.0 / maxval as f64;
                let vals: Vec<f64> = px.iter().map(|&v| f64::from(v) * scale).collect();
                GrayImage::from_values(w, h, Depth::U16, &vals)
            }
        }
        _ => Err(fmt_err(format!("unsupported PGM maxval {maxval}"))),
    }
}

pub fn read_pgm(path: &Path) -> Result<GrayImage> {
    decode_pgm(&fs::read(path).map_err(io_err(path))?)
}

pub fn write_pgm(path: &Path, img: &GrayImage) -> Result<()> {
    fs::write(path, encode_pgm(img)).map_err(io_err(path))
}

fn png_writer<'a, W: Write>(w: W, width: usize, height: usize, color: png::ColorType, depth: png::BitDepth) -> png::Encoder<'a, W> {
    let mut enc = png::Encoder::new(w, width as u32, height as u32);
    enc.set_color(color);
    enc.set_depth(depth);
    enc
}

/// Grayscale PNG, 8- or 16-bit (unit images are written as 8-bit).
pub fn write_png_gray(path: &Path, img: &GrayImage) -> Result<()> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let (depth, data) = match img.pixels() {
        Pixels::U16(p) => (png::BitDepth::Sixteen, p.iter().flat_map(|v| v.to_be_bytes()).collect::<Vec<u8>>()),
        Pixels::U8(p) => (png::BitDepth::Eight, p.clone()),
        Pixels::Unit(_) => return write_png_gray(path, &img.to_u8()),
    };
    let enc = png_writer(BufWriter::new(file), img.width(), img.height(), png::ColorType::Grayscale, depth);
    let mut writer = enc.write_header().map_err(|e| fmt_err(e.to_string()))?;
    writer.write_image_data(&data).map_err(|e| fmt_err(e.to_string()))
}

/// Interleaved 8-bit RGB PNG.
pub fn write_png_rgb(path: &Path, width: usize, height: usize, rgb: &[u8]) -> Result<()> {
    if rgb.len() != width * height * 3 {
        return Err(EnhanceError::Dimension(format!("RGB buffer of {} bytes for {width}x{height}", rgb.len())));
    }
    let file = fs::File::create(path).map_err(io_err(path))?;
    let enc = png_writer(BufWriter::new(file), width, height, png::ColorType::Rgb, png::BitDepth::Eight);
    let mut writer = enc.write_header().map_err(|e| fmt_err(e.to_string()))?;
    writer.write_image_data(rgb).map_err(|e| fmt_err(e.to_string()))
}

/// 3-channel planar image as an RGB PNG (channel 0 → red).
pub fn write_png_planar(path: &Path, img: &PlanarImage) -> Result<()> {
    if img.channels != 3 {
        return Err(EnhanceError::Dimension(format!("RGB PNG needs 3 channels, got {}", img.channels)));
    }
    let n = img.height * img.width;
    let mut rgb = Vec::with_capacity(3 * n);
    for i in 0..n {
        for c in 0..3 {
            rgb.push(super::round_half_up(f64::from(img.data[c * n + i]).clamp(0.0, 1.0) * 255.0) as u8);
        }
    }
    write_png_rgb(path, img.width, img.height, &rgb)
}

pub fn read_png_gray(path: &Path) -> Result<GrayImage> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut decoder = png::Decoder::new(file);
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(|e| fmt_err(e.to_string()))?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf).map_err(|e| fmt_err(e.to_string()))?;
    let (w, h) = (info.width as usize, info.height as usize);
    // color inputs: the first sample of each pixel stands in for gray
    let channels = info.color_type.samples();
    let raw = &buf[..info.buffer_size()];
    match info.bit_depth {
        png::BitDepth::Sixteen => {
            let px = raw.chunks_exact(2 * channels).map(|c| u16::from_be_bytes([c[0], c[1]])).collect();
            GrayImage::from_u16(w, h, px)
        }
        _ => GrayImage::from_u8(w, h, raw.chunks_exact(channels).map(|c| c[0]).collect()),
    }
}

/// Read a PNG or PGM by extension.
pub fn read_image(path: &Path) -> Result<GrayImage> {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("png") => read_png_gray(path),
        Some("pgm") => read_pgm(path),
        other => Err(fmt_err(format!("unsupported image extension {other:?} for {}", path.display()))),
    }
}

pub fn encode_planar(magic: [u8; 4], img: &PlanarImage) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 4 * img.data.len());
    out.extend_from_slice(&magic);
    for v in [img.height, img.width, img.channels] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for v in &img.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_planar(expected_magic: [u8; 4], bytes: &[u8]) -> Result<PlanarImage> {
    if bytes.len() < 16 {
        return Err(fmt_err("planar file shorter than its 16-byte header"));
    }
    if bytes[..4] != expected_magic {
        return Err(fmt_err(format!("bad planar magic {:?}", &bytes[..4])));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes")) as usize;
    let (h, w, c) = (word(4), word(8), word(12));
    let body = &bytes[16..];
    if body.len() != 4 * h * w * c {
        return Err(fmt_err(format!("planar body has {} bytes, header says {c}x{h}x{w}", body.len())));
    }
    let data = body.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes"))).collect();
    PlanarImage::new(c, h, w, data)
}

pub fn write_planar(path: &Path, magic: [u8; 4], img: &PlanarImage) -> Result<()> {
    fs::write(path, encode_planar(magic, img)).map_err(io_err(path))
}

pub fn read_planar(path: &Path, magic: [u8; 4]) -> Result<PlanarImage> {
    decode_planar(magic, &fs::read(path).map_err(io_err(path))?)
}
