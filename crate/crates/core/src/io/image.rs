use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Per-channel means subtracted during preprocessing, in blue, green, red order.
pub const DEFAULT_MEANS: [f32; 3] = [104.0, 117.0, 123.0];

/// 8-bit RGB raster, row-major, 3 bytes per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl RgbImage {
    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        RgbImage {
            width,
            height,
            pixels: rgb.repeat(width * height),
        }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }
}

/// Reads a whitespace-delimited header token, skipping `#` comments.
fn header_token(bytes: &[u8], pos: &mut usize) -> Result<usize> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::ImageFormat("malformed PPM header".into()));
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::ImageFormat("PPM header value out of range".into()))
}

/// Parses a binary (`P6`) PPM with `maxval <= 255`.
pub fn decode_ppm(bytes: &[u8]) -> Result<RgbImage> {
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        let magic = String::from_utf8_lossy(&bytes[..bytes.len().min(2)]).into_owned();
        return Err(Error::ImageFormat(format!(
            "expected binary PPM (P6), found {magic:?}"
        )));
    }
    let mut pos = 2;
    let width = header_token(bytes, &mut pos)?;
    let height = header_token(bytes, &mut pos)?;
    let maxval = header_token(bytes, &mut pos)?;
    if width == 0 || height == 0 {
        return Err(Error::ImageFormat(format!("empty image {width}x{height}")));
    }
    if maxval == 0 || maxval > 255 {
        return Err(Error::ImageFormat(format!(
            "only 8-bit PPM is supported, maxval {maxval}"
        )));
    }
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::ImageFormat(
            "truncated pixel data: missing header terminator".into(),
        ));
    }
    pos += 1;
    let needed = width * height * 3;
    let available = bytes.len() - pos;
    if available < needed {
        return Err(Error::ImageFormat(format!(
            "truncated pixel data: need {needed} bytes, found {available}"
        )));
    }
    Ok(RgbImage {
        width,
        height,
        pixels: bytes[pos..pos + needed].to_vec(),
    })
}

pub fn encode_ppm(image: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", image.width, image.height).into_bytes();
    out.extend_from_slice(&image.pixels);
    out
}

/// Nearest-neighbour resize to `size x size`, blue-green-red channel order,
/// minus `means` (also BGR). No further scaling.
pub fn preprocess(image: &RgbImage, size: usize, means: [f32; 3]) -> Tensor {
    let mut data = Vec::with_capacity(3 * size * size);
    for (channel, &mean) in means.iter().enumerate() {
        // BGR: output channel 0 reads the red-green-blue pixel's byte 2.
        let src = 2 - channel;
        for y in 0..size {
            let sy = y * image.height / size;
            for x in 0..size {
                let sx = x * image.width / size;
                data.push(f32::from(image.pixels[(sy * image.width + sx) * 3 + src]) - mean);
            }
        }
    }
    Tensor::new([1, 3, size, size], data).expect("preprocessed length")
}

pub fn load_image(path: impl AsRef<Path>, size: usize, means: [f32; 3]) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(preprocess(&decode_ppm(&bytes)?, size, means))
}
