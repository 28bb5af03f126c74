//! Binary PPM (P6) image reading and writing. 8-bit RGB only, maxval 255.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    /// RGB interleaved, row-major, `3 * width * height` bytes.
    pub pixels: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Image { width, height, pixels: vec![0; 3 * width * height] }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let o = 3 * (y * self.width + x);
        [self.pixels[o], self.pixels[o + 1], self.pixels[o + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let o = 3 * (y * self.width + x);
        self.pixels[o..o + 3].copy_from_slice(&rgb);
    }
}

/// Reads one ASCII token from the header, skipping whitespace and `#`
/// comments (which run to end of line).
fn read_token(data: &[u8], pos: &mut usize) -> Result<Vec<u8>> {
    loop {
        while *pos < data.len() && data[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < data.len() && data[*pos] == b'#' {
            while *pos < data.len() && data[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < data.len() && !data[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::Image("truncated PPM header".into()));
    }
    Ok(data[start..*pos].to_vec())
}

fn parse_usize(tok: &[u8], what: &str) -> Result<usize> {
    std::str::from_utf8(tok)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Image(format!("invalid PPM {what}")))
}

pub fn decode_ppm(data: &[u8]) -> Result<Image> {
    let mut pos = 0usize;
    let magic = read_token(data, &mut pos)?;
    if magic != b"P6" {
        return Err(Error::Image("not a binary PPM (P6) file".into()));
    }
    let width = parse_usize(&read_token(data, &mut pos)?, "width")?;
    let height = parse_usize(&read_token(data, &mut pos)?, "height")?;
    let maxval = parse_usize(&read_token(data, &mut pos)?, "maxval")?;
    if maxval != 255 {
        return Err(Error::Image(format!("unsupported PPM maxval {maxval}, expected 255")));
    }
    if width == 0 || height == 0 {
        return Err(Error::Image("PPM has zero dimension".into()));
    }
    // exactly one whitespace byte separates header and payload
    if pos >= data.len() || !data[pos].is_ascii_whitespace() {
        return Err(Error::Image("malformed PPM header terminator".into()));
    }
    pos += 1;
    let need = 3 * width * height;
    if data.len() - pos < need {
        return Err(Error::Image(format!(
            "PPM payload too short: need {need} bytes, have {}",
            data.len() - pos
        )));
    }
    Ok(Image { width, height, pixels: data[pos..pos + need].to_vec() })
}

pub fn encode_ppm(img: &Image) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

pub fn read_ppm(path: &std::path::Path) -> Result<Image> {
    let data = std::fs::read(path)
        .map_err(|e| Error::Image(format!("cannot read {}: {e}", path.display())))?;
    decode_ppm(&data)
}

pub fn write_ppm(path: &std::path::Path, img: &Image) -> Result<()> {
    std::fs::write(path, encode_ppm(img)).map_err(Error::Io)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let mut img = Image::new(3, 2);
        for (i, b) in img.pixels.iter_mut().enumerate() {
            *b = (i * 13 % 256) as u8;
        }
        let bytes = encode_ppm(&img);
        let back = decode_ppm(&bytes).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn comments_and_whitespace() {
        let mut data = b"P6 # a comment\n# another\n 2\t1 # w h\n255\n".to_vec();
        data.extend_from_slice(&[1, 2, 3, 4, 5, 6]);
        let img = decode_ppm(&data).unwrap();
        assert_eq!((img.width, img.height), (2, 1));
        assert_eq!(img.pixels, vec![1, 2, 3, 4, 5, 6]);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(decode_ppm(b"P5\n2 1\n255\nxx").is_err(), "wrong magic");
        assert!(decode_ppm(b"P6\n2 1\n65535\n").is_err(), "16-bit depth");
        let short = b"P6\n2 1\n255\n\x00\x01".to_vec();
        assert!(decode_ppm(&short).is_err(), "short payload");
        assert!(decode_ppm(b"P6\n2").is_err(), "truncated header");
    }

    #[test]
    fn pixel_accessors() {
        let mut img = Image::new(2, 2);
        img.set_pixel(1, 0, [10, 20, 30]);
        assert_eq!(img.pixel(1, 0), [10, 20, 30]);
        assert_eq!(img.pixel(0, 1), [0, 0, 0]);
    }
}
