use std::fs;
use std::io::Write;
use std::path::Path;

use crate::bbox::BBox;
use crate::error::{Error, Result};

/// 8-bit RGB raster, row-major, 3 bytes per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, fill: [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&fill);
        }
        Image { width, height, data }
    }

    pub fn from_raw(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height * 3 {
            return Err(Error::contract(format!(
                "{} bytes do not form a {width}×{height} RGB image",
                data.len()
            )));
        }
        Ok(Image { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn raw(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Per-channel mean intensity.
    pub fn mean_color(&self) -> [f64; 3] {
        let mut s = [0.0; 3];
        for px in self.data.chunks_exact(3) {
            for c in 0..3 {
                s[c] += px[c] as f64;
            }
        }
        let n = (self.width * self.height) as f64;
        s.map(|v| v / n)
    }

    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn write_ppm(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_ppm())?;
        Ok(())
    }

    pub fn read_ppm(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path)?;
        Self::parse_ppm(&bytes).map_err(|msg| Error::Parse {
            path: path.display().to_string(),
            line: 1,
            msg,
        })
    }

    /// Binary P6 with maxval 255; `#` comments in the header are skipped.
    pub fn parse_ppm(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut pos = 0;
        let mut fields = Vec::with_capacity(4);
        while fields.len() < 4 {
            while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
                if bytes[pos] == b'#' {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                } else {
                    pos += 1;
                }
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err("truncated PPM header".into());
            }
            fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
        }
        if fields[0] != "P6" {
            return Err(format!("expected P6 magic, found `{}`", fields[0]));
        }
        let num = |s: &str, what: &str| s.parse::<usize>().map_err(|_| format!("bad {what} `{s}`"));
        let (w, h, max) = (num(&fields[1], "width")?, num(&fields[2], "height")?, num(&fields[3], "maxval")?);
        if max != 255 {
            return Err(format!("unsupported maxval {max}"));
        }
        // exactly one whitespace byte separates the header from the raster
        pos += 1;
        let need = w * h * 3;
        if bytes.len() < pos + need {
            return Err(format!("raster has {} bytes, expected {need}", bytes.len().saturating_sub(pos)));
        }
        Image::from_raw(w, h, bytes[pos..pos + need].to_vec()).map_err(|e| e.to_string())
    }

    /// One-pixel rectangle outline, clipped to the image.
    pub fn draw_rect(&mut self, b: &BBox, rgb: [u8; 3]) {
        let x0 = b.x.round() as i64;
        let y0 = b.y.round() as i64;
        let x1 = (b.right().round() as i64) - 1;
        let y1 = (b.bottom().round() as i64) - 1;
        for x in x0..=x1 {
            self.put(x, y0, rgb);
            self.put(x, y1, rgb);
        }
        for y in y0..=y1 {
            self.put(x0, y, rgb);
            self.put(x1, y, rgb);
        }
    }

    /// Decimal label in a 3×5 bitmap font with its top-left at `(x, y)`.
    pub fn draw_label(&mut self, x: i64, y: i64, n: u64, rgb: [u8; 3]) {
        const GLYPHS: [u16; 10] = [
            0o75557, 0o26227, 0o71747, 0o71717, 0o55711, 0o74717, 0o74757, 0o71111, 0o75757, 0o75717,
        ];
        for (k, ch) in n.to_string().bytes().enumerate() {
            let g = GLYPHS[(ch - b'0') as usize];
            for row in 0..5 {
                let bits = (g >> (3 * (4 - row))) & 0o7;
                for col in 0..3 {
                    if bits & (4 >> col) != 0 {
                        self.put(x + 4 * k as i64 + col, y + row as i64, rgb);
                    }
                }
            }
        }
    }

    fn put(&mut self, x: i64, y: i64, rgb: [u8; 3]) {
        if x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height {
            self.set_pixel(x as usize, y as usize, rgb);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_round_trip() {
        let mut img = Image::new(4, 3, [1, 2, 3]);
        img.set_pixel(3, 2, [255, 0, 9]);
        let back = Image::parse_ppm(&img.to_ppm()).unwrap();
        assert_eq!(back, img);
        assert_eq!(&img.to_ppm()[..11], b"P6\n4 3\n255\n");
    }

    #[test]
    fn ppm_header_comments() {
        let mut bytes = b"P6 # c\n2 1\n# x\n255\n".to_vec();
        bytes.extend_from_slice(&[9, 8, 7, 6, 5, 4]);
        let img = Image::parse_ppm(&bytes).unwrap();
        assert_eq!(img.pixel(1, 0), [6, 5, 4]);
        assert!(Image::parse_ppm(b"P3\n1 1\n255\n").is_err());
        assert!(Image::parse_ppm(b"P6\n2 2\n255\n\x00").is_err());
    }

    #[test]
    fn rect_outline_is_clipped() {
        let mut img = Image::new(5, 5, [0, 0, 0]);
        img.draw_rect(&BBox::new(-2.0, 1.0, 5.0, 3.0).unwrap(), [255, 255, 255]);
        assert_eq!(img.pixel(0, 1), [255, 255, 255]);
        assert_eq!(img.pixel(2, 3), [255, 255, 255]);
        assert_eq!(img.pixel(1, 2), [0, 0, 0]);
    }
}
