use std::path::Path;

use image::{ColorType, ImageReader, RgbImage};

use crate::error::{Error, Result};

/// RGB image with values in [0, 1], stored as three row-major planes.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRaster {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl ImageRaster {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != 3 * width * height {
            return Err(Error::Shape(format!(
                "raster {width}x{height} needs {} values, got {}",
                3 * width * height,
                data.len()
            )));
        }
        if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Shape("raster values must lie in [0, 1]".into()));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        let plane = width * height;
        let mut data = vec![0.0; 3 * plane];
        for (c, v) in rgb.iter().enumerate() {
            data[c * plane..(c + 1) * plane].fill(v.clamp(0.0, 1.0));
        }
        Self { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.width * self.height;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, x: usize, y: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    /// Writes a pixel, clamping each channel into [0, 1].
    pub fn set(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let n = self.width * self.height;
        for (c, v) in rgb.iter().enumerate() {
            self.data[c * n + y * self.width + x] = v.clamp(0.0, 1.0);
        }
    }

    /// Rec. 601 luma, one value per pixel.
    pub fn luminance(&self) -> Vec<f64> {
        let (r, g, b) = (self.plane(0), self.plane(1), self.plane(2));
        r.iter()
            .zip(g)
            .zip(b)
            .map(|((r, g), b)| 0.299 * r + 0.587 * g + 0.114 * b)
            .collect()
    }

    /// Nearest 8-bit quantization, interleaved RGB.
    pub fn to_rgb8(&self) -> Vec<u8> {
        let n = self.width * self.height;
        let mut out = Vec::with_capacity(3 * n);
        for i in 0..n {
            for c in 0..3 {
                out.push((self.data[c * n + i] * 255.0).round() as u8);
            }
        }
        out
    }
}

/// Decodes an 8-bit PNG or binary PPM; each 8-bit value `v` becomes `v/255`.
pub fn decode_image(path: &Path) -> Result<ImageRaster> {
    let decode_err = |message: String| Error::Decode {
        path: path.to_path_buf(),
        message,
    };
    let img = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| decode_err(e.to_string()))?;
    if !matches!(img.color(), ColorType::Rgb8 | ColorType::Rgba8 | ColorType::L8 | ColorType::La8) {
        return Err(decode_err(format!("unsupported pixel format {:?}, 8-bit only", img.color())));
    }
    let rgb = img.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let n = w * h;
    let mut data = vec![0.0; 3 * n];
    for (i, px) in rgb.pixels().enumerate() {
        for c in 0..3 {
            data[c * n + i] = f64::from(px[c]) / 255.0;
        }
    }
    ImageRaster::new(w, h, data)
}

pub fn encode_png(path: &Path, img: &ImageRaster) -> Result<()> {
    let buf = RgbImage::from_raw(img.width as u32, img.height as u32, img.to_rgb8())
        .expect("buffer length matches dimensions");
    buf.save_with_format(path, image::ImageFormat::Png).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Decode {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    })
}
