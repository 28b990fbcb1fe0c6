use super::raster::ImageRaster;

/// Side of the square window used for the local statistics.
pub const MASK_WINDOW: usize = 16;
pub const WHITE_THRESH: f64 = 0.85;
pub const VAR_THRESH: f64 = 0.002;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TissueMask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl TissueMask {
    pub fn from_vec(width: usize, height: usize, data: Vec<bool>) -> Self {
        assert_eq!(data.len(), width * height, "mask size mismatch");
        Self { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&t| t).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&t| t)
    }
}

/// Summed-area table with a zero row and column in front.
fn integral(values: &[f64], w: usize, h: usize) -> Vec<f64> {
    let mut s = vec![0.0; (w + 1) * (h + 1)];
    for y in 0..h {
        let mut row = 0.0;
        for x in 0..w {
            row += values[y * w + x];
            s[(y + 1) * (w + 1) + x + 1] = s[y * (w + 1) + x + 1] + row;
        }
    }
    s
}

/// A pixel is tissue when the luminance in the `MASK_WINDOW`-wide window
/// around it (clipped at the border) is darker than `white_thresh` on
/// average or varies by more than `var_thresh`.
pub fn tissue_mask(img: &ImageRaster, white_thresh: f64, var_thresh: f64) -> TissueMask {
    let (w, h) = (img.width(), img.height());
    let lum = img.luminance();
    let sq: Vec<f64> = lum.iter().map(|v| v * v).collect();
    let s1 = integral(&lum, w, h);
    let s2 = integral(&sq, w, h);
    let half = MASK_WINDOW / 2;
    let stride = w + 1;
    let mut data = vec![false; w * h];
    for y in 0..h {
        let (y0, y1) = (y.saturating_sub(half), (y + MASK_WINDOW - half).min(h));
        for x in 0..w {
            let (x0, x1) = (x.saturating_sub(half), (x + MASK_WINDOW - half).min(w));
            let area = |s: &[f64]| s[y1 * stride + x1] - s[y0 * stride + x1] - s[y1 * stride + x0] + s[y0 * stride + x0];
            let count = ((y1 - y0) * (x1 - x0)) as f64;
            let mean = area(&s1) / count;
            let var = (area(&s2) / count - mean * mean).max(0.0);
            data[y * w + x] = mean < white_thresh || var > var_thresh;
        }
    }
    TissueMask { width: w, height: h, data }
}
