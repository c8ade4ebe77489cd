//! Planar floating-point images.
//!
//! Samples are stored channel-major (`[c][y][x]`), which is the layout the
//! network tensors use, so a single channel is a contiguous slice.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::DimensionMismatch {
                expected: vec![channels, height, width],
                got: vec![data.len()],
            });
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    /// Stacks single-channel images into one multi-channel image.
    pub fn from_planes(planes: &[Image]) -> Result<Self> {
        let first = planes
            .first()
            .ok_or_else(|| Error::InvalidArgument("no planes to stack".into()))?;
        let (w, h) = (first.width, first.height);
        let mut data = Vec::with_capacity(w * h * planes.len());
        for p in planes {
            if p.width != w || p.height != h || p.channels != 1 {
                return Err(Error::DimensionMismatch {
                    expected: vec![1, h, w],
                    got: vec![p.channels, p.height, p.width],
                });
            }
            data.extend_from_slice(&p.data);
        }
        Self::from_vec(w, h, planes.len(), data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn same_dims(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.width * self.height;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.width * self.height;
        &mut self.data[c * n..(c + 1) * n]
    }

    /// Copies channel `c` out as a single-channel image.
    pub fn channel(&self, c: usize) -> Result<Image> {
        if c >= self.channels {
            return Err(Error::ChannelOutOfRange {
                channel: c,
                channels: self.channels,
            });
        }
        Ok(Image {
            width: self.width,
            height: self.height,
            channels: 1,
            data: self.plane(c).to_vec(),
        })
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, value: f64) {
        self.data[(c * self.height + y) * self.width + x] = value;
    }

    /// Bilinear sample at a real-valued position with edge clamping.
    pub fn sample(&self, x: f64, y: f64, c: usize) -> f64 {
        let plane = self.plane(c);
        let (x0, x1, fx) = clamp_coord(x, self.width);
        let (y0, y1, fy) = clamp_coord(y, self.height);
        let w = self.width;
        let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
        let bottom = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
        top * (1.0 - fy) + bottom * fy
    }

    /// Returns `I'(x,y) = I(x - dx, y - dy)`, bilinear with edge clamping.
    pub fn translated(&self, dx: f64, dy: f64) -> Image {
        let mut out = Image::zeros(self.width, self.height, self.channels);
        for c in 0..self.channels {
            accumulate_shifted(
                self.plane(c),
                self.width,
                self.height,
                dx,
                dy,
                1.0,
                out.plane_mut(c),
            );
        }
        out
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Color inversion `x -> 1 - x`.
    pub fn inverted(&self) -> Image {
        self.map(|v| 1.0 - v)
    }

    /// 2x2 mean pooling.
    pub fn downsample2(&self) -> Result<Image> {
        if self.width % 2 != 0 || self.height % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "cannot halve a {}x{} image",
                self.width, self.height
            )));
        }
        let (w2, h2) = (self.width / 2, self.height / 2);
        let mut out = Image::zeros(w2, h2, self.channels);
        for c in 0..self.channels {
            for y in 0..h2 {
                for x in 0..w2 {
                    let s = self.get(2 * x, 2 * y, c)
                        + self.get(2 * x + 1, 2 * y, c)
                        + self.get(2 * x, 2 * y + 1, c)
                        + self.get(2 * x + 1, 2 * y + 1, c);
                    out.set(x, y, c, 0.25 * s);
                }
            }
        }
        Ok(out)
    }

    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Image> {
        if x0 + w > self.width || y0 + h > self.height {
            return Err(Error::InvalidArgument(format!(
                "crop {w}x{h}+{x0}+{y0} exceeds {}x{}",
                self.width, self.height
            )));
        }
        let mut out = Image::zeros(w, h, self.channels);
        for c in 0..self.channels {
            for y in 0..h {
                for x in 0..w {
                    out.set(x, y, c, self.get(x0 + x, y0 + y, c));
                }
            }
        }
        Ok(out)
    }

    /// Mean over all channels, as a single-channel image.
    pub fn luminance(&self) -> Image {
        let n = self.width * self.height;
        let mut data = vec![0.0; n];
        for c in 0..self.channels {
            for (d, s) in data.iter_mut().zip(self.plane(c)) {
                *d += s;
            }
        }
        let k = 1.0 / self.channels as f64;
        data.iter_mut().for_each(|v| *v *= k);
        Image {
            width: self.width,
            height: self.height,
            channels: 1,
            data,
        }
    }

    pub fn max_abs_diff(&self, other: &Image) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Axis-aligned pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl Rect {
    pub fn new(x: usize, y: usize, width: usize, height: usize) -> Self {
        Self {
            x,
            y,
            width,
            height,
        }
    }

    pub fn full(width: usize, height: usize) -> Self {
        Self::new(0, 0, width, height)
    }

    /// Shrinks the rectangle by `m` pixels on every side.
    pub fn inset(&self, m: usize) -> Rect {
        Rect {
            x: self.x + m,
            y: self.y + m,
            width: self.width.saturating_sub(2 * m),
            height: self.height.saturating_sub(2 * m),
        }
    }

    pub fn fits(&self, width: usize, height: usize) -> bool {
        self.width > 0 && self.height > 0 && self.x + self.width <= width && self.y + self.height <= height
    }
}

#[inline]
pub(crate) fn clamp_coord(s: f64, n: usize) -> (usize, usize, f64) {
    let max = (n - 1) as f64;
    let s = s.clamp(0.0, max);
    let i0 = s.floor();
    let f = s - i0;
    let i0 = i0 as usize;
    (i0, (i0 + 1).min(n - 1), f)
}

/// `out(x,y) += weight * src(x - dx, y - dy)` with bilinear interpolation and
/// edge clamping. A shift is constant over the image, so the tap positions
/// are computed once per row and column.
pub(crate) fn accumulate_shifted<T: Copy + Into<f64>>(
    src: &[T],
    width: usize,
    height: usize,
    dx: f64,
    dy: f64,
    weight: f64,
    out: &mut [f64],
) {
    let cols: Vec<(usize, usize, f64)> = (0..width)
        .map(|x| clamp_coord(x as f64 - dx, width))
        .collect();
    for y in 0..height {
        let (y0, y1, fy) = clamp_coord(y as f64 - dy, height);
        let r0 = &src[y0 * width..(y0 + 1) * width];
        let r1 = &src[y1 * width..(y1 + 1) * width];
        let dst = &mut out[y * width..(y + 1) * width];
        for (d, &(x0, x1, fx)) in dst.iter_mut().zip(&cols) {
            let top = r0[x0].into() * (1.0 - fx) + r0[x1].into() * fx;
            let bottom = r1[x0].into() * (1.0 - fx) + r1[x1].into() * fx;
            *d += weight * (top * (1.0 - fy) + bottom * fy);
        }
    }
}

/// Variance of the 3x3 Laplacian response over `roi` (border pixels of the
/// image are skipped).
pub fn laplacian_variance(img: &Image, c: usize, roi: Rect) -> f64 {
    let (w, h) = (img.width(), img.height());
    let x_lo = roi.x.max(1);
    let y_lo = roi.y.max(1);
    let x_hi = (roi.x + roi.width).min(w - 1);
    let y_hi = (roi.y + roi.height).min(h - 1);
    let mut sum = 0.0;
    let mut sum2 = 0.0;
    let mut n = 0usize;
    for y in y_lo..y_hi {
        for x in x_lo..x_hi {
            let l = img.get(x - 1, y, c) + img.get(x + 1, y, c) + img.get(x, y - 1, c) + img.get(x, y + 1, c)
                - 4.0 * img.get(x, y, c);
            sum += l;
            sum2 += l * l;
            n += 1;
        }
    }
    if n == 0 {
        return 0.0;
    }
    let mean = sum / n as f64;
    (sum2 / n as f64 - mean * mean).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integer_translation_is_exact_on_interior() {
        let data: Vec<f64> = (0..64).map(|i| (i as f64 * 0.37).sin().abs()).collect();
        let img = Image::from_vec(8, 8, 1, data).unwrap();
        let t = img.translated(2.0, -1.0);
        for y in 0..7 {
            for x in 2..8 {
                assert_eq!(t.get(x, y, 0), img.get(x - 2, y + 1, 0));
            }
        }
    }

    #[test]
    fn bilinear_midpoint() {
        let img = Image::from_vec(2, 1, 1, vec![0.0, 1.0]).unwrap();
        assert!((img.sample(0.5, 0.0, 0) - 0.5).abs() < 1e-15);
        assert_eq!(img.sample(-3.0, 0.0, 0), 0.0);
        assert_eq!(img.sample(9.0, 0.0, 0), 1.0);
    }

    #[test]
    fn downsample_rejects_odd() {
        assert!(Image::zeros(5, 4, 1).downsample2().is_err());
        let d = Image::filled(4, 4, 2, 0.3).downsample2().unwrap();
        assert!(d.data().iter().all(|&v| (v - 0.3).abs() < 1e-15));
    }

    #[test]
    fn laplacian_variance_of_constant_is_zero() {
        let img = Image::filled(8, 8, 1, 0.5);
        assert_eq!(laplacian_variance(&img, 0, Rect::full(8, 8)), 0.0);
    }
}
