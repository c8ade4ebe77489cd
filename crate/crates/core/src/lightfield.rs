//! Light-field data model, synthetic aperture masks and the photography
//! operator.
//!
//! Viewpoints are integer offsets `(u, v)` in `-(g-1)/2 ..= (g-1)/2`. Row 0 of
//! the view grid is the topmost viewpoint, `v = +(g-1)/2`; column 0 is the
//! leftmost, `u = -(g-1)/2`.
//!
//! The photography operator averages sub-aperture views after shifting each
//! by `(alpha*u, alpha*v)`:
//!
//! ```text
//! I(x, y) = sum_{(u,v) in A} w_uv * L(x - alpha*u, y - alpha*v, u, v)
//! ```
//!
//! A fronto-parallel plane with disparity `d` is rendered sharp at `alpha = d`.

use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{accumulate_shifted, Image};

/// A 4D light field sampled on a `grid_size x grid_size` viewpoint grid.
#[derive(Debug, Clone, PartialEq)]
pub struct LightField {
    width: usize,
    height: usize,
    grid_size: usize,
    channels: usize,
    // indexed (row, col, y, x, c)
    data: Vec<f32>,
}

impl LightField {
    pub fn new(
        width: usize,
        height: usize,
        grid_size: usize,
        channels: usize,
        data: Vec<f32>,
    ) -> Result<Self> {
        if grid_size % 2 == 0 {
            return Err(Error::EvenGrid(grid_size));
        }
        if channels == 0 || width == 0 || height == 0 {
            return Err(Error::InvalidArgument("empty light field".into()));
        }
        let expected = grid_size * grid_size * height * width * channels;
        if data.len() != expected {
            return Err(Error::DimensionMismatch {
                expected: vec![grid_size, grid_size, height, width, channels],
                got: vec![data.len()],
            });
        }
        if let Some(bad) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!(
                "light-field sample {bad} outside [0,1]"
            )));
        }
        Ok(Self {
            width,
            height,
            grid_size,
            channels,
            data,
        })
    }

    /// Builds a light field from per-view images in row-major grid order.
    pub fn from_views(grid_size: usize, views: &[Image]) -> Result<Self> {
        if grid_size % 2 == 0 {
            return Err(Error::EvenGrid(grid_size));
        }
        if views.len() != grid_size * grid_size {
            return Err(Error::InvalidArgument(format!(
                "expected {} views, got {}",
                grid_size * grid_size,
                views.len()
            )));
        }
        let first = &views[0];
        let (w, h, ch) = (first.width(), first.height(), first.channels());
        let mut data = Vec::with_capacity(views.len() * w * h * ch);
        for view in views {
            if !view.same_dims(first) {
                return Err(Error::DimensionMismatch {
                    expected: vec![ch, h, w],
                    got: vec![view.channels(), view.height(), view.width()],
                });
            }
            for y in 0..h {
                for x in 0..w {
                    for c in 0..ch {
                        data.push(view.get(x, y, c) as f32);
                    }
                }
            }
        }
        Self::new(w, h, grid_size, ch, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn grid_size(&self) -> usize {
        self.grid_size
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Largest viewpoint coordinate, `(g-1)/2`.
    pub fn half_extent(&self) -> i32 {
        (self.grid_size as i32 - 1) / 2
    }

    pub fn contains_viewpoint(&self, u: i32, v: i32) -> bool {
        let r = self.half_extent();
        u.abs() <= r && v.abs() <= r
    }

    /// Grid `(row, col)` of viewpoint `(u, v)`.
    pub fn grid_index(&self, u: i32, v: i32) -> Result<(usize, usize)> {
        if !self.contains_viewpoint(u, v) {
            return Err(Error::ViewpointOutOfGrid {
                u,
                v,
                grid: self.grid_size,
            });
        }
        let r = self.half_extent();
        Ok(((r - v) as usize, (u + r) as usize))
    }

    #[inline]
    fn offset(&self, row: usize, col: usize) -> usize {
        (row * self.grid_size + col) * self.height * self.width * self.channels
    }

    pub fn sample_at(&self, row: usize, col: usize, x: usize, y: usize, c: usize) -> f32 {
        self.data[self.offset(row, col) + (y * self.width + x) * self.channels + c]
    }

    /// One channel of the view at `(u, v)`, as a contiguous plane.
    pub fn view_plane(&self, u: i32, v: i32, channel: usize) -> Result<Vec<f32>> {
        self.check_channel(channel)?;
        let (row, col) = self.grid_index(u, v)?;
        let base = self.offset(row, col);
        Ok(self.data[base..base + self.width * self.height * self.channels]
            .iter()
            .skip(channel)
            .step_by(self.channels)
            .copied()
            .collect())
    }

    /// All channels of the view at `(u, v)`.
    pub fn view(&self, u: i32, v: i32) -> Result<Image> {
        let (row, col) = self.grid_index(u, v)?;
        Ok(self.view_at(row, col))
    }

    pub fn view_at(&self, row: usize, col: usize) -> Image {
        let mut img = Image::zeros(self.width, self.height, self.channels);
        let base = self.offset(row, col);
        for y in 0..self.height {
            for x in 0..self.width {
                for c in 0..self.channels {
                    let s = self.data[base + (y * self.width + x) * self.channels + c];
                    img.set(x, y, c, s as f64);
                }
            }
        }
        img
    }

    pub fn center_view(&self) -> Image {
        let r = self.half_extent() as usize;
        self.view_at(r, r)
    }

    fn check_channel(&self, channel: usize) -> Result<()> {
        if channel >= self.channels {
            return Err(Error::ChannelOutOfRange {
                channel,
                channels: self.channels,
            });
        }
        Ok(())
    }

    /// Applies `f` to every sample; the result must stay in `[0,1]`.
    pub fn map(&self, f: impl Fn(f32) -> f32) -> Result<LightField> {
        Self::new(
            self.width,
            self.height,
            self.grid_size,
            self.channels,
            self.data.iter().map(|&v| f(v)).collect(),
        )
    }

    /// Sample-wise `a*self + b*other`.
    pub fn combine(&self, a: f32, other: &LightField, b: f32) -> Result<LightField> {
        if self.width != other.width
            || self.height != other.height
            || self.grid_size != other.grid_size
            || self.channels != other.channels
        {
            return Err(Error::DimensionMismatch {
                expected: vec![self.grid_size, self.height, self.width, self.channels],
                got: vec![other.grid_size, other.height, other.width, other.channels],
            });
        }
        Self::new(
            self.width,
            self.height,
            self.grid_size,
            self.channels,
            self.data
                .iter()
                .zip(&other.data)
                .map(|(x, y)| a * x + b * y)
                .collect(),
        )
    }
}

/// Weighted set of viewpoint offsets forming a synthetic aperture.
#[derive(Debug, Clone, PartialEq)]
pub struct ApertureMask {
    offsets: Vec<(i32, i32)>,
    weights: Vec<f64>,
}

impl ApertureMask {
    /// Weights are normalized to sum to 1.
    pub fn new(offsets: Vec<(i32, i32)>, weights: Vec<f64>) -> Result<Self> {
        if offsets.is_empty() || offsets.len() != weights.len() {
            return Err(Error::InvalidArgument(format!(
                "aperture needs matching non-empty offsets/weights ({} vs {})",
                offsets.len(),
                weights.len()
            )));
        }
        for (i, o) in offsets.iter().enumerate() {
            if offsets[..i].contains(o) {
                return Err(Error::InvalidArgument(format!("duplicate offset {o:?}")));
            }
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidArgument("aperture weights must be finite and non-negative".into()));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidArgument("aperture weights sum to zero".into()));
        }
        Ok(Self {
            offsets,
            weights: weights.into_iter().map(|w| w / total).collect(),
        })
    }

    pub fn uniform(offsets: Vec<(i32, i32)>) -> Result<Self> {
        let n = offsets.len();
        Self::new(offsets, vec![1.0; n])
    }

    pub fn center() -> Self {
        Self {
            offsets: vec![(0, 0)],
            weights: vec![1.0],
        }
    }

    pub fn offsets(&self) -> &[(i32, i32)] {
        &self.offsets
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = ((i32, i32), f64)> + '_ {
        self.offsets.iter().copied().zip(self.weights.iter().copied())
    }

    fn check_grid(&self, lf: &LightField) -> Result<()> {
        for &(u, v) in &self.offsets {
            lf.grid_index(u, v)?;
        }
        Ok(())
    }
}

/// All viewpoints with `u^2 + v^2 <= radius^2`, uniformly weighted.
pub fn circular_aperture_mask(grid_size: usize, radius: f64) -> Result<ApertureMask> {
    if grid_size % 2 == 0 {
        return Err(Error::EvenGrid(grid_size));
    }
    if !(radius >= 0.0) {
        return Err(Error::InvalidArgument(format!("aperture radius {radius} < 0")));
    }
    let r = (grid_size as i32 - 1) / 2;
    let r2 = radius * radius;
    let mut offsets = Vec::new();
    for v in (-r..=r).rev() {
        for u in -r..=r {
            if ((u * u + v * v) as f64) <= r2 {
                offsets.push((u, v));
            }
        }
    }
    ApertureMask::uniform(offsets)
}

/// Refocused synthetic-aperture image of one channel.
pub fn photograph(lf: &LightField, mask: &ApertureMask, alpha: f64, channel: usize) -> Result<Image> {
    if !alpha.is_finite() {
        return Err(Error::InvalidArgument(format!("refocus factor {alpha} is not finite")));
    }
    lf.check_channel(channel)?;
    mask.check_grid(lf)?;
    let (w, h) = (lf.width(), lf.height());
    let mut out = Image::zeros(w, h, 1);
    for ((u, v), weight) in mask.iter() {
        let plane = lf.view_plane(u, v, channel)?;
        accumulate_shifted(
            &plane,
            w,
            h,
            alpha * u as f64,
            alpha * v as f64,
            weight,
            out.plane_mut(0),
        );
    }
    Ok(out)
}

/// Ground-truth shallow depth-of-field image: [`photograph`] on every channel.
pub fn ground_truth(lf: &LightField, mask: &ApertureMask, alpha: f64) -> Result<Image> {
    let planes = (0..lf.channels())
        .map(|c| photograph(lf, mask, alpha, c))
        .collect::<Result<Vec<_>>>()?;
    Image::from_planes(&planes)
}

/// Refocus factor: pixels of shift per unit viewpoint offset.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, serde::Serialize, serde::Deserialize)]
#[serde(transparent)]
pub struct RefocusFactor(f64);

impl RefocusFactor {
    pub fn new(alpha: f64) -> Result<Self> {
        if !alpha.is_finite() {
            return Err(Error::InvalidArgument(format!("refocus factor {alpha} is not finite")));
        }
        Ok(Self(alpha))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Per-pixel disparity in pixels per unit viewpoint offset.
#[derive(Debug, Clone, PartialEq)]
pub struct DisparityMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl DisparityMap {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::DimensionMismatch {
                expected: vec![height, width],
                got: vec![values.len()],
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("disparity values must be finite".into()));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn constant(width: usize, height: usize, d: f64) -> Self {
        Self {
            width,
            height,
            values: vec![d; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn to_image(&self) -> Image {
        Image::from_vec(self.width, self.height, 1, self.values.clone()).expect("consistent dims")
    }

    /// 2x2 mean pooling; values are halved since disparity is in pixels.
    pub fn downsample2(&self) -> Result<DisparityMap> {
        let img = self.to_image().downsample2()?;
        let (w, h) = (img.width(), img.height());
        DisparityMap::new(w, h, img.into_vec().into_iter().map(|d| 0.5 * d).collect())
    }
}

/// Disparity relative to the refocused plane: `d - alpha`.
pub fn bias_disparity(d: &DisparityMap, alpha: f64) -> DisparityMap {
    DisparityMap {
        width: d.width,
        height: d.height,
        values: d.values.iter().map(|v| v - alpha).collect(),
    }
}

/// Loads `view_{row}_{col}.png` files from `dir` into a light field.
pub fn load_lightfield(dir: &Path, grid_size: usize) -> Result<LightField> {
    if grid_size % 2 == 0 {
        return Err(Error::EvenGrid(grid_size));
    }
    let mut paths = Vec::with_capacity(grid_size * grid_size);
    for row in 0..grid_size {
        for col in 0..grid_size {
            let p = dir.join(view_file_name(row, col));
            if !p.is_file() {
                return Err(Error::MissingView { row, col });
            }
            paths.push(p);
        }
    }
    let views = paths
        .iter()
        .map(|p| crate::io::read_png(p))
        .collect::<Result<Vec<_>>>()?;
    LightField::from_views(grid_size, &views)
}

/// Writes every view as a 16-bit PNG named `view_{row}_{col}.png`.
pub fn save_lightfield(lf: &LightField, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for row in 0..lf.grid_size() {
        for col in 0..lf.grid_size() {
            let p = dir.join(view_file_name(row, col));
            crate::io::write_png(&lf.view_at(row, col), &p, crate::io::BitDepth::Sixteen)?;
        }
    }
    Ok(())
}

pub fn view_file_name(row: usize, col: usize) -> String {
    format!("view_{row}_{col}.png")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_lf(seed: u64, g: usize, w: usize, h: usize, ch: usize) -> LightField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..g * g * w * h * ch).map(|_| rng.gen::<f32>()).collect();
        LightField::new(w, h, g, ch, data).unwrap()
    }

    /// Plane at disparity `d`: view (u,v) samples the texture at (x + d u, y + d v).
    fn plane_lf(d: i32, w: usize, h: usize) -> LightField {
        let g = 9;
        let tex = |x: i32, y: i32| -> f32 {
            let v = ((x * 7 + y * 13).rem_euclid(17)) as f32 / 16.0;
            0.1 + 0.8 * v
        };
        let mut views = Vec::new();
        for row in 0..g {
            for col in 0..g {
                let (u, v) = (col as i32 - 4, 4 - row as i32);
                let mut img = Image::zeros(w, h, 1);
                for y in 0..h {
                    for x in 0..w {
                        img.set(x, y, 0, tex(x as i32 + d * u, y as i32 + d * v) as f64);
                    }
                }
                views.push(img);
            }
        }
        LightField::from_views(g, &views).unwrap()
    }

    #[test]
    fn circular_mask_counts() {
        let m = circular_aperture_mask(9, 4.0).unwrap();
        assert_eq!(m.len(), 49);
        assert!((m.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);

        let m0 = circular_aperture_mask(9, 0.0).unwrap();
        assert_eq!(m0.offsets(), &[(0, 0)]);
        assert_eq!(m0.weights(), &[1.0]);

        // brute-force count of u^2+v^2 <= 100 over the 9x9 grid
        let mut count = 0;
        for u in -4i32..=4 {
            for v in -4i32..=4 {
                if u * u + v * v <= 100 {
                    count += 1;
                }
            }
        }
        assert_eq!(count, 81);
        assert_eq!(circular_aperture_mask(9, 10.0).unwrap().len(), count);
    }

    #[test]
    fn mask_rejects_bad_input() {
        assert!(circular_aperture_mask(8, 2.0).is_err());
        assert!(circular_aperture_mask(9, -1.0).is_err());
        assert!(ApertureMask::uniform(vec![(0, 0), (0, 0)]).is_err());
        assert!(ApertureMask::new(vec![(0, 0)], vec![-1.0]).is_err());
    }

    #[test]
    fn constant_field_photographs_to_constant() {
        let g = 9;
        let lf = LightField::new(6, 5, g, 1, vec![0.7; g * g * 30]).unwrap();
        let mask = circular_aperture_mask(g, 4.0).unwrap();
        for alpha in [0.0, 1.3, -2.5] {
            let img = photograph(&lf, &mask, alpha, 0).unwrap();
            assert!(img.data().iter().all(|v| (v - 0.7f32 as f64).abs() < 1e-12));
        }
    }

    #[test]
    fn center_mask_extracts_center_view_exactly() {
        let lf = random_lf(3, 9, 12, 10, 3);
        for c in 0..3 {
            let img = photograph(&lf, &ApertureMask::center(), 3.0, c).unwrap();
            assert_eq!(img, lf.center_view().channel(c).unwrap());
        }
    }

    #[test]
    fn plane_refocuses_to_center_view() {
        let d = 2;
        let lf = plane_lf(d, 32, 32);
        let mask = circular_aperture_mask(9, 4.0).unwrap();
        let img = photograph(&lf, &mask, d as f64, 0).unwrap();
        let center = lf.center_view();
        let m = (4 * d) as usize;
        for y in m..32 - m {
            for x in m..32 - m {
                assert!((img.get(x, y, 0) - center.get(x, y, 0)).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn ground_truth_matches_per_channel_photograph() {
        let lf = random_lf(5, 9, 8, 8, 3);
        let mask = circular_aperture_mask(9, 4.0).unwrap();
        let gt = ground_truth(&lf, &mask, 1.5).unwrap();
        assert_eq!(gt.channels(), 3);
        for c in 0..3 {
            let p = photograph(&lf, &mask, 1.5, c).unwrap();
            assert_eq!(gt.plane(c), p.data());
        }
        let gray = random_lf(6, 9, 8, 8, 1);
        assert_eq!(ground_truth(&gray, &mask, 0.0).unwrap().channels(), 1);
    }

    #[test]
    fn photograph_errors() {
        let lf = random_lf(1, 3, 4, 4, 1);
        assert!(matches!(
            photograph(&lf, &ApertureMask::center(), 0.0, 1),
            Err(Error::ChannelOutOfRange { .. })
        ));
        let wide = circular_aperture_mask(9, 4.0).unwrap();
        assert!(matches!(
            photograph(&lf, &wide, 0.0, 0),
            Err(Error::ViewpointOutOfGrid { .. })
        ));
        assert!(photograph(&lf, &ApertureMask::center(), f64::NAN, 0).is_err());
    }

    #[test]
    fn bias_sign_convention() {
        let d = DisparityMap::constant(4, 4, 0.0);
        assert!(bias_disparity(&d, 3.0).values().iter().all(|&v| v == -3.0));
        let d2 = DisparityMap::constant(4, 4, 2.0);
        assert!(bias_disparity(&d2, 2.0).values().iter().all(|&v| v == 0.0));
        assert_eq!(bias_disparity(&d2, 0.0), d2);
    }

    #[test]
    fn plane_is_sharpest_at_its_disparity() {
        use crate::image::{laplacian_variance, Rect};
        let lf = plane_lf(2, 48, 48);
        let mask = circular_aperture_mask(9, 4.0).unwrap();
        let roi = Rect::full(48, 48).inset(16);
        let sharp: Vec<f64> = (0..=4)
            .map(|a| laplacian_variance(&photograph(&lf, &mask, a as f64, 0).unwrap(), 0, roi))
            .collect();
        let best = sharp
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert_eq!(best, 2);
    }

    #[test]
    fn rejects_even_grid_and_out_of_range_samples() {
        assert!(matches!(LightField::new(1, 1, 2, 1, vec![0.0; 4]), Err(Error::EvenGrid(2))));
        assert!(LightField::new(1, 1, 1, 1, vec![1.5]).is_err());
    }
}
