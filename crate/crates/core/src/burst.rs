//! Simulated handheld bursts: viewpoint trajectories, refocused frame
//! extraction, translational alignment and contrast-detection autofocus.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{accumulate_shifted, laplacian_variance, Image, Rect};
use crate::lightfield::{LightField, RefocusFactor};

/// Ordered burst viewpoints, top to bottom.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BurstTrajectory {
    viewpoints: Vec<(i32, i32)>,
}

impl BurstTrajectory {
    /// Checks that `v` strictly decreases along the sequence.
    pub fn new(viewpoints: Vec<(i32, i32)>) -> Result<Self> {
        if viewpoints.is_empty() {
            return Err(Error::InvalidArgument("empty trajectory".into()));
        }
        if viewpoints.windows(2).any(|p| p[1].1 >= p[0].1) {
            return Err(Error::InvalidArgument(format!(
                "trajectory v must strictly decrease: {viewpoints:?}"
            )));
        }
        Ok(Self { viewpoints })
    }

    pub fn viewpoints(&self) -> &[(i32, i32)] {
        &self.viewpoints
    }

    pub fn len(&self) -> usize {
        self.viewpoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.viewpoints.is_empty()
    }

    pub fn max_jitter(&self) -> i32 {
        self.viewpoints.iter().map(|p| p.0.abs()).max().unwrap_or(0)
    }

    pub fn center_of_mass(&self) -> (f64, f64) {
        let n = self.viewpoints.len() as f64;
        let (su, sv) = self
            .viewpoints
            .iter()
            .fold((0i64, 0i64), |(a, b), p| (a + p.0 as i64, b + p.1 as i64));
        (su as f64 / n, sv as f64 / n)
    }
}

/// Rows `v` for an `n`-frame burst: evenly spread from the top row to the
/// bottom row, rounded to the nearest integer (`4, 1, -1, -4` for 4 frames
/// on a 9-wide grid). A single frame sits on the center row.
pub fn trajectory_rows(n_frames: usize, grid_size: usize) -> Vec<i32> {
    let half = ((grid_size - 1) / 2) as f64;
    if n_frames == 1 {
        return vec![0];
    }
    let step = 2.0 * half / (n_frames - 1) as f64;
    (0..n_frames)
        .map(|i| (half - i as f64 * step).round() as i32)
        .collect()
}

const MAX_RESAMPLES: usize = 100_000;

pub fn sample_trajectory(
    n_frames: usize,
    grid_size: usize,
    seed: u64,
    center_of_mass_constrained: bool,
) -> Result<BurstTrajectory> {
    sample_trajectory_with(n_frames, grid_size, seed, center_of_mass_constrained, 1)
}

/// Samples a top-to-bottom trajectory with random horizontal jitter in
/// `-max_jitter..=max_jitter`. When constrained, jitter is redrawn until the
/// mean viewpoint is exactly the grid center.
pub fn sample_trajectory_with(
    n_frames: usize,
    grid_size: usize,
    seed: u64,
    center_of_mass_constrained: bool,
    max_jitter: i32,
) -> Result<BurstTrajectory> {
    if grid_size % 2 == 0 {
        return Err(Error::EvenGrid(grid_size));
    }
    if n_frames == 0 || n_frames > grid_size {
        return Err(Error::InvalidArgument(format!(
            "burst length {n_frames} must be in 1..={grid_size}"
        )));
    }
    let half = ((grid_size - 1) / 2) as i32;
    let jitter = max_jitter.clamp(0, half);
    let rows = trajectory_rows(n_frames, grid_size);
    if center_of_mass_constrained && rows.iter().sum::<i32>() != 0 {
        return Err(Error::InvalidArgument(format!(
            "no {n_frames}-frame trajectory on a {grid_size} grid has its center of mass at the origin"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..MAX_RESAMPLES {
        let us: Vec<i32> = rows.iter().map(|_| rng.gen_range(-jitter..=jitter)).collect();
        if !center_of_mass_constrained || us.iter().sum::<i32>() == 0 {
            return BurstTrajectory::new(us.into_iter().zip(rows.iter().copied()).collect());
        }
    }
    Err(Error::InvalidArgument(format!(
        "could not satisfy the center-of-mass constraint for {n_frames} frames"
    )))
}

/// Refocused burst frames and the viewpoints that produced them.
#[derive(Debug, Clone)]
pub struct Burst {
    pub frames: Vec<Image>,
    pub trajectory: BurstTrajectory,
    pub alpha: RefocusFactor,
}

impl Burst {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn width(&self) -> usize {
        self.frames[0].width()
    }

    pub fn height(&self) -> usize {
        self.frames[0].height()
    }

    pub fn channels(&self) -> usize {
        self.frames[0].channels()
    }

    /// Channel `c` of every frame, laid out `[frame][y][x]`.
    pub fn channel_stack(&self, c: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len() * self.width() * self.height());
        for f in &self.frames {
            out.extend_from_slice(f.plane(c));
        }
        out
    }

    /// Per-pixel mean over frames.
    pub fn mean_frame(&self) -> Image {
        let first = &self.frames[0];
        let mut acc = Image::zeros(first.width(), first.height(), first.channels());
        let k = 1.0 / self.frames.len() as f64;
        for f in &self.frames {
            for (a, b) in acc.data_mut().iter_mut().zip(f.data()) {
                *a += k * b;
            }
        }
        acc
    }

    pub fn map_frames(&self, f: impl Fn(&Image) -> Result<Image>) -> Result<Burst> {
        Ok(Burst {
            frames: self.frames.iter().map(f).collect::<Result<_>>()?,
            trajectory: self.trajectory.clone(),
            alpha: self.alpha,
        })
    }
}

/// Frame `i` is view `traj[i]` resampled at `(x - alpha*u_i, y - alpha*v_i)`.
pub fn extract_burst(lf: &LightField, traj: &BurstTrajectory, alpha: f64) -> Result<Burst> {
    let alpha = RefocusFactor::new(alpha)?;
    let (w, h, ch) = (lf.width(), lf.height(), lf.channels());
    let mut frames = Vec::with_capacity(traj.len());
    for &(u, v) in traj.viewpoints() {
        lf.grid_index(u, v)?;
        let mut frame = Image::zeros(w, h, ch);
        for c in 0..ch {
            let plane = lf.view_plane(u, v, c)?;
            let (dx, dy) = (alpha.value() * u as f64, alpha.value() * v as f64);
            accumulate_shifted(&plane, w, h, dx, dy, 1.0, frame.plane_mut(c));
        }
        frames.push(frame);
    }
    Ok(Burst {
        frames,
        trajectory: traj.clone(),
        alpha,
    })
}

fn ncc(reference: &Image, frame: &Image, roi: Rect, dx: i32, dy: i32) -> Option<f64> {
    let (w, h) = (frame.width() as i32, frame.height() as i32);
    let n = (roi.width * roi.height) as f64;
    let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for y in roi.y..roi.y + roi.height {
        for x in roi.x..roi.x + roi.width {
            let a = reference.get(x, y, 0);
            let bx = (x as i32 + dx).clamp(0, w - 1) as usize;
            let by = (y as i32 + dy).clamp(0, h - 1) as usize;
            let b = frame.get(bx, by, 0);
            sa += a;
            sb += b;
            saa += a * a;
            sbb += b * b;
            sab += a * b;
        }
    }
    let va = saa - sa * sa / n;
    let vb = sbb - sb * sb / n;
    if va <= 1e-12 || vb <= 1e-12 {
        return None;
    }
    Some((sab - sa * sb / n) / (va * vb).sqrt())
}

/// Registers every frame to frame 0 by the integer translation in
/// `-max_shift..=max_shift` that maximizes normalized cross-correlation over
/// `roi`. A reported shift `(dx, dy)` means `frame(x + dx, y + dy)` matches
/// `frame0(x, y)`; aligned frames are resampled accordingly.
pub fn align_translation(frames: &[Image], roi: Rect, max_shift: i32) -> Result<(Vec<Image>, Vec<(i32, i32)>)> {
    let first = frames
        .first()
        .ok_or_else(|| Error::InvalidArgument("no frames to align".into()))?;
    if !roi.fits(first.width(), first.height()) {
        return Err(Error::InvalidArgument(format!(
            "roi {roi:?} outside {}x{} frame",
            first.width(),
            first.height()
        )));
    }
    let reference = first.luminance();
    let mut aligned = Vec::with_capacity(frames.len());
    let mut shifts = Vec::with_capacity(frames.len());
    for frame in frames {
        if !frame.same_dims(first) {
            return Err(Error::DimensionMismatch {
                expected: vec![first.channels(), first.height(), first.width()],
                got: vec![frame.channels(), frame.height(), frame.width()],
            });
        }
        let lum = frame.luminance();
        let mut best: Option<(f64, i32, i32)> = None;
        for dy in -max_shift..=max_shift {
            for dx in -max_shift..=max_shift {
                let Some(score) = ncc(&reference, &lum, roi, dx, dy) else {
                    continue;
                };
                let better = match best {
                    None => true,
                    Some((s, bx, by)) => {
                        score > s + 1e-12
                            || ((score - s).abs() <= 1e-12 && dx.abs() + dy.abs() < bx.abs() + by.abs())
                    }
                };
                if better {
                    best = Some((score, dx, dy));
                }
            }
        }
        let (_, dx, dy) = best.ok_or(Error::Unalignable)?;
        aligned.push(frame.translated(-dx as f64, -dy as f64));
        shifts.push((dx, dy));
    }
    Ok((aligned, shifts))
}

/// Inclusive grid of candidate refocus factors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaRange {
    pub start: f64,
    pub end: f64,
    pub step: f64,
}

impl AlphaRange {
    pub fn new(start: f64, end: f64, step: f64) -> Self {
        Self { start, end, step }
    }

    fn grid(&self) -> Result<Vec<f64>> {
        if !(self.start.is_finite() && self.end.is_finite() && self.step.is_finite())
            || self.step <= 0.0
            || self.end < self.start
        {
            return Err(Error::InvalidArgument(format!("empty alpha range {self:?}")));
        }
        let n = ((self.end - self.start) / self.step + 1e-9).floor() as usize;
        Ok((0..=n).map(|i| self.start + i as f64 * self.step).collect())
    }
}

/// Focus score used by [`autofocus`]: Laplacian variance of the mean of the
/// refocused burst over `roi`, divided by the mean Laplacian variance of the
/// individual frames. The ratio is at most 1 and reaches it when the frames
/// agree, so the smoothing from fractional resampling cancels out.
pub fn focus_score(lf: &LightField, traj: &BurstTrajectory, roi: Rect, alpha: f64) -> Result<f64> {
    let burst = extract_burst(lf, traj, alpha)?;
    let mean = laplacian_variance(&burst.mean_frame().luminance(), 0, roi);
    let per_frame = burst
        .frames
        .iter()
        .map(|f| laplacian_variance(&f.luminance(), 0, roi))
        .sum::<f64>()
        / burst.len() as f64;
    Ok(if per_frame > 0.0 { mean / per_frame } else { 0.0 })
}

/// Contrast-detection autofocus: grid search over `range`, then a 3-point
/// parabolic refinement around the best sample.
pub fn autofocus(lf: &LightField, traj: &BurstTrajectory, roi: Rect, range: AlphaRange) -> Result<RefocusFactor> {
    if !roi.fits(lf.width(), lf.height()) {
        return Err(Error::InvalidArgument(format!(
            "roi {roi:?} outside {}x{} light field",
            lf.width(),
            lf.height()
        )));
    }
    let grid = range.grid()?;
    let scores = grid
        .iter()
        .map(|&a| focus_score(lf, traj, roi, a))
        .collect::<Result<Vec<_>>>()?;
    let best = scores
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let mut alpha = grid[best];
    if best > 0 && best + 1 < grid.len() {
        let (s0, s1, s2) = (scores[best - 1], scores[best], scores[best + 1]);
        let denom = s0 - 2.0 * s1 + s2;
        if denom < 0.0 {
            let offset = (0.5 * (s0 - s2) / denom).clamp(-0.5, 0.5);
            alpha += offset * range.step;
        }
    }
    RefocusFactor::new(alpha.clamp(range.start, range.end))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn textured(w: usize, h: usize, seed: u64) -> Image {
        let data = (0..w * h)
            .map(|i| {
                let (x, y) = ((i % w) as f64, (i / w) as f64);
                let s = seed as f64;
                0.5 + 0.25 * (0.9 * x + 0.3 * y + s).sin() + 0.2 * (0.45 * y - 0.7 * x + 2.0 * s).cos()
            })
            .collect();
        Image::from_vec(w, h, 1, data).unwrap()
    }

    #[test]
    fn nine_frame_rows() {
        assert_eq!(trajectory_rows(9, 9), vec![4, 3, 2, 1, 0, -1, -2, -3, -4]);
        assert_eq!(trajectory_rows(4, 9), vec![4, 1, -1, -4]);
        assert_eq!(trajectory_rows(1, 9), vec![0]);
        let t = sample_trajectory(9, 9, 3, false).unwrap();
        let vs: Vec<i32> = t.viewpoints().iter().map(|p| p.1).collect();
        assert_eq!(vs, vec![4, 3, 2, 1, 0, -1, -2, -3, -4]);
        assert!(t.max_jitter() <= 1);
    }

    #[test]
    fn constrained_trajectory_is_centered() {
        for seed in 0..20 {
            for n in [1, 4, 9] {
                let t = sample_trajectory(n, 9, seed, true).unwrap();
                assert_eq!(t.center_of_mass(), (0.0, 0.0));
            }
        }
    }

    #[test]
    fn trajectory_errors() {
        assert!(sample_trajectory(10, 9, 0, false).is_err());
        assert!(sample_trajectory(0, 9, 0, false).is_err());
        assert!(BurstTrajectory::new(vec![(0, 1), (0, 1)]).is_err());
    }

    #[test]
    fn trajectory_is_deterministic() {
        assert_eq!(
            sample_trajectory(9, 9, 42, false).unwrap(),
            sample_trajectory(9, 9, 42, false).unwrap()
        );
    }

    #[test]
    fn recovers_known_translation() {
        let base = textured(40, 40, 1);
        let moved = base.translated(3.0, -2.0);
        let roi = Rect::new(10, 10, 20, 20);
        let (aligned, shifts) = align_translation(&[base.clone(), moved], roi, 5).unwrap();
        assert_eq!(shifts, vec![(0, 0), (3, -2)]);
        for y in 12..28 {
            for x in 12..28 {
                assert_eq!(aligned[1].get(x, y, 0), base.get(x, y, 0));
            }
        }
    }

    #[test]
    fn aligned_frames_need_no_shift() {
        let base = textured(32, 32, 2);
        let (_, shifts) = align_translation(&[base.clone(), base.clone(), base], Rect::new(8, 8, 16, 16), 3).unwrap();
        assert!(shifts.iter().all(|&s| s == (0, 0)));
    }

    #[test]
    fn flat_roi_is_unalignable() {
        let flat = Image::filled(16, 16, 1, 0.4);
        let r = align_translation(&[flat.clone(), flat], Rect::new(2, 2, 8, 8), 2);
        assert!(matches!(r, Err(Error::Unalignable)));
    }

    #[test]
    fn alpha_range_validation() {
        assert!(AlphaRange::new(0.0, 1.0, 0.0).grid().is_err());
        assert!(AlphaRange::new(1.0, 0.0, 0.1).grid().is_err());
        assert_eq!(AlphaRange::new(0.0, 0.0, 0.25).grid().unwrap(), vec![0.0]);
        assert_eq!(AlphaRange::new(0.0, 4.0, 0.25).grid().unwrap().len(), 17);
    }
}
