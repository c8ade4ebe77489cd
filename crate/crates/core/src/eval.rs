//! SSIM metric, baselines and the evaluation harness.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::burst::{autofocus, extract_burst, sample_trajectory_with, AlphaRange, Burst};
use crate::error::{Error, Result};
use crate::image::{Image, Rect};
use crate::lightfield::{circular_aperture_mask, ground_truth, DisparityMap, LightField};
use crate::models::Pipeline;
use crate::scene::Scene;

const WINDOW: usize = 7;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

/// Per-channel SSIM maps over valid 7x7 windows. Entry `(x, y)` of a map
/// belongs to the window centered at `(x + 3, y + 3)`.
pub fn ssim_maps(a: &Image, b: &Image) -> Result<Vec<Vec<f64>>> {
    if !a.same_dims(b) {
        return Err(Error::DimensionMismatch {
            expected: vec![a.width(), a.height(), a.channels()],
            got: vec![b.width(), b.height(), b.channels()],
        });
    }
    let (w, h) = (a.width(), a.height());
    if w < WINDOW || h < WINDOW {
        return Err(Error::InvalidArgument(format!("{w}x{h} is smaller than the SSIM window")));
    }
    let (mw, mh) = (w - WINDOW + 1, h - WINDOW + 1);
    let n = (WINDOW * WINDOW) as f64;
    let mut maps = Vec::with_capacity(a.channels());
    for c in 0..a.channels() {
        let (pa, pb) = (a.plane(c), b.plane(c));
        let mut map = Vec::with_capacity(mw * mh);
        for y0 in 0..mh {
            for x0 in 0..mw {
                let window = || {
                    (y0..y0 + WINDOW).flat_map(move |y| (x0..x0 + WINDOW).map(move |x| y * w + x))
                };
                let mu_a = window().map(|i| pa[i]).sum::<f64>() / n;
                let mu_b = window().map(|i| pb[i]).sum::<f64>() / n;
                let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
                for i in window() {
                    let (da, db) = (pa[i] - mu_a, pb[i] - mu_b);
                    va += da * da;
                    vb += db * db;
                    cov += da * db;
                }
                let (va, vb, cov) = (va / n, vb / n, cov / n);
                map.push(
                    ((2.0 * mu_a * mu_b + C1) * (2.0 * cov + C2))
                        / ((mu_a * mu_a + mu_b * mu_b + C1) * (va + vb + C2)),
                );
            }
        }
        maps.push(map);
    }
    Ok(maps)
}

/// Single-scale SSIM averaged over pixels and channels.
pub fn ssim_metric(a: &Image, b: &Image) -> Result<f64> {
    let maps = ssim_maps(a, b)?;
    let count: usize = maps.iter().map(Vec::len).sum();
    Ok(maps.iter().flatten().sum::<f64>() / count as f64)
}

/// SSIM averaged over windows whose center pixel is set in `mask`
/// (row-major, image-sized). `None` when no window qualifies.
pub fn masked_ssim(a: &Image, b: &Image, mask: &[bool]) -> Result<Option<f64>> {
    let (w, h) = (a.width(), a.height());
    if mask.len() != w * h {
        return Err(Error::DimensionMismatch {
            expected: vec![w * h],
            got: vec![mask.len()],
        });
    }
    let maps = ssim_maps(a, b)?;
    let (mw, mh, r) = (w - WINDOW + 1, h - WINDOW + 1, WINDOW / 2);
    let (mut sum, mut count) = (0.0, 0usize);
    for map in &maps {
        for y in 0..mh {
            for x in 0..mw {
                if mask[(y + r) * w + x + r] {
                    sum += map[y * mw + x];
                    count += 1;
                }
            }
        }
    }
    Ok((count > 0).then(|| sum / count as f64))
}

/// Pixels within `radius` (Euclidean) of a disparity discontinuity, i.e. a
/// 4-neighbor pair whose disparities differ by more than `threshold`.
pub fn edge_band(disparity: &DisparityMap, radius: usize, threshold: f64) -> Vec<bool> {
    let (w, h) = (disparity.width(), disparity.height());
    let mut edge = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let d = disparity.get(x, y);
            if x + 1 < w && (disparity.get(x + 1, y) - d).abs() > threshold {
                edge[y * w + x] = true;
                edge[y * w + x + 1] = true;
            }
            if y + 1 < h && (disparity.get(x, y + 1) - d).abs() > threshold {
                edge[y * w + x] = true;
                edge[(y + 1) * w + x] = true;
            }
        }
    }
    let r = radius as isize;
    let mut band = vec![false; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            if !edge[y as usize * w + x as usize] {
                continue;
            }
            for dy in -r..=r {
                for dx in -r..=r {
                    let (xx, yy) = (x + dx, y + dy);
                    if dx * dx + dy * dy <= r * r && xx >= 0 && yy >= 0 && (xx as usize) < w && (yy as usize) < h {
                        band[yy as usize * w + xx as usize] = true;
                    }
                }
            }
        }
    }
    band
}

/// The all-in-focus view at `(u, v) = (0, 0)`.
pub fn center_view_baseline(lf: &LightField) -> Image {
    lf.center_view()
}

/// Depth-based disk blur. Source pixel `q` spreads over a disk of radius
/// `k * |d(q) - alpha|`; each output pixel is the normalized sum of the
/// sources whose disks cover it.
pub fn depth_blur_baseline(image: &Image, disparity: &DisparityMap, alpha: f64, k: f64) -> Result<Image> {
    let (w, h) = (image.width(), image.height());
    if disparity.width() != w || disparity.height() != h {
        return Err(Error::DimensionMismatch {
            expected: vec![w, h],
            got: vec![disparity.width(), disparity.height()],
        });
    }
    let radii: Vec<f64> = disparity.values().iter().map(|d| k * (d - alpha).abs()).collect();
    let reach = radii.iter().fold(0.0_f64, |m, &r| m.max(r)).floor() as isize;
    let mut out = Image::zeros(w, h, image.channels());
    let mut acc = vec![0.0; image.channels()];
    for y in 0..h as isize {
        for x in 0..w as isize {
            acc.fill(0.0);
            let mut count = 0.0;
            for qy in (y - reach).max(0)..=(y + reach).min(h as isize - 1) {
                for qx in (x - reach).max(0)..=(x + reach).min(w as isize - 1) {
                    let q = qy as usize * w + qx as usize;
                    let (dx, dy) = ((qx - x) as f64, (qy - y) as f64);
                    if dx * dx + dy * dy <= radii[q] * radii[q] {
                        count += 1.0;
                        for (c, a) in acc.iter_mut().enumerate() {
                            *a += image.plane(c)[q];
                        }
                    }
                }
            }
            for (c, a) in acc.iter().enumerate() {
                out.set(x as usize, y as usize, c, a / count);
            }
        }
    }
    Ok(out)
}

/// How the refocus factor of each evaluation burst is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaMode {
    Fixed(f64),
    Autofocus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub burst_len: usize,
    pub max_jitter: i32,
    pub alpha: AlphaMode,
    pub blur_k: f64,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            burst_len: 9,
            max_jitter: 1,
            alpha: AlphaMode::Autofocus,
            blur_k: 4.0,
            seed: 0,
        }
    }
}

/// Everything a renderer may look at for one scene.
pub struct EvalCase<'a> {
    pub scene: &'a Scene,
    pub burst: Burst,
    pub alpha: f64,
    pub ground_truth: Image,
}

impl<'a> EvalCase<'a> {
    /// Simulates the burst and renders the ground truth for scene `index`.
    pub fn new(scene: &'a Scene, index: usize, cfg: &EvalConfig) -> Result<Self> {
        let lf = &scene.light_field;
        let traj = sample_trajectory_with(
            cfg.burst_len,
            lf.grid_size(),
            cfg.seed.wrapping_add(index as u64),
            true,
            cfg.max_jitter,
        )?;
        let alpha = match cfg.alpha {
            AlphaMode::Fixed(a) => a,
            AlphaMode::Autofocus => {
                let roi = Rect::full(lf.width(), lf.height()).inset(lf.width().min(lf.height()) / 4);
                autofocus(lf, &traj, roi, AlphaRange::new(0.0, 4.0, 0.25))?.value()
            }
        };
        let burst = extract_burst(lf, &traj, alpha)?;
        let mask = circular_aperture_mask(lf.grid_size(), lf.half_extent() as f64)?;
        let ground_truth = ground_truth(lf, &mask, alpha)?;
        Ok(Self {
            scene,
            burst,
            alpha,
            ground_truth,
        })
    }
}

/// Produces the shallow depth-of-field image for one evaluation case.
pub trait Renderer {
    fn render(&self, case: &EvalCase<'_>) -> Result<Image>;
}

impl Renderer for Pipeline {
    fn render(&self, case: &EvalCase<'_>) -> Result<Image> {
        Ok(Pipeline::render(self, &case.burst)?.output)
    }
}

/// Returns the ground truth itself.
pub struct OracleRenderer;

impl Renderer for OracleRenderer {
    fn render(&self, case: &EvalCase<'_>) -> Result<Image> {
        Ok(case.ground_truth.clone())
    }
}

pub struct CenterViewRenderer;

impl Renderer for CenterViewRenderer {
    fn render(&self, case: &EvalCase<'_>) -> Result<Image> {
        Ok(center_view_baseline(&case.scene.light_field))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneScores {
    pub index: usize,
    pub alpha: f64,
    pub model: f64,
    pub center_view: f64,
    pub depth_blur: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub model: f64,
    pub center_view: f64,
    pub depth_blur: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: EvalConfig,
    pub scenes: Vec<SceneScores>,
    pub mean: Aggregate,
    /// Wall-clock time; left out of the JSON so reports are reproducible.
    #[serde(skip)]
    pub runtime_seconds: f64,
}

/// Scores `renderer` and both baselines on every scene.
pub fn evaluate(renderer: &dyn Renderer, scenes: &[Scene], cfg: &EvalConfig) -> Result<EvalReport> {
    if scenes.is_empty() {
        return Err(Error::InvalidArgument("no scenes to evaluate".into()));
    }
    let start = Instant::now();
    let mut rows = Vec::with_capacity(scenes.len());
    for (i, scene) in scenes.iter().enumerate() {
        let case = EvalCase::new(scene, i, cfg)?;
        let out = renderer.render(&case)?;
        let center = center_view_baseline(&scene.light_field);
        let blurred = depth_blur_baseline(&center, &scene.disparity, case.alpha, cfg.blur_k)?;
        rows.push(SceneScores {
            index: i,
            alpha: case.alpha,
            model: ssim_metric(&out, &case.ground_truth)?,
            center_view: ssim_metric(&center, &case.ground_truth)?,
            depth_blur: ssim_metric(&blurred, &case.ground_truth)?,
        });
    }
    let n = rows.len() as f64;
    let mean = Aggregate {
        model: rows.iter().map(|r| r.model).sum::<f64>() / n,
        center_view: rows.iter().map(|r| r.center_view).sum::<f64>() / n,
        depth_blur: rows.iter().map(|r| r.depth_blur).sum::<f64>() / n,
    };
    Ok(EvalReport {
        config: cfg.clone(),
        scenes: rows,
        mean,
        runtime_seconds: start.elapsed().as_secs_f64(),
    })
}
