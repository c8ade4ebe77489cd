//! Losses, augmented sample generation and the two training stages.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::burst::{extract_burst, sample_trajectory_with, Burst, BurstTrajectory};
use crate::error::{Error, Result};
use crate::eval::ssim_metric;
use crate::image::Image;
use crate::lightfield::{bias_disparity, circular_aperture_mask, ground_truth, DisparityMap, LightField};
use crate::models::{
    channel_stack_tensor, merge_tape, mmn_features, multiscale_bpn, render_with_weights, Bpn, Mmn, ScalePyramid,
};
use crate::ndgrad::{adam_step, ms_ssim, AdamState, Tape, Tensor, Var, SSIM_WINDOW};
use crate::scene::Scene;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lambda_c: f64,
    pub lambda_d: f64,
    pub alpha_range: (f64, f64),
    pub invert_prob: f64,
    pub scale_prob: f64,
    pub lr: f64,
    /// Scenes per step; each contributes all of its color channels.
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
    pub burst_len: usize,
    pub max_jitter: i32,
    pub eval_interval: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda_c: 0.5,
            lambda_d: 0.1,
            alpha_range: (0.0, 4.0),
            invert_prob: 0.5,
            scale_prob: 0.5,
            lr: 1e-3,
            batch_size: 1,
            steps: 1000,
            seed: 0,
            burst_len: 9,
            max_jitter: 1,
            eval_interval: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if !(self.lambda_c >= 0.0 && self.lambda_d >= 0.0) {
            return bad(format!("loss weights must be >= 0 ({}, {})", self.lambda_c, self.lambda_d));
        }
        let (lo, hi) = self.alpha_range;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return bad(format!("bad alpha range {lo}..{hi}"));
        }
        for p in [self.invert_prob, self.scale_prob] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("probability {p} outside [0,1]"));
            }
        }
        if !(self.lr > 0.0) || self.batch_size == 0 || self.eval_interval == 0 {
            return bad("lr, batch_size and eval_interval must be positive".into());
        }
        if ![4, 9].contains(&self.burst_len) {
            return bad(format!("burst length must be 4 or 9, got {}", self.burst_len));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// One augmented training example.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub burst: Burst,
    pub ground_truth: Image,
    /// Scene disparity minus alpha.
    pub disparity: DisparityMap,
    pub alpha: f64,
    pub inverted: bool,
    pub downscaled: bool,
}

impl TrainSample {
    /// `[C, N, H, W]` bursts with every color channel as a batch entry.
    pub fn burst_tensor(&self) -> Result<Tensor> {
        let (c, n, h, w) = (self.burst.channels(), self.burst.len(), self.burst.height(), self.burst.width());
        let mut data = Vec::with_capacity(c * n * h * w);
        for ch in 0..c {
            data.extend_from_slice(channel_stack_tensor(&self.burst, ch)?.data());
        }
        Tensor::new(vec![c, n, h, w], data)
    }

    /// `[C, 1, H, W]` ground truth.
    pub fn gt_tensor(&self) -> Tensor {
        let g = &self.ground_truth;
        Tensor::new(vec![g.channels(), 1, g.height(), g.width()], g.data().to_vec()).expect("image layout")
    }

    /// `[C, 1, H, W]` disparity target, the same map for every channel.
    pub fn disparity_tensor(&self) -> Tensor {
        let c = self.ground_truth.channels();
        let d = self.disparity.values();
        let data = (0..c).flat_map(|_| d.iter().copied()).collect();
        Tensor::new(vec![c, 1, self.disparity.height(), self.disparity.width()], data).expect("map layout")
    }
}

/// Draws alpha, a centered trajectory and the optional inversion and 2x
/// downscale, then renders burst and ground truth from the same light field.
pub fn make_sample(lf: &LightField, disparity: &DisparityMap, cfg: &TrainConfig, seed: u64) -> Result<TrainSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = cfg.alpha_range;
    let alpha = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
    let inverted = rng.gen_bool(cfg.invert_prob);
    let downscaled = rng.gen_bool(cfg.scale_prob);
    let traj = sample_trajectory_with(cfg.burst_len, lf.grid_size(), rng.gen(), true, cfg.max_jitter)?;
    make_sample_with(lf, disparity, &traj, alpha, inverted, downscaled)
}

/// [`make_sample`] with every random choice fixed by the caller.
pub fn make_sample_with(
    lf: &LightField,
    disparity: &DisparityMap,
    traj: &BurstTrajectory,
    alpha: f64,
    inverted: bool,
    downscaled: bool,
) -> Result<TrainSample> {
    let mut burst = extract_burst(lf, traj, alpha)?;
    let mask = circular_aperture_mask(lf.grid_size(), lf.half_extent() as f64)?;
    let mut gt = ground_truth(lf, &mask, alpha)?;
    let mut disp = bias_disparity(disparity, alpha);
    if inverted {
        burst = burst.map_frames(|f| Ok(f.inverted()))?;
        gt = gt.inverted();
    }
    if downscaled {
        burst = burst.map_frames(Image::downsample2)?;
        gt = gt.downsample2()?;
        disp = disp.downsample2()?;
    }
    let (w, h) = (gt.width(), gt.height());
    if w < 2 * SSIM_WINDOW || h < 2 * SSIM_WINDOW {
        return Err(Error::InvalidArgument(format!("sample of {w}x{h} is too small to train on")));
    }
    Ok(TrainSample {
        burst,
        ground_truth: gt,
        disparity: disp,
        alpha,
        inverted,
        downscaled,
    })
}

/// `-ms_ssim(def, gt) + lambda_c * |def - gt|_1 + lambda_d * |disp - disp_gt|_1`,
/// with L1 terms as means.
pub fn bpn_loss(tape: &mut Tape, def: Var, gt: Var, disp: Var, disp_gt: Var, cfg: &TrainConfig) -> Result<Var> {
    let s = ms_ssim(tape, def, gt)?;
    let neg = tape.neg(s)?;
    let lc = tape.l1_loss(def, gt)?;
    let lc = tape.mul_scalar(lc, cfg.lambda_c)?;
    let ld = tape.l1_loss(disp, disp_gt)?;
    let ld = tape.mul_scalar(ld, cfg.lambda_d)?;
    let l = tape.add(neg, lc)?;
    tape.add(l, ld)
}

/// `-ms_ssim(out, gt)`.
pub fn mmn_loss(tape: &mut Tape, out: Var, gt: Var) -> Result<Var> {
    let s = ms_ssim(tape, out, gt)?;
    tape.neg(s)
}

/// One row of a loss curve. `val_ssim` is set on evaluation steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: usize,
    pub loss: f64,
    pub val_ssim: Option<f64>,
}

pub fn curve_csv(curve: &[CurvePoint]) -> String {
    let mut s = String::from("step,loss,val_ssim\n");
    for p in curve {
        let v = p.val_ssim.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(s, "{},{},{}", p.step, p.loss, v);
    }
    s
}

#[derive(Debug, Clone)]
pub struct TrainRun<M> {
    /// Best model by validation SSIM (the final one without validation).
    pub model: M,
    pub best_step: usize,
    pub curve: Vec<CurvePoint>,
}

fn sample_seed(seed: u64, step: usize, slot: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((step as u64) << 16) | slot as u64);
    rng.gen()
}

fn validation_samples(scenes: &[Scene], cfg: &TrainConfig) -> Result<Vec<TrainSample>> {
    let plain = TrainConfig {
        invert_prob: 0.0,
        scale_prob: 0.0,
        ..cfg.clone()
    };
    scenes
        .iter()
        .enumerate()
        .map(|(i, s)| make_sample(&s.light_field, &s.disparity, &plain, sample_seed(cfg.seed ^ 0x5eed, 0, i)))
        .collect()
}

fn bpn_val_ssim(model: &Bpn, samples: &[TrainSample]) -> Result<f64> {
    let mut total = 0.0;
    for s in samples {
        let (def, _) = model.forward(&s.burst_tensor()?)?;
        let [c, 1, h, w] = def.shape()[..] else { unreachable!("bpn output is [B,1,H,W]") };
        let img = Image::from_vec(w, h, c, def.into_data())?;
        total += ssim_metric(&img, &s.ground_truth)?;
    }
    Ok(total / samples.len() as f64)
}

fn save_progress(out: Option<&Path>, params: &dyn Fn(&Path) -> Result<()>, curve: &[CurvePoint]) -> Result<()> {
    if let Some(path) = out {
        params(path)?;
        let csv = path.with_extension("csv");
        std::fs::write(&csv, curve_csv(curve)).map_err(|e| Error::io(&csv, e))?;
    }
    Ok(())
}

fn check_loss(step: usize, loss: f64) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Diverged { step, loss })
    }
}

/// Adam on the BPN loss. Every `eval_interval` steps the model is scored on
/// `validation`; the best one is kept and, with `out`, written there along
/// with the loss curve as CSV.
pub fn train_bpn(
    model: Bpn,
    dataset: &[Scene],
    validation: &[Scene],
    cfg: &TrainConfig,
    out: Option<&Path>,
) -> Result<TrainRun<Bpn>> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    if model.config().burst_len != cfg.burst_len {
        return Err(Error::DimensionMismatch {
            expected: vec![model.config().burst_len],
            got: vec![cfg.burst_len],
        });
    }
    let val = validation_samples(validation, cfg)?;
    let mut model = model;
    let mut adam = AdamState::new(model.params().tensors(), cfg.lr);
    let mut pick = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut curve = Vec::with_capacity(cfg.steps);
    let mut best = (f64::NEG_INFINITY, 0usize, model.clone());

    for step in 1..=cfg.steps {
        let mut grads: Option<Vec<Tensor>> = None;
        let mut loss_sum = 0.0;
        for slot in 0..cfg.batch_size {
            let scene = &dataset[pick.gen_range(0..dataset.len())];
            let sample = make_sample(&scene.light_field, &scene.disparity, cfg, sample_seed(cfg.seed, step, slot))?;
            let (loss, g) = bpn_gradients(&model, &sample, cfg)?;
            check_loss(step, loss)?;
            loss_sum += loss;
            accumulate(&mut grads, g);
        }
        let mut grads = grads.expect("batch is nonempty");
        scale_all(&mut grads, 1.0 / cfg.batch_size as f64);
        adam_step(model.params_mut().tensors_mut(), &grads, &mut adam)?;

        let mut point = CurvePoint {
            step,
            loss: loss_sum / cfg.batch_size as f64,
            val_ssim: None,
        };
        if step % cfg.eval_interval == 0 || step == cfg.steps {
            if !val.is_empty() {
                let v = bpn_val_ssim(&model, &val)?;
                point.val_ssim = Some(v);
                if v > best.0 {
                    best = (v, step, model.clone());
                }
            }
            curve.push(point);
            save_progress(out, &|p| best_or_current(&best.2, &model, val.is_empty()).save(p), &curve)?;
        } else {
            curve.push(point);
        }
    }
    if val.is_empty() {
        return Ok(TrainRun {
            model,
            best_step: cfg.steps,
            curve,
        });
    }
    Ok(TrainRun {
        model: best.2,
        best_step: best.1,
        curve,
    })
}

fn best_or_current<'a, M>(best: &'a M, current: &'a M, no_validation: bool) -> &'a M {
    if no_validation {
        current
    } else {
        best
    }
}

/// Loss and parameter gradients of one sample, all color channels batched.
pub fn bpn_gradients(model: &Bpn, sample: &TrainSample, cfg: &TrainConfig) -> Result<(f64, Vec<Tensor>)> {
    let mut tape = Tape::new().with_finite_check();
    let vars = model.params().bind(&mut tape, true);
    let x = tape.constant(sample.burst_tensor()?);
    let out = model.forward_tape(&mut tape, &vars, x)?;
    let gt = tape.constant(sample.gt_tensor());
    let dgt = tape.constant(sample.disparity_tensor());
    let loss = bpn_loss(&mut tape, out.defocus, gt, out.disparity, dgt, cfg)?;
    let grads = tape.backward(loss)?;
    Ok((tape.value(loss).item(), model.params().collect_grads(&grads, &vars)))
}

fn accumulate(acc: &mut Option<Vec<Tensor>>, g: Vec<Tensor>) {
    match acc {
        Some(a) => {
            for (x, y) in a.iter_mut().zip(&g) {
                for (p, q) in x.data_mut().iter_mut().zip(y.data()) {
                    *p += q;
                }
            }
        }
        None => *acc = Some(g),
    }
}

fn scale_all(grads: &mut [Tensor], k: f64) {
    for g in grads {
        g.data_mut().iter_mut().for_each(|v| *v *= k);
    }
}

/// Frozen-BPN outputs for one augmented scene, ready for merging.
#[derive(Debug, Clone)]
pub struct MergeSample {
    pub pyramids: Vec<ScalePyramid>,
    pub features: Tensor,
    pub ground_truth: Image,
}

impl MergeSample {
    pub fn new(bpn: &Bpn, sample: &TrainSample) -> Result<Self> {
        let pyramids = (0..sample.burst.channels())
            .map(|c| multiscale_bpn(bpn, &channel_stack_tensor(&sample.burst, c)?))
            .collect::<Result<Vec<_>>>()?;
        let features = mmn_features(&pyramids)?;
        Ok(Self {
            pyramids,
            features,
            ground_truth: sample.ground_truth.clone(),
        })
    }
}

/// Loss and MMN gradients for one merge sample; the BPN outputs enter as
/// constants.
pub fn mmn_gradients(mmn: &Mmn, sample: &MergeSample) -> Result<(f64, Vec<Tensor>)> {
    let mut tape = Tape::new().with_finite_check();
    let vars = mmn.params().bind(&mut tape, true);
    let f = tape.constant(sample.features.clone());
    let w = mmn.forward_tape(&mut tape, &vars, f)?;
    let mut merged: Option<Var> = None;
    for p in &sample.pyramids {
        let defs = p.defocus.clone().map(|t| tape.constant(t));
        let m = merge_tape(&mut tape, defs, w)?;
        merged = Some(match merged {
            Some(prev) => tape.concat(prev, m, 0)?,
            None => m,
        });
    }
    let merged = merged.ok_or_else(|| Error::InvalidArgument("merge sample has no channels".into()))?;
    let g = &sample.ground_truth;
    let gt = tape.constant(Tensor::new(vec![g.channels(), 1, g.height(), g.width()], g.data().to_vec())?);
    let loss = mmn_loss(&mut tape, merged, gt)?;
    let grads = tape.backward(loss)?;
    Ok((tape.value(loss).item(), mmn.params().collect_grads(&grads, &vars)))
}

fn mmn_val_ssim(mmn: &Mmn, samples: &[MergeSample]) -> Result<f64> {
    let mut total = 0.0;
    for s in samples {
        let r = render_with_weights(s.pyramids.clone(), mmn.forward(&s.features)?)?;
        total += ssim_metric(&r.output, &s.ground_truth)?;
    }
    Ok(total / samples.len() as f64)
}

/// Builds the merge pool: one augmented sample per scene, passed through
/// the frozen BPN once.
pub fn merge_pool(bpn: &Bpn, scenes: &[Scene], cfg: &TrainConfig, stream: usize) -> Result<Vec<MergeSample>> {
    scenes
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let sample = make_sample(&s.light_field, &s.disparity, cfg, sample_seed(cfg.seed, stream, i))?;
            MergeSample::new(bpn, &sample)
        })
        .collect()
}

/// Adam on the MMN loss with the BPN frozen. The BPN is only read.
pub fn train_mmn(
    bpn: &Bpn,
    mmn: Mmn,
    dataset: &[Scene],
    validation: &[Scene],
    cfg: &TrainConfig,
    out: Option<&Path>,
) -> Result<TrainRun<Mmn>> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    let pool = merge_pool(bpn, dataset, cfg, usize::MAX >> 16)?;
    let val_cfg = TrainConfig {
        invert_prob: 0.0,
        scale_prob: 0.0,
        seed: cfg.seed ^ 0x5eed,
        ..cfg.clone()
    };
    let val = merge_pool(bpn, validation, &val_cfg, 0)?;
    train_mmn_on(mmn, &pool, &val, cfg, out)
}

/// [`train_mmn`] on precomputed merge samples.
pub fn train_mmn_on(
    mmn: Mmn,
    pool: &[MergeSample],
    validation: &[MergeSample],
    cfg: &TrainConfig,
    out: Option<&Path>,
) -> Result<TrainRun<Mmn>> {
    if pool.is_empty() {
        return Err(Error::InvalidArgument("merge pool is empty".into()));
    }
    let mut mmn = mmn;
    let mut adam = AdamState::new(mmn.params().tensors(), cfg.lr);
    let mut pick = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut curve = Vec::with_capacity(cfg.steps);
    let mut best = (f64::NEG_INFINITY, 0usize, mmn.clone());
    for step in 1..=cfg.steps {
        let mut grads: Option<Vec<Tensor>> = None;
        let mut loss_sum = 0.0;
        for _ in 0..cfg.batch_size {
            let (loss, g) = mmn_gradients(&mmn, &pool[pick.gen_range(0..pool.len())])?;
            check_loss(step, loss)?;
            loss_sum += loss;
            accumulate(&mut grads, g);
        }
        let mut grads = grads.expect("batch is nonempty");
        scale_all(&mut grads, 1.0 / cfg.batch_size as f64);
        adam_step(mmn.params_mut().tensors_mut(), &grads, &mut adam)?;
        let mut point = CurvePoint {
            step,
            loss: loss_sum / cfg.batch_size as f64,
            val_ssim: None,
        };
        if step % cfg.eval_interval == 0 || step == cfg.steps {
            if !validation.is_empty() {
                let v = mmn_val_ssim(&mmn, validation)?;
                point.val_ssim = Some(v);
                if v > best.0 {
                    best = (v, step, mmn.clone());
                }
            }
            curve.push(point);
            save_progress(out, &|p| best_or_current(&best.2, &mmn, validation.is_empty()).save(p), &curve)?;
        } else {
            curve.push(point);
        }
    }
    if validation.is_empty() {
        return Ok(TrainRun {
            model: mmn,
            best_step: cfg.steps,
            curve,
        });
    }
    Ok(TrainRun {
        model: best.2,
        best_step: best.1,
        curve,
    })
}
