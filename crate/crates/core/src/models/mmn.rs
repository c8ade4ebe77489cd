//! Multi-scale merging network: per-pixel blending weights over the three
//! BPN scales, predicted from disparity cues.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::pyramid::{ScalePyramid, NUM_SCALES};
use super::{conv_block, he_init, read_sidecar, sidecar_path, write_sidecar};
use crate::error::{Error, Result};
use crate::ndgrad::{ParamSet, Tape, Tensor, Var};

/// Two feature planes per scale.
pub const MMN_FEATURES: usize = 2 * NUM_SCALES;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MmnConfig {
    pub hidden: usize,
}

impl Default for MmnConfig {
    fn default() -> Self {
        Self { hidden: 16 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mmn {
    config: MmnConfig,
    params: ParamSet,
}

impl Mmn {
    /// Three 3x3 conv layers; the last one starts at zero so the initial
    /// weights are uniform.
    pub fn new(config: MmnConfig, seed: u64) -> Result<Self> {
        if config.hidden == 0 {
            return Err(Error::InvalidArgument("MMN needs hidden channels".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = config.hidden;
        let mut p = ParamSet::new();
        p.push("l0.w", he_init(&mut rng, h, MMN_FEATURES, 3));
        p.push("l0.b", Tensor::zeros(&[h]));
        p.push("l1.w", he_init(&mut rng, h, h, 3));
        p.push("l1.b", Tensor::zeros(&[h]));
        p.push("l2.w", Tensor::zeros(&[NUM_SCALES, h, 3, 3]));
        p.push("l2.b", Tensor::zeros(&[NUM_SCALES]));
        Ok(Self { config, params: p })
    }

    pub fn from_params(config: MmnConfig, params: ParamSet) -> Result<Self> {
        Self::new(config, 0)?.params.check_layout(&params)?;
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &MmnConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Records the forward pass; returns weights `[B, 3, H, W]` after a
    /// softmax over the scale axis.
    pub fn forward_tape(&self, tape: &mut Tape, vars: &[Var], features: Var) -> Result<Var> {
        let shape = tape.shape(features);
        if shape.len() != 4 || shape[1] != MMN_FEATURES {
            return Err(Error::shape(
                "mmn",
                format!("expected [B,{MMN_FEATURES},H,W] features, got {shape:?}"),
            ));
        }
        let [w0, b0, w1, b1, w2, b2] = vars else {
            return Err(Error::Checkpoint(format!("MMN expects 6 parameters, got {}", vars.len())));
        };
        let x = conv_block(tape, features, *w0, *b0, true)?;
        let x = conv_block(tape, x, *w1, *b1, true)?;
        let logits = conv_block(tape, x, *w2, *b2, false)?;
        tape.softmax(logits, 1)
    }

    pub fn forward(&self, features: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape, false);
        let f = tape.constant(features.clone());
        let w = self.forward_tape(&mut tape, &vars, f)?;
        Ok(tape.value(w).clone())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.params.save(path)?;
        write_sidecar(&sidecar_path(path), &self.config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let config: MmnConfig = read_sidecar(&sidecar_path(path))?;
        Self::from_params(config, ParamSet::load(path)?)
    }
}

pub fn mmn_forward(model: &Mmn, features: &Tensor) -> Result<Tensor> {
    model.forward(features)
}

/// Stacks `[A_1, B_1, A_1/2, B_1/2, A_1/4, B_1/4]` where, per scale, `A` is
/// the mean of `|disparity|` over color channels and `B` its population
/// variance across channels.
pub fn mmn_features(pyramids: &[ScalePyramid]) -> Result<Tensor> {
    if pyramids.len() != 3 {
        return Err(Error::InvalidArgument(format!(
            "merging features need pyramids for 3 color channels, got {}",
            pyramids.len()
        )));
    }
    let shape = pyramids[0].disparity[0].shape().to_vec();
    let [1, 1, h, w] = shape[..] else {
        return Err(Error::shape("mmn_features", format!("expected [1,1,H,W], got {shape:?}")));
    };
    for p in pyramids {
        for t in p.disparity.iter() {
            if t.shape() != &shape[..] {
                return Err(Error::shape("mmn_features", format!("{:?} vs {shape:?}", t.shape())));
            }
        }
    }
    let n = h * w;
    let k = pyramids.len() as f64;
    let mut out = vec![0.0; MMN_FEATURES * n];
    for s in 0..NUM_SCALES {
        let planes: Vec<&[f64]> = pyramids.iter().map(|p| p.disparity[s].data()).collect();
        let (a_out, b_out) = out[2 * s * n..(2 * s + 2) * n].split_at_mut(n);
        for i in 0..n {
            let mean = planes.iter().map(|d| d[i]).sum::<f64>() / k;
            a_out[i] = planes.iter().map(|d| d[i].abs()).sum::<f64>() / k;
            b_out[i] = planes.iter().map(|d| (d[i] - mean).powi(2)).sum::<f64>() / k;
        }
    }
    Tensor::new(vec![1, MMN_FEATURES, h, w], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pyramid_with(disp: [f64; 3], h: usize, w: usize) -> ScalePyramid {
        ScalePyramid {
            defocus: std::array::from_fn(|_| Tensor::zeros(&[1, 1, h, w])),
            disparity: std::array::from_fn(|s| Tensor::full(&[1, 1, h, w], disp[s])),
        }
    }

    #[test]
    fn feature_arithmetic() {
        let p = [
            pyramid_with([1.0, 0.0, 0.0], 2, 2),
            pyramid_with([-1.0, 0.0, 0.0], 2, 2),
            pyramid_with([0.0, 0.0, 0.0], 2, 2),
        ];
        let f = mmn_features(&p).unwrap();
        assert_eq!(f.shape(), &[1, 6, 2, 2]);
        assert!((f.data()[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((f.data()[4] - 2.0 / 3.0).abs() < 1e-15);
        assert!(f.data()[8..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identical_channels_have_zero_variance() {
        let p = [
            pyramid_with([2.5, 1.0, -0.5], 3, 2),
            pyramid_with([2.5, 1.0, -0.5], 3, 2),
            pyramid_with([2.5, 1.0, -0.5], 3, 2),
        ];
        let f = mmn_features(&p).unwrap();
        for s in 0..3 {
            assert!(f.data()[(2 * s + 1) * 6..(2 * s + 2) * 6].iter().all(|&v| v == 0.0));
        }
        assert!(mmn_features(&p[..2]).is_err());
    }

    #[test]
    fn fresh_model_is_uniform() {
        let m = Mmn::new(MmnConfig::default(), 3).unwrap();
        let f = Tensor::new(vec![1, 6, 4, 4], (0..96).map(|i| i as f64 * 0.1).collect()).unwrap();
        let w = m.forward(&f).unwrap();
        assert_eq!(w.shape(), &[1, 3, 4, 4]);
        assert!(w.data().iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
        assert!(m.forward(&Tensor::zeros(&[1, 5, 4, 4])).is_err());
    }
}
