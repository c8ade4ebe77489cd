//! Blur prediction network: a U-Net encoder shared by a defocus decoder and
//! a disparity decoder.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{conv_block, he_init, read_sidecar, sidecar_path, write_sidecar};
use crate::error::{Error, Result};
use crate::ndgrad::{ParamSet, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BpnConfig {
    pub levels: usize,
    pub base: usize,
    pub burst_len: usize,
}

impl Default for BpnConfig {
    fn default() -> Self {
        Self {
            levels: 3,
            base: 8,
            burst_len: 9,
        }
    }
}

impl BpnConfig {
    fn width(&self, level: usize) -> usize {
        self.base << level
    }

    /// Spatial sizes must be multiples of this.
    pub fn divisor(&self) -> usize {
        1 << self.levels
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bpn {
    config: BpnConfig,
    params: ParamSet,
}

/// Output vars of one BPN pass on a tape.
#[derive(Debug, Clone, Copy)]
pub struct BpnOutput {
    pub defocus: Var,
    pub disparity: Var,
}

impl Bpn {
    /// He-initialized weights, zero biases.
    pub fn new(config: BpnConfig, seed: u64) -> Result<Self> {
        if config.levels == 0 || config.base == 0 || config.burst_len == 0 {
            return Err(Error::InvalidArgument(format!("degenerate BPN config {config:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamSet::new();
        let mut conv = |p: &mut ParamSet, name: String, cin: usize, cout: usize, k: usize| {
            p.push(format!("{name}.w"), he_init(&mut rng, cout, cin, k));
            p.push(format!("{name}.b"), Tensor::zeros(&[cout]));
        };
        let mut cin = config.burst_len;
        for l in 0..config.levels {
            let c = config.width(l);
            conv(&mut p, format!("enc{l}.0"), cin, c, 3);
            conv(&mut p, format!("enc{l}.1"), c, c, 3);
            cin = c;
        }
        let mid = config.width(config.levels);
        conv(&mut p, "mid.0".into(), cin, mid, 3);
        conv(&mut p, "mid.1".into(), mid, mid, 3);
        for head in ["def", "disp"] {
            let mut below = mid;
            for l in (0..config.levels).rev() {
                let c = config.width(l);
                conv(&mut p, format!("{head}.dec{l}.0"), below + c, c, 3);
                conv(&mut p, format!("{head}.dec{l}.1"), c, c, 3);
                below = c;
            }
            conv(&mut p, format!("{head}.out"), below, 1, 1);
        }
        Ok(Self { config, params: p })
    }

    pub fn from_params(config: BpnConfig, params: ParamSet) -> Result<Self> {
        Self::new(config, 0)?.params.check_layout(&params)?;
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &BpnConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Checks a `[B, N, H, W]` input shape.
    pub fn check_input(&self, shape: &[usize]) -> Result<()> {
        let [_, n, h, w] = shape else {
            return Err(Error::shape("bpn", format!("expected [B,N,H,W], got {shape:?}")));
        };
        if *n != self.config.burst_len {
            return Err(Error::DimensionMismatch {
                expected: vec![self.config.burst_len],
                got: vec![*n],
            });
        }
        let d = self.config.divisor();
        if h % d != 0 || w % d != 0 || *h == 0 || *w == 0 {
            return Err(Error::shape("bpn", format!("{h}x{w} is not divisible by {d}")));
        }
        Ok(())
    }

    /// Records a forward pass. `vars` come from binding [`Bpn::params`].
    pub fn forward_tape(&self, tape: &mut Tape, vars: &[Var], input: Var) -> Result<BpnOutput> {
        self.check_input(tape.shape(input))?;
        let mut p = vars.iter().copied();
        let mut next = || p.next().ok_or_else(|| Error::Checkpoint("too few BPN parameters".into()));
        let mut skips = Vec::with_capacity(self.config.levels);
        let mut x = input;
        for _ in 0..self.config.levels {
            x = conv_block(tape, x, next()?, next()?, true)?;
            x = conv_block(tape, x, next()?, next()?, true)?;
            skips.push(x);
            x = tape.downsample2(x)?;
        }
        x = conv_block(tape, x, next()?, next()?, true)?;
        let bottleneck = conv_block(tape, x, next()?, next()?, true)?;

        let mut heads = [bottleneck; 2];
        for head in heads.iter_mut() {
            let mut y = bottleneck;
            for skip in skips.iter().rev() {
                let up = tape.upsample2(y)?;
                let cat = tape.concat(up, *skip, 1)?;
                y = conv_block(tape, cat, next()?, next()?, true)?;
                y = conv_block(tape, y, next()?, next()?, true)?;
            }
            *head = conv_block(tape, y, next()?, next()?, false)?;
        }
        let defocus = tape.sigmoid(heads[0])?;
        Ok(BpnOutput {
            defocus,
            disparity: heads[1],
        })
    }

    /// Inference on `[B, N, H, W]`; returns `(defocus, disparity)`, each
    /// `[B, 1, H, W]`.
    pub fn forward(&self, input: &Tensor) -> Result<(Tensor, Tensor)> {
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape, false);
        let x = tape.constant(input.clone());
        let out = self.forward_tape(&mut tape, &vars, x)?;
        Ok((tape.value(out.defocus).clone(), tape.value(out.disparity).clone()))
    }

    /// Writes the NDG1 weights to `path` and the architecture to a JSON
    /// sidecar next to it.
    pub fn save(&self, path: &Path) -> Result<()> {
        self.params.save(path)?;
        write_sidecar(&sidecar_path(path), &self.config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let config: BpnConfig = read_sidecar(&sidecar_path(path))?;
        Self::from_params(config, ParamSet::load(path)?)
    }
}

/// Free-function form of [`Bpn::forward`] for a `[1, N, H, W]` channel stack.
pub fn bpn_forward(model: &Bpn, stack: &Tensor) -> Result<(Tensor, Tensor)> {
    model.forward(stack)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Bpn {
        Bpn::new(
            BpnConfig {
                levels: 2,
                base: 4,
                burst_len: 3,
            },
            7,
        )
        .unwrap()
    }

    #[test]
    fn output_shapes_follow_input() {
        let m = Bpn::new(BpnConfig::default(), 1).unwrap();
        let x = Tensor::full(&[1, 9, 64, 64], 0.3);
        let (d, p) = m.forward(&x).unwrap();
        assert_eq!(d.shape(), &[1, 1, 64, 64]);
        assert_eq!(p.shape(), &[1, 1, 64, 64]);
        assert!(d.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn zero_input_gives_half() {
        let m = small();
        let (d, p) = m.forward(&Tensor::zeros(&[1, 3, 8, 8])).unwrap();
        assert!(d.data().iter().all(|&v| v == 0.5));
        assert!(p.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_bad_inputs() {
        let m = small();
        assert!(matches!(
            m.forward(&Tensor::zeros(&[1, 4, 8, 8])),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(m.forward(&Tensor::zeros(&[1, 3, 6, 8])), Err(Error::Shape { .. })));
    }

    #[test]
    fn deterministic_forward() {
        let m = small();
        let x = Tensor::new(vec![1, 3, 8, 8], (0..192).map(|i| (i % 17) as f64 / 17.0).collect()).unwrap();
        assert_eq!(m.forward(&x).unwrap(), m.forward(&x).unwrap());
        assert_eq!(Bpn::new(*m.config(), 7).unwrap(), m);
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bpn.ndg");
        let m = small();
        m.save(&path).unwrap();
        let back = Bpn::load(&path).unwrap();
        assert_eq!(back.config(), m.config());
        assert_eq!(back.params(), &m.params().quantized());
        let sidecar = std::fs::read_to_string(dir.path().join("bpn.json")).unwrap();
        assert!(sidecar.contains("\"levels\":2") && sidecar.contains("\"burst_len\":3"));
    }
}
