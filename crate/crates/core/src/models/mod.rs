//! The blur prediction network, the multi-scale merging network and the
//! full per-channel rendering pipeline.

mod bpn;
mod mmn;
mod pyramid;

use std::path::{Path, PathBuf};

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::de::DeserializeOwned;
use serde::Serialize;

pub use bpn::{bpn_forward, Bpn, BpnConfig, BpnOutput};
pub use mmn::{mmn_features, mmn_forward, Mmn, MmnConfig, MMN_FEATURES};
pub use pyramid::{merge, merge_tape, multiscale_bpn, multiscale_tape, PyramidVars, ScalePyramid, NUM_SCALES};

use crate::burst::Burst;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::ndgrad::{Tape, Tensor, Var, LEAKY_SLOPE};

fn he_init(rng: &mut ChaCha8Rng, cout: usize, cin: usize, k: usize) -> Tensor {
    let std = (2.0 / (cin * k * k) as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("positive std");
    let data = (0..cout * cin * k * k).map(|_| normal.sample(rng)).collect();
    Tensor::new(vec![cout, cin, k, k], data).expect("consistent shape")
}

/// Same-size conv plus bias, optionally followed by a leaky ReLU.
fn conv_block(tape: &mut Tape, x: Var, w: Var, b: Var, activate: bool) -> Result<Var> {
    let k = tape.shape(w).get(2).copied().unwrap_or(1);
    let y = tape.conv2d(x, w, 1, k / 2)?;
    let y = tape.add_bias(y, b)?;
    if activate {
        tape.leaky_relu(y, LEAKY_SLOPE)
    } else {
        Ok(y)
    }
}

/// `model.ndg` keeps its architecture in `model.json`.
pub fn sidecar_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("json")
}

fn write_sidecar<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string(value)?).map_err(|e| Error::io(path, e))
}

fn read_sidecar<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// `[1, N, H, W]` stack of channel `c` across the burst.
pub fn channel_stack_tensor(burst: &Burst, c: usize) -> Result<Tensor> {
    if c >= burst.channels() {
        return Err(Error::ChannelOutOfRange {
            channel: c,
            channels: burst.channels(),
        });
    }
    Tensor::new(
        vec![1, burst.len(), burst.height(), burst.width()],
        burst.channel_stack(c),
    )
}

/// Single-channel `[1, 1, H, W]` tensor as an image.
pub fn tensor_to_image(t: &Tensor) -> Result<Image> {
    match t.shape() {
        [1, 1, h, w] => Image::from_vec(*w, *h, 1, t.data().to_vec()),
        s => Err(Error::shape("tensor_to_image", format!("expected [1,1,H,W], got {s:?}"))),
    }
}

pub fn image_to_tensor(img: &Image) -> Tensor {
    Tensor::new(
        vec![1, img.channels(), img.height(), img.width()],
        img.data().to_vec(),
    )
    .expect("image layout matches")
}

/// Everything one pipeline run produces.
#[derive(Debug, Clone)]
pub struct Rendering {
    pub output: Image,
    pub weights: Tensor,
    pub pyramids: Vec<ScalePyramid>,
}

impl Rendering {
    /// Recombines the full-scale defocus images of every channel.
    pub fn full_scale(&self) -> Result<Image> {
        self.scale(0)
    }

    pub fn scale(&self, s: usize) -> Result<Image> {
        let planes = self
            .pyramids
            .iter()
            .map(|p| tensor_to_image(&p.defocus[s]))
            .collect::<Result<Vec<_>>>()?;
        Image::from_planes(&planes)
    }
}

/// Trained BPN and MMN together.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub bpn: Bpn,
    pub mmn: Mmn,
}

impl Pipeline {
    pub fn new(bpn: Bpn, mmn: Mmn) -> Self {
        Self { bpn, mmn }
    }

    /// BPN pyramid for every color channel of `burst`.
    pub fn pyramids(&self, burst: &Burst) -> Result<Vec<ScalePyramid>> {
        (0..burst.channels())
            .map(|c| multiscale_bpn(&self.bpn, &channel_stack_tensor(burst, c)?))
            .collect()
    }

    /// Merges precomputed pyramids with weights predicted by the MMN.
    pub fn merge_pyramids(&self, pyramids: Vec<ScalePyramid>) -> Result<Rendering> {
        let weights = self.mmn.forward(&mmn_features(&pyramids)?)?;
        render_with_weights(pyramids, weights)
    }

    /// Multi-scale BPN per channel, shared merge weights, RGB recombination.
    pub fn render(&self, burst: &Burst) -> Result<Rendering> {
        self.merge_pyramids(self.pyramids(burst)?)
    }
}

/// Merges each channel's pyramid with the same `[1, 3, H, W]` weights.
pub fn render_with_weights(pyramids: Vec<ScalePyramid>, weights: Tensor) -> Result<Rendering> {
    let planes = pyramids
        .iter()
        .map(|p| tensor_to_image(&merge(p, &weights)?))
        .collect::<Result<Vec<_>>>()?;
    Ok(Rendering {
        output: Image::from_planes(&planes)?,
        weights,
        pyramids,
    })
}
