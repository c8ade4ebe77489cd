//! Multi-scale BPN inference and the weighted merge.

use super::bpn::Bpn;
use crate::error::{Error, Result};
use crate::ndgrad::{Tape, Tensor, Var};

/// Scales `1, 1/2, 1/4`.
pub const NUM_SCALES: usize = 3;

/// BPN outputs at every scale, resampled to full resolution. Disparities are
/// in full-resolution pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalePyramid {
    pub defocus: [Tensor; NUM_SCALES],
    pub disparity: [Tensor; NUM_SCALES],
}

#[derive(Debug, Clone, Copy)]
pub struct PyramidVars {
    pub defocus: [Var; NUM_SCALES],
    pub disparity: [Var; NUM_SCALES],
}

/// Records the BPN at all three scales of `input [B, N, H, W]`.
pub fn multiscale_tape(model: &Bpn, tape: &mut Tape, vars: &[Var], input: Var) -> Result<PyramidVars> {
    let shape = tape.shape(input).to_vec();
    model.check_input(&shape)?;
    let d = model.config().divisor() << (NUM_SCALES - 1);
    if shape[2] % d != 0 || shape[3] % d != 0 {
        return Err(Error::shape(
            "multiscale_bpn",
            format!("{}x{} is not divisible by {d}", shape[2], shape[3]),
        ));
    }
    let mut defocus = [input; NUM_SCALES];
    let mut disparity = [input; NUM_SCALES];
    let mut x = input;
    for s in 0..NUM_SCALES {
        if s > 0 {
            x = tape.downsample2(x)?;
        }
        let out = model.forward_tape(tape, vars, x)?;
        let (mut def, mut disp) = (out.defocus, out.disparity);
        for _ in 0..s {
            def = tape.upsample2(def)?;
            disp = tape.upsample2(disp)?;
        }
        if s > 0 {
            disp = tape.mul_scalar(disp, (1u32 << s) as f64)?;
        }
        defocus[s] = def;
        disparity[s] = disp;
    }
    Ok(PyramidVars { defocus, disparity })
}

/// Runs the BPN on one color channel's burst stack `[1, N, H, W]` at full,
/// half and quarter resolution.
pub fn multiscale_bpn(model: &Bpn, stack: &Tensor) -> Result<ScalePyramid> {
    let mut tape = Tape::new();
    let vars = model.params().bind(&mut tape, false);
    let x = tape.constant(stack.clone());
    let pv = multiscale_tape(model, &mut tape, &vars, x)?;
    Ok(ScalePyramid {
        defocus: pv.defocus.map(|v| tape.value(v).clone()),
        disparity: pv.disparity.map(|v| tape.value(v).clone()),
    })
}

/// `sum_s W_s * I_def_s` per pixel. `weights` is `[1, 3, H, W]`.
pub fn merge(pyramid: &ScalePyramid, weights: &Tensor) -> Result<Tensor> {
    let shape = pyramid.defocus[0].shape();
    let [b, 1, h, w] = shape[..] else {
        return Err(Error::shape("merge", format!("defocus shape {shape:?}")));
    };
    if weights.shape() != [b, NUM_SCALES, h, w] || pyramid.defocus.iter().any(|t| t.shape() != shape) {
        return Err(Error::shape(
            "merge",
            format!("weights {:?} for defocus {shape:?}", weights.shape()),
        ));
    }
    let n = h * w;
    let mut out = vec![0.0; b * n];
    for bi in 0..b {
        let dst = &mut out[bi * n..(bi + 1) * n];
        for (s, def) in pyramid.defocus.iter().enumerate() {
            let ws = &weights.data()[(bi * NUM_SCALES + s) * n..][..n];
            let ds = &def.data()[bi * n..][..n];
            for ((o, wv), dv) in dst.iter_mut().zip(ws).zip(ds) {
                *o += wv * dv;
            }
        }
    }
    Tensor::new(vec![b, 1, h, w], out)
}

/// Differentiable form of [`merge`].
pub fn merge_tape(tape: &mut Tape, defocus: [Var; NUM_SCALES], weights: Var) -> Result<Var> {
    let mut stack = defocus[0];
    for &d in &defocus[1..] {
        stack = tape.concat(stack, d, 1)?;
    }
    let weighted = tape.mul(weights, stack)?;
    tape.sum_axis(weighted, 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::BpnConfig;

    fn pyramid(seed: u64) -> ScalePyramid {
        let t = |k: u64| {
            Tensor::new(
                vec![1, 1, 3, 4],
                (0..12).map(|i| ((i as u64 * 31 + k * 7 + seed) % 13) as f64 / 13.0).collect(),
            )
            .unwrap()
        };
        ScalePyramid {
            defocus: [t(0), t(1), t(2)],
            disparity: [t(3), t(4), t(5)],
        }
    }

    #[test]
    fn one_hot_selects_scale() {
        let p = pyramid(1);
        for s in 0..3 {
            let mut w = vec![0.0; 36];
            w[s * 12..(s + 1) * 12].fill(1.0);
            let out = merge(&p, &Tensor::new(vec![1, 3, 3, 4], w).unwrap()).unwrap();
            assert_eq!(out.data(), p.defocus[s].data());
        }
    }

    #[test]
    fn uniform_is_mean() {
        let p = pyramid(2);
        let out = merge(&p, &Tensor::full(&[1, 3, 3, 4], 1.0 / 3.0)).unwrap();
        for i in 0..12 {
            let m = (p.defocus[0].data()[i] + p.defocus[1].data()[i] + p.defocus[2].data()[i]) / 3.0;
            assert!((out.data()[i] - m).abs() < 1e-15);
        }
    }

    #[test]
    fn tape_merge_matches_plain() {
        let p = pyramid(3);
        let w = Tensor::new(vec![1, 3, 3, 4], (0..36).map(|i| (i % 5) as f64 * 0.2).collect()).unwrap();
        let mut tape = Tape::new();
        let defs = p.defocus.clone().map(|t| tape.constant(t));
        let wv = tape.constant(w.clone());
        let m = merge_tape(&mut tape, defs, wv).unwrap();
        assert_eq!(tape.value(m), &merge(&p, &w).unwrap());
        assert!(merge(&p, &Tensor::zeros(&[1, 2, 3, 4])).is_err());
    }

    #[test]
    fn pyramid_of_constant_burst_is_constant_inside() {
        let m = Bpn::new(
            BpnConfig {
                levels: 1,
                base: 4,
                burst_len: 2,
            },
            5,
        )
        .unwrap();
        // zero padding only reaches ~10 px (at quarter scale) into the frame
        let p = multiscale_bpn(&m, &Tensor::full(&[1, 2, 128, 128], 0.6)).unwrap();
        for s in 0..3 {
            let d = &p.defocus[s];
            assert_eq!(d.shape(), &[1, 1, 128, 128]);
            let v0 = d.data()[64 * 128 + 64];
            for y in 48..80 {
                for x in 48..80 {
                    assert!((d.data()[y * 128 + x] - v0).abs() < 1e-12);
                }
            }
        }
        assert!(multiscale_bpn(&m, &Tensor::zeros(&[1, 2, 20, 20])).is_err());
    }
}
