//! Differentiable SSIM over a uniform window.

use super::tape::{Tape, Var};
use crate::error::{Error, Result};

pub const SSIM_WINDOW: usize = 7;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;
pub const MS_SSIM_WEIGHTS: [f64; 2] = [0.9, 0.1];

/// Mean SSIM of two `[N,C,H,W]` tensors with a 7x7 box window over valid
/// positions.
pub fn ssim(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    if tape.shape(a) != tape.shape(b) {
        return Err(Error::shape(
            "ssim",
            format!("{:?} vs {:?}", tape.shape(a), tape.shape(b)),
        ));
    }
    let k = SSIM_WINDOW;
    let mu_a = tape.box_filter(a, k)?;
    let mu_b = tape.box_filter(b, k)?;
    let aa = tape.mul(a, a)?;
    let bb = tape.mul(b, b)?;
    let ab = tape.mul(a, b)?;
    let e_aa = tape.box_filter(aa, k)?;
    let e_bb = tape.box_filter(bb, k)?;
    let e_ab = tape.box_filter(ab, k)?;
    let mu_aa = tape.mul(mu_a, mu_a)?;
    let mu_bb = tape.mul(mu_b, mu_b)?;
    let mu_ab = tape.mul(mu_a, mu_b)?;
    let var_a = tape.sub(e_aa, mu_aa)?;
    let var_b = tape.sub(e_bb, mu_bb)?;
    let cov = tape.sub(e_ab, mu_ab)?;

    let l_num = tape.mul_scalar(mu_ab, 2.0)?;
    let l_num = tape.add_scalar(l_num, SSIM_C1)?;
    let c_num = tape.mul_scalar(cov, 2.0)?;
    let c_num = tape.add_scalar(c_num, SSIM_C2)?;
    let l_den = tape.add(mu_aa, mu_bb)?;
    let l_den = tape.add_scalar(l_den, SSIM_C1)?;
    let c_den = tape.add(var_a, var_b)?;
    let c_den = tape.add_scalar(c_den, SSIM_C2)?;

    let num = tape.mul(l_num, c_num)?;
    let den = tape.mul(l_den, c_den)?;
    let map = tape.div(num, den)?;
    tape.mean(map)
}

/// Two-scale SSIM: `0.9 * ssim(a, b) + 0.1 * ssim(down(a), down(b))`.
pub fn ms_ssim(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    let (_, _, h, w) = tape.value(a).dims4("ms_ssim")?;
    if h < 2 * SSIM_WINDOW || w < 2 * SSIM_WINDOW || h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape(
            "ms_ssim",
            format!("{h}x{w} is too small or odd for two scales (need even and >= {})", 2 * SSIM_WINDOW),
        ));
    }
    let s1 = ssim(tape, a, b)?;
    let da = tape.downsample2(a)?;
    let db = tape.downsample2(b)?;
    let s2 = ssim(tape, da, db)?;
    let s1 = tape.mul_scalar(s1, MS_SSIM_WEIGHTS[0])?;
    let s2 = tape.mul_scalar(s2, MS_SSIM_WEIGHTS[1])?;
    tape.add(s1, s2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndgrad::Tensor;

    fn pattern(seed: u64, shape: &[usize]) -> Tensor {
        let n: usize = shape.iter().product();
        let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let data = (0..n)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (s >> 11) as f64 / (1u64 << 53) as f64
            })
            .collect();
        Tensor::new(shape.to_vec(), data).unwrap()
    }

    #[test]
    fn identical_inputs_score_one() {
        let mut tape = Tape::new();
        let a = tape.constant(pattern(3, &[1, 1, 16, 20]));
        let s = ms_ssim(&mut tape, a, a).unwrap();
        assert!((tape.value(s).item() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn symmetric_and_below_one() {
        let mut tape = Tape::new();
        let a = tape.constant(pattern(1, &[1, 1, 16, 16]));
        let b = tape.constant(pattern(2, &[1, 1, 16, 16]));
        let ab = ms_ssim(&mut tape, a, b).unwrap();
        let ba = ms_ssim(&mut tape, b, a).unwrap();
        let (x, y) = (tape.value(ab).item(), tape.value(ba).item());
        assert!((x - y).abs() < 1e-14);
        assert!(x < 1.0 && x > -1.0);
    }

    #[test]
    fn too_small_is_rejected() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[1, 1, 12, 16]));
        assert!(matches!(ms_ssim(&mut tape, a, a), Err(Error::Shape { .. })));
    }
}
