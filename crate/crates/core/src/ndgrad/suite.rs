//! Finite-difference checks for every differentiable op.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gradcheck::grad_check;
use super::ssim::{ms_ssim, ssim};
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use super::LEAKY_SLOPE;
use crate::error::Result;

/// Central-difference step used by the suite.
pub const SUITE_STEP: f64 = 1e-5;

/// One op under test: `check(seed)` returns the relative gradient error on
/// inputs drawn from `seed`.
pub struct OpCheck {
    pub name: &'static str,
    pub check: fn(u64) -> Result<f64>,
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).expect("shape")
}

/// Values with `|x| >= gap`, away from kinks.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize], gap: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.gen_range(gap..1.0);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape")
}

/// `sum(y * r)` for a fixed random `r`, turning any output into a scalar.
fn project(tape: &mut Tape, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let shape = tape.shape(y).to_vec();
    let r = tape.constant(uniform(&mut rng, &shape, -1.0, 1.0));
    let n = tape.value(y).len() as f64;
    let p = tape.mul(y, r)?;
    let m = tape.mean(p)?;
    tape.mul_scalar(m, n)
}

fn unary(seed: u64, x: Tensor, f: impl Fn(&mut Tape, Var) -> Result<Var>) -> Result<f64> {
    grad_check(
        |t, v| {
            let y = f(t, v)?;
            project(t, y, seed)
        },
        &x,
        SUITE_STEP,
    )
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn conv_input(seed: u64) -> Result<f64> {
    let mut r = rng(seed);
    let k = uniform(&mut r, &[3, 2, 3, 3], -1.0, 1.0);
    unary(seed, uniform(&mut r, &[1, 2, 6, 6], -1.0, 1.0), move |t, v| {
        let kv = t.constant(k.clone());
        t.conv2d(v, kv, 1, 1)
    })
}

fn conv_kernel(seed: u64) -> Result<f64> {
    let mut r = rng(seed);
    let x = uniform(&mut r, &[2, 2, 6, 5], -1.0, 1.0);
    unary(seed, uniform(&mut r, &[3, 2, 3, 3], -1.0, 1.0), move |t, v| {
        let xv = t.constant(x.clone());
        t.conv2d(xv, v, 1, 1)
    })
}

fn conv_strided(seed: u64) -> Result<f64> {
    let mut r = rng(seed);
    let k = uniform(&mut r, &[2, 2, 3, 3], -1.0, 1.0);
    unary(seed, uniform(&mut r, &[1, 2, 7, 6], -1.0, 1.0), move |t, v| {
        let kv = t.constant(k.clone());
        t.conv2d(v, kv, 2, 1)
    })
}

fn add_bias(seed: u64) -> Result<f64> {
    let mut r = rng(seed);
    let x = uniform(&mut r, &[2, 3, 4, 4], -1.0, 1.0);
    unary(seed, uniform(&mut r, &[3], -1.0, 1.0), move |t, v| {
        let xv = t.constant(x.clone());
        t.add_bias(xv, v)
    })
}

fn binary(seed: u64, op: fn(&mut Tape, Var, Var) -> Result<Var>) -> Result<f64> {
    let mut r = rng(seed);
    let other = uniform(&mut r, &[2, 3, 4], 0.5, 1.5);
    let x = uniform(&mut r, &[2, 3, 4], 0.5, 1.5);
    let lhs = unary(seed, x.clone(), |t, v| {
        let o = t.constant(other.clone());
        op(t, v, o)
    })?;
    let rhs = unary(seed, x, |t, v| {
        let o = t.constant(other.clone());
        op(t, o, v)
    })?;
    Ok(lhs.max(rhs))
}

fn add(seed: u64) -> Result<f64> {
    binary(seed, Tape::add)
}

fn sub(seed: u64) -> Result<f64> {
    binary(seed, Tape::sub)
}

fn mul(seed: u64) -> Result<f64> {
    binary(seed, Tape::mul)
}

fn div(seed: u64) -> Result<f64> {
    binary(seed, Tape::div)
}

fn scalar_ops(seed: u64) -> Result<f64> {
    let x = uniform(&mut rng(seed), &[3, 5], -1.0, 1.0);
    unary(seed, x, |t, v| {
        let y = t.mul_scalar(v, -1.7)?;
        t.add_scalar(y, 0.3)
    })
}

fn leaky_relu(seed: u64) -> Result<f64> {
    unary(seed, away_from_zero(&mut rng(seed), &[2, 3, 4], 0.05), |t, v| t.leaky_relu(v, LEAKY_SLOPE))
}

fn sigmoid(seed: u64) -> Result<f64> {
    unary(seed, uniform(&mut rng(seed), &[2, 3, 4], -4.0, 4.0), Tape::sigmoid)
}

fn softmax(seed: u64) -> Result<f64> {
    unary(seed, uniform(&mut rng(seed), &[2, 3, 2, 2], -3.0, 3.0), |t, v| t.softmax(v, 1))
}

fn concat(seed: u64) -> Result<f64> {
    let mut r = rng(seed);
    let other = uniform(&mut r, &[1, 2, 3, 3], -1.0, 1.0);
    unary(seed, uniform(&mut r, &[1, 3, 3, 3], -1.0, 1.0), move |t, v| {
        let o = t.constant(other.clone());
        let a = t.concat(v, o, 1)?;
        t.concat(o, a, 1)
    })
}

fn downsample2(seed: u64) -> Result<f64> {
    unary(seed, uniform(&mut rng(seed), &[1, 2, 6, 4], -1.0, 1.0), Tape::downsample2)
}

fn upsample2(seed: u64) -> Result<f64> {
    unary(seed, uniform(&mut rng(seed), &[1, 2, 3, 4], -1.0, 1.0), Tape::upsample2)
}

fn box_filter(seed: u64) -> Result<f64> {
    unary(seed, uniform(&mut rng(seed), &[1, 2, 9, 8], -1.0, 1.0), |t, v| t.box_filter(v, 7))
}

fn mean(seed: u64) -> Result<f64> {
    unary(seed, uniform(&mut rng(seed), &[2, 5], -1.0, 1.0), Tape::mean)
}

fn sum_axis(seed: u64) -> Result<f64> {
    unary(seed, uniform(&mut rng(seed), &[2, 3, 2, 2], -1.0, 1.0), |t, v| t.sum_axis(v, 1))
}

fn l1_loss(seed: u64) -> Result<f64> {
    let mut r = rng(seed);
    let base = uniform(&mut r, &[2, 3, 4], -1.0, 1.0);
    let offset = away_from_zero(&mut r, &[2, 3, 4], 0.05);
    let x: Vec<f64> = base.data().iter().zip(offset.data()).map(|(b, o)| b + o).collect();
    let x = Tensor::new(vec![2, 3, 4], x)?;
    unary(seed, x, move |t, v| {
        let b = t.constant(base.clone());
        t.l1_loss(v, b)
    })
}

fn ssim_single(seed: u64) -> Result<f64> {
    let mut r = rng(seed);
    let b = uniform(&mut r, &[1, 1, 9, 10], 0.0, 1.0);
    grad_check(
        move |t, v| {
            let bv = t.constant(b.clone());
            ssim(t, v, bv)
        },
        &uniform(&mut r, &[1, 1, 9, 10], 0.0, 1.0),
        SUITE_STEP,
    )
}

fn ms_ssim_two_scale(seed: u64) -> Result<f64> {
    let mut r = rng(seed);
    let b = uniform(&mut r, &[1, 1, 14, 14], 0.0, 1.0);
    grad_check(
        move |t, v| {
            let bv = t.constant(b.clone());
            ms_ssim(t, v, bv)
        },
        &uniform(&mut r, &[1, 1, 14, 14], 0.0, 1.0),
        SUITE_STEP,
    )
}

/// Every differentiable op with its check.
pub fn op_suite() -> Vec<OpCheck> {
    macro_rules! checks {
        ($($name:literal => $f:ident),* $(,)?) => {
            vec![$(OpCheck { name: $name, check: $f }),*]
        };
    }
    checks![
        "conv2d/input" => conv_input,
        "conv2d/kernel" => conv_kernel,
        "conv2d/stride2" => conv_strided,
        "add_bias" => add_bias,
        "add" => add,
        "sub" => sub,
        "mul" => mul,
        "div" => div,
        "scalar" => scalar_ops,
        "leaky_relu" => leaky_relu,
        "sigmoid" => sigmoid,
        "softmax" => softmax,
        "concat" => concat,
        "downsample2" => downsample2,
        "upsample2" => upsample2,
        "box_filter" => box_filter,
        "mean" => mean,
        "sum_axis" => sum_axis,
        "l1_loss" => l1_loss,
        "ssim" => ssim_single,
        "ms_ssim" => ms_ssim_two_scale,
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_op_passes_on_a_few_seeds() {
        for op in op_suite() {
            for seed in 0..3 {
                let err = (op.check)(seed).unwrap();
                assert!(err < 1e-6, "{} seed {seed}: {err}", op.name);
            }
        }
    }
}
