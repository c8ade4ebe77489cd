use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Compares the tape gradient of a scalar function at `x` with central
/// differences of step `h`.
///
/// Returns `max_i |g_i - n_i| / max(max_i |g_i|, max_i |n_i|)`, the error
/// relative to the gradient's largest component, or 0 when both vanish.
pub fn grad_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let eval = |t: &Tensor| -> Result<f64> {
        let mut tape = Tape::new();
        let v = tape.constant(t.clone());
        let out = f(&mut tape, v)?;
        scalar_of(&tape, out)
    };

    let mut tape = Tape::new();
    let v = tape.param(x.clone());
    let out = f(&mut tape, v)?;
    scalar_of(&tape, out)?;
    let analytic = tape.backward(out)?.get_or_zeros(v, x);

    let mut probe = x.clone();
    let mut numeric = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let fp = eval(&probe)?;
        probe.data_mut()[i] = orig - h;
        let fm = eval(&probe)?;
        probe.data_mut()[i] = orig;
        numeric.push((fp - fm) / (2.0 * h));
    }

    let scale = analytic
        .data()
        .iter()
        .chain(&numeric)
        .fold(0.0_f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return Ok(0.0);
    }
    let err = analytic
        .data()
        .iter()
        .zip(&numeric)
        .fold(0.0_f64, |m, (a, n)| m.max((a - n).abs()));
    Ok(err / scale)
}

fn scalar_of(tape: &Tape, v: Var) -> Result<f64> {
    let t = tape.value(v);
    if t.len() != 1 {
        return Err(Error::shape("grad_check", format!("function output has shape {:?}", t.shape())));
    }
    Ok(t.item())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_gradient_matches() {
        let x = Tensor::new(vec![3], vec![0.5, -1.2, 2.0]).unwrap();
        let err = grad_check(
            |t, v| {
                let sq = t.mul(v, v)?;
                let cube = t.mul(sq, v)?;
                t.mean(cube)
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn wrong_gradient_is_detected() {
        // constant input path carries no gradient, so analytic is zero
        let x = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap();
        let err = grad_check(
            |t, v| {
                let detached = t.constant(t.value(v).clone());
                t.mean(detached)
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err > 0.5);
    }
}
