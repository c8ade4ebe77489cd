//! im2col convolution kernels over `matrixmultiply` GEMM.

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub f: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    fn ckk(&self) -> usize {
        self.c * self.k * self.k
    }

    fn positions(&self) -> usize {
        self.oh * self.ow
    }
}

/// `c = a * b + beta * c` for row-major `a (m x k)` and `b (k x n)`, either
/// of which may be read transposed.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_t: bool, b: &[f64], b_t: bool, beta: f64, c: &mut [f64]) {
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: the asserts above bound every index the strides can reach.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn im2col(g: &ConvGeom, x: &[f64], cols: &mut [f64]) {
    let p = g.positions();
    for c in 0..g.c {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = &mut cols[((c * g.k + ki) * g.k + kj) * p..][..p];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let dst = &mut row[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        *d = if ix < 0 || ix >= g.w as isize { 0.0 } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

fn col2im(g: &ConvGeom, cols: &[f64], dx: &mut [f64]) {
    let p = g.positions();
    for c in 0..g.c {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = &cols[((c * g.k + ki) * g.k + kj) * p..][..p];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += row[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn forward(g: &ConvGeom, x: &[f64], w: &[f64]) -> Vec<f64> {
    let p = g.positions();
    let mut out = vec![0.0; g.n * g.f * p];
    let mut cols = vec![0.0; g.ckk() * p];
    for n in 0..g.n {
        im2col(g, &x[n * g.c * g.h * g.w..(n + 1) * g.c * g.h * g.w], &mut cols);
        gemm(g.f, g.ckk(), p, w, false, &cols, false, 0.0, &mut out[n * g.f * p..(n + 1) * g.f * p]);
    }
    out
}

/// Returns `(dx, dw)`; either may be skipped.
pub(crate) fn backward(
    g: &ConvGeom,
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    want_dx: bool,
    want_dw: bool,
) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
    let p = g.positions();
    let ckk = g.ckk();
    let mut dx = want_dx.then(|| vec![0.0; g.n * g.c * g.h * g.w]);
    let mut dw = want_dw.then(|| vec![0.0; g.f * ckk]);
    let mut cols = vec![0.0; ckk * p];
    for n in 0..g.n {
        let dy_n = &dy[n * g.f * p..(n + 1) * g.f * p];
        if let Some(dw) = dw.as_mut() {
            im2col(g, &x[n * g.c * g.h * g.w..(n + 1) * g.c * g.h * g.w], &mut cols);
            gemm(g.f, p, ckk, dy_n, false, &cols, true, 1.0, dw);
        }
        if let Some(dx) = dx.as_mut() {
            gemm(ckk, g.f, p, w, true, dy_n, false, 0.0, &mut cols);
            col2im(g, &cols, &mut dx[n * g.c * g.h * g.w..(n + 1) * g.c * g.h * g.w]);
        }
    }
    (dx, dw)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(g: &ConvGeom, x: &[f64], w: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; g.n * g.f * g.oh * g.ow];
        for n in 0..g.n {
            for f in 0..g.f {
                for oy in 0..g.oh {
                    for ox in 0..g.ow {
                        let mut s = 0.0;
                        for c in 0..g.c {
                            for ki in 0..g.k {
                                for kj in 0..g.k {
                                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                                    let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < g.h && (ix as usize) < g.w {
                                        s += w[((f * g.c + c) * g.k + ki) * g.k + kj]
                                            * x[((n * g.c + c) * g.h + iy as usize) * g.w + ix as usize];
                                    }
                                }
                            }
                        }
                        out[((n * g.f + f) * g.oh + oy) * g.ow + ox] = s;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn gemm_path_matches_direct_loops() {
        for (stride, pad, k) in [(1, 1, 3), (2, 1, 3), (1, 0, 1), (2, 2, 5)] {
            let (h, w) = (7, 6);
            let oh = (h + 2 * pad - k) / stride + 1;
            let ow = (w + 2 * pad - k) / stride + 1;
            let g = ConvGeom { n: 2, c: 3, h, w, f: 4, k, stride, pad, oh, ow };
            let x: Vec<f64> = (0..2 * 3 * h * w).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
            let wt: Vec<f64> = (0..4 * 3 * k * k).map(|i| ((i * 13) % 7) as f64 * 0.5 - 1.0).collect();
            let a = forward(&g, &x, &wt);
            let b = naive(&g, &x, &wt);
            assert!(a.iter().zip(&b).all(|(p, q)| (p - q).abs() < 1e-10));
        }
    }
}
