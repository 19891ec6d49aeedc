//! Forward kernels on plain tensors. The gradient graph calls into these and
//! records the cached intermediates it needs for the backward pass.
//!
//! All reductions run in a fixed left-to-right order so reruns are bit-identical.

use super::Tensor;
use crate::error::{Error, Result};

/// `sqrt(2 / pi)` in the tanh approximation of GELU.
pub const GELU_SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
/// Cubic coefficient in the tanh approximation of GELU.
pub const GELU_CUBIC: f64 = 0.044_715;

/// `C = alpha * op(A) * op(B) + beta * C` on row-major buffers, where `op`
/// optionally transposes. `A` is `m x k` after `op`, `B` is `k x n` after `op`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    c: &mut [f64],
    beta: f64,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    // row/col strides of op(A) and op(B)
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the buffers hold exactly m*k, k*n and m*n elements (checked above
    // in debug builds and by every caller's shape validation), and the strides
    // describe those layouts.
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

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.require_matrix("matmul")?;
    let (k2, n) = b.require_matrix("matmul")?;
    if k != k2 {
        return Err(Error::ShapeMismatch {
            op: "matmul",
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    let mut out = vec![0.0; m * n];
    gemm(m, k, n, a.data(), false, b.data(), false, &mut out, 0.0);
    Tensor::new(vec![m, n], out)
}

pub fn transpose(a: &Tensor) -> Result<Tensor> {
    let (r, c) = a.require_matrix("transpose")?;
    let src = a.data();
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = src[i * c + j];
        }
    }
    Tensor::new(vec![c, r], out)
}

/// Row-wise softmax over the trailing axis, with the row maximum subtracted first.
pub fn softmax_rows(x: &Tensor) -> Tensor {
    let cols = x.cols();
    let mut out = x.data().to_vec();
    if cols > 0 {
        for row in out.chunks_mut(cols) {
            softmax_in_place(row);
        }
    }
    Tensor::new(x.shape().to_vec(), out).expect("shape preserved")
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Cached intermediates of a layer norm forward.
pub(crate) struct NormCache {
    pub xhat: Vec<f64>,
    pub rstd: Vec<f64>,
}

pub(crate) fn layer_norm_cached(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    eps: f64,
) -> Result<(Tensor, NormCache)> {
    let h = x.cols();
    if x.rank() == 0 || h < 2 {
        return Err(Error::DegenerateNorm(h));
    }
    if !(eps > 0.0) {
        return Err(Error::NonPositiveEps(eps));
    }
    for p in [gamma, beta] {
        if p.shape() != [h] {
            return Err(Error::ShapeMismatch {
                op: "layer_norm",
                left: x.shape().to_vec(),
                right: p.shape().to_vec(),
            });
        }
    }
    let rows = x.rows();
    let mut out = vec![0.0; rows * h];
    let mut xhat = vec![0.0; rows * h];
    let mut rstd = vec![0.0; rows];
    let (g, b) = (gamma.data(), beta.data());
    for r in 0..rows {
        let src = x.row(r);
        let mean = src.iter().sum::<f64>() / h as f64;
        let var = src.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / h as f64;
        let inv = 1.0 / (var + eps).sqrt();
        rstd[r] = inv;
        for j in 0..h {
            let n = (src[j] - mean) * inv;
            xhat[r * h + j] = n;
            out[r * h + j] = g[j] * n + b[j];
        }
    }
    Ok((
        Tensor::new(x.shape().to_vec(), out)?,
        NormCache { xhat, rstd },
    ))
}

/// Normalizes each trailing-axis vector to zero mean and unit (population)
/// variance, then applies `gamma * xhat + beta`.
pub fn layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
    layer_norm_cached(x, gamma, beta, eps).map(|(y, _)| y)
}

/// GELU, tanh approximation:
/// `0.5 * x * (1 + tanh(sqrt(2/pi) * (x + 0.044715 * x^3)))`.
#[inline]
pub fn gelu_scalar(x: f64) -> f64 {
    let u = GELU_SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x);
    0.5 * x * (1.0 + u.tanh())
}

#[inline]
pub(crate) fn gelu_grad_scalar(x: f64) -> f64 {
    let u = GELU_SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x);
    let t = u.tanh();
    let du = GELU_SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_CUBIC * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

pub fn gelu(x: &Tensor) -> Tensor {
    let data = x.data().iter().map(|&v| gelu_scalar(v)).collect();
    Tensor::new(x.shape().to_vec(), data).expect("shape preserved")
}

/// Softmax probabilities of the active rows plus the mean negative log-likelihood.
pub(crate) fn cross_entropy_cached(
    logits: &Tensor,
    labels: &[usize],
    active: &[bool],
) -> Result<(f64, Vec<f64>, usize)> {
    let (rows, vocab) = logits.require_matrix("cross_entropy_masked")?;
    if labels.len() != rows || active.len() != rows {
        return Err(Error::ShapeMismatch {
            op: "cross_entropy_masked",
            left: logits.shape().to_vec(),
            right: vec![labels.len(), active.len()],
        });
    }
    let count = active.iter().filter(|&&a| a).count();
    if count == 0 {
        return Err(Error::NoActivePositions);
    }
    let mut probs = vec![0.0; rows * vocab];
    let mut total = 0.0;
    for r in 0..rows {
        if !active[r] {
            continue;
        }
        let label = labels[r];
        if label >= vocab {
            return Err(Error::LabelOutOfRange {
                position: r,
                label,
                vocab,
            });
        }
        let row = logits.row(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let lse = max + sum.ln();
        total += lse - row[label];
        let p = &mut probs[r * vocab..(r + 1) * vocab];
        for (dst, v) in p.iter_mut().zip(row) {
            *dst = (v - lse).exp();
        }
    }
    Ok((total / count as f64, probs, count))
}

/// Mean over active rows of `-log softmax(logits)[label]`.
pub fn cross_entropy_masked(logits: &Tensor, labels: &[usize], active: &[bool]) -> Result<f64> {
    cross_entropy_cached(logits, labels, active).map(|(loss, _, _)| loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
            .unwrap()
    }

    #[test]
    fn matmul_identity_and_zero() {
        let b = Tensor::from_rows(&[vec![1., 2., 3., 4.], vec![5., 6., 7., 8.], vec![9., 1., 2., 3.]])
            .unwrap();
        assert_eq!(matmul(&Tensor::eye(3), &b).unwrap(), b);
        let a = Tensor::from_rows(&[vec![1., 2.], vec![3., 4.]]).unwrap();
        let z = Tensor::zeros(&[2, 1]);
        assert_eq!(matmul(&a, &z).unwrap(), Tensor::zeros(&[2, 1]));
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = random(&[4, 5], &mut rng);
        let b = random(&[5, 6], &mut rng);
        let c = matmul(&a, &b).unwrap();
        for i in 0..4 {
            for j in 0..6 {
                let mut acc = 0.0;
                for p in 0..5 {
                    acc += a.get2(i, p) * b.get2(p, j);
                }
                assert!((c.get2(i, j) - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matmul_reports_both_shapes() {
        let err = matmul(&Tensor::zeros(&[2, 3]), &Tensor::zeros(&[2, 3])).unwrap_err();
        match err {
            Error::ShapeMismatch { left, right, .. } => {
                assert_eq!(left, vec![2, 3]);
                assert_eq!(right, vec![2, 3]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn softmax_examples() {
        let s = softmax_rows(&Tensor::from_rows(&[vec![0., 0.]]).unwrap());
        assert_eq!(s.data(), &[0.5, 0.5]);
        let s = softmax_rows(&Tensor::from_rows(&[vec![1000., 0.]]).unwrap());
        assert!((s.data()[0] - 1.0).abs() < 1e-9 && s.data()[1].abs() < 1e-9);
        let s = softmax_rows(&Tensor::from_rows(&[vec![1., 2., 3.]]).unwrap());
        let z: f64 = [1f64, 2., 3.].iter().map(|v| v.exp()).sum();
        for (i, v) in [1f64, 2., 3.].iter().enumerate() {
            assert!((s.data()[i] - v.exp() / z).abs() < 1e-12);
        }
    }

    #[test]
    fn layer_norm_examples() {
        let g = Tensor::ones(&[4]);
        let b = Tensor::zeros(&[4]);
        let y = layer_norm(&Tensor::full(&[1, 4], 3.5), &g, &b, 1e-12).unwrap();
        assert!(y.data().iter().all(|v| *v == 0.0));

        let y = layer_norm(
            &Tensor::from_rows(&[vec![1., 3.]]).unwrap(),
            &Tensor::ones(&[2]),
            &Tensor::zeros(&[2]),
            1e-12,
        )
        .unwrap();
        assert!((y.data()[0] + 1.0).abs() < 1e-9 && (y.data()[1] - 1.0).abs() < 1e-9);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(&[1, 7], &mut rng);
        let g = random(&[7], &mut rng);
        let bb = random(&[7], &mut rng);
        let y = layer_norm(&x, &g, &bb, 1e-5).unwrap();
        let mean = x.data().iter().sum::<f64>() / 7.0;
        let var = x.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 7.0;
        for j in 0..7 {
            let want = g.data()[j] * (x.data()[j] - mean) / (var + 1e-5).sqrt() + bb.data()[j];
            assert!((y.data()[j] - want).abs() < 1e-10);
        }
    }

    #[test]
    fn layer_norm_rejects_width_one() {
        let r = layer_norm(&Tensor::zeros(&[3, 1]), &Tensor::ones(&[1]), &Tensor::zeros(&[1]), 1e-5);
        assert!(matches!(r, Err(Error::DegenerateNorm(1))));
    }

    #[test]
    fn gelu_examples() {
        assert_eq!(gelu_scalar(0.0), 0.0);
        assert!((gelu_scalar(10.0) - 10.0).abs() < 1e-4);
        assert!(gelu_scalar(-10.0).abs() < 1e-4);
    }

    #[test]
    fn gelu_derivative_matches_central_difference() {
        for &x in &[-3.0, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let fd = (gelu_scalar(x + h) - gelu_scalar(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad_scalar(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn cross_entropy_examples() {
        let logits = Tensor::zeros(&[1, 8]);
        let l = cross_entropy_masked(&logits, &[3], &[true]).unwrap();
        assert!((l - 8f64.ln()).abs() < 1e-12);

        let mut row = vec![0.0; 8];
        row[5] = 1e4;
        let l = cross_entropy_masked(&Tensor::from_rows(&[row]).unwrap(), &[5], &[true]).unwrap();
        assert!(l.abs() < 1e-12);

        // two active rows, one inactive row that must not contribute
        let logits =
            Tensor::from_rows(&[vec![1.0, 2.0, 0.5], vec![9.0, 9.0, 9.0], vec![-1.0, 0.0, 3.0]])
                .unwrap();
        let l = cross_entropy_masked(&logits, &[0, 0, 2], &[true, false, true]).unwrap();
        let nll = |row: [f64; 3], y: usize| {
            let z: f64 = row.iter().map(|v| v.exp()).sum();
            -(row[y].exp() / z).ln()
        };
        let want = (nll([1.0, 2.0, 0.5], 0) + nll([-1.0, 0.0, 3.0], 2)) / 2.0;
        assert!((l - want).abs() < 1e-10);
    }

    #[test]
    fn cross_entropy_rejects_no_active() {
        let r = cross_entropy_masked(&Tensor::zeros(&[2, 4]), &[0, 0], &[false, false]);
        assert!(matches!(r, Err(Error::NoActivePositions)));
    }
}
