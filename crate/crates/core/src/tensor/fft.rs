//! Multi-dimensional complex FFT over row-major buffers, backed by rustfft.

use rustfft::num_complex::Complex;
use rustfft::FftDirection;

use super::{Scalar, Tensor, Var};
use crate::error::{Error, Result};

/// Smallest power of two `>= n` (and `>= 1`).
pub fn next_pow2(n: usize) -> usize {
    n.max(1).next_power_of_two()
}

/// In-place unnormalized transform over every axis of `shape`.
///
/// Forward uses `exp(-2πi·kn/N)`; the inverse direction is not divided by
/// `N`, so `inverse(forward(x)) = (Π N_i)·x`.
pub fn fft_nd<S: Scalar>(data: &mut [Complex<S>], shape: &[usize], inverse: bool) {
    assert_eq!(data.len(), shape.iter().product::<usize>(), "fft_nd buffer length");
    if data.is_empty() {
        return;
    }
    let dir = if inverse {
        FftDirection::Inverse
    } else {
        FftDirection::Forward
    };
    let rank = shape.len();
    for ax in 0..rank {
        let n = shape[ax];
        if n <= 1 {
            continue;
        }
        let plan = S::with_planner(|p| p.plan_fft(n, dir));
        let inner: usize = shape[ax + 1..].iter().product();
        if inner == 1 {
            // contiguous lines: one batched call
            plan.process(data);
            continue;
        }
        let outer: usize = shape[..ax].iter().product();
        let mut line = vec![Complex::new(S::zero(), S::zero()); n];
        for o in 0..outer {
            let base = o * n * inner;
            for i in 0..inner {
                for (k, v) in line.iter_mut().enumerate() {
                    *v = data[base + k * inner + i];
                }
                plan.process(&mut line);
                for (k, v) in line.iter().enumerate() {
                    data[base + k * inner + i] = *v;
                }
            }
        }
    }
}

fn czero<S: Scalar>() -> Complex<S> {
    Complex::new(S::zero(), S::zero())
}

/// Real rows of length `len` zero-padded to `n`, transformed; returns the
/// `n/2+1` non-negative bins of each row as `(re, im)` pairs.
fn rfft_rows<S: Scalar>(x: &[S], rows: usize, len: usize, n: usize) -> Vec<S> {
    let bins = n / 2 + 1;
    let mut buf = vec![czero::<S>(); rows * n];
    for r in 0..rows {
        for i in 0..len {
            buf[r * n + i].re = x[r * len + i];
        }
    }
    fft_nd(&mut buf, &[rows, n], false);
    let mut out = Vec::with_capacity(rows * bins * 2);
    for r in 0..rows {
        for c in &buf[r * n..r * n + bins] {
            out.push(c.re);
            out.push(c.im);
        }
    }
    out
}

/// Inverse of [`rfft_rows`] (normalized by `1/n`); imaginary parts of the
/// DC and Nyquist bins are ignored.
fn irfft_rows<S: Scalar>(z: &[S], rows: usize, n: usize) -> Vec<S> {
    let bins = n / 2 + 1;
    let mut buf = vec![czero::<S>(); rows * n];
    for r in 0..rows {
        let row = &mut buf[r * n..(r + 1) * n];
        for k in 0..bins {
            let c = Complex::new(z[(r * bins + k) * 2], z[(r * bins + k) * 2 + 1]);
            row[k] = c;
            if k > 0 && k < n - k {
                row[n - k] = c.conj();
            }
        }
        row[0].im = S::zero();
        if n > 1 {
            row[n / 2].im = S::zero();
        }
    }
    fft_nd(&mut buf, &[rows, n], true);
    let inv = S::cast(1.0 / n as f64);
    buf.iter().map(|c| c.re * inv).collect()
}

impl<'t, S: Scalar> Var<'t, S> {
    /// Real FFT along the last axis. The axis is zero-padded to
    /// `next_pow2(max(len, n_min))`; output shape is `[..., n/2+1, 2]`.
    pub fn rfft(self, n_min: usize) -> Result<Var<'t, S>> {
        let x = self.value();
        let len = *x
            .shape()
            .last()
            .ok_or_else(|| Error::invalid("rfft", "scalar input"))?;
        if len == 0 {
            return Err(Error::invalid("rfft", "empty axis"));
        }
        let n = next_pow2(len.max(n_min));
        let rows = x.numel() / len;
        let bins = n / 2 + 1;
        let mut shape = x.shape()[..x.rank() - 1].to_vec();
        shape.extend([bins, 2]);
        let out = Tensor::new(&shape, rfft_rows(x.data(), rows, len, n))?;
        let in_shape = x.shape().to_vec();
        self.tape.push_op("rfft", out, &[self], move |g, _| {
            // adjoint: Re(Σ_k G_k e^{+2πikn/N}) over the stored bins, cropped
            let mut buf = vec![czero::<S>(); rows * n];
            for r in 0..rows {
                for k in 0..bins {
                    buf[r * n + k] = Complex::new(g.data()[(r * bins + k) * 2], g.data()[(r * bins + k) * 2 + 1]);
                }
            }
            fft_nd(&mut buf, &[rows, n], true);
            let mut d = Vec::with_capacity(rows * len);
            for r in 0..rows {
                d.extend(buf[r * n..r * n + len].iter().map(|c| c.re));
            }
            vec![Some(Tensor::new(&in_shape, d).unwrap())]
        })
    }

    /// Inverse of [`Var::rfft`]: `[..., n/2+1, 2]` to `[..., n]`.
    pub fn irfft(self) -> Result<Var<'t, S>> {
        let z = self.value();
        let r = z.rank();
        if r < 2 || z.shape()[r - 1] != 2 || z.shape()[r - 2] < 2 {
            return Err(Error::invalid("irfft", format!("expected [..., bins>=2, 2], got {:?}", z.shape())));
        }
        let bins = z.shape()[r - 2];
        let n = 2 * (bins - 1);
        if !n.is_power_of_two() {
            return Err(Error::invalid("irfft", format!("implied length {n} is not a power of two")));
        }
        let rows = z.numel() / (bins * 2);
        let mut shape = z.shape()[..r - 2].to_vec();
        shape.push(n);
        let out = Tensor::new(&shape, irfft_rows(z.data(), rows, n))?;
        let in_shape = z.shape().to_vec();
        self.tape.push_op("irfft", out, &[self], move |g, _| {
            let mut buf: Vec<Complex<S>> = g.data().iter().map(|&v| Complex::new(v, S::zero())).collect();
            fft_nd(&mut buf, &[rows, n], false);
            let mut d = Vec::with_capacity(rows * bins * 2);
            for r in 0..rows {
                for k in 0..bins {
                    let edge = k == 0 || k == n / 2;
                    let c = S::cast(if edge { 1.0 } else { 2.0 } / n as f64);
                    let v = buf[r * n + k];
                    d.push(v.re * c);
                    d.push(if edge { S::zero() } else { v.im * c });
                }
            }
            vec![Some(Tensor::new(&in_shape, d).unwrap())]
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_dft_2d(x: &[Complex<f64>], n0: usize, n1: usize) -> Vec<Complex<f64>> {
        let mut out = vec![Complex::new(0.0, 0.0); n0 * n1];
        for k0 in 0..n0 {
            for k1 in 0..n1 {
                let mut acc = Complex::new(0.0, 0.0);
                for a in 0..n0 {
                    for b in 0..n1 {
                        let ph = -2.0
                            * std::f64::consts::PI
                            * ((k0 * a) as f64 / n0 as f64 + (k1 * b) as f64 / n1 as f64);
                        acc += x[a * n1 + b] * Complex::new(ph.cos(), ph.sin());
                    }
                }
                out[k0 * n1 + k1] = acc;
            }
        }
        out
    }

    use crate::tensor::Tape;

    #[test]
    fn rfft_of_zeros_is_zero() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::zeros(&[8]));
        let z = x.rfft(0).unwrap();
        assert_eq!(z.shape(), vec![5, 2]);
        assert!(z.value().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rfft_of_constant() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::full(&[16], 2.5));
        let z = x.rfft(0).unwrap().value();
        assert!((z.data()[0] - 40.0).abs() < 1e-12);
        assert!(z.data()[1..].iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn rfft_pads_to_power_of_two() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::ones(&[3, 5]));
        assert_eq!(x.rfft(0).unwrap().shape(), vec![3, 5, 2]);
        assert_eq!(x.rfft(9).unwrap().shape(), vec![3, 9, 2]);
    }

    #[test]
    fn round_trip_length_64() {
        let tape = Tape::<f64>::new();
        let x = Tensor::from_fn(&[64], |i| ((i * 7919) % 113) as f64 / 113.0 - 0.5);
        let v = tape.leaf(x.clone());
        let y = v.rfft(0).unwrap().irfft().unwrap();
        assert!(y.value().rel_err(&x) < 1e-10);
    }

    #[test]
    fn next_pow2_values() {
        assert_eq!(next_pow2(0), 1);
        assert_eq!(next_pow2(1), 1);
        assert_eq!(next_pow2(5), 8);
        assert_eq!(next_pow2(8), 8);
        assert_eq!(next_pow2(1025), 2048);
    }

    #[test]
    fn matches_naive_2d() {
        let (n0, n1) = (4, 6);
        let x: Vec<Complex<f64>> = (0..n0 * n1)
            .map(|i| Complex::new((i as f64 * 0.3).sin(), (i as f64 * 0.7).cos()))
            .collect();
        let mut y = x.clone();
        fft_nd(&mut y, &[n0, n1], false);
        let want = naive_dft_2d(&x, n0, n1);
        for (a, b) in y.iter().zip(&want) {
            assert!((a - b).norm() < 1e-10);
        }
    }

    #[test]
    fn roundtrip_3d_scales_by_size() {
        let shape = [2, 4, 8];
        let x: Vec<Complex<f64>> = (0..64).map(|i| Complex::new(i as f64, -(i as f64))).collect();
        let mut y = x.clone();
        fft_nd(&mut y, &shape, false);
        fft_nd(&mut y, &shape, true);
        for (a, b) in y.iter().zip(&x) {
            assert!((a / 64.0 - b).norm() < 1e-9);
        }
    }
}
