use rustfft::num_complex::Complex;

use super::{ConvSpec, Padding};
use crate::error::{Error, Result};
use crate::tensor::{fft_nd, next_pow2, numel, Scalar, Tensor, Var};

/// Flat indices into an `nfft` grid for every element of `ext`, with each
/// axis coordinate mapped through `place(axis, index)`.
fn grid_map(ext: &[usize], nfft: &[usize], place: impl Fn(usize, usize) -> usize) -> Vec<usize> {
    let r = ext.len();
    let mut out = Vec::with_capacity(numel(ext));
    let mut idx = vec![0usize; r];
    for _ in 0..numel(ext) {
        let mut flat = 0;
        for d in 0..r {
            flat = flat * nfft[d] + place(d, idx[d]);
        }
        out.push(flat);
        for d in (0..r).rev() {
            idx[d] += 1;
            if idx[d] < ext[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    out
}

/// Transforms `count` real blocks of `map.len()` values each, scattered into
/// zero grids of size `nfft`.
fn spectra<S: Scalar>(data: &[S], count: usize, map: &[usize], nfft: &[usize]) -> Vec<Complex<S>> {
    let m = numel(nfft);
    let n = map.len();
    let mut buf = vec![Complex::new(S::zero(), S::zero()); count * m];
    for c in 0..count {
        let block = &mut buf[c * m..(c + 1) * m];
        for (&dst, &v) in map.iter().zip(&data[c * n..(c + 1) * n]) {
            block[dst].re = v;
        }
        fft_nd(block, nfft, false);
    }
    buf
}

/// `acc += a ⊙ b` (or `a ⊙ conj(b)`).
#[inline]
fn mul_acc<S: Scalar>(acc: &mut [Complex<S>], a: &[Complex<S>], b: &[Complex<S>], conj_b: bool) {
    if conj_b {
        for ((o, x), y) in acc.iter_mut().zip(a).zip(b) {
            *o = *o + x * y.conj();
        }
    } else {
        for ((o, x), y) in acc.iter_mut().zip(a).zip(b) {
            *o = *o + x * y;
        }
    }
}

/// Inverse-transforms `block` in place and gathers the real parts at `map`,
/// scaled by `1/numel(nfft)`.
fn gather<S: Scalar>(block: &mut [Complex<S>], nfft: &[usize], map: &[usize], out: &mut [S]) {
    fft_nd(block, nfft, true);
    let inv = S::cast(1.0 / block.len() as f64);
    for (o, &src) in out.iter_mut().zip(map) {
        *o = block[src].re * inv;
    }
}

/// FFT evaluation of the same operator as [`super::conv_direct`].
///
/// Every spatial axis is zero-padded to `next_pow2(L + K − 1)` so the
/// circular product equals the linear convolution. Backward uses the
/// conjugate spectra (the adjoint transforms) of the saved forward spectra.
pub fn conv_fft<'t, S: Scalar>(f: Var<'t, S>, k: Var<'t, S>, spec: &ConvSpec) -> Result<Var<'t, S>> {
    let fv = f.value();
    let kv = k.value();
    let (batch, sp) = spec.check("conv_fft", fv.shape(), kv.shape())?;
    if spec.padding != Padding::Zeros {
        return Err(Error::invalid("conv_fft", "only zero padding is supported"));
    }
    let ks = spec.kernel_extent.clone();
    let anchor = spec.anchor();
    let nfft: Vec<usize> = sp.iter().zip(&ks).map(|(&l, &k)| next_pow2(l + k - 1)).collect();
    let m = numel(&nfft);
    let (cin, cout) = (spec.n_in, spec.out_channels());
    let n_k = if spec.separable { cin } else { cout * cin };

    let f_map = grid_map(&sp, &nfft, |_, i| i);
    // flipped kernel: element j sits at K − 1 − j
    let k_map = grid_map(&ks, &nfft, |d, j| ks[d] - 1 - j);
    // y[x] = full[x + K − 1 − a]
    let y_map = grid_map(&sp, &nfft, |d, x| x + ks[d] - 1 - anchor[d]);

    let fs = spectra(fv.data(), batch * cin, &f_map, &nfft);
    let kspec = spectra(kv.data(), n_k, &k_map, &nfft);
    let slab = |o: usize, i: usize| if spec.separable { i } else { o * cin + i };
    let separable = spec.separable;
    let inputs_of = move |o: usize| -> Vec<usize> { if separable { vec![o] } else { (0..cin).collect() } };

    let n = numel(&sp);
    let mut y = vec![S::zero(); batch * cout * n];
    let mut acc = vec![Complex::new(S::zero(), S::zero()); m];
    for b in 0..batch {
        for o in 0..cout {
            acc.iter_mut().for_each(|c| *c = Complex::new(S::zero(), S::zero()));
            for i in inputs_of(o) {
                let s = slab(o, i);
                mul_acc(&mut acc, &fs[(b * cin + i) * m..(b * cin + i + 1) * m], &kspec[s * m..(s + 1) * m], false);
            }
            gather(&mut acc, &nfft, &y_map, &mut y[(b * cout + o) * n..(b * cout + o + 1) * n]);
        }
    }
    let mut out_shape = vec![batch, cout];
    out_shape.extend(&sp);
    let out = Tensor::new(&out_shape, y)?;
    let f_shape = fv.shape().to_vec();
    let k_shape = kv.shape().to_vec();
    let n_kel = numel(&ks);

    f.tape().push_op("conv_fft", out, &[f, k], move |g, need| {
        let slab = |o: usize, i: usize| if separable { i } else { o * cin + i };
        // gradient placed where the forward read its outputs
        let gs = spectra(g.data(), batch * cout, &y_map, &nfft);
        let mut acc = vec![Complex::new(S::zero(), S::zero()); m];
        let zero = |acc: &mut [Complex<S>]| acc.iter_mut().for_each(|c| *c = Complex::new(S::zero(), S::zero()));

        let df = need[0].then(|| {
            let mut df = vec![S::zero(); batch * cin * n];
            for b in 0..batch {
                for i in 0..cin {
                    zero(&mut acc);
                    let outs: Vec<usize> = if separable { vec![i] } else { (0..cout).collect() };
                    for o in outs {
                        let s = slab(o, i);
                        mul_acc(&mut acc, &gs[(b * cout + o) * m..(b * cout + o + 1) * m], &kspec[s * m..(s + 1) * m], true);
                    }
                    gather(&mut acc, &nfft, &f_map, &mut df[(b * cin + i) * n..(b * cin + i + 1) * n]);
                }
            }
            Tensor::new(&f_shape, df).unwrap()
        });
        let dk = need[1].then(|| {
            let mut dk = vec![S::zero(); n_k * n_kel];
            for o in 0..cout {
                let ins: Vec<usize> = if separable { vec![o] } else { (0..cin).collect() };
                for i in ins {
                    zero(&mut acc);
                    for b in 0..batch {
                        mul_acc(
                            &mut acc,
                            &gs[(b * cout + o) * m..(b * cout + o + 1) * m],
                            &fs[(b * cin + i) * m..(b * cin + i + 1) * m],
                            true,
                        );
                    }
                    let s = slab(o, i);
                    gather(&mut acc, &nfft, &k_map, &mut dk[s * n_kel..(s + 1) * n_kel]);
                }
            }
            Tensor::new(&k_shape, dk).unwrap()
        });
        vec![df, dk]
    })
}
