use super::{runs, ConvSpec, Padding};
use crate::error::Result;
use crate::tensor::{numel, Scalar, Tensor, Var};

#[inline]
fn axpy<S: Scalar>(a: S, x: &[S], y: &mut [S]) {
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv = *yv + a * xv;
    }
}

#[inline]
fn dot<S: Scalar>(x: &[S], y: &[S]) -> S {
    x.iter().zip(y).fold(S::zero(), |acc, (&a, &b)| acc + a * b)
}

/// Direct evaluation of the grid convolution.
///
/// `f: [B, n_in, sp...]`; `k: [n_out, n_in, ks...]`, or `[n_in, ks...]` for a
/// separable (depthwise) spec. Output `[B, C_out, sp...]`.
pub fn conv_direct<'t, S: Scalar>(f: Var<'t, S>, k: Var<'t, S>, spec: &ConvSpec) -> Result<Var<'t, S>> {
    let fv = f.value();
    let kv = k.value();
    let (batch, sp) = spec.check("conv_direct", fv.shape(), kv.shape())?;
    let runs = runs(&sp, &spec.kernel_extent, &spec.anchor(), spec.padding == Padding::Circular);
    let n = numel(&sp);
    let ks = spec.support();
    let (cin, cout) = (spec.n_in, spec.out_channels());
    // (output channel, input channel, kernel slab) triples
    let pairs: Vec<(usize, usize, usize)> = if spec.separable {
        (0..cin).map(|c| (c, c, c)).collect()
    } else {
        (0..cout).flat_map(|o| (0..cin).map(move |i| (o, i, o * cin + i))).collect()
    };

    let mut y = vec![S::zero(); batch * cout * n];
    for b in 0..batch {
        for &(o, i, slab) in &pairs {
            let fi = &fv.data()[(b * cin + i) * n..(b * cin + i + 1) * n];
            let kk = &kv.data()[slab * ks..(slab + 1) * ks];
            let yo = &mut y[(b * cout + o) * n..(b * cout + o + 1) * n];
            for &(j, out, inp, len) in &runs {
                axpy(kk[j], &fi[inp..inp + len], &mut yo[out..out + len]);
            }
        }
    }
    let mut out_shape = vec![batch, cout];
    out_shape.extend(&sp);
    let out = Tensor::new(&out_shape, y)?;
    let k_shape = kv.shape().to_vec();
    let f_shape = fv.shape().to_vec();
    f.tape().push_op("conv_direct", out, &[f, k], move |g, need| {
        let g = g.data();
        let df = need[0].then(|| {
            let mut df = vec![S::zero(); batch * cin * n];
            for b in 0..batch {
                for &(o, i, slab) in &pairs {
                    let go = &g[(b * cout + o) * n..(b * cout + o + 1) * n];
                    let kk = &kv.data()[slab * ks..(slab + 1) * ks];
                    let dfi = &mut df[(b * cin + i) * n..(b * cin + i + 1) * n];
                    for &(j, out, inp, len) in &runs {
                        axpy(kk[j], &go[out..out + len], &mut dfi[inp..inp + len]);
                    }
                }
            }
            Tensor::new(&f_shape, df).unwrap()
        });
        let dk = need[1].then(|| {
            let mut dk = vec![S::zero(); numel(&k_shape)];
            for b in 0..batch {
                for &(o, i, slab) in &pairs {
                    let go = &g[(b * cout + o) * n..(b * cout + o + 1) * n];
                    let fi = &fv.data()[(b * cin + i) * n..(b * cin + i + 1) * n];
                    let dkk = &mut dk[slab * ks..(slab + 1) * ks];
                    for &(j, out, inp, len) in &runs {
                        dkk[j] = dkk[j] + dot(&go[out..out + len], &fi[inp..inp + len]);
                    }
                }
            }
            Tensor::new(&k_shape, dk).unwrap()
        });
        vec![df, dk]
    })
}
