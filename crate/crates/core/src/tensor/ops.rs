//! Differentiable primitives.

use std::rc::Rc;

use super::shape::{broadcast_offsets, expand, permute, reduce_to};
use super::{broadcast_shapes, numel, Scalar, Tape, Tensor, Var};
use crate::error::{Error, Result};

fn zip_broadcast<S: Scalar>(
    a: &Tensor<S>,
    b: &Tensor<S>,
    out_shape: &[usize],
    f: impl Fn(S, S) -> S,
) -> Tensor<S> {
    let data = if a.shape() == b.shape() {
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect()
    } else if b.numel() == 1 && a.shape() == out_shape {
        let y = b.data()[0];
        a.data().iter().map(|&x| f(x, y)).collect()
    } else {
        let oa = broadcast_offsets(out_shape, a.shape());
        let ob = broadcast_offsets(out_shape, b.shape());
        let (da, db) = (a.data(), b.data());
        oa.iter().zip(&ob).map(|(&i, &j)| f(da[i], db[j])).collect()
    };
    Tensor::new(out_shape, data).expect("zip_broadcast")
}

fn unary_map<S: Scalar>(x: &Tensor<S>, f: impl Fn(S) -> S) -> Tensor<S> {
    x.map(f)
}

/// C[m,n] += A[m,k] · B[k,n]
pub(crate) fn gemm_nn<S: Scalar>(a: &[S], b: &[S], c: &mut [S], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == S::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv = *cv + av * bv;
            }
        }
    }
}

/// C[m,n] += A[m,k] · B[n,k]ᵀ
pub(crate) fn gemm_nt<S: Scalar>(a: &[S], b: &[S], c: &mut [S], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut acc = S::zero();
            for (&x, &y) in arow.iter().zip(brow) {
                acc = acc + x * y;
            }
            c[i * n + j] = c[i * n + j] + acc;
        }
    }
}

/// C[m,n] += A[k,m]ᵀ · B[k,n]
pub(crate) fn gemm_tn<S: Scalar>(a: &[S], b: &[S], c: &mut [S], m: usize, k: usize, n: usize) {
    for p in 0..k {
        let brow = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let av = a[p * m + i];
            if av == S::zero() {
                continue;
            }
            let crow = &mut c[i * n..(i + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv = *cv + av * bv;
            }
        }
    }
}

pub(crate) fn gelu_scalar<S: Scalar>(x: S) -> S {
    let v = x.as_f64();
    S::cast(0.5 * v * (1.0 + libm::erf(v / std::f64::consts::SQRT_2)))
}

pub(crate) fn gelu_grad_scalar<S: Scalar>(x: S) -> S {
    let v = x.as_f64();
    let cdf = 0.5 * (1.0 + libm::erf(v / std::f64::consts::SQRT_2));
    let pdf = (-0.5 * v * v).exp() / (2.0 * std::f64::consts::PI).sqrt();
    S::cast(cdf + v * pdf)
}

fn axes_shape(shape: &[usize], axes: &[usize]) -> Vec<usize> {
    shape
        .iter()
        .enumerate()
        .map(|(i, &d)| if axes.contains(&i) { 1 } else { d })
        .collect()
}

impl<'t, S: Scalar> Var<'t, S> {
    fn binary(
        self,
        other: Var<'t, S>,
        op: &'static str,
        f: impl Fn(S, S) -> S,
    ) -> Result<(Tensor<S>, Rc<Tensor<S>>, Rc<Tensor<S>>, Vec<usize>)> {
        let a = self.value();
        let b = other.value();
        let out_shape = broadcast_shapes(a.shape(), b.shape())
            .ok_or_else(|| Error::shape(op, a.shape(), b.shape()))?;
        let out = zip_broadcast(&a, &b, &out_shape, f);
        Ok((out, a, b, out_shape))
    }

    pub fn add(self, other: Var<'t, S>) -> Result<Var<'t, S>> {
        let (out, a, b, _) = self.binary(other, "add", |x, y| x + y)?;
        let (sa, sb) = (a.shape().to_vec(), b.shape().to_vec());
        self.tape.push_op("add", out, &[self, other], move |g, need| {
            vec![
                need[0].then(|| reduce_to(g, &sa)),
                need[1].then(|| reduce_to(g, &sb)),
            ]
        })
    }

    pub fn sub(self, other: Var<'t, S>) -> Result<Var<'t, S>> {
        let (out, a, b, _) = self.binary(other, "sub", |x, y| x - y)?;
        let (sa, sb) = (a.shape().to_vec(), b.shape().to_vec());
        self.tape.push_op("sub", out, &[self, other], move |g, need| {
            vec![
                need[0].then(|| reduce_to(g, &sa)),
                need[1].then(|| reduce_to(&g.map(|v| -v), &sb)),
            ]
        })
    }

    pub fn mul(self, other: Var<'t, S>) -> Result<Var<'t, S>> {
        let (out, a, b, os) = self.binary(other, "mul", |x, y| x * y)?;
        self.tape.push_op("mul", out, &[self, other], move |g, need| {
            vec![
                need[0].then(|| reduce_to(&zip_broadcast(g, &b, &os, |x, y| x * y), a.shape())),
                need[1].then(|| reduce_to(&zip_broadcast(g, &a, &os, |x, y| x * y), b.shape())),
            ]
        })
    }

    pub fn div(self, other: Var<'t, S>) -> Result<Var<'t, S>> {
        if self.tape.checks() && other.with_value(|b| b.data().iter().any(|v| *v == S::zero())) {
            return Err(Error::DivisionByZero { op: "div" });
        }
        let (out, a, b, os) = self.binary(other, "div", |x, y| x / y)?;
        self.tape.push_op("div", out, &[self, other], move |g, need| {
            let ga = need[0].then(|| reduce_to(&zip_broadcast(g, &b, &os, |x, y| x / y), a.shape()));
            let gb = need[1].then(|| {
                let ea = expand(&a, &os);
                let eb = expand(&b, &os);
                let t = Tensor::new(
                    &os,
                    g.data()
                        .iter()
                        .zip(ea.data())
                        .zip(eb.data())
                        .map(|((&gv, &av), &bv)| -gv * av / (bv * bv))
                        .collect(),
                )
                .expect("div grad");
                reduce_to(&t, b.shape())
            });
            vec![ga, gb]
        })
    }

    pub fn scale(self, s: S) -> Result<Var<'t, S>> {
        let out = self.with_value(|x| x.map(|v| v * s));
        self.tape.push_op("scale", out, &[self], move |g, _| vec![Some(g.map(|v| v * s))])
    }

    pub fn add_scalar(self, s: S) -> Result<Var<'t, S>> {
        let out = self.with_value(|x| x.map(|v| v + s));
        self.tape.push_op("add_scalar", out, &[self], move |g, _| vec![Some(g.clone())])
    }

    pub fn neg(self) -> Result<Var<'t, S>> {
        self.scale(-S::one())
    }

    /// Matrix product of `[m,k]` and `[k,n]`.
    pub fn matmul(self, other: Var<'t, S>) -> Result<Var<'t, S>> {
        let a = self.value();
        let b = other.value();
        if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
            return Err(Error::shape("matmul", a.shape(), b.shape()));
        }
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let mut c = vec![S::zero(); m * n];
        gemm_nn(a.data(), b.data(), &mut c, m, k, n);
        let out = Tensor::new(&[m, n], c)?;
        self.tape.push_op("matmul", out, &[self, other], move |g, need| {
            let ga = need[0].then(|| {
                let mut d = vec![S::zero(); m * k];
                gemm_nt(g.data(), b.data(), &mut d, m, n, k);
                Tensor::new(&[m, k], d).unwrap()
            });
            let gb = need[1].then(|| {
                let mut d = vec![S::zero(); k * n];
                gemm_tn(a.data(), g.data(), &mut d, k, m, n);
                Tensor::new(&[k, n], d).unwrap()
            });
            vec![ga, gb]
        })
    }

    /// `x · wᵀ + b` for `x: [n, in]`, `w: [out, in]`, `b: [out]`.
    pub fn linear(self, weight: Var<'t, S>, bias: Option<Var<'t, S>>) -> Result<Var<'t, S>> {
        let x = self.value();
        let w = weight.value();
        if x.rank() != 2 || w.rank() != 2 || x.shape()[1] != w.shape()[1] {
            return Err(Error::shape("linear", x.shape(), w.shape()));
        }
        let (n, fin, fout) = (x.shape()[0], x.shape()[1], w.shape()[0]);
        let mut y = vec![S::zero(); n * fout];
        if let Some(b) = bias {
            let bv = b.value();
            if bv.shape() != [fout] {
                return Err(Error::shape("linear bias", bv.shape(), &[fout]));
            }
            for row in y.chunks_exact_mut(fout) {
                row.copy_from_slice(bv.data());
            }
        }
        gemm_nt(x.data(), w.data(), &mut y, n, fin, fout);
        let out = Tensor::new(&[n, fout], y)?;
        let mut parents = vec![self, weight];
        parents.extend(bias);
        self.tape.push_op("linear", out, &parents, move |g, need| {
            let gx = need[0].then(|| {
                let mut d = vec![S::zero(); n * fin];
                gemm_nn(g.data(), w.data(), &mut d, n, fout, fin);
                Tensor::new(&[n, fin], d).unwrap()
            });
            let gw = need[1].then(|| {
                let mut d = vec![S::zero(); fout * fin];
                gemm_tn(g.data(), x.data(), &mut d, fout, n, fin);
                Tensor::new(&[fout, fin], d).unwrap()
            });
            let mut out = vec![gx, gw];
            if need.len() > 2 {
                out.push(need[2].then(|| reduce_to(g, &[fout])));
            }
            out
        })
    }

    /// Pointwise linear map over axis 1 of `[B, C, ...]`: `y[b,o,s] = Σ_c w[o,c]·x[b,c,s] + bias[o]`.
    pub fn channel_mix(self, weight: Var<'t, S>, bias: Option<Var<'t, S>>) -> Result<Var<'t, S>> {
        let x = self.value();
        let w = weight.value();
        if x.rank() < 2 || w.rank() != 2 || x.shape()[1] != w.shape()[1] {
            return Err(Error::shape("channel_mix", x.shape(), w.shape()));
        }
        let batch = x.shape()[0];
        let (cin, cout) = (w.shape()[1], w.shape()[0]);
        let sp: usize = x.shape()[2..].iter().product();
        let mut out_shape = x.shape().to_vec();
        out_shape[1] = cout;
        let mut y = vec![S::zero(); batch * cout * sp];
        if let Some(b) = bias {
            let bv = b.value();
            if bv.shape() != [cout] {
                return Err(Error::shape("channel_mix bias", bv.shape(), &[cout]));
            }
            for (i, chunk) in y.chunks_exact_mut(sp).enumerate() {
                let v = bv.data()[i % cout];
                chunk.iter_mut().for_each(|e| *e = v);
            }
        }
        for bi in 0..batch {
            gemm_nn(
                w.data(),
                &x.data()[bi * cin * sp..(bi + 1) * cin * sp],
                &mut y[bi * cout * sp..(bi + 1) * cout * sp],
                cout,
                cin,
                sp,
            );
        }
        let out = Tensor::new(&out_shape, y)?;
        let mut parents = vec![self, weight];
        parents.extend(bias);
        self.tape.push_op("channel_mix", out, &parents, move |g, need| {
            let gx = need[0].then(|| {
                let mut d = vec![S::zero(); batch * cin * sp];
                for bi in 0..batch {
                    gemm_tn(
                        w.data(),
                        &g.data()[bi * cout * sp..(bi + 1) * cout * sp],
                        &mut d[bi * cin * sp..(bi + 1) * cin * sp],
                        cin,
                        cout,
                        sp,
                    );
                }
                Tensor::new(x.shape(), d).unwrap()
            });
            let gw = need[1].then(|| {
                let mut d = vec![S::zero(); cout * cin];
                for bi in 0..batch {
                    gemm_nt(
                        &g.data()[bi * cout * sp..(bi + 1) * cout * sp],
                        &x.data()[bi * cin * sp..(bi + 1) * cin * sp],
                        &mut d,
                        cout,
                        sp,
                        cin,
                    );
                }
                Tensor::new(&[cout, cin], d).unwrap()
            });
            let mut out = vec![gx, gw];
            if need.len() > 2 {
                out.push(need[2].then(|| {
                    let mut d = vec![S::zero(); cout];
                    for (i, chunk) in g.data().chunks_exact(sp).enumerate() {
                        d[i % cout] = d[i % cout] + chunk.iter().copied().sum();
                    }
                    Tensor::new(&[cout], d).unwrap()
                }));
            }
            out
        })
    }

    pub fn sum(self) -> Result<Var<'t, S>> {
        let x = self.value();
        let shape = x.shape().to_vec();
        let out = Tensor::scalar(x.sum());
        self.tape.push_op("sum", out, &[self], move |g, _| {
            vec![Some(Tensor::full(&shape, g.item()))]
        })
    }

    pub fn mean(self) -> Result<Var<'t, S>> {
        let n = self.with_value(|x| x.numel());
        self.sum()?.scale(S::cast(1.0 / n.max(1) as f64))
    }

    /// Sums over `axes`; reduced axes are kept with extent 1 when `keepdim`.
    pub fn sum_axes(self, axes: &[usize], keepdim: bool) -> Result<Var<'t, S>> {
        let x = self.value();
        if let Some(&bad) = axes.iter().find(|&&a| a >= x.rank()) {
            return Err(Error::invalid("sum_axes", format!("axis {bad} out of range for {:?}", x.shape())));
        }
        let kept = axes_shape(x.shape(), axes);
        let reduced = reduce_to(&x, &kept);
        let out_shape: Vec<usize> = if keepdim {
            kept.clone()
        } else {
            x.shape()
                .iter()
                .enumerate()
                .filter(|(i, _)| !axes.contains(i))
                .map(|(_, &d)| d)
                .collect()
        };
        let out = reduced.reshape(&out_shape)?;
        let in_shape = x.shape().to_vec();
        self.tape.push_op("sum_axes", out, &[self], move |g, _| {
            let g = g.clone().reshape(&kept).expect("sum_axes grad");
            vec![Some(expand(&g, &in_shape))]
        })
    }

    pub fn mean_axes(self, axes: &[usize], keepdim: bool) -> Result<Var<'t, S>> {
        let shape = self.shape();
        let n: usize = axes.iter().map(|&a| shape.get(a).copied().unwrap_or(1)).product();
        self.sum_axes(axes, keepdim)?.scale(S::cast(1.0 / n.max(1) as f64))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t, S>> {
        let x = self.value();
        if numel(shape) != x.numel() {
            return Err(Error::shape("reshape", x.shape(), shape));
        }
        let in_shape = x.shape().to_vec();
        let out = (*x).clone().reshape(shape)?;
        self.tape.push_op("reshape", out, &[self], move |g, _| {
            vec![Some(g.clone().reshape(&in_shape).expect("reshape grad"))]
        })
    }

    /// Axis permutation; `perm[i]` is the input axis that becomes output axis `i`.
    pub fn transpose(self, perm: &[usize]) -> Result<Var<'t, S>> {
        let x = self.value();
        let mut seen = vec![false; x.rank()];
        if perm.len() != x.rank() || perm.iter().any(|&p| p >= x.rank() || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::invalid("transpose", format!("{perm:?} is not a permutation of rank {}", x.rank())));
        }
        let out = permute(&x, perm);
        let mut inv = vec![0; perm.len()];
        for (i, &p) in perm.iter().enumerate() {
            inv[p] = i;
        }
        self.tape.push_op("transpose", out, &[self], move |g, _| vec![Some(permute(g, &inv))])
    }

    pub fn broadcast_to(self, shape: &[usize]) -> Result<Var<'t, S>> {
        let x = self.value();
        match broadcast_shapes(x.shape(), shape) {
            Some(s) if s == shape => {}
            _ => return Err(Error::shape("broadcast_to", x.shape(), shape)),
        }
        let out = expand(&x, shape);
        let in_shape = x.shape().to_vec();
        self.tape.push_op("broadcast_to", out, &[self], move |g, _| vec![Some(reduce_to(g, &in_shape))])
    }

    /// Half-open range `[start, end)` along `axis`.
    pub fn slice(self, axis: usize, start: usize, end: usize) -> Result<Var<'t, S>> {
        let x = self.value();
        if axis >= x.rank() || start > end || end > x.shape()[axis] {
            return Err(Error::invalid("slice", format!("[{start},{end}) on axis {axis} of {:?}", x.shape())));
        }
        let outer: usize = x.shape()[..axis].iter().product();
        let inner: usize = x.shape()[axis + 1..].iter().product();
        let n = x.shape()[axis];
        let len = end - start;
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * n + start) * inner;
            data.extend_from_slice(&x.data()[base..base + len * inner]);
        }
        let mut shape = x.shape().to_vec();
        shape[axis] = len;
        let out = Tensor::new(&shape, data)?;
        let in_shape = x.shape().to_vec();
        self.tape.push_op("slice", out, &[self], move |g, _| {
            let mut d = vec![S::zero(); numel(&in_shape)];
            for o in 0..outer {
                let base = (o * n + start) * inner;
                d[base..base + len * inner].copy_from_slice(&g.data()[o * len * inner..(o + 1) * len * inner]);
            }
            vec![Some(Tensor::new(&in_shape, d).unwrap())]
        })
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(parts: &[Var<'t, S>], axis: usize) -> Result<Var<'t, S>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("concat", "no inputs"))?;
        let values: Vec<Rc<Tensor<S>>> = parts.iter().map(|p| p.value()).collect();
        let base = values[0].shape().to_vec();
        if axis >= base.len() {
            return Err(Error::invalid("concat", format!("axis {axis} out of range for {base:?}")));
        }
        for v in &values[1..] {
            let ok = v.rank() == base.len()
                && v.shape().iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(Error::shape("concat", &base, v.shape()));
            }
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let widths: Vec<usize> = values.iter().map(|v| v.shape()[axis]).collect();
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (v, &w) in values.iter().zip(&widths) {
                data.extend_from_slice(&v.data()[o * w * inner..(o + 1) * w * inner]);
            }
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let out = Tensor::new(&shape, data)?;
        let shapes: Vec<Vec<usize>> = values.iter().map(|v| v.shape().to_vec()).collect();
        first.tape.push_op("concat", out, parts, move |g, need| {
            let mut grads: Vec<Vec<S>> = shapes.iter().map(|s| Vec::with_capacity(numel(s))).collect();
            for o in 0..outer {
                let mut off = o * total * inner;
                for (gi, &w) in grads.iter_mut().zip(&widths) {
                    gi.extend_from_slice(&g.data()[off..off + w * inner]);
                    off += w * inner;
                }
            }
            grads
                .into_iter()
                .zip(&shapes)
                .zip(need)
                .map(|((d, s), &n)| n.then(|| Tensor::new(s, d).unwrap()))
                .collect()
        })
    }

    /// Selects rows (axis 0) by index; repeated indices are allowed.
    pub fn gather(self, indices: &[usize]) -> Result<Var<'t, S>> {
        let x = self.value();
        if x.rank() == 0 {
            return Err(Error::invalid("gather", "scalar input"));
        }
        let rows = x.shape()[0];
        let row: usize = x.shape()[1..].iter().product();
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(Error::invalid("gather", format!("index {bad} out of range for {rows} rows")));
        }
        let mut data = Vec::with_capacity(indices.len() * row);
        for &i in indices {
            data.extend_from_slice(&x.data()[i * row..(i + 1) * row]);
        }
        let mut shape = x.shape().to_vec();
        shape[0] = indices.len();
        let out = Tensor::new(&shape, data)?;
        let in_shape = x.shape().to_vec();
        let idx = indices.to_vec();
        self.tape.push_op("gather", out, &[self], move |g, _| {
            let mut d = vec![S::zero(); numel(&in_shape)];
            for (k, &i) in idx.iter().enumerate() {
                for (a, &b) in d[i * row..(i + 1) * row].iter_mut().zip(&g.data()[k * row..(k + 1) * row]) {
                    *a = *a + b;
                }
            }
            vec![Some(Tensor::new(&in_shape, d).unwrap())]
        })
    }

    fn unary(
        self,
        op: &'static str,
        f: impl Fn(S) -> S,
        df: impl Fn(S, S) -> S + 'static,
    ) -> Result<Var<'t, S>> {
        let x = self.value();
        let out = unary_map(&x, f);
        let y = Rc::new(out.clone());
        self.tape.push_op(op, out, &[self], move |g, _| {
            let d = x
                .data()
                .iter()
                .zip(y.data())
                .zip(g.data())
                .map(|((&xv, &yv), &gv)| gv * df(xv, yv))
                .collect();
            vec![Some(Tensor::new(x.shape(), d).unwrap())]
        })
    }

    pub fn sin(self) -> Result<Var<'t, S>> {
        self.unary("sin", |v| v.sin(), |x, _| x.cos())
    }

    pub fn cos(self) -> Result<Var<'t, S>> {
        self.unary("cos", |v| v.cos(), |x, _| -x.sin())
    }

    pub fn exp(self) -> Result<Var<'t, S>> {
        self.unary("exp", |v| v.exp(), |_, y| y)
    }

    pub fn ln(self) -> Result<Var<'t, S>> {
        self.unary("ln", |v| v.ln(), |x, _| S::one() / x)
    }

    pub fn sqrt(self) -> Result<Var<'t, S>> {
        self.unary("sqrt", |v| v.sqrt(), |_, y| S::cast(0.5) / y)
    }

    pub fn relu(self) -> Result<Var<'t, S>> {
        self.unary(
            "relu",
            |v| v.max(S::zero()),
            |x, _| if x > S::zero() { S::one() } else { S::zero() },
        )
    }

    pub fn gelu(self) -> Result<Var<'t, S>> {
        self.unary("gelu", gelu_scalar, |x, _| gelu_grad_scalar(x))
    }

    pub fn powf(self, p: S) -> Result<Var<'t, S>> {
        self.unary("power", move |v| v.powf(p), move |x, _| p * x.powf(p - S::one()))
    }

    pub fn square(self) -> Result<Var<'t, S>> {
        self.unary("square", |v| v * v, |x, _| S::cast(2.0) * x)
    }

    /// Mean softmax cross-entropy of `[B, K]` logits against class indices.
    pub fn cross_entropy(self, labels: &[usize]) -> Result<Var<'t, S>> {
        let z = self.value();
        if z.rank() != 2 || z.shape()[0] != labels.len() {
            return Err(Error::shape("cross_entropy", z.shape(), &[labels.len()]));
        }
        let (b, k) = (z.shape()[0], z.shape()[1]);
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::invalid("cross_entropy", format!("label {bad} >= {k} classes")));
        }
        let mut probs = vec![S::zero(); b * k];
        let mut loss = 0.0f64;
        for i in 0..b {
            let row = &z.data()[i * k..(i + 1) * k];
            let m = row.iter().copied().fold(S::neg_infinity(), S::max);
            let mut s = S::zero();
            for (p, &v) in probs[i * k..(i + 1) * k].iter_mut().zip(row) {
                *p = (v - m).exp();
                s = s + *p;
            }
            for p in &mut probs[i * k..(i + 1) * k] {
                *p = *p / s;
            }
            loss += (s.ln() + m - row[labels[i]]).as_f64();
        }
        let out = Tensor::scalar(S::cast(loss / b as f64));
        let labels = labels.to_vec();
        self.tape.push_op("cross_entropy", out, &[self], move |g, _| {
            let scale = g.item() / S::cast(b as f64);
            let mut d = probs.clone();
            for (i, &l) in labels.iter().enumerate() {
                d[i * k + l] = d[i * k + l] - S::one();
            }
            d.iter_mut().for_each(|v| *v = *v * scale);
            vec![Some(Tensor::new(&[b, k], d).unwrap())]
        })
    }
}

impl<S: Scalar> Tape<S> {
    /// `Σ_i xs[i]` in one node.
    pub fn add_all<'t>(&'t self, xs: &[Var<'t, S>]) -> Result<Var<'t, S>> {
        let mut it = xs.iter();
        let first = *it.next().ok_or_else(|| Error::invalid("add_all", "no inputs"))?;
        it.try_fold(first, |acc, &x| acc.add(x))
    }
}
