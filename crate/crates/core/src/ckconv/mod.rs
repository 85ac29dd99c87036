//! Continuous-kernel convolutions.
//!
//! Grid convolutions use the correlation form
//!
//! ```text
//! y[o, x] = Σ_i Σ_j f[i, x + j − a] · k[o, i, j]
//! ```
//!
//! with kernel index `j` running over the kernel extent and anchor
//! `a = K − 1` (causal) or `a = (K − 1) / 2` (centered) per axis. Kernel
//! index `j` is sampled at coordinate `linspace(-1, 1, K)[j]`, so for causal
//! kernels `+1` is the current step and `-1` the oldest offset. Outputs keep
//! the input's spatial extent ("same" zero padding).

mod direct;
mod fft;
mod flex;
mod point;

pub use direct::conv_direct;
pub use fft::conv_fft;
pub use flex::{kernel_extent_for, FlexConfig, SepFlexConv};
pub use point::{conv_pointcloud, knn, neighbor_conv, Neighborhood, PointConvConfig};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{numel, Scalar, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    Zeros,
    /// Periodic boundary; direct backend only.
    Circular,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConvBackend {
    Direct,
    Fft,
    /// FFT when the direct cost `|Ω(f)|·|Ω(k)|` exceeds a fixed threshold.
    Auto,
}

/// Geometry of one grid convolution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub dim: usize,
    pub n_in: usize,
    pub n_out: usize,
    pub causal: bool,
    pub kernel_extent: Vec<usize>,
    pub padding: Padding,
    /// Depthwise: kernel `[n_in, ks...]`, output channels equal input channels.
    pub separable: bool,
}

impl ConvSpec {
    pub fn new(dim: usize, n_in: usize, n_out: usize, kernel_extent: &[usize]) -> Self {
        ConvSpec {
            dim,
            n_in,
            n_out,
            causal: false,
            kernel_extent: kernel_extent.to_vec(),
            padding: Padding::Zeros,
            separable: false,
        }
    }

    pub fn causal(mut self, causal: bool) -> Self {
        self.causal = causal;
        self
    }

    pub fn separable(mut self, separable: bool) -> Self {
        self.separable = separable;
        self
    }

    pub fn padding(mut self, padding: Padding) -> Self {
        self.padding = padding;
        self
    }

    /// Number of kernel offsets `|Ω(k)|`.
    pub fn support(&self) -> usize {
        numel(&self.kernel_extent)
    }

    pub fn anchor(&self) -> Vec<usize> {
        self.kernel_extent
            .iter()
            .map(|&k| if self.causal { k - 1 } else { (k - 1) / 2 })
            .collect()
    }

    /// Checks this `ConvSpec` against input and kernel shapes; returns
    /// `(batch, spatial extents)`.
    pub(crate) fn check(&self, op: &'static str, f: &[usize], k: &[usize]) -> Result<(usize, Vec<usize>)> {
        let d = self.dim;
        if !(1..=3).contains(&d) {
            return Err(Error::invalid(op, format!("dim must be 1..=3, got {d}")));
        }
        if self.causal && d != 1 {
            return Err(Error::invalid(op, "causal convolution requires dim == 1"));
        }
        if self.kernel_extent.len() != d || self.kernel_extent.contains(&0) {
            return Err(Error::invalid(op, format!("kernel extent {:?} invalid for dim {d}", self.kernel_extent)));
        }
        if f.len() != d + 2 || f[1] != self.n_in {
            return Err(Error::shape(op, f, &[usize::MAX, self.n_in]));
        }
        let want_k: Vec<usize> = if self.separable {
            std::iter::once(self.n_in).chain(self.kernel_extent.iter().copied()).collect()
        } else {
            [self.n_out, self.n_in].into_iter().chain(self.kernel_extent.iter().copied()).collect()
        };
        if k != want_k.as_slice() {
            return Err(Error::shape(op, k, &want_k));
        }
        let sp = f[2..].to_vec();
        if self.kernel_extent.iter().zip(&sp).any(|(&kk, &n)| kk > n) {
            return Err(Error::invalid(
                op,
                format!("kernel extent {:?} larger than input {sp:?}", self.kernel_extent),
            ));
        }
        Ok((f[0], sp))
    }

    pub(crate) fn out_channels(&self) -> usize {
        if self.separable {
            self.n_in
        } else {
            self.n_out
        }
    }
}

/// Direct cost above which [`ConvBackend::Auto`] switches to the FFT path.
const AUTO_FFT_THRESHOLD: usize = 1 << 15;

/// Dispatches to [`conv_direct`] or [`conv_fft`].
pub fn conv<'t, S: Scalar>(f: Var<'t, S>, k: Var<'t, S>, spec: &ConvSpec, backend: ConvBackend) -> Result<Var<'t, S>> {
    let use_fft = match backend {
        ConvBackend::Direct => false,
        ConvBackend::Fft => true,
        ConvBackend::Auto => {
            let sp: usize = f.shape()[2..].iter().product();
            spec.padding == Padding::Zeros && sp * spec.support() > AUTO_FFT_THRESHOLD
        }
    };
    if use_fft {
        conv_fft(f, k, spec)
    } else {
        conv_direct(f, k, spec)
    }
}

/// Evenly spaced kernel coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct RelativeCoords<S: Scalar> {
    /// `[P, D]`, row-major over the extents, every entry in `[-1, 1]`.
    pub coords: Tensor<S>,
    pub source_extents: Vec<usize>,
}

/// Per axis `linspace(-1, 1, n)` (a single point maps to 0), combined as a
/// row-major Cartesian product.
pub fn build_relative_coords<S: Scalar>(extents: &[usize], causal: bool) -> Result<RelativeCoords<S>> {
    if extents.is_empty() || extents.contains(&0) {
        return Err(Error::invalid("build_relative_coords", format!("extents must be >= 1, got {extents:?}")));
    }
    if causal && extents.len() != 1 {
        return Err(Error::invalid("build_relative_coords", "causal coordinates are one-dimensional"));
    }
    let d = extents.len();
    let p = numel(extents);
    let axis = |n: usize, i: usize| if n == 1 { 0.0 } else { -1.0 + 2.0 * i as f64 / (n - 1) as f64 };
    let mut data = Vec::with_capacity(p * d);
    let mut idx = vec![0usize; d];
    for _ in 0..p {
        for (ax, &i) in idx.iter().enumerate() {
            data.push(S::cast(axis(extents[ax], i)));
        }
        for ax in (0..d).rev() {
            idx[ax] += 1;
            if idx[ax] < extents[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
    Ok(RelativeCoords {
        coords: Tensor::new(&[p, d], data)?,
        source_extents: extents.to_vec(),
    })
}

/// Enumerates, for every kernel element, the maximal contiguous runs along
/// the last spatial axis where output `out..out+len` reads input
/// `inp..inp+len`. Returned as `(kernel index, out, inp, len)`.
pub(crate) fn runs(sp: &[usize], ks: &[usize], anchor: &[usize], circular: bool) -> Vec<(usize, usize, usize, usize)> {
    let r = sp.len();
    let n = sp[r - 1];
    let outer: usize = sp[..r - 1].iter().product();
    let mut out = Vec::new();
    let mut j = vec![0usize; r];
    let mut p = vec![0usize; r.saturating_sub(1)];
    for kidx in 0..numel(ks) {
        let off: Vec<isize> = j.iter().zip(anchor).map(|(&j, &a)| j as isize - a as isize).collect();
        p.iter_mut().for_each(|v| *v = 0);
        for po in 0..outer {
            let mut q_flat = 0usize;
            let mut valid = true;
            for d in 0..r - 1 {
                let mut q = p[d] as isize + off[d];
                let nd = sp[d] as isize;
                if circular {
                    q = q.rem_euclid(nd);
                } else if q < 0 || q >= nd {
                    valid = false;
                    break;
                }
                q_flat = q_flat * sp[d] + q as usize;
            }
            if valid {
                let (ob, ib) = (po * n, q_flat * n);
                let o = off[r - 1];
                if circular {
                    let s = o.rem_euclid(n as isize) as usize;
                    out.push((kidx, ob, ib + s, n - s));
                    if s > 0 {
                        out.push((kidx, ob + n - s, ib, s));
                    }
                } else {
                    let x0 = (-o).max(0) as usize;
                    let x1 = (n as isize).min(n as isize - o);
                    if x1 > x0 as isize {
                        let x1 = x1 as usize;
                        out.push((kidx, ob + x0, (ib as isize + x0 as isize + o) as usize, x1 - x0));
                    }
                }
            }
            for d in (0..r - 1).rev() {
                p[d] += 1;
                if p[d] < sp[d] {
                    break;
                }
                p[d] = 0;
            }
        }
        for d in (0..r).rev() {
            j[d] += 1;
            if j[d] < ks[d] {
                break;
            }
            j[d] = 0;
        }
    }
    out
}
