//! Convolutions over irregular point sets and sparse voxel grids.
//!
//! Both reduce to a gather convolution over an explicit pair list: output
//! point `p` averages `f[q] ⊙ k[t]` over its pairs `(p, q, t)`. The mean
//! does not depend on sampling density, so a network trained on voxels
//! sees the same local averages on the underlying points. Kernel row `t` holds the coordinate `(x_q − x_p)/r` for
//! a kernel radius `r`, matching the grid convention that kernel coordinates
//! grow with the input position.

use serde::{Deserialize, Serialize};

use super::{build_relative_coords, SepFlexConv};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointConvConfig {
    pub k_neighbors: usize,
    /// Offsets are divided by this before evaluating the kernel.
    pub radius: f64,
    /// Pairs whose scaled offset leaves `[-reach, reach]^3` are dropped;
    /// kept coordinates are clamped to `[-1, 1]^3`. A voxel window of odd
    /// extent `w` bins offsets up to `w / (w − 1)` onto its boundary cells.
    pub reach: f64,
}

impl PointConvConfig {
    /// Unit reach: only offsets inside the kernel domain.
    pub fn new(k_neighbors: usize, radius: f64) -> Self {
        PointConvConfig {
            k_neighbors,
            radius,
            reach: 1.0,
        }
    }

    pub fn with_reach(mut self, reach: f64) -> Self {
        self.reach = reach;
        self
    }
}

/// Pair list shared by every layer of a network for one batch.
#[derive(Clone, Debug)]
pub struct Neighborhood {
    pub batch: usize,
    /// Points per cloud (padded length).
    pub n_points: usize,
    /// `(cloud, output point, input point, kernel row)`.
    pub pairs: Vec<(u32, u32, u32, u32)>,
    /// Per `(cloud, point)` scale of the neighborhood sum: one over the
    /// point's pair count (zero for padding), `[batch · n_points]`.
    pub weight: Vec<f64>,
    /// `[rows, D]` kernel coordinates.
    pub kernel_coords: Tensor<f64>,
    /// `[batch · n_points]`, false for padding.
    pub valid: Vec<bool>,
}

/// Indices of the `k` nearest points to `points[i]` (including itself),
/// Euclidean, ties broken by index. `points` is `[P, 3]` flattened.
pub fn knn(points: &[f64], i: usize, k: usize) -> Vec<usize> {
    let p = points.len() / 3;
    let xi = &points[i * 3..i * 3 + 3];
    let mut d: Vec<(f64, usize)> = (0..p)
        .map(|j| {
            let xj = &points[j * 3..j * 3 + 3];
            let dist = (0..3).map(|a| (xi[a] - xj[a]).powi(2)).sum::<f64>();
            (dist, j)
        })
        .collect();
    d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    d.truncate(k);
    d.into_iter().map(|(_, j)| j).collect()
}

impl Neighborhood {
    /// k-nearest-neighbor pairs for point clouds `positions: [B, P, 3]`.
    /// Neighborhood sums are divided by the number of neighbors kept, which
    /// is `k_neighbors` unless the radius drops some.
    pub fn points(positions: &Tensor<f64>, cfg: &PointConvConfig) -> Result<Self> {
        let s = positions.shape();
        if s.len() != 3 || s[2] != 3 {
            return Err(Error::invalid("conv_pointcloud", format!("positions must be [B, P, 3], got {s:?}")));
        }
        let (batch, p) = (s[0], s[1]);
        if cfg.k_neighbors == 0 || cfg.k_neighbors > p {
            return Err(Error::invalid(
                "conv_pointcloud",
                format!("k_neighbors = {} must be in 1..={p}", cfg.k_neighbors),
            ));
        }
        if !positions.all_finite() {
            return Err(Error::NonFinite { op: "conv_pointcloud" });
        }
        if !(cfg.radius > 0.0) || !(cfg.reach >= 1.0) {
            return Err(Error::invalid("conv_pointcloud", "radius must be positive and reach >= 1"));
        }
        let mut pairs = Vec::new();
        let mut coords = Vec::new();
        for b in 0..batch {
            let pts = &positions.data()[b * p * 3..(b + 1) * p * 3];
            for i in 0..p {
                for j in knn(pts, i, cfg.k_neighbors) {
                    let c: Vec<f64> = (0..3).map(|a| (pts[j * 3 + a] - pts[i * 3 + a]) / cfg.radius).collect();
                    if c.iter().any(|v| v.abs() > cfg.reach + 1e-9) {
                        continue;
                    }
                    pairs.push((b as u32, i as u32, j as u32, (coords.len() / 3) as u32));
                    coords.extend(c.iter().map(|v| v.clamp(-1.0, 1.0)));
                }
            }
        }
        let rows = coords.len() / 3;
        Ok(Neighborhood {
            batch,
            n_points: p,
            weight: mean_weights(batch * p, p, &pairs),
            pairs,
            kernel_coords: Tensor::new(&[rows, 3], coords)?,
            valid: vec![true; batch * p],
        })
    }

    /// Pairs between occupied voxels of each cloud within a cubic window of
    /// `extent` (odd) voxels. Kernel rows are the `extent³` lattice offsets.
    /// `occupied[b]` lists integer voxel coordinates; clouds are padded to
    /// the longest list. Sums are divided by the occupied count in the window.
    pub fn voxels(occupied: &[Vec<[usize; 3]>], extent: usize) -> Result<Self> {
        if extent % 2 == 0 {
            return Err(Error::invalid("voxel_conv", format!("kernel extent must be odd, got {extent}")));
        }
        let batch = occupied.len();
        let p = occupied.iter().map(Vec::len).max().unwrap_or(0);
        if p == 0 {
            return Err(Error::invalid("voxel_conv", "no occupied voxels"));
        }
        let a = (extent / 2) as isize;
        let mut pairs = Vec::new();
        let mut valid = vec![false; batch * p];
        for (b, occ) in occupied.iter().enumerate() {
            if occ.is_empty() {
                return Err(Error::invalid("voxel_conv", format!("cloud {b} has no occupied voxels")));
            }
            for (i, vi) in occ.iter().enumerate() {
                valid[b * p + i] = true;
                for (j, vj) in occ.iter().enumerate() {
                    let d: Vec<isize> = (0..3).map(|ax| vj[ax] as isize - vi[ax] as isize).collect();
                    if d.iter().any(|v| v.abs() > a) {
                        continue;
                    }
                    let t = d.iter().fold(0isize, |acc, &v| acc * extent as isize + v + a) as u32;
                    pairs.push((b as u32, i as u32, j as u32, t));
                }
            }
        }
        Ok(Neighborhood {
            batch,
            n_points: p,
            weight: mean_weights(batch * p, p, &pairs),
            pairs,
            kernel_coords: build_relative_coords::<f64>(&[extent; 3], false)?.coords,
            valid,
        })
    }

    pub fn kernel_rows(&self) -> usize {
        self.kernel_coords.shape()[0]
    }
}

fn mean_weights(len: usize, p: usize, pairs: &[(u32, u32, u32, u32)]) -> Vec<f64> {
    let mut count = vec![0usize; len];
    for &(b, i, _, _) in pairs {
        count[b as usize * p + i as usize] += 1;
    }
    count.iter().map(|&c| if c == 0 { 0.0 } else { 1.0 / c as f64 }).collect()
}

/// Gather convolution. `f: [B, C, P]` channels-first, `kernel: [rows, C]`;
/// `y[b, c, p] = w[b, p] · Σ_{(b, p, q, t)} f[b, c, q] · kernel[t, c]`.
pub fn neighbor_conv<'t, S: Scalar>(f: Var<'t, S>, kernel: Var<'t, S>, nb: &Neighborhood) -> Result<Var<'t, S>> {
    let fv = f.value();
    let kv = kernel.value();
    let fs = fv.shape();
    if fs.len() != 3 || fs[0] != nb.batch || fs[2] != nb.n_points {
        return Err(Error::shape("neighbor_conv", fs, &[nb.batch, usize::MAX, nb.n_points]));
    }
    let c = fs[1];
    if kv.shape() != [nb.kernel_rows(), c] {
        return Err(Error::shape("neighbor_conv", kv.shape(), &[nb.kernel_rows(), c]));
    }
    let (batch, p) = (nb.batch, nb.n_points);
    // channels-last copy so the inner loop runs over contiguous channels
    let mut fcl = vec![S::zero(); batch * p * c];
    for b in 0..batch {
        for ch in 0..c {
            for i in 0..p {
                fcl[(b * p + i) * c + ch] = fv.data()[(b * c + ch) * p + i];
            }
        }
    }
    let mut ycl = vec![S::zero(); batch * p * c];
    for &(b, i, j, t) in &nb.pairs {
        let (b, i, j, t) = (b as usize, i as usize, j as usize, t as usize);
        let src = &fcl[(b * p + j) * c..(b * p + j + 1) * c];
        let kr = &kv.data()[t * c..(t + 1) * c];
        let dst = &mut ycl[(b * p + i) * c..(b * p + i + 1) * c];
        for ((d, &s), &k) in dst.iter_mut().zip(src).zip(kr) {
            *d = *d + s * k;
        }
    }
    let w: Vec<S> = nb.weight.iter().map(|&v| S::cast(v)).collect();
    let mut y = vec![S::zero(); batch * c * p];
    for b in 0..batch {
        for i in 0..p {
            let wi = w[b * p + i];
            for ch in 0..c {
                y[(b * c + ch) * p + i] = ycl[(b * p + i) * c + ch] * wi;
            }
        }
    }
    let out = Tensor::new(&[batch, c, p], y)?;
    let pairs = nb.pairs.clone();
    let rows = nb.kernel_rows();
    let f_shape = fs.to_vec();
    f.tape().push_op("neighbor_conv", out, &[f, kernel], move |g, need| {
        // weighted, channels-last output gradient
        let mut gcl = vec![S::zero(); batch * p * c];
        for b in 0..batch {
            for ch in 0..c {
                for i in 0..p {
                    gcl[(b * p + i) * c + ch] = g.data()[(b * c + ch) * p + i] * w[b * p + i];
                }
            }
        }
        let mut dfcl = need[0].then(|| vec![S::zero(); batch * p * c]);
        let mut dk = need[1].then(|| vec![S::zero(); rows * c]);
        for &(b, i, j, t) in &pairs {
            let (b, i, j, t) = (b as usize, i as usize, j as usize, t as usize);
            let go = &gcl[(b * p + i) * c..(b * p + i + 1) * c];
            if let Some(df) = dfcl.as_mut() {
                let kr = &kv.data()[t * c..(t + 1) * c];
                for ((d, &gv), &k) in df[(b * p + j) * c..(b * p + j + 1) * c].iter_mut().zip(go).zip(kr) {
                    *d = *d + gv * k;
                }
            }
            if let Some(dk) = dk.as_mut() {
                let src = &fcl[(b * p + j) * c..(b * p + j + 1) * c];
                for ((d, &gv), &s) in dk[t * c..(t + 1) * c].iter_mut().zip(go).zip(src) {
                    *d = *d + gv * s;
                }
            }
        }
        let df = dfcl.map(|dfcl| {
            let mut df = vec![S::zero(); batch * c * p];
            for b in 0..batch {
                for ch in 0..c {
                    for i in 0..p {
                        df[(b * c + ch) * p + i] = dfcl[(b * p + i) * c + ch];
                    }
                }
            }
            Tensor::new(&f_shape, df).unwrap()
        });
        vec![df, dk.map(|d| Tensor::new(&[rows, c], d).unwrap())]
    })
}

/// Separable continuous convolution on point clouds.
///
/// `positions: [B, P, 3]` in `[-1, 1]^3`, `features: [B, P, n_in]`; returns
/// `[B, P, n_out]`.
pub fn conv_pointcloud<'t, S: Scalar>(
    tape: &'t Tape<S>,
    positions: &Tensor<f64>,
    features: Var<'t, S>,
    layer: &SepFlexConv<S>,
    cfg: &PointConvConfig,
) -> Result<Var<'t, S>> {
    let nb = Neighborhood::points(positions, cfg)?;
    let f = features.transpose(&[0, 2, 1])?;
    let (y, _) = layer.forward_points(tape, f, &nb)?;
    y.transpose(&[0, 2, 1])
}
