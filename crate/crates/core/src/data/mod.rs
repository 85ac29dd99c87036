//! Datasets: MNIST sequences, synthetic waveforms and shapes, voxelization.
//!
//! Every generator is deterministic for a fixed seed.

mod idx;
mod shapes;
mod voxel;
mod waveforms;

pub use idx::{load_idx, load_mnist, parse_images, parse_labels, read_maybe_gz, IdxImages, IMAGES_MAGIC, LABELS_MAGIC};
pub use shapes::{synth_shapes, ShapeClass, HALF_EXTENT, SCALE_RANGE, SHAPE_CLASSES, SPHERE_RADIUS};
pub use voxel::{voxel_center, voxel_index, voxelize, Voxelized};
pub use waveforms::{class_frequency, synth_waveforms, Waveform, WaveformConfig, MAX_FREQ};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// A signal on a regular grid, `[C, sp...]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GridSample {
    pub features: Tensor<f64>,
    pub label: usize,
}

/// Points in `[-1, 1]^3` with per-point features.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloudSample {
    /// `[P, 3]`.
    pub positions: Tensor<f64>,
    /// `[P, C]`.
    pub features: Tensor<f64>,
    pub label: usize,
}

impl PointCloudSample {
    pub fn n_points(&self) -> usize {
        self.positions.shape()[0]
    }

    pub fn point(&self, i: usize) -> [f64; 3] {
        let d = &self.positions.data()[i * 3..i * 3 + 3];
        [d[0], d[1], d[2]]
    }
}

/// Row-major raster: `[C, H, W]` to `[C, H·W]`.
pub fn flatten_to_sequence(image: &Tensor<f64>) -> Result<Tensor<f64>> {
    let s = image.shape();
    if s.len() != 3 {
        return Err(Error::invalid("flatten_to_sequence", format!("expected [C, H, W], got {s:?}")));
    }
    image.clone().reshape(&[s[0], s[1] * s[2]])
}

/// Inverse of [`flatten_to_sequence`].
pub fn unflatten(seq: &Tensor<f64>, h: usize, w: usize) -> Result<Tensor<f64>> {
    let s = seq.shape();
    if s.len() != 2 || s[1] != h * w {
        return Err(Error::invalid("unflatten", format!("cannot view {s:?} as [C, {h}, {w}]")));
    }
    seq.clone().reshape(&[s[0], h, w])
}

/// Seeded uniform permutation of `0..n`.
pub fn random_permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    p
}

pub fn inverse_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

/// `out[c, i] = seq[c, perm[i]]`.
pub fn permute_sequence(seq: &Tensor<f64>, perm: &[usize]) -> Result<Tensor<f64>> {
    let s = seq.shape();
    if s.len() != 2 || s[1] != perm.len() {
        return Err(Error::invalid(
            "permute_sequence",
            format!("permutation of length {} for sequence {s:?}", perm.len()),
        ));
    }
    let mut seen = vec![false; perm.len()];
    for &p in perm {
        if p >= perm.len() || std::mem::replace(&mut seen[p], true) {
            return Err(Error::invalid("permute_sequence", "not a permutation"));
        }
    }
    let l = s[1];
    Ok(Tensor::from_fn(s, |i| seq.data()[(i / l) * l + perm[i % l]]))
}

/// Every `factor`-th element starting at 0, per channel of `[C, L]`.
pub fn subsample_sequence(seq: &Tensor<f64>, factor: usize) -> Result<Tensor<f64>> {
    let s = seq.shape();
    if factor == 0 || s.len() != 2 || s[1] == 0 {
        return Err(Error::invalid(
            "subsample_sequence",
            format!("factor {factor} on {s:?} (need factor >= 1 and a nonempty [C, L])"),
        ));
    }
    let (c, l) = (s[0], s[1]);
    let n = l.div_ceil(factor);
    Ok(Tensor::from_fn(&[c, n], |i| seq.data()[(i / n) * l + (i % n) * factor]))
}

/// Mean pooling of `[C, H, W]` over `factor × factor` cells.
pub fn downsample_image(image: &Tensor<f64>, factor: usize) -> Result<Tensor<f64>> {
    let s = image.shape();
    if s.len() != 3 || factor == 0 || s[1] % factor != 0 || s[2] % factor != 0 {
        return Err(Error::invalid("downsample_image", format!("cannot pool {s:?} by {factor}")));
    }
    let (c, h, w) = (s[0], s[1] / factor, s[2] / factor);
    let inv = 1.0 / (factor * factor) as f64;
    Ok(Tensor::from_fn(&[c, h, w], |i| {
        let (ch, y, x) = (i / (h * w), (i / w) % h, i % w);
        let mut acc = 0.0;
        for dy in 0..factor {
            for dx in 0..factor {
                acc += image.get(&[ch, y * factor + dy, x * factor + dx]);
            }
        }
        acc * inv
    }))
}

/// Sequential MNIST: optional `factor × factor` pooling, raster flattening,
/// then an optional fixed permutation. Pixels are standardized with the
/// given mean and standard deviation.
pub fn mnist_sequences(
    images: &IdxImages,
    labels: &[u8],
    pool: usize,
    perm: Option<&[usize]>,
    (mean, std): (f64, f64),
) -> Result<Vec<GridSample>> {
    (0..images.n)
        .map(|i| {
            let img = Tensor::from_f64(&[1, images.rows, images.cols], images.image(i))?;
            let img = if pool > 1 { downsample_image(&img, pool)? } else { img };
            let mut seq = flatten_to_sequence(&img)?.map(|v| (v - mean) / std);
            if let Some(p) = perm {
                seq = permute_sequence(&seq, p)?;
            }
            Ok(GridSample {
                features: seq,
                label: labels[i] as usize,
            })
        })
        .collect()
}

/// Seeded split of `0..n` into `(train, validation)` index lists, the
/// validation part holding `n_val` indices. Both lists are sorted.
pub fn split_indices(n: usize, n_val: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n_val > n {
        return Err(Error::config(format!("validation size {n_val} exceeds dataset size {n}")));
    }
    let p = random_permutation(n, seed);
    let mut val = p[..n_val].to_vec();
    let mut train = p[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    Ok((train, val))
}

/// Stacks grid samples into `[B, C, sp...]` plus labels.
pub fn stack_grid<S: Scalar>(samples: &[GridSample], idx: &[usize]) -> Result<(Tensor<S>, Vec<usize>)> {
    let first = &samples[*idx.first().ok_or_else(|| Error::invalid("stack_grid", "empty batch"))?];
    let fshape = first.features.shape().to_vec();
    let mut data = Vec::with_capacity(idx.len() * first.features.numel());
    let mut labels = Vec::with_capacity(idx.len());
    for &i in idx {
        let s = &samples[i];
        if s.features.shape() != fshape.as_slice() {
            return Err(Error::shape("stack_grid", s.features.shape(), &fshape));
        }
        data.extend(s.features.data().iter().map(|&v| S::cast(v)));
        labels.push(s.label);
    }
    let mut shape = vec![idx.len()];
    shape.extend(fshape);
    Ok((Tensor::new(&shape, data)?, labels))
}
