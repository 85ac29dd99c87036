//! Shape arithmetic: broadcasting, reductions, permutations.

use super::{Scalar, Tensor};

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Result shape of broadcasting `a` against `b` with trailing-axis alignment.
pub fn broadcast_shapes(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// For every element of `out_shape` (row-major), the flat offset of the
/// element of `in_shape` it reads under broadcasting.
pub(crate) fn broadcast_offsets(out_shape: &[usize], in_shape: &[usize]) -> Vec<usize> {
    let rank = out_shape.len();
    let lead = rank - in_shape.len();
    let in_strides = strides(in_shape);
    // effective stride per output axis; zero where the input is broadcast
    let eff: Vec<usize> = (0..rank)
        .map(|i| {
            if i < lead || in_shape[i - lead] == 1 {
                0
            } else {
                in_strides[i - lead]
            }
        })
        .collect();
    let n = numel(out_shape);
    let mut offsets = Vec::with_capacity(n);
    if n == 0 {
        return offsets;
    }
    let mut idx = vec![0usize; rank];
    let mut off = 0usize;
    for _ in 0..n {
        offsets.push(off);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            off += eff[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            off -= eff[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
    offsets
}

/// Broadcasts `t` up to `shape`. Caller guarantees compatibility.
pub(crate) fn expand<S: Scalar>(t: &Tensor<S>, shape: &[usize]) -> Tensor<S> {
    if t.shape() == shape {
        return t.clone();
    }
    let offs = broadcast_offsets(shape, t.shape());
    let src = t.data();
    Tensor::new(shape, offs.iter().map(|&o| src[o]).collect()).expect("expand")
}

/// Sums `t` down to `shape` (the adjoint of [`expand`]).
pub(crate) fn reduce_to<S: Scalar>(t: &Tensor<S>, shape: &[usize]) -> Tensor<S> {
    if t.shape() == shape {
        return t.clone();
    }
    let mut out = vec![S::zero(); numel(shape)];
    let offs = broadcast_offsets(t.shape(), shape);
    for (&o, &v) in offs.iter().zip(t.data()) {
        out[o] = out[o] + v;
    }
    Tensor::new(shape, out).expect("reduce_to")
}

/// Materialized axis permutation: `out.shape[i] = in.shape[perm[i]]`.
pub(crate) fn permute<S: Scalar>(t: &Tensor<S>, perm: &[usize]) -> Tensor<S> {
    let in_shape = t.shape();
    let in_strides = strides(in_shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| in_shape[p]).collect();
    let eff: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let n = t.numel();
    let src = t.data();
    let mut data = Vec::with_capacity(n);
    let rank = perm.len();
    let mut idx = vec![0usize; rank];
    let mut off = 0usize;
    for _ in 0..n {
        data.push(src[off]);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            off += eff[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            off -= eff[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
    Tensor::new(&out_shape, data).expect("permute")
}
