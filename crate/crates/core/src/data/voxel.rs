use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::PointCloudSample;

/// Occupied voxels of one cloud.
#[derive(Clone, Debug, PartialEq)]
pub struct Voxelized {
    pub grid_n: usize,
    /// Integer voxel coordinates, sorted lexicographically.
    pub occupied: Vec<[usize; 3]>,
    /// Occupied voxels before the budget was applied.
    pub total_occupied: usize,
    pub label: usize,
}

impl Voxelized {
    /// Voxel-center coordinates `[N, 3]` (the voxel features).
    pub fn centers(&self) -> Vec<[f64; 3]> {
        self.occupied.iter().map(|v| v.map(|i| voxel_center(i, self.grid_n))).collect()
    }

    /// Dense `[3, n, n, n]` grid holding voxel centers at occupied cells and
    /// zeros elsewhere, plus the `[n³]` occupancy mask.
    pub fn dense(&self) -> (Vec<f64>, Vec<bool>) {
        let n = self.grid_n;
        let cells = n * n * n;
        let mut f = vec![0.0; 3 * cells];
        let mut mask = vec![false; cells];
        for v in &self.occupied {
            let flat = (v[0] * n + v[1]) * n + v[2];
            mask[flat] = true;
            for a in 0..3 {
                f[a * cells + flat] = voxel_center(v[a], n);
            }
        }
        (f, mask)
    }
}

/// `floor((p + 1) / 2 · n)`, clamped to `[0, n − 1]`.
pub fn voxel_index(p: f64, grid_n: usize) -> usize {
    let i = ((p + 1.0) / 2.0 * grid_n as f64).floor();
    (i.max(0.0) as usize).min(grid_n - 1)
}

pub fn voxel_center(i: usize, grid_n: usize) -> f64 {
    -1.0 + (2 * i + 1) as f64 / grid_n as f64
}

/// Bins a cloud into a `grid_n³` grid. With `budget = Some((max, seed))` and
/// more occupied voxels than `max`, a seeded random subset of `max` voxels is
/// kept.
pub fn voxelize(cloud: &PointCloudSample, grid_n: usize, budget: Option<(usize, u64)>) -> Voxelized {
    let mut occ: Vec<[usize; 3]> = (0..cloud.n_points())
        .map(|i| cloud.point(i).map(|p| voxel_index(p, grid_n)))
        .collect();
    occ.sort_unstable();
    occ.dedup();
    let total = occ.len();
    if let Some((max, seed)) = budget {
        if total > max {
            let mut keep = sample(&mut ChaCha8Rng::seed_from_u64(seed), total, max).into_vec();
            keep.sort_unstable();
            occ = keep.into_iter().map(|i| occ[i]).collect();
        }
    }
    Voxelized {
        grid_n,
        occupied: occ,
        total_occupied: total,
        label: cloud.label,
    }
}
