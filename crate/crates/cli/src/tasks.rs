//! Dataset construction and batching for the three tasks.

use ccnn::ckconv::{Neighborhood, PointConvConfig};
use ccnn::data::{
    load_mnist, mnist_sequences, random_permutation, split_indices, stack_grid, synth_shapes, synth_waveforms, voxelize, GridSample,
    PointCloudSample, Voxelized, SHAPE_CLASSES,
};
use ccnn::Tensor;

use crate::config::{ExperimentConfig, Representation, Task};
use crate::error::{CliError, CliResult};

/// Per-pixel statistics of the MNIST training set.
pub const MNIST_NORMALIZATION: (f64, f64) = (0.1307, 0.3081);
/// Seed of the fixed pixel permutation used when `permuted` is set.
const PERMUTATION_SEED: u64 = 0x5eed;

/// One split of a task, already in the representation the model consumes.
#[derive(Clone, Debug)]
pub enum Samples {
    Grid(Vec<GridSample>),
    Voxels { clouds: Vec<Voxelized>, window: usize },
    Points { clouds: Vec<PointCloudSample>, radius: f64, reach: f64 },
}

/// Model input for one batch.
#[derive(Clone, Debug)]
pub struct Batch {
    pub x: Tensor<f32>,
    pub labels: Vec<usize>,
    pub neighborhood: Option<Neighborhood>,
}

impl Samples {
    pub fn len(&self) -> usize {
        match self {
            Samples::Grid(s) => s.len(),
            Samples::Voxels { clouds, .. } => clouds.len(),
            Samples::Points { clouds, .. } => clouds.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn batch(&self, idx: &[usize]) -> CliResult<Batch> {
        match self {
            Samples::Grid(s) => {
                let (x, labels) = stack_grid::<f32>(s, idx)?;
                Ok(Batch {
                    x,
                    labels,
                    neighborhood: None,
                })
            }
            Samples::Voxels { clouds, window } => {
                let sel: Vec<&Voxelized> = idx.iter().map(|&i| &clouds[i]).collect();
                let p = sel.iter().map(|v| v.occupied.len()).max().unwrap_or(0);
                let mut x = Tensor::<f32>::zeros(&[sel.len(), 3, p]);
                for (b, v) in sel.iter().enumerate() {
                    for (i, c) in v.centers().iter().enumerate() {
                        for a in 0..3 {
                            x.data_mut()[(b * 3 + a) * p + i] = c[a] as f32;
                        }
                    }
                }
                let occ: Vec<Vec<[usize; 3]>> = sel.iter().map(|v| v.occupied.clone()).collect();
                Ok(Batch {
                    x,
                    labels: sel.iter().map(|v| v.label).collect(),
                    neighborhood: Some(Neighborhood::voxels(&occ, *window)?),
                })
            }
            Samples::Points { clouds, radius, reach } => {
                let sel: Vec<&PointCloudSample> = idx.iter().map(|&i| &clouds[i]).collect();
                let p = sel[0].n_points();
                if sel.iter().any(|c| c.n_points() != p) {
                    return Err(CliError::Config("point clouds in a batch must have equal sizes".into()));
                }
                let mut pos = Vec::with_capacity(sel.len() * p * 3);
                let mut x = Tensor::<f32>::zeros(&[sel.len(), 3, p]);
                for (b, c) in sel.iter().enumerate() {
                    pos.extend_from_slice(c.positions.data());
                    for i in 0..p {
                        for a in 0..3 {
                            x.data_mut()[(b * 3 + a) * p + i] = c.features.get(&[i, a]) as f32;
                        }
                    }
                }
                let positions = Tensor::new(&[sel.len(), p, 3], pos)?;
                let cfg = PointConvConfig::new(p, *radius).with_reach(*reach);
                Ok(Batch {
                    x,
                    labels: sel.iter().map(|c| c.label).collect(),
                    neighborhood: Some(Neighborhood::points(&positions, &cfg)?),
                })
            }
        }
    }
}

/// Train, validation and test splits of one task.
#[derive(Clone, Debug)]
pub struct TaskData {
    pub train: Samples,
    pub val: Samples,
    pub test: Samples,
    pub n_classes: usize,
}

/// Test-time changes for zero-shot evaluation.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EvalOverride {
    /// Waveform sequence length.
    pub length: Option<usize>,
    pub representation: Option<Representation>,
}

fn split_seed(seed: u64, split: u64) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(split)
}

fn shape_samples(cfg: &ExperimentConfig, clouds: Vec<PointCloudSample>, repr: Representation, seed: u64) -> Samples {
    match repr {
        Representation::Voxels => Samples::Voxels {
            clouds: clouds
                .iter()
                .enumerate()
                .map(|(i, c)| voxelize(c, cfg.grid_n, Some((cfg.voxel_budget, seed.wrapping_add(i as u64)))))
                .collect(),
            window: cfg.window,
        },
        // one voxel-window of physical extent, so lattice offsets and point
        // offsets share kernel coordinates
        Representation::Points => Samples::Points {
            clouds,
            radius: (cfg.window - 1) as f64 / cfg.grid_n as f64,
            reach: cfg.point_reach.unwrap_or(cfg.window as f64 / (cfg.window - 1) as f64),
        },
    }
}

/// Test split only, with optional overrides.
pub fn build_test(cfg: &ExperimentConfig, ov: EvalOverride) -> CliResult<(Samples, usize)> {
    let seed = split_seed(cfg.seed, 3);
    match cfg.task {
        Task::Smnist => {
            if ov.length.is_some() || ov.representation.is_some() {
                return Err(CliError::Config("sMNIST supports no evaluation overrides".into()));
            }
            let (images, labels) = load_mnist(&cfg.data_dir, false)?;
            Ok((Samples::Grid(mnist_sequences(&images, &labels, cfg.pool, perm(cfg).as_deref(), MNIST_NORMALIZATION)?), 10))
        }
        Task::Waveforms => {
            if ov.representation.is_some() {
                return Err(CliError::Config("representation overrides apply to the shapes task".into()));
            }
            let length = ov.length.unwrap_or(cfg.length);
            if length < 2 {
                return Err(CliError::Config(format!("length must be >= 2, got {length}")));
            }
            Ok((Samples::Grid(synth_waveforms(cfg.n_test, length, cfg.classes, seed)?), cfg.classes))
        }
        Task::Shapes => {
            if ov.length.is_some() {
                return Err(CliError::Config("length overrides apply to the waveforms task".into()));
            }
            let clouds = synth_shapes(cfg.n_test, cfg.points, seed)?;
            let repr = ov.representation.unwrap_or(cfg.representation);
            Ok((shape_samples(cfg, clouds, repr, seed), SHAPE_CLASSES.len()))
        }
    }
}

fn perm(cfg: &ExperimentConfig) -> Option<Vec<usize>> {
    let side = 28 / cfg.pool;
    cfg.permuted.then(|| random_permutation(side * side, PERMUTATION_SEED))
}

pub fn build(cfg: &ExperimentConfig) -> CliResult<TaskData> {
    let (test, n_classes) = build_test(cfg, EvalOverride::default())?;
    let (train, val) = match cfg.task {
        Task::Smnist => {
            let (images, labels) = load_mnist(&cfg.data_dir, true)?;
            let mut all = mnist_sequences(&images, &labels, cfg.pool, perm(cfg).as_deref(), MNIST_NORMALIZATION)?;
            all.truncate(cfg.train_size);
            let (tr, va) = split_indices(all.len(), cfg.val_size, split_seed(cfg.seed, 0))?;
            let pick = |ix: &[usize]| ix.iter().map(|&i| all[i].clone()).collect();
            (Samples::Grid(pick(&tr)), Samples::Grid(pick(&va)))
        }
        Task::Waveforms => {
            let (s1, s2) = (split_seed(cfg.seed, 1), split_seed(cfg.seed, 2));
            (
                Samples::Grid(synth_waveforms(cfg.n_train, cfg.length, cfg.classes, s1)?),
                Samples::Grid(synth_waveforms(cfg.n_val, cfg.length, cfg.classes, s2)?),
            )
        }
        Task::Shapes => {
            let (s1, s2) = (split_seed(cfg.seed, 1), split_seed(cfg.seed, 2));
            (
                shape_samples(cfg, synth_shapes(cfg.n_train, cfg.points, s1)?, cfg.representation, s1),
                shape_samples(cfg, synth_shapes(cfg.n_val, cfg.points, s2)?, cfg.representation, s2),
            )
        }
    };
    Ok(TaskData {
        train,
        val,
        test,
        n_classes,
    })
}
