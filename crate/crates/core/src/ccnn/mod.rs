//! Residual CCNN models.
//!
//! A model is a separable continuous convolution lifting the input channels
//! to `hidden`, `n_blocks` residual blocks, an optional final normalization,
//! a global average pool and a linear head. Nothing downsamples: every block keeps the
//! spatial extent and the kernels cover the whole input.
//!
//! The same model runs on regular grids (`[B, C, sp...]`, batch norm) and on
//! neighborhoods of points or voxels (`[B, C, P]` plus a [`Neighborhood`],
//! layer norm).

mod block;
mod norm;

pub use block::{Block, BlockStyle};
pub use norm::{Norm, NormKind, StatUpdate};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ckconv::{kernel_extent_for, ConvBackend, FlexConfig, Neighborhood, SepFlexConv};
use crate::error::{Error, Result};
use crate::param::{Module, Param};
use crate::tensor::{numel, Scalar, Tape, Tensor, Var};

/// Sampling domain the model is built for; fixes the kernel support used by
/// the variance correction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Domain {
    /// Regular grid with the training spatial extent.
    Grid { extent: Vec<usize> },
    /// Neighborhood convolutions with the given number of kernel samples per
    /// output.
    Neighbors { support: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub dim: usize,
    pub in_channels: usize,
    pub hidden: usize,
    pub n_blocks: usize,
    pub n_classes: usize,
    pub kernel_hidden: usize,
    pub kernel_layers: usize,
    pub omega_0: f64,
    pub dropout: f64,
    pub style: BlockStyle,
    pub causal: bool,
    /// Gaussian kernel windows (FlexConv).
    pub mask: bool,
    pub norm: NormKind,
    /// Leave kernels at unit variance instead of applying the correction.
    pub uncorrected: bool,
    /// Normalize the block outputs before pooling.
    pub final_norm: bool,
    pub domain: Domain,
}

impl ModelConfig {
    /// Defaults for everything but the problem shape.
    pub fn new(dim: usize, in_channels: usize, n_classes: usize, hidden: usize, n_blocks: usize, domain: Domain) -> Self {
        let norm = match domain {
            Domain::Grid { .. } => NormKind::Batch,
            Domain::Neighbors { .. } => NormKind::Layer,
        };
        ModelConfig {
            dim,
            in_channels,
            hidden,
            n_blocks,
            n_classes,
            kernel_hidden: 32,
            kernel_layers: 3,
            omega_0: 2976.49,
            dropout: 0.0,
            style: BlockStyle::Ccnn,
            causal: false,
            mask: false,
            norm,
            uncorrected: false,
            final_norm: false,
            domain,
        }
    }

    /// 4 blocks of 140 channels.
    pub fn ccnn_4_140(dim: usize, in_channels: usize, n_classes: usize, domain: Domain) -> Self {
        Self::new(dim, in_channels, n_classes, 140, 4, domain)
    }

    /// 6 blocks of 380 channels.
    pub fn ccnn_6_380(dim: usize, in_channels: usize, n_classes: usize, domain: Domain) -> Self {
        Self::new(dim, in_channels, n_classes, 380, 6, domain)
    }

    pub fn preset(name: &str, dim: usize, in_channels: usize, n_classes: usize, domain: Domain) -> Result<Self> {
        match name {
            "ccnn_4_140" => Ok(Self::ccnn_4_140(dim, in_channels, n_classes, domain)),
            "ccnn_6_380" => Ok(Self::ccnn_6_380(dim, in_channels, n_classes, domain)),
            _ => Err(Error::config(format!("unknown preset {name:?} (expected ccnn_4_140 or ccnn_6_380)"))),
        }
    }

    /// Kernel samples per output at the training resolution.
    pub fn support(&self) -> usize {
        match &self.domain {
            Domain::Grid { extent } => numel(&kernel_extent_for(extent, self.causal)),
            Domain::Neighbors { support } => *support,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_blocks == 0 {
            return Err(Error::config("n_blocks must be >= 1"));
        }
        if self.hidden == 0 || self.in_channels == 0 || self.n_classes == 0 {
            return Err(Error::config("hidden, in_channels and n_classes must be >= 1"));
        }
        if !(1..=3).contains(&self.dim) {
            return Err(Error::config(format!("dim must be 1..=3, got {}", self.dim)));
        }
        if self.causal && self.dim != 1 {
            return Err(Error::config("causal models must be one-dimensional"));
        }
        match &self.domain {
            Domain::Grid { extent } if extent.len() != self.dim || extent.contains(&0) => {
                Err(Error::config(format!("grid extent {extent:?} does not match dim {}", self.dim)))
            }
            Domain::Neighbors { support: 0 } => Err(Error::config("neighbor support must be >= 1")),
            Domain::Neighbors { .. } if self.dim != 3 => Err(Error::config("neighbor models are three-dimensional")),
            _ => Ok(()),
        }
    }

    fn flex(&self, n_in: usize, n_out: usize) -> FlexConfig {
        FlexConfig {
            dim: self.dim,
            n_in,
            n_out,
            causal: self.causal,
            kernel_hidden: self.kernel_hidden,
            kernel_layers: self.kernel_layers,
            omega_0: self.omega_0,
            mask: self.mask,
            uncorrected: self.uncorrected,
        }
    }
}

/// State threaded through one forward pass.
pub struct Ctx<'t, S: Scalar> {
    pub tape: &'t Tape<S>,
    pub train: bool,
    pub backend: ConvBackend,
    /// Present for point and voxel inputs.
    pub neighborhood: Option<&'t Neighborhood>,
    /// Unscaled kernels of every continuous convolution, in call order.
    pub kernels: Vec<Var<'t, S>>,
    /// Batch statistics to commit after the optimizer step.
    pub stat_updates: Vec<StatUpdate>,
    rng: ChaCha8Rng,
}

impl<'t, S: Scalar> Ctx<'t, S> {
    /// Evaluation context: running statistics, no dropout.
    pub fn eval(tape: &'t Tape<S>) -> Self {
        Ctx {
            tape,
            train: false,
            backend: ConvBackend::Auto,
            neighborhood: None,
            kernels: Vec::new(),
            stat_updates: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }

    /// Training context; `seed` drives dropout.
    pub fn train(tape: &'t Tape<S>, seed: u64) -> Self {
        Ctx {
            train: true,
            rng: ChaCha8Rng::seed_from_u64(seed),
            ..Self::eval(tape)
        }
    }

    pub fn with_backend(mut self, backend: ConvBackend) -> Self {
        self.backend = backend;
        self
    }

    pub fn with_neighborhood(mut self, nb: &'t Neighborhood) -> Self {
        self.neighborhood = Some(nb);
        self
    }

    /// Applies a continuous convolution on the current geometry and records
    /// its kernel.
    pub fn conv(&mut self, layer: &SepFlexConv<S>, x: Var<'t, S>) -> Result<Var<'t, S>> {
        let (y, k) = match self.neighborhood {
            Some(nb) => layer.forward_points(self.tape, x, nb)?,
            None => layer.forward_grid(self.tape, x, self.backend)?,
        };
        self.kernels.push(k);
        Ok(y)
    }

    /// Inverted dropout with a fresh elementwise mask; identity outside training.
    pub fn dropout(&mut self, x: Var<'t, S>, p: f64) -> Result<Var<'t, S>> {
        if !self.train || p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 - p;
        let shape = x.shape();
        let rng = &mut self.rng;
        let mask = Tensor::from_fn(&shape, |_| if rng.random::<f64>() < keep { S::cast(1.0 / keep) } else { S::zero() });
        x.mul(self.tape.constant(mask))
    }
}

/// Mean over all spatial axes of `[B, C, sp...]`, or over the positions with
/// `mask[b · P + p]` set for `[B, C, P]`.
pub fn global_avg_pool<'t, S: Scalar>(x: Var<'t, S>, mask: Option<&[bool]>) -> Result<Var<'t, S>> {
    let shape = x.shape();
    if shape.len() < 3 || shape[2..].contains(&0) {
        return Err(Error::invalid("global_avg_pool", format!("expected [B, C, spatial...], got {shape:?}")));
    }
    let axes: Vec<usize> = (2..shape.len()).collect();
    let Some(mask) = mask else {
        return x.mean_axes(&axes, false);
    };
    let (b, p) = (shape[0], numel(&shape[2..]));
    if mask.len() != b * p {
        return Err(Error::shape("global_avg_pool mask", &[mask.len()], &[b * p]));
    }
    let mut w = vec![S::zero(); b * p];
    for bi in 0..b {
        let row = &mask[bi * p..(bi + 1) * p];
        let n = row.iter().filter(|&&m| m).count();
        if n == 0 {
            return Err(Error::invalid("global_avg_pool", format!("sample {bi} is fully masked")));
        }
        for (o, &m) in w[bi * p..(bi + 1) * p].iter_mut().zip(row) {
            if m {
                *o = S::cast(1.0 / n as f64);
            }
        }
    }
    let mut wshape = vec![b, 1];
    wshape.extend(&shape[2..]);
    let w = x.tape().constant(Tensor::new(&wshape, w)?);
    x.mul(w)?.sum_axes(&axes, false)
}

#[derive(Clone, Debug)]
pub struct Model<S: Scalar> {
    pub config: ModelConfig,
    pub stem: SepFlexConv<S>,
    pub blocks: Vec<Block<S>>,
    pub final_norm: Option<Norm<S>>,
    /// `[n_classes, hidden]`.
    pub head_weight: Param<S>,
    pub head_bias: Param<S>,
}

impl<S: Scalar> Model<S> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let support = config.support();
        let h = config.hidden;
        let stem = SepFlexConv::new("stem", config.flex(config.in_channels, h), support, &mut rng)?;
        let blocks = (0..config.n_blocks)
            .map(|i| {
                Block::new(
                    &format!("blocks.{i}"),
                    config.style,
                    config.norm,
                    config.flex(h, h),
                    support,
                    config.dropout,
                    &mut rng,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let bound = 1.0 / (h as f64).sqrt();
        let head_weight = Param::new("head.weight", Tensor::rand_uniform(&[config.n_classes, h], -bound, bound, &mut rng));
        let head_bias = Param::new("head.bias", Tensor::rand_uniform(&[config.n_classes], -bound, bound, &mut rng));
        Ok(Model {
            final_norm: config.final_norm.then(|| Norm::new("final_norm", config.norm, h)),
            config,
            stem,
            blocks,
            head_weight,
            head_bias,
        })
    }

    /// `x: [B, in_channels, sp...]` (grid) or `[B, in_channels, P]` with the
    /// context's neighborhood; returns logits `[B, n_classes]`.
    pub fn forward<'t>(&self, ctx: &mut Ctx<'t, S>, x: Var<'t, S>) -> Result<Var<'t, S>> {
        let shape = x.shape();
        let rank = match ctx.neighborhood {
            Some(_) => 3,
            None => self.config.dim + 2,
        };
        if shape.len() != rank || shape[1] != self.config.in_channels {
            return Err(Error::invalid(
                "model_forward",
                format!(
                    "expected [B, {}, ...] of rank {rank} for a {}-D model, got {shape:?}",
                    self.config.in_channels, self.config.dim
                ),
            ));
        }
        let mut h = ctx.conv(&self.stem, x)?;
        for block in &self.blocks {
            h = block.forward(ctx, h)?;
        }
        if let Some(n) = &self.final_norm {
            h = n.forward(ctx, h)?;
        }
        let mask = ctx.neighborhood.map(|nb| nb.valid.as_slice());
        let pooled = global_avg_pool(h, mask)?;
        pooled.linear(ctx.tape.param(&self.head_weight), Some(ctx.tape.param(&self.head_bias)))
    }

    /// Untaped evaluation-mode logits.
    pub fn predict(&self, x: &Tensor<S>, nb: Option<&Neighborhood>, backend: ConvBackend) -> Result<Tensor<S>> {
        let tape = Tape::no_grad();
        let mut ctx = Ctx::eval(&tape).with_backend(backend);
        ctx.neighborhood = nb;
        let logits = self.forward(&mut ctx, tape.constant(x.clone()))?;
        Ok((*logits.value()).clone())
    }

    pub fn norms_mut(&mut self) -> Vec<&mut Norm<S>> {
        let mut v: Vec<&mut Norm<S>> = self.blocks.iter_mut().flat_map(|b| b.norms_mut()).collect();
        v.extend(self.final_norm.as_mut());
        v
    }

    /// Folds batch statistics from a training pass into the running estimates.
    pub fn commit_stats(&mut self, updates: &[StatUpdate]) -> Result<()> {
        let mut norms = self.norms_mut();
        for upd in updates {
            let n = norms
                .iter_mut()
                .find(|n| n.scale.name.strip_suffix(".scale") == Some(upd.prefix.as_str()))
                .ok_or_else(|| Error::invalid("commit_stats", format!("no norm named {:?}", upd.prefix)))?;
            n.commit(upd);
        }
        Ok(())
    }

    pub fn conv_layers(&self) -> Vec<&SepFlexConv<S>> {
        let mut v = vec![&self.stem];
        for b in &self.blocks {
            v.push(&b.conv);
            if let Some((_, c2)) = &b.second {
                v.push(c2);
            }
        }
        v
    }
}

impl<S: Scalar> Module<S> for Model<S> {
    fn params(&self) -> Vec<&Param<S>> {
        let mut v = self.stem.params();
        for b in &self.blocks {
            v.extend(b.params());
        }
        if let Some(n) = &self.final_norm {
            v.extend(n.params());
        }
        v.extend([&self.head_weight, &self.head_bias]);
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param<S>> {
        let mut v = self.stem.params_mut();
        for b in &mut self.blocks {
            v.extend(b.params_mut());
        }
        if let Some(n) = &mut self.final_norm {
            v.extend(n.params_mut());
        }
        v.extend([&mut self.head_weight, &mut self.head_bias]);
        v
    }
}
