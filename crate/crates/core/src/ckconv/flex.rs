use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{build_relative_coords, conv, neighbor_conv, ConvBackend, ConvSpec, Neighborhood};
use crate::error::{Error, Result};
use crate::kernelnet::{KernelNet, KernelNetConfig};
use crate::param::{join, Module, Param};
use crate::tensor::{numel, Scalar, Tape, Tensor, Var};

/// Kernel extent used for an input of spatial extent `sp`: the whole
/// sequence for causal kernels, otherwise the largest odd size that fits.
pub fn kernel_extent_for(sp: &[usize], causal: bool) -> Vec<usize> {
    sp.iter()
        .map(|&n| if causal || n % 2 == 1 { n } else { n - 1 })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlexConfig {
    pub dim: usize,
    pub n_in: usize,
    pub n_out: usize,
    pub causal: bool,
    pub kernel_hidden: usize,
    pub kernel_layers: usize,
    pub omega_0: f64,
    /// Multiply kernels by a trainable Gaussian window.
    pub mask: bool,
    /// Skip the variance correction (leaves kernels at unit variance).
    pub uncorrected: bool,
}

/// Depthwise continuous convolution followed by a pointwise linear map.
#[derive(Clone, Debug)]
pub struct SepFlexConv<S: Scalar> {
    pub config: FlexConfig,
    /// Generates one kernel per input channel.
    pub net: KernelNet<S>,
    /// `[n_out, n_in]`.
    pub weight: Param<S>,
    pub bias: Param<S>,
    /// `|Ω(k)|` the layer was built for. Grid kernels sampled with another
    /// support are scaled by `train_support / support`.
    pub train_support: usize,
}

impl<S: Scalar> SepFlexConv<S> {
    pub fn new(prefix: &str, config: FlexConfig, support: usize, rng: &mut impl Rng) -> Result<Self> {
        if config.causal && config.dim != 1 {
            return Err(Error::config("causal convolutions must be one-dimensional"));
        }
        if config.n_in == 0 || config.n_out == 0 || support == 0 {
            return Err(Error::config("channel counts and kernel support must be >= 1"));
        }
        let kcfg = KernelNetConfig {
            n_layers: config.kernel_layers,
            ..KernelNetConfig::new(config.dim, config.kernel_hidden, config.n_in, config.omega_0)
        };
        let mut net = KernelNet::init_with_rng(kcfg, &join(prefix, "kernel"), rng)?;
        if config.mask {
            net = net.with_mask(&join(prefix, "kernel"), config.causal);
        }
        if !config.uncorrected {
            net.apply_variance_correction(config.n_in, support)?;
        }
        // unit-variance mixing keeps the composite rank-1 kernel at the
        // corrected variance
        let weight = Param::new(join(prefix, "pointwise.weight"), Tensor::randn(&[config.n_out, config.n_in], 1.0, rng));
        let bias = Param::new(join(prefix, "pointwise.bias"), Tensor::zeros(&[config.n_out]));
        Ok(SepFlexConv {
            config,
            net,
            weight,
            bias,
            train_support: support,
        })
    }

    /// Depthwise kernel `[n_in, ks...]` sampled on the grid of extent `ks`,
    /// plus the unscaled `[P, n_in]` kernel values (for regularization).
    pub fn grid_kernel<'t>(&self, tape: &'t Tape<S>, ks: &[usize]) -> Result<(Var<'t, S>, Var<'t, S>)> {
        let coords = build_relative_coords::<S>(ks, self.config.causal)?;
        let raw = self.net.kernel(tape, tape.constant(coords.coords))?;
        let support = numel(ks);
        let mut k = raw.transpose(&[1, 0])?;
        if support != self.train_support {
            k = k.scale(S::cast(self.train_support as f64 / support as f64))?;
        }
        let mut shape = vec![self.config.n_in];
        shape.extend(ks);
        Ok((k.reshape(&shape)?, raw))
    }

    /// `f: [B, n_in, sp...]` to `[B, n_out, sp...]`; also returns the raw kernel.
    pub fn forward_grid<'t>(&self, tape: &'t Tape<S>, f: Var<'t, S>, backend: ConvBackend) -> Result<(Var<'t, S>, Var<'t, S>)> {
        let shape = f.shape();
        if shape.len() != self.config.dim + 2 || shape[1] != self.config.n_in {
            return Err(Error::invalid(
                "sep_flexconv",
                format!("expected [B, {}, {}-D spatial], got {shape:?}", self.config.n_in, self.config.dim),
            ));
        }
        let ks = kernel_extent_for(&shape[2..], self.config.causal);
        let (k, raw) = self.grid_kernel(tape, &ks)?;
        let spec = ConvSpec::new(self.config.dim, self.config.n_in, self.config.n_in, &ks)
            .causal(self.config.causal)
            .separable(true);
        let y = conv(f, k, &spec, backend)?;
        let y = y.channel_mix(tape.param(&self.weight), Some(tape.param(&self.bias)))?;
        Ok((y, raw))
    }

    /// `f: [B, n_in, P]` over a neighborhood to `[B, n_out, P]`; also
    /// returns the unscaled kernel rows. The neighborhood mean is multiplied
    /// by `train_support`, so a full window reproduces the grid sum.
    pub fn forward_points<'t>(&self, tape: &'t Tape<S>, f: Var<'t, S>, nb: &Neighborhood) -> Result<(Var<'t, S>, Var<'t, S>)> {
        if self.config.dim != 3 {
            return Err(Error::invalid("sep_flexconv", "point convolutions need a 3-D kernel"));
        }
        let coords = tape.constant(nb.kernel_coords.cast::<S>());
        let k = self.net.kernel(tape, coords)?;
        // window volume times the neighborhood mean, the Riemann sum of the grid path
        let y = neighbor_conv(f, k.scale(S::cast(self.train_support as f64))?, nb)?;
        let y = y.channel_mix(tape.param(&self.weight), Some(tape.param(&self.bias)))?;
        Ok((y, k))
    }
}

impl<S: Scalar> Module<S> for SepFlexConv<S> {
    fn params(&self) -> Vec<&Param<S>> {
        let mut v = self.net.params();
        v.extend([&self.weight, &self.bias]);
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param<S>> {
        let mut v = self.net.params_mut();
        v.extend([&mut self.weight, &mut self.bias]);
        v
    }
}
