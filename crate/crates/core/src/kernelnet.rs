//! Kernel generator networks: coordinates in `[-1, 1]^D` to kernel values.
//!
//! The network is a multiplicative filter network with anisotropic Gabor
//! filters (MAGNet):
//!
//! ```text
//! g_l(x)  = exp(-½ Σ_d γ_{l,d}² (x_d − μ_{l,d})²) · sin(ω_l·x + φ_l)
//! h_1     = g_1(x)
//! h_{l+1} = g_{l+1}(x) ⊙ (W_l h_l + b_l)
//! out     = c · (W_L h_L + b_L)
//! ```
//!
//! `c` is the correction factor. A freshly initialized network has `c = 1`
//! and unit output variance over uniformly drawn coordinates;
//! [`KernelNet::apply_variance_correction`] scales it down to the variance a
//! He-initialized discrete kernel of the same fan-in would have.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::param::{join, Module, Param};
use crate::tensor::{Scalar, Tape, Tensor, Var};

/// Coordinates used to calibrate the initial output variance.
const PROBE_POINTS: usize = 2048;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelNetConfig {
    /// Coordinate dimensionality, 1 to 3.
    pub in_dim: usize,
    pub hidden: usize,
    /// Number of Gabor filters; there are `n_layers - 1` hidden linear maps.
    pub n_layers: usize,
    pub out_channels: usize,
    pub omega_0: f64,
    pub gain: f64,
}

impl KernelNetConfig {
    pub fn new(in_dim: usize, hidden: usize, out_channels: usize, omega_0: f64) -> Self {
        KernelNetConfig {
            in_dim,
            hidden,
            n_layers: 3,
            out_channels,
            omega_0,
            gain: std::f64::consts::SQRT_2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.in_dim) {
            return Err(Error::config(format!("kernel net in_dim must be 1..=3, got {}", self.in_dim)));
        }
        if self.hidden == 0 || self.n_layers == 0 || self.out_channels == 0 {
            return Err(Error::config("kernel net hidden, n_layers and out_channels must be >= 1"));
        }
        if !(self.omega_0 > 0.0 && self.omega_0.is_finite()) {
            return Err(Error::config(format!("omega_0 must be positive, got {}", self.omega_0)));
        }
        if !(self.gain > 0.0 && self.gain.is_finite()) {
            return Err(Error::config(format!("gain must be positive, got {}", self.gain)));
        }
        Ok(())
    }

    /// Closed-form parameter count (without a mask).
    pub fn num_params(&self) -> usize {
        let (d, h, l, o) = (self.in_dim, self.hidden, self.n_layers, self.out_channels);
        l * (3 * h * d + h) + (l - 1) * (h * h + h) + o * h + o
    }
}

/// One anisotropic Gabor filter bank.
#[derive(Clone, Debug)]
pub struct GaborLayer<S: Scalar> {
    /// `ω`, `[hidden, D]`.
    pub freq: Param<S>,
    /// `φ`, `[hidden]`.
    pub phase: Param<S>,
    /// `γ`, `[hidden, D]`; enters squared, so its sign carries no meaning.
    pub scale: Param<S>,
    /// `μ`, `[hidden, D]`.
    pub center: Param<S>,
}

#[derive(Clone, Debug)]
pub struct Linear<S: Scalar> {
    /// `[out, in]`.
    pub weight: Param<S>,
    pub bias: Param<S>,
}

/// Trainable Gaussian window over kernel coordinates.
#[derive(Clone, Debug)]
pub struct GaussianMask<S: Scalar> {
    /// `μ_m`, `[D]`.
    pub center: Param<S>,
    /// `log σ_m`, `[D]`.
    pub log_width: Param<S>,
}

#[derive(Clone, Debug)]
pub struct KernelNet<S: Scalar> {
    pub config: KernelNetConfig,
    pub gabor: Vec<GaborLayer<S>>,
    pub linears: Vec<Linear<S>>,
    pub output: Linear<S>,
    pub correction: f64,
    pub mask: Option<GaussianMask<S>>,
}

impl<S: Scalar> GaborLayer<S> {
    fn init(prefix: &str, hidden: usize, d: usize, omega: f64, rng: &mut impl Rng) -> Self {
        let half_normal = |rng: &mut dyn rand::RngCore| {
            let z: f64 = StandardNormal.sample(rng);
            S::cast(z.abs())
        };
        GaborLayer {
            freq: Param::kernel_net(join(prefix, "freq"), Tensor::rand_uniform(&[hidden, d], -omega, omega, rng)),
            phase: Param::kernel_net(
                join(prefix, "phase"),
                Tensor::rand_uniform(&[hidden], -std::f64::consts::PI, std::f64::consts::PI, rng),
            ),
            scale: Param::kernel_net(join(prefix, "scale"), Tensor::from_fn(&[hidden, d], |_| half_normal(rng))),
            center: Param::kernel_net(join(prefix, "center"), Tensor::rand_uniform(&[hidden, d], -1.0, 1.0, rng)),
        }
    }

    /// Filter responses `[P, hidden]` for coordinates `[P, D]`.
    pub fn forward<'t>(&self, tape: &'t Tape<S>, coords: Var<'t, S>) -> Result<Var<'t, S>> {
        gabor(
            coords,
            tape.param(&self.freq),
            tape.param(&self.phase),
            tape.param(&self.scale),
            tape.param(&self.center),
        )
    }
}

impl<S: Scalar> Linear<S> {
    fn init(prefix: &str, fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        Linear {
            weight: Param::kernel_net(join(prefix, "weight"), Tensor::rand_uniform(&[fan_out, fan_in], -bound, bound, rng)),
            bias: Param::kernel_net(join(prefix, "bias"), Tensor::rand_uniform(&[fan_out], -bound, bound, rng)),
        }
    }

    fn rescale(&mut self, s: f64) {
        let s = S::cast(s);
        for v in self.weight.value.data_mut().iter_mut().chain(self.bias.value.data_mut()) {
            *v = *v * s;
        }
    }

    pub fn forward<'t>(&self, tape: &'t Tape<S>, x: Var<'t, S>) -> Result<Var<'t, S>> {
        x.linear(tape.param(&self.weight), Some(tape.param(&self.bias)))
    }
}

impl<S: Scalar> GaussianMask<S> {
    pub fn new(prefix: &str, center: &[f64], width: &[f64]) -> Self {
        let d = center.len();
        GaussianMask {
            center: Param::kernel_net(join(prefix, "center"), Tensor::from_f64(&[d], center).expect("mask center")),
            log_width: Param::kernel_net(
                join(prefix, "log_width"),
                Tensor::from_f64(&[d], &width.iter().map(|w| w.ln()).collect::<Vec<_>>()).expect("mask width"),
            ),
        }
    }

    /// Default window: centered on the origin with unit width, or for causal
    /// kernels on the current step (`+1`) with width 2, so every offset is
    /// weighted by at least `exp(-½)` at initialization.
    pub fn initial(prefix: &str, d: usize, causal: bool) -> Self {
        if causal {
            Self::new(prefix, &[1.0], &[2.0])
        } else {
            Self::new(prefix, &vec![0.0; d], &vec![1.0; d])
        }
    }

    pub fn forward<'t>(&self, tape: &'t Tape<S>, coords: Var<'t, S>) -> Result<Var<'t, S>> {
        gaussian_mask(coords, tape.param(&self.center), tape.param(&self.log_width))
    }
}

/// `exp(-½ ‖(x − μ_m) / σ_m‖²)` per row of `coords: [P, D]`, returned as `[P, 1]`.
pub fn gaussian_mask<'t, S: Scalar>(coords: Var<'t, S>, center: Var<'t, S>, log_width: Var<'t, S>) -> Result<Var<'t, S>> {
    let width = log_width.exp()?;
    coords
        .sub(center)?
        .div(width)?
        .square()?
        .sum_axes(&[1], true)?
        .scale(S::cast(-0.5))?
        .exp()
}

/// Fused Gabor filter bank: coords `[P, D]`, freq/scale/center `[H, D]`,
/// phase `[H]`; output `[P, H]`.
pub fn gabor<'t, S: Scalar>(
    coords: Var<'t, S>,
    freq: Var<'t, S>,
    phase: Var<'t, S>,
    scale: Var<'t, S>,
    center: Var<'t, S>,
) -> Result<Var<'t, S>> {
    let x = coords.value();
    let w = freq.value();
    let p = phase.value();
    let g = scale.value();
    let m = center.value();
    if x.rank() != 2 {
        return Err(Error::invalid("gabor", format!("coords must be [P, D], got {:?}", x.shape())));
    }
    let (n, d) = (x.shape()[0], x.shape()[1]);
    let h = w.shape().first().copied().unwrap_or(0);
    for (t, name) in [(&w, "freq"), (&g, "scale"), (&m, "center")] {
        if t.shape() != [h, d] {
            return Err(Error::invalid(
                "gabor",
                format!("{name} {:?} does not match coords {:?}", t.shape(), x.shape()),
            ));
        }
    }
    if p.shape() != [h] {
        return Err(Error::shape("gabor", &[h], p.shape()));
    }

    let half = S::cast(0.5);
    // envelope, sin and cos per (point, unit)
    let mut env = vec![S::zero(); n * h];
    let mut sn = vec![S::zero(); n * h];
    let mut cs = vec![S::zero(); n * h];
    for i in 0..n {
        let xi = &x.data()[i * d..(i + 1) * d];
        for j in 0..h {
            let mut q = S::zero();
            let mut arg = p.data()[j];
            for k in 0..d {
                let diff = xi[k] - m.data()[j * d + k];
                let gm = g.data()[j * d + k];
                q = q + gm * gm * diff * diff;
                arg = arg + w.data()[j * d + k] * xi[k];
            }
            env[i * h + j] = (-half * q).exp();
            let (s, c) = arg.sin_cos();
            sn[i * h + j] = s;
            cs[i * h + j] = c;
        }
    }
    let out: Vec<S> = env.iter().zip(&sn).map(|(&e, &s)| e * s).collect();
    let out_t = Tensor::new(&[n, h], out.clone())?;

    coords.tape().push_op("gabor", out_t, &[coords, freq, phase, scale, center], move |gout, need| {
        let go = gout.data();
        let mut dx = vec![S::zero(); n * d];
        let mut dw = vec![S::zero(); h * d];
        let mut dp = vec![S::zero(); h];
        let mut dg = vec![S::zero(); h * d];
        let mut dm = vec![S::zero(); h * d];
        for i in 0..n {
            for j in 0..h {
                let ij = i * h + j;
                let gv = go[ij];
                if gv == S::zero() {
                    continue;
                }
                // ∂/∂arg and ∂/∂q of e·sin(arg)
                let d_arg = gv * env[ij] * cs[ij];
                let d_q = -half * gv * out[ij];
                dp[j] = dp[j] + d_arg;
                for k in 0..d {
                    let xk = x.data()[i * d + k];
                    let diff = xk - m.data()[j * d + k];
                    let gm = g.data()[j * d + k];
                    let two = S::cast(2.0);
                    dw[j * d + k] = dw[j * d + k] + d_arg * xk;
                    dg[j * d + k] = dg[j * d + k] + d_q * two * gm * diff * diff;
                    dm[j * d + k] = dm[j * d + k] - d_q * two * gm * gm * diff;
                    dx[i * d + k] = dx[i * d + k] + d_arg * w.data()[j * d + k] + d_q * two * gm * gm * diff;
                }
            }
        }
        let t = |shape: &[usize], v: Vec<S>| Tensor::new(shape, v).unwrap();
        vec![
            need[0].then(|| t(&[n, d], dx)),
            need[1].then(|| t(&[h, d], dw)),
            need[2].then(|| t(&[h], dp)),
            need[3].then(|| t(&[h, d], dg)),
            need[4].then(|| t(&[h, d], dm)),
        ]
    })
}

impl<S: Scalar> KernelNet<S> {
    /// Seeded initialization with unit output variance.
    pub fn init(config: KernelNetConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::init_with_rng(config, "", &mut rng)
    }

    /// Initializes all parameters under the path `prefix` from `rng`.
    ///
    /// Frequencies are uniform in `±omega_0 / n_layers`, Gabor widths
    /// half-normal, centers uniform in `[-1, 1]`. The hidden and output linear
    /// maps are then rescaled layer by layer so that their pre-filter outputs
    /// have unit variance over a fixed set of uniformly drawn probe
    /// coordinates.
    pub fn init_with_rng(config: KernelNetConfig, prefix: &str, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let (d, h, l) = (config.in_dim, config.hidden, config.n_layers);
        let omega = config.omega_0 / l as f64;
        let gabor = (0..l)
            .map(|i| GaborLayer::init(&join(prefix, &format!("gabor.{i}")), h, d, omega, rng))
            .collect();
        let linears = (0..l - 1)
            .map(|i| Linear::init(&join(prefix, &format!("linear.{i}")), h, h, rng))
            .collect();
        let output = Linear::init(&join(prefix, "output"), h, config.out_channels, rng);
        let probes = Tensor::<S>::rand_uniform(&[PROBE_POINTS, d], -1.0, 1.0, rng);
        let mut net = KernelNet {
            config,
            gabor,
            linears,
            output,
            correction: 1.0,
            mask: None,
        };
        net.calibrate(&probes)?;
        Ok(net)
    }

    fn calibrate(&mut self, probes: &Tensor<S>) -> Result<()> {
        for layer in 0..self.config.n_layers {
            let tape = Tape::no_grad();
            let x = tape.constant(probes.clone());
            let mut hcur = self.gabor[0].forward(&tape, x)?;
            for i in 0..layer {
                let z = self.linears[i].forward(&tape, hcur)?;
                hcur = self.gabor[i + 1].forward(&tape, x)?.mul(z)?;
            }
            let target = if layer + 1 < self.config.n_layers {
                &mut self.linears[layer]
            } else {
                &mut self.output
            };
            let z = target.forward(&tape, hcur)?;
            let var = z.value().variance();
            if var > 0.0 && var.is_finite() {
                target.rescale(1.0 / var.sqrt());
            }
        }
        Ok(())
    }

    /// Adds a trainable Gaussian window (FlexConv); see [`GaussianMask::initial`].
    pub fn with_mask(mut self, prefix: &str, causal: bool) -> Self {
        self.mask = Some(GaussianMask::initial(&join(prefix, "mask"), self.config.in_dim, causal));
        self
    }

    /// Sets the output scale to `gain / sqrt(n_in · support)`, giving kernel
    /// variance `gain² / (n_in · support)` from the unit-variance state.
    pub fn apply_variance_correction(&mut self, n_in: usize, support: usize) -> Result<()> {
        if n_in == 0 || support == 0 {
            return Err(Error::invalid(
                "apply_variance_correction",
                format!("counts must be >= 1, got n_in={n_in}, support={support}"),
            ));
        }
        self.correction = self.config.gain / ((n_in * support) as f64).sqrt();
        Ok(())
    }

    /// Raw network output `[P, out_channels]`, without the mask.
    pub fn magnet_forward<'t>(&self, tape: &'t Tape<S>, coords: Var<'t, S>) -> Result<Var<'t, S>> {
        let shape = coords.shape();
        if shape.len() != 2 || shape[1] != self.config.in_dim {
            return Err(Error::invalid(
                "magnet_forward",
                format!("expected coords [P, {}], got {shape:?}", self.config.in_dim),
            ));
        }
        let mut h = self.gabor[0].forward(tape, coords)?;
        for (lin, gab) in self.linears.iter().zip(&self.gabor[1..]) {
            let z = lin.forward(tape, h)?;
            h = gab.forward(tape, coords)?.mul(z)?;
        }
        let out = self.output.forward(tape, h)?;
        if self.correction == 1.0 {
            Ok(out)
        } else {
            out.scale(S::cast(self.correction))
        }
    }

    /// Kernel values `[P, out_channels]`: network output times the mask, if any.
    pub fn kernel<'t>(&self, tape: &'t Tape<S>, coords: Var<'t, S>) -> Result<Var<'t, S>> {
        let k = self.magnet_forward(tape, coords)?;
        match &self.mask {
            Some(m) => k.mul(m.forward(tape, coords)?),
            None => Ok(k),
        }
    }

    /// Untaped evaluation of [`KernelNet::kernel`].
    pub fn eval(&self, coords: &Tensor<S>) -> Result<Tensor<S>> {
        let tape = Tape::no_grad();
        let c = tape.constant(coords.clone());
        Ok((*self.kernel(&tape, c)?.value()).clone())
    }
}

impl<S: Scalar> Module<S> for KernelNet<S> {
    fn params(&self) -> Vec<&Param<S>> {
        let mut v = Vec::new();
        for g in &self.gabor {
            v.extend([&g.freq, &g.phase, &g.scale, &g.center]);
        }
        for l in self.linears.iter().chain(std::iter::once(&self.output)) {
            v.extend([&l.weight, &l.bias]);
        }
        if let Some(m) = &self.mask {
            v.extend([&m.center, &m.log_width]);
        }
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param<S>> {
        let mut v = Vec::new();
        for g in &mut self.gabor {
            v.extend([&mut g.freq, &mut g.phase, &mut g.scale, &mut g.center]);
        }
        for l in self.linears.iter_mut().chain(std::iter::once(&mut self.output)) {
            v.extend([&mut l.weight, &mut l.bias]);
        }
        if let Some(m) = &mut self.mask {
            v.extend([&mut m.center, &mut m.log_width]);
        }
        v
    }
}
