//! Finite-difference checks over every differentiable operation, each on
//! freshly drawn random instances.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_inputs, check_module, TOLERANCE};
use crate::ccnn::{Block, BlockStyle, Ctx, Norm, NormKind};
use crate::ckconv::{conv_direct, conv_fft, ConvBackend, ConvSpec, FlexConfig, Neighborhood, PointConvConfig, SepFlexConv};
use crate::error::Result;
use crate::kernelnet::{KernelNet, KernelNetConfig};
use crate::optim::kernel_l2_loss;
use crate::param::{Module, Param};
use crate::tensor::{Tensor, Var};

/// Outcome for one operation.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub instances: usize,
    /// Largest relative error over the instances.
    pub worst: f64,
    pub passed: bool,
}

type Case = fn(&mut ChaCha8Rng) -> Result<f64>;

fn randn(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::randn(shape, 1.0, rng)
}

/// Values bounded away from zero.
fn away_from_zero(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m = rng.random_range(0.3..2.0);
        if rng.random::<bool>() {
            m
        } else {
            -m
        }
    })
}

fn positive(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::rand_uniform(shape, 0.3, 2.0, rng)
}

fn dims(rng: &mut ChaCha8Rng, rank: usize, max: usize) -> Vec<usize> {
    (0..rank).map(|_| rng.random_range(1..=max)).collect()
}

fn unary(rng: &mut ChaCha8Rng, f: for<'t> fn(Var<'t, f64>) -> Result<Var<'t, f64>>, domain: fn(&[usize], &mut ChaCha8Rng) -> Tensor<f64>) -> Result<f64> {
    let shape = dims(rng, 2, 4);
    let x = domain(&shape, rng);
    check_inputs(&[x], |_, v| f(v[0]))
}

/// Module wrapper that exposes an input tensor as a parameter, so input and
/// parameter gradients are checked together.
struct WithInput<M> {
    inner: M,
    input: Param<f64>,
}

impl<M: Module<f64>> Module<f64> for WithInput<M> {
    fn params(&self) -> Vec<&Param<f64>> {
        let mut v = self.inner.params();
        v.push(&self.input);
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param<f64>> {
        let mut v = self.inner.params_mut();
        v.push(&mut self.input);
        v
    }
}

fn conv_case(rng: &mut ChaCha8Rng, fft: bool) -> Result<f64> {
    let dim = rng.random_range(1..=2);
    let causal = dim == 1 && rng.random::<bool>();
    let separable = rng.random::<bool>();
    let (cin, cout) = (rng.random_range(1..=3), rng.random_range(1..=3));
    let sp: Vec<usize> = (0..dim).map(|_| rng.random_range(3..=if dim == 1 { 9 } else { 5 })).collect();
    let ks: Vec<usize> = sp.iter().map(|&n| rng.random_range(1..=n)).collect();
    let spec = ConvSpec::new(dim, cin, cout, &ks).causal(causal).separable(separable);
    let mut fshape = vec![rng.random_range(1..=2), cin];
    fshape.extend(&sp);
    let mut kshape = if separable { vec![cin] } else { vec![cout, cin] };
    kshape.extend(&ks);
    let (f, k) = (randn(&fshape, rng), randn(&kshape, rng));
    check_inputs(&[f, k], |_, v| if fft { conv_fft(v[0], v[1], &spec) } else { conv_direct(v[0], v[1], &spec) })
}

fn small_net(rng: &mut ChaCha8Rng, d: usize, out: usize) -> Result<KernelNet<f64>> {
    let cfg = KernelNetConfig {
        n_layers: rng.random_range(1..=3),
        ..KernelNetConfig::new(d, rng.random_range(2..=5), out, rng.random_range(1.0..8.0))
    };
    let mut net = KernelNet::init_with_rng(cfg, "k", rng)?;
    net.apply_variance_correction(rng.random_range(1..=4), rng.random_range(1..=9))?;
    if rng.random::<bool>() {
        net = net.with_mask("k", d == 1 && rng.random::<bool>());
    }
    Ok(net)
}

fn flex(rng: &mut ChaCha8Rng, dim: usize, n_in: usize, n_out: usize) -> FlexConfig {
    FlexConfig {
        dim,
        n_in,
        n_out,
        causal: false,
        kernel_hidden: rng.random_range(2..=5),
        kernel_layers: rng.random_range(1..=3),
        omega_0: rng.random_range(1.0..8.0),
        mask: rng.random::<bool>(),
        uncorrected: false,
    }
}

fn cases() -> Vec<(&'static str, Case)> {
    vec![
        ("add", |rng| {
            let s = dims(rng, 2, 4);
            let (a, b) = (randn(&s, rng), randn(&[s[1]], rng));
            check_inputs(&[a, b], |_, v| v[0].add(v[1]))
        }),
        ("sub", |rng| {
            let s = dims(rng, 2, 4);
            let (a, b) = (randn(&s, rng), randn(&[s[0], 1], rng));
            check_inputs(&[a, b], |_, v| v[0].sub(v[1]))
        }),
        ("mul", |rng| {
            let s = dims(rng, 3, 3);
            let (a, b) = (randn(&s, rng), randn(&s, rng));
            check_inputs(&[a, b], |_, v| v[0].mul(v[1]))
        }),
        ("div", |rng| {
            let s = dims(rng, 2, 4);
            let (a, b) = (randn(&s, rng), away_from_zero(&s, rng));
            check_inputs(&[a, b], |_, v| v[0].div(v[1]))
        }),
        ("scale_shift", |rng| {
            let s = dims(rng, 2, 4);
            let (a, c) = (randn(&s, rng), rng.random_range(-2.0..2.0));
            check_inputs(&[a], |_, v| v[0].scale(c)?.add_scalar(c)?.neg())
        }),
        ("matmul", |rng| {
            let d = dims(rng, 3, 4);
            let (a, b) = (randn(&[d[0], d[1]], rng), randn(&[d[1], d[2]], rng));
            check_inputs(&[a, b], |_, v| v[0].matmul(v[1]))
        }),
        ("linear", |rng| {
            let d = dims(rng, 3, 4);
            let (x, w, b) = (randn(&[d[0], d[1]], rng), randn(&[d[2], d[1]], rng), randn(&[d[2]], rng));
            check_inputs(&[x, w, b], |_, v| v[0].linear(v[1], Some(v[2])))
        }),
        ("channel_mix", |rng| {
            let d = dims(rng, 4, 3);
            let (x, w, b) = (randn(&[d[0], d[1], d[2]], rng), randn(&[d[3], d[1]], rng), randn(&[d[3]], rng));
            check_inputs(&[x, w, b], |_, v| v[0].channel_mix(v[1], Some(v[2])))
        }),
        ("sum_mean_axes", |rng| {
            let s = dims(rng, 3, 3);
            let x = randn(&s, rng);
            let keep = rng.random::<bool>();
            check_inputs(&[x], |_, v| v[0].sum_axes(&[0, 2], keep)?.add(v[0].mean_axes(&[1], true)?.sum()?))
        }),
        ("transpose_reshape", |rng| {
            let s = dims(rng, 3, 3);
            let x = randn(&s, rng);
            check_inputs(&[x], |_, v| v[0].transpose(&[2, 0, 1])?.reshape(&[s[2], s[0] * s[1]]))
        }),
        ("broadcast_to", |rng| {
            let s = dims(rng, 2, 3);
            let x = randn(&[1, s[1]], rng);
            check_inputs(&[x], |_, v| v[0].broadcast_to(&[s[0], s[1]]))
        }),
        ("slice_concat", |rng| {
            let s = vec![rng.random_range(2..=4), rng.random_range(2..=5)];
            let (a, b) = (randn(&s, rng), randn(&s, rng));
            let cut = rng.random_range(1..s[1]);
            check_inputs(&[a, b], |_, v| Var::concat(&[v[0].slice(1, 0, cut)?, v[1]], 1))
        }),
        ("gather", |rng| {
            let s = dims(rng, 2, 4);
            let x = randn(&s, rng);
            let idx: Vec<usize> = (0..5).map(|_| rng.random_range(0..s[0])).collect();
            check_inputs(&[x], |_, v| v[0].gather(&idx))
        }),
        ("sin", |rng| unary(rng, |v| v.sin(), randn)),
        ("cos", |rng| unary(rng, |v| v.cos(), randn)),
        ("exp", |rng| unary(rng, |v| v.exp(), randn)),
        ("ln", |rng| unary(rng, |v| v.ln(), positive)),
        ("sqrt", |rng| unary(rng, |v| v.sqrt(), positive)),
        ("relu", |rng| unary(rng, |v| v.relu(), away_from_zero)),
        ("gelu", |rng| unary(rng, |v| v.gelu(), randn)),
        ("powf", |rng| unary(rng, |v| v.powf(1.7), positive)),
        ("square", |rng| unary(rng, |v| v.square(), randn)),
        ("cross_entropy", |rng| {
            let (b, k) = (rng.random_range(1..=4), rng.random_range(2..=5));
            let labels: Vec<usize> = (0..b).map(|_| rng.random_range(0..k)).collect();
            check_inputs(&[randn(&[b, k], rng)], |_, v| v[0].cross_entropy(&labels))
        }),
        ("rfft_irfft", |rng| {
            let s = vec![rng.random_range(1..=3), rng.random_range(2..=9)];
            let n_min = rng.random_range(1..=12);
            let x = randn(&s, rng);
            check_inputs(&[x], |_, v| {
                let spec = v[0].rfft(n_min)?;
                spec.square()?.sum()?.add(spec.irfft()?.sum()?)
            })
        }),
        ("magnet_forward", |rng| {
            let d = rng.random_range(1..=3);
            let out = rng.random_range(1..=3);
            let mut net = small_net(rng, d, out)?;
            let coords = Tensor::rand_uniform(&[rng.random_range(1..=6), d], -1.0, 1.0, rng);
            let a = check_module(&mut net, 8, 1, |tape, n| n.kernel(tape, tape.constant(coords.clone())))?;
            let b = check_inputs(&[coords], |tape, v| net.kernel(tape, v[0]))?;
            Ok(a.max(b))
        }),
        ("conv_direct", |rng| conv_case(rng, false)),
        ("conv_fft", |rng| conv_case(rng, true)),
        ("sep_flexconv", |rng| {
            let dim = rng.random_range(1..=2);
            let (cin, cout) = (rng.random_range(1..=3), rng.random_range(1..=3));
            let sp: Vec<usize> = (0..dim).map(|_| rng.random_range(3..=6)).collect();
            let cfg = flex(rng, dim, cin, cout);
            let layer = SepFlexConv::<f64>::new("c", cfg, rng.random_range(1..=30), rng)?;
            let mut shape = vec![rng.random_range(1..=2), cin];
            shape.extend(&sp);
            let backend = if rng.random::<bool>() { ConvBackend::Fft } else { ConvBackend::Direct };
            let input = Param::new("x", randn(&shape, rng));
            let mut m = WithInput { inner: layer, input };
            check_module(&mut m, 8, 2, |tape, m| Ok(m.inner.forward_grid(tape, tape.param(&m.input), backend)?.0))
        }),
        ("conv_pointcloud", |rng| {
            let (b, p) = (rng.random_range(1..=2), rng.random_range(3..=7));
            let (cin, cout) = (rng.random_range(1..=3), rng.random_range(1..=2));
            let positions = Tensor::rand_uniform(&[b, p, 3], -1.0, 1.0, rng);
            let cfg = PointConvConfig::new(rng.random_range(1..=p), 2.0);
            let nb = Neighborhood::points(&positions, &cfg)?;
            let layer = SepFlexConv::<f64>::new("c", flex(rng, 3, cin, cout), cfg.k_neighbors, rng)?;
            let input = Param::new("x", randn(&[b, cin, p], rng));
            let mut m = WithInput { inner: layer, input };
            check_module(&mut m, 8, 3, |tape, m| Ok(m.inner.forward_points(tape, tape.param(&m.input), &nb)?.0))
        }),
        ("batch_norm", |rng| {
            let c = rng.random_range(1..=3);
            let shape = vec![rng.random_range(2..=3), c, rng.random_range(2..=5)];
            let mut norm = Norm::new("n", NormKind::Batch, c);
            norm.scale.value = randn(&[c], rng);
            norm.shift.value = randn(&[c], rng);
            let input = Param::new("x", randn(&shape, rng));
            let mut m = WithInput { inner: norm, input };
            check_module(&mut m, 64, 4, |tape, m| m.inner.forward(&mut Ctx::train(tape, 0), tape.param(&m.input)))
        }),
        ("block_forward", |rng| {
            let c = rng.random_range(1..=3);
            let style = [BlockStyle::Ccnn, BlockStyle::S4, BlockStyle::FlexNet][rng.random_range(0..3)];
            let norm = if rng.random::<bool>() { NormKind::Batch } else { NormKind::Layer };
            let len = rng.random_range(3..=7);
            let dropout = if rng.random::<bool>() { 0.3 } else { 0.0 };
            let block = Block::<f64>::new("b", style, norm, flex(rng, 1, c, c), len, dropout, rng)?;
            let input = Param::new("x", randn(&[2, c, len], rng));
            let mut m = WithInput { inner: block, input };
            check_module(&mut m, 6, 5, |tape, m| m.inner.forward(&mut Ctx::train(tape, 9), tape.param(&m.input)))
        }),
        ("kernel_l2_loss", |rng| {
            let d = rng.random_range(1..=2);
            let mut net = small_net(rng, d, 2)?;
            let coords = Tensor::rand_uniform(&[rng.random_range(1..=6), d], -1.0, 1.0, rng);
            let lambda = rng.random_range(0.01..1.0);
            check_module(&mut net, 8, 6, |tape, n| {
                let k = n.kernel(tape, tape.constant(coords.clone()))?;
                kernel_l2_loss(tape, &[k, k.scale(0.5)?], lambda)
            })
        }),
    ]
}

/// Names of the checked operations, in suite order.
pub fn operations() -> Vec<&'static str> {
    cases().into_iter().map(|(n, _)| n).collect()
}

/// Runs `instances` random instances of every operation whose name contains
/// `filter` (all when `None`).
pub fn run(instances: usize, seed: u64, filter: Option<&str>) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    for (i, (name, case)) in cases().into_iter().enumerate() {
        if filter.is_some_and(|f| !name.contains(f)) {
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64 * 0x1000));
        let mut worst: f64 = 0.0;
        for _ in 0..instances {
            worst = worst.max(case(&mut rng)?);
        }
        out.push(CheckResult {
            name,
            instances,
            worst,
            passed: worst < TOLERANCE,
        });
    }
    Ok(out)
}
