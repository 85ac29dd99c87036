use ccnn::ccnn::{global_avg_pool, Block, BlockStyle, Ctx, Domain, Model, ModelConfig, Norm, NormKind};
use ccnn::ckconv::{ConvBackend, FlexConfig};
use ccnn::gradcheck::check_module;
use ccnn::{Module, Tape, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn flex(c: usize) -> FlexConfig {
    FlexConfig {
        dim: 1,
        n_in: c,
        n_out: c,
        causal: false,
        kernel_hidden: 8,
        kernel_layers: 2,
        omega_0: 10.0,
        mask: false,
        uncorrected: false,
    }
}

fn block(style: BlockStyle, c: usize, seed: u64) -> Block<f64> {
    Block::new("b", style, NormKind::Batch, flex(c), 7, 0.0, &mut rng(seed)).unwrap()
}

fn zero_branch(b: &mut Block<f64>) {
    b.conv.weight.value = Tensor::zeros(b.conv.weight.value.shape());
    let (w, bias) = b.linear.as_mut().unwrap();
    w.value = Tensor::zeros(w.value.shape());
    bias.value = Tensor::zeros(bias.value.shape());
}

#[test]
fn batch_norm_constant_channel_gives_shift() {
    let mut n = Norm::<f64>::new("n", NormKind::Batch, 2);
    n.shift.value = Tensor::from_f64(&[2], &[0.5, -1.5]).unwrap();
    let x = Tensor::from_fn(&[3, 2, 4], |i| if (i / 4) % 2 == 0 { 7.0 } else { -2.0 });
    let tape = Tape::no_grad();
    let mut ctx = Ctx::train(&tape, 0);
    let y = n.forward(&mut ctx, tape.constant(x)).unwrap().value();
    for (i, v) in y.data().iter().enumerate() {
        let want = if (i / 4) % 2 == 0 { 0.5 } else { -1.5 };
        assert!((v - want).abs() < 1e-12);
    }
}

#[test]
fn batch_norm_standardizes_per_channel() {
    let n = Norm::<f64>::new("n", NormKind::Batch, 3);
    let x = Tensor::<f64>::from_fn(&[8, 3, 16], |i| ((i * 7919) % 101) as f64 * 0.3 + (i / 16 % 3) as f64 * 5.0);
    let tape = Tape::no_grad();
    let mut ctx = Ctx::train(&tape, 0);
    let y = n.forward(&mut ctx, tape.constant(x)).unwrap().value();
    for c in 0..3 {
        let v: Vec<f64> = (0..8).flat_map(|b| (0..16).map(move |s| (b, s))).map(|(b, s)| y.get(&[b, c, s])).collect();
        let m = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|a| (a - m).powi(2)).sum::<f64>() / v.len() as f64;
        assert!(m.abs() < 1e-10);
        assert!((var - 1.0).abs() < 1e-3);
    }
    assert_eq!(ctx.stat_updates.len(), 1);
}

#[test]
fn batch_norm_eval_ignores_batch_composition() {
    let mut n = Norm::<f64>::new("n", NormKind::Batch, 2);
    let x = Tensor::<f64>::from_fn(&[4, 2, 5], |i| (i as f64).sin() * 3.0);
    {
        let tape = Tape::no_grad();
        let mut ctx = Ctx::train(&tape, 0);
        n.forward(&mut ctx, tape.constant(x.clone())).unwrap();
        let upd = ctx.stat_updates.pop().unwrap();
        n.commit(&upd);
    }
    let tape = Tape::no_grad();
    let mut ctx = Ctx::eval(&tape);
    let full = n.forward(&mut ctx, tape.constant(x.clone())).unwrap().value();
    let first = x.data()[..10].to_vec();
    let alone = n.forward(&mut ctx, tape.constant(Tensor::from_f64(&[1, 2, 5], &first).unwrap())).unwrap().value();
    assert_eq!(&full.data()[..10], alone.data());
}

#[test]
fn batch_norm_rejects_singleton_statistics() {
    let n = Norm::<f64>::new("n", NormKind::Batch, 2);
    let tape = Tape::no_grad();
    let mut ctx = Ctx::train(&tape, 0);
    assert!(n.forward(&mut ctx, tape.constant(Tensor::zeros(&[1, 2, 1]))).is_err());
    let mut ctx = Ctx::eval(&tape);
    assert!(n.forward(&mut ctx, tape.constant(Tensor::zeros(&[1, 2, 1]))).is_ok());
}

#[test]
fn dead_branch_gives_gelu() {
    let mut b = block(BlockStyle::Ccnn, 3, 1);
    zero_branch(&mut b);
    let x = Tensor::from_fn(&[2, 3, 7], |i| (i as f64 * 0.37).cos() * 2.0);
    let tape = Tape::no_grad();
    let mut ctx = Ctx::train(&tape, 0);
    let y = b.forward(&mut ctx, tape.constant(x.clone())).unwrap().value();
    let want = tape.constant(x).gelu().unwrap().value();
    assert!(y.max_abs_diff(&want) < 1e-15);

    let z = b.forward(&mut Ctx::eval(&tape), tape.constant(Tensor::zeros(&[2, 3, 7]))).unwrap().value();
    assert!(z.data().iter().all(|&v| v == 0.0));
}

#[test]
fn ccnn_is_gelu_of_s4() {
    for seed in 0..5 {
        let ccnn = block(BlockStyle::Ccnn, 4, seed);
        let mut s4 = ccnn.clone();
        s4.style = BlockStyle::S4;
        let x = Tensor::<f64>::randn(&[3, 4, 9], 1.0, &mut rng(100 + seed));
        let tape = Tape::no_grad();
        let y_ccnn = ccnn.forward(&mut Ctx::train(&tape, 5), tape.constant(x.clone())).unwrap();
        let y_s4 = s4.forward(&mut Ctx::train(&tape, 5), tape.constant(x)).unwrap();
        assert_eq!(y_ccnn.value().data(), y_s4.gelu().unwrap().value().data());
    }
}

#[test]
fn blocks_preserve_extent_and_reject_channel_mismatch() {
    for style in [BlockStyle::Ccnn, BlockStyle::S4, BlockStyle::FlexNet] {
        let b = block(style, 3, 2);
        let tape = Tape::no_grad();
        let y = b.forward(&mut Ctx::train(&tape, 0), tape.constant(Tensor::ones(&[2, 3, 11]))).unwrap();
        assert_eq!(y.shape(), vec![2, 3, 11]);
        assert!(b.forward(&mut Ctx::train(&tape, 0), tape.constant(Tensor::ones(&[2, 4, 11]))).is_err());
    }
}

#[test]
fn dropout_only_in_training() {
    let mut b = Block::<f64>::new("b", BlockStyle::Ccnn, NormKind::Batch, flex(4), 7, 0.5, &mut rng(3)).unwrap();
    b.norm.kind = NormKind::Layer;
    let x = Tensor::<f64>::randn(&[2, 4, 9], 1.0, &mut rng(4));
    let tape = Tape::no_grad();
    let e1 = b.forward(&mut Ctx::eval(&tape), tape.constant(x.clone())).unwrap().value();
    let e2 = b.forward(&mut Ctx::eval(&tape), tape.constant(x.clone())).unwrap().value();
    assert_eq!(e1, e2);
    let t1 = b.forward(&mut Ctx::train(&tape, 1), tape.constant(x.clone())).unwrap().value();
    let t2 = b.forward(&mut Ctx::train(&tape, 2), tape.constant(x.clone())).unwrap().value();
    assert_ne!(t1, t2);
    assert_ne!(t1, e1);
}

#[test]
fn pooling_examples() {
    let tape = Tape::<f64>::no_grad();
    let c = global_avg_pool(tape.constant(Tensor::full(&[1, 2, 5], 3.5)), None).unwrap().value();
    assert_eq!(c.data(), &[3.5, 3.5]);
    let x = tape.constant(Tensor::from_f64(&[1, 1, 3], &[1.0, 2.0, 3.0]).unwrap());
    assert_eq!(global_avg_pool(x, None).unwrap().value().item(), 2.0);
    let x = tape.constant(Tensor::from_f64(&[1, 1, 4], &[1.0, 3.0, 100.0, -7.0]).unwrap());
    let m = global_avg_pool(x, Some(&[true, true, false, false])).unwrap().value();
    assert_eq!(m.item(), 2.0);
    assert!(global_avg_pool(x, Some(&[false; 4])).is_err());
}

#[test]
fn logits_shape() {
    let cfg = ModelConfig {
        kernel_hidden: 8,
        ..ModelConfig::new(1, 1, 10, 8, 2, Domain::Grid { extent: vec![64] })
    };
    let m = Model::<f64>::new(cfg, 0).unwrap();
    let y = m.predict(&Tensor::ones(&[2, 1, 64]), None, ConvBackend::Auto).unwrap();
    assert_eq!(y.shape(), &[2, 10]);
    assert!(m.predict(&Tensor::ones(&[2, 2, 64]), None, ConvBackend::Auto).is_err());
    assert!(m.predict(&Tensor::ones(&[2, 1, 8, 8]), None, ConvBackend::Auto).is_err());
}

#[test]
fn preset_parameter_counts() {
    let grid = || Domain::Grid { extent: vec![196] };
    let small = Model::<f32>::new(ModelConfig::ccnn_4_140(1, 1, 10, grid()), 0).unwrap().num_params();
    let large = Model::<f32>::new(ModelConfig::ccnn_6_380(1, 1, 10, grid()), 0).unwrap().num_params();
    assert!((small as f64 / 200e3 - 1.0).abs() <= 0.15, "{small}");
    assert!((large as f64 / 2e6 - 1.0).abs() <= 0.15, "{large}");
    assert!(ModelConfig::preset("ccnn_1_1", 1, 1, 10, grid()).is_err());
}

#[test]
fn invalid_configs() {
    let g = Domain::Grid { extent: vec![16] };
    assert!(Model::<f64>::new(ModelConfig::new(1, 1, 10, 8, 0, g.clone()), 0).is_err());
    assert!(Model::<f64>::new(ModelConfig::new(2, 1, 10, 8, 1, g.clone()), 0).is_err());
    let causal2d = ModelConfig { causal: true, ..ModelConfig::new(2, 1, 10, 8, 1, Domain::Grid { extent: vec![4, 4] }) };
    assert!(Model::<f64>::new(causal2d, 0).is_err());
}

#[test]
fn running_stats_commit_by_name() {
    let cfg = ModelConfig { kernel_hidden: 8, ..ModelConfig::new(1, 1, 3, 4, 2, Domain::Grid { extent: vec![8] }) };
    let mut m = Model::<f64>::new(cfg, 0).unwrap();
    let x = Tensor::<f64>::randn(&[4, 1, 8], 1.0, &mut rng(0));
    let updates = {
        let tape = Tape::no_grad();
        let mut ctx = Ctx::train(&tape, 0);
        m.forward(&mut ctx, tape.constant(x)).unwrap();
        ctx.stat_updates
    };
    assert_eq!(updates.len(), 2);
    m.commit_stats(&updates).unwrap();
    let rm = &m.blocks[1].norm.running_mean.value;
    assert!(rm.data().iter().any(|&v| v != 0.0));
    let expect: Vec<f64> = updates[1].mean.iter().map(|v| 0.1 * v).collect();
    assert!(rm.data().iter().zip(&expect).all(|(a, b)| (a - b).abs() < 1e-15));
}

#[test]
fn end_to_end_gradient() {
    for style in [BlockStyle::Ccnn, BlockStyle::FlexNet] {
        let cfg = ModelConfig {
            kernel_hidden: 6,
            kernel_layers: 2,
            omega_0: 8.0,
            style,
            dropout: 0.2,
            final_norm: true,
            ..ModelConfig::new(1, 2, 3, 4, 2, Domain::Grid { extent: vec![8] })
        };
        let mut m = Model::<f64>::new(cfg, 11).unwrap();
        let x = Tensor::<f64>::randn(&[3, 2, 8], 1.0, &mut rng(12));
        let err = check_module(&mut m, 6, 0, |tape, m| {
            let mut ctx = Ctx::train(tape, 3);
            let logits = m.forward(&mut ctx, tape.constant(x.clone()))?;
            logits.cross_entropy(&[0, 2, 1])
        })
        .unwrap();
        assert!(err < 1e-3, "{style:?}: {err}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    /// The pointwise parts of a model (linear maps, layer norm) act per position.
    #[test]
    fn pointwise_maps_ignore_position(seed in 0u64..1000, shift in 1usize..6) {
        let mut b = block(BlockStyle::Ccnn, 3, seed);
        b.norm.kind = NormKind::Layer;
        b.conv.net.correction = 0.0;
        let x = Tensor::<f64>::randn(&[1, 3, 6], 1.0, &mut rng(seed + 1));
        let tape = Tape::no_grad();
        let y = b.forward(&mut Ctx::eval(&tape), tape.constant(x.clone())).unwrap().value();
        // column 0 moved to column `shift` gives the same output column
        let mut moved = Tensor::zeros(&[1, 3, 6]);
        for c in 0..3 {
            moved.data_mut()[c * 6 + shift] = x.data()[c * 6];
        }
        let ym = b.forward(&mut Ctx::eval(&tape), tape.constant(moved)).unwrap().value();
        for c in 0..3 {
            prop_assert!((y.data()[c * 6] - ym.data()[c * 6 + shift]).abs() < 1e-12);
        }
    }
}
