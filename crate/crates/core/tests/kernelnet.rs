use ccnn::kernelnet::{KernelNet, KernelNetConfig};
use ccnn::Tensor;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Monte-Carlo kernel variance over 10⁴ coordinates after the correction.
fn corrected_variance(d: usize, n_in: usize, support: usize, seed: u64) -> f64 {
    let mut net = KernelNet::<f64>::init(KernelNetConfig::new(d, 32, n_in, 30.0), seed).unwrap();
    net.apply_variance_correction(n_in, support).unwrap();
    let coords = Tensor::rand_uniform(&[10_000, d], -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(seed ^ 0xabc));
    net.eval(&coords).unwrap().variance()
}

#[test]
fn corrected_variance_hits_he_target() {
    for (n_in, support) in [(16, 33), (64, 257)] {
        let target = 2.0 / (n_in * support) as f64;
        for d in 1..=3 {
            for seed in 0..3 {
                let v = corrected_variance(d, n_in, support, seed);
                assert!((v / target - 1.0).abs() <= 0.5, "({n_in}, {support}) D={d} seed={seed}: {v:e} vs {target:e}");
            }
        }
    }
}

#[test]
fn same_seed_same_kernel() {
    let coords = Tensor::rand_uniform(&[50, 2], -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(0));
    let a = KernelNet::<f64>::init(KernelNetConfig::new(2, 8, 3, 10.0), 4).unwrap();
    let b = KernelNet::<f64>::init(KernelNetConfig::new(2, 8, 3, 10.0), 4).unwrap();
    assert_eq!(a.eval(&coords).unwrap(), b.eval(&coords).unwrap());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn unit_variance_before_correction(seed in 0u64..10_000, d in 1usize..=3, out in 1usize..=8) {
        let net = KernelNet::<f64>::init(KernelNetConfig::new(d, 32, out, 20.0), seed).unwrap();
        let coords = Tensor::rand_uniform(&[10_000, d], -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(seed));
        let v = net.eval(&coords).unwrap().variance();
        prop_assert!((0.5..=1.5).contains(&v), "{}", v);
    }
}
