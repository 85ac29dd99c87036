use std::f64::consts::PI;

use ccnn::data::{
    class_frequency, synth_shapes, synth_waveforms, voxelize, PointCloudSample, Waveform, WaveformConfig, HALF_EXTENT,
    SPHERE_RADIUS,
};
use proptest::prelude::*;

/// Magnitude of the signal's projection onto each class frequency; picks the largest.
fn spectral_peak(x: &[f64], classes: usize) -> usize {
    let n = x.len() as f64;
    (0..classes)
        .map(|c| {
            let f = class_frequency(c);
            let (mut re, mut im) = (0.0, 0.0);
            for (i, &v) in x.iter().enumerate() {
                let a = 2.0 * PI * f * i as f64 / n;
                re += v * a.cos();
                im -= v * a.sin();
            }
            (c, re * re + im * im)
        })
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap()
        .0
}

fn peak_accuracy(n: usize, length: usize, cfg: &WaveformConfig, seed: u64) -> f64 {
    let w = Waveform::generate(n, cfg, seed).unwrap();
    let hits = w.iter().filter(|w| spectral_peak(w.sample(length).data(), cfg.classes) == w.label).count();
    hits as f64 / n as f64
}

#[test]
fn noiseless_waveforms_are_separable() {
    let cfg = WaveformConfig { noise: 0.0, ..WaveformConfig::new(10) };
    assert_eq!(peak_accuracy(500, 256, &cfg, 1), 1.0);
    assert_eq!(peak_accuracy(500, 128, &cfg, 1), 1.0);
}

#[test]
fn spectral_oracle_exceeds_99_percent() {
    let cfg = WaveformConfig::new(10);
    for length in [128, 256] {
        let acc = peak_accuracy(3000, length, &cfg, 5);
        assert!(acc > 0.99, "length {length}: {acc}");
    }
}

#[test]
fn waveforms_are_seeded_and_resolution_consistent() {
    let a = synth_waveforms(20, 256, 10, 9).unwrap();
    assert_eq!(a, synth_waveforms(20, 256, 10, 9).unwrap());
    assert_ne!(a, synth_waveforms(20, 256, 10, 10).unwrap());
    let b = synth_waveforms(20, 128, 10, 9).unwrap();
    for (hi, lo) in a.iter().zip(&b) {
        assert_eq!(hi.label, lo.label);
        for i in 0..128 {
            assert!((hi.features.data()[2 * i] - lo.features.data()[i]).abs() < 1e-12);
        }
    }
    assert!(synth_waveforms(4, 64, 1, 0).is_err());
}

/// `max_i n_i·p / d_i` for the unit-scale shape rotated by `theta`; equals the
/// scale on the surface.
fn gauge(class: usize, p: [f64; 3], theta: f64) -> f64 {
    let (s, c) = theta.sin_cos();
    let (x, y, z) = (c * p[0] + s * p[1], -s * p[0] + c * p[1], p[2]);
    let h = HALF_EXTENT;
    match class {
        0 => (x * x + y * y + z * z).sqrt() / SPHERE_RADIUS,
        1 => x.abs().max(y.abs()).max(z.abs()) / h,
        _ => [-z, 2.0 * x + z, -2.0 * x + z, 2.0 * y + z, -2.0 * y + z]
            .into_iter()
            .fold(f64::MIN, f64::max)
            / h,
    }
}

/// Class whose surface, at the best rotation, has the smallest relative spread of gauge values.
fn nearest_surface(cloud: &PointCloudSample) -> usize {
    let pts: Vec<[f64; 3]> = (0..cloud.n_points()).map(|i| cloud.point(i)).collect();
    let spread = |class: usize, theta: f64| {
        let g: Vec<f64> = pts.iter().map(|&p| gauge(class, p, theta)).collect();
        let m = g.iter().sum::<f64>() / g.len() as f64;
        (g.iter().map(|v| (v - m).powi(2)).sum::<f64>() / g.len() as f64).sqrt() / m
    };
    (0..3)
        .map(|class| {
            let best = (0..90).map(|k| spread(class, k as f64 * PI / 180.0)).fold(f64::MAX, f64::min);
            (class, best)
        })
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap()
        .0
}

#[test]
fn shape_oracle_exceeds_99_percent() {
    let clouds = synth_shapes(300, 128, 3).unwrap();
    let hits = clouds.iter().filter(|c| nearest_surface(c) == c.label).count();
    assert!(hits as f64 / 300.0 >= 0.99, "{hits}/300");
}

#[test]
fn shapes_are_seeded_and_bounded() {
    let a = synth_shapes(12, 64, 4).unwrap();
    assert_eq!(a, synth_shapes(12, 64, 4).unwrap());
    for c in &a {
        assert!(c.positions.data().iter().all(|v| v.abs() <= 1.0));
    }
    // sphere radii equal the per-cloud scale times the unit radius
    let r: Vec<f64> = (0..64).map(|i| a[0].point(i).iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    let (lo, hi) = r.iter().fold((f64::MAX, f64::MIN), |(l, h), &v| (l.min(v), h.max(v)));
    assert!(hi - lo < 1e-9);
    assert!(synth_shapes(1, 16, 0).is_err());
}

proptest! {
    #[test]
    fn voxel_centers_quantize_points(x in -1.0f64..=1.0, y in -1.0f64..=1.0, z in -1.0f64..=1.0, n in 2usize..48) {
        let t = ccnn::Tensor::from_f64(&[1, 3], &[x, y, z]).unwrap();
        let cloud = PointCloudSample { positions: t.clone(), features: t, label: 0 };
        let v = voxelize(&cloud, n, None);
        let c = v.centers()[0];
        for (a, p) in [x, y, z].into_iter().enumerate() {
            prop_assert!(v.occupied[0][a] < n);
            prop_assert!((c[a] - p).abs() <= 1.0 / n as f64 + 1e-12);
        }
    }

    #[test]
    fn subsample_length_is_ceiling(len in 1usize..200, f in 1usize..9) {
        let seq = ccnn::Tensor::<f64>::zeros(&[1, len]);
        prop_assert_eq!(ccnn::data::subsample_sequence(&seq, f).unwrap().shape()[1], len.div_ceil(f));
    }
}

#[test]
fn bundled_mnist_subset_loads() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist");
    let (train, train_labels) = ccnn::data::load_mnist(&dir, true).unwrap();
    let (test, test_labels) = ccnn::data::load_mnist(&dir, false).unwrap();
    assert_eq!((train.n, train.rows, train.cols), (8000, 28, 28));
    assert_eq!((test.n, test_labels.len()), (2000, 2000));
    assert_eq!(train_labels.len(), 8000);
    assert!(train_labels.iter().chain(&test_labels).all(|&l| l < 10));
    let seqs = ccnn::data::mnist_sequences(&test, &test_labels, 2, None, (0.1307, 0.3081)).unwrap();
    assert_eq!(seqs[0].features.shape(), &[1, 196]);
}
