use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::GridSample;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Lowest class frequency and spacing between classes, in cycles per window.
const BASE_FREQ: f64 = 4.0;
const FREQ_SPACING: f64 = 4.0;
/// Every component stays below this many cycles per window, so any length of
/// at least `2 · MAX_FREQ` samples resolves the signal.
pub const MAX_FREQ: f64 = 48.0;

#[derive(Clone, Debug, PartialEq)]
pub struct WaveformConfig {
    pub classes: usize,
    /// Standard deviation of the band-limited noise.
    pub noise: f64,
    /// Number of random sinusoids making up the noise.
    pub noise_components: usize,
    /// Half-width of the uniform jitter on the class frequency.
    pub freq_jitter: f64,
}

impl WaveformConfig {
    pub fn new(classes: usize) -> Self {
        WaveformConfig {
            classes,
            noise: 0.6,
            noise_components: 16,
            freq_jitter: 0.5,
        }
    }
}

/// Centre frequency of class `c`.
pub fn class_frequency(c: usize) -> f64 {
    BASE_FREQ + FREQ_SPACING * c as f64
}

/// A continuous signal on `t ∈ [0, 1)`: one class tone plus a sum of random
/// tones. Sampling at any length evaluates the same function.
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    pub label: usize,
    /// `(amplitude, cycles, phase)`, the class tone first.
    pub tones: Vec<(f64, f64, f64)>,
}

impl Waveform {
    pub fn eval(&self, t: f64) -> f64 {
        self.tones.iter().map(|&(a, f, p)| a * (2.0 * PI * f * t + p).sin()).sum()
    }

    /// `[1, length]` samples at `t_i = i / length`.
    pub fn sample(&self, length: usize) -> Tensor<f64> {
        Tensor::from_fn(&[1, length], |i| self.eval(i as f64 / length as f64))
    }

    /// Labels cycle through the classes; sample `i` has label `i % classes`.
    pub fn generate(n: usize, cfg: &WaveformConfig, seed: u64) -> Result<Vec<Waveform>> {
        if cfg.classes < 2 {
            return Err(Error::config(format!("need at least 2 classes, got {}", cfg.classes)));
        }
        if class_frequency(cfg.classes - 1) + cfg.freq_jitter > MAX_FREQ {
            return Err(Error::config(format!("{} classes do not fit below {MAX_FREQ} cycles", cfg.classes)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok((0..n)
            .map(|i| {
                let label = i % cfg.classes;
                let f = class_frequency(label) + rng.random_range(-cfg.freq_jitter..=cfg.freq_jitter);
                let mut tones = vec![(rng.random_range(0.8..1.2), f, rng.random_range(0.0..2.0 * PI))];
                let raw: Vec<(f64, f64, f64)> = (0..cfg.noise_components)
                    .map(|_| {
                        let a: f64 = StandardNormal.sample(&mut rng);
                        (a, rng.random_range(1.0..MAX_FREQ), rng.random_range(0.0..2.0 * PI))
                    })
                    .collect();
                // each tone contributes a²/2 to the variance
                let power: f64 = raw.iter().map(|t| t.0 * t.0 / 2.0).sum();
                let s = if power > 0.0 { cfg.noise / power.sqrt() } else { 0.0 };
                tones.extend(raw.into_iter().map(|(a, f, p)| (a * s, f, p)));
                Waveform { label, tones }
            })
            .collect())
    }
}

/// `n` labelled waveforms sampled at `length` points with default noise.
pub fn synth_waveforms(n: usize, length: usize, classes: usize, seed: u64) -> Result<Vec<GridSample>> {
    Ok(Waveform::generate(n, &WaveformConfig::new(classes), seed)?
        .iter()
        .map(|w| GridSample {
            features: w.sample(length),
            label: w.label,
        })
        .collect())
}
