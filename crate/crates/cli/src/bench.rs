//! Forward plus backward timing of the two grid backends with global
//! kernels (kernel extent equal to the input length).

use std::path::Path;
use std::time::Instant;

use ccnn::ckconv::{conv_direct, conv_fft, ConvBackend, ConvSpec};
use ccnn::{Tape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub backend: ConvBackend,
    pub length: usize,
    pub channels: usize,
    pub median_ms: f64,
    pub p90_ms: f64,
}

/// Runs until both `repeats` samples and about `min_ms` of wall time have
/// been collected, so short cases still get stable medians.
fn time_case(backend: ConvBackend, length: usize, channels: usize, repeats: usize, min_ms: f64) -> CliResult<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(length as u64);
    let f = Tensor::<f32>::randn(&[1, channels, length], 1.0, &mut rng);
    let k = Tensor::<f32>::randn(&[channels, length], 1.0, &mut rng);
    let spec = ConvSpec::new(1, channels, channels, &[length]).causal(true).separable(true);
    let mut samples = Vec::new();
    let mut spent = 0.0;
    while samples.len() < repeats || (spent < min_ms && samples.len() < 1000) {
        let t0 = Instant::now();
        let tape = Tape::new();
        let (fv, kv) = (tape.leaf(f.clone()), tape.leaf(k.clone()));
        let y = match backend {
            ConvBackend::Direct => conv_direct(fv, kv, &spec)?,
            _ => conv_fft(fv, kv, &spec)?,
        };
        let g = tape.backward(y.sum()?)?;
        std::hint::black_box(g);
        let ms = t0.elapsed().as_secs_f64() * 1e3;
        spent += ms;
        samples.push(ms);
    }
    samples.sort_by(f64::total_cmp);
    let q = |p: f64| samples[((samples.len() - 1) as f64 * p).round() as usize];
    Ok((q(0.5), q(0.9)))
}

pub fn bench_conv(lengths: &[usize], channels: usize, repeats: usize) -> CliResult<Vec<BenchRow>> {
    if lengths.is_empty() || lengths.contains(&0) || channels == 0 || repeats == 0 {
        return Err(CliError::Config("bench needs nonempty positive lengths, channels >= 1 and repeats >= 1".into()));
    }
    let mut rows = Vec::new();
    for backend in [ConvBackend::Direct, ConvBackend::Fft] {
        for &length in lengths {
            let (median_ms, p90_ms) = time_case(backend, length, channels, repeats, 300.0)?;
            rows.push(BenchRow {
                backend,
                length,
                channels,
                median_ms,
                p90_ms,
            });
        }
    }
    Ok(rows)
}

pub fn write_bench(rows: &[BenchRow], path: &Path) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// `t(2L) / t(L)` for consecutive doublings of one backend.
pub fn growth_ratios(rows: &[BenchRow], backend: ConvBackend) -> Vec<(usize, f64)> {
    let of: Vec<&BenchRow> = rows.iter().filter(|r| r.backend == backend).collect();
    of.iter()
        .filter_map(|a| {
            of.iter()
                .find(|b| b.length == 2 * a.length)
                .map(|b| (a.length, b.median_ms / a.median_ms))
        })
        .collect()
}
