//! Kernel export: each continuous convolution's generated kernels sampled
//! on a regular lattice.

use std::path::{Path, PathBuf};

use ccnn::checkpoint;
use ccnn::ckconv::build_relative_coords;

use crate::error::{CliError, CliResult};
use crate::train::resolve_checkpoint;

/// Writes `kernels_<layer>.csv` with columns `layer, channel, offset_0..,
/// value` for every layer (or only `layer`), sampling `resolution` points
/// per axis. Layer 0 is the stem, then block convolutions in order.
pub fn export_kernels(checkpoint_path: &Path, layer: Option<usize>, resolution: usize, out: &Path) -> CliResult<Vec<PathBuf>> {
    if resolution == 0 {
        return Err(CliError::Config("resolution must be >= 1".into()));
    }
    let (model, _) = checkpoint::load::<f32>(&resolve_checkpoint(checkpoint_path))?;
    let layers = model.conv_layers();
    let chosen: Vec<usize> = match layer {
        Some(l) if l >= layers.len() => {
            return Err(CliError::Config(format!("unknown layer {l}; the model has layers 0..{}", layers.len())));
        }
        Some(l) => vec![l],
        None => (0..layers.len()).collect(),
    };
    std::fs::create_dir_all(out)?;
    let dim = model.config.dim;
    let coords = build_relative_coords::<f32>(&vec![resolution; dim], model.config.causal)?.coords;
    let mut files = Vec::new();
    for l in chosen {
        let k = layers[l].net.eval(&coords)?;
        let path = out.join(format!("kernels_{l}.csv"));
        let mut w = csv::Writer::from_path(&path)?;
        let mut header = vec!["layer".to_string(), "channel".to_string()];
        header.extend((0..dim).map(|a| format!("offset_{a}")));
        header.push("value".into());
        w.write_record(&header)?;
        let (p, c) = (k.shape()[0], k.shape()[1]);
        for ch in 0..c {
            for i in 0..p {
                let mut row = vec![l.to_string(), ch.to_string()];
                row.extend((0..dim).map(|a| format!("{:.8e}", coords.get(&[i, a]))));
                row.push(format!("{:.8e}", k.get(&[i, ch])));
                w.write_record(&row)?;
            }
        }
        w.flush()?;
        files.push(path);
    }
    Ok(files)
}
