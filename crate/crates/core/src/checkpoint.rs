//! Checkpoints: a JSON manifest plus one tensor snapshot per parameter.
//!
//! ```text
//! <dir>/manifest.json
//! <dir>/tensors/<parameter path>.bin
//! ```

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ccnn::{Model, ModelConfig};
use crate::error::{Error, Result};
use crate::param::Module;
use crate::tensor::{Scalar, Tensor};

pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub file: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub model: ModelConfig,
    pub step: u64,
    pub epoch: usize,
    /// Free-form run information (metric history, experiment config).
    pub meta: serde_json::Value,
    pub tensors: Vec<TensorEntry>,
}

/// Writes `model` under `dir`, replacing an existing checkpoint there.
pub fn save<S: Scalar>(dir: &Path, model: &Model<S>, step: u64, epoch: usize, meta: serde_json::Value) -> Result<()> {
    let tdir = dir.join("tensors");
    fs::create_dir_all(&tdir)?;
    let mut tensors = Vec::new();
    for p in model.params() {
        let file = format!("tensors/{}.bin", p.name);
        let mut w = BufWriter::new(File::create(dir.join(&file))?);
        p.value.write_snapshot(&mut w)?;
        w.flush()?;
        tensors.push(TensorEntry {
            name: p.name.clone(),
            shape: p.value.shape().to_vec(),
            file,
        });
    }
    let manifest = Manifest {
        model: model.config.clone(),
        step,
        epoch,
        meta,
        tensors,
    };
    // manifest last: its presence marks a complete checkpoint
    let tmp = dir.join("manifest.json.tmp");
    fs::write(&tmp, serde_json::to_vec_pretty(&manifest)?)?;
    fs::rename(tmp, dir.join(MANIFEST))?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let bytes = fs::read(dir.join(MANIFEST))?;
    Ok(serde_json::from_slice(&bytes)?)
}

/// Rebuilds the model from the manifest config and overwrites every
/// parameter and buffer with the stored snapshot.
pub fn load<S: Scalar>(dir: &Path) -> Result<(Model<S>, Manifest)> {
    let manifest = read_manifest(dir)?;
    let mut model = Model::<S>::new(manifest.model.clone(), 0)?;
    let mut params = model.params_mut();
    if params.len() != manifest.tensors.len() {
        return Err(Error::Format(format!(
            "checkpoint has {} tensors, model expects {}",
            manifest.tensors.len(),
            params.len()
        )));
    }
    for entry in &manifest.tensors {
        let p = params
            .iter_mut()
            .find(|p| p.name == entry.name)
            .ok_or_else(|| Error::Format(format!("checkpoint tensor {:?} is not a model parameter", entry.name)))?;
        let t = Tensor::<S>::read_snapshot(&mut BufReader::new(File::open(dir.join(&entry.file))?))?;
        if t.shape() != p.value.shape() {
            return Err(Error::shape("checkpoint", t.shape(), p.value.shape()));
        }
        p.value = t;
    }
    Ok((model, manifest))
}
