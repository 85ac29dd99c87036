use serde::{Deserialize, Serialize};

use super::Ctx;
use crate::error::{Error, Result};
use crate::param::{join, Module, Param};
use crate::tensor::{Scalar, Tensor, Var};

pub const EPS: f64 = 1e-5;
pub const MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    /// Per channel over batch and space; running statistics in eval mode.
    Batch,
    /// Per position over channels.
    Layer,
}

/// Normalization with per-channel scale and shift only.
#[derive(Clone, Debug)]
pub struct Norm<S: Scalar> {
    pub kind: NormKind,
    pub scale: Param<S>,
    pub shift: Param<S>,
    pub running_mean: Param<S>,
    pub running_var: Param<S>,
}

/// Pending running-statistics update produced by a training forward pass.
#[derive(Clone, Debug)]
pub struct StatUpdate {
    pub prefix: String,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

fn channel_shape(rank: usize, c: usize) -> Vec<usize> {
    let mut s = vec![1; rank];
    s[1] = c;
    s
}

impl<S: Scalar> Norm<S> {
    pub fn new(prefix: &str, kind: NormKind, channels: usize) -> Self {
        Norm {
            kind,
            scale: Param::new(join(prefix, "scale"), Tensor::ones(&[channels])),
            shift: Param::new(join(prefix, "shift"), Tensor::zeros(&[channels])),
            running_mean: Param::buffer(join(prefix, "running_mean"), Tensor::zeros(&[channels])),
            running_var: Param::buffer(join(prefix, "running_var"), Tensor::ones(&[channels])),
        }
    }

    pub fn channels(&self) -> usize {
        self.scale.numel()
    }

    fn prefix(&self) -> &str {
        self.scale.name.strip_suffix(".scale").unwrap_or("")
    }

    /// `x: [B, C, ...]`.
    pub fn forward<'t>(&self, ctx: &mut Ctx<'t, S>, x: Var<'t, S>) -> Result<Var<'t, S>> {
        let shape = x.shape();
        let c = self.channels();
        if shape.len() < 3 || shape[1] != c {
            return Err(Error::shape("norm", &shape, &[usize::MAX, c]));
        }
        let tape = ctx.tape;
        let cs = channel_shape(shape.len(), c);
        let gamma = tape.param(&self.scale).reshape(&cs)?;
        let beta = tape.param(&self.shift).reshape(&cs)?;
        let eps = S::cast(EPS);
        let xhat = match self.kind {
            NormKind::Layer => {
                let mean = x.mean_axes(&[1], true)?;
                let d = x.sub(mean)?;
                let var = d.square()?.mean_axes(&[1], true)?;
                d.div(var.add_scalar(eps)?.sqrt()?)?
            }
            NormKind::Batch if ctx.train => {
                let axes: Vec<usize> = std::iter::once(0).chain(2..shape.len()).collect();
                let count: usize = axes.iter().map(|&a| shape[a]).product();
                if count < 2 {
                    return Err(Error::invalid("batch_norm", "training statistics need more than one value per channel"));
                }
                let mean = x.mean_axes(&axes, true)?;
                let d = x.sub(mean)?;
                let var = d.square()?.mean_axes(&axes, true)?;
                let unbias = count as f64 / (count - 1) as f64;
                ctx.stat_updates.push(StatUpdate {
                    prefix: self.prefix().to_string(),
                    mean: mean.value().data().iter().map(|v| v.as_f64()).collect(),
                    var: var.value().data().iter().map(|v| v.as_f64() * unbias).collect(),
                });
                d.div(var.add_scalar(eps)?.sqrt()?)?
            }
            NormKind::Batch => {
                let m = tape.constant(self.running_mean.value.clone().reshape(&cs)?);
                let sd = self.running_var.value.map(|v| (v + eps).sqrt()).reshape(&cs)?;
                x.sub(m)?.div(tape.constant(sd))?
            }
        };
        xhat.mul(gamma)?.add(beta)
    }

    /// Blends batch statistics into the running estimates.
    pub fn commit(&mut self, upd: &StatUpdate) {
        let m = S::cast(MOMENTUM);
        let one = S::one();
        for (r, &b) in self.running_mean.value.data_mut().iter_mut().zip(&upd.mean) {
            *r = (one - m) * *r + m * S::cast(b);
        }
        for (r, &b) in self.running_var.value.data_mut().iter_mut().zip(&upd.var) {
            *r = (one - m) * *r + m * S::cast(b);
        }
    }
}

impl<S: Scalar> Module<S> for Norm<S> {
    fn params(&self) -> Vec<&Param<S>> {
        vec![&self.scale, &self.shift, &self.running_mean, &self.running_var]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<S>> {
        vec![&mut self.scale, &mut self.shift, &mut self.running_mean, &mut self.running_var]
    }
}
