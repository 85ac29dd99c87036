use rand::Rng;
use serde::{Deserialize, Serialize};

use super::norm::{Norm, NormKind};
use super::Ctx;
use crate::ckconv::{FlexConfig, SepFlexConv};
use crate::error::{Error, Result};
use crate::param::{join, Module, Param};
use crate::tensor::{Scalar, Tensor, Var};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockStyle {
    /// `GELU(x + Linear(Dropout(GELU(Conv(Norm(x))))))`.
    #[default]
    Ccnn,
    /// As `Ccnn` without the outer activation.
    S4,
    /// `x + GELU(Conv(Norm(Dropout(GELU(Conv(Norm(x)))))))`.
    FlexNet,
}

impl std::str::FromStr for BlockStyle {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ccnn" => Ok(BlockStyle::Ccnn),
            "s4" => Ok(BlockStyle::S4),
            "flexnet" => Ok(BlockStyle::FlexNet),
            _ => Err(Error::config(format!("unknown block style {s:?} (expected ccnn, s4 or flexnet)"))),
        }
    }
}

/// Residual block with equal input and output channels.
#[derive(Clone, Debug)]
pub struct Block<S: Scalar> {
    pub style: BlockStyle,
    pub norm: Norm<S>,
    pub conv: SepFlexConv<S>,
    /// `[C, C]` pointwise map (CCNN and S4 styles).
    pub linear: Option<(Param<S>, Param<S>)>,
    /// Second normalization and convolution (FlexNet style).
    pub second: Option<(Norm<S>, SepFlexConv<S>)>,
    pub dropout: f64,
}

impl<S: Scalar> Block<S> {
    pub fn new(
        prefix: &str,
        style: BlockStyle,
        norm: NormKind,
        conv: FlexConfig,
        support: usize,
        dropout: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let c = conv.n_in;
        if conv.n_out != c {
            return Err(Error::config(format!("block channels must match, got {} -> {}", c, conv.n_out)));
        }
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::config(format!("dropout must be in [0, 1), got {dropout}")));
        }
        let first = SepFlexConv::new(&join(prefix, "conv"), conv.clone(), support, rng)?;
        let (linear, second) = match style {
            BlockStyle::Ccnn | BlockStyle::S4 => {
                let bound = 1.0 / (c as f64).sqrt();
                let w = Param::new(join(prefix, "linear.weight"), Tensor::rand_uniform(&[c, c], -bound, bound, rng));
                let b = Param::new(join(prefix, "linear.bias"), Tensor::rand_uniform(&[c], -bound, bound, rng));
                (Some((w, b)), None)
            }
            BlockStyle::FlexNet => {
                let n2 = Norm::new(&join(prefix, "norm2"), norm, c);
                let c2 = SepFlexConv::new(&join(prefix, "conv2"), conv, support, rng)?;
                (None, Some((n2, c2)))
            }
        };
        Ok(Block {
            style,
            norm: Norm::new(&join(prefix, "norm"), norm, c),
            conv: first,
            linear,
            second,
            dropout,
        })
    }

    pub fn channels(&self) -> usize {
        self.conv.config.n_in
    }

    /// Residual branch; the block output is `x + branch` (S4, FlexNet) or
    /// `GELU(x + branch)` (CCNN).
    pub fn branch<'t>(&self, ctx: &mut Ctx<'t, S>, x: Var<'t, S>) -> Result<Var<'t, S>> {
        let h = self.norm.forward(ctx, x)?;
        let h = ctx.conv(&self.conv, h)?.gelu()?;
        let h = ctx.dropout(h, self.dropout)?;
        match (&self.linear, &self.second) {
            (Some((w, b)), _) => h.channel_mix(ctx.tape.param(w), Some(ctx.tape.param(b))),
            (None, Some((n2, c2))) => {
                let h = n2.forward(ctx, h)?;
                ctx.conv(c2, h)?.gelu()
            }
            (None, None) => unreachable!("block without second stage"),
        }
    }

    pub fn forward<'t>(&self, ctx: &mut Ctx<'t, S>, x: Var<'t, S>) -> Result<Var<'t, S>> {
        let c = self.channels();
        let shape = x.shape();
        if shape.len() < 3 || shape[1] != c {
            return Err(Error::shape("block_forward", &shape, &[usize::MAX, c]));
        }
        let y = x.add(self.branch(ctx, x)?)?;
        match self.style {
            BlockStyle::Ccnn => y.gelu(),
            BlockStyle::S4 | BlockStyle::FlexNet => Ok(y),
        }
    }

    pub(crate) fn norms_mut(&mut self) -> Vec<&mut Norm<S>> {
        let mut v = vec![&mut self.norm];
        if let Some((n2, _)) = &mut self.second {
            v.push(n2);
        }
        v
    }
}

impl<S: Scalar> Module<S> for Block<S> {
    fn params(&self) -> Vec<&Param<S>> {
        let mut v = self.norm.params();
        v.extend(self.conv.params());
        if let Some((w, b)) = &self.linear {
            v.extend([w, b]);
        }
        if let Some((n2, c2)) = &self.second {
            v.extend(n2.params());
            v.extend(c2.params());
        }
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param<S>> {
        let mut v = self.norm.params_mut();
        v.extend(self.conv.params_mut());
        if let Some((w, b)) = &mut self.linear {
            v.extend([w, b]);
        }
        if let Some((n2, c2)) = &mut self.second {
            v.extend(n2.params_mut());
            v.extend(c2.params_mut());
        }
        v
    }
}
