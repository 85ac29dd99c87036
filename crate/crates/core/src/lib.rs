pub mod ccnn;
pub mod checkpoint;
pub mod ckconv;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod kernelnet;
pub mod optim;
pub mod param;
pub mod tensor;

pub use error::{Error, Result};
pub use param::{Module, Param, ParamGroup};
pub use tensor::{Gradients, Scalar, Tape, Tensor, Var};

/// The guide in `book/`, compiled so its listings run as doctests.
#[cfg(doctest)]
pub mod book {
    #[doc = include_str!("../../../book/src/autodiff.md")]
    pub mod autodiff {}
    #[doc = include_str!("../../../book/src/kernels.md")]
    pub mod kernels {}
    #[doc = include_str!("../../../book/src/convolution.md")]
    pub mod convolution {}
    #[doc = include_str!("../../../book/src/point-clouds.md")]
    pub mod point_clouds {}
    #[doc = include_str!("../../../book/src/models.md")]
    pub mod models {}
    #[doc = include_str!("../../../book/src/cli.md")]
    pub mod cli {}
}
