//! Power allocation over parallel Gaussian channels with a conditional
//! diffusion model trained on water-filling labels. See the guide in `book/`
//! for a walkthrough.

// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod cli;
pub mod config;
pub mod drl;
pub mod error;
pub mod gdm;
pub mod lifecycle;
pub mod nn;
pub mod persist;
pub mod seed;
pub mod waterfill;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../README.md")]
    mod readme {}
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/channels.md")]
    mod channels {}
    #[doc = include_str!("../../../book/src/diffusion.md")]
    mod diffusion {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/lifecycle.md")]
    mod lifecycle {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
