//! Learning perturbation masks that explain black-box classifier decisions.
//!
//! The crate is split in two layers. The bottom layer is image plumbing:
//! grids, Gaussian kernels, separable blur, total-variation energy, and
//! renormalized mask upsampling. On top of that sit the explanation pieces:
//! a [`blackbox::BlackBox`] scoring contract with three reference models, the
//! perturbation operators (constant fill, noise, blur) in [`perturb`], the
//! mask objective and its Adam optimizer in [`explain`], surrogate and
//! sanity-check rules in [`meta`], and saliency evaluation protocols in
//! [`eval`].
//!
//! Everything is deterministic given the seeds threaded through the APIs, and
//! the crate is `no_std` + `alloc` so the algorithms stay free of IO.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod blackbox;
pub mod error;
pub mod eval;
pub mod explain;
pub mod grid;
pub mod kernel;
pub mod meta;
pub mod perturb;
pub mod rng;
pub mod tv;
pub mod upsample;

pub use error::{Error, Result};
