//! Numerical core for training discriminative rankers and their
//! diffusion-based generative counterparts.
//!
//! The crate is `no_std` (with `alloc`); file formats, configuration and the
//! command line live in the `diffrank` companion crate.
#![no_std]

extern crate alloc;

pub mod numcore;
pub mod data;
pub mod special;
pub mod model;
pub mod diffusion;
pub mod objectives;
pub mod optim;
pub mod metrics;
pub mod train;
