//! Blood-pressure estimation from four-wavelength fingertip PPG.
//!
//! The crate is `no_std` (it needs `alloc`) and holds every numeric piece of
//! the pipeline:
//!
//! - [`ingest`]: subject records, hypertension labels, window extraction and
//!   subject-level splits.
//! - [`dsp`]: band-pass filtering, normalization, derivatives and upper
//!   envelopes, producing six input streams per channel.
//! - [`autodiff`]: a small tape-based reverse-mode engine with the layers,
//!   losses, gradient reversal and Adam needed by the model.
//! - [`model`]: per-channel dual CNN encoders, attention fusion and the three
//!   heads.
//! - [`train`]: the curriculum/adversarial training loop.
//! - [`eval`]: MAE and BHS metrics.
//! - [`synth`]: a synthetic cohort generator with known ground truth.
//!
//! File formats, the command-line tool and all IO live in the `cabp` crate.

#![no_std]
// `!(x > 0.0)` guards deliberately reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod autodiff;
pub mod dsp;
mod error;
pub mod eval;
pub mod ingest;
pub mod model;
mod real;
pub mod rng;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
pub use real::Real;
