//! Hybrid in-memory-computing (IMC) design-space exploration.
//!
//! Given a fixed convolutional topology, this crate searches a per-layer
//! assignment of IMC device technologies (SRAM / PCM / FeFET by default),
//! evaluates it with a crossbar-level simulator and rolls it up into
//! area, programming-energy, ADC and compute-density figures.
//!
//! Module map:
//!
//! * [`devlib`] device tables and the weight -> conductance -> weight pipeline
//!   (drift, read noise, conductance quantization).
//! * [`nn`] a small dense CNN core with reverse-mode gradients, including the
//!   composite device-aware convolution used during search.
//! * [`xbar`] crossbar tiling, ideal/noisy matrix-vector products and an
//!   IR-drop nodal solver.
//! * [`hwcost`] chip planning and the area / energy / ADC / density model.
//! * [`search`] the two-phase affinity search, sampling, hardware-aware
//!   fine-tuning and retention evaluation.
//!
//! Inner loops run on rayon when the `parallel` feature is enabled (default).
//! All reductions are chunked with a fixed chunk size, so results are
//! bit-identical with and without the feature.

// Validation compares with negated operators so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Kernel helpers pass shapes as plain integers.
#![allow(clippy::too_many_arguments)]

pub mod data;
pub mod devlib;
mod error;
pub mod hwcost;
pub mod nn;
pub mod par;
pub mod rng;
pub mod search;
pub mod topology;
pub mod xbar;

pub use error::{Error, Result};
pub(crate) use error::invalid;
