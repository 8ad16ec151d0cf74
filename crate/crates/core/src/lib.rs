//! Side-network adapter tuning on frozen dual encoders.
//!
//! The crate is organised bottom-up:
//!
//! * [`autograd`]: dense f64 tensors, a recorded compute graph with
//!   reverse-mode differentiation, retained-activation accounting and AdamW.
//! * [`encoder`]: miniature vision and language transformer encoders that
//!   expose per-layer attention and feed-forward taps.
//! * [`adapters`]: expert adapters, the weight-sharing interaction adapter,
//!   LoRA branches and the side network that accumulates adapter deltas.
//! * [`nn`]: linear layers, layer norm, initialisers and the transformer
//!   layer shared by the encoders and the fusion stack.
//! * [`fusion`]: the trainable vision-language encoder and box head;
//!   [`attention`] exports its attention maps as text.
//! * [`losses`]: box geometry, smooth-L1 + GIoU objective, precision metric.
//! * [`regime`] and [`accounting`]: tuning regimes, model assembly and the
//!   parameter / memory reports.
//! * [`data`]: the seeded synthetic referring-expression task.
//! * [`config`], [`checkpoint`], [`train`], [`report`]: run plumbing.
//! * [`ablation`]: configuration variants for each ablation axis.

pub mod ablation;
pub mod accounting;
pub mod adapters;
pub mod attention;
pub mod autograd;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod encoder;
pub mod error;
pub mod fusion;
pub mod losses;
pub mod model;
pub mod nn;
pub mod regime;
pub mod report;
pub mod rng;
pub mod train;

pub use error::{Error, Result};
