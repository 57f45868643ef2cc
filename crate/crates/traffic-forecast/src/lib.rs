//! Multi-service mobile traffic forecasting at desk scale.
//!
//! The crate covers the full workflow: synthesize (or ingest) per-antenna,
//! per-service traffic measurements, map the irregular antenna layout onto a
//! regular grid with an optimal assignment, window and normalize the data,
//! train a sequence-to-sequence ConvLSTM (or one of four baseline
//! architectures) with a from-scratch reverse-mode autodiff engine, and
//! evaluate with MAE, PSNR, SSIM and NMAE.
//!
//! Start from the `examples/` directory for runnable entry points, or use
//! the `traffic-forecast` binary which exposes the same workflow as
//! subcommands.

pub mod autodiff;
pub mod baselines;
pub mod checkpoint;
pub mod cli;
pub mod convlstm;
pub mod error;
pub mod grid;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
