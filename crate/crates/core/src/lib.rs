//! Stepwise signal denoising with a diffusion model.
//!
//! The crate is organised around the stages of the pipeline:
//!
//! * [`sigsim`] simulates clean piecewise-constant traces from continuous-time
//!   Markov chains and ships the built-in rate-matrix catalogs.
//! * [`noisegen`] produces white and pink Gaussian noise calibrated to the
//!   step-height SNR definition.
//! * [`diffusion`] holds the cosine schedule, the forward process, the reverse
//!   step and the noise-matched inference loop.
//! * [`nnet`] is the 1D U-Net noise predictor with a hand-written backward pass.
//! * [`trainer`] implements the weighted Smooth-L1 objective, timestep
//!   importance sampling, AdamW and the checkpoint container.
//! * [`evalkit`] scores denoised traces (MSE, transition F1, composite score).
//! * [`baselines`] provides the Butterworth low-pass and Gaussian HMM baselines.
//! * [`appkit`] contains trace I/O, normalisation, windowing, kinetics and
//!   event analysis, and the benchmark driver used by the CLI.

pub mod appkit;
pub mod baselines;
pub mod diffusion;
pub mod error;
pub mod evalkit;
pub mod nnet;
pub mod noisegen;
pub mod rng;
pub mod sigsim;
pub mod trainer;

pub use diffusion::{DiffusionSchedule, NoisePredictor, Sampler};
pub use error::{Error, Result};
pub use evalkit::{EvalReport, ThresholdSet};
pub use nnet::{NetConfig, ParamStore, UNet};
pub use noisegen::{NoiseKind, NoiseSpec};
pub use sigsim::{RateMatrix, StatePath, StepwiseTrace};
pub use trainer::{Checkpoint, LossConfig, TrainConfig};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
