//! Comparison methods: Butterworth low-pass filtering and a Gaussian HMM.

pub mod hmm;
pub mod lowpass;

pub use hmm::{
    baum_welch_fit, bic, hmm_denoise, hmm_forward_loglik, select_num_states, HmmFit, HmmModel,
};
pub use lowpass::{
    butterworth_lowpass, grid_search_cutoff, LabelledTrace, LowpassConfig, PhaseMode,
};
