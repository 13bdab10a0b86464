//! Wavelet disentangling and assembly of the two expert input streams.

mod embed;
mod features;
mod wavelet;

pub use embed::{embed, raw_features, EmbedParams, EmbeddedBatch, D_OE, MLP_INPUTS};
pub use features::{sparsity_features, split_series, time_features};
pub use wavelet::{dwt, iwt, split_low_high, WaveletBasis, WaveletConfig};
