//! Time-series domain adaptation built on time-frequency features.
//!
//! The crate trains a classifier on a labeled source domain of multichannel
//! time series and adapts it to an unlabeled target domain. Features combine
//! a windowed discrete Fourier spectrum (amplitude and phase over retained
//! low-frequency modes, filtered by a learnable complex mask) with a small
//! 1-d CNN over the raw signal. Domains are aligned with an entropic
//! optimal-transport loss computed by alternating marginal scaling; an MMD
//! alternative is available for ablation. A reconstruction-only correction
//! pass on the target domain, followed by a per-class drift analysis
//! (Hartigan dip test plus 2-means), rejects target samples whose class never
//! appeared in the source domain.

pub mod alignment;
pub mod error;
pub mod numerics;
pub mod spectral;

pub use error::{Error, Result};
