//! Overlapped two-talker speaker verification with target speaker extraction.
//!
//! The crate covers the whole pipeline: synthetic corpus and mixture
//! simulation ([`mixsim`]), STFT front-end ([`signal`]), the mask-estimation
//! extraction networks ([`extractor`]), verification features ([`frontend`]),
//! the GMM-UBM / i-vector / PLDA back-end ([`backend`]) and detection metrics
//! ([`eval`]).

pub mod backend;
pub mod container;
pub mod error;
pub mod eval;
pub mod extractor;
pub mod frontend;
pub mod manifest;
pub mod mat;
pub mod mixsim;
pub mod signal;

pub use error::{Error, Result};
pub use mat::Mat;
