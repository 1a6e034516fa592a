//! Spoken language identification from MFCC features.
//!
//! The crate covers the whole pipeline:
//!
//! - [`dsp`]: MFCC extraction (pre-emphasis, framing, FFT, mel filterbank,
//!   DCT, liftering) and the binary feature cache.
//! - [`tensor`]: a tape-based reverse-mode autodiff engine with the
//!   convolution, pooling and matrix kernels the models need.
//! - [`nn`]: convolution, dense, LSTM and attention layers, dropout and the
//!   weighted cross-entropy loss.
//! - [`models`]: the CNN, CRNN and CRNN_ATTN classifiers and checkpoints.
//! - [`train`]: Adam with a warmup schedule, class weighting and the epoch
//!   loop.
//! - [`data`]: WAV decoding, manifests, splits, balancing, white noise and a
//!   synthetic corpus generator.
//! - [`eval`]: confusion matrices, PPV / TPR / F1 and report rendering.
//!
//! ```
//! use langid::dsp::{compute_mfcc, AudioClip, MfccConfig};
//! use langid::models::{ArchTag, Architecture, ConvSpec, Model};
//!
//! let clip = AudioClip::new(vec![0.0; 8000], 16_000).unwrap();
//! let feats = compute_mfcc::<f32>(&clip, &MfccConfig::default()).unwrap();
//!
//! let mut arch = Architecture::new(ArchTag::Cnn, 4);
//! arch.conv_spec = vec![ConvSpec { kernel: 3, filters: 8 }; 2];
//! let model = Model::<f32>::new(arch, 42).unwrap();
//! let class = model.predict(&[&feats], 1).unwrap()[0];
//! assert!(class < 4);
//! ```

pub mod data;
pub mod dsp;
pub mod eval;
pub mod models;
pub mod nn;
mod error;
pub mod real;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use real::Real;

/// The guide's chapters, compiled and run as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    struct Introduction;

    #[doc = include_str!("../../../book/src/features.md")]
    struct Features;

    #[doc = include_str!("../../../book/src/autodiff.md")]
    struct Autodiff;

    #[doc = include_str!("../../../book/src/models.md")]
    struct Models;

    #[doc = include_str!("../../../book/src/training.md")]
    struct Training;

    #[doc = include_str!("../../../book/src/data.md")]
    struct Data;

    #[doc = include_str!("../../../book/src/evaluation.md")]
    struct Evaluation;

    #[doc = include_str!("../../../book/src/cli.md")]
    struct Cli;
}
