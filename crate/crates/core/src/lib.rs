//! Parameter-efficient learning for speech dialect classification.
//!
//! The crate trains and evaluates a small encoder-decoder transformer over
//! log-Mel spectrograms and implements the parameter-efficient mechanisms
//! around it: residual adapters, input reprogramming, bias-only
//! fine-tuning, vocabulary extension, and many-to-one token label mapping.
//! Everything runs on CPU from scratch: tensors, reverse-mode autodiff,
//! Adam, the audio frontend, training, parameter accounting, occlusion
//! saliency, and deterministic checkpoints.

pub mod audio;
pub mod autodiff;
pub mod dataset;
pub mod error;
pub mod registry;
pub mod rng;
pub mod tensor;

pub use audio::{sample_window, AudioClip, MelExtractor, SpectrogramConfig};
pub use autodiff::{linear_lr, Adam, Graph, NodeId};
pub use dataset::Dataset;
pub use error::{CheckpointError, Error, Result};
pub use registry::ParamRegistry;
pub use rng::{domain_rng, RngDomain};
pub use tensor::{Dtype, Scalar, Tensor};
