//! Neuron-grounded natural-language explanations for CNN image classifiers.
//!
//! The pipeline runs a forward pass with activation capture, ranks the
//! filters of one convolutional layer by layer-wise relevance, describes and
//! localizes the top filters, assembles a meaning representation, and
//! realizes it as text. The evaluation harness measures faithfulness
//! (covering, neuron masking, pipeline divergence) and stability (noise
//! perturbation with BLEU/METEOR).

pub mod annotate;
pub mod archive;
pub mod cache;
pub mod dataset;
pub mod error;
pub mod experiments;
pub mod http;
pub mod image;
pub mod interventions;
pub mod meaning;
pub mod net;
pub mod pipeline;
pub mod relevance;
pub mod spatial;
pub mod stability;
pub mod synth;
pub mod tensor;
pub mod train;
pub mod verbalize;

pub use error::{Error, Result};
pub use image::Image;
pub use net::{ActivationMap, ActivationStore, Network, NeuronId, NeuronMask, Prediction};
