//! The HiT network: hierarchy encoder, fusion, sequence encoder and heads.

mod config;
mod hit;

pub use config::{HiTConfig, Task};
pub use hit::{unit, Classifier, EncoderOutput, Head, HiTLayers, HiTModel, ParamReport, HIERARCHY_PREFIXES};
