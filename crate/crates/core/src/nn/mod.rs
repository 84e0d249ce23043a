//! Small reverse-mode tensor substrate: a recorded [`Graph`] of dense
//! operations, parameter storage, transformer layers and checkpoint I/O.

pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod params;
pub mod real;
pub mod tensor;

pub use checkpoint::{decode_params_into, encode_params, load_params_into, save_params};
pub use gradcheck::{check_gradients, GradCheckReport, RELATIVE_FLOOR};
pub use graph::{AttentionSpec, Gradients, Graph, Var};
pub use layers::{
    self_attention_encode, DecoderBlock, Embedding, EncoderBlock, FeedForward, LayerNorm, Linear,
    MultiHeadAttention, TransformerStack,
};
pub use params::{Init, ParamId, ParamStore};
pub use real::{DType, Real};
pub use tensor::Tensor;
