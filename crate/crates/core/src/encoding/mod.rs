//! Vocabularies, method-name subtokens, padded batches and copy maps.

mod batch;
mod subtoken;
mod vocab;

pub use batch::{build_copy_map, encode_and_pad, Batch, CopyMap, Targets};
pub use subtoken::{join_camel_case, subtokenize_name};
pub use vocab::{build_vocab, Vocabulary, BOS, EOS, PAD, RESERVED, UNK};
