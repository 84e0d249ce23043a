use std::collections::HashMap;

use super::vocab::{Vocabulary, PAD, UNK};
use crate::syntax::{truncate_path, NodeTypeId, NodeTypeVocabulary, TokenizedProgram};

/// Source position to extended-vocabulary id, for the pointer decoder.
///
/// In-vocabulary tokens keep their vocabulary id. Every distinct
/// out-of-vocabulary surface string gets an id at or above `vocab.len()`,
/// assigned in order of first occurrence.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CopyMap {
    pub ids: Vec<u32>,
    /// Surface strings of the extended ids, `extended[i]` has id `base + i`.
    pub extended: Vec<String>,
    pub base: u32,
}

impl CopyMap {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Target id for a reference subtoken: its vocabulary id, else the
    /// extended id of a matching source token, else UNK.
    pub fn target_id(&self, token: &str, vocab: &Vocabulary) -> u32 {
        if let Some(id) = vocab.get(token) {
            return id;
        }
        self.extended
            .iter()
            .position(|t| t == token)
            .map_or(UNK, |i| self.base + i as u32)
    }

    /// Surface string of an extended-vocabulary id.
    pub fn resolve<'a>(&'a self, id: u32, vocab: &'a Vocabulary) -> Option<&'a str> {
        if id < self.base {
            vocab.token(id)
        } else {
            self.extended.get((id - self.base) as usize).map(String::as_str)
        }
    }

    pub fn extended_len(&self) -> usize {
        self.extended.len()
    }
}

pub fn build_copy_map(tokens: &[String], vocab: &Vocabulary) -> CopyMap {
    let base = vocab.len() as u32;
    let mut extended: Vec<String> = Vec::new();
    let mut seen: HashMap<&str, u32> = HashMap::new();
    let ids = tokens
        .iter()
        .map(|tok| {
            if let Some(id) = vocab.get(tok) {
                return id;
            }
            *seen.entry(tok.as_str()).or_insert_with(|| {
                extended.push(tok.clone());
                base + extended.len() as u32 - 1
            })
        })
        .collect();
    CopyMap { ids, extended, base }
}

/// Training targets attached to a batch.
#[derive(Clone, Debug, Default, PartialEq)]
pub enum Targets {
    #[default]
    None,
    Categories(Vec<usize>),
    /// Row-major `[batch × max_target_len]` extended ids, PAD-filled, plus
    /// the real length (including EOS) of each row.
    Sequences {
        ids: Vec<u32>,
        lengths: Vec<usize>,
        max_len: usize,
    },
}

/// Padded model input for a list of programs.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub batch_size: usize,
    pub max_len: usize,
    pub max_depth: usize,
    /// `[batch × max_len]`
    pub token_ids: Vec<u32>,
    /// `[batch × max_len × max_depth]`, PAD beyond each path's length.
    pub path_ids: Vec<u32>,
    /// `[batch × max_len]`, zero at masked positions.
    pub path_lengths: Vec<usize>,
    /// `[batch × max_len]`
    pub token_mask: Vec<bool>,
    pub copy_maps: Vec<CopyMap>,
    pub targets: Targets,
}

impl Batch {
    pub fn rows(&self) -> usize {
        self.batch_size * self.max_len
    }

    pub fn path(&self, row: usize) -> &[u32] {
        let start = row * self.max_depth;
        &self.path_ids[start..start + self.path_lengths[row]]
    }

    pub fn lengths(&self) -> Vec<usize> {
        self.token_mask
            .chunks(self.max_len)
            .map(|m| m.iter().filter(|v| **v).count())
            .collect()
    }

    /// Width of the extended vocabulary needed by this batch.
    pub fn extended_width(&self, vocab_size: usize) -> usize {
        vocab_size + self.copy_maps.iter().map(CopyMap::extended_len).max().unwrap_or(0)
    }
}

/// Converts programs to id tensors.
///
/// Tokens beyond `max_len` are cut from the right; paths deeper than
/// `max_depth` go through [`truncate_path`]. Unknown tokens map to UNK and
/// node ids outside `node_vocab` map to the unknown node type.
pub fn encode_and_pad(
    programs: &[&TokenizedProgram],
    vocab: &Vocabulary,
    node_vocab: &NodeTypeVocabulary,
    max_len: usize,
    max_depth: usize,
) -> Batch {
    let b = programs.len();
    let l = programs.iter().map(|p| p.len().min(max_len)).max().unwrap_or(0).max(1);
    let depth = programs
        .iter()
        .flat_map(|p| p.paths.iter().take(max_len))
        .map(|p| p.len().min(max_depth))
        .max()
        .unwrap_or(0)
        .max(1);
    let mut batch = Batch {
        batch_size: b,
        max_len: l,
        max_depth: depth,
        token_ids: vec![PAD; b * l],
        path_ids: vec![NodeTypeId::PAD.0; b * l * depth],
        path_lengths: vec![0; b * l],
        token_mask: vec![false; b * l],
        copy_maps: Vec::new(),
        targets: Targets::None,
    };
    let node_count = node_vocab.len() as u32;
    for (bi, prog) in programs.iter().enumerate() {
        for (i, (tok, path)) in prog.tokens.iter().zip(&prog.paths).take(l).enumerate() {
            let row = bi * l + i;
            batch.token_ids[row] = vocab.id(tok);
            batch.token_mask[row] = true;
            let path = truncate_path(path, max_depth);
            batch.path_lengths[row] = path.len();
            for (j, node) in path.nodes.iter().enumerate() {
                batch.path_ids[row * depth + j] = if node.0 < node_count { node.0 } else { NodeTypeId::UNK.0 };
            }
        }
    }
    batch
}
