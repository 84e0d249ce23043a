use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use super::grammar::{Grammar, Language};
use super::path::{truncate_path, HierarchyMode, HierarchyPath, DEFAULT_MAX_PATH_DEPTH};
use super::tree::{parse_to_cst, ConcreteTree};
use super::vocab::{NodeTypeId, NodeTypeVocabulary};
use crate::error::{Error, Result};

/// Token sequence of one program, each token aligned with its path.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenizedProgram {
    pub tokens: Vec<String>,
    pub paths: Vec<HierarchyPath>,
    pub language: Language,
    pub source_digest: String,
    /// Arena index of each token's nearest scope-opening ancestor.
    pub scope_blocks: Vec<usize>,
    /// Whether each token is a variable occurrence.
    pub is_identifier: Vec<bool>,
}

impl TokenizedProgram {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Same program with every path reduced to the part `mode` keeps.
    pub fn project(&self, mode: HierarchyMode) -> TokenizedProgram {
        TokenizedProgram {
            paths: self.paths.iter().map(|p| mode.project(p)).collect(),
            ..self.clone()
        }
    }

    pub fn to_record(&self, vocab: &NodeTypeVocabulary) -> ExtractRecord {
        ExtractRecord {
            tokens: self.tokens.clone(),
            paths: self
                .paths
                .iter()
                .map(|p| p.nodes.iter().map(|&n| vocab.name(n).to_string()).collect())
                .collect(),
            splits: self.paths.iter().map(HierarchyPath::split_index).collect(),
            language: self.language,
        }
    }
}

/// Free-function form of [`TokenizedProgram::project`].
pub fn project_hierarchy(program: &TokenizedProgram, mode: HierarchyMode) -> TokenizedProgram {
    program.project(mode)
}

/// JSON line written by the `extract` subcommand.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractRecord {
    pub tokens: Vec<String>,
    pub paths: Vec<Vec<String>>,
    pub splits: Vec<i64>,
    pub language: Language,
}

/// Turns concrete syntax trees into [`TokenizedProgram`]s.
///
/// Holds the grammar configuration for each supported language and a frozen
/// node-type vocabulary shared by all of them.
#[derive(Clone, Debug)]
pub struct HierarchyExtractor {
    grammars: BTreeMap<Language, Grammar>,
    vocab: NodeTypeVocabulary,
    pub max_path_depth: usize,
    /// Drop leaves whose text is empty or whitespace.
    pub skip_whitespace: bool,
}

impl Default for HierarchyExtractor {
    fn default() -> Self {
        Self::new(NodeTypeVocabulary::for_languages(&Language::ALL))
    }
}

impl HierarchyExtractor {
    pub fn new(vocab: NodeTypeVocabulary) -> Self {
        HierarchyExtractor {
            grammars: Language::ALL.iter().map(|&l| (l, Grammar::builtin(l))).collect(),
            vocab,
            max_path_depth: DEFAULT_MAX_PATH_DEPTH,
            skip_whitespace: true,
        }
    }

    pub fn with_grammar(mut self, grammar: Grammar) -> Self {
        self.grammars.insert(grammar.language, grammar);
        self
    }

    pub fn with_max_path_depth(mut self, depth: usize) -> Self {
        self.max_path_depth = depth;
        self
    }

    pub fn vocab(&self) -> &NodeTypeVocabulary {
        &self.vocab
    }

    pub fn grammar(&self, language: Language) -> &Grammar {
        &self.grammars[&language]
    }

    /// Resolved statement ids for `language`.
    pub fn statement_ids(&self, language: Language) -> HashSet<NodeTypeId> {
        self.grammar(language)
            .statements
            .iter()
            .filter_map(|name| self.vocab.get(name))
            .collect()
    }

    pub fn parse_and_extract(&self, source: &str, language: Language) -> Result<TokenizedProgram> {
        self.extract(&parse_to_cst(source, language)?)
    }

    /// One path per retained leaf, in leaf order.
    pub fn extract(&self, tree: &ConcreteTree) -> Result<TokenizedProgram> {
        let grammar = self.grammar(tree.language);
        let nodes = tree.nodes();
        let mut program = TokenizedProgram {
            tokens: Vec::new(),
            paths: Vec::new(),
            language: tree.language,
            source_digest: tree.source_digest.clone(),
            scope_blocks: Vec::new(),
            is_identifier: Vec::new(),
        };
        // Pre-order arena: walk it once while maintaining the ancestor chain.
        let mut chain: Vec<usize> = Vec::new();
        for idx in 0..nodes.len() {
            let node = &nodes[idx];
            while let Some(&top) = chain.last() {
                if Some(top) == node.parent {
                    break;
                }
                chain.pop();
            }
            chain.push(idx);
            if !node.is_leaf() || idx == 0 {
                continue;
            }
            if chain.iter().any(|&a| grammar.skip.contains(nodes[a].kind)) {
                continue;
            }
            let text = node.text.as_deref().unwrap_or("");
            if self.skip_whitespace && text.trim().is_empty() {
                continue;
            }
            let ids = chain.iter().map(|&a| self.vocab.get_or_unk(nodes[a].kind)).collect();
            let split = chain.iter().rposition(|&a| grammar.is_statement(nodes[a].kind));
            let path = HierarchyPath {
                nodes: ids,
                statement_split: split,
            };
            program.tokens.push(text.to_string());
            program.paths.push(truncate_path(&path, self.max_path_depth));
            program
                .scope_blocks
                .push(chain.iter().rev().copied().find(|&a| grammar.is_block(nodes[a].kind)).unwrap_or(0));
            program.is_identifier.push(grammar.identifiers.contains(node.kind));
        }
        if program.tokens.is_empty() {
            return Err(Error::EmptyProgram);
        }
        Ok(program)
    }
}
