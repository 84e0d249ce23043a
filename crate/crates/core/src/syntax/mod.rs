//! Concrete syntax trees and per-token hierarchy paths.
//!
//! Every retained leaf of a CST becomes one token. Its path is the list of
//! node types from the root down to the leaf, split at the innermost
//! statement node into a global part (where the statement sits in the
//! program's block structure) and a local part (where the token sits inside
//! its statement).

mod extract;
mod grammar;
mod path;
mod tree;
mod vocab;

pub use extract::{project_hierarchy, ExtractRecord, HierarchyExtractor, TokenizedProgram};
pub use grammar::{parse_name_list, Grammar, Language};
pub use path::{split_path, truncate_path, HierarchyMode, HierarchyPath, DEFAULT_MAX_PATH_DEPTH};
pub use tree::{digest, parse_bytes_to_cst, parse_to_cst, ConcreteTree, CstNode, TreeBuilder};
pub use vocab::{NodeTypeId, NodeTypeVocabulary, PAD_NODE_NAME, UNK_NODE_NAME};
