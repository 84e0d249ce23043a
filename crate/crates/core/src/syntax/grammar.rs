use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Grammars with a bundled tree-sitter parser.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    #[default]
    Python,
    Java,
    C,
}

impl Language {
    pub const ALL: [Language; 3] = [Language::Python, Language::Java, Language::C];

    pub fn name(self) -> &'static str {
        match self {
            Language::Python => "python",
            Language::Java => "java",
            Language::C => "c",
        }
    }

    pub(crate) fn tree_sitter(self) -> &'static tree_sitter::Language {
        static PYTHON: OnceLock<tree_sitter::Language> = OnceLock::new();
        static JAVA: OnceLock<tree_sitter::Language> = OnceLock::new();
        static C: OnceLock<tree_sitter::Language> = OnceLock::new();
        match self {
            Language::Python => PYTHON.get_or_init(|| tree_sitter_python::LANGUAGE.into()),
            Language::Java => JAVA.get_or_init(|| tree_sitter_java::LANGUAGE.into()),
            Language::C => C.get_or_init(|| tree_sitter_c::LANGUAGE.into()),
        }
    }

    /// Every visible node-type name the grammar can produce, in grammar id
    /// order, plus `ERROR`.
    pub fn node_kinds(self) -> Vec<&'static str> {
        let lang = self.tree_sitter();
        let mut kinds: Vec<&'static str> = (0..lang.node_kind_count() as u16)
            .filter(|&id| lang.node_kind_is_visible(id))
            .filter_map(|id| lang.node_kind_for_id(id))
            .collect();
        kinds.push("ERROR");
        kinds
    }

    fn default_statements(self) -> &'static str {
        match self {
            Language::Python => include_str!("../../grammars/python.statements"),
            Language::Java => include_str!("../../grammars/java.statements"),
            Language::C => include_str!("../../grammars/c.statements"),
        }
    }

    fn default_blocks(self) -> &'static str {
        match self {
            Language::Python => include_str!("../../grammars/python.blocks"),
            Language::Java => include_str!("../../grammars/java.blocks"),
            Language::C => include_str!("../../grammars/c.blocks"),
        }
    }

    fn default_skip(self) -> &'static str {
        match self {
            Language::Python => include_str!("../../grammars/python.skip"),
            Language::Java => include_str!("../../grammars/java.skip"),
            Language::C => include_str!("../../grammars/c.skip"),
        }
    }
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Language {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "python" | "py" => Ok(Language::Python),
            "java" => Ok(Language::Java),
            "c" => Ok(Language::C),
            _ => Err(Error::UnsupportedLanguage(s.to_string())),
        }
    }
}

/// Parses a node-type list: one name per line, `#` starts a comment.
pub fn parse_name_list(text: &str) -> BTreeSet<String> {
    text.lines()
        .map(|line| line.split('#').next().unwrap_or("").trim())
        .filter(|line| !line.is_empty())
        .map(str::to_string)
        .collect()
}

/// Grammar-specific node-type sets used by hierarchy extraction and the
/// scope probe.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Grammar {
    pub language: Language,
    /// Node types that end the global part of a path.
    pub statements: BTreeSet<String>,
    /// Node types that open a variable scope.
    pub blocks: BTreeSet<String>,
    /// Leaf types dropped from the token sequence.
    pub skip: BTreeSet<String>,
    /// Leaf types counted as variable occurrences.
    pub identifiers: BTreeSet<String>,
}

impl Grammar {
    pub fn builtin(language: Language) -> Self {
        Grammar {
            language,
            statements: parse_name_list(language.default_statements()),
            blocks: parse_name_list(language.default_blocks()),
            skip: parse_name_list(language.default_skip()),
            identifiers: ["identifier".to_string()].into_iter().collect(),
        }
    }

    /// Replaces the statement set with the contents of a list file.
    pub fn with_statement_file(mut self, path: &Path) -> Result<Self> {
        self.statements = read_list(path)?;
        Ok(self)
    }

    pub fn with_block_file(mut self, path: &Path) -> Result<Self> {
        self.blocks = read_list(path)?;
        Ok(self)
    }

    pub fn with_skip_file(mut self, path: &Path) -> Result<Self> {
        self.skip = read_list(path)?;
        Ok(self)
    }

    pub fn is_statement(&self, kind: &str) -> bool {
        self.statements.contains(kind)
    }

    pub fn is_block(&self, kind: &str) -> bool {
        self.blocks.contains(kind)
    }
}

fn read_list(path: &Path) -> Result<BTreeSet<String>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    Ok(parse_name_list(&std::fs::read_to_string(path)?))
}
