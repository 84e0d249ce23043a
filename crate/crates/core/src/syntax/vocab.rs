use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::grammar::Language;
use crate::error::{Error, Result};

/// Interned CST node type.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeTypeId(pub u32);

impl NodeTypeId {
    pub const PAD: NodeTypeId = NodeTypeId(0);
    pub const UNK: NodeTypeId = NodeTypeId(1);

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

pub const PAD_NODE_NAME: &str = "<pad>";
pub const UNK_NODE_NAME: &str = "<unk_node>";

/// Bijective map between node-type names and dense ids. Ids 0 and 1 are
/// reserved for padding and unknown types.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NodeTypeVocabulary {
    names: Vec<String>,
    index: HashMap<String, NodeTypeId>,
}

impl Default for NodeTypeVocabulary {
    fn default() -> Self {
        Self::new()
    }
}

impl NodeTypeVocabulary {
    pub fn new() -> Self {
        let mut vocab = NodeTypeVocabulary {
            names: Vec::new(),
            index: HashMap::new(),
        };
        vocab.intern(PAD_NODE_NAME);
        vocab.intern(UNK_NODE_NAME);
        vocab
    }

    /// Every node type of the given grammars, in grammar order.
    pub fn for_languages(languages: &[Language]) -> Self {
        let mut vocab = Self::new();
        for lang in languages {
            for kind in lang.node_kinds() {
                vocab.intern(kind);
            }
        }
        vocab
    }

    pub fn intern(&mut self, name: &str) -> NodeTypeId {
        if let Some(&id) = self.index.get(name) {
            return id;
        }
        let id = NodeTypeId(self.names.len() as u32);
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), id);
        id
    }

    pub fn get(&self, name: &str) -> Option<NodeTypeId> {
        self.index.get(name).copied()
    }

    pub fn get_or_unk(&self, name: &str) -> NodeTypeId {
        self.get(name).unwrap_or(NodeTypeId::UNK)
    }

    pub fn name(&self, id: NodeTypeId) -> &str {
        self.names.get(id.index()).map_or(UNK_NODE_NAME, String::as_str)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn from_names(names: Vec<String>) -> Result<Self> {
        if names.first().map(String::as_str) != Some(PAD_NODE_NAME)
            || names.get(1).map(String::as_str) != Some(UNK_NODE_NAME)
        {
            return Err(Error::InvalidConfig("node vocabulary must start with <pad>, <unk_node>".into()));
        }
        let mut index = HashMap::with_capacity(names.len());
        for (i, name) in names.iter().enumerate() {
            if index.insert(name.clone(), NodeTypeId(i as u32)).is_some() {
                return Err(Error::InvalidConfig(format!("duplicate node type `{name}`")));
            }
        }
        Ok(NodeTypeVocabulary { names, index })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(&self.names)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Self::from_names(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interning_is_bijective() {
        let vocab = NodeTypeVocabulary::for_languages(&Language::ALL);
        for (i, name) in vocab.names().iter().enumerate() {
            let id = vocab.get(name).unwrap();
            assert_eq!(id.index(), i);
            assert_eq!(vocab.name(id), name);
        }
        assert_eq!(vocab.get(PAD_NODE_NAME), Some(NodeTypeId::PAD));
        assert_eq!(vocab.get(UNK_NODE_NAME), Some(NodeTypeId::UNK));
        assert!(vocab.get("ERROR").is_some());
        assert_eq!(vocab.get_or_unk("no_such_node"), NodeTypeId::UNK);
    }

    #[test]
    fn from_names_rejects_missing_reserved_entries() {
        assert!(NodeTypeVocabulary::from_names(vec!["module".into()]).is_err());
        let ok = NodeTypeVocabulary::from_names(vec![PAD_NODE_NAME.into(), UNK_NODE_NAME.into(), "module".into()]);
        assert_eq!(ok.unwrap().get("module"), Some(NodeTypeId(2)));
    }
}
