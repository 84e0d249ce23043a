use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::syntax::HierarchyMode;

/// What a model is trained for.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    #[default]
    Classify,
    Clone,
    Namegen,
    Scope,
}

impl Task {
    pub const ALL: [Task; 4] = [Task::Classify, Task::Clone, Task::Namegen, Task::Scope];

    pub fn name(self) -> &'static str {
        match self {
            Task::Classify => "classify",
            Task::Clone => "clone",
            Task::Namegen => "namegen",
            Task::Scope => "scope",
        }
    }

    /// Whether the model carries the pointer decoder rather than the
    /// category head.
    pub fn is_generation(self) -> bool {
        self == Task::Namegen
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Task::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown task `{s}`")))
    }
}

/// Architecture hyperparameters. Defaults are the published model sizes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HiTConfig {
    pub task: Task,
    pub token_dim: usize,
    pub hier_dim: usize,
    pub seq_model_dim: usize,
    pub heads: usize,
    pub hier_heads: usize,
    pub hier_layers: usize,
    pub seq_layers: usize,
    pub dec_layers: usize,
    pub seq_ff_dim: usize,
    pub hier_ff_dim: usize,
    pub max_len: usize,
    pub max_path_depth: usize,
    pub max_target_len: usize,
    pub dropout: f64,
    pub hierarchy_mode: HierarchyMode,
    pub num_categories: usize,
    pub vocab_size: usize,
    pub node_vocab_size: usize,
    pub target_vocab_size: usize,
}

impl Default for HiTConfig {
    fn default() -> Self {
        HiTConfig {
            task: Task::Classify,
            token_dim: 256,
            hier_dim: 32,
            seq_model_dim: 256,
            heads: 8,
            hier_heads: 8,
            hier_layers: 2,
            seq_layers: 6,
            dec_layers: 2,
            seq_ff_dim: 512,
            hier_ff_dim: 128,
            max_len: 512,
            max_path_depth: 32,
            max_target_len: 16,
            dropout: 0.1,
            hierarchy_mode: HierarchyMode::Full,
            num_categories: 2,
            vocab_size: 5000,
            node_vocab_size: 256,
            target_vocab_size: 5000,
        }
    }
}

impl HiTConfig {
    /// Defaults for method-name generation: four sequence layers.
    pub fn for_generation() -> Self {
        HiTConfig {
            task: Task::Namegen,
            seq_layers: 4,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        let positive = [
            ("token_dim", self.token_dim),
            ("hier_dim", self.hier_dim),
            ("seq_model_dim", self.seq_model_dim),
            ("heads", self.heads),
            ("hier_heads", self.hier_heads),
            ("seq_ff_dim", self.seq_ff_dim),
            ("hier_ff_dim", self.hier_ff_dim),
            ("max_len", self.max_len),
            ("max_target_len", self.max_target_len),
            ("vocab_size", self.vocab_size),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return bad(format!("{name} must be positive"));
        }
        if !self.seq_model_dim.is_multiple_of(self.heads) {
            return bad(format!("seq_model_dim {} is not divisible by heads {}", self.seq_model_dim, self.heads));
        }
        if !self.hier_dim.is_multiple_of(self.hier_heads) {
            return bad(format!("hier_dim {} is not divisible by hier_heads {}", self.hier_dim, self.hier_heads));
        }
        if self.max_path_depth < 3 {
            return bad("max_path_depth must be at least 3".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.vocab_size < 4 || self.node_vocab_size < 2 {
            return bad("vocabularies must hold their reserved entries".into());
        }
        if self.task.is_generation() {
            if self.target_vocab_size < 4 {
                return bad("target_vocab_size must hold its reserved entries".into());
            }
        } else if self.num_categories < 2 {
            return bad("num_categories must be at least 2".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        HiTConfig::default().validate().unwrap();
        HiTConfig::for_generation().validate().unwrap();
    }

    #[test]
    fn rejects_indivisible_heads() {
        let cfg = HiTConfig { seq_model_dim: 250, ..HiTConfig::default() };
        assert!(matches!(cfg.validate(), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn partial_toml_fills_defaults() {
        let cfg: HiTConfig = toml::from_str("hierarchy_mode = \"local\"\nseq_layers = 2").unwrap();
        assert_eq!(cfg.hierarchy_mode, HierarchyMode::Local);
        assert_eq!(cfg.seq_layers, 2);
        assert_eq!(cfg.token_dim, 256);
    }
}
