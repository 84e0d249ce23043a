use std::path::Path;

use super::{Example, Split};
use crate::encoding::{build_copy_map, build_vocab, encode_and_pad, Batch, Targets, Vocabulary, EOS, PAD};
use crate::error::{Error, Result};
use crate::model::HiTConfig;
use crate::syntax::NodeTypeVocabulary;

/// Every vocabulary a model depends on.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabs {
    pub tokens: Vocabulary,
    pub nodes: NodeTypeVocabulary,
    /// Method-name subtokens, for name generation only.
    pub targets: Option<Vocabulary>,
}

const TOKENS_FILE: &str = "vocab.json";
const NODES_FILE: &str = "node_vocab.json";
const TARGETS_FILE: &str = "target_vocab.json";

impl Vocabs {
    /// Builds token (and, if names are present, target) vocabularies from
    /// the training examples only.
    pub fn from_training(
        examples: &[Example],
        nodes: NodeTypeVocabulary,
        max_tokens: usize,
        max_targets: usize,
    ) -> Result<Self> {
        let train: Vec<&Example> = examples.iter().filter(|e| e.split == Split::Train).collect();
        let tokens = build_vocab(train.iter().map(|e| &e.program), max_tokens)?;
        let names: Vec<&String> = train.iter().flat_map(|e| e.name.iter().flatten()).collect();
        let targets = if names.is_empty() {
            None
        } else {
            Some(Vocabulary::build(names, max_targets)?)
        };
        Ok(Vocabs { tokens, nodes, targets })
    }

    /// Writes the vocabulary sizes into `config`.
    pub fn apply_to(&self, config: &mut HiTConfig) {
        config.vocab_size = self.tokens.len();
        config.node_vocab_size = self.nodes.len();
        if let Some(t) = &self.targets {
            config.target_vocab_size = t.len();
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        self.tokens.save(&dir.join(TOKENS_FILE))?;
        self.nodes.save(&dir.join(NODES_FILE))?;
        if let Some(t) = &self.targets {
            t.save(&dir.join(TARGETS_FILE))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let targets_path = dir.join(TARGETS_FILE);
        Ok(Vocabs {
            tokens: Vocabulary::load(&dir.join(TOKENS_FILE))?,
            nodes: NodeTypeVocabulary::load(&dir.join(NODES_FILE))?,
            targets: if targets_path.exists() { Some(Vocabulary::load(&targets_path)?) } else { None },
        })
    }
}

/// Turns examples into model batches under one configuration.
#[derive(Clone, Copy, Debug)]
pub struct BatchBuilder<'a> {
    pub vocabs: &'a Vocabs,
    pub config: &'a HiTConfig,
}

impl<'a> BatchBuilder<'a> {
    pub fn new(vocabs: &'a Vocabs, config: &'a HiTConfig) -> Self {
        BatchBuilder { vocabs, config }
    }

    /// Projects paths to the configured hierarchy mode, pads, and attaches
    /// targets when every example carries one.
    pub fn build(&self, examples: &[&Example]) -> Result<Batch> {
        if examples.is_empty() {
            return Err(Error::EmptyInput);
        }
        let c = self.config;
        let projected: Vec<_> = examples.iter().map(|e| e.program.project(c.hierarchy_mode)).collect();
        let refs: Vec<_> = projected.iter().collect();
        let mut batch = encode_and_pad(&refs, &self.vocabs.tokens, &self.vocabs.nodes, c.max_len, c.max_path_depth);
        if c.task.is_generation() {
            let targets = self.vocabs.targets.as_ref().ok_or_else(|| {
                Error::InvalidConfig("name generation needs a target vocabulary".into())
            })?;
            batch.copy_maps = projected
                .iter()
                .map(|p| build_copy_map(&p.tokens[..p.len().min(batch.max_len)], targets))
                .collect();
            if examples.iter().all(|e| e.name.is_some()) {
                let rows: Vec<Vec<u32>> = examples
                    .iter()
                    .zip(&batch.copy_maps)
                    .map(|(e, map)| {
                        let name = e.name.as_deref().unwrap_or_default();
                        let mut ids: Vec<u32> = name
                            .iter()
                            .take(c.max_target_len)
                            .map(|s| map.target_id(s, targets))
                            .collect();
                        ids.push(EOS);
                        ids
                    })
                    .collect();
                let max_len = rows.iter().map(Vec::len).max().unwrap_or(1);
                let mut ids = vec![PAD; rows.len() * max_len];
                for (r, row) in rows.iter().enumerate() {
                    ids[r * max_len..r * max_len + row.len()].copy_from_slice(row);
                }
                batch.targets = Targets::Sequences {
                    ids,
                    lengths: rows.iter().map(Vec::len).collect(),
                    max_len,
                };
            }
        } else if let Some(labels) = examples.iter().map(|e| e.label).collect::<Option<Vec<_>>>() {
            if let Some(bad) = labels.iter().find(|&&l| l >= c.num_categories) {
                return Err(Error::InvalidConfig(format!(
                    "label {bad} outside {} categories",
                    c.num_categories
                )));
            }
            batch.targets = Targets::Categories(labels);
        }
        Ok(batch)
    }

    /// Consecutive batches of at most `size` examples.
    pub fn batches(&self, examples: &[&Example], size: usize) -> Result<Vec<Batch>> {
        examples.chunks(size.max(1)).map(|chunk| self.build(chunk)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::read_dataset;
    use crate::model::Task;
    use crate::syntax::{HierarchyExtractor, HierarchyMode, Language, NodeTypeId};

    fn dataset(text: &str, task: Task) -> (HierarchyExtractor, Vec<Example>) {
        let ex = HierarchyExtractor::default();
        let mut ds = read_dataset(text.as_bytes(), task, Language::Python, &ex, 0).unwrap();
        ds.examples.iter_mut().for_each(|e| e.split = Split::Train);
        (ex, ds.examples)
    }

    #[test]
    fn namegen_targets_copy_oov_subtokens() {
        let text = r#"{"code":"def f(self):\n    return self.zorb","name":"get_zorb"}"#;
        let (ex, examples) = dataset(text, Task::Namegen);
        let vocabs = Vocabs::from_training(&examples, ex.vocab().clone(), 100, 4).unwrap();
        let targets = vocabs.targets.as_ref().unwrap();
        assert_eq!(targets.len(), 4);
        let mut cfg = HiTConfig::for_generation();
        vocabs.apply_to(&mut cfg);
        let batch = BatchBuilder::new(&vocabs, &cfg).build(&[&examples[0]]).unwrap();
        let Targets::Sequences { ids, lengths, .. } = &batch.targets else { panic!() };
        assert_eq!(lengths, &[3]);
        let map = &batch.copy_maps[0];
        assert_eq!(ids[0], crate::encoding::UNK);
        assert_eq!(map.resolve(ids[1], targets), Some("zorb"));
        assert_eq!(ids[2], EOS);
    }

    #[test]
    fn mode_none_erases_paths() {
        let (ex, examples) = dataset(r#"{"code":"x = 1","label":1}"#, Task::Classify);
        let vocabs = Vocabs::from_training(&examples, ex.vocab().clone(), 100, 100).unwrap();
        let cfg = HiTConfig { hierarchy_mode: HierarchyMode::None, ..HiTConfig::default() };
        let batch = BatchBuilder::new(&vocabs, &cfg).build(&[&examples[0]]).unwrap();
        assert_eq!(batch.max_depth, 1);
        assert!(batch.path_ids.iter().all(|&n| n == NodeTypeId::PAD.0));
        assert_eq!(batch.targets, Targets::Categories(vec![1]));
        let tiny = HiTConfig { num_categories: 1, ..cfg };
        assert!(BatchBuilder::new(&vocabs, &tiny).build(&[&examples[0]]).is_err());
    }

    #[test]
    fn vocab_round_trip() {
        let (ex, examples) = dataset(r#"{"code":"def g(): pass","name":"run"}"#, Task::Namegen);
        let vocabs = Vocabs::from_training(&examples, ex.vocab().clone(), 100, 100).unwrap();
        let dir = tempfile::tempdir().unwrap();
        vocabs.save(dir.path()).unwrap();
        assert_eq!(Vocabs::load(dir.path()).unwrap(), vocabs);
    }
}
