use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const BOS: u32 = 2;
pub const EOS: u32 = 3;
pub const RESERVED: [&str; 4] = ["<pad>", "<unk>", "<s>", "</s>"];

/// Frequency-ranked token vocabulary with four reserved entries.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    entries: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    /// Keeps the `max_size - 4` most frequent tokens; equal counts are
    /// ordered lexicographically.
    pub fn build<I, S>(tokens: I, max_size: usize) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        if max_size < RESERVED.len() {
            return Err(Error::InvalidConfig(format!("vocabulary size {max_size} is below 4")));
        }
        let mut counts: HashMap<String, usize> = HashMap::new();
        for tok in tokens {
            let tok = tok.as_ref();
            if RESERVED.contains(&tok) {
                continue;
            }
            match counts.get_mut(tok) {
                Some(c) => *c += 1,
                None => {
                    counts.insert(tok.to_string(), 1);
                }
            }
        }
        if counts.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let entries = RESERVED
            .iter()
            .map(|s| s.to_string())
            .chain(ranked.into_iter().map(|(t, _)| t))
            .take(max_size)
            .collect();
        Ok(Self::from_entries(entries))
    }

    fn from_entries(entries: Vec<String>) -> Self {
        let index = entries.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Vocabulary { entries, index }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn id(&self, token: &str) -> u32 {
        self.get(token).unwrap_or(UNK)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.entries.get(id as usize).map(String::as_str)
    }

    pub fn entries(&self) -> &[String] {
        &self.entries
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(&self.entries)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let entries: Vec<String> = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if entries.len() < RESERVED.len() || entries.iter().zip(RESERVED).any(|(a, b)| a != b) {
            return Err(Error::InvalidConfig(format!("{} does not start with the reserved tokens", path.display())));
        }
        Ok(Self::from_entries(entries))
    }
}

/// Vocabulary over the tokens of a training corpus.
pub fn build_vocab<'a, I>(corpus: I, max_size: usize) -> Result<Vocabulary>
where
    I: IntoIterator<Item = &'a crate::syntax::TokenizedProgram>,
{
    Vocabulary::build(corpus.into_iter().flat_map(|p| p.tokens.iter()), max_size)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_corpus() {
        let vocab = Vocabulary::build(["x", "=", "1"], 10).unwrap();
        assert_eq!(vocab.len(), 7);
        assert_eq!(&vocab.entries()[..4], &RESERVED);
        assert_eq!(vocab.id("x"), vocab.get("x").unwrap());
        assert_eq!(vocab.id("never"), UNK);
    }

    #[test]
    fn ties_break_lexicographically() {
        let vocab = Vocabulary::build(["x", "=", "1"], 5).unwrap();
        assert_eq!(vocab.entries()[4], "1");
        assert_eq!(vocab.len(), 5);
        let vocab = Vocabulary::build(["b", "a", "b"], 5).unwrap();
        assert_eq!(vocab.entries()[4], "b");
    }

    #[test]
    fn empty_corpus_is_an_error() {
        assert!(matches!(Vocabulary::build(Vec::<&str>::new(), 10), Err(Error::EmptyCorpus)));
        assert!(Vocabulary::build(["a"], 3).is_err());
    }

    #[test]
    fn save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.json");
        let vocab = Vocabulary::build(["b", "a", "b", "c"], 100).unwrap();
        vocab.save(&path).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), r#"["<pad>","<unk>","<s>","</s>","b","a","c"]"#);
        assert_eq!(Vocabulary::load(&path).unwrap(), vocab);
    }
}
