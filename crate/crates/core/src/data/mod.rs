//! Datasets: JSONL ingestion, seeded splits, synthetic corpora and batching.
//!
//! One JSON object per line. Every task reads `code`, an optional
//! `language` overriding the loader default and an optional `split`
//! (`train`, `valid` or `test`). Classification and clone records carry an
//! integer `label`, name-generation records a `name`.

mod batching;
mod synth;

use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use batching::{BatchBuilder, Vocabs};
pub use synth::{generate_synthetic, SynthKind, SynthRecord};

use crate::encoding::subtokenize_name;
use crate::error::{Error, Result};
use crate::model::Task;
use crate::syntax::{parse_to_cst, HierarchyExtractor, Language, TokenizedProgram};

/// Replaces the method name in name-generation sources.
pub const MASK_TOKEN: &str = "<MASK>";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Train,
    Valid,
    Test,
}

/// One ingested program with its task target.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    /// Position among the retained records.
    pub id: usize,
    pub program: TokenizedProgram,
    pub label: Option<usize>,
    /// Target method-name subtokens.
    pub name: Option<Vec<String>>,
    pub split: Split,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub task: Task,
    pub examples: Vec<Example>,
    /// 1-based line numbers of records whose code produced no tokens.
    pub skipped_lines: Vec<usize>,
}

impl Dataset {
    pub fn skipped(&self) -> usize {
        self.skipped_lines.len()
    }

    pub fn split(&self, split: Split) -> Vec<&Example> {
        self.examples.iter().filter(|e| e.split == split).collect()
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Number of distinct labels, `max + 1`.
    pub fn num_categories(&self) -> usize {
        self.examples.iter().filter_map(|e| e.label).max().map_or(0, |m| m + 1)
    }
}

#[derive(Deserialize)]
struct RawRecord {
    code: String,
    #[serde(default)]
    label: Option<usize>,
    #[serde(default)]
    name: Option<String>,
    #[serde(default)]
    language: Option<Language>,
    #[serde(default)]
    split: Option<Split>,
}

/// Reads a JSONL dataset for `task`.
///
/// Lines that are not valid records fail with [`Error::MalformedRecord`].
/// Records whose code yields no tokens are skipped and counted. Records
/// without a `split` field are split 70/15/15 by a `seed`-driven shuffle.
pub fn load_dataset(
    path: &Path,
    task: Task,
    language: Language,
    extractor: &HierarchyExtractor,
    seed: u64,
) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    read_dataset(BufReader::new(file), task, language, extractor, seed)
}

/// [`load_dataset`] over any line reader.
pub fn read_dataset<R: BufRead>(
    reader: R,
    task: Task,
    language: Language,
    extractor: &HierarchyExtractor,
    seed: u64,
) -> Result<Dataset> {
    let mut dataset = Dataset { task, ..Dataset::default() };
    let mut unsplit = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |reason: String| Error::MalformedRecord { line: line_no, reason };
        let raw: RawRecord = serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
        match task {
            Task::Classify | Task::Clone if raw.label.is_none() => return Err(malformed("missing `label`".into())),
            Task::Namegen if raw.name.as_deref().is_none_or(|n| subtokenize_name(n).is_empty()) => {
                return Err(malformed("missing or empty `name`".into()))
            }
            _ => {}
        }
        let lang = raw.language.unwrap_or(language);
        let tree = parse_to_cst(&raw.code, lang)?;
        let mut program = match extractor.extract(&tree) {
            Ok(p) => p,
            Err(Error::EmptyProgram) => {
                dataset.skipped_lines.push(line_no);
                continue;
            }
            Err(e) => return Err(e),
        };
        let name = match (task, raw.name) {
            (Task::Namegen, Some(name)) => {
                mask_name(&mut program, &name, tree.defined_function_name());
                Some(subtokenize_name(&name))
            }
            _ => None,
        };
        let id = dataset.examples.len();
        if raw.split.is_none() {
            unsplit.push(id);
        }
        dataset.examples.push(Example {
            id,
            program,
            label: if matches!(task, Task::Classify | Task::Clone) { raw.label } else { None },
            name,
            split: raw.split.unwrap_or_default(),
        });
    }
    assign_splits(&mut dataset.examples, &unsplit, seed);
    Ok(dataset)
}

/// Replaces the target name and the defined function name by [`MASK_TOKEN`].
fn mask_name(program: &mut TokenizedProgram, name: &str, defined: Option<&str>) {
    for tok in program.tokens.iter_mut() {
        if tok == name || Some(tok.as_str()) == defined {
            *tok = MASK_TOKEN.to_string();
        }
    }
}

fn assign_splits(examples: &mut [Example], ids: &[usize], seed: u64) {
    let mut order = ids.to_vec();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = order.len();
    let train = n * 70 / 100;
    let valid = n * 15 / 100;
    for (rank, id) in order.into_iter().enumerate() {
        examples[id].split = if rank < train {
            Split::Train
        } else if rank < train + valid {
            Split::Valid
        } else {
            Split::Test
        };
    }
}
