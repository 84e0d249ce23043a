//! Seeded generators of small Python corpora with a known answer.

use std::fmt;
use std::str::FromStr;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::syntax::Language;

/// Categories of the classification corpora.
pub const SYNTH_CATEGORIES: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SynthKind {
    /// Categories share every token and differ only in block nesting.
    ClassifyHier,
    /// Categories share one structure and differ only in tokens.
    ClassifyToken,
    /// Random block nesting; each record lists the block of every
    /// identifier occurrence.
    Scope,
    /// Accessor methods whose name subtokens appear in the body.
    Namegen,
}

impl SynthKind {
    pub const ALL: [SynthKind; 4] = [SynthKind::ClassifyHier, SynthKind::ClassifyToken, SynthKind::Scope, SynthKind::Namegen];

    pub fn name(self) -> &'static str {
        match self {
            SynthKind::ClassifyHier => "classify-hier",
            SynthKind::ClassifyToken => "classify-token",
            SynthKind::Scope => "scope",
            SynthKind::Namegen => "namegen",
        }
    }
}

impl fmt::Display for SynthKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SynthKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown synthetic corpus `{s}`")))
    }
}

/// One generated JSONL record.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthRecord {
    pub code: String,
    pub language: Language,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    /// Block id of each identifier occurrence, in source order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scopes: Option<Vec<usize>>,
}

impl SynthRecord {
    fn python(code: String) -> Self {
        SynthRecord { code, language: Language::Python, label: None, name: None, scopes: None }
    }
}

/// `size` records of `kind`, identical for identical seeds.
pub fn generate_synthetic(kind: SynthKind, size: usize, seed: u64) -> Vec<SynthRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match kind {
        SynthKind::ClassifyHier => {
            let mut out = Vec::with_capacity(size);
            while out.len() < size {
                out.extend(hier_group(&mut rng));
            }
            out.truncate(size);
            out
        }
        SynthKind::ClassifyToken => (0..size).map(|i| token_program(&mut rng, i % SYNTH_CATEGORIES)).collect(),
        SynthKind::Scope => (0..size).map(|_| scope_program(&mut rng)).collect(),
        SynthKind::Namegen => (0..size).map(|_| accessor(&mut rng)).collect(),
    }
}

const VARS: [&str; 10] = ["a", "b", "c", "d", "x", "y", "z", "total", "count", "item"];
const FUNCS: [&str; 4] = ["show", "emit", "step", "log"];

fn simple_statement(rng: &mut ChaCha8Rng) -> String {
    let v = VARS.choose(rng).unwrap();
    let w = VARS.choose(rng).unwrap();
    let n: u32 = rng.random_range(0..10);
    match rng.random_range(0..5) {
        0 => format!("{v} = {w} + {n}"),
        1 => format!("{v} = {w} * {}", VARS.choose(rng).unwrap()),
        2 => format!("{v} += {n}"),
        3 => format!("{} ( {v} )", FUNCS.choose(rng).unwrap()),
        _ => format!("{v} = max ( {w} , {n} )"),
    }
}

/// Indentation depth of the three body statements for each category:
/// 2 = inside the `if`, 1 = in the `for` after the `if`, 0 = top level.
const LAYOUTS: [[usize; 3]; SYNTH_CATEGORIES] = [[2, 2, 2], [2, 2, 1], [2, 1, 1], [2, 1, 0]];

/// The same statements laid out once per category.
fn hier_group(rng: &mut ChaCha8Rng) -> Vec<SynthRecord> {
    let prefix: Vec<String> = (0..rng.random_range(0..3)).map(|_| simple_statement(rng)).collect();
    let body: Vec<String> = (0..3).map(|_| simple_statement(rng)).collect();
    let suffix: Vec<String> = (0..rng.random_range(0..2)).map(|_| simple_statement(rng)).collect();
    let iv = ["i", "j", "k"].choose(rng).unwrap();
    let bound: u32 = rng.random_range(2..20);
    let threshold: u32 = rng.random_range(0..10);
    LAYOUTS
        .iter()
        .enumerate()
        .map(|(label, layout)| {
            let mut lines = prefix.clone();
            lines.push(format!("for {iv} in range ( {bound} ) :"));
            lines.push(format!("    if {iv} > {threshold} :"));
            for (stmt, depth) in body.iter().zip(layout) {
                lines.push(format!("{}{stmt}", "    ".repeat(*depth)));
            }
            lines.extend(suffix.iter().cloned());
            SynthRecord { label: Some(label), ..SynthRecord::python(lines.join("\n") + "\n") }
        })
        .collect()
}

const TOKEN_OPS: [&str; SYNTH_CATEGORIES] = ["+", "-", "*", "%"];

fn token_program(rng: &mut ChaCha8Rng, label: usize) -> SynthRecord {
    let mut lines: Vec<String> = (0..rng.random_range(0..3)).map(|_| simple_statement(rng)).collect();
    let v = VARS.choose(rng).unwrap();
    let w = VARS.choose(rng).unwrap();
    lines.push(format!("for {v} in range ( {} ) :", rng.random_range(2..20)));
    lines.push(format!("    {w} = {w} {} {v}", TOKEN_OPS[label]));
    SynthRecord { label: Some(label), ..SynthRecord::python(lines.join("\n") + "\n") }
}

struct ScopeWriter {
    lines: Vec<String>,
    scopes: Vec<usize>,
    blocks: usize,
}

impl ScopeWriter {
    fn line(&mut self, depth: usize, text: String, idents: &[&str], block: usize) {
        self.lines.push(format!("{}{text}", "    ".repeat(depth)));
        self.scopes.extend(idents.iter().map(|_| block));
    }

    fn block(&mut self, rng: &mut ChaCha8Rng, depth: usize, block: usize) {
        for _ in 0..rng.random_range(1..4) {
            let v = *VARS.choose(rng).unwrap();
            let w = *VARS.choose(rng).unwrap();
            let n: u32 = rng.random_range(0..10);
            let compound = depth < 3 && rng.random_bool(0.45);
            if !compound {
                match rng.random_range(0..3) {
                    0 => self.line(depth, format!("{v} = {w} + {n}"), &[v, w], block),
                    1 => self.line(depth, format!("{v} = {w}"), &[v, w], block),
                    _ => {
                        let f = *FUNCS.choose(rng).unwrap();
                        self.line(depth, format!("{f} ( {v} )"), &[f, v], block)
                    }
                }
                continue;
            }
            let header = match rng.random_range(0..3) {
                0 => (format!("if {v} > {n} :"), vec![v]),
                1 => (format!("for {v} in {w} :"), vec![v, w]),
                _ => (format!("while {v} < {n} :"), vec![v]),
            };
            let is_if = header.0.starts_with("if");
            self.line(depth, header.0, &header.1, block);
            let inner = self.next_block();
            self.block(rng, depth + 1, inner);
            if is_if && rng.random_bool(0.5) {
                self.line(depth, "else :".into(), &[], block);
                let other = self.next_block();
                self.block(rng, depth + 1, other);
            }
        }
    }

    fn next_block(&mut self) -> usize {
        self.blocks += 1;
        self.blocks
    }
}

fn scope_program(rng: &mut ChaCha8Rng) -> SynthRecord {
    let mut w = ScopeWriter { lines: Vec::new(), scopes: Vec::new(), blocks: 0 };
    // at least one nested block so every program has cross-scope pairs
    let v = *VARS.choose(rng).unwrap();
    w.line(0, format!("if {v} > 0 :"), &[v], 0);
    let first = w.next_block();
    w.block(rng, 1, first);
    w.block(rng, 0, 0);
    SynthRecord { scopes: Some(w.scopes), ..SynthRecord::python(w.lines.join("\n") + "\n") }
}

const VERBS: [&str; 4] = ["get", "set", "is", "has"];
const NOUNS: [&str; 8] = ["item", "count", "name", "value", "size", "index", "key", "data"];
const SYLLABLES: [&str; 12] = ["zo", "rb", "ax", "qu", "el", "vy", "tr", "on", "ki", "mu", "pl", "ex"];

fn rare_noun(rng: &mut ChaCha8Rng) -> String {
    (0..rng.random_range(2..4)).map(|_| *SYLLABLES.choose(rng).unwrap()).collect()
}

fn accessor(rng: &mut ChaCha8Rng) -> SynthRecord {
    let verb = *VERBS.choose(rng).unwrap();
    let noun = if rng.random_bool(0.5) { NOUNS.choose(rng).unwrap().to_string() } else { rare_noun(rng) };
    let mut chars = noun.chars();
    let name = format!("{verb}{}{}", chars.next().unwrap().to_uppercase(), chars.as_str());
    let code = match verb {
        "get" => format!("def {name} ( self ) :\n    return self . {noun}\n"),
        "set" => format!("def {name} ( self , {noun} ) :\n    self . {noun} = {noun}\n"),
        "is" => format!("def {name} ( self ) :\n    return self . {noun} is not None\n"),
        _ => format!("def {name} ( self ) :\n    return len ( self . {noun} ) > 0\n"),
    };
    SynthRecord { name: Some(name), ..SynthRecord::python(code) }
}
