use std::fmt::Write as _;

use sha2::{Digest, Sha256};

use super::grammar::Language;
use crate::error::{Error, Result};

/// One node of a [`ConcreteTree`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CstNode {
    pub kind: &'static str,
    /// Field name under which this node hangs off its parent, if any.
    pub field: Option<&'static str>,
    pub named: bool,
    pub is_error: bool,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    /// Surface text, kept for leaves only.
    pub text: Option<String>,
}

impl CstNode {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

/// An owned concrete syntax tree. Nodes live in an arena in pre-order, so
/// index 0 is the root and leaves appear in source order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConcreteTree {
    pub language: Language,
    pub source_digest: String,
    nodes: Vec<CstNode>,
}

pub fn digest(source: &str) -> String {
    let hash = Sha256::digest(source.as_bytes());
    let mut out = String::with_capacity(64);
    for byte in hash {
        let _ = write!(out, "{byte:02x}");
    }
    out
}

/// Parses `source` with the tree-sitter grammar for `language`.
///
/// Syntax errors do not fail the parse: the returned tree carries `ERROR`
/// nodes wherever the grammar had to recover.
pub fn parse_to_cst(source: &str, language: Language) -> Result<ConcreteTree> {
    let mut parser = tree_sitter::Parser::new();
    parser
        .set_language(language.tree_sitter())
        .map_err(|e| Error::UnsupportedLanguage(format!("{language}: {e}")))?;
    let tree = parser
        .parse(source, None)
        .ok_or_else(|| Error::UnreadableSource("parser returned no tree".into()))?;
    Ok(ConcreteTree::from_tree_sitter(&tree, source, language))
}

/// Like [`parse_to_cst`] for raw bytes that still need UTF-8 validation.
pub fn parse_bytes_to_cst(source: &[u8], language: Language) -> Result<ConcreteTree> {
    let text = std::str::from_utf8(source).map_err(|e| Error::UnreadableSource(e.to_string()))?;
    parse_to_cst(text, language)
}

impl ConcreteTree {
    fn from_tree_sitter(tree: &tree_sitter::Tree, source: &str, language: Language) -> Self {
        let grammar = language.tree_sitter();
        let mut nodes: Vec<CstNode> = Vec::new();
        let mut cursor = tree.walk();
        // arena index of each node on the current root-to-cursor chain
        let mut chain: Vec<usize> = Vec::new();
        'walk: loop {
            let node = cursor.node();
            let idx = nodes.len();
            let parent = chain.last().copied();
            let is_leaf = node.child_count() == 0;
            nodes.push(CstNode {
                kind: grammar.node_kind_for_id(node.kind_id()).unwrap_or("ERROR"),
                field: cursor.field_id().and_then(|id| grammar.field_name_for_id(id.get())),
                named: node.is_named(),
                is_error: node.is_error(),
                parent,
                children: Vec::new(),
                text: is_leaf.then(|| source[node.byte_range()].to_string()),
            });
            if let Some(p) = parent {
                nodes[p].children.push(idx);
            }
            if cursor.goto_first_child() {
                chain.push(idx);
                continue;
            }
            while !cursor.goto_next_sibling() {
                if !cursor.goto_parent() {
                    break 'walk;
                }
                chain.pop();
            }
        }
        ConcreteTree {
            language,
            source_digest: digest(source),
            nodes,
        }
    }

    pub fn root(&self) -> usize {
        0
    }

    pub fn node(&self, idx: usize) -> &CstNode {
        &self.nodes[idx]
    }

    pub fn nodes(&self) -> &[CstNode] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf indices in left-to-right order. A childless root is not a leaf.
    pub fn leaves(&self) -> impl Iterator<Item = usize> + '_ {
        (1..self.nodes.len()).filter(|&i| self.nodes[i].is_leaf())
    }

    /// Ancestors of `idx` from the root down to `idx` itself.
    pub fn chain(&self, idx: usize) -> Vec<usize> {
        let mut out = vec![idx];
        let mut cur = idx;
        while let Some(p) = self.nodes[cur].parent {
            out.push(p);
            cur = p;
        }
        out.reverse();
        out
    }

    pub fn has_error(&self) -> bool {
        self.nodes.iter().any(|n| n.is_error)
    }

    /// S-expression over named nodes, in the same layout tree-sitter's
    /// `Node::to_sexp` uses (field labels included).
    pub fn to_sexp(&self) -> String {
        let mut out = String::new();
        self.write_sexp(0, &mut out);
        out
    }

    fn write_sexp(&self, idx: usize, out: &mut String) {
        let node = &self.nodes[idx];
        out.push('(');
        out.push_str(node.kind);
        for &child in &node.children {
            let c = &self.nodes[child];
            if !c.named {
                continue;
            }
            out.push(' ');
            if let Some(field) = c.field {
                out.push_str(field);
                out.push_str(": ");
            }
            self.write_sexp(child, out);
        }
        out.push(')');
    }

    /// Name of the first function or method defined in the program.
    pub fn defined_function_name(&self) -> Option<&str> {
        for node in &self.nodes {
            match node.kind {
                "function_definition" | "method_declaration" | "constructor_declaration" => {}
                _ => continue,
            }
            if let Some(name) = self.find_name(node) {
                return Some(name);
            }
        }
        None
    }

    fn find_name<'a>(&'a self, node: &'a CstNode) -> Option<&'a str> {
        for &child in &node.children {
            let c = &self.nodes[child];
            match c.field {
                Some("name") => return c.text.as_deref(),
                // C: function_definition -> declarator: function_declarator -> declarator: identifier
                Some("declarator") if c.is_leaf() => return c.text.as_deref(),
                Some("declarator") => return self.find_name(c),
                _ => {}
            }
        }
        None
    }
}

/// Incremental construction of small trees by hand.
///
/// ```
/// use hit_core::syntax::{Language, TreeBuilder};
///
/// let tree = TreeBuilder::new(Language::Python, "module")
///     .open("expression_statement")
///     .leaf("identifier", "x")
///     .close()
///     .finish();
/// assert_eq!(tree.to_sexp(), "(module (expression_statement (identifier)))");
/// ```
pub struct TreeBuilder {
    language: Language,
    nodes: Vec<CstNode>,
    open: Vec<usize>,
    text: String,
}

impl TreeBuilder {
    pub fn new(language: Language, root: &'static str) -> Self {
        TreeBuilder {
            language,
            nodes: vec![node(root, None)],
            open: vec![0],
            text: String::new(),
        }
    }

    fn attach(&mut self, mut n: CstNode) -> usize {
        let parent = *self.open.last().expect("builder has no open node");
        let idx = self.nodes.len();
        n.parent = Some(parent);
        self.nodes.push(n);
        self.nodes[parent].children.push(idx);
        idx
    }

    pub fn open(mut self, kind: &'static str) -> Self {
        let idx = self.attach(node(kind, None));
        self.open.push(idx);
        self
    }

    pub fn leaf(mut self, kind: &'static str, text: &str) -> Self {
        self.text.push_str(text);
        self.text.push(' ');
        self.attach(node(kind, Some(text.to_string())));
        self
    }

    pub fn close(mut self) -> Self {
        self.open.pop();
        self
    }

    pub fn finish(mut self) -> ConcreteTree {
        if self.nodes[0].children.is_empty() {
            self.nodes[0].text = Some(String::new());
        }
        ConcreteTree {
            language: self.language,
            source_digest: digest(&self.text),
            nodes: self.nodes,
        }
    }
}

fn node(kind: &'static str, text: Option<String>) -> CstNode {
    CstNode {
        kind,
        field: None,
        named: kind.chars().next().is_some_and(|c| c.is_ascii_alphabetic()),
        is_error: kind == "ERROR",
        parent: None,
        children: Vec::new(),
        text,
    }
}
