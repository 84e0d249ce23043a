use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::vocab::NodeTypeId;
use crate::error::{Error, Result};

/// Default bound on the number of node types kept per path.
pub const DEFAULT_MAX_PATH_DEPTH: usize = 32;

/// Root-to-leaf node types of one token, split into a global part
/// (`nodes[..=split]`, root down to the innermost statement) and a local
/// part (everything below the statement).
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct HierarchyPath {
    pub nodes: Vec<NodeTypeId>,
    /// Index of the innermost statement node; `None` when the token has no
    /// enclosing statement and the whole path counts as global.
    pub statement_split: Option<usize>,
}

impl HierarchyPath {
    pub fn new(nodes: Vec<NodeTypeId>) -> Self {
        HierarchyPath { nodes, statement_split: None }
    }

    pub fn single(node: NodeTypeId) -> Self {
        Self::new(vec![node])
    }

    /// Split index with `-1` standing for "no statement".
    pub fn split_index(&self) -> i64 {
        self.statement_split.map_or(-1, |s| s as i64)
    }

    pub fn global(&self) -> &[NodeTypeId] {
        match self.statement_split {
            Some(s) => &self.nodes[..=s],
            None => &self.nodes,
        }
    }

    pub fn local(&self) -> &[NodeTypeId] {
        match self.statement_split {
            Some(s) => &self.nodes[s + 1..],
            None => &[],
        }
    }

    pub fn leaf(&self) -> NodeTypeId {
        *self.nodes.last().expect("hierarchy path is never empty")
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Sets the split at the deepest node whose type is a statement.
pub fn split_path(path: &HierarchyPath, statements: &HashSet<NodeTypeId>) -> HierarchyPath {
    HierarchyPath {
        nodes: path.nodes.clone(),
        statement_split: path.nodes.iter().rposition(|n| statements.contains(n)),
    }
}

/// Shortens a path to at most `max_depth` nodes.
///
/// Nodes are dropped in this order until the path fits: interior global
/// nodes from the root downwards, then local nodes from the statement
/// downwards. The root, the statement node and the leaf always survive, so
/// `max_depth` must be at least 3.
pub fn truncate_path(path: &HierarchyPath, max_depth: usize) -> HierarchyPath {
    debug_assert!(max_depth >= 3);
    let n = path.nodes.len();
    if n <= max_depth {
        return path.clone();
    }
    let mut excess = n - max_depth;
    let mut keep = vec![true; n];
    let stmt = path.statement_split;
    let global_interior = 1..stmt.unwrap_or(n - 1);
    let local_interior = stmt.map_or(0..0, |s| s + 1..n - 1);
    for i in global_interior.chain(local_interior) {
        if excess == 0 {
            break;
        }
        keep[i] = false;
        excess -= 1;
    }
    let nodes: Vec<NodeTypeId> = path.nodes.iter().zip(&keep).filter(|(_, k)| **k).map(|(n, _)| *n).collect();
    let statement_split = stmt.map(|s| keep[..s].iter().filter(|k| **k).count());
    HierarchyPath { nodes, statement_split }
}

/// Which part of each path the model gets to see.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HierarchyMode {
    #[default]
    Full,
    Global,
    Local,
    None,
}

impl HierarchyMode {
    pub const ALL: [HierarchyMode; 4] = [
        HierarchyMode::Full,
        HierarchyMode::Global,
        HierarchyMode::Local,
        HierarchyMode::None,
    ];

    pub fn name(self) -> &'static str {
        match self {
            HierarchyMode::Full => "full",
            HierarchyMode::Global => "global",
            HierarchyMode::Local => "local",
            HierarchyMode::None => "none",
        }
    }

    pub fn project(self, path: &HierarchyPath) -> HierarchyPath {
        match self {
            HierarchyMode::Full => path.clone(),
            HierarchyMode::Global => HierarchyPath {
                nodes: path.global().to_vec(),
                statement_split: path.statement_split,
            },
            HierarchyMode::Local => {
                let local = path.local();
                if local.is_empty() {
                    HierarchyPath::single(NodeTypeId::UNK)
                } else {
                    HierarchyPath::new(local.to_vec())
                }
            }
            HierarchyMode::None => HierarchyPath::single(NodeTypeId::PAD),
        }
    }
}

impl fmt::Display for HierarchyMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for HierarchyMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(HierarchyMode::Full),
            "global" => Ok(HierarchyMode::Global),
            "local" => Ok(HierarchyMode::Local),
            "none" => Ok(HierarchyMode::None),
            _ => Err(Error::InvalidConfig(format!("unknown hierarchy mode `{s}`"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const MODULE: NodeTypeId = NodeTypeId(10);
    const FUNC: NodeTypeId = NodeTypeId(11);
    const BLOCK: NodeTypeId = NodeTypeId(12);
    const EXPR_STMT: NodeTypeId = NodeTypeId(13);
    const ASSIGN: NodeTypeId = NodeTypeId(14);
    const IDENT: NodeTypeId = NodeTypeId(15);
    const IF_STMT: NodeTypeId = NodeTypeId(16);
    const CALL: NodeTypeId = NodeTypeId(17);

    fn statements() -> HashSet<NodeTypeId> {
        [FUNC, EXPR_STMT, IF_STMT].into_iter().collect()
    }

    fn example_path() -> HierarchyPath {
        HierarchyPath::new(vec![MODULE, FUNC, BLOCK, EXPR_STMT, ASSIGN, IDENT])
    }

    #[test]
    fn split_lands_on_the_innermost_statement() {
        let split = split_path(&example_path(), &statements());
        assert_eq!(split.statement_split, Some(3));
        assert_eq!(split.global(), &[MODULE, FUNC, BLOCK, EXPR_STMT]);
        assert_eq!(split.local(), &[ASSIGN, IDENT]);

        let nested = HierarchyPath::new(vec![MODULE, IF_STMT, BLOCK, EXPR_STMT, CALL, IDENT]);
        assert_eq!(split_path(&nested, &statements()).statement_split, Some(3));
    }

    #[test]
    fn path_without_statement_is_all_global() {
        let split = split_path(&HierarchyPath::single(MODULE), &statements());
        assert_eq!(split.split_index(), -1);
        assert_eq!(split.global(), &[MODULE]);
        assert!(split.local().is_empty());
    }

    #[test]
    fn projections() {
        let path = split_path(&example_path(), &statements());
        assert_eq!(HierarchyMode::Full.project(&path), path);
        assert_eq!(HierarchyMode::Global.project(&path).nodes, vec![MODULE, FUNC, BLOCK, EXPR_STMT]);
        assert_eq!(HierarchyMode::Local.project(&path).nodes, vec![ASSIGN, IDENT]);
        assert_eq!(HierarchyMode::None.project(&path).nodes, vec![NodeTypeId::PAD]);
        let unsplit = HierarchyPath::single(MODULE);
        assert_eq!(HierarchyMode::Local.project(&unsplit).nodes, vec![NodeTypeId::UNK]);
    }

    #[test]
    fn truncation_drops_global_interior_first() {
        let path = HierarchyPath {
            nodes: (0..10).map(NodeTypeId).collect(),
            statement_split: Some(6),
        };
        let cut = truncate_path(&path, 6);
        let ids: Vec<u32> = cut.nodes.iter().map(|n| n.0).collect();
        assert_eq!(ids, [0, 5, 6, 7, 8, 9]);
        assert_eq!(cut.statement_split, Some(2));

        let cut = truncate_path(&path, 3);
        let ids: Vec<u32> = cut.nodes.iter().map(|n| n.0).collect();
        assert_eq!(ids, [0, 6, 9]);
        assert_eq!(cut.statement_split, Some(1));
    }

    fn arb_path() -> impl Strategy<Value = HierarchyPath> {
        (1usize..60)
            .prop_flat_map(|n| (prop::collection::vec(2u32..40, n), prop::option::of(0..n)))
            .prop_map(|(nodes, split)| HierarchyPath {
                nodes: nodes.into_iter().map(NodeTypeId).collect(),
                statement_split: split,
            })
    }

    proptest! {
        #[test]
        fn split_is_idempotent(path in arb_path()) {
            let stmts: HashSet<NodeTypeId> = (2u32..40).filter(|i| i % 3 == 0).map(NodeTypeId).collect();
            let once = split_path(&path, &stmts);
            prop_assert_eq!(split_path(&once, &stmts), once);
        }

        #[test]
        fn truncation_is_safe(path in arb_path(), max in 3usize..40) {
            let cut = truncate_path(&path, max);
            prop_assert!(cut.len() <= max);
            prop_assert_eq!(cut.leaf(), path.leaf());
            prop_assert_eq!(cut.nodes[0], path.nodes[0]);
            if let Some(s) = path.statement_split {
                let new = cut.statement_split.unwrap();
                prop_assert_eq!(cut.nodes[new], path.nodes[s]);
                // the deepest local nodes survive
                let kept_local = cut.len() - new - 1;
                prop_assert_eq!(&cut.nodes[new + 1..], &path.nodes[path.len() - kept_local..]);
            }
        }
    }
}
