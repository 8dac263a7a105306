//! Multi-level knowledge graph and learning-path extraction.
//!
//! Learning objects live on one of three class levels. Intra-class relations
//! (`Subclass`, `PreKnowledge`) connect objects on the same level; inter-class
//! relations (`Implement`, `ApplyToBasic`) must cross levels.
//!
//! [`find_all_paths`] walks outgoing edges from a target object depth-first, following
//! only relation kinds admitted by a [`RelationConstraint`], and records a path each
//! time the walk reaches an object with no admissible unvisited successor.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ClassLevel {
    Subject = 0,
    Basic = 1,
    Task = 2,
}

impl ClassLevel {
    pub fn from_index(level: u8) -> Option<Self> {
        match level {
            0 => Some(ClassLevel::Subject),
            1 => Some(ClassLevel::Basic),
            2 => Some(ClassLevel::Task),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RelationKind {
    Subclass,
    Implement,
    PreKnowledge,
    ApplyToBasic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    Intra,
    Inter,
}

impl RelationKind {
    pub const ALL: [RelationKind; 4] =
        [RelationKind::Subclass, RelationKind::Implement, RelationKind::PreKnowledge, RelationKind::ApplyToBasic];

    pub fn scope(self) -> Scope {
        match self {
            RelationKind::Subclass | RelationKind::PreKnowledge => Scope::Intra,
            RelationKind::Implement | RelationKind::ApplyToBasic => Scope::Inter,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RelationKind::Subclass => "Subclass",
            RelationKind::Implement => "Implement",
            RelationKind::PreKnowledge => "PreKnowledge",
            RelationKind::ApplyToBasic => "ApplyToBasic",
        }
    }

    fn bit(self) -> u8 {
        1 << (self as u8)
    }
}

impl fmt::Display for RelationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RelationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RelationKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::UnknownRelationKind(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LearningObject {
    pub id: String,
    pub label: String,
    pub class_level: ClassLevel,
}

impl LearningObject {
    pub fn new(id: impl Into<String>, label: impl Into<String>, class_level: ClassLevel) -> Self {
        LearningObject { id: id.into(), label: label.into(), class_level }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct RelationEdge {
    pub from: String,
    pub to: String,
    pub kind: RelationKind,
}

impl RelationEdge {
    pub fn new(from: impl Into<String>, to: impl Into<String>, kind: RelationKind) -> Self {
        RelationEdge { from: from.into(), to: to.into(), kind }
    }

    pub fn scope(&self) -> Scope {
        self.kind.scope()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeGraph {
    nodes: BTreeMap<String, LearningObject>,
    edges: Vec<RelationEdge>,
    /// Outgoing edge indices per node, sorted by (target id, kind).
    adjacency: BTreeMap<String, Vec<usize>>,
}

impl KnowledgeGraph {
    pub fn new(nodes: Vec<LearningObject>, edges: Vec<RelationEdge>) -> Result<Self> {
        let mut node_map = BTreeMap::new();
        for n in nodes {
            let id = n.id.clone();
            if node_map.insert(id.clone(), n).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate learning object {id}")));
            }
        }
        let mut adjacency: BTreeMap<String, Vec<usize>> = node_map.keys().map(|k| (k.clone(), Vec::new())).collect();
        for (i, e) in edges.iter().enumerate() {
            let from = node_map.get(&e.from).ok_or_else(|| Error::InvalidEdge {
                from: e.from.clone(),
                to: e.to.clone(),
                reason: format!("dangling endpoint {}", e.from),
            })?;
            let to = node_map.get(&e.to).ok_or_else(|| Error::InvalidEdge {
                from: e.from.clone(),
                to: e.to.clone(),
                reason: format!("dangling endpoint {}", e.to),
            })?;
            let same_level = from.class_level == to.class_level;
            match (e.scope(), same_level) {
                (Scope::Intra, false) => {
                    return Err(Error::InvalidEdge {
                        from: e.from.clone(),
                        to: e.to.clone(),
                        reason: format!("intra-class relation {} crosses class levels", e.kind),
                    })
                }
                (Scope::Inter, true) => {
                    return Err(Error::InvalidEdge {
                        from: e.from.clone(),
                        to: e.to.clone(),
                        reason: format!("inter-class relation {} within one class level", e.kind),
                    })
                }
                _ => {}
            }
            adjacency.get_mut(&e.from).expect("node present").push(i);
        }
        for out in adjacency.values_mut() {
            out.sort_by(|&a, &b| (&edges[a].to, edges[a].kind).cmp(&(&edges[b].to, edges[b].kind)));
            out.dedup_by(|a, b| edges[*a] == edges[*b]);
        }
        Ok(KnowledgeGraph { nodes: node_map, edges, adjacency })
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn node(&self, id: &str) -> Option<&LearningObject> {
        self.nodes.get(id)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.nodes.contains_key(id)
    }

    /// Nodes in id order.
    pub fn nodes(&self) -> impl Iterator<Item = &LearningObject> {
        self.nodes.values()
    }

    pub fn edges(&self) -> &[RelationEdge] {
        &self.edges
    }

    /// Outgoing edges of `kc`, sorted by target id then kind.
    pub fn get_relations(&self, kc: &str) -> Result<Vec<&RelationEdge>> {
        let out = self.adjacency.get(kc).ok_or_else(|| Error::UnknownNode(kc.to_string()))?;
        Ok(out.iter().map(|&i| &self.edges[i]).collect())
    }

    fn admissible_successors(&self, kc: &str, phi: &RelationConstraint) -> Vec<&str> {
        let mut next: Vec<&str> = self.adjacency[kc]
            .iter()
            .map(|&i| &self.edges[i])
            .filter(|e| phi.allows(e.kind))
            .map(|e| e.to.as_str())
            .collect();
        next.dedup();
        next
    }
}

/// The set of relation kinds a path may follow.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RelationConstraint {
    mask: u8,
}

impl RelationConstraint {
    pub fn unconstrained() -> Self {
        RelationConstraint { mask: 0b1111 }
    }

    /// Rejects an empty kind set; use [`RelationConstraint::unconstrained`] for "any".
    pub fn only(kinds: &[RelationKind]) -> Result<Self> {
        let mask = kinds.iter().fold(0, |m, k| m | k.bit());
        if mask == 0 {
            return Err(Error::InvalidArgument("relation constraint admits no relation kind".into()));
        }
        Ok(RelationConstraint { mask })
    }

    pub fn allows(&self, kind: RelationKind) -> bool {
        self.mask & kind.bit() != 0
    }

    pub fn kinds(&self) -> Vec<RelationKind> {
        RelationKind::ALL.into_iter().filter(|k| self.allows(*k)).collect()
    }

    pub fn is_subset_of(&self, other: &RelationConstraint) -> bool {
        self.mask & !other.mask == 0
    }

    /// Named learner-need presets:
    ///
    /// | name | kinds |
    /// |------|-------|
    /// | `all` | every kind |
    /// | `prerequisite` | `PreKnowledge`, `Subclass` |
    /// | `application` | `Implement`, `ApplyToBasic` |
    /// | `hierarchy` | `Subclass`, `Implement` |
    pub fn preset(need: &str) -> Option<Self> {
        use RelationKind::*;
        let kinds: &[RelationKind] = match need {
            "all" => &[Subclass, Implement, PreKnowledge, ApplyToBasic],
            "prerequisite" => &[PreKnowledge, Subclass],
            "application" => &[Implement, ApplyToBasic],
            "hierarchy" => &[Subclass, Implement],
            _ => return None,
        };
        RelationConstraint::only(kinds).ok()
    }
}

impl Default for RelationConstraint {
    fn default() -> Self {
        RelationConstraint::unconstrained()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct LearningPath(pub Vec<String>);

impl LearningPath {
    pub fn nodes(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, kc: &str) -> bool {
        self.0.iter().any(|n| n == kc)
    }
}

/// Zero-based position of `kc` in `path`.
pub fn level_in_path(path: &LearningPath, kc: &str) -> Result<usize> {
    path.0
        .iter()
        .position(|n| n == kc)
        .ok_or_else(|| Error::InvalidArgument(format!("{kc} does not occur in the path")))
}

/// Learning paths plus, per object, the `(path index, level)` pairs where it occurs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PathSet {
    paths: Vec<LearningPath>,
    occurrences: BTreeMap<String, Vec<(usize, usize)>>,
}

impl PathSet {
    /// Paths are sorted lexicographically and deduplicated.
    pub fn from_paths(mut paths: Vec<LearningPath>) -> Self {
        paths.sort();
        paths.dedup();
        let mut occurrences: BTreeMap<String, Vec<(usize, usize)>> = BTreeMap::new();
        for (i, p) in paths.iter().enumerate() {
            for (level, n) in p.0.iter().enumerate() {
                occurrences.entry(n.clone()).or_default().push((i, level));
            }
        }
        PathSet { paths, occurrences }
    }

    pub fn paths(&self) -> &[LearningPath] {
        &self.paths
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    /// `(path index, level)` for every path containing `kc`.
    pub fn occurrences(&self, kc: &str) -> &[(usize, usize)] {
        self.occurrences.get(kc).map_or(&[], Vec::as_slice)
    }

    /// Number of paths containing `kc`.
    pub fn containing(&self, kc: &str) -> usize {
        self.occurrences(kc).len()
    }

    pub fn union(sets: impl IntoIterator<Item = PathSet>) -> PathSet {
        PathSet::from_paths(sets.into_iter().flat_map(|s| s.paths).collect())
    }
}

/// Enumerates maximal constraint-respecting simple paths starting at `target`.
///
/// A node never repeats within a path, so cycles terminate. An object with no
/// admissible successor yields the single-node path `[target]`.
pub fn find_all_paths(kg: &KnowledgeGraph, target: &str, phi: &RelationConstraint) -> Result<PathSet> {
    if !kg.contains(target) {
        return Err(Error::UnknownNode(target.to_string()));
    }
    let mut paths = Vec::new();
    let mut current: Vec<&str> = alloc::vec![target];
    let mut on_path: BTreeSet<&str> = BTreeSet::new();
    on_path.insert(target);
    extend(kg, phi, &mut current, &mut on_path, &mut paths);
    Ok(PathSet::from_paths(paths))
}

fn extend<'g>(
    kg: &'g KnowledgeGraph,
    phi: &RelationConstraint,
    current: &mut Vec<&'g str>,
    on_path: &mut BTreeSet<&'g str>,
    out: &mut Vec<LearningPath>,
) {
    let frontier = *current.last().expect("path never empty");
    let next: Vec<&str> =
        kg.admissible_successors(frontier, phi).into_iter().filter(|n| !on_path.contains(n)).collect();
    if next.is_empty() {
        out.push(LearningPath(current.iter().map(|s| s.to_string()).collect()));
        return;
    }
    for n in next {
        current.push(n);
        on_path.insert(n);
        extend(kg, phi, current, on_path, out);
        on_path.remove(n);
        current.pop();
    }
}

/// Union of [`find_all_paths`] over several targets.
pub fn paths_from_targets<'a>(
    kg: &KnowledgeGraph,
    targets: impl IntoIterator<Item = &'a str>,
    phi: &RelationConstraint,
) -> Result<PathSet> {
    let mut sets = Vec::new();
    for t in targets {
        sets.push(find_all_paths(kg, t, phi)?);
    }
    Ok(PathSet::union(sets))
}
