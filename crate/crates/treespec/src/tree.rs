//! Metric-tree description: vertices, oriented unit-length edges, boundary
//! conditions, vertex constants, and the known/unknown split used by the
//! partial inverse problem.
//!
//! Every edge has length π. Longer (rationally dependent) edges are expected
//! to be subdivided by the caller into unit edges joined by degree-2 vertices
//! with γ = 0; matching conditions at such vertices reduce to continuity of y
//! and y^[1], so the spectrum is unchanged.

use crate::error::{Error, Result};
use std::collections::{BTreeMap, BTreeSet, VecDeque};

/// Vertex identifier as assigned by the input file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VertexId(pub u32);

/// Edge identifier as assigned by the input file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EdgeId(pub u32);

impl std::fmt::Display for VertexId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "v{}", self.0)
    }
}

impl std::fmt::Display for EdgeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "e{}", self.0)
    }
}

/// Boundary condition tag: Dirichlet y(v) = 0 or Neumann y^[1](v) = 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bc {
    Dirichlet,
    Neumann,
}

impl Bc {
    pub fn flipped(self) -> Bc {
        match self {
            Bc::Dirichlet => Bc::Neumann,
            Bc::Neumann => Bc::Dirichlet,
        }
    }
}

/// Oriented edge: `tail` is the x = 0 end, `head` the x = π end.
/// Orientation is data from the input file, never inferred.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Edge {
    pub id: EdgeId,
    pub tail: VertexId,
    pub head: VertexId,
}

/// A metric tree with equal-length edges and boundary-condition tags.
///
/// Immutable after construction; safe to share across threads.
#[derive(Debug, Clone)]
pub struct TreeSpec {
    pub vertices: Vec<VertexId>,
    pub edges: Vec<Edge>,
    /// Condition at each boundary vertex. The split vertex, when it is a
    /// boundary vertex of a fragment, carries no tag: the condition there is
    /// supplied by the operation using the fragment.
    pub bc: BTreeMap<VertexId, Bc>,
    /// Per-edge γ constant entering y^[1](head) = y^[1](π) + γ y(π).
    pub gamma: BTreeMap<EdgeId, f64>,
    /// Designated split vertex w, when the tree carries a known/unknown split.
    pub split_vertex: Option<VertexId>,
}

impl TreeSpec {
    pub fn new(
        edges: Vec<Edge>,
        bc: BTreeMap<VertexId, Bc>,
        gamma: BTreeMap<EdgeId, f64>,
        split_vertex: Option<VertexId>,
    ) -> TreeSpec {
        let mut vs = BTreeSet::new();
        for e in &edges {
            vs.insert(e.tail);
            vs.insert(e.head);
        }
        TreeSpec {
            vertices: vs.into_iter().collect(),
            edges,
            bc,
            gamma,
            split_vertex,
        }
    }

    /// Number of edges m.
    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Number of Dirichlet conditions among BC.
    pub fn dirichlet_count(&self) -> usize {
        self.bc.values().filter(|b| **b == Bc::Dirichlet).count()
    }

    pub fn gamma_of(&self, e: EdgeId) -> f64 {
        self.gamma.get(&e).copied().unwrap_or(0.0)
    }

    pub fn edge(&self, id: EdgeId) -> Option<&Edge> {
        self.edges.iter().find(|e| e.id == id)
    }

    /// Edges incident to `v`.
    pub fn edges_at(&self, v: VertexId) -> Vec<&Edge> {
        self.edges
            .iter()
            .filter(|e| e.tail == v || e.head == v)
            .collect()
    }

    pub fn degree(&self, v: VertexId) -> usize {
        self.edges_at(v).len()
    }

    pub fn is_boundary(&self, v: VertexId) -> bool {
        self.degree(v) == 1
    }

    pub fn boundary_vertices(&self) -> Vec<VertexId> {
        self.vertices
            .iter()
            .copied()
            .filter(|v| self.is_boundary(*v))
            .collect()
    }

    pub fn internal_vertices(&self) -> Vec<VertexId> {
        self.vertices
            .iter()
            .copied()
            .filter(|v| self.degree(*v) >= 2)
            .collect()
    }

    /// Product of vertex degrees, 2^{-m}-scaled: the constant in the
    /// ρ = iτ growth asymptote of the zero-potential characteristic function.
    pub fn growth_constant(&self) -> f64 {
        let prod: f64 = self.vertices.iter().map(|v| self.degree(*v) as f64).product();
        0.5f64.powi(self.edge_count() as i32) * prod
    }

    fn connected_from(&self, start: VertexId) -> BTreeSet<VertexId> {
        let mut seen = BTreeSet::new();
        let mut queue = VecDeque::new();
        seen.insert(start);
        queue.push_back(start);
        while let Some(v) = queue.pop_front() {
            for e in self.edges_at(v) {
                let other = if e.tail == v { e.head } else { e.tail };
                if seen.insert(other) {
                    queue.push_back(other);
                }
            }
        }
        seen
    }

    /// Diagnostics for all structural invariants. Empty iff the tree is valid.
    /// Violations are returned, never thrown.
    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.edges.is_empty() {
            out.push("tree has no edges".into());
            return out;
        }
        let mut ids = BTreeSet::new();
        for e in &self.edges {
            if !ids.insert(e.id) {
                out.push(format!("duplicate edge id {}", e.id));
            }
            if e.tail == e.head {
                out.push(format!("self-loop at {} ({})", e.tail, e.id));
            }
        }
        if self.edges.len() != self.vertices.len() - 1 {
            out.push(format!(
                "not acyclic: {} edges, {} vertices",
                self.edges.len(),
                self.vertices.len()
            ));
        }
        let seen = self.connected_from(self.vertices[0]);
        if seen.len() != self.vertices.len() {
            out.push("not connected".into());
        }
        for v in self.boundary_vertices() {
            if Some(v) == self.split_vertex {
                continue;
            }
            if !self.bc.contains_key(&v) {
                out.push(format!("boundary vertex {v} has no condition tag"));
            }
        }
        for (v, _) in &self.bc {
            if !self.vertices.contains(v) {
                out.push(format!("condition tag on unknown vertex {v}"));
            } else if !self.is_boundary(*v) {
                out.push(format!("condition tag on internal vertex {v}"));
            }
        }
        if let Some(w) = self.split_vertex {
            if !self.vertices.contains(&w) {
                out.push(format!("split vertex {w} absent"));
            } else if self.degree(w) < 2 && self.edges.len() > 1 {
                // For a fragment the split vertex may legitimately be boundary;
                // the whole-tree invariant requires it internal.
                if self.bc.contains_key(&w) {
                    out.push(format!("split vertex {w} carries a condition tag"));
                }
            }
        }
        for (e, _) in &self.gamma {
            if self.edge(*e).is_none() {
                out.push(format!("gamma on unknown edge {e}"));
            }
        }
        out
    }

    /// Splits the tree at an internal vertex `v` of degree r into r subtrees,
    /// each containing one edge formerly incident to `v`. `v` becomes an
    /// untagged boundary vertex of every subtree (the caller supplies the
    /// condition there); all other tags and the parametrization are inherited.
    pub fn split_at(&self, v: VertexId) -> Result<Vec<TreeSpec>> {
        if !self.vertices.contains(&v) {
            return Err(Error::Precondition(format!("split vertex {v} absent")));
        }
        if self.degree(v) < 2 {
            return Err(Error::Precondition(format!(
                "split vertex {v} is a boundary vertex"
            )));
        }
        let mut out = Vec::new();
        for e0 in self.edges_at(v) {
            let start = if e0.tail == v { e0.head } else { e0.tail };
            // collect the component of `start` in the tree minus v
            let mut comp_edges = vec![*e0];
            let mut seen = BTreeSet::from([v, start]);
            let mut queue = VecDeque::from([start]);
            while let Some(u) = queue.pop_front() {
                for e in self.edges_at(u) {
                    let other = if e.tail == u { e.head } else { e.tail };
                    if other == v {
                        continue;
                    }
                    if seen.insert(other) {
                        comp_edges.push(*e);
                        queue.push_back(other);
                    }
                }
            }
            comp_edges.sort_by_key(|e| e.id);
            comp_edges.dedup_by_key(|e| e.id);
            let bc = self
                .bc
                .iter()
                .filter(|(u, _)| **u != v && seen.contains(u))
                .map(|(u, b)| (*u, *b))
                .collect();
            let gamma = self
                .gamma
                .iter()
                .filter(|(e, _)| comp_edges.iter().any(|ce| ce.id == **e))
                .map(|(e, g)| (*e, *g))
                .collect();
            out.push(TreeSpec::new(comp_edges, bc, gamma, Some(v)));
        }
        Ok(out)
    }
}

/// The known/unknown decomposition of a tree at its split vertex w.
///
/// Immutable after construction.
#[derive(Debug, Clone)]
pub struct SubtreeSplit {
    pub w: VertexId,
    pub known: TreeSpec,
    pub unknown: Option<TreeSpec>,
    /// Subtrees G_1..G_p obtained by splitting w inside the unknown part.
    pub children_of_w: Vec<TreeSpec>,
    /// Edge count of the unknown part.
    pub l: usize,
    /// Per-child edge counts.
    pub l_j: Vec<usize>,
    /// Per-child Dirichlet counts, including the Dirichlet condition at w.
    pub r_j: Vec<usize>,
    /// Dirichlet count of the unknown part's own boundary (w excluded).
    pub r: usize,
    /// Child count p = number of unknown edges incident to w.
    pub p: usize,
    /// Boundary vertices of the unknown part other than w.
    pub b: usize,
    pub known_edges: Vec<EdgeId>,
    pub unknown_edges: Vec<EdgeId>,
}

/// Builds a [`SubtreeSplit`] at internal vertex `w`; `known_edges` designates
/// the known side, the complement is the unknown side. Both sides must be
/// connected and contain w.
pub fn make_split(tree: &TreeSpec, w: VertexId, known_edges: &[EdgeId]) -> Result<SubtreeSplit> {
    if tree.degree(w) < 2 {
        return Err(Error::Precondition(format!("split vertex {w} not internal")));
    }
    let known_set: BTreeSet<EdgeId> = known_edges.iter().copied().collect();
    if known_set.is_empty() {
        return Err(Error::Precondition("known side is empty".into()));
    }
    for e in &known_set {
        if tree.edge(*e).is_none() {
            return Err(Error::Precondition(format!("unknown edge id {e}")));
        }
    }
    let unknown_set: BTreeSet<EdgeId> = tree
        .edges
        .iter()
        .map(|e| e.id)
        .filter(|e| !known_set.contains(e))
        .collect();

    let fragment = |ids: &BTreeSet<EdgeId>| -> TreeSpec {
        let edges: Vec<Edge> = tree
            .edges
            .iter()
            .filter(|e| ids.contains(&e.id))
            .copied()
            .collect();
        let mut vs = BTreeSet::new();
        for e in &edges {
            vs.insert(e.tail);
            vs.insert(e.head);
        }
        let bc = tree
            .bc
            .iter()
            .filter(|(v, _)| vs.contains(v) && **v != w)
            .map(|(v, b)| (*v, *b))
            .collect();
        let gamma = tree
            .gamma
            .iter()
            .filter(|(e, _)| ids.contains(e))
            .map(|(e, g)| (*e, *g))
            .collect();
        TreeSpec::new(edges, bc, gamma, Some(w))
    };

    let known = fragment(&known_set);
    if !known.vertices.contains(&w) {
        return Err(Error::Precondition("known side does not reach w".into()));
    }
    if known.connected_from(w).len() != known.vertices.len() {
        return Err(Error::Precondition("known side disconnected".into()));
    }

    let unknown = if unknown_set.is_empty() {
        None
    } else {
        let u = fragment(&unknown_set);
        if !u.vertices.contains(&w) {
            return Err(Error::Precondition("unknown side does not reach w".into()));
        }
        if u.connected_from(w).len() != u.vertices.len() {
            return Err(Error::Precondition("unknown side disconnected".into()));
        }
        Some(u)
    };

    let (children, l, r, b) = match &unknown {
        None => (Vec::new(), 0, 0, 0),
        Some(u) => {
            let children = if u.degree(w) == 1 {
                vec![u.clone()]
            } else {
                u.split_at(w)?
            };
            let l = u.edge_count();
            let boundary: Vec<VertexId> = u
                .boundary_vertices()
                .into_iter()
                .filter(|v| *v != w)
                .collect();
            let r = boundary
                .iter()
                .filter(|v| u.bc.get(v) == Some(&Bc::Dirichlet))
                .count();
            (children, l, r, boundary.len())
        }
    };
    let l_j: Vec<usize> = children.iter().map(|c| c.edge_count()).collect();
    // each child gets one extra Dirichlet condition at w
    let r_j: Vec<usize> = children.iter().map(|c| c.dirichlet_count() + 1).collect();
    let p = children.len();
    debug_assert_eq!(l, l_j.iter().sum::<usize>());
    if p > 0 {
        debug_assert_eq!(r + p, r_j.iter().sum::<usize>());
    }

    Ok(SubtreeSplit {
        w,
        known,
        unknown,
        children_of_w: children,
        l,
        l_j,
        r_j,
        r,
        p,
        b,
        known_edges: known_set.into_iter().collect(),
        unknown_edges: unknown_set.into_iter().collect(),
    })
}

/// Flips the boundary condition at `v`, producing the changed-BC problem tree.
pub fn flip_bc(tree: &TreeSpec, v: VertexId) -> Result<TreeSpec> {
    let mut t = tree.clone();
    match t.bc.get_mut(&v) {
        Some(b) => {
            *b = b.flipped();
            Ok(t)
        }
        None => Err(Error::Precondition(format!(
            "{v} carries no boundary condition to flip"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn single_edge(bc0: Bc, bc1: Bc) -> TreeSpec {
        TreeSpec::new(
            vec![Edge {
                id: EdgeId(1),
                tail: VertexId(1),
                head: VertexId(2),
            }],
            BTreeMap::from([(VertexId(1), bc0), (VertexId(2), bc1)]),
            BTreeMap::new(),
            None,
        )
    }

    fn three_star() -> TreeSpec {
        // center vertex 0, outer 1,2,3, all edges tail at outer, head at center
        TreeSpec::new(
            (1..=3)
                .map(|i| Edge {
                    id: EdgeId(i),
                    tail: VertexId(i),
                    head: VertexId(0),
                })
                .collect(),
            (1..=3).map(|i| (VertexId(i), Bc::Dirichlet)).collect(),
            BTreeMap::new(),
            None,
        )
    }

    #[test]
    fn smallest_valid_tree() {
        assert!(single_edge(Bc::Dirichlet, Bc::Dirichlet).validate().is_empty());
    }

    #[test]
    fn cycle_detected() {
        // 3-edge path plus a cycle-forming extra edge
        let t = TreeSpec::new(
            vec![
                Edge { id: EdgeId(1), tail: VertexId(1), head: VertexId(2) },
                Edge { id: EdgeId(2), tail: VertexId(2), head: VertexId(3) },
                Edge { id: EdgeId(3), tail: VertexId(3), head: VertexId(4) },
                Edge { id: EdgeId(4), tail: VertexId(4), head: VertexId(1) },
            ],
            BTreeMap::new(),
            BTreeMap::new(),
            None,
        );
        let v = t.validate();
        assert!(v.iter().any(|m| m.contains("not acyclic")), "{v:?}");
    }

    #[test]
    fn star_split_at_center() {
        let t = three_star();
        let parts = t.split_at(VertexId(0)).unwrap();
        assert_eq!(parts.len(), 3);
        for p in &parts {
            assert_eq!(p.edge_count(), 1);
            assert!(p.validate().is_empty(), "{:?}", p.validate());
            assert_eq!(p.split_vertex, Some(VertexId(0)));
        }
        // re-glue: union of edge ids equals original
        let mut ids: Vec<u32> = parts
            .iter()
            .flat_map(|p| p.edges.iter().map(|e| e.id.0))
            .collect();
        ids.sort();
        assert_eq!(ids, vec![1, 2, 3]);
    }

    #[test]
    fn path_split_at_middle() {
        let t = TreeSpec::new(
            vec![
                Edge { id: EdgeId(1), tail: VertexId(1), head: VertexId(2) },
                Edge { id: EdgeId(2), tail: VertexId(2), head: VertexId(3) },
            ],
            BTreeMap::from([(VertexId(1), Bc::Dirichlet), (VertexId(3), Bc::Dirichlet)]),
            BTreeMap::new(),
            None,
        );
        let parts = t.split_at(VertexId(2)).unwrap();
        assert_eq!(parts.len(), 2);
        assert!(t.split_at(VertexId(1)).is_err());
        assert!(t.split_at(VertexId(9)).is_err());
    }

    #[test]
    fn star_split_known_unknown() {
        let t = three_star();
        let s = make_split(&t, VertexId(0), &[EdgeId(2), EdgeId(3)]).unwrap();
        assert_eq!(s.l, 1);
        assert_eq!(s.p, 1);
        assert_eq!(s.r, 1);
        assert_eq!(s.b, 1);
        assert_eq!(s.r_j, vec![2]);
        assert_eq!(s.r + s.p, s.r_j.iter().sum::<usize>());
    }

    #[test]
    fn disconnected_known_rejected() {
        // path of 3 edges, try known = the two boundary edges
        let t = TreeSpec::new(
            vec![
                Edge { id: EdgeId(1), tail: VertexId(1), head: VertexId(2) },
                Edge { id: EdgeId(2), tail: VertexId(2), head: VertexId(3) },
                Edge { id: EdgeId(3), tail: VertexId(3), head: VertexId(4) },
            ],
            BTreeMap::from([(VertexId(1), Bc::Dirichlet), (VertexId(4), Bc::Dirichlet)]),
            BTreeMap::new(),
            None,
        );
        assert!(make_split(&t, VertexId(2), &[EdgeId(1), EdgeId(3)]).is_err());
    }

    #[test]
    fn flip_changes_tag() {
        let t = single_edge(Bc::Dirichlet, Bc::Neumann);
        let f = flip_bc(&t, VertexId(1)).unwrap();
        assert_eq!(f.bc[&VertexId(1)], Bc::Neumann);
        assert!(flip_bc(&t, VertexId(99)).is_err());
    }
}
