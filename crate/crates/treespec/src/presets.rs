//! Preset trees used by the bundled examples, the test suite, and the CLI
//! fixtures. Both presets carry a known/unknown split and a changed-BC
//! variant, and their zero-potential characteristic polynomials are known in
//! closed form, which makes them good end-to-end fixtures.

use crate::tree::{Bc, Edge, EdgeId, TreeSpec, VertexId};
use std::collections::BTreeMap;

/// Seven unit edges: a 3-star (edges 1,2,3 meeting at vertex 2) whose stem
/// edge 1 starts at the split vertex w = 1, plus two 2π chains (edges 4-5 and
/// 6-7) hanging at w. Boundary conditions: Neumann at v3 and v6, Dirichlet at
/// v4 and v8.
///
/// Zero-potential characteristic function: (sin ρπ/ρ)·Q(cos ρπ) with
/// Q(z) = 36z⁶ − 46z⁴ + 15z² − 1.
pub fn tree_a() -> TreeSpec {
    let edges = vec![
        // unknown side: stem + star
        Edge { id: EdgeId(1), tail: VertexId(1), head: VertexId(2) },
        Edge { id: EdgeId(2), tail: VertexId(3), head: VertexId(2) },
        Edge { id: EdgeId(3), tail: VertexId(4), head: VertexId(2) },
        // known side: two 2π chains into w, outer halves first
        Edge { id: EdgeId(4), tail: VertexId(6), head: VertexId(5) },
        Edge { id: EdgeId(5), tail: VertexId(5), head: VertexId(1) },
        Edge { id: EdgeId(6), tail: VertexId(8), head: VertexId(7) },
        Edge { id: EdgeId(7), tail: VertexId(7), head: VertexId(1) },
    ];
    let bc = BTreeMap::from([
        (VertexId(3), Bc::Neumann),
        (VertexId(4), Bc::Dirichlet),
        (VertexId(6), Bc::Neumann),
        (VertexId(8), Bc::Dirichlet),
    ]);
    TreeSpec::new(edges, bc, BTreeMap::new(), Some(VertexId(1)))
}

/// Known edges of [`tree_a`]'s split at w = v1.
pub fn tree_a_known() -> Vec<EdgeId> {
    vec![EdgeId(4), EdgeId(5), EdgeId(6), EdgeId(7)]
}

/// The boundary vertex whose condition the changed-BC variant of tree A flips
/// (Neumann → Dirichlet at the star's N-tagged leaf).
pub fn tree_a_flip_vertex() -> VertexId {
    VertexId(3)
}

/// Four unit edges: a 2π chain (edges 1-2 from the far Dirichlet end v3 into
/// the split vertex w = v1) plus two unit edges (3, 4) with Neumann outer
/// ends meeting at w.
///
/// Zero-potential characteristic function: cos²ρπ·(6cos²ρπ − 5).
pub fn tree_b() -> TreeSpec {
    let edges = vec![
        Edge { id: EdgeId(1), tail: VertexId(3), head: VertexId(2) },
        Edge { id: EdgeId(2), tail: VertexId(2), head: VertexId(1) },
        Edge { id: EdgeId(3), tail: VertexId(4), head: VertexId(1) },
        Edge { id: EdgeId(4), tail: VertexId(5), head: VertexId(1) },
    ];
    let bc = BTreeMap::from([
        (VertexId(3), Bc::Dirichlet),
        (VertexId(4), Bc::Neumann),
        (VertexId(5), Bc::Neumann),
    ]);
    TreeSpec::new(edges, bc, BTreeMap::new(), Some(VertexId(1)))
}

pub fn tree_b_known() -> Vec<EdgeId> {
    vec![EdgeId(3), EdgeId(4)]
}

pub fn tree_b_flip_vertex() -> VertexId {
    VertexId(4)
}

/// Star with `n` edges, all tails at the outer vertices 1..n, heads at the
/// center vertex 0, with the given outer condition everywhere.
pub fn star(n: u32, outer: Bc) -> TreeSpec {
    let edges = (1..=n)
        .map(|i| Edge { id: EdgeId(i), tail: VertexId(i), head: VertexId(0) })
        .collect();
    let bc = (1..=n).map(|i| (VertexId(i), outer)).collect();
    TreeSpec::new(edges, bc, BTreeMap::new(), Some(VertexId(0)))
}

/// Path of `n` unit edges from vertex 0 to vertex n, oriented along the path,
/// with the given end conditions.
pub fn path(n: u32, bc_start: Bc, bc_end: Bc) -> TreeSpec {
    let edges = (0..n)
        .map(|i| Edge { id: EdgeId(i + 1), tail: VertexId(i), head: VertexId(i + 1) })
        .collect();
    let bc = BTreeMap::from([(VertexId(0), bc_start), (VertexId(n), bc_end)]);
    TreeSpec::new(edges, bc, BTreeMap::new(), None)
}

/// Ascending coefficients of the zero-potential Q-polynomial of [`tree_a`]:
/// 36z⁶ − 46z⁴ + 15z² − 1.
pub const TREE_A_Q: [f64; 7] = [-1.0, 0.0, 15.0, 0.0, -46.0, 0.0, 36.0];

/// Q of the flipped variant of tree A: z(1−z²)(36z⁴ − 34z² + 5) =
/// −36z⁷ + 70z⁵ − 39z³ + 5z.
pub const TREE_A_FLIPPED_Q: [f64; 8] = [0.0, 5.0, 0.0, -39.0, 0.0, 70.0, 0.0, -36.0];

/// Q of [`tree_b`]: 6z⁴ − 5z².
pub const TREE_B_Q: [f64; 5] = [0.0, 0.0, -5.0, 0.0, 6.0];
