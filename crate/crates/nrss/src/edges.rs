//! Flat indexing of the strict upper triangle of a symmetric `V x V` matrix.
//!
//! Symmetric quantities with an unused diagonal (responses, intercepts,
//! residuals, prior-network support) are stored as length `V(V-1)/2` vectors
//! in row-major upper-triangle order: `(0,1), (0,2), .., (0,V-1), (1,2), ..`

/// Number of strict upper-triangle entries of a `V x V` matrix.
#[inline]
pub fn edge_count(n_nodes: usize) -> usize {
    n_nodes * n_nodes.saturating_sub(1) / 2
}

/// Flat index of the pair `(a, b)` with `a < b < V`.
#[inline]
pub fn edge_index(n_nodes: usize, a: usize, b: usize) -> usize {
    debug_assert!(a < b && b < n_nodes, "bad edge ({a},{b}) for V={n_nodes}");
    a * n_nodes - a * (a + 1) / 2 + (b - a - 1)
}

/// Node pairs `(a, b)`, `a < b`, in flat-index order.
pub fn edge_pairs(n_nodes: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..n_nodes).flat_map(move |a| (a + 1..n_nodes).map(move |b| (a, b)))
}
