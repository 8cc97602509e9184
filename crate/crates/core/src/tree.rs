//! Heap-indexed regular binary trees and flat per-node sample storage.
//!
//! Node `u` has children `2u + 1` and `2u + 2`; the root is `0`. Generation
//! `m` occupies the contiguous index range `[2^m - 1, 2^(m+1) - 1)`.

use std::fmt::Write as _;
use std::ops::Range;

use crate::{Error, Result};

/// Largest accepted depth; `2^(n+1) - 1` must stay far from `usize` limits.
pub const MAX_DEPTH: u32 = 40;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub usize);

impl NodeId {
    pub const ROOT: NodeId = NodeId(0);

    pub fn index(self) -> usize {
        self.0
    }

    pub fn generation(self) -> u32 {
        generation_of(self)
    }

    pub fn children(self) -> (NodeId, NodeId) {
        children_of(self)
    }

    pub fn parent(self) -> Option<NodeId> {
        parent_of(self)
    }
}

/// Number of nodes in the first `n + 1` generations, `2^(n+1) - 1`.
pub fn tree_size(n: u32) -> Result<usize> {
    if n > MAX_DEPTH {
        return Err(Error::DepthOverflow(n));
    }
    Ok((1usize << (n + 1)) - 1)
}

pub fn generation_of(u: NodeId) -> u32 {
    usize::BITS - 1 - (u.0 + 1).leading_zeros()
}

pub fn children_of(u: NodeId) -> (NodeId, NodeId) {
    (NodeId(2 * u.0 + 1), NodeId(2 * u.0 + 2))
}

pub fn parent_of(u: NodeId) -> Option<NodeId> {
    if u.0 == 0 {
        None
    } else {
        Some(NodeId((u.0 - 1) / 2))
    }
}

/// Index range of generation `m`.
pub fn generation_range(m: u32) -> Range<usize> {
    ((1usize << m) - 1)..((1usize << (m + 1)) - 1)
}

/// Observations `X_u` for every node of a full tree of depth `depth`, stored
/// row-major: node `u` owns `values[u*dim .. (u+1)*dim]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TreeSample {
    depth: u32,
    dim: usize,
    values: Vec<f64>,
}

impl TreeSample {
    pub fn new(depth: u32, dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("dimension must be at least 1".into()));
        }
        let size = tree_size(depth)?;
        if values.len() != size * dim {
            return Err(Error::InvalidArgument(format!(
                "a depth-{depth} tree of dimension {dim} needs {} values, got {}",
                size * dim,
                values.len()
            )));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite observation {bad}")));
        }
        Ok(Self { depth, dim, values })
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `|T_n|`
    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn point(&self, u: usize) -> &[f64] {
        &self.values[u * self.dim..(u + 1) * self.dim]
    }

    pub fn points(&self) -> impl ExactSizeIterator<Item = &[f64]> {
        self.values.chunks_exact(self.dim)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Flat values of generation `m` (row-major).
    pub fn generation(&self, m: u32) -> &[f64] {
        let r = generation_range(m);
        &self.values[r.start * self.dim..r.end * self.dim]
    }

    /// Tree CSV: header `node_index,generation,x1,...,xd`, one row per node.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("node_index,generation");
        for j in 1..=self.dim {
            let _ = write!(out, ",x{j}");
        }
        out.push('\n');
        for (u, p) in self.points().enumerate() {
            let _ = write!(out, "{u},{}", generation_of(NodeId(u)));
            for v in p {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::Parse("empty tree CSV".into()))?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols.len() < 3 || cols[0] != "node_index" || cols[1] != "generation" {
            return Err(Error::Parse(format!("unexpected tree CSV header `{header}`")));
        }
        let dim = cols.len() - 2;
        for (j, c) in cols[2..].iter().enumerate() {
            if *c != format!("x{}", j + 1) {
                return Err(Error::Parse(format!("unexpected column `{c}`")));
            }
        }
        let mut values = Vec::new();
        let mut count = 0usize;
        for (row, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != dim + 2 {
                return Err(Error::Parse(format!("row {row}: expected {} fields", dim + 2)));
            }
            let idx: usize = fields[0]
                .parse()
                .map_err(|_| Error::Parse(format!("row {row}: bad node index `{}`", fields[0])))?;
            if idx != row {
                return Err(Error::Parse(format!("rows must be sorted by index; row {row} has index {idx}")));
            }
            let generation: u32 = fields[1]
                .parse()
                .map_err(|_| Error::Parse(format!("row {row}: bad generation `{}`", fields[1])))?;
            if generation != generation_of(NodeId(idx)) {
                return Err(Error::Parse(format!("row {row}: generation {generation} inconsistent with index")));
            }
            for f in &fields[2..] {
                values.push(f.parse::<f64>().map_err(|_| Error::Parse(format!("row {row}: bad value `{f}`")))?);
            }
            count += 1;
        }
        // count = 2^(n+1) - 1
        if count == 0 || (count + 1).count_ones() != 1 {
            return Err(Error::Parse(format!("{count} rows is not the size of a full binary tree")));
        }
        Self::new((count + 1).trailing_zeros() - 1, dim, values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn sizes() {
        assert_eq!(tree_size(0).unwrap(), 1);
        assert_eq!(tree_size(1).unwrap(), 3);
        assert_eq!(tree_size(10).unwrap(), 2047);
        assert_eq!(tree_size(40).unwrap(), (1usize << 41) - 1);
        assert_eq!(tree_size(41), Err(Error::DepthOverflow(41)));
    }

    #[test]
    fn generations() {
        assert_eq!(generation_of(NodeId(0)), 0);
        assert_eq!(generation_of(NodeId(2)), 1);
        assert_eq!(generation_of(NodeId(7)), 3);
        assert_eq!(generation_of(NodeId(6)), 2);
    }

    #[test]
    fn children() {
        assert_eq!(children_of(NodeId(0)), (NodeId(1), NodeId(2)));
        assert_eq!(children_of(NodeId(1)), (NodeId(3), NodeId(4)));
        assert_eq!(children_of(NodeId(6)), (NodeId(13), NodeId(14)));
        assert_eq!(parent_of(NodeId::ROOT), None);
    }

    #[test]
    fn generation_sizes_sum_to_tree_size() {
        for n in 0..=20u32 {
            let total: usize = (0..=n).map(|m| generation_range(m).len()).sum();
            assert_eq!(total, tree_size(n).unwrap());
            for m in 0..=n {
                assert_eq!(generation_range(m).len(), 1 << m);
            }
        }
    }

    #[test]
    fn sample_rejects_wrong_length() {
        assert!(TreeSample::new(1, 1, vec![0.0; 2]).is_err());
        assert!(TreeSample::new(1, 2, vec![0.0; 6]).is_ok());
        assert!(TreeSample::new(0, 0, vec![]).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let s = TreeSample::new(2, 2, (0..14).map(|i| i as f64 * 0.1).collect()).unwrap();
        let text = s.to_csv();
        assert!(text.starts_with("node_index,generation,x1,x2\n0,0,0,0.1\n"));
        assert_eq!(TreeSample::from_csv(&text).unwrap(), s);
    }

    #[test]
    fn csv_rejects_partial_tree() {
        let text = "node_index,generation,x1\n0,0,0.5\n1,1,0.2\n";
        assert!(TreeSample::from_csv(text).is_err());
    }

    proptest! {
        #[test]
        fn parent_inverts_children(i in 0usize..(1 << 21)) {
            let (l, r) = children_of(NodeId(i));
            prop_assert_eq!(parent_of(l), Some(NodeId(i)));
            prop_assert_eq!(parent_of(r), Some(NodeId(i)));
            prop_assert_eq!(generation_of(l), generation_of(NodeId(i)) + 1);
            prop_assert_eq!(generation_of(r), generation_of(NodeId(i)) + 1);
            if i > 0 {
                let p = parent_of(NodeId(i)).unwrap();
                let (a, b) = children_of(p);
                prop_assert!(a == NodeId(i) || b == NodeId(i));
            }
        }

        #[test]
        fn generation_bounds(i in 0usize..(1 << 30)) {
            let m = generation_of(NodeId(i));
            prop_assert!((1usize << m) - 1 <= i && i < (1usize << (m + 1)) - 1);
        }
    }
}
