//! Uniform tensor grids on axis-aligned boxes `[0, L_1] x ... x [0, L_d]`.
//!
//! Nodes are numbered in row-major order: the last active axis varies
//! fastest. Boundary nodes carry one outward normal each; a node that is
//! extremal on several axes (an edge or corner node) takes the normal of the
//! lowest-index axis on which it is extremal.
//!
//! Quadrature is the tensor trapezoid rule. Every node owns a dual cell whose
//! length along an axis is the spacing, halved at the two extremal indices.
//! The volume weight of a node is the product of its dual lengths; the surface
//! weight of a boundary node sums, over each face the node lies on, the
//! product of the dual lengths along that face.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};

pub const MAX_DIM: usize = 3;

const NONE: usize = usize::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Low,
    High,
}

impl Side {
    pub fn sign(self) -> f64 {
        match self {
            Side::Low => -1.0,
            Side::High => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Normal {
    pub axis: usize,
    pub side: Side,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundaryNode {
    pub node: usize,
    pub normal: Normal,
}

/// A nearest-neighbour pair `p < q` along `axis`.
///
/// `geometry` is the dual-face area divided by the spacing along `axis`, so
/// that the flux coefficient of the edge is `gamma_face * geometry`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub p: usize,
    pub q: usize,
    pub axis: usize,
    pub geometry: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    dim: usize,
    extents: [f64; MAX_DIM],
    counts: [usize; MAX_DIM],
    spacing: [f64; MAX_DIM],
    strides: [usize; MAX_DIM],
    boundary: Vec<BoundaryNode>,
    boundary_slot: Vec<usize>,
    interior: Vec<usize>,
    interior_slot: Vec<usize>,
    volume_weights: Vec<f64>,
    surface_weights: Vec<f64>,
}

impl Grid {
    /// Builds a grid with `counts[a]` nodes spread evenly over `[0, extents[a]]`.
    pub fn new(dim: usize, extents: &[f64], counts: &[usize]) -> Result<Grid> {
        if !(1..=MAX_DIM).contains(&dim) {
            return Err(Error::InvalidGrid(format!("dimension {dim} not in 1..=3")));
        }
        if extents.len() != dim || counts.len() != dim {
            return Err(Error::InvalidGrid(format!(
                "expected {dim} extents and counts, got {} and {}",
                extents.len(),
                counts.len()
            )));
        }
        let mut ext = [0.0; MAX_DIM];
        let mut cnt = [1usize; MAX_DIM];
        let mut h = [0.0; MAX_DIM];
        for a in 0..dim {
            if !(extents[a] > 0.0) || !extents[a].is_finite() {
                return Err(Error::InvalidGrid(format!(
                    "extent {} on axis {a} must be positive",
                    extents[a]
                )));
            }
            if counts[a] < 3 {
                return Err(Error::InvalidGrid(format!(
                    "node count {} on axis {a} must be at least 3",
                    counts[a]
                )));
            }
            ext[a] = extents[a];
            cnt[a] = counts[a];
            h[a] = extents[a] / (counts[a] - 1) as f64;
        }
        let mut strides = [1usize; MAX_DIM];
        for a in (0..MAX_DIM - 1).rev() {
            strides[a] = strides[a + 1] * cnt[a + 1];
        }
        let total = cnt.iter().product::<usize>();

        let mut grid = Grid {
            dim,
            extents: ext,
            counts: cnt,
            spacing: h,
            strides,
            boundary: Vec::new(),
            boundary_slot: alloc::vec![NONE; total],
            interior: Vec::new(),
            interior_slot: alloc::vec![NONE; total],
            volume_weights: Vec::with_capacity(total),
            surface_weights: Vec::new(),
        };
        for node in 0..total {
            let idx = grid.multi_index(node);
            let mut w = 1.0;
            for a in 0..dim {
                w *= grid.dual_length(a, idx[a]);
            }
            grid.volume_weights.push(w);
            match grid.extremal_normal(&idx) {
                Some(normal) => {
                    grid.boundary_slot[node] = grid.boundary.len();
                    grid.boundary.push(BoundaryNode { node, normal });
                    let mut s = 0.0;
                    for a in 0..dim {
                        if idx[a] == 0 || idx[a] == cnt[a] - 1 {
                            let mut face = 1.0;
                            for b in (0..dim).filter(|b| *b != a) {
                                face *= grid.dual_length(b, idx[b]);
                            }
                            // a node is extremal on at most one side of an axis (counts >= 3)
                            s += face;
                        }
                    }
                    grid.surface_weights.push(s);
                }
                None => {
                    grid.interior_slot[node] = grid.interior.len();
                    grid.interior.push(node);
                }
            }
        }
        Ok(grid)
    }

    /// Cube `[0, extent]^dim` with `count` nodes per axis.
    pub fn cube(dim: usize, extent: f64, count: usize) -> Result<Grid> {
        Grid::new(dim, &alloc::vec![extent; dim], &alloc::vec![count; dim])
    }

    fn extremal_normal(&self, idx: &[usize; MAX_DIM]) -> Option<Normal> {
        (0..self.dim).find_map(|a| {
            if idx[a] == 0 {
                Some(Normal { axis: a, side: Side::Low })
            } else if idx[a] == self.counts[a] - 1 {
                Some(Normal { axis: a, side: Side::High })
            } else {
                None
            }
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn extents(&self) -> &[f64] {
        &self.extents[..self.dim]
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts[..self.dim]
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing[..self.dim]
    }

    pub fn len(&self) -> usize {
        self.volume_weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.volume_weights.is_empty()
    }

    pub fn multi_index(&self, node: usize) -> [usize; MAX_DIM] {
        let mut idx = [0; MAX_DIM];
        let mut rest = node;
        for a in 0..MAX_DIM {
            idx[a] = rest / self.strides[a];
            rest %= self.strides[a];
        }
        idx
    }

    pub fn node(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }

    pub fn stride(&self, axis: usize) -> usize {
        self.strides[axis]
    }

    /// Coordinates of a node; unused axes are zero.
    pub fn point(&self, node: usize) -> [f64; MAX_DIM] {
        let idx = self.multi_index(node);
        let mut x = [0.0; MAX_DIM];
        for a in 0..self.dim {
            x[a] = if idx[a] == self.counts[a] - 1 {
                self.extents[a]
            } else {
                idx[a] as f64 * self.spacing[a]
            };
        }
        x
    }

    pub fn dual_length(&self, axis: usize, index: usize) -> f64 {
        if index == 0 || index == self.counts[axis] - 1 {
            0.5 * self.spacing[axis]
        } else {
            self.spacing[axis]
        }
    }

    pub fn boundary_nodes(&self) -> &[BoundaryNode] {
        &self.boundary
    }

    pub fn boundary_len(&self) -> usize {
        self.boundary.len()
    }

    pub fn boundary_slot(&self, node: usize) -> Option<usize> {
        match self.boundary_slot[node] {
            NONE => None,
            s => Some(s),
        }
    }

    pub fn is_boundary(&self, node: usize) -> bool {
        self.boundary_slot[node] != NONE
    }

    pub fn interior_nodes(&self) -> &[usize] {
        &self.interior
    }

    pub fn interior_slot(&self, node: usize) -> Option<usize> {
        match self.interior_slot[node] {
            NONE => None,
            s => Some(s),
        }
    }

    /// Trapezoid volume weights, one per node.
    pub fn volume_weights(&self) -> &[f64] {
        &self.volume_weights
    }

    /// Trapezoid surface weights, one per boundary node (boundary order).
    pub fn surface_weights(&self) -> &[f64] {
        &self.surface_weights
    }

    pub fn measure(&self) -> f64 {
        self.extents().iter().product()
    }

    pub fn surface_measure(&self) -> f64 {
        match self.dim {
            1 => 2.0,
            _ => {
                let e = self.extents();
                (0..self.dim)
                    .map(|a| {
                        2.0 * e
                            .iter()
                            .enumerate()
                            .filter(|(b, _)| *b != a)
                            .map(|(_, v)| *v)
                            .product::<f64>()
                    })
                    .sum()
            }
        }
    }

    /// All nearest-neighbour edges, ordered by `p` then axis.
    pub fn edges(&self) -> Vec<Edge> {
        let mut edges = Vec::with_capacity(self.len() * self.dim);
        for p in 0..self.len() {
            let idx = self.multi_index(p);
            for a in 0..self.dim {
                if idx[a] + 1 < self.counts[a] {
                    let mut area = 1.0;
                    for b in (0..self.dim).filter(|b| *b != a) {
                        area *= self.dual_length(b, idx[b]);
                    }
                    edges.push(Edge {
                        p,
                        q: p + self.strides[a],
                        axis: a,
                        geometry: area / self.spacing[a],
                    });
                }
            }
        }
        edges
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_dimensional_spacing_and_boundary() {
        let g = Grid::new(1, &[1.0], &[11]).unwrap();
        assert!((g.spacing()[0] - 0.1).abs() < 1e-15);
        assert_eq!(g.boundary_len(), 2);
        assert_eq!(g.len(), 11);
        assert_eq!(g.surface_weights(), &[1.0, 1.0]);
    }

    #[test]
    fn boundary_counts() {
        let g = Grid::new(2, &[1.0, 1.0], &[5, 5]).unwrap();
        assert_eq!(g.len(), 25);
        assert_eq!(g.boundary_len(), 16);
        assert_eq!(g.interior_nodes().len(), 9);
        let g = Grid::cube(3, 1.0, 4).unwrap();
        assert_eq!(g.boundary_len(), 56);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(Grid::new(2, &[1.0, 1.0], &[2, 5]).is_err());
        assert!(Grid::new(1, &[0.0], &[5]).is_err());
        assert!(Grid::new(1, &[-1.0], &[5]).is_err());
        assert!(Grid::new(4, &[1.0; 4], &[3; 4]).is_err());
        assert!(Grid::new(2, &[1.0], &[3]).is_err());
    }

    #[test]
    fn corner_normal_uses_lowest_axis() {
        let g = Grid::new(2, &[1.0, 2.0], &[4, 5]).unwrap();
        let corner = g.node(&[3, 0]);
        let b = g.boundary_nodes()[g.boundary_slot(corner).unwrap()];
        assert_eq!(b.normal, Normal { axis: 0, side: Side::High });
        let side = g.node(&[1, 4]);
        let b = g.boundary_nodes()[g.boundary_slot(side).unwrap()];
        assert_eq!(b.normal, Normal { axis: 1, side: Side::High });
    }

    #[test]
    fn weights_sum_to_measures() {
        for g in [
            Grid::new(1, &[2.0], &[7]).unwrap(),
            Grid::new(2, &[1.0, 3.0], &[5, 9]).unwrap(),
            Grid::new(3, &[1.0, 2.0, 0.5], &[4, 5, 3]).unwrap(),
        ] {
            let v: f64 = g.volume_weights().iter().sum();
            let s: f64 = g.surface_weights().iter().sum();
            assert!((v - g.measure()).abs() < 1e-12);
            assert!((s - g.surface_measure()).abs() < 1e-12, "{s} vs {}", g.surface_measure());
        }
    }

    #[test]
    fn last_node_hits_extent_exactly() {
        let g = Grid::new(2, &[0.7, 1.3], &[7, 13]).unwrap();
        let p = g.point(g.len() - 1);
        assert_eq!(p[0], 0.7);
        assert_eq!(p[1], 1.3);
    }
}
