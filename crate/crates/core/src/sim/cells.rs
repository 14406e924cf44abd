//! Cell list over the torus for finite-range neighbor queries.
//!
//! The box is divided into at least three cells per axis, each no smaller
//! than the query cutoff, so scanning the 3^d block around a position visits
//! every point within the cutoff exactly once.

use crate::geometry::{Metric, Point};

#[derive(Clone, Debug)]
pub struct CellGrid {
    dim: usize,
    edge: f64,
    per_axis: usize,
    cell_len: f64,
    members: Vec<Vec<u32>>,
    cell_of: Vec<u32>,
}

impl CellGrid {
    /// `cell_size` is a lower bound on the cell edge; the grid uses
    /// `floor(edge / cell_size)` cells per axis (at least 3 required).
    pub fn new(dim: usize, edge: f64, cell_size: f64) -> Option<Self> {
        let per_axis = (edge / cell_size).floor() as usize;
        if per_axis < 3 {
            return None;
        }
        let cells = per_axis.pow(dim as u32);
        Some(CellGrid {
            dim,
            edge,
            per_axis,
            cell_len: edge / per_axis as f64,
            members: vec![Vec::new(); cells],
            cell_of: Vec::new(),
        })
    }

    pub fn cell_len(&self) -> f64 {
        self.cell_len
    }

    fn flat_cell(&self, p: &Point) -> usize {
        let mut flat = 0usize;
        for a in 0..self.dim {
            let mut i = (p[a] / self.cell_len) as usize;
            if i >= self.per_axis {
                i = self.per_axis - 1;
            }
            flat = flat * self.per_axis + i;
        }
        flat
    }

    /// Registers point `idx` (must equal the current point count).
    pub fn insert(&mut self, idx: usize, p: &Point) {
        debug_assert_eq!(idx, self.cell_of.len());
        let c = self.flat_cell(p);
        self.members[c].push(idx as u32);
        self.cell_of.push(c as u32);
    }

    /// Mirrors a `swap_remove` on the point store: removes `idx` and renames
    /// the last point to `idx`.
    pub fn swap_remove(&mut self, idx: usize) {
        let last = self.cell_of.len() - 1;
        let cell = self.cell_of[idx] as usize;
        let pos = self.members[cell]
            .iter()
            .position(|&m| m == idx as u32)
            .expect("cell membership out of sync");
        self.members[cell].swap_remove(pos);
        if idx != last {
            let last_cell = self.cell_of[last] as usize;
            let pos = self.members[last_cell]
                .iter()
                .position(|&m| m == last as u32)
                .expect("cell membership out of sync");
            self.members[last_cell][pos] = idx as u32;
        }
        self.cell_of.swap_remove(idx);
    }

    /// Collects `(index, distance)` of points strictly within `cutoff` of
    /// `x`, excluding `exclude`. Requires `cutoff <= cell_len`.
    pub fn neighbors_within(
        &self,
        x: &Point,
        cutoff: f64,
        points: &[Point],
        exclude: Option<usize>,
        out: &mut Vec<(u32, f64)>,
    ) {
        debug_assert!(cutoff <= self.cell_len * (1.0 + 1e-12));
        out.clear();
        let metric = Metric::Torus { edge: self.edge };
        let mut base = [0isize; 3];
        for a in 0..self.dim {
            let mut i = (x[a] / self.cell_len) as isize;
            if i >= self.per_axis as isize {
                i = self.per_axis as isize - 1;
            }
            base[a] = i;
        }
        let offsets: &[isize] = &[-1, 0, 1];
        let mut visit = |cell: usize| {
            for &m in &self.members[cell] {
                if exclude == Some(m as usize) {
                    continue;
                }
                let d = metric.distance(self.dim, x, &points[m as usize]);
                if d < cutoff {
                    out.push((m, d));
                }
            }
        };
        match self.dim {
            1 => {
                for &dx in offsets {
                    visit(self.wrap_axis(base[0] + dx));
                }
            }
            2 => {
                for &dx in offsets {
                    let i = self.wrap_axis(base[0] + dx);
                    for &dy in offsets {
                        let j = self.wrap_axis(base[1] + dy);
                        visit(i * self.per_axis + j);
                    }
                }
            }
            _ => {
                for &dx in offsets {
                    let i = self.wrap_axis(base[0] + dx);
                    for &dy in offsets {
                        let j = self.wrap_axis(base[1] + dy);
                        for &dz in offsets {
                            let k = self.wrap_axis(base[2] + dz);
                            visit((i * self.per_axis + j) * self.per_axis + k);
                        }
                    }
                }
            }
        }
    }

    fn wrap_axis(&self, i: isize) -> usize {
        let n = self.per_axis as isize;
        (((i % n) + n) % n) as usize
    }
}
