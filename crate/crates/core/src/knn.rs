// SPDX-License-Identifier: Apache-2.0

//! Exact k-nearest-neighbor search over standardized parameter coordinates.
//!
//! Distances are Euclidean after each axis is centered and scaled by the
//! sample mean and (population) standard deviation. Ties in distance are
//! broken by row index, so the neighbor set of any query is unique.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(points: &[f64], dim: usize) -> Self {
        let n = (points.len() / dim) as f64;
        let mut mean = vec![0.0; dim];
        for row in points.chunks_exact(dim) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for row in points.chunks_exact(dim) {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let scale = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 0.0 && sd.is_finite() {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, scale }
    }

    pub fn apply(&self, point: &[f64], out: &mut [f64]) {
        for (((o, p), m), s) in out.iter_mut().zip(point).zip(&self.mean).zip(&self.scale) {
            *o = (p - m) / s;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    dist2: f64,
    index: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist2
            .total_cmp(&other.dist2)
            .then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Static kd-tree over raw parameter rows.
#[derive(Debug, Clone)]
pub struct NeighborIndex {
    dim: usize,
    standardizer: Standardizer,
    // standardized coordinates, row-major
    scaled: Vec<f64>,
    // implicit balanced tree: node of range [lo, hi) sits at (lo + hi) / 2
    order: Vec<usize>,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl NeighborIndex {
    pub fn build(points: &[f64], dim: usize) -> Result<Self> {
        if dim == 0 || points.is_empty() || points.len() % dim != 0 {
            return Err(Error::invalid("neighbor index needs a non-empty row-major point table"));
        }
        if points.iter().any(|p| !p.is_finite()) {
            return Err(Error::invalid("neighbor index points must be finite"));
        }
        let n = points.len() / dim;
        let standardizer = Standardizer::fit(points, dim);
        let mut scaled = vec![0.0; points.len()];
        for (row, out) in points.chunks_exact(dim).zip(scaled.chunks_exact_mut(dim)) {
            standardizer.apply(row, out);
        }
        let mut lower = vec![f64::INFINITY; dim];
        let mut upper = vec![f64::NEG_INFINITY; dim];
        for row in points.chunks_exact(dim) {
            for a in 0..dim {
                lower[a] = lower[a].min(row[a]);
                upper[a] = upper[a].max(row[a]);
            }
        }
        let mut order: Vec<usize> = (0..n).collect();
        build_range(&scaled, dim, &mut order, 0);
        Ok(Self {
            dim,
            standardizer,
            scaled,
            order,
            lower,
            upper,
        })
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn standardizer(&self) -> &Standardizer {
        &self.standardizer
    }

    /// Whether `theta` lies inside the axis-aligned bounding box of the rows.
    pub fn contains(&self, theta: &[f64]) -> bool {
        theta
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(t, (lo, hi))| *t >= *lo && *t <= *hi)
    }

    /// Row indices of the `k` nearest rows, nearest first.
    pub fn nearest(&self, theta: &[f64], k: usize) -> Vec<usize> {
        debug_assert_eq!(theta.len(), self.dim);
        let k = k.min(self.len());
        if k == 0 {
            return Vec::new();
        }
        let mut query = vec![0.0; self.dim];
        self.standardizer.apply(theta, &mut query);
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.search(&query, k, 0, self.order.len(), 0, &mut heap);
        let mut found = heap.into_vec();
        found.sort_unstable();
        found.into_iter().map(|c| c.index).collect()
    }

    /// Standardized coordinates of row `index`.
    pub fn scaled_row(&self, index: usize) -> &[f64] {
        &self.scaled[index * self.dim..(index + 1) * self.dim]
    }

    fn row(&self, index: usize) -> &[f64] {
        self.scaled_row(index)
    }

    fn search(
        &self,
        query: &[f64],
        k: usize,
        lo: usize,
        hi: usize,
        depth: usize,
        heap: &mut BinaryHeap<Candidate>,
    ) {
        if lo >= hi {
            return;
        }
        if hi - lo <= LEAF_SIZE {
            for &index in &self.order[lo..hi] {
                self.offer(query, index, k, heap);
            }
            return;
        }
        let mid = (lo + hi) / 2;
        let index = self.order[mid];
        let axis = depth % self.dim;
        let diff = query[axis] - self.row(index)[axis];
        let (near, far) = if diff < 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.search(query, k, near.0, near.1, depth + 1, heap);
        self.offer(query, index, k, heap);
        let worst = heap.peek().map_or(f64::INFINITY, |c| c.dist2);
        if heap.len() < k || diff * diff <= worst {
            self.search(query, k, far.0, far.1, depth + 1, heap);
        }
    }

    #[inline]
    fn offer(&self, query: &[f64], index: usize, k: usize, heap: &mut BinaryHeap<Candidate>) {
        let dist2: f64 = self
            .row(index)
            .iter()
            .zip(query)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let cand = Candidate { dist2, index };
        if heap.len() < k {
            heap.push(cand);
        } else if let Some(top) = heap.peek() {
            if cand < *top {
                heap.pop();
                heap.push(cand);
            }
        }
    }
}

const LEAF_SIZE: usize = 16;

fn build_range(scaled: &[f64], dim: usize, order: &mut [usize], depth: usize) {
    if order.len() <= LEAF_SIZE {
        return;
    }
    let axis = depth % dim;
    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |&a, &b| {
        scaled[a * dim + axis]
            .total_cmp(&scaled[b * dim + axis])
            .then(a.cmp(&b))
    });
    let (left, rest) = order.split_at_mut(mid);
    build_range(scaled, dim, left, depth + 1);
    build_range(scaled, dim, &mut rest[1..], depth + 1);
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_force(points: &[f64], dim: usize, query: &[f64], k: usize) -> Vec<usize> {
        let st = Standardizer::fit(points, dim);
        let mut q = vec![0.0; dim];
        st.apply(query, &mut q);
        let mut all: Vec<Candidate> = points
            .chunks_exact(dim)
            .enumerate()
            .map(|(index, row)| {
                let mut s = vec![0.0; dim];
                st.apply(row, &mut s);
                let dist2 = s.iter().zip(&q).map(|(a, b)| (a - b) * (a - b)).sum();
                Candidate { dist2, index }
            })
            .collect();
        all.sort_unstable();
        all.truncate(k);
        all.into_iter().map(|c| c.index).collect()
    }

    #[test]
    fn standardizer_handles_constant_axis() {
        let st = Standardizer::fit(&[1.0, 5.0, 3.0, 5.0], 2);
        assert_eq!(st.mean, vec![2.0, 5.0]);
        assert_eq!(st.scale, vec![1.0, 1.0]);
    }

    #[test]
    fn ties_broken_by_index() {
        let pts = vec![1.0, -1.0, 1.0, -1.0, 0.0];
        let idx = NeighborIndex::build(&pts, 1).unwrap();
        assert_eq!(idx.nearest(&[0.0], 3), vec![4, 0, 1]);
        assert_eq!(idx.nearest(&[0.0], 10).len(), 5);
    }

    #[test]
    fn bounding_box() {
        let idx = NeighborIndex::build(&[0.0, 0.0, 1.0, 2.0], 2).unwrap();
        assert!(idx.contains(&[0.5, 1.0]));
        assert!(!idx.contains(&[0.5, 2.5]));
    }

    proptest! {
        #[test]
        fn matches_brute_force(
            dim in 1usize..4,
            raw in prop::collection::vec(-5.0f64..5.0, 12..400),
            query in prop::collection::vec(-6.0f64..6.0, 3),
            k in 1usize..40,
        ) {
            let n = raw.len() / dim;
            let pts: Vec<f64> = raw[..n * dim].iter().map(|v| (v * 4.0).round() / 4.0).collect();
            let idx = NeighborIndex::build(&pts, dim).unwrap();
            let q = &query[..dim];
            prop_assert_eq!(idx.nearest(q, k), brute_force(&pts, dim, q, k.min(n)));
        }
    }
}
