//! Exact nearest-neighbor queries over small point sets.
//!
//! Two strategies return identical answers: an exhaustive scan and a
//! uniform-grid index. Distances are squared Euclidean computed in `f64`
//! with a fixed operation order, and ties resolve to the lowest index, so
//! the grid is a pure accelerator.

use ndarray::ArrayView2;

use crate::scalar::Scalar;

/// Read access to a list of 3D points.
pub trait PointSet {
    fn count(&self) -> usize;
    fn point(&self, i: usize) -> [f64; 3];
}

impl PointSet for [[f32; 3]] {
    fn count(&self) -> usize {
        self.len()
    }
    #[inline]
    fn point(&self, i: usize) -> [f64; 3] {
        let p = self[i];
        [p[0] as f64, p[1] as f64, p[2] as f64]
    }
}

impl<T: Scalar> PointSet for ArrayView2<'_, T> {
    fn count(&self) -> usize {
        self.nrows()
    }
    #[inline]
    fn point(&self, i: usize) -> [f64; 3] {
        [
            self[[i, 0]].to_f64(),
            self[[i, 1]].to_f64(),
            self[[i, 2]].to_f64(),
        ]
    }
}

#[inline]
pub fn sq_dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// Nearest neighbor: index and squared distance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub sq_dist: f64,
}

impl Neighbor {
    #[inline]
    fn beats(&self, other: &Option<Neighbor>) -> bool {
        match other {
            None => true,
            Some(o) => self.sq_dist < o.sq_dist || (self.sq_dist == o.sq_dist && self.index < o.index),
        }
    }

    pub fn dist(&self) -> f64 {
        self.sq_dist.sqrt()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Strategy {
    Brute,
    Grid,
    /// Grid above a small size threshold, brute force below it.
    #[default]
    Auto,
}

const AUTO_GRID_THRESHOLD: usize = 64;

pub fn nearest_brute<P: PointSet + ?Sized>(set: &P, query: [f64; 3], exclude: Option<usize>) -> Option<Neighbor> {
    let mut best = None;
    for j in 0..set.count() {
        if Some(j) == exclude {
            continue;
        }
        let cand = Neighbor {
            index: j,
            sq_dist: sq_dist(query, set.point(j)),
        };
        if cand.beats(&best) {
            best = Some(cand);
        }
    }
    best
}

/// Uniform grid over a point set's bounding box.
pub struct GridIndex<'a, P: PointSet + ?Sized> {
    set: &'a P,
    origin: [f64; 3],
    cell: f64,
    dims: [usize; 3],
    // CSR layout: cell c holds entries[starts[c]..starts[c + 1]], ascending.
    starts: Vec<usize>,
    entries: Vec<usize>,
}

impl<'a, P: PointSet + ?Sized> GridIndex<'a, P> {
    pub fn build(set: &'a P) -> Self {
        let n = set.count();
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for i in 0..n {
            let p = set.point(i);
            for k in 0..3 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        if n == 0 {
            lo = [0.0; 3];
            hi = [0.0; 3];
        }
        let extent = (0..3).map(|k| hi[k] - lo[k]).fold(0.0f64, f64::max);
        // Roughly two points per occupied cell for surface-like sets.
        let target_cells = (n as f64 / 2.0).max(1.0);
        let mut cell = if extent > 0.0 {
            extent / target_cells.cbrt().max(1.0)
        } else {
            1.0
        };
        if !(cell > 0.0) || !cell.is_finite() {
            cell = 1.0;
        }
        let dims = [0, 1, 2].map(|k| (((hi[k] - lo[k]) / cell).floor() as usize + 1).min(256));
        let mut grid = Self {
            set,
            origin: lo,
            cell,
            dims,
            starts: Vec::new(),
            entries: Vec::new(),
        };
        let ncell = dims[0] * dims[1] * dims[2];
        let mut counts = vec![0usize; ncell + 1];
        let cells: Vec<usize> = (0..n)
            .map(|i| {
                let c = grid.flat(grid.cell_of(set.point(i)));
                counts[c + 1] += 1;
                c
            })
            .collect();
        for c in 0..ncell {
            counts[c + 1] += counts[c];
        }
        let mut fill = counts.clone();
        let mut entries = vec![0usize; n];
        for (i, &c) in cells.iter().enumerate() {
            entries[fill[c]] = i;
            fill[c] += 1;
        }
        grid.starts = counts;
        grid.entries = entries;
        grid
    }

    fn cell_of(&self, p: [f64; 3]) -> [usize; 3] {
        [0, 1, 2].map(|k| {
            let v = ((p[k] - self.origin[k]) / self.cell).floor();
            if v <= 0.0 {
                0
            } else {
                (v as usize).min(self.dims[k] - 1)
            }
        })
    }

    #[inline]
    fn flat(&self, c: [usize; 3]) -> usize {
        (c[0] * self.dims[1] + c[1]) * self.dims[2] + c[2]
    }

    pub fn nearest(&self, query: [f64; 3], exclude: Option<usize>) -> Option<Neighbor> {
        let center = self.cell_of(query);
        let max_ring = self.dims.iter().copied().max().unwrap_or(1);
        let mut best: Option<Neighbor> = None;
        for ring in 0..=max_ring {
            self.visit_ring(center, ring, |j| {
                if Some(j) == exclude {
                    return;
                }
                let cand = Neighbor {
                    index: j,
                    sq_dist: sq_dist(query, self.set.point(j)),
                };
                if cand.beats(&best) {
                    best = Some(cand);
                }
            });
            if let Some(b) = best {
                // Anything beyond ring r is at least (r - 1) cells away once
                // cell-assignment rounding is allowed for.
                let bound = (ring.saturating_sub(1)) as f64 * self.cell;
                if ring >= 1 && b.sq_dist < bound * bound {
                    break;
                }
            }
        }
        best
    }

    fn visit_ring(&self, c: [usize; 3], ring: usize, mut f: impl FnMut(usize)) {
        let r = ring as isize;
        let lo = |k: usize| (c[k] as isize - r).max(0);
        let hi = |k: usize| (c[k] as isize + r).min(self.dims[k] as isize - 1);
        for x in lo(0)..=hi(0) {
            for y in lo(1)..=hi(1) {
                for z in lo(2)..=hi(2) {
                    let dx = (x - c[0] as isize).abs();
                    let dy = (y - c[1] as isize).abs();
                    let dz = (z - c[2] as isize).abs();
                    if dx.max(dy).max(dz) != r {
                        continue;
                    }
                    let cell = self.flat([x as usize, y as usize, z as usize]);
                    for &j in &self.entries[self.starts[cell]..self.starts[cell + 1]] {
                        f(j);
                    }
                }
            }
        }
    }
}

/// For each point of `set`, its nearest other point.
pub fn self_nearest<P: PointSet + ?Sized>(set: &P, strategy: Strategy) -> Vec<Option<Neighbor>> {
    let n = set.count();
    match resolve(strategy, n) {
        Strategy::Grid => {
            let grid = GridIndex::build(set);
            (0..n).map(|i| grid.nearest(set.point(i), Some(i))).collect()
        }
        _ => (0..n).map(|i| nearest_brute(set, set.point(i), Some(i))).collect(),
    }
}

/// For each point of `queries`, its nearest point in `targets`.
pub fn cross_nearest<Q, P>(queries: &Q, targets: &P, strategy: Strategy) -> Vec<Option<Neighbor>>
where
    Q: PointSet + ?Sized,
    P: PointSet + ?Sized,
{
    let n = queries.count();
    match resolve(strategy, targets.count()) {
        Strategy::Grid => {
            let grid = GridIndex::build(targets);
            (0..n).map(|i| grid.nearest(queries.point(i), None)).collect()
        }
        _ => (0..n).map(|i| nearest_brute(targets, queries.point(i), None)).collect(),
    }
}

/// The `k` nearest other points of point `i`, closest first.
pub fn k_nearest<P: PointSet + ?Sized>(set: &P, i: usize, k: usize) -> Vec<Neighbor> {
    let q = set.point(i);
    let mut all: Vec<Neighbor> = (0..set.count())
        .filter(|&j| j != i)
        .map(|j| Neighbor {
            index: j,
            sq_dist: sq_dist(q, set.point(j)),
        })
        .collect();
    let key = |a: &Neighbor, b: &Neighbor| a.sq_dist.total_cmp(&b.sq_dist).then(a.index.cmp(&b.index));
    if all.len() > k {
        all.select_nth_unstable_by(k, key);
        all.truncate(k);
    }
    all.sort_by(key);
    all
}

fn resolve(strategy: Strategy, n: usize) -> Strategy {
    match strategy {
        Strategy::Auto if n > AUTO_GRID_THRESHOLD => Strategy::Grid,
        Strategy::Auto => Strategy::Brute,
        s => s,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use super::Strategy;

    #[test]
    fn ties_resolve_to_lowest_index() {
        let pts: Vec<[f32; 3]> = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        let nb = nearest_brute(pts.as_slice(), pts.point(0), Some(0)).unwrap();
        assert_eq!(nb.index, 1);
        let grid = GridIndex::build(pts.as_slice());
        assert_eq!(grid.nearest(pts.point(0), Some(0)).unwrap().index, 1);
    }

    #[test]
    fn k_nearest_orders_by_distance() {
        let pts: Vec<[f32; 3]> = (0..10).map(|i| [i as f32, 0.0, 0.0]).collect();
        let nb = k_nearest(pts.as_slice(), 5, 4);
        let idx: Vec<usize> = nb.iter().map(|n| n.index).collect();
        assert_eq!(idx, vec![4, 6, 3, 7]);
    }

    #[test]
    fn coincident_points() {
        let pts: Vec<[f32; 3]> = vec![[0.5; 3]; 5];
        let a = self_nearest(pts.as_slice(), Strategy::Brute);
        let b = self_nearest(pts.as_slice(), Strategy::Grid);
        assert_eq!(a, b);
        assert_eq!(a[0].unwrap().index, 1);
        assert_eq!(a[1].unwrap().index, 0);
    }

    proptest! {
        #[test]
        fn grid_matches_brute(
            raw in prop::collection::vec((-3.0f32..3.0, -3.0f32..3.0, -0.1f32..0.1), 2..300),
            q in prop::collection::vec((-4.0f32..4.0, -4.0f32..4.0, -4.0f32..4.0), 1..20),
        ) {
            // Quantized coordinates provoke exact ties.
            let pts: Vec<[f32; 3]> = raw.iter().map(|&(x, y, z)| [(x * 4.0).round() / 4.0, y, z]).collect();
            let queries: Vec<[f32; 3]> = q.iter().map(|&(x, y, z)| [x, y, z]).collect();
            prop_assert_eq!(
                self_nearest(pts.as_slice(), Strategy::Brute),
                self_nearest(pts.as_slice(), Strategy::Grid)
            );
            prop_assert_eq!(
                cross_nearest(queries.as_slice(), pts.as_slice(), Strategy::Brute),
                cross_nearest(queries.as_slice(), pts.as_slice(), Strategy::Grid)
            );
        }
    }
}
