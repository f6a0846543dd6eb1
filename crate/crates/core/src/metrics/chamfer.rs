//! Squared Chamfer distance with a kd-tree nearest-neighbour search.

use super::MetricsError;

/// Static kd-tree over `D`-dimensional points (median splits, cycling axes).
#[derive(Debug, Clone)]
pub struct KdTree<'a, const D: usize> {
    points: &'a [[f64; D]],
    /// Point indices in tree order; node `[lo, hi)` splits at its midpoint.
    order: Vec<usize>,
}

#[inline]
fn dist_sq<const D: usize>(a: &[f64; D], b: &[f64; D]) -> f64 {
    let mut s = 0.0;
    for i in 0..D {
        let d = a[i] - b[i];
        s += d * d;
    }
    s
}

impl<'a, const D: usize> KdTree<'a, D> {
    pub fn new(points: &'a [[f64; D]]) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        Self::build(points, &mut order, 0);
        KdTree { points, order }
    }

    fn build(points: &[[f64; D]], idx: &mut [usize], depth: usize) {
        if idx.len() <= 1 {
            return;
        }
        let axis = depth % D;
        let mid = idx.len() / 2;
        idx.select_nth_unstable_by(mid, |&a, &b| {
            points[a][axis].total_cmp(&points[b][axis]).then(a.cmp(&b))
        });
        let (left, right) = idx.split_at_mut(mid);
        Self::build(points, left, depth + 1);
        Self::build(points, &mut right[1..], depth + 1);
    }

    /// Index and squared distance of the nearest point (lowest index on ties).
    pub fn nearest(&self, q: &[f64; D]) -> Option<(usize, f64)> {
        if self.order.is_empty() {
            return None;
        }
        let mut best = (usize::MAX, f64::INFINITY);
        self.search(q, 0, self.order.len(), 0, &mut best);
        Some(best)
    }

    fn search(&self, q: &[f64; D], lo: usize, hi: usize, depth: usize, best: &mut (usize, f64)) {
        if lo >= hi {
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let i = self.order[mid];
        let p = &self.points[i];
        let d = dist_sq(q, p);
        if d < best.1 || (d == best.1 && i < best.0) {
            *best = (i, d);
        }
        let axis = depth % D;
        let delta = q[axis] - p[axis];
        let (near, far) = if delta <= 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.search(q, near.0, near.1, depth + 1, best);
        // `<=` keeps equal-distance candidates reachable for the tie rule
        if delta * delta <= best.1 {
            self.search(q, far.0, far.1, depth + 1, best);
        }
    }
}

fn check<const D: usize>(a: &[[f64; D]], b: &[[f64; D]]) -> Result<(), MetricsError> {
    if a.is_empty() || b.is_empty() {
        return Err(MetricsError::Empty);
    }
    Ok(())
}

fn one_way<const D: usize>(from: &[[f64; D]], tree: &KdTree<'_, D>) -> f64 {
    let s: f64 = from
        .iter()
        .map(|p| tree.nearest(p).expect("tree is non-empty").1)
        .sum();
    s / from.len() as f64
}

/// `(1/|A|)Σ_a min_b ‖a−b‖² + (1/|B|)Σ_b min_a ‖b−a‖²`.
pub fn chamfer_sq<const D: usize>(a: &[[f64; D]], b: &[[f64; D]]) -> Result<f64, MetricsError> {
    check(a, b)?;
    let ta = KdTree::new(a);
    let tb = KdTree::new(b);
    Ok(one_way(a, &tb) + one_way(b, &ta))
}

/// O(|A|·|B|) reference implementation of [`chamfer_sq`].
pub fn chamfer_sq_brute<const D: usize>(a: &[[f64; D]], b: &[[f64; D]]) -> Result<f64, MetricsError> {
    check(a, b)?;
    let way = |from: &[[f64; D]], to: &[[f64; D]]| {
        let s: f64 = from
            .iter()
            .map(|p| to.iter().map(|q| dist_sq(p, q)).fold(f64::INFINITY, f64::min))
            .sum();
        s / from.len() as f64
    };
    Ok(way(a, b) + way(b, a))
}
