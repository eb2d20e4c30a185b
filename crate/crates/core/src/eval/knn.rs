use ndarray::ArrayView2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floor applied to nearest-neighbour distances before taking logs.
pub const DISTANCE_FLOOR: f64 = 1e-12;
/// Above this many reference points neighbours are found with a k-d tree.
pub const BRUTE_FORCE_MAX: usize = 2000;
const LEAF_SIZE: usize = 16;

/// A kNN divergence estimate and how often the distance floor was needed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnKl {
    pub value: f64,
    /// Points of the first sample whose `rho` or `nu` distance was floored.
    pub floored: usize,
    pub warning: Option<String>,
}

/// Wang-Kulkarni-Verdu estimate of `KL(p || q)` from samples `p` (`n x D`)
/// and `q` (`m x D`):
/// `(D / n) * sum_i ln(nu_k(i) / rho_k(i)) + ln(m / (n - 1))`.
pub fn knn_kl(p: ArrayView2<f64>, q: ArrayView2<f64>, k: usize) -> Result<KnnKl> {
    let (n, dim) = p.dim();
    let m = q.nrows();
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if dim == 0 || q.ncols() != dim {
        return Err(Error::invalid(format!("sample widths differ or are zero ({} vs {})", dim, q.ncols())));
    }
    if n < k + 1 || m < k {
        return Err(Error::invalid(format!("need n >= k + 1 and m >= k (n = {n}, m = {m}, k = {k})")));
    }
    if p.iter().chain(q.iter()).any(|v| !v.is_finite()) {
        return Err(Error::invalid("samples contain non-finite values"));
    }
    let ps = p.as_standard_layout();
    let qs = q.as_standard_layout();
    let (ps, qs) = (ps.as_slice().unwrap(), qs.as_slice().unwrap());
    let rho = kth_distances(ps, ps, dim, k, true);
    let nu = kth_distances(qs, ps, dim, k, false);
    let mut floored = 0;
    let mut sum = 0.0;
    for (r, v) in rho.iter().zip(&nu) {
        if *r < DISTANCE_FLOOR || *v < DISTANCE_FLOOR {
            floored += 1;
        }
        sum += v.max(DISTANCE_FLOOR).ln() - r.max(DISTANCE_FLOOR).ln();
    }
    let value = dim as f64 / n as f64 * sum + (m as f64 / (n - 1) as f64).ln();
    let warning = (floored as f64 > 0.01 * n as f64).then(|| {
        format!("{floored} of {n} points hit the {DISTANCE_FLOOR:e} distance floor (duplicate-heavy data)")
    });
    Ok(KnnKl { value, floored, warning })
}

/// Distance from each query row to its `k`-th nearest row of `data`. With
/// `exclude_self` the query set is `data` itself and row `i` skips itself.
pub(crate) fn kth_distances(data: &[f64], queries: &[f64], dim: usize, k: usize, exclude_self: bool) -> Vec<f64> {
    if data.len() / dim > BRUTE_FORCE_MAX {
        let tree = KdTree::build(data, dim);
        queries
            .par_chunks(dim)
            .enumerate()
            .map(|(i, x)| tree.kth_distance(x, k, exclude_self.then_some(i)))
            .collect()
    } else {
        brute_force(data, queries, dim, k, exclude_self)
    }
}

pub(crate) fn brute_force(data: &[f64], queries: &[f64], dim: usize, k: usize, exclude_self: bool) -> Vec<f64> {
    queries
        .par_chunks(dim)
        .enumerate()
        .map(|(i, x)| {
            let mut best = Best::new(k);
            for (j, y) in data.chunks_exact(dim).enumerate() {
                if exclude_self && i == j {
                    continue;
                }
                best.offer(sq_dist(x, y));
            }
            best.kth().sqrt()
        })
        .collect()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// The `k` smallest squared distances seen so far, ascending.
struct Best {
    k: usize,
    d: Vec<f64>,
}

impl Best {
    fn new(k: usize) -> Self {
        Best { k, d: Vec::with_capacity(k + 1) }
    }

    fn bound(&self) -> f64 {
        if self.d.len() < self.k {
            f64::INFINITY
        } else {
            self.d[self.k - 1]
        }
    }

    fn offer(&mut self, v: f64) {
        if v >= self.bound() {
            return;
        }
        let pos = self.d.partition_point(|&x| x <= v);
        self.d.insert(pos, v);
        self.d.truncate(self.k);
    }

    fn kth(&self) -> f64 {
        self.bound()
    }
}

enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: Box<Node>, right: Box<Node> },
}

struct KdTree<'a> {
    data: &'a [f64],
    dim: usize,
    order: Vec<usize>,
    root: Node,
}

impl<'a> KdTree<'a> {
    fn build(data: &'a [f64], dim: usize) -> Self {
        let mut order: Vec<usize> = (0..data.len() / dim).collect();
        let n = order.len();
        let root = Self::build_node(data, dim, &mut order, 0, n);
        KdTree { data, dim, order, root }
    }

    fn build_node(data: &[f64], dim: usize, order: &mut [usize], start: usize, end: usize) -> Node {
        if end - start <= LEAF_SIZE {
            return Node::Leaf { start, end };
        }
        let idx = &mut order[start..end];
        let mut axis = 0;
        let mut widest = -1.0;
        for a in 0..dim {
            let (lo, hi) = idx.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
                let v = data[i * dim + a];
                (lo.min(v), hi.max(v))
            });
            if hi - lo > widest {
                widest = hi - lo;
                axis = a;
            }
        }
        if widest <= 0.0 {
            return Node::Leaf { start, end };
        }
        let mid = idx.len() / 2;
        idx.select_nth_unstable_by(mid, |&a, &b| data[a * dim + axis].total_cmp(&data[b * dim + axis]));
        let value = data[idx[mid] * dim + axis];
        let left = Box::new(Self::build_node(data, dim, order, start, start + mid));
        let right = Box::new(Self::build_node(data, dim, order, start + mid, end));
        Node::Split { axis, value, left, right }
    }

    fn kth_distance(&self, x: &[f64], k: usize, skip: Option<usize>) -> f64 {
        let mut best = Best::new(k);
        self.search(&self.root, x, skip, &mut best);
        best.kth().sqrt()
    }

    fn search(&self, node: &Node, x: &[f64], skip: Option<usize>, best: &mut Best) {
        match node {
            Node::Leaf { start, end } => {
                for &i in &self.order[*start..*end] {
                    if skip != Some(i) {
                        best.offer(sq_dist(x, &self.data[i * self.dim..(i + 1) * self.dim]));
                    }
                }
            }
            Node::Split { axis, value, left, right } => {
                let diff = x[*axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, x, skip, best);
                if diff * diff < best.bound() {
                    self.search(far, x, skip, best);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use proptest::prelude::*;

    #[test]
    fn hand_evaluated_with_floor() {
        let p = Array2::from_shape_vec((2, 1), vec![0.0, 1.0]).unwrap();
        let q = Array2::from_shape_vec((1, 1), vec![0.0]).unwrap();
        let est = knn_kl(p.view(), q.view(), 1).unwrap();
        let expected = 0.5 * (1e-12f64.ln() + 0.0) + (1.0f64 / 1.0).ln();
        assert!((est.value - expected).abs() < 1e-12);
        assert_eq!(est.floored, 1);
        assert!(est.warning.is_some());
    }

    #[test]
    fn rejects_bad_sizes() {
        let p = Array2::<f64>::zeros((2, 1));
        let q = Array2::<f64>::zeros((2, 2));
        assert!(knn_kl(p.view(), q.view(), 1).is_err());
        assert!(knn_kl(p.view(), p.view(), 2).is_err());
        assert!(knn_kl(p.view(), p.view(), 0).is_err());
    }

    #[test]
    fn kth_neighbour_order() {
        let data = [0.0, 1.0, 3.0, 6.0];
        assert_eq!(brute_force(&data, &[0.0], 1, 2, false), vec![1.0]);
        assert_eq!(brute_force(&data, &data, 1, 1, true), vec![1.0, 1.0, 2.0, 3.0]);
        assert_eq!(brute_force(&data, &data, 1, 3, true), vec![6.0, 5.0, 3.0, 6.0]);
    }

    fn points(max_n: usize, dim: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(prop::collection::vec(-5.0..5.0f64, dim), 2..max_n).prop_map(|rows| rows.concat())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn tree_agrees_with_brute_force(data in points(200, 3), queries in points(20, 3), k in 1usize..4) {
            let n = data.len() / 3;
            prop_assume!(n > k);
            let tree = KdTree::build(&data, 3);
            let brute = brute_force(&data, &queries, 3, k, false);
            for (x, b) in queries.chunks(3).zip(&brute) {
                prop_assert_eq!(tree.kth_distance(x, k, None), *b);
            }
            let brute_self = brute_force(&data, &data, 3, k, true);
            for (i, x) in data.chunks(3).enumerate() {
                prop_assert_eq!(tree.kth_distance(x, k, Some(i)), brute_self[i]);
            }
        }

        #[test]
        fn invariant_under_permutation(p in points(40, 2), q in points(40, 2), rot in 0usize..100) {
            let (n, m) = (p.len() / 2, q.len() / 2);
            let pa = Array2::from_shape_vec((n, 2), p.clone()).unwrap();
            let qa = Array2::from_shape_vec((m, 2), q.clone()).unwrap();
            let base = knn_kl(pa.view(), qa.view(), 1).unwrap().value;
            let shuffle = |v: &[f64], rows: usize| {
                let s = rot % rows;
                let mut rows_v: Vec<&[f64]> = v.chunks(2).collect();
                rows_v.rotate_left(s);
                rows_v.reverse();
                Array2::from_shape_vec((rows, 2), rows_v.concat()).unwrap()
            };
            let other = knn_kl(shuffle(&p, n).view(), shuffle(&q, m).view(), 1).unwrap().value;
            prop_assert!((base - other).abs() <= 1e-9 * (1.0 + base.abs()));
        }

        #[test]
        fn invariant_under_common_rotation(p in points(40, 3), q in points(40, 3), seed in any::<u64>()) {
            let (n, m) = (p.len() / 3, q.len() / 3);
            let mut rng = crate::rng::substream(seed, 0);
            let g = nalgebra::DMatrix::<f64>::from_fn(3, 3, |_, _| rand::Rng::random_range(&mut rng, -1.0..1.0));
            let rot = g.qr().q();
            let turn = |v: &[f64], rows: usize| {
                let x = nalgebra::DMatrix::from_row_slice(rows, 3, v);
                let y = x * rot.transpose();
                Array2::from_shape_fn((rows, 3), |(i, j)| y[(i, j)])
            };
            let pa = Array2::from_shape_vec((n, 3), p.clone()).unwrap();
            let qa = Array2::from_shape_vec((m, 3), q.clone()).unwrap();
            let base = knn_kl(pa.view(), qa.view(), 1).unwrap();
            let turned = knn_kl(turn(&p, n).view(), turn(&q, m).view(), 1).unwrap();
            prop_assume!(base.floored == 0);
            prop_assert!((base.value - turned.value).abs() <= 1e-6 * (1.0 + base.value.abs()));
        }
    }
}
