//! Rectangular tensor grids, finite-difference stencils, interpolation and spanning trees.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Mat, C64};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Grid {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, counts: Vec<usize>) -> Result<Self> {
        if lo.len() != hi.len() || lo.len() != counts.len() || lo.is_empty() {
            return Err(Error::InvalidConfig("grid bounds and counts must have equal nonzero length".into()));
        }
        for d in 0..lo.len() {
            if !(hi[d] > lo[d]) || counts[d] < 2 {
                return Err(Error::InvalidConfig(format!("grid axis {d} is degenerate")));
            }
        }
        Ok(Self { lo, hi, counts })
    }

    /// Square grid `[lo, hi]^dim` with `count` points per axis.
    pub fn cube(dim: usize, lo: f64, hi: f64, count: usize) -> Result<Self> {
        Self::new(vec![lo; dim], vec![hi; dim], vec![count; dim])
    }

    pub fn dim(&self) -> usize {
        self.counts.len()
    }

    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        (self.hi[axis] - self.lo[axis]) / (self.counts[axis] - 1) as f64
    }

    pub fn coord(&self, axis: usize, i: usize) -> f64 {
        if i + 1 == self.counts[axis] {
            self.hi[axis]
        } else {
            self.lo[axis] + i as f64 * self.spacing(axis)
        }
    }

    /// Flat-index stride of an axis (last axis fastest).
    pub fn stride(&self, axis: usize) -> usize {
        self.counts[axis + 1..].iter().product()
    }

    pub fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim()];
        for d in (0..self.dim()).rev() {
            idx[d] = flat % self.counts[d];
            flat /= self.counts[d];
        }
        idx
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.counts).fold(0, |acc, (&i, &c)| acc * c + i)
    }

    pub fn point(&self, flat: usize) -> Vec<f64> {
        self.multi_index(flat).iter().enumerate().map(|(d, &i)| self.coord(d, i)).collect()
    }

    pub fn points(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|p| self.point(p)).collect()
    }

    /// Flat index of the grid point nearest to `x`.
    pub fn nearest(&self, x: &[f64]) -> usize {
        let idx: Vec<usize> = (0..self.dim())
            .map(|d| {
                let t = ((x[d] - self.lo[d]) / self.spacing(d)).round();
                t.clamp(0.0, (self.counts[d] - 1) as f64) as usize
            })
            .collect();
        self.flat_index(&idx)
    }

    pub fn center_index(&self) -> usize {
        let idx: Vec<usize> = self.counts.iter().map(|c| c / 2).collect();
        self.flat_index(&idx)
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        (0..self.dim()).all(|d| x[d] >= self.lo[d] - tol && x[d] <= self.hi[d] + tol)
    }

    /// Points at least `margin` nodes away from every face.
    pub fn interior(&self, margin: usize) -> Vec<usize> {
        (0..self.len())
            .filter(|&p| {
                self.multi_index(p).iter().zip(&self.counts).all(|(&i, &c)| i >= margin && i + margin < c)
            })
            .collect()
    }

    /// Same geometry with each axis refined to `2(c-1)+1` points.
    pub fn refined(&self) -> Self {
        Self { lo: self.lo.clone(), hi: self.hi.clone(), counts: self.counts.iter().map(|c| 2 * (c - 1) + 1).collect() }
    }

    /// Finite-difference derivative of a field along `axis` with the given accuracy order.
    pub fn derivative(&self, field: &[Mat], axis: usize, order: usize) -> Result<Vec<Mat>> {
        let table = StencilTable::new(self.counts[axis], self.spacing(axis), order, 1)?;
        Ok(self.apply_stencil(field, axis, &table))
    }

    pub fn second_derivative(&self, field: &[Mat], axis: usize, order: usize) -> Result<Vec<Mat>> {
        let table = StencilTable::new(self.counts[axis], self.spacing(axis), order, 2)?;
        Ok(self.apply_stencil(field, axis, &table))
    }

    pub fn apply_stencil(&self, field: &[Mat], axis: usize, table: &StencilTable) -> Vec<Mat> {
        assert_eq!(field.len(), self.len(), "field size does not match grid");
        let stride = self.stride(axis);
        let count = self.counts[axis];
        (0..self.len())
            .map(|p| {
                let i = (p / stride) % count;
                let (start, w) = &table.rows[i];
                let center = &field[p];
                let mut acc = Mat::zeros(center.nrows(), center.ncols());
                for (k, &wk) in w.iter().enumerate() {
                    let j = start + k;
                    if j == i || wk == 0.0 {
                        continue;
                    }
                    let q = p - i * stride + j * stride;
                    acc += (&field[q] - center) * C64::new(wk, 0.0);
                }
                acc
            })
            .collect()
    }

    /// Tensor-product cubic Lagrange weights at `x`: list of (flat index, weight).
    pub fn interpolation_weights(&self, x: &[f64]) -> Vec<(usize, f64)> {
        let per_axis: Vec<(usize, [f64; 4])> = (0..self.dim())
            .map(|d| {
                let h = self.spacing(d);
                let c = self.counts[d];
                let t = (x[d] - self.lo[d]) / h;
                let cell = (t.floor() as i64).clamp(0, c as i64 - 2);
                let start = (cell - 1).clamp(0, c as i64 - 4) as usize;
                let nodes: Vec<f64> = (0..4).map(|k| (start + k) as f64).collect();
                let mut w = [0.0; 4];
                for k in 0..4 {
                    let mut l = 1.0;
                    for m in 0..4 {
                        if m != k {
                            l *= (t - nodes[m]) / (nodes[k] - nodes[m]);
                        }
                    }
                    w[k] = l;
                }
                (start, w)
            })
            .collect();
        let mut out = Vec::with_capacity(4usize.pow(self.dim() as u32));
        let total = 4usize.pow(self.dim() as u32);
        for combo in 0..total {
            let mut idx = vec![0; self.dim()];
            let mut weight = 1.0;
            let mut rest = combo;
            for d in (0..self.dim()).rev() {
                let k = rest % 4;
                rest /= 4;
                idx[d] = per_axis[d].0 + k;
                weight *= per_axis[d].1[k];
            }
            out.push((self.flat_index(&idx), weight));
        }
        out
    }

    /// Cubic interpolation of a matrix field.
    pub fn interpolate(&self, field: &[Mat], x: &[f64]) -> Mat {
        let w = self.interpolation_weights(x);
        let mut acc = Mat::zeros(field[0].nrows(), field[0].ncols());
        for (p, wp) in w {
            acc += &field[p] * C64::new(wp, 0.0);
        }
        acc
    }

    /// Spanning tree rooted at `root` whose tree paths traverse axes in `axis_order`.
    pub fn spanning_tree(&self, root: usize, axis_order: &[usize]) -> SpanningTree {
        let r = self.multi_index(root);
        let mut parent = vec![None; self.len()];
        for p in 0..self.len() {
            let idx = self.multi_index(p);
            if let Some(&axis) = axis_order.iter().rev().find(|&&d| idx[d] != r[d]) {
                let mut q = idx.clone();
                let step: i64 = if idx[axis] > r[axis] { -1 } else { 1 };
                q[axis] = (idx[axis] as i64 + step) as usize;
                parent[p] = Some(TreeEdge { parent: self.flat_index(&q), axis, forward: step < 0 });
            }
        }
        let mut order: Vec<usize> = (0..self.len()).collect();
        let dist = |p: usize| -> usize {
            self.multi_index(p).iter().zip(&r).map(|(&a, &b)| a.abs_diff(b)).sum()
        };
        order.sort_by_key(|&p| (dist(p), p));
        SpanningTree { root, parent, order }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TreeEdge {
    pub parent: usize,
    pub axis: usize,
    /// True if the child lies at a larger coordinate than the parent.
    pub forward: bool,
}

#[derive(Clone, Debug)]
pub struct SpanningTree {
    pub root: usize,
    pub parent: Vec<Option<TreeEdge>>,
    /// Processing order in which every parent precedes its children.
    pub order: Vec<usize>,
}

/// Per-node stencils along one axis.
#[derive(Clone, Debug)]
pub struct StencilTable {
    pub rows: Vec<(usize, Vec<f64>)>,
}

impl StencilTable {
    /// Stencils of width `order + deriv` (centred where possible, shifted at the ends).
    pub fn new(count: usize, h: f64, order: usize, deriv: usize) -> Result<Self> {
        if order == 0 || order % 2 == 1 {
            return Err(Error::InvalidConfig(format!("finite-difference order {order} must be even and positive")));
        }
        let width = order + deriv - if deriv % 2 == 0 { 1 } else { 0 };
        let width = width.max(deriv + 1);
        if count < width {
            return Err(Error::InvalidConfig(format!("{count} nodes too few for a {width}-point stencil")));
        }
        let half = width / 2;
        let rows = (0..count)
            .map(|i| {
                let start = i.saturating_sub(half).min(count - width);
                let nodes: Vec<f64> = (0..width).map(|k| (start + k) as f64 - i as f64).collect();
                let w = fornberg(0.0, &nodes, deriv);
                let scale = h.powi(deriv as i32);
                (start, w.into_iter().map(|x| x / scale).collect())
            })
            .collect();
        Ok(Self { rows })
    }
}

/// Fornberg weights for the `m`-th derivative at `x0` from arbitrary nodes.
pub fn fornberg(x0: f64, nodes: &[f64], m: usize) -> Vec<f64> {
    let n = nodes.len();
    let mut d = vec![vec![vec![0.0; n]; n]; m + 1];
    d[0][0][0] = 1.0;
    let mut c1 = 1.0;
    for i in 1..n {
        let mut c2 = 1.0;
        for j in 0..i {
            let c3 = nodes[i] - nodes[j];
            c2 *= c3;
            for k in 0..=m.min(i) {
                let prev = if k > 0 { d[k - 1][i - 1][j] } else { 0.0 };
                d[k][i][j] = ((nodes[i] - x0) * d[k][i - 1][j] - k as f64 * prev) / c3;
            }
        }
        for k in 0..=m.min(i) {
            let prev = if k > 0 { d[k - 1][i - 1][i - 1] } else { 0.0 };
            d[k][i][i] = c1 / c2 * (k as f64 * prev - (nodes[i - 1] - x0) * d[k][i - 1][i - 1]);
        }
        c1 = c2;
    }
    d[m][n - 1].clone()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::c;

    fn scalar_field(g: &Grid, f: impl Fn(&[f64]) -> f64) -> Vec<Mat> {
        g.points().iter().map(|x| Mat::from_element(1, 1, c(f(x), 0.0))).collect()
    }

    #[test]
    fn fornberg_matches_textbook_central_weights() {
        let w = fornberg(0.0, &[-1.0, 0.0, 1.0], 1);
        assert_eq!(w, vec![-0.5, 0.0, 0.5]);
        let w = fornberg(0.0, &[-2.0, -1.0, 0.0, 1.0, 2.0], 1);
        let expect = [1.0 / 12.0, -2.0 / 3.0, 0.0, 2.0 / 3.0, -1.0 / 12.0];
        for (a, b) in w.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
        let w = fornberg(0.0, &[0.0, 1.0, 2.0], 1);
        for (a, b) in w.iter().zip([-1.5, 2.0, -0.5]) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn derivative_is_exact_on_polynomials_of_stencil_degree() {
        let g = Grid::new(vec![-1.0, 0.0], vec![1.0, 2.0], vec![11, 9]).unwrap();
        for order in [2, 4, 6] {
            let f = scalar_field(&g, |x| x[0].powi(order as i32) * x[1] + x[1].powi(2));
            let d0 = g.derivative(&f, 0, order).unwrap();
            let d1 = g.derivative(&f, 1, order).unwrap();
            for (p, x) in g.points().iter().enumerate() {
                let e0 = order as f64 * x[0].powi(order as i32 - 1) * x[1];
                let e1 = x[0].powi(order as i32) + 2.0 * x[1];
                assert!((d0[p][(0, 0)].re - e0).abs() < 1e-10, "order {order}");
                assert!((d1[p][(0, 0)].re - e1).abs() < 1e-10, "order {order}");
            }
        }
    }

    #[test]
    fn derivative_of_constant_is_exactly_zero() {
        let g = Grid::cube(2, -1.0, 1.0, 9).unwrap();
        let f: Vec<Mat> = (0..g.len()).map(|_| Mat::from_element(2, 2, c(0.3, -1.7))).collect();
        for order in [2, 4, 6, 8] {
            let d = g.derivative(&f, 1, order).unwrap();
            assert!(d.iter().all(|m| m.iter().all(|z| *z == c(0.0, 0.0))));
        }
    }

    #[test]
    fn second_order_stencil_converges_at_rate_two() {
        let err = |count: usize| {
            let g = Grid::new(vec![0.0], vec![1.0], vec![count]).unwrap();
            let f = scalar_field(&g, |x| x[0].sin());
            let d = g.derivative(&f, 0, 2).unwrap();
            g.points().iter().zip(&d).map(|(x, m)| (m[(0, 0)].re - x[0].cos()).abs()).fold(0.0, f64::max)
        };
        let rate = (err(17) / err(33)).log2();
        assert!(rate > 1.9 && rate < 2.1, "rate {rate}");
    }

    #[test]
    fn second_derivative_and_interpolation() {
        let g = Grid::new(vec![0.0, -1.0], vec![1.0, 1.0], vec![9, 9]).unwrap();
        let f = scalar_field(&g, |x| x[0].powi(3) - x[0] * x[1] * x[1]);
        let dd = g.second_derivative(&f, 0, 4).unwrap();
        for (p, x) in g.points().iter().enumerate() {
            assert!((dd[p][(0, 0)].re - 6.0 * x[0]).abs() < 1e-9);
        }
        let v = g.interpolate(&f, &[0.37, 0.21]);
        let exact = 0.37f64.powi(3) - 0.37 * 0.21 * 0.21;
        assert!((v[(0, 0)].re - exact).abs() < 1e-13);
        let w: f64 = g.interpolation_weights(&[0.9, -0.95]).iter().map(|(_, w)| w).sum();
        assert!((w - 1.0).abs() < 1e-14);
    }

    #[test]
    fn spanning_tree_reaches_every_point_parents_first() {
        let g = Grid::cube(2, 0.0, 1.0, 5).unwrap();
        for axes in [[0, 1], [1, 0]] {
            let t = g.spanning_tree(7, &axes);
            let mut seen = vec![false; g.len()];
            for &p in &t.order {
                match t.parent[p] {
                    None => assert_eq!(p, 7),
                    Some(e) => {
                        assert!(seen[e.parent]);
                        let (a, b) = (g.multi_index(p), g.multi_index(e.parent));
                        assert_eq!(a[e.axis].abs_diff(b[e.axis]), 1);
                        assert_eq!(e.forward, a[e.axis] > b[e.axis]);
                    }
                }
                seen[p] = true;
            }
            assert!(seen.iter().all(|&s| s));
        }
        // Rooted at the first corner with axis order (0, 1) the last move is along axis 1.
        let t = g.spanning_tree(0, &[0, 1]);
        assert_eq!(t.parent[g.flat_index(&[2, 3])].unwrap().axis, 1);
        assert_eq!(t.parent[g.flat_index(&[2, 0])].unwrap().axis, 0);
    }
}
