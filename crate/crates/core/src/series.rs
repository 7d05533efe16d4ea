//! Truncated Laurent series in the spectral parameter with square matrix coefficients.
//!
//! A series stores a dense window `[k_min, k_max]` of coefficients. Coefficients
//! below `k_min` are exactly zero; coefficients above `k_max` are unknown.
//! Every operation returns the largest window on which its result is fully
//! determined by the operands.

use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Mat, C64, ZERO};

/// Relative singular value threshold below which a leading coefficient counts as singular.
pub const SINGULAR_RTOL: f64 = 1e-13;

#[derive(Clone, Debug, PartialEq)]
pub struct HSeries {
    n: usize,
    k_min: i32,
    coeffs: Vec<Mat>,
}

impl HSeries {
    /// Series from consecutive coefficients starting at exponent `k_min`.
    pub fn new(n: usize, k_min: i32, coeffs: Vec<Mat>) -> Result<Self> {
        if coeffs.is_empty() {
            return Err(Error::InvalidConfig("series needs at least one coefficient".into()));
        }
        for m in &coeffs {
            if m.nrows() != n || m.ncols() != n {
                return Err(Error::DimensionMismatch { expected: n, found: m.nrows().max(m.ncols()) });
            }
        }
        Ok(Self { n, k_min, coeffs })
    }

    pub fn zero(n: usize, k_min: i32, k_max: i32) -> Self {
        assert!(k_max >= k_min, "empty window");
        Self { n, k_min, coeffs: vec![linalg::zeros(n); (k_max - k_min + 1) as usize] }
    }

    /// The identity, known through `k_max`.
    pub fn identity(n: usize, k_max: i32) -> Self {
        Self::monomial(0, linalg::eye(n), k_max)
    }

    /// `hbar^k A`, known (as zero) through `k_max >= k`.
    pub fn monomial(k: i32, a: Mat, k_max: i32) -> Self {
        let n = a.nrows();
        let mut s = Self::zero(n, k, k_max.max(k));
        s.coeffs[0] = a;
        s
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k_min(&self) -> i32 {
        self.k_min
    }

    pub fn k_max(&self) -> i32 {
        self.k_min + self.coeffs.len() as i32 - 1
    }

    pub fn coeffs(&self) -> &[Mat] {
        &self.coeffs
    }

    /// Coefficient of `hbar^k`: zero below the window, `None` above it.
    pub fn coeff(&self, k: i32) -> Option<Mat> {
        if k > self.k_max() {
            None
        } else if k < self.k_min {
            Some(linalg::zeros(self.n))
        } else {
            Some(self.coeffs[(k - self.k_min) as usize].clone())
        }
    }

    /// Borrow the coefficient of `hbar^k` inside the window.
    pub fn at(&self, k: i32) -> &Mat {
        assert!(k >= self.k_min && k <= self.k_max(), "exponent {k} outside window");
        &self.coeffs[(k - self.k_min) as usize]
    }

    pub fn at_mut(&mut self, k: i32) -> &mut Mat {
        assert!(k >= self.k_min && k <= self.k_max(), "exponent {k} outside window");
        let i = (k - self.k_min) as usize;
        &mut self.coeffs[i]
    }

    fn get_or_zero(&self, k: i32) -> Mat {
        if k < self.k_min || k > self.k_max() {
            linalg::zeros(self.n)
        } else {
            self.coeffs[(k - self.k_min) as usize].clone()
        }
    }

    fn check_dim(&self, other: &Self) -> Result<()> {
        if self.n != other.n {
            return Err(Error::DimensionMismatch { expected: self.n, found: other.n });
        }
        Ok(())
    }

    pub fn checked_add(&self, other: &Self) -> Result<Self> {
        self.check_dim(other)?;
        let lo = self.k_min.min(other.k_min);
        let hi = self.k_max().min(other.k_max());
        let hi = hi.max(lo);
        let coeffs = (lo..=hi).map(|k| self.get_or_zero(k) + other.get_or_zero(k)).collect();
        Ok(Self { n: self.n, k_min: lo, coeffs })
    }

    pub fn checked_sub(&self, other: &Self) -> Result<Self> {
        self.checked_add(&other.scale(C64::new(-1.0, 0.0)))
    }

    /// Cauchy product on the window `[a_min + b_min, min(a_max + b_min, a_min + b_max)]`.
    pub fn checked_mul(&self, other: &Self) -> Result<Self> {
        self.check_dim(other)?;
        let lo = self.k_min + other.k_min;
        let hi = (self.k_max() + other.k_min).min(self.k_min + other.k_max());
        let n = self.n;
        let mut coeffs = Vec::with_capacity((hi - lo + 1) as usize);
        for k in lo..=hi {
            let mut acc = linalg::zeros(n);
            for (ia, a) in self.coeffs.iter().enumerate() {
                let ka = self.k_min + ia as i32;
                let kb = k - ka;
                if kb < other.k_min {
                    break;
                }
                if kb > other.k_max() {
                    continue;
                }
                acc += a * &other.coeffs[(kb - other.k_min) as usize];
            }
            coeffs.push(acc);
        }
        Ok(Self { n, k_min: lo, coeffs })
    }

    pub fn scale(&self, s: C64) -> Self {
        Self { n: self.n, k_min: self.k_min, coeffs: self.coeffs.iter().map(|m| m * s).collect() }
    }

    /// Left multiplication by a constant matrix.
    pub fn left_mul(&self, a: &Mat) -> Self {
        self.map(|m| a * m)
    }

    /// Right multiplication by a constant matrix.
    pub fn right_mul(&self, a: &Mat) -> Self {
        self.map(|m| m * a)
    }

    /// Apply a map to every coefficient.
    pub fn map(&self, f: impl Fn(&Mat) -> Mat) -> Self {
        let coeffs: Vec<Mat> = self.coeffs.iter().map(f).collect();
        let n = coeffs[0].nrows();
        Self { n, k_min: self.k_min, coeffs }
    }

    /// Exponent and value of the first nonzero coefficient.
    pub fn leading(&self) -> Option<(i32, &Mat)> {
        self.coeffs
            .iter()
            .enumerate()
            .find(|(_, m)| linalg::max_abs(m) > 0.0)
            .map(|(i, m)| (self.k_min + i as i32, m))
    }

    /// Inverse through `order` coefficients past the leading one, together with
    /// the condition number of the leading coefficient.
    pub fn inverse_with_cond(&self, order: i32) -> Result<(Self, f64)> {
        let (m, a0) = self.leading().ok_or(Error::SingularLeading { min_sv: 0.0 })?;
        let sv = linalg::singular_values(a0);
        let (max_sv, min_sv) = (sv[0], *sv.last().unwrap());
        if !(min_sv > SINGULAR_RTOL * max_sv) {
            return Err(Error::SingularLeading { min_sv });
        }
        let a0_inv = a0.clone().try_inverse().ok_or(Error::SingularLeading { min_sv })?;
        let ord = order.min(self.k_max() - m).max(0);
        let a = |i: i32| self.get_or_zero(m + i);
        let mut b: Vec<Mat> = vec![a0_inv.clone()];
        for j in 1..=ord {
            let mut acc = linalg::zeros(self.n);
            for i in 1..=j {
                acc += a(i) * &b[(j - i) as usize];
            }
            b.push(-(&a0_inv * acc));
        }
        Ok((Self { n: self.n, k_min: -m, coeffs: b }, max_sv / min_sv))
    }

    pub fn inverse(&self, order: i32) -> Result<Self> {
        self.inverse_with_cond(order).map(|(s, _)| s)
    }

    /// Part with exponents `>= k`.
    pub fn project_geq(&self, k: i32) -> Self {
        if k > self.k_max() {
            return Self::zero(self.n, self.k_min, self.k_max());
        }
        let lo = k.max(self.k_min);
        let coeffs = (lo..=self.k_max()).map(|j| self.get_or_zero(j)).collect();
        Self { n: self.n, k_min: lo, coeffs }
    }

    /// Part with exponents `< k`, on the original window.
    pub fn project_lt(&self, k: i32) -> Self {
        let mut out = self.clone();
        for (i, c) in out.coeffs.iter_mut().enumerate() {
            if self.k_min + i as i32 >= k {
                c.fill(ZERO);
            }
        }
        out
    }

    /// `A(hbar) -> A(-hbar)^T`.
    pub fn bar_transpose(&self) -> Self {
        let coeffs = self
            .coeffs
            .iter()
            .enumerate()
            .map(|(i, m)| {
                let k = self.k_min + i as i32;
                if k.rem_euclid(2) == 0 {
                    m.transpose()
                } else {
                    -m.transpose()
                }
            })
            .collect();
        Self { n: self.n, k_min: self.k_min, coeffs }
    }

    pub fn transpose(&self) -> Self {
        self.map(|m| m.transpose())
    }

    /// `A(hbar) -> A(-hbar)`.
    pub fn reflect(&self) -> Self {
        let coeffs = self
            .coeffs
            .iter()
            .enumerate()
            .map(|(i, m)| if (self.k_min + i as i32).rem_euclid(2) == 0 { m.clone() } else { -m })
            .collect();
        Self { n: self.n, k_min: self.k_min, coeffs }
    }

    /// Multiply by `hbar^d`.
    pub fn shift(&self, d: i32) -> Self {
        Self { n: self.n, k_min: self.k_min + d, coeffs: self.coeffs.clone() }
    }

    /// Forget coefficients above `k_max`.
    pub fn truncate(&self, k_max: i32) -> Self {
        let k_max = k_max.min(self.k_max());
        assert!(k_max >= self.k_min, "truncation below window");
        Self { n: self.n, k_min: self.k_min, coeffs: self.coeffs[..(k_max - self.k_min + 1) as usize].to_vec() }
    }

    /// Declare the series exact, padding zeros through `k_max`.
    pub fn pad_exact(&self, k_max: i32) -> Self {
        let mut out = self.clone();
        while out.k_max() < k_max {
            out.coeffs.push(linalg::zeros(self.n));
        }
        out
    }

    /// Largest coefficient modulus over the window.
    pub fn max_abs(&self) -> f64 {
        self.coeffs.iter().fold(0.0, |acc, m| acc.max(linalg::max_abs(m)))
    }

    /// Largest coefficient difference over the common known window.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        let lo = self.k_min.min(other.k_min);
        let hi = self.k_max().min(other.k_max());
        (lo..=hi).fold(0.0, |acc, k| acc.max(linalg::max_abs_diff(&self.get_or_zero(k), &other.get_or_zero(k))))
    }

    /// Serialize as `{n, k_min, k_max, coeffs: [[k, re, im], ...]}`.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(SeriesJson::from(self)).expect("series serializes")
    }

    pub fn from_json(v: &serde_json::Value) -> Result<Self> {
        let raw: SeriesJson = serde_json::from_value(v.clone()).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        raw.try_into()
    }
}

type RealRows = Vec<Vec<f64>>;

#[derive(Serialize, Deserialize)]
struct SeriesJson {
    n: usize,
    k_min: i32,
    k_max: i32,
    coeffs: Vec<(i32, RealRows, RealRows)>,
}

impl From<&HSeries> for SeriesJson {
    fn from(s: &HSeries) -> Self {
        let rows = |m: &Mat, f: fn(&C64) -> f64| -> RealRows {
            (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| f(&m[(i, j)])).collect()).collect()
        };
        let coeffs = s
            .coeffs
            .iter()
            .enumerate()
            .map(|(i, m)| (s.k_min + i as i32, rows(m, |z| z.re), rows(m, |z| z.im)))
            .collect();
        Self { n: s.n, k_min: s.k_min, k_max: s.k_max(), coeffs }
    }
}

impl TryFrom<SeriesJson> for HSeries {
    type Error = Error;

    fn try_from(raw: SeriesJson) -> Result<Self> {
        if raw.k_max < raw.k_min {
            return Err(Error::InvalidConfig("k_max below k_min".into()));
        }
        let mut s = HSeries::zero(raw.n, raw.k_min, raw.k_max);
        for (k, re, im) in raw.coeffs {
            if k < raw.k_min || k > raw.k_max {
                return Err(Error::InvalidConfig(format!("coefficient {k} outside window")));
            }
            if re.len() != raw.n || im.len() != raw.n || re.iter().chain(im.iter()).any(|r| r.len() != raw.n) {
                return Err(Error::DimensionMismatch { expected: raw.n, found: re.len() });
            }
            *s.at_mut(k) = Mat::from_fn(raw.n, raw.n, |i, j| C64::new(re[i][j], im[i][j]));
        }
        Ok(s)
    }
}

impl Add for &HSeries {
    type Output = HSeries;
    fn add(self, rhs: &HSeries) -> HSeries {
        self.checked_add(rhs).expect("series dimensions agree")
    }
}

impl Sub for &HSeries {
    type Output = HSeries;
    fn sub(self, rhs: &HSeries) -> HSeries {
        self.checked_sub(rhs).expect("series dimensions agree")
    }
}

impl Mul for &HSeries {
    type Output = HSeries;
    fn mul(self, rhs: &HSeries) -> HSeries {
        self.checked_mul(rhs).expect("series dimensions agree")
    }
}

impl Neg for &HSeries {
    type Output = HSeries;
    fn neg(self) -> HSeries {
        self.scale(C64::new(-1.0, 0.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::c;
    use proptest::prelude::*;

    fn mat2(a: [f64; 8]) -> Mat {
        Mat::from_row_slice(2, 2, &[c(a[0], a[1]), c(a[2], a[3]), c(a[4], a[5]), c(a[6], a[7])])
    }

    // Naive product over full index ranges: the independent oracle for `checked_mul`.
    fn naive_coeff(a: &HSeries, b: &HSeries, k: i32) -> Mat {
        let mut acc = linalg::zeros(a.n());
        for i in a.k_min()..=a.k_max() {
            for j in b.k_min()..=b.k_max() {
                if i + j == k {
                    acc += a.at(i) * b.at(j);
                }
            }
        }
        acc
    }

    fn arb_series(n: usize) -> impl Strategy<Value = HSeries> {
        (-2i32..2, 1usize..5).prop_flat_map(move |(k_min, len)| {
            proptest::collection::vec(proptest::collection::vec(-1.0f64..1.0, 2 * n * n), len).prop_map(move |raw| {
                let coeffs = raw
                    .iter()
                    .map(|v| Mat::from_fn(n, n, |i, j| c(v[2 * (i * n + j)], v[2 * (i * n + j) + 1])))
                    .collect();
                HSeries::new(n, k_min, coeffs).unwrap()
            })
        })
    }

    #[test]
    fn product_window_and_values() {
        let a = HSeries::new(2, -1, vec![mat2([1.0, 0.0, 2.0, 0.0, 0.0, 1.0, 3.0, 0.0]); 3]).unwrap();
        let b = HSeries::new(2, 0, vec![mat2([0.5, 0.0, 0.0, 0.0, 1.0, 0.0, 2.0, -1.0]); 4]).unwrap();
        let p = &a * &b;
        assert_eq!(p.k_min(), -1);
        assert_eq!(p.k_max(), 1);
        for k in -1..=1 {
            assert_eq!(p.at(k), &naive_coeff(&a, &b, k));
        }
    }

    #[test]
    fn singular_leading_reports_smallest_singular_value() {
        let a = HSeries::new(2, 0, vec![mat2([1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0]), linalg::eye(2)]).unwrap();
        match a.inverse(3) {
            Err(Error::SingularLeading { min_sv }) => assert!(min_sv < 1e-12),
            other => panic!("expected singular leading, got {other:?}"),
        }
    }

    #[test]
    fn inverse_of_laurent_series_with_pole() {
        // hbar^-1 (A0 + hbar A1): inverse starts at hbar^1.
        let a0 = mat2([2.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0]);
        let a1 = mat2([0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
        let a = HSeries::new(2, -1, vec![a0, a1, linalg::zeros(2), linalg::zeros(2)]).unwrap();
        let (inv, cond) = a.inverse_with_cond(10).unwrap();
        assert!(cond > 1.0);
        assert_eq!(inv.k_min(), 1);
        assert_eq!(inv.k_max(), 4);
        let id = &a * &inv;
        assert_eq!(id.k_min(), 0);
        assert!(id.max_abs_diff(&HSeries::identity(2, id.k_max())) < 1e-14);
    }

    #[test]
    fn projections_and_reflections() {
        let a = HSeries::new(1, -2, (0..5).map(|k| Mat::from_element(1, 1, c(k as f64 + 1.0, 0.0))).collect()).unwrap();
        let p = a.project_geq(0);
        assert_eq!((p.k_min(), p.k_max()), (0, 2));
        assert_eq!(p.at(0)[(0, 0)], c(3.0, 0.0));
        let q = a.project_lt(0);
        assert_eq!((q.k_min(), q.k_max()), (-2, 2));
        assert_eq!(q.at(1)[(0, 0)], c(0.0, 0.0));
        assert_eq!(q.at(-1)[(0, 0)], c(2.0, 0.0));
        let z = a.project_geq(7);
        assert_eq!(z.max_abs(), 0.0);
        let r = a.bar_transpose();
        assert_eq!(r.at(-1)[(0, 0)], c(-2.0, 0.0));
        assert_eq!(r.at(-2)[(0, 0)], c(1.0, 0.0));
        assert_eq!(a.shift(3).k_min(), 1);
    }

    #[test]
    fn json_round_trip_is_exact() {
        let a = HSeries::new(2, -1, vec![mat2([0.1, -0.2, 1.0 / 3.0, 0.0, 5.0, 1e-300, -7.0, 2.5]); 3]).unwrap();
        let v = a.to_json();
        assert_eq!(v["k_max"], 1);
        let back = HSeries::from_json(&serde_json::from_str(&v.to_string()).unwrap()).unwrap();
        assert_eq!(back, a);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let a = HSeries::identity(2, 2);
        let b = HSeries::identity(3, 2);
        assert_eq!(a.checked_mul(&b), Err(Error::DimensionMismatch { expected: 2, found: 3 }));
    }

    proptest! {
        #[test]
        fn product_matches_naive_convolution(a in arb_series(2), b in arb_series(2)) {
            let p = &a * &b;
            prop_assert_eq!(p.k_min(), a.k_min() + b.k_min());
            for k in p.k_min()..=p.k_max() {
                prop_assert!(linalg::max_abs_diff(p.at(k), &naive_coeff(&a, &b, k)) < 1e-13);
            }
        }

        #[test]
        fn product_is_associative(a in arb_series(2), b in arb_series(2), d in arb_series(2)) {
            let l = &(&a * &b) * &d;
            let r = &a * &(&b * &d);
            prop_assert!(l.max_abs_diff(&r) < 1e-12);
        }

        #[test]
        fn inverse_is_two_sided(a in arb_series(2)) {
            let shifted = &a + &HSeries::identity(2, a.k_max()).shift(a.k_min()).scale(c(3.0, 0.0));
            let inv = shifted.inverse(6).unwrap();
            let left = &inv * &shifted;
            let right = &shifted * &inv;
            prop_assert!(left.max_abs_diff(&HSeries::identity(2, left.k_max())) < 1e-11);
            prop_assert!(right.max_abs_diff(&HSeries::identity(2, right.k_max())) < 1e-11);
        }

        #[test]
        fn bar_transpose_is_an_antihomomorphism(a in arb_series(2), b in arb_series(2)) {
            let l = (&a * &b).bar_transpose();
            let r = &b.bar_transpose() * &a.bar_transpose();
            prop_assert!(l.max_abs_diff(&r) < 1e-13);
            prop_assert_eq!(a.bar_transpose().bar_transpose(), a);
        }

        #[test]
        fn projections_split_the_series(a in arb_series(2), k in -3i32..4) {
            let sum = &a.project_lt(k) + &a.project_geq(k);
            prop_assert!(sum.max_abs_diff(&a) == 0.0);
        }
    }
}
