//! Fundamental solution of the flat family and the semi-infinite subspace
//! model it generates, on a finite window of powers of `hbar`.
//!
//! `phi = sum_k hbar^-k phi_k` with `phi_0 = Id` solves
//! `d_alpha phi = hbar^-1 phi C_alpha` (columns are the basis `phi_beta` of `L(x)`).

use nalgebra::DVector;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::linalg::{self, c, Mat, C64, ZERO};
use crate::models::FrobeniusModel;
use crate::par;

pub use crate::grid_flow::{check_higher_time, largest_extension_check};

pub type Vector = DVector<C64>;

/// RK4 substeps per grid edge.
pub const EDGE_SUBSTEPS: usize = 4;
pub const VHS_FD_ORDER: usize = 6;
pub const PATH_TOL: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct FundamentalSolution {
    pub grid: Grid,
    pub basepoint: usize,
    pub depth: usize,
    /// `phi[k][p]`: coefficient of `hbar^-k`.
    pub phi: Vec<Vec<Mat>>,
    /// Flat components of the unit field; `psi = phi . unit`.
    pub unit: Vec<f64>,
    pub eta: Mat,
    pub fd_order: usize,
    pub report: FundamentalReport,
}

#[derive(Clone, Debug, Default, Serialize, PartialEq)]
pub struct FundamentalReport {
    /// `max |phi(basepoint) - Id|`.
    pub basepoint: f64,
    /// `max |d_alpha phi_{k+1} - phi_k C_alpha|` at interior points, per `k`.
    pub residual_per_order: Vec<f64>,
    pub residual: f64,
    /// Disagreement between two spanning trees.
    pub path_deviation: f64,
}

/// Triangular system `y_k' = y_{k-1} C(t)` along one edge, RK4.
fn advance(y: &[Mat], model: &FrobeniusModel, x0: &[f64], axis: usize, h: f64) -> Vec<Mat> {
    let rhs = |y: &[Mat], x: &[f64]| -> Vec<Mat> {
        let ca = &model.eval_c_real(x)[axis];
        let mut out = vec![linalg::zeros(ca.nrows()); y.len()];
        for k in 1..y.len() {
            out[k] = &y[k - 1] * ca;
        }
        out
    };
    let add = |y: &[Mat], k: &[Mat], s: f64| -> Vec<Mat> { y.iter().zip(k).map(|(a, b)| a + b * c(s, 0.0)).collect() };
    let dh = h / EDGE_SUBSTEPS as f64;
    let mut y = y.to_vec();
    let mut x = x0.to_vec();
    for _ in 0..EDGE_SUBSTEPS {
        let mut xm = x.clone();
        xm[axis] += 0.5 * dh;
        let mut xe = x.clone();
        xe[axis] += dh;
        let k1 = rhs(&y, &x);
        let k2 = rhs(&add(&y, &k1, 0.5 * dh), &xm);
        let k3 = rhs(&add(&y, &k2, 0.5 * dh), &xm);
        let k4 = rhs(&add(&y, &k3, dh), &xe);
        for i in 0..y.len() {
            y[i] += (&k1[i] + &k2[i] * c(2.0, 0.0) + &k3[i] * c(2.0, 0.0) + &k4[i]) * c(dh / 6.0, 0.0);
        }
        x = xe;
    }
    y
}

fn integrate_tree(model: &FrobeniusModel, grid: &Grid, basepoint: usize, depth: usize, axis_order: &[usize]) -> Vec<Vec<Mat>> {
    let n = model.n;
    let tree = grid.spanning_tree(basepoint, axis_order);
    let mut at: Vec<Option<Vec<Mat>>> = vec![None; grid.len()];
    let mut init = vec![linalg::zeros(n); depth + 1];
    init[0] = linalg::eye(n);
    at[basepoint] = Some(init);
    for &p in &tree.order {
        if let Some(e) = tree.parent[p] {
            let h = grid.spacing(e.axis) * if e.forward { 1.0 } else { -1.0 };
            let y = advance(at[e.parent].as_ref().expect("parent first"), model, &grid.point(e.parent), e.axis, h);
            at[p] = Some(y);
        }
    }
    let at: Vec<Vec<Mat>> = at.into_iter().map(|v| v.expect("tree spans the grid")).collect();
    (0..=depth).map(|k| at.iter().map(|v| v[k].clone()).collect()).collect()
}

pub fn fundamental_solution(model: &FrobeniusModel, grid: &Grid, depth: usize) -> Result<FundamentalSolution> {
    fundamental_solution_at(model, grid, grid.center_index(), depth, VHS_FD_ORDER)
}

pub fn fundamental_solution_at(model: &FrobeniusModel, grid: &Grid, basepoint: usize, depth: usize, fd_order: usize) -> Result<FundamentalSolution> {
    if grid.dim() != model.n {
        return Err(Error::DimensionMismatch { expected: model.n, found: grid.dim() });
    }
    let n = model.n;
    let order: Vec<usize> = (0..n).collect();
    let phi = integrate_tree(model, grid, basepoint, depth, &order);
    let mut report = FundamentalReport::default();
    if n > 1 {
        let rev: Vec<usize> = order.iter().rev().cloned().collect();
        let phi2 = integrate_tree(model, grid, basepoint, depth, &rev);
        for (f, g) in phi.iter().zip(&phi2) {
            for (a, b) in f.iter().zip(g) {
                report.path_deviation = report.path_deviation.max(linalg::max_abs_diff(a, b));
            }
        }
        if report.path_deviation > PATH_TOL {
            return Err(Error::PathInconsistency { deviation: report.path_deviation });
        }
    }
    report.basepoint = (0..=depth)
        .map(|k| {
            let want = if k == 0 { linalg::eye(n) } else { linalg::zeros(n) };
            linalg::max_abs_diff(&phi[k][basepoint], &want)
        })
        .fold(0.0, f64::max);
    let pts = grid.points();
    let cs: Vec<Vec<Mat>> = par::map(&pts, |x| model.eval_c_real(x));
    let interior = grid.interior(fd_order / 2);
    for k in 0..depth {
        let mut worst: f64 = 0.0;
        for al in 0..n {
            let d = grid.derivative(&phi[k + 1], al, fd_order)?;
            for &p in &interior {
                worst = worst.max(linalg::max_abs_diff(&d[p], &(&phi[k][p] * &cs[p][al])));
            }
        }
        report.residual_per_order.push(worst);
    }
    report.residual = report.residual_per_order.iter().cloned().fold(0.0, f64::max);
    Ok(FundamentalSolution { grid: grid.clone(), basepoint, depth, phi, unit: model.unit.clone(), eta: model.eta.clone(), fd_order, report })
}

impl FundamentalSolution {
    pub fn dim(&self) -> usize {
        self.eta.nrows()
    }

    /// Coefficients of `phi(x_p)` in powers of `hbar^-1`.
    pub fn at(&self, p: usize) -> Vec<Mat> {
        self.phi.iter().map(|f| f[p].clone()).collect()
    }

    fn unit_vector(&self) -> Vector {
        Vector::from_iterator(self.dim(), self.unit.iter().map(|&u| c(u, 0.0)))
    }

    /// `psi = phi . unit` as a vector series.
    pub fn psi(&self, p: usize) -> LaurentVec {
        let e = self.unit_vector();
        LaurentVec::from_descending(self.phi.iter().map(|f| &f[p] * &e).collect())
    }

    /// `hbar^k phi_alpha(x_p)`.
    pub fn basis_vector(&self, p: usize, alpha: usize, k: i32) -> LaurentVec {
        let mut v = LaurentVec::from_descending(self.phi.iter().map(|f| f[p].column(alpha).into_owned()).collect());
        v.lo += k;
        v
    }
}

/// Inverse of `sum_k hbar^-k phi_k` with `phi_0 = Id`, exact through `hbar^-K`.
pub fn inverse_descending(phi: &[Mat]) -> Vec<Mat> {
    let n = phi[0].nrows();
    let mut chi: Vec<Mat> = vec![linalg::eye(n)];
    for k in 1..phi.len() {
        let mut acc = linalg::zeros(n);
        for j in 1..=k {
            acc -= &phi[j] * &chi[k - j];
        }
        chi.push(acc);
    }
    chi
}

/// Vector Laurent polynomial `sum_{e = lo}^{hi} hbar^e v_e` known exactly on its
/// window; lower exponents are unknown rather than zero.
#[derive(Clone, Debug, PartialEq)]
pub struct LaurentVec {
    pub lo: i32,
    pub coeffs: Vec<Vector>,
}

impl LaurentVec {
    /// From coefficients of `hbar^0, hbar^-1, ...`.
    pub fn from_descending(mut v: Vec<Vector>) -> Self {
        let lo = -(v.len() as i32 - 1);
        v.reverse();
        Self { lo, coeffs: v }
    }

    pub fn hi(&self) -> i32 {
        self.lo + self.coeffs.len() as i32 - 1
    }

    pub fn get(&self, e: i32) -> Option<&Vector> {
        if e < self.lo || e > self.hi() {
            None
        } else {
            Some(&self.coeffs[(e - self.lo) as usize])
        }
    }

    pub fn shift(&self, k: i32) -> Self {
        Self { lo: self.lo + k, coeffs: self.coeffs.clone() }
    }

    pub fn scale(&self, s: C64) -> Self {
        Self { lo: self.lo, coeffs: self.coeffs.iter().map(|v| v * s).collect() }
    }

    /// `v(-hbar)`.
    pub fn reflect(&self) -> Self {
        let coeffs = self.coeffs.iter().enumerate().map(|(i, v)| if (self.lo + i as i32).rem_euclid(2) == 1 { -v } else { v.clone() }).collect();
        Self { lo: self.lo, coeffs }
    }

    /// `chi . v` for `chi = sum_k hbar^-k chi_k`, restricted to the exponents that
    /// the truncations of `chi` and `v` determine.
    pub fn apply_descending(&self, chi: &[Mat]) -> Self {
        let depth = chi.len() as i32 - 1;
        let hi = self.hi();
        let lo = self.lo.max(hi - depth);
        let coeffs = (lo..=hi)
            .map(|e| {
                let mut acc = Vector::zeros(chi[0].nrows());
                for (k, ch) in chi.iter().enumerate() {
                    if let Some(v) = self.get(e + k as i32) {
                        acc += ch * v;
                    }
                }
                acc
            })
            .collect();
        Self { lo, coeffs }
    }
}

/// Scalar Laurent coefficients `sum_{e = lo} hbar^e g_e` of a pairing.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PairingWindow {
    pub lo: i32,
    pub coeffs: Vec<C64>,
}

impl PairingWindow {
    pub fn hi(&self) -> i32 {
        self.lo + self.coeffs.len() as i32 - 1
    }

    pub fn get(&self, e: i32) -> C64 {
        if e < self.lo || e > self.hi() {
            ZERO
        } else {
            self.coeffs[(e - self.lo) as usize]
        }
    }

    /// `g(-hbar)`.
    pub fn reflect(&self) -> Self {
        let coeffs = self.coeffs.iter().enumerate().map(|(i, &v)| if (self.lo + i as i32).rem_euclid(2) == 1 { -v } else { v }).collect();
        Self { lo: self.lo, coeffs }
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        let lo = self.lo.max(other.lo);
        let hi = self.hi().min(other.hi());
        (lo..=hi).map(|e| (self.get(e) - other.get(e)).norm()).fold(0.0, f64::max)
    }
}

fn bilinear(eta: &Mat, u: &Vector, v: &Vector) -> C64 {
    (u.transpose() * eta * v)[(0, 0)]
}

/// `G(a, b) = hbar^{n-2} eta(hbar phi^-1 a, hbar phi^-1 b)` with
/// `eta(hbar^k v, hbar^l u) = hbar^k (-hbar)^l v^T eta u`, evaluated with `phi` at `x_p`.
pub fn pairing_g(a: &LaurentVec, b: &LaurentVec, fs: &FundamentalSolution, p: usize) -> Result<PairingWindow> {
    let chi = inverse_descending(&fs.at(p));
    pairing_with_inverse(a, b, &chi, &fs.eta)
}

fn pairing_with_inverse(a: &LaurentVec, b: &LaurentVec, chi: &[Mat], eta: &Mat) -> Result<PairingWindow> {
    let n = eta.nrows() as i32;
    let at = a.apply_descending(chi);
    let bt = b.apply_descending(chi).reflect();
    // G = -hbar^n at(hbar)^T eta bt(-hbar); exponents reliable where no unknown pair contributes
    let lo = n + (at.lo + bt.hi()).max(at.hi() + bt.lo);
    let hi = n + at.hi() + bt.hi();
    if lo > hi {
        return Err(Error::WindowTooSmall { need: lo, have: hi });
    }
    let coeffs = (lo..=hi)
        .map(|g| {
            let mut acc = ZERO;
            for e1 in at.lo..=at.hi() {
                if let Some(v) = bt.get(g - n - e1) {
                    acc -= bilinear(eta, at.get(e1).expect("in window"), v);
                }
            }
            acc
        })
        .collect();
    Ok(PairingWindow { lo, coeffs })
}

/// `phi . v` as `n x 1` matrix fields, `[k][p]`.
fn column_fields(fs: &FundamentalSolution, v: &Vector) -> Vec<Vec<Mat>> {
    let col = Mat::from_column_slice(v.len(), 1, v.as_slice());
    fs.phi.iter().map(|f| f.iter().map(|m| m * &col).collect()).collect()
}

#[derive(Clone, Debug, Default, Serialize, PartialEq)]
pub struct EqprfrobReport {
    /// `d_alpha d_beta psi - hbar^-1 C_ab^g d_g psi`.
    pub second_derivative: f64,
    /// `G(d_alpha psi, d_beta psi) - hbar^{n-2} eta_ab` over the reliable window.
    pub pairing: f64,
    /// `d_e psi - hbar^-1 psi` along the unit field.
    pub unit_derivative: f64,
    /// Spread of the `hbar^{n-2}` coefficient of `G(d_alpha psi, d_beta psi)` over the grid.
    pub eta_constancy: f64,
    /// The recovered metric at the base point.
    pub recovered_eta: Vec<Vec<[f64; 2]>>,
}

/// The three identities satisfied by `psi = phi . unit`, with derivatives taken by
/// finite differences of the grid fields.
pub fn check_eqprfrob(fs: &FundamentalSolution, model: &FrobeniusModel) -> Result<EqprfrobReport> {
    let n = fs.dim();
    let grid = &fs.grid;
    let unit = fs.unit_vector();
    let psi = column_fields(fs, &unit);
    let d: Vec<Vec<Vec<Mat>>> = (0..n)
        .map(|al| psi.iter().map(|f| grid.derivative(f, al, fs.fd_order)).collect::<Result<Vec<_>>>())
        .collect::<Result<_>>()?;
    let interior = grid.interior(fs.fd_order);
    let pts = grid.points();
    let mut rep = EqprfrobReport::default();
    for al in 0..n {
        for be in 0..n {
            let dd: Vec<Vec<Mat>> = d[al].iter().map(|f| grid.derivative(f, be, fs.fd_order)).collect::<Result<_>>()?;
            for &p in &interior {
                let cs = model.eval_c_real(&pts[p]);
                for k in 1..=fs.depth {
                    let mut rhs = linalg::zeros(n).columns(0, 1).into_owned();
                    for g in 0..n {
                        rhs += &d[g][k - 1][p] * cs[al][(g, be)];
                    }
                    rep.second_derivative = rep.second_derivative.max(linalg::max_abs_diff(&dd[k][p], &rhs));
                }
            }
        }
    }
    let dpsi = |al: usize, p: usize| -> LaurentVec {
        LaurentVec::from_descending(d[al].iter().map(|f| f[p].column(0).into_owned()).collect()).truncate_top(-1)
    };
    let chis: Vec<Vec<Mat>> = par::map_range(grid.len(), |p| inverse_descending(&fs.at(p)));
    let top = n as i32 - 2;
    let mut base_top = vec![vec![ZERO; n]; n];
    for al in 0..n {
        for be in 0..n {
            base_top[al][be] = pairing_with_inverse(&dpsi(al, fs.basepoint), &dpsi(be, fs.basepoint), &chis[fs.basepoint], &fs.eta)?.get(top);
        }
    }
    for &p in &interior {
        for al in 0..n {
            for be in 0..n {
                let g = pairing_with_inverse(&dpsi(al, p), &dpsi(be, p), &chis[p], &fs.eta)?;
                for e in g.lo..=g.hi() {
                    let want = if e == top { fs.eta[(al, be)] } else { ZERO };
                    rep.pairing = rep.pairing.max((g.get(e) - want).norm());
                }
                rep.eta_constancy = rep.eta_constancy.max((g.get(top) - base_top[al][be]).norm());
            }
        }
        for k in 1..=fs.depth {
            let mut de = linalg::zeros(n).columns(0, 1).into_owned();
            for al in 0..n {
                de += &d[al][k][p] * c(fs.unit[al], 0.0);
            }
            rep.unit_derivative = rep.unit_derivative.max(linalg::max_abs_diff(&de, &psi[k - 1][p]));
        }
    }
    rep.recovered_eta = base_top.iter().map(|r| r.iter().map(|z| [z.re, z.im]).collect()).collect();
    Ok(rep)
}

impl LaurentVec {
    /// Drop exponents above `hi`.
    pub fn truncate_top(&self, hi: i32) -> Self {
        let keep = ((hi - self.lo + 1).max(0) as usize).min(self.coeffs.len());
        Self { lo: self.lo, coeffs: self.coeffs[..keep].to_vec() }
    }
}

#[derive(Clone, Debug, Default, Serialize, PartialEq)]
pub struct IsotropyReport {
    /// Largest coefficient of `G(hbar^k phi_alpha, hbar^l phi_beta)` below `hbar^n`.
    pub below_n: f64,
    /// Disagreement of `G` evaluated with `phi` at the sample point and at the base point.
    pub x_independence: f64,
    pub samples: usize,
}

/// Isotropy of `L(x)` on the reliable window. Basis vectors are built at each
/// sample point while `G` uses `phi` at the base point, so the check also
/// exercises the x-independence of the pairing.
pub fn check_isotropy(fs: &FundamentalSolution, samples: &[usize]) -> Result<IsotropyReport> {
    let n = fs.dim() as i32;
    let chi0 = inverse_descending(&fs.at(fs.basepoint));
    let mut rep = IsotropyReport { samples: samples.len(), ..Default::default() };
    for &p in samples {
        let chip = inverse_descending(&fs.at(p));
        for k in 0..fs.depth as i32 {
            for l in 0..(fs.depth as i32 - k) {
                for al in 0..fs.dim() {
                    for be in 0..fs.dim() {
                        let a = fs.basis_vector(p, al, k);
                        let b = fs.basis_vector(p, be, l);
                        let g0 = pairing_with_inverse(&a, &b, &chi0, &fs.eta)?;
                        let gp = pairing_with_inverse(&a, &b, &chip, &fs.eta)?;
                        for e in g0.lo..n.min(g0.hi() + 1) {
                            rep.below_n = rep.below_n.max(g0.get(e).norm());
                        }
                        rep.x_independence = rep.x_independence.max(g0.max_abs_diff(&gp));
                    }
                }
            }
        }
    }
    Ok(rep)
}

#[derive(Clone, Debug, Default, Serialize, PartialEq)]
pub struct SymbolReport {
    /// `symbol[alpha][gamma][beta]`: `hbar^-1` coefficient of `phi^-1 d_alpha phi`.
    pub symbol: Vec<Vec<Vec<[f64; 2]>>>,
    /// `max |symbol - C|`.
    pub deviation: f64,
    /// Lower coefficients of `phi^-1 d_alpha phi`, which transversality forces to zero.
    pub transversality: f64,
    /// `max |symbol along the unit field - Id|`.
    pub unit_row: f64,
}

/// Symbol of `d/dx` in the bases `[phi_beta]`, `[hbar^-1 phi_gamma]` at `x_p`, from
/// finite differences of the columns of `phi`.
pub fn symbol_map(fs: &FundamentalSolution, model: &FrobeniusModel, p: usize) -> Result<SymbolReport> {
    symbol_map_many(fs, model, &[p]).map(|mut v| v.remove(0))
}

fn symbol_map_many(fs: &FundamentalSolution, model: &FrobeniusModel, points: &[usize]) -> Result<Vec<SymbolReport>> {
    let n = fs.dim();
    let grid = &fs.grid;
    let derivs: Vec<Vec<Vec<Mat>>> = (0..n)
        .map(|al| fs.phi.iter().map(|f| grid.derivative(f, al, fs.fd_order)).collect::<Result<Vec<_>>>())
        .collect::<Result<_>>()?;
    let mut out = Vec::new();
    for &p in points {
        let chi = inverse_descending(&fs.at(p));
        let cs = model.eval_c_real(&grid.point(p));
        let mut rep = SymbolReport::default();
        let mut unit_sym = linalg::zeros(n);
        for al in 0..n {
            // phi^-1 d_alpha phi in powers of hbar^-1; the hbar^0 term vanishes identically
            let mut prod: Vec<Mat> = vec![linalg::zeros(n); fs.depth + 1];
            for e in 1..=fs.depth {
                for k in 0..=(fs.depth - e) {
                    prod[e + k] += &chi[k] * &derivs[al][e][p];
                }
            }
            rep.deviation = rep.deviation.max(linalg::max_abs_diff(&prod[1], &cs[al]));
            for m in &prod[2..] {
                rep.transversality = rep.transversality.max(linalg::max_abs(m));
            }
            unit_sym += &prod[1] * c(fs.unit[al], 0.0);
            rep.symbol.push((0..n).map(|g| (0..n).map(|b| [prod[1][(g, b)].re, prod[1][(g, b)].im]).collect()).collect());
        }
        rep.unit_row = linalg::max_abs_diff(&unit_sym, &linalg::eye(n));
        out.push(rep);
    }
    Ok(out)
}

/// Worst symbol report over the interior of the grid.
pub fn symbol_map_interior(fs: &FundamentalSolution, model: &FrobeniusModel) -> Result<SymbolReport> {
    let interior = fs.grid.interior(fs.fd_order / 2);
    let all = symbol_map_many(fs, model, &interior)?;
    let mut worst = symbol_map(fs, model, fs.basepoint)?;
    for r in all {
        worst.deviation = worst.deviation.max(r.deviation);
        worst.transversality = worst.transversality.max(r.transversality);
        worst.unit_row = worst.unit_row.max(r.unit_row);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::fixture;
    use proptest::prelude::*;

    fn factorial(k: usize) -> f64 {
        (1..=k).map(|v| v as f64).product()
    }

    #[test]
    fn trivial_solution_is_the_diagonal_exponential() {
        let m = fixture("trivial_diag(2)").unwrap();
        let grid = m.domain_grid(9).unwrap();
        let fs = fundamental_solution(&m, &grid, 4).unwrap();
        let x0 = grid.point(fs.basepoint);
        for p in 0..grid.len() {
            let x = grid.point(p);
            for k in 0..=4 {
                let want = linalg::diag(&(0..2).map(|a| c((x[a] - x0[a]).powi(k as i32) / factorial(k), 0.0)).collect::<Vec<_>>());
                assert!(linalg::max_abs_diff(&fs.phi[k][p], &want) < 1e-14);
            }
        }
        assert_eq!(fs.report.basepoint, 0.0);
        assert!(fs.report.residual < 1e-12, "{:?}", fs.report);
        let e = check_eqprfrob(&fs, &m).unwrap();
        assert!(e.second_derivative < 1e-10 && e.pairing < 1e-12 && e.unit_derivative < 1e-12, "{e:?}");
        let s = symbol_map_interior(&fs, &m).unwrap();
        assert!(s.deviation < 1e-12 && s.unit_row < 1e-12, "{s:?}");
    }

    #[test]
    fn qh_solution_identities() {
        let m = fixture("qh_p1").unwrap();
        let grid = m.domain_grid(33).unwrap();
        let fs = fundamental_solution(&m, &grid, 4).unwrap();
        assert!(fs.report.residual < 1e-6 && fs.report.path_deviation < 1e-8, "{:?}", fs.report);
        let e = check_eqprfrob(&fs, &m).unwrap();
        assert!(e.second_derivative < 1e-6 && e.pairing < 1e-6 && e.unit_derivative < 1e-6, "{e:?}");
        assert!(e.eta_constancy < 1e-8, "{e:?}");
        assert!((e.recovered_eta[0][1][0] - 1.0).abs() < 1e-12 && e.recovered_eta[0][0][0].abs() < 1e-12);
        let s = symbol_map_interior(&fs, &m).unwrap();
        assert!(s.deviation < 1e-6 && s.transversality < 1e-6 && s.unit_row < 1e-12, "{s:?}");
        let samples: Vec<usize> = grid.interior(3).into_iter().step_by(37).collect();
        let iso = check_isotropy(&fs, &samples).unwrap();
        assert!(iso.below_n < 1e-6 && iso.x_independence < 1e-6, "{iso:?}");
    }

    #[test]
    fn pairing_of_psi_with_itself() {
        let m = fixture("qh_p1").unwrap();
        let grid = m.domain_grid(17).unwrap();
        let fs = fundamental_solution(&m, &grid, 4).unwrap();
        let p = grid.flat_index(&[3, 12]);
        let psi = fs.psi(p);
        let g = pairing_g(&psi, &psi, &fs, p).unwrap();
        // psi = phi e_1, so G = hbar^n eta_11 exactly, and eta_11 = 0 for this metric
        assert_eq!(g.hi(), 2);
        assert!(g.coeffs.iter().all(|z| z.norm() < 1e-12), "{g:?}");
        let e2 = fs.basis_vector(p, 1, 0);
        let g = pairing_g(&psi, &e2, &fs, p).unwrap();
        assert!((g.get(2) + 1.0).norm() < 1e-12 && g.get(1).norm() < 1e-12);
    }

    fn random_vec(seed: &[f64], n: usize, lo: i32, len: usize) -> LaurentVec {
        let coeffs = (0..len).map(|i| Vector::from_iterator(n, (0..n).map(|j| c(seed[(i * n + j) % seed.len()], seed[(i * n + j + 1) % seed.len()])))).collect();
        LaurentVec { lo, coeffs }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn pairing_symmetry_and_hbar_linearity(seed in prop::collection::vec(-1.0f64..1.0, 12), lo_a in -3i32..1, lo_b in -3i32..1) {
            let m = fixture("qh_p1").unwrap();
            let grid = m.domain_grid(9).unwrap();
            let fs = fundamental_solution(&m, &grid, 3).unwrap();
            let p = 10;
            let a = random_vec(&seed, 2, lo_a, 3);
            let b = random_vec(&seed[3..], 2, lo_b, 3);
            let gab = pairing_g(&a, &b, &fs, p).unwrap();
            let gba = pairing_g(&b, &a, &fs, p).unwrap().reflect();
            prop_assert!(gab.max_abs_diff(&gba) < 1e-13 * (1.0 + gab.coeffs.iter().map(|z| z.norm()).fold(0.0, f64::max)));
            let scale = 1.0 + gab.coeffs.iter().map(|z| z.norm()).fold(0.0, f64::max);
            let ha = pairing_g(&a.shift(1), &b, &fs, p).unwrap();
            let hb = pairing_g(&a, &b.shift(1).scale(c(-1.0, 0.0)), &fs, p).unwrap();
            for e in ha.lo.max(gab.lo + 1)..=ha.hi() {
                prop_assert!((ha.get(e) - gab.get(e - 1)).norm() < 1e-13 * scale);
                prop_assert!((hb.get(e) - gab.get(e - 1)).norm() < 1e-13 * scale);
            }
        }
    }
}
