//! Order-by-order dressing of first-order operators `d_dir + q_dir - hbar^-1 a_dir`
//! to diagonal normal form.
//!
//! The engine works on any point set that comes with derivative operators: a
//! rectangular grid (finite differences, one operator per axis) or the periodic
//! loop (Fourier differentiation, a single operator).

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{Grid, StencilTable};
use crate::linalg::{self, Mat, C64, ONE, ZERO};
use crate::loops::LoopState;
use crate::par;
use crate::reduction::{diagonalize_base, diagonalize_continued, unit_matrix, EigenData, UFrame};
use crate::series::HSeries;
use crate::spectral::Spectral;

/// Derivative operators on a point set.
pub trait Differentiator: Sync {
    fn directions(&self) -> usize;
    fn points(&self) -> usize;
    fn derivative(&self, field: &[Mat], dir: usize) -> Vec<Mat>;
    /// Rough size of the derivative error on `field`.
    fn error_estimate(&self, _field: &[Mat], _dir: usize) -> f64 {
        0.0
    }
}

/// Finite differences along the axes of a grid.
#[derive(Clone, Debug)]
pub struct GridDifferentiator {
    pub grid: Grid,
    pub order: usize,
    tables: Vec<StencilTable>,
    check_tables: Vec<Option<StencilTable>>,
}

impl GridDifferentiator {
    pub fn new(grid: &Grid, order: usize) -> Result<Self> {
        let tables = (0..grid.dim())
            .map(|d| StencilTable::new(grid.counts[d], grid.spacing(d), order, 1))
            .collect::<Result<Vec<_>>>()?;
        let check_tables =
            (0..grid.dim()).map(|d| StencilTable::new(grid.counts[d], grid.spacing(d), order + 2, 1).ok()).collect();
        Ok(Self { grid: grid.clone(), order, tables, check_tables })
    }
}

impl Differentiator for GridDifferentiator {
    fn directions(&self) -> usize {
        self.grid.dim()
    }

    fn points(&self) -> usize {
        self.grid.len()
    }

    fn derivative(&self, field: &[Mat], dir: usize) -> Vec<Mat> {
        self.grid.apply_stencil(field, dir, &self.tables[dir])
    }

    fn error_estimate(&self, field: &[Mat], dir: usize) -> f64 {
        match &self.check_tables[dir] {
            None => 0.0,
            Some(t) => {
                let a = self.derivative(field, dir);
                let b = self.grid.apply_stencil(field, dir, t);
                a.iter().zip(&b).fold(0.0, |m, (x, y)| m.max(linalg::max_abs_diff(x, y)))
            }
        }
    }
}

/// Fourier differentiation around the loop.
#[derive(Clone)]
pub struct LoopDifferentiator {
    pub spectral: Spectral,
}

impl Differentiator for LoopDifferentiator {
    fn directions(&self) -> usize {
        1
    }

    fn points(&self) -> usize {
        self.spectral.len()
    }

    fn derivative(&self, field: &[Mat], _dir: usize) -> Vec<Mat> {
        self.spectral.derivative_field(field)
    }

    fn error_estimate(&self, field: &[Mat], _dir: usize) -> f64 {
        let top = field.iter().fold(0.0f64, |m, f| m.max(linalg::max_abs(f)));
        self.spectral.tail_ratio(field) * top * self.spectral.len() as f64
    }
}

/// Consistency report for one order of the recursion.
#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct OrderResidual {
    /// Order `k` of the coefficient that was diagonalized.
    pub order: i32,
    /// Largest violation of the overdetermined equations for `S_{k+1}`.
    pub consistency: f64,
    pub max_s: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DressingSeries {
    pub order: usize,
    /// `s[k - 1][p]` holds `S_k`, `k = 1..=K`.
    pub s: Vec<Vec<Mat>>,
    /// `h[k + 1][dir][p]` holds the diagonal of `h_{k,dir}`, `k = -1..K-1`.
    pub h: Vec<Vec<Vec<Vec<C64>>>>,
    /// Accumulated product `prod_k (1 + hbar^k S_k)` per point, window `[0, K]`.
    pub t_tilde: Vec<HSeries>,
    pub residuals: Vec<OrderResidual>,
    pub warnings: Vec<String>,
}

impl DressingSeries {
    pub fn h_at(&self, k: i32, dir: usize) -> &[Vec<C64>] {
        &self.h[(k + 1) as usize][dir]
    }

    pub fn s_at(&self, k: usize) -> &[Mat] {
        &self.s[k - 1]
    }

    pub fn max_consistency(&self) -> f64 {
        self.residuals.iter().fold(0.0, |m, r| m.max(r.consistency))
    }
}

/// Input of the recursion.
pub struct DressingProblem<'a> {
    /// `a[dir][p]`: diagonal of the leading coefficient.
    pub a: &'a [Vec<Vec<C64>>],
    /// `q[dir][p]`: free term.
    pub q: &'a [Vec<Mat>],
    pub diff: &'a dyn Differentiator,
    pub order: usize,
    /// Raise `ConsistencyViolation` above this level.
    pub consistency_tol: Option<f64>,
    /// Warn when the estimated derivative error of some `S_k` exceeds this.
    pub warn_tol: f64,
}

/// Direction whose eigenvalue gap defines `S_ab`: largest gap, ties broken
/// towards the larger row entry `|a_d^a|`, then the first direction.
fn pair_direction(a: &[&[C64]], i: usize, j: usize) -> usize {
    let gaps: Vec<f64> = a.iter().map(|ad| (ad[i] - ad[j]).norm()).collect();
    let top = gaps.iter().cloned().fold(0.0, f64::max);
    let mut best = 0;
    let mut best_row = -1.0;
    for (d, &g) in gaps.iter().enumerate() {
        if g >= top * (1.0 - 1e-12) && a[d][i].norm() > best_row * (1.0 + 1e-12) {
            best = d;
            best_row = a[d][i].norm();
        }
    }
    best
}

/// Run the recursion through `order` orders.
pub fn dress(problem: &DressingProblem) -> Result<DressingSeries> {
    let nd = problem.a.len();
    let np = problem.a[0].len();
    let n = problem.a[0][0].len();
    let kk = problem.order as i32;
    if kk < 1 {
        return Err(Error::WindowTooSmall { need: 1, have: kk });
    }
    if problem.diff.directions() != nd || problem.diff.points() != np {
        return Err(Error::DimensionMismatch { expected: nd, found: problem.diff.directions() });
    }
    let mut v: Vec<Vec<HSeries>> = (0..nd)
        .map(|d| {
            (0..np)
                .map(|p| {
                    let mut s = HSeries::zero(n, -1, kk - 1);
                    *s.at_mut(-1) = -linalg::diag(&problem.a[d][p]);
                    *s.at_mut(0) = problem.q[d][p].clone();
                    s
                })
                .collect()
        })
        .collect();
    let mut t: Vec<HSeries> = vec![HSeries::identity(n, kk); np];
    let mut h = vec![(0..nd).map(|d| problem.a[d].iter().map(|ad| ad.iter().map(|z| -z).collect()).collect()).collect()];
    let mut s_all = Vec::new();
    let mut residuals = Vec::new();
    let mut warnings = Vec::new();
    for k in 0..kk {
        let per: Vec<(Mat, Vec<Vec<C64>>, f64)> = par::map_range(np, |p| {
            let hk: Vec<&Mat> = (0..nd).map(|d| v[d][p].at(k)).collect();
            let ap: Vec<&[C64]> = (0..nd).map(|d| problem.a[d][p].as_slice()).collect();
            let mut s = linalg::zeros(n);
            let mut resid: f64 = 0.0;
            for i in 0..n {
                for j in 0..n {
                    if i == j {
                        continue;
                    }
                    let d = pair_direction(&ap, i, j);
                    let sij = hk[d][(i, j)] / (ap[d][i] - ap[d][j]);
                    s[(i, j)] = sij;
                    for e in 0..nd {
                        resid = resid.max((hk[e][(i, j)] - (ap[e][i] - ap[e][j]) * sij).norm());
                    }
                }
            }
            let diag = hk.iter().map(|m| linalg::diag_entries(m)).collect();
            (s, diag, resid)
        });
        let consistency = per.iter().fold(0.0f64, |m, x| m.max(x.2));
        let s_field: Vec<Mat> = per.iter().map(|x| x.0.clone()).collect();
        let max_s = s_field.iter().fold(0.0f64, |m, x| m.max(linalg::max_abs(x)));
        residuals.push(OrderResidual { order: k, consistency, max_s });
        if let Some(tol) = problem.consistency_tol {
            if consistency > tol {
                return Err(Error::ConsistencyViolation { order: k, residual: consistency, tolerance: tol });
            }
        }
        h.push((0..nd).map(|d| per.iter().map(|x| x.1[d].clone()).collect()).collect());
        let factors: Vec<HSeries> = s_field
            .iter()
            .map(|s| {
                let mut f = HSeries::identity(n, kk);
                *f.at_mut(k + 1) += s;
                f
            })
            .collect();
        t = par::map_range(np, |p| &t[p] * &factors[p]);
        if k + 1 < kk {
            let ds: Vec<Vec<Mat>> = (0..nd).map(|d| problem.diff.derivative(&s_field, d)).collect();
            for d in 0..nd {
                let est = problem.diff.error_estimate(&s_field, d);
                if est > problem.warn_tol {
                    warnings.push(format!(
                        "order {}: estimated derivative error {est:.3e} along direction {d} exceeds {:.1e}",
                        k + 1,
                        problem.warn_tol
                    ));
                }
            }
            let inv: Vec<HSeries> = par::map(&factors, |f| f.inverse(kk).expect("unipotent factor is invertible"));
            for d in 0..nd {
                let vd = &v[d];
                v[d] = par::map_range(np, |p| {
                    let conj = &(&inv[p] * &vd[p]) * &factors[p];
                    let shift = &inv[p] * &HSeries::monomial(k + 1, ds[d][p].clone(), kk);
                    &conj + &shift
                });
            }
        }
        s_all.push(s_field);
    }
    Ok(DressingSeries { order: problem.order, s: s_all, h, t_tilde: t, residuals, warnings })
}

/// Off-diagonal defect of an explicitly conjugated operator.
#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct NormalFormReport {
    /// `(k, max off-diagonal modulus of the hbar^k coefficient)` for `k = -1..K-1`.
    pub offdiag: Vec<(i32, f64)>,
    #[serde(skip)]
    /// `diag[k + 1][dir][p]`.
    pub diag: Vec<Vec<Vec<Vec<C64>>>>,
}

impl NormalFormReport {
    pub fn max_offdiag_through(&self, k_max: i32) -> f64 {
        self.offdiag.iter().filter(|(k, _)| *k <= k_max).fold(0.0, |m, (_, r)| m.max(*r))
    }
}

/// Conjugate `d_dir + V_dir` by `T` explicitly and measure the off-diagonal part
/// of every coefficient through `hbar^{K-1}`.
pub fn verify_normal_form(potential: &[Vec<HSeries>], t: &[HSeries], diff: &dyn Differentiator, order: usize) -> NormalFormReport {
    let kk = order as i32;
    let nd = potential.len();
    let np = t.len();
    let n = t[0].n();
    let t_inv: Vec<HSeries> = par::map(t, |x| x.truncate(kk).inverse(kk).expect("dressing is invertible"));
    let mut off = vec![0.0f64; (kk + 1) as usize];
    let mut diag = vec![vec![vec![Vec::new(); np]; nd]; (kk + 1) as usize];
    for d in 0..nd {
        let mut dt: Vec<HSeries> = vec![HSeries::zero(n, 0, kk); np];
        for j in 0..=kk {
            let field: Vec<Mat> = t.iter().map(|x| x.coeff(j).expect("dressing known through K")).collect();
            for (p, m) in diff.derivative(&field, d).into_iter().enumerate() {
                *dt[p].at_mut(j) = m;
            }
        }
        let conj: Vec<HSeries> = par::map_range(np, |p| {
            let pot = potential[d][p].pad_exact(kk - 1);
            let a = &(&t_inv[p] * &pot) * &t[p].truncate(kk);
            let b = &t_inv[p] * &dt[p];
            (&a + &b).truncate(kk - 1)
        });
        for k in -1..kk {
            for p in 0..np {
                let m = conj[p].coeff(k).expect("window covers K-1");
                off[(k + 1) as usize] = off[(k + 1) as usize].max(linalg::max_abs(&linalg::offdiag_part(&m)));
                diag[(k + 1) as usize][d][p] = linalg::diag_entries(&m);
            }
        }
    }
    NormalFormReport { offdiag: (-1..kk).map(|k| (k, off[(k + 1) as usize])).collect(), diag }
}

/// Split a unipotent dressing as `prod_k (1 + hbar^k S_k) R` with zero-diagonal
/// `S_k` and diagonal `R`.
pub fn canonical_factorization(t: &HSeries, order: usize) -> (Vec<Mat>, HSeries) {
    let kk = order as i32;
    let n = t.n();
    let mut y = t.truncate(kk);
    let mut s = Vec::new();
    for k in 1..=kk {
        let sk = linalg::offdiag_part(&y.coeff(k).expect("known through K"));
        let mut f = HSeries::identity(n, kk);
        *f.at_mut(k) += &sk;
        y = &f.inverse(kk).expect("unipotent") * &y;
        s.push(sk);
    }
    (s, y)
}

/// Right-multiply a dressing by the diagonal series `D^{-1/2}`, where
/// `D = T(hbar) T(-hbar)^T` must be diagonal; the result satisfies `T T(-hbar)^T = Id`.
pub fn orthonormal_representative(t: &HSeries, order: usize) -> HSeries {
    let kk = order as i32;
    let n = t.n();
    let t = t.truncate(kk);
    let prod = &t * &t.bar_transpose();
    let x = (&prod.map(linalg::diag_part) - &HSeries::identity(n, kk)).truncate(kk);
    // (1 + x)^{-1/2} by the binomial series; x = O(hbar).
    let mut acc = HSeries::identity(n, kk);
    let mut term = HSeries::identity(n, kk);
    let mut binom = 1.0;
    for j in 1..=order {
        binom *= (-0.5 - (j as f64 - 1.0)) / j as f64;
        term = (&term * &x).truncate(kk);
        acc = &acc + &term.scale(C64::new(binom, 0.0));
    }
    (&t * &acc).truncate(kk)
}

/// Dressing of the operators `d/du^i + q_i - hbar^-1 e_i` on a u-grid.
pub fn dress_multivariable(uframe: &UFrame, order: usize, fd_order: usize, consistency_tol: Option<f64>) -> Result<(DressingSeries, GridDifferentiator)> {
    let n = uframe.q.len();
    let np = uframe.grid.len();
    let a: Vec<Vec<Vec<C64>>> =
        (0..n).map(|i| vec![(0..n).map(|j| if i == j { ONE } else { ZERO }).collect(); np]).collect();
    let diff = GridDifferentiator::new(&uframe.grid, fd_order)?;
    let series = dress(&DressingProblem { a: &a, q: &uframe.q, diff: &diff, order, consistency_tol, warn_tol: 1e-3 })?;
    Ok((series, diff))
}

/// Potentials `q_i - hbar^-1 e_i` of the u-frame operators, for [`verify_normal_form`].
pub fn u_frame_potential(uframe: &UFrame, order: usize) -> Vec<Vec<HSeries>> {
    let n = uframe.q.len();
    (0..n)
        .map(|i| {
            uframe.q[i]
                .iter()
                .map(|q| {
                    let mut s = HSeries::zero(n, -1, order as i32 - 1);
                    *s.at_mut(-1) = -unit_matrix(n, i);
                    *s.at_mut(0) = q.clone();
                    s
                })
                .collect()
        })
        .collect()
}

#[derive(Clone)]
pub struct LoopDressing {
    pub eigen: Vec<EigenData>,
    pub t0_inv: Vec<Mat>,
    /// `q(s) = T0^-1 dT0/ds`.
    pub q: Vec<Mat>,
    pub series: DressingSeries,
    /// `T = T0 T~` per point, window `[0, K]`.
    pub t_full: Vec<HSeries>,
    pub diff: LoopDifferentiator,
}

impl LoopDressing {
    /// `h_k(s)` diagonals, `k = -1..K-1`.
    pub fn h(&self, k: i32) -> &[Vec<C64>] {
        self.series.h_at(k, 0)
    }
}

/// Eigenframes continued once around the loop; the frame must close up.
///
/// With an anchor, the frame at `s = 0` is continued from it instead of being
/// sorted afresh, which keeps branch labels fixed under small changes of `C`.
pub fn loop_eigenframes(state: &LoopState, gap_threshold: f64, anchor: Option<&EigenData>) -> Result<Vec<EigenData>> {
    let np = state.n_points();
    let sp = state.spectral()?;
    let nodes = sp.nodes();
    let loc = |k: usize| format!("s = {:.6}", nodes[k]);
    let mut out: Vec<EigenData> = Vec::with_capacity(np);
    out.push(match anchor {
        Some(a) => diagonalize_continued(&state.c[0], &state.eta, a, gap_threshold, &loc(0))?,
        None => diagonalize_base(&state.c[0], &state.eta, gap_threshold, &loc(0))?,
    });
    for k in 1..np {
        let e = diagonalize_continued(&state.c[k], &state.eta, &out[k - 1], gap_threshold, &loc(k))?;
        out.push(e);
    }
    let closing = diagonalize_continued(&state.c[0], &state.eta, &out[np - 1], gap_threshold, &loc(0))?;
    let n = state.dim();
    let scale = out[0].values.iter().fold(1.0f64, |m, z| m.max(z.norm()));
    for i in 0..n {
        if (closing.values[i] - out[0].values[i]).norm() > 1e-8 * scale {
            return Err(Error::MonodromyMismatch(format!("eigenvalue branch {i} is permuted after one loop")));
        }
        let dev: f64 = (0..n).map(|r| (closing.t0[(r, i)] - out[0].t0[(r, i)]).norm()).fold(0.0, f64::max);
        if dev > 1e-6 {
            return Err(Error::MonodromyMismatch(format!("eigenvector {i} changes sign after one loop")));
        }
    }
    Ok(out)
}

/// Dressing of `d/ds - hbar^-1 C(s)` to order `K`.
pub fn dress_loop(state: &LoopState, order: usize) -> Result<LoopDressing> {
    dress_loop_anchored(state, order, None)
}

/// [`dress_loop`] with branch labels continued from `anchor` at `s = 0`.
pub fn dress_loop_anchored(state: &LoopState, order: usize, anchor: Option<&EigenData>) -> Result<LoopDressing> {
    let eigen = loop_eigenframes(state, crate::models::DEFAULT_GAP_THRESHOLD, anchor)?;
    let diff = LoopDifferentiator { spectral: state.spectral()? };
    let t0: Vec<Mat> = eigen.iter().map(|e| e.t0.clone()).collect();
    // C need not be eta-self-adjoint (gradients perturb it in every direction), so invert T0 directly.
    let t0_inv: Vec<Mat> = t0
        .iter()
        .map(|t| t.clone().try_inverse().ok_or(Error::SingularLeading { min_sv: 0.0 }))
        .collect::<Result<_>>()?;
    let dt0 = diff.derivative(&t0, 0);
    let q: Vec<Mat> = t0_inv.iter().zip(&dt0).map(|(a, b)| a * b).collect();
    let a = vec![eigen.iter().map(|e| e.values.clone()).collect::<Vec<_>>()];
    let series = dress(&DressingProblem {
        a: &a,
        q: std::slice::from_ref(&q),
        diff: &diff,
        order,
        consistency_tol: None,
        warn_tol: 1e-6,
    })?;
    let t_full = series.t_tilde.iter().zip(&t0).map(|(t, m)| t.left_mul(m)).collect();
    Ok(LoopDressing { eigen, t0_inv, q, series, t_full, diff })
}

/// Potential `-hbar^-1 C(s)` of the loop operator.
pub fn loop_potential(state: &LoopState, order: usize) -> Vec<Vec<HSeries>> {
    vec![state.c.iter().map(|c| HSeries::monomial(-1, -c, order as i32 - 1)).collect()]
}
