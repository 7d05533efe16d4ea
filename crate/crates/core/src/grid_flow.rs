//! Flows of the full family `d/dx^alpha - hbar^-1 C_alpha(x)` on an x-grid,
//! the zero-curvature form of the higher times and the test of which
//! time-dependences are admissible.

use serde::Serialize;

use crate::dressing::{dress, DressingProblem, DressingSeries, GridDifferentiator};
use crate::error::{Error, Result};
use crate::flows::{phi_coeff, phi_of_b, FlowGenerator};
use crate::grid::Grid;
use crate::linalg::{self, c, Mat, C64};
use crate::models::FrobeniusModel;
use crate::par;
use crate::reduction::{frame_from_fields, FrameOptions, SemisimpleFrame};
use crate::series::HSeries;

/// Default finite-difference order for grid flows.
pub const GRID_FD_ORDER: usize = 6;

#[derive(Clone, Debug)]
pub struct GridState {
    pub grid: Grid,
    /// `c[alpha][p]`.
    pub c: Vec<Vec<Mat>>,
    pub eta: Mat,
    pub pencil: Vec<f64>,
    pub basepoint: usize,
    pub t: f64,
}

#[derive(Clone, Debug, Default, Serialize, PartialEq)]
pub struct FlatnessReport {
    /// `max |[C_alpha, C_beta]|`.
    pub commutator: f64,
    /// `max |d_alpha C_beta - d_beta C_alpha|` at interior points.
    pub curl: f64,
}

impl GridState {
    pub fn from_model(model: &FrobeniusModel, grid: &Grid) -> Result<Self> {
        if grid.dim() != model.n {
            return Err(Error::DimensionMismatch { expected: model.n, found: grid.dim() });
        }
        let pts = grid.points();
        let evals: Vec<Vec<Mat>> = par::map(&pts, |x| model.eval_c_real(x));
        let c = (0..model.n).map(|al| evals.iter().map(|e| e[al].clone()).collect()).collect();
        Ok(Self { grid: grid.clone(), c, eta: model.eta.clone(), pencil: model.pencil.clone(), basepoint: grid.center_index(), t: 0.0 })
    }

    pub fn dim(&self) -> usize {
        self.c.len()
    }

    pub fn flatness(&self, fd_order: usize) -> Result<FlatnessReport> {
        let n = self.dim();
        let mut r = FlatnessReport::default();
        let interior = self.grid.interior(fd_order / 2);
        for a in 0..n {
            for b in (a + 1)..n {
                for p in 0..self.grid.len() {
                    r.commutator = r.commutator.max(linalg::max_abs(&linalg::commutator(&self.c[a][p], &self.c[b][p])));
                }
                let d1 = self.grid.derivative(&self.c[b], a, fd_order)?;
                let d2 = self.grid.derivative(&self.c[a], b, fd_order)?;
                for &p in &interior {
                    r.curl = r.curl.max(linalg::max_abs_diff(&d1[p], &d2[p]));
                }
            }
        }
        Ok(r)
    }
}

/// Frame, dressing and full dressing `T = T0 T~` of a grid state.
#[derive(Clone, Debug)]
pub struct GridDressing {
    pub frame: SemisimpleFrame,
    pub series: DressingSeries,
    pub t_full: Vec<HSeries>,
    pub diff: GridDifferentiator,
}

pub fn dress_grid(state: &GridState, order: usize, fd_order: usize) -> Result<GridDressing> {
    let opts = FrameOptions { fd_order, ..Default::default() };
    let frame = frame_from_fields(&state.grid, &state.c, &state.eta, &state.pencil, state.basepoint, &opts)?;
    let diff = GridDifferentiator::new(&state.grid, fd_order)?;
    let series = dress(&DressingProblem { a: &frame.a, q: &frame.q, diff: &diff, order, consistency_tol: None, warn_tol: 1e-3 })?;
    let t_full = series.t_tilde.iter().zip(&frame.eigen).map(|(t, e)| t.left_mul(&e.t0)).collect();
    Ok(GridDressing { frame, series, t_full, diff })
}

/// `phi(b)` on the grid; coefficients `-m..=0` are reliable.
pub fn grid_phi(state: &GridState, b: &FlowGenerator, fd_order: usize) -> Result<Vec<HSeries>> {
    let d = dress_grid(state, b.m(), fd_order)?;
    phi_of_b(&d.t_full, b, b.m())
}

/// `dC_alpha/dt = -[phi(b)_0, C_alpha]` for every alpha with a shared `phi(b)_0`.
pub fn lax_rhs_grid(state: &GridState, b: &FlowGenerator, fd_order: usize) -> Result<Vec<Vec<Mat>>> {
    let phi0 = phi_coeff(&grid_phi(state, b, fd_order)?, 0);
    Ok(state.c.iter().map(|f| f.iter().zip(&phi0).map(|(cm, p)| -linalg::commutator(p, cm)).collect()).collect())
}

fn shifted(state: &GridState, k: &[Vec<Mat>], h: f64) -> GridState {
    let c = state.c.iter().zip(k).map(|(f, g)| f.iter().zip(g).map(|(a, b)| a + b * c(h, 0.0)).collect()).collect();
    GridState { c, ..state.clone() }
}

pub fn rk4_step_grid(state: &GridState, b: &FlowGenerator, dt: f64, fd_order: usize) -> Result<GridState> {
    let k1 = lax_rhs_grid(state, b, fd_order)?;
    let k2 = lax_rhs_grid(&shifted(state, &k1, 0.5 * dt), b, fd_order)?;
    let k3 = lax_rhs_grid(&shifted(state, &k2, 0.5 * dt), b, fd_order)?;
    let k4 = lax_rhs_grid(&shifted(state, &k3, dt), b, fd_order)?;
    let c = (0..state.dim())
        .map(|al| {
            (0..state.grid.len())
                .map(|p| &state.c[al][p] + (&k1[al][p] + &k2[al][p] * c(2.0, 0.0) + &k3[al][p] * c(2.0, 0.0) + &k4[al][p]) * c(dt / 6.0, 0.0))
                .collect()
        })
        .collect();
    Ok(GridState { c, t: state.t + dt, ..state.clone() })
}

#[derive(Clone, Debug)]
pub struct GridTrajectory {
    pub dt: f64,
    pub states: Vec<GridState>,
    pub flatness: Vec<FlatnessReport>,
    pub fd_order: usize,
}

pub fn integrate_flow_grid(state: &GridState, b: &FlowGenerator, dt: f64, steps: usize, fd_order: usize) -> Result<GridTrajectory> {
    let abort = |t: f64, e: Error| Error::FlowAborted { t, source: Box::new(e) };
    let mut states = vec![state.clone()];
    let mut flatness = vec![state.flatness(fd_order)?];
    for _ in 0..steps {
        let cur = states.last().expect("nonempty");
        let next = rk4_step_grid(cur, b, dt, fd_order).map_err(|e| abort(cur.t, e))?;
        flatness.push(next.flatness(fd_order)?);
        states.push(next);
    }
    Ok(GridTrajectory { dt, states, flatness, fd_order })
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct HigherTimeReport {
    /// `(j, max residual of the hbar^-j coefficient)`, `j = 1..=r+1`, over interior points.
    pub per_order: Vec<(i32, f64)>,
    pub max: f64,
    /// Size of `d_alpha A_r`, the term an ablation of `A_r` leaves behind.
    pub top_term: f64,
    pub ablated: bool,
}

/// Zero curvature of `[d_t - sum_j hbar^-j A_j, L_alpha]` along a grid trajectory,
/// with `A_j = phi(b)_{-j}` and `d_t C` by central differences in time.
/// `ablate` zeroes the top coefficient `A_r`.
pub fn check_higher_time(traj: &GridTrajectory, b: &FlowGenerator, ablate: bool) -> Result<HigherTimeReport> {
    let r = b.m() as i32;
    let n = traj.states[0].dim();
    let grid = &traj.states[0].grid;
    let interior = grid.interior(traj.fd_order / 2);
    let mut worst = vec![0.0f64; (r + 1) as usize];
    let mut top_term: f64 = 0.0;
    if traj.states.len() < 3 {
        return Err(Error::InvalidConfig("higher-time check needs at least two steps".into()));
    }
    for k in 1..traj.states.len() - 1 {
        let st = &traj.states[k];
        let phi = grid_phi(st, b, traj.fd_order)?;
        let mut a: Vec<Vec<Mat>> = (1..=r).map(|j| phi_coeff(&phi, -j)).collect();
        if ablate {
            a[(r - 1) as usize] = vec![linalg::zeros(n); grid.len()];
        }
        let top = phi_coeff(&phi, -r);
        for al in 0..n {
            let dc_dt: Vec<Mat> = (0..grid.len())
                .map(|p| (&traj.states[k + 1].c[al][p] - &traj.states[k - 1].c[al][p]) * c(0.5 / traj.dt, 0.0))
                .collect();
            let da: Vec<Vec<Mat>> = a.iter().map(|f| grid.derivative(f, al, traj.fd_order)).collect::<Result<_>>()?;
            let dtop = grid.derivative(&top, al, traj.fd_order)?;
            let cal = &st.c[al];
            for &p in &interior {
                top_term = top_term.max(linalg::max_abs(&dtop[p]));
                let r1 = &da[0][p] - &dc_dt[p];
                worst[0] = worst[0].max(linalg::max_abs(&r1));
                for j in 2..=r as usize {
                    let rj = &da[j - 1][p] + linalg::commutator(&a[j - 2][p], &cal[p]);
                    worst[j - 1] = worst[j - 1].max(linalg::max_abs(&rj));
                }
                let rt = linalg::commutator(&a[(r - 1) as usize][p], &cal[p]);
                worst[r as usize] = worst[r as usize].max(linalg::max_abs(&rt));
            }
        }
    }
    let per_order: Vec<(i32, f64)> = worst.iter().enumerate().map(|(i, &v)| (i as i32 + 1, v)).collect();
    let max = worst.iter().cloned().fold(0.0, f64::max);
    Ok(HigherTimeReport { per_order, max, top_term, ablated: ablate })
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub enum ExtensionVerdict {
    /// `T^-1 A T` is diagonal with constant `b_j` for `j > 1`; `b[j - 1]` taken at the basepoint.
    Accepted { b: Vec<Vec<[f64; 2]>>, b1_variation: f64 },
    /// The `hbar^-j` coefficient of `T^-1 A T` is not diagonal.
    OffDiagonal { order: i32, magnitude: f64 },
    /// The `hbar^-j` coefficient (`j > 1`) is diagonal but varies over the grid.
    NotConstant { order: i32, variation: f64 },
}

/// Decide whether `A = sum_{j=1}^m hbar^-j A_j(x)` is `phi(b)_{<=-1}` for an admissible `b`.
pub fn largest_extension_check(t_full: &[HSeries], basepoint: usize, candidate: &[HSeries], tol: f64) -> Result<ExtensionVerdict> {
    let m = -candidate[0].k_min();
    if candidate[0].k_max() > -1 || m < 1 {
        return Err(Error::InvalidConfig("candidate must live on hbar^-m..hbar^-1".into()));
    }
    let kk = t_full[0].k_max();
    if kk < m - 1 {
        return Err(Error::WindowTooSmall { need: m - 1, have: kk });
    }
    let conj: Vec<HSeries> = par::map_range(t_full.len(), |p| {
        let t = &t_full[p];
        let inv = t.inverse(kk).expect("dressing is invertible");
        let a = candidate[p].pad_exact(kk);
        &(&inv * &a) * t
    });
    let mut b = Vec::new();
    let mut b1_variation = 0.0;
    for j in 1..=m {
        let coeffs: Vec<Mat> = conj.iter().map(|s| s.coeff(-j).expect("window covers -m..-1")).collect();
        let off = coeffs.iter().fold(0.0f64, |acc, x| acc.max(linalg::max_abs(&linalg::offdiag_part(x))));
        if off > tol {
            return Ok(ExtensionVerdict::OffDiagonal { order: -j, magnitude: off });
        }
        let base = linalg::diag_entries(&coeffs[basepoint]);
        let variation = coeffs.iter().fold(0.0f64, |acc, x| {
            acc.max(linalg::diag_entries(x).iter().zip(&base).fold(0.0f64, |m, (u, v)| m.max((u - v).norm())))
        });
        if j > 1 && variation > tol {
            return Ok(ExtensionVerdict::NotConstant { order: -j, variation });
        }
        if j == 1 {
            b1_variation = variation;
        }
        b.push(base.iter().map(|z: &C64| [z.re, z.im]).collect());
    }
    Ok(ExtensionVerdict::Accepted { b, b1_variation })
}

/// `(T b(x) T^-1)_{<=-1}` for a pointwise diagonal `b`, given as `b[j - 1][p]`.
pub fn negative_part_of_conjugate(t_full: &[HSeries], b: &[Vec<Vec<C64>>]) -> Vec<HSeries> {
    let m = b.len() as i32;
    let kk = t_full[0].k_max();
    par::map_range(t_full.len(), |p| {
        let n = t_full[p].n();
        let mut bs = HSeries::zero(n, -m, kk);
        for j in 1..=m {
            *bs.at_mut(-j) = linalg::diag(&b[(j - 1) as usize][p]);
        }
        let t = &t_full[p];
        let phi = &(t * &bs) * &t.inverse(kk).expect("dressing is invertible");
        phi.truncate(-1)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{ONE, ZERO};
    use crate::models::fixture;

    fn qh_state(count: usize) -> GridState {
        let m = fixture("qh_p1").unwrap();
        GridState::from_model(&m, &m.domain_grid(count).unwrap()).unwrap()
    }

    #[test]
    fn unit_flow_is_stationary() {
        let st = qh_state(17);
        let rhs = lax_rhs_grid(&st, &FlowGenerator::single(1, &[1.0, 1.0]), GRID_FD_ORDER).unwrap();
        assert!(rhs.iter().flatten().all(|m| linalg::max_abs(m) < 1e-12));
        let traj = integrate_flow_grid(&st, &FlowGenerator::single(1, &[1.0, 1.0]), 1e-3, 2, GRID_FD_ORDER).unwrap();
        let rep = check_higher_time(&traj, &FlowGenerator::single(1, &[1.0, 1.0]), false).unwrap();
        assert!(rep.max < 1e-10, "{rep:?}");
    }

    #[test]
    fn trivial_grid_dressing_is_exactly_identity() {
        let m = fixture("trivial_diag(2)").unwrap();
        let st = GridState::from_model(&m, &m.domain_grid(9).unwrap()).unwrap();
        let d = dress_grid(&st, 3, GRID_FD_ORDER).unwrap();
        for t in &d.t_full {
            assert_eq!(t, &HSeries::identity(2, 3));
        }
        let rhs = lax_rhs_grid(&st, &FlowGenerator::single(2, &[1.0, 0.0]), GRID_FD_ORDER).unwrap();
        assert!(rhs.iter().flatten().all(|m| linalg::max_abs(m) == 0.0));
    }

    #[test]
    fn second_time_keeps_zero_curvature_and_ablation_shows() {
        let st = qh_state(33);
        let b = FlowGenerator::single(2, &[1.0, 0.0]);
        let traj = integrate_flow_grid(&st, &b, 1e-3, 2, GRID_FD_ORDER).unwrap();
        let rep = check_higher_time(&traj, &b, false).unwrap();
        assert!(rep.max < 1e-5, "{rep:?}");
        let abl = check_higher_time(&traj, &b, true).unwrap();
        let r2 = abl.per_order[1].1;
        assert!((r2 - rep.top_term).abs() < 1e-5 + 1e-2 * rep.top_term && rep.top_term > 1e-3, "{abl:?} vs {rep:?}");
        for f in &traj.flatness {
            assert!(f.commutator < 1e-12 && f.curl < 1e-6, "{f:?}");
        }
    }

    #[test]
    fn extension_round_trip_and_rejections() {
        let st = qh_state(17);
        let d = dress_grid(&st, 3, GRID_FD_ORDER).unwrap();
        let np = st.grid.len();
        let b = vec![vec![vec![c(0.5, 0.0), c(-1.0, 0.0)]; np], vec![vec![ONE, ZERO]; np]];
        let cand = negative_part_of_conjugate(&d.t_full, &b);
        match largest_extension_check(&d.t_full, st.basepoint, &cand, 1e-9).unwrap() {
            ExtensionVerdict::Accepted { b: rec, b1_variation } => {
                assert!((rec[0][0][0] - 0.5).abs() < 1e-12 && (rec[1][0][0] - 1.0).abs() < 1e-12);
                assert!(b1_variation < 1e-12);
            }
            v => panic!("{v:?}"),
        }
        let pts = st.grid.points();
        let bad: Vec<Vec<Vec<C64>>> = vec![vec![vec![ZERO, ZERO]; np], pts.iter().map(|x| vec![c(1.0 + 0.5 * x[0], 0.0), ZERO]).collect()];
        let cand = negative_part_of_conjugate(&d.t_full, &bad);
        assert!(matches!(largest_extension_check(&d.t_full, st.basepoint, &cand, 1e-9).unwrap(), ExtensionVerdict::NotConstant { order: -2, .. }));

        let m = fixture("trivial_diag(2)").unwrap();
        let tst = GridState::from_model(&m, &m.domain_grid(9).unwrap()).unwrap();
        let td = dress_grid(&tst, 2, GRID_FD_ORDER).unwrap();
        let off = Mat::from_row_slice(2, 2, &[ZERO, c(0.3, 0.0), ZERO, ZERO]);
        let cand: Vec<HSeries> = (0..tst.grid.len()).map(|_| HSeries::monomial(-1, off.clone(), -1)).collect();
        match largest_extension_check(&td.t_full, tst.basepoint, &cand, 1e-9).unwrap() {
            ExtensionVerdict::OffDiagonal { order, magnitude } => assert_eq!((order, magnitude), (-1, 0.3)),
            v => panic!("{v:?}"),
        }
    }
}
