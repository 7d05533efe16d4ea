//! Lax flows of the loop operator `d/ds - hbar^-1 C(s)`, their conserved
//! integrals and their mutual commutativity.

use serde::Serialize;

use crate::dressing::{dress_loop_anchored, LoopDressing};
use crate::reduction::EigenData;
use crate::error::{Error, Result};
use crate::linalg::{self, c, Mat, C64, ZERO};
use crate::loops::LoopState;
use crate::par;
use crate::series::HSeries;

/// `b = sum_{j=1}^m hbar^-j b_j` with constant diagonal `b_j`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FlowGenerator {
    /// `b[j - 1]` holds the diagonal of `b_j`.
    pub b: Vec<Vec<C64>>,
}

impl FlowGenerator {
    pub fn new(b: Vec<Vec<C64>>) -> Result<Self> {
        if let Some(first) = b.first() {
            if b.iter().any(|d| d.len() != first.len()) {
                return Err(Error::InvalidConfig("all b_j must have the same size".into()));
            }
        }
        Ok(Self { b })
    }

    /// Single term `hbar^-j diag(entries)`.
    pub fn single(j: usize, entries: &[f64]) -> Self {
        let n = entries.len();
        let mut b = vec![vec![ZERO; n]; j];
        b[j - 1] = entries.iter().map(|&v| c(v, 0.0)).collect();
        Self { b }
    }

    /// Parse terms `"j:d1,d2,..."`; repeated `j` add up.
    pub fn parse(terms: &[String], n: usize) -> Result<Self> {
        let mut b: Vec<Vec<C64>> = Vec::new();
        for t in terms {
            let (j, rest) = t
                .split_once(':')
                .ok_or_else(|| Error::InvalidConfig(format!("flow term `{t}` is not of the form j:d1,...,dn")))?;
            let j: usize = j
                .trim()
                .parse()
                .ok()
                .filter(|&j| j >= 1)
                .ok_or_else(|| Error::InvalidConfig(format!("pole order in `{t}` must be a positive integer")))?;
            let d: Vec<f64> = rest
                .split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::InvalidConfig(format!("bad diagonal entries in `{t}`")))?;
            if d.len() != n {
                return Err(Error::InvalidConfig(format!("`{t}` has {} entries, expected {n}", d.len())));
            }
            if b.len() < j {
                b.resize(j, vec![ZERO; n]);
            }
            for (z, v) in b[j - 1].iter_mut().zip(d) {
                *z += v;
            }
        }
        if b.is_empty() {
            return Err(Error::InvalidConfig("empty flow generator".into()));
        }
        Ok(Self { b })
    }

    /// Pole order `m`.
    pub fn m(&self) -> usize {
        self.b.len()
    }

    pub fn n(&self) -> usize {
        self.b.first().map_or(0, |d| d.len())
    }

    pub fn coeff(&self, j: usize) -> &[C64] {
        &self.b[j - 1]
    }

    /// As a series with exact zeros on `[-m, k_max]`.
    pub fn series(&self, k_max: i32) -> HSeries {
        let m = self.m() as i32;
        let n = self.n();
        let mut s = HSeries::zero(n, -m, k_max.max(-1));
        for j in 1..=self.m() {
            *s.at_mut(-(j as i32)) = linalg::diag(&self.b[j - 1]);
        }
        s
    }
}

/// `phi(b) = T b T^-1` per point, on the window `[-m, K - m]`.
pub fn phi_of_b(t: &[HSeries], b: &FlowGenerator, order: usize) -> Result<Vec<HSeries>> {
    let m = b.m() as i32;
    let kk = order as i32;
    if kk < m {
        return Err(Error::WindowTooSmall { need: m, have: kk });
    }
    let bs = b.series(kk);
    let out = par::map(t, |tp| -> Result<HSeries> {
        let tp = tp.truncate(kk);
        let inv = tp.inverse(kk)?;
        Ok(&(&tp * &bs) * &inv)
    });
    out.into_iter().collect()
}

/// Coefficient `phi(b)_j` per point.
pub fn phi_coeff(phi: &[HSeries], j: i32) -> Vec<Mat> {
    phi.iter().map(|p| p.coeff(j).expect("coefficient inside the reliable window")).collect()
}

/// Per-coefficient residuals of `[L, phi(b)_{<=-1}] = hbar^-1 [C, phi(b)_0]`,
/// as `(exponent, max residual)` for exponents `-m-1 ..= -1`.
pub fn commutator_identity(state: &LoopState, phi: &[HSeries], diff: &dyn crate::dressing::Differentiator, m: usize) -> Vec<(i32, f64)> {
    let m = m as i32;
    let mut out = Vec::new();
    let field_max = |f: &[Mat]| f.iter().fold(0.0f64, |acc, x| acc.max(linalg::max_abs(x)));
    let comm_c = |j: i32| -> Vec<Mat> {
        let p = phi_coeff(phi, j);
        state.c.iter().zip(&p).map(|(cm, pm)| linalg::commutator(cm, pm)).collect()
    };
    out.push((-m - 1, field_max(&comm_c(-m))));
    for j in -m..=-1 {
        let dphi = diff.derivative(&phi_coeff(phi, j), 0);
        let cc = comm_c(j + 1);
        let r: Vec<Mat> = dphi.iter().zip(&cc).map(|(a, b)| a - b).collect();
        out.push((j, field_max(&r)));
    }
    out
}

/// `dC/dt = -[phi(b)_0, C]` from a fresh dressing.
pub fn lax_rhs_loop(state: &LoopState, b: &FlowGenerator) -> Result<Vec<Mat>> {
    lax_rhs_anchored(state, b, None)
}

/// [`lax_rhs_loop`] with branch labels at `s = 0` continued from `anchor`.
pub fn lax_rhs_anchored(state: &LoopState, b: &FlowGenerator, anchor: Option<&EigenData>) -> Result<Vec<Mat>> {
    if b.n() != state.dim() {
        return Err(Error::DimensionMismatch { expected: state.dim(), found: b.n() });
    }
    let d = dress_loop_anchored(state, b.m(), anchor)?;
    Ok(rhs_from_dressing(state, &d, b)?.0)
}

fn rhs_from_dressing(state: &LoopState, d: &LoopDressing, b: &FlowGenerator) -> Result<(Vec<Mat>, Vec<HSeries>)> {
    let phi = phi_of_b(&d.t_full, b, d.series.order)?;
    let p0 = phi_coeff(&phi, 0);
    let rhs = state.c.iter().zip(&p0).map(|(cm, p)| -linalg::commutator(p, cm)).collect();
    Ok((rhs, phi))
}

/// Loop integrals `I_k^j = int h_k^j ds`, `k = -1..K-1`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConservedTable {
    pub order: usize,
    /// `values[k + 1][j]`.
    pub values: Vec<Vec<C64>>,
}

impl ConservedTable {
    pub fn get(&self, k: i32, j: usize) -> C64 {
        self.values[(k + 1) as usize][j]
    }

    pub fn from_dressing(d: &LoopDressing) -> Self {
        let w = d.diff.spectral.weight();
        let kk = d.series.order as i32;
        let values = (-1..kk)
            .map(|k| {
                let h = d.h(k);
                (0..h[0].len()).map(|j| h.iter().fold(ZERO, |acc, hp| acc + hp[j]) * w).collect()
            })
            .collect();
        Self { order: d.series.order, values }
    }

    /// Largest `|I - I_ref| / max(|I_ref|, 1)` over `k <= k_max`.
    pub fn relative_drift(&self, reference: &Self, k_max: i32) -> f64 {
        let mut drift: f64 = 0.0;
        for k in -1..=k_max.min(self.order as i32 - 1) {
            for j in 0..self.values[0].len() {
                let r = reference.get(k, j);
                drift = drift.max((self.get(k, j) - r).norm() / r.norm().max(1.0));
            }
        }
        drift
    }
}

pub fn conserved_quantities(state: &LoopState, order: usize) -> Result<ConservedTable> {
    conserved_anchored(state, order, None)
}

pub fn conserved_anchored(state: &LoopState, order: usize, anchor: Option<&EigenData>) -> Result<ConservedTable> {
    Ok(ConservedTable::from_dressing(&dress_loop_anchored(state, order, anchor)?))
}

/// Frame at `s = 0`, used to keep branch labels fixed along a flow.
pub fn base_anchor(state: &LoopState) -> Result<EigenData> {
    Ok(crate::dressing::loop_eigenframes(state, crate::models::DEFAULT_GAP_THRESHOLD, None)?.swap_remove(0))
}

/// `H_b = Tr sum_{k=0}^{m-1} b_{k+1} I_k` and `H~_b = Tr sum_{k=-1}^{m-2} b_{k+2} I_k`.
pub fn hamiltonians_from_table(table: &ConservedTable, b: &FlowGenerator) -> (C64, C64) {
    let m = b.m();
    let mut h = ZERO;
    let mut ht = ZERO;
    for j in 1..=m {
        for (i, bj) in b.coeff(j).iter().enumerate() {
            h += bj * table.get(j as i32 - 1, i);
            ht += bj * table.get(j as i32 - 2, i);
        }
    }
    (h, ht)
}

pub fn hamiltonians(state: &LoopState, b: &FlowGenerator) -> Result<(C64, C64)> {
    if b.b.iter().all(|d| d.iter().all(|z| *z == ZERO)) {
        return Ok((ZERO, ZERO));
    }
    Ok(hamiltonians_from_table(&conserved_quantities(state, b.m())?, b))
}

fn axpy(base: &[Mat], k: &[Mat], h: f64) -> Vec<Mat> {
    base.iter().zip(k).map(|(a, b)| a + b * c(h, 0.0)).collect()
}

/// One classical RK4 step with a fresh dressing at every stage.
pub fn rk4_step(state: &LoopState, b: &FlowGenerator, dt: f64, anchor: Option<&EigenData>) -> Result<LoopState> {
    let with = |c: Vec<Mat>| LoopState { c, t: state.t, eta: state.eta.clone() };
    let k1 = lax_rhs_anchored(state, b, anchor)?;
    let k2 = lax_rhs_anchored(&with(axpy(&state.c, &k1, 0.5 * dt)), b, anchor)?;
    let k3 = lax_rhs_anchored(&with(axpy(&state.c, &k2, 0.5 * dt)), b, anchor)?;
    let k4 = lax_rhs_anchored(&with(axpy(&state.c, &k3, dt)), b, anchor)?;
    let c = (0..state.c.len())
        .map(|p| &state.c[p] + (&k1[p] + &k2[p] * c(2.0, 0.0) + &k3[p] * c(2.0, 0.0) + &k4[p]) * c(dt / 6.0, 0.0))
        .collect();
    Ok(LoopState { c, t: state.t + dt, eta: state.eta.clone() })
}

/// One explicit Euler step.
pub fn euler_step(state: &LoopState, b: &FlowGenerator, dt: f64, anchor: Option<&EigenData>) -> Result<LoopState> {
    let k = lax_rhs_anchored(state, b, anchor)?;
    Ok(LoopState { c: axpy(&state.c, &k, dt), t: state.t + dt, eta: state.eta.clone() })
}

#[derive(Clone, Debug)]
pub struct FlowOptions {
    pub dt: f64,
    pub steps: usize,
    /// Record diagnostics every this many steps (and at the end).
    pub record_every: usize,
    /// Dressing order used for the conserved integrals.
    pub conserved_order: usize,
}

impl Default for FlowOptions {
    fn default() -> Self {
        Self { dt: 1e-3, steps: 200, record_every: 10, conserved_order: 4 }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct FlowRecord {
    pub step: usize,
    pub t: f64,
    pub conserved: ConservedTable,
    /// Relative drift of the conserved integrals against `t = 0`.
    pub drift: f64,
    /// Largest pointwise eigenvalue displacement against `t = 0`.
    pub eigen_drift: f64,
}

#[derive(Clone, Debug)]
pub struct LoopTrajectory {
    pub records: Vec<FlowRecord>,
    pub final_state: LoopState,
}

impl LoopTrajectory {
    pub fn max_drift(&self) -> f64 {
        self.records.iter().fold(0.0, |m, r| m.max(r.drift))
    }

    pub fn max_eigen_drift(&self) -> f64 {
        self.records.iter().fold(0.0, |m, r| m.max(r.eigen_drift))
    }
}

/// Pointwise eigenvalues, matched to a reference list.
pub fn eigen_drift(state: &LoopState, reference: &[Vec<C64>]) -> f64 {
    let drifts = par::map_range(state.n_points(), |p| {
        let ev = linalg::eigenvalues(&state.c[p]);
        let perm = linalg::match_values(&reference[p], &ev);
        perm.iter().enumerate().fold(0.0f64, |m, (i, &j)| m.max((ev[j] - reference[p][i]).norm()))
    });
    drifts.into_iter().fold(0.0, f64::max)
}

/// Integrate `dC/dt = -[phi(b)_0, C]` with RK4.
pub fn integrate_flow(state: &LoopState, b: &FlowGenerator, opts: &FlowOptions) -> Result<LoopTrajectory> {
    state.check_smooth()?;
    if opts.dt <= 0.0 || !opts.dt.is_finite() {
        return Err(Error::InvalidConfig(format!("time step {} must be positive", opts.dt)));
    }
    let every = opts.record_every.max(1);
    let k_max = opts.conserved_order as i32 - 1;
    let reference_ev: Vec<Vec<C64>> = state.c.iter().map(linalg::eigenvalues).collect();
    let record = |step: usize, s: &LoopState, reference: Option<&ConservedTable>, anchor: &EigenData| -> Result<FlowRecord> {
        let table = conserved_anchored(s, opts.conserved_order, Some(anchor))?;
        let drift = reference.map_or(0.0, |r| table.relative_drift(r, k_max));
        Ok(FlowRecord { step, t: s.t, conserved: table, drift, eigen_drift: eigen_drift(s, &reference_ev) })
    };
    let mut anchor = base_anchor(state).map_err(|e| abort(state.t, e))?;
    let first = record(0, state, None, &anchor).map_err(|e| abort(state.t, e))?;
    let reference = first.conserved.clone();
    let mut records = vec![first];
    let mut cur = state.clone();
    for step in 1..=opts.steps {
        let t = cur.t;
        cur = rk4_step(&cur, b, opts.dt, Some(&anchor)).map_err(|e| abort(t, e))?;
        anchor = crate::dressing::loop_eigenframes(&cur, crate::models::DEFAULT_GAP_THRESHOLD, Some(&anchor))
            .map_err(|e| abort(cur.t, e))?
            .swap_remove(0);
        if step % every == 0 || step == opts.steps {
            records.push(record(step, &cur, Some(&reference), &anchor).map_err(|e| abort(cur.t, e))?);
        }
    }
    Ok(LoopTrajectory { records, final_state: cur })
}

fn abort(t: f64, e: Error) -> Error {
    match e {
        Error::FlowAborted { .. } => e,
        other => Error::FlowAborted { t, source: Box::new(other) },
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CommutativityReport {
    /// `(dt, ||C_12 - C_21||_inf)` for successive halvings.
    pub defects: Vec<(f64, f64)>,
    /// Ratios of successive defects.
    pub ratios: Vec<f64>,
    pub observed_order: f64,
}

/// Flow-order defect of one explicit Euler leg per flow, under dt halving.
///
/// The second-order part of the defect is the Lie bracket of the two vector
/// fields; when it vanishes the defect is `O(dt^3)` and successive ratios
/// approach 8.
pub fn check_commutativity(state: &LoopState, b1: &FlowGenerator, b2: &FlowGenerator, dt: f64, halvings: usize) -> Result<CommutativityReport> {
    state.check_smooth()?;
    let anchor = base_anchor(state)?;
    let a = Some(&anchor);
    let mut defects = Vec::new();
    let mut h = dt;
    for _ in 0..=halvings {
        let s12 = euler_step(&euler_step(state, b1, h, a)?, b2, h, a)?;
        let s21 = euler_step(&euler_step(state, b2, h, a)?, b1, h, a)?;
        let d = s12.c.iter().zip(&s21.c).fold(0.0f64, |m, (a, b)| m.max(linalg::max_abs_diff(a, b)));
        defects.push((h, d));
        h *= 0.5;
    }
    let ratios: Vec<f64> = defects.windows(2).map(|w| if w[1].1 == 0.0 { f64::NAN } else { w[0].1 / w[1].1 }).collect();
    let observed_order = ratios.last().map_or(f64::NAN, |r| r.log2());
    Ok(CommutativityReport { defects, ratios, observed_order })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{ONE, I};
    use crate::loops::LoopCurve;
    use crate::models::fixture;

    fn qh_loop(n: usize) -> LoopState {
        let m = fixture("qh_p1").unwrap();
        LoopState::from_model(&m, &LoopCurve::default_for(&m), n).unwrap()
    }

    pub(crate) fn generic_loop(n: usize) -> LoopState {
        LoopState::from_fn(n, linalg::eye(2), |s| {
            let off = c(0.4 + 0.2 * s.sin(), 0.0);
            Mat::from_row_slice(2, 2, &[c(2.0 + 0.3 * s.cos(), 0.0), off, off, c(-1.0 + 0.5 * (2.0 * s).sin(), 0.0)])
        })
        .unwrap()
    }

    #[test]
    fn parsing_generators() {
        let b = FlowGenerator::parse(&["2:1,0".into(), "1:0.5,-1".into(), "2:1,1".into()], 2).unwrap();
        assert_eq!(b.m(), 2);
        assert_eq!(b.coeff(2), &[c(2.0, 0.0), ONE]);
        assert_eq!(b.coeff(1), &[c(0.5, 0.0), -ONE]);
        assert!(FlowGenerator::parse(&["0:1,2".into()], 2).is_err());
        assert!(FlowGenerator::parse(&["1:1".into()], 2).is_err());
        assert!(FlowGenerator::parse(&["x".into()], 2).is_err());
        let s = b.series(2);
        assert_eq!((s.k_min(), s.k_max()), (-2, 2));
        assert_eq!(s.at(0), &linalg::zeros(2));
    }

    #[test]
    fn identity_dressing_gives_back_b() {
        let b = FlowGenerator::single(2, &[1.0, -2.0]);
        let t = vec![HSeries::identity(2, 3)];
        let phi = phi_of_b(&t, &b, 3).unwrap();
        assert_eq!(phi[0], b.series(1));
        assert!(matches!(phi_of_b(&t, &b, 1), Err(Error::WindowTooSmall { need: 2, have: 1 })));
    }

    #[test]
    fn scalar_loops_do_not_move() {
        let st = LoopState::from_fn(16, linalg::eye(1), |s| Mat::from_element(1, 1, c(1.0 + 0.2 * s.cos(), 0.1 * s.sin()))).unwrap();
        let b = FlowGenerator::single(2, &[1.0]);
        let rhs = lax_rhs_loop(&st, &b).unwrap();
        assert!(rhs.iter().all(|m| m[(0, 0)] == ZERO));
        let tr = integrate_flow(&st, &b, &FlowOptions { steps: 5, record_every: 1, ..Default::default() }).unwrap();
        assert_eq!(tr.final_state.c, st.c);
        let (h, ht) = hamiltonians(&st, &FlowGenerator::single(1, &[2.0])).unwrap();
        assert_eq!(h, ZERO);
        let direct = st.c.iter().fold(ZERO, |acc, m| acc - m[(0, 0)]) * st.spectral().unwrap().weight() * 2.0;
        assert!((ht - direct).norm() < 1e-14);
        assert_eq!(hamiltonians(&st, &FlowGenerator::single(1, &[0.0])).unwrap(), (ZERO, ZERO));
    }

    #[test]
    fn constant_diagonal_loop_is_stationary() {
        let st = LoopState::from_fn(16, linalg::eye(2), |_| linalg::diag(&[c(1.0, 0.0), c(-1.0, 0.0)])).unwrap();
        let rhs = lax_rhs_loop(&st, &FlowGenerator::single(2, &[1.0, 0.0])).unwrap();
        assert!(rhs.iter().all(|m| linalg::max_abs(m) == 0.0));
        let tab = conserved_quantities(&st, 3).unwrap();
        assert!(tab.values[1..].iter().flatten().all(|z| *z == ZERO));
    }

    #[test]
    fn unit_direction_flow_is_stationary() {
        let st = qh_loop(64);
        let rhs = lax_rhs_loop(&st, &FlowGenerator::single(1, &[1.0, 1.0])).unwrap();
        assert!(rhs.iter().all(|m| linalg::max_abs(m) < 1e-12));
    }

    #[test]
    fn commutator_identity_on_the_qh_loop() {
        let st = qh_loop(128);
        for b in [
            FlowGenerator::single(1, &[1.0, 0.0]),
            FlowGenerator::single(2, &[1.0, 0.0]),
            FlowGenerator::new(vec![vec![c(0.3, 0.0), -ONE], vec![ZERO, c(0.5, 0.0)], vec![c(0.2, 0.0), ZERO]]).unwrap(),
        ] {
            let d = crate::dressing::dress_loop(&st, b.m()).unwrap();
            let phi = phi_of_b(&d.t_full, &b, b.m()).unwrap();
            let res = commutator_identity(&st, &phi, &d.diff, b.m());
            assert_eq!(res.len(), b.m() + 1);
            assert!(res.iter().all(|(_, r)| *r < 1e-8), "{res:?}");
        }
    }

    #[test]
    fn phi_is_blind_to_diagonal_gauge() {
        let st = qh_loop(32);
        let b = FlowGenerator::single(2, &[1.0, -0.5]);
        let d = crate::dressing::dress_loop(&st, 3).unwrap();
        let phi = phi_of_b(&d.t_full, &b, 3).unwrap();
        let g = HSeries::new(2, 0, vec![linalg::eye(2), linalg::diag(&[c(0.2, 0.1), c(-0.3, 0.0)]), linalg::diag(&[I, ONE])]).unwrap().pad_exact(3);
        let t2: Vec<HSeries> = d.t_full.iter().map(|t| t * &g).collect();
        let phi2 = phi_of_b(&t2, &b, 3).unwrap();
        for (a, b) in phi.iter().zip(&phi2) {
            assert!(a.max_abs_diff(b) < 1e-13);
        }
    }

    #[test]
    fn one_step_is_isospectral() {
        let st = qh_loop(128);
        let b = FlowGenerator::single(2, &[1.0, 0.0]);
        let rhs = lax_rhs_loop(&st, &b).unwrap();
        assert!(rhs.iter().fold(0.0f64, |m, x| m.max(linalg::max_abs(x))) > 1e-3);
        let next = rk4_step(&st, &b, 1e-3, None).unwrap();
        for (a, b) in st.c.iter().zip(&next.c) {
            assert!((a.trace() - b.trace()).norm() < 1e-10);
            assert!((a.determinant() - b.determinant()).norm() < 1e-10);
        }
    }

    #[test]
    fn generic_loop_conserves_its_integrals() {
        let st = generic_loop(64);
        let b = FlowGenerator::single(2, &[1.0, 0.0]);
        let tr = integrate_flow(&st, &b, &FlowOptions { dt: 1e-3, steps: 20, record_every: 10, conserved_order: 3 }).unwrap();
        assert!(tr.max_drift() < 1e-9, "{}", tr.max_drift());
        assert!(tr.max_eigen_drift() < 1e-10);
        assert!(tr.records[0].conserved.get(1, 0).norm() > 1e-4);
    }

    #[test]
    fn flows_commute_to_third_order() {
        let st = generic_loop(64);
        let b1 = FlowGenerator::single(1, &[1.0, 0.0]);
        let b2 = FlowGenerator::single(2, &[0.0, 1.0]);
        let r = check_commutativity(&st, &b1, &b2, 1e-2, 2).unwrap();
        assert!(r.ratios.iter().all(|x| (x - 8.0).abs() < 1.0), "{r:?}");
        let same = check_commutativity(&st, &b1, &b1, 1e-2, 1).unwrap();
        assert!(same.defects.iter().all(|(_, d)| *d == 0.0));
    }

    #[test]
    fn collisions_abort_with_time() {
        let st = LoopState::from_fn(16, linalg::eye(2), |_| linalg::eye(2)).unwrap();
        let r = integrate_flow(&st, &FlowGenerator::single(1, &[1.0, 0.0]), &FlowOptions::default());
        assert!(matches!(r, Err(Error::FlowAborted { .. })));
    }
}
