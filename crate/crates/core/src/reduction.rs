//! Simultaneous diagonalization, canonical coordinates and gauge potentials.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::linalg::{self, c, Mat, C64, ONE, ZERO};
use crate::models::{FrobeniusModel, DEFAULT_GAP_THRESHOLD};
use crate::par;

/// `|eta(v, v)| / |v|^2` below this counts as an isotropic eigenvector.
pub const ISOTROPY_TOL: f64 = 1e-10;

/// Eigenvalues of the pencil and the normalized eigenvector matrix (columns).
#[derive(Clone, Debug, PartialEq)]
pub struct EigenData {
    pub values: Vec<C64>,
    pub t0: Mat,
}

fn describe(x: &[f64]) -> String {
    let parts: Vec<String> = x.iter().map(|v| format!("{v:.6}")).collect();
    format!("x = ({})", parts.join(", "))
}

fn normalized(v: Vec<C64>, eta: &Mat, location: &str) -> Result<Vec<C64>> {
    let q = linalg::bilinear(eta, &v, &v);
    let scale: f64 = v.iter().map(|z| z.norm_sqr()).sum();
    if q.norm() <= ISOTROPY_TOL * scale {
        return Err(Error::NormalizationSingular { location: location.to_string(), value: q.norm() / scale });
    }
    let r = q.sqrt();
    Ok(v.into_iter().map(|z| z / r).collect())
}

/// Flip so that the first largest-modulus entry has argument in `(-pi/2, pi/2]`.
fn sign_rule(v: Vec<C64>) -> Vec<C64> {
    let top = v.iter().fold(0.0f64, |m, z| m.max(z.norm()));
    let lead = v.iter().find(|z| z.norm() >= top * (1.0 - 1e-12)).copied().unwrap_or(ONE);
    let tol = 1e-12 * lead.norm();
    let flip = lead.re < -tol || (lead.re.abs() <= tol && lead.im < 0.0);
    if flip {
        v.into_iter().map(|z| -z).collect()
    } else {
        v
    }
}

fn check_gap(values: &[C64], threshold: f64, location: &str) -> Result<()> {
    let gap = linalg::min_gap(values);
    if gap < threshold {
        return Err(Error::EigenvalueCollision { location: location.to_string(), gap, threshold });
    }
    Ok(())
}

fn columns(vs: &[Vec<C64>]) -> Mat {
    let n = vs.len();
    Mat::from_fn(n, n, |i, j| vs[j][i])
}

/// Eigenframe of a generic element at a base point: descending lexicographic
/// order of eigenvalues, `eta`-normalized columns, deterministic signs.
pub fn diagonalize_base(p: &Mat, eta: &Mat, gap_threshold: f64, location: &str) -> Result<EigenData> {
    let mut values = linalg::eigenvalues(p);
    check_gap(&values, gap_threshold, location)?;
    let scale = values.iter().fold(1.0f64, |m, z| m.max(z.norm()));
    values.sort_by(|a, b| {
        if (a.re - b.re).abs() > 1e-12 * scale {
            b.re.partial_cmp(&a.re).unwrap()
        } else {
            b.im.partial_cmp(&a.im).unwrap()
        }
    });
    let vs = values
        .iter()
        .map(|&l| normalized(linalg::eigenvector(p, l), eta, location).map(sign_rule))
        .collect::<Result<Vec<_>>>()?;
    Ok(EigenData { values, t0: columns(&vs) })
}

/// Eigenframe continued from a neighbouring one: nearest eigenvalue matching and
/// the sign closest to the neighbour's columns.
pub fn diagonalize_continued(p: &Mat, eta: &Mat, prev: &EigenData, gap_threshold: f64, location: &str) -> Result<EigenData> {
    let raw = linalg::eigenvalues(p);
    check_gap(&raw, gap_threshold, location)?;
    let perm = linalg::match_values(&prev.values, &raw);
    let values: Vec<C64> = perm.iter().map(|&j| raw[j]).collect();
    let n = values.len();
    let mut vs = Vec::with_capacity(n);
    for (i, &l) in values.iter().enumerate() {
        let v = normalized(linalg::eigenvector(p, l), eta, location)?;
        let plus: f64 = (0..n).map(|r| (v[r] - prev.t0[(r, i)]).norm_sqr()).sum();
        let minus: f64 = (0..n).map(|r| (v[r] + prev.t0[(r, i)]).norm_sqr()).sum();
        vs.push(if minus < plus { v.into_iter().map(|z| -z).collect() } else { v });
    }
    Ok(EigenData { values, t0: columns(&vs) })
}

/// Pointwise eigenframe of a model: `T0` and the diagonal entries of every `a_alpha`.
pub fn eigenframe_at(model: &FrobeniusModel, x: &[C64]) -> Result<(Mat, Vec<Vec<C64>>)> {
    let cs = model.eval_c(x);
    let loc: Vec<String> = x.iter().map(|z| format!("{:.6}{:+.6}i", z.re, z.im)).collect();
    let e = diagonalize_base(&model.pencil_matrix(&cs), &model.eta, DEFAULT_GAP_THRESHOLD, &format!("x = ({})", loc.join(", ")))?;
    let t0_inv = e.t0.transpose() * &model.eta;
    let a = cs.iter().map(|m| linalg::diag_entries(&(&t0_inv * m * &e.t0))).collect();
    Ok((e.t0, a))
}

#[derive(Clone, Debug)]
pub struct FrameOptions {
    pub gap_threshold: f64,
    /// Accuracy order of the finite differences of `T0`.
    pub fd_order: usize,
    /// Largest admissible disagreement of `u` between two integration paths.
    pub path_tol: f64,
    /// Eigenvector columns negated at the base point (gauge probe).
    pub flip_basepoint: Vec<usize>,
}

impl Default for FrameOptions {
    fn default() -> Self {
        Self { gap_threshold: DEFAULT_GAP_THRESHOLD, fd_order: 2, path_tol: 1e-2, flip_basepoint: Vec::new() }
    }
}

/// Eigenframes on every grid node, continued along a spanning tree from `basepoint`.
pub fn eigenframes_on_grid(
    grid: &Grid,
    pencil_field: &[Mat],
    eta: &Mat,
    basepoint: usize,
    opts: &FrameOptions,
) -> Result<Vec<EigenData>> {
    let axes: Vec<usize> = (0..grid.dim()).collect();
    let tree = grid.spanning_tree(basepoint, &axes);
    let mut out: Vec<Option<EigenData>> = vec![None; grid.len()];
    for &p in &tree.order {
        let loc = describe(&grid.point(p));
        let e = match tree.parent[p] {
            None => {
                let mut e = diagonalize_base(&pencil_field[p], eta, opts.gap_threshold, &loc)?;
                for &j in &opts.flip_basepoint {
                    let col = -e.t0.column(j).clone_owned();
                    e.t0.set_column(j, &col);
                }
                e
            }
            Some(edge) => {
                let prev = out[edge.parent].as_ref().expect("parent processed first");
                diagonalize_continued(&pencil_field[p], eta, prev, opts.gap_threshold, &loc)?
            }
        };
        out[p] = Some(e);
    }
    Ok(out.into_iter().map(|e| e.expect("tree spans grid")).collect())
}

#[derive(Clone, Debug, Default, Serialize, PartialEq)]
pub struct FrameResiduals {
    pub offdiag: f64,
    pub orthonormality: f64,
    pub closedness: f64,
    pub q_antisymmetry: f64,
    pub q_antisymmetry_interior: f64,
    pub path_deviation: f64,
    pub min_jacobian_det: f64,
    pub min_gap: f64,
}

#[derive(Clone, Debug)]
pub struct SemisimpleFrame {
    pub grid: Grid,
    pub basepoint: usize,
    pub eta: Mat,
    pub fd_order: usize,
    pub eigen: Vec<EigenData>,
    pub t0_inv: Vec<Mat>,
    /// `a[alpha][p]`: diagonal entries of `T0^-1 C_alpha T0`.
    pub a: Vec<Vec<Vec<C64>>>,
    /// `u[p][i]`, zero at the base point.
    pub u: Vec<Vec<C64>>,
    /// `q[alpha][p] = T0^-1 d_alpha T0`.
    pub q: Vec<Vec<Mat>>,
    /// `jac[p][(i, alpha)] = du^i / dx^alpha`.
    pub jac: Vec<Mat>,
    pub jac_inv: Vec<Mat>,
    pub residuals: FrameResiduals,
}

impl SemisimpleFrame {
    pub fn n(&self) -> usize {
        self.eta.nrows()
    }

    pub fn t0(&self, p: usize) -> &Mat {
        &self.eigen[p].t0
    }

    pub fn t0_field(&self) -> Vec<Mat> {
        self.eigen.iter().map(|e| e.t0.clone()).collect()
    }
}

/// Frame data from structure fields `cs[alpha][p]` sampled on a grid.
pub fn frame_from_fields(
    grid: &Grid,
    cs: &[Vec<Mat>],
    eta: &Mat,
    pencil: &[f64],
    basepoint: usize,
    opts: &FrameOptions,
) -> Result<SemisimpleFrame> {
    let n = eta.nrows();
    let np = grid.len();
    let pencil_field: Vec<Mat> = (0..np)
        .map(|p| {
            let at: Vec<Mat> = cs.iter().map(|f| f[p].clone()).collect();
            crate::models::pencil_of(pencil, &at)
        })
        .collect();
    let eigen = eigenframes_on_grid(grid, &pencil_field, eta, basepoint, opts)?;
    let mut t0_inv = Vec::with_capacity(np);
    let mut res = FrameResiduals { min_gap: f64::INFINITY, min_jacobian_det: f64::INFINITY, ..Default::default() };
    for (p, e) in eigen.iter().enumerate() {
        res.min_gap = res.min_gap.min(linalg::min_gap(&e.values));
        res.orthonormality = res.orthonormality.max(linalg::max_abs_diff(&(e.t0.transpose() * eta * &e.t0), &linalg::eye(n)));
        // evolved data need not be eta-self-adjoint, so invert honestly
        t0_inv.push(e.t0.clone().try_inverse().ok_or_else(|| Error::OutsideDomain(format!("singular frame at {}", describe(&grid.point(p)))))?);
    }
    let mut a = vec![vec![Vec::new(); np]; n];
    for al in 0..n {
        for p in 0..np {
            let m = &t0_inv[p] * &cs[al][p] * &eigen[p].t0;
            res.offdiag = res.offdiag.max(linalg::max_abs(&linalg::offdiag_part(&m)));
            a[al][p] = linalg::diag_entries(&m);
        }
    }
    let a_mats: Vec<Vec<Mat>> = a.iter().map(|f| f.iter().map(|d| linalg::diag(d)).collect()).collect();
    for al in 0..n {
        for be in (al + 1)..n {
            let d1 = grid.derivative(&a_mats[al], be, opts.fd_order)?;
            let d2 = grid.derivative(&a_mats[be], al, opts.fd_order)?;
            for p in 0..np {
                res.closedness = res.closedness.max(linalg::max_abs_diff(&d1[p], &d2[p]));
            }
        }
    }
    let u = integrate_u(grid, &a, basepoint, &(0..n).collect::<Vec<_>>());
    if n > 1 {
        let rev: Vec<usize> = (0..n).rev().collect();
        let u2 = integrate_u(grid, &a, basepoint, &rev);
        for p in 0..np {
            for i in 0..n {
                res.path_deviation = res.path_deviation.max((u[p][i] - u2[p][i]).norm());
            }
        }
        if res.path_deviation > opts.path_tol {
            return Err(Error::PathInconsistency { deviation: res.path_deviation });
        }
    }
    let t0_field: Vec<Mat> = eigen.iter().map(|e| e.t0.clone()).collect();
    let mut q = Vec::with_capacity(n);
    for al in 0..n {
        let d = grid.derivative(&t0_field, al, opts.fd_order)?;
        q.push((0..np).map(|p| &t0_inv[p] * &d[p]).collect::<Vec<Mat>>());
    }
    let interior = grid.interior(1);
    for f in &q {
        for (p, m) in f.iter().enumerate() {
            let r = linalg::max_abs(&(m + m.transpose()));
            res.q_antisymmetry = res.q_antisymmetry.max(r);
            if interior.binary_search(&p).is_ok() {
                res.q_antisymmetry_interior = res.q_antisymmetry_interior.max(r);
            }
        }
    }
    let jac: Vec<Mat> = (0..np).map(|p| Mat::from_fn(n, n, |i, al| a[al][p][i])).collect();
    let mut jac_inv = Vec::with_capacity(np);
    for (p, j) in jac.iter().enumerate() {
        res.min_jacobian_det = res.min_jacobian_det.min(j.determinant().norm());
        jac_inv.push(j.clone().try_inverse().ok_or_else(|| Error::OutsideDomain(format!("singular Jacobian at {}", describe(&grid.point(p)))))?);
    }
    Ok(SemisimpleFrame {
        grid: grid.clone(),
        basepoint,
        eta: eta.clone(),
        fd_order: opts.fd_order,
        eigen,
        t0_inv,
        a,
        u,
        q,
        jac,
        jac_inv,
        residuals: res,
    })
}

/// Trapezoid integration of `du^i = a_alpha^i dx^alpha` along a spanning tree.
fn integrate_u(grid: &Grid, a: &[Vec<Vec<C64>>], basepoint: usize, axis_order: &[usize]) -> Vec<Vec<C64>> {
    let n = a.len();
    let tree = grid.spanning_tree(basepoint, axis_order);
    let mut u = vec![vec![ZERO; n]; grid.len()];
    for &p in &tree.order {
        if let Some(e) = tree.parent[p] {
            let h = grid.spacing(e.axis) * if e.forward { 1.0 } else { -1.0 };
            for i in 0..n {
                u[p][i] = u[e.parent][i] + (a[e.axis][e.parent][i] + a[e.axis][p][i]) * (0.5 * h);
            }
        }
    }
    u
}

/// Semisimple frame of a model on a grid.
pub fn build_frame(model: &FrobeniusModel, grid: &Grid, basepoint: usize, opts: &FrameOptions) -> Result<SemisimpleFrame> {
    if grid.dim() != model.n {
        return Err(Error::DimensionMismatch { expected: model.n, found: grid.dim() });
    }
    let pts = grid.points();
    let evals: Vec<Vec<Mat>> = par::map(&pts, |x| model.eval_c_real(x));
    let cs: Vec<Vec<Mat>> = (0..model.n).map(|al| evals.iter().map(|e| e[al].clone()).collect()).collect();
    frame_from_fields(grid, &cs, &model.eta, &model.pencil, basepoint, opts)
}

#[derive(Clone, Debug, Default, Serialize, PartialEq)]
pub struct UFrameResiduals {
    /// `max |[q_i, e_j] - [q_j, e_i]|`.
    pub commutation: f64,
    /// `max |q_i - [e_i, Q]|`.
    pub structure: f64,
    /// `max |Q - Q^T|`.
    pub symmetry: f64,
    pub max_q: f64,
}

#[derive(Clone, Debug)]
pub struct UFrame {
    pub grid: Grid,
    /// Preimage `x(u)` of every u-grid node.
    pub x_of_u: Vec<Vec<f64>>,
    /// `q[i][p]`.
    pub q: Vec<Vec<Mat>>,
    pub big_q: Vec<Mat>,
    pub residuals: UFrameResiduals,
}

#[derive(Clone, Debug, Default)]
pub struct UFrameOptions {
    /// Explicit u-grid; chosen automatically when absent.
    pub grid: Option<Grid>,
}

/// Matrix unit `e_i`.
pub fn unit_matrix(n: usize, i: usize) -> Mat {
    Mat::from_fn(n, n, |r, c| if r == i && c == i { ONE } else { ZERO })
}

fn real_u(frame: &SemisimpleFrame) -> Result<Vec<Vec<f64>>> {
    let scale = frame.u.iter().flatten().fold(1.0f64, |m, z| m.max(z.norm()));
    let mut out = Vec::with_capacity(frame.u.len());
    for (p, u) in frame.u.iter().enumerate() {
        if u.iter().any(|z| z.im.abs() > 1e-10 * scale) {
            return Err(Error::OutsideDomain(format!(
                "canonical coordinates are not real at {}",
                describe(&frame.grid.point(p))
            )));
        }
        out.push(u.iter().map(|z| z.re).collect());
    }
    Ok(out)
}

struct Inverter<'a> {
    frame: &'a SemisimpleFrame,
    u_fields: Vec<Mat>,
    jac_fields: Vec<Mat>,
    u_real: Vec<Vec<f64>>,
}

impl<'a> Inverter<'a> {
    fn new(frame: &'a SemisimpleFrame) -> Result<Self> {
        let n = frame.n();
        let u_real = real_u(frame)?;
        let u_fields = u_real.iter().map(|u| Mat::from_fn(n, 1, |i, _| c(u[i], 0.0))).collect();
        Ok(Self { frame, u_fields, jac_fields: frame.jac.clone(), u_real })
    }

    /// Newton solve of `u(x) = target` on the interpolated map.
    fn invert(&self, target: &[f64]) -> Option<Vec<f64>> {
        let g = &self.frame.grid;
        let n = target.len();
        let start = (0..g.len())
            .min_by(|&a, &b| {
                let da: f64 = (0..n).map(|i| (self.u_real[a][i] - target[i]).powi(2)).sum();
                let db: f64 = (0..n).map(|i| (self.u_real[b][i] - target[i]).powi(2)).sum();
                da.partial_cmp(&db).unwrap()
            })
            .unwrap();
        let mut x = g.point(start);
        let span: f64 = (0..n).map(|d| g.hi[d] - g.lo[d]).fold(0.0, f64::max);
        for _ in 0..60 {
            let u = g.interpolate(&self.u_fields, &x);
            let j = g.interpolate(&self.jac_fields, &x).map(|z| z.re);
            let r = nalgebra::DVector::from_fn(n, |i, _| u[(i, 0)].re - target[i]);
            let dx = j.lu().solve(&r)?;
            for d in 0..n {
                x[d] -= dx[d];
            }
            if !g.contains(&x, 1e-9 * span) {
                return None;
            }
            if dx.norm() < 1e-14 * span {
                break;
            }
        }
        for d in 0..n {
            x[d] = x[d].clamp(g.lo[d], g.hi[d]);
        }
        let u = g.interpolate(&self.u_fields, &x);
        let miss: f64 = (0..n).map(|i| (u[(i, 0)].re - target[i]).abs()).fold(0.0, f64::max);
        (miss < 1e-10 * (1.0 + span)).then_some(x)
    }

    fn invert_all(&self, ugrid: &Grid) -> Option<Vec<Vec<f64>>> {
        let pts = ugrid.points();
        let found = par::map(&pts, |u| self.invert(u));
        found.into_iter().collect()
    }
}

/// Largest centred square-aspect u-box whose nodes all have preimages in the x-grid.
fn auto_u_grid(frame: &SemisimpleFrame, inv: &Inverter) -> Result<(Grid, Vec<Vec<f64>>)> {
    let n = frame.n();
    let g = &frame.grid;
    let center = inv.u_real[g.center_index()].clone();
    let mut radius: Vec<f64> = (0..n)
        .map(|i| {
            let lo = inv.u_real.iter().map(|u| u[i]).fold(f64::INFINITY, f64::min);
            let hi = inv.u_real.iter().map(|u| u[i]).fold(f64::NEG_INFINITY, f64::max);
            (center[i] - lo).min(hi - center[i])
        })
        .collect();
    for _ in 0..60 {
        let lo: Vec<f64> = (0..n).map(|i| center[i] - radius[i]).collect();
        let hi: Vec<f64> = (0..n).map(|i| center[i] + radius[i]).collect();
        let ug = Grid::new(lo, hi, g.counts.clone())?;
        if let Some(xs) = inv.invert_all(&ug) {
            return Ok((ug, xs));
        }
        radius.iter_mut().for_each(|r| *r *= 0.9);
    }
    Err(Error::OutsideDomain("no u-box inverts inside the x-grid".into()))
}

/// Gauge potentials `q_i` resampled on a rectangular grid in canonical coordinates.
pub fn to_u_frame(frame: &SemisimpleFrame, opts: &UFrameOptions) -> Result<UFrame> {
    let n = frame.n();
    let inv = Inverter::new(frame)?;
    let (grid, x_of_u) = match &opts.grid {
        Some(g) => {
            let xs = inv
                .invert_all(g)
                .ok_or_else(|| Error::OutsideDomain("u-grid leaves the image of the x-grid".into()))?;
            (g.clone(), xs)
        }
        None => auto_u_grid(frame, &inv)?,
    };
    let g = &frame.grid;
    let per_point: Vec<Vec<Mat>> = par::map(&x_of_u, |x| {
        let jinv = g.interpolate(&frame.jac_inv, x);
        let q_alpha: Vec<Mat> = frame.q.iter().map(|f| g.interpolate(f, x)).collect();
        (0..n)
            .map(|i| (0..n).fold(linalg::zeros(n), |acc, al| acc + &q_alpha[al] * jinv[(al, i)]))
            .collect()
    });
    Ok(assemble_u_frame(grid, x_of_u, per_point))
}

fn assemble_u_frame(grid: Grid, x_of_u: Vec<Vec<f64>>, per_point: Vec<Vec<Mat>>) -> UFrame {
    let n = per_point.first().map_or(0, |v| v.len());
    let q: Vec<Vec<Mat>> = (0..n).map(|i| per_point.iter().map(|v| v[i].clone()).collect()).collect();
    let big_q: Vec<Mat> = per_point
        .iter()
        .map(|qs| Mat::from_fn(n, n, |a, b| if a == b { ZERO } else { qs[a][(a, b)] }))
        .collect();
    let mut res = UFrameResiduals::default();
    let e: Vec<Mat> = (0..n).map(|i| unit_matrix(n, i)).collect();
    for qs in per_point.iter() {
        let bq = Mat::from_fn(n, n, |a, b| if a == b { ZERO } else { qs[a][(a, b)] });
        res.symmetry = res.symmetry.max(linalg::max_abs_diff(&bq, &bq.transpose()));
        for i in 0..n {
            res.max_q = res.max_q.max(linalg::max_abs(&qs[i]));
            res.structure = res.structure.max(linalg::max_abs_diff(&qs[i], &linalg::commutator(&e[i], &bq)));
            for j in 0..n {
                let r = linalg::commutator(&qs[i], &e[j]) - linalg::commutator(&qs[j], &e[i]);
                res.commutation = res.commutation.max(linalg::max_abs(&r));
            }
        }
    }
    UFrame { grid, x_of_u, q, big_q, residuals: res }
}

/// Derivatives `d C_beta / d x^alpha` as `[alpha][beta]`, from a contour average
/// (the structure matrices are holomorphic in `x`).
pub fn structure_derivatives(model: &FrobeniusModel, x: &[f64]) -> Vec<Vec<Mat>> {
    const NODES: usize = 16;
    const RADIUS: f64 = 0.05;
    let n = model.n;
    (0..n)
        .map(|al| {
            let mut acc = vec![linalg::zeros(n); n];
            for k in 0..NODES {
                let w = C64::from_polar(1.0, 2.0 * std::f64::consts::PI * k as f64 / NODES as f64);
                let mut z: Vec<C64> = x.iter().map(|&v| c(v, 0.0)).collect();
                z[al] += w * RADIUS;
                for (b, m) in model.eval_c(&z).into_iter().enumerate() {
                    acc[b] += m * (w.conj() / (RADIUS * NODES as f64));
                }
            }
            acc
        })
        .collect()
}

/// Frame data at one point, continued from a neighbour.
#[derive(Clone, Debug)]
pub struct PointFrame {
    pub x: Vec<f64>,
    pub eigen: EigenData,
    /// `a[alpha][i]`.
    pub a: Vec<Vec<C64>>,
}

impl PointFrame {
    pub fn continued(model: &FrobeniusModel, x: &[f64], prev: &EigenData) -> Result<Self> {
        let cs = model.eval_c_real(x);
        let eigen = diagonalize_continued(&model.pencil_matrix(&cs), &model.eta, prev, DEFAULT_GAP_THRESHOLD, &describe(x))?;
        let t_inv = eigen.t0.transpose() * &model.eta;
        let a = cs.iter().map(|m| linalg::diag_entries(&(&t_inv * m * &eigen.t0))).collect();
        Ok(Self { x: x.to_vec(), eigen, a })
    }

    /// `q_alpha = T0^-1 d_alpha T0` from the perturbation formula for eigenvectors.
    pub fn gauge_potentials(&self, model: &FrobeniusModel) -> Vec<Mat> {
        let n = model.n;
        let t_inv = self.eigen.t0.transpose() * &model.eta;
        let p = &self.eigen.values;
        structure_derivatives(model, &self.x)
            .iter()
            .map(|dcs| {
                let dp = t_inv.clone() * model.pencil_matrix(dcs) * &self.eigen.t0;
                Mat::from_fn(n, n, |i, j| if i == j { ZERO } else { dp[(i, j)] / (p[j] - p[i]) })
            })
            .collect()
    }

    fn jacobian(&self) -> nalgebra::DMatrix<f64> {
        let n = self.a.len();
        nalgebra::DMatrix::from_fn(n, n, |i, al| self.a[al][i].re)
    }
}

const GAUSS5: [(f64, f64); 5] = [
    (-0.906_179_845_938_664, 0.236_926_885_056_189_1),
    (-0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (0.0, 0.568_888_888_888_888_9),
    (0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (0.906_179_845_938_664, 0.236_926_885_056_189_1),
];

/// Canonical-coordinate increment `int a . dx` along a straight segment, and the frame at its end.
fn segment_increment(model: &FrobeniusModel, start: &PointFrame, end: &[f64]) -> Result<(Vec<C64>, PointFrame)> {
    let n = model.n;
    let len: f64 = start.x.iter().zip(end).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let panels = ((len / 0.05).ceil() as usize).max(1);
    let dir: Vec<f64> = start.x.iter().zip(end).map(|(a, b)| b - a).collect();
    let at = |t: f64| -> Vec<f64> { start.x.iter().zip(&dir).map(|(a, d)| a + t * d).collect() };
    let mut du = vec![ZERO; n];
    let mut cur = start.clone();
    for k in 0..panels {
        let (t0, t1) = (k as f64 / panels as f64, (k + 1) as f64 / panels as f64);
        for &(xi, w) in &GAUSS5 {
            let f = PointFrame::continued(model, &at(0.5 * (t0 + t1) + 0.5 * (t1 - t0) * xi), &cur.eigen)?;
            for i in 0..n {
                for al in 0..n {
                    du[i] += f.a[al][i] * (0.5 * (t1 - t0) * w * dir[al]);
                }
            }
            cur = f;
        }
        cur = PointFrame::continued(model, &at(t1), &cur.eigen)?;
    }
    Ok((du, cur))
}

/// Like [`to_u_frame`], but every node is re-solved pointwise against the model:
/// canonical coordinates by Gauss quadrature along segments, gauge potentials
/// in closed form. The result is free of interpolation noise, so it can be
/// differentiated to high order.
pub fn to_u_frame_pointwise(model: &FrobeniusModel, frame: &SemisimpleFrame, opts: &UFrameOptions) -> Result<UFrame> {
    let n = frame.n();
    let coarse = to_u_frame(frame, opts)?;
    let base_x = frame.grid.point(frame.basepoint);
    let base = PointFrame::continued(model, &base_x, &frame.eigen[frame.basepoint])?;
    let base_u = frame.u[frame.basepoint].clone();
    let targets = coarse.grid.points();
    let solved: Vec<Result<(Vec<f64>, Vec<Mat>)>> = par::map_range(targets.len(), |p| {
        let target = &targets[p];
        let (du, mut cur) = segment_increment(model, &base, &coarse.x_of_u[p])?;
        let mut u: Vec<C64> = base_u.iter().zip(&du).map(|(a, b)| a + b).collect();
        for _ in 0..30 {
            let r = nalgebra::DVector::from_fn(n, |i, _| target[i] - u[i].re);
            if r.amax() < 1e-14 * (1.0 + target.iter().fold(0.0f64, |m, v| m.max(v.abs()))) {
                break;
            }
            let dx = cur.jacobian().lu().solve(&r).ok_or_else(|| Error::OutsideDomain(describe(&cur.x)))?;
            let next: Vec<f64> = cur.x.iter().zip(dx.iter()).map(|(a, b)| a + b).collect();
            let (du, f) = segment_increment(model, &cur, &next)?;
            u.iter_mut().zip(&du).for_each(|(a, b)| *a += b);
            cur = f;
        }
        let q_alpha = cur.gauge_potentials(model);
        let jinv = cur.jacobian().try_inverse().ok_or_else(|| Error::OutsideDomain(describe(&cur.x)))?;
        let qs = (0..n)
            .map(|i| (0..n).fold(linalg::zeros(n), |acc, al| acc + &q_alpha[al] * c(jinv[(al, i)], 0.0)))
            .collect();
        Ok((cur.x.clone(), qs))
    });
    let mut x_of_u = Vec::with_capacity(solved.len());
    let mut per_point = Vec::with_capacity(solved.len());
    for s in solved {
        let (x, qs) = s?;
        x_of_u.push(x);
        per_point.push(qs);
    }
    Ok(assemble_u_frame(coarse.grid, x_of_u, per_point))
}

/// Closed-form canonical coordinates of `qh_p1`: `u = x^1 +- 2 (e^{x^2/2} - 1)`.
pub fn qh_p1_canonical(x: &[f64]) -> [f64; 2] {
    let s = (0.5 * x[1]).exp();
    [x[0] + 2.0 * (s - 1.0), x[0] - 2.0 * (s - 1.0)]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::fixture;

    fn c0(re: f64) -> C64 {
        c(re, 0.0)
    }

    #[test]
    fn trivial_frame_is_the_identity() {
        let m = fixture("trivial_diag(3)").unwrap();
        let (t0, a) = eigenframe_at(&m, &[c0(0.1), c0(-0.4), c0(0.7)]).unwrap();
        assert_eq!(t0, linalg::eye(3));
        for al in 0..3 {
            for i in 0..3 {
                assert_eq!(a[al][i], if al == i { ONE } else { ZERO });
            }
        }
    }

    #[test]
    fn qh_p1_frame_at_origin() {
        let m = fixture("qh_p1").unwrap();
        let (t0, a) = eigenframe_at(&m, &[c0(0.0), c0(0.0)]).unwrap();
        let r = 0.5f64.sqrt();
        let expect = Mat::from_row_slice(2, 2, &[c(r, 0.0), c(0.0, r), c(r, 0.0), c(0.0, -r)]);
        assert!(linalg::max_abs_diff(&t0, &expect) < 1e-15);
        assert!((a[1][0] - c0(1.0)).norm() < 1e-15 && (a[1][1] + c0(1.0)).norm() < 1e-15);
    }

    #[test]
    fn qh_p1_frame_matches_closed_form_everywhere() {
        // T0 = [[sqrt(s/2), i sqrt(s/2)], [1/sqrt(2s), -i/sqrt(2s)]] with s = e^{x^2/2}.
        let m = fixture("qh_p1").unwrap();
        for &(x1, x2) in &[(0.3, -0.8), (-1.0, 1.0), (0.5, 0.25)] {
            let (t0, a) = eigenframe_at(&m, &[c0(x1), c0(x2)]).unwrap();
            let s = (0.5 * x2).exp();
            let (p, q) = ((s / 2.0).sqrt(), 1.0 / (2.0 * s).sqrt());
            // For x^2 < 0 the largest entry of the second column is -i/sqrt(2s): the sign rule flips it.
            let sg = if x2 < 0.0 { -1.0 } else { 1.0 };
            let expect = Mat::from_row_slice(2, 2, &[c(p, 0.0), c(0.0, sg * p), c(q, 0.0), c(0.0, -sg * q)]);
            assert!(linalg::max_abs_diff(&t0, &expect) < 1e-14, "{t0} vs {expect}");
            assert!((a[1][0] - c0(s)).norm() < 1e-14 && (a[1][1] + c0(s)).norm() < 1e-14);
            assert!((a[0][0] - ONE).norm() < 1e-15 && (a[0][1] - ONE).norm() < 1e-15);
        }
    }

    #[test]
    fn caustic_and_isotropic_vectors_are_errors() {
        let m = fixture("a2_poly").unwrap();
        assert!(matches!(eigenframe_at(&m, &[c0(0.2), c0(0.0)]), Err(Error::EigenvalueCollision { .. })));
        let eta = linalg::from_real_rows(&[vec![1.0, 0.0], vec![0.0, -1.0]]);
        let p = linalg::from_real_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]);
        assert!(matches!(diagonalize_base(&p, &eta, 1e-6, "probe"), Err(Error::NormalizationSingular { .. })));
    }

    #[test]
    fn trivial_frame_on_grid_is_exact() {
        let m = fixture("trivial_diag(2)").unwrap();
        let g = m.domain_grid(9).unwrap();
        let f = build_frame(&m, &g, g.center_index(), &FrameOptions::default()).unwrap();
        for p in 0..g.len() {
            let x = g.point(p);
            let xc = g.point(g.center_index());
            for i in 0..2 {
                assert_eq!(f.u[p][i], c0(x[i] - xc[i]));
                assert!(f.q[i][p].iter().all(|z| *z == ZERO));
            }
        }
        let uf = to_u_frame(&f, &UFrameOptions::default()).unwrap();
        assert!(uf.q.iter().flatten().all(|m| m.iter().all(|z| *z == ZERO)));
        assert!(uf.big_q.iter().all(|m| m.iter().all(|z| *z == ZERO)));
    }

    #[test]
    fn qh_p1_frame_and_u_frame() {
        let m = fixture("qh_p1").unwrap();
        let g = m.domain_grid(33).unwrap();
        let base = g.center_index();
        let f = build_frame(&m, &g, base, &FrameOptions::default()).unwrap();
        assert!(f.residuals.q_antisymmetry_interior < 1e-8, "{:?}", f.residuals);
        assert!(f.residuals.offdiag < 1e-13 && f.residuals.orthonormality < 1e-13);
        assert!(f.residuals.min_jacobian_det > 1.0);
        let h2 = g.spacing(0).powi(2);
        for p in 0..g.len() {
            let u = qh_p1_canonical(&g.point(p));
            for i in 0..2 {
                assert!((f.u[p][i] - c0(u[i])).norm() < 0.1 * h2, "u mismatch");
            }
        }
        let uf = to_u_frame(&f, &UFrameOptions::default()).unwrap();
        assert!(uf.residuals.symmetry < 1e-6 && uf.residuals.commutation < 1e-6, "{:?}", uf.residuals);
        assert!(uf.residuals.structure < 1e-6);
        // Closed form: Q = i/(8 + 2(u^1 - u^2)) sigma_x.
        for (p, u) in uf.grid.points().iter().enumerate() {
            let expect = c(0.0, 1.0) / (8.0 + 2.0 * (u[0] - u[1]));
            assert!((uf.big_q[p][(0, 1)] - expect).norm() < 1e-4);
        }
    }

    #[test]
    fn sign_flip_at_base_is_a_constant_diagonal_gauge() {
        let m = fixture("qh_p1").unwrap();
        let g = m.domain_grid(9).unwrap();
        let base = g.center_index();
        let f1 = build_frame(&m, &g, base, &FrameOptions::default()).unwrap();
        let f2 = build_frame(&m, &g, base, &FrameOptions { flip_basepoint: vec![1], ..Default::default() }).unwrap();
        let d = linalg::diag(&[ONE, -ONE]);
        for p in 0..g.len() {
            assert!(linalg::max_abs_diff(&(f1.t0(p) * &d), f2.t0(p)) < 1e-15);
            assert_eq!(f1.u[p], f2.u[p]);
            assert_eq!(f1.a[1][p], f2.a[1][p]);
        }
    }

    #[test]
    fn pointwise_u_frame_matches_closed_form() {
        let m = fixture("qh_p1").unwrap();
        let dc = structure_derivatives(&m, &[0.2, 0.7]);
        assert!(linalg::max_abs(&dc[0][1]) < 1e-14 && linalg::max_abs(&dc[1][0]) < 1e-14);
        assert!((dc[1][1][(0, 1)] - c0(0.7f64.exp())).norm() < 1e-13);
        let g = m.domain_grid(17).unwrap();
        let f = build_frame(&m, &g, g.center_index(), &FrameOptions::default()).unwrap();
        let uf = to_u_frame_pointwise(&m, &f, &UFrameOptions::default()).unwrap();
        for (p, u) in uf.grid.points().iter().enumerate() {
            let back = qh_p1_canonical(&uf.x_of_u[p]);
            assert!((back[0] - u[0]).abs() < 1e-12 && (back[1] - u[1]).abs() < 1e-12);
            let expect = c(0.0, 1.0) / (8.0 + 2.0 * (u[0] - u[1]));
            assert!((uf.big_q[p][(0, 1)] - expect).norm() < 1e-12);
        }
        assert!(uf.residuals.structure < 1e-14 && uf.residuals.symmetry < 1e-14, "{:?}", uf.residuals);
    }
}
