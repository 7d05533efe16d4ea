//! Semisimple Frobenius manifold fixtures and their axiom checks.
//!
//! Matrices follow the column convention `C_alpha[gamma][beta] = C_{alpha beta}^gamma`,
//! i.e. `C_alpha` is the operator of multiplication by `d/dx^alpha` acting on
//! column tangent vectors.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::linalg::{self, c, Mat, C64, ONE, ZERO};

/// Smallest admissible spectral gap of the pencil before a point counts as a caustic.
pub const DEFAULT_GAP_THRESHOLD: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub enum FixtureKind {
    TrivialDiag(usize),
    QhP1,
    A2Poly,
}

#[derive(Clone, Debug)]
pub struct FrobeniusModel {
    pub name: String,
    pub kind: FixtureKind,
    pub n: usize,
    pub eta: Mat,
    /// Flat components of the unit vector field.
    pub unit: Vec<f64>,
    /// Weights of the generic element `sum_alpha w_alpha C_alpha` used to split the algebra.
    pub pencil: Vec<f64>,
    /// Declared semisimple box (real slice).
    pub domain_lo: Vec<f64>,
    pub domain_hi: Vec<f64>,
}

/// Names accepted by [`fixture`].
pub fn fixture_names() -> Vec<&'static str> {
    vec!["trivial_diag(n)", "qh_p1", "a2_poly"]
}

/// Look up a fixture by name: `trivial_diag(n)`, `qh_p1` or `a2_poly`.
pub fn fixture(name: &str) -> Result<FrobeniusModel> {
    let name = name.trim();
    let kind = match name {
        "qh_p1" => FixtureKind::QhP1,
        "a2_poly" => FixtureKind::A2Poly,
        _ => {
            let inner = name
                .strip_prefix("trivial_diag(")
                .and_then(|r| r.strip_suffix(')'))
                .ok_or_else(|| Error::UnknownFixture(name.to_string()))?;
            let n: usize = inner.trim().parse().map_err(|_| Error::UnknownFixture(name.to_string()))?;
            if n == 0 {
                return Err(Error::UnknownFixture(name.to_string()));
            }
            FixtureKind::TrivialDiag(n)
        }
    };
    Ok(FrobeniusModel::new(kind))
}

impl FrobeniusModel {
    pub fn new(kind: FixtureKind) -> Self {
        let n = match kind {
            FixtureKind::TrivialDiag(n) => n,
            _ => 2,
        };
        let (name, eta, unit, lo, hi) = match kind {
            FixtureKind::TrivialDiag(n) => {
                (format!("trivial_diag({n})"), linalg::eye(n), vec![1.0; n], vec![-1.0; n], vec![1.0; n])
            }
            FixtureKind::QhP1 => ("qh_p1".to_string(), flip2(), vec![1.0, 0.0], vec![-1.0, -1.0], vec![1.0, 1.0]),
            FixtureKind::A2Poly => ("a2_poly".to_string(), flip2(), vec![1.0, 0.0], vec![-1.0, 0.5], vec![1.0, 2.5]),
        };
        let pencil = (0..n).map(|a| (n - a) as f64).collect();
        Self { name, kind, n, eta, unit, pencil, domain_lo: lo, domain_hi: hi }
    }

    /// Structure matrices `C_alpha(x)` at a complex point.
    pub fn eval_c(&self, x: &[C64]) -> Vec<Mat> {
        assert_eq!(x.len(), self.n, "point dimension");
        match self.kind {
            FixtureKind::TrivialDiag(n) => (0..n)
                .map(|a| Mat::from_fn(n, n, |i, j| if i == a && j == a { ONE } else { ZERO }))
                .collect(),
            FixtureKind::QhP1 => vec![linalg::eye(2), companion(x[1].exp())],
            FixtureKind::A2Poly => vec![linalg::eye(2), companion(x[1] / 3.0)],
        }
    }

    pub fn eval_c_real(&self, x: &[f64]) -> Vec<Mat> {
        let z: Vec<C64> = x.iter().map(|&v| c(v, 0.0)).collect();
        self.eval_c(&z)
    }

    /// The generic element `sum_alpha w_alpha C_alpha`.
    pub fn pencil_matrix(&self, cs: &[Mat]) -> Mat {
        pencil_of(&self.pencil, cs)
    }

    /// Potential whose third derivatives give the structure constants.
    pub fn potential(&self, x: &[C64]) -> C64 {
        match self.kind {
            FixtureKind::TrivialDiag(_) => x.iter().map(|v| v * v * v / 6.0).sum(),
            FixtureKind::QhP1 => 0.5 * x[0] * x[0] * x[1] + x[1].exp(),
            FixtureKind::A2Poly => 0.5 * x[0] * x[0] * x[1] + x[1].powi(4) / 72.0,
        }
    }

    /// The declared domain gridded with `count` points per axis.
    pub fn domain_grid(&self, count: usize) -> Result<Grid> {
        Grid::new(self.domain_lo.clone(), self.domain_hi.clone(), vec![count; self.n])
    }

    pub fn domain_center(&self) -> Vec<f64> {
        self.domain_lo.iter().zip(&self.domain_hi).map(|(a, b)| 0.5 * (a + b)).collect()
    }
}

/// `sum_alpha w_alpha C_alpha`.
pub fn pencil_of(weights: &[f64], cs: &[Mat]) -> Mat {
    let n = cs[0].nrows();
    cs.iter().zip(weights).fold(linalg::zeros(n), |acc, (m, &w)| acc + m * c(w, 0.0))
}

fn flip2() -> Mat {
    linalg::from_real_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]])
}

fn companion(top_right: C64) -> Mat {
    Mat::from_row_slice(2, 2, &[ZERO, top_right, ONE, ZERO])
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct AxiomReport {
    pub fixture: String,
    pub points: usize,
    pub tol: f64,
    pub unit: f64,
    pub commutativity: f64,
    pub symmetry: f64,
    pub frobenius: f64,
    /// Minimal eigenvalue gap of the pencil over the point set.
    pub min_gap: f64,
    pub pass: bool,
}

/// Maximal axiom residuals over a point set.
pub fn check_axioms(model: &FrobeniusModel, points: &[Vec<f64>], tol: f64) -> AxiomReport {
    let n = model.n;
    let mut r = AxiomReport {
        fixture: model.name.clone(),
        points: points.len(),
        tol,
        unit: 0.0,
        commutativity: 0.0,
        symmetry: 0.0,
        frobenius: 0.0,
        min_gap: f64::INFINITY,
        pass: false,
    };
    for x in points {
        let cs = model.eval_c_real(x);
        let unit = pencil_of(&model.unit, &cs);
        r.unit = r.unit.max(linalg::max_abs_diff(&unit, &linalg::eye(n)));
        for a in 0..n {
            let ec = &model.eta * &cs[a];
            r.frobenius = r.frobenius.max(linalg::max_abs_diff(&ec, &ec.transpose()));
            for b in 0..n {
                r.commutativity = r.commutativity.max(linalg::max_abs(&linalg::commutator(&cs[a], &cs[b])));
                for g in 0..n {
                    r.symmetry = r.symmetry.max((cs[a][(g, b)] - cs[b][(g, a)]).norm());
                }
            }
        }
        let ev = linalg::eigenvalues(&model.pencil_matrix(&cs));
        r.min_gap = r.min_gap.min(linalg::min_gap(&ev));
    }
    if n == 1 {
        r.min_gap = f64::INFINITY;
    }
    r.pass = r.unit < tol && r.commutativity < tol && r.symmetry < tol && r.frobenius < tol && r.min_gap > DEFAULT_GAP_THRESHOLD;
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::fornberg;

    // Structure constants from third derivatives of the potential (5-point stencils per axis).
    fn structure_from_potential(model: &FrobeniusModel, x: &[f64]) -> Vec<Mat> {
        let n = model.n;
        let h = 1e-2;
        let nodes = [-2.0, -1.0, 0.0, 1.0, 2.0];
        let w = fornberg(0.0, &nodes, 1);
        let third = |a: usize, b: usize, d: usize| -> C64 {
            let mut acc = ZERO;
            for (i, wi) in w.iter().enumerate() {
                for (j, wj) in w.iter().enumerate() {
                    for (k, wk) in w.iter().enumerate() {
                        let mut p: Vec<C64> = x.iter().map(|&v| c(v, 0.0)).collect();
                        p[a] += nodes[i] * h;
                        p[b] += nodes[j] * h;
                        p[d] += nodes[k] * h;
                        acc += model.potential(&p) * (wi * wj * wk);
                    }
                }
            }
            acc / (h * h * h)
        };
        let eta_inv = model.eta.clone().try_inverse().unwrap();
        (0..n)
            .map(|a| {
                Mat::from_fn(n, n, |g, b| (0..n).map(|d| eta_inv[(g, d)] * third(a, b, d)).sum::<C64>())
            })
            .collect()
    }

    #[test]
    fn fixtures_agree_with_their_potentials() {
        for name in ["trivial_diag(2)", "trivial_diag(3)", "qh_p1", "a2_poly"] {
            let m = fixture(name).unwrap();
            for x in [m.domain_center(), m.domain_lo.clone(), vec![0.3; m.n]] {
                let fd = structure_from_potential(&m, &x);
                let cs = m.eval_c_real(&x);
                for a in 0..m.n {
                    assert!(linalg::max_abs_diff(&fd[a], &cs[a]) < 1e-6, "{name} at {x:?}");
                }
            }
        }
    }

    #[test]
    fn axioms_hold_on_declared_domains() {
        for name in ["trivial_diag(2)", "trivial_diag(3)", "qh_p1", "a2_poly"] {
            let m = fixture(name).unwrap();
            let g = m.domain_grid(9).unwrap();
            let r = check_axioms(&m, &g.points(), 1e-12);
            assert!(r.pass, "{r:?}");
        }
        let m = fixture("trivial_diag(2)").unwrap();
        let r = check_axioms(&m, &m.domain_grid(5).unwrap().points(), 1e-12);
        assert_eq!((r.unit, r.commutativity, r.symmetry, r.frobenius), (0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn qh_p1_gap_matches_closed_form() {
        let m = fixture("qh_p1").unwrap();
        let g = m.domain_grid(17).unwrap();
        let r = check_axioms(&m, &g.points(), 1e-12);
        assert!((r.min_gap - 2.0 * (-0.5f64).exp()).abs() < 1e-12);
        let ev = linalg::eigenvalues(&m.eval_c_real(&[0.4, 0.0])[1]);
        let mut re: Vec<f64> = ev.iter().map(|z| z.re).collect();
        re.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((re[0] + 1.0).abs() < 1e-14 && (re[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn a2_poly_caustic_has_zero_margin() {
        let m = fixture("a2_poly").unwrap();
        let g = Grid::new(vec![-1.0, -1.0], vec![1.0, 1.0], vec![5, 5]).unwrap();
        let r = check_axioms(&m, &g.points(), 1e-12);
        assert_eq!(r.min_gap, 0.0);
        assert!(!r.pass);
        let ev = linalg::eigenvalues(&m.eval_c_real(&[0.0, 3.0])[1]);
        assert!(ev.iter().all(|z| (z.norm() - 1.0).abs() < 1e-14));
    }

    #[test]
    fn registry_rejects_unknown_names() {
        assert_eq!(fixture("cp2").unwrap_err(), Error::UnknownFixture("cp2".into()));
        assert!(fixture("trivial_diag(0)").is_err());
        assert_eq!(fixture("trivial_diag( 4 )").unwrap().n, 4);
    }
}
