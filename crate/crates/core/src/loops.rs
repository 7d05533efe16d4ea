//! Closed curves in the base and the periodic operator data they induce.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, c, Mat, C64, ZERO};
use crate::models::{FixtureKind, FrobeniusModel};
use crate::spectral::Spectral;

/// Largest admissible spectral tail ratio of loop data.
pub const SMOOTHNESS_TOL: f64 = 1e-10;

/// One Fourier harmonic `cos(m s) A + sin(m s) B` of a curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Harmonic {
    pub m: u32,
    pub cos: Vec<[f64; 2]>,
    pub sin: Vec<[f64; 2]>,
}

/// `x(s) = center + sum_m (cos(m s) A_m + sin(m s) B_m)` with complex coefficients.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoopCurve {
    pub center: Vec<[f64; 2]>,
    pub harmonics: Vec<Harmonic>,
}

fn cx(v: [f64; 2]) -> C64 {
    c(v[0], v[1])
}

impl LoopCurve {
    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn point(&self, s: f64) -> Vec<C64> {
        let mut x: Vec<C64> = self.center.iter().map(|&v| cx(v)).collect();
        for h in &self.harmonics {
            let (cs, sn) = ((h.m as f64 * s).cos(), (h.m as f64 * s).sin());
            for (a, xa) in x.iter_mut().enumerate() {
                *xa += cx(h.cos[a]) * cs + cx(h.sin[a]) * sn;
            }
        }
        x
    }

    pub fn tangent(&self, s: f64) -> Vec<C64> {
        let mut x = vec![ZERO; self.dim()];
        for h in &self.harmonics {
            let m = h.m as f64;
            let (cs, sn) = ((m * s).cos(), (m * s).sin());
            for (a, xa) in x.iter_mut().enumerate() {
                *xa += (cx(h.sin[a]) * cs - cx(h.cos[a]) * sn) * m;
            }
        }
        x
    }

    /// Default loop for a fixture: `x^1 = 0.3 sin s`, `x^2 = x^2_0 + 0.5 e^{is}`,
    /// `x^a = 0.4 e^{i(a-1)s}` for `a >= 3`. The complex loop keeps the tangent
    /// element's spectrum simple everywhere.
    pub fn default_for(model: &FrobeniusModel) -> Self {
        let n = model.n;
        let mut center = vec![[0.0, 0.0]; n];
        if n >= 2 && model.kind == FixtureKind::A2Poly {
            center[1] = [1.5, 0.0];
        }
        let mut harmonics = Vec::new();
        let mut h1 = Harmonic { m: 1, cos: vec![[0.0, 0.0]; n], sin: vec![[0.0, 0.0]; n] };
        h1.sin[0] = [0.3, 0.0];
        if n >= 2 {
            h1.cos[1] = [0.5, 0.0];
            h1.sin[1] = [0.0, 0.5];
        }
        harmonics.push(h1);
        for a in 2..n {
            let mut h = Harmonic { m: a as u32, cos: vec![[0.0, 0.0]; n], sin: vec![[0.0, 0.0]; n] };
            h.cos[a] = [0.4, 0.0];
            h.sin[a] = [0.0, 0.4];
            harmonics.push(h);
        }
        Self { center, harmonics }
    }
}

/// Periodic field `C(s)` on `s_k = 2 pi k / N` with a time stamp.
#[derive(Clone, Debug, PartialEq)]
pub struct LoopState {
    pub c: Vec<Mat>,
    pub t: f64,
    /// Bilinear form used to normalize eigenvectors.
    pub eta: Mat,
}

impl LoopState {
    /// `C(s) = sum_alpha xdot^alpha(s) C_alpha(x(s))`.
    pub fn from_model(model: &FrobeniusModel, curve: &LoopCurve, n_points: usize) -> Result<Self> {
        if curve.dim() != model.n {
            return Err(Error::DimensionMismatch { expected: model.n, found: curve.dim() });
        }
        let sp = Spectral::new(n_points)?;
        let c = sp
            .nodes()
            .iter()
            .map(|&s| {
                let cs = model.eval_c(&curve.point(s));
                let v = curve.tangent(s);
                cs.iter().zip(&v).fold(linalg::zeros(model.n), |acc, (m, &w)| acc + m * w)
            })
            .collect();
        Ok(Self { c, t: 0.0, eta: model.eta.clone() })
    }

    pub fn from_fn(n_points: usize, eta: Mat, f: impl Fn(f64) -> Mat) -> Result<Self> {
        let sp = Spectral::new(n_points)?;
        Ok(Self { c: sp.nodes().iter().map(|&s| f(s)).collect(), t: 0.0, eta })
    }

    pub fn n_points(&self) -> usize {
        self.c.len()
    }

    pub fn dim(&self) -> usize {
        self.eta.nrows()
    }

    pub fn spectral(&self) -> Result<Spectral> {
        Spectral::new(self.n_points())
    }

    pub fn tail_ratio(&self) -> Result<f64> {
        Ok(self.spectral()?.tail_ratio(&self.c))
    }

    /// Refuse data whose Fourier tail is not resolved.
    pub fn check_smooth(&self) -> Result<()> {
        let ratio = self.tail_ratio()?;
        if ratio > SMOOTHNESS_TOL {
            return Err(Error::NotSmooth { ratio });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::fixture;

    #[test]
    fn tangent_matches_spectral_derivative_of_the_curve() {
        for name in ["qh_p1", "trivial_diag(3)", "a2_poly"] {
            let m = fixture(name).unwrap();
            let curve = LoopCurve::default_for(&m);
            let sp = Spectral::new(64).unwrap();
            for a in 0..m.n {
                let xs: Vec<C64> = sp.nodes().iter().map(|&s| curve.point(s)[a]).collect();
                let d = sp.derivative(&xs);
                for (k, &s) in sp.nodes().iter().enumerate() {
                    assert!((d[k] - curve.tangent(s)[a]).norm() < 1e-13);
                }
            }
        }
    }

    #[test]
    fn default_loops_are_smooth_and_inside_semisimple_region() {
        for name in ["qh_p1", "trivial_diag(2)", "trivial_diag(3)", "a2_poly"] {
            let m = fixture(name).unwrap();
            let st = LoopState::from_model(&m, &LoopCurve::default_for(&m), 128).unwrap();
            st.check_smooth().unwrap();
            for cm in &st.c {
                assert!(linalg::min_gap(&linalg::eigenvalues(cm)) > 0.1, "{name}");
            }
        }
    }
}
