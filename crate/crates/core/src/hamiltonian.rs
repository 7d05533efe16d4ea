//! The two Poisson brackets on loop data and the Hamiltonian form of the flows.
//!
//! Gradients are stored transposed: `grad[p][(a, b)] = dF / dC[(b, a)](s_p)`
//! divided by the quadrature weight. With this convention
//! `{f, g}_0 = int Tr(C [grad f, grad g]) ds` and
//! `{f, g}_1 = -int Tr(grad f d/ds grad g) ds`.

use serde::Serialize;

use crate::dressing::dress_loop_anchored;
use crate::error::Result;
use crate::flows::{base_anchor, hamiltonians_from_table, phi_coeff, phi_of_b, ConservedTable, FlowGenerator};
use crate::linalg::{self, c, Mat, C64, ZERO};
use crate::loops::LoopState;
use crate::par;

/// Perturbation size of the central-difference gradient.
pub const GRADIENT_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Bracket {
    Zero,
    One,
}

/// Central-difference gradient of a scalar functional of `C`.
pub fn fd_gradient<F>(state: &LoopState, f: F, eps: f64) -> Result<Vec<Mat>>
where
    F: Fn(&LoopState) -> Result<C64> + Sync,
{
    let n = state.dim();
    let np = state.n_points();
    let w = state.spectral()?.weight();
    let jobs: Vec<(usize, usize, usize)> = (0..np).flat_map(|p| (0..n).flat_map(move |i| (0..n).map(move |j| (p, i, j)))).collect();
    let vals = par::map(&jobs, |&(p, i, j)| -> Result<C64> {
        let mut s = state.clone();
        s.c[p][(i, j)] += eps;
        let up = f(&s)?;
        s.c[p][(i, j)] -= 2.0 * eps;
        let down = f(&s)?;
        Ok((up - down) / (2.0 * eps * w))
    });
    let mut grad = vec![linalg::zeros(n); np];
    for (&(p, i, j), v) in jobs.iter().zip(vals) {
        grad[p][(j, i)] = v?;
    }
    Ok(grad)
}

/// Bracket of two functionals given their gradients.
pub fn bracket_from_gradients(state: &LoopState, gf: &[Mat], gg: &[Mat], which: Bracket) -> Result<C64> {
    let sp = state.spectral()?;
    let w = sp.weight();
    let sum = match which {
        Bracket::Zero => state.c.iter().zip(gf.iter().zip(gg)).fold(ZERO, |acc, (cm, (a, b))| acc + (cm * linalg::commutator(a, b)).trace()),
        Bracket::One => {
            let dg = sp.derivative_field(gg);
            gf.iter().zip(&dg).fold(ZERO, |acc, (a, b)| acc - (a * b).trace())
        }
    };
    Ok(sum * w)
}

/// Pencil `{f, g}_0 - hbar {f, g}_1`.
pub fn pencil_from_gradients(state: &LoopState, gf: &[Mat], gg: &[Mat], hbar: f64) -> Result<C64> {
    Ok(bracket_from_gradients(state, gf, gg, Bracket::Zero)? - bracket_from_gradients(state, gf, gg, Bracket::One)? * hbar)
}

/// Hamiltonian vector field of `H` for the chosen bracket: `dC/dt = {C, H}`.
pub fn hamiltonian_vector_field(state: &LoopState, grad: &[Mat], which: Bracket) -> Result<Vec<Mat>> {
    Ok(match which {
        Bracket::Zero => state.c.iter().zip(grad).map(|(cm, g)| linalg::commutator(g, cm)).collect(),
        Bracket::One => state.spectral()?.derivative_field(grad).into_iter().map(|m| -m).collect(),
    })
}

/// `f(C) = int Tr(A(s) C(s)) ds + constant`.
#[derive(Clone, Debug)]
pub struct LinearFunctional {
    pub a: Vec<Mat>,
    pub constant: C64,
}

impl LinearFunctional {
    pub fn value(&self, state: &LoopState) -> Result<C64> {
        let w = state.spectral()?.weight();
        Ok(self.a.iter().zip(&state.c).fold(ZERO, |acc, (a, cm)| acc + (a * cm).trace()) * w + self.constant)
    }
}

/// Cyclic sum `{{f,g},h} + {{g,h},f} + {{h,f},g}` for the pencil with parameter `hbar`.
///
/// Every gradient, including those of the inner brackets, is taken by central
/// differences of step `eps`; on affine functionals the differences are exact
/// for any step.
pub fn jacobi_defect(state: &LoopState, fs: [&LinearFunctional; 3], hbar: f64, eps: f64) -> Result<C64> {
    let lin: Vec<Box<dyn Fn(&LoopState) -> Result<C64> + Sync>> =
        fs.iter().map(|f| Box::new(move |s: &LoopState| f.value(s)) as Box<dyn Fn(&LoopState) -> Result<C64> + Sync>).collect();
    let grads = lin.iter().map(|f| fd_gradient(state, f, eps)).collect::<Result<Vec<_>>>()?;
    let mut total = ZERO;
    for (a, b, d) in [(0, 1, 2), (1, 2, 0), (2, 0, 1)] {
        let (fa, fb) = (&lin[a], &lin[b]);
        let inner = |s: &LoopState| -> Result<C64> {
            let ga = fd_gradient(s, fa, eps)?;
            let gb = fd_gradient(s, fb, eps)?;
            pencil_from_gradients(s, &ga, &gb, hbar)
        };
        let g_inner = fd_gradient(state, inner, eps)?;
        total += pencil_from_gradients(state, &g_inner, &grads[d], hbar)?;
    }
    Ok(total)
}

/// Data for the three Hamiltonian consistency checks of one flow.
#[derive(Clone, Debug)]
pub struct HamiltonianCheck {
    pub state: LoopState,
    pub h_b: C64,
    pub h_tilde_b: C64,
    pub grad_h: Vec<Mat>,
    pub grad_h_tilde: Vec<Mat>,
    /// `phi(b)_0`; public so that a corrupted copy can be checked.
    pub phi0: Vec<Mat>,
    pub phi_m1: Vec<Mat>,
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct HamiltonianReport {
    pub h_b: [f64; 2],
    pub h_tilde_b: [f64; 2],
    /// `max |grad H_b + phi(b)_0|`.
    pub gradient: f64,
    /// `max |-[phi_0, C] - {C, H_b}_0|`.
    pub bracket0: f64,
    /// `max |-[phi_0, C] - {C, H~_b}_1|`.
    pub bracket1: f64,
    /// `max |grad H~_b + phi(b)_{-1}|`, for information.
    pub gradient_tilde: f64,
    pub tol: f64,
    pub pass: bool,
}

impl HamiltonianCheck {
    pub fn compute(state: &LoopState, b: &FlowGenerator, eps: f64) -> Result<Self> {
        let m = b.m();
        let anchor = base_anchor(state)?;
        let both = |s: &LoopState| -> Result<(C64, C64)> {
            let d = dress_loop_anchored(s, m, Some(&anchor))?;
            Ok(hamiltonians_from_table(&ConservedTable::from_dressing(&d), b))
        };
        let (h_b, h_tilde_b) = both(state)?;
        let grad_h = fd_gradient(state, |s| both(s).map(|x| x.0), eps)?;
        let grad_h_tilde = fd_gradient(state, |s| both(s).map(|x| x.1), eps)?;
        let d = dress_loop_anchored(state, m, Some(&anchor))?;
        let phi = phi_of_b(&d.t_full, b, m)?;
        Ok(Self { state: state.clone(), h_b, h_tilde_b, grad_h, grad_h_tilde, phi0: phi_coeff(&phi, 0), phi_m1: phi_coeff(&phi, -1) })
    }

    pub fn report(&self, tol: f64) -> Result<HamiltonianReport> {
        let st = &self.state;
        let diff_max = |a: &[Mat], b: &[Mat]| a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max(linalg::max_abs_diff(x, y)));
        let neg = |f: &[Mat]| -> Vec<Mat> { f.iter().map(|m| -m).collect() };
        let rhs: Vec<Mat> = st.c.iter().zip(&self.phi0).map(|(cm, p)| -linalg::commutator(p, cm)).collect();
        let v0 = hamiltonian_vector_field(st, &self.grad_h, Bracket::Zero)?;
        let v1 = hamiltonian_vector_field(st, &self.grad_h_tilde, Bracket::One)?;
        let gradient = diff_max(&self.grad_h, &neg(&self.phi0));
        let bracket0 = diff_max(&rhs, &v0);
        let bracket1 = diff_max(&rhs, &v1);
        let gradient_tilde = diff_max(&self.grad_h_tilde, &neg(&self.phi_m1));
        Ok(HamiltonianReport {
            h_b: [self.h_b.re, self.h_b.im],
            h_tilde_b: [self.h_tilde_b.re, self.h_tilde_b.im],
            gradient,
            bracket0,
            bracket1,
            gradient_tilde,
            tol,
            pass: gradient < tol && bracket0 < tol && bracket1 < tol,
        })
    }
}

/// Random trigonometric matrix field with modes `0..=modes`, for bracket tests.
pub fn random_smooth_field(n: usize, points: usize, modes: usize, rng: &mut impl rand::Rng) -> Vec<Mat> {
    let mut draw = || Mat::from_fn(n, n, |_, _| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
    let terms: Vec<(Mat, Mat)> = (0..=modes).map(|_| (draw(), draw())).collect();
    (0..points)
        .map(|p| {
            let s = 2.0 * std::f64::consts::PI * p as f64 / points as f64;
            terms.iter().enumerate().fold(linalg::zeros(n), |acc, (k, (a, b))| {
                let k = k as f64;
                acc + a * c((k * s).cos(), 0.0) + b * c((k * s).sin(), 0.0)
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loops::LoopCurve;
    use crate::models::fixture;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn linear(a: Vec<Mat>) -> LinearFunctional {
        LinearFunctional { a, constant: ZERO }
    }

    #[test]
    fn linear_functional_gradients_and_brackets() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let st = LoopState { c: random_smooth_field(2, 16, 3, &mut rng), t: 0.0, eta: linalg::eye(2) };
        let a = random_smooth_field(2, 16, 2, &mut rng);
        let b = random_smooth_field(2, 16, 2, &mut rng);
        let (fa, fb) = (linear(a.clone()), linear(b.clone()));
        let ga = fd_gradient(&st, |s| fa.value(s), 1.0).unwrap();
        for (x, y) in ga.iter().zip(&a) {
            assert!(linalg::max_abs_diff(x, y) < 1e-13);
        }
        let gb = fd_gradient(&st, |s| fb.value(s), 1.0).unwrap();
        let w = st.spectral().unwrap().weight();
        let hand = st.c.iter().zip(a.iter().zip(&b)).fold(ZERO, |acc, (cm, (x, y))| acc + (linalg::commutator(x, y) * cm).trace()) * w;
        assert!((bracket_from_gradients(&st, &ga, &gb, Bracket::Zero).unwrap() - hand).norm() < 1e-12);
        for which in [Bracket::Zero, Bracket::One] {
            assert!(bracket_from_gradients(&st, &ga, &ga, which).unwrap().norm() < 1e-12);
            let fg = bracket_from_gradients(&st, &ga, &gb, which).unwrap();
            let gf = bracket_from_gradients(&st, &gb, &ga, which).unwrap();
            assert!((fg + gf).norm() < 1e-12);
        }
        let consts: Vec<Mat> = vec![Mat::from_fn(2, 2, |i, j| c((i + 2 * j) as f64, 0.0)); 16];
        let gc = fd_gradient(&st, |s| linear(consts.clone()).value(s), 1.0).unwrap();
        assert!(bracket_from_gradients(&st, &gc, &gc, Bracket::One).unwrap().norm() < 1e-12);
        assert!(bracket_from_gradients(&st, &ga, &gc, Bracket::One).unwrap().norm() < 1e-12);
    }

    #[test]
    fn pencil_satisfies_jacobi_on_linear_functionals() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let st = LoopState { c: random_smooth_field(2, 32, 3, &mut rng), t: 0.0, eta: linalg::eye(2) };
        let fs: Vec<LinearFunctional> = (0..3).map(|_| linear(random_smooth_field(2, 32, 3, &mut rng))).collect();
        for hbar in [0.0, 1.0, -2.0] {
            let j = jacobi_defect(&st, [&fs[0], &fs[1], &fs[2]], hbar, 1.0).unwrap();
            assert!(j.norm() < 1e-10, "hbar = {hbar}: {j}");
        }
    }

    #[test]
    fn scalar_loop_hamiltonian_checks_vanish() {
        let st = LoopState::from_fn(16, linalg::eye(1), |s| Mat::from_element(1, 1, c(1.0 + 0.2 * s.cos(), 0.0))).unwrap();
        let chk = HamiltonianCheck::compute(&st, &FlowGenerator::single(1, &[1.5]), GRADIENT_EPS).unwrap();
        let r = chk.report(1e-4).unwrap();
        assert_eq!((r.gradient, r.bracket0), (0.0, 0.0));
        assert!(r.bracket1 < 1e-8 && r.pass);
    }

    #[test]
    fn qh_loop_flow_is_bi_hamiltonian_and_tampering_shows() {
        let m = fixture("qh_p1").unwrap();
        let st = LoopState::from_model(&m, &LoopCurve::default_for(&m), 64).unwrap();
        let mut chk = HamiltonianCheck::compute(&st, &FlowGenerator::single(2, &[1.0, 0.0]), GRADIENT_EPS).unwrap();
        let r = chk.report(1e-4).unwrap();
        assert!(r.pass, "{r:?}");
        assert!(r.gradient_tilde < 1e-4, "{r:?}");
        chk.phi0[5][(0, 1)] += c(1e-3, 0.0);
        let bad = chk.report(1e-4).unwrap();
        assert!(!bad.pass);
        assert!((bad.gradient - 1e-3).abs() < 1e-4, "{bad:?}");
    }
}
