//! Fourier differentiation on the periodic grid `s_k = 2 pi k / N`.

use std::sync::Arc;

use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::linalg::{Mat, C64};

#[derive(Clone)]
pub struct Spectral {
    n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Spectral {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Spectral({})", self.n)
    }
}

impl Spectral {
    pub fn new(n: usize) -> Result<Self> {
        if n < 4 || !n.is_power_of_two() {
            return Err(Error::InvalidConfig(format!("loop size {n} must be a power of two >= 4")));
        }
        let mut planner = FftPlanner::new();
        Ok(Self { n, fwd: planner.plan_fft_forward(n), inv: planner.plan_fft_inverse(n) })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n).map(|k| 2.0 * std::f64::consts::PI * k as f64 / self.n as f64).collect()
    }

    /// Quadrature weight `2 pi / N`.
    pub fn weight(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.n as f64
    }

    fn wavenumber(&self, k: usize) -> f64 {
        let n = self.n;
        if k < n / 2 {
            k as f64
        } else if k == n / 2 {
            0.0
        } else {
            k as f64 - n as f64
        }
    }

    /// Fourier coefficients (unnormalized DFT).
    pub fn dft(&self, v: &[C64]) -> Vec<C64> {
        let mut buf = v.to_vec();
        self.fwd.process(&mut buf);
        buf
    }

    /// Derivative of a periodic sample vector; the Nyquist mode is dropped.
    pub fn derivative(&self, v: &[C64]) -> Vec<C64> {
        assert_eq!(v.len(), self.n);
        // Differentiate the deviation from the first sample so constants map to exact zeros.
        let base = v[0];
        let mut buf: Vec<C64> = v.iter().map(|z| z - base).collect();
        if buf.iter().all(|z| *z == C64::new(0.0, 0.0)) {
            return buf;
        }
        self.fwd.process(&mut buf);
        let scale = 1.0 / self.n as f64;
        for (k, z) in buf.iter_mut().enumerate() {
            *z *= C64::new(0.0, self.wavenumber(k) * scale);
        }
        self.inv.process(&mut buf);
        buf
    }

    /// Entrywise derivative of a matrix field.
    pub fn derivative_field(&self, field: &[Mat]) -> Vec<Mat> {
        assert_eq!(field.len(), self.n);
        let (r, c) = (field[0].nrows(), field[0].ncols());
        let mut out = vec![Mat::zeros(r, c); self.n];
        for i in 0..r {
            for j in 0..c {
                let col: Vec<C64> = field.iter().map(|m| m[(i, j)]).collect();
                for (s, z) in self.derivative(&col).into_iter().enumerate() {
                    out[s][(i, j)] = z;
                }
            }
        }
        out
    }

    /// Largest Fourier coefficient in the band `|k| > 3N/8`, relative to the largest overall.
    pub fn tail_ratio(&self, field: &[Mat]) -> f64 {
        let (r, c) = (field[0].nrows(), field[0].ncols());
        let mut tail: f64 = 0.0;
        let mut top: f64 = 0.0;
        let cut = 3.0 * self.n as f64 / 8.0;
        for i in 0..r {
            for j in 0..c {
                let col: Vec<C64> = field.iter().map(|m| m[(i, j)]).collect();
                for (k, z) in self.dft(&col).into_iter().enumerate() {
                    let kk = if k <= self.n / 2 { k as f64 } else { self.n as f64 - k as f64 };
                    top = top.max(z.norm());
                    if kk > cut {
                        tail = tail.max(z.norm());
                    }
                }
            }
        }
        if top == 0.0 {
            0.0
        } else {
            tail / top
        }
    }

    /// Periodic trapezoid quadrature `sum_k f(s_k) 2 pi / N`.
    pub fn integrate(&self, v: &[C64]) -> C64 {
        v.iter().fold(C64::new(0.0, 0.0), |acc, z| acc + z) * self.weight()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::c;

    #[test]
    fn derivative_of_trigonometric_polynomial_is_spectrally_exact() {
        let sp = Spectral::new(32).unwrap();
        let s = sp.nodes();
        let v: Vec<C64> = s.iter().map(|&t| c((3.0 * t).sin() + 0.5 * t.cos(), (2.0 * t).cos())).collect();
        let d = sp.derivative(&v);
        for (k, &t) in s.iter().enumerate() {
            let e = c(3.0 * (3.0 * t).cos() - 0.5 * t.sin(), -2.0 * (2.0 * t).sin());
            assert!((d[k] - e).norm() < 1e-13);
        }
    }

    #[test]
    fn smooth_nonpolynomial_converges_to_roundoff() {
        let sp = Spectral::new(64).unwrap();
        let v: Vec<C64> = sp.nodes().iter().map(|&t| c((0.5 * t.cos()).exp(), 0.0)).collect();
        let d = sp.derivative(&v);
        for (k, &t) in sp.nodes().iter().enumerate() {
            assert!((d[k].re + 0.5 * t.sin() * (0.5 * t.cos()).exp()).abs() < 1e-13);
        }
        let field: Vec<Mat> = v.iter().map(|z| Mat::from_element(1, 1, *z)).collect();
        assert!(sp.tail_ratio(&field) < 1e-10);
    }

    #[test]
    fn antisymmetric_and_exact_on_constants() {
        let sp = Spectral::new(16).unwrap();
        let k = vec![c(2.5, -1.0); 16];
        assert!(sp.derivative(&k).iter().all(|z| *z == c(0.0, 0.0)));
        let nodes = sp.nodes();
        let f: Vec<C64> = nodes.iter().map(|&t| c(t.sin() + (2.0 * t).cos(), 0.0)).collect();
        let g: Vec<C64> = nodes.iter().map(|&t| c((3.0 * t).sin(), t.cos())).collect();
        let fdg: C64 = f.iter().zip(sp.derivative(&g)).map(|(a, b)| a * b).sum();
        let gdf: C64 = g.iter().zip(sp.derivative(&f)).map(|(a, b)| a * b).sum();
        assert!((fdg + gdf).norm() < 1e-12);
    }

    #[test]
    fn rough_data_has_large_tail() {
        let sp = Spectral::new(32).unwrap();
        let field: Vec<Mat> = (0..32).map(|k| Mat::from_element(1, 1, c(if k == 3 { 1.0 } else { 0.0 }, 0.0))).collect();
        assert!(sp.tail_ratio(&field) > 0.5);
        assert!(Spectral::new(24).is_err());
    }
}
