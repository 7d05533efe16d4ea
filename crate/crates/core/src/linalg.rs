//! Small dense complex linear algebra helpers.

use nalgebra::DMatrix;
use num_complex::Complex64;

pub type C64 = Complex64;
pub type Mat = DMatrix<C64>;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

pub fn zeros(n: usize) -> Mat {
    Mat::zeros(n, n)
}

pub fn eye(n: usize) -> Mat {
    Mat::identity(n, n)
}

/// Build a square matrix from real row-major rows.
pub fn from_real_rows(rows: &[Vec<f64>]) -> Mat {
    let n = rows.len();
    Mat::from_fn(n, n, |i, j| c(rows[i][j], 0.0))
}

pub fn diag(entries: &[C64]) -> Mat {
    let n = entries.len();
    Mat::from_fn(n, n, |i, j| if i == j { entries[i] } else { ZERO })
}

pub fn diag_entries(m: &Mat) -> Vec<C64> {
    (0..m.nrows()).map(|i| m[(i, i)]).collect()
}

pub fn diag_part(m: &Mat) -> Mat {
    Mat::from_fn(m.nrows(), m.ncols(), |i, j| if i == j { m[(i, j)] } else { ZERO })
}

pub fn offdiag_part(m: &Mat) -> Mat {
    Mat::from_fn(m.nrows(), m.ncols(), |i, j| if i == j { ZERO } else { m[(i, j)] })
}

/// Entrywise maximum modulus.
pub fn max_abs(m: &Mat) -> f64 {
    m.iter().fold(0.0, |acc, z| acc.max(z.norm()))
}

pub fn max_abs_diff(a: &Mat, b: &Mat) -> f64 {
    a.iter().zip(b.iter()).fold(0.0, |acc, (x, y)| acc.max((x - y).norm()))
}

pub fn commutator(a: &Mat, b: &Mat) -> Mat {
    a * b - b * a
}

pub fn trace(m: &Mat) -> C64 {
    m.trace()
}

/// Plain (non-conjugating) transpose.
pub fn transpose(m: &Mat) -> Mat {
    m.transpose()
}

/// Bilinear form `u^T g v` (no conjugation).
pub fn bilinear(g: &Mat, u: &[C64], v: &[C64]) -> C64 {
    let n = u.len();
    let mut acc = ZERO;
    for i in 0..n {
        for j in 0..n {
            acc += u[i] * g[(i, j)] * v[j];
        }
    }
    acc
}

/// Singular values in descending order.
pub fn singular_values(m: &Mat) -> Vec<f64> {
    let mut sv: Vec<f64> = m.clone().singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
    sv
}

/// Eigenvalues of a square complex matrix from its complex Schur form.
pub fn eigenvalues(m: &Mat) -> Vec<C64> {
    let n = m.nrows();
    let upper = (0..n).all(|i| (0..i).all(|j| m[(i, j)] == ZERO));
    let lower = (0..n).all(|i| (i + 1..n).all(|j| m[(i, j)] == ZERO));
    if upper || lower {
        return (0..n).map(|i| m[(i, i)]).collect();
    }
    let schur = nalgebra::Schur::new(m.clone());
    let (_, t) = schur.unpack();
    (0..n).map(|i| t[(i, i)]).collect()
}

/// Unit-norm null vector of `m - lambda I` (right singular vector for the smallest singular value).
pub fn null_vector(m: &Mat, lambda: C64) -> Vec<C64> {
    let n = m.nrows();
    let shifted = m - Mat::identity(n, n) * lambda;
    let svd = shifted.svd(false, true);
    let vt = svd.v_t.expect("svd requested v_t");
    let (idx, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |best, (i, &s)| if s < best.1 { (i, s) } else { best });
    (0..n).map(|j| vt[(idx, j)].conj()).collect()
}

/// Null vector of `m - lambda I` with one entry fixed to 1.
///
/// The pinned index maximises the modulus of the complementary principal minor,
/// and the remaining entries solve that minor's system. Exact on diagonal input.
pub fn eigenvector(m: &Mat, lambda: C64) -> Vec<C64> {
    let n = m.nrows();
    if n == 1 {
        return vec![ONE];
    }
    let shifted = m - Mat::identity(n, n) * lambda;
    let minor = |j: usize| -> Mat { shifted.clone().remove_row(j).remove_column(j) };
    let mut best = (0, -1.0);
    for j in 0..n {
        let d = minor(j).determinant().norm();
        if d > best.1 {
            best = (j, d);
        }
    }
    let j = best.0;
    let rhs = -shifted.column(j).clone_owned().remove_row(j);
    let sol = minor(j).lu().solve(&rhs).unwrap_or_else(|| nalgebra::DVector::zeros(n - 1));
    let mut v = Vec::with_capacity(n);
    let mut it = sol.iter();
    for i in 0..n {
        v.push(if i == j { ONE } else { *it.next().unwrap() });
    }
    v
}

/// Minimal pairwise distance in a list of complex numbers.
pub fn min_gap(values: &[C64]) -> f64 {
    let mut gap = f64::INFINITY;
    for i in 0..values.len() {
        for j in (i + 1)..values.len() {
            gap = gap.min((values[i] - values[j]).norm());
        }
    }
    gap
}

/// All permutations of `0..n` in lexicographic order.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn rec(cur: &mut Vec<usize>, used: &mut Vec<bool>, out: &mut Vec<Vec<usize>>) {
        let n = used.len();
        if cur.len() == n {
            out.push(cur.clone());
            return;
        }
        for i in 0..n {
            if !used[i] {
                used[i] = true;
                cur.push(i);
                rec(cur, used, out);
                cur.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), &mut vec![false; n], &mut out);
    out
}

/// Permutation `p` minimising `sum |new[p[i]] - old[i]|`.
///
/// Exhaustive for `n <= 6`, greedy beyond.
pub fn match_values(old: &[C64], new: &[C64]) -> Vec<usize> {
    let n = old.len();
    if n <= 6 {
        let mut best = (f64::INFINITY, Vec::new());
        for p in permutations(n) {
            let cost: f64 = (0..n).map(|i| (new[p[i]] - old[i]).norm()).sum();
            if cost < best.0 {
                best = (cost, p);
            }
        }
        best.1
    } else {
        let mut used = vec![false; n];
        let mut p = vec![0; n];
        for i in 0..n {
            let mut bj = usize::MAX;
            let mut bd = f64::INFINITY;
            for j in 0..n {
                if !used[j] && (new[j] - old[i]).norm() < bd {
                    bd = (new[j] - old[i]).norm();
                    bj = j;
                }
            }
            used[bj] = true;
            p[i] = bj;
        }
        p
    }
}

/// Principal complex square root (nonnegative real part).
pub fn csqrt(z: C64) -> C64 {
    z.sqrt()
}
