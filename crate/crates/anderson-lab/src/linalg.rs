//! Shared linear-algebra machinery: banded symmetric factorizations with
//! inertia counts, iterative solvers with residual certificates, and a
//! shift-invert extremal eigensolver.
//!
//! Lattice Hamiltonians on a cube are banded in the lexicographic site
//! order (bandwidth `(2L+1)²`), so an unpivoted symmetric banded LDLᵀ is
//! the workhorse for direct resolvent solves and Sylvester inertia
//! (eigenvalue counting). Complex-symmetric systems `S - iεI` use the same
//! factorization over `Complex64`; every direct solve is followed by an
//! explicit residual check.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// The scalar types the banded code runs over: `f64` and `Complex64`.
pub trait Scalar:
    Copy
    + PartialEq
    + std::ops::Add<Output = Self>
    + std::ops::Sub<Output = Self>
    + std::ops::Mul<Output = Self>
    + std::ops::Div<Output = Self>
    + std::ops::Neg<Output = Self>
    + Send
    + Sync
    + 'static
{
    const ZERO: Self;
    const ONE: Self;
    fn modulus(self) -> f64;
}

impl Scalar for f64 {
    const ZERO: f64 = 0.0;
    const ONE: f64 = 1.0;
    fn modulus(self) -> f64 {
        self.abs()
    }
}

impl Scalar for Complex64 {
    const ZERO: Complex64 = Complex64::new(0.0, 0.0);
    const ONE: Complex64 = Complex64::new(1.0, 0.0);
    fn modulus(self) -> f64 {
        self.norm()
    }
}

/// Symmetric banded matrix, lower band stored row-major:
/// `data[i * (bw + 1) + (j - i + bw)]` holds `A[i][j]` for `i - bw ≤ j ≤ i`.
#[derive(Debug, Clone)]
pub struct BandMatrix<T: Scalar> {
    pub n: usize,
    pub bw: usize,
    data: Vec<T>,
}

impl<T: Scalar> BandMatrix<T> {
    pub fn zeros(n: usize, bw: usize) -> Self {
        BandMatrix {
            n,
            bw,
            data: vec![T::ZERO; n * (bw + 1)],
        }
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && i - j <= self.bw);
        i * (self.bw + 1) + (j + self.bw - i)
    }

    /// Set `A[i][j] = v` for `j ≤ i` (the symmetric image is implicit).
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        let k = self.idx(i, j);
        self.data[k] = v;
    }

    pub fn add_to(&mut self, i: usize, j: usize, v: T) {
        let k = self.idx(i, j);
        self.data[k] = self.data[k] + v;
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        let (i, j) = if j > i { (j, i) } else { (i, j) };
        if i - j > self.bw {
            T::ZERO
        } else {
            self.data[self.idx(i, j)]
        }
    }

    /// Shift the diagonal: `A ← A - s I`.
    pub fn shift_diagonal(&mut self, s: T) {
        for i in 0..self.n {
            let k = self.idx(i, i);
            self.data[k] = self.data[k] - s;
        }
    }

    /// `y = A x` using the symmetric band.
    pub fn matvec(&self, x: &[T], y: &mut [T]) {
        assert_eq!(x.len(), self.n);
        assert_eq!(y.len(), self.n);
        for v in y.iter_mut() {
            *v = T::ZERO;
        }
        for i in 0..self.n {
            let jmin = i.saturating_sub(self.bw);
            for j in jmin..=i {
                let a = self.data[self.idx(i, j)];
                if a != T::ZERO {
                    y[i] = y[i] + a * x[j];
                    if j != i {
                        y[j] = y[j] + a * x[i];
                    }
                }
            }
        }
    }

    /// Unpivoted symmetric LDLᵀ (transpose, not conjugate-transpose).
    /// Fails on a vanishing pivot.
    pub fn ldlt(&self) -> Result<BandLdlt<T>> {
        let n = self.n;
        let bw = self.bw;
        let mut l = self.data.clone();
        let mut d = vec![T::ZERO; n];
        let mut scale = 0.0f64;
        for i in 0..n {
            scale = scale.max(self.get(i, i).modulus());
        }
        let pivot_floor = (scale.max(1e-300)) * 1e-15;
        let idx = |i: usize, j: usize| i * (bw + 1) + (j + bw - i);
        for i in 0..n {
            let jmin = i.saturating_sub(bw);
            // L[i][j] for j < i
            for j in jmin..i {
                let mut s = l[idx(i, j)];
                let kmin = jmin.max(j.saturating_sub(bw));
                for k in kmin..j {
                    s = s - l[idx(i, k)] * l[idx(j, k)] * d[k];
                }
                l[idx(i, j)] = s / d[j];
            }
            let mut s = l[idx(i, i)];
            for k in jmin..i {
                let lik = l[idx(i, k)];
                s = s - lik * lik * d[k];
            }
            if s.modulus() < pivot_floor {
                return Err(Error::Conditioning(format!(
                    "LDLT pivot {:.3e} below floor at row {i}",
                    s.modulus()
                )));
            }
            d[i] = s;
        }
        Ok(BandLdlt { n, bw, l, d })
    }
}

/// Factored form `A = L D Lᵀ` of a [`BandMatrix`].
#[derive(Debug, Clone)]
pub struct BandLdlt<T: Scalar> {
    n: usize,
    bw: usize,
    l: Vec<T>,
    d: Vec<T>,
}

impl<T: Scalar> BandLdlt<T> {
    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        i * (self.bw + 1) + (j + self.bw - i)
    }

    /// Solve `A x = b` in place.
    pub fn solve_in_place(&self, b: &mut [T]) {
        assert_eq!(b.len(), self.n);
        // forward: L z = b
        for i in 0..self.n {
            let jmin = i.saturating_sub(self.bw);
            let mut s = b[i];
            for j in jmin..i {
                s = s - self.l[self.idx(i, j)] * b[j];
            }
            b[i] = s;
        }
        // diagonal
        for i in 0..self.n {
            b[i] = b[i] / self.d[i];
        }
        // backward: Lᵀ x = y
        for i in (0..self.n).rev() {
            let imax = (i + self.bw).min(self.n - 1);
            let mut s = b[i];
            for k in (i + 1)..=imax {
                s = s - self.l[self.idx(k, i)] * b[k];
            }
            b[i] = s;
        }
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

impl BandLdlt<f64> {
    /// Number of negative pivots = number of eigenvalues below the shift
    /// used when building the matrix (Sylvester's law of inertia).
    pub fn negative_pivots(&self) -> usize {
        self.d.iter().filter(|&&x| x < 0.0).count()
    }
}

/// Eigenvalue count `#{ λ(A) < t }` via banded LDLᵀ inertia of `A - tI`.
pub fn count_eigenvalues_below(a: &BandMatrix<f64>, t: f64) -> Result<usize> {
    let mut shifted = a.clone();
    shifted.shift_diagonal(t);
    // A vanishing pivot means t essentially hits an eigenvalue of a leading
    // submatrix; nudge the shift by an epsilon that cannot move any
    // eigenvalue across a test interval of physical width.
    match shifted.ldlt() {
        Ok(f) => Ok(f.negative_pivots()),
        Err(_) => {
            let mut shifted = a.clone();
            shifted.shift_diagonal(t + 1e-12 * (1.0 + t.abs()));
            let f = shifted.ldlt()?;
            Ok(f.negative_pivots())
        }
    }
}

/// MINRES for symmetric (possibly indefinite) systems given as a matvec.
/// Returns the solution with its relative residual certificate.
pub fn minres<F>(apply: F, b: &[f64], tol: f64, max_iter: usize) -> Result<(Vec<f64>, f64, usize)>
where
    F: Fn(&[f64], &mut [f64]),
{
    let n = b.len();
    let norm_b = norm2(b);
    if norm_b == 0.0 {
        return Ok((vec![0.0; n], 0.0, 0));
    }
    let mut x = vec![0.0; n];
    let mut v_prev = vec![0.0; n];
    let mut v = b.to_vec();
    scale(&mut v, 1.0 / norm_b);
    // w_old2 = w_{j-2}, w_old1 = w_{j-1}
    let mut w_old2 = vec![0.0; n];
    let mut w_old1 = vec![0.0; n];
    let mut av = vec![0.0; n];

    // Givens bookkeeping: (c1, s1) from step j-1, (c0, s0) from step j-2
    let (mut c1, mut s1) = (1.0f64, 0.0f64);
    let (mut c0, mut s0) = (1.0f64, 0.0f64);
    let mut eta = norm_b;
    let mut beta = 0.0f64; // beta_j entering the step

    let explicit_relres = |x: &[f64], scratch: &mut [f64]| {
        apply(x, scratch);
        let mut rn = 0.0;
        for i in 0..n {
            let r = b[i] - scratch[i];
            rn += r * r;
        }
        rn.sqrt() / norm_b
    };

    for it in 1..=max_iter {
        apply(&v, &mut av);
        let alpha = dot(&v, &av);
        for i in 0..n {
            av[i] -= alpha * v[i] + beta * v_prev[i];
        }
        let beta_next = norm2(&av);

        // rotate the new tridiagonal column [beta, alpha, beta_next]
        let delta = c1 * alpha - c0 * s1 * beta;
        let rho2 = s1 * alpha + c0 * c1 * beta;
        let rho3 = s0 * beta;
        let (c, s, rho1) = sym_givens(delta, beta_next);

        // new direction and solution update
        for i in 0..n {
            let wi = (v[i] - rho2 * w_old1[i] - rho3 * w_old2[i]) / rho1;
            w_old2[i] = w_old1[i];
            w_old1[i] = wi;
        }
        let step = c * eta;
        for i in 0..n {
            x[i] += step * w_old1[i];
        }
        eta = -s * eta;

        let relres_est = eta.abs() / norm_b;
        if relres_est <= tol || beta_next < 1e-300 {
            let mut scratch = vec![0.0; n];
            let true_rel = explicit_relres(&x, &mut scratch);
            if true_rel <= 10.0 * tol.max(1e-15) {
                return Ok((x, true_rel, it));
            }
            if beta_next < 1e-300 {
                break;
            }
        }

        for i in 0..n {
            let t = av[i] / beta_next;
            v_prev[i] = v[i];
            v[i] = t;
        }
        beta = beta_next;
        c0 = c1;
        s0 = s1;
        c1 = c;
        s1 = s;
    }
    let mut scratch = vec![0.0; n];
    let true_rel = explicit_relres(&x, &mut scratch);
    if true_rel <= tol {
        return Ok((x, true_rel, max_iter));
    }
    Err(Error::SolverNonConvergence {
        residual: true_rel,
        iterations: max_iter,
    })
}

fn sym_givens(a: f64, b: f64) -> (f64, f64, f64) {
    let r = (a * a + b * b).sqrt();
    if r == 0.0 {
        (1.0, 0.0, f64::MIN_POSITIVE)
    } else {
        (a / r, b / r, r)
    }
}

/// BiCGStab for general complex systems given as a matvec; used for the
/// rare large complex-shifted solves that exceed the direct-solve cutoff.
pub fn bicgstab_complex<F>(
    apply: F,
    b: &[Complex64],
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<Complex64>, f64, usize)>
where
    F: Fn(&[Complex64], &mut [Complex64]),
{
    let n = b.len();
    let norm_b = cnorm2(b);
    if norm_b == 0.0 {
        return Ok((vec![Complex64::new(0.0, 0.0); n], 0.0, 0));
    }
    let mut x = vec![Complex64::new(0.0, 0.0); n];
    let mut r = b.to_vec();
    let r0 = r.clone();
    let mut rho = Complex64::new(1.0, 0.0);
    let mut alpha = Complex64::new(1.0, 0.0);
    let mut omega = Complex64::new(1.0, 0.0);
    let mut v = vec![Complex64::new(0.0, 0.0); n];
    let mut p = vec![Complex64::new(0.0, 0.0); n];
    let mut s = vec![Complex64::new(0.0, 0.0); n];
    let mut t = vec![Complex64::new(0.0, 0.0); n];

    for it in 1..=max_iter {
        let rho_new = cdotc(&r0, &r);
        if rho_new.norm() < 1e-290 {
            break;
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        apply(&p, &mut v);
        alpha = rho / cdotc(&r0, &v);
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
        }
        if cnorm2(&s) / norm_b <= tol {
            for i in 0..n {
                x[i] += alpha * p[i];
            }
            let rel = residual_complex(&apply, &x, b, &mut t) / norm_b;
            if rel <= 10.0 * tol {
                return Ok((x, rel, it));
            }
        }
        apply(&s, &mut t);
        omega = cdotc(&t, &s) / cdotc(&t, &t);
        for i in 0..n {
            x[i] += alpha * p[i] + omega * s[i];
            r[i] = s[i] - omega * t[i];
        }
        if cnorm2(&r) / norm_b <= tol {
            let rel = residual_complex(&apply, &x, b, &mut t) / norm_b;
            if rel <= 10.0 * tol {
                return Ok((x, rel, it));
            }
        }
    }
    let rel = {
        let mut scratch = vec![Complex64::new(0.0, 0.0); n];
        residual_complex(&apply, &x, b, &mut scratch) / norm_b
    };
    Err(Error::SolverNonConvergence {
        residual: rel,
        iterations: max_iter,
    })
}

fn residual_complex<F>(apply: &F, x: &[Complex64], b: &[Complex64], scratch: &mut [Complex64]) -> f64
where
    F: Fn(&[Complex64], &mut [Complex64]),
{
    apply(x, scratch);
    let mut rn = 0.0;
    for i in 0..b.len() {
        rn += (b[i] - scratch[i]).norm_sqr();
    }
    rn.sqrt()
}

/// Smallest eigenvalue of a symmetric banded matrix via shift-invert
/// inverse iteration with shift refinement. The returned pair
/// `(eigenvalue, eigenvector)` carries a residual below
/// `tol · max(1, |λ|)`, so the eigenvalue is accurate to that resolution.
pub fn smallest_eigenvalue_band(a: &BandMatrix<f64>, tol: f64) -> Result<(f64, Vec<f64>)> {
    let n = a.n;
    // Gershgorin lower bound
    let mut lb = f64::INFINITY;
    for i in 0..n {
        let mut center = 0.0;
        let mut radius = 0.0;
        let jmin = i.saturating_sub(a.bw);
        for j in jmin..=i {
            let v = a.get(i, j);
            if j == i {
                center = v;
            } else {
                radius += v.abs();
            }
        }
        // upper off-diagonals by symmetry
        for j in (i + 1)..=(i + a.bw).min(n - 1) {
            radius += a.get(j, i).abs();
        }
        lb = lb.min(center - radius);
    }

    let mut shift = lb - 1e-3 * (1.0 + lb.abs());
    let mut v: Vec<f64> = (0..n)
        .map(|i| crate::rng::uniform_f64(crate::rng::splitmix64(0x5eed ^ i as u64)) - 0.5)
        .collect();
    normalize(&mut v);
    let mut theta = 0.0;
    let mut av = vec![0.0; n];

    for _outer in 0..8 {
        let mut shifted = a.clone();
        shifted.shift_diagonal(shift);
        let fact = match shifted.ldlt() {
            Ok(f) => f,
            Err(_) => {
                shift -= 1e-6 * (1.0 + shift.abs());
                continue;
            }
        };
        for _inner in 0..400 {
            let mut w = fact.solve(&v);
            normalize(&mut w);
            a.matvec(&w, &mut av);
            theta = dot(&w, &av);
            let mut res = 0.0;
            for i in 0..n {
                let r = av[i] - theta * w[i];
                res += r * r;
            }
            let res = res.sqrt();
            v = w;
            if res <= tol * theta.abs().max(1.0) {
                return Ok((theta, v));
            }
        }
        // refine the shift toward the current Rayleigh quotient, staying below it
        let new_shift = theta - 1e-5 * (1.0 + theta.abs());
        if (new_shift - shift).abs() < 1e-14 * (1.0 + shift.abs()) {
            shift = theta - 1e-7 * (1.0 + theta.abs());
        } else {
            shift = new_shift;
        }
    }
    Err(Error::SolverNonConvergence {
        residual: f64::NAN,
        iterations: 8 * 400,
    })
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn scale(a: &mut [f64], s: f64) {
    for x in a.iter_mut() {
        *x *= s;
    }
}

fn normalize(a: &mut [f64]) {
    let n = norm2(a);
    if n > 0.0 {
        scale(a, 1.0 / n);
    }
}

fn cdotc(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn cnorm2(a: &[Complex64]) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

/// Largest singular value (operator norm) of a dense complex matrix.
pub fn operator_norm(m: &nalgebra::DMatrix<Complex64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    m.clone().svd(false, false).singular_values.max()
}
