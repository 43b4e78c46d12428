//! Matrix-free symmetric eigensolver and conjugate gradient.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// A real symmetric operator applied without storing its matrix.
pub trait LinearOperator: Sync {
    fn dim(&self) -> usize;

    /// `y = A x`. `y` is overwritten.
    fn apply(&self, x: &[f64], y: &mut [f64]);

    /// Dense assembly by applying the operator to unit vectors.
    fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut m = DMatrix::zeros(n, n);
        let mut e = vec![0.0; n];
        let mut col = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            self.apply(&e, &mut col);
            e[j] = 0.0;
            for i in 0..n {
                m[(i, j)] = col[i];
            }
        }
        m
    }
}

impl LinearOperator for DMatrix<f64> {
    fn dim(&self) -> usize {
        self.nrows()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let r = self * DVector::from_column_slice(x);
        y.copy_from_slice(r.as_slice());
    }

    fn to_dense(&self) -> DMatrix<f64> {
        self.clone()
    }
}

#[derive(Clone, Debug)]
pub struct LanczosOptions {
    /// Absolute bound on `‖Av - θv‖` for a unit vector `v`.
    pub tolerance: f64,
    /// Total operator applications across all restarts.
    pub max_iterations: usize,
    /// Krylov dimension between explicit restarts.
    pub krylov_dim: usize,
    /// Below this dimension the operator is assembled and diagonalized densely.
    pub dense_below: usize,
    pub seed: u64,
}

impl Default for LanczosOptions {
    fn default() -> Self {
        LanczosOptions {
            tolerance: 1e-10,
            max_iterations: 2000,
            krylov_dim: 120,
            dense_below: 2048,
            seed: 0x5eed,
        }
    }
}

#[derive(Clone, Debug)]
pub struct EigenPair {
    pub value: f64,
    pub vector: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
}

/// Safe front for `dgemm`: `C = α·A·B + β·C` with explicit strides.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    let extent = |rows: usize, cols: usize, rs: usize, cs: usize| (rows - 1) * rs + (cols - 1) * cs + 1;
    if k > 0 {
        assert!(a.len() >= extent(m, k, rsa, csa) && b.len() >= extent(k, n, rsb, csb));
    }
    assert!(c.len() >= extent(m, n, rsc, csc));
    // SAFETY: the assertions above keep every strided access inside the slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

/// `A Aᵀ` for an `m × k` matrix `A`, row-major in the result. Only blocks on
/// or above the diagonal are multiplied; the rest is mirrored.
pub(crate) fn gram(m: usize, k: usize, a: &[f64], (rs, cs): (usize, usize)) -> Vec<f64> {
    const BLOCK: usize = 64;
    let mut out = vec![0.0; m * m];
    for i0 in (0..m).step_by(BLOCK) {
        let bi = BLOCK.min(m - i0);
        for j0 in (i0..m).step_by(BLOCK) {
            let bj = BLOCK.min(m - j0);
            gemm(bi, k, bj, 1.0, &a[i0 * rs..], (rs, cs), &a[j0 * rs..], (cs, rs), 0.0, &mut out[i0 * m + j0..], (m, 1));
        }
    }
    for i in 0..m {
        for j in 0..i {
            out[i * m + j] = out[j * m + i];
        }
    }
    out
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn project_out(w: &mut [f64], basis: &[Vec<f64>]) {
    for u in basis {
        let c = dot(w, u);
        axpy(-c, u, w);
    }
}

/// `‖Av - θv‖` for the given pair.
pub fn residual_norm<A: LinearOperator + ?Sized>(op: &A, value: f64, vector: &[f64]) -> f64 {
    let mut av = vec![0.0; vector.len()];
    op.apply(vector, &mut av);
    av.iter().zip(vector).map(|(a, v)| (a - value * v).powi(2)).sum::<f64>().sqrt()
}

/// Lowest eigenpair of `op` restricted to the orthogonal complement of
/// `deflate` (orthonormal vectors).
///
/// Restarted Lanczos with full reorthogonalization; restarts from the current
/// Ritz vector. Dimensions below `dense_below` go through a dense solve.
pub fn lowest_eigenpair<A: LinearOperator + ?Sized>(
    op: &A,
    deflate: &[Vec<f64>],
    opts: &LanczosOptions,
) -> Result<EigenPair> {
    let n = op.dim();
    if n == 0 {
        return Err(Error::Contract("eigenproblem of dimension 0".into()));
    }
    if deflate.len() >= n {
        return Err(Error::Contract("deflation space fills the whole space".into()));
    }
    if n < opts.dense_below {
        return dense_lowest(op, deflate);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut v: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() - 0.5).collect();
    project_out(&mut v, deflate);
    normalize(&mut v);

    let mut total = 0usize;
    let mut w = vec![0.0; n];
    let mut best = (f64::INFINITY, v.clone(), f64::INFINITY);
    loop {
        let m = opts.krylov_dim.min(n - deflate.len());
        let mut basis: Vec<Vec<f64>> = vec![v.clone()];
        let mut alpha: Vec<f64> = Vec::with_capacity(m);
        let mut beta: Vec<f64> = Vec::with_capacity(m);
        let mut ritz = (f64::INFINITY, Vec::new());
        for j in 0..m {
            op.apply(&basis[j], &mut w);
            total += 1;
            project_out(&mut w, deflate);
            let a = dot(&w, &basis[j]);
            alpha.push(a);
            // two passes of Gram-Schmidt against the whole Krylov basis
            project_out(&mut w, &basis);
            project_out(&mut w, &basis);
            project_out(&mut w, deflate);
            let b = norm(&w);
            let check = j + 1 == m || b < 1e-12 || j % 4 == 3 || total >= opts.max_iterations;
            if check {
                let (theta, s) = tridiagonal_lowest(&alpha, &beta);
                let est = b * s[s.len() - 1].abs();
                ritz = (theta, s);
                if est <= 0.1 * opts.tolerance || b < 1e-12 || total >= opts.max_iterations {
                    break;
                }
            }
            if j + 1 == m {
                break;
            }
            beta.push(b);
            let next: Vec<f64> = w.iter().map(|x| x / b).collect();
            basis.push(next);
        }
        let (theta, s) = ritz;
        let mut y = vec![0.0; n];
        for (c, u) in s.iter().zip(&basis) {
            axpy(*c, u, &mut y);
        }
        project_out(&mut y, deflate);
        normalize(&mut y);
        let res = deflated_residual(op, theta, &y, deflate);
        if res < best.2 {
            best = (theta, y.clone(), res);
        }
        if res <= opts.tolerance {
            return Ok(EigenPair { value: theta, vector: y, residual: res, iterations: total });
        }
        if total >= opts.max_iterations {
            return Err(Error::NoConvergence { iterations: total, residual: best.2 });
        }
        v = y;
    }
}

fn deflated_residual<A: LinearOperator + ?Sized>(op: &A, theta: f64, y: &[f64], deflate: &[Vec<f64>]) -> f64 {
    let mut ay = vec![0.0; y.len()];
    op.apply(y, &mut ay);
    project_out(&mut ay, deflate);
    ay.iter().zip(y).map(|(a, v)| (a - theta * v).powi(2)).sum::<f64>().sqrt()
}

fn normalize(v: &mut [f64]) {
    let n = norm(v);
    for x in v.iter_mut() {
        *x /= n;
    }
}

fn tridiagonal_lowest(alpha: &[f64], beta: &[f64]) -> (f64, Vec<f64>) {
    let k = alpha.len();
    let mut t = DMatrix::zeros(k, k);
    for i in 0..k {
        t[(i, i)] = alpha[i];
        if i + 1 < k {
            t[(i, i + 1)] = beta[i];
            t[(i + 1, i)] = beta[i];
        }
    }
    let eig = SymmetricEigen::new(t);
    let idx = argmin(eig.eigenvalues.as_slice());
    (eig.eigenvalues[idx], eig.eigenvectors.column(idx).iter().copied().collect())
}

fn argmin(v: &[f64]) -> usize {
    v.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).map(|(i, _)| i).unwrap_or(0)
}

/// Dense lowest eigenpair on the complement of `deflate`.
pub fn dense_lowest<A: LinearOperator + ?Sized>(op: &A, deflate: &[Vec<f64>]) -> Result<EigenPair> {
    let n = op.dim();
    let mut m = op.to_dense();
    if !deflate.is_empty() {
        // P A P plus a large shift on the deflated directions
        let mut p = DMatrix::<f64>::identity(n, n);
        for u in deflate {
            let u = DVector::from_column_slice(u);
            p -= &u * u.transpose();
        }
        let shift = 1.0 + m.iter().map(|x| x.abs()).sum::<f64>();
        m = &p * m * &p + (DMatrix::identity(n, n) - &p) * shift;
    }
    let sym = (&m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let idx = argmin(eig.eigenvalues.as_slice());
    let vector: Vec<f64> = eig.eigenvectors.column(idx).iter().copied().collect();
    let value = eig.eigenvalues[idx];
    let residual = deflated_residual(op, value, &vector, deflate);
    Ok(EigenPair { value, vector, residual, iterations: 0 })
}

#[derive(Clone, Debug)]
pub struct CgOutcome {
    pub solution: Vec<f64>,
    pub iterations: usize,
    pub relative_residual: f64,
    pub converged: bool,
}

/// Solve `A x = b` for symmetric positive definite `A` given as a closure.
/// Stops when `‖r‖ ≤ tol ‖b‖`.
pub fn conjugate_gradient(
    apply: impl Fn(&[f64], &mut [f64]),
    b: &[f64],
    tol: f64,
    max_iterations: usize,
) -> CgOutcome {
    let n = b.len();
    let bnorm = norm(b);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return CgOutcome { solution: x, iterations: 0, relative_residual: 0.0, converged: true };
    }
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut ap = vec![0.0; n];
    let mut rr = dot(&r, &r);
    let mut it = 0;
    while it < max_iterations {
        if rr.sqrt() <= tol * bnorm {
            break;
        }
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            break;
        }
        let a = rr / pap;
        axpy(a, &p, &mut x);
        axpy(-a, &ap, &mut r);
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        for (pi, ri) in p.iter_mut().zip(&r) {
            *pi = ri + beta * *pi;
        }
        rr = rr_new;
        it += 1;
    }
    let rel = rr.sqrt() / bnorm;
    CgOutcome { solution: x, iterations: it, relative_residual: rel, converged: rel <= tol }
}
