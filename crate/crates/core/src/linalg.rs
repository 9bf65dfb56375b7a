//! Dense linear-algebra kernel: rank-revealing SVD helpers, pseudoinverse,
//! kernel bases and the discrete Lyapunov / Riccati solvers.
//!
//! Everything here is a pure function over owned or borrowed `DMatrix<f64>`
//! values. Rank decisions use a relative threshold on the singular values,
//! see [`RankTolerance`].

use nalgebra::{Complex, DMatrix, DVector, Schur, SymmetricEigen};

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Iteration cap shared by the doubling solvers.
pub const MAX_DOUBLING_STEPS: usize = 200;

/// Relative singular-value threshold used by every rank decision.
///
/// A singular value counts as zero when it is at or below
/// `relative · σ_max`. With `relative` unset the threshold defaults to
/// `1e-10 · max(rows, cols)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RankTolerance {
    relative: Option<f64>,
}

impl RankTolerance {
    pub const DEFAULT_FACTOR: f64 = 1e-10;

    /// Fixed relative threshold. Panics unless `relative > 0`.
    pub fn fixed(relative: f64) -> Self {
        assert!(relative > 0.0, "rank tolerance must be strictly positive");
        Self {
            relative: Some(relative),
        }
    }

    pub fn relative_for(&self, rows: usize, cols: usize) -> f64 {
        self.relative
            .unwrap_or(Self::DEFAULT_FACTOR * rows.max(cols).max(1) as f64)
    }

    /// Absolute cut-off for a matrix of the given shape and largest singular value.
    pub fn cutoff(&self, rows: usize, cols: usize, sigma_max: f64) -> f64 {
        self.relative_for(rows, cols) * sigma_max
    }
}

pub fn ensure_finite(m: &Mat, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidMatrix(what.to_string()))
    }
}

pub(crate) fn ensure_square(m: &Mat, what: &str) -> Result<()> {
    if m.nrows() == m.ncols() {
        Ok(())
    } else {
        Err(Error::DimensionMismatch(format!(
            "{what} must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )))
    }
}

/// Horizontal concatenation; all blocks must share the row count.
pub fn hcat(blocks: &[&Mat]) -> Mat {
    let rows = blocks.first().map_or(0, |b| b.nrows());
    let cols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Mat::zeros(rows, cols);
    let mut c = 0;
    for b in blocks {
        assert_eq!(b.nrows(), rows, "hcat: row mismatch");
        out.view_mut((0, c), (rows, b.ncols())).copy_from(*b);
        c += b.ncols();
    }
    out
}

/// Vertical concatenation; all blocks must share the column count.
pub fn vcat(blocks: &[&Mat]) -> Mat {
    let cols = blocks.first().map_or(0, |b| b.ncols());
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = Mat::zeros(rows, cols);
    let mut r = 0;
    for b in blocks {
        assert_eq!(b.ncols(), cols, "vcat: column mismatch");
        out.view_mut((r, 0), (b.nrows(), cols)).copy_from(*b);
        r += b.nrows();
    }
    out
}

pub fn blkdiag(a: &Mat, b: &Mat) -> Mat {
    let mut out = Mat::zeros(a.nrows() + b.nrows(), a.ncols() + b.ncols());
    out.view_mut((0, 0), a.shape()).copy_from(a);
    out.view_mut((a.nrows(), a.ncols()), b.shape()).copy_from(b);
    out
}

fn to_faer(m: &Mat) -> faer::Mat<f64> {
    faer::Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

fn from_faer(m: faer::MatRef<'_, f64>) -> Mat {
    Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

/// Thin SVD with singular values sorted in descending order.
/// Returns `(U (m×r), σ (r), V (n×r))`, `r = min(m, n)`.
pub fn thin_svd(m: &Mat) -> (Mat, Vec<f64>, Mat) {
    let (rows, cols) = m.shape();
    let r = rows.min(cols);
    if r == 0 {
        return (Mat::zeros(rows, 0), Vec::new(), Mat::zeros(cols, 0));
    }
    let svd = to_faer(m).thin_svd().expect("SVD converges for finite input");
    let sigma = svd.S().column_vector().iter().copied().collect();
    (from_faer(svd.U()), sigma, from_faer(svd.V()))
}

/// Singular values (descending, `min(m, n)` of them) and a complete
/// orthonormal set of right singular vectors (`n×n`).
pub fn right_singular(m: &Mat) -> (Vec<f64>, Mat) {
    let (rows, cols) = m.shape();
    if cols == 0 {
        return (Vec::new(), Mat::zeros(0, 0));
    }
    if rows == 0 {
        return (Vec::new(), Mat::identity(cols, cols));
    }
    let svd = to_faer(m).svd().expect("SVD converges for finite input");
    let sigma = svd.S().column_vector().iter().copied().collect();
    (sigma, from_faer(svd.V()))
}

/// Singular values and a complete orthonormal set of left singular vectors (`m×m`).
pub fn left_singular(m: &Mat) -> (Vec<f64>, Mat) {
    right_singular(&m.transpose())
}

pub fn singular_values(m: &Mat) -> Vec<f64> {
    if m.nrows().min(m.ncols()) == 0 {
        return Vec::new();
    }
    to_faer(m)
        .singular_values()
        .expect("SVD converges for finite input")
}

/// Spectral norm.
pub fn norm2(m: &Mat) -> f64 {
    singular_values(m).first().copied().unwrap_or(0.0)
}

fn rank_from_sigma(sigma: &[f64], rows: usize, cols: usize, tol: RankTolerance) -> usize {
    let smax = sigma.first().copied().unwrap_or(0.0);
    if smax == 0.0 {
        return 0;
    }
    let cut = tol.cutoff(rows, cols, smax);
    sigma.iter().filter(|&&s| s > cut).count()
}

/// Number of singular values above the tolerance cut-off.
pub fn rank_of(m: &Mat, tol: RankTolerance) -> usize {
    rank_from_sigma(&singular_values(m), m.nrows(), m.ncols(), tol)
}

/// Moore–Penrose pseudoinverse via SVD.
pub fn pinv(m: &Mat, tol: RankTolerance) -> Result<Mat> {
    ensure_finite(m, "pinv input")?;
    let (rows, cols) = m.shape();
    let (u, s, v) = thin_svd(m);
    let r = rank_from_sigma(&s, rows, cols, tol);
    let mut out = Mat::zeros(cols, rows);
    for i in 0..r {
        out += (v.column(i) * u.column(i).transpose()) / s[i];
    }
    Ok(out)
}

/// Flip each column so that its largest-magnitude entry is positive.
pub fn sign_normalize_columns(m: &mut Mat) {
    for mut col in m.column_iter_mut() {
        let mut best = 0.0f64;
        let mut sign = 1.0;
        for v in col.iter() {
            // Ties go to the first index.
            if v.abs() > best * (1.0 + 1e-12) {
                best = v.abs();
                sign = v.signum();
            }
        }
        if sign < 0.0 {
            col.neg_mut();
        }
    }
}

/// Orthonormal basis of `ker m`, sign-normalized column by column.
/// Returns an `n×0` matrix when the kernel is trivial.
pub fn kernel_basis(m: &Mat, tol: RankTolerance) -> Result<Mat> {
    ensure_finite(m, "kernel_basis input")?;
    let (rows, cols) = m.shape();
    let (s, v) = right_singular(m);
    let r = rank_from_sigma(&s, rows, cols, tol);
    let mut basis = v.columns(r, cols - r).into_owned();
    sign_normalize_columns(&mut basis);
    Ok(basis)
}

/// Complex eigenvalues of a square matrix.
pub fn eigenvalues(a: &Mat) -> Vec<Complex<f64>> {
    if a.nrows() == 0 {
        return Vec::new();
    }
    match Schur::try_new(a.clone(), 1e-15, 10_000) {
        Some(s) => s.complex_eigenvalues().iter().copied().collect(),
        None => vec![Complex::new(f64::NAN, 0.0); a.nrows()],
    }
}

pub fn spectral_radius(a: &Mat) -> f64 {
    eigenvalues(a).iter().map(|z| z.norm()).fold(0.0, |acc, v| {
        if v.is_nan() || acc.is_nan() {
            f64::NAN
        } else {
            acc.max(v)
        }
    })
}

/// Symmetric part `(m + mᵀ)/2`.
pub fn symmetrize(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

pub fn min_eig_sym(m: &Mat) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    SymmetricEigen::new(symmetrize(m))
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Principal square root of a symmetric positive semidefinite matrix.
/// Negative eigenvalues (rounding noise) are clipped to zero.
pub fn sym_sqrt(m: &Mat) -> Mat {
    let eig = SymmetricEigen::new(symmetrize(m));
    let d = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * Mat::from_diagonal(&d) * eig.eigenvectors.transpose()
}

/// PBH test: every eigenvalue with `|λ| >= 1` must satisfy `rank [A − λI, B] = n`.
pub fn is_stabilizable(a: &Mat, b: &Mat) -> bool {
    let n = a.nrows();
    let scale = norm2(a).max(norm2(b)).max(1.0);
    for lam in eigenvalues(a) {
        if lam.norm() < 1.0 - 1e-12 {
            continue;
        }
        let pencil = faer::Mat::<faer::c64>::from_fn(n, n + b.ncols(), |i, j| {
            if j < n {
                let d = if i == j { lam } else { Complex::new(0.0, 0.0) };
                faer::c64::new(a[(i, j)] - d.re, -d.im)
            } else {
                faer::c64::new(b[(i, j - n)], 0.0)
            }
        });
        let s = pencil.singular_values().expect("SVD converges for finite input");
        let smin = s.iter().copied().fold(f64::INFINITY, f64::min);
        if smin <= 1e-9 * scale {
            return false;
        }
    }
    true
}

/// Solve `A X Aᵀ − X + Qs = 0` for stable `A` by fixed-point doubling.
pub fn solve_dlyap(a: &Mat, qs: &Mat) -> Result<Mat> {
    ensure_square(a, "A")?;
    ensure_finite(a, "A")?;
    ensure_finite(qs, "Qs")?;
    if qs.shape() != a.shape() {
        return Err(Error::DimensionMismatch("Qs must match A".into()));
    }
    let rho = spectral_radius(a);
    if !(rho < 1.0) {
        return Err(Error::UnstableMatrix(rho));
    }
    let mut x = symmetrize(qs);
    let mut ak = a.clone();
    for _ in 0..MAX_DOUBLING_STEPS {
        let inc = &ak * &x * ak.transpose();
        x += &inc;
        ak = &ak * &ak;
        if inc.norm() <= 1e-17 * x.norm().max(1e-300) || ak.norm() < 1e-300 {
            return Ok(symmetrize(&x));
        }
    }
    Err(Error::NoConvergence(MAX_DOUBLING_STEPS))
}

/// Stabilizing solution of a discrete algebraic Riccati equation together
/// with the associated gain (`u = −K x`).
#[derive(Debug, Clone)]
pub struct DareSolution {
    pub x: Mat,
    pub k: Mat,
}

/// `X = AᵀXA − AᵀXB (R + BᵀXB)⁻¹ BᵀXA + Q`.
///
/// Structure-preserving doubling gives a first iterate; Newton (Hewer)
/// steps then polish it. Doubling alone loses accuracy when `Q` or `R` is
/// nearly singular. If the doubling gain is not stabilizing, Newton starts
/// from the gain of the well-posed problem `Q = I`, `R = I`. `A − B K` is verified stable
/// before returning.
pub fn solve_dare(a: &Mat, b: &Mat, qs: &Mat, rs: &Mat) -> Result<DareSolution> {
    ensure_square(a, "A")?;
    let n = a.nrows();
    let p = b.ncols();
    if b.nrows() != n || qs.shape() != (n, n) || rs.shape() != (p, p) {
        return Err(Error::DimensionMismatch("solve_dare operands".into()));
    }
    for (m, what) in [(a, "A"), (b, "B"), (qs, "Q"), (rs, "R")] {
        ensure_finite(m, what)?;
    }
    if p > 0 && min_eig_sym(rs) <= 0.0 {
        return Err(Error::InvalidMatrix("R must be positive definite".into()));
    }
    if !is_stabilizable(a, b) {
        return Err(Error::NotStabilizable);
    }
    if p == 0 {
        let x = solve_dlyap(&a.transpose(), qs)?;
        return Ok(DareSolution {
            x,
            k: Mat::zeros(0, n),
        });
    }
    let stable_gain = |sol: Result<DareSolution>| {
        sol.ok()
            .filter(|s| spectral_radius(&(a - b * &s.k)) < 1.0)
            .map(|s| s.k)
    };
    let eye_n = Mat::identity(n, n);
    let k0 = stable_gain(sda(a, b, qs, rs))
        .or_else(|| stable_gain(sda(a, b, &eye_n, &Mat::identity(p, p))))
        .ok_or(Error::NotStabilizable)?;
    newton_dare(a, b, qs, rs, k0)
}

fn dare_gain(a: &Mat, b: &Mat, rs: &Mat, x: &Mat) -> Result<Mat> {
    (rs + b.transpose() * x * b)
        .lu()
        .solve(&(b.transpose() * x * a))
        .ok_or(Error::NotStabilizable)
}

fn sda(a: &Mat, b: &Mat, qs: &Mat, rs: &Mat) -> Result<DareSolution> {
    let n = a.nrows();
    let r_inv = symmetrize(rs)
        .try_inverse()
        .ok_or_else(|| Error::InvalidMatrix("R is singular".into()))?;
    let eye = Mat::identity(n, n);
    let mut ak = a.clone();
    let mut gk = symmetrize(&(b * &r_inv * b.transpose()));
    let mut hk = symmetrize(qs);
    for _ in 0..MAX_DOUBLING_STEPS {
        let w = (&eye + &gk * &hk).try_inverse().ok_or(Error::NotStabilizable)?;
        let aw = &ak * &w;
        let a_next = &aw * &ak;
        let g_next = symmetrize(&(&gk + &aw * &gk * ak.transpose()));
        let h_next = symmetrize(&(&hk + ak.transpose() * &hk * &w * &ak));
        let delta = (&h_next - &hk).norm();
        ak = a_next;
        gk = g_next;
        hk = h_next;
        if !hk.iter().all(|v| v.is_finite()) {
            return Err(Error::NotStabilizable);
        }
        if delta <= 1e-15 * hk.norm().max(1e-300) || ak.norm() < 1e-300 {
            let k = dare_gain(a, b, rs, &hk)?;
            return Ok(DareSolution { x: hk, k });
        }
    }
    Err(Error::NoConvergence(MAX_DOUBLING_STEPS))
}

const MAX_NEWTON_STEPS: usize = 60;

fn newton_dare(a: &Mat, b: &Mat, qs: &Mat, rs: &Mat, mut k: Mat) -> Result<DareSolution> {
    let mut x = Mat::zeros(a.nrows(), a.nrows());
    let mut prev_dx = f64::INFINITY;
    for _ in 0..MAX_NEWTON_STEPS {
        let acl = a - b * &k;
        let x_next = solve_dlyap(&acl.transpose(), &symmetrize(&(qs + k.transpose() * rs * &k)))
            .map_err(|_| Error::NotStabilizable)?;
        let k_next = dare_gain(a, b, rs, &x_next)?;
        let dx = (&x_next - &x).norm();
        x = x_next;
        k = k_next;
        let xn = x.norm().max(1e-300);
        // Converged, or stalled at the rounding floor of an ill-conditioned problem.
        if dx <= 1e-13 * xn || (dx <= 1e-7 * xn && dx >= 0.5 * prev_dx) {
            if !(spectral_radius(&(a - b * &k)) < 1.0) {
                return Err(Error::NotStabilizable);
            }
            return Ok(DareSolution { x, k });
        }
        prev_dx = dx;
    }
    Err(Error::NoConvergence(MAX_NEWTON_STEPS))
}

/// DARE with a cross term: minimizes `Σ xᵀQx + 2xᵀSu + uᵀRu`.
///
/// Reduced to [`solve_dare`] by completing the square; the returned gain
/// already includes the `R⁻¹Sᵀ` shift, so `u = −K x` is the optimal law.
pub fn solve_dare_cross(a: &Mat, b: &Mat, qs: &Mat, rs: &Mat, s: &Mat) -> Result<DareSolution> {
    let n = a.nrows();
    let p = b.ncols();
    if s.shape() != (n, p) {
        return Err(Error::DimensionMismatch("cross term S must be n×p".into()));
    }
    let r_inv = symmetrize(rs)
        .try_inverse()
        .ok_or_else(|| Error::InvalidMatrix("R is singular".into()))?;
    let shift = &r_inv * s.transpose();
    let a_tilde = a - b * &shift;
    let q_tilde = symmetrize(&(qs - s * &shift));
    let sol = solve_dare(&a_tilde, b, &q_tilde, rs)?;
    let k = &sol.k + shift;
    let rho = spectral_radius(&(a - b * &k));
    if !(rho < 1.0) {
        return Err(Error::NotStabilizable);
    }
    Ok(DareSolution { x: sol.x, k })
}

/// Riccati residual `‖AᵀXA − X − AᵀXB(R + BᵀXB)⁻¹BᵀXA + Q‖_F`.
pub fn dare_residual(a: &Mat, b: &Mat, qs: &Mat, rs: &Mat, x: &Mat) -> f64 {
    let btx = b.transpose() * x;
    let inner = (rs + &btx * b)
        .try_inverse()
        .unwrap_or_else(|| Mat::zeros(b.ncols(), b.ncols()));
    let res = a.transpose() * x * a - x - a.transpose() * x * b * inner * &btx * a + qs;
    res.norm()
}
