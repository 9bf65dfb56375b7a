//! Stability certificates, constrained Sylvester equations, simulation
//! functions and interfaces between an abstract and a concrete DV system.
//!
//! Notation: the concrete system is `x⁺ = A x + B u`, `y = C x` with
//! `x ∈ ℝⁿ`, `u ∈ ℝᵖ`; the abstract one is `z⁺ = F z + G v`, `w = H z`
//! with `z ∈ ℝᵐ`, `v ∈ ℝ^q`. A certificate ties them together through
//! `x ≈ P z` and the interface `u = R v + Q z + K (x − P z)`.

use nalgebra::{Cholesky, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::conversion::DvSystem;
use crate::descriptor::DaeSystem;
use crate::error::{Error, Result};
use crate::linalg::{
    eigenvalues, hcat, is_stabilizable, kernel_basis, min_eig_sym, norm2, pinv, rank_of, solve_dare_cross,
    spectral_radius, sym_sqrt, symmetrize, Mat, RankTolerance, Vector,
};

/// Relative tolerance for the matrix-inequality checks.
pub const CERT_TOL: f64 = 1e-8;
/// Relative tolerance for the Sylvester residuals.
pub const SYLVESTER_TOL: f64 = 1e-8;
/// Relative slack on the verified contraction rate.
pub const RATE_TOL: f64 = 1e-9;

/// `{0.30, 0.35, …, 0.95}`.
pub fn default_lambda_grid() -> Vec<f64> {
    (0..14).map(|i| (30 + 5 * i) as f64 / 100.0).collect()
}

/// `M ⪰ CᵀC`, `(A+BK)ᵀM(A+BK) ⪯ λ²M`, `ρ(A+BK) < 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct StabilityCert {
    pub m: Mat,
    pub k: Mat,
    pub lambda: f64,
}

impl StabilityCert {
    pub fn closed_loop(&self, a: &Mat, b: &Mat) -> Mat {
        a + b * &self.k
    }

    /// Verify all three certificate invariants.
    pub fn check(&self, a: &Mat, b: &Mat, c: &Mat) -> Result<()> {
        let n = a.nrows();
        if self.m.shape() != (n, n) || self.k.shape() != (b.ncols(), n) {
            return Err(Error::InvalidCertificate("M or K has the wrong shape".into()));
        }
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            return Err(Error::InvalidCertificate(format!(
                "lambda = {} outside (0, 1)",
                self.lambda
            )));
        }
        let scale = CERT_TOL * norm2(&self.m).max(f64::MIN_POSITIVE);
        let gap = min_eig_sym(&(&self.m - c.transpose() * c));
        if gap < -scale {
            return Err(Error::InvalidCertificate(format!(
                "M − CᵀC has eigenvalue {gap:e}"
            )));
        }
        let acl = self.closed_loop(a, b);
        let decay = self.lambda * self.lambda * &self.m - acl.transpose() * &self.m * &acl;
        let gap = min_eig_sym(&decay);
        if gap < -scale {
            return Err(Error::InvalidCertificate(format!(
                "λ²M − (A+BK)ᵀM(A+BK) has eigenvalue {gap:e}"
            )));
        }
        let rho = spectral_radius(&acl);
        if !(rho < 1.0) {
            return Err(Error::InvalidCertificate(format!(
                "closed loop has spectral radius {rho}"
            )));
        }
        if min_eig_sym(&self.m) <= 0.0 {
            return Err(Error::InvalidCertificate("M is not positive definite".into()));
        }
        // The eigenvalue test above is absolute in ‖M‖ and can pass a rate
        // above λ when M is ill-conditioned; the M-norm rate cannot.
        let rate = self.contraction_rate(a, b)?;
        if rate > self.lambda * (1.0 + RATE_TOL) {
            return Err(Error::InvalidCertificate(format!(
                "closed loop contracts V at rate {rate}, above λ = {}",
                self.lambda
            )));
        }
        Ok(())
    }

    /// Induced M-norm of `A + BK`, the smallest λ with `V(Ax) ≤ λ V(x)`.
    pub fn contraction_rate(&self, a: &Mat, b: &Mat) -> Result<f64> {
        let l = Cholesky::new(self.m.clone())
            .ok_or_else(|| Error::InvalidCertificate("M is not positive definite".into()))?
            .l();
        let acl = self.closed_loop(a, b);
        // ‖L⁻¹ Aᵀ L‖₂ equals ‖Lᵀ A L⁻ᵀ‖₂, the M-norm of A.
        let scaled = l
            .solve_lower_triangular(&(acl.transpose() * &l))
            .ok_or_else(|| Error::InvalidCertificate("M is not positive definite".into()))?;
        Ok(norm2(&scaled))
    }
}

fn check_abc(a: &Mat, b: &Mat, c: &Mat) -> Result<()> {
    let n = a.nrows();
    if a.ncols() != n || b.nrows() != n || c.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "A {:?}, B {:?}, C {:?} are inconsistent",
            a.shape(),
            b.shape(),
            c.shape()
        )));
    }
    Ok(())
}

/// Certificate for one fixed λ.
///
/// The scaled pair `(A/λ, B/λ)` gets an LQR problem whose weight `X` is the
/// trace-minimal positive definite upper bound of the block matrix `L`
/// (eigenvalues of `L` clipped from below at a small ridge). The Riccati
/// solution `ΔM` then gives `M = ΔM + CᵀC`.
pub fn certify_at(a: &Mat, b: &Mat, c: &Mat, lambda: f64) -> Result<StabilityCert> {
    check_abc(a, b, c)?;
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::InvalidCertificate(format!(
            "lambda = {lambda} outside (0, 1)"
        )));
    }
    let n = a.nrows();
    let p = b.ncols();
    let a_s = a / lambda;
    let b_s = b / lambda;
    let cc = c.transpose() * c;
    let top = hcat(&[
        &(a_s.transpose() * &cc * &a_s - &cc),
        &(a_s.transpose() * &cc * &b_s),
    ]);
    let bottom = hcat(&[&(b_s.transpose() * &cc * &a_s), &(b_s.transpose() * &cc * &b_s)]);
    let l = symmetrize(&crate::linalg::vcat(&[&top, &bottom]));
    let ridge = 1e-9 * norm2(&l).max(1.0);
    let eig = SymmetricEigen::new(l);
    let clipped = eig.eigenvalues.map(|v| v.max(ridge));
    let x = symmetrize(&(&eig.eigenvectors * Mat::from_diagonal(&clipped) * eig.eigenvectors.transpose()));
    let qw = x.view((0, 0), (n, n)).into_owned();
    let s = x.view((0, n), (n, p)).into_owned();
    let rw = x.view((n, n), (p, p)).into_owned();
    let sol = solve_dare_cross(&a_s, &b_s, &qw, &rw, &s)?;
    let mut cert = StabilityCert {
        m: symmetrize(&(sol.x + cc)),
        k: -sol.k,
        lambda,
    };
    // Rounding in an ill-conditioned M can leave the verified rate a little
    // above the grid point; the certificate carries the verified rate.
    let rate = cert.contraction_rate(a, b)?;
    if rate >= 1.0 {
        return Err(Error::InvalidCertificate(format!(
            "closed loop contracts V at rate {rate}"
        )));
    }
    cert.lambda = cert.lambda.max(rate);
    cert.check(a, b, c)?;
    Ok(cert)
}

/// Every grid point that yields a valid certificate, in grid order.
pub fn certs_on_grid(a: &Mat, b: &Mat, c: &Mat, grid: &[f64]) -> Result<Vec<StabilityCert>> {
    check_abc(a, b, c)?;
    if !is_stabilizable(a, b) {
        return Err(Error::NotStabilizable);
    }
    Ok(grid.iter().filter_map(|&l| certify_at(a, b, c, l).ok()).collect())
}

/// Certificate search over a λ grid.
///
/// Without an abstraction at hand the actual gain coefficient is unknown,
/// so grid points are ranked by the proxy `√λ_max(M) / (1 − λ)`, which
/// scales the coefficient for any fixed mismatch `BR − PG`.
pub fn solve_stability_cert(a: &Mat, b: &Mat, c: &Mat, grid: &[f64]) -> Result<StabilityCert> {
    let certs = certs_on_grid(a, b, c, grid)?;
    certs
        .into_iter()
        .map(|cert| {
            let score = norm2(&cert.m).sqrt() / (1.0 - cert.lambda);
            (score, cert)
        })
        .min_by(|x, y| x.0.total_cmp(&y.0))
        .map(|(_, cert)| cert)
        .ok_or(Error::NoFeasibleLambda)
}

fn vec_of(m: &Mat) -> Vector {
    Vector::from_column_slice(m.as_slice())
}

fn unvec(v: &[f64], rows: usize, cols: usize) -> Mat {
    Mat::from_column_slice(rows, cols, v)
}

fn check_sylvester_dims(a: &Mat, b: &Mat, c: &Mat, f: &Mat, h: &Mat) -> Result<()> {
    check_abc(a, b, c)?;
    let m = f.nrows();
    if f.ncols() != m || h.shape() != (c.nrows(), m) {
        return Err(Error::DimensionMismatch(format!(
            "F {:?} must be m×m and H {:?} must be k×m",
            f.shape(),
            h.shape()
        )));
    }
    Ok(())
}

/// Residuals `‖PF − AP − BQ‖_F` and `‖H − CP‖_F`.
pub fn sylvester_residuals(a: &Mat, b: &Mat, c: &Mat, f: &Mat, h: &Mat, p: &Mat, q: &Mat) -> (f64, f64) {
    ((p * f - a * p - b * q).norm(), (h - c * p).norm())
}

/// Scale against which Sylvester residuals are judged.
pub fn sylvester_scale(a: &Mat, b: &Mat, c: &Mat, f: &Mat, h: &Mat, p: &Mat, q: &Mat) -> f64 {
    let data = a.norm() + b.norm() + c.norm() + f.norm() + h.norm();
    data.max(1.0) * (p.norm() + q.norm()).max(1.0)
}

fn accept_sylvester(a: &Mat, b: &Mat, c: &Mat, f: &Mat, h: &Mat, p: Mat, q: Mat) -> Result<(Mat, Mat)> {
    let (r1, r2) = sylvester_residuals(a, b, c, f, h, &p, &q);
    let worst = r1.max(r2);
    if !worst.is_finite() || worst > SYLVESTER_TOL * sylvester_scale(a, b, c, f, h, &p, &q) {
        return Err(Error::Infeasible(worst));
    }
    Ok((p, q))
}

/// `PF = AP + BQ`, `H = CP` by vectorization, taking the minimum-norm
/// particular solution.
pub fn solve_sylvester_kron(a: &Mat, b: &Mat, c: &Mat, f: &Mat, h: &Mat) -> Result<(Mat, Mat)> {
    check_sylvester_dims(a, b, c, f, h)?;
    let tol = RankTolerance::default();
    let n = a.nrows();
    let p = b.ncols();
    let m = f.nrows();
    let eye_m = Mat::identity(m, m);
    let eye_n = Mat::identity(n, n);
    let ic = eye_m.kronecker(c);
    let ic_pinv = pinv(&ic, tol)?;
    let base = &ic_pinv * vec_of(h);
    let proj = Mat::identity(n * m, n * m) - &ic_pinv * &ic;
    let sy = f.transpose().kronecker(&eye_n) - eye_m.kronecker(a);
    let system = hcat(&[&(&sy * &proj), &(-eye_m.kronecker(b))]);
    let rhs = -(&sy * &base);
    let sol = pinv(&system, tol)? * rhs;
    let vec_p = base + &proj * sol.rows(0, n * m);
    let pm = unvec(vec_p.as_slice(), n, m);
    let qm = unvec(sol.rows(n * m, p * m).into_owned().as_slice(), p, m);
    accept_sylvester(a, b, c, f, h, pm, qm)
}

/// Row-space factorization `M = [R 0] [Q1; Q2]` for a full-row-rank `M`.
fn rq_split(mat: &Mat, tol: RankTolerance, what: &str) -> Result<(Mat, Mat, Mat)> {
    let (k, cols) = mat.shape();
    let rank = rank_of(mat, tol);
    if rank < k || k > cols {
        return Err(Error::RankDeficiency(format!("{what} has rank {rank} < {k}")));
    }
    let qr = mat.transpose().qr();
    let q1 = qr.q().transpose();
    let r1 = qr.r().transpose();
    let q2 = kernel_basis(mat, tol)?.transpose();
    Ok((r1, q1, q2))
}

/// `PF = AP + BQ`, `H = CP` by orthogonal reduction to an unconstrained
/// Sylvester equation. The free block of `Q` is set to zero.
pub fn solve_sylvester_rq(a: &Mat, b: &Mat, c: &Mat, f: &Mat, h: &Mat) -> Result<(Mat, Mat)> {
    check_sylvester_dims(a, b, c, f, h)?;
    let tol = RankTolerance::default();
    let n = a.nrows();
    let k = c.nrows();
    let m = f.nrows();
    let (r1, q1, q2) = rq_split(c, tol, "C")?;
    let b1 = &q1 * b;
    let b2 = &q2 * b;
    let (r2, q3, _q4) = rq_split(&b1, tol, "B1")?;
    let r1_inv = r1
        .try_inverse()
        .ok_or_else(|| Error::RankDeficiency("R1 is singular".into()))?;
    let r2_inv = r2
        .try_inverse()
        .ok_or_else(|| Error::RankDeficiency("R2 is singular".into()))?;
    let a11 = &q1 * a * q1.transpose();
    let a12 = &q1 * a * q2.transpose();
    let a21 = &q2 * a * q1.transpose();
    let a22 = &q2 * a * q2.transpose();
    let e1 = &b2 * q3.transpose();
    let ph = &r1_inv * h;

    let nz = n - k;
    let z = if nz == 0 {
        Mat::zeros(0, m)
    } else {
        let abar = &e1 * &r2_inv * &a12 - &a22;
        let shifted = -&abar;
        let ef = eigenvalues(f);
        let ea = eigenvalues(&shifted);
        let dist = ef
            .iter()
            .flat_map(|x| ea.iter().map(move |y| (x - y).norm()))
            .fold(f64::INFINITY, f64::min);
        let scale = norm2(f).max(norm2(&abar)).max(1.0);
        if dist <= 1e-8 * scale {
            return Err(Error::CommonEigenvalues(dist));
        }
        let rhs = &e1 * &r2_inv * &ph * f + &a21 * &ph - &e1 * &r2_inv * &a11 * &ph;
        let op = f.transpose().kronecker(&Mat::identity(nz, nz)) + Mat::identity(m, m).kronecker(&abar);
        let vz = op
            .lu()
            .solve(&vec_of(&rhs))
            .ok_or(Error::CommonEigenvalues(dist))?;
        unvec(vz.as_slice(), nz, m)
    };
    let q3_hat = &r2_inv * (&ph * f - &a12 * &z - &a11 * &ph);
    let pm = q2.transpose() * &z + q1.transpose() * &ph;
    let qm = q3.transpose() * q3_hat;
    accept_sylvester(a, b, c, f, h, pm, qm)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SylvesterMethod {
    #[default]
    Kron,
    Rq,
}

pub fn solve_sylvester(
    method: SylvesterMethod,
    a: &Mat,
    b: &Mat,
    c: &Mat,
    f: &Mat,
    h: &Mat,
) -> Result<(Mat, Mat)> {
    match method {
        SylvesterMethod::Kron => solve_sylvester_kron(a, b, c, f, h),
        SylvesterMethod::Rq => solve_sylvester_rq(a, b, c, f, h),
    }
}

/// Least-squares `R = (√M B)⁺ √M P G`.
pub fn choose_r(p: &Mat, g: &Mat, b: &Mat, m: &Mat) -> Result<Mat> {
    let sm = sym_sqrt(m);
    Ok(pinv(&(&sm * b), RankTolerance::default())? * &sm * p * g)
}

/// `‖√M (BR − PG)‖₂ / (1 − λ)`.
pub fn gamma_coefficient(m: &Mat, b: &Mat, r: &Mat, p: &Mat, g: &Mat, lambda: f64) -> f64 {
    norm2(&(sym_sqrt(m) * (b * r - p * g))) / (1.0 - lambda)
}

/// Interface `u = R v + Q z + K (x − P z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Interface {
    pub p: Mat,
    pub q: Mat,
    pub r: Mat,
    pub k: Mat,
}

impl Interface {
    pub fn apply(&self, v: &Vector, z: &Vector, x: &Vector) -> Vector {
        &self.r * v + &self.q * z + &self.k * (x - &self.p * z)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefinementCertificate {
    pub p: Mat,
    pub q: Mat,
    pub r: Mat,
    pub stability: StabilityCert,
    pub gamma_coeff: f64,
    pub v_max: f64,
    pub epsilon: f64,
}

impl RefinementCertificate {
    pub fn new(p: Mat, q: Mat, r: Mat, stability: StabilityCert, gamma_coeff: f64) -> Result<Self> {
        let n = p.nrows();
        let m = p.ncols();
        let pin = stability.k.nrows();
        if q.shape() != (pin, m) || r.nrows() != pin || stability.k.ncols() != n {
            return Err(Error::DimensionMismatch(
                "certificate blocks are inconsistent".into(),
            ));
        }
        if !(gamma_coeff >= 0.0) {
            return Err(Error::InvalidCertificate(
                "gamma_coeff must be nonnegative".into(),
            ));
        }
        Ok(Self {
            p,
            q,
            r,
            stability,
            gamma_coeff,
            v_max: 0.0,
            epsilon: 0.0,
        })
    }

    pub fn lambda(&self) -> f64 {
        self.stability.lambda
    }

    pub fn interface(&self) -> Interface {
        Interface {
            p: self.p.clone(),
            q: self.q.clone(),
            r: self.r.clone(),
            k: self.stability.k.clone(),
        }
    }

    pub fn interface_apply(&self, v: &Vector, z: &Vector, x: &Vector) -> Vector {
        &self.r * v + &self.q * z + &self.stability.k * (x - &self.p * z)
    }

    /// `‖√M (BR − PG)‖₂`, the per-step input gain of the Lyapunov decrease.
    pub fn input_gain(&self, b: &Mat, g: &Mat) -> f64 {
        self.gamma_coeff_for(b, g) * (1.0 - self.lambda())
    }

    fn gamma_coeff_for(&self, b: &Mat, g: &Mat) -> f64 {
        gamma_coefficient(&self.stability.m, b, &self.r, &self.p, g, self.lambda())
    }

    /// `V(z, x) = √((x − Pz)ᵀ M (x − Pz))`.
    pub fn lyapunov_value(&self, z: &Vector, x: &Vector) -> f64 {
        let e = x - &self.p * z;
        (e.transpose() * &self.stability.m * &e)[(0, 0)].max(0.0).sqrt()
    }

    /// `S(z, x) = max(V(z, x), γ·v_max)` with the stored `v_max`.
    pub fn sim_fn_value(&self, z: &Vector, x: &Vector) -> f64 {
        self.lyapunov_value(z, x).max(self.gamma_coeff * self.v_max)
    }

    pub fn epsilon_bound(&self, z0: &Vector, x0: &Vector, v_max: f64) -> f64 {
        self.lyapunov_value(z0, x0).max(self.gamma_coeff * v_max)
    }

    /// Record `v_max` and the resulting ε for the initial pair `(z0, x0)`.
    pub fn bind(&mut self, z0: &Vector, x0: &Vector, v_max: f64) -> Result<f64> {
        if !(v_max >= 0.0) {
            return Err(Error::InvalidCertificate("v_max must be nonnegative".into()));
        }
        self.v_max = v_max;
        self.epsilon = self.epsilon_bound(z0, x0, v_max);
        Ok(self.epsilon)
    }

    /// Abstract state minimizing `V(·, x0)`.
    pub fn match_initial_state(&self, x0: &Vector) -> Vector {
        let sm = sym_sqrt(&self.stability.m);
        let lhs = &sm * &self.p;
        match pinv(&lhs, RankTolerance::default()) {
            Ok(pi) => pi * (&sm * x0),
            Err(_) => Vector::zeros(self.p.ncols()),
        }
    }

    /// Check every invariant against the concrete `(A, B, C)` and abstract `(F, G, H)`.
    pub fn validate(&self, a: &Mat, b: &Mat, c: &Mat, f: &Mat, g: &Mat, h: &Mat) -> Result<()> {
        check_sylvester_dims(a, b, c, f, h)?;
        if self.p.shape() != (a.nrows(), f.nrows()) || self.r.shape() != (b.ncols(), g.ncols()) {
            return Err(Error::InvalidCertificate(
                "P or R does not match the systems".into(),
            ));
        }
        self.stability.check(a, b, c)?;
        let (r1, r2) = sylvester_residuals(a, b, c, f, h, &self.p, &self.q);
        let scale = sylvester_scale(a, b, c, f, h, &self.p, &self.q);
        if r1.max(r2) > SYLVESTER_TOL * scale {
            return Err(Error::InvalidCertificate(format!(
                "Sylvester residuals {r1:e}, {r2:e}"
            )));
        }
        let gamma = self.gamma_coeff_for(b, g);
        if self.gamma_coeff + 1e-9 * gamma.max(1.0) < gamma {
            return Err(Error::InvalidCertificate(format!(
                "gamma_coeff {} below the required {gamma}",
                self.gamma_coeff
            )));
        }
        Ok(())
    }
}

/// Solve the Sylvester conditions, pick `R` and compute the gain coefficient.
pub fn build_certificate(
    concrete: &DvSystem,
    abstract_dv: &DvSystem,
    stability: StabilityCert,
    method: SylvesterMethod,
) -> Result<RefinementCertificate> {
    let (a, b, c) = (&concrete.a_d, &concrete.b_d, &concrete.c);
    let (f, g, h) = (&abstract_dv.a_d, &abstract_dv.b_d, &abstract_dv.c);
    let (p, q) = solve_sylvester(method, a, b, c, f, h)?;
    let r = choose_r(&p, g, b, &stability.m)?;
    let gamma = gamma_coefficient(&stability.m, b, &r, &p, g, stability.lambda);
    RefinementCertificate::new(p, q, r, stability, gamma)
}

/// Precision of the composition of two approximate relations.
pub fn compose_transitivity(eps1: f64, eps2: f64) -> f64 {
    eps1 + eps2
}

/// `E x⁺ = A x + B u`, `y = C x` viewed as a transition system.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionModel {
    pub e: Mat,
    pub a: Mat,
    pub b: Mat,
    pub c: Mat,
}

impl From<&DaeSystem> for TransitionModel {
    fn from(s: &DaeSystem) -> Self {
        Self {
            e: s.e.clone(),
            a: s.a.clone(),
            b: s.b.clone(),
            c: s.c.clone(),
        }
    }
}

impl From<&DvSystem> for TransitionModel {
    fn from(s: &DvSystem) -> Self {
        Self {
            e: Mat::identity(s.n(), s.n()),
            a: s.a_d.clone(),
            b: s.b_d.clone(),
            c: s.c.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RelationVerdict {
    /// No violation found in the given number of trials. This is evidence,
    /// not proof.
    Holds { trials: usize },
    Counterexample {
        trial: usize,
        abstract_state: Vector,
        reason: String,
        residual: f64,
    },
}

impl RelationVerdict {
    pub fn holds(&self) -> bool {
        matches!(self, RelationVerdict::Holds { .. })
    }
}

/// Sampled check that `x = H x_a` is a simulation relation from the abstract
/// system to the concrete one: outputs agree and every sampled abstract
/// transition has a concrete transition ending in a related state.
pub fn verify_relation_sampled(
    abstract_sys: &TransitionModel,
    concrete: &TransitionModel,
    h: &Mat,
    trials: usize,
    seed: u64,
    tol: f64,
) -> Result<RelationVerdict> {
    let ma = abstract_sys.a.nrows();
    let n = concrete.a.nrows();
    if h.shape() != (n, ma) {
        return Err(Error::DimensionMismatch(format!("H must be {n}×{ma}")));
    }
    if concrete.c.nrows() != abstract_sys.c.nrows() {
        return Err(Error::DimensionMismatch("output dimensions differ".into()));
    }
    let rt = RankTolerance::default();
    let step_a = hcat(&[&abstract_sys.e, &(-&abstract_sys.b)]);
    let step_a_pinv = pinv(&step_a, rt)?;
    let step_a_kernel = kernel_basis(&step_a, rt)?;
    let b_pinv = pinv(&concrete.b, rt)?;
    let out_gap = &concrete.c * h - &abstract_sys.c;
    let scale = 1.0 + norm2(&concrete.a) + norm2(&concrete.e) + norm2(h);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for trial in 0..trials {
        let xa = Vector::from_fn(ma, |_, _| rng.gen_range(-1.0..1.0));
        let y_gap = (&out_gap * &xa).norm();
        if y_gap > tol * (1.0 + xa.norm()) {
            return Ok(RelationVerdict::Counterexample {
                trial,
                abstract_state: xa,
                reason: "outputs differ".into(),
                residual: y_gap,
            });
        }
        let rhs = &abstract_sys.a * &xa;
        let mut sol = &step_a_pinv * &rhs;
        if (&step_a * &sol - &rhs).norm() > tol * (1.0 + rhs.norm()) {
            // No abstract successor from this state, nothing to match.
            continue;
        }
        let free = Vector::from_fn(step_a_kernel.ncols(), |_, _| rng.gen_range(-1.0..1.0));
        sol += &step_a_kernel * free;
        let xa_next = sol.rows(0, ma).into_owned();
        let target = &concrete.e * h * &xa_next - &concrete.a * h * &xa;
        let u = &b_pinv * &target;
        let miss = (&concrete.b * u - &target).norm();
        if miss > tol * scale * (1.0 + xa.norm() + xa_next.norm()) {
            return Ok(RelationVerdict::Counterexample {
                trial,
                abstract_state: xa,
                reason: "no matching concrete transition".into(),
                residual: miss,
            });
        }
    }
    Ok(RelationVerdict::Holds { trials })
}
