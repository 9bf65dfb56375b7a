//! Conversion between descriptor systems and driving-variable (DV) systems.
//!
//! A DV system `x⁺ = A_d x + B_d s`, `u = C_u x + D_u s`, `y = C x` sweeps
//! the whole input/output behavior of a reachable DAE through the free
//! driving input `s`.

use crate::descriptor::{DaeSystem, InitialStates};
use crate::error::{Error, Result};
use crate::linalg::{
    ensure_finite, hcat, kernel_basis, left_singular, pinv, rank_of, sign_normalize_columns, vcat, Mat,
    RankTolerance, Vector,
};

#[derive(Debug, Clone, PartialEq)]
pub struct DvSystem {
    pub a_d: Mat,
    pub b_d: Mat,
    pub c_u: Mat,
    pub d_u: Mat,
    pub c: Mat,
    pub initial_states: InitialStates,
}

impl DvSystem {
    pub fn new(a_d: Mat, b_d: Mat, c_u: Mat, d_u: Mat, c: Mat) -> Result<Self> {
        let n = a_d.nrows();
        let p = b_d.ncols();
        if a_d.ncols() != n || b_d.nrows() != n {
            return Err(Error::DimensionMismatch("A_d must be n×n and B_d n×p".into()));
        }
        if c_u.shape() != (p, n) || d_u.shape() != (p, p) {
            return Err(Error::DimensionMismatch(format!(
                "C_u must be {p}×{n} and D_u {p}×{p}, got {:?} and {:?}",
                c_u.shape(),
                d_u.shape()
            )));
        }
        if c.ncols() != n {
            return Err(Error::DimensionMismatch(format!("C must have {n} columns")));
        }
        for (m, name) in [
            (&a_d, "A_d"),
            (&b_d, "B_d"),
            (&c_u, "C_u"),
            (&d_u, "D_u"),
            (&c, "C"),
        ] {
            ensure_finite(m, name)?;
        }
        Ok(Self {
            a_d,
            b_d,
            c_u,
            d_u,
            c,
            initial_states: InitialStates::Free,
        })
    }

    pub fn with_initial_states(mut self, states: InitialStates) -> Result<Self> {
        states.check_dim(self.n())?;
        self.initial_states = states;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.a_d.nrows()
    }

    pub fn p(&self) -> usize {
        self.b_d.ncols()
    }

    pub fn k(&self) -> usize {
        self.c.nrows()
    }

    /// Stacked output map `[C_u; C]`.
    pub fn c_d(&self) -> Mat {
        vcat(&[&self.c_u, &self.c])
    }

    /// Stacked feedthrough `[D_u; 0]`.
    pub fn d_d(&self) -> Mat {
        vcat(&[&self.d_u, &Mat::zeros(self.k(), self.p())])
    }

    pub fn step(&self, x: &Vector, s: &Vector) -> Vector {
        &self.a_d * x + &self.b_d * s
    }

    pub fn input(&self, x: &Vector, s: &Vector) -> Vector {
        &self.c_u * x + &self.d_u * s
    }
}

/// Linear map recovering the driving input from `(x(t+1), u(t), x(t))`.
#[derive(Debug, Clone, PartialEq)]
pub struct DrivingRecovery {
    pub w1: Mat,
    pub w2: Mat,
    pub w3: Mat,
}

impl DrivingRecovery {
    /// Full `p × (n + p + n)` matrix `[W1 W2 W3]`.
    pub fn w(&self) -> Mat {
        hcat(&[&self.w1, &self.w2, &self.w3])
    }

    pub fn from_w(w: &Mat, n: usize, p: usize) -> Result<Self> {
        if w.shape() != (p, 2 * n + p) {
            return Err(Error::DimensionMismatch(format!(
                "W must be {p}×{}, got {:?}",
                2 * n + p,
                w.shape()
            )));
        }
        ensure_finite(w, "W")?;
        Ok(Self {
            w1: w.columns(0, n).into_owned(),
            w2: w.columns(n, p).into_owned(),
            w3: w.columns(n + p, n).into_owned(),
        })
    }

    pub fn recover(&self, x_next: &Vector, u: &Vector, x: &Vector) -> Vector {
        &self.w1 * x_next + &self.w2 * u + &self.w3 * x
    }
}

/// `s(t) = W1 x(t+1) + W2 u(t) + W3 x(t)`.
pub fn recover_driving_input(rec: &DrivingRecovery, x_next: &Vector, u: &Vector, x: &Vector) -> Vector {
    rec.recover(x_next, u, x)
}

/// DAE → DV via the pseudoinverse and kernel of `M = [E −B]`.
pub fn dae_to_dv(sys: &DaeSystem, tol: RankTolerance) -> Result<DvSystem> {
    sys.validate_ranks(tol)?;
    let n = sys.n();
    let p = sys.p();
    let m = hcat(&[&sys.e, &(-&sys.b)]);
    let rank = rank_of(&m, tol);
    if rank < n {
        return Err(Error::NotConvertible { rank, rows: n });
    }
    let m_pinv = pinv(&m, tol)?;
    let a_d = m_pinv.rows(0, n) * &sys.a;
    let c_u = m_pinv.rows(n, p) * &sys.a;
    let kernel = kernel_basis(&m, tol)?;
    debug_assert_eq!(kernel.ncols(), p);
    let b_d = kernel.rows(0, n).into_owned();
    let d_u = kernel.rows(n, p).into_owned();
    DvSystem::new(a_d, b_d, c_u, d_u, sys.c.clone())?.with_initial_states(sys.initial_states.clone())
}

/// Residuals `‖E A_d − B C_u − A‖` and `‖E B_d − B D_u‖`.
pub fn conversion_residuals(sys: &DaeSystem, dv: &DvSystem) -> (f64, f64) {
    (
        (&sys.e * &dv.a_d - &sys.b * &dv.c_u - &sys.a).norm(),
        (&sys.e * &dv.b_d - &sys.b * &dv.d_u).norm(),
    )
}

/// Flip rows so that each row's largest-magnitude entry is positive.
fn sign_normalize_rows(m: &mut Mat) {
    let mut t = m.transpose();
    sign_normalize_columns(&mut t);
    *m = t.transpose();
}

/// DV → DAE via the SVD of `𝒫 = [B_d; D_u]`, plus the driving-input recovery map.
///
/// The orthogonal complement `U_n` of `range 𝒫` is only defined up to a
/// rotation. It is fixed here by a reversed QR so that `U_nᵀ` is
/// anti-triangular with the zero pattern in its leading columns, then
/// rows are sign-normalized.
pub fn dv_to_dae(dv: &DvSystem, tol: RankTolerance) -> Result<(DaeSystem, DrivingRecovery)> {
    let n = dv.n();
    let p = dv.p();
    let drive = vcat(&[&dv.b_d, &dv.d_u]);
    let rank = rank_of(&drive, tol);
    if rank < p {
        return Err(Error::DegenerateDrivingMatrix { rank, cols: p });
    }
    let (sigma, u) = left_singular(&drive);
    let mut u_p = u.columns(0, p).into_owned();
    sign_normalize_columns(&mut u_p);
    // V follows from U_p so that 𝒫 = U_p Σ̄ Vᵀ holds with the chosen signs.
    let mut v = Mat::zeros(p, p);
    for i in 0..p {
        v.set_column(i, &(drive.transpose() * u_p.column(i) / sigma[i]));
    }

    let u_n_t = u.columns(p, n).transpose();
    let mut z = if n == 0 {
        Mat::zeros(0, n + p)
    } else {
        let total = n + p;
        let reversed = Mat::from_fn(n, total, |i, j| u_n_t[(i, total - 1 - j)]);
        let r = reversed.qr().r();
        Mat::from_fn(n, total, |i, j| r[(n - 1 - i, total - 1 - j)])
    };
    sign_normalize_rows(&mut z);

    let stacked = vcat(&[&dv.a_d, &dv.c_u]);
    let e = z.columns(0, n).into_owned();
    let a = &z * &stacked;
    let b = -z.columns(n, p).into_owned();
    let sys = DaeSystem::new(e, a, b, dv.c.clone())?.with_initial_states(dv.initial_states.clone())?;

    let inv_sigma = Mat::from_diagonal(&Vector::from_iterator(p, sigma.iter().take(p).map(|s| 1.0 / s)));
    let left = &v * inv_sigma;
    let w = hcat(&[
        &(&left * u_p.transpose()),
        &(-(&left * u_p.transpose() * &stacked)),
    ]);
    let rec = DrivingRecovery::from_w(&w, n, p)?;
    Ok((sys, rec))
}
