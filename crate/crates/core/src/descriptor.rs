//! Descriptor (DAE) systems `E x(t+1) = A x(t) + B u(t)`, `y = C x`.
//!
//! Pencil analysis (regularity, Weierstrass decomposition, index),
//! reachability and the anti-causal time response live here.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{
    ensure_finite, kernel_basis, left_singular, norm2, rank_of, singular_values, Mat, RankTolerance, Vector,
};

/// Set of admissible initial states.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum InitialStates {
    /// Every state in ℝⁿ.
    #[default]
    Free,
    /// Only the listed points.
    Points(Vec<Vector>),
}

impl InitialStates {
    pub(crate) fn check_dim(&self, n: usize) -> Result<()> {
        if let InitialStates::Points(pts) = self {
            for p in pts {
                if p.len() != n {
                    return Err(Error::DimensionMismatch(format!(
                        "initial state has length {}, expected {n}",
                        p.len()
                    )));
                }
                if !p.iter().all(|v| v.is_finite()) {
                    return Err(Error::InvalidMatrix("initial state".into()));
                }
            }
        }
        Ok(())
    }

    pub fn contains(&self, x: &Vector, tol: f64) -> bool {
        match self {
            InitialStates::Free => true,
            InitialStates::Points(pts) => pts.iter().any(|p| (p - x).norm() <= tol),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DaeSystem {
    pub e: Mat,
    pub a: Mat,
    pub b: Mat,
    pub c: Mat,
    pub initial_states: InitialStates,
}

impl DaeSystem {
    /// Checks shapes and finiteness. Rank assumptions on `B` and `C` are
    /// checked separately by [`DaeSystem::validate_ranks`].
    pub fn new(e: Mat, a: Mat, b: Mat, c: Mat) -> Result<Self> {
        let n = e.nrows();
        if e.ncols() != n || a.shape() != (n, n) {
            return Err(Error::DimensionMismatch(format!(
                "E and A must be n×n, got {:?} and {:?}",
                e.shape(),
                a.shape()
            )));
        }
        if b.nrows() != n {
            return Err(Error::DimensionMismatch(format!("B must have {n} rows")));
        }
        if c.ncols() != n {
            return Err(Error::DimensionMismatch(format!("C must have {n} columns")));
        }
        for (m, name) in [(&e, "E"), (&a, "A"), (&b, "B"), (&c, "C")] {
            ensure_finite(m, name)?;
        }
        Ok(Self {
            e,
            a,
            b,
            c,
            initial_states: InitialStates::Free,
        })
    }

    pub fn with_initial_states(mut self, states: InitialStates) -> Result<Self> {
        states.check_dim(self.n())?;
        self.initial_states = states;
        Ok(self)
    }

    /// State dimension.
    pub fn n(&self) -> usize {
        self.e.nrows()
    }

    /// Input dimension.
    pub fn p(&self) -> usize {
        self.b.ncols()
    }

    /// Output dimension.
    pub fn k(&self) -> usize {
        self.c.nrows()
    }

    /// Standing assumption `rank B = p`, `rank C = k`.
    pub fn validate_ranks(&self, tol: RankTolerance) -> Result<()> {
        let rb = rank_of(&self.b, tol);
        if rb != self.p() {
            return Err(Error::RankDeficiency(format!("rank(B) = {rb} < {}", self.p())));
        }
        let rc = rank_of(&self.c, tol);
        if rc != self.k() {
            return Err(Error::RankDeficiency(format!("rank(C) = {rc} < {}", self.k())));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Regularity {
    /// Coefficients of `det(λE − A)` in ascending powers of λ.
    Regular {
        coefficients: Vec<f64>,
    },
    Singular,
}

impl Regularity {
    pub fn is_regular(&self) -> bool {
        matches!(self, Regularity::Regular { .. })
    }
}

fn det(m: &Mat) -> f64 {
    if m.nrows() == 0 {
        1.0
    } else {
        m.clone().lu().determinant()
    }
}

/// Decide regularity of the pencil `(E, A)` by interpolating
/// `det(λE − A)` at `n + 1` Chebyshev nodes on `[−n, n]`.
pub fn is_regular(e: &Mat, a: &Mat) -> Result<Regularity> {
    let n = e.nrows();
    if e.ncols() != n || a.shape() != (n, n) {
        return Err(Error::InvalidPencil(format!(
            "E {:?} and A {:?} must be square and equal in size",
            e.shape(),
            a.shape()
        )));
    }
    ensure_finite(e, "E")?;
    ensure_finite(a, "A")?;
    if n == 0 {
        return Ok(Regularity::Regular {
            coefficients: vec![1.0],
        });
    }
    let half = n as f64;
    let nodes: Vec<f64> = (0..=n)
        .map(|i| half * ((2 * i + 1) as f64 * std::f64::consts::PI / (2 * (n + 1)) as f64).cos())
        .collect();
    let evals: Vec<f64> = nodes.iter().map(|&x| det(&(e * x - a))).collect();

    // A singular pencil evaluates to rounding noise everywhere.
    let scale = half * norm2(e) + norm2(a);
    let max_eval = evals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if max_eval <= 1e-12 * scale.max(f64::MIN_POSITIVE).powi(n as i32) {
        return Ok(Regularity::Singular);
    }

    let vander = Mat::from_fn(n + 1, n + 1, |i, j| nodes[i].powi(j as i32));
    let coeffs = vander
        .lu()
        .solve(&Vector::from_vec(evals))
        .ok_or_else(|| Error::InvalidPencil("interpolation system is singular".into()))?;
    let coefficients: Vec<f64> = coeffs.iter().copied().collect();
    if coefficients.iter().any(|c| c.abs() > 1e-10 * max_eval) {
        Ok(Regularity::Regular { coefficients })
    } else {
        Ok(Regularity::Singular)
    }
}

/// Weierstrass canonical form: `P E Q = diag(I, N)`, `P A Q = diag(J, I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeierstrassForm {
    pub p: Mat,
    pub q: Mat,
    pub j: Mat,
    pub n: Mat,
    pub b1: Mat,
    pub b2: Mat,
    pub c1: Mat,
    pub c2: Mat,
    pub n1: usize,
    pub n2: usize,
    /// Nilpotency index of `N`; zero when there is no anti-causal part.
    pub mu: usize,
}

impl WeierstrassForm {
    pub fn dim(&self) -> usize {
        self.n1 + self.n2
    }

    /// Map canonical coordinates back to the original state.
    pub fn to_original(&self, x1: &Vector, x2: &Vector) -> Vector {
        let mut z = Vector::zeros(self.dim());
        z.rows_mut(0, self.n1).copy_from(x1);
        z.rows_mut(self.n1, self.n2).copy_from(x2);
        &self.q * z
    }

    /// Residuals `‖PEQ − diag(I, N)‖` and `‖PAQ − diag(J, I)‖` against `(E, A)`.
    pub fn block_residuals(&self, e: &Mat, a: &Mat) -> (f64, f64) {
        let ie = crate::linalg::blkdiag(&Mat::identity(self.n1, self.n1), &self.n);
        let ia = crate::linalg::blkdiag(&self.j, &Mat::identity(self.n2, self.n2));
        (
            (&self.p * e * &self.q - ie).norm(),
            (&self.p * a * &self.q - ia).norm(),
        )
    }
}

const SHIFT_SEED: u64 = 0x5eed_0f_5e1f;

/// Shift with the best-conditioned `λ0·E − A` over a fixed candidate grid.
fn choose_shift(e: &Mat, a: &Mat) -> Option<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(SHIFT_SEED);
    let mut candidates = vec![0.0, 1.0, -1.0, 2.0, -2.0, 0.5, -0.5];
    candidates.extend((0..4).map(|_| rng.gen_range(-3.0..3.0)));
    let mut best: Option<(f64, f64)> = None;
    for lam in candidates {
        let s = singular_values(&(e * lam - a));
        let smax = s.first().copied().unwrap_or(0.0);
        let smin = s.last().copied().unwrap_or(0.0);
        if smax == 0.0 {
            continue;
        }
        let rcond = smin / smax;
        if best.map_or(true, |(_, b)| rcond > b) {
            best = Some((lam, rcond));
        }
    }
    best
}

fn nilpotency_index(n: &Mat) -> usize {
    let dim = n.nrows();
    if dim == 0 {
        return 0;
    }
    let base = norm2(n).max(1.0);
    let mut power = Mat::identity(dim, dim);
    for k in 1..=dim {
        power = &power * n;
        if norm2(&power) <= 1e-10 * base.powi(k as i32) {
            return k;
        }
    }
    dim
}

/// Weierstrass decomposition using the default rank tolerance.
pub fn weierstrass(sys: &DaeSystem) -> Result<WeierstrassForm> {
    weierstrass_with_tol(sys, RankTolerance::default())
}

/// Weierstrass decomposition by shift-and-invert.
///
/// With `Â = (A − λ0E)⁻¹E`, the finite eigenvalues of the pencil map to the
/// nonzero eigenvalues of `Â` and the infinite ones to zero. Once the ranks
/// of `Âᵏ` stop dropping, its range and kernel split the state space into the
/// causal and anti-causal parts.
pub fn weierstrass_with_tol(sys: &DaeSystem, tol: RankTolerance) -> Result<WeierstrassForm> {
    let (e, a) = (&sys.e, &sys.a);
    let n = sys.n();
    if !is_regular(e, a)?.is_regular() {
        return Err(Error::SingularPencil);
    }
    let (lam0, rcond) = choose_shift(e, a).ok_or(Error::IllConditionedPencil)?;
    if rcond < 1e-12 {
        return Err(Error::IllConditionedPencil);
    }
    let shifted = a - e * lam0;
    let a_hat = shifted.lu().solve(e).ok_or(Error::IllConditionedPencil)?;

    let mut power = a_hat.clone();
    let mut rank = rank_of(&power, tol);
    for _ in 1..n.max(1) {
        let next = &power * &a_hat;
        let next_rank = rank_of(&next, tol);
        if next_rank == rank {
            break;
        }
        power = next;
        rank = next_rank;
    }
    let n1 = rank;
    let n2 = n - n1;
    let (_, u) = left_singular(&power);
    let v1 = u.columns(0, n1).into_owned();
    let v2 = kernel_basis(&power, tol)?;
    if v2.ncols() != n2 {
        return Err(Error::IllConditionedPencil);
    }
    let q = crate::linalg::hcat(&[&v1, &v2]);
    let p = crate::linalg::hcat(&[&(e * &v1), &(a * &v2)])
        .try_inverse()
        .ok_or(Error::IllConditionedPencil)?;

    let pe = &p * e * &q;
    let pa = &p * a * &q;
    let j = pa.view((0, 0), (n1, n1)).into_owned();
    let mut nil = pe.view((n1, n1), (n2, n2)).into_owned();
    let cut = 1e-12 * norm2(&nil).max(1.0);
    nil.iter_mut().filter(|v| v.abs() <= cut).for_each(|v| *v = 0.0);
    let mu = nilpotency_index(&nil);

    let pb = &p * &sys.b;
    let cq = &sys.c * &q;
    let form = WeierstrassForm {
        b1: pb.rows(0, n1).into_owned(),
        b2: pb.rows(n1, n2).into_owned(),
        c1: cq.columns(0, n1).into_owned(),
        c2: cq.columns(n1, n2).into_owned(),
        p,
        q,
        j,
        n: nil,
        n1,
        n2,
        mu,
    };
    let (re, ra) = form.block_residuals(e, a);
    let scale = (norm2(e) + norm2(a)) * norm2(&form.p) * norm2(&form.q);
    if re.max(ra) > 1e-6 * scale.max(1.0) {
        return Err(Error::IllConditionedPencil);
    }
    Ok(form)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Reachability {
    pub reachable: bool,
    pub rank_causal: usize,
    pub rank_anticausal: usize,
}

fn krylov(a: &Mat, b: &Mat, blocks: usize) -> Mat {
    let mut cols = Vec::with_capacity(blocks);
    let mut cur = b.clone();
    for _ in 0..blocks {
        let next = a * &cur;
        cols.push(cur);
        cur = next;
    }
    let refs: Vec<&Mat> = cols.iter().collect();
    if refs.is_empty() {
        Mat::zeros(a.nrows(), 0)
    } else {
        crate::linalg::hcat(&refs)
    }
}

/// Reachability test on the causal pair `(J, B1)` and the anti-causal pair `(N, B2)`.
pub fn check_reachability(w: &WeierstrassForm, tol: RankTolerance) -> Reachability {
    let rc = krylov(&w.j, &w.b1, w.n1);
    let rmu = krylov(&w.n, &w.b2, w.mu);
    let rank_causal = if w.n1 == 0 { 0 } else { rank_of(&rc, tol) };
    let rank_anticausal = if w.n2 == 0 { 0 } else { rank_of(&rmu, tol) };
    Reachability {
        reachable: rank_causal == w.n1 && rank_anticausal == w.n2,
        rank_causal,
        rank_anticausal,
    }
}

/// Input sequence `u(0), u(1), …`.
#[derive(Debug, Clone, PartialEq)]
pub struct InputSignal {
    samples: Vec<Vector>,
}

impl InputSignal {
    pub fn new(samples: Vec<Vector>, p: usize) -> Result<Self> {
        for s in &samples {
            if s.len() != p {
                return Err(Error::DimensionMismatch(format!(
                    "input sample has length {}, expected {p}",
                    s.len()
                )));
            }
            if !s.iter().all(|v| v.is_finite()) {
                return Err(Error::InvalidMatrix("input sample".into()));
            }
        }
        Ok(Self { samples })
    }

    pub fn constant(value: Vector, horizon: usize) -> Self {
        Self {
            samples: vec![value; horizon],
        }
    }

    pub fn horizon(&self) -> usize {
        self.samples.len()
    }

    pub fn samples(&self) -> &[Vector] {
        &self.samples
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Response {
    pub states: Vec<Vector>,
    pub outputs: Vec<Vector>,
}

/// Number of input samples needed for a response of length `horizon`.
pub fn required_input_len(w: &WeierstrassForm, horizon: usize) -> usize {
    if horizon == 0 {
        0
    } else {
        (horizon + w.mu).saturating_sub(1)
    }
}

/// State and output response over `t = 0..horizon`.
///
/// The causal part is the usual convolution sum; the anti-causal part
/// `x2(t) = −Σ_{τ<μ} N^τ B2 u(t+τ)` looks `μ − 1` samples ahead.
pub fn response(w: &WeierstrassForm, x10: &Vector, u: &InputSignal, horizon: usize) -> Result<Response> {
    if x10.len() != w.n1 {
        return Err(Error::DimensionMismatch(format!(
            "x1(0) has length {}, expected {}",
            x10.len(),
            w.n1
        )));
    }
    let need = required_input_len(w, horizon);
    if u.horizon() < need {
        return Err(Error::InsufficientInputHorizon {
            have: u.horizon(),
            need,
        });
    }
    let p = w.b1.ncols();
    if let Some(s) = u.samples().first() {
        if s.len() != p {
            return Err(Error::DimensionMismatch("input width".into()));
        }
    }
    let n_powers: Vec<Mat> = {
        let mut out = Vec::with_capacity(w.mu);
        let mut cur = Mat::identity(w.n2, w.n2);
        for _ in 0..w.mu {
            out.push(cur.clone());
            cur = &cur * &w.n;
        }
        out
    };
    let mut states = Vec::with_capacity(horizon);
    let mut outputs = Vec::with_capacity(horizon);
    let mut x1 = x10.clone();
    for t in 0..horizon {
        let mut x2 = Vector::zeros(w.n2);
        for (tau, np) in n_powers.iter().enumerate() {
            x2 -= np * &w.b2 * &u.samples()[t + tau];
        }
        outputs.push(&w.c1 * &x1 + &w.c2 * &x2);
        states.push(w.to_original(&x1, &x2));
        if t + 1 < horizon {
            x1 = &w.j * &x1 + &w.b1 * &u.samples()[t];
        }
    }
    Ok(Response { states, outputs })
}
