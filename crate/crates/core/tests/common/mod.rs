#![allow(dead_code)]

use dae_refine::certificates::RefinementCertificate;
use dae_refine::conversion::dae_to_dv;
use dae_refine::conversion::DvSystem;
use dae_refine::descriptor::DaeSystem;
use dae_refine::descriptor::{required_input_len, response, weierstrass, InputSignal};
use dae_refine::linalg::{blkdiag, norm2, pinv, spectral_radius};
use dae_refine::refinement::DaeController;
use dae_refine::{Mat, RankTolerance, Vector};
use nalgebra::QR;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn tol() -> RankTolerance {
    RankTolerance::default()
}

pub fn index2_plant() -> DaeSystem {
    DaeSystem::new(
        Mat::from_row_slice(3, 3, &[1., 0., 0., 0., 0., 1., 0., 0., 0.]),
        Mat::from_diagonal(&Vector::from_vec(vec![-1., 1., 1.])),
        Mat::from_column_slice(3, 1, &[1., 1., 1.]),
        Mat::from_row_slice(1, 3, &[0.1, 0.2, 0.5]),
    )
    .unwrap()
}

/// Reference DV form of the index-2 plant, `B_d = (0, −1, 0)ᵀ`.
pub fn index2_plant_reference_dv() -> DvSystem {
    DvSystem::new(
        Mat::from_row_slice(3, 3, &[-1., 0., -1., 0., 0., 0., 0., 1., -1.]),
        Mat::from_column_slice(3, 1, &[0., -1., 0.]),
        Mat::from_row_slice(1, 3, &[0., 0., -1.]),
        Mat::zeros(1, 1),
        Mat::from_row_slice(1, 3, &[0.1, 0.2, 0.5]),
    )
    .unwrap()
}

/// Controller closing the abstract loop of the index-2 plant on the reference `𝒜`.
pub fn index2_plant_ctrl() -> DaeController {
    DaeController::new(
        Mat::from_row_slice(1, 3, &[0., -1., 0.]),
        Mat::from_row_slice(1, 3, &[1.5, -2.4, 5.]),
        Mat::from_element(1, 1, 1.),
    )
    .unwrap()
}

pub fn index2_plant_closed() -> Mat {
    Mat::from_row_slice(3, 3, &[-1., 0., -1., -1.5, 2.4, -4., 0., 1., -1.])
}

pub fn reduction_case_reference_k() -> Mat {
    Mat::from_row_slice(1, 3, &[0.1262, -0.8327, 0.9843])
}

pub fn reduction_case_reference_abstract_dv() -> DvSystem {
    DvSystem::new(
        Mat::from_row_slice(2, 2, &[-0.051, 0.123, -0.123, -0.287]),
        Mat::from_column_slice(2, 1, &[-1.683, -1.675]),
        Mat::from_row_slice(1, 2, &[-1.429, 1.499]),
        Mat::zeros(1, 1),
        Mat::from_row_slice(1, 2, &[0.889, -0.747]),
    )
    .unwrap()
}

pub fn reduction_case_reference_pq() -> (Mat, Mat) {
    (
        Mat::from_row_slice(3, 2, &[-1.1597, 2.4387, 1.5254, -0.9658, 1.4005, -1.5960]),
        Mat::from_row_slice(1, 2, &[-0.0410, -0.4645]),
    )
}

pub fn uniform(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Mat {
    Mat::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
}

pub fn uniform_vec(rng: &mut ChaCha8Rng, n: usize) -> Vector {
    Vector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0))
}

/// Orthogonal factor times a diagonal in `[0.5, 2]`: condition number ≤ 4.
pub fn well_conditioned(rng: &mut ChaCha8Rng, n: usize) -> Mat {
    let q = QR::new(uniform(rng, n, n)).q();
    let d = Vector::from_fn(n, |_, _| rng.gen_range(0.5..2.0));
    q * Mat::from_diagonal(&d)
}

/// Random matrix rescaled to spectral radius `rho`.
pub fn with_radius(rng: &mut ChaCha8Rng, n: usize, rho: f64) -> Mat {
    let m = uniform(rng, n, n);
    let r = spectral_radius(&m);
    if r < 1e-6 {
        m
    } else {
        m * (rho / r)
    }
}

/// Nilpotent Jordan matrix with the given block sizes.
pub fn nilpotent(blocks: &[usize]) -> Mat {
    let n: usize = blocks.iter().sum();
    let mut m = Mat::zeros(n, n);
    let mut off = 0;
    for &b in blocks {
        for i in 0..b.saturating_sub(1) {
            m[(off + i, off + i + 1)] = 1.0;
        }
        off += b;
    }
    m
}

/// A DAE with known Weierstrass structure.
pub struct KnownDae {
    pub sys: DaeSystem,
    pub n1: usize,
    pub n2: usize,
    pub mu: usize,
}

/// Random regular DAE `E = L diag(I, N) R`, `A = L diag(J, I) R`. With at
/// most `p` nilpotent blocks and generic inputs it is also reachable.
pub fn random_reachable_dae(rng: &mut ChaCha8Rng, n: usize, p: usize) -> KnownDae {
    let n1 = rng.gen_range(1..n);
    let n2 = n - n1;
    let nblocks = rng.gen_range(1..=p.min(n2));
    let mut sizes = vec![1usize; nblocks];
    for _ in nblocks..n2 {
        let i = rng.gen_range(0..nblocks);
        sizes[i] += 1;
    }
    let mu = *sizes.iter().max().unwrap();
    let rho = rng.gen_range(0.3..0.95);
    let j = with_radius(rng, n1, rho);
    let nil = nilpotent(&sizes);
    let l = well_conditioned(rng, n);
    let r = well_conditioned(rng, n);
    let e = &l * blkdiag(&Mat::identity(n1, n1), &nil) * &r;
    let a = &l * blkdiag(&j, &Mat::identity(n2, n2)) * &r;
    let b = &l * uniform(rng, n, p);
    let c = uniform(rng, 1, n);
    KnownDae {
        sys: DaeSystem::new(e, a, b, c).unwrap(),
        n1,
        n2,
        mu,
    }
}

/// `(A, B, C)` with a stabilizable pair; `A` may be unstable.
pub fn random_stabilizable(rng: &mut ChaCha8Rng, n: usize, p: usize, k: usize) -> (Mat, Mat, Mat) {
    let rho = rng.gen_range(0.5..1.6);
    (with_radius(rng, n, rho), uniform(rng, n, p), uniform(rng, k, n))
}

/// Feasible Sylvester instance `A P + B Q = P F`, `C P = H` with `k ≤ p`.
pub struct SylvesterInstance {
    pub a: Mat,
    pub b: Mat,
    pub c: Mat,
    pub f: Mat,
    pub h: Mat,
}

pub fn random_sylvester(rng: &mut ChaCha8Rng, n: usize, m: usize, p: usize, k: usize) -> SylvesterInstance {
    let p_true = uniform(rng, n, m);
    let q_true = uniform(rng, p, m);
    let f = with_radius(rng, m, 0.6);
    let b = uniform(rng, n, p);
    let pp = pinv(&p_true, tol()).unwrap();
    let a_perp = with_radius(rng, n, 1.3);
    let a = (&p_true * &f - &b * &q_true) * &pp + a_perp * (Mat::identity(n, n) - &p_true * &pp);
    let c = uniform(rng, k, n);
    let h = &c * &p_true;
    SylvesterInstance { a, b, c, f, h }
}

/// Ackermann gain `T` placing the eigenvalues of `F + G T` at the roots of
/// `z² − a1 z + a0` (two states, one input).
pub fn ackermann2(f: &Mat, g: &Mat, a1: f64, a0: f64) -> Mat {
    let ctrb = nalgebra::DMatrix::from_columns(&[g.column(0).into_owned(), (f * g).column(0).into_owned()]);
    let phi = f * f - f * a1 + Mat::identity(2, 2) * a0;
    let inv = ctrb.try_inverse().expect("controllable pair");
    -(Mat::from_row_slice(1, 2, &[0., 1.]) * inv * phi)
}

/// DAE controller `Gᵀ x⁺ = Gᵀ (F + G T) x` enforcing `s = T x` on a DV
/// abstraction whose DAE shares its state.
pub fn lift_enforcing_controller(dv: &DvSystem, t: &Mat) -> DaeController {
    let gt = dv.b_d.transpose();
    let a_c = &gt * (&dv.a_d + &dv.b_d * t);
    DaeController::new(gt, a_c, Mat::zeros(dv.p(), dv.p())).unwrap()
}

/// Largest output gaps `(DAE → DV, DV → DAE)` over `horizon` steps, each
/// relative to `1 + max ‖y‖` of the reference trajectory.
pub fn bisimulation_gaps(sys: &DaeSystem, rng: &mut ChaCha8Rng, horizon: usize) -> (f64, f64) {
    let dv = dae_to_dv(sys, tol()).unwrap();
    let w = weierstrass(sys).unwrap();
    let p = sys.p();

    // Each DAE transition (x, u, x⁺) is matched by a DV transition from the
    // same state with s = B_d⁺(x⁺ − A_d x).
    let x10 = uniform_vec(rng, w.n1);
    let len = required_input_len(&w, horizon + 1);
    let u = InputSignal::new((0..len).map(|_| uniform_vec(rng, p)).collect(), p).unwrap();
    let resp = response(&w, &x10, &u, horizon + 1).unwrap();
    let bp = pinv(&dv.b_d, tol()).unwrap();
    let mut gap1 = 0.0f64;
    let mut ymax = 0.0f64;
    for t in 0..horizon {
        let (x, x_next) = (&resp.states[t], &resp.states[t + 1]);
        let s = &bp * (x_next - &dv.a_d * x);
        let matched = dv.step(x, &s);
        ymax = ymax.max(resp.outputs[t + 1].norm());
        gap1 = gap1.max((&dv.c * &matched - &resp.outputs[t + 1]).norm());
        gap1 = gap1.max((dv.input(x, &s) - &u.samples()[t]).norm());
    }
    let gap1 = gap1 / (1.0 + ymax);

    // A DV trajectory, replayed on the DAE through u = C_u x + D_u s. The DAE
    // response restarts from each DV state, so open-loop growth of A_d does
    // not amplify rounding across the horizon.
    let qinv = w.q.clone().try_inverse().unwrap();
    let window = required_input_len(&w, 2);
    let mut x = uniform_vec(rng, sys.n());
    let mut xs = Vec::with_capacity(horizon + window);
    let mut us = Vec::with_capacity(horizon + window);
    for _ in 0..horizon + window {
        let s = uniform_vec(rng, p);
        xs.push(x.clone());
        us.push(dv.input(&x, &s));
        x = dv.step(&x, &s);
    }
    // Each step is measured against the size of the data it reads: C x can
    // cancel to far below ‖x‖ once A_d has expanded the state, and the
    // response also reads the inputs of the whole window.
    let cn = norm2(&dv.c);
    let dn = norm2(&w.c2) * (0..w.mu.max(1)).fold(1.0, |acc, _| acc * (1.0 + norm2(&w.n))) * norm2(&w.b2);
    let mut gap2 = 0.0f64;
    for t in 0..horizon {
        let x10 = (&qinv * &xs[t]).rows(0, w.n1).into_owned();
        let u = InputSignal::new(us[t..t + window].to_vec(), p).unwrap();
        let resp = response(&w, &x10, &u, 2).unwrap();
        let miss =
            (&resp.outputs[0] - &dv.c * &xs[t]).norm() + (&resp.outputs[1] - &dv.c * &xs[t + 1]).norm();
        let umax = us[t..t + window].iter().map(|v| v.norm()).fold(0.0, f64::max);
        gap2 = gap2.max(miss / (1.0 + cn * (xs[t].norm() + xs[t + 1].norm()) + dn * umax));
    }
    (gap1, gap2)
}

/// Sampled Lyapunov decrease `V⁺ ≤ λV + c‖v‖` and level-set invariance
/// `S ≤ ε ⇒ S⁺ ≤ ε`. Returns the number of violations beyond `slack`.
pub fn lyapunov_violations(
    cert: &RefinementCertificate,
    concrete: &DvSystem,
    abstract_dv: &DvSystem,
    samples: usize,
    rng: &mut ChaCha8Rng,
    slack: f64,
) -> usize {
    let coeff = cert.input_gain(&concrete.b_d, &abstract_dv.b_d);
    let lambda = cert.lambda();
    let mut bad = 0;
    for _ in 0..samples {
        let z = uniform_vec(rng, abstract_dv.n());
        let x = &cert.p * &z + uniform_vec(rng, concrete.n()) * rng.gen_range(0.0..1.0);
        let v = uniform_vec(rng, abstract_dv.p()) * rng.gen_range(0.0..1.0);
        let s = cert.interface_apply(&v, &z, &x);
        let (z1, x1) = (abstract_dv.step(&z, &v), concrete.step(&x, &s));
        let v0 = cert.lyapunov_value(&z, &x);
        let v1 = cert.lyapunov_value(&z1, &x1);
        let scale = slack * (1.0 + v0 + v.norm());
        if v1 > lambda * v0 + coeff * v.norm() + scale {
            bad += 1;
        }
        // Level set with v_max = ‖v‖ and ε = S(z, x).
        let eps = v0.max(cert.gamma_coeff * v.norm());
        if v1.max(cert.gamma_coeff * v.norm()) > eps + scale {
            bad += 1;
        }
    }
    bad
}
