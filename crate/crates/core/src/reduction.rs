//! Abstraction by model reduction: stabilize the concrete DV system,
//! truncate it by balancing, and turn the result back into a DAE together
//! with a refinement certificate.

use nalgebra::SymmetricEigen;

use crate::certificates::{
    build_certificate, certs_on_grid, default_lambda_grid, solve_stability_cert, RefinementCertificate,
    StabilityCert, SylvesterMethod,
};
use crate::conversion::{dae_to_dv, dv_to_dae, DrivingRecovery, DvSystem};
use crate::descriptor::DaeSystem;
use crate::error::{Error, Result};
use crate::linalg::{solve_dlyap, spectral_radius, thin_svd, Mat, RankTolerance, Vector};

/// Loop-shifted system `s = K x + s'`: `(A_d + B_d K, B_d, C_u + D_u K, D_u, C)`.
pub fn apply_feedback(dv: &DvSystem, k: &Mat) -> Result<DvSystem> {
    DvSystem::new(
        &dv.a_d + &dv.b_d * k,
        dv.b_d.clone(),
        &dv.c_u + &dv.d_u * k,
        dv.d_u.clone(),
        dv.c.clone(),
    )
}

/// Stabilize with the gain of a stability certificate.
pub fn stabilize_dv(dv: &DvSystem, lambda_grid: &[f64]) -> Result<(DvSystem, StabilityCert)> {
    let cert = solve_stability_cert(&dv.a_d, &dv.b_d, &dv.c, lambda_grid)?;
    Ok((apply_feedback(dv, &cert.k)?, cert))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Truncation {
    pub reduced: DvSystem,
    /// All Hankel singular values, descending.
    pub hankel: Vec<f64>,
    /// Reduced-to-full state map (`n × m`).
    pub t: Mat,
    /// Full-to-reduced state map (`m × n`).
    pub t_inv: Mat,
}

fn gramian_factor(w: &Mat) -> Mat {
    let eig = SymmetricEigen::new(crate::linalg::symmetrize(w));
    let d = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * Mat::from_diagonal(&d)
}

/// Square-root balanced truncation of a stable DV system, keeping `order`
/// states. The reduced output map covers both channels `[C_u; C]`.
pub fn balanced_truncation(dv: &DvSystem, order: usize) -> Result<Truncation> {
    let n = dv.n();
    if order == 0 || order > n {
        return Err(Error::OrderTooLarge { order, max: n });
    }
    let rho = spectral_radius(&dv.a_d);
    if !(rho < 1.0) {
        return Err(Error::UnstableInput(rho));
    }
    let cd = dv.c_d();
    let wc = solve_dlyap(&dv.a_d, &(&dv.b_d * dv.b_d.transpose()))?;
    let wo = solve_dlyap(&dv.a_d.transpose(), &(cd.transpose() * &cd))?;
    let lc = gramian_factor(&wc);
    let lo = gramian_factor(&wo);
    let (u, hankel, v) = thin_svd(&(lo.transpose() * &lc));
    let smax = hankel.first().copied().unwrap_or(0.0);
    if hankel[order - 1] <= 1e-13 * smax.max(f64::MIN_POSITIVE) {
        return Err(Error::RankDeficiency(format!(
            "Hankel singular value {} of order {order} is zero; the minimal order is lower",
            hankel[order - 1]
        )));
    }
    let scale = Mat::from_diagonal(&Vector::from_iterator(
        order,
        hankel.iter().take(order).map(|s| s.powf(-0.5)),
    ));
    let mut t = &lc * v.columns(0, order) * &scale;
    let mut t_inv = &scale * u.columns(0, order).transpose() * lo.transpose();
    for i in 0..order {
        let col = t.column(i);
        let pivot = col
            .iter()
            .copied()
            .fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        if pivot < 0.0 {
            t.column_mut(i).neg_mut();
            t_inv.row_mut(i).neg_mut();
        }
    }
    let a_r = &t_inv * &dv.a_d * &t;
    let b_r = &t_inv * &dv.b_d;
    let c_r = &cd * &t;
    let p = dv.p();
    let reduced = DvSystem::new(
        a_r,
        b_r,
        c_r.rows(0, p).into_owned(),
        dv.d_u.clone(),
        c_r.rows(p, dv.k()).into_owned(),
    )?;
    Ok(Truncation {
        reduced,
        hankel,
        t,
        t_inv,
    })
}

/// Markov parameters `D_d, C_d B_d, C_d A_d B_d, …` of the stacked output.
pub fn markov_parameters(dv: &DvSystem, count: usize) -> Vec<Mat> {
    let cd = dv.c_d();
    let mut out = Vec::with_capacity(count);
    if count == 0 {
        return out;
    }
    out.push(dv.d_d());
    let mut ab = dv.b_d.clone();
    for _ in 1..count {
        out.push(&cd * &ab);
        ab = &dv.a_d * ab;
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOptions {
    pub lambda_grid: Vec<f64>,
    pub tol: RankTolerance,
    pub sylvester: SylvesterMethod,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self {
            lambda_grid: default_lambda_grid(),
            tol: RankTolerance::default(),
            sylvester: SylvesterMethod::Kron,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AbstractionPipelineResult {
    pub dv_concrete: DvSystem,
    pub dv_stabilized: DvSystem,
    pub dv_abstract: DvSystem,
    pub dae_abstract: DaeSystem,
    pub recovery_abstract: DrivingRecovery,
    pub cert: RefinementCertificate,
    pub hankel: Vec<f64>,
}

/// DAE → DV → stabilize → truncate → certify → DAE.
///
/// Every certifiable λ on the grid is tried; the stabilizing gain of that
/// certificate is also the interface gain. The run with the smallest gain
/// coefficient wins.
pub fn build_abstraction_pipeline(
    concrete: &DaeSystem,
    order: usize,
    opts: &PipelineOptions,
) -> Result<AbstractionPipelineResult> {
    let dv_concrete = dae_to_dv(concrete, opts.tol)?;
    let n = dv_concrete.n();
    if order == 0 || order > n {
        return Err(Error::OrderTooLarge { order, max: n });
    }
    let certs = certs_on_grid(
        &dv_concrete.a_d,
        &dv_concrete.b_d,
        &dv_concrete.c,
        &opts.lambda_grid,
    )?;
    let mut best: Option<(DvSystem, Truncation, RefinementCertificate)> = None;
    let mut last_err = Error::NoFeasibleLambda;
    for cert in certs {
        let attempt = (|| {
            let stabilized = apply_feedback(&dv_concrete, &cert.k)?;
            let trunc = balanced_truncation(&stabilized, order)?;
            let rc = build_certificate(&dv_concrete, &trunc.reduced, cert.clone(), opts.sylvester)?;
            Ok::<_, Error>((stabilized, trunc, rc))
        })();
        match attempt {
            Ok(run) => {
                if best
                    .as_ref()
                    .map_or(true, |b| run.2.gamma_coeff < b.2.gamma_coeff)
                {
                    best = Some(run);
                }
            }
            Err(e) => last_err = e,
        }
    }
    let (dv_stabilized, trunc, cert) = best.ok_or(last_err)?;
    let (dae_abstract, recovery_abstract) = dv_to_dae(&trunc.reduced, opts.tol)?;
    Ok(AbstractionPipelineResult {
        dv_concrete,
        dv_stabilized,
        dv_abstract: trunc.reduced,
        dae_abstract,
        recovery_abstract,
        cert,
        hankel: trunc.hankel,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::solve_dlyap;
    use approx::assert_relative_eq;

    fn stable_dv() -> DvSystem {
        DvSystem::new(
            Mat::from_row_slice(3, 3, &[0.5, 0.1, 0.0, -0.2, 0.3, 0.1, 0.0, 0.2, -0.4]),
            Mat::from_column_slice(3, 1, &[1.0, 0.5, -0.3]),
            Mat::from_row_slice(1, 3, &[0.2, -0.1, 0.4]),
            Mat::from_element(1, 1, 0.1),
            Mat::from_row_slice(1, 3, &[1.0, 0.0, 0.5]),
        )
        .unwrap()
    }

    #[test]
    fn already_stable_plant() {
        let dv = DvSystem::new(
            Mat::from_element(1, 1, 0.5),
            Mat::identity(1, 1),
            Mat::zeros(1, 1),
            Mat::zeros(1, 1),
            Mat::identity(1, 1),
        )
        .unwrap();
        let (s, _) = stabilize_dv(&dv, &default_lambda_grid()).unwrap();
        assert!(spectral_radius(&s.a_d) < 1.0);
    }

    #[test]
    fn scalar_unstable_plant() {
        let dv = DvSystem::new(
            Mat::from_element(1, 1, 2.0),
            Mat::identity(1, 1),
            Mat::zeros(1, 1),
            Mat::zeros(1, 1),
            Mat::identity(1, 1),
        )
        .unwrap();
        let (s, cert) = stabilize_dv(&dv, &default_lambda_grid()).unwrap();
        assert!(s.a_d[(0, 0)].abs() < 1.0);
        assert_relative_eq!(s.a_d[(0, 0)], 2.0 + cert.k[(0, 0)], epsilon = 1e-14);
    }

    #[test]
    fn full_order_is_similarity() {
        let dv = stable_dv();
        let tr = balanced_truncation(&dv, 3).unwrap();
        let full = markov_parameters(&dv, 20);
        let red = markov_parameters(&tr.reduced, 20);
        for (a, b) in full.iter().zip(&red) {
            assert!((a - b).norm() < 1e-9);
        }
        // Balanced: both gramians equal diag(σ).
        let r = &tr.reduced;
        let wc = solve_dlyap(&r.a_d, &(&r.b_d * r.b_d.transpose())).unwrap();
        let cd = r.c_d();
        let wo = solve_dlyap(&r.a_d.transpose(), &(cd.transpose() * &cd)).unwrap();
        let sigma = Mat::from_diagonal(&Vector::from_vec(tr.hankel.clone()));
        assert!((wc - &sigma).norm() < 1e-7);
        assert!((wo - &sigma).norm() < 1e-7);
    }

    #[test]
    fn rank_one_hankel_truncates_exactly() {
        // Second state neither reachable nor observable: σ₂ = 0.
        let dv = DvSystem::new(
            Mat::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.3]),
            Mat::from_column_slice(2, 1, &[1.0, 0.0]),
            Mat::from_row_slice(1, 2, &[1.0, 0.0]),
            Mat::zeros(1, 1),
            Mat::from_row_slice(1, 2, &[2.0, 0.0]),
        )
        .unwrap();
        let tr = balanced_truncation(&dv, 1).unwrap();
        assert!(tr.hankel[1] < 1e-12);
        let full = markov_parameters(&dv, 15);
        let red = markov_parameters(&tr.reduced, 15);
        for (a, b) in full.iter().zip(&red) {
            assert!((a - b).norm() < 1e-12);
        }
        assert!(matches!(
            balanced_truncation(&dv, 2),
            Err(Error::RankDeficiency(_))
        ));
    }

    #[test]
    fn truncation_errors() {
        let dv = stable_dv();
        assert_eq!(
            balanced_truncation(&dv, 4).unwrap_err(),
            Error::OrderTooLarge { order: 4, max: 3 }
        );
        assert_eq!(
            balanced_truncation(&dv, 0).unwrap_err(),
            Error::OrderTooLarge { order: 0, max: 3 }
        );
        let mut unstable = dv.clone();
        unstable.a_d[(0, 0)] = 1.5;
        assert!(matches!(
            balanced_truncation(&unstable, 2),
            Err(Error::UnstableInput(_))
        ));
    }

    #[test]
    fn scalar_standard_pipeline() {
        let sys = DaeSystem::new(
            Mat::identity(1, 1),
            Mat::from_element(1, 1, 1.2),
            Mat::identity(1, 1),
            Mat::identity(1, 1),
        )
        .unwrap();
        let out = build_abstraction_pipeline(&sys, 1, &PipelineOptions::default()).unwrap();
        let x0 = Vector::from_element(1, 0.7);
        let z0 = out.cert.match_initial_state(&x0);
        assert!(out.cert.lyapunov_value(&z0, &x0) < 1e-12);
        assert!(out.cert.gamma_coeff < 1e-9);
    }
}
