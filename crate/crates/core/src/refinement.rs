//! Abstract DAE controllers, closed loops, and their refinement to
//! controllers for the concrete descriptor system.

use crate::certificates::{Interface, RefinementCertificate};
use crate::conversion::{dae_to_dv, dv_to_dae, DrivingRecovery, DvSystem};
use crate::descriptor::DaeSystem;
use crate::error::{Error, Result};
use crate::linalg::{ensure_finite, hcat, norm2, pinv, rank_of, vcat, Mat, RankTolerance, Vector};

/// `E_c x_a(t+1) = A_c x_a(t) + B_c u_a(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DaeController {
    pub e_c: Mat,
    pub a_c: Mat,
    pub b_c: Mat,
}

impl DaeController {
    pub fn new(e_c: Mat, a_c: Mat, b_c: Mat) -> Result<Self> {
        let rows = e_c.nrows();
        if a_c.nrows() != rows || b_c.nrows() != rows || a_c.ncols() != e_c.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "controller blocks {:?}, {:?}, {:?} are inconsistent",
                e_c.shape(),
                a_c.shape(),
                b_c.shape()
            )));
        }
        for (m, name) in [(&e_c, "E_c"), (&a_c, "A_c"), (&b_c, "B_c")] {
            ensure_finite(m, name)?;
        }
        Ok(Self { e_c, a_c, b_c })
    }

    /// Controller with no equations for a plant with `m` states and `q` inputs.
    pub fn empty(m: usize, q: usize) -> Self {
        Self {
            e_c: Mat::zeros(0, m),
            a_c: Mat::zeros(0, m),
            b_c: Mat::zeros(0, q),
        }
    }

    /// Static state feedback `u_a = K x_a`.
    pub fn state_feedback(k: &Mat) -> Self {
        let q = k.nrows();
        Self {
            e_c: Mat::zeros(q, k.ncols()),
            a_c: k.clone(),
            b_c: -Mat::identity(q, q),
        }
    }

    fn check_against(&self, sys: &DaeSystem) -> Result<()> {
        if self.e_c.ncols() != sys.n() || self.b_c.ncols() != sys.p() {
            return Err(Error::DimensionMismatch(format!(
                "controller acts on {} states and {} inputs, plant has {} and {}",
                self.e_c.ncols(),
                self.b_c.ncols(),
                sys.n(),
                sys.p()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControllerClass {
    /// Some initial states have no continuation.
    Blocking,
    /// Continuations exist but are not unique.
    Admissible,
    /// Continuations exist and are unique.
    WellPosed,
}

impl ControllerClass {
    pub fn as_str(&self) -> &'static str {
        match self {
            ControllerClass::Blocking => "Blocking",
            ControllerClass::Admissible => "Admissible",
            ControllerClass::WellPosed => "WellPosed",
        }
    }
}

/// Rank test on `[E_a B_a; E_c B_c]` and `[E_a B_a A_a; E_c B_c A_c]`.
pub fn classify_controller(
    sys: &DaeSystem,
    ctrl: &DaeController,
    tol: RankTolerance,
) -> Result<ControllerClass> {
    ctrl.check_against(sys)?;
    let eb = vcat(&[&hcat(&[&sys.e, &sys.b]), &hcat(&[&ctrl.e_c, &ctrl.b_c])]);
    let eba = vcat(&[
        &hcat(&[&sys.e, &sys.b, &sys.a]),
        &hcat(&[&ctrl.e_c, &ctrl.b_c, &ctrl.a_c]),
    ]);
    let r1 = rank_of(&eb, tol);
    let r2 = rank_of(&eba, tol);
    Ok(if r1 < r2 {
        ControllerClass::Blocking
    } else if r1 == sys.n() + sys.p() {
        ControllerClass::WellPosed
    } else {
        ControllerClass::Admissible
    })
}

/// Autonomous closed loop `x_a⁺ = 𝒜 x_a`, `u_a = ℬ x_a`, `y_a = C x_a`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoop {
    pub a_cal: Mat,
    pub b_cal: Mat,
    pub c_out: Mat,
}

impl ClosedLoop {
    pub fn step(&self, x: &Vector) -> Vector {
        &self.a_cal * x
    }
}

pub fn close_loop(sys: &DaeSystem, ctrl: &DaeController, tol: RankTolerance) -> Result<ClosedLoop> {
    let class = classify_controller(sys, ctrl, tol)?;
    if class != ControllerClass::WellPosed {
        return Err(Error::NotWellPosed(format!("controller is {}", class.as_str())));
    }
    let m = sys.n();
    let q = sys.p();
    let stacked = vcat(&[&hcat(&[&sys.e, &(-&sys.b)]), &hcat(&[&ctrl.e_c, &(-&ctrl.b_c)])]);
    let rhs = vcat(&[&sys.a, &ctrl.a_c]);
    let sol = pinv(&stacked, tol)? * &rhs;
    let residual = (&stacked * &sol - &rhs).norm();
    if residual > 1e-9 * (1.0 + rhs.norm()) * (1.0 + norm2(&stacked)) {
        return Err(Error::NotWellPosed(format!("closed-loop residual {residual:e}")));
    }
    Ok(ClosedLoop {
        a_cal: sol.rows(0, m).into_owned(),
        b_cal: sol.rows(m, q).into_owned(),
        c_out: sys.c.clone(),
    })
}

/// `T = W1 𝒜 + W2 ℬ + W3` for an already closed loop.
pub fn lift_closed_loop(cl: &ClosedLoop, rec: &DrivingRecovery) -> Result<Mat> {
    if rec.w1.ncols() != cl.a_cal.nrows() || rec.w2.ncols() != cl.b_cal.nrows() {
        return Err(Error::DimensionMismatch(
            "recovery map does not match the closed loop".into(),
        ));
    }
    Ok(&rec.w1 * &cl.a_cal + &rec.w2 * &cl.b_cal + &rec.w3)
}

/// Driving-input gain `s_a = T x_a` reproducing the closed loop on the DV system.
pub fn lift_controller_to_dv(
    sys: &DaeSystem,
    ctrl: &DaeController,
    rec: &DrivingRecovery,
    tol: RankTolerance,
) -> Result<Mat> {
    lift_closed_loop(&close_loop(sys, ctrl, tol)?, rec)
}

/// Abstract side of an interface-coupled feed.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledFeed {
    /// Abstract closed loop `x_a⁺ = 𝒜 x_a`.
    pub abstract_closed: Mat,
    /// Lifted abstract strategy `s_a = T x_a`.
    pub lift: Mat,
    pub interface: Interface,
    /// Abstract output map.
    pub c_abstract: Mat,
}

/// Source of the driving input `s(t)`.
#[derive(Debug, Clone, PartialEq)]
pub enum SFeed {
    Signal(Vec<Vector>),
    /// `s = G x`.
    StateGain(Mat),
    /// `s = R T x_a + Q x_a + K (x − P x_a)` with `x_a` co-simulated.
    Coupled(CoupledFeed),
}

/// `B_dᵀ x(t+1) = B_dᵀ A_d x(t) + B_dᵀ B_d s(t)`, `u = C_u x + D_u s`.
#[derive(Debug, Clone, PartialEq)]
pub struct RefinedController {
    pub e_ctrl: Mat,
    pub a_ctrl: Mat,
    pub b_ctrl: Mat,
    pub c_u: Mat,
    pub d_u: Mat,
    pub feed: SFeed,
}

impl RefinedController {
    pub fn n(&self) -> usize {
        self.e_ctrl.ncols()
    }

    pub fn p(&self) -> usize {
        self.e_ctrl.nrows()
    }

    /// `[E; E_ctrl]` must have full column rank.
    pub fn check_well_posed(&self, sys: &DaeSystem, tol: RankTolerance) -> Result<()> {
        if sys.n() != self.n() || sys.p() != self.c_u.nrows() {
            return Err(Error::DimensionMismatch(
                "controller does not match the plant".into(),
            ));
        }
        let stacked = vcat(&[&sys.e, &self.e_ctrl]);
        let rank = rank_of(&stacked, tol);
        if rank < sys.n() {
            return Err(Error::NotWellPosed(format!(
                "[E; B_dᵀ] has rank {rank} < {}",
                sys.n()
            )));
        }
        Ok(())
    }

    /// Driving input at time `t` given the plant state and, for coupled
    /// feeds, the abstract state.
    pub fn driving_input(&self, t: usize, x: &Vector, x_a: Option<&Vector>) -> Result<Vector> {
        match &self.feed {
            SFeed::Signal(samples) => samples.get(t).cloned().ok_or(Error::InsufficientInputHorizon {
                have: samples.len(),
                need: t + 1,
            }),
            SFeed::StateGain(g) => Ok(g * x),
            SFeed::Coupled(c) => {
                let xa = x_a
                    .ok_or_else(|| Error::DimensionMismatch("coupled feed needs an abstract state".into()))?;
                Ok(c.interface.apply(&(&c.lift * xa), xa, x))
            }
        }
    }
}

pub fn refine_strategy_to_dae(dv: &DvSystem, feed: SFeed) -> RefinedController {
    let bt = dv.b_d.transpose();
    RefinedController {
        a_ctrl: &bt * &dv.a_d,
        b_ctrl: &bt * &dv.b_d,
        e_ctrl: bt,
        c_u: dv.c_u.clone(),
        d_u: dv.d_u.clone(),
        feed,
    }
}

/// One step of plant and refined controller.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedStep {
    pub x_next: Vector,
    pub u: Vector,
    pub s: Vector,
    pub residual: f64,
}

/// Runtime realization of the interconnection: `x(t+1)` is the unique
/// solution of `[E; B_dᵀ] x(t+1) = [A x + B u; B_dᵀ A_d x + B_dᵀ B_d s]`.
#[derive(Debug, Clone)]
pub struct ClosedStepper<'a> {
    sys: &'a DaeSystem,
    ctrl: &'a RefinedController,
    stacked: Mat,
    stacked_pinv: Mat,
}

impl<'a> ClosedStepper<'a> {
    pub fn new(sys: &'a DaeSystem, ctrl: &'a RefinedController, tol: RankTolerance) -> Result<Self> {
        ctrl.check_well_posed(sys, tol)?;
        let stacked = vcat(&[&sys.e, &ctrl.e_ctrl]);
        let stacked_pinv = pinv(&stacked, tol)?;
        Ok(Self {
            sys,
            ctrl,
            stacked,
            stacked_pinv,
        })
    }

    pub fn step(&self, t: usize, x: &Vector, x_a: Option<&Vector>) -> Result<ClosedStep> {
        let s = self.ctrl.driving_input(t, x, x_a)?;
        let u = &self.ctrl.c_u * x + &self.ctrl.d_u * &s;
        let plant = &self.sys.a * x + &self.sys.b * &u;
        let ctrl = &self.ctrl.a_ctrl * x + &self.ctrl.b_ctrl * &s;
        let rhs = Vector::from_iterator(plant.len() + ctrl.len(), plant.iter().chain(ctrl.iter()).copied());
        let x_next = &self.stacked_pinv * &rhs;
        let residual = (&self.stacked * &x_next - &rhs).norm();
        if residual > 1e-9 * (1.0 + rhs.norm()) {
            return Err(Error::InconsistentInitialState(residual));
        }
        Ok(ClosedStep {
            x_next,
            u,
            s,
            residual,
        })
    }
}

/// Relation supplied to [`exact_refine`].
#[derive(Debug, Clone, PartialEq)]
pub enum ExactRelation {
    /// `x = H x_a`, with an optional stabilizing gain (zero by default).
    Map {
        h: Mat,
        k: Option<Mat>,
    },
    Interface(Interface),
}

fn interface_gaps(dv_c: &DvSystem, dv_a: &DvSystem, i: &Interface) -> (f64, f64, f64) {
    let state = &dv_c.b_d * &i.r - &i.p * &dv_a.b_d;
    let drift = &dv_c.a_d * &i.p + &dv_c.b_d * &i.q - &i.p * &dv_a.a_d;
    let out = &dv_c.c * &i.p - &dv_a.c;
    (state.norm(), drift.norm(), out.norm())
}

/// Exact interface for the relation `x = H x_a` between two DV systems.
pub fn exact_interface(
    dv_c: &DvSystem,
    dv_a: &DvSystem,
    h: &Mat,
    k: Option<Mat>,
    tol: RankTolerance,
) -> Result<Interface> {
    let n = dv_c.n();
    if h.shape() != (n, dv_a.n()) {
        return Err(Error::DimensionMismatch(format!("H must be {n}×{}", dv_a.n())));
    }
    let k = k.unwrap_or_else(|| Mat::zeros(dv_c.p(), n));
    if k.shape() != (dv_c.p(), n) {
        return Err(Error::DimensionMismatch("K must be p×n".into()));
    }
    let bp = pinv(&dv_c.b_d, tol)?;
    let iface = Interface {
        r: &bp * h * &dv_a.b_d,
        q: &bp * (h * &dv_a.a_d - &dv_c.a_d * h),
        p: h.clone(),
        k,
    };
    check_exact_interface(dv_c, dv_a, &iface)?;
    Ok(iface)
}

fn check_exact_interface(dv_c: &DvSystem, dv_a: &DvSystem, i: &Interface) -> Result<()> {
    if i.p.shape() != (dv_c.n(), dv_a.n())
        || i.q.shape() != (dv_c.p(), dv_a.n())
        || i.r.shape() != (dv_c.p(), dv_a.p())
        || i.k.shape() != (dv_c.p(), dv_c.n())
    {
        return Err(Error::DimensionMismatch(
            "interface blocks do not match the systems".into(),
        ));
    }
    let (gs, gd, go) = interface_gaps(dv_c, dv_a, i);
    let scale = 1.0 + norm2(&dv_c.a_d) + norm2(&dv_a.a_d) + norm2(&i.p) + norm2(&dv_a.b_d);
    if gs > 1e-9 * scale || gd > 1e-9 * scale {
        return Err(Error::MissingInterface(format!(
            "transition mismatch {:e}",
            gs.max(gd)
        )));
    }
    if go > 1e-9 * scale {
        return Err(Error::MissingInterface(format!("output mismatch {go:e}")));
    }
    Ok(())
}

/// Everything produced by [`exact_refine`].
#[derive(Debug, Clone)]
pub struct ExactRefinement {
    pub controller: RefinedController,
    pub dv_concrete: DvSystem,
    pub dv_abstract: DvSystem,
    pub recovery: DrivingRecovery,
    pub closed_loop: ClosedLoop,
    pub lift: Mat,
    pub interface: Interface,
}

impl ExactRefinement {
    /// Concrete dynamics restricted to the relation, `x⁺ = (A_d + B_d(RT + Q)) x_a`
    /// expressed through `P`: equals `P 𝒜` when the interface is exact.
    pub fn realized_closed_loop(&self) -> Mat {
        let i = &self.interface;
        &self.dv_concrete.a_d * &i.p + &self.dv_concrete.b_d * (&i.r * &self.lift + &i.q)
    }
}

/// Refine a well-posed abstract controller through an exact relation.
pub fn exact_refine(
    concrete: &DaeSystem,
    abstract_sys: &DaeSystem,
    ctrl: &DaeController,
    relation: &ExactRelation,
    tol: RankTolerance,
) -> Result<ExactRefinement> {
    let closed_loop = close_loop(abstract_sys, ctrl, tol)?;
    let dv_concrete = dae_to_dv(concrete, tol)?;
    let dv_abstract = dae_to_dv(abstract_sys, tol)?;
    let (_, recovery) = dv_to_dae(&dv_abstract, tol)?;
    let lift = lift_closed_loop(&closed_loop, &recovery)?;
    let interface = match relation {
        ExactRelation::Map { h, k } => exact_interface(&dv_concrete, &dv_abstract, h, k.clone(), tol)?,
        ExactRelation::Interface(i) => {
            check_exact_interface(&dv_concrete, &dv_abstract, i)?;
            i.clone()
        }
    };
    let feed = SFeed::Coupled(CoupledFeed {
        abstract_closed: closed_loop.a_cal.clone(),
        lift: lift.clone(),
        interface: interface.clone(),
        c_abstract: abstract_sys.c.clone(),
    });
    let controller = refine_strategy_to_dae(&dv_concrete, feed);
    controller.check_well_posed(concrete, tol)?;
    Ok(ExactRefinement {
        controller,
        dv_concrete,
        dv_abstract,
        recovery,
        closed_loop,
        lift,
        interface,
    })
}

/// Systems and certificate entering an approximate refinement.
#[derive(Debug, Clone, Copy)]
pub struct ApproxRefineInput<'a> {
    pub concrete: &'a DaeSystem,
    pub dv_concrete: &'a DvSystem,
    pub abstract_dae: &'a DaeSystem,
    pub dv_abstract: &'a DvSystem,
    pub recovery: &'a DrivingRecovery,
    pub cert: &'a RefinementCertificate,
}

#[derive(Debug, Clone)]
pub struct ApproxRefinement {
    pub controller: RefinedController,
    pub closed_loop: ClosedLoop,
    pub lift: Mat,
    /// Abstract initial state matched to `x0`.
    pub z0: Vector,
    pub v_max: f64,
    pub epsilon: f64,
    /// Certificate with `v_max` and `epsilon` bound.
    pub cert: RefinementCertificate,
}

/// Refine a well-posed abstract controller through a simulation-function
/// certificate. `v_max` is measured on the abstract closed loop started
/// from the matched initial state over `horizon` steps.
pub fn approx_refine(
    input: ApproxRefineInput<'_>,
    ctrl: &DaeController,
    x0: &Vector,
    horizon: usize,
    tol: RankTolerance,
) -> Result<ApproxRefinement> {
    let closed_loop = close_loop(input.abstract_dae, ctrl, tol)?;
    let (dc, da) = (input.dv_concrete, input.dv_abstract);
    input
        .cert
        .validate(&dc.a_d, &dc.b_d, &dc.c, &da.a_d, &da.b_d, &da.c)
        .map_err(|e| match e {
            Error::InvalidCertificate(_) => e,
            other => Error::InvalidCertificate(other.to_string()),
        })?;
    if x0.len() != dc.n() {
        return Err(Error::DimensionMismatch(format!(
            "x0 must have length {}",
            dc.n()
        )));
    }
    let lift = lift_closed_loop(&closed_loop, input.recovery)?;
    let z0 = input.cert.match_initial_state(x0);
    let mut za = z0.clone();
    let mut v_max = 0.0f64;
    for _ in 0..horizon {
        v_max = v_max.max((&lift * &za).norm());
        za = &closed_loop.a_cal * &za;
    }
    let mut cert = input.cert.clone();
    let epsilon = cert.bind(&z0, x0, v_max)?;
    let feed = SFeed::Coupled(CoupledFeed {
        abstract_closed: closed_loop.a_cal.clone(),
        lift: lift.clone(),
        interface: cert.interface(),
        c_abstract: input.abstract_dae.c.clone(),
    });
    let controller = refine_strategy_to_dae(dc, feed);
    controller.check_well_posed(input.concrete, tol)?;
    Ok(ApproxRefinement {
        controller,
        closed_loop,
        lift,
        z0,
        v_max,
        epsilon,
        cert,
    })
}
