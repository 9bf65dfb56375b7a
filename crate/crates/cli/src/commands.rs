use std::fs;
use std::path::{Path, PathBuf};

use dae_refine::certificates::{build_certificate, solve_stability_cert, SylvesterMethod};
use dae_refine::conversion::{dae_to_dv, dv_to_dae, DvSystem};
use dae_refine::descriptor::{
    check_reachability, is_regular, weierstrass_with_tol, DaeSystem, InitialStates,
};
use dae_refine::linalg::{pinv, spectral_radius};
use dae_refine::reduction::{balanced_truncation, build_abstraction_pipeline, stabilize_dv, PipelineOptions};
use dae_refine::refinement::{
    approx_refine, exact_refine, ApproxRefineInput, DaeController, ExactRelation, SFeed,
};
use dae_refine::sim::{simulate_dae_closed, simulate_dv, SSource};
use dae_refine::{Mat, Vector};
use serde_json::{json, Value};

use crate::schema::{to_json_string, ControllerFile, Kind, SystemFile};
use crate::{CliError, Command, InputKind, Method, Mode, RefineArgs, Settings, SimulateArgs, Target};

pub fn dispatch(cmd: Command, s: &Settings) -> Result<(), CliError> {
    match cmd {
        Command::Check { system, out } => check(&system, out.as_deref(), s),
        Command::Convert { system, to, out } => convert(&system, to, out.as_deref(), s),
        Command::Certify {
            concrete,
            abstract_sys,
            method,
            out,
        } => certify(&concrete, &abstract_sys, method, out.as_deref(), s),
        Command::Reduce { system, order, out } => reduce(&system, order, out.as_deref(), s),
        Command::Refine(args) => refine(&args, s),
        Command::Simulate(args) => simulate(&args, s),
        Command::Pipeline {
            concrete,
            order,
            method,
            x0,
            v_max,
            out,
        } => pipeline(&concrete, order, method, x0, v_max, &out, s),
    }
}

fn emit_file(f: &SystemFile, out: Option<&Path>) -> Result<(), CliError> {
    match out {
        Some(p) => f.write(p),
        None => {
            print!("{}", f.to_json());
            Ok(())
        }
    }
}

fn emit_report(v: &Value, out: Option<&Path>) -> Result<(), CliError> {
    let text = to_json_string(v);
    match out {
        Some(p) => fs::write(p, text).map_err(|e| CliError::io(p, e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn sylvester_method(m: Method) -> SylvesterMethod {
    match m {
        Method::Kron => SylvesterMethod::Kron,
        Method::Rq => SylvesterMethod::Rq,
    }
}

/// DV form of a DAE or DV file.
fn load_dv(path: &Path, s: &Settings) -> Result<DvSystem, CliError> {
    let f = SystemFile::read(path)?;
    match f.kind {
        Kind::Dae => Ok(dae_to_dv(&f.to_dae()?, s.tol)?),
        _ => f.to_dv(),
    }
}

fn first_point(states: &InitialStates) -> Option<Vector> {
    match states {
        InitialStates::Points(pts) => pts.first().cloned(),
        InitialStates::Free => None,
    }
}

fn state_arg(arg: Option<Vec<f64>>, n: usize, flag: &str) -> Result<Option<Vector>, CliError> {
    match arg {
        Some(v) if v.len() != n => Err(CliError::Usage(format!(
            "{flag} needs {n} entries, got {}",
            v.len()
        ))),
        Some(v) if v.iter().any(|x| !x.is_finite()) => {
            Err(CliError::Usage(format!("{flag} has non-finite entries")))
        }
        Some(v) => Ok(Some(Vector::from_vec(v))),
        None => Ok(None),
    }
}

fn vec_json(v: &Vector) -> Value {
    json!(v.iter().copied().collect::<Vec<_>>())
}

fn check(path: &Path, out: Option<&Path>, s: &Settings) -> Result<(), CliError> {
    let sys = SystemFile::read(path)?.to_dae()?;
    let regular = is_regular(&sys.e, &sys.a)?.is_regular();
    let mut report = json!({
        "n": sys.n(),
        "inputs": sys.p(),
        "outputs": sys.k(),
        "regular": regular,
    });
    if regular {
        let w = weierstrass_with_tol(&sys, s.tol)?;
        let r = check_reachability(&w, s.tol);
        let extra = json!({
            "index": w.mu,
            "n1": w.n1,
            "n2": w.n2,
            "reachable": r.reachable,
            "rank_causal": r.rank_causal,
            "rank_anticausal": r.rank_anticausal,
            "convertible": dae_to_dv(&sys, s.tol).is_ok(),
        });
        report
            .as_object_mut()
            .unwrap()
            .extend(extra.as_object().unwrap().clone());
    }
    emit_report(&report, out)
}

fn convert(path: &Path, to: Target, out: Option<&Path>, s: &Settings) -> Result<(), CliError> {
    let f = SystemFile::read(path)?;
    let converted = match (f.kind, to) {
        (Kind::Dae, Target::Dv) => SystemFile::from_dv(&dae_to_dv(&f.to_dae()?, s.tol)?),
        (Kind::Dv, Target::Dae) => SystemFile::from_dae(&dv_to_dae(&f.to_dv()?, s.tol)?.0),
        (Kind::Dae, Target::Dae) | (Kind::Dv, Target::Dv) => {
            return Err(CliError::Usage("--to names the kind the file already has".into()))
        }
        _ => return Err(CliError::Schema("convert needs a dae or dv file".into())),
    };
    emit_file(&converted, out)
}

fn certify(
    concrete: &Path,
    abstract_sys: &Path,
    method: Method,
    out: Option<&Path>,
    s: &Settings,
) -> Result<(), CliError> {
    let dc = load_dv(concrete, s)?;
    let da = load_dv(abstract_sys, s)?;
    let stab = solve_stability_cert(&dc.a_d, &dc.b_d, &dc.c, &s.lambda_grid)?;
    let cert = build_certificate(&dc, &da, stab, sylvester_method(method))?;
    cert.validate(&dc.a_d, &dc.b_d, &dc.c, &da.a_d, &da.b_d, &da.c)?;
    emit_file(&SystemFile::from_certificate(&cert), out)
}

fn reduce(path: &Path, order: usize, out: Option<&Path>, s: &Settings) -> Result<(), CliError> {
    let dv = load_dv(path, s)?;
    let (stable, cert) = stabilize_dv(&dv, &s.lambda_grid)?;
    let tr = balanced_truncation(&stable, order)?;
    let mut f = SystemFile::from_dv(&tr.reduced);
    let hankel: Vec<String> = tr.hankel.iter().map(|h| format!("{h:e}")).collect();
    f.metadata.insert("hankel".into(), hankel.join(","));
    f.metadata.insert("lambda".into(), cert.lambda.to_string());
    emit_file(&f, out)
}

fn abstract_controller(path: &Path) -> Result<DaeController, CliError> {
    match SystemFile::read(path)?.to_controller()? {
        ControllerFile::Abstract(c) => Ok(c),
        ControllerFile::Refined { .. } => Err(CliError::Schema(
            "expected an abstract controller (E_c, A_c, B_c)".into(),
        )),
    }
}

fn refine(args: &RefineArgs, s: &Settings) -> Result<(), CliError> {
    let cfile = SystemFile::read(&args.concrete)?;
    let concrete = cfile.to_dae()?;
    let ctrl = abstract_controller(&args.controller)?;
    let afile = SystemFile::read(&args.abstract_sys)?;
    let x0 = state_arg(args.x0.clone(), concrete.n(), "--x0")?;
    let written = match args.mode {
        Mode::Exact => {
            let abstract_dae = match afile.kind {
                Kind::Dv => dv_to_dae(&afile.to_dv()?, s.tol)?.0,
                _ => afile.to_dae()?,
            };
            let gain = if args.stabilize {
                let dv = dae_to_dv(&concrete, s.tol)?;
                Some(solve_stability_cert(&dv.a_d, &dv.b_d, &dv.c, &s.lambda_grid)?.k)
            } else {
                None
            };
            let relation = match &args.relation {
                Some(p) => match SystemFile::read(p)?.to_relation()? {
                    ExactRelation::Map { h, k } => ExactRelation::Map { h, k: k.or(gain) },
                    other => other,
                },
                None if concrete.n() == abstract_dae.n() => ExactRelation::Map {
                    h: Mat::identity(concrete.n(), concrete.n()),
                    k: gain,
                },
                None => {
                    return Err(CliError::Usage(
                        "--relation is required when the state dimensions differ".into(),
                    ))
                }
            };
            let r = exact_refine(&concrete, &abstract_dae, &ctrl, &relation, s.tol)?;
            let x_a0 = match &x0 {
                Some(x) => Some(pinv(&r.interface.p, s.tol)? * x),
                None => None,
            };
            SystemFile::from_refined(&r.controller, x_a0.as_ref(), None)
        }
        Mode::Approx => {
            let cert_path = args
                .certificate
                .as_ref()
                .ok_or_else(|| CliError::Usage("--mode approx requires --certificate".into()))?;
            let cert = SystemFile::read(cert_path)?.to_certificate()?;
            let dv_concrete = dae_to_dv(&concrete, s.tol)?;
            let (abstract_dae, dv_abstract) = match afile.kind {
                Kind::Dv => {
                    let dv = afile.to_dv()?;
                    (dv_to_dae(&dv, s.tol)?.0, dv)
                }
                _ => {
                    let dae = afile.to_dae()?;
                    let dv = dae_to_dv(&dae, s.tol)?;
                    (dae, dv)
                }
            };
            let recovery = dv_to_dae(&dv_abstract, s.tol)?.1;
            let x0 = x0
                .or_else(|| first_point(&concrete.initial_states))
                .ok_or_else(|| {
                    CliError::Usage("--mode approx needs --x0 or a listed concrete initial state".into())
                })?;
            let input = ApproxRefineInput {
                concrete: &concrete,
                dv_concrete: &dv_concrete,
                abstract_dae: &abstract_dae,
                dv_abstract: &dv_abstract,
                recovery: &recovery,
                cert: &cert,
            };
            let r = approx_refine(input, &ctrl, &x0, args.horizon, s.tol)?;
            let mut f = SystemFile::from_refined(&r.controller, Some(&r.z0), Some(r.epsilon));
            f.scalars.insert("v_max".into(), r.v_max);
            f
        }
    };
    emit_file(&written, args.out.as_deref())
}

fn read_signal(path: &PathBuf, width: usize) -> Result<Vec<Vector>, CliError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::io(path, e))?;
    let mut samples = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| CliError::io(path, e))?;
        let v: Vec<f64> = rec
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| CliError::Schema(format!("{} row {}: {e}", path.display(), row + 1)))?;
        if v.len() != width || v.iter().any(|x| !x.is_finite()) {
            return Err(CliError::Schema(format!(
                "{} row {}: expected {width} finite values",
                path.display(),
                row + 1
            )));
        }
        samples.push(Vector::from_vec(v));
    }
    Ok(samples)
}

fn simulate(args: &SimulateArgs, s: &Settings) -> Result<(), CliError> {
    let f = SystemFile::read(&args.system)?;
    let states = f.initial_states()?;
    let (report, trace) = match &args.controller {
        Some(cpath) => {
            let concrete = f.to_dae()?;
            let (controller, stored, epsilon) = match SystemFile::read(cpath)?.to_controller()? {
                ControllerFile::Refined {
                    controller,
                    x_a0,
                    epsilon,
                } => (controller, x_a0, epsilon),
                ControllerFile::Abstract(_) => {
                    return Err(CliError::Schema(
                        "simulate needs a refined controller; run refine first".into(),
                    ))
                }
            };
            let x0 = state_arg(args.x0.clone(), concrete.n(), "--x0")?
                .or_else(|| first_point(&states))
                .unwrap_or_else(|| Vector::zeros(concrete.n()));
            let x_a0 = match &controller.feed {
                SFeed::Coupled(c) => {
                    let given = state_arg(args.x_a0.clone(), c.lift.ncols(), "--x-a0")?;
                    Some(match given.or(stored) {
                        Some(z) => z,
                        None => pinv(&c.interface.p, s.tol)? * &x0,
                    })
                }
                _ => None,
            };
            let run = simulate_dae_closed(&concrete, &controller, x_a0.as_ref(), &x0, args.horizon, s.tol)?;
            let mut report = json!({
                "horizon": run.trace.horizon(),
                "x0": vec_json(&x0),
                "max_residual": run.max_residual,
            });
            if let Some(ya) = &run.abstract_outputs {
                let d = dae_refine::sim::distance_of(&run.trace.y, ya)?;
                report["x_a0"] = vec_json(x_a0.as_ref().expect("coupled feed"));
                report["max_distance"] = json!(d.max);
                if let Some(eps) = epsilon {
                    report["epsilon"] = json!(eps);
                    report["within_epsilon"] = json!(d.max <= eps);
                }
            }
            (report, run.trace)
        }
        None => {
            let dv = match f.kind {
                Kind::Dae => dae_to_dv(&f.to_dae()?, s.tol)?,
                _ => f.to_dv()?,
            };
            let source = match args.input {
                InputKind::Random => SSource::Random {
                    seed: args.seed,
                    bound: args.bound,
                },
                InputKind::Gain => {
                    let g = args
                        .gain
                        .as_ref()
                        .ok_or_else(|| CliError::Usage("--input gain requires --gain".into()))?;
                    if g.len() != dv.p() * dv.n() {
                        return Err(CliError::Usage(format!(
                            "--gain needs {}×{} = {} entries",
                            dv.p(),
                            dv.n(),
                            dv.p() * dv.n()
                        )));
                    }
                    SSource::Gain(Mat::from_row_slice(dv.p(), dv.n(), g))
                }
                InputKind::File => {
                    let p = args
                        .signal
                        .as_ref()
                        .ok_or_else(|| CliError::Usage("--input file requires --signal".into()))?;
                    SSource::Signal(read_signal(p, dv.p())?)
                }
            };
            let x0 = state_arg(args.x0.clone(), dv.n(), "--x0")?
                .or_else(|| first_point(&states))
                .unwrap_or_else(|| Vector::zeros(dv.n()));
            let trace = simulate_dv(&dv, &x0, &source, args.horizon)?;
            let peak = trace.y.iter().map(|y| y.norm()).fold(0.0, f64::max);
            let report = json!({
                "horizon": trace.horizon(),
                "x0": vec_json(&x0),
                "max_output_norm": peak,
            });
            (report, trace)
        }
    };
    if let Some(p) = &args.out {
        trace.export_csv(p)?;
    }
    emit_report(&report, args.report.as_deref())
}

fn pipeline(
    concrete: &Path,
    order: usize,
    method: Method,
    x0: Option<Vec<f64>>,
    v_max: Option<f64>,
    out: &Path,
    s: &Settings,
) -> Result<(), CliError> {
    let sys: DaeSystem = SystemFile::read(concrete)?.to_dae()?;
    if let Some(v) = v_max {
        if !(v.is_finite() && v >= 0.0) {
            return Err(CliError::Usage(format!("--v-max must be nonnegative, got {v}")));
        }
    }
    let x0 = state_arg(x0, sys.n(), "--x0")?.or_else(|| first_point(&sys.initial_states));
    let opts = PipelineOptions {
        lambda_grid: s.lambda_grid.clone(),
        tol: s.tol,
        sylvester: sylvester_method(method),
    };
    let mut r = build_abstraction_pipeline(&sys, order, &opts)?;
    let mut report = json!({
        "order": order,
        "hankel": r.hankel,
        "lambda": r.cert.lambda(),
        "gamma_coeff": r.cert.gamma_coeff,
        "stabilized_spectral_radius": spectral_radius(&r.dv_stabilized.a_d),
        "abstract_spectral_radius": spectral_radius(&r.dv_abstract.a_d),
    });
    if let Some(x0) = &x0 {
        let z0 = r.cert.match_initial_state(x0);
        report["x0"] = vec_json(x0);
        report["z0"] = vec_json(&z0);
        report["initial_mismatch"] = json!(r.cert.lyapunov_value(&z0, x0));
        if let Some(v) = v_max {
            let eps = r.cert.bind(&z0, x0, v)?;
            report["v_max"] = json!(v);
            report["epsilon"] = json!(eps);
        }
    }
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    SystemFile::from_dae(&r.dae_abstract).write(&out.join("abstract_dae.json"))?;
    SystemFile::from_dv(&r.dv_abstract).write(&out.join("abstract_dv.json"))?;
    SystemFile::from_certificate(&r.cert).write(&out.join("certificate.json"))?;
    emit_report(&report, Some(&out.join("report.json")))?;
    emit_report(&report, None)
}
