//! Simulation of DV systems, interface-coupled pairs and DAE closed loops,
//! with output distances and CSV traces.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::certificates::RefinementCertificate;
use crate::conversion::DvSystem;
use crate::descriptor::DaeSystem;
use crate::error::{Error, Result};
use crate::linalg::{Mat, RankTolerance, Vector};
use crate::refinement::{ClosedStepper, RefinedController, SFeed};

/// Row `t` holds `x(t)`, `u(t)`, `s(t)`, `y(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    dims: [usize; 4],
    pub x: Vec<Vector>,
    pub u: Vec<Vector>,
    pub s: Vec<Vector>,
    pub y: Vec<Vector>,
}

impl Trace {
    pub fn empty(nx: usize, nu: usize, ns: usize, ny: usize) -> Self {
        Self {
            dims: [nx, nu, ns, ny],
            x: Vec::new(),
            u: Vec::new(),
            s: Vec::new(),
            y: Vec::new(),
        }
    }

    pub fn horizon(&self) -> usize {
        self.x.len()
    }

    /// `(x, u, s, y)` widths.
    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    pub fn push(&mut self, x: Vector, u: Vector, s: Vector, y: Vector) -> Result<()> {
        let got = [x.len(), u.len(), s.len(), y.len()];
        if got != self.dims {
            return Err(Error::DimensionMismatch(format!(
                "trace row {got:?}, expected {:?}",
                self.dims
            )));
        }
        if [&x, &u, &s, &y].iter().any(|v| v.iter().any(|e| !e.is_finite())) {
            return Err(Error::InvalidMatrix("non-finite trace entry".into()));
        }
        self.x.push(x);
        self.u.push(u);
        self.s.push(s);
        self.y.push(y);
        Ok(())
    }

    pub fn header(&self) -> Vec<String> {
        let mut h = vec!["t".to_string()];
        for (prefix, n) in ["x", "u", "s", "y"].iter().zip(self.dims) {
            h.extend((1..=n).map(|i| format!("{prefix}{i}")));
        }
        h
    }

    pub fn export_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = File::create(path.as_ref()).map_err(io_err)?;
        self.write_csv(BufWriter::new(file))
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(w);
        wr.write_record(self.header()).map_err(csv_err)?;
        for t in 0..self.horizon() {
            let mut row = vec![t.to_string()];
            for v in [&self.x[t], &self.u[t], &self.s[t], &self.y[t]] {
                row.extend(v.iter().map(|e| format!("{e:.16e}")));
            }
            wr.write_record(&row).map_err(csv_err)?;
        }
        wr.flush().map_err(io_err)
    }

    pub fn import_csv(path: impl AsRef<Path>) -> Result<Self> {
        let mut rd = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(path.as_ref())
            .map_err(csv_err)?;
        let header = rd.headers().map_err(csv_err)?.clone();
        let mut dims = [0usize; 4];
        for name in header.iter().skip(1) {
            let slot = match name.chars().next() {
                Some('x') => 0,
                Some('u') => 1,
                Some('s') => 2,
                Some('y') => 3,
                _ => return Err(Error::IoFailure(format!("unexpected column {name:?}"))),
            };
            dims[slot] += 1;
        }
        let mut trace = Self::empty(dims[0], dims[1], dims[2], dims[3]);
        for rec in rd.records() {
            let rec = rec.map_err(csv_err)?;
            let vals = rec
                .iter()
                .skip(1)
                .map(|f| f.parse::<f64>().map_err(|e| Error::IoFailure(e.to_string())))
                .collect::<Result<Vec<_>>>()?;
            if vals.len() != dims.iter().sum::<usize>() {
                return Err(Error::IoFailure("ragged trace row".into()));
            }
            let mut off = 0;
            let mut take = |n: usize| {
                let v = Vector::from_column_slice(&vals[off..off + n]);
                off += n;
                v
            };
            let (x, u, s, y) = (take(dims[0]), take(dims[1]), take(dims[2]), take(dims[3]));
            trace.push(x, u, s, y)?;
        }
        Ok(trace)
    }
}

fn io_err(e: std::io::Error) -> Error {
    Error::IoFailure(e.to_string())
}

fn csv_err(e: csv::Error) -> Error {
    Error::IoFailure(e.to_string())
}

/// Driving input source.
#[derive(Debug, Clone, PartialEq)]
pub enum SSource {
    Signal(Vec<Vector>),
    /// `s = G x`.
    Gain(Mat),
    /// Uniform in `[−bound, bound]` per component.
    Random {
        seed: u64,
        bound: f64,
    },
}

struct SourceState<'a> {
    source: &'a SSource,
    rng: Option<ChaCha8Rng>,
    width: usize,
}

impl<'a> SourceState<'a> {
    fn new(source: &'a SSource, width: usize, n: usize) -> Result<Self> {
        match source {
            SSource::Gain(g) if g.shape() != (width, n) => {
                return Err(Error::DimensionMismatch(format!("gain must be {width}×{n}")))
            }
            SSource::Random { bound, .. } if !(bound.is_finite() && *bound >= 0.0) => {
                return Err(Error::InvalidMatrix(
                    "random bound must be finite and nonnegative".into(),
                ))
            }
            SSource::Signal(samples) if samples.iter().any(|s| s.len() != width) => {
                return Err(Error::DimensionMismatch(format!(
                    "signal samples must have length {width}"
                )))
            }
            _ => {}
        }
        let rng = match source {
            SSource::Random { seed, .. } => Some(ChaCha8Rng::seed_from_u64(*seed)),
            _ => None,
        };
        Ok(Self { source, rng, width })
    }

    fn next(&mut self, t: usize, x: &Vector) -> Result<Vector> {
        match self.source {
            SSource::Signal(samples) => samples.get(t).cloned().ok_or(Error::InsufficientInputHorizon {
                have: samples.len(),
                need: t + 1,
            }),
            SSource::Gain(g) => Ok(g * x),
            SSource::Random { bound, .. } => {
                let rng = self.rng.as_mut().expect("seeded");
                let b = *bound;
                Ok(Vector::from_fn(self.width, |_, _| {
                    if b > 0.0 {
                        rng.gen_range(-b..=b)
                    } else {
                        0.0
                    }
                }))
            }
        }
    }
}

/// `x⁺ = A_d x + B_d s`, `u = C_u x + D_u s`, `y = C x` for `horizon` rows.
pub fn simulate_dv(dv: &DvSystem, x0: &Vector, source: &SSource, horizon: usize) -> Result<Trace> {
    if x0.len() != dv.n() {
        return Err(Error::DimensionMismatch(format!(
            "x0 must have length {}",
            dv.n()
        )));
    }
    let mut src = SourceState::new(source, dv.p(), dv.n())?;
    let mut trace = Trace::empty(dv.n(), dv.p(), dv.p(), dv.k());
    let mut x = x0.clone();
    for t in 0..horizon {
        let s = src.next(t, &x)?;
        let u = dv.input(&x, &s);
        let next = dv.step(&x, &s);
        trace.push(x.clone(), u, s, &dv.c * &x)?;
        x = next;
    }
    Ok(trace)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoupledRun {
    pub abstract_trace: Trace,
    pub concrete_trace: Trace,
    /// `‖y(t) − y_a(t)‖`.
    pub distance: Vec<f64>,
    pub max_distance: f64,
}

/// Abstract system driven by `s_a`, concrete system by the certificate's
/// interface `s = R s_a + Q x_a + K (x − P x_a)`.
pub fn simulate_coupled(
    abstract_dv: &DvSystem,
    concrete_dv: &DvSystem,
    cert: &RefinementCertificate,
    s_a: &SSource,
    x_a0: &Vector,
    x0: &Vector,
    horizon: usize,
) -> Result<CoupledRun> {
    if x_a0.len() != abstract_dv.n() || x0.len() != concrete_dv.n() {
        return Err(Error::DimensionMismatch(
            "initial states do not match the systems".into(),
        ));
    }
    if cert.p.shape() != (concrete_dv.n(), abstract_dv.n()) || abstract_dv.k() != concrete_dv.k() {
        return Err(Error::DimensionMismatch(
            "certificate does not match the systems".into(),
        ));
    }
    let mut src = SourceState::new(s_a, abstract_dv.p(), abstract_dv.n())?;
    let mut ta = Trace::empty(abstract_dv.n(), abstract_dv.p(), abstract_dv.p(), abstract_dv.k());
    let mut tc = Trace::empty(concrete_dv.n(), concrete_dv.p(), concrete_dv.p(), concrete_dv.k());
    let (mut xa, mut x) = (x_a0.clone(), x0.clone());
    for t in 0..horizon {
        let sa = src.next(t, &xa)?;
        let s = cert.interface_apply(&sa, &xa, &x);
        let (xa_next, x_next) = (abstract_dv.step(&xa, &sa), concrete_dv.step(&x, &s));
        ta.push(xa.clone(), abstract_dv.input(&xa, &sa), sa, &abstract_dv.c * &xa)?;
        tc.push(x.clone(), concrete_dv.input(&x, &s), s, &concrete_dv.c * &x)?;
        xa = xa_next;
        x = x_next;
    }
    let d = output_distance(&tc, &ta)?;
    Ok(CoupledRun {
        abstract_trace: ta,
        concrete_trace: tc,
        distance: d.profile,
        max_distance: d.max,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClosedRun {
    pub trace: Trace,
    /// Co-simulated abstract outputs, for coupled feeds.
    pub abstract_outputs: Option<Vec<Vector>>,
    pub max_residual: f64,
}

/// Plant and refined controller stepped together. A coupled feed needs the
/// initial abstract state `x_a0`; it is then advanced by its closed loop.
pub fn simulate_dae_closed(
    concrete: &DaeSystem,
    refined: &RefinedController,
    x_a0: Option<&Vector>,
    x0: &Vector,
    horizon: usize,
    tol: RankTolerance,
) -> Result<ClosedRun> {
    if x0.len() != concrete.n() {
        return Err(Error::DimensionMismatch(format!(
            "x0 must have length {}",
            concrete.n()
        )));
    }
    let stepper = ClosedStepper::new(concrete, refined, tol)?;
    let coupled = match &refined.feed {
        SFeed::Coupled(c) => {
            let xa = x_a0.ok_or_else(|| Error::DimensionMismatch("coupled feed needs x_a0".into()))?;
            if xa.len() != c.abstract_closed.nrows() {
                return Err(Error::DimensionMismatch(
                    "x_a0 does not match the abstract system".into(),
                ));
            }
            Some((c, xa.clone()))
        }
        _ => None,
    };
    let (mut xa, feed) = match coupled {
        Some((c, xa)) => (Some(xa), Some(c)),
        None => (None, None),
    };
    let mut trace = Trace::empty(concrete.n(), concrete.p(), refined.p(), concrete.k());
    let mut ya = feed.map(|_| Vec::with_capacity(horizon));
    let mut x = x0.clone();
    let mut max_residual = 0.0f64;
    for t in 0..horizon {
        let step = stepper.step(t, &x, xa.as_ref())?;
        max_residual = max_residual.max(step.residual);
        let y = &concrete.c * &x;
        trace.push(x, step.u, step.s, y)?;
        if let (Some(c), Some(z), Some(out)) = (feed, xa.as_mut(), ya.as_mut()) {
            out.push(&c.c_abstract * &*z);
            *z = &c.abstract_closed * &*z;
        }
        x = step.x_next;
    }
    Ok(ClosedRun {
        trace,
        abstract_outputs: ya,
        max_residual,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Distance {
    pub profile: Vec<f64>,
    pub max: f64,
}

/// Pointwise Euclidean output distance.
pub fn output_distance(a: &Trace, b: &Trace) -> Result<Distance> {
    if a.horizon() != b.horizon() {
        return Err(Error::HorizonMismatch(format!(
            "{} vs {} rows",
            a.horizon(),
            b.horizon()
        )));
    }
    if a.dims()[3] != b.dims()[3] {
        return Err(Error::HorizonMismatch(format!(
            "output widths {} vs {}",
            a.dims()[3],
            b.dims()[3]
        )));
    }
    distance_of(&a.y, &b.y)
}

/// Distance between two output sequences.
pub fn distance_of(a: &[Vector], b: &[Vector]) -> Result<Distance> {
    if a.len() != b.len() {
        return Err(Error::HorizonMismatch(format!("{} vs {} rows", a.len(), b.len())));
    }
    let profile: Vec<f64> = a.iter().zip(b).map(|(p, q)| (p - q).norm()).collect();
    let max = profile.iter().copied().fold(0.0, f64::max);
    Ok(Distance { profile, max })
}
