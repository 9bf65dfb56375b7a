//! JSON file format shared by every subcommand.
//!
//! ```json
//! {
//!   "schema": 1,
//!   "kind": "dae",
//!   "matrices": { "E": [[1, 0], [0, 0]], "A": [[0.5, 0], [0, 1]], ... },
//!   "initial_states": "free",
//!   "metadata": { "name": "example" }
//! }
//! ```
//!
//! Matrices are arrays of rows. A matrix with no rows or no columns is
//! written as `{"rows": r, "cols": c, "data": []}` so its shape survives.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;

use dae_refine::certificates::{Interface, RefinementCertificate, StabilityCert};
use dae_refine::conversion::DvSystem;
use dae_refine::descriptor::{DaeSystem, InitialStates};
use dae_refine::refinement::{CoupledFeed, DaeController, RefinedController, SFeed};
use dae_refine::{Mat, Vector};
use serde::{Deserialize, Serialize};
use serde_json::ser::{Formatter, PrettyFormatter};

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Dae,
    Dv,
    Controller,
    Certificate,
}

impl Kind {
    fn as_str(self) -> &'static str {
        match self {
            Kind::Dae => "dae",
            Kind::Dv => "dv",
            Kind::Controller => "controller",
            Kind::Certificate => "certificate",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixJson {
    Rows(Vec<Vec<f64>>),
    Shaped {
        rows: usize,
        cols: usize,
        /// Row-major entries.
        data: Vec<f64>,
    },
}

impl MatrixJson {
    pub fn from_mat(m: &Mat) -> Self {
        if m.nrows() == 0 || m.ncols() == 0 {
            return MatrixJson::Shaped {
                rows: m.nrows(),
                cols: m.ncols(),
                data: Vec::new(),
            };
        }
        MatrixJson::Rows(m.row_iter().map(|r| r.iter().copied().collect()).collect())
    }

    pub fn to_mat(&self, name: &str) -> Result<Mat, CliError> {
        let m = match self {
            MatrixJson::Rows(rows) => {
                let cols = rows.first().map_or(0, Vec::len);
                if rows.iter().any(|r| r.len() != cols) {
                    return Err(CliError::Schema(format!("matrix {name} has ragged rows")));
                }
                Mat::from_fn(rows.len(), cols, |i, j| rows[i][j])
            }
            MatrixJson::Shaped { rows, cols, data } => {
                if data.len() != rows * cols {
                    return Err(CliError::Schema(format!(
                        "matrix {name} declares {rows}×{cols} but has {} entries",
                        data.len()
                    )));
                }
                Mat::from_row_slice(*rows, *cols, data)
            }
        };
        if !m.iter().all(|v| v.is_finite()) {
            return Err(CliError::Schema(format!("matrix {name} has non-finite entries")));
        }
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InitialStatesJson {
    Free(String),
    Points(Vec<Vec<f64>>),
}

impl Default for InitialStatesJson {
    fn default() -> Self {
        InitialStatesJson::Free("free".into())
    }
}

impl InitialStatesJson {
    fn from_states(s: &InitialStates) -> Self {
        match s {
            InitialStates::Free => Self::default(),
            InitialStates::Points(pts) => {
                InitialStatesJson::Points(pts.iter().map(|p| p.iter().copied().collect()).collect())
            }
        }
    }

    fn to_states(&self) -> Result<InitialStates, CliError> {
        match self {
            InitialStatesJson::Free(s) if s == "free" => Ok(InitialStates::Free),
            InitialStatesJson::Free(s) => Err(CliError::Schema(format!(
                "initial_states must be \"free\" or a list of points, got \"{s}\""
            ))),
            InitialStatesJson::Points(pts) => {
                if pts.iter().flatten().any(|v| !v.is_finite()) {
                    return Err(CliError::Schema("initial state has non-finite entries".into()));
                }
                Ok(InitialStates::Points(
                    pts.iter().map(|p| Vector::from_vec(p.clone())).collect(),
                ))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemFile {
    pub schema: u32,
    pub kind: Kind,
    pub matrices: BTreeMap<String, MatrixJson>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub scalars: BTreeMap<String, f64>,
    #[serde(default)]
    pub initial_states: InitialStatesJson,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

/// Contents of a `controller` file.
#[derive(Debug, Clone, PartialEq)]
pub enum ControllerFile {
    /// `E_c x(t+1) = A_c x(t) + B_c u(t)` acting on an abstract DAE.
    Abstract(DaeController),
    /// Refined controller with the abstract initial state it was built for.
    Refined {
        controller: RefinedController,
        x_a0: Option<Vector>,
        epsilon: Option<f64>,
    },
}

impl SystemFile {
    fn new(kind: Kind) -> Self {
        Self {
            schema: SCHEMA_VERSION,
            kind,
            matrices: BTreeMap::new(),
            scalars: BTreeMap::new(),
            initial_states: InitialStatesJson::default(),
            metadata: BTreeMap::new(),
        }
    }

    fn put(&mut self, name: &str, m: &Mat) {
        self.matrices.insert(name.into(), MatrixJson::from_mat(m));
    }

    fn has(&self, name: &str) -> bool {
        self.matrices.contains_key(name)
    }

    fn get(&self, name: &str) -> Result<Mat, CliError> {
        self.matrices
            .get(name)
            .ok_or_else(|| CliError::Schema(format!("{} file lacks matrix {name}", self.kind.as_str())))?
            .to_mat(name)
    }

    fn scalar(&self, name: &str) -> Result<f64, CliError> {
        let v = *self
            .scalars
            .get(name)
            .ok_or_else(|| CliError::Schema(format!("{} file lacks scalar {name}", self.kind.as_str())))?;
        if !v.is_finite() {
            return Err(CliError::Schema(format!("scalar {name} is not finite")));
        }
        Ok(v)
    }

    fn expect_kind(&self, kind: Kind) -> Result<(), CliError> {
        if self.kind != kind {
            return Err(CliError::Schema(format!(
                "expected a {} file, got {}",
                kind.as_str(),
                self.kind.as_str()
            )));
        }
        Ok(())
    }

    pub fn from_dae(sys: &DaeSystem) -> Self {
        let mut f = Self::new(Kind::Dae);
        for (name, m) in [("E", &sys.e), ("A", &sys.a), ("B", &sys.b), ("C", &sys.c)] {
            f.put(name, m);
        }
        f.initial_states = InitialStatesJson::from_states(&sys.initial_states);
        f
    }

    pub fn to_dae(&self) -> Result<DaeSystem, CliError> {
        self.expect_kind(Kind::Dae)?;
        let sys = DaeSystem::new(self.get("E")?, self.get("A")?, self.get("B")?, self.get("C")?)?;
        Ok(sys.with_initial_states(self.initial_states.to_states()?)?)
    }

    pub fn from_dv(dv: &DvSystem) -> Self {
        let mut f = Self::new(Kind::Dv);
        for (name, m) in [
            ("A_d", &dv.a_d),
            ("B_d", &dv.b_d),
            ("C_u", &dv.c_u),
            ("D_u", &dv.d_u),
            ("C", &dv.c),
        ] {
            f.put(name, m);
        }
        f.initial_states = InitialStatesJson::from_states(&dv.initial_states);
        f
    }

    pub fn to_dv(&self) -> Result<DvSystem, CliError> {
        self.expect_kind(Kind::Dv)?;
        let dv = DvSystem::new(
            self.get("A_d")?,
            self.get("B_d")?,
            self.get("C_u")?,
            self.get("D_u")?,
            self.get("C")?,
        )?;
        Ok(dv.with_initial_states(self.initial_states.to_states()?)?)
    }

    pub fn initial_states(&self) -> Result<InitialStates, CliError> {
        self.initial_states.to_states()
    }

    #[cfg(test)]
    pub fn from_abstract_controller(c: &DaeController) -> Self {
        let mut f = Self::new(Kind::Controller);
        for (name, m) in [("E_c", &c.e_c), ("A_c", &c.a_c), ("B_c", &c.b_c)] {
            f.put(name, m);
        }
        f
    }

    pub fn from_refined(c: &RefinedController, x_a0: Option<&Vector>, epsilon: Option<f64>) -> Self {
        let mut f = Self::new(Kind::Controller);
        for (name, m) in [
            ("E_ctrl", &c.e_ctrl),
            ("A_ctrl", &c.a_ctrl),
            ("B_ctrl", &c.b_ctrl),
            ("C_u", &c.c_u),
            ("D_u", &c.d_u),
        ] {
            f.put(name, m);
        }
        let feed = match &c.feed {
            SFeed::Signal(samples) => {
                let width = c.e_ctrl.nrows();
                f.put("S", &Mat::from_fn(samples.len(), width, |t, j| samples[t][j]));
                "signal"
            }
            SFeed::StateGain(g) => {
                f.put("G", g);
                "gain"
            }
            SFeed::Coupled(cf) => {
                for (name, m) in [
                    ("A_cal", &cf.abstract_closed),
                    ("T", &cf.lift),
                    ("P", &cf.interface.p),
                    ("Q", &cf.interface.q),
                    ("R", &cf.interface.r),
                    ("K", &cf.interface.k),
                    ("C_a", &cf.c_abstract),
                ] {
                    f.put(name, m);
                }
                "coupled"
            }
        };
        f.metadata.insert("feed".into(), feed.into());
        if let Some(z) = x_a0 {
            f.put("x_a0", &Mat::from_row_slice(1, z.len(), z.as_slice()));
        }
        if let Some(e) = epsilon {
            f.scalars.insert("epsilon".into(), e);
        }
        f
    }

    pub fn to_controller(&self) -> Result<ControllerFile, CliError> {
        self.expect_kind(Kind::Controller)?;
        if self.has("E_c") {
            let c = DaeController::new(self.get("E_c")?, self.get("A_c")?, self.get("B_c")?)?;
            return Ok(ControllerFile::Abstract(c));
        }
        let feed = match self.metadata.get("feed").map(String::as_str) {
            Some("signal") => {
                let s = self.get("S")?;
                SFeed::Signal(s.row_iter().map(|r| r.transpose()).collect())
            }
            Some("gain") => SFeed::StateGain(self.get("G")?),
            Some("coupled") => SFeed::Coupled(CoupledFeed {
                abstract_closed: self.get("A_cal")?,
                lift: self.get("T")?,
                interface: Interface {
                    p: self.get("P")?,
                    q: self.get("Q")?,
                    r: self.get("R")?,
                    k: self.get("K")?,
                },
                c_abstract: self.get("C_a")?,
            }),
            other => {
                return Err(CliError::Schema(format!(
                    "controller metadata \"feed\" must be signal, gain or coupled, got {other:?}"
                )))
            }
        };
        let controller = RefinedController {
            e_ctrl: self.get("E_ctrl")?,
            a_ctrl: self.get("A_ctrl")?,
            b_ctrl: self.get("B_ctrl")?,
            c_u: self.get("C_u")?,
            d_u: self.get("D_u")?,
            feed,
        };
        let n = controller.n();
        let rows = controller.p();
        if controller.a_ctrl.shape() != (rows, n) || controller.b_ctrl.shape() != (rows, rows) {
            return Err(CliError::Schema(
                "refined controller blocks are inconsistent".into(),
            ));
        }
        let x_a0 = if self.has("x_a0") {
            let z = self.get("x_a0")?;
            Some(Vector::from_iterator(z.len(), z.iter().copied()))
        } else {
            None
        };
        let epsilon = self.scalars.get("epsilon").copied();
        Ok(ControllerFile::Refined {
            controller,
            x_a0,
            epsilon,
        })
    }

    pub fn from_certificate(c: &RefinementCertificate) -> Self {
        let mut f = Self::new(Kind::Certificate);
        for (name, m) in [
            ("P", &c.p),
            ("Q", &c.q),
            ("R", &c.r),
            ("M", &c.stability.m),
            ("K", &c.stability.k),
        ] {
            f.put(name, m);
        }
        for (name, v) in [
            ("lambda", c.stability.lambda),
            ("gamma_coeff", c.gamma_coeff),
            ("v_max", c.v_max),
            ("epsilon", c.epsilon),
        ] {
            f.scalars.insert(name.into(), v);
        }
        f
    }

    pub fn to_certificate(&self) -> Result<RefinementCertificate, CliError> {
        self.expect_kind(Kind::Certificate)?;
        let stability = StabilityCert {
            m: self.get("M")?,
            k: self.get("K")?,
            lambda: self.scalar("lambda")?,
        };
        let mut c = RefinementCertificate::new(
            self.get("P")?,
            self.get("Q")?,
            self.get("R")?,
            stability,
            self.scalar("gamma_coeff")?,
        )?;
        c.v_max = self.scalars.get("v_max").copied().unwrap_or(0.0);
        c.epsilon = self.scalars.get("epsilon").copied().unwrap_or(0.0);
        Ok(c)
    }

    /// Relation file for exact refinement: either `H` (and optional `K`) or
    /// a full interface `P, Q, R, K`.
    pub fn to_relation(&self) -> Result<dae_refine::refinement::ExactRelation, CliError> {
        use dae_refine::refinement::ExactRelation;
        self.expect_kind(Kind::Certificate)?;
        if self.has("H") {
            let k = if self.has("K") { Some(self.get("K")?) } else { None };
            return Ok(ExactRelation::Map { h: self.get("H")?, k });
        }
        Ok(ExactRelation::Interface(Interface {
            p: self.get("P")?,
            q: self.get("Q")?,
            r: self.get("R")?,
            k: self.get("K")?,
        }))
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let f: SystemFile = serde_json::from_str(text).map_err(|e| CliError::Schema(e.to_string()))?;
        if f.schema != SCHEMA_VERSION {
            return Err(CliError::Schema(format!(
                "unsupported schema version {} (expected {SCHEMA_VERSION})",
                f.schema
            )));
        }
        Ok(f)
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_json(&self) -> String {
        to_json_string(self)
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        fs::write(path, self.to_json()).map_err(|e| CliError::io(path, e))
    }
}

/// Pretty JSON with arrays nested two or more deep kept on one line, so
/// each matrix row or state vector reads as a single line.
struct RowFormatter {
    pretty: PrettyFormatter<'static>,
    depth: usize,
}

impl Formatter for RowFormatter {
    fn begin_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.depth += 1;
        if self.depth >= 2 {
            w.write_all(b"[")
        } else {
            self.pretty.begin_array(w)
        }
    }

    fn end_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.depth -= 1;
        if self.depth >= 1 {
            w.write_all(b"]")
        } else {
            self.pretty.end_array(w)
        }
    }

    fn begin_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        if self.depth >= 2 {
            if first {
                Ok(())
            } else {
                w.write_all(b", ")
            }
        } else {
            self.pretty.begin_array_value(w, first)
        }
    }

    fn end_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        if self.depth >= 2 {
            Ok(())
        } else {
            self.pretty.end_array_value(w)
        }
    }

    fn begin_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.pretty.begin_object(w)
    }

    fn end_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.pretty.end_object(w)
    }

    fn begin_object_key<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.pretty.begin_object_key(w, first)
    }

    fn begin_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.pretty.begin_object_value(w)
    }

    fn end_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.pretty.end_object_value(w)
    }
}

pub fn to_json_string<T: Serialize + ?Sized>(value: &T) -> String {
    let mut buf = Vec::new();
    let fmt = RowFormatter {
        pretty: PrettyFormatter::new(),
        depth: 0,
    };
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, fmt);
    value.serialize(&mut ser).expect("JSON serialization into memory");
    String::from_utf8(buf).expect("JSON is UTF-8") + "\n"
}

#[cfg(test)]
mod tests {
    use super::*;

    fn index2_plant() -> DaeSystem {
        DaeSystem::new(
            Mat::from_row_slice(3, 3, &[1., 0., 0., 0., 0., 1., 0., 0., 0.]),
            Mat::from_diagonal(&Vector::from_vec(vec![-1., 1., 1.])),
            Mat::from_column_slice(3, 1, &[1., 1., 1.]),
            Mat::from_row_slice(1, 3, &[0.1, 0.2, 0.5]),
        )
        .unwrap()
    }

    #[test]
    fn dae_round_trip() {
        let sys = index2_plant()
            .with_initial_states(InitialStates::Points(vec![Vector::from_vec(vec![
                0.4, 0.2, -0.04,
            ])]))
            .unwrap();
        let back = SystemFile::parse(&SystemFile::from_dae(&sys).to_json())
            .unwrap()
            .to_dae()
            .unwrap();
        assert_eq!(back, sys);
    }

    #[test]
    fn empty_matrices_keep_their_shape() {
        let c = DaeController::empty(3, 1);
        let text = SystemFile::from_abstract_controller(&c).to_json();
        match SystemFile::parse(&text).unwrap().to_controller().unwrap() {
            ControllerFile::Abstract(back) => assert_eq!(back, c),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_input() {
        let bad = r#"{"schema":1,"kind":"dae","matrices":{"E":[[1,2],[3]]}}"#;
        assert!(SystemFile::parse(bad).unwrap().to_dae().is_err());
        assert!(SystemFile::parse(r#"{"schema":2,"kind":"dae","matrices":{}}"#).is_err());
        assert!(SystemFile::parse(r#"{"schema":1,"kind":"plant","matrices":{}}"#).is_err());
        let wrong = SystemFile::from_dae(&index2_plant());
        assert!(wrong.to_dv().is_err());
    }

    #[test]
    fn certificate_and_refined_controller_round_trip() {
        let stability = StabilityCert {
            m: Mat::identity(3, 3),
            k: Mat::from_row_slice(1, 3, &[0.1, -0.8, 0.9]),
            lambda: 0.85,
        };
        let mut cert = RefinementCertificate::new(
            Mat::from_fn(3, 2, |i, j| (i + 2 * j) as f64 / 3.0),
            Mat::from_row_slice(1, 2, &[-0.04, -0.46]),
            Mat::from_element(1, 1, 1.0 / 3.0),
            stability,
            0.1247,
        )
        .unwrap();
        cert.v_max = 0.3;
        cert.epsilon = 0.0374;
        let back = SystemFile::parse(&SystemFile::from_certificate(&cert).to_json())
            .unwrap()
            .to_certificate()
            .unwrap();
        assert_eq!(back, cert);

        let controller = RefinedController {
            e_ctrl: Mat::from_row_slice(1, 3, &[0., -1., 0.]),
            a_ctrl: Mat::from_row_slice(1, 3, &[0., 0., 0.]),
            b_ctrl: Mat::from_element(1, 1, 1.0),
            c_u: Mat::from_row_slice(1, 3, &[0., 0., -1.]),
            d_u: Mat::zeros(1, 1),
            feed: SFeed::Coupled(CoupledFeed {
                abstract_closed: Mat::from_fn(2, 2, |i, j| 0.1 * (i as f64) - 0.2 * (j as f64)),
                lift: Mat::from_row_slice(1, 2, &[0.5, -0.25]),
                interface: cert.interface(),
                c_abstract: Mat::from_row_slice(1, 2, &[0.9, -0.7]),
            }),
        };
        let z0 = Vector::from_vec(vec![-0.125, 0.171]);
        let text = SystemFile::from_refined(&controller, Some(&z0), Some(0.0273)).to_json();
        match SystemFile::parse(&text).unwrap().to_controller().unwrap() {
            ControllerFile::Refined {
                controller: c,
                x_a0,
                epsilon,
            } => {
                assert_eq!(c, controller);
                assert_eq!(x_a0.as_ref(), Some(&z0));
                assert_eq!(epsilon, Some(0.0273));
            }
            other => panic!("unexpected {other:?}"),
        }
        for feed in [
            SFeed::StateGain(Mat::from_row_slice(1, 3, &[1.5, -2.4, 4.])),
            SFeed::Signal(vec![z0.rows(0, 1).into_owned(); 4]),
        ] {
            let c = RefinedController {
                feed,
                ..controller.clone()
            };
            match SystemFile::parse(&SystemFile::from_refined(&c, None, None).to_json())
                .unwrap()
                .to_controller()
                .unwrap()
            {
                ControllerFile::Refined { controller: back, .. } => assert_eq!(back, c),
                other => panic!("unexpected {other:?}"),
            }
        }
    }
}
