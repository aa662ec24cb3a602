//! Benchmark definitions, configuration parsing and the run driver with
//! CSV/VTK reporting.

pub mod bands;
pub mod metrics;
pub mod problems;

use std::f64::consts::PI;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::diffusion::{SourceTerm, SpaceTimeFn, ThetaSystem};
use crate::error::{Error, Result};
use crate::fem::vtk::{write_vtk, VtkData};
use crate::fem::{FunctionSpace, ScalarField, VectorField};
use crate::mesh::{BlendingMap, BoundaryTag, CoarseMesh, MeshHierarchy};
use crate::partition::partition_mesh;
use crate::scheme::{
    ad_step, ads_step, cfl_dt, initial_state, pc_step, Counters, StepControl, StepPolicy, SteadyVelocity,
    TransportProblem, VelocitySource,
};
use crate::stokes::{BoussinesqForce, Gravity, StokesSystem, VelocityBC};
use crate::transport::{LookBack, LookBackBuffer, RKScheme, Tracer, VelocityPair};
use crate::Point;

pub use bands::{check_bands, BandCheck, EXPECTED_BANDS};
pub use metrics::{compute_metrics, mass_of, nusselt, u_rms, MetricRow};
pub use problems::RotationBodies;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchmarkName {
    Rotation2d,
    Swirl3d,
    AnnulusAd,
    Blankenbach,
    DemoPipe,
}

impl BenchmarkName {
    pub fn as_str(&self) -> &'static str {
        match self {
            BenchmarkName::Rotation2d => "rotation2d",
            BenchmarkName::Swirl3d => "swirl3d",
            BenchmarkName::AnnulusAd => "annulus_ad",
            BenchmarkName::Blankenbach => "blankenbach",
            BenchmarkName::DemoPipe => "demo_pipe",
        }
    }
}

impl fmt::Display for BenchmarkName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BenchmarkName {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.trim().to_string()))
            .map_err(|_| Error::Parse(format!("unknown benchmark `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeKind {
    /// advection, then one diffusion step
    Ad,
    /// Strang splitting
    Ads,
    /// predictor-corrector coupling with Stokes
    Pc,
}

/// A fully resolved benchmark configuration.
///
/// `cells` is the coarse mesh resolution: `[nx, ny]` for the rectangles,
/// `[n0, n1, n2]` for the boxes and `[sectors, rings]` for the annulus.
/// Time runs from the benchmark's start time (zero except for the annulus)
/// to `t_end`; a fixed step is given by `tau` or `steps`, a CFL-driven one
/// by `cfl` (with `tau` as the fallback when the velocity vanishes).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchmarkSpec {
    pub name: BenchmarkName,
    pub level: usize,
    pub cells: Vec<usize>,
    pub degree: usize,
    pub tau: Option<f64>,
    pub steps: Option<usize>,
    pub cfl: Option<f64>,
    #[serde(serialize_with = "serialize_display")]
    pub b: LookBack,
    pub kappa: f64,
    pub theta: f64,
    pub ra: f64,
    pub t_end: f64,
    pub ranks: usize,
    pub rk: String,
    pub scheme: SchemeKind,
    pub bodies: RotationBodies,
    /// Blankenbach only: heated from below, no internal heating.
    pub conduction: bool,
    pub csv: Option<PathBuf>,
    pub vtk_dir: Option<PathBuf>,
    pub vtk_every: usize,
}

fn serialize_display<T: fmt::Display, S: serde::Serializer>(v: &T, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_str(v)
}

#[derive(Deserialize)]
#[serde(untagged)]
enum LookBackInput {
    Count(usize),
    Text(String),
}

/// Spec document as written by the user; absent fields take the preset
/// value of the named benchmark.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SpecInput {
    name: BenchmarkName,
    level: Option<usize>,
    cells: Option<Vec<usize>>,
    degree: Option<usize>,
    tau: Option<f64>,
    steps: Option<usize>,
    cfl: Option<f64>,
    b: Option<LookBackInput>,
    kappa: Option<f64>,
    theta: Option<f64>,
    ra: Option<f64>,
    t_end: Option<f64>,
    ranks: Option<usize>,
    rk: Option<String>,
    scheme: Option<SchemeKind>,
    bodies: Option<RotationBodies>,
    conduction: Option<bool>,
    csv: Option<PathBuf>,
    vtk_dir: Option<PathBuf>,
    vtk_every: Option<usize>,
}

/// Parses `key = value` lines into a JSON object. Values that look like
/// numbers or booleans become such, comma-separated values become arrays.
fn key_value_to_json(text: &str) -> Result<serde_json::Value> {
    fn scalar(v: &str) -> serde_json::Value {
        if let Ok(i) = v.parse::<i64>() {
            return i.into();
        }
        match v.parse::<f64>() {
            // "inf" must stay text: it is a look-back distance, not a number
            Ok(x) if x.is_finite() => return x.into(),
            _ => {}
        }
        match v {
            "true" => true.into(),
            "false" => false.into(),
            _ => v.trim_matches('"').into(),
        }
    }
    let mut map = serde_json::Map::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .or_else(|| line.split_once(':'))
            .ok_or_else(|| Error::Parse(format!("line {}: expected `key = value`", k + 1)))?;
        let (key, value) = (key.trim(), value.trim());
        let v = if value.contains(',') {
            serde_json::Value::Array(value.split(',').map(|s| scalar(s.trim())).collect())
        } else {
            scalar(value)
        };
        if map.insert(key.to_string(), v).is_some() {
            return Err(Error::Parse(format!("line {}: duplicate key `{key}`", k + 1)));
        }
    }
    Ok(serde_json::Value::Object(map))
}

impl BenchmarkSpec {
    /// The published configuration of each benchmark.
    pub fn preset(name: BenchmarkName) -> Self {
        let base = Self {
            name,
            level: 5,
            cells: vec![1, 1],
            degree: 1,
            tau: None,
            steps: None,
            cfl: None,
            b: LookBack::Infinite,
            kappa: 0.0,
            theta: 0.5,
            ra: 0.0,
            t_end: 1.0,
            ranks: 1,
            rk: "rk4".into(),
            scheme: SchemeKind::Ad,
            bodies: RotationBodies::All,
            conduction: false,
            csv: None,
            vtk_dir: None,
            vtk_every: 0,
        };
        match name {
            BenchmarkName::Rotation2d => Self { level: 7, steps: Some(6283), t_end: 2.0 * PI, ..base },
            BenchmarkName::Swirl3d => Self { cells: vec![1, 1, 1], tau: Some(0.025), t_end: 1.5, ..base },
            BenchmarkName::AnnulusAd => Self {
                cells: vec![6, 2],
                degree: 2,
                steps: Some(63),
                b: LookBack::Steps(1),
                kappa: 1e-5,
                theta: 1.0,
                t_end: problems::annulus_t0(1e-5) + 2.0 * PI,
                ..base
            },
            BenchmarkName::Blankenbach => Self {
                level: 2,
                cells: vec![6, 4],
                degree: 2,
                cfl: Some(0.5),
                b: LookBack::Steps(1),
                kappa: 1.0,
                ra: 216_000.0,
                t_end: 3.0,
                scheme: SchemeKind::Pc,
                ..base
            },
            BenchmarkName::DemoPipe => Self {
                level: 3,
                cells: vec![8, 1, 1],
                degree: 2,
                tau: Some(0.1),
                b: LookBack::Steps(1),
                t_end: 0.1,
                ..base
            },
        }
    }

    /// Reads a JSON document or `key = value` lines.
    pub fn parse(text: &str) -> Result<Self> {
        let value = if text.trim_start().starts_with('{') { serde_json::from_str(text)? } else { key_value_to_json(text)? };
        let input: SpecInput = serde_json::from_value(value)?;
        Self::from_input(input)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    fn from_input(i: SpecInput) -> Result<Self> {
        let mut s = Self::preset(i.name);
        if let Some(d) = i.degree {
            s.degree = d;
            if s.name == BenchmarkName::Rotation2d && i.level.is_none() {
                // same 16641 DoFs for both degrees
                s.level = if d == 2 { 6 } else { 7 };
            }
        }
        if let Some(c) = i.conduction {
            s.conduction = c;
            if c {
                s.ra = 0.0;
                s.cfl = None;
                s.tau = Some(0.01);
            }
        }
        if i.tau.is_some() || i.steps.is_some() || i.cfl.is_some() {
            s.tau = i.tau;
            s.steps = i.steps;
            s.cfl = i.cfl;
        }
        if let Some(k) = i.kappa {
            s.kappa = k;
            if s.name == BenchmarkName::AnnulusAd && i.t_end.is_none() {
                s.t_end = problems::annulus_t0(k) + 2.0 * PI;
            }
        }
        s.b = match i.b {
            None => s.b,
            Some(LookBackInput::Count(b)) => LookBack::from_str(&b.to_string())?,
            Some(LookBackInput::Text(t)) => LookBack::from_str(&t)?,
        };
        s.level = i.level.unwrap_or(s.level);
        s.cells = i.cells.unwrap_or(s.cells);
        s.theta = i.theta.unwrap_or(s.theta);
        s.ra = i.ra.unwrap_or(s.ra);
        s.t_end = i.t_end.unwrap_or(s.t_end);
        s.ranks = i.ranks.unwrap_or(s.ranks);
        s.rk = i.rk.unwrap_or(s.rk);
        s.scheme = i.scheme.unwrap_or(s.scheme);
        s.bodies = i.bodies.unwrap_or(s.bodies);
        s.csv = i.csv.or(s.csv);
        s.vtk_dir = i.vtk_dir.or(s.vtk_dir);
        s.vtk_every = i.vtk_every.unwrap_or(s.vtk_every);
        s.validate()?;
        Ok(s)
    }

    pub fn t_start(&self) -> f64 {
        match self.name {
            BenchmarkName::AnnulusAd => problems::annulus_t0(self.kappa),
            _ => 0.0,
        }
    }

    /// Number of steps of a fixed-step run. A given `tau` is rounded to the
    /// nearest step that divides the time interval.
    pub fn fixed_steps(&self) -> Option<usize> {
        if self.cfl.is_some() {
            return None;
        }
        let span = self.t_end - self.t_start();
        self.steps.or_else(|| self.tau.map(|tau| ((span / tau).round() as usize).max(1)))
    }

    fn diffusion_active(&self) -> bool {
        self.kappa != 0.0 || (self.name == BenchmarkName::Blankenbach && !self.conduction)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(format!("{}: {msg}", self.name)));
        if !(1..=2).contains(&self.degree) {
            return bad(format!("degree must be 1 or 2, got {}", self.degree));
        }
        if self.level > 10 {
            return bad(format!("refinement level {} is too deep", self.level));
        }
        let want_cells = match self.name {
            BenchmarkName::Swirl3d | BenchmarkName::DemoPipe => 3,
            _ => 2,
        };
        if self.cells.len() != want_cells || self.cells.contains(&0) {
            return bad(format!("cells needs {want_cells} positive entries, got {:?}", self.cells));
        }
        if self.name == BenchmarkName::AnnulusAd && self.cells[0] < 3 {
            return bad("the annulus needs at least 3 sectors".into());
        }
        if self.ranks == 0 {
            return bad("ranks must be positive".into());
        }
        RKScheme::by_name(&self.rk)?;
        if !(self.t_end > self.t_start()) {
            return bad(format!("t_end {} is not after the start time {}", self.t_end, self.t_start()));
        }
        match (self.tau, self.steps, self.cfl) {
            (_, Some(_), Some(_)) => return bad("give either steps or cfl, not both".into()),
            (Some(_), Some(_), None) => return bad("give either tau or steps, not both".into()),
            (None, None, None) => return bad("one of tau, steps or cfl is required".into()),
            _ => {}
        }
        if self.tau.is_some_and(|t| !(t > 0.0)) || self.cfl.is_some_and(|c| !(c > 0.0)) || self.steps == Some(0) {
            return bad("time step parameters must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.theta) {
            return bad(format!("theta must lie in [0, 1], got {}", self.theta));
        }
        if self.kappa < 0.0 {
            return bad("kappa must be non-negative".into());
        }
        match self.name {
            BenchmarkName::Rotation2d | BenchmarkName::Swirl3d | BenchmarkName::DemoPipe if self.kappa != 0.0 => {
                return bad("pure advection benchmark needs kappa = 0".into())
            }
            BenchmarkName::AnnulusAd if self.kappa == 0.0 => return bad("the annulus solution needs kappa > 0".into()),
            BenchmarkName::Blankenbach if self.scheme != SchemeKind::Pc => {
                return bad("the convection benchmark runs the predictor-corrector scheme".into())
            }
            BenchmarkName::Blankenbach if self.degree != 2 => return bad("Taylor-Hood needs degree 2".into()),
            BenchmarkName::Blankenbach if self.kappa == 0.0 => return bad("the convection benchmark needs kappa > 0".into()),
            _ => {}
        }
        if self.scheme == SchemeKind::Pc && self.name != BenchmarkName::Blankenbach {
            return bad("the predictor-corrector scheme needs a Stokes flow".into());
        }
        if self.diffusion_active() && self.b != LookBack::Steps(1) {
            return bad(format!("diffusion requires b = 1, got b = {}", self.b));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchmarkReport {
    pub spec: BenchmarkSpec,
    /// Written to the CSV file; left out of the JSON summary.
    #[serde(skip)]
    pub rows: Vec<MetricRow>,
    #[serde(skip)]
    pub counters: Counters,
    pub num_dofs: usize,
    pub h_min: f64,
    pub wall_seconds: f64,
    /// Time spent inside the time steps, without metrics and output.
    pub step_seconds: f64,
    pub diffusion_iterations: usize,
    pub lost_particles: u64,
    pub band_checks: Vec<BandCheck>,
    pub vtk_files: Vec<PathBuf>,
}

impl BenchmarkReport {
    pub fn final_row(&self) -> &MetricRow {
        self.rows.last().expect("a report has at least the initial row")
    }

    /// Particle steps per second of wall time spent stepping.
    pub fn throughput(&self) -> f64 {
        let steps = self.rows.len().saturating_sub(1) as f64;
        self.num_dofs as f64 * steps / self.step_seconds.max(1e-12)
    }

    pub fn bands_pass(&self) -> bool {
        self.band_checks.iter().all(|c| c.pass)
    }

    pub fn summary(&self) -> String {
        use std::fmt::Write as _;
        let r = self.final_row();
        let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.6e}"));
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{}: {} DoFs, h_min {:.4e}, {} steps to t = {:.6}, {:.2} s",
            self.spec.name,
            self.num_dofs,
            self.h_min,
            self.rows.len() - 1,
            r.t,
            self.wall_seconds
        );
        let _ = writeln!(
            s,
            "  h0_error {}  var {:.6}  e_peak {}  delta_m {:.6e}  u_rms {}  nu {}",
            opt(r.h0_error),
            r.var,
            opt(r.e_peak),
            r.delta_m,
            opt(r.u_rms),
            opt(r.nu)
        );
        let t = &self.counters.transport;
        let _ = writeln!(
            s,
            "  migrated {}  clamps {}  lost particles {}  throughput {:.3e} particle-steps/s",
            t.particles_migrated,
            t.clamps,
            self.lost_particles,
            self.throughput()
        );
        for c in &self.band_checks {
            let _ = writeln!(
                s,
                "  band {} [{:?}]: {} vs {} -> {}",
                c.id,
                c.origin,
                opt(c.value),
                c.band,
                if c.pass { "ok" } else { "outside" }
            );
        }
        s
    }
}

/// Builds the refined mesh and the scalar space of a benchmark.
pub fn build_space(spec: &BenchmarkSpec) -> Result<Arc<FunctionSpace>> {
    let c = &spec.cells;
    let (coarse, blending) = match spec.name {
        BenchmarkName::Rotation2d => {
            (CoarseMesh::rectangle(1.0, 1.0, c[0], c[1], [BoundaryTag::Neumann; 4]), BlendingMap::Identity)
        }
        BenchmarkName::Swirl3d => {
            (CoarseMesh::cuboid([1.0; 3], [c[0], c[1], c[2]], BoundaryTag::Neumann), BlendingMap::Identity)
        }
        BenchmarkName::DemoPipe => (
            CoarseMesh::cuboid([c[0] as f64, c[1] as f64, c[2] as f64], [c[0], c[1], c[2]], BoundaryTag::Neumann),
            BlendingMap::Identity,
        ),
        BenchmarkName::AnnulusAd => (
            CoarseMesh::annulus(0.5, 1.5, c[0], c[1], BoundaryTag::Neumann),
            BlendingMap::Annulus { r_min: 0.5, r_max: 1.5, sectors: c[0] },
        ),
        BenchmarkName::Blankenbach => {
            let bottom = if spec.conduction { BoundaryTag::Dirichlet } else { BoundaryTag::NoSlip };
            let tags = [bottom, BoundaryTag::FreeSlip, BoundaryTag::Dirichlet, BoundaryTag::FreeSlip];
            (CoarseMesh::rectangle(1.5, 1.0, c[0], c[1], tags), BlendingMap::Identity)
        }
    };
    let mesh = MeshHierarchy::refine(coarse, spec.level, blending)?;
    Ok(Arc::new(FunctionSpace::new(Arc::new(mesh), spec.degree)?))
}

const PIPE_VELOCITY: Point = [1.0, 0.0, 0.0];

fn pipe_centre(t: f64) -> Point {
    [2.0 + t * PIPE_VELOCITY[0], 0.5, 0.5]
}

/// Initial field, exact solution at `t` where known, and velocity source.
struct Problem {
    c0: ScalarField,
    exact: Box<dyn Fn(f64) -> Option<ScalarField>>,
    velocity: Box<dyn VelocitySource>,
}

fn transport_problem(spec: &BenchmarkSpec, space: &Arc<FunctionSpace>) -> Problem {
    let t0 = spec.t_start();
    let s = space.clone();
    match spec.name {
        BenchmarkName::Rotation2d => {
            let bodies = spec.bodies;
            let u = VectorField::interpolate(s.clone(), problems::rotation_velocity, t0);
            Problem {
                c0: ScalarField::interpolate(s.clone(), |p| bodies.eval(p), t0),
                exact: Box::new(move |t| Some(ScalarField::interpolate(s.clone(), |p| bodies.exact(p, t), t))),
                velocity: Box::new(SteadyVelocity(Arc::new(u))),
            }
        }
        BenchmarkName::Swirl3d => {
            let c0 = ScalarField::interpolate(s.clone(), problems::swirl_initial, t0);
            let (initial, t_end) = (c0.clone(), spec.t_end);
            Problem {
                c0,
                exact: Box::new(move |t| {
                    // the deformation is undone at the end of the period
                    (t == 0.0 || (t - t_end).abs() <= 1e-12 * t_end).then(|| ScalarField { time: t, ..initial.clone() })
                }),
                velocity: Box::new(problems::SwirlVelocity::new(s.clone(), spec.t_end)),
            }
        }
        BenchmarkName::AnnulusAd => {
            let kappa = spec.kappa;
            let u = VectorField::interpolate(s.clone(), problems::annulus_velocity, t0);
            Problem {
                c0: ScalarField::interpolate(s.clone(), |p| problems::annulus_exact(p, t0, kappa), t0),
                exact: Box::new(move |t| {
                    Some(ScalarField::interpolate(s.clone(), |p| problems::annulus_exact(p, t, kappa), t))
                }),
                velocity: Box::new(SteadyVelocity(Arc::new(u))),
            }
        }
        BenchmarkName::DemoPipe => {
            let u = VectorField::interpolate(s.clone(), |_| PIPE_VELOCITY, t0);
            Problem {
                c0: ScalarField::interpolate(s.clone(), |p| problems::pipe_blob(p, pipe_centre(t0), 0.3), t0),
                exact: Box::new(move |t| {
                    Some(ScalarField::interpolate(s.clone(), |p| problems::pipe_blob(p, pipe_centre(t), 0.3), t))
                }),
                velocity: Box::new(SteadyVelocity(Arc::new(u))),
            }
        }
        BenchmarkName::Blankenbach => unreachable!("coupled benchmark has no prescribed velocity"),
    }
}

/// CSV and VTK sinks. Every row is flushed as it is written so a failed
/// run leaves the rows computed so far on disk.
struct Recorder {
    csv: Option<csv::Writer<fs::File>>,
    vtk_dir: Option<PathBuf>,
    vtk_every: usize,
    name: BenchmarkName,
    rows: Vec<MetricRow>,
    vtk_files: Vec<PathBuf>,
}

impl Recorder {
    fn new(spec: &BenchmarkSpec) -> Result<Self> {
        let csv = match &spec.csv {
            Some(p) => {
                if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                    fs::create_dir_all(dir)?;
                }
                Some(csv::Writer::from_path(p)?)
            }
            None => None,
        };
        if let Some(d) = &spec.vtk_dir {
            fs::create_dir_all(d)?;
        }
        Ok(Self {
            csv,
            vtk_dir: spec.vtk_dir.clone(),
            vtk_every: spec.vtk_every,
            name: spec.name,
            rows: Vec::new(),
            vtk_files: Vec::new(),
        })
    }

    fn row(&mut self, row: MetricRow) -> Result<()> {
        if let Some(w) = &mut self.csv {
            w.serialize(&row)?;
            w.flush()?;
        }
        self.rows.push(row);
        Ok(())
    }

    fn vtk(&mut self, step: usize, last: bool, space: &FunctionSpace, data: &[VtkData]) -> Result<()> {
        let Some(dir) = &self.vtk_dir else { return Ok(()) };
        if self.vtk_every == 0 || !(step % self.vtk_every == 0 || last) {
            return Ok(());
        }
        let path = dir.join(format!("{}_{step:06}.vtk", self.name));
        write_vtk(&path, space, data)?;
        self.vtk_files.push(path);
        Ok(())
    }
}

/// Step sizes of a fixed-step run: `n` equal steps, the last one ending
/// exactly at `t_end`.
fn step_times(t0: f64, t_end: f64, n: usize) -> impl Iterator<Item = (f64, f64)> {
    let tau = (t_end - t0) / n as f64;
    let at = move |k: usize| if k == n { t_end } else { t0 + k as f64 * tau };
    (0..n).map(move |k| (at(k), at(k + 1)))
}

fn transport_context(spec: &BenchmarkSpec, space: &Arc<FunctionSpace>, c0: &ScalarField) -> Result<TransportProblem> {
    let layout = partition_mesh(space.mesh(), spec.ranks)?;
    Ok(TransportProblem {
        tracer: Tracer { space: space.clone(), layout, rk: RKScheme::by_name(&spec.rk)? },
        buffer: LookBackBuffer::new(spec.b, c0.clone(), None)?,
        diffusion: ThetaSystem::new(space.clone(), spec.kappa, spec.theta)?,
        source: SourceTerm::Zero,
        bc: None,
        counters: Counters::default(),
        diffusion_iterations: 0,
    })
}

/// Runs a benchmark to `t_end`, writing rows and snapshots as it goes.
pub fn run(spec: &BenchmarkSpec) -> Result<BenchmarkReport> {
    spec.validate()?;
    let wall = Instant::now();
    let space = build_space(spec)?;
    log::info!("{}: {} DoFs, level {}, P{}", spec.name, space.num_dofs(), spec.level, spec.degree);
    let mut rec = Recorder::new(spec)?;
    let (prob, step_seconds) = match spec.name {
        BenchmarkName::Blankenbach => run_coupled(spec, &space, &mut rec)?,
        _ => run_transport(spec, &space, &mut rec)?,
    };
    let last = rec.rows.last().cloned().unwrap_or_default();
    let band_checks = check_bands(spec, &last);
    Ok(BenchmarkReport {
        spec: spec.clone(),
        rows: rec.rows,
        counters: prob.counters,
        num_dofs: space.num_dofs(),
        h_min: space.mesh().min_edge_length(),
        wall_seconds: wall.elapsed().as_secs_f64(),
        step_seconds,
        diffusion_iterations: prob.diffusion_iterations,
        lost_particles: prob.counters.transport.lost_particles,
        band_checks,
        vtk_files: rec.vtk_files,
    })
}

fn run_transport(spec: &BenchmarkSpec, space: &Arc<FunctionSpace>, rec: &mut Recorder) -> Result<(TransportProblem, f64)> {
    let mut problem = transport_problem(spec, space);
    let mut prob = transport_context(spec, space, &problem.c0)?;
    let m0 = mass_of(&problem.c0, &prob.diffusion.mass);
    let n = spec.fixed_steps().ok_or_else(|| Error::Config("pure transport runs use a fixed step".into()))?;
    let t0 = spec.t_start();

    let mut c = problem.c0.clone();
    let exact = (problem.exact)(t0);
    rec.row(compute_metrics(&c, exact.as_ref(), &prob.diffusion.mass, m0))?;
    rec.vtk(0, false, space, &[VtkData::Scalar("c", &c)])?;

    let mut step_seconds = 0.0;
    for (k, (t_old, t_new)) in step_times(t0, spec.t_end, n).enumerate() {
        let before = prob.counters.transport;
        let start = Instant::now();
        let vp = VelocityPair::new(problem.velocity.velocity(t_old)?, problem.velocity.velocity(t_new)?, t_old, t_new)?;
        c = match spec.scheme {
            SchemeKind::Ad => ad_step(&mut prob, vp)?,
            SchemeKind::Ads => ads_step(&mut prob, &c, vp)?,
            SchemeKind::Pc => unreachable!("rejected by validation"),
        };
        step_seconds += start.elapsed().as_secs_f64();

        let exact = (problem.exact)(t_new);
        let mut row = compute_metrics(&c, exact.as_ref(), &prob.diffusion.mass, m0);
        row.step = k + 1;
        row.tau = t_new - t_old;
        row.particles_migrated = prob.counters.transport.particles_migrated - before.particles_migrated;
        row.clamps = prob.counters.transport.clamps - before.clamps;
        rec.row(row)?;
        let mut data = vec![VtkData::Scalar("c", &c)];
        if let Some(e) = &exact {
            data.push(VtkData::Scalar("exact", e));
        }
        rec.vtk(k + 1, k + 1 == n, space, &data)?;
    }
    Ok((prob, step_seconds))
}

fn run_coupled(spec: &BenchmarkSpec, space: &Arc<FunctionSpace>, rec: &mut Recorder) -> Result<(TransportProblem, f64)> {
    let (length, height) = (1.5, 1.0);
    let c0 = ScalarField::interpolate(space.clone(), |p| problems::blankenbach_initial(p, length, height), 0.0);
    let mut prob = transport_context(spec, space, &c0)?;
    let bc: SpaceTimeFn = if spec.conduction {
        prob.source = SourceTerm::Zero;
        Arc::new(move |p: &Point, _t: f64| 1.0 - p[1] / height)
    } else {
        prob.source = SourceTerm::Constant(1.0);
        Arc::new(|_: &Point, _: f64| 0.0)
    };
    prob.bc = Some(bc);
    let mut stokes = StokesSystem::new(space.clone(), 1.0, VelocityBC::default())?;
    let force = BoussinesqForce::new(spec.ra, Gravity::Constant([0.0, 1.0, 0.0]))?;
    let m0 = mass_of(&c0, &prob.diffusion.mass);

    let start = Instant::now();
    let mut state = initial_state(&mut stokes, &force, c0)?;
    prob.counters.stokes_solves += 1;
    let mut step_seconds = start.elapsed().as_secs_f64();

    let diagnostics = |c: &ScalarField, u: &VectorField, m: &crate::fem::CsrMatrix| -> Result<MetricRow> {
        let mut row = compute_metrics(c, None, m, m0);
        row.u_rms = Some(u_rms(u)?);
        row.nu = nusselt(c, height).ok();
        Ok(row)
    };
    rec.row(diagnostics(&state.c, &state.u, &prob.diffusion.mass)?)?;
    rec.vtk(0, false, space, &[VtkData::Scalar("c", &state.c), VtkData::Vector("u", &state.u)])?;

    let policy = match (spec.cfl, spec.fixed_steps()) {
        (Some(cfl), _) => StepPolicy::Cfl { cfl, fallback: spec.tau.unwrap_or(spec.t_end / 100.0) },
        (None, Some(n)) => StepPolicy::Fixed(spec.t_end / n as f64),
        (None, None) => unreachable!("rejected by validation"),
    };
    let ctrl = StepControl { policy, h_min: space.mesh().min_edge_length() };
    let eps = 1e-12 * spec.t_end;
    while state.t < spec.t_end - eps {
        let before = prob.counters.transport;
        let mut tau = cfl_dt(&state.u, &ctrl);
        if state.t + tau > spec.t_end - eps {
            tau = spec.t_end - state.t;
        }
        let start = Instant::now();
        state = pc_step(&mut prob, &mut stokes, &force, &state, tau)?;
        step_seconds += start.elapsed().as_secs_f64();

        let mut row = diagnostics(&state.c, &state.u, &prob.diffusion.mass)?;
        row.step = state.n;
        row.tau = tau;
        row.particles_migrated = prob.counters.transport.particles_migrated - before.particles_migrated;
        row.clamps = prob.counters.transport.clamps - before.clamps;
        rec.row(row)?;
        let last = state.t >= spec.t_end - eps;
        rec.vtk(state.n, last, space, &[VtkData::Scalar("c", &state.c), VtkData::Vector("u", &state.u)])?;
    }
    Ok((prob, step_seconds))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for name in [
            BenchmarkName::Rotation2d,
            BenchmarkName::Swirl3d,
            BenchmarkName::AnnulusAd,
            BenchmarkName::Blankenbach,
            BenchmarkName::DemoPipe,
        ] {
            let s = BenchmarkSpec::preset(name);
            s.validate().unwrap();
            assert_eq!(name.as_str().parse::<BenchmarkName>().unwrap(), name);
        }
        assert_eq!(BenchmarkSpec::preset(BenchmarkName::Swirl3d).fixed_steps(), Some(60));
        assert_eq!(BenchmarkSpec::preset(BenchmarkName::AnnulusAd).fixed_steps(), Some(63));
        assert_eq!(BenchmarkSpec::preset(BenchmarkName::Blankenbach).fixed_steps(), None);
    }

    #[test]
    fn key_value_and_json_agree() {
        let kv = "# hill only\nname = rotation2d\ndegree = 2\nb = 1\ntau = 1.01e-1\nbodies = hill\n";
        let js = r#"{"name": "rotation2d", "degree": 2, "b": 1, "tau": 0.101, "bodies": "hill"}"#;
        let a = BenchmarkSpec::parse(kv).unwrap();
        let b = BenchmarkSpec::parse(js).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.level, 6);
        assert_eq!(a.steps, None);
        assert_eq!(a.fixed_steps(), Some(62));
        let c = BenchmarkSpec::parse("name = swirl3d\nb = inf\ncells = 1, 1, 1\n").unwrap();
        assert_eq!(c.b, LookBack::Infinite);
        let d = BenchmarkSpec::parse("name = demo_pipe\nb = inf\n").unwrap();
        assert_eq!(d.b, LookBack::Infinite);
        let k = BenchmarkSpec::parse("name = annulus_ad\nkappa = 1e-3\n").unwrap();
        assert!((k.t_end - (2.0 * PI + 2.0 * PI)).abs() < 1e-12);
    }

    #[test]
    fn invalid_combinations_rejected() {
        for text in [
            "name = rotation2d\nkappa = 0.1\n",
            "name = annulus_ad\nb = 2\n",
            "name = annulus_ad\nkappa = 0\n",
            "name = swirl3d\ncells = 1, 1\n",
            "name = rotation2d\nsteps = 10\ncfl = 1\n",
            "name = blankenbach\nscheme = ads\n",
            "name = rotation2d\nscheme = pc\n",
            "name = rotation2d\nlevle = 3\n",
            "name = rotation2d\ndegree = 3\n",
            "name = nope\n",
            "name rotation2d\n",
        ] {
            assert!(BenchmarkSpec::parse(text).is_err(), "accepted: {text}");
        }
    }

    #[test]
    fn step_times_hit_end() {
        let ts: Vec<_> = step_times(1.0, 2.0, 3).collect();
        assert_eq!(ts.len(), 3);
        assert_eq!(ts[0].0, 1.0);
        assert_eq!(ts[2].1, 2.0);
        for w in ts.windows(2) {
            assert_eq!(w[0].1, w[1].0);
        }
    }

    #[test]
    fn small_rotation_run_writes_csv() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = BenchmarkSpec::preset(BenchmarkName::Rotation2d);
        s.level = 4;
        s.steps = Some(20);
        s.csv = Some(dir.path().join("out/rot.csv"));
        s.vtk_dir = Some(dir.path().join("vtk"));
        s.vtk_every = 10;
        let r = run(&s).unwrap();
        assert_eq!(r.rows.len(), 21);
        assert!(r.band_checks.is_empty());
        assert_eq!(r.vtk_files.len(), 3);
        let text = fs::read_to_string(dir.path().join("out/rot.csv")).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "step,t,tau,h0_error,var,e_peak,delta_m,u_rms,nu,particles_migrated,clamps"
        );
        assert_eq!(lines.count(), 21);
        let last = r.final_row();
        assert!((last.t - 2.0 * PI).abs() < 1e-12);
        assert!(last.h0_error.unwrap() < 1e-3, "{:?}", last);
        assert!(last.u_rms.is_none() && last.nu.is_none());
    }

    #[test]
    fn small_coupled_run_reports_diagnostics() {
        let mut s = BenchmarkSpec::preset(BenchmarkName::Blankenbach);
        s.level = 0;
        s.ra = 1e4;
        s.t_end = 0.01;
        let r = run(&s).unwrap();
        assert!(r.rows.len() >= 2);
        let last = r.final_row();
        assert!((last.t - 0.01).abs() < 1e-14);
        assert!(last.u_rms.unwrap().is_finite() && last.nu.unwrap().is_finite());
        assert_eq!(r.counters.stokes_solves as usize, 1 + 2 * (r.rows.len() - 1));
    }
}
