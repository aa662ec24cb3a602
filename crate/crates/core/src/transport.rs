//! The Lagrangian step: tracer particles created at the DoFs, explicit RK
//! backtracking through a time-interpolated velocity, look-back buffering
//! and evaluation of the transported field at the departure points.

use std::collections::VecDeque;
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fem::{FunctionSpace, PointLocation, ScalarField, VectorField};
use crate::geom::{self, Point};
use crate::partition::{sync_particles, PartitionLayout, RankedParticles};

pub const MAX_STAGES: usize = 6;

#[derive(Clone, Copy, Debug)]
pub struct Particle {
    pub dof: u32,
    pub origin_primitive: u32,
    pub origin_rank: u32,
    /// Current physical position.
    pub position: Point,
    /// Position at the start of the interval being integrated.
    pub start: Point,
    /// Volume primitive containing `position` after the last sync.
    pub primitive: u32,
    pub location: PointLocation,
    /// RK stage derivatives `k_1..k_S` of the reversed-time ODE.
    pub stage_values: [Point; MAX_STAGES],
    pub departure_value: Option<f64>,
}

/// Per-step counters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TransportStats {
    pub particles_migrated: u64,
    pub clamps: u64,
    pub escalations: u64,
    /// DoFs without a particle after a step; stays 0 unless the exchange
    /// drops particles.
    pub lost_particles: u64,
}

impl TransportStats {
    pub fn merge(&self, o: &Self) -> Self {
        Self {
            particles_migrated: self.particles_migrated + o.particles_migrated,
            clamps: self.clamps + o.clamps,
            escalations: self.escalations + o.escalations,
            lost_particles: self.lost_particles + o.lost_particles,
        }
    }
}

/// Explicit Runge-Kutta scheme given by its Butcher tableau.
#[derive(Clone, Debug, PartialEq)]
pub struct RKScheme {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub order: usize,
}

impl RKScheme {
    pub fn from_tableau(a: Vec<Vec<f64>>, b: Vec<f64>, c: Vec<f64>, order: usize) -> Result<Self> {
        let s = b.len();
        if s == 0 || s > MAX_STAGES || a.len() != s || c.len() != s {
            return Err(Error::Config(format!("inconsistent Butcher tableau with {s} stages")));
        }
        for (i, row) in a.iter().enumerate() {
            if row.len() != s || row[i..].iter().any(|&x| x != 0.0) {
                return Err(Error::Config("Butcher matrix must be strictly lower triangular".into()));
            }
        }
        if (b.iter().sum::<f64>() - 1.0).abs() > 1e-14 {
            return Err(Error::Config("Butcher weights must sum to one".into()));
        }
        Ok(Self { a, b, c, order })
    }

    pub fn stages(&self) -> usize {
        self.b.len()
    }

    pub fn forward_euler() -> Self {
        Self::from_tableau(vec![vec![0.0]], vec![1.0], vec![0.0], 1).unwrap()
    }

    pub fn heun() -> Self {
        Self::from_tableau(vec![vec![0.0, 0.0], vec![1.0, 0.0]], vec![0.5, 0.5], vec![0.0, 1.0], 2).unwrap()
    }

    pub fn rk3() -> Self {
        Self::from_tableau(
            vec![vec![0.0, 0.0, 0.0], vec![0.5, 0.0, 0.0], vec![-1.0, 2.0, 0.0]],
            vec![1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0],
            vec![0.0, 0.5, 1.0],
            3,
        )
        .unwrap()
    }

    pub fn rk4() -> Self {
        Self::from_tableau(
            vec![vec![0.0, 0.0, 0.0, 0.0], vec![0.5, 0.0, 0.0, 0.0], vec![0.0, 0.5, 0.0, 0.0], vec![0.0, 0.0, 1.0, 0.0]],
            vec![1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0],
            vec![0.0, 0.5, 0.5, 1.0],
            4,
        )
        .unwrap()
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "euler" => Ok(Self::forward_euler()),
            "heun" => Ok(Self::heun()),
            "rk3" => Ok(Self::rk3()),
            "rk4" => Ok(Self::rk4()),
            _ => Err(Error::Config(format!("unknown RK scheme '{name}'"))),
        }
    }
}

/// Velocity known at both ends of `[t_old, t_new]`, linear in between.
#[derive(Clone, Debug)]
pub struct VelocityPair {
    pub u_old: Arc<VectorField>,
    pub u_new: Arc<VectorField>,
    pub t_old: f64,
    pub t_new: f64,
}

impl VelocityPair {
    pub fn new(u_old: Arc<VectorField>, u_new: Arc<VectorField>, t_old: f64, t_new: f64) -> Result<Self> {
        if t_old.partial_cmp(&t_new) != Some(std::cmp::Ordering::Less) {
            return Err(Error::Config(format!("velocity interval [{t_old}, {t_new}] is empty")));
        }
        if !Arc::ptr_eq(u_old.space(), u_new.space()) {
            return Err(Error::Config("velocity pair on different spaces".into()));
        }
        Ok(Self { u_old, u_new, t_old, t_new })
    }

    /// Time-invariant velocity over the interval.
    pub fn steady(u: Arc<VectorField>, t_old: f64, t_new: f64) -> Result<Self> {
        Self::new(u.clone(), u, t_old, t_new)
    }

    pub fn tau(&self) -> f64 {
        self.t_new - self.t_old
    }

    pub fn is_steady(&self) -> bool {
        Arc::ptr_eq(&self.u_old, &self.u_new)
    }

    /// Velocity at a located point, with weight `w_new` on `u_new`.
    #[inline]
    pub fn eval_located(&self, loc: &PointLocation, w_new: f64) -> Point {
        let a = self.u_old.evaluate_located(loc);
        if self.is_steady() {
            return a;
        }
        let b = self.u_new.evaluate_located(loc);
        let w_old = 1.0 - w_new;
        [w_old * a[0] + w_new * b[0], w_old * a[1] + w_new * b[1], w_old * a[2] + w_new * b[2]]
    }
}

/// Linear interpolation in time of the velocity pair at `y`.
pub fn interp_velocity(vp: &VelocityPair, y: &Point, t: f64) -> Result<Point> {
    if !(vp.t_old..=vp.t_new).contains(&t) {
        return Err(Error::Config(format!("time {t} outside [{}, {}]", vp.t_old, vp.t_new)));
    }
    let space = vp.u_old.space();
    let (loc, _) = space.locate(y, 0);
    Ok(vp.eval_located(&loc, (t - vp.t_old) / vp.tau()))
}

/// Volume primitive a particle created at DoF `i` is assigned to.
fn home_volume(space: &FunctionSpace, i: usize) -> usize {
    let p = &space.mesh().primitives[space.dof_primitive(i)];
    if p.id < space.mesh().num_volumes {
        p.id
    } else {
        p.neighbors[0]
    }
}

/// One particle per DoF at the physical DoF coordinate.
pub fn create_particles(space: &FunctionSpace, layout: &PartitionLayout) -> RankedParticles {
    let mut ranks: Vec<Vec<Particle>> = vec![Vec::new(); layout.ranks];
    let all: Vec<Particle> = (0..space.num_dofs())
        .into_par_iter()
        .map(|i| {
            let x = *space.dof_point(i);
            let vol = home_volume(space, i);
            let (location, _) = space.locate(&x, vol);
            let origin = space.dof_primitive(i);
            Particle {
                dof: i as u32,
                origin_primitive: origin as u32,
                origin_rank: layout.owner_of(origin) as u32,
                position: x,
                start: x,
                primitive: vol as u32,
                location,
                stage_values: [[0.0; 3]; MAX_STAGES],
                departure_value: None,
            }
        })
        .collect();
    for p in all {
        ranks[layout.owner_of(p.primitive as usize)].push(p);
    }
    RankedParticles { ranks }
}

/// Moves every particle from `X(x, t_new)` to its departure point at
/// `t_old` by integrating `y' = -u(y, t_new - s)` over `s ∈ [0, τ]`,
/// synchronizing after every stage position and after the final position.
pub fn backtrack(
    particles: &mut RankedParticles,
    layout: &PartitionLayout,
    space: &FunctionSpace,
    vp: &VelocityPair,
    rk: &RKScheme,
) -> TransportStats {
    let tau = vp.tau();
    particles.par_for_each(|p| p.start = p.position);
    let mut stats = TransportStats::default();
    for s in 0..rk.stages() {
        let a = &rk.a[s];
        particles.par_for_each(|p| {
            let mut y = p.start;
            for j in 0..s {
                if a[j] != 0.0 {
                    geom::axpy(&mut y, tau * a[j], &p.stage_values[j]);
                }
            }
            p.position = y;
        });
        stats = stats.merge(&sync_particles(particles, layout, space));
        let w_new = 1.0 - rk.c[s];
        particles.par_for_each(|p| {
            let u = vp.eval_located(&p.location, w_new);
            p.stage_values[s] = [-u[0], -u[1], -u[2]];
        });
    }
    particles.par_for_each(|p| {
        let mut y = p.start;
        for (j, &bj) in rk.b.iter().enumerate() {
            geom::axpy(&mut y, tau * bj, &p.stage_values[j]);
        }
        p.position = y;
    });
    stats.merge(&sync_particles(particles, layout, space))
}

/// Evaluates `c` at every particle's final position and routes the value
/// back to the particle's DoF.
pub fn evaluate_departure(particles: &mut RankedParticles, c: &ScalarField) -> ScalarField {
    particles.par_for_each(|p| p.departure_value = Some(c.evaluate_located(&p.location)));
    let mut coeffs = vec![f64::NAN; c.coeffs.len()];
    for p in particles.iter() {
        coeffs[p.dof as usize] = p.departure_value.expect("evaluated");
    }
    ScalarField::from_coeffs(c.space.clone(), coeffs, c.time)
}

/// Current particle positions ordered by DoF.
pub fn positions_by_dof(particles: &RankedParticles, n: usize) -> Vec<Point> {
    let mut out = vec![[f64::NAN; 3]; n];
    for p in particles.iter() {
        out[p.dof as usize] = p.position;
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LookBack {
    Steps(usize),
    Infinite,
}

impl std::fmt::Display for LookBack {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LookBack::Steps(b) => write!(f, "{b}"),
            LookBack::Infinite => write!(f, "inf"),
        }
    }
}

impl std::str::FromStr for LookBack {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if matches!(s.to_ascii_lowercase().as_str(), "inf" | "infinite" | "infinity" | "∞") {
            return Ok(LookBack::Infinite);
        }
        match s.parse::<usize>() {
            Ok(b) if b > 0 => Ok(LookBack::Steps(b)),
            _ => Err(Error::Parse(format!("invalid look-back distance '{s}'"))),
        }
    }
}

#[derive(Clone)]
struct SteadyCache {
    velocity: Arc<VectorField>,
    tau: f64,
    depth: usize,
    state: Vec<(Point, PointLocation)>,
}

/// Fields and velocity intervals needed to trace characteristics back over
/// `b` steps.
#[derive(Clone)]
pub struct LookBackBuffer {
    pub lookback: LookBack,
    fields: VecDeque<ScalarField>,
    intervals: VecDeque<VelocityPair>,
    cache: Option<SteadyCache>,
}

impl LookBackBuffer {
    /// `capacity` bounds the number of stored fields; `None` means `b`.
    pub fn new(lookback: LookBack, c0: ScalarField, capacity: Option<usize>) -> Result<Self> {
        if let (LookBack::Steps(b), Some(cap)) = (lookback, capacity) {
            if cap < b {
                return Err(Error::Config(format!("look-back buffer holds {cap} fields but b = {b}")));
            }
        }
        Ok(Self { lookback, fields: VecDeque::from([c0]), intervals: VecDeque::new(), cache: None })
    }

    /// Records the field computed at the end of the latest step.
    pub fn push_field(&mut self, c: ScalarField) {
        if let LookBack::Steps(b) = self.lookback {
            self.fields.push_back(c);
            while self.fields.len() > b {
                self.fields.pop_front();
            }
        }
    }

    /// Replaces the newest stored field, e.g. by the output of a half
    /// diffusion step that the next advection has to transport.
    pub fn replace_latest(&mut self, c: ScalarField) -> Result<()> {
        match self.lookback {
            LookBack::Steps(1) => {
                self.fields[0] = c;
                Ok(())
            }
            other => Err(Error::Config(format!("operator splitting with diffusion needs b = 1, got b = {other}"))),
        }
    }

    pub fn stored_fields(&self) -> usize {
        self.fields.len()
    }

    fn push_interval(&mut self, vp: VelocityPair) {
        self.intervals.push_back(vp);
        if let LookBack::Steps(b) = self.lookback {
            while self.intervals.len() > b {
                self.intervals.pop_front();
            }
        }
    }

    fn depth(&self) -> usize {
        match self.lookback {
            LookBack::Steps(b) => b.min(self.intervals.len()),
            LookBack::Infinite => self.intervals.len(),
        }
    }
}

/// Tracing context shared by all steps of a run.
#[derive(Clone)]
pub struct Tracer {
    pub space: Arc<FunctionSpace>,
    pub layout: PartitionLayout,
    pub rk: RKScheme,
}

impl Tracer {
    /// Particles at cached departure points, owned by the rank of the
    /// volume containing them.
    fn particles_from_state(&self, state: &[(Point, PointLocation)]) -> RankedParticles {
        let mut ranks: Vec<Vec<Particle>> = vec![Vec::new(); self.layout.ranks];
        for (i, &(x, location)) in state.iter().enumerate() {
            let origin = self.space.dof_primitive(i);
            ranks[self.layout.owner_of(location.macro_id as usize)].push(Particle {
                dof: i as u32,
                origin_primitive: origin as u32,
                origin_rank: self.layout.owner_of(origin) as u32,
                position: x,
                start: x,
                primitive: location.macro_id,
                location,
                stage_values: [[0.0; 3]; MAX_STAGES],
                departure_value: None,
            });
        }
        RankedParticles { ranks }
    }

    fn state(&self, ps: &RankedParticles) -> Vec<(Point, PointLocation)> {
        let mut out = Vec::with_capacity(self.space.num_dofs());
        out.resize_with(self.space.num_dofs(), || ([0.0; 3], ps.iter().next().expect("particles").location));
        for p in ps.iter() {
            out[p.dof as usize] = (p.position, p.location);
        }
        out
    }
}

/// Step lengths computed as differences of nearby times differ in the last
/// bits; such steps count as equal.
fn same_step(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs())
}

/// Advances the look-back buffer by the interval `vp` and returns the
/// transported field `ĉ` at `vp.t_new`: departure points are traced through
/// the last `depth` intervals (newest first) and the field stored at the
/// start of the oldest one is evaluated there.
///
/// For a velocity that is the same field over the whole window and a
/// constant step, departure positions of depth `k + 1` are the positions of
/// depth `k` moved back by one more step, so they are carried over between
/// calls instead of being re-integrated.
pub fn mmoc_advect(buf: &mut LookBackBuffer, vp: VelocityPair, tracer: &Tracer) -> Result<(ScalarField, TransportStats)> {
    let t_new = vp.t_new;
    buf.push_interval(vp);
    let depth = buf.depth();
    let field_index = match buf.lookback {
        LookBack::Steps(_) => buf
            .fields
            .len()
            .checked_sub(depth)
            .ok_or_else(|| Error::Config(format!("look-back buffer holds {} fields, need {depth}", buf.fields.len())))?,
        LookBack::Infinite => 0,
    };
    let window: Vec<&VelocityPair> = buf.intervals.iter().skip(buf.intervals.len() - depth).collect();
    let first = window[0];
    let steady = window
        .iter()
        .all(|w| w.is_steady() && Arc::ptr_eq(&w.u_old, &first.u_old) && same_step(w.tau(), first.tau()));

    let mut stats = TransportStats::default();
    let mut particles = if steady {
        let reusable = buf.cache.as_ref().filter(|c| {
            Arc::ptr_eq(&c.velocity, &first.u_old) && same_step(c.tau, first.tau()) && c.depth <= depth && c.depth + 1 >= depth
        });
        let (mut ps, done) = match reusable {
            Some(c) => (tracer.particles_from_state(&c.state), c.depth),
            None => (create_particles(&tracer.space, &tracer.layout), 0),
        };
        for _ in done..depth {
            stats = stats.merge(&backtrack(&mut ps, &tracer.layout, &tracer.space, first, &tracer.rk));
        }
        buf.cache = Some(SteadyCache { velocity: first.u_old.clone(), tau: first.tau(), depth, state: tracer.state(&ps) });
        ps
    } else {
        buf.cache = None;
        let mut ps = create_particles(&tracer.space, &tracer.layout);
        for w in window.iter().rev() {
            stats = stats.merge(&backtrack(&mut ps, &tracer.layout, &tracer.space, w, &tracer.rk));
        }
        ps
    };
    stats.lost_particles = (tracer.space.num_dofs() as i64 - particles.len() as i64).unsigned_abs();
    let mut c_hat = evaluate_departure(&mut particles, &buf.fields[field_index]);
    c_hat.time = t_new;
    Ok((c_hat, stats))
}
