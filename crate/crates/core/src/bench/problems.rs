//! Initial conditions, exact solutions and velocity fields of the
//! benchmark problems.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::error::Result;
use crate::fem::{FunctionSpace, VectorField};
use crate::scheme::VelocitySource;
use crate::Point;

/// Radius of the three rotating bodies.
pub const R0: f64 = 0.15;

fn scaled_distance(p: &Point, centre: [f64; 2]) -> f64 {
    ((p[0] - centre[0]).powi(2) + (p[1] - centre[1]).powi(2)).sqrt() / R0
}

/// Slotted cylinder centred at (0.5, 0.75), slot of half-width 0.025 up to
/// `y = 0.85`.
pub fn slotted_cylinder(p: &Point) -> f64 {
    let r = scaled_distance(p, [0.5, 0.75]);
    if r <= 1.0 && ((p[0] - 0.5).abs() >= 0.025 || p[1] >= 0.85) {
        1.0
    } else {
        0.0
    }
}

pub fn cone(p: &Point) -> f64 {
    let r = scaled_distance(p, [0.5, 0.25]);
    if r <= 1.0 {
        1.0 - r
    } else {
        0.0
    }
}

pub fn hill(p: &Point) -> f64 {
    let r = scaled_distance(p, [0.25, 0.5]);
    if r <= 1.0 {
        0.25 * (1.0 + (PI * r).cos())
    } else {
        0.0
    }
}

/// Which bodies the rotation problem starts with.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RotationBodies {
    All,
    Hill,
}

impl RotationBodies {
    pub fn eval(&self, p: &Point) -> f64 {
        match self {
            RotationBodies::All => slotted_cylinder(p) + cone(p) + hill(p),
            RotationBodies::Hill => hill(p),
        }
    }

    /// Exact solution: the initial state rotated by angle `t` about the
    /// centre of the square.
    pub fn exact(&self, p: &Point, t: f64) -> f64 {
        let (s, c) = t.sin_cos();
        let (dx, dy) = (p[0] - 0.5, p[1] - 0.5);
        self.eval(&[0.5 + c * dx + s * dy, 0.5 - s * dx + c * dy, 0.0])
    }
}

pub fn rotation_velocity(p: &Point) -> Point {
    [0.5 - p[1], p[0] - 0.5, 0.0]
}

pub fn swirl_initial(p: &Point) -> f64 {
    if p[0] < 0.5 {
        1.0
    } else {
        0.0
    }
}

pub fn swirl_velocity(p: &Point, t: f64, period: f64) -> Point {
    let g = (PI * t / period).cos();
    let s = |k: f64, x: f64| (k * PI * x).sin();
    [
        2.0 * s(1.0, p[0]).powi(2) * s(2.0, p[1]) * s(2.0, p[2]) * g,
        -s(2.0, p[0]) * s(1.0, p[1]).powi(2) * s(2.0, p[2]) * g,
        -s(2.0, p[0]) * s(2.0, p[1]) * s(1.0, p[2]).powi(2) * g,
    ]
}

/// Interpolated swirl field, rebuilt on demand. The field of the most
/// recent time is kept, so the end of one step and the start of the next
/// share one `Arc`.
pub struct SwirlVelocity {
    pub space: Arc<FunctionSpace>,
    pub period: f64,
    last: Option<(u64, Arc<VectorField>)>,
}

impl SwirlVelocity {
    pub fn new(space: Arc<FunctionSpace>, period: f64) -> Self {
        Self { space, period, last: None }
    }
}

impl VelocitySource for SwirlVelocity {
    fn velocity(&mut self, t: f64) -> Result<Arc<VectorField>> {
        if let Some((bits, u)) = &self.last {
            if *bits == t.to_bits() {
                return Ok(u.clone());
            }
        }
        let period = self.period;
        let u = Arc::new(VectorField::interpolate(self.space.clone(), |p| swirl_velocity(p, t, period), t));
        self.last = Some((t.to_bits(), u.clone()));
        Ok(u)
    }
}

/// Start time of the annulus problem, chosen so that the initial hill has
/// the same shape for every `κ`.
pub fn annulus_t0(kappa: f64) -> f64 {
    2.0 * PI * 1e-3 / kappa
}

/// Centre of the Gaussian at time `t`, starting from (0, 1) at `t = 0`.
pub fn annulus_centre(t: f64) -> [f64; 2] {
    let (s, c) = t.sin_cos();
    [-s, c]
}

pub fn annulus_exact(p: &Point, t: f64, kappa: f64) -> f64 {
    let x = annulus_centre(t);
    let r2 = (p[0] - x[0]).powi(2) + (p[1] - x[1]).powi(2);
    (-r2 / (4.0 * t * kappa)).exp() / (4.0 * PI * t * kappa)
}

pub fn annulus_velocity(p: &Point) -> Point {
    [-p[1], p[0], 0.0]
}

/// Internally heated convection start, perturbed by one cosine mode.
pub fn blankenbach_initial(p: &Point, length: f64, height: f64) -> f64 {
    0.5 * (1.0 - p[1] * p[1]) + 0.01 * (PI * p[0] / length).cos() * (PI * p[1] / height).sin()
}

/// Smooth blob for the pipe throughput run.
pub fn pipe_blob(p: &Point, centre: Point, width: f64) -> f64 {
    let r2: f64 = (0..3).map(|k| (p[k] - centre[k]).powi(2)).sum();
    (-r2 / (width * width)).exp()
}
