//! Time stepping: step size control, advection-diffusion (AD), Strang
//! splitting (ADS) and the predictor-corrector coupling to Stokes (PC).

use std::sync::Arc;

use crate::diffusion::{diffusion_step, SourceTerm, SpaceTimeFn, ThetaSystem};
use crate::error::{Error, Result};
use crate::fem::{ScalarField, VectorField};
use crate::stokes::{stokes_solve, BoussinesqForce, StokesSystem};
use crate::transport::{mmoc_advect, LookBackBuffer, Tracer, TransportStats, VelocityPair};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StepPolicy {
    Fixed(f64),
    /// `τ = cfl · h_min / max|u|`, `fallback` when the velocity vanishes.
    Cfl { cfl: f64, fallback: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepControl {
    pub policy: StepPolicy,
    pub h_min: f64,
}

pub fn cfl_dt(u: &VectorField, ctrl: &StepControl) -> f64 {
    match ctrl.policy {
        StepPolicy::Fixed(tau) => tau,
        StepPolicy::Cfl { cfl, fallback } => {
            let umax = u.max_norm();
            if umax > 0.0 {
                cfl * ctrl.h_min / umax
            } else {
                fallback
            }
        }
    }
}

/// CFL number `max|u| τ / h_min` of a step.
pub fn cfl_number(u: &VectorField, tau: f64, h_min: f64) -> f64 {
    u.max_norm() * tau / h_min
}

/// Call counters of the orchestration.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Counters {
    pub advections: u64,
    pub ads_calls: u64,
    pub diffusion_solves: u64,
    pub stokes_solves: u64,
    pub transport: TransportStats,
}

/// Velocity at arbitrary times. Returning the same `Arc` for two times marks
/// the velocity as unchanged between them.
pub trait VelocitySource {
    fn velocity(&mut self, t: f64) -> Result<Arc<VectorField>>;
}

pub struct SteadyVelocity(pub Arc<VectorField>);

impl VelocitySource for SteadyVelocity {
    fn velocity(&mut self, _t: f64) -> Result<Arc<VectorField>> {
        Ok(self.0.clone())
    }
}

/// Everything the temperature/concentration update needs besides the field.
pub struct TransportProblem {
    pub tracer: Tracer,
    pub buffer: LookBackBuffer,
    pub diffusion: ThetaSystem,
    pub source: SourceTerm,
    pub bc: Option<SpaceTimeFn>,
    pub counters: Counters,
    pub diffusion_iterations: usize,
}

impl TransportProblem {
    pub fn diffusion_active(&self) -> bool {
        self.diffusion.kappa != 0.0 || !self.source.is_zero()
    }

    fn diffuse(&mut self, c: &ScalarField, tau: f64) -> Result<ScalarField> {
        let out = diffusion_step(c, &mut self.diffusion, &self.source, self.bc.as_ref(), tau)?;
        self.counters.diffusion_solves += 1;
        self.diffusion_iterations += self.diffusion.last_iterations;
        Ok(out)
    }

    fn advect(&mut self, vp: VelocityPair) -> Result<ScalarField> {
        let (c, stats) = mmoc_advect(&mut self.buffer, vp, &self.tracer)?;
        self.counters.advections += 1;
        self.counters.transport = self.counters.transport.merge(&stats);
        Ok(c)
    }
}

/// Advection over `vp` followed by one full Θ diffusion step.
pub fn ad_step(prob: &mut TransportProblem, vp: VelocityPair) -> Result<ScalarField> {
    let tau = vp.tau();
    let c_hat = prob.advect(vp)?;
    let c = prob.diffuse(&c_hat, tau)?;
    prob.buffer.push_field(c.clone());
    Ok(c)
}

/// Strang splitting: half diffusion, advection over `vp`, half diffusion.
/// `c` is the field at `vp.t_old`.
pub fn ads_step(prob: &mut TransportProblem, c: &ScalarField, vp: VelocityPair) -> Result<ScalarField> {
    let half = 0.5 * vp.tau();
    prob.counters.ads_calls += 1;
    if prob.diffusion_active() {
        let mut start = c.clone();
        start.time = vp.t_old + half;
        let c_star = prob.diffuse(&start, half)?;
        prob.buffer.replace_latest(c_star)?;
    }
    let c_hat = prob.advect(vp)?;
    let c_new = if prob.diffusion_active() { prob.diffuse(&c_hat, half)? } else { c_hat };
    prob.buffer.push_field(c_new.clone());
    Ok(c_new)
}

/// Temperature, velocity and pressure at one time level.
#[derive(Clone, Debug)]
pub struct CoupledState {
    pub c: ScalarField,
    pub u: Arc<VectorField>,
    pub p: ScalarField,
    pub t: f64,
    pub n: usize,
}

/// Initial Stokes solve for the initial temperature.
pub fn initial_state(stokes: &mut StokesSystem, force: &BoussinesqForce, c0: ScalarField) -> Result<CoupledState> {
    let sol = stokes_solve(stokes, &c0, force)?;
    let t = c0.time;
    Ok(CoupledState { c: c0, u: Arc::new(sol.u), p: sol.p, t, n: 0 })
}

/// One predictor-corrector step of length `tau`. Both temperature sweeps
/// start from `cⁿ`; the predictor freezes `uⁿ`, the corrector interpolates
/// linearly between `uⁿ` and the predicted velocity.
pub fn pc_step(
    prob: &mut TransportProblem,
    stokes: &mut StokesSystem,
    force: &BoussinesqForce,
    state: &CoupledState,
    tau: f64,
) -> Result<CoupledState> {
    if !(tau > 0.0) {
        return Err(Error::Config(format!("time step must be positive, got {tau}")));
    }
    let t_new = state.t + tau;
    let saved = prob.buffer.clone();
    let vp = VelocityPair::steady(state.u.clone(), state.t, t_new)?;
    let c_pr = ads_step(prob, &state.c, vp)?;
    let pr = stokes_solve(stokes, &c_pr, force)?;
    prob.counters.stokes_solves += 1;

    prob.buffer = saved;
    let u_pr = Arc::new(pr.u);
    let vp = VelocityPair::new(state.u.clone(), u_pr, state.t, t_new)?;
    let c = ads_step(prob, &state.c, vp)?;
    let sol = stokes_solve(stokes, &c, force)?;
    prob.counters.stokes_solves += 1;
    Ok(CoupledState { c, u: Arc::new(sol.u), p: sol.p, t: t_new, n: state.n + 1 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::FunctionSpace;
    use crate::mesh::{BlendingMap, BoundaryTag, CoarseMesh, MeshHierarchy};
    use crate::partition::partition_mesh;
    use crate::stokes::{Gravity, VelocityBC};
    use crate::transport::{LookBack, RKScheme};
    use std::f64::consts::PI;

    fn space(coarse: CoarseMesh, depth: usize, degree: usize) -> Arc<FunctionSpace> {
        let mesh = MeshHierarchy::refine(coarse, depth, BlendingMap::Identity).unwrap();
        Arc::new(FunctionSpace::new(Arc::new(mesh), degree).unwrap())
    }

    fn problem(s: &Arc<FunctionSpace>, c0: &ScalarField, kappa: f64, theta: f64, b: LookBack) -> TransportProblem {
        TransportProblem {
            tracer: Tracer { space: s.clone(), layout: partition_mesh(s.mesh(), 1).unwrap(), rk: RKScheme::rk4() },
            buffer: LookBackBuffer::new(b, c0.clone(), None).unwrap(),
            diffusion: ThetaSystem::new(s.clone(), kappa, theta).unwrap(),
            source: SourceTerm::Zero,
            bc: None,
            counters: Counters::default(),
            diffusion_iterations: 0,
        }
    }

    #[test]
    fn cfl_formula_and_fallback() {
        let s = space(CoarseMesh::unit_square(BoundaryTag::Neumann), 2, 1);
        let u = VectorField::interpolate(s.clone(), |_| [2.0, 0.0, 0.0], 0.0);
        let ctrl = StepControl { policy: StepPolicy::Cfl { cfl: 1.0, fallback: 0.3 }, h_min: 0.1 };
        assert!((cfl_dt(&u, &ctrl) - 0.05).abs() < 1e-15);
        assert_eq!(cfl_dt(&VectorField::zeros(s, 0.0), &ctrl), 0.3);
    }

    #[test]
    fn rotation_step_at_cfl_three() {
        // |u| reaches ~0.7 on the unit square for rotation about the centre
        let s = space(CoarseMesh::unit_square(BoundaryTag::Neumann), 6, 1);
        let u = VectorField::interpolate(s.clone(), |p| [0.5 - p[1], p[0] - 0.5, 0.0], 0.0);
        assert!((u.max_norm() - 0.5f64.sqrt()).abs() < 1e-15);
        let cfl = cfl_number(&u, 0.065, s.mesh().min_edge_length());
        assert!((cfl - 3.0).abs() < 0.1, "{cfl}");
        let ctrl = StepControl { policy: StepPolicy::Cfl { cfl: 3.0, fallback: 1.0 }, h_min: 1.0 / 64.0 };
        assert!((cfl_dt(&u, &ctrl) - 0.0663).abs() < 1e-4);
    }

    #[test]
    fn no_diffusion_reduces_to_advection() {
        let s = space(CoarseMesh::unit_square(BoundaryTag::Neumann), 4, 1);
        let c0 = ScalarField::interpolate(s.clone(), |p| (-20.0 * (p[0] - 0.4).powi(2)).exp(), 0.0);
        let u = Arc::new(VectorField::interpolate(s.clone(), |p| [0.5 - p[1], p[0] - 0.5, 0.0], 0.0));
        let vp = VelocityPair::steady(u, 0.0, 0.1).unwrap();
        let mut a = problem(&s, &c0, 0.0, 1.0, LookBack::Steps(1));
        let mut b = problem(&s, &c0, 0.0, 1.0, LookBack::Steps(1));
        let x = ad_step(&mut a, vp.clone()).unwrap();
        let y = ads_step(&mut b, &c0, vp.clone()).unwrap();
        let (z, _) = mmoc_advect(&mut LookBackBuffer::new(LookBack::Steps(1), c0.clone(), None).unwrap(), vp, &a.tracer).unwrap();
        assert_eq!(x.coeffs, z.coeffs);
        assert_eq!(y.coeffs, z.coeffs);
        assert_eq!(a.counters.diffusion_solves, 1);
        assert_eq!(b.counters.diffusion_solves, 0);
    }

    #[test]
    fn splitting_without_flow_matches_decay_mode() {
        // cos(πx) decays with factor exp(-κπ²t); ADS with u=0 is two half
        // implicit Euler steps per step
        let s = space(CoarseMesh::unit_square(BoundaryTag::Neumann), 5, 2);
        let kappa = 0.1;
        let t_end = 0.4;
        let exact = (-kappa * PI * PI * t_end).exp();
        let zero = Arc::new(VectorField::zeros(s.clone(), 0.0));
        let i = (0..s.num_dofs()).find(|&i| s.dof_point(i)[0] == 0.0).unwrap();
        let mut errs = Vec::new();
        for steps in [8, 16] {
            let tau = t_end / steps as f64;
            let mut c = ScalarField::interpolate(s.clone(), |p| (PI * p[0]).cos(), 0.0);
            let mut prob = problem(&s, &c, kappa, 1.0, LookBack::Steps(1));
            let mut full = c.clone();
            let mut full_prob = problem(&s, &c, kappa, 1.0, LookBack::Steps(1));
            for n in 0..steps {
                let vp = VelocityPair::steady(zero.clone(), n as f64 * tau, (n + 1) as f64 * tau).unwrap();
                c = ads_step(&mut prob, &c, vp).unwrap();
                full.time = (n + 1) as f64 * tau;
                full = full_prob.diffuse(&full, tau).unwrap();
            }
            errs.push(((c.coeffs[i] - exact).abs(), (full.coeffs[i] - c.coeffs[i]).abs()));
        }
        // both discretizations are first order and approach each other like τ
        assert!(errs[1].0 < 0.6 * errs[0].0, "{errs:?}");
        assert!(errs[1].1 < 0.6 * errs[0].1, "{errs:?}");
    }

    #[test]
    fn richardson_first_order_for_implicit_euler() {
        let s = space(CoarseMesh::unit_square(BoundaryTag::Neumann), 5, 2);
        let u = Arc::new(VectorField::interpolate(s.clone(), |p| [0.5 - p[1], p[0] - 0.5, 0.0], 0.0));
        let c0 = ScalarField::interpolate(s.clone(), |p| (-5.0 * ((p[0] - 0.3).powi(2) + (p[1] - 0.5).powi(2))).exp(), 0.0);
        let run = |steps: usize| {
            let tau = 0.2 / steps as f64;
            let mut prob = problem(&s, &c0, 0.2, 1.0, LookBack::Steps(1));
            let mut c = c0.clone();
            for n in 0..steps {
                let vp = VelocityPair::steady(u.clone(), n as f64 * tau, (n + 1) as f64 * tau).unwrap();
                c = ad_step(&mut prob, vp).unwrap();
            }
            c
        };
        let (c1, c2, c4) = (run(2), run(4), run(8));
        let d = |a: &ScalarField, b: &ScalarField| a.coeffs.iter().zip(&b.coeffs).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        let ratio = d(&c1, &c2) / d(&c2, &c4);
        assert!((1.6..2.6).contains(&ratio), "{ratio}");
    }

    fn blankenbach_like() -> (Arc<FunctionSpace>, StokesSystem) {
        let tags = [BoundaryTag::NoSlip, BoundaryTag::FreeSlip, BoundaryTag::Dirichlet, BoundaryTag::FreeSlip];
        let s = space(CoarseMesh::rectangle(1.5, 1.0, 3, 2, tags), 2, 2);
        let st = StokesSystem::new(s.clone(), 1.0, VelocityBC::default()).unwrap();
        (s, st)
    }

    #[test]
    fn pc_step_counts_and_zero_rayleigh() {
        let (s, mut st) = blankenbach_like();
        let c0 = ScalarField::interpolate(s.clone(), |p| 0.5 * (1.0 - p[1] * p[1]), 0.0);
        let force = BoussinesqForce::new(0.0, Gravity::Constant([0.0, 1.0, 0.0])).unwrap();
        let mut prob = problem(&s, &c0, 1.0, 0.5, LookBack::Steps(1));
        prob.source = SourceTerm::Constant(1.0);
        prob.bc = Some(Arc::new(|_, _| 0.0));
        let mut state = initial_state(&mut st, &force, c0.clone()).unwrap();
        let mut reference = c0.clone();
        let mut ref_prob = problem(&s, &c0, 1.0, 0.5, LookBack::Steps(1));
        ref_prob.source = SourceTerm::Constant(1.0);
        ref_prob.bc = prob.bc.clone();
        let zero = Arc::new(VectorField::zeros(s.clone(), 0.0));
        for _ in 0..3 {
            let solves = st.solves;
            state = pc_step(&mut prob, &mut st, &force, &state, 0.01).unwrap();
            assert_eq!(st.solves - solves, 2);
            assert_eq!(state.u.max_norm(), 0.0);
            let vp = VelocityPair::steady(zero.clone(), reference.time, reference.time + 0.01).unwrap();
            reference = ads_step(&mut ref_prob, &reference, vp).unwrap();
        }
        assert_eq!(prob.counters.stokes_solves, 6);
        assert_eq!(prob.counters.ads_calls, 6);
        assert_eq!(prob.counters.diffusion_solves, 12);
        for (a, b) in state.c.coeffs.iter().zip(&reference.coeffs) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn corrector_starts_from_old_temperature() {
        // with buoyancy the predicted velocity differs from uⁿ, yet repeating
        // the step from the same state reproduces it exactly
        let (s, mut st) = blankenbach_like();
        let c0 = ScalarField::interpolate(s.clone(), |p| 0.5 * (1.0 - p[1] * p[1]) + 0.05 * (PI * p[0] / 1.5).cos() * (PI * p[1]).sin(), 0.0);
        let force = BoussinesqForce::new(1e4, Gravity::Constant([0.0, 1.0, 0.0])).unwrap();
        let mut prob = problem(&s, &c0, 1.0, 0.5, LookBack::Steps(1));
        prob.source = SourceTerm::Constant(1.0);
        prob.bc = Some(Arc::new(|_, _| 0.0));
        let state = initial_state(&mut st, &force, c0.clone()).unwrap();
        assert!(state.u.max_norm() > 0.0);
        let mut prob2 = problem(&s, &c0, 1.0, 0.5, LookBack::Steps(1));
        prob2.source = SourceTerm::Constant(1.0);
        prob2.bc = prob.bc.clone();
        let a = pc_step(&mut prob, &mut st, &force, &state, 1e-3).unwrap();
        let b = pc_step(&mut prob2, &mut st, &force, &state, 1e-3).unwrap();
        assert_eq!(a.c.coeffs, b.c.coeffs);
        assert!((a.t - 1e-3).abs() < 1e-18 && a.n == 1);
    }
}
