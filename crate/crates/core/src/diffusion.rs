//! Θ-method time stepping of the diffusion term and the conjugate gradient
//! solver for the resulting symmetric systems.

use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fem::sparse::{dot, norm2};
use crate::fem::{assemble, assemble_vector, CsrMatrix, FunctionSpace, OperatorKind, ScalarField};
use crate::geom::Point;

pub const DEFAULT_TOL: f64 = 1e-10;

pub type SpaceTimeFn = Arc<dyn Fn(&Point, f64) -> f64 + Send + Sync>;

#[derive(Clone, Debug)]
pub struct CgOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

/// Jacobi-preconditioned conjugate gradients. Stops when
/// `‖b − Ax‖₂ ≤ tol·‖b‖₂`.
pub fn cg_solve(a: &CsrMatrix, rhs: &[f64], x0: &[f64], tol: f64, maxit: usize) -> Result<CgOutcome> {
    let n = rhs.len();
    let bnorm = norm2(rhs);
    if bnorm == 0.0 {
        return Ok(CgOutcome { x: vec![0.0; n], iterations: 0, residual: 0.0 });
    }
    let inv_diag: Vec<f64> = a.diagonal().iter().map(|d| if *d != 0.0 { 1.0 / d } else { 1.0 }).collect();
    let mut x = x0.to_vec();
    let mut r = a.apply(&x);
    r.par_iter_mut().zip(rhs).for_each(|(ri, bi)| *ri = bi - *ri);
    let mut rnorm = norm2(&r);
    let mut history = vec![rnorm / bnorm];
    if rnorm <= tol * bnorm {
        return Ok(CgOutcome { x, iterations: 0, residual: rnorm / bnorm });
    }
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for it in 1..=maxit {
        a.matvec(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return Err(Error::SolverFailure { solver: "cg", iterations: it, residual: rnorm / bnorm, history });
        }
        let alpha = rz / pap;
        x.par_iter_mut().zip(&p).for_each(|(x, p)| *x += alpha * p);
        r.par_iter_mut().zip(&ap).for_each(|(r, ap)| *r -= alpha * ap);
        rnorm = norm2(&r);
        history.push(rnorm / bnorm);
        if rnorm <= tol * bnorm {
            return Ok(CgOutcome { x, iterations: it, residual: rnorm / bnorm });
        }
        z.par_iter_mut().zip(&r).zip(&inv_diag).for_each(|((z, r), d)| *z = r * d);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        p.par_iter_mut().zip(&z).for_each(|(p, z)| *p = z + beta * *p);
    }
    Err(Error::SolverFailure { solver: "cg", iterations: maxit, residual: rnorm / bnorm, history })
}

/// Volumetric source `q(x, t)`.
#[derive(Clone)]
pub enum SourceTerm {
    Zero,
    Constant(f64),
    Function(SpaceTimeFn),
}

impl std::fmt::Debug for SourceTerm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SourceTerm::Zero => write!(f, "Zero"),
            SourceTerm::Constant(q) => write!(f, "Constant({q})"),
            SourceTerm::Function(_) => write!(f, "Function"),
        }
    }
}

impl SourceTerm {
    pub fn is_zero(&self) -> bool {
        matches!(self, SourceTerm::Zero) || matches!(self, SourceTerm::Constant(q) if *q == 0.0)
    }

    /// Load vector with entries `(q(·, t), φ_i)`.
    pub fn load(&self, space: &FunctionSpace, t: f64) -> Result<Vec<f64>> {
        let n = space.local_dofs();
        let eval = |x: &Point| match self {
            SourceTerm::Zero => 0.0,
            SourceTerm::Constant(q) => *q,
            SourceTerm::Function(f) => f(x, t),
        };
        if self.is_zero() {
            return Ok(vec![0.0; space.num_dofs()]);
        }
        assemble_vector(space, 1, &space.default_rule(), |_, _, qps, out| {
            for q in qps {
                let v = q.weight * eval(&q.phys);
                for i in 0..n {
                    out[i] += v * q.values[i];
                }
            }
        })
    }
}

/// Mass and stiffness operators with the assembled combination
/// `E = M + τΘκA`, rebuilt whenever τ changes.
pub struct ThetaSystem {
    pub space: Arc<FunctionSpace>,
    pub mass: CsrMatrix,
    pub stiffness: CsrMatrix,
    pub kappa: f64,
    pub theta: f64,
    pub tol: f64,
    pub max_iter: usize,
    tau: Option<f64>,
    e: Option<CsrMatrix>,
    e_constrained: Option<CsrMatrix>,
    /// Iterations of the last solve.
    pub last_iterations: usize,
}

impl ThetaSystem {
    pub fn new(space: Arc<FunctionSpace>, kappa: f64, theta: f64) -> Result<Self> {
        let mass = assemble(&space, OperatorKind::Mass)?;
        let stiffness = assemble(&space, OperatorKind::Stiffness)?;
        Self::with_operators(space, mass, stiffness, kappa, theta)
    }

    pub fn with_operators(space: Arc<FunctionSpace>, mass: CsrMatrix, stiffness: CsrMatrix, kappa: f64, theta: f64) -> Result<Self> {
        if kappa < 0.0 || !(0.0..=1.0).contains(&theta) {
            return Err(Error::Config(format!("invalid diffusion parameters kappa={kappa}, theta={theta}")));
        }
        let n = space.num_dofs();
        let max_iter = ((10.0 * (n as f64).sqrt()) as usize).max(100);
        Ok(Self {
            space,
            mass,
            stiffness,
            kappa,
            theta,
            tol: DEFAULT_TOL,
            max_iter,
            tau: None,
            e: None,
            e_constrained: None,
            last_iterations: 0,
        })
    }

    /// `E = M + τΘκA` for the current τ (unconstrained).
    pub fn operator(&mut self, tau: f64) -> &CsrMatrix {
        self.prepare(tau);
        self.e.as_ref().expect("prepared")
    }

    fn prepare(&mut self, tau: f64) {
        if self.tau.map(f64::to_bits) == Some(tau.to_bits()) && self.e.is_some() {
            return;
        }
        let mut e = self.mass.add_scaled(tau * self.theta * self.kappa, &self.stiffness);
        e.symmetric = true;
        let mask = self.space.dirichlet_mask();
        let mut ec = e.clone();
        for i in 0..ec.nrows {
            let range = ec.row_ptr[i]..ec.row_ptr[i + 1];
            for k in range {
                let j = ec.col_idx[k] as usize;
                if mask[i] || mask[j] {
                    ec.values[k] = if i == j { 1.0 } else { 0.0 };
                }
            }
        }
        self.tau = Some(tau);
        self.e = Some(e);
        self.e_constrained = Some(ec);
    }
}

/// Advances `ĉ` (already transported to `t_new`) by one Θ-step of length `τ`.
/// Dirichlet DoFs take `bc(·, t_new)`.
pub fn diffusion_step(
    c_hat: &ScalarField,
    sys: &mut ThetaSystem,
    src: &SourceTerm,
    bc: Option<&SpaceTimeFn>,
    tau: f64,
) -> Result<ScalarField> {
    if !(tau > 0.0) {
        return Err(Error::Config(format!("diffusion step needs τ > 0, got {tau}")));
    }
    if !Arc::ptr_eq(&c_hat.space, &sys.space) {
        return Err(Error::Config("field and diffusion system live on different spaces".into()));
    }
    let space = sys.space.clone();
    let t_new = c_hat.time;
    let mask = space.dirichlet_mask();
    let boundary: Vec<(usize, f64)> = match bc {
        Some(g) => (0..space.num_dofs()).filter(|&i| mask[i]).map(|i| (i, g(space.dof_point(i), t_new))).collect(),
        None => Vec::new(),
    };
    if sys.kappa == 0.0 && src.is_zero() {
        sys.last_iterations = 0;
        let mut out = c_hat.clone();
        for &(i, v) in &boundary {
            out.coeffs[i] = v;
        }
        return Ok(out);
    }
    let theta = sys.theta;
    let kappa = sys.kappa;
    let mut rhs = sys.mass.apply(&c_hat.coeffs);
    if kappa != 0.0 && theta != 1.0 {
        let a = sys.stiffness.apply(&c_hat.coeffs);
        let s = tau * (1.0 - theta) * kappa;
        rhs.par_iter_mut().zip(&a).for_each(|(r, a)| *r -= s * a);
    }
    if !src.is_zero() {
        let q_new = src.load(&space, t_new)?;
        let q_old = if theta == 1.0 { None } else { Some(src.load(&space, t_new - tau)?) };
        for i in 0..rhs.len() {
            rhs[i] += tau * theta * q_new[i];
            if let Some(q) = &q_old {
                rhs[i] += tau * (1.0 - theta) * q[i];
            }
        }
    }
    sys.prepare(tau);
    let e = sys.e.as_ref().expect("prepared");
    let mut x0 = c_hat.coeffs.clone();
    if bc.is_some() {
        let mut g = vec![0.0; rhs.len()];
        for &(i, v) in &boundary {
            g[i] = v;
        }
        let lift = e.apply(&g);
        for i in 0..rhs.len() {
            if !mask[i] {
                rhs[i] -= lift[i];
            }
        }
        for &(i, v) in &boundary {
            rhs[i] = v;
            x0[i] = v;
        }
    }
    let ec = if bc.is_some() { sys.e_constrained.as_ref().expect("prepared") } else { e };
    let out = cg_solve(ec, &rhs, &x0, sys.tol, sys.max_iter)?;
    sys.last_iterations = out.iterations;
    Ok(ScalarField::from_coeffs(space, out.x, t_new))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{BlendingMap, BoundaryTag, CoarseMesh, MeshHierarchy};
    use std::f64::consts::PI;

    fn square(depth: usize, degree: usize, tag: BoundaryTag) -> Arc<FunctionSpace> {
        let mesh = MeshHierarchy::refine(CoarseMesh::unit_square(tag), depth, BlendingMap::Identity).unwrap();
        Arc::new(FunctionSpace::new(Arc::new(mesh), degree).unwrap())
    }

    #[test]
    fn cg_on_diagonal_matrix_terminates() {
        let mut a = CsrMatrix::identity(50);
        for (i, v) in a.values.iter_mut().enumerate() {
            *v = 1.0 + i as f64;
        }
        let b: Vec<f64> = (0..50).map(|i| (i as f64).sin()).collect();
        let out = cg_solve(&a, &b, &vec![0.0; 50], 1e-12, 50).unwrap();
        assert!(out.iterations <= 50);
        for i in 0..50 {
            assert!((out.x[i] * (1.0 + i as f64) - b[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn cg_recovers_known_solution() {
        let s = square(3, 2, BoundaryTag::Neumann);
        let mut sys = ThetaSystem::new(s.clone(), 1.0, 1.0).unwrap();
        let e = sys.operator(0.01).clone();
        let y: Vec<f64> = (0..s.num_dofs()).map(|i| ((i * 7 % 13) as f64).cos()).collect();
        let b = e.apply(&y);
        let out = cg_solve(&e, &b, &vec![0.0; y.len()], 1e-12, 1000).unwrap();
        let err = y.iter().zip(&out.x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-9, "{err}");
        assert!(e.max_asymmetry() <= 1e-13);
    }

    #[test]
    fn cg_reports_failure_with_history() {
        let s = square(4, 1, BoundaryTag::Neumann);
        let mut sys = ThetaSystem::new(s.clone(), 1.0, 1.0).unwrap();
        let e = sys.operator(1.0).clone();
        let b: Vec<f64> = (0..s.num_dofs()).map(|i| (i as f64).sin()).collect();
        match cg_solve(&e, &b, &vec![0.0; b.len()], 1e-14, 2) {
            Err(Error::SolverFailure { iterations, history, .. }) => {
                assert_eq!(iterations, 2);
                assert_eq!(history.len(), 3);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn no_diffusion_no_source_is_identity() {
        let s = square(3, 2, BoundaryTag::Neumann);
        let c = ScalarField::interpolate(s.clone(), |p| p[0] * p[1], 0.1);
        for theta in [0.0, 0.5, 1.0] {
            let mut sys = ThetaSystem::new(s.clone(), 0.0, theta).unwrap();
            let out = diffusion_step(&c, &mut sys, &SourceTerm::Zero, None, 0.1).unwrap();
            assert_eq!(out.coeffs, c.coeffs);
        }
        // κ=0 with a zero-valued source goes through the solver and still gives ĉ
        let mut sys = ThetaSystem::new(s.clone(), 0.0, 0.5).unwrap();
        let f: SpaceTimeFn = Arc::new(|_, _| 0.0);
        let out = diffusion_step(&c, &mut sys, &SourceTerm::Function(f), None, 0.1).unwrap();
        for (a, b) in out.coeffs.iter().zip(&c.coeffs) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn constant_dirichlet_state_is_steady() {
        let s = square(3, 2, BoundaryTag::Dirichlet);
        let c = ScalarField::from_coeffs(s.clone(), vec![0.7; s.num_dofs()], 0.1);
        let mut sys = ThetaSystem::new(s.clone(), 1.0, 0.5).unwrap();
        let g: SpaceTimeFn = Arc::new(|_, _| 0.7);
        let out = diffusion_step(&c, &mut sys, &SourceTerm::Zero, Some(&g), 0.1).unwrap();
        assert!(out.coeffs.iter().all(|v| (v - 0.7).abs() < 1e-9));
    }

    #[test]
    fn neumann_diffusion_conserves_mass() {
        let s = square(4, 2, BoundaryTag::Neumann);
        let c = ScalarField::interpolate(s.clone(), |p| (-30.0 * ((p[0] - 0.3).powi(2) + (p[1] - 0.6).powi(2))).exp(), 0.1);
        let mut sys = ThetaSystem::new(s.clone(), 0.05, 0.5).unwrap();
        let ones = vec![1.0; s.num_dofs()];
        let m0 = dot(&ones, &sys.mass.apply(&c.coeffs));
        let out = diffusion_step(&c, &mut sys, &SourceTerm::Zero, None, 0.05).unwrap();
        let m1 = dot(&ones, &sys.mass.apply(&out.coeffs));
        assert!(((m1 - m0) / m0).abs() < 1e-9);
        assert!(out.max() < c.max());
    }

    #[test]
    fn constant_source_adds_tau_q() {
        let s = square(3, 1, BoundaryTag::Neumann);
        let c = ScalarField::from_coeffs(s.clone(), vec![0.25; s.num_dofs()], 0.2);
        let mut sys = ThetaSystem::new(s.clone(), 1.0, 0.5).unwrap();
        let out = diffusion_step(&c, &mut sys, &SourceTerm::Constant(2.0), None, 0.1).unwrap();
        assert!(out.coeffs.iter().all(|v| (v - 0.45).abs() < 1e-9));
    }

    #[test]
    fn implicit_euler_decay_of_cosine_mode() {
        // c = cos(πx) decays like exp(-κπ²t); implicit Euler is first order in τ
        let s = square(5, 2, BoundaryTag::Neumann);
        let kappa = 0.1;
        let t_end = 0.5;
        let mut errs = Vec::new();
        for steps in [10, 20] {
            let tau = t_end / steps as f64;
            let mut sys = ThetaSystem::new(s.clone(), kappa, 1.0).unwrap();
            let mut c = ScalarField::interpolate(s.clone(), |p| (PI * p[0]).cos(), 0.0);
            for n in 0..steps {
                c.time = (n + 1) as f64 * tau;
                c = diffusion_step(&c, &mut sys, &SourceTerm::Zero, None, tau).unwrap();
            }
            let decay = (-kappa * PI * PI * t_end).exp();
            let i = (0..s.num_dofs()).find(|&i| s.dof_point(i)[0] == 0.0).unwrap();
            errs.push((c.coeffs[i] - decay).abs());
        }
        let order = (errs[0] / errs[1]).log2();
        assert!((0.8..1.3).contains(&order), "{errs:?}");
    }

    #[test]
    fn iterations_do_not_grow_as_tau_shrinks() {
        let s = square(5, 2, BoundaryTag::Neumann);
        let c = ScalarField::interpolate(s.clone(), |p| (3.0 * p[0]).sin() * p[1], 0.0);
        let mut counts = Vec::new();
        for tau in [1e-1, 1e-2, 1e-3] {
            let mut sys = ThetaSystem::new(s.clone(), 1e-2, 1.0).unwrap();
            diffusion_step(&c, &mut sys, &SourceTerm::Zero, None, tau).unwrap();
            counts.push(sys.last_iterations);
        }
        assert!(counts[0] >= counts[1] && counts[1] >= counts[2], "{counts:?}");
    }
}
