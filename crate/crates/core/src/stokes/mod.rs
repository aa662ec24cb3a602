//! Taylor-Hood (P2-P1) Stokes solver with Boussinesq forcing.
//!
//! The saddle-point system `[K Bᵀ; B 0][u; p] = [f; 0]` is reduced to the
//! pressure Schur complement `B K⁻¹ Bᵀ p = B K⁻¹ f`, solved by conjugate
//! gradients preconditioned with the pressure mass matrix. `K` is factored
//! once with a sparse Cholesky.

pub mod cholesky;

use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fem::sparse::{dot, norm2};
use crate::fem::{assemble, assemble_blocks, assemble_vector, CsrMatrix, FunctionSpace, OperatorKind, ScalarField, VectorField};
use crate::geom::{self, Point};
use crate::mesh::BoundaryTag;

pub use cholesky::SkylineCholesky;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WallCondition {
    NoSlip,
    /// Zero normal velocity, zero tangential traction. Axis-aligned walls only.
    FreeSlip,
    Open,
}

/// Velocity condition per boundary tag.
#[derive(Clone, Debug)]
pub struct VelocityBC {
    pub rules: Vec<(BoundaryTag, WallCondition)>,
}

impl Default for VelocityBC {
    fn default() -> Self {
        Self {
            rules: vec![
                (BoundaryTag::Dirichlet, WallCondition::NoSlip),
                (BoundaryTag::Neumann, WallCondition::NoSlip),
                (BoundaryTag::NoSlip, WallCondition::NoSlip),
                (BoundaryTag::FreeSlip, WallCondition::FreeSlip),
                (BoundaryTag::Interior, WallCondition::Open),
            ],
        }
    }
}

impl VelocityBC {
    pub fn with(mut self, tag: BoundaryTag, cond: WallCondition) -> Self {
        self.rules.retain(|(t, _)| *t != tag);
        self.rules.push((tag, cond));
        self
    }

    pub fn condition(&self, tag: BoundaryTag) -> WallCondition {
        self.rules.iter().find(|(t, _)| *t == tag).map_or(WallCondition::Open, |(_, c)| *c)
    }

    /// Constrained velocity unknowns, indexed `a * ndofs + i`.
    pub fn constrained(&self, space: &FunctionSpace) -> Result<Vec<bool>> {
        let d = space.dim();
        let nv = space.num_dofs();
        let mesh = space.mesh();
        let mut mask = vec![false; d * nv];
        for i in 0..nv {
            for (facet, tag) in space.dof_boundary(i) {
                match self.condition(tag) {
                    WallCondition::NoSlip => (0..d).for_each(|a| mask[a * nv + i] = true),
                    WallCondition::FreeSlip => {
                        if !mesh.blending.is_identity() {
                            return Err(Error::Config("free-slip walls need an unblended mesh".into()));
                        }
                        let n = mesh.facet_normal(facet);
                        let axis = (0..d).max_by(|&a, &b| n[a].abs().total_cmp(&n[b].abs())).expect("d > 0");
                        if (n[axis].abs() - 1.0).abs() > 1e-12 {
                            return Err(Error::Config(format!("free-slip facet {facet} is not axis-aligned")));
                        }
                        mask[axis * nv + i] = true;
                    }
                    WallCondition::Open => {}
                }
            }
        }
        Ok(mask)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Gravity {
    Constant(Point),
    /// `x / |x|`.
    Radial,
}

impl Gravity {
    #[inline]
    pub fn at(&self, x: &Point) -> Point {
        match self {
            Gravity::Constant(g) => *g,
            Gravity::Radial => geom::scale(x, 1.0 / geom::norm(x)),
        }
    }
}

/// `F(c) = Ra · c · g`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoussinesqForce {
    pub ra: f64,
    pub gravity: Gravity,
}

impl BoussinesqForce {
    pub fn new(ra: f64, gravity: Gravity) -> Result<Self> {
        if let Gravity::Constant(g) = gravity {
            if (geom::norm(&g) - 1.0).abs() > 1e-12 {
                return Err(Error::Config(format!("gravity {g:?} is not a unit vector")));
            }
        }
        Ok(Self { ra, gravity })
    }
}

/// Load vector `(Ra c g, v_h)` on the velocity space, block-major by component.
pub fn assemble_force(velocity: &FunctionSpace, c: &ScalarField, force: &BoussinesqForce) -> Result<Vec<f64>> {
    let d = velocity.dim();
    let n = velocity.local_dofs();
    let rule = velocity.default_rule();
    let cs = &c.space;
    if !Arc::ptr_eq(cs.mesh(), velocity.mesh()) {
        return Err(Error::Config("temperature and velocity on different meshes".into()));
    }
    let nc = cs.local_dofs();
    let cbasis: Vec<_> = rule.points.iter().map(|mu| cs.basis(mu)).collect();
    assemble_vector(velocity, d, &rule, |e, _, qps, out| {
        let el = cs.element(e);
        let cd = cs.element_dofs(el.macro_id as usize, &el.lattice);
        for (q, qp) in qps.iter().enumerate() {
            let cv: f64 = (0..nc).map(|k| cbasis[q][k] * c.coeffs[cd[k] as usize]).sum();
            let g = force.gravity.at(&qp.phys);
            let s = qp.weight * force.ra * cv;
            for a in 0..d {
                for i in 0..n {
                    out[a * n + i] += s * g[a] * qp.values[i];
                }
            }
        }
    })
}

/// Submatrix keeping rows/columns with a `Some` index in the maps.
fn restrict(a: &CsrMatrix, rows: &[Option<u32>], cols: &[Option<u32>], nr: usize, nc: usize) -> CsrMatrix {
    let mut row_ptr = Vec::with_capacity(nr + 1);
    row_ptr.push(0);
    let mut col_idx = Vec::new();
    let mut values = Vec::new();
    for i in 0..a.nrows {
        if rows[i].is_none() {
            continue;
        }
        let (c, v) = a.row(i);
        for (&j, &x) in c.iter().zip(v) {
            if let Some(jn) = cols[j as usize] {
                col_idx.push(jn);
                values.push(x);
            }
        }
        row_ptr.push(col_idx.len());
    }
    CsrMatrix { nrows: nr, ncols: nc, row_ptr, col_idx, values, symmetric: a.symmetric }
}

#[derive(Clone, Debug)]
pub struct StokesSolution {
    pub u: VectorField,
    pub p: ScalarField,
    pub iterations: usize,
    /// `‖B u‖₂ / ‖u‖₂` (zero for a zero velocity).
    pub divergence: f64,
}

pub struct StokesSystem {
    pub velocity: Arc<FunctionSpace>,
    pub pressure: Arc<FunctionSpace>,
    pub mu: f64,
    pub bc: VelocityBC,
    pub tol: f64,
    pub max_iter: usize,
    /// Number of completed solves.
    pub solves: usize,
    constrained: Vec<bool>,
    free: Vec<usize>,
    b_free: CsrMatrix,
    bt_free: CsrMatrix,
    pressure_mass: CsrMatrix,
    k_factor: SkylineCholesky,
    mp_factor: SkylineCholesky,
    mass_ones: Vec<f64>,
    area: f64,
}

impl StokesSystem {
    /// `velocity` must be a P2 space; the P1 pressure space is built on the
    /// same hierarchy.
    pub fn new(velocity: Arc<FunctionSpace>, mu: f64, bc: VelocityBC) -> Result<Self> {
        if velocity.degree() != 2 {
            return Err(Error::Config("Taylor-Hood needs a P2 velocity space".into()));
        }
        if !(mu > 0.0) {
            return Err(Error::Config(format!("viscosity must be positive, got {mu}")));
        }
        let pressure = Arc::new(FunctionSpace::new(velocity.mesh().clone(), 1)?);
        let d = velocity.dim();
        let nv = velocity.num_dofs();
        let np = pressure.num_dofs();
        let rule = velocity.default_rule();
        let n = velocity.local_dofs();
        let m = pressure.local_dofs();

        let k = assemble_blocks(&velocity, &velocity, d, d, &rule, |qr, _, out| {
            let w = d * n;
            for q in qr {
                for a in 0..d {
                    for i in 0..n {
                        for b in 0..d {
                            for j in 0..n {
                                let mut v = q.grads[i][b] * q.grads[j][a];
                                if a == b {
                                    v += (0..d).map(|c| q.grads[i][c] * q.grads[j][c]).sum::<f64>();
                                }
                                out[(a * n + i) * w + b * n + j] += mu * q.weight * v;
                            }
                        }
                    }
                }
            }
        })?;
        let b = assemble_blocks(&pressure, &velocity, 1, d, &rule, |qp, qv, out| {
            let w = d * n;
            for (pq, vq) in qp.iter().zip(qv) {
                for kk in 0..m {
                    for bb in 0..d {
                        for j in 0..n {
                            out[kk * w + bb * n + j] -= vq.weight * pq.values[kk] * vq.grads[j][bb];
                        }
                    }
                }
            }
        })?;
        let pressure_mass = assemble(&pressure, OperatorKind::Mass)?;

        let constrained = bc.constrained(&velocity)?;
        let free: Vec<usize> = (0..d * nv).filter(|&g| !constrained[g]).collect();
        let mut free_index = vec![None; d * nv];
        for (f, &g) in free.iter().enumerate() {
            free_index[g] = Some(f as u32);
        }
        let all_p: Vec<Option<u32>> = (0..np as u32).map(Some).collect();
        let mut kff = restrict(&k, &free_index, &free_index, free.len(), free.len());
        kff.symmetric = true;
        let b_free = restrict(&b, &all_p, &free_index, np, free.len());
        let bt_free = b_free.transpose();
        let k_factor = SkylineCholesky::factor(&kff)?;
        let mp_factor = SkylineCholesky::factor(&pressure_mass)?;
        let mass_ones = pressure_mass.apply(&vec![1.0; np]);
        let area = mass_ones.iter().sum();
        log::debug!("stokes: {} free velocity unknowns, {} pressures, envelope {}", free.len(), np, k_factor.envelope());
        Ok(Self {
            velocity,
            pressure,
            mu,
            bc,
            tol: 1e-12,
            max_iter: 1000,
            solves: 0,
            constrained,
            free,
            b_free,
            bt_free,
            pressure_mass,
            k_factor,
            mp_factor,
            mass_ones,
            area,
        })
    }

    pub fn constrained(&self) -> &[bool] {
        &self.constrained
    }

    pub fn pressure_mass(&self) -> &CsrMatrix {
        &self.pressure_mass
    }

    fn remove_mean(&self, p: &mut [f64]) {
        let mean = dot(&self.mass_ones, p) / self.area;
        p.par_iter_mut().for_each(|v| *v -= mean);
    }

    fn schur_apply(&self, p: &[f64]) -> Vec<f64> {
        let w = self.k_factor.solve(&self.bt_free.apply(p));
        self.b_free.apply(&w)
    }

    /// Solves with a given velocity load vector (block-major, full length).
    pub fn solve_load(&mut self, load: &[f64], time: f64) -> Result<StokesSolution> {
        let d = self.velocity.dim();
        let nv = self.velocity.num_dofs();
        let np = self.pressure.num_dofs();
        let f: Vec<f64> = self.free.iter().map(|&g| load[g]).collect();
        let zero = |it| StokesSolution {
            u: VectorField::zeros(self.velocity.clone(), time),
            p: ScalarField::zeros(self.pressure.clone(), time),
            iterations: it,
            divergence: 0.0,
        };
        if norm2(&f) == 0.0 {
            self.solves += 1;
            return Ok(zero(0));
        }
        let g = self.b_free.apply(&self.k_factor.solve(&f));
        let gnorm = norm2(&g);
        let mut p = vec![0.0; np];
        let mut iterations = 0;
        if gnorm > 0.0 {
            let mut r = g.clone();
            let mut z = self.mp_factor.solve(&r);
            self.remove_mean(&mut z);
            let mut s = z.clone();
            let mut rz = dot(&r, &z);
            let mut history = vec![1.0];
            loop {
                if iterations >= self.max_iter {
                    return Err(Error::SolverFailure { solver: "stokes-schur", iterations, residual: norm2(&r) / gnorm, history });
                }
                iterations += 1;
                let ss = self.schur_apply(&s);
                let alpha = rz / dot(&s, &ss);
                p.par_iter_mut().zip(&s).for_each(|(p, s)| *p += alpha * s);
                r.par_iter_mut().zip(&ss).for_each(|(r, q)| *r -= alpha * q);
                let res = norm2(&r) / gnorm;
                history.push(res);
                if res <= self.tol {
                    break;
                }
                z = self.mp_factor.solve(&r);
                self.remove_mean(&mut z);
                let rz_new = dot(&r, &z);
                let beta = rz_new / rz;
                rz = rz_new;
                s.par_iter_mut().zip(&z).for_each(|(s, z)| *s = z + beta * *s);
            }
        }
        let mut rhs = self.bt_free.apply(&p);
        rhs.par_iter_mut().zip(&f).for_each(|(r, f)| *r = f - *r);
        let uf = self.k_factor.solve(&rhs);
        let unorm = norm2(&uf);
        let divergence = if unorm > 0.0 { norm2(&self.b_free.apply(&uf)) / unorm } else { 0.0 };
        self.remove_mean(&mut p);
        let mut u = vec![0.0; d * nv];
        for (k, &gi) in self.free.iter().enumerate() {
            u[gi] = uf[k];
        }
        let components =
            (0..d).map(|a| ScalarField::from_coeffs(self.velocity.clone(), u[a * nv..(a + 1) * nv].to_vec(), time)).collect();
        self.solves += 1;
        Ok(StokesSolution {
            u: VectorField { components },
            p: ScalarField::from_coeffs(self.pressure.clone(), p, time),
            iterations,
            divergence,
        })
    }
}

/// Velocity and pressure for the buoyancy of temperature `c`.
pub fn stokes_solve(sys: &mut StokesSystem, c: &ScalarField, force: &BoussinesqForce) -> Result<StokesSolution> {
    let load = assemble_force(&sys.velocity, c, force)?;
    sys.solve_load(&load, c.time)
}
