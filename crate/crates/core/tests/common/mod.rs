//! Independent reference computations shared by the integration tests.

#![allow(dead_code)]

use std::f64::consts::PI;
use std::sync::Arc;

use mmoc::fem::{assemble, assemble_vector, FunctionSpace, OperatorKind, QuadratureRule, ScalarField};
use mmoc::mesh::{BlendingMap, BoundaryTag, CoarseMesh, MeshHierarchy};
use mmoc::partition::partition_mesh;
use mmoc::stokes::{StokesSolution, StokesSystem, VelocityBC};
use mmoc::transport::{backtrack, create_particles, positions_by_dof, RKScheme, VelocityPair};
use mmoc::Point;

pub fn space(coarse: CoarseMesh, depth: usize, degree: usize, blending: BlendingMap) -> Arc<FunctionSpace> {
    let mesh = MeshHierarchy::refine(coarse, depth, blending).unwrap();
    Arc::new(FunctionSpace::new(Arc::new(mesh), degree).unwrap())
}

pub fn unit_square(depth: usize, degree: usize) -> Arc<FunctionSpace> {
    space(CoarseMesh::unit_square(BoundaryTag::Neumann), depth, degree, BlendingMap::Identity)
}

pub fn annulus(depth: usize, degree: usize) -> Arc<FunctionSpace> {
    space(
        CoarseMesh::annulus(0.5, 1.5, 6, 2, BoundaryTag::Neumann),
        depth,
        degree,
        BlendingMap::Annulus { r_min: 0.5, r_max: 1.5, sectors: 6 },
    )
}

/// Observed convergence order from the last two entries of an error
/// sequence whose step halves each time.
pub fn last_order(errs: &[f64]) -> f64 {
    let n = errs.len();
    (errs[n - 2] / errs[n - 1]).log2()
}

/// Maximum distance between RK backtracked and exact departure points for
/// the solid-body rotation about (0.5, 0.5), over `steps` steps of total
/// length `t`. Only points whose orbit stays inside the square count.
pub fn rotation_backtrack_error(rk: &RKScheme, steps: usize, t: f64) -> f64 {
    let s = unit_square(3, 1);
    let layout = partition_mesh(s.mesh(), 1).unwrap();
    let u = Arc::new(mmoc::fem::VectorField::interpolate(s.clone(), |p| [0.5 - p[1], p[0] - 0.5, 0.0], 0.0));
    let tau = t / steps as f64;
    let mut ps = create_particles(&s, &layout);
    for k in 0..steps {
        let vp = VelocityPair::steady(u.clone(), k as f64 * tau, (k + 1) as f64 * tau).unwrap();
        backtrack(&mut ps, &layout, &s, &vp, rk);
    }
    let pos = positions_by_dof(&ps, s.num_dofs());
    let (sn, cs) = (-t).sin_cos();
    let mut worst: f64 = 0.0;
    for (i, x) in pos.iter().enumerate() {
        let p = s.dof_point(i);
        let (dx, dy) = (p[0] - 0.5, p[1] - 0.5);
        if dx * dx + dy * dy > 0.45 * 0.45 {
            continue;
        }
        let e = [0.5 + cs * dx - sn * dy, 0.5 + sn * dx + cs * dy];
        worst = worst.max(((x[0] - e[0]).powi(2) + (x[1] - e[1]).powi(2)).sqrt());
    }
    worst
}

/// Largest deviation between a polynomial and its interpolant, sampled on
/// a lattice of points that does not align with the mesh.
pub fn reproduction_error(s: &Arc<FunctionSpace>, f: impl Fn(&Point) -> f64 + Sync + Copy) -> f64 {
    let c = ScalarField::interpolate(s.clone(), f, 0.0);
    let dim = s.dim();
    let n = 13;
    let mut worst: f64 = 0.0;
    let coords = |k: usize| (k as f64 + 0.37) / n as f64;
    for i in 0..n {
        for j in 0..n {
            for k in 0..if dim == 3 { n } else { 1 } {
                let p = [coords(i), coords(j), if dim == 3 { coords(k) } else { 0.0 }];
                worst = worst.max((c.evaluate(&p, 0) - f(&p)).abs());
            }
        }
    }
    worst
}

/// `max_i |(M𝟙)_i − ∫φ_i|` and `|𝟙ᵀM𝟙 − area|`, with `∫φ_i` assembled
/// separately by quadrature.
pub fn mass_identities(s: &FunctionSpace, area: f64) -> (f64, f64) {
    let m = assemble(s, OperatorKind::Mass).unwrap();
    let rows = m.apply(&vec![1.0; s.num_dofs()]);
    let n = s.local_dofs();
    let integrals = assemble_vector(s, 1, &s.default_rule(), |_, _, qps, out| {
        for q in qps {
            for i in 0..n {
                out[i] += q.weight * q.values[i];
            }
        }
    })
    .unwrap();
    let row_err = rows.iter().zip(&integrals).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    (row_err, (m.sum() - area).abs())
}

const P_AMP: f64 = 10.0;

fn mms_u(x: &Point) -> Point {
    let (sx, cx, sy, cy) = ((PI * x[0]).sin(), (PI * x[0]).cos(), (PI * x[1]).sin(), (PI * x[1]).cos());
    [2.0 * PI * sx * sx * sy * cy, -2.0 * PI * sx * cx * sy * sy, 0.0]
}

fn mms_p(x: &Point) -> f64 {
    P_AMP * (PI * x[0]).cos() * (PI * x[1]).cos()
}

/// `−Δu + ∇p` for the stream function `sin²(πx) sin²(πy)`.
fn mms_force(x: &Point) -> Point {
    let (sx, cx, sy, cy) = ((PI * x[0]).sin(), (PI * x[0]).cos(), (PI * x[1]).sin(), (PI * x[1]).cos());
    let p2 = PI * PI;
    [
        PI * (16.0 * p2 * sx * sx * sy - P_AMP * sx - 4.0 * p2 * sy) * cy,
        PI * (-16.0 * p2 * sx * sy * sy + 4.0 * p2 * sx - P_AMP * sy) * cx,
        0.0,
    ]
}

fn stokes_l2_errors(sol: &StokesSolution) -> (f64, f64) {
    let rule = QuadratureRule::for_degree(2, 4);
    let (mut eu, mut ep) = (0.0, 0.0);
    let vs = sol.u.space();
    let ps = &sol.p.space;
    for e in 0..vs.num_elements() {
        let el = vs.element(e);
        let qv = vs.quadrature(e, &rule).unwrap();
        let qp = ps.quadrature(e, &rule).unwrap();
        let dv = vs.element_dofs(el.macro_id as usize, &el.lattice);
        let dp = ps.element_dofs(el.macro_id as usize, &el.lattice);
        for (a, b) in qv.iter().zip(&qp) {
            let ue = mms_u(&a.phys);
            for c in 0..2 {
                let uh: f64 = (0..6).map(|k| a.values[k] * sol.u.components[c].coeffs[dv[k] as usize]).sum();
                eu += a.weight * (uh - ue[c]).powi(2);
            }
            let ph: f64 = (0..3).map(|k| b.values[k] * sol.p.coeffs[dp[k] as usize]).sum();
            ep += b.weight * (ph - mms_p(&b.phys)).powi(2);
        }
    }
    (eu.sqrt(), ep.sqrt())
}

/// L² velocity and pressure errors of the Taylor-Hood solution of a
/// manufactured no-slip flow on the unit square, per refinement depth.
pub fn stokes_mms_errors(depths: &[usize]) -> Vec<(f64, f64)> {
    depths
        .iter()
        .map(|&depth| {
            let s = space(CoarseMesh::unit_square(BoundaryTag::NoSlip), depth, 2, BlendingMap::Identity);
            let mut sys = StokesSystem::new(s.clone(), 1.0, VelocityBC::default()).unwrap();
            let n = s.local_dofs();
            let load = assemble_vector(&s, 2, &s.default_rule(), |_, _, qps, out| {
                for q in qps {
                    let f = mms_force(&q.phys);
                    for a in 0..2 {
                        for i in 0..n {
                            out[a * n + i] += q.weight * f[a] * q.values[i];
                        }
                    }
                }
            })
            .unwrap();
            stokes_l2_errors(&sys.solve_load(&load, 0.0).unwrap())
        })
        .collect()
}
