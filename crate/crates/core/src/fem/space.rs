//! Lagrange P1/P2 spaces on the finest level of a mesh hierarchy, and the
//! coefficient fields living on them.

use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fem::quadrature::QuadratureRule;
use crate::geom::{self, Mat3, Point};
use crate::mesh::hierarchy::{kuhn_cell, LatticeSimplex, LocateFlags, MeshHierarchy, MicroElement, NodeSet};
use crate::mesh::BoundaryTag;

pub const MAX_LOCAL: usize = 10;

const EDGES_2D: [(usize, usize); 3] = [(0, 1), (1, 2), (0, 2)];
const EDGES_3D: [(usize, usize); 6] = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];

pub type LocalValues = [f64; MAX_LOCAL];
pub type LocalGradients = [Point; MAX_LOCAL];

/// A point located inside a micro-element of the finest level.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PointLocation {
    pub macro_id: u32,
    pub lattice: LatticeSimplex,
    /// Barycentric coordinates relative to the micro-element.
    pub mu: [f64; 4],
    /// Computational coordinates of the point.
    pub comp: Point,
}

/// Quadrature point data on one element: physical weight, position, basis
/// values and physical gradients.
#[derive(Clone, Copy, Debug)]
pub struct QuadPoint {
    pub weight: f64,
    pub phys: Point,
    pub values: LocalValues,
    pub grads: LocalGradients,
}

pub struct FunctionSpace {
    mesh: Arc<MeshHierarchy>,
    degree: usize,
    nodes: NodeSet,
    dirichlet: Vec<bool>,
}

impl FunctionSpace {
    pub fn new(mesh: Arc<MeshHierarchy>, degree: usize) -> Result<Self> {
        if !(1..=2).contains(&degree) {
            return Err(Error::Config(format!("unsupported polynomial degree {degree}")));
        }
        let nodes = mesh.node_set(mesh.depth + degree - 1);
        let dirichlet = nodes
            .primitive
            .iter()
            .map(|&p| mesh.primitive_boundary(p as usize).any(|(_, t)| t == BoundaryTag::Dirichlet))
            .collect();
        Ok(Self { mesh, degree, nodes, dirichlet })
    }

    pub fn mesh(&self) -> &Arc<MeshHierarchy> {
        &self.mesh
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn dim(&self) -> usize {
        self.mesh.dim()
    }

    pub fn num_dofs(&self) -> usize {
        self.nodes.len()
    }

    pub fn local_dofs(&self) -> usize {
        match (self.dim(), self.degree) {
            (2, 1) => 3,
            (2, _) => 6,
            (_, 1) => 4,
            _ => 10,
        }
    }

    pub fn nodes(&self) -> &NodeSet {
        &self.nodes
    }

    #[inline]
    pub fn dof_point(&self, i: usize) -> &Point {
        &self.nodes.phys[i]
    }

    #[inline]
    pub fn dof_comp(&self, i: usize) -> &Point {
        &self.nodes.comp[i]
    }

    /// Macro-primitive owning a DoF.
    #[inline]
    pub fn dof_primitive(&self, i: usize) -> usize {
        self.nodes.primitive[i] as usize
    }

    /// Boundary facets (and their tags) the DoF lies on.
    pub fn dof_boundary(&self, i: usize) -> impl Iterator<Item = (usize, BoundaryTag)> + '_ {
        self.mesh.primitive_boundary(self.dof_primitive(i))
    }

    pub fn is_boundary(&self, i: usize) -> bool {
        self.dof_boundary(i).next().is_some()
    }

    /// DoFs on boundary facets tagged Dirichlet.
    pub fn dirichlet_mask(&self) -> &[bool] {
        &self.dirichlet
    }

    pub fn num_elements(&self) -> usize {
        self.mesh.num_elements()
    }

    pub fn element(&self, index: usize) -> MicroElement {
        let t = self.mesh.template();
        MicroElement { macro_id: (index / t.len()) as u32, lattice: t[index % t.len()] }
    }

    #[inline]
    pub fn element_dofs(&self, macro_id: usize, lattice: &LatticeSimplex) -> [u32; MAX_LOCAL] {
        let dim = self.dim();
        let mut out = [0u32; MAX_LOCAL];
        if self.degree == 1 {
            for k in 0..=dim {
                out[k] = self.nodes.node(macro_id, lattice[k]);
            }
        } else {
            let dbl = |v: [u32; 3]| [2 * v[0], 2 * v[1], 2 * v[2]];
            for k in 0..=dim {
                out[k] = self.nodes.node(macro_id, dbl(lattice[k]));
            }
            for (e, &(i, j)) in edges(dim).iter().enumerate() {
                let (a, b) = (lattice[i], lattice[j]);
                out[dim + 1 + e] = self.nodes.node(macro_id, [a[0] + b[0], a[1] + b[1], a[2] + b[2]]);
            }
        }
        out
    }

    /// Locates a physical point. See [`MeshHierarchy::locate`] for the search
    /// order and clamping.
    #[inline]
    pub fn locate(&self, z: &Point, hint: usize) -> (PointLocation, LocateFlags) {
        let comp = self.mesh.blending.inverse(z);
        let (loc, flags) = self.mesh.locate(&comp, hint);
        let (lattice, mu) = kuhn_cell(self.dim(), self.mesh.n(), &loc.lambda);
        let comp = if flags.clamped {
            let mut p = [0.0; 3];
            for (k, &v) in self.mesh.macro_vertices(loc.macro_id as usize).iter().enumerate() {
                geom::axpy(&mut p, loc.lambda[k], &self.mesh.coarse.vertices[v]);
            }
            p
        } else {
            comp
        };
        (PointLocation { macro_id: loc.macro_id, lattice, mu, comp }, flags)
    }

    #[inline]
    pub fn basis(&self, mu: &[f64; 4]) -> LocalValues {
        let dim = self.dim();
        let mut v = [0.0; MAX_LOCAL];
        if self.degree == 1 {
            v[..=dim].copy_from_slice(&mu[..=dim]);
        } else {
            for k in 0..=dim {
                v[k] = mu[k] * (2.0 * mu[k] - 1.0);
            }
            for (e, &(i, j)) in edges(dim).iter().enumerate() {
                v[dim + 1 + e] = 4.0 * mu[i] * mu[j];
            }
        }
        v
    }

    /// Basis gradients with respect to the reference coordinates.
    #[inline]
    pub fn ref_gradients(&self, mu: &[f64; 4]) -> LocalGradients {
        let dim = self.dim();
        let mut lam_grad = [[0.0; 3]; 4];
        for k in 0..dim {
            lam_grad[0][k] = -1.0;
            lam_grad[k + 1][k] = 1.0;
        }
        let mut g = [[0.0; 3]; MAX_LOCAL];
        if self.degree == 1 {
            g[..=dim].copy_from_slice(&lam_grad[..=dim]);
        } else {
            for k in 0..=dim {
                g[k] = geom::scale(&lam_grad[k], 4.0 * mu[k] - 1.0);
            }
            for (e, &(i, j)) in edges(dim).iter().enumerate() {
                let mut v = geom::scale(&lam_grad[j], 4.0 * mu[i]);
                geom::axpy(&mut v, 4.0 * mu[j], &lam_grad[i]);
                g[dim + 1 + e] = v;
            }
        }
        g
    }

    /// Computational vertices and affine Jacobian of a micro-element.
    #[inline]
    pub fn element_geometry(&self, macro_id: usize, lattice: &LatticeSimplex) -> ([Point; 4], Mat3) {
        let dim = self.dim();
        let n = self.mesh.n();
        let mut verts = [[0.0; 3]; 4];
        for k in 0..=dim {
            verts[k] = self.mesh.lattice_point(macro_id, lattice[k], n);
        }
        (verts, geom::simplex_matrix(&verts[..=dim], dim))
    }

    /// Jacobian of reference -> physical coordinates at a computational point.
    #[inline]
    fn full_jacobian(&self, affine: &Mat3, comp: &Point) -> Mat3 {
        if self.mesh.blending.is_identity() {
            *affine
        } else {
            geom::matmul(&self.mesh.blending.jacobian(comp), affine)
        }
    }

    pub fn quadrature(&self, element: usize, rule: &QuadratureRule) -> Result<Vec<QuadPoint>> {
        let e = self.element(element);
        let dim = self.dim();
        let (verts, affine) = self.element_geometry(e.macro_id as usize, &e.lattice);
        let nloc = self.local_dofs();
        let mut out = Vec::with_capacity(rule.len());
        for (mu, &w) in rule.points.iter().zip(&rule.weights) {
            let mut comp = [0.0; 3];
            for k in 0..=dim {
                geom::axpy(&mut comp, mu[k], &verts[k]);
            }
            let j = self.full_jacobian(&affine, &comp);
            let (jinv, det) = geom::inverse(&j, dim);
            if det <= 0.0 || !det.is_finite() {
                return Err(Error::Geometry { element, det });
            }
            let rg = self.ref_gradients(mu);
            let mut grads = [[0.0; 3]; MAX_LOCAL];
            for i in 0..nloc {
                // J^{-T} g
                for a in 0..dim {
                    grads[i][a] = (0..dim).map(|b| jinv[b][a] * rg[i][b]).sum();
                }
            }
            out.push(QuadPoint { weight: w * det, phys: self.mesh.blending.forward(&comp), values: self.basis(mu), grads });
        }
        Ok(out)
    }

    /// Default rule for mass/stiffness-type forms of this space.
    pub fn default_rule(&self) -> QuadratureRule {
        QuadratureRule::for_degree(self.dim(), 2 * self.degree)
    }

    /// Physical basis gradients at a located point.
    pub fn gradients_at(&self, loc: &PointLocation) -> LocalGradients {
        let dim = self.dim();
        let (_, affine) = self.element_geometry(loc.macro_id as usize, &loc.lattice);
        let j = self.full_jacobian(&affine, &loc.comp);
        let (jinv, _) = geom::inverse(&j, dim);
        let rg = self.ref_gradients(&loc.mu);
        let mut grads = [[0.0; 3]; MAX_LOCAL];
        for i in 0..self.local_dofs() {
            for a in 0..dim {
                grads[i][a] = (0..dim).map(|b| jinv[b][a] * rg[i][b]).sum();
            }
        }
        grads
    }
}

#[inline]
fn edges(dim: usize) -> &'static [(usize, usize)] {
    if dim == 2 {
        &EDGES_2D
    } else {
        &EDGES_3D
    }
}

#[derive(Clone)]
pub struct ScalarField {
    pub space: Arc<FunctionSpace>,
    pub coeffs: Vec<f64>,
    pub time: f64,
}

impl std::fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ScalarField").field("len", &self.coeffs.len()).field("time", &self.time).finish()
    }
}

impl ScalarField {
    pub fn zeros(space: Arc<FunctionSpace>, time: f64) -> Self {
        let n = space.num_dofs();
        Self { space, coeffs: vec![0.0; n], time }
    }

    pub fn from_coeffs(space: Arc<FunctionSpace>, coeffs: Vec<f64>, time: f64) -> Self {
        assert_eq!(coeffs.len(), space.num_dofs());
        Self { space, coeffs, time }
    }

    /// Nodal interpolation of `f` at the physical DoF coordinates.
    pub fn interpolate(space: Arc<FunctionSpace>, f: impl Fn(&Point) -> f64 + Sync, time: f64) -> Self {
        let coeffs = (0..space.num_dofs()).into_par_iter().map(|i| f(space.dof_point(i))).collect();
        Self { space, coeffs, time }
    }

    #[inline]
    pub fn evaluate_located(&self, loc: &PointLocation) -> f64 {
        let dofs = self.space.element_dofs(loc.macro_id as usize, &loc.lattice);
        let phi = self.space.basis(&loc.mu);
        (0..self.space.local_dofs()).map(|k| phi[k] * self.coeffs[dofs[k] as usize]).sum()
    }

    /// Value at a physical point; out-of-domain points are clamped.
    pub fn evaluate(&self, z: &Point, hint: usize) -> f64 {
        let (loc, _) = self.space.locate(z, hint);
        self.evaluate_located(&loc)
    }

    pub fn gradient_located(&self, loc: &PointLocation) -> Point {
        let dofs = self.space.element_dofs(loc.macro_id as usize, &loc.lattice);
        let g = self.space.gradients_at(loc);
        let mut out = [0.0; 3];
        for k in 0..self.space.local_dofs() {
            geom::axpy(&mut out, self.coeffs[dofs[k] as usize], &g[k]);
        }
        out
    }

    pub fn max(&self) -> f64 {
        self.coeffs.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.coeffs.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// `d` scalar components on one space.
#[derive(Clone, Debug)]
pub struct VectorField {
    pub components: Vec<ScalarField>,
}

impl VectorField {
    pub fn zeros(space: Arc<FunctionSpace>, time: f64) -> Self {
        let d = space.dim();
        Self { components: (0..d).map(|_| ScalarField::zeros(space.clone(), time)).collect() }
    }

    pub fn interpolate(space: Arc<FunctionSpace>, f: impl Fn(&Point) -> Point + Sync, time: f64) -> Self {
        let values: Vec<Point> = (0..space.num_dofs()).into_par_iter().map(|i| f(space.dof_point(i))).collect();
        let d = space.dim();
        Self {
            components: (0..d)
                .map(|a| ScalarField::from_coeffs(space.clone(), values.iter().map(|v| v[a]).collect(), time))
                .collect(),
        }
    }

    pub fn space(&self) -> &Arc<FunctionSpace> {
        &self.components[0].space
    }

    pub fn time(&self) -> f64 {
        self.components[0].time
    }

    pub fn set_time(&mut self, t: f64) {
        for c in &mut self.components {
            c.time = t;
        }
    }

    #[inline]
    pub fn evaluate_located(&self, loc: &PointLocation) -> Point {
        let space = self.space();
        let dofs = space.element_dofs(loc.macro_id as usize, &loc.lattice);
        let phi = space.basis(&loc.mu);
        let mut out = [0.0; 3];
        for (a, c) in self.components.iter().enumerate() {
            out[a] = (0..space.local_dofs()).map(|k| phi[k] * c.coeffs[dofs[k] as usize]).sum();
        }
        out
    }

    pub fn evaluate(&self, z: &Point, hint: usize) -> Point {
        let (loc, _) = self.space().locate(z, hint);
        self.evaluate_located(&loc)
    }

    /// Largest Euclidean norm over the DoF values.
    pub fn max_norm(&self) -> f64 {
        let n = self.space().num_dofs();
        (0..n)
            .map(|i| self.components.iter().map(|c| c.coeffs[i] * c.coeffs[i]).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{BlendingMap, CoarseMesh};
    use proptest::prelude::*;

    fn square_space(depth: usize, degree: usize) -> Arc<FunctionSpace> {
        let mesh = MeshHierarchy::refine(CoarseMesh::unit_square(BoundaryTag::Dirichlet), depth, BlendingMap::Identity).unwrap();
        Arc::new(FunctionSpace::new(Arc::new(mesh), degree).unwrap())
    }

    #[test]
    fn p2_single_triangle_has_six_dofs() {
        let coarse = CoarseMesh::parse("2 3 1 3\n0 0\n1 0\n0 1\n0 1 2\n0 1 Neumann\n1 2 Neumann\n0 2 Neumann\n").unwrap();
        let mesh = Arc::new(MeshHierarchy::refine(coarse, 0, BlendingMap::Identity).unwrap());
        assert_eq!(FunctionSpace::new(mesh.clone(), 2).unwrap().num_dofs(), 6);
        assert_eq!(FunctionSpace::new(mesh, 1).unwrap().num_dofs(), 3);
    }

    #[test]
    fn p1_reproduces_linear() {
        let space = square_space(4, 1);
        let f = ScalarField::interpolate(space, |p| p[0], 0.0);
        assert_eq!(f.evaluate(&[0.37, 0.81, 0.0], 0), 0.37);
    }

    #[test]
    fn p2_dof_count_matches_p1_on_finer_level() {
        assert_eq!(square_space(6, 2).num_dofs(), 16641);
        assert_eq!(square_space(7, 1).num_dofs(), 16641);
    }

    #[test]
    fn dirichlet_mask_is_boundary() {
        let space = square_space(3, 2);
        let count = space.dirichlet_mask().iter().filter(|&&b| b).count();
        assert_eq!(count, 4 * 16);
        for i in 0..space.num_dofs() {
            let p = space.dof_point(i);
            let on = p[0] == 0.0 || p[0] == 1.0 || p[1] == 0.0 || p[1] == 1.0;
            assert_eq!(on, space.dirichlet_mask()[i]);
        }
    }

    #[test]
    fn p2_gradient_of_quadratic() {
        let space = square_space(3, 2);
        let f = ScalarField::interpolate(space.clone(), |p| p[0] * p[0] + 3.0 * p[0] * p[1], 0.0);
        let z = [0.3, 0.7, 0.0];
        let (loc, _) = space.locate(&z, 0);
        let g = f.gradient_located(&loc);
        assert!((g[0] - (2.0 * 0.3 + 3.0 * 0.7)).abs() < 1e-12);
        assert!((g[1] - 0.9).abs() < 1e-12);
    }

    #[test]
    fn p2_reproduces_quadratics_3d() {
        let mesh = MeshHierarchy::refine(CoarseMesh::unit_cube(BoundaryTag::Neumann), 2, BlendingMap::Identity).unwrap();
        let space = Arc::new(FunctionSpace::new(Arc::new(mesh), 2).unwrap());
        let q = |p: &Point| p[0] * p[1] - 2.0 * p[2] * p[2] + p[0];
        let f = ScalarField::interpolate(space.clone(), q, 0.0);
        for z in [[0.1, 0.2, 0.3], [0.77, 0.5, 0.01], [0.33, 0.9, 0.61]] {
            assert!((f.evaluate(&z, 3) - q(&z)).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn p2_quadratic_reproduction(x in 0.0f64..1.0, y in 0.0f64..1.0, hint in 0usize..2) {
            let space = square_space(3, 2);
            let f = ScalarField::interpolate(space, |p| p[0] * p[0], 0.0);
            prop_assert!((f.evaluate(&[x, y, 0.0], hint) - x * x).abs() < 1e-12);
        }

        #[test]
        fn evaluate_is_hint_independent(x in 0.0f64..1.0, y in 0.0f64..1.0) {
            let space = square_space(3, 2);
            let f = ScalarField::interpolate(space, |p| (3.0 * p[0]).sin() * p[1].exp(), 0.0);
            let a = f.evaluate(&[x, y, 0.0], 0);
            let b = f.evaluate(&[x, y, 0.0], 1);
            prop_assert!((a - b).abs() <= 1e-14);
        }

        #[test]
        fn interface_point_agrees(s in 0.0f64..1.0) {
            // on the diagonal shared by both macro triangles
            let space = square_space(3, 2);
            let f = ScalarField::interpolate(space, |p| (3.0 * p[0]).sin() * p[1].exp(), 0.0);
            let z = [s, s, 0.0];
            prop_assert!((f.evaluate(&z, 0) - f.evaluate(&z, 1)).abs() <= 1e-14);
        }
    }
}
