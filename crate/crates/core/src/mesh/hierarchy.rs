//! Block-structured refinement of a coarse simplex mesh.
//!
//! Every coarse element (macro-volume) is refined uniformly `L` times. On
//! level `ℓ` the micro-vertices of a macro-volume are the lattice points
//! `(x, y, z)` with `x + y + z <= n`, `n = 2^ℓ`, measured in units of the
//! macro edge vectors. In the cumulative coordinates `(a, b, c) = (x+y+z,
//! y+z, z)` the macro-volume is the Kuhn simplex `n >= a >= b >= c >= 0`,
//! and the micro-elements are the unit Kuhn simplices it contains. This is
//! the red refinement of Bey for tetrahedra (every child congruence class
//! is a unit Kuhn simplex) and the usual 4-triangle midpoint split in 2D.
//! Finding the micro-element that holds a point is therefore a floor and a
//! sort of three numbers.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::geom::{self, Mat3, Point};
use crate::mesh::blending::BlendingMap;
use crate::mesh::coarse::{BoundaryTag, CoarseMesh};

const INSIDE_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PrimitiveKind {
    Volume,
    Face,
    Edge,
    Vertex,
}

#[derive(Clone, Debug)]
pub struct MacroPrimitive {
    pub id: usize,
    pub kind: PrimitiveKind,
    /// Sorted coarse vertex ids spanning the primitive.
    pub vertices: Vec<usize>,
    /// Volumes: vertex-adjacent volumes (excluding itself). Interfaces: the
    /// volumes containing the primitive.
    pub neighbors: Vec<usize>,
}

/// Lattice vertex coordinates of a micro-simplex inside its macro-volume.
pub type LatticeSimplex = [[u32; 3]; 4];

#[derive(Clone, Copy, Debug)]
pub struct MicroElement {
    pub macro_id: u32,
    pub lattice: LatticeSimplex,
}

/// A point located in a macro-volume, with barycentric coordinates
/// relative to the macro-volume's vertices.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Location {
    pub macro_id: u32,
    pub lambda: [f64; 4],
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LocateFlags {
    /// The point was not found in the hinted volume or its neighbours.
    pub escalated: bool,
    /// The point was outside the domain and has been projected onto it.
    pub clamped: bool,
}

struct VolumeGeometry {
    vertices: [usize; 4],
    origin: Point,
    to_lambda: Mat3,
}

/// Globally numbered lattice nodes on one refinement level.
pub struct NodeSet {
    pub level: usize,
    pub n: usize,
    pub comp: Vec<Point>,
    pub phys: Vec<Point>,
    /// Owning macro-primitive of every node.
    pub primitive: Vec<u32>,
    tables: Vec<Vec<u32>>,
    stride: usize,
    dim: usize,
}

impl NodeSet {
    pub fn len(&self) -> usize {
        self.comp.len()
    }

    pub fn is_empty(&self) -> bool {
        self.comp.is_empty()
    }

    #[inline]
    pub fn node(&self, macro_id: usize, p: [u32; 3]) -> u32 {
        let s = self.stride;
        let idx = p[0] as usize + s * (p[1] as usize + if self.dim == 3 { s * p[2] as usize } else { 0 });
        self.tables[macro_id][idx]
    }
}

pub struct MeshHierarchy {
    pub coarse: CoarseMesh,
    pub depth: usize,
    pub blending: BlendingMap,
    pub primitives: Vec<MacroPrimitive>,
    pub num_volumes: usize,
    volumes: Vec<VolumeGeometry>,
    prim_by_vertices: HashMap<Vec<usize>, usize>,
    /// Boundary facet indices containing each primitive.
    prim_facets: Vec<Vec<usize>>,
    /// Adjacent volume of every boundary facet.
    facet_volume: Vec<usize>,
    vertices: NodeSet,
    template: Vec<LatticeSimplex>,
    h_min: f64,
}

impl MeshHierarchy {
    /// Refines `coarse` uniformly `depth` times.
    pub fn refine(coarse: CoarseMesh, depth: usize, blending: BlendingMap) -> Result<Self> {
        let dim = coarse.dim;
        if depth > 10 {
            return Err(Error::Config(format!("refinement depth {depth} is unreasonably large")));
        }
        for e in 0..coarse.elements.len() {
            let m = coarse.element_measure(e);
            if m <= 0.0 {
                return Err(Error::DegenerateElement { element: e, measure: m });
            }
        }
        let num_volumes = coarse.elements.len();

        // macro-primitives: volumes first, then faces, edges, vertices
        let mut primitives = Vec::new();
        let mut prim_by_vertices: HashMap<Vec<usize>, usize> = HashMap::new();
        for (e, el) in coarse.elements.iter().enumerate() {
            let mut v = el.clone();
            v.sort_unstable();
            prim_by_vertices.insert(v.clone(), e);
            primitives.push(MacroPrimitive { id: e, kind: PrimitiveKind::Volume, vertices: v, neighbors: vec![] });
        }
        let kinds: &[(usize, PrimitiveKind)] = if dim == 3 {
            &[(3, PrimitiveKind::Face), (2, PrimitiveKind::Edge), (1, PrimitiveKind::Vertex)]
        } else {
            &[(2, PrimitiveKind::Edge), (1, PrimitiveKind::Vertex)]
        };
        for &(size, kind) in kinds {
            let mut subsets: Vec<Vec<usize>> = Vec::new();
            for el in &coarse.elements {
                let mut v = el.clone();
                v.sort_unstable();
                for s in subsets_of_size(&v, size) {
                    subsets.push(s);
                }
            }
            subsets.sort();
            subsets.dedup();
            for s in subsets {
                let id = primitives.len();
                prim_by_vertices.insert(s.clone(), id);
                primitives.push(MacroPrimitive { id, kind, vertices: s, neighbors: vec![] });
            }
        }
        // incidence
        let mut vertex_volumes: Vec<Vec<usize>> = vec![Vec::new(); coarse.vertices.len()];
        for (e, el) in coarse.elements.iter().enumerate() {
            for &v in el {
                vertex_volumes[v].push(e);
            }
        }
        for p in primitives.iter_mut() {
            if p.kind == PrimitiveKind::Volume {
                let mut nb: Vec<usize> = p.vertices.iter().flat_map(|&v| vertex_volumes[v].iter().copied()).collect();
                nb.sort_unstable();
                nb.dedup();
                nb.retain(|&e| e != p.id);
                p.neighbors = nb;
            } else {
                let mut nb: Vec<usize> = vertex_volumes[p.vertices[0]]
                    .iter()
                    .copied()
                    .filter(|&e| p.vertices.iter().all(|v| coarse.elements[e].contains(v)))
                    .collect();
                nb.sort_unstable();
                p.neighbors = nb;
            }
        }
        let prim_facets = primitives
            .iter()
            .map(|p| {
                coarse
                    .boundary
                    .iter()
                    .enumerate()
                    .filter(|(_, f)| p.vertices.iter().all(|v| f.vertices.contains(v)))
                    .map(|(i, _)| i)
                    .collect()
            })
            .collect();
        let facet_volume = coarse
            .boundary
            .iter()
            .map(|f| {
                vertex_volumes[f.vertices[0]]
                    .iter()
                    .copied()
                    .find(|&e| f.vertices.iter().all(|v| coarse.elements[e].contains(v)))
                    .expect("boundary facet belongs to an element")
            })
            .collect();

        let volumes = coarse
            .elements
            .iter()
            .map(|el| {
                let pts: Vec<Point> = el.iter().map(|&v| coarse.vertices[v]).collect();
                let m = geom::simplex_matrix(&pts, dim);
                let (inv, _) = geom::inverse(&m, dim);
                let mut vertices = [0usize; 4];
                vertices[..=dim].copy_from_slice(el);
                VolumeGeometry { vertices, origin: pts[0], to_lambda: inv }
            })
            .collect();

        let mut h = Self {
            coarse,
            depth,
            blending,
            primitives,
            num_volumes,
            volumes,
            prim_by_vertices,
            prim_facets,
            facet_volume,
            vertices: NodeSet { level: 0, n: 1, comp: vec![], phys: vec![], primitive: vec![], tables: vec![], stride: 0, dim },
            template: vec![],
            h_min: 0.0,
        };
        h.vertices = h.node_set(depth);
        h.template = kuhn_template(dim, 1 << depth);
        h.h_min = h.compute_min_edge_length();
        if h.h_min <= 0.0 {
            return Err(Error::InvalidMesh("zero-length micro-edge".into()));
        }
        Ok(h)
    }

    pub fn dim(&self) -> usize {
        self.coarse.dim
    }

    /// Number of micro-intervals along a macro edge on the finest level.
    pub fn n(&self) -> usize {
        1 << self.depth
    }

    /// Micro-vertices of the finest level.
    pub fn vertices(&self) -> &NodeSet {
        &self.vertices
    }

    pub fn element_count(&self, level: usize) -> usize {
        self.num_volumes * (1usize << (level * self.dim()))
    }

    pub fn num_elements(&self) -> usize {
        self.num_volumes * self.template.len()
    }

    /// Micro-simplices of one macro-volume on the finest level.
    pub fn template(&self) -> &[LatticeSimplex] {
        &self.template
    }

    pub fn elements(&self) -> impl Iterator<Item = MicroElement> + '_ {
        (0..self.num_volumes).flat_map(move |m| {
            self.template.iter().map(move |t| MicroElement { macro_id: m as u32, lattice: *t })
        })
    }

    pub fn macro_vertices(&self, macro_id: usize) -> &[usize] {
        &self.volumes[macro_id].vertices[..=self.dim()]
    }

    pub fn primitive_of(&self, vertices: &[usize]) -> Option<usize> {
        self.prim_by_vertices.get(vertices).copied()
    }

    /// Boundary tags of the coarse facets that contain a primitive.
    pub fn primitive_boundary(&self, prim: usize) -> impl Iterator<Item = (usize, BoundaryTag)> + '_ {
        self.prim_facets[prim].iter().map(move |&f| (f, self.coarse.boundary[f].tag))
    }

    /// Outward unit normal of a boundary facet in computational coordinates.
    pub fn facet_normal(&self, facet: usize) -> Point {
        let dim = self.dim();
        let f = &self.coarse.boundary[facet];
        let p: Vec<Point> = f.vertices.iter().map(|&v| self.coarse.vertices[v]).collect();
        let mut n = if dim == 2 {
            let t = geom::sub(&p[1], &p[0]);
            [t[1], -t[0], 0.0]
        } else {
            let a = geom::sub(&p[1], &p[0]);
            let b = geom::sub(&p[2], &p[0]);
            [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
        };
        let len = geom::norm(&n);
        n = geom::scale(&n, 1.0 / len);
        // orient away from the adjacent volume's centroid
        let vol = &self.volumes[self.facet_volume[facet]];
        let mut c = [0.0; 3];
        for &v in &vol.vertices[..=dim] {
            c = geom::add(&c, &self.coarse.vertices[v]);
        }
        c = geom::scale(&c, 1.0 / (dim + 1) as f64);
        if geom::dot(&n, &geom::sub(&p[0], &c)) < 0.0 {
            n = geom::scale(&n, -1.0);
        }
        n
    }

    /// Lattice nodes on `level` (micro-vertices of that level), numbered
    /// globally with interface nodes shared bit-identically between the
    /// adjacent macro-volumes.
    pub fn node_set(&self, level: usize) -> NodeSet {
        let dim = self.dim();
        let n = 1usize << level;
        let stride = n + 1;
        let table_len = if dim == 3 { stride * stride * stride } else { stride * stride };
        let mut ids: HashMap<([(u32, u32); 4], u8), u32> = HashMap::new();
        let mut comp = Vec::new();
        let mut primitive = Vec::new();
        let mut tables = Vec::with_capacity(self.num_volumes);
        for vol in &self.volumes {
            let mut table = vec![u32::MAX; table_len];
            let zmax = if dim == 3 { n } else { 0 };
            for z in 0..=zmax {
                for y in 0..=(n - z) {
                    for x in 0..=(n - z - y) {
                        let w = [n - x - y - z, x, y, z];
                        let mut key = [(u32::MAX, 0u32); 4];
                        let mut len = 0u8;
                        for k in 0..=dim {
                            if w[k] > 0 {
                                key[len as usize] = (vol.vertices[k] as u32, w[k] as u32);
                                len += 1;
                            }
                        }
                        key[..len as usize].sort_unstable();
                        let id = *ids.entry((key, len)).or_insert_with(|| {
                            let mut p = [0.0; 3];
                            for &(g, wk) in &key[..len as usize] {
                                geom::axpy(&mut p, wk as f64 / n as f64, &self.coarse.vertices[g as usize]);
                            }
                            let verts: Vec<usize> = key[..len as usize].iter().map(|&(g, _)| g as usize).collect();
                            primitive.push(self.prim_by_vertices[&verts] as u32);
                            comp.push(p);
                            (comp.len() - 1) as u32
                        });
                        table[x + stride * (y + stride * z)] = id;
                    }
                }
            }
            tables.push(table);
        }
        let phys = comp.iter().map(|p| self.blending.forward(p)).collect();
        NodeSet { level, n, comp, phys, primitive, tables, stride, dim }
    }

    /// Shortest physical micro-edge on the finest level.
    pub fn min_edge_length(&self) -> f64 {
        self.h_min
    }

    fn compute_min_edge_length(&self) -> f64 {
        let dim = self.dim();
        let mut h = f64::INFINITY;
        for e in self.elements() {
            let ids: Vec<u32> = (0..=dim).map(|k| self.vertices.node(e.macro_id as usize, e.lattice[k])).collect();
            for i in 0..=dim {
                for j in (i + 1)..=dim {
                    let d = geom::dist(&self.vertices.phys[ids[i] as usize], &self.vertices.phys[ids[j] as usize]);
                    h = h.min(d);
                }
            }
        }
        h
    }

    /// Barycentric coordinates of a computational point w.r.t. a macro-volume.
    #[inline]
    pub fn barycentric(&self, macro_id: usize, z: &Point) -> [f64; 4] {
        let vol = &self.volumes[macro_id];
        let d = geom::sub(z, &vol.origin);
        let l = geom::matvec(&vol.to_lambda, &d);
        if self.dim() == 2 {
            [1.0 - l[0] - l[1], l[0], l[1], 0.0]
        } else {
            [1.0 - l[0] - l[1] - l[2], l[0], l[1], l[2]]
        }
    }

    #[inline]
    fn inside(&self, lambda: &[f64; 4]) -> bool {
        lambda[..=self.dim()].iter().all(|&l| l >= -INSIDE_TOL)
    }

    /// Locates a computational point: first the hinted volume, then its
    /// vertex neighbours, then all volumes. A point outside every volume is
    /// projected onto the nearest boundary point of the computational domain.
    pub fn locate(&self, z: &Point, hint: usize) -> (Location, LocateFlags) {
        let mut flags = LocateFlags::default();
        let hint = hint.min(self.num_volumes - 1);
        let lam = self.barycentric(hint, z);
        if self.inside(&lam) {
            return (self.finish(hint, lam), flags);
        }
        for &nb in &self.primitives[hint].neighbors {
            let lam = self.barycentric(nb, z);
            if self.inside(&lam) {
                return (self.finish(nb, lam), flags);
            }
        }
        flags.escalated = true;
        for m in 0..self.num_volumes {
            let lam = self.barycentric(m, z);
            if self.inside(&lam) {
                return (self.finish(m, lam), flags);
            }
        }
        flags.clamped = true;
        let (q, m) = self.project_to_boundary(z);
        (self.finish(m, self.barycentric(m, &q)), flags)
    }

    /// Locates without a hint and without clamping.
    pub fn find(&self, z: &Point) -> Option<Location> {
        (0..self.num_volumes).find_map(|m| {
            let lam = self.barycentric(m, z);
            self.inside(&lam).then(|| self.finish(m, lam))
        })
    }

    fn finish(&self, macro_id: usize, mut lambda: [f64; 4]) -> Location {
        let dim = self.dim();
        let mut sum = 0.0;
        for l in lambda[..=dim].iter_mut() {
            *l = l.max(0.0);
            sum += *l;
        }
        if sum != 1.0 {
            for l in lambda[..=dim].iter_mut() {
                *l /= sum;
            }
        }
        Location { macro_id: macro_id as u32, lambda }
    }

    /// Nearest point on the boundary of the computational domain and the
    /// volume adjacent to that boundary facet.
    pub fn project_to_boundary(&self, z: &Point) -> (Point, usize) {
        let mut best = (f64::INFINITY, *z, 0usize);
        for (i, f) in self.coarse.boundary.iter().enumerate() {
            let p: Vec<&Point> = f.vertices.iter().map(|&v| &self.coarse.vertices[v]).collect();
            let q = if self.dim() == 2 {
                geom::closest_on_segment(z, p[0], p[1])
            } else {
                geom::closest_on_triangle(z, p[0], p[1], p[2])
            };
            let d = geom::dist(&q, z);
            if d < best.0 {
                best = (d, q, self.facet_volume[i]);
            }
        }
        (best.1, best.2)
    }

    /// Computational coordinates of the lattice point `p` (level with `n`
    /// intervals) inside a macro-volume.
    pub fn lattice_point(&self, macro_id: usize, p: [u32; 3], n: usize) -> Point {
        let vol = &self.volumes[macro_id];
        let mut out = self.coarse.vertices[vol.vertices[0]];
        let w0 = 1.0 - (p[0] + p[1] + p[2]) as f64 / n as f64;
        out = geom::scale(&out, w0);
        for k in 0..self.dim() {
            geom::axpy(&mut out, p[k] as f64 / n as f64, &self.coarse.vertices[vol.vertices[k + 1]]);
        }
        out
    }

    /// Jacobian of the affine map from lattice units of a macro-volume at
    /// level `n` to computational coordinates.
    pub fn lattice_jacobian(&self, macro_id: usize, n: usize) -> Mat3 {
        let vol = &self.volumes[macro_id];
        let pts: Vec<Point> = vol.vertices[..=self.dim()].iter().map(|&v| self.coarse.vertices[v]).collect();
        let mut m = geom::simplex_matrix(&pts, self.dim());
        for row in m.iter_mut() {
            for x in row.iter_mut() {
                *x /= n as f64;
            }
        }
        m
    }
}

/// The unit Kuhn simplex of a macro-volume lattice containing a point given
/// by its macro barycentric coordinates. Returns the lattice vertices
/// `(x, y, z)` of the micro-simplex and the point's barycentric coordinates
/// relative to them.
#[inline]
pub fn kuhn_cell(dim: usize, n: usize, lambda: &[f64; 4]) -> (LatticeSimplex, [f64; 4]) {
    let nf = n as f64;
    // cumulative coordinates
    let mut cum = [0.0f64; 3];
    let mut acc = 0.0;
    for k in (0..dim).rev() {
        acc += lambda[k + 1] * nf;
        cum[k] = acc;
    }
    let mut base = [0u32; 3];
    let mut frac = [0.0f64; 3];
    for k in 0..dim {
        let c = cum[k].clamp(0.0, nf);
        let f = c.floor().min(nf - 1.0);
        base[k] = f as u32;
        frac[k] = c - f;
    }
    // order axes by decreasing fractional part, ties keep axis order
    let mut order = [0usize, 1, 2];
    let ord = &mut order[..dim];
    ord.sort_by(|&a, &b| frac[b].partial_cmp(&frac[a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b)));
    let mut verts = [[0u32; 3]; 4];
    let mut cur = base;
    verts[0] = cum_to_lattice(dim, cur);
    for s in 0..dim {
        cur[order[s]] += 1;
        verts[s + 1] = cum_to_lattice(dim, cur);
    }
    let mut mu = [0.0; 4];
    mu[0] = 1.0 - frac[order[0]];
    for s in 1..dim {
        mu[s] = frac[order[s - 1]] - frac[order[s]];
    }
    mu[dim] = frac[order[dim - 1]];
    (verts, mu)
}

#[inline]
fn cum_to_lattice(dim: usize, c: [u32; 3]) -> [u32; 3] {
    if dim == 2 {
        [c[0] - c[1], c[1], 0]
    } else {
        [c[0] - c[1], c[1] - c[2], c[2]]
    }
}

/// All unit Kuhn simplices inside the macro lattice with `n` intervals,
/// positively oriented in lattice coordinates.
pub fn kuhn_template(dim: usize, n: usize) -> Vec<LatticeSimplex> {
    let perms: Vec<Vec<usize>> = if dim == 2 {
        vec![vec![0, 1], vec![1, 0]]
    } else {
        vec![vec![0, 1, 2], vec![0, 2, 1], vec![1, 0, 2], vec![1, 2, 0], vec![2, 0, 1], vec![2, 1, 0]]
    };
    let valid = |c: &[i64; 3]| {
        if dim == 2 {
            n as i64 >= c[0] && c[0] >= c[1] && c[1] >= 0
        } else {
            n as i64 >= c[0] && c[0] >= c[1] && c[1] >= c[2] && c[2] >= 0
        }
    };
    let mut out = Vec::with_capacity(n.pow(dim as u32));
    let zmax = if dim == 3 { n } else { 1 };
    for r in 0..zmax {
        for q in 0..n {
            for p in 0..n {
                let base = [p as i64, q as i64, r as i64];
                'perm: for perm in &perms {
                    let mut cur = base;
                    let mut verts = [[0u32; 3]; 4];
                    if !valid(&cur) {
                        continue;
                    }
                    verts[0] = cum_to_lattice(dim, [cur[0] as u32, cur[1] as u32, cur[2] as u32]);
                    for (s, &axis) in perm.iter().enumerate() {
                        cur[axis] += 1;
                        if !valid(&cur) {
                            continue 'perm;
                        }
                        verts[s + 1] = cum_to_lattice(dim, [cur[0] as u32, cur[1] as u32, cur[2] as u32]);
                    }
                    let pts: Vec<Point> = verts[..=dim].iter().map(|v| [v[0] as f64, v[1] as f64, v[2] as f64]).collect();
                    if geom::simplex_measure(&pts, dim) < 0.0 {
                        verts.swap(dim - 1, dim);
                    }
                    out.push(verts);
                }
            }
        }
    }
    out
}

fn subsets_of_size(v: &[usize], size: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let n = v.len();
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize == size {
            out.push((0..n).filter(|i| mask & (1 << i) != 0).map(|i| v[i]).collect());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::coarse::BoundaryTag;
    use std::collections::HashMap;

    fn square(depth: usize) -> MeshHierarchy {
        MeshHierarchy::refine(CoarseMesh::unit_square(BoundaryTag::Neumann), depth, BlendingMap::Identity).unwrap()
    }

    #[test]
    fn unit_triangle_one_level() {
        let t = kuhn_template(2, 2);
        assert_eq!(t.len(), 4);
        let areas: Vec<f64> = t
            .iter()
            .map(|s| {
                let p: Vec<Point> = s[..3].iter().map(|v| [v[0] as f64, v[1] as f64, 0.0]).collect();
                geom::simplex_measure(&p, 2)
            })
            .collect();
        assert!(areas.iter().all(|&a| (a - 0.5).abs() < 1e-15));
        let v = BoundaryTag::Neumann;
        let tri = CoarseMesh::new(
            2,
            vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            vec![vec![0, 1, 2]],
            vec![
                crate::mesh::coarse::BoundaryFacet { vertices: vec![0, 1], tag: v },
                crate::mesh::coarse::BoundaryFacet { vertices: vec![1, 2], tag: v },
                crate::mesh::coarse::BoundaryFacet { vertices: vec![0, 2], tag: v },
            ],
        )
        .unwrap();
        let h = MeshHierarchy::refine(tri, 1, BlendingMap::Identity).unwrap();
        assert_eq!(h.num_elements(), 4);
        assert_eq!(h.vertices().len(), 6);
    }

    #[test]
    fn unit_tet_one_level() {
        let t = kuhn_template(3, 2);
        assert_eq!(t.len(), 8);
        for s in &t {
            let p: Vec<Point> = s.iter().map(|v| [v[0] as f64, v[1] as f64, v[2] as f64]).collect();
            assert!((geom::simplex_measure(&p, 3) - 1.0 / 6.0).abs() < 1e-15);
        }
        let mut pts: Vec<[u32; 3]> = t.iter().flat_map(|s| s.iter().copied()).collect();
        pts.sort();
        pts.dedup();
        assert_eq!(pts.len(), 10);
    }

    #[test]
    fn square_level7_vertex_count() {
        let h = square(7);
        assert_eq!(h.vertices().len(), 16641);
        assert_eq!(h.num_elements(), 2 * 4usize.pow(7));
    }

    #[test]
    fn element_counts_and_measure() {
        for depth in 0..4 {
            let h = MeshHierarchy::refine(CoarseMesh::unit_cube(BoundaryTag::Neumann), depth, BlendingMap::Identity).unwrap();
            assert_eq!(h.num_elements(), 6 * 8usize.pow(depth as u32));
            assert_eq!(h.num_elements(), h.element_count(depth));
            let vol: f64 = h
                .elements()
                .map(|e| {
                    let p: Vec<Point> = e.lattice.iter().map(|&l| h.vertices().comp[h.vertices().node(e.macro_id as usize, l) as usize]).collect();
                    geom::simplex_measure(&p, 3)
                })
                .sum();
            assert!((vol - 1.0).abs() < 1e-12);
            let n = 1 << depth;
            assert_eq!(h.vertices().len(), (n + 1) * (n + 1) * (n + 1));
        }
    }

    #[test]
    fn refined_tets_are_conforming() {
        let coarse = CoarseMesh::cuboid([2.0, 1.0, 1.0], [2, 1, 1], BoundaryTag::Neumann);
        let h = MeshHierarchy::refine(coarse, 2, BlendingMap::Identity).unwrap();
        let mut faces: HashMap<Vec<u32>, usize> = HashMap::new();
        for e in h.elements() {
            let ids: Vec<u32> = e.lattice.iter().map(|&l| h.vertices().node(e.macro_id as usize, l)).collect();
            for skip in 0..4 {
                let mut f: Vec<u32> = (0..4).filter(|&k| k != skip).map(|k| ids[k]).collect();
                f.sort();
                *faces.entry(f).or_default() += 1;
            }
        }
        assert!(faces.values().all(|&c| c == 1 || c == 2));
        let boundary = faces.values().filter(|&&c| c == 1).count();
        // 4x2 + 4x2 + 2x2 (+ same again) squares of 1/4, two triangles each
        assert_eq!(boundary, 2 * 2 * (8 * 4 + 8 * 4 + 4 * 4));
    }

    #[test]
    fn min_edge_length_square() {
        assert!((square(0).min_edge_length() - 1.0).abs() < 1e-15);
        assert!((square(4).min_edge_length() - 1.0 / 16.0).abs() < 1e-15);
    }

    #[test]
    fn annulus_min_edge_length_matches_brute_force() {
        let blending = BlendingMap::Annulus { r_min: 0.5, r_max: 1.5, sectors: 6 };
        let h = MeshHierarchy::refine(CoarseMesh::annulus(0.5, 1.5, 6, 2, BoundaryTag::Neumann), 3, blending).unwrap();
        // brute force over every pair of micro-vertices that share an element
        let mut best = f64::INFINITY;
        for e in h.elements() {
            for i in 0..3 {
                for j in 0..3 {
                    if i != j {
                        let a = h.lattice_point(e.macro_id as usize, e.lattice[i], 8);
                        let b = h.lattice_point(e.macro_id as usize, e.lattice[j], 8);
                        best = best.min(geom::dist(&blending.forward(&a), &blending.forward(&b)));
                    }
                }
            }
        }
        assert!((h.min_edge_length() - best).abs() < 1e-14);
        // radial micro-edges on the vertex rays have length 1/16
        assert!(h.min_edge_length() <= 1.0 / 16.0 + 1e-12);
    }

    #[test]
    fn annulus_boundary_vertices_on_circles() {
        let blending = BlendingMap::Annulus { r_min: 0.5, r_max: 1.5, sectors: 6 };
        let h = MeshHierarchy::refine(CoarseMesh::annulus(0.5, 1.5, 6, 2, BoundaryTag::Neumann), 3, blending).unwrap();
        let nodes = h.vertices();
        let mut count = 0;
        for i in 0..nodes.len() {
            if h.primitive_boundary(nodes.primitive[i] as usize).next().is_some() {
                let r = nodes.phys[i][0].hypot(nodes.phys[i][1]);
                assert!((r - 0.5).abs() < 1e-12 || (r - 1.5).abs() < 1e-12, "r = {r}");
                count += 1;
            }
        }
        assert_eq!(count, 2 * 6 * 8);
    }

    #[test]
    fn interface_nodes_shared() {
        let h = square(3);
        let nodes = h.vertices();
        // diagonal of the unit square is shared by both macro triangles
        for k in 0..=8u32 {
            let p = nodes.comp[nodes.node(0, [0, k, 0]) as usize];
            let found: Vec<u32> = (0..2)
                .flat_map(|m| {
                    let mut v = vec![];
                    for x in 0..=8u32 {
                        for y in 0..=(8 - x) {
                            let id = nodes.node(m, [x, y, 0]);
                            if nodes.comp[id as usize] == p {
                                v.push(id);
                            }
                        }
                    }
                    v
                })
                .collect();
            assert!(found.len() == 2 && found.iter().all(|&i| i == found[0]));
        }
    }

    #[test]
    fn kuhn_cell_reproduces_point() {
        let n = 8;
        for lam in [[0.2, 0.3, 0.5, 0.0], [0.0, 0.0, 1.0, 0.0], [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0, 0.0], [0.6, 0.4, 0.0, 0.0]] {
            let (verts, mu) = kuhn_cell(2, n, &lam);
            let mut x = [0.0; 2];
            for k in 0..3 {
                assert!(mu[k] >= 0.0);
                x[0] += mu[k] * verts[k][0] as f64;
                x[1] += mu[k] * verts[k][1] as f64;
            }
            assert!((x[0] - lam[1] * n as f64).abs() < 1e-12);
            assert!((x[1] - lam[2] * n as f64).abs() < 1e-12);
        }
        let lam = [0.1, 0.2, 0.3, 0.4];
        let (verts, mu) = kuhn_cell(3, 4, &lam);
        for d in 0..3 {
            let x: f64 = (0..4).map(|k| mu[k] * verts[k][d] as f64).sum();
            assert!((x - lam[d + 1] * 4.0).abs() < 1e-12);
        }
    }

    #[test]
    fn locate_with_hint_and_clamp() {
        let h = square(2);
        let (loc, flags) = h.locate(&[0.9, 0.1, 0.0], 1);
        assert!(!flags.clamped);
        let lam = h.barycentric(loc.macro_id as usize, &[0.9, 0.1, 0.0]);
        assert!(lam.iter().all(|&l| l >= -1e-12));
        let (loc, flags) = h.locate(&[1.2, 0.5, 0.0], 0);
        assert!(flags.clamped && flags.escalated);
        let mut p = [0.0; 3];
        for (k, &v) in h.macro_vertices(loc.macro_id as usize).iter().enumerate() {
            geom::axpy(&mut p, loc.lambda[k], &h.coarse.vertices[v]);
        }
        assert!((p[0] - 1.0).abs() < 1e-14 && (p[1] - 0.5).abs() < 1e-14);
    }
}
