//! Coarse unstructured simplex meshes, the plain-text mesh format and the
//! built-in generators.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{simplex_measure, Point};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BoundaryTag {
    Dirichlet,
    Neumann,
    FreeSlip,
    NoSlip,
    Interior,
}

impl BoundaryTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            BoundaryTag::Dirichlet => "Dirichlet",
            BoundaryTag::Neumann => "Neumann",
            BoundaryTag::FreeSlip => "FreeSlip",
            BoundaryTag::NoSlip => "NoSlip",
            BoundaryTag::Interior => "Interior",
        }
    }
}

impl FromStr for BoundaryTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dirichlet" => Ok(BoundaryTag::Dirichlet),
            "neumann" => Ok(BoundaryTag::Neumann),
            "freeslip" | "free_slip" | "free-slip" => Ok(BoundaryTag::FreeSlip),
            "noslip" | "no_slip" | "no-slip" => Ok(BoundaryTag::NoSlip),
            "interior" => Ok(BoundaryTag::Interior),
            other => Err(Error::Parse(format!("unknown boundary tag `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryFacet {
    /// Coarse vertex ids, sorted ascending.
    pub vertices: Vec<usize>,
    pub tag: BoundaryTag,
}

/// A conforming simplex mesh of the computational domain.
///
/// Elements are stored positively oriented; `new` swaps the last two
/// vertices of negatively oriented input elements.
#[derive(Clone, Debug)]
pub struct CoarseMesh {
    pub dim: usize,
    pub vertices: Vec<Point>,
    pub elements: Vec<Vec<usize>>,
    pub boundary: Vec<BoundaryFacet>,
}

impl CoarseMesh {
    pub fn new(
        dim: usize,
        vertices: Vec<Point>,
        elements: Vec<Vec<usize>>,
        boundary: Vec<BoundaryFacet>,
    ) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(Error::InvalidMesh(format!("dimension {dim} not supported")));
        }
        let mut elements = elements;
        let scale = bounding_extent(&vertices).max(f64::MIN_POSITIVE);
        for (e, el) in elements.iter_mut().enumerate() {
            if el.len() != dim + 1 {
                return Err(Error::InvalidMesh(format!(
                    "element {e} has {} vertices, expected {}",
                    el.len(),
                    dim + 1
                )));
            }
            if let Some(&v) = el.iter().find(|&&v| v >= vertices.len()) {
                return Err(Error::InvalidMesh(format!("element {e} references vertex {v}")));
            }
            let pts: Vec<Point> = el.iter().map(|&v| vertices[v]).collect();
            let measure = simplex_measure(&pts, dim);
            if measure.abs() <= 1e-14 * scale.powi(dim as i32) {
                return Err(Error::DegenerateElement { element: e, measure });
            }
            if measure < 0.0 {
                el.swap(dim - 1, dim);
            }
        }

        let mut boundary = boundary;
        for f in &mut boundary {
            f.vertices.sort_unstable();
        }

        // facet -> number of incident elements
        let mut facet_count: HashMap<Vec<usize>, usize> = HashMap::new();
        for el in &elements {
            for f in element_facets(el) {
                *facet_count.entry(f).or_default() += 1;
            }
        }
        if let Some((f, c)) = facet_count.iter().find(|(_, &c)| c > 2) {
            return Err(Error::InvalidMesh(format!("facet {f:?} shared by {c} elements")));
        }
        let mut tagged: HashMap<&[usize], usize> = HashMap::new();
        for f in &boundary {
            *tagged.entry(f.vertices.as_slice()).or_default() += 1;
        }
        for (f, &c) in &facet_count {
            if c == 1 {
                match tagged.get(f.as_slice()) {
                    Some(1) => {}
                    Some(n) => {
                        return Err(Error::InvalidMesh(format!(
                            "boundary facet {f:?} carries {n} tags"
                        )))
                    }
                    None => {
                        return Err(Error::InvalidMesh(format!("boundary facet {f:?} is untagged")))
                    }
                }
            }
        }
        for f in &boundary {
            match facet_count.get(&f.vertices) {
                Some(1) => {}
                _ => {
                    return Err(Error::InvalidMesh(format!(
                        "tagged facet {:?} is not a boundary facet",
                        f.vertices
                    )))
                }
            }
        }

        Ok(Self { dim, vertices, elements, boundary })
    }

    pub fn element_measure(&self, e: usize) -> f64 {
        let pts: Vec<Point> = self.elements[e].iter().map(|&v| self.vertices[v]).collect();
        simplex_measure(&pts, self.dim)
    }

    pub fn measure(&self) -> f64 {
        (0..self.elements.len()).map(|e| self.element_measure(e)).sum()
    }

    /// Parses the plain-text format: header `dim nv ne nb`, then `nv` vertex
    /// lines, `ne` element lines and `nb` boundary-facet lines ending in a tag.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or("").trim())
            .filter(|l| !l.is_empty());
        let header = lines.next().ok_or_else(|| Error::Parse("empty mesh file".into()))?;
        let h: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse::<usize>().map_err(|e| Error::Parse(format!("header: {e}"))))
            .collect::<Result<_>>()?;
        if h.len() != 4 {
            return Err(Error::Parse("header must be `dim nv ne nb`".into()));
        }
        let (dim, nv, ne, nb) = (h[0], h[1], h[2], h[3]);
        let mut next = |what: &str| {
            lines.next().ok_or_else(|| Error::Parse(format!("unexpected end of file reading {what}")))
        };
        let mut vertices = Vec::with_capacity(nv);
        for i in 0..nv {
            let l = next("vertices")?;
            let c: Vec<f64> = l
                .split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|e| Error::Parse(format!("vertex {i}: {e}"))))
                .collect::<Result<_>>()?;
            if c.len() != dim {
                return Err(Error::Parse(format!("vertex {i} has {} coordinates", c.len())));
            }
            let mut p = [0.0; 3];
            p[..dim].copy_from_slice(&c);
            vertices.push(p);
        }
        let mut elements = Vec::with_capacity(ne);
        for i in 0..ne {
            let l = next("elements")?;
            let v: Vec<usize> = l
                .split_whitespace()
                .map(|t| t.parse::<usize>().map_err(|e| Error::Parse(format!("element {i}: {e}"))))
                .collect::<Result<_>>()?;
            elements.push(v);
        }
        let mut boundary = Vec::with_capacity(nb);
        for i in 0..nb {
            let l = next("boundary facets")?;
            let toks: Vec<&str> = l.split_whitespace().collect();
            let (tag, ids) = toks
                .split_last()
                .ok_or_else(|| Error::Parse(format!("boundary facet {i} is empty")))?;
            let vertices = ids
                .iter()
                .map(|t| t.parse::<usize>().map_err(|e| Error::Parse(format!("facet {i}: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            if vertices.len() != dim {
                return Err(Error::Parse(format!("facet {i} has {} vertices", vertices.len())));
            }
            boundary.push(BoundaryFacet { vertices, tag: tag.parse()? });
        }
        Self::new(dim, vertices, elements, boundary)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{} {} {} {}",
            self.dim,
            self.vertices.len(),
            self.elements.len(),
            self.boundary.len()
        );
        for v in &self.vertices {
            let c: Vec<String> = v[..self.dim].iter().map(|x| format!("{x:?}")).collect();
            let _ = writeln!(s, "{}", c.join(" "));
        }
        for e in &self.elements {
            let c: Vec<String> = e.iter().map(|x| x.to_string()).collect();
            let _ = writeln!(s, "{}", c.join(" "));
        }
        for f in &self.boundary {
            let c: Vec<String> = f.vertices.iter().map(|x| x.to_string()).collect();
            let _ = writeln!(s, "{} {}", c.join(" "), f.tag.as_str());
        }
        s
    }

    /// Unit square split along the (0,0)-(1,1) diagonal.
    pub fn unit_square(tag: BoundaryTag) -> Self {
        Self::rectangle(1.0, 1.0, 1, 1, [tag; 4])
    }

    /// `[0,lx] x [0,ly]` with `nx x ny` squares, each split into two
    /// triangles. Tags are given as `[bottom, right, top, left]`.
    pub fn rectangle(lx: f64, ly: f64, nx: usize, ny: usize, tags: [BoundaryTag; 4]) -> Self {
        let vid = |i: usize, j: usize| j * (nx + 1) + i;
        let mut vertices = Vec::new();
        for j in 0..=ny {
            for i in 0..=nx {
                vertices.push([lx * i as f64 / nx as f64, ly * j as f64 / ny as f64, 0.0]);
            }
        }
        let mut elements = Vec::new();
        for j in 0..ny {
            for i in 0..nx {
                let (a, b, c, d) = (vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1));
                elements.push(vec![a, b, c]);
                elements.push(vec![a, c, d]);
            }
        }
        let mut boundary = Vec::new();
        for i in 0..nx {
            boundary.push(BoundaryFacet { vertices: vec![vid(i, 0), vid(i + 1, 0)], tag: tags[0] });
            boundary.push(BoundaryFacet { vertices: vec![vid(i, ny), vid(i + 1, ny)], tag: tags[2] });
        }
        for j in 0..ny {
            boundary.push(BoundaryFacet { vertices: vec![vid(nx, j), vid(nx, j + 1)], tag: tags[1] });
            boundary.push(BoundaryFacet { vertices: vec![vid(0, j), vid(0, j + 1)], tag: tags[3] });
        }
        Self::new(2, vertices, elements, boundary).expect("rectangle generator is valid")
    }

    /// Unit cube split into six tetrahedra sharing the main diagonal.
    pub fn unit_cube(tag: BoundaryTag) -> Self {
        Self::cuboid([1.0, 1.0, 1.0], [1, 1, 1], tag)
    }

    /// Box `[0,l0] x [0,l1] x [0,l2]` of `n0 x n1 x n2` cells, each split
    /// into the six Kuhn tetrahedra along its main diagonal.
    pub fn cuboid(len: [f64; 3], cells: [usize; 3], tag: BoundaryTag) -> Self {
        let [n0, n1, n2] = cells;
        let vid = |i: usize, j: usize, k: usize| (k * (n1 + 1) + j) * (n0 + 1) + i;
        let mut vertices = Vec::new();
        for k in 0..=n2 {
            for j in 0..=n1 {
                for i in 0..=n0 {
                    vertices.push([
                        len[0] * i as f64 / n0 as f64,
                        len[1] * j as f64 / n1 as f64,
                        len[2] * k as f64 / n2 as f64,
                    ]);
                }
            }
        }
        const PERMS: [[usize; 3]; 6] =
            [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        let mut elements = Vec::new();
        for k in 0..n2 {
            for j in 0..n1 {
                for i in 0..n0 {
                    for p in PERMS {
                        let mut c = [i, j, k];
                        let mut el = vec![vid(c[0], c[1], c[2])];
                        for axis in p {
                            c[axis] += 1;
                            el.push(vid(c[0], c[1], c[2]));
                        }
                        elements.push(el);
                    }
                }
            }
        }
        // boundary facets: faces of tets lying in a bounding plane
        let mut boundary = Vec::new();
        let mut count: HashMap<Vec<usize>, usize> = HashMap::new();
        for el in &elements {
            for f in element_facets(el) {
                *count.entry(f).or_default() += 1;
            }
        }
        let mut faces: Vec<Vec<usize>> =
            count.into_iter().filter(|(_, c)| *c == 1).map(|(f, _)| f).collect();
        faces.sort();
        for f in faces {
            boundary.push(BoundaryFacet { vertices: f, tag });
        }
        Self::new(3, vertices, elements, boundary).expect("cuboid generator is valid")
    }

    /// Polygonal approximation of the annulus `r_min <= |x| <= r_max`:
    /// `n_radial` rings of `n_tangential` quadrilaterals between regular
    /// polygons whose vertices lie on the circles, each quad split in two.
    pub fn annulus(r_min: f64, r_max: f64, n_tangential: usize, n_radial: usize, tag: BoundaryTag) -> Self {
        let vid = |t: usize, r: usize| r * n_tangential + (t % n_tangential);
        let mut vertices = Vec::new();
        for r in 0..=n_radial {
            let radius = r_min + (r_max - r_min) * r as f64 / n_radial as f64;
            for t in 0..n_tangential {
                let phi = 2.0 * std::f64::consts::PI * t as f64 / n_tangential as f64;
                vertices.push([radius * phi.cos(), radius * phi.sin(), 0.0]);
            }
        }
        let mut elements = Vec::new();
        for r in 0..n_radial {
            for t in 0..n_tangential {
                let (a, b, c, d) = (vid(t, r), vid(t + 1, r), vid(t + 1, r + 1), vid(t, r + 1));
                elements.push(vec![a, b, c]);
                elements.push(vec![a, c, d]);
            }
        }
        let mut boundary = Vec::new();
        for t in 0..n_tangential {
            boundary.push(BoundaryFacet { vertices: vec![vid(t, 0), vid(t + 1, 0)], tag });
            boundary.push(BoundaryFacet {
                vertices: vec![vid(t, n_radial), vid(t + 1, n_radial)],
                tag,
            });
        }
        Self::new(2, vertices, elements, boundary).expect("annulus generator is valid")
    }
}

/// Sorted vertex sets of the facets of an element.
pub(crate) fn element_facets(el: &[usize]) -> Vec<Vec<usize>> {
    (0..el.len())
        .map(|skip| {
            let mut f: Vec<usize> =
                el.iter().enumerate().filter(|(i, _)| *i != skip).map(|(_, &v)| v).collect();
            f.sort_unstable();
            f
        })
        .collect()
}

fn bounding_extent(vertices: &[Point]) -> f64 {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for v in vertices {
        for k in 0..3 {
            lo[k] = lo[k].min(v[k]);
            hi[k] = hi[k].max(v[k]);
        }
    }
    (0..3).map(|k| hi[k] - lo[k]).fold(0.0, f64::max)
}
