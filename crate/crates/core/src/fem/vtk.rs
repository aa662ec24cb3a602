//! VTK legacy ASCII output.
//!
//! Cells are the micro-simplices of the lattice carrying the space's DoFs:
//! level `L` for P1 and level `L + 1` for P2, so every DoF is a point and
//! fields are written as point data without resampling.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use crate::error::Result;
use crate::fem::space::{FunctionSpace, ScalarField, VectorField};
use crate::mesh::hierarchy::kuhn_template;

pub enum VtkData<'a> {
    Scalar(&'a str, &'a ScalarField),
    Vector(&'a str, &'a VectorField),
}

pub fn write_vtk(path: &Path, space: &FunctionSpace, data: &[VtkData]) -> Result<()> {
    let dim = space.dim();
    let mesh = space.mesh();
    let nodes = space.nodes();
    let template = kuhn_template(dim, nodes.n);
    let mut s = String::new();
    s.push_str("# vtk DataFile Version 3.0\nmmoc\nASCII\nDATASET UNSTRUCTURED_GRID\n");
    let _ = writeln!(s, "POINTS {} double", nodes.len());
    for p in &nodes.phys {
        let _ = writeln!(s, "{} {} {}", p[0], p[1], p[2]);
    }
    let ncells = template.len() * mesh.num_volumes;
    let _ = writeln!(s, "CELLS {} {}", ncells, ncells * (dim + 2));
    for m in 0..mesh.num_volumes {
        for t in &template {
            let _ = write!(s, "{}", dim + 1);
            for v in &t[..=dim] {
                let _ = write!(s, " {}", nodes.node(m, *v));
            }
            s.push('\n');
        }
    }
    let _ = writeln!(s, "CELL_TYPES {ncells}");
    let ty = if dim == 2 { "5\n" } else { "10\n" };
    for _ in 0..ncells {
        s.push_str(ty);
    }
    if !data.is_empty() {
        let _ = writeln!(s, "POINT_DATA {}", nodes.len());
    }
    for d in data {
        match d {
            VtkData::Scalar(name, f) => {
                let _ = writeln!(s, "SCALARS {name} double 1\nLOOKUP_TABLE default");
                for v in &f.coeffs {
                    let _ = writeln!(s, "{v}");
                }
            }
            VtkData::Vector(name, f) => {
                let _ = writeln!(s, "VECTORS {name} double");
                for i in 0..nodes.len() {
                    let c = |a: usize| f.components.get(a).map_or(0.0, |c| c.coeffs[i]);
                    let _ = writeln!(s, "{} {} {}", c(0), c(1), c(2));
                }
            }
        }
    }
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    file.write_all(s.as_bytes())?;
    file.flush()?;
    Ok(())
}
