//! Element-loop assembly of bilinear forms and load vectors.

use rayon::prelude::*;

use crate::error::Result;
use crate::fem::quadrature::QuadratureRule;
use crate::fem::space::{FunctionSpace, QuadPoint};
use crate::fem::sparse::CsrMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OperatorKind {
    Mass,
    Stiffness,
}

/// Assembles the mass or stiffness matrix of a scalar space on the
/// physical (blended) domain.
pub fn assemble(space: &FunctionSpace, kind: OperatorKind) -> Result<CsrMatrix> {
    let rule = space.default_rule();
    let n = space.local_dofs();
    let dim = space.dim();
    let mut m = assemble_blocks(space, space, 1, 1, &rule, |qr, _, out| {
        for q in qr {
            for i in 0..n {
                for j in i..n {
                    let v = match kind {
                        OperatorKind::Mass => q.weight * q.values[i] * q.values[j],
                        OperatorKind::Stiffness => {
                            q.weight * (0..dim).map(|a| q.grads[i][a] * q.grads[j][a]).sum::<f64>()
                        }
                    };
                    out[i * n + j] += v;
                }
            }
        }
        for i in 0..n {
            for j in 0..i {
                out[i * n + j] = out[j * n + i];
            }
        }
    })?;
    m.symmetric = true;
    Ok(m)
}

/// General block assembly. Global row index of DoF `i` in block `b` is
/// `b * rows.num_dofs() + i` (likewise for columns). `local` fills a dense
/// row-major `(rb * nr) x (cb * nc)` matrix from the quadrature data of the
/// row and column spaces on one element; rows are ordered block-major.
pub fn assemble_blocks<F>(
    rows: &FunctionSpace,
    cols: &FunctionSpace,
    rb: usize,
    cb: usize,
    rule: &QuadratureRule,
    local: F,
) -> Result<CsrMatrix>
where
    F: Fn(&[QuadPoint], &[QuadPoint], &mut [f64]) + Sync,
{
    let nr = rows.local_dofs();
    let nc = cols.local_dofs();
    let same = std::ptr::eq(rows, cols);
    let ne = rows.num_elements();
    let locals: Vec<(Vec<u32>, Vec<u32>, Vec<f64>)> = (0..ne)
        .into_par_iter()
        .map(|e| -> Result<_> {
            let el = rows.element(e);
            let qr = rows.quadrature(e, rule)?;
            let qc = if same { qr.clone() } else { cols.quadrature(e, rule)? };
            let rd = rows.element_dofs(el.macro_id as usize, &el.lattice);
            let cd = cols.element_dofs(el.macro_id as usize, &el.lattice);
            let ridx = (0..rb).flat_map(|b| rd[..nr].iter().map(move |&d| (b * rows.num_dofs()) as u32 + d)).collect();
            let cidx = (0..cb).flat_map(|b| cd[..nc].iter().map(move |&d| (b * cols.num_dofs()) as u32 + d)).collect();
            let mut out = vec![0.0; rb * nr * cb * nc];
            local(&qr, &qc, &mut out);
            Ok((ridx, cidx, out))
        })
        .collect::<Result<_>>()?;
    let mut m = CsrMatrix::from_blocks(
        rb * rows.num_dofs(),
        cb * cols.num_dofs(),
        locals.iter().map(|(r, c, _)| (r.as_slice(), c.as_slice())),
    );
    let width = cb * nc;
    for (r, c, vals) in &locals {
        for (a, &gi) in r.iter().enumerate() {
            for (b, &gj) in c.iter().enumerate() {
                m.add_at(gi as usize, gj as usize, vals[a * width + b]);
            }
        }
    }
    Ok(m)
}

/// Assembles a load vector with `blocks` components per DoF. `local`
/// receives the element index, its DoFs and quadrature data and fills a block-major
/// local vector of length `blocks * local_dofs`.
pub fn assemble_vector<F>(space: &FunctionSpace, blocks: usize, rule: &QuadratureRule, local: F) -> Result<Vec<f64>>
where
    F: Fn(usize, &[u32], &[QuadPoint], &mut [f64]) + Sync,
{
    let n = space.local_dofs();
    let nd = space.num_dofs();
    let ne = space.num_elements();
    let locals: Vec<([u32; 10], Vec<f64>)> = (0..ne)
        .into_par_iter()
        .map(|e| -> Result<_> {
            let el = space.element(e);
            let q = space.quadrature(e, rule)?;
            let d = space.element_dofs(el.macro_id as usize, &el.lattice);
            let mut out = vec![0.0; blocks * n];
            local(e, &d[..n], &q, &mut out);
            Ok((d, out))
        })
        .collect::<Result<_>>()?;
    let mut v = vec![0.0; blocks * nd];
    for (d, vals) in &locals {
        for b in 0..blocks {
            for k in 0..n {
                v[b * nd + d[k] as usize] += vals[b * n + k];
            }
        }
    }
    Ok(v)
}
