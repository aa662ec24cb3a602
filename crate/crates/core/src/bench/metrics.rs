//! Error and energy metrics of a computed field, and flow diagnostics of the
//! convection runs.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fem::quadrature::gauss_legendre_unit;
use crate::fem::sparse::dot;
use crate::fem::{CsrMatrix, PointLocation, ScalarField, VectorField};

/// One CSV row. Optional quantities are written as empty cells.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct MetricRow {
    pub step: usize,
    pub t: f64,
    pub tau: f64,
    pub h0_error: Option<f64>,
    pub var: f64,
    pub e_peak: Option<f64>,
    pub delta_m: f64,
    pub u_rms: Option<f64>,
    pub nu: Option<f64>,
    pub particles_migrated: u64,
    pub clamps: u64,
}

/// `m = 𝟙ᵀ M c`.
pub fn mass_of(c: &ScalarField, mass: &CsrMatrix) -> f64 {
    let mc = mass.apply(&c.coeffs);
    mc.iter().sum()
}

/// H⁰ error, var, E_peak and Δm of `c` against the interpolated exact field.
pub fn compute_metrics(c: &ScalarField, exact: Option<&ScalarField>, mass: &CsrMatrix, m0: f64) -> MetricRow {
    let var = c.max() - c.min();
    let delta_m = mass_of(c, mass) / m0 - 1.0;
    let (h0_error, e_peak) = match exact {
        Some(ex) => {
            let e: Vec<f64> = ex.coeffs.iter().zip(&c.coeffs).map(|(a, b)| a - b).collect();
            let h0 = dot(&e, &mass.apply(&e)).max(0.0).sqrt();
            (Some(h0), Some(c.max() / ex.max() - 1.0))
        }
        None => (None, None),
    };
    MetricRow { t: c.time, h0_error, var, e_peak, delta_m, ..Default::default() }
}

/// `(|Ω|⁻¹ ∫ |u|²)^{1/2}` by element quadrature.
pub fn u_rms(u: &VectorField) -> Result<f64> {
    let space = u.space();
    let rule = space.default_rule();
    let n = space.local_dofs();
    let mut energy = 0.0;
    let mut area = 0.0;
    for e in 0..space.num_elements() {
        let el = space.element(e);
        let dofs = space.element_dofs(el.macro_id as usize, &el.lattice);
        for q in space.quadrature(e, &rule)? {
            let mut s = 0.0;
            for c in &u.components {
                let v: f64 = (0..n).map(|k| q.values[k] * c.coeffs[dofs[k] as usize]).sum();
                s += v * v;
            }
            energy += q.weight * s;
            area += q.weight;
        }
    }
    Ok((energy / area).sqrt())
}

/// `Nu = −∫_top ∂₂c dx / ∫_bottom c dx` on a 2D box whose bottom is `y = 0`
/// and top is `y = height`. The top gradient is the one-sided derivative of
/// the element adjacent to each boundary micro-edge; both integrals use
/// three-point Gauss-Legendre rules per edge.
pub fn nusselt(c: &ScalarField, height: f64) -> Result<f64> {
    let space = &c.space;
    if space.dim() != 2 || !space.mesh().blending.is_identity() {
        return Err(Error::Config("Nusselt number needs an unblended 2D box".into()));
    }
    let gl = gauss_legendre_unit(3);
    let on = |y: f64, level: f64| (y - level).abs() <= 1e-12 * height.max(1.0);
    let mut top = 0.0;
    let mut bottom = 0.0;
    for e in 0..space.num_elements() {
        let el = space.element(e);
        let (verts, _) = space.element_geometry(el.macro_id as usize, &el.lattice);
        for (a, b) in [(0, 1), (1, 2), (0, 2)] {
            let (pa, pb) = (verts[a], verts[b]);
            let len = (pb[0] - pa[0]).abs();
            let is_top = on(pa[1], height) && on(pb[1], height);
            let is_bottom = on(pa[1], 0.0) && on(pb[1], 0.0);
            if !(is_top || is_bottom) {
                continue;
            }
            for &(s, w) in &gl {
                let mut mu = [0.0; 4];
                mu[a] = 1.0 - s;
                mu[b] = s;
                let comp = [pa[0] + s * (pb[0] - pa[0]), pa[1], 0.0];
                let loc = PointLocation { macro_id: el.macro_id, lattice: el.lattice, mu, comp };
                if is_top {
                    top += w * len * c.gradient_located(&loc)[1];
                } else {
                    bottom += w * len * c.evaluate_located(&loc);
                }
            }
        }
    }
    if bottom == 0.0 {
        return Err(Error::Config("Nusselt number undefined: zero bottom temperature integral".into()));
    }
    Ok(-top / bottom)
}

/// Local extrema of a sampled series inside `[t_min, t_max]`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Extrema {
    pub maxima: Vec<(f64, f64)>,
    pub minima: Vec<(f64, f64)>,
}

pub fn local_extrema(t: &[f64], v: &[f64], t_min: f64, t_max: f64) -> Extrema {
    let mut out = Extrema::default();
    for k in 1..v.len().saturating_sub(1) {
        if t[k] < t_min || t[k] > t_max {
            continue;
        }
        if v[k] > v[k - 1] && v[k] >= v[k + 1] {
            out.maxima.push((t[k], v[k]));
        } else if v[k] < v[k - 1] && v[k] <= v[k + 1] {
            out.minima.push((t[k], v[k]));
        }
    }
    out
}

/// Smallest `n ≤ n_max` such that the sequence of maxima repeats with period
/// `n` to relative tolerance `rtol`, while consecutive maxima differ by more
/// than `rtol` when `n > 1`.
pub fn cycle_period(maxima: &[f64], n_max: usize, rtol: f64) -> Option<usize> {
    let close = |a: f64, b: f64| (a - b).abs() <= rtol * a.abs().max(b.abs());
    (1..=n_max).find(|&n| {
        maxima.len() >= 2 * n
            && (n..maxima.len()).all(|k| close(maxima[k], maxima[k - n]))
            && (n == 1 || (1..maxima.len()).any(|k| !close(maxima[k], maxima[k - 1])))
    })
}
