//! Blending maps from the polyhedral computational domain onto the physical
//! domain.
//!
//! The annulus map is radial. The computational domain is bounded by two
//! regular `n`-gons with vertices on the circles `r_min` and `r_max`; on the
//! sector `[2πk/n, 2π(k+1)/n)` both polygons are the circles scaled by
//! `f(θ) = cos(π/n) / cos(θ - θ_k)` with `θ_k` the sector centre, so the map
//! `x ↦ x / f(θ(x))` sends every ray segment between the polygons onto the
//! matching ray segment between the circles and keeps the angle.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::geom::{Mat3, Point};

/// Relative slack beyond the physical domain that is still accepted (and
/// clamped) by the checked maps.
pub const DOMAIN_TOLERANCE: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BlendingMap {
    Identity,
    Annulus { r_min: f64, r_max: f64, sectors: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

impl BlendingMap {
    pub fn is_identity(&self) -> bool {
        matches!(self, BlendingMap::Identity)
    }

    /// Checked evaluation. Points outside the target domain by more than
    /// [`DOMAIN_TOLERANCE`] are rejected; points within the slack are
    /// clamped onto the boundary.
    pub fn blend(&self, x: &Point, direction: Direction) -> Result<Point> {
        match *self {
            BlendingMap::Identity => Ok(*x),
            BlendingMap::Annulus { r_min, r_max, sectors } => {
                // radius of `x` measured in the physical metric
                let (r, theta) = polar(x);
                let r_phys = match direction {
                    Direction::Forward => r / scale_factor(theta, sectors),
                    Direction::Inverse => r,
                };
                let lo = r_min * (1.0 - DOMAIN_TOLERANCE);
                let hi = r_max * (1.0 + DOMAIN_TOLERANCE);
                if !(lo..=hi).contains(&r_phys) {
                    return Err(Error::OutOfDomain { point: *x });
                }
                let clamped = r_phys.clamp(r_min, r_max);
                let f = scale_factor(theta, sectors);
                let out_r = match direction {
                    Direction::Forward => clamped,
                    Direction::Inverse => clamped * f,
                };
                Ok([out_r * theta.cos(), out_r * theta.sin(), 0.0])
            }
        }
    }

    #[inline]
    pub fn forward(&self, x: &Point) -> Point {
        match *self {
            BlendingMap::Identity => *x,
            BlendingMap::Annulus { sectors, .. } => {
                let (r, theta) = polar(x);
                if r == 0.0 {
                    return *x;
                }
                let g = 1.0 / scale_factor(theta, sectors);
                [x[0] * g, x[1] * g, 0.0]
            }
        }
    }

    /// Unchecked inverse, defined on the whole plane minus the origin.
    #[inline]
    pub fn inverse(&self, y: &Point) -> Point {
        match *self {
            BlendingMap::Identity => *y,
            BlendingMap::Annulus { sectors, .. } => {
                let (r, theta) = polar(y);
                if r == 0.0 {
                    return *y;
                }
                let f = scale_factor(theta, sectors);
                [y[0] * f, y[1] * f, 0.0]
            }
        }
    }

    /// Jacobian of the forward map at a computational point.
    pub fn jacobian(&self, x: &Point) -> Mat3 {
        match *self {
            BlendingMap::Identity => [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            BlendingMap::Annulus { sectors, .. } => {
                // Φ(x) = g(θ) x with g = cos(θ - θ_k) / cos(π/n)
                let (r, theta) = polar(x);
                let c = (PI / sectors as f64).cos();
                let off = theta - sector_centre(theta, sectors);
                let g = off.cos() / c;
                let dg = -off.sin() / c;
                let r2 = r * r;
                let grad_theta = [-x[1] / r2, x[0] / r2];
                let mut j = [[0.0; 3]; 3];
                for a in 0..2 {
                    for b in 0..2 {
                        j[a][b] = if a == b { g } else { 0.0 } + x[a] * dg * grad_theta[b];
                    }
                }
                j[2][2] = 1.0;
                j
            }
        }
    }
}

#[inline]
fn polar(x: &Point) -> (f64, f64) {
    let r = x[0].hypot(x[1]);
    let mut theta = x[1].atan2(x[0]);
    if theta < 0.0 {
        theta += 2.0 * PI;
    }
    (r, theta)
}

#[inline]
fn sector_centre(theta: f64, sectors: usize) -> f64 {
    let width = 2.0 * PI / sectors as f64;
    let k = ((theta / width).floor() as usize).min(sectors - 1);
    (k as f64 + 0.5) * width
}

/// Ratio polygon radius / circle radius along the ray at angle `theta`.
#[inline]
fn scale_factor(theta: f64, sectors: usize) -> f64 {
    let c = (PI / sectors as f64).cos();
    c / (theta - sector_centre(theta, sectors)).cos()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const ANNULUS: BlendingMap = BlendingMap::Annulus { r_min: 0.5, r_max: 1.5, sectors: 6 };

    #[test]
    fn identity_is_identity() {
        let x = [0.3, 0.7, 0.0];
        assert_eq!(BlendingMap::Identity.blend(&x, Direction::Forward).unwrap(), x);
        assert_eq!(BlendingMap::Identity.blend(&x, Direction::Inverse).unwrap(), x);
    }

    #[test]
    fn outer_polygon_maps_to_outer_circle() {
        // point on the outer hexagon edge between vertices at 0 and 60 degrees
        let a = [1.5, 0.0, 0.0];
        let b = [1.5 * (PI / 3.0).cos(), 1.5 * (PI / 3.0).sin(), 0.0];
        for s in [0.1, 0.37, 0.5, 0.9] {
            let x = [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1]), 0.0];
            let y = ANNULUS.blend(&x, Direction::Forward).unwrap();
            assert!((y[0].hypot(y[1]) - 1.5).abs() < 1e-14);
        }
    }

    #[test]
    fn outside_is_rejected() {
        assert!(matches!(
            ANNULUS.blend(&[2.0, 0.0, 0.0], Direction::Inverse),
            Err(Error::OutOfDomain { .. })
        ));
        let y = ANNULUS.blend(&[1.5 * (1.0 + 1e-12), 0.0, 0.0], Direction::Inverse).unwrap();
        assert!((y[0] - 1.5).abs() < 1e-15);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let x = [0.8, 0.45, 0.0];
        let j = ANNULUS.jacobian(&x);
        let h = 1e-6;
        for b in 0..2 {
            let mut xp = x;
            let mut xm = x;
            xp[b] += h;
            xm[b] -= h;
            let fp = ANNULUS.forward(&xp);
            let fm = ANNULUS.forward(&xm);
            for a in 0..2 {
                let fd = (fp[a] - fm[a]) / (2.0 * h);
                assert!((fd - j[a][b]).abs() < 1e-8, "J[{a}][{b}] {} vs {fd}", j[a][b]);
            }
        }
    }

    proptest! {
        #[test]
        fn roundtrip_is_identity(r in 0.5f64..1.5, theta in 0.0f64..(2.0 * PI)) {
            let y = [r * theta.cos(), r * theta.sin(), 0.0];
            let x = ANNULUS.inverse(&y);
            let back = ANNULUS.forward(&x);
            for k in 0..2 {
                prop_assert!((back[k] - y[k]).abs() <= 1e-12 * r);
            }
        }
    }
}
