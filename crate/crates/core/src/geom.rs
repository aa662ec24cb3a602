//! Small dense helpers for points and up-to-3x3 matrices.
//!
//! Points are always stored as `[f64; 3]`; two-dimensional data keeps the
//! third component at zero so that the same code paths serve both cases.

pub type Point = [f64; 3];
pub type Mat3 = [[f64; 3]; 3];

#[inline]
pub fn sub(a: &Point, b: &Point) -> Point {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn add(a: &Point, b: &Point) -> Point {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn scale(a: &Point, s: f64) -> Point {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub fn axpy(y: &mut Point, s: f64, x: &Point) {
    y[0] += s * x[0];
    y[1] += s * x[1];
    y[2] += s * x[2];
}

#[inline]
pub fn dot(a: &Point, b: &Point) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn norm(a: &Point) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn dist(a: &Point, b: &Point) -> f64 {
    norm(&sub(a, b))
}

/// Determinant of the leading `dim x dim` block.
pub fn det(m: &Mat3, dim: usize) -> f64 {
    match dim {
        1 => m[0][0],
        2 => m[0][0] * m[1][1] - m[0][1] * m[1][0],
        _ => {
            m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
                - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
        }
    }
}

/// Inverse of the leading `dim x dim` block; entries outside it are zero.
pub fn inverse(m: &Mat3, dim: usize) -> (Mat3, f64) {
    let d = det(m, dim);
    let mut inv = [[0.0; 3]; 3];
    match dim {
        1 => inv[0][0] = 1.0 / d,
        2 => {
            inv[0][0] = m[1][1] / d;
            inv[0][1] = -m[0][1] / d;
            inv[1][0] = -m[1][0] / d;
            inv[1][1] = m[0][0] / d;
        }
        _ => {
            inv[0][0] = (m[1][1] * m[2][2] - m[1][2] * m[2][1]) / d;
            inv[0][1] = (m[0][2] * m[2][1] - m[0][1] * m[2][2]) / d;
            inv[0][2] = (m[0][1] * m[1][2] - m[0][2] * m[1][1]) / d;
            inv[1][0] = (m[1][2] * m[2][0] - m[1][0] * m[2][2]) / d;
            inv[1][1] = (m[0][0] * m[2][2] - m[0][2] * m[2][0]) / d;
            inv[1][2] = (m[0][2] * m[1][0] - m[0][0] * m[1][2]) / d;
            inv[2][0] = (m[1][0] * m[2][1] - m[1][1] * m[2][0]) / d;
            inv[2][1] = (m[0][1] * m[2][0] - m[0][0] * m[2][1]) / d;
            inv[2][2] = (m[0][0] * m[1][1] - m[0][1] * m[1][0]) / d;
        }
    }
    (inv, d)
}

#[inline]
pub fn matvec(m: &Mat3, v: &Point) -> Point {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

#[inline]
pub fn matmul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut c = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    c
}

#[inline]
pub fn transpose(a: &Mat3) -> Mat3 {
    let mut t = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            t[i][j] = a[j][i];
        }
    }
    t
}

/// Columns are the edge vectors `v_k - v_0`, k = 1..=dim.
pub fn simplex_matrix(verts: &[Point], dim: usize) -> Mat3 {
    let mut m = [[0.0; 3]; 3];
    for k in 0..dim {
        let e = sub(&verts[k + 1], &verts[0]);
        for r in 0..dim {
            m[r][k] = e[r];
        }
    }
    m
}

/// Signed measure of a simplex (area in 2D, volume in 3D).
pub fn simplex_measure(verts: &[Point], dim: usize) -> f64 {
    let d = det(&simplex_matrix(verts, dim), dim);
    if dim == 2 {
        d / 2.0
    } else {
        d / 6.0
    }
}

/// Closest point to `p` on the segment `[a, b]`.
pub fn closest_on_segment(p: &Point, a: &Point, b: &Point) -> Point {
    let ab = sub(b, a);
    let len2 = dot(&ab, &ab);
    let t = if len2 > 0.0 { (dot(&sub(p, a), &ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
    add(a, &scale(&ab, t))
}

/// Closest point to `p` on the triangle `abc` (Ericson's region test).
pub fn closest_on_triangle(p: &Point, a: &Point, b: &Point, c: &Point) -> Point {
    let ab = sub(b, a);
    let ac = sub(c, a);
    let ap = sub(p, a);
    let d1 = dot(&ab, &ap);
    let d2 = dot(&ac, &ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = sub(p, b);
    let d3 = dot(&ab, &bp);
    let d4 = dot(&ac, &bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return add(a, &scale(&ab, v));
    }
    let cp = sub(p, c);
    let d5 = dot(&ab, &cp);
    let d6 = dot(&ac, &cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return add(a, &scale(&ac, w));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return add(b, &scale(&sub(c, b), w));
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    add(a, &add(&scale(&ab, v), &scale(&ac, w)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_roundtrip_3d() {
        let m = [[2.0, 1.0, 0.5], [0.0, 3.0, 1.0], [1.0, 0.0, 4.0]];
        let (inv, d) = inverse(&m, 3);
        assert!(d.abs() > 0.0);
        let id = matmul(&m, &inv);
        for i in 0..3 {
            for j in 0..3 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((id[i][j] - e).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn triangle_projection() {
        let a = [0.0, 0.0, 0.0];
        let b = [1.0, 0.0, 0.0];
        let c = [0.0, 1.0, 0.0];
        let q = closest_on_triangle(&[0.2, 0.2, 1.0], &a, &b, &c);
        assert!(dist(&q, &[0.2, 0.2, 0.0]) < 1e-15);
        assert_eq!(closest_on_triangle(&[2.0, -1.0, 0.0], &a, &b, &c), b);
        let q = closest_on_triangle(&[1.0, 1.0, 0.0], &a, &b, &c);
        assert!((q[0] - 0.5).abs() < 1e-15 && (q[1] - 0.5).abs() < 1e-15);
    }
}
