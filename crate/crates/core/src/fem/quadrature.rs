//! Symmetric quadrature rules on the reference simplex.
//!
//! Points are given in barycentric coordinates; weights sum to the measure
//! of the reference simplex (1/2 in 2D, 1/6 in 3D).

#[derive(Clone, Debug)]
pub struct QuadratureRule {
    pub degree: usize,
    pub points: Vec<[f64; 4]>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    /// Cheapest tabulated rule exact for polynomials of degree `degree`.
    pub fn for_degree(dim: usize, degree: usize) -> Self {
        match (dim, degree) {
            (2, 0..=2) => tri_degree2(),
            (2, 3..=4) => tri_degree4(),
            (3, 0..=2) => tet_degree2(),
            (3, 3..=5) => tet_degree5(),
            _ => panic!("no quadrature rule of degree {degree} in {dim}D"),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Gauss-Legendre rule on [0, 1].
pub fn gauss_legendre_unit(n: usize) -> Vec<(f64, f64)> {
    let (x, w): (&[f64], &[f64]) = match n {
        1 => (&[0.0], &[2.0]),
        2 => (&[-0.577_350_269_189_625_8, 0.577_350_269_189_625_8], &[1.0, 1.0]),
        3 => (&[-0.774_596_669_241_483_4, 0.0, 0.774_596_669_241_483_4], &[5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0]),
        _ => panic!("Gauss-Legendre rule with {n} points not tabulated"),
    };
    x.iter().zip(w).map(|(&x, &w)| (0.5 * (x + 1.0), 0.5 * w)).collect()
}

fn tri_degree2() -> QuadratureRule {
    let a = 1.0 / 6.0;
    let b = 2.0 / 3.0;
    QuadratureRule {
        degree: 2,
        points: vec![[b, a, a, 0.0], [a, b, a, 0.0], [a, a, b, 0.0]],
        weights: vec![1.0 / 6.0; 3],
    }
}

fn tri_degree4() -> QuadratureRule {
    let a = 0.445_948_490_915_965;
    let wa = 0.223_381_589_678_011 / 2.0;
    let b = 0.091_576_213_509_771;
    let wb = 0.109_951_743_655_322 / 2.0;
    let mut points = Vec::new();
    let mut weights = Vec::new();
    for (p, w) in [(a, wa), (b, wb)] {
        let q = 1.0 - 2.0 * p;
        for pt in [[q, p, p, 0.0], [p, q, p, 0.0], [p, p, q, 0.0]] {
            points.push(pt);
            weights.push(w);
        }
    }
    QuadratureRule { degree: 4, points, weights }
}

fn tet_degree2() -> QuadratureRule {
    let a = 0.138_196_601_125_010_5;
    let b = 1.0 - 3.0 * a;
    QuadratureRule {
        degree: 2,
        points: vec![[b, a, a, a], [a, b, a, a], [a, a, b, a], [a, a, a, b]],
        weights: vec![1.0 / 24.0; 4],
    }
}

fn tet_degree5() -> QuadratureRule {
    let mut points = Vec::new();
    let mut weights = Vec::new();
    for (a, w) in [(0.092_735_250_310_891_2, 0.012_248_840_519_393_66), (0.310_885_919_263_300_6, 0.018_781_320_953_002_64)] {
        let b = 1.0 - 3.0 * a;
        for k in 0..4 {
            let mut p = [a; 4];
            p[k] = b;
            points.push(p);
            weights.push(w);
        }
    }
    let c = 0.454_496_295_874_350_4;
    let d = 0.5 - c;
    let w = 0.007_091_003_462_846_911;
    for (i, j) in [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)] {
        let mut p = [d; 4];
        p[i] = c;
        p[j] = c;
        points.push(p);
        weights.push(w);
    }
    QuadratureRule { degree: 5, points, weights }
}
