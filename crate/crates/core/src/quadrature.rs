//! Quadrature rules on the reference triangle (barycentric points, weights
//! summing to one) and on the unit interval.

#[derive(Clone, Debug, PartialEq)]
pub struct QuadratureRule {
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
    /// Total polynomial degree integrated exactly.
    pub degree: usize,
}

const GAUSS5_NODES: [f64; 5] = [
    -0.906_179_845_938_664,
    -0.538_469_310_105_683_1,
    0.0,
    0.538_469_310_105_683_1,
    0.906_179_845_938_664,
];
const GAUSS5_WEIGHTS: [f64; 5] = [
    0.236_926_885_056_189_1,
    0.478_628_670_499_366_5,
    0.568_888_888_888_888_9,
    0.478_628_670_499_366_5,
    0.236_926_885_056_189_1,
];

impl QuadratureRule {
    /// Vertex sampling: exact for P1, realizes π_h-integration.
    pub fn vertex() -> Self {
        Self {
            points: vec![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            weights: vec![1.0 / 3.0; 3],
            degree: 1,
        }
    }

    pub fn midpoint() -> Self {
        Self {
            points: vec![[1.0 / 3.0; 3]],
            weights: vec![1.0],
            degree: 1,
        }
    }

    /// Six-point symmetric rule of degree 4.
    pub fn order4() -> Self {
        let (a, wa) = (0.445_948_490_915_965, 0.223_381_589_678_011);
        let (b, wb) = (0.091_576_213_509_771, 0.109_951_743_655_322);
        let mut points = Vec::with_capacity(6);
        let mut weights = Vec::with_capacity(6);
        for (s, w) in [(a, wa), (b, wb)] {
            let r = 1.0 - 2.0 * s;
            points.extend([[r, s, s], [s, r, s], [s, s, r]]);
            weights.extend([w; 3]);
        }
        Self {
            points,
            weights,
            degree: 4,
        }
    }

    /// Seven-point symmetric rule of degree 5.
    pub fn order5() -> Self {
        let mut points = vec![[1.0 / 3.0; 3]];
        let mut weights = vec![0.225];
        for (s, w) in [
            (0.470_142_064_105_115, 0.132_394_152_788_506),
            (0.101_286_507_323_456, 0.125_939_180_544_827),
        ] {
            let r = 1.0 - 2.0 * s;
            points.extend([[r, s, s], [s, r, s], [s, s, r]]);
            weights.extend([w; 3]);
        }
        Self {
            points,
            weights,
            degree: 5,
        }
    }

    /// Collapsed 5×5 Gauss product rule of degree 8.
    pub fn order8() -> Self {
        let mut points = Vec::with_capacity(25);
        let mut weights = Vec::with_capacity(25);
        for (xu, wu) in GAUSS5_NODES.iter().zip(GAUSS5_WEIGHTS) {
            let u = 0.5 * (xu + 1.0);
            for (xv, wv) in GAUSS5_NODES.iter().zip(GAUSS5_WEIGHTS) {
                let v = 0.5 * (xv + 1.0);
                let x = u;
                let y = v * (1.0 - u);
                points.push([1.0 - x - y, x, y]);
                // 2 × (¼ wu wv) × Jacobian (1 − u), normalized to unit area
                weights.push(0.5 * wu * wv * (1.0 - u));
            }
        }
        Self {
            points,
            weights,
            degree: 8,
        }
    }

    /// Applies `self` on each of the `4^levels` congruent subtriangles.
    pub fn subdivided(&self, levels: usize) -> Self {
        let mut tris: Vec<[[f64; 3]; 3]> =
            vec![[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]];
        for _ in 0..levels {
            let mut next = Vec::with_capacity(tris.len() * 4);
            for [a, b, c] in tris {
                let mid = |p: [f64; 3], q: [f64; 3]| std::array::from_fn(|i| 0.5 * (p[i] + q[i]));
                let (ab, bc, ca) = (mid(a, b), mid(b, c), mid(c, a));
                next.extend([[a, ab, ca], [ab, b, bc], [ca, bc, c], [ab, bc, ca]]);
            }
            tris = next;
        }
        let scale = 1.0 / tris.len() as f64;
        let mut points = Vec::with_capacity(tris.len() * self.points.len());
        let mut weights = Vec::with_capacity(points.capacity());
        for t in &tris {
            for (l, w) in self.points.iter().zip(&self.weights) {
                points.push(std::array::from_fn(|i| {
                    l[0] * t[0][i] + l[1] * t[1][i] + l[2] * t[2][i]
                }));
                weights.push(w * scale);
            }
        }
        Self {
            points,
            weights,
            degree: self.degree,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = ([f64; 3], f64)> + '_ {
        self.points.iter().copied().zip(self.weights.iter().copied())
    }
}

/// Three-point Gauss rule on `[0, 1]`, exact for degree 5.
pub fn gauss3_unit() -> [(f64, f64); 3] {
    let d = 0.5 * (0.6f64).sqrt();
    [(0.5 - d, 5.0 / 18.0), (0.5, 8.0 / 18.0), (0.5 + d, 5.0 / 18.0)]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn factorial(n: u32) -> f64 {
        (1..=n).map(f64::from).product()
    }

    /// Normalized integral of λ1^a λ2^b λ0^c over the reference triangle.
    fn monomial_exact(a: u32, b: u32, c: u32) -> f64 {
        2.0 * factorial(a) * factorial(b) * factorial(c) / factorial(a + b + c + 2)
    }

    fn check(rule: &QuadratureRule) {
        let sum: f64 = rule.weights.iter().sum();
        assert!((sum - 1.0).abs() < 1e-14);
        for a in 0..=rule.degree as u32 {
            for b in 0..=(rule.degree as u32 - a) {
                let c = rule.degree as u32 - a - b;
                let q: f64 = rule
                    .iter()
                    .map(|(l, w)| w * l[1].powi(a as i32) * l[2].powi(b as i32) * l[0].powi(c as i32))
                    .sum();
                let e = monomial_exact(a, b, c);
                assert!((q - e).abs() < 1e-13, "rule deg {} monomial ({a},{b},{c}): {q} vs {e}", rule.degree);
            }
        }
    }

    #[test]
    fn rules_exact_to_declared_degree() {
        for rule in [
            QuadratureRule::midpoint(),
            QuadratureRule::vertex(),
            QuadratureRule::order4(),
            QuadratureRule::order5(),
            QuadratureRule::order8(),
            QuadratureRule::order4().subdivided(2),
        ] {
            check(&rule);
        }
    }

    #[test]
    fn order4_not_exact_beyond() {
        let r = QuadratureRule::order4();
        let q: f64 = r.iter().map(|(l, w)| w * l[1].powi(6)).sum();
        assert!((q - monomial_exact(6, 0, 0)).abs() > 1e-8);
    }

    #[test]
    fn gauss3_exact_for_quintic() {
        let q: f64 = gauss3_unit().iter().map(|(t, w)| w * t.powi(5)).sum();
        assert!((q - 1.0 / 6.0).abs() < 1e-15);
    }
}
