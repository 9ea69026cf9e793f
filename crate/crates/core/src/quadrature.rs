//! Gauss-Legendre rules on [-1, 1].

use std::f64::consts::PI;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    /// `n`-point rule, nodes in increasing order. Newton iteration on the
    /// three-term Legendre recurrence, converged to machine precision.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "quadrature order must be positive");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let nf = n as f64;
        for i in 0..(n + 1) / 2 {
            // Tricomi initial guess for the i-th largest root
            let mut x = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        GaussLegendre { nodes, weights }
    }

    /// Nodes and weights mapped onto `[0, len]`.
    pub fn on_interval(&self, len: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let h = 0.5 * len;
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(&x, &w)| (h * (x + 1.0), h * w))
    }
}

/// P_n(x) and P_n'(x).
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn two_point_rule() {
        let g = GaussLegendre::new(2);
        assert_relative_eq!(g.nodes[1], 1.0 / 3f64.sqrt(), epsilon = 1e-15);
        assert_relative_eq!(g.nodes[0], -1.0 / 3f64.sqrt(), epsilon = 1e-15);
        assert_relative_eq!(g.weights[0], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn exact_for_polynomials() {
        for n in 1..=24 {
            let g = GaussLegendre::new(n);
            assert_relative_eq!(g.weights.iter().sum::<f64>(), 2.0, epsilon = 1e-13);
            // x^(2n-2) integrates to 2/(2n-1)
            let deg = 2 * n - 2;
            let s: f64 = g
                .nodes
                .iter()
                .zip(&g.weights)
                .map(|(x, w)| w * x.powi(deg as i32))
                .sum();
            assert_relative_eq!(s, 2.0 / (deg as f64 + 1.0), max_relative = 1e-12);
            assert!(g.nodes.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn mapped_interval() {
        let g = GaussLegendre::new(5);
        let s: f64 = g.on_interval(3.0).map(|(t, w)| w * t * t).sum();
        assert_relative_eq!(s, 9.0, max_relative = 1e-13);
    }
}
