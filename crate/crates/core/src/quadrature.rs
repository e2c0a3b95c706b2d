//! Gauss-Legendre rules on the unit interval and Lagrange basis polynomials.

use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 20;

/// Quadrature rule on `(0, 1)`. Weights sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl QuadratureRule {
    /// Arbitrary rule; nodes must lie in `[0, 1]`, weights must be positive.
    pub fn new(nodes: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if nodes.is_empty() || nodes.len() != weights.len() {
            return Err(Error::InvalidArgument(
                "quadrature needs matching, non-empty node and weight lists".into(),
            ));
        }
        if nodes.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
            return Err(Error::InvalidArgument(
                "quadrature nodes must lie in [0, 1]".into(),
            ));
        }
        if weights.iter().any(|&w| !(w > 0.0)) {
            return Err(Error::InvalidArgument(
                "quadrature weights must be positive".into(),
            ));
        }
        Ok(Self { nodes, weights })
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.nodes.iter().copied().zip(self.weights.iter().copied())
    }

    /// Approximates `int_0^1 f(s) ds`.
    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.iter().map(|(s, w)| w * f(s)).sum()
    }
}

/// Gauss-Legendre rule with `m` points mapped to `(0, 1)`, exact up to degree `2m - 1`.
pub fn gauss_legendre(m: usize) -> Result<QuadratureRule> {
    if !(1..=MAX_ORDER).contains(&m) {
        return Err(Error::InvalidArgument(format!(
            "Gauss-Legendre order must be in 1..={MAX_ORDER}, got {m}"
        )));
    }
    let mut nodes = vec![0.0; m];
    let mut weights = vec![0.0; m];
    // roots are symmetric; compute the upper half on [-1, 1]
    for i in 0..m.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(m, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() <= 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(m, x);
        dp = if d != 0.0 { d } else { dp };
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        // map [-1, 1] -> [0, 1]
        nodes[m - 1 - i] = 0.5 * (1.0 + x);
        nodes[i] = 0.5 * (1.0 - x);
        weights[m - 1 - i] = 0.5 * w;
        weights[i] = 0.5 * w;
    }
    if m % 2 == 1 {
        nodes[m / 2] = 0.5;
    }
    Ok(QuadratureRule { nodes, weights })
}

/// `(P_n(x), P_n'(x))` via the three-term recurrence.
fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
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

/// Value of the `i`-th Lagrange basis polynomial for `nodes` at `s`.
pub fn lagrange_eval(nodes: &[f64], i: usize, s: f64) -> Result<f64> {
    if i >= nodes.len() {
        return Err(Error::InvalidArgument(format!(
            "basis index {i} out of range for {} nodes",
            nodes.len()
        )));
    }
    check_distinct(nodes)?;
    Ok(lagrange_unchecked(nodes, i, s))
}

pub(crate) fn check_distinct(nodes: &[f64]) -> Result<()> {
    for a in 0..nodes.len() {
        for b in a + 1..nodes.len() {
            if nodes[a] == nodes[b] {
                return Err(Error::DuplicateNodes(a, b));
            }
        }
    }
    Ok(())
}

pub(crate) fn lagrange_unchecked(nodes: &[f64], i: usize, s: f64) -> f64 {
    let xi = nodes[i];
    nodes
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, &xj)| (s - xj) / (xi - xj))
        .product()
}
