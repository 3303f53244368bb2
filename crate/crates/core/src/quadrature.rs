//! Composite Gauss–Legendre quadrature on `[0, 1]`.
//!
//! A grid is a strictly increasing list of panel edges with a fixed number of
//! Gauss–Legendre nodes per panel. Panels can be split at extra breakpoints so
//! that integrands with jumps (indicators, Haar functions) are integrated
//! without smoothing error.

use std::f64::consts::PI;

use crate::basis::{Basis, BasisKind};
use crate::error::{invalid, Result};

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(order: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(order >= 1, "quadrature order must be positive");
    let mut nodes = vec![0.0; order];
    let mut weights = vec![0.0; order];
    let m = (order + 1) / 2;
    for i in 0..m {
        // Tricomi initial guess, then Newton on P_n.
        let mut z = (PI * (i as f64 + 0.75) / (order as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(order, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-16 {
                let (_, d) = legendre_with_derivative(order, z);
                dp = d;
                break;
            }
        }
        nodes[i] = -z;
        nodes[order - 1 - i] = z;
        let w = 2.0 / ((1.0 - z * z) * dp * dp);
        weights[i] = w;
        weights[order - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for j in 2..=n {
        let jf = j as f64;
        let p2 = ((2.0 * jf - 1.0) * x * p1 - (jf - 1.0) * p0) / jf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// How a grid's resolution was chosen; carried into run manifests.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolutionRule {
    pub description: String,
    pub panels: usize,
    pub order: usize,
}

#[derive(Debug, Clone)]
pub struct QuadratureGrid {
    edges: Vec<f64>,
    order: usize,
    ref_nodes: Vec<f64>,
    ref_weights: Vec<f64>,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    rule: ResolutionRule,
}

impl QuadratureGrid {
    /// Grid over the given panel edges. Edges must start at 0, end at 1 and
    /// be strictly increasing.
    pub fn composite(edges: Vec<f64>, order: usize, description: impl Into<String>) -> Result<Self> {
        if order == 0 {
            return Err(invalid("quadrature order must be positive"));
        }
        if edges.len() < 2 || edges[0] != 0.0 || *edges.last().unwrap() != 1.0 {
            return Err(invalid("panel edges must run from 0 to 1"));
        }
        if edges.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("panel edges must be strictly increasing"));
        }
        let (ref_nodes, ref_weights) = gauss_legendre(order);
        let panels = edges.len() - 1;
        let mut nodes = Vec::with_capacity(panels * order);
        let mut weights = Vec::with_capacity(panels * order);
        for w in edges.windows(2) {
            let half = 0.5 * (w[1] - w[0]);
            let mid = 0.5 * (w[1] + w[0]);
            for (t, wt) in ref_nodes.iter().zip(&ref_weights) {
                nodes.push(mid + half * t);
                weights.push(half * wt);
            }
        }
        Ok(Self {
            edges,
            order,
            ref_nodes,
            ref_weights,
            nodes,
            weights,
            rule: ResolutionRule { description: description.into(), panels, order },
        })
    }

    pub fn uniform(panels: usize, order: usize) -> Result<Self> {
        if panels == 0 {
            return Err(invalid("panel count must be positive"));
        }
        let edges = uniform_edges(panels);
        Self::composite(edges, order, format!("uniform: {panels} panels x {order} Gauss-Legendre nodes"))
    }

    /// The standard grid for a basis truncated at `max_index`:
    /// Fourier uses at least `8·k_max` panels of 8 nodes; Haar uses
    /// `2^(⌈log₂ k_max⌉ + 4)` dyadic cells of 2 nodes, on which every Haar
    /// function up to `k_max` is constant.
    pub fn for_basis(basis: &Basis) -> Self {
        Self::for_basis_with_breakpoints(basis, &[])
    }

    pub fn for_basis_with_breakpoints(basis: &Basis, breakpoints: &[f64]) -> Self {
        let k = basis.max_index().max(1);
        let (panels, order, desc) = match basis.kind() {
            BasisKind::Fourier => {
                let panels = (8 * k).max(16);
                (panels, 8, format!("Fourier k_max={k}: {panels} panels (>= 8 k_max) x 8 GL nodes"))
            }
            BasisKind::Haar => {
                let levels = ceil_log2(k) + 4;
                let cells = 1usize << levels;
                (cells, 2, format!("Haar k_max={k}: 2^{levels} dyadic cells x 2 GL nodes"))
            }
        };
        let mut edges = uniform_edges(panels);
        insert_breakpoints(&mut edges, breakpoints);
        let rule_desc = if breakpoints.is_empty() {
            desc
        } else {
            format!("{desc}, split at {} breakpoint(s)", breakpoints.len())
        };
        Self::composite(edges, order, rule_desc).expect("standard grid is well formed")
    }

    /// A copy of this grid with panels split at the given points.
    pub fn with_breakpoints(&self, points: &[f64]) -> Self {
        let mut edges = self.edges.clone();
        insert_breakpoints(&mut edges, points);
        let desc = format!("{}, split at {} breakpoint(s)", self.rule.description, points.len());
        Self::composite(edges, self.order, desc).expect("refined grid is well formed")
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn panel_count(&self) -> usize {
        self.edges.len() - 1
    }

    pub fn rule(&self) -> &ResolutionRule {
        &self.rule
    }

    /// Index of the panel containing `x` (the last panel for `x = 1`).
    pub fn panel_of(&self, x: f64) -> usize {
        let p = self.edges.partition_point(|&e| e <= x);
        p.saturating_sub(1).min(self.panel_count() - 1)
    }

    /// Gauss–Legendre nodes and weights mapped onto `[a, b]` with this grid's order.
    pub fn subinterval_rule(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.ref_nodes.iter().zip(&self.ref_weights).map(move |(t, w)| (mid + half * t, half * w))
    }

    /// `∫₀¹ g` over the grid.
    pub fn integrate(&self, g: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * g(x)).sum()
    }
}

fn uniform_edges(panels: usize) -> Vec<f64> {
    let mut edges: Vec<f64> = (0..=panels).map(|i| i as f64 / panels as f64).collect();
    edges[panels] = 1.0;
    edges
}

fn insert_breakpoints(edges: &mut Vec<f64>, points: &[f64]) {
    for &p in points {
        if p <= 0.0 || p >= 1.0 || !p.is_finite() {
            continue;
        }
        let pos = edges.partition_point(|&e| e < p);
        // Skip points that coincide (to rounding) with an existing edge.
        let near = |i: usize| edges.get(i).is_some_and(|&e| (e - p).abs() <= 1e-14);
        if near(pos) || (pos > 0 && near(pos - 1)) {
            continue;
        }
        edges.insert(pos, p);
    }
}

pub(crate) fn ceil_log2(k: usize) -> u32 {
    if k <= 1 {
        0
    } else {
        usize::BITS - (k - 1).leading_zeros()
    }
}
