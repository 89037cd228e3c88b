//! Quadrature grids on axis-aligned boxes and functions sampled on them.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_NODES_1D: usize = 201;
pub const DEFAULT_NODES_2D: usize = 41;

/// Ω as a product of closed intervals, one or two of them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    intervals: Vec<[f64; 2]>,
}

impl DomainSpec {
    pub fn new(intervals: Vec<[f64; 2]>) -> Result<Self> {
        if intervals.is_empty() {
            return Err(Error::InvalidDomain("no intervals given".into()));
        }
        if intervals.len() > 2 {
            return Err(Error::UnsupportedDimension(intervals.len()));
        }
        for [a, b] in &intervals {
            if !a.is_finite() || !b.is_finite() || a >= b {
                return Err(Error::InvalidDomain(format!("interval [{a}, {b}] requires a < b")));
            }
        }
        Ok(DomainSpec { intervals })
    }

    pub fn interval(a: f64, b: f64) -> Result<Self> {
        DomainSpec::new(vec![[a, b]])
    }

    pub fn intervals(&self) -> &[[f64; 2]] {
        &self.intervals
    }

    pub fn dim(&self) -> usize {
        self.intervals.len()
    }

    pub fn measure(&self) -> f64 {
        self.intervals.iter().map(|[a, b]| b - a).product()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rule {
    Trapezoid,
    GaussLegendre,
}

impl Rule {
    pub fn name(self) -> &'static str {
        match self {
            Rule::Trapezoid => "trapezoid",
            Rule::GaussLegendre => "gauss-legendre",
        }
    }

    pub fn from_name(name: &str) -> Option<Rule> {
        match name {
            "trapezoid" => Some(Rule::Trapezoid),
            "gauss-legendre" => Some(Rule::GaussLegendre),
            _ => None,
        }
    }
}

/// Opaque tag identifying a grid layout. Grids built from the same domain,
/// rule and node count share a tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GridId(u64);

#[derive(Debug, Clone)]
pub struct Grid {
    id: GridId,
    domain: DomainSpec,
    rule: Rule,
    nodes_per_dim: usize,
    /// Flattened node coordinates, `dim` entries per node.
    coords: Vec<f64>,
    weights: Vec<f64>,
    measure: f64,
}

impl Grid {
    pub fn build(domain: &DomainSpec, rule: Rule, nodes_per_dim: usize) -> Result<Grid> {
        if nodes_per_dim < 2 {
            return Err(Error::InvalidArgument(format!(
                "nodes_per_dim must be at least 2, got {nodes_per_dim}"
            )));
        }
        let rules: Vec<(Vec<f64>, Vec<f64>)> = domain
            .intervals()
            .iter()
            .map(|&[a, b]| match rule {
                Rule::Trapezoid => trapezoid_rule(a, b, nodes_per_dim),
                Rule::GaussLegendre => {
                    let (x, w) = gauss_legendre_rule(nodes_per_dim);
                    map_to_interval(&x, &w, a, b)
                }
            })
            .collect();

        let dim = domain.dim();
        let (coords, weights) = match rules.as_slice() {
            [(x, w)] => (x.clone(), w.clone()),
            [(x0, w0), (x1, w1)] => {
                let n = x0.len() * x1.len();
                let mut coords = Vec::with_capacity(2 * n);
                let mut weights = Vec::with_capacity(n);
                for (xi, wi) in x0.iter().zip(w0) {
                    for (yj, wj) in x1.iter().zip(w1) {
                        coords.push(*xi);
                        coords.push(*yj);
                        weights.push(wi * wj);
                    }
                }
                (coords, weights)
            }
            _ => return Err(Error::UnsupportedDimension(dim)),
        };

        let mut hasher = DefaultHasher::new();
        for [a, b] in domain.intervals() {
            a.to_bits().hash(&mut hasher);
            b.to_bits().hash(&mut hasher);
        }
        rule.hash(&mut hasher);
        nodes_per_dim.hash(&mut hasher);

        Ok(Grid {
            id: GridId(hasher.finish()),
            domain: domain.clone(),
            rule,
            nodes_per_dim,
            coords,
            weights,
            measure: domain.measure(),
        })
    }

    pub fn id(&self) -> GridId {
        self.id
    }

    pub fn domain(&self) -> &DomainSpec {
        &self.domain
    }

    pub fn rule(&self) -> Rule {
        self.rule
    }

    pub fn nodes_per_dim(&self) -> usize {
        self.nodes_per_dim
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn node(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.coords[i * d..(i + 1) * d]
    }

    pub fn nodes(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks_exact(self.dim())
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn measure(&self) -> f64 {
        self.measure
    }

    pub fn check(&self, f: &GridFunction) -> Result<()> {
        if f.grid_id != self.id || f.values.len() != self.len() {
            return Err(Error::GridMismatch(format!(
                "function with {} values does not belong to this grid of {} nodes",
                f.values.len(),
                self.len()
            )));
        }
        Ok(())
    }

    /// Σ_j w_j f_j.
    pub fn integrate(&self, f: &GridFunction) -> Result<f64> {
        self.check(f)?;
        Ok(crate::linalg::compensated_sum(self.weights.iter().zip(&f.values).map(|(w, v)| w * v)))
    }
}


fn trapezoid_rule(a: f64, b: f64, m: usize) -> (Vec<f64>, Vec<f64>) {
    let h = (b - a) / (m - 1) as f64;
    let nodes = (0..m)
        .map(|i| if i == m - 1 { b } else { a + i as f64 * h })
        .collect();
    let weights = (0..m)
        .map(|i| if i == 0 || i == m - 1 { 0.5 * h } else { h })
        .collect();
    (nodes, weights)
}

/// Gauss–Legendre nodes and weights on [-1, 1], ascending.
pub(crate) fn gauss_legendre_rule(m: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; m];
    let mut weights = vec![0.0; m];
    let n = m as f64;
    for i in 0..m.div_ceil(2) {
        // Chebyshev-like initial guess for the i-th largest root
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(m, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(m, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[m - 1 - i] = x;
        weights[i] = w;
        weights[m - 1 - i] = w;
    }
    if m % 2 == 1 {
        nodes[m / 2] = 0.0;
    }
    (nodes, weights)
}

fn legendre_with_derivative(m: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=m {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let n = m as f64;
    let dp = n * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

fn map_to_interval(x: &[f64], w: &[f64], a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    (
        x.iter().map(|t| (mid + half * t).clamp(a, b)).collect(),
        w.iter().map(|wi| half * wi).collect(),
    )
}

/// A function sampled at the nodes of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    values: Vec<f64>,
    grid_id: GridId,
}

impl GridFunction {
    pub fn new(grid: &Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "expected {} values, got {}",
                grid.len(),
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NumericDomain(format!(
                "non-finite value {} at node {i}",
                values[i]
            )));
        }
        Ok(GridFunction {
            values,
            grid_id: grid.id(),
        })
    }

    pub fn constant(grid: &Grid, c: f64) -> Self {
        GridFunction {
            values: vec![c; grid.len()],
            grid_id: grid.id(),
        }
    }

    pub fn zeros(grid: &Grid) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn from_fn(grid: &Grid, mut f: impl FnMut(&[f64]) -> f64) -> Result<Self> {
        let values = grid.nodes().map(&mut f).collect();
        GridFunction::new(grid, values)
    }

    /// Samples an expression in the spatial variables `x1, x2`.
    pub fn from_expr(grid: &Grid, expr: &crate::expr::Expr) -> Result<Self> {
        let values = grid
            .nodes()
            .map(|x| expr.evaluate(&crate::expr::Bindings::spatial(x, &[])))
            .collect::<Result<Vec<_>>>()?;
        GridFunction::new(grid, values)
    }

    /// Rebinds raw values to the layout of `self` (same grid).
    pub(crate) fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        if values.len() != self.values.len() {
            return Err(Error::GridMismatch("length changed".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NumericDomain(format!(
                "non-finite value {} at node {i}",
                values[i]
            )));
        }
        Ok(GridFunction {
            values,
            grid_id: self.grid_id,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn grid_id(&self) -> GridId {
        self.grid_id
    }

    pub fn sup_norm(&self) -> Result<f64> {
        if self.values.is_empty() {
            return Err(Error::EmptyFunction);
        }
        Ok(sup_norm(&self.values))
    }

    fn same_grid(&self, other: &GridFunction) -> Result<()> {
        if self.grid_id != other.grid_id || self.values.len() != other.values.len() {
            return Err(Error::GridMismatch("functions live on different grids".into()));
        }
        Ok(())
    }

    /// α·self + β·other.
    pub fn lin_comb(&self, alpha: f64, other: &GridFunction, beta: f64) -> Result<GridFunction> {
        self.same_grid(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| alpha * a + beta * b)
            .collect();
        self.with_values(values)
    }

    pub fn sub(&self, other: &GridFunction) -> Result<GridFunction> {
        self.same_grid(other)?;
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect();
        self.with_values(values)
    }

    pub fn scale(&self, alpha: f64) -> Result<GridFunction> {
        self.with_values(self.values.iter().map(|v| alpha * v).collect())
    }

    /// sup_j |self_j − other_j|.
    pub fn sup_distance(&self, other: &GridFunction) -> Result<f64> {
        self.same_grid(other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs())))
    }
}

impl Serialize for GridFunction {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.values.serialize(s)
    }
}

pub(crate) fn sup_norm(values: &[f64]) -> f64 {
    values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit() -> DomainSpec {
        DomainSpec::interval(0.0, 1.0).unwrap()
    }

    #[test]
    fn trapezoid_three_nodes() {
        let g = Grid::build(&unit(), Rule::Trapezoid, 3).unwrap();
        let nodes: Vec<f64> = g.nodes().map(|p| p[0]).collect();
        assert_eq!(nodes, vec![0.0, 0.5, 1.0]);
        assert_eq!(g.weights(), &[0.25, 0.5, 0.25]);
    }

    #[test]
    fn weights_sum_to_measure() {
        let domains = [
            unit(),
            DomainSpec::interval(-2.0, 3.5).unwrap(),
            DomainSpec::new(vec![[0.0, 2.0], [0.0, 3.0]]).unwrap(),
            DomainSpec::new(vec![[-1.0, 0.5], [2.0, 2.25]]).unwrap(),
        ];
        for d in &domains {
            for rule in [Rule::Trapezoid, Rule::GaussLegendre] {
                for m in [2, 3, 7, 41, 201] {
                    let g = Grid::build(d, rule, m).unwrap();
                    let s: f64 = g.weights().iter().sum();
                    assert!(
                        ((s - g.measure()) / g.measure()).abs() <= 1e-12,
                        "{rule:?} m={m}: {s} vs {}",
                        g.measure()
                    );
                    assert!(g.weights().iter().all(|&w| w > 0.0));
                    for p in g.nodes() {
                        for (c, [a, b]) in p.iter().zip(d.intervals()) {
                            assert!(*a <= *c && *c <= *b);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn product_domain_measure() {
        let d = DomainSpec::new(vec![[0.0, 2.0], [0.0, 3.0]]).unwrap();
        for rule in [Rule::Trapezoid, Rule::GaussLegendre] {
            assert_eq!(Grid::build(&d, rule, 5).unwrap().measure(), 6.0);
        }
    }

    #[test]
    fn tensor_product_is_row_major() {
        let d = DomainSpec::new(vec![[0.0, 1.0], [10.0, 12.0]]).unwrap();
        let g = Grid::build(&d, Rule::Trapezoid, 3).unwrap();
        assert_eq!(g.len(), 9);
        assert_eq!(g.node(0), &[0.0, 10.0]);
        assert_eq!(g.node(1), &[0.0, 11.0]);
        assert_eq!(g.node(3), &[0.5, 10.0]);
        assert_eq!(g.weights()[4], 0.5 * 1.0);
    }

    #[test]
    fn invalid_domains() {
        assert!(matches!(DomainSpec::interval(1.0, 1.0), Err(Error::InvalidDomain(_))));
        assert!(matches!(DomainSpec::interval(2.0, 1.0), Err(Error::InvalidDomain(_))));
        assert!(matches!(DomainSpec::new(vec![]), Err(Error::InvalidDomain(_))));
        assert!(matches!(
            DomainSpec::new(vec![[0.0, 1.0]; 3]),
            Err(Error::UnsupportedDimension(3))
        ));
        assert!(Grid::build(&unit(), Rule::Trapezoid, 1).is_err());
    }

    #[test]
    fn integrate_examples() {
        let g = Grid::build(&unit(), Rule::Trapezoid, 201).unwrap();
        assert_eq!(g.integrate(&GridFunction::constant(&g, 1.0)).unwrap(), 1.0);
        assert_eq!(g.integrate(&GridFunction::zeros(&g)).unwrap(), 0.0);
        for m in [2, 3, 11, 201] {
            let g = Grid::build(&unit(), Rule::Trapezoid, m).unwrap();
            let f = GridFunction::from_fn(&g, |p| p[0]).unwrap();
            assert!((g.integrate(&f).unwrap() - 0.5).abs() < 1e-15, "m={m}");
        }
    }

    #[test]
    fn integrate_rejects_foreign_function() {
        let g1 = Grid::build(&unit(), Rule::Trapezoid, 11).unwrap();
        let g2 = Grid::build(&unit(), Rule::GaussLegendre, 11).unwrap();
        let f = GridFunction::constant(&g2, 1.0);
        assert!(matches!(g1.integrate(&f), Err(Error::GridMismatch(_))));
        // same layout, same tag
        let g3 = Grid::build(&unit(), Rule::Trapezoid, 11).unwrap();
        assert!(g1.integrate(&GridFunction::constant(&g3, 1.0)).is_ok());
    }

    #[test]
    fn sup_norm_examples() {
        let g = Grid::build(&unit(), Rule::Trapezoid, 3).unwrap();
        assert_eq!(GridFunction::zeros(&g).sup_norm().unwrap(), 0.0);
        let f = GridFunction::new(&g, vec![-3.0, 1.0, 2.0]).unwrap();
        assert_eq!(f.sup_norm().unwrap(), 3.0);
        let g = Grid::build(&unit(), Rule::Trapezoid, 101).unwrap();
        let f = GridFunction::from_fn(&g, |p| p[0] - 0.5).unwrap();
        assert_eq!(f.sup_norm().unwrap(), 0.5);
    }

    #[test]
    fn rejects_non_finite_values() {
        let g = Grid::build(&unit(), Rule::Trapezoid, 3).unwrap();
        assert!(GridFunction::new(&g, vec![0.0, f64::NAN, 1.0]).is_err());
        assert!(GridFunction::new(&g, vec![0.0, 1.0]).is_err());
    }

    #[test]
    fn gauss_legendre_is_exact_to_degree_2m_minus_1() {
        for m in [2usize, 3, 5, 8, 20] {
            let (x, w) = gauss_legendre_rule(m);
            for deg in 0..(2 * m) {
                let q: f64 = x.iter().zip(&w).map(|(xi, wi)| wi * xi.powi(deg as i32)).sum();
                let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
                assert!((q - exact).abs() < 1e-13, "m={m} deg={deg}: {q} vs {exact}");
            }
        }
    }

    #[test]
    fn trapezoid_refinement_is_second_order() {
        // ∫_0^1 exp(x) dx = e − 1
        let exact = std::f64::consts::E - 1.0;
        let err = |m: usize| {
            let g = Grid::build(&unit(), Rule::Trapezoid, m).unwrap();
            let f = GridFunction::from_fn(&g, |p| p[0].exp()).unwrap();
            (g.integrate(&f).unwrap() - exact).abs()
        };
        let mut prev = err(11);
        for m in [21, 41, 81, 161] {
            let e = err(m);
            let order = (prev / e).log2();
            assert!(order >= 1.9, "order {order} at m={m}");
            prev = e;
        }
    }
}

#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    fn arb_grid() -> impl Strategy<Value = Grid> {
        (
            prop_oneof![Just(Rule::Trapezoid), Just(Rule::GaussLegendre)],
            -3.0..0.0f64,
            0.1..3.0f64,
            2..40usize,
        )
            .prop_map(|(rule, a, len, m)| Grid::build(&DomainSpec::interval(a, a + len).unwrap(), rule, m).unwrap())
    }

    fn arb_grid_with_functions() -> impl Strategy<Value = (Grid, Vec<f64>, Vec<f64>)> {
        arb_grid().prop_flat_map(|g| {
            let n = g.len();
            (
                Just(g),
                prop::collection::vec(-10.0..10.0f64, n),
                prop::collection::vec(-10.0..10.0f64, n),
            )
        })
    }

    proptest! {
        #[test]
        fn weights_sum_to_measure(g in arb_grid()) {
            let total: f64 = g.weights().iter().sum();
            prop_assert!((total - g.measure()).abs() <= 1e-13 * g.measure());
        }

        #[test]
        fn integrate_is_linear((g, f, h) in arb_grid_with_functions(), alpha in -5.0..5.0f64, beta in -5.0..5.0f64) {
            let f = GridFunction::new(&g, f).unwrap();
            let h = GridFunction::new(&g, h).unwrap();
            let lhs = g.integrate(&f.lin_comb(alpha, &h, beta).unwrap()).unwrap();
            let rhs = alpha * g.integrate(&f).unwrap() + beta * g.integrate(&h).unwrap();
            // relative to the scale of the integrated magnitudes
            let scale = g.measure() * (alpha.abs() * f.sup_norm().unwrap() + beta.abs() * h.sup_norm().unwrap());
            prop_assert!((lhs - rhs).abs() <= 1e-13 * scale.max(1e-300));
        }

        #[test]
        fn sup_norm_is_a_norm((g, f, h) in arb_grid_with_functions(), alpha in -5.0..5.0f64) {
            let f = GridFunction::new(&g, f).unwrap();
            let h = GridFunction::new(&g, h).unwrap();
            let nf = f.sup_norm().unwrap();
            let nh = h.sup_norm().unwrap();
            let sum = f.lin_comb(1.0, &h, 1.0).unwrap().sup_norm().unwrap();
            prop_assert!(sum <= nf + nh + 1e-13 * (nf + nh));
            let scaled = f.scale(alpha).unwrap().sup_norm().unwrap();
            prop_assert!((scaled - alpha.abs() * nf).abs() <= 1e-13 * (1.0 + alpha.abs() * nf));
            prop_assert!(nf >= 0.0);
            prop_assert_eq!(GridFunction::zeros(&g).sup_norm().unwrap(), 0.0);
        }
    }
}
