//! Partitions of the observation interval and Gauss-Legendre quadrature on
//! their cells.
//!
//! Cells follow the convention `T_1 = [t_0, t_1]` and `T_j = (t_{j-1}, t_j]`
//! for `j >= 2`, so every point of `[t_0, t_n]` belongs to exactly one cell.
//! Cell indices are 1-based in the public API to match that labelling.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ordered partition `t_0 < t_1 < ... < t_n` of a bounded interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridRepr", into = "GridRepr")]
pub struct TimeGrid {
    t: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct GridRepr {
    n: usize,
    t: Vec<f64>,
}

impl TryFrom<GridRepr> for TimeGrid {
    type Error = Error;

    fn try_from(repr: GridRepr) -> Result<Self> {
        if repr.t.len() != repr.n + 1 {
            return Err(Error::InvalidArgument(format!(
                "grid has n = {} but {} endpoints",
                repr.n,
                repr.t.len()
            )));
        }
        TimeGrid::new(repr.t)
    }
}

impl From<TimeGrid> for GridRepr {
    fn from(grid: TimeGrid) -> Self {
        GridRepr {
            n: grid.n(),
            t: grid.t,
        }
    }
}

impl TimeGrid {
    /// Builds a grid from its endpoints `t_0..=t_n`.
    pub fn new(t: Vec<f64>) -> Result<Self> {
        if t.len() < 2 {
            return Err(Error::InvalidArgument(
                "a grid needs at least two endpoints".into(),
            ));
        }
        if t.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("grid endpoints must be finite".into()));
        }
        if let Some(w) = t.windows(2).find(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(format!(
                "grid endpoints must be strictly increasing ({} >= {})",
                w[0], w[1]
            )));
        }
        Ok(Self { t })
    }

    /// `t_i = left + i (right - left) / n`.
    pub fn uniform(n: usize, left: f64, right: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("grid size n must be positive".into()));
        }
        if !(left < right) || !left.is_finite() || !right.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "invalid interval [{left}, {right}]"
            )));
        }
        let h = (right - left) / n as f64;
        let mut t: Vec<f64> = (0..=n).map(|i| left + i as f64 * h).collect();
        t[n] = right;
        Self::new(t)
    }

    /// Number of cells.
    pub fn n(&self) -> usize {
        self.t.len() - 1
    }

    /// All endpoints `t_0..=t_n`.
    pub fn endpoints(&self) -> &[f64] {
        &self.t
    }

    /// Observation nodes `t_1..=t_n`.
    pub fn nodes(&self) -> &[f64] {
        &self.t[1..]
    }

    pub fn left(&self) -> f64 {
        self.t[0]
    }

    pub fn right(&self) -> f64 {
        self.t[self.t.len() - 1]
    }

    pub fn mesh(&self) -> f64 {
        self.t
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(0.0, f64::max)
    }

    /// Bounds `(t_{i-1}, t_i)` of the 1-based cell `i`.
    pub fn cell_bounds(&self, i: usize) -> Result<(f64, f64)> {
        if i == 0 || i > self.n() {
            return Err(Error::OutOfDomain(format!(
                "cell index {i} outside 1..={}",
                self.n()
            )));
        }
        Ok((self.t[i - 1], self.t[i]))
    }

    /// Smallest `j >= 1` with `t_j >= s`, i.e. the cell containing `s`.
    pub fn cell_index(&self, s: f64) -> Result<usize> {
        if !(s >= self.left() && s <= self.right()) {
            return Err(Error::OutOfDomain(format!(
                "point {s} outside [{}, {}]",
                self.left(),
                self.right()
            )));
        }
        let j = self.t.partition_point(|&tj| tj < s);
        Ok(j.max(1))
    }

    /// Node `t_j` of the cell containing `s`.
    pub fn snap(&self, s: f64) -> Result<f64> {
        self.cell_index(s).map(|j| self.t[j])
    }

    /// Short human-readable description used in diagnostics.
    pub fn describe(&self) -> String {
        format!(
            "grid(n={}, [{}, {}], mesh={:.3e})",
            self.n(),
            self.left(),
            self.right(),
            self.mesh()
        )
    }
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`, ascending.
pub fn gauss_legendre(order: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(order > 0, "quadrature order must be positive");
    let mut nodes = vec![0.0; order];
    let mut weights = vec![0.0; order];
    let m = order.div_ceil(2);
    for i in 0..m {
        // Tricomi initial guess, refined by Newton on P_order.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (order as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(order, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(order, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[order - 1 - i] = x;
        weights[i] = w;
        weights[order - 1 - i] = w;
    }
    if order % 2 == 1 {
        nodes[m - 1] = 0.0;
    }
    (nodes, weights)
}

fn legendre_with_derivative(order: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=order {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let n = order as f64;
    let dp = n * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// Fixed-order Gauss-Legendre rule applied cell by cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellQuadrature {
    order: usize,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl Default for CellQuadrature {
    fn default() -> Self {
        Self::new(Self::DEFAULT_ORDER).expect("default order is valid")
    }
}

impl CellQuadrature {
    pub const DEFAULT_ORDER: usize = 8;

    pub fn new(order: usize) -> Result<Self> {
        if order == 0 {
            return Err(Error::InvalidArgument(
                "quadrature order must be positive".into(),
            ));
        }
        let (nodes, weights) = gauss_legendre(order);
        Ok(Self {
            order,
            nodes,
            weights,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Nodes and weights mapped onto `[a, b]`.
    pub fn mapped(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(&x, &w)| (mid + half * x, half * w))
    }

    /// Integral of `f` over `[a, b]` with a single panel.
    pub fn integrate<F: Fn(f64) -> f64>(&self, a: f64, b: f64, f: F) -> f64 {
        self.mapped(a, b).map(|(x, w)| w * f(x)).sum()
    }

    /// Composite rule with `panels` equal sub-intervals of `[a, b]`.
    pub fn integrate_composite<F: Fn(f64) -> f64>(
        &self,
        a: f64,
        b: f64,
        panels: usize,
        f: F,
    ) -> f64 {
        if b <= a {
            return 0.0;
        }
        let panels = panels.max(1);
        let h = (b - a) / panels as f64;
        (0..panels)
            .map(|k| {
                let lo = a + k as f64 * h;
                let hi = if k + 1 == panels { b } else { lo + h };
                self.integrate(lo, hi, &f)
            })
            .sum()
    }

    /// Composite nodes and weights over `[a, b]` with `panels` sub-intervals.
    pub fn composite_rule(&self, a: f64, b: f64, panels: usize) -> Vec<(f64, f64)> {
        let panels = panels.max(1);
        let h = (b - a) / panels as f64;
        let mut out = Vec::with_capacity(panels * self.order);
        for k in 0..panels {
            let lo = a + k as f64 * h;
            let hi = if k + 1 == panels { b } else { lo + h };
            out.extend(self.mapped(lo, hi));
        }
        out
    }

    /// Integral of `f` over the 1-based cell `i` of `grid`.
    pub fn integrate_cell<F: Fn(f64) -> f64>(
        &self,
        grid: &TimeGrid,
        i: usize,
        f: F,
    ) -> Result<f64> {
        let (a, b) = grid.cell_bounds(i)?;
        Ok(self.integrate(a, b, f))
    }
}
