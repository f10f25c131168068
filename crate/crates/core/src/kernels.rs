//! Covariance kernels of the centered process, their Gram matrices on a grid
//! and the sup-norm discretization error `||K^n - K||_inf`.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::timegrid::TimeGrid;

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
pub type BivariateFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// The closed-form families supported by [`CovarianceKernel`].
#[derive(Clone)]
pub enum KernelKind {
    /// `min(s, t)`
    Wiener,
    /// `min(s, t) (1 - max(s, t))`
    BrownianBridge,
    /// `sigma^2 / (2 eta) (exp(-eta |s - t|) - exp(-eta (s + t)))`
    OrnsteinUhlenbeck { eta: f64, sigma: f64 },
    /// `|s|^{2H} + |t|^{2H} - |t - s|^{2H}`
    FractionalBrownian { hurst: f64 },
    /// `u(s) u(t) min(v(s), v(t))` with `v` nondecreasing.
    MarkovFactorable { u: ScalarFn, v: ScalarFn },
    /// Any symmetric function supplied by the caller.
    Custom { k: BivariateFn },
}

/// Known covariance function `K(s, t)` of the noise process.
#[derive(Clone)]
pub struct CovarianceKernel {
    kind: KernelKind,
}

impl fmt::Debug for CovarianceKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.describe())
    }
}

impl CovarianceKernel {
    pub fn wiener() -> Self {
        Self {
            kind: KernelKind::Wiener,
        }
    }

    pub fn brownian_bridge() -> Self {
        Self {
            kind: KernelKind::BrownianBridge,
        }
    }

    pub fn ornstein_uhlenbeck(eta: f64, sigma: f64) -> Result<Self> {
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "OU mean-reversion rate must be positive, got {eta}"
            )));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "OU diffusion scale must be positive, got {sigma}"
            )));
        }
        Ok(Self {
            kind: KernelKind::OrnsteinUhlenbeck { eta, sigma },
        })
    }

    pub fn fractional_brownian(hurst: f64) -> Result<Self> {
        if !(hurst > 0.0 && hurst < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "Hurst index must lie in (0, 1), got {hurst}"
            )));
        }
        Ok(Self {
            kind: KernelKind::FractionalBrownian { hurst },
        })
    }

    /// `u(s) u(t) min(v(s), v(t))`. Monotonicity of `v` is the caller's
    /// responsibility.
    pub fn markov_factorable(
        u: impl Fn(f64) -> f64 + Send + Sync + 'static,
        v: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            kind: KernelKind::MarkovFactorable {
                u: Arc::new(u),
                v: Arc::new(v),
            },
        }
    }

    pub fn custom(k: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            kind: KernelKind::Custom { k: Arc::new(k) },
        }
    }

    pub fn kind(&self) -> &KernelKind {
        &self.kind
    }

    /// True when the kernel is Lipschitz on the square, so that the
    /// discretization error is `O(mesh)`.
    pub fn is_lipschitz(&self) -> bool {
        match &self.kind {
            KernelKind::Wiener
            | KernelKind::BrownianBridge
            | KernelKind::OrnsteinUhlenbeck { .. } => true,
            KernelKind::FractionalBrownian { hurst } => *hurst >= 0.5,
            KernelKind::MarkovFactorable { .. } | KernelKind::Custom { .. } => false,
        }
    }

    pub fn eval(&self, s: f64, t: f64) -> f64 {
        match &self.kind {
            KernelKind::Wiener => s.min(t),
            KernelKind::BrownianBridge => s.min(t) * (1.0 - s.max(t)),
            KernelKind::OrnsteinUhlenbeck { eta, sigma } => {
                sigma * sigma / (2.0 * eta)
                    * ((-eta * (s - t).abs()).exp() - (-eta * (s + t)).exp())
            }
            KernelKind::FractionalBrownian { hurst } => {
                let e = 2.0 * hurst;
                s.abs().powf(e) + t.abs().powf(e) - (t - s).abs().powf(e)
            }
            KernelKind::MarkovFactorable { u, v } => u(s) * u(t) * v(s).min(v(t)),
            KernelKind::Custom { k } => k(s, t),
        }
    }

    pub fn describe(&self) -> String {
        match &self.kind {
            KernelKind::Wiener => "wiener".into(),
            KernelKind::BrownianBridge => "brownian_bridge".into(),
            KernelKind::OrnsteinUhlenbeck { eta, sigma } => format!("ou(eta={eta}, sigma={sigma})"),
            KernelKind::FractionalBrownian { hurst } => format!("fbm(H={hurst})"),
            KernelKind::MarkovFactorable { .. } => "markov_factorable".into(),
            KernelKind::Custom { .. } => "custom".into(),
        }
    }
}

/// `K(t_i, t_j)` for the observation nodes `t_1..t_n` of a grid.
#[derive(Debug, Clone)]
pub struct GramMatrix {
    matrix: DMatrix<f64>,
    grid: TimeGrid,
    kernel: String,
}

impl GramMatrix {
    pub fn new(kernel: &CovarianceKernel, grid: &TimeGrid) -> Self {
        let nodes = grid.nodes();
        let n = nodes.len();
        let mut matrix = DMatrix::zeros(n, n);
        for j in 0..n {
            for i in j..n {
                let v = kernel.eval(nodes[i], nodes[j]);
                matrix[(i, j)] = v;
                matrix[(j, i)] = v;
            }
        }
        Self {
            matrix,
            grid: grid.clone(),
            kernel: kernel.describe(),
        }
    }

    /// Wraps an explicit matrix; it must be square and symmetric.
    pub fn from_matrix(matrix: DMatrix<f64>, grid: &TimeGrid) -> Result<Self> {
        if matrix.nrows() != grid.n() || matrix.ncols() != grid.n() {
            return Err(Error::InvalidArgument(format!(
                "Gram matrix is {}x{} but grid has {} nodes",
                matrix.nrows(),
                matrix.ncols(),
                grid.n()
            )));
        }
        let scale = matrix.amax().max(1.0);
        if (&matrix - matrix.transpose()).amax() > 1e-12 * scale {
            return Err(Error::InvalidArgument("Gram matrix is not symmetric".into()));
        }
        Ok(Self {
            matrix,
            grid: grid.clone(),
            kernel: "explicit".into(),
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn kernel_name(&self) -> &str {
        &self.kernel
    }
}

/// Shorthand for [`GramMatrix::new`].
pub fn gram(kernel: &CovarianceKernel, grid: &TimeGrid) -> GramMatrix {
    GramMatrix::new(kernel, grid)
}

/// Estimates `sup |K(node(s), node(t)) - K(s, t)|` over the square, where
/// `node(s)` is the right endpoint of the cell containing `s`.
///
/// Each cell is sampled at `refinement + 1` equispaced points including both
/// ends; the left end stands in for the limit from inside the half-open cell.
pub fn discretization_error_sup(
    kernel: &CovarianceKernel,
    grid: &TimeGrid,
    refinement: usize,
) -> Result<f64> {
    if refinement < 2 {
        return Err(Error::InvalidArgument(format!(
            "refinement must be at least 2, got {refinement}"
        )));
    }
    let t = grid.endpoints();
    let mut points = Vec::with_capacity(grid.n() * (refinement + 1));
    for i in 1..t.len() {
        let (a, b) = (t[i - 1], t[i]);
        for k in 0..=refinement {
            let s = if k == refinement {
                b
            } else {
                a + (b - a) * k as f64 / refinement as f64
            };
            points.push((s, b));
        }
    }
    let sup = points
        .par_iter()
        .enumerate()
        .map(|(idx, &(s, ns))| {
            points[idx..]
                .iter()
                .map(|&(u, nu)| (kernel.eval(ns, nu) - kernel.eval(s, u)).abs())
                .fold(0.0, f64::max)
        })
        .reduce(|| 0.0, f64::max);
    Ok(sup)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_values() {
        assert_eq!(CovarianceKernel::wiener().eval(0.3, 0.7), 0.3);
        let ou = CovarianceKernel::ornstein_uhlenbeck(0.5, 1.0).unwrap();
        assert!((ou.eval(1.0, 1.0) - (1.0 - (-1.0f64).exp())).abs() < 1e-15);
        let fbm = CovarianceKernel::fractional_brownian(0.5).unwrap();
        for &(s, t) in &[(0.2, 0.9), (0.7, 0.1), (0.5, 0.5)] {
            assert!((fbm.eval(s, t) - 2.0 * f64::min(s, t)).abs() < 1e-15);
        }
        let bridge = CovarianceKernel::brownian_bridge();
        assert!((bridge.eval(0.25, 0.5) - 0.125).abs() < 1e-15);
        let markov = CovarianceKernel::markov_factorable(|_| 1.0, |s| s);
        assert_eq!(markov.eval(0.4, 0.6), 0.4);
    }

    #[test]
    fn construction_rejects_bad_parameters() {
        assert!(CovarianceKernel::ornstein_uhlenbeck(0.0, 1.0).is_err());
        assert!(CovarianceKernel::ornstein_uhlenbeck(-1.0, 1.0).is_err());
        assert!(CovarianceKernel::ornstein_uhlenbeck(1.0, 0.0).is_err());
        assert!(CovarianceKernel::fractional_brownian(0.0).is_err());
        assert!(CovarianceKernel::fractional_brownian(1.0).is_err());
        assert!(CovarianceKernel::fractional_brownian(f64::NAN).is_err());
    }

    #[test]
    fn gram_examples() {
        let g = gram(&CovarianceKernel::wiener(), &TimeGrid::uniform(2, 0.0, 1.0).unwrap());
        assert_eq!(g.matrix(), &DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.5, 1.0]));
        let bridge = gram(
            &CovarianceKernel::brownian_bridge(),
            &TimeGrid::new(vec![0.0, 0.5, 1.0]).unwrap(),
        );
        assert_eq!(
            bridge.matrix(),
            &DMatrix::from_row_slice(2, 2, &[0.25, 0.0, 0.0, 0.0])
        );
    }

    #[test]
    fn wiener_gram_is_min_over_n() {
        let n = 37;
        let g = gram(&CovarianceKernel::wiener(), &TimeGrid::uniform(n, 0.0, 1.0).unwrap());
        let grid = TimeGrid::uniform(n, 0.0, 1.0).unwrap();
        for i in 0..n {
            for j in 0..n {
                let expect = grid.nodes()[i.min(j)];
                assert_eq!(g.matrix()[(i, j)], expect);
            }
        }
    }

    #[test]
    fn ou_gram_factorizes_with_jitter() {
        let ou = CovarianceKernel::ornstein_uhlenbeck(0.5, 1.0).unwrap();
        let g = gram(&ou, &TimeGrid::uniform(100, 0.0, 1.0).unwrap());
        let m = g.matrix();
        assert_eq!((m - m.transpose()).amax(), 0.0);
        let jittered = m + DMatrix::identity(100, 100) * 1e-12 * m.diagonal().max().max(1.0);
        assert!(jittered.cholesky().is_some());
    }

    #[test]
    fn wiener_sup_error_is_mesh() {
        for &n in &[5, 20, 50] {
            let grid = TimeGrid::uniform(n, 0.0, 1.0).unwrap();
            let e = discretization_error_sup(&CovarianceKernel::wiener(), &grid, 8).unwrap();
            let h = 1.0 / n as f64;
            assert!((e - h).abs() <= h / 8.0, "n={n}: {e}");
        }
    }

    #[test]
    fn single_cell_sup_error() {
        let grid = TimeGrid::uniform(1, 0.0, 1.0).unwrap();
        let ou = CovarianceKernel::ornstein_uhlenbeck(0.5, 1.0).unwrap();
        let e = discretization_error_sup(&ou, &grid, 16).unwrap();
        // Brute force over a fine square, node is (1, 1).
        let k11 = ou.eval(1.0, 1.0);
        let m = 400;
        let mut sup: f64 = 0.0;
        for i in 0..=m {
            for j in 0..=m {
                let (s, t) = (i as f64 / m as f64, j as f64 / m as f64);
                sup = sup.max((k11 - ou.eval(s, t)).abs());
            }
        }
        assert!((e - sup).abs() < 1e-12, "{e} vs {sup}");
    }

    #[test]
    fn refinement_must_be_at_least_two() {
        let grid = TimeGrid::uniform(3, 0.0, 1.0).unwrap();
        assert!(discretization_error_sup(&CovarianceKernel::wiener(), &grid, 1).is_err());
    }

    #[test]
    fn holder_rate_for_rough_fbm() {
        let fbm = CovarianceKernel::fractional_brownian(0.3).unwrap();
        assert!(!fbm.is_lipschitz());
        let e1 = discretization_error_sup(&fbm, &TimeGrid::uniform(20, 0.0, 1.0).unwrap(), 4).unwrap();
        let e2 = discretization_error_sup(&fbm, &TimeGrid::uniform(40, 0.0, 1.0).unwrap(), 4).unwrap();
        let expected = 2f64.powf(0.6);
        assert!((e1 / e2 / expected - 1.0).abs() < 0.2, "ratio {}", e1 / e2);
    }
}
