//! Parametric families `theta -> mu_theta` of finite signed measures on the
//! observation interval, their cell masses on a grid, the induced mean
//! functions `h_theta = K mu_theta` and the information matrix
//! `Sigma_ij = <d_i mu, K d_j mu>`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{CovarianceKernel, GramMatrix, ScalarFn};
use crate::timegrid::{CellQuadrature, TimeGrid};

/// Axis-aligned compact parameter set `[lower_1, upper_1] x ... x [lower_p, upper_p]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BoxRepr", into = "BoxRepr")]
pub struct ParamBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct BoxRepr {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl TryFrom<BoxRepr> for ParamBox {
    type Error = Error;
    fn try_from(r: BoxRepr) -> Result<Self> {
        ParamBox::new(r.lower, r.upper)
    }
}

impl From<ParamBox> for BoxRepr {
    fn from(b: ParamBox) -> Self {
        BoxRepr {
            lower: b.lower,
            upper: b.upper,
        }
    }
}

impl ParamBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(Error::InvalidArgument(format!(
                "box bounds must be nonempty and of equal length ({} vs {})",
                lower.len(),
                upper.len()
            )));
        }
        for (i, (l, u)) in lower.iter().zip(&upper).enumerate() {
            if !(l < u) || !l.is_finite() || !u.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "box coordinate {i}: need finite lower < upper, got [{l}, {u}]"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    /// The same interval `[lower, upper]` in every one of `p` coordinates.
    pub fn cube(p: usize, lower: f64, upper: f64) -> Result<Self> {
        Self::new(vec![lower; p], vec![upper; p])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| 0.5 * (l + u))
            .collect()
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        theta.len() == self.dim()
            && theta
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(x, (l, u))| *x >= *l && *x <= *u)
    }

    pub fn contains_interior(&self, theta: &[f64]) -> bool {
        theta.len() == self.dim()
            && theta
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(x, (l, u))| *x > *l && *x < *u)
    }

    pub fn clip(&self, theta: &[f64]) -> Vec<f64> {
        theta
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(x, (l, u))| x.clamp(*l, *u))
            .collect()
    }

    pub(crate) fn check(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.dim() {
            return Err(Error::InvalidArgument(format!(
                "parameter has dimension {} but the model has {}",
                theta.len(),
                self.dim()
            )));
        }
        if !self.contains(theta) {
            return Err(Error::InvalidArgument(format!(
                "parameter {theta:?} lies outside the box {:?} x {:?}",
                self.lower, self.upper
            )));
        }
        Ok(())
    }
}

/// Named basis densities usable from JSON configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BasisFunction {
    Constant {
        #[serde(default = "one")]
        value: f64,
    },
    /// `sum_k coeffs[k] s^k`
    Polynomial { coeffs: Vec<f64> },
    /// `amp sin(freq s + phase)`
    Sine {
        amp: f64,
        freq: f64,
        #[serde(default)]
        phase: f64,
    },
    /// `amp cos(freq s + phase)`
    Cosine {
        amp: f64,
        freq: f64,
        #[serde(default)]
        phase: f64,
    },
    /// `amp exp(rate s)`
    Exponential { amp: f64, rate: f64 },
}

fn one() -> f64 {
    1.0
}

impl BasisFunction {
    pub fn eval(&self, s: f64) -> f64 {
        match self {
            BasisFunction::Constant { value } => *value,
            BasisFunction::Polynomial { coeffs } => {
                coeffs.iter().rev().fold(0.0, |acc, c| acc * s + c)
            }
            BasisFunction::Sine { amp, freq, phase } => amp * (freq * s + phase).sin(),
            BasisFunction::Cosine { amp, freq, phase } => amp * (freq * s + phase).cos(),
            BasisFunction::Exponential { amp, rate } => amp * (rate * s).exp(),
        }
    }

    pub fn into_fn(self) -> ScalarFn {
        Arc::new(move |s| self.eval(s))
    }
}

pub type DensityFn = Arc<dyn Fn(&[f64], f64) -> f64 + Send + Sync>;
/// Writes the `p` (gradient) or `p * p` row-major (Hessian) θ-derivatives of
/// the density at `(theta, s)` into the output slice.
pub type DensityDerivFn = Arc<dyn Fn(&[f64], f64, &mut [f64]) + Send + Sync>;

/// Density `f_theta(s)` depending nonlinearly on θ.
#[derive(Clone)]
pub struct NonlinearDensity {
    pub value: DensityFn,
    pub gradient: Option<DensityDerivFn>,
    pub hessian: Option<DensityDerivFn>,
    /// Permit central differences when a derivative callback is missing.
    pub finite_difference_fallback: bool,
}

impl NonlinearDensity {
    pub fn new(value: impl Fn(&[f64], f64) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            value: Arc::new(value),
            gradient: None,
            hessian: None,
            finite_difference_fallback: false,
        }
    }

    pub fn with_gradient(
        mut self,
        g: impl Fn(&[f64], f64, &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.gradient = Some(Arc::new(g));
        self
    }

    pub fn with_hessian(
        mut self,
        h: impl Fn(&[f64], f64, &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.hessian = Some(Arc::new(h));
        self
    }

    pub fn with_finite_difference_fallback(mut self) -> Self {
        self.finite_difference_fallback = true;
        self
    }
}

#[derive(Clone)]
pub enum ModelKind {
    /// `mu_theta = sum_i theta_i delta_{s_i}`
    DiracBasis { sites: Vec<f64> },
    /// `mu_theta(ds) = sum_k theta_k f_k(s) ds`
    LinearDensity { basis: Vec<ScalarFn> },
    /// `mu_theta(ds) = f_theta(s) ds`
    NonlinearDensity(NonlinearDensity),
}

/// How a derivative was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DerivativeSource {
    Exact,
    FiniteDifference,
}

/// A parametric mean model: measure family, parameter box and time domain.
#[derive(Clone)]
pub struct MeanModel {
    kind: ModelKind,
    bounds: ParamBox,
    domain: (f64, f64),
}

impl fmt::Debug for MeanModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match &self.kind {
            ModelKind::DiracBasis { sites } => format!("DiracBasis({sites:?})"),
            ModelKind::LinearDensity { basis } => format!("LinearDensity(p={})", basis.len()),
            ModelKind::NonlinearDensity(_) => "NonlinearDensity".to_string(),
        };
        f.debug_struct("MeanModel")
            .field("kind", &kind)
            .field("bounds", &self.bounds)
            .field("domain", &self.domain)
            .finish()
    }
}

/// A finite signed measure on the domain, as consumed by [`kernel_pairing`].
pub enum Measure<'a> {
    Atoms(Vec<(f64, f64)>),
    Density(Box<dyn Fn(f64) -> f64 + Send + Sync + 'a>),
}

fn check_domain(domain: (f64, f64)) -> Result<()> {
    if !(domain.0 < domain.1) || !domain.0.is_finite() || !domain.1.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "invalid time domain [{}, {}]",
            domain.0, domain.1
        )));
    }
    Ok(())
}

impl MeanModel {
    pub fn dirac(sites: Vec<f64>, bounds: ParamBox, domain: (f64, f64)) -> Result<Self> {
        check_domain(domain)?;
        if sites.len() != bounds.dim() {
            return Err(Error::InvalidArgument(format!(
                "{} Dirac sites but a {}-dimensional box",
                sites.len(),
                bounds.dim()
            )));
        }
        if sites.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(
                "Dirac sites must be strictly increasing".into(),
            ));
        }
        if sites.iter().any(|&s| !(s >= domain.0 && s <= domain.1)) {
            return Err(Error::OutOfDomain(format!(
                "Dirac sites {sites:?} must lie in [{}, {}]",
                domain.0, domain.1
            )));
        }
        Ok(Self {
            kind: ModelKind::DiracBasis { sites },
            bounds,
            domain,
        })
    }

    pub fn linear_density(
        basis: Vec<ScalarFn>,
        bounds: ParamBox,
        domain: (f64, f64),
    ) -> Result<Self> {
        check_domain(domain)?;
        if basis.len() != bounds.dim() {
            return Err(Error::InvalidArgument(format!(
                "{} basis densities but a {}-dimensional box",
                basis.len(),
                bounds.dim()
            )));
        }
        Ok(Self {
            kind: ModelKind::LinearDensity { basis },
            bounds,
            domain,
        })
    }

    pub fn from_basis(
        basis: Vec<BasisFunction>,
        bounds: ParamBox,
        domain: (f64, f64),
    ) -> Result<Self> {
        Self::linear_density(
            basis.into_iter().map(BasisFunction::into_fn).collect(),
            bounds,
            domain,
        )
    }

    pub fn nonlinear_density(
        density: NonlinearDensity,
        bounds: ParamBox,
        domain: (f64, f64),
    ) -> Result<Self> {
        check_domain(domain)?;
        Ok(Self {
            kind: ModelKind::NonlinearDensity(density),
            bounds,
            domain,
        })
    }

    pub fn kind(&self) -> &ModelKind {
        &self.kind
    }

    pub fn bounds(&self) -> &ParamBox {
        &self.bounds
    }

    pub fn domain(&self) -> (f64, f64) {
        self.domain
    }

    pub fn dim(&self) -> usize {
        self.bounds.dim()
    }

    /// True when `theta -> mu_theta` is linear (Dirac or linear density).
    pub fn is_linear(&self) -> bool {
        !matches!(self.kind, ModelKind::NonlinearDensity(_))
    }

    /// True when all derivatives come from callbacks rather than differences.
    pub fn has_exact_derivatives(&self) -> bool {
        match &self.kind {
            ModelKind::NonlinearDensity(d) => d.gradient.is_some() && d.hessian.is_some(),
            _ => true,
        }
    }

    fn check_grid(&self, grid: &TimeGrid) -> Result<()> {
        let tol = 1e-12 * (self.domain.1 - self.domain.0);
        if (grid.left() - self.domain.0).abs() > tol || (grid.right() - self.domain.1).abs() > tol {
            return Err(Error::InvalidArgument(format!(
                "grid spans [{}, {}] but the model domain is [{}, {}]",
                grid.left(),
                grid.right(),
                self.domain.0,
                self.domain.1
            )));
        }
        Ok(())
    }

    /// Density of `mu_theta` at `s` (density variants only).
    fn density_at(&self, theta: &[f64], s: f64) -> f64 {
        match &self.kind {
            ModelKind::LinearDensity { basis } => {
                basis.iter().zip(theta).map(|(f, th)| th * f(s)).sum()
            }
            ModelKind::NonlinearDensity(d) => (d.value)(theta, s),
            ModelKind::DiracBasis { .. } => unreachable!("Dirac model has no density"),
        }
    }

    /// `mu_theta` as a measure.
    pub fn measure<'a>(&'a self, theta: &'a [f64]) -> Measure<'a> {
        match &self.kind {
            ModelKind::DiracBasis { sites } => {
                Measure::Atoms(sites.iter().copied().zip(theta.iter().copied()).collect())
            }
            _ => Measure::Density(Box::new(move |s| self.density_at(theta, s))),
        }
    }

    /// `d_j mu_theta` as a measure.
    pub fn derivative_measure<'a>(&'a self, theta: &'a [f64], j: usize) -> Result<Measure<'a>> {
        match &self.kind {
            ModelKind::DiracBasis { sites } => Ok(Measure::Atoms(vec![(sites[j], 1.0)])),
            ModelKind::LinearDensity { basis } => {
                let f = basis[j].clone();
                Ok(Measure::Density(Box::new(move |s| f(s))))
            }
            ModelKind::NonlinearDensity(d) => {
                let p = self.dim();
                if let Some(g) = &d.gradient {
                    let g = g.clone();
                    Ok(Measure::Density(Box::new(move |s| {
                        let mut out = vec![0.0; p];
                        g(theta, s, &mut out);
                        out[j]
                    })))
                } else if d.finite_difference_fallback {
                    let v = d.value.clone();
                    let h = fd_step(theta[j]);
                    Ok(Measure::Density(Box::new(move |s| {
                        let mut tp = theta.to_vec();
                        let mut tm = theta.to_vec();
                        tp[j] += h;
                        tm[j] -= h;
                        (v(&tp, s) - v(&tm, s)) / (2.0 * h)
                    })))
                } else {
                    Err(missing_callback("gradient"))
                }
            }
        }
    }

    fn masses_unchecked(&self, theta: &[f64], grid: &TimeGrid, q: &CellQuadrature) -> Result<DVector<f64>> {
        let n = grid.n();
        match &self.kind {
            ModelKind::DiracBasis { sites } => {
                let mut m = DVector::zeros(n);
                for (s, th) in sites.iter().zip(theta) {
                    m[grid.cell_index(*s)? - 1] += th;
                }
                Ok(m)
            }
            _ => {
                let t = grid.endpoints();
                Ok(DVector::from_iterator(
                    n,
                    (1..=n).map(|i| q.integrate(t[i - 1], t[i], |s| self.density_at(theta, s))),
                ))
            }
        }
    }

    /// Cell masses `mu_theta(T_i)` for `i = 1..n`.
    pub fn cell_masses(
        &self,
        theta: &[f64],
        grid: &TimeGrid,
        q: &CellQuadrature,
    ) -> Result<DVector<f64>> {
        self.bounds.check(theta)?;
        self.check_grid(grid)?;
        self.masses_unchecked(theta, grid, q)
    }

    /// `n x p` matrix whose column `j` holds the cell masses of `d_j mu_theta`.
    pub fn cell_mass_jacobian(
        &self,
        theta: &[f64],
        grid: &TimeGrid,
        q: &CellQuadrature,
    ) -> Result<(DMatrix<f64>, DerivativeSource)> {
        self.bounds.check(theta)?;
        self.check_grid(grid)?;
        let n = grid.n();
        let p = self.dim();
        let t = grid.endpoints();
        match &self.kind {
            ModelKind::DiracBasis { sites } => {
                let mut jac = DMatrix::zeros(n, p);
                for (k, s) in sites.iter().enumerate() {
                    jac[(grid.cell_index(*s)? - 1, k)] = 1.0;
                }
                Ok((jac, DerivativeSource::Exact))
            }
            ModelKind::LinearDensity { basis } => {
                let jac = DMatrix::from_fn(n, p, |i, k| q.integrate(t[i], t[i + 1], |s| basis[k](s)));
                Ok((jac, DerivativeSource::Exact))
            }
            ModelKind::NonlinearDensity(d) => {
                if let Some(g) = &d.gradient {
                    let mut jac = DMatrix::zeros(n, p);
                    let mut buf = vec![0.0; p];
                    for i in 0..n {
                        for (s, w) in q.mapped(t[i], t[i + 1]) {
                            g(theta, s, &mut buf);
                            for k in 0..p {
                                jac[(i, k)] += w * buf[k];
                            }
                        }
                    }
                    Ok((jac, DerivativeSource::Exact))
                } else if d.finite_difference_fallback {
                    let mut jac = DMatrix::zeros(n, p);
                    for k in 0..p {
                        let h = fd_step(theta[k]);
                        let mut tp = theta.to_vec();
                        let mut tm = theta.to_vec();
                        tp[k] += h;
                        tm[k] -= h;
                        let col = (self.masses_unchecked(&tp, grid, q)?
                            - self.masses_unchecked(&tm, grid, q)?)
                            / (2.0 * h);
                        jac.set_column(k, &col);
                    }
                    Ok((jac, DerivativeSource::FiniteDifference))
                } else {
                    Err(missing_callback("gradient"))
                }
            }
        }
    }

    /// Cell masses of the second derivatives `d_j d_k mu_theta`, as an
    /// `n x (p * p)` matrix with column `j * p + k`. `None` for linear models,
    /// where they vanish identically.
    pub fn cell_mass_second_derivatives(
        &self,
        theta: &[f64],
        grid: &TimeGrid,
        q: &CellQuadrature,
    ) -> Result<Option<(DMatrix<f64>, DerivativeSource)>> {
        let d = match &self.kind {
            ModelKind::NonlinearDensity(d) => d,
            _ => return Ok(None),
        };
        self.bounds.check(theta)?;
        self.check_grid(grid)?;
        let n = grid.n();
        let p = self.dim();
        let t = grid.endpoints();
        if let Some(hfn) = &d.hessian {
            let mut out = DMatrix::zeros(n, p * p);
            let mut buf = vec![0.0; p * p];
            for i in 0..n {
                for (s, w) in q.mapped(t[i], t[i + 1]) {
                    hfn(theta, s, &mut buf);
                    for c in 0..p * p {
                        out[(i, c)] += w * buf[c];
                    }
                }
            }
            Ok(Some((out, DerivativeSource::Exact)))
        } else if d.finite_difference_fallback {
            // Difference the Jacobian, which may itself be exact or differenced.
            let mut out = DMatrix::zeros(n, p * p);
            for k in 0..p {
                let h = fd_step(theta[k]);
                let mut tp = theta.to_vec();
                let mut tm = theta.to_vec();
                tp[k] += h;
                tm[k] -= h;
                let diff = (self.jacobian_unchecked(&tp, grid, q)?
                    - self.jacobian_unchecked(&tm, grid, q)?)
                    / (2.0 * h);
                for j in 0..p {
                    out.set_column(j * p + k, &diff.column(j));
                }
            }
            Ok(Some((out, DerivativeSource::FiniteDifference)))
        } else {
            Err(missing_callback("hessian"))
        }
    }

    fn jacobian_unchecked(&self, theta: &[f64], grid: &TimeGrid, q: &CellQuadrature) -> Result<DMatrix<f64>> {
        // Same as `cell_mass_jacobian` without the box check, for differencing
        // near the boundary.
        let widened = ParamBox::new(
            self.bounds.lower.iter().map(|l| l - 1.0).collect(),
            self.bounds.upper.iter().map(|u| u + 1.0).collect(),
        )?;
        let tmp = MeanModel {
            kind: self.kind.clone(),
            bounds: widened,
            domain: self.domain,
        };
        tmp.cell_mass_jacobian(theta, grid, q).map(|(j, _)| j)
    }

    /// `h_theta(t) = (K mu_theta)(t)`; exact sites for Dirac models,
    /// composite quadrature split at `t` for densities.
    pub fn mean_function(
        &self,
        theta: &[f64],
        kernel: &CovarianceKernel,
        t: f64,
        q: &CellQuadrature,
        refinement: usize,
    ) -> Result<f64> {
        self.bounds.check(theta)?;
        if !(t >= self.domain.0 && t <= self.domain.1) {
            return Err(Error::OutOfDomain(format!(
                "time {t} outside [{}, {}]",
                self.domain.0, self.domain.1
            )));
        }
        Ok(potential(
            kernel,
            &self.measure(theta),
            t,
            self.domain,
            q,
            refinement,
        ))
    }

    /// `h_theta(t_i)` for the nodes `t_1..t_n` of `grid`.
    pub fn mean_vector(
        &self,
        theta: &[f64],
        kernel: &CovarianceKernel,
        grid: &TimeGrid,
        q: &CellQuadrature,
        refinement: usize,
    ) -> Result<DVector<f64>> {
        self.bounds.check(theta)?;
        self.check_grid(grid)?;
        let measure = self.measure(theta);
        let values: Vec<f64> = grid
            .nodes()
            .par_iter()
            .map(|&t| potential(kernel, &measure, t, self.domain, q, refinement))
            .collect();
        Ok(DVector::from_vec(values))
    }

    /// `Sigma_ij = <d_i mu_theta0, K d_j mu_theta0>` by continuous quadrature.
    pub fn sigma_matrix(
        &self,
        theta0: &[f64],
        kernel: &CovarianceKernel,
        q: &CellQuadrature,
        refinement: usize,
    ) -> Result<SigmaMatrix> {
        self.bounds.check(theta0)?;
        let p = self.dim();
        let derivs: Vec<Measure> = (0..p)
            .map(|j| self.derivative_measure(theta0, j))
            .collect::<Result<_>>()?;
        let mut m = DMatrix::zeros(p, p);
        for i in 0..p {
            for j in 0..p {
                m[(i, j)] = kernel_pairing(kernel, &derivs[i], &derivs[j], self.domain, q, refinement);
            }
        }
        Ok(SigmaMatrix::new(m))
    }

    /// `Sigma^n = J^T G J` with `J` the cell-mass Jacobian at `theta0`.
    pub fn discrete_sigma(
        &self,
        theta0: &[f64],
        gram: &GramMatrix,
        grid: &TimeGrid,
        q: &CellQuadrature,
    ) -> Result<SigmaMatrix> {
        if gram.dim() != grid.n() {
            return Err(Error::InvalidArgument(
                "Gram matrix and grid sizes differ".into(),
            ));
        }
        let (jac, _) = self.cell_mass_jacobian(theta0, grid, q)?;
        Ok(SigmaMatrix::new(jac.transpose() * gram.matrix() * &jac))
    }
}

fn fd_step(x: f64) -> f64 {
    1e-5 * x.abs().max(1.0)
}

fn missing_callback(which: &str) -> Error {
    Error::UnsupportedModel(format!(
        "nonlinear density has no {which} callback and finite-difference fallback is disabled"
    ))
}

/// `(K mu)(t) = int K(s, t) mu(ds)`.
///
/// Density integrals are split at `t` so that the kink of `K(., t)` on the
/// diagonal falls on a panel boundary.
pub fn potential(
    kernel: &CovarianceKernel,
    mu: &Measure,
    t: f64,
    domain: (f64, f64),
    q: &CellQuadrature,
    refinement: usize,
) -> f64 {
    match mu {
        Measure::Atoms(atoms) => atoms.iter().map(|&(s, w)| w * kernel.eval(s, t)).sum(),
        Measure::Density(f) => {
            let g = |s: f64| kernel.eval(s, t) * f(s);
            q.integrate_composite(domain.0, t, refinement, g)
                + q.integrate_composite(t, domain.1, refinement, g)
        }
    }
}

/// `<a, K b> = iint K(s, t) a(ds) b(dt)` by iterated quadrature.
pub fn kernel_pairing(
    kernel: &CovarianceKernel,
    a: &Measure,
    b: &Measure,
    domain: (f64, f64),
    q: &CellQuadrature,
    refinement: usize,
) -> f64 {
    match a {
        Measure::Atoms(atoms) => atoms
            .iter()
            .map(|&(s, w)| w * potential(kernel, b, s, domain, q, refinement))
            .sum(),
        Measure::Density(f) => q
            .composite_rule(domain.0, domain.1, refinement)
            .into_iter()
            .map(|(t, w)| w * f(t) * potential(kernel, b, t, domain, q, refinement))
            .sum(),
    }
}

/// Symmetric information matrix with its condition number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaMatrix {
    matrix: DMatrix<f64>,
    condition: f64,
}

impl SigmaMatrix {
    /// Symmetrizes `m` by `(m + m^T) / 2` and records its condition number.
    pub fn new(m: DMatrix<f64>) -> Self {
        let matrix = (&m + m.transpose()) * 0.5;
        let condition = condition_number(&matrix);
        Self { matrix, condition }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn condition(&self) -> f64 {
        self.condition
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn inverse(&self) -> Result<DMatrix<f64>> {
        self.matrix
            .clone()
            .try_inverse()
            .ok_or(Error::SingularInformation {
                condition: self.condition,
                limit: f64::INFINITY,
            })
    }

    /// `Sigma^{-1/2}` through the symmetric eigendecomposition.
    pub fn inverse_sqrt(&self) -> Result<DMatrix<f64>> {
        let eig = SymmetricEigen::new(self.matrix.clone());
        if eig.eigenvalues.iter().any(|&l| l <= 0.0) {
            return Err(Error::SingularInformation {
                condition: self.condition,
                limit: f64::INFINITY,
            });
        }
        let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()));
        Ok(&eig.eigenvectors * d * eig.eigenvectors.transpose())
    }

    /// `sqrt((Sigma^{-1})_jj)`, the limiting sd of each standardized component.
    pub fn asymptotic_sd(&self) -> Result<Vec<f64>> {
        let inv = self.inverse()?;
        Ok((0..self.dim()).map(|j| inv[(j, j)].sqrt()).collect())
    }
}

/// `max |lambda| / min |lambda|` of a symmetric matrix.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 1.0;
    }
    let eig = m.clone().symmetric_eigenvalues();
    let max = eig.iter().fold(0.0f64, |a, l| a.max(l.abs()));
    let min = eig.iter().fold(f64::INFINITY, |a, l| a.min(l.abs()));
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}
