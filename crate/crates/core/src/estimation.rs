//! The discrete contrast `Phi_{n,eps}(theta) = m^T x - 1/2 m^T G m` (with
//! `m` the cell masses of `mu_theta`), its derivatives, the M-estimator,
//! the limit contrast, QGAIC and the LAN log-likelihood ratio.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{CovarianceKernel, GramMatrix};
use crate::mean_models::{kernel_pairing, DerivativeSource, MeanModel, SigmaMatrix};
use crate::optimize::{self, OptimizerOptions, OptimizerStats};
use crate::sampling::Observation;
use crate::timegrid::{CellQuadrature, TimeGrid};

/// Largest condition number of `Sigma^n` accepted by the closed-form solver.
pub const CONDITION_LIMIT: f64 = 1e12;

/// Default number of composite panels for continuous quadratures.
pub const DEFAULT_REFINEMENT: usize = 32;

/// Everything about a discrete design that does not depend on the data:
/// model, kernel, grid, Gram matrix and, for linear models, the cell-mass
/// Jacobian `J`, `G J` and `Sigma^n = J^T G J`.
#[derive(Debug, Clone)]
pub struct DiscreteProblem {
    model: MeanModel,
    kernel: CovarianceKernel,
    grid: TimeGrid,
    gram: GramMatrix,
    quadrature: CellQuadrature,
    refinement: usize,
    linear: Option<LinearCache>,
}

#[derive(Debug, Clone)]
struct LinearCache {
    jacobian: DMatrix<f64>,
    gram_jacobian: DMatrix<f64>,
    sigma_n: SigmaMatrix,
}

impl DiscreteProblem {
    pub fn new(
        model: MeanModel,
        kernel: CovarianceKernel,
        grid: TimeGrid,
        quadrature: CellQuadrature,
        refinement: usize,
    ) -> Result<Self> {
        let gram = GramMatrix::new(&kernel, &grid);
        let linear = if model.is_linear() {
            let center = model.bounds().center();
            let (jacobian, _) = model.cell_mass_jacobian(&center, &grid, &quadrature)?;
            let gram_jacobian = gram.matrix() * &jacobian;
            let sigma_n = SigmaMatrix::new(jacobian.transpose() * &gram_jacobian);
            Some(LinearCache {
                jacobian,
                gram_jacobian,
                sigma_n,
            })
        } else {
            model.cell_masses(&model.bounds().center(), &grid, &quadrature)?;
            None
        };
        Ok(Self {
            model,
            kernel,
            grid,
            gram,
            quadrature,
            refinement,
            linear,
        })
    }

    pub fn model(&self) -> &MeanModel {
        &self.model
    }

    pub fn kernel(&self) -> &CovarianceKernel {
        &self.kernel
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn gram(&self) -> &GramMatrix {
        &self.gram
    }

    pub fn quadrature(&self) -> &CellQuadrature {
        &self.quadrature
    }

    pub fn refinement(&self) -> usize {
        self.refinement
    }

    /// `Sigma^n` for linear models (θ-independent).
    pub fn linear_sigma_n(&self) -> Option<&SigmaMatrix> {
        self.linear.as_ref().map(|c| &c.sigma_n)
    }

    /// `Sigma^n(theta) = J(theta)^T G J(theta)`.
    pub fn sigma_n(&self, theta: &[f64]) -> Result<SigmaMatrix> {
        match &self.linear {
            Some(c) => Ok(c.sigma_n.clone()),
            None => self
                .model
                .discrete_sigma(theta, &self.gram, &self.grid, &self.quadrature),
        }
    }

    fn masses(&self, theta: &[f64]) -> Result<DVector<f64>> {
        match &self.linear {
            Some(c) => {
                self.model.bounds().check(theta)?;
                Ok(&c.jacobian * DVector::from_column_slice(theta))
            }
            None => self.model.cell_masses(theta, &self.grid, &self.quadrature),
        }
    }

    /// `(m, G m)` at θ.
    fn masses_and_potential(&self, theta: &[f64]) -> Result<(DVector<f64>, DVector<f64>)> {
        match &self.linear {
            Some(c) => {
                self.model.bounds().check(theta)?;
                let th = DVector::from_column_slice(theta);
                Ok((&c.jacobian * &th, &c.gram_jacobian * &th))
            }
            None => {
                let m = self.masses(theta)?;
                let gm = self.gram.matrix() * &m;
                Ok((m, gm))
            }
        }
    }

    fn jacobian(&self, theta: &[f64]) -> Result<(DMatrix<f64>, DerivativeSource)> {
        match &self.linear {
            Some(c) => Ok((c.jacobian.clone(), DerivativeSource::Exact)),
            None => self
                .model
                .cell_mass_jacobian(theta, &self.grid, &self.quadrature),
        }
    }

    /// Binds an observation on the same grid.
    pub fn context<'a>(&'a self, observation: &'a Observation) -> Result<ContrastContext<'a>> {
        if observation.grid != self.grid {
            return Err(Error::InvalidArgument(format!(
                "observation grid {} differs from the problem grid {}",
                observation.grid.describe(),
                self.grid.describe()
            )));
        }
        Ok(ContrastContext {
            problem: self,
            observation,
            x: observation.values_vector(),
        })
    }

    /// `Phi(theta) = <mu_theta, K mu_theta0> - 1/2 <mu_theta, K mu_theta>` by
    /// continuous quadrature.
    pub fn limit_contrast(&self, theta: &[f64], theta0_true: &[f64]) -> Result<f64> {
        self.model.bounds().check(theta)?;
        self.model.bounds().check(theta0_true)?;
        let domain = self.model.domain();
        let mu = self.model.measure(theta);
        let mu0 = self.model.measure(theta0_true);
        let cross = kernel_pairing(&self.kernel, &mu, &mu0, domain, &self.quadrature, self.refinement);
        let own = kernel_pairing(&self.kernel, &mu, &mu, domain, &self.quadrature, self.refinement);
        Ok(cross - 0.5 * own)
    }
}

/// Flags attached to an estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimationWarning {
    NotConverged,
    IllConditionedInformation,
    FiniteDifferenceDerivatives,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimationResult {
    pub theta_hat: Vec<f64>,
    /// `Phi_{n,eps}(theta_hat)`.
    pub phi: f64,
    pub qgaic: f64,
    pub sigma_n: SigmaMatrix,
    pub boundary_flag: bool,
    pub optimizer_stats: OptimizerStats,
    pub warnings: Vec<EstimationWarning>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LanStatistic {
    pub log_ratio: f64,
    pub linear_term: f64,
    pub quadratic_term: f64,
}

/// `-2 phi + 2 eps^2 p`.
pub fn qgaic(phi: f64, epsilon: f64, p: usize) -> f64 {
    -2.0 * phi + 2.0 * epsilon * epsilon * p as f64
}

/// A [`DiscreteProblem`] bound to one observation.
#[derive(Debug, Clone)]
pub struct ContrastContext<'a> {
    problem: &'a DiscreteProblem,
    observation: &'a Observation,
    x: DVector<f64>,
}

impl<'a> ContrastContext<'a> {
    pub fn problem(&self) -> &DiscreteProblem {
        self.problem
    }

    pub fn observation(&self) -> &Observation {
        self.observation
    }

    pub fn contrast(&self, theta: &[f64]) -> Result<f64> {
        let (m, gm) = self.problem.masses_and_potential(theta)?;
        Ok(m.dot(&self.x) - 0.5 * m.dot(&gm))
    }

    /// `grad Phi = J^T (x - G m)`.
    pub fn contrast_gradient(&self, theta: &[f64]) -> Result<Vec<f64>> {
        Ok(self.value_and_gradient(theta)?.1)
    }

    fn value_and_gradient(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (m, gm) = self.problem.masses_and_potential(theta)?;
        let value = m.dot(&self.x) - 0.5 * m.dot(&gm);
        let (jac, _) = self.problem.jacobian(theta)?;
        let resid = &self.x - &gm;
        let grad = jac.transpose() * resid;
        Ok((value, grad.as_slice().to_vec()))
    }

    /// `hess Phi = sum_i (d_jk m)_i (x - G m)_i - J^T G J`; equal to
    /// `-Sigma^n` for linear models.
    pub fn contrast_hessian(&self, theta: &[f64]) -> Result<DMatrix<f64>> {
        let p = self.problem.model.dim();
        if let Some(c) = &self.problem.linear {
            self.problem.model.bounds().check(theta)?;
            return Ok(-c.sigma_n.matrix().clone());
        }
        let (_, gm) = self.problem.masses_and_potential(theta)?;
        let (jac, _) = self.problem.jacobian(theta)?;
        let resid = &self.x - gm;
        let mut hess = -(jac.transpose() * self.problem.gram.matrix() * &jac);
        let second = self
            .problem
            .model
            .cell_mass_second_derivatives(theta, &self.problem.grid, &self.problem.quadrature)?;
        if let Some((d2, _)) = second {
            let curv = d2.transpose() * resid;
            for j in 0..p {
                for k in 0..p {
                    hess[(j, k)] += curv[j * p + k];
                }
            }
        }
        Ok((&hess + hess.transpose()) * 0.5)
    }

    fn finish(
        &self,
        theta_hat: Vec<f64>,
        phi: f64,
        sigma_n: SigmaMatrix,
        stats: OptimizerStats,
        mut warnings: Vec<EstimationWarning>,
    ) -> EstimationResult {
        let bounds = self.problem.model.bounds();
        let boundary_flag = !bounds.contains_interior(&theta_hat);
        if !(sigma_n.condition() <= CONDITION_LIMIT)
            && !warnings.contains(&EstimationWarning::IllConditionedInformation)
        {
            warnings.push(EstimationWarning::IllConditionedInformation);
        }
        EstimationResult {
            qgaic: qgaic(phi, self.observation.epsilon, theta_hat.len()),
            theta_hat,
            phi,
            sigma_n,
            boundary_flag,
            optimizer_stats: stats,
            warnings,
        }
    }

    /// Closed form `theta_hat = (Sigma^n)^{-1} J^T x` for linear models,
    /// clipped to the box when it falls outside.
    pub fn estimate_linear(&self) -> Result<EstimationResult> {
        let cache = self.problem.linear.as_ref().ok_or_else(|| {
            Error::UnsupportedModel("closed-form estimation needs a linear model".into())
        })?;
        let sigma_n = &cache.sigma_n;
        if !(sigma_n.condition() <= CONDITION_LIMIT) {
            return Err(Error::SingularInformation {
                condition: sigma_n.condition(),
                limit: CONDITION_LIMIT,
            });
        }
        let b = cache.jacobian.transpose() * &self.x;
        let chol = sigma_n
            .matrix()
            .clone()
            .cholesky()
            .ok_or(Error::SingularInformation {
                condition: sigma_n.condition(),
                limit: CONDITION_LIMIT,
            })?;
        let solution = chol.solve(&b);
        if solution.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("closed-form estimate".into()));
        }
        let theta_hat = self.problem.model.bounds().clip(solution.as_slice());
        let phi = self.contrast(&theta_hat)?;
        let grad = self.contrast_gradient(&theta_hat)?;
        let stats = OptimizerStats {
            iterations: 0,
            gradient_sup_norm: optimize::projected_gradient_norm(
                self.problem.model.bounds(),
                &theta_hat,
                &grad,
            ),
            converged: true,
            starts: 0,
        };
        Ok(self.finish(theta_hat, phi, sigma_n.clone(), stats, Vec::new()))
    }

    /// Multistart projected quasi-Newton maximization of the contrast.
    pub fn maximize_box(&self, theta_init: Option<&[f64]>) -> Result<EstimationResult> {
        self.maximize_box_with(theta_init, &OptimizerOptions::default())
    }

    pub fn maximize_box_with(
        &self,
        theta_init: Option<&[f64]>,
        options: &OptimizerOptions,
    ) -> Result<EstimationResult> {
        let bounds = self.problem.model.bounds();
        if let Some(init) = theta_init {
            if init.len() != bounds.dim() {
                return Err(Error::InvalidArgument(format!(
                    "initial point has dimension {} but the model has {}",
                    init.len(),
                    bounds.dim()
                )));
            }
        }
        let objective = |th: &[f64]| self.value_and_gradient(th);
        let best = optimize::maximize_multistart(&objective, bounds, theta_init, options)?;
        let mut warnings = Vec::new();
        if !best.stats.converged {
            log::warn!(
                "contrast maximization stopped with projected gradient {:e}",
                best.stats.gradient_sup_norm
            );
            warnings.push(EstimationWarning::NotConverged);
        }
        if !self.problem.model.has_exact_derivatives() {
            warnings.push(EstimationWarning::FiniteDifferenceDerivatives);
        }
        let sigma_n = self.problem.sigma_n(&best.x)?;
        Ok(self.finish(best.x, best.value, sigma_n, best.stats, warnings))
    }

    /// Closed form for linear models, optimizer otherwise.
    pub fn estimate(&self) -> Result<EstimationResult> {
        if self.problem.linear.is_some() {
            self.estimate_linear()
        } else {
            self.maximize_box(None)
        }
    }

    /// Discretized log-likelihood ratio of `theta0 + eps Sigma^{-1/2} u`
    /// against `theta0`, with its linear part
    /// `Dm^T (x - G m0) / eps^2` and quadratic part `Dm^T G Dm / eps^2`,
    /// where `Dm` is the difference of cell masses.
    pub fn lan_statistic(
        &self,
        theta0: &[f64],
        u: &[f64],
        sigma: &SigmaMatrix,
    ) -> Result<LanStatistic> {
        let eps = self.observation.epsilon;
        if !(eps > 0.0) {
            return Err(Error::InvalidArgument(
                "the LAN statistic needs a positive noise level".into(),
            ));
        }
        let p = self.problem.model.dim();
        if u.len() != p || sigma.dim() != p {
            return Err(Error::InvalidArgument(format!(
                "direction and information matrix must have dimension {p}"
            )));
        }
        let shift = sigma.inverse_sqrt()? * DVector::from_column_slice(u) * eps;
        let theta1: Vec<f64> = theta0.iter().zip(shift.iter()).map(|(a, d)| a + d).collect();
        if !self.problem.model.bounds().contains(&theta1) {
            return Err(Error::InvalidArgument(format!(
                "shifted parameter {theta1:?} leaves the parameter box"
            )));
        }
        let (m0, gm0) = self.problem.masses_and_potential(theta0)?;
        let (m1, gm1) = self.problem.masses_and_potential(&theta1)?;
        let dm = &m1 - &m0;
        let dgm = &gm1 - &gm0;
        let eps2 = eps * eps;
        // Phi(theta1) - Phi(theta0) without cancelling two O(1) contrasts.
        let log_ratio = (dm.dot(&self.x) - 0.5 * dm.dot(&(&gm1 + &gm0))) / eps2;
        Ok(LanStatistic {
            log_ratio,
            linear_term: dm.dot(&(&self.x - &gm0)) / eps2,
            quadratic_term: dm.dot(&dgm) / eps2,
        })
    }
}

/// Limit contrast with the pairing matrix cached for linear models, so that
/// `Phi(theta) = theta^T P theta0 - 1/2 theta^T P theta`.
#[derive(Debug, Clone)]
pub struct LimitContrast {
    theta0: Vec<f64>,
    pairing: Option<DMatrix<f64>>,
}

impl LimitContrast {
    pub fn new(problem: &DiscreteProblem, theta0: &[f64]) -> Result<Self> {
        let model = problem.model();
        model.bounds().check(theta0)?;
        let pairing = if model.is_linear() {
            let s = model.sigma_matrix(theta0, problem.kernel(), problem.quadrature(), problem.refinement())?;
            Some(s.matrix().clone())
        } else {
            None
        };
        Ok(Self {
            theta0: theta0.to_vec(),
            pairing,
        })
    }

    pub fn eval(&self, problem: &DiscreteProblem, theta: &[f64]) -> Result<f64> {
        match &self.pairing {
            Some(p) => {
                problem.model().bounds().check(theta)?;
                let th = DVector::from_column_slice(theta);
                let th0 = DVector::from_column_slice(&self.theta0);
                Ok(th.dot(&(p * th0)) - 0.5 * th.dot(&(p * &th)))
            }
            None => problem.limit_contrast(theta, &self.theta0),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mean_models::{BasisFunction, ParamBox};

    fn dirac_problem(site: f64, n: usize) -> DiscreteProblem {
        let model = MeanModel::dirac(vec![site], ParamBox::cube(1, -10.0, 10.0).unwrap(), (0.0, 1.0)).unwrap();
        DiscreteProblem::new(
            model,
            CovarianceKernel::wiener(),
            TimeGrid::uniform(n, 0.0, 1.0).unwrap(),
            CellQuadrature::default(),
            8,
        )
        .unwrap()
    }

    #[test]
    fn qgaic_arithmetic() {
        assert!((qgaic(1.234, 0.1, 1) + 2.448).abs() < 1e-15);
        assert!((qgaic(0.0, 0.3, 2) - 0.36).abs() < 1e-15);
    }

    #[test]
    fn single_atom_contrast() {
        let prob = dirac_problem(0.5, 4);
        let obs = Observation::new(prob.grid().clone(), vec![0.1, 0.7, -0.2, 0.4], 0.3).unwrap();
        let ctx = prob.context(&obs).unwrap();
        for &th in &[-2.0, 0.0, 1.5] {
            let expect = th * 0.7 - th * th * 0.5 / 2.0;
            assert!((ctx.contrast(&[th]).unwrap() - expect).abs() < 1e-15);
        }
        assert_eq!(ctx.contrast(&[0.0]).unwrap(), 0.0);
        assert!(ctx.contrast(&[11.0]).is_err());
    }

    #[test]
    fn noiseless_single_atom_recovery() {
        let prob = dirac_problem(0.75, 4);
        let obs = Observation::new(prob.grid().clone(), vec![0.25 * 2.5, 0.5 * 2.5, 0.75 * 2.5, 0.75 * 2.5], 0.0).unwrap();
        let r = prob.context(&obs).unwrap().estimate_linear().unwrap();
        assert!((r.theta_hat[0] - 2.5).abs() < 1e-12);
        assert!(!r.boundary_flag);
    }

    #[test]
    fn clipping_sets_boundary_flag() {
        let prob = dirac_problem(0.5, 2);
        let obs = Observation::new(prob.grid().clone(), vec![100.0, 0.0], 0.1).unwrap();
        let r = prob.context(&obs).unwrap().estimate_linear().unwrap();
        assert_eq!(r.theta_hat, vec![10.0]);
        assert!(r.boundary_flag);
    }

    #[test]
    fn singular_information_is_an_error() {
        // Two bases that are proportional.
        let model = MeanModel::from_basis(
            vec![
                BasisFunction::Constant { value: 1.0 },
                BasisFunction::Constant { value: 2.0 },
            ],
            ParamBox::cube(2, -1.0, 1.0).unwrap(),
            (0.0, 1.0),
        )
        .unwrap();
        let prob = DiscreteProblem::new(
            model,
            CovarianceKernel::wiener(),
            TimeGrid::uniform(10, 0.0, 1.0).unwrap(),
            CellQuadrature::default(),
            8,
        )
        .unwrap();
        let obs = Observation::new(prob.grid().clone(), vec![0.0; 10], 0.1).unwrap();
        assert!(matches!(
            prob.context(&obs).unwrap().estimate_linear(),
            Err(Error::SingularInformation { .. })
        ));
    }

    #[test]
    fn lan_at_zero_direction() {
        let prob = dirac_problem(0.5, 4);
        let obs = Observation::new(prob.grid().clone(), vec![0.1, 0.7, -0.2, 0.4], 0.3).unwrap();
        let ctx = prob.context(&obs).unwrap();
        let sigma = SigmaMatrix::new(DMatrix::from_element(1, 1, 0.5));
        let l = ctx.lan_statistic(&[1.0], &[0.0], &sigma).unwrap();
        assert_eq!((l.log_ratio, l.linear_term, l.quadratic_term), (0.0, 0.0, 0.0));
        assert!(ctx.lan_statistic(&[9.9], &[1.0], &sigma).is_err());
    }

    #[test]
    fn grid_mismatch_rejected() {
        let prob = dirac_problem(0.5, 4);
        let obs = Observation::new(TimeGrid::uniform(4, 0.0, 2.0).unwrap(), vec![0.0; 4], 0.1).unwrap();
        assert!(prob.context(&obs).is_err());
    }
}
