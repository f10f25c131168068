//! Shared fixtures and oracle measurements for the integration tests.
#![allow(dead_code)]

use gpmean::config::ExperimentConfig;
use gpmean::estimation::DiscreteProblem;
use gpmean::mean_models::{BasisFunction, MeanModel, NonlinearDensity, ParamBox};
use gpmean::sampling::{ObservationSampler, SeedSpec};
use gpmean::{CellQuadrature, CovarianceKernel, Observation, TimeGrid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn q8() -> CellQuadrature {
    CellQuadrature::new(8).unwrap()
}

pub fn observe(
    model: &MeanModel,
    theta0: &[f64],
    kernel: &CovarianceKernel,
    grid: &TimeGrid,
    eps: f64,
    seed: SeedSpec,
) -> Observation {
    ObservationSampler::new(model, theta0, kernel, grid, &q8(), 32, 1e-12)
        .unwrap()
        .sample(eps, seed)
        .unwrap()
}

/// Tensor midpoint rule for `int int f(s) f(t) K(s, t)` on [0, 1]^2.
pub fn midpoint_pairing(f: impl Fn(f64) -> f64, k: &CovarianceKernel, m: usize) -> f64 {
    let h = 1.0 / m as f64;
    let pts: Vec<f64> = (0..m).map(|i| (i as f64 + 0.5) * h).collect();
    let fv: Vec<f64> = pts.iter().map(|&s| f(s)).collect();
    let mut total = 0.0;
    for i in 0..m {
        let mut row = 0.0;
        for j in 0..m {
            row += fv[j] * k.eval(pts[i], pts[j]);
        }
        total += fv[i] * row;
    }
    total * h * h
}

/// Relative gap between the contrast and an explicit double loop over exact
/// cell integrals, maximized over a few parameters.
pub fn double_loop_relative_error() -> f64 {
    let cfg = ExperimentConfig::paper42();
    let model = cfg.mean_model().unwrap();
    let kernel = cfg.kernel().unwrap();
    let grid = TimeGrid::uniform(200, 0.0, 1.0).unwrap();
    let obs = observe(&model, &[-4.0], &kernel, &grid, 0.1, SeedSpec::new(7, 0));
    let problem = DiscreteProblem::new(model, kernel.clone(), grid.clone(), q8(), 32).unwrap();
    let ctx = problem.context(&obs).unwrap();
    let mut worst = 0.0f64;
    for theta in [-4.0, 0.0, 2.5] {
        // Exact cell integrals of 6 sin(c s): 6 (cos(c a) - cos(c b)) / c.
        let c = -7.9;
        let t = grid.endpoints();
        let m: Vec<f64> = (1..t.len())
            .map(|i| theta * 6.0 * ((c * t[i - 1]).cos() - (c * t[i]).cos()) / c)
            .collect();
        let nodes = grid.nodes();
        let mut linear = 0.0;
        let mut quad = 0.0;
        for i in 0..m.len() {
            linear += m[i] * obs.values[i];
            for j in 0..m.len() {
                quad += m[i] * m[j] * kernel.eval(nodes[i], nodes[j]);
            }
        }
        let oracle = linear - 0.5 * quad;
        let got = ctx.contrast(&[theta]).unwrap();
        worst = worst.max((got - oracle).abs() / oracle.abs().max(1.0));
    }
    worst
}

/// Linear, Dirac, nonlinear with exact derivatives, and nonlinear with a
/// finite-difference Hessian, each with an interior true parameter.
pub fn model_variants() -> Vec<(&'static str, MeanModel, Vec<f64>)> {
    let dom = (0.0, 1.0);
    let linear = MeanModel::from_basis(
        vec![
            BasisFunction::Sine { amp: 6.0, freq: -7.9, phase: 0.0 },
            BasisFunction::Polynomial { coeffs: vec![1.0, -2.0, 0.5] },
        ],
        ParamBox::cube(2, -10.0, 10.0).unwrap(),
        dom,
    )
    .unwrap();
    let dirac = MeanModel::dirac(vec![0.25, 0.7], ParamBox::cube(2, -10.0, 10.0).unwrap(), dom)
        .unwrap();
    let sine = NonlinearDensity::new(|th: &[f64], s: f64| th[0] * (th[1] * s).sin())
        .with_gradient(|th: &[f64], s: f64, g: &mut [f64]| {
            g[0] = (th[1] * s).sin();
            g[1] = th[0] * s * (th[1] * s).cos();
        })
        .with_hessian(|th: &[f64], s: f64, h: &mut [f64]| {
            h[0] = 0.0;
            h[1] = s * (th[1] * s).cos();
            h[2] = h[1];
            h[3] = -th[0] * s * s * (th[1] * s).sin();
        });
    let sine = MeanModel::nonlinear_density(
        sine,
        ParamBox::new(vec![0.5, 1.0], vec![5.0, 6.0]).unwrap(),
        dom,
    )
    .unwrap();
    let expo = NonlinearDensity::new(|th: &[f64], s: f64| (th[0] * s).exp())
        .with_gradient(|th: &[f64], s: f64, g: &mut [f64]| g[0] = s * (th[0] * s).exp())
        .with_finite_difference_fallback();
    let expo =
        MeanModel::nonlinear_density(expo, ParamBox::cube(1, -2.0, 2.0).unwrap(), dom).unwrap();
    vec![
        ("linear", linear, vec![-4.0, 1.0]),
        ("dirac", dirac, vec![2.0, -1.0]),
        ("sine", sine, vec![2.0, 3.0]),
        ("exp", expo, vec![0.5]),
    ]
}

/// Worst gap between analytic and central-difference derivatives of the
/// contrast at 10 random parameters per model variant, scaled by
/// `1 + sup-norm` of the analytic value. Returns (gradient, hessian).
pub fn derivative_fd_errors() -> (f64, f64) {
    let kernel = CovarianceKernel::ornstein_uhlenbeck(0.5, 1.0).unwrap();
    let grid = TimeGrid::uniform(80, 0.0, 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut gerr, mut herr) = (0.0f64, 0.0f64);
    for (_, model, theta0) in model_variants() {
        let obs = observe(&model, &theta0, &kernel, &grid, 0.1, SeedSpec::new(3, 0));
        let problem =
            DiscreteProblem::new(model.clone(), kernel.clone(), grid.clone(), q8(), 32).unwrap();
        let ctx = problem.context(&obs).unwrap();
        let b = model.bounds();
        let p = model.dim();
        for _ in 0..10 {
            let theta: Vec<f64> = (0..p)
                .map(|j| {
                    let w = b.upper()[j] - b.lower()[j];
                    rng.random_range(b.lower()[j] + 0.1 * w..b.upper()[j] - 0.1 * w)
                })
                .collect();
            let g = ctx.contrast_gradient(&theta).unwrap();
            let hess = ctx.contrast_hessian(&theta).unwrap();
            let gscale = 1.0 + g.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let hscale = 1.0 + hess.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let h = 1e-5;
            for j in 0..p {
                let mut up = theta.clone();
                let mut dn = theta.clone();
                up[j] += h;
                dn[j] -= h;
                let fd = (ctx.contrast(&up).unwrap() - ctx.contrast(&dn).unwrap()) / (2.0 * h);
                gerr = gerr.max((fd - g[j]).abs() / gscale);
                let gu = ctx.contrast_gradient(&up).unwrap();
                let gd = ctx.contrast_gradient(&dn).unwrap();
                for i in 0..p {
                    let fd = (gu[i] - gd[i]) / (2.0 * h);
                    herr = herr.max((fd - hess[(i, j)]).abs() / hscale);
                }
            }
        }
    }
    (gerr, herr)
}

/// A well-conditioned random linear model with distinct basis frequencies.
pub fn random_linear_model(rng: &mut ChaCha8Rng) -> (MeanModel, CovarianceKernel, Vec<f64>, usize) {
    let p = rng.random_range(1..=3usize);
    let basis: Vec<BasisFunction> = (0..p)
        .map(|k| match rng.random_range(0..3) {
            0 => BasisFunction::Sine {
                amp: rng.random_range(1.0..5.0),
                freq: (k as f64 + 1.0) * 3.0 + rng.random_range(-0.5..0.5),
                phase: rng.random_range(0.0..1.0),
            },
            1 => BasisFunction::Cosine {
                amp: rng.random_range(1.0..5.0),
                freq: (k as f64 + 1.0) * 3.0 + rng.random_range(-0.5..0.5),
                phase: rng.random_range(0.0..1.0),
            },
            _ => BasisFunction::Exponential {
                amp: rng.random_range(1.0..3.0),
                rate: (k as f64 + 1.0) * rng.random_range(1.0..2.0),
            },
        })
        .collect();
    let model = MeanModel::from_basis(basis, ParamBox::cube(p, -100.0, 100.0).unwrap(), (0.0, 1.0))
        .unwrap();
    let kernel = match rng.random_range(0..3) {
        0 => CovarianceKernel::wiener(),
        1 => CovarianceKernel::ornstein_uhlenbeck(rng.random_range(0.2..2.0), 1.0).unwrap(),
        _ => CovarianceKernel::fractional_brownian(rng.random_range(0.5..0.9)).unwrap(),
    };
    let theta0 = (0..p).map(|_| rng.random_range(-5.0..5.0)).collect();
    let n = rng.random_range(20..80);
    (model, kernel, theta0, n)
}

/// Largest coordinate gap between the closed-form and optimizer estimates
/// over `count` random linear models, and the number of boundary hits.
pub fn closed_form_vs_optimizer(count: u64) -> (f64, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    let mut boundary = 0;
    for k in 0..count {
        let (model, kernel, theta0, n) = random_linear_model(&mut rng);
        let grid = TimeGrid::uniform(n, 0.0, 1.0).unwrap();
        let obs = observe(&model, &theta0, &kernel, &grid, 0.1, SeedSpec::new(k, 0));
        let problem = DiscreteProblem::new(model, kernel, grid, q8(), 16).unwrap();
        let ctx = problem.context(&obs).unwrap();
        let closed = ctx.estimate_linear().unwrap();
        let opt = ctx.maximize_box(None).unwrap();
        if closed.boundary_flag {
            boundary += 1;
        }
        for (a, b) in closed.theta_hat.iter().zip(&opt.theta_hat) {
            worst = worst.max((a - b).abs());
        }
    }
    (worst, boundary)
}
