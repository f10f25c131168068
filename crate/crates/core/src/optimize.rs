//! Box-constrained quasi-Newton maximization.
//!
//! Projected BFGS on `-f`: variables held at a bound by the gradient are
//! frozen, the remaining ones follow the inverse-Hessian direction, and steps
//! are projected back onto the box with an Armijo backtracking search.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mean_models::ParamBox;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerOptions {
    /// Stop when the projected-gradient sup-norm falls to this value.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-10,
            max_iterations: 500,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerStats {
    pub iterations: usize,
    pub gradient_sup_norm: f64,
    pub converged: bool,
    pub starts: usize,
}

#[derive(Debug, Clone)]
pub struct Maximum {
    pub x: Vec<f64>,
    pub value: f64,
    pub stats: OptimizerStats,
}

/// Sup-norm of `x - clip(x + g)`, the first-order optimality measure for
/// maximization over a box.
pub fn projected_gradient_norm(bounds: &ParamBox, x: &[f64], grad: &[f64]) -> f64 {
    let moved: Vec<f64> = x.iter().zip(grad).map(|(a, g)| a + g).collect();
    bounds
        .clip(&moved)
        .iter()
        .zip(x)
        .map(|(c, a)| (c - a).abs())
        .fold(0.0, f64::max)
}

struct Tracker<'a, F> {
    objective: &'a F,
    best: Option<(Vec<f64>, f64)>,
}

impl<'a, F> Tracker<'a, F>
where
    F: Fn(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    fn eval(&mut self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (v, g) = (self.objective)(x)?;
        if !v.is_finite() || g.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("objective at {x:?}")));
        }
        if self.best.as_ref().is_none_or(|(_, b)| v > *b) {
            self.best = Some((x.to_vec(), v));
        }
        Ok((v, g))
    }
}

/// Maximizes `objective` (returning value and gradient) over `bounds` from a
/// single start.
pub fn maximize_from<F>(
    objective: &F,
    bounds: &ParamBox,
    start: &[f64],
    options: &OptimizerOptions,
) -> Result<Maximum>
where
    F: Fn(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let p = bounds.dim();
    let mut tracker = Tracker {
        objective,
        best: None,
    };
    let mut x = bounds.clip(start);
    let (mut fx, mut gx) = tracker.eval(&x)?;
    let mut hinv = DMatrix::<f64>::identity(p, p);
    let mut fresh = true;
    let mut iterations = 0;
    let mut pg = projected_gradient_norm(bounds, &x, &gx);

    while pg > options.tolerance && iterations < options.max_iterations {
        iterations += 1;
        let lower = bounds.lower();
        let upper = bounds.upper();
        // Ascent problem: a coordinate is pinned when it sits on a bound and
        // the gradient points out of the box.
        let free: Vec<bool> = (0..p)
            .map(|i| !((x[i] <= lower[i] && gx[i] < 0.0) || (x[i] >= upper[i] && gx[i] > 0.0)))
            .collect();
        let g = DVector::from_fn(p, |i, _| if free[i] { gx[i] } else { 0.0 });
        let mut dir = &hinv * &g;
        for i in 0..p {
            if !free[i] {
                dir[i] = 0.0;
            }
        }
        if dir.dot(&g) <= 0.0 {
            hinv = DMatrix::identity(p, p);
            fresh = true;
            dir = g.clone();
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<f64> = bounds.clip(
                &x.iter()
                    .zip(dir.iter())
                    .map(|(a, d)| a + step * d)
                    .collect::<Vec<_>>(),
            );
            let gain: f64 = trial.iter().zip(&x).zip(&gx).map(|((t, a), g)| (t - a) * g).sum();
            let (ft, gt) = tracker.eval(&trial)?;
            if ft >= fx + 1e-4 * gain && ft >= fx {
                accepted = Some((trial, ft, gt));
                break;
            }
            step *= 0.5;
        }

        let Some((xn, fxn, gxn)) = accepted else {
            if fresh {
                break;
            }
            hinv = DMatrix::identity(p, p);
            fresh = true;
            continue;
        };

        let s = DVector::from_fn(p, |i, _| xn[i] - x[i]);
        // Curvature of -f.
        let y = DVector::from_fn(p, |i, _| gx[i] - gxn[i]);
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() && sy > 0.0 {
            if fresh {
                hinv *= sy / y.dot(&y);
                fresh = false;
            }
            let rho = 1.0 / sy;
            let eye = DMatrix::<f64>::identity(p, p);
            let left = &eye - &s * y.transpose() * rho;
            let right = &eye - &y * s.transpose() * rho;
            hinv = &left * &hinv * &right + &s * s.transpose() * rho;
        }
        let stalled = s.amax() == 0.0;
        x = xn;
        fx = fxn;
        gx = gxn;
        pg = projected_gradient_norm(bounds, &x, &gx);
        if stalled {
            break;
        }
    }

    let (bx, bv) = tracker.best.expect("at least one evaluation");
    let (x, fx, pg) = if bv > fx {
        let (_, g) = objective(&bx)?;
        let pg = projected_gradient_norm(bounds, &bx, &g);
        (bx, bv, pg)
    } else {
        (x, fx, pg)
    };
    Ok(Maximum {
        x,
        value: fx,
        stats: OptimizerStats {
            iterations,
            gradient_sup_norm: pg,
            converged: pg <= options.tolerance,
            starts: 1,
        },
    })
}

/// Starting points: `init` (or the box center) followed by the `2^min(p, 4)`
/// corners of the box in the leading coordinates, remaining coordinates at
/// the center.
pub fn multistart_points(bounds: &ParamBox, init: Option<&[f64]>) -> Vec<Vec<f64>> {
    let center = bounds.center();
    let mut starts = vec![init.map(|x| bounds.clip(x)).unwrap_or_else(|| center.clone())];
    let m = bounds.dim().min(4);
    for mask in 0..(1usize << m) {
        let mut corner = center.clone();
        for (i, c) in corner.iter_mut().enumerate().take(m) {
            *c = if mask & (1 << i) == 0 {
                bounds.lower()[i]
            } else {
                bounds.upper()[i]
            };
        }
        starts.push(corner);
    }
    starts
}

/// Runs [`maximize_from`] from every multistart point and keeps the best
/// value; ties go to the earliest start.
pub fn maximize_multistart<F>(
    objective: &F,
    bounds: &ParamBox,
    init: Option<&[f64]>,
    options: &OptimizerOptions,
) -> Result<Maximum>
where
    F: Fn(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let starts = multistart_points(bounds, init);
    let mut best: Option<Maximum> = None;
    let mut total_iterations = 0;
    for start in &starts {
        let run = maximize_from(objective, bounds, start, options)?;
        total_iterations += run.stats.iterations;
        if best.as_ref().is_none_or(|b| run.value > b.value) {
            best = Some(run);
        }
    }
    let mut best = best.expect("at least one start");
    best.stats.iterations = total_iterations;
    best.stats.starts = starts.len();
    Ok(best)
}
