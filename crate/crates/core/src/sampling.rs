//! Exact simulation of the discrete observation `X_{t_i} = h_theta0(t_i) + eps Z_{t_i}`.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{CovarianceKernel, GramMatrix};
use crate::mean_models::MeanModel;
use crate::timegrid::{CellQuadrature, TimeGrid};

pub const DEFAULT_JITTER_REL: f64 = 1e-12;
const MAX_JITTER_RETRIES: usize = 4;

/// Discrete sample `(X_{t_1}, ..., X_{t_n})` at noise level `epsilon`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub epsilon: f64,
    pub grid: TimeGrid,
    pub values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CsvRow {
    t: f64,
    x: f64,
}

impl Observation {
    pub fn new(grid: TimeGrid, values: Vec<f64>, epsilon: f64) -> Result<Self> {
        if values.len() != grid.n() {
            return Err(Error::InvalidArgument(format!(
                "{} values for a grid with {} nodes",
                values.len(),
                grid.n()
            )));
        }
        if !(epsilon >= 0.0) || !epsilon.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "noise level must be nonnegative, got {epsilon}"
            )));
        }
        Ok(Self {
            epsilon,
            grid,
            values,
        })
    }

    pub fn values_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.values)
    }

    /// Writes `t,x` rows for the nodes `t_1..t_n`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let csv_err = |source| Error::Csv {
            path: path.to_path_buf(),
            source,
        };
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        w.write_record(["t", "x"]).map_err(csv_err)?;
        for (t, x) in self.grid.nodes().iter().zip(&self.values) {
            w.write_record([format!("{t:.16e}"), format!("{x:.16e}")])
                .map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Reads a `t,x` CSV. The grid is `left` followed by the `t` column.
    pub fn read_csv(path: &Path, left: f64, epsilon: f64) -> Result<Self> {
        let csv_err = |source| Error::Csv {
            path: path.to_path_buf(),
            source,
        };
        let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
        let mut t = vec![left];
        let mut values = Vec::new();
        for row in r.deserialize::<CsvRow>() {
            let row = row.map_err(csv_err)?;
            t.push(row.t);
            values.push(row.x);
        }
        Observation::new(TimeGrid::new(t)?, values, epsilon)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let s = serde_json::to_string_pretty(self).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let obs: Observation = serde_json::from_str(&s).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        Observation::new(obs.grid, obs.values, obs.epsilon)
    }
}

/// Seed of one replication in a Monte Carlo run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedSpec {
    pub master_seed: u64,
    pub replication_index: u64,
}

impl SeedSpec {
    pub fn new(master_seed: u64, replication_index: u64) -> Self {
        Self {
            master_seed,
            replication_index,
        }
    }

    /// Independent ChaCha stream keyed by a hash of the master seed and
    /// selected by the replication index.
    pub fn rng(&self) -> ChaCha8Rng {
        let key = splitmix64(self.master_seed ^ splitmix64(self.replication_index));
        let mut rng = ChaCha8Rng::seed_from_u64(key);
        rng.set_stream(self.replication_index);
        rng
    }
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Lower-triangular `L` with `L L^T = G + jitter I`.
#[derive(Debug, Clone)]
pub struct CholeskyFactor {
    lower: DMatrix<f64>,
    jitter: f64,
}

impl CholeskyFactor {
    pub fn lower(&self) -> &DMatrix<f64> {
        &self.lower
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// `L g` for a standard normal vector `g`.
    pub fn correlate(&self, g: &DVector<f64>) -> DVector<f64> {
        let n = g.len();
        let mut out = DVector::zeros(n);
        for j in 0..n {
            let gj = g[j];
            if gj == 0.0 {
                continue;
            }
            for i in j..n {
                out[i] += self.lower[(i, j)] * gj;
            }
        }
        out
    }
}

/// Factors `G + jitter I` with `jitter = jitter_rel * max(max diag G, 1)`,
/// multiplying the jitter by ten on each failure for up to four retries.
pub fn chol_factor(gram: &GramMatrix, jitter_rel: f64) -> Result<CholeskyFactor> {
    if !(jitter_rel >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "jitter must be nonnegative, got {jitter_rel}"
        )));
    }
    let g = gram.matrix();
    let n = g.nrows();
    let scale = g.diagonal().iter().fold(1.0f64, |a, &d| a.max(d));
    let mut jitter = jitter_rel * scale;
    for attempt in 0..=MAX_JITTER_RETRIES {
        let mut m = g.clone();
        for i in 0..n {
            m[(i, i)] += jitter;
        }
        if let Some(c) = m.cholesky() {
            return Ok(CholeskyFactor {
                lower: c.unpack(),
                jitter,
            });
        }
        if attempt < MAX_JITTER_RETRIES {
            jitter = if jitter == 0.0 {
                DEFAULT_JITTER_REL * scale
            } else {
                jitter * 10.0
            };
        }
    }
    Err(Error::NotPositiveSemidefinite {
        kernel: gram.kernel_name().to_string(),
        grid: gram.grid().describe(),
        jitter,
    })
}

/// Precomputed mean vector and factor for repeated draws on one grid.
#[derive(Debug, Clone)]
pub struct ObservationSampler {
    grid: TimeGrid,
    mean: DVector<f64>,
    factor: CholeskyFactor,
}

impl ObservationSampler {
    pub fn new(
        model: &MeanModel,
        theta0: &[f64],
        kernel: &CovarianceKernel,
        grid: &TimeGrid,
        q: &CellQuadrature,
        refinement: usize,
        jitter_rel: f64,
    ) -> Result<Self> {
        let gram = GramMatrix::new(kernel, grid);
        let factor = chol_factor(&gram, jitter_rel)?;
        let mean = model.mean_vector(theta0, kernel, grid, q, refinement)?;
        Ok(Self {
            grid: grid.clone(),
            mean,
            factor,
        })
    }

    /// Builds a sampler from parts computed elsewhere.
    pub fn from_parts(grid: TimeGrid, mean: DVector<f64>, factor: CholeskyFactor) -> Result<Self> {
        if mean.len() != grid.n() || factor.lower.nrows() != grid.n() {
            return Err(Error::InvalidArgument("sampler parts have mismatched sizes".into()));
        }
        Ok(Self { grid, mean, factor })
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn factor(&self) -> &CholeskyFactor {
        &self.factor
    }

    /// Standard normal noise `L g` for one replication.
    pub fn noise(&self, seed: SeedSpec) -> DVector<f64> {
        let mut rng = seed.rng();
        let g = DVector::from_fn(self.grid.n(), |_, _| StandardNormal.sample(&mut rng));
        self.factor.correlate(&g)
    }

    pub fn sample(&self, epsilon: f64, seed: SeedSpec) -> Result<Observation> {
        if !(epsilon >= 0.0) || !epsilon.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "noise level must be nonnegative, got {epsilon}"
            )));
        }
        let values = if epsilon == 0.0 {
            self.mean.clone()
        } else {
            &self.mean + self.noise(seed) * epsilon
        };
        Ok(Observation {
            epsilon,
            grid: self.grid.clone(),
            values: values.as_slice().to_vec(),
        })
    }
}

/// One draw of `X^{eps,n}` with default jitter.
#[allow(clippy::too_many_arguments)]
pub fn sample_observation(
    model: &MeanModel,
    theta0: &[f64],
    kernel: &CovarianceKernel,
    grid: &TimeGrid,
    epsilon: f64,
    seed: SeedSpec,
    q: &CellQuadrature,
    refinement: usize,
) -> Result<Observation> {
    ObservationSampler::new(model, theta0, kernel, grid, q, refinement, DEFAULT_JITTER_REL)?
        .sample(epsilon, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    #[test]
    fn identity_factor() {
        let grid = TimeGrid::uniform(3, 0.0, 1.0).unwrap();
        let g = GramMatrix::from_matrix(DMatrix::identity(3, 3), &grid).unwrap();
        let f = chol_factor(&g, 0.0).unwrap();
        assert_eq!(f.lower(), &DMatrix::identity(3, 3));
        assert_eq!(f.jitter(), 0.0);
    }

    #[test]
    fn wiener_factor_reconstructs() {
        let grid = TimeGrid::uniform(3, 0.0, 1.0).unwrap();
        let g = GramMatrix::new(&CovarianceKernel::wiener(), &grid);
        let f = chol_factor(&g, 0.0).unwrap();
        let rec = f.lower() * f.lower().transpose();
        assert!((rec - g.matrix()).amax() < 1e-12);
    }

    #[test]
    fn zero_matrix_gets_jitter() {
        let grid = TimeGrid::uniform(4, 0.0, 1.0).unwrap();
        let g = GramMatrix::from_matrix(DMatrix::zeros(4, 4), &grid).unwrap();
        let f = chol_factor(&g, DEFAULT_JITTER_REL).unwrap();
        let expect = DMatrix::<f64>::identity(4, 4) * f.jitter().sqrt();
        assert!((f.lower() - expect).amax() < 1e-20);
        // With zero initial jitter the first retry still succeeds.
        assert!(chol_factor(&g, 0.0).is_ok());
    }

    #[test]
    fn indefinite_matrix_fails() {
        let grid = TimeGrid::uniform(2, 0.0, 1.0).unwrap();
        let g = GramMatrix::from_matrix(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]), &grid)
            .unwrap();
        assert!(matches!(
            chol_factor(&g, DEFAULT_JITTER_REL),
            Err(Error::NotPositiveSemidefinite { .. })
        ));
    }

    #[test]
    fn seed_streams_are_deterministic_and_distinct() {
        let a: Vec<u64> = {
            let mut r = SeedSpec::new(7, 3).rng();
            (0..4).map(|_| r.next_u64()).collect()
        };
        let b: Vec<u64> = {
            let mut r = SeedSpec::new(7, 3).rng();
            (0..4).map(|_| r.next_u64()).collect()
        };
        let c: Vec<u64> = {
            let mut r = SeedSpec::new(7, 4).rng();
            (0..4).map(|_| r.next_u64()).collect()
        };
        let d: Vec<u64> = {
            let mut r = SeedSpec::new(8, 3).rng();
            (0..4).map(|_| r.next_u64()).collect()
        };
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }

    #[test]
    fn observation_length_is_checked() {
        let grid = TimeGrid::uniform(3, 0.0, 1.0).unwrap();
        assert!(Observation::new(grid.clone(), vec![1.0, 2.0], 0.1).is_err());
        assert!(Observation::new(grid, vec![1.0, 2.0, 3.0], -0.1).is_err());
    }
}
