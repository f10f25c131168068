use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gpmean::config::ExperimentConfig;
use gpmean::estimation::DiscreteProblem;
use gpmean::experiments;
use gpmean::sampling::{ObservationSampler, SeedSpec};
use gpmean::{Error, Observation, Result};

#[derive(Parser)]
#[command(name = "gpmean", version, about = "Small-noise estimation of Gaussian process mean functions")]
struct Cli {
    /// Worker threads for replication-level parallelism (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Experiment configuration (JSON).
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Builtin configuration: paper42 or paper42-p2.
    #[arg(long)]
    preset: Option<String>,
    /// Overrides the master seed of the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the replication count of the configuration.
    #[arg(long)]
    replications: Option<usize>,
    /// Output directory (falls back to the configuration, then `out`).
    #[arg(long)]
    out: Option<PathBuf>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match (&self.config, &self.preset) {
            (Some(path), _) => ExperimentConfig::load(path)?,
            (None, Some(name)) => ExperimentConfig::preset(name)?,
            (None, None) => {
                return Err(Error::Config("either --config or --preset is required".into()))
            }
        };
        if let Some(seed) = self.seed {
            cfg.master_seed = seed;
        }
        if let Some(r) = self.replications {
            cfg.replications = r;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn out_dir(&self, cfg: &ExperimentConfig) -> PathBuf {
        self.out
            .clone()
            .or_else(|| cfg.output_dir.as_ref().map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("out"))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Draws observations for every case and writes one CSV (t, x) plus JSON per draw.
    Simulate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Draws per case.
        #[arg(long, default_value_t = 1)]
        count: usize,
    },
    /// Estimates the parameter from an observation CSV.
    Estimate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Observation file with columns t, x.
        #[arg(long)]
        obs: PathBuf,
        /// Noise level used for QGAIC.
        #[arg(long)]
        epsilon: f64,
    },
    /// Monte Carlo study: table, standardized errors, histograms, QQ pairs, paths.
    Mc {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Monte Carlo estimate of the contrast bias divided by eps^2.
    QgaicBias {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// eps^{-1} ||K^n - K|| for every (n, eps) pair.
    RateTable {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_delimiter = ',', default_values_t = [100usize, 1000])]
        n: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_values_t = [0.1f64, 0.01])]
        eps: Vec<f64>,
        /// Points per cell in the sup estimate.
        #[arg(long, default_value_t = experiments::HARNESS_SUP_REFINEMENT)]
        refinement: usize,
    },
    /// Log-likelihood ratio against its linear-minus-half-quadratic expansion.
    LanCheck {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Local directions u (scalar models; repeated along every axis otherwise).
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_values_t = [-1.0f64, 0.5, 1.0])]
        u: Vec<f64>,
    },
}

fn write_string(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })
}

fn simulate(args: &ConfigArgs, count: usize) -> Result<()> {
    let cfg = args.load()?;
    let dir = args.out_dir(&cfg);
    create_dir(&dir)?;
    let kernel = cfg.kernel()?;
    let model = cfg.mean_model()?;
    let q = cfg.quadrature()?;
    for (ci, case) in cfg.cases.iter().enumerate() {
        let grid = cfg.grid(case)?;
        let sampler = ObservationSampler::new(
            &model,
            &cfg.theta0,
            &kernel,
            &grid,
            &q,
            cfg.refinement,
            cfg.jitter_rel,
        )?;
        for r in 0..count {
            let seed = SeedSpec::new(cfg.master_seed.wrapping_add(ci as u64), r as u64);
            let obs = sampler.sample(case.epsilon, seed)?;
            let stem = format!("obs_n{}_eps{}_r{r}", case.n, case.epsilon);
            obs.write_csv(&dir.join(format!("{stem}.csv")))?;
            obs.write_json(&dir.join(format!("{stem}.json")))?;
        }
    }
    log::info!("wrote {} observations to {}", count * cfg.cases.len(), dir.display());
    Ok(())
}

fn estimate(args: &ConfigArgs, obs_path: &Path, epsilon: f64) -> Result<()> {
    let cfg = args.load()?;
    let obs = Observation::read_csv(obs_path, cfg.interval[0], epsilon)?;
    let problem = DiscreteProblem::new(
        cfg.mean_model()?,
        cfg.kernel()?,
        obs.grid.clone(),
        cfg.quadrature()?,
        cfg.refinement,
    )?;
    let result = problem.context(&obs)?.estimate()?;
    for w in &result.warnings {
        log::warn!("{w:?}");
    }
    let dir = args.out_dir(&cfg);
    create_dir(&dir)?;
    let path = dir.join("estimate.json");
    let json = serde_json::to_string_pretty(&result).map_err(|source| Error::Json {
        path: path.clone(),
        source,
    })?;
    write_string(&path, &json)?;
    println!("{json}");
    Ok(())
}

fn lan_check(args: &ConfigArgs, us: &[f64]) -> Result<()> {
    let cfg = args.load()?;
    let model = cfg.mean_model()?;
    let kernel = cfg.kernel()?;
    let q = cfg.quadrature()?;
    let sigma = model.sigma_matrix(&cfg.theta0, &kernel, &q, cfg.refinement)?;
    let p = model.dim();
    let mut csv = String::from("n,epsilon,u,log_ratio,linear_term,quadratic_term,residual\n");
    for (ci, case) in cfg.cases.iter().enumerate() {
        if case.epsilon <= 0.0 {
            continue;
        }
        let grid = cfg.grid(case)?;
        let problem = DiscreteProblem::new(model.clone(), kernel.clone(), grid.clone(), q.clone(), cfg.refinement)?;
        let sampler = ObservationSampler::from_parts(
            grid.clone(),
            model.mean_vector(&cfg.theta0, &kernel, &grid, &q, cfg.refinement)?,
            gpmean::chol_factor(problem.gram(), cfg.jitter_rel)?,
        )?;
        let obs = sampler.sample(case.epsilon, SeedSpec::new(cfg.master_seed.wrapping_add(ci as u64), 0))?;
        let ctx = problem.context(&obs)?;
        for &u in us {
            let dir_u = vec![u; p];
            let lan = ctx.lan_statistic(&cfg.theta0, &dir_u, &sigma)?;
            let residual = lan.log_ratio - (lan.linear_term - 0.5 * lan.quadratic_term);
            csv.push_str(&format!(
                "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}\n",
                case.n, case.epsilon, u, lan.log_ratio, lan.linear_term, lan.quadratic_term, residual
            ));
        }
    }
    let dir = args.out_dir(&cfg);
    create_dir(&dir)?;
    write_string(&dir.join("lan.csv"), &csv)?;
    print!("{csv}");
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Simulate { cfg, count } => simulate(cfg, *count),
        Command::Estimate { cfg, obs, epsilon } => estimate(cfg, obs, *epsilon),
        Command::Mc { cfg } => {
            let config = cfg.load()?;
            let report = experiments::run_mc(&config)?;
            for f in experiments::emit(&report, &cfg.out_dir(&config))? {
                println!("{}", f.display());
            }
            Ok(())
        }
        Command::QgaicBias { cfg } => {
            let config = cfg.load()?;
            let report = experiments::qgaic_bias(&config)?;
            for c in &report.cases {
                println!(
                    "n={} eps={} bias/eps^2={:.6} (se {:.6}; control variate {:.6}, se {:.6}; target {})",
                    c.case.n,
                    c.case.epsilon,
                    c.mean,
                    c.std_error,
                    c.control_variate_mean,
                    c.control_variate_std_error,
                    c.target
                );
            }
            experiments::emit_bias(&report, &cfg.out_dir(&config))?;
            Ok(())
        }
        Command::RateTable {
            cfg,
            n,
            eps,
            refinement,
        } => {
            let config = cfg.load()?;
            let rows = experiments::rate_condition_table(
                &config.kernel()?,
                config.domain(),
                n,
                eps,
                *refinement,
            )?;
            for r in &rows {
                println!(
                    "n={} eps={} stat={:.6e}{}",
                    r.n,
                    r.epsilon,
                    r.statistic,
                    if r.flagged { " FLAGGED" } else { "" }
                );
            }
            experiments::emit_rate_table(&rows, &cfg.out_dir(&config))?;
            Ok(())
        }
        Command::LanCheck { cfg, u } => lan_check(cfg, u),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match cli.threads {
        Some(k) => match rayon::ThreadPoolBuilder::new().num_threads(k).build() {
            Ok(pool) => pool.install(|| run(cli)),
            Err(e) => Err(Error::Config(format!("cannot build thread pool: {e}"))),
        },
        None => run(cli),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config_error() {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}
