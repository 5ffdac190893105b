//! `bench`: per-step and time-to-threshold wall times per dimension and
//! algorithm. Warm-up steps are excluded and each figure is the median of
//! repeated measurements. Oracle solves are not timed.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dynamics::{Algorithm, Flow, OutputState, StackedState};
use crate::error::{Error, Result};
use crate::integrator::{IntegratorConfig, Scheme, Stepper};
use crate::linalg::dist;
use crate::oracle::{solve_reference, OracleConfig};
use crate::problem::{generate_instance, FamilyConfig, NetworkProblem, WeightStructure};
use crate::qp::ProjectionMode;

pub const BENCH_HEADER: &str = "n,algorithm,per_step_us,to_threshold_s,threshold,steps";
pub const LIMIT_MARK: &str = ">LIMIT";

pub fn all_algorithms() -> Vec<Algorithm> {
    vec![
        Algorithm::Mdbd,
        Algorithm::Projection {
            projection_mode: ProjectionMode::Fast,
        },
        Algorithm::Projection {
            projection_mode: ProjectionMode::GenericQp,
        },
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub dims: Vec<usize>,
    pub algorithms: Vec<Algorithm>,
    /// Instance family; `dim` is overwritten per cell. Defaults to diagonal
    /// `W_i` so the cost term itself stays linear in `n`.
    pub family: FamilyConfig,
    pub step: f64,
    pub scheme: Scheme,
    pub repetitions: usize,
    pub warmup_steps: usize,
    /// Minimum measured wall time per repetition of the per-step timing.
    pub min_sample_s: f64,
    /// `‖x - x★‖` target of the time-to-threshold measurement.
    pub threshold: f64,
    /// Skip the time-to-threshold runs (no oracle solves).
    pub per_step_only: bool,
    pub max_horizon: f64,
    /// Wall-time budget per cell and measurement.
    pub limit_s: f64,
    pub oracle: OracleConfig,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            dims: vec![4, 64, 256, 1024],
            algorithms: all_algorithms(),
            family: FamilyConfig {
                weight_structure: WeightStructure::Diagonal,
                ..FamilyConfig::default()
            },
            step: 1e-3,
            scheme: Scheme::ExplicitEuler,
            repetitions: 5,
            warmup_steps: 20,
            min_sample_s: 0.02,
            threshold: 1e-2,
            per_step_only: false,
            max_horizon: 200.0,
            limit_s: 120.0,
            oracle: OracleConfig::default(),
        }
    }
}

impl BenchConfig {
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("bench config serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

/// A timing that either finished or hit the budget.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Timed {
    Seconds(f64),
    OverLimit,
}

impl Timed {
    pub fn seconds(&self) -> Option<f64> {
        match self {
            Timed::Seconds(s) => Some(*s),
            Timed::OverLimit => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchCell {
    pub n: usize,
    pub algorithm: String,
    /// Seconds per integration step.
    pub per_step: Timed,
    pub to_threshold: Option<Timed>,
    pub threshold: f64,
    /// Steps needed to reach the threshold.
    pub steps: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hardware {
    pub arch: String,
    pub os: String,
    pub cpu: Option<String>,
    pub threads: usize,
}

impl Hardware {
    pub fn detect() -> Self {
        let cpu = std::fs::read_to_string("/proc/cpuinfo").ok().and_then(|t| {
            t.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split(':').nth(1))
                .map(|s| s.trim().to_string())
        });
        Hardware {
            arch: std::env::consts::ARCH.to_string(),
            os: std::env::consts::OS.to_string(),
            cpu,
            threads: std::thread::available_parallelism().map_or(1, |n| n.get()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub config: BenchConfig,
    pub hardware: Hardware,
    pub cells: Vec<BenchCell>,
    /// Least-squares slope of `log(per-step time)` against `log n`.
    pub per_step_exponents: Vec<(String, Option<f64>)>,
}

impl BenchReport {
    pub fn cell(&self, n: usize, algorithm: &str) -> Option<&BenchCell> {
        self.cells.iter().find(|c| c.n == n && c.algorithm == algorithm)
    }

    pub fn exponent(&self, algorithm: &str) -> Option<f64> {
        self.per_step_exponents
            .iter()
            .find(|(a, _)| a == algorithm)
            .and_then(|(_, e)| *e)
    }

    pub fn to_csv(&self, config_hash: &str) -> String {
        let mut out = format!("# config_hash={config_hash} seed={}\n{BENCH_HEADER}\n", self.config.family.seed);
        for c in &self.cells {
            let per_step = c
                .per_step
                .seconds()
                .map_or(LIMIT_MARK.to_string(), |s| (s * 1e6).to_string());
            let to_thr = match c.to_threshold {
                None => String::new(),
                Some(Timed::OverLimit) => LIMIT_MARK.to_string(),
                Some(Timed::Seconds(s)) => s.to_string(),
            };
            let steps = c.steps.map(|s| s.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{},{},{per_step},{to_thr},{},{steps}", c.n, c.algorithm, c.threshold);
        }
        out
    }
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let m = values.len() / 2;
    if values.len() % 2 == 1 {
        values[m]
    } else {
        0.5 * (values[m - 1] + values[m])
    }
}

/// Slope of the least-squares line through `(log n, log t)`.
pub fn fit_exponent(points: &[(usize, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let xy: Vec<(f64, f64)> = points.iter().map(|&(n, t)| ((n as f64).ln(), t.ln())).collect();
    let k = xy.len() as f64;
    let mx = xy.iter().map(|p| p.0).sum::<f64>() / k;
    let my = xy.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = xy.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = xy.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

pub fn bench_instance(cfg: &BenchConfig, n: usize) -> Result<NetworkProblem> {
    let family = FamilyConfig {
        dim: n,
        ..cfg.family.clone()
    };
    Ok(generate_instance(&family)?.problem)
}

/// Median seconds per step of `algorithm` on `net`, after warm-up.
pub fn time_per_step(net: &NetworkProblem, algorithm: Algorithm, cfg: &BenchConfig) -> Result<Timed> {
    let mut flow = Flow::new(net, algorithm)?;
    let len = StackedState::zeros(net.dims()).as_slice().len();
    let mut stepper = Stepper::new(cfg.scheme, len);
    let mut s = vec![0.0; len];
    let mut next = vec![0.0; len];
    let budget = Duration::from_secs_f64(cfg.limit_s);
    let start = Instant::now();
    for _ in 0..cfg.warmup_steps.max(1) {
        stepper.step_into(&mut flow, &s, cfg.step, &mut next)?;
        std::mem::swap(&mut s, &mut next);
        if start.elapsed() > budget {
            return Ok(Timed::OverLimit);
        }
    }
    let t0 = Instant::now();
    stepper.step_into(&mut flow, &s, cfg.step, &mut next)?;
    std::mem::swap(&mut s, &mut next);
    let one = t0.elapsed().as_secs_f64().max(1e-9);
    let per_rep = ((cfg.min_sample_s / one).ceil() as usize).clamp(1, 100_000);
    let mut samples = Vec::with_capacity(cfg.repetitions);
    for _ in 0..cfg.repetitions.max(1) {
        let t0 = Instant::now();
        for _ in 0..per_rep {
            stepper.step_into(&mut flow, &s, cfg.step, &mut next)?;
            std::mem::swap(&mut s, &mut next);
        }
        samples.push(t0.elapsed().as_secs_f64() / per_rep as f64);
        if start.elapsed() > budget {
            return Ok(Timed::OverLimit);
        }
    }
    Ok(Timed::Seconds(median(&mut samples)))
}

/// Wall time and step count to bring `‖x - x★‖` below the threshold from
/// the zero state; the error is checked every `CHECK_EVERY` steps.
pub fn time_to_threshold(
    net: &NetworkProblem,
    algorithm: Algorithm,
    x_star: &[f64],
    cfg: &BenchConfig,
) -> Result<(Timed, Option<usize>)> {
    const CHECK_EVERY: usize = 10;
    let max_steps = IntegratorConfig {
        step: cfg.step,
        horizon: cfg.max_horizon,
        ..Default::default()
    }
    .n_steps();
    let budget = Duration::from_secs_f64(cfg.limit_s);
    let mut samples = Vec::new();
    let mut steps_needed = None;
    for _ in 0..cfg.repetitions.max(1) {
        let mut flow = Flow::new(net, algorithm)?;
        let mut z = OutputState::zeros(net.dims());
        let len = z.as_slice().len();
        let mut stepper = Stepper::new(cfg.scheme, len);
        let mut s = vec![0.0; len];
        let mut next = vec![0.0; len];
        let t0 = Instant::now();
        let mut reached = None;
        for k in 1..=max_steps {
            stepper.step_into(&mut flow, &s, cfg.step, &mut next)?;
            std::mem::swap(&mut s, &mut next);
            if k % CHECK_EVERY == 0 {
                flow.output_into(&s, z.as_mut_slice());
                if dist(z.x(), x_star) <= cfg.threshold {
                    reached = Some(k);
                    break;
                }
                if t0.elapsed() > budget {
                    break;
                }
            }
        }
        let elapsed = t0.elapsed().as_secs_f64();
        match reached {
            Some(k) => {
                samples.push(elapsed);
                steps_needed = Some(k);
            }
            None => return Ok((Timed::OverLimit, None)),
        }
    }
    Ok((Timed::Seconds(median(&mut samples)), steps_needed))
}

/// Runs every `(n, algorithm)` cell; `progress` sees each finished cell.
pub fn cmd_bench(cfg: &BenchConfig, mut progress: impl FnMut(&BenchCell)) -> Result<BenchReport> {
    if cfg.dims.is_empty() || cfg.dims.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::config("bench.dims", "dimensions must be nonempty and strictly ascending"));
    }
    if cfg.repetitions == 0 || !(cfg.limit_s > 0.0) || !(cfg.threshold > 0.0) {
        return Err(Error::config("bench", "repetitions, limit and threshold must be positive"));
    }
    let mut cells = Vec::new();
    for &n in &cfg.dims {
        let net = bench_instance(cfg, n)?;
        let x_star = if cfg.per_step_only {
            None
        } else {
            let oc = OracleConfig {
                seed: Some(cfg.family.seed),
                ..cfg.oracle.clone()
            };
            Some(solve_reference(&net, &oc)?.z_star.x().to_vec())
        };
        for &alg in &cfg.algorithms {
            let per_step = time_per_step(&net, alg, cfg)?;
            let (to_threshold, steps) = match &x_star {
                Some(xs) if per_step != Timed::OverLimit => {
                    let (t, k) = time_to_threshold(&net, alg, xs, cfg)?;
                    (Some(t), k)
                }
                Some(_) => (Some(Timed::OverLimit), None),
                None => (None, None),
            };
            let cell = BenchCell {
                n,
                algorithm: alg.name().to_string(),
                per_step,
                to_threshold,
                threshold: cfg.threshold,
                steps,
            };
            progress(&cell);
            cells.push(cell);
        }
    }
    let per_step_exponents = cfg
        .algorithms
        .iter()
        .map(|a| {
            let pts: Vec<(usize, f64)> = cells
                .iter()
                .filter(|c| c.algorithm == a.name())
                .filter_map(|c| c.per_step.seconds().map(|s| (c.n, s)))
                .collect();
            (a.name().to_string(), fit_exponent(&pts))
        })
        .collect();
    Ok(BenchReport {
        config: cfg.clone(),
        hardware: Hardware::detect(),
        cells,
        per_step_exponents,
    })
}
