//! Fixed-step integration of the dynamics with trajectory recording,
//! diagnostics and trapezoid ergodic averages.

use serde::{Deserialize, Serialize};

use crate::dynamics::{Algorithm, Flow, Layout, OutputState, StackedState};
use crate::error::{Error, Result};
use crate::linalg::{all_finite, dist, norm};
use crate::mirror::GeneratorKind;
use crate::problem::NetworkProblem;
use crate::saddle::{duality_gap_raw, kkt_residual, lyapunov, lyapunov_conjugate, SaddlePoint};

/// A right-hand side `ṡ = F(s)` on flat vectors.
pub trait VectorField {
    fn len(&self) -> usize;

    fn eval(&mut self, s: &[f64], ds: &mut [f64]) -> Result<()>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    #[default]
    #[serde(alias = "euler")]
    ExplicitEuler,
    #[serde(alias = "rk4")]
    RungeKutta4,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorConfig {
    #[serde(default = "default_step")]
    pub step: f64,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default = "default_record_every")]
    pub record_every: usize,
    #[serde(default)]
    pub scheme: Scheme,
    #[serde(default = "default_divergence_bound")]
    pub divergence_bound: f64,
}

fn default_step() -> f64 {
    1e-3
}
fn default_horizon() -> f64 {
    50.0
}
fn default_record_every() -> usize {
    100
}
fn default_divergence_bound() -> f64 {
    1e9
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig {
            step: default_step(),
            horizon: default_horizon(),
            record_every: default_record_every(),
            scheme: Scheme::ExplicitEuler,
            divergence_bound: default_divergence_bound(),
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step.is_finite() && self.step > 0.0) {
            return Err(Error::config("integrator.step", "must be a positive number"));
        }
        if !(self.horizon.is_finite() && self.horizon >= self.step) {
            return Err(Error::config("integrator.horizon", "must be at least one step"));
        }
        if self.record_every == 0 {
            return Err(Error::config("integrator.record_every", "must be positive"));
        }
        if !(self.divergence_bound > 0.0) {
            return Err(Error::config("integrator.divergence_bound", "must be positive"));
        }
        Ok(())
    }

    /// `round(T / h)`; step `k` ends at time `k·h`.
    pub fn n_steps(&self) -> usize {
        (self.horizon / self.step).round() as usize
    }
}

/// Stage buffers for one-step updates.
pub struct Stepper {
    scheme: Scheme,
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Stepper {
    pub fn new(scheme: Scheme, len: usize) -> Self {
        let rk = matches!(scheme, Scheme::RungeKutta4);
        let stage = |used: bool| vec![0.0; if used { len } else { 0 }];
        Stepper {
            scheme,
            k1: vec![0.0; len],
            k2: stage(rk),
            k3: stage(rk),
            k4: stage(rk),
            tmp: stage(rk),
        }
    }

    /// Writes one update of `s` into `out`.
    pub fn step_into<F: VectorField>(&mut self, field: &mut F, s: &[f64], h: f64, out: &mut [f64]) -> Result<()> {
        field.eval(s, &mut self.k1)?;
        match self.scheme {
            Scheme::ExplicitEuler => {
                for ((o, si), k) in out.iter_mut().zip(s).zip(&self.k1) {
                    *o = si + h * k;
                }
            }
            Scheme::RungeKutta4 => {
                let stage = |tmp: &mut [f64], k: &[f64], c: f64| {
                    for ((t, si), ki) in tmp.iter_mut().zip(s).zip(k) {
                        *t = si + c * ki;
                    }
                };
                stage(&mut self.tmp, &self.k1, 0.5 * h);
                field.eval(&self.tmp, &mut self.k2)?;
                stage(&mut self.tmp, &self.k2, 0.5 * h);
                field.eval(&self.tmp, &mut self.k3)?;
                stage(&mut self.tmp, &self.k3, h);
                field.eval(&self.tmp, &mut self.k4)?;
                for j in 0..s.len() {
                    out[j] = s[j] + h / 6.0 * (self.k1[j] + 2.0 * self.k2[j] + 2.0 * self.k3[j] + self.k4[j]);
                }
            }
        }
        if !all_finite(out) {
            return Err(Error::NonFinite("state after step"));
        }
        Ok(())
    }
}

/// One step from `s`.
pub fn step<F: VectorField>(field: &mut F, s: &[f64], h: f64, scheme: Scheme) -> Result<Vec<f64>> {
    if !(h > 0.0) {
        return Err(Error::config("integrator.step", "must be positive"));
    }
    if s.len() != field.len() {
        return Err(Error::dim("state", field.len(), s.len()));
    }
    let mut out = vec![0.0; s.len()];
    Stepper::new(scheme, s.len()).step_into(field, s, h, &mut out)?;
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RunStatus {
    Completed,
    Diverged { step: usize, time: f64, reason: String },
}

/// Raw outcome of [`propagate`].
#[derive(Clone, Debug)]
pub struct Propagation {
    pub status: RunStatus,
    pub steps: usize,
    /// Last finite state within the divergence bound.
    pub state: Vec<f64>,
}

/// Integrates `field` from `s0`, calling `observe(k, s_k)` for `k = 0..=K`.
/// Stops early, flagged diverged, on a non-finite state or on
/// `‖s‖ > divergence_bound`.
pub fn propagate<F, O>(field: &mut F, s0: &[f64], cfg: &IntegratorConfig, mut observe: O) -> Result<Propagation>
where
    F: VectorField,
    O: FnMut(usize, &[f64]) -> Result<()>,
{
    cfg.validate()?;
    if s0.len() != field.len() {
        return Err(Error::dim("initial state", field.len(), s0.len()));
    }
    if !all_finite(s0) {
        return Err(Error::NonFinite("initial state"));
    }
    let h = cfg.step;
    let total = cfg.n_steps();
    let mut stepper = Stepper::new(cfg.scheme, s0.len());
    let mut s = s0.to_vec();
    let mut next = vec![0.0; s0.len()];
    observe(0, &s)?;
    for k in 1..=total {
        let diverged = match stepper.step_into(field, &s, h, &mut next) {
            Ok(()) => {
                let size = norm(&next);
                (size > cfg.divergence_bound).then(|| format!("state norm {size:.3e} exceeds bound"))
            }
            Err(Error::NonFinite(what)) => Some(format!("non-finite {what}")),
            Err(e) => return Err(e),
        };
        if let Some(reason) = diverged {
            return Ok(Propagation {
                status: RunStatus::Diverged {
                    step: k,
                    time: k as f64 * h,
                    reason,
                },
                steps: k - 1,
                state: s,
            });
        }
        std::mem::swap(&mut s, &mut next);
        observe(k, &s)?;
    }
    Ok(Propagation {
        status: RunStatus::Completed,
        steps: total,
        state: s,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub t: f64,
    pub v1: Option<f64>,
    pub kkt_residual: f64,
    /// `‖[Σ g_i(x_i)]⁺‖`
    pub ineq_residual: f64,
    /// `‖Σ A_i x_i - b_i‖`
    pub eq_residual: f64,
    pub s_norm: f64,
    pub z_norm: f64,
    pub field_norm: f64,
    /// Duality gap of the ergodic averages, clamped at zero.
    pub gap: Option<f64>,
    /// `‖x - x★‖`
    pub x_error: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub t: f64,
    pub state: StackedState,
    pub output: OutputState,
    pub diagnostics: Diagnostics,
}

/// `(1/t) ∫₀ᵗ z(τ) dτ` by the trapezoid rule over integration steps.
#[derive(Clone, Debug, PartialEq)]
pub struct ErgodicAverages {
    pub t: f64,
    integral: Vec<f64>,
    last: Vec<f64>,
    dims: crate::problem::Dims,
}

impl ErgodicAverages {
    pub fn new(z0: &OutputState) -> Self {
        ErgodicAverages {
            t: 0.0,
            integral: vec![0.0; z0.as_slice().len()],
            last: z0.as_slice().to_vec(),
            dims: z0.dims(),
        }
    }

    pub fn push(&mut self, z: &[f64], h: f64) {
        for ((acc, a), b) in self.integral.iter_mut().zip(&self.last).zip(z) {
            *acc += 0.5 * h * (a + b);
        }
        self.last.copy_from_slice(z);
        self.t += h;
    }

    /// Current average; at `t = 0` the initial output.
    pub fn average(&self) -> OutputState {
        let data = if self.t > 0.0 {
            self.integral.iter().map(|v| v / self.t).collect()
        } else {
            self.last.clone()
        };
        OutputState::from_vec(self.dims, data).expect("layout fixed at construction")
    }
}

/// Result of checking `V₁` along the steps of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LyapunovCheck {
    /// `C = 10 · max |ΔV₁| / h`.
    pub c: f64,
    pub slack: f64,
    pub max_increase: f64,
    pub violations: usize,
    pub first_violation: Option<usize>,
}

impl LyapunovCheck {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

/// Flags steps where `V₁` rises by more than `h·C`.
pub fn check_lyapunov(values: &[f64], h: f64) -> LyapunovCheck {
    let rate = values
        .windows(2)
        .map(|w| ((w[1] - w[0]) / h).abs())
        .fold(0.0, f64::max);
    let c = 10.0 * rate;
    check_lyapunov_with(values, h, c)
}

/// As [`check_lyapunov`] with a given constant `C`.
pub fn check_lyapunov_with(values: &[f64], h: f64, c: f64) -> LyapunovCheck {
    let slack = h * c;
    let mut max_increase = f64::NEG_INFINITY;
    let mut violations = 0;
    let mut first_violation = None;
    for (k, w) in values.windows(2).enumerate() {
        let inc = w[1] - w[0];
        max_increase = max_increase.max(inc);
        if inc > slack {
            violations += 1;
            first_violation.get_or_insert(k + 1);
        }
    }
    LyapunovCheck {
        c,
        slack,
        max_increase,
        violations,
        first_violation,
    }
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub algorithm: Algorithm,
    pub config: IntegratorConfig,
    pub status: RunStatus,
    pub records: Vec<Record>,
    pub averages: ErgodicAverages,
    pub final_state: StackedState,
    /// `V₁` after every step, when a reference was given.
    pub lyapunov_values: Vec<f64>,
    /// [`lyapunov_conjugate`] after every step.
    pub conjugate_lyapunov_values: Vec<f64>,
    /// `max ‖s(t)‖` over `[0, T/2]` and over `(T/2, T]`.
    pub s_norm_halves: [f64; 2],
    pub z_norm_halves: [f64; 2],
    /// Most negative unclamped gap seen (theory says `≥ 0`).
    pub min_raw_gap: Option<f64>,
    pub subgradient_digest: String,
}

impl Trajectory {
    pub fn last(&self) -> &Record {
        self.records.last().expect("at least the initial record")
    }

    pub fn lyapunov_check(&self) -> Option<LyapunovCheck> {
        (!self.lyapunov_values.is_empty()).then(|| check_lyapunov(&self.lyapunov_values, self.config.step))
    }
}

/// Problem seen by `algorithm`: the projection baseline swaps every
/// generator for the quadratic one.
pub fn problem_for(net: &NetworkProblem, algorithm: Algorithm) -> Result<NetworkProblem> {
    match algorithm {
        Algorithm::Mdbd => Ok(net.clone()),
        Algorithm::Projection { .. } => net.with_generator(GeneratorKind::Quadratic),
    }
}

/// Runs `algorithm` from `s0` and records diagnostics every
/// `record_every` steps and at the final step.
pub fn integrate(
    net: &NetworkProblem,
    algorithm: Algorithm,
    s0: &StackedState,
    cfg: &IntegratorConfig,
    reference: Option<&SaddlePoint>,
) -> Result<Trajectory> {
    if s0.dims() != net.dims() {
        return Err(Error::dim("initial state", Layout::new(net.dims()).len(), s0.as_slice().len()));
    }
    let seen = problem_for(net, algorithm)?;
    let reference = reference.map(|r| r.for_problem(&seen)).transpose()?;
    let dims = net.dims();
    let h = cfg.step;
    let total = cfg.n_steps();
    let half = total / 2;

    let mut flow = Flow::new(net, algorithm)?;
    flow.enable_digest();
    let mut probe = Flow::new(net, algorithm)?;
    let mut z = OutputState::zeros(dims);
    probe.output_into(s0.as_slice(), z.as_mut_slice());
    let mut averages = ErgodicAverages::new(&z);
    let mut records = Vec::new();
    let mut lyapunov_values = Vec::new();
    let mut conjugate_lyapunov_values = Vec::new();
    let mut s_norm_halves = [0.0f64; 2];
    let mut z_norm_halves = [0.0f64; 2];
    let mut min_raw_gap: Option<f64> = None;
    let mut ds = vec![0.0; s0.as_slice().len()];

    let prop = propagate(&mut flow, s0.as_slice(), cfg, |k, s| {
        probe.output_into(s, z.as_mut_slice());
        if k > 0 {
            averages.push(z.as_slice(), h);
        }
        let state = StackedState::from_vec(dims, s.to_vec())?;
        let half_idx = usize::from(k > half);
        s_norm_halves[half_idx] = s_norm_halves[half_idx].max(norm(s));
        z_norm_halves[half_idx] = z_norm_halves[half_idx].max(z.norm());
        let v1 = reference.as_ref().map(|r| lyapunov(&seen, r, &state, &z));
        if let (Some(v), Some(r)) = (v1, &reference) {
            lyapunov_values.push(v);
            conjugate_lyapunov_values.push(lyapunov_conjugate(&seen, r, &state, &z));
        }
        if k % cfg.record_every == 0 || k == total {
            probe.eval(s, &mut ds)?;
            let t = k as f64 * h;
            let (gap, x_error) = match &reference {
                Some(r) if k > 0 => {
                    let raw = duality_gap_raw(net, &averages.average(), r)?;
                    min_raw_gap = Some(min_raw_gap.map_or(raw, |m: f64| m.min(raw)));
                    (Some(raw.max(0.0)), Some(dist(z.x(), r.x_star())))
                }
                Some(r) => (None, Some(dist(z.x(), r.x_star()))),
                None => (None, None),
            };
            let diagnostics = Diagnostics {
                t,
                v1,
                kkt_residual: kkt_residual(net, &z)?,
                ineq_residual: net.ineq_violation(z.x())?,
                eq_residual: norm(&net.equality_residual(z.x())?),
                s_norm: norm(s),
                z_norm: z.norm(),
                field_norm: norm(&ds),
                gap,
                x_error,
            };
            records.push(Record {
                t,
                state,
                output: z.clone(),
                diagnostics,
            });
        }
        Ok(())
    })?;

    Ok(Trajectory {
        algorithm,
        config: cfg.clone(),
        status: prop.status,
        records,
        averages,
        final_state: StackedState::from_vec(dims, prop.state)?,
        lyapunov_values,
        conjugate_lyapunov_values,
        s_norm_halves,
        z_norm_halves,
        min_raw_gap,
        subgradient_digest: flow.digest_hex().unwrap_or_default(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Decay;

    impl VectorField for Decay {
        fn len(&self) -> usize {
            1
        }

        fn eval(&mut self, s: &[f64], ds: &mut [f64]) -> Result<()> {
            ds[0] = -s[0];
            Ok(())
        }
    }

    struct Constant(f64);

    impl VectorField for Constant {
        fn len(&self) -> usize {
            1
        }

        fn eval(&mut self, _s: &[f64], ds: &mut [f64]) -> Result<()> {
            ds[0] = self.0;
            Ok(())
        }
    }

    #[test]
    fn euler_and_rk4_single_steps() {
        let e = step(&mut Decay, &[1.0], 0.1, Scheme::ExplicitEuler).unwrap();
        assert!((e[0] - 0.9).abs() < 1e-15);
        let r = step(&mut Decay, &[1.0], 0.1, Scheme::RungeKutta4).unwrap();
        assert!((r[0] - (-0.1f64).exp()).abs() < 1e-7);
        let z = step(&mut Constant(0.0), &[3.5], 0.1, Scheme::RungeKutta4).unwrap();
        assert_eq!(z, vec![3.5]);
    }

    #[test]
    fn divergence_is_flagged_with_last_finite_state() {
        let cfg = IntegratorConfig {
            step: 1.0,
            horizon: 1000.0,
            divergence_bound: 1e3,
            ..Default::default()
        };
        let out = propagate(&mut Constant(7.0), &[0.0], &cfg, |_, _| Ok(())).unwrap();
        match out.status {
            RunStatus::Diverged { step, .. } => assert_eq!(step, 143),
            RunStatus::Completed => panic!("expected divergence"),
        }
        assert_eq!(out.state, vec![142.0 * 7.0]);
    }

    #[test]
    fn observer_sees_every_step() {
        let cfg = IntegratorConfig {
            step: 0.25,
            horizon: 1.0,
            ..Default::default()
        };
        let mut seen = Vec::new();
        propagate(&mut Constant(1.0), &[0.0], &cfg, |k, s| {
            seen.push((k, s[0]));
            Ok(())
        })
        .unwrap();
        assert_eq!(seen, vec![(0, 0.0), (1, 0.25), (2, 0.5), (3, 0.75), (4, 1.0)]);
    }

    #[test]
    fn euler_error_is_first_order() {
        let endpoint = |h: f64| {
            let cfg = IntegratorConfig {
                step: h,
                horizon: 1.0,
                ..Default::default()
            };
            propagate(&mut Decay, &[1.0], &cfg, |_, _| Ok(())).unwrap().state[0]
        };
        let exact = (-1.0f64).exp();
        let e1 = (endpoint(0.01) - exact).abs();
        let e2 = (endpoint(0.005) - exact).abs();
        assert!((e1 / e2 - 2.0).abs() < 0.05, "{}", e1 / e2);
    }

    #[test]
    fn constant_trajectory_average() {
        let dims = crate::problem::Dims {
            n_agents: 2,
            n: 1,
            p: 0,
            q: 1,
        };
        let z = OutputState::from_vec(dims, vec![0.3, 0.7, 1.0, 2.0, -1.0, 1.0]).unwrap();
        let mut avg = ErgodicAverages::new(&z);
        for _ in 0..17 {
            avg.push(z.as_slice(), 0.01);
        }
        assert!(crate::linalg::max_abs_diff(avg.average().as_slice(), z.as_slice()) < 1e-14);
    }

    #[test]
    fn lyapunov_check_flags_jumps() {
        let mut v: Vec<f64> = (0..100).map(|k| 10.0 - 0.01 * k as f64).collect();
        assert!(check_lyapunov(&v, 0.01).passed());
        v[50] += 5.0;
        let c = check_lyapunov_with(&v, 0.01, 10.0);
        assert_eq!(c.first_violation, Some(50));
    }

    #[test]
    fn config_rejects_bad_values() {
        let bad = IntegratorConfig {
            step: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = IntegratorConfig {
            horizon: 1e-4,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
