//! `run` and `gen`.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::artifacts::*;
use super::config::ExperimentConfig;
use crate::dynamics::StackedState;
use crate::error::Result;
use crate::integrator::{integrate, LyapunovCheck, RunStatus, Trajectory};
use crate::oracle::solve_reference;
use crate::saddle::{Provenance, SaddlePoint};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinalResiduals {
    pub t: f64,
    pub eq_residual: f64,
    pub ineq_violation: f64,
    pub kkt_residual: f64,
    pub s_norm: f64,
    pub v1: Option<f64>,
    pub gap: Option<f64>,
    pub x_error: Option<f64>,
}

/// Deterministic run report; wall times live in `timing.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config_hash: String,
    pub seed: u64,
    pub family: String,
    pub algorithm: String,
    #[serde(flatten)]
    pub status: RunStatus,
    pub steps: usize,
    #[serde(rename = "final")]
    pub final_residuals: FinalResiduals,
    pub initial_x_error: Option<f64>,
    /// `max ‖s‖` over the first and the second half of the horizon.
    pub s_norm_halves: [f64; 2],
    pub lyapunov: Option<LyapunovCheck>,
    pub min_raw_gap: Option<f64>,
    pub subgradient_digest: String,
    pub oracle: Option<Provenance>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunTiming {
    pub config_hash: String,
    pub seed: u64,
    pub oracle_s: Option<f64>,
    pub integrate_s: f64,
    pub per_step_us: f64,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub summary: RunSummary,
    pub timing: RunTiming,
    pub trajectory: Trajectory,
    pub saddle: Option<SaddlePoint>,
}

impl RunOutcome {
    pub fn diverged(&self) -> bool {
        matches!(self.summary.status, RunStatus::Diverged { .. })
    }
}

/// Generates the instance and writes `instance.json`.
pub fn cmd_gen(cfg: &ExperimentConfig, out: &Path) -> Result<InstanceDoc> {
    let inst = cfg.instance()?;
    std::fs::create_dir_all(out)?;
    let doc = InstanceDoc::new(&cfg.hash(), cfg.seed(), &inst.family, &inst.problem, inst.certificate);
    write_json(&out.join(INSTANCE_FILE), &doc)?;
    Ok(doc)
}

/// Full experiment: instance, optional reference solve, integration from
/// the zero state, and every artifact.
pub fn cmd_run(cfg: &ExperimentConfig, out: &Path) -> Result<RunOutcome> {
    cfg.validate()?;
    let hash = cfg.hash();
    let seed = cfg.seed();
    let inst = cfg.instance()?;
    let net = &inst.problem;
    std::fs::create_dir_all(out)?;
    write_json(
        &out.join(INSTANCE_FILE),
        &InstanceDoc::new(&hash, seed, &inst.family, net, inst.certificate.clone()),
    )?;

    let mut oracle_s = None;
    let saddle = match cfg.oracle_config() {
        Some(oc) => {
            let t0 = Instant::now();
            let sp = solve_reference(net, &oc)?;
            oracle_s = Some(t0.elapsed().as_secs_f64());
            write_json(
                &out.join(SADDLE_FILE),
                &SaddleDoc {
                    config_hash: hash.clone(),
                    seed,
                    saddle: sp.clone(),
                },
            )?;
            Some(sp)
        }
        None => None,
    };

    let t0 = Instant::now();
    let traj = integrate(
        net,
        cfg.algorithm,
        &StackedState::zeros(net.dims()),
        &cfg.integrator,
        saddle.as_ref(),
    )?;
    let integrate_s = t0.elapsed().as_secs_f64();

    if cfg.output.trajectory {
        write_text(&out.join(TRAJECTORY_FILE), &trajectory_csv(&hash, seed, net, &traj))?;
    }
    write_text(&out.join(DIAGNOSTICS_FILE), &diagnostics_csv(&hash, seed, &traj))?;
    if saddle.is_some() {
        write_text(&out.join(ERRORS_FILE), &errors_csv(&hash, seed, &traj))?;
    }

    let last = &traj.last().diagnostics;
    let summary = RunSummary {
        config_hash: hash.clone(),
        seed,
        family: inst.family.tag.clone(),
        algorithm: cfg.algorithm.name().to_string(),
        status: traj.status.clone(),
        steps: match &traj.status {
            RunStatus::Completed => cfg.integrator.n_steps(),
            RunStatus::Diverged { step, .. } => step - 1,
        },
        final_residuals: FinalResiduals {
            t: last.t,
            eq_residual: last.eq_residual,
            ineq_violation: last.ineq_residual,
            kkt_residual: last.kkt_residual,
            s_norm: last.s_norm,
            v1: last.v1,
            gap: last.gap,
            x_error: last.x_error,
        },
        initial_x_error: traj.records[0].diagnostics.x_error,
        s_norm_halves: traj.s_norm_halves,
        lyapunov: traj.lyapunov_check(),
        min_raw_gap: traj.min_raw_gap,
        subgradient_digest: traj.subgradient_digest.clone(),
        oracle: saddle.as_ref().map(|s| s.provenance.clone()),
    };
    write_json(&out.join(SUMMARY_FILE), &summary)?;

    let steps = summary.steps.max(1);
    let timing = RunTiming {
        config_hash: hash,
        seed,
        oracle_s,
        integrate_s,
        per_step_us: integrate_s * 1e6 / steps as f64,
    };
    write_json(&out.join(TIMING_FILE), &timing)?;

    Ok(RunOutcome {
        summary,
        timing,
        trajectory: traj,
        saddle,
    })
}
