//! `verify`: re-checks an instance and its saddle point from the files alone.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::artifacts::{InstanceDoc, SaddleDoc};
use crate::dynamics::OutputState;
use crate::graph::Graph;
use crate::linalg::norm;
use crate::mirror::euclidean_project;
use crate::problem::NetworkProblem;
use crate::saddle::{equilibrium_state, kkt_residual, saddle_inequality_violation};

pub const SADDLE_SAMPLES: usize = 100;
pub const SADDLE_SAMPLE_SEED: u64 = 0x5ad;
/// Slack on the saddle inequalities, relative to `1 + |L(z★)|`.
pub const SADDLE_INEQ_TOL: f64 = 1e-7;

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
}

impl VerifyReport {
    fn push(&mut self, name: &'static str, passed: bool, detail: impl Into<String>) {
        self.checks.push(Check {
            name,
            passed,
            detail: detail.into(),
        });
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail)?;
        }
        Ok(())
    }
}

/// Random point of `Θ`: local-set primal blocks, nonnegative `λ`, free rest.
pub fn random_domain_point(net: &NetworkProblem, rng: &mut ChaCha8Rng) -> OutputState {
    let d = net.dims();
    let mut z = OutputState::zeros(d);
    for i in 0..d.n_agents {
        let raw: Vec<f64> = (0..d.n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let x = euclidean_project(net.agent(i).set(), &raw).expect("local sets project");
        z.x_mut()[i * d.n..(i + 1) * d.n].copy_from_slice(&x);
    }
    for v in z.lambda_mut() {
        *v = rng.gen_range(0.0..2.0);
    }
    let l = z.layout();
    for k in l.mu().start..l.len() {
        z.as_mut_slice()[k] = rng.gen_range(-2.0..2.0);
    }
    z
}

/// Connectivity, Slater certificate, `λ★ ≥ 0`, KKT residual, the stored
/// `s★`, and both saddle inequalities on seeded random points.
pub fn cmd_verify(instance: &InstanceDoc, saddle: Option<&SaddleDoc>) -> VerifyReport {
    let mut report = VerifyReport::default();

    let graph = Graph::from_edges(instance.graph.n_agents, &instance.graph.edges);
    match &graph {
        Ok(g) if g.is_connected() => report.push("connectivity", true, format!("{} agents", g.n_agents())),
        Ok(_) => report.push("connectivity", false, "communication graph is not connected"),
        Err(e) => report.push("connectivity", false, e.to_string()),
    }
    let net = match graph.and_then(|g| NetworkProblem::new(instance.agents.clone(), g)) {
        Ok(net) => net,
        Err(e) => {
            report.push("instance", false, format!("cannot rebuild problem: {e}"));
            return report;
        }
    };

    match net.slater_certificate(&instance.slater.point) {
        Ok(c) => {
            let ok = c.slack.map_or(true, |s| s > 0.0) && c.eq_residual <= 1e-9;
            report.push(
                "slater",
                ok,
                format!("slack {:?}, equality residual {:.3e}", c.slack, c.eq_residual),
            );
        }
        Err(e) => report.push("slater", false, e.to_string()),
    }

    let Some(doc) = saddle else {
        return report;
    };
    report.push(
        "config_hash",
        doc.config_hash == instance.config_hash && doc.seed == instance.seed,
        format!("instance {} / saddle {}", short(&instance.config_hash), short(&doc.config_hash)),
    );
    let sp = &doc.saddle;
    if sp.z_star.dims() != net.dims() {
        report.push("saddle_dims", false, "saddle point does not match the instance dimensions");
        return report;
    }
    let min_lambda = sp.z_star.lambda().iter().cloned().fold(f64::INFINITY, f64::min);
    let lambda_ok = sp.z_star.lambda().iter().all(|&l| l >= 0.0);
    report.push(
        "lambda_nonnegative",
        lambda_ok,
        if sp.z_star.lambda().is_empty() {
            "no inequality multipliers".to_string()
        } else {
            format!("min λ★ = {min_lambda:.3e}")
        },
    );
    if !lambda_ok {
        return report;
    }

    let tol = sp.provenance.tolerance;
    match kkt_residual(&net, &sp.z_star) {
        Ok(r) => report.push("kkt_residual", r <= tol, format!("{r:.3e} (tolerance {tol:.1e})")),
        Err(e) => {
            report.push("kkt_residual", false, e.to_string());
            return report;
        }
    }

    match equilibrium_state(&net, &sp.z_star) {
        Ok(s) => {
            let diff: Vec<f64> = s.as_slice().iter().zip(sp.s_star.as_slice()).map(|(a, b)| a - b).collect();
            let e = norm(&diff);
            let scale = 1.0 + norm(s.as_slice());
            report.push("s_star", e <= 1e-9 * scale, format!("‖s★ - (-F(z★) + ∇Φ(z★))‖ = {e:.3e}"));
        }
        Err(e) => report.push("s_star", false, e.to_string()),
    }

    let mut rng = ChaCha8Rng::seed_from_u64(SADDLE_SAMPLE_SEED);
    let mut worst = f64::NEG_INFINITY;
    let mut failure = None;
    let scale = 1.0 + crate::saddle::lagrangian(&net, &sp.z_star).map(f64::abs).unwrap_or(0.0);
    for _ in 0..SADDLE_SAMPLES {
        let z = random_domain_point(&net, &mut rng);
        match saddle_inequality_violation(&net, sp, &z) {
            Ok((left, right)) => worst = worst.max(left).max(right),
            Err(e) => {
                failure = Some(e.to_string());
                break;
            }
        }
    }
    match failure {
        Some(e) => report.push("saddle_inequalities", false, e),
        None => report.push(
            "saddle_inequalities",
            worst <= SADDLE_INEQ_TOL * scale,
            format!("{SADDLE_SAMPLES} points, worst violation {worst:.3e}"),
        ),
    }
    report
}

fn short(h: &str) -> &str {
    &h[..h.len().min(12)]
}
