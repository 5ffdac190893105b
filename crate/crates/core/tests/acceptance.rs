//! End-to-end acceptance checks, one test per criterion. Each prints a
//! single `PASS`/`FAIL` line to stderr (uncaptured) before asserting.

use std::io::Write;
use std::sync::Mutex;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mdbd::dynamics::{mdbd_field, projection_baseline_field, Algorithm, StackedState};
use mdbd::harness::artifacts::{INSTANCE_FILE, SUMMARY_FILE, TRAJECTORY_FILE};
use mdbd::harness::bench::{bench_instance, fit_exponent, time_per_step, BenchConfig};
use mdbd::harness::{cmd_run, ExperimentConfig};
use mdbd::integrator::{check_lyapunov_with, integrate, IntegratorConfig, RunStatus, Scheme};
use mdbd::linalg::dist;
use mdbd::mirror::{ConstraintSet, GeneratingFunction, GeneratorKind};
use mdbd::oracle::{mesh_minimize, solve_reference, OracleConfig};
use mdbd::problem::{generate_instance, two_agent_scalar, FamilyConfig, NetworkProblem, SCALAR_TARGETS};
use mdbd::qp::ProjectionMode;
use mdbd::saddle::{equilibrium_state, SaddlePoint};

/// Timing-sensitive checks share the machine badly; run them one at a time.
static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn report(id: &str, passed: bool, detail: String) {
    let line = format!("{} {id}: {detail}\n", if passed { "PASS" } else { "FAIL" });
    std::io::stderr().write_all(line.as_bytes()).unwrap();
}

fn desk_instance() -> NetworkProblem {
    generate_instance(&FamilyConfig::default()).unwrap().problem
}

fn reference(net: &NetworkProblem) -> SaddlePoint {
    solve_reference(net, &OracleConfig::default()).unwrap()
}

fn euler(horizon: f64, record_every: usize) -> IntegratorConfig {
    IntegratorConfig {
        step: 1e-3,
        horizon,
        record_every,
        ..Default::default()
    }
}

fn random_state(net: &NetworkProblem, rng: &mut ChaCha8Rng) -> StackedState {
    let len = StackedState::zeros(net.dims()).as_slice().len();
    StackedState::from_vec(net.dims(), (0..len).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap()
}

/// The generators exercised by the mirror-map checks, `n ∈ {1, 2, 3}`.
fn generators(n: usize) -> Vec<GeneratingFunction> {
    vec![
        GeneratingFunction::entropy(n).unwrap(),
        GeneratingFunction::quadratic(ConstraintSet::UnitSimplex { dim: n }).unwrap(),
        GeneratingFunction::quadratic(ConstraintSet::Box {
            lower: vec![-0.5; n],
            upper: vec![1.0; n],
        })
        .unwrap(),
    ]
}

#[test]
fn c01_mirror_map_matches_mesh_search() {
    let _g = serial();
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    for k in 0..100 {
        let n = 1 + k % 3;
        let gens = generators(n);
        let phi = &gens[(k / 3) % gens.len()];
        let z: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let x = phi.mirror_map(&z).unwrap();
        let mesh = mesh_minimize(&[phi.domain()], 20, 20, |x, _| {
            Some(-x.iter().zip(&z).map(|(a, b)| a * b).sum::<f64>() + phi.value(x))
        })
        .unwrap();
        let e = x.iter().zip(&mesh).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        worst = worst.max(e);
    }
    let secs = t0.elapsed().as_secs_f64();
    let ok = worst <= 1e-6 && secs < 10.0;
    report("C1 mirror map vs mesh", ok, format!("100 points, max |Δx| {worst:.2e}, {secs:.2} s"));
    assert!(ok);
}

#[test]
fn c02_conjugate_gradient_is_the_mirror_map() {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let h = 1e-5;
    let mut worst = 0.0f64;
    for k in 0..50 {
        let n = 1 + k % 3;
        let gens = generators(n);
        let phi = &gens[(k / 3) % gens.len()];
        let z: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let x = phi.mirror_map(&z).unwrap();
        for j in 0..n {
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp[j] += h;
            zm[j] -= h;
            let fd = (phi.conjugate(&zp).unwrap() - phi.conjugate(&zm).unwrap()) / (2.0 * h);
            worst = worst.max((fd - x[j]).abs());
        }
    }
    let ok = worst <= 1e-4;
    report("C2 conjugate identity", ok, format!("50 points, max |∇φ* - Π| {worst:.2e}"));
    assert!(ok);
}

#[test]
fn c03_quadratic_mdbd_is_the_projection_baseline() {
    let net = desk_instance();
    let quad = net.with_generator(GeneratorKind::Quadratic).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut field_gap = 0.0f64;
    for _ in 0..100 {
        let s = random_state(&net, &mut rng);
        let a = mdbd_field(&quad, &s).unwrap().ds;
        let b = projection_baseline_field(&net, &s, ProjectionMode::Fast).unwrap().ds;
        field_gap = field_gap.max(dist(a.as_slice(), b.as_slice()));
    }

    let cfg = euler(10.0, 500);
    let s0 = StackedState::zeros(net.dims());
    let ta = integrate(&quad, Algorithm::Mdbd, &s0, &cfg, None).unwrap();
    let tb = integrate(
        &net,
        Algorithm::Projection {
            projection_mode: ProjectionMode::Fast,
        },
        &s0,
        &cfg,
        None,
    )
    .unwrap();
    let mut traj_gap = dist(ta.final_state.as_slice(), tb.final_state.as_slice());
    for (ra, rb) in ta.records.iter().zip(&tb.records) {
        traj_gap = traj_gap.max(dist(ra.state.as_slice(), rb.state.as_slice()));
    }
    let ok = field_gap <= 1e-12 && traj_gap <= 1e-10 && ta.records.len() == tb.records.len();
    report(
        "C3 reduction to projection",
        ok,
        format!("field max gap {field_gap:.2e} on 100 states, trajectory max gap {traj_gap:.2e} over T = 10"),
    );
    assert!(ok);
}

#[test]
fn c04_convergence_on_the_desk_instance() {
    let _g = serial();
    let t0 = Instant::now();
    let net = desk_instance();
    let sp = reference(&net);
    let traj = integrate(&net, Algorithm::Mdbd, &StackedState::zeros(net.dims()), &euler(50.0, 1000), Some(&sp)).unwrap();
    let secs = t0.elapsed().as_secs_f64();
    let d = &traj.last().diagnostics;
    let x_err = d.x_error.unwrap();
    let [first, second] = traj.s_norm_halves;
    let ok = traj.status == RunStatus::Completed
        && d.eq_residual <= 1e-2
        && d.ineq_residual <= 1e-2
        && x_err <= 1e-2
        && second <= first
        && secs < 120.0;
    report(
        "C4 convergence",
        ok,
        format!(
            "seed 7, eq {:.2e}, ineq {:.2e}, ‖x - x★‖ {x_err:.2e}, max‖s‖ {first:.3} then {second:.3}, {secs:.2} s",
            d.eq_residual, d.ineq_residual
        ),
    );
    assert!(ok);
}

#[test]
fn c05_lyapunov_is_non_increasing() {
    let net = desk_instance();
    let sp = reference(&net);
    let cfg = euler(50.0, 1000);
    let traj = integrate(&net, Algorithm::Mdbd, &StackedState::zeros(net.dims()), &cfg, Some(&sp)).unwrap();
    let check = traj.lyapunov_check().unwrap();
    // Bregman form of the multiplier term, held to round-off.
    let strict = check_lyapunov_with(&traj.conjugate_lyapunov_values, cfg.step, 1e-6);
    let ok = check.passed() && strict.passed();
    report(
        "C5 Lyapunov monotonicity",
        ok,
        format!(
            "V1: {} violations at slack {:.2e}; conjugate form: max step increase {:.2e}, slack {:.0e}",
            check.violations, check.slack, strict.max_increase, strict.slack
        ),
    );
    assert!(ok);
}

#[test]
fn c06_ergodic_rate() {
    let net = desk_instance();
    let sp = reference(&net);
    let traj = integrate(&net, Algorithm::Mdbd, &StackedState::zeros(net.dims()), &euler(80.0, 1000), Some(&sp)).unwrap();
    let v0 = traj.lyapunov_values[0];
    let gap_at = |t: f64| {
        traj.records
            .iter()
            .find(|r| (r.t - t).abs() < 1e-9)
            .and_then(|r| r.diagnostics.gap)
            .unwrap()
    };

    let mut worst_bound = f64::NEG_INFINITY;
    for r in traj.records.iter().filter(|r| r.t >= 1.0 - 1e-9) {
        let gap = r.diagnostics.gap.unwrap();
        worst_bound = worst_bound.max(gap * r.t / (1.2 * v0));
    }
    let bound_ok = worst_bound <= 1.0;

    let mut ratios = Vec::new();
    for t in [5.0, 10.0, 20.0, 40.0] {
        ratios.push((t, gap_at(2.0 * t) / gap_at(t)));
    }
    let ratio_ok = ratios.iter().all(|(_, r)| *r <= 0.75);
    let listed: Vec<String> = ratios.iter().map(|(t, r)| format!("{t}→{}: {r:.3}", 2.0 * t)).collect();
    report(
        "C6 rate",
        bound_ok && ratio_ok,
        format!(
            "max t·gap / (1.2·V1(0)) = {worst_bound:.3} (bound {}), gap(2t)/gap(t) {} (limit 0.75)",
            if bound_ok { "holds" } else { "violated" },
            listed.join(", ")
        ),
    );
    assert!(bound_ok, "gap bound violated");
    assert!(ratio_ok, "gap(2t) ≤ 0.75·gap(t) does not hold: {listed:?}");
}

#[test]
fn c07_equilibria_are_saddle_points() {
    let mut forward = Vec::new();
    for net in [desk_instance(), two_agent_scalar(SCALAR_TARGETS).unwrap()] {
        let sp = reference(&net);
        let s = equilibrium_state(&net, &sp.z_star).unwrap();
        forward.push(mdbd_field(&net, &s).unwrap().ds.norm());
    }

    // Converse: every recorded state of a long scalar run whose field has
    // vanished must be a KKT point.
    let net = two_agent_scalar(SCALAR_TARGETS).unwrap();
    let cfg = IntegratorConfig {
        step: 1e-2,
        horizon: 200.0,
        record_every: 50,
        scheme: Scheme::RungeKutta4,
        ..Default::default()
    };
    let traj = integrate(&net, Algorithm::Mdbd, &StackedState::zeros(net.dims()), &cfg, None).unwrap();
    let settled: Vec<_> = traj.records.iter().filter(|r| r.diagnostics.field_norm <= 1e-8).collect();
    let worst_kkt = settled.iter().map(|r| r.diagnostics.kkt_residual).fold(0.0, f64::max);

    let ok = forward.iter().all(|f| *f <= 1e-8) && !settled.is_empty() && worst_kkt <= 1e-6;
    report(
        "C7 equilibrium/saddle",
        ok,
        format!(
            "field at s★: desk {:.2e}, scalar {:.2e}; {} settled states, max kkt {worst_kkt:.2e}",
            forward[0],
            forward[1],
            settled.len()
        ),
    );
    assert!(ok);
}

#[test]
fn c08_per_step_cost_ordering() {
    let _g = serial();
    let cfg = BenchConfig {
        warmup_steps: 2,
        repetitions: 5,
        min_sample_s: 0.05,
        per_step_only: true,
        ..BenchConfig::default()
    };
    let generic = Algorithm::Projection {
        projection_mode: ProjectionMode::GenericQp,
    };
    let mut mdbd = Vec::new();
    let mut qp = Vec::new();
    for n in [64, 256, 1024] {
        let net = bench_instance(&cfg, n).unwrap();
        mdbd.push((n, time_per_step(&net, Algorithm::Mdbd, &cfg).unwrap().seconds().unwrap()));
        qp.push((n, time_per_step(&net, generic, &cfg).unwrap().seconds().unwrap()));
    }
    let ratios: Vec<f64> = mdbd[1..].iter().zip(&qp[1..]).map(|(a, b)| a.1 / b.1).collect();
    let e_mdbd = fit_exponent(&mdbd).unwrap();
    let e_qp = fit_exponent(&qp).unwrap();
    let ok = ratios.iter().all(|r| *r <= 0.2) && e_mdbd <= 1.2 && e_qp >= 1.3;
    report(
        "C8 timing ordering",
        ok,
        format!(
            "MDBD/generic-QP per step {:.1e} at n=256, {:.1e} at n=1024; exponents MDBD {e_mdbd:.2}, generic-QP {e_qp:.2}",
            ratios[0], ratios[1]
        ),
    );
    assert!(ok);
}

#[test]
fn c09_scalar_instance_matches_hand_solution() {
    let [c1, c2] = SCALAR_TARGETS;
    let x1 = 0.5 * (1.0 + c1 - c2);
    let x = [x1, 1.0 - x1];
    let mu = -2.0 * (x1 - c1);

    let net = two_agent_scalar(SCALAR_TARGETS).unwrap();
    let sp = reference(&net);
    let err = |xs: &[f64], mus: &[f64]| {
        let ex = xs.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let em = mus.iter().map(|m| (m - mu).abs()).fold(0.0, f64::max);
        ex.max(em)
    };
    let oracle_err = err(sp.z_star.x(), sp.z_star.mu());

    let cfg = IntegratorConfig {
        step: 1e-2,
        horizon: 200.0,
        record_every: 20_000,
        scheme: Scheme::RungeKutta4,
        ..Default::default()
    };
    let traj = integrate(&net, Algorithm::Mdbd, &StackedState::zeros(net.dims()), &cfg, None).unwrap();
    let z = &traj.last().output;
    let flow_err = err(z.x(), z.mu());

    let ok = oracle_err <= 1e-6 && flow_err <= 1e-6;
    report(
        "C9 scalar regression",
        ok,
        format!("x★ = ({:.3}, {:.3}), μ★ = {mu:.3}; oracle error {oracle_err:.2e}, MDBD error {flow_err:.2e}", x[0], x[1]),
    );
    assert!(ok);
}

#[test]
fn c10_runs_are_byte_identical() {
    let mut cfg = ExperimentConfig::default();
    cfg.integrator.horizon = 5.0;
    cfg.oracle = Some(OracleConfig::default());
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    cmd_run(&cfg, a.path()).unwrap();
    cmd_run(&cfg, b.path()).unwrap();
    let mut differing = Vec::new();
    for file in [INSTANCE_FILE, TRAJECTORY_FILE, SUMMARY_FILE] {
        let x = std::fs::read(a.path().join(file)).unwrap();
        let y = std::fs::read(b.path().join(file)).unwrap();
        if x != y || x.is_empty() {
            differing.push(file);
        }
    }
    let ok = differing.is_empty();
    report(
        "C10 determinism",
        ok,
        if ok {
            format!("seed {}: instance, trajectory and summary identical", cfg.family.seed)
        } else {
            format!("differing: {differing:?}")
        },
    );
    assert!(ok);
}
