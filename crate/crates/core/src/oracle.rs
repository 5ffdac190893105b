//! Centralized reference solver and exhaustive mesh search.
//!
//! The reference path treats the network as one problem
//! `min Σ f_i(x_i)  s.t.  Σ g_i(x_i) ≤ 0,  Σ A_i x_i = Σ b_i,  x_i ∈ Ω_i`:
//! a projected primal-dual subgradient method with steps `a/(k+b)` finds
//! the active constraints, an active-set Newton iteration on the KKT
//! system polishes the point, and the shared multipliers are then
//! distributed over the agents (auxiliary variables solve Laplacian
//! systems). It uses only the problem oracles, never the dynamics.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::OutputState;
use crate::error::{Error, Result};
use crate::linalg::{norm, Matrix};
use crate::mirror::ConstraintSet;
use crate::problem::{Dims, LocalProblem, NetworkProblem};
use crate::saddle::{kkt_residual, Provenance, SaddlePoint};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    #[serde(default = "default_tol")]
    pub tol: f64,
    /// Iterations of the subgradient phase.
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_step_a")]
    pub step_a: f64,
    #[serde(default = "default_step_b")]
    pub step_b: f64,
    /// Instance seed, recorded in the provenance only.
    #[serde(default)]
    pub seed: Option<u64>,
}

fn default_tol() -> f64 {
    1e-7
}
fn default_max_iter() -> usize {
    20_000
}
fn default_step_a() -> f64 {
    0.5
}
fn default_step_b() -> f64 {
    10.0
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            tol: default_tol(),
            max_iter: default_max_iter(),
            step_a: default_step_a(),
            step_b: default_step_b(),
            seed: None,
        }
    }
}

const BOUND_TOL: f64 = 1e-7;
const NEWTON_TOL: f64 = 1e-13;
/// Half-width, in cells, of each zoomed mesh window. Nodes accepted by a
/// tolerance band can sit a few cells away from the constrained optimum.
const ZOOM_CELLS: f64 = 4.0;

/// Centralized primal-dual iterate.
#[derive(Clone, Debug)]
struct Central {
    x: Vec<f64>,
    /// Shared inequality multiplier `Λ` (length `p`).
    lam: Vec<f64>,
    /// Shared equality multiplier `M` (length `q`).
    mu: Vec<f64>,
}

fn subgradient_phase(net: &NetworkProblem, cfg: &OracleConfig) -> Result<Central> {
    let Dims { n_agents, n, p, q } = net.dims();
    let mut x: Vec<f64> = net.agents().iter().flat_map(|a| a.set().interior_point()).collect();
    let mut lam = vec![0.0; p];
    let mut mu = vec![0.0; q];
    let mut grad = vec![0.0; n];
    let mut step = vec![0.0; n];
    for k in 0..cfg.max_iter {
        let alpha = cfg.step_a / (k as f64 + cfg.step_b);
        for i in 0..n_agents {
            let a = net.agent(i);
            let xi = &x[i * n..(i + 1) * n];
            grad.copy_from_slice(&a.subgrad_cost(xi));
            a.ineq_subgradient_tr_acc(xi, &lam, &mut grad);
            a.eq_matrix().tr_mul_vec_acc(&mu, 1.0, &mut grad);
            for j in 0..n {
                step[j] = xi[j] - alpha * grad[j];
            }
            let proj = a.set().project(&step)?;
            x[i * n..(i + 1) * n].copy_from_slice(&proj);
        }
        let g = net.ineq_total(&x)?;
        let r = net.equality_residual(&x)?;
        for (l, gj) in lam.iter_mut().zip(&g) {
            *l = (*l + alpha * gj).max(0.0);
        }
        for (m, rj) in mu.iter_mut().zip(&r) {
            *m += alpha * rj;
        }
    }
    if !x.iter().chain(&lam).chain(&mu).all(|v| v.is_finite()) {
        return Err(Error::NonFinite("oracle subgradient phase"));
    }
    Ok(Central { x, lam, mu })
}

/// Which local bounds, ball constraints and coupled inequalities are
/// treated as equalities.
#[derive(Clone, Debug, PartialEq)]
struct ActiveSet {
    /// Per stacked coordinate: the bound value it is fixed at.
    fixed: Vec<Option<f64>>,
    ball: Vec<bool>,
    ineq: Vec<bool>,
}

fn initial_active_set(net: &NetworkProblem, c: &Central) -> Result<ActiveSet> {
    let Dims { n_agents, n, .. } = net.dims();
    let mut fixed = vec![None; n_agents * n];
    let mut ball = vec![false; n_agents];
    for i in 0..n_agents {
        let set = net.agent(i).set();
        for k in 0..n {
            let v = c.x[i * n + k];
            let (lo, hi) = set.coordinate_bounds(k);
            if lo == hi || v <= lo + BOUND_TOL {
                fixed[i * n + k] = Some(lo);
            } else if v >= hi - BOUND_TOL {
                fixed[i * n + k] = Some(hi);
            }
        }
        if let ConstraintSet::Ball { center, radius } = set {
            ball[i] = crate::linalg::dist(&c.x[i * n..(i + 1) * n], center) >= radius - BOUND_TOL;
        }
        if let ConstraintSet::UnitSimplex { .. } = set {
            // keep at least one coordinate free so the sum row stays independent
            if (0..n).all(|k| fixed[i * n + k].is_some()) {
                let best = (0..n)
                    .max_by(|&a, &b| c.x[i * n + a].total_cmp(&c.x[i * n + b]))
                    .unwrap_or(0);
                fixed[i * n + best] = None;
            }
        }
    }
    let g = net.ineq_total(&c.x)?;
    let ineq = g.iter().zip(&c.lam).map(|(gj, lj)| *lj > 1e-8 || *gj > -1e-6).collect();
    Ok(ActiveSet { fixed, ball, ineq })
}

/// Local equality rows of agent `i` (simplex sum, active ball).
fn local_rows(set: &ConstraintSet, ball_active: bool) -> usize {
    match set {
        ConstraintSet::UnitSimplex { .. } => 1,
        ConstraintSet::Ball { .. } => usize::from(ball_active),
        _ => 0,
    }
}

/// Local constraint values and gradients at `x`.
fn local_constraints(set: &ConstraintSet, ball_active: bool, x: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
    match set {
        ConstraintSet::UnitSimplex { .. } => (vec![x.iter().sum::<f64>() - 1.0], vec![vec![1.0; x.len()]]),
        ConstraintSet::Ball { center, radius } if ball_active => {
            let d: Vec<f64> = x.iter().zip(center).map(|(a, c)| a - c).collect();
            (
                vec![d.iter().map(|v| v * v).sum::<f64>() - radius * radius],
                vec![d.iter().map(|v| 2.0 * v).collect()],
            )
        }
        _ => (vec![], vec![]),
    }
}

/// Newton iterates may leave a one-signed coordinate range slightly; there
/// the `ℓ₁` term is continued linearly from the feasible side so the
/// gradient does not jump by `2w` when the sign flips.
fn one_sided_l1(a: &LocalProblem, x: &[f64], lam: &[f64], grad: &mut [f64]) {
    a.adjust_kinks(x, lam, grad);
    let w = a.l1_kink_weight(lam);
    if w <= 0.0 {
        return;
    }
    for (k, (g, &v)) in grad.iter_mut().zip(x).enumerate() {
        let (lo, hi) = a.set().coordinate_bounds(k);
        if lo >= 0.0 && v < 0.0 {
            *g += 2.0 * w;
        } else if hi <= 0.0 && v > 0.0 {
            *g -= 2.0 * w;
        }
    }
}

struct NewtonState {
    c: Central,
    /// Local multipliers per agent, `local_rows` entries each.
    tau: Vec<Vec<f64>>,
}

struct Polisher<'a> {
    net: &'a NetworkProblem,
    cost_hessians: Vec<Matrix>,
}

struct KktEval {
    /// Full Lagrangian gradient per stacked coordinate.
    grad: Vec<f64>,
    local: Vec<Vec<f64>>,
    coupled_ineq: Vec<f64>,
    coupled_eq: Vec<f64>,
}

impl<'a> Polisher<'a> {
    fn new(net: &'a NetworkProblem) -> Self {
        let cost_hessians = net.agents().iter().map(|a| a.cost().smooth_hessian()).collect();
        Polisher { net, cost_hessians }
    }

    fn evaluate(&self, st: &NewtonState, act: &ActiveSet) -> Result<KktEval> {
        let Dims { n_agents, n, .. } = self.net.dims();
        let x = &st.c.x;
        let mut grad = vec![0.0; n_agents * n];
        let mut local = Vec::with_capacity(n_agents);
        for i in 0..n_agents {
            let a = self.net.agent(i);
            let xi = &x[i * n..(i + 1) * n];
            let gi = &mut grad[i * n..(i + 1) * n];
            gi.copy_from_slice(&a.subgrad_cost(xi));
            a.ineq_subgradient_tr_acc(xi, &st.c.lam, gi);
            a.eq_matrix().tr_mul_vec_acc(&st.c.mu, 1.0, gi);
            let (vals, rows) = local_constraints(a.set(), act.ball[i], xi);
            for (t, row) in st.tau[i].iter().zip(&rows) {
                for (g, r) in gi.iter_mut().zip(row) {
                    *g += t * r;
                }
            }
            one_sided_l1(a, xi, &st.c.lam, gi);
            local.push(vals);
        }
        let g = self.net.ineq_total(x)?;
        let coupled_ineq = g
            .iter()
            .zip(&act.ineq)
            .filter(|(_, on)| **on)
            .map(|(v, _)| *v)
            .collect();
        Ok(KktEval {
            grad,
            local,
            coupled_ineq,
            coupled_eq: self.net.equality_residual(x)?,
        })
    }

    fn residual_norm(&self, ev: &KktEval, act: &ActiveSet) -> f64 {
        let free: f64 = ev
            .grad
            .iter()
            .zip(&act.fixed)
            .filter(|(_, f)| f.is_none())
            .map(|(g, _)| g * g)
            .sum();
        let local: f64 = ev.local.iter().flatten().map(|v| v * v).sum();
        let coupled: f64 = ev.coupled_ineq.iter().chain(&ev.coupled_eq).map(|v| v * v).sum();
        (free + local + coupled).sqrt()
    }

    /// One Newton step on the equality-constrained KKT system of `act`,
    /// eliminating agents blockwise and solving the coupled Schur system.
    fn newton_step(&self, st: &mut NewtonState, act: &ActiveSet, ev: &KktEval) -> Result<()> {
        let Dims { n_agents, n, p, q } = self.net.dims();
        let active_ineq: Vec<usize> = (0..p).filter(|&j| act.ineq[j]).collect();
        let m = active_ineq.len() + q;

        struct Block {
            free: Vec<usize>,
            /// `K⁻¹ Jᵀ` (block size × m).
            kinv_jt: DMatrix<f64>,
            /// `K⁻¹ R` for the block residual.
            kinv_r: DVector<f64>,
            rows: usize,
        }

        let mut blocks = Vec::with_capacity(n_agents);
        let mut schur = DMatrix::<f64>::zeros(m, m);
        let mut schur_rhs = DVector::<f64>::zeros(m);
        for (k, v) in ev.coupled_ineq.iter().chain(&ev.coupled_eq).enumerate() {
            schur_rhs[k] = *v;
        }

        for i in 0..n_agents {
            let a = self.net.agent(i);
            let xi = &st.c.x[i * n..(i + 1) * n];
            let free: Vec<usize> = (0..n).filter(|&k| act.fixed[i * n + k].is_none()).collect();
            let nf = free.len();
            let rows = local_rows(a.set(), act.ball[i]);
            let size = nf + rows;

            let mut h = self.cost_hessians[i].clone();
            for (j, comp) in a.ineq().iter().enumerate() {
                comp.smooth_hessian_acc(st.c.lam[j], &mut h);
            }
            if rows > 0 && matches!(a.set(), ConstraintSet::Ball { .. }) {
                for k in 0..n {
                    h.set(k, k, h.get(k, k) + 2.0 * st.tau[i][0]);
                }
            }
            let (_, lrows) = local_constraints(a.set(), act.ball[i], xi);

            let mut kmat = DMatrix::<f64>::zeros(size, size);
            for (u, &fu) in free.iter().enumerate() {
                for (v, &fv) in free.iter().enumerate() {
                    kmat[(u, v)] = h.get(fu, fv);
                }
                for (r, row) in lrows.iter().enumerate() {
                    kmat[(u, nf + r)] = row[fu];
                    kmat[(nf + r, u)] = row[fu];
                }
            }
            let mut rvec = DVector::<f64>::zeros(size);
            for (u, &fu) in free.iter().enumerate() {
                rvec[u] = ev.grad[i * n + fu];
            }
            for r in 0..rows {
                rvec[nf + r] = ev.local[i][r];
            }

            let jac_ineq = a.subgrad_ineq(xi);
            let mut jac = DMatrix::<f64>::zeros(m, size);
            for (r, &j) in active_ineq.iter().enumerate() {
                for (u, &fu) in free.iter().enumerate() {
                    jac[(r, u)] = jac_ineq.get(j, fu);
                }
            }
            for r in 0..q {
                for (u, &fu) in free.iter().enumerate() {
                    jac[(active_ineq.len() + r, u)] = a.eq_matrix().get(r, fu);
                }
            }

            let lu = kmat.lu();
            let kinv_r = lu
                .solve(&rvec)
                .ok_or_else(|| Error::InvalidProblem(format!("singular KKT block for agent {i}")))?;
            let kinv_jt = lu
                .solve(&jac.transpose())
                .ok_or_else(|| Error::InvalidProblem(format!("singular KKT block for agent {i}")))?;
            schur += &jac * &kinv_jt;
            schur_rhs -= &jac * &kinv_r;
            blocks.push(Block {
                free,
                kinv_jt,
                kinv_r,
                rows,
            });
        }

        // S w = R₂ - Σ J K⁻¹ R₁
        let w = if m == 0 {
            DVector::zeros(0)
        } else {
            match schur.clone().lu().solve(&schur_rhs) {
                Some(w) if w.iter().all(|v| v.is_finite()) => w,
                _ => schur
                    .svd(true, true)
                    .solve(&schur_rhs, 1e-12)
                    .map_err(|e| Error::InvalidProblem(format!("coupled KKT system: {e}")))?,
            }
        };

        for (i, b) in blocks.iter().enumerate() {
            // d = -K⁻¹R - K⁻¹Jᵀw
            let d = -(&b.kinv_r) - &b.kinv_jt * &w;
            let nf = b.free.len();
            for (u, &fu) in b.free.iter().enumerate() {
                st.c.x[i * n + fu] += d[u];
            }
            for r in 0..b.rows {
                st.tau[i][r] += d[nf + r];
            }
        }
        for (r, &j) in active_ineq.iter().enumerate() {
            st.c.lam[j] += w[r];
        }
        for r in 0..q {
            st.c.mu[r] += w[active_ineq.len() + r];
        }
        for (k, f) in act.fixed.iter().enumerate() {
            if let Some(v) = f {
                st.c.x[k] = *v;
            }
        }
        for (j, on) in act.ineq.iter().enumerate() {
            if !on {
                st.c.lam[j] = 0.0;
            }
        }
        Ok(())
    }

    /// Newton iterations for a fixed active set; returns the final residual.
    fn solve_equality(&self, st: &mut NewtonState, act: &ActiveSet) -> Result<f64> {
        let mut res = f64::INFINITY;
        for _ in 0..30 {
            let ev = self.evaluate(st, act)?;
            res = self.residual_norm(&ev, act);
            if res <= NEWTON_TOL {
                break;
            }
            self.newton_step(st, act, &ev)?;
        }
        let ev = self.evaluate(st, act)?;
        Ok(res.min(self.residual_norm(&ev, act)))
    }

    /// Adjusts the active set; returns whether anything changed.
    fn update_active_set(&self, st: &mut NewtonState, act: &mut ActiveSet) -> Result<bool> {
        let Dims { n_agents, n, p, .. } = self.net.dims();
        let ev = self.evaluate(st, act)?;
        let mut changed = false;

        // Free coordinates that left their bounds become fixed (worst per agent).
        for i in 0..n_agents {
            let set = self.net.agent(i).set();
            let mut worst: Option<(usize, f64, f64)> = None;
            for k in 0..n {
                let idx = i * n + k;
                if act.fixed[idx].is_some() {
                    continue;
                }
                let (lo, hi) = set.coordinate_bounds(k);
                let v = st.c.x[idx];
                let (viol, bound) = if v < lo { (lo - v, lo) } else if v > hi { (v - hi, hi) } else { (0.0, 0.0) };
                if viol > 1e-12 && worst.map_or(true, |w| viol > w.1) {
                    worst = Some((idx, viol, bound));
                }
            }
            if let Some((idx, _, bound)) = worst {
                act.fixed[idx] = Some(bound);
                st.c.x[idx] = bound;
                changed = true;
            }
        }
        if changed {
            return Ok(true);
        }

        // Fixed coordinates whose multiplier has the wrong sign are released.
        let mut worst: Option<(usize, f64)> = None;
        for i in 0..n_agents {
            let set = self.net.agent(i).set();
            for k in 0..n {
                let idx = i * n + k;
                let Some(v) = act.fixed[idx] else { continue };
                let (lo, hi) = set.coordinate_bounds(k);
                if lo == hi {
                    continue;
                }
                // ∇ℓ_k = ν_k at a lower bound, -ν_k at an upper one, ν_k ≥ 0.
                let nu = if v == lo { ev.grad[idx] } else { -ev.grad[idx] };
                if nu < -1e-10 && worst.map_or(true, |w| nu < w.1) {
                    worst = Some((idx, nu));
                }
            }
        }
        if let Some((idx, _)) = worst {
            act.fixed[idx] = None;
            changed = true;
        }

        for i in 0..n_agents {
            if let ConstraintSet::Ball { center, radius } = self.net.agent(i).set() {
                let xi = &st.c.x[i * n..(i + 1) * n];
                if act.ball[i] && st.tau[i][0] < -1e-10 {
                    act.ball[i] = false;
                    st.tau[i].clear();
                    changed = true;
                } else if !act.ball[i] && crate::linalg::dist(xi, center) > radius + 1e-12 {
                    act.ball[i] = true;
                    st.tau[i] = vec![0.0];
                    changed = true;
                }
            }
        }

        let g = self.net.ineq_total(&st.c.x)?;
        for j in 0..p {
            if act.ineq[j] && st.c.lam[j] < -1e-12 {
                act.ineq[j] = false;
                st.c.lam[j] = 0.0;
                changed = true;
            } else if !act.ineq[j] && g[j] > 1e-12 {
                act.ineq[j] = true;
                changed = true;
            }
        }
        Ok(changed)
    }
}

/// Mean-zero solution of `L v = t` for each of `width` coordinates
/// (`t` must sum to zero over agents), via `(L + 11ᵀ/N) v = t`.
fn laplacian_solve(net: &NetworkProblem, t: &[f64], width: usize) -> Result<Vec<f64>> {
    let nn = net.n_agents();
    let mut m = net.graph().laplacian().to_nalgebra();
    m.add_scalar_mut(1.0 / nn as f64);
    let lu = m.lu();
    let mut out = vec![0.0; nn * width];
    for c in 0..width {
        let rhs = DVector::from_iterator(nn, (0..nn).map(|i| t[i * width + c]));
        let sol = lu
            .solve(&rhs)
            .ok_or_else(|| Error::InvalidProblem("Laplacian system is singular".into()))?;
        for i in 0..nn {
            out[i * width + c] = sol[i];
        }
    }
    Ok(out)
}

/// Spreads a centralized primal-dual point over the agents.
fn distribute(net: &NetworkProblem, c: &Central) -> Result<OutputState> {
    let Dims { n_agents, n, p, q } = net.dims();
    let lambda: Vec<f64> = (0..n_agents).flat_map(|_| c.lam.iter().copied()).collect();
    let mu: Vec<f64> = (0..n_agents).flat_map(|_| c.mu.iter().copied()).collect();

    let mut g_each = vec![0.0; n_agents * p];
    let mut r_each = vec![0.0; n_agents * q];
    for i in 0..n_agents {
        let a = net.agent(i);
        let xi = &c.x[i * n..(i + 1) * n];
        a.ineq_values_into(xi, &mut g_each[i * p..(i + 1) * p]);
        a.eq_residual_into(xi, &mut r_each[i * q..(i + 1) * q]);
    }
    let center = |v: &mut [f64], width: usize| {
        for col in 0..width {
            let mean = (0..n_agents).map(|i| v[i * width + col]).sum::<f64>() / n_agents as f64;
            for i in 0..n_agents {
                v[i * width + col] -= mean;
            }
        }
    };
    // (Lω)_i = g_i - mean(g): exact when the constraint is active, and
    // leaves the slack -mean(g) ≥ 0 in F_λ when it is not.
    center(&mut g_each, p);
    center(&mut r_each, q);
    let omega = laplacian_solve(net, &g_each, p)?;
    let nu = laplacian_solve(net, &r_each, q)?;
    OutputState::from_blocks(net.dims(), &c.x, &lambda, &mu, &omega, &nu)
}

/// Reference saddle point with `kkt_residual ≤ cfg.tol`.
pub fn solve_reference(net: &NetworkProblem, cfg: &OracleConfig) -> Result<SaddlePoint> {
    if !(cfg.tol > 0.0) || !(cfg.step_a > 0.0) || !(cfg.step_b > 0.0) {
        return Err(Error::config("oracle", "tol, step_a and step_b must be positive"));
    }
    let start = subgradient_phase(net, cfg)?;
    let polisher = Polisher::new(net);
    let mut act = initial_active_set(net, &start)?;
    let tau = (0..net.n_agents())
        .map(|i| vec![0.0; local_rows(net.agent(i).set(), act.ball[i])])
        .collect();
    let mut st = NewtonState { c: start.clone(), tau };
    for (k, f) in act.fixed.iter().enumerate() {
        if let Some(v) = f {
            st.c.x[k] = *v;
        }
    }

    let mut best: Option<(f64, OutputState)> = None;
    let mut rounds = 0;
    for _ in 0..(4 * net.primal_len() + 20) {
        rounds += 1;
        if polisher.solve_equality(&mut st, &act).is_err() {
            break;
        }
        let changed = polisher.update_active_set(&mut st, &mut act)?;
        if changed {
            continue;
        }
        let z = distribute(net, &st.c)?;
        match kkt_residual(net, &z) {
            Ok(r) => {
                if best.as_ref().map_or(true, |b| r < b.0) {
                    best = Some((r, z));
                }
            }
            Err(_) => continue,
        }
        break;
    }

    // Fall back to the subgradient iterate when polishing failed.
    if best.is_none() {
        let z = distribute(net, &start)?;
        if let Ok(r) = kkt_residual(net, &z) {
            best = Some((r, z));
        }
    }
    let (residual, z) = best.ok_or(Error::OracleNonConvergence {
        tol: cfg.tol,
        best_residual: f64::INFINITY,
    })?;
    if !(residual <= cfg.tol) {
        return Err(Error::OracleNonConvergence {
            tol: cfg.tol,
            best_residual: residual,
        });
    }
    SaddlePoint::new(
        net,
        z,
        Provenance {
            method: "centralized projected primal-dual subgradient + active-set Newton polish".into(),
            tolerance: cfg.tol,
            kkt_residual: residual,
            seed: cfg.seed,
            step_a: Some(cfg.step_a),
            step_b: Some(cfg.step_b),
            iterations: cfg.max_iter + rounds,
        },
    )
}

/// Parameterization of a product of sets by its free coordinates `θ`.
/// The map `θ ↦ x` is affine; [`MeshDomain::point`] also checks membership.
struct MeshDomain<'a> {
    sets: Vec<&'a ConstraintSet>,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl<'a> MeshDomain<'a> {
    fn new(sets: Vec<&'a ConstraintSet>) -> Result<Self> {
        let mut lower = Vec::new();
        let mut upper = Vec::new();
        for set in &sets {
            match set {
                ConstraintSet::UnitSimplex { dim } => {
                    for _ in 1..*dim {
                        lower.push(0.0);
                        upper.push(1.0);
                    }
                }
                ConstraintSet::Box { lower: l, upper: u } => {
                    for (a, b) in l.iter().zip(u) {
                        if a < b {
                            lower.push(*a);
                            upper.push(*b);
                        }
                    }
                }
                ConstraintSet::Ball { center, radius } => {
                    for c in center {
                        lower.push(c - radius);
                        upper.push(c + radius);
                    }
                }
                ConstraintSet::NonnegativeOrthant { .. } => {
                    return Err(Error::Unsupported("mesh search needs bounded sets".into()))
                }
            }
        }
        if lower.len() > 3 {
            return Err(Error::MeshTooLarge(lower.len()));
        }
        Ok(MeshDomain { sets, lower, upper })
    }

    fn free_dims(&self) -> usize {
        self.lower.len()
    }

    /// Affine image of `theta`, without membership checks.
    fn affine_point(&self, theta: &[f64], out: &mut Vec<f64>) {
        out.clear();
        let mut t = 0;
        for set in &self.sets {
            match set {
                ConstraintSet::UnitSimplex { dim } => {
                    let head = &theta[t..t + dim - 1];
                    out.extend_from_slice(head);
                    out.push(1.0 - head.iter().sum::<f64>());
                    t += dim - 1;
                }
                ConstraintSet::Box { lower, upper } => {
                    for (a, b) in lower.iter().zip(upper) {
                        if a < b {
                            out.push(theta[t]);
                            t += 1;
                        } else {
                            out.push(*a);
                        }
                    }
                }
                ConstraintSet::Ball { center, .. } => {
                    out.extend_from_slice(&theta[t..t + center.len()]);
                    t += center.len();
                }
                ConstraintSet::NonnegativeOrthant { .. } => unreachable!("rejected in new"),
            }
        }
    }

    /// Point for `theta`, or `false` when it lies outside the sets.
    fn point(&self, theta: &[f64], out: &mut Vec<f64>) -> bool {
        if theta
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .any(|(v, (l, u))| *v < l - 1e-12 || *v > u + 1e-12)
        {
            return false;
        }
        self.affine_point(theta, out);
        let mut offset = 0;
        for set in &self.sets {
            let x = &mut out[offset..offset + set.dim()];
            offset += set.dim();
            match set {
                ConstraintSet::UnitSimplex { .. } => {
                    let last = x.len() - 1;
                    if x[last] < -1e-12 {
                        return false;
                    }
                    x[last] = x[last].max(0.0);
                }
                ConstraintSet::Ball { center, radius } => {
                    if crate::linalg::dist(x, center) > radius + 1e-12 {
                        return false;
                    }
                }
                _ => {}
            }
        }
        true
    }
}

/// Affine slice `θ = base + basis·φ` of the free coordinates.
struct Slice {
    base: Vec<f64>,
    /// `d × k`, orthonormal columns.
    basis: DMatrix<f64>,
}

impl Slice {
    fn full(d: usize, lower: &[f64]) -> Self {
        Slice {
            base: lower.to_vec(),
            basis: DMatrix::identity(d, d),
        }
    }

    fn theta(&self, phi: &[f64], out: &mut [f64]) {
        for (a, o) in out.iter_mut().enumerate() {
            *o = self.base[a] + (0..phi.len()).map(|j| self.basis[(a, j)] * phi[j]).sum::<f64>();
        }
    }

    /// Range of `φ` covering the box `[lower, upper]` of `θ`.
    fn bounds(&self, lower: &[f64], upper: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let k = self.basis.ncols();
        let mut lo = vec![0.0; k];
        let mut hi = vec![0.0; k];
        for j in 0..k {
            for a in 0..lower.len() {
                let z = self.basis[(a, j)];
                let p = z * (lower[a] - self.base[a]);
                let q = z * (upper[a] - self.base[a]);
                lo[j] += p.min(q);
                hi[j] += p.max(q);
            }
        }
        (lo, hi)
    }
}

fn mesh_core<F>(domain: &MeshDomain, slice: &Slice, resolution: usize, levels: usize, mut objective: F) -> Result<Vec<f64>>
where
    F: FnMut(&[f64], f64) -> Option<f64>,
{
    if resolution == 0 || levels == 0 {
        return Err(Error::config("mesh", "resolution and levels must be positive"));
    }
    let d = domain.free_dims();
    let k = slice.basis.ncols();
    let (mut lo, mut hi) = slice.bounds(&domain.lower, &domain.upper);
    let (base_lo, base_hi) = (lo.clone(), hi.clone());
    let mut best: Option<(f64, Vec<f64>, Vec<f64>)> = None;
    let mut phi = vec![0.0; k];
    let mut theta = vec![0.0; d];
    let mut x = Vec::new();

    for _ in 0..levels {
        let spans: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| (b - a) / resolution as f64).collect();
        let cell = spans.iter().copied().fold(0.0, f64::max);
        let nodes = (resolution + 1).pow(k as u32);
        let mut level_best: Option<(f64, Vec<f64>, Vec<f64>)> = None;
        for idx in 0..nodes {
            let mut rest = idx;
            for a in 0..k {
                let c = rest % (resolution + 1);
                rest /= resolution + 1;
                phi[a] = if c == resolution { hi[a] } else { lo[a] + c as f64 * spans[a] };
            }
            slice.theta(&phi, &mut theta);
            if !domain.point(&theta, &mut x) {
                continue;
            }
            if let Some(v) = objective(&x, cell) {
                if v.is_finite() && level_best.as_ref().map_or(true, |b| v < b.0) {
                    level_best = Some((v, phi.clone(), x.clone()));
                }
            }
        }
        let Some(lb) = level_best else {
            if best.is_some() {
                break;
            }
            return Err(Error::NoFeasibleNode);
        };
        for a in 0..k {
            let w = ZOOM_CELLS * spans[a];
            lo[a] = (lb.1[a] - w).max(base_lo[a]);
            hi[a] = (lb.1[a] + w).min(base_hi[a]);
        }
        best = Some(lb);
        if k == 0 {
            break;
        }
    }
    Ok(best.map(|b| b.2).expect("set above"))
}

/// Exhaustive minimization over a grid of `resolution + 1` points per free
/// axis of the product of `sets`, refined `levels - 1` times by zooming to
/// a few cells around the incumbent. `objective(x, cell)` returns `None`
/// at nodes that violate coupled constraints; `cell` is the current spacing.
pub fn mesh_minimize<F>(sets: &[&ConstraintSet], resolution: usize, levels: usize, objective: F) -> Result<Vec<f64>>
where
    F: FnMut(&[f64], f64) -> Option<f64>,
{
    let domain = MeshDomain::new(sets.to_vec())?;
    let slice = Slice::full(domain.free_dims(), &domain.lower);
    mesh_core(&domain, &slice, resolution, levels, objective)
}

/// Mesh minimizer of the total cost subject to the coupled constraints.
/// The coupled equality is affine in the free coordinates, so the mesh
/// lives on its solution slice and holds it exactly; the inequality is
/// checked per node.
pub fn mesh_search(net: &NetworkProblem, resolution: usize) -> Result<Vec<f64>> {
    mesh_search_refined(net, resolution, 1)
}

/// [`mesh_search`] with `levels - 1` zoom refinements.
pub fn mesh_search_refined(net: &NetworkProblem, resolution: usize, levels: usize) -> Result<Vec<f64>> {
    let sets: Vec<&ConstraintSet> = net.agents().iter().map(|a| a.set()).collect();
    let domain = MeshDomain::new(sets)?;
    let d = domain.free_dims();
    let q = net.dims().q;

    let slice = if q == 0 {
        Slice::full(d, &domain.lower)
    } else {
        // r(θ) = R θ - s with columns R_j = r(e_j) - r(0).
        let mut x = Vec::new();
        let zero = vec![0.0; d];
        domain.affine_point(&zero, &mut x);
        let r0 = net.equality_residual(&x)?;
        let mut rmat = DMatrix::<f64>::zeros(q, d);
        let mut e = vec![0.0; d];
        for j in 0..d {
            e.fill(0.0);
            e[j] = 1.0;
            domain.affine_point(&e, &mut x);
            let rj = net.equality_residual(&x)?;
            for r in 0..q {
                rmat[(r, j)] = rj[r] - r0[r];
            }
        }
        let rhs = DVector::from_iterator(q, r0.iter().map(|v| -v));
        let svd = rmat.clone().svd(true, true);
        let tol = 1e-12 * svd.singular_values.iter().copied().fold(1.0, f64::max);
        let base = svd
            .solve(&rhs, tol)
            .map_err(|e| Error::InvalidProblem(format!("coupled equality: {e}")))?;
        if norm((&rmat * &base - &rhs).as_slice()) > 1e-9 {
            return Err(Error::NoFeasibleNode);
        }
        // Null space: unit eigenvectors of the projector I - R⁺R.
        let pinv = svd
            .pseudo_inverse(tol)
            .map_err(|e| Error::InvalidProblem(format!("coupled equality: {e}")))?;
        let projector = DMatrix::<f64>::identity(d, d) - &pinv * &rmat;
        let eig = projector.symmetric_eigen();
        let keep: Vec<usize> = (0..d).filter(|&j| eig.eigenvalues[j] > 0.5).collect();
        let mut basis = DMatrix::<f64>::zeros(d, keep.len());
        for (c, &j) in keep.iter().enumerate() {
            basis.set_column(c, &eig.eigenvectors.column(j));
        }
        Slice {
            base: base.as_slice().to_vec(),
            basis,
        }
    };

    mesh_core(&domain, &slice, resolution, levels, |x, _| {
        let g = net.ineq_total(x).ok()?;
        if g.iter().any(|v| *v > 0.0) {
            return None;
        }
        net.total_cost(x).ok()
    })
}

/// Centralized primal point `x★` error of a stacked vector.
pub fn primal_error(reference: &SaddlePoint, x: &[f64]) -> f64 {
    let d: Vec<f64> = x.iter().zip(reference.x_star()).map(|(a, b)| a - b).collect();
    norm(&d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;
    use crate::linalg::max_abs_diff;
    use crate::mirror::{GeneratingFunction, GeneratorKind};
    use crate::problem::{generate_instance, two_agent_scalar, Cost, FamilyConfig, LocalProblem, Weight};

    #[test]
    fn scalar_instance_matches_symbolic_solution() {
        let c = [0.8, 0.6];
        let net = two_agent_scalar(c).unwrap();
        let sp = solve_reference(&net, &OracleConfig::default()).unwrap();
        let x1 = 0.5 * (1.0 + c[0] - c[1]);
        assert!(max_abs_diff(sp.x_star(), &[x1, 1.0 - x1]) < 1e-8);
        let mu = -2.0 * (x1 - c[0]);
        assert!(max_abs_diff(sp.z_star.mu(), &[mu, mu]) < 1e-8);
        assert!(sp.provenance.kkt_residual < 1e-10);
    }

    #[test]
    fn scalar_instance_with_active_bound() {
        // c₁ - c₂ > 1 pushes x₁ to the upper bound 1 and x₂ to 0.
        let net = two_agent_scalar([1.9, -0.4]).unwrap();
        let sp = solve_reference(&net, &OracleConfig::default()).unwrap();
        assert!(max_abs_diff(sp.x_star(), &[1.0, 0.0]) < 1e-8);
        let mesh = mesh_search_refined(&net, 200, 4).unwrap();
        assert!(max_abs_diff(&mesh, sp.x_star()) < 1e-4);
    }

    #[test]
    fn default_family_reaches_tolerance() {
        let inst = generate_instance(&FamilyConfig::default()).unwrap();
        let sp = solve_reference(&inst.problem, &OracleConfig::default()).unwrap();
        assert!(sp.provenance.kkt_residual <= 1e-7);
        assert!(sp.z_star.lambda().iter().all(|v| *v >= 0.0));
        assert!(inst.problem.local_violation(sp.x_star()).unwrap() <= 1e-12);
    }

    #[test]
    fn tiny_simplex_instance_agrees_with_mesh() {
        let cfg = FamilyConfig {
            n_agents: 2,
            dim: 2,
            eq_rows: 1,
            seed: 3,
            ..FamilyConfig::default()
        };
        let inst = generate_instance(&cfg).unwrap();
        let sp = solve_reference(&inst.problem, &OracleConfig::default()).unwrap();
        let mesh = mesh_search_refined(&inst.problem, 100, 6).unwrap();
        assert!(max_abs_diff(&mesh, sp.x_star()) < 1e-4, "{mesh:?} vs {:?}", sp.x_star());
    }

    #[test]
    fn mesh_finds_interior_minimizer_within_a_cell() {
        let agent = LocalProblem::new(
            Cost {
                weight: Weight::Diagonal { diag: vec![1.0, 1.0] },
                target: vec![0.3, -0.2],
                l1: 0.0,
            },
            vec![],
            Matrix::zeros(0, 2),
            vec![],
            GeneratingFunction::new(
                GeneratorKind::Quadratic,
                ConstraintSet::Box {
                    lower: vec![-1.0, -1.0],
                    upper: vec![1.0, 1.0],
                },
            )
            .unwrap(),
        )
        .unwrap();
        let net = NetworkProblem::new(vec![agent], Graph::cycle(1).unwrap()).unwrap();
        let x = mesh_search(&net, 40).unwrap();
        assert!(max_abs_diff(&x, &[0.3, -0.2]) <= 2.0 / 40.0);
    }

    #[test]
    fn infeasible_mesh_is_reported() {
        let set = ConstraintSet::UnitSimplex { dim: 2 };
        let r = mesh_minimize(&[&set], 10, 1, |_, _| None);
        assert!(matches!(r, Err(Error::NoFeasibleNode)));
        assert!(Error::NoFeasibleNode.to_string().starts_with("NO_FEASIBLE_NODE"));
    }

    #[test]
    fn mesh_rejects_large_dimension() {
        let set = ConstraintSet::UnitSimplex { dim: 3 };
        let r = mesh_minimize(&[&set, &set], 10, 1, |_, _| Some(0.0));
        assert!(matches!(r, Err(Error::MeshTooLarge(4))));
    }

    #[test]
    fn simplex_mesh_has_one_free_coordinate_per_agent() {
        let set = ConstraintSet::UnitSimplex { dim: 2 };
        let mut count = 0;
        mesh_minimize(&[&set, &set], 10, 1, |x, _| {
            count += 1;
            assert!((x[0] + x[1] - 1.0).abs() < 1e-12 && (x[2] + x[3] - 1.0).abs() < 1e-12);
            Some(0.0)
        })
        .unwrap();
        assert_eq!(count, 121);
    }
}
