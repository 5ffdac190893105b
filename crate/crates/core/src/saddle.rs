//! Lagrangian of the coupled problem, its monotone operator `F`, and
//! residuals that certify saddle points.
//!
//! ```text
//! L(z) = Σ f_i(x_i) + Σ λ_iᵀ(g_i(x_i) - (Lω)_i) + Σ μ_iᵀ(A_i x_i - b_i - (Lν)_i)
//! F(z) = ( ∂f_i + ∂g_iᵀλ_i + A_iᵀμ_i,  -g_i + (Lω)_i,  -A_i x_i + b_i + (Lν)_i,  -(Lλ)_i,  -(Lμ)_i )
//! ```

use serde::{Deserialize, Serialize};

use crate::dynamics::{Layout, OutputState, StackedState};
use crate::error::{Error, Result};
use crate::linalg::norm;
use crate::mirror::{euclidean_project, DOMAIN_TOL};
use crate::problem::NetworkProblem;

fn check(net: &NetworkProblem, z: &OutputState) -> Result<()> {
    if z.dims() != net.dims() {
        return Err(Error::dim(
            "output state",
            Layout::new(net.dims()).len(),
            z.as_slice().len(),
        ));
    }
    Ok(())
}

/// `L(x, λ, μ, ω, ν)`.
pub fn lagrangian(net: &NetworkProblem, z: &OutputState) -> Result<f64> {
    check(net, z)?;
    let d = net.dims();
    let lw = net.graph().laplacian_apply(z.omega(), d.p)?;
    let lv = net.graph().laplacian_apply(z.nu(), d.q)?;
    let mut total = 0.0;
    let mut r = vec![0.0; d.q];
    for (i, a) in net.agents().iter().enumerate() {
        let x = &z.x()[i * d.n..(i + 1) * d.n];
        total += a.eval_cost(x);
        let g = a.eval_ineq(x);
        for k in 0..d.p {
            total += z.lambda()[i * d.p + k] * (g[k] - lw[i * d.p + k]);
        }
        a.eq_residual_into(x, &mut r);
        for k in 0..d.q {
            total += z.mu()[i * d.q + k] * (r[k] - lv[i * d.q + k]);
        }
    }
    Ok(total)
}

/// One selection of `F(z)`, laid out like the state.
pub fn f_eval(net: &NetworkProblem, z: &OutputState) -> Result<Vec<f64>> {
    check(net, z)?;
    let d = net.dims();
    let l = Layout::new(d);
    let graph = net.graph();
    let mut out = vec![0.0; l.len()];

    let lw = graph.laplacian_apply(z.omega(), d.p)?;
    let lv = graph.laplacian_apply(z.nu(), d.q)?;
    for (i, a) in net.agents().iter().enumerate() {
        let x = &z.x()[i * d.n..(i + 1) * d.n];
        let lam = &z.lambda()[i * d.p..(i + 1) * d.p];
        let mu = &z.mu()[i * d.q..(i + 1) * d.q];

        let mut fx = a.subgrad_cost(x);
        let jac = a.subgrad_ineq(x);
        for (k, &lk) in lam.iter().enumerate() {
            for (f, j) in fx.iter_mut().zip(jac.row(k)) {
                *f += lk * j;
            }
        }
        a.eq_matrix().tr_mul_vec_acc(mu, 1.0, &mut fx);
        out[l.primal()][i * d.n..(i + 1) * d.n].copy_from_slice(&fx);

        let g = a.eval_ineq(x);
        for k in 0..d.p {
            out[l.ineq()][i * d.p + k] = -g[k] + lw[i * d.p + k];
        }
        let mut r = vec![0.0; d.q];
        a.eq_residual_into(x, &mut r);
        for k in 0..d.q {
            out[l.mu()][i * d.q + k] = -r[k] + lv[i * d.q + k];
        }
    }
    let ll = graph.laplacian_apply(z.lambda(), d.p)?;
    let lm = graph.laplacian_apply(z.mu(), d.q)?;
    for (o, v) in out[l.omega()].iter_mut().zip(&ll) {
        *o = -v;
    }
    for (o, v) in out[l.nu()].iter_mut().zip(&lm) {
        *o = -v;
    }
    Ok(out)
}

/// [`f_eval`] with the `ℓ₁` kinks resolved against the local sets (see
/// [`LocalProblem::adjust_kinks`](crate::problem::LocalProblem::adjust_kinks)).
/// Agrees with `f_eval` wherever no coordinate of `x` is exactly zero.
pub fn f_eval_kink_aware(net: &NetworkProblem, z: &OutputState) -> Result<Vec<f64>> {
    let mut f = f_eval(net, z)?;
    let d = net.dims();
    let l = Layout::new(d);
    let fx = &mut f[l.primal()];
    for (i, a) in net.agents().iter().enumerate() {
        a.adjust_kinks(
            &z.x()[i * d.n..(i + 1) * d.n],
            &z.lambda()[i * d.p..(i + 1) * d.p],
            &mut fx[i * d.n..(i + 1) * d.n],
        );
    }
    Ok(f)
}

/// Rejects points outside `Θ = Π Ω_i × R₊^{Np} × R^{...}`.
pub fn check_feasible(net: &NetworkProblem, z: &OutputState) -> Result<()> {
    check(net, z)?;
    let local = net.local_violation(z.x())?;
    let neg = z.lambda().iter().map(|v| -v).fold(0.0, f64::max);
    let violation = local.max(neg);
    if !(violation <= DOMAIN_TOL) {
        return Err(Error::DomainViolation { violation });
    }
    Ok(())
}

/// Natural-map residual of `-F(z) ∈ N_Θ(z)`:
/// `‖x - P_Ω(x - F_x)‖`, `‖λ - [λ - F_λ]⁺‖`, `‖F‖` on the free blocks,
/// combined in the Euclidean norm.
pub fn kkt_residual(net: &NetworkProblem, z: &OutputState) -> Result<f64> {
    let parts = kkt_residual_parts(net, z)?;
    Ok(norm(&parts))
}

/// The five block residuals `[x, λ, μ, ω, ν]` behind [`kkt_residual`].
pub fn kkt_residual_parts(net: &NetworkProblem, z: &OutputState) -> Result<[f64; 5]> {
    check_feasible(net, z)?;
    let d = net.dims();
    let l = Layout::new(d);
    let f = f_eval_kink_aware(net, z)?;
    let fx = &f[l.primal()];

    let mut rx = 0.0;
    for (i, a) in net.agents().iter().enumerate() {
        let x = &z.x()[i * d.n..(i + 1) * d.n];
        let step: Vec<f64> = x.iter().zip(&fx[i * d.n..(i + 1) * d.n]).map(|(a, b)| a - b).collect();
        let p = euclidean_project(a.set(), &step)?;
        rx += x.iter().zip(&p).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    let rl: f64 = z
        .lambda()
        .iter()
        .zip(&f[l.ineq()])
        .map(|(lam, fl)| {
            let r = lam - (lam - fl).max(0.0);
            r * r
        })
        .sum();
    Ok([
        rx.sqrt(),
        rl.sqrt(),
        norm(&f[l.mu()]),
        norm(&f[l.omega()]),
        norm(&f[l.nu()]),
    ])
}

/// `s = -F(z) + ∇Φ(z)` with `∇Φ(z) = (∇φ_i(x_i), λ, μ, ω, ν)`, using the
/// generating functions stored in `net`.
pub fn equilibrium_state(net: &NetworkProblem, z: &OutputState) -> Result<StackedState> {
    check(net, z)?;
    let d = net.dims();
    let f = f_eval_kink_aware(net, z)?;
    let mut s = StackedState::from_vec(d, f.iter().map(|v| -v).collect())?;
    let mut grad = vec![0.0; d.n];
    for (i, a) in net.agents().iter().enumerate() {
        a.generator().gradient_into(&z.x()[i * d.n..(i + 1) * d.n], &mut grad);
        for (y, g) in s.y_mut()[i * d.n..(i + 1) * d.n].iter_mut().zip(&grad) {
            *y += g;
        }
    }
    let l = Layout::new(d);
    let zs = z.as_slice();
    for k in l.primal().end..l.len() {
        s.as_mut_slice()[k] += zs[k];
    }
    Ok(s)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub method: String,
    pub tolerance: f64,
    pub kkt_residual: f64,
    pub seed: Option<u64>,
    /// Diminishing step `a / (k + b)` of the subgradient phase.
    pub step_a: Option<f64>,
    pub step_b: Option<f64>,
    pub iterations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaddlePoint {
    pub z_star: OutputState,
    pub s_star: StackedState,
    pub optimal_value: f64,
    pub provenance: Provenance,
}

impl SaddlePoint {
    /// Builds the pair `(z★, s★)` for the generating functions of `net`.
    pub fn new(net: &NetworkProblem, z_star: OutputState, provenance: Provenance) -> Result<Self> {
        let s_star = equilibrium_state(net, &z_star)?;
        let optimal_value = net.total_cost(z_star.x())?;
        Ok(SaddlePoint {
            z_star,
            s_star,
            optimal_value,
            provenance,
        })
    }

    /// Same `z★`, with `s★` recomputed for another generator choice.
    pub fn for_problem(&self, net: &NetworkProblem) -> Result<Self> {
        SaddlePoint::new(net, self.z_star.clone(), self.provenance.clone())
    }

    pub fn x_star(&self) -> &[f64] {
        self.z_star.x()
    }
}

/// `V₁(s) = Σ D_{φ_i*}(y_i, y★_i) + ½‖γ-γ★‖² + ½‖μ-μ★‖² + ½‖ω-ω★‖² + ½‖ν-ν★‖²`,
/// with the conjugate divergence written as `φ(x★) - φ(x) - (x★ - x)ᵀy`.
/// `z` must be the output of `s`.
pub fn lyapunov(net: &NetworkProblem, reference: &SaddlePoint, s: &StackedState, z: &OutputState) -> f64 {
    let d = net.dims();
    let mut v = 0.0;
    for (i, a) in net.agents().iter().enumerate() {
        let r = i * d.n..(i + 1) * d.n;
        let xs = &reference.z_star.x()[r.clone()];
        let x = &z.x()[r.clone()];
        let y = &s.y()[r];
        let phi = a.generator();
        let cross: f64 = xs.iter().zip(x).zip(y).map(|((a, b), c)| (a - b) * c).sum();
        v += phi.value(xs) - phi.value(x) - cross;
    }
    let l = Layout::new(d);
    let rs = reference.s_star.as_slice();
    let ss = s.as_slice();
    v += 0.5
        * (l.ineq().start..l.len())
            .map(|k| (ss[k] - rs[k]) * (ss[k] - rs[k]))
            .sum::<f64>();
    v
}

/// Same as [`lyapunov`] except the multiplier term, which is the Bregman
/// divergence of `½‖[γ]⁺‖²` instead of `½‖γ − γ★‖²`. Its time derivative
/// pairs `λ − λ★` with `γ̇`, which is what the decrease argument needs; the
/// plain quadratic term can grow while `γ` is negative.
pub fn lyapunov_conjugate(net: &NetworkProblem, reference: &SaddlePoint, s: &StackedState, z: &OutputState) -> f64 {
    let l = Layout::new(net.dims());
    let ss = s.as_slice();
    let rs = reference.s_star.as_slice();
    let mut v = lyapunov(net, reference, s, z);
    for k in l.ineq() {
        let (g, gs) = (ss[k], rs[k]);
        let ls = gs.max(0.0);
        v -= 0.5 * (g - gs) * (g - gs);
        v += 0.5 * g.max(0.0).powi(2) - 0.5 * ls * ls - ls * (g - gs);
    }
    v
}

/// `L(x̂, λ★, μ★, ω̂, ν̂) - L(x★, λ̂, μ̂, ω★, ν★)` without clamping.
pub fn duality_gap_raw(net: &NetworkProblem, averages: &OutputState, reference: &SaddlePoint) -> Result<f64> {
    let zs = &reference.z_star;
    let primal_side = OutputState::from_blocks(
        net.dims(),
        averages.x(),
        zs.lambda(),
        zs.mu(),
        averages.omega(),
        averages.nu(),
    )?;
    let dual_side =
        OutputState::from_blocks(net.dims(), zs.x(), averages.lambda(), averages.mu(), zs.omega(), zs.nu())?;
    Ok(lagrangian(net, &primal_side)? - lagrangian(net, &dual_side)?)
}

/// Clamped gap; values below `-1e-9` are reported as an error since the
/// gap is nonnegative at any saddle point.
pub fn duality_gap(net: &NetworkProblem, averages: &OutputState, reference: &SaddlePoint) -> Result<f64> {
    let raw = duality_gap_raw(net, averages, reference)?;
    if raw < -1e-9 {
        return Err(Error::InvalidProblem(format!(
            "negative duality gap {raw:.3e}: reference is not a saddle point"
        )));
    }
    Ok(raw.max(0.0))
}

/// Worst violation of `L(x★,λ,μ,ω★,ν★) ≤ L(z★) ≤ L(x,λ★,μ★,ω,ν)` at `z`,
/// as `(left, right)`; both are `≤ 0` when the inequalities hold.
pub fn saddle_inequality_violation(
    net: &NetworkProblem,
    reference: &SaddlePoint,
    z: &OutputState,
) -> Result<(f64, f64)> {
    let zs = &reference.z_star;
    let mid = lagrangian(net, zs)?;
    let dual =
        OutputState::from_blocks(net.dims(), zs.x(), z.lambda(), z.mu(), zs.omega(), zs.nu())?;
    let primal =
        OutputState::from_blocks(net.dims(), z.x(), zs.lambda(), zs.mu(), z.omega(), z.nu())?;
    Ok((lagrangian(net, &dual)? - mid, mid - lagrangian(net, &primal)?))
}
