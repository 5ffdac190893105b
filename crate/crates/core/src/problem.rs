//! Multi-agent problem data: nonsmooth local costs, coupled inequality and
//! equality constraints, local sets, and seeded instance generation.
//!
//! Subgradient oracles use the minimal-norm selection at kinks: the `ℓ₁`
//! component at a zero coordinate is `0`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::linalg::{all_finite, dot, norm, norm_l1, sign0, Matrix};
use crate::mirror::{ConstraintSet, GeneratingFunction, GeneratorKind};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Weight {
    Dense { matrix: Matrix },
    Diagonal { diag: Vec<f64> },
}

impl Weight {
    fn out_dim(&self) -> usize {
        match self {
            Weight::Dense { matrix } => matrix.rows(),
            Weight::Diagonal { diag } => diag.len(),
        }
    }

    fn in_dim(&self) -> usize {
        match self {
            Weight::Dense { matrix } => matrix.cols(),
            Weight::Diagonal { diag } => diag.len(),
        }
    }

    fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        match self {
            Weight::Dense { matrix } => matrix.mul_vec_into(x, out),
            Weight::Diagonal { diag } => {
                for ((o, d), v) in out.iter_mut().zip(diag).zip(x) {
                    *o = d * v;
                }
            }
        }
    }

    /// `out += scale * Wᵀ r`
    fn tr_apply_acc(&self, r: &[f64], scale: f64, out: &mut [f64]) {
        match self {
            Weight::Dense { matrix } => matrix.tr_mul_vec_acc(r, scale, out),
            Weight::Diagonal { diag } => {
                for ((o, d), v) in out.iter_mut().zip(diag).zip(r) {
                    *o += scale * d * v;
                }
            }
        }
    }
}

/// `f(x) = ‖W x - d‖² + c ‖x‖₁`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cost {
    pub weight: Weight,
    pub target: Vec<f64>,
    pub l1: f64,
}

impl Cost {
    pub fn value(&self, x: &[f64], scratch: &mut [f64]) -> f64 {
        let r = &mut scratch[..self.target.len()];
        self.weight.apply_into(x, r);
        let mut s = 0.0;
        for (ri, di) in r.iter().zip(&self.target) {
            s += (ri - di) * (ri - di);
        }
        s + self.l1 * norm_l1(x)
    }

    /// Gradient of the smooth part, `2 Wᵀ(W x - d)`.
    pub fn smooth_gradient_into(&self, x: &[f64], out: &mut [f64], scratch: &mut [f64]) {
        let r = &mut scratch[..self.target.len()];
        self.weight.apply_into(x, r);
        for (ri, di) in r.iter_mut().zip(&self.target) {
            *ri -= di;
        }
        out.fill(0.0);
        self.weight.tr_apply_acc(r, 2.0, out);
    }

    pub fn subgradient_into(&self, x: &[f64], out: &mut [f64], scratch: &mut [f64]) {
        self.smooth_gradient_into(x, out, scratch);
        if self.l1 != 0.0 {
            for (o, v) in out.iter_mut().zip(x) {
                *o += self.l1 * sign0(*v);
            }
        }
    }

    pub fn scratch_len(&self) -> usize {
        self.target.len()
    }

    /// `2 WᵀW`, the Hessian of the smooth part (the `ℓ₁` part is piecewise linear).
    pub fn smooth_hessian(&self) -> Matrix {
        match &self.weight {
            Weight::Dense { matrix } => {
                let mut h = matrix.transpose().matmul(matrix);
                for v in h.as_mut_slice() {
                    *v *= 2.0;
                }
                h
            }
            Weight::Diagonal { diag } => {
                let mut h = Matrix::zeros(diag.len(), diag.len());
                for (k, d) in diag.iter().enumerate() {
                    h.set(k, k, 2.0 * d * d);
                }
                h
            }
        }
    }
}

/// One component of the vector-valued coupled inequality function `g_i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum IneqComponent {
    /// `‖x‖² + c ‖x‖₁ - offset`
    SquaredNormL1 { l1: f64, offset: f64 },
    /// `aᵀx - offset`
    Affine { coeffs: Vec<f64>, offset: f64 },
}

impl IneqComponent {
    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            IneqComponent::SquaredNormL1 { l1, offset } => dot(x, x) + l1 * norm_l1(x) - offset,
            IneqComponent::Affine { coeffs, offset } => dot(coeffs, x) - offset,
        }
    }

    /// `out += scale * ∇²g`, Hessian of the smooth part.
    pub fn smooth_hessian_acc(&self, scale: f64, out: &mut Matrix) {
        if let IneqComponent::SquaredNormL1 { .. } = self {
            for k in 0..out.rows() {
                out.set(k, k, out.get(k, k) + 2.0 * scale);
            }
        }
    }

    /// `out += scale * ∂g(x)` (minimal-norm selection at kinks).
    pub fn subgradient_acc(&self, x: &[f64], scale: f64, out: &mut [f64]) {
        if scale == 0.0 {
            return;
        }
        match self {
            IneqComponent::SquaredNormL1 { l1, .. } => {
                for (o, v) in out.iter_mut().zip(x) {
                    *o += scale * (2.0 * v + l1 * sign0(*v));
                }
            }
            IneqComponent::Affine { coeffs, .. } => {
                for (o, a) in out.iter_mut().zip(coeffs) {
                    *o += scale * a;
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LocalProblemDoc", into = "LocalProblemDoc")]
pub struct LocalProblem {
    cost: Cost,
    ineq: Vec<IneqComponent>,
    eq_matrix: Matrix,
    eq_offset: Vec<f64>,
    generator: GeneratingFunction,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LocalProblemDoc {
    pub cost: Cost,
    pub ineq: Vec<IneqComponent>,
    pub eq_matrix: Matrix,
    pub eq_offset: Vec<f64>,
    pub generator: GeneratingFunction,
}

impl TryFrom<LocalProblemDoc> for LocalProblem {
    type Error = Error;

    fn try_from(d: LocalProblemDoc) -> Result<Self> {
        LocalProblem::new(d.cost, d.ineq, d.eq_matrix, d.eq_offset, d.generator)
    }
}

impl From<LocalProblem> for LocalProblemDoc {
    fn from(p: LocalProblem) -> Self {
        LocalProblemDoc {
            cost: p.cost,
            ineq: p.ineq,
            eq_matrix: p.eq_matrix,
            eq_offset: p.eq_offset,
            generator: p.generator,
        }
    }
}

impl LocalProblem {
    pub fn new(
        cost: Cost,
        ineq: Vec<IneqComponent>,
        eq_matrix: Matrix,
        eq_offset: Vec<f64>,
        generator: GeneratingFunction,
    ) -> Result<Self> {
        let n = generator.dim();
        if cost.weight.in_dim() != n {
            return Err(Error::dim("cost weight columns", n, cost.weight.in_dim()));
        }
        if cost.weight.out_dim() != cost.target.len() {
            return Err(Error::dim("cost target", cost.weight.out_dim(), cost.target.len()));
        }
        if !(cost.l1.is_finite() && cost.l1 >= 0.0) {
            return Err(Error::InvalidProblem(format!("l1 weight {} must be >= 0", cost.l1)));
        }
        for c in &ineq {
            match c {
                IneqComponent::SquaredNormL1 { l1, offset } => {
                    if !(l1.is_finite() && *l1 >= 0.0 && offset.is_finite()) {
                        return Err(Error::InvalidProblem("bad inequality coefficients".into()));
                    }
                }
                IneqComponent::Affine { coeffs, offset } => {
                    if coeffs.len() != n {
                        return Err(Error::dim("affine inequality", n, coeffs.len()));
                    }
                    if !all_finite(coeffs) || !offset.is_finite() {
                        return Err(Error::InvalidProblem("bad inequality coefficients".into()));
                    }
                }
            }
        }
        // An empty equality block carries no column count through JSON.
        let eq_matrix = if eq_matrix.rows() == 0 {
            Matrix::zeros(0, n)
        } else {
            eq_matrix
        };
        if eq_matrix.cols() != n {
            return Err(Error::dim("equality matrix columns", n, eq_matrix.cols()));
        }
        if eq_matrix.rows() != eq_offset.len() {
            return Err(Error::dim("equality offset", eq_matrix.rows(), eq_offset.len()));
        }
        if !all_finite(eq_matrix.as_slice())
            || !all_finite(&eq_offset)
            || !all_finite(&cost.target)
        {
            return Err(Error::NonFinite("problem data"));
        }
        Ok(LocalProblem {
            cost,
            ineq,
            eq_matrix,
            eq_offset,
            generator,
        })
    }

    pub fn dim(&self) -> usize {
        self.generator.dim()
    }

    pub fn n_ineq(&self) -> usize {
        self.ineq.len()
    }

    pub fn n_eq(&self) -> usize {
        self.eq_matrix.rows()
    }

    pub fn cost(&self) -> &Cost {
        &self.cost
    }

    pub fn ineq(&self) -> &[IneqComponent] {
        &self.ineq
    }

    pub fn eq_matrix(&self) -> &Matrix {
        &self.eq_matrix
    }

    pub fn eq_offset(&self) -> &[f64] {
        &self.eq_offset
    }

    pub fn generator(&self) -> &GeneratingFunction {
        &self.generator
    }

    pub fn set(&self) -> &ConstraintSet {
        self.generator.domain()
    }

    pub fn scratch_len(&self) -> usize {
        self.cost.scratch_len()
    }

    pub fn eval_cost(&self, x: &[f64]) -> f64 {
        let mut scratch = vec![0.0; self.scratch_len()];
        self.cost.value(x, &mut scratch)
    }

    pub fn subgrad_cost(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        let mut scratch = vec![0.0; self.scratch_len()];
        self.cost.subgradient_into(x, &mut out, &mut scratch);
        out
    }

    pub fn eval_ineq(&self, x: &[f64]) -> Vec<f64> {
        self.ineq.iter().map(|c| c.value(x)).collect()
    }

    pub fn ineq_values_into(&self, x: &[f64], out: &mut [f64]) {
        for (o, c) in out.iter_mut().zip(&self.ineq) {
            *o = c.value(x);
        }
    }

    /// Subgradient matrix of `g_i`, one row per component.
    pub fn subgrad_ineq(&self, x: &[f64]) -> Matrix {
        let n = x.len();
        let mut m = Matrix::zeros(self.ineq.len(), n);
        let mut row = vec![0.0; n];
        for (j, c) in self.ineq.iter().enumerate() {
            row.fill(0.0);
            c.subgradient_acc(x, 1.0, &mut row);
            for (k, v) in row.iter().enumerate() {
                m.set(j, k, *v);
            }
        }
        m
    }

    /// `out += ∂g(x)ᵀ λ`, rows selected independently.
    pub fn ineq_subgradient_tr_acc(&self, x: &[f64], lambda: &[f64], out: &mut [f64]) {
        for (c, &l) in self.ineq.iter().zip(lambda) {
            c.subgradient_acc(x, l, out);
        }
    }

    /// Total `ℓ₁` weight of `f_i + λᵀg_i` (the kink size at `x_k = 0`).
    pub fn l1_kink_weight(&self, lambda: &[f64]) -> f64 {
        let mut w = self.cost.l1;
        for (c, &l) in self.ineq.iter().zip(lambda) {
            if let IneqComponent::SquaredNormL1 { l1, .. } = c {
                w += l * l1;
            }
        }
        w
    }

    /// Replaces the zero `ℓ₁` selection in `grad` (a gradient of
    /// `f_i + λᵀg_i + ...` built with [`sign0`]) at coordinates with `x_k = 0`
    /// by the subgradient element that best fits the local set: `+w` at a
    /// zero lower bound, `-w` at a zero upper bound, otherwise the element
    /// closest to zero. With this choice the natural-map residual vanishes
    /// at every KKT point.
    pub fn adjust_kinks(&self, x: &[f64], lambda: &[f64], grad: &mut [f64]) {
        let w = self.l1_kink_weight(lambda);
        if w <= 0.0 {
            return;
        }
        for (k, (g, &v)) in grad.iter_mut().zip(x).enumerate() {
            if v != 0.0 {
                continue;
            }
            let (lo, hi) = self.set().coordinate_bounds(k);
            if lo == 0.0 && hi > 0.0 {
                *g += w;
            } else if hi == 0.0 && lo < 0.0 {
                *g -= w;
            } else if lo < 0.0 && hi > 0.0 {
                *g += w * (-*g / w).clamp(-1.0, 1.0);
            }
        }
    }

    /// `out = A x - b`
    pub fn eq_residual_into(&self, x: &[f64], out: &mut [f64]) {
        self.eq_matrix.mul_vec_into(x, out);
        for (o, b) in out.iter_mut().zip(&self.eq_offset) {
            *o -= b;
        }
    }

    pub fn with_generator(&self, kind: GeneratorKind) -> Result<Self> {
        let mut p = self.clone();
        p.generator = self.generator.with_kind(kind)?;
        Ok(p)
    }
}

/// Shared block widths: primal `n`, inequality `p`, equality `q`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub n_agents: usize,
    pub n: usize,
    pub p: usize,
    pub q: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkProblem {
    agents: Vec<LocalProblem>,
    graph: Graph,
    dims: Dims,
}

impl NetworkProblem {
    /// Validates dimensions and rejects disconnected graphs.
    pub fn new(agents: Vec<LocalProblem>, graph: Graph) -> Result<Self> {
        let dims = check_dims(&agents, &graph)?;
        if !graph.is_connected() {
            return Err(Error::Disconnected);
        }
        Ok(NetworkProblem {
            agents,
            graph,
            dims,
        })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn n_agents(&self) -> usize {
        self.dims.n_agents
    }

    pub fn agents(&self) -> &[LocalProblem] {
        &self.agents
    }

    pub fn agent(&self, i: usize) -> &LocalProblem {
        &self.agents[i]
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn primal_len(&self) -> usize {
        self.dims.n_agents * self.dims.n
    }

    pub fn block<'a>(&self, x: &'a [f64], i: usize) -> &'a [f64] {
        &x[i * self.dims.n..(i + 1) * self.dims.n]
    }

    /// Every agent's generator replaced by `kind` on the same set.
    pub fn with_generator(&self, kind: GeneratorKind) -> Result<Self> {
        let agents = self
            .agents
            .iter()
            .map(|a| a.with_generator(kind))
            .collect::<Result<Vec<_>>>()?;
        Ok(NetworkProblem {
            agents,
            graph: self.graph.clone(),
            dims: self.dims,
        })
    }

    fn check_stacked(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.primal_len() {
            return Err(Error::dim("stacked primal vector", self.primal_len(), x.len()));
        }
        Ok(())
    }

    pub fn total_cost(&self, x: &[f64]) -> Result<f64> {
        self.check_stacked(x)?;
        Ok((0..self.n_agents())
            .map(|i| self.agents[i].eval_cost(self.block(x, i)))
            .sum())
    }

    /// `Σ_i g_i(x_i)`.
    pub fn ineq_total(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_stacked(x)?;
        let mut total = vec![0.0; self.dims.p];
        let mut tmp = vec![0.0; self.dims.p];
        for (i, a) in self.agents.iter().enumerate() {
            a.ineq_values_into(self.block(x, i), &mut tmp);
            for (t, v) in total.iter_mut().zip(&tmp) {
                *t += v;
            }
        }
        Ok(total)
    }

    /// `Σ_i A_i x_i - Σ_i b_i`.
    pub fn equality_residual(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_stacked(x)?;
        let mut total = vec![0.0; self.dims.q];
        let mut tmp = vec![0.0; self.dims.q];
        for (i, a) in self.agents.iter().enumerate() {
            a.eq_residual_into(self.block(x, i), &mut tmp);
            for (t, v) in total.iter_mut().zip(&tmp) {
                *t += v;
            }
        }
        Ok(total)
    }

    /// `‖[Σ g_i(x_i)]⁺‖`
    pub fn ineq_violation(&self, x: &[f64]) -> Result<f64> {
        let g = self.ineq_total(x)?;
        Ok(g.iter().map(|v| v.max(0.0).powi(2)).sum::<f64>().sqrt())
    }

    pub fn local_violation(&self, x: &[f64]) -> Result<f64> {
        self.check_stacked(x)?;
        Ok((0..self.n_agents())
            .map(|i| self.agents[i].set().violation(self.block(x, i)))
            .fold(0.0, f64::max))
    }

    /// Checks Slater's condition at `point` and returns a certificate.
    pub fn slater_certificate(&self, point: &[f64]) -> Result<SlaterCertificate> {
        self.check_stacked(point)?;
        let g = self.ineq_total(point)?;
        let eq = norm(&self.equality_residual(point)?);
        let interior = (0..self.n_agents())
            .map(|i| interior_margin(self.agents[i].set(), self.block(point, i)))
            .fold(f64::INFINITY, f64::min);
        let slack = g.iter().map(|v| -v).fold(f64::INFINITY, f64::min);
        if !(interior > 0.0) || !(eq <= 1e-9) {
            return Err(Error::InvalidProblem(format!(
                "Slater point rejected (interior margin {interior:.3e}, equality residual {eq:.3e})"
            )));
        }
        if !(slack > 0.0) {
            let agent = self.worst_ineq_agent(point);
            return Err(Error::SlaterViolated {
                agent,
                margin: -slack,
            });
        }
        Ok(SlaterCertificate {
            point: point.to_vec(),
            slack: if self.dims.p == 0 { None } else { Some(slack) },
            eq_residual: eq,
        })
    }

    fn worst_ineq_agent(&self, point: &[f64]) -> usize {
        let mut best = (0, f64::NEG_INFINITY);
        for (i, a) in self.agents.iter().enumerate() {
            let v = a.eval_ineq(self.block(point, i)).into_iter().fold(f64::NEG_INFINITY, f64::max);
            if v > best.1 {
                best = (i, v);
            }
        }
        best.0
    }
}

fn check_dims(agents: &[LocalProblem], graph: &Graph) -> Result<Dims> {
    let first = agents
        .first()
        .ok_or_else(|| Error::InvalidProblem("at least one agent is required".into()))?;
    if graph.n_agents() != agents.len() {
        return Err(Error::dim("graph nodes", agents.len(), graph.n_agents()));
    }
    let dims = Dims {
        n_agents: agents.len(),
        n: first.dim(),
        p: first.n_ineq(),
        q: first.n_eq(),
    };
    for a in agents {
        if a.dim() != dims.n {
            return Err(Error::dim("agent primal dimension", dims.n, a.dim()));
        }
        if a.n_ineq() != dims.p {
            return Err(Error::dim("agent inequality count", dims.p, a.n_ineq()));
        }
        if a.n_eq() != dims.q {
            return Err(Error::dim("agent equality count", dims.q, a.n_eq()));
        }
    }
    Ok(dims)
}

/// Distance-like margin of `x` from the relative boundary of `set`.
fn interior_margin(set: &ConstraintSet, x: &[f64]) -> f64 {
    match set {
        ConstraintSet::UnitSimplex { .. } => {
            if (x.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return -1.0;
            }
            x.iter().copied().fold(f64::INFINITY, f64::min)
        }
        ConstraintSet::NonnegativeOrthant { .. } => x.iter().copied().fold(f64::INFINITY, f64::min),
        ConstraintSet::Box { lower, upper } => x
            .iter()
            .zip(lower.iter().zip(upper))
            .filter(|(_, (l, u))| l < u)
            .map(|(v, (l, u))| (v - l).min(u - v))
            .fold(f64::INFINITY, f64::min),
        ConstraintSet::Ball { center, radius } => radius - crate::linalg::dist(x, center),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlaterCertificate {
    pub point: Vec<f64>,
    /// `min_j -Σ_i g_ij(x_i)`; absent when there are no inequalities.
    pub slack: Option<f64>,
    pub eq_residual: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WeightStructure {
    #[default]
    Dense,
    Diagonal,
}

/// Parameters of the simplex-constrained experiment family:
/// `f_i = ‖W_i x - d_i‖² + c_i‖x‖₁`,
/// `g_i = ‖x‖² + c_i‖x‖₁ - 25/(2n + i²)` (agents indexed from 1),
/// random `A_i`, `b_i`, cycle graph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyConfig {
    #[serde(default = "default_tag")]
    pub tag: String,
    #[serde(default = "default_agents")]
    pub n_agents: usize,
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default = "default_eq_rows")]
    pub eq_rows: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub weight_structure: WeightStructure,
    /// `c_i`; `None` picks half of the per-agent Slater budget.
    #[serde(default)]
    pub l1_weight: Option<f64>,
    #[serde(default = "default_noise")]
    pub target_noise: f64,
    #[serde(default = "default_generator")]
    pub generator: GeneratorKind,
}

fn default_tag() -> String {
    FAMILY_SIMPLEX.to_string()
}
fn default_agents() -> usize {
    10
}
fn default_dim() -> usize {
    4
}
fn default_eq_rows() -> usize {
    2
}
fn default_seed() -> u64 {
    7
}
fn default_noise() -> f64 {
    0.05
}
fn default_generator() -> GeneratorKind {
    GeneratorKind::Entropy
}

pub const FAMILY_SIMPLEX: &str = "desk";
pub const FAMILY_SCALAR: &str = "scalar2";

impl Default for FamilyConfig {
    fn default() -> Self {
        FamilyConfig {
            tag: default_tag(),
            n_agents: default_agents(),
            dim: default_dim(),
            eq_rows: default_eq_rows(),
            seed: default_seed(),
            weight_structure: WeightStructure::Dense,
            l1_weight: None,
            target_noise: default_noise(),
            generator: default_generator(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct GeneratedInstance {
    pub problem: NetworkProblem,
    pub certificate: SlaterCertificate,
    /// The config with every automatic choice resolved.
    pub family: FamilyConfig,
}

fn inequality_offset(n: usize, agent_index: usize) -> f64 {
    let i = (agent_index + 1) as f64;
    25.0 / (2.0 * n as f64 + i * i)
}

/// Draws a seeded instance of the simplex family (see [`FamilyConfig`]).
///
/// Distributions: `W_i = GᵀG/n + I` (dense, `G` uniform on `(-1, 1)`) or
/// `diag(1 + u)` with `u` uniform on `(0, 1)`; `d_i = W_i x̃_i + η` with
/// `x̃_i` a random interior simplex point and `η` uniform on
/// `(-noise, noise)`; `A_i` uniform on `(-1, 1)`; `b_i = A_i x̄` with `x̄`
/// the uniform vector, so `x̄` satisfies the coupled equality exactly.
pub fn generate_instance(config: &FamilyConfig) -> Result<GeneratedInstance> {
    if config.tag == FAMILY_SCALAR {
        return scalar_family(config);
    }
    if config.tag != FAMILY_SIMPLEX {
        return Err(Error::config("family.tag", format!("unknown family `{}`", config.tag)));
    }
    let n_agents = config.n_agents;
    let n = config.dim;
    let q = config.eq_rows;
    if n_agents < 2 {
        return Err(Error::config("family.n_agents", "need at least 2 agents"));
    }
    if n < 1 {
        return Err(Error::config("family.dim", "need dimension >= 1"));
    }
    if !(config.target_noise.is_finite() && config.target_noise >= 0.0) {
        return Err(Error::config("family.target_noise", "must be a finite nonnegative number"));
    }

    let uniform = 1.0 / n as f64;
    let offsets: Vec<f64> = (0..n_agents).map(|i| inequality_offset(n, i)).collect();
    // g_i at the uniform point with c = 0 is 1/n - offset_i; ‖x̄‖₁ = 1.
    let budget: f64 = offsets.iter().map(|o| o - uniform).sum();
    let l1 = match config.l1_weight {
        Some(c) => {
            if !(c.is_finite() && c >= 0.0) {
                return Err(Error::config("family.l1_weight", "must be >= 0"));
            }
            c
        }
        None => {
            if budget <= 0.0 {
                let agent = worst_agent(&offsets, uniform);
                return Err(Error::SlaterViolated {
                    agent,
                    margin: -budget,
                });
            }
            0.5 * budget / n_agents as f64
        }
    };
    let margin = budget - n_agents as f64 * l1;
    if margin <= 0.0 {
        let agent = worst_agent(&offsets, uniform + l1);
        return Err(Error::SlaterViolated {
            agent,
            margin: -margin,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let xbar = vec![uniform; n];
    let mut agents = Vec::with_capacity(n_agents);
    for &offset in &offsets {
        let weight = match config.weight_structure {
            WeightStructure::Dense => {
                let g = Matrix::from_row_major(
                    n,
                    n,
                    (0..n * n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                )?;
                let mut w = g.transpose().matmul(&g);
                for a in 0..n {
                    for b in 0..n {
                        let v = w.get(a, b) / n as f64 + if a == b { 1.0 } else { 0.0 };
                        w.set(a, b, v);
                    }
                }
                // Exact symmetry regardless of summation order.
                for a in 0..n {
                    for b in 0..a {
                        let v = w.get(a, b);
                        w.set(b, a, v);
                    }
                }
                Weight::Dense { matrix: w }
            }
            WeightStructure::Diagonal => Weight::Diagonal {
                diag: (0..n).map(|_| 1.0 + rng.gen_range(0.0..1.0)).collect(),
            },
        };
        let raw: Vec<f64> = (0..n).map(|_| 1.0 + 0.5 * rng.gen_range(0.0..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let anchor: Vec<f64> = raw.iter().map(|v| v / total).collect();
        let mut target = vec![0.0; n];
        weight.apply_into(&anchor, &mut target);
        for t in target.iter_mut() {
            *t += config.target_noise * rng.gen_range(-1.0..1.0);
        }
        let eq_matrix = Matrix::from_row_major(
            q,
            n,
            (0..q * n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )?;
        let eq_offset = eq_matrix.mul_vec(&xbar);
        let generator = GeneratingFunction::new(config.generator, ConstraintSet::UnitSimplex { dim: n })?;
        agents.push(LocalProblem::new(
            Cost {
                weight,
                target,
                l1,
            },
            vec![IneqComponent::SquaredNormL1 { l1, offset }],
            eq_matrix,
            eq_offset,
            generator,
        )?);
    }
    let problem = NetworkProblem::new(agents, Graph::cycle(n_agents)?)?;
    let point: Vec<f64> = std::iter::repeat(xbar).take(n_agents).flatten().collect();
    let certificate = problem.slater_certificate(&point)?;
    let mut family = config.clone();
    family.l1_weight = Some(l1);
    Ok(GeneratedInstance {
        problem,
        certificate,
        family,
    })
}

fn worst_agent(offsets: &[f64], base: f64) -> usize {
    offsets
        .iter()
        .enumerate()
        .map(|(i, o)| (i, base - o))
        .fold((0, f64::NEG_INFINITY), |acc, v| if v.1 > acc.1 { v } else { acc })
        .0
}

/// Two agents on `[0, 1]` with `f_i = (x_i - c_i)²`, no inequality, and
/// `x_1 + x_2 = 1` split as `b_i = ½`. For `|c_1 - c_2| < 1` the optimum is
/// `x_1 = (1 + c_1 - c_2)/2`, `x_2 = 1 - x_1`.
pub fn two_agent_scalar(targets: [f64; 2]) -> Result<NetworkProblem> {
    let agents = targets
        .iter()
        .map(|&c| {
            LocalProblem::new(
                Cost {
                    weight: Weight::Diagonal { diag: vec![1.0] },
                    target: vec![c],
                    l1: 0.0,
                },
                Vec::new(),
                Matrix::from_rows(&[vec![1.0]])?,
                vec![0.5],
                GeneratingFunction::quadratic(ConstraintSet::Box {
                    lower: vec![0.0],
                    upper: vec![1.0],
                })?,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    NetworkProblem::new(agents, Graph::cycle(2)?)
}

/// Default targets of the scalar regression instance.
pub const SCALAR_TARGETS: [f64; 2] = [0.8, 0.6];

fn scalar_family(config: &FamilyConfig) -> Result<GeneratedInstance> {
    let problem = two_agent_scalar(SCALAR_TARGETS)?;
    let certificate = problem.slater_certificate(&[0.5, 0.5])?;
    let mut family = config.clone();
    family.n_agents = 2;
    family.dim = 1;
    family.eq_rows = 1;
    family.generator = GeneratorKind::Quadratic;
    Ok(GeneratedInstance {
        problem,
        certificate,
        family,
    })
}
