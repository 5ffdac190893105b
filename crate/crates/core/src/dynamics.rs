//! Mirror-descent dynamics with Bregman damping and its Euclidean
//! projection special case.
//!
//! Per agent `i`, with `x_i = Π^{φ_i}(y_i)` and `λ_i = [γ_i]⁺`:
//!
//! ```text
//! ẏ_i = -∂f_i(x_i) - ∂g_i(x_i)ᵀλ_i - A_iᵀμ_i + ∇φ_i(x_i) - y_i
//! γ̇_i = g_i(x_i) - Σ_j a_ij(ω_i - ω_j) + λ_i - γ_i
//! μ̇_i = A_i x_i - b_i - Σ_j a_ij(ν_i - ν_j)
//! ω̇_i = Σ_j a_ij(λ_i - λ_j)
//! ν̇_i = Σ_j a_ij(μ_i - μ_j)
//! ```
//!
//! The projection baseline replaces every `φ_i` by `½‖·‖²`, so the mirror
//! map becomes `P_{Ω_i}` and the damping term becomes `x_i`.

use std::ops::Range;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::integrator::VectorField;
use crate::linalg::{all_finite, norm};
use crate::mirror::{GeneratingFunction, GeneratorKind};
use crate::problem::{Dims, NetworkProblem};
use crate::qp::{GenericQpProjector, ProjectionMode};

/// Offsets of the five stacked blocks inside a flat vector. States
/// `(y, γ, μ, ω, ν)` and outputs `(x, λ, μ, ω, ν)` share this layout.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Layout {
    pub dims: Dims,
}

impl Layout {
    pub fn new(dims: Dims) -> Self {
        Layout { dims }
    }

    fn sizes(&self) -> [usize; 5] {
        let Dims { n_agents, n, p, q } = self.dims;
        [n_agents * n, n_agents * p, n_agents * q, n_agents * p, n_agents * q]
    }

    pub fn len(&self) -> usize {
        self.sizes().iter().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn block(&self, k: usize) -> Range<usize> {
        let sizes = self.sizes();
        let start: usize = sizes[..k].iter().sum();
        start..start + sizes[k]
    }

    pub fn primal(&self) -> Range<usize> {
        self.block(0)
    }

    pub fn ineq(&self) -> Range<usize> {
        self.block(1)
    }

    pub fn mu(&self) -> Range<usize> {
        self.block(2)
    }

    pub fn omega(&self) -> Range<usize> {
        self.block(3)
    }

    pub fn nu(&self) -> Range<usize> {
        self.block(4)
    }

    /// Block widths in order.
    pub fn widths(&self) -> [usize; 5] {
        let Dims { n, p, q, .. } = self.dims;
        [n, p, q, p, q]
    }
}

macro_rules! block_accessors {
    ($($name:ident, $name_mut:ident, $range:ident;)*) => {
        $(
            pub fn $name(&self) -> &[f64] {
                &self.data[self.layout().$range()]
            }

            pub fn $name_mut(&mut self) -> &mut [f64] {
                let r = self.layout().$range();
                &mut self.data[r]
            }
        )*
    };
}

/// Integrated state `s = (y, γ, μ, ω, ν)`, each block stacked over agents.
#[derive(Clone, Debug, PartialEq)]
pub struct StackedState {
    dims: Dims,
    data: Vec<f64>,
}

impl StackedState {
    /// All-zero state, the default initialization.
    pub fn zeros(dims: Dims) -> Self {
        StackedState {
            dims,
            data: vec![0.0; Layout::new(dims).len()],
        }
    }

    pub fn from_vec(dims: Dims, data: Vec<f64>) -> Result<Self> {
        let len = Layout::new(dims).len();
        if data.len() != len {
            return Err(Error::dim("stacked state", len, data.len()));
        }
        Ok(StackedState { dims, data })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn layout(&self) -> Layout {
        Layout::new(self.dims)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn norm(&self) -> f64 {
        norm(&self.data)
    }

    block_accessors! {
        y, y_mut, primal;
        gamma, gamma_mut, ineq;
        mu, mu_mut, mu;
        omega, omega_mut, omega;
        nu, nu_mut, nu;
    }
}

/// Output `z = (x, λ, μ, ω, ν)`.
#[derive(Clone, Debug, PartialEq)]
pub struct OutputState {
    dims: Dims,
    data: Vec<f64>,
}

impl OutputState {
    pub fn zeros(dims: Dims) -> Self {
        OutputState {
            dims,
            data: vec![0.0; Layout::new(dims).len()],
        }
    }

    pub fn from_vec(dims: Dims, data: Vec<f64>) -> Result<Self> {
        let len = Layout::new(dims).len();
        if data.len() != len {
            return Err(Error::dim("output state", len, data.len()));
        }
        Ok(OutputState { dims, data })
    }

    pub fn from_blocks(
        dims: Dims,
        x: &[f64],
        lambda: &[f64],
        mu: &[f64],
        omega: &[f64],
        nu: &[f64],
    ) -> Result<Self> {
        let data: Vec<f64> = [x, lambda, mu, omega, nu].concat();
        let out = OutputState::from_vec(dims, data)?;
        let l = out.layout();
        for (k, block) in [x, lambda, mu, omega, nu].iter().enumerate() {
            if block.len() != l.block(k).len() {
                return Err(Error::dim("output block", l.block(k).len(), block.len()));
            }
        }
        Ok(out)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn layout(&self) -> Layout {
        Layout::new(self.dims)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn norm(&self) -> f64 {
        norm(&self.data)
    }

    block_accessors! {
        x, x_mut, primal;
        lambda, lambda_mut, ineq;
        mu, mu_mut, mu;
        omega, omega_mut, omega;
        nu, nu_mut, nu;
    }
}

/// JSON form of a stacked state or output: agent count plus flat blocks.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StateDoc {
    pub n_agents: usize,
    pub blocks: [Vec<f64>; 5],
}

impl StateDoc {
    fn dims(&self) -> Result<Dims> {
        let n_agents = self.n_agents;
        if n_agents == 0 {
            return Err(Error::InvalidProblem("state with zero agents".into()));
        }
        let width = |k: usize| -> Result<usize> {
            let len = self.blocks[k].len();
            if len % n_agents != 0 {
                return Err(Error::dim("state block", n_agents * (len / n_agents + 1), len));
            }
            Ok(len / n_agents)
        };
        let dims = Dims {
            n_agents,
            n: width(0)?,
            p: width(1)?,
            q: width(2)?,
        };
        if width(3)? != dims.p || width(4)? != dims.q {
            return Err(Error::InvalidProblem("auxiliary block widths disagree".into()));
        }
        Ok(dims)
    }
}

fn to_doc(dims: Dims, data: &[f64]) -> StateDoc {
    let l = Layout::new(dims);
    StateDoc {
        n_agents: dims.n_agents,
        blocks: std::array::from_fn(|k| data[l.block(k)].to_vec()),
    }
}

impl Serialize for StackedState {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        to_doc(self.dims, &self.data).serialize(s)
    }
}

impl<'de> Deserialize<'de> for StackedState {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let doc = StateDoc::deserialize(d)?;
        let dims = doc.dims().map_err(serde::de::Error::custom)?;
        StackedState::from_vec(dims, doc.blocks.concat()).map_err(serde::de::Error::custom)
    }
}

impl Serialize for OutputState {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        to_doc(self.dims, &self.data).serialize(s)
    }
}

impl<'de> Deserialize<'de> for OutputState {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let doc = StateDoc::deserialize(d)?;
        let dims = doc.dims().map_err(serde::de::Error::custom)?;
        OutputState::from_vec(dims, doc.blocks.concat()).map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Algorithm {
    /// Each agent's own generating function.
    Mdbd,
    /// `φ_i = ½‖·‖²` for every agent.
    Projection {
        #[serde(default)]
        projection_mode: ProjectionMode,
    },
}

impl Algorithm {
    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::Mdbd => "mdbd",
            Algorithm::Projection {
                projection_mode: ProjectionMode::Fast,
            } => "projection-fast",
            Algorithm::Projection {
                projection_mode: ProjectionMode::GenericQp,
            } => "projection-generic-qp",
        }
    }
}

/// One field evaluation with the subgradient elements that were selected.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldEvaluation {
    pub ds: StackedState,
    /// `∂f_i(x_i)` per agent, stacked.
    pub cost_subgradients: Vec<f64>,
    /// `∂g_i(x_i)ᵀ λ_i` per agent, stacked.
    pub ineq_terms: Vec<f64>,
}

struct Workspace {
    z: Vec<f64>,
    sort: Vec<f64>,
    cost: Vec<f64>,
    grad: Vec<f64>,
    lap_p: Vec<f64>,
    lap_q: Vec<f64>,
    cost_subgradients: Vec<f64>,
    ineq_terms: Vec<f64>,
}

/// The dynamics of one algorithm on one problem, with reusable buffers.
pub struct Flow<'a> {
    net: &'a NetworkProblem,
    algorithm: Algorithm,
    generators: Vec<GeneratingFunction>,
    /// Generic-QP projectors, shared between agents with equal sets.
    qp: Vec<GenericQpProjector>,
    qp_index: Vec<usize>,
    layout: Layout,
    work: Workspace,
    digest: Option<Sha256>,
}

impl<'a> Flow<'a> {
    pub fn new(net: &'a NetworkProblem, algorithm: Algorithm) -> Result<Self> {
        let dims = net.dims();
        let generators = net
            .agents()
            .iter()
            .map(|a| match algorithm {
                Algorithm::Mdbd => Ok(a.generator().clone()),
                Algorithm::Projection { .. } => a.generator().with_kind(GeneratorKind::Quadratic),
            })
            .collect::<Result<Vec<_>>>()?;

        let mut qp = Vec::new();
        let mut qp_index = Vec::new();
        if let Algorithm::Projection {
            projection_mode: ProjectionMode::GenericQp,
        } = algorithm
        {
            let mut seen: Vec<&crate::mirror::ConstraintSet> = Vec::new();
            for a in net.agents() {
                match seen.iter().position(|s| *s == a.set()) {
                    Some(k) => qp_index.push(k),
                    None => {
                        qp.push(GenericQpProjector::new(a.set())?);
                        seen.push(a.set());
                        qp_index.push(qp.len() - 1);
                    }
                }
            }
        }

        let layout = Layout::new(dims);
        let scratch = net.agents().iter().map(|a| a.scratch_len()).max().unwrap_or(0);
        Ok(Flow {
            net,
            algorithm,
            generators,
            qp,
            qp_index,
            layout,
            work: Workspace {
                z: vec![0.0; layout.len()],
                sort: Vec::with_capacity(dims.n),
                cost: vec![0.0; scratch],
                grad: vec![0.0; dims.n],
                lap_p: vec![0.0; dims.n_agents * dims.p],
                lap_q: vec![0.0; dims.n_agents * dims.q],
                cost_subgradients: vec![0.0; dims.n_agents * dims.n],
                ineq_terms: vec![0.0; dims.n_agents * dims.n],
            },
            digest: None,
        })
    }

    pub fn net(&self) -> &'a NetworkProblem {
        self.net
    }

    pub fn algorithm(&self) -> Algorithm {
        self.algorithm
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    /// Generating function actually used for agent `i`.
    pub fn generator(&self, i: usize) -> &GeneratingFunction {
        &self.generators[i]
    }

    /// Starts hashing every selected subgradient from now on.
    pub fn enable_digest(&mut self) {
        self.digest = Some(Sha256::new());
    }

    /// Hex SHA-256 of all subgradients selected since [`Flow::enable_digest`].
    pub fn digest_hex(&self) -> Option<String> {
        self.digest.as_ref().map(|h| hex::encode(h.clone().finalize()))
    }

    /// Subgradients selected by the most recent field evaluation.
    pub fn last_cost_subgradients(&self) -> &[f64] {
        &self.work.cost_subgradients
    }

    pub fn last_ineq_terms(&self) -> &[f64] {
        &self.work.ineq_terms
    }

    /// `z = Π^Φ_Θ(s)` on flat slices.
    pub fn output_into(&mut self, s: &[f64], z: &mut [f64]) {
        let Dims { n_agents, n, .. } = self.layout.dims;
        let prim = self.layout.primal();
        for i in 0..n_agents {
            let yi = &s[prim.start + i * n..prim.start + (i + 1) * n];
            let xi = &mut z[prim.start + i * n..prim.start + (i + 1) * n];
            if self.qp.is_empty() {
                self.generators[i].mirror_map_into(yi, xi, &mut self.work.sort);
            } else {
                self.qp[self.qp_index[i]].project_into(yi, xi);
            }
        }
        let ineq = self.layout.ineq();
        for k in ineq.clone() {
            z[k] = s[k].max(0.0);
        }
        z[ineq.end..].copy_from_slice(&s[ineq.end..]);
    }

    pub fn output(&mut self, s: &StackedState) -> Result<OutputState> {
        self.check_state(s)?;
        let mut z = OutputState::zeros(self.layout.dims);
        self.output_into(s.as_slice(), z.as_mut_slice());
        Ok(z)
    }

    fn check_state(&self, s: &StackedState) -> Result<()> {
        if s.dims() != self.layout.dims {
            return Err(Error::dim("state layout", self.layout.len(), s.as_slice().len()));
        }
        if !all_finite(s.as_slice()) {
            return Err(Error::NonFinite("state"));
        }
        Ok(())
    }

    /// Field evaluation on flat slices; `ds` must have the state length.
    pub fn field_into(&mut self, s: &[f64], ds: &mut [f64]) -> Result<()> {
        if !all_finite(s) {
            return Err(Error::NonFinite("state"));
        }
        let mut z = std::mem::take(&mut self.work.z);
        self.output_into(s, &mut z);
        self.field_from_output(s, &z, ds);
        self.work.z = z;
        if let Some(h) = self.digest.as_mut() {
            for v in self.work.cost_subgradients.iter().chain(&self.work.ineq_terms) {
                h.update(v.to_le_bytes());
            }
        }
        if !all_finite(ds) {
            return Err(Error::NonFinite("vector field"));
        }
        Ok(())
    }

    fn field_from_output(&mut self, s: &[f64], z: &[f64], ds: &mut [f64]) {
        let l = self.layout;
        let Dims { n_agents, n, p, q } = l.dims;
        let graph = self.net.graph();
        let (prim, ineq, mu_r, om_r, nu_r) = (l.primal(), l.ineq(), l.mu(), l.omega(), l.nu());

        // Consensus terms need neighbor values only.
        graph.laplacian_apply_into(&z[om_r.clone()], p, &mut self.work.lap_p);
        graph.laplacian_apply_into(&z[nu_r.clone()], q, &mut self.work.lap_q);

        for i in 0..n_agents {
            let agent = self.net.agent(i);
            let xi = &z[prim.start + i * n..prim.start + (i + 1) * n];
            let yi = &s[prim.start + i * n..prim.start + (i + 1) * n];
            let lam_i = &z[ineq.start + i * p..ineq.start + (i + 1) * p];
            let mu_i = &z[mu_r.start + i * q..mu_r.start + (i + 1) * q];

            let sub = &mut self.work.cost_subgradients[i * n..(i + 1) * n];
            agent.cost().subgradient_into(xi, sub, &mut self.work.cost);
            let ineq_term = &mut self.work.ineq_terms[i * n..(i + 1) * n];
            ineq_term.fill(0.0);
            agent.ineq_subgradient_tr_acc(xi, lam_i, ineq_term);

            let dy = &mut ds[prim.start + i * n..prim.start + (i + 1) * n];
            self.generators[i].gradient_into(xi, &mut self.work.grad);
            for k in 0..n {
                dy[k] = -sub[k] - ineq_term[k] + self.work.grad[k] - yi[k];
            }
            agent.eq_matrix().tr_mul_vec_acc(mu_i, -1.0, dy);

            let dg = &mut ds[ineq.start + i * p..ineq.start + (i + 1) * p];
            agent.ineq_values_into(xi, dg);
            for k in 0..p {
                let idx = i * p + k;
                dg[k] += -self.work.lap_p[idx] + z[ineq.start + idx] - s[ineq.start + idx];
            }

            let dm = &mut ds[mu_r.start + i * q..mu_r.start + (i + 1) * q];
            agent.eq_residual_into(xi, dm);
            for k in 0..q {
                dm[k] -= self.work.lap_q[i * q + k];
            }
        }

        graph.laplacian_apply_into(&z[ineq.clone()], p, &mut ds[om_r]);
        graph.laplacian_apply_into(&z[mu_r], q, &mut ds[nu_r]);
    }

    pub fn evaluate(&mut self, s: &StackedState) -> Result<FieldEvaluation> {
        self.check_state(s)?;
        let mut ds = StackedState::zeros(self.layout.dims);
        self.field_into(s.as_slice(), ds.as_mut_slice())?;
        Ok(FieldEvaluation {
            ds,
            cost_subgradients: self.work.cost_subgradients.clone(),
            ineq_terms: self.work.ineq_terms.clone(),
        })
    }
}

impl VectorField for Flow<'_> {
    fn len(&self) -> usize {
        self.layout.len()
    }

    fn eval(&mut self, s: &[f64], ds: &mut [f64]) -> Result<()> {
        self.field_into(s, ds)
    }
}

/// `x_i = Π^{φ_i}(y_i)`, `λ_i = [γ_i]⁺`, auxiliaries passed through.
pub fn output_map(net: &NetworkProblem, s: &StackedState) -> Result<OutputState> {
    Flow::new(net, Algorithm::Mdbd)?.output(s)
}

pub fn mdbd_field(net: &NetworkProblem, s: &StackedState) -> Result<FieldEvaluation> {
    Flow::new(net, Algorithm::Mdbd)?.evaluate(s)
}

pub fn projection_baseline_field(
    net: &NetworkProblem,
    s: &StackedState,
    mode: ProjectionMode,
) -> Result<FieldEvaluation> {
    Flow::new(
        net,
        Algorithm::Projection {
            projection_mode: mode,
        },
    )?
    .evaluate(s)
}
