//! Undirected weighted communication topology.
//!
//! Weights are kept dense; the Laplacian is applied blockwise through an
//! adjacency list, never by forming `L ⊗ I_d`.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    #[serde(default = "unit_weight")]
    pub weight: f64,
}

fn unit_weight() -> f64 {
    1.0
}

/// Serialized form: node count plus edge list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphDoc {
    pub n_agents: usize,
    pub edges: Vec<Edge>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GraphDoc", into = "GraphDoc")]
pub struct Graph {
    n: usize,
    weights: Vec<f64>,
    neighbors: Vec<Vec<(usize, f64)>>,
}

impl Graph {
    /// Builds a graph from a dense row-major weight matrix.
    pub fn from_dense(n: usize, weights: Vec<f64>) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidGraph("graph needs at least one node".into()));
        }
        if weights.len() != n * n {
            return Err(Error::dim("graph weights", n * n, weights.len()));
        }
        for i in 0..n {
            if weights[i * n + i] != 0.0 {
                return Err(Error::InvalidGraph(format!("self-loop at node {i}")));
            }
            for j in 0..n {
                let w = weights[i * n + j];
                if !w.is_finite() || w < 0.0 {
                    return Err(Error::InvalidGraph(format!(
                        "weight a[{i}][{j}] = {w} is not a nonnegative finite number"
                    )));
                }
                if w != weights[j * n + i] {
                    return Err(Error::InvalidGraph(format!(
                        "weights are not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        let neighbors = (0..n)
            .map(|i| {
                (0..n)
                    .filter_map(|j| {
                        let w = weights[i * n + j];
                        (w > 0.0).then_some((j, w))
                    })
                    .collect()
            })
            .collect();
        Ok(Graph {
            n,
            weights,
            neighbors,
        })
    }

    pub fn from_edges(n: usize, edges: &[Edge]) -> Result<Self> {
        let mut weights = vec![0.0; n * n];
        for e in edges {
            if e.i >= n || e.j >= n {
                return Err(Error::InvalidGraph(format!(
                    "edge ({}, {}) references a node outside 0..{n}",
                    e.i, e.j
                )));
            }
            if e.i == e.j {
                return Err(Error::InvalidGraph(format!("self-loop at node {}", e.i)));
            }
            weights[e.i * n + e.j] = e.weight;
            weights[e.j * n + e.i] = e.weight;
        }
        Graph::from_dense(n, weights)
    }

    /// Unit-weight ring `0 - 1 - ... - (n-1) - 0`.
    pub fn cycle(n: usize) -> Result<Self> {
        let edges: Vec<Edge> = match n {
            0 | 1 => Vec::new(),
            2 => vec![Edge { i: 0, j: 1, weight: 1.0 }],
            _ => (0..n)
                .map(|i| Edge {
                    i,
                    j: (i + 1) % n,
                    weight: 1.0,
                })
                .collect(),
        };
        Graph::from_edges(n, &edges)
    }

    pub fn n_agents(&self) -> usize {
        self.n
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[i * self.n + j]
    }

    pub fn neighbors(&self, i: usize) -> &[(usize, f64)] {
        &self.neighbors[i]
    }

    pub fn edges(&self) -> Vec<Edge> {
        let mut edges = Vec::new();
        for i in 0..self.n {
            for &(j, w) in &self.neighbors[i] {
                if i < j {
                    edges.push(Edge { i, j, weight: w });
                }
            }
        }
        edges
    }

    pub fn degree(&self, i: usize) -> f64 {
        self.neighbors[i].iter().map(|&(_, w)| w).sum()
    }

    /// `L = D - A`.
    pub fn laplacian(&self) -> Matrix {
        let n = self.n;
        let mut l = Matrix::zeros(n, n);
        for i in 0..n {
            l.set(i, i, self.degree(i));
            for &(j, w) in &self.neighbors[i] {
                l.set(i, j, -w);
            }
        }
        l
    }

    /// Applies `L ⊗ I_width` to `v` (N blocks of `width`), writing into `out`.
    /// Block `i` of the result is `Σ_j a_ij (v_i - v_j)`.
    pub fn laplacian_apply_into(&self, v: &[f64], width: usize, out: &mut [f64]) {
        debug_assert_eq!(v.len(), self.n * width);
        debug_assert_eq!(out.len(), self.n * width);
        for i in 0..self.n {
            let vi = &v[i * width..(i + 1) * width];
            let oi = &mut out[i * width..(i + 1) * width];
            oi.fill(0.0);
            for &(j, w) in &self.neighbors[i] {
                let vj = &v[j * width..(j + 1) * width];
                for k in 0..width {
                    oi[k] += w * (vi[k] - vj[k]);
                }
            }
        }
    }

    pub fn laplacian_apply(&self, v: &[f64], width: usize) -> Result<Vec<f64>> {
        if v.len() != self.n * width {
            return Err(Error::dim("laplacian_apply input", self.n * width, v.len()));
        }
        let mut out = vec![0.0; v.len()];
        self.laplacian_apply_into(v, width, &mut out);
        Ok(out)
    }

    /// Breadth-first sweep over positive-weight edges from node 0.
    pub fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        let mut count = 1;
        while let Some(i) = queue.pop_front() {
            for &(j, _) in &self.neighbors[i] {
                if !seen[j] {
                    seen[j] = true;
                    count += 1;
                    queue.push_back(j);
                }
            }
        }
        count == self.n
    }

    pub fn to_doc(&self) -> GraphDoc {
        GraphDoc {
            n_agents: self.n,
            edges: self.edges(),
        }
    }
}

impl TryFrom<GraphDoc> for Graph {
    type Error = Error;

    fn try_from(doc: GraphDoc) -> Result<Self> {
        Graph::from_edges(doc.n_agents, &doc.edges)
    }
}

impl From<Graph> for GraphDoc {
    fn from(g: Graph) -> Self {
        g.to_doc()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn three_cycle_laplacian() {
        let g = Graph::cycle(3).unwrap();
        let expected =
            Matrix::from_rows(&[vec![2.0, -1.0, -1.0], vec![-1.0, 2.0, -1.0], vec![-1.0, -1.0, 2.0]])
                .unwrap();
        assert_eq!(g.laplacian(), expected);
    }

    #[test]
    fn weighted_edge_laplacian() {
        let g = Graph::from_edges(2, &[Edge { i: 0, j: 1, weight: 2.0 }]).unwrap();
        let expected = Matrix::from_rows(&[vec![2.0, -2.0], vec![-2.0, 2.0]]).unwrap();
        assert_eq!(g.laplacian(), expected);
    }

    #[test]
    fn laplacian_rows_sum_to_zero() {
        let g = Graph::from_edges(
            4,
            &[
                Edge { i: 0, j: 1, weight: 0.5 },
                Edge { i: 1, j: 2, weight: 3.0 },
                Edge { i: 0, j: 3, weight: 1.25 },
            ],
        )
        .unwrap();
        let l = g.laplacian();
        for i in 0..4 {
            assert!(l.row(i).iter().sum::<f64>().abs() < 1e-15);
        }
    }

    #[test]
    fn consensus_vector_is_in_null_space() {
        let g = Graph::cycle(5).unwrap();
        let v: Vec<f64> = std::iter::repeat([1.5, -2.0]).take(5).flatten().collect();
        assert!(g.laplacian_apply(&v, 2).unwrap().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn two_agent_apply() {
        let g = Graph::cycle(2).unwrap();
        assert_eq!(g.laplacian_apply(&[1.0, 0.0], 1).unwrap(), vec![1.0, -1.0]);
    }

    #[test]
    fn apply_rejects_bad_width() {
        let g = Graph::cycle(3).unwrap();
        assert!(matches!(
            g.laplacian_apply(&[1.0, 2.0], 1),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn apply_matches_dense_kronecker_product() {
        // Oracle: materialize L ⊗ I_d and multiply.
        let n = 10;
        let d = 3;
        let g = Graph::cycle(n).unwrap();
        let l = g.laplacian();
        let mut kron = Matrix::zeros(n * d, n * d);
        for i in 0..n {
            for j in 0..n {
                for k in 0..d {
                    kron.set(i * d + k, j * d + k, l.get(i, j));
                }
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let v: Vec<f64> = (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let dense = kron.mul_vec(&v);
        let fast = g.laplacian_apply(&v, d).unwrap();
        for (a, b) in dense.iter().zip(&fast) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn connectivity() {
        assert!(Graph::cycle(10).unwrap().is_connected());
        assert!(Graph::cycle(1).unwrap().is_connected());
        let split = Graph::from_edges(
            4,
            &[Edge { i: 0, j: 1, weight: 1.0 }, Edge { i: 2, j: 3, weight: 1.0 }],
        )
        .unwrap();
        assert!(!split.is_connected());
    }

    #[test]
    fn invalid_weights_rejected() {
        assert!(Graph::from_dense(2, vec![0.0, 1.0, 2.0, 0.0]).is_err());
        assert!(Graph::from_dense(2, vec![0.0, -1.0, -1.0, 0.0]).is_err());
        assert!(Graph::from_dense(2, vec![1.0, 0.0, 0.0, 0.0]).is_err());
        assert!(Graph::from_edges(2, &[Edge { i: 0, j: 2, weight: 1.0 }]).is_err());
    }

    #[test]
    fn edge_list_round_trip_keeps_default_weight() {
        let g: Graph = serde_json::from_str(r#"{"n_agents":3,"edges":[{"i":0,"j":1},{"i":1,"j":2,"weight":2.5}]}"#)
            .unwrap();
        assert_eq!(g.weight(0, 1), 1.0);
        assert_eq!(g.weight(2, 1), 2.5);
        let back: Graph = serde_json::from_str(&serde_json::to_string(&g).unwrap()).unwrap();
        assert_eq!(back, g);
    }

    fn arb_graph() -> impl Strategy<Value = Graph> {
        (2usize..7).prop_flat_map(|n| {
            proptest::collection::vec(prop_oneof![Just(0.0), 0.1f64..3.0], n * (n - 1) / 2).prop_map(
                move |ws| {
                    let mut dense = vec![0.0; n * n];
                    let mut k = 0;
                    for i in 0..n {
                        for j in (i + 1)..n {
                            dense[i * n + j] = ws[k];
                            dense[j * n + i] = ws[k];
                            k += 1;
                        }
                    }
                    Graph::from_dense(n, dense).unwrap()
                },
            )
        })
    }

    proptest! {
        #[test]
        fn scalar_apply_equals_matrix_product(g in arb_graph(), seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let v: Vec<f64> = (0..g.n_agents()).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let a = g.laplacian().mul_vec(&v);
            let b = g.laplacian_apply(&v, 1).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn quadratic_form_is_nonnegative(g in arb_graph(), seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let v: Vec<f64> = (0..g.n_agents()).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let lv = g.laplacian_apply(&v, 1).unwrap();
            let q: f64 = v.iter().zip(&lv).map(|(a, b)| a * b).sum();
            prop_assert!(q >= -1e-12);
            // Equals Σ_{i<j} a_ij (v_i - v_j)², so zero exactly when v is
            // constant on every connected component.
            let explicit: f64 = g.edges().iter().map(|e| e.weight * (v[e.i] - v[e.j]).powi(2)).sum();
            prop_assert!((q - explicit).abs() <= 1e-9 * (1.0 + explicit));
        }
    }
}
