//! Generating functions, Bregman divergences and mirror maps.
//!
//! A mirror map sends a dual-space point `z` to the unique minimizer of
//! `-xᵀz + φ(x)` over the domain. Two generators are supported:
//!
//! * negative entropy on the unit simplex, whose mirror map is the softmax;
//! * half squared norm on any supported set, whose mirror map is the
//!   Euclidean projection.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{all_finite, dist};

/// Floor applied before taking logarithms of simplex coordinates.
pub const ENTROPY_FLOOR: f64 = 1e-300;

/// Slack allowed when testing membership of a domain.
pub const DOMAIN_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConstraintSet {
    UnitSimplex { dim: usize },
    Box { lower: Vec<f64>, upper: Vec<f64> },
    Ball { center: Vec<f64>, radius: f64 },
    NonnegativeOrthant { dim: usize },
}

impl ConstraintSet {
    pub fn validate(&self) -> Result<()> {
        match self {
            ConstraintSet::UnitSimplex { dim } | ConstraintSet::NonnegativeOrthant { dim } => {
                if *dim == 0 {
                    return Err(Error::InvalidSet("dimension must be positive".into()));
                }
            }
            ConstraintSet::Box { lower, upper } => {
                if lower.is_empty() || lower.len() != upper.len() {
                    return Err(Error::InvalidSet(format!(
                        "box bounds have lengths {} and {}",
                        lower.len(),
                        upper.len()
                    )));
                }
                if lower.iter().zip(upper).any(|(l, u)| !(l <= u) || !l.is_finite() || !u.is_finite()) {
                    return Err(Error::InvalidSet("box needs finite lower <= upper".into()));
                }
            }
            ConstraintSet::Ball { center, radius } => {
                if center.is_empty() || !all_finite(center) {
                    return Err(Error::InvalidSet("ball center must be finite and nonempty".into()));
                }
                if !(radius.is_finite() && *radius >= 0.0) {
                    return Err(Error::InvalidSet(format!("ball radius {radius} is invalid")));
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        match self {
            ConstraintSet::UnitSimplex { dim } | ConstraintSet::NonnegativeOrthant { dim } => *dim,
            ConstraintSet::Box { lower, .. } => lower.len(),
            ConstraintSet::Ball { center, .. } => center.len(),
        }
    }

    /// Largest constraint violation of `x` (zero when feasible).
    pub fn violation(&self, x: &[f64]) -> f64 {
        match self {
            ConstraintSet::UnitSimplex { .. } => {
                let neg = x.iter().map(|v| (-v).max(0.0)).fold(0.0, f64::max);
                let sum: f64 = x.iter().sum();
                neg.max((sum - 1.0).abs())
            }
            ConstraintSet::NonnegativeOrthant { .. } => {
                x.iter().map(|v| (-v).max(0.0)).fold(0.0, f64::max)
            }
            ConstraintSet::Box { lower, upper } => x
                .iter()
                .zip(lower.iter().zip(upper))
                .map(|(v, (l, u))| (l - v).max(v - u).max(0.0))
                .fold(0.0, f64::max),
            ConstraintSet::Ball { center, radius } => (dist(x, center) - radius).max(0.0),
        }
    }

    /// Per-coordinate bounds implied by the set (infinite for balls).
    pub fn coordinate_bounds(&self, k: usize) -> (f64, f64) {
        match self {
            ConstraintSet::UnitSimplex { .. } | ConstraintSet::NonnegativeOrthant { .. } => (0.0, f64::INFINITY),
            ConstraintSet::Box { lower, upper } => (lower[k], upper[k]),
            ConstraintSet::Ball { .. } => (f64::NEG_INFINITY, f64::INFINITY),
        }
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        x.len() == self.dim() && all_finite(x) && self.violation(x) <= tol
    }

    /// A point in the relative interior (uniform vector, box midpoint, ...).
    pub fn interior_point(&self) -> Vec<f64> {
        match self {
            ConstraintSet::UnitSimplex { dim } => vec![1.0 / *dim as f64; *dim],
            ConstraintSet::NonnegativeOrthant { dim } => vec![1.0; *dim],
            ConstraintSet::Box { lower, upper } => {
                lower.iter().zip(upper).map(|(l, u)| 0.5 * (l + u)).collect()
            }
            ConstraintSet::Ball { center, .. } => center.clone(),
        }
    }

    /// Euclidean projection `argmin_{x ∈ Ω} ‖x - z‖` using closed forms:
    /// sort-and-threshold for the simplex, clamping for boxes and the
    /// orthant, radial scaling for balls.
    pub fn project_into(&self, z: &[f64], out: &mut [f64], scratch: &mut Vec<f64>) {
        debug_assert_eq!(z.len(), self.dim());
        match self {
            ConstraintSet::UnitSimplex { .. } => project_simplex(z, out, scratch),
            ConstraintSet::NonnegativeOrthant { .. } => {
                for (o, v) in out.iter_mut().zip(z) {
                    *o = v.max(0.0);
                }
            }
            ConstraintSet::Box { lower, upper } => {
                for ((o, v), (l, u)) in out.iter_mut().zip(z).zip(lower.iter().zip(upper)) {
                    *o = v.clamp(*l, *u);
                }
            }
            ConstraintSet::Ball { center, radius } => {
                let r = dist(z, center);
                if r <= *radius {
                    out.copy_from_slice(z);
                } else {
                    let scale = radius / r;
                    for ((o, v), c) in out.iter_mut().zip(z).zip(center) {
                        *o = c + scale * (v - c);
                    }
                }
            }
        }
    }

    pub fn project(&self, z: &[f64]) -> Result<Vec<f64>> {
        euclidean_project(self, z)
    }
}

/// Checked Euclidean projection onto `set`.
pub fn euclidean_project(set: &ConstraintSet, z: &[f64]) -> Result<Vec<f64>> {
    if z.len() != set.dim() {
        return Err(Error::dim("euclidean_project", set.dim(), z.len()));
    }
    if !all_finite(z) {
        return Err(Error::NonFinite("euclidean_project input"));
    }
    let mut out = vec![0.0; z.len()];
    let mut scratch = Vec::new();
    set.project_into(z, &mut out, &mut scratch);
    Ok(out)
}

/// Projection onto the unit simplex by sorting and thresholding, O(n log n).
pub fn project_simplex(z: &[f64], out: &mut [f64], scratch: &mut Vec<f64>) {
    scratch.clear();
    scratch.extend_from_slice(z);
    scratch.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (k, &u) in scratch.iter().enumerate() {
        cumsum += u;
        let t = (cumsum - 1.0) / (k + 1) as f64;
        if u - t > 0.0 {
            theta = t;
        } else {
            break;
        }
    }
    for (o, v) in out.iter_mut().zip(z) {
        *o = (v - theta).max(0.0);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    /// `φ(x) = Σ x_k ln x_k` with `0 ln 0 = 0`.
    Entropy,
    /// `φ(x) = ½‖x‖²`.
    Quadratic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GeneratorDoc", into = "GeneratorDoc")]
pub struct GeneratingFunction {
    kind: GeneratorKind,
    domain: ConstraintSet,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GeneratorDoc {
    pub kind: GeneratorKind,
    pub domain: ConstraintSet,
}

impl TryFrom<GeneratorDoc> for GeneratingFunction {
    type Error = Error;

    fn try_from(doc: GeneratorDoc) -> Result<Self> {
        GeneratingFunction::new(doc.kind, doc.domain)
    }
}

impl From<GeneratingFunction> for GeneratorDoc {
    fn from(g: GeneratingFunction) -> Self {
        GeneratorDoc {
            kind: g.kind,
            domain: g.domain,
        }
    }
}

impl GeneratingFunction {
    pub fn new(kind: GeneratorKind, domain: ConstraintSet) -> Result<Self> {
        domain.validate()?;
        if kind == GeneratorKind::Entropy && !matches!(domain, ConstraintSet::UnitSimplex { .. }) {
            return Err(Error::IncompatibleGenerator);
        }
        Ok(GeneratingFunction { kind, domain })
    }

    pub fn entropy(dim: usize) -> Result<Self> {
        Self::new(GeneratorKind::Entropy, ConstraintSet::UnitSimplex { dim })
    }

    pub fn quadratic(domain: ConstraintSet) -> Result<Self> {
        Self::new(GeneratorKind::Quadratic, domain)
    }

    pub fn kind(&self) -> GeneratorKind {
        self.kind
    }

    pub fn domain(&self) -> &ConstraintSet {
        &self.domain
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    /// The same domain with the other generator, when compatible.
    pub fn with_kind(&self, kind: GeneratorKind) -> Result<Self> {
        Self::new(kind, self.domain.clone())
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match self.kind {
            GeneratorKind::Entropy => x
                .iter()
                .map(|&v| if v > 0.0 { v * v.ln() } else { 0.0 })
                .sum(),
            GeneratorKind::Quadratic => 0.5 * x.iter().map(|v| v * v).sum::<f64>(),
        }
    }

    /// `∇φ(x)`, the Bregman damping term. Entropy coordinates are floored
    /// at [`ENTROPY_FLOOR`] before the logarithm.
    pub fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        match self.kind {
            GeneratorKind::Entropy => {
                for (o, &v) in out.iter_mut().zip(x) {
                    *o = 1.0 + v.max(ENTROPY_FLOOR).ln();
                }
            }
            GeneratorKind::Quadratic => out.copy_from_slice(x),
        }
    }

    pub fn damping(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::dim("damping", self.dim(), x.len()));
        }
        let mut out = vec![0.0; x.len()];
        self.gradient_into(x, &mut out);
        Ok(out)
    }

    /// Unchecked mirror map for hot loops; `z` must be finite.
    pub fn mirror_map_into(&self, z: &[f64], out: &mut [f64], scratch: &mut Vec<f64>) {
        match self.kind {
            GeneratorKind::Entropy => softmax_into(z, out),
            GeneratorKind::Quadratic => self.domain.project_into(z, out, scratch),
        }
    }

    /// `Π^φ_Ω(z) = argmin_{x ∈ Ω} { -xᵀz + φ(x) }`.
    pub fn mirror_map(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.dim() {
            return Err(Error::dim("mirror_map", self.dim(), z.len()));
        }
        if !all_finite(z) {
            return Err(Error::NonFinite("mirror_map input"));
        }
        let mut out = vec![0.0; z.len()];
        let mut scratch = Vec::new();
        self.mirror_map_into(z, &mut out, &mut scratch);
        Ok(out)
    }

    /// Convex conjugate `φ*(z) = max_{x ∈ Ω} xᵀz - φ(x)`, evaluated at the
    /// mirror-map maximizer.
    pub fn conjugate(&self, z: &[f64]) -> Result<f64> {
        let x = self.mirror_map(z)?;
        Ok(crate::linalg::dot(&x, z) - self.value(&x))
    }

    /// `D_φ(x, y) = φ(x) - φ(y) - ∇φ(y)ᵀ(x - y)`.
    pub fn bregman_divergence(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        let n = self.dim();
        if x.len() != n {
            return Err(Error::dim("bregman_divergence x", n, x.len()));
        }
        if y.len() != n {
            return Err(Error::dim("bregman_divergence y", n, y.len()));
        }
        let violation = self.domain.violation(x).max(self.domain.violation(y));
        if !(violation <= DOMAIN_TOL) || !all_finite(x) || !all_finite(y) {
            return Err(Error::DomainViolation { violation });
        }
        let d = match self.kind {
            GeneratorKind::Entropy => x
                .iter()
                .zip(y)
                .map(|(&a, &b)| {
                    let b = b.max(ENTROPY_FLOOR);
                    let xlx = if a > 0.0 { a * (a / b).ln() } else { 0.0 };
                    xlx - a + b
                })
                .sum::<f64>(),
            GeneratorKind::Quadratic => 0.5 * dist(x, y).powi(2),
        };
        Ok(d.max(0.0))
    }
}

/// Softmax with max subtraction.
pub fn softmax_into(z: &[f64], out: &mut [f64]) {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &v) in out.iter_mut().zip(z) {
        *o = (v - m).exp();
        total += *o;
    }
    let inv = 1.0 / total;
    for o in out.iter_mut() {
        *o *= inv;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{dot, max_abs_diff};
    use proptest::prelude::*;

    fn approx(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && max_abs_diff(a, b) <= tol
    }

    #[test]
    fn entropy_map_of_zero_is_uniform() {
        let g = GeneratingFunction::entropy(5).unwrap();
        assert!(approx(&g.mirror_map(&[0.0; 5]).unwrap(), &[0.2; 5], 1e-15));
    }

    #[test]
    fn entropy_map_exact_softmax() {
        let g = GeneratingFunction::entropy(2).unwrap();
        let x = g.mirror_map(&[3f64.ln(), 0.0]).unwrap();
        assert!(approx(&x, &[0.75, 0.25], 1e-15));
    }

    #[test]
    fn quadratic_simplex_corner() {
        // KKT water-filling: θ = 1 from the single positive coordinate.
        let g = GeneratingFunction::quadratic(ConstraintSet::UnitSimplex { dim: 2 }).unwrap();
        assert!(approx(&g.mirror_map(&[2.0, 0.0]).unwrap(), &[1.0, 0.0], 1e-15));
    }

    #[test]
    fn entropy_needs_simplex() {
        let r = GeneratingFunction::new(GeneratorKind::Entropy, ConstraintSet::NonnegativeOrthant { dim: 2 });
        assert!(matches!(r, Err(Error::IncompatibleGenerator)));
    }

    #[test]
    fn non_finite_input_rejected() {
        let g = GeneratingFunction::entropy(2).unwrap();
        assert!(matches!(g.mirror_map(&[f64::NAN, 0.0]), Err(Error::NonFinite(_))));
        assert!(matches!(g.mirror_map(&[1.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn softmax_survives_large_inputs() {
        let g = GeneratingFunction::entropy(3).unwrap();
        let x = g.mirror_map(&[1000.0, 999.0, -1000.0]).unwrap();
        assert!(all_finite(&x));
        assert!((x.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn box_projection_clamps() {
        let set = ConstraintSet::Box {
            lower: vec![0.0, 0.0],
            upper: vec![1.0, 1.0],
        };
        assert_eq!(euclidean_project(&set, &[-1.0, 0.5]).unwrap(), vec![0.0, 0.5]);
    }

    #[test]
    fn simplex_interior_shift() {
        let set = ConstraintSet::UnitSimplex { dim: 2 };
        let x = euclidean_project(&set, &[0.6, 0.2]).unwrap();
        assert!(approx(&x, &[0.7, 0.3], 1e-15));
    }

    #[test]
    fn ball_and_orthant_projection() {
        let ball = ConstraintSet::Ball {
            center: vec![1.0, 0.0],
            radius: 1.0,
        };
        assert!(approx(&euclidean_project(&ball, &[4.0, 4.0]).unwrap(), &[1.6, 0.8], 1e-15));
        let orthant = ConstraintSet::NonnegativeOrthant { dim: 3 };
        assert_eq!(euclidean_project(&orthant, &[-1.0, 2.0, 0.0]).unwrap(), vec![0.0, 2.0, 0.0]);
    }

    #[test]
    fn bregman_examples() {
        let e = GeneratingFunction::entropy(2).unwrap();
        let d = e.bregman_divergence(&[0.5, 0.5], &[0.25, 0.75]).unwrap();
        assert!((d - 0.5 * (4.0f64 / 3.0).ln()).abs() < 1e-15);
        assert!((d - 0.143_841_036).abs() < 1e-8);
        assert_eq!(e.bregman_divergence(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);

        let q = GeneratingFunction::quadratic(ConstraintSet::Ball {
            center: vec![0.0, 0.0],
            radius: 10.0,
        })
        .unwrap();
        let d = q.bregman_divergence(&[1.0, 2.0], &[-1.0, 0.5]).unwrap();
        assert!((d - 0.5 * (4.0 + 2.25)).abs() < 1e-15);
    }

    #[test]
    fn bregman_rejects_points_off_the_domain() {
        let e = GeneratingFunction::entropy(2).unwrap();
        assert!(matches!(
            e.bregman_divergence(&[0.6, 0.6], &[0.5, 0.5]),
            Err(Error::DomainViolation { .. })
        ));
    }

    #[test]
    fn damping_examples() {
        let q = GeneratingFunction::quadratic(ConstraintSet::Ball {
            center: vec![0.0, 0.0],
            radius: 5.0,
        })
        .unwrap();
        assert_eq!(q.damping(&[3.0, -1.0]).unwrap(), vec![3.0, -1.0]);
        let e = GeneratingFunction::entropy(3).unwrap();
        let inv_e = (-1.0f64).exp();
        let g = e.damping(&[inv_e, 0.5, 0.5 - inv_e]).unwrap();
        assert!(g[0].abs() < 1e-15);
        // Clamp keeps the gradient finite at a zero coordinate.
        let g = e.damping(&[0.0, 0.5, 0.5]).unwrap();
        assert!(g[0].is_finite());
        assert!((g[0] - (1.0 + ENTROPY_FLOOR.ln())).abs() < 1e-9);
    }

    #[test]
    fn damping_matches_central_differences() {
        // Oracle: central differences of φ at interior points.
        let e = GeneratingFunction::entropy(4).unwrap();
        let x = [0.1, 0.2, 0.3, 0.4];
        let grad = e.damping(&x).unwrap();
        let h = 1e-6;
        for k in 0..4 {
            let mut xp = x;
            let mut xm = x;
            xp[k] += h;
            xm[k] -= h;
            let fd = (e.value(&xp) - e.value(&xm)) / (2.0 * h);
            assert!((fd - grad[k]).abs() < 1e-5, "k={k}: {fd} vs {}", grad[k]);
        }
    }

    #[test]
    fn zero_log_zero_convention() {
        let e = GeneratingFunction::entropy(3).unwrap();
        assert_eq!(e.value(&[1.0, 0.0, 0.0]), 0.0);
    }

    fn arb_set() -> impl Strategy<Value = ConstraintSet> {
        prop_oneof![
            (1usize..6).prop_map(|dim| ConstraintSet::UnitSimplex { dim }),
            (1usize..6).prop_map(|dim| ConstraintSet::NonnegativeOrthant { dim }),
            proptest::collection::vec((-2.0f64..0.0, 0.0f64..2.0), 1..6).prop_map(|b| ConstraintSet::Box {
                lower: b.iter().map(|p| p.0).collect(),
                upper: b.iter().map(|p| p.1).collect(),
            }),
            (proptest::collection::vec(-1.0f64..1.0, 1..6), 0.1f64..3.0)
                .prop_map(|(center, radius)| ConstraintSet::Ball { center, radius }),
        ]
    }

    fn arb_set_and_point() -> impl Strategy<Value = (ConstraintSet, Vec<f64>)> {
        arb_set().prop_flat_map(|s| {
            let n = s.dim();
            (Just(s), proptest::collection::vec(-10.0f64..10.0, n))
        })
    }

    proptest! {
        #[test]
        fn softmax_is_shift_invariant(z in proptest::collection::vec(-30.0f64..30.0, 1..8), c in -50.0f64..50.0) {
            let g = GeneratingFunction::entropy(z.len()).unwrap();
            let shifted: Vec<f64> = z.iter().map(|v| v + c).collect();
            let a = g.mirror_map(&z).unwrap();
            let b = g.mirror_map(&shifted).unwrap();
            prop_assert!(approx(&a, &b, 1e-12));
        }

        #[test]
        fn mirror_outputs_are_feasible((set, z) in arb_set_and_point()) {
            let g = GeneratingFunction::quadratic(set.clone()).unwrap();
            let x = g.mirror_map(&z).unwrap();
            prop_assert!(set.violation(&x) <= 1e-12);
            if let ConstraintSet::UnitSimplex { dim } = set {
                let e = GeneratingFunction::entropy(dim).unwrap();
                let x = e.mirror_map(&z).unwrap();
                prop_assert!(x.iter().all(|&v| v >= 0.0));
                prop_assert!((x.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            }
        }

        #[test]
        fn quadratic_map_is_projection((set, z) in arb_set_and_point()) {
            let g = GeneratingFunction::quadratic(set.clone()).unwrap();
            let a = g.mirror_map(&z).unwrap();
            let b = euclidean_project(&set, &z).unwrap();
            prop_assert!(approx(&a, &b, 1e-10));
        }

        #[test]
        fn projection_is_idempotent((set, z) in arb_set_and_point()) {
            let x = euclidean_project(&set, &z).unwrap();
            let xx = euclidean_project(&set, &x).unwrap();
            prop_assert!(approx(&x, &xx, 1e-12));
        }

        #[test]
        fn projection_satisfies_variational_inequality((set, z) in arb_set_and_point(), t in 0.0f64..1.0) {
            // (z - P(z))ᵀ(w - P(z)) <= 0 for w in the set; w from an interior mix.
            let x = euclidean_project(&set, &z).unwrap();
            let c = set.interior_point();
            let w: Vec<f64> = x.iter().zip(&c).map(|(a, b)| t * a + (1.0 - t) * b).collect();
            let lhs: f64 = z.iter().zip(&x).zip(&w).map(|((zi, xi), wi)| (zi - xi) * (wi - xi)).sum();
            prop_assert!(lhs <= 1e-9);
        }

        #[test]
        fn entropy_gradient_is_monotone(a in proptest::collection::vec(-5.0f64..5.0, 4), b in proptest::collection::vec(-5.0f64..5.0, 4)) {
            let g = GeneratingFunction::entropy(4).unwrap();
            let x = g.mirror_map(&a).unwrap();
            let y = g.mirror_map(&b).unwrap();
            let gx = g.damping(&x).unwrap();
            let gy = g.damping(&y).unwrap();
            let diff: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p - q).collect();
            let gdiff: Vec<f64> = gx.iter().zip(&gy).map(|(p, q)| p - q).collect();
            prop_assert!(dot(&diff, &gdiff) >= -1e-12);
        }

        #[test]
        fn bregman_is_nonnegative(a in proptest::collection::vec(-5.0f64..5.0, 3), b in proptest::collection::vec(-5.0f64..5.0, 3)) {
            let g = GeneratingFunction::entropy(3).unwrap();
            let x = g.mirror_map(&a).unwrap();
            let y = g.mirror_map(&b).unwrap();
            prop_assert!(g.bregman_divergence(&x, &y).unwrap() >= 0.0);
        }
    }
}
