//! Problem instances: a cost over R^d, a family of linear moment constraints
//! given as structured terms, per-term target distributions, and the latent
//! measure the generator pushes forward.
//!
//! A constraint term is `e·(h∘π)` with `e` a weight map and `π` a
//! transformation, both drawn from small enumerated families (so they are
//! Lipschitz by construction). The reference measure enters only through each
//! term's target: either a sampler for the pushforward `(π)∗μ`, or the marker
//! that the term's μ-side expectation vanishes identically (martingale
//! terms). No joint μ is ever materialized.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Array, AutodiffError, NodeId, Tape};
use crate::rng::Stream;

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("invalid problem: {0}")]
    Invalid(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

/// One-dimensional target distribution.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Density1D {
    Normal { mean: f64, std: f64 },
    NormalMixture { components: Vec<MixtureComponent> },
    StudentT { df: u32 },
    Uniform { lo: f64, hi: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: f64,
    pub std: f64,
}

impl Density1D {
    pub fn sample(&self, rng: &mut Stream) -> f64 {
        match self {
            Density1D::Normal { mean, std } => mean + std * rng.normal(),
            Density1D::NormalMixture { components } => {
                let u = rng.uniform();
                let total: f64 = components.iter().map(|c| c.weight).sum();
                let mut acc = 0.0;
                for c in components {
                    acc += c.weight / total;
                    if u < acc {
                        return c.mean + c.std * rng.normal();
                    }
                }
                let last = components.last().expect("nonempty mixture");
                last.mean + last.std * rng.normal()
            }
            Density1D::StudentT { df } => rng.student_t(*df),
            Density1D::Uniform { lo, hi } => rng.uniform_in(*lo, *hi),
        }
    }

    fn validate(&self) -> Result<(), ProblemError> {
        match self {
            Density1D::Normal { std, .. } if *std <= 0.0 => {
                Err(ProblemError::Invalid("normal std must be positive".into()))
            }
            Density1D::NormalMixture { components } => {
                if components.is_empty() {
                    return Err(ProblemError::Invalid("empty mixture".into()));
                }
                if components.iter().any(|c| c.weight <= 0.0 || c.std <= 0.0) {
                    return Err(ProblemError::Invalid("mixture weights/stds must be positive".into()));
                }
                Ok(())
            }
            // Variance exists only for df > 2.
            Density1D::StudentT { df } if *df <= 2 => {
                Err(ProblemError::Invalid("student-t needs df > 2".into()))
            }
            Density1D::Uniform { lo, hi } if lo >= hi => {
                Err(ProblemError::Invalid("uniform needs lo < hi".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Product sampler over R^{d_j}, one density per coordinate.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TargetSampler {
    pub dims: Vec<Density1D>,
}

impl TargetSampler {
    pub fn dim(&self) -> usize {
        self.dims.len()
    }

    pub fn sample(&self, n: usize, rng: &mut Stream) -> Array {
        let d = self.dims.len();
        let mut data = Vec::with_capacity(n * d);
        for _ in 0..n {
            for density in &self.dims {
                data.push(density.sample(rng));
            }
        }
        Array::matrix(n, d, data).expect("sized")
    }
}

/// The μ-side of a term: a sampler for the pushforward target, or the marker
/// that the expectation is identically zero for every discriminator.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetSide {
    Sampler { sampler: TargetSampler },
    AnalyticZero,
}

/// The weight map `e` of a term.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum WeightKind {
    /// e ≡ 1.
    One,
    /// e(x) = x_plus − x_minus (martingale-type weights).
    CoordDiff { plus: usize, minus: usize },
}

/// The transformation `π` of a term.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TransformKind {
    /// Coordinate projection onto the listed coordinates.
    Coords { coords: Vec<usize> },
    /// x ↦ x_plus − x_minus, one-dimensional image.
    CoordDiff { plus: usize, minus: usize },
    Identity,
}

impl TransformKind {
    pub fn image_dim(&self, ambient: usize) -> usize {
        match self {
            TransformKind::Coords { coords } => coords.len(),
            TransformKind::CoordDiff { .. } => 1,
            TransformKind::Identity => ambient,
        }
    }

    pub fn on_tape(&self, tape: &mut Tape, x: NodeId) -> Result<NodeId, AutodiffError> {
        match self {
            TransformKind::Coords { coords } => tape.cols(x, coords.clone()),
            TransformKind::CoordDiff { plus, minus } => {
                let p = tape.cols(x, vec![*plus])?;
                let m = tape.cols(x, vec![*minus])?;
                tape.sub(p, m)
            }
            TransformKind::Identity => Ok(x),
        }
    }

    pub fn apply_rows(&self, x: &Array) -> Array {
        let (n, d) = x.dims2();
        match self {
            TransformKind::Coords { coords } => {
                let mut data = Vec::with_capacity(n * coords.len());
                for i in 0..n {
                    let row = x.row(i);
                    data.extend(coords.iter().map(|&c| row[c]));
                }
                Array::matrix(n, coords.len(), data).expect("sized")
            }
            TransformKind::CoordDiff { plus, minus } => {
                let data = (0..n).map(|i| x.row(i)[*plus] - x.row(i)[*minus]).collect();
                Array::matrix(n, 1, data).expect("sized")
            }
            TransformKind::Identity => Array::matrix(n, d, x.data().to_vec()).expect("sized"),
        }
    }
}

impl WeightKind {
    /// Build e(x) as an `n × 1` node, or `None` for the constant 1.
    pub fn on_tape(&self, tape: &mut Tape, x: NodeId) -> Result<Option<NodeId>, AutodiffError> {
        match self {
            WeightKind::One => Ok(None),
            WeightKind::CoordDiff { plus, minus } => {
                let p = tape.cols(x, vec![*plus])?;
                let m = tape.cols(x, vec![*minus])?;
                Ok(Some(tape.sub(p, m)?))
            }
        }
    }

    pub fn apply_rows(&self, x: &Array) -> Option<Vec<f64>> {
        match self {
            WeightKind::One => None,
            WeightKind::CoordDiff { plus, minus } => {
                let (n, _) = x.dims2();
                Some((0..n).map(|i| x.row(i)[*plus] - x.row(i)[*minus]).collect())
            }
        }
    }
}

/// One constraint term `e·(h∘π)` with its target side.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ConstraintTerm {
    pub weight: WeightKind,
    pub transform: TransformKind,
    pub target: TargetSide,
}

impl ConstraintTerm {
    pub fn image_dim(&self, ambient: usize) -> usize {
        self.transform.image_dim(ambient)
    }
}

/// Scalar expression over coordinates, for user-specified costs.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum CostExpr {
    Coord { index: usize },
    Const { value: f64 },
    Add { lhs: Box<CostExpr>, rhs: Box<CostExpr> },
    Sub { lhs: Box<CostExpr>, rhs: Box<CostExpr> },
    Mul { lhs: Box<CostExpr>, rhs: Box<CostExpr> },
    Neg { arg: Box<CostExpr> },
    PositivePart { arg: Box<CostExpr> },
    Square { arg: Box<CostExpr> },
}

impl CostExpr {
    pub fn eval_row(&self, row: &[f64]) -> f64 {
        match self {
            CostExpr::Coord { index } => row[*index],
            CostExpr::Const { value } => *value,
            CostExpr::Add { lhs, rhs } => lhs.eval_row(row) + rhs.eval_row(row),
            CostExpr::Sub { lhs, rhs } => lhs.eval_row(row) - rhs.eval_row(row),
            CostExpr::Mul { lhs, rhs } => lhs.eval_row(row) * rhs.eval_row(row),
            CostExpr::Neg { arg } => -arg.eval_row(row),
            CostExpr::PositivePart { arg } => arg.eval_row(row).max(0.0),
            CostExpr::Square { arg } => {
                let v = arg.eval_row(row);
                v * v
            }
        }
    }

    fn on_tape(&self, tape: &mut Tape, x: NodeId, n: usize) -> Result<NodeId, AutodiffError> {
        match self {
            CostExpr::Coord { index } => tape.cols(x, vec![*index]),
            CostExpr::Const { value } => {
                Ok(tape.input(Array::matrix(n, 1, vec![*value; n]).expect("sized")))
            }
            CostExpr::Add { lhs, rhs } => {
                let (a, b) = (lhs.on_tape(tape, x, n)?, rhs.on_tape(tape, x, n)?);
                tape.add(a, b)
            }
            CostExpr::Sub { lhs, rhs } => {
                let (a, b) = (lhs.on_tape(tape, x, n)?, rhs.on_tape(tape, x, n)?);
                tape.sub(a, b)
            }
            CostExpr::Mul { lhs, rhs } => {
                let (a, b) = (lhs.on_tape(tape, x, n)?, rhs.on_tape(tape, x, n)?);
                tape.mul(a, b)
            }
            CostExpr::Neg { arg } => {
                let a = arg.on_tape(tape, x, n)?;
                Ok(tape.scale(a, -1.0))
            }
            CostExpr::PositivePart { arg } => {
                let a = arg.on_tape(tape, x, n)?;
                Ok(tape.relu(a))
            }
            CostExpr::Square { arg } => {
                let a = arg.on_tape(tape, x, n)?;
                Ok(tape.square(a))
            }
        }
    }

    fn max_coord(&self) -> usize {
        match self {
            CostExpr::Coord { index } => *index,
            CostExpr::Const { .. } => 0,
            CostExpr::Add { lhs, rhs } | CostExpr::Sub { lhs, rhs } | CostExpr::Mul { lhs, rhs } => {
                lhs.max_coord().max(rhs.max_coord())
            }
            CostExpr::Neg { arg } | CostExpr::PositivePart { arg } | CostExpr::Square { arg } => {
                arg.max_coord()
            }
        }
    }
}

/// The objective integrand.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CostKind {
    /// (x₁ + x₂)⁺ on R².
    SumPositivePart,
    /// (x₂ − x₁)⁺ on R².
    DiffPositivePart,
    /// −Σᵢ (xᵢ − x_{i+d/2})², the first half of the coordinates against the
    /// second half.
    NegSquaredDistance,
    /// User scalar expression over coordinates.
    Expr { expr: CostExpr },
}

impl CostKind {
    pub fn eval_row(&self, row: &[f64]) -> f64 {
        match self {
            CostKind::SumPositivePart => (row[0] + row[1]).max(0.0),
            CostKind::DiffPositivePart => (row[1] - row[0]).max(0.0),
            CostKind::NegSquaredDistance => {
                let half = row.len() / 2;
                -(0..half).map(|i| (row[i] - row[i + half]).powi(2)).sum::<f64>()
            }
            CostKind::Expr { expr } => expr.eval_row(row),
        }
    }

    /// Per-sample cost as an `n × 1` node.
    pub fn on_tape(&self, tape: &mut Tape, x: NodeId) -> Result<NodeId, AutodiffError> {
        let (n, d) = {
            let v = tape.value(x);
            (v.shape()[0], v.shape()[1])
        };
        match self {
            CostKind::SumPositivePart => {
                let a = tape.cols(x, vec![0])?;
                let b = tape.cols(x, vec![1])?;
                let s = tape.add(a, b)?;
                Ok(tape.relu(s))
            }
            CostKind::DiffPositivePart => {
                let a = tape.cols(x, vec![1])?;
                let b = tape.cols(x, vec![0])?;
                let s = tape.sub(a, b)?;
                Ok(tape.relu(s))
            }
            CostKind::NegSquaredDistance => {
                let half = d / 2;
                let first = tape.cols(x, (0..half).collect())?;
                let second = tape.cols(x, (half..2 * half).collect())?;
                let diff = tape.sub(first, second)?;
                let sq = tape.square(diff);
                let rs = tape.row_sum(sq)?;
                Ok(tape.scale(rs, -1.0))
            }
            CostKind::Expr { expr } => expr.on_tape(tape, x, n),
        }
    }

    fn validate(&self, ambient: usize) -> Result<(), ProblemError> {
        match self {
            CostKind::SumPositivePart | CostKind::DiffPositivePart if ambient != 2 => {
                Err(ProblemError::Invalid("this cost needs ambient dimension 2".into()))
            }
            CostKind::NegSquaredDistance if ambient % 2 != 0 => {
                Err(ProblemError::Invalid("squared-distance cost needs even dimension".into()))
            }
            CostKind::Expr { expr } if expr.max_coord() >= ambient => {
                Err(ProblemError::Invalid("cost expression indexes beyond the dimension".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Latent measure the generator pushes forward.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LatentKind {
    /// Uniform on [−1, 1]^K.
    UniformCube,
    StandardNormal,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct LatentSpec {
    pub dim: usize,
    pub kind: LatentKind,
}

impl LatentSpec {
    pub fn sample(&self, n: usize, rng: &mut Stream) -> Array {
        let mut data = Vec::with_capacity(n * self.dim);
        for _ in 0..n * self.dim {
            data.push(match self.kind {
                LatentKind::UniformCube => rng.uniform_in(-1.0, 1.0),
                LatentKind::StandardNormal => rng.normal(),
            });
        }
        Array::matrix(n, self.dim, data).expect("sized")
    }
}

/// A full problem instance.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ProblemInstance {
    /// Ambient dimension d of the candidate measure.
    pub dim: usize,
    pub cost: CostKind,
    pub terms: Vec<ConstraintTerm>,
    pub latent: LatentSpec,
    #[serde(default)]
    pub support_box: Option<Vec<(f64, f64)>>,
    /// Report −value instead of value (distance-style objectives).
    #[serde(default)]
    pub negate_reported_value: bool,
}

impl ProblemInstance {
    pub fn validate(&self) -> Result<(), ProblemError> {
        if self.terms.is_empty() {
            return Err(ProblemError::Invalid("at least one constraint term".into()));
        }
        self.cost.validate(self.dim)?;
        if self.latent.dim == 0 {
            return Err(ProblemError::Invalid("latent dimension must be positive".into()));
        }
        for (j, term) in self.terms.iter().enumerate() {
            let d_j = term.image_dim(self.dim);
            match &term.target {
                TargetSide::Sampler { sampler } => {
                    if sampler.dim() != d_j {
                        return Err(ProblemError::Invalid(format!(
                            "term {j}: sampler dimension {} does not match image dimension {d_j}",
                            sampler.dim()
                        )));
                    }
                    // Sampler targets represent the pushforward (π)∗μ, which
                    // only stands in for the μ-side when the weight is 1.
                    if !matches!(term.weight, WeightKind::One) {
                        return Err(ProblemError::Invalid(format!(
                            "term {j}: sampler targets need unit weight"
                        )));
                    }
                    for density in &sampler.dims {
                        density.validate()?;
                    }
                }
                TargetSide::AnalyticZero => {
                    // Only martingale-type terms may drop the μ-side exactly.
                    if !matches!(term.weight, WeightKind::CoordDiff { .. }) {
                        return Err(ProblemError::Invalid(format!(
                            "term {j}: analytic_zero needs a martingale-type weight"
                        )));
                    }
                }
            }
            let check_coord = |c: usize| {
                if c >= self.dim {
                    Err(ProblemError::Invalid(format!("term {j}: coordinate {c} out of range")))
                } else {
                    Ok(())
                }
            };
            match &term.transform {
                TransformKind::Coords { coords } => {
                    for &c in coords {
                        check_coord(c)?;
                    }
                }
                TransformKind::CoordDiff { plus, minus } => {
                    check_coord(*plus)?;
                    check_coord(*minus)?;
                }
                TransformKind::Identity => {}
            }
            if let WeightKind::CoordDiff { plus, minus } = &term.weight {
                check_coord(*plus)?;
                check_coord(*minus)?;
            }
        }
        if let Some(b) = &self.support_box {
            if b.len() != self.dim {
                return Err(ProblemError::Invalid("support box dimension mismatch".into()));
            }
        }
        Ok(())
    }

    /// Draw the μ-side batch of a term; `None` marks an analytic-zero term.
    pub fn sample_mu_side(&self, term: usize, n: usize, rng: &mut Stream) -> Option<Array> {
        match &self.terms[term].target {
            TargetSide::Sampler { sampler } => Some(sampler.sample(n, rng)),
            TargetSide::AnalyticZero => None,
        }
    }
}

fn normal(mean: f64, std: f64) -> Density1D {
    Density1D::Normal { mean, std }
}

fn sampler_term(transform: TransformKind, dims: Vec<Density1D>) -> ConstraintTerm {
    ConstraintTerm {
        weight: WeightKind::One,
        transform,
        target: TargetSide::Sampler { sampler: TargetSampler { dims } },
    }
}

fn coord(c: usize) -> TransformKind {
    TransformKind::Coords { coords: vec![c] }
}

/// Two-marginal optimal transport on R².
pub fn preset_ot(mu1: Density1D, mu2: Density1D, cost: CostKind) -> ProblemInstance {
    ProblemInstance {
        dim: 2,
        cost,
        terms: vec![
            sampler_term(coord(0), vec![mu1]),
            sampler_term(coord(1), vec![mu2]),
        ],
        latent: LatentSpec { dim: 2, kind: LatentKind::UniformCube },
        support_box: None,
        negate_reported_value: false,
    }
}

/// Multi-marginal optimal transport: one coordinate projection per marginal.
pub fn preset_multi_marginal(marginals: Vec<Density1D>, cost: CostKind) -> ProblemInstance {
    let d = marginals.len();
    ProblemInstance {
        dim: d,
        cost,
        terms: marginals
            .into_iter()
            .enumerate()
            .map(|(i, m)| sampler_term(coord(i), vec![m]))
            .collect(),
        latent: LatentSpec { dim: d, kind: LatentKind::UniformCube },
        support_box: None,
        negate_reported_value: false,
    }
}

/// Optimal transport with a distribution constraint on x₂ − x₁: normal
/// marginals with standard deviation 2, Student-t(8) difference law, cost
/// (x₁ + x₂)⁺.
pub fn preset_dcot() -> ProblemInstance {
    ProblemInstance {
        dim: 2,
        cost: CostKind::SumPositivePart,
        terms: vec![
            sampler_term(coord(0), vec![normal(0.0, 2.0)]),
            sampler_term(coord(1), vec![normal(0.0, 2.0)]),
            sampler_term(
                TransformKind::CoordDiff { plus: 1, minus: 0 },
                vec![Density1D::StudentT { df: 8 }],
            ),
        ],
        latent: LatentSpec { dim: 2, kind: LatentKind::UniformCube },
        support_box: None,
        negate_reported_value: false,
    }
}

/// Martingale optimal transport: normal-mixture marginals, the conditional
/// mean constraint as an analytic-zero term with e(x) = x₂ − x₁ and
/// π(x) = x₁, and cost (x₂ − x₁)⁺.
pub fn preset_mot() -> ProblemInstance {
    let mu1 = Density1D::NormalMixture {
        components: vec![
            MixtureComponent { weight: 0.5, mean: -1.3, std: 0.5 },
            MixtureComponent { weight: 0.5, mean: 0.8, std: 0.7 },
        ],
    };
    let mu2 = Density1D::NormalMixture {
        components: vec![
            MixtureComponent { weight: 0.5, mean: -1.3, std: 1.1 },
            MixtureComponent { weight: 0.5, mean: 0.8, std: 1.3 },
        ],
    };
    ProblemInstance {
        dim: 2,
        cost: CostKind::DiffPositivePart,
        terms: vec![
            sampler_term(coord(0), vec![mu1]),
            sampler_term(coord(1), vec![mu2]),
            ConstraintTerm {
                weight: WeightKind::CoordDiff { plus: 1, minus: 0 },
                transform: coord(0),
                target: TargetSide::AnalyticZero,
            },
        ],
        latent: LatentSpec { dim: 2, kind: LatentKind::UniformCube },
        support_box: None,
        negate_reported_value: false,
    }
}

/// Squared 2-Wasserstein distance between uncorrelated Gaussians in R^d with
/// variances 1 and 4. The optimum of the maximization is −W₂², so the
/// reported value is negated; the exact answer is d.
pub fn preset_w2(d: usize) -> ProblemInstance {
    ProblemInstance {
        dim: 2 * d,
        cost: CostKind::NegSquaredDistance,
        terms: vec![
            sampler_term(
                TransformKind::Coords { coords: (0..d).collect() },
                vec![normal(0.0, 1.0); d],
            ),
            sampler_term(
                TransformKind::Coords { coords: (d..2 * d).collect() },
                vec![normal(0.0, 2.0); d],
            ),
        ],
        latent: LatentSpec { dim: 2 * d, kind: LatentKind::UniformCube },
        support_box: None,
        negate_reported_value: true,
    }
}
