//! Discrete ground truth: grid discretizations of the transport problems as
//! finite linear programs, solved by a dense simplex, plus closed-form and
//! quadrature references for one-dimensional cases.
//!
//! Marginals are discretized by equal-mass quantile binning with atoms at
//! conditional cell means, which preserves means exactly — the property the
//! martingale problem's feasibility (convex order) hinges on.

pub mod dist;
pub mod simplex;

use serde::Serialize;
use thiserror::Error;

use crate::problems::{CostKind, Density1D};
use dist::{discretize, Discretized1D};
use simplex::{solve, EqualityLp, SimplexError, SimplexResult, SimplexStatus};

/// Keep dense tableaus at desk scale.
const MAX_VARIABLES: usize = 50_000;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error(transparent)]
    Simplex(#[from] SimplexError),
    #[error("problem too large: {0}")]
    TooLarge(String),
    #[error("marginals are not in convex order: call-price violation {violation:.3e} at strike {strike:.4}")]
    ConvexOrder { strike: f64, violation: f64 },
    #[error("means differ by {0:.3e}; martingale constraints need equal means")]
    MeanMismatch(f64),
    #[error("bad oracle input: {0}")]
    BadInput(String),
}

/// How many constraint rows survive elimination.
#[derive(Debug, Clone, Serialize)]
pub struct RankReport {
    pub rows: usize,
    pub columns: usize,
    pub rank: usize,
}

/// A discretized instance: objective over grid atoms, equality rows
/// (including the normalization row), and the grid itself for reporting.
pub struct DiscreteProblem {
    pub lp: EqualityLp,
    pub rank: RankReport,
    pub grid_x: Vec<f64>,
    pub grid_y: Vec<f64>,
    /// Starting basis for plain transport (northwest-corner staircase).
    pub warm_basis: Option<Vec<usize>>,
}

impl DiscreteProblem {
    pub fn solve(&self) -> Result<SimplexResult, OracleError> {
        Ok(match &self.warm_basis {
            Some(basis) => simplex::solve_with_basis(&self.lp, basis)?,
            None => solve(&self.lp)?,
        })
    }
}

/// Northwest-corner staircase: a (degenerate where masses tie) starting
/// basis for the transport polytope, g1 + g2 − 1 cells.
fn northwest_corner(masses1: &[f64], masses2: &[f64], cols2: usize) -> Vec<usize> {
    let mut cells = Vec::with_capacity(masses1.len() + masses2.len() - 1);
    let (mut i, mut j) = (0, 0);
    let mut rem1 = masses1[0];
    let mut rem2 = masses2[0];
    loop {
        cells.push(i * cols2 + j);
        if i + 1 == masses1.len() && j + 1 == masses2.len() {
            break;
        }
        let step = rem1.min(rem2);
        rem1 -= step;
        rem2 -= step;
        // On ties advance only one side: the extra zero-mass cell keeps the
        // staircase at full basis size.
        if rem1 <= 1e-15 && i + 1 < masses1.len() {
            i += 1;
            rem1 = masses1[i];
        } else if j + 1 < masses2.len() {
            j += 1;
            rem2 = masses2[j];
        } else {
            i += 1;
            rem1 = masses1[i];
        }
    }
    cells
}

fn numerical_rank(rows: &[Vec<f64>]) -> usize {
    let m = rows.len();
    if m == 0 {
        return 0;
    }
    let n = rows[0].len();
    let mut a: Vec<Vec<f64>> = rows.to_vec();
    let mut rank = 0;
    let mut col = 0;
    while rank < m && col < n {
        let (best_row, best_val) = (rank..m)
            .map(|r| (r, a[r][col].abs()))
            .max_by(|x, y| x.1.total_cmp(&y.1))
            .unwrap();
        if best_val < 1e-9 {
            col += 1;
            continue;
        }
        a.swap(rank, best_row);
        for r in rank + 1..m {
            let f = a[r][col] / a[rank][col];
            if f != 0.0 {
                for c in col..n {
                    a[r][c] -= f * a[rank][c];
                }
            }
        }
        rank += 1;
        col += 1;
    }
    rank
}

fn check_size(vars: usize) -> Result<(), OracleError> {
    if vars > MAX_VARIABLES {
        return Err(OracleError::TooLarge(format!(
            "{vars} variables exceeds the dense-simplex cap of {MAX_VARIABLES}"
        )));
    }
    Ok(())
}

/// Transport LP over the product grid: marginal rows for both sides plus the
/// normalization row.
pub fn build_ot(
    mu1: &Discretized1D,
    mu2: &Discretized1D,
    cost: &CostKind,
) -> Result<DiscreteProblem, OracleError> {
    let (g1, g2) = (mu1.points.len(), mu2.points.len());
    let vars = g1 * g2;
    check_size(vars)?;
    let mut objective = Vec::with_capacity(vars);
    for &x in &mu1.points {
        for &y in &mu2.points {
            objective.push(cost.eval_row(&[x, y]));
        }
    }
    let mut rows = Vec::with_capacity(g1 + g2 + 1);
    let mut rhs = Vec::with_capacity(g1 + g2 + 1);
    for i in 0..g1 {
        let mut row = vec![0.0; vars];
        for j in 0..g2 {
            row[i * g2 + j] = 1.0;
        }
        rows.push(row);
        rhs.push(mu1.masses[i]);
    }
    for j in 0..g2 {
        let mut row = vec![0.0; vars];
        for i in 0..g1 {
            row[i * g2 + j] = 1.0;
        }
        rows.push(row);
        rhs.push(mu2.masses[j]);
    }
    rows.push(vec![1.0; vars]);
    rhs.push(1.0);
    let rank = RankReport { rows: rows.len(), columns: vars, rank: numerical_rank(&rows) };
    let warm = northwest_corner(&mu1.masses, &mu2.masses, g2);
    Ok(DiscreteProblem {
        lp: EqualityLp { objective, rows, rhs },
        rank,
        grid_x: mu1.points.clone(),
        grid_y: mu2.points.clone(),
        warm_basis: Some(warm),
    })
}

/// Verify equal means and the integrated-call-price ordering of two
/// discretized marginals (necessary and sufficient for a martingale coupling
/// to exist between them).
pub fn check_convex_order(
    mu1: &Discretized1D,
    mu2: &Discretized1D,
) -> Result<(), OracleError> {
    let mean_gap = (mu1.mean() - mu2.mean()).abs();
    if mean_gap > 1e-8 {
        return Err(OracleError::MeanMismatch(mean_gap));
    }
    let mut worst: Option<(f64, f64)> = None;
    for &strike in mu1.points.iter().chain(&mu2.points) {
        let violation = mu1.call_price(strike) - mu2.call_price(strike);
        if violation > 1e-10 && worst.map_or(true, |(_, v)| violation > v) {
            worst = Some((strike, violation));
        }
    }
    match worst {
        Some((strike, violation)) => Err(OracleError::ConvexOrder { strike, violation }),
        None => Ok(()),
    }
}

/// Martingale transport LP: the OT rows plus one conditional-mean row per
/// first-marginal atom. Aborts with diagnostics if the discretized marginals
/// fail the convex-order pre-check.
pub fn build_mot(
    mu1: &Discretized1D,
    mu2: &Discretized1D,
    cost: &CostKind,
) -> Result<DiscreteProblem, OracleError> {
    check_convex_order(mu1, mu2)?;
    let base = build_ot(mu1, mu2, cost)?;
    let (g1, g2) = (mu1.points.len(), mu2.points.len());
    let vars = g1 * g2;
    let EqualityLp { objective, mut rows, mut rhs } = base.lp;
    for i in 0..g1 {
        let mut row = vec![0.0; vars];
        for j in 0..g2 {
            row[i * g2 + j] = mu2.points[j] - mu1.points[i];
        }
        rows.push(row);
        rhs.push(0.0);
    }
    let rank = RankReport { rows: rows.len(), columns: vars, rank: numerical_rank(&rows) };
    Ok(DiscreteProblem {
        lp: EqualityLp { objective, rows, rhs },
        rank,
        grid_x: base.grid_x,
        grid_y: base.grid_y,
        warm_basis: None,
    })
}

/// Transport with a distribution constraint on the difference x₂ − x₁:
/// the OT rows plus paired inequality rows binning the difference law into
/// equal-mass quantile bins of the target, each matched within `bin_tol`.
pub fn build_dcot(
    mu1: &Discretized1D,
    mu2: &Discretized1D,
    difference_law: &Density1D,
    difference_bins: usize,
    bin_tol: f64,
    cost: &CostKind,
) -> Result<DiscreteProblem, OracleError> {
    if difference_bins < 2 {
        return Err(OracleError::BadInput("need at least two difference bins".into()));
    }
    let (g1, g2) = (mu1.points.len(), mu2.points.len());
    let vars = g1 * g2;
    let slacks = 2 * difference_bins;
    check_size(vars + slacks)?;
    let base = build_ot(mu1, mu2, cost)?;
    let EqualityLp { mut objective, rows: base_rows, rhs: base_rhs } = base.lp;
    objective.extend(std::iter::repeat(0.0).take(slacks));
    let total = vars + slacks;
    let mut rows: Vec<Vec<f64>> = base_rows
        .into_iter()
        .map(|mut r| {
            r.extend(std::iter::repeat(0.0).take(slacks));
            r
        })
        .collect();
    let mut rhs = base_rhs;

    // Equal-mass bins with edges at the target quantiles.
    let mass = 1.0 / difference_bins as f64;
    let edges: Vec<f64> = (1..difference_bins)
        .map(|k| dist::density_quantile(difference_law, k as f64 * mass))
        .collect();
    let bin_of = |d: f64| -> usize { edges.partition_point(|&e| e < d) };

    for b in 0..difference_bins {
        let mut indicator = vec![0.0; total];
        for i in 0..g1 {
            for j in 0..g2 {
                if bin_of(mu2.points[j] - mu1.points[i]) == b {
                    indicator[i * g2 + j] = 1.0;
                }
            }
        }
        // mass − tol ≤ Σ ν ≤ mass + tol as two slacked equalities.
        let mut upper = indicator.clone();
        upper[vars + 2 * b] = 1.0;
        rows.push(upper);
        rhs.push(mass + bin_tol);
        let mut lower = indicator;
        lower[vars + 2 * b + 1] = -1.0;
        rows.push(lower);
        rhs.push((mass - bin_tol).max(0.0));
    }
    let rank = RankReport { rows: rows.len(), columns: total, rank: numerical_rank(&rows) };
    Ok(DiscreteProblem {
        lp: EqualityLp { objective, rows, rhs },
        rank,
        grid_x: base.grid_x,
        grid_y: base.grid_y,
        warm_basis: None,
    })
}

/// The Lipschitz-relaxed transport value
///
///   sup_ν ∫f dν − L·(W₁(ν₁, μ₁) + W₁(ν₂, μ₂))
///
/// as a single LP: ν lives on the product grid, and per marginal one slack
/// per interior grid point dominates the CDF gap, entering the objective
/// with weight −L·Δx (the 1-D dual of W₁ as the L¹ distance between CDFs).
pub fn build_lipschitz_relaxation(
    mu1: &Discretized1D,
    mu2: &Discretized1D,
    lipschitz_constant: f64,
    cost: &CostKind,
) -> Result<DiscreteProblem, OracleError> {
    if lipschitz_constant < 0.0 {
        return Err(OracleError::BadInput("Lipschitz constant must be nonnegative".into()));
    }
    let (g1, g2) = (mu1.points.len(), mu2.points.len());
    let vars = g1 * g2;
    let n_s1 = g1.saturating_sub(1);
    let n_s2 = g2.saturating_sub(1);
    // Each CDF-gap bound |·| ≤ s needs two inequality rows, each slacked.
    let n_ineq = 2 * (n_s1 + n_s2);
    let total = vars + n_s1 + n_s2 + n_ineq;
    check_size(total)?;

    let mut objective = vec![0.0; total];
    for i in 0..g1 {
        for j in 0..g2 {
            objective[i * g2 + j] = cost.eval_row(&[mu1.points[i], mu2.points[j]]);
        }
    }
    for k in 0..n_s1 {
        objective[vars + k] = -lipschitz_constant * (mu1.points[k + 1] - mu1.points[k]);
    }
    for k in 0..n_s2 {
        objective[vars + n_s1 + k] = -lipschitz_constant * (mu2.points[k + 1] - mu2.points[k]);
    }

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut rhs: Vec<f64> = Vec::new();
    // Normalization.
    let mut norm = vec![0.0; total];
    for v in norm.iter_mut().take(vars) {
        *v = 1.0;
    }
    rows.push(norm);
    rhs.push(1.0);

    let mut slack_cursor = vars + n_s1 + n_s2;
    // s ≥ ±(F_ν(k) − F_μ(k)): s ∓ F_ν(k) − slack = ∓F_μ(k).
    let mut add_gap_rows = |marginal: usize, k: usize, s_col: usize, cum_mass: f64| {
        for sign in [1.0, -1.0] {
            let mut row = vec![0.0; total];
            row[s_col] = 1.0;
            for i in 0..g1 {
                for j in 0..g2 {
                    let in_prefix = if marginal == 0 { i <= k } else { j <= k };
                    if in_prefix {
                        row[i * g2 + j] = -sign;
                    }
                }
            }
            row[slack_cursor] = -1.0;
            slack_cursor += 1;
            rows.push(row);
            rhs.push(-sign * cum_mass);
        }
    };
    let mut cum = 0.0;
    for k in 0..n_s1 {
        cum += mu1.masses[k];
        add_gap_rows(0, k, vars + k, cum);
    }
    cum = 0.0;
    for k in 0..n_s2 {
        cum += mu2.masses[k];
        add_gap_rows(1, k, vars + n_s1 + k, cum);
    }

    let rank = RankReport { rows: rows.len(), columns: total, rank: numerical_rank(&rows) };
    Ok(DiscreteProblem {
        lp: EqualityLp { objective, rows, rhs },
        rank,
        grid_x: mu1.points.clone(),
        grid_y: mu2.points.clone(),
        warm_basis: None,
    })
}

/// Grid spec, value and solver evidence for reporting.
#[derive(Debug, Clone, Serialize)]
pub struct OracleReport {
    pub value: f64,
    pub status: String,
    pub pivots: usize,
    pub grid: (usize, usize),
    pub rank: RankReport,
    pub primal_residual: Option<f64>,
    pub duality_gap: Option<f64>,
}

fn report(problem: &DiscreteProblem, result: &SimplexResult) -> OracleReport {
    OracleReport {
        value: result.value,
        status: match result.status {
            SimplexStatus::Optimal => "optimal".into(),
            SimplexStatus::Infeasible => "infeasible".into(),
            SimplexStatus::Unbounded => "unbounded".into(),
        },
        pivots: result.pivots,
        grid: (problem.grid_x.len(), problem.grid_y.len()),
        rank: problem.rank.clone(),
        primal_residual: result.certificate.as_ref().map(|c| c.primal_residual),
        duality_gap: result.certificate.as_ref().map(|c| c.duality_gap),
    }
}

/// Discretize, build and solve plain OT.
pub fn discrete_ot(
    mu1: &Density1D,
    mu2: &Density1D,
    cost: &CostKind,
    grid1: usize,
    grid2: usize,
) -> Result<OracleReport, OracleError> {
    let p = build_ot(&discretize(mu1, grid1), &discretize(mu2, grid2), cost)?;
    let r = p.solve()?;
    Ok(report(&p, &r))
}

/// Discretize, pre-check convex order, build and solve martingale OT.
pub fn discrete_mot(
    mu1: &Density1D,
    mu2: &Density1D,
    cost: &CostKind,
    grid: usize,
) -> Result<OracleReport, OracleError> {
    let p = build_mot(&discretize(mu1, grid), &discretize(mu2, grid), cost)?;
    let r = p.solve()?;
    Ok(report(&p, &r))
}

/// Discretize, build and solve the distribution-constrained problem.
pub fn discrete_dcot(
    mu1: &Density1D,
    mu2: &Density1D,
    difference_law: &Density1D,
    cost: &CostKind,
    grid: usize,
    difference_bins: usize,
    bin_tol: f64,
) -> Result<OracleReport, OracleError> {
    let p = build_dcot(
        &discretize(mu1, grid),
        &discretize(mu2, grid),
        difference_law,
        difference_bins,
        bin_tol,
        cost,
    )?;
    let r = p.solve()?;
    Ok(report(&p, &r))
}

/// Discretize, build and solve the Lipschitz relaxation.
pub fn discrete_lipschitz_relaxation(
    mu1: &Density1D,
    mu2: &Density1D,
    cost: &CostKind,
    lipschitz_constant: f64,
    grid: usize,
) -> Result<OracleReport, OracleError> {
    let p = build_lipschitz_relaxation(
        &discretize(mu1, grid),
        &discretize(mu2, grid),
        lipschitz_constant,
        cost,
    )?;
    let r = p.solve()?;
    Ok(report(&p, &r))
}

/// Midpoint quadrature of u ↦ f(F₁⁻¹(u), F₂⁻¹(u)): the value of the
/// comonotone coupling, which is optimal for supermodular costs. Serves as
/// the independent reference for the 1-D transport LPs.
pub fn comonotone_value(
    mu1: &Density1D,
    mu2: &Density1D,
    cost: &CostKind,
    points: usize,
) -> f64 {
    let mut sum = 0.0;
    for k in 0..points {
        let u = (k as f64 + 0.5) / points as f64;
        let x = dist::density_quantile(mu1, u);
        let y = dist::density_quantile(mu2, u);
        sum += cost.eval_row(&[x, y]);
    }
    sum / points as f64
}

/// Closed-form maximum of −(x₁−x₂)² over couplings of two Gaussians:
/// −((m₁−m₂)² + (σ₁−σ₂)²), the negated squared 2-Wasserstein distance.
pub fn gaussian_w2_value(mean1: f64, std1: f64, mean2: f64, std2: f64) -> f64 {
    -((mean1 - mean2).powi(2) + (std1 - std2).powi(2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::MixtureComponent;

    fn normal(mean: f64, std: f64) -> Density1D {
        Density1D::Normal { mean, std }
    }

    fn mot_marginals() -> (Density1D, Density1D) {
        (
            Density1D::NormalMixture {
                components: vec![
                    MixtureComponent { weight: 0.5, mean: -1.3, std: 0.5 },
                    MixtureComponent { weight: 0.5, mean: 0.8, std: 0.7 },
                ],
            },
            Density1D::NormalMixture {
                components: vec![
                    MixtureComponent { weight: 0.5, mean: -1.3, std: 1.1 },
                    MixtureComponent { weight: 0.5, mean: 0.8, std: 1.3 },
                ],
            },
        )
    }

    #[test]
    fn ot_matches_comonotone_quadrature() {
        let (m1, m2) = (normal(0.0, 2.0), normal(0.0, 2.0));
        let cost = CostKind::SumPositivePart;
        let quad = comonotone_value(&m1, &m2, &cost, 20_000);
        // Closed form for this symmetric case: 2·E[X⁺] of N(0,4) = 4φ(0).
        let exact = 4.0 * dist::normal_pdf(0.0);
        assert!((quad - exact).abs() < 1e-3, "quad {quad} vs exact {exact}");
        let r = discrete_ot(&m1, &m2, &cost, 100, 100).unwrap();
        assert_eq!(r.status, "optimal");
        assert!((r.value - exact).abs() < 0.03, "lp {} vs exact {exact}", r.value);
    }

    #[test]
    fn identical_marginals_have_zero_squared_distance() {
        let m = normal(0.0, 1.0);
        let cost = CostKind::NegSquaredDistance;
        let r = discrete_ot(&m, &m, &cost, 60, 60).unwrap();
        assert!(r.value.abs() < 1e-9, "{}", r.value);
    }

    #[test]
    fn gaussian_w2_recovered_on_the_grid() {
        let cost = CostKind::NegSquaredDistance;
        let r = discrete_ot(&normal(0.0, 1.0), &normal(0.0, 2.0), &cost, 200, 200).unwrap();
        let exact = gaussian_w2_value(0.0, 1.0, 0.0, 2.0);
        assert_eq!(r.status, "optimal");
        assert!(
            (r.value - exact).abs() < 0.02 * exact.abs(),
            "lp {} vs exact {exact}",
            r.value
        );
    }

    #[test]
    fn mot_equal_marginals_is_the_identity_coupling() {
        let (m1, _) = mot_marginals();
        let r = discrete_mot(&m1, &m1, &CostKind::DiffPositivePart, 40).unwrap();
        assert_eq!(r.status, "optimal");
        assert!(r.value.abs() < 1e-9, "{}", r.value);
    }

    #[test]
    fn mot_value_is_bounded_by_ot_and_feasible() {
        let (m1, m2) = mot_marginals();
        let cost = CostKind::DiffPositivePart;
        let mot = discrete_mot(&m1, &m2, &cost, 40).unwrap();
        let ot = discrete_ot(&m1, &m2, &cost, 40, 40).unwrap();
        assert_eq!(mot.status, "optimal");
        // Adding the martingale rows can only cut the feasible set.
        assert!(mot.value <= ot.value + 1e-9, "mot {} vs ot {}", mot.value, ot.value);
        assert!(mot.value > 0.0);
        assert!(mot.primal_residual.unwrap() <= 1e-9);
        assert!(mot.duality_gap.unwrap() <= 1e-8);
    }

    #[test]
    fn mot_value_shrinks_as_the_second_marginal_contracts() {
        // Component-wise contraction of μ2's spread toward μ1's keeps convex
        // order but narrows the dispersion available to the coupling.
        let contract = |s: f64| Density1D::NormalMixture {
            components: vec![
                MixtureComponent { weight: 0.5, mean: -1.3, std: 0.5 + s * 0.6 },
                MixtureComponent { weight: 0.5, mean: 0.8, std: 0.7 + s * 0.6 },
            ],
        };
        let (m1, _) = mot_marginals();
        let cost = CostKind::DiffPositivePart;
        let values: Vec<f64> = [1.0, 0.6, 0.3]
            .iter()
            .map(|&s| discrete_mot(&m1, &contract(s), &cost, 30).unwrap().value)
            .collect();
        assert!(values[0] > values[1] && values[1] > values[2], "{values:?}");
    }

    #[test]
    fn convex_order_violation_is_diagnosed() {
        // Second marginal strictly less spread than the first.
        let err = discrete_mot(&normal(0.0, 2.0), &normal(0.0, 1.0), &CostKind::DiffPositivePart, 20)
            .unwrap_err();
        assert!(matches!(err, OracleError::ConvexOrder { .. }), "{err}");
        let err2 =
            discrete_mot(&normal(0.0, 1.0), &normal(0.5, 2.0), &CostKind::DiffPositivePart, 20)
                .unwrap_err();
        assert!(matches!(err2, OracleError::MeanMismatch(_)), "{err2}");
    }

    #[test]
    fn dcot_is_bounded_by_ot_on_the_same_grid() {
        let m = normal(0.0, 2.0);
        let cost = CostKind::SumPositivePart;
        let t8 = Density1D::StudentT { df: 8 };
        let dcot = discrete_dcot(&m, &m, &t8, &cost, 30, 15, 1e-3).unwrap();
        let ot = discrete_ot(&m, &m, &cost, 30, 30).unwrap();
        assert_eq!(dcot.status, "optimal", "difference constraint should be satisfiable");
        assert!(dcot.value <= ot.value + 1e-9, "dcot {} vs ot {}", dcot.value, ot.value);
    }

    #[test]
    fn lipschitz_relaxation_is_monotone_and_dominates_ot() {
        let m = normal(0.0, 2.0);
        let cost = CostKind::SumPositivePart;
        let ot = discrete_ot(&m, &m, &cost, 40, 40).unwrap().value;
        let mut last = f64::INFINITY;
        for l in [0.5, 1.0, 2.0, 4.0] {
            let r = discrete_lipschitz_relaxation(&m, &m, &cost, l, 40).unwrap();
            assert_eq!(r.status, "optimal");
            assert!(r.value <= last + 1e-8, "L={l}: {} after {last}", r.value);
            assert!(r.value >= ot - 1e-8, "L={l}: {} below ot {ot}", r.value);
            last = r.value;
        }
    }

    #[test]
    fn lipschitz_zero_frees_the_measure() {
        // With no penalty the optimum parks all mass on the best grid point.
        let m = normal(0.0, 2.0);
        let cost = CostKind::SumPositivePart;
        let p = build_lipschitz_relaxation(
            &discretize(&m, 25),
            &discretize(&m, 25),
            0.0,
            &cost,
        )
        .unwrap();
        let r = p.solve().unwrap();
        let best = p
            .lp
            .objective
            .iter()
            .take(25 * 25)
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        assert!((r.value - best).abs() < 1e-9, "{} vs {best}", r.value);
    }

    #[test]
    fn large_lipschitz_constant_recovers_ot() {
        let m = normal(0.0, 2.0);
        let cost = CostKind::SumPositivePart;
        let ot = discrete_ot(&m, &m, &cost, 30, 30).unwrap().value;
        let relaxed = discrete_lipschitz_relaxation(&m, &m, &cost, 1000.0, 30).unwrap().value;
        assert!((relaxed - ot).abs() < 1e-7, "relaxed {relaxed} vs ot {ot}");
    }

    #[test]
    fn rank_report_counts_the_one_redundancy() {
        let m = normal(0.0, 1.0);
        let p = build_ot(&discretize(&m, 8), &discretize(&m, 8), &CostKind::SumPositivePart)
            .unwrap();
        // 8 + 8 marginal rows plus normalization: two dependencies.
        assert_eq!(p.rank.rows, 17);
        assert_eq!(p.rank.rank, 15);
    }

    #[test]
    fn oversized_grids_are_rejected() {
        let m = normal(0.0, 1.0);
        let err = discrete_ot(&m, &m, &CostKind::SumPositivePart, 300, 300).unwrap_err();
        assert!(matches!(err, OracleError::TooLarge(_)));
    }
}
