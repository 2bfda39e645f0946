//! Post-training diagnostics: how well the trained pushforward matches its
//! constraints, and the Monte-Carlo value of the objective.
//!
//! Feasibility is probed with the first 50 Chebyshev polynomials of the
//! first kind rescaled from [−1, 1] to [−6, 6] (degree 0 is excluded since
//! probability normalization matches constants automatically). The marginal
//! error averages absolute moment mismatches across polynomials and 1-D
//! constraint terms; the martingale error averages |E g_j(x₁)(x₂ − x₁)|.
//! Evaluation draws from its own labeled streams so reported numbers are
//! out-of-sample with respect to training.

use serde::{Deserialize, Serialize};

use crate::nets::GeneratorEnsemble;
use crate::problems::{ProblemInstance, TargetSide, TransformKind, WeightKind};
use crate::rng::Stream;

pub const POLYNOMIAL_COUNT: usize = 50;
const HALF_WIDTH: f64 = 6.0;

/// Degree-`degree` Chebyshev polynomial of the first kind rescaled to
/// [−6, 6], evaluated by the three-term recurrence (unclamped outside).
pub fn chebyshev(degree: usize, x: f64) -> f64 {
    let y = x / HALF_WIDTH;
    match degree {
        0 => 1.0,
        1 => y,
        _ => {
            let (mut prev, mut cur) = (1.0, y);
            for _ in 2..=degree {
                (prev, cur) = (cur, 2.0 * y * cur - prev);
            }
            cur
        }
    }
}

/// Degrees 1..=50 at one point, sharing a single recurrence sweep.
fn chebyshev_degrees(x: f64) -> [f64; POLYNOMIAL_COUNT] {
    let y = x / HALF_WIDTH;
    let mut out = [0.0; POLYNOMIAL_COUNT];
    let (mut prev, mut cur) = (1.0, y);
    out[0] = y;
    for degree in 2..=POLYNOMIAL_COUNT {
        (prev, cur) = (cur, 2.0 * y * cur - prev);
        out[degree - 1] = cur;
    }
    out
}

fn polynomial_means(samples: &[f64]) -> [f64; POLYNOMIAL_COUNT] {
    let mut sums = [0.0; POLYNOMIAL_COUNT];
    for &x in samples {
        let row = chebyshev_degrees(x);
        for (s, v) in sums.iter_mut().zip(row.iter()) {
            *s += v;
        }
    }
    let n = samples.len() as f64;
    sums.iter_mut().for_each(|s| *s /= n);
    sums
}

/// Average absolute Chebyshev-moment mismatch between candidate and target
/// samples, averaged over marginals: (1/k)Σᵢ(1/50)Σⱼ|∫gⱼdμᵢ − ∫gⱼdν̂ᵢ|.
/// Returns the scalar and the per-marginal per-polynomial gaps.
pub fn marginal_error(
    candidate_marginals: &[Vec<f64>],
    target_marginals: &[Vec<f64>],
) -> (f64, Vec<Vec<f64>>) {
    assert_eq!(candidate_marginals.len(), target_marginals.len());
    assert!(!candidate_marginals.is_empty());
    let mut per_marginal = Vec::with_capacity(candidate_marginals.len());
    let mut total = 0.0;
    for (cand, target) in candidate_marginals.iter().zip(target_marginals) {
        let (mc, mt) = (polynomial_means(cand), polynomial_means(target));
        let gaps: Vec<f64> = mc.iter().zip(mt.iter()).map(|(a, b)| (a - b).abs()).collect();
        total += gaps.iter().sum::<f64>() / POLYNOMIAL_COUNT as f64;
        per_marginal.push(gaps);
    }
    (total / candidate_marginals.len() as f64, per_marginal)
}

/// (1/50)Σⱼ |mean gⱼ(x₁)·(x₂ − x₁)| over 2-D samples: how far the candidate
/// is from the conditional-mean constraint.
pub fn martingale_error(samples_x1: &[f64], samples_x2: &[f64]) -> (f64, Vec<f64>) {
    assert_eq!(samples_x1.len(), samples_x2.len());
    let n = samples_x1.len() as f64;
    let mut sums = [0.0; POLYNOMIAL_COUNT];
    for (&x1, &x2) in samples_x1.iter().zip(samples_x2) {
        let row = chebyshev_degrees(x1);
        let inc = x2 - x1;
        for (s, g) in sums.iter_mut().zip(row.iter()) {
            *s += g * inc;
        }
    }
    let gaps: Vec<f64> = sums.iter().map(|s| (s / n).abs()).collect();
    (gaps.iter().sum::<f64>() / POLYNOMIAL_COUNT as f64, gaps)
}

/// Feasibility diagnostics of a trained generator.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub marginal_error: f64,
    pub martingale_error: Option<f64>,
    pub per_marginal_gaps: Vec<Vec<f64>>,
    pub per_martingale_gaps: Option<Vec<f64>>,
    pub sample_count: usize,
}

/// Everything the summary reports about a trained generator.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunEvaluation {
    /// Monte-Carlo mean of the cost over generated samples.
    pub objective_value: f64,
    /// Sign-adjusted value for reporting (negated for distance objectives).
    pub reported_value: f64,
    pub feasibility: FeasibilityReport,
}

/// Monte-Carlo estimate of the objective under the generator's pushforward.
pub fn objective_value(
    problem: &ProblemInstance,
    generator: &GeneratorEnsemble,
    samples: usize,
    seed: u64,
) -> f64 {
    let mut latent_rng = Stream::derive(seed, "eval.latent");
    let mut route_rng = Stream::derive(seed, "eval.routing");
    let latents = problem.latent.sample(samples, &mut latent_rng);
    let generated = generator.generate(&latents, &mut route_rng);
    let mut sum = 0.0;
    for i in 0..samples {
        sum += problem.cost.eval_row(generated.row(i));
    }
    sum / samples as f64
}

/// Full out-of-sample evaluation: objective value plus feasibility metrics
/// against fresh target samples. `seed` should differ from the training seed.
pub fn evaluate_run(
    problem: &ProblemInstance,
    generator: &GeneratorEnsemble,
    samples: usize,
    seed: u64,
) -> RunEvaluation {
    let mut latent_rng = Stream::derive(seed, "eval.latent");
    let mut route_rng = Stream::derive(seed, "eval.routing");
    let latents = problem.latent.sample(samples, &mut latent_rng);
    let generated = generator.generate(&latents, &mut route_rng);

    let mut sum = 0.0;
    for i in 0..samples {
        sum += problem.cost.eval_row(generated.row(i));
    }
    let objective = sum / samples as f64;

    // Chebyshev marginal mismatch for every 1-D sampler term.
    let mut candidate = Vec::new();
    let mut target = Vec::new();
    for (j, term) in problem.terms.iter().enumerate() {
        if let TargetSide::Sampler { sampler } = &term.target {
            if term.image_dim(problem.dim) == 1 {
                let image = term.transform.apply_rows(&generated);
                candidate.push(image.data().to_vec());
                let mut rng = Stream::derive(seed, &format!("eval.target.{j}"));
                target.push(sampler.sample(samples, &mut rng).data().to_vec());
            }
        }
    }
    let (marg, per_marginal) = if candidate.is_empty() {
        (0.0, Vec::new())
    } else {
        marginal_error(&candidate, &target)
    };

    // Conditional-mean mismatch for analytic-zero martingale terms.
    let mut mart: Option<(f64, Vec<f64>)> = None;
    for term in &problem.terms {
        let is_martingale = matches!(term.target, TargetSide::AnalyticZero)
            && matches!(term.weight, WeightKind::CoordDiff { .. });
        if !is_martingale {
            continue;
        }
        if let (WeightKind::CoordDiff { plus, minus }, TransformKind::Coords { coords }) =
            (&term.weight, &term.transform)
        {
            if coords.len() == 1 {
                let n = generated.shape()[0];
                let x1: Vec<f64> = (0..n).map(|i| generated.row(i)[coords[0]]).collect();
                // Reconstruct x₂ from the weight's coordinates so the metric
                // matches the term actually enforced.
                let x2: Vec<f64> = (0..n)
                    .map(|i| generated.row(i)[*plus] - generated.row(i)[*minus] + x1[i])
                    .collect();
                mart = Some(martingale_error(&x1, &x2));
                break;
            }
        }
    }
    let (mart_err, mart_gaps) = match mart {
        Some((e, g)) => (Some(e), Some(g)),
        None => (None, None),
    };

    RunEvaluation {
        objective_value: objective,
        reported_value: if problem.negate_reported_value { -objective } else { objective },
        feasibility: FeasibilityReport {
            marginal_error: marg,
            martingale_error: mart_err,
            per_marginal_gaps: per_marginal,
            per_martingale_gaps: mart_gaps,
            sample_count: samples,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{preset_mot, preset_w2, CostKind};
    use crate::trainer::{init_networks, NetworkConfig};

    #[test]
    fn chebyshev_fixed_values() {
        // T₁(1) at the right edge of [−6, 6].
        assert_eq!(chebyshev(1, 6.0), 1.0);
        // T₂(0) = −1.
        assert_eq!(chebyshev(2, 0.0), -1.0);
        // T₅(1/2) = cos(5π/3) = 1/2 at x = 3.
        assert!((chebyshev(5, 3.0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn chebyshev_matches_trigonometric_identity() {
        let mut rng = Stream::derive(1, "cheb");
        for _ in 0..64 {
            let theta = rng.uniform_in(0.0, std::f64::consts::PI);
            let x = 6.0 * theta.cos();
            for degree in 1..=POLYNOMIAL_COUNT {
                let expect = (degree as f64 * theta).cos();
                assert!(
                    (chebyshev(degree, x) - expect).abs() < 1e-10,
                    "degree {degree} at theta {theta}"
                );
            }
        }
    }

    #[test]
    fn identical_samples_give_exactly_zero_error() {
        let mut rng = Stream::derive(2, "zero");
        let xs: Vec<f64> = (0..10_000).map(|_| 2.0 * rng.normal()).collect();
        let (err, gaps) = marginal_error(&[xs.clone()], &[xs]);
        assert_eq!(err, 0.0);
        assert!(gaps[0].iter().all(|&g| g == 0.0));
    }

    #[test]
    fn independent_resampling_stays_below_noise_ceiling() {
        // The error between two independent draws of the same law, compared
        // against a 3σ ceiling estimated by repeated resampling.
        let n = 100_000;
        let draw = |label: &str| -> Vec<f64> {
            let mut rng = Stream::derive(7, label);
            (0..n).map(|_| 2.0 * rng.normal()).collect()
        };
        let mut errors = Vec::new();
        for rep in 0..12 {
            let a = draw(&format!("a{rep}"));
            let b = draw(&format!("b{rep}"));
            errors.push(marginal_error(&[a], &[b]).0);
        }
        let observed = errors[0];
        let mean = errors.iter().sum::<f64>() / errors.len() as f64;
        let sd = (errors.iter().map(|e| (e - mean).powi(2)).sum::<f64>()
            / errors.len() as f64)
            .sqrt();
        assert!(observed <= mean + 3.0 * sd, "error {observed} vs ceiling {}", mean + 3.0 * sd);
    }

    #[test]
    fn marginal_error_grows_monotonically_with_a_shift() {
        let n = 100_000;
        let mut rng = Stream::derive(8, "shift");
        let base: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let mut rng2 = Stream::derive(9, "shift-target");
        let target: Vec<f64> = (0..n).map(|_| rng2.normal()).collect();
        let mut last = 0.0;
        for (k, delta) in [0.05, 0.1, 0.2, 0.4, 0.8].iter().enumerate() {
            let shifted: Vec<f64> = base.iter().map(|x| x + delta).collect();
            let (err, _) = marginal_error(&[shifted], &[target.clone()]);
            assert!(err > last, "step {k}: {err} not above {last}");
            last = err;
        }
    }

    #[test]
    fn martingale_error_zero_on_the_diagonal() {
        let mut rng = Stream::derive(3, "diag");
        let xs: Vec<f64> = (0..50_000).map(|_| rng.normal()).collect();
        let (err, _) = martingale_error(&xs, &xs);
        assert_eq!(err, 0.0);
    }

    #[test]
    fn independent_mean_zero_noise_is_martingale_feasible() {
        let n = 200_000;
        let mut rng = Stream::derive(4, "mart");
        let x1: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let x2: Vec<f64> = x1.iter().map(|&x| x + 0.5 * rng.normal()).collect();
        let (err, _) = martingale_error(&x1, &x2);
        // Noise floor for each moment is O(1/√n); 50-way average stays tiny.
        assert!(err < 0.01, "error {err}");
    }

    #[test]
    fn objective_value_of_constant_costs() {
        let mut problem = preset_mot();
        problem.cost = CostKind::Expr {
            expr: crate::problems::CostExpr::Const { value: 3.0 },
        };
        let nets = init_networks(
            &problem,
            &NetworkConfig { generator_hidden: 4, discriminator_hidden: 4, depth: 2 },
            1,
            0,
        )
        .unwrap();
        let v = objective_value(&problem, &nets.generator, 2_000, 123);
        assert_eq!(v, 3.0);
        problem.cost = CostKind::Expr {
            expr: crate::problems::CostExpr::Const { value: 0.0 },
        };
        assert_eq!(objective_value(&problem, &nets.generator, 2_000, 123), 0.0);
    }

    #[test]
    fn evaluation_is_seed_deterministic_and_covers_terms() {
        let problem = preset_mot();
        let nets = init_networks(
            &problem,
            &NetworkConfig { generator_hidden: 8, discriminator_hidden: 8, depth: 3 },
            1,
            5,
        )
        .unwrap();
        let a = evaluate_run(&problem, &nets.generator, 20_000, 999);
        let b = evaluate_run(&problem, &nets.generator, 20_000, 999);
        assert_eq!(a.objective_value.to_bits(), b.objective_value.to_bits());
        assert_eq!(a.feasibility.marginal_error.to_bits(), b.feasibility.marginal_error.to_bits());
        assert_eq!(a.feasibility.per_marginal_gaps.len(), 2);
        assert!(a.feasibility.martingale_error.is_some());
        // W2 reports the negated (distance) value and has no 1-D terms.
        let w2 = preset_w2(2);
        let nets2 = init_networks(
            &w2,
            &NetworkConfig { generator_hidden: 8, discriminator_hidden: 8, depth: 3 },
            1,
            6,
        )
        .unwrap();
        let e = evaluate_run(&w2, &nets2.generator, 5_000, 7);
        assert_eq!(e.reported_value, -e.objective_value);
        assert!(e.feasibility.martingale_error.is_none());
    }
}
