//! Alternating gradient descent-ascent training of the measure game.
//!
//! Each iteration runs a configurable number of discriminator steps (Adam on
//! the discriminator loss, fresh batches each), then one generator step (Adam
//! on −φ). Warm-up suppresses discriminator updates for the first iterations.
//! Unrolling evaluates the generator's loss against a clone of the
//! discriminator advanced by a few hypothetical Adam steps — a first-order
//! lookahead; the clone's steps never touch the live discriminator. Mixtures
//! route each latent sample to a uniformly chosen ensemble member.
//!
//! Sampling is organized into labeled streams derived from the run seed (one
//! per constraint term, one for latents, one for routing, and separate ones
//! for unroll lookahead batches), so a run is bit-reproducible and every
//! batch is provably fresh.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::adam::{adam_step, AdamHyper, AdamState};
use crate::autodiff::{assign_grads, Array, Tape};
use crate::nets::{
    Activation, DiscriminatorSet, GeneratorEnsemble, MlpConfig, NetError,
};
use crate::objective::{build_phi, ObjectiveBreakdown, ObjectiveError, Regularization};
use crate::problems::{ProblemError, ProblemInstance};
use crate::rng::Stream;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error("non-finite objective at iteration {iteration}: {component}")]
    NumericAbort {
        iteration: usize,
        component: String,
        breakdown: Option<ObjectiveBreakdown>,
        partial: Box<TrainDiagnostics>,
    },
}

/// Network shapes per role.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub generator_hidden: usize,
    pub discriminator_hidden: usize,
    pub depth: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig { generator_hidden: 64, discriminator_hidden: 64, depth: 4 }
    }
}

/// All knobs of one training run.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Batch size n.
    pub batch_size: usize,
    /// Total supremum iterations N.
    pub iterations: usize,
    /// Discriminator steps per iteration.
    pub inner_steps: usize,
    /// Trailing window N_r averaged into the returned value.
    pub return_window: usize,
    /// Warm-up iterations without discriminator updates.
    pub warmup: usize,
    /// Lookahead discriminator steps for the generator update (0 = off).
    pub unroll_steps: usize,
    /// Number of generator ensemble members (1 = single generator).
    pub mixture_size: usize,
    pub regularization: Regularization,
    pub generator_adam: AdamHyper,
    pub discriminator_adam: AdamHyper,
    pub seed: u64,
    /// Keep every k-th trace row when writing files (in-memory traces are
    /// always per-iteration).
    pub trace_stride: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 256,
            iterations: 1000,
            inner_steps: 1,
            return_window: 500,
            warmup: 0,
            unroll_steps: 0,
            mixture_size: 1,
            regularization: Regularization::None,
            generator_adam: AdamHyper::default(),
            discriminator_adam: AdamHyper::default(),
            seed: 0,
            trace_stride: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |msg: &str| Err(TrainError::BadConfig(msg.into()));
        if self.batch_size == 0 {
            return bad("batch size must be positive");
        }
        if self.return_window == 0 || self.iterations < self.return_window {
            return bad("need iterations >= return_window >= 1");
        }
        if self.inner_steps == 0 {
            return bad("inner_steps must be at least 1");
        }
        if self.mixture_size == 0 {
            return bad("mixture_size must be at least 1");
        }
        if self.trace_stride == 0 {
            return bad("trace_stride must be at least 1");
        }
        Ok(())
    }
}

/// Generator and discriminators for one run.
#[derive(Debug, Clone)]
pub struct Networks {
    pub generator: GeneratorEnsemble,
    pub discriminators: DiscriminatorSet,
}

/// Fresh Glorot-initialized networks matching a problem's shapes: tanh hidden
/// layers for generator members, ReLU for the discriminators, one
/// discriminator per constraint term.
pub fn init_networks(
    problem: &ProblemInstance,
    nets: &NetworkConfig,
    mixture_size: usize,
    seed: u64,
) -> Result<Networks, NetError> {
    let mut rng = Stream::derive(seed, "init");
    let gen_cfg = MlpConfig::new(
        problem.latent.dim,
        problem.dim,
        nets.depth,
        nets.generator_hidden,
        Activation::Tanh,
    );
    let generator = GeneratorEnsemble::init(
        mixture_size,
        &gen_cfg,
        problem.support_box.clone(),
        &mut rng,
    )?;
    let dims: Vec<usize> = problem.terms.iter().map(|t| t.image_dim(problem.dim)).collect();
    let discriminators =
        DiscriminatorSet::init(&dims, nets.discriminator_hidden, nets.depth, &mut rng)?;
    Ok(Networks { generator, discriminators })
}

/// One per-iteration record of the objective and its parts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TracePoint {
    pub iteration: usize,
    pub phi: f64,
    pub cost_term: f64,
    pub constraint_terms: Vec<f64>,
    pub penalty_terms: Vec<f64>,
    /// Mean of the trailing min(t, N_r) φ values at this iteration.
    pub running_return: f64,
}

/// Draw counters per stream at the end of a run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StreamReport {
    pub latent_draws: u64,
    pub routing_draws: u64,
    pub mu_draws: Vec<u64>,
    pub unroll_latent_draws: u64,
}

/// Everything a finished (or aborted) run reports besides the networks.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainDiagnostics {
    pub trace: Vec<TracePoint>,
    pub streams: Option<StreamReport>,
}

pub struct TrainResult {
    /// Mean of φ over the last `return_window` iterations.
    pub value: f64,
    pub trace: Vec<TracePoint>,
    pub networks: Networks,
    pub wall_clock_secs: f64,
    pub streams: StreamReport,
}

/// Population standard deviation of the trailing `window` entries.
pub fn stability_metric(series: &[f64], window: usize) -> f64 {
    if series.is_empty() {
        return 0.0;
    }
    let w = window.min(series.len());
    let tail = &series[series.len() - w..];
    let mean = tail.iter().sum::<f64>() / w as f64;
    let var = tail.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / w as f64;
    var.sqrt()
}

struct SampleStreams {
    latent: Stream,
    routing: Stream,
    mu: Vec<Stream>,
}

impl SampleStreams {
    fn derive(seed: u64, prefix: &str, terms: usize) -> Self {
        SampleStreams {
            latent: Stream::derive(seed, &format!("{prefix}latent")),
            routing: Stream::derive(seed, &format!("{prefix}routing")),
            mu: (0..terms)
                .map(|j| Stream::derive(seed, &format!("{prefix}mu.{j}")))
                .collect(),
        }
    }
}

struct StepBatches {
    mu: Vec<Option<Array>>,
    latents: Array,
    routing: Vec<usize>,
}

fn draw_batches(
    problem: &ProblemInstance,
    generator: &GeneratorEnsemble,
    n: usize,
    streams: &mut SampleStreams,
) -> StepBatches {
    let mu = (0..problem.terms.len())
        .map(|j| problem.sample_mu_side(j, n, &mut streams.mu[j]))
        .collect();
    let latents = problem.latent.sample(n, &mut streams.latent);
    let routing = generator.route(n, &mut streams.routing);
    StepBatches { mu, latents, routing }
}

/// One Adam descent step of the discriminators on the discriminator loss,
/// with the generator's samples held fixed.
fn discriminator_step(
    problem: &ProblemInstance,
    generator: &GeneratorEnsemble,
    discriminators: &mut DiscriminatorSet,
    state: &mut AdamState,
    cfg: &TrainConfig,
    batches: &StepBatches,
) -> Result<ObjectiveBreakdown, ObjectiveError> {
    let generated = generator.generate_routed(&batches.latents, &batches.routing);
    let mut tape = Tape::new();
    let gen_node = tape.input(generated);
    let mu_nodes: Vec<_> = batches
        .mu
        .iter()
        .map(|b| b.as_ref().map(|a| tape.input(a.clone())))
        .collect();
    let mut slots = Vec::new();
    let bound: Vec<_> = discriminators
        .members
        .iter()
        .map(|m| {
            let (b, s) = m.bind(&mut tape);
            slots.extend(s);
            b
        })
        .collect();
    let graph = build_phi(
        &mut tape,
        problem,
        &cfg.regularization,
        gen_node,
        &mu_nodes,
        &bound,
        true,
    )?;
    graph.check_finite(&tape)?;
    let grads = tape.backward(graph.disc_loss)?;
    let mut params = discriminators.params_mut();
    assign_grads(&mut params, &slots, &grads);
    adam_step(&mut params, state, &cfg.discriminator_adam);
    Ok(graph.breakdown(&tape))
}

/// Evaluate φ (forward only) for the trace, with everything frozen.
fn evaluate_phi(
    problem: &ProblemInstance,
    generator: &GeneratorEnsemble,
    discriminators: &DiscriminatorSet,
    regularization: &Regularization,
    batches: &StepBatches,
) -> Result<ObjectiveBreakdown, ObjectiveError> {
    let generated = generator.generate_routed(&batches.latents, &batches.routing);
    let mut tape = Tape::new();
    let gen_node = tape.input(generated);
    let mu_nodes: Vec<_> = batches
        .mu
        .iter()
        .map(|b| b.as_ref().map(|a| tape.input(a.clone())))
        .collect();
    let bound: Vec<_> = discriminators
        .members
        .iter()
        .map(|m| m.bind_frozen(&mut tape))
        .collect();
    let graph = build_phi(&mut tape, problem, regularization, gen_node, &mu_nodes, &bound, false)?;
    graph.check_finite(&tape)?;
    Ok(graph.breakdown(&tape))
}

/// One Adam ascent step of the generator on φ, evaluated against the given
/// (possibly unrolled) discriminators, whose weights are held constant.
fn generator_step(
    problem: &ProblemInstance,
    generator: &mut GeneratorEnsemble,
    discriminators: &DiscriminatorSet,
    state: &mut AdamState,
    cfg: &TrainConfig,
    batches: &StepBatches,
) -> Result<ObjectiveBreakdown, ObjectiveError> {
    let mut tape = Tape::new();
    let latents = tape.input(batches.latents.clone());
    let (gen_node, member_slots) =
        generator.forward_on_tape(&mut tape, latents, &batches.routing, true)?;
    let mu_nodes: Vec<_> = batches
        .mu
        .iter()
        .map(|b| b.as_ref().map(|a| tape.input(a.clone())))
        .collect();
    let bound: Vec<_> = discriminators
        .members
        .iter()
        .map(|m| m.bind_frozen(&mut tape))
        .collect();
    let graph = build_phi(
        &mut tape,
        problem,
        &cfg.regularization,
        gen_node,
        &mu_nodes,
        &bound,
        false,
    )?;
    graph.check_finite(&tape)?;
    let grads = tape.backward(graph.gen_loss)?;
    let slots: Vec<_> = member_slots.into_iter().flatten().collect();
    let mut params = generator.params_mut();
    assign_grads(&mut params, &slots, &grads);
    adam_step(&mut params, state, &cfg.generator_adam);
    Ok(graph.breakdown(&tape))
}

/// Run the full training loop.
pub fn train(
    problem: &ProblemInstance,
    networks: Networks,
    cfg: &TrainConfig,
) -> Result<TrainResult, TrainError> {
    cfg.validate()?;
    problem.validate()?;
    cfg.regularization
        .validate(problem.terms.len())
        .map_err(TrainError::Objective)?;
    if networks.generator.members.len() != cfg.mixture_size {
        return Err(TrainError::BadConfig(format!(
            "networks carry {} generator members, config wants {}",
            networks.generator.members.len(),
            cfg.mixture_size
        )));
    }

    let start = Instant::now();
    let Networks { mut generator, mut discriminators } = networks;
    let mut disc_state = AdamState::new(&discriminators.params());
    let mut gen_state = AdamState::new(&generator.params());

    let terms = problem.terms.len();
    let mut main = SampleStreams::derive(cfg.seed, "", terms);
    let mut unroll = SampleStreams::derive(cfg.seed, "unroll.", terms);

    let mut phi_history: Vec<f64> = Vec::with_capacity(cfg.iterations);
    let mut trace: Vec<TracePoint> = Vec::with_capacity(cfg.iterations);

    let stream_report = |main: &SampleStreams, unroll: &SampleStreams| StreamReport {
        latent_draws: main.latent.draws(),
        routing_draws: main.routing.draws(),
        mu_draws: main.mu.iter().map(|s| s.draws()).collect(),
        unroll_latent_draws: unroll.latent.draws(),
    };

    macro_rules! abort {
        ($iter:expr, $component:expr, $breakdown:expr, $trace:expr, $main:expr, $unroll:expr) => {
            return Err(TrainError::NumericAbort {
                iteration: $iter,
                component: $component,
                breakdown: $breakdown,
                partial: Box::new(TrainDiagnostics {
                    trace: $trace,
                    streams: Some(stream_report($main, $unroll)),
                }),
            })
        };
    }

    for t in 1..=cfg.iterations {
        // Inner discriminator loop, suppressed during warm-up.
        if t > cfg.warmup {
            for _ in 0..cfg.inner_steps {
                let batches = draw_batches(problem, &generator, cfg.batch_size, &mut main);
                match discriminator_step(
                    problem,
                    &generator,
                    &mut discriminators,
                    &mut disc_state,
                    cfg,
                    &batches,
                ) {
                    Ok(_) => {}
                    Err(e) => abort!(t, e.to_string(), None, trace, &main, &unroll),
                }
            }
        }

        // Generator step batch (also the batch φ_t is recorded on).
        let batches = draw_batches(problem, &generator, cfg.batch_size, &mut main);

        let breakdown = if cfg.unroll_steps > 0 {
            // φ_t is still the value at the live parameters.
            let bd = match evaluate_phi(
                problem,
                &generator,
                &discriminators,
                &cfg.regularization,
                &batches,
            ) {
                Ok(bd) => bd,
                Err(e) => abort!(t, e.to_string(), None, trace, &main, &unroll),
            };
            // Advance a clone of the discriminator by a few lookahead steps
            // on its own fresh batches, then step the generator against it.
            let mut clone = discriminators.clone();
            let mut clone_state = disc_state.clone();
            for _ in 0..cfg.unroll_steps {
                let lookahead = draw_batches(problem, &generator, cfg.batch_size, &mut unroll);
                if let Err(e) = discriminator_step(
                    problem,
                    &generator,
                    &mut clone,
                    &mut clone_state,
                    cfg,
                    &lookahead,
                ) {
                    abort!(t, e.to_string(), None, trace, &main, &unroll);
                }
            }
            if let Err(e) =
                generator_step(problem, &mut generator, &clone, &mut gen_state, cfg, &batches)
            {
                abort!(t, e.to_string(), None, trace, &main, &unroll);
            }
            bd
        } else {
            match generator_step(
                problem,
                &mut generator,
                &discriminators,
                &mut gen_state,
                cfg,
                &batches,
            ) {
                Ok(bd) => bd,
                Err(e) => abort!(t, e.to_string(), None, trace, &main, &unroll),
            }
        };

        if !breakdown.phi.is_finite() {
            abort!(t, format!("phi = {}", breakdown.phi), Some(breakdown), trace, &main, &unroll);
        }

        phi_history.push(breakdown.phi);
        // Exact trailing mean (recomputed, fixed summation order).
        let w = cfg.return_window.min(t);
        let running_return =
            phi_history[t - w..].iter().sum::<f64>() / w as f64;
        trace.push(TracePoint {
            iteration: t,
            phi: breakdown.phi,
            cost_term: breakdown.cost_term,
            constraint_terms: breakdown.constraint_terms,
            penalty_terms: breakdown.regularization_terms,
            running_return,
        });
    }

    let w = cfg.return_window;
    let value = phi_history[phi_history.len() - w..].iter().sum::<f64>() / w as f64;
    Ok(TrainResult {
        value,
        trace,
        networks: Networks { generator, discriminators },
        wall_clock_secs: start.elapsed().as_secs_f64(),
        streams: stream_report(&main, &unroll),
    })
}
