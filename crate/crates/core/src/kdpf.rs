//! Kernel density particle filter.
//!
//! Each report triggers one filter step over the particles `(x, θ, w)`:
//!
//! 1. shrink parameters toward the weighted mean, `m_i = a θ_i + (1 - a) θ̄`;
//! 2. project each state through the reporting gap with the drift, `μ_i`;
//! 3. auxiliary weights `g_i ∝ w_i p(y | μ_i, m_i)`;
//! 4. draw ancestors `j` with probabilities `g`;
//! 5. regenerate parameters `θ_i ~ N_ω(m_j, V)` with `V = h² Cov_w(θ)`;
//! 6. propagate `x_j` stochastically through the gap under `θ_i`;
//! 7. reuse the ancestor's projected state `μ_j`;
//! 8. weights `w_i ∝ p(y | x_i, θ_i) / p(y | μ_j, m_j)`.
//!
//! All weights are handled in log space with max subtraction. Randomness is
//! drawn from streams keyed by `(generation, particle, purpose)`, so output
//! does not depend on the number of worker threads.

use nalgebra::{Matrix5, Vector5};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{build_calendar, ReportDataset};
use crate::error::{Error, Result};
use crate::model::{expected_state, CompartmentState, ParamVector, ProcessModel};
use crate::observation::{log_likelihood_logs, Observation, ObservationLink};
use crate::priors::{sample_initial, PriorSpec};
use crate::rng::{Purpose, SeededStreams, StreamKey, StreamSource};
use crate::sampling::{truncated_normal_sample, BoxRegion, GaussianFactor, DEFAULT_REJECTION_CAP};
use crate::summary::{summarize_cloud, DayCloud, TrajectorySummary};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Particle {
    pub state: CompartmentState,
    pub params: ParamVector,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble {
    pub particles: Vec<Particle>,
    pub day_index: i64,
    /// Number of completed filter steps.
    pub generation: u64,
}

impl ParticleEnsemble {
    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.particles.iter().map(|p| p.weight).collect()
    }

    pub fn weight_sum(&self) -> f64 {
        self.particles.iter().map(|p| p.weight).sum()
    }

    /// Draws `J` particles from the priors with equal weights at `day_index`.
    pub fn from_priors<S: StreamSource>(
        priors: &PriorSpec,
        num_particles: usize,
        day_index: i64,
        streams: &S,
    ) -> Result<Self> {
        let particles = (0..num_particles)
            .into_par_iter()
            .map(|i| {
                let mut rng = streams.stream(StreamKey::new(Purpose::Initial, 0, i as u64));
                let (state, params) = sample_initial(priors, &mut rng)?;
                Ok(Particle {
                    state,
                    params,
                    weight: 1.0 / num_particles as f64,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ParticleEnsemble {
            particles,
            day_index,
            generation: 0,
        })
    }

    pub fn weighted_param_mean(&self) -> ParamVector {
        let mut acc = Vector5::zeros();
        for p in &self.particles {
            acc += p.params.to_vector() * p.weight;
        }
        ParamVector::from_vector(&acc)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Resampling {
    #[default]
    Multinomial,
    Systematic,
}

/// How the discount factor maps to `(a, h)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ShrinkageRule {
    /// `h = 1 - ((3φ - 1) / (2φ))²`, `a = 1 - h²`.
    #[default]
    Squared,
    /// `a = (3φ - 1) / (2φ)`, `h² = 1 - a²` (variance preserving).
    Conventional,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub num_particles: usize,
    /// Discount factor `φ_d`.
    pub discount: f64,
    pub seed: u64,
    pub population: u64,
    pub rejection_cap: usize,
    pub resampling: Resampling,
    pub shrinkage: ShrinkageRule,
    /// Worker threads; 0 uses the global rayon pool.
    pub workers: usize,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            num_particles: 5000,
            discount: 0.95,
            seed: 1,
            population: 1_000_000,
            rejection_cap: DEFAULT_REJECTION_CAP,
            resampling: Resampling::Multinomial,
            shrinkage: ShrinkageRule::Squared,
            workers: 0,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_particles < 2 {
            return Err(Error::config("filter.num_particles", "must be at least 2"));
        }
        if !(self.discount > 1.0 / 3.0 && self.discount < 1.0) {
            return Err(Error::config(
                "filter.discount",
                format!("must lie in (1/3, 1), got {}", self.discount),
            ));
        }
        if self.population == 0 {
            return Err(Error::config("filter.population", "must be at least 1"));
        }
        if self.rejection_cap == 0 {
            return Err(Error::config("filter.rejection_cap", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Shrinkage {
    pub a: f64,
    pub h: f64,
}

pub fn shrinkage_coefficients(phi_d: f64) -> Result<Shrinkage> {
    check_discount(phi_d)?;
    let k = (3.0 * phi_d - 1.0) / (2.0 * phi_d);
    let h = 1.0 - k * k;
    Ok(Shrinkage { a: 1.0 - h * h, h })
}

pub fn shrinkage_for(rule: ShrinkageRule, phi_d: f64) -> Result<Shrinkage> {
    match rule {
        ShrinkageRule::Squared => shrinkage_coefficients(phi_d),
        ShrinkageRule::Conventional => {
            check_discount(phi_d)?;
            let a = (3.0 * phi_d - 1.0) / (2.0 * phi_d);
            Ok(Shrinkage {
                a,
                h: (1.0 - a * a).sqrt(),
            })
        }
    }
}

fn check_discount(phi_d: f64) -> Result<()> {
    if phi_d > 1.0 / 3.0 && phi_d < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("discount factor must lie in (1/3, 1), got {phi_d}")))
    }
}

pub fn shrink_means(params: &ParamVector, weighted_mean: &ParamVector, a: f64) -> ParamVector {
    ParamVector::from_vector(&(params.to_vector() * a + weighted_mean.to_vector() * (1.0 - a)))
}

/// `h²` times the weighted (population) covariance of the particle parameters.
pub fn kernel_covariance(ensemble: &ParticleEnsemble, h: f64) -> Matrix5<f64> {
    let mean = ensemble.weighted_param_mean().to_vector();
    let mut cov = Matrix5::zeros();
    for p in &ensemble.particles {
        let d = p.params.to_vector() - mean;
        cov += (d * d.transpose()) * p.weight;
    }
    let cov = (cov + cov.transpose()) * 0.5;
    cov * (h * h)
}

pub fn effective_sample_size(weights: &[f64]) -> f64 {
    let s2: f64 = weights.iter().map(|w| w * w).sum();
    (1.0 / s2).clamp(1.0, weights.len() as f64)
}

/// Exponentiates and normalizes log weights; `None` when none is finite.
pub fn normalize_log_weights(log_w: &[f64]) -> Option<Vec<f64>> {
    let max = log_w
        .iter()
        .copied()
        .filter(|v| !v.is_nan())
        .fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return None;
    }
    let mut w: Vec<f64> = log_w
        .iter()
        .map(|v| if v.is_nan() { 0.0 } else { (v - max).exp() })
        .collect();
    let total: f64 = w.iter().sum();
    for v in &mut w {
        *v /= total;
    }
    Some(w)
}

/// Ancestor indices drawn with probabilities `probs` (normalized).
pub fn resample<R: Rng + ?Sized>(probs: &[f64], n: usize, scheme: Resampling, rng: &mut R) -> Vec<usize> {
    let mut cumulative = Vec::with_capacity(probs.len());
    let mut acc = 0.0;
    for p in probs {
        acc += p;
        cumulative.push(acc);
    }
    let total = acc;
    let last = probs.len() - 1;
    let pick = |u: f64| cumulative.partition_point(|c| *c <= u * total).min(last);
    match scheme {
        Resampling::Multinomial => (0..n).map(|_| pick(rng.random::<f64>())).collect(),
        Resampling::Systematic => {
            let u0: f64 = rng.random();
            (0..n).map(|k| pick((k as f64 + u0) / n as f64)).collect()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub generation: u64,
    pub day_index: i64,
    pub gap_days: u32,
    /// ESS of the final normalized weights.
    pub ess: f64,
    /// ESS of the auxiliary weights.
    pub aux_ess: f64,
    /// Parameter draws that exhausted the rejection cap and were projected.
    pub param_projections: usize,
    /// State transitions that exhausted the rejection cap and were projected.
    pub state_projections: usize,
    /// Estimate of `ln p(y_k | y_{1:k-1})`.
    pub log_evidence: f64,
    #[serde(skip)]
    pub aux_weights: Vec<f64>,
    #[serde(skip)]
    pub ancestors: Vec<usize>,
}

/// Output of one filter step.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub ensemble: ParticleEnsemble,
    pub report: StepReport,
    /// States on the days strictly inside the gap, `gap_states[d][i]` for day
    /// offset `d + 1` and particle `i`, paired with the new parameters.
    pub gap_states: Vec<Vec<CompartmentState>>,
}

/// Filter engine with fixed configuration.
pub struct KernelFilter {
    config: FilterConfig,
    link: ObservationLink,
    support: BoxRegion<5>,
    process: ProcessModel,
    shrinkage: Shrinkage,
    pool: Option<rayon::ThreadPool>,
}

impl KernelFilter {
    pub fn new(config: &FilterConfig, link: &ObservationLink, support: BoxRegion<5>) -> Result<Self> {
        config.validate()?;
        link.validate()?;
        if link.population != config.population {
            return Err(Error::Validation(format!(
                "observation link population {} differs from filter population {}",
                link.population, config.population
            )));
        }
        let pool = if config.workers > 0 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(config.workers)
                    .build()
                    .map_err(|e| Error::Validation(format!("thread pool: {e}")))?,
            )
        } else {
            None
        };
        Ok(KernelFilter {
            config: config.clone(),
            link: *link,
            support,
            process: ProcessModel::new(config.population)?.with_rejection_cap(config.rejection_cap),
            shrinkage: shrinkage_for(config.shrinkage, config.discount)?,
            pool,
        })
    }

    pub fn config(&self) -> &FilterConfig {
        &self.config
    }

    pub fn shrinkage(&self) -> Shrinkage {
        self.shrinkage
    }

    fn install<T: Send>(&self, f: impl FnOnce() -> T + Send) -> T {
        match &self.pool {
            Some(pool) => pool.install(f),
            None => f(),
        }
    }

    pub fn initialize<S: StreamSource>(&self, priors: &PriorSpec, day_index: i64, streams: &S) -> Result<ParticleEnsemble> {
        self.install(|| ParticleEnsemble::from_priors(priors, self.config.num_particles, day_index, streams))
    }

    /// Assimilates one report `gap_days` after the ensemble's day.
    ///
    /// A zero gap is accepted only for the initial ensemble (the first report
    /// falls on the prior's day).
    pub fn filter_step<S: StreamSource>(
        &self,
        ensemble: &ParticleEnsemble,
        obs: &Observation,
        gap_days: u32,
        streams: &S,
    ) -> Result<StepOutcome> {
        self.install(|| self.step_inner(ensemble, obs, gap_days, streams))
    }

    fn step_inner<S: StreamSource>(
        &self,
        ensemble: &ParticleEnsemble,
        obs: &Observation,
        gap_days: u32,
        streams: &S,
    ) -> Result<StepOutcome> {
        let n = ensemble.len();
        if n < 2 {
            return Err(Error::Validation("ensemble needs at least 2 particles".into()));
        }
        if ensemble.day_index + gap_days as i64 != obs.day_index {
            return Err(Error::Validation(format!(
                "gap of {gap_days} days from day {} does not reach report day {}",
                ensemble.day_index, obs.day_index
            )));
        }
        if gap_days == 0 && ensemble.generation != 0 {
            return Err(Error::Validation(format!(
                "report on day {} is not after the ensemble day",
                obs.day_index
            )));
        }
        let generation = ensemble.generation + 1;
        let log_y = obs.log_counts()?;
        let Shrinkage { a, h } = self.shrinkage;

        // 1. shrink
        let theta_bar = ensemble.weighted_param_mean();
        let shrunk: Vec<ParamVector> = ensemble
            .particles
            .iter()
            .map(|p| shrink_means(&p.params, &theta_bar, a))
            .collect();

        // 2. projected states and their likelihoods
        let projected: Vec<(CompartmentState, f64)> = ensemble
            .particles
            .par_iter()
            .map(|p| {
                let mu = expected_state(&p.state, &p.params, gap_days)?;
                Ok((mu, log_likelihood_logs(&mu, &self.link, &log_y)))
            })
            .collect::<Result<_>>()?;

        // 3. auxiliary weights
        let log_g: Vec<f64> = ensemble
            .particles
            .iter()
            .zip(&projected)
            .map(|(p, (_, ll))| p.weight.ln() + ll)
            .collect();
        let aux = normalize_log_weights(&log_g).ok_or_else(|| Error::Degeneracy {
            day: obs.day_index,
            message: "every auxiliary weight is zero".into(),
        })?;
        let log_aux_mass = log_sum_exp(&log_g);

        // 4. ancestors
        let mut rng = streams.stream(StreamKey::new(Purpose::Resample, generation, 0));
        let ancestors = resample(&aux, n, self.config.resampling, &mut rng);

        // 5-6. regenerate parameters, propagate states
        let kernel = kernel_covariance(ensemble, h);
        let factor = GaussianFactor::from_covariance(&kernel)?;
        if factor.is_zero() {
            log::warn!(
                "day {}: parameter kernel covariance is zero, regenerated parameters equal the shrunk means",
                obs.day_index
            );
        }
        let record_gap = gap_days > 1;
        let moved: Vec<Moved> = ancestors
            .par_iter()
            .enumerate()
            .map(|(i, &j)| {
                let mut prng = streams.stream(StreamKey::new(Purpose::Params, generation, i as u64));
                let draw = truncated_normal_sample(
                    &shrunk[j].to_vector(),
                    &factor,
                    &self.support,
                    &mut prng,
                    self.config.rejection_cap,
                );
                let params = ParamVector::from_vector(&draw.value);
                let mut srng = streams.stream(StreamKey::new(Purpose::State, generation, i as u64));
                let mut path = Vec::with_capacity(if record_gap { gap_days as usize - 1 } else { 0 });
                let (state, state_projections) = self.process.propagate_gap_with(
                    &ensemble.particles[j].state,
                    &params,
                    gap_days,
                    &mut srng,
                    |day, s| {
                        if day < gap_days {
                            path.push(*s);
                        }
                    },
                )?;
                // 7-8. incremental weight against the ancestor's projection
                let ll = log_likelihood_logs(&state, &self.link, &log_y);
                Ok(Moved {
                    state,
                    params,
                    log_weight: ll - projected[j].1,
                    param_projected: draw.projected,
                    state_projections,
                    path,
                })
            })
            .collect::<Result<_>>()?;

        let log_w: Vec<f64> = moved.iter().map(|m| m.log_weight).collect();
        let weights = normalize_log_weights(&log_w).ok_or_else(|| Error::Degeneracy {
            day: obs.day_index,
            message: "every particle has zero likelihood after propagation".into(),
        })?;
        let log_evidence = log_aux_mass + log_sum_exp(&log_w) - (n as f64).ln();

        let mut gap_states = vec![Vec::with_capacity(n); gap_days.saturating_sub(1) as usize];
        for m in &moved {
            for (d, s) in m.path.iter().enumerate() {
                gap_states[d].push(*s);
            }
        }
        let report = StepReport {
            generation,
            day_index: obs.day_index,
            gap_days,
            ess: effective_sample_size(&weights),
            aux_ess: effective_sample_size(&aux),
            param_projections: moved.iter().filter(|m| m.param_projected).count(),
            state_projections: moved.iter().map(|m| m.state_projections).sum(),
            log_evidence,
            aux_weights: aux,
            ancestors,
        };
        let particles = moved
            .iter()
            .zip(&weights)
            .map(|(m, w)| Particle {
                state: m.state,
                params: m.params,
                weight: *w,
            })
            .collect();
        Ok(StepOutcome {
            ensemble: ParticleEnsemble {
                particles,
                day_index: obs.day_index,
                generation,
            },
            report,
            gap_states,
        })
    }
}

struct Moved {
    state: CompartmentState,
    params: ParamVector,
    log_weight: f64,
    param_projected: bool,
    state_projections: usize,
    path: Vec<CompartmentState>,
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().filter(|x| !x.is_nan()).fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + v
        .iter()
        .filter(|x| !x.is_nan())
        .map(|x| (x - max).exp())
        .sum::<f64>()
        .ln()
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub quantiles: Vec<f64>,
    /// Retain every particle cloud (report days and gap days).
    pub keep_clouds: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            quantiles: vec![0.05, 0.95],
            keep_clouds: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FilterRun {
    pub summary: TrajectorySummary,
    pub steps: Vec<StepReport>,
    /// Final ensemble after the last report.
    pub last: ParticleEnsemble,
    /// Every day's cloud, when requested.
    pub clouds: Vec<DayCloud>,
}

/// Runs the filter over a dataset: prior draw on day 0, one step per report.
pub fn run_filter(
    dataset: &ReportDataset,
    priors: &PriorSpec,
    link: &ObservationLink,
    config: &FilterConfig,
    options: &RunOptions,
) -> Result<FilterRun> {
    priors.validate()?;
    let filter = KernelFilter::new(config, link, priors.param_support())?;
    let streams = SeededStreams::new(config.seed);
    run_with(&filter, dataset, priors, &streams, options)
}

/// [`run_filter`] with an explicit engine and stream source.
pub fn run_with<S: StreamSource>(
    filter: &KernelFilter,
    dataset: &ReportDataset,
    priors: &PriorSpec,
    streams: &S,
    options: &RunOptions,
) -> Result<FilterRun> {
    if dataset.records.is_empty() {
        return Err(Error::Validation("dataset has no reports".into()));
    }
    let population = filter.config.population;
    let calendar = build_calendar(dataset);
    let mut ensemble = filter.initialize(priors, 0, streams)?;
    let mut summary = TrajectorySummary::new(options.quantiles.clone())?;
    let mut steps = Vec::with_capacity(calendar.len());
    let mut clouds = Vec::new();

    for (obs, entry) in dataset.records.iter().zip(&calendar) {
        let outcome = filter.filter_step(&ensemble, obs, entry.gap as u32, streams)?;
        let uniform = 1.0 / outcome.ensemble.len() as f64;
        for (d, states) in outcome.gap_states.iter().enumerate() {
            let day = ensemble.day_index + d as i64 + 1;
            let cloud = DayCloud {
                day_index: day,
                observed: false,
                particles: states
                    .iter()
                    .zip(&outcome.ensemble.particles)
                    .map(|(s, p)| Particle {
                        state: *s,
                        params: p.params,
                        weight: uniform,
                    })
                    .collect(),
            };
            summary.push(summarize_cloud(&cloud, dataset.date_of(day), &options.quantiles, population)?);
            if options.keep_clouds {
                clouds.push(cloud);
            }
        }
        let cloud = DayCloud::from_ensemble(&outcome.ensemble, true);
        summary.push(summarize_cloud(&cloud, Some(obs.date), &options.quantiles, population)?);
        if options.keep_clouds {
            clouds.push(cloud);
        }
        log::debug!(
            "day {}: ess {:.1}, aux ess {:.1}",
            obs.day_index,
            outcome.report.ess,
            outcome.report.aux_ess
        );
        steps.push(outcome.report);
        ensemble = outcome.ensemble;
    }
    Ok(FilterRun {
        summary,
        steps,
        last: ensemble,
        clouds,
    })
}
