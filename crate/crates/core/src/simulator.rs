//! Synthetic outbreaks drawn from the process and observation models, used
//! as ground truth when checking what the filter recovers.

use chrono::NaiveDate;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::ReportDataset;
use crate::error::{Error, Result};
use crate::model::{deterministic_step, r0, CompartmentState, ParamVector, ProcessModel};
use crate::observation::{predicted_log_mean, ObservationLink};
use crate::rng::{Purpose, SeededStreams, StreamKey, StreamSource};
use crate::summary::{Quantity, TrajectorySummary};

/// Which noise sources are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimNoise {
    pub process: bool,
    pub observation: bool,
}

impl Default for SimNoise {
    fn default() -> Self {
        SimNoise {
            process: true,
            observation: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationSpec {
    pub true_params: ParamVector,
    pub x0: CompartmentState,
    pub horizon_days: i64,
    /// Strictly increasing, starting at 0, within `[0, horizon_days]`.
    pub report_days: Vec<i64>,
    pub link: ObservationLink,
    pub epoch: NaiveDate,
    pub noise: SimNoise,
}

/// Known parameters and latent path of a synthetic outbreak.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub seed: u64,
    pub population: u64,
    pub true_params: ParamVector,
    /// `latent[d]` is the state on day `d`.
    pub latent: Vec<CompartmentState>,
}

impl GroundTruth {
    pub fn r0_series(&self) -> Result<Vec<f64>> {
        self.latent.iter().map(|x| r0(x, &self.true_params)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticRun {
    pub true_params: ParamVector,
    pub latent: Vec<CompartmentState>,
    pub reports: ReportDataset,
    pub seed: u64,
    pub population: u64,
}

impl SyntheticRun {
    pub fn truth(&self) -> GroundTruth {
        GroundTruth {
            seed: self.seed,
            population: self.population,
            true_params: self.true_params,
            latent: self.latent.clone(),
        }
    }
}

/// Report days from 0 with gaps drawn uniformly from `{1, ..., 7}`.
pub fn default_report_days<R: Rng + ?Sized>(horizon_days: i64, rng: &mut R) -> Vec<i64> {
    let mut days = vec![0];
    loop {
        let next = days.last().unwrap() + rng.random_range(1..=7);
        if next > horizon_days {
            break;
        }
        days.push(next);
    }
    days
}

/// Calendar stream for [`default_report_days`] under a run seed.
pub fn seeded_report_days(horizon_days: i64, seed: u64) -> Vec<i64> {
    let mut rng = SeededStreams::new(seed).stream(StreamKey::new(Purpose::Calendar, 0, 0));
    default_report_days(horizon_days, &mut rng)
}

impl SimulationSpec {
    fn validate(&self) -> Result<()> {
        self.true_params.validate()?;
        self.x0.validate()?;
        self.link.validate()?;
        if self.horizon_days < 0 {
            return Err(Error::Validation("horizon must be non-negative".into()));
        }
        match self.report_days.first() {
            Some(0) => {}
            _ => return Err(Error::Validation("report days must start at day 0".into())),
        }
        if self.report_days.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Validation("report days must be strictly increasing".into()));
        }
        if *self.report_days.last().unwrap() > self.horizon_days {
            return Err(Error::Validation("report day beyond horizon".into()));
        }
        Ok(())
    }
}

pub fn simulate(spec: &SimulationSpec, seed: u64) -> Result<SyntheticRun> {
    simulate_with(spec, seed, &SeededStreams::new(seed))
}

/// [`simulate`] drawing from an explicit stream source.
pub fn simulate_with<S: StreamSource>(spec: &SimulationSpec, seed: u64, streams: &S) -> Result<SyntheticRun> {
    spec.validate()?;
    let population = spec.link.population;
    let theta = &spec.true_params;

    let mut latent = Vec::with_capacity(spec.horizon_days as usize + 1);
    latent.push(spec.x0);
    if spec.noise.process {
        let mut rng = streams.stream(StreamKey::new(Purpose::Latent, 0, 0));
        ProcessModel::new(population)?.propagate_gap_with(
            &spec.x0,
            theta,
            spec.horizon_days as u32,
            &mut rng,
            |_, s| latent.push(*s),
        )?;
    } else {
        let mut x = spec.x0;
        for _ in 0..spec.horizon_days {
            x = deterministic_step(&x, theta)?;
            latent.push(x);
        }
    }

    let sd = spec.link.log_sd();
    let mut rows = Vec::with_capacity(spec.report_days.len());
    let (mut max_cases, mut max_deaths) = (1u64, 0u64);
    for &day in &spec.report_days {
        let mu = predicted_log_mean(&latent[day as usize], &spec.link);
        let mut log_y = mu;
        if spec.noise.observation {
            let mut rng = streams.stream(StreamKey::new(Purpose::Report, 0, day as u64));
            for (v, s) in log_y.iter_mut().zip(sd) {
                *v += s * rng.sample::<f64, _>(StandardNormal);
            }
        }
        max_cases = max_cases.max(round_count(log_y[0].exp()));
        max_deaths = max_deaths.max(round_count(log_y[1].exp()));
        let date = spec.epoch + chrono::Duration::days(day);
        rows.push((date, max_cases, max_deaths.min(max_cases)));
    }
    Ok(SyntheticRun {
        true_params: *theta,
        latent,
        reports: ReportDataset::from_rows(&rows)?,
        seed,
        population,
    })
}

/// Rounds half up; counts below half a person become zero.
fn round_count(y: f64) -> u64 {
    if y.is_finite() && y >= 0.5 {
        (y + 0.5).floor() as u64
    } else {
        0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamRecovery {
    pub name: String,
    pub truth: f64,
    pub posterior_mean: f64,
    pub relative_error: f64,
    pub lower: f64,
    pub upper: f64,
    pub covered: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub day_index: i64,
    pub params: Vec<ParamRecovery>,
    pub r0_rmse: f64,
    /// Share of summarized days whose R0 band contains the true value.
    pub r0_coverage: f64,
    pub interval: [f64; 2],
    pub flagged: bool,
}

impl RecoveryReport {
    pub const MAX_RELATIVE_ERROR: f64 = 0.25;
    pub const MAX_R0_RMSE: f64 = 0.3;

    pub fn param(&self, name: &str) -> Option<&ParamRecovery> {
        self.params.iter().find(|p| p.name == name)
    }
}

/// Compares a summary against the truth. Parameter metrics use the last
/// summarized day; the R0 error is taken over every summarized day. The
/// credible interval is the 5%–95% band, which the summary must carry.
pub fn recovery_report(truth: &GroundTruth, summary: &TrajectorySummary) -> Result<RecoveryReport> {
    let (lo, hi) = match (summary.quantile_index(0.05), summary.quantile_index(0.95)) {
        (Some(lo), Some(hi)) => (lo, hi),
        _ => {
            return Err(Error::Mismatch {
                context: "recovery".into(),
                message: "summary lacks the 0.05 and 0.95 quantiles".into(),
            })
        }
    };
    let last = summary.days.last().ok_or_else(|| Error::Mismatch {
        context: "recovery".into(),
        message: "summary has no days".into(),
    })?;
    let true_r0 = truth.r0_series()?;
    let mut sq = 0.0;
    let mut covered_days = 0usize;
    for day in &summary.days {
        let Some(&t) = usize::try_from(day.day_index).ok().and_then(|d| true_r0.get(d)) else {
            return Err(Error::Mismatch {
                context: "recovery".into(),
                message: format!("summary day {} outside the simulated horizon", day.day_index),
            });
        };
        let s = day.get(Quantity::R0).ok_or_else(|| missing("R0", day.day_index))?;
        sq += (s.mean - t).powi(2);
        covered_days += (s.quantiles[lo] <= t && t <= s.quantiles[hi]) as usize;
    }
    let n = summary.days.len() as f64;

    let truth_params = truth.true_params.to_array();
    let mut params = Vec::with_capacity(5);
    for (q, t) in Quantity::PARAMS.iter().zip(truth_params) {
        let s = last.get(*q).ok_or_else(|| missing(q.name(), last.day_index))?;
        let scale = if t != 0.0 { t.abs() } else { 1.0 };
        let (lower, upper) = (s.quantiles[lo], s.quantiles[hi]);
        params.push(ParamRecovery {
            name: q.name().to_string(),
            truth: t,
            posterior_mean: s.mean,
            relative_error: (s.mean - t).abs() / scale,
            lower,
            upper,
            covered: lower <= t && t <= upper,
        });
    }
    let r0_rmse = (sq / n).sqrt();
    let flagged = r0_rmse > RecoveryReport::MAX_R0_RMSE
        || params
            .iter()
            .filter(|p| p.name == "beta" || p.name == "gamma")
            .any(|p| p.relative_error > RecoveryReport::MAX_RELATIVE_ERROR);
    Ok(RecoveryReport {
        day_index: last.day_index,
        params,
        r0_rmse,
        r0_coverage: covered_days as f64 / n,
        interval: [0.05, 0.95],
        flagged,
    })
}

fn missing(what: &str, day: i64) -> Error {
    Error::Mismatch {
        context: "recovery".into(),
        message: format!("summary has no {what} on day {day}"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kdpf::Particle;
    use crate::priors::PriorSpec;
    use crate::summary::{summarize, DayCloud};

    fn spec(noise: SimNoise) -> SimulationSpec {
        let priors = PriorSpec::default();
        SimulationSpec {
            true_params: priors.param_means(),
            x0: priors.state_midpoint(),
            horizon_days: 120,
            report_days: seeded_report_days(120, 9),
            link: ObservationLink::log_log([0.88, 0.54], [0.88, 0.68], [0.1, 0.1], 1_000_000).unwrap(),
            epoch: NaiveDate::from_ymd_opt(2014, 3, 23).unwrap(),
            noise,
        }
    }

    #[test]
    fn noiseless_run_is_deterministic_drift() {
        let s = spec(SimNoise {
            process: false,
            observation: false,
        });
        let run = simulate(&s, 1).unwrap();
        let mut x = s.x0;
        for d in 0..=120 {
            assert_eq!(run.latent[d], x);
            x = deterministic_step(&x, &s.true_params).unwrap();
        }
        let mut prev = (0, 0);
        for r in &run.reports.records {
            let mu = predicted_log_mean(&run.latent[r.day_index as usize], &s.link);
            let cases = round_count(mu[0].exp()).max(prev.0).max(1);
            let deaths = round_count(mu[1].exp()).max(prev.1).min(cases);
            assert_eq!((r.cum_cases, r.cum_deaths), (cases, deaths));
            prev = (cases, deaths);
        }
    }

    #[test]
    fn seeded_runs_repeat() {
        let s = spec(SimNoise::default());
        assert_eq!(simulate(&s, 4).unwrap(), simulate(&s, 4).unwrap());
        assert_ne!(simulate(&s, 4).unwrap().latent, simulate(&s, 5).unwrap().latent);
    }

    #[test]
    fn reports_are_cumulative_and_latent_admissible() {
        let run = simulate(&spec(SimNoise::default()), 11).unwrap();
        assert!(run.latent.iter().all(|x| x.is_admissible()));
        for w in run.reports.records.windows(2) {
            assert!(w[1].cum_cases >= w[0].cum_cases && w[1].cum_deaths >= w[0].cum_deaths);
        }
    }

    #[test]
    fn prior_means_give_growing_epidemic() {
        let s = spec(SimNoise::default());
        let r0_start = r0(&s.x0, &s.true_params).unwrap();
        // c β / γ at the analytic means: 0.38 · 0.319 / (21/267)
        assert!((r0_start - 0.38 * 0.319 / (21.0 / 267.0)).abs() < 1e-12);
        assert!(r0_start > 1.0);
        let run = simulate(&s, 3).unwrap();
        let first = run.reports.records.first().unwrap().cum_cases;
        let last = run.reports.records.last().unwrap().cum_cases;
        assert!(last > 2 * first, "{first} -> {last}");
    }

    #[test]
    fn report_days_follow_gap_rule() {
        let days = seeded_report_days(365, 2);
        assert_eq!(days[0], 0);
        assert!(days.windows(2).all(|w| (1..=7).contains(&(w[1] - w[0]))));
        assert!(365 - days.last().unwrap() < 7);
    }

    fn truth_summary(truth: &GroundTruth, params: ParamVector) -> TrajectorySummary {
        let clouds: Vec<DayCloud> = truth
            .latent
            .iter()
            .enumerate()
            .map(|(d, x)| DayCloud {
                day_index: d as i64,
                observed: true,
                particles: vec![
                    Particle {
                        state: *x,
                        params,
                        weight: 0.5,
                    };
                    2
                ],
            })
            .collect();
        summarize(&clouds, &[0.05, 0.95], truth.population, None).unwrap()
    }

    #[test]
    fn perfect_posterior_scores_zero() {
        let run = simulate(&spec(SimNoise::default()), 6).unwrap();
        let truth = run.truth();
        let rep = recovery_report(&truth, &truth_summary(&truth, truth.true_params)).unwrap();
        assert_eq!(rep.r0_rmse, 0.0);
        assert_eq!(rep.r0_coverage, 1.0);
        assert!(rep.params.iter().all(|p| p.relative_error == 0.0 && p.covered));
        assert!(!rep.flagged);
    }

    #[test]
    fn wrong_posterior_is_flagged() {
        let run = simulate(&spec(SimNoise::default()), 6).unwrap();
        let truth = run.truth();
        let wrong = ParamVector::new(0.5, 0.9, 0.5, 0.01, 0.1);
        let rep = recovery_report(&truth, &truth_summary(&truth, wrong)).unwrap();
        assert!(rep.flagged);
        assert!(rep.params.iter().all(|p| !p.covered));
    }

    #[test]
    fn day_grid_mismatch_errors() {
        let run = simulate(&spec(SimNoise::default()), 6).unwrap();
        let mut truth = run.truth();
        let summary = truth_summary(&truth, truth.true_params);
        truth.latent.truncate(50);
        assert!(matches!(recovery_report(&truth, &summary), Err(Error::Mismatch { .. })));
    }
}
