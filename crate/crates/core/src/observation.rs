//! Log-normal observation model for cumulative case and death reports.
//!
//! In the default log-log mode the log of each reported count is normal with
//! mean `ln b + ζ ln(latent count)`, where the latent count is `P (I + R)`
//! for cases and `P D` for deaths, and standard deviation `σ`. The two
//! channels are independent.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::CompartmentState;

/// Latent and observed counts are floored at half a person before logs.
pub const COUNT_FLOOR: f64 = 0.5;

/// Smallest standard deviation a calibrated link will carry.
pub const MIN_SIGMA: f64 = 1e-12;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum LinkMode {
    /// `E[ln y] = ln b + ζ ln(P · fraction)`.
    #[default]
    LogLog,
    /// `E[ln y] = b · fraction^ζ`, taken verbatim.
    Literal,
}

/// How configured `σ` values map onto the log-count scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SigmaScale {
    /// `σ` is the standard deviation of the log count.
    #[default]
    Log,
    /// `σ` carries the `1/√P` scaling; the log-count standard deviation is
    /// `σ √P`.
    SqrtPopulation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservationLink {
    pub b_i: f64,
    pub b_d: f64,
    pub zeta_i: f64,
    pub zeta_d: f64,
    pub sigma_i: f64,
    pub sigma_d: f64,
    pub population: u64,
    pub mode: LinkMode,
    pub sigma_scale: SigmaScale,
}

impl ObservationLink {
    pub const DEFAULT_B_I: f64 = 0.88;
    pub const DEFAULT_B_D: f64 = 0.54;
    pub const DEFAULT_ZETA_I: f64 = 0.88;
    pub const DEFAULT_ZETA_D: f64 = 0.68;
    pub const DEFAULT_SIGMA_I: f64 = 0.00125;
    pub const DEFAULT_SIGMA_D: f64 = 0.00085;

    /// Log-log link with the given constants and `σ` on the log scale.
    pub fn log_log(b: [f64; 2], zeta: [f64; 2], sigma: [f64; 2], population: u64) -> Result<Self> {
        let link = ObservationLink {
            b_i: b[0],
            b_d: b[1],
            zeta_i: zeta[0],
            zeta_d: zeta[1],
            sigma_i: sigma[0],
            sigma_d: sigma[1],
            population,
            mode: LinkMode::LogLog,
            sigma_scale: SigmaScale::Log,
        };
        link.validate()?;
        Ok(link)
    }

    pub fn validate(&self) -> Result<()> {
        let checks = [
            ("b_I", self.b_i),
            ("b_D", self.b_d),
            ("zeta_I", self.zeta_i),
            ("zeta_D", self.zeta_d),
            ("sigma_I", self.sigma_i),
            ("sigma_D", self.sigma_d),
        ];
        for (name, v) in checks {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Validation(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if self.population == 0 {
            return Err(Error::Validation("population must be at least 1".into()));
        }
        Ok(())
    }

    /// Standard deviations of `(ln cases, ln deaths)` after applying the scale.
    pub fn log_sd(&self) -> [f64; 2] {
        match self.sigma_scale {
            SigmaScale::Log => [self.sigma_i, self.sigma_d],
            SigmaScale::SqrtPopulation => {
                let s = (self.population as f64).sqrt();
                [self.sigma_i * s, self.sigma_d * s]
            }
        }
    }

    /// Latent `(cases, deaths)` in persons, floored at [`COUNT_FLOOR`].
    pub fn latent_counts(&self, x: &CompartmentState) -> [f64; 2] {
        let p = self.population as f64;
        [
            (p * (x.i + x.r)).max(COUNT_FLOOR),
            (p * x.d).max(COUNT_FLOOR),
        ]
    }
}

/// One cumulative report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub date: NaiveDate,
    pub day_index: i64,
    pub cum_cases: u64,
    pub cum_deaths: u64,
}

impl Observation {
    /// Observed `(ln cases, ln deaths)`; zero deaths are floored at
    /// [`COUNT_FLOOR`], zero cases are a domain error.
    pub fn log_counts(&self) -> Result<[f64; 2]> {
        if self.cum_cases == 0 {
            return Err(Error::Domain(format!(
                "cumulative cases must be positive (day {})",
                self.day_index
            )));
        }
        Ok([
            (self.cum_cases as f64).ln(),
            (self.cum_deaths as f64).max(COUNT_FLOOR).ln(),
        ])
    }
}

pub fn predicted_log_mean(x: &CompartmentState, link: &ObservationLink) -> [f64; 2] {
    match link.mode {
        LinkMode::LogLog => {
            let [cases, deaths] = link.latent_counts(x);
            [
                link.b_i.ln() + link.zeta_i * cases.ln(),
                link.b_d.ln() + link.zeta_d * deaths.ln(),
            ]
        }
        LinkMode::Literal => [
            link.b_i * (x.i + x.r).max(0.0).powf(link.zeta_i),
            link.b_d * x.d.max(0.0).powf(link.zeta_d),
        ],
    }
}

fn normal_log_density(y: f64, mean: f64, sd: f64) -> f64 {
    let z = (y - mean) / sd;
    -0.5 * LN_2PI - sd.ln() - 0.5 * z * z
}

/// Joint log-density of the two log-counts given the latent state.
pub fn log_likelihood(x: &CompartmentState, link: &ObservationLink, obs: &Observation) -> Result<f64> {
    let y = obs.log_counts()?;
    Ok(log_likelihood_logs(x, link, &y))
}

/// As [`log_likelihood`], with observed log-counts precomputed.
pub fn log_likelihood_logs(x: &CompartmentState, link: &ObservationLink, log_obs: &[f64; 2]) -> f64 {
    let mu = predicted_log_mean(x, link);
    let sd = link.log_sd();
    normal_log_density(log_obs[0], mu[0], sd[0]) + normal_log_density(log_obs[1], mu[1], sd[1])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelFit {
    pub intercept: f64,
    pub slope: f64,
    pub residual_sd: f64,
    pub n: usize,
}

fn ols(xs: &[f64], ys: &[f64], channel: &str) -> Result<ChannelFit> {
    let n = xs.len();
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if !(sxx > 1e-12 * nf * (1.0 + mx * mx)) {
        return Err(Error::Calibration(format!(
            "{channel}: regressor has no spread (degenerate design)"
        )));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    Ok(ChannelFit {
        intercept,
        slope,
        residual_sd: (ssr / (nf - 2.0)).sqrt(),
        n,
    })
}

/// Fits `(b, ζ, σ)` per channel by least squares of the log count on the log
/// latent count. `latent[k]` is the state paired with `observations[k]`.
/// Population is taken from `base`; the result is a log-log link with `σ`
/// on the log scale.
pub fn calibrate_link(
    observations: &[Observation],
    latent: &[CompartmentState],
    base: &ObservationLink,
) -> Result<ObservationLink> {
    if observations.len() != latent.len() {
        return Err(Error::Calibration(format!(
            "{} observations but {} latent states",
            observations.len(),
            latent.len()
        )));
    }
    if observations.len() < 3 {
        return Err(Error::Calibration("at least 3 paired points are required".into()));
    }
    let mut cols: [(Vec<f64>, Vec<f64>); 2] = Default::default();
    for (obs, x) in observations.iter().zip(latent) {
        if obs.cum_cases == 0 || obs.cum_deaths == 0 {
            return Err(Error::Calibration(format!(
                "non-positive count on day {}",
                obs.day_index
            )));
        }
        let latent = base.latent_counts(x);
        cols[0].0.push(latent[0].ln());
        cols[0].1.push((obs.cum_cases as f64).ln());
        cols[1].0.push(latent[1].ln());
        cols[1].1.push((obs.cum_deaths as f64).ln());
    }
    let cases = ols(&cols[0].0, &cols[0].1, "cases")?;
    let deaths = ols(&cols[1].0, &cols[1].1, "deaths")?;
    for (name, fit) in [("cases", &cases), ("deaths", &deaths)] {
        if !(fit.slope > 0.0) {
            return Err(Error::Calibration(format!(
                "{name}: fitted exponent {} is not positive",
                fit.slope
            )));
        }
    }
    let link = ObservationLink {
        b_i: cases.intercept.exp(),
        b_d: deaths.intercept.exp(),
        zeta_i: cases.slope,
        zeta_d: deaths.slope,
        sigma_i: cases.residual_sd.max(MIN_SIGMA),
        sigma_d: deaths.residual_sd.max(MIN_SIGMA),
        population: base.population,
        mode: LinkMode::LogLog,
        sigma_scale: SigmaScale::Log,
    };
    link.validate()?;
    Ok(link)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn link(sigma: [f64; 2]) -> ObservationLink {
        ObservationLink::log_log([0.88, 0.54], [0.88, 0.68], sigma, 1_000_000).unwrap()
    }

    fn obs(cases: u64, deaths: u64) -> Observation {
        Observation {
            date: NaiveDate::from_ymd_opt(2014, 3, 23).unwrap(),
            day_index: 0,
            cum_cases: cases,
            cum_deaths: deaths,
        }
    }

    fn state_with(ir: f64, d: f64) -> CompartmentState {
        CompartmentState::new(0.38, 1e-4, ir / 2.0, ir / 2.0, d)
    }

    #[test]
    fn identity_link_gives_log_latent() {
        let l = ObservationLink::log_log([1.0, 1.0], [1.0, 1.0], [0.1, 0.1], 1_000_000).unwrap();
        let x = state_with(1.05e-4, 3e-5);
        let mu = predicted_log_mean(&x, &l);
        assert_relative_eq!(mu[0], (1e6 * 1.05e-4f64).ln(), epsilon = 1e-12);
        assert_relative_eq!(mu[1], (1e6 * 3e-5f64).ln(), epsilon = 1e-12);
    }

    #[test]
    fn calculator_example() {
        let x = state_with(1.05e-4, 3e-5);
        let mu = predicted_log_mean(&x, &link([0.1, 0.1]));
        assert_relative_eq!(mu[0], 0.88f64.ln() + 0.88 * 105f64.ln(), epsilon = 1e-12);
        assert_relative_eq!(mu[0], 3.967_651_736_628_736, epsilon = 1e-9);
    }

    #[test]
    fn zero_latent_is_floored() {
        let x = CompartmentState::new(0.3, 0.0, 0.0, 0.0, 0.0);
        let mu = predicted_log_mean(&x, &link([0.1, 0.1]));
        assert_relative_eq!(mu[0], 0.88f64.ln() + 0.88 * 0.5f64.ln(), epsilon = 1e-12);
        let ll = log_likelihood(&x, &link([0.1, 0.1]), &obs(10, 0)).unwrap();
        assert!(ll.is_finite());
    }

    #[test]
    fn literal_mode_is_verbatim() {
        let mut l = link([0.1, 0.1]);
        l.mode = LinkMode::Literal;
        let x = state_with(1e-4, 4e-5);
        let mu = predicted_log_mean(&x, &l);
        assert_relative_eq!(mu[0], 0.88 * 1e-4f64.powf(0.88), epsilon = 1e-18);
        assert_relative_eq!(mu[1], 0.54 * 4e-5f64.powf(0.68), epsilon = 1e-18);
    }

    #[test]
    fn density_at_mode_and_hand_value() {
        let l = link([0.2, 0.3]);
        let x = state_with(2e-4, 5e-5);
        let mu = predicted_log_mean(&x, &l);
        // Counts whose logs sit exactly on the mean are not integers in
        // general; evaluate through the log form.
        let at_mode = log_likelihood_logs(&x, &l, &mu);
        assert_relative_eq!(at_mode, -(2.0 * std::f64::consts::PI * 0.2 * 0.3).ln(), epsilon = 1e-12);

        let o = obs(150, 40);
        let ll = log_likelihood(&x, &l, &o).unwrap();
        let pdf = |y: f64, m: f64, s: f64| {
            (1.0 / (s * (2.0 * std::f64::consts::PI).sqrt())) * (-(y - m).powi(2) / (2.0 * s * s)).exp()
        };
        let want = (pdf(150f64.ln(), mu[0], 0.2) * pdf(40f64.ln(), mu[1], 0.3)).ln();
        assert_relative_eq!(ll, want, epsilon = 1e-10);
    }

    #[test]
    fn likelihood_decreases_away_from_mean() {
        let l = link([0.2, 0.3]);
        let x = state_with(2e-4, 5e-5);
        let mu = predicted_log_mean(&x, &l);
        let mut prev = f64::INFINITY;
        for k in 0..20 {
            let y = [mu[0] + 0.05 * k as f64, mu[1]];
            let v = log_likelihood_logs(&x, &l, &y);
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn zero_cases_is_domain_error() {
        let x = state_with(2e-4, 5e-5);
        assert!(matches!(
            log_likelihood(&x, &link([0.1, 0.1]), &obs(0, 0)),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn sqrt_population_scaling() {
        let mut l = link([0.00125, 0.00085]);
        l.sigma_scale = SigmaScale::SqrtPopulation;
        let sd = l.log_sd();
        assert_relative_eq!(sd[0], 1.25, epsilon = 1e-12);
        assert_relative_eq!(sd[1], 0.85, epsilon = 1e-12);
    }

    fn synthetic(b: [f64; 2], zeta: [f64; 2], sigma: f64, n: usize, seed: u64) -> (Vec<Observation>, Vec<CompartmentState>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut o = Vec::new();
        let mut xs = Vec::new();
        for k in 0..n {
            // latent counts spread over two decades; fractional counts are fine
            let u_cases: f64 = 10f64.powf(3.0 + 2.0 * rng.random::<f64>());
            let u_deaths: f64 = 10f64.powf(3.0 + 2.0 * rng.random::<f64>());
            let e1: f64 = rng.sample(StandardNormal);
            let e2: f64 = rng.sample(StandardNormal);
            let cases = b[0] * u_cases.powf(zeta[0]) * (sigma * e1).exp();
            let deaths = b[1] * u_deaths.powf(zeta[1]) * (sigma * e2).exp();
            xs.push(CompartmentState::new(0.3, 0.0, u_cases / 1e6, 0.0, u_deaths / 1e6));
            o.push(Observation {
                date: NaiveDate::from_ymd_opt(2014, 1, 1).unwrap(),
                day_index: k as i64,
                cum_cases: cases.round().max(1.0) as u64,
                cum_deaths: deaths.round().max(1.0) as u64,
            });
        }
        (o, xs)
    }

    #[test]
    fn degenerate_design_errors() {
        let base = link([0.1, 0.1]);
        let x = state_with(1e-4, 1e-5);
        let o = vec![obs(100, 10), obs(110, 11), obs(120, 12)];
        let err = calibrate_link(&o, &[x, x, x], &base).unwrap_err();
        assert!(matches!(err, Error::Calibration(_)));
        assert!(calibrate_link(&o[..2], &[x, x], &base).is_err());
    }

    #[test]
    fn noiseless_regression_on_exact_power_law() {
        // Exact power law b u^ζ evaluated in floating point, regressed on the
        // same logs: use counts large enough that rounding does not matter by
        // bypassing integers, i.e. fit the log pairs directly.
        let xs: Vec<f64> = (1..=30).map(|k| (10.0 * k as f64).ln()).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 0.88f64.ln() + 0.88 * x).collect();
        let fit = ols(&xs, &ys, "cases").unwrap();
        assert_relative_eq!(fit.slope, 0.88, epsilon = 1e-13);
        assert_relative_eq!(fit.intercept.exp(), 0.88, epsilon = 1e-13);
        assert!(fit.residual_sd < 1e-13);
    }

    #[test]
    fn calibration_recovers_within_three_standard_errors() {
        let sigma = 0.1;
        let (o, xs) = synthetic([0.88, 0.54], [0.88, 0.68], sigma, 200, 17);
        let base = link([1.0, 1.0]);
        let fitted = calibrate_link(&o, &xs, &base).unwrap();
        // standard errors from the design, computed independently
        let se = |channel: usize| {
            let logs: Vec<f64> = xs
                .iter()
                .map(|x| base.latent_counts(x)[channel].ln())
                .collect();
            let n = logs.len() as f64;
            let m = logs.iter().sum::<f64>() / n;
            let sxx: f64 = logs.iter().map(|v| (v - m).powi(2)).sum();
            (sigma / sxx.sqrt(), sigma * (1.0 / n + m * m / sxx).sqrt())
        };
        let (se_zi, se_bi) = se(0);
        let (se_zd, se_bd) = se(1);
        assert!((fitted.zeta_i - 0.88).abs() < 3.0 * se_zi, "{}", fitted.zeta_i);
        assert!((fitted.zeta_d - 0.68).abs() < 3.0 * se_zd, "{}", fitted.zeta_d);
        assert!((fitted.b_i.ln() - 0.88f64.ln()).abs() < 3.0 * se_bi);
        assert!((fitted.b_d.ln() - 0.54f64.ln()).abs() < 3.0 * se_bd);
        assert!((fitted.sigma_i - sigma).abs() < 0.02);
        for (ob, x) in o.iter().zip(&xs) {
            assert!(log_likelihood(x, &fitted, ob).unwrap().is_finite());
        }
    }
}
