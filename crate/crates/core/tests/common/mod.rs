#![allow(dead_code)]

use chrono::NaiveDate;
use rand::RngCore;
use rand_chacha::ChaCha8Rng;
use seir_kdpf::model::{CompartmentState, ParamVector};
use seir_kdpf::observation::ObservationLink;
use seir_kdpf::priors::PriorSpec;
use seir_kdpf::rng::{Purpose, SeededStreams, StreamKey, StreamSource};
use seir_kdpf::simulator::{seeded_report_days, simulate, SimNoise, SimulationSpec, SyntheticRun};

/// Streams that replay fixed words for resampling and defer to seeded
/// ChaCha streams for everything else.
pub struct StubStreams {
    pub seed: u64,
    pub resample_words: Vec<u64>,
}

pub enum StubRng {
    Fixed { words: Vec<u64>, pos: usize },
    Real(Box<ChaCha8Rng>),
}

impl RngCore for StubRng {
    fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }

    fn next_u64(&mut self) -> u64 {
        match self {
            StubRng::Fixed { words, pos } => {
                let w = words[*pos % words.len()];
                *pos += 1;
                w
            }
            StubRng::Real(r) => r.next_u64(),
        }
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        for chunk in dst.chunks_mut(8) {
            let w = self.next_u64().to_le_bytes();
            chunk.copy_from_slice(&w[..chunk.len()]);
        }
    }
}

impl StreamSource for StubStreams {
    type Stream = StubRng;

    fn stream(&self, key: StreamKey) -> StubRng {
        if key.purpose == Purpose::Resample {
            StubRng::Fixed {
                words: self.resample_words.clone(),
                pos: 0,
            }
        } else {
            StubRng::Real(Box::new(SeededStreams::new(self.seed).stream(key)))
        }
    }
}

/// A word whose top 53 bits encode roughly `u`.
pub fn word_for(u: f64) -> u64 {
    ((u * (1u64 << 53) as f64) as u64) << 11
}

/// One day of the drift, written out independently of the library.
pub fn drift_oracle(x: [f64; 5], t: [f64; 5]) -> [f64; 5] {
    let [c, e, i, r, _d] = x;
    let [alpha, beta, lambda, gamma, phi] = t;
    [
        c * (1.0 - alpha),
        e * (1.0 - lambda) + beta * c * i,
        i * (1.0 - gamma) + lambda * e,
        r + gamma * i,
        phi * (r + gamma * i),
    ]
}

pub fn drift_n(mut x: [f64; 5], t: [f64; 5], n: u32) -> [f64; 5] {
    for _ in 0..n {
        x = drift_oracle(x, t);
    }
    x
}

/// Log-density of the two log counts under the log-log link, coded
/// directly from the normal density.
pub fn loglik_oracle(x: [f64; 5], link: &ObservationLink, cases: u64, deaths: u64) -> f64 {
    let p = link.population as f64;
    let sd = link.log_sd();
    let lat_c = (p * (x[2] + x[3])).max(0.5);
    let lat_d = (p * x[4]).max(0.5);
    let mu = [
        link.b_i.ln() + link.zeta_i * lat_c.ln(),
        link.b_d.ln() + link.zeta_d * lat_d.ln(),
    ];
    let y = [(cases as f64).ln(), (deaths as f64).max(0.5).ln()];
    let mut ll = 0.0;
    for k in 0..2 {
        let z = (y[k] - mu[k]) / sd[k];
        ll += -0.5 * (2.0 * std::f64::consts::PI).ln() - sd[k].ln() - 0.5 * z * z;
    }
    ll
}

pub const SYNTH_DAYS: i64 = 120;
pub const SYNTH_SIGMA: f64 = 0.1;

/// Link used for synthetic recovery: default `b`, `ζ`, log-scale `σ = 0.1`.
pub fn synthetic_link() -> ObservationLink {
    ObservationLink::log_log([0.88, 0.54], [0.88, 0.68], [SYNTH_SIGMA, SYNTH_SIGMA], 1_000_000).unwrap()
}

/// 120-day outbreak at the prior means with weekly-irregular reports.
pub fn synthetic_outbreak(seed: u64) -> SyntheticRun {
    let priors = PriorSpec::default();
    let spec = SimulationSpec {
        true_params: priors.param_means(),
        x0: priors.state_midpoint(),
        horizon_days: SYNTH_DAYS,
        report_days: seeded_report_days(SYNTH_DAYS, seed),
        link: synthetic_link(),
        epoch: NaiveDate::from_ymd_opt(2014, 3, 23).unwrap(),
        noise: SimNoise::default(),
    };
    simulate(&spec, seed).unwrap()
}

pub fn state(x: &CompartmentState) -> [f64; 5] {
    x.to_array()
}

pub fn params(t: &ParamVector) -> [f64; 5] {
    t.to_array()
}

pub fn weighted_mean_var(values: &[f64], weights: &[f64]) -> (f64, f64) {
    let total: f64 = weights.iter().sum();
    let mean = values.iter().zip(weights).map(|(v, w)| v * w).sum::<f64>() / total;
    let var = values.iter().zip(weights).map(|(v, w)| w * (v - mean).powi(2)).sum::<f64>() / total;
    (mean, var)
}
