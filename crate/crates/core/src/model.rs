//! Discrete-time stochastic SEIR model with a decaying mixing factor.
//!
//! Susceptibles are taken as `S ≈ 1`, so the state carries only the mixing
//! factor `c` and the `E, I, R, D` fractions. One step is one day.

use nalgebra::{Matrix5, Vector5};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampling::{truncated_normal_sample, GaussianFactor, Region, DEFAULT_REJECTION_CAP};

/// Hidden epidemic state, all components as fractions of the population.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompartmentState {
    /// Mixing factor.
    pub c: f64,
    /// Exposed.
    pub e: f64,
    /// Infected.
    pub i: f64,
    /// Recovered or removed.
    pub r: f64,
    /// Dead (cumulative).
    pub d: f64,
}

impl CompartmentState {
    pub const NAMES: [&'static str; 5] = ["c", "E", "I", "R", "D"];

    pub fn new(c: f64, e: f64, i: f64, r: f64, d: f64) -> Self {
        CompartmentState { c, e, i, r, d }
    }

    pub fn to_vector(&self) -> Vector5<f64> {
        Vector5::new(self.c, self.e, self.i, self.r, self.d)
    }

    pub fn from_vector(v: &Vector5<f64>) -> Self {
        CompartmentState::new(v[0], v[1], v[2], v[3], v[4])
    }

    pub fn to_array(&self) -> [f64; 5] {
        [self.c, self.e, self.i, self.r, self.d]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    /// True when the state lies in the admissible region (see [`StateRegion`]).
    pub fn is_admissible(&self) -> bool {
        StateRegion.contains(&self.to_vector())
    }

    pub fn validate(&self) -> Result<()> {
        if !self.is_finite() {
            return Err(Error::Domain(format!("non-finite state {self:?}")));
        }
        if !self.is_admissible() {
            return Err(Error::Domain(format!("state outside admissible region: {self:?}")));
        }
        Ok(())
    }
}

/// Model rates. `phi_f` is the fatality proportion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    /// Mitigation rate (decay of the mixing factor), per day.
    pub alpha: f64,
    /// Transmission rate, per day.
    pub beta: f64,
    /// Latency rate (inverse incubation period), per day.
    pub lambda: f64,
    /// Recovery/removal rate, per day.
    pub gamma: f64,
    pub phi_f: f64,
}

impl ParamVector {
    pub const NAMES: [&'static str; 5] = ["alpha", "beta", "lambda", "gamma", "phi_f"];

    pub fn new(alpha: f64, beta: f64, lambda: f64, gamma: f64, phi_f: f64) -> Self {
        ParamVector {
            alpha,
            beta,
            lambda,
            gamma,
            phi_f,
        }
    }

    pub fn zeros() -> Self {
        ParamVector::new(0.0, 0.0, 0.0, 0.0, 0.0)
    }

    pub fn to_vector(&self) -> Vector5<f64> {
        Vector5::new(self.alpha, self.beta, self.lambda, self.gamma, self.phi_f)
    }

    pub fn from_vector(v: &Vector5<f64>) -> Self {
        ParamVector::new(v[0], v[1], v[2], v[3], v[4])
    }

    pub fn to_array(&self) -> [f64; 5] {
        [self.alpha, self.beta, self.lambda, self.gamma, self.phi_f]
    }

    pub fn is_valid(&self) -> bool {
        let a = self.to_array();
        a.iter().all(|v| v.is_finite() && *v >= 0.0) && self.phi_f <= 1.0
    }

    pub fn validate(&self) -> Result<()> {
        if self.is_valid() {
            Ok(())
        } else {
            Err(Error::Domain(format!("invalid parameters {self:?}")))
        }
    }
}

/// `Ω`: all components non-negative, `E + I + R <= 1`, and `c <= 1`.
#[derive(Debug, Clone, Copy, Default)]
pub struct StateRegion;

impl Region<5> for StateRegion {
    fn contains(&self, x: &Vector5<f64>) -> bool {
        x.iter().all(|v| *v >= 0.0) && x[0] <= 1.0 && x[1] + x[2] + x[3] <= 1.0
    }

    fn project(&self, x: &mut Vector5<f64>) {
        for v in x.iter_mut() {
            if !(*v >= 0.0) {
                *v = 0.0;
            }
        }
        x[0] = x[0].min(1.0);
        let eir = x[1] + x[2] + x[3];
        if eir > 1.0 {
            for k in 1..4 {
                x[k] /= eir;
            }
            while x[1] + x[2] + x[3] > 1.0 {
                for k in 1..4 {
                    x[k] *= 1.0 - f64::EPSILON;
                }
            }
        }
    }
}

/// Noise-free one-day transition.
///
/// The death row uses `D' = φ_f R + φ_f γ I`, which keeps `D = φ_f R` along
/// noiseless trajectories. The result is not projected into `Ω`.
pub fn deterministic_step(x: &CompartmentState, theta: &ParamVector) -> Result<CompartmentState> {
    if !x.is_finite() || !theta.to_array().iter().all(|v| v.is_finite()) {
        return Err(Error::Domain("deterministic_step: non-finite input".into()));
    }
    Ok(drift(x, theta))
}

#[inline]
fn drift(x: &CompartmentState, theta: &ParamVector) -> CompartmentState {
    let ParamVector {
        alpha,
        beta,
        lambda,
        gamma,
        phi_f,
    } = *theta;
    CompartmentState {
        c: x.c - alpha * x.c,
        e: x.e + beta * x.c * x.i - lambda * x.e,
        i: x.i + lambda * x.e - gamma * x.i,
        r: x.r + gamma * x.i,
        d: phi_f * x.r + phi_f * gamma * x.i,
    }
}

/// Iterates the drift `n_days` times: the mean path over a reporting gap.
pub fn expected_state(x: &CompartmentState, theta: &ParamVector, n_days: u32) -> Result<CompartmentState> {
    let mut s = *x;
    for _ in 0..n_days {
        s = deterministic_step(&s, theta)?;
    }
    Ok(s)
}

/// Per-day process noise covariance, `1/P²` times the rate matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProcessCovariance {
    q: Matrix5<f64>,
    factor: Matrix5<f64>,
}

impl ProcessCovariance {
    pub fn matrix(&self) -> &Matrix5<f64> {
        &self.q
    }

    /// Structural square root: each independent noise source `ξ_χ` with
    /// variance `χ/P²` enters the rows it perturbs. Columns are
    /// `(ξ_α, ξ_β, ξ_λ, ξ_γ, unused)`.
    pub fn factor(&self) -> GaussianFactor<5> {
        GaussianFactor::from_factor(self.factor)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.q.symmetric_eigenvalues().min()
    }
}

pub fn process_covariance(theta: &ParamVector, population: u64) -> Result<ProcessCovariance> {
    if population == 0 {
        return Err(Error::Domain("population must be at least 1".into()));
    }
    theta.validate()?;
    let p2 = (population as f64) * (population as f64);
    let ParamVector {
        alpha,
        beta,
        lambda,
        gamma,
        phi_f,
    } = *theta;
    let gp = gamma * phi_f;
    #[rustfmt::skip]
    let q = Matrix5::new(
        alpha, 0.0,            0.0,             0.0,    0.0,
        0.0,   lambda + beta, -lambda,          0.0,    0.0,
        0.0,  -lambda,         lambda + gamma, -gamma, -gp,
        0.0,   0.0,           -gamma,           gamma,  gp,
        0.0,   0.0,           -gp,              gp,     gp * phi_f,
    ) / p2;

    let p = population as f64;
    let (sa, sb, sl, sg) = (alpha.sqrt(), beta.sqrt(), lambda.sqrt(), gamma.sqrt());
    #[rustfmt::skip]
    let factor = Matrix5::new(
        sa,  0.0,  0.0,  0.0,          0.0,
        0.0, -sb,  sl,   0.0,          0.0,
        0.0, 0.0, -sl,   sg,           0.0,
        0.0, 0.0,  0.0, -sg,           0.0,
        0.0, 0.0,  0.0, -phi_f * sg,   0.0,
    ) / p;
    Ok(ProcessCovariance { q, factor })
}

/// Result of one truncated transition draw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub state: CompartmentState,
    /// The rejection cap was hit and the draw was projected onto `Ω`.
    pub projected: bool,
}

/// Stochastic transition kernel: truncated normal around the drift.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProcessModel {
    pub population: u64,
    pub rejection_cap: usize,
}

impl ProcessModel {
    pub fn new(population: u64) -> Result<Self> {
        if population == 0 {
            return Err(Error::Domain("population must be at least 1".into()));
        }
        Ok(ProcessModel {
            population,
            rejection_cap: DEFAULT_REJECTION_CAP,
        })
    }

    pub fn with_rejection_cap(mut self, cap: usize) -> Self {
        self.rejection_cap = cap;
        self
    }

    pub fn sample_next_state<R: Rng + ?Sized>(
        &self,
        x: &CompartmentState,
        theta: &ParamVector,
        rng: &mut R,
    ) -> Result<Transition> {
        let cov = process_covariance(theta, self.population)?;
        self.sample_with(x, theta, &cov.factor(), rng)
    }

    fn sample_with<R: Rng + ?Sized>(
        &self,
        x: &CompartmentState,
        theta: &ParamVector,
        factor: &GaussianFactor<5>,
        rng: &mut R,
    ) -> Result<Transition> {
        let mean = deterministic_step(x, theta)?.to_vector();
        let draw = truncated_normal_sample(&mean, factor, &StateRegion, rng, self.rejection_cap);
        Ok(Transition {
            state: CompartmentState::from_vector(&draw.value),
            projected: draw.projected,
        })
    }

    /// Advances `n_days` with fixed parameters. Returns the final state and
    /// the number of projected draws.
    pub fn propagate_gap<R: Rng + ?Sized>(
        &self,
        x: &CompartmentState,
        theta: &ParamVector,
        n_days: u32,
        rng: &mut R,
    ) -> Result<(CompartmentState, usize)> {
        self.propagate_gap_with(x, theta, n_days, rng, |_, _| {})
    }

    /// Like [`propagate_gap`](Self::propagate_gap), calling `visit(day, state)`
    /// after each simulated day (`day` counts from 1).
    pub fn propagate_gap_with<R, F>(
        &self,
        x: &CompartmentState,
        theta: &ParamVector,
        n_days: u32,
        rng: &mut R,
        mut visit: F,
    ) -> Result<(CompartmentState, usize)>
    where
        R: Rng + ?Sized,
        F: FnMut(u32, &CompartmentState),
    {
        if n_days == 0 {
            return Ok((*x, 0));
        }
        let factor = process_covariance(theta, self.population)?.factor();
        let mut state = *x;
        let mut projected = 0;
        for day in 1..=n_days {
            let t = self.sample_with(&state, theta, &factor, rng)?;
            projected += t.projected as usize;
            state = t.state;
            visit(day, &state);
        }
        Ok((state, projected))
    }
}

/// Time-varying basic reproductive ratio `c β / γ`.
pub fn r0(x: &CompartmentState, theta: &ParamVector) -> Result<f64> {
    if !(theta.gamma > 0.0) {
        return Err(Error::Domain(format!(
            "r0 undefined for gamma = {}",
            theta.gamma
        )));
    }
    Ok(x.c * (theta.beta / theta.gamma))
}
