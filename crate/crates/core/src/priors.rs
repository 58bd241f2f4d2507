//! Prior distributions for initial parameters and states.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CompartmentState, ParamVector};
use crate::sampling::{beta_sample, uniform_sample, BoxRegion};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "lowercase", deny_unknown_fields)]
pub enum Prior {
    Uniform { lo: f64, hi: f64 },
    Beta { shape1: f64, shape2: f64 },
}

impl Prior {
    pub fn uniform(lo: f64, hi: f64) -> Self {
        Prior::Uniform { lo, hi }
    }

    pub fn beta(shape1: f64, shape2: f64) -> Self {
        Prior::Beta { shape1, shape2 }
    }

    /// Support as `(lower, upper)`.
    pub fn support(&self) -> (f64, f64) {
        match *self {
            Prior::Uniform { lo, hi } => (lo, hi),
            Prior::Beta { .. } => (0.0, 1.0),
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Prior::Uniform { lo, hi } => 0.5 * (lo + hi),
            Prior::Beta { shape1, shape2 } => shape1 / (shape1 + shape2),
        }
    }

    /// Checks hyperparameters; `key` names the entry in error messages.
    pub fn validate(&self, key: &str) -> Result<()> {
        match *self {
            Prior::Uniform { lo, hi } => {
                if !lo.is_finite() || !hi.is_finite() {
                    return Err(Error::config(key, "uniform bounds must be finite"));
                }
                if !(lo < hi) {
                    return Err(Error::config(key, format!("uniform requires lo < hi, got [{lo}, {hi}]")));
                }
            }
            Prior::Beta { shape1, shape2 } => {
                if !(shape1.is_finite() && shape1 > 0.0) {
                    return Err(Error::config(format!("{key}.shape1"), format!("must be positive, got {shape1}")));
                }
                if !(shape2.is_finite() && shape2 > 0.0) {
                    return Err(Error::config(format!("{key}.shape2"), format!("must be positive, got {shape2}")));
                }
            }
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<f64> {
        match *self {
            Prior::Uniform { lo, hi } => Ok(uniform_sample(lo, hi, rng)),
            Prior::Beta { shape1, shape2 } => beta_sample(shape1, shape2, rng),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParamPriors {
    pub alpha: Prior,
    pub beta: Prior,
    pub lambda: Prior,
    pub gamma: Prior,
    pub phi_f: Prior,
}

impl Default for ParamPriors {
    fn default() -> Self {
        ParamPriors {
            alpha: Prior::uniform(0.0059, 0.00593),
            beta: Prior::uniform(0.259, 0.379),
            lambda: Prior::beta(78.0, 577.0),
            gamma: Prior::beta(21.0, 246.0),
            phi_f: Prior::beta(37.0, 15.0),
        }
    }
}

impl ParamPriors {
    pub fn as_array(&self) -> [Prior; 5] {
        [self.alpha, self.beta, self.lambda, self.gamma, self.phi_f]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StatePriors {
    pub c: Prior,
    #[serde(rename = "E")]
    pub e: Prior,
    #[serde(rename = "I")]
    pub i: Prior,
    #[serde(rename = "R")]
    pub r: Prior,
    #[serde(rename = "D")]
    pub d: Prior,
}

impl Default for StatePriors {
    fn default() -> Self {
        StatePriors {
            c: Prior::uniform(0.36, 0.40),
            e: Prior::uniform(0.000128, 0.000141),
            i: Prior::uniform(0.000050, 0.000061),
            r: Prior::uniform(0.000042, 0.000058),
            d: Prior::uniform(0.000029, 0.000030),
        }
    }
}

impl StatePriors {
    pub fn as_array(&self) -> [Prior; 5] {
        [self.c, self.e, self.i, self.r, self.d]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct PriorSpec {
    pub params: ParamPriors,
    pub states: StatePriors,
}

/// Parameter support is truncated above at this multiple of the prior's
/// upper support bound (except `phi_f`, capped at 1).
pub const SUPPORT_HEADROOM: f64 = 10.0;

impl PriorSpec {
    /// Ensures every prior's support lies inside the region its target type
    /// admits.
    pub fn validate(&self) -> Result<()> {
        for (name, prior) in ParamVector::NAMES.iter().zip(self.params.as_array()) {
            let key = format!("priors.params.{name}");
            prior.validate(&key)?;
            let (lo, hi) = prior.support();
            if lo < 0.0 {
                return Err(Error::config(key, "support must be non-negative"));
            }
            if *name == "phi_f" && hi > 1.0 {
                return Err(Error::config(key, "fatality proportion support must lie in [0, 1]"));
            }
        }
        for (name, prior) in CompartmentState::NAMES.iter().zip(self.states.as_array()) {
            let key = format!("priors.states.{name}");
            prior.validate(&key)?;
            let (lo, hi) = prior.support();
            if lo < 0.0 {
                return Err(Error::config(key, "support must be non-negative"));
            }
            if *name == "c" && hi > 1.0 {
                return Err(Error::config(key, "mixing factor support must lie in [0, 1]"));
            }
        }
        let eir_max: f64 = [self.states.e, self.states.i, self.states.r]
            .iter()
            .map(|p| p.support().1)
            .sum();
        if eir_max > 1.0 {
            return Err(Error::config(
                "priors.states",
                format!("E + I + R can reach {eir_max} > 1"),
            ));
        }
        Ok(())
    }

    /// Box `ω` that kernel-regenerated parameters are truncated to.
    pub fn param_support(&self) -> BoxRegion<5> {
        let priors = self.params.as_array();
        let mut hi = [0.0; 5];
        for (k, p) in priors.iter().enumerate() {
            hi[k] = SUPPORT_HEADROOM * p.support().1;
        }
        hi[4] = 1.0;
        BoxRegion::new([0.0; 5], hi)
    }

    pub fn param_means(&self) -> ParamVector {
        let m = self.params.as_array().map(|p| p.mean());
        ParamVector::new(m[0], m[1], m[2], m[3], m[4])
    }

    pub fn state_midpoint(&self) -> CompartmentState {
        let m = self.states.as_array().map(|p| p.mean());
        CompartmentState::new(m[0], m[1], m[2], m[3], m[4])
    }
}

/// One joint draw of initial state and parameters.
pub fn sample_initial<R: Rng + ?Sized>(priors: &PriorSpec, rng: &mut R) -> Result<(CompartmentState, ParamVector)> {
    let mut p = [0.0; 5];
    for (slot, prior) in p.iter_mut().zip(priors.params.as_array()) {
        *slot = prior.sample(rng)?;
    }
    let mut s = [0.0; 5];
    for (slot, prior) in s.iter_mut().zip(priors.states.as_array()) {
        *slot = prior.sample(rng)?;
    }
    Ok((
        CompartmentState::new(s[0], s[1], s[2], s[3], s[4]),
        ParamVector::new(p[0], p[1], p[2], p[3], p[4]),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn defaults_validate() {
        PriorSpec::default().validate().unwrap();
    }

    #[test]
    fn draws_satisfy_type_invariants() {
        let priors = PriorSpec::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10_000 {
            let (x, theta) = sample_initial(&priors, &mut rng).unwrap();
            x.validate().unwrap();
            theta.validate().unwrap();
            assert!(theta.gamma > 0.0);
        }
    }

    #[test]
    fn degenerate_uniform_collapses() {
        let a = 0.25;
        let p = Prior::uniform(a, a + 1e-14);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            assert!((p.sample(&mut rng).unwrap() - a).abs() <= 1e-14);
        }
    }

    #[test]
    fn zero_shape_names_key() {
        let mut priors = PriorSpec::default();
        priors.params.lambda = Prior::beta(0.0, 5.0);
        match priors.validate() {
            Err(Error::Config { key, .. }) => assert_eq!(key, "priors.params.lambda.shape1"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn out_of_support_priors_rejected() {
        let mut priors = PriorSpec::default();
        priors.params.phi_f = Prior::uniform(0.5, 1.2);
        assert!(priors.validate().is_err());
        let mut priors = PriorSpec::default();
        priors.states.c = Prior::uniform(0.5, 1.5);
        assert!(priors.validate().is_err());
        let mut priors = PriorSpec::default();
        priors.states.e = Prior::uniform(0.0, 0.6);
        priors.states.i = Prior::uniform(0.0, 0.6);
        assert!(priors.validate().is_err());
    }

    #[test]
    fn support_box() {
        let b = PriorSpec::default().param_support();
        assert!((b.hi[0] - 0.0593).abs() < 1e-15);
        assert!((b.hi[1] - 3.79).abs() < 1e-12);
        assert_eq!(b.hi[2], 10.0);
        assert_eq!(b.hi[4], 1.0);
    }
}
