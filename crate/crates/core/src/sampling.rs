//! Primitive samplers: uniform, beta, and truncated multivariate normal.

use nalgebra::{DMatrix, SMatrix, SVector, SymmetricEigen};
use rand::distr::Open01;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Default number of rejection attempts before falling back to projection.
pub const DEFAULT_REJECTION_CAP: usize = 1000;

pub fn uniform_sample<R: Rng + ?Sized>(lo: f64, hi: f64, rng: &mut R) -> f64 {
    let u: f64 = rng.random();
    lo + (hi - lo) * u
}

/// Draws from Beta(shape1, shape2) with Cheng's rejection algorithms
/// (BB when both shapes exceed one, BC otherwise).
pub fn beta_sample<R: Rng + ?Sized>(shape1: f64, shape2: f64, rng: &mut R) -> Result<f64> {
    if !(shape1 > 0.0 && shape2 > 0.0) || !shape1.is_finite() || !shape2.is_finite() {
        return Err(Error::Domain(format!(
            "beta shapes must be positive and finite, got ({shape1}, {shape2})"
        )));
    }
    loop {
        let x = if shape1.min(shape2) > 1.0 {
            cheng_bb(shape1, shape2, rng)
        } else {
            cheng_bc(shape1, shape2, rng)
        };
        if x > 0.0 && x < 1.0 {
            return Ok(x);
        }
    }
}

const LN_4: f64 = 1.386_294_361_119_890_6;
const ONE_PLUS_LN_5: f64 = 2.609_437_912_434_100_3;

fn cheng_bb<R: Rng + ?Sized>(aa: f64, bb: f64, rng: &mut R) -> f64 {
    let a = aa.min(bb);
    let b = aa.max(bb);
    let alpha = a + b;
    let beta = ((alpha - 2.0) / (2.0 * a * b - alpha)).sqrt();
    let gamma = a + 1.0 / beta;
    let w = loop {
        let u1: f64 = rng.sample(Open01);
        let u2: f64 = rng.sample(Open01);
        let v = beta * (u1 / (1.0 - u1)).ln();
        let w = (a * v.exp()).min(f64::MAX);
        let z = u1 * u1 * u2;
        let r = gamma * v - LN_4;
        let s = a + r - w;
        if s + ONE_PLUS_LN_5 >= 5.0 * z {
            break w;
        }
        let t = z.ln();
        if s > t || r + alpha * (alpha / (b + w)).ln() >= t {
            break w;
        }
    };
    if aa == a {
        w / (b + w)
    } else {
        b / (b + w)
    }
}

fn cheng_bc<R: Rng + ?Sized>(aa: f64, bb: f64, rng: &mut R) -> f64 {
    let a = aa.max(bb);
    let b = aa.min(bb);
    let alpha = a + b;
    let beta = 1.0 / b;
    let delta = 1.0 + a - b;
    let k1 = delta * (0.013_888_9 + 0.041_666_7 * b) / (a * beta - 0.777_778);
    let k2 = 0.25 + (0.5 + 0.25 / delta) * b;
    let w = loop {
        let u1: f64 = rng.sample(Open01);
        let u2: f64 = rng.sample(Open01);
        let z;
        if u1 < 0.5 {
            let y = u1 * u2;
            z = u1 * y;
            if 0.25 * u2 + z - y >= k1 {
                continue;
            }
        } else {
            z = u1 * u1 * u2;
            if z <= 0.25 {
                let v = beta * (u1 / (1.0 - u1)).ln();
                break (a * v.exp()).min(f64::MAX);
            }
            if z >= k2 {
                continue;
            }
        }
        let v = beta * (u1 / (1.0 - u1)).ln();
        let w = (a * v.exp()).min(f64::MAX);
        if alpha * ((alpha / (b + w)).ln() + v) - LN_4 >= z.ln() {
            break w;
        }
    };
    if aa == a {
        w / (b + w)
    } else {
        b / (b + w)
    }
}

/// A set the truncated sampler accepts draws from, with a projection used
/// when rejection sampling runs out of attempts.
pub trait Region<const N: usize> {
    fn contains(&self, x: &SVector<f64, N>) -> bool;
    fn project(&self, x: &mut SVector<f64, N>);
}

/// Axis-aligned box `lo <= x <= hi` (bounds may be infinite).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxRegion<const N: usize> {
    pub lo: [f64; N],
    pub hi: [f64; N],
}

impl<const N: usize> BoxRegion<N> {
    pub fn new(lo: [f64; N], hi: [f64; N]) -> Self {
        BoxRegion { lo, hi }
    }
}

impl<const N: usize> Region<N> for BoxRegion<N> {
    fn contains(&self, x: &SVector<f64, N>) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(self.hi.iter()))
            .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }

    fn project(&self, x: &mut SVector<f64, N>) {
        for (i, v) in x.iter_mut().enumerate() {
            *v = v.clamp(self.lo[i], self.hi[i]);
        }
    }
}

/// Square-root factor `L` of a PSD covariance, `L Lᵀ = Σ`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianFactor<const N: usize> {
    factor: SMatrix<f64, N, N>,
    zero: bool,
}

impl<const N: usize> GaussianFactor<N> {
    pub fn zero() -> Self {
        GaussianFactor {
            factor: SMatrix::zeros(),
            zero: true,
        }
    }

    /// Wraps an externally computed factor.
    pub fn from_factor(factor: SMatrix<f64, N, N>) -> Self {
        let zero = factor.iter().all(|v| *v == 0.0);
        GaussianFactor { factor, zero }
    }

    /// Factors a symmetric PSD matrix through its eigendecomposition, so
    /// singular covariances are handled. Eigenvalues slightly below zero
    /// (relative tolerance 1e-10 of the largest) are clamped.
    pub fn from_covariance(cov: &SMatrix<f64, N, N>) -> Result<Self> {
        if cov.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("covariance has non-finite entries".into()));
        }
        if cov.iter().all(|v| *v == 0.0) {
            return Ok(Self::zero());
        }
        let sym = (cov + cov.transpose()) * 0.5;
        let eig = SymmetricEigen::new(DMatrix::from_column_slice(N, N, sym.as_slice()));
        let scale = eig.eigenvalues.amax();
        let tol = 1e-10 * scale.max(f64::MIN_POSITIVE);
        let mut factor = SMatrix::<f64, N, N>::from_column_slice(eig.eigenvectors.as_slice());
        for (j, lambda) in eig.eigenvalues.iter().enumerate() {
            if *lambda < -tol {
                return Err(Error::Domain(format!(
                    "covariance is not positive semidefinite (eigenvalue {lambda:e})"
                )));
            }
            let s = lambda.max(0.0).sqrt();
            factor.column_mut(j).scale_mut(s);
        }
        Ok(Self::from_factor(factor))
    }

    pub fn matrix(&self) -> &SMatrix<f64, N, N> {
        &self.factor
    }

    pub fn is_zero(&self) -> bool {
        self.zero
    }

    pub fn covariance(&self) -> SMatrix<f64, N, N> {
        self.factor * self.factor.transpose()
    }

    /// One unconstrained draw `mean + L z`.
    pub fn draw<R: Rng + ?Sized>(&self, mean: &SVector<f64, N>, rng: &mut R) -> SVector<f64, N> {
        if self.zero {
            return *mean;
        }
        let z = SVector::<f64, N>::from_fn(|_, _| rng.sample(StandardNormal));
        mean + self.factor * z
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncatedDraw<const N: usize> {
    pub value: SVector<f64, N>,
    /// Number of rejected proposals before the accepted one.
    pub rejections: usize,
    /// True when the rejection cap was exhausted and the draw was projected.
    pub projected: bool,
}

/// Draws from `N(mean, L Lᵀ)` truncated to `region` by rejection, with at most
/// `cap` proposals; after that an unconstrained draw is projected onto the
/// region.
pub fn truncated_normal_sample<const N: usize, G, R>(
    mean: &SVector<f64, N>,
    factor: &GaussianFactor<N>,
    region: &G,
    rng: &mut R,
    cap: usize,
) -> TruncatedDraw<N>
where
    G: Region<N> + ?Sized,
    R: Rng + ?Sized,
{
    if factor.is_zero() {
        let mut value = *mean;
        let inside = region.contains(&value);
        if !inside {
            region.project(&mut value);
        }
        return TruncatedDraw {
            value,
            rejections: 0,
            projected: !inside,
        };
    }
    for attempt in 0..cap {
        let value = factor.draw(mean, rng);
        if region.contains(&value) {
            return TruncatedDraw {
                value,
                rejections: attempt,
                projected: false,
            };
        }
    }
    let mut value = factor.draw(mean, rng);
    region.project(&mut value);
    log::debug!("truncated normal: rejection cap {cap} exhausted, projecting");
    TruncatedDraw {
        value,
        rejections: cap,
        projected: true,
    }
}

/// Convenience wrapper that factors `cov` before sampling.
pub fn truncated_normal_sample_cov<const N: usize, G, R>(
    mean: &SVector<f64, N>,
    cov: &SMatrix<f64, N, N>,
    region: &G,
    rng: &mut R,
    cap: usize,
) -> Result<TruncatedDraw<N>>
where
    G: Region<N> + ?Sized,
    R: Rng + ?Sized,
{
    let factor = GaussianFactor::from_covariance(cov)?;
    Ok(truncated_normal_sample(mean, &factor, region, rng, cap))
}
