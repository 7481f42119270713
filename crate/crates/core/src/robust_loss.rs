//! Asymmetric Huber loss and the asymmetric least informative distribution
//! (ALID) built on it.
//!
//! The loss is `rho_q(u) = 2 * rho_H(u) * (q if u > 0 else 1 - q)` where
//! `rho_H` is Huber's loss with tuning constant `c`. With the factor two,
//! `q = 0.5` and `c -> inf` give exactly the Gaussian kernel `u^2 / 2`.
//!
//! The ALID density is `exp(-rho_q((y - mu) / sigma)) / B_q(sigma)`. Its
//! normalizer splits into two Gaussian pieces on `[-c, 0]` and `[0, c]` and
//! two exponential tails, all available in closed form:
//!
//! ```text
//! B_q(sigma) / sigma = sqrt(pi / q) / 2 * erf(c sqrt(q))
//!                    + sqrt(pi / (1 - q)) / 2 * erf(c sqrt(1 - q))
//!                    + exp(-q c^2) / (2 q c)
//!                    + exp(-(1 - q) c^2) / (2 (1 - q) c)
//! ```

use libm::erf;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// `statrs` provides the starting point; two Newton steps against the
/// correctly rounded `libm::erf` bring it to full precision.
fn erf_inv(x: f64) -> f64 {
    let mut y = statrs::function::erf::erf_inv(x);
    if !y.is_finite() {
        return y;
    }
    for _ in 0..2 {
        let slope = std::f64::consts::FRAC_2_SQRT_PI * (-y * y).exp();
        if slope == 0.0 {
            break;
        }
        y -= (erf(y) - x) / slope;
    }
    y
}

/// Conventional Huber constant giving 95% efficiency under Gaussian errors.
pub const DEFAULT_TUNING: f64 = 1.345;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossConfig {
    pub q: f64,
    pub c: f64,
}

impl LossConfig {
    pub fn new(q: f64, c: f64) -> Result<Self> {
        if !(q > 0.0 && q < 1.0) {
            return Err(Error::Domain(format!("M-quantile level q={q} outside (0, 1)")));
        }
        if !(c > 0.0) || c.is_nan() {
            return Err(Error::Domain(format!("tuning constant c={c} must be positive")));
        }
        Ok(Self { q, c })
    }

    /// Asymmetry weight: `q` on the positive side, `1 - q` at and below zero.
    #[inline]
    pub fn side_weight(&self, u: f64) -> f64 {
        if u > 0.0 {
            self.q
        } else {
            1.0 - self.q
        }
    }

    #[inline]
    pub fn rho(&self, u: f64) -> f64 {
        let a = u.abs();
        let huber = if a <= self.c { 0.5 * u * u } else { self.c * a - 0.5 * self.c * self.c };
        2.0 * self.side_weight(u) * huber
    }

    #[inline]
    pub fn psi(&self, u: f64) -> f64 {
        let clipped = if u.abs() < self.c { u } else { self.c * u.signum() };
        2.0 * self.side_weight(u) * clipped
    }

    /// IWLS weight `psi(u) / u`, with the left limit `2 (1 - q)` at zero.
    #[inline]
    pub fn psi_weight(&self, u: f64) -> f64 {
        let a = u.abs();
        let w = 2.0 * self.side_weight(u);
        if a <= self.c {
            w
        } else {
            w * self.c / a
        }
    }

    /// Derivative of `psi`, taking the left limit on the kink set {-c, 0, c}.
    #[inline]
    pub fn psi_prime(&self, u: f64) -> f64 {
        if u > -self.c && u <= self.c {
            2.0 * self.side_weight(u)
        } else {
            0.0
        }
    }

    /// Normalizer of `exp(-rho_q(u))` over the real line, i.e. `B_q(1)`.
    pub fn unit_norm_const(&self) -> f64 {
        let [m1, m2, m3, m4] = self.piece_masses();
        m1 + m2 + m3 + m4
    }

    /// Masses of the left tail, the two central pieces and the right tail.
    fn piece_masses(&self) -> [f64; 4] {
        let q = self.q;
        let p = 1.0 - q;
        let c = self.c;
        let sqrt_pi = std::f64::consts::PI.sqrt();
        [
            (-p * c * c).exp() / (2.0 * p * c),
            0.5 * sqrt_pi / p.sqrt() * erf(c * p.sqrt()),
            0.5 * sqrt_pi / q.sqrt() * erf(c * q.sqrt()),
            (-q * c * c).exp() / (2.0 * q * c),
        ]
    }

    /// CDF of the standardized ALID.
    pub fn unit_cdf(&self, u: f64) -> f64 {
        let [m1, m2, m3, m4] = self.piece_masses();
        let total = m1 + m2 + m3 + m4;
        let q = self.q;
        let p = 1.0 - q;
        let c = self.c;
        let sqrt_pi = std::f64::consts::PI.sqrt();
        let mass = if u <= -c {
            m1 * (2.0 * p * c * (u + c)).exp()
        } else if u <= 0.0 {
            m1 + 0.5 * sqrt_pi / p.sqrt() * (erf(p.sqrt() * u) + erf(p.sqrt() * c))
        } else if u <= c {
            m1 + m2 + 0.5 * sqrt_pi / q.sqrt() * erf(q.sqrt() * u)
        } else {
            total - m4 * (-2.0 * q * c * (u - c)).exp()
        };
        (mass / total).clamp(0.0, 1.0)
    }

    /// Inverse of [`LossConfig::unit_cdf`] for `prob` in (0, 1).
    pub fn unit_quantile(&self, prob: f64) -> f64 {
        let [m1, m2, m3, m4] = self.piece_masses();
        let total = m1 + m2 + m3 + m4;
        let target = prob * total;
        let q = self.q;
        let p = 1.0 - q;
        let c = self.c;
        let sqrt_pi = std::f64::consts::PI.sqrt();
        let u = if target <= m1 {
            -c + (target / m1).ln() / (2.0 * p * c)
        } else if target <= m1 + m2 {
            let rhs = 2.0 * (target - m1) * p.sqrt() / sqrt_pi - erf(p.sqrt() * c);
            erf_inv(rhs.clamp(-1.0, 1.0)) / p.sqrt()
        } else if target <= m1 + m2 + m3 {
            let rhs = 2.0 * (target - m1 - m2) * q.sqrt() / sqrt_pi;
            erf_inv(rhs.clamp(-1.0, 1.0)) / q.sqrt()
        } else {
            let rest = (total - target) / m4;
            c - rest.ln() / (2.0 * q * c)
        };
        if !u.is_finite() {
            return u;
        }
        // one Newton polish against the closed-form CDF
        let dens = (-self.rho(u)).exp() / total;
        if dens > 1e-300 {
            let refined = u - (self.unit_cdf(u) - prob) / dens;
            if refined.is_finite() {
                return refined;
            }
        }
        u
    }
}

fn check_finite(u: f64) -> Result<()> {
    if u.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("residual {u} is not finite")))
    }
}

/// Asymmetric Huber loss at a standardized residual.
pub fn rho(u: f64, cfg: &LossConfig) -> Result<f64> {
    check_finite(u)?;
    Ok(cfg.rho(u))
}

/// Influence function `d rho_q / du`.
pub fn psi(u: f64, cfg: &LossConfig) -> Result<f64> {
    check_finite(u)?;
    Ok(cfg.psi(u))
}

/// Closed-form normalizing constant `B_q(sigma)`.
pub fn alid_norm_const(cfg: &LossConfig, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::Domain(format!("scale sigma={sigma} must be positive")));
    }
    Ok(sigma * cfg.unit_norm_const())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlidParams {
    pub loss: LossConfig,
    pub mu: f64,
    pub sigma: f64,
}

impl AlidParams {
    pub fn new(loss: LossConfig, mu: f64, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::Domain(format!("scale sigma={sigma} must be positive")));
        }
        if !mu.is_finite() {
            return Err(Error::Domain(format!("location {mu} is not finite")));
        }
        Ok(Self { loss, mu, sigma })
    }

    pub fn logpdf(&self, y: f64) -> f64 {
        -(self.sigma * self.loss.unit_norm_const()).ln() - self.loss.rho((y - self.mu) / self.sigma)
    }

    pub fn cdf(&self, y: f64) -> f64 {
        self.loss.unit_cdf((y - self.mu) / self.sigma)
    }

    pub fn quantile(&self, prob: f64) -> f64 {
        self.mu + self.sigma * self.loss.unit_quantile(prob)
    }

    /// One inverse-CDF draw.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        loop {
            let v: f64 = rng.random();
            if v > 0.0 {
                return self.quantile(v);
            }
        }
    }
}

/// ALID log-density `-log B_q(sigma) - rho_q((y - mu) / sigma)`.
pub fn alid_logpdf(y: f64, params: &AlidParams) -> Result<f64> {
    check_finite(y)?;
    Ok(params.logpdf(y))
}

/// `n` i.i.d. inverse-CDF draws, deterministic in `seed`.
pub fn alid_sample(params: &AlidParams, seed: u64, n: usize) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::Domain("sample size must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n).map(|_| params.draw(&mut rng)).collect())
}
