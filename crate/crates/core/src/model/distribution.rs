use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Private-cost law of one advertiser, supported on `[lower, upper]`.
///
/// The catalog covers a regular law with linear `zeta` (uniform), a regular law
/// with curved `zeta` (truncated exponential) and two-piece uniform mixtures,
/// which are non-regular whenever the density jumps upwards or has a gap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CostDistribution {
    Uniform { lower: f64, upper: f64 },
    /// Density proportional to `exp(-rate * (c - lower))`; any non-zero rate.
    TruncatedExponential { lower: f64, upper: f64, rate: f64 },
    /// `weight * U[first] + (1 - weight) * U[second]`.
    UniformMixture { weight: f64, first: [f64; 2], second: [f64; 2] },
}

impl CostDistribution {
    pub fn uniform(lower: f64, upper: f64) -> Result<Self> {
        let d = CostDistribution::Uniform { lower, upper };
        d.validate()?;
        Ok(d)
    }

    pub fn truncated_exponential(lower: f64, upper: f64, rate: f64) -> Result<Self> {
        let d = CostDistribution::TruncatedExponential { lower, upper, rate };
        d.validate()?;
        Ok(d)
    }

    pub fn uniform_mixture(weight: f64, first: [f64; 2], second: [f64; 2]) -> Result<Self> {
        let d = CostDistribution::UniformMixture { weight, first, second };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        let interval = |name: &str, a: f64, b: f64| {
            if !(a.is_finite() && b.is_finite()) || a < 0.0 || a >= b {
                Err(Error::Input(format!(
                    "{name} support [{a}, {b}] must be a non-empty interval of non-negative costs"
                )))
            } else {
                Ok(())
            }
        };
        match *self {
            CostDistribution::Uniform { lower, upper } => interval("uniform", lower, upper),
            CostDistribution::TruncatedExponential { lower, upper, rate } => {
                interval("truncated-exponential", lower, upper)?;
                if !rate.is_finite() || rate == 0.0 {
                    return Err(Error::Input(format!("truncated-exponential rate {rate} must be finite and non-zero")));
                }
                Ok(())
            }
            CostDistribution::UniformMixture { weight, first, second } => {
                interval("uniform-mixture first component", first[0], first[1])?;
                interval("uniform-mixture second component", second[0], second[1])?;
                if !(weight > 0.0 && weight < 1.0) {
                    return Err(Error::Input(format!("uniform-mixture weight {weight} must lie in (0, 1)")));
                }
                Ok(())
            }
        }
    }

    pub fn lower(&self) -> f64 {
        match *self {
            CostDistribution::Uniform { lower, .. } | CostDistribution::TruncatedExponential { lower, .. } => lower,
            CostDistribution::UniformMixture { first, second, .. } => first[0].min(second[0]),
        }
    }

    pub fn upper(&self) -> f64 {
        match *self {
            CostDistribution::Uniform { upper, .. } | CostDistribution::TruncatedExponential { upper, .. } => upper,
            CostDistribution::UniformMixture { first, second, .. } => first[1].max(second[1]),
        }
    }

    pub fn cdf(&self, c: f64) -> f64 {
        match *self {
            CostDistribution::Uniform { lower, upper } => uniform_cdf(lower, upper, c),
            CostDistribution::TruncatedExponential { lower, upper, rate } => {
                if c <= lower {
                    0.0
                } else if c >= upper {
                    1.0
                } else {
                    (-(-rate * (c - lower)).exp_m1() / -(-rate * (upper - lower)).exp_m1()).clamp(0.0, 1.0)
                }
            }
            CostDistribution::UniformMixture { weight, first, second } => {
                (weight * uniform_cdf(first[0], first[1], c) + (1.0 - weight) * uniform_cdf(second[0], second[1], c))
                    .clamp(0.0, 1.0)
            }
        }
    }

    /// Density on the closed support; zero outside it.
    pub fn density(&self, c: f64) -> f64 {
        match *self {
            CostDistribution::Uniform { lower, upper } => uniform_density(lower, upper, c),
            CostDistribution::TruncatedExponential { lower, upper, rate } => {
                if c < lower || c > upper {
                    0.0
                } else {
                    rate * (-rate * (c - lower)).exp() / -(-rate * (upper - lower)).exp_m1()
                }
            }
            CostDistribution::UniformMixture { weight, first, second } => {
                weight * uniform_density(first[0], first[1], c)
                    + (1.0 - weight) * uniform_density(second[0], second[1], c)
            }
        }
    }

    /// Smallest cost `c` with `cdf(c) >= q`.
    pub fn quantile(&self, q: f64) -> f64 {
        let q = q.clamp(0.0, 1.0);
        match *self {
            CostDistribution::Uniform { lower, upper } => lower + q * (upper - lower),
            CostDistribution::TruncatedExponential { lower, upper, rate } => {
                let mass = -(-rate * (upper - lower)).exp_m1();
                (lower - (-q * mass).ln_1p() / rate).clamp(lower, upper)
            }
            CostDistribution::UniformMixture { .. } => self.mixture_quantile(q),
        }
    }

    fn mixture_quantile(&self, q: f64) -> f64 {
        let CostDistribution::UniformMixture { first, second, .. } = *self else {
            unreachable!("mixture_quantile on a non-mixture")
        };
        let mut knots = [first[0], first[1], second[0], second[1]];
        knots.sort_by(f64::total_cmp);
        if q <= 0.0 {
            return knots[0];
        }
        // The cdf is linear between consecutive knots.
        for pair in knots.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            let (fa, fb) = (self.cdf(a), self.cdf(b));
            if fb > fa && q <= fb {
                return (a + (q - fa) / (fb - fa) * (b - a)).clamp(a, b);
            }
        }
        knots[3]
    }

    /// Zero-density stretches strictly inside the support, as
    /// `(quantile, start, end)`.
    pub fn gaps(&self) -> Vec<(f64, f64, f64)> {
        match *self {
            CostDistribution::UniformMixture { first, second, .. } => {
                let (a, b) = if first[0] <= second[0] { (first, second) } else { (second, first) };
                if a[1] < b[0] {
                    vec![(self.cdf(a[1]), a[1], b[0])]
                } else {
                    Vec::new()
                }
            }
            _ => Vec::new(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.quantile(rng.gen::<f64>())
    }

    /// Reverse hazard rate `density / cdf`, defined where the cdf is positive.
    pub fn reverse_hazard(&self, c: f64) -> Result<f64> {
        let f = self.cdf(c);
        if f <= 0.0 {
            return Err(Error::Singularity { cost: c });
        }
        Ok(self.density(c) / f)
    }

    /// `zeta(c) = c + cdf(c) / density(c)`, the price-free part of the virtual
    /// value: `phi(c, p) = rate(p) * (p - zeta(c))`. It equals `c` where the
    /// cdf vanishes and `+inf` inside density gaps.
    pub fn zeta(&self, c: f64) -> Result<f64> {
        let f = self.cdf(c);
        if f <= 0.0 {
            return Ok(c);
        }
        let d = self.density(c);
        if d <= 0.0 {
            return Err(Error::Singularity { cost: c });
        }
        Ok(c + f / d)
    }
}

fn uniform_cdf(a: f64, b: f64, c: f64) -> f64 {
    if c <= a {
        0.0
    } else if c >= b {
        1.0
    } else {
        (c - a) / (b - a)
    }
}

fn uniform_density(a: f64, b: f64, c: f64) -> f64 {
    if c < a || c > b {
        0.0
    } else {
        1.0 / (b - a)
    }
}
