//! Valuation mathematics: values, virtual values, weighted-boosted values,
//! their inverses in cost, and regularity certification.

mod conversion;
mod distribution;

use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

pub use conversion::{ConversionCurve, ConversionKind};
pub use distribution::CostDistribution;

use crate::error::{Error, Result};
use crate::ironing::IronedTransform;
use crate::numeric;

/// Grid size used when a regularity certificate is needed implicitly.
pub const DEFAULT_REGULARITY_GRID: usize = 10_001;

/// Absolute cost tolerance of the virtual-value inversion.
pub const INVERSION_TOLERANCE: f64 = 1e-10;

/// One advertiser's (reported cost, display price) pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub cost: f64,
    pub price: f64,
}

impl Report {
    pub fn new(cost: f64, price: f64) -> Self {
        Report { cost, price }
    }
}

/// Affine-maximizer weights (strictly positive) and boosts, one per advertiser.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmaParams {
    pub weights: Vec<f64>,
    pub boosts: Vec<f64>,
}

impl AmaParams {
    pub fn new(weights: Vec<f64>, boosts: Vec<f64>) -> Result<Self> {
        let params = AmaParams { weights, boosts };
        params.validate(params.weights.len())?;
        Ok(params)
    }

    pub fn identity(n: usize) -> Self {
        AmaParams { weights: vec![1.0; n], boosts: vec![0.0; n] }
    }

    pub fn validate(&self, advertisers: usize) -> Result<()> {
        if self.weights.len() != advertisers || self.boosts.len() != advertisers {
            return Err(Error::Parameter(format!(
                "expected {advertisers} weights and boosts, got {} and {}",
                self.weights.len(),
                self.boosts.len()
            )));
        }
        if let Some(w) = self.weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
            return Err(Error::Parameter(format!("weight {w} must be strictly positive")));
        }
        if let Some(b) = self.boosts.iter().find(|b| !b.is_finite()) {
            return Err(Error::Parameter(format!("boost {b} must be finite")));
        }
        Ok(())
    }
}

/// An advertiser: cost law, conversion curve and, for non-regular laws, an
/// optional ironed surrogate that replaces the exact virtual value.
#[derive(Debug, Clone)]
pub struct AdvertiserModel {
    pub index: usize,
    pub distribution: CostDistribution,
    pub conversion: ConversionCurve,
    surrogate: Option<Arc<IronedTransform>>,
    regular: OnceLock<bool>,
}

impl PartialEq for AdvertiserModel {
    fn eq(&self, other: &Self) -> bool {
        self.index == other.index
            && self.distribution == other.distribution
            && self.conversion == other.conversion
            && self.surrogate.is_some() == other.surrogate.is_some()
    }
}

impl AdvertiserModel {
    pub fn new(index: usize, distribution: CostDistribution, conversion: ConversionCurve) -> Self {
        AdvertiserModel { index, distribution, conversion, surrogate: None, regular: OnceLock::new() }
    }

    /// Attach an ironed surrogate built from this advertiser's distribution.
    pub fn ironed(mut self, grid_size: usize) -> Result<Self> {
        let transform = crate::ironing::iron(&self.distribution, grid_size)?;
        self.surrogate = Some(Arc::new(transform));
        Ok(self)
    }

    pub fn with_surrogate(mut self, transform: Arc<IronedTransform>) -> Self {
        self.surrogate = Some(transform);
        self
    }

    pub fn surrogate(&self) -> Option<&IronedTransform> {
        self.surrogate.as_deref()
    }

    /// Sampled regularity certificate on the default grid, computed once.
    pub fn is_regular(&self) -> bool {
        *self.regular.get_or_init(|| {
            regularity_check(&self.distribution, DEFAULT_REGULARITY_GRID).map(|r| r.regular).unwrap_or(false)
        })
    }

    /// Whether a virtual-value ranking is usable for this advertiser.
    pub fn ensure_rankable(&self) -> Result<()> {
        if self.surrogate.is_some() || self.is_regular() {
            Ok(())
        } else {
            Err(Error::Regularity(format!("advertiser {} needs an ironed surrogate", self.index)))
        }
    }

    pub fn value(&self, cost: f64, price: f64) -> Result<f64> {
        value(cost, price, &self.conversion)
    }

    /// Price-free virtual-value component, ironed when a surrogate is attached.
    pub fn ranking_zeta(&self, cost: f64) -> Result<f64> {
        match &self.surrogate {
            Some(t) => Ok(t.zeta(cost)),
            None => self.distribution.zeta(cost),
        }
    }

    /// Virtual value used for allocation: `rate(p) * (p - zeta(c))` with the
    /// ironed `zeta` when a surrogate is attached. Does not check the price.
    pub fn ranking_virtual_value(&self, cost: f64, price: f64) -> Result<f64> {
        let rate = self.conversion.rate(price);
        if rate == 0.0 {
            return Ok(0.0);
        }
        Ok(rate * (price - self.ranking_zeta(cost)?))
    }
}

/// Expected value of display: `(price - cost) * rate(price)`.
pub fn value(cost: f64, price: f64, conversion: &ConversionCurve) -> Result<f64> {
    conversion.check_price(price)?;
    Ok((price - cost) * conversion.rate(price))
}

/// The cost at which `value(cost, price) = target`.
pub fn value_inverse(target: f64, price: f64, conversion: &ConversionCurve) -> Result<f64> {
    conversion.check_price(price)?;
    let rate = conversion.rate(price);
    if rate <= 0.0 {
        return Err(Error::NonInvertible { price });
    }
    Ok(price - target / rate)
}

/// Reverse hazard rate `density(c) / cdf(c)`.
pub fn reverse_hazard(dist: &CostDistribution, cost: f64) -> Result<f64> {
    dist.reverse_hazard(cost)
}

/// `value(c, p) - rate(p) * cdf(c) / density(c)`.
///
/// At the lower support endpoint the cdf vanishes and the result is the value
/// itself.
pub fn virtual_value(cost: f64, price: f64, dist: &CostDistribution, conversion: &ConversionCurve) -> Result<f64> {
    let v = value(cost, price, conversion)?;
    let f = dist.cdf(cost);
    if f <= 0.0 {
        return Ok(v);
    }
    let d = dist.density(cost);
    if d <= 0.0 {
        return Err(Error::Singularity { cost });
    }
    Ok(v - conversion.rate(price) * f / d)
}

/// The cost at which the virtual value at `price` equals `target`, by
/// bisection to [`INVERSION_TOLERANCE`] in cost.
pub fn virtual_value_inverse(
    target: f64,
    price: f64,
    dist: &CostDistribution,
    conversion: &ConversionCurve,
) -> Result<f64> {
    conversion.check_price(price)?;
    if conversion.rate(price) <= 0.0 {
        return Err(Error::NonInvertible { price });
    }
    if !regularity_check(dist, DEFAULT_REGULARITY_GRID)?.regular {
        return Err(Error::Regularity("virtual value is not monotone in cost; iron the distribution first".into()));
    }
    let (lo, hi) = (dist.lower(), dist.upper());
    let high = virtual_value(lo, price, dist, conversion)?;
    let low = virtual_value(hi, price, dist, conversion)?;
    if !(target >= low && target <= high) {
        return Err(Error::Range { target, low, high });
    }
    let phi = |c: f64| virtual_value(c, price, dist, conversion).map(|v| v - target).unwrap_or(f64::NEG_INFINITY);
    Ok(numeric::decreasing_root(lo, hi, INVERSION_TOLERANCE * 0.01, phi))
}

/// `boost + weight * value(cost, price)`.
pub fn weighted_value(cost: f64, price: f64, conversion: &ConversionCurve, weight: f64, boost: f64) -> Result<f64> {
    if !(weight > 0.0) {
        return Err(Error::Parameter(format!("weight {weight} must be strictly positive")));
    }
    Ok(boost + weight * value(cost, price, conversion)?)
}

/// `price - (target - boost) / (weight * rate(price))`.
pub fn weighted_value_inverse(
    target: f64,
    price: f64,
    conversion: &ConversionCurve,
    weight: f64,
    boost: f64,
) -> Result<f64> {
    if !(weight > 0.0) {
        return Err(Error::Parameter(format!("weight {weight} must be strictly positive")));
    }
    conversion.check_price(price)?;
    let rate = conversion.rate(price);
    if rate <= 0.0 {
        return Err(Error::NonInvertible { price });
    }
    Ok(price - (target - boost) / (weight * rate))
}

/// Outcome of a sampled regularity certificate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegularityReport {
    pub regular: bool,
    pub grid_size: usize,
    /// First grid cost where `zeta` drops, if any.
    pub first_violation: Option<f64>,
    /// Number of adjacent grid pairs where `zeta` drops.
    pub violations: usize,
}

/// Checks that `zeta(c) = c + cdf(c)/density(c)` is non-decreasing on the grid
/// `lower + k (upper - lower) / grid_size`, `k = 1..=grid_size` (the lower
/// endpoint is excluded). Since `phi(c, p) = rate(p) (p - zeta(c))` this
/// certifies regularity at every price at once. Density gaps give
/// `zeta = +inf`, which cannot be followed by a finite value on a regular law.
pub fn regularity_check(dist: &CostDistribution, grid_size: usize) -> Result<RegularityReport> {
    const TOLERANCE: f64 = 1e-9;
    if grid_size < 3 {
        return Err(Error::Input(format!("regularity grid needs at least 3 points, got {grid_size}")));
    }
    let (lo, hi) = (dist.lower(), dist.upper());
    let step = (hi - lo) / grid_size as f64;
    let zeta_at = |k: usize| -> Result<f64> {
        let c = if k == grid_size { hi } else { lo + step * k as f64 };
        let f = dist.cdf(c);
        let d = dist.density(c);
        if d > 0.0 {
            Ok(c + f / d)
        } else if f > 0.0 {
            Ok(f64::INFINITY)
        } else {
            Err(Error::Singularity { cost: c })
        }
    };
    let mut prev = zeta_at(1)?;
    let mut first_violation = None;
    let mut violations = 0;
    for k in 2..=grid_size {
        let z = zeta_at(k)?;
        if z < prev - TOLERANCE {
            violations += 1;
            first_violation.get_or_insert(lo + step * k as f64);
        }
        prev = z;
    }
    Ok(RegularityReport { regular: violations == 0, grid_size, first_violation, violations })
}
