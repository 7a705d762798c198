use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape of a conversion-rate function. Every shape is clamped to `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ConversionKind {
    Constant { rate: f64 },
    /// `intercept - slope * p`
    LinearDecreasing { intercept: f64, slope: f64 },
    /// `scale * exp(-alpha * p)`
    Exponential {
        alpha: f64,
        #[serde(default = "unit")]
        scale: f64,
    },
    /// `scale * p * exp(-p)`, peaking at `p = 1`.
    Unimodal {
        #[serde(default = "unit")]
        scale: f64,
    },
}

fn unit() -> f64 {
    1.0
}

/// Conversion probability as a function of the display price, together with
/// the closed interval of admissible prices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConversionCurve {
    #[serde(flatten)]
    pub kind: ConversionKind,
    pub price_domain: [f64; 2],
}

impl ConversionCurve {
    pub fn new(kind: ConversionKind, price_domain: [f64; 2]) -> Result<Self> {
        let curve = ConversionCurve { kind, price_domain };
        curve.validate()?;
        Ok(curve)
    }

    pub fn constant(rate: f64, price_domain: [f64; 2]) -> Result<Self> {
        Self::new(ConversionKind::Constant { rate }, price_domain)
    }

    pub fn exponential(alpha: f64, price_domain: [f64; 2]) -> Result<Self> {
        Self::new(ConversionKind::Exponential { alpha, scale: 1.0 }, price_domain)
    }

    pub fn unimodal(price_domain: [f64; 2]) -> Result<Self> {
        Self::new(ConversionKind::Unimodal { scale: 1.0 }, price_domain)
    }

    pub fn linear_decreasing(intercept: f64, slope: f64, price_domain: [f64; 2]) -> Result<Self> {
        Self::new(ConversionKind::LinearDecreasing { intercept, slope }, price_domain)
    }

    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.price_domain;
        if !(lo.is_finite() && hi.is_finite()) || lo > hi {
            return Err(Error::Input(format!("price domain [{lo}, {hi}] is not a closed interval")));
        }
        let finite = |name: &str, x: f64| {
            if x.is_finite() {
                Ok(())
            } else {
                Err(Error::Input(format!("conversion parameter {name} = {x} is not finite")))
            }
        };
        match self.kind {
            ConversionKind::Constant { rate } => {
                if !(0.0..=1.0).contains(&rate) {
                    return Err(Error::Input(format!("constant conversion rate {rate} must lie in [0, 1]")));
                }
            }
            ConversionKind::LinearDecreasing { intercept, slope } => {
                finite("intercept", intercept)?;
                finite("slope", slope)?;
                if slope < 0.0 {
                    return Err(Error::Input(format!("linear-decreasing slope {slope} must be non-negative")));
                }
            }
            ConversionKind::Exponential { alpha, scale } => {
                finite("alpha", alpha)?;
                finite("scale", scale)?;
                if scale < 0.0 {
                    return Err(Error::Input(format!("exponential scale {scale} must be non-negative")));
                }
            }
            ConversionKind::Unimodal { scale } => {
                finite("scale", scale)?;
                if scale < 0.0 {
                    return Err(Error::Input(format!("unimodal scale {scale} must be non-negative")));
                }
            }
        }
        Ok(())
    }

    /// Conversion probability at `price`, clamped to `[0, 1]`.
    ///
    /// Does not check the price domain; the valuation functions do.
    pub fn rate(&self, price: f64) -> f64 {
        let raw = match self.kind {
            ConversionKind::Constant { rate } => rate,
            ConversionKind::LinearDecreasing { intercept, slope } => intercept - slope * price,
            ConversionKind::Exponential { alpha, scale } => scale * (-alpha * price).exp(),
            ConversionKind::Unimodal { scale } => scale * price * (-price).exp(),
        };
        raw.clamp(0.0, 1.0)
    }

    pub fn contains(&self, price: f64) -> bool {
        price >= self.price_domain[0] && price <= self.price_domain[1]
    }

    pub fn check_price(&self, price: f64) -> Result<()> {
        if self.contains(price) {
            Ok(())
        } else {
            Err(Error::Domain { price, lower: self.price_domain[0], upper: self.price_domain[1] })
        }
    }

    /// A copy with every rate multiplied by `factor` (before clamping).
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        let kind = match self.kind {
            ConversionKind::Constant { rate } => ConversionKind::Constant { rate: rate * factor },
            ConversionKind::LinearDecreasing { intercept, slope } => {
                ConversionKind::LinearDecreasing { intercept: intercept * factor, slope: slope * factor }
            }
            ConversionKind::Exponential { alpha, scale } => ConversionKind::Exponential { alpha, scale: scale * factor },
            ConversionKind::Unimodal { scale } => ConversionKind::Unimodal { scale: scale * factor },
        };
        Self::new(kind, self.price_domain)
    }
}
