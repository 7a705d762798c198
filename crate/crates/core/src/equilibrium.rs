//! Equilibrium display prices on finite grids and Monte Carlo best-response
//! checks.
//!
//! Under a price-independent allocation the advertiser's expected utility is
//! `rate(p)` times a price-free integral, so `argmax rate` is dominant. Under
//! the affine maximizer utility is the own value minus a price-free term, so
//! `argmax_p (p - c) rate(p)` is dominant.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mechanisms::{self, Family, MechanismSpec};
use crate::model::{AdvertiserModel, ConversionCurve, Report};
use crate::rng::{self, tag};
use crate::stats::Summary;

pub const DEFAULT_PRICE_GRID: usize = 2001;

/// Gains at or below this are treated as ties.
pub const GAIN_TOLERANCE: f64 = 1e-12;

/// `points` uniformly spaced prices from `lower` to `upper`, both included.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriceGrid {
    pub lower: f64,
    pub upper: f64,
    pub points: usize,
}

impl PriceGrid {
    pub fn new(lower: f64, upper: f64, points: usize) -> Result<Self> {
        if points < 2 {
            return Err(Error::Input(format!("price grid needs at least 2 points, got {points}")));
        }
        if !(lower.is_finite() && upper.is_finite() && lower < upper) {
            return Err(Error::Input(format!("price grid bounds [{lower}, {upper}] are not an interval")));
        }
        Ok(PriceGrid { lower, upper, points })
    }

    /// Grid spanning a conversion curve's price domain.
    pub fn for_domain(conversion: &ConversionCurve, points: usize) -> Result<Self> {
        let [lo, hi] = conversion.price_domain;
        Self::new(lo, hi, points)
    }

    pub fn step(&self) -> f64 {
        (self.upper - self.lower) / (self.points - 1) as f64
    }

    pub fn point(&self, k: usize) -> f64 {
        if k + 1 == self.points {
            self.upper
        } else {
            self.lower + self.step() * k as f64
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.points).map(|k| self.point(k))
    }
}

/// Conversion rates tabulated on the admissible part of a grid.
#[derive(Debug, Clone)]
pub struct RateTable {
    prices: Vec<f64>,
    rates: Vec<f64>,
}

impl RateTable {
    pub fn new(conversion: &ConversionCurve, grid: &PriceGrid) -> Result<Self> {
        let prices: Vec<f64> = grid.iter().filter(|&p| conversion.contains(p)).collect();
        if prices.is_empty() {
            return Err(Error::Input(format!(
                "price grid [{}, {}] misses the price domain {:?}",
                grid.lower, grid.upper, conversion.price_domain
            )));
        }
        let rates = prices.iter().map(|&p| conversion.rate(p)).collect();
        Ok(RateTable { prices, rates })
    }

    pub fn prices(&self) -> &[f64] {
        &self.prices
    }

    /// Smallest grid price maximizing the conversion rate.
    pub fn pi_price(&self) -> f64 {
        let mut best = 0;
        for k in 1..self.rates.len() {
            if self.rates[k] > self.rates[best] {
                best = k;
            }
        }
        self.prices[best]
    }

    /// Smallest grid price maximizing `(p - cost) * rate(p)`.
    pub fn ama_price(&self, cost: f64) -> f64 {
        let mut best = 0;
        let mut top = (self.prices[0] - cost) * self.rates[0];
        for k in 1..self.prices.len() {
            let v = (self.prices[k] - cost) * self.rates[k];
            if v > top {
                top = v;
                best = k;
            }
        }
        self.prices[best]
    }

    /// `max_p (p - cost) * rate(p)` over the grid.
    pub fn best_value(&self, cost: f64) -> f64 {
        self.prices.iter().zip(&self.rates).fold(f64::NEG_INFINITY, |m, (&p, &r)| m.max((p - cost) * r))
    }
}

/// Equilibrium price of a price-independent allocation: `argmax rate(p)`.
pub fn pi_equilibrium_price(conversion: &ConversionCurve, grid: &PriceGrid) -> Result<f64> {
    Ok(RateTable::new(conversion, grid)?.pi_price())
}

/// Equilibrium price under the affine maximizer: `argmax (p - cost) rate(p)`.
pub fn ama_equilibrium_price(cost: f64, conversion: &ConversionCurve, grid: &PriceGrid) -> Result<f64> {
    Ok(RateTable::new(conversion, grid)?.ama_price(cost))
}

/// How the other advertisers choose their display prices.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum OpponentPrices {
    /// The family's analytic equilibrium: the fixed equilibrium prices of the
    /// price-independent mechanism, otherwise `argmax_p (p - c) rate(p)`.
    Equilibrium,
    /// One fixed price per advertiser (the entry for the tested advertiser is ignored).
    Fixed(Vec<f64>),
}

/// Opponent price resolution shared by the Monte Carlo checks.
struct OpponentModel<'a> {
    spec: &'a MechanismSpec,
    mode: &'a OpponentPrices,
    tables: Vec<RateTable>,
}

impl<'a> OpponentModel<'a> {
    fn new(spec: &'a MechanismSpec, mode: &'a OpponentPrices, advs: &[AdvertiserModel], points: usize) -> Result<Self> {
        if let OpponentPrices::Fixed(p) = mode {
            if p.len() != advs.len() {
                return Err(Error::Input(format!("expected {} opponent prices, got {}", advs.len(), p.len())));
            }
        }
        let tables = advs
            .iter()
            .map(|a| PriceGrid::for_domain(&a.conversion, points).and_then(|g| RateTable::new(&a.conversion, &g)))
            .collect::<Result<_>>()?;
        Ok(OpponentModel { spec, mode, tables })
    }

    fn price(&self, j: usize, cost: f64) -> f64 {
        match self.mode {
            OpponentPrices::Fixed(p) => p[j],
            OpponentPrices::Equilibrium => match (&self.spec.family, &self.spec.pia_prices) {
                (Family::VwmPia, Some(p)) => p[j],
                _ => self.tables[j].ama_price(cost),
            },
        }
    }
}

/// Which advertiser is tested, at what cost and candidate price, against
/// which deviations.
#[derive(Debug, Clone)]
pub struct BestResponseQuery {
    pub target: usize,
    pub cost: f64,
    pub candidate_price: f64,
    /// Deviation prices are the grid points inside the target's price domain.
    pub grid: PriceGrid,
    pub opponents: OpponentPrices,
    pub samples: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BestResponseReport {
    pub advertiser: usize,
    pub cost: f64,
    pub candidate_price: f64,
    pub samples: usize,
    pub deviations: usize,
    /// Largest mean gain from deviating, over all deviation prices.
    pub max_gain: f64,
    pub max_gain_std_error: Option<f64>,
    pub max_gain_price: f64,
    /// Samples in which some deviation strictly gained.
    pub positive_gain_samples: u64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DominanceReport {
    pub advertiser: usize,
    pub samples: usize,
    pub deviations: usize,
    pub positive_gain_samples: u64,
    pub max_pointwise_gain: f64,
    pub pass: bool,
}

struct Scan {
    gains: Vec<Summary>,
    positive: u64,
    max_pointwise: f64,
}

fn chunking(samples: usize) -> (usize, usize) {
    let size = samples.div_ceil(64).max(16);
    (size, samples.div_ceil(size))
}

/// Runs `samples` opponent draws; `own` fixes the target's cost and candidate
/// price from the sample's stream and the drawn costs.
fn scan<F>(
    spec: &MechanismSpec,
    advs: &[AdvertiserModel],
    target: usize,
    deviations: &[f64],
    opponents: &OpponentModel,
    samples: usize,
    seed: u64,
    purpose: u64,
    own: F,
) -> Result<Scan>
where
    F: Fn(&[f64]) -> (f64, f64) + Sync,
{
    let (size, chunks) = chunking(samples);
    let parts: Vec<Result<Scan>> = (0..chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut part = Scan { gains: vec![Summary::default(); deviations.len()], positive: 0, max_pointwise: f64::NEG_INFINITY };
            let mut costs = vec![0.0; advs.len()];
            let mut profile = vec![Report::new(0.0, 0.0); advs.len()];
            for s in chunk * size..((chunk + 1) * size).min(samples) {
                let mut rng = rng::stream(seed, purpose, s as u64);
                for (c, a) in costs.iter_mut().zip(advs) {
                    *c = a.distribution.sample(&mut rng);
                }
                let (cost, candidate) = own(&costs);
                costs[target] = cost;
                for (j, r) in profile.iter_mut().enumerate() {
                    *r = Report::new(costs[j], if j == target { candidate } else { opponents.price(j, costs[j]) });
                }
                let base = mechanisms::utility(spec, &profile, advs, target, cost)?;
                let mut worst = f64::NEG_INFINITY;
                for (k, &p) in deviations.iter().enumerate() {
                    profile[target].price = p;
                    let gain = mechanisms::utility(spec, &profile, advs, target, cost)? - base;
                    part.gains[k].push(gain);
                    worst = worst.max(gain);
                }
                if worst > GAIN_TOLERANCE {
                    part.positive += 1;
                }
                part.max_pointwise = part.max_pointwise.max(worst);
            }
            Ok(part)
        })
        .collect();
    let mut total = Scan { gains: vec![Summary::default(); deviations.len()], positive: 0, max_pointwise: f64::NEG_INFINITY };
    for part in parts {
        let part = part?;
        for (t, g) in total.gains.iter_mut().zip(&part.gains) {
            t.merge(g);
        }
        total.positive += part.positive;
        total.max_pointwise = total.max_pointwise.max(part.max_pointwise);
    }
    Ok(total)
}

fn check_target(advs: &[AdvertiserModel], target: usize, samples: usize) -> Result<()> {
    if samples == 0 {
        return Err(Error::Input("best-response check needs at least one sample".into()));
    }
    if target >= advs.len() {
        return Err(Error::Input(format!("advertiser {target} does not exist")));
    }
    Ok(())
}

/// Monte Carlo best-response test of a candidate price for one advertiser
/// with a known cost, using common opponent draws for every deviation.
///
/// Passes iff no deviation's mean gain exceeds three of its standard errors.
pub fn best_response_check(
    spec: &MechanismSpec,
    advertisers: &[AdvertiserModel],
    query: &BestResponseQuery,
) -> Result<BestResponseReport> {
    check_target(advertisers, query.target, query.samples)?;
    spec.validate(advertisers.len())?;
    let adv = &advertisers[query.target];
    adv.conversion.check_price(query.candidate_price)?;
    let deviations = RateTable::new(&adv.conversion, &query.grid)?.prices;
    let opponents = OpponentModel::new(spec, &query.opponents, advertisers, query.grid.points)?;
    let (cost, candidate) = (query.cost, query.candidate_price);
    let scan = scan(
        spec,
        advertisers,
        query.target,
        &deviations,
        &opponents,
        query.samples,
        query.seed,
        tag::BEST_RESPONSE,
        |_| (cost, candidate),
    )?;
    let mut best = 0;
    for k in 1..deviations.len() {
        if scan.gains[k].mean() > scan.gains[best].mean() {
            best = k;
        }
    }
    let pass = scan
        .gains
        .iter()
        .all(|g| g.mean() <= 3.0 * g.std_error().unwrap_or(0.0) + GAIN_TOLERANCE);
    Ok(BestResponseReport {
        advertiser: query.target,
        cost,
        candidate_price: candidate,
        samples: query.samples,
        deviations: deviations.len(),
        max_gain: scan.gains[best].mean(),
        max_gain_std_error: scan.gains[best].std_error(),
        max_gain_price: deviations[best],
        positive_gain_samples: scan.positive,
        pass,
    })
}

/// Pointwise dominance of `argmax_p (p - c) rate(p)`: draws the target's cost
/// and every opponent's, and counts draws in which any deviation price beats
/// the candidate.
pub fn dominance_check(
    spec: &MechanismSpec,
    advertisers: &[AdvertiserModel],
    target: usize,
    grid: &PriceGrid,
    samples: usize,
    seed: u64,
) -> Result<DominanceReport> {
    check_target(advertisers, target, samples)?;
    spec.validate(advertisers.len())?;
    let table = RateTable::new(&advertisers[target].conversion, grid)?;
    let mode = OpponentPrices::Equilibrium;
    let opponents = OpponentModel::new(spec, &mode, advertisers, grid.points)?;
    let scan = scan(spec, advertisers, target, table.prices(), &opponents, samples, seed, tag::DOMINANCE, |costs| {
        (costs[target], table.ama_price(costs[target]))
    })?;
    Ok(DominanceReport {
        advertiser: target,
        samples,
        deviations: table.prices().len(),
        positive_gain_samples: scan.positive,
        max_pointwise_gain: scan.max_pointwise,
        pass: scan.positive == 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::CostDistribution;

    fn grid(lo: f64, hi: f64) -> PriceGrid {
        PriceGrid::new(lo, hi, DEFAULT_PRICE_GRID).unwrap()
    }

    #[test]
    fn grid_endpoints_are_exact() {
        let g = PriceGrid::new(0.0, 5.0, 2001).unwrap();
        assert_eq!(g.point(0), 0.0);
        assert_eq!(g.point(2000), 5.0);
        assert!((g.step() - 0.0025).abs() < 1e-15);
        assert!(PriceGrid::new(1.0, 1.0, 10).is_err());
        assert!(PriceGrid::new(0.0, 1.0, 1).is_err());
    }

    #[test]
    fn pi_price_examples() {
        let g = grid(0.0, 5.0);
        let unimodal = ConversionCurve::unimodal([0.0, 5.0]).unwrap();
        assert!((pi_equilibrium_price(&unimodal, &g).unwrap() - 1.0).abs() <= g.step());
        let flat = ConversionCurve::constant(0.4, [0.0, 5.0]).unwrap();
        assert_eq!(pi_equilibrium_price(&flat, &g).unwrap(), 0.0);
        let decay = ConversionCurve::exponential(1.0, [0.0, 5.0]).unwrap();
        assert_eq!(pi_equilibrium_price(&decay, &g).unwrap(), 0.0);
    }

    #[test]
    fn pi_price_respects_domain() {
        let g = grid(0.0, 5.0);
        let flat = ConversionCurve::constant(0.4, [1.2, 3.0]).unwrap();
        let p = pi_equilibrium_price(&flat, &g).unwrap();
        assert!((1.2..=1.2 + g.step()).contains(&p));
        let outside = ConversionCurve::constant(0.4, [6.0, 7.0]).unwrap();
        assert!(matches!(pi_equilibrium_price(&outside, &g), Err(Error::Input(_))));
    }

    #[test]
    fn ama_price_examples() {
        let g = grid(0.0, 5.0);
        let decay = ConversionCurve::exponential(1.0, [0.0, 5.0]).unwrap();
        assert!((ama_equilibrium_price(0.5, &decay, &g).unwrap() - 1.5).abs() <= g.step());
        assert!((ama_equilibrium_price(0.0, &decay, &g).unwrap() - 1.0).abs() <= g.step());
        let flat = ConversionCurve::constant(1.0, [0.0, 2.0]).unwrap();
        assert_eq!(ama_equilibrium_price(0.3, &flat, &grid(0.0, 2.0)).unwrap(), 2.0);
    }

    fn decay_bidders(n: usize) -> Vec<AdvertiserModel> {
        (0..n)
            .map(|i| {
                AdvertiserModel::new(
                    i,
                    CostDistribution::uniform(0.0, 1.0).unwrap(),
                    ConversionCurve::exponential(1.0, [0.0, 3.0]).unwrap(),
                )
            })
            .collect()
    }

    fn query(cost: f64, candidate: f64, grid: PriceGrid) -> BestResponseQuery {
        BestResponseQuery {
            target: 0,
            cost,
            candidate_price: candidate,
            grid,
            opponents: OpponentPrices::Equilibrium,
            samples: 400,
            seed: 11,
        }
    }

    #[test]
    fn wm_rp_best_response_at_margin_maximizer() {
        let advs = decay_bidders(2);
        let g = PriceGrid::new(0.0, 3.0, 301).unwrap();
        let cost = 0.3;
        let candidate = ama_equilibrium_price(cost, &advs[0].conversion, &g).unwrap();
        let report = best_response_check(&MechanismSpec::wm_rp(), &advs, &query(cost, candidate, g)).unwrap();
        assert!(report.pass, "{report:?}");
        let wrong = best_response_check(&MechanismSpec::wm_rp(), &advs, &query(cost, cost, g)).unwrap();
        assert!(!wrong.pass && wrong.max_gain > 0.0, "{wrong:?}");
    }

    #[test]
    fn reruns_are_identical() {
        let advs = decay_bidders(2);
        let g = PriceGrid::new(0.0, 3.0, 101).unwrap();
        let spec = MechanismSpec::wm_rp();
        let a = best_response_check(&spec, &advs, &query(0.2, 1.2, g)).unwrap();
        let b = best_response_check(&spec, &advs, &query(0.2, 1.2, g)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn dominance_for_identity_ama() {
        let advs = decay_bidders(2);
        let g = PriceGrid::new(0.0, 3.0, 301).unwrap();
        let spec = MechanismSpec::ama(crate::model::AmaParams::identity(2));
        let report = dominance_check(&spec, &advs, 1, &g, 500, 5).unwrap();
        assert!(report.pass, "{report:?}");
    }
}
