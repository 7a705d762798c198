//! Monte Carlo experiments: draw costs, resolve display prices, run the
//! mechanism, aggregate revenue and welfare.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::equilibrium::{PriceGrid, RateTable, DEFAULT_PRICE_GRID};
use crate::error::{Error, Result};
use crate::mechanisms::{self, Family, MechanismSpec};
use crate::model::{AdvertiserModel, Report};
use crate::rng::{self, tag, Stream};
use crate::stats::{Estimate, Summary};

/// Where display prices come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PriceMode {
    /// Exogenous prices, one per advertiser.
    Fixed { prices: Vec<f64> },
    /// Independent uniform draws over each advertiser's price domain.
    Random,
    /// `argmax rate(p)` on the price grid, for price-independent allocations.
    PiEquilibrium,
    /// `argmax (p - c) rate(p)` on the price grid, evaluated at the true cost.
    AmaEquilibrium,
}

impl PriceMode {
    pub fn label(&self) -> &'static str {
        match self {
            PriceMode::Fixed { .. } => "fixed",
            PriceMode::Random => "random",
            PriceMode::PiEquilibrium => "pi-equilibrium",
            PriceMode::AmaEquilibrium => "ama-equilibrium",
        }
    }
}

/// Turns true costs into display prices under a [`PriceMode`].
#[derive(Debug, Clone)]
pub struct PriceResolver {
    mode: PriceMode,
    domains: Vec<[f64; 2]>,
    tables: Vec<RateTable>,
}

impl PriceResolver {
    pub fn new(mode: &PriceMode, advertisers: &[AdvertiserModel], grid_points: usize) -> Result<Self> {
        if let PriceMode::Fixed { prices } = mode {
            if prices.len() != advertisers.len() {
                return Err(Error::Input(format!(
                    "expected {} fixed prices, got {}",
                    advertisers.len(),
                    prices.len()
                )));
            }
            for (p, a) in prices.iter().zip(advertisers) {
                a.conversion.check_price(*p)?;
            }
        }
        let tables = match mode {
            PriceMode::PiEquilibrium | PriceMode::AmaEquilibrium => advertisers
                .iter()
                .map(|a| PriceGrid::for_domain(&a.conversion, grid_points).and_then(|g| RateTable::new(&a.conversion, &g)))
                .collect::<Result<_>>()?,
            _ => Vec::new(),
        };
        Ok(PriceResolver {
            mode: mode.clone(),
            domains: advertisers.iter().map(|a| a.conversion.price_domain).collect(),
            tables,
        })
    }

    /// Prices for true `costs`; `rng` is only consumed in random mode.
    pub fn prices(&self, costs: &[f64], rng: &mut Stream) -> Vec<f64> {
        match &self.mode {
            PriceMode::Fixed { prices } => prices.clone(),
            PriceMode::Random => self.domains.iter().map(|&[lo, hi]| lo + (hi - lo) * rng.gen::<f64>()).collect(),
            PriceMode::PiEquilibrium => self.tables.iter().map(RateTable::pi_price).collect(),
            PriceMode::AmaEquilibrium => self.tables.iter().zip(costs).map(|(t, &c)| t.ama_price(c)).collect(),
        }
    }
}

/// Draws one cost per advertiser from its own distribution.
pub fn draw_costs(advertisers: &[AdvertiserModel], rng: &mut Stream) -> Vec<f64> {
    advertisers.iter().map(|a| a.distribution.sample(rng)).collect()
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub advertisers: Vec<AdvertiserModel>,
    pub price_mode: PriceMode,
    pub mechanism: MechanismSpec,
    pub samples: usize,
    pub seed: u64,
    pub price_grid: usize,
}

impl Scenario {
    pub fn new(advertisers: Vec<AdvertiserModel>, price_mode: PriceMode, mechanism: MechanismSpec) -> Self {
        Scenario {
            name: String::from("scenario"),
            advertisers,
            price_mode,
            mechanism,
            samples: 10_000,
            seed: 0,
            price_grid: DEFAULT_PRICE_GRID,
        }
    }

    pub fn with_samples(mut self, samples: usize) -> Self {
        self.samples = samples;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Fills in equilibrium prices for a price-independent mechanism that
    /// was specified without them.
    pub fn resolve(mut self) -> Result<Self> {
        if self.mechanism.family == Family::VwmPia && self.mechanism.pia_prices.is_none() {
            let prices = self
                .advertisers
                .iter()
                .map(|a| {
                    let grid = PriceGrid::for_domain(&a.conversion, self.price_grid)?;
                    crate::equilibrium::pi_equilibrium_price(&a.conversion, &grid)
                })
                .collect::<Result<Vec<f64>>>()?;
            self.mechanism.pia_prices = Some(prices);
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.advertisers.is_empty() {
            return Err(Error::Input("a scenario needs at least one advertiser".into()));
        }
        if self.samples == 0 {
            return Err(Error::Input("samples must be at least 1".into()));
        }
        for (i, a) in self.advertisers.iter().enumerate() {
            if a.index != i {
                return Err(Error::Input(format!("advertiser at position {i} carries index {}", a.index)));
            }
        }
        self.mechanism.validate(self.advertisers.len())?;
        if self.price_mode == PriceMode::PiEquilibrium && !self.mechanism.family.price_independent() {
            return Err(Error::Input(format!(
                "pi-equilibrium prices need a price-independent allocation, not {}",
                self.mechanism.family.label()
            )));
        }
        if let Family::VwmRp | Family::VwmPia = self.mechanism.family {
            self.advertisers.iter().try_for_each(AdvertiserModel::ensure_rankable)?;
        }
        PriceResolver::new(&self.price_mode, &self.advertisers, self.price_grid).map(|_| ())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimStats {
    pub samples: usize,
    pub expected_revenue: Estimate,
    pub expected_welfare: Estimate,
    pub sale_probability: Estimate,
    pub win_frequencies: Vec<f64>,
}

/// Per-sample revenue `sum x_i`, welfare `sum v_i(c_i, p_i) pi_i` and winner.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleOutcome {
    pub revenue: f64,
    pub welfare: f64,
    pub winner: Option<usize>,
}

/// Outcome of sample `s`: costs from the cost stream, prices from the price
/// stream, truthful reports.
pub fn sample_outcome(
    advertisers: &[AdvertiserModel],
    resolver: &PriceResolver,
    spec: &MechanismSpec,
    seed: u64,
    s: u64,
) -> Result<SampleOutcome> {
    let costs = draw_costs(advertisers, &mut rng::stream(seed, tag::COSTS, s));
    let prices = resolver.prices(&costs, &mut rng::stream(seed, tag::PRICES, s));
    let profile: Vec<Report> = costs.iter().zip(&prices).map(|(&c, &p)| Report::new(c, p)).collect();
    let out = mechanisms::run(spec, &profile, advertisers)?;
    let welfare = out.winner.map_or(0.0, |w| (prices[w] - costs[w]) * advertisers[w].conversion.rate(prices[w]));
    Ok(SampleOutcome { revenue: out.total_payment(), welfare, winner: out.winner })
}

const BATCH: usize = 4096;

#[derive(Clone)]
struct Tally {
    revenue: Summary,
    welfare: Summary,
    wins: Vec<u64>,
}

fn simulate(scenario: &Scenario, seed: u64) -> Result<SimStats> {
    scenario.validate()?;
    let advs = &scenario.advertisers;
    let resolver = PriceResolver::new(&scenario.price_mode, advs, scenario.price_grid)?;
    let n = scenario.samples;
    let batches: Vec<Result<Tally>> = (0..n.div_ceil(BATCH))
        .into_par_iter()
        .map(|b| {
            let mut t = Tally { revenue: Summary::default(), welfare: Summary::default(), wins: vec![0; advs.len()] };
            for s in b * BATCH..((b + 1) * BATCH).min(n) {
                let o = sample_outcome(advs, &resolver, &scenario.mechanism, seed, s as u64)?;
                t.revenue.push(o.revenue);
                t.welfare.push(o.welfare);
                if let Some(w) = o.winner {
                    t.wins[w] += 1;
                }
            }
            Ok(t)
        })
        .collect();
    let mut total = Tally { revenue: Summary::default(), welfare: Summary::default(), wins: vec![0; advs.len()] };
    for b in batches {
        let b = b?;
        total.revenue.merge(&b.revenue);
        total.welfare.merge(&b.welfare);
        total.wins.iter_mut().zip(&b.wins).for_each(|(t, w)| *t += w);
    }
    let sales: u64 = total.wins.iter().sum();
    let p = sales as f64 / n as f64;
    let sale_se = (n >= 2).then(|| (p * (1.0 - p) / (n - 1) as f64).sqrt());
    Ok(SimStats {
        samples: n,
        expected_revenue: total.revenue.estimate(),
        expected_welfare: total.welfare.estimate(),
        sale_probability: Estimate { mean: p, std_error: sale_se },
        win_frequencies: total.wins.iter().map(|&w| w as f64 / n as f64).collect(),
    })
}

/// Runs the scenario; the result depends only on the scenario, never on the
/// number of worker threads.
pub fn run_experiment(scenario: &Scenario) -> Result<SimStats> {
    simulate(scenario, scenario.seed)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub name: String,
    pub family: String,
    /// Seed whose cost draws this row used.
    pub seed: u64,
    /// Whether the row shares cost draws with the first scenario.
    pub common_draws: bool,
    pub stats: SimStats,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
    pub warning: Option<String>,
}

fn same_models(a: &[AdvertiserModel], b: &[AdvertiserModel]) -> bool {
    a.len() == b.len()
        && a.iter().zip(b).all(|(x, y)| x.distribution == y.distribution && x.conversion == y.conversion)
}

/// Runs every scenario. Scenarios whose advertiser models match the first
/// one reuse its seed and hence its cost draws; the others keep their own
/// seed and the comparison carries a warning.
pub fn compare(scenarios: &[Scenario]) -> Result<Comparison> {
    let first = scenarios.first().ok_or_else(|| Error::Input("nothing to compare".into()))?;
    let mut rows = Vec::with_capacity(scenarios.len());
    let mut independent = Vec::new();
    for s in scenarios {
        let common = same_models(&first.advertisers, &s.advertisers);
        let seed = if common { first.seed } else { s.seed };
        if !common {
            independent.push(s.name.clone());
        }
        rows.push(ComparisonRow {
            name: s.name.clone(),
            family: s.mechanism.family.label().to_string(),
            seed,
            common_draws: common,
            stats: simulate(s, seed)?,
        });
    }
    let warning = (!independent.is_empty()).then(|| {
        format!("advertiser models differ from the first scenario; independent draws for: {}", independent.join(", "))
    });
    Ok(Comparison { rows, warning })
}
