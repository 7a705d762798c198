//! Executable oracles for the mechanism properties: truthfulness, individual
//! rationality, budget balance, monotone allocation, the threshold payment
//! identity, efficiency and revenue equivalence.
//!
//! Every check draws instance `m` from its own stream, so verdicts are pure
//! functions of the inputs and the seed.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::equilibrium::{PriceGrid, RateTable, DEFAULT_PRICE_GRID};
use crate::error::{Error, Result};
use crate::mechanisms::{self, MechanismSpec};
use crate::model::{self, AdvertiserModel, Report};
use crate::numeric;
use crate::rng::{self, tag};
use crate::simulation::{draw_costs, PriceMode, PriceResolver};
use crate::stats::{Estimate, Summary};

pub const IC_TOLERANCE: f64 = 1e-7;
pub const IR_TOLERANCE: f64 = 1e-9;
pub const WBB_TOLERANCE: f64 = 1e-12;
pub const PAYMENT_TOLERANCE: f64 = 1e-4;
pub const EFRP_TOLERANCE: f64 = 1e-12;

/// Cells scanned for jumps of the allocation indicator before bisection.
const PAYMENT_SCAN_CELLS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Check {
    Ic,
    Ir,
    Wbb,
    Mono,
    Payment,
    Efrp,
    Ef,
    RevEq,
}

impl Check {
    pub const ALL: [Check; 8] =
        [Check::Ic, Check::Ir, Check::Wbb, Check::Mono, Check::Payment, Check::Efrp, Check::Ef, Check::RevEq];

    pub fn name(&self) -> &'static str {
        match self {
            Check::Ic => "ic",
            Check::Ir => "ir",
            Check::Wbb => "wbb",
            Check::Mono => "mono",
            Check::Payment => "payment",
            Check::Efrp => "efrp",
            Check::Ef => "ef",
            Check::RevEq => "rev-eq",
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Check {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Check::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Input(format!("unknown check '{s}' (expected one of ic, ir, wbb, mono, payment, efrp, ef, rev-eq)")))
    }
}

/// Sizes, seed and price source shared by the instance-based checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckConfig {
    pub instances: usize,
    /// Deviating cost reports per advertiser in the truthfulness check.
    pub deviation_grid: usize,
    /// Cost reports swept per advertiser in the monotonicity check.
    pub cost_grid: usize,
    /// Monte Carlo draws for revenue equivalence.
    pub samples: usize,
    pub seed: u64,
    pub price_mode: PriceMode,
    pub price_grid: usize,
}

impl CheckConfig {
    pub fn new(instances: usize, seed: u64, price_mode: PriceMode) -> Self {
        CheckConfig {
            instances,
            deviation_grid: 50,
            cost_grid: 50,
            samples: 100_000,
            seed,
            price_mode,
            price_grid: DEFAULT_PRICE_GRID,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquivalenceEstimates {
    pub revenue: Estimate,
    pub virtual_welfare: Estimate,
    pub combined_std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckReport {
    pub check: Check,
    pub pass: bool,
    pub instances: usize,
    /// Largest violation or residual over all instances, floored at zero.
    pub max_violation: f64,
    pub tolerance: f64,
    pub violating_instances: usize,
    pub worst_instance: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub estimates: Option<EquivalenceEstimates>,
}

fn summarize(check: Check, values: &[f64], tolerance: f64) -> CheckReport {
    let mut worst: Option<usize> = None;
    for (m, &v) in values.iter().enumerate() {
        if worst.is_none_or(|w| v > values[w]) {
            worst = Some(m);
        }
    }
    let violating = values.iter().filter(|&&v| v > tolerance).count();
    let max = worst.map_or(0.0, |w| values[w].max(0.0));
    CheckReport {
        check,
        pass: violating == 0,
        instances: values.len(),
        max_violation: max,
        tolerance,
        violating_instances: violating,
        worst_instance: worst.filter(|&w| values[w] > 0.0),
        estimates: None,
    }
}

/// Truthful reports and true costs of instance `m`.
fn instance(advs: &[AdvertiserModel], resolver: &PriceResolver, seed: u64, m: usize) -> Vec<Report> {
    let mut rng = rng::stream(seed, tag::INSTANCES, m as u64);
    let costs = draw_costs(advs, &mut rng);
    let prices = resolver.prices(&costs, &mut rng);
    costs.iter().zip(&prices).map(|(&c, &p)| Report::new(c, p)).collect()
}

fn per_instance<F>(spec: &MechanismSpec, advs: &[AdvertiserModel], cfg: &CheckConfig, f: F) -> Result<Vec<f64>>
where
    F: Fn(Vec<Report>) -> Result<f64> + Sync,
{
    if cfg.instances == 0 {
        return Err(Error::Input("checks need at least one instance".into()));
    }
    spec.validate(advs.len())?;
    let resolver = PriceResolver::new(&cfg.price_mode, advs, cfg.price_grid)?;
    (0..cfg.instances).into_par_iter().map(|m| f(instance(advs, &resolver, cfg.seed, m))).collect()
}

fn cost_grid(adv: &AdvertiserModel, points: usize) -> Vec<f64> {
    let (lo, hi) = (adv.distribution.lower(), adv.distribution.upper());
    let last = points.max(2) - 1;
    (0..=last).map(|k| if k == last { hi } else { lo + (hi - lo) * k as f64 / last as f64 }).collect()
}

/// Largest gain from misreporting the cost on a grid, holding prices and the
/// other reports fixed. Passes at `IC_TOLERANCE`.
pub fn ic_check(spec: &MechanismSpec, advertisers: &[AdvertiserModel], cfg: &CheckConfig) -> Result<CheckReport> {
    let grids: Vec<Vec<f64>> = advertisers.iter().map(|a| cost_grid(a, cfg.deviation_grid)).collect();
    let values = per_instance(spec, advertisers, cfg, |truth| {
        let mut worst = f64::NEG_INFINITY;
        let mut profile = truth.clone();
        for (i, grid) in grids.iter().enumerate() {
            let base = mechanisms::utility(spec, &truth, advertisers, i, truth[i].cost)?;
            for &z in grid {
                profile[i].cost = z;
                worst = worst.max(mechanisms::utility(spec, &profile, advertisers, i, truth[i].cost)? - base);
            }
            profile[i].cost = truth[i].cost;
        }
        Ok(worst)
    })?;
    Ok(summarize(Check::Ic, &values, IC_TOLERANCE))
}

/// Most negative truthful utility.
pub fn ir_check(spec: &MechanismSpec, advertisers: &[AdvertiserModel], cfg: &CheckConfig) -> Result<CheckReport> {
    let values = per_instance(spec, advertisers, cfg, |truth| {
        let out = mechanisms::run(spec, &truth, advertisers)?;
        Ok((0..truth.len())
            .map(|i| -out.utility(i, truth[i].cost, truth[i], &advertisers[i]))
            .fold(f64::NEG_INFINITY, f64::max))
    })?;
    Ok(summarize(Check::Ir, &values, IR_TOLERANCE))
}

/// Negative total payment.
pub fn wbb_check(spec: &MechanismSpec, advertisers: &[AdvertiserModel], cfg: &CheckConfig) -> Result<CheckReport> {
    let values = per_instance(spec, advertisers, cfg, |truth| Ok(-mechanisms::run(spec, &truth, advertisers)?.total_payment()))?;
    Ok(summarize(Check::Wbb, &values, WBB_TOLERANCE))
}

/// Number of places where an advertiser's allocation switches on as its
/// cost report rises along a grid.
pub fn monotonicity_check(
    spec: &MechanismSpec,
    advertisers: &[AdvertiserModel],
    cfg: &CheckConfig,
) -> Result<CheckReport> {
    let grids: Vec<Vec<f64>> = advertisers.iter().map(|a| cost_grid(a, cfg.cost_grid)).collect();
    let values = per_instance(spec, advertisers, cfg, |truth| {
        let mut profile = truth.clone();
        let mut rises = 0usize;
        for (i, grid) in grids.iter().enumerate() {
            let mut prev = true;
            for &z in grid {
                profile[i].cost = z;
                let now = mechanisms::run(spec, &profile, advertisers)?.allocations[i];
                if now && !prev {
                    rises += 1;
                }
                prev = now;
            }
            profile[i].cost = truth[i].cost;
        }
        Ok(rises as f64)
    })?;
    Ok(summarize(Check::Mono, &values, 0.0))
}

fn allocated(spec: &MechanismSpec, profile: &mut [Report], advs: &[AdvertiserModel], i: usize, z: f64) -> Result<bool> {
    profile[i].cost = z;
    Ok(mechanisms::run(spec, profile, advs)?.allocations[i])
}

/// `integral_{from}^{top} pi_i(z) dz`, locating every jump of the indicator
/// seen on a scan and refining it by bisection.
fn allocation_integral(spec: &MechanismSpec, profile: &[Report], advs: &[AdvertiserModel], i: usize) -> Result<f64> {
    let from = profile[i].cost;
    let top = advs[i].distribution.upper();
    if from >= top {
        return Ok(0.0);
    }
    let mut work = profile.to_vec();
    let node = |k: usize| if k == PAYMENT_SCAN_CELLS { top } else { from + (top - from) * k as f64 / PAYMENT_SCAN_CELLS as f64 };
    let tol = 1e-13 * (top - from).max(1.0);
    let mut total = 0.0;
    let mut left = allocated(spec, &mut work, advs, i, node(0))?;
    for k in 0..PAYMENT_SCAN_CELLS {
        let (a, b) = (node(k), node(k + 1));
        let right = allocated(spec, &mut work, advs, i, b)?;
        if left == right {
            if left {
                total += b - a;
            }
        } else {
            let switch = numeric::last_true(a, b, tol, |z| {
                let mut probe = profile.to_vec();
                allocated(spec, &mut probe, advs, i, z).is_ok_and(|x| x == left)
            });
            total += if left { switch - a } else { b - switch };
        }
        left = right;
    }
    Ok(total)
}

/// Largest gap between each advertiser's charged payment and the payment
/// rebuilt from its allocation curve with a zero utility offset:
/// `value(c', p) pi(c') - rate(p) integral_{c'}^{top} pi(z) dz`.
pub fn payment_identity_check(
    spec: &MechanismSpec,
    advertisers: &[AdvertiserModel],
    cfg: &CheckConfig,
) -> Result<CheckReport> {
    let values = per_instance(spec, advertisers, cfg, |truth| {
        let out = mechanisms::run(spec, &truth, advertisers)?;
        let mut worst = 0.0f64;
        for (i, (r, adv)) in truth.iter().zip(advertisers).enumerate() {
            let rate = adv.conversion.rate(r.price);
            let own = if out.allocations[i] { (r.price - r.cost) * rate } else { 0.0 };
            let rebuilt = own - rate * allocation_integral(spec, &truth, advertisers, i)?;
            worst = worst.max((rebuilt - out.payments[i]).abs());
        }
        Ok(worst)
    })?;
    Ok(summarize(Check::Payment, &values, PAYMENT_TOLERANCE))
}

/// Shortfall of realized welfare from the best single-slot welfare at the
/// reported prices (selling to nobody is allowed).
pub fn efrp_check(spec: &MechanismSpec, advertisers: &[AdvertiserModel], cfg: &CheckConfig) -> Result<CheckReport> {
    let values = per_instance(spec, advertisers, cfg, |truth| {
        let out = mechanisms::run(spec, &truth, advertisers)?;
        let values: Vec<f64> =
            truth.iter().zip(advertisers).map(|(r, a)| (r.price - r.cost) * a.conversion.rate(r.price)).collect();
        let best = values.iter().fold(0.0f64, |m, &v| m.max(v));
        Ok(best - out.winner.map_or(0.0, |w| values[w]))
    })?;
    Ok(summarize(Check::Efrp, &values, EFRP_TOLERANCE))
}

/// Every advertiser reports its true cost at `argmax_p (p - c) rate(p)` on
/// `cfg.price_grid` points of its price domain; the shortfall of realized
/// welfare from `max_i max_p v_i(c_i, p)` must stay within one grid step.
/// `cfg.price_mode` is not used.
pub fn ef_check(spec: &MechanismSpec, advertisers: &[AdvertiserModel], cfg: &CheckConfig) -> Result<CheckReport> {
    let grids: Vec<PriceGrid> =
        advertisers.iter().map(|a| PriceGrid::for_domain(&a.conversion, cfg.price_grid)).collect::<Result<_>>()?;
    let tolerance = grids.iter().map(PriceGrid::step).fold(0.0, f64::max);
    let cfg = CheckConfig { price_mode: PriceMode::AmaEquilibrium, ..cfg.clone() };
    let tables: Vec<RateTable> =
        advertisers.iter().zip(&grids).map(|(a, g)| RateTable::new(&a.conversion, g)).collect::<Result<_>>()?;
    let values = per_instance(spec, advertisers, &cfg, |truth| {
        let out = mechanisms::run(spec, &truth, advertisers)?;
        let best = truth.iter().zip(&tables).fold(0.0f64, |m, (r, t)| m.max(t.best_value(r.cost)));
        let realized = out.winner.map_or(0.0, |w| {
            let r = truth[w];
            (r.price - r.cost) * advertisers[w].conversion.rate(r.price)
        });
        Ok(best - realized)
    })?;
    Ok(summarize(Check::Ef, &values, tolerance))
}

/// Compares Monte Carlo estimates of expected revenue and expected allocated
/// virtual value at fixed prices. Passes iff they differ by at most three
/// combined standard errors. Only meaningful for truthful, individually
/// rational mechanisms, so the diagnostic families are refused.
pub fn revenue_equivalence_check(
    spec: &MechanismSpec,
    advertisers: &[AdvertiserModel],
    fixed_prices: &[f64],
    samples: usize,
    seed: u64,
) -> Result<CheckReport> {
    if spec.family.is_diagnostic() {
        return Err(Error::NotApplicable(format!(
            "revenue equivalence presumes a truthful, individually rational mechanism; {} is neither",
            spec.family.label()
        )));
    }
    if samples == 0 {
        return Err(Error::Input("revenue equivalence needs at least one sample".into()));
    }
    spec.validate(advertisers.len())?;
    PriceResolver::new(&PriceMode::Fixed { prices: fixed_prices.to_vec() }, advertisers, 2)?;
    const BATCH: usize = 4096;
    let parts: Vec<Result<(Summary, Summary)>> = (0..samples.div_ceil(BATCH))
        .into_par_iter()
        .map(|b| {
            let (mut rev, mut vw) = (Summary::default(), Summary::default());
            for s in b * BATCH..((b + 1) * BATCH).min(samples) {
                let costs = draw_costs(advertisers, &mut rng::stream(seed, tag::COSTS, s as u64));
                let profile: Vec<Report> = costs.iter().zip(fixed_prices).map(|(&c, &p)| Report::new(c, p)).collect();
                let out = mechanisms::run(spec, &profile, advertisers)?;
                rev.push(out.total_payment());
                vw.push(match out.winner {
                    Some(w) => model::virtual_value(
                        costs[w],
                        fixed_prices[w],
                        &advertisers[w].distribution,
                        &advertisers[w].conversion,
                    )?,
                    None => 0.0,
                });
            }
            Ok((rev, vw))
        })
        .collect();
    let (mut rev, mut vw) = (Summary::default(), Summary::default());
    for p in parts {
        let (r, v) = p?;
        rev.merge(&r);
        vw.merge(&v);
    }
    let (revenue, virtual_welfare) = (rev.estimate(), vw.estimate());
    let combined = revenue.se_or_zero().hypot(virtual_welfare.se_or_zero());
    let diff = (revenue.mean - virtual_welfare.mean).abs();
    let tolerance = 3.0 * combined;
    Ok(CheckReport {
        check: Check::RevEq,
        pass: diff <= tolerance,
        instances: samples,
        max_violation: diff,
        tolerance,
        violating_instances: usize::from(diff > tolerance),
        worst_instance: None,
        estimates: Some(EquivalenceEstimates { revenue, virtual_welfare, combined_std_error: combined }),
    })
}

/// Runs one check. Revenue equivalence needs fixed prices: the configured
/// fixed prices, or the equilibrium prices of a price-independent mechanism.
pub fn run_check(
    check: Check,
    spec: &MechanismSpec,
    advertisers: &[AdvertiserModel],
    cfg: &CheckConfig,
) -> Result<CheckReport> {
    match check {
        Check::Ic => ic_check(spec, advertisers, cfg),
        Check::Ir => ir_check(spec, advertisers, cfg),
        Check::Wbb => wbb_check(spec, advertisers, cfg),
        Check::Mono => monotonicity_check(spec, advertisers, cfg),
        Check::Payment => payment_identity_check(spec, advertisers, cfg),
        Check::Efrp => efrp_check(spec, advertisers, cfg),
        Check::Ef => ef_check(spec, advertisers, cfg),
        Check::RevEq => {
            let prices = match (&cfg.price_mode, &spec.pia_prices) {
                (PriceMode::Fixed { prices }, _) => prices.clone(),
                (PriceMode::PiEquilibrium, Some(p)) => p.clone(),
                (mode, _) => {
                    return Err(Error::NotApplicable(format!(
                        "revenue equivalence needs fixed prices, not {}",
                        mode.label()
                    )))
                }
            };
            revenue_equivalence_check(spec, advertisers, &prices, cfg.samples, cfg.seed)
        }
    }
}
