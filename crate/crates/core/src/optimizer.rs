//! Revenue search over affine-maximizer weights and boosts.
//!
//! Bidders report truthfully at `argmax_p (p - c) rate(p)`, which does not
//! depend on the parameters, so one table of draws serves every candidate:
//! all candidates see common random numbers.

use rayon::prelude::*;
use serde::Serialize;

use crate::equilibrium::{PriceGrid, RateTable};
use crate::error::{Error, Result};
use crate::mechanisms;
use crate::model::{AdvertiserModel, AmaParams, Report};
use crate::rng::{self, tag};
use crate::simulation::draw_costs;
use crate::stats::{Estimate, Summary};

/// Truthful equilibrium report profiles, one per sample.
#[derive(Debug, Clone)]
pub struct AmaDraws {
    profiles: Vec<Vec<Report>>,
}

impl AmaDraws {
    pub fn new(advertisers: &[AdvertiserModel], samples: usize, seed: u64, price_grid: usize) -> Result<Self> {
        if samples == 0 {
            return Err(Error::Input("revenue estimates need at least one sample".into()));
        }
        if advertisers.is_empty() {
            return Err(Error::Input("revenue estimates need at least one advertiser".into()));
        }
        let tables: Vec<RateTable> = advertisers
            .iter()
            .map(|a| PriceGrid::for_domain(&a.conversion, price_grid).and_then(|g| RateTable::new(&a.conversion, &g)))
            .collect::<Result<_>>()?;
        let profiles = (0..samples)
            .into_par_iter()
            .map(|s| {
                let costs = draw_costs(advertisers, &mut rng::stream(seed, tag::COSTS, s as u64));
                costs.iter().zip(&tables).map(|(&c, t)| Report::new(c, t.ama_price(c))).collect()
            })
            .collect();
        Ok(AmaDraws { profiles })
    }

    pub fn samples(&self) -> usize {
        self.profiles.len()
    }

    /// Total payment in each sample.
    pub fn revenues(&self, params: &AmaParams, advertisers: &[AdvertiserModel]) -> Result<Vec<f64>> {
        params.validate(advertisers.len())?;
        self.profiles
            .par_iter()
            .map(|p| Ok(mechanisms::run_ama(p, advertisers, params)?.total_payment()))
            .collect()
    }

    pub fn revenue(&self, params: &AmaParams, advertisers: &[AdvertiserModel]) -> Result<Estimate> {
        let mut s = Summary::default();
        for r in self.revenues(params, advertisers)? {
            s.push(r);
        }
        Ok(s.estimate())
    }
}

/// Expected affine-maximizer revenue under equilibrium pricing.
pub fn ama_revenue(
    params: &AmaParams,
    advertisers: &[AdvertiserModel],
    samples: usize,
    seed: u64,
    price_grid: usize,
) -> Result<Estimate> {
    params.validate(advertisers.len())?;
    AmaDraws::new(advertisers, samples, seed, price_grid)?.revenue(params, advertisers)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Grid,
    Refinement,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    pub stage: Stage,
    pub params: AmaParams,
    pub revenue: Estimate,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchReport {
    pub best: AmaParams,
    pub revenue: Estimate,
    pub samples: usize,
    pub seed: u64,
    pub evaluations: Vec<Evaluation>,
}

/// Smallest gap between distinct grid values, if there are two.
fn spacing(grid: &[f64]) -> Option<f64> {
    let mut v = grid.to_vec();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v.windows(2).map(|w| w[1] - w[0]).min_by(f64::total_cmp)
}

/// Grid search over every assignment of a `(weight, boost)` pair from
/// `weight_grid x boost_grid` to each advertiser, then one pass of
/// coordinate moves of half a grid step around the incumbent. Ties keep the
/// first candidate found; refinement moves are kept only if they strictly
/// improve.
pub fn ama_search(
    advertisers: &[AdvertiserModel],
    weight_grid: &[f64],
    boost_grid: &[f64],
    samples: usize,
    seed: u64,
    price_grid: usize,
) -> Result<SearchReport> {
    if weight_grid.is_empty() || boost_grid.is_empty() {
        return Err(Error::Input("weight and boost grids must be non-empty".into()));
    }
    if let Some(w) = weight_grid.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
        return Err(Error::Parameter(format!("weight {w} must be strictly positive")));
    }
    if let Some(b) = boost_grid.iter().find(|b| !b.is_finite()) {
        return Err(Error::Parameter(format!("boost {b} must be finite")));
    }
    let n = advertisers.len();
    let draws = AmaDraws::new(advertisers, samples, seed, price_grid)?;
    let pairs: Vec<(f64, f64)> = weight_grid.iter().flat_map(|&w| boost_grid.iter().map(move |&b| (w, b))).collect();
    let combos = u32::try_from(n)
        .ok()
        .and_then(|n| pairs.len().checked_pow(n))
        .filter(|&c| c <= 1_000_000)
        .ok_or_else(|| Error::Input(format!("{} pairs over {n} advertisers is too large a grid", pairs.len())))?;

    let params_at = |mut idx: usize| {
        let mut chosen = vec![(0.0, 0.0); n];
        for slot in chosen.iter_mut().rev() {
            *slot = pairs[idx % pairs.len()];
            idx /= pairs.len();
        }
        AmaParams { weights: chosen.iter().map(|p| p.0).collect(), boosts: chosen.iter().map(|p| p.1).collect() }
    };

    let mut evaluations = Vec::with_capacity(combos);
    let mut best: Option<(AmaParams, Estimate)> = None;
    for idx in 0..combos {
        let params = params_at(idx);
        let revenue = draws.revenue(&params, advertisers)?;
        if best.as_ref().is_none_or(|(_, b)| revenue.mean > b.mean) {
            best = Some((params.clone(), revenue));
        }
        evaluations.push(Evaluation { stage: Stage::Grid, params, revenue });
    }
    let (mut incumbent, mut top) = best.expect("grid is non-empty");

    let steps = [spacing(weight_grid), spacing(boost_grid)];
    for i in 0..n {
        for (coord, step) in steps.iter().enumerate() {
            let Some(step) = step else { continue };
            for delta in [-0.5 * step, 0.5 * step] {
                let mut cand = incumbent.clone();
                let slot = if coord == 0 { &mut cand.weights[i] } else { &mut cand.boosts[i] };
                *slot += delta;
                if coord == 0 && *slot <= 0.0 {
                    continue;
                }
                let revenue = draws.revenue(&cand, advertisers)?;
                evaluations.push(Evaluation { stage: Stage::Refinement, params: cand.clone(), revenue });
                if revenue.mean > top.mean {
                    incumbent = cand;
                    top = revenue;
                }
            }
        }
    }
    Ok(SearchReport { best: incumbent, revenue: top, samples, seed, evaluations })
}
