//! Allocation and payment rules.
//!
//! Every real family ranks advertisers by a score that is non-increasing in
//! the reported cost (value, virtual value or affine value), sells only when
//! the top score is positive and charges the winner its value at the threshold
//! cost: the largest cost at which it would still win, capped at the top of
//! its support. With a zero utility offset that is exactly the payment the
//! truthfulness characterization prescribes.
//!
//! The diagnostic families break one ingredient each and exist so that the
//! property checks can be shown to reject something.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AdvertiserModel, AmaParams, Report};
use crate::numeric;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Family {
    /// Welfare maximizer with reported prices.
    WmRp,
    /// Virtual-welfare maximizer with reported prices.
    VwmRp,
    /// Virtual-welfare maximizer with a price-independent allocation.
    VwmPia,
    /// Affine maximizer.
    Ama,
    /// Winner pays its own reported value.
    FirstPrice,
    /// WM-RP, and every loser pays `fee`.
    LoserFee { fee: f64 },
    /// WM-RP with `fee` added to the winner's payment.
    FlatFee { fee: f64 },
    /// WM-RP with `amount` rebated to every advertiser.
    Subsidy { amount: f64 },
    /// The median reported value wins and pays nothing (three or more bidders).
    MedianValue,
}

impl Family {
    pub fn label(&self) -> &'static str {
        match self {
            Family::WmRp => "wm-rp",
            Family::VwmRp => "vwm-rp",
            Family::VwmPia => "vwm-pia",
            Family::Ama => "ama",
            Family::FirstPrice => "first-price",
            Family::LoserFee { .. } => "loser-fee",
            Family::FlatFee { .. } => "flat-fee",
            Family::Subsidy { .. } => "subsidy",
            Family::MedianValue => "median-value",
        }
    }

    pub fn is_diagnostic(&self) -> bool {
        !matches!(self, Family::WmRp | Family::VwmRp | Family::VwmPia | Family::Ama)
    }

    /// Whether the allocation ignores reported display prices.
    pub fn price_independent(&self) -> bool {
        matches!(self, Family::VwmPia)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TieBreak {
    #[default]
    LowestIndex,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MechanismSpec {
    pub family: Family,
    pub ama: Option<AmaParams>,
    pub pia_prices: Option<Vec<f64>>,
    #[serde(default)]
    pub tie_break: TieBreak,
}

impl MechanismSpec {
    pub fn new(family: Family) -> Self {
        MechanismSpec { family, ama: None, pia_prices: None, tie_break: TieBreak::LowestIndex }
    }

    pub fn wm_rp() -> Self {
        Self::new(Family::WmRp)
    }

    pub fn vwm_rp() -> Self {
        Self::new(Family::VwmRp)
    }

    pub fn vwm_pia(prices: Vec<f64>) -> Self {
        MechanismSpec { pia_prices: Some(prices), ..Self::new(Family::VwmPia) }
    }

    pub fn ama(params: AmaParams) -> Self {
        MechanismSpec { ama: Some(params), ..Self::new(Family::Ama) }
    }

    pub fn validate(&self, advertisers: usize) -> Result<()> {
        match (&self.family, &self.ama) {
            (Family::Ama, None) => return Err(Error::Parameter("the affine maximizer needs weights and boosts".into())),
            (Family::Ama, Some(p)) => p.validate(advertisers)?,
            (_, Some(_)) => {
                return Err(Error::Parameter(format!("{} takes no affine parameters", self.family.label())))
            }
            _ => {}
        }
        match (&self.family, &self.pia_prices) {
            (Family::VwmPia, None) => {
                return Err(Error::Parameter("the price-independent mechanism needs equilibrium prices".into()))
            }
            (Family::VwmPia, Some(p)) if p.len() != advertisers => {
                return Err(Error::Parameter(format!(
                    "expected {advertisers} equilibrium prices, got {}",
                    p.len()
                )))
            }
            (Family::VwmPia, Some(_)) => {}
            (_, Some(_)) => {
                return Err(Error::Parameter(format!("{} takes no equilibrium prices", self.family.label())))
            }
            _ => {}
        }
        match self.family {
            Family::LoserFee { fee } | Family::FlatFee { fee } if !(fee.is_finite() && fee > 0.0) => {
                Err(Error::Parameter(format!("fee {fee} must be positive")))
            }
            Family::Subsidy { amount } if !(amount.is_finite() && amount > 0.0) => {
                Err(Error::Parameter(format!("subsidy {amount} must be positive")))
            }
            Family::MedianValue if advertisers < 3 => {
                Err(Error::Parameter("the median-value rule needs at least three advertisers".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Result of one auction. At most one allocation is set; losers of the real
/// families pay exactly zero.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Outcome {
    pub winner: Option<usize>,
    pub allocations: Vec<bool>,
    pub payments: Vec<f64>,
}

impl Outcome {
    pub fn no_sale(n: usize) -> Self {
        Outcome { winner: None, allocations: vec![false; n], payments: vec![0.0; n] }
    }

    pub fn total_payment(&self) -> f64 {
        self.payments.iter().sum()
    }

    /// `value(true_cost, price) * allocation - payment` for advertiser `i`.
    pub fn utility(&self, i: usize, true_cost: f64, report: Report, adv: &AdvertiserModel) -> f64 {
        let gross = if self.allocations[i] { (report.price - true_cost) * adv.conversion.rate(report.price) } else { 0.0 };
        gross - self.payments[i]
    }
}

#[derive(Clone, Copy)]
enum Scoring<'a> {
    Value,
    Virtual { at: Option<&'a [f64]> },
    Affine(&'a AmaParams),
}

impl Scoring<'_> {
    fn score(&self, adv: &AdvertiserModel, i: usize, cost: f64, price: f64) -> f64 {
        match *self {
            Scoring::Value => (price - cost) * adv.conversion.rate(price),
            Scoring::Virtual { at } => {
                let p = at.map_or(price, |q| q[i]);
                adv.ranking_virtual_value(cost, p).unwrap_or(f64::NEG_INFINITY)
            }
            Scoring::Affine(params) => params.boosts[i] + params.weights[i] * ((price - cost) * adv.conversion.rate(price)),
        }
    }
}

/// Bar the winner's score has to clear: `(level, strict)`. Competitors with a
/// lower index and the zero reserve must be beaten strictly, competitors with
/// a higher index only matched.
fn bar(scores: &[f64], w: usize) -> (f64, bool) {
    let below = scores[..w].iter().fold(0.0f64, |m, &s| m.max(s));
    let above = scores[w + 1..].iter().fold(f64::NEG_INFINITY, |m, &s| m.max(s));
    if above > below {
        (above, false)
    } else {
        (below, true)
    }
}

fn clears(score: f64, (level, strict): (f64, bool)) -> bool {
    if strict {
        score > level
    } else {
        score >= level
    }
}

fn check_profile(profile: &[Report], advertisers: &[AdvertiserModel]) -> Result<()> {
    if profile.is_empty() {
        return Err(Error::Input("empty report profile".into()));
    }
    if profile.len() != advertisers.len() {
        return Err(Error::Input(format!(
            "{} reports for {} advertisers",
            profile.len(),
            advertisers.len()
        )));
    }
    for (r, adv) in profile.iter().zip(advertisers) {
        adv.conversion.check_price(r.price)?;
        let (lo, hi) = (adv.distribution.lower(), adv.distribution.upper());
        if !(r.cost >= lo && r.cost <= hi) {
            return Err(Error::Input(format!(
                "advertiser {} reported cost {} outside its support [{lo}, {hi}]",
                adv.index, r.cost
            )));
        }
    }
    Ok(())
}

const THRESHOLD_TOLERANCE: f64 = 1e-13;

/// Payment of winner `w`, whose score clears `bar` at its own report.
fn winner_payment(
    scoring: Scoring,
    profile: &[Report],
    advertisers: &[AdvertiserModel],
    w: usize,
    bar: (f64, bool),
) -> f64 {
    let adv = &advertisers[w];
    let Report { cost, price } = profile[w];
    let top = adv.distribution.upper();
    let rate = adv.conversion.rate(price);
    let at_top = (price - top) * rate;
    match scoring {
        Scoring::Value => bar.0.max(at_top),
        Scoring::Affine(params) => ((bar.0 - params.boosts[w]) / params.weights[w]).max(at_top),
        Scoring::Virtual { .. } => {
            let width = (top - adv.distribution.lower()).max(1.0);
            let t = numeric::last_true(cost, top, THRESHOLD_TOLERANCE * width, |z| {
                clears(scoring.score(adv, w, z, price), bar)
            });
            rate * (price - t)
        }
    }
}

fn run_scored(scoring: Scoring, profile: &[Report], advertisers: &[AdvertiserModel]) -> Outcome {
    let n = profile.len();
    let scores: Vec<f64> =
        profile.iter().enumerate().map(|(i, r)| scoring.score(&advertisers[i], i, r.cost, r.price)).collect();
    let mut out = Outcome::no_sale(n);
    let mut w = 0;
    for i in 1..n {
        if scores[i] > scores[w] {
            w = i;
        }
    }
    if !(scores[w] > 0.0) {
        return out;
    }
    let bar = bar(&scores, w);
    out.winner = Some(w);
    out.allocations[w] = true;
    out.payments[w] = winner_payment(scoring, profile, advertisers, w, bar);
    out
}

fn check_rankable(advertisers: &[AdvertiserModel]) -> Result<()> {
    advertisers.iter().try_for_each(AdvertiserModel::ensure_rankable)
}

fn check_pia_prices(prices: &[f64], advertisers: &[AdvertiserModel]) -> Result<()> {
    if prices.len() != advertisers.len() {
        return Err(Error::Parameter(format!(
            "expected {} equilibrium prices, got {}",
            advertisers.len(),
            prices.len()
        )));
    }
    prices.iter().zip(advertisers).try_for_each(|(&p, adv)| adv.conversion.check_price(p))
}

/// Highest reported value wins and pays the larger of the runner-up's value
/// (zero when alone) and its own value at the top of its cost support.
pub fn run_wm_rp(profile: &[Report], advertisers: &[AdvertiserModel]) -> Result<Outcome> {
    check_profile(profile, advertisers)?;
    Ok(run_scored(Scoring::Value, profile, advertisers))
}

/// Highest positive virtual value at the reported prices wins.
pub fn run_vwm_rp(profile: &[Report], advertisers: &[AdvertiserModel]) -> Result<Outcome> {
    check_profile(profile, advertisers)?;
    check_rankable(advertisers)?;
    Ok(run_scored(Scoring::Virtual { at: None }, profile, advertisers))
}

/// Highest positive virtual value at the equilibrium prices `pia_prices` wins;
/// the threshold cost comes from that ranking and is priced at the reported
/// display price.
pub fn run_vwm_pia(profile: &[Report], advertisers: &[AdvertiserModel], pia_prices: &[f64]) -> Result<Outcome> {
    check_profile(profile, advertisers)?;
    check_rankable(advertisers)?;
    check_pia_prices(pia_prices, advertisers)?;
    Ok(run_scored(Scoring::Virtual { at: Some(pia_prices) }, profile, advertisers))
}

/// Highest positive `boost + weight * value` wins.
pub fn run_ama(profile: &[Report], advertisers: &[AdvertiserModel], params: &AmaParams) -> Result<Outcome> {
    check_profile(profile, advertisers)?;
    params.validate(advertisers.len())?;
    Ok(run_scored(Scoring::Affine(params), profile, advertisers))
}

fn run_diagnostic(family: Family, profile: &[Report], advertisers: &[AdvertiserModel]) -> Result<Outcome> {
    check_profile(profile, advertisers)?;
    let mut out = run_scored(Scoring::Value, profile, advertisers);
    match family {
        Family::FirstPrice => {
            if let Some(w) = out.winner {
                let r = profile[w];
                out.payments[w] = (r.price - r.cost) * advertisers[w].conversion.rate(r.price);
            }
        }
        Family::LoserFee { fee } => {
            for (i, x) in out.payments.iter_mut().enumerate() {
                if out.winner != Some(i) {
                    *x = fee;
                }
            }
        }
        Family::FlatFee { fee } => {
            if let Some(w) = out.winner {
                out.payments[w] += fee;
            }
        }
        Family::Subsidy { amount } => out.payments.iter_mut().for_each(|x| *x -= amount),
        Family::MedianValue => {
            let n = profile.len();
            if n < 3 {
                return Err(Error::Parameter("the median-value rule needs at least three advertisers".into()));
            }
            let values: Vec<f64> =
                profile.iter().zip(advertisers).map(|(r, a)| (r.price - r.cost) * a.conversion.rate(r.price)).collect();
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
            out = Outcome::no_sale(n);
            let w = order[n / 2];
            out.winner = Some(w);
            out.allocations[w] = true;
        }
        Family::WmRp | Family::VwmRp | Family::VwmPia | Family::Ama => unreachable!("not a diagnostic family"),
    }
    Ok(out)
}

/// Runs the mechanism described by `spec`.
pub fn run(spec: &MechanismSpec, profile: &[Report], advertisers: &[AdvertiserModel]) -> Result<Outcome> {
    spec.validate(advertisers.len())?;
    match spec.family {
        Family::WmRp => run_wm_rp(profile, advertisers),
        Family::VwmRp => run_vwm_rp(profile, advertisers),
        Family::VwmPia => run_vwm_pia(profile, advertisers, spec.pia_prices.as_deref().unwrap_or_default()),
        Family::Ama => run_ama(profile, advertisers, spec.ama.as_ref().expect("validated")),
        family => run_diagnostic(family, profile, advertisers),
    }
}

/// Utility of advertiser `i` with true cost `true_cost` under `spec`.
///
/// Equal to `run(..).utility(..)` but without building the full outcome for
/// the real families, for loops that only need one advertiser's utility.
pub fn utility(
    spec: &MechanismSpec,
    profile: &[Report],
    advertisers: &[AdvertiserModel],
    i: usize,
    true_cost: f64,
) -> Result<f64> {
    let scoring = match spec.family {
        Family::WmRp => Scoring::Value,
        Family::VwmRp => Scoring::Virtual { at: None },
        Family::VwmPia => Scoring::Virtual { at: spec.pia_prices.as_deref() },
        Family::Ama => Scoring::Affine(spec.ama.as_ref().ok_or_else(|| Error::Parameter("missing affine parameters".into()))?),
        _ => return Ok(run(spec, profile, advertisers)?.utility(i, true_cost, profile[i], &advertisers[i])),
    };
    spec.validate(advertisers.len())?;
    check_profile(profile, advertisers)?;
    if let Scoring::Virtual { at } = scoring {
        check_rankable(advertisers)?;
        if let Some(p) = at {
            check_pia_prices(p, advertisers)?;
        }
    }
    let mut below = 0.0f64;
    let mut above = f64::NEG_INFINITY;
    let mut own = 0.0;
    for (j, r) in profile.iter().enumerate() {
        let s = scoring.score(&advertisers[j], j, r.cost, r.price);
        match j.cmp(&i) {
            std::cmp::Ordering::Less => below = below.max(s),
            std::cmp::Ordering::Equal => own = s,
            std::cmp::Ordering::Greater => above = above.max(s),
        }
    }
    let bar = if above > below { (above, false) } else { (below, true) };
    if !clears(own, bar) {
        return Ok(0.0);
    }
    let x = winner_payment(scoring, profile, advertisers, i, bar);
    let r = profile[i];
    Ok((r.price - true_cost) * advertisers[i].conversion.rate(r.price) - x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ConversionCurve, CostDistribution};

    fn uniform_flat(n: usize) -> Vec<AdvertiserModel> {
        (0..n)
            .map(|i| {
                AdvertiserModel::new(
                    i,
                    CostDistribution::uniform(0.0, 1.0).unwrap(),
                    ConversionCurve::constant(1.0, [0.0, 2.0]).unwrap(),
                )
            })
            .collect()
    }

    fn reports(costs: &[f64], prices: &[f64]) -> Vec<Report> {
        costs.iter().zip(prices).map(|(&c, &p)| Report::new(c, p)).collect()
    }

    #[test]
    fn wm_rp_second_price() {
        let out = run_wm_rp(&reports(&[0.2, 0.5], &[1.0, 1.0]), &uniform_flat(2)).unwrap();
        assert_eq!(out.winner, Some(0));
        assert_eq!(out.allocations, vec![true, false]);
        assert!((out.payments[0] - 0.5).abs() < 1e-15);
        assert_eq!(out.payments[1], 0.0);
    }

    #[test]
    fn wm_rp_tie_goes_to_lowest_index_at_zero_utility() {
        let advs = uniform_flat(2);
        let profile = reports(&[0.3, 0.3], &[1.0, 1.0]);
        let out = run_wm_rp(&profile, &advs).unwrap();
        assert_eq!(out.winner, Some(0));
        assert_eq!(out.utility(0, 0.3, profile[0], &advs[0]), 0.0);
    }

    #[test]
    fn wm_rp_lone_bidder_pays_zero() {
        let out = run_wm_rp(&reports(&[0.4], &[1.0]), &uniform_flat(1)).unwrap();
        assert_eq!(out.winner, Some(0));
        assert_eq!(out.payments[0], 0.0);
    }

    #[test]
    fn wm_rp_rejects_bad_input() {
        assert!(matches!(run_wm_rp(&[], &[]), Err(Error::Input(_))));
        assert!(matches!(run_wm_rp(&reports(&[0.4], &[3.0]), &uniform_flat(1)), Err(Error::Domain { .. })));
    }

    #[test]
    fn vwm_rp_examples() {
        let advs = uniform_flat(2);
        let out = run_vwm_rp(&reports(&[0.2, 0.4], &[1.0, 1.0]), &advs).unwrap();
        assert_eq!(out.winner, Some(0));
        assert!((out.payments[0] - 0.6).abs() < 1e-10, "{out:?}");
        let out = run_vwm_rp(&reports(&[0.6, 0.7], &[1.0, 1.0]), &advs).unwrap();
        assert_eq!(out, Outcome::no_sale(2));
        let out = run_vwm_rp(&reports(&[0.8], &[1.0]), &uniform_flat(1)).unwrap();
        assert_eq!(out.winner, None);
    }

    #[test]
    fn vwm_rp_lone_bidder_faces_reserve() {
        let out = run_vwm_rp(&reports(&[0.2], &[1.0]), &uniform_flat(1)).unwrap();
        assert!((out.payments[0] - 0.5).abs() < 1e-10);
    }

    #[test]
    fn vwm_rp_needs_regularity_or_surrogate() {
        let gap = CostDistribution::uniform_mixture(0.5, [0.0, 0.1], [0.9, 1.0]).unwrap();
        let conv = ConversionCurve::constant(1.0, [0.0, 2.0]).unwrap();
        let advs = vec![AdvertiserModel::new(0, gap, conv)];
        assert!(matches!(run_vwm_rp(&reports(&[0.05], &[1.0]), &advs), Err(Error::Regularity(_))));
    }

    #[test]
    fn vwm_pia_examples() {
        let conv = ConversionCurve::unimodal([0.0, 5.0]).unwrap();
        let advs: Vec<_> =
            (0..2).map(|i| AdvertiserModel::new(i, CostDistribution::uniform(0.0, 1.0).unwrap(), conv.clone())).collect();
        let pbar = [1.0, 1.0];
        let profile = reports(&[0.2, 0.4], &[1.0, 1.0]);
        let out = run_vwm_pia(&profile, &advs, &pbar).unwrap();
        assert_eq!(out.winner, Some(0));
        assert!((out.payments[0] - 0.6 * (-1.0f64).exp()).abs() < 1e-10);
        assert_eq!(out, run_vwm_rp(&profile, &advs).unwrap());
        let moved = run_vwm_pia(&reports(&[0.2, 0.4], &[3.0, 1.0]), &advs, &pbar).unwrap();
        assert_eq!(moved.winner, Some(0));
    }

    #[test]
    fn ama_examples() {
        let advs = uniform_flat(2);
        let params = AmaParams::new(vec![2.0, 1.0], vec![0.0, 0.1]).unwrap();
        let out = run_ama(&reports(&[0.5, 0.5], &[1.0, 1.0]), &advs, &params).unwrap();
        assert_eq!(out.winner, Some(0));
        assert!((out.payments[0] - 0.3).abs() < 1e-15);
        let profile = reports(&[0.2, 0.35], &[1.0, 1.3]);
        assert_eq!(
            run_ama(&profile, &advs, &AmaParams::identity(2)).unwrap(),
            run_wm_rp(&profile, &advs).unwrap()
        );
    }

    #[test]
    fn ama_boosted_zero_value_winner_pays_nothing() {
        let advs = uniform_flat(2);
        let params = AmaParams::new(vec![1.0, 1.0], vec![1.0, 0.0]).unwrap();
        let out = run_ama(&reports(&[1.0, 0.5], &[1.0, 1.0]), &advs, &params).unwrap();
        assert_eq!(out.winner, Some(0));
        assert_eq!(out.payments[0], 0.0);
    }

    #[test]
    fn ama_rejects_non_positive_weight() {
        let bad = AmaParams { weights: vec![0.0, 1.0], boosts: vec![0.0, 0.0] };
        assert!(matches!(run_ama(&reports(&[0.1, 0.2], &[1.0, 1.0]), &uniform_flat(2), &bad), Err(Error::Parameter(_))));
    }

    #[test]
    fn dispatch_and_validation() {
        let advs = uniform_flat(2);
        let profile = reports(&[0.2, 0.5], &[1.0, 1.0]);
        let direct = run_wm_rp(&profile, &advs).unwrap();
        assert_eq!(run(&MechanismSpec::wm_rp(), &profile, &advs).unwrap(), direct);
        assert_eq!(run(&MechanismSpec::ama(AmaParams::identity(2)), &profile, &advs).unwrap(), direct);
        let malformed = MechanismSpec::new(Family::Ama);
        assert!(matches!(run(&malformed, &profile, &advs), Err(Error::Parameter(_))));
    }

    #[test]
    fn fast_utility_matches_full_run() {
        let advs = uniform_flat(3);
        let specs = [
            MechanismSpec::wm_rp(),
            MechanismSpec::vwm_rp(),
            MechanismSpec::vwm_pia(vec![1.0, 1.2, 0.9]),
            MechanismSpec::ama(AmaParams::new(vec![1.0, 1.5, 0.7], vec![-0.1, 0.0, 0.05]).unwrap()),
        ];
        let profiles =
            [reports(&[0.2, 0.2, 0.6], &[1.0, 1.0, 1.5]), reports(&[0.9, 0.1, 0.3], &[0.7, 1.1, 1.4])];
        for spec in &specs {
            for profile in &profiles {
                let out = run(spec, profile, &advs).unwrap();
                for i in 0..3 {
                    let truth = profile[i].cost;
                    let fast = utility(spec, profile, &advs, i, truth).unwrap();
                    assert_eq!(fast, out.utility(i, truth, profile[i], &advs[i]), "{spec:?} {i}");
                }
            }
        }
    }
}
