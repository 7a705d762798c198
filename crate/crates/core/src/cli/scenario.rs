//! Scenario files: TOML with `[simulation]`, `[mechanism]`, `[price_mode]`,
//! optional `[verification]` and `[optimize]` sections and one
//! `[[advertiser]]` table per advertiser.

use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};
use toml::Spanned;

use crate::equilibrium::DEFAULT_PRICE_GRID;
use crate::ironing::DEFAULT_IRONING_GRID;
use crate::mechanisms::{Family, MechanismSpec, TieBreak};
use crate::model::{AdvertiserModel, AmaParams, ConversionCurve, CostDistribution};
use crate::simulation::{PriceMode, Scenario};

/// A rejected scenario file, pointing at the offending line when known.
#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostic {
    pub file: String,
    pub line: Option<usize>,
    pub field: String,
    pub message: String,
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.line {
            Some(line) => write!(f, "{}:{line}: {}: {}", self.file, self.field, self.message),
            None => write!(f, "{}: {}: {}", self.file, self.field, self.message),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    name: Option<String>,
    simulation: Option<Spanned<RawSimulation>>,
    mechanism: Spanned<RawMechanism>,
    price_mode: Spanned<RawPriceMode>,
    verification: Option<RawVerification>,
    optimize: Option<RawOptimize>,
    #[serde(default)]
    advertiser: Vec<Spanned<RawAdvertiser>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSimulation {
    samples: Option<Spanned<i64>>,
    seed: Option<Spanned<i64>>,
    price_grid: Option<Spanned<i64>>,
    ironing_grid: Option<Spanned<i64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMechanism {
    family: Spanned<String>,
    weights: Option<Spanned<Vec<f64>>>,
    boosts: Option<Spanned<Vec<f64>>>,
    pia_prices: Option<Spanned<Vec<Spanned<f64>>>>,
    fee: Option<Spanned<f64>>,
    amount: Option<Spanned<f64>>,
    tie_break: Option<Spanned<TieBreak>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPriceMode {
    kind: Spanned<String>,
    prices: Option<Spanned<Vec<Spanned<f64>>>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawVerification {
    instances: Option<Spanned<i64>>,
    deviation_grid: Option<Spanned<i64>>,
    cost_grid: Option<Spanned<i64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOptimize {
    grid: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAdvertiser {
    cost: Spanned<CostDistribution>,
    conversion: Spanned<ConversionCurve>,
    #[serde(default)]
    iron: bool,
}

/// Sizes of the instance-based checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VerificationSettings {
    pub instances: usize,
    pub deviation_grid: usize,
    pub cost_grid: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct AdvertiserConfig {
    pub cost: CostDistribution,
    pub conversion: ConversionCurve,
    pub iron: bool,
}

/// The scenario with every default filled in, as embedded in reports.
#[derive(Debug, Clone, Serialize)]
pub struct ResolvedConfig {
    pub file: String,
    pub name: String,
    pub samples: usize,
    pub seed: u64,
    pub price_grid: usize,
    pub ironing_grid: usize,
    pub mechanism: MechanismSpec,
    pub price_mode: PriceMode,
    pub verification: VerificationSettings,
    pub optimize_grid: Option<String>,
    pub advertisers: Vec<AdvertiserConfig>,
}

#[derive(Debug, Clone)]
pub struct LoadedScenario {
    pub scenario: Scenario,
    pub config: ResolvedConfig,
}

pub const DEFAULT_SAMPLES: usize = 10_000;
pub const DEFAULT_SEED: u64 = 0;
pub const DEFAULT_INSTANCES: usize = 1_000;
pub const DEFAULT_DEVIATION_GRID: usize = 50;

struct Ctx<'a> {
    file: &'a str,
    text: &'a str,
}

impl Ctx<'_> {
    fn line(&self, span: Range<usize>) -> usize {
        self.text[..span.start.min(self.text.len())].matches('\n').count() + 1
    }

    fn err(&self, span: Option<Range<usize>>, field: impl Into<String>, message: impl Into<String>) -> Diagnostic {
        Diagnostic {
            file: self.file.to_string(),
            line: span.map(|s| self.line(s)),
            field: field.into(),
            message: message.into(),
        }
    }

    fn count(&self, v: &Option<Spanned<i64>>, field: &str, default: usize, min: usize) -> Result<usize, Diagnostic> {
        match v {
            None => Ok(default),
            Some(s) => match usize::try_from(*s.get_ref()) {
                Ok(n) if n >= min => Ok(n),
                _ => Err(self.err(Some(s.span()), field, format!("must be an integer of at least {min}, got {}", s.get_ref()))),
            },
        }
    }
}

/// Applied on top of the file before validation.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub samples: Option<usize>,
    pub seed: Option<u64>,
    pub instances: Option<usize>,
}

pub fn load(path: &Path, overrides: Overrides) -> Result<LoadedScenario, Diagnostic> {
    let file = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|e| Diagnostic {
        file: file.clone(),
        line: None,
        field: "file".into(),
        message: e.to_string(),
    })?;
    parse(&file, &text, overrides)
}

fn family(ctx: &Ctx, m: &RawMechanism) -> Result<Family, Diagnostic> {
    let name = m.family.get_ref().as_str();
    let need = |v: &Option<Spanned<f64>>, what: &str| {
        v.as_ref().map(|s| *s.get_ref()).ok_or_else(|| {
            ctx.err(Some(m.family.span()), format!("mechanism.{what}"), format!("family {name} needs `{what}`"))
        })
    };
    Ok(match name {
        "wm-rp" => Family::WmRp,
        "vwm-rp" => Family::VwmRp,
        "vwm-pia" => Family::VwmPia,
        "ama" => Family::Ama,
        "first-price" => Family::FirstPrice,
        "loser-fee" => Family::LoserFee { fee: need(&m.fee, "fee")? },
        "flat-fee" => Family::FlatFee { fee: need(&m.fee, "fee")? },
        "subsidy" => Family::Subsidy { amount: need(&m.amount, "amount")? },
        "median-value" => Family::MedianValue,
        other => {
            return Err(ctx.err(
                Some(m.family.span()),
                "mechanism.family",
                format!(
                    "unknown family '{other}' (expected wm-rp, vwm-rp, vwm-pia, ama, first-price, loser-fee, flat-fee, subsidy or median-value)"
                ),
            ))
        }
    })
}

fn mechanism(ctx: &Ctx, m: &Spanned<RawMechanism>, advertisers: &[AdvertiserModel]) -> Result<MechanismSpec, Diagnostic> {
    let raw = m.get_ref();
    let family = family(ctx, raw)?;
    let mut spec = MechanismSpec::new(family);
    if let Some(t) = &raw.tie_break {
        spec.tie_break = *t.get_ref();
    }
    if family == Family::Ama {
        let n = advertisers.len();
        let weights = raw.weights.as_ref().map_or(vec![1.0; n], |w| w.get_ref().clone());
        let boosts = raw.boosts.as_ref().map_or(vec![0.0; n], |b| b.get_ref().clone());
        let params = AmaParams { weights, boosts };
        if let Err(e) = params.validate(n) {
            let span = raw.weights.as_ref().map(Spanned::span).or(raw.boosts.as_ref().map(Spanned::span));
            return Err(ctx.err(span.or(Some(m.span())), "mechanism.weights", e.to_string()));
        }
        spec.ama = Some(params);
    } else if let Some(w) = raw.weights.as_ref().or(raw.boosts.as_ref()) {
        return Err(ctx.err(Some(w.span()), "mechanism.weights", "weights and boosts apply to the ama family only"));
    }
    if let Some(prices) = &raw.pia_prices {
        if family != Family::VwmPia {
            return Err(ctx.err(Some(prices.span()), "mechanism.pia_prices", "equilibrium prices apply to vwm-pia only"));
        }
        let list = prices.get_ref();
        if list.len() != advertisers.len() {
            return Err(ctx.err(
                Some(prices.span()),
                "mechanism.pia_prices",
                format!("expected {} prices, got {}", advertisers.len(), list.len()),
            ));
        }
        for (i, (p, a)) in list.iter().zip(advertisers).enumerate() {
            if let Err(e) = a.conversion.check_price(*p.get_ref()) {
                return Err(ctx.err(Some(p.span()), format!("mechanism.pia_prices[{i}]"), e.to_string()));
            }
        }
        spec.pia_prices = Some(list.iter().map(|p| *p.get_ref()).collect());
    }
    if family != Family::VwmPia || spec.pia_prices.is_some() {
        spec.validate(advertisers.len()).map_err(|e| ctx.err(Some(m.span()), "mechanism", e.to_string()))?;
    }
    Ok(spec)
}

fn price_mode(ctx: &Ctx, m: &Spanned<RawPriceMode>, advertisers: &[AdvertiserModel]) -> Result<PriceMode, Diagnostic> {
    let raw = m.get_ref();
    let kind = raw.kind.get_ref().as_str();
    if kind != "fixed" {
        if let Some(p) = &raw.prices {
            return Err(ctx.err(Some(p.span()), "price_mode.prices", format!("prices apply to the fixed mode, not {kind}")));
        }
    }
    Ok(match kind {
        "fixed" => {
            let prices = raw
                .prices
                .as_ref()
                .ok_or_else(|| ctx.err(Some(m.span()), "price_mode.prices", "the fixed mode needs `prices`"))?;
            let list = prices.get_ref();
            if list.len() != advertisers.len() {
                return Err(ctx.err(
                    Some(prices.span()),
                    "price_mode.prices",
                    format!("expected {} prices, got {}", advertisers.len(), list.len()),
                ));
            }
            for (i, (p, a)) in list.iter().zip(advertisers).enumerate() {
                if let Err(e) = a.conversion.check_price(*p.get_ref()) {
                    return Err(ctx.err(Some(p.span()), format!("price_mode.prices[{i}]"), e.to_string()));
                }
            }
            PriceMode::Fixed { prices: list.iter().map(|p| *p.get_ref()).collect() }
        }
        "random" => PriceMode::Random,
        "pi-equilibrium" => PriceMode::PiEquilibrium,
        "ama-equilibrium" => PriceMode::AmaEquilibrium,
        other => {
            return Err(ctx.err(
                Some(raw.kind.span()),
                "price_mode.kind",
                format!("unknown price mode '{other}' (expected fixed, random, pi-equilibrium or ama-equilibrium)"),
            ))
        }
    })
}

/// Parses and validates scenario text; `file` only labels diagnostics.
pub fn parse(file: &str, text: &str, overrides: Overrides) -> Result<LoadedScenario, Diagnostic> {
    let ctx = Ctx { file, text };
    let raw: RawScenario = toml::from_str(text).map_err(|e| ctx.err(e.span(), "scenario", e.message().trim().to_string()))?;

    let sim = raw.simulation.as_ref().map(Spanned::get_ref);
    let pick = |f: fn(&RawSimulation) -> &Option<Spanned<i64>>| sim.and_then(|s| f(s).clone());
    let samples = ctx.count(&pick(|s| &s.samples), "simulation.samples", DEFAULT_SAMPLES, 1)?;
    let price_grid = ctx.count(&pick(|s| &s.price_grid), "simulation.price_grid", DEFAULT_PRICE_GRID, 2)?;
    let ironing_grid = ctx.count(&pick(|s| &s.ironing_grid), "simulation.ironing_grid", DEFAULT_IRONING_GRID, 16)?;
    let seed = match pick(|s| &s.seed) {
        None => DEFAULT_SEED,
        Some(s) => u64::try_from(*s.get_ref())
            .map_err(|_| ctx.err(Some(s.span()), "simulation.seed", "must be a non-negative integer"))?,
    };
    let verification = {
        let v = raw.verification.as_ref();
        let get = |f: fn(&RawVerification) -> &Option<Spanned<i64>>| v.and_then(|v| f(v).clone());
        VerificationSettings {
            instances: ctx.count(&get(|v| &v.instances), "verification.instances", DEFAULT_INSTANCES, 1)?,
            deviation_grid: ctx.count(&get(|v| &v.deviation_grid), "verification.deviation_grid", DEFAULT_DEVIATION_GRID, 2)?,
            cost_grid: ctx.count(&get(|v| &v.cost_grid), "verification.cost_grid", DEFAULT_DEVIATION_GRID, 2)?,
        }
    };

    if raw.advertiser.is_empty() {
        return Err(ctx.err(None, "advertiser", "a scenario needs at least one [[advertiser]] table"));
    }
    let mut advertisers = Vec::with_capacity(raw.advertiser.len());
    let mut adv_configs = Vec::with_capacity(raw.advertiser.len());
    for (i, a) in raw.advertiser.iter().enumerate() {
        let a = a.get_ref();
        a.cost.get_ref().validate().map_err(|e| ctx.err(Some(a.cost.span()), format!("advertiser[{i}].cost"), e.to_string()))?;
        a.conversion
            .get_ref()
            .validate()
            .map_err(|e| ctx.err(Some(a.conversion.span()), format!("advertiser[{i}].conversion"), e.to_string()))?;
        let mut model = AdvertiserModel::new(i, a.cost.get_ref().clone(), a.conversion.get_ref().clone());
        if a.iron {
            model = model
                .ironed(ironing_grid)
                .map_err(|e| ctx.err(Some(a.cost.span()), format!("advertiser[{i}].cost"), e.to_string()))?;
        }
        advertisers.push(model);
        adv_configs.push(AdvertiserConfig { cost: a.cost.get_ref().clone(), conversion: a.conversion.get_ref().clone(), iron: a.iron });
    }

    let spec = mechanism(&ctx, &raw.mechanism, &advertisers)?;
    let mode = price_mode(&ctx, &raw.price_mode, &advertisers)?;
    let mut scenario = Scenario::new(advertisers, mode, spec);
    scenario.name = raw.name.clone().unwrap_or_else(|| {
        Path::new(file).file_stem().map_or_else(|| "scenario".to_string(), |s| s.to_string_lossy().into_owned())
    });
    scenario.samples = overrides.samples.unwrap_or(samples);
    scenario.seed = overrides.seed.unwrap_or(seed);
    scenario.price_grid = price_grid;
    if scenario.samples == 0 {
        return Err(ctx.err(None, "samples", "must be at least 1"));
    }
    let scenario = scenario
        .resolve()
        .map_err(|e| ctx.err(Some(raw.price_mode.span()), "scenario", e.to_string()))?;
    let verification = VerificationSettings { instances: overrides.instances.unwrap_or(verification.instances), ..verification };
    if verification.instances == 0 {
        return Err(ctx.err(None, "instances", "must be at least 1"));
    }

    let config = ResolvedConfig {
        file: file.to_string(),
        name: scenario.name.clone(),
        samples: scenario.samples,
        seed: scenario.seed,
        price_grid,
        ironing_grid,
        mechanism: scenario.mechanism.clone(),
        price_mode: scenario.price_mode.clone(),
        verification,
        optimize_grid: raw.optimize.and_then(|o| o.grid),
        advertisers: adv_configs,
    };
    Ok(LoadedScenario { scenario, config })
}
