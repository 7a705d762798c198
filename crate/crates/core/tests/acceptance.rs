//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fails.

use std::path::PathBuf;
use std::process::Command;
use std::time::Instant;

use adlab::equilibrium::{
    best_response_check, dominance_check, pi_equilibrium_price, BestResponseQuery, OpponentPrices, PriceGrid,
    RateTable,
};
use adlab::ironing::iron;
use adlab::mechanisms::{self, Family, MechanismSpec};
use adlab::model::{regularity_check, AdvertiserModel, AmaParams, ConversionCurve, CostDistribution, Report};
use adlab::optimizer::ama_search;
use adlab::rng::{self, tag};
use adlab::simulation::{run_experiment, PriceMode, Scenario};
use adlab::verification::{
    efrp_check, ef_check, revenue_equivalence_check, run_check, Check, CheckConfig, CheckReport,
};
use rand::Rng;

type Verdict = (bool, String);
type Criterion = (&'static str, fn() -> Verdict);

fn adv(i: usize, cost: CostDistribution, conv: ConversionCurve) -> AdvertiserModel {
    AdvertiserModel::new(i, cost, conv)
}

fn uniform_unit(n: usize, domain: [f64; 2]) -> Vec<AdvertiserModel> {
    (0..n)
        .map(|i| adv(i, CostDistribution::uniform(0.0, 1.0).unwrap(), ConversionCurve::constant(1.0, domain).unwrap()))
        .collect()
}

fn exponential_market(n: usize) -> Vec<AdvertiserModel> {
    (0..n)
        .map(|i| adv(i, CostDistribution::uniform(0.0, 1.0).unwrap(), ConversionCurve::exponential(1.0, [0.0, 4.0]).unwrap()))
        .collect()
}

/// Three regular advertisers with different cost laws and conversion curves.
fn mixed_market() -> Vec<AdvertiserModel> {
    vec![
        adv(0, CostDistribution::uniform(0.0, 1.0).unwrap(), ConversionCurve::constant(1.0, [0.0, 2.0]).unwrap()),
        adv(
            1,
            CostDistribution::truncated_exponential(0.0, 1.0, 2.0).unwrap(),
            ConversionCurve::exponential(1.0, [0.0, 3.0]).unwrap(),
        ),
        adv(
            2,
            CostDistribution::uniform(0.2, 1.2).unwrap(),
            ConversionCurve::linear_decreasing(1.0, 0.2, [0.0, 3.0]).unwrap(),
        ),
    ]
}

fn pi_prices(advs: &[AdvertiserModel]) -> Vec<f64> {
    advs.iter()
        .map(|a| pi_equilibrium_price(&a.conversion, &PriceGrid::for_domain(&a.conversion, 2001).unwrap()).unwrap())
        .collect()
}

const SUITE: [Check; 5] = [Check::Ic, Check::Ir, Check::Wbb, Check::Mono, Check::Payment];

fn suite(spec: &MechanismSpec, advs: &[AdvertiserModel], cfg: &CheckConfig) -> Vec<CheckReport> {
    SUITE.iter().map(|&c| run_check(c, spec, advs, cfg).unwrap()).collect()
}

fn summary(reports: &[CheckReport]) -> String {
    reports.iter().map(|r| format!("{}={:.1e}", r.check, r.max_violation)).collect::<Vec<_>>().join(" ")
}

fn criterion_1() -> Verdict {
    let start = Instant::now();
    let market = mixed_market();
    let cfg = CheckConfig::new(1_000, 101, PriceMode::Random);
    let specs = [
        MechanismSpec::wm_rp(),
        MechanismSpec::vwm_rp(),
        MechanismSpec::vwm_pia(pi_prices(&market)),
        MechanismSpec::ama(AmaParams::new(vec![1.0, 1.3, 0.8], vec![0.0, -0.05, -0.1]).unwrap()),
    ];
    let mut ok = true;
    let mut notes = Vec::new();
    for spec in &specs {
        let r = suite(spec, &market, &cfg);
        ok &= r.iter().all(|x| x.pass);
        notes.push(format!("{} [{}]", spec.family.label(), summary(&r)));
    }
    let broken = [
        (Family::FirstPrice, 2, Check::Ic),
        (Family::LoserFee { fee: 0.05 }, 2, Check::Ir),
        (Family::FlatFee { fee: 0.05 }, 2, Check::Payment),
        (Family::MedianValue, 3, Check::Mono),
    ];
    for (family, n, target) in broken {
        let advs = uniform_unit(n, [0.0, 2.0]);
        let cfg = CheckConfig::new(1_000, 101, PriceMode::Fixed { prices: vec![1.0; n] });
        let r = run_check(target, &MechanismSpec::new(family), &advs, &cfg).unwrap();
        ok &= !r.pass;
        notes.push(format!("{} fails {}: {}", family.label(), target, !r.pass));
    }
    let secs = start.elapsed().as_secs_f64();
    ok &= secs <= 120.0;
    (ok, format!("{}; {secs:.1}s", notes.join("; ")))
}

fn criterion_2() -> Verdict {
    let market = mixed_market();
    let efrp = efrp_check(&MechanismSpec::wm_rp(), &market, &CheckConfig::new(10_000, 202, PriceMode::Random)).unwrap();

    let exp = exponential_market(3);
    let grid = PriceGrid::for_domain(&exp[0].conversion, 2001).unwrap();
    let table = RateTable::new(&exp[0].conversion, &grid).unwrap();
    let price_gap = (0..=100).map(|k| k as f64 / 100.0).map(|c| (table.ama_price(c) - (c + 1.0)).abs()).fold(0.0, f64::max);
    let ef = ef_check(&MechanismSpec::wm_rp(), &exp, &CheckConfig::new(10_000, 203, PriceMode::AmaEquilibrium)).unwrap();

    // Both values positive, both virtual values negative: the reserve blocks a sale.
    let flat = uniform_unit(2, [0.0, 2.0]);
    let profile = [Report::new(0.6, 1.0), Report::new(0.7, 1.0)];
    let blocked = mechanisms::run_vwm_rp(&profile, &flat).unwrap().winner.is_none();
    let vwm = efrp_check(&MechanismSpec::vwm_rp(), &flat, &CheckConfig::new(1_000, 204, PriceMode::Fixed { prices: vec![1.0, 1.0] }))
        .unwrap();
    let ok = efrp.pass && ef.pass && price_gap <= grid.step() && blocked && !vwm.pass;
    (
        ok,
        format!(
            "wm-rp efrp {} (10000 profiles); ef {} (shortfall {:.1e} <= step {:.1e}); |p(c) - (c+1)| <= {:.1e}; vwm-rp blocks (0.6, 0.7): {blocked}, efrp fails: {}",
            efrp.pass,
            ef.pass,
            ef.max_violation,
            ef.tolerance,
            price_gap,
            !vwm.pass
        ),
    )
}

/// Midpoint rule over the unit square.
fn double_integral(f: impl Fn(f64, f64) -> f64) -> f64 {
    let m = 2_000;
    let h = 1.0 / m as f64;
    let mut total = 0.0;
    for i in 0..m {
        let x = (i as f64 + 0.5) * h;
        for j in 0..m {
            total += f(x, (j as f64 + 0.5) * h);
        }
    }
    total * h * h
}

fn criterion_3() -> Verdict {
    let start = Instant::now();
    // lambda = 1, p = 1: value 1 - c, zeta = 2c, so the virtual ranking sells iff min cost < 1/2.
    let wm_oracle = double_integral(|a, b| 1.0 - a.max(b));
    let vwm_oracle = double_integral(|a, b| if a.min(b) < 0.5 { 1.0 - a.max(b).min(0.5) } else { 0.0 });
    let sale_oracle = double_integral(|a, b| if a.min(b) < 0.5 { 1.0 } else { 0.0 });

    let base = Scenario::new(uniform_unit(2, [0.0, 2.0]), PriceMode::Fixed { prices: vec![1.0, 1.0] }, MechanismSpec::wm_rp())
        .with_samples(1_000_000)
        .with_seed(303);
    let wm = run_experiment(&base).unwrap();
    let mut v = base.clone();
    v.mechanism = MechanismSpec::vwm_rp();
    let vwm = run_experiment(&v).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let checks = [
        (wm.expected_revenue.mean, wm_oracle, 1.0 / 3.0),
        (vwm.expected_revenue.mean, vwm_oracle, 5.0 / 12.0),
        (vwm.sale_probability.mean, sale_oracle, 0.75),
    ];
    let ok = checks.iter().all(|&(est, oracle, exact)| (est - oracle).abs() <= 0.003 && (oracle - exact).abs() < 1e-5)
        && secs <= 30.0;
    (
        ok,
        format!(
            "wm-rp revenue {:.5} (oracle {:.5}); vwm-rp revenue {:.5} (oracle {:.5}); vwm-rp sale probability {:.5} (oracle {:.5}); {secs:.1}s",
            checks[0].0, checks[0].1, checks[1].0, checks[1].1, checks[2].0, checks[2].1
        ),
    )
}

fn overlap_mixture() -> CostDistribution {
    CostDistribution::uniform_mixture(0.5, [0.0, 1.0], [0.9, 1.0]).unwrap()
}

fn gap_mixture() -> CostDistribution {
    CostDistribution::uniform_mixture(0.5, [0.0, 0.1], [0.9, 1.0]).unwrap()
}

fn criterion_4() -> Verdict {
    let fixtures: Vec<(&str, Vec<AdvertiserModel>, Vec<f64>)> = vec![
        ("uniform", uniform_unit(2, [0.0, 2.0]), vec![1.0, 1.0]),
        (
            "truncated-exponential",
            (0..2)
                .map(|i| {
                    adv(
                        i,
                        CostDistribution::truncated_exponential(0.0, 1.0, 1.5).unwrap(),
                        ConversionCurve::exponential(0.5, [0.0, 3.0]).unwrap(),
                    )
                })
                .collect(),
            vec![1.5, 1.5],
        ),
        (
            "ironed-mixture",
            (0..2)
                .map(|i| adv(i, overlap_mixture(), ConversionCurve::constant(1.0, [0.0, 2.0]).unwrap()).ironed(10_001).unwrap())
                .collect(),
            vec![1.2, 1.2],
        ),
    ];
    let mut ok = true;
    let mut notes = Vec::new();
    for (name, advs, prices) in &fixtures {
        for spec in [MechanismSpec::wm_rp(), MechanismSpec::vwm_rp()] {
            let r = revenue_equivalence_check(&spec, advs, prices, 400_000, 404).unwrap();
            ok &= r.pass;
            notes.push(format!("{name}/{} |diff| {:.2e} <= {:.2e}", spec.family.label(), r.max_violation, r.tolerance));
        }
    }
    (ok, notes.join("; "))
}

fn criterion_5() -> Verdict {
    let mut notes = Vec::new();
    let unimodal: Vec<_> = (0..3)
        .map(|i| adv(i, CostDistribution::uniform(0.0, 0.5).unwrap(), ConversionCurve::unimodal([0.0, 4.0]).unwrap()))
        .collect();
    let grid = PriceGrid::for_domain(&unimodal[0].conversion, 2001).unwrap();
    let bar = pi_prices(&unimodal);
    let mut ok = bar.iter().all(|p| (p - 1.0).abs() <= grid.step());
    let pia = MechanismSpec::vwm_pia(bar.clone());
    for cost in [0.05, 0.25, 0.45] {
        let q = BestResponseQuery {
            target: 0,
            cost,
            candidate_price: bar[0],
            grid,
            opponents: OpponentPrices::Equilibrium,
            samples: 20_000,
            seed: 505,
        };
        let r = best_response_check(&pia, &unimodal, &q).unwrap();
        ok &= r.pass;
        notes.push(format!("vwm-pia c={cost} p={} max gain {:.1e}", bar[0], r.max_gain));
    }

    let exp = exponential_market(2);
    let grid = PriceGrid::for_domain(&exp[0].conversion, 2001).unwrap();
    let table = RateTable::new(&exp[0].conversion, &grid).unwrap();
    let symmetric = AmaParams::new(vec![1.2, 1.2], vec![-0.05, -0.05]).unwrap();
    for spec in [MechanismSpec::wm_rp(), MechanismSpec::ama(symmetric.clone())] {
        for cost in [0.1, 0.4, 0.8] {
            let p = table.ama_price(cost);
            ok &= (p - (cost + 1.0)).abs() <= grid.step();
            let q = BestResponseQuery {
                target: 1,
                cost,
                candidate_price: p,
                grid,
                opponents: OpponentPrices::Equilibrium,
                samples: 20_000,
                seed: 506,
            };
            let r = best_response_check(&spec, &exp, &q).unwrap();
            ok &= r.pass;
            notes.push(format!("{} c={cost} p={p:.4} max gain {:.1e}", spec.family.label(), r.max_gain));
        }
    }
    let d = dominance_check(&MechanismSpec::ama(symmetric), &exp, 0, &grid, 100_000, 507).unwrap();
    ok &= d.positive_gain_samples == 0 && d.samples == 100_000;
    notes.push(format!("ama dominance: {} positive-gain samples of {}", d.positive_gain_samples, d.samples));
    (ok, notes.join("; "))
}

fn criterion_6() -> Verdict {
    let gap = gap_mixture();
    let regular = regularity_check(&gap, 10_001).unwrap();
    let t = iron(&gap, 10_001).unwrap();
    let (lo, hi) = (gap.lower(), gap.upper());
    let zetas: Vec<f64> = (0..10_001).map(|k| t.zeta(lo + (hi - lo) * k as f64 / 10_000.0)).collect();
    let monotone = zetas.windows(2).all(|w| w[1] >= w[0]) && (1..t.grid_size()).all(|k| t.node_value(k) >= t.node_value(k - 1));
    let mut ok = !regular.regular && monotone;
    let mut notes = vec![format!("gap mixture regular: {}; ironed zeta monotone on 10001 points: {monotone}", regular.regular)];
    for (name, dist) in [("gap", gap), ("overlap", overlap_mixture())] {
        let advs: Vec<_> = (0..2)
            .map(|i| adv(i, dist.clone(), ConversionCurve::constant(1.0, [0.0, 2.0]).unwrap()).ironed(10_001).unwrap())
            .collect();
        let r = suite(&MechanismSpec::vwm_rp(), &advs, &CheckConfig::new(1_000, 606, PriceMode::Random));
        ok &= r.iter().all(|x| x.pass);
        notes.push(format!("ironed vwm-rp on {name} mixture [{}]", summary(&r)));
    }
    (ok, notes.join("; "))
}

fn criterion_7() -> Verdict {
    let market = mixed_market();
    let identity = AmaParams::identity(market.len());
    let mut same = 0;
    for s in 0..10_000u64 {
        let mut r = rng::stream(707, tag::INSTANCES, s);
        let profile: Vec<Report> = market
            .iter()
            .map(|a| {
                let c = a.distribution.sample(&mut r);
                let [lo, hi] = a.conversion.price_domain;
                Report::new(c, r.gen_range(lo..=hi))
            })
            .collect();
        let ama = mechanisms::run_ama(&profile, &market, &identity).unwrap();
        same += usize::from(ama == mechanisms::run_wm_rp(&profile, &market).unwrap());
    }
    let flat = uniform_unit(2, [0.0, 1.0]);
    let boosts: Vec<f64> = (0..=20).map(|k| -1.0 + 0.05 * k as f64).collect();
    let search = ama_search(&flat, &[1.0], &boosts, 100_000, 708, 2001).unwrap();
    let se = search.revenue.se_or_zero();
    let rev = search.revenue.mean;
    let ok = same == 10_000 && rev >= 0.40 && rev >= 1.0 / 3.0 - 2.0 * se;
    (
        ok,
        format!(
            "identity matches wm-rp on {same}/10000 profiles; best boosts {:?} revenue {rev:.5} (se {se:.1e}, reference 5/12 = {:.5})",
            search.best.boosts,
            5.0 / 12.0
        ),
    )
}

fn criterion_8() -> Verdict {
    let fixture = |name: &str| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name).display().to_string();
    let (wm, vwm, ama, pia) = (fixture("wm_rp.toml"), fixture("vwm_rp.toml"), fixture("exp_ama.toml"), fixture("unimodal_pia.toml"));
    let commands: Vec<Vec<&str>> = vec![
        vec!["run", &wm],
        vec!["run", &pia, "--format", "csv"],
        vec!["verify", &vwm, "--instances", "100"],
        vec!["equilibrium", &ama, "--samples", "5000"],
        vec!["optimize", &ama],
        vec!["compare", &wm, &vwm, &ama, "--format", "csv"],
    ];
    let mut ok = true;
    for args in &commands {
        let outputs: Vec<_> = ["1", "4", "1", "3"]
            .iter()
            .map(|w| {
                Command::new(env!("CARGO_BIN_EXE_adlab"))
                    .args(args)
                    .args(["--workers", w])
                    .output()
                    .expect("binary runs")
            })
            .collect();
        ok &= outputs.iter().all(|o| o.stdout == outputs[0].stdout && o.status.code() == outputs[0].status.code())
            && !outputs[0].stdout.is_empty();
    }
    (ok, format!("{} commands x 4 runs (workers 1, 4, 1, 3) byte-identical: {ok}", commands.len()))
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("characterization suite", criterion_1),
        ("welfare maximizer efficiency", criterion_2),
        ("revenue constants", criterion_3),
        ("revenue equivalence", criterion_4),
        ("equilibrium verification", criterion_5),
        ("ironing", criterion_6),
        ("affine maximizer identity and search", criterion_7),
        ("determinism", criterion_8),
    ];
    let mut failures = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        let (pass, detail) = run();
        failures += usize::from(!pass);
        println!("criterion {} {name}: {} ({detail})", k + 1, if pass { "PASS" } else { "FAIL" });
    }
    println!("acceptance: {} of {} criteria pass", criteria.len() - failures, criteria.len());
    if failures > 0 {
        std::process::exit(1);
    }
}
