//! The `adlab` command line: `run`, `verify`, `equilibrium`, `optimize` and
//! `compare` over TOML scenario files.
//!
//! Exit status is 0 on success, 1 when a check fails or the computation
//! errors, and 2 when the input is rejected.

pub mod report;
pub mod scenario;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use crate::equilibrium::{self, BestResponseQuery, BestResponseReport, OpponentPrices, PriceGrid, RateTable};
use crate::error::Error;
use crate::optimizer;
use crate::simulation::{self, PriceMode};
use crate::verification::{self, Check, CheckConfig, CheckReport};
use report::{number, opt_number, Table};
use scenario::{Diagnostic, LoadedScenario, Overrides};

#[derive(Debug, Parser)]
#[command(name = "adlab", version, about = "Single-slot ad auctions with display prices")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Estimate expected revenue, welfare and sale probability.
    Run {
        file: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run property checks against the scenario's mechanism.
    Verify {
        file: PathBuf,
        /// Comma-separated subset of ic, ir, wbb, mono, payment, efrp, ef, rev-eq.
        #[arg(long, default_value = "all")]
        checks: String,
        #[arg(long)]
        instances: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Equilibrium price tables and best-response tests.
    Equilibrium {
        file: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Grid search over affine-maximizer weights and boosts.
    Optimize {
        file: PathBuf,
        /// `w=LIST;b=LIST`, where a list is `x,y,...` or `start:stop:step`.
        #[arg(long)]
        grid: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Run several scenarios, sharing cost draws where the advertisers match.
    Compare {
        #[arg(required = true)]
        files: Vec<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Format {
    Json,
    Csv,
}

#[derive(Debug, Args)]
struct Common {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    workers: Option<usize>,
}

impl Common {
    fn overrides(&self, instances: Option<usize>) -> Overrides {
        Overrides { samples: self.samples, seed: self.seed, instances }
    }
}

/// Why a command stopped early.
enum Failure {
    Rejected(String),
    Runtime(String),
}

impl From<Diagnostic> for Failure {
    fn from(d: Diagnostic) -> Self {
        Failure::Rejected(d.to_string())
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Input(_) | Error::Parameter(_) | Error::NotApplicable(_) => Failure::Rejected(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

/// A finished command: the rendered report and whether every verdict passed.
struct Output {
    text: String,
    pass: bool,
}

fn emit(command: &str, format: Format, config: &Value, result: &impl Serialize, table: Table, pass: bool) -> Result<Output, Failure> {
    let text = match format {
        Format::Json => report::json_report(command, config, result)?,
        Format::Csv => table.render(command, config)?,
    };
    Ok(Output { text, pass })
}

fn with_format(mut config: Value, format: Format) -> Value {
    if let Value::Object(map) = &mut config {
        map.insert("format".into(), json!(format));
    }
    config
}

fn scenario_config(loaded: &LoadedScenario, format: Format) -> Result<Value, Failure> {
    Ok(with_format(json!({ "scenario": report::to_value(&loaded.config)? }), format))
}

fn cmd_run(file: PathBuf, common: &Common) -> Result<Output, Failure> {
    let loaded = scenario::load(&file, common.overrides(None))?;
    let config = scenario_config(&loaded, common.format)?;
    let stats = simulation::run_experiment(&loaded.scenario)?;
    let mut table = Table::new(vec!["metric", "mean", "std_error"]);
    for (name, e) in [
        ("expected_revenue", stats.expected_revenue),
        ("expected_welfare", stats.expected_welfare),
        ("sale_probability", stats.sale_probability),
    ] {
        table.push(vec![name.into(), number(e.mean), opt_number(e.std_error)]);
    }
    for (i, f) in stats.win_frequencies.iter().enumerate() {
        table.push(vec![format!("win_frequency[{i}]"), number(*f), String::new()]);
    }
    emit("run", common.format, &config, &stats, table, true)
}

fn parse_checks(list: &str) -> Result<(Vec<Check>, bool), Failure> {
    if list.trim() == "all" {
        return Ok((Check::ALL.to_vec(), true));
    }
    let mut checks = Vec::new();
    for name in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let c: Check = name.parse().map_err(|e: Error| Failure::Rejected(e.to_string()))?;
        if !checks.contains(&c) {
            checks.push(c);
        }
    }
    if checks.is_empty() {
        return Err(Failure::Rejected("--checks names no check".into()));
    }
    Ok((checks, false))
}

#[derive(Serialize)]
struct Skipped {
    check: Check,
    reason: String,
}

#[derive(Serialize)]
struct VerifyResult {
    pass: bool,
    verdicts: Vec<CheckReport>,
    skipped: Vec<Skipped>,
}

fn cmd_verify(file: PathBuf, checks: &str, instances: Option<usize>, common: &Common) -> Result<Output, Failure> {
    let (checks, all) = parse_checks(checks)?;
    let loaded = scenario::load(&file, common.overrides(instances))?;
    let s = &loaded.scenario;
    let v = loaded.config.verification;
    let cfg = CheckConfig {
        instances: v.instances,
        deviation_grid: v.deviation_grid,
        cost_grid: v.cost_grid,
        samples: s.samples,
        seed: s.seed,
        price_mode: s.price_mode.clone(),
        price_grid: s.price_grid,
    };
    let mut config = scenario_config(&loaded, common.format)?;
    config["checks"] = json!(checks);
    config["check_config"] = report::to_value(&cfg)?;

    let mut verdicts = Vec::new();
    let mut skipped = Vec::new();
    for check in checks {
        match verification::run_check(check, &s.mechanism, &s.advertisers, &cfg) {
            Ok(r) => verdicts.push(r),
            Err(Error::NotApplicable(reason)) if all => skipped.push(Skipped { check, reason }),
            Err(e) => return Err(e.into()),
        }
    }
    let pass = verdicts.iter().all(|r| r.pass);
    let mut table = Table::new(vec![
        "check",
        "verdict",
        "instances",
        "max_violation",
        "tolerance",
        "violating_instances",
        "worst_instance",
    ]);
    for r in &verdicts {
        table.push(vec![
            r.check.name().into(),
            if r.pass { "PASS" } else { "FAIL" }.into(),
            r.instances.to_string(),
            number(r.max_violation),
            number(r.tolerance),
            r.violating_instances.to_string(),
            r.worst_instance.map(|i| i.to_string()).unwrap_or_default(),
        ]);
    }
    for k in &skipped {
        table.push(vec![k.check.name().into(), "SKIPPED".into(), String::new(), String::new(), String::new(), String::new(), String::new()]);
    }
    let result = VerifyResult { pass, verdicts, skipped };
    emit("verify", common.format, &config, &result, table, pass)
}

pub const EQUILIBRIUM_COST_POINTS: usize = 11;

#[derive(Serialize)]
struct PricePoint {
    advertiser: usize,
    cost: f64,
    price: f64,
}

#[derive(Serialize)]
struct EquilibriumResult {
    pass: bool,
    /// Price-independent equilibrium price, one per advertiser.
    pi_prices: Vec<f64>,
    /// Cost-dependent equilibrium price on an evenly spaced cost grid.
    ama_prices: Vec<PricePoint>,
    best_response: Vec<BestResponseReport>,
}

fn cmd_equilibrium(file: PathBuf, common: &Common) -> Result<Output, Failure> {
    let loaded = scenario::load(&file, common.overrides(None))?;
    let s = &loaded.scenario;
    if !matches!(s.price_mode, PriceMode::PiEquilibrium | PriceMode::AmaEquilibrium) {
        return Err(Failure::Rejected(format!(
            "{}: price_mode.kind: equilibrium needs pi-equilibrium or ama-equilibrium, not {}",
            loaded.config.file,
            s.price_mode.label()
        )));
    }
    let mut config = scenario_config(&loaded, common.format)?;
    config["cost_points"] = json!(EQUILIBRIUM_COST_POINTS);

    let mut pi_prices = Vec::new();
    let mut ama_prices = Vec::new();
    let mut best_response = Vec::new();
    for a in &s.advertisers {
        let grid = PriceGrid::for_domain(&a.conversion, s.price_grid)?;
        let rates = RateTable::new(&a.conversion, &grid)?;
        pi_prices.push(rates.pi_price());
        let (lo, hi) = (a.distribution.lower(), a.distribution.upper());
        for k in 0..EQUILIBRIUM_COST_POINTS {
            let cost = lo + (hi - lo) * k as f64 / (EQUILIBRIUM_COST_POINTS - 1) as f64;
            ama_prices.push(PricePoint { advertiser: a.index, cost, price: rates.ama_price(cost) });
        }
        let cost = 0.5 * (lo + hi);
        let candidate_price = match s.price_mode {
            PriceMode::PiEquilibrium => s.mechanism.pia_prices.as_ref().map_or(rates.pi_price(), |p| p[a.index]),
            _ => rates.ama_price(cost),
        };
        let query = BestResponseQuery {
            target: a.index,
            cost,
            candidate_price,
            grid,
            opponents: OpponentPrices::Equilibrium,
            samples: s.samples,
            seed: s.seed,
        };
        best_response.push(equilibrium::best_response_check(&s.mechanism, &s.advertisers, &query)?);
    }
    let pass = best_response.iter().all(|r| r.pass);

    let mut table = Table::new(vec!["table", "advertiser", "cost", "price", "max_gain", "verdict"]);
    for (i, p) in pi_prices.iter().enumerate() {
        table.push(vec!["pi-price".into(), i.to_string(), String::new(), number(*p), String::new(), String::new()]);
    }
    for p in &ama_prices {
        table.push(vec!["ama-price".into(), p.advertiser.to_string(), number(p.cost), number(p.price), String::new(), String::new()]);
    }
    for r in &best_response {
        table.push(vec![
            "best-response".into(),
            r.advertiser.to_string(),
            number(r.cost),
            number(r.candidate_price),
            number(r.max_gain),
            if r.pass { "PASS" } else { "FAIL" }.into(),
        ]);
    }
    let result = EquilibriumResult { pass, pi_prices, ama_prices, best_response };
    emit("equilibrium", common.format, &config, &result, table, pass)
}

/// Parses `start:stop:step` (inclusive) or a comma-separated list.
fn parse_list(text: &str) -> Result<Vec<f64>, String> {
    let num = |s: &str| s.trim().parse::<f64>().map_err(|_| format!("'{}' is not a number", s.trim()));
    let parts: Vec<&str> = text.split(':').collect();
    match parts.as_slice() {
        [start, stop, step] => {
            let (start, stop, step) = (num(start)?, num(stop)?, num(step)?);
            if !(step > 0.0 && step.is_finite() && start.is_finite() && stop.is_finite() && stop >= start) {
                return Err(format!("range {text} needs finite start <= stop and a positive step"));
            }
            let count = ((stop - start) / step + 1e-9).floor() as usize;
            if count > 100_000 {
                return Err(format!("range {text} has too many points"));
            }
            Ok((0..=count).map(|k| start + step * k as f64).collect())
        }
        [_] => text.split(',').map(num).collect(),
        _ => Err(format!("'{text}' is neither a list nor start:stop:step")),
    }
}

/// Parses `w=LIST;b=LIST`; either part may be omitted (defaults `w=1`, `b=0`).
pub fn parse_grid(spec: &str) -> Result<(Vec<f64>, Vec<f64>), String> {
    let mut weights = vec![1.0];
    let mut boosts = vec![0.0];
    for part in spec.split(';').map(str::trim).filter(|p| !p.is_empty()) {
        let (key, list) = part.split_once('=').ok_or_else(|| format!("grid part '{part}' lacks '='"))?;
        let values = parse_list(list)?;
        match key.trim() {
            "w" => weights = values,
            "b" => boosts = values,
            other => return Err(format!("unknown grid axis '{other}' (expected w or b)")),
        }
    }
    Ok((weights, boosts))
}

pub const DEFAULT_GRID: &str = "w=1;b=0";

fn cmd_optimize(file: PathBuf, grid: Option<String>, common: &Common) -> Result<Output, Failure> {
    let loaded = scenario::load(&file, common.overrides(None))?;
    let s = &loaded.scenario;
    let grid = grid.or_else(|| loaded.config.optimize_grid.clone()).unwrap_or_else(|| DEFAULT_GRID.into());
    let (weights, boosts) = parse_grid(&grid).map_err(|e| Failure::Rejected(format!("--grid: {e}")))?;
    let mut config = scenario_config(&loaded, common.format)?;
    config["grid"] = json!(grid);
    config["weights"] = report::to_value(&weights)?;
    config["boosts"] = report::to_value(&boosts)?;

    let search = optimizer::ama_search(&s.advertisers, &weights, &boosts, s.samples, s.seed, s.price_grid)?;
    let join = |v: &[f64]| v.iter().map(|x| number(*x)).collect::<Vec<_>>().join(";");
    let mut table = Table::new(vec!["stage", "weights", "boosts", "revenue", "std_error"]);
    for e in &search.evaluations {
        let stage = match e.stage {
            optimizer::Stage::Grid => "grid",
            optimizer::Stage::Refinement => "refinement",
        };
        table.push(vec![stage.into(), join(&e.params.weights), join(&e.params.boosts), number(e.revenue.mean), opt_number(e.revenue.std_error)]);
    }
    table.push(vec![
        "best".into(),
        join(&search.best.weights),
        join(&search.best.boosts),
        number(search.revenue.mean),
        opt_number(search.revenue.std_error),
    ]);
    emit("optimize", common.format, &config, &search, table, true)
}

fn cmd_compare(files: Vec<PathBuf>, common: &Common) -> Result<Output, Failure> {
    let loaded = files
        .iter()
        .map(|f| scenario::load(f, common.overrides(None)))
        .collect::<Result<Vec<_>, _>>()?;
    let configs = loaded.iter().map(|l| report::to_value(&l.config)).collect::<Result<Vec<_>, _>>()?;
    let config = with_format(json!({ "scenarios": configs }), common.format);
    let scenarios: Vec<_> = loaded.into_iter().map(|l| l.scenario).collect();
    let comparison = simulation::compare(&scenarios)?;
    let mut table = Table::new(vec![
        "name",
        "family",
        "seed",
        "common_draws",
        "expected_revenue",
        "revenue_std_error",
        "expected_welfare",
        "welfare_std_error",
        "sale_probability",
        "sale_probability_std_error",
    ]);
    for r in &comparison.rows {
        let st = &r.stats;
        table.push(vec![
            r.name.clone(),
            r.family.clone(),
            r.seed.to_string(),
            r.common_draws.to_string(),
            number(st.expected_revenue.mean),
            opt_number(st.expected_revenue.std_error),
            number(st.expected_welfare.mean),
            opt_number(st.expected_welfare.std_error),
            number(st.sale_probability.mean),
            opt_number(st.sale_probability.std_error),
        ]);
    }
    if let Some(w) = &comparison.warning {
        eprintln!("warning: {w}");
    }
    emit("compare", common.format, &config, &comparison, table, true)
}

fn dispatch(command: Command) -> (Result<Output, Failure>, Option<PathBuf>) {
    match command {
        Command::Run { file, common } => (cmd_run(file, &common), common.out),
        Command::Verify { file, checks, instances, common } => (cmd_verify(file, &checks, instances, &common), common.out),
        Command::Equilibrium { file, common } => (cmd_equilibrium(file, &common), common.out),
        Command::Optimize { file, grid, common } => (cmd_optimize(file, grid, &common), common.out),
        Command::Compare { files, common } => (cmd_compare(files, &common), common.out),
    }
}

fn workers(command: &Command) -> Option<usize> {
    match command {
        Command::Run { common, .. }
        | Command::Verify { common, .. }
        | Command::Equilibrium { common, .. }
        | Command::Optimize { common, .. }
        | Command::Compare { common, .. } => common.workers,
    }
}

/// Parses `args` (program name first), runs the command and returns the exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let threads = workers(&cli.command);
    let (result, out) = match threads {
        Some(0) => {
            eprintln!("error: --workers must be at least 1");
            return 2;
        }
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| dispatch(cli.command)),
            Err(e) => {
                eprintln!("error: cannot start {n} workers: {e}");
                return 1;
            }
        },
        None => dispatch(cli.command),
    };
    match result {
        Ok(output) => {
            let written = match &out {
                Some(path) => std::fs::write(path, &output.text).map_err(|e| format!("cannot write {}: {e}", path.display())),
                None => {
                    print!("{}", output.text);
                    Ok(())
                }
            };
            match written {
                Err(e) => {
                    eprintln!("error: {e}");
                    1
                }
                Ok(()) if output.pass => 0,
                Ok(()) => 1,
            }
        }
        Err(Failure::Rejected(msg)) => {
            eprintln!("error: {msg}");
            2
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            1
        }
    }
}
