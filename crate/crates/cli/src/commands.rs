use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use flexclear_core::auction::{run_auction, AuctionError};
use flexclear_core::bounds::{bounds_report, permutation_oracle, BoundSense, BoundsError, BoundsOptions, BoundsReport};
use flexclear_core::casegen::{
    format_table, generate_instance, run_scenarios, CaseConfig, CaseKind, CaseSummary, CasegenError, Stats,
};
use flexclear_core::continuous::{run_sequence, EngineError};
use flexclear_core::model::{apply_trades, BidId, BidSet, BlockId, Instance, MarketOutcome, Setpoint, Submission};
use flexclear_core::powerflow::compute_ptdf;
use serde::{Deserialize, Serialize};

use crate::error::CliError;
use crate::io::{load_instance, sha256_hex, write_atomic, write_csv, write_instance, write_json, RunManifest};
use crate::{Mode, SenseArg};

const SEED_VAR: &str = "FLEXCLEAR_SEED";

fn env_seed() -> Result<Option<u64>, CliError> {
    match std::env::var(SEED_VAR) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CliError::Config(format!("{SEED_VAR}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

fn from_casegen(e: CasegenError) -> CliError {
    match e {
        CasegenError::Config(m) => CliError::Config(m),
        CasegenError::Auction(e) => from_auction(e),
        CasegenError::Engine(e) => from_engine(e),
        other => CliError::Other(other.to_string()),
    }
}

fn from_auction(e: AuctionError) -> CliError {
    match e {
        AuctionError::IterationLimit { .. } => CliError::SolverLimit(e.to_string()),
        AuctionError::Invalid(_) | AuctionError::Model(_) => CliError::Validation(e.to_string()),
        other => CliError::Other(other.to_string()),
    }
}

fn from_engine(e: EngineError) -> CliError {
    match e {
        EngineError::Solver(_) | EngineError::Powerflow(_) => CliError::Other(e.to_string()),
        other => CliError::Validation(other.to_string()),
    }
}

fn from_bounds(e: BoundsError) -> CliError {
    match e {
        BoundsError::TooManyOffers { units, max } => CliError::TooLarge(format!(
            "{units} offer-side units; exact sequence bounds support at most {max}. \
             Reduce the instance or sample arrival orders with `compare`."
        )),
        BoundsError::Invalid(m) => CliError::Validation(m),
        BoundsError::Auction(e) => from_auction(e),
        BoundsError::Engine(e) => from_engine(e),
        other => CliError::Other(other.to_string()),
    }
}

pub fn generate(config: Option<&Path>, out: &Path) -> Result<(), CliError> {
    let start = Instant::now();
    let mut manifest = RunManifest::new("generate");
    let mut cfg = match config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            manifest.inputs.insert("config".into(), sha256_hex(text.as_bytes()));
            CaseConfig::from_toml(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        }
        None => CaseConfig::default(),
    };
    if let Some(seed) = env_seed()? {
        cfg.seed = seed;
    }
    let instance = generate_instance(&cfg).map_err(from_casegen)?;
    write_instance(out, &instance)?;
    manifest.config_hash = Some(sha256_hex(&serde_json::to_vec(&cfg).expect("config serialises")));
    manifest.seed = Some(cfg.seed);
    manifest.time("total", start.elapsed());
    manifest.write(out)
}

#[derive(Deserialize)]
#[serde(untagged)]
enum SequenceFile {
    Plain(Vec<u32>),
    Versioned { schema_version: u32, order: Vec<u32> },
}

fn read_sequence(path: &Path, bids: &BidSet) -> Result<(Vec<Submission>, String), CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    let file: SequenceFile =
        serde_json::from_slice(&bytes).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    let ids = match file {
        SequenceFile::Plain(ids) => ids,
        SequenceFile::Versioned { schema_version, order } if schema_version == crate::io::SCHEMA_VERSION => order,
        SequenceFile::Versioned { schema_version, .. } => {
            return Err(CliError::Validation(format!("unsupported schema_version {schema_version}")))
        }
    };
    let order = ids
        .into_iter()
        .map(|raw| {
            bids.resolve(raw)
                .ok_or_else(|| CliError::Validation(format!("sequence names unknown id {raw}")))
        })
        .collect::<Result<_, _>>()?;
    Ok((order, sha256_hex(&bytes)))
}

#[derive(Serialize)]
struct TradeRow {
    request: u32,
    offer: u32,
    block: Option<u32>,
    period: usize,
    direction: String,
    quantity: f64,
    clearing_price: f64,
    match_round: u64,
}

#[derive(Serialize)]
struct FlowRow {
    period: usize,
    line: usize,
    from: u32,
    to: u32,
    initial_flow: f64,
    flow: f64,
    limit: f64,
    /// Excess over max(limit, |initial flow|).
    violation: f64,
}

#[derive(Serialize)]
struct OutcomeDoc<'a> {
    mode: &'static str,
    social_welfare: f64,
    volume: f64,
    trades: usize,
    accepted: &'a BTreeMap<BidId, f64>,
    block_acceptance: &'a BTreeMap<BlockId, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    unmatched_blocks: Option<Vec<BlockId>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    milp_nodes: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    active_line_cuts: Option<usize>,
}

fn flow_rows(instance: &Instance, final_setpoint: &Setpoint) -> Result<Vec<FlowRow>, CliError> {
    let ptdf = compute_ptdf(&instance.network).map_err(|e| CliError::Validation(e.to_string()))?;
    let mut rows = Vec::new();
    for (t, (before, after)) in instance.setpoint.injection.iter().zip(&final_setpoint.injection).enumerate() {
        let f0 = ptdf.flows(before);
        let f1 = ptdf.flows(after);
        for (l, line) in instance.network.lines.iter().enumerate() {
            let cap = line.limit.max(f0[l].abs());
            rows.push(FlowRow {
                period: t,
                line: l,
                from: line.from.0,
                to: line.to.0,
                initial_flow: f0[l],
                flow: f1[l],
                limit: line.limit,
                violation: (f1[l].abs() - cap).max(0.0),
            });
        }
    }
    Ok(rows)
}

fn write_outcome(out: &Path, instance: &Instance, outcome: &MarketOutcome, final_setpoint: &Setpoint, doc: OutcomeDoc<'_>) -> Result<(), CliError> {
    let trades: Vec<TradeRow> = outcome
        .trades
        .iter()
        .map(|t| TradeRow {
            request: t.request.0,
            offer: t.offer.0,
            block: t.block.map(|k| k.0),
            period: t.period,
            direction: t.direction.to_string(),
            quantity: t.quantity,
            clearing_price: t.clearing_price,
            match_round: t.match_round,
        })
        .collect();
    write_csv(
        &out.join("trades.csv"),
        &trades,
        &["request", "offer", "block", "period", "direction", "quantity", "clearing_price", "match_round"],
    )?;
    write_csv(
        &out.join("flows.csv"),
        &flow_rows(instance, final_setpoint)?,
        &["period", "line", "from", "to", "initial_flow", "flow", "limit", "violation"],
    )?;
    write_json(&out.join("outcome.json"), &doc)
}

pub fn clear(mode: Mode, dir: &Path, sequence: Option<&Path>, out: &Path) -> Result<(), CliError> {
    let start = Instant::now();
    let mut manifest = RunManifest::new(match mode {
        Mode::Continuous => "clear continuous",
        Mode::Auction => "clear auction",
    });
    let (instance, inputs) = load_instance(dir)?;
    manifest.inputs = inputs;
    let ptdf = compute_ptdf(&instance.network).map_err(|e| CliError::Validation(e.to_string()))?;
    let Instance {
        network,
        setpoint,
        bids,
    } = &instance;
    match mode {
        Mode::Continuous => {
            let order = match sequence {
                Some(path) => {
                    let (order, sum) = read_sequence(path, bids)?;
                    manifest.inputs.insert("sequence".into(), sum);
                    order
                }
                None => bids.submissions_by_arrival(),
            };
            let run = run_sequence(network, &ptdf, setpoint, bids, &order).map_err(from_engine)?;
            manifest.time("clear", start.elapsed());
            let o = &run.outcome;
            let doc = OutcomeDoc {
                mode: "continuous",
                social_welfare: o.social_welfare,
                volume: o.volume,
                trades: o.trades.len(),
                accepted: &o.accepted,
                block_acceptance: &o.block_acceptance,
                unmatched_blocks: Some(run.unmatched_blocks.clone()),
                milp_nodes: None,
                active_line_cuts: None,
            };
            write_outcome(out, &instance, o, &run.final_setpoint, doc)?;
        }
        Mode::Auction => {
            if sequence.is_some() {
                log::warn!("auction clearing does not depend on arrival order; ignoring the sequence file");
            }
            let res = run_auction(network, &ptdf, setpoint, bids).map_err(from_auction)?;
            manifest.time("clear", start.elapsed());
            let o = &res.outcome;
            let after = apply_trades(network, setpoint, bids, &o.trades).map_err(|e| CliError::Other(e.to_string()))?;
            let doc = OutcomeDoc {
                mode: "auction",
                social_welfare: o.social_welfare,
                volume: o.volume,
                trades: o.trades.len(),
                accepted: &o.accepted,
                block_acceptance: &o.block_acceptance,
                unmatched_blocks: None,
                milp_nodes: Some(res.nodes),
                active_line_cuts: Some(res.active_cuts),
            };
            write_outcome(out, &instance, o, &after, doc)?;
        }
    }
    manifest.time("total", start.elapsed());
    manifest.write(out)
}

#[derive(Serialize)]
struct ScenarioCsvRow {
    case: &'static str,
    scenario: u64,
    welfare: f64,
    volume: f64,
    auction_welfare: f64,
    auction_volume: f64,
    welfare_pct: Option<f64>,
    volume_pct: Option<f64>,
}

#[derive(Serialize)]
struct CaseDoc {
    case: &'static str,
    auction_welfare: f64,
    auction_volume: f64,
    welfare_pct: Option<Stats>,
    volume_pct: Option<Stats>,
}

#[derive(Serialize)]
struct CompareDoc {
    seed: u64,
    scenarios: u64,
    cases: Vec<CaseDoc>,
}

pub fn compare(dir: &Path, scenarios: u64, seed: Option<u64>, out: &Path) -> Result<(), CliError> {
    let start = Instant::now();
    let mut manifest = RunManifest::new("compare");
    let (base, inputs) = load_instance(dir)?;
    manifest.inputs = inputs;
    let seed = match seed {
        Some(s) => s,
        None => env_seed()?.unwrap_or(42),
    };
    manifest.seed = Some(seed);
    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    let mut cases = Vec::new();
    for case in CaseKind::ALL {
        let table = run_scenarios(&case.apply(&base), scenarios, seed).map_err(from_casegen)?;
        let (aw, av) = table
            .rows
            .first()
            .map_or((0.0, 0.0), |r| (r.auction_welfare, r.auction_volume));
        rows.extend(table.rows.iter().map(|r| ScenarioCsvRow {
            case: case.label(),
            scenario: r.scenario,
            welfare: r.welfare,
            volume: r.volume,
            auction_welfare: r.auction_welfare,
            auction_volume: r.auction_volume,
            welfare_pct: r.welfare_pct,
            volume_pct: r.volume_pct,
        }));
        cases.push(CaseDoc {
            case: case.label(),
            auction_welfare: aw,
            auction_volume: av,
            welfare_pct: table.welfare,
            volume_pct: table.volume,
        });
        summaries.push(CaseSummary {
            case,
            welfare: table.welfare,
            volume: table.volume,
        });
    }
    manifest.time("scenarios", start.elapsed());
    write_csv(
        &out.join("scenarios.csv"),
        &rows,
        &["case", "scenario", "welfare", "volume", "auction_welfare", "auction_volume", "welfare_pct", "volume_pct"],
    )?;
    write_json(
        &out.join("summary.json"),
        &CompareDoc {
            seed,
            scenarios,
            cases,
        },
    )?;
    let table = format_table(&summaries);
    write_atomic(&out.join("table.txt"), table.as_bytes())?;
    print!("{table}");
    manifest.time("total", start.elapsed());
    manifest.write(out)
}

#[derive(Serialize)]
struct OracleSummary {
    min: f64,
    max: f64,
    argmin: Vec<Submission>,
    argmax: Vec<Submission>,
    orders: usize,
    /// Every oracle welfare lies inside the reported bounds.
    contained: bool,
}

#[derive(Serialize)]
struct BoundsDoc<'a> {
    report: &'a BoundsReport,
    oracle: Option<OracleSummary>,
}

#[derive(Serialize)]
struct OracleRow {
    order: String,
    welfare: f64,
}

fn contains(report: &BoundsReport, min: f64, max: f64) -> bool {
    const TOL: f64 = 1e-6;
    let lo = report.worst.as_ref().map_or(f64::NEG_INFINITY, |b| b.lower);
    let hi = report.best.as_ref().map_or(f64::INFINITY, |b| b.upper);
    lo <= min + TOL && max <= hi + TOL
}

pub fn bounds(dir: &Path, sense: SenseArg, oracle: bool, out: &Path) -> Result<(), CliError> {
    let start = Instant::now();
    let mut manifest = RunManifest::new("bounds");
    let (instance, inputs) = load_instance(dir)?;
    manifest.inputs = inputs;
    let senses: &[BoundSense] = match sense {
        SenseArg::Min => &[BoundSense::Worst],
        SenseArg::Max => &[BoundSense::Best],
        SenseArg::Both => &[BoundSense::Worst, BoundSense::Best],
    };
    let options = BoundsOptions::default();
    let ptdf = compute_ptdf(&instance.network).map_err(|e| CliError::Validation(e.to_string()))?;
    let report = bounds_report(&instance.network, &ptdf, &instance.setpoint, &instance.bids, senses, &options)
        .map_err(from_bounds)?;
    manifest.time("bounds", start.elapsed());
    let oracle = if oracle {
        let res = permutation_oracle(&instance.network, &ptdf, &instance.setpoint, &instance.bids, options.max_offers)
            .map_err(from_bounds)?;
        let rows: Vec<OracleRow> = res
            .table
            .iter()
            .map(|(order, w)| OracleRow {
                order: order.iter().map(|s| s.raw().to_string()).collect::<Vec<_>>().join(" "),
                welfare: *w,
            })
            .collect();
        write_csv(&out.join("oracle.csv"), &rows, &["order", "welfare"])?;
        Some(OracleSummary {
            contained: contains(&report, res.min, res.max),
            min: res.min,
            max: res.max,
            argmin: res.argmin,
            argmax: res.argmax,
            orders: res.table.len(),
        })
    } else {
        None
    };
    write_json(
        &out.join("bounds.json"),
        &BoundsDoc {
            report: &report,
            oracle,
        },
    )?;
    manifest.time("total", start.elapsed());
    manifest.write(out)?;
    let unproven = [&report.worst, &report.best].iter().any(|b| b.as_ref().is_some_and(|b| !b.proven));
    if unproven {
        return Err(CliError::SolverLimit(
            "node limit reached; bounds.json holds the proven interval".into(),
        ));
    }
    Ok(())
}
