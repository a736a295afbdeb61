//! Case-study instances: the 33-bus feeder, a daily setpoint from load and
//! generation profiles, requests derived from a shed/curtail DC-OPF, random offers
//! and block bids, and shuffled arrival scenarios.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::auction::{run_auction, AuctionError};
use crate::continuous::{run_sequence, EngineError};
use crate::model::{
    Bid, BidId, BidSet, BlockBid, BlockId, Direction, Instance, Line, Network, NodeId, Setpoint, Side, Submission,
};
use crate::optimize::{solve_lp, LinearProgram, RowBound, Sense, SolveStatus, SolverError, VarId};
use crate::powerflow::{compute_ptdf, PowerflowError, PtdfMatrix, FLOW_TOL};

const GRID_33: &str = include_str!("../../data/grid33.json");
const GRID_33_SHA256: &str = include_str!("../../data/grid33.sha256");
const PROFILES_24: &str = include_str!("../../data/profiles24.json");

/// Price grid step in €/kWh.
pub const PRICE_TICK: f64 = 0.001;
/// Weights of load shedding and generation curtailment in the request OPF.
pub const SHED_WEIGHT: f64 = 100.0;
pub const CURTAIL_WEIGHT: f64 = 1.0;
/// Largest uniform scaling tried when looking for an overloaded setpoint.
pub const MAX_SCALE: f64 = 10.0;

#[derive(Debug, Error)]
pub enum CasegenError {
    #[error("grid fixture checksum mismatch (expected {expected}, found {found})")]
    Checksum { expected: String, found: String },
    #[error("fixture is malformed: {0}")]
    Fixture(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("profiles cannot produce an overloaded setpoint within a scaling of {MAX_SCALE}x")]
    NoOverload,
    #[error("request OPF failed in period {period}: {status:?}")]
    Opf { period: usize, status: SolveStatus },
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Powerflow(#[from] PowerflowError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Auction(#[from] AuctionError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureLine {
    pub from: u32,
    pub to: u32,
    pub r_ohm: f64,
    pub x_ohm: f64,
    pub limit_kw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureLoad {
    pub node: u32,
    pub p_kw: f64,
    pub q_kvar: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GenKind {
    Pv,
    Wind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureGen {
    pub node: u32,
    pub kind: GenKind,
    pub capacity_kw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFixture {
    pub version: u32,
    pub name: String,
    pub base_kv: f64,
    pub base_mva: f64,
    pub reference: u32,
    pub lines: Vec<FixtureLine>,
    pub loads: Vec<FixtureLoad>,
    pub generators: Vec<FixtureGen>,
}

/// Per-unit daily shapes, one value per period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Profiles {
    pub load: Vec<f64>,
    pub pv: Vec<f64>,
    pub wind: Vec<f64>,
}

impl Profiles {
    pub fn periods(&self) -> usize {
        self.load.len()
    }

    fn generation(&self, kind: GenKind) -> &[f64] {
        match kind {
            GenKind::Pv => &self.pv,
            GenKind::Wind => &self.wind,
        }
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Parses a grid fixture after checking it against its SHA-256 digest.
pub fn load_grid_fixture(json: &str, sha256: &str) -> Result<GridFixture, CasegenError> {
    let found = sha256_hex(json.as_bytes());
    let expected = sha256.trim().to_lowercase();
    if found != expected {
        return Err(CasegenError::Checksum { expected, found });
    }
    serde_json::from_str(json).map_err(|e| CasegenError::Fixture(e.to_string()))
}

pub fn grid_33_fixture() -> Result<GridFixture, CasegenError> {
    load_grid_fixture(GRID_33, GRID_33_SHA256)
}

pub fn default_profiles() -> Profiles {
    #[derive(Deserialize)]
    struct File {
        load: Vec<f64>,
        pv: Vec<f64>,
        wind: Vec<f64>,
    }
    let f: File = serde_json::from_str(PROFILES_24).expect("shipped profiles parse");
    Profiles {
        load: f.load,
        pv: f.pv,
        wind: f.wind,
    }
}

impl GridFixture {
    /// Network with per-unit susceptances on the fixture's voltage and power base.
    pub fn network(&self) -> Result<Network, CasegenError> {
        let z_base = self.base_kv * self.base_kv / self.base_mva;
        let mut nodes: Vec<u32> = self.lines.iter().flat_map(|l| [l.from, l.to]).collect();
        nodes.push(self.reference);
        nodes.sort_unstable();
        nodes.dedup();
        let lines = self
            .lines
            .iter()
            .map(|l| {
                if !(l.x_ohm > 0.0) {
                    return Err(CasegenError::Fixture(format!("line {}-{} has no reactance", l.from, l.to)));
                }
                Ok(Line {
                    from: NodeId(l.from),
                    to: NodeId(l.to),
                    susceptance: z_base / l.x_ohm,
                    limit: l.limit_kw,
                })
            })
            .collect::<Result<_, _>>()?;
        Ok(Network {
            nodes: nodes.into_iter().map(NodeId).collect(),
            lines,
            reference: NodeId(self.reference),
        })
    }
}

pub fn build_grid_33() -> Result<Network, CasegenError> {
    grid_33_fixture()?.network()
}

/// Nodal load and available generation per period, `[period][node]`, in kW.
#[derive(Debug, Clone, PartialEq)]
pub struct NodalProfile {
    pub load: Vec<Vec<f64>>,
    pub generation: Vec<Vec<f64>>,
}

pub fn nodal_profile(network: &Network, fixture: &GridFixture, profiles: &Profiles, scale: f64) -> Result<NodalProfile, CasegenError> {
    let periods = profiles.periods();
    if profiles.pv.len() != periods || profiles.wind.len() != periods {
        return Err(CasegenError::Fixture("profiles differ in length".into()));
    }
    let n = network.num_nodes();
    let mut load = vec![vec![0.0; n]; periods];
    let mut generation = vec![vec![0.0; n]; periods];
    let idx = |node: u32| {
        network
            .index_of(NodeId(node))
            .ok_or_else(|| CasegenError::Fixture(format!("node {node} is not in the grid")))
    };
    for l in &fixture.loads {
        let i = idx(l.node)?;
        for t in 0..periods {
            load[t][i] += scale * l.p_kw * profiles.load[t];
        }
    }
    for g in &fixture.generators {
        let i = idx(g.node)?;
        let shape = profiles.generation(g.kind);
        for t in 0..periods {
            generation[t][i] += scale * g.capacity_kw * shape[t];
        }
    }
    Ok(NodalProfile { load, generation })
}

fn balanced_setpoint(network: &Network, nodal: &NodalProfile) -> Setpoint {
    let r = network.reference_index().expect("reference node");
    let injection = nodal
        .load
        .iter()
        .zip(&nodal.generation)
        .map(|(l, g)| {
            let mut row: Vec<f64> = g.iter().zip(l).map(|(g, l)| g - l).collect();
            row[r] = 0.0;
            row[r] = -row.iter().sum::<f64>();
            row
        })
        .collect();
    Setpoint { injection }
}

fn has_overload(ptdf: &PtdfMatrix, network: &Network, setpoint: &Setpoint) -> bool {
    setpoint.injection.iter().any(|inj| {
        ptdf.flows(inj)
            .iter()
            .zip(&network.lines)
            .any(|(f, l)| f.abs() > l.limit + FLOW_TOL)
    })
}

/// Builds the balanced setpoint (generation positive, load negative, the reference
/// node balancing), scaling loads and generation uniformly until a line overloads.
pub fn build_setpoint(
    network: &Network,
    fixture: &GridFixture,
    profiles: &Profiles,
) -> Result<(Setpoint, NodalProfile), CasegenError> {
    let ptdf = compute_ptdf(network)?;
    let mut scale = 1.0;
    while scale <= MAX_SCALE + 1e-9 {
        let nodal = nodal_profile(network, fixture, profiles, scale)?;
        let setpoint = balanced_setpoint(network, &nodal);
        if has_overload(&ptdf, network, &setpoint) {
            return Ok((setpoint, nodal));
        }
        scale += 0.25;
    }
    Err(CasegenError::NoOverload)
}

/// Shed and curtailment per node that restore line limits in one period.
#[derive(Debug, Clone, PartialEq)]
pub struct Recourse {
    pub shed: Vec<f64>,
    pub curtail: Vec<f64>,
}

/// Cheapest shed/curtail recourse for one period under DC flow limits.
pub fn solve_recourse(
    network: &Network,
    ptdf: &PtdfMatrix,
    injection: &[f64],
    load: &[f64],
    generation: &[f64],
    period: usize,
) -> Result<Recourse, CasegenError> {
    let n = network.num_nodes();
    let r = network.reference_index().expect("reference node");
    let f0 = ptdf.flows(injection);
    let mut zero = Recourse {
        shed: vec![0.0; n],
        curtail: vec![0.0; n],
    };
    if f0.iter().zip(&network.lines).all(|(f, l)| f.abs() <= l.limit + FLOW_TOL) {
        return Ok(zero);
    }
    let mut lp = LinearProgram::new(Sense::Minimize);
    let mut shed: Vec<Option<VarId>> = vec![None; n];
    let mut curt: Vec<Option<VarId>> = vec![None; n];
    for i in (0..n).filter(|&i| i != r) {
        if load[i] > 0.0 {
            let v = lp.add_continuous(format!("shed_{i}"), 0.0, load[i]);
            lp.set_objective(v, SHED_WEIGHT);
            shed[i] = Some(v);
        }
        if generation[i] > 0.0 {
            let v = lp.add_continuous(format!("curtail_{i}"), 0.0, generation[i]);
            lp.set_objective(v, CURTAIL_WEIGHT);
            curt[i] = Some(v);
        }
    }
    for (l, line) in network.lines.iter().enumerate() {
        let mut terms = Vec::new();
        for i in 0..n {
            let k = ptdf.get(l, i);
            if k.abs() <= 1e-12 {
                continue;
            }
            if let Some(v) = shed[i] {
                terms.push((v, k));
            }
            if let Some(v) = curt[i] {
                terms.push((v, -k));
            }
        }
        if terms.is_empty() {
            continue;
        }
        lp.add_constraint(
            format!("line_{l}"),
            terms,
            RowBound::Range(-line.limit - f0[l], line.limit - f0[l]),
        );
    }
    let res = solve_lp(&lp)?;
    if res.status != SolveStatus::Optimal {
        return Err(CasegenError::Opf { period, status: res.status });
    }
    for i in 0..n {
        if let Some(v) = shed[i] {
            zero.shed[i] = res.value(v);
        }
        if let Some(v) = curt[i] {
            zero.curtail[i] = res.value(v);
        }
    }
    Ok(zero)
}

fn tick(price: f64) -> f64 {
    (price / PRICE_TICK).round() / PRICE_TICK.recip()
}

fn draw_price(rng: &mut impl Rng, range: [f64; 2]) -> f64 {
    if range[1] > range[0] {
        tick(rng.gen_range(range[0]..=range[1]))
    } else {
        tick(range[0])
    }
}

/// Case-study configuration. Prices in €/kWh, quantities in kWh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CaseConfig {
    pub seed: u64,
    pub periods: usize,
    pub up_request_price: [f64; 2],
    pub down_request_price: [f64; 2],
    pub offer_price: [f64; 2],
    pub block_price: [f64; 2],
    pub offers: usize,
    pub offer_quantity: [f64; 2],
    pub blocks: usize,
    /// Inclusive range of periods a block covers.
    pub block_span: [usize; 2],
    pub block_quantity: [f64; 2],
    pub scenarios: usize,
    pub with_blocks: bool,
    pub with_network_constraints: bool,
}

impl Default for CaseConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            periods: 24,
            up_request_price: [0.250, 0.300],
            down_request_price: [0.035, 0.045],
            offer_price: [0.030, 0.040],
            block_price: [0.020, 0.035],
            offers: 100,
            offer_quantity: [10.0, 100.0],
            blocks: 20,
            block_span: [2, 3],
            block_quantity: [10.0, 60.0],
            scenarios: 100,
            with_blocks: true,
            with_network_constraints: true,
        }
    }
}

impl CaseConfig {
    pub fn from_toml(text: &str) -> Result<Self, CasegenError> {
        let cfg: CaseConfig = toml::from_str(text).map_err(|e| CasegenError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CasegenError> {
        let bad = |field: &str, why: &str| Err(CasegenError::Config(format!("{field}: {why}")));
        for (field, r) in [
            ("up_request_price", self.up_request_price),
            ("down_request_price", self.down_request_price),
            ("offer_price", self.offer_price),
            ("block_price", self.block_price),
            ("offer_quantity", self.offer_quantity),
            ("block_quantity", self.block_quantity),
        ] {
            if !(r[0] <= r[1]) || r[0] < 0.0 || !r[1].is_finite() {
                return bad(field, "interval needs 0 <= lower <= upper");
            }
        }
        if self.offer_quantity[0] <= 0.0 || self.block_quantity[0] <= 0.0 {
            return bad("quantity", "quantities must be positive");
        }
        if self.periods == 0 {
            return bad("periods", "must be positive");
        }
        if self.block_span[0] < 2 || self.block_span[0] > self.block_span[1] {
            return bad("block_span", "needs 2 <= lower <= upper");
        }
        if self.blocks > 0 && self.block_span[1] > self.periods {
            return bad("block_span", "longer than the horizon");
        }
        Ok(())
    }
}

/// Requests from the recourse OPF: shed becomes an upward request at its node,
/// curtailment a downward request. Ids count up from `first_id`.
pub fn derive_requests(
    network: &Network,
    ptdf: &PtdfMatrix,
    setpoint: &Setpoint,
    nodal: &NodalProfile,
    config: &CaseConfig,
    rng: &mut impl Rng,
    first_id: u32,
) -> Result<Vec<Bid>, CasegenError> {
    let mut out = Vec::new();
    let mut id = first_id;
    for t in 0..setpoint.periods() {
        let rec = solve_recourse(network, ptdf, &setpoint.injection[t], &nodal.load[t], &nodal.generation[t], t)?;
        for (i, &node) in network.nodes.iter().enumerate() {
            for (q, direction, range) in [
                (rec.shed[i], Direction::Up, config.up_request_price),
                (rec.curtail[i], Direction::Down, config.down_request_price),
            ] {
                if q > 1e-6 {
                    out.push(Bid {
                        id: BidId(id),
                        side: Side::Request,
                        direction,
                        node,
                        period: t,
                        quantity: q,
                        price: draw_price(rng, range),
                        arrival_index: 0,
                        block_ref: None,
                    });
                    id += 1;
                }
            }
        }
    }
    Ok(out)
}

fn draw_quantity(rng: &mut impl Rng, range: [f64; 2]) -> f64 {
    let q = if range[1] > range[0] {
        rng.gen_range(range[0]..=range[1])
    } else {
        range[0]
    };
    ((q * 10.0).round() / 10.0).max(0.1)
}

/// Random single offers and block bids; ids count up from `first_id`.
pub fn generate_offers(config: &CaseConfig, network: &Network, rng: &mut impl Rng, first_id: u32) -> BidSet {
    let reference = network.reference;
    let nodes: Vec<NodeId> = network.nodes.iter().copied().filter(|&n| n != reference).collect();
    let mut id = first_id;
    let mut out = BidSet::default();
    for _ in 0..config.offers {
        let direction = if rng.gen_bool(0.5) { Direction::Up } else { Direction::Down };
        out.bids.push(Bid {
            id: BidId(id),
            side: Side::Offer,
            direction,
            node: *nodes.choose(rng).expect("grid has nodes"),
            period: rng.gen_range(0..config.periods),
            quantity: draw_quantity(rng, config.offer_quantity),
            price: draw_price(rng, config.offer_price),
            arrival_index: 0,
            block_ref: None,
        });
        id += 1;
    }
    for _ in 0..config.blocks {
        let span = rng.gen_range(config.block_span[0]..=config.block_span[1]);
        let start = rng.gen_range(0..=config.periods - span);
        let node = *nodes.choose(rng).expect("grid has nodes");
        let block_id = BlockId(id);
        id += 1;
        // Asymmetric rebound: both directions appear, in random order.
        let mut dirs: Vec<Direction> = (0..span)
            .map(|_| if rng.gen_bool(0.5) { Direction::Up } else { Direction::Down })
            .collect();
        if dirs.iter().all(|d| *d == dirs[0]) {
            let flip = rng.gen_range(0..span);
            dirs[flip] = match dirs[flip] {
                Direction::Up => Direction::Down,
                Direction::Down => Direction::Up,
            };
        }
        let mut subs = Vec::with_capacity(span);
        for (k, direction) in dirs.into_iter().enumerate() {
            out.bids.push(Bid {
                id: BidId(id),
                side: Side::Offer,
                direction,
                node,
                period: start + k,
                quantity: draw_quantity(rng, config.block_quantity),
                price: draw_price(rng, config.block_price),
                arrival_index: 0,
                block_ref: Some(block_id),
            });
            subs.push(BidId(id));
            id += 1;
        }
        out.blocks.push(BlockBid {
            id: block_id,
            node,
            sub_offers: subs,
            arrival_index: 0,
        });
    }
    out
}

/// Gives every submission unit its position in `units` as arrival index.
fn number_arrivals(bids: &BidSet) -> BidSet {
    let mut units: Vec<Submission> = bids
        .singles()
        .map(|b| Submission::Single(b.id))
        .chain(bids.blocks.iter().map(|k| Submission::Block(k.id)))
        .collect();
    units.sort_by_key(|u| u.raw());
    bids.with_arrival_order(&units)
}

/// Generates one base instance (with blocks and line limits, as configured).
pub fn generate_instance(config: &CaseConfig) -> Result<Instance, CasegenError> {
    config.validate()?;
    let fixture = grid_33_fixture()?;
    let network = fixture.network()?;
    let mut profiles = default_profiles();
    if config.periods != profiles.periods() {
        let resample = |v: &[f64]| (0..config.periods).map(|t| v[t * v.len() / config.periods]).collect();
        profiles = Profiles {
            load: resample(&profiles.load),
            pv: resample(&profiles.pv),
            wind: resample(&profiles.wind),
        };
    }
    let (setpoint, nodal) = build_setpoint(&network, &fixture, &profiles)?;
    let ptdf = compute_ptdf(&network)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let requests = derive_requests(&network, &ptdf, &setpoint, &nodal, config, &mut rng, 1)?;
    let first = requests.len() as u32 + 1;
    let mut bids = generate_offers(config, &network, &mut rng, first);
    bids.bids.splice(0..0, requests);
    let mut bids = number_arrivals(&bids);
    if !config.with_blocks {
        bids = bids.without_blocks();
    }
    let network = if config.with_network_constraints {
        network
    } else {
        network.without_limits()
    };
    Ok(Instance { network, setpoint, bids })
}

/// The four comparison cases of one base instance: single and block bids (BB) or
/// single bids only (SB), each with network constraints (NC) or without.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CaseKind {
    BlocksNetwork,
    SinglesNetwork,
    Blocks,
    Singles,
}

impl CaseKind {
    pub const ALL: [CaseKind; 4] = [
        CaseKind::BlocksNetwork,
        CaseKind::SinglesNetwork,
        CaseKind::Blocks,
        CaseKind::Singles,
    ];

    pub fn label(self) -> &'static str {
        match self {
            CaseKind::BlocksNetwork => "BB and NC",
            CaseKind::SinglesNetwork => "SB and NC",
            CaseKind::Blocks => "BB",
            CaseKind::Singles => "SB",
        }
    }

    pub fn with_blocks(self) -> bool {
        matches!(self, CaseKind::BlocksNetwork | CaseKind::Blocks)
    }

    pub fn with_network(self) -> bool {
        matches!(self, CaseKind::BlocksNetwork | CaseKind::SinglesNetwork)
    }

    /// Derives this case from a base instance that has blocks and line limits.
    pub fn apply(self, base: &Instance) -> Instance {
        Instance {
            network: if self.with_network() {
                base.network.clone()
            } else {
                base.network.without_limits()
            },
            setpoint: base.setpoint.clone(),
            bids: if self.with_blocks() {
                base.bids.clone()
            } else {
                base.bids.without_blocks()
            },
        }
    }
}

/// Uniformly shuffled submission order for scenario `k`; each scenario draws from
/// its own stream of the master seed.
pub fn scenario_order(bids: &BidSet, seed: u64, k: u64) -> Vec<Submission> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k);
    let mut units = bids.submissions_by_arrival();
    units.shuffle(&mut rng);
    units
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRow {
    pub scenario: u64,
    pub welfare: f64,
    pub volume: f64,
    pub auction_welfare: f64,
    pub auction_volume: f64,
    /// Continuous over auction, in percent; `None` when the auction value is zero.
    pub welfare_pct: Option<f64>,
    pub volume_pct: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub average: f64,
    pub max: f64,
    pub min: f64,
}

impl Stats {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Option<Stats> {
        let v: Vec<f64> = values.into_iter().collect();
        if v.is_empty() {
            return None;
        }
        Some(Stats {
            average: v.iter().sum::<f64>() / v.len() as f64,
            max: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            min: v.iter().copied().fold(f64::INFINITY, f64::min),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioTable {
    pub rows: Vec<ScenarioRow>,
    pub welfare: Option<Stats>,
    pub volume: Option<Stats>,
}

fn pct(a: f64, b: f64) -> Option<f64> {
    (b.abs() > 1e-9).then(|| 100.0 * a / b)
}

/// Runs the continuous engine on `n` shuffled arrival orders and the auction once.
pub fn run_scenarios(instance: &Instance, n: u64, seed: u64) -> Result<ScenarioTable, CasegenError> {
    let ptdf = compute_ptdf(&instance.network)?;
    let auction = run_auction(&instance.network, &ptdf, &instance.setpoint, &instance.bids)?;
    let (aw, av) = (auction.outcome.social_welfare, auction.outcome.volume);
    let rows = (0..n)
        .into_par_iter()
        .map(|k| {
            let order = scenario_order(&instance.bids, seed, k);
            let run = run_sequence(&instance.network, &ptdf, &instance.setpoint, &instance.bids, &order)?;
            let (w, v) = (run.outcome.social_welfare, run.outcome.volume);
            Ok(ScenarioRow {
                scenario: k,
                welfare: w,
                volume: v,
                auction_welfare: aw,
                auction_volume: av,
                welfare_pct: pct(w, aw),
                volume_pct: pct(v, av),
            })
        })
        .collect::<Result<Vec<_>, CasegenError>>()?;
    Ok(ScenarioTable {
        welfare: Stats::of(rows.iter().filter_map(|r| r.welfare_pct)),
        volume: Stats::of(rows.iter().filter_map(|r| r.volume_pct)),
        rows,
    })
}

/// Summary of one case for the comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseSummary {
    pub case: CaseKind,
    pub welfare: Option<Stats>,
    pub volume: Option<Stats>,
}

/// Four cases × {welfare, volume} × {Average, Max, Min}, in percent of the auction.
pub fn format_table(cases: &[CaseSummary]) -> String {
    let cell = |s: &Option<Stats>, f: fn(&Stats) -> f64| s.as_ref().map_or("n/a".to_string(), |s| format!("{:.1}%", f(s)));
    let mut out = String::from(
        "case       | welfare avg | welfare max | welfare min | volume avg | volume max | volume min\n",
    );
    for c in cases {
        out.push_str(&format!(
            "{:<10} | {:>11} | {:>11} | {:>11} | {:>10} | {:>10} | {:>10}\n",
            c.case.label(),
            cell(&c.welfare, |s| s.average),
            cell(&c.welfare, |s| s.max),
            cell(&c.welfare, |s| s.min),
            cell(&c.volume, |s| s.average),
            cell(&c.volume, |s| s.max),
            cell(&c.volume, |s| s.min),
        ));
    }
    out
}
