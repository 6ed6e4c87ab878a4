//! Scenario configuration, the slotted simulation loop, metric aggregation,
//! parameter sweeps and model evaluation.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use nsca_gbdt::{GbdtModel, GbdtParams, TrainReport};
use serde::{Deserialize, Serialize};

use crate::allocation::{
    calibrate_threshold, fb_allocate, ml_nsca_reallocate, oracle_allocate, pp_step, Calibration,
    MlPolicy, PpDecision, Strategy, StrategyKind,
};
use crate::dataset::{generate_dataset, Dataset, DatasetConfig, GenerationStats};
use crate::error::{Error, Result};
use crate::features::{FeatureSchema, FeatureSubset};
use crate::network::{build_topology, Channel, LinkId, Network, TopologySpec};
use crate::physics::{QkdParams, SkrEvaluator};
use crate::seed::derive_seed;
use crate::traffic::{provision, Provision, RequestTrace, TrafficGenerator, TrafficParams};

/// Slots simulated after warm-up when the load is zero and the request
/// budget can never be reached.
const IDLE_RUN_SLOTS: usize = 100;

/// Named topology or path to a topology TOML file.
pub fn load_topology(name: &str) -> Result<TopologySpec> {
    match name {
        "4-node" | "four-node" | "ring4" => Ok(TopologySpec::four_node()),
        "6-node" | "six-node" => Ok(TopologySpec::six_node()),
        "nsfnet" | "14-node" => Ok(TopologySpec::nsfnet()),
        path => TopologySpec::load(path),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    /// `4-node`, `6-node`, `nsfnet` or a topology file.
    pub topology: String,
    /// Overrides every span length when set.
    pub link_length_km: Option<f64>,
    pub traffic: TrafficParams,
    pub qkd: QkdParams,
    /// Physics constants file; takes precedence over `qkd`.
    pub qkd_file: Option<PathBuf>,
    pub strategies: Vec<StrategyKind>,
    /// Reallocation period TS in slots.
    pub window: u32,
    /// Requests offered after warm-up in each repetition.
    pub n_requests: usize,
    pub n_repetitions: usize,
    pub warmup_slots: u64,
    pub qch_count: usize,
    /// Fixed threshold; when absent it is calibrated against the learned
    /// policy's reallocation count.
    pub pp_threshold_bps: Option<f64>,
    pub model: Option<PathBuf>,
    pub subset: FeatureSubset,
    pub seed: u64,
    pub record_trace: bool,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            topology: "4-node".into(),
            link_length_km: None,
            traffic: TrafficParams::default(),
            qkd: QkdParams::default(),
            qkd_file: None,
            strategies: vec![StrategyKind::Fb, StrategyKind::Pp, StrategyKind::MlNsca],
            window: 10,
            n_requests: 1000,
            n_repetitions: 20,
            warmup_slots: 50,
            qch_count: 1,
            pp_threshold_bps: None,
            model: None,
            subset: FeatureSubset::S4,
            seed: 1,
            record_trace: false,
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_requests == 0 || self.n_repetitions == 0 {
            return Err(Error::Param("n_requests and n_repetitions must be at least 1".into()));
        }
        if self.window == 0 {
            return Err(Error::Param("window must be at least 1".into()));
        }
        if self.qch_count == 0 {
            return Err(Error::Param("qch_count must be at least 1".into()));
        }
        if let Some(l) = self.link_length_km {
            if !(l > 0.0 && l.is_finite()) {
                return Err(Error::Param(format!("link length {l}")));
            }
        }
        for p in [&self.qkd_file, &self.model].into_iter().flatten() {
            if !p.exists() {
                return Err(Error::Param(format!("file not found: {}", p.display())));
            }
        }
        if self.pp_threshold_bps.is_some_and(|t| !(t >= 0.0)) {
            return Err(Error::Param("pp threshold must be non-negative".into()));
        }
        self.traffic.validate()?;
        self.qkd.validate()
    }
}

/// A resolved scenario: network template, physics and optional model.
pub struct Scenario {
    pub config: ScenarioConfig,
    pub network: Network,
    pub qkd: QkdParams,
    pub evaluator: Arc<SkrEvaluator>,
    pub policy: Option<MlPolicy>,
}

impl Scenario {
    /// Resolves files named in the config (topology, physics, model).
    pub fn from_config(config: ScenarioConfig) -> Result<Self> {
        config.validate()?;
        let policy = match &config.model {
            Some(p) => Some(MlPolicy::new(Arc::new(nsca_gbdt::io::load(p)?), config.subset)),
            None => None,
        };
        Self::build(config, policy)
    }

    /// Like [`Scenario::from_config`] but with an already loaded policy
    /// (`config.model` is ignored).
    pub fn build(mut config: ScenarioConfig, policy: Option<MlPolicy>) -> Result<Self> {
        config.model = None;
        config.validate()?;
        let mut spec = load_topology(&config.topology)?;
        if let Some(l) = config.link_length_km {
            spec = spec.with_uniform_length(l);
        }
        let network = build_topology(&spec)?;
        let qkd = match &config.qkd_file {
            Some(p) => QkdParams::load(p)?,
            None => config.qkd.clone(),
        };
        if config.qch_count >= network.channels() {
            return Err(Error::Param(format!(
                "qch_count {} leaves no channel for data",
                config.qch_count
            )));
        }
        if let Some(p) = &policy {
            p.check(network.topology())?;
        }
        let evaluator = Arc::new(SkrEvaluator::new(network.topology(), &qkd));
        Ok(Scenario {
            config,
            network,
            qkd,
            evaluator,
            policy,
        })
    }

    pub fn strategy(&self, kind: StrategyKind, pp_threshold_bps: Option<f64>) -> Result<Strategy> {
        let window = self.config.window;
        let s = match kind {
            StrategyKind::Fb => Strategy::Fb,
            StrategyKind::Pp => Strategy::Pp {
                threshold_bps: pp_threshold_bps
                    .or(self.config.pp_threshold_bps)
                    .ok_or_else(|| Error::Param("pp needs a threshold or a calibration target".into()))?,
            },
            StrategyKind::MlNsca => Strategy::MlNsca {
                policy: self
                    .policy
                    .clone()
                    .ok_or_else(|| Error::Param("ml-nsca needs a model".into()))?,
                window,
            },
            StrategyKind::Oracle => Strategy::Oracle { window },
        };
        s.validate(self.network.topology())?;
        Ok(s)
    }

    /// Request trace of repetition `rep`: warm-up slots followed by slots
    /// until `n_requests` further requests have been offered.
    pub fn trace(&self, rep: u64) -> Result<RequestTrace> {
        let params = TrafficParams {
            seed: derive_seed(self.config.seed, &[rep]),
            ..self.config.traffic.clone()
        };
        let nodes = self.network.topology().nodes();
        let mut gen = TrafficGenerator::new(&params, nodes)?;
        let warm = self.config.warmup_slots;
        let mut slots: Vec<Vec<_>> = (0..warm).map(|t| gen.arrivals(t)).collect();
        if params.arrival_rate() == 0.0 {
            slots.resize_with(warm as usize + IDLE_RUN_SLOTS, Vec::new);
            return Ok(RequestTrace::new(0, slots));
        }
        let mut offered = 0;
        let mut t = warm;
        while offered < self.config.n_requests {
            let mut batch = gen.arrivals(t);
            batch.truncate(self.config.n_requests - offered);
            offered += batch.len();
            slots.push(batch);
            t += 1;
        }
        Ok(RequestTrace::new(0, slots))
    }

    pub fn run_repetition(&self, strategy: &Strategy, rep: u64) -> Result<RepMetrics> {
        let trace = self.trace(rep)?;
        simulate(
            &self.network,
            &self.evaluator,
            strategy,
            &trace,
            &SimOptions {
                load_erlang: self.config.traffic.load_erlang,
                warmup_slots: self.config.warmup_slots,
                qch_count: self.config.qch_count,
                record_trace: self.config.record_trace,
            },
            rep,
        )
    }

    pub fn run(&self, strategy: &Strategy) -> Result<RunMetrics> {
        let started = Instant::now();
        let reps = (0..self.config.n_repetitions as u64)
            .map(|r| self.run_repetition(strategy, r))
            .collect::<Result<Vec<_>>>()?;
        Ok(RunMetrics::aggregate(
            strategy.kind(),
            &self.network,
            reps,
            started.elapsed().as_secs_f64(),
        ))
    }

    /// Largest key rate any quantum channel can reach (empty network).
    pub fn max_skr_bps(&self) -> f64 {
        self.network
            .topology()
            .mux_links()
            .map(|l| self.evaluator.link_skr(&self.network, l, Channel(1)))
            .fold(0.0, f64::max)
    }

    /// Threshold giving the requested total reallocation count over all
    /// repetitions, within 5%.
    pub fn calibrate_pp(&self, target: u64) -> Result<Calibration> {
        let upper = self.max_skr_bps() * 1.01 + 1.0;
        calibrate_threshold(
            |theta| Ok(self.run(&Strategy::Pp { threshold_bps: theta })?.total_reallocations),
            target,
            upper,
            0.05,
            40,
        )
    }

    /// Runs every configured strategy on the same request traces. Without a
    /// fixed threshold, PP is calibrated to the learned policy's (or, if that
    /// is absent, the oracle's) reallocation count.
    pub fn compare(&self) -> Result<Vec<(RunMetrics, Option<Calibration>)>> {
        let mut kinds = self.config.strategies.clone();
        kinds.sort();
        kinds.dedup();
        let mut out: Vec<(RunMetrics, Option<Calibration>)> = Vec::new();
        for &k in kinds.iter().filter(|&&k| k != StrategyKind::Pp) {
            out.push((self.run(&self.strategy(k, None)?)?, None));
        }
        if kinds.contains(&StrategyKind::Pp) {
            let (threshold, cal) = match self.config.pp_threshold_bps {
                Some(t) => (t, None),
                None => {
                    let reference = out
                        .iter()
                        .find(|(m, _)| m.strategy == StrategyKind::MlNsca)
                        .or_else(|| out.iter().find(|(m, _)| m.strategy == StrategyKind::Oracle))
                        .ok_or_else(|| {
                            Error::Param("pp needs pp_threshold_bps or ml-nsca/oracle to calibrate against".into())
                        })?;
                    let cal = self.calibrate_pp(reference.0.total_reallocations)?;
                    (cal.threshold_bps, Some(cal))
                }
            };
            out.push((self.run(&self.strategy(StrategyKind::Pp, Some(threshold))?)?, cal));
        }
        out.sort_by_key(|(m, _)| m.strategy);
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOptions {
    pub load_erlang: f64,
    pub warmup_slots: u64,
    pub qch_count: usize,
    pub record_trace: bool,
}

/// Metrics of one repetition; only slots after warm-up are counted.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RepMetrics {
    pub repetition: u64,
    /// Mean over measured slots and MUX links of the per-link key rate.
    pub mean_skr_bps: f64,
    pub per_link_skr_bps: Vec<f64>,
    pub offered: u64,
    pub blocked: u64,
    pub reallocations: u64,
    /// Reallocation events that found no free channel.
    pub suspended: u64,
    pub slots: u64,
    pub skr_trace: Option<Vec<f64>>,
}

impl RepMetrics {
    pub fn blocking(&self) -> f64 {
        if self.offered == 0 {
            0.0
        } else {
            self.blocked as f64 / self.offered as f64
        }
    }
}

/// One run of the slotted loop: expiry, arrivals, key-rate sampling, then
/// the strategy step whose decisions take effect from the next slot.
pub fn simulate(
    template: &Network,
    evaluator: &SkrEvaluator,
    strategy: &Strategy,
    trace: &RequestTrace,
    opts: &SimOptions,
    repetition: u64,
) -> Result<RepMetrics> {
    strategy.validate(template.topology())?;
    let mut net = template.clone();
    fb_allocate(&mut net, opts.qch_count)?;
    let mux: Vec<LinkId> = net.topology().mux_links().collect();
    let mut per_link = vec![0.0; mux.len()];
    let mut m = RepMetrics {
        repetition,
        mean_skr_bps: 0.0,
        per_link_skr_bps: Vec::new(),
        offered: 0,
        blocked: 0,
        reallocations: 0,
        suspended: 0,
        slots: 0,
        skr_trace: opts.record_trace.then(Vec::new),
    };
    for t in 0..trace.end() {
        if t > 0 {
            net.advance_timeslot();
        }
        let measured = t >= opts.warmup_slots;
        for r in trace.slot(t) {
            let outcome = provision(&mut net, r);
            if measured {
                m.offered += 1;
                if outcome == Provision::Blocked {
                    m.blocked += 1;
                }
            }
        }
        if measured {
            let mut slot_total = 0.0;
            for (i, &l) in mux.iter().enumerate() {
                let r: f64 = net
                    .quantum_channels(l)
                    .into_iter()
                    .map(|q| evaluator.link_skr(&net, l, q))
                    .sum();
                per_link[i] += r;
                slot_total += r;
            }
            if let Some(tr) = &mut m.skr_trace {
                tr.push(slot_total / mux.len() as f64);
            }
            m.slots += 1;
        }
        match strategy {
            Strategy::Fb => {}
            Strategy::Pp { threshold_bps } => {
                for &l in &mux {
                    for q in net.quantum_channels(l) {
                        if let PpDecision::Reallocate(c) = pp_step(&net, l, q, *threshold_bps, evaluator)? {
                            net.release_quantum(l, q)?;
                            net.place_quantum(l, c)?;
                            if measured {
                                m.reallocations += 1;
                            }
                        }
                    }
                }
            }
            Strategy::MlNsca { policy, window } => {
                if t % *window as u64 == 0 {
                    for &l in &mux {
                        let chosen = ml_nsca_reallocate(&mut net, l, policy, opts.load_erlang, *window, opts.qch_count)?;
                        if measured {
                            m.reallocations += 1;
                            m.suspended += chosen.is_empty() as u64;
                        }
                    }
                }
            }
            Strategy::Oracle { window } => {
                if t % *window as u64 == 0 {
                    let future = trace.window(t + 1, *window as usize);
                    for &l in &mux {
                        let chosen = oracle_allocate(&mut net, l, &future, evaluator, opts.qch_count)?;
                        if measured {
                            m.reallocations += 1;
                            m.suspended += chosen.is_empty() as u64;
                        }
                    }
                }
            }
        }
    }
    let slots = m.slots.max(1) as f64;
    m.per_link_skr_bps = per_link.iter().map(|s| s / slots).collect();
    m.mean_skr_bps = per_link.iter().sum::<f64>() / slots / mux.len().max(1) as f64;
    Ok(m)
}

/// Aggregate over repetitions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunMetrics {
    pub strategy: StrategyKind,
    /// Mean of the per-repetition means.
    pub mean_skr_bps: f64,
    /// Half-width of the normal-approximation 95% interval.
    pub ci95_bps: f64,
    pub per_link_skr_bps: Vec<(usize, f64)>,
    pub blocking: f64,
    pub reallocations_per_run: f64,
    pub total_reallocations: u64,
    pub suspended: u64,
    pub wall_clock_s: f64,
    pub repetitions: Vec<RepMetrics>,
}

impl RunMetrics {
    pub fn aggregate(strategy: StrategyKind, network: &Network, reps: Vec<RepMetrics>, wall_clock_s: f64) -> Self {
        let n = reps.len().max(1) as f64;
        let means: Vec<f64> = reps.iter().map(|r| r.mean_skr_bps).collect();
        let (mean, ci) = mean_ci95(&means);
        let mux: Vec<LinkId> = network.topology().mux_links().collect();
        let per_link = mux
            .iter()
            .enumerate()
            .map(|(i, l)| (l.0, reps.iter().map(|r| r.per_link_skr_bps[i]).sum::<f64>() / n))
            .collect();
        let offered: u64 = reps.iter().map(|r| r.offered).sum();
        let blocked: u64 = reps.iter().map(|r| r.blocked).sum();
        let total_reallocations = reps.iter().map(|r| r.reallocations).sum();
        RunMetrics {
            strategy,
            mean_skr_bps: mean,
            ci95_bps: ci,
            per_link_skr_bps: per_link,
            blocking: if offered == 0 { 0.0 } else { blocked as f64 / offered as f64 },
            reallocations_per_run: total_reallocations as f64 / n,
            total_reallocations,
            suspended: reps.iter().map(|r| r.suspended).sum(),
            wall_clock_s,
            repetitions: reps,
        }
    }

    pub fn interval(&self) -> (f64, f64) {
        (self.mean_skr_bps - self.ci95_bps, self.mean_skr_bps + self.ci95_bps)
    }
}

/// Sample mean and 1.96 standard errors.
pub fn mean_ci95(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, 1.96 * (var / n).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepAxis {
    Tl,
    Ts,
    LinkLength,
    QchCount,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            Self::Tl => "tl",
            Self::Ts => "ts",
            Self::LinkLength => "link_length",
            Self::QchCount => "qch_count",
        }
    }

    fn apply(self, cfg: &mut ScenarioConfig, value: f64) -> Result<()> {
        let whole = |v: f64| -> Result<usize> {
            if v >= 1.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(Error::Param(format!("{} must be a positive integer, got {v}", self.name())))
            }
        };
        match self {
            Self::Tl => cfg.traffic.load_erlang = value,
            Self::Ts => cfg.window = whole(value)? as u32,
            Self::LinkLength => cfg.link_length_km = Some(value),
            Self::QchCount => cfg.qch_count = whole(value)?,
        }
        Ok(())
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "tl" => Ok(Self::Tl),
            "ts" => Ok(Self::Ts),
            "link_length" | "length" => Ok(Self::LinkLength),
            "qch_count" | "qchs" => Ok(Self::QchCount),
            _ => Err(Error::Parse(format!("unknown sweep axis {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub axis: SweepAxis,
    pub value: f64,
    pub metrics: RunMetrics,
    pub pp_threshold_bps: Option<f64>,
}

pub const SWEEP_HEADER: &str =
    "axis,value,strategy,mean_skr_bps,ci95_bps,blocking,reallocations_per_run,pp_threshold_bps";

/// One comparison per axis value; every strategy at a point shares the
/// same request traces.
pub fn sweep(
    base: &ScenarioConfig,
    policy: Option<MlPolicy>,
    axis: SweepAxis,
    values: &[f64],
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for &v in values {
        let mut cfg = base.clone();
        axis.apply(&mut cfg, v)?;
        let scenario = Scenario::build(cfg, policy.clone())?;
        for (metrics, cal) in scenario.compare()? {
            let pp_threshold_bps = (metrics.strategy == StrategyKind::Pp)
                .then(|| cal.map(|c| c.threshold_bps).or(scenario.config.pp_threshold_bps))
                .flatten();
            rows.push(SweepRow {
                axis,
                value: v,
                metrics,
                pp_threshold_bps,
            });
        }
    }
    Ok(rows)
}

pub fn write_sweep_csv<W: Write>(mut out: W, rows: &[SweepRow]) -> Result<()> {
    writeln!(out, "{SWEEP_HEADER}")?;
    for r in rows {
        let m = &r.metrics;
        writeln!(
            out,
            "{},{},{},{:.6},{:.6},{:.6},{:.3},{}",
            r.axis,
            r.value,
            m.strategy,
            m.mean_skr_bps,
            m.ci95_bps,
            m.blocking,
            m.reallocations_per_run,
            r.pp_threshold_bps.map(|t| format!("{t:.6}")).unwrap_or_default()
        )?;
    }
    Ok(())
}

/// Dataset generation settings as read from a TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetJob {
    pub topology: String,
    pub link_length_km: Option<f64>,
    pub qkd: QkdParams,
    pub qkd_file: Option<PathBuf>,
    /// Minimum number of rows; generation stops after the event that
    /// reaches it.
    pub rows: usize,
    pub dataset: DatasetConfig,
}

impl Default for DatasetJob {
    fn default() -> Self {
        DatasetJob {
            topology: "4-node".into(),
            link_length_km: None,
            qkd: QkdParams::default(),
            qkd_file: None,
            rows: 100_000,
            dataset: DatasetConfig::default(),
        }
    }
}

impl DatasetJob {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(toml::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn network(&self) -> Result<Network> {
        let mut spec = load_topology(&self.topology)?;
        if let Some(l) = self.link_length_km {
            spec = spec.with_uniform_length(l);
        }
        build_topology(&spec)
    }

    pub fn physics(&self) -> Result<QkdParams> {
        match &self.qkd_file {
            Some(p) => QkdParams::load(p),
            None => Ok(self.qkd.clone()),
        }
    }

    pub fn run(&self) -> Result<(Dataset, GenerationStats)> {
        if self.rows == 0 {
            return Err(Error::Param("rows must be at least 1".into()));
        }
        generate_dataset(&self.network()?, &self.physics()?, &self.dataset, self.rows)
    }
}

/// Trains a model on `data` and stamps it with the dataset's schema.
pub fn train_model(data: &Dataset, params: &GbdtParams) -> Result<(GbdtModel, TrainReport)> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (model, report) = nsca_gbdt::train(&data.to_train_set()?, params)?;
    Ok((model.with_fingerprint(data.schema.fingerprint()), report))
}

/// Events are split by the gap between the two highest labels.
pub const GROUP_BOUNDS: [f64; 3] = [0.2, 0.4, 0.6];

/// Group index (0..4) for a top-two label gap: `< 0.2`, `[0.2, 0.4)`,
/// `[0.4, 0.6]`, `> 0.6`.
pub fn gap_group(gap: f64) -> usize {
    const EPS: f64 = 1e-9;
    if gap < GROUP_BOUNDS[0] - EPS {
        0
    } else if gap < GROUP_BOUNDS[1] - EPS {
        1
    } else if gap <= GROUP_BOUNDS[2] + EPS {
        2
    } else {
        3
    }
}

/// Index of the largest value; ties to the first.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Gap between the largest and second-largest value (second is 0 when
/// there is only one).
pub fn top_gap(xs: &[f64]) -> f64 {
    let mut sorted = xs.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    sorted[0] - sorted.get(1).copied().unwrap_or(0.0)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct GroupStat {
    pub events: usize,
    pub coincident: usize,
}

impl GroupStat {
    pub fn rate(&self) -> f64 {
        if self.events == 0 {
            f64::NAN
        } else {
            self.coincident as f64 / self.events as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelEvaluation {
    pub rmse: f64,
    pub rows: usize,
    pub events: usize,
    pub coincident: usize,
    pub groups: [GroupStat; 4],
}

impl ModelEvaluation {
    pub fn coincident_rate(&self) -> f64 {
        self.coincident as f64 / self.events as f64
    }

    pub fn group_fractions(&self) -> [f64; 4] {
        self.groups.map(|g| g.events as f64 / self.events as f64)
    }
}

/// RMSE over rows and per-group agreement between the predicted and the
/// labelled best channel of each event.
pub fn evaluate_model(model: &GbdtModel, data: &Dataset) -> Result<ModelEvaluation> {
    evaluate_predictor(data, |x| model.predict_with_schema(data.schema.fingerprint(), x).map_err(Error::from))
}

/// [`evaluate_model`] for any predictor.
pub fn evaluate_predictor<F>(data: &Dataset, mut predict: F) -> Result<ModelEvaluation>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut sq = 0.0;
    let mut eval = ModelEvaluation {
        rmse: 0.0,
        rows: data.len(),
        events: 0,
        coincident: 0,
        groups: [GroupStat::default(); 4],
    };
    for ev in data.events() {
        let labels: Vec<f64> = ev.iter().map(|r| r.p_opt).collect();
        let preds = ev
            .iter()
            .map(|r| predict(&r.features))
            .collect::<Result<Vec<f64>>>()?;
        for (p, y) in preds.iter().zip(&labels) {
            sq += (p - y) * (p - y);
        }
        let hit = argmax(&preds) == argmax(&labels);
        let g = &mut eval.groups[gap_group(top_gap(&labels))];
        g.events += 1;
        eval.events += 1;
        if hit {
            g.coincident += 1;
            eval.coincident += 1;
        }
    }
    eval.rmse = (sq / data.len() as f64).sqrt();
    Ok(eval)
}

/// Schema check helper for the CLI.
pub fn schema_for(network: &Network, subset: FeatureSubset) -> FeatureSchema {
    FeatureSchema::new(network.topology(), subset)
}
