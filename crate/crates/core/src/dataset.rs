//! Monte-Carlo labelling of candidate quantum channels and training-set
//! generation.
//!
//! For one reallocation event the live network is cloned once per candidate
//! and per traffic draw; every candidate sees the same future requests. The
//! candidate with the best window-average key rate in a draw earns one vote
//! and `p_opt` is its vote share.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nsca_gbdt::TrainSet;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureExtractor, FeatureSchema, FeatureSubset};
use crate::network::{Channel, LinkId, Network};
use crate::physics::{QkdParams, SkrEvaluator};
use crate::seed::derive_seed;
use crate::traffic::{provision, RequestTrace, TrafficGenerator, TrafficParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct McConfig {
    pub n_sets: usize,
    pub window: u32,
    pub seed: u64,
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig {
            n_sets: 200,
            window: 10,
            seed: 0,
        }
    }
}

impl McConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_sets == 0 || self.window == 0 {
            return Err(Error::Param("n_sets and window must be at least 1".into()));
        }
        Ok(())
    }
}

/// Mean key rate of `link` over the `trace.len()` slots following the
/// snapshot, with the quantum channel placed on `candidate`. The snapshot's
/// other quantum channels stay where they are.
pub fn simulate_window(
    snapshot: &Network,
    link: LinkId,
    candidate: Channel,
    trace: &RequestTrace,
    evaluator: &SkrEvaluator,
) -> Result<f64> {
    let mut net = snapshot.clone();
    net.place_quantum(link, candidate)?;
    window_rate(&mut net, link, &[candidate], trace, evaluator)
}

pub(crate) fn window_rate(
    net: &mut Network,
    link: LinkId,
    qchs: &[Channel],
    trace: &RequestTrace,
    evaluator: &SkrEvaluator,
) -> Result<f64> {
    if trace.is_empty() {
        return Err(Error::Param("empty window".into()));
    }
    let mut total = 0.0;
    for s in 0..trace.len() as u64 {
        net.advance_timeslot();
        for r in trace.slot(trace.start() + s) {
            provision(net, r);
        }
        total += qchs.iter().map(|&q| evaluator.link_skr(net, link, q)).sum::<f64>();
    }
    Ok(total / trace.len() as f64)
}

/// Vote counts of one labelled event.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Label {
    pub candidates: Vec<Channel>,
    pub counts: Vec<u32>,
    pub n_sets: usize,
}

impl Label {
    pub fn p_opt(&self) -> Vec<f64> {
        self.counts
            .iter()
            .map(|&c| c as f64 / self.n_sets as f64)
            .collect()
    }

    /// Most voted candidate; ties resolve to the lowest channel index.
    pub fn best(&self) -> Channel {
        let mut best = 0;
        for (i, &c) in self.counts.iter().enumerate() {
            if c > self.counts[best] {
                best = i;
            }
        }
        self.candidates[best]
    }
}

/// Future traffic of draw `draw` for an event at `slot`.
pub fn draw_trace(
    traffic: &TrafficParams,
    nodes: usize,
    slot: u64,
    window: u32,
    seed: u64,
) -> Result<RequestTrace> {
    let params = TrafficParams {
        seed,
        ..traffic.clone()
    };
    RequestTrace::generate(&params, nodes, slot + 1, window as usize)
}

/// Labels every free channel of `link` in `snapshot` (the link's quantum
/// channel must already be released). `event_key` separates the random
/// streams of different events.
pub fn monte_carlo_label(
    snapshot: &Network,
    link: LinkId,
    mc: &McConfig,
    traffic: &TrafficParams,
    evaluator: &SkrEvaluator,
    event_key: u64,
) -> Result<Label> {
    mc.validate()?;
    let candidates = snapshot.available_channels(link)?;
    if candidates.is_empty() {
        return Err(Error::NoAvailableChannel(link));
    }
    let mut counts = vec![0u32; candidates.len()];
    if candidates.len() == 1 {
        counts[0] = mc.n_sets as u32;
        return Ok(Label {
            candidates,
            counts,
            n_sets: mc.n_sets,
        });
    }
    let nodes = snapshot.topology().nodes();
    let mut rates = vec![0.0; candidates.len()];
    for draw in 0..mc.n_sets as u64 {
        let seed = derive_seed(mc.seed, &[event_key, draw]);
        let trace = draw_trace(traffic, nodes, snapshot.timeslot(), mc.window, seed)?;
        for (r, &c) in rates.iter_mut().zip(&candidates) {
            *r = simulate_window(snapshot, link, c, &trace, evaluator)?;
        }
        let mut best = 0;
        for i in 1..rates.len() {
            if rates[i] > rates[best] {
                best = i;
            }
        }
        counts[best] += 1;
    }
    Ok(Label {
        candidates,
        counts,
        n_sets: mc.n_sets,
    })
}

/// Settings of a dataset-generation campaign over a mix of loads and
/// reallocation windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub subset: FeatureSubset,
    pub loads_erlang: Vec<f64>,
    pub windows: Vec<u32>,
    pub mean_holding_slots: f64,
    pub power_dbm_min: f64,
    pub power_dbm_max: f64,
    pub n_sets: usize,
    /// Slots simulated before the first labelled event of an episode.
    pub warmup_slots: u64,
    /// Reallocation instants per episode; every MUX link yields one event
    /// at each instant.
    pub instants_per_episode: usize,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            subset: FeatureSubset::S4,
            loads_erlang: vec![5.0, 10.0, 15.0, 20.0, 25.0, 30.0, 35.0, 40.0],
            windows: vec![2, 5, 10, 15, 20],
            mean_holding_slots: 10.0,
            power_dbm_min: -5.0,
            power_dbm_max: 5.0,
            n_sets: 200,
            warmup_slots: 50,
            instants_per_episode: 5,
            seed: 0,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.loads_erlang.is_empty() || self.windows.is_empty() {
            return Err(Error::Param("dataset needs at least one load and one window".into()));
        }
        if self.instants_per_episode == 0 {
            return Err(Error::Param("instants_per_episode must be at least 1".into()));
        }
        McConfig {
            n_sets: self.n_sets,
            window: *self.windows.iter().min().expect("non-empty"),
            seed: self.seed,
        }
        .validate()?;
        for &tl in &self.loads_erlang {
            self.traffic(tl, 0).validate()?;
        }
        Ok(())
    }

    fn traffic(&self, load: f64, seed: u64) -> TrafficParams {
        TrafficParams {
            load_erlang: load,
            mean_holding_slots: self.mean_holding_slots,
            power_dbm_min: self.power_dbm_min,
            power_dbm_max: self.power_dbm_max,
            seed,
        }
    }

    fn scenarios(&self) -> Vec<(f64, u32)> {
        let mut v = Vec::new();
        for &w in &self.windows {
            for &tl in &self.loads_erlang {
                v.push((tl, w));
            }
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub event_id: u64,
    pub features: Vec<f64>,
    pub p_opt: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub schema: FeatureSchema,
    pub rows: Vec<Row>,
}

/// Sidecar descriptor written next to a dataset CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub subset: FeatureSubset,
    pub n_features: usize,
    pub names: Vec<String>,
    pub fingerprint: String,
    pub rows: usize,
    pub events: usize,
}

impl Dataset {
    pub fn new(schema: FeatureSchema) -> Self {
        Dataset {
            schema,
            rows: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Rows grouped by event, in file order. Rows of one event are contiguous.
    pub fn events(&self) -> Vec<&[Row]> {
        let mut out = Vec::new();
        let mut start = 0;
        for i in 1..=self.rows.len() {
            if i == self.rows.len() || self.rows[i].event_id != self.rows[start].event_id {
                out.push(&self.rows[start..i]);
                start = i;
            }
        }
        out
    }

    pub fn event_count(&self) -> usize {
        self.events().len()
    }

    pub fn to_train_set(&self) -> Result<TrainSet> {
        let mut set = TrainSet::new(self.schema.len());
        for r in &self.rows {
            set.push(&r.features, r.p_opt)?;
        }
        Ok(set)
    }

    /// Splits whole events into two datasets; roughly `fraction` of the
    /// events (chosen by a seeded hash) go to the second one.
    pub fn split_events(&self, fraction: f64, seed: u64) -> (Dataset, Dataset) {
        let mut a = Dataset::new(self.schema.clone());
        let mut b = Dataset::new(self.schema.clone());
        for ev in self.events() {
            let u = derive_seed(seed, &[ev[0].event_id]) as f64 / u64::MAX as f64;
            let dst = if u < fraction { &mut b } else { &mut a };
            dst.rows.extend_from_slice(ev);
        }
        (a, b)
    }

    pub fn meta(&self) -> DatasetMeta {
        DatasetMeta {
            subset: self.schema.subset,
            n_features: self.schema.len(),
            names: self.schema.names.clone(),
            fingerprint: format!("{:016x}", self.schema.fingerprint()),
            rows: self.rows.len(),
            events: self.event_count(),
        }
    }

    pub fn meta_path(path: &Path) -> PathBuf {
        let mut s = path.as_os_str().to_owned();
        s.push(".meta.json");
        PathBuf::from(s)
    }

    /// Writes `event_id,<features...>,p_opt` plus the JSON sidecar.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = BufWriter::new(File::create(path)?);
        let mut line = String::from("event_id");
        for n in &self.schema.names {
            line.push(',');
            line.push_str(n);
        }
        line.push_str(",p_opt\n");
        w.write_all(line.as_bytes())?;
        for r in &self.rows {
            line.clear();
            line.push_str(&r.event_id.to_string());
            for v in &r.features {
                line.push(',');
                line.push_str(&format!("{v:?}"));
            }
            line.push(',');
            line.push_str(&format!("{:?}\n", r.p_opt));
            w.write_all(line.as_bytes())?;
        }
        w.flush()?;
        let meta = serde_json::to_string_pretty(&self.meta()).map_err(|e| Error::Parse(e.to_string()))?;
        std::fs::write(Self::meta_path(path), meta + "\n")?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        if header.len() < 3 || header[0] != "event_id" || header[header.len() - 1] != "p_opt" {
            return Err(Error::Schema("dataset header must be event_id,...,p_opt".into()));
        }
        let names = header[1..header.len() - 1].to_vec();
        let subset = infer_subset(&names)?;
        let schema = FeatureSchema { subset, names };
        let mut rows = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let num = |s: &str| -> Result<f64> {
                s.parse::<f64>()
                    .map_err(|_| Error::Parse(format!("row {}: bad number {s:?}", i + 1)))
            };
            let event_id = rec[0]
                .parse::<u64>()
                .map_err(|_| Error::Parse(format!("row {}: bad event id", i + 1)))?;
            let features = (1..rec.len() - 1)
                .map(|j| num(&rec[j]))
                .collect::<Result<Vec<f64>>>()?;
            let p_opt = num(&rec[rec.len() - 1])?;
            if !(0.0..=1.0).contains(&p_opt) {
                return Err(Error::Parse(format!("row {}: p_opt {p_opt} outside [0, 1]", i + 1)));
            }
            rows.push(Row {
                event_id,
                features,
                p_opt,
            });
        }
        Ok(Dataset { schema, rows })
    }
}

fn infer_subset(names: &[String]) -> Result<FeatureSubset> {
    let has = |p: &str| names.iter().any(|n| n.starts_with(p));
    let subset = if has("rht_l") {
        FeatureSubset::S1
    } else if has("nor_tl") {
        FeatureSubset::S4
    } else if has("rht_path") {
        FeatureSubset::S3
    } else {
        FeatureSubset::S2
    };
    if names.first().map(String::as_str) != Some("length_km")
        || names.last().map(String::as_str) != Some("candidate")
    {
        return Err(Error::Schema("unrecognised feature columns".into()));
    }
    Ok(subset)
}

/// Summary of one generation run.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GenerationStats {
    pub episodes: usize,
    pub events: usize,
    pub skipped_events: usize,
}

/// Runs episodes over the configured (load, window) mix until at least
/// `target_rows` rows exist. Between events each link keeps the channel that
/// won the vote, so the occupancy seen by later events follows the
/// labelled policy.
pub fn generate_dataset(
    template: &Network,
    qkd: &QkdParams,
    cfg: &DatasetConfig,
    target_rows: usize,
) -> Result<(Dataset, GenerationStats)> {
    cfg.validate()?;
    qkd.validate()?;
    let topo = template.topology().clone();
    let evaluator = SkrEvaluator::new(&topo, qkd);
    let mut data = Dataset::new(FeatureSchema::new(&topo, cfg.subset));
    let mut stats = GenerationStats::default();
    let scenarios = cfg.scenarios();
    let mux: Vec<LinkId> = topo.mux_links().collect();
    if mux.is_empty() {
        return Err(Error::Topology("no MUX links".into()));
    }
    let mut episode = 0u64;
    while data.rows.len() < target_rows {
        let (tl, window) = scenarios[episode as usize % scenarios.len()];
        let ep_seed = derive_seed(cfg.seed, &[episode]);
        let traffic = cfg.traffic(tl, ep_seed);
        let mc = McConfig {
            n_sets: cfg.n_sets,
            window,
            seed: derive_seed(ep_seed, &[1]),
        };
        let mut net = template.clone();
        for &l in &mux {
            net.release_all_quantum(l);
            net.place_quantum(l, Channel(1))?;
        }
        let mut gen = TrafficGenerator::new(&traffic, topo.nodes())?;
        let mut instants = 0;
        let mut t = 0u64;
        while instants < cfg.instants_per_episode && data.rows.len() < target_rows {
            if t > 0 {
                net.advance_timeslot();
            }
            for r in gen.arrivals(t) {
                provision(&mut net, &r);
            }
            if t >= cfg.warmup_slots && t % window as u64 == 0 {
                for &l in &mux {
                    net.release_all_quantum(l);
                    let event_id = (episode << 32) | ((instants as u64) << 8) | l.0 as u64;
                    let ex = FeatureExtractor::new(&net, l, cfg.subset, tl, window)?;
                    if ex.candidates().is_empty() {
                        stats.skipped_events += 1;
                        continue;
                    }
                    let label = monte_carlo_label(&net, l, &mc, &traffic, &evaluator, event_id)?;
                    for (&c, p) in label.candidates.iter().zip(label.p_opt()) {
                        data.rows.push(Row {
                            event_id,
                            features: ex.vector(c)?,
                            p_opt: p,
                        });
                    }
                    stats.events += 1;
                    net.place_quantum(l, label.best())?;
                }
                instants += 1;
            }
            t += 1;
        }
        episode += 1;
        stats.episodes += 1;
    }
    Ok((data, stats))
}

/// Per-event vote totals, used to check label consistency.
pub fn event_sums(data: &Dataset) -> BTreeMap<u64, f64> {
    let mut m = BTreeMap::new();
    for r in &data.rows {
        *m.entry(r.event_id).or_insert(0.0) += r.p_opt;
    }
    m
}
