//! Quantum-channel allocation strategies.
//!
//! * fixed band: channel 1 (plus the next ones for several Qchs), never moved;
//! * threshold-triggered: every slot a Qch whose key rate falls below a
//!   threshold moves to the free channel with the least noise;
//! * learned: every `window` slots each MUX link releases its Qch and takes
//!   the free channel with the highest predicted `p_opt`;
//! * oracle: like the learned policy but scores candidates by replaying the
//!   actual future traffic.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nsca_gbdt::GbdtModel;
use serde::{Deserialize, Serialize};

use crate::dataset::window_rate;
use crate::error::{Error, Result};
use crate::features::{FeatureExtractor, FeatureSchema, FeatureSubset};
use crate::network::{Channel, LinkId, Network, Topology};
use crate::physics::SkrEvaluator;
use crate::traffic::RequestTrace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyKind {
    Fb,
    Pp,
    MlNsca,
    Oracle,
}

impl StrategyKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Fb => "fb",
            Self::Pp => "pp",
            Self::MlNsca => "ml-nsca",
            Self::Oracle => "oracle",
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fb" => Ok(Self::Fb),
            "pp" => Ok(Self::Pp),
            "ml-nsca" | "ml" | "ml_nsca" => Ok(Self::MlNsca),
            "oracle" => Ok(Self::Oracle),
            _ => Err(Error::Parse(format!("unknown strategy {s:?}"))),
        }
    }
}

/// A trained model bound to the feature subset it was trained on.
#[derive(Debug, Clone)]
pub struct MlPolicy {
    model: Arc<GbdtModel>,
    subset: FeatureSubset,
}

impl MlPolicy {
    pub fn new(model: Arc<GbdtModel>, subset: FeatureSubset) -> Self {
        MlPolicy { model, subset }
    }

    pub fn model(&self) -> &GbdtModel {
        &self.model
    }

    pub fn subset(&self) -> FeatureSubset {
        self.subset
    }

    /// Fails unless the model was trained on this subset's layout for
    /// `topology`.
    pub fn check(&self, topology: &Topology) -> Result<()> {
        let schema = FeatureSchema::new(topology, self.subset);
        if self.model.n_features() != schema.len() || self.model.fingerprint() != schema.fingerprint() {
            return Err(Error::Schema(format!(
                "model expects {} features (fingerprint {:016x}), {} on this topology has {} ({:016x})",
                self.model.n_features(),
                self.model.fingerprint(),
                self.subset,
                schema.len(),
                schema.fingerprint()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub enum Strategy {
    Fb,
    Pp { threshold_bps: f64 },
    MlNsca { policy: MlPolicy, window: u32 },
    Oracle { window: u32 },
}

impl Strategy {
    pub fn kind(&self) -> StrategyKind {
        match self {
            Strategy::Fb => StrategyKind::Fb,
            Strategy::Pp { .. } => StrategyKind::Pp,
            Strategy::MlNsca { .. } => StrategyKind::MlNsca,
            Strategy::Oracle { .. } => StrategyKind::Oracle,
        }
    }

    pub fn validate(&self, topology: &Topology) -> Result<()> {
        match self {
            Strategy::Fb => Ok(()),
            Strategy::Pp { threshold_bps } => {
                if *threshold_bps >= 0.0 {
                    Ok(())
                } else {
                    Err(Error::Param(format!("threshold {threshold_bps} < 0")))
                }
            }
            Strategy::MlNsca { policy, window } => {
                if *window == 0 {
                    return Err(Error::Param("window must be at least 1".into()));
                }
                policy.check(topology)
            }
            Strategy::Oracle { window } => {
                if *window == 0 {
                    return Err(Error::Param("window must be at least 1".into()));
                }
                Ok(())
            }
        }
    }
}

/// Initial placement shared by every strategy: channels `1..=qch_count` on
/// each MUX link. For the fixed-band scheme this placement is permanent.
pub fn fb_allocate(network: &mut Network, qch_count: usize) -> Result<()> {
    let mux: Vec<LinkId> = network.topology().mux_links().collect();
    for l in mux {
        network.release_all_quantum(l);
        for c in 1..=qch_count {
            network.place_quantum(l, Channel(c))?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PpDecision {
    Keep,
    Reallocate(Channel),
}

/// Threshold check for the Qch at `qch` on `link`. Below the threshold the
/// Qch moves to the least noisy free channel (ties to the lowest index); it
/// stays only when no other channel is free.
pub fn pp_step(
    network: &Network,
    link: LinkId,
    qch: Channel,
    threshold_bps: f64,
    evaluator: &SkrEvaluator,
) -> Result<PpDecision> {
    if evaluator.link_skr(network, link, qch) >= threshold_bps {
        return Ok(PpDecision::Keep);
    }
    let mut best: Option<(f64, Channel)> = None;
    for c in network.available_channels(link)? {
        let n = evaluator.noise_w(network, link, c);
        if best.map_or(true, |(bn, _)| n < bn) {
            best = Some((n, c));
        }
    }
    Ok(best.map_or(PpDecision::Keep, |(_, c)| PpDecision::Reallocate(c)))
}

/// Releases every Qch of `link` and places `qch_count` new ones on the free
/// channels with the highest predicted `p_opt` (ties to the lowest index).
/// Returns the chosen channels; empty means the link is suspended.
pub fn ml_nsca_reallocate(
    network: &mut Network,
    link: LinkId,
    policy: &MlPolicy,
    load_erlang: f64,
    window: u32,
    qch_count: usize,
) -> Result<Vec<Channel>> {
    network.release_all_quantum(link);
    let ex = FeatureExtractor::new(network, link, policy.subset, load_erlang, window)?;
    let mut scored = Vec::with_capacity(ex.candidates().len());
    for &c in ex.candidates() {
        scored.push((policy.model.predict(&ex.vector(c)?)?, c));
    }
    let chosen = top_candidates(scored, qch_count);
    for &c in &chosen {
        network.place_quantum(link, c)?;
    }
    Ok(chosen)
}

/// Highest-scoring channels, ties broken towards the lowest index.
pub fn top_candidates(mut scored: Vec<(f64, Channel)>, n: usize) -> Vec<Channel> {
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    scored.into_iter().take(n).map(|(_, c)| c).collect()
}

/// Clairvoyant choice: each free channel is scored by the mean key rate it
/// would obtain over `future` (the requests of the coming window). Several
/// Qchs are placed greedily one after another.
pub fn oracle_allocate(
    network: &mut Network,
    link: LinkId,
    future: &RequestTrace,
    evaluator: &SkrEvaluator,
    qch_count: usize,
) -> Result<Vec<Channel>> {
    network.release_all_quantum(link);
    let mut chosen = Vec::new();
    for _ in 0..qch_count {
        let candidates = network.available_channels(link)?;
        let mut best: Option<(f64, Channel)> = None;
        for c in candidates {
            let mut trial = network.clone();
            trial.place_quantum(link, c)?;
            let mut qchs = chosen.clone();
            qchs.push(c);
            let rate = window_rate(&mut trial, link, &qchs, future, evaluator)?;
            if best.map_or(true, |(r, _)| rate > r) {
                best = Some((rate, c));
            }
        }
        let Some((_, c)) = best else { break };
        network.place_quantum(link, c)?;
        chosen.push(c);
    }
    Ok(chosen)
}

/// Outcome of a threshold search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub threshold_bps: f64,
    pub count: u64,
    pub iterations: usize,
    /// False when the target could not be met within tolerance; the
    /// closest threshold found is returned.
    pub converged: bool,
}

/// Bisection for the threshold whose reallocation count matches `target`
/// within `tolerance` (relative). `count_at` must be non-decreasing in the
/// threshold; `upper_bps` should exceed every achievable key rate.
///
/// The count can jump over the target (many slots have a key rate of exactly
/// zero). In that case the smallest count at or above the target is
/// returned, so the baseline never gets fewer reallocations than asked for.
pub fn calibrate_threshold<F>(
    mut count_at: F,
    target: u64,
    upper_bps: f64,
    tolerance: f64,
    max_iterations: usize,
) -> Result<Calibration>
where
    F: FnMut(f64) -> Result<u64>,
{
    let within = |c: u64| (c as f64 - target as f64).abs() <= tolerance * target as f64;
    let lo_count = count_at(0.0)?;
    let mut best = Calibration {
        threshold_bps: 0.0,
        count: lo_count,
        iterations: 1,
        converged: within(lo_count),
    };
    if best.converged {
        return Ok(best);
    }
    let hi_count = count_at(upper_bps)?;
    let mut iterations = 2;
    let mut above: Option<Calibration> = None;
    let mut consider = |theta: f64, c: u64, it: usize, best: &mut Calibration| {
        if c >= target
            && above
                .as_ref()
                .map_or(true, |a| c < a.count || (c == a.count && theta < a.threshold_bps))
        {
            above = Some(Calibration {
                threshold_bps: theta,
                count: c,
                iterations: it,
                converged: within(c),
            });
        }
        let d = (c as f64 - target as f64).abs();
        if d < (best.count as f64 - target as f64).abs() {
            *best = Calibration {
                threshold_bps: theta,
                count: c,
                iterations: it,
                converged: within(c),
            };
        }
        best.iterations = it;
    };
    if hi_count < target && !within(hi_count) {
        return Ok(Calibration {
            threshold_bps: upper_bps,
            count: hi_count,
            iterations,
            converged: false,
        });
    }
    consider(upper_bps, hi_count, iterations, &mut best);
    if best.converged {
        return Ok(best);
    }
    let (mut lo, mut hi) = (0.0, upper_bps);
    while iterations < max_iterations {
        let mid = 0.5 * (lo + hi);
        let c = count_at(mid)?;
        iterations += 1;
        consider(mid, c, iterations, &mut best);
        if best.converged {
            break;
        }
        if c < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if best.converged {
        return Ok(best);
    }
    let iterations = best.iterations;
    Ok(above.map_or(best, |a| Calibration { iterations, ..a }))
}
