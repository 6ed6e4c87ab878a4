//! Feature extraction for the channel-choice model.
//!
//! Four subsets are supported. Every vector starts with
//! `[length_km, load, window]` and ends with the candidate channel index;
//! in between come residual holding times and the per-channel classical
//! power of the processing link.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::network::{Channel, ChannelState, LinkId, Network, Topology};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FeatureSubset {
    /// Load, window, length, RHT of every link, local powers.
    S1,
    /// Only the processing link's RHT.
    S2,
    /// S2 plus the averaged path RHT per channel.
    S3,
    /// S3 with the load normalised by the link's usage probability.
    S4,
}

impl FeatureSubset {
    pub const ALL: [FeatureSubset; 4] = [Self::S1, Self::S2, Self::S3, Self::S4];
}

impl fmt::Display for FeatureSubset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::S1 => "S1",
            Self::S2 => "S2",
            Self::S3 => "S3",
            Self::S4 => "S4",
        };
        f.write_str(s)
    }
}

impl FromStr for FeatureSubset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "S1" => Ok(Self::S1),
            "S2" => Ok(Self::S2),
            "S3" => Ok(Self::S3),
            "S4" => Ok(Self::S4),
            _ => Err(Error::Parse(format!("unknown feature subset {s:?}"))),
        }
    }
}

/// Names and order of the feature columns for one subset on one topology.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub subset: FeatureSubset,
    pub names: Vec<String>,
}

impl FeatureSchema {
    pub fn new(topology: &Topology, subset: FeatureSubset) -> Self {
        let c = topology.channels();
        let mut names = vec!["length_km".to_string()];
        names.push(if subset == FeatureSubset::S4 { "nor_tl" } else { "tl" }.into());
        names.push("ts".into());
        match subset {
            FeatureSubset::S1 => {
                for l in 0..topology.links().len() {
                    names.extend((1..=c).map(|ch| format!("rht_l{l}_c{ch}")));
                }
            }
            FeatureSubset::S2 => names.extend((1..=c).map(|ch| format!("rht_c{ch}"))),
            FeatureSubset::S3 | FeatureSubset::S4 => {
                names.extend((1..=c).map(|ch| format!("rht_c{ch}")));
                names.extend((1..=c).map(|ch| format!("rht_path_c{ch}")));
            }
        }
        names.extend((1..=c).map(|ch| format!("power_mw_c{ch}")));
        names.push("candidate".into());
        FeatureSchema { subset, names }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Stable 64-bit identifier of the column layout, stored in model files.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Sha256::new();
        h.update(b"nsca-features-1\n");
        h.update(self.subset.to_string().as_bytes());
        for n in &self.names {
            h.update(b"\n");
            h.update(n.as_bytes());
        }
        let d = h.finalize();
        u64::from_be_bytes(d[..8].try_into().expect("digest length"))
    }
}

/// RHT feature value of one channel on one link. Quantum channels are
/// encoded as `2 * window` to mark them unavailable for the whole window.
pub fn rht_value(state: ChannelState, window: u32) -> f64 {
    match state {
        ChannelState::Free => 0.0,
        ChannelState::Data { rht, .. } => rht as f64,
        ChannelState::Quantum => 2.0 * window as f64,
    }
}

/// Largest RHT of `channel` over the links of `path`.
pub fn rht_path(network: &Network, channel: Channel, path: &[LinkId], window: u32) -> f64 {
    path.iter()
        .map(|&l| rht_value(network.state(l, channel), window))
        .fold(0.0, f64::max)
}

/// Offered load scaled by the fraction of ordered node pairs routed over
/// `link`.
pub fn normalized_tl(topology: &Topology, link: LinkId, load_erlang: f64) -> f64 {
    topology.usage_probability(link) * load_erlang
}

/// Builds feature vectors for one processing link; everything except the
/// trailing candidate index is computed once.
pub struct FeatureExtractor {
    subset: FeatureSubset,
    prefix: Vec<f64>,
    available: Vec<Channel>,
    link: LinkId,
}

impl FeatureExtractor {
    pub fn new(
        network: &Network,
        link: LinkId,
        subset: FeatureSubset,
        load_erlang: f64,
        window: u32,
    ) -> Result<Self> {
        let topo = network.topology();
        if link.0 >= topo.links().len() {
            return Err(Error::UnknownLink(link));
        }
        let available = network.available_channels(link)?;
        let c = topo.channels();
        let mut prefix = Vec::with_capacity(FeatureSchema::new(topo, subset).len());
        prefix.push(network.link(link).length_km);
        prefix.push(match subset {
            FeatureSubset::S4 => normalized_tl(topo, link, load_erlang),
            _ => load_erlang,
        });
        prefix.push(window as f64);
        let local = network.link_states(link);
        match subset {
            FeatureSubset::S1 => {
                for l in 0..topo.links().len() {
                    prefix.extend(network.link_states(LinkId(l)).iter().map(|&s| rht_value(s, window)));
                }
            }
            FeatureSubset::S2 => prefix.extend(local.iter().map(|&s| rht_value(s, window))),
            FeatureSubset::S3 | FeatureSubset::S4 => {
                prefix.extend(local.iter().map(|&s| rht_value(s, window)));
                let pairs = topo.pairs_through(link);
                for ch in topo.all_channels() {
                    let avg = if pairs.is_empty() {
                        rht_value(local[ch.slot()], window)
                    } else {
                        pairs
                            .iter()
                            .map(|&(s, d)| rht_path(network, ch, topo.route(s, d), window))
                            .sum::<f64>()
                            / pairs.len() as f64
                    };
                    prefix.push(avg);
                }
            }
        }
        prefix.extend((1..=c).map(|ch| network.power_mw(link, Channel(ch))));
        Ok(FeatureExtractor {
            subset,
            prefix,
            available,
            link,
        })
    }

    pub fn subset(&self) -> FeatureSubset {
        self.subset
    }

    /// Channels free on the processing link, in increasing index order.
    pub fn candidates(&self) -> &[Channel] {
        &self.available
    }

    pub fn vector(&self, candidate: Channel) -> Result<Vec<f64>> {
        if !self.available.contains(&candidate) {
            return Err(Error::Channel(self.link, candidate, "candidate not available"));
        }
        let mut v = Vec::with_capacity(self.prefix.len() + 1);
        v.extend_from_slice(&self.prefix);
        v.push(candidate.0 as f64);
        Ok(v)
    }
}

/// Feature vector for a single candidate.
pub fn extract(
    network: &Network,
    link: LinkId,
    subset: FeatureSubset,
    candidate: Channel,
    load_erlang: f64,
    window: u32,
) -> Result<Vec<f64>> {
    FeatureExtractor::new(network, link, subset, load_erlang, window)?.vector(candidate)
}
