//! Topology, per-link channel occupancy and the timeslot clock.
//!
//! Every span expands into two directed links (forward `a -> b`, backward
//! `b -> a`). Each direction is either a MUX link, which may carry quantum
//! channels next to classical ones, or a data-only link.
//!
//! Channels are 1-based. Channel 1 is the shortest wavelength on the grid
//! (highest frequency); each further index moves one grid spacing towards
//! longer wavelengths, so `f_n = f_1 - (n - 1) * spacing`.

use std::collections::VecDeque;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Speed of light in vacuum (m/s).
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LinkId(pub usize);

/// 1-based DWDM channel index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Channel(pub usize);

impl Channel {
    pub fn slot(self) -> usize {
        self.0 - 1
    }

    pub fn from_slot(slot: usize) -> Self {
        Channel(slot + 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChannelGrid {
    /// Frequency of channel 1 (THz).
    pub base_frequency_thz: f64,
    pub spacing_ghz: f64,
}

impl Default for ChannelGrid {
    fn default() -> Self {
        ChannelGrid {
            base_frequency_thz: 194.0,
            spacing_ghz: 200.0,
        }
    }
}

impl ChannelGrid {
    pub fn frequency_thz(&self, ch: Channel) -> f64 {
        self.base_frequency_thz - ch.slot() as f64 * self.spacing_ghz * 1e-3
    }

    pub fn wavelength_nm(&self, ch: Channel) -> f64 {
        SPEED_OF_LIGHT / (self.frequency_thz(ch) * 1e12) * 1e9
    }
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanSpec {
    pub a: usize,
    pub b: usize,
    pub length_km: f64,
    #[serde(default = "default_true")]
    pub mux_fwd: bool,
    #[serde(default)]
    pub mux_bwd: bool,
}

impl SpanSpec {
    /// Span whose forward direction is MUX and backward direction data-only.
    pub fn new(a: usize, b: usize, length_km: f64) -> Self {
        SpanSpec {
            a,
            b,
            length_km,
            mux_fwd: true,
            mux_bwd: false,
        }
    }
}

fn default_channels() -> usize {
    8
}

/// Topology file contents. See the README for the TOML layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologySpec {
    pub nodes: usize,
    #[serde(default = "default_channels")]
    pub channels: usize,
    #[serde(flatten, default)]
    pub grid: ChannelGrid,
    pub spans: Vec<SpanSpec>,
}

impl TopologySpec {
    /// Metro ring with spans of 5, 15, 20 and 30 km.
    pub fn four_node() -> Self {
        TopologySpec {
            nodes: 4,
            channels: 8,
            grid: ChannelGrid::default(),
            spans: vec![
                SpanSpec::new(0, 1, 5.0),
                SpanSpec::new(1, 2, 15.0),
                SpanSpec::new(2, 3, 20.0),
                SpanSpec::new(3, 0, 30.0),
            ],
        }
    }

    /// Six-node mesh, span lengths drawn once from [5, 30] km.
    pub fn six_node() -> Self {
        let spans = [
            (0, 1, 12.0),
            (1, 2, 27.0),
            (2, 3, 8.0),
            (3, 4, 19.0),
            (4, 5, 23.0),
            (5, 0, 6.0),
            (0, 3, 29.0),
            (1, 4, 15.0),
        ];
        TopologySpec {
            nodes: 6,
            channels: 8,
            grid: ChannelGrid::default(),
            spans: spans.iter().map(|&(a, b, l)| SpanSpec::new(a, b, l)).collect(),
        }
    }

    /// 14-node, 21-span NSFNET, span lengths drawn once from [5, 30] km.
    pub fn nsfnet() -> Self {
        let spans = [
            (0, 1, 21.0),
            (0, 2, 14.0),
            (0, 7, 28.0),
            (1, 2, 9.0),
            (1, 3, 17.0),
            (2, 5, 25.0),
            (3, 4, 11.0),
            (3, 10, 30.0),
            (4, 5, 16.0),
            (4, 6, 7.0),
            (5, 9, 22.0),
            (5, 13, 26.0),
            (6, 7, 13.0),
            (7, 8, 5.0),
            (8, 9, 19.0),
            (8, 11, 24.0),
            (8, 12, 10.0),
            (10, 11, 18.0),
            (10, 12, 27.0),
            (11, 13, 8.0),
            (12, 13, 20.0),
        ];
        TopologySpec {
            nodes: 14,
            channels: 8,
            grid: ChannelGrid::default(),
            spans: spans.iter().map(|&(a, b, l)| SpanSpec::new(a, b, l)).collect(),
        }
    }

    /// Returns a copy with every span set to `length_km`.
    pub fn with_uniform_length(mut self, length_km: f64) -> Self {
        self.spans.iter_mut().for_each(|s| s.length_km = length_km);
        self
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("topology spec serialises")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nodes < 2 {
            return Err(Error::Topology(format!("{} nodes", self.nodes)));
        }
        if self.channels < 2 {
            return Err(Error::Topology(format!(
                "{} channels per fiber, need at least 2",
                self.channels
            )));
        }
        if !(self.grid.spacing_ghz > 0.0 && self.grid.base_frequency_thz > 0.0) {
            return Err(Error::Topology("non-positive channel grid".into()));
        }
        for (i, s) in self.spans.iter().enumerate() {
            if s.a >= self.nodes || s.b >= self.nodes {
                return Err(Error::Topology(format!("span {i} references a missing node")));
            }
            if s.a == s.b {
                return Err(Error::Topology(format!("span {i} is a self-loop")));
            }
            if !(s.length_km > 0.0 && s.length_km.is_finite()) {
                return Err(Error::Topology(format!("span {i} has length {}", s.length_km)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LinkKind {
    Mux,
    DataOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkInfo {
    pub from: NodeId,
    pub to: NodeId,
    pub length_km: f64,
    pub kind: LinkKind,
}

/// Static part of a network: links, grid and precomputed shortest paths.
#[derive(Debug)]
pub struct Topology {
    nodes: usize,
    channels: usize,
    grid: ChannelGrid,
    links: Vec<LinkInfo>,
    /// Shortest path for each ordered pair, indexed `src * nodes + dst`.
    routes: Vec<Arc<[LinkId]>>,
    /// Ordered pairs whose shortest path traverses each link.
    pairs_through: Vec<Vec<(NodeId, NodeId)>>,
}

impl Topology {
    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn grid(&self) -> &ChannelGrid {
        &self.grid
    }

    pub fn links(&self) -> &[LinkInfo] {
        &self.links
    }

    pub fn link(&self, id: LinkId) -> &LinkInfo {
        &self.links[id.0]
    }

    pub fn mux_links(&self) -> impl Iterator<Item = LinkId> + '_ {
        self.links
            .iter()
            .enumerate()
            .filter(|(_, l)| l.kind == LinkKind::Mux)
            .map(|(i, _)| LinkId(i))
    }

    pub fn all_channels(&self) -> impl Iterator<Item = Channel> {
        (1..=self.channels).map(Channel)
    }

    pub fn route(&self, src: NodeId, dst: NodeId) -> &Arc<[LinkId]> {
        &self.routes[src.0 * self.nodes + dst.0]
    }

    pub fn pairs_through(&self, link: LinkId) -> &[(NodeId, NodeId)] {
        &self.pairs_through[link.0]
    }

    /// Fraction of ordered node pairs whose shortest path uses `link`.
    pub fn usage_probability(&self, link: LinkId) -> f64 {
        let pairs = self.nodes * (self.nodes - 1);
        self.pairs_through[link.0].len() as f64 / pairs as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ChannelState {
    Free,
    Data {
        /// Remaining timeslots, at least 1 while occupied.
        rht: u32,
        power_mw: f64,
        lightpath: u64,
    },
    Quantum,
}

/// An established classical connection.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Lightpath {
    pub id: u64,
    pub src: NodeId,
    pub dst: NodeId,
    pub path: Arc<[LinkId]>,
    pub wavelength: Channel,
    /// First slot in which the lightpath no longer exists.
    pub expiry_slot: u64,
    pub power_dbm: f64,
}

/// Mutable network state. Cloning shares the static [`Topology`].
#[derive(Debug, Clone, Serialize)]
pub struct Network {
    #[serde(skip)]
    topo: Arc<Topology>,
    timeslot: u64,
    /// Link-major: `link * channels + (channel - 1)`.
    state: Vec<ChannelState>,
    lightpaths: Vec<Lightpath>,
    next_lightpath: u64,
}

pub fn build_topology(spec: &TopologySpec) -> Result<Network> {
    spec.validate()?;
    let n = spec.nodes;
    let mut links = Vec::with_capacity(spec.spans.len() * 2);
    for s in &spec.spans {
        let kind = |mux: bool| if mux { LinkKind::Mux } else { LinkKind::DataOnly };
        links.push(LinkInfo {
            from: NodeId(s.a),
            to: NodeId(s.b),
            length_km: s.length_km,
            kind: kind(s.mux_fwd),
        });
        links.push(LinkInfo {
            from: NodeId(s.b),
            to: NodeId(s.a),
            length_km: s.length_km,
            kind: kind(s.mux_bwd),
        });
    }

    let mut out: Vec<Vec<LinkId>> = vec![Vec::new(); n];
    for (i, l) in links.iter().enumerate() {
        out[l.from.0].push(LinkId(i));
    }
    let mut routes: Vec<Arc<[LinkId]>> = Vec::with_capacity(n * n);
    for src in 0..n {
        for dst in 0..n {
            if src == dst {
                routes.push(Arc::from(Vec::new()));
                continue;
            }
            let path = lexicographic_shortest_path(n, &links, &out, src, dst)
                .ok_or(Error::Disconnected(if src == 0 { dst } else { src }))?;
            routes.push(Arc::from(path));
        }
    }
    let mut pairs_through = vec![Vec::new(); links.len()];
    for src in 0..n {
        for dst in 0..n {
            for l in routes[src * n + dst].iter() {
                pairs_through[l.0].push((NodeId(src), NodeId(dst)));
            }
        }
    }

    let topo = Topology {
        nodes: n,
        channels: spec.channels,
        grid: spec.grid,
        links,
        routes,
        pairs_through,
    };
    Ok(Network {
        state: vec![ChannelState::Free; topo.links.len() * topo.channels],
        topo: Arc::new(topo),
        timeslot: 0,
        lightpaths: Vec::new(),
        next_lightpath: 0,
    })
}

/// Minimum-hop path whose node sequence is lexicographically smallest.
/// Parallel links between the same nodes resolve to the lowest link id.
fn lexicographic_shortest_path(
    n: usize,
    links: &[LinkInfo],
    out: &[Vec<LinkId>],
    src: usize,
    dst: usize,
) -> Option<Vec<LinkId>> {
    // hop distance to dst over reversed links
    let mut dist = vec![usize::MAX; n];
    dist[dst] = 0;
    let mut queue = VecDeque::from([dst]);
    while let Some(v) = queue.pop_front() {
        for l in links {
            if l.to.0 == v && dist[l.from.0] == usize::MAX {
                dist[l.from.0] = dist[v] + 1;
                queue.push_back(l.from.0);
            }
        }
    }
    if dist[src] == usize::MAX {
        return None;
    }
    let mut path = Vec::with_capacity(dist[src]);
    let mut at = src;
    while at != dst {
        let next = out[at]
            .iter()
            .filter(|l| dist[links[l.0].to.0] + 1 == dist[at])
            .min_by_key(|l| (links[l.0].to.0, l.0))
            .copied()?;
        path.push(next);
        at = links[next.0].to.0;
    }
    Some(path)
}

impl Network {
    pub fn topology(&self) -> &Arc<Topology> {
        &self.topo
    }

    pub fn timeslot(&self) -> u64 {
        self.timeslot
    }

    pub fn channels(&self) -> usize {
        self.topo.channels
    }

    pub fn link_count(&self) -> usize {
        self.topo.links.len()
    }

    pub fn link(&self, id: LinkId) -> &LinkInfo {
        self.topo.link(id)
    }

    pub fn lightpaths(&self) -> &[Lightpath] {
        &self.lightpaths
    }

    pub fn shortest_path(&self, src: NodeId, dst: NodeId) -> Result<&Arc<[LinkId]>> {
        for n in [src, dst] {
            if n.0 >= self.topo.nodes {
                return Err(Error::UnknownNode(n));
            }
        }
        if src == dst {
            return Err(Error::SameEndpoints(src));
        }
        let route = self.topo.route(src, dst);
        if route.is_empty() {
            return Err(Error::Unreachable(src, dst));
        }
        Ok(route)
    }

    fn idx(&self, link: LinkId, ch: Channel) -> usize {
        link.0 * self.topo.channels + ch.slot()
    }

    pub fn state(&self, link: LinkId, ch: Channel) -> ChannelState {
        self.state[self.idx(link, ch)]
    }

    pub fn link_states(&self, link: LinkId) -> &[ChannelState] {
        let c = self.topo.channels;
        &self.state[link.0 * c..(link.0 + 1) * c]
    }

    /// Residual holding time: 0 for free and quantum channels.
    pub fn rht(&self, link: LinkId, ch: Channel) -> u32 {
        match self.state(link, ch) {
            ChannelState::Data { rht, .. } => rht,
            _ => 0,
        }
    }

    /// Launch power in mW, 0 unless the channel carries data.
    pub fn power_mw(&self, link: LinkId, ch: Channel) -> f64 {
        match self.state(link, ch) {
            ChannelState::Data { power_mw, .. } => power_mw,
            _ => 0.0,
        }
    }

    pub fn quantum_channels(&self, link: LinkId) -> Vec<Channel> {
        self.link_states(link)
            .iter()
            .enumerate()
            .filter(|(_, s)| matches!(s, ChannelState::Quantum))
            .map(|(i, _)| Channel::from_slot(i))
            .collect()
    }

    fn check_link(&self, link: LinkId) -> Result<()> {
        if link.0 >= self.topo.links.len() {
            return Err(Error::UnknownLink(link));
        }
        Ok(())
    }

    fn check_mux(&self, link: LinkId) -> Result<()> {
        self.check_link(link)?;
        if self.topo.links[link.0].kind != LinkKind::Mux {
            return Err(Error::NotMux(link));
        }
        Ok(())
    }

    fn check_channel(&self, link: LinkId, ch: Channel) -> Result<()> {
        if ch.0 == 0 || ch.0 > self.topo.channels {
            return Err(Error::Channel(link, ch, "index out of range"));
        }
        Ok(())
    }

    /// Free channels of a MUX link.
    pub fn available_channels(&self, link: LinkId) -> Result<Vec<Channel>> {
        self.check_mux(link)?;
        Ok(self
            .link_states(link)
            .iter()
            .enumerate()
            .filter(|(_, s)| matches!(s, ChannelState::Free))
            .map(|(i, _)| Channel::from_slot(i))
            .collect())
    }

    pub fn place_quantum(&mut self, link: LinkId, ch: Channel) -> Result<()> {
        self.check_mux(link)?;
        self.check_channel(link, ch)?;
        let i = self.idx(link, ch);
        match self.state[i] {
            ChannelState::Free => {
                self.state[i] = ChannelState::Quantum;
                Ok(())
            }
            _ => Err(Error::Channel(link, ch, "not free")),
        }
    }

    pub fn release_quantum(&mut self, link: LinkId, ch: Channel) -> Result<()> {
        self.check_link(link)?;
        self.check_channel(link, ch)?;
        let i = self.idx(link, ch);
        match self.state[i] {
            ChannelState::Quantum => {
                self.state[i] = ChannelState::Free;
                Ok(())
            }
            _ => Err(Error::Channel(link, ch, "holds no quantum channel")),
        }
    }

    /// Frees every quantum channel on `link` and returns them.
    pub fn release_all_quantum(&mut self, link: LinkId) -> Vec<Channel> {
        let released = self.quantum_channels(link);
        for &ch in &released {
            let i = self.idx(link, ch);
            self.state[i] = ChannelState::Free;
        }
        released
    }

    /// Classical signals on a link as `(channel, power_mw)`.
    pub fn data_signals(&self, link: LinkId) -> impl Iterator<Item = (Channel, f64)> + '_ {
        self.link_states(link)
            .iter()
            .enumerate()
            .filter_map(|(i, s)| match s {
                ChannelState::Data { power_mw, .. } => Some((Channel::from_slot(i), *power_mw)),
                _ => None,
            })
    }

    /// Lowest channel free on every link of `path`.
    pub fn first_fit(&self, path: &[LinkId]) -> Option<Channel> {
        self.topo.all_channels().find(|&ch| {
            path.iter()
                .all(|&l| matches!(self.state(l, ch), ChannelState::Free))
        })
    }

    /// Occupies `wavelength` on every link of the path. Caller guarantees the
    /// channel is free end-to-end.
    pub(crate) fn establish(
        &mut self,
        src: NodeId,
        dst: NodeId,
        wavelength: Channel,
        holding_slots: u32,
        power_dbm: f64,
    ) -> u64 {
        let id = self.next_lightpath;
        self.next_lightpath += 1;
        let path = self.topo.route(src, dst).clone();
        let power_mw = 10f64.powf(power_dbm / 10.0);
        for &l in path.iter() {
            let i = self.idx(l, wavelength);
            debug_assert!(matches!(self.state[i], ChannelState::Free));
            self.state[i] = ChannelState::Data {
                rht: holding_slots,
                power_mw,
                lightpath: id,
            };
        }
        self.lightpaths.push(Lightpath {
            id,
            src,
            dst,
            path,
            wavelength,
            expiry_slot: self.timeslot + holding_slots as u64,
            power_dbm,
        });
        id
    }

    /// Moves the clock one slot forward. Data channels lose one slot of
    /// residual holding time; those reaching zero are freed and returned.
    pub fn advance_timeslot(&mut self) -> Vec<(LinkId, Channel)> {
        let c = self.topo.channels;
        let mut released = Vec::new();
        for (i, s) in self.state.iter_mut().enumerate() {
            if let ChannelState::Data { rht, .. } = s {
                *rht -= 1;
                if *rht == 0 {
                    *s = ChannelState::Free;
                    released.push((LinkId(i / c), Channel::from_slot(i % c)));
                }
            }
        }
        self.timeslot += 1;
        let now = self.timeslot;
        self.lightpaths.retain(|lp| lp.expiry_slot > now);
        released
    }

    /// Number of data-occupied channel slots over all links.
    pub fn data_channel_count(&self) -> usize {
        self.state
            .iter()
            .filter(|s| matches!(s, ChannelState::Data { .. }))
            .count()
    }
}
