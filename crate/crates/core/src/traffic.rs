//! Poisson classical traffic and first-fit provisioning.
//!
//! Arrivals per slot are Poisson with rate `TL / mean_holding`, holding times
//! are geometric with the configured mean (the slotted analogue of an
//! exponential), so the offered load in Erlang equals `TL`.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{Channel, Network, NodeId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub src: NodeId,
    pub dst: NodeId,
    pub arrival_slot: u64,
    pub holding_slots: u32,
    pub power_dbm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrafficParams {
    /// Offered load TL = lambda / mu in Erlang.
    pub load_erlang: f64,
    /// 1 / mu in slots.
    pub mean_holding_slots: f64,
    pub power_dbm_min: f64,
    pub power_dbm_max: f64,
    pub seed: u64,
}

impl Default for TrafficParams {
    fn default() -> Self {
        TrafficParams {
            load_erlang: 10.0,
            mean_holding_slots: 10.0,
            power_dbm_min: -5.0,
            power_dbm_max: 5.0,
            seed: 0,
        }
    }
}

impl TrafficParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.load_erlang >= 0.0 && self.load_erlang.is_finite()) {
            return Err(Error::Param(format!("traffic load {}", self.load_erlang)));
        }
        if !(self.mean_holding_slots >= 1.0 && self.mean_holding_slots.is_finite()) {
            return Err(Error::Param(format!(
                "mean holding time {} < 1 slot",
                self.mean_holding_slots
            )));
        }
        if !(self.power_dbm_min <= self.power_dbm_max) {
            return Err(Error::Param("power range min > max".into()));
        }
        Ok(())
    }

    /// Mean arrivals per slot.
    pub fn arrival_rate(&self) -> f64 {
        self.load_erlang / self.mean_holding_slots
    }
}

/// Seeded request source; slots must be requested in increasing order.
pub struct TrafficGenerator {
    params: TrafficParams,
    nodes: usize,
    rng: ChaCha8Rng,
    arrivals: Option<Poisson<f64>>,
    holding: Geometric,
}

impl TrafficGenerator {
    pub fn new(params: &TrafficParams, nodes: usize) -> Result<Self> {
        params.validate()?;
        if nodes < 2 {
            return Err(Error::Param(format!("{nodes} nodes")));
        }
        let rate = params.arrival_rate();
        let arrivals = if rate > 0.0 {
            Some(Poisson::new(rate).map_err(|e| Error::Param(e.to_string()))?)
        } else {
            None
        };
        let holding = Geometric::new(1.0 / params.mean_holding_slots)
            .map_err(|e| Error::Param(e.to_string()))?;
        Ok(TrafficGenerator {
            params: params.clone(),
            nodes,
            rng: ChaCha8Rng::seed_from_u64(params.seed),
            arrivals,
            holding,
        })
    }

    pub fn arrivals(&mut self, slot: u64) -> Vec<Request> {
        let Some(poisson) = &self.arrivals else {
            return Vec::new();
        };
        let count = poisson.sample(&mut self.rng) as usize;
        (0..count)
            .map(|_| {
                let src = self.rng.gen_range(0..self.nodes);
                let mut dst = self.rng.gen_range(0..self.nodes - 1);
                if dst >= src {
                    dst += 1;
                }
                let holding = 1 + self.holding.sample(&mut self.rng).min(u32::MAX as u64 - 1) as u32;
                let (lo, hi) = (self.params.power_dbm_min, self.params.power_dbm_max);
                let power_dbm = if lo < hi { self.rng.gen_range(lo..=hi) } else { lo };
                Request {
                    src: NodeId(src),
                    dst: NodeId(dst),
                    arrival_slot: slot,
                    holding_slots: holding,
                    power_dbm,
                }
            })
            .collect()
    }
}

/// Requests grouped by arrival slot, starting at slot `start`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RequestTrace {
    start: u64,
    slots: Vec<Vec<Request>>,
}

impl RequestTrace {
    pub fn new(start: u64, slots: Vec<Vec<Request>>) -> Self {
        RequestTrace { start, slots }
    }

    /// Arrivals for slots `start .. start + len`.
    pub fn generate(params: &TrafficParams, nodes: usize, start: u64, len: usize) -> Result<Self> {
        let mut gen = TrafficGenerator::new(params, nodes)?;
        let slots = (0..len as u64).map(|s| gen.arrivals(start + s)).collect();
        Ok(RequestTrace { start, slots })
    }

    /// Arrivals from slot 0 until `n_requests` requests have been offered.
    /// The slot containing the last request is truncated after it. With zero
    /// load the trace spans `fallback_slots` empty slots.
    pub fn until_requests(
        params: &TrafficParams,
        nodes: usize,
        n_requests: usize,
        fallback_slots: usize,
    ) -> Result<Self> {
        let mut gen = TrafficGenerator::new(params, nodes)?;
        if params.arrival_rate() == 0.0 {
            return Ok(RequestTrace {
                start: 0,
                slots: vec![Vec::new(); fallback_slots],
            });
        }
        let mut slots = Vec::new();
        let mut offered = 0;
        let mut slot = 0;
        while offered < n_requests {
            let mut batch = gen.arrivals(slot);
            batch.truncate(n_requests - offered);
            offered += batch.len();
            slots.push(batch);
            slot += 1;
        }
        Ok(RequestTrace { start: 0, slots })
    }

    pub fn start(&self) -> u64 {
        self.start
    }

    /// Number of slots covered.
    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn end(&self) -> u64 {
        self.start + self.slots.len() as u64
    }

    /// Arrivals in `slot`; empty outside the covered range.
    pub fn slot(&self, slot: u64) -> &[Request] {
        slot.checked_sub(self.start)
            .and_then(|i| self.slots.get(i as usize))
            .map_or(&[], |v| v.as_slice())
    }

    /// Copy of slots `start .. start + len` (empty where not covered).
    pub fn window(&self, start: u64, len: usize) -> RequestTrace {
        let slots = (0..len as u64).map(|s| self.slot(start + s).to_vec()).collect();
        RequestTrace { start, slots }
    }

    pub fn request_count(&self) -> usize {
        self.slots.iter().map(Vec::len).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Request> {
        self.slots.iter().flatten()
    }

    /// CSV with header `slot,src,dst,holding,power_dbm`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["slot", "src", "dst", "holding", "power_dbm"])?;
        for r in self.iter() {
            w.write_record([
                r.arrival_slot.to_string(),
                r.src.0.to_string(),
                r.dst.0.to_string(),
                r.holding_slots.to_string(),
                format!("{:?}", r.power_dbm),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a trace written by [`RequestTrace::write_csv`]. Slots must be
    /// non-decreasing; the trace starts at slot 0.
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            slot: u64,
            src: usize,
            dst: usize,
            holding: u32,
            power_dbm: f64,
        }
        let mut rdr = csv::Reader::from_path(path)?;
        let mut slots: Vec<Vec<Request>> = Vec::new();
        for row in rdr.deserialize() {
            let row: Row = row?;
            if row.src == row.dst || row.holding == 0 {
                return Err(Error::Parse(format!("invalid request at slot {}", row.slot)));
            }
            let i = row.slot as usize;
            if i + 1 < slots.len() {
                return Err(Error::Parse("trace slots must be non-decreasing".into()));
            }
            slots.resize_with(slots.len().max(i + 1), Vec::new);
            slots[i].push(Request {
                src: NodeId(row.src),
                dst: NodeId(row.dst),
                arrival_slot: row.slot,
                holding_slots: row.holding,
                power_dbm: row.power_dbm,
            });
        }
        Ok(RequestTrace { start: 0, slots })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provision {
    Established { lightpath: u64, wavelength: Channel },
    Blocked,
}

/// Shortest-path routing with first-fit wavelength assignment under the
/// continuity constraint. Blocked requests leave the network untouched.
pub fn provision(network: &mut Network, request: &Request) -> Provision {
    let path = network.topology().route(request.src, request.dst).clone();
    match network.first_fit(&path) {
        Some(wavelength) => {
            let lightpath = network.establish(
                request.src,
                request.dst,
                wavelength,
                request.holding_slots,
                request.power_dbm,
            );
            Provision::Established {
                lightpath,
                wavelength,
            }
        }
        None => Provision::Blocked,
    }
}
