//! Simulated message passing between robots.
//!
//! Every hop takes one control tick: a message sent at tick `k` is delivered
//! at `k + 1`. Messages for robots that are not graph neighbors travel in
//! relay envelopes along shortest paths, ties broken by the lowest next-hop
//! label. Delivery order is `(src, dst, seq)` so runs are reproducible.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Robot label.
pub type Id = usize;

pub type Adjacency = BTreeMap<Id, BTreeSet<Id>>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Topology {
    /// Ring neighbors are also communication neighbors.
    Ring,
    /// The ring with the seam edge removed.
    Line,
    /// Explicit edge lists, cycled through one per tick.
    Schedule(Vec<Vec<(Id, Id)>>),
}

/// Communication graph over the robots currently in the ring.
#[derive(Clone, Debug)]
pub struct CommGraph {
    /// Labels in ring order.
    pub order: Vec<Id>,
    pub topology: Topology,
}

impl CommGraph {
    pub fn new(order: Vec<Id>, topology: Topology) -> Self {
        CommGraph { order, topology }
    }

    pub fn adjacency(&self, tick: u64) -> Adjacency {
        let mut adj: Adjacency = self.order.iter().map(|&i| (i, BTreeSet::new())).collect();
        let mut link = |a: Id, b: Id| {
            if a != b && adj.contains_key(&a) && adj.contains_key(&b) {
                adj.get_mut(&a).expect("present").insert(b);
                adj.get_mut(&b).expect("present").insert(a);
            }
        };
        let n = self.order.len();
        match &self.topology {
            Topology::Ring => {
                for k in 0..n {
                    link(self.order[k], self.order[(k + 1) % n]);
                }
            }
            Topology::Line => {
                for k in 1..n {
                    link(self.order[k - 1], self.order[k]);
                }
            }
            Topology::Schedule(edges) => {
                if !edges.is_empty() {
                    for &(a, b) in &edges[(tick % edges.len() as u64) as usize] {
                        link(a, b);
                    }
                }
            }
        }
        adj
    }

    /// Connected adjacency at `tick`, or `DisconnectedGraph`.
    pub fn checked_adjacency(&self, tick: u64) -> Result<Adjacency> {
        let adj = self.adjacency(tick);
        if is_connected(&adj) {
            Ok(adj)
        } else {
            Err(Error::DisconnectedGraph { tick })
        }
    }
}

/// Hop counts from `root` (BFS).
pub fn hop_distances(adj: &Adjacency, root: Id) -> BTreeMap<Id, usize> {
    let mut dist = BTreeMap::new();
    if !adj.contains_key(&root) {
        return dist;
    }
    dist.insert(root, 0);
    let mut queue = VecDeque::from([root]);
    while let Some(u) = queue.pop_front() {
        let du = dist[&u];
        for &v in &adj[&u] {
            if let std::collections::btree_map::Entry::Vacant(e) = dist.entry(v) {
                e.insert(du + 1);
                queue.push_back(v);
            }
        }
    }
    dist
}

pub fn is_connected(adj: &Adjacency) -> bool {
    match adj.keys().next() {
        None => true,
        Some(&root) => hop_distances(adj, root).len() == adj.len(),
    }
}

pub fn diameter(adj: &Adjacency) -> usize {
    adj.keys()
        .map(|&u| hop_distances(adj, u).values().copied().max().unwrap_or(0))
        .max()
        .unwrap_or(0)
}

/// First hop on a shortest path from `src` to `dst`, lowest label on ties.
pub fn next_hop(adj: &Adjacency, src: Id, dst: Id) -> Result<Id> {
    let dist = hop_distances(adj, dst);
    let d = *dist.get(&src).ok_or(Error::NoRoute { src, dst })?;
    if d == 0 {
        return Ok(src);
    }
    adj[&src]
        .iter()
        .copied()
        .find(|v| dist.get(v) == Some(&(d - 1)))
        .ok_or(Error::NoRoute { src, dst })
}

#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    Phase {
        phi: f64,
        phi_rate: f64,
    },
    Estimate {
        values: Vec<f64>,
        rates: Vec<f64>,
    },
    Gamma {
        gamma: f64,
    },
    Relay {
        origin: Id,
        final_dst: Id,
        origin_tick: u64,
        hops: u32,
        inner: Box<Payload>,
    },
}

impl Payload {
    pub fn kind(&self) -> &'static str {
        match self {
            Payload::Phase { .. } => "phase",
            Payload::Estimate { .. } => "estimate",
            Payload::Gamma { .. } => "gamma",
            Payload::Relay { .. } => "relay",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Message {
    pub src: Id,
    pub dst: Id,
    pub sent_tick: u64,
    pub seq: u64,
    pub payload: Payload,
}

/// A payload as seen by its final recipient. For relayed payloads `src` is the
/// originator and `sent_tick` the tick it was first sent.
#[derive(Clone, Debug, PartialEq)]
pub struct Delivery {
    pub src: Id,
    pub dst: Id,
    pub sent_tick: u64,
    pub hops: u32,
    pub payload: Payload,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub tick: u64,
    pub src: Id,
    pub dst: Id,
    pub kind: &'static str,
    pub hops: u32,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MessageStats {
    pub sent: BTreeMap<Id, u64>,
    pub received: BTreeMap<Id, u64>,
    /// Ticks each robot was present.
    pub robot_ticks: BTreeMap<Id, u64>,
    /// Messages put on the wire per tick.
    pub sent_per_tick: Vec<u64>,
    pub by_kind: BTreeMap<&'static str, u64>,
}

impl MessageStats {
    pub fn total_sent(&self) -> u64 {
        self.sent.values().sum()
    }

    /// Messages per robot per tick, averaged over robots.
    pub fn per_robot_rate(&self) -> f64 {
        let ticks: u64 = self.robot_ticks.values().sum();
        if ticks == 0 {
            0.0
        } else {
            self.total_sent() as f64 / ticks as f64
        }
    }

    /// Messages per tick across the system.
    pub fn total_rate(&self) -> f64 {
        if self.sent_per_tick.is_empty() {
            0.0
        } else {
            self.total_sent() as f64 / self.sent_per_tick.len() as f64
        }
    }

    pub fn rate_of(&self, id: Id) -> f64 {
        match self.robot_ticks.get(&id) {
            Some(&t) if t > 0 => *self.sent.get(&id).unwrap_or(&0) as f64 / t as f64,
            _ => 0.0,
        }
    }
}

/// Tick-barrier message bus.
#[derive(Clone, Debug, Default)]
pub struct Bus {
    adjacency: Adjacency,
    routes: BTreeMap<(Id, Id), Id>,
    in_flight: Vec<Message>,
    seq: u64,
    stats: MessageStats,
    trace: Option<Vec<TraceRow>>,
}

impl Bus {
    pub fn new(record_trace: bool) -> Self {
        Bus {
            trace: record_trace.then(Vec::new),
            ..Bus::default()
        }
    }

    /// Installs the graph for `tick` and counts the tick for every robot in it.
    pub fn begin_tick(&mut self, tick: u64, adjacency: Adjacency) -> Result<()> {
        if !is_connected(&adjacency) {
            return Err(Error::DisconnectedGraph { tick });
        }
        if adjacency != self.adjacency {
            self.adjacency = adjacency;
            self.routes.clear();
        }
        for &id in self.adjacency.keys() {
            *self.stats.robot_ticks.entry(id).or_default() += 1;
        }
        let len = tick as usize + 1;
        if self.stats.sent_per_tick.len() < len {
            self.stats.sent_per_tick.resize(len, 0);
        }
        Ok(())
    }

    pub fn adjacency(&self) -> &Adjacency {
        &self.adjacency
    }

    pub fn neighbors(&self, id: Id) -> impl Iterator<Item = Id> + '_ {
        self.adjacency.get(&id).into_iter().flatten().copied()
    }

    fn route(&mut self, src: Id, dst: Id) -> Result<Id> {
        if let Some(&hop) = self.routes.get(&(src, dst)) {
            return Ok(hop);
        }
        let hop = next_hop(&self.adjacency, src, dst)?;
        self.routes.insert((src, dst), hop);
        Ok(hop)
    }

    fn push(&mut self, src: Id, dst: Id, tick: u64, payload: Payload) {
        *self.stats.sent.entry(src).or_default() += 1;
        *self.stats.by_kind.entry(payload.kind()).or_default() += 1;
        if let Some(slot) = self.stats.sent_per_tick.get_mut(tick as usize) {
            *slot += 1;
        }
        self.in_flight.push(Message {
            src,
            dst,
            sent_tick: tick,
            seq: self.seq,
            payload,
        });
        self.seq += 1;
    }

    /// Sends `payload` from `src` to `dst`, wrapping it in a relay envelope
    /// when they are not adjacent.
    pub fn send(&mut self, src: Id, dst: Id, tick: u64, payload: Payload) -> Result<()> {
        let hop = self.route(src, dst)?;
        if hop == dst {
            self.push(src, dst, tick, payload);
        } else {
            let envelope = Payload::Relay {
                origin: src,
                final_dst: dst,
                origin_tick: tick,
                hops: 1,
                inner: Box::new(payload),
            };
            self.push(src, hop, tick, envelope);
        }
        Ok(())
    }

    /// Delivers everything sent before `tick`. Relay envelopes that have not
    /// reached their destination are forwarded on behalf of the current holder.
    pub fn deliver(&mut self, tick: u64) -> Result<Vec<Delivery>> {
        let (mut due, pending): (Vec<Message>, Vec<Message>) = std::mem::take(&mut self.in_flight)
            .into_iter()
            .partition(|m| m.sent_tick < tick);
        self.in_flight = pending;
        due.sort_by_key(|m| (m.src, m.dst, m.seq));
        let mut out = Vec::with_capacity(due.len());
        for m in due {
            if !self.adjacency.contains_key(&m.dst) {
                // Recipient left the network.
                continue;
            }
            *self.stats.received.entry(m.dst).or_default() += 1;
            let hops = match &m.payload {
                Payload::Relay { hops, .. } => *hops,
                _ => 1,
            };
            if let Some(trace) = &mut self.trace {
                trace.push(TraceRow {
                    tick,
                    src: m.src,
                    dst: m.dst,
                    kind: m.payload.kind(),
                    hops,
                });
            }
            match m.payload {
                Payload::Relay {
                    origin,
                    final_dst,
                    origin_tick,
                    hops,
                    inner,
                } => {
                    if final_dst == m.dst {
                        out.push(Delivery {
                            src: origin,
                            dst: final_dst,
                            sent_tick: origin_tick,
                            hops,
                            payload: *inner,
                        });
                    } else if self.adjacency.contains_key(&final_dst) {
                        let next = self.route(m.dst, final_dst)?;
                        let envelope = Payload::Relay {
                            origin,
                            final_dst,
                            origin_tick,
                            hops: hops + 1,
                            inner,
                        };
                        self.push(m.dst, next, tick, envelope);
                    }
                }
                payload => out.push(Delivery {
                    src: m.src,
                    dst: m.dst,
                    sent_tick: m.sent_tick,
                    hops: 1,
                    payload,
                }),
            }
        }
        Ok(out)
    }

    pub fn stats(&self) -> &MessageStats {
        &self.stats
    }

    pub fn trace(&self) -> Option<&[TraceRow]> {
        self.trace.as_deref()
    }

    pub fn write_trace<W: Write>(&self, w: W) -> Result<()> {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["tick", "src", "dst", "type", "hops"])?;
        for row in self.trace.iter().flatten() {
            csv.write_record([
                row.tick.to_string(),
                row.src.to_string(),
                row.dst.to_string(),
                row.kind.to_string(),
                row.hops.to_string(),
            ])?;
        }
        csv.flush()?;
        Ok(())
    }
}
