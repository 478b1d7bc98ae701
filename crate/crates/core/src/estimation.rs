//! Decentralized estimation of global quantities.
//!
//! [`TrackingEstimator`] lets every robot follow time-varying scalars that only
//! the informed robot observes: the target position and velocity and the
//! plane rotation and its rate, 24 scalars in total. [`ExtremumConsensus`]
//! floods a minimum (or maximum) over the graph with a periodic reset and is
//! used to agree on the smallest phase gap, from which each robot derives its
//! safety bound `sigma_hat`.

use crate::error::{Error, Result};
use crate::geometry::{orthonormalize, skew, vee, Mat3, TargetFrame, Vec3};
use crate::network::{Adjacency, Bus, CommGraph, Id, Payload, Topology};
use crate::safety::sigma;

/// Number of tracked scalars: `p_T`, `v_T`, `R_T` and `R_T_dot` (row-major).
pub const GLOBALS: usize = 24;

pub fn globals_of(frame: &TargetFrame) -> Vec<f64> {
    let mut v = Vec::with_capacity(GLOBALS);
    v.extend(frame.position.iter());
    v.extend(frame.velocity.iter());
    v.extend(frame.rotation.transpose().iter());
    v.extend(frame.rotation_rate().transpose().iter());
    v
}

/// Time derivatives of [`globals_of`] for piecewise-constant `v_T` and
/// angular velocity.
pub fn global_rates_of(frame: &TargetFrame) -> Vec<f64> {
    let w = skew(&frame.angular_velocity);
    let r_dot = w * frame.rotation;
    let mut v = Vec::with_capacity(GLOBALS);
    v.extend(frame.velocity.iter());
    v.extend([0.0; 3]);
    v.extend(r_dot.transpose().iter());
    v.extend((w * r_dot).transpose().iter());
    v
}

/// Frame reconstructed from tracked scalars. The rotation is projected back
/// onto a rotation matrix; if the estimate is degenerate `fallback` is used.
pub fn frame_from_globals(values: &[f64], fallback: &Mat3) -> TargetFrame {
    let vec3 = |k: usize| Vec3::new(values[k], values[k + 1], values[k + 2]);
    let mat3 = |k: usize| Mat3::from_row_slice(&values[k..k + 9]);
    let rotation = orthonormalize(&mat3(6)).unwrap_or(*fallback);
    let angular_velocity = vee(&(mat3(15) * rotation.transpose()));
    TargetFrame {
        position: vec3(0),
        velocity: vec3(3),
        rotation,
        angular_velocity,
    }
}

/// A neighbor's estimate as received, `age` ticks old.
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborSample {
    pub values: Vec<f64>,
    pub rates: Vec<f64>,
    pub age: u64,
}

/// Values and rates a robot broadcasts after a step.
#[derive(Clone, Debug, PartialEq)]
pub struct EstimatePacket {
    pub values: Vec<f64>,
    pub rates: Vec<f64>,
}

/// Consensus tracking with Euler integration at the control period.
///
/// Informed robot: `eta_hat_dot = eta_dot + k (eta - eta_hat)`. Others average
/// rates and (latency-extrapolated) estimates over their closed neighborhood:
/// `eta_hat_dot = ave(rates) + k (ave(estimates) - eta_hat)`.
#[derive(Clone, Debug)]
pub struct TrackingEstimator {
    pub robot: Id,
    pub informed: bool,
    pub k_eta: f64,
    pub period: f64,
    values: Vec<f64>,
    rates: Vec<f64>,
}

impl TrackingEstimator {
    pub fn new(robot: Id, informed: bool, initial: Vec<f64>, k_eta: f64, period: f64) -> Self {
        let rates = vec![0.0; initial.len()];
        TrackingEstimator {
            robot,
            informed,
            k_eta,
            period,
            values: initial,
            rates,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    /// Sets the last rates without stepping, e.g. from an initial handshake.
    pub fn set_rates(&mut self, rates: Vec<f64>) {
        self.rates = rates;
    }

    fn commit(&mut self, rates: Vec<f64>) -> EstimatePacket {
        let packet = EstimatePacket {
            values: self.values.clone(),
            rates: rates.clone(),
        };
        for (v, r) in self.values.iter_mut().zip(&rates) {
            *v += self.period * r;
        }
        self.rates = rates;
        packet
    }

    /// Informed update. Returns the packet to broadcast: current values and
    /// the rates used to advance them.
    pub fn step_informed(&mut self, truth: &[f64], truth_rates: &[f64]) -> Result<EstimatePacket> {
        if !self.informed {
            return Err(Error::NotInformed { robot: self.robot });
        }
        let k = self.k_eta;
        let rates = self
            .values
            .iter()
            .zip(truth)
            .zip(truth_rates)
            .map(|((v, eta), eta_dot)| eta_dot + k * (eta - v))
            .collect();
        Ok(self.commit(rates))
    }

    pub fn step_follower(&mut self, neighbors: &[NeighborSample]) -> EstimatePacket {
        let count = (neighbors.len() + 1) as f64;
        let k = self.k_eta;
        let rates = (0..self.values.len())
            .map(|q| {
                let mut rate_sum = self.rates[q];
                let mut value_sum = self.values[q];
                for s in neighbors {
                    rate_sum += s.rates[q];
                    value_sum += s.values[q] + s.age as f64 * self.period * s.rates[q];
                }
                rate_sum / count + k * (value_sum / count - self.values[q])
            })
            .collect();
        self.commit(rates)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Extremum {
    Min,
    Max,
}

impl Extremum {
    fn pick(self, a: f64, b: f64) -> f64 {
        match self {
            Extremum::Min => a.min(b),
            Extremum::Max => a.max(b),
        }
    }
}

/// Flooding with reset every `m` ticks. Agreement over a window starting at
/// tick `k0` becomes available as [`Self::agreed`] at `k0 + m`.
#[derive(Clone, Debug)]
pub struct ExtremumConsensus {
    pub m: u64,
    pub direction: Extremum,
    gamma: f64,
    agreed: Option<f64>,
}

impl ExtremumConsensus {
    pub fn new(m: u64, direction: Extremum) -> Self {
        ExtremumConsensus {
            m: m.max(1),
            direction,
            gamma: f64::NAN,
            agreed: None,
        }
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn agreed(&self) -> Option<f64> {
        self.agreed
    }

    /// One tick: fold in neighbor values, and on a reset tick record the
    /// finished window's result and restart from `local`.
    pub fn step(&mut self, k: u64, local: f64, neighbors: &[f64]) -> f64 {
        let folded = neighbors.iter().fold(self.gamma, |acc, &g| {
            if acc.is_nan() {
                g
            } else {
                self.direction.pick(acc, g)
            }
        });
        if k % self.m == 0 {
            if k > 0 && !folded.is_nan() {
                self.agreed = Some(folded);
            }
            self.gamma = local;
        } else {
            self.gamma = folded;
        }
        self.gamma
    }
}

/// `inf` before the first agreement, otherwise `r / |sin(agreed / 2)|`.
pub fn sigma_hat(k: u64, m: u64, agreed: Option<f64>, r: f64) -> Result<f64> {
    match agreed {
        Some(delta) if k >= m => sigma(delta, r),
        _ => Ok(f64::INFINITY),
    }
}

/// Outcome of [`tracking_run`].
#[derive(Clone, Debug)]
pub struct TrackingRun {
    pub times: Vec<f64>,
    /// `max_i |eta_hat_i - eta|` per tick.
    pub max_error: Vec<f64>,
}

impl TrackingRun {
    pub fn max_error_after(&self, t0: f64) -> f64 {
        self.times
            .iter()
            .zip(&self.max_error)
            .filter(|(t, _)| **t >= t0)
            .map(|(_, e)| *e)
            .fold(0.0, f64::max)
    }
}

/// Tracks one scalar `signal(t) -> (eta, eta_dot)` known only to robot 1, with
/// every estimate exchanged over the bus. Robots start at `initial`.
pub fn tracking_run(
    n: usize,
    topology: Topology,
    k_eta: f64,
    period: f64,
    duration: f64,
    initial: f64,
    signal: impl Fn(f64) -> (f64, f64),
) -> Result<TrackingRun> {
    if n < 2 {
        return Err(Error::TooFewRobots { n });
    }
    let ids: Vec<Id> = (1..=n).collect();
    let graph = CommGraph::new(ids.clone(), topology);
    let mut estimators: Vec<TrackingEstimator> = ids
        .iter()
        .map(|&id| TrackingEstimator::new(id, id == 1, vec![initial], k_eta, period))
        .collect();
    let mut bus = Bus::new(false);
    let mut inbox: Vec<Vec<NeighborSample>> = vec![Vec::new(); n];
    let ticks = (duration / period).round() as u64;
    let mut run = TrackingRun {
        times: Vec::with_capacity(ticks as usize + 1),
        max_error: Vec::with_capacity(ticks as usize + 1),
    };
    for tick in 0..=ticks {
        let t = tick as f64 * period;
        let adj: Adjacency = graph.checked_adjacency(tick)?;
        bus.begin_tick(tick, adj)?;
        for d in bus.deliver(tick)? {
            if let Payload::Estimate { values, rates } = d.payload {
                inbox[d.dst - 1].push(NeighborSample {
                    values,
                    rates,
                    age: tick - d.sent_tick,
                });
            }
        }
        let (eta, eta_dot) = signal(t);
        run.times.push(t);
        run.max_error.push(
            estimators
                .iter()
                .map(|e| (e.values()[0] - eta).abs())
                .fold(0.0, f64::max),
        );
        for (k, est) in estimators.iter_mut().enumerate() {
            let samples = std::mem::take(&mut inbox[k]);
            let packet = if est.informed {
                est.step_informed(&[eta], &[eta_dot])?
            } else {
                est.step_follower(&samples)
            };
            let id = est.robot;
            let neighbors: Vec<Id> = bus.neighbors(id).collect();
            for j in neighbors {
                bus.send(
                    id,
                    j,
                    tick,
                    Payload::Estimate {
                        values: packet.values.clone(),
                        rates: packet.rates.clone(),
                    },
                )?;
            }
        }
    }
    Ok(run)
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use approx::assert_relative_eq;
    use proptest::prelude::*;

    use super::*;
    use crate::geometry::plane_rotation;
    use crate::network::hop_distances;

    fn frame() -> TargetFrame {
        TargetFrame {
            position: Vec3::new(1.0, -2.0, 0.5),
            velocity: Vec3::new(0.0, 0.2, 0.2),
            rotation: plane_rotation(&Vec3::new(0.0, 1.0, 1.0)).unwrap(),
            angular_velocity: Vec3::new(0.0, 0.15, 0.05),
        }
    }

    #[test]
    fn globals_round_trip() {
        let f = frame();
        let g = globals_of(&f);
        assert_eq!(g.len(), GLOBALS);
        let back = frame_from_globals(&g, &Mat3::identity());
        assert_relative_eq!(back.position, f.position);
        assert_relative_eq!(back.velocity, f.velocity);
        assert_relative_eq!(back.rotation, f.rotation, epsilon = 1e-12);
        assert_relative_eq!(back.angular_velocity, f.angular_velocity, epsilon = 1e-12);
    }

    #[test]
    fn global_rates_match_finite_differences() {
        let f = frame();
        let h = 1e-6;
        let a = globals_of(&f.advance(h));
        let b = globals_of(&f.advance(-h));
        for ((x, y), r) in a.iter().zip(&b).zip(global_rates_of(&f)) {
            assert_relative_eq!((x - y) / (2.0 * h), r, epsilon = 1e-6);
        }
    }

    #[test]
    fn constant_quantity_is_a_fixed_point() {
        let run = tracking_run(5, Topology::Ring, 5.0, 1e-3, 2.0, 3.0, |_| (3.0, 0.0)).unwrap();
        assert!(run.max_error.iter().all(|e| *e == 0.0));
    }

    #[test]
    fn ramp_is_tracked() {
        let run = tracking_run(5, Topology::Ring, 5.0, 1e-3, 8.0, 0.0, |t| (t, 1.0)).unwrap();
        assert!(
            run.max_error_after(5.0) < 0.05,
            "{}",
            run.max_error_after(5.0)
        );
    }

    #[test]
    fn disconnected_schedule_aborts() {
        let topo = Topology::Schedule(vec![
            vec![(1, 2), (2, 3), (3, 4), (4, 5)],
            vec![(1, 2), (2, 3), (4, 5)],
        ]);
        let err = tracking_run(5, topo, 5.0, 1e-2, 1.0, 0.0, |t| (t, 1.0)).unwrap_err();
        assert!(matches!(err, Error::DisconnectedGraph { tick: 1 }));
    }

    #[test]
    fn follower_cannot_use_truth() {
        let mut e = TrackingEstimator::new(3, false, vec![0.0], 1.0, 0.01);
        assert!(matches!(
            e.step_informed(&[1.0], &[0.0]),
            Err(Error::NotInformed { robot: 3 })
        ));
    }

    /// Synchronous flooding on an explicit graph, to compare against.
    fn flood(
        adj: &Adjacency,
        values: &BTreeMap<Id, f64>,
        steps: usize,
        dir: Extremum,
    ) -> BTreeMap<Id, f64> {
        let mut cur = values.clone();
        for _ in 0..steps {
            cur = adj
                .iter()
                .map(|(i, nb)| (*i, nb.iter().fold(cur[i], |a, j| dir.pick(a, cur[j]))))
                .collect();
        }
        cur
    }

    fn run_consensus(
        adj: &Adjacency,
        values: &[f64],
        m: u64,
        dir: Extremum,
        ticks: u64,
    ) -> Vec<ExtremumConsensus> {
        let ids: Vec<Id> = adj.keys().copied().collect();
        let mut nodes: Vec<ExtremumConsensus> =
            ids.iter().map(|_| ExtremumConsensus::new(m, dir)).collect();
        // Values published at the previous tick.
        let mut published: BTreeMap<Id, f64> = BTreeMap::new();
        for k in 0..=ticks {
            let mut next = BTreeMap::new();
            for (idx, id) in ids.iter().enumerate() {
                let nb: Vec<f64> = adj[id]
                    .iter()
                    .filter_map(|j| published.get(j).copied())
                    .collect();
                next.insert(*id, nodes[idx].step(k, values[idx], &nb));
            }
            published = next;
        }
        nodes
    }

    #[test]
    fn max_consensus_on_a_ring() {
        let adj = CommGraph::new(vec![1, 2, 3, 4], Topology::Ring).adjacency(0);
        let values = [1.0, 3.0, 2.0, 0.0];
        let nodes = run_consensus(&adj, &values, 4, Extremum::Max, 4);
        let oracle = flood(&adj, &(1..=4).zip(values).collect(), 3, Extremum::Max);
        for n in &nodes {
            assert_eq!(n.agreed(), Some(3.0));
        }
        assert!(oracle.values().all(|v| *v == 3.0));
    }

    #[test]
    fn min_consensus_on_a_line() {
        let adj = CommGraph::new(vec![1, 2, 3, 4, 5], Topology::Line).adjacency(0);
        let values = [5.0, 4.0, 3.0, 2.0, 1.0];
        assert_eq!(hop_distances(&adj, 1)[&5], 4);
        for n in run_consensus(&adj, &values, 5, Extremum::Min, 5) {
            assert_eq!(n.agreed(), Some(1.0));
        }
        // One window short of the diameter does not reach the far end.
        let partial = flood(&adj, &(1..=5).zip(values).collect(), 3, Extremum::Min);
        assert_eq!(partial[&1], 2.0);
    }

    #[test]
    fn equal_values_stay_put() {
        let adj = CommGraph::new(vec![1, 2, 3], Topology::Ring).adjacency(0);
        for n in run_consensus(&adj, &[0.7; 3], 3, Extremum::Min, 10) {
            assert_eq!(n.gamma(), 0.7);
            assert_eq!(n.agreed(), Some(0.7));
        }
    }

    #[test]
    fn sigma_hat_sentinel_and_value() {
        assert_eq!(sigma_hat(3, 5, Some(1.0), 0.25).unwrap(), f64::INFINITY);
        assert_eq!(sigma_hat(7, 5, None, 0.25).unwrap(), f64::INFINITY);
        assert_relative_eq!(
            sigma_hat(5, 5, Some(std::f64::consts::TAU / 5.0), 0.25).unwrap(),
            0.42533,
            epsilon = 1e-5
        );
        assert!(sigma_hat(5, 5, Some(0.0), 0.25).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn consensus_matches_flood_oracle(values in prop::collection::vec(-10.0f64..10.0, 2..9), line: bool) {
            let n = values.len();
            let topo = if line { Topology::Line } else { Topology::Ring };
            let adj = CommGraph::new((1..=n).collect(), topo).adjacency(0);
            let m = n as u64;
            let oracle = flood(&adj, &(1..=n).zip(values.iter().copied()).collect(), n, Extremum::Min);
            for node in run_consensus(&adj, &values, m, Extremum::Min, m) {
                prop_assert_eq!(node.agreed(), Some(oracle[&1]));
            }
        }

        #[test]
        fn sinusoid_plus_ramp_is_tracked(amp in 0.5f64..2.0, w in 0.2f64..1.0, slope in -0.5f64..0.5, phase in 0.0f64..std::f64::consts::TAU) {
            let run = tracking_run(5, Topology::Ring, 20.0, 1e-2, 7.0, 0.0, |t| {
                (slope * t + amp * (w * t + phase).sin(), slope + amp * w * (w * t + phase).cos())
            }).unwrap();
            prop_assert!(run.max_error_after(5.0) < 0.05 * amp);
        }
    }
}
