//! A simulated robot. Apart from its own position (and, for the informed
//! robot, the target data) everything it knows arrives as delivered messages.

use std::collections::BTreeMap;

use crate::control::Controller;
use crate::error::{Error, Result};
use crate::estimation::{
    frame_from_globals, sigma_hat, EstimatePacket, Extremum, ExtremumConsensus, NeighborSample,
    TrackingEstimator,
};
use crate::geometry::{
    cartesian_command, to_cylindrical, CylCoords, CylVelocity, Mat3, TargetFrame, Vec3,
};
use crate::network::{Delivery, Id, Payload};
use crate::phase::{PhaseUnwrapper, RingSeam, RingView};

/// Target data as the informed robot observes it.
#[derive(Clone, Debug)]
pub(crate) struct Truth {
    pub frame: TargetFrame,
    pub values: Vec<f64>,
    pub rates: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct PhaseSample {
    pub phi: f64,
    pub rate: f64,
    pub sent_tick: u64,
}

pub(crate) struct RobotInput<'a> {
    pub tick: u64,
    pub position: Vec3,
    /// Present for the informed robot, or for everyone with oracle globals.
    pub truth: Option<&'a Truth>,
    pub inbox: Vec<Delivery>,
    pub neighbors: Vec<Id>,
}

#[derive(Clone, Debug)]
pub(crate) struct RobotOutput {
    pub v: CylVelocity,
    pub u: Vec3,
    /// Frame estimate the command was computed against.
    pub frame: TargetFrame,
    pub sigma_hat: f64,
    pub outgoing: Vec<(Id, Payload)>,
}

#[derive(Clone, Debug)]
pub(crate) struct Robot {
    pub id: Id,
    pub seam: RingSeam,
    pub pred: Id,
    pub succ: Id,
    pub controller: Controller,
    estimator: Option<TrackingEstimator>,
    unwrapper: PhaseUnwrapper,
    phases: BTreeMap<Id, PhaseSample>,
    estimates: BTreeMap<Id, (EstimatePacket, u64)>,
    gamma: Option<(ExtremumConsensus, f64)>,
    staleness_bound: u64,
    period: f64,
    last_rotation: Mat3,
    last_report: Option<PhaseSample>,
}

pub(crate) struct RobotParams {
    pub id: Id,
    pub controller: Controller,
    /// `None` with oracle globals.
    pub estimator: Option<TrackingEstimator>,
    /// Reset period and safety radius for the phase-gap consensus.
    pub gamma: Option<(u64, f64)>,
    pub staleness_bound: u64,
    pub period: f64,
}

impl Robot {
    pub fn new(p: RobotParams) -> Self {
        Robot {
            id: p.id,
            seam: RingSeam::default(),
            pred: p.id,
            succ: p.id,
            controller: p.controller,
            estimator: p.estimator,
            unwrapper: PhaseUnwrapper::new(),
            phases: BTreeMap::new(),
            estimates: BTreeMap::new(),
            gamma: p
                .gamma
                .map(|(m, r)| (ExtremumConsensus::new(m, Extremum::Min), r)),
            staleness_bound: p.staleness_bound,
            period: p.period,
            last_rotation: Mat3::identity(),
            last_report: None,
        }
    }

    fn frame(&self, truth: Option<&Truth>) -> TargetFrame {
        match (&self.estimator, truth) {
            (Some(est), _) => frame_from_globals(est.values(), &self.last_rotation),
            (None, Some(t)) => t.frame.clone(),
            (None, None) => unreachable!("oracle globals without truth"),
        }
    }

    /// Measures the initial phase, continuous with `reference` when given.
    pub fn init_phase(
        &mut self,
        tick: u64,
        position: &Vec3,
        truth: Option<&Truth>,
        reference: Option<f64>,
    ) -> Result<f64> {
        let frame = self.frame(truth);
        let raw = to_cylindrical(position, &frame)?.phi;
        self.unwrapper = match reference {
            Some(r) => PhaseUnwrapper::near(raw, r),
            None => {
                let mut u = PhaseUnwrapper::new();
                u.update(raw);
                u
            }
        };
        let phi = self.unwrapper.last().expect("initialized");
        self.last_report = Some(PhaseSample {
            phi,
            rate: 0.0,
            sent_tick: tick,
        });
        Ok(phi)
    }

    pub fn last_report(&self) -> Option<PhaseSample> {
        self.last_report
    }

    pub fn estimate_packet(&self) -> Option<EstimatePacket> {
        self.estimator.as_ref().map(|e| EstimatePacket {
            values: e.values().to_vec(),
            rates: e.rates().to_vec(),
        })
    }

    /// New ring neighbors plus their latest phase reports (reconfiguration
    /// handshake).
    pub fn retarget(&mut self, seam: RingSeam, pred: Id, succ: Id, reports: &[(Id, PhaseSample)]) {
        self.seam = seam;
        self.pred = pred;
        self.succ = succ;
        for (id, s) in reports {
            self.phases.insert(*id, *s);
        }
        self.phases.retain(|id, _| *id == pred || *id == succ);
    }

    /// Seeds a neighbor's estimate (initial or reconfiguration handshake).
    pub fn seed_estimate(&mut self, from: Id, packet: EstimatePacket, tick: u64) {
        self.estimates.insert(from, (packet, tick));
    }

    fn neighbor_phase(&self, id: Id, tick: u64) -> Result<f64> {
        let s = self.phases.get(&id).ok_or(Error::StaleNeighborData {
            robot: self.id,
            neighbor: id,
            age: u64::MAX,
            bound: self.staleness_bound,
        })?;
        let age = tick.saturating_sub(s.sent_tick);
        if age > self.staleness_bound {
            return Err(Error::StaleNeighborData {
                robot: self.id,
                neighbor: id,
                age,
                bound: self.staleness_bound,
            });
        }
        Ok(s.phi + age as f64 * self.period * s.rate)
    }

    pub fn step(&mut self, input: RobotInput<'_>) -> Result<RobotOutput> {
        let tick = input.tick;
        let mut gammas = Vec::new();
        for d in input.inbox {
            match d.payload {
                Payload::Phase { phi, phi_rate } => {
                    let newer = self
                        .phases
                        .get(&d.src)
                        .map_or(true, |s| s.sent_tick <= d.sent_tick);
                    if newer && (d.src == self.pred || d.src == self.succ) {
                        self.phases.insert(
                            d.src,
                            PhaseSample {
                                phi,
                                rate: phi_rate,
                                sent_tick: d.sent_tick,
                            },
                        );
                    }
                }
                Payload::Estimate { values, rates } => {
                    self.estimates
                        .insert(d.src, (EstimatePacket { values, rates }, d.sent_tick));
                }
                Payload::Gamma { gamma } => gammas.push(gamma),
                Payload::Relay { .. } => unreachable!("relays are unwrapped by the bus"),
            }
        }

        let frame = self.frame(input.truth);
        self.last_rotation = frame.rotation;
        let mut q: CylCoords = to_cylindrical(&input.position, &frame)?;
        q.phi = self.unwrapper.update(q.phi);

        let pred = self.neighbor_phase(self.pred, tick)?;
        let succ = self.neighbor_phase(self.succ, tick)?;
        let view = RingView::new(self.seam, q.phi, pred, succ);

        let sigma = match &mut self.gamma {
            Some((consensus, r)) => {
                consensus.step(tick, view.gap, &gammas);
                sigma_hat(tick, consensus.m, consensus.agreed(), *r)?
            }
            None => f64::INFINITY,
        };

        let v = self.controller.command(&q, &view, sigma, self.period)?;
        let u = cartesian_command(&input.position, &frame, &v)?;

        let mut outgoing = Vec::new();
        let report = Payload::Phase {
            phi: q.phi,
            phi_rate: v.phi,
        };
        self.last_report = Some(PhaseSample {
            phi: q.phi,
            rate: v.phi,
            sent_tick: tick,
        });
        outgoing.push((self.pred, report.clone()));
        if self.succ != self.pred {
            outgoing.push((self.succ, report));
        }

        if let Some(est) = &mut self.estimator {
            let packet = match input.truth {
                Some(t) if est.informed => est.step_informed(&t.values, &t.rates)?,
                _ => {
                    let samples: Vec<NeighborSample> = input
                        .neighbors
                        .iter()
                        .filter_map(|j| self.estimates.get(j))
                        .map(|(p, sent)| NeighborSample {
                            values: p.values.clone(),
                            rates: p.rates.clone(),
                            age: tick.saturating_sub(*sent),
                        })
                        .collect();
                    est.step_follower(&samples)
                }
            };
            for &j in &input.neighbors {
                outgoing.push((
                    j,
                    Payload::Estimate {
                        values: packet.values.clone(),
                        rates: packet.rates.clone(),
                    },
                ));
            }
        }
        if let Some((consensus, _)) = &self.gamma {
            for &j in &input.neighbors {
                outgoing.push((
                    j,
                    Payload::Gamma {
                        gamma: consensus.gamma(),
                    },
                ));
            }
        }

        Ok(RobotOutput {
            v,
            u,
            frame,
            sigma_hat: sigma,
            outgoing,
        })
    }
}
