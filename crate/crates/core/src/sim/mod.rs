//! Closed-loop simulation: true target and robot kinematics, per-robot
//! controllers and estimators, and the message bus between them.
//!
//! Each control tick `k` (time `k * control_period`):
//!
//! 1. scheduled robot additions/removals are applied;
//! 2. the bus installs the tick's graph and delivers what was sent before;
//! 3. every robot steps on its own data and queues its messages;
//! 4. the tick is logged against the true target;
//! 5. robots and target are integrated to the next tick.
//!
//! Robot labels are ring indices (1-based, by increasing initial phase);
//! robots added later take the next unused label.

pub mod log;
pub mod metrics;
pub(crate) mod robot;
pub mod scenario;

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::control::Controller;
use crate::error::{Error, Result};
use crate::estimation::{global_rates_of, globals_of, TrackingEstimator, GLOBALS};
use crate::geometry::{advance_frame, cartesian_command, to_cylindrical, TargetFrame, Vec3};
use crate::network::{Bus, CommGraph, Delivery, Id, Topology};
use crate::phase::{assign_ring, ring_views, wrap_to_2pi, wrap_to_pi, PhaseUnwrapper, RingSeam};
use crate::safety::sigma;

use self::log::{RobotRecord, SimLog, TickRecord};
use self::robot::{Robot, RobotInput, RobotOutput, RobotParams, Truth};
use self::scenario::{Event, Hold, InitialGuess, Law, Scenario};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Step robots on the rayon pool. Results are identical either way.
    pub parallel: bool,
    /// Record every delivered message (also enabled by `network.trace`).
    pub record_trace: bool,
}

struct Agent {
    robot: Robot,
    p: Vec3,
    truth_phase: PhaseUnwrapper,
    xi: f64,
}

struct World<'a> {
    s: &'a Scenario,
    period: f64,
    topology: Topology,
    informed: Id,
    oracle: bool,
    n_max: usize,
    next_label: Id,
    agents: Vec<Agent>,
    frame: TargetFrame,
    bus: Bus,
}

fn vec3(a: [f64; 3]) -> Vec3 {
    Vec3::new(a[0], a[1], a[2])
}

fn truth_of(frame: &TargetFrame) -> Truth {
    Truth {
        frame: frame.clone(),
        values: globals_of(frame),
        rates: global_rates_of(frame),
    }
}

/// Max absolute error of each group of tracked scalars.
fn estimation_error(estimate: &TargetFrame, truth: &TargetFrame) -> [f64; 4] {
    let (a, b) = (globals_of(estimate), globals_of(truth));
    let group = |r: std::ops::Range<usize>| r.map(|k| (a[k] - b[k]).abs()).fold(0.0, f64::max);
    [group(0..3), group(3..6), group(6..15), group(15..GLOBALS)]
}

/// Robot position after one control period under its held command.
fn integrate(p: Vec3, out: &RobotOutput, hold: Hold, substeps: usize, period: f64) -> Result<Vec3> {
    match hold {
        Hold::Cartesian => Ok(p + out.u * period),
        Hold::Cylindrical => {
            let h = period / substeps as f64;
            let f =
                |tau: f64, p: &Vec3| cartesian_command(p, &advance_frame(&out.frame, tau), &out.v);
            let mut p = p;
            for s in 0..substeps {
                let tau = s as f64 * h;
                let k1 = f(tau, &p)?;
                let k2 = f(tau + 0.5 * h, &(p + k1 * (0.5 * h)))?;
                let k3 = f(tau + 0.5 * h, &(p + k2 * (0.5 * h)))?;
                let k4 = f(tau + h, &(p + k3 * h))?;
                p += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
            }
            Ok(p)
        }
    }
}

/// Warnings about the initial configuration that do not stop the run.
fn initial_warnings(s: &Scenario, phases: &[(usize, f64)], rhos: &[f64]) -> Vec<String> {
    let mut w = Vec::new();
    let mut sorted: Vec<f64> = phases.iter().map(|p| p.1).collect();
    sorted.sort_by(f64::total_cmp);
    if sorted.windows(2).any(|p| p[1] - p[0] < 1e-12) {
        w.push("robots share an initial phase; ties ordered by input index".into());
    }
    if let (Law::V1star, Some(sp)) = (s.controller.law, s.controller.safety) {
        let bound = sp.r / (PI / s.n_max() as f64).sin() + 2.0 * sp.r;
        if !(s.controller.rho_star > bound) {
            w.push(format!(
                "rho_star = {} does not exceed r/sin(pi/n) + 2r = {bound:.6}",
                s.controller.rho_star
            ));
        }
        if rhos.iter().any(|rho| !(*rho > bound)) {
            w.push(format!(
                "an initial radius does not exceed r/sin(pi/n) + 2r = {bound:.6}"
            ));
        }
        let close = rhos
            .iter()
            .enumerate()
            .any(|(i, a)| rhos[i + 1..].iter().any(|b| (a - b).abs() < 2.0 * sp.r));
        if close {
            w.push(format!(
                "two initial radii differ by less than 2r = {}",
                2.0 * sp.r
            ));
        }
    }
    w
}

impl<'a> World<'a> {
    fn new(s: &'a Scenario, opts: &RunOptions) -> Result<(Self, Vec<String>, BTreeMap<Id, f64>)> {
        let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
        let frame = s.initial_frame()?;
        let positions = s.initial_positions(&frame, &mut rng);
        let n = positions.len();
        let xi_in = if s.controller.law == Law::V3 {
            s.xi_values(&mut rng)?
        } else {
            vec![0.0; n]
        };
        let local = positions
            .iter()
            .map(|p| to_cylindrical(p, &frame))
            .collect::<Result<Vec<_>>>()?;
        let phases: Vec<(usize, f64)> = local.iter().enumerate().map(|(i, q)| (i, q.phi)).collect();
        let order = assign_ring(&phases)?;
        let rhos: Vec<f64> = local.iter().map(|q| q.rho).collect();
        let warnings = initial_warnings(s, &phases, &rhos);

        let period = s.control_period;
        let gains = s.gains()?;
        let informed = s.estimator.informed;
        let oracle = s.estimator.oracle_globals;
        let n_max = s.n_max();
        let truth = truth_of(&frame);
        let mut agents = Vec::with_capacity(n);
        let mut xi = BTreeMap::new();
        for (pos, &idx) in order.iter().enumerate() {
            let id = pos + 1;
            let estimator = (!oracle).then(|| {
                let (values, rates) = match s.estimator.initial_guess {
                    InitialGuess::Truth => (truth.values.clone(), truth.rates.clone()),
                    InitialGuess::Identity => {
                        (globals_of(&TargetFrame::default()), vec![0.0; GLOBALS])
                    }
                };
                let mut e = TrackingEstimator::new(id, id == informed, values, gains.k_eta, period);
                e.set_rates(rates);
                e
            });
            let robot = Robot::new(RobotParams {
                id,
                controller: Controller::new(s.mode(xi_in[idx])?, gains, s.controller.rho_star),
                estimator,
                gamma: s.controller.safety.map(|sp| (n_max as u64, sp.r)),
                staleness_bound: s.network.staleness_bound,
                period,
            });
            if s.controller.law == Law::V3 {
                xi.insert(id, xi_in[idx]);
            }
            agents.push(Agent {
                robot,
                p: positions[idx],
                truth_phase: PhaseUnwrapper::new(),
                xi: xi_in[idx],
            });
        }

        let mut world = World {
            s,
            period,
            topology: s.topology()?,
            informed,
            oracle,
            n_max,
            next_label: n + 1,
            agents,
            frame,
            bus: Bus::new(opts.record_trace || s.network.trace),
        };
        for a in &mut world.agents {
            let truth_ref = (oracle || a.robot.id == informed).then_some(&truth);
            a.robot.init_phase(0, &a.p, truth_ref, None)?;
        }
        world.retarget_all();
        world.seed_estimates(0, None);
        Ok((world, warnings, xi))
    }

    fn labels(&self) -> Vec<Id> {
        self.agents.iter().map(|a| a.robot.id).collect()
    }

    fn graph(&self) -> CommGraph {
        CommGraph::new(self.labels(), self.topology.clone())
    }

    /// Ring neighbors and seam flags from the current order, with the
    /// neighbors' latest phase reports handed over directly.
    fn retarget_all(&mut self) {
        let n = self.agents.len();
        let reports: Vec<_> = self.agents.iter().map(|a| a.robot.last_report()).collect();
        for pos in 0..n {
            let (ip, is) = ((pos + n - 1) % n, (pos + 1) % n);
            let (pred, succ) = (self.agents[ip].robot.id, self.agents[is].robot.id);
            let handed: Vec<_> = [(pred, reports[ip]), (succ, reports[is])]
                .into_iter()
                .filter_map(|(id, r)| r.map(|r| (id, r)))
                .collect();
            self.agents[pos]
                .robot
                .retarget(RingSeam::at(pos, n), pred, succ, &handed);
        }
    }

    /// Hands estimates across communication edges at `tick`; with `only`
    /// set, just the edges touching that robot.
    fn seed_estimates(&mut self, tick: u64, only: Option<Id>) {
        let adj = self.graph().adjacency(tick);
        let packets: BTreeMap<Id, _> = self
            .agents
            .iter()
            .filter_map(|a| a.robot.estimate_packet().map(|p| (a.robot.id, p)))
            .collect();
        for a in &mut self.agents {
            let id = a.robot.id;
            for &j in adj.get(&id).into_iter().flatten() {
                if only.map_or(true, |o| o == id || o == j) {
                    if let Some(p) = packets.get(&j) {
                        a.robot.seed_estimate(j, p.clone(), tick);
                    }
                }
            }
        }
    }

    /// Current true unwrapped phase of each robot, without advancing the
    /// unwrappers.
    fn true_phases(&self) -> Result<Vec<f64>> {
        self.agents
            .iter()
            .map(|a| {
                let raw = to_cylindrical(&a.p, &self.frame)?.phi;
                Ok(match a.truth_phase.last() {
                    Some(last) => last + wrap_to_pi(raw - last),
                    None => raw,
                })
            })
            .collect()
    }

    fn remove(&mut self, robot: Id, time: f64) -> Result<()> {
        let pos = self
            .agents
            .iter()
            .position(|a| a.robot.id == robot)
            .ok_or_else(|| Error::Config(format!("robot {robot} is not present at t = {time}")))?;
        self.agents.remove(pos);
        self.retarget_all();
        Ok(())
    }

    fn add(
        &mut self,
        tick: u64,
        position: Vec3,
        xi: Option<f64>,
        log_xi: &mut BTreeMap<Id, f64>,
    ) -> Result<()> {
        let s = self.s;
        let raw = to_cylindrical(&position, &self.frame)?.phi;
        let phases = self.true_phases()?;
        let first = phases[0];
        let phi = first + wrap_to_2pi(raw - first);
        let pos = (1..phases.len())
            .find(|&i| phases[i] > phi)
            .unwrap_or(phases.len());

        let id = self.next_label;
        self.next_label += 1;
        let xi = xi.unwrap_or_else(|| {
            self.agents.iter().map(|a| a.xi).sum::<f64>() / self.agents.len() as f64
        });
        let gains = s.gains()?;
        let pred = &self.agents[pos - 1].robot;
        let estimator = pred.estimate_packet().map(|p| {
            let mut e = TrackingEstimator::new(id, false, p.values, gains.k_eta, self.period);
            e.set_rates(p.rates);
            e
        });
        let mut robot = Robot::new(RobotParams {
            id,
            controller: Controller::new(s.mode(xi)?, gains, s.controller.rho_star),
            estimator,
            gamma: s.controller.safety.map(|sp| (self.n_max as u64, sp.r)),
            staleness_bound: s.network.staleness_bound,
            period: self.period,
        });

        // Robot-side phase continuous with the neighbors' reports: the true
        // phase lies between them, so take the representative nearest the
        // midpoint.
        let n = self.agents.len();
        let pred_phi = self.agents[pos - 1].robot.last_report().map(|r| r.phi);
        let succ_phi = self.agents[pos % n].robot.last_report().map(|r| r.phi);
        let reference = match (pred_phi, succ_phi) {
            (Some(a), Some(b)) => {
                let b = if pos == n {
                    b + std::f64::consts::TAU
                } else {
                    b
                };
                Some(0.5 * (a + b))
            }
            _ => None,
        };
        let truth = truth_of(&self.frame);
        let truth_ref = self.oracle.then_some(&truth);
        robot.init_phase(tick, &position, truth_ref, reference)?;

        if s.controller.law == Law::V3 {
            log_xi.insert(id, xi);
        }
        self.agents.insert(
            pos,
            Agent {
                robot,
                p: position,
                truth_phase: PhaseUnwrapper::near(raw, phi),
                xi,
            },
        );
        self.retarget_all();
        self.seed_estimates(tick, Some(id));
        Ok(())
    }

    /// Advances the true target over one control period, splitting at
    /// segment boundaries.
    fn advance_target(&mut self, tick: u64) {
        let s = self.s;
        let start = tick as f64 * self.period;
        let end = (tick + 1) as f64 * self.period;
        let mut t = start;
        while t < end - 1e-12 {
            let (v, w, seg_end) = s.segment_at(t);
            self.frame.velocity = vec3(v);
            self.frame.angular_velocity = vec3(w);
            let stop = seg_end.min(end);
            self.frame = advance_frame(&self.frame, stop - t);
            t = stop;
        }
        let (v, w, _) = s.segment_at(end);
        self.frame.velocity = vec3(v);
        self.frame.angular_velocity = vec3(w);
    }
}

/// Runs a scenario to completion.
pub fn run(s: &Scenario, opts: &RunOptions) -> Result<SimLog> {
    s.validate()?;
    let (mut world, warnings, mut xi) = World::new(s, opts)?;
    let ticks = s.ticks();
    let substeps = s.substeps();
    let safety_r = s.controller.safety.map(|sp| sp.r);

    let mut events: Vec<(u64, Event)> = s
        .events
        .iter()
        .map(|e| ((e.time() / s.control_period).round() as u64, e.clone()))
        .collect();
    events.sort_by_key(|e| e.0);
    let mut events = events.into_iter().peekable();

    let mut records = Vec::with_capacity(ticks as usize + 1);
    for k in 0..=ticks {
        let t = k as f64 * world.period;
        while let Some((_, event)) = events.next_if(|e| e.0 <= k) {
            match event {
                Event::Remove { robot, time } => world.remove(robot, time),
                Event::Add {
                    position, xi: x, ..
                } => world.add(k, vec3(position), x, &mut xi),
            }
            .map_err(|e| e.at_tick(k))?;
        }

        let adjacency = world.graph().adjacency(k);
        world
            .bus
            .begin_tick(k, adjacency)
            .map_err(|e| e.at_tick(k))?;
        let mut inboxes: BTreeMap<Id, Vec<Delivery>> = BTreeMap::new();
        for d in world.bus.deliver(k).map_err(|e| e.at_tick(k))? {
            inboxes.entry(d.dst).or_default().push(d);
        }

        let truth = truth_of(&world.frame);
        let inputs: Vec<RobotInput> = world
            .agents
            .iter()
            .map(|a| {
                let id = a.robot.id;
                RobotInput {
                    tick: k,
                    position: a.p,
                    truth: (world.oracle || id == world.informed).then_some(&truth),
                    inbox: inboxes.remove(&id).unwrap_or_default(),
                    neighbors: world.bus.neighbors(id).collect(),
                }
            })
            .collect();
        let outputs: Vec<RobotOutput> = if opts.parallel {
            world
                .agents
                .par_iter_mut()
                .zip(inputs)
                .map(|(a, input)| a.robot.step(input))
                .collect::<Result<_>>()
        } else {
            world
                .agents
                .iter_mut()
                .zip(inputs)
                .map(|(a, input)| a.robot.step(input))
                .collect::<Result<_>>()
        }
        .map_err(|e| e.at_tick(k))?;

        for (a, out) in world.agents.iter().zip(&outputs) {
            for (dst, payload) in &out.outgoing {
                world
                    .bus
                    .send(a.robot.id, *dst, k, payload.clone())
                    .map_err(|e| e.at_tick(k))?;
            }
        }

        let mut phases = Vec::with_capacity(world.agents.len());
        let mut qs = Vec::with_capacity(world.agents.len());
        for a in &mut world.agents {
            let mut q = to_cylindrical(&a.p, &world.frame).map_err(|e| e.at_tick(k))?;
            q.phi = a.truth_phase.update(q.phi);
            phases.push(q.phi);
            qs.push(q);
        }
        let views = ring_views(&phases);
        let gaps: Vec<f64> = views.iter().map(|v| v.gap).collect();
        let delta_min = gaps.iter().copied().fold(f64::INFINITY, f64::min);
        let robots: Vec<RobotRecord> = world
            .agents
            .iter()
            .zip(&outputs)
            .zip(qs.iter().zip(&views))
            .map(|((a, out), (q, view))| RobotRecord {
                id: a.robot.id,
                p: a.p,
                q: *q,
                v: out.v,
                u: out.u,
                e_phi: view.phase_error(),
                omega: a.robot.controller.omega(),
                sigma_hat: out.sigma_hat,
                est_error: estimation_error(&out.frame, &world.frame),
            })
            .collect();
        records.push(TickRecord {
            tick: k,
            t,
            max_speed: robots.iter().map(|r| r.u.norm()).fold(0.0, f64::max),
            robots,
            sigma: safety_r.and_then(|r| sigma(delta_min, r).ok()),
            gaps,
            delta_min,
        });

        if k < ticks {
            let period = world.period;
            let hold = s.hold;
            let next: Vec<Vec3> = if opts.parallel {
                world
                    .agents
                    .par_iter()
                    .zip(&outputs)
                    .map(|(a, out)| integrate(a.p, out, hold, substeps, period))
                    .collect::<Result<_>>()
            } else {
                world
                    .agents
                    .iter()
                    .zip(&outputs)
                    .map(|(a, out)| integrate(a.p, out, hold, substeps, period))
                    .collect::<Result<_>>()
            }
            .map_err(|e| e.at_tick(k))?;
            for (a, p) in world.agents.iter_mut().zip(next) {
                a.p = p;
            }
            world.advance_target(k);
        }
    }

    Ok(SimLog {
        scenario: s.clone(),
        ticks: records,
        stats: world.bus.stats().clone(),
        trace: world.bus.trace().map(|t| t.to_vec()),
        warnings,
        xi,
    })
}

/// One run of scenario `spec` (path or built-in name) per value of the
/// dotted key `param`, applied after `overrides`.
pub fn sweep<S: AsRef<str>>(
    spec: &str,
    overrides: &[S],
    param: &str,
    values: &[String],
    opts: &RunOptions,
) -> Result<Vec<(String, metrics::Summary)>> {
    values
        .iter()
        .map(|value| {
            let mut all: Vec<String> = overrides.iter().map(|o| o.as_ref().to_string()).collect();
            all.push(format!("{param}={value}"));
            let s = Scenario::load(spec, &all)?;
            let log = run(&s, opts)?;
            Ok((value.clone(), metrics::summarize(&log)?))
        })
        .collect()
}

/// CSV table of [`sweep`] results, one row per value.
pub fn write_sweep<W: std::io::Write>(
    w: W,
    param: &str,
    rows: &[(String, metrics::Summary)],
) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record([
        param,
        "n",
        "final_rho_error",
        "final_phase_error",
        "final_phase_rate_error",
        "final_height",
        "messages_per_robot_tick",
        "messages_per_tick",
    ])?;
    for (value, s) in rows {
        csv.write_record([
            value.clone(),
            s.n.to_string(),
            format!("{:e}", s.final_rho_error),
            format!("{:e}", s.final_phase_error),
            format!("{:e}", s.final_rate_error),
            format!("{:e}", s.final_height),
            s.per_robot_message_rate.to_string(),
            s.total_message_rate.to_string(),
        ])?;
    }
    csv.flush()?;
    Ok(())
}
