//! Scenario files (TOML). Unknown keys are rejected.
//!
//! ```toml
//! name = "example"
//! seed = 1
//! duration = 20.0          # s
//! dt = 0.001               # integrator step, s
//! control_period = 0.01    # s, integer multiple of dt
//! hold = "cylindrical"     # or "cartesian"
//!
//! [robots]
//! count = 10
//! n_max = 10               # optional, defaults to count plus additions
//! shell = { rho = [1.0, 4.0], z = [-1.5, 1.5] }   # or positions / cylindrical
//!
//! [controller]
//! law = "v1"               # v1 | v2 | v3 | v1star
//! rho_star = 2.0
//! omega_star = 0.8
//! gains = { k_rho = 1.0, k_z = 1.5, k_phi = 2.0 }
//!
//! [target]
//! plane_normal = [0.0, 1.0, 1.0]
//! segments = [{ velocity = [0.0, 0.2, 0.2] }]
//!
//! [network]
//! topology = "ring"        # ring | line | schedule
//!
//! [estimator]
//! informed = 1
//! ```

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::control::{ControllerMode, GainSet, SafetyParams};
use crate::error::{Error, Result};
use crate::geometry::{orthonormalize, plane_rotation, CylCoords, Mat3, TargetFrame, Vec3};
use crate::network::{Id, Topology};

const BUILTINS: &[(&str, &str)] = &[
    ("v1_fig3", include_str!("../../scenarios/v1_fig3.toml")),
    ("v2_fig4", include_str!("../../scenarios/v2_fig4.toml")),
    ("v3_fig5", include_str!("../../scenarios/v3_fig5.toml")),
    (
        "collision_fig7_plain",
        include_str!("../../scenarios/collision_fig7_plain.toml"),
    ),
    (
        "collision_fig7_safe",
        include_str!("../../scenarios/collision_fig7_safe.toml"),
    ),
    (
        "leader_corollary",
        include_str!("../../scenarios/leader_corollary.toml"),
    ),
    (
        "churn_demo",
        include_str!("../../scenarios/churn_demo.toml"),
    ),
];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Hold {
    /// Hold the cylindrical command and re-apply the feedback transformation
    /// along the step against the robot's propagated frame estimate.
    #[default]
    Cylindrical,
    /// Hold the Cartesian velocity over the control period.
    Cartesian,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_duration")]
    pub duration: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_period")]
    pub control_period: f64,
    #[serde(default)]
    pub hold: Hold,
    pub robots: RobotsConfig,
    pub controller: ControllerConfig,
    #[serde(default)]
    pub target: TargetConfig,
    #[serde(default)]
    pub network: NetworkConfig,
    #[serde(default)]
    pub estimator: EstimatorConfig,
    #[serde(default)]
    pub events: Vec<Event>,
}

fn default_name() -> String {
    "scenario".into()
}
fn default_duration() -> f64 {
    20.0
}
fn default_dt() -> f64 {
    1e-3
}
fn default_period() -> f64 {
    1e-2
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotsConfig {
    pub count: usize,
    pub n_max: Option<usize>,
    /// World-frame positions.
    pub positions: Option<Vec<[f64; 3]>>,
    /// `(rho, phi, z)` in the initial target frame.
    pub cylindrical: Option<Vec<[f64; 3]>>,
    /// Seeded uniform draw in the initial target frame.
    pub shell: Option<Shell>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Shell {
    pub rho: [f64; 2],
    pub z: [f64; 2],
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Law {
    V1,
    V2,
    V3,
    V1star,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerConfig {
    pub law: Law,
    pub rho_star: f64,
    pub omega_star: Option<f64>,
    pub window: Option<f64>,
    pub xi: Option<Vec<f64>>,
    pub xi_random: Option<XiRandom>,
    pub gains: GainsConfig,
    pub safety: Option<SafetyParams>,
}

/// Forcing terms drawn uniformly in `[low, high]`, then shifted so their mean
/// is exactly `mean`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct XiRandom {
    pub low: f64,
    pub high: f64,
    pub mean: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainsConfig {
    pub k_rho: f64,
    pub k_z: f64,
    pub k_phi: f64,
    #[serde(default = "default_k_omega")]
    pub k_omega: f64,
}

fn default_k_omega() -> f64 {
    3.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetConfig {
    #[serde(default)]
    pub position: [f64; 3],
    pub plane_normal: Option<[f64; 3]>,
    /// Rows of the initial rotation (target axes as columns).
    pub rotation: Option<[[f64; 3]; 3]>,
    #[serde(default)]
    pub segments: Vec<Segment>,
}

impl Default for TargetConfig {
    fn default() -> Self {
        TargetConfig {
            position: [0.0; 3],
            plane_normal: None,
            rotation: None,
            segments: Vec::new(),
        }
    }
}

/// Constant target velocity and plane angular velocity for `duration`
/// seconds; the last segment lasts for the rest of the run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Segment {
    pub duration: Option<f64>,
    #[serde(default)]
    pub velocity: [f64; 3],
    #[serde(default)]
    pub angular_velocity: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    #[serde(default = "default_topology")]
    pub topology: String,
    /// Edge lists for `topology = "schedule"`, one per tick, cycled.
    pub schedule: Option<Vec<Vec<[Id; 2]>>>,
    #[serde(default = "default_staleness")]
    pub staleness_bound: u64,
    #[serde(default)]
    pub trace: bool,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            topology: default_topology(),
            schedule: None,
            staleness_bound: default_staleness(),
            trace: false,
        }
    }
}

fn default_topology() -> String {
    "ring".into()
}
fn default_staleness() -> u64 {
    2
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitialGuess {
    /// Every robot starts from the values at the initial instant.
    #[default]
    Truth,
    /// Zero position and velocity, identity rotation.
    Identity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorConfig {
    #[serde(default = "default_informed")]
    pub informed: Id,
    pub k_eta: Option<f64>,
    #[serde(default)]
    pub oracle_globals: bool,
    #[serde(default)]
    pub initial_guess: InitialGuess,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            informed: default_informed(),
            k_eta: None,
            oracle_globals: false,
            initial_guess: InitialGuess::default(),
        }
    }
}

fn default_informed() -> Id {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "lowercase", deny_unknown_fields)]
pub enum Event {
    Remove {
        time: f64,
        robot: Id,
    },
    Add {
        time: f64,
        /// World-frame position.
        position: [f64; 3],
        /// Forcing term for `v3`.
        xi: Option<f64>,
    },
}

impl Event {
    pub fn time(&self) -> f64 {
        match self {
            Event::Remove { time, .. } | Event::Add { time, .. } => *time,
        }
    }
}

fn v3(a: [f64; 3]) -> Vec3 {
    Vec3::new(a[0], a[1], a[2])
}

/// Sets `path` (dotted) in a TOML table, creating intermediate tables.
fn set_path(root: &mut toml::Table, path: &str, value: toml::Value) -> Result<()> {
    let mut parts: Vec<&str> = path.split('.').collect();
    let last = parts
        .pop()
        .filter(|s| !s.is_empty())
        .ok_or_else(|| Error::Config(format!("empty override key `{path}`")))?;
    let mut table = root;
    for part in parts {
        let entry = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override `{path}`: `{part}` is not a table")))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}

/// Parses the right-hand side of `key=value`; bare words become strings.
fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&doc) {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

impl Scenario {
    pub fn builtin_names() -> impl Iterator<Item = &'static str> {
        BUILTINS.iter().map(|(n, _)| *n)
    }

    pub fn builtin_source(name: &str) -> Option<&'static str> {
        BUILTINS.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
    }

    pub fn builtin(name: &str) -> Result<Scenario> {
        Scenario::builtin_with::<&str>(name, &[])
    }

    pub fn builtin_with<S: AsRef<str>>(name: &str, overrides: &[S]) -> Result<Scenario> {
        let src = Scenario::builtin_source(name)
            .ok_or_else(|| Error::Config(format!("unknown built-in scenario `{name}`")))?;
        Scenario::parse(src, overrides)
    }

    /// Parses TOML text and applies `key=value` overrides before validation.
    pub fn parse<S: AsRef<str>>(text: &str, overrides: &[S]) -> Result<Scenario> {
        let mut table: toml::Table =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for o in overrides {
            let o = o.as_ref();
            let (key, value) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{o}` is not KEY=VALUE")))?;
            set_path(&mut table, key.trim(), parse_value(value.trim()))?;
        }
        let scenario: Scenario = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        scenario.validate()?;
        Ok(scenario)
    }

    /// A path to a TOML file, or the name of a built-in scenario.
    pub fn load<S: AsRef<str>>(spec: &str, overrides: &[S]) -> Result<Scenario> {
        if Scenario::builtin_source(spec).is_some() && !Path::new(spec).exists() {
            return Scenario::builtin_with(spec, overrides);
        }
        let text = std::fs::read_to_string(spec)
            .map_err(|e| Error::Config(format!("cannot read scenario `{spec}`: {e}")))?;
        Scenario::parse(&text, overrides).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{spec}: {msg}")),
            e => e,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn ticks(&self) -> u64 {
        (self.duration / self.control_period).round() as u64
    }

    pub fn substeps(&self) -> usize {
        (self.control_period / self.dt).round() as usize
    }

    pub fn n_max(&self) -> usize {
        let adds = self
            .events
            .iter()
            .filter(|e| matches!(e, Event::Add { .. }))
            .count();
        self.robots.n_max.unwrap_or(self.robots.count + adds)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.robots.count < 2 {
            return Err(Error::TooFewRobots {
                n: self.robots.count,
            });
        }
        if !(self.duration > 0.0) {
            return bad(format!("duration must be positive, got {}", self.duration));
        }
        if !(self.dt > 0.0 && self.dt <= self.control_period) {
            return bad(format!(
                "need 0 < dt <= control_period, got dt={} control_period={}",
                self.dt, self.control_period
            ));
        }
        let ratio = self.control_period / self.dt;
        if (ratio - ratio.round()).abs() > 1e-9 * ratio {
            return bad("control_period must be an integer multiple of dt".into());
        }
        let sources = [
            self.robots.positions.is_some(),
            self.robots.cylindrical.is_some(),
            self.robots.shell.is_some(),
        ];
        if sources.iter().filter(|s| **s).count() != 1 {
            return bad("robots: give exactly one of positions, cylindrical, shell".into());
        }
        for list in [&self.robots.positions, &self.robots.cylindrical]
            .into_iter()
            .flatten()
        {
            if list.len() != self.robots.count {
                return bad(format!(
                    "robots: {} initial states for count = {}",
                    list.len(),
                    self.robots.count
                ));
            }
        }
        let alive_max = self.n_max();
        let mut alive = self.robots.count;
        let mut peak = alive;
        let mut events = self.events.clone();
        events.sort_by(|a, b| a.time().total_cmp(&b.time()));
        for e in &events {
            match e {
                Event::Add { .. } => alive += 1,
                Event::Remove { robot, .. } => {
                    if *robot == self.estimator.informed {
                        return bad(format!("the informed robot {robot} cannot be removed"));
                    }
                    alive -= 1;
                }
            }
            if alive < 2 {
                return Err(Error::TooFewRobots { n: alive });
            }
            peak = peak.max(alive);
        }
        if peak > alive_max {
            return bad(format!(
                "n_max = {alive_max} is below the peak robot count {peak}"
            ));
        }
        if !self.events.is_empty() && !matches!(self.network.topology.as_str(), "ring" | "line") {
            return bad("robot addition/removal needs a ring or line topology".into());
        }
        self.topology()?;
        self.gains()?.validate()?;
        self.modes()?;
        if self.estimator.informed == 0 || self.estimator.informed > self.robots.count {
            return bad(format!(
                "informed robot {} does not exist",
                self.estimator.informed
            ));
        }
        self.initial_frame()?;
        Ok(())
    }

    pub fn topology(&self) -> Result<Topology> {
        match self.network.topology.as_str() {
            "ring" => Ok(Topology::Ring),
            "line" => Ok(Topology::Line),
            "schedule" => {
                let s = self
                    .network
                    .schedule
                    .as_ref()
                    .filter(|s| !s.is_empty())
                    .ok_or_else(|| {
                        Error::Config("topology = \"schedule\" needs network.schedule".into())
                    })?;
                Ok(Topology::Schedule(
                    s.iter()
                        .map(|edges| edges.iter().map(|e| (e[0], e[1])).collect())
                        .collect(),
                ))
            }
            other => Err(Error::Config(format!("unknown topology `{other}`"))),
        }
    }

    pub fn gains(&self) -> Result<GainSet> {
        let g = &self.controller.gains;
        let k_eta = self
            .estimator
            .k_eta
            .unwrap_or(10.0 * g.k_rho.max(g.k_phi).max(g.k_z));
        Ok(GainSet {
            k_rho: g.k_rho,
            k_z: g.k_z,
            k_phi: g.k_phi,
            k_omega: g.k_omega,
            k_eta,
        })
    }

    /// Forcing terms for `v3`, one per initial robot (in input order).
    pub fn xi_values(&self, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        let n = self.robots.count;
        if let Some(xi) = &self.controller.xi {
            if xi.len() != n {
                return Err(Error::Config(format!(
                    "controller.xi has {} entries for {n} robots",
                    xi.len()
                )));
            }
            return Ok(xi.clone());
        }
        if let Some(r) = &self.controller.xi_random {
            if !(r.low <= r.high) {
                return Err(Error::Config(
                    "controller.xi_random needs low <= high".into(),
                ));
            }
            let draws: Vec<f64> = (0..n).map(|_| rng.gen_range(r.low..=r.high)).collect();
            let shift = r.mean - draws.iter().sum::<f64>() / n as f64;
            return Ok(draws.into_iter().map(|x| x + shift).collect());
        }
        Err(Error::Config(
            "law v3 needs controller.xi or controller.xi_random".into(),
        ))
    }

    /// Controller mode for a robot with forcing term `xi` (ignored unless `v3`).
    pub fn mode(&self, xi: f64) -> Result<ControllerMode> {
        let c = &self.controller;
        let need = |v: Option<f64>, key: &str| {
            v.ok_or_else(|| Error::Config(format!("law {:?} needs controller.{key}", c.law)))
        };
        Ok(match c.law {
            Law::V1 => ControllerMode::V1 {
                omega_star: need(c.omega_star, "omega_star")?,
            },
            Law::V2 => {
                let window = need(c.window, "window")?;
                if !(window > 0.0) {
                    return Err(Error::InvalidWindow { s: window });
                }
                ControllerMode::V2 { window }
            }
            Law::V3 => ControllerMode::V3 { xi },
            Law::V1star => {
                let safety = c
                    .safety
                    .ok_or_else(|| Error::Config("law v1star needs controller.safety".into()))?;
                safety.validate()?;
                ControllerMode::V1Star {
                    omega_star: need(c.omega_star, "omega_star")?,
                    safety,
                }
            }
        })
    }

    fn modes(&self) -> Result<()> {
        if self.controller.law == Law::V3 {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            self.xi_values(&mut rng)?;
        }
        if !(self.controller.rho_star > 0.0) {
            return Err(Error::Config("controller.rho_star must be positive".into()));
        }
        if let Some(s) = &self.controller.safety {
            s.validate()?;
        }
        self.mode(0.0).map(|_| ())
    }

    pub fn initial_frame(&self) -> Result<TargetFrame> {
        let t = &self.target;
        let rotation = match (&t.rotation, &t.plane_normal) {
            (Some(_), Some(_)) => {
                return Err(Error::Config(
                    "target: give rotation or plane_normal, not both".into(),
                ))
            }
            (Some(rows), None) => {
                let m = Mat3::new(
                    rows[0][0], rows[0][1], rows[0][2], rows[1][0], rows[1][1], rows[1][2],
                    rows[2][0], rows[2][1], rows[2][2],
                );
                let r = orthonormalize(&m)
                    .ok_or_else(|| Error::Config("target.rotation is singular".into()))?;
                if (r - m).amax() > 1e-9 {
                    return Err(Error::Config(
                        "target.rotation is not a rotation matrix".into(),
                    ));
                }
                r
            }
            (None, Some(n)) => plane_rotation(&v3(*n))
                .ok_or_else(|| Error::Config("target.plane_normal is zero".into()))?,
            (None, None) => Mat3::identity(),
        };
        let seg = self.segment_at(0.0);
        Ok(TargetFrame {
            position: v3(t.position),
            velocity: v3(seg.0),
            rotation,
            angular_velocity: v3(seg.1),
        })
    }

    /// Velocity and angular velocity in force at time `t`, and the time the
    /// segment ends.
    pub fn segment_at(&self, t: f64) -> ([f64; 3], [f64; 3], f64) {
        let mut start = 0.0;
        let last = self.target.segments.len().saturating_sub(1);
        for (k, s) in self.target.segments.iter().enumerate() {
            let end = match s.duration {
                Some(d) if k < last => start + d,
                _ => f64::INFINITY,
            };
            if t < end - 1e-12 {
                return (s.velocity, s.angular_velocity, end);
            }
            start = end;
        }
        ([0.0; 3], [0.0; 3], f64::INFINITY)
    }

    /// Initial world positions, in input order.
    pub fn initial_positions(&self, frame: &TargetFrame, rng: &mut ChaCha8Rng) -> Vec<Vec3> {
        let r = &self.robots;
        if let Some(p) = &r.positions {
            return p.iter().map(|a| v3(*a)).collect();
        }
        let local: Vec<CylCoords> = if let Some(c) = &r.cylindrical {
            c.iter().map(|a| CylCoords::new(a[0], a[1], a[2])).collect()
        } else {
            let s = r.shell.as_ref().expect("validated");
            (0..r.count)
                .map(|_| {
                    let rho = rng.gen_range(s.rho[0]..=s.rho[1]);
                    let phi = rng.gen_range(0.0..std::f64::consts::TAU);
                    let z = rng.gen_range(s.z[0]..=s.z[1]);
                    CylCoords::new(rho, phi, z)
                })
                .collect()
        };
        local
            .iter()
            .map(|q| frame.to_world(&q.to_local()))
            .collect()
    }
}
