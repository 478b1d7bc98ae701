//! Per-tick simulation record and its CSV tables.
//!
//! Tables (long format, one header row each):
//!
//! * `states.csv`: `tick,t,robot,x,y,z,rho,phi,height,v_rho,v_phi,v_z,ux,uy,uz,e_phi,omega,sigma_hat`
//! * `errors.csv`: `tick,t,n,max_rho_error,max_phase_error,max_height,delta_min,sigma,min_distance,max_speed`
//! * `distances.csv`: `tick,t,i,j,distance`
//! * `messages.csv`: `tick,t,sent`
//! * `estimates.csv`: `tick,t,robot,position,velocity,rotation,rotation_rate`
//!   (max absolute error of each group of tracked scalars)
//!
//! Phases are in the true target frame and unwrapped; robots are listed in
//! ring order.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::Result;
use crate::geometry::{CylCoords, CylVelocity, Vec3};
use crate::network::{Id, MessageStats, TraceRow};
use crate::safety::CollisionAudit;
use crate::sim::scenario::Scenario;

#[derive(Clone, Debug, PartialEq)]
pub struct RobotRecord {
    pub id: Id,
    pub p: Vec3,
    /// True cylindrical coordinates, unwrapped phase.
    pub q: CylCoords,
    pub v: CylVelocity,
    pub u: Vec3,
    /// Phase error from true phases.
    pub e_phi: f64,
    pub omega: f64,
    pub sigma_hat: f64,
    /// Max abs estimation error for position, velocity, rotation, rotation rate.
    pub est_error: [f64; 4],
}

#[derive(Clone, Debug, PartialEq)]
pub struct TickRecord {
    pub tick: u64,
    pub t: f64,
    pub robots: Vec<RobotRecord>,
    /// True phase gaps in ring order.
    pub gaps: Vec<f64>,
    pub delta_min: f64,
    /// Safety bound from the true `delta_min`, when a safety radius is set.
    pub sigma: Option<f64>,
    pub max_speed: f64,
}

impl TickRecord {
    pub fn positions(&self) -> Vec<(Id, Vec3)> {
        self.robots.iter().map(|r| (r.id, r.p)).collect()
    }

    pub fn robot(&self, id: Id) -> Option<&RobotRecord> {
        self.robots.iter().find(|r| r.id == id)
    }

    pub fn max_rho_error(&self, rho_star: f64) -> f64 {
        self.robots
            .iter()
            .map(|r| (r.q.rho - rho_star).abs())
            .fold(0.0, f64::max)
    }

    pub fn max_phase_error(&self) -> f64 {
        self.robots
            .iter()
            .map(|r| r.e_phi.abs())
            .fold(0.0, f64::max)
    }

    pub fn max_height(&self) -> f64 {
        self.robots.iter().map(|r| r.q.z.abs()).fold(0.0, f64::max)
    }

    pub fn min_distance(&self) -> f64 {
        let mut min = f64::INFINITY;
        for (a, ri) in self.robots.iter().enumerate() {
            for rj in &self.robots[a + 1..] {
                min = min.min((ri.p - rj.p).norm());
            }
        }
        min
    }
}

#[derive(Clone, Debug)]
pub struct SimLog {
    pub scenario: Scenario,
    pub ticks: Vec<TickRecord>,
    pub stats: MessageStats,
    pub trace: Option<Vec<TraceRow>>,
    pub warnings: Vec<String>,
    /// Forcing terms of `v3` robots.
    pub xi: BTreeMap<Id, f64>,
}

fn f(x: f64) -> String {
    format!("{x}")
}

impl SimLog {
    pub fn period(&self) -> f64 {
        self.scenario.control_period
    }

    pub fn last(&self) -> &TickRecord {
        self.ticks.last().expect("a run logs at least one tick")
    }

    pub fn safety_radius(&self) -> Option<f64> {
        self.scenario.controller.safety.map(|s| s.r)
    }

    pub fn collision_audit(&self, r: f64) -> CollisionAudit {
        let mut audit = CollisionAudit::new(r);
        for rec in &self.ticks {
            audit.observe(rec.tick, rec.t, &rec.positions());
        }
        audit
    }

    pub fn write_states<W: Write>(&self, w: W) -> Result<()> {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record([
            "tick",
            "t",
            "robot",
            "x",
            "y",
            "z",
            "rho",
            "phi",
            "height",
            "v_rho",
            "v_phi",
            "v_z",
            "ux",
            "uy",
            "uz",
            "e_phi",
            "omega",
            "sigma_hat",
        ])?;
        for rec in &self.ticks {
            for r in &rec.robots {
                csv.write_record([
                    rec.tick.to_string(),
                    f(rec.t),
                    r.id.to_string(),
                    f(r.p.x),
                    f(r.p.y),
                    f(r.p.z),
                    f(r.q.rho),
                    f(r.q.phi),
                    f(r.q.z),
                    f(r.v.rho),
                    f(r.v.phi),
                    f(r.v.z),
                    f(r.u.x),
                    f(r.u.y),
                    f(r.u.z),
                    f(r.e_phi),
                    f(r.omega),
                    f(r.sigma_hat),
                ])?;
            }
        }
        csv.flush()?;
        Ok(())
    }

    pub fn write_errors<W: Write>(&self, w: W) -> Result<()> {
        let rho_star = self.scenario.controller.rho_star;
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record([
            "tick",
            "t",
            "n",
            "max_rho_error",
            "max_phase_error",
            "max_height",
            "delta_min",
            "sigma",
            "min_distance",
            "max_speed",
        ])?;
        for rec in &self.ticks {
            csv.write_record([
                rec.tick.to_string(),
                f(rec.t),
                rec.robots.len().to_string(),
                f(rec.max_rho_error(rho_star)),
                f(rec.max_phase_error()),
                f(rec.max_height()),
                f(rec.delta_min),
                rec.sigma.map(f).unwrap_or_default(),
                f(rec.min_distance()),
                f(rec.max_speed),
            ])?;
        }
        csv.flush()?;
        Ok(())
    }

    pub fn write_distances<W: Write>(&self, w: W) -> Result<()> {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["tick", "t", "i", "j", "distance"])?;
        for rec in &self.ticks {
            let mut robots: Vec<&RobotRecord> = rec.robots.iter().collect();
            robots.sort_by_key(|r| r.id);
            for (a, ri) in robots.iter().enumerate() {
                for rj in &robots[a + 1..] {
                    csv.write_record([
                        rec.tick.to_string(),
                        f(rec.t),
                        ri.id.to_string(),
                        rj.id.to_string(),
                        f((ri.p - rj.p).norm()),
                    ])?;
                }
            }
        }
        csv.flush()?;
        Ok(())
    }

    pub fn write_messages<W: Write>(&self, w: W) -> Result<()> {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["tick", "t", "sent"])?;
        for (k, sent) in self.stats.sent_per_tick.iter().enumerate() {
            csv.write_record([k.to_string(), f(k as f64 * self.period()), sent.to_string()])?;
        }
        csv.flush()?;
        Ok(())
    }

    pub fn write_estimates<W: Write>(&self, w: W) -> Result<()> {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record([
            "tick",
            "t",
            "robot",
            "position",
            "velocity",
            "rotation",
            "rotation_rate",
        ])?;
        for rec in &self.ticks {
            for r in &rec.robots {
                let e = r.est_error;
                csv.write_record([
                    rec.tick.to_string(),
                    f(rec.t),
                    r.id.to_string(),
                    f(e[0]),
                    f(e[1]),
                    f(e[2]),
                    f(e[3]),
                ])?;
            }
        }
        csv.flush()?;
        Ok(())
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

    /// Every table concatenated, for byte-level comparisons.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.write_states(&mut buf)?;
        self.write_errors(&mut buf)?;
        self.write_distances(&mut buf)?;
        self.write_messages(&mut buf)?;
        self.write_estimates(&mut buf)?;
        self.write_trace(&mut buf)?;
        Ok(buf)
    }

    /// Writes all tables plus `summary.txt` and the resolved `scenario.toml`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let file = |name: &str| fs::File::create(dir.join(name));
        self.write_states(file("states.csv")?)?;
        self.write_errors(file("errors.csv")?)?;
        self.write_distances(file("distances.csv")?)?;
        self.write_messages(file("messages.csv")?)?;
        self.write_estimates(file("estimates.csv")?)?;
        if self.trace.is_some() {
            self.write_trace(file("trace.csv")?)?;
        }
        fs::write(dir.join("scenario.toml"), self.scenario.to_toml())?;
        let summary = crate::sim::metrics::summarize(self)?;
        fs::write(dir.join("summary.txt"), summary.to_text())?;
        Ok(())
    }
}
