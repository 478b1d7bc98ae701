//! Collision geometry in cylindrical coordinates.
//!
//! Two robots collide when their distance is at most `2r`. A robot whose radius
//! exceeds `sigma + 2r`, with `sigma = r / |sin(delta_min / 2)|`, is clear of
//! every other robot regardless of heights.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::geometry::{CylCoords, Vec3};
use crate::phase::wrap_to_pi;

/// Distances between two robots: full 3D (`big_d`), planar (`d`) and the chord
/// lower bound `2 min(rho) |sin(dphi / 2)|` (`d_tilde`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Distances {
    pub big_d: f64,
    pub d: f64,
    pub d_tilde: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SeparationReport {
    pub pair: (usize, usize),
    pub distances: Distances,
    pub radially_separated: bool,
    pub phase_separated: bool,
}

pub fn inter_distance(qi: &CylCoords, qj: &CylCoords) -> Distances {
    let dphi = wrap_to_pi(qj.phi - qi.phi);
    let planar2 = (qi.rho * qi.rho + qj.rho * qj.rho - 2.0 * qi.rho * qj.rho * dphi.cos()).max(0.0);
    let dz = qj.z - qi.z;
    Distances {
        big_d: (planar2 + dz * dz).sqrt(),
        d: planar2.sqrt(),
        d_tilde: 2.0 * qi.rho.min(qj.rho) * (0.5 * dphi).sin().abs(),
    }
}

/// `(radially separated, phase separated)` for safety radius `r`.
pub fn separation_predicates(qi: &CylCoords, qj: &CylCoords, r: f64) -> (bool, bool) {
    let radial = (qi.rho - qj.rho).abs() > 2.0 * r;
    let s = (0.5 * wrap_to_pi(qj.phi - qi.phi)).sin().abs();
    let phase = s > 0.0 && qi.rho.min(qj.rho) > r / s;
    (radial, phase)
}

pub fn separation_report(
    pair: (usize, usize),
    qi: &CylCoords,
    qj: &CylCoords,
    r: f64,
) -> SeparationReport {
    let (radially_separated, phase_separated) = separation_predicates(qi, qj, r);
    SeparationReport {
        pair,
        distances: inter_distance(qi, qj),
        radially_separated,
        phase_separated,
    }
}

/// Safety bound `r / |sin(delta_min / 2)|`.
pub fn sigma(delta_min: f64, r: f64) -> Result<f64> {
    if !(delta_min > 0.0) {
        return Err(Error::DegenerateDelta { delta: delta_min });
    }
    Ok(r / (0.5 * delta_min).sin().abs())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Violation {
    pub tick: u64,
    pub t: f64,
    pub i: usize,
    pub j: usize,
    pub distance: f64,
}

/// Running minimum distance and every pairwise violation of `D > 2r`.
#[derive(Clone, Debug)]
pub struct CollisionAudit {
    pub r: f64,
    pub min_distance: f64,
    pub min_at: Option<(u64, usize, usize)>,
    pub violations: Vec<Violation>,
}

impl CollisionAudit {
    pub fn new(r: f64) -> Self {
        CollisionAudit {
            r,
            min_distance: f64::INFINITY,
            min_at: None,
            violations: Vec::new(),
        }
    }

    /// Records one instant; `positions` holds `(robot label, world position)`.
    pub fn observe(&mut self, tick: u64, t: f64, positions: &[(usize, Vec3)]) {
        for (a, (i, pi)) in positions.iter().enumerate() {
            for (j, pj) in &positions[a + 1..] {
                let d = (pi - pj).norm();
                if d < self.min_distance {
                    self.min_distance = d;
                    self.min_at = Some((tick, *i.min(j), *i.max(j)));
                }
                if d <= 2.0 * self.r {
                    self.violations.push(Violation {
                        tick,
                        t,
                        i: *i.min(j),
                        j: *i.max(j),
                        distance: d,
                    });
                }
            }
        }
    }

    /// Distinct pairs that were ever in collision.
    pub fn violating_pairs(&self) -> BTreeSet<(usize, usize)> {
        self.violations.iter().map(|v| (v.i, v.j)).collect()
    }

    pub fn is_clear(&self) -> bool {
        self.violations.is_empty()
    }
}
