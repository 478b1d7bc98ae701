//! Convergence, safety and communication figures computed from a [`SimLog`].

use std::collections::BTreeSet;
use std::f64::consts::TAU;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::network::Id;
use crate::sim::log::SimLog;
use crate::sim::scenario::Law;

/// Errors below this are treated as numerical noise when fitting rates.
pub const FIT_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub name: String,
    pub n: usize,
    pub duration: f64,
    /// Steady-state angular speed the law should reach.
    pub target_rate: f64,
    pub final_rho_error: f64,
    pub final_phase_error: f64,
    pub final_rate_error: f64,
    pub final_height: f64,
    /// Fitted exponential decay rates (1/s); `None` when the error is already
    /// at the noise floor.
    pub rho_rate: Option<f64>,
    pub phase_rate: Option<f64>,
    pub height_rate: Option<f64>,
    pub escape_window: Option<f64>,
    pub min_distance: f64,
    pub collision_pairs: Vec<(Id, Id)>,
    pub delta_min_final: f64,
    pub delta_min_violations: usize,
    pub per_robot_message_rate: f64,
    pub total_message_rate: f64,
    pub final_estimation_error: f64,
    /// `min (sigma_hat_i - sigma)` over ticks and robots.
    pub sigma_margin: Option<f64>,
    /// `max |sigma_hat_i - sigma|` at the last tick.
    pub sigma_final_gap: Option<f64>,
    pub warnings: Vec<String>,
}

/// Least-squares decay rate of `log(error)` over the tail: the last half of
/// the samples whose error exceeds [`FIT_FLOOR`].
pub fn fit_decay_rate(times: &[f64], errors: &[f64]) -> Result<f64> {
    let usable: Vec<(f64, f64)> = times
        .iter()
        .zip(errors)
        .filter(|(_, e)| **e > FIT_FLOOR)
        .map(|(t, e)| (*t, e.ln()))
        .collect();
    let tail = &usable[usable.len() / 2..];
    if tail.len() < 2 {
        return Err(Error::InsufficientData);
    }
    let n = tail.len() as f64;
    let mt = tail.iter().map(|p| p.0).sum::<f64>() / n;
    let my = tail.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = tail.iter().map(|(t, y)| (t - mt) * (y - my)).sum();
    let sxx: f64 = tail.iter().map(|(t, _)| (t - mt) * (t - mt)).sum();
    if sxx == 0.0 {
        return Err(Error::InsufficientData);
    }
    Ok(-sxy / sxx)
}

/// Angular speed each law should settle at, from the robots present at the
/// end of the run.
pub fn target_rate(log: &SimLog) -> f64 {
    let c = &log.scenario.controller;
    let n = log.last().robots.len() as f64;
    match c.law {
        Law::V1 | Law::V1star => c.omega_star.unwrap_or(0.0),
        Law::V2 => TAU / (n * c.window.unwrap_or(f64::NAN)),
        Law::V3 => {
            let xi: Vec<f64> = log
                .last()
                .robots
                .iter()
                .filter_map(|r| log.xi.get(&r.id))
                .copied()
                .collect();
            xi.iter().sum::<f64>() / xi.len().max(1) as f64
        }
    }
}

/// True angular speed per robot over the last control period.
pub fn final_phase_rates(log: &SimLog) -> Result<Vec<(Id, f64)>> {
    let k = log.ticks.len();
    if k < 2 {
        return Err(Error::InsufficientData);
    }
    let (prev, last) = (&log.ticks[k - 2], &log.ticks[k - 1]);
    let dt = last.t - prev.t;
    Ok(last
        .robots
        .iter()
        .filter_map(|r| prev.robot(r.id).map(|p| (r.id, (r.q.phi - p.q.phi) / dt)))
        .collect())
}

/// Mean time between successive crossings of the ray `phi = 0` by any robot,
/// counting crossings at or after `from`.
pub fn escape_window(log: &SimLog, from: f64) -> Option<f64> {
    let mut crossings = Vec::new();
    for w in log.ticks.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        for rb in &b.robots {
            let Some(ra) = a.robot(rb.id) else { continue };
            let (pa, pb) = (ra.q.phi, rb.q.phi);
            let (ka, kb) = ((pa / TAU).floor(), (pb / TAU).floor());
            if kb > ka && pb > pa {
                let ray = kb * TAU;
                let t = a.t + (ray - pa) / (pb - pa) * (b.t - a.t);
                if t >= from {
                    crossings.push(t);
                }
            }
        }
    }
    crossings.sort_by(f64::total_cmp);
    if crossings.len() < 2 {
        return None;
    }
    Some((crossings[crossings.len() - 1] - crossings[0]) / (crossings.len() - 1) as f64)
}

/// Ticks at which `delta_min` dropped by more than `slack` from the previous
/// tick (ring changes excluded).
pub fn delta_min_drops(log: &SimLog, slack: f64) -> Vec<(u64, f64)> {
    log.ticks
        .windows(2)
        .filter(|w| w[0].robots.len() == w[1].robots.len())
        .filter(|w| w[1].delta_min < w[0].delta_min - slack)
        .map(|w| (w[1].tick, w[0].delta_min - w[1].delta_min))
        .collect()
}

pub fn series(
    log: &SimLog,
    f: impl Fn(&crate::sim::log::TickRecord) -> f64,
) -> (Vec<f64>, Vec<f64>) {
    log.ticks.iter().map(|r| (r.t, f(r))).unzip()
}

pub fn summarize(log: &SimLog) -> Result<Summary> {
    if log.ticks.len() < 2 {
        return Err(Error::InsufficientData);
    }
    let s = &log.scenario;
    let rho_star = s.controller.rho_star;
    let last = log.last();
    let target = target_rate(log);
    let rates = final_phase_rates(log)?;

    let fit = |f: &dyn Fn(&crate::sim::log::TickRecord) -> f64| {
        let (t, e) = series(log, f);
        fit_decay_rate(&t, &e).ok()
    };

    let audit_r = log.safety_radius();
    let (min_distance, collision_pairs) = match audit_r {
        Some(r) => {
            let audit = log.collision_audit(r);
            (
                audit.min_distance,
                audit.violating_pairs().into_iter().collect(),
            )
        }
        None => (
            log.ticks
                .iter()
                .map(|t| t.min_distance())
                .fold(f64::INFINITY, f64::min),
            Vec::new(),
        ),
    };

    let gated = s.controller.safety.is_some();
    let (sigma_margin, sigma_final_gap) = if gated {
        let margin = log
            .ticks
            .iter()
            .filter_map(|rec| rec.sigma.map(|sig| (rec, sig)))
            .flat_map(|(rec, sig)| rec.robots.iter().map(move |r| r.sigma_hat - sig))
            .fold(f64::INFINITY, f64::min);
        let gap = last.sigma.map(|sig| {
            last.robots
                .iter()
                .map(|r| (r.sigma_hat - sig).abs())
                .fold(0.0, f64::max)
        });
        (Some(margin), gap)
    } else {
        (None, None)
    };

    Ok(Summary {
        name: s.name.clone(),
        n: last.robots.len(),
        duration: last.t,
        target_rate: target,
        final_rho_error: last.max_rho_error(rho_star),
        final_phase_error: last.max_phase_error(),
        final_rate_error: rates
            .iter()
            .map(|(_, w)| (w - target).abs())
            .fold(0.0, f64::max),
        final_height: last.max_height(),
        rho_rate: fit(&|r| r.max_rho_error(rho_star)),
        phase_rate: fit(&|r| r.max_phase_error()),
        height_rate: fit(&|r| r.max_height()),
        escape_window: escape_window(log, 0.5 * last.t),
        min_distance,
        collision_pairs,
        delta_min_final: last.delta_min,
        delta_min_violations: delta_min_drops(log, 1e-9).len(),
        per_robot_message_rate: log.stats.per_robot_rate(),
        total_message_rate: log.stats.total_rate(),
        final_estimation_error: last
            .robots
            .iter()
            .flat_map(|r| r.est_error)
            .fold(0.0, f64::max),
        sigma_margin,
        sigma_final_gap,
        warnings: log.warnings.clone(),
    })
}

impl Summary {
    pub fn to_text(&self) -> String {
        let opt = |x: Option<f64>| x.map_or("n/a".to_string(), |v| format!("{v:.6}"));
        let mut s = String::new();
        let mut line = |k: &str, v: String| {
            let _ = writeln!(s, "{k:<26} {v}");
        };
        line("scenario", self.name.clone());
        line("robots", self.n.to_string());
        line("duration_s", format!("{:.3}", self.duration));
        line("target_phase_rate", format!("{:.6}", self.target_rate));
        line("final_rho_error", format!("{:.3e}", self.final_rho_error));
        line(
            "final_phase_error",
            format!("{:.3e}", self.final_phase_error),
        );
        line(
            "final_phase_rate_error",
            format!("{:.3e}", self.final_rate_error),
        );
        line("final_height", format!("{:.3e}", self.final_height));
        line("rho_decay_rate", opt(self.rho_rate));
        line("phase_decay_rate", opt(self.phase_rate));
        line("height_decay_rate", opt(self.height_rate));
        line("escape_window_s", opt(self.escape_window));
        line("min_distance", format!("{:.6}", self.min_distance));
        let pairs: Vec<String> = self
            .collision_pairs
            .iter()
            .map(|(i, j)| format!("{i}-{j}"))
            .collect();
        line(
            "collision_pairs",
            if pairs.is_empty() {
                "none".into()
            } else {
                pairs.join(" ")
            },
        );
        line("delta_min_final", format!("{:.9}", self.delta_min_final));
        line("delta_min_drops", self.delta_min_violations.to_string());
        line(
            "messages_per_robot_tick",
            format!("{:.6}", self.per_robot_message_rate),
        );
        line(
            "messages_per_tick",
            format!("{:.6}", self.total_message_rate),
        );
        line(
            "final_estimation_error",
            format!("{:.3e}", self.final_estimation_error),
        );
        line("sigma_hat_margin", opt(self.sigma_margin));
        line(
            "sigma_hat_final_gap",
            self.sigma_final_gap
                .map_or("n/a".into(), |v| format!("{v:.3e}")),
        );
        for w in &self.warnings {
            line("warning", w.clone());
        }
        s
    }

    pub fn collided(&self) -> bool {
        !self.collision_pairs.is_empty()
    }

    pub fn violating_pairs(&self) -> BTreeSet<(Id, Id)> {
        self.collision_pairs.iter().copied().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fits_an_exponential() {
        let t: Vec<f64> = (0..1000).map(|k| k as f64 * 0.01).collect();
        let e: Vec<f64> = t.iter().map(|t| 3.0 * (-0.7 * t).exp()).collect();
        assert!((fit_decay_rate(&t, &e).unwrap() - 0.7).abs() < 1e-9);
    }

    #[test]
    fn floor_leaves_nothing_to_fit() {
        let t = [0.0, 1.0, 2.0];
        assert!(matches!(
            fit_decay_rate(&t, &[1e-12; 3]),
            Err(Error::InsufficientData)
        ));
    }
}
