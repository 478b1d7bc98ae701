//! The acceptance criteria as runnable checks. Each criterion reports pass or
//! fail with the measured values next to their pinned tolerances.
//!
//! Scenario runs are cached per [`Verifier`], so criteria sharing a run (for
//! example the Controller 1 reproduction and the phase-preservation audit)
//! simulate it once. Overrides given to the verifier apply to every scenario
//! it runs, which is how a sabotaged gain is checked to break exactly the
//! criteria it should.

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::fmt::Write as _;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::estimation::tracking_run;
use crate::geometry::{cylindrical, jacobian, jacobian_inverse, Mat3, Vec3};
use crate::network::Topology;
use crate::phase::oracle::{block_eigenpairs, closed_form_spectrum, spectrum, CirculantOracle};
use crate::phase::ring_views;
use crate::sim::log::SimLog;
use crate::sim::metrics::{delta_min_drops, summarize, Summary};
use crate::sim::scenario::Scenario;
use crate::sim::{run, RunOptions};

/// Ring sizes for the algebraic checks.
pub const ALGEBRA_SIZES: std::ops::RangeInclusive<usize> = 2..=12;
pub const IDENTITY_TOL: f64 = 1e-12;
pub const SPECTRUM_TOL: f64 = 1e-9;
/// Gains of the block-matrix eigenpair check.
pub const BLOCK_GAINS: (f64, f64) = (3.0, 2.0);
/// Final-error bound of the Controller 1 reproduction (m, rad, rad/s, m).
pub const CONVERGENCE_TOL: f64 = 1e-2;
/// Relative tolerance on the fitted phase-error decay rate.
pub const DECAY_RATE_REL_TOL: f64 = 0.10;
/// Relative tolerance on the Controller 2 speed and escape window.
pub const WINDOW_REL_TOL: f64 = 0.02;
pub const V3_RATE_TOL: f64 = 1e-2;
pub const LEADER_RATE_TOL: f64 = 1e-3;
pub const MIN_COLLIDING_PAIRS: usize = 2;
/// Per-tick slack on the monotonicity of the minimum phase gap.
pub const DELTA_MIN_SLACK: f64 = 1e-9;
pub const DELTA_MIN_FINAL_TOL: f64 = 1e-3;
/// Tracking error bound as a fraction of the signal amplitude.
pub const TRACKING_REL_TOL: f64 = 0.05;
pub const TRACKING_SETTLE: f64 = 5.0;
pub const TRACKING_CASES: usize = 16;
/// Allowed undershoot of the estimated safety bound (round-off only).
pub const SIGMA_SLACK: f64 = 1e-9;
pub const SIGMA_FINAL_TOL: f64 = 1e-6;
pub const SWEEP_SIZES: [usize; 4] = [5, 10, 20, 40];
pub const SWEEP_DURATION: f64 = 2.0;
pub const RATE_RATIO_MAX: f64 = 1.05;
pub const LINEAR_R2_MIN: f64 = 0.999;
pub const JACOBIAN_POINTS: usize = 1000;
pub const JACOBIAN_FD_TOL: f64 = 1e-6;
pub const JACOBIAN_INVERSE_TOL: f64 = 1e-9;
/// Constant of the first-order step-halving bound `|p_dt - p_dt/2| < C dt`
/// (m/s).
pub const STEP_HALVING_C: f64 = 1.0;
pub const NUMERICS_DURATION: f64 = 5.0;

/// Runtime budgets per criterion.
const BUDGET_ALGEBRA: Duration = Duration::from_secs(1);
const BUDGET_SIM: Duration = Duration::from_secs(30);
const BUDGET_SWEEP: Duration = Duration::from_secs(120);

pub const CRITERIA: [(u8, &str); 10] = [
    (1, "identities"),
    (2, "spectrum"),
    (3, "controller1"),
    (4, "controller2"),
    (5, "controller3"),
    (6, "collision"),
    (7, "phase_preservation"),
    (8, "estimation"),
    (9, "scalability"),
    (10, "numerics"),
];

#[derive(Clone, Debug)]
pub struct Criterion {
    pub id: u8,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
}

impl Criterion {
    /// `PASS  3 controller1  (1.23 s)  detail`
    pub fn line(&self) -> String {
        format!(
            "{} {:>2} {:<19} ({:6.2} s)  {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.elapsed.as_secs_f64(),
            self.detail
        )
    }
}

/// Named comparisons collected into one verdict.
#[derive(Default)]
struct Checks {
    ok: bool,
    text: String,
}

impl Checks {
    fn new() -> Self {
        Checks {
            ok: true,
            text: String::new(),
        }
    }

    fn push(&mut self, ok: bool, what: String) {
        self.ok &= ok;
        if !self.text.is_empty() {
            self.text.push_str("; ");
        }
        let _ = write!(self.text, "{what}{}", if ok { "" } else { " FAIL" });
    }

    fn below(&mut self, label: &str, value: f64, bound: f64) {
        self.push(value < bound, format!("{label}={value:.3e}<{bound:.0e}"));
    }

    fn within(&mut self, label: &str, value: f64, expected: f64, rel: f64) {
        let err = (value - expected).abs() / expected.abs();
        self.push(
            err <= rel,
            format!(
                "{label}={value:.5} vs {expected:.5} ({:.2}% <= {:.0}%)",
                100.0 * err,
                100.0 * rel
            ),
        );
    }

    fn fail(&mut self, what: String) {
        self.push(false, what);
    }

    fn budget(&mut self, start: Instant, budget: Duration) {
        let t = start.elapsed();
        if t > budget {
            self.fail(format!(
                "runtime {:.1} s over {} s",
                t.as_secs_f64(),
                budget.as_secs()
            ));
        }
    }
}

/// Runs criteria, caching simulation logs.
pub struct Verifier {
    overrides: Vec<String>,
    opts: RunOptions,
    logs: Mutex<BTreeMap<String, Arc<SimLog>>>,
}

impl Default for Verifier {
    fn default() -> Self {
        Verifier::new(Vec::new())
    }
}

impl Verifier {
    /// `overrides` (`key=value`) apply to every scenario the criteria run.
    pub fn new(overrides: Vec<String>) -> Self {
        Verifier {
            overrides,
            opts: RunOptions {
                parallel: true,
                record_trace: false,
            },
            logs: Mutex::new(BTreeMap::new()),
        }
    }

    fn scenario(&self, name: &str, extra: &[String]) -> Result<Scenario> {
        let mut all = self.overrides.clone();
        all.extend_from_slice(extra);
        Scenario::builtin_with(name, &all)
    }

    fn log(&self, name: &str) -> Result<Arc<SimLog>> {
        if let Some(log) = self.logs.lock().expect("log cache").get(name) {
            return Ok(log.clone());
        }
        let log = Arc::new(run(&self.scenario(name, &[])?, &self.opts)?);
        self.logs
            .lock()
            .expect("log cache")
            .insert(name.to_string(), log.clone());
        Ok(log)
    }

    fn summary(&self, name: &str) -> Result<(Arc<SimLog>, Summary)> {
        let log = self.log(name)?;
        let s = summarize(&log)?;
        Ok((log, s))
    }

    /// Criteria whose name contains `filter` (all when `None`), in order.
    pub fn run(&self, filter: Option<&str>) -> Vec<Criterion> {
        CRITERIA
            .iter()
            .filter(|(id, name)| filter.map_or(true, |f| name.contains(f) || id.to_string() == f))
            .map(|&(id, _)| self.check(id))
            .collect()
    }

    pub fn check(&self, id: u8) -> Criterion {
        let (_, name) = CRITERIA
            .iter()
            .find(|c| c.0 == id)
            .copied()
            .unwrap_or((id, "unknown"));
        let start = Instant::now();
        let checks = match id {
            1 => Ok(self.identities(start)),
            2 => Ok(self.spectrum(start)),
            3 => self.controller1(start),
            4 => self.controller2(start),
            5 => self.controller3(start),
            6 => self.collision(start),
            7 => self.phase_preservation(start),
            8 => self.estimation(start),
            9 => self.scalability(start),
            10 => self.numerics(start),
            _ => {
                let mut c = Checks::new();
                c.fail(format!("no criterion {id}"));
                Ok(c)
            }
        };
        let (passed, detail) = match checks {
            Ok(c) => (c.ok, c.text),
            Err(e) => (false, format!("error: {e}")),
        };
        Criterion {
            id,
            name,
            passed,
            detail,
            elapsed: start.elapsed(),
        }
    }

    fn identities(&self, start: Instant) -> Checks {
        let mut c = Checks::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (mut structural, mut vectorized, mut sum_gap) = (0.0f64, 0.0f64, 0.0f64);
        let mut metzler = f64::INFINITY;
        let mut rank_ok = true;
        for n in ALGEBRA_SIZES {
            let oracle = match CirculantOracle::new(n) {
                Ok(o) => o,
                Err(e) => {
                    c.fail(format!("n={n}: {e}"));
                    continue;
                }
            };
            for (_, r) in oracle.identity_residuals() {
                structural = structural.max(r);
            }
            metzler = metzler.min(oracle.min_off_diagonal(1.0));
            rank_ok &= oracle.laplacian_rank() == n - 1;
            for _ in 0..20 {
                let mut phi: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..TAU)).collect();
                phi.sort_by(f64::total_cmp);
                let offset = TAU * rng.gen_range(-3i32..=3) as f64;
                phi.iter_mut().for_each(|p| *p += offset);
                let views = ring_views(&phi);
                let v = nalgebra::DVector::from_vec(phi.clone());
                let (bar, span, gaps) = (oracle.phi_bar(&v), oracle.half_span(&v), oracle.gaps(&v));
                for (i, view) in views.iter().enumerate() {
                    vectorized = vectorized
                        .max((view.phi_bar - bar[i]).abs())
                        .max((view.half_span - span[i]).abs())
                        .max((view.gap - gaps[i]).abs());
                }
                sum_gap = sum_gap.max((views.iter().map(|v| v.gap).sum::<f64>() - TAU).abs());
            }
        }
        c.below("structural", structural, IDENTITY_TOL);
        c.below("local_vs_matrix", vectorized, IDENTITY_TOL);
        c.below("sum_gaps-2pi", sum_gap, IDENTITY_TOL);
        c.push(metzler >= 0.0, format!("metzler_min_offdiag={metzler:.3}"));
        c.push(
            rank_ok,
            format!(
                "rank(C-I)=n-1 {}",
                if rank_ok { "all n" } else { "violated" }
            ),
        );
        c.budget(start, BUDGET_ALGEBRA);
        c
    }

    fn spectrum(&self, start: Instant) -> Checks {
        let mut c = Checks::new();
        let (mut spec_err, mut block_err) = (0.0f64, 0.0f64);
        let mut one_zero = true;
        for n in ALGEBRA_SIZES {
            let (eig, oracle) = match (spectrum(n), CirculantOracle::new(n)) {
                (Ok(e), Ok(o)) => (e, o),
                (Err(e), _) | (_, Err(e)) => {
                    c.fail(format!("n={n}: {e}"));
                    continue;
                }
            };
            for (a, b) in eig.iter().zip(closed_form_spectrum(n)) {
                spec_err = spec_err.max((a - b).abs());
            }
            one_zero &= eig.iter().filter(|e| e.abs() < SPECTRUM_TOL).count() == 1;
            match block_eigenpairs(&oracle.laplacian(), BLOCK_GAINS.0, BLOCK_GAINS.1) {
                Ok(pairs) => {
                    for p in pairs {
                        block_err = block_err.max(p.residual);
                    }
                }
                Err(e) => c.fail(format!("n={n}: {e}")),
            }
        }
        c.below("eig_vs_closed_form", spec_err, SPECTRUM_TOL);
        c.push(one_zero, format!("single_zero_eigenvalue={one_zero}"));
        c.below("block_residual", block_err, SPECTRUM_TOL);
        c.budget(start, BUDGET_ALGEBRA);
        c
    }

    fn convergence(c: &mut Checks, s: &Summary) {
        c.below("rho_err", s.final_rho_error, CONVERGENCE_TOL);
        c.below("phase_err", s.final_phase_error, CONVERGENCE_TOL);
        c.below("rate_err", s.final_rate_error, CONVERGENCE_TOL);
        c.below("height", s.final_height, CONVERGENCE_TOL);
    }

    fn controller1(&self, start: Instant) -> Result<Checks> {
        let mut c = Checks::new();
        let (log, s) = self.summary("v1_fig3")?;
        Self::convergence(&mut c, &s);
        let k_phi = log.scenario.controller.gains.k_phi;
        let expected = k_phi * (1.0 - (TAU / s.n as f64).cos());
        match s.phase_rate {
            Some(rate) if expected > 0.0 => {
                c.within("phase_decay", rate, expected, DECAY_RATE_REL_TOL)
            }
            _ => c.fail(format!("phase_decay undefined (expected {expected:.5})")),
        }
        c.budget(start, BUDGET_SIM);
        Ok(c)
    }

    fn controller2(&self, start: Instant) -> Result<Checks> {
        let mut c = Checks::new();
        let (log, s) = self.summary("v2_fig4")?;
        let window = log.scenario.controller.window.unwrap_or(f64::NAN);
        let rates = crate::sim::metrics::final_phase_rates(&log)?;
        let worst = rates
            .iter()
            .map(|(_, w)| *w)
            .max_by(|a, b| {
                (a - s.target_rate)
                    .abs()
                    .total_cmp(&(b - s.target_rate).abs())
            })
            .unwrap_or(f64::NAN);
        c.within(
            "phase_rate",
            worst,
            TAU / (s.n as f64 * window),
            WINDOW_REL_TOL,
        );
        match s.escape_window {
            Some(w) => c.within("escape_window", w, window, WINDOW_REL_TOL),
            None => c.fail("escape_window undefined".into()),
        }
        c.budget(start, BUDGET_SIM);
        Ok(c)
    }

    fn controller3(&self, start: Instant) -> Result<Checks> {
        let mut c = Checks::new();
        let (_, s) = self.summary("v3_fig5")?;
        c.push(true, format!("xi_mean={:.4}", s.target_rate));
        c.below("rate_err", s.final_rate_error, V3_RATE_TOL);
        let (_, leader) = self.summary("leader_corollary")?;
        c.push(true, format!("leader_target={:.4}", leader.target_rate));
        c.below("leader_rate_err", leader.final_rate_error, LEADER_RATE_TOL);
        c.budget(start, BUDGET_SIM);
        Ok(c)
    }

    fn collision(&self, start: Instant) -> Result<Checks> {
        let mut c = Checks::new();
        let (plain_log, plain) = self.summary("collision_fig7_plain")?;
        let two_r = 2.0 * plain_log.safety_radius().unwrap_or(f64::NAN);
        c.push(
            plain.min_distance <= two_r,
            format!("plain_min_D={:.4}<={two_r}", plain.min_distance),
        );
        let pairs: Vec<String> = plain
            .collision_pairs
            .iter()
            .map(|(i, j)| format!("{i}-{j}"))
            .collect();
        c.push(
            plain.collision_pairs.len() >= MIN_COLLIDING_PAIRS,
            format!("plain_pairs=[{}]", pairs.join(",")),
        );
        let (safe_log, safe) = self.summary("collision_fig7_safe")?;
        let two_r = 2.0 * safe_log.safety_radius().unwrap_or(f64::NAN);
        c.push(
            safe.min_distance > two_r,
            format!("safe_min_D={:.4}>{two_r}", safe.min_distance),
        );
        c.push(
            safe.warnings.is_empty(),
            if safe.warnings.is_empty() {
                "safe_conditions_met".into()
            } else {
                format!("safe_conditions: {}", safe.warnings.join(", "))
            },
        );
        Self::convergence(&mut c, &safe);
        c.budget(start, BUDGET_SIM);
        Ok(c)
    }

    fn phase_preservation(&self, start: Instant) -> Result<Checks> {
        let mut c = Checks::new();
        for name in ["v1_fig3", "collision_fig7_plain", "collision_fig7_safe"] {
            let log = self.log(name)?;
            let drops = delta_min_drops(&log, DELTA_MIN_SLACK);
            let worst = drops.iter().map(|d| d.1).fold(0.0, f64::max);
            c.push(
                drops.is_empty(),
                format!("{name}: drops={} worst={worst:.1e}", drops.len()),
            );
            let last = log.last();
            let target = TAU / last.robots.len() as f64;
            c.below(
                &format!("{name}: |delta_min-2pi/n|"),
                (last.delta_min - target).abs(),
                DELTA_MIN_FINAL_TOL,
            );
        }
        c.budget(start, BUDGET_SIM);
        Ok(c)
    }

    fn estimation(&self, start: Instant) -> Result<Checks> {
        let mut c = Checks::new();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut worst = 0.0f64;
        for _ in 0..TRACKING_CASES {
            let amp = rng.gen_range(0.5..3.0);
            let freq = rng.gen_range(0.2..1.5);
            let phase = rng.gen_range(0.0..TAU);
            let slope = rng.gen_range(-1.0..1.0);
            let offset = rng.gen_range(-5.0..5.0);
            let signal = move |t: f64| {
                (
                    offset + slope * t + amp * (freq * t + phase).sin(),
                    slope + amp * freq * (freq * t + phase).cos(),
                )
            };
            let tracked = tracking_run(5, Topology::Ring, 20.0, 0.01, 10.0, 0.0, signal)?;
            worst = worst.max(tracked.max_error_after(TRACKING_SETTLE) / amp);
        }
        c.below("tracking_err/amplitude", worst, TRACKING_REL_TOL);

        let (_, safe) = self.summary("collision_fig7_safe")?;
        match (safe.sigma_margin, safe.sigma_final_gap) {
            (Some(margin), Some(gap)) => {
                c.push(
                    margin >= -SIGMA_SLACK,
                    format!("min(sigma_hat-sigma)={margin:.3e}>=-{SIGMA_SLACK:.0e}"),
                );
                c.below("final|sigma_hat-sigma|", gap, SIGMA_FINAL_TOL);
            }
            _ => c.fail("no sigma audit in the safe run".into()),
        }
        c.budget(start, BUDGET_SIM);
        Ok(c)
    }

    fn scalability(&self, start: Instant) -> Result<Checks> {
        let mut c = Checks::new();
        let mut per_robot = Vec::new();
        let mut points = Vec::new();
        for n in SWEEP_SIZES {
            let s = self.scenario(
                "v1_fig3",
                &[
                    format!("robots.count={n}"),
                    format!("duration={SWEEP_DURATION}"),
                ],
            )?;
            let log = run(&s, &self.opts)?;
            per_robot.push(log.stats.per_robot_rate());
            points.push((n as f64, log.stats.total_rate()));
        }
        let max = per_robot.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = per_robot.iter().copied().fold(f64::INFINITY, f64::min);
        let table: Vec<String> = SWEEP_SIZES
            .iter()
            .zip(&per_robot)
            .zip(&points)
            .map(|((n, r), (_, t))| format!("n={n}:{r:.2}/{t:.1}"))
            .collect();
        c.push(true, format!("rates(per robot/total) {}", table.join(" ")));
        c.push(
            max / min < RATE_RATIO_MAX,
            format!("per_robot_ratio={:.4}<{RATE_RATIO_MAX}", max / min),
        );
        let r2 = r_squared(&points);
        c.push(
            r2 > LINEAR_R2_MIN,
            format!("total_R2={r2:.6}>{LINEAR_R2_MIN}"),
        );
        c.budget(start, BUDGET_SWEEP);
        Ok(c)
    }

    fn numerics(&self, start: Instant) -> Result<Checks> {
        let mut c = Checks::new();
        let (fd, inv) = jacobian_checks(JACOBIAN_POINTS, 10);
        c.below("jacobian_fd_rel", fd, JACOBIAN_FD_TOL);
        c.below("J*Jinv-I", inv, JACOBIAN_INVERSE_TOL);

        let base = self.scenario("v1_fig3", &[format!("duration={NUMERICS_DURATION}")])?;
        let finals = [1.0, 0.5, 0.25]
            .iter()
            .map(|f| {
                let mut s = base.clone();
                s.dt = base.dt * f;
                run(&s, &self.opts).map(|log| log.last().positions())
            })
            .collect::<Result<Vec<_>>>()?;
        let diff = |a: &[(usize, Vec3)], b: &[(usize, Vec3)]| {
            a.iter()
                .zip(b)
                .map(|(x, y)| (x.1 - y.1).norm())
                .fold(0.0, f64::max)
        };
        let (d1, d2) = (diff(&finals[0], &finals[1]), diff(&finals[1], &finals[2]));
        let dt = base.dt;
        c.push(
            d1 < STEP_HALVING_C * dt && d2 < STEP_HALVING_C * dt / 2.0,
            format!(
                "step_halving |dp|={d1:.2e},{d2:.2e} < C*dt,C*dt/2 (C={STEP_HALVING_C}, measured C={:.2e})",
                d1 / dt
            ),
        );

        let serial = RunOptions {
            parallel: false,
            ..self.opts
        };
        let a = run(&base, &serial)?.to_bytes()?;
        let b = run(&base, &self.opts)?.to_bytes()?;
        let a2 = run(&base, &serial)?.to_bytes()?;
        c.push(
            a == b && a == a2,
            format!(
                "determinism {} bytes identical={}",
                a.len(),
                a == b && a == a2
            ),
        );
        c.budget(start, BUDGET_SIM);
        Ok(c)
    }
}

/// Coefficient of determination of the least-squares line through `points`.
pub fn r_squared(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    if syy == 0.0 {
        return 1.0;
    }
    let slope = sxy / sxx;
    let sse: f64 = points
        .iter()
        .map(|p| (p.1 - (my + slope * (p.0 - mx))).powi(2))
        .sum();
    1.0 - sse / syy
}

/// Worst relative central-difference error of the Jacobian and worst
/// `|J J^-1 - I|` over `count` seeded points with `rho` in `[0.1, 10]`.
pub fn jacobian_checks(count: usize, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut fd_err, mut inv_err) = (0.0f64, 0.0f64);
    for _ in 0..count {
        let rho = rng.gen_range(0.1..10.0);
        let phi: f64 = rng.gen_range(0.0..TAU);
        let p = Vec3::new(rho * phi.cos(), rho * phi.sin(), rng.gen_range(-5.0..5.0));
        let (Ok(j), Ok(q)) = (jacobian(&p), cylindrical(&p)) else {
            return (f64::INFINITY, f64::INFINITY);
        };
        let Ok(j_inv) = jacobian_inverse(&q) else {
            return (f64::INFINITY, f64::INFINITY);
        };
        let h = 1e-6 * rho;
        let mut fd = Mat3::zeros();
        for k in 0..3 {
            let mut e = Vec3::zeros();
            e[k] = h;
            let (Ok(a), Ok(b)) = (cylindrical(&(p + e)), cylindrical(&(p - e))) else {
                return (f64::INFINITY, f64::INFINITY);
            };
            let mut dphi = a.phi - b.phi;
            dphi -= TAU * (dphi / TAU).round();
            fd.set_column(
                k,
                &Vec3::new(
                    (a.rho - b.rho) / (2.0 * h),
                    dphi / (2.0 * h),
                    (a.z - b.z) / (2.0 * h),
                ),
            );
        }
        fd_err = fd_err.max((fd - j).amax() / j.amax());
        inv_err = inv_err.max((j * j_inv - Mat3::identity()).amax());
    }
    (fd_err, inv_err)
}
