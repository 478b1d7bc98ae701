//! Ring ordering and the per-robot phase quantities.
//!
//! Robots are ordered once, at the initial instant, by increasing phase. Each
//! robot then only needs the (unwrapped) phases of its ring predecessor and
//! successor. Ring positions `1` and `n` sit on either side of the `0 / 2*pi`
//! seam, so their neighbor phases carry a `-2*pi` or `+2*pi` correction.

pub mod oracle;

use std::f64::consts::{PI, TAU};

use crate::error::{Error, Result};

/// Representative of `a` in `(-pi, pi]`.
pub fn wrap_to_pi(a: f64) -> f64 {
    let r = (a + PI).rem_euclid(TAU) - PI;
    if r <= -PI {
        r + TAU
    } else {
        r
    }
}

/// Representative of `a` in `[0, 2*pi)`.
pub fn wrap_to_2pi(a: f64) -> f64 {
    let r = a.rem_euclid(TAU);
    if r >= TAU {
        0.0
    } else {
        r
    }
}

/// Turns a stream of phases in `[0, 2*pi)` into a continuous signal by taking
/// each increment in `(-pi, pi]`.
#[derive(Clone, Copy, Debug, Default)]
pub struct PhaseUnwrapper {
    last: Option<f64>,
}

impl PhaseUnwrapper {
    pub fn new() -> Self {
        PhaseUnwrapper { last: None }
    }

    /// Starts from the representative of `raw` closest to `reference`.
    pub fn near(raw: f64, reference: f64) -> Self {
        PhaseUnwrapper {
            last: Some(reference + wrap_to_pi(raw - reference)),
        }
    }

    pub fn update(&mut self, raw: f64) -> f64 {
        let next = match self.last {
            None => raw,
            Some(prev) => prev + wrap_to_pi(raw - prev),
        };
        self.last = Some(next);
        next
    }

    pub fn last(&self) -> Option<f64> {
        self.last
    }
}

/// Ring order from initial phases: returns the ids sorted by increasing phase,
/// ties broken by ascending id. Position `k` of the result is ring index
/// `k + 1`.
pub fn assign_ring(initial: &[(usize, f64)]) -> Result<Vec<usize>> {
    if initial.len() < 2 {
        return Err(Error::TooFewRobots { n: initial.len() });
    }
    if let Some(&(_, phi)) = initial.iter().find(|(_, phi)| !phi.is_finite()) {
        return Err(Error::Config(format!("non-finite initial phase {phi}")));
    }
    let mut sorted = initial.to_vec();
    sorted.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    Ok(sorted.into_iter().map(|(id, _)| id).collect())
}

/// Where a robot sits relative to the ring seam. With two robots the first
/// robot's predecessor and successor coincide, and only its predecessor is
/// shifted.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RingSeam {
    pub first: bool,
    pub last: bool,
}

impl RingSeam {
    /// Seam flags of zero-based ring position `pos` in a ring of `n`.
    pub fn at(pos: usize, n: usize) -> Self {
        RingSeam {
            first: pos == 0,
            last: pos + 1 == n,
        }
    }
}

/// A robot's local picture of the ring.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RingView {
    pub phi: f64,
    /// Predecessor phase with the seam correction applied.
    pub pred: f64,
    /// Successor phase with the seam correction applied.
    pub succ: f64,
    /// Average of predecessor and successor phases.
    pub phi_bar: f64,
    /// Half of the predecessor-to-successor span.
    pub half_span: f64,
    /// Gap to the predecessor.
    pub gap: f64,
}

impl RingView {
    pub fn new(seam: RingSeam, phi: f64, pred: f64, succ: f64) -> Self {
        let pred = if seam.first { pred - TAU } else { pred };
        let succ = if seam.last { succ + TAU } else { succ };
        RingView {
            phi,
            pred,
            succ,
            phi_bar: 0.5 * (succ + pred),
            half_span: 0.5 * (succ - pred),
            gap: phi - pred,
        }
    }

    pub fn phase_error(&self) -> f64 {
        phase_error(self.phi_bar, self.phi)
    }
}

pub fn phase_error(phi_bar: f64, phi: f64) -> f64 {
    phi_bar - phi
}

/// Views of every robot, given phases in ring order.
pub fn ring_views(phases: &[f64]) -> Vec<RingView> {
    let n = phases.len();
    (0..n)
        .map(|i| {
            RingView::new(
                RingSeam::at(i, n),
                phases[i],
                phases[(i + n - 1) % n],
                phases[(i + 1) % n],
            )
        })
        .collect()
}

/// Consecutive phase differences, in ring order.
pub fn gaps(phases: &[f64]) -> Vec<f64> {
    ring_views(phases).iter().map(|v| v.gap).collect()
}

pub fn min_gap(phases: &[f64]) -> f64 {
    gaps(phases).into_iter().fold(f64::INFINITY, f64::min)
}
