//! Equivariant shrinking-profile generator.
//!
//! The ansatz `psi(x) = (sin h(rho) x/rho, cos h(rho))`, `rho = |x|`, turns
//! the Gaussian-weighted Dirichlet functional on `R^ell` into a 1-d problem;
//! its Euler-Lagrange equation is
//!
//! ```text
//!   h'' + ((ell-1)/rho - rho/2) h' - (ell-1) sin(2h) / (2 rho^2) = 0
//! ```
//!
//! solved here by shooting from `h(0) = 0, h'(0) = a` with an adaptive RK4
//! integrator. The caller bisects `a` so that `h` reaches a target angle;
//! shooting outcomes are reported, existence is never asserted.

use crate::error::{Error, Result};
use crate::util;
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_2;

/// Tabulated profile `h` on `[0, rho_max]` with its derivative, as produced
/// by one shot of the integrator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShrinkProfile {
    /// Transverse dimension `ell` (maps into `S^ell`).
    pub ell: usize,
    /// Shooting parameter `h'(0)`.
    pub shoot_a: f64,
    pub rho: Vec<f64>,
    pub h: Vec<f64>,
    pub hp: Vec<f64>,
    pub rho_max: f64,
    /// Boundary behavior achieved at the end of the integration.
    pub outcome: ShootOutcome,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ShootOutcome {
    /// The solution escaped upward (`h >= pi`) before `rho_max`.
    Overshoot,
    /// The solution escaped downward (`h <= 0` after rising) before `rho_max`.
    Undershoot,
    /// Reached `rho_max` without escaping; carries `h(rho_max)`.
    Reached(f64),
    /// Integration produced a non-finite value at the recorded `rho`.
    Blowup(f64),
}

fn rhs(ell: usize, rho: f64, h: f64, hp: f64) -> f64 {
    let l1 = (ell - 1) as f64;
    -(l1 / rho - rho / 2.0) * hp + l1 * (2.0 * h).sin() / (2.0 * rho * rho)
}

fn rk4_step(ell: usize, rho: f64, h: f64, hp: f64, dr: f64) -> (f64, f64) {
    let k1h = hp;
    let k1p = rhs(ell, rho, h, hp);
    let k2h = hp + 0.5 * dr * k1p;
    let k2p = rhs(ell, rho + 0.5 * dr, h + 0.5 * dr * k1h, hp + 0.5 * dr * k1p);
    let k3h = hp + 0.5 * dr * k2p;
    let k3p = rhs(ell, rho + 0.5 * dr, h + 0.5 * dr * k2h, hp + 0.5 * dr * k2p);
    let k4h = hp + dr * k3p;
    let k4p = rhs(ell, rho + dr, h + dr * k3h, hp + dr * k3p);
    (
        h + dr / 6.0 * (k1h + 2.0 * k2h + 2.0 * k3h + k4h),
        hp + dr / 6.0 * (k1p + 2.0 * k2p + 2.0 * k3p + k4p),
    )
}

const STEP: f64 = 2e-3;

/// Integrate one shot `h(0) = 0, h'(0) = a` up to `rho_max`.
///
/// The origin is singular; the integration starts from the series
/// `h = a rho + c rho^3` at the first grid node. The table is uniform in
/// `rho` (fixed RK4 step) so finite-difference consumers see a regular grid.
pub fn shoot(ell: usize, a: f64, rho_max: f64) -> Result<ShrinkProfile> {
    if !(3..=6).contains(&ell) {
        return Err(Error::Shooting(format!(
            "transverse dimension {ell} outside supported range 3..=6"
        )));
    }
    let l1 = (ell - 1) as f64;
    // series coefficient of rho^3 at the regular singular point
    let c3 = (a / 2.0 - 2.0 * l1 / 3.0 * a * a * a) / (2.0 * ell as f64 + 4.0);
    let n = (rho_max / STEP).round() as usize;
    let mut rho = STEP;
    let mut h = a * rho + c3 * rho.powi(3);
    let mut hp = a + 3.0 * c3 * rho * rho;
    let mut rows_rho = vec![0.0, rho];
    let mut rows_h = vec![0.0, h];
    let mut rows_hp = vec![a, hp];
    let mut outcome = ShootOutcome::Reached(h);
    for i in 1..n {
        let (h2, p2) = rk4_step(ell, rho, h, hp, STEP);
        rho = (i + 1) as f64 * STEP;
        h = h2;
        hp = p2;
        rows_rho.push(rho);
        rows_h.push(h);
        rows_hp.push(hp);
        if !h.is_finite() || !hp.is_finite() {
            outcome = ShootOutcome::Blowup(rho);
            break;
        }
        // the friction coefficient turns negative for rho > sqrt(2(ell-1)),
        // so every shot eventually escapes; classify by the direction
        if h >= std::f64::consts::PI {
            outcome = ShootOutcome::Overshoot;
            break;
        }
        if h <= 0.0 {
            outcome = ShootOutcome::Undershoot;
            break;
        }
        outcome = ShootOutcome::Reached(h);
    }
    Ok(ShrinkProfile {
        ell,
        shoot_a: a,
        rho: rows_rho,
        h: rows_h,
        hp: rows_hp,
        rho_max: rho,
        outcome,
    })
}

/// Bisect the shooting parameter so that `h` stays near the equator angle
/// `pi/2` for as long as possible; the returned table is truncated where the
/// unstable mode takes over. Non-convergence is reported as an error.
pub fn solve_equivariant(ell: usize, rho_max: f64) -> Result<ShrinkProfile> {
    let over = |p: &ShrinkProfile| match p.outcome {
        ShootOutcome::Overshoot => true,
        ShootOutcome::Undershoot => false,
        ShootOutcome::Reached(hend) => hend >= FRAC_PI_2,
        ShootOutcome::Blowup(_) => *p.h.last().unwrap() >= FRAC_PI_2,
    };
    // geometric scan for an adjacent pair with differing escape directions;
    // the scan starts at 1.0 so the bracket encloses the principal profile
    // rather than a slow small-amplitude branch
    let grid: Vec<f64> = (0..=20).map(|k| 10f64.powf(k as f64 / 20.0)).collect();
    let mut bracket = None;
    let mut prev: Option<(f64, bool)> = None;
    for &a in &grid {
        let o = over(&shoot(ell, a, rho_max)?);
        if let Some((pa, po)) = prev {
            if po != o {
                bracket = Some((pa, a, po));
                break;
            }
        }
        prev = Some((a, o));
    }
    let (mut lo, mut hi, lo_over) = bracket.ok_or_else(|| {
        Error::Shooting(format!("no sign change in shooting bracket for ell = {ell}"))
    })?;
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if over(&shoot(ell, mid, rho_max)?) == lo_over {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut best = shoot(ell, 0.5 * (lo + hi), rho_max)?;
    // freeze the tail where the escape has begun: keep everything up to the
    // last sample still within 0.35 of the equator
    if let Some(cut) = best
        .h
        .iter()
        .rposition(|&h| (h - FRAC_PI_2).abs() <= 0.35)
    {
        if cut + 1 < best.h.len() {
            best.rho.truncate(cut + 1);
            best.h.truncate(cut + 1);
            best.hp.truncate(cut + 1);
            best.rho_max = *best.rho.last().unwrap();
        }
    }
    Ok(best)
}

impl ShrinkProfile {
    /// Limiting cone angle `lim psi(rho)` used when the shrinker is
    /// continued forward in time as its tangent cone.
    pub fn h_end(&self) -> f64 {
        *self.h.last().unwrap()
    }

    /// Cubic Hermite interpolation of `(h, h')`. Beyond the table the profile
    /// continues with its last angle and zero slope.
    pub fn eval(&self, rho: f64) -> (f64, f64) {
        let n = self.rho.len();
        if rho <= 0.0 {
            return (0.0, self.shoot_a);
        }
        if rho >= self.rho[n - 1] {
            return (self.h[n - 1], 0.0);
        }
        let i = match self
            .rho
            .binary_search_by(|r| r.partial_cmp(&rho).unwrap())
        {
            Ok(i) => i,
            Err(i) => i - 1,
        };
        let (r0, r1) = (self.rho[i], self.rho[i + 1]);
        let dr = r1 - r0;
        let s = (rho - r0) / dr;
        let (h0, h1) = (self.h[i], self.h[i + 1]);
        let (p0, p1) = (self.hp[i], self.hp[i + 1]);
        let s2 = s * s;
        let s3 = s2 * s;
        let h = (2.0 * s3 - 3.0 * s2 + 1.0) * h0
            + (s3 - 2.0 * s2 + s) * dr * p0
            + (-2.0 * s3 + 3.0 * s2) * h1
            + (s3 - s2) * dr * p1;
        let hp = ((6.0 * s2 - 6.0 * s) * h0
            + (3.0 * s2 - 4.0 * s + 1.0) * dr * p0
            + (-6.0 * s2 + 6.0 * s) * h1
            + (3.0 * s2 - 2.0 * s) * dr * p1)
            / dr;
        (h, hp)
    }

    /// Max ODE residual of the tabulated solution: a fourth-order central
    /// difference of the tabulated `h'` against the right-hand side, over
    /// `[rho_lo, rho_hi]`. The table is uniform by construction.
    pub fn ode_residual(&self, rho_lo: f64, rho_hi: f64) -> f64 {
        let mut worst = 0.0f64;
        for i in 2..self.rho.len().saturating_sub(2) {
            let r = self.rho[i];
            if r < rho_lo || r > rho_hi {
                continue;
            }
            let dr = self.rho[i + 1] - self.rho[i];
            let d = (-self.hp[i + 2] + 8.0 * self.hp[i + 1] - 8.0 * self.hp[i - 1]
                + self.hp[i - 2])
                / (12.0 * dr);
            let res = (d - rhs(self.ell, r, self.h[i], self.hp[i])).abs();
            worst = worst.max(res);
        }
        worst
    }

    /// Gaussian-weighted energy integrand integrated by the trapezoid rule
    /// over the tabulated range (sphere-area factor omitted).
    pub fn gaussian_energy(&self) -> f64 {
        let l1 = (self.ell - 1) as f64;
        let mut terms = Vec::with_capacity(self.rho.len());
        for i in 1..self.rho.len() {
            let density = |k: usize| {
                let r: f64 = self.rho[k];
                if r == 0.0 {
                    return 0.0;
                }
                let s = self.h[k].sin();
                (self.hp[k] * self.hp[k] + l1 * s * s / (r * r))
                    * (-r * r / 4.0).exp()
                    * r.powi(self.ell as i32 - 1)
            };
            let dr = self.rho[i] - self.rho[i - 1];
            terms.push(0.5 * (density(i) + density(i - 1)) * dr);
        }
        util::pairwise_sum(&terms)
    }

    /// CSV rows `(rho, h)` with a header recording `ell`, `a`, `rho_max`.
    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "# ell={} a={:.17e} rho_max={:.17e}\nrho,h\n",
            self.ell, self.shoot_a, self.rho_max
        );
        for (r, h) in self.rho.iter().zip(&self.h) {
            out.push_str(&format!("{r:.17e},{h:.17e}\n"));
        }
        out
    }
}
