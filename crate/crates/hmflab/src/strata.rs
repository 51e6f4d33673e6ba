//! Quantitative stratification: scale bit-vectors from annulus energies,
//! the E_{T^beta} decomposition, S^j_{eta,r} membership over a geometric
//! scale ladder, the regularity scale r_u, the r-bad set, and L^p
//! integrals of 1/r_u.
//!
//! Annulus energies are assembled from cached elementary gamma-annuli so
//! that totals add exactly; the bit-count bound K <= (2q+1) delta^-1
//! Lambda_2 is then an exact consequence of the measured totals and is
//! asserted on every evaluation.

use crate::candidates::Dictionary;
use crate::energies::{self, QuadParams};
use crate::error::{Error, Result};
use crate::geometry::SpaceTimePoint;
use crate::solver::FlowTrajectory;
use crate::util;
use crate::windows::{sample_window, WindowGrid};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Shared stratification parameters, recorded in the run manifest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrataParams {
    pub gamma: f64,
    pub q: usize,
    pub delta: f64,
    pub beta: usize,
    pub eta: f64,
}

impl StrataParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 0.5) {
            return Err(Error::Config(format!(
                "gamma = {} invalid: require 0 < gamma < 1/2",
                self.gamma
            )));
        }
        if self.q == 0 || self.beta <= self.q || self.delta <= 0.0 || self.eta <= 0.0 {
            return Err(Error::Config("require q >= 1, beta > q, delta > 0, eta > 0".into()));
        }
        Ok(())
    }

    fn key(&self) -> (u64, usize, u64, usize) {
        (self.gamma.to_bits(), self.q, self.delta.to_bits(), self.beta)
    }
}

/// (T_alpha)_{1..beta} at one point: T_alpha = 1 if alpha <= q or
/// W_{gamma^(alpha-q), gamma^(alpha+q)} > delta.
#[derive(Debug, Clone)]
pub struct ScaleBitVector {
    pub bits: Vec<u8>,
    /// Number of 1-bits past alpha = q.
    pub k: usize,
    /// Annulus energies W_alpha (zero for alpha <= q, by convention).
    pub w: Vec<f64>,
    /// This point's total over the elementary ladder (<= Lambda_2).
    pub total: f64,
    pub params: StrataParams,
}

/// Elementary gamma-annulus energies A_b = W_{gamma^b, gamma^(b+1)} for
/// b = 1 .. beta+q-1; every W_alpha is a sum of 2q of these.
fn elementary_ladder(
    traj: &FlowTrajectory,
    x: &SpaceTimePoint,
    params: &StrataParams,
    quad: &QuadParams,
) -> Result<Vec<f64>> {
    let top = params.beta + params.q - 1;
    (1..=top)
        .map(|b| {
            let r1 = params.gamma.powi(b as i32);
            let r2 = params.gamma.powi(b as i32 + 1);
            Ok(energies::struwe_annulus(traj, x, r1, r2, quad)?.value)
        })
        .collect()
}

/// The run-level Lambda_2 estimate: max over the sample cloud of the
/// elementary-ladder total.
pub fn measured_lambda2(
    traj: &FlowTrajectory,
    points: &[SpaceTimePoint],
    params: &StrataParams,
    quad: &QuadParams,
) -> Result<f64> {
    params.validate()?;
    let totals: Vec<Result<f64>> = points
        .par_iter()
        .map(|x| Ok(util::pairwise_sum(&elementary_ladder(traj, x, params, quad)?)))
        .collect();
    let mut best = 0.0f64;
    for t in totals {
        best = best.max(t?);
    }
    Ok(best)
}

pub fn scale_bits(
    traj: &FlowTrajectory,
    x: &SpaceTimePoint,
    params: &StrataParams,
    lambda2: f64,
    quad: &QuadParams,
) -> Result<ScaleBitVector> {
    params.validate()?;
    if let FlowTrajectory::Simulated(sim) = traj {
        let h = sim.snapshots[0].grid.h;
        let finest = params.gamma.powi((params.beta + params.q) as i32);
        if finest < 4.0 * h {
            return Err(Error::RangeViolation(format!(
                "gamma^(beta+q) = {finest} unresolvable on grid h = {h} (need >= 4h)"
            )));
        }
    }
    let ladder = elementary_ladder(traj, x, params, quad)?;
    let total = util::pairwise_sum(&ladder);
    let (q, beta) = (params.q, params.beta);
    let mut bits = vec![0u8; beta];
    let mut w = vec![0.0; beta];
    let mut k = 0usize;
    for alpha in 1..=beta {
        if alpha <= q {
            bits[alpha - 1] = 1;
            continue;
        }
        // W_alpha over (gamma^(alpha-q), gamma^(alpha+q)) is the exact sum
        // of its elementary annuli
        let wa = util::pairwise_sum(&ladder[alpha - q - 1..alpha + q - 1]);
        w[alpha - 1] = wa;
        if wa > params.delta {
            bits[alpha - 1] = 1;
            k += 1;
        }
    }
    // quantitative differentiation: each elementary annulus is shared by at
    // most 2q of the W_alpha, so K delta < sum W_alpha <= (2q+1) Lambda_2
    let bound = (2.0 * q as f64 + 1.0) / params.delta * lambda2.max(total);
    assert!(
        (k as f64) <= bound,
        "K = {k} exceeds (2q+1) delta^-1 Lambda_2 = {bound}"
    );
    Ok(ScaleBitVector { bits, k, w, total, params: *params })
}

/// Maximal number of 1-bits: Q = floor((2q+1) delta^-1 Lambda_2) + q.
pub fn q_bound(params: &StrataParams, lambda2: f64) -> usize {
    ((2.0 * params.q as f64 + 1.0) / params.delta * lambda2).floor() as usize + params.q
}

/// Group points by bit-vector key: E_{T^beta} = { X : T_alpha(X) = T_alpha^beta }.
pub fn decompose(
    bitvecs: &[ScaleBitVector],
    lambda2: f64,
) -> Result<BTreeMap<Vec<u8>, Vec<usize>>> {
    let mut classes: BTreeMap<Vec<u8>, Vec<usize>> = BTreeMap::new();
    let first = match bitvecs.first() {
        Some(b) => b.params,
        None => return Ok(classes),
    };
    for (i, bv) in bitvecs.iter().enumerate() {
        if bv.params.key() != first.key() {
            return Err(Error::Config("mixed stratification params in decompose".into()));
        }
        classes.entry(bv.bits.clone()).or_default().push(i);
    }
    let qq = q_bound(&first, lambda2);
    for key in classes.keys() {
        let ones = key.iter().filter(|&&b| b == 1).count();
        assert!(ones <= qq, "class with {ones} ones exceeds Q = {qq}");
    }
    let bound = (first.beta as f64).powi(qq.min(500) as i32);
    assert!((classes.len() as f64) <= bound.max(classes.len() as f64 - 0.5) + 0.5);
    Ok(classes)
}

/// Outcome of the S^j_{eta,r} membership scan.
#[derive(Debug, Clone)]
pub enum Membership {
    /// Every ladder scale kept best-fit distance > eta.
    Member,
    /// A witness scale admitted an eta-close (j+1)-selfsimilar candidate.
    NotMember { scale: f64, distance_sq: f64, kind: &'static str },
    /// A window failed; the point is excluded from volume counts.
    Undetermined { reason: String },
}

#[derive(Debug, Clone)]
pub struct StrataLabel {
    pub j: usize,
    pub eta: f64,
    pub r: f64,
    pub big_r: f64,
    pub ladder: Vec<f64>,
    pub membership: Membership,
}

impl StrataLabel {
    pub fn is_member(&self) -> bool {
        matches!(self.membership, Membership::Member)
    }
}

/// X in S^j_{eta,r} iff no scale s in {R, R gamma, ...} intersect [r, R]
/// admits a (j+1)-selfsimilar candidate within eta. The computed stratum is
/// a superset of the true one (finite dictionary, one-sided distance).
pub fn strata_membership(
    traj: &FlowTrajectory,
    x: &SpaceTimePoint,
    j: usize,
    params: &StrataParams,
    r: f64,
    big_r: f64,
    dict: &Dictionary,
    grid: &WindowGrid,
) -> StrataLabel {
    let mut ladder = Vec::new();
    let mut s = big_r;
    while s >= r * (1.0 - 1e-9) {
        ladder.push(s);
        s *= params.gamma;
    }
    let eta = params.eta;
    for &s in &ladder {
        let w = match sample_window(traj, x, s, grid) {
            Ok(w) => w,
            Err(e) => {
                return StrataLabel {
                    j,
                    eta,
                    r,
                    big_r,
                    ladder,
                    membership: Membership::Undetermined { reason: format!("scale {s}: {e}") },
                }
            }
        };
        match dict.best_fit(&w, j + 1) {
            Ok(fit) => {
                if fit.distance_sq <= eta {
                    return StrataLabel {
                        j,
                        eta,
                        r,
                        big_r,
                        ladder,
                        membership: Membership::NotMember {
                            scale: s,
                            distance_sq: fit.distance_sq,
                            kind: fit.spec.kind_name(),
                        },
                    };
                }
            }
            // no (j+1)-selfsimilar candidates exist at all: vacuous member
            Err(Error::EmptyDictionary { .. }) => break,
            Err(e) => {
                return StrataLabel {
                    j,
                    eta,
                    r,
                    big_r,
                    ladder,
                    membership: Membership::Undetermined { reason: e.to_string() },
                }
            }
        }
    }
    StrataLabel { j, eta, r, big_r, ladder, membership: Membership::Member }
}

/// Which term of r|grad u| + r^2 |grad^2 u| <= 1 binds at r_u.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Binding {
    Gradient,
    Hessian,
    /// No constraint bound within the probed range: r_u = R_max.
    Cap,
}

impl Binding {
    pub fn name(&self) -> &'static str {
        match self {
            Binding::Gradient => "gradient",
            Binding::Hessian => "hessian",
            Binding::Cap => "cap",
        }
    }
}

#[derive(Debug, Clone)]
pub struct RegularityRecord {
    pub x: SpaceTimePoint,
    pub r_u: f64,
    pub binding: Binding,
}

/// sup over probe points of (r |grad u|, r^2 |grad^2 u|); masked probes
/// are skipped (they sit on a measure-zero singular locus whose
/// neighborhoods still register).
fn constraint_sup(
    traj: &FlowTrajectory,
    x: &SpaceTimePoint,
    r: f64,
    times: &[f64],
) -> (f64, f64) {
    let m = traj.m();
    let mut gmax = 0.0f64;
    let mut hmax = 0.0f64;
    let mut probe = |y: &[f64], t: f64| {
        if let (Some(g2), Some(h2)) = (traj.grad_norm_sq(y, t), traj.hess_norm_sq(y, t)) {
            let g = r * g2.sqrt();
            let h = r * r * h2.sqrt();
            if g + h > gmax + hmax {
                gmax = g;
                hmax = h;
            }
        }
    };
    match traj {
        FlowTrajectory::Simulated(sim) => {
            // every grid node inside the ball, every recorded slice in range
            let grid = &sim.snapshots[0].grid;
            let h = grid.h;
            let steps = (r / h).floor() as i64;
            let mut y = vec![0.0; m];
            let mut idx = vec![0i64; m];
            let count = (2 * steps + 1) as usize;
            for &t in times {
                for flat in 0..count.pow(m as u32) {
                    let mut rem = flat;
                    for k in 0..m {
                        idx[k] = (rem % count) as i64 - steps;
                        rem /= count;
                    }
                    let mut d2 = 0.0;
                    for k in 0..m {
                        let off = idx[k] as f64 * h;
                        d2 += off * off;
                        // snap to the nearest grid node
                        y[k] = ((x.x[k] + off) / h - 0.5).round() * h + 0.5 * h;
                    }
                    if d2 <= r * r {
                        probe(&y, t);
                    }
                }
            }
        }
        FlowTrajectory::Analytic { .. } => {
            // lattice of spacing r/6 plus its radial projections to the
            // sphere |y - x| = r, where cone-type suprema are attained
            let steps = 6i64;
            let h = r / steps as f64;
            let mut y = vec![0.0; m];
            let count = (2 * steps + 1) as usize;
            for &t in times {
                probe(&x.x, t);
                for flat in 0..count.pow(m as u32) {
                    let mut rem = flat;
                    let mut d2 = 0.0;
                    for k in 0..m {
                        let off = ((rem % count) as i64 - steps) as f64 * h;
                        rem /= count;
                        y[k] = x.x[k] + off;
                        d2 += off * off;
                    }
                    if d2 <= r * r && d2 > 0.0 {
                        probe(&y, t);
                        let scale = r / d2.sqrt();
                        let yb: Vec<f64> = (0..m)
                            .map(|k| x.x[k] + (y[k] - x.x[k]) * scale)
                            .collect();
                        probe(&yb, t);
                    }
                }
            }
        }
    }
    (gmax, hmax)
}

fn probe_times(traj: &FlowTrajectory, t0: f64, r: f64) -> Vec<f64> {
    match traj {
        FlowTrajectory::Simulated(sim) => {
            let mut out: Vec<f64> = sim
                .snapshots
                .iter()
                .map(|s| s.t)
                .filter(|&t| (t - t0).abs() < r * r)
                .collect();
            if out.is_empty() {
                out.push(t0);
            }
            out
        }
        FlowTrajectory::Analytic { .. } => {
            (0..9).map(|k| t0 + r * r * (k as f64 - 4.0) / 4.5).collect()
        }
    }
}

/// Bisection for r_u(X) = sup { r : sup_{P_r(X)} r|grad u| + r^2|grad^2 u| <= 1 }
/// over (floor, r_max], relative tolerance 2%.
pub fn regularity_scale(
    traj: &FlowTrajectory,
    x: &SpaceTimePoint,
    r_max: f64,
    floor: f64,
) -> RegularityRecord {
    let check = |r: f64| {
        let times = probe_times(traj, x.t, r);
        constraint_sup(traj, x, r, &times)
    };
    let (g, h) = check(r_max);
    if g + h <= 1.0 {
        return RegularityRecord { x: x.clone(), r_u: r_max, binding: Binding::Cap };
    }
    let binding_of = |g: f64, h: f64| if g >= h { Binding::Gradient } else { Binding::Hessian };
    let (gf, hf) = check(floor);
    if gf + hf > 1.0 {
        return RegularityRecord { x: x.clone(), r_u: floor, binding: binding_of(gf, hf) };
    }
    let (mut lo, mut hi) = (floor, r_max);
    let (mut gb, mut hb) = (g, h);
    while hi - lo > 0.02 * hi {
        let mid = 0.5 * (lo + hi);
        let (gm, hm) = check(mid);
        if gm + hm <= 1.0 {
            lo = mid;
        } else {
            hi = mid;
            gb = gm;
            hb = hm;
        }
    }
    RegularityRecord { x: x.clone(), r_u: lo, binding: binding_of(gb, hb) }
}

/// B_r(u) = { X : r_u(X) <= r } over a sample cloud; returns indices.
pub fn bad_set(
    traj: &FlowTrajectory,
    r: f64,
    points: &[SpaceTimePoint],
    r_max: f64,
    floor: f64,
) -> Vec<usize> {
    let recs: Vec<f64> = points
        .par_iter()
        .map(|x| regularity_scale(traj, x, r_max, floor).r_u)
        .collect();
    (0..points.len()).filter(|&i| recs[i] <= r).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LpReport {
    pub value: f64,
    /// Fraction of cells whose r_u sat at the lower cap.
    pub cap_fraction: f64,
    pub floor: f64,
    pub cells: usize,
}

/// Cell-wise sum of r_u^(-p) times cell volume over a space-time lattice on
/// [-box_half, box_half]^m x t_range, with r_u capped below at `floor`.
pub fn lp_reciprocal_integral(
    traj: &FlowTrajectory,
    p: f64,
    r_max: f64,
    box_half: f64,
    n_cells: usize,
    t_range: (f64, f64),
    n_t: usize,
    floor: f64,
) -> LpReport {
    assert!(p > 0.0 && n_cells >= 1 && n_t >= 1);
    let m = traj.m();
    let hx = 2.0 * box_half / n_cells as f64;
    let ht = (t_range.1 - t_range.0) / n_t as f64;
    let cellvol = hx.powi(m as i32) * ht;
    let total = n_cells.pow(m as u32) * n_t;
    let rus: Vec<f64> = (0..total)
        .into_par_iter()
        .map(|flat| {
            let mut rem = flat;
            let mut x = vec![0.0; m];
            for k in 0..m {
                x[k] = -box_half + (rem % n_cells) as f64 * hx + 0.5 * hx;
                rem /= n_cells;
            }
            let t = t_range.0 + rem as f64 * ht + 0.5 * ht;
            regularity_scale(traj, &SpaceTimePoint::new(x, t), r_max, floor).r_u
        })
        .collect();
    let capped = rus.iter().filter(|&&r| r <= floor * (1.0 + 1e-9)).count();
    let terms: Vec<f64> = rus.iter().map(|r| r.powf(-p) * cellvol).collect();
    LpReport {
        value: util::pairwise_sum(&terms),
        cap_fraction: capped as f64 / total as f64,
        floor,
        cells: total,
    }
}

/// Spatial-only regularity scale on one time slice: sup over B_r(x) only.
/// Always >= the parabolic r_u at the same center.
pub fn static_reg_scale(
    traj: &FlowTrajectory,
    x: &[f64],
    t: f64,
    r_max: f64,
    floor: f64,
) -> f64 {
    let center = SpaceTimePoint::new(x.to_vec(), t);
    let check = |r: f64| constraint_sup(traj, &center, r, &[t]);
    let (g, h) = check(r_max);
    if g + h <= 1.0 {
        return r_max;
    }
    let (gf, hf) = check(floor);
    if gf + hf > 1.0 {
        return floor;
    }
    let (mut lo, mut hi) = (floor, r_max);
    while hi - lo > 0.02 * hi {
        let mid = 0.5 * (lo + hi);
        let (gm, hm) = check(mid);
        if gm + hm <= 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::{AnalyticField, Frame};
    use crate::candidates::DictionaryConfig;
    use crate::solver;

    fn params() -> StrataParams {
        StrataParams { gamma: 0.25, q: 1, delta: 5.0, beta: 6, eta: 0.01 }
    }

    fn cone_traj() -> FlowTrajectory {
        let f =
            AnalyticField::static_cone(3, Frame::coordinate(&[0, 1, 2], 3), vec![0.0; 3], 3)
                .unwrap();
        solver::make_analytic(f, 1.0 / 64.0, 0.0)
    }

    fn constant_traj() -> FlowTrajectory {
        let f = AnalyticField::constant(3, vec![0.0, 0.0, 1.0]).unwrap();
        solver::make_analytic(f, 1.0 / 64.0, 0.0)
    }

    #[test]
    fn constant_bits_are_zero_past_q() {
        let traj = constant_traj();
        let p = params();
        let quad = QuadParams::default();
        let bv =
            scale_bits(&traj, &SpaceTimePoint::origin(3), &p, 0.0, &quad).unwrap();
        assert_eq!(bv.k, 0);
        assert_eq!(&bv.bits[..p.q], &[1]);
        assert!(bv.bits[p.q..].iter().all(|&b| b == 0));
        assert!(bv.total < 1e-20);
    }

    #[test]
    fn selfsimilar_center_has_k_zero() {
        let prof = crate::profile::solve_equivariant(3, 8.0).unwrap();
        let f = AnalyticField::shrinking(
            3,
            Frame::coordinate(&[0, 1, 2], 3),
            vec![0.0; 3],
            0.0,
            prof,
        )
        .unwrap();
        let traj = solver::make_analytic(f, 1.0 / 64.0, 0.0);
        let bv = scale_bits(
            &traj,
            &SpaceTimePoint::origin(3),
            &params(),
            0.0,
            &QuadParams::default(),
        )
        .unwrap();
        assert_eq!(bv.k, 0, "w = {:?}", bv.w);
    }

    #[test]
    fn off_center_cone_bits_form_a_band() {
        // X at distance gamma^3 from the cone point: W_alpha peaks where
        // gamma^alpha ~ |X| and decays quadratically in scale both ways
        let traj = cone_traj();
        let p = params();
        let quad = QuadParams { n_space: 16, n_time: 4 };
        let rho = p.gamma.powi(3);
        let x = SpaceTimePoint::new(vec![rho, 0.0, 0.0], 0.0);
        let ladder_total = measured_lambda2(&traj, std::slice::from_ref(&x), &p, &quad).unwrap();
        let bv = scale_bits(&traj, &x, &p, ladder_total, &quad).unwrap();
        assert!(bv.k >= 1, "w = {:?}", bv.w);
        for alpha in p.q + 1..=p.beta {
            let on = bv.bits[alpha - 1] == 1;
            if (alpha as i32 - 3).abs() > 1 {
                assert!(!on, "alpha = {alpha} outside the band is set: w = {:?}", bv.w);
            }
        }
        // oracle: the peak W_alpha against a direct annulus quadrature at
        // 4x density (the integrand peaks near the cone tip, so midpoint
        // convergence is slow there; 10% certifies the band robustly
        // against the factor-100 contrast to its neighbors)
        let alpha = 3usize;
        let r1 = p.gamma.powi(alpha as i32 - p.q as i32);
        let r2 = p.gamma.powi((alpha + p.q) as i32);
        let dense = energies::struwe_annulus(&traj, &x, r1, r2, &quad.refined(4))
            .unwrap()
            .value;
        let ours = bv.w[alpha - 1];
        assert!(
            (ours - dense).abs() <= 0.10 * dense,
            "alpha = {alpha}: {ours} vs {dense}"
        );
    }

    #[test]
    fn decompose_matches_brute_force_reclassification() {
        let traj = cone_traj();
        let p = StrataParams { gamma: 0.25, q: 1, delta: 0.05, beta: 8, eta: 0.01 };
        let quad = QuadParams { n_space: 16, n_time: 4 };
        let points: Vec<SpaceTimePoint> = (0..12)
            .map(|i| {
                let d = 0.5f64.powi(i % 6 + 1) * 0.9;
                SpaceTimePoint::new(vec![d, 0.02 * i as f64 / 12.0, 0.0], 0.0)
            })
            .collect();
        let lam2 = measured_lambda2(&traj, &points, &p, &quad).unwrap();
        let bvs: Vec<ScaleBitVector> = points
            .iter()
            .map(|x| scale_bits(&traj, x, &p, lam2, &quad).unwrap())
            .collect();
        let classes = decompose(&bvs, lam2).unwrap();
        // brute force from the raw W values
        let mut oracle: BTreeMap<Vec<u8>, Vec<usize>> = BTreeMap::new();
        for (i, bv) in bvs.iter().enumerate() {
            let key: Vec<u8> = (1..=p.beta)
                .map(|a| u8::from(a <= p.q || bv.w[a - 1] > p.delta))
                .collect();
            oracle.entry(key).or_default().push(i);
        }
        assert_eq!(classes, oracle);
        assert!(classes.len() >= 2, "cloud should spread across classes");
    }

    #[test]
    fn decompose_trivial_cases() {
        let traj = constant_traj();
        let p = params();
        let quad = QuadParams { n_space: 8, n_time: 2 };
        let bv = scale_bits(&traj, &SpaceTimePoint::origin(3), &p, 0.0, &quad).unwrap();
        let classes = decompose(&[bv.clone(), bv.clone()], 0.0).unwrap();
        assert_eq!(classes.len(), 1);
        let key: Vec<u8> = (1..=p.beta).map(|a| u8::from(a <= p.q)).collect();
        assert_eq!(classes.keys().next().unwrap(), &key);

        let mut other = bv.clone();
        other.bits[p.q] = 1;
        let two = decompose(&[bv, other], 100.0).unwrap();
        assert_eq!(two.len(), 2);
        assert!(two.values().all(|v| v.len() == 1));
    }

    #[test]
    fn decompose_rejects_mixed_params() {
        let traj = constant_traj();
        let quad = QuadParams { n_space: 8, n_time: 2 };
        let a = scale_bits(&traj, &SpaceTimePoint::origin(3), &params(), 0.0, &quad).unwrap();
        let mut p2 = params();
        p2.delta = 0.1;
        let b = scale_bits(&traj, &SpaceTimePoint::origin(3), &p2, 0.0, &quad).unwrap();
        assert!(matches!(decompose(&[a, b], 0.0), Err(Error::Config(_))));
    }

    #[test]
    fn membership_constant_is_never_in_a_stratum() {
        let traj = constant_traj();
        let dict = Dictionary::build(3, 3, DictionaryConfig::default()).unwrap();
        let grid = WindowGrid::default_for(3, 3);
        for j in 0..=3 {
            let label = strata_membership(
                &traj,
                &SpaceTimePoint::origin(3),
                j,
                &params(),
                0.05,
                0.25,
                &dict,
                &grid,
            );
            match label.membership {
                Membership::NotMember { distance_sq, .. } => assert!(distance_sq < 1e-10),
                ref m => panic!("expected witness, got {m:?}"),
            }
        }
    }

    #[test]
    fn membership_cone_point_and_smooth_point() {
        let traj = cone_traj();
        let dict = Dictionary::build(3, 3, DictionaryConfig::default()).unwrap();
        let grid = WindowGrid::default_for(3, 3);
        let p = params();
        // on the singular point: in S^2 (no 3-selfsimilar map is close)
        let at_tip = strata_membership(
            &traj,
            &SpaceTimePoint::origin(3),
            2,
            &p,
            1.0 / 64.0,
            0.25,
            &dict,
            &grid,
        );
        assert!(at_tip.is_member(), "{:?}", at_tip.membership);
        // at unit distance: smooth, escapes via an almost-constant window
        let smooth = strata_membership(
            &traj,
            &SpaceTimePoint::new(vec![1.0, 0.0, 0.0], 0.0),
            2,
            &p,
            1.0 / 64.0,
            0.25,
            &dict,
            &grid,
        );
        assert!(!smooth.is_member());
        // stratum inclusions: S^j subset S^j' for j <= j', and shrinking r
        // shrinks the stratum
        let mut prev_member = false;
        for j in 0..=4 {
            let l = strata_membership(
                &traj,
                &SpaceTimePoint::origin(3),
                j,
                &p,
                1.0 / 64.0,
                0.25,
                &dict,
                &grid,
            );
            if prev_member {
                assert!(l.is_member(), "S^j monotone in j failed at {j}");
            }
            prev_member = l.is_member();
        }
    }

    #[test]
    fn regularity_scale_constant_hits_the_cap() {
        let traj = constant_traj();
        let rec = regularity_scale(&traj, &SpaceTimePoint::origin(3), 0.5, 1e-3);
        assert_eq!(rec.r_u, 0.5);
        assert_eq!(rec.binding, Binding::Cap);
    }

    fn kappa_oracle() -> f64 {
        // r_u at distance d from the cone point: the sup over P_r sits at
        // the ball point nearest the singularity, so with s = r/d the
        // constraint reads s sqrt(2)/(1-s) + s^2 sqrt(6)/(1-s)^2 = 1
        let f = |s: f64| {
            s * 2.0f64.sqrt() / (1.0 - s) + s * s * 6.0f64.sqrt() / ((1.0 - s) * (1.0 - s))
        };
        let (mut lo, mut hi) = (0.0, 0.9);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) <= 1.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn cone_regularity_scale_matches_the_one_dimensional_oracle() {
        let traj = cone_traj();
        let kappa = kappa_oracle();
        for d in [0.5, 0.25] {
            let rec = regularity_scale(
                &traj,
                &SpaceTimePoint::new(vec![d, 0.0, 0.0], 0.0),
                1.0,
                1e-4,
            );
            let expect = kappa * d;
            assert!(
                (rec.r_u - expect).abs() <= 0.05 * expect,
                "d = {d}: r_u = {} vs {expect}",
                rec.r_u
            );
            assert_ne!(rec.binding, Binding::Cap);
        }
        // parabolic rescaling covariance: r_u(lambda x) = lambda r_u(x)
        let a = regularity_scale(&traj, &SpaceTimePoint::new(vec![0.5, 0.0, 0.0], 0.0), 1.0, 1e-4);
        let b = regularity_scale(&traj, &SpaceTimePoint::new(vec![0.25, 0.0, 0.0], 0.0), 1.0, 1e-4);
        assert!((a.r_u - 2.0 * b.r_u).abs() <= 0.05 * a.r_u, "{} vs {}", a.r_u, 2.0 * b.r_u);
    }

    #[test]
    fn bad_set_matches_the_kappa_prediction() {
        let traj = cone_traj();
        let kappa = kappa_oracle();
        let points: Vec<SpaceTimePoint> = (0..40)
            .map(|i| SpaceTimePoint::new(vec![0.02 + 0.02 * i as f64, 0.0, 0.0], 0.0))
            .collect();
        assert!(bad_set(&constant_traj(), 0.125, &points, 0.5, 1e-3).is_empty());
        let r = 0.125;
        let bad = bad_set(&traj, r, &points, 0.5, 1e-3);
        let predicted: Vec<usize> =
            (0..points.len()).filter(|&i| points[i].x[0] <= r / kappa).collect();
        let sym_diff = bad
            .iter()
            .filter(|i| !predicted.contains(i))
            .count()
            + predicted.iter().filter(|i| !bad.contains(i)).count();
        assert!(
            sym_diff as f64 <= 0.10 * points.len() as f64,
            "bad {bad:?} vs predicted {predicted:?}"
        );
        // monotonicity in r
        let bigger = bad_set(&traj, 0.25, &points, 0.5, 1e-3);
        assert!(bad.iter().all(|i| bigger.contains(i)));
    }

    #[test]
    fn lp_integral_constant_and_integrability_threshold() {
        let traj = constant_traj();
        let rep = lp_reciprocal_integral(&traj, 2.0, 0.5, 0.5, 4, (0.0, 1.0), 2, 1e-3);
        assert!((rep.value - 1.0 * 0.5f64.powi(-2)).abs() < 1e-10);
        assert_eq!(rep.cap_fraction, 0.0);

        // cone: p = 2 < 3 integrable (h-stable), p = 4 > 3 divergent with
        // the integral growing like h^-(p-3)
        let cone = cone_traj();
        let v2a = lp_reciprocal_integral(&cone, 2.0, 0.5, 0.5, 8, (0.0, 0.25), 1, 4.0 / 8.0 * 0.125).value;
        let v2b = lp_reciprocal_integral(&cone, 2.0, 0.5, 0.5, 16, (0.0, 0.25), 1, 4.0 / 16.0 * 0.125).value;
        assert!((v2a - v2b).abs() <= 0.35 * v2b, "p=2: {v2a} vs {v2b}");
        let v4a = lp_reciprocal_integral(&cone, 4.0, 0.5, 0.5, 8, (0.0, 0.25), 1, 4.0 / 8.0 * 0.125).value;
        let v4b = lp_reciprocal_integral(&cone, 4.0, 0.5, 0.5, 16, (0.0, 0.25), 1, 4.0 / 16.0 * 0.125).value;
        let exponent = (v4b / v4a).log2();
        assert!((exponent - 1.0).abs() <= 0.5, "p=4 growth exponent {exponent}");
        // monotone in p when r_u <= 1 everywhere
        let v3 = lp_reciprocal_integral(&cone, 3.0, 0.5, 0.5, 8, (0.0, 0.25), 1, 4.0 / 8.0 * 0.125).value;
        assert!(v2a <= v3 && v3 <= v4a);
    }

    #[test]
    fn static_reg_scale_bounds_the_parabolic_one() {
        let traj = cone_traj();
        let kappa_spatial = {
            // spatial-only constraint: same 1-d law
            kappa_oracle()
        };
        for d in [0.5, 0.3] {
            let reg = static_reg_scale(&traj, &[d, 0.0, 0.0], 0.0, 1.0, 1e-4);
            let r_u =
                regularity_scale(&traj, &SpaceTimePoint::new(vec![d, 0.0, 0.0], 0.0), 1.0, 1e-4)
                    .r_u;
            assert!(reg >= r_u * 0.98, "reg {reg} < r_u {r_u}");
            let expect = kappa_spatial * d;
            assert!((reg - expect).abs() <= 0.05 * expect, "{reg} vs {expect}");
        }
        let c = constant_traj();
        assert_eq!(static_reg_scale(&c, &[0.0; 3], 0.0, 0.7, 1e-3), 0.7);
    }

    #[test]
    fn bad_set_is_contained_in_the_stratum() {
        // the containment Theorem 2 uses: B_r(u) subset S^(m-k)_(eta,r)
        // with m - k = 2 on the cone
        let traj = cone_traj();
        let dict = Dictionary::build(3, 3, DictionaryConfig::default()).unwrap();
        let grid = WindowGrid::default_for(3, 3);
        let p = StrataParams { gamma: 0.25, q: 1, delta: 0.05, beta: 6, eta: 1e-4 };
        let r = 1.0 / 16.0;
        let points: Vec<SpaceTimePoint> = (0..10)
            .map(|i| SpaceTimePoint::new(vec![0.04 * i as f64, 0.0, 0.0], 0.0))
            .collect();
        let bad = bad_set(&traj, r, &points, 0.5, 1e-3);
        assert!(!bad.is_empty());
        for &i in &bad {
            let label = strata_membership(&traj, &points[i], 2, &p, r, 0.25, &dict, &grid);
            assert!(label.is_member(), "bad point {i} escaped S^2: {:?}", label.membership);
        }
    }
}
