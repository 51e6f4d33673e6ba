//! Verification engines over labeled data: greedy recursive covering with
//! good/bad scale accounting, Minkowski slope fits from tubular volumes,
//! the cone-splitting case table and its synthetic verification, the
//! quasistatic propagation check, and the epsilon-regularity correlation.

use crate::candidates::{Dictionary, InvariancePlane, TimeExtent};
use crate::error::{Error, Result};
use crate::geometry::{self, SpaceTimePoint};
use crate::solver::FlowTrajectory;
use crate::strata::{self, ScaleBitVector};
use crate::util;
use crate::windows::{sample_window, WindowGrid};
use rayon::prelude::*;
use serde::Serialize;
use std::collections::HashMap;
use std::sync::Mutex;
use std::sync::OnceLock;

/// One node of the recursive covering tree.
#[derive(Debug, Clone)]
pub struct CoverNode {
    pub center: SpaceTimePoint,
    /// Index of the center in the labeled cloud.
    pub center_idx: usize,
    pub radius: f64,
    pub depth: usize,
    pub children: Vec<CoverNode>,
    /// Refinement of this node used a scale with T = 0 at its center.
    pub good_scale: bool,
    /// Points of the cloud assigned to this ball.
    pub points: Vec<usize>,
}

/// Per-depth child-count accounting for the Covering Lemma's two regimes.
#[derive(Debug, Clone, Default, Serialize)]
pub struct CoverStats {
    /// Child counts of good-scale refinement steps, per depth.
    pub good_counts: Vec<Vec<usize>>,
    /// Child counts of bad-scale refinement steps, per depth.
    pub bad_counts: Vec<Vec<usize>>,
    pub leaf_count: usize,
    /// Calibrated covering constant c(m) from a depth-0 full-ball run.
    pub c0: f64,
    /// Max bad-scale steps along any root-leaf path.
    pub max_bad_path: usize,
}

/// Greedy farthest-point covering of `points` (indices into the cloud) by
/// parabolic balls of `radius`; returns the chosen center indices and the
/// assignment of every point to its first covering center.
fn greedy_cover(
    cloud: &[SpaceTimePoint],
    points: &[usize],
    radius: f64,
    period: f64,
) -> (Vec<usize>, Vec<Vec<usize>>) {
    if points.is_empty() {
        return (Vec::new(), Vec::new());
    }
    let mut centers = vec![points[0]];
    let mut dist: Vec<f64> = points
        .iter()
        .map(|&i| parab(&cloud[i], &cloud[points[0]], period))
        .collect();
    loop {
        let (far, &d) = dist
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap();
        if d <= radius {
            break;
        }
        let c = points[far];
        centers.push(c);
        for (k, &i) in points.iter().enumerate() {
            let nd = parab(&cloud[i], &cloud[c], period);
            if nd < dist[k] {
                dist[k] = nd;
            }
        }
    }
    let mut groups = vec![Vec::new(); centers.len()];
    for &i in points {
        let best = centers
            .iter()
            .position(|&c| parab(&cloud[i], &cloud[c], period) <= radius)
            .expect("covering property");
        groups[best].push(i);
    }
    (centers, groups)
}

fn parab(a: &SpaceTimePoint, b: &SpaceTimePoint, period: f64) -> f64 {
    geometry::parabolic_distance(a, b, period).unwrap()
}

/// Calibrated covering constant: children of one greedy step covering the
/// full parabolic unit ball at ratio gamma, divided by gamma^-(m+2).
/// Cached per (m, gamma).
pub fn covering_constant(m: usize, gamma: f64) -> f64 {
    static CACHE: OnceLock<Mutex<HashMap<(usize, u64), f64>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(&c) = cache.lock().unwrap().get(&(m, gamma.to_bits())) {
        return c;
    }
    // deterministic space-time lattice filling P_1(0), parabolic spacing
    // gamma/2
    let hs = gamma / 2.0;
    let ht = hs * hs;
    let ns = (2.0 / hs).ceil() as i64;
    let nt = (2.0 / ht).ceil() as i64;
    let mut cloud = Vec::new();
    let side = (ns + 1) as usize;
    let mut idx = vec![0usize; m];
    for flat in 0..side.pow(m as u32) {
        util::decode_index(flat, &vec![side; m], &mut idx);
        let x: Vec<f64> = idx.iter().map(|&i| -1.0 + i as f64 * hs).collect();
        if util::norm(&x) > 1.0 {
            continue;
        }
        for ti in 0..=nt {
            let t = -1.0 + ti as f64 * ht;
            cloud.push(SpaceTimePoint::new(x.clone(), t));
        }
    }
    let all: Vec<usize> = (0..cloud.len()).collect();
    let (centers, _) = greedy_cover(&cloud, &all, gamma, 0.0);
    let c = centers.len() as f64 * gamma.powi(m as i32 + 2);
    cache.lock().unwrap().insert((m, gamma.to_bits()), c);
    c
}

/// Recursive greedy covering of a labeled cloud from radius 1 down to
/// gamma^beta_max, splitting refinement steps into good scales (T = 0 at
/// the node center) and bad scales.
pub fn recursive_cover(
    cloud: &[SpaceTimePoint],
    bits: &[ScaleBitVector],
    gamma: f64,
    beta_max: usize,
    period: f64,
) -> Result<(Vec<CoverNode>, CoverStats)> {
    if cloud.len() != bits.len() {
        return Err(Error::Config("cloud and bit-vector counts differ".into()));
    }
    if let Some(b) = bits.first() {
        if (b.params.gamma - gamma).abs() > 1e-12 || b.params.beta < beta_max {
            return Err(Error::Config("bit-vector params do not match the covering".into()));
        }
    }
    let mut stats = CoverStats {
        good_counts: vec![Vec::new(); beta_max],
        bad_counts: vec![Vec::new(); beta_max],
        leaf_count: 0,
        c0: covering_constant(cloud.first().map(|p| p.dim()).unwrap_or(3), gamma),
        max_bad_path: 0,
    };
    let all: Vec<usize> = (0..cloud.len()).collect();
    let (centers, groups) = greedy_cover(cloud, &all, 1.0, period);
    let mut roots = Vec::new();
    for (c, pts) in centers.into_iter().zip(groups) {
        let (node, leaves, bad_path) =
            build_node(cloud, bits, c, pts, 0, gamma, beta_max, period, &mut stats);
        stats.leaf_count += leaves;
        stats.max_bad_path = stats.max_bad_path.max(bad_path);
        roots.push(node);
    }
    Ok((roots, stats))
}

#[allow(clippy::too_many_arguments)]
fn build_node(
    cloud: &[SpaceTimePoint],
    bits: &[ScaleBitVector],
    center_idx: usize,
    points: Vec<usize>,
    depth: usize,
    gamma: f64,
    beta_max: usize,
    period: f64,
    stats: &mut CoverStats,
) -> (CoverNode, usize, usize) {
    let radius = gamma.powi(depth as i32);
    if depth == beta_max {
        let node = CoverNode {
            center: cloud[center_idx].clone(),
            center_idx,
            radius,
            depth,
            children: Vec::new(),
            good_scale: false,
            points,
        };
        return (node, 1, 0);
    }
    // the refinement step at radius gamma^depth consults T_(depth+1) of
    // the center: scales alpha <= q are 1 by convention
    let alpha = depth + 1;
    let good = alpha <= bits[center_idx].params.beta
        && alpha > bits[center_idx].params.q
        && bits[center_idx].bits[alpha - 1] == 0;
    let (centers, groups) = greedy_cover(cloud, &points, radius * gamma, period);
    let n = centers.len();
    if good {
        stats.good_counts[depth].push(n);
    } else {
        stats.bad_counts[depth].push(n);
    }
    let mut children = Vec::new();
    let mut leaves = 0usize;
    let mut worst_bad = 0usize;
    for (c, pts) in centers.into_iter().zip(groups) {
        let (child, l, bp) =
            build_node(cloud, bits, c, pts, depth + 1, gamma, beta_max, period, stats);
        leaves += l;
        worst_bad = worst_bad.max(bp);
        children.push(child);
    }
    let node = CoverNode {
        center: cloud[center_idx].clone(),
        center_idx,
        radius,
        depth,
        children,
        good_scale: good,
        points,
    };
    (node, leaves, worst_bad + usize::from(!good))
}

/// Check the covering property: every point lies in the ball of some node
/// at every depth of its branch.
pub fn covers(node: &CoverNode, cloud: &[SpaceTimePoint], period: f64) -> bool {
    node.points
        .iter()
        .all(|&i| parab(&cloud[i], &node.center, period) <= node.radius)
        && node.children.iter().all(|c| covers(c, cloud, period))
}

/// Least-squares slope of log volume against log radius.
#[derive(Debug, Clone, Serialize)]
pub struct SlopeFit {
    pub radii: Vec<f64>,
    pub volumes: Vec<f64>,
    pub slope: f64,
    pub intercept: f64,
    pub residual: f64,
    /// Minkowski-dimension estimate (m+2) - slope.
    pub dimension: f64,
}

/// Regression core shared by minkowski_fit and synthetic data tests.
pub fn fit_power_law(radii: &[f64], volumes: &[f64], m: usize) -> Result<SlopeFit> {
    if radii.len() != volumes.len() || radii.len() < 4 {
        return Err(Error::Config("need at least 4 radii for a slope fit".into()));
    }
    let max = radii.iter().cloned().fold(f64::MIN, f64::max);
    let min = radii.iter().cloned().fold(f64::MAX, f64::min);
    if max / min < 7.99 {
        return Err(Error::Config("radii must span at least 3 dyadic octaves".into()));
    }
    if volumes.iter().any(|&v| v <= 0.0) {
        return Err(Error::Config("tubular volumes must be positive".into()));
    }
    let xs: Vec<f64> = radii.iter().map(|r| r.log2()).collect();
    let ys: Vec<f64> = volumes.iter().map(|v| v.log2()).collect();
    let (slope, intercept, residual) = util::linear_fit(&xs, &ys);
    Ok(SlopeFit {
        radii: radii.to_vec(),
        volumes: volumes.to_vec(),
        slope,
        intercept,
        residual,
        dimension: (m + 2) as f64 - slope,
    })
}

/// Tubular volumes of a point set at each radius (grid h = r/4, time cell
/// r^2/4 per radius) and the log-log slope.
pub fn minkowski_fit(
    points: &[SpaceTimePoint],
    radii: &[f64],
    m: usize,
    period: f64,
    time_range: (f64, f64),
) -> Result<SlopeFit> {
    if points.is_empty() {
        return Err(Error::Config("empty point set in minkowski_fit".into()));
    }
    let volumes: Vec<f64> = radii
        .par_iter()
        .map(|&r| {
            let h = r / 4.0;
            let grid = if period > 0.0 {
                geometry::GridSpec::torus(m, (period / h).round() as usize, h)
            } else {
                geometry::GridSpec::boxed(m, 1, h)
            };
            geometry::tubular_volume(points, r, &grid, r * r / 4.0, time_range)
        })
        .collect::<Result<_>>()?;
    fit_power_law(radii, &volumes, m)
}

/// Outcome of one cone-splitting case.
#[derive(Debug, Clone)]
pub struct ConeSplitOutcome {
    pub plane: InvariancePlane,
    /// Symmetry level after splitting.
    pub j_new: usize,
    /// The upgrade produced a static (full time line) plane.
    pub is_static: bool,
}

fn plane_distance(y: &[f64], basis: &[Vec<f64>]) -> f64 {
    let mut res = y.to_vec();
    for b in basis {
        let d = util::dot(&res, b);
        for (ri, bi) in res.iter_mut().zip(b) {
            *ri -= d * bi;
        }
    }
    util::norm(&res)
}

fn span_with(y: &[f64], basis: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = basis.to_vec();
    let mut res = y.to_vec();
    for b in basis {
        let d = util::dot(&res, b);
        for (ri, bi) in res.iter_mut().zip(b) {
            *ri -= d * bi;
        }
    }
    let n = util::norm(&res);
    assert!(n > 1e-12, "y lies in the plane");
    res.iter_mut().for_each(|c| *c /= n);
    out.push(res);
    out
}

/// The cone-splitting case table: given that u is j-selfsimilar at 0 with
/// respect to W and 0-selfsimilar at Y = (y, s) outside T_rho(W), predict
/// the upgraded invariance plane. Pure combinatorics; errors when Y
/// violates the tube hypothesis.
pub fn cone_split_classify(
    w: &InvariancePlane,
    y: &SpaceTimePoint,
    rho: f64,
    j: usize,
) -> Result<ConeSplitOutcome> {
    assert!(rho > 0.0);
    let d_space = plane_distance(&y.x, &w.basis);
    let s = y.t;
    let in_tube = match w.time {
        TimeExtent::Slice(t0) => d_space < rho && (s - t0).abs() < rho * rho,
        TimeExtent::HalfLine(t_max) => d_space < rho && s < t_max + rho * rho,
        TimeExtent::Full => d_space < rho,
    };
    if in_tube {
        return Err(Error::RangeViolation(format!(
            "Y lies in the rho-tube of W (d = {d_space}, s = {s}, rho = {rho})"
        )));
    }
    Ok(match w.time {
        TimeExtent::Slice(t0) => {
            let s_rel = s - t0;
            if s_rel.abs() < rho * rho {
                // tube exclusion forces d(y, V) >= rho: genuine new direction
                ConeSplitOutcome {
                    plane: InvariancePlane {
                        basis: span_with(&y.x, &w.basis),
                        time: TimeExtent::Slice(t0),
                    },
                    j_new: j + 1,
                    is_static: false,
                }
            } else if d_space < rho {
                ConeSplitOutcome {
                    plane: InvariancePlane {
                        basis: w.basis.clone(),
                        time: TimeExtent::HalfLine(s_rel.max(0.0) + t0),
                    },
                    j_new: j,
                    is_static: false,
                }
            } else {
                ConeSplitOutcome {
                    plane: InvariancePlane {
                        basis: span_with(&y.x, &w.basis),
                        time: TimeExtent::HalfLine(s_rel.max(0.0) + t0),
                    },
                    j_new: j + 1,
                    is_static: false,
                }
            }
        }
        TimeExtent::HalfLine(t_max) => {
            if d_space < rho {
                // tube exclusion forces s >= T + rho^2
                ConeSplitOutcome {
                    plane: InvariancePlane {
                        basis: w.basis.clone(),
                        time: TimeExtent::HalfLine(s),
                    },
                    j_new: j,
                    is_static: false,
                }
            } else {
                ConeSplitOutcome {
                    plane: InvariancePlane {
                        basis: span_with(&y.x, &w.basis),
                        time: TimeExtent::HalfLine(s.max(t_max)),
                    },
                    j_new: j + 1,
                    is_static: false,
                }
            }
        }
        TimeExtent::Full => ConeSplitOutcome {
            plane: InvariancePlane {
                basis: span_with(&y.x, &w.basis),
                time: TimeExtent::Full,
            },
            j_new: j + 1,
            is_static: true,
        },
    })
}

/// One verified cone-splitting scenario.
#[derive(Debug, Clone, Serialize)]
pub struct ConeSplitCase {
    pub name: String,
    pub j_before: usize,
    pub j_after: usize,
    pub distance_at_origin: f64,
    pub distance_at_y: f64,
    pub is_static: bool,
}

/// Exercise one table case on an exactly selfsimilar field: confirm the
/// hypotheses (selfsimilar at 0, selfsimilar at Y) and the upgraded
/// symmetry level by best-fit at the origin.
#[allow(clippy::too_many_arguments)]
pub fn cone_split_verify_case(
    name: &str,
    traj: &FlowTrajectory,
    dict: &Dictionary,
    grid: &WindowGrid,
    w: &InvariancePlane,
    y: &SpaceTimePoint,
    rho: f64,
    j: usize,
    scale: f64,
) -> Result<ConeSplitCase> {
    let outcome = cone_split_classify(w, y, rho, j)?;
    let origin = SpaceTimePoint::origin(traj.m());
    let w0 = sample_window(traj, &origin, scale, grid)?;
    let at0 = dict.best_fit(&w0, outcome.j_new)?;
    let wy = sample_window(traj, y, scale * 0.5, grid)?;
    let aty = dict.best_fit(&wy, 0)?;
    Ok(ConeSplitCase {
        name: name.to_string(),
        j_before: j,
        j_after: outcome.j_new,
        distance_at_origin: at0.distance_sq,
        distance_at_y: aty.distance_sq,
        is_static: outcome.is_static,
    })
}

/// Quasistatic propagation: if u is quasistatic on V x (-inf, T] and
/// Y = (y, s) has s <= T - (2 gamma)^2, the gamma-window at Y must be
/// (eps, gamma, l+2)-selfsimilar (static). Returns the measured distance.
pub fn quasistatic_propagation_check(
    traj: &FlowTrajectory,
    ell: usize,
    t_trunc: f64,
    y: &SpaceTimePoint,
    gamma: f64,
    dict: &Dictionary,
    grid: &WindowGrid,
    eps: f64,
) -> Result<(bool, f64)> {
    let lim = t_trunc - (2.0 * gamma) * (2.0 * gamma);
    if y.t > lim {
        return Err(Error::RangeViolation(format!(
            "s = {} violates s <= T - (2 gamma)^2 = {lim}",
            y.t
        )));
    }
    let w = sample_window(traj, y, gamma, grid)?;
    let fit = dict.best_fit(&w, ell + 2)?;
    Ok((fit.distance_sq < eps, fit.distance_sq))
}

/// Contingency data for the epsilon-regularity lemma: points that look
/// (eps, 2r, j)-selfsimilar but have r_u < r are violations; the lemma
/// predicts the fraction vanishes as eps -> 0 on true solutions.
#[derive(Debug, Clone, Serialize)]
pub struct CorrelationReport {
    pub eps: Vec<f64>,
    pub violation_fraction: Vec<f64>,
    /// (best-fit distance at 2r, r_u / r) per point.
    pub pairs: Vec<(f64, f64)>,
    pub undetermined: usize,
}

pub fn eps_regularity_correlation(
    traj: &FlowTrajectory,
    points: &[(SpaceTimePoint, f64)],
    j: usize,
    eps_list: &[f64],
    dict: &Dictionary,
    grid: &WindowGrid,
    r_max: f64,
    floor: f64,
) -> CorrelationReport {
    let results: Vec<Option<(f64, f64)>> = points
        .par_iter()
        .map(|(x, r)| {
            let w = sample_window(traj, x, 2.0 * r, grid).ok()?;
            let fit = dict.best_fit(&w, j).ok()?;
            let ru = strata::regularity_scale(traj, x, r_max, floor).r_u;
            Some((fit.distance_sq, ru / r))
        })
        .collect();
    let pairs: Vec<(f64, f64)> = results.iter().flatten().copied().collect();
    let undetermined = results.iter().filter(|r| r.is_none()).count();
    let violation_fraction = eps_list
        .iter()
        .map(|&eps| {
            if pairs.is_empty() {
                return 0.0;
            }
            let v = pairs.iter().filter(|(d, ratio)| *d < eps && *ratio < 1.0).count();
            v as f64 / pairs.len() as f64
        })
        .collect();
    CorrelationReport { eps: eps_list.to_vec(), violation_fraction, pairs, undetermined }
}
