//! The dictionary of j-selfsimilar comparison maps: static cones,
//! quasistatic truncations and shrinking profile fields, their symmetry
//! counts D, evaluation on window grids, and the best-fit search behind
//! the quantitative strata.
//!
//! The best-fit distance minimizes over target rotations in closed form
//! (orthogonal alignment via SVD), over a sampled Grassmannian of splitting
//! planes with coordinate-descent refinement, and over a fixed grid of
//! quasistatic truncation times. The result is an upper bound on the true
//! infimum over all j-selfsimilar maps.

use crate::analytic::{Frame, SINGULAR_EPS};
use crate::error::{Error, Result};
use crate::profile::{self, ShrinkProfile};
use crate::util;
use crate::windows::{SampleStatus, Window, WindowGrid};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// One comparison map, anchored at the window center. Frames list the
/// transverse directions; the invariance plane V is their orthogonal
/// complement.
#[derive(Debug, Clone, PartialEq)]
pub enum CandidateSpec {
    /// Optimal constant; the stored value is a placeholder that the target
    /// alignment rotates onto the per-window optimum.
    Constant,
    /// `u(x) = y/|y|` with `y` the 3 transverse coordinates.
    StaticCone { frame: Frame },
    /// Static cone for `t <= T`, constant continuation for `t > T`; the
    /// truncation T is scanned at fit time.
    QuasistaticCone { frame: Frame, t_trunc: f64 },
    /// `u(x,t) = psi(y/sqrt(-t))`, masked forward in time when
    /// `backward_only` is set.
    Shrinking { frame: Frame, profile: ShrinkProfile },
}

impl CandidateSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            CandidateSpec::Constant => "constant",
            CandidateSpec::StaticCone { .. } => "static",
            CandidateSpec::QuasistaticCone { .. } => "quasistatic",
            CandidateSpec::Shrinking { .. } => "shrinking",
        }
    }

    /// Dimension of the invariance plane V.
    pub fn plane_dim(&self, m: usize) -> usize {
        match self {
            CandidateSpec::Constant => m,
            CandidateSpec::StaticCone { .. } | CandidateSpec::QuasistaticCone { .. } => m - 3,
            CandidateSpec::Shrinking { frame, .. } => m - frame.ell(),
        }
    }
}

/// D(phi): dim V, plus 2 for the parabolic dilation + time translation of
/// static maps.
pub fn symmetry_count(spec: &CandidateSpec, m: usize) -> usize {
    let d = spec.plane_dim(m);
    match spec {
        CandidateSpec::Constant | CandidateSpec::StaticCone { .. } => d + 2,
        CandidateSpec::QuasistaticCone { .. } | CandidateSpec::Shrinking { .. } => d,
    }
}

/// Time extent of the invariance plane W_X.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TimeExtent {
    /// Shrinking: invariant only on the slice {t}.
    Slice(f64),
    /// Quasistatic: half-line up to the truncation time.
    HalfLine(f64),
    /// Static: all of R.
    Full,
}

/// Spatial invariance plane plus its time extent, in window coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct InvariancePlane {
    /// Orthonormal basis of V (d vectors in R^m).
    pub basis: Vec<Vec<f64>>,
    pub time: TimeExtent,
}

fn invariance_plane(spec: &CandidateSpec, m: usize) -> InvariancePlane {
    let rows: &[Vec<f64>] = match spec {
        CandidateSpec::Constant => &[],
        CandidateSpec::StaticCone { frame } | CandidateSpec::QuasistaticCone { frame, .. } => {
            &frame.rows
        }
        CandidateSpec::Shrinking { frame, .. } => &frame.rows,
    };
    let basis = complement_basis(rows, m);
    let time = match spec {
        CandidateSpec::Constant | CandidateSpec::StaticCone { .. } => TimeExtent::Full,
        CandidateSpec::QuasistaticCone { t_trunc, .. } => TimeExtent::HalfLine(*t_trunc),
        CandidateSpec::Shrinking { .. } => TimeExtent::Slice(0.0),
    };
    InvariancePlane { basis, time }
}

/// Orthonormal basis of the orthogonal complement of `rows` in R^m.
fn complement_basis(rows: &[Vec<f64>], m: usize) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for i in 0..m {
        let mut v = vec![0.0; m];
        v[i] = 1.0;
        for r in rows.iter().chain(basis.iter()) {
            let d = util::dot(&v, r);
            for (vi, ri) in v.iter_mut().zip(r) {
                *vi -= d * ri;
            }
        }
        let n = util::norm(&v);
        if n > 1e-8 {
            v.iter_mut().for_each(|c| *c /= n);
            basis.push(v);
        }
    }
    assert_eq!(basis.len(), m - rows.len());
    basis
}

/// Evaluate a candidate at a window-grid point; returns false on masked
/// (singular axis, or forward time for shrinking with backward_only).
fn sample_candidate(
    spec: &CandidateSpec,
    x: &[f64],
    t: f64,
    backward_only: bool,
    out: &mut [f64],
) -> bool {
    out.iter_mut().for_each(|c| *c = 0.0);
    match spec {
        CandidateSpec::Constant => {
            out[0] = 1.0;
            true
        }
        CandidateSpec::StaticCone { frame } => cone_value(frame, x, out),
        CandidateSpec::QuasistaticCone { frame, t_trunc } => {
            if t > *t_trunc {
                out[0] = 1.0;
                true
            } else {
                cone_value(frame, x, out)
            }
        }
        CandidateSpec::Shrinking { frame, profile } => {
            let ell = frame.ell();
            let mut y = [0.0f64; 4];
            frame.apply(x, &vec![0.0; frame.m], &mut y[..ell]);
            let r = util::norm(&y[..ell]);
            if t >= 0.0 {
                if backward_only {
                    return false;
                }
                if r < SINGULAR_EPS {
                    return false;
                }
                let (sh, ch) = profile.h_end().sin_cos();
                for k in 0..ell {
                    out[k] = sh * y[k] / r;
                }
                out[ell] = ch;
                return true;
            }
            let rho = r / (-t).sqrt();
            if rho < SINGULAR_EPS {
                out[ell] = 1.0;
                return true;
            }
            let (h, _) = profile.eval(rho);
            let (sh, ch) = h.sin_cos();
            for k in 0..ell {
                out[k] = sh * y[k] / r;
            }
            out[ell] = ch;
            true
        }
    }
}

fn cone_value(frame: &Frame, x: &[f64], out: &mut [f64]) -> bool {
    let mut y = [0.0f64; 3];
    frame.apply(x, &vec![0.0; frame.m], &mut y);
    let r = util::norm(&y);
    if r < SINGULAR_EPS {
        return false;
    }
    for k in 0..3 {
        out[k] = y[k] / r;
    }
    true
}

/// Sample a candidate on the reference grid over P_1(0), with the same
/// masking rules as window sampling.
pub fn evaluate(spec: &CandidateSpec, grid: &WindowGrid, backward_only: bool) -> Window {
    let n = grid.n_samples();
    let vd = grid.vdim;
    let mut samples = vec![0.0; n * vd];
    let mut status = vec![SampleStatus::Out; n];
    let mut x = vec![0.0; grid.m];
    let mut out = vec![0.0; vd];
    for flat in 0..n {
        let t = grid.node(flat, &mut x);
        if !WindowGrid::in_ball(&x) {
            continue;
        }
        if sample_candidate(spec, &x, t, backward_only, &mut out) {
            samples[flat * vd..(flat + 1) * vd].copy_from_slice(&out);
            status[flat] = SampleStatus::Valid;
        } else {
            status[flat] = SampleStatus::Masked;
        }
    }
    Window {
        base: crate::geometry::SpaceTimePoint::origin(grid.m),
        scale: 1.0,
        grid: grid.clone(),
        samples,
        status,
    }
}

/// Construction parameters, recorded in the run manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DictionaryConfig {
    /// Grassmannian plane samples per splitting dimension (m = 4 only).
    pub grassmann_samples: usize,
    /// Coordinate-descent refinement rounds on the best splitting plane.
    pub refine_rounds: usize,
    /// Evaluate shrinking candidates on the backward half only.
    pub backward_only: bool,
    /// Tail length for the shrinking-profile shooting solve.
    pub rho_max: f64,
    /// Seed for the quasi-random plane sample.
    pub seed: u64,
    /// Eigenvalue / time-energy threshold for the structure-tensor
    /// symmetry estimator.
    pub tol_sym: f64,
}

impl Default for DictionaryConfig {
    fn default() -> Self {
        DictionaryConfig {
            grassmann_samples: 64,
            refine_rounds: 3,
            backward_only: true,
            rho_max: 8.0,
            seed: 0x48_4d_46,
            tol_sym: 1e-6,
        }
    }
}

/// Immutable candidate dictionary for one (m, n) pair.
#[derive(Debug, Clone)]
pub struct Dictionary {
    pub m: usize,
    pub vdim: usize,
    pub config: DictionaryConfig,
    pub entries: Vec<CandidateSpec>,
    /// Shooting outcomes that prevented a shrinking family (reported, not
    /// fatal).
    pub notes: Vec<String>,
}

/// Re-export of the equivariant shooting integrator under its interface
/// name: tabulates h on [0, rho_max] from h(0)=0, h'(0)=a.
pub fn shrink_profile_solve(ell: usize, a: f64, rho_max: f64) -> Result<ShrinkProfile> {
    profile::shoot(ell, a, rho_max)
}

impl Dictionary {
    pub fn build(m: usize, vdim: usize, config: DictionaryConfig) -> Result<Dictionary> {
        if !(1..=4).contains(&m) || vdim < 2 {
            return Err(Error::UnsupportedField { kind: "dictionary".into(), m });
        }
        let mut entries = vec![CandidateSpec::Constant];
        let mut notes = Vec::new();
        let frames3 = if m >= 3 { splitting_frames(m, 3, &config) } else { Vec::new() };
        if vdim >= 3 {
            for f in &frames3 {
                entries.push(CandidateSpec::StaticCone { frame: f.clone() });
            }
            for f in &frames3 {
                entries.push(CandidateSpec::QuasistaticCone { frame: f.clone(), t_trunc: 0.0 });
            }
        }
        // equivariant shrinkers exist for transverse dimension >= 3 and need
        // ell + 1 target components
        for ell in 3..=m.min(vdim - 1).min(6) {
            match profile::solve_equivariant(ell, config.rho_max) {
                Ok(prof) => {
                    let frames = splitting_frames(m, ell, &config);
                    for f in frames {
                        entries.push(CandidateSpec::Shrinking {
                            frame: f,
                            profile: prof.clone(),
                        });
                    }
                }
                Err(e) => notes.push(format!("shrinking ell={ell}: {e}")),
            }
        }
        Ok(Dictionary { m, vdim, config, entries, notes })
    }

    /// Upper-bound distance to the best candidate with D >= j, minimized
    /// over target rotations, sampled planes (with refinement) and the
    /// truncation grid.
    pub fn best_fit(&self, w: &Window, j: usize) -> Result<FitResult> {
        if w.grid.m != self.m || w.grid.vdim != self.vdim {
            return Err(Error::GridMismatch);
        }
        let eligible: Vec<usize> = (0..self.entries.len())
            .filter(|&i| symmetry_count(&self.entries[i], self.m) >= j)
            .collect();
        if eligible.is_empty() {
            return Err(Error::EmptyDictionary { m: self.m, j });
        }
        let fits: Vec<(f64, Option<f64>)> = eligible
            .par_iter()
            .map(|&i| fit_candidate(&self.entries[i], w, self.config.backward_only))
            .collect();
        let mut best = 0usize;
        for k in 1..fits.len() {
            if fits[k].0 < fits[best].0 - 1e-12 {
                best = k;
            }
        }
        let index = eligible[best];
        let mut spec = self.entries[index].clone();
        let mut distance_sq = fits[best].0;
        let mut t_trunc = fits[best].1;
        if let CandidateSpec::QuasistaticCone { frame, .. } = &spec {
            spec = CandidateSpec::QuasistaticCone {
                frame: frame.clone(),
                t_trunc: t_trunc.unwrap_or(0.0),
            };
        }
        // coordinate descent on the splitting plane's normal directions;
        // only meaningful when the subspace is not unique
        if self.m > 3 {
            if let Some(frame) = spec_frame(&spec) {
                if frame.ell() < self.m {
                    let (s2, d2, t2) = refine_plane(
                        &spec,
                        w,
                        self.config.backward_only,
                        self.config.refine_rounds,
                        distance_sq,
                        t_trunc,
                    );
                    spec = s2;
                    distance_sq = d2;
                    t_trunc = t2;
                }
            }
        }
        let plane = invariance_plane(&spec, self.m);
        let d = spec.plane_dim(self.m);
        let symmetries = symmetry_count(&spec, self.m);
        Ok(FitResult { distance_sq, index, spec, t_trunc, plane, d, symmetries })
    }
}

/// Output of the best-fit search.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub distance_sq: f64,
    /// Dictionary index of the winning entry (lowest index wins ties
    /// within 1e-12).
    pub index: usize,
    pub spec: CandidateSpec,
    /// Truncation time chosen from the 17-value grid (quasistatic only).
    pub t_trunc: Option<f64>,
    pub plane: InvariancePlane,
    pub d: usize,
    pub symmetries: usize,
}

fn spec_frame(spec: &CandidateSpec) -> Option<&Frame> {
    match spec {
        CandidateSpec::Constant => None,
        CandidateSpec::StaticCone { frame }
        | CandidateSpec::QuasistaticCone { frame, .. }
        | CandidateSpec::Shrinking { frame, .. } => Some(frame),
    }
}

/// Distance^2 of a window to one candidate, minimized in closed form over
/// target rotations Q in O(n+1): with unit-sphere samples on the commonly
/// valid cells, min_Q sum |w - Q c|^2 = 2 N - 2 tr Sigma where Sigma are
/// the singular values of A = sum c w^T. Quasistatic candidates scan the
/// truncation grid using per-time-slice partial cross matrices.
fn fit_candidate(spec: &CandidateSpec, w: &Window, backward_only: bool) -> (f64, Option<f64>) {
    let grid = &w.grid;
    let vd = grid.vdim;
    let n_space = grid.n_space();
    let cell = grid.cell_volume();
    let domain = w.n_domain() as f64;
    match spec {
        CandidateSpec::QuasistaticCone { frame, .. } => {
            // per slice: cross matrix + count for the cone region, and for
            // the constant continuation c = e_1 (rank one in sum w^T)
            let w_t = grid.w_t;
            let mut a_cone = vec![vec![0.0; vd * vd]; w_t];
            let mut n_cone = vec![0usize; w_t];
            let mut a_after = vec![vec![0.0; vd * vd]; w_t];
            let mut n_after = vec![0usize; w_t];
            let mut x = vec![0.0; grid.m];
            let mut c = vec![0.0; vd];
            for flat in 0..grid.n_samples() {
                let _t = grid.node(flat, &mut x);
                if w.status[flat] != SampleStatus::Valid {
                    continue;
                }
                let slice = flat / n_space;
                let ws = &w.samples[flat * vd..(flat + 1) * vd];
                if cone_value(frame, &x, &mut c) {
                    accumulate_cross(&mut a_cone[slice], &c, ws, vd);
                    n_cone[slice] += 1;
                }
                for b in 0..vd {
                    a_after[slice][b] += ws[b];
                }
                n_after[slice] += 1;
            }
            let mut best = f64::INFINITY;
            let mut best_t = 0.0;
            for k in 0..17 {
                let t_trunc = -1.0 + k as f64 * 0.125;
                let mut a = vec![0.0; vd * vd];
                let mut count = 0usize;
                for slice in 0..w_t {
                    if grid.time(slice) <= t_trunc {
                        for (ai, bi) in a.iter_mut().zip(&a_cone[slice]) {
                            *ai += bi;
                        }
                        count += n_cone[slice];
                    } else {
                        for (ai, bi) in a.iter_mut().zip(&a_after[slice]) {
                            *ai += bi;
                        }
                        count += n_after[slice];
                    }
                }
                if count == 0 {
                    continue;
                }
                let d2 = procrustes_distance(&a, count, vd, cell, domain);
                if d2 < best - 1e-12 {
                    best = d2;
                    best_t = t_trunc;
                }
            }
            (best, Some(best_t))
        }
        _ => {
            let mut a = vec![0.0; vd * vd];
            let mut count = 0usize;
            let mut x = vec![0.0; grid.m];
            let mut c = vec![0.0; vd];
            for flat in 0..grid.n_samples() {
                let t = grid.node(flat, &mut x);
                if w.status[flat] != SampleStatus::Valid {
                    continue;
                }
                if !sample_candidate(spec, &x, t, backward_only, &mut c) {
                    continue;
                }
                let ws = &w.samples[flat * vd..(flat + 1) * vd];
                accumulate_cross(&mut a, &c, ws, vd);
                count += 1;
            }
            if count == 0 {
                return (f64::INFINITY, None);
            }
            (procrustes_distance(&a, count, vd, cell, domain), None)
        }
    }
}

fn accumulate_cross(a: &mut [f64], c: &[f64], w: &[f64], vd: usize) {
    for i in 0..vd {
        for b in 0..vd {
            a[i * vd + b] += c[i] * w[b];
        }
    }
}

fn procrustes_distance(a: &[f64], count: usize, vd: usize, cell: f64, domain: f64) -> f64 {
    let mat = DMatrix::from_row_slice(vd, vd, a);
    let tr: f64 = mat.singular_values().iter().sum();
    let d2 = 2.0 * count as f64 - 2.0 * tr;
    d2.max(0.0) * cell * domain / count as f64
}

/// Coordinate descent on the unit normals completing the transverse frame:
/// perturb each spanning direction, re-orthonormalize, keep improvements.
fn refine_plane(
    spec: &CandidateSpec,
    w: &Window,
    backward_only: bool,
    rounds: usize,
    mut best: f64,
    mut best_t: Option<f64>,
) -> (CandidateSpec, f64, Option<f64>) {
    let m = w.grid.m;
    let mut current = spec.clone();
    let mut step = 0.25;
    for _ in 0..rounds {
        let frame = spec_frame(&current).unwrap().clone();
        let mut improved = false;
        for row in 0..frame.ell() {
            for axis in 0..m {
                for sign in [-1.0, 1.0] {
                    let mut rows = frame.rows.clone();
                    rows[row][axis] += sign * step;
                    let Some(f2) = Frame::orthonormalize(&rows, m) else {
                        continue;
                    };
                    let trial = with_frame(&current, f2);
                    let (d2, t2) = fit_candidate(&trial, w, backward_only);
                    if d2 < best - 1e-12 {
                        best = d2;
                        best_t = t2.or(best_t);
                        current = trial;
                        improved = true;
                    }
                }
            }
        }
        if !improved {
            step *= 0.25;
        }
    }
    if let (CandidateSpec::QuasistaticCone { frame, .. }, Some(t)) = (&current, best_t) {
        current = CandidateSpec::QuasistaticCone { frame: frame.clone(), t_trunc: t };
    }
    (current, best, best_t)
}

fn with_frame(spec: &CandidateSpec, frame: Frame) -> CandidateSpec {
    match spec {
        CandidateSpec::Constant => CandidateSpec::Constant,
        CandidateSpec::StaticCone { .. } => CandidateSpec::StaticCone { frame },
        CandidateSpec::QuasistaticCone { t_trunc, .. } => {
            CandidateSpec::QuasistaticCone { frame, t_trunc: *t_trunc }
        }
        CandidateSpec::Shrinking { profile, .. } => {
            CandidateSpec::Shrinking { frame, profile: profile.clone() }
        }
    }
}

/// Transverse ell-frames of splitting subspaces: all coordinate choices,
/// plus a seeded quasi-random sample when the Grassmannian is nontrivial.
fn splitting_frames(m: usize, ell: usize, config: &DictionaryConfig) -> Vec<Frame> {
    assert!(ell <= m);
    let mut frames = Vec::new();
    // coordinate ell-subsets of axes, lexicographic
    let mut subset: Vec<usize> = (0..ell).collect();
    loop {
        frames.push(Frame::coordinate(&subset, m));
        // next combination
        let mut i = ell;
        loop {
            if i == 0 {
                break;
            }
            i -= 1;
            if subset[i] < m - (ell - i) {
                subset[i] += 1;
                for k in i + 1..ell {
                    subset[k] = subset[k - 1] + 1;
                }
                i = usize::MAX;
                break;
            }
        }
        if i != usize::MAX {
            break;
        }
    }
    if ell < m {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ ((m as u64) << 8) ^ ell as u64);
        let mut made = 0usize;
        while made < config.grassmann_samples {
            let dirs: Vec<Vec<f64>> = (0..ell)
                .map(|_| (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();
            if dirs.iter().any(|v| util::norm(v) < 0.3) {
                continue;
            }
            if let Some(f) = Frame::orthonormalize(&dirs, m) {
                frames.push(f);
                made += 1;
            }
        }
    }
    frames
}

/// Fast symmetry pre-filter: Q_ij = int dy_i u . dy_j u over the valid
/// window cells, tau = int |dt u|^2; near-null eigenvectors of Q certify
/// approximate spatial symmetries and small tau certifies staticity.
#[derive(Debug, Clone)]
pub struct StructureTensor {
    /// Row-major m x m Gram matrix of the spatial derivatives.
    pub q: Vec<f64>,
    pub tau: f64,
    /// Eigenvalues of Q in ascending order.
    pub eigenvalues: Vec<f64>,
    /// Number of eigenvalues below tolerance.
    pub d_hat: usize,
    pub is_static: bool,
}

impl StructureTensor {
    /// D-hat = d-hat + 2 if static.
    pub fn symmetry_estimate(&self) -> usize {
        self.d_hat + if self.is_static { 2 } else { 0 }
    }
}

pub fn structure_tensor(w: &Window, tol_sym: f64) -> StructureTensor {
    let grid = &w.grid;
    let m = grid.m;
    let vd = grid.vdim;
    let n_space = grid.n_space();
    let dx = 2.0 / grid.w_cells as f64;
    let dt = 2.0 / grid.w_t as f64;
    let cell = grid.cell_volume();
    let strides: Vec<usize> = (0..m).map(|k| grid.w_cells.pow((m - 1 - k) as u32)).collect();
    let mut q = vec![0.0; m * m];
    let mut tau = 0.0;
    let mut grads = vec![0.0; m * vd];
    for flat in 0..grid.n_samples() {
        if w.status[flat] != SampleStatus::Valid {
            continue;
        }
        let sp = flat % n_space;
        let slice = flat / n_space;
        // central differences; require both spatial neighbors valid so Q
        // stays an exact Gram matrix of sampled derivatives
        let mut full = true;
        for k in 0..m {
            let idx = (sp / strides[k]) % grid.w_cells;
            if idx == 0 || idx == grid.w_cells - 1 {
                full = false;
                break;
            }
            let (lo, hi) = (flat - strides[k], flat + strides[k]);
            if w.status[lo] != SampleStatus::Valid || w.status[hi] != SampleStatus::Valid {
                full = false;
                break;
            }
            for a in 0..vd {
                grads[k * vd + a] =
                    (w.samples[hi * vd + a] - w.samples[lo * vd + a]) / (2.0 * dx);
            }
        }
        if !full {
            continue;
        }
        for i in 0..m {
            for jx in i..m {
                let g = util::dot(&grads[i * vd..(i + 1) * vd], &grads[jx * vd..(jx + 1) * vd]);
                q[i * m + jx] += g * cell;
                if jx != i {
                    q[jx * m + i] += g * cell;
                }
            }
        }
        if slice > 0 && slice < grid.w_t - 1 {
            let (lo, hi) = (flat - n_space, flat + n_space);
            if w.status[lo] == SampleStatus::Valid && w.status[hi] == SampleStatus::Valid {
                let mut d2 = 0.0;
                for a in 0..vd {
                    let d = (w.samples[hi * vd + a] - w.samples[lo * vd + a]) / (2.0 * dt);
                    d2 += d * d;
                }
                tau += d2 * cell;
            }
        }
    }
    let mat = DMatrix::from_row_slice(m, m, &q);
    let mut eigenvalues: Vec<f64> =
        mat.symmetric_eigen().eigenvalues.iter().copied().collect();
    eigenvalues.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let lam_max = eigenvalues.last().copied().unwrap_or(0.0);
    let tol = tol_sym * lam_max.max(1.0);
    let d_hat = eigenvalues.iter().filter(|&&l| l < tol).count();
    let trace: f64 = eigenvalues.iter().sum();
    let is_static = tau < tol_sym * trace.max(1.0);
    StructureTensor { q, tau, eigenvalues, d_hat, is_static }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::AnalyticField;
    use crate::geometry::SpaceTimePoint;
    use crate::solver;
    use crate::windows::{l2_distance_sq, sample_window};

    fn window_of(f: AnalyticField, scale: f64) -> Window {
        let m = f.m();
        let vd = f.vdim();
        let traj = solver::make_analytic(f, 1.0 / 64.0, 0.0);
        let grid = WindowGrid::default_for(m, vd);
        sample_window(&traj, &SpaceTimePoint::origin(m), scale, &grid).unwrap()
    }

    fn cone3() -> AnalyticField {
        AnalyticField::static_cone(3, Frame::coordinate(&[0, 1, 2], 3), vec![0.0; 3], 3).unwrap()
    }

    #[test]
    fn symmetry_counts_match_the_classification() {
        let prof = profile::solve_equivariant(3, 6.0).unwrap();
        let c = CandidateSpec::Constant;
        let cone = CandidateSpec::StaticCone { frame: Frame::coordinate(&[0, 1, 2], 3) };
        let shrink =
            CandidateSpec::Shrinking { frame: Frame::coordinate(&[0, 1, 2], 3), profile: prof };
        assert_eq!(symmetry_count(&c, 3), 5);
        assert_eq!(symmetry_count(&cone, 3), 2);
        assert_eq!(symmetry_count(&shrink, 3), 0);
        // split cone on R^3 x R
        let cone4 = CandidateSpec::StaticCone { frame: Frame::coordinate(&[0, 1, 2], 4) };
        assert_eq!(symmetry_count(&cone4, 4), 3);
        let quasi = CandidateSpec::QuasistaticCone {
            frame: Frame::coordinate(&[0, 1, 2], 4),
            t_trunc: 0.0,
        };
        assert_eq!(symmetry_count(&quasi, 4), 1);
    }

    #[test]
    fn constant_candidate_gives_a_constant_window() {
        let grid = WindowGrid::default_for(2, 3);
        let w = evaluate(&CandidateSpec::Constant, &grid, true);
        assert_eq!(w.n_valid(), w.n_domain());
        for flat in 0..grid.n_samples() {
            if w.status[flat] == SampleStatus::Valid {
                assert_eq!(w.samples[flat * 3], 1.0);
                assert_eq!(w.samples[flat * 3 + 1], 0.0);
            }
        }
    }

    #[test]
    fn cone_candidate_equals_the_analytic_cone_window() {
        let w = window_of(cone3(), 1.0);
        let c = evaluate(
            &CandidateSpec::StaticCone { frame: Frame::coordinate(&[0, 1, 2], 3) },
            &w.grid,
            true,
        );
        assert_eq!(w.status, c.status);
        for (a, b) in w.samples.iter().zip(&c.samples) {
            assert!((a - b).abs() < 1e-13);
        }
        assert!(l2_distance_sq(&w, &c).unwrap() < 1e-25);
    }

    #[test]
    fn best_fit_recovers_the_constant() {
        let dict = Dictionary::build(3, 3, DictionaryConfig::default()).unwrap();
        let f = AnalyticField::constant(3, vec![0.3, -0.4, 1.2]).unwrap();
        let w = window_of(f, 0.8);
        let fit = dict.best_fit(&w, 3 + 2).unwrap();
        assert!(fit.distance_sq < 1e-20, "{}", fit.distance_sq);
        assert_eq!(fit.spec, CandidateSpec::Constant);
        assert_eq!(fit.plane.basis.len(), 3);
        assert_eq!(fit.plane.time, TimeExtent::Full);
    }

    #[test]
    fn best_fit_recovers_the_cone_at_j_two() {
        let dict = Dictionary::build(3, 3, DictionaryConfig::default()).unwrap();
        let w = window_of(cone3(), 0.7);
        let fit = dict.best_fit(&w, 2).unwrap();
        assert!(fit.distance_sq < 1e-6, "{}", fit.distance_sq);
        assert_eq!(fit.spec.kind_name(), "static");
        assert_eq!(fit.d, 0);
    }

    #[test]
    fn rotated_cone_is_still_recovered_by_target_alignment() {
        // rotate every sample by a fixed Q in O(3); the Procrustes step
        // must absorb it exactly
        let dict = Dictionary::build(3, 3, DictionaryConfig::default()).unwrap();
        let mut w = window_of(cone3(), 0.7);
        let th: f64 = 0.83;
        let (s, c) = th.sin_cos();
        let q = [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, -1.0]];
        for flat in 0..w.grid.n_samples() {
            let v: Vec<f64> = w.samples[flat * 3..flat * 3 + 3].to_vec();
            for i in 0..3 {
                w.samples[flat * 3 + i] = q[i][0] * v[0] + q[i][1] * v[1] + q[i][2] * v[2];
            }
        }
        let fit = dict.best_fit(&w, 2).unwrap();
        assert!(fit.distance_sq < 1e-20, "{}", fit.distance_sq);
        assert_eq!(fit.spec.kind_name(), "static");
    }

    #[test]
    fn cone_at_j_three_matches_the_optimal_constant_oracle() {
        // at j = 3 only constants remain (D = 5); the closed-form optimum
        // is the normalized sample mean, cross-checked by random search
        let dict = Dictionary::build(3, 3, DictionaryConfig::default()).unwrap();
        let w = window_of(cone3(), 0.7);
        let fit = dict.best_fit(&w, 3).unwrap();
        assert_eq!(fit.spec, CandidateSpec::Constant);
        assert!(fit.distance_sq > 0.1, "{}", fit.distance_sq);

        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cell = w.grid.cell_volume();
        let valid = w.n_valid();
        let mut oracle = f64::INFINITY;
        for _ in 0..500 {
            let v: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0f64)).collect();
            let n = util::norm(&v);
            if n < 0.2 {
                continue;
            }
            let c: Vec<f64> = v.iter().map(|x| x / n).collect();
            let mut terms = Vec::new();
            for flat in 0..w.grid.n_samples() {
                if w.status[flat] != SampleStatus::Valid {
                    continue;
                }
                let d2: f64 = (0..3)
                    .map(|a| (w.samples[flat * 3 + a] - c[a]).powi(2))
                    .sum();
                terms.push(d2);
            }
            let d = util::pairwise_sum(&terms) * cell * w.n_domain() as f64 / valid as f64;
            oracle = oracle.min(d);
        }
        assert!(fit.distance_sq <= oracle + 1e-10, "{} vs {oracle}", fit.distance_sq);
        assert!(fit.distance_sq > 0.5 * oracle, "{} vs {oracle}", fit.distance_sq);
    }

    #[test]
    fn best_fit_distance_is_monotone_in_j() {
        let prof = profile::solve_equivariant(3, 8.0).unwrap();
        let f = AnalyticField::shrinking(
            3,
            Frame::coordinate(&[0, 1, 2], 3),
            vec![0.0; 3],
            0.0,
            prof,
        )
        .unwrap();
        let w = window_of(f, 0.5);
        let dict = Dictionary::build(3, 4, DictionaryConfig::default()).unwrap();
        let mut prev = -1.0;
        for j in 0..=5 {
            let fit = dict.best_fit(&w, j).unwrap();
            assert!(
                fit.distance_sq >= prev - 1e-12,
                "j={j}: {} < {prev}",
                fit.distance_sq
            );
            prev = fit.distance_sq;
        }
        assert!(dict.best_fit(&w, 6).is_err());
    }

    #[test]
    fn shrinker_window_fits_its_generator_at_j_zero() {
        let prof = profile::solve_equivariant(3, 8.0).unwrap();
        let f = AnalyticField::shrinking(
            3,
            Frame::coordinate(&[0, 1, 2], 3),
            vec![0.0; 3],
            0.0,
            prof,
        )
        .unwrap();
        let w = window_of(f, 0.5);
        let dict = Dictionary::build(3, 4, DictionaryConfig::default()).unwrap();
        let fit = dict.best_fit(&w, 0).unwrap();
        assert!(fit.distance_sq < 1e-6, "{}", fit.distance_sq);
        assert_eq!(fit.spec.kind_name(), "shrinking");
        assert_eq!(fit.plane.time, TimeExtent::Slice(0.0));
    }

    #[test]
    fn quasistatic_window_recovers_its_truncation_time() {
        let f = AnalyticField::quasistatic_cone(
            3,
            Frame::coordinate(&[0, 1, 2], 3),
            vec![0.0; 3],
            3,
            0.25,
        )
        .unwrap();
        let w = window_of(f, 1.0);
        let dict = Dictionary::build(3, 3, DictionaryConfig::default()).unwrap();
        let fit = dict.best_fit(&w, 0).unwrap();
        assert!(fit.distance_sq < 1e-10, "{}", fit.distance_sq);
        assert_eq!(fit.spec.kind_name(), "quasistatic");
        assert_eq!(fit.t_trunc, Some(0.25));
        assert_eq!(fit.plane.time, TimeExtent::HalfLine(0.25));
    }

    #[test]
    fn structure_tensor_counts_symmetries() {
        let tol = DictionaryConfig::default().tol_sym;
        // constant: Q = 0, tau = 0, D-hat = m + 2
        let cw = window_of(AnalyticField::constant(3, vec![0.0, 0.0, 1.0]).unwrap(), 0.8);
        let st = structure_tensor(&cw, tol);
        assert_eq!(st.d_hat, 3);
        assert!(st.is_static);
        assert_eq!(st.symmetry_estimate(), 5);
        // cone in R^3: positive definite Q, static
        let st = structure_tensor(&window_of(cone3(), 0.7), tol);
        assert_eq!(st.d_hat, 0);
        assert!(st.is_static);
        assert_eq!(st.symmetry_estimate(), 2);
        assert!(st.eigenvalues[0] > 0.1);
        // split cone on R^3 x R: one exact null direction
        let split = AnalyticField::static_cone(
            4,
            Frame::coordinate(&[0, 1, 2], 4),
            vec![0.0; 4],
            3,
        )
        .unwrap();
        let st = structure_tensor(&window_of(split, 0.7), tol);
        assert_eq!(st.d_hat, 1);
        assert!(st.is_static);
        assert_eq!(st.symmetry_estimate(), 3);
        // shrinker: no spatial symmetry, genuinely time dependent
        let prof = profile::solve_equivariant(3, 8.0).unwrap();
        let sh = AnalyticField::shrinking(
            3,
            Frame::coordinate(&[0, 1, 2], 3),
            vec![0.0; 3],
            0.0,
            prof,
        )
        .unwrap();
        let st = structure_tensor(&window_of(sh, 0.5), tol);
        assert_eq!(st.d_hat, 0);
        assert!(!st.is_static);
        assert_eq!(st.symmetry_estimate(), 0);
    }

    #[test]
    fn shrink_profile_solve_residual_and_trivial_solution() {
        let p = shrink_profile_solve(3, 2.7, 6.0).unwrap();
        assert!(p.ode_residual(0.05, 3.0) < 1e-5);
        let zero = shrink_profile_solve(3, 0.0, 6.0).unwrap();
        assert!(zero.h.iter().all(|h| h.abs() < 1e-12));
    }
}
