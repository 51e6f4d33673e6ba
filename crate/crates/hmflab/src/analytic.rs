//! Exact model fields evaluated lazily: constants, static cones `y/|y|`,
//! quasistatic truncations, selfsimilarly shrinking profile fields and
//! geodesic (great-circle) maps.
//!
//! These bypass the solver entirely so oracle tests are free of
//! time-discretization error; derivative evaluations are closed-form.

use crate::error::{Error, Result};
use crate::profile::ShrinkProfile;
use crate::util;
use serde::{Deserialize, Serialize};

/// Values closer to a field's singular locus than this are flagged as
/// sentinels and excluded from quadratures.
pub const SINGULAR_EPS: f64 = 1e-10;

/// Orthonormal row frame: `rows` are `ell` orthonormal vectors in `R^m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub rows: Vec<Vec<f64>>,
    pub m: usize,
}

impl Frame {
    /// Gram-Schmidt an arbitrary spanning set into an orthonormal frame.
    pub fn orthonormalize(vectors: &[Vec<f64>], m: usize) -> Option<Frame> {
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for v in vectors {
            assert_eq!(v.len(), m);
            let mut w = v.clone();
            for r in &rows {
                let d = util::dot(&w, r);
                for (wi, ri) in w.iter_mut().zip(r) {
                    *wi -= d * ri;
                }
            }
            let n = util::norm(&w);
            if n < 1e-10 {
                return None;
            }
            for wi in w.iter_mut() {
                *wi /= n;
            }
            rows.push(w);
        }
        Some(Frame { rows, m })
    }

    /// Frame spanned by coordinate axes `axes`.
    pub fn coordinate(axes: &[usize], m: usize) -> Frame {
        let rows = axes
            .iter()
            .map(|&a| {
                let mut e = vec![0.0; m];
                e[a] = 1.0;
                e
            })
            .collect();
        Frame { rows, m }
    }

    pub fn ell(&self) -> usize {
        self.rows.len()
    }

    /// Apply to `x - center`, writing the transverse coordinates into `y`.
    pub fn apply(&self, x: &[f64], center: &[f64], y: &mut [f64]) {
        for (k, row) in self.rows.iter().enumerate() {
            let mut s = 0.0;
            for i in 0..self.m {
                s += row[i] * (x[i] - center[i]);
            }
            y[k] = s;
        }
    }

    /// Distance of a spatial point to the affine plane `center + span(complement)`,
    /// i.e. the norm of the frame coordinates themselves.
    pub fn transverse_norm(&self, x: &[f64], center: &[f64]) -> f64 {
        let mut y = [0.0f64; 4];
        self.apply(x, center, &mut y[..self.ell()]);
        util::norm(&y[..self.ell()])
    }
}

/// One analytic space-time field with values in `R^(n+1)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum AnalyticField {
    Constant {
        m: usize,
        value: Vec<f64>,
    },
    /// `u(x) = embed(y/|y|)` with `y` the 3 transverse coordinates of
    /// `x - center`; static, `d = m - 3` spatial symmetries.
    StaticCone {
        m: usize,
        frame: Frame,
        center: Vec<f64>,
        /// Orthonormal columns `vdim x 3` embedding the cone sphere into the
        /// target's ambient space (a target rotation when `vdim = 3`).
        embed: Vec<Vec<f64>>,
    },
    /// Static cone up to `t_trunc`, the constant `after` for later times.
    QuasistaticCone {
        m: usize,
        frame: Frame,
        center: Vec<f64>,
        embed: Vec<Vec<f64>>,
        t_trunc: f64,
        after: Vec<f64>,
    },
    /// `u(x, t) = psi((y - center)/sqrt(t_center - t))` for `t < t_center`,
    /// continued for `t >= t_center` as the limiting cone of the profile
    /// (static, 0-homogeneous), so the field stays backwardly selfsimilar
    /// about its center on every parabolic window.
    Shrinking {
        m: usize,
        frame: Frame,
        center: Vec<f64>,
        t_center: f64,
        profile: ShrinkProfile,
    },
    /// Great-circle harmonic map `u(x) = (cos k.x, sin k.x, 0, ...)`.
    Geodesic {
        m: usize,
        wave: Vec<f64>,
        vdim: usize,
    },
}

/// Result of one pointwise evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sample {
    Valid,
    /// Singular locus or outside the field's time domain; excluded from
    /// quadratures.
    Masked,
}

impl AnalyticField {
    pub fn constant(m: usize, mut value: Vec<f64>) -> Result<Self> {
        let n = util::norm(&value);
        if n < 1e-14 {
            return Err(Error::UnsupportedField { kind: "constant with zero value".into(), m });
        }
        value.iter_mut().for_each(|c| *c /= n);
        Ok(AnalyticField::Constant { m, value })
    }

    /// `u(x) = x/|x|` when `m = 3`; for `m = 4` the transverse frame picks a
    /// 3-subspace. Requires `m >= 3`.
    pub fn static_cone(m: usize, frame: Frame, center: Vec<f64>, vdim: usize) -> Result<Self> {
        if m < 3 || frame.ell() != 3 || vdim < 3 {
            return Err(Error::UnsupportedField { kind: "static_cone".into(), m });
        }
        Ok(AnalyticField::StaticCone { m, frame, center, embed: identity_embed(vdim) })
    }

    pub fn quasistatic_cone(
        m: usize,
        frame: Frame,
        center: Vec<f64>,
        vdim: usize,
        t_trunc: f64,
    ) -> Result<Self> {
        if m < 3 || frame.ell() != 3 || vdim < 3 {
            return Err(Error::UnsupportedField { kind: "quasistatic_cone".into(), m });
        }
        // continuation constant: the cone's value in the first transverse
        // direction (shared convention with the candidate dictionary)
        let mut after = vec![0.0; vdim];
        after[0] = 1.0;
        Ok(AnalyticField::QuasistaticCone {
            m,
            frame,
            center,
            embed: identity_embed(vdim),
            t_trunc,
            after,
        })
    }

    pub fn shrinking(
        m: usize,
        frame: Frame,
        center: Vec<f64>,
        t_center: f64,
        profile: ShrinkProfile,
    ) -> Result<Self> {
        if frame.ell() != profile.ell || frame.ell() > m {
            return Err(Error::UnsupportedField { kind: "shrinking".into(), m });
        }
        Ok(AnalyticField::Shrinking { m, frame, center, t_center, profile })
    }

    pub fn geodesic(m: usize, wave: Vec<f64>) -> Self {
        assert_eq!(wave.len(), m);
        AnalyticField::Geodesic { m, wave, vdim: 3 }
    }

    pub fn m(&self) -> usize {
        match self {
            AnalyticField::Constant { m, .. }
            | AnalyticField::StaticCone { m, .. }
            | AnalyticField::QuasistaticCone { m, .. }
            | AnalyticField::Shrinking { m, .. }
            | AnalyticField::Geodesic { m, .. } => *m,
        }
    }

    /// Ambient dimension of the values (`n + 1`).
    pub fn vdim(&self) -> usize {
        match self {
            AnalyticField::Constant { value, .. } => value.len(),
            AnalyticField::StaticCone { embed, .. }
            | AnalyticField::QuasistaticCone { embed, .. } => embed.len(),
            AnalyticField::Shrinking { profile, .. } => profile.ell + 1,
            AnalyticField::Geodesic { vdim, .. } => *vdim,
        }
    }

    /// Evaluate at `(x, t)`, writing `vdim` components into `out`.
    pub fn eval(&self, x: &[f64], t: f64, out: &mut [f64]) -> Sample {
        match self {
            AnalyticField::Constant { value, .. } => {
                out.copy_from_slice(value);
                Sample::Valid
            }
            AnalyticField::StaticCone { frame, center, embed, .. } => {
                cone_eval(frame, center, embed, x, out)
            }
            AnalyticField::QuasistaticCone { frame, center, embed, t_trunc, after, .. } => {
                if t > *t_trunc {
                    out.copy_from_slice(after);
                    Sample::Valid
                } else {
                    cone_eval(frame, center, embed, x, out)
                }
            }
            AnalyticField::Shrinking { frame, center, t_center, profile, .. } => {
                let tau = t - t_center;
                let ell = frame.ell();
                let mut y = [0.0f64; 4];
                frame.apply(x, center, &mut y[..ell]);
                if tau >= 0.0 {
                    // limiting cone: singular only on the transverse axis
                    let r = util::norm(&y[..ell]);
                    if r < SINGULAR_EPS {
                        out.iter_mut().for_each(|c| *c = 0.0);
                        return Sample::Masked;
                    }
                    let (sh, ch) = profile.h_end().sin_cos();
                    for k in 0..ell {
                        out[k] = sh * y[k] / r;
                    }
                    out[ell] = ch;
                    return Sample::Valid;
                }
                let s = (-tau).sqrt();
                let rho = util::norm(&y[..ell]) / s;
                let (h, _) = profile.eval(rho);
                if rho < SINGULAR_EPS {
                    out.iter_mut().for_each(|c| *c = 0.0);
                    out[ell] = 1.0;
                    return Sample::Valid;
                }
                let (sh, ch) = h.sin_cos();
                for k in 0..ell {
                    out[k] = sh * y[k] / (rho * s);
                }
                out[ell] = ch;
                Sample::Valid
            }
            AnalyticField::Geodesic { wave, vdim, .. } => {
                let th = util::dot(wave, x);
                out.iter_mut().for_each(|c| *c = 0.0);
                out[0] = th.cos();
                out[1] = th.sin();
                let _ = vdim;
                Sample::Valid
            }
        }
    }

    /// Exact spatial gradient, row-major `m x vdim`, into `out`.
    pub fn grad(&self, x: &[f64], t: f64, out: &mut [f64]) -> Sample {
        let m = self.m();
        let vd = self.vdim();
        match self {
            AnalyticField::Constant { .. } => {
                out.iter_mut().for_each(|c| *c = 0.0);
                Sample::Valid
            }
            AnalyticField::StaticCone { frame, center, embed, .. } => {
                cone_grad(frame, center, embed, x, m, vd, out)
            }
            AnalyticField::QuasistaticCone { frame, center, embed, t_trunc, .. } => {
                if t > *t_trunc {
                    out.iter_mut().for_each(|c| *c = 0.0);
                    Sample::Valid
                } else {
                    cone_grad(frame, center, embed, x, m, vd, out)
                }
            }
            AnalyticField::Shrinking { frame, center, t_center, profile, .. } => {
                let tau = t - t_center;
                out.iter_mut().for_each(|c| *c = 0.0);
                let ell = frame.ell();
                let mut y = [0.0f64; 4];
                frame.apply(x, center, &mut y[..ell]);
                if tau >= 0.0 {
                    let r = util::norm(&y[..ell]);
                    if r < SINGULAR_EPS {
                        return Sample::Masked;
                    }
                    let sh = profile.h_end().sin();
                    for i in 0..m {
                        for a in 0..ell {
                            let mut g = 0.0;
                            for b in 0..ell {
                                let kron = if a == b { 1.0 } else { 0.0 };
                                g += frame.rows[b][i] * (kron - y[a] * y[b] / (r * r));
                            }
                            out[i * vd + a] = sh * g / r;
                        }
                    }
                    return Sample::Valid;
                }
                let s = (-tau).sqrt();
                let mut xi = [0.0f64; 4];
                for k in 0..ell {
                    xi[k] = y[k] / s;
                }
                let rho = util::norm(&xi[..ell]);
                if rho < SINGULAR_EPS {
                    // psi is smooth at the origin: D psi = h'(0) * identity block
                    let a = profile.shoot_a;
                    for i in 0..m {
                        for k in 0..ell {
                            out[i * vd + k] = a * frame.rows[k][i] / s;
                        }
                    }
                    return Sample::Valid;
                }
                let (h, hp) = profile.eval(rho);
                let (sh, ch) = h.sin_cos();
                // D psi with respect to xi, then chain rule through frame / sqrt(-tau)
                let mut dpsi = [[0.0f64; 5]; 4]; // [b][a]
                for b in 0..ell {
                    let xb = xi[b] / rho;
                    for a in 0..ell {
                        let xa = xi[a] / rho;
                        let kron = if a == b { 1.0 } else { 0.0 };
                        dpsi[b][a] = ch * hp * xb * xa + sh * (kron - xa * xb) / rho;
                    }
                    dpsi[b][ell] = -sh * hp * xb;
                }
                for i in 0..m {
                    for a in 0..=ell {
                        let mut g = 0.0;
                        for b in 0..ell {
                            g += frame.rows[b][i] * dpsi[b][a];
                        }
                        out[i * vd + a] = g / s;
                    }
                }
                Sample::Valid
            }
            AnalyticField::Geodesic { wave, .. } => {
                let th = util::dot(wave, x);
                let (sth, cth) = th.sin_cos();
                out.iter_mut().for_each(|c| *c = 0.0);
                for i in 0..m {
                    out[i * vd] = -sth * wave[i];
                    out[i * vd + 1] = cth * wave[i];
                }
                Sample::Valid
            }
        }
    }

    /// Exact time derivative into `out` (`vdim` components).
    pub fn dt(&self, x: &[f64], t: f64, out: &mut [f64]) -> Sample {
        out.iter_mut().for_each(|c| *c = 0.0);
        match self {
            AnalyticField::Constant { .. }
            | AnalyticField::StaticCone { .. }
            | AnalyticField::Geodesic { .. } => Sample::Valid,
            AnalyticField::QuasistaticCone { .. } => Sample::Valid, // a.e. zero
            AnalyticField::Shrinking { frame, center, t_center, profile, .. } => {
                let tau = t - t_center;
                let ell = frame.ell();
                let mut y = [0.0f64; 4];
                frame.apply(x, center, &mut y[..ell]);
                if tau >= 0.0 {
                    // the limiting cone is static
                    if util::norm(&y[..ell]) < SINGULAR_EPS {
                        return Sample::Masked;
                    }
                    return Sample::Valid;
                }
                let s = (-tau).sqrt();
                let mut xi = [0.0f64; 4];
                for k in 0..ell {
                    xi[k] = y[k] / s;
                }
                let rho = util::norm(&xi[..ell]);
                if rho < SINGULAR_EPS {
                    return Sample::Valid;
                }
                let (h, hp) = profile.eval(rho);
                let (sh, ch) = h.sin_cos();
                // du/dt = D psi [xi] / (2 (-tau))
                let f = 1.0 / (2.0 * (-tau));
                for a in 0..ell {
                    let xa = xi[a] / rho;
                    // (D psi [xi])_a = ch hp rho xa + 0 tangential part
                    out[a] = (ch * hp * rho * xa) * f;
                }
                out[ell] = -sh * hp * rho * f;
                Sample::Valid
            }
        }
    }

    /// Closed-form `|grad u|^2`; `None` on masked points.
    pub fn grad_norm_sq(&self, x: &[f64], t: f64) -> Option<f64> {
        match self {
            AnalyticField::Constant { .. } => Some(0.0),
            AnalyticField::StaticCone { frame, center, .. } => {
                let r = frame.transverse_norm(x, center);
                if r < SINGULAR_EPS {
                    None
                } else {
                    Some(2.0 / (r * r))
                }
            }
            AnalyticField::QuasistaticCone { frame, center, t_trunc, .. } => {
                if t > *t_trunc {
                    Some(0.0)
                } else {
                    let r = frame.transverse_norm(x, center);
                    if r < SINGULAR_EPS {
                        None
                    } else {
                        Some(2.0 / (r * r))
                    }
                }
            }
            AnalyticField::Shrinking { frame, center, t_center, profile, .. } => {
                let tau = t - t_center;
                let ell = frame.ell() as f64;
                if tau >= 0.0 {
                    let r = frame.transverse_norm(x, center);
                    if r < SINGULAR_EPS {
                        return None;
                    }
                    let sh = profile.h_end().sin();
                    return Some((ell - 1.0) * sh * sh / (r * r));
                }
                let rho = frame.transverse_norm(x, center) / (-tau).sqrt();
                let (h, hp) = profile.eval(rho.max(SINGULAR_EPS));
                let ang = if rho < SINGULAR_EPS {
                    profile.shoot_a * profile.shoot_a
                } else {
                    let s = h.sin();
                    s * s / (rho * rho)
                };
                Some((hp * hp + (ell - 1.0) * ang) / (-tau))
            }
            AnalyticField::Geodesic { wave, .. } => {
                let k2: f64 = wave.iter().map(|k| k * k).sum();
                Some(k2)
            }
        }
    }

    /// Closed-form `|grad^2 u|^2` (Frobenius); falls back to central
    /// differences of the exact gradient where no closed form exists.
    pub fn hess_norm_sq(&self, x: &[f64], t: f64) -> Option<f64> {
        match self {
            AnalyticField::Constant { .. } => Some(0.0),
            AnalyticField::StaticCone { frame, center, .. } => {
                let r = frame.transverse_norm(x, center);
                if r < SINGULAR_EPS {
                    None
                } else {
                    Some(6.0 / r.powi(4))
                }
            }
            AnalyticField::QuasistaticCone { frame, center, t_trunc, .. } => {
                if t > *t_trunc {
                    Some(0.0)
                } else {
                    let r = frame.transverse_norm(x, center);
                    if r < SINGULAR_EPS {
                        None
                    } else {
                        Some(6.0 / r.powi(4))
                    }
                }
            }
            AnalyticField::Geodesic { wave, .. } => {
                let k2: f64 = wave.iter().map(|k| k * k).sum();
                Some(k2 * k2)
            }
            AnalyticField::Shrinking { .. } => self.hess_norm_sq_fd(x, t, 1e-5),
        }
    }

    /// Frobenius norm of the spatial Hessian by central differences of the
    /// exact gradient.
    pub fn hess_norm_sq_fd(&self, x: &[f64], t: f64, step: f64) -> Option<f64> {
        let m = self.m();
        let vd = self.vdim();
        let mut gp = vec![0.0; m * vd];
        let mut gm = vec![0.0; m * vd];
        let mut sum = 0.0;
        let mut xp = x.to_vec();
        for i in 0..m {
            xp.copy_from_slice(x);
            xp[i] = x[i] + step;
            if self.grad(&xp, t, &mut gp) == Sample::Masked {
                return None;
            }
            xp[i] = x[i] - step;
            if self.grad(&xp, t, &mut gm) == Sample::Masked {
                return None;
            }
            for a in 0..m * vd {
                let d = (gp[a] - gm[a]) / (2.0 * step);
                sum += d * d;
            }
        }
        Some(sum)
    }
}

fn identity_embed(vdim: usize) -> Vec<Vec<f64>> {
    (0..vdim)
        .map(|a| {
            let mut col = vec![0.0; 3];
            if a < 3 {
                col[a] = 1.0;
            }
            col
        })
        .collect()
}

fn cone_eval(
    frame: &Frame,
    center: &[f64],
    embed: &[Vec<f64>],
    x: &[f64],
    out: &mut [f64],
) -> Sample {
    let mut y = [0.0f64; 3];
    frame.apply(x, center, &mut y);
    let r = util::norm(&y);
    if r < SINGULAR_EPS {
        out.iter_mut().for_each(|c| *c = 0.0);
        return Sample::Masked;
    }
    for (a, row) in embed.iter().enumerate() {
        out[a] = (row[0] * y[0] + row[1] * y[1] + row[2] * y[2]) / r;
    }
    Sample::Valid
}

fn cone_grad(
    frame: &Frame,
    center: &[f64],
    embed: &[Vec<f64>],
    x: &[f64],
    m: usize,
    vd: usize,
    out: &mut [f64],
) -> Sample {
    let mut y = [0.0f64; 3];
    frame.apply(x, center, &mut y);
    let r = util::norm(&y);
    out.iter_mut().for_each(|c| *c = 0.0);
    if r < SINGULAR_EPS {
        return Sample::Masked;
    }
    let yh = [y[0] / r, y[1] / r, y[2] / r];
    // d(y_a/|y|)/dy_b = (delta_ab - yh_a yh_b)/r, then chain through frame
    for i in 0..m {
        for (a, row) in embed.iter().enumerate() {
            let mut g = 0.0;
            for b in 0..3 {
                let mut d = 0.0;
                for c in 0..3 {
                    let kron = if b == c { 1.0 } else { 0.0 };
                    d += row[c] * (kron - yh[c] * yh[b]);
                }
                g += frame.rows[b][i] * d / r;
            }
            out[i * vd + a] = g;
        }
    }
    Sample::Valid
}
