//! Pipeline stages simulate -> analyze -> verify. Each stage is internally
//! parallel with deterministic reductions, so outputs are byte-identical
//! across reruns and thread counts.

use crate::analysis::{self, SlopeFit};
use crate::analytic::{AnalyticField, Frame};
use crate::candidates::Dictionary;
use crate::config::{FieldConfig, RunConfig};
use crate::energies::QuadParams;
use crate::error::{Error, Result};
use crate::geometry::SpaceTimePoint;
use crate::report::{self, fmt, Manifest};
use crate::solver::{self, FlowTrajectory, Snapshot};
use crate::strata::{self, Membership, ScaleBitVector, StrataLabel};
use crate::target;
use crate::util;
use crate::windows::WindowGrid;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

/// Build the run's trajectory from its field spec.
pub fn build_trajectory(cfg: &RunConfig) -> Result<FlowTrajectory> {
    let vdim = cfg.n + 1;
    let probe_h = 1.0 / 64.0;
    let field = match &cfg.field {
        FieldConfig::Constant { value } => AnalyticField::constant(cfg.m, value.clone())?,
        FieldConfig::StaticCone { axes } => AnalyticField::static_cone(
            cfg.m,
            Frame::coordinate(axes, cfg.m),
            vec![0.0; cfg.m],
            vdim,
        )?,
        FieldConfig::QuasistaticCone { axes, t_trunc } => AnalyticField::quasistatic_cone(
            cfg.m,
            Frame::coordinate(axes, cfg.m),
            vec![0.0; cfg.m],
            vdim,
            *t_trunc,
        )?,
        FieldConfig::Shrinking { ell, rho_max } => {
            let profile = crate::profile::solve_equivariant(*ell, *rho_max)?;
            AnalyticField::shrinking(
                cfg.m,
                Frame::coordinate(&(0..*ell).collect::<Vec<_>>(), cfg.m),
                vec![0.0; cfg.m],
                0.0,
                profile,
            )?
        }
        FieldConfig::Simulated { n_cells, t_end, record_every, sigma, noise_amp, wave } => {
            let u0 = initial_data(cfg, *n_cells, *noise_amp, wave)?;
            let dt = solver::cfl_dt(u0.grid.h, cfg.m, *sigma);
            return solver::run(u0, dt, *t_end, *record_every);
        }
    };
    Ok(solver::make_analytic(field, probe_h, 0.0))
}

/// Smooth geodesic-type base map plus seeded tangential noise, projected.
fn initial_data(cfg: &RunConfig, n_cells: usize, amp: f64, wave: &[f64]) -> Result<Snapshot> {
    let grid = crate::geometry::GridSpec::torus(cfg.m, n_cells, 1.0 / n_cells as f64);
    let vdim = cfg.n + 1;
    let base = AnalyticField::geodesic(cfg.m, wave.to_vec());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let total = grid.total_cells();
    let mut noise = vec![0.0f64; total * vdim];
    for c in noise.iter_mut() {
        // Box-Muller keeps us on rand 0.8's stable uniform stream
        let u1: f64 = rng.gen_range(1e-12..1.0);
        let u2: f64 = rng.gen_range(0.0..1.0);
        *c = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
    }
    let snap = Snapshot::from_fn(grid.clone(), vdim, 0.0, |x| {
        let mut v = vec![0.0; 3];
        base.eval(x, 0.0, &mut v);
        let mut out = vec![0.0; vdim];
        out[..3.min(vdim)].copy_from_slice(&v[..3.min(vdim)]);
        out
    })?;
    let mut values = snap.values;
    for cell in 0..total {
        let v = &mut values[cell * vdim..(cell + 1) * vdim];
        let n = &noise[cell * vdim..(cell + 1) * vdim];
        let dot: f64 = v.iter().zip(n).map(|(a, b)| a * b).sum();
        for a in 0..vdim {
            v[a] += amp * (n[a] - dot * v[a]);
        }
        target::project(v).map_err(|_| Error::ProjectionBreakdown {
            cell,
            norm: util::norm(v),
        })?;
    }
    Ok(Snapshot { grid, t: 0.0, vdim, values })
}

/// Seeded uniform sample cloud from the configured space-time box.
pub fn sample_cloud(cfg: &RunConfig) -> Vec<SpaceTimePoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    (0..cfg.cloud.n_points)
        .map(|_| {
            let x: Vec<f64> = (0..cfg.m)
                .map(|_| rng.gen_range(-cfg.cloud.box_half..cfg.cloud.box_half))
                .collect();
            let t = rng.gen_range(cfg.cloud.t_min..cfg.cloud.t_max);
            SpaceTimePoint::new(x, t)
        })
        .collect()
}

fn snapshot_name(k: usize) -> String {
    format!("snap_{k:04}.bin")
}

/// Stage 1: resolve the trajectory, persist simulated snapshots, write the
/// manifest (Lambda_2 is measured later by analyze and echoed then).
pub fn cmd_simulate(cfg: &RunConfig, out: &Path) -> Result<FlowTrajectory> {
    cfg.validate()?;
    std::fs::create_dir_all(out)?;
    let traj = build_trajectory(cfg)?;
    let (source, files, lambda1) = match &traj {
        FlowTrajectory::Simulated(sim) => {
            let mut files = Vec::new();
            for (k, s) in sim.snapshots.iter().enumerate() {
                let name = snapshot_name(k);
                let mut w = BufWriter::new(File::create(out.join(&name))?);
                solver::write_snapshot(&mut w, s)?;
                files.push(name);
            }
            ("simulated", files, sim.snapshots[0].dirichlet_energy())
        }
        FlowTrajectory::Analytic { .. } => ("analytic", Vec::new(), 0.0),
    };
    let grid = WindowGrid::default_for(cfg.m, cfg.n + 1);
    let manifest = Manifest {
        config: cfg.clone(),
        source,
        snapshot_files: files,
        lambda1,
        lambda2: 0.0,
        window_cells: grid.w_cells,
        window_slices: grid.w_t,
    };
    report::write_json(&out.join("manifest.json"), &manifest)?;
    Ok(traj)
}

/// Everything analyze measures, consumed by verify.
pub struct LabelSet {
    pub cloud: Vec<SpaceTimePoint>,
    pub bits: Vec<ScaleBitVector>,
    pub labels: Vec<Vec<StrataLabel>>,
    pub lambda2: f64,
}

/// Stage 2: annulus energies, scale bit-vectors, strata labels and
/// regularity records over the sample cloud; CSVs plus the finalized
/// manifest.
pub fn cmd_analyze(cfg: &RunConfig, out: &Path, traj: &FlowTrajectory) -> Result<LabelSet> {
    cfg.validate()?;
    std::fs::create_dir_all(out)?;
    let quad = QuadParams { n_space: cfg.quad.n_space, n_time: cfg.quad.n_time };
    let cloud = sample_cloud(cfg);
    let lambda2 = strata::measured_lambda2(traj, &cloud, &cfg.scales, &quad)?;
    let bits: Vec<ScaleBitVector> = cloud
        .par_iter()
        .map(|x| strata::scale_bits(traj, x, &cfg.scales, lambda2, &quad))
        .collect::<Result<_>>()?;

    let energy_rows: Vec<Vec<String>> = cloud
        .iter()
        .zip(&bits)
        .enumerate()
        .map(|(i, (x, b))| {
            let mut row = vec![i.to_string(), fmt(x.t), fmt(b.total), b.k.to_string()];
            row.extend(b.w.iter().map(|&v| fmt(v)));
            row
        })
        .collect();
    let mut header: Vec<String> =
        vec!["idx".into(), "t".into(), "total".into(), "K".into()];
    header.extend((cfg.scales.q + 1..=cfg.scales.beta).map(|a| format!("W_{a}")));
    let hdr: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
    report::write_csv(&out.join("energies.csv"), &hdr, &energy_rows)?;

    let dict = Dictionary::build(cfg.m, cfg.n + 1, cfg.dictionary.clone())?;
    let grid = WindowGrid::default_for(cfg.m, cfg.n + 1);
    let labels: Vec<Vec<StrataLabel>> = cloud
        .par_iter()
        .map(|x| {
            cfg.j_list
                .iter()
                .map(|&j| {
                    strata::strata_membership(
                        traj, x, j, &cfg.scales, cfg.r, cfg.big_r, &dict, &grid,
                    )
                })
                .collect()
        })
        .collect();
    let label_rows: Vec<Vec<String>> = cloud
        .iter()
        .enumerate()
        .flat_map(|(i, _)| {
            labels[i].iter().map(move |l| {
                let (status, scale, dist, kind) = match &l.membership {
                    Membership::Member => ("member", f64::NAN, f64::NAN, ""),
                    Membership::NotMember { scale, distance_sq, kind } => {
                        ("not_member", *scale, *distance_sq, *kind)
                    }
                    Membership::Undetermined { .. } => {
                        ("undetermined", f64::NAN, f64::NAN, "")
                    }
                };
                vec![
                    i.to_string(),
                    l.j.to_string(),
                    status.to_string(),
                    fmt(scale),
                    fmt(dist),
                    kind.to_string(),
                ]
            })
        })
        .collect();
    report::write_csv(
        &out.join("labels.csv"),
        &["idx", "j", "status", "witness_scale", "distance_sq", "kind"],
        &label_rows,
    )?;

    let floor = cfg.r / 4.0;
    let recs: Vec<(f64, &'static str)> = cloud
        .par_iter()
        .map(|x| {
            let rec = strata::regularity_scale(traj, x, cfg.big_r, floor);
            (rec.r_u, rec.binding.name())
        })
        .collect();
    let reg_rows: Vec<Vec<String>> = recs
        .iter()
        .enumerate()
        .map(|(i, (ru, b))| vec![i.to_string(), fmt(*ru), b.to_string()])
        .collect();
    report::write_csv(&out.join("regularity.csv"), &["idx", "r_u", "binding"], &reg_rows)?;

    // finalize the manifest with the measured energy ceiling
    let (source, files, lambda1) = match traj {
        FlowTrajectory::Simulated(sim) => (
            "simulated",
            (0..sim.snapshots.len()).map(snapshot_name).collect(),
            sim.snapshots[0].dirichlet_energy(),
        ),
        FlowTrajectory::Analytic { .. } => ("analytic", Vec::new(), 0.0),
    };
    let manifest = Manifest {
        config: cfg.clone(),
        source,
        snapshot_files: files,
        lambda1,
        lambda2,
        window_cells: grid.w_cells,
        window_slices: grid.w_t,
    };
    report::write_json(&out.join("manifest.json"), &manifest)?;
    Ok(LabelSet { cloud, bits, labels, lambda2 })
}

#[derive(Debug, Serialize)]
struct CoveringReport {
    c0: f64,
    leaf_count: usize,
    max_bad_path: usize,
    good_counts: Vec<Vec<usize>>,
    bad_counts: Vec<Vec<usize>>,
}

#[derive(Debug, Serialize)]
struct VerifyReport {
    q_bound: usize,
    nonempty_classes: usize,
    class_bound: f64,
    stratum_points: usize,
    minkowski: Option<SlopeFit>,
    /// Theorem-1 comparison: measured slope vs predicted m + 2 - j.
    predicted_slope: Option<f64>,
}

/// Stage 3: quantitative-differentiation assertions, recursive covering,
/// Minkowski fit of the labeled stratum, reports and plots. Errors with an
/// invariant violation whenever an assertion-class bound fails.
pub fn cmd_verify(cfg: &RunConfig, out: &Path, labels: &LabelSet) -> Result<()> {
    cfg.validate()?;
    std::fs::create_dir_all(out)?;
    let classes = strata::decompose(&labels.bits, labels.lambda2)?;
    let qb = strata::q_bound(&cfg.scales, labels.lambda2);
    for b in &labels.bits {
        if b.k > qb {
            return Err(Error::Invariant(format!(
                "bit count K = {} exceeds the pigeonhole bound Q = {qb}",
                b.k
            )));
        }
    }
    let class_bound = (cfg.scales.beta as f64).powi(qb.min(500) as i32);
    if classes.len() as f64 > class_bound {
        return Err(Error::Invariant(format!(
            "{} nonempty classes exceed beta^Q = {class_bound}",
            classes.len()
        )));
    }

    // recursive covering over the cloud (depth limited by the bit ladder)
    let beta_max = cfg.scales.beta.min(3);
    let (roots, stats) =
        analysis::recursive_cover(&labels.cloud, &labels.bits, cfg.scales.gamma, beta_max, 0.0)?;
    for r in &roots {
        if !analysis::covers(r, &labels.cloud, 0.0) {
            return Err(Error::Invariant("cover tree misses a point".into()));
        }
    }
    report::write_json(
        &out.join("covering.json"),
        &CoveringReport {
            c0: stats.c0,
            leaf_count: stats.leaf_count,
            max_bad_path: stats.max_bad_path,
            good_counts: stats.good_counts.clone(),
            bad_counts: stats.bad_counts.clone(),
        },
    )?;

    // Minkowski fit over the top labeled stratum, when it is nonempty
    let j_top = cfg.j_list.iter().copied().max();
    let (mink, predicted) = match j_top {
        Some(j) => {
            let col = cfg.j_list.iter().position(|&jj| jj == j).unwrap();
            let pts: Vec<SpaceTimePoint> = labels
                .cloud
                .iter()
                .zip(&labels.labels)
                .filter(|(_, ls)| ls[col].is_member())
                .map(|(x, _)| x.clone())
                .collect();
            if pts.is_empty() {
                (None, None)
            } else {
                let fit = analysis::minkowski_fit(
                    &pts,
                    &cfg.radii,
                    cfg.m,
                    0.0,
                    (cfg.cloud.t_min - 1.0, cfg.cloud.t_max + 1.0),
                )?;
                report::write_loglog_svg(
                    &out.join("minkowski.svg"),
                    &fit,
                    &format!("Vol T_r(S^{j}) on the {} run", cfg.field.kind_name()),
                )?;
                let predicted = (cfg.m + 2 - j) as f64;
                (Some(fit), Some(predicted))
            }
        }
        None => (None, None),
    };
    report::write_json(
        &out.join("verify.json"),
        &VerifyReport {
            q_bound: qb,
            nonempty_classes: classes.len(),
            class_bound,
            stratum_points: labels
                .labels
                .iter()
                .filter(|ls| ls.iter().any(|l| l.is_member()))
                .count(),
            minkowski: mink,
            predicted_slope: predicted,
        },
    )?;
    Ok(())
}

/// simulate -> analyze -> verify with one config.
pub fn run_all(cfg: &RunConfig, out: &Path) -> Result<()> {
    let traj = cmd_simulate(cfg, out)?;
    let labels = cmd_analyze(cfg, out, &traj)?;
    cmd_verify(cfg, out, &labels)
}
