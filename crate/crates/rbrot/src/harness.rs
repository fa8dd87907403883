//! Run orchestration: configured limit and primitive runs, parallel
//! epsilon sweeps, comparison of stored runs, output management, and
//! reproducibility manifests.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{serialize_config, RunConfig};
use crate::diagnostics::{
    interp_lifted, lift_limit_state, relative_energy, sweep_report, DiagnosticsRecord, LiftedState,
    SweepReport,
};
use crate::error::{Error, Result};
use crate::field::{BoundaryFn, ScalarField};
use crate::grid::{Geometry, GridSpec};
use crate::limit::{self, LimitState};
use crate::ops;
use crate::poisson::harmonic_extension;
use crate::primitive::{self, PrimitiveParams, PrimitiveState};
use crate::snapshot::{read_snapshot, write_snapshot};
use crate::thermo::{identity_suite, verify_gibbs, EosSpec};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SnapshotEntry {
    pub t: f64,
    pub file: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MemberStatus {
    pub eps: f64,
    pub dir: String,
    pub status: String,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridInfo {
    pub geometry: String,
    pub r: f64,
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

impl GridInfo {
    fn from_spec(g: &GridSpec) -> Self {
        GridInfo {
            geometry: match g.geometry {
                Geometry::Box => "box".into(),
                Geometry::Slab => "slab".into(),
            },
            r: g.r,
            nx: g.nx,
            ny: g.ny,
            nz: g.nz,
        }
    }

    fn matches(&self, other: &GridInfo) -> bool {
        self.geometry == other.geometry
            && self.r == other.r
            && self.nx == other.nx
            && self.ny == other.ny
            && self.nz == other.nz
    }
}

/// Reproducibility manifest written next to every run's outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub kind: String,
    pub version: String,
    pub config_hash: String,
    /// Canonical serialization of the configuration that produced the run.
    pub config_toml: String,
    pub status: String,
    pub error: Option<String>,
    pub eps: Option<f64>,
    pub grid: GridInfo,
    pub snapshots: Vec<SnapshotEntry>,
    pub members: Vec<MemberStatus>,
    pub files: Vec<FileEntry>,
}

impl RunManifest {
    fn new(kind: &str, cfg: &RunConfig, grid: &GridSpec) -> Result<Self> {
        let config_toml = serialize_config(cfg)?;
        Ok(RunManifest {
            kind: kind.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config_hash: sha256_hex(config_toml.as_bytes()),
            config_toml,
            status: "ok".into(),
            error: None,
            eps: None,
            grid: GridInfo::from_spec(grid),
            snapshots: Vec::new(),
            members: Vec::new(),
            files: Vec::new(),
        })
    }

    pub fn load(path: &Path) -> Result<RunManifest> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("bad manifest {}: {e}", path.display())))
    }

    fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Config(format!("manifest serialization: {e}")))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn config(&self) -> Result<RunConfig> {
        crate::config::parse_config(&self.config_toml)
    }
}

pub fn sha256_hex(data: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(data);
    let digest = h.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

fn write_tracked(files: &mut Vec<FileEntry>, dir: &Path, rel: &str, data: &[u8]) -> Result<()> {
    let path = dir.join(rel);
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut f = std::fs::File::create(&path)?;
    f.write_all(data)?;
    files.push(FileEntry {
        path: rel.to_string(),
        bytes: data.len() as u64,
        sha256: sha256_hex(data),
    });
    Ok(())
}

fn track_existing(files: &mut Vec<FileEntry>, dir: &Path, rel: &str) -> Result<()> {
    let data = std::fs::read(dir.join(rel))?;
    files.push(FileEntry {
        path: rel.to_string(),
        bytes: data.len() as u64,
        sha256: sha256_hex(&data),
    });
    Ok(())
}

// ---------------------------------------------------------------------
// thermo-check
// ---------------------------------------------------------------------

/// Residual report of the thermodynamic verification suite, as plain
/// text and CSV.
pub fn thermo_check(cfg: &RunConfig) -> Result<(String, String)> {
    let eos = cfg.eos_spec()?;
    let bg = eos.coefficients(cfg.background.rho_bar, cfg.background.theta_bar)?;
    let ids = identity_suite(&eos, &bg)?;
    let gibbs = verify_gibbs(&eos, (0.5, 2.0), (0.5, 2.0))?;
    let structure = eos.structure_report();

    let mut text = String::new();
    text.push_str(&format!(
        "thermo-check for gas_law = {} at (rho, theta) = ({}, {})\n",
        cfg.eos.gas_law, bg.rho_bar, bg.theta_bar
    ));
    text.push_str(&format!(
        "coefficients: alpha = {:.12}, c_p = {:.12}, c_v = {:.12}, lambda = {:.12}\n",
        bg.alpha, bg.c_p, bg.c_v, bg.lambda
    ));
    text.push_str(&format!("identity residuals:\n"));
    text.push_str(&format!("  maxwell               {:.3e}\n", ids.maxwell));
    text.push_str(&format!("  lambda definition     {:.3e}\n", ids.lambda_def));
    text.push_str(&format!("  lambda/(1-lambda)     {:.3e}\n", ids.ts5a));
    text.push_str(&format!("  vanishing combination {:.3e}\n", ids.vanishing_combination));
    text.push_str(&format!("  kappa combination     {:.3e}\n", ids.kappa_combination));
    text.push_str(&format!("gibbs residual on [0.5,2]^2: {:.3e}\n", gibbs));
    text.push_str(&format!(
        "specific-heat combination max (sampled): {:.6e}\n",
        structure.max_specific_heat
    ));
    text.push_str(&format!(
        "min P(Z)/Z for Z >= 1 (sampled): {:.6e}\n",
        structure.min_p_over_z_beyond_1
    ));
    text.push_str(&format!(
        "third law (entropy normalizable at infinity): {}\n",
        if structure.third_law_satisfied { "satisfied" } else { "VIOLATED (offset anchored at Z = 1)" }
    ));

    let mut csv = String::from("check,value\n");
    csv.push_str(&format!("maxwell,{:.12e}\n", ids.maxwell));
    csv.push_str(&format!("lambda_def,{:.12e}\n", ids.lambda_def));
    csv.push_str(&format!("ts5a,{:.12e}\n", ids.ts5a));
    csv.push_str(&format!("vanishing_combination,{:.12e}\n", ids.vanishing_combination));
    csv.push_str(&format!("kappa_combination,{:.12e}\n", ids.kappa_combination));
    csv.push_str(&format!("gibbs_residual,{:.12e}\n", gibbs));
    csv.push_str(&format!("alpha,{:.12e}\n", bg.alpha));
    csv.push_str(&format!("c_p,{:.12e}\n", bg.c_p));
    csv.push_str(&format!("c_v,{:.12e}\n", bg.c_v));
    csv.push_str(&format!("lambda,{:.12e}\n", bg.lambda));
    csv.push_str(&format!("max_specific_heat,{:.12e}\n", structure.max_specific_heat));
    csv.push_str(&format!("min_p_over_z,{:.12e}\n", structure.min_p_over_z_beyond_1));
    csv.push_str(&format!("third_law,{}\n", structure.third_law_satisfied));
    Ok((text, csv))
}

/// Run thermo-check and write the report files.
pub fn cmd_thermo_check(cfg: &RunConfig, outdir: &Path) -> Result<String> {
    let (text, csv) = thermo_check(cfg)?;
    std::fs::create_dir_all(outdir)?;
    let grid = cfg.grid_spec()?;
    let mut manifest = RunManifest::new("thermo-check", cfg, &grid)?;
    write_tracked(&mut manifest.files, outdir, "thermo_report.txt", text.as_bytes())?;
    write_tracked(&mut manifest.files, outdir, "thermo_report.csv", csv.as_bytes())?;
    manifest.save(&outdir.join("manifest.json"))?;
    Ok(text)
}

// ---------------------------------------------------------------------
// limit run
// ---------------------------------------------------------------------

/// Limit-system trajectory kept in memory for comparisons: cell-centered
/// (R, T, u_h) snapshots at every recorded time.
pub struct LimitTrajectory {
    pub grid: GridSpec,
    pub times: Vec<f64>,
    pub r_dev: Vec<Vec<f64>>,
    pub t_dev: Vec<Vec<f64>>,
    pub uh1_c: Vec<Vec<f64>>,
    pub uh2_c: Vec<Vec<f64>>,
}

impl LimitTrajectory {
    fn push(&mut self, state: &LimitState) {
        let g = self.grid;
        let (uc, vc) = primitive::mac_to_centers(&state.uh, &g);
        // broadcast the 2D center velocities to 3D
        let n = g.cell_count();
        let mut u1 = vec![0.0; n];
        let mut u2 = vec![0.0; n];
        for k in 0..g.nz {
            for j in 0..g.ny {
                for i in 0..g.nx {
                    let idx = g.idx(i, j, k);
                    u1[idx] = uc[i + g.nx * j];
                    u2[idx] = vc[i + g.nx * j];
                }
            }
        }
        self.times.push(state.t);
        self.r_dev.push(state.r_dev.values.clone());
        self.t_dev.push(state.t_dev.values.clone());
        self.uh1_c.push(u1);
        self.uh2_c.push(u2);
    }

    /// Lifted comparison state at arbitrary time by linear interpolation.
    pub fn lifted_at(&self, t: f64, eps: f64, bg: &crate::thermo::BackgroundState) -> Result<LiftedState> {
        if self.times.is_empty() {
            return Err(Error::Domain("empty limit trajectory".into()));
        }
        let pos = self.times.partition_point(|v| *v <= t);
        let (ia, ib) = if pos == 0 {
            (0, 0)
        } else if pos >= self.times.len() {
            (self.times.len() - 1, self.times.len() - 1)
        } else {
            (pos - 1, pos)
        };
        let build = |i: usize| -> Result<LiftedState> {
            let n = self.grid.cell_count();
            let mut out = LiftedState {
                t: self.times[i],
                rho: vec![0.0; n],
                theta: vec![0.0; n],
                u: [self.uh1_c[i].clone(), self.uh2_c[i].clone(), vec![0.0; n]],
            };
            for idx in 0..n {
                out.rho[idx] = bg.rho_bar + eps * self.r_dev[i][idx];
                out.theta[idx] = bg.theta_bar + eps * self.t_dev[i][idx];
                if !(out.rho[idx] > 0.0) || !(out.theta[idx] > 0.0) {
                    return Err(Error::InvalidScaling(format!(
                        "lifted state not positive at eps = {eps}"
                    )));
                }
            }
            Ok(out)
        };
        let a = build(ia)?;
        if ia == ib {
            return Ok(a);
        }
        let b = build(ib)?;
        Ok(interp_lifted(&a, &b, t))
    }
}

pub struct LimitRunOutput {
    pub trajectory: LimitTrajectory,
    pub final_state: LimitState,
}

/// Integrate the limit system, recording every step into the trajectory
/// and (optionally) writing diagnostics and snapshots into `outdir`.
pub fn run_limit(cfg: &RunConfig, outdir: Option<&Path>) -> Result<LimitRunOutput> {
    let params = cfg.limit_params()?;
    let g = params.grid;
    // shared initial data from the [initial] block: MAC-curl velocity
    // and the configured temperature deviation
    let u0 = cfg.initial_velocity()?;
    let t0 = cfg.initial_temperature()?;
    let mut state = limit::init_limit_from(&params, u0, move |x, y, z| t0(x, y, z))?;
    let mut traj = LimitTrajectory {
        grid: g,
        times: Vec::new(),
        r_dev: Vec::new(),
        t_dev: Vec::new(),
        uh1_c: Vec::new(),
        uh2_c: Vec::new(),
    };
    let mut csv = String::from("t,ke,xi,avg_t,div_l2\n");
    let mut manifest = match outdir {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            Some(RunManifest::new("limit", cfg, &g)?)
        }
        None => None,
    };
    let mut snapshots = Vec::new();
    let nsteps = (params.t_final / params.dt).round() as usize;
    let cadence = cfg.numerics.snapshot_every.max(1);
    for step_idx in 0..=nsteps {
        traj.push(&state);
        let xi = limit::compute_xi(&state.t_dev, &params.background, &params.eos)?;
        let ke = limit::kinetic_energy(&state.uh, &g, params.background.rho_bar);
        let avg_t = ops::domain_average(&state.t_dev);
        let div = limit::divergence_l2(&state.uh, &g);
        csv.push_str(&format!(
            "{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}\n",
            state.t, ke, xi, avg_t, div
        ));
        if let (Some(dir), true) = (outdir, step_idx % cadence == 0 || step_idx == nsteps) {
            let rel = format!("snap_{step_idx:06}.rbrot");
            let n = traj.times.len() - 1;
            write_snapshot(
                &dir.join(&rel),
                &g,
                &[
                    ("r_dev", &traj.r_dev[n]),
                    ("t_dev", &traj.t_dev[n]),
                    ("uh1_c", &traj.uh1_c[n]),
                    ("uh2_c", &traj.uh2_c[n]),
                ],
            )?;
            snapshots.push(SnapshotEntry { t: state.t, file: rel });
        }
        if step_idx < nsteps {
            limit::step(&mut state, &params)?;
        }
    }
    if let (Some(dir), Some(m)) = (outdir, manifest.as_mut()) {
        write_tracked(&mut m.files, dir, "diagnostics.csv", csv.as_bytes())?;
        for s in &snapshots {
            track_existing(&mut m.files, dir, &s.file)?;
        }
        m.snapshots = snapshots;
        m.save(&dir.join("manifest.json"))?;
    }
    Ok(LimitRunOutput { trajectory: traj, final_state: state })
}

// ---------------------------------------------------------------------
// primitive run
// ---------------------------------------------------------------------

fn harmonic_wall_temperature(
    grid: GridSpec,
    bg_theta: f64,
    eps: f64,
    theta_b: &BoundaryFn,
) -> Result<ScalarField> {
    let f = theta_b.clone();
    let data: BoundaryFn = Arc::new(move |x, y, z| bg_theta + eps * f(x, y, z));
    let faces: [BoundaryFn; 6] = [
        data.clone(),
        data.clone(),
        data.clone(),
        data.clone(),
        data.clone(),
        data,
    ];
    harmonic_extension(grid, &faces)
}

pub struct PrimitiveRunOutput {
    pub records: Vec<DiagnosticsRecord>,
    pub final_state: PrimitiveState,
}

/// Integrate the primitive system at one eps. When a limit trajectory is
/// given, every record carries the relative energy against its lifted
/// interpolant. Outputs go to `outdir` when given.
pub fn run_primitive(
    cfg: &RunConfig,
    eps: f64,
    limit_traj: Option<&LimitTrajectory>,
    outdir: Option<&Path>,
) -> Result<PrimitiveRunOutput> {
    let params = cfg.primitive_params(eps)?;
    let g = params.grid;
    let u0 = cfg.initial_velocity()?;
    let (uc, vc) = primitive::mac_to_centers(&u0, &g);
    let t0 = cfg.initial_temperature()?;
    let state0 = primitive::well_prepared_init(
        &params,
        move |x, y, z| t0(x, y, z),
        move |x, y| {
            // nearest cell center lookup for the shared MAC data
            let i = (((x + g.r) / g.dx() - 0.5).round() as isize).clamp(0, g.nx as isize - 1) as usize;
            let j = if g.is_slab() {
                0
            } else {
                (((y + g.r) / g.dy() - 0.5).round() as isize).clamp(0, g.ny as isize - 1) as usize
            };
            (uc[i + g.nx * j], vc[i + g.nx * j])
        },
    )?;
    run_primitive_from(cfg, params, state0, limit_traj, outdir)
}

/// Same as [`run_primitive`] but from caller-provided initial data.
pub fn run_primitive_from(
    cfg: &RunConfig,
    params: PrimitiveParams,
    state0: PrimitiveState,
    limit_traj: Option<&LimitTrajectory>,
    outdir: Option<&Path>,
) -> Result<PrimitiveRunOutput> {
    let g = params.grid;
    let eps = params.eps;
    let theta_b_tilde =
        harmonic_wall_temperature(g, params.background.theta_bar, eps, &params.theta_boundary)?;
    let mass0 = state0.total_mass();
    let mut records: Vec<DiagnosticsRecord> = Vec::new();
    let mut csv = String::from(DiagnosticsRecord::CSV_HEADER.to_string() + "\n");
    let mut snapshots = Vec::new();
    let mut manifest = match outdir {
        Some(_) => {
            let mut m = RunManifest::new("primitive", cfg, &g)?;
            m.eps = Some(eps);
            Some(m)
        }
        None => None,
    };
    if let Some(dir) = outdir {
        std::fs::create_dir_all(dir)?;
    }
    let mut snap_index = 0usize;
    let bg = params.background;
    let eos = params.eos.clone();
    let final_state = primitive::run(&params, state0, cfg.numerics.snapshot_every, |state| {
        let lifted = match limit_traj {
            Some(traj) => Some(traj.lifted_at(state.t, eps, &bg)?),
            None => None,
        };
        let rec = DiagnosticsRecord::compute(
            state,
            lifted.as_ref(),
            eps,
            &bg,
            &eos,
            &theta_b_tilde,
            mass0,
        )?;
        csv.push_str(&rec.csv_row());
        csv.push('\n');
        records.push(rec);
        if let Some(dir) = outdir {
            let rel = format!("snap_{snap_index:06}.rbrot");
            write_snapshot(
                &dir.join(&rel),
                &g,
                &[
                    ("rho", &state.rho),
                    ("m1", &state.mom[0]),
                    ("m2", &state.mom[1]),
                    ("m3", &state.mom[2]),
                    ("e_int", &state.e_int),
                    ("theta", &state.theta),
                ],
            )?;
            snapshots.push(SnapshotEntry { t: state.t, file: rel });
            snap_index += 1;
        }
        Ok(())
    })?;
    if let (Some(dir), Some(m)) = (outdir, manifest.as_mut()) {
        write_tracked(&mut m.files, dir, "diagnostics.csv", csv.as_bytes())?;
        for s in &snapshots {
            track_existing(&mut m.files, dir, &s.file)?;
        }
        m.snapshots = snapshots;
        m.save(&dir.join("manifest.json"))?;
    }
    Ok(PrimitiveRunOutput { records, final_state })
}

// ---------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------

pub struct SweepOutput {
    pub report: SweepReport,
    pub per_eps: Vec<(f64, Vec<DiagnosticsRecord>)>,
}

/// Execute the full experiment: one limit run, one primitive run per
/// eps (in parallel), then the convergence report. All outputs and a
/// manifest land in `outdir` when given.
pub fn run_sweep(cfg: &RunConfig, outdir: Option<&Path>) -> Result<SweepOutput> {
    cfg.validate()?;
    let grid = cfg.grid_spec()?;
    let mut manifest = RunManifest::new("sweep", cfg, &grid)?;
    if let Some(dir) = outdir {
        std::fs::create_dir_all(dir)?;
    }

    let limit_dir = outdir.map(|d| d.join("limit"));
    let limit_out = run_limit(cfg, limit_dir.as_deref())?;
    let traj = Arc::new(limit_out.trajectory);

    let eps_list = cfg.sweep.eps.clone();
    let mut member_results: Vec<Option<std::result::Result<Vec<DiagnosticsRecord>, String>>> =
        (0..eps_list.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for (i, &eps) in eps_list.iter().enumerate() {
            let traj = Arc::clone(&traj);
            let member_dir = outdir.map(|d| d.join(format!("eps_{eps:.6}")));
            let cfg_ref = &*cfg;
            handles.push((
                i,
                scope.spawn(move || {
                    run_primitive(cfg_ref, eps, Some(&traj), member_dir.as_deref())
                        .map(|out| out.records)
                        .map_err(|e| e.to_string())
                }),
            ));
        }
        for (i, h) in handles {
            member_results[i] = Some(h.join().expect("sweep worker panicked"));
        }
    });

    let mut per_eps = Vec::new();
    let mut failed = false;
    for (i, &eps) in eps_list.iter().enumerate() {
        let dir_name = format!("eps_{eps:.6}");
        match member_results[i].take().unwrap() {
            Ok(records) => {
                manifest.members.push(MemberStatus {
                    eps,
                    dir: dir_name,
                    status: "ok".into(),
                    error: None,
                });
                per_eps.push((eps, records));
            }
            Err(msg) => {
                failed = true;
                manifest.members.push(MemberStatus {
                    eps,
                    dir: dir_name,
                    status: "failed".into(),
                    error: Some(msg),
                });
            }
        }
    }

    if failed {
        manifest.status = "failed".into();
        manifest.error = Some("one or more sweep members failed".into());
        if let Some(dir) = outdir {
            manifest.save(&dir.join("manifest.json"))?;
        }
        return Err(Error::SolverDiverged("sweep member failed; see manifest".into()));
    }

    let report = sweep_report(&per_eps)?;
    if let Some(dir) = outdir {
        write_tracked(&mut manifest.files, dir, "sweep.csv", report.to_csv().as_bytes())?;
        write_tracked(&mut manifest.files, dir, "sweep.txt", report.to_string().as_bytes())?;
        // absorb member files into the top-level manifest listing
        for m in &manifest.members {
            let member_manifest = RunManifest::load(&dir.join(&m.dir).join("manifest.json"))?;
            for f in member_manifest.files {
                track_existing(&mut manifest.files, dir, &format!("{}/{}", m.dir, f.path))?;
            }
        }
        if limit_dir.is_some() {
            let lm = RunManifest::load(&dir.join("limit").join("manifest.json"))?;
            for f in lm.files {
                track_existing(&mut manifest.files, dir, &format!("limit/{}", f.path))?;
            }
        }
        manifest.save(&dir.join("manifest.json"))?;
    }
    Ok(SweepOutput { report, per_eps })
}

// ---------------------------------------------------------------------
// compare
// ---------------------------------------------------------------------

/// Compare a stored primitive run against a stored limit run: for every
/// primitive snapshot, evaluate the relative energy against the
/// time-interpolated lifted limit state; emit the diagnostics CSV.
pub fn compare_runs(prim_manifest_path: &Path, limit_manifest_path: &Path) -> Result<String> {
    let prim_m = RunManifest::load(prim_manifest_path)?;
    let limit_m = RunManifest::load(limit_manifest_path)?;
    if prim_m.kind != "primitive" {
        return Err(Error::Config(format!(
            "{} is a {} manifest, expected primitive",
            prim_manifest_path.display(),
            prim_m.kind
        )));
    }
    if limit_m.kind != "limit" {
        return Err(Error::Config(format!(
            "{} is a {} manifest, expected limit",
            limit_manifest_path.display(),
            limit_m.kind
        )));
    }
    if !prim_m.grid.matches(&limit_m.grid) {
        return Err(Error::GridMismatch(format!(
            "primitive grid {:?} != limit grid {:?}",
            prim_m.grid, limit_m.grid
        )));
    }
    let eps = prim_m
        .eps
        .ok_or_else(|| Error::Config("primitive manifest lacks eps".into()))?;
    let cfg = prim_m.config()?;
    let eos = cfg.eos_spec()?;
    let bg = eos.coefficients(cfg.background.rho_bar, cfg.background.theta_bar)?;
    let grid = cfg.grid_spec()?;
    let theta_b = cfg.theta_boundary()?;
    let theta_b_tilde = harmonic_wall_temperature(grid, bg.theta_bar, eps, &theta_b)?;

    // load the limit trajectory
    let limit_dir = limit_manifest_path.parent().unwrap_or(Path::new("."));
    let mut traj = LimitTrajectory {
        grid,
        times: Vec::new(),
        r_dev: Vec::new(),
        t_dev: Vec::new(),
        uh1_c: Vec::new(),
        uh2_c: Vec::new(),
    };
    for entry in &limit_m.snapshots {
        let snap = read_snapshot(&limit_dir.join(&entry.file))?;
        let need = |name: &str| -> Result<Vec<f64>> {
            snap.field(name)
                .map(|s| s.to_vec())
                .ok_or_else(|| Error::Config(format!("limit snapshot lacks field {name}")))
        };
        traj.times.push(entry.t);
        traj.r_dev.push(need("r_dev")?);
        traj.t_dev.push(need("t_dev")?);
        traj.uh1_c.push(need("uh1_c")?);
        traj.uh2_c.push(need("uh2_c")?);
    }
    if traj.times.is_empty() {
        return Err(Error::Config("limit manifest lists no snapshots".into()));
    }

    let prim_dir = prim_manifest_path.parent().unwrap_or(Path::new("."));
    let mut csv = String::from(DiagnosticsRecord::CSV_HEADER.to_string() + "\n");
    let mut mass0 = None;
    for entry in &prim_m.snapshots {
        let snap = read_snapshot(&prim_dir.join(&entry.file))?;
        let need = |name: &str| -> Result<Vec<f64>> {
            snap.field(name)
                .map(|s| s.to_vec())
                .ok_or_else(|| Error::Config(format!("primitive snapshot lacks field {name}")))
        };
        let state = PrimitiveState {
            grid,
            rho: need("rho")?,
            mom: [need("m1")?, need("m2")?, need("m3")?],
            e_int: need("e_int")?,
            theta: need("theta")?,
            t: entry.t,
        };
        let m0 = *mass0.get_or_insert_with(|| state.total_mass());
        let lifted = traj.lifted_at(state.t, eps, &bg)?;
        let rec = DiagnosticsRecord::compute(&state, Some(&lifted), eps, &bg, &eos, &theta_b_tilde, m0)?;
        csv.push_str(&rec.csv_row());
        csv.push('\n');
    }
    Ok(csv)
}

/// Direct in-memory relative energy between final states; used by the
/// examples and tests.
pub fn final_relative_energy(
    prim: &PrimitiveState,
    limit_state: &LimitState,
    eps: f64,
    bg: &crate::thermo::BackgroundState,
    eos: &EosSpec,
) -> Result<f64> {
    let lifted = lift_limit_state(limit_state, eps, bg)?;
    relative_energy(prim, &lifted, eps, eos)
}
