//! Experiment orchestration: dataset synthesis, solver runs, evaluation,
//! and parameter sweeps, all through self-describing directories.
//!
//! A dataset directory carries the resolved configuration, a metadata file
//! with per-artifact checksums, and every numeric artifact in the HMEG
//! binary format; a result directory records the method, its settings and
//! diagnostics, and the estimated sources. Everything needed to re-run an
//! experiment exactly is stored explicitly.

pub mod config;
pub mod metrics;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use rayon::prelude::*;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::baselines::{
    lambda_grid, select_lambda_gcv, solve_patch_only, ImagingError, TVOperator,
};
use crate::forward::{build_leadfield, make_helmet_array, ForwardError, LeadField};
use crate::geometry::{
    geodesic_dist_on_sphere, make_wrinkled_cortex, sphere_point, CorticalMesh, GeometryError,
};
use crate::io::{self, CsvTable, FormatError, HmegMatrix};
use crate::optimizer::{OptResult, OptimizerConfig};
use crate::solver::{solve_heterogeneous, CovarianceContext, SolverError};
use crate::source_model::{
    make_patch_source, sample_background, synthesize_data, NoiseModel, PatchParams, SourceVector,
    NAM_PER_MM2,
};

pub use config::{ConfigError, ExperimentConfig, Method, TvWeights};
pub use metrics::Metrics;

/// Version string recorded in every metadata and result file.
pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Forward(#[from] ForwardError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Optimizer(#[from] crate::optimizer::OptimizerError),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error("checksum mismatch for {0}; dataset corrupt or modified")]
    ChecksumMismatch(String),
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("invalid dataset or result: {0}")]
    BadData(String),
    #[error("result {result} was not produced from dataset {dataset}")]
    DatasetMismatch { dataset: String, result: String },
}

impl HarnessError {
    /// Process exit code classification: 3 for data problems, 4 for
    /// numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Io(_)
            | HarnessError::Format(_)
            | HarnessError::Config(_)
            | HarnessError::ChecksumMismatch(_)
            | HarnessError::MissingFile(_)
            | HarnessError::BadData(_)
            | HarnessError::DatasetMismatch { .. } => 3,
            HarnessError::Geometry(_)
            | HarnessError::Forward(_)
            | HarnessError::Solver(_)
            | HarnessError::Optimizer(_)
            | HarnessError::Imaging(_) => 4,
        }
    }
}

/// Size the global worker pool from `HETMEG_THREADS` (no-op when unset or
/// already initialized).
pub fn init_thread_pool_from_env() {
    if let Ok(v) = std::env::var("HETMEG_THREADS") {
        if let Ok(n) = v.trim().parse::<usize>() {
            if n >= 1 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    let out = h.finalize();
    out.iter().map(|b| format!("{b:02x}")).collect()
}

/// Minimal INI reader for metadata and result files.
fn parse_ini_map(text: &str) -> BTreeMap<String, BTreeMap<String, String>> {
    let mut map: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
    let mut section = String::new();
    for raw in text.lines() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            section = name.trim_end_matches(']').trim().to_string();
            continue;
        }
        if let Some((k, v)) = line.split_once('=') {
            map.entry(section.clone())
                .or_default()
                .insert(k.trim().to_string(), v.trim().to_string());
        }
    }
    map
}

fn ini_get<'a>(
    map: &'a BTreeMap<String, BTreeMap<String, String>>,
    section: &str,
    key: &str,
) -> Result<&'a str, HarnessError> {
    map.get(section)
        .and_then(|s| s.get(key))
        .map(|s| s.as_str())
        .ok_or_else(|| HarnessError::BadData(format!("missing [{section}] {key}")))
}

fn ini_f64(
    map: &BTreeMap<String, BTreeMap<String, String>>,
    section: &str,
    key: &str,
) -> Result<f64, HarnessError> {
    ini_get(map, section, key)?
        .parse()
        .map_err(|e| HarnessError::BadData(format!("bad [{section}] {key}: {e}")))
}

const DATASET_FILES: [&str; 8] = [
    "mesh.txt",
    "sensors.txt",
    "leadfield.hmeg",
    "jp_true.hmeg",
    "jb_true.hmeg",
    "field_patch.hmeg",
    "field_prenoise.hmeg",
    "data.hmeg",
];

/// Quantities fixed while generating a dataset.
#[derive(Debug, Clone, Copy)]
pub struct ResolvedNoise {
    /// Smearing width actually used, radians.
    pub eps: f64,
    /// Background std, A·m.
    pub sigma_b: f64,
    /// Sensor noise std, tesla.
    pub sigma_n: f64,
    pub mean_edge_arc: f64,
    pub mean_node_area: f64,
    pub prenoise_norm: f64,
}

/// Generate and persist a complete synthetic dataset. Deterministic:
/// identical configs produce byte-identical directories.
pub fn run_simulate(
    cfg: &ExperimentConfig,
    out_dir: &Path,
) -> Result<ResolvedNoise, HarnessError> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;

    let mesh = make_wrinkled_cortex(
        cfg.subdivisions,
        cfg.base_radius,
        cfg.wrinkle_amp,
        cfg.wrinkle_freq,
        cfg.geometry_seed,
    )?;
    let sensors = make_helmet_array(cfg.n_sensors, cfg.helmet_radius, cfg.cap_angle, mesh.center)?;
    let lf = build_leadfield(&mesh, &sensors)?;

    let eps = cfg.eps.unwrap_or(mesh.sphere.mean_edge_arc);
    let j0_si = cfg.j0_density_nam_mm2 * NAM_PER_MM2;
    let truth = PatchParams {
        theta0: cfg.theta0,
        phi0: cfg.phi0,
        r0: cfg.r0,
        j0_density: j0_si,
    };
    let sigma_b = cfg.sigma_b_ratio * j0_si * mesh.mean_node_area();
    let jp = make_patch_source(&mesh, &truth, eps);
    let jb = sample_background(
        mesh.n_nodes(),
        &NoiseModel {
            sigma_b,
            sigma_n: 0.0,
            seed: cfg.noise_seed,
        },
    );
    let prenoise_norm = (&lf.matrix * (&jp.moments + &jb.moments)).norm();
    let sigma_n = cfg.noise_ratio * prenoise_norm;
    let synth = synthesize_data(
        &lf,
        &jp,
        &jb,
        &NoiseModel {
            sigma_b,
            sigma_n,
            seed: cfg.noise_seed,
        },
    );

    let config_text = cfg.to_ini();
    std::fs::write(out_dir.join("config.resolved.ini"), &config_text)?;
    std::fs::write(out_dir.join("mesh.txt"), io::mesh_to_string(&mesh))?;
    std::fs::write(out_dir.join("sensors.txt"), io::sensors_to_string(&sensors))?;
    io::write_hmeg(
        &out_dir.join("leadfield.hmeg"),
        &HmegMatrix::from_matrix(&lf.matrix),
    )?;
    io::write_hmeg(&out_dir.join("jp_true.hmeg"), &HmegMatrix::from_vector(&jp.moments))?;
    io::write_hmeg(&out_dir.join("jb_true.hmeg"), &HmegMatrix::from_vector(&jb.moments))?;
    io::write_hmeg(
        &out_dir.join("field_patch.hmeg"),
        &HmegMatrix::from_vector(&synth.patch_field),
    )?;
    io::write_hmeg(
        &out_dir.join("field_prenoise.hmeg"),
        &HmegMatrix::from_vector(&synth.prenoise),
    )?;
    io::write_hmeg(&out_dir.join("data.hmeg"), &HmegMatrix::from_vector(&synth.data))?;

    let mut meta = String::new();
    meta.push_str("[dataset]\n");
    meta.push_str(&format!("code_version = {CODE_VERSION}\n"));
    meta.push_str(&format!("config_hash = {}\n", sha256_hex(config_text.as_bytes())));
    meta.push_str(&format!("m_nodes = {}\n", mesh.n_nodes()));
    meta.push_str(&format!("n_sensors = {}\n", sensors.len()));
    meta.push_str(&format!("n_edges = {}\n", mesh.sphere.edges().len()));
    meta.push_str("\n[resolved]\n");
    meta.push_str(&format!("eps = {eps}\n"));
    meta.push_str(&format!("sigma_b = {sigma_b}\n"));
    meta.push_str(&format!("sigma_n = {sigma_n}\n"));
    meta.push_str(&format!("mean_edge_arc = {}\n", mesh.sphere.mean_edge_arc));
    meta.push_str(&format!("mean_node_area = {}\n", mesh.mean_node_area()));
    meta.push_str(&format!("prenoise_norm = {prenoise_norm}\n"));
    meta.push_str("\n[checksums]\n");
    for file in DATASET_FILES {
        let bytes = std::fs::read(out_dir.join(file))?;
        meta.push_str(&format!("{file} = {}\n", sha256_hex(&bytes)));
    }
    std::fs::write(out_dir.join("metadata.ini"), meta)?;

    Ok(ResolvedNoise {
        eps,
        sigma_b,
        sigma_n,
        mean_edge_arc: mesh.sphere.mean_edge_arc,
        mean_node_area: mesh.mean_node_area(),
        prenoise_norm,
    })
}

/// A dataset loaded back from disk, checksum-verified.
pub struct Dataset {
    pub dir: PathBuf,
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub mesh: CorticalMesh,
    pub leadfield: LeadField,
    pub data: DVector<f64>,
    pub eps: f64,
    pub sigma_b: f64,
    pub sigma_n: f64,
}

impl Dataset {
    pub fn load(dir: &Path) -> Result<Self, HarnessError> {
        let meta_path = dir.join("metadata.ini");
        if !meta_path.exists() {
            return Err(HarnessError::MissingFile(meta_path));
        }
        let meta = parse_ini_map(&std::fs::read_to_string(&meta_path)?);
        for file in DATASET_FILES {
            let path = dir.join(file);
            if !path.exists() {
                return Err(HarnessError::MissingFile(path));
            }
            let expected = ini_get(&meta, "checksums", file)?;
            let actual = sha256_hex(&std::fs::read(&path)?);
            if actual != expected {
                return Err(HarnessError::ChecksumMismatch(file.to_string()));
            }
        }
        let config_text = std::fs::read_to_string(dir.join("config.resolved.ini"))?;
        let config_hash = sha256_hex(config_text.as_bytes());
        let recorded = ini_get(&meta, "dataset", "config_hash")?;
        if config_hash != recorded {
            return Err(HarnessError::ChecksumMismatch("config.resolved.ini".into()));
        }
        let config = ExperimentConfig::parse(&config_text)?;
        let mesh = io::parse_mesh_text(&std::fs::read_to_string(dir.join("mesh.txt"))?)?;
        let lf_mat = io::read_hmeg(&dir.join("leadfield.hmeg"))?;
        let data = io::read_hmeg(&dir.join("data.hmeg"))?.to_vector();
        let leadfield = LeadField {
            matrix: lf_mat.to_matrix(),
        };
        if leadfield.n_nodes() != mesh.n_nodes() || leadfield.n_sensors() != data.len() {
            return Err(HarnessError::BadData(format!(
                "inconsistent dims: leadfield {}x{}, mesh {}, data {}",
                leadfield.n_sensors(),
                leadfield.n_nodes(),
                mesh.n_nodes(),
                data.len()
            )));
        }
        Ok(Dataset {
            dir: dir.to_path_buf(),
            config,
            config_hash,
            mesh,
            leadfield,
            data,
            eps: ini_f64(&meta, "resolved", "eps")?,
            sigma_b: ini_f64(&meta, "resolved", "sigma_b")?,
            sigma_n: ini_f64(&meta, "resolved", "sigma_n")?,
        })
    }

    pub fn jb_true(&self) -> Result<SourceVector, HarnessError> {
        Ok(SourceVector {
            moments: io::read_hmeg(&self.dir.join("jb_true.hmeg"))?.to_vector(),
        })
    }

    pub fn truth(&self) -> PatchParams {
        PatchParams {
            theta0: self.config.theta0,
            phi0: self.config.phi0,
            r0: self.config.r0,
            j0_density: self.config.j0_density_nam_mm2 * NAM_PER_MM2,
        }
    }
}

fn write_trace_csv(path: &Path, opt: &OptResult) -> Result<(), HarnessError> {
    let mut table = CsvTable::new(&["eval_index", "f_best", "theta", "phi", "r"]);
    for t in &opt.trace {
        table.push_row(vec![
            format!("{}", t.eval),
            format!("{}", t.f_best),
            format!("{}", t.x_best[0]),
            format!("{}", t.x_best[1]),
            format!("{}", t.x_best[2]),
        ]);
    }
    table.write(path)?;
    Ok(())
}

fn overrides_line(overrides: &[(String, String)]) -> String {
    if overrides.is_empty() {
        "none".to_string()
    } else {
        overrides
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(";")
    }
}

/// Summary of one solver run, mirrored in `result.ini`.
#[derive(Debug, Clone)]
pub struct SolveSummary {
    pub method: Method,
    pub patch: Option<PatchParams>,
    pub wall_ms: u128,
}

/// Run one method on a dataset directory and persist the result.
/// Overrides are `section.key = value` pairs applied to the dataset's
/// resolved configuration (typically solver settings).
pub fn run_solve(
    data_dir: &Path,
    method: Method,
    overrides: &[(String, String)],
    out_dir: &Path,
) -> Result<SolveSummary, HarnessError> {
    let started = std::time::Instant::now();
    let ds = Dataset::load(data_dir)?;
    let mut cfg = ds.config.clone();
    for (k, v) in overrides {
        cfg.apply(k, v)?;
    }
    cfg.validate()?;
    let eps = cfg.eps.unwrap_or(ds.eps);
    let sigma_b = cfg.sigma_b.unwrap_or(ds.sigma_b);
    let sigma_n = cfg.sigma_n.unwrap_or(ds.sigma_n);
    let pbox = crate::solver::param_box(cfg.r_max)?;
    let opt_cfg = OptimizerConfig {
        max_evals: cfg.max_evals,
        min_diag: cfg.min_diag,
        balance_eps: cfg.balance_eps,
    };

    std::fs::create_dir_all(out_dir)?;
    let mut result = String::new();
    result.push_str("[result]\n");
    result.push_str(&format!("method = {}\n", method.as_str()));
    result.push_str(&format!("dataset_config_hash = {}\n", ds.config_hash));
    result.push_str(&format!("code_version = {CODE_VERSION}\n"));

    let mut patch_out = None;
    match method {
        Method::Hetero => {
            let ctx = CovarianceContext::new(&ds.leadfield, sigma_b, sigma_n)?;
            let sol = solve_heterogeneous(
                &ctx,
                &ds.mesh,
                &ds.data,
                &pbox,
                &opt_cfg,
                eps,
                cfg.polish_tol,
            )?;
            io::write_hmeg(
                &out_dir.join("jp_hat.hmeg"),
                &HmegMatrix::from_vector(&sol.jp_hat.moments),
            )?;
            io::write_hmeg(
                &out_dir.join("jb_hat.hmeg"),
                &HmegMatrix::from_vector(&sol.jb_hat.moments),
            )?;
            write_trace_csv(&out_dir.join("trace.csv"), &sol.opt)?;
            result.push_str("\n[patch]\n");
            result.push_str(&format!("theta0 = {}\n", sol.patch.theta0));
            result.push_str(&format!("phi0 = {}\n", sol.patch.phi0));
            result.push_str(&format!("r0 = {}\n", sol.patch.r0));
            result.push_str(&format!("j0_density = {}\n", sol.patch.j0_density));
            result.push_str("\n[diagnostics]\n");
            result.push_str(&format!("phi = {}\n", sol.phi_value));
            result.push_str(&format!("psi = {}\n", sol.psi_value));
            result.push_str(&format!("residual_norm = {}\n", sol.residual_norm));
            result.push_str(&format!("evals = {}\n", sol.opt.evals));
            patch_out = Some(sol.patch);
        }
        Method::Patch => {
            let ps = solve_patch_only(
                &ds.mesh,
                &ds.leadfield,
                &ds.data,
                sigma_n,
                &pbox,
                &opt_cfg,
                eps,
                cfg.polish_tol,
            )?;
            let jp = make_patch_source(&ds.mesh, &ps.params, eps);
            io::write_hmeg(
                &out_dir.join("jp_hat.hmeg"),
                &HmegMatrix::from_vector(&jp.moments),
            )?;
            write_trace_csv(&out_dir.join("trace.csv"), &ps.opt)?;
            result.push_str("\n[patch]\n");
            result.push_str(&format!("theta0 = {}\n", ps.params.theta0));
            result.push_str(&format!("phi0 = {}\n", ps.params.phi0));
            result.push_str(&format!("r0 = {}\n", ps.params.r0));
            result.push_str(&format!("j0_density = {}\n", ps.params.j0_density));
            result.push_str("\n[diagnostics]\n");
            result.push_str(&format!("phi = {}\n", ps.phi));
            result.push_str(&format!("evals = {}\n", ps.opt.evals));
            patch_out = Some(ps.params);
        }
        Method::Imaging => {
            let tv = match cfg.tv_weights {
                TvWeights::Combinatorial => TVOperator::combinatorial(&ds.mesh),
                TvWeights::Geometric => TVOperator::geometric(&ds.mesh),
            };
            let grid = lambda_grid(&ds.leadfield, &ds.data, cfg.n_lambdas);
            let path = select_lambda_gcv(
                &ds.leadfield,
                &ds.data,
                &tv,
                cfg.alpha,
                &grid,
                cfg.imaging_tol,
                cfg.imaging_max_iter,
            )?;
            let chosen = &path.solutions[path.chosen_index];
            io::write_hmeg(
                &out_dir.join("j_hat.hmeg"),
                &HmegMatrix::from_vector(&chosen.moments),
            )?;
            let mut table = CsvTable::new(&["lambda", "gcv", "df", "residual", "objective"]);
            for i in 0..path.lambdas.len() {
                table.push_row(vec![
                    format!("{}", path.lambdas[i]),
                    format!("{}", path.gcv_scores[i]),
                    format!("{}", path.df[i]),
                    format!("{}", path.residuals[i]),
                    format!("{}", path.objectives[i]),
                ]);
            }
            table.write(&out_dir.join("regpath.csv"))?;
            result.push_str("\n[diagnostics]\n");
            result.push_str(&format!("chosen_lambda = {}\n", path.lambdas[path.chosen_index]));
            result.push_str(&format!("chosen_index = {}\n", path.chosen_index));
            result.push_str(&format!("df = {}\n", path.df[path.chosen_index]));
            result.push_str(&format!("residual_norm = {}\n", path.residuals[path.chosen_index]));
            result.push_str(&format!("objective = {}\n", path.objectives[path.chosen_index]));
        }
    }

    result.push_str("\n[settings]\n");
    result.push_str(&format!("eps = {eps}\n"));
    result.push_str(&format!("sigma_b = {sigma_b}\n"));
    result.push_str(&format!("sigma_n = {sigma_n}\n"));
    result.push_str(&format!("r_max = {}\n", cfg.r_max));
    result.push_str(&format!("max_evals = {}\n", cfg.max_evals));
    result.push_str(&format!("min_diag = {}\n", cfg.min_diag));
    result.push_str(&format!("balance_eps = {}\n", cfg.balance_eps));
    result.push_str(&format!("polish_tol = {}\n", cfg.polish_tol));
    result.push_str(&format!("alpha = {}\n", cfg.alpha));
    result.push_str(&format!("n_lambdas = {}\n", cfg.n_lambdas));
    result.push_str(&format!("imaging_tol = {}\n", cfg.imaging_tol));
    result.push_str(&format!("imaging_max_iter = {}\n", cfg.imaging_max_iter));
    result.push_str("\n[overrides]\n");
    result.push_str(&format!("applied = {}\n", overrides_line(overrides)));
    std::fs::write(out_dir.join("result.ini"), result)?;

    let wall_ms = started.elapsed().as_millis();
    std::fs::write(out_dir.join("timing.txt"), format!("wall_ms = {wall_ms}\n"))?;
    Ok(SolveSummary {
        method,
        patch: patch_out,
        wall_ms,
    })
}

/// Evaluate a result directory against its dataset; optionally append a
/// row to a metrics CSV (header written on first use).
pub fn run_evaluate(
    data_dir: &Path,
    result_dir: &Path,
    csv_path: Option<&Path>,
) -> Result<(Method, Metrics), HarnessError> {
    let ds = Dataset::load(data_dir)?;
    let result_path = result_dir.join("result.ini");
    if !result_path.exists() {
        return Err(HarnessError::MissingFile(result_path));
    }
    let result = parse_ini_map(&std::fs::read_to_string(&result_path)?);
    let recorded_hash = ini_get(&result, "result", "dataset_config_hash")?;
    if recorded_hash != ds.config_hash {
        return Err(HarnessError::DatasetMismatch {
            dataset: data_dir.display().to_string(),
            result: result_dir.display().to_string(),
        });
    }
    let method = Method::parse(ini_get(&result, "result", "method")?)
        .map_err(|_| HarnessError::BadData("unknown method in result.ini".into()))?;

    let truth = ds.truth();
    let s0_true = truth.center();
    let true_set = metrics::patch_node_set(&ds.mesh, &s0_true, truth.r0);
    let jb_true = ds.jb_true()?;

    let m = match method {
        Method::Hetero | Method::Patch => {
            let theta = ini_f64(&result, "patch", "theta0")?;
            let phi = ini_f64(&result, "patch", "phi0")?;
            let r0 = ini_f64(&result, "patch", "r0")?;
            let j0 = ini_f64(&result, "patch", "j0_density")?;
            let s0_est = sphere_point(theta, phi);
            let est_set = metrics::patch_node_set(&ds.mesh, &s0_est, r0);
            let jp_hat = io::read_hmeg(&result_dir.join("jp_hat.hmeg"))?.to_vector();
            let (jb_hat, background_corr) = if method == Method::Hetero {
                let jb_hat = io::read_hmeg(&result_dir.join("jb_hat.hmeg"))?.to_vector();
                let corr = metrics::pearson(&jb_hat, &jb_true.moments);
                (jb_hat, corr)
            } else {
                (DVector::zeros(ds.mesh.n_nodes()), f64::NAN)
            };
            let model = &ds.leadfield.matrix * (&jp_hat + &jb_hat);
            let residual_rel = (&ds.data - model).norm() / ds.data.norm().max(f64::MIN_POSITIVE);
            Metrics {
                center_error: geodesic_dist_on_sphere(&s0_est, &s0_true),
                radius_error: (r0 - truth.r0).abs(),
                amplitude_rel_error: if truth.j0_density != 0.0 {
                    (j0 - truth.j0_density).abs() / truth.j0_density.abs()
                } else {
                    f64::NAN
                },
                dice: metrics::dice(&est_set, &true_set),
                background_corr,
                residual_rel,
            }
        }
        Method::Imaging => {
            let j_hat = io::read_hmeg(&result_dir.join("j_hat.hmeg"))?.to_vector();
            let est_set = metrics::imaging_node_set(&j_hat);
            let center_error = metrics::sphere_centroid(&ds.mesh, &est_set)
                .map(|c| geodesic_dist_on_sphere(&c, &s0_true))
                .unwrap_or(f64::NAN);
            let model = &ds.leadfield.matrix * &j_hat;
            let residual_rel = (&ds.data - model).norm() / ds.data.norm().max(f64::MIN_POSITIVE);
            Metrics {
                center_error,
                radius_error: f64::NAN,
                amplitude_rel_error: f64::NAN,
                dice: metrics::dice(&est_set, &true_set),
                background_corr: f64::NAN,
                residual_rel,
            }
        }
    };

    if let Some(path) = csv_path {
        append_metrics_csv(path, data_dir, result_dir, method, &m)?;
    }
    Ok((method, m))
}

fn dir_label(p: &Path) -> String {
    p.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| p.display().to_string())
}

fn metrics_csv_header() -> Vec<&'static str> {
    let mut h = vec!["dataset", "result", "method"];
    h.extend(Metrics::CSV_FIELDS);
    h
}

fn append_metrics_csv(
    path: &Path,
    data_dir: &Path,
    result_dir: &Path,
    method: Method,
    m: &Metrics,
) -> Result<(), HarnessError> {
    let mut table = if path.exists() {
        CsvTable::read(path)?
    } else {
        CsvTable::new(&metrics_csv_header())
    };
    let mut row = vec![
        dir_label(data_dir),
        dir_label(result_dir),
        method.as_str().to_string(),
    ];
    row.extend(m.csv_values());
    table.push_row(row);
    table.write(path)?;
    Ok(())
}

/// Linear-interpolation quantile of pre-filtered finite values.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

/// One sweep cell result row.
struct SweepRow {
    value: String,
    seed: u64,
    method: Method,
    metrics: Metrics,
}

/// Full factorial sweep over one config key: every value x seed cell is
/// simulated once and solved with every enabled method. Cells run on the
/// worker pool; outputs land in per-cell directories plus `rows.csv` and
/// a median/IQR `summary.csv`.
pub fn run_sweep(
    base: &ExperimentConfig,
    sweep_key: &str,
    values: &[String],
    n_seeds: u64,
    out_dir: &Path,
) -> Result<(), HarnessError> {
    if values.is_empty() || n_seeds == 0 {
        return Err(HarnessError::BadData("sweep needs values and seeds".into()));
    }
    // Validate the key early.
    {
        let mut probe = base.clone();
        probe.apply(sweep_key, &values[0])?;
    }
    std::fs::create_dir_all(out_dir)?;

    let cells: Vec<(usize, u64)> = values
        .iter()
        .enumerate()
        .flat_map(|(vi, _)| (0..n_seeds).map(move |s| (vi, s)))
        .collect();

    let cell_rows: Vec<Result<Vec<SweepRow>, HarnessError>> = cells
        .par_iter()
        .map(|&(vi, seed_offset)| {
            let value = &values[vi];
            let mut cfg = base.clone();
            cfg.apply(sweep_key, value)?;
            cfg.noise_seed = base.noise_seed + seed_offset;
            let cell_dir = out_dir.join(format!("v{vi}_s{seed_offset}"));
            let data_dir = cell_dir.join("dataset");
            run_simulate(&cfg, &data_dir)?;
            let mut rows = Vec::new();
            for &method in &cfg.methods {
                let result_dir = cell_dir.join(method.as_str());
                run_solve(&data_dir, method, &[], &result_dir)?;
                let (_, m) = run_evaluate(&data_dir, &result_dir, None)?;
                rows.push(SweepRow {
                    value: value.clone(),
                    seed: cfg.noise_seed,
                    method,
                    metrics: m,
                });
            }
            Ok(rows)
        })
        .collect();

    let mut header = vec!["sweep_key", "sweep_value", "seed", "method"];
    header.extend(Metrics::CSV_FIELDS);
    let mut rows_table = CsvTable::new(&header);
    let mut grouped: BTreeMap<(usize, &'static str), Vec<Metrics>> = BTreeMap::new();
    for (cell_idx, rows) in cell_rows.into_iter().enumerate() {
        let rows = rows?;
        let (vi, _) = cells[cell_idx];
        for r in rows {
            let mut row = vec![
                sweep_key.to_string(),
                r.value.clone(),
                format!("{}", r.seed),
                r.method.as_str().to_string(),
            ];
            row.extend(r.metrics.csv_values());
            rows_table.push_row(row);
            grouped.entry((vi, r.method.as_str())).or_default().push(r.metrics);
        }
    }
    rows_table.write(&out_dir.join("rows.csv"))?;

    let mut summary = CsvTable::new(&[
        "sweep_key",
        "sweep_value",
        "method",
        "metric",
        "median",
        "q25",
        "q75",
    ]);
    for ((vi, method), ms) in &grouped {
        for (fi, field) in Metrics::CSV_FIELDS.iter().enumerate() {
            let mut vals: Vec<f64> = ms
                .iter()
                .map(|m| match fi {
                    0 => m.center_error,
                    1 => m.radius_error,
                    2 => m.amplitude_rel_error,
                    3 => m.dice,
                    4 => m.background_corr,
                    _ => m.residual_rel,
                })
                .filter(|v| v.is_finite())
                .collect();
            vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
            summary.push_row(vec![
                sweep_key.to_string(),
                values[*vi].clone(),
                method.to_string(),
                field.to_string(),
                format!("{}", quantile(&vals, 0.5)),
                format!("{}", quantile(&vals, 0.25)),
                format!("{}", quantile(&vals, 0.75)),
            ]);
        }
    }
    summary.write(&out_dir.join("summary.csv"))?;
    Ok(())
}
