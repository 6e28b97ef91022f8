//! TOML run configuration: schema, loading, and resolution into engine
//! types. The normative key list lives in docs/config.md. Relative paths
//! are resolved against the config file's directory.

use crate::CliError;
use neuroloom_core::connectome::{build_sparse, load_connectome_with_warnings, Connectome, SparseCoupling};
use neuroloom_core::cosim::{CosimConfig, Direction, LifConfig, TransportKind};
use neuroloom_core::engine::{
    Backend, InitPolicy, Integrator, Kernel, MonitorKind, MonitorSource, MonitorSpec,
    ParamBindings, ParamValue, SimConfig,
};
use serde::Deserialize;
use std::path::{Path, PathBuf};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub model: ModelSection,
    pub connectome: ConnectomeSection,
    pub sim: SimSection,
    #[serde(default)]
    pub monitor: Vec<MonitorSection>,
    #[serde(default)]
    pub params: toml::Table,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub cosim: Option<CosimSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub name: Option<String>,
    pub path: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConnectomeSection {
    pub zip: PathBuf,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub dt: f64,
    pub n_steps: u64,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_integrator")]
    pub integrator: String,
    #[serde(default)]
    pub global_coupling: f64,
    #[serde(default = "default_speed")]
    pub conduction_speed: f64,
    #[serde(default)]
    pub weight_threshold: f64,
    #[serde(default)]
    pub noise_sigma: Option<NoiseSigma>,
    #[serde(default)]
    pub init: Option<InitSection>,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default = "default_backend")]
    pub backend: String,
}

/// Out-of-box runs stay reproducible: the default seed is a fixed
/// constant, never time-derived.
fn default_seed() -> u64 {
    42
}

fn default_integrator() -> String {
    "heun".into()
}

fn default_speed() -> f64 {
    3.0
}

fn default_workers() -> usize {
    1
}

fn default_backend() -> String {
    "auto".into()
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum NoiseSigma {
    Scalar(f64),
    PerVariable(Vec<f64>),
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum InitSection {
    Policy(String),
    Matrix { file: PathBuf },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonitorSection {
    pub kind: String,
    #[serde(default = "default_stride")]
    pub stride: usize,
    #[serde(default)]
    pub exposure: usize,
}

fn default_stride() -> usize {
    1
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
    #[serde(default = "default_format")]
    pub format: String,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: None,
            format: default_format(),
        }
    }
}

fn default_format() -> String {
    "csv".into()
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CosimSection {
    pub proxy_regions: Vec<usize>,
    #[serde(default)]
    pub window_steps: Option<usize>,
    #[serde(default = "default_direction")]
    pub direction: String,
    #[serde(default = "default_trains")]
    pub n_spike_trains: usize,
    #[serde(default)]
    pub smoothing_tau: f64,
    #[serde(default = "default_gain")]
    pub rate_gain: f64,
    #[serde(default)]
    pub rate_offset: f64,
    #[serde(default = "default_cosim_seed")]
    pub seed: u64,
    #[serde(default = "default_transport")]
    pub transport: String,
    #[serde(default = "default_port")]
    pub port: u16,
    pub micro: MicroSection,
}

fn default_direction() -> String {
    "bidirectional".into()
}

fn default_trains() -> usize {
    10
}

fn default_gain() -> f64 {
    1.0
}

fn default_cosim_seed() -> u64 {
    7
}

fn default_transport() -> String {
    "inprocess".into()
}

fn default_port() -> u16 {
    47000
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MicroSection {
    pub n_neurons: usize,
    #[serde(default = "default_tau_m")]
    pub tau_m: f64,
    #[serde(default)]
    pub v_rest: f64,
    #[serde(default = "default_v_thresh")]
    pub v_thresh: f64,
    #[serde(default)]
    pub v_reset: f64,
    #[serde(default = "default_refractory")]
    pub refractory_ms: f64,
    #[serde(default = "default_conn_prob")]
    pub conn_prob: f64,
    #[serde(default = "default_w_internal")]
    pub w_internal: f64,
    #[serde(default = "default_w_external")]
    pub w_external: f64,
    #[serde(default = "default_micro_seed")]
    pub seed: u64,
}

fn default_tau_m() -> f64 {
    20.0
}

fn default_v_thresh() -> f64 {
    1.0
}

fn default_refractory() -> f64 {
    2.0
}

fn default_conn_prob() -> f64 {
    0.05
}

fn default_w_internal() -> f64 {
    0.02
}

fn default_w_external() -> f64 {
    0.15
}

fn default_micro_seed() -> u64 {
    1
}

/// Everything a run needs, resolved and validated.
pub struct RunSetup {
    pub kernel: Kernel,
    pub connectome: Connectome,
    pub sparse: SparseCoupling,
    pub sim: SimConfig,
    pub bindings: ParamBindings,
    pub monitors: Vec<MonitorSpec>,
    pub weight_threshold: f64,
    pub out_dir: PathBuf,
    pub format: OutputFormat,
    pub labels: Vec<String>,
    pub warnings: Vec<String>,
    pub cosim: Option<ResolvedCosim>,
}

pub struct ResolvedCosim {
    pub cc: CosimConfig,
    pub lif: LifConfig,
    pub transport: TransportKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    F64Bin,
}

pub fn load_setup(config_path: &Path) -> Result<RunSetup, CliError> {
    let text =
        std::fs::read_to_string(config_path).map_err(|e| crate::read_file_err(config_path, e))?;
    let file: FileConfig = toml::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", config_path.display())))?;
    let base = config_path.parent().unwrap_or(Path::new("."));
    resolve(file, base)
}

fn resolve(file: FileConfig, base: &Path) -> Result<RunSetup, CliError> {
    let kernel = match (&file.model.name, &file.model.path) {
        (Some(name), None) => Kernel::builtin(name).map_err(|e| CliError::Config(e.to_string()))?,
        (None, Some(path)) => {
            let full = base.join(path);
            let xml =
                std::fs::read_to_string(&full).map_err(|e| crate::read_file_err(&full, e))?;
            Kernel::from_xml(&xml).map_err(|e| CliError::Config(format!("{}: {e}", full.display())))?
        }
        _ => {
            return Err(CliError::Config(
                "[model] needs exactly one of `name` or `path`".into(),
            ))
        }
    };

    let zip_path = base.join(&file.connectome.zip);
    let (connectome, warnings) =
        load_connectome_with_warnings(&zip_path).map_err(crate::map_connectome_err)?;

    let integrator = match file.sim.integrator.as_str() {
        "euler" => Integrator::EulerMaruyama,
        "heun" => Integrator::HeunStochastic,
        other => {
            return Err(CliError::Config(format!(
                "unknown integrator {other:?} (expected \"euler\" or \"heun\")"
            )))
        }
    };
    let backend = match file.sim.backend.as_str() {
        "auto" => Backend::Auto,
        "bytecode" => Backend::Bytecode,
        "native" => Backend::Native,
        other => {
            return Err(CliError::Config(format!(
                "unknown backend {other:?} (expected auto|bytecode|native)"
            )))
        }
    };
    let noise_sigma = match &file.sim.noise_sigma {
        None => None,
        Some(NoiseSigma::Scalar(v)) => Some(vec![*v]),
        Some(NoiseSigma::PerVariable(v)) => Some(v.clone()),
    };
    let init = match &file.sim.init {
        None => InitPolicy::UniformInRange,
        Some(InitSection::Policy(p)) if p == "uniform" => InitPolicy::UniformInRange,
        Some(InitSection::Policy(p)) => {
            return Err(CliError::Config(format!(
                "unknown init policy {p:?} (expected \"uniform\" or {{ file = ... }})"
            )))
        }
        Some(InitSection::Matrix { file: f }) => {
            let full = base.join(f);
            InitPolicy::Explicit(read_matrix(&full)?)
        }
    };

    let sim = SimConfig {
        dt: file.sim.dt,
        n_steps: file.sim.n_steps,
        seed: file.sim.seed,
        integrator,
        global_coupling: file.sim.global_coupling,
        conduction_speed: file.sim.conduction_speed,
        noise_sigma,
        init,
        n_workers: file.sim.workers,
        backend,
    };

    let sparse = build_sparse(
        &connectome,
        sim.conduction_speed,
        sim.dt,
        file.sim.weight_threshold,
    )
    .map_err(crate::map_connectome_err)?;

    let mut bindings = ParamBindings::new();
    for (name, value) in &file.params {
        let v = match value {
            toml::Value::Float(f) => ParamValue::Scalar(*f),
            toml::Value::Integer(i) => ParamValue::Scalar(*i as f64),
            toml::Value::Table(t) => match t.get("file") {
                Some(toml::Value::String(p)) => {
                    let full = base.join(p);
                    ParamValue::PerRegion(read_vector(&full)?)
                }
                _ => {
                    return Err(CliError::Config(format!(
                        "parameter {name:?}: expected a number or {{ file = \"...\" }}"
                    )))
                }
            },
            _ => {
                return Err(CliError::Config(format!(
                    "parameter {name:?}: expected a number or {{ file = \"...\" }}"
                )))
            }
        };
        bindings.overrides.push((name.clone(), v));
    }

    let mut monitors = Vec::new();
    for m in &file.monitor {
        let spec = match m.kind.as_str() {
            "raw" => MonitorSpec {
                kind: MonitorKind::Raw,
                stride: m.stride,
                source: MonitorSource::Exposure(m.exposure),
            },
            "tavg" => MonitorSpec {
                kind: MonitorKind::TAvg,
                stride: m.stride,
                source: MonitorSource::Exposure(m.exposure),
            },
            "coupling" => MonitorSpec {
                kind: MonitorKind::Raw,
                stride: m.stride,
                source: MonitorSource::Coupling(m.exposure),
            },
            other => {
                return Err(CliError::Config(format!(
                    "unknown monitor kind {other:?} (expected raw|tavg|coupling)"
                )))
            }
        };
        monitors.push(spec);
    }
    if monitors.is_empty() {
        monitors.push(MonitorSpec::raw(1));
    }

    let format = match file.output.format.as_str() {
        "csv" => OutputFormat::Csv,
        "f64bin" => OutputFormat::F64Bin,
        other => {
            return Err(CliError::Config(format!(
                "unknown output format {other:?} (expected csv|f64bin)"
            )))
        }
    };
    let out_dir = file
        .output
        .dir
        .as_ref()
        .map(|d| base.join(d))
        .unwrap_or_else(|| base.join("out"));

    let cosim = match &file.cosim {
        None => None,
        Some(cs) => {
            let direction = match cs.direction.as_str() {
                "macro-to-micro" => Direction::MacroToMicro,
                "micro-to-macro" => Direction::MicroToMacro,
                "bidirectional" => Direction::Bidirectional,
                other => {
                    return Err(CliError::Config(format!(
                        "unknown cosim direction {other:?}"
                    )))
                }
            };
            let transport = match cs.transport.as_str() {
                "inprocess" => TransportKind::InProcess,
                "socket" => TransportKind::Socket { port: cs.port },
                other => {
                    return Err(CliError::Config(format!(
                        "unknown cosim transport {other:?} (expected inprocess|socket)"
                    )))
                }
            };
            Some(ResolvedCosim {
                cc: CosimConfig {
                    proxy_regions: cs.proxy_regions.clone(),
                    window_steps: match cs.window_steps {
                        None | Some(0) => None,
                        Some(w) => Some(w),
                    },
                    direction,
                    n_spike_trains: cs.n_spike_trains,
                    smoothing_tau: cs.smoothing_tau,
                    rate_gain: cs.rate_gain,
                    rate_offset: cs.rate_offset,
                    seed: cs.seed,
                },
                lif: LifConfig {
                    n_neurons: cs.micro.n_neurons,
                    tau_m: cs.micro.tau_m,
                    v_rest: cs.micro.v_rest,
                    v_thresh: cs.micro.v_thresh,
                    v_reset: cs.micro.v_reset,
                    refractory_ms: cs.micro.refractory_ms,
                    conn_prob: cs.micro.conn_prob,
                    w_internal: cs.micro.w_internal,
                    w_external: cs.micro.w_external,
                    seed: cs.micro.seed,
                },
                transport,
            })
        }
    };

    let labels = connectome.labels.clone();
    Ok(RunSetup {
        kernel,
        connectome,
        sparse,
        sim,
        bindings,
        monitors,
        weight_threshold: file.sim.weight_threshold,
        out_dir,
        format,
        labels,
        warnings,
        cosim,
    })
}

/// Whitespace-separated matrix, one row per line.
pub fn read_matrix(path: &Path) -> Result<Vec<Vec<f64>>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| crate::read_file_err(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row: Vec<f64> = line
            .split_whitespace()
            .map(|t| {
                t.parse().map_err(|_| {
                    CliError::Config(format!(
                        "{}:{}: malformed number {t:?}",
                        path.display(),
                        i + 1
                    ))
                })
            })
            .collect::<Result<_, _>>()?;
        rows.push(row);
    }
    Ok(rows)
}

/// One value per line (or whitespace separated).
pub fn read_vector(path: &Path) -> Result<Vec<f64>, CliError> {
    Ok(read_matrix(path)?.into_iter().flatten().collect())
}
