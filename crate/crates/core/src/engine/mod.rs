//! Integration of a compiled model on a sparse delayed connectome.
//!
//! Each step is two-phase: (1) a read phase computes delayed coupling from
//! committed history, evaluates derivatives, and stages the state update
//! and new exposures per node; (2) a commit phase scatters the staged
//! values into the state matrix and the history ring, then feeds monitors.
//! Nothing in phase 1 depends on other nodes' phase-1 results, and every
//! random deviate is a pure function of (seed, node, step, variable), so
//! results are bit-identical across worker counts.

mod history;
mod sweep;
mod zones;

pub use history::HistoryRing;
pub use sweep::{sweep, SweepRow, SweepSpec, SweepSummary};
pub use zones::{epileptor_zone_study, ZoneStudy, ZoneStudyConfig};

use crate::connectome::{ConnectomeError, SparseCoupling};
use crate::dsl::{
    compile, get_builtin, parse_model, CompiledModel, DslError, ModelSpec, NativeDynamics, Op,
    VmScratch,
};
use crate::observables::TimeSeries;
use crate::rng;
use rayon::prelude::*;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("unknown parameter {0:?}")]
    UnknownParameter(String),
    #[error("numeric fault at step {step}: region {region}, variable {var} became non-finite")]
    NumericFault { step: u64, region: usize, var: String },
    #[error(transparent)]
    Dsl(#[from] DslError),
    #[error(transparent)]
    Connectome(#[from] ConnectomeError),
    #[error("summary error: {0}")]
    Summary(String),
}

pub type Result<T> = std::result::Result<T, EngineError>;

/// A compiled model plus its optional hand-written fast path.
#[derive(Clone)]
pub struct Kernel {
    pub compiled: CompiledModel,
    pub native: Option<Arc<dyn NativeDynamics>>,
}

impl Kernel {
    pub fn builtin(name: &str) -> std::result::Result<Kernel, DslError> {
        let (spec, native) = get_builtin(name)?;
        Ok(Kernel {
            compiled: compile(&spec)?,
            native,
        })
    }

    pub fn from_spec(spec: &ModelSpec) -> std::result::Result<Kernel, DslError> {
        Ok(Kernel {
            compiled: compile(spec)?,
            native: None,
        })
    }

    pub fn from_xml(xml_text: &str) -> std::result::Result<Kernel, DslError> {
        Kernel::from_spec(&parse_model(xml_text)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Integrator {
    EulerMaruyama,
    HeunStochastic,
}

/// Which derivative evaluator a run uses. `Auto` picks the native kernel
/// when the model ships one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backend {
    Auto,
    Bytecode,
    Native,
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitPolicy {
    /// Each variable i.i.d. uniform in its declared init range, keyed by
    /// (seed, region, variable).
    UniformInRange,
    /// Explicit [region][variable] matrix.
    Explicit(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    /// Integration step, ms.
    pub dt: f64,
    pub n_steps: u64,
    pub seed: u64,
    pub integrator: Integrator,
    /// Global coupling gain G multiplying every coupling sum.
    pub global_coupling: f64,
    /// mm/ms; used when sparsifying connectomes for this run.
    pub conduction_speed: f64,
    /// Per-state-variable noise override; None keeps the model's defaults.
    /// A single entry broadcasts to all state variables.
    pub noise_sigma: Option<Vec<f64>>,
    pub init: InitPolicy,
    pub n_workers: usize,
    pub backend: Backend,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt: 0.1,
            n_steps: 1000,
            seed: 42,
            integrator: Integrator::HeunStochastic,
            global_coupling: 0.0,
            conduction_speed: 3.0,
            noise_sigma: None,
            init: InitPolicy::UniformInRange,
            n_workers: 1,
            backend: Backend::Auto,
        }
    }
}

/// Parameter override: a shared scalar or a per-region vector.
#[derive(Debug, Clone, PartialEq)]
pub enum ParamValue {
    Scalar(f64),
    PerRegion(Vec<f64>),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamBindings {
    pub overrides: Vec<(String, ParamValue)>,
}

impl ParamBindings {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn scalar(mut self, name: &str, value: f64) -> Self {
        self.overrides
            .push((name.to_string(), ParamValue::Scalar(value)));
        self
    }

    pub fn vector(mut self, name: &str, values: Vec<f64>) -> Self {
        self.overrides
            .push((name.to_string(), ParamValue::PerRegion(values)));
        self
    }
}

/// Resolved parameter storage: one row shared by all regions, or one row
/// per region when any vector override is present.
#[derive(Debug, Clone)]
struct ParamsMatrix {
    data: Vec<f64>,
    stride: usize,
    shared: bool,
}

impl ParamsMatrix {
    fn resolve(
        compiled: &CompiledModel,
        bindings: &ParamBindings,
        n_regions: usize,
    ) -> Result<ParamsMatrix> {
        let layout = &compiled.param_layout;
        let stride = layout.len();
        let defaults: Vec<f64> = layout.iter().map(|p| p.default).collect();
        let any_vector = bindings
            .overrides
            .iter()
            .any(|(_, v)| matches!(v, ParamValue::PerRegion(_)));

        let index_of = |name: &str| -> Result<usize> {
            layout
                .iter()
                .position(|p| p.name == name)
                .ok_or_else(|| EngineError::UnknownParameter(name.to_string()))
        };

        if !any_vector {
            let mut row = defaults;
            for (name, value) in &bindings.overrides {
                let k = index_of(name)?;
                if let ParamValue::Scalar(v) = value {
                    row[k] = *v;
                }
            }
            return Ok(ParamsMatrix {
                data: row,
                stride,
                shared: true,
            });
        }

        let mut data = Vec::with_capacity(stride * n_regions);
        for _ in 0..n_regions {
            data.extend_from_slice(&defaults);
        }
        for (name, value) in &bindings.overrides {
            let k = index_of(name)?;
            match value {
                ParamValue::Scalar(v) => {
                    for i in 0..n_regions {
                        data[i * stride + k] = *v;
                    }
                }
                ParamValue::PerRegion(vs) => {
                    if vs.len() != n_regions {
                        return Err(EngineError::Config(format!(
                            "parameter {name:?}: vector of {} values for {n_regions} regions",
                            vs.len()
                        )));
                    }
                    for i in 0..n_regions {
                        data[i * stride + k] = vs[i];
                    }
                }
            }
        }
        Ok(ParamsMatrix {
            data,
            stride,
            shared: false,
        })
    }

    #[inline]
    fn row(&self, region: usize) -> &[f64] {
        if self.shared {
            &self.data
        } else {
            &self.data[region * self.stride..(region + 1) * self.stride]
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MonitorSource {
    /// Committed exposure k.
    Exposure(usize),
    /// Coupling input k used by the step that produced the sample.
    Coupling(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MonitorKind {
    /// Every stride-th committed sample.
    Raw,
    /// Mean of non-overlapping stride-sized windows (trailing partial
    /// window dropped).
    TAvg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MonitorSpec {
    pub kind: MonitorKind,
    pub stride: usize,
    pub source: MonitorSource,
}

impl MonitorSpec {
    pub fn raw(stride: usize) -> Self {
        MonitorSpec {
            kind: MonitorKind::Raw,
            stride,
            source: MonitorSource::Exposure(0),
        }
    }

    pub fn tavg(window: usize) -> Self {
        MonitorSpec {
            kind: MonitorKind::TAvg,
            stride: window,
            source: MonitorSource::Exposure(0),
        }
    }

    pub fn coupling(stride: usize) -> Self {
        MonitorSpec {
            kind: MonitorKind::Raw,
            stride,
            source: MonitorSource::Coupling(0),
        }
    }
}

#[derive(Debug, Clone)]
struct MonitorState {
    spec: MonitorSpec,
    acc: Vec<f64>,
    acc_n: usize,
    data: Vec<Vec<f64>>,
}

impl MonitorState {
    fn new(spec: MonitorSpec, n_regions: usize) -> Self {
        MonitorState {
            spec,
            acc: vec![0.0; n_regions],
            acc_n: 0,
            data: vec![Vec::new(); n_regions],
        }
    }

    #[inline]
    fn feed(&mut self, committed: u64, staged_expo: &[f64], staged_coup: &[f64], n_expo: usize, n_coup: usize) {
        let n = self.data.len();
        let value = |i: usize| match self.spec.source {
            MonitorSource::Exposure(e) => staged_expo[i * n_expo + e],
            MonitorSource::Coupling(k) => staged_coup[i * n_coup + k],
        };
        match self.spec.kind {
            MonitorKind::Raw => {
                if committed.is_multiple_of(self.spec.stride as u64) {
                    for i in 0..n {
                        self.data[i].push(value(i));
                    }
                }
            }
            MonitorKind::TAvg => {
                for i in 0..n {
                    self.acc[i] += value(i);
                }
                self.acc_n += 1;
                if self.acc_n == self.spec.stride {
                    let w = self.spec.stride as f64;
                    for i in 0..n {
                        self.data[i].push(self.acc[i] / w);
                        self.acc[i] = 0.0;
                    }
                    self.acc_n = 0;
                }
            }
        }
    }

    fn finish(self, dt: f64, labels: &[String]) -> TimeSeries {
        let name = match (self.spec.kind, self.spec.source) {
            (_, MonitorSource::Coupling(_)) => "coupling",
            (MonitorKind::Raw, _) => "raw",
            (MonitorKind::TAvg, _) => "tavg",
        };
        let out_dt = dt * self.spec.stride as f64;
        TimeSeries {
            t0: out_dt,
            dt_out: out_dt,
            name: name.into(),
            labels: labels.to_vec(),
            data: self.data,
        }
    }
}

/// Run products: monitor series, final state, throughput metrics.
#[derive(Debug, Clone)]
pub struct SimOutput {
    pub monitors: Vec<TimeSeries>,
    /// [region][variable]
    pub final_state: Vec<Vec<f64>>,
    pub wall_seconds: f64,
    pub node_steps_per_second: f64,
}

impl SimOutput {
    /// FNV-1a of the final state's canonical little-endian byte stream
    /// (region-major).
    pub fn final_state_checksum(&self) -> u64 {
        let flat: Vec<f64> = self.final_state.iter().flatten().copied().collect();
        crate::checksum_f64(&flat)
    }
}

/// Draws the initial state matrix (state-major layout
/// `state[var * n_regions + region]`).
pub fn init_state(
    compiled: &CompiledModel,
    n_regions: usize,
    policy: &InitPolicy,
    seed: u64,
) -> Result<Vec<f64>> {
    let n_state = compiled.n_state;
    let mut state = vec![0.0; n_state * n_regions];
    match policy {
        InitPolicy::UniformInRange => {
            for i in 0..n_regions {
                for v in 0..n_state {
                    let (lo, hi) = compiled.init_ranges[v];
                    let u = rng::draw_unit_f64(
                        rng::mix_key(&[rng::Stream::Init as u64, seed, i as u64, v as u64]),
                        0,
                    );
                    state[v * n_regions + i] = lo + (hi - lo) * u;
                }
            }
        }
        InitPolicy::Explicit(rows) => {
            if rows.len() != n_regions || rows.iter().any(|r| r.len() != n_state) {
                return Err(EngineError::Config(format!(
                    "explicit init matrix must be {n_regions} x {n_state}"
                )));
            }
            for (i, row) in rows.iter().enumerate() {
                for (v, value) in row.iter().enumerate() {
                    state[v * n_regions + i] = *value;
                }
            }
        }
    }
    Ok(state)
}

/// Delayed coupling inputs for every region from committed history:
/// `out[i][k] = G * Σ_{edges e into i} w_e * pre_k(delayed exposure)`.
/// For difference coupling terms the engine supplies `pre` with
/// (delayed source exposure − current target exposure).
pub fn compute_coupling(
    ring: &HistoryRing,
    sc: &SparseCoupling,
    model: &CompiledModel,
    g: f64,
) -> Vec<Vec<f64>> {
    let mut table = Vec::new();
    ring.slot_table(&mut table);
    let mut scratch = VmScratch::default();
    let pre_identity = pre_identity_flags(model);
    let mut out = vec![vec![0.0; model.n_coupling]; sc.n_regions];
    for i in 0..sc.n_regions {
        let mut row = vec![0.0; model.n_coupling];
        node_coupling(
            EvalBackend::Bytecode,
            model,
            sc,
            ring,
            &table,
            &pre_identity,
            g,
            i,
            &mut scratch,
            &mut row,
        );
        out[i] = row;
    }
    out
}

fn pre_identity_flags(model: &CompiledModel) -> Vec<bool> {
    model
        .pre_programs
        .iter()
        .map(|p| p.ops == [Op::LoadPre])
        .collect()
}

#[derive(Clone, Copy)]
enum EvalBackend<'a> {
    Bytecode,
    Native(&'a dyn NativeDynamics),
}

#[inline]
#[allow(clippy::too_many_arguments)]
fn node_coupling(
    backend: EvalBackend<'_>,
    model: &CompiledModel,
    sc: &SparseCoupling,
    ring: &HistoryRing,
    slot_table: &[usize],
    pre_identity: &[bool],
    g: f64,
    i: usize,
    scratch: &mut VmScratch,
    out: &mut [f64],
) {
    let lo = sc.row_ptr[i];
    let hi = sc.row_ptr[i + 1];
    for k in 0..model.n_coupling {
        let difference = model.difference[k];
        let current = if difference { ring.read(0, i, 0) } else { 0.0 };
        let identity = pre_identity[k];
        let mut acc = 0.0;
        for e in lo..hi {
            let src = sc.src_idx[e] as usize;
            let slot = slot_table[sc.delay_steps[e] as usize];
            let mut v = ring.row(0, slot)[src];
            if difference {
                v -= current;
            }
            let tv = if identity {
                v
            } else {
                match backend {
                    EvalBackend::Bytecode => model.eval_pre_raw(k, v, scratch),
                    EvalBackend::Native(native) => native.pre(k, v),
                }
            };
            acc += sc.weight[e] * tv;
        }
        out[k] = g * acc;
    }
}

/// One live run. Owns its mutable state; step-wise advancement is public
/// so co-simulation can interleave with exposure injection.
pub struct Simulation<'a> {
    kernel: &'a Kernel,
    sc: &'a SparseCoupling,
    cfg: SimConfig,
    use_native: bool,
    params: ParamsMatrix,
    sigma: Vec<f64>,
    any_noise: bool,
    pre_identity: Vec<bool>,
    /// [variable * n_regions + region] (per-variable contiguous).
    state: Vec<f64>,
    ring: HistoryRing,
    slot_table: Vec<usize>,
    /// Completed steps; also the index of the latest committed exposure.
    step_index: u64,
    staged_updates: Vec<f64>,
    staged_expo: Vec<f64>,
    staged_coup: Vec<f64>,
    exposure_override: Vec<Option<f64>>,
    pulses: Vec<(u64, usize, f64)>,
    monitors: Vec<MonitorState>,
    pool: Option<rayon::ThreadPool>,
    expo0_sum: f64,
    wall: std::time::Duration,
}

impl<'a> Simulation<'a> {
    pub fn new(
        kernel: &'a Kernel,
        sc: &'a SparseCoupling,
        cfg: SimConfig,
        bindings: &ParamBindings,
    ) -> Result<Self> {
        let compiled = &kernel.compiled;
        if !(cfg.dt > 0.0) {
            return Err(EngineError::Config(format!("dt must be positive, got {}", cfg.dt)));
        }
        if !(cfg.conduction_speed > 0.0) {
            return Err(EngineError::Config(format!(
                "conduction speed must be positive, got {}",
                cfg.conduction_speed
            )));
        }
        if !(cfg.global_coupling >= 0.0) {
            return Err(EngineError::Config(format!(
                "global coupling must be >= 0, got {}",
                cfg.global_coupling
            )));
        }
        if cfg.n_workers == 0 {
            return Err(EngineError::Config("n_workers must be >= 1".into()));
        }
        let use_native = match cfg.backend {
            Backend::Auto => kernel.native.is_some(),
            Backend::Bytecode => false,
            Backend::Native => {
                if kernel.native.is_none() {
                    return Err(EngineError::Config(format!(
                        "model {} has no native kernel",
                        compiled.name
                    )));
                }
                true
            }
        };
        let sigma = match &cfg.noise_sigma {
            None => compiled.noise_sigma.clone(),
            Some(s) if s.len() == 1 => vec![s[0]; compiled.n_state],
            Some(s) if s.len() == compiled.n_state => s.clone(),
            Some(s) => {
                return Err(EngineError::Config(format!(
                    "noise_sigma has {} entries for {} state variables",
                    s.len(),
                    compiled.n_state
                )))
            }
        };
        if let Some(bad) = sigma.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(EngineError::Config(format!("invalid noise sigma {bad}")));
        }

        let n = sc.n_regions;
        let params = ParamsMatrix::resolve(compiled, bindings, n)?;
        let state = init_state(compiled, n, &cfg.init, cfg.seed)?;

        let n_expo = compiled.n_exposures();
        let mut ring = HistoryRing::new(n_expo, sc.horizon, n);
        // Pre-fill history with each node's initial exposures (coupling
        // inputs are zero before the first step).
        let mut initial = vec![0.0; n * n_expo];
        let mut scratch = VmScratch::default();
        let zero_c = vec![0.0; compiled.n_coupling];
        let mut node_state = vec![0.0; compiled.n_state];
        for i in 0..n {
            for v in 0..compiled.n_state {
                node_state[v] = state[v * n + i];
            }
            let row = &mut initial[i * n_expo..(i + 1) * n_expo];
            if use_native {
                kernel
                    .native
                    .as_ref()
                    .unwrap()
                    .exposures(&node_state, &zero_c, params.row(i), row);
            } else {
                compiled.eval_exposures(&node_state, &zero_c, params.row(i), &mut scratch, row);
            }
        }
        ring.fill(&initial);

        let pool = if cfg.n_workers > 1 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(cfg.n_workers)
                    .build()
                    .map_err(|e| EngineError::Config(format!("worker pool: {e}")))?,
            )
        } else {
            None
        };

        let any_noise = sigma.iter().any(|&s| s > 0.0);
        Ok(Simulation {
            pre_identity: pre_identity_flags(compiled),
            use_native,
            params,
            sigma,
            any_noise,
            staged_updates: vec![0.0; n * compiled.n_state],
            staged_expo: vec![0.0; n * n_expo],
            staged_coup: vec![0.0; n * compiled.n_coupling],
            exposure_override: vec![None; n],
            pulses: Vec::new(),
            monitors: Vec::new(),
            pool,
            expo0_sum: 0.0,
            wall: std::time::Duration::ZERO,
            slot_table: Vec::new(),
            step_index: 0,
            state,
            ring,
            kernel,
            sc,
            cfg,
        })
    }

    pub fn add_monitor(&mut self, spec: MonitorSpec) -> Result<()> {
        if spec.stride == 0 {
            return Err(EngineError::Config("monitor stride must be >= 1".into()));
        }
        let ok = match spec.source {
            MonitorSource::Exposure(e) => e < self.kernel.compiled.n_exposures(),
            MonitorSource::Coupling(k) => k < self.kernel.compiled.n_coupling,
        };
        if !ok {
            return Err(EngineError::Config("monitor source out of range".into()));
        }
        self.monitors
            .push(MonitorState::new(spec, self.sc.n_regions));
        Ok(())
    }

    pub fn n_regions(&self) -> usize {
        self.sc.n_regions
    }

    pub fn current_step(&self) -> u64 {
        self.step_index
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    /// Committed exposure value (delay 0 = latest commit).
    pub fn committed_exposure(&self, exposure: usize, region: usize) -> f64 {
        self.ring.read(exposure, region, 0)
    }

    /// Holds region's coupling exposure at a fixed value from the next
    /// commit on (co-simulation proxy injection). None restores model
    /// output.
    pub fn set_exposure_override(&mut self, region: usize, value: Option<f64>) {
        self.exposure_override[region] = value;
    }

    /// One-step exposure perturbation: at commit index `commit_index`
    /// (1-based), the region's coupling exposure is replaced by `value`.
    pub fn schedule_pulse(&mut self, region: usize, commit_index: u64, value: f64) {
        self.pulses.push((commit_index, region, value));
    }

    /// Mean committed coupling exposure over all regions and steps so far.
    pub fn mean_exposure(&self) -> f64 {
        let denom = (self.step_index as f64) * self.sc.n_regions as f64;
        if denom == 0.0 {
            0.0
        } else {
            self.expo0_sum / denom
        }
    }

    /// [region][variable] copy of the current state.
    pub fn state_matrix(&self) -> Vec<Vec<f64>> {
        let n = self.sc.n_regions;
        let n_state = self.kernel.compiled.n_state;
        (0..n)
            .map(|i| (0..n_state).map(|v| self.state[v * n + i]).collect())
            .collect()
    }

    /// Advances one step.
    pub fn step(&mut self) -> Result<()> {
        let t0 = std::time::Instant::now();
        let compiled = &self.kernel.compiled;
        let n = self.sc.n_regions;
        let n_state = compiled.n_state;
        let n_expo = compiled.n_exposures();
        let n_coup = compiled.n_coupling;

        self.ring.slot_table(&mut self.slot_table);
        let backend = if self.use_native {
            EvalBackend::Native(self.kernel.native.as_ref().unwrap().as_ref())
        } else {
            EvalBackend::Bytecode
        };
        let ctx = StepCtx {
            backend,
            compiled,
            sc: self.sc,
            ring: &self.ring,
            slot_table: &self.slot_table,
            pre_identity: &self.pre_identity,
            state: &self.state,
            params: &self.params,
            sigma: &self.sigma,
            any_noise: self.any_noise,
            heun: self.cfg.integrator == Integrator::HeunStochastic,
            g: self.cfg.global_coupling,
            dt: self.cfg.dt,
            sqrt_dt: self.cfg.dt.sqrt(),
            seed: self.cfg.seed,
            step: self.step_index,
            n,
            n_state,
            n_expo,
            n_coup,
        };

        // Phase 1: read committed history, stage updates node by node.
        let workers = self.cfg.n_workers.min(n).max(1);
        let chunk = n.div_ceil(workers);
        let fault = if workers == 1 {
            process_block(
                &ctx,
                0,
                &mut self.staged_updates,
                &mut self.staged_expo,
                &mut self.staged_coup,
            )
        } else {
            let su = &mut self.staged_updates;
            let se = &mut self.staged_expo;
            let sco = &mut self.staged_coup;
            let ctx_ref = &ctx;
            self.pool.as_ref().unwrap().install(|| {
                su.par_chunks_mut(chunk * n_state)
                    .zip(se.par_chunks_mut(chunk * n_expo))
                    .zip(sco.par_chunks_mut(chunk * n_coup.max(1)))
                    .enumerate()
                    .map(|(ci, ((su, se), sco))| {
                        process_block(ctx_ref, ci * chunk, su, se, sco)
                    })
                    .reduce(
                        || None,
                        |a, b| match (a, b) {
                            (None, x) => x,
                            (x, None) => x,
                            (Some(a), Some(b)) => Some(if a.0 <= b.0 { a } else { b }),
                        },
                    )
            })
        };
        if let Some((region, var)) = fault {
            return Err(EngineError::NumericFault {
                step: self.step_index,
                region,
                var: compiled.state_names[var].clone(),
            });
        }

        // Phase 2 (single-threaded): overrides, commit, monitors.
        let committed = self.step_index + 1;
        for (region, value) in self
            .exposure_override
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.map(|v| (i, v)))
        {
            self.staged_expo[region * n_expo] = value;
        }
        for &(when, region, value) in &self.pulses {
            if when == committed {
                self.staged_expo[region * n_expo] = value;
            }
        }

        for i in 0..n {
            for v in 0..n_state {
                self.state[v * n + i] = self.staged_updates[i * n_state + v];
            }
        }
        self.ring.commit(&self.staged_expo);
        for i in 0..n {
            self.expo0_sum += self.staged_expo[i * n_expo];
        }
        for m in &mut self.monitors {
            m.feed(committed, &self.staged_expo, &self.staged_coup, n_expo, n_coup);
        }
        self.step_index = committed;
        self.wall += t0.elapsed();
        Ok(())
    }

    /// Runs the remaining steps of the configured horizon.
    pub fn run_to_end(&mut self) -> Result<()> {
        while self.step_index < self.cfg.n_steps {
            self.step()?;
        }
        Ok(())
    }

    /// Finalizes monitors and returns the run products.
    pub fn into_output(self, labels: Option<&[String]>) -> SimOutput {
        let n = self.sc.n_regions;
        let default_labels: Vec<String>;
        let labels = match labels {
            Some(l) => l,
            None => {
                default_labels = (0..n).map(|i| format!("R{i:03}")).collect();
                &default_labels
            }
        };
        let final_state = self.state_matrix();
        let dt = self.cfg.dt;
        let monitors = self
            .monitors
            .into_iter()
            .map(|m| m.finish(dt, labels))
            .collect();
        let wall_seconds = self.wall.as_secs_f64();
        let node_steps = (self.step_index as f64) * n as f64;
        SimOutput {
            monitors,
            final_state,
            wall_seconds,
            node_steps_per_second: if wall_seconds > 0.0 {
                node_steps / wall_seconds
            } else {
                0.0
            },
        }
    }
}

struct StepCtx<'a> {
    backend: EvalBackend<'a>,
    compiled: &'a CompiledModel,
    sc: &'a SparseCoupling,
    ring: &'a HistoryRing,
    slot_table: &'a [usize],
    pre_identity: &'a [bool],
    state: &'a [f64],
    params: &'a ParamsMatrix,
    sigma: &'a [f64],
    any_noise: bool,
    heun: bool,
    g: f64,
    dt: f64,
    sqrt_dt: f64,
    seed: u64,
    step: u64,
    n: usize,
    n_state: usize,
    n_expo: usize,
    n_coup: usize,
}

impl StepCtx<'_> {
    #[inline]
    fn derivatives(&self, s: &[f64], c: &[f64], p: &[f64], scratch: &mut VmScratch, out: &mut [f64]) {
        match self.backend {
            EvalBackend::Bytecode => self.compiled.eval_derivatives_raw(s, c, p, scratch, out),
            EvalBackend::Native(native) => native.derivatives(s, c, p, out),
        }
    }

    #[inline]
    fn exposures(&self, s: &[f64], c: &[f64], p: &[f64], scratch: &mut VmScratch, out: &mut [f64]) {
        match self.backend {
            EvalBackend::Bytecode => self.compiled.eval_exposures(s, c, p, scratch, out),
            EvalBackend::Native(native) => native.exposures(s, c, p, out),
        }
    }
}

/// Processes regions [block_start, block_start + len) into the staged
/// slices. Returns the lowest-region numeric fault, if any.
fn process_block(
    ctx: &StepCtx<'_>,
    block_start: usize,
    staged_updates: &mut [f64],
    staged_expo: &mut [f64],
    staged_coup: &mut [f64],
) -> Option<(usize, usize)> {
    let len = staged_updates.len() / ctx.n_state.max(1);
    let mut scratch = VmScratch::default();
    let mut s = vec![0.0; ctx.n_state];
    let mut f = vec![0.0; ctx.n_state];
    let mut s_pred = vec![0.0; ctx.n_state];
    let mut f_pred = vec![0.0; ctx.n_state];
    let mut coup = vec![0.0; ctx.n_coup];
    let mut fault: Option<(usize, usize)> = None;

    for local in 0..len {
        let i = block_start + local;
        if i >= ctx.n {
            break;
        }
        for v in 0..ctx.n_state {
            s[v] = ctx.state[v * ctx.n + i];
        }
        let params = ctx.params.row(i);

        node_coupling(
            ctx.backend,
            ctx.compiled,
            ctx.sc,
            ctx.ring,
            ctx.slot_table,
            ctx.pre_identity,
            ctx.g,
            i,
            &mut scratch,
            &mut coup,
        );

        ctx.derivatives(&s, &coup, params, &mut scratch, &mut f);

        let update = &mut staged_updates[local * ctx.n_state..(local + 1) * ctx.n_state];
        if ctx.heun {
            // Predictor with the same noise increment as the corrector;
            // coupling is frozen for both stages.
            for v in 0..ctx.n_state {
                let xi = if ctx.any_noise && ctx.sigma[v] > 0.0 {
                    rng::noise_deviate(ctx.seed, i, ctx.step, v)
                } else {
                    0.0
                };
                s_pred[v] = s[v] + ctx.dt * f[v] + ctx.sqrt_dt * ctx.sigma[v] * xi;
                // Stash xi for the corrector via f_pred's slot trick is
                // avoided; recompute cheaply below only when needed.
                update[v] = xi;
            }
            ctx.derivatives(&s_pred, &coup, params, &mut scratch, &mut f_pred);
            for v in 0..ctx.n_state {
                let xi = update[v];
                update[v] =
                    s[v] + 0.5 * ctx.dt * (f[v] + f_pred[v]) + ctx.sqrt_dt * ctx.sigma[v] * xi;
            }
        } else {
            for v in 0..ctx.n_state {
                let xi = if ctx.any_noise && ctx.sigma[v] > 0.0 {
                    rng::noise_deviate(ctx.seed, i, ctx.step, v)
                } else {
                    0.0
                };
                update[v] = s[v] + ctx.dt * f[v] + ctx.sqrt_dt * ctx.sigma[v] * xi;
            }
        }
        for v in 0..ctx.n_state {
            if let Some((lo, hi)) = ctx.compiled.clamp[v] {
                update[v] = update[v].clamp(lo, hi);
            }
            if !update[v].is_finite() && fault.is_none() {
                fault = Some((i, v));
            }
        }

        ctx.exposures(
            update,
            &coup,
            params,
            &mut scratch,
            &mut staged_expo[local * ctx.n_expo..(local + 1) * ctx.n_expo],
        );
        staged_coup[local * ctx.n_coup.max(1)..local * ctx.n_coup.max(1) + ctx.n_coup]
            .copy_from_slice(&coup);
    }
    fault
}

/// Convenience wrapper: build, run, finalize.
pub fn run(
    kernel: &Kernel,
    sc: &SparseCoupling,
    cfg: SimConfig,
    bindings: &ParamBindings,
    monitors: &[MonitorSpec],
    labels: Option<&[String]>,
) -> Result<SimOutput> {
    let mut sim = Simulation::new(kernel, sc, cfg, bindings)?;
    for spec in monitors {
        sim.add_monitor(*spec)?;
    }
    sim.run_to_end()?;
    Ok(sim.into_output(labels))
}
