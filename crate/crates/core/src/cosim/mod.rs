//! Macro/micro co-simulation with synchronization windows.
//!
//! Selected proxy regions of the network model are delegated to a spiking
//! micro-network. Both simulators advance `window_steps` steps
//! independently, then exchange the window's products: the macro side
//! sends its proxies' firing-rate exposures, the micro side its spikes.
//! Cross-scale data is consumed with a fixed interface lag equal to the
//! minimum delay on edges touching the proxy set; any window size up to
//! that lag therefore yields bit-identical trajectories, because each side
//! only ever needs data the other committed in an earlier window.
//!
//! The macro→micro path turns proxy firing rates into spike trains
//! injected into the micro network; the micro→macro path turns population
//! spikes into rates that replace the proxies' coupling exposure (scaled
//! by a configurable linear gain and offset). Proxies with no micro input
//! are zero-held: the rest of the network sees 0 from them.

mod frame;
mod lif;
mod transform;
mod transport;

pub use frame::{CosimMessage, Payload};
pub use lif::{LifConfig, LifNetwork};
pub use transform::{rate_to_spikes, smooth, spikes_to_rate};
pub use transport::{channel_pair, ChannelTransport, FrameTransport, SocketTransport};

use crate::connectome::SparseCoupling;
use crate::engine::{
    EngineError, Kernel, MonitorSpec, ParamBindings, SimConfig, SimOutput, Simulation,
};
use crate::observables::TimeSeries;
use crate::rng::{draw_unit_f64, mix_key, Stream};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CosimError {
    #[error("co-simulation configuration error: {0}")]
    Config(String),
    #[error("window {got} received, expected {expected}")]
    OutOfOrder { got: u64, expected: u64 },
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("bad frame: {0}")]
    Frame(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

pub type Result<T> = std::result::Result<T, CosimError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    MacroToMicro,
    MicroToMacro,
    Bidirectional,
}

impl Direction {
    fn macro_drives_micro(self) -> bool {
        matches!(self, Direction::MacroToMicro | Direction::Bidirectional)
    }

    fn micro_drives_macro(self) -> bool {
        matches!(self, Direction::MicroToMacro | Direction::Bidirectional)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CosimConfig {
    pub proxy_regions: Vec<usize>,
    /// Steps per synchronization window; None selects the interface
    /// minimum delay (the largest exact window).
    pub window_steps: Option<usize>,
    pub direction: Direction,
    /// Spike trains generated per proxy region.
    pub n_spike_trains: usize,
    /// Exponential smoothing time constant for micro rates, ms (0 = raw).
    pub smoothing_tau: f64,
    /// Linear map from micro rate (Hz) to proxy exposure units.
    pub rate_gain: f64,
    pub rate_offset: f64,
    /// Seed for spike generation (independent of the engine seed).
    pub seed: u64,
}

impl Default for CosimConfig {
    fn default() -> Self {
        CosimConfig {
            proxy_regions: Vec::new(),
            window_steps: None,
            direction: Direction::Bidirectional,
            n_spike_trains: 10,
            smoothing_tau: 0.0,
            rate_gain: 1.0,
            rate_offset: 0.0,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransportKind {
    InProcess,
    Socket { port: u16 },
}

#[derive(Debug, Clone)]
pub struct CosimOutput {
    pub macro_out: SimOutput,
    /// Raw per-step population rate of each proxy's micro block (Hz).
    pub micro_rates: TimeSeries,
    pub window_steps: usize,
    pub interface_lag: usize,
}

/// Resolved protocol geometry shared by both endpoints.
#[derive(Debug, Clone)]
struct Plan {
    proxies: Vec<usize>,
    /// Fixed cross-scale consumption lag, steps.
    lag: usize,
    window: usize,
    n_windows: u64,
    n_steps: u64,
    dt: f64,
}

impl Plan {
    fn window_bounds(&self, w: u64) -> (u64, u64) {
        let start = w * self.window as u64;
        (start, self.n_steps.min(start + self.window as u64))
    }
}

fn make_plan(
    kernel: &Kernel,
    sc: &SparseCoupling,
    cfg: &SimConfig,
    cc: &CosimConfig,
) -> Result<Plan> {
    let proxies = cc.proxy_regions.clone();
    if proxies.is_empty() {
        return Err(CosimError::Config("proxy set is empty".into()));
    }
    let mut seen = std::collections::HashSet::new();
    for &p in &proxies {
        if p >= sc.n_regions {
            return Err(CosimError::Config(format!(
                "proxy region {p} out of range (n_regions = {})",
                sc.n_regions
            )));
        }
        if !seen.insert(p) {
            return Err(CosimError::Config(format!("duplicate proxy region {p}")));
        }
    }
    let lag = sc.min_delay_touching(&proxies).ok_or_else(|| {
        CosimError::Config(
            "no connectome edges touch the proxy set; no interface delay exists".into(),
        )
    })?;
    if lag == 0 {
        return Err(CosimError::Config(
            "an edge touching the proxy set has zero delay; no window size is exact".into(),
        ));
    }
    let window = cc.window_steps.unwrap_or(lag);
    if window == 0 {
        return Err(CosimError::Config("window_steps must be >= 1".into()));
    }
    if window > lag {
        return Err(CosimError::Config(format!(
            "window_steps {window} exceeds the interface minimum delay {lag}"
        )));
    }
    if cc.direction.macro_drives_micro() {
        if kernel.compiled.rate_exposure.is_none() {
            return Err(CosimError::Config(format!(
                "model {} declares no rate exposure; macro-to-micro coupling needs one",
                kernel.compiled.name
            )));
        }
        if cc.n_spike_trains == 0 {
            return Err(CosimError::Config("n_spike_trains must be >= 1".into()));
        }
    }
    if !(cc.smoothing_tau >= 0.0) {
        return Err(CosimError::Config("smoothing_tau must be >= 0".into()));
    }
    Ok(Plan {
        n_windows: cfg.n_steps.div_ceil(window as u64),
        proxies,
        lag,
        window,
        n_steps: cfg.n_steps,
        dt: cfg.dt,
    })
}

/// Contiguous neuron blocks, one per proxy, covering all neurons.
fn neuron_blocks(n_neurons: usize, n_proxies: usize) -> Vec<std::ops::Range<usize>> {
    let base = n_neurons / n_proxies;
    let rem = n_neurons % n_proxies;
    let mut blocks = Vec::with_capacity(n_proxies);
    let mut start = 0;
    for p in 0..n_proxies {
        let len = base + usize::from(p < rem);
        blocks.push(start..start + len);
        start += len;
    }
    blocks
}

/// Runs the coupled pair over the chosen transport. The micro endpoint
/// runs on its own thread; both sides exchange one frame pair per window
/// boundary plus a final end-of-run marker.
#[allow(clippy::too_many_arguments)]
pub fn run_cosim(
    kernel: &Kernel,
    sc: &SparseCoupling,
    cfg: &SimConfig,
    bindings: &ParamBindings,
    monitors: &[MonitorSpec],
    labels: Option<&[String]>,
    lif_cfg: &LifConfig,
    cc: &CosimConfig,
    transport: TransportKind,
) -> Result<CosimOutput> {
    let plan = make_plan(kernel, sc, cfg, cc)?;
    if lif_cfg.n_neurons < plan.proxies.len() {
        return Err(CosimError::Config(format!(
            "{} micro neurons cannot cover {} proxies",
            lif_cfg.n_neurons,
            plan.proxies.len()
        )));
    }

    enum Side {
        Chan(ChannelTransport),
        Sock(u16),
    }
    let (macro_side, micro_side) = match transport {
        TransportKind::InProcess => {
            let (a, b) = channel_pair();
            (Side::Chan(a), Side::Chan(b))
        }
        TransportKind::Socket { port } => (Side::Sock(port), Side::Sock(port)),
    };

    let micro_params = MicroParams {
        lif: lif_cfg.clone(),
        direction: cc.direction,
        n_trains: cc.n_spike_trains,
        seed: cc.seed,
        plan: plan.clone(),
    };
    let micro_handle = std::thread::spawn(move || -> Result<TimeSeries> {
        let mut t: Box<dyn FrameTransport> = match micro_side {
            Side::Chan(c) => Box::new(c),
            Side::Sock(port) => Box::new(SocketTransport::listen(port)?),
        };
        micro_endpoint(&micro_params, t.as_mut())
    });

    let macro_res = (|| -> Result<SimOutput> {
        let mut t: Box<dyn FrameTransport> = match macro_side {
            Side::Chan(c) => Box::new(c),
            Side::Sock(port) => Box::new(SocketTransport::connect(port)?),
        };
        macro_endpoint(
            kernel,
            sc,
            cfg,
            bindings,
            monitors,
            labels,
            cc,
            lif_cfg.n_neurons,
            &plan,
            t.as_mut(),
        )
    })();
    let micro_res = micro_handle
        .join()
        .unwrap_or_else(|_| Err(CosimError::Transport("micro endpoint panicked".into())));

    match (macro_res, micro_res) {
        (Ok(macro_out), Ok(micro_rates)) => Ok(CosimOutput {
            macro_out,
            micro_rates,
            window_steps: plan.window,
            interface_lag: plan.lag,
        }),
        // A transport failure on one side is usually fallout from a real
        // error on the other; prefer the substantive one.
        (Err(CosimError::Transport(_)), Err(e)) => Err(e),
        (Err(e), _) => Err(e),
        (_, Err(e)) => Err(e),
    }
}

#[allow(clippy::too_many_arguments)]
fn macro_endpoint(
    kernel: &Kernel,
    sc: &SparseCoupling,
    cfg: &SimConfig,
    bindings: &ParamBindings,
    monitors: &[MonitorSpec],
    labels: Option<&[String]>,
    cc: &CosimConfig,
    micro_neurons: usize,
    plan: &Plan,
    transport: &mut dyn FrameTransport,
) -> Result<SimOutput> {
    let mut sim = Simulation::new(kernel, sc, cfg.clone(), bindings)?;
    for m in monitors {
        sim.add_monitor(*m).map_err(CosimError::from)?;
    }
    let n_proxies = plan.proxies.len();
    let rate_idx = kernel.compiled.rate_exposure.unwrap_or(0);
    let send_rates = cc.direction.macro_drives_micro();
    let use_micro = cc.direction.micro_drives_macro();
    let blocks = neuron_blocks(micro_neurons, n_proxies);

    // Smoothed micro rates per proxy; entry [p][i] is commit index i+1.
    let mut micro_sm: Vec<Vec<f64>> = vec![Vec::new(); n_proxies];
    let mut carry = vec![0.0; n_proxies];
    let mut window_rates: Vec<f64> = Vec::new();
    let mut prev_rates: Vec<f64> = Vec::new();
    let mut prev_len = 0usize;

    for w in 0..plan.n_windows {
        let (start, end) = plan.window_bounds(w);
        if w > 0 {
            let msg = CosimMessage {
                window_index: w - 1,
                t_start: (start - plan.window as u64) as f64 * plan.dt,
                dt: plan.dt,
                payload: Payload::Rates {
                    n_proxies: n_proxies as u32,
                    n_steps: prev_len as u32,
                    values: if send_rates {
                        prev_rates.clone()
                    } else {
                        vec![0.0; n_proxies * prev_len]
                    },
                },
            };
            transport.send(&msg.encode())?;

            let reply = CosimMessage::decode(&transport.recv()?)?;
            if reply.window_index != w - 1 {
                return Err(CosimError::OutOfOrder {
                    got: reply.window_index,
                    expected: w - 1,
                });
            }
            let spikes = match reply.payload {
                Payload::Spikes(s) => s,
                _ => return Err(CosimError::Frame("expected a spikes message".into())),
            };
            let (pstart, pend) = plan.window_bounds(w - 1);
            for (pi, block) in blocks.iter().enumerate() {
                let block_spikes: Vec<(u32, f64)> = spikes
                    .iter()
                    .filter(|(nid, _)| block.contains(&(*nid as usize)))
                    .copied()
                    .collect();
                let raw = spikes_to_rate(
                    &block_spikes,
                    block.len().max(1),
                    plan.dt,
                    (pend - pstart) as usize,
                    0.0,
                    pstart,
                )?;
                let smoothed = smooth(&raw, plan.dt, cc.smoothing_tau, carry[pi]);
                if let Some(&last) = smoothed.last() {
                    carry[pi] = last;
                }
                micro_sm[pi].extend_from_slice(&smoothed);
            }
        }

        let len = (end - start) as usize;
        window_rates.clear();
        window_rates.resize(n_proxies * len, 0.0);
        for s in start..end {
            let commit = s + 1;
            for (pi, &p) in plan.proxies.iter().enumerate() {
                let val = if use_micro && commit > plan.lag as u64 {
                    let idx = (commit - plan.lag as u64) as usize;
                    cc.rate_gain * micro_sm[pi][idx - 1] + cc.rate_offset
                } else {
                    0.0
                };
                sim.set_exposure_override(p, Some(val));
            }
            sim.step()?;
            if send_rates {
                let local = (s - start) as usize;
                for (pi, &p) in plan.proxies.iter().enumerate() {
                    window_rates[pi * len + local] = sim.committed_exposure(rate_idx, p);
                }
            }
        }
        std::mem::swap(&mut prev_rates, &mut window_rates);
        prev_len = len;
    }

    end_handshake(transport, plan)?;
    Ok(sim.into_output(labels))
}

struct MicroParams {
    lif: LifConfig,
    direction: Direction,
    n_trains: usize,
    seed: u64,
    plan: Plan,
}

fn micro_endpoint(params: &MicroParams, transport: &mut dyn FrameTransport) -> Result<TimeSeries> {
    let plan = &params.plan;
    let n_proxies = plan.proxies.len();
    let mut lif = LifNetwork::new(params.lif.clone())?;
    let n_neurons = lif.n_neurons();
    let blocks = neuron_blocks(n_neurons, n_proxies);
    let mut proxy_of = vec![0u32; n_neurons];
    for (pi, block) in blocks.iter().enumerate() {
        for i in block.clone() {
            proxy_of[i] = pi as u32;
        }
    }
    let use_macro = params.direction.macro_drives_micro();
    let w_ext = params.lif.w_external;

    // Macro proxy rates indexed by commit index - 1.
    let mut macro_rates: Vec<Vec<f64>> = vec![Vec::new(); n_proxies];
    let mut rate_record: Vec<Vec<f64>> = vec![Vec::new(); n_proxies];
    let mut window_spikes: Vec<(u32, f64)> = Vec::new();
    let mut prev_spikes: Vec<(u32, f64)> = Vec::new();
    let mut external = vec![0.0; n_neurons];
    let mut block_counts = vec![0usize; n_proxies];

    for w in 0..plan.n_windows {
        let (start, end) = plan.window_bounds(w);
        if w > 0 {
            let msg = CosimMessage {
                window_index: w - 1,
                t_start: (start - plan.window as u64) as f64 * plan.dt,
                dt: plan.dt,
                payload: Payload::Spikes(prev_spikes.clone()),
            };
            transport.send(&msg.encode())?;

            let reply = CosimMessage::decode(&transport.recv()?)?;
            if reply.window_index != w - 1 {
                return Err(CosimError::OutOfOrder {
                    got: reply.window_index,
                    expected: w - 1,
                });
            }
            match reply.payload {
                Payload::Rates {
                    n_proxies: np,
                    n_steps,
                    values,
                } => {
                    let (pstart, pend) = plan.window_bounds(w - 1);
                    let expected = (pend - pstart) as usize;
                    if np as usize != n_proxies || n_steps as usize != expected {
                        return Err(CosimError::Frame(format!(
                            "rates payload is {np} x {n_steps}, expected {n_proxies} x {expected}"
                        )));
                    }
                    for (pi, rates) in macro_rates.iter_mut().enumerate() {
                        rates.extend_from_slice(&values[pi * expected..(pi + 1) * expected]);
                    }
                }
                _ => return Err(CosimError::Frame("expected a rates message".into())),
            }
        }

        window_spikes.clear();
        for s in start..end {
            external.iter_mut().for_each(|v| *v = 0.0);
            if use_macro {
                let commit = s + 1;
                for (pi, block) in blocks.iter().enumerate() {
                    let rate = if commit > plan.lag as u64 {
                        macro_rates[pi][(commit - plan.lag as u64) as usize - 1]
                    } else {
                        0.0
                    };
                    let p = (rate * plan.dt * 1e-3).clamp(0.0, 1.0);
                    if p <= 0.0 {
                        continue;
                    }
                    let mut count = 0usize;
                    for t in 0..params.n_trains {
                        let train = (pi * params.n_trains + t) as u64;
                        let u = draw_unit_f64(
                            mix_key(&[Stream::Spikes as u64, params.seed, train, s]),
                            0,
                        );
                        if u < p {
                            count += 1;
                        }
                    }
                    if count > 0 {
                        let inc = count as f64 * w_ext;
                        for i in block.clone() {
                            external[i] += inc;
                        }
                    }
                }
            }
            let emitted = lif.step(&external, plan.dt);
            let t_ms = s as f64 * plan.dt;
            block_counts.iter_mut().for_each(|c| *c = 0);
            for &nid in &emitted {
                window_spikes.push((nid, t_ms));
                block_counts[proxy_of[nid as usize] as usize] += 1;
            }
            for (pi, block) in blocks.iter().enumerate() {
                rate_record[pi].push(
                    block_counts[pi] as f64 / (block.len().max(1) as f64 * plan.dt * 1e-3),
                );
            }
        }
        std::mem::swap(&mut prev_spikes, &mut window_spikes);
    }

    end_handshake(transport, plan)?;
    Ok(TimeSeries {
        t0: plan.dt,
        dt_out: plan.dt,
        name: "micro_rates".into(),
        labels: plan.proxies.iter().map(|p| format!("P{p:03}")).collect(),
        data: rate_record,
    })
}

fn end_handshake(transport: &mut dyn FrameTransport, plan: &Plan) -> Result<()> {
    let end = CosimMessage {
        window_index: plan.n_windows,
        t_start: plan.n_steps as f64 * plan.dt,
        dt: plan.dt,
        payload: Payload::End,
    };
    transport.send(&end.encode())?;
    let reply = CosimMessage::decode(&transport.recv()?)?;
    if !matches!(reply.payload, Payload::End) {
        return Err(CosimError::Frame("expected the end-of-run marker".into()));
    }
    if reply.window_index != plan.n_windows {
        return Err(CosimError::OutOfOrder {
            got: reply.window_index,
            expected: plan.n_windows,
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::connectome::{build_sparse, Connectome};
    use crate::engine::{Integrator, InitPolicy};

    fn two_node_setup(delay_mm: f64) -> (Kernel, SparseCoupling) {
        let kernel = Kernel::builtin("ReducedWongWang").unwrap();
        let c = Connectome::new(
            vec![vec![0.0, 1.0], vec![1.0, 0.0]],
            vec![vec![0.0, delay_mm], vec![delay_mm, 0.0]],
        )
        .unwrap();
        let sc = build_sparse(&c, 1.0, 0.1, 0.0).unwrap();
        (kernel, sc)
    }

    fn base_cfg(n_steps: u64) -> SimConfig {
        SimConfig {
            dt: 0.1,
            n_steps,
            seed: 31,
            integrator: Integrator::HeunStochastic,
            global_coupling: 0.5,
            noise_sigma: Some(vec![0.0]),
            init: InitPolicy::Explicit(vec![vec![0.3], vec![0.4]]),
            ..Default::default()
        }
    }

    #[test]
    fn plan_validates_geometry() {
        let (kernel, sc) = two_node_setup(1.0); // delay 10 steps
        let cfg = base_cfg(100);
        let mut cc = CosimConfig {
            proxy_regions: vec![0],
            ..Default::default()
        };
        let p = make_plan(&kernel, &sc, &cfg, &cc).unwrap();
        assert_eq!(p.lag, 10);
        assert_eq!(p.window, 10);
        assert_eq!(p.n_windows, 10);

        cc.window_steps = Some(11);
        let err = make_plan(&kernel, &sc, &cfg, &cc).err().unwrap();
        assert!(err.to_string().contains("exceeds"), "{err}");

        cc.window_steps = Some(0);
        assert!(make_plan(&kernel, &sc, &cfg, &cc).is_err());

        cc.window_steps = None;
        cc.proxy_regions = vec![5];
        assert!(make_plan(&kernel, &sc, &cfg, &cc).is_err());
        cc.proxy_regions = vec![];
        assert!(make_plan(&kernel, &sc, &cfg, &cc).is_err());
        cc.proxy_regions = vec![0, 0];
        assert!(make_plan(&kernel, &sc, &cfg, &cc).is_err());
    }

    #[test]
    fn zero_delay_edge_rejected() {
        let (kernel, sc) = two_node_setup(0.0);
        let cfg = base_cfg(10);
        let cc = CosimConfig {
            proxy_regions: vec![0],
            ..Default::default()
        };
        assert!(make_plan(&kernel, &sc, &cfg, &cc).is_err());
    }

    #[test]
    fn neuron_blocks_cover_everything() {
        let blocks = neuron_blocks(10, 3);
        assert_eq!(blocks, vec![0..4, 4..7, 7..10]);
        let blocks = neuron_blocks(4, 4);
        assert_eq!(blocks.iter().map(|b| b.len()).sum::<usize>(), 4);
    }

    #[test]
    fn silent_micro_one_way_equals_zero_held_proxy_run() {
        let (kernel, sc) = two_node_setup(1.0);
        let cfg = base_cfg(200);
        let cc = CosimConfig {
            proxy_regions: vec![0],
            direction: Direction::MacroToMicro,
            ..Default::default()
        };
        let lif = LifConfig {
            n_neurons: 20,
            w_external: 0.0, // micro stays silent no matter the drive
            ..Default::default()
        };
        let out = run_cosim(
            &kernel,
            &sc,
            &cfg,
            &ParamBindings::new(),
            &[MonitorSpec::raw(1)],
            None,
            &lif,
            &cc,
            TransportKind::InProcess,
        )
        .unwrap();

        // Plain engine run with proxy exposure zero-held.
        let mut sim = Simulation::new(&kernel, &sc, cfg, &ParamBindings::new()).unwrap();
        sim.add_monitor(MonitorSpec::raw(1)).unwrap();
        sim.set_exposure_override(0, Some(0.0));
        sim.run_to_end().unwrap();
        let reference = sim.into_output(None);

        assert_eq!(
            out.macro_out.final_state_checksum(),
            reference.final_state_checksum()
        );
        assert_eq!(out.macro_out.monitors[0].data, reference.monitors[0].data);
        assert!(out.micro_rates.data.iter().all(|r| r.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn window_size_does_not_change_macro_trajectory() {
        let (kernel, sc) = two_node_setup(1.0); // lag 10
        let cfg = base_cfg(300);
        let lif = LifConfig {
            n_neurons: 30,
            // One external spike is enough to fire a neuron, so the slow
            // Wong-Wang rates (a few Hz) still produce micro activity.
            w_external: 1.5,
            ..Default::default()
        };
        let mk = |window| CosimConfig {
            proxy_regions: vec![0],
            window_steps: Some(window),
            direction: Direction::Bidirectional,
            rate_gain: 5e-4,
            n_spike_trains: 40,
            smoothing_tau: 2.0,
            ..Default::default()
        };
        let lockstep = run_cosim(
            &kernel,
            &sc,
            &cfg,
            &ParamBindings::new(),
            &[MonitorSpec::raw(1)],
            None,
            &lif,
            &mk(1),
            TransportKind::InProcess,
        )
        .unwrap();
        let windowed = run_cosim(
            &kernel,
            &sc,
            &cfg,
            &ParamBindings::new(),
            &[MonitorSpec::raw(1)],
            None,
            &lif,
            &mk(10),
            TransportKind::InProcess,
        )
        .unwrap();
        assert_eq!(
            lockstep.macro_out.final_state_checksum(),
            windowed.macro_out.final_state_checksum()
        );
        assert_eq!(lockstep.micro_rates.data, windowed.micro_rates.data);
        // The micro side actually fired; the coupling is live.
        assert!(lockstep
            .micro_rates
            .data
            .iter()
            .any(|r| r.iter().any(|&v| v > 0.0)));
    }

    #[test]
    fn out_of_order_window_aborts() {
        // Drive the micro endpoint directly with a scripted peer that
        // replies to window boundary 1 with the wrong window index.
        struct Scripted {
            replies: Vec<Vec<u8>>,
        }
        impl FrameTransport for Scripted {
            fn send(&mut self, _frame: &[u8]) -> Result<()> {
                Ok(())
            }
            fn recv(&mut self) -> Result<Vec<u8>> {
                Ok(self.replies.remove(0))
            }
        }
        let bad = CosimMessage {
            window_index: 5, // expected 0
            t_start: 0.0,
            dt: 0.1,
            payload: Payload::Rates {
                n_proxies: 1,
                n_steps: 3,
                values: vec![0.0; 3],
            },
        };
        let params = MicroParams {
            lif: LifConfig {
                n_neurons: 4,
                conn_prob: 0.0,
                ..Default::default()
            },
            direction: Direction::Bidirectional,
            n_trains: 2,
            seed: 1,
            plan: Plan {
                proxies: vec![0],
                lag: 3,
                window: 3,
                n_windows: 2,
                n_steps: 6,
                dt: 0.1,
            },
        };
        let mut t = Scripted {
            replies: vec![bad.encode()],
        };
        let err = micro_endpoint(&params, &mut t).err().unwrap();
        assert!(
            matches!(err, CosimError::OutOfOrder { got: 5, expected: 0 }),
            "{err}"
        );
    }

    #[test]
    fn trailing_short_window_still_lockstep_equivalent() {
        let (kernel, sc) = two_node_setup(1.0); // lag 10
        let mut cfg = base_cfg(95); // 9 full windows + a 5-step tail
        cfg.noise_sigma = Some(vec![0.01]);
        let lif = LifConfig {
            n_neurons: 20,
            w_external: 1.5,
            ..Default::default()
        };
        let mk = |window| CosimConfig {
            proxy_regions: vec![0],
            window_steps: Some(window),
            direction: Direction::Bidirectional,
            rate_gain: 5e-4,
            n_spike_trains: 30,
            ..Default::default()
        };
        let a = run_cosim(
            &kernel,
            &sc,
            &cfg,
            &ParamBindings::new(),
            &[],
            None,
            &lif,
            &mk(1),
            TransportKind::InProcess,
        )
        .unwrap();
        let b = run_cosim(
            &kernel,
            &sc,
            &cfg,
            &ParamBindings::new(),
            &[],
            None,
            &lif,
            &mk(10),
            TransportKind::InProcess,
        )
        .unwrap();
        assert_eq!(
            a.macro_out.final_state_checksum(),
            b.macro_out.final_state_checksum()
        );
        assert_eq!(a.micro_rates.data, b.micro_rates.data);
        assert_eq!(a.micro_rates.n_samples(), 95);
    }

    #[test]
    fn socket_and_in_process_transports_agree() {
        let (kernel, sc) = two_node_setup(1.0);
        let cfg = base_cfg(150);
        let cc = CosimConfig {
            proxy_regions: vec![1],
            direction: Direction::Bidirectional,
            rate_gain: 0.001,
            n_spike_trains: 15,
            ..Default::default()
        };
        let lif = LifConfig {
            n_neurons: 25,
            ..Default::default()
        };
        let a = run_cosim(
            &kernel,
            &sc,
            &cfg,
            &ParamBindings::new(),
            &[MonitorSpec::raw(1)],
            None,
            &lif,
            &cc,
            TransportKind::InProcess,
        )
        .unwrap();
        let b = run_cosim(
            &kernel,
            &sc,
            &cfg,
            &ParamBindings::new(),
            &[MonitorSpec::raw(1)],
            None,
            &lif,
            &cc,
            TransportKind::Socket { port: 47251 },
        )
        .unwrap();
        assert_eq!(
            a.macro_out.final_state_checksum(),
            b.macro_out.final_state_checksum()
        );
        assert_eq!(a.macro_out.monitors[0].data, b.macro_out.monitors[0].data);
        assert_eq!(a.micro_rates.data, b.micro_rates.data);
    }
}
