//! Independent reference implementations used as oracles by the test
//! suites in this workspace (enabled by the `testref` feature; not part of
//! the public API).
//!
//! The dense reference simulator shares nothing with the engine's hot
//! path: it stores the full dense weight and delay matrices, keeps the
//! complete exposure history for every step, and evaluates model equations
//! by walking the expression trees directly instead of running bytecode or
//! native kernels.

use crate::connectome::Connectome;
use crate::dsl::{Expr, ModelSpec};
use crate::engine::{Integrator, ParamValue};
use crate::rng::{draw_unit_f64, mix_key};
use std::collections::HashMap;

/// Uniformly random connectome for property tests: off-diagonal edges with
/// the given density, weights in (0.1, 1.1), tract lengths in (1, 50) mm,
/// centres and labels present.
pub fn random_connectome(n: usize, density: f64, seed: u64) -> Connectome {
    let mut weights = vec![vec![0.0; n]; n];
    let mut lengths = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let key = mix_key(&[seed, i as u64, j as u64]);
            if draw_unit_f64(key, 0) < density {
                weights[i][j] = 0.1 + draw_unit_f64(key, 1);
                lengths[i][j] = 1.0 + 49.0 * draw_unit_f64(key, 2);
            }
        }
    }
    let centres = (0..n)
        .map(|i| {
            let key = mix_key(&[seed, 7777, i as u64]);
            [
                draw_unit_f64(key, 0) * 100.0,
                draw_unit_f64(key, 1) * 100.0,
                draw_unit_f64(key, 2) * 100.0,
            ]
        })
        .collect();
    let mut c = Connectome::new(weights, lengths).unwrap();
    c.centres = Some(centres);
    c
}

/// Scalar-or-vector parameter lookup for one region.
fn param_for(defaults: &[(String, f64)], overrides: &[(String, ParamValue)], region: usize) -> HashMap<String, f64> {
    let mut map: HashMap<String, f64> = defaults.iter().cloned().collect();
    for (name, value) in overrides {
        let v = match value {
            ParamValue::Scalar(v) => *v,
            ParamValue::PerRegion(vs) => vs[region],
        };
        map.insert(name.clone(), v);
    }
    map
}

/// Full-history dense reference run. Returns (per-step exposure-0 history
/// including the initial row, final state [region][var], per-step coupling
/// inputs of term 0).
pub struct DenseRun {
    /// exposure0[t][region] for t = 0..=n_steps.
    pub exposure0: Vec<Vec<f64>>,
    pub final_state: Vec<Vec<f64>>,
    /// coupling[t][region]: term-0 input used by step t (t = 0..n_steps).
    pub coupling0: Vec<Vec<f64>>,
}

#[allow(clippy::too_many_arguments)]
pub fn dense_reference_run(
    spec: &ModelSpec,
    connectome: &Connectome,
    conduction_speed: f64,
    dt: f64,
    weight_threshold: f64,
    g: f64,
    integrator: Integrator,
    n_steps: usize,
    init: &[Vec<f64>],
    overrides: &[(String, ParamValue)],
) -> DenseRun {
    let spec = spec.clone().validated().expect("valid spec");
    let n = connectome.n_regions;
    let n_state = spec.n_state();
    assert_eq!(init.len(), n);

    // Dense delay matrix in steps; usize::MAX marks "no edge".
    let mut delay = vec![vec![usize::MAX; n]; n];
    for i in 0..n {
        for j in 0..n {
            if connectome.weights[i][j] > weight_threshold {
                delay[i][j] =
                    (connectome.tract_lengths[i][j] / (conduction_speed * dt)).round() as usize;
            }
        }
    }

    let defaults: Vec<(String, f64)> = spec
        .parameters
        .iter()
        .map(|p| (p.name.clone(), p.default))
        .collect();
    let params: Vec<HashMap<String, f64>> = (0..n)
        .map(|i| param_for(&defaults, overrides, i))
        .collect();

    // Pre expressions see parameter defaults only (edge-level transforms).
    let default_map: HashMap<String, f64> = defaults.iter().cloned().collect();
    let eval_pre = |k: usize, x: f64| -> f64 {
        let lookup = |name: &str| {
            if name == "pre" {
                Some(x)
            } else {
                default_map.get(name).copied()
            }
        };
        spec.coupling_terms[k].pre.eval(&lookup).unwrap()
    };

    // Evaluates derived variables then an expression, by tree walking.
    let eval_with = |expr: &Expr, state: &[f64], coupling: &[f64], region: usize| -> f64 {
        let mut env: HashMap<&str, f64> = HashMap::new();
        for (v, sv) in spec.state_vars.iter().enumerate() {
            env.insert(sv.name.as_str(), state[v]);
        }
        for (k, ct) in spec.coupling_terms.iter().enumerate() {
            env.insert(ct.name.as_str(), coupling[k]);
        }
        let pmap = &params[region];
        for dv in &spec.derived_vars {
            let value = dv
                .expr
                .eval(&|name| env.get(name).copied().or_else(|| pmap.get(name).copied()))
                .unwrap();
            env.insert(dv.name.as_str(), value);
        }
        expr.eval(&|name| env.get(name).copied().or_else(|| pmap.get(name).copied()))
            .unwrap()
    };

    let exposure0_of = |state: &[f64], coupling: &[f64], region: usize| -> f64 {
        let name = &spec.exposures[0].of;
        if let Some(v) = spec.state_index(name) {
            state[v]
        } else {
            let dv = spec.derived_vars.iter().find(|d| &d.name == name).unwrap();
            eval_with(&dv.expr.clone(), state, coupling, region)
        }
    };

    let mut state: Vec<Vec<f64>> = init.to_vec();
    let zero_c = vec![0.0; spec.n_coupling()];
    let mut exposure0: Vec<Vec<f64>> = Vec::with_capacity(n_steps + 1);
    exposure0.push(
        (0..n)
            .map(|i| exposure0_of(&state[i], &zero_c, i))
            .collect(),
    );
    let mut coupling0: Vec<Vec<f64>> = Vec::with_capacity(n_steps);

    for t in 0..n_steps {
        // Coupling from the complete history (reads committed exposures;
        // values before the start fall back to the initial row).
        let mut coupling: Vec<Vec<f64>> = vec![vec![0.0; spec.n_coupling()]; n];
        for i in 0..n {
            for k in 0..spec.n_coupling() {
                let difference = spec.coupling_terms[k].difference;
                let mut acc = 0.0;
                for j in 0..n {
                    let d = delay[i][j];
                    if d == usize::MAX {
                        continue;
                    }
                    let hist_idx = t.saturating_sub(d);
                    let mut v = exposure0[hist_idx][j];
                    if difference {
                        v -= exposure0[t][i];
                    }
                    acc += connectome.weights[i][j] * eval_pre(k, v);
                }
                coupling[i][k] = g * acc;
            }
        }
        coupling0.push(coupling.iter().map(|c| c.first().copied().unwrap_or(0.0)).collect());

        let mut next: Vec<Vec<f64>> = Vec::with_capacity(n);
        for i in 0..n {
            let derivs: Vec<f64> = spec
                .derivatives
                .iter()
                .map(|d| eval_with(d, &state[i], &coupling[i], i))
                .collect();
            let mut s_new = vec![0.0; n_state];
            match integrator {
                Integrator::EulerMaruyama => {
                    for v in 0..n_state {
                        s_new[v] = state[i][v] + dt * derivs[v];
                    }
                }
                Integrator::HeunStochastic => {
                    let mut pred = vec![0.0; n_state];
                    for v in 0..n_state {
                        pred[v] = state[i][v] + dt * derivs[v];
                    }
                    let derivs2: Vec<f64> = spec
                        .derivatives
                        .iter()
                        .map(|d| eval_with(d, &pred, &coupling[i], i))
                        .collect();
                    for v in 0..n_state {
                        s_new[v] = state[i][v] + 0.5 * dt * (derivs[v] + derivs2[v]);
                    }
                }
            }
            for (v, sv) in spec.state_vars.iter().enumerate() {
                if let Some((lo, hi)) = sv.clamp {
                    s_new[v] = s_new[v].clamp(lo, hi);
                }
            }
            next.push(s_new);
        }
        state = next;
        exposure0.push(
            (0..n)
                .map(|i| {
                    let c = &coupling[i];
                    exposure0_of(&state[i], c, i)
                })
                .collect(),
        );
    }

    DenseRun {
        exposure0,
        final_state: state,
        coupling0,
    }
}

/// Bisection solve of the uncoupled Wong-Wang fixed point
/// S/tau_s = (1 - S)·gamma·H(a(wJS + I_o) - b)·rate_scale on [0, 1].
#[allow(clippy::too_many_arguments)]
pub fn rww_fixed_point(
    a: f64,
    b: f64,
    d: f64,
    gamma: f64,
    tau_s: f64,
    j: f64,
    w: f64,
    i_o: f64,
    rate_scale: f64,
) -> f64 {
    let h = |u: f64| {
        let du = d * u;
        if du.abs() < 1e-9 {
            1.0 / d + u / 2.0
        } else {
            u / (1.0 - (-du).exp())
        }
    };
    let g = |s: f64| -> f64 {
        let x = w * j * s + i_o;
        -s / tau_s + (1.0 - s) * gamma * h(a * x - b) * rate_scale
    };
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    assert!(g(lo) > 0.0 && g(hi) < 0.0, "no sign change on [0, 1]");
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}
