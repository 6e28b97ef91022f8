//! Built-in model registry: shipped XML assets plus hand-written native
//! kernels implementing the identical mathematics (the fast path).
//!
//! Native kernels are written against the asset's parameter order; the
//! native-vs-bytecode agreement tests catch any drift between the two.

use super::xml::parse_model;
use super::{DslError, ModelSpec, Result};
use std::sync::Arc;

pub const REDUCED_WONG_WANG_XML: &str =
    include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/../../assets/models/reduced_wong_wang.xml"));
pub const KURAMOTO_XML: &str =
    include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/../../assets/models/kuramoto.xml"));
pub const EPILEPTOR_XML: &str =
    include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/../../assets/models/epileptor.xml"));

/// Hand-written model dynamics with the same contract as the bytecode
/// kernel: pure functions of (state, coupling, params).
pub trait NativeDynamics: Send + Sync {
    fn derivatives(&self, state: &[f64], coupling: &[f64], params: &[f64], out: &mut [f64]);
    /// Coupling term k's per-edge pre transform.
    fn pre(&self, k: usize, x: f64) -> f64;
    /// All exposure values in declaration order.
    fn exposures(&self, state: &[f64], coupling: &[f64], params: &[f64], out: &mut [f64]);
}

pub fn builtin_names() -> &'static [&'static str] {
    &["ReducedWongWang", "Kuramoto", "Epileptor"]
}

/// Returns the shipped XML-derived spec plus the native kernel for a
/// built-in model name.
pub fn get_builtin(name: &str) -> Result<(ModelSpec, Option<Arc<dyn NativeDynamics>>)> {
    match name {
        "ReducedWongWang" => Ok((
            parse_model(REDUCED_WONG_WANG_XML)?,
            Some(Arc::new(ReducedWongWang)),
        )),
        "Kuramoto" => Ok((parse_model(KURAMOTO_XML)?, Some(Arc::new(Kuramoto)))),
        "Epileptor" => Ok((parse_model(EPILEPTOR_XML)?, Some(Arc::new(Epileptor)))),
        other => Err(DslError::UnknownModel {
            name: other.to_string(),
            available: builtin_names().join(", "),
        }),
    }
}

// --- ReducedWongWang -------------------------------------------------------

// Parameter order in reduced_wong_wang.xml.
mod rww {
    pub const A: usize = 0;
    pub const B: usize = 1;
    pub const D: usize = 2;
    pub const GAMMA: usize = 3;
    pub const TAU_S: usize = 4;
    pub const J: usize = 5;
    pub const W: usize = 6;
    pub const I_O: usize = 7;
    pub const RATE_SCALE: usize = 8;
}

struct ReducedWongWang;

impl ReducedWongWang {
    #[inline]
    fn rate(p: &[f64], s: f64, c: f64) -> f64 {
        let x = p[rww::W] * p[rww::J] * s + p[rww::J] * c + p[rww::I_O];
        let u = p[rww::A] * x - p[rww::B];
        let du = p[rww::D] * u;
        if du.abs() < 1e-9 {
            1.0 / p[rww::D] + u / 2.0
        } else {
            u / (1.0 - (-du).exp())
        }
    }
}

impl NativeDynamics for ReducedWongWang {
    fn derivatives(&self, state: &[f64], coupling: &[f64], p: &[f64], out: &mut [f64]) {
        let s = state[0];
        let r = Self::rate(p, s, coupling[0]);
        out[0] = -s / p[rww::TAU_S] + (1.0 - s) * p[rww::GAMMA] * r * p[rww::RATE_SCALE];
    }

    fn pre(&self, _k: usize, x: f64) -> f64 {
        x
    }

    fn exposures(&self, state: &[f64], coupling: &[f64], p: &[f64], out: &mut [f64]) {
        out[0] = state[0];
        out[1] = Self::rate(p, state[0], coupling[0]);
    }
}

// --- Kuramoto ---------------------------------------------------------------

struct Kuramoto;

impl NativeDynamics for Kuramoto {
    fn derivatives(&self, state: &[f64], coupling: &[f64], p: &[f64], out: &mut [f64]) {
        let _ = state;
        out[0] = p[0] + coupling[0];
    }

    fn pre(&self, _k: usize, x: f64) -> f64 {
        x.sin()
    }

    fn exposures(&self, state: &[f64], _coupling: &[f64], _p: &[f64], out: &mut [f64]) {
        out[0] = state[0];
    }
}

// --- Epileptor ---------------------------------------------------------------

// Parameter order in epileptor.xml.
mod epi {
    pub const A: usize = 0;
    pub const B: usize = 1;
    pub const C: usize = 2;
    pub const D: usize = 3;
    pub const R: usize = 4;
    pub const S: usize = 5;
    pub const X0: usize = 6;
    pub const IEXT: usize = 7;
    pub const SLOPE: usize = 8;
    pub const IEXT2: usize = 9;
    pub const TAU: usize = 10;
    pub const AA: usize = 11;
    pub const BB: usize = 12;
    pub const KVF: usize = 13;
    pub const KF: usize = 14;
    pub const KS: usize = 15;
    pub const TT: usize = 16;
}

struct Epileptor;

impl NativeDynamics for Epileptor {
    fn derivatives(&self, y: &[f64], coupling: &[f64], p: &[f64], out: &mut [f64]) {
        let (x1, y1, z, x2, y2, g) = (y[0], y[1], y[2], y[3], y[4], y[5]);
        let cp = coupling[0];
        let tt = p[epi::TT];

        let f1 = if x1 < 0.0 {
            -p[epi::A] * x1 * x1 + p[epi::B] * x1
        } else {
            p[epi::SLOPE] - x2 + 0.6 * (z - 4.0) * (z - 4.0)
        };
        let f2 = if x2 < -0.25 {
            0.0
        } else {
            p[epi::AA] * (x2 + 0.25)
        };
        let h = if z < 0.0 {
            p[epi::S] * (x1 - p[epi::X0]) - 0.1 * z.powi(7)
        } else {
            p[epi::S] * (x1 - p[epi::X0])
        };

        out[0] = tt * (y1 - z + p[epi::IEXT] + p[epi::KVF] * cp + f1 * x1);
        out[1] = tt * (p[epi::C] - p[epi::D] * x1 * x1 - y1);
        out[2] = tt * (p[epi::R] * (h - z + p[epi::KS] * cp));
        out[3] = tt * (-y2 + x2 - x2 * x2 * x2 + p[epi::IEXT2] + p[epi::BB] * g
            - 0.3 * (z - 3.5)
            + p[epi::KF] * cp);
        out[4] = tt * ((-y2 + f2) / p[epi::TAU]);
        out[5] = tt * (-0.01 * (g - 0.1 * x1));
    }

    fn pre(&self, _k: usize, x: f64) -> f64 {
        x
    }

    fn exposures(&self, state: &[f64], _coupling: &[f64], _p: &[f64], out: &mut [f64]) {
        out[0] = state[0];
    }
}

#[cfg(test)]
mod tests {
    use super::super::compile::compile;
    use super::*;
    use crate::rng::{draw_unit_f64, mix_key};

    #[test]
    fn registry_contents() {
        let (spec, native) = get_builtin("ReducedWongWang").unwrap();
        assert_eq!(spec.n_state(), 1);
        assert!(spec.parameters.len() >= 9);
        assert_eq!(spec.n_coupling(), 1);
        assert!(native.is_some());

        let (spec, _) = get_builtin("Kuramoto").unwrap();
        assert_eq!(spec.n_state(), 1);

        let (spec, _) = get_builtin("Epileptor").unwrap();
        assert_eq!(spec.n_state(), 6);

        let Err(err) = get_builtin("Montbrio") else {
            panic!("Montbrio should be unknown")
        };
        let err = err.to_string();
        assert!(err.contains("Montbrio") && err.contains("Kuramoto"), "{err}");
    }

    #[test]
    fn rww_guarded_singularity() {
        // x = b/a = 0.4 forces u = 0; the guarded limit gives r = 1/d.
        let (spec, _) = get_builtin("ReducedWongWang").unwrap();
        let m = compile(&spec).unwrap();
        let p = m.default_params();
        let c = (0.4 - 0.3) / 0.2609; // J*c + I_o = 0.4 at S = 0
        let mut out = [0.0; 2];
        let mut scratch = super::super::VmScratch::default();
        m.eval_exposures(&[0.0], &[c], &p, &mut scratch, &mut out);
        assert!((out[1] - 1.0 / 0.154).abs() < 1e-9, "r = {}", out[1]);
        assert!((out[1] - 6.4935).abs() < 1e-3);
    }

    #[test]
    fn kuramoto_uncoupled_derivative_is_omega() {
        let (spec, native) = get_builtin("Kuramoto").unwrap();
        let m = compile(&spec).unwrap();
        let d = m.eval_derivatives(&[1.23], &[0.0], &[0.2]).unwrap();
        assert_eq!(d[0], 0.2);
        let mut out = [0.0];
        native.unwrap().derivatives(&[1.23], &[0.0], &[0.2], &mut out);
        assert_eq!(out[0], 0.2);
    }

    #[test]
    fn native_matches_bytecode_on_random_points() {
        for name in builtin_names() {
            let (spec, native) = get_builtin(name).unwrap();
            let native = native.unwrap();
            let m = compile(&spec).unwrap();
            let p = m.default_params();
            let mut scratch = super::super::VmScratch::default();
            for i in 0..1000u64 {
                let r = |j: u64, lo: f64, hi: f64| {
                    lo + (hi - lo) * draw_unit_f64(mix_key(&[13, i, j]), 0)
                };
                let state: Vec<f64> = (0..m.n_state)
                    .map(|k| {
                        let (lo, hi) = m.init_ranges[k];
                        r(k as u64, lo, hi)
                    })
                    .collect();
                let coupling: Vec<f64> = (0..m.n_coupling)
                    .map(|k| r(100 + k as u64, -1.0, 1.0))
                    .collect();

                let mut want = vec![0.0; m.n_state];
                native.derivatives(&state, &coupling, &p, &mut want);
                let mut got = vec![0.0; m.n_state];
                m.eval_derivatives_raw(&state, &coupling, &p, &mut scratch, &mut got);
                for k in 0..m.n_state {
                    assert!(
                        (got[k] - want[k]).abs() <= 1e-12 * (1.0 + want[k].abs()),
                        "{name} var {k}: bytecode {} vs native {}",
                        got[k],
                        want[k]
                    );
                }

                // Pre transforms and exposures agree too.
                for k in 0..m.n_coupling {
                    let x = r(200 + k as u64, -3.0, 3.0);
                    let a = m.eval_pre(k, x).unwrap();
                    let b = native.pre(k, x);
                    assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
                }
                let ne = m.n_exposures();
                let mut ea = vec![0.0; ne];
                let mut eb = vec![0.0; ne];
                m.eval_exposures(&state, &coupling, &p, &mut scratch, &mut ea);
                native.exposures(&state, &coupling, &p, &mut eb);
                for k in 0..ne {
                    assert!(
                        (ea[k] - eb[k]).abs() <= 1e-12 * (1.0 + eb[k].abs()),
                        "{name} exposure {k}"
                    );
                }
            }
        }
    }
}
