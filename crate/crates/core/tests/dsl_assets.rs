//! Shipped model assets: golden structure checks, printer idempotence, and
//! compiled-vs-interpreted agreement on the real model expressions.

use neuroloom_core::dsl::{
    builtin_names, compile, get_builtin, parse_model, print_model, Expr, VmScratch,
};
use neuroloom_core::rng::{draw_unit_f64, mix_key};
use std::collections::HashMap;

#[test]
fn reduced_wong_wang_asset_structure() {
    let (spec, _) = get_builtin("ReducedWongWang").unwrap();
    assert_eq!(spec.n_state(), 1);
    assert!(spec.parameters.len() >= 9, "{}", spec.parameters.len());
    assert_eq!(spec.n_coupling(), 1);
    assert_eq!(spec.exposures[0].of, "S");
    assert_eq!(spec.rate_exposure(), Some(1));
    assert_eq!(spec.state_vars[0].clamp, Some((0.0, 1.0)));
}

#[test]
fn epileptor_asset_structure() {
    let (spec, _) = get_builtin("Epileptor").unwrap();
    assert_eq!(spec.n_state(), 6);
    assert_eq!(
        spec.state_vars.iter().map(|s| s.name.as_str()).collect::<Vec<_>>(),
        vec!["x1", "y1", "z", "x2", "y2", "g"]
    );
    assert_eq!(spec.exposures[0].of, "x1");
    assert!(spec.coupling_terms[0].difference);
    let m = compile(&spec).unwrap();
    assert_eq!(m.n_state, 6);
}

#[test]
fn kuramoto_asset_structure() {
    let (spec, _) = get_builtin("Kuramoto").unwrap();
    assert_eq!(spec.n_state(), 1);
    assert!(spec.coupling_terms[0].difference);
}

#[test]
fn print_parse_idempotent_for_all_assets() {
    for name in builtin_names() {
        let (spec, _) = get_builtin(name).unwrap();
        let printed = print_model(&spec);
        let reparsed = parse_model(&printed).unwrap();
        assert_eq!(spec, reparsed, "{name}");
        assert_eq!(printed, print_model(&reparsed), "{name}");
    }
}

/// Bytecode vs direct AST interpretation on 1000 random points per model.
#[test]
fn compiled_matches_interpreter_for_all_assets() {
    for name in builtin_names() {
        let (spec, _) = get_builtin(name).unwrap();
        let m = compile(&spec).unwrap();
        let mut scratch = VmScratch::default();
        let params: HashMap<String, f64> = spec
            .parameters
            .iter()
            .map(|p| (p.name.clone(), p.default))
            .collect();

        for trial in 0..1000u64 {
            let r = |j: u64, lo: f64, hi: f64| {
                lo + (hi - lo) * draw_unit_f64(mix_key(&[91, trial, j]), 0)
            };
            let state: Vec<f64> = (0..m.n_state)
                .map(|v| {
                    let (lo, hi) = m.init_ranges[v];
                    r(v as u64, lo, hi)
                })
                .collect();
            let coupling: Vec<f64> = (0..m.n_coupling)
                .map(|k| r(64 + k as u64, -0.5, 0.5))
                .collect();

            let mut got = vec![0.0; m.n_state];
            m.eval_derivatives_raw(
                &state,
                &coupling,
                &m.default_params(),
                &mut scratch,
                &mut got,
            );

            // Interpreter path: resolve derived variables by tree walking.
            let mut env: HashMap<String, f64> = params.clone();
            for (v, sv) in spec.state_vars.iter().enumerate() {
                env.insert(sv.name.clone(), state[v]);
            }
            for (k, ct) in spec.coupling_terms.iter().enumerate() {
                env.insert(ct.name.clone(), coupling[k]);
            }
            for dv in &spec.derived_vars {
                let value = dv.expr.eval(&|n| env.get(n).copied()).unwrap();
                env.insert(dv.name.clone(), value);
            }
            let eval = |e: &Expr| e.eval(&|n| env.get(n).copied()).unwrap();
            for (slot, d) in spec.derivatives.iter().enumerate() {
                let want = eval(d);
                assert!(
                    (got[slot] - want).abs() <= 1e-14 * (1.0 + want.abs()),
                    "{name} derivative {slot}: bytecode {} vs interpreter {want}",
                    got[slot]
                );
            }
        }
    }
}
