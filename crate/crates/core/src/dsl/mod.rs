//! The XML model language: parse, validate, compile to bytecode, and the
//! built-in model registry.
//!
//! A model declares parameters, state variables with init ranges and
//! optional clamp bounds, derived variables (computed once per evaluation),
//! coupling terms with a per-edge `pre` expression, time derivatives (one
//! per state variable), exposures (the variables visible to the network and
//! monitors; the first is the coupling variable edges read), and per-state
//! noise amplitudes. The normative schema lives in docs/dsl.md.

mod builtin;
mod compile;
mod expr;
mod vm;
mod xml;

pub use builtin::{builtin_names, get_builtin, NativeDynamics};
pub use compile::{compile, CompiledModel, ExposureSource};
pub use expr::{parse_expr, BinOp, CmpOp, Expr, Func};
pub use vm::{Op, Program, VmScratch};
pub use xml::{parse_model, print_model};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DslError {
    #[error("{0}")]
    Xml(String),
    #[error("line {line}: unknown element <{name}>")]
    UnknownElement { name: String, line: usize },
    #[error("line {line}: unknown attribute {attr:?} on <{element}>")]
    UnknownAttribute {
        element: String,
        attr: String,
        line: usize,
    },
    #[error("line {line}: <{element}> is missing required attribute {attr:?}")]
    MissingAttribute {
        element: String,
        attr: String,
        line: usize,
    },
    #[error("line {line}: bad value for {attr:?} on <{element}>: {msg}")]
    BadAttribute {
        element: String,
        attr: String,
        line: usize,
        msg: String,
    },
    #[error("line {line}: duplicate name {name:?}")]
    DuplicateName { name: String, line: usize },
    #[error("{context}: undefined identifier {name:?}")]
    UndefinedIdentifier { name: String, context: String },
    #[error("{context}: {msg}")]
    BadExpression { context: String, msg: String },
    #[error("cyclic derived-variable dependency involving {0:?}")]
    CyclicDerived(String),
    #[error("state variable {0:?} has no time derivative")]
    MissingDerivative(String),
    #[error("invalid model: {0}")]
    Invalid(String),
    #[error("unknown model {name:?}; available built-ins: {available}")]
    UnknownModel { name: String, available: String },
    #[error("numeric fault evaluating {what}: {var} is {value}")]
    NumericFault {
        what: String,
        var: String,
        value: f64,
    },
}

pub type Result<T> = std::result::Result<T, DslError>;

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub default: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateVar {
    pub name: String,
    pub init_lo: f64,
    pub init_hi: f64,
    pub clamp: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DerivedVar {
    pub name: String,
    pub expr: Expr,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CouplingTerm {
    pub name: String,
    /// Per-edge transform applied to the delayed pre-synaptic exposure.
    /// May reference parameters and the reserved symbol `pre`.
    pub pre: Expr,
    /// When set, the engine feeds `pre` with (delayed source exposure −
    /// current target exposure) instead of the raw delayed value.
    pub difference: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Exposure {
    /// Name of a state or derived variable.
    pub of: String,
    /// Marks the firing-rate exposure used by co-simulation.
    pub rate: bool,
}

/// A validated model description. Derived variables are stored in
/// topological dependency order; `derivatives[i]` belongs to
/// `state_vars[i]`; `noise_sigma[i]` likewise.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub name: String,
    pub parameters: Vec<Parameter>,
    pub state_vars: Vec<StateVar>,
    pub derived_vars: Vec<DerivedVar>,
    pub coupling_terms: Vec<CouplingTerm>,
    pub exposures: Vec<Exposure>,
    pub derivatives: Vec<Expr>,
    pub noise_sigma: Vec<f64>,
}

impl ModelSpec {
    pub fn n_state(&self) -> usize {
        self.state_vars.len()
    }

    pub fn n_coupling(&self) -> usize {
        self.coupling_terms.len()
    }

    pub fn state_index(&self, name: &str) -> Option<usize> {
        self.state_vars.iter().position(|s| s.name == name)
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.parameters.iter().position(|p| p.name == name)
    }

    /// Index of the exposure marked as the firing rate, if any.
    pub fn rate_exposure(&self) -> Option<usize> {
        self.exposures.iter().position(|e| e.rate)
    }

    /// Checks all invariants and returns a copy with derived variables in
    /// topological order. Called by `parse_model`; public so that
    /// hand-constructed specs can be validated too.
    pub fn validated(mut self) -> Result<ModelSpec> {
        let n_state = self.state_vars.len();
        if n_state == 0 {
            return Err(DslError::Invalid("model has no state variables".into()));
        }
        if self.derivatives.len() != n_state {
            return Err(DslError::Invalid(format!(
                "{} derivatives for {n_state} state variables",
                self.derivatives.len()
            )));
        }
        if self.noise_sigma.len() != n_state {
            return Err(DslError::Invalid("noise_sigma length mismatch".into()));
        }
        if let Some(s) = self.noise_sigma.iter().find(|s| !(**s >= 0.0)) {
            return Err(DslError::Invalid(format!("negative noise sigma {s}")));
        }
        for sv in &self.state_vars {
            if !(sv.init_lo <= sv.init_hi) {
                return Err(DslError::Invalid(format!(
                    "state {}: init_lo {} > init_hi {}",
                    sv.name, sv.init_lo, sv.init_hi
                )));
            }
            if let Some((lo, hi)) = sv.clamp {
                if !(lo <= hi) {
                    return Err(DslError::Invalid(format!(
                        "state {}: clamp_lo {lo} > clamp_hi {hi}",
                        sv.name
                    )));
                }
            }
        }

        // Pairwise-disjoint names across all namespaces.
        let mut seen = std::collections::HashSet::new();
        let all_names = self
            .parameters
            .iter()
            .map(|p| &p.name)
            .chain(self.state_vars.iter().map(|s| &s.name))
            .chain(self.derived_vars.iter().map(|d| &d.name))
            .chain(self.coupling_terms.iter().map(|c| &c.name));
        for name in all_names {
            if name == "pre" {
                return Err(DslError::Invalid(
                    "`pre` is reserved for coupling expressions".into(),
                ));
            }
            if !seen.insert(name.clone()) {
                return Err(DslError::DuplicateName {
                    name: name.clone(),
                    line: 0,
                });
            }
        }

        self.derived_vars = topo_sort_derived(self.derived_vars)?;

        // Identifier resolution. Derived variables may only reference
        // earlier derived variables (guaranteed by the topological order).
        let resolvable = |upto_derived: usize| -> std::collections::HashSet<&str> {
            self.parameters
                .iter()
                .map(|p| p.name.as_str())
                .chain(self.state_vars.iter().map(|s| s.name.as_str()))
                .chain(
                    self.derived_vars[..upto_derived]
                        .iter()
                        .map(|d| d.name.as_str()),
                )
                .chain(self.coupling_terms.iter().map(|c| c.name.as_str()))
                .collect()
        };

        for (i, dv) in self.derived_vars.iter().enumerate() {
            check_idents(
                &dv.expr,
                &resolvable(i),
                &format!("derived variable {}", dv.name),
            )?;
        }
        let full = resolvable(self.derived_vars.len());
        for (sv, expr) in self.state_vars.iter().zip(&self.derivatives) {
            check_idents(expr, &full, &format!("derivative of {}", sv.name))?;
        }
        for ct in &self.coupling_terms {
            // `pre` expressions are edge-level: parameters and `pre` only.
            let mut scope: std::collections::HashSet<&str> =
                self.parameters.iter().map(|p| p.name.as_str()).collect();
            scope.insert("pre");
            check_idents(&ct.pre, &scope, &format!("coupling {} pre", ct.name))?;
        }

        for e in &self.exposures {
            let known = self.state_vars.iter().any(|s| s.name == e.of)
                || self.derived_vars.iter().any(|d| d.name == e.of);
            if !known {
                return Err(DslError::UndefinedIdentifier {
                    name: e.of.clone(),
                    context: "exposure".into(),
                });
            }
        }
        if self.exposures.is_empty() {
            return Err(DslError::Invalid("model declares no exposures".into()));
        }

        Ok(self)
    }
}

fn check_idents(
    expr: &Expr,
    scope: &std::collections::HashSet<&str>,
    context: &str,
) -> Result<()> {
    let mut bad = None;
    expr.for_each_ident(&mut |name| {
        if bad.is_none() && !scope.contains(name) {
            bad = Some(name.to_string());
        }
    });
    match bad {
        Some(name) => Err(DslError::UndefinedIdentifier {
            name,
            context: context.to_string(),
        }),
        None => Ok(()),
    }
}

/// Kahn's algorithm over derived-variable dependencies; stable with respect
/// to declaration order so repeated validation is idempotent.
fn topo_sort_derived(vars: Vec<DerivedVar>) -> Result<Vec<DerivedVar>> {
    let n = vars.len();
    let index: std::collections::HashMap<&str, usize> = vars
        .iter()
        .enumerate()
        .map(|(i, d)| (d.name.as_str(), i))
        .collect();
    let mut deps: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, d) in vars.iter().enumerate() {
        d.expr.for_each_ident(&mut |name| {
            if let Some(&j) = index.get(name) {
                deps[i].push(j);
            }
        });
    }
    let mut emitted = vec![false; n];
    let mut order = Vec::with_capacity(n);
    loop {
        let before = order.len();
        for i in 0..n {
            if !emitted[i] && deps[i].iter().all(|&j| emitted[j]) {
                emitted[i] = true;
                order.push(i);
            }
        }
        if order.len() == n {
            break;
        }
        if order.len() == before {
            let stuck = (0..n).find(|&i| !emitted[i]).unwrap();
            return Err(DslError::CyclicDerived(vars[stuck].name.clone()));
        }
    }
    let mut slots: Vec<Option<DerivedVar>> = vars.into_iter().map(Some).collect();
    Ok(order
        .into_iter()
        .map(|i| slots[i].take().unwrap())
        .collect())
}
