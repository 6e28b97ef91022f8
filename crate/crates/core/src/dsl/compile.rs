//! Compiles a validated ModelSpec into an executable bytecode kernel.
//!
//! Pure-literal subtrees are folded at compile time, derived variables are
//! computed once per evaluation and reused, and the constant pool is
//! deduplicated by bit pattern. Coupling `pre` expressions are compiled to
//! standalone programs with parameter defaults substituted (they are
//! edge-level transforms with no per-node parameter context).

use super::expr::{BinOp, CmpOp, Expr, Func};
use super::vm::{run_program, Op, Program, VmScratch};
use super::{DslError, ModelSpec, Result};

/// Where an exposure reads its value from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExposureSource {
    State(usize),
    Derived(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompiledModel {
    pub name: String,
    pub n_state: usize,
    pub n_coupling: usize,
    /// Ordered parameter names with defaults; the engine binds values by
    /// this layout.
    pub param_layout: Vec<super::Parameter>,
    /// Derived-variable section followed by one StoreOut per derivative.
    pub program: Program,
    pub n_derived: usize,
    /// One expression program per coupling term; uses LoadPre.
    pub pre_programs: Vec<Program>,
    /// Per coupling term: engine passes (delayed source − current target).
    pub difference: Vec<bool>,
    pub noise_sigma: Vec<f64>,
    /// Exposure slots in declaration order; index 0 is the coupling
    /// variable read by edges.
    pub exposures: Vec<(String, ExposureSource)>,
    /// Index into `exposures` of the firing-rate exposure, if declared.
    pub rate_exposure: Option<usize>,
    pub init_ranges: Vec<(f64, f64)>,
    pub clamp: Vec<Option<(f64, f64)>>,
    pub state_names: Vec<String>,
}

impl CompiledModel {
    pub fn n_exposures(&self) -> usize {
        self.exposures.len()
    }

    /// True when every exposure is a plain state variable (fast path: no
    /// extra program run at commit time).
    pub fn exposures_are_state_only(&self) -> bool {
        self.exposures
            .iter()
            .all(|(_, s)| matches!(s, ExposureSource::State(_)))
    }

    /// Default parameter vector in layout order.
    pub fn default_params(&self) -> Vec<f64> {
        self.param_layout.iter().map(|p| p.default).collect()
    }

    /// Evaluates d(state)/dt into `out`, reusing `scratch`. No finiteness
    /// checks; the engine validates updated state instead.
    #[inline]
    pub fn eval_derivatives_raw(
        &self,
        state: &[f64],
        coupling: &[f64],
        params: &[f64],
        scratch: &mut VmScratch,
        out: &mut [f64],
    ) {
        scratch.prepare(&self.program, self.n_derived);
        run_program(&self.program, state, coupling, params, 0.0, scratch, out);
    }

    /// Checked evaluation: returns the derivative vector or a numeric fault
    /// naming the offending state variable.
    pub fn eval_derivatives(
        &self,
        state: &[f64],
        coupling: &[f64],
        params: &[f64],
    ) -> Result<Vec<f64>> {
        assert_eq!(state.len(), self.n_state, "state length");
        assert_eq!(coupling.len(), self.n_coupling, "coupling length");
        assert_eq!(params.len(), self.param_layout.len(), "params length");
        let mut scratch = VmScratch::default();
        let mut out = vec![0.0; self.n_state];
        self.eval_derivatives_raw(state, coupling, params, &mut scratch, &mut out);
        for (i, v) in out.iter().enumerate() {
            if !v.is_finite() {
                return Err(DslError::NumericFault {
                    what: "derivative".into(),
                    var: self.state_names[i].clone(),
                    value: *v,
                });
            }
        }
        Ok(out)
    }

    /// Applies coupling term k's `pre` expression to a delayed pre-synaptic
    /// value.
    #[inline]
    pub fn eval_pre_raw(&self, k: usize, pre_value: f64, scratch: &mut VmScratch) -> f64 {
        scratch.stack.clear();
        run_program(
            &self.pre_programs[k],
            &[],
            &[],
            &[],
            pre_value,
            scratch,
            &mut [],
        )
    }

    pub fn eval_pre(&self, k: usize, pre_value: f64) -> Result<f64> {
        assert!(k < self.n_coupling, "coupling term index");
        let mut scratch = VmScratch::default();
        let v = self.eval_pre_raw(k, pre_value, &mut scratch);
        if !v.is_finite() {
            return Err(DslError::NumericFault {
                what: format!("coupling pre #{k}"),
                var: "pre".into(),
                value: v,
            });
        }
        Ok(v)
    }

    /// Writes all exposure values for a node into `out`. Derived exposures
    /// are evaluated with the given state and coupling.
    #[inline]
    pub fn eval_exposures(
        &self,
        state: &[f64],
        coupling: &[f64],
        params: &[f64],
        scratch: &mut VmScratch,
        out: &mut [f64],
    ) {
        if !self.exposures_are_state_only() {
            // Run the derived section to populate the slots.
            scratch.prepare(&self.program, self.n_derived);
            let mut sink = vec![0.0; self.n_state];
            run_program(
                &self.program,
                state,
                coupling,
                params,
                0.0,
                scratch,
                &mut sink,
            );
        }
        for (i, (_, src)) in self.exposures.iter().enumerate() {
            out[i] = match src {
                ExposureSource::State(k) => state[*k],
                ExposureSource::Derived(k) => scratch.derived[*k],
            };
        }
    }
}

// ---------------------------------------------------------------------------
// Constant folding
// ---------------------------------------------------------------------------

/// Reduces pure-literal subtrees. Values match evaluation exactly: folding
/// uses the same f64 operations as the VM.
pub(crate) fn fold(expr: &Expr) -> Expr {
    match expr {
        Expr::Const(_) | Expr::Ident(_) => expr.clone(),
        Expr::Neg(e) => {
            let e = fold(e);
            match e {
                Expr::Const(v) => Expr::Const(-v),
                other => Expr::Neg(Box::new(other)),
            }
        }
        Expr::Bin(op, a, b) => {
            let (a, b) = (fold(a), fold(b));
            if let (Expr::Const(x), Expr::Const(y)) = (&a, &b) {
                return Expr::Const(match op {
                    BinOp::Add => x + y,
                    BinOp::Sub => x - y,
                    BinOp::Mul => x * y,
                    BinOp::Div => x / y,
                    BinOp::Pow => x.powf(*y),
                });
            }
            Expr::Bin(*op, Box::new(a), Box::new(b))
        }
        Expr::Cmp(op, a, b) => {
            let (a, b) = (fold(a), fold(b));
            if let (Expr::Const(x), Expr::Const(y)) = (&a, &b) {
                let t = match op {
                    CmpOp::Lt => x < y,
                    CmpOp::Le => x <= y,
                    CmpOp::Gt => x > y,
                    CmpOp::Ge => x >= y,
                    CmpOp::Eq => x == y,
                };
                return Expr::Const(if t { 1.0 } else { 0.0 });
            }
            Expr::Cmp(*op, Box::new(a), Box::new(b))
        }
        Expr::Call(f, args) => {
            let args: Vec<Expr> = args.iter().map(fold).collect();
            let lits: Option<Vec<f64>> = args
                .iter()
                .map(|a| match a {
                    Expr::Const(v) => Some(*v),
                    _ => None,
                })
                .collect();
            if let Some(v) = lits {
                return Expr::Const(match f {
                    Func::Sin => v[0].sin(),
                    Func::Cos => v[0].cos(),
                    Func::Tan => v[0].tan(),
                    Func::Exp => v[0].exp(),
                    Func::Log => v[0].ln(),
                    Func::Sqrt => v[0].sqrt(),
                    Func::Abs => v[0].abs(),
                    Func::Tanh => v[0].tanh(),
                    Func::Pow => v[0].powf(v[1]),
                    Func::Min => v[0].min(v[1]),
                    Func::Max => v[0].max(v[1]),
                    Func::If => {
                        if v[0] != 0.0 {
                            v[1]
                        } else {
                            v[2]
                        }
                    }
                });
            }
            Expr::Call(*f, args)
        }
    }
}

/// Substitutes identifiers with literal values (used to bake parameter
/// defaults into `pre` programs).
fn substitute(expr: &Expr, lookup: &dyn Fn(&str) -> Option<f64>) -> Expr {
    match expr {
        Expr::Ident(name) => match lookup(name) {
            Some(v) => Expr::Const(v),
            None => expr.clone(),
        },
        Expr::Const(_) => expr.clone(),
        Expr::Neg(e) => Expr::Neg(Box::new(substitute(e, lookup))),
        Expr::Bin(op, a, b) => Expr::Bin(
            *op,
            Box::new(substitute(a, lookup)),
            Box::new(substitute(b, lookup)),
        ),
        Expr::Cmp(op, a, b) => Expr::Cmp(
            *op,
            Box::new(substitute(a, lookup)),
            Box::new(substitute(b, lookup)),
        ),
        Expr::Call(f, args) => {
            Expr::Call(*f, args.iter().map(|a| substitute(a, lookup)).collect())
        }
    }
}

// ---------------------------------------------------------------------------
// Code generation
// ---------------------------------------------------------------------------

struct Codegen<'a> {
    spec: &'a ModelSpec,
    ops: Vec<Op>,
    consts: Vec<f64>,
}

impl<'a> Codegen<'a> {
    fn const_slot(&mut self, v: f64) -> u32 {
        match self
            .consts
            .iter()
            .position(|c| c.to_bits() == v.to_bits())
        {
            Some(i) => i as u32,
            None => {
                self.consts.push(v);
                (self.consts.len() - 1) as u32
            }
        }
    }

    fn emit_expr(&mut self, expr: &Expr, allow_pre: bool) -> Result<()> {
        match expr {
            Expr::Const(v) => {
                let k = self.const_slot(*v);
                self.ops.push(Op::PushConst(k));
            }
            Expr::Ident(name) => {
                if allow_pre && name == "pre" {
                    self.ops.push(Op::LoadPre);
                } else if let Some(i) = self.spec.state_index(name) {
                    self.ops.push(Op::LoadState(i as u16));
                } else if let Some(i) = self.spec.param_index(name) {
                    self.ops.push(Op::LoadParam(i as u16));
                } else if let Some(i) = self
                    .spec
                    .derived_vars
                    .iter()
                    .position(|d| &d.name == name)
                {
                    self.ops.push(Op::LoadDerived(i as u16));
                } else if let Some(i) = self
                    .spec
                    .coupling_terms
                    .iter()
                    .position(|c| &c.name == name)
                {
                    self.ops.push(Op::LoadCoupling(i as u16));
                } else {
                    // Validation should have caught this.
                    return Err(DslError::UndefinedIdentifier {
                        name: name.clone(),
                        context: "codegen".into(),
                    });
                }
            }
            Expr::Neg(e) => {
                self.emit_expr(e, allow_pre)?;
                self.ops.push(Op::Neg);
            }
            Expr::Bin(op, a, b) => {
                self.emit_expr(a, allow_pre)?;
                self.emit_expr(b, allow_pre)?;
                self.ops.push(match op {
                    BinOp::Add => Op::Add,
                    BinOp::Sub => Op::Sub,
                    BinOp::Mul => Op::Mul,
                    BinOp::Div => Op::Div,
                    BinOp::Pow => Op::Pow,
                });
            }
            Expr::Cmp(op, a, b) => {
                self.emit_expr(a, allow_pre)?;
                self.emit_expr(b, allow_pre)?;
                self.ops.push(match op {
                    CmpOp::Lt => Op::Lt,
                    CmpOp::Le => Op::Le,
                    CmpOp::Gt => Op::Gt,
                    CmpOp::Ge => Op::Ge,
                    CmpOp::Eq => Op::Eq,
                });
            }
            Expr::Call(f, args) => {
                for a in args {
                    self.emit_expr(a, allow_pre)?;
                }
                self.ops.push(match f {
                    Func::Sin => Op::Sin,
                    Func::Cos => Op::Cos,
                    Func::Tan => Op::Tan,
                    Func::Exp => Op::Exp,
                    Func::Log => Op::Log,
                    Func::Sqrt => Op::Sqrt,
                    Func::Abs => Op::Abs,
                    Func::Tanh => Op::Tanh,
                    Func::Pow => Op::Pow,
                    Func::Min => Op::Min,
                    Func::Max => Op::Max,
                    Func::If => Op::Select,
                });
            }
        }
        Ok(())
    }
}

/// Compiles a validated spec. The spec's invariants are re-checked
/// defensively via `validated()`.
pub fn compile(spec: &ModelSpec) -> Result<CompiledModel> {
    let spec = spec.clone().validated()?;
    let n_state = spec.n_state();
    let n_coupling = spec.n_coupling();
    let n_params = spec.parameters.len();
    let n_derived = spec.derived_vars.len();

    let mut cg = Codegen {
        spec: &spec,
        ops: Vec::new(),
        consts: Vec::new(),
    };
    for (i, dv) in spec.derived_vars.iter().enumerate() {
        let folded = fold(&dv.expr);
        cg.emit_expr(&folded, false)?;
        cg.ops.push(Op::StoreDerived(i as u16));
    }
    for (i, d) in spec.derivatives.iter().enumerate() {
        let folded = fold(d);
        cg.emit_expr(&folded, false)?;
        cg.ops.push(Op::StoreOut(i as u16));
    }
    let program = Program::build(
        cg.ops,
        cg.consts,
        n_state,
        n_coupling,
        n_params,
        n_derived,
        n_state,
    )
    .map_err(DslError::Invalid)?;

    let mut pre_programs = Vec::with_capacity(n_coupling);
    for ct in &spec.coupling_terms {
        let defaults = spec.parameters.clone();
        let baked = substitute(&ct.pre, &|name| {
            defaults
                .iter()
                .find(|p| p.name == name)
                .map(|p| p.default)
        });
        let folded = fold(&baked);
        let mut cg = Codegen {
            spec: &spec,
            ops: Vec::new(),
            consts: Vec::new(),
        };
        cg.emit_expr(&folded, true)?;
        pre_programs.push(
            Program::build(cg.ops, cg.consts, 0, 0, 0, 0, 0).map_err(DslError::Invalid)?,
        );
    }

    let exposures = spec
        .exposures
        .iter()
        .map(|e| {
            let src = if let Some(i) = spec.state_index(&e.of) {
                ExposureSource::State(i)
            } else {
                let i = spec
                    .derived_vars
                    .iter()
                    .position(|d| d.name == e.of)
                    .expect("validated exposure");
                ExposureSource::Derived(i)
            };
            (e.of.clone(), src)
        })
        .collect();

    Ok(CompiledModel {
        name: spec.name.clone(),
        n_state,
        n_coupling,
        param_layout: spec.parameters.clone(),
        program,
        n_derived,
        pre_programs,
        difference: spec.coupling_terms.iter().map(|c| c.difference).collect(),
        noise_sigma: spec.noise_sigma.clone(),
        exposures,
        rate_exposure: spec.rate_exposure(),
        init_ranges: spec
            .state_vars
            .iter()
            .map(|s| (s.init_lo, s.init_hi))
            .collect(),
        clamp: spec.state_vars.iter().map(|s| s.clamp).collect(),
        state_names: spec.state_vars.iter().map(|s| s.name.clone()).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::super::xml::parse_model;
    use super::*;
    use crate::rng::{mix_key, draw_unit_f64};

    fn linear_model() -> CompiledModel {
        let xml = r#"<Model name="lin">
  <StateVariable name="x" init_lo="0" init_hi="1"/>
  <TimeDerivative variable="x" value="-x"/>
  <Exposure of="x"/>
</Model>"#;
        compile(&parse_model(xml).unwrap()).unwrap()
    }

    #[test]
    fn linear_model_derivative() {
        let m = linear_model();
        let d = m.eval_derivatives(&[2.0], &[], &[]).unwrap();
        assert_eq!(d, vec![-2.0]);
    }

    #[test]
    fn constant_folding_pools_single_constant() {
        let xml = r#"<Model name="m">
  <StateVariable name="x" init_lo="0" init_hi="1"/>
  <TimeDerivative variable="x" value="2*3 + x"/>
  <Exposure of="x"/>
</Model>"#;
        let m = compile(&parse_model(xml).unwrap()).unwrap();
        assert_eq!(m.program.consts, vec![6.0]);
        let d = m.eval_derivatives(&[1.0], &[], &[]).unwrap();
        assert_eq!(d, vec![7.0]);
    }

    #[test]
    fn folding_never_changes_values() {
        // Compare folded and unfolded evaluation on a mixed expression.
        let e = super::super::parse_expr(
            "exp(1/3)*x + sin(0.5)^2 + if(2 < 3, sqrt(2), 99) - min(1e3, 2e3)/7",
        )
        .unwrap();
        let folded = fold(&e);
        for i in 0..100 {
            let x = draw_unit_f64(mix_key(&[4242, i]), 0) * 10.0 - 5.0;
            let lookup = |name: &str| (name == "x").then_some(x);
            let a = e.eval(&lookup).unwrap();
            let b = folded.eval(&lookup).unwrap();
            assert!(
                (a - b).abs() <= 1e-15 * (1.0 + a.abs()),
                "fold mismatch at x={x}: {a} vs {b}"
            );
        }
    }

    #[test]
    fn pre_identity_and_square() {
        let xml = r#"<Model name="m">
  <StateVariable name="x" init_lo="0" init_hi="1"/>
  <Coupling name="c" pre="pre"/>
  <Coupling name="c2" pre="pre^2"/>
  <TimeDerivative variable="x" value="-x + c + c2"/>
  <Exposure of="x"/>
</Model>"#;
        let m = compile(&parse_model(xml).unwrap()).unwrap();
        assert_eq!(m.eval_pre(0, 0.37).unwrap(), 0.37);
        assert_eq!(m.eval_pre(1, 3.0).unwrap(), 9.0);
    }

    #[test]
    fn pre_with_parameter_uses_default() {
        let xml = r#"<Model name="m">
  <Parameter name="g" default="2.5"/>
  <StateVariable name="x" init_lo="0" init_hi="1"/>
  <Coupling name="c" pre="g*pre"/>
  <TimeDerivative variable="x" value="-x + c"/>
  <Exposure of="x"/>
</Model>"#;
        let m = compile(&parse_model(xml).unwrap()).unwrap();
        assert_eq!(m.eval_pre(0, 2.0).unwrap(), 5.0);
    }

    #[test]
    fn derived_exposure_evaluation() {
        let xml = r#"<Model name="m">
  <StateVariable name="x" init_lo="0" init_hi="1"/>
  <DerivedVariable name="y" value="2*x + 1"/>
  <TimeDerivative variable="x" value="-x"/>
  <Exposure of="x"/>
  <Exposure of="y" kind="rate"/>
</Model>"#;
        let m = compile(&parse_model(xml).unwrap()).unwrap();
        assert!(!m.exposures_are_state_only());
        assert_eq!(m.rate_exposure, Some(1));
        let mut scratch = VmScratch::default();
        let mut out = [0.0; 2];
        m.eval_exposures(&[3.0], &[], &[], &mut scratch, &mut out);
        assert_eq!(out, [3.0, 7.0]);
    }

    #[test]
    fn numeric_fault_names_the_variable() {
        let xml = r#"<Model name="m">
  <StateVariable name="a" init_lo="0" init_hi="1"/>
  <StateVariable name="bad" init_lo="0" init_hi="1"/>
  <TimeDerivative variable="a" value="-a"/>
  <TimeDerivative variable="bad" value="log(-1)"/>
  <Exposure of="a"/>
</Model>"#;
        let m = compile(&parse_model(xml).unwrap()).unwrap();
        let err = m.eval_derivatives(&[0.5, 0.5], &[], &[]).unwrap_err();
        assert!(err.to_string().contains("bad"), "{err}");
    }

    #[test]
    fn compiled_matches_ast_interpreter_on_random_points() {
        let xml = r#"<Model name="m">
  <Parameter name="tau" default="7.5"/>
  <Parameter name="k" default="0.3"/>
  <StateVariable name="x" init_lo="-1" init_hi="1"/>
  <StateVariable name="y" init_lo="-1" init_hi="1"/>
  <DerivedVariable name="u" value="x^2 - y"/>
  <DerivedVariable name="w" value="tanh(u) + k*exp(-abs(x))"/>
  <Coupling name="c" pre="sin(pre)"/>
  <TimeDerivative variable="x" value="(y - w)/tau + c"/>
  <TimeDerivative variable="y" value="if(u > 0, -y + w, y*k) - c^2"/>
  <Exposure of="x"/>
</Model>"#;
        let spec = parse_model(xml).unwrap();
        let m = compile(&spec).unwrap();
        for i in 0..500 {
            let r = |j: u64| draw_unit_f64(mix_key(&[77, i, j]), 0) * 4.0 - 2.0;
            let (x, y, c) = (r(0), r(1), r(2));
            let got = m.eval_derivatives(&[x, y], &[c], &[7.5, 0.3]).unwrap();

            // Independent AST-interpreter path.
            let lookup = |name: &str| match name {
                "x" => Some(x),
                "y" => Some(y),
                "c" => Some(c),
                "tau" => Some(7.5),
                "k" => Some(0.3),
                "u" => Some(x * x - y),
                "w" => Some((x * x - y).tanh() + 0.3 * (-x.abs()).exp()),
                _ => None,
            };
            for (slot, expr) in spec.derivatives.iter().enumerate() {
                let want = expr.eval(&lookup).unwrap();
                assert!(
                    (got[slot] - want).abs() <= 1e-14 * (1.0 + want.abs()),
                    "slot {slot}: {} vs {want}",
                    got[slot]
                );
            }
        }
    }
}
