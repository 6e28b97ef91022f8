//! Stack-machine bytecode and its evaluator.
//!
//! Programs are validated at build time: stack effects are simulated so an
//! accepted program can never underflow, and the maximum depth is recorded
//! so the evaluation stack is allocated once and never grows.

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Op {
    /// Push constant-pool entry k.
    PushConst(u32),
    /// Push state variable k of the node under evaluation.
    LoadState(u16),
    /// Push coupling input k of the node under evaluation.
    LoadCoupling(u16),
    /// Push parameter k (resolved per node for vector parameters).
    LoadParam(u16),
    /// Push derived-variable slot k.
    LoadDerived(u16),
    /// Pop into derived-variable slot k.
    StoreDerived(u16),
    /// Pop into output slot k (a derivative).
    StoreOut(u16),
    /// Push the pre-synaptic input value (coupling `pre` programs only).
    LoadPre,
    Add,
    Sub,
    Mul,
    Div,
    Pow,
    Neg,
    Sin,
    Cos,
    Tan,
    Exp,
    Log,
    Sqrt,
    Abs,
    Tanh,
    Min,
    Max,
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    /// Pop else, then, cond; push cond != 0 ? then : else.
    Select,
}

impl Op {
    /// (pops, pushes)
    fn stack_effect(self) -> (usize, usize) {
        use Op::*;
        match self {
            PushConst(_) | LoadState(_) | LoadCoupling(_) | LoadParam(_) | LoadDerived(_)
            | LoadPre => (0, 1),
            StoreDerived(_) | StoreOut(_) => (1, 0),
            Neg | Sin | Cos | Tan | Exp | Log | Sqrt | Abs | Tanh => (1, 1),
            Add | Sub | Mul | Div | Pow | Min | Max | Lt | Le | Gt | Ge | Eq => (2, 1),
            Select => (3, 1),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Program {
    pub ops: Vec<Op>,
    pub consts: Vec<f64>,
    /// Stack slots needed; fixed at build time.
    pub max_stack: usize,
    /// Values left on the stack after execution.
    pub results: usize,
}

impl Program {
    /// Validates stack discipline and slot bounds, computing `max_stack`.
    pub fn build(
        ops: Vec<Op>,
        consts: Vec<f64>,
        n_state: usize,
        n_coupling: usize,
        n_params: usize,
        n_derived: usize,
        n_out: usize,
    ) -> Result<Program, String> {
        let mut depth = 0usize;
        let mut max = 0usize;
        for (i, op) in ops.iter().enumerate() {
            let bound_ok = match *op {
                Op::PushConst(k) => (k as usize) < consts.len(),
                Op::LoadState(k) => (k as usize) < n_state,
                Op::LoadCoupling(k) => (k as usize) < n_coupling,
                Op::LoadParam(k) => (k as usize) < n_params,
                Op::LoadDerived(k) | Op::StoreDerived(k) => (k as usize) < n_derived,
                Op::StoreOut(k) => (k as usize) < n_out,
                _ => true,
            };
            if !bound_ok {
                return Err(format!("op {i} ({op:?}): slot out of range"));
            }
            let (pops, pushes) = op.stack_effect();
            if depth < pops {
                return Err(format!("op {i} ({op:?}): stack underflow"));
            }
            depth = depth - pops + pushes;
            max = max.max(depth);
        }
        Ok(Program {
            ops,
            consts,
            max_stack: max,
            results: depth,
        })
    }

    /// Textual disassembly, stable across releases (golden-file tested by
    /// the CLI's --dump-bytecode).
    pub fn disassemble(&self) -> String {
        let mut out = String::new();
        for (i, op) in self.ops.iter().enumerate() {
            let line = match op {
                Op::PushConst(k) => format!("push_const {k} ; {}", self.consts[*k as usize]),
                Op::LoadState(k) => format!("load_state {k}"),
                Op::LoadCoupling(k) => format!("load_coupling {k}"),
                Op::LoadParam(k) => format!("load_param {k}"),
                Op::LoadDerived(k) => format!("load_derived {k}"),
                Op::StoreDerived(k) => format!("store_derived {k}"),
                Op::StoreOut(k) => format!("store_out {k}"),
                Op::LoadPre => "load_pre".into(),
                Op::Add => "add".into(),
                Op::Sub => "sub".into(),
                Op::Mul => "mul".into(),
                Op::Div => "div".into(),
                Op::Pow => "pow".into(),
                Op::Neg => "neg".into(),
                Op::Sin => "sin".into(),
                Op::Cos => "cos".into(),
                Op::Tan => "tan".into(),
                Op::Exp => "exp".into(),
                Op::Log => "log".into(),
                Op::Sqrt => "sqrt".into(),
                Op::Abs => "abs".into(),
                Op::Tanh => "tanh".into(),
                Op::Min => "min".into(),
                Op::Max => "max".into(),
                Op::Lt => "lt".into(),
                Op::Le => "le".into(),
                Op::Gt => "gt".into(),
                Op::Ge => "ge".into(),
                Op::Eq => "eq".into(),
                Op::Select => "select".into(),
            };
            out.push_str(&format!("{i:4}  {line}\n"));
        }
        out
    }
}

/// Reusable evaluation buffers; one per worker in the engine hot loop.
#[derive(Debug, Clone, Default)]
pub struct VmScratch {
    pub stack: Vec<f64>,
    pub derived: Vec<f64>,
}

impl VmScratch {
    pub fn prepare(&mut self, program: &Program, n_derived: usize) {
        self.stack.clear();
        self.stack.reserve(program.max_stack);
        self.derived.clear();
        self.derived.resize(n_derived, 0.0);
    }
}

/// Runs a program. `out` receives StoreOut writes; `pre` feeds LoadPre.
/// Returns the top of stack for expression-style programs (results == 1),
/// or 0.0 for statement-style programs.
#[inline]
pub fn run_program(
    program: &Program,
    state: &[f64],
    coupling: &[f64],
    params: &[f64],
    pre: f64,
    scratch: &mut VmScratch,
    out: &mut [f64],
) -> f64 {
    let stack = &mut scratch.stack;
    stack.clear();
    macro_rules! pop {
        () => {
            // Stack discipline is validated in Program::build.
            stack.pop().unwrap()
        };
    }
    for op in &program.ops {
        match *op {
            Op::PushConst(k) => stack.push(program.consts[k as usize]),
            Op::LoadState(k) => stack.push(state[k as usize]),
            Op::LoadCoupling(k) => stack.push(coupling[k as usize]),
            Op::LoadParam(k) => stack.push(params[k as usize]),
            Op::LoadDerived(k) => stack.push(scratch.derived[k as usize]),
            Op::StoreDerived(k) => {
                let v = pop!();
                scratch.derived[k as usize] = v;
            }
            Op::StoreOut(k) => {
                let v = pop!();
                out[k as usize] = v;
            }
            Op::LoadPre => stack.push(pre),
            Op::Add => {
                let b = pop!();
                let a = pop!();
                stack.push(a + b);
            }
            Op::Sub => {
                let b = pop!();
                let a = pop!();
                stack.push(a - b);
            }
            Op::Mul => {
                let b = pop!();
                let a = pop!();
                stack.push(a * b);
            }
            Op::Div => {
                let b = pop!();
                let a = pop!();
                stack.push(a / b);
            }
            Op::Pow => {
                let b = pop!();
                let a = pop!();
                stack.push(a.powf(b));
            }
            Op::Neg => {
                let a = pop!();
                stack.push(-a);
            }
            Op::Sin => {
                let a = pop!();
                stack.push(a.sin());
            }
            Op::Cos => {
                let a = pop!();
                stack.push(a.cos());
            }
            Op::Tan => {
                let a = pop!();
                stack.push(a.tan());
            }
            Op::Exp => {
                let a = pop!();
                stack.push(a.exp());
            }
            Op::Log => {
                let a = pop!();
                stack.push(a.ln());
            }
            Op::Sqrt => {
                let a = pop!();
                stack.push(a.sqrt());
            }
            Op::Abs => {
                let a = pop!();
                stack.push(a.abs());
            }
            Op::Tanh => {
                let a = pop!();
                stack.push(a.tanh());
            }
            Op::Min => {
                let b = pop!();
                let a = pop!();
                stack.push(a.min(b));
            }
            Op::Max => {
                let b = pop!();
                let a = pop!();
                stack.push(a.max(b));
            }
            Op::Lt => {
                let b = pop!();
                let a = pop!();
                stack.push((a < b) as u8 as f64);
            }
            Op::Le => {
                let b = pop!();
                let a = pop!();
                stack.push((a <= b) as u8 as f64);
            }
            Op::Gt => {
                let b = pop!();
                let a = pop!();
                stack.push((a > b) as u8 as f64);
            }
            Op::Ge => {
                let b = pop!();
                let a = pop!();
                stack.push((a >= b) as u8 as f64);
            }
            Op::Eq => {
                let b = pop!();
                let a = pop!();
                stack.push((a == b) as u8 as f64);
            }
            Op::Select => {
                let els = pop!();
                let thn = pop!();
                let cond = pop!();
                stack.push(if cond != 0.0 { thn } else { els });
            }
        }
    }
    stack.last().copied().unwrap_or(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn build_rejects_underflow_and_bad_slots() {
        assert!(Program::build(vec![Op::Add], vec![], 0, 0, 0, 0, 0).is_err());
        assert!(Program::build(vec![Op::PushConst(0)], vec![], 0, 0, 0, 0, 0).is_err());
        assert!(Program::build(vec![Op::LoadState(2)], vec![], 2, 0, 0, 0, 0).is_err());
        let p = Program::build(
            vec![Op::PushConst(0), Op::LoadState(0), Op::Add],
            vec![1.5],
            1,
            0,
            0,
            0,
            0,
        )
        .unwrap();
        assert_eq!(p.max_stack, 2);
        assert_eq!(p.results, 1);
    }

    #[test]
    fn select_is_strict_ternary() {
        let p = Program::build(
            vec![
                Op::PushConst(0), // cond
                Op::PushConst(1), // then
                Op::PushConst(2), // else
                Op::Select,
            ],
            vec![1.0, 10.0, 20.0],
            0,
            0,
            0,
            0,
            0,
        )
        .unwrap();
        let mut scratch = VmScratch::default();
        scratch.prepare(&p, 0);
        let v = run_program(&p, &[], &[], &[], 0.0, &mut scratch, &mut []);
        assert_eq!(v, 10.0);
    }
}
