//! Mathematical expression AST used by the model language.
//!
//! Grammar (precedence low to high):
//!   compare  := sum ( ('<' | '<=' | '>' | '>=' | '==') sum )?
//!   sum      := product ( ('+' | '-') product )*
//!   product  := unary ( ('*' | '/') unary )*
//!   unary    := '-' unary | power
//!   power    := primary ( '^' unary )?        right-associative; -2^2 = -4
//!   primary  := number | ident | ident '(' compare {',' compare} ')' | '(' compare ')'
//!
//! `^` and `pow(a, b)` are synonymous. Comparisons may appear only as the
//! first argument of `if(cond, then, else)`; `if` is strict ternary
//! selection (both branches are evaluated, one is returned).

use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Tan,
    Exp,
    Log,
    Sqrt,
    Abs,
    Tanh,
    Pow,
    Min,
    Max,
    If,
}

impl Func {
    pub fn arity(self) -> usize {
        match self {
            Func::Pow | Func::Min | Func::Max => 2,
            Func::If => 3,
            _ => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tan => "tan",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
            Func::Tanh => "tanh",
            Func::Pow => "pow",
            Func::Min => "min",
            Func::Max => "max",
            Func::If => "if",
        }
    }

    fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "tan" => Func::Tan,
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            "tanh" => Func::Tanh,
            "pow" => Func::Pow,
            "min" => Func::Min,
            "max" => Func::Max,
            "if" => Func::If,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Ident(String),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Cmp(CmpOp, Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
}

impl Expr {
    /// Walks the tree, calling `f` on every identifier.
    pub fn for_each_ident(&self, f: &mut impl FnMut(&str)) {
        match self {
            Expr::Const(_) => {}
            Expr::Ident(name) => f(name),
            Expr::Neg(e) => e.for_each_ident(f),
            Expr::Bin(_, a, b) | Expr::Cmp(_, a, b) => {
                a.for_each_ident(f);
                b.for_each_ident(f);
            }
            Expr::Call(_, args) => {
                for a in args {
                    a.for_each_ident(f)
                }
            }
        }
    }

    /// True if a comparison node appears anywhere outside the first
    /// argument of an `if`.
    pub fn has_misplaced_comparison(&self) -> bool {
        self.misplaced_cmp(false)
    }

    fn misplaced_cmp(&self, cmp_allowed_here: bool) -> bool {
        match self {
            Expr::Const(_) | Expr::Ident(_) => false,
            Expr::Neg(e) => e.misplaced_cmp(false),
            Expr::Bin(_, a, b) => a.misplaced_cmp(false) || b.misplaced_cmp(false),
            Expr::Cmp(_, a, b) => {
                !cmp_allowed_here || a.misplaced_cmp(false) || b.misplaced_cmp(false)
            }
            Expr::Call(Func::If, args) => {
                args[0].misplaced_cmp(true)
                    || args[1..].iter().any(|a| a.misplaced_cmp(false))
            }
            Expr::Call(_, args) => args.iter().any(|a| a.misplaced_cmp(false)),
        }
    }

    /// Direct tree-walking evaluation. Identifiers are resolved through
    /// `lookup`; unresolved names yield Err. This is the reference
    /// semantics the bytecode compiler is tested against.
    pub fn eval(&self, lookup: &dyn Fn(&str) -> Option<f64>) -> Result<f64, String> {
        Ok(match self {
            Expr::Const(v) => *v,
            Expr::Ident(name) => lookup(name).ok_or_else(|| format!("undefined symbol {name}"))?,
            Expr::Neg(e) => -e.eval(lookup)?,
            Expr::Bin(op, a, b) => {
                let (a, b) = (a.eval(lookup)?, b.eval(lookup)?);
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => a / b,
                    BinOp::Pow => a.powf(b),
                }
            }
            Expr::Cmp(op, a, b) => {
                let (a, b) = (a.eval(lookup)?, b.eval(lookup)?);
                let t = match op {
                    CmpOp::Lt => a < b,
                    CmpOp::Le => a <= b,
                    CmpOp::Gt => a > b,
                    CmpOp::Ge => a >= b,
                    CmpOp::Eq => a == b,
                };
                if t {
                    1.0
                } else {
                    0.0
                }
            }
            Expr::Call(f, args) => {
                let mut v = [0.0; 3];
                for (i, a) in args.iter().enumerate() {
                    v[i] = a.eval(lookup)?;
                }
                match f {
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
                }
            }
        })
    }
}

// ---------------------------------------------------------------------------
// Lexer / parser
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    Comma,
    Lt,
    Le,
    Gt,
    Ge,
    EqEq,
}

fn lex(src: &str) -> Result<Vec<Tok>, String> {
    let bytes = src.as_bytes();
    let mut toks = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        match c {
            ' ' | '\t' | '\n' | '\r' => i += 1,
            '+' => {
                toks.push(Tok::Plus);
                i += 1;
            }
            '-' => {
                toks.push(Tok::Minus);
                i += 1;
            }
            '*' => {
                toks.push(Tok::Star);
                i += 1;
            }
            '/' => {
                toks.push(Tok::Slash);
                i += 1;
            }
            '^' => {
                toks.push(Tok::Caret);
                i += 1;
            }
            '(' => {
                toks.push(Tok::LParen);
                i += 1;
            }
            ')' => {
                toks.push(Tok::RParen);
                i += 1;
            }
            ',' => {
                toks.push(Tok::Comma);
                i += 1;
            }
            '<' => {
                if bytes.get(i + 1) == Some(&b'=') {
                    toks.push(Tok::Le);
                    i += 2;
                } else {
                    toks.push(Tok::Lt);
                    i += 1;
                }
            }
            '>' => {
                if bytes.get(i + 1) == Some(&b'=') {
                    toks.push(Tok::Ge);
                    i += 2;
                } else {
                    toks.push(Tok::Gt);
                    i += 1;
                }
            }
            '=' => {
                if bytes.get(i + 1) == Some(&b'=') {
                    toks.push(Tok::EqEq);
                    i += 2;
                } else {
                    return Err("single '=' is not an operator (use '==')".into());
                }
            }
            '0'..='9' | '.' => {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                    i += 1;
                }
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        i = j;
                        while i < bytes.len() && bytes[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let text = &src[start..i];
                let v: f64 = text
                    .parse()
                    .map_err(|_| format!("malformed number {text:?}"))?;
                toks.push(Tok::Num(v));
            }
            'a'..='z' | 'A'..='Z' | '_' => {
                let start = i;
                while i < bytes.len()
                    && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_')
                {
                    i += 1;
                }
                toks.push(Tok::Ident(src[start..i].to_string()));
            }
            other => return Err(format!("unexpected character {other:?}")),
        }
    }
    Ok(toks)
}

struct Parser {
    toks: Vec<Tok>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).cloned();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, t: Tok) -> Result<(), String> {
        match self.next() {
            Some(got) if got == t => Ok(()),
            Some(got) => Err(format!("expected {t:?}, found {got:?}")),
            None => Err(format!("expected {t:?}, found end of expression")),
        }
    }

    fn compare(&mut self) -> Result<Expr, String> {
        let lhs = self.sum()?;
        let op = match self.peek() {
            Some(Tok::Lt) => CmpOp::Lt,
            Some(Tok::Le) => CmpOp::Le,
            Some(Tok::Gt) => CmpOp::Gt,
            Some(Tok::Ge) => CmpOp::Ge,
            Some(Tok::EqEq) => CmpOp::Eq,
            _ => return Ok(lhs),
        };
        self.next();
        let rhs = self.sum()?;
        Ok(Expr::Cmp(op, Box::new(lhs), Box::new(rhs)))
    }

    fn sum(&mut self) -> Result<Expr, String> {
        let mut lhs = self.product()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Plus) => BinOp::Add,
                Some(Tok::Minus) => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.next();
            let rhs = self.product()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn product(&mut self) -> Result<Expr, String> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Star) => BinOp::Mul,
                Some(Tok::Slash) => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.next();
            let rhs = self.unary()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Expr, String> {
        if self.peek() == Some(&Tok::Minus) {
            self.next();
            Ok(Expr::Neg(Box::new(self.unary()?)))
        } else {
            self.power()
        }
    }

    fn power(&mut self) -> Result<Expr, String> {
        let base = self.primary()?;
        if self.peek() == Some(&Tok::Caret) {
            self.next();
            // Right-associative; the exponent may carry a unary minus.
            let exp = self.unary()?;
            Ok(Expr::Bin(BinOp::Pow, Box::new(base), Box::new(exp)))
        } else {
            Ok(base)
        }
    }

    fn primary(&mut self) -> Result<Expr, String> {
        match self.next() {
            Some(Tok::Num(v)) => Ok(Expr::Const(v)),
            Some(Tok::LParen) => {
                let e = self.compare()?;
                self.expect(Tok::RParen)?;
                Ok(e)
            }
            Some(Tok::Ident(name)) => {
                if self.peek() == Some(&Tok::LParen) {
                    self.next();
                    let mut args = vec![self.compare()?];
                    while self.peek() == Some(&Tok::Comma) {
                        self.next();
                        args.push(self.compare()?);
                    }
                    self.expect(Tok::RParen)?;
                    let f = Func::from_name(&name)
                        .ok_or_else(|| format!("unknown function {name:?}"))?;
                    if args.len() != f.arity() {
                        return Err(format!(
                            "{name} expects {} argument(s), found {}",
                            f.arity(),
                            args.len()
                        ));
                    }
                    Ok(Expr::Call(f, args))
                } else if Func::from_name(&name).is_some() {
                    Err(format!("function {name:?} used without arguments"))
                } else {
                    Ok(Expr::Ident(name))
                }
            }
            Some(t) => Err(format!("unexpected token {t:?}")),
            None => Err("unexpected end of expression".into()),
        }
    }
}

/// Parses an expression string into an AST. Comparison placement is checked
/// here; identifier resolution happens during model validation.
pub fn parse_expr(src: &str) -> Result<Expr, String> {
    let toks = lex(src)?;
    let mut p = Parser { toks, pos: 0 };
    let e = p.compare()?;
    if p.pos != p.toks.len() {
        return Err(format!("trailing input after expression: {:?}", p.toks[p.pos]));
    }
    if e.has_misplaced_comparison() {
        return Err("comparisons are only allowed as the first argument of if(...)".into());
    }
    Ok(e)
}

// ---------------------------------------------------------------------------
// Canonical printing
// ---------------------------------------------------------------------------

impl Expr {
    fn precedence(&self) -> u8 {
        match self {
            Expr::Cmp(..) => 0,
            Expr::Bin(BinOp::Add | BinOp::Sub, ..) => 1,
            Expr::Bin(BinOp::Mul | BinOp::Div, ..) => 2,
            Expr::Neg(_) => 3,
            Expr::Bin(BinOp::Pow, ..) => 4,
            Expr::Const(_) | Expr::Ident(_) | Expr::Call(..) => 5,
        }
    }
}

/// Precedence-aware printer; `parse_expr(print(e))` reproduces `e`.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn child(
            f: &mut fmt::Formatter<'_>,
            e: &Expr,
            parent_prec: u8,
            parenthesize_equal: bool,
        ) -> fmt::Result {
            let needs = e.precedence() < parent_prec
                || (parenthesize_equal && e.precedence() == parent_prec);
            if needs {
                write!(f, "({e})")
            } else {
                write!(f, "{e}")
            }
        }
        match self {
            Expr::Const(v) => {
                if *v < 0.0 || v.is_nan() {
                    // Negative literals only arise from folding; keep them
                    // reparseable as Neg(Const).
                    write!(f, "({v})")
                } else {
                    write!(f, "{v}")
                }
            }
            Expr::Ident(name) => write!(f, "{name}"),
            Expr::Neg(e) => {
                write!(f, "-")?;
                child(f, e, 3, false)
            }
            Expr::Bin(op, a, b) => {
                let (prec, sym, right_assoc) = match op {
                    BinOp::Add => (1, " + ", false),
                    BinOp::Sub => (1, " - ", false),
                    BinOp::Mul => (2, "*", false),
                    BinOp::Div => (2, "/", false),
                    BinOp::Pow => (4, "^", true),
                };
                child(f, a, prec, right_assoc)?;
                write!(f, "{sym}")?;
                child(f, b, prec, !right_assoc)
            }
            Expr::Cmp(op, a, b) => {
                let sym = match op {
                    CmpOp::Lt => " < ",
                    CmpOp::Le => " <= ",
                    CmpOp::Gt => " > ",
                    CmpOp::Ge => " >= ",
                    CmpOp::Eq => " == ",
                };
                child(f, a, 1, false)?;
                write!(f, "{sym}")?;
                child(f, b, 1, false)
            }
            Expr::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{a}")?;
                }
                write!(f, ")")
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(src: &str, vars: &[(&str, f64)]) -> f64 {
        let e = parse_expr(src).unwrap();
        e.eval(&|name| vars.iter().find(|(n, _)| *n == name).map(|(_, v)| *v))
            .unwrap()
    }

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(ev("1 + 2*3", &[]), 7.0);
        assert_eq!(ev("2*3 + 1", &[]), 7.0);
        assert_eq!(ev("2^3^2", &[]), 512.0); // right-assoc
        assert_eq!(ev("-2^2", &[]), -4.0); // unary binds looser than ^
        assert_eq!(ev("(\n 1 + 2 )*3", &[]), 9.0);
        assert_eq!(ev("10 - 4 - 3", &[]), 3.0);
        assert_eq!(ev("16/4/2", &[]), 2.0);
    }

    #[test]
    fn functions_and_if() {
        assert_eq!(ev("pow(2, 10)", &[]), 1024.0);
        assert_eq!(ev("min(3, max(1, 2))", &[]), 2.0);
        assert_eq!(ev("if(x < 0, -x, x)", &[("x", -4.0)]), 4.0);
        assert_eq!(ev("if(x >= 0, 1, 2)", &[("x", 0.0)]), 1.0);
        assert!((ev("exp(log(5))", &[]) - 5.0).abs() < 1e-12);
        assert_eq!(ev("abs(-3.5)", &[]), 3.5);
    }

    #[test]
    fn caret_and_pow_agree() {
        assert_eq!(ev("x^3", &[("x", 2.0)]), ev("pow(x, 3)", &[("x", 2.0)]));
    }

    #[test]
    fn scientific_notation() {
        assert_eq!(ev("1e-3", &[]), 0.001);
        assert_eq!(ev("2.5e2 + 1E1", &[]), 260.0);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(parse_expr("1 +").is_err());
        assert!(parse_expr("foo(1)").is_err());
        assert!(parse_expr("sin()").is_err());
        assert!(parse_expr("sin(1, 2)").is_err());
        assert!(parse_expr("a @ b").is_err());
        assert!(parse_expr("a = b").is_err());
        assert!(parse_expr("1 2").is_err());
        // Comparison outside if().
        assert!(parse_expr("x < 1").is_err());
        assert!(parse_expr("1 + (x < 2)").is_err());
        assert!(parse_expr("if(1, x < 2, 3)").is_err());
        // But allowed as if's first argument, including nested.
        assert!(parse_expr("if(x < 1, 1, if(x > 2, 2, 0))").is_ok());
    }

    #[test]
    fn print_parse_round_trip() {
        for src in [
            "1 + 2*x",
            "-(a + b)*c",
            "a - (b - c)",
            "a/(b*c)",
            "2^3^x",
            "(2^3)^x",
            "if(d*u < 1e-9, 1/d + u/2, u/(1 - exp(-(d*u))))",
            "min(a, max(b, -c))",
            "-x^2",
            "sin(x)^2 + cos(x)^2",
        ] {
            let e = parse_expr(src).unwrap();
            let printed = e.to_string();
            let reparsed = parse_expr(&printed)
                .unwrap_or_else(|err| panic!("reparse of {printed:?} failed: {err}"));
            assert_eq!(e, reparsed, "print/parse mismatch for {src:?} -> {printed:?}");
        }
    }
}
