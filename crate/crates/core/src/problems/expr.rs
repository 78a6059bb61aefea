//! Expression language for Lagrangians and constraint functions.
//!
//! Grammar (highest precedence first): `^` right-associative, unary `-`,
//! `*` `/`, then `+` `-` left-associative. Variables are `t`, `x`, `d` and
//! the two-component forms `x1`, `x2`, `d1`, `d2`; `x`/`d` alias the first
//! component. Functions: sin, cos, exp, ln, sqrt, abs, gammafn. `pi` is a
//! constant.
//!
//! Evaluation is total on the declared domain: division by zero, ln/sqrt
//! outside their domains, gamma poles and non-finite intermediates are all
//! reported as errors rather than silent NaN/inf.

use std::fmt;

use thiserror::Error;

/// Parse failure with a byte position into the source text.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{msg} (at position {pos})")]
pub struct ParseError {
    pub pos: usize,
    pub msg: String,
}

fn parse_err(pos: usize, msg: impl Into<String>) -> ParseError {
    ParseError {
        pos,
        msg: msg.into(),
    }
}

/// Evaluation failure; never a silent non-finite value.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("division by zero")]
    DivisionByZero,
    #[error("ln of non-positive value {0}")]
    LogDomain(f64),
    #[error("sqrt of negative value {0}")]
    SqrtDomain(f64),
    #[error("gammafn pole at {0}")]
    GammaPole(f64),
    #[error("variable {0} is not bound in this context")]
    UnboundVariable(String),
    #[error("non-finite result from `{0}`")]
    NonFinite(&'static str),
}

/// Variable slots: `t`, the trajectory components x_i, and the fractional
/// derivative slots d_i.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    T,
    X(usize),
    D(usize),
}

impl Var {
    fn name(&self) -> String {
        match self {
            Var::T => "t".into(),
            Var::X(0) => "x".into(),
            Var::D(0) => "d".into(),
            Var::X(i) => format!("x{}", i + 1),
            Var::D(i) => format!("d{}", i + 1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    fn prec(&self) -> u8 {
        match self {
            BinOp::Add | BinOp::Sub => 1,
            BinOp::Mul | BinOp::Div => 2,
            BinOp::Pow => 4,
        }
    }

    fn symbol(&self) -> char {
        match self {
            BinOp::Add => '+',
            BinOp::Sub => '-',
            BinOp::Mul => '*',
            BinOp::Div => '/',
            BinOp::Pow => '^',
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Ln,
    Sqrt,
    Abs,
    Gamma,
}

impl Func {
    fn name(&self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Ln => "ln",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
            Func::Gamma => "gammafn",
        }
    }

    fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "ln" => Func::Ln,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            "gammafn" => Func::Gamma,
            _ => return None,
        })
    }
}

/// Abstract syntax tree of an expression.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Pi,
    Var(Var),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

/// Values bound to the variables during evaluation.
#[derive(Debug, Clone, Copy)]
pub struct Point<'a> {
    pub t: f64,
    pub x: &'a [f64],
    pub d: &'a [f64],
}

impl Expr {
    pub fn eval(&self, p: &Point) -> Result<f64, EvalError> {
        let v = match self {
            Expr::Num(v) => *v,
            Expr::Pi => std::f64::consts::PI,
            Expr::Var(Var::T) => p.t,
            Expr::Var(v @ Var::X(i)) => *p
                .x
                .get(*i)
                .ok_or_else(|| EvalError::UnboundVariable(v.name()))?,
            Expr::Var(v @ Var::D(i)) => *p
                .d
                .get(*i)
                .ok_or_else(|| EvalError::UnboundVariable(v.name()))?,
            Expr::Neg(e) => -e.eval(p)?,
            Expr::Bin(op, lhs, rhs) => {
                let l = lhs.eval(p)?;
                let r = rhs.eval(p)?;
                match op {
                    BinOp::Add => l + r,
                    BinOp::Sub => l - r,
                    BinOp::Mul => l * r,
                    BinOp::Div => {
                        if r == 0.0 {
                            return Err(EvalError::DivisionByZero);
                        }
                        l / r
                    }
                    BinOp::Pow => l.powf(r),
                }
            }
            Expr::Call(f, arg) => {
                let a = arg.eval(p)?;
                match f {
                    Func::Sin => a.sin(),
                    Func::Cos => a.cos(),
                    Func::Exp => a.exp(),
                    Func::Ln => {
                        if a <= 0.0 {
                            return Err(EvalError::LogDomain(a));
                        }
                        a.ln()
                    }
                    Func::Sqrt => {
                        if a < 0.0 {
                            return Err(EvalError::SqrtDomain(a));
                        }
                        a.sqrt()
                    }
                    Func::Abs => a.abs(),
                    Func::Gamma => crate::fracops::gamma(a)
                        .map_err(|_| EvalError::GammaPole(a))?,
                }
            }
        };
        if !v.is_finite() {
            return Err(EvalError::NonFinite(self.op_label()));
        }
        Ok(v)
    }

    fn op_label(&self) -> &'static str {
        match self {
            Expr::Num(_) => "literal",
            Expr::Pi => "pi",
            Expr::Var(_) => "variable",
            Expr::Neg(_) => "negation",
            Expr::Bin(BinOp::Add, ..) => "+",
            Expr::Bin(BinOp::Sub, ..) => "-",
            Expr::Bin(BinOp::Mul, ..) => "*",
            Expr::Bin(BinOp::Div, ..) => "/",
            Expr::Bin(BinOp::Pow, ..) => "^",
            Expr::Call(f, _) => f.name(),
        }
    }

    /// Number of trajectory components the expression reads (max index + 1).
    pub fn x_slots(&self) -> usize {
        self.fold_slots(&|v| match v {
            Var::X(i) => Some(i),
            _ => None,
        })
    }

    /// Number of derivative slots the expression reads.
    pub fn d_slots(&self) -> usize {
        self.fold_slots(&|v| match v {
            Var::D(i) => Some(i),
            _ => None,
        })
    }

    fn fold_slots(&self, pick: &impl Fn(Var) -> Option<usize>) -> usize {
        match self {
            Expr::Num(_) | Expr::Pi => 0,
            Expr::Var(v) => pick(*v).map_or(0, |i| i + 1),
            Expr::Neg(e) | Expr::Call(_, e) => e.fold_slots(pick),
            Expr::Bin(_, l, r) => l.fold_slots(pick).max(r.fold_slots(pick)),
        }
    }

    fn prec(&self) -> u8 {
        match self {
            Expr::Num(v) if *v < 0.0 => 3,
            Expr::Neg(_) => 3,
            Expr::Bin(op, ..) => op.prec(),
            _ => 5,
        }
    }

    fn fmt_prec(&self, f: &mut fmt::Formatter<'_>, min_prec: u8) -> fmt::Result {
        let needs_parens = self.prec() < min_prec;
        if needs_parens {
            write!(f, "(")?;
        }
        match self {
            Expr::Num(v) => write!(f, "{v}")?,
            Expr::Pi => write!(f, "pi")?,
            Expr::Var(v) => write!(f, "{}", v.name())?,
            Expr::Neg(e) => {
                write!(f, "-")?;
                e.fmt_prec(f, 4)?;
            }
            Expr::Bin(op, lhs, rhs) => {
                // Parenthesize so the printed form re-parses to the same
                // tree: left operand at own precedence (one above for ^,
                // whose left side must be atomic), right operand one above
                // except for the right-associative ^.
                let (lp, rp) = match op {
                    BinOp::Pow => (5, 4),
                    _ => (op.prec(), op.prec() + 1),
                };
                lhs.fmt_prec(f, lp)?;
                write!(f, " {} ", op.symbol())?;
                rhs.fmt_prec(f, rp)?;
            }
            Expr::Call(func, arg) => {
                write!(f, "{}(", func.name())?;
                arg.fmt_prec(f, 0)?;
                write!(f, ")")?;
            }
        }
        if needs_parens {
            write!(f, ")")?;
        }
        Ok(())
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.fmt_prec(f, 0)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
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
}

struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Self {
            src: src.as_bytes(),
            pos: 0,
        }
    }

    fn tokens(mut self) -> Result<Vec<(usize, Token)>, ParseError> {
        let mut out = Vec::new();
        while self.pos < self.src.len() {
            let start = self.pos;
            let c = self.src[self.pos];
            match c {
                b' ' | b'\t' | b'\r' | b'\n' => {
                    self.pos += 1;
                }
                b'+' => self.push_single(&mut out, Token::Plus),
                b'-' => self.push_single(&mut out, Token::Minus),
                b'*' => self.push_single(&mut out, Token::Star),
                b'/' => self.push_single(&mut out, Token::Slash),
                b'^' => self.push_single(&mut out, Token::Caret),
                b'(' => self.push_single(&mut out, Token::LParen),
                b')' => self.push_single(&mut out, Token::RParen),
                b',' => self.push_single(&mut out, Token::Comma),
                b'0'..=b'9' | b'.' => {
                    let tok = self.lex_number()?;
                    out.push((start, tok));
                }
                c if c.is_ascii_alphabetic() => {
                    let tok = self.lex_ident();
                    out.push((start, tok));
                }
                other => {
                    return Err(parse_err(
                        start,
                        format!("unexpected character `{}`", other as char),
                    ));
                }
            }
        }
        Ok(out)
    }

    fn push_single(&mut self, out: &mut Vec<(usize, Token)>, tok: Token) {
        out.push((self.pos, tok));
        self.pos += 1;
    }

    fn lex_number(&mut self) -> Result<Token, ParseError> {
        let start = self.pos;
        let mut seen_dot = false;
        while self.pos < self.src.len() {
            match self.src[self.pos] {
                b'0'..=b'9' => self.pos += 1,
                b'.' if !seen_dot => {
                    seen_dot = true;
                    self.pos += 1;
                }
                b'e' | b'E' => {
                    let mut probe = self.pos + 1;
                    if probe < self.src.len() && matches!(self.src[probe], b'+' | b'-') {
                        probe += 1;
                    }
                    if probe < self.src.len() && self.src[probe].is_ascii_digit() {
                        self.pos = probe + 1;
                        while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                            self.pos += 1;
                        }
                    }
                    break;
                }
                _ => break,
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii");
        text.parse::<f64>()
            .map(Token::Num)
            .map_err(|_| parse_err(start, format!("malformed number `{text}`")))
    }

    fn lex_ident(&mut self) -> Token {
        let start = self.pos;
        while self.pos < self.src.len()
            && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_')
        {
            self.pos += 1;
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii");
        Token::Ident(text.to_string())
    }
}

struct Parser {
    tokens: Vec<(usize, Token)>,
    cursor: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.cursor).map(|(_, t)| t)
    }

    fn pos(&self) -> usize {
        self.tokens
            .get(self.cursor)
            .map(|(p, _)| *p)
            .unwrap_or(self.end)
    }

    fn bump(&mut self) -> Option<Token> {
        let tok = self.tokens.get(self.cursor).map(|(_, t)| t.clone());
        if tok.is_some() {
            self.cursor += 1;
        }
        tok
    }

    fn expect(&mut self, tok: Token, what: &str) -> Result<(), ParseError> {
        if self.peek() == Some(&tok) {
            self.cursor += 1;
            Ok(())
        } else {
            Err(parse_err(self.pos(), format!("expected {what}")))
        }
    }

    // expr := term (('+'|'-') term)*
    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Some(Token::Plus) => BinOp::Add,
                Some(Token::Minus) => BinOp::Sub,
                _ => break,
            };
            self.cursor += 1;
            let rhs = self.term()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    // term := unary (('*'|'/') unary)*
    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Some(Token::Star) => BinOp::Mul,
                Some(Token::Slash) => BinOp::Div,
                _ => break,
            };
            self.cursor += 1;
            let rhs = self.unary()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    // unary := '-' unary | power
    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.peek() == Some(&Token::Minus) {
            self.cursor += 1;
            let inner = self.unary()?;
            return Ok(Expr::Neg(Box::new(inner)));
        }
        self.power()
    }

    // power := atom ('^' unary)?   (right-associative via the unary rhs)
    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.atom()?;
        if self.peek() == Some(&Token::Caret) {
            self.cursor += 1;
            let exponent = self.unary()?;
            return Ok(Expr::Bin(BinOp::Pow, Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        let pos = self.pos();
        match self.bump() {
            Some(Token::Num(v)) => Ok(Expr::Num(v)),
            Some(Token::LParen) => {
                let inner = self.expr()?;
                self.expect(Token::RParen, "`)`")?;
                Ok(inner)
            }
            Some(Token::Ident(name)) => self.ident(pos, name),
            Some(other) => Err(parse_err(pos, format!("unexpected token `{other:?}`"))),
            None => Err(parse_err(pos, "unexpected end of expression")),
        }
    }

    fn ident(&mut self, pos: usize, name: String) -> Result<Expr, ParseError> {
        if self.peek() == Some(&Token::LParen) {
            let func = Func::from_name(&name)
                .ok_or_else(|| parse_err(pos, format!("unknown function `{name}`")))?;
            self.cursor += 1;
            let mut args = vec![self.expr()?];
            while self.peek() == Some(&Token::Comma) {
                self.cursor += 1;
                args.push(self.expr()?);
            }
            self.expect(Token::RParen, "`)`")?;
            if args.len() != 1 {
                return Err(parse_err(
                    pos,
                    format!("{name} takes 1 argument, got {}", args.len()),
                ));
            }
            return Ok(Expr::Call(func, Box::new(args.pop().expect("one arg"))));
        }
        let var = match name.as_str() {
            "t" => Var::T,
            "x" | "x1" => Var::X(0),
            "x2" => Var::X(1),
            "d" | "d1" => Var::D(0),
            "d2" => Var::D(1),
            "pi" => return Ok(Expr::Pi),
            _ => {
                return Err(parse_err(pos, format!("unknown identifier `{name}`")));
            }
        };
        Ok(Expr::Var(var))
    }
}

/// Parse an expression from source text.
pub fn parse(source: &str) -> Result<Expr, ParseError> {
    if source.trim().is_empty() {
        return Err(parse_err(0, "empty expression"));
    }
    let tokens = Lexer::new(source).tokens()?;
    let mut parser = Parser {
        tokens,
        cursor: 0,
        end: source.len(),
    };
    let expr = parser.expr()?;
    if parser.cursor != parser.tokens.len() {
        return Err(parse_err(parser.pos(), "trailing input after expression"));
    }
    Ok(expr)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eval_scalar(src: &str, t: f64, x: f64, d: f64) -> Result<f64, EvalError> {
        parse(src).unwrap().eval(&Point {
            t,
            x: &[x],
            d: &[d],
        })
    }

    #[test]
    fn example_lagrangians_evaluate() {
        let d_val = 2.0 / crate::fracops::gamma(1.5).unwrap();
        let v = eval_scalar("(d - 2/gammafn(1.5)*t^1.5)^2", 1.0, 0.0, d_val).unwrap();
        assert_eq!(v, 0.0);
        let v = eval_scalar("x*(d)^2 - sin(x)", 0.5, 0.0, 3.0).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn power_is_right_associative() {
        let v = eval_scalar("2^3^2", 0.0, 0.0, 0.0).unwrap();
        assert_eq!(v, 512.0);
    }

    #[test]
    fn precedence() {
        assert_eq!(eval_scalar("2+3*4", 0.0, 0.0, 0.0).unwrap(), 14.0);
        assert_eq!(eval_scalar("-2^2", 0.0, 0.0, 0.0).unwrap(), -4.0);
        assert_eq!(eval_scalar("2^-1", 0.0, 0.0, 0.0).unwrap(), 0.5);
        assert_eq!(eval_scalar("6/3/2", 0.0, 0.0, 0.0).unwrap(), 1.0);
        assert_eq!(eval_scalar("1-2-3", 0.0, 0.0, 0.0).unwrap(), -4.0);
        assert_eq!(
            eval_scalar("pi", 0.0, 0.0, 0.0).unwrap(),
            std::f64::consts::PI
        );
    }

    #[test]
    fn rejects_unknown_identifiers_with_position() {
        let err = parse("x + foo").unwrap_err();
        assert_eq!(err.pos, 4);
        assert!(err.msg.contains("foo"));
        assert!(parse("bar(3)").unwrap_err().msg.contains("unknown function"));
        assert!(parse("sin(1, 2)").unwrap_err().msg.contains("1 argument"));
    }

    #[test]
    fn rejects_syntax_errors() {
        assert!(parse("").is_err());
        assert!(parse("2*(3").is_err());
        assert!(parse("2 3").unwrap_err().msg.contains("trailing"));
        assert!(parse("*2").is_err());
        assert!(parse("2..5").is_err());
        assert!(parse("1 $ 2").is_err());
    }

    #[test]
    fn domain_errors_never_return_non_finite() {
        assert!(matches!(
            eval_scalar("1/(x - x)", 0.0, 3.0, 0.0),
            Err(EvalError::DivisionByZero)
        ));
        assert!(matches!(
            eval_scalar("ln(-1)", 0.0, 0.0, 0.0),
            Err(EvalError::LogDomain(_))
        ));
        assert!(matches!(
            eval_scalar("sqrt(-2)", 0.0, 0.0, 0.0),
            Err(EvalError::SqrtDomain(_))
        ));
        assert!(matches!(
            eval_scalar("gammafn(-1)", 0.0, 0.0, 0.0),
            Err(EvalError::GammaPole(_))
        ));
        assert!(matches!(
            eval_scalar("exp(1000)", 0.0, 0.0, 0.0),
            Err(EvalError::NonFinite(_))
        ));
        assert!(matches!(
            eval_scalar("x2 + 1", 0.0, 0.0, 0.0),
            Err(EvalError::UnboundVariable(_))
        ));
    }

    #[test]
    fn slot_counting() {
        let e = parse("x1*d2 + sin(x2)").unwrap();
        assert_eq!(e.x_slots(), 2);
        assert_eq!(e.d_slots(), 2);
        let e = parse("t^2").unwrap();
        assert_eq!(e.x_slots(), 0);
        assert_eq!(e.d_slots(), 0);
    }

    mod round_trip {
        use super::super::*;
        use proptest::prelude::*;

        fn leaf() -> impl Strategy<Value = Expr> {
            prop_oneof![
                (-10000i32..10000).prop_map(|k| Expr::Num(k as f64 / 100.0)),
                Just(Expr::Pi),
                Just(Expr::Var(Var::T)),
                Just(Expr::Var(Var::X(0))),
                Just(Expr::Var(Var::X(1))),
                Just(Expr::Var(Var::D(0))),
                Just(Expr::Var(Var::D(1))),
            ]
        }

        fn arb_expr() -> impl Strategy<Value = Expr> {
            leaf().prop_recursive(6, 48, 2, |inner| {
                let bin = prop_oneof![
                    Just(BinOp::Add),
                    Just(BinOp::Sub),
                    Just(BinOp::Mul),
                    Just(BinOp::Div),
                    Just(BinOp::Pow),
                ];
                let func = prop_oneof![
                    Just(Func::Sin),
                    Just(Func::Cos),
                    Just(Func::Exp),
                    Just(Func::Ln),
                    Just(Func::Sqrt),
                    Just(Func::Abs),
                    Just(Func::Gamma),
                ];
                prop_oneof![
                    inner.clone().prop_map(|e| Expr::Neg(Box::new(e))),
                    (bin, inner.clone(), inner.clone())
                        .prop_map(|(op, l, r)| Expr::Bin(op, Box::new(l), Box::new(r))),
                    (func, inner).prop_map(|(f, e)| Expr::Call(f, Box::new(e))),
                ]
            })
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(100))]
            #[test]
            fn printed_form_evaluates_identically(
                ast in arb_expr(),
                points in proptest::collection::vec(
                    (-3.0f64..3.0, -3.0f64..3.0, -3.0f64..3.0, -3.0f64..3.0, -3.0f64..3.0),
                    10,
                ),
            ) {
                let printed = ast.to_string();
                let reparsed = parse(&printed)
                    .unwrap_or_else(|e| panic!("`{printed}` failed to reparse: {e}"));
                for (t, x1, x2, d1, d2) in points {
                    let p = Point { t, x: &[x1, x2], d: &[d1, d2] };
                    match (ast.eval(&p), reparsed.eval(&p)) {
                        (Ok(a), Ok(b)) => {
                            prop_assert!(
                                (a - b).abs() <= 1e-12 * a.abs().max(1.0),
                                "`{printed}`: {a} vs {b}"
                            );
                        }
                        (Err(_), Err(_)) => {}
                        (a, b) => prop_assert!(false, "`{printed}`: {a:?} vs {b:?}"),
                    }
                }
            }
        }
    }

    #[test]
    fn print_reparses_to_same_tree() {
        for src in [
            "(d - 2/gammafn(1.5)*t^1.5)^2",
            "x*(d)^2 - sin(x)",
            "2^3^2",
            "-(x + d)^2",
            "1 - 2 - 3",
            "2^-1",
            "abs(-t)/sqrt(x + 4)",
        ] {
            let ast = parse(src).unwrap();
            let printed = ast.to_string();
            let reparsed = parse(&printed).unwrap();
            assert_eq!(ast, reparsed, "print of `{src}` gave `{printed}`");
        }
    }
}
