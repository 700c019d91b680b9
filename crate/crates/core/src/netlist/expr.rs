//! Arithmetic expression language used for parameter values.
//!
//! Expressions appear on the right-hand side of `key=value` pairs in
//! netlists and in `param`/`derive` declarations inside subcircuit
//! definitions. The language is deliberately small: floating-point
//! literals, parameter names, the four arithmetic operators, unary
//! minus, parentheses, and a fixed set of math functions.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::NetlistError;

/// A named math function callable from parameter expressions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MathFn {
    Sqrt,
    Sin,
    Cos,
    Exp,
    Log,
    Abs,
    Min,
    Max,
}

impl MathFn {
    fn from_name(name: &str) -> Option<Self> {
        match name {
            "sqrt" => Some(Self::Sqrt),
            "sin" => Some(Self::Sin),
            "cos" => Some(Self::Cos),
            "exp" => Some(Self::Exp),
            "log" => Some(Self::Log),
            "abs" => Some(Self::Abs),
            "min" => Some(Self::Min),
            "max" => Some(Self::Max),
            _ => None,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Self::Sqrt => "sqrt",
            Self::Sin => "sin",
            Self::Cos => "cos",
            Self::Exp => "exp",
            Self::Log => "log",
            Self::Abs => "abs",
            Self::Min => "min",
            Self::Max => "max",
        }
    }

    fn arity(self) -> usize {
        match self {
            Self::Min | Self::Max => 2,
            _ => 1,
        }
    }
}

/// Binary arithmetic operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

/// Parsed form of a parameter expression.
#[derive(Debug, Clone, PartialEq)]
pub enum ParamExpr {
    Number(f64),
    Name(String),
    Neg(Box<ParamExpr>),
    Binary(BinOp, Box<ParamExpr>, Box<ParamExpr>),
    Call(MathFn, Vec<ParamExpr>),
}

impl fmt::Display for ParamExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Number(v) => write!(f, "{v}"),
            Self::Name(n) => write!(f, "{n}"),
            Self::Neg(e) => write!(f, "(-{e})"),
            Self::Binary(op, a, b) => {
                let sym = match op {
                    BinOp::Add => "+",
                    BinOp::Sub => "-",
                    BinOp::Mul => "*",
                    BinOp::Div => "/",
                };
                write!(f, "({a}{sym}{b})")
            }
            Self::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        write!(f, ",")?;
                    }
                    write!(f, "{a}")?;
                }
                write!(f, ")")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Number(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    LParen,
    RParen,
    Comma,
}

struct Lexer<'a> {
    src: &'a str,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Self {
            src,
            bytes: src.as_bytes(),
            pos: 0,
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn error(&self, message: impl Into<String>) -> ExprError {
        ExprError {
            offset: self.pos,
            message: message.into(),
        }
    }

    /// Returns the next token, or `None` at end of input.
    fn next(&mut self) -> Result<Option<(usize, Token)>, ExprError> {
        self.skip_ws();
        if self.pos >= self.bytes.len() {
            return Ok(None);
        }
        let start = self.pos;
        let c = self.bytes[self.pos];
        let tok = match c {
            b'+' => {
                self.pos += 1;
                Token::Plus
            }
            b'-' => {
                self.pos += 1;
                Token::Minus
            }
            b'*' => {
                self.pos += 1;
                Token::Star
            }
            b'/' => {
                self.pos += 1;
                Token::Slash
            }
            b'(' => {
                self.pos += 1;
                Token::LParen
            }
            b')' => {
                self.pos += 1;
                Token::RParen
            }
            b',' => {
                self.pos += 1;
                Token::Comma
            }
            b'0'..=b'9' | b'.' => {
                let end = self.scan_number(start)?;
                let text = &self.src[start..end];
                let value: f64 = text
                    .parse()
                    .map_err(|_| self.error(format!("invalid number literal `{text}`")))?;
                self.pos = end;
                Token::Number(value)
            }
            _ if c.is_ascii_alphabetic() || c == b'_' => {
                let mut end = self.pos;
                while end < self.bytes.len()
                    && (self.bytes[end].is_ascii_alphanumeric()
                        || self.bytes[end] == b'_'
                        || self.bytes[end] == b'.')
                {
                    end += 1;
                }
                let text = self.src[start..end].to_string();
                self.pos = end;
                Token::Ident(text)
            }
            _ => {
                return Err(self.error(format!(
                    "unexpected character `{}`",
                    &self.src[start..start + 1]
                )))
            }
        };
        Ok(Some((start, tok)))
    }

    /// Scans a float literal starting at `start`, returning the byte
    /// offset one past its end. Accepts forms like `1`, `1.5`, `.5`,
    /// `2e-3`, `1.5E+6`.
    fn scan_number(&self, start: usize) -> Result<usize, ExprError> {
        let b = self.bytes;
        let mut i = start;
        while i < b.len() && b[i].is_ascii_digit() {
            i += 1;
        }
        if i < b.len() && b[i] == b'.' {
            i += 1;
            while i < b.len() && b[i].is_ascii_digit() {
                i += 1;
            }
        }
        if i < b.len() && (b[i] == b'e' || b[i] == b'E') {
            let mut j = i + 1;
            if j < b.len() && (b[j] == b'+' || b[j] == b'-') {
                j += 1;
            }
            if j < b.len() && b[j].is_ascii_digit() {
                while j < b.len() && b[j].is_ascii_digit() {
                    j += 1;
                }
                i = j;
            }
        }
        if i == start {
            return Err(ExprError {
                offset: start,
                message: "expected a number".into(),
            });
        }
        Ok(i)
    }
}

/// An expression-local error: byte offset into the expression text plus
/// a message. Callers translate this into a [`NetlistError`] carrying
/// file/line information.
#[derive(Debug, Clone)]
pub struct ExprError {
    pub offset: usize,
    pub message: String,
}

struct Parser {
    tokens: Vec<(usize, Token)>,
    cursor: usize,
    len: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.cursor).map(|(_, t)| t)
    }

    fn advance(&mut self) -> Option<(usize, Token)> {
        let item = self.tokens.get(self.cursor).cloned();
        if item.is_some() {
            self.cursor += 1;
        }
        item
    }

    fn offset(&self) -> usize {
        self.tokens
            .get(self.cursor)
            .map(|(o, _)| *o)
            .unwrap_or(self.len)
    }

    fn error(&self, message: impl Into<String>) -> ExprError {
        ExprError {
            offset: self.offset(),
            message: message.into(),
        }
    }

    fn expect(&mut self, want: Token, what: &str) -> Result<(), ExprError> {
        match self.advance() {
            Some((_, tok)) if tok == want => Ok(()),
            Some((offset, tok)) => Err(ExprError {
                offset,
                message: format!("expected {what}, found {tok:?}"),
            }),
            None => Err(ExprError {
                offset: self.len,
                message: format!("expected {what}, found end of expression"),
            }),
        }
    }

    fn parse_sum(&mut self) -> Result<ParamExpr, ExprError> {
        let mut lhs = self.parse_product()?;
        loop {
            let op = match self.peek() {
                Some(Token::Plus) => BinOp::Add,
                Some(Token::Minus) => BinOp::Sub,
                _ => break,
            };
            self.advance();
            let rhs = self.parse_product()?;
            lhs = ParamExpr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn parse_product(&mut self) -> Result<ParamExpr, ExprError> {
        let mut lhs = self.parse_unary()?;
        loop {
            let op = match self.peek() {
                Some(Token::Star) => BinOp::Mul,
                Some(Token::Slash) => BinOp::Div,
                _ => break,
            };
            self.advance();
            let rhs = self.parse_unary()?;
            lhs = ParamExpr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn parse_unary(&mut self) -> Result<ParamExpr, ExprError> {
        match self.peek() {
            Some(Token::Minus) => {
                self.advance();
                let inner = self.parse_unary()?;
                Ok(ParamExpr::Neg(Box::new(inner)))
            }
            Some(Token::Plus) => {
                self.advance();
                self.parse_unary()
            }
            _ => self.parse_atom(),
        }
    }

    fn parse_atom(&mut self) -> Result<ParamExpr, ExprError> {
        match self.advance() {
            Some((_, Token::Number(v))) => Ok(ParamExpr::Number(v)),
            Some((offset, Token::Ident(name))) => {
                if self.peek() == Some(&Token::LParen) {
                    let func = MathFn::from_name(&name).ok_or(ExprError {
                        offset,
                        message: format!("unknown function `{name}`"),
                    })?;
                    self.advance();
                    let mut args = Vec::new();
                    if self.peek() != Some(&Token::RParen) {
                        loop {
                            args.push(self.parse_sum()?);
                            match self.peek() {
                                Some(Token::Comma) => {
                                    self.advance();
                                }
                                _ => break,
                            }
                        }
                    }
                    self.expect(Token::RParen, "`)`")?;
                    if args.len() != func.arity() {
                        return Err(ExprError {
                            offset,
                            message: format!(
                                "function `{}` takes {} argument(s), got {}",
                                func.name(),
                                func.arity(),
                                args.len()
                            ),
                        });
                    }
                    Ok(ParamExpr::Call(func, args))
                } else {
                    Ok(ParamExpr::Name(name))
                }
            }
            Some((_, Token::LParen)) => {
                let inner = self.parse_sum()?;
                self.expect(Token::RParen, "`)`")?;
                Ok(inner)
            }
            Some((offset, tok)) => Err(ExprError {
                offset,
                message: format!("expected a value, found {tok:?}"),
            }),
            None => Err(self.error("expected a value, found end of expression")),
        }
    }
}

/// Parses an expression from text. Errors carry a byte offset into
/// `text` so callers can report a precise column.
pub fn parse_expr(text: &str) -> Result<ParamExpr, ExprError> {
    let mut lexer = Lexer::new(text);
    let mut tokens = Vec::new();
    while let Some(tok) = lexer.next()? {
        tokens.push(tok);
    }
    if tokens.is_empty() {
        return Err(ExprError {
            offset: 0,
            message: "empty expression".into(),
        });
    }
    let len = text.len();
    let mut parser = Parser {
        tokens,
        cursor: 0,
        len,
    };
    let expr = parser.parse_sum()?;
    if let Some((offset, tok)) = parser.advance() {
        return Err(ExprError {
            offset,
            message: format!("unexpected trailing input: {tok:?}"),
        });
    }
    Ok(expr)
}

impl ParamExpr {
    /// Evaluates the expression against a name environment. Division by
    /// zero, out-of-domain function arguments, and unknown names are
    /// reported as errors rather than producing non-finite values.
    pub fn eval(&self, env: &BTreeMap<String, f64>) -> Result<f64, String> {
        match self {
            Self::Number(v) => Ok(*v),
            Self::Name(name) => env
                .get(name)
                .copied()
                .ok_or_else(|| format!("unknown parameter name `{name}`")),
            Self::Neg(inner) => Ok(-inner.eval(env)?),
            Self::Binary(op, a, b) => {
                let av = a.eval(env)?;
                let bv = b.eval(env)?;
                match op {
                    BinOp::Add => Ok(av + bv),
                    BinOp::Sub => Ok(av - bv),
                    BinOp::Mul => Ok(av * bv),
                    BinOp::Div => {
                        if bv == 0.0 {
                            Err(format!("division by zero in `{b}`"))
                        } else {
                            Ok(av / bv)
                        }
                    }
                }
            }
            Self::Call(func, args) => {
                let mut vals = Vec::with_capacity(args.len());
                for a in args {
                    vals.push(a.eval(env)?);
                }
                match func {
                    MathFn::Sqrt => {
                        if vals[0] < 0.0 {
                            Err(format!("sqrt of negative value {}", vals[0]))
                        } else {
                            Ok(vals[0].sqrt())
                        }
                    }
                    MathFn::Sin => Ok(vals[0].sin()),
                    MathFn::Cos => Ok(vals[0].cos()),
                    MathFn::Exp => Ok(vals[0].exp()),
                    MathFn::Log => {
                        if vals[0] <= 0.0 {
                            Err(format!("log of non-positive value {}", vals[0]))
                        } else {
                            Ok(vals[0].ln())
                        }
                    }
                    MathFn::Abs => Ok(vals[0].abs()),
                    MathFn::Min => Ok(vals[0].min(vals[1])),
                    MathFn::Max => Ok(vals[0].max(vals[1])),
                }
            }
        }
    }

    /// Collects every parameter name referenced by the expression.
    pub fn referenced_names(&self, out: &mut Vec<String>) {
        match self {
            Self::Number(_) => {}
            Self::Name(n) => {
                if !out.contains(n) {
                    out.push(n.clone());
                }
            }
            Self::Neg(e) => e.referenced_names(out),
            Self::Binary(_, a, b) => {
                a.referenced_names(out);
                b.referenced_names(out);
            }
            Self::Call(_, args) => {
                for a in args {
                    a.referenced_names(out);
                }
            }
        }
    }
}

/// Parses and evaluates an expression in one call, attaching file/line
/// context to any failure.
pub fn eval_expr_text(
    text: &str,
    env: &BTreeMap<String, f64>,
    file: &str,
    line: usize,
    col_base: usize,
) -> Result<f64, NetlistError> {
    let expr = parse_expr(text).map_err(|e| NetlistError::Syntax {
        file: file.to_string(),
        line,
        column: col_base + e.offset,
        message: format!("in expression `{text}`: {}", e.message),
    })?;
    expr.eval(env).map_err(|message| NetlistError::Expr {
        file: file.to_string(),
        line,
        expr: text.to_string(),
        message,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eval(text: &str) -> Result<f64, String> {
        let expr = parse_expr(text).map_err(|e| e.message)?;
        expr.eval(&BTreeMap::new())
    }

    fn eval_with(text: &str, names: &[(&str, f64)]) -> Result<f64, String> {
        let expr = parse_expr(text).map_err(|e| e.message)?;
        let env: BTreeMap<String, f64> =
            names.iter().map(|(k, v)| (k.to_string(), *v)).collect();
        expr.eval(&env)
    }

    #[test]
    fn literals_and_scientific_notation() {
        assert_eq!(eval("3").unwrap(), 3.0);
        assert_eq!(eval("2.5").unwrap(), 2.5);
        assert_eq!(eval(".5").unwrap(), 0.5);
        assert_eq!(eval("1e-4").unwrap(), 1e-4);
        assert_eq!(eval("2.5E+2").unwrap(), 250.0);
    }

    #[test]
    fn operator_precedence_and_parens() {
        assert_eq!(eval("2+3*4").unwrap(), 14.0);
        assert_eq!(eval("(2+3)*4").unwrap(), 20.0);
        assert_eq!(eval("10-4-3").unwrap(), 3.0);
        assert_eq!(eval("16/4/2").unwrap(), 2.0);
        assert_eq!(eval("2*3+4*5").unwrap(), 26.0);
    }

    #[test]
    fn unary_minus_binds_tighter_than_binary_ops() {
        assert_eq!(eval("-3+5").unwrap(), 2.0);
        assert_eq!(eval("4*-2").unwrap(), -8.0);
        assert_eq!(eval("--3").unwrap(), 3.0);
        assert_eq!(eval("-(2+3)").unwrap(), -5.0);
    }

    #[test]
    fn name_lookup_uses_environment() {
        assert_eq!(eval_with("a*b+1", &[("a", 2.0), ("b", 3.0)]).unwrap(), 7.0);
        let err = eval_with("a*c", &[("a", 2.0)]).unwrap_err();
        assert!(err.contains("unknown parameter name `c`"), "{err}");
    }

    #[test]
    fn function_calls() {
        assert!((eval("sqrt(2)").unwrap() - std::f64::consts::SQRT_2).abs() < 1e-15);
        assert!((eval("sin(0)").unwrap()).abs() < 1e-15);
        assert!((eval("cos(0)").unwrap() - 1.0).abs() < 1e-15);
        assert!((eval("exp(1)").unwrap() - std::f64::consts::E).abs() < 1e-15);
        assert!((eval("log(exp(2))").unwrap() - 2.0).abs() < 1e-14);
        assert_eq!(eval("abs(-4)").unwrap(), 4.0);
        assert_eq!(eval("min(3,5)").unwrap(), 3.0);
        assert_eq!(eval("max(3,5)").unwrap(), 5.0);
    }

    #[test]
    fn division_by_zero_is_an_error() {
        let err = eval("1/0").unwrap_err();
        assert!(err.contains("division by zero"), "{err}");
        let err = eval_with("1/(a-2)", &[("a", 2.0)]).unwrap_err();
        assert!(err.contains("division by zero"), "{err}");
    }

    #[test]
    fn domain_errors_are_reported() {
        assert!(eval("sqrt(-1)").unwrap_err().contains("sqrt of negative"));
        assert!(eval("log(0)").unwrap_err().contains("non-positive"));
        assert!(eval("log(-3)").unwrap_err().contains("non-positive"));
    }

    #[test]
    fn syntax_errors_carry_offsets() {
        let err = parse_expr("2+*3").unwrap_err();
        assert_eq!(err.offset, 2);
        let err = parse_expr("2+3)").unwrap_err();
        assert_eq!(err.offset, 3);
        let err = parse_expr("").unwrap_err();
        assert!(err.message.contains("empty"));
        let err = parse_expr("foo(1)").unwrap_err();
        assert!(err.message.contains("unknown function"), "{}", err.message);
        let err = parse_expr("min(1)").unwrap_err();
        assert!(err.message.contains("takes 2 argument"), "{}", err.message);
        let err = parse_expr("2 @ 3").unwrap_err();
        assert!(err.message.contains("unexpected character"), "{}", err.message);
    }

    #[test]
    fn names_may_contain_dots() {
        assert_eq!(
            eval_with("m.lm*2", &[("m.lm", 0.5)]).unwrap(),
            1.0
        );
    }

    #[test]
    fn referenced_names_are_collected_once() {
        let expr = parse_expr("a*b+sqrt(a)").unwrap();
        let mut names = Vec::new();
        expr.referenced_names(&mut names);
        assert_eq!(names, vec!["a".to_string(), "b".to_string()]);
    }
}
