//! Condition expressions on sequence flows.
//!
//! Grammar (lowest precedence first):
//!
//! ```text
//! or      := and ( "||" and )*
//! and     := unary ( "&&" unary )*
//! unary   := "!" unary | compare
//! compare := primary ( ("==" | "!=" | "<" | "<=" | ">" | ">=") primary )?
//! primary := number | string | "true" | "false" | "null" | path | "(" or ")"
//! path    := ident ( "." ( ident | digits ) )*
//! ```
//!
//! `&&` and `||` short-circuit. Evaluation always terminates with a boolean
//! or an [`EvalError`].

use std::fmt;

use serde_json::Value;
use thiserror::Error;

use crate::vars::VariableTree;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            Self::Eq => "==",
            Self::Ne => "!=",
            Self::Lt => "<",
            Self::Le => "<=",
            Self::Gt => ">",
            Self::Ge => ">=",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Literal {
    Number(f64),
    Str(String),
    Bool(bool),
    Null,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Literal(Literal),
    Path(String),
    Not(Box<Expr>),
    And(Box<Expr>, Box<Expr>),
    Or(Box<Expr>, Box<Expr>),
    Compare(CmpOp, Box<Expr>, Box<Expr>),
}

/// A parsed condition together with its source text.
#[derive(Debug, Clone, PartialEq)]
pub struct Expression {
    source: String,
    ast: Expr,
}

impl Expression {
    pub fn parse(source: &str) -> Result<Self, ExprParseError> {
        let tokens = lex(source)?;
        let mut parser = Parser { tokens, pos: 0 };
        let ast = parser.or()?;
        if let Some((tok, at)) = parser.tokens.get(parser.pos) {
            return Err(ExprParseError {
                position: *at,
                message: format!("unexpected {tok}"),
            });
        }
        Ok(Self {
            source: source.trim().to_string(),
            ast,
        })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn ast(&self) -> &Expr {
        &self.ast
    }

    pub fn eval(&self, vars: &VariableTree) -> Result<bool, EvalError> {
        eval_expression(&self.ast, vars)
    }
}

impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.source)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("condition syntax error at offset {position}: {message}")]
pub struct ExprParseError {
    pub position: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("type mismatch: {0}")]
    TypeMismatch(String),
}

/// Evaluates a parsed expression to a boolean.
pub fn eval_expression(expr: &Expr, vars: &VariableTree) -> Result<bool, EvalError> {
    match eval_value(expr, vars)? {
        Scalar::Bool(b) => Ok(b),
        other => Err(EvalError::TypeMismatch(format!(
            "condition yields {} instead of boolean",
            other.type_name()
        ))),
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Scalar<'a> {
    Number(f64),
    Str(&'a str),
    Bool(bool),
    Null,
    Compound(&'static str),
}

impl Scalar<'_> {
    fn type_name(&self) -> &'static str {
        match self {
            Self::Number(_) => "number",
            Self::Str(_) => "string",
            Self::Bool(_) => "boolean",
            Self::Null => "null",
            Self::Compound(kind) => kind,
        }
    }
}

fn eval_value<'a>(expr: &'a Expr, vars: &'a VariableTree) -> Result<Scalar<'a>, EvalError> {
    match expr {
        Expr::Literal(lit) => Ok(match lit {
            Literal::Number(n) => Scalar::Number(*n),
            Literal::Str(s) => Scalar::Str(s),
            Literal::Bool(b) => Scalar::Bool(*b),
            Literal::Null => Scalar::Null,
        }),
        Expr::Path(path) => {
            let value = vars
                .get_path(path)
                .ok_or_else(|| EvalError::UnknownVariable(path.clone()))?;
            Ok(match value {
                Value::Null => Scalar::Null,
                Value::Bool(b) => Scalar::Bool(*b),
                Value::Number(n) => Scalar::Number(n.as_f64().unwrap_or(f64::NAN)),
                Value::String(s) => Scalar::Str(s),
                Value::Array(_) => Scalar::Compound("list"),
                Value::Object(_) => Scalar::Compound("map"),
            })
        }
        Expr::Not(inner) => Ok(Scalar::Bool(!expect_bool(inner, vars, "!")?)),
        Expr::And(lhs, rhs) => {
            if !expect_bool(lhs, vars, "&&")? {
                return Ok(Scalar::Bool(false));
            }
            Ok(Scalar::Bool(expect_bool(rhs, vars, "&&")?))
        }
        Expr::Or(lhs, rhs) => {
            if expect_bool(lhs, vars, "||")? {
                return Ok(Scalar::Bool(true));
            }
            Ok(Scalar::Bool(expect_bool(rhs, vars, "||")?))
        }
        Expr::Compare(op, lhs, rhs) => {
            let left = eval_value(lhs, vars)?;
            let right = eval_value(rhs, vars)?;
            compare(*op, &left, &right).map(Scalar::Bool)
        }
    }
}

fn expect_bool(expr: &Expr, vars: &VariableTree, op: &str) -> Result<bool, EvalError> {
    match eval_value(expr, vars)? {
        Scalar::Bool(b) => Ok(b),
        other => Err(EvalError::TypeMismatch(format!(
            "`{op}` expects boolean, found {}",
            other.type_name()
        ))),
    }
}

fn compare(op: CmpOp, left: &Scalar<'_>, right: &Scalar<'_>) -> Result<bool, EvalError> {
    use std::cmp::Ordering;

    let mismatch = || {
        EvalError::TypeMismatch(format!(
            "cannot compare {} {} {}",
            left.type_name(),
            op.symbol(),
            right.type_name()
        ))
    };
    if matches!(left, Scalar::Compound(_)) || matches!(right, Scalar::Compound(_)) {
        return Err(mismatch());
    }
    if matches!(op, CmpOp::Eq | CmpOp::Ne) {
        let equal = match (left, right) {
            (Scalar::Null, Scalar::Null) => true,
            (Scalar::Null, _) | (_, Scalar::Null) => false,
            (Scalar::Number(a), Scalar::Number(b)) => a == b,
            (Scalar::Str(a), Scalar::Str(b)) => a == b,
            (Scalar::Bool(a), Scalar::Bool(b)) => a == b,
            _ => return Err(mismatch()),
        };
        return Ok(equal == (op == CmpOp::Eq));
    }
    let ordering = match (left, right) {
        (Scalar::Number(a), Scalar::Number(b)) => a.partial_cmp(b).ok_or_else(mismatch)?,
        (Scalar::Str(a), Scalar::Str(b)) => a.cmp(b),
        _ => return Err(mismatch()),
    };
    Ok(match op {
        CmpOp::Lt => ordering == Ordering::Less,
        CmpOp::Le => ordering != Ordering::Greater,
        CmpOp::Gt => ordering == Ordering::Greater,
        CmpOp::Ge => ordering != Ordering::Less,
        CmpOp::Eq | CmpOp::Ne => unreachable!("handled above"),
    })
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Number(f64),
    Str(String),
    Ident(String),
    Op(&'static str),
    LParen,
    RParen,
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Token::Number(n) => write!(f, "number {n}"),
            Token::Str(s) => write!(f, "string {s:?}"),
            Token::Ident(s) => write!(f, "`{s}`"),
            Token::Op(op) => write!(f, "`{op}`"),
            Token::LParen => f.write_str("`(`"),
            Token::RParen => f.write_str("`)`"),
        }
    }
}

fn lex(source: &str) -> Result<Vec<(Token, usize)>, ExprParseError> {
    let bytes = source.as_bytes();
    let mut tokens = Vec::new();
    let mut i = 0;
    let err = |position: usize, message: &str| ExprParseError {
        position,
        message: message.to_string(),
    };
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        match c {
            b' ' | b'\t' | b'\n' | b'\r' => {
                i += 1;
                continue;
            }
            b'(' => {
                tokens.push((Token::LParen, start));
                i += 1;
            }
            b')' => {
                tokens.push((Token::RParen, start));
                i += 1;
            }
            b'"' => {
                i += 1;
                let mut text = String::new();
                loop {
                    match source[i..].chars().next() {
                        None => return Err(err(start, "unterminated string")),
                        Some('"') => {
                            i += 1;
                            break;
                        }
                        Some('\\') => {
                            let escaped = source[i + 1..]
                                .chars()
                                .next()
                                .ok_or_else(|| err(i, "dangling escape"))?;
                            text.push(match escaped {
                                'n' => '\n',
                                't' => '\t',
                                '"' | '\\' => escaped,
                                _ => return Err(err(i, "unknown escape")),
                            });
                            i += 1 + escaped.len_utf8();
                        }
                        Some(ch) => {
                            text.push(ch);
                            i += ch.len_utf8();
                        }
                    }
                }
                tokens.push((Token::Str(text), start));
            }
            b'0'..=b'9' | b'-' => {
                i += 1;
                while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                    i += 1;
                }
                let text = &source[start..i];
                let number = text
                    .parse::<f64>()
                    .map_err(|_| err(start, "malformed number"))?;
                tokens.push((Token::Number(number), start));
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                i += 1;
                while i < bytes.len()
                    && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_' || bytes[i] == b'.')
                {
                    i += 1;
                }
                let text = &source[start..i];
                if text.ends_with('.') || text.contains("..") {
                    return Err(err(start, "malformed variable path"));
                }
                tokens.push((Token::Ident(text.to_string()), start));
            }
            _ => {
                let two = source.get(i..i + 2).unwrap_or("");
                let op = match two {
                    "==" => "==",
                    "!=" => "!=",
                    "<=" => "<=",
                    ">=" => ">=",
                    "&&" => "&&",
                    "||" => "||",
                    _ => match c {
                        b'<' => "<",
                        b'>' => ">",
                        b'!' => "!",
                        _ => return Err(err(start, "unexpected character")),
                    },
                };
                i += op.len();
                tokens.push((Token::Op(op), start));
            }
        }
    }
    Ok(tokens)
}

struct Parser {
    tokens: Vec<(Token, usize)>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos).map(|(t, _)| t)
    }

    fn offset(&self) -> usize {
        self.tokens
            .get(self.pos)
            .map(|(_, at)| *at)
            .unwrap_or_else(|| self.tokens.last().map(|(_, at)| at + 1).unwrap_or(0))
    }

    fn eat_op(&mut self, op: &str) -> bool {
        if matches!(self.peek(), Some(Token::Op(o)) if *o == op) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn or(&mut self) -> Result<Expr, ExprParseError> {
        let mut lhs = self.and()?;
        while self.eat_op("||") {
            let rhs = self.and()?;
            lhs = Expr::Or(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn and(&mut self) -> Result<Expr, ExprParseError> {
        let mut lhs = self.unary()?;
        while self.eat_op("&&") {
            let rhs = self.unary()?;
            lhs = Expr::And(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ExprParseError> {
        if self.eat_op("!") {
            return Ok(Expr::Not(Box::new(self.unary()?)));
        }
        self.compare()
    }

    fn compare(&mut self) -> Result<Expr, ExprParseError> {
        let lhs = self.primary()?;
        let op = match self.peek() {
            Some(Token::Op("==")) => CmpOp::Eq,
            Some(Token::Op("!=")) => CmpOp::Ne,
            Some(Token::Op("<")) => CmpOp::Lt,
            Some(Token::Op("<=")) => CmpOp::Le,
            Some(Token::Op(">")) => CmpOp::Gt,
            Some(Token::Op(">=")) => CmpOp::Ge,
            _ => return Ok(lhs),
        };
        self.pos += 1;
        let rhs = self.primary()?;
        Ok(Expr::Compare(op, Box::new(lhs), Box::new(rhs)))
    }

    fn primary(&mut self) -> Result<Expr, ExprParseError> {
        let at = self.offset();
        let Some((token, _)) = self.tokens.get(self.pos).cloned() else {
            return Err(ExprParseError {
                position: at,
                message: "unexpected end of expression".into(),
            });
        };
        self.pos += 1;
        match token {
            Token::Number(n) => Ok(Expr::Literal(Literal::Number(n))),
            Token::Str(s) => Ok(Expr::Literal(Literal::Str(s))),
            Token::Ident(name) => Ok(match name.as_str() {
                "true" => Expr::Literal(Literal::Bool(true)),
                "false" => Expr::Literal(Literal::Bool(false)),
                "null" => Expr::Literal(Literal::Null),
                _ => Expr::Path(name),
            }),
            Token::LParen => {
                let inner = self.or()?;
                if self.peek() != Some(&Token::RParen) {
                    return Err(ExprParseError {
                        position: self.offset(),
                        message: "expected `)`".into(),
                    });
                }
                self.pos += 1;
                Ok(inner)
            }
            other => Err(ExprParseError {
                position: at,
                message: format!("unexpected {other}"),
            }),
        }
    }
}
