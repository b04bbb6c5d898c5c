//! Program expressions: evaluation, cost accounting, rendering and parsing.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::ops::{apply, Literal, OpCode, OpError, ParamKind};
use crate::search::CostTable;
use crate::tensor::Tensor;

/// A straight-line program as an expression tree.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Expr {
    /// The `i`-th task input, rendered `in{i+1}`.
    Input(usize),
    /// An integer constant used as a rank-0 tensor.
    Const(i64),
    Call {
        op: OpCode,
        args: Vec<Expr>,
        params: Vec<Literal>,
    },
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("unbound input in{}", .0 + 1)]
    UnboundInput(usize),
    #[error("in `{expr}`: {source}")]
    Op {
        expr: String,
        #[source]
        source: OpError,
    },
}

impl Expr {
    pub fn call(op: OpCode, args: Vec<Expr>, params: Vec<Literal>) -> Self {
        Expr::Call { op, args, params }
    }

    /// Additive cost: op cost plus argument and literal costs.
    pub fn cost(&self, table: &CostTable) -> u32 {
        match self {
            Expr::Input(_) | Expr::Const(_) => table.base_value_cost,
            Expr::Call { op, args, params } => {
                table.op_cost(*op)
                    + args.iter().map(|a| a.cost(table)).sum::<u32>()
                    + table.literal_cost * params.len() as u32
            }
        }
    }

    /// Operation names in evaluation order (innermost first).
    pub fn op_sequence(&self) -> Vec<OpCode> {
        let mut out = Vec::new();
        fn walk(e: &Expr, out: &mut Vec<OpCode>) {
            if let Expr::Call { op, args, .. } = e {
                for a in args {
                    walk(a, out);
                }
                out.push(*op);
            }
        }
        walk(self, &mut out);
        out
    }

    pub fn inputs_used(&self) -> Vec<usize> {
        let mut out = Vec::new();
        fn walk(e: &Expr, out: &mut Vec<usize>) {
            match e {
                Expr::Input(i) => {
                    if !out.contains(i) {
                        out.push(*i);
                    }
                }
                Expr::Const(_) => {}
                Expr::Call { args, .. } => args.iter().for_each(|a| walk(a, out)),
            }
        }
        walk(self, &mut out);
        out
    }

    pub fn render(&self) -> String {
        self.to_string()
    }
}

/// Bottom-up evaluation against the task inputs.
pub fn evaluate(expr: &Expr, inputs: &[Tensor]) -> Result<Tensor, EvalError> {
    match expr {
        Expr::Input(i) => inputs.get(*i).cloned().ok_or(EvalError::UnboundInput(*i)),
        Expr::Const(c) => Ok(Tensor::scalar(*c)),
        Expr::Call { op, args, params } => {
            let values = args
                .iter()
                .map(|a| evaluate(a, inputs))
                .collect::<Result<Vec<_>, _>>()?;
            let refs: Vec<&Tensor> = values.iter().collect();
            apply(*op, &refs, params).map_err(|source| EvalError::Op {
                expr: expr.render(),
                source,
            })
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Input(i) => write!(f, "in{}", i + 1),
            Expr::Const(c) => write!(f, "{c}"),
            Expr::Call { op, args, params } => {
                write!(f, "{op}(")?;
                match op {
                    OpCode::Stack => write!(f, "({}, {})", args[0], args[1])?,
                    _ => {
                        for (i, a) in args.iter().enumerate() {
                            if i > 0 {
                                f.write_str(", ")?;
                            }
                            write!(f, "{a}")?;
                        }
                    }
                }
                for p in params {
                    write!(f, ", {p}")?;
                }
                if *op == OpCode::Tensordot {
                    f.write_str(", 1")?;
                }
                f.write_str(")")
            }
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("unexpected character `{0}` at offset {1}")]
    BadChar(char, usize),
    #[error("unexpected end of input")]
    Eof,
    #[error("expected {0}")]
    Expected(&'static str),
    #[error("unknown operation `{0}`")]
    UnknownOp(String),
    #[error("`{op}` given malformed arguments")]
    BadArgs { op: String },
}

#[derive(Clone, Debug, PartialEq)]
enum Token {
    Ident(String),
    Int(i64),
    LParen,
    RParen,
    Comma,
}

fn tokenize(s: &str) -> Result<Vec<Token>, ParseError> {
    let mut tokens = Vec::new();
    let chars: Vec<char> = s.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        match c {
            c if c.is_whitespace() => i += 1,
            '(' => {
                tokens.push(Token::LParen);
                i += 1;
            }
            ')' => {
                tokens.push(Token::RParen);
                i += 1;
            }
            ',' => {
                tokens.push(Token::Comma);
                i += 1;
            }
            '-' | '0'..='9' => {
                let start = i;
                i += 1;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
                let text: String = chars[start..i].iter().collect();
                let v = text.parse().map_err(|_| ParseError::BadChar(c, start))?;
                tokens.push(Token::Int(v));
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len()
                    && (chars[i].is_ascii_alphanumeric() || chars[i] == '_' || chars[i] == '.')
                {
                    i += 1;
                }
                tokens.push(Token::Ident(chars[start..i].iter().collect()));
            }
            other => return Err(ParseError::BadChar(other, i)),
        }
    }
    Ok(tokens)
}

/// Untyped parse tree; converted to [`Expr`] using each op's schema.
#[derive(Debug)]
enum Node {
    Int(i64),
    Name(String),
    Call(String, Vec<Node>),
    Tuple(Vec<Node>),
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Result<Token, ParseError> {
        let t = self.tokens.get(self.pos).cloned().ok_or(ParseError::Eof)?;
        self.pos += 1;
        Ok(t)
    }

    fn node(&mut self) -> Result<Node, ParseError> {
        match self.next()? {
            Token::Int(v) => Ok(Node::Int(v)),
            Token::Ident(name) => {
                if self.peek() == Some(&Token::LParen) {
                    self.pos += 1;
                    let items = self.items()?;
                    Ok(Node::Call(name, items))
                } else {
                    Ok(Node::Name(name))
                }
            }
            Token::LParen => Ok(Node::Tuple(self.items()?)),
            _ => Err(ParseError::Expected("an expression")),
        }
    }

    /// Comma-separated nodes up to and including the closing paren.
    fn items(&mut self) -> Result<Vec<Node>, ParseError> {
        let mut items = Vec::new();
        loop {
            if self.peek() == Some(&Token::RParen) {
                self.pos += 1;
                return Ok(items);
            }
            items.push(self.node()?);
            match self.next()? {
                Token::Comma => {}
                Token::RParen => return Ok(items),
                _ => return Err(ParseError::Expected("`,` or `)`")),
            }
        }
    }
}

fn to_expr(node: Node) -> Result<Expr, ParseError> {
    match node {
        Node::Int(v) => Ok(Expr::Const(v)),
        Node::Name(name) => name
            .strip_prefix("in")
            .and_then(|n| n.parse::<usize>().ok())
            .filter(|&n| n >= 1)
            .map(|n| Expr::Input(n - 1))
            .ok_or(ParseError::Expected("an input name like in1")),
        Node::Tuple(_) => Err(ParseError::Expected("an expression, found a tuple")),
        Node::Call(name, items) => {
            let bare = name.strip_prefix("torch.").unwrap_or(&name);
            let op: OpCode = bare
                .parse()
                .map_err(|_| ParseError::UnknownOp(name.clone()))?;
            let bad = || ParseError::BadArgs { op: name.clone() };
            let mut items = items.into_iter();
            let mut args = Vec::new();
            if op == OpCode::Stack {
                match items.next() {
                    Some(Node::Tuple(pair)) if pair.len() == 2 => {
                        for n in pair {
                            args.push(to_expr(n)?);
                        }
                    }
                    _ => return Err(bad()),
                }
            } else {
                for _ in 0..op.arity() {
                    args.push(to_expr(items.next().ok_or_else(bad)?)?);
                }
            }
            let mut params = Vec::new();
            for kind in op.param_schema() {
                let lit = match (kind, items.next()) {
                    (ParamKind::Axis, Some(Node::Int(v))) => Literal::Int(v),
                    (ParamKind::ShapeTuple, Some(Node::Tuple(dims))) => Literal::Shape(
                        dims.into_iter()
                            .map(|d| match d {
                                Node::Int(v) if v > 0 => Ok(v as usize),
                                _ => Err(bad()),
                            })
                            .collect::<Result<_, _>>()?,
                    ),
                    _ => return Err(bad()),
                };
                params.push(lit);
            }
            if op == OpCode::Tensordot {
                match items.next() {
                    None | Some(Node::Int(1)) => {}
                    _ => return Err(bad()),
                }
            }
            if items.next().is_some() {
                return Err(bad());
            }
            Ok(Expr::Call { op, args, params })
        }
    }
}

impl FromStr for Expr {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut parser = Parser {
            tokens: tokenize(s)?,
            pos: 0,
        };
        let node = parser.node()?;
        if parser.pos != parser.tokens.len() {
            return Err(ParseError::Expected("end of input"));
        }
        to_expr(node)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Expr {
        s.parse().unwrap()
    }

    #[test]
    fn renders_in_call_syntax() {
        let any = Expr::call(OpCode::Any, vec![Expr::Input(0)], vec![Literal::Int(-1)]);
        assert_eq!(any.render(), "any(in1, -1)");
        assert_eq!(Expr::Input(1).render(), "in2");
        let nested = Expr::call(
            OpCode::Transpose,
            vec![Expr::call(
                OpCode::Stack,
                vec![Expr::Input(0), Expr::Input(0)],
                vec![Literal::Int(2)],
            )],
            vec![Literal::Int(0), Literal::Int(1)],
        );
        assert_eq!(nested.render(), "transpose(stack((in1, in1), 2), 0, 1)");
        let exp = Expr::call(
            OpCode::Expand,
            vec![Expr::Input(0)],
            vec![Literal::Shape(vec![2, 3, 2])],
        );
        assert_eq!(exp.render(), "expand(in1, (2, 3, 2))");
        let td = Expr::call(
            OpCode::Tensordot,
            vec![Expr::Input(0), Expr::Input(1)],
            vec![],
        );
        assert_eq!(td.render(), "tensordot(in1, in2, 1)");
    }

    #[test]
    fn parse_inverts_render() {
        for src in [
            "eq(in1, unsqueeze(in1, 1))",
            "where(lt(in1, 1), in1, 1)",
            "transpose(stack((in1, in1), 2), 0, 1)",
            "expand(in1, (4,))",
            "tensordot(in1, transpose(in2, 0, 1), 1)",
            "masked_select(in2, gt(in1, in3))",
            "in3",
            "-1",
        ] {
            let e = parse(src);
            assert_eq!(e.render(), src);
            assert_eq!(parse(&e.render()), e);
        }
    }

    #[test]
    fn parse_errors() {
        assert!(matches!(
            "square(in1)".parse::<Expr>(),
            Err(ParseError::UnknownOp(_))
        ));
        assert!(matches!(
            "stack(in1, in1, 0)".parse::<Expr>(),
            Err(ParseError::BadArgs { .. })
        ));
        assert!("eq(in1".parse::<Expr>().is_err());
        assert!("add(in1, in2) x".parse::<Expr>().is_err());
        assert!(matches!(
            "in0".parse::<Expr>(),
            Err(ParseError::Expected(_))
        ));
    }

    #[test]
    fn figure_one_cost() {
        let costs = CostTable::preset();
        let e = parse("stack((in1, in1), 2)");
        assert_eq!(e.cost(&costs), 48);
        let full = parse("transpose(stack((in1, in1), 2), 0, 1)");
        assert_eq!(full.cost(&costs), 48 + 20 + 8);
    }

    #[test]
    fn evaluates_reference_programs() {
        let in1 = Tensor::vector(&[3, 5, 0, 2, 3, 3, 0]);
        let out = evaluate(
            &parse("eq(in1, unsqueeze(in1, 1))"),
            std::slice::from_ref(&in1),
        )
        .unwrap();
        assert_eq!(out.shape(), &[7, 7]);
        assert_eq!(&out.data()[..7], &[1, 0, 0, 0, 1, 1, 0]);
        assert_eq!(
            evaluate(&Expr::Input(0), std::slice::from_ref(&in1)).unwrap(),
            in1
        );

        let m = Tensor::int(&[3, 4], &[15, 10, 9, 20, 11, 0, 1, 9, 10, 1, 11, 25]).unwrap();
        let sq = evaluate(&parse("mul(in1, in1)"), &[m]).unwrap();
        assert_eq!(
            sq.data(),
            &[225, 100, 81, 400, 121, 0, 1, 81, 100, 1, 121, 625]
        );
    }

    #[test]
    fn evaluation_errors_name_the_subexpression() {
        let e = parse("bincount(unsqueeze(in1, 0))");
        let err = evaluate(&e, &[Tensor::vector(&[1])]).unwrap_err();
        assert!(err.to_string().contains("bincount(unsqueeze(in1, 0))"));
        assert_eq!(
            evaluate(&Expr::Input(2), &[]),
            Err(EvalError::UnboundInput(2))
        );
    }

    #[test]
    fn op_sequence_is_innermost_first() {
        let e = parse("eq(in1, unsqueeze(in1, 1))");
        assert_eq!(e.op_sequence(), vec![OpCode::Unsqueeze, OpCode::Eq]);
        assert_eq!(e.inputs_used(), vec![0]);
    }
}
