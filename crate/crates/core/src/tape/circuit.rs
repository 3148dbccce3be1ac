//! Text form of a recorded tape, one node per line:
//!
//! ```text
//! 5 dense_matmul [3,4] 8x4 enc=true poly=true mult=ct_ct
//! ```
//!
//! The dump keeps only structure and metadata, which is all the HE analyzer
//! reads; values and constants are dropped.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use super::{MultKind, OpKind, TapeGraph};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CircuitNode {
    pub id: usize,
    pub op: OpKind,
    pub inputs: Vec<usize>,
    pub shape: (usize, usize),
    pub encrypted: bool,
    pub polynomial: bool,
    pub mult: MultKind,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Circuit {
    pub nodes: Vec<CircuitNode>,
    pub output: Option<usize>,
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("circuit line {line}: {message}")]
pub struct CircuitParseError {
    pub line: usize,
    pub message: String,
}

impl TapeGraph {
    pub fn circuit(&self) -> Circuit {
        let nodes = self
            .nodes()
            .iter()
            .enumerate()
            .map(|(id, n)| CircuitNode {
                id,
                op: n.kind(),
                inputs: n.op.inputs().iter().map(|i| i.index()).collect(),
                shape: n.shape,
                encrypted: n.meta.encrypted,
                polynomial: n.meta.polynomial,
                mult: n.meta.mult,
            })
            .collect();
        Circuit {
            nodes,
            output: self.output().map(|id| id.index()),
        }
    }
}

impl fmt::Display for CircuitNode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let inputs: Vec<String> = self.inputs.iter().map(|i| i.to_string()).collect();
        write!(
            f,
            "{} {} [{}] {}x{} enc={} poly={} mult={}",
            self.id,
            self.op,
            inputs.join(","),
            self.shape.0,
            self.shape.1,
            self.encrypted,
            self.polynomial,
            self.mult.as_str()
        )
    }
}

impl fmt::Display for Circuit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for n in &self.nodes {
            writeln!(f, "{n}")?;
        }
        if let Some(out) = self.output {
            writeln!(f, "# output {out}")?;
        }
        Ok(())
    }
}

fn parse_flag(tok: Option<&str>, key: &str) -> Result<bool, String> {
    let tok = tok.ok_or_else(|| format!("missing {key}="))?;
    match tok.strip_prefix(key).and_then(|t| t.strip_prefix('=')) {
        Some("true") => Ok(true),
        Some("false") => Ok(false),
        _ => Err(format!("expected {key}=true|false, got {tok:?}")),
    }
}

fn parse_node(text: &str, expected_id: usize) -> Result<CircuitNode, String> {
    let mut toks = text.split_whitespace();
    let id: usize = toks.next().and_then(|t| t.parse().ok()).ok_or("missing node id")?;
    if id != expected_id {
        return Err(format!("node id {id} out of order (expected {expected_id})"));
    }
    let op_tok = toks.next().ok_or("missing op")?;
    let op = OpKind::parse(op_tok).ok_or_else(|| format!("unknown op {op_tok:?}"))?;
    let list = toks
        .next()
        .and_then(|t| t.strip_prefix('[')?.strip_suffix(']'))
        .ok_or("expected [inputs]")?;
    let inputs = if list.is_empty() {
        vec![]
    } else {
        list.split(',')
            .map(|s| s.parse::<usize>().map_err(|_| format!("bad input id {s:?}")))
            .collect::<Result<Vec<_>, _>>()?
    };
    if let Some(bad) = inputs.iter().find(|&&i| i >= id) {
        return Err(format!("input {bad} does not precede node {id}"));
    }
    let shape_tok = toks.next().ok_or("missing shape")?;
    let shape = shape_tok
        .split_once('x')
        .and_then(|(r, c)| Some((r.parse().ok()?, c.parse().ok()?)))
        .ok_or_else(|| format!("bad shape {shape_tok:?}"))?;
    let encrypted = parse_flag(toks.next(), "enc")?;
    let polynomial = parse_flag(toks.next(), "poly")?;
    let mult_tok = toks.next().ok_or("missing mult=")?;
    let mult = mult_tok
        .strip_prefix("mult=")
        .and_then(MultKind::parse)
        .ok_or_else(|| format!("bad mult {mult_tok:?}"))?;
    if let Some(extra) = toks.next() {
        return Err(format!("trailing token {extra:?}"));
    }
    Ok(CircuitNode {
        id,
        op,
        inputs,
        shape,
        encrypted,
        polynomial,
        mult,
    })
}

impl FromStr for Circuit {
    type Err = CircuitParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut circuit = Circuit::default();
        for (idx, raw) in s.lines().enumerate() {
            let line = idx + 1;
            let err = |message: String| CircuitParseError { line, message };
            let text = raw.trim();
            if text.is_empty() {
                continue;
            }
            if let Some(comment) = text.strip_prefix('#') {
                if let Some(out) = comment.trim().strip_prefix("output") {
                    let out: usize = out
                        .trim()
                        .parse()
                        .map_err(|_| err(format!("bad output line {text:?}")))?;
                    circuit.output = Some(out);
                }
                continue;
            }
            let node = parse_node(text, circuit.nodes.len()).map_err(err)?;
            circuit.nodes.push(node);
        }
        if let Some(out) = circuit.output {
            if out >= circuit.nodes.len() {
                return Err(CircuitParseError {
                    line: s.lines().count(),
                    message: format!("output {out} names no node"),
                });
            }
        }
        Ok(circuit)
    }
}

#[cfg(test)]
mod tests {
    use super::super::InputKind;
    use super::*;

    #[test]
    fn dump_line_format() {
        let mut g = TapeGraph::new();
        let x = g.input("x", 8, 3, InputKind::Encrypted);
        let y = g.input("y", 3, 4, InputKind::Encrypted);
        let p = g.dense_matmul(x, y).unwrap();
        g.set_output(p);
        let dump = g.circuit().to_string();
        let lines: Vec<&str> = dump.lines().collect();
        assert_eq!(lines[0], "0 input [] 8x3 enc=true poly=true mult=none");
        assert_eq!(lines[2], "2 dense_matmul [0,1] 8x4 enc=true poly=true mult=ct_ct");
        assert_eq!(lines[3], "# output 2");
    }

    #[test]
    fn dump_parse_round_trip() {
        let mut g = TapeGraph::new();
        let x = g.input("x", 4, 2, InputKind::Encrypted);
        let w = g.input("w", 2, 2, InputKind::Parameter);
        let h = g.dense_matmul(x, w).unwrap();
        let r = g.relu(h).unwrap();
        let s = g.sum_all(r).unwrap();
        g.set_output(s);
        let c = g.circuit();
        let parsed: Circuit = c.to_string().parse().unwrap();
        assert_eq!(parsed, c);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let text = "0 input [] 2x2 enc=true poly=true mult=none\n1 frobnicate [0] 1x1 enc=true poly=true mult=none\n";
        let e = text.parse::<Circuit>().unwrap_err();
        assert_eq!(e.line, 2);
        let text = "0 input [] 2x2 enc=true poly=true mult=none\n1 add [0,1] 2x2 enc=true poly=true mult=none\n";
        assert!(text.parse::<Circuit>().is_err());
    }
}
