//! Plain-text checkpoints.
//!
//! ```text
//! beacon-game-mlp 1
//! input <width>
//! layers <count>
//! layer <out> <bn:0|1> <activation> [lo hi]
//! weight <in> <out>
//! <in rows of out values>
//! bias <out>
//! <one row>
//! norm <momentum> <eps>          (only with bn = 1)
//! gamma / beta / mean / var <out> with one row each
//! ```
//!
//! A generator checkpoint prefixes `generator <K> <q_aux>`. Values use the
//! shortest representation that parses back to the same number.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};

use super::generator::GeneratorMechanism;
use super::mlp::{Activation, BatchNorm, Layer, Mlp};
use crate::error::{Error, Result};
use crate::population::write_atomic;
use crate::scalar::Scalar;

const MAGIC: &str = "beacon-game-mlp 1";

fn activation_token(a: Activation) -> String {
    match a {
        Activation::Relu => "relu".into(),
        Activation::LeakyRelu => "leaky-relu".into(),
        Activation::Sigmoid => "sigmoid".into(),
        Activation::Identity => "identity".into(),
        Activation::ScaledSigmoid { lo, hi } => format!("scaled-sigmoid {lo} {hi}"),
    }
}

fn push_row<T: Scalar>(s: &mut String, values: impl Iterator<Item = T>) {
    let row: Vec<String> = values.map(|v| v.to_string()).collect();
    s.push_str(&row.join(" "));
    s.push('\n');
}

fn push_vector<T: Scalar>(s: &mut String, name: &str, v: &Array1<T>) {
    let _ = writeln!(s, "{name} {}", v.len());
    push_row(s, v.iter().copied());
}

pub fn mlp_to_text<T: Scalar>(net: &Mlp<T>) -> String {
    let mut s = format!("{MAGIC}\ninput {}\nlayers {}\n", net.input_width(), net.layers().len());
    for l in net.layers() {
        let _ = writeln!(s, "layer {} {} {}", l.outputs(), u8::from(l.norm.is_some()), activation_token(l.activation));
        let _ = writeln!(s, "weight {} {}", l.inputs(), l.outputs());
        for row in l.weight.rows() {
            push_row(&mut s, row.iter().copied());
        }
        push_vector(&mut s, "bias", &l.bias);
        if let Some(n) = &l.norm {
            let _ = writeln!(s, "norm {} {}", n.momentum, n.eps);
            push_vector(&mut s, "gamma", &n.gamma);
            push_vector(&mut s, "beta", &n.beta);
            push_vector(&mut s, "mean", &n.running_mean);
            push_vector(&mut s, "var", &n.running_var);
        }
    }
    s
}

pub fn generator_to_text<T: Scalar>(g: &GeneratorMechanism<T>) -> String {
    format!("generator {} {}\n{}", g.num_individuals, g.q_aux, mlp_to_text(&g.model))
}

struct Lines<'a> {
    path: PathBuf,
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
    line: usize,
}

impl<'a> Lines<'a> {
    fn new(path: &Path, text: &'a str) -> Self {
        Self { path: path.to_path_buf(), lines: text.lines().enumerate(), line: 0 }
    }

    fn err(&self, reason: impl Into<String>) -> Error {
        Error::Parse { path: self.path.clone(), line: self.line, reason: reason.into() }
    }

    fn next(&mut self) -> Result<&'a str> {
        let (i, l) = self.lines.next().ok_or_else(|| Error::Parse { path: self.path.clone(), line: self.line + 1, reason: "unexpected end of file".into() })?;
        self.line = i + 1;
        Ok(l.trim())
    }

    /// A `keyword n1 n2 ...` line with `arity` integer fields.
    fn header(&mut self, keyword: &str, arity: usize) -> Result<Vec<usize>> {
        let l = self.next()?;
        let mut it = l.split_whitespace();
        if it.next() != Some(keyword) {
            return Err(self.err(format!("expected `{keyword}`")));
        }
        let v: Vec<usize> = it.map(|t| t.parse().map_err(|_| self.err(format!("bad integer `{t}`")))).collect::<Result<_>>()?;
        if v.len() != arity {
            return Err(self.err(format!("`{keyword}` takes {arity} fields")));
        }
        Ok(v)
    }

    fn row<T: Scalar>(&mut self, n: usize) -> Result<Vec<T>> {
        let l = self.next()?;
        let v: Vec<T> = l.split_whitespace().map(|t| T::from_str_radix(t, 10).map_err(|_| self.err(format!("bad number `{t}`")))).collect::<Result<_>>()?;
        if v.len() != n {
            return Err(self.err(format!("expected {n} values, found {}", v.len())));
        }
        Ok(v)
    }

    fn vector<T: Scalar>(&mut self, keyword: &str, n: usize) -> Result<Array1<T>> {
        let len = self.header(keyword, 1)?[0];
        if len != n {
            return Err(self.err(format!("`{keyword}` has length {len}, expected {n}")));
        }
        Ok(Array1::from(self.row(n)?))
    }
}

fn parse_activation(tokens: &[&str]) -> Option<Activation> {
    match tokens {
        ["relu"] => Some(Activation::Relu),
        ["leaky-relu"] => Some(Activation::LeakyRelu),
        ["sigmoid"] => Some(Activation::Sigmoid),
        ["identity"] => Some(Activation::Identity),
        ["scaled-sigmoid", lo, hi] => Some(Activation::ScaledSigmoid { lo: lo.parse().ok()?, hi: hi.parse().ok()? }),
        _ => None,
    }
}

fn parse_mlp<T: Scalar>(src: &mut Lines<'_>) -> Result<Mlp<T>> {
    if src.next()? != MAGIC {
        return Err(src.err(format!("expected `{MAGIC}`")));
    }
    let input = src.header("input", 1)?[0];
    let count = src.header("layers", 1)?[0];
    let mut layers = Vec::with_capacity(count);
    let mut fan_in = input;
    for _ in 0..count {
        let l = src.next()?;
        let tokens: Vec<&str> = l.split_whitespace().collect();
        let (out, bn, activation) = match tokens.as_slice() {
            ["layer", out, bn, rest @ ..] => (
                out.parse::<usize>().map_err(|_| src.err("bad layer width"))?,
                match *bn {
                    "0" => false,
                    "1" => true,
                    _ => return Err(src.err("batch-norm flag must be 0 or 1")),
                },
                parse_activation(rest).ok_or_else(|| src.err(format!("unknown activation `{}`", rest.join(" "))))?,
            ),
            _ => return Err(src.err("expected `layer`")),
        };
        let dims = src.header("weight", 2)?;
        if dims != [fan_in, out] {
            return Err(src.err(format!("weight is {}x{}, expected {fan_in}x{out}", dims[0], dims[1])));
        }
        let mut values = Vec::with_capacity(fan_in * out);
        for _ in 0..fan_in {
            values.extend(src.row::<T>(out)?);
        }
        let weight = Array2::from_shape_vec((fan_in, out), values).expect("row count checked");
        let bias = src.vector("bias", out)?;
        let norm = if bn {
            let l = src.next()?;
            let t: Vec<&str> = l.split_whitespace().collect();
            let (momentum, eps) = match t.as_slice() {
                ["norm", m, e] => (m.parse().map_err(|_| src.err("bad momentum"))?, e.parse().map_err(|_| src.err("bad eps"))?),
                _ => return Err(src.err("expected `norm`")),
            };
            Some(BatchNorm {
                gamma: src.vector("gamma", out)?,
                beta: src.vector("beta", out)?,
                running_mean: src.vector("mean", out)?,
                running_var: src.vector("var", out)?,
                momentum,
                eps,
            })
        } else {
            None
        };
        layers.push(Layer { weight, bias, norm, activation });
        fan_in = out;
    }
    Mlp::from_layers(input, layers)
}

pub fn mlp_from_text<T: Scalar>(text: &str, path: &Path) -> Result<Mlp<T>> {
    parse_mlp(&mut Lines::new(path, text))
}

pub fn generator_from_text<T: Scalar>(text: &str, path: &Path) -> Result<GeneratorMechanism<T>> {
    let mut src = Lines::new(path, text);
    let h = src.header("generator", 2)?;
    let model = parse_mlp(&mut src)?;
    GeneratorMechanism::new(model, h[0], h[1])
}

pub fn save_mlp<T: Scalar>(net: &Mlp<T>, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), mlp_to_text(net).as_bytes())
}

pub fn load_mlp<T: Scalar>(path: impl AsRef<Path>) -> Result<Mlp<T>> {
    let path = path.as_ref();
    mlp_from_text(&std::fs::read_to_string(path)?, path)
}

pub fn save_generator<T: Scalar>(g: &GeneratorMechanism<T>, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), generator_to_text(g).as_bytes())
}

pub fn load_generator<T: Scalar>(path: impl AsRef<Path>) -> Result<GeneratorMechanism<T>> {
    let path = path.as_ref();
    generator_from_text(&std::fs::read_to_string(path)?, path)
}
