//! Line-oriented loss format: `step base g1:c1 g2:c2 ...` or `linear a`, one loss per line.
//! Blank lines and lines starting with `#` are ignored.

use std::fmt;
use std::str::FromStr;

use super::{BoundFn, LinearLoss, Loss, StepLoss};
use crate::error::{Error, Result};

fn number(tok: &str) -> std::result::Result<f64, String> {
    tok.parse::<f64>().map_err(|_| format!("not a number: {tok:?}"))
}

fn parse_step(tokens: &[&str]) -> std::result::Result<StepLoss, String> {
    let (base, rest) = tokens.split_first().ok_or("step needs a base value")?;
    let base = number(base)?;
    let jumps = rest
        .iter()
        .map(|tok| {
            let (g, c) = tok.split_once(':').ok_or(format!("jump {tok:?} is not g:c"))?;
            Ok((number(g)?, number(c)?))
        })
        .collect::<std::result::Result<Vec<_>, String>>()?;
    StepLoss::new(base, jumps).map_err(|e| e.to_string())
}

fn parse_loss_line(line: &str) -> std::result::Result<Loss, String> {
    let tokens: Vec<&str> = line.split_whitespace().collect();
    match tokens.as_slice() {
        ["step", rest @ ..] => parse_step(rest).map(Loss::Step),
        ["linear", a] => LinearLoss::new(number(a)?).map(Loss::Linear).map_err(|e| e.to_string()),
        ["linear", ..] => Err("linear takes exactly one slope".into()),
        [kind, ..] => Err(format!("unknown loss kind {kind:?}")),
        [] => Err("empty line".into()),
    }
}

impl FromStr for Loss {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        parse_loss_line(s.trim()).map_err(|message| Error::Parse { line: 1, message })
    }
}

pub fn parse_losses(text: &str) -> Result<Vec<Loss>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| {
            let l = l.trim();
            !l.is_empty() && !l.starts_with('#')
        })
        .map(|(i, l)| parse_loss_line(l.trim()).map_err(|message| Error::Parse { line: i + 1, message }))
        .collect()
}

pub fn format_losses(losses: &[Loss]) -> String {
    losses.iter().map(|l| format!("{l}\n")).collect()
}

impl fmt::Display for StepLoss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "step {}", self.base())?;
        for (g, c) in self.jumps() {
            write!(f, " {g}:{c}")?;
        }
        Ok(())
    }
}

impl fmt::Display for Loss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Loss::Step(s) => s.fmt(f),
            Loss::Linear(l) => write!(f, "linear {}", l.slope),
        }
    }
}

impl fmt::Display for BoundFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BoundFn::Constant(b) => write!(f, "const {b}"),
            BoundFn::Linear(b) => write!(f, "linear {b}"),
            BoundFn::Step(s) => s.fmt(f),
        }
    }
}

/// `const B`, `linear b` or a step line; `const:1` style is accepted too.
impl FromStr for BoundFn {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let err = |message: String| Error::Parse { line: 1, message };
        let s = s.trim();
        let normalized = match s.split_once(':') {
            Some((kind, v)) if !s.contains(char::is_whitespace) && kind != "step" => format!("{kind} {v}"),
            _ => s.to_string(),
        };
        let tokens: Vec<&str> = normalized.split_whitespace().collect();
        match tokens.as_slice() {
            ["const" | "constant", b] => BoundFn::constant(number(b).map_err(err)?),
            ["linear", b] => BoundFn::linear(number(b).map_err(err)?),
            ["step", rest @ ..] => parse_step(rest).map(BoundFn::Step).map_err(err),
            _ => Err(err(format!("unrecognized bound spec {s:?}"))),
        }
    }
}
