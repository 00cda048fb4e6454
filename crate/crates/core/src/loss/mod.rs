//! Loss and bound representations: left-continuous step losses, linear losses,
//! and the upper bound `B(lambda)`.

mod text;

pub use text::{format_losses, parse_losses};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Relative slack for `L(lambda) <= B(lambda)` checks. Sums of `1/|Y|` jump sizes can
/// round a hair above 1.
pub(crate) fn bound_tolerance(b: f64) -> f64 {
    1e-9 * b.abs().max(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawInterval")]
pub struct ParamInterval {
    lo: f64,
    hi: f64,
}

#[derive(Deserialize)]
struct RawInterval {
    lo: f64,
    hi: f64,
}

impl TryFrom<RawInterval> for ParamInterval {
    type Error = Error;
    fn try_from(raw: RawInterval) -> Result<Self> {
        ParamInterval::new(raw.lo, raw.hi)
    }
}

impl ParamInterval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !lo.is_finite() || !hi.is_finite() {
            return Err(invalid(format!("interval endpoints must be finite, got [{lo}, {hi}]")));
        }
        if lo > hi {
            return Err(invalid(format!("interval has lo > hi: [{lo}, {hi}]")));
        }
        Ok(Self { lo, hi })
    }

    pub fn unit() -> Self {
        Self { lo: 0.0, hi: 1.0 }
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    /// `n >= 2` evenly spaced points including both endpoints.
    pub fn grid(&self, n: usize) -> Vec<f64> {
        match n {
            0 => Vec::new(),
            1 => vec![self.lo],
            _ => {
                let step = (self.hi - self.lo) / (n - 1) as f64;
                (0..n)
                    .map(|i| if i == n - 1 { self.hi } else { self.lo + step * i as f64 })
                    .collect()
            }
        }
    }
}

/// `L(lambda) = base + sum of sizes c_j over jumps with g_j < lambda`.
///
/// Jumps are sorted at construction and equal locations merged; prefix sums make
/// evaluation a binary search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawStep", into = "RawStep")]
pub struct StepLoss {
    base: f64,
    locations: Vec<f64>,
    sizes: Vec<f64>,
    prefix: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawStep {
    base: f64,
    jumps: Vec<(f64, f64)>,
}

impl TryFrom<RawStep> for StepLoss {
    type Error = Error;
    fn try_from(raw: RawStep) -> Result<Self> {
        StepLoss::new(raw.base, raw.jumps)
    }
}

impl From<StepLoss> for RawStep {
    fn from(s: StepLoss) -> Self {
        RawStep { base: s.base, jumps: s.jumps().collect() }
    }
}

impl StepLoss {
    pub fn new(base: f64, jumps: impl IntoIterator<Item = (f64, f64)>) -> Result<Self> {
        if !base.is_finite() {
            return Err(invalid("step loss base must be finite"));
        }
        let mut jumps: Vec<(f64, f64)> = jumps.into_iter().collect();
        for &(g, c) in &jumps {
            if !g.is_finite() || !c.is_finite() {
                return Err(invalid(format!("non-finite jump ({g}, {c})")));
            }
            if c < 0.0 {
                return Err(invalid(format!("negative jump size {c} at {g}")));
            }
        }
        jumps.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut locations: Vec<f64> = Vec::with_capacity(jumps.len());
        let mut sizes: Vec<f64> = Vec::with_capacity(jumps.len());
        for (g, c) in jumps {
            match locations.last() {
                Some(&last) if last == g => *sizes.last_mut().unwrap() += c,
                _ => {
                    locations.push(g);
                    sizes.push(c);
                }
            }
        }
        let prefix = sizes
            .iter()
            .scan(0.0, |acc, &c| {
                *acc += c;
                Some(*acc)
            })
            .collect();
        Ok(Self { base, locations, sizes, prefix })
    }

    /// `1[q < lambda]`.
    pub fn indicator(q: f64) -> Result<Self> {
        Self::new(0.0, [(q, 1.0)])
    }

    pub fn base(&self) -> f64 {
        self.base
    }

    pub fn locations(&self) -> &[f64] {
        &self.locations
    }

    pub fn sizes(&self) -> &[f64] {
        &self.sizes
    }

    pub fn jumps(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.locations.iter().copied().zip(self.sizes.iter().copied())
    }

    pub fn eval(&self, lambda: f64) -> f64 {
        let k = self.locations.partition_point(|&g| g < lambda);
        if k == 0 {
            self.base
        } else {
            self.base + self.prefix[k - 1]
        }
    }

    /// Value once every jump has fired.
    pub fn total(&self) -> f64 {
        self.base + self.prefix.last().copied().unwrap_or(0.0)
    }
}

/// `L(lambda) = a * lambda`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearLoss {
    pub slope: f64,
}

impl LinearLoss {
    pub fn new(slope: f64) -> Result<Self> {
        if !slope.is_finite() {
            return Err(invalid("linear loss slope must be finite"));
        }
        Ok(Self { slope })
    }

    pub fn eval(&self, lambda: f64) -> f64 {
        self.slope * lambda
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Loss {
    Step(StepLoss),
    Linear(LinearLoss),
}

impl Loss {
    pub fn eval(&self, lambda: f64) -> f64 {
        match self {
            Loss::Step(s) => s.eval(lambda),
            Loss::Linear(l) => l.eval(lambda),
        }
    }

    pub fn is_nondecreasing(&self) -> bool {
        match self {
            Loss::Step(_) => true,
            Loss::Linear(l) => l.slope >= 0.0,
        }
    }

    pub fn jump_locations(&self) -> &[f64] {
        match self {
            Loss::Step(s) => s.locations(),
            Loss::Linear(_) => &[],
        }
    }
}

impl From<StepLoss> for Loss {
    fn from(s: StepLoss) -> Self {
        Loss::Step(s)
    }
}

impl From<LinearLoss> for Loss {
    fn from(l: LinearLoss) -> Self {
        Loss::Linear(l)
    }
}

pub fn eval_loss(loss: &Loss, lambda: f64) -> f64 {
    loss.eval(lambda)
}

/// Upper bound `B(lambda)`; every variant is nondecreasing by construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum BoundFn {
    Constant(f64),
    Linear(f64),
    Step(StepLoss),
}

impl BoundFn {
    pub fn constant(b: f64) -> Result<Self> {
        if !b.is_finite() {
            return Err(invalid("constant bound must be finite"));
        }
        Ok(BoundFn::Constant(b))
    }

    pub fn linear(slope: f64) -> Result<Self> {
        if !slope.is_finite() || slope < 0.0 {
            return Err(invalid(format!("linear bound slope must be finite and >= 0, got {slope}")));
        }
        Ok(BoundFn::Linear(slope))
    }

    pub fn eval(&self, lambda: f64) -> f64 {
        match self {
            BoundFn::Constant(b) => *b,
            BoundFn::Linear(b) => b * lambda,
            BoundFn::Step(s) => s.eval(lambda),
        }
    }

    pub fn jump_locations(&self) -> &[f64] {
        match self {
            BoundFn::Step(s) => s.locations(),
            _ => &[],
        }
    }

    /// Checks the variant invariants, for values that bypassed the constructors.
    pub fn validate(&self) -> Result<()> {
        match self {
            BoundFn::Constant(b) => Self::constant(*b).map(|_| ()),
            BoundFn::Linear(b) => Self::linear(*b).map(|_| ()),
            BoundFn::Step(_) => Ok(()),
        }
    }
}

/// FNR loss of one image: a jump of `1/|Y|` at every positive-pixel score.
pub fn fnr_step_loss(positive_scores: &[f64]) -> Result<StepLoss> {
    if positive_scores.is_empty() {
        return Err(Error::NoPositivePixels);
    }
    let size = 1.0 / positive_scores.len() as f64;
    StepLoss::new(0.0, positive_scores.iter().map(|&s| (s, size)))
}

const JUMP_PROBE: f64 = 1e-9;

/// Checks `L_i(lambda) <= B(lambda)` on `grid`, plus just around every jump inside the grid span.
pub fn validate_bound(losses: &[Loss], bound: &BoundFn, grid: &[f64]) -> bool {
    if losses.is_empty() {
        return true;
    }
    let mut points = grid.to_vec();
    if let (Some(lo), Some(hi)) = (
        grid.iter().copied().reduce(f64::min),
        grid.iter().copied().reduce(f64::max),
    ) {
        let jumps = losses
            .iter()
            .flat_map(|l| l.jump_locations().iter())
            .chain(bound.jump_locations());
        for &g in jumps {
            for p in [g - JUMP_PROBE, g, g + JUMP_PROBE] {
                if lo <= p && p <= hi {
                    points.push(p);
                }
            }
        }
    }
    points.iter().all(|&p| {
        let b = bound.eval(p);
        losses.iter().all(|l| l.eval(p) <= b + bound_tolerance(b))
    })
}
