//! Linear loss sequences on which Adam fails, and their stochastic versions.
//!
//! Every scenario here is one-dimensional with `f_t(x) = c_t * x` on
//! `[-1, 1]`, except [`TableScenario`], which replays an arbitrary slope table
//! in any dimension. Time is 1-indexed: a period-3 spike hits t = 1, 4, 7, ...
//!
//! Stochastic draws come from SplitMix64 (64-bit state, seeded directly by
//! the run seed). Each draw takes the top 53 bits of one output as a uniform
//! `u` in `[0, 1)` and picks the first outcome whose cumulative probability
//! exceeds `u`.

use rand::{Rng, SeedableRng};
use rand_xoshiro::SplitMix64;

use crate::error::{Error, Result};
use crate::numcore::{BoxSet, RealVec};
use crate::optim::Schedule;

/// Search cap for the period of the general counterexample.
pub const DEFAULT_C_MAX: u64 = 1_000_000;

/// Deterministic periodic slope sequence: `spike` when `t mod period = 1`,
/// `base` otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct OnlineScenario {
    pub name: String,
    pub bx: BoxSet,
    pub period: u64,
    pub spike: f64,
    pub base: f64,
    pub recommended: Option<Schedule>,
}

impl OnlineScenario {
    pub fn slope(&self, t: u64) -> f64 {
        if t % self.period == 1 % self.period {
            self.spike
        } else {
            self.base
        }
    }

    /// Bound on `|c_t|`.
    pub fn g_inf(&self) -> f64 {
        self.spike.abs().max(self.base.abs())
    }

    /// Sum of slopes over one period.
    pub fn period_drift(&self) -> f64 {
        self.spike + (self.period - 1) as f64 * self.base
    }

    /// Best fixed point: `lo` when the period drift is positive, else `hi`.
    pub fn comparator_hint(&self) -> f64 {
        if self.period_drift() >= 0.0 {
            self.bx.lo()[0]
        } else {
            self.bx.hi()[0]
        }
    }
}

/// I.i.d. slopes from a finite distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct StochasticScenario {
    pub name: String,
    pub bx: BoxSet,
    /// `(slope, probability)` pairs.
    pub outcomes: Vec<(f64, f64)>,
    pub seed: u64,
    pub expected_slope: f64,
}

impl StochasticScenario {
    pub fn new(name: impl Into<String>, bx: BoxSet, outcomes: Vec<(f64, f64)>, seed: u64) -> Result<Self> {
        if outcomes.is_empty() {
            return Err(Error::Parameter("empty slope distribution".into()));
        }
        if outcomes.iter().any(|&(s, p)| !s.is_finite() || !(0.0..=1.0).contains(&p)) {
            return Err(Error::Parameter("slopes must be finite and probabilities in [0, 1]".into()));
        }
        let total: f64 = outcomes.iter().map(|o| o.1).sum();
        if (total - 1.0).abs() > 1e-15 {
            return Err(Error::Parameter(format!("probabilities sum to {total}, not 1")));
        }
        let expected_slope = outcomes.iter().map(|(s, p)| s * p).sum();
        Ok(StochasticScenario {
            name: name.into(),
            bx,
            outcomes,
            seed,
            expected_slope,
        })
    }

    pub fn g_inf(&self) -> f64 {
        self.outcomes.iter().map(|o| o.0.abs()).fold(0.0, f64::max)
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        StochasticScenario { seed, ..self.clone() }
    }

    pub fn sampler(&self) -> SlopeSampler {
        SlopeSampler {
            rng: SplitMix64::seed_from_u64(self.seed),
            outcomes: self.outcomes.clone(),
        }
    }

    /// Minimizer of the expected loss over the box (ties go to `lo`).
    pub fn comparator_hint(&self) -> f64 {
        if self.expected_slope >= 0.0 {
            self.bx.lo()[0]
        } else {
            self.bx.hi()[0]
        }
    }
}

/// Owned sampling state of one stochastic run.
#[derive(Debug, Clone)]
pub struct SlopeSampler {
    rng: SplitMix64,
    outcomes: Vec<(f64, f64)>,
}

impl SlopeSampler {
    pub fn draw(&mut self) -> f64 {
        let u: f64 = self.rng.gen();
        let mut cum = 0.0;
        for &(slope, p) in &self.outcomes {
            cum += p;
            if u < cum {
                return slope;
            }
        }
        self.outcomes[self.outcomes.len() - 1].0
    }
}

/// Replays an explicit slope table; `slopes[t - 1]` is `c_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct TableScenario {
    pub bx: BoxSet,
    pub slopes: Vec<RealVec>,
}

impl TableScenario {
    pub fn new(bx: BoxSet, slopes: Vec<RealVec>) -> Result<Self> {
        if let Some(bad) = slopes.iter().find(|s| s.len() != bx.dim()) {
            return Err(Error::Dimension { expected: bx.dim(), got: bad.len() });
        }
        Ok(TableScenario { bx, slopes })
    }

    pub fn g_inf(&self) -> f64 {
        self.slopes
            .iter()
            .flat_map(|s| s.iter().map(|c| c.abs()))
            .fold(0.0, f64::max)
    }
}

/// Any linear loss sequence.
#[derive(Debug, Clone, PartialEq)]
pub enum Scenario {
    Online(OnlineScenario),
    Stochastic(StochasticScenario),
    Table(TableScenario),
}

impl Scenario {
    pub fn bx(&self) -> &BoxSet {
        match self {
            Scenario::Online(s) => &s.bx,
            Scenario::Stochastic(s) => &s.bx,
            Scenario::Table(s) => &s.bx,
        }
    }

    pub fn dim(&self) -> usize {
        self.bx().dim()
    }

    pub fn g_inf(&self) -> f64 {
        match self {
            Scenario::Online(s) => s.g_inf(),
            Scenario::Stochastic(s) => s.g_inf(),
            Scenario::Table(s) => s.g_inf(),
        }
    }

    pub fn name(&self) -> &str {
        match self {
            Scenario::Online(s) => &s.name,
            Scenario::Stochastic(s) => &s.name,
            Scenario::Table(_) => "table",
        }
    }

    pub fn stream(&self) -> SlopeStream<'_> {
        match self {
            Scenario::Online(s) => SlopeStream::Online(s),
            Scenario::Stochastic(s) => SlopeStream::Stochastic(s.sampler()),
            Scenario::Table(s) => SlopeStream::Table(&s.slopes),
        }
    }
}

/// Per-run cursor over a scenario's slopes.
#[derive(Debug, Clone)]
pub enum SlopeStream<'a> {
    Online(&'a OnlineScenario),
    Stochastic(SlopeSampler),
    Table(&'a [RealVec]),
}

impl SlopeStream<'_> {
    /// Slope vector `c_t`. Must be called with `t = 1, 2, ...` in order for
    /// stochastic scenarios.
    pub fn slope(&mut self, t: u64) -> Result<RealVec> {
        match self {
            SlopeStream::Online(s) => RealVec::scalar(s.slope(t)),
            SlopeStream::Stochastic(s) => RealVec::scalar(s.draw()),
            SlopeStream::Table(rows) => rows
                .get((t - 1) as usize)
                .cloned()
                .ok_or_else(|| Error::Contract(format!("slope table has no row for t = {t}"))),
        }
    }
}

/// Period-3 sequence `(C, -1, -1)` with `beta2 = 1 / (1 + C^2)`.
pub fn thm1_sequence(c: f64) -> Result<OnlineScenario> {
    if !(c > 2.0 && c.is_finite()) {
        return Err(Error::Parameter(format!("C = {c} must satisfy C > 2")));
    }
    let beta2 = 1.0 / (1.0 + c * c);
    let alpha = 0.5;
    debug_assert!(alpha < (1.0 - beta2).sqrt());
    Ok(OnlineScenario {
        name: format!("thm1(C={c})"),
        bx: BoxSet::unit_interval(),
        period: 3,
        spike: c,
        base: -1.0,
        recommended: Some(Schedule::new(alpha, 0.0, beta2)),
    })
}

/// Outcome of [`check_thm2_conditions`]. A slack is `rhs - lhs`; conditions
/// (i) and (ii) need `slack >= 0`, condition (iii) needs `slack > 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thm2Check {
    pub satisfied: bool,
    pub slacks: [f64; 3],
}

fn thm2_gamma(beta1: f64, beta2: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) {
        return Err(Error::Parameter(format!(
            "beta1 = {beta1} and beta2 = {beta2} must lie in [0, 1)"
        )));
    }
    if beta1 == 0.0 {
        return Ok(0.0);
    }
    if beta2 == 0.0 || beta1 >= beta2.sqrt() {
        return Err(Error::Parameter(format!(
            "need beta1 < sqrt(beta2), got beta1 = {beta1}, beta2 = {beta2}"
        )));
    }
    Ok(beta1 / beta2.sqrt())
}

/// Evaluates the three conditions the period `C` of the general
/// counterexample must satisfy.
pub fn check_thm2_conditions(beta1: f64, beta2: f64, c: u64) -> Result<Thm2Check> {
    let gamma = thm2_gamma(beta1, beta2)?;
    if c < 2 || !c.is_multiple_of(2) {
        return Err(Error::Parameter(format!("C = {c} must be an even integer >= 2")));
    }
    let cf = c as f64;
    let b1_cm1 = beta1.powf(cf - 1.0);
    let s1 = (1.0 - b1_cm1) - (1.0 - beta1) * b1_cm1 * cf;
    let s2 = 1.0 - beta2.powf((cf - 2.0) / 2.0) * cf * cf;
    let geo = if gamma == 0.0 {
        0.0
    } else {
        gamma * (1.0 - gamma.powf(cf - 1.0)) / (1.0 - gamma)
    };
    let lhs3 = 3.0 * (1.0 - beta1) / (2.0 * (1.0 - beta2).sqrt()) * (1.0 + geo)
        + beta1.powf(cf / 2.0 - 1.0) / (1.0 - beta1);
    let s3 = cf / 3.0 - lhs3;
    Ok(Thm2Check {
        satisfied: s1 >= 0.0 && s2 >= 0.0 && s3 > 0.0,
        slacks: [s1, s2, s3],
    })
}

/// Smallest even `C <= c_max` satisfying the conditions.
pub fn find_thm2_c(beta1: f64, beta2: f64, c_max: u64) -> Result<u64> {
    if beta1 >= beta2.sqrt() {
        return Err(Error::Parameter(format!(
            "need beta1 < sqrt(beta2), got beta1 = {beta1}, beta2 = {beta2}"
        )));
    }
    let mut last = None;
    let mut c = 2;
    while c <= c_max {
        let check = check_thm2_conditions(beta1, beta2, c)?;
        if check.satisfied {
            return Ok(c);
        }
        last = Some(check);
        c += 2;
    }
    Err(Error::SearchExhausted {
        cap: c_max,
        residuals: last.map(|l| l.slacks).unwrap_or([f64::NAN; 3]),
    })
}

/// Period-`C` sequence `(C, -1, ..., -1)` with the smallest valid `C`.
pub fn thm2_sequence(beta1: f64, beta2: f64) -> Result<(u64, OnlineScenario)> {
    thm2_sequence_capped(beta1, beta2, DEFAULT_C_MAX)
}

pub fn thm2_sequence_capped(beta1: f64, beta2: f64, c_max: u64) -> Result<(u64, OnlineScenario)> {
    let c = find_thm2_c(beta1, beta2, c_max)?;
    Ok((
        c,
        OnlineScenario {
            name: format!("thm2(beta1={beta1},beta2={beta2},C={c})"),
            bx: BoxSet::unit_interval(),
            period: c,
            spike: c as f64,
            base: -1.0,
            recommended: Some(Schedule::new(0.5, beta1, beta2)),
        },
    ))
}

/// Slope `C` with probability `(1 + delta) / (C + 1)`, else `-1`.
pub fn thm3_stochastic(c: f64, delta: f64, seed: u64) -> Result<StochasticScenario> {
    if !(c >= 1.0 && c.is_finite()) {
        return Err(Error::Parameter(format!("C = {c} must be >= 1")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Parameter(format!("delta = {delta} must be in (0, 1)")));
    }
    let p = (1.0 + delta) / (c + 1.0);
    if p > 1.0 {
        return Err(Error::Parameter(format!("spike probability {p} exceeds 1")));
    }
    StochasticScenario::new(
        format!("thm3(C={c},delta={delta})"),
        BoxSet::unit_interval(),
        vec![(c, p), (-1.0, 1.0 - p)],
        seed,
    )
}

/// The period-3 sequence rescaled by `sqrt(eps)`, for Adam with epsilon.
pub fn thm6_epsilon(c: f64, eps: f64) -> Result<OnlineScenario> {
    if !(c >= 2.0 && c.is_finite()) {
        return Err(Error::Parameter(format!("C = {c} must be >= 2")));
    }
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::Parameter(format!("eps = {eps} must be > 0")));
    }
    let r = eps.sqrt();
    let beta2 = 2.0 / ((1.0 + c * c) * c * c);
    Ok(OnlineScenario {
        name: format!("thm6(C={c},eps={eps})"),
        bx: BoxSet::unit_interval(),
        period: 3,
        spike: c * r,
        base: -r,
        recommended: Some(Schedule::new(0.5, 0.0, beta2).with_epsilon(eps)),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthKind {
    Online,
    Stochastic,
}

/// The 1010 / -10 synthetic problems.
pub fn synth_experiment(kind: SynthKind, seed: u64) -> Scenario {
    match kind {
        SynthKind::Online => Scenario::Online(OnlineScenario {
            name: "synth_online".into(),
            bx: BoxSet::unit_interval(),
            period: 101,
            spike: 1010.0,
            base: -10.0,
            recommended: Some(Schedule::new(0.5, 0.9, 0.99)),
        }),
        SynthKind::Stochastic => Scenario::Stochastic(
            StochasticScenario::new(
                "synth_stochastic",
                BoxSet::unit_interval(),
                vec![(1010.0, 0.01), (-10.0, 0.99)],
                seed,
            )
            .expect("valid distribution"),
        ),
    }
}
