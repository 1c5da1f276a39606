//! The generic adaptive method and its instances.
//!
//! Every method runs the same loop: from the gradient history build a first
//! moment `m_t` and a diagonal second-moment estimate `V_t`, step
//! `x - alpha_t * m_t / sqrt(V_t)`, then project back onto the feasible box.
//! The instances differ only in how `m_t` and `V_t` are formed:
//!
//! | kind      | `m_t`                       | `V_t`                          |
//! |-----------|-----------------------------|--------------------------------|
//! | SGD       | `g_t`                       | `1`                            |
//! | Adagrad   | `g_t`                       | `sum g_j^2 / t`                |
//! | RMSprop   | `g_t`                       | EMA of `g^2` with `beta2`      |
//! | Adam      | EMA of `g` with `beta1_t`   | EMA of `g^2` with `beta2`      |
//! | AMSGrad   | as Adam                     | running max of Adam's `v_t`    |
//! | AdamNc    | as Adam                     | EMA of `g^2` with `beta2_t`    |
//!
//! Debiasing is off by default. `epsilon` is added under the square root.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{BoxSet, RealVec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OptimizerKind {
    Sgd,
    Adagrad,
    RmsProp,
    Adam,
    AmsGrad,
    AdamNc,
}

impl OptimizerKind {
    pub const ALL: [OptimizerKind; 6] = [
        OptimizerKind::Sgd,
        OptimizerKind::Adagrad,
        OptimizerKind::RmsProp,
        OptimizerKind::Adam,
        OptimizerKind::AmsGrad,
        OptimizerKind::AdamNc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adagrad => "adagrad",
            OptimizerKind::RmsProp => "rmsprop",
            OptimizerKind::Adam => "adam",
            OptimizerKind::AmsGrad => "amsgrad",
            OptimizerKind::AdamNc => "adamnc",
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        OptimizerKind::ALL
            .into_iter()
            .find(|k| k.name() == lower)
            .ok_or_else(|| Error::usage("optimizer", format!("unknown optimizer `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum AlphaMode {
    Constant,
    /// `alpha / sqrt(t)`
    InvSqrtT,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Beta1Mode {
    Constant,
    /// `beta1 * lambda^(t-1)`
    ExpDecay { lambda: f64 },
    /// `beta1 / t`
    Harmonic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Beta2Mode {
    Constant,
    /// `1 - 1/t`; only meaningful for AdamNc.
    OneMinusInvT,
}

/// Step size and averaging-parameter schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub alpha: f64,
    pub alpha_mode: AlphaMode,
    pub beta1: f64,
    pub beta1_mode: Beta1Mode,
    pub beta2: f64,
    pub beta2_mode: Beta2Mode,
    pub epsilon: f64,
    pub debias: bool,
}

/// Schedule values at one step index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepParams {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
}

impl Schedule {
    /// Constant betas, `alpha / sqrt(t)`, no epsilon, no debiasing.
    pub fn new(alpha: f64, beta1: f64, beta2: f64) -> Self {
        Schedule {
            alpha,
            alpha_mode: AlphaMode::InvSqrtT,
            beta1,
            beta1_mode: Beta1Mode::Constant,
            beta2,
            beta2_mode: Beta2Mode::Constant,
            epsilon: 0.0,
            debias: false,
        }
    }

    pub fn with_alpha_mode(mut self, mode: AlphaMode) -> Self {
        self.alpha_mode = mode;
        self
    }

    pub fn with_beta1_mode(mut self, mode: Beta1Mode) -> Self {
        self.beta1_mode = mode;
        self
    }

    pub fn with_beta2_mode(mut self, mode: Beta2Mode) -> Self {
        self.beta2_mode = mode;
        self
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn with_debias(mut self, debias: bool) -> Self {
        self.debias = debias;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Parameter(format!("alpha = {} must be > 0", self.alpha)));
        }
        if !(0.0..1.0).contains(&self.beta1) {
            return Err(Error::Parameter(format!("beta1 = {} must be in [0, 1)", self.beta1)));
        }
        if !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Parameter(format!("beta2 = {} must be in [0, 1)", self.beta2)));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Parameter(format!("epsilon = {} must be >= 0", self.epsilon)));
        }
        if let Beta1Mode::ExpDecay { lambda } = self.beta1_mode {
            if !(lambda > 0.0 && lambda < 1.0) {
                return Err(Error::Parameter(format!("lambda = {lambda} must be in (0, 1)")));
            }
        }
        Ok(())
    }

    /// `beta1 / sqrt(beta2)`, with `0 / 0` read as 0. `None` when `beta2 = 0 < beta1`.
    pub fn gamma(&self) -> Option<f64> {
        if self.beta1 == 0.0 {
            Some(0.0)
        } else if self.beta2 > 0.0 {
            Some(self.beta1 / self.beta2.sqrt())
        } else {
            None
        }
    }

    pub fn at(&self, t: u64) -> StepParams {
        debug_assert!(t >= 1);
        let tf = t as f64;
        let alpha = match self.alpha_mode {
            AlphaMode::Constant => self.alpha,
            AlphaMode::InvSqrtT => self.alpha / tf.sqrt(),
        };
        let beta1 = match self.beta1_mode {
            Beta1Mode::Constant => self.beta1,
            Beta1Mode::ExpDecay { lambda } => self.beta1 * lambda.powf(tf - 1.0),
            Beta1Mode::Harmonic => self.beta1 / tf,
        };
        let beta2 = match self.beta2_mode {
            Beta2Mode::Constant => self.beta2,
            Beta2Mode::OneMinusInvT => 1.0 - 1.0 / tf,
        };
        StepParams { alpha, beta1, beta2 }
    }
}

/// `(alpha_t, beta1_t, beta2_t)` for step `t >= 1`.
pub fn schedule_at(s: &Schedule, t: u64) -> Result<(f64, f64, f64)> {
    if t == 0 {
        return Err(Error::Contract("schedules are indexed from t = 1".into()));
    }
    let p = s.at(t);
    Ok((p.alpha, p.beta1, p.beta2))
}

/// Moment state of one run. `t` is the index of the next step (starts at 1).
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub m: RealVec,
    pub v: RealVec,
    /// Running maximum of `v`; AMSGrad only.
    pub vhat: Option<RealVec>,
    /// Sum of squared gradients; Adagrad only.
    pub g_sum_sq: RealVec,
    pub t: u64,
    beta1_prod: f64,
    beta2_prod: f64,
    /// Quantity under the square root at the last step (after epsilon and
    /// debiasing). This is what the Gamma monitor tracks.
    denominator: Option<RealVec>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, dim: usize) -> Self {
        OptimizerState {
            m: RealVec::zeros(dim),
            v: RealVec::zeros(dim),
            vhat: (kind == OptimizerKind::AmsGrad).then(|| RealVec::zeros(dim)),
            g_sum_sq: RealVec::zeros(dim),
            t: 1,
            beta1_prod: 1.0,
            beta2_prod: 1.0,
            denominator: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.m.len()
    }

    /// Steps taken so far.
    pub fn steps(&self) -> u64 {
        self.t - 1
    }

    pub fn last_denominator(&self) -> Option<&RealVec> {
        self.denominator.as_ref()
    }
}

/// How the second-moment estimate enters the denominator of an EMA step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HatRule {
    /// AMSGrad: `vhat_t = max(vhat_{t-1}, v_t)`.
    RunningMax,
    /// `vhat_t = v_t`, which is plain Adam.
    Identity,
}

fn check_step_inputs(state: &OptimizerState, x: &RealVec, g: &RealVec, bx: Option<&BoxSet>) -> Result<()> {
    let d = state.dim();
    for len in [x.len(), g.len()] {
        if len != d {
            return Err(Error::Dimension { expected: d, got: len });
        }
    }
    if let Some(bx) = bx {
        if bx.dim() != d {
            return Err(Error::Dimension { expected: d, got: bx.dim() });
        }
        if !bx.contains(x) {
            return Err(Error::Contract(format!("iterate {:?} is outside the box", x.as_slice())));
        }
    }
    if state.t == 0 {
        return Err(Error::Contract("state step counter must be >= 1".into()));
    }
    Ok(())
}

fn finish_step(
    state: &mut OptimizerState,
    x: &RealVec,
    m: &[f64],
    den: Vec<f64>,
    alpha: f64,
    bx: Option<&BoxSet>,
) -> Result<RealVec> {
    let mut next = Vec::with_capacity(den.len());
    for (index, (&di, &mi)) in den.iter().zip(m).enumerate() {
        if !(di >= 0.0) {
            return Err(Error::Domain(format!("negative denominator {di} at coordinate {index}")));
        }
        let root = di.sqrt();
        let dir = if root == 0.0 {
            if mi != 0.0 {
                return Err(Error::DivisionDomain { index, num: mi });
            }
            0.0
        } else {
            mi / root
        };
        let xi = x[index] - alpha * dir;
        next.push(match bx {
            Some(bx) => xi.clamp(bx.lo()[index], bx.hi()[index]),
            None => xi,
        });
    }
    let next = RealVec::new(next)?;
    state.denominator = Some(RealVec::new(den)?);
    state.t += 1;
    Ok(next)
}

/// EMA-family step shared by RMSprop, Adam, AMSGrad and AdamNc.
///
/// `beta1_override` pins `beta1_t` (RMSprop forces 0); `beta2_const`
/// ignores the schedule's `beta2_mode` in favour of the constant `beta2`.
#[allow(clippy::too_many_arguments)]
fn ema_update(
    state: &mut OptimizerState,
    x: &RealVec,
    g: &RealVec,
    s: &Schedule,
    bx: Option<&BoxSet>,
    hat: HatRule,
    beta1_override: Option<f64>,
    beta2_const: bool,
) -> Result<RealVec> {
    let p = s.at(state.t);
    let beta1 = beta1_override.unwrap_or(p.beta1);
    let beta2 = if beta2_const { s.beta2 } else { p.beta2 };

    state.beta1_prod *= beta1;
    state.beta2_prod *= beta2;
    let (m_corr, v_corr) = if s.debias {
        (1.0 - state.beta1_prod, 1.0 - state.beta2_prod)
    } else {
        (1.0, 1.0)
    };

    let d = g.len();
    let mut m = Vec::with_capacity(d);
    let mut v = Vec::with_capacity(d);
    let mut m_eff = Vec::with_capacity(d);
    let mut den = Vec::with_capacity(d);
    let mut vhat = state.vhat.take().map(RealVec::into_inner);
    for i in 0..d {
        let gi = g[i];
        let mi = beta1 * state.m[i] + (1.0 - beta1) * gi;
        let vi = beta2 * state.v[i] + (1.0 - beta2) * gi * gi;
        let used = match (hat, vhat.as_mut()) {
            (HatRule::RunningMax, Some(h)) => {
                h[i] = h[i].max(vi);
                h[i]
            }
            _ => vi,
        };
        m.push(mi);
        v.push(vi);
        m_eff.push(mi / m_corr);
        den.push(used / v_corr + s.epsilon);
    }
    if hat == HatRule::RunningMax && vhat.is_none() {
        vhat = Some(v.clone());
    }
    state.m = RealVec::new(m)?;
    state.v = RealVec::new(v)?;
    state.vhat = vhat.map(RealVec::new).transpose()?;
    finish_step(state, x, &m_eff, den, p.alpha, bx)
}

fn step_in_place(
    kind: OptimizerKind,
    state: &mut OptimizerState,
    x: &RealVec,
    g: &RealVec,
    s: &Schedule,
    bx: Option<&BoxSet>,
) -> Result<RealVec> {
    s.validate()?;
    step_validated(kind, state, x, g, s, bx)
}

fn step_validated(
    kind: OptimizerKind,
    state: &mut OptimizerState,
    x: &RealVec,
    g: &RealVec,
    s: &Schedule,
    bx: Option<&BoxSet>,
) -> Result<RealVec> {
    check_step_inputs(state, x, g, bx)?;
    if kind != OptimizerKind::AdamNc && s.beta2_mode != Beta2Mode::Constant {
        return Err(Error::Contract(format!(
            "{kind} uses a constant beta2; time-varying beta2 is AdamNc"
        )));
    }
    match kind {
        OptimizerKind::Sgd => {
            let p = s.at(state.t);
            let den = vec![1.0; g.len()];
            finish_step(state, x, g.as_slice(), den, p.alpha, bx)
        }
        OptimizerKind::Adagrad => {
            let p = s.at(state.t);
            state.g_sum_sq = state.g_sum_sq.add(&g.square()?)?;
            let tf = state.t as f64;
            let den: Vec<f64> = state.g_sum_sq.iter().map(|sq| sq / tf + s.epsilon).collect();
            finish_step(state, x, g.as_slice(), den, p.alpha, bx)
        }
        OptimizerKind::RmsProp => ema_update(state, x, g, s, bx, HatRule::Identity, Some(0.0), true),
        OptimizerKind::Adam => ema_update(state, x, g, s, bx, HatRule::Identity, None, true),
        OptimizerKind::AmsGrad => ema_update(state, x, g, s, bx, HatRule::RunningMax, None, true),
        OptimizerKind::AdamNc => ema_update(state, x, g, s, bx, HatRule::Identity, None, false),
    }
}

/// One step of the generic adaptive method for `kind`.
///
/// `bx = None` means the unconstrained feasible set (projection is the
/// identity). Returns the new state and `x_{t+1}`.
pub fn adaptive_step(
    kind: OptimizerKind,
    state: &OptimizerState,
    x: &RealVec,
    g: &RealVec,
    s: &Schedule,
    bx: Option<&BoxSet>,
) -> Result<(OptimizerState, RealVec)> {
    let mut next = state.clone();
    let x_next = step_in_place(kind, &mut next, x, g, s, bx)?;
    Ok((next, x_next))
}

pub fn amsgrad_step(
    state: &OptimizerState,
    x: &RealVec,
    g: &RealVec,
    s: &Schedule,
    bx: Option<&BoxSet>,
) -> Result<(OptimizerState, RealVec)> {
    adaptive_step(OptimizerKind::AmsGrad, state, x, g, s, bx)
}

pub fn adamnc_step(
    state: &OptimizerState,
    x: &RealVec,
    g: &RealVec,
    s: &Schedule,
    bx: Option<&BoxSet>,
) -> Result<(OptimizerState, RealVec)> {
    adaptive_step(OptimizerKind::AdamNc, state, x, g, s, bx)
}

/// Adam-style step with an explicit rule for the denominator. With
/// [`HatRule::RunningMax`] this is AMSGrad, with [`HatRule::Identity`] Adam.
pub fn ema_step(
    state: &OptimizerState,
    x: &RealVec,
    g: &RealVec,
    s: &Schedule,
    bx: Option<&BoxSet>,
    hat: HatRule,
) -> Result<(OptimizerState, RealVec)> {
    s.validate()?;
    check_step_inputs(state, x, g, bx)?;
    let mut next = state.clone();
    let x_next = ema_update(&mut next, x, g, s, bx, hat, None, true)?;
    Ok((next, x_next))
}

/// A run-owned optimizer: kind, schedule and state together.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    schedule: Schedule,
    state: OptimizerState,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, schedule: Schedule, dim: usize) -> Result<Self> {
        schedule.validate()?;
        if dim == 0 {
            return Err(Error::Dimension { expected: 1, got: 0 });
        }
        Ok(Optimizer {
            kind,
            schedule,
            state: OptimizerState::new(kind, dim),
        })
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn schedule(&self) -> &Schedule {
        &self.schedule
    }

    pub fn state(&self) -> &OptimizerState {
        &self.state
    }

    /// Takes step `t = state().t` from `x` with gradient `g`.
    pub fn step(&mut self, x: &RealVec, g: &RealVec, bx: Option<&BoxSet>) -> Result<RealVec> {
        step_validated(self.kind, &mut self.state, x, g, &self.schedule, bx)
    }
}

/// `Gamma_{t+1} = sqrt(v_{t+1}) / alpha_{t+1} - sqrt(v_t) / alpha_t`.
///
/// `v_trace[k]` is the denominator used at step `k + 1`. Entry `j` of the
/// result is `Gamma_{j+2}`.
pub fn gamma_trace(schedule: &Schedule, v_trace: &[RealVec]) -> Result<Vec<RealVec>> {
    let scaled: Vec<RealVec> = v_trace
        .iter()
        .enumerate()
        .map(|(k, v)| {
            let alpha = schedule.at(k as u64 + 1).alpha;
            v.sqrt()?.scale(1.0 / alpha)
        })
        .collect::<Result<_>>()?;
    scaled
        .windows(2)
        .map(|w| {
            let (prev, next) = (&w[0], &w[1]);
            if prev.len() != next.len() {
                return Err(Error::Dimension { expected: prev.len(), got: next.len() });
            }
            RealVec::new(next.iter().zip(prev.iter()).map(|(a, b)| a - b).collect())
        })
        .collect()
}

/// All `(t, i)` with `Gamma_t[i] < 0`, for a trace from [`gamma_trace`].
pub fn psd_violations(gammas: &[RealVec]) -> Vec<(u64, usize)> {
    gammas
        .iter()
        .enumerate()
        .flat_map(|(j, g)| {
            g.iter()
                .enumerate()
                .filter(|(_, &x)| x < 0.0)
                .map(move |(i, _)| (j as u64 + 2, i))
        })
        .collect()
}

/// Streaming Gamma check for long runs where storing the trace is wasteful.
#[derive(Debug, Clone, Default)]
pub struct GammaMonitor {
    prev: Option<Vec<f64>>,
    t: u64,
    count: u64,
    first: Vec<(u64, usize)>,
}

impl GammaMonitor {
    const KEEP: usize = 16;

    pub fn new() -> Self {
        Self::default()
    }

    /// Feeds the denominator used at the next step, in step order.
    pub fn observe(&mut self, schedule: &Schedule, denominator: &RealVec) {
        self.t += 1;
        let alpha = schedule.at(self.t).alpha;
        let prev = self.prev.get_or_insert_with(Vec::new);
        let first_call = prev.is_empty();
        prev.resize(denominator.len(), 0.0);
        for (i, (v, b)) in denominator.iter().zip(prev.iter_mut()).enumerate() {
            let a = v.sqrt() / alpha;
            if !first_call && a - *b < 0.0 {
                self.count += 1;
                if self.first.len() < Self::KEEP {
                    self.first.push((self.t, i));
                }
            }
            *b = a;
        }
    }

    pub fn violations(&self) -> u64 {
        self.count
    }

    /// The first few violation sites.
    pub fn first_violations(&self) -> &[(u64, usize)] {
        &self.first
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rv(v: &[f64]) -> RealVec {
        RealVec::new(v.to_vec()).unwrap()
    }

    #[test]
    fn schedule_examples() {
        let s = Schedule::new(0.5, 0.9, 0.99);
        assert_eq!(schedule_at(&s, 4).unwrap().0, 0.25);
        let s = Schedule::new(1.0, 0.9, 0.99).with_beta1_mode(Beta1Mode::ExpDecay { lambda: 0.5 });
        assert_eq!(schedule_at(&s, 3).unwrap().1, 0.225);
        let s = Schedule::new(1.0, 0.9, 0.99).with_beta2_mode(Beta2Mode::OneMinusInvT);
        assert_eq!(schedule_at(&s, 1).unwrap().2, 0.0);
        let s = Schedule::new(1.0, 0.9, 0.99).with_beta1_mode(Beta1Mode::Harmonic);
        assert_eq!(schedule_at(&s, 3).unwrap().1, 0.3);
        assert!(schedule_at(&s, 0).is_err());
    }

    #[test]
    fn schedule_validation() {
        assert!(Schedule::new(0.0, 0.9, 0.99).validate().is_err());
        assert!(Schedule::new(1.0, 1.0, 0.99).validate().is_err());
        assert!(Schedule::new(1.0, 0.9, 1.0).validate().is_err());
        assert!(Schedule::new(1.0, 0.9, 0.99).with_epsilon(-1.0).validate().is_err());
        assert!(Schedule::new(1.0, 0.9, 0.99)
            .with_beta1_mode(Beta1Mode::ExpDecay { lambda: 1.0 })
            .validate()
            .is_err());
        assert!(Schedule::new(1.0, 0.0, 0.0).validate().is_ok());
        assert_eq!(Schedule::new(1.0, 0.0, 0.0).gamma(), Some(0.0));
        assert_eq!(Schedule::new(1.0, 0.5, 0.0).gamma(), None);
        assert_eq!(Schedule::new(1.0, 0.5, 0.25).gamma(), Some(1.0));
    }

    // Frozen from an independent scalar evaluation:
    // v1 = (16/17) * 16 = 15.0588235294..., step = sqrt(17)/8 = 0.5153882032...
    #[test]
    fn first_adam_step_on_three_periodic_sequence() {
        let s = Schedule::new(0.5, 0.0, 1.0 / 17.0);
        let st = OptimizerState::new(OptimizerKind::Adam, 1);
        let bx = BoxSet::unit_interval();
        let (st, x2) = adaptive_step(OptimizerKind::Adam, &st, &rv(&[1.0]), &rv(&[4.0]), &s, Some(&bx)).unwrap();
        assert!((st.v[0] - 256.0 / 17.0).abs() < 1e-12);
        assert!((x2[0] - 0.484_611_796_797_792_4).abs() < 1e-12);
        assert!((1.0 - x2[0] - 17f64.sqrt() / 8.0).abs() < 1e-12);
        assert_eq!(st.t, 2);
    }

    // Frozen from an independent scalar evaluation: steps 1.4142135623730951
    // and 0.816496580927726.
    #[test]
    fn amsgrad_scalar_two_steps() {
        let s = Schedule::new(1.0, 0.0, 0.5);
        let st = OptimizerState::new(OptimizerKind::AmsGrad, 1);
        let (st, x2) = amsgrad_step(&st, &rv(&[1.0]), &rv(&[1.0]), &s, None).unwrap();
        assert_eq!(st.vhat.as_ref().unwrap()[0], 0.5);
        assert!((x2[0] - (1.0 - std::f64::consts::SQRT_2)).abs() < 1e-12);
        let (st, x3) = amsgrad_step(&st, &x2, &rv(&[1.0]), &s, None).unwrap();
        assert_eq!(st.v[0], 0.75);
        assert_eq!(st.vhat.as_ref().unwrap()[0], 0.75);
        assert!((x2[0] - x3[0] - 0.816_496_580_927_726).abs() < 1e-12);
    }

    #[test]
    fn amsgrad_vhat_is_elementwise_max() {
        let s = Schedule::new(1.0, 0.0, 0.0);
        let mut st = OptimizerState::new(OptimizerKind::AmsGrad, 2);
        st.vhat = Some(rv(&[2.0, 5.0]));
        // beta2 = 0 makes v_t = g^2.
        let g = rv(&[3f64.sqrt(), 1.0]);
        let (st, _) = amsgrad_step(&st, &rv(&[0.0, 0.0]), &g, &s, None).unwrap();
        let vhat = st.vhat.unwrap();
        assert!((vhat[0] - 3.0).abs() < 1e-15);
        assert_eq!(vhat[1], 5.0);
    }

    #[test]
    fn amsgrad_denominator_unchanged_when_v_below_max() {
        let s = Schedule::new(1.0, 0.0, 0.9).with_alpha_mode(AlphaMode::Constant);
        let mut opt = Optimizer::new(OptimizerKind::AmsGrad, s, 1).unwrap();
        let mut x = rv(&[0.0]);
        x = opt.step(&x, &rv(&[10.0]), None).unwrap();
        let den1 = opt.state().last_denominator().unwrap().clone();
        opt.step(&x, &rv(&[0.1]), None).unwrap();
        assert_eq!(opt.state().last_denominator().unwrap(), &den1);
    }

    #[test]
    fn adamnc_prefix_mean_examples() {
        let s = Schedule::new(1.0, 0.0, 0.0).with_beta2_mode(Beta2Mode::OneMinusInvT);
        let st = OptimizerState::new(OptimizerKind::AdamNc, 1);
        let (st, x) = adamnc_step(&st, &rv(&[0.0]), &rv(&[2.0]), &s, None).unwrap();
        assert_eq!(st.v[0], 4.0);
        let (st, _) = adamnc_step(&st, &x, &rv(&[4.0]), &s, None).unwrap();
        assert_eq!(st.v[0], 10.0);

        let mut st = OptimizerState::new(OptimizerKind::AdamNc, 1);
        let mut x = rv(&[0.0]);
        for _ in 0..50 {
            let (s2, x2) = adamnc_step(&st, &x, &rv(&[0.3]), &s, None).unwrap();
            st = s2;
            x = x2;
            assert!((st.v[0] - 0.09).abs() <= 1e-12 * 0.09);
        }
    }

    #[test]
    fn zero_gradients_leave_iterate_unchanged() {
        let bx = BoxSet::symmetric(2, 1.0).unwrap();
        let s = Schedule::new(0.1, 0.9, 0.99).with_beta1_mode(Beta1Mode::Constant);
        for kind in OptimizerKind::ALL {
            let s = if kind == OptimizerKind::AdamNc {
                s.with_beta2_mode(Beta2Mode::OneMinusInvT)
            } else {
                s
            };
            let mut opt = Optimizer::new(kind, s, 2).unwrap();
            let mut x = rv(&[0.3, -0.7]);
            for _ in 0..5 {
                x = opt.step(&x, &rv(&[0.0, 0.0]), Some(&bx)).unwrap();
            }
            assert_eq!(x, rv(&[0.3, -0.7]), "{kind}");
        }
    }

    #[test]
    fn step_errors() {
        let s = Schedule::new(0.1, 0.9, 0.99);
        let st = OptimizerState::new(OptimizerKind::Adam, 2);
        let bx = BoxSet::symmetric(2, 1.0).unwrap();
        assert!(matches!(
            adaptive_step(OptimizerKind::Adam, &st, &rv(&[0.0]), &rv(&[1.0, 1.0]), &s, None),
            Err(Error::Dimension { .. })
        ));
        assert!(matches!(
            adaptive_step(OptimizerKind::Adam, &st, &rv(&[2.0, 0.0]), &rv(&[1.0, 1.0]), &s, Some(&bx)),
            Err(Error::Contract(_))
        ));
        let nc = s.with_beta2_mode(Beta2Mode::OneMinusInvT);
        assert!(adaptive_step(OptimizerKind::Adam, &st, &rv(&[0.0, 0.0]), &rv(&[1.0, 1.0]), &nc, None).is_err());
        let huge = rv(&[1e300, 0.0]);
        assert!(adaptive_step(OptimizerKind::Adam, &st, &rv(&[0.0, 0.0]), &huge, &s, None).is_err());
    }

    #[test]
    fn debias_first_step_is_sign_like() {
        // With debiasing, step 1 is alpha * g / |g|.
        let s = Schedule::new(0.1, 0.9, 0.999).with_alpha_mode(AlphaMode::Constant).with_debias(true);
        let mut opt = Optimizer::new(OptimizerKind::Adam, s, 1).unwrap();
        let x = opt.step(&rv(&[0.0]), &rv(&[-3.0]), None).unwrap();
        assert!((x[0] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn gamma_examples() {
        let s = Schedule::new(1.0, 0.0, 0.5);
        let g = gamma_trace(&s, &[rv(&[1.0]), rv(&[0.25])]).unwrap();
        assert!((g[0][0] - (0.5 * 2f64.sqrt() - 1.0)).abs() < 1e-15);
        assert!((g[0][0] + 0.292_893_218_813_452_4).abs() < 1e-12);
        assert_eq!(psd_violations(&g), vec![(2, 0)]);

        let g = gamma_trace(&s, &[rv(&[1.0]), rv(&[1.0])]).unwrap();
        assert!((g[0][0] - (2f64.sqrt() - 1.0)).abs() < 1e-15);
        assert!(psd_violations(&g).is_empty());
    }

    #[test]
    fn gamma_monitor_matches_trace() {
        let s = Schedule::new(1.0, 0.0, 0.5);
        let trace = [rv(&[1.0, 1.0]), rv(&[0.25, 4.0]), rv(&[0.25, 0.0])];
        let mut mon = GammaMonitor::new();
        for v in &trace {
            mon.observe(&s, v);
        }
        let g = gamma_trace(&s, &trace).unwrap();
        let sites = psd_violations(&g);
        assert_eq!(mon.violations() as usize, sites.len());
        assert_eq!(mon.first_violations(), sites.as_slice());
    }

    #[test]
    fn kind_parsing() {
        for k in OptimizerKind::ALL {
            assert_eq!(k.name().parse::<OptimizerKind>().unwrap(), k);
        }
        assert_eq!("AMSGrad".parse::<OptimizerKind>().unwrap(), OptimizerKind::AmsGrad);
        assert!("nadam".parse::<OptimizerKind>().is_err());
    }
}
