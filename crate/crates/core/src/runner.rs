//! Drives an optimizer over a linear scenario and records what happened.

use serde::Serialize;

use crate::analysis::RegretLedger;
use crate::error::{Error, Result};
use crate::numcore::RealVec;
use crate::optim::{GammaMonitor, Optimizer, OptimizerKind, Schedule};
use crate::scenarios::Scenario;

#[derive(Debug, Clone, PartialEq)]
pub struct TraceOptions {
    /// Keep a row every `record_every` steps; the last step is always kept.
    pub record_every: u64,
    /// Project onto the scenario's box after each step.
    pub project: bool,
    pub keep_grads: bool,
    /// Keep the post-step second-moment vectors (`vhat_t` for AMSGrad,
    /// `v_t` otherwise).
    pub keep_moments: bool,
    /// Keep the quantity under the square root at each step.
    pub keep_denominators: bool,
}

impl Default for TraceOptions {
    fn default() -> Self {
        TraceOptions { record_every: 1, project: true, keep_grads: false, keep_moments: false, keep_denominators: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub t: u64,
    /// The point played at round `t`.
    pub x: Vec<f64>,
    pub loss: f64,
    pub cum_regret: f64,
    pub avg_regret: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearRun {
    pub kind: OptimizerKind,
    /// `x_{T+1}`.
    pub final_x: RealVec,
    pub regret: f64,
    pub avg_regret: f64,
    pub gamma_violations: u64,
    pub first_gamma_violations: Vec<(u64, usize)>,
    pub rows: Vec<TraceRow>,
    pub grads: Vec<RealVec>,
    pub moments: Vec<RealVec>,
    pub denominators: Vec<RealVec>,
}

/// Runs `steps` rounds of `kind` on `scenario` from `x0`.
pub fn simulate(
    scenario: &Scenario,
    kind: OptimizerKind,
    schedule: &Schedule,
    x0: &RealVec,
    steps: u64,
    opts: &TraceOptions,
) -> Result<LinearRun> {
    if steps == 0 {
        return Err(Error::usage("T", "must be >= 1"));
    }
    if opts.record_every == 0 {
        return Err(Error::usage("record_every", "must be >= 1"));
    }
    let bx = scenario.bx();
    if x0.len() != bx.dim() {
        return Err(Error::Dimension { expected: bx.dim(), got: x0.len() });
    }
    if opts.project && !bx.contains(x0) {
        return Err(Error::usage("x0", "starting point is outside the box"));
    }
    let proj = opts.project.then_some(bx);

    let mut opt = Optimizer::new(kind, *schedule, bx.dim())?;
    let mut ledger = RegretLedger::new(bx.clone());
    let mut monitor = GammaMonitor::new();
    let mut stream = scenario.stream();
    let mut x = x0.clone();
    let mut rows = Vec::new();
    let mut grads = Vec::new();
    let mut moments = Vec::new();
    let mut denominators = Vec::new();

    for t in 1..=steps {
        let g = stream.slope(t)?;
        let loss = ledger.record(&x, &g)?;
        if t % opts.record_every == 0 || t == steps || opts.record_every == 1 {
            rows.push(TraceRow {
                t,
                x: x.as_slice().to_vec(),
                loss,
                cum_regret: ledger.regret(),
                avg_regret: ledger.avg_regret(),
            });
        }
        let next = opt.step(&x, &g, proj)?;
        if let Some(den) = opt.state().last_denominator() {
            monitor.observe(schedule, den);
            if opts.keep_denominators {
                denominators.push(den.clone());
            }
        }
        if opts.keep_moments {
            let st = opt.state();
            moments.push(st.vhat.clone().unwrap_or_else(|| st.v.clone()));
        }
        if opts.keep_grads {
            grads.push(g);
        }
        x = next;
    }

    Ok(LinearRun {
        kind,
        final_x: x,
        regret: ledger.regret(),
        avg_regret: ledger.avg_regret(),
        gamma_violations: monitor.violations(),
        first_gamma_violations: monitor.first_violations().to_vec(),
        rows,
        grads,
        moments,
        denominators,
    })
}
