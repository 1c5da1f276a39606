//! Regret accounting and the regret-bound evaluators for AMSGrad and AdamNc.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::numcore::{BoxSet, RealVec};
use crate::optim::{AlphaMode, Beta1Mode, Beta2Mode, Schedule};
use crate::scenarios::Scenario;

/// Running regret of a linear loss sequence against the best fixed point of
/// a box.
///
/// For `f_t(x) = <c_t, x>` the comparator separates per coordinate:
/// `x*_i = lo_i` when `sum_t c_{t,i} >= 0`, else `hi_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegretLedger {
    bx: BoxSet,
    losses: Vec<f64>,
    loss_sum: f64,
    slope_sums: Vec<f64>,
}

impl RegretLedger {
    pub fn new(bx: BoxSet) -> Self {
        let d = bx.dim();
        RegretLedger {
            bx,
            losses: Vec::new(),
            loss_sum: 0.0,
            slope_sums: vec![0.0; d],
        }
    }

    /// Records round `t = rounds() + 1` and returns `f_t(x_t)`.
    pub fn record(&mut self, x: &RealVec, slope: &RealVec) -> Result<f64> {
        if slope.len() != self.bx.dim() {
            return Err(Error::Dimension { expected: self.bx.dim(), got: slope.len() });
        }
        let loss = slope.dot(x)?;
        for (s, c) in self.slope_sums.iter_mut().zip(slope.iter()) {
            *s += c;
        }
        self.loss_sum += loss;
        self.losses.push(loss);
        Ok(loss)
    }

    pub fn rounds(&self) -> u64 {
        self.losses.len() as u64
    }

    pub fn losses(&self) -> &[f64] {
        &self.losses
    }

    pub fn slope_sums(&self) -> &[f64] {
        &self.slope_sums
    }

    pub fn comparator(&self) -> RealVec {
        let x: Vec<f64> = self
            .slope_sums
            .iter()
            .enumerate()
            .map(|(i, &s)| if s >= 0.0 { self.bx.lo()[i] } else { self.bx.hi()[i] })
            .collect();
        RealVec::new(x).expect("box corners are finite")
    }

    pub fn comparator_loss(&self) -> f64 {
        self.comparator()
            .iter()
            .zip(&self.slope_sums)
            .map(|(x, s)| x * s)
            .sum()
    }

    /// `R_T`.
    pub fn regret(&self) -> f64 {
        self.loss_sum - self.comparator_loss()
    }

    /// `R_T / T`; zero before the first round.
    pub fn avg_regret(&self) -> f64 {
        if self.losses.is_empty() {
            0.0
        } else {
            self.regret() / self.rounds() as f64
        }
    }
}

/// Regret of `x_trace[t - 1] = x_t` on a linear scenario, with `R_T / T`.
pub fn regret(scenario: &Scenario, x_trace: &[RealVec]) -> Result<(f64, f64)> {
    if x_trace.is_empty() {
        return Err(Error::Contract("regret needs at least one round".into()));
    }
    let mut ledger = RegretLedger::new(scenario.bx().clone());
    let mut stream = scenario.stream();
    for (k, x) in x_trace.iter().enumerate() {
        let c = stream.slope(k as u64 + 1)?;
        ledger.record(x, &c)?;
    }
    Ok((ledger.regret(), ledger.avg_regret()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Hypothesis {
    pub name: String,
    pub satisfied: bool,
    /// Margin by which the hypothesis holds; negative when it fails. `None`
    /// for purely structural checks.
    pub slack: Option<f64>,
}

impl Hypothesis {
    fn structural(name: &str, satisfied: bool) -> Self {
        Hypothesis { name: name.into(), satisfied, slack: None }
    }

    fn margin(name: &str, slack: f64, strict: bool) -> Self {
        let satisfied = if strict { slack > 0.0 } else { slack >= 0.0 };
        Hypothesis { name: name.into(), satisfied, slack: Some(slack) }
    }
}

/// Values that went into a bound.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundInputs {
    pub d_inf: f64,
    pub g_inf: f64,
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub lambda: Option<f64>,
    pub gamma: Option<f64>,
    pub rounds: u64,
    /// Final second-moment vector (`vhat_T` or `v_T`).
    pub v_final: Vec<f64>,
    /// `||g_{1:T,i}||_2` per coordinate.
    pub grad_norms: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    /// The three-term bound; `+inf` unless every hypothesis holds.
    pub bound_value: f64,
    pub terms: [f64; 3],
    /// Same bound with the data-dependent gradient term replaced by its
    /// `O(G_inf sqrt(T))` form. AMSGrad only.
    pub g_inf_bound: Option<f64>,
    /// Empirical `zeta` for AdamNc's first condition.
    pub empirical_zeta: Option<f64>,
    pub hypothesis_flags: Vec<Hypothesis>,
    /// `(t, i)` sites where a monotonicity condition fails.
    pub violations: Vec<(u64, usize)>,
    pub inputs_digest: BoundInputs,
}

impl BoundReport {
    pub fn hypotheses_hold(&self) -> bool {
        self.hypothesis_flags.iter().all(|h| h.satisfied)
    }

    /// Tightest finite bound reported.
    pub fn best(&self) -> f64 {
        self.g_inf_bound.map_or(self.bound_value, |g| g.min(self.bound_value))
    }
}

/// Which form of the middle (momentum) term to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MomentumTerm {
    /// `D^2 / (1 - beta1)^2 * sum_t sum_i beta1_t sqrt(vhat_{t,i}) / alpha_t`.
    Exact,
    /// Closed form for `beta1_t = beta1 * lambda^(t-1)`:
    /// `beta1 D^2 G / ((1 - beta1)^2 (1 - lambda)^2)`.
    GeometricDecay,
}

fn grad_norms(grads: &[RealVec], d: usize) -> Vec<f64> {
    (0..d)
        .map(|i| grads.iter().map(|g| g[i] * g[i]).sum::<f64>().sqrt())
        .collect()
}

fn check_traces(grads: &[RealVec], v_trace: &[RealVec]) -> Result<usize> {
    if grads.is_empty() {
        return Err(Error::Contract("bound needs at least one round".into()));
    }
    if grads.len() != v_trace.len() {
        return Err(Error::Contract(format!(
            "gradient history has {} rounds but the moment trace has {}",
            grads.len(),
            v_trace.len()
        )));
    }
    let d = grads[0].len();
    if let Some(bad) = grads.iter().chain(v_trace).find(|v| v.len() != d) {
        return Err(Error::Dimension { expected: d, got: bad.len() });
    }
    Ok(d)
}

fn shared_hypotheses(s: &Schedule, g_inf: f64, grads: &[RealVec]) -> Vec<Hypothesis> {
    let t_max = grads.len() as u64;
    let max_beta1 = (1..=t_max).map(|t| s.at(t).beta1).fold(0.0, f64::max);
    let max_grad = grads
        .iter()
        .flat_map(|g| g.iter().map(|x| x.abs()))
        .fold(0.0, f64::max);
    vec![
        Hypothesis::structural("alpha_t = alpha/sqrt(t)", s.alpha_mode == AlphaMode::InvSqrtT),
        Hypothesis::margin("beta1_t <= beta1", s.beta1 - max_beta1, false),
        Hypothesis::margin("|g_t|_inf <= G_inf", g_inf - max_grad, false),
    ]
}

fn momentum_sum(s: &Schedule, v_trace: &[RealVec]) -> f64 {
    v_trace
        .iter()
        .enumerate()
        .map(|(k, v)| {
            let p = s.at(k as u64 + 1);
            p.beta1 * v.iter().map(|x| x.sqrt()).sum::<f64>() / p.alpha
        })
        .sum()
}

fn lambda_of(s: &Schedule) -> Option<f64> {
    match s.beta1_mode {
        Beta1Mode::ExpDecay { lambda } => Some(lambda),
        _ => None,
    }
}

/// Regret bound for AMSGrad run with schedule `s`.
///
/// `vhat_trace[t - 1]` is `vhat_t`; the final entry is `vhat_T`.
pub fn amsgrad_bound(
    d_inf: f64,
    g_inf: f64,
    s: &Schedule,
    grads: &[RealVec],
    vhat_trace: &[RealVec],
    momentum: MomentumTerm,
) -> Result<BoundReport> {
    let d = check_traces(grads, vhat_trace)?;
    let t_max = grads.len() as u64;
    let tf = t_max as f64;
    let gamma = s.gamma();
    let lambda = lambda_of(s);

    let mut flags = shared_hypotheses(s, g_inf, grads);
    flags.push(Hypothesis::structural("beta2 constant", s.beta2_mode == Beta2Mode::Constant));
    flags.push(match gamma {
        Some(g) => Hypothesis::margin("gamma = beta1/sqrt(beta2) < 1", 1.0 - g, true),
        None => Hypothesis::structural("gamma = beta1/sqrt(beta2) < 1", false),
    });
    if momentum == MomentumTerm::GeometricDecay {
        flags.push(Hypothesis::structural("beta1_t = beta1 lambda^(t-1)", lambda.is_some()));
    }

    let norms = grad_norms(grads, d);
    let vhat_t = vhat_trace.last().expect("non-empty");
    let b1 = s.beta1;
    let gm = gamma.unwrap_or(f64::INFINITY);

    let term1 = d_inf * d_inf * tf.sqrt() / (s.alpha * (1.0 - b1)) * vhat_t.iter().map(|x| x.sqrt()).sum::<f64>();
    let term2 = match momentum {
        MomentumTerm::Exact => d_inf * d_inf / (1.0 - b1).powi(2) * momentum_sum(s, vhat_trace),
        MomentumTerm::GeometricDecay => {
            let l = lambda.unwrap_or(f64::NAN);
            b1 * d_inf * d_inf * g_inf / ((1.0 - b1).powi(2) * (1.0 - l).powi(2))
        }
    };
    let coef = s.alpha / ((1.0 - b1).powi(2) * (1.0 - gm) * (1.0 - s.beta2).sqrt());
    let term3 = coef * (1.0 + tf.ln()).sqrt() * norms.iter().sum::<f64>();
    let alt3 = coef * 2.0 * g_inf * tf.sqrt() * d as f64;

    let ok = flags.iter().all(|h| h.satisfied);
    let (bound_value, g_inf_bound) = if ok {
        (term1 + term2 + term3, term1 + term2 + alt3)
    } else {
        (f64::INFINITY, f64::INFINITY)
    };
    Ok(BoundReport {
        bound_value,
        terms: [term1, term2, term3],
        g_inf_bound: Some(g_inf_bound),
        empirical_zeta: None,
        hypothesis_flags: flags,
        violations: Vec::new(),
        inputs_digest: BoundInputs {
            d_inf,
            g_inf,
            alpha: s.alpha,
            beta1: s.beta1,
            beta2: s.beta2,
            lambda,
            gamma,
            rounds: t_max,
            v_final: vhat_t.as_slice().to_vec(),
            grad_norms: norms,
        },
    })
}

/// Regret bound for AdamNc.
///
/// Checks the two schedule conditions on the observed trace. The first is
/// met by the smallest `zeta` with
/// `alpha_t sqrt(sum_{j<=t} g_{j,i}^2) <= zeta sqrt(v_{t,i})` for every
/// `t, i`, computed here as an empirical value. The second requires
/// `sqrt(v_{t,i}) / alpha_t` to be nondecreasing; every failing site is
/// listed and the bound becomes `+inf`.
pub fn adamnc_bound(
    d_inf: f64,
    g_inf: f64,
    s: &Schedule,
    grads: &[RealVec],
    v_trace: &[RealVec],
) -> Result<BoundReport> {
    let d = check_traces(grads, v_trace)?;
    let t_max = grads.len() as u64;
    let tf = t_max as f64;
    let mut flags = shared_hypotheses(s, g_inf, grads);

    let mut zeta: f64 = 0.0;
    let mut prefix = vec![0.0; d];
    let mut prev_scaled: Option<Vec<f64>> = None;
    let mut violations = Vec::new();
    for (k, (g, v)) in grads.iter().zip(v_trace).enumerate() {
        let t = k as u64 + 1;
        let alpha_t = s.at(t).alpha;
        let scaled: Vec<f64> = v.iter().map(|x| x.sqrt() / alpha_t).collect();
        for i in 0..d {
            prefix[i] += g[i] * g[i];
            if prefix[i] > 0.0 {
                let z = if v[i] > 0.0 {
                    alpha_t * prefix[i].sqrt() / v[i].sqrt()
                } else {
                    f64::INFINITY
                };
                zeta = zeta.max(z);
            }
            if let Some(prev) = &prev_scaled {
                if scaled[i] < prev[i] {
                    violations.push((t, i));
                }
            }
        }
        prev_scaled = Some(scaled);
    }
    flags.push(Hypothesis::structural("finite zeta (condition 1)", zeta.is_finite()));
    flags.push(Hypothesis::structural(
        "sqrt(v_t)/alpha_t nondecreasing (condition 2)",
        violations.is_empty(),
    ));

    let norms = grad_norms(grads, d);
    let v_t = v_trace.last().expect("non-empty");
    let b1 = s.beta1;
    let term1 = d_inf * d_inf / (2.0 * s.alpha * (1.0 - b1)) * tf.sqrt() * v_t.iter().map(|x| x.sqrt()).sum::<f64>();
    let term2 = d_inf * d_inf / (1.0 - b1).powi(2) * momentum_sum(s, v_trace);
    let term3 = 2.0 * zeta / (1.0 - b1).powi(3) * norms.iter().sum::<f64>();

    let ok = flags.iter().all(|h| h.satisfied);
    Ok(BoundReport {
        bound_value: if ok { term1 + term2 + term3 } else { f64::INFINITY },
        terms: [term1, term2, term3],
        g_inf_bound: None,
        empirical_zeta: Some(zeta),
        hypothesis_flags: flags,
        violations,
        inputs_digest: BoundInputs {
            d_inf,
            g_inf,
            alpha: s.alpha,
            beta1: s.beta1,
            beta2: s.beta2,
            lambda: lambda_of(s),
            gamma: s.gamma(),
            rounds: t_max,
            v_final: v_t.as_slice().to_vec(),
            grad_norms: norms,
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AuerCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub ok: bool,
}

/// `sum_i y_i / sqrt(sum_{j<=i} y_j) <= 2 sqrt(sum_i y_i)`, with terms whose
/// prefix sum is zero read as 0.
pub fn auer_check(y: &[f64]) -> Result<AuerCheck> {
    if let Some(i) = y.iter().position(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(Error::Domain(format!("y[{i}] = {} must be finite and >= 0", y[i])));
    }
    let mut prefix = 0.0;
    let mut lhs = 0.0;
    for &v in y {
        prefix += v;
        if prefix > 0.0 {
            lhs += v / prefix.sqrt();
        }
    }
    let rhs = 2.0 * prefix.sqrt();
    Ok(AuerCheck { lhs, rhs, ok: lhs <= rhs + 1e-12 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenarios::{thm1_sequence, TableScenario};

    fn rv(v: &[f64]) -> RealVec {
        RealVec::new(v.to_vec()).unwrap()
    }

    #[test]
    fn stuck_trajectory_pays_two_c_minus_four_per_period() {
        let sc = Scenario::Online(thm1_sequence(4.0).unwrap());
        let trace = vec![rv(&[1.0]); 3];
        let (r, avg) = regret(&sc, &trace).unwrap();
        assert_eq!(r, 4.0);
        assert_eq!(avg, 4.0 / 3.0);
    }

    #[test]
    fn zero_slopes_have_zero_regret() {
        let bx = BoxSet::symmetric(2, 1.0).unwrap();
        let sc = Scenario::Table(TableScenario::new(bx, vec![rv(&[0.0, 0.0]); 5]).unwrap());
        let trace = vec![rv(&[0.3, -0.2]); 5];
        assert_eq!(regret(&sc, &trace).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn comparator_tie_goes_to_lo() {
        let mut l = RegretLedger::new(BoxSet::unit_interval());
        l.record(&rv(&[0.5]), &rv(&[1.0])).unwrap();
        l.record(&rv(&[0.5]), &rv(&[-1.0])).unwrap();
        assert_eq!(l.comparator(), rv(&[-1.0]));
        assert_eq!(l.regret(), 0.0);
    }

    // Hand evaluation: term1 = 4 sqrt(0.5) = 2.8284271, term3 = 1 / sqrt(0.5)
    // = 1.4142136, bound = 4.2426407.
    #[test]
    fn amsgrad_bound_single_round() {
        let s = Schedule::new(1.0, 0.0, 0.5);
        let rep = amsgrad_bound(2.0, 1.0, &s, &[rv(&[1.0])], &[rv(&[0.5])], MomentumTerm::Exact).unwrap();
        assert!(rep.hypotheses_hold());
        assert!((rep.terms[0] - 2.828_427_124_746_190_3).abs() < 1e-12);
        assert_eq!(rep.terms[1], 0.0);
        assert!((rep.terms[2] - std::f64::consts::SQRT_2).abs() < 1e-12);
        assert!((rep.bound_value - 4.242_640_687_119_286).abs() < 1e-12);
    }

    #[test]
    fn amsgrad_bound_rejects_gamma_at_least_one() {
        let s = Schedule::new(1.0, 0.9, 0.5);
        let rep = amsgrad_bound(2.0, 1.0, &s, &[rv(&[1.0])], &[rv(&[0.5])], MomentumTerm::Exact).unwrap();
        assert_eq!(rep.bound_value, f64::INFINITY);
        let flag = rep.hypothesis_flags.iter().find(|h| h.name.starts_with("gamma")).unwrap();
        assert!(!flag.satisfied);
        assert!(flag.slack.unwrap() < 0.0);
    }

    #[test]
    fn amsgrad_bound_geometric_decay_needs_exp_schedule() {
        let s = Schedule::new(1.0, 0.5, 0.5);
        let g = [rv(&[1.0])];
        let v = [rv(&[0.5])];
        let rep = amsgrad_bound(2.0, 1.0, &s, &g, &v, MomentumTerm::GeometricDecay).unwrap();
        assert!(!rep.hypotheses_hold());
        let s = s.with_beta1_mode(Beta1Mode::ExpDecay { lambda: 0.5 });
        let rep = amsgrad_bound(2.0, 1.0, &s, &g, &v, MomentumTerm::GeometricDecay).unwrap();
        assert!(rep.hypotheses_hold());
        assert!((rep.terms[1] - 0.5 * 4.0 / (0.25 * 0.25)).abs() < 1e-12);
    }

    #[test]
    fn bound_trace_mismatch_is_a_contract_error() {
        let s = Schedule::new(1.0, 0.0, 0.5);
        assert!(amsgrad_bound(2.0, 1.0, &s, &[rv(&[1.0])], &[], MomentumTerm::Exact).is_err());
        assert!(adamnc_bound(2.0, 1.0, &s, &[], &[]).is_err());
    }

    #[test]
    fn adamnc_zeta_for_constant_gradients() {
        let s = Schedule::new(1.0, 0.0, 0.0).with_beta2_mode(Beta2Mode::OneMinusInvT);
        let g = vec![rv(&[1.0]); 4];
        let v = vec![rv(&[1.0]); 4];
        let rep = adamnc_bound(2.0, 1.0, &s, &g, &v).unwrap();
        assert!(rep.hypotheses_hold());
        assert!((rep.empirical_zeta.unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn adamnc_monotonicity_violation_is_located() {
        // Plain Adam trace with beta2 = 0.25 and g = (10, 0.1): v_1 = 75,
        // v_2 = 18.7575, and sqrt(v_2) sqrt(2) < sqrt(v_1).
        let s = Schedule::new(1.0, 0.0, 0.25);
        let g = vec![rv(&[10.0]), rv(&[0.1])];
        let v = vec![rv(&[75.0]), rv(&[18.7575])];
        let rep = adamnc_bound(2.0, 10.0, &s, &g, &v).unwrap();
        assert_eq!(rep.violations, vec![(2, 0)]);
        assert_eq!(rep.bound_value, f64::INFINITY);
    }

    #[test]
    fn auer_examples() {
        let c = auer_check(&[1.0, 1.0, 1.0]).unwrap();
        assert!((c.lhs - 2.284_457_050_376_173).abs() < 1e-12);
        assert!((c.rhs - 3.464_101_615_137_754_4).abs() < 1e-12);
        assert!(c.ok);
        let z = auer_check(&[0.0, 0.0, 0.0]).unwrap();
        assert_eq!((z.lhs, z.rhs), (0.0, 0.0));
        let one = auer_check(&[9.0]).unwrap();
        assert_eq!(one.lhs, 3.0);
        assert_eq!(one.rhs, 6.0);
        assert!(auer_check(&[1.0, -0.5]).is_err());
    }
}
