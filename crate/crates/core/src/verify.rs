//! Randomized property batteries with named pass/fail results.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_xoshiro::SplitMix64;
use serde::Serialize;

use crate::analysis::{adamnc_bound, amsgrad_bound, auer_check, MomentumTerm, RegretLedger};
use crate::error::{Error, Result};
use crate::numcore::{project_weighted, BoxSet, DiagWeights, RealVec};
use crate::optim::{
    adaptive_step, ema_step, AlphaMode, Beta1Mode, Beta2Mode, HatRule, OptimizerKind, OptimizerState, Schedule,
};
use crate::runner::{simulate, TraceOptions};
use crate::scenarios::{check_thm2_conditions, find_thm2_c, thm1_sequence, Scenario, TableScenario};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Gamma,
    Bounds,
    Lemmas,
    Conditions,
    Equivalences,
}

impl Suite {
    pub const ALL: [Suite; 5] = [Suite::Gamma, Suite::Bounds, Suite::Lemmas, Suite::Conditions, Suite::Equivalences];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Gamma => "gamma",
            Suite::Bounds => "bounds",
            Suite::Lemmas => "lemmas",
            Suite::Conditions => "conditions",
            Suite::Equivalences => "equivalences",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::usage("suite", format!("unknown suite `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropertyResult {
    pub suite: Suite,
    pub name: String,
    pub passed: bool,
    pub cases: usize,
    pub failures: usize,
    /// Free-form summary, e.g. the worst observed margin.
    pub detail: String,
    /// First failing case.
    pub counterexample: Option<String>,
}

struct Tally {
    suite: Suite,
    name: &'static str,
    cases: usize,
    failures: usize,
    counterexample: Option<String>,
}

impl Tally {
    fn new(suite: Suite, name: &'static str) -> Self {
        Tally { suite, name, cases: 0, failures: 0, counterexample: None }
    }

    fn check(&mut self, ok: bool, describe: impl FnOnce() -> String) {
        self.cases += 1;
        if !ok {
            self.failures += 1;
            if self.counterexample.is_none() {
                self.counterexample = Some(describe());
            }
        }
    }

    fn error(&mut self, e: Error, describe: impl FnOnce() -> String) {
        self.check(false, || format!("{}: {e}", describe()));
    }

    fn finish(self, detail: String) -> PropertyResult {
        PropertyResult {
            suite: self.suite,
            name: self.name.into(),
            passed: self.failures == 0 && self.cases > 0,
            cases: self.cases,
            failures: self.failures,
            detail,
            counterexample: self.counterexample,
        }
    }
}

/// Sizes of the randomized batteries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Budget {
    pub gamma_runs: usize,
    pub bound_runs: usize,
    pub lemma_cases: usize,
    pub stream_cases: usize,
}

impl Default for Budget {
    fn default() -> Self {
        Budget { gamma_runs: 50, bound_runs: 100, lemma_cases: 10_000, stream_cases: 20 }
    }
}

pub fn run_suite(suite: Suite, seed: u64, budget: &Budget) -> Vec<PropertyResult> {
    match suite {
        Suite::Gamma => vec![
            gamma_psd(OptimizerKind::Sgd, seed, budget.gamma_runs),
            gamma_psd(OptimizerKind::Adagrad, seed, budget.gamma_runs),
            gamma_psd(OptimizerKind::AmsGrad, seed, budget.gamma_runs),
            gamma_adam_thm1_violates(),
        ],
        Suite::Bounds => vec![
            bound_dominance(OptimizerKind::AmsGrad, seed, budget.bound_runs),
            bound_dominance(OptimizerKind::AdamNc, seed, budget.bound_runs),
        ],
        Suite::Lemmas => vec![
            auer_battery(seed, budget.lemma_cases),
            projection_nonexpansive(seed, budget.lemma_cases),
            drift_lemma(seed, budget.lemma_cases),
            regret_grid_oracle(seed, 50),
            ledger_additivity(seed, budget.stream_cases),
        ],
        Suite::Conditions => vec![thm1_pins_iterate(), thm2_minimal_c(seed, budget.stream_cases)],
        Suite::Equivalences => vec![
            adam_beta1_zero_is_rmsprop(seed, budget.stream_cases),
            adamnc_constant_is_adam(seed, budget.stream_cases),
            adamnc_harmonic_prefix_means(seed, budget.stream_cases),
            identity_hat_is_adam(seed, budget.stream_cases),
        ],
    }
}

/// Mixes a property name into the seed so batteries do not share streams.
fn rng_for(seed: u64, tag: &str) -> SplitMix64 {
    let h = tag.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3));
    SplitMix64::seed_from_u64(seed ^ h)
}

fn random_slopes(rng: &mut SplitMix64, d: usize, t: usize) -> Vec<RealVec> {
    (0..t)
        .map(|_| RealVec::new((0..d).map(|_| rng.gen_range(-1.0..=1.0)).collect()).expect("finite"))
        .collect()
}

fn random_point(rng: &mut SplitMix64, d: usize) -> RealVec {
    RealVec::new((0..d).map(|_| rng.gen_range(-1.0..=1.0)).collect()).expect("finite")
}

fn table(d: usize, slopes: Vec<RealVec>) -> Scenario {
    let bx = BoxSet::symmetric(d, 1.0).expect("valid box");
    Scenario::Table(TableScenario::new(bx, slopes).expect("dimensions agree"))
}

fn gamma_psd(kind: OptimizerKind, seed: u64, runs: usize) -> PropertyResult {
    let name = match kind {
        OptimizerKind::Sgd => "gamma_psd_sgd",
        OptimizerKind::Adagrad => "gamma_psd_adagrad",
        _ => "gamma_psd_amsgrad",
    };
    let mut tally = Tally::new(Suite::Gamma, name);
    let mut rng = rng_for(seed, name);
    let mut total = 0u64;
    for run in 0..runs {
        let d = rng.gen_range(1..=4);
        let t = rng.gen_range(2..=500);
        let alpha = rng.gen_range(0.01..=1.0);
        let beta1 = rng.gen_range(0.0..0.95);
        let beta2 = rng.gen_range(0.0..1.0);
        let s = Schedule::new(alpha, beta1, beta2);
        let sc = table(d, random_slopes(&mut rng, d, t));
        let x0 = random_point(&mut rng, d);
        let describe = || format!("run {run}: d={d} T={t} alpha={alpha} beta1={beta1} beta2={beta2}");
        match simulate(&sc, kind, &s, &x0, t as u64, &TraceOptions { record_every: t as u64, ..Default::default() }) {
            Ok(r) => {
                total += r.gamma_violations;
                tally.check(r.gamma_violations == 0, || {
                    format!("{}: first violations {:?}", describe(), r.first_gamma_violations)
                });
            }
            Err(e) => tally.error(e, describe),
        }
    }
    tally.finish(format!("{total} negative Gamma entries"))
}

fn gamma_adam_thm1_violates() -> PropertyResult {
    let mut tally = Tally::new(Suite::Gamma, "gamma_adam_thm1_expected_violations");
    let sc = thm1_sequence(4.0).expect("valid C");
    let s = sc.recommended.expect("schedule");
    let sc = Scenario::Online(sc);
    let x0 = RealVec::filled(1, 1.0);
    let mut found = 0;
    match simulate(&sc, OptimizerKind::Adam, &s, &x0, 300, &TraceOptions { record_every: 300, ..Default::default() }) {
        Ok(r) => {
            found = r.gamma_violations;
            tally.check(found >= 1, || "Adam on thm1(C=4) produced no negative Gamma".into());
        }
        Err(e) => tally.error(e, || "thm1 run".into()),
    }
    tally.finish(format!("{found} negative Gamma entries (violations expected)"))
}

fn bound_schedule(rng: &mut SplitMix64, kind: OptimizerKind) -> Schedule {
    let alpha = rng.gen_range(0.05..=1.0);
    let beta1 = rng.gen_range(0.0..0.9);
    let lambda = rng.gen_range(0.5..0.999);
    let s = Schedule::new(alpha, beta1, 0.0).with_beta1_mode(Beta1Mode::ExpDecay { lambda });
    match kind {
        OptimizerKind::AdamNc => s.with_beta2_mode(Beta2Mode::OneMinusInvT),
        _ => {
            let lo = beta1 * beta1;
            let beta2 = lo + (1.0 - lo) * rng.gen_range(0.05..0.999);
            Schedule { beta2, ..s }
        }
    }
}

fn bound_dominance(kind: OptimizerKind, seed: u64, runs: usize) -> PropertyResult {
    let name = if kind == OptimizerKind::AdamNc { "bound_dominance_adamnc" } else { "bound_dominance_amsgrad" };
    let mut tally = Tally::new(Suite::Bounds, name);
    let mut rng = rng_for(seed, name);
    let mut worst = f64::INFINITY;
    for run in 0..runs {
        let d = rng.gen_range(1..=4);
        let t = rng.gen_range(1..=1000);
        let s = bound_schedule(&mut rng, kind);
        let sc = table(d, random_slopes(&mut rng, d, t));
        let x0 = random_point(&mut rng, d);
        let describe = || format!("run {run}: d={d} T={t} schedule={s:?}");
        let opts = TraceOptions { record_every: t as u64, keep_grads: true, keep_moments: true, ..Default::default() };
        let res = simulate(&sc, kind, &s, &x0, t as u64, &opts).and_then(|r| {
            let g_inf = sc.g_inf();
            let d_inf = sc.bx().diameter();
            let rep = if kind == OptimizerKind::AdamNc {
                adamnc_bound(d_inf, g_inf, &s, &r.grads, &r.moments)?
            } else {
                amsgrad_bound(d_inf, g_inf, &s, &r.grads, &r.moments, MomentumTerm::Exact)?
            };
            Ok((r.regret, rep))
        });
        match res {
            Ok((regret, rep)) => {
                worst = worst.min(rep.bound_value - regret);
                tally.check(rep.hypotheses_hold() && regret <= rep.bound_value, || {
                    format!("{}: R_T={regret} bound={} flags={:?}", describe(), rep.bound_value, rep.hypothesis_flags)
                });
            }
            Err(e) => tally.error(e, describe),
        }
    }
    tally.finish(format!("smallest bound - R_T = {worst}"))
}

fn auer_battery(seed: u64, cases: usize) -> PropertyResult {
    let mut tally = Tally::new(Suite::Lemmas, "auer_sum_bound");
    let mut rng = rng_for(seed, "auer");
    for case in 0..cases {
        let len = rng.gen_range(1..=1000);
        let zero_rate: f64 = rng.gen_range(0.0..0.5);
        let scale = 10f64.powf(rng.gen_range(-3.0..3.0));
        let y: Vec<f64> = (0..len)
            .map(|_| if rng.gen::<f64>() < zero_rate { 0.0 } else { scale * rng.gen::<f64>() })
            .collect();
        match auer_check(&y) {
            Ok(c) => tally.check(c.ok, || format!("case {case}: lhs={} rhs={} y[..4]={:?}", c.lhs, c.rhs, &y[..y.len().min(4)])),
            Err(e) => tally.error(e, || format!("case {case}")),
        }
    }
    tally.finish(String::new())
}

fn projection_nonexpansive(seed: u64, cases: usize) -> PropertyResult {
    let mut tally = Tally::new(Suite::Lemmas, "projection_nonexpansive");
    let mut rng = rng_for(seed, "projection");
    for case in 0..cases {
        let d = rng.gen_range(1..=6);
        let lo: Vec<f64> = (0..d).map(|_| rng.gen_range(-2.0..1.0)).collect();
        let hi: Vec<f64> = lo.iter().map(|l| l + rng.gen_range(0.0..3.0)).collect();
        let bx = BoxSet::new(RealVec::new(lo).expect("finite"), RealVec::new(hi).expect("finite")).expect("lo <= hi");
        let w = DiagWeights::new(RealVec::new((0..d).map(|_| rng.gen_range(0.0..5.0)).collect()).expect("finite"))
            .expect("non-negative");
        let u = RealVec::new((0..d).map(|_| rng.gen_range(-5.0..5.0)).collect()).expect("finite");
        let v = RealVec::new((0..d).map(|_| rng.gen_range(-5.0..5.0)).collect()).expect("finite");
        let res = (|| -> Result<(f64, f64)> {
            let pu = project_weighted(&bx, &w, &u)?;
            let pv = project_weighted(&bx, &w, &v)?;
            Ok((w.sq_dist(&pu, &pv)?.sqrt(), w.sq_dist(&u, &v)?.sqrt()))
        })();
        match res {
            Ok((after, before)) => {
                tally.check(after <= before + 1e-12, || format!("case {case}: {after} > {before} for u={u:?} v={v:?}"))
            }
            Err(e) => tally.error(e, || format!("case {case}")),
        }
    }
    tally.finish(String::new())
}

fn drift_lemma(seed: u64, cases: usize) -> PropertyResult {
    let mut tally = Tally::new(Suite::Lemmas, "one_dimensional_drift");
    let mut rng = rng_for(seed, "drift");
    for case in 0..cases {
        let a = rng.gen_range(-2.0..1.0);
        let b = a + rng.gen_range(0.01..3.0);
        let n_neg = rng.gen_range(0..=20);
        let n_pos = rng.gen_range(0..=20);
        let mut deltas: Vec<f64> = (0..n_neg).map(|_| -rng.gen_range(0.0..1.0)).collect();
        deltas.extend((0..n_pos).map(|_| rng.gen_range(f64::MIN_POSITIVE..1.0)));
        let y1 = rng.gen_range(a..=b);
        let mut y = y1;
        for &dlt in &deltas {
            y = (y + dlt).clamp(a, b);
        }
        let target = b.min(y1 + deltas.iter().sum::<f64>());
        tally.check(y >= target - 1e-12, || format!("case {case}: [a,b]=[{a},{b}] y1={y1} deltas={deltas:?} got {y} < {target}"));
    }
    tally.finish(String::new())
}

fn regret_grid_oracle(seed: u64, cases: usize) -> PropertyResult {
    let mut tally = Tally::new(Suite::Lemmas, "regret_matches_grid_search");
    let mut rng = rng_for(seed, "grid");
    const POINTS: usize = 100_000;
    for case in 0..cases {
        let slopes: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        let xs: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        let mut ledger = RegretLedger::new(BoxSet::symmetric(1, 1.0).expect("valid box"));
        for (x, c) in xs.iter().zip(&slopes) {
            ledger.record(&RealVec::filled(1, *x), &RealVec::filled(1, *c)).expect("1-D");
        }
        let played: f64 = xs.iter().zip(&slopes).map(|(x, c)| x * c).sum();
        let h = 2.0 / (POINTS - 1) as f64;
        let best = (0..POINTS)
            .map(|j| {
                let z = -1.0 + h * j as f64;
                slopes.iter().map(|c| c * z).sum::<f64>()
            })
            .fold(f64::INFINITY, f64::min);
        let grid_regret = played - best;
        let tol = h * slopes.iter().map(|c| c.abs()).sum::<f64>() + 1e-12;
        let diff = (ledger.regret() - grid_regret).abs();
        tally.check(diff <= tol, || format!("case {case}: closed form {} vs grid {grid_regret}", ledger.regret()));
    }
    tally.finish(String::new())
}

fn ledger_additivity(seed: u64, cases: usize) -> PropertyResult {
    let mut tally = Tally::new(Suite::Lemmas, "ledger_additivity");
    let mut rng = rng_for(seed, "ledger");
    for case in 0..cases {
        let d = rng.gen_range(1..=4);
        let (t1, t2) = (rng.gen_range(1..=50), rng.gen_range(1..=50));
        let slopes = random_slopes(&mut rng, d, t1 + t2);
        let xs: Vec<RealVec> = (0..t1 + t2).map(|_| random_point(&mut rng, d)).collect();
        let bx = BoxSet::symmetric(d, 1.0).expect("valid box");
        let mut incremental = RegretLedger::new(bx.clone());
        for (x, c) in xs[..t1].iter().zip(&slopes[..t1]) {
            incremental.record(x, c).expect("dims");
        }
        for (x, c) in xs[t1..].iter().zip(&slopes[t1..]) {
            incremental.record(x, c).expect("dims");
        }
        let sc = table(d, slopes);
        match crate::analysis::regret(&sc, &xs) {
            Ok((r, _)) => tally.check(r == incremental.regret(), || format!("case {case}: {r} vs {}", incremental.regret())),
            Err(e) => tally.error(e, || format!("case {case}")),
        }
    }
    tally.finish(String::new())
}

fn thm1_pins_iterate() -> PropertyResult {
    let mut tally = Tally::new(Suite::Conditions, "thm1_iterate_returns_to_one");
    for c in [3.0, 4.0, 6.0, 10.0] {
        let sc = thm1_sequence(c).expect("C > 2");
        let s = sc.recommended.expect("schedule");
        let sc = Scenario::Online(sc);
        let x0 = RealVec::filled(1, 1.0);
        match simulate(&sc, OptimizerKind::Adam, &s, &x0, 300, &TraceOptions::default()) {
            Ok(r) => {
                let off = r.rows.iter().filter(|row| row.t % 3 == 1 && (row.x[0] - 1.0).abs() > 1e-9).count();
                tally.check(off == 0, || format!("C={c}: {off} rounds t = 1 mod 3 away from x = 1"));
            }
            Err(e) => tally.error(e, || format!("C={c}")),
        }
    }
    tally.finish(String::new())
}

fn thm2_minimal_c(seed: u64, cases: usize) -> PropertyResult {
    let mut tally = Tally::new(Suite::Conditions, "thm2_search_is_minimal");
    let mut rng = rng_for(seed, "thm2");
    for case in 0..cases {
        let beta2 = rng.gen_range(0.5..0.99);
        let beta1 = rng.gen_range(0.0..0.9) * f64::sqrt(beta2);
        let describe = || format!("case {case}: beta1={beta1} beta2={beta2}");
        let res = (|| -> Result<bool> {
            let c = find_thm2_c(beta1, beta2, 1_000_000)?;
            let at = check_thm2_conditions(beta1, beta2, c)?.satisfied;
            let below = c == 2 || !check_thm2_conditions(beta1, beta2, c - 2)?.satisfied;
            Ok(at && below)
        })();
        match res {
            Ok(ok) => tally.check(ok, describe),
            Err(e) => tally.error(e, describe),
        }
    }
    tally.finish(String::new())
}

fn random_stream(rng: &mut SplitMix64) -> (usize, Vec<RealVec>) {
    let d = rng.gen_range(1..=4);
    let t = rng.gen_range(1..=200);
    let scale = 10f64.powf(rng.gen_range(-2.0..2.0));
    let g = (0..t)
        .map(|_| RealVec::new((0..d).map(|_| scale * rng.gen_range(-1.0..=1.0)).collect()).expect("finite"))
        .collect();
    (d, g)
}

/// Runs two step functions over the same stream and compares the iterate
/// traces with `same`.
fn compare_runs(
    tally: &mut Tally,
    case: usize,
    d: usize,
    grads: &[RealVec],
    mut a: impl FnMut(&RealVec, &RealVec) -> Result<RealVec>,
    mut b: impl FnMut(&RealVec, &RealVec) -> Result<RealVec>,
) {
    let mut xa = RealVec::zeros(d);
    let mut xb = RealVec::zeros(d);
    for (t, g) in grads.iter().enumerate() {
        match (a(&xa, g), b(&xb, g)) {
            (Ok(na), Ok(nb)) => {
                if na != nb {
                    tally.check(false, || format!("case {case}: diverged at t={} ({na:?} vs {nb:?})", t + 1));
                    return;
                }
                xa = na;
                xb = nb;
            }
            (Err(e), _) | (_, Err(e)) => {
                tally.error(e, || format!("case {case} at t={}", t + 1));
                return;
            }
        }
    }
    tally.check(true, String::new);
}

fn adam_beta1_zero_is_rmsprop(seed: u64, cases: usize) -> PropertyResult {
    let mut tally = Tally::new(Suite::Equivalences, "adam_beta1_zero_equals_rmsprop");
    let mut rng = rng_for(seed, "rmsprop");
    for case in 0..cases {
        let (d, grads) = random_stream(&mut rng);
        let s = Schedule::new(rng.gen_range(0.01..1.0), 0.0, rng.gen_range(0.0..1.0));
        let mut sa = OptimizerState::new(OptimizerKind::Adam, d);
        let mut sb = OptimizerState::new(OptimizerKind::RmsProp, d);
        compare_runs(
            &mut tally,
            case,
            d,
            &grads,
            |x, g| {
                let (n, x) = adaptive_step(OptimizerKind::Adam, &sa, x, g, &s, None)?;
                sa = n;
                Ok(x)
            },
            |x, g| {
                let (n, x) = adaptive_step(OptimizerKind::RmsProp, &sb, x, g, &s, None)?;
                sb = n;
                Ok(x)
            },
        );
    }
    tally.finish("bit-identical iterates".into())
}

fn adamnc_constant_is_adam(seed: u64, cases: usize) -> PropertyResult {
    let mut tally = Tally::new(Suite::Equivalences, "adamnc_constant_beta2_equals_adam");
    let mut rng = rng_for(seed, "adamnc-const");
    for case in 0..cases {
        let (d, grads) = random_stream(&mut rng);
        let s = Schedule::new(rng.gen_range(0.01..1.0), rng.gen_range(0.0..0.99), rng.gen_range(0.0..1.0))
            .with_alpha_mode(if rng.gen() { AlphaMode::Constant } else { AlphaMode::InvSqrtT });
        let mut sa = OptimizerState::new(OptimizerKind::AdamNc, d);
        let mut sb = OptimizerState::new(OptimizerKind::Adam, d);
        compare_runs(
            &mut tally,
            case,
            d,
            &grads,
            |x, g| {
                let (n, x) = adaptive_step(OptimizerKind::AdamNc, &sa, x, g, &s, None)?;
                sa = n;
                Ok(x)
            },
            |x, g| {
                let (n, x) = adaptive_step(OptimizerKind::Adam, &sb, x, g, &s, None)?;
                sb = n;
                Ok(x)
            },
        );
    }
    tally.finish("bit-identical iterates".into())
}

fn identity_hat_is_adam(seed: u64, cases: usize) -> PropertyResult {
    let mut tally = Tally::new(Suite::Equivalences, "identity_hat_rule_equals_adam");
    let mut rng = rng_for(seed, "identity-hat");
    for case in 0..cases {
        let (d, grads) = random_stream(&mut rng);
        let s = Schedule::new(rng.gen_range(0.01..1.0), rng.gen_range(0.0..0.99), rng.gen_range(0.0..1.0));
        let mut sa = OptimizerState::new(OptimizerKind::AmsGrad, d);
        let mut sb = OptimizerState::new(OptimizerKind::Adam, d);
        compare_runs(
            &mut tally,
            case,
            d,
            &grads,
            |x, g| {
                let (n, x) = ema_step(&sa, x, g, &s, None, HatRule::Identity)?;
                sa = n;
                Ok(x)
            },
            |x, g| {
                let (n, x) = adaptive_step(OptimizerKind::Adam, &sb, x, g, &s, None)?;
                sb = n;
                Ok(x)
            },
        );
    }
    tally.finish("bit-identical iterates".into())
}

fn adamnc_harmonic_prefix_means(seed: u64, cases: usize) -> PropertyResult {
    let mut tally = Tally::new(Suite::Equivalences, "adamnc_harmonic_v_is_prefix_mean");
    let mut rng = rng_for(seed, "adamnc-prefix");
    let mut worst: f64 = 0.0;
    for case in 0..cases {
        let (d, grads) = random_stream(&mut rng);
        let s = Schedule::new(0.1, rng.gen_range(0.0..0.9), 0.0).with_beta2_mode(Beta2Mode::OneMinusInvT);
        let mut st = OptimizerState::new(OptimizerKind::AdamNc, d);
        let mut x = RealVec::zeros(d);
        let mut sums = vec![0.0; d];
        let mut ok = true;
        for (k, g) in grads.iter().enumerate() {
            match adaptive_step(OptimizerKind::AdamNc, &st, &x, g, &s, None) {
                Ok((n, nx)) => {
                    st = n;
                    x = nx;
                }
                Err(e) => {
                    tally.error(e, || format!("case {case}"));
                    ok = false;
                    break;
                }
            }
            for i in 0..d {
                sums[i] += g[i] * g[i];
                let mean = sums[i] / (k + 1) as f64;
                let rel = if mean == 0.0 { st.v[i].abs() } else { (st.v[i] - mean).abs() / mean };
                worst = worst.max(rel);
                if rel > 1e-12 {
                    ok = false;
                }
            }
        }
        tally.check(ok, || format!("case {case}: relative gap above 1e-12"));
    }
    tally.finish(format!("max relative gap {worst:e}"))
}
