//! Browser bindings: Adam vs AMSGrad trajectories, Gamma sign traces and the
//! period search, each returning JSON for the page in `www/`.

use amsgrad::numcore::RealVec;
use amsgrad::optim::{gamma_trace, psd_violations, OptimizerKind, Schedule};
use amsgrad::runner::{simulate, TraceOptions};
use amsgrad::scenarios::{
    check_thm2_conditions, find_thm2_c, synth_experiment, thm1_sequence, thm6_epsilon, Scenario, SynthKind,
};
use amsgrad::{Error, Result};
use serde::Serialize;
use wasm_bindgen::prelude::*;

const MAX_STEPS: u64 = 2_000_000;
const MAX_POINTS: u64 = 2_000;

fn scenario(name: &str, c: f64, seed: u64) -> Result<(Scenario, Option<Schedule>)> {
    let online = |s: amsgrad::scenarios::OnlineScenario| {
        let rec = s.recommended;
        (Scenario::Online(s), rec)
    };
    match name {
        "thm1" => thm1_sequence(c).map(online),
        "thm6" => thm6_epsilon(c, 1.0).map(online),
        "synth_online" => Ok((synth_experiment(SynthKind::Online, seed), None)),
        "synth_stochastic" => Ok((synth_experiment(SynthKind::Stochastic, seed), None)),
        other => Err(Error::Parameter(format!("unknown scenario `{other}`"))),
    }
}

#[derive(Debug, Serialize)]
pub struct Series {
    pub optimizer: String,
    pub t: Vec<u64>,
    pub x: Vec<f64>,
    pub avg_regret: Vec<f64>,
    pub final_x: f64,
    pub gamma_violations: u64,
}

#[derive(Debug, Serialize)]
pub struct Comparison {
    pub scenario: String,
    pub schedule: (f64, f64, f64),
    pub series: Vec<Series>,
}

/// Adam and AMSGrad on the same 1-D scenario. Non-positive `alpha`,
/// `beta1` or `beta2` (any negative value) keeps the scenario's own
/// schedule.
pub fn compare_trajectories(
    name: &str,
    c: f64,
    alpha: f64,
    beta1: f64,
    beta2: f64,
    steps: u64,
    seed: u64,
) -> Result<Comparison> {
    if steps == 0 || steps > MAX_STEPS {
        return Err(Error::Parameter(format!("steps must be in 1..={MAX_STEPS}")));
    }
    let (sc, rec) = scenario(name, c, seed)?;
    let mut s = rec.unwrap_or_else(|| Schedule::new(0.5, 0.9, 0.99));
    if alpha > 0.0 {
        s.alpha = alpha;
    }
    if beta1 >= 0.0 {
        s.beta1 = beta1;
    }
    if beta2 >= 0.0 {
        s.beta2 = beta2;
    }
    s.validate()?;
    let stride = steps.div_ceil(MAX_POINTS).max(1);
    let opts = TraceOptions { record_every: stride, ..Default::default() };
    let x0 = RealVec::filled(1, 1.0);
    let series = [OptimizerKind::Adam, OptimizerKind::AmsGrad]
        .into_iter()
        .map(|k| {
            let r = simulate(&sc, k, &s, &x0, steps, &opts)?;
            Ok(Series {
                optimizer: k.name().into(),
                t: r.rows.iter().map(|row| row.t).collect(),
                x: r.rows.iter().map(|row| row.x[0]).collect(),
                avg_regret: r.rows.iter().map(|row| row.avg_regret).collect(),
                final_x: r.final_x[0],
                gamma_violations: r.gamma_violations,
            })
        })
        .collect::<Result<_>>()?;
    Ok(Comparison { scenario: sc.name().into(), schedule: (s.alpha, s.beta1, s.beta2), series })
}

#[derive(Debug, Serialize)]
pub struct GammaReport {
    pub optimizer: String,
    /// `Gamma_t` for `t = 2..`.
    pub gamma: Vec<f64>,
    pub negative_at: Vec<u64>,
}

/// `Gamma_t` over the first `steps` rounds of the period-3 sequence.
pub fn gamma_report(optimizer: &str, c: f64, steps: u64) -> Result<GammaReport> {
    if !(2..=10_000).contains(&steps) {
        return Err(Error::Parameter("steps must be in 2..=10000".into()));
    }
    let kind: OptimizerKind = optimizer.parse()?;
    let sc = thm1_sequence(c)?;
    let s = sc.recommended.expect("thm1 has a schedule");
    let sc = Scenario::Online(sc);
    let opts = TraceOptions { keep_denominators: true, ..Default::default() };
    let r = simulate(&sc, kind, &s, &RealVec::filled(1, 1.0), steps, &opts)?;
    let gammas = gamma_trace(&s, &r.denominators)?;
    Ok(GammaReport {
        optimizer: kind.name().into(),
        gamma: gammas.iter().map(|g| g[0]).collect(),
        negative_at: psd_violations(&gammas).into_iter().map(|(t, _)| t).collect(),
    })
}

#[derive(Debug, Serialize)]
pub struct PeriodReport {
    pub c: u64,
    pub slacks: [f64; 3],
}

pub fn period_search(beta1: f64, beta2: f64, c_max: u64) -> Result<PeriodReport> {
    let c = find_thm2_c(beta1, beta2, c_max)?;
    let slacks = check_thm2_conditions(beta1, beta2, c)?.slacks;
    Ok(PeriodReport { c, slacks })
}

fn to_js<T: Serialize>(r: Result<T>) -> std::result::Result<String, JsValue> {
    r.map(|v| serde_json::to_string(&v).expect("serializable"))
        .map_err(|e| JsValue::from_str(&e.to_string()))
}

#[wasm_bindgen(js_name = compareTrajectories)]
pub fn compare_trajectories_js(
    name: &str,
    c: f64,
    alpha: f64,
    beta1: f64,
    beta2: f64,
    steps: u32,
    seed: u32,
) -> std::result::Result<String, JsValue> {
    to_js(compare_trajectories(name, c, alpha, beta1, beta2, steps as u64, seed as u64))
}

#[wasm_bindgen(js_name = gammaReport)]
pub fn gamma_report_js(optimizer: &str, c: f64, steps: u32) -> std::result::Result<String, JsValue> {
    to_js(gamma_report(optimizer, c, steps as u64))
}

#[wasm_bindgen(js_name = periodSearch)]
pub fn period_search_js(beta1: f64, beta2: f64, c_max: u32) -> std::result::Result<String, JsValue> {
    to_js(period_search(beta1, beta2, c_max as u64))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thm1_adam_sticks_and_amsgrad_escapes() {
        let cmp = compare_trajectories("thm1", 4.0, -1.0, -1.0, -1.0, 30_000, 0).unwrap();
        assert_eq!(cmp.series[0].final_x, 1.0);
        assert!(cmp.series[1].final_x < -0.9);
        assert!(cmp.series.iter().all(|s| s.t.len() as u64 <= MAX_POINTS + 1));
    }

    #[test]
    fn gamma_signs() {
        assert!(!gamma_report("adam", 4.0, 30).unwrap().negative_at.is_empty());
        for k in ["sgd", "adagrad", "amsgrad"] {
            assert!(gamma_report(k, 4.0, 30).unwrap().negative_at.is_empty(), "{k}");
        }
    }

    #[test]
    fn period_search_matches_known_value() {
        assert_eq!(period_search(0.0, 0.5, 1000).unwrap().c, 20);
        assert!(period_search(0.9, 0.999, 100).is_err());
    }

    #[test]
    fn bad_inputs_are_errors() {
        assert!(compare_trajectories("nope", 4.0, 0.1, 0.0, 0.5, 10, 0).is_err());
        assert!(compare_trajectories("thm1", 4.0, 0.1, 0.0, 0.5, 0, 0).is_err());
        assert!(gamma_report("lbfgs", 4.0, 10).is_err());
    }
}
