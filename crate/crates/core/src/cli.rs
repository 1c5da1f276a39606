//! Command-line experiment runner.
//!
//! Runs are described by flat `key = value` files; every key can also be
//! given as a flag (`--beta2 0.99`), which wins over the file. Keys:
//!
//! | key            | values                                                        |
//! |----------------|---------------------------------------------------------------|
//! | `scenario`     | `thm1(C)`, `thm2(beta1,beta2)`, `thm3(C,delta)`, `thm6(C,eps)`, `synth_online`, `synth_stochastic`, `erm_synthetic(n,p,k,margin)`, `erm_mnist(images,labels)` |
//! | `optimizer`    | `sgd`, `adagrad`, `rmsprop`, `adam`, `amsgrad`, `adamnc`      |
//! | `alpha`        | step size                                                     |
//! | `alpha_mode`   | `constant`, `inv_sqrt_t`                                      |
//! | `beta1`        | first-moment weight                                           |
//! | `beta1_mode`   | `constant`, `exp_decay` (needs `lambda`), `harmonic`          |
//! | `lambda`       | decay rate for `exp_decay`                                    |
//! | `beta2`        | second-moment weight                                          |
//! | `beta2_mode`   | `constant`, `one_minus_inv_t`                                 |
//! | `epsilon`      | added under the square root (default 0)                       |
//! | `debias`       | `true`, `false`                                               |
//! | `T`            | number of steps (default 1000)                                |
//! | `seed`         | RNG seed for stochastic scenarios and minibatches             |
//! | `x0`           | starting point, a scalar or comma list (default 1)            |
//! | `project`      | `true` (default) or `false` for unconstrained runs            |
//! | `batch_size`   | ERM minibatch size (default 128)                              |
//! | `record_every` | CSV row stride (default 100 when `T > 10000`, else 1)         |
//! | `output`       | CSV path                                                      |
//! | `trace`        | optional CSV of gradients and second moments for `check-bound`|
//!
//! `synth_online` and `synth_stochastic` have no default `alpha`, `epsilon`
//! or `T`; all three must be given.
//!
//! Relative output paths are resolved against `$AMSGRAD_OUT_DIR` when set.
//! Scenario arguments may be positional or named, e.g.
//! `erm_synthetic(n=1000,p=10,k=3,margin=10)`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use crate::analysis::{adamnc_bound, amsgrad_bound, MomentumTerm};
use crate::erm::{load_idx_files, make_synthetic, train, Dataset, MinibatchSampler, TrainConfig};
use crate::error::{Error, Result};
use crate::numcore::RealVec;
use crate::optim::{AlphaMode, Beta1Mode, Beta2Mode, OptimizerKind, Schedule};
use crate::runner::{simulate, TraceOptions, TraceRow};
use crate::scenarios::{
    find_thm2_c, check_thm2_conditions, synth_experiment, thm1_sequence, thm2_sequence, thm3_stochastic, thm6_epsilon,
    Scenario, SynthKind, DEFAULT_C_MAX,
};
use crate::verify::{run_suite, Budget, Suite};

pub const OUT_DIR_ENV: &str = "AMSGRAD_OUT_DIR";

const KEYS: &[&str] = &[
    "scenario",
    "optimizer",
    "alpha",
    "alpha_mode",
    "beta1",
    "beta1_mode",
    "lambda",
    "beta2",
    "beta2_mode",
    "epsilon",
    "debias",
    "T",
    "seed",
    "x0",
    "project",
    "batch_size",
    "record_every",
    "output",
    "trace",
];

/// Floats in CSV output: 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        format!("{x}")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScenarioSpec {
    Thm1 { c: f64 },
    Thm2 { beta1: f64, beta2: f64 },
    Thm3 { c: f64, delta: f64 },
    Thm6 { c: f64, eps: f64 },
    SynthOnline,
    SynthStochastic,
    ErmSynthetic { n: usize, p: usize, k: usize, margin: f64 },
    ErmMnist { images: PathBuf, labels: PathBuf },
}

/// An optional argument name and its value.
type ScenarioArg = (Option<String>, String);

fn scenario_args(s: &str) -> Result<(String, Vec<ScenarioArg>)> {
    let s = s.trim();
    let Some(open) = s.find('(') else {
        return Ok((s.to_ascii_lowercase(), Vec::new()));
    };
    if !s.ends_with(')') {
        return Err(Error::usage("scenario", format!("unbalanced parentheses in `{s}`")));
    }
    let name = s[..open].trim().to_ascii_lowercase();
    let inner = &s[open + 1..s.len() - 1];
    let args = inner
        .split(',')
        .map(str::trim)
        .filter(|a| !a.is_empty())
        .map(|a| match a.split_once('=') {
            Some((k, v)) => (Some(k.trim().to_string()), v.trim().to_string()),
            None => (None, a.to_string()),
        })
        .collect();
    Ok((name, args))
}

fn pick(args: &[ScenarioArg], names: &[&str], i: usize) -> Option<String> {
    args.iter()
        .find(|(k, _)| k.as_deref().is_some_and(|k| names.iter().any(|n| n.eq_ignore_ascii_case(k))))
        .or_else(|| args.iter().filter(|(k, _)| k.is_none()).nth(i))
        .map(|(_, v)| v.clone())
}

fn num<T: FromStr>(field: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::usage(field, format!("cannot parse `{v}`")))
}

fn arg<T: FromStr>(args: &[ScenarioArg], names: &[&str], i: usize) -> Result<T> {
    let v = pick(args, names, i)
        .ok_or_else(|| Error::usage("scenario", format!("missing argument `{}`", names[0])))?;
    num(&format!("scenario.{}", names[0]), &v)
}

impl FromStr for ScenarioSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, a) = scenario_args(s)?;
        Ok(match name.as_str() {
            "thm1" => ScenarioSpec::Thm1 { c: arg(&a, &["C"], 0)? },
            "thm2" => ScenarioSpec::Thm2 { beta1: arg(&a, &["beta1"], 0)?, beta2: arg(&a, &["beta2"], 1)? },
            "thm3" => ScenarioSpec::Thm3 { c: arg(&a, &["C"], 0)?, delta: arg(&a, &["delta"], 1)? },
            "thm6" => ScenarioSpec::Thm6 { c: arg(&a, &["C"], 0)?, eps: arg(&a, &["eps", "epsilon"], 1)? },
            "synth_online" => ScenarioSpec::SynthOnline,
            "synth_stochastic" => ScenarioSpec::SynthStochastic,
            "erm_synthetic" => ScenarioSpec::ErmSynthetic {
                n: arg(&a, &["n"], 0)?,
                p: arg(&a, &["p"], 1)?,
                k: arg(&a, &["k"], 2)?,
                margin: arg(&a, &["margin"], 3)?,
            },
            "erm_mnist" => ScenarioSpec::ErmMnist {
                images: PathBuf::from(pick(&a, &["images"], 0).ok_or_else(|| Error::usage("scenario", "missing `images`"))?),
                labels: PathBuf::from(pick(&a, &["labels"], 1).ok_or_else(|| Error::usage("scenario", "missing `labels`"))?),
            },
            other => return Err(Error::usage("scenario", format!("unknown scenario `{other}`"))),
        })
    }
}

impl ScenarioSpec {
    pub fn is_erm(&self) -> bool {
        matches!(self, ScenarioSpec::ErmSynthetic { .. } | ScenarioSpec::ErmMnist { .. })
    }

    /// Schedule the scenario was built for, if it names one.
    fn default_schedule(&self) -> Schedule {
        let linear = match self {
            ScenarioSpec::Thm1 { c } => thm1_sequence(*c).ok().and_then(|s| s.recommended),
            ScenarioSpec::Thm6 { c, eps } => thm6_epsilon(*c, *eps).ok().and_then(|s| s.recommended),
            ScenarioSpec::Thm2 { beta1, beta2 } => Some(Schedule::new(0.5, *beta1, *beta2)),
            ScenarioSpec::SynthOnline | ScenarioSpec::SynthStochastic => Some(Schedule::new(0.0, 0.9, 0.99)),
            _ => None,
        };
        match linear {
            Some(s) => s,
            None if self.is_erm() => Schedule::new(0.01, 0.9, 0.999).with_alpha_mode(AlphaMode::Constant),
            None => Schedule::new(0.1, 0.9, 0.999),
        }
    }

    fn linear(&self, seed: u64) -> Result<Scenario> {
        Ok(match self {
            ScenarioSpec::Thm1 { c } => Scenario::Online(thm1_sequence(*c)?),
            ScenarioSpec::Thm2 { beta1, beta2 } => Scenario::Online(thm2_sequence(*beta1, *beta2)?.1),
            ScenarioSpec::Thm3 { c, delta } => Scenario::Stochastic(thm3_stochastic(*c, *delta, seed)?),
            ScenarioSpec::Thm6 { c, eps } => Scenario::Online(thm6_epsilon(*c, *eps)?),
            ScenarioSpec::SynthOnline => synth_experiment(SynthKind::Online, seed),
            ScenarioSpec::SynthStochastic => synth_experiment(SynthKind::Stochastic, seed),
            _ => return Err(Error::Unsupported("regret needs a linear scenario; ERM runs report loss traces".into())),
        })
    }

    fn dataset(&self, seed: u64) -> Result<Dataset> {
        match self {
            ScenarioSpec::ErmSynthetic { n, p, k, margin } => make_synthetic(*n, *p, *k, *margin, seed),
            ScenarioSpec::ErmMnist { images, labels } => load_idx_files(images, labels),
            _ => Err(Error::Unsupported("not an ERM scenario".into())),
        }
    }
}

/// A fully parsed run description.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub scenario_text: String,
    pub scenario: ScenarioSpec,
    pub optimizer: OptimizerKind,
    pub schedule: Schedule,
    pub steps: u64,
    pub seed: u64,
    pub x0: Option<Vec<f64>>,
    pub project: bool,
    pub batch_size: usize,
    pub record_every: u64,
    pub output: PathBuf,
    pub trace: Option<PathBuf>,
}

fn parse_bool(field: &str, v: &str) -> Result<bool> {
    match v.trim().to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::usage(field, format!("expected true or false, got `{v}`"))),
    }
}

fn resolve_output(p: &str) -> PathBuf {
    let path = PathBuf::from(p);
    match std::env::var_os(OUT_DIR_ENV) {
        Some(dir) if path.is_relative() => Path::new(&dir).join(path),
        _ => path,
    }
}

fn sanitize(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
        .collect::<String>()
        .trim_matches('_')
        .to_string()
}

/// Parses `key = value` lines. `#` starts a comment.
pub fn parse_config_text(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::usage(format!("line {}", lineno + 1), "expected `key = value`"))?;
        let key = normalize_key(k.trim())?;
        map.insert(key, v.trim().to_string());
    }
    Ok(map)
}

fn normalize_key(k: &str) -> Result<String> {
    let k = k.replace('-', "_");
    KEYS.iter()
        .find(|known| known.eq_ignore_ascii_case(&k) || (k.eq_ignore_ascii_case("steps") && **known == "T"))
        .map(|s| s.to_string())
        .ok_or_else(|| Error::usage(k.clone(), "unknown key"))
}

impl RunConfig {
    pub fn from_map(map: &BTreeMap<String, String>) -> Result<Self> {
        for k in map.keys() {
            normalize_key(k)?;
        }
        let get = |k: &str| map.get(k).map(String::as_str);
        let scenario_text = get("scenario").unwrap_or("thm1(4)").to_string();
        let scenario: ScenarioSpec = scenario_text.parse()?;
        let optimizer: OptimizerKind = match get("optimizer") {
            Some(v) => v.parse().map_err(|_| Error::usage("optimizer", format!("unknown optimizer `{v}`")))?,
            None => OptimizerKind::AmsGrad,
        };

        if matches!(scenario, ScenarioSpec::SynthOnline | ScenarioSpec::SynthStochastic) {
            for key in ["alpha", "epsilon", "T"] {
                if get(key).is_none() {
                    return Err(Error::usage(key, format!("required for {scenario_text}")));
                }
            }
        }

        let mut s = scenario.default_schedule();
        if let Some(v) = get("alpha") {
            s.alpha = num("alpha", v)?;
        }
        if let Some(v) = get("alpha_mode") {
            s.alpha_mode = match v.to_ascii_lowercase().as_str() {
                "constant" => AlphaMode::Constant,
                "inv_sqrt_t" => AlphaMode::InvSqrtT,
                _ => return Err(Error::usage("alpha_mode", format!("unknown mode `{v}`"))),
            };
        }
        if let Some(v) = get("beta1") {
            s.beta1 = num("beta1", v)?;
        }
        let lambda: Option<f64> = get("lambda").map(|v| num("lambda", v)).transpose()?;
        if let Some(v) = get("beta1_mode") {
            s.beta1_mode = match v.to_ascii_lowercase().as_str() {
                "constant" => Beta1Mode::Constant,
                "harmonic" => Beta1Mode::Harmonic,
                "exp_decay" => Beta1Mode::ExpDecay {
                    lambda: lambda.ok_or_else(|| Error::usage("lambda", "required by beta1_mode = exp_decay"))?,
                },
                _ => return Err(Error::usage("beta1_mode", format!("unknown mode `{v}`"))),
            };
        } else if lambda.is_some() {
            return Err(Error::usage("lambda", "only used with beta1_mode = exp_decay"));
        }
        if let Some(v) = get("beta2") {
            s.beta2 = num("beta2", v)?;
        }
        if let Some(v) = get("beta2_mode") {
            s.beta2_mode = match v.to_ascii_lowercase().as_str() {
                "constant" => Beta2Mode::Constant,
                "one_minus_inv_t" => Beta2Mode::OneMinusInvT,
                _ => return Err(Error::usage("beta2_mode", format!("unknown mode `{v}`"))),
            };
        }
        if let Some(v) = get("epsilon") {
            s.epsilon = num("epsilon", v)?;
        }
        if let Some(v) = get("debias") {
            s.debias = parse_bool("debias", v)?;
        }
        s.validate().map_err(|e| Error::usage("schedule", e.to_string()))?;

        let steps: u64 = num("T", get("T").unwrap_or("1000"))?;
        if steps == 0 {
            return Err(Error::usage("T", "must be >= 1"));
        }
        let seed = num("seed", get("seed").unwrap_or("0"))?;
        let x0 = get("x0")
            .map(|v| v.split(',').map(|p| num::<f64>("x0", p)).collect::<Result<Vec<_>>>())
            .transpose()?;
        let project = get("project").map(|v| parse_bool("project", v)).transpose()?.unwrap_or(true);
        let batch_size: usize = num("batch_size", get("batch_size").unwrap_or("128"))?;
        if batch_size == 0 {
            return Err(Error::usage("batch_size", "must be >= 1"));
        }
        let record_every = match get("record_every") {
            Some(v) => num("record_every", v)?,
            None if steps > 10_000 => 100,
            None => 1,
        };
        if record_every == 0 {
            return Err(Error::usage("record_every", "must be >= 1"));
        }
        let output = resolve_output(
            get("output").unwrap_or(&format!("{}_{}.csv", sanitize(&scenario_text), optimizer.name())),
        );
        let trace = get("trace").map(resolve_output);
        if trace.is_some() && scenario.is_erm() {
            return Err(Error::usage("trace", "gradient traces are only written for linear scenarios"));
        }
        Ok(RunConfig {
            scenario_text,
            scenario,
            optimizer,
            schedule: s,
            steps,
            seed,
            x0,
            project,
            batch_size,
            record_every,
            output,
            trace,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunResult {
    pub optimizer: String,
    /// `x_{T+1}`; omitted from summaries for ERM parameter vectors.
    #[serde(skip)]
    pub final_x: Vec<f64>,
    pub regret: Option<f64>,
    pub avg_regret: Option<f64>,
    pub final_loss: Option<f64>,
    pub gamma_violations: u64,
    pub wall_time_s: f64,
    pub csv_path: PathBuf,
}

/// Rows of a run, kept for `compare`.
#[derive(Debug, Clone, PartialEq)]
enum Rows {
    Linear(Vec<TraceRow>),
    Erm(Vec<(u64, f64)>),
}

fn x0_for(cfg: &RunConfig, dim: usize) -> Result<RealVec> {
    let v = match &cfg.x0 {
        None => vec![1.0; dim],
        Some(v) if v.len() == 1 => vec![v[0]; dim],
        Some(v) if v.len() == dim => v.clone(),
        Some(v) => return Err(Error::usage("x0", format!("expected 1 or {dim} values, got {}", v.len()))),
    };
    RealVec::new(v).map_err(|e| Error::usage("x0", e.to_string()))
}

fn write_file(path: &Path, body: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(body.as_bytes())?;
    w.flush()?;
    Ok(())
}

fn linear_csv(rows: &[TraceRow], d: usize) -> String {
    let mut out = String::from("t");
    for i in 0..d {
        let _ = write!(out, ",x_{i}");
    }
    out.push_str(",loss,cum_regret,avg_regret\n");
    for r in rows {
        let _ = write!(out, "{}", r.t);
        for x in &r.x {
            let _ = write!(out, ",{}", fmt_f64(*x));
        }
        let _ = writeln!(out, ",{},{},{}", fmt_f64(r.loss), fmt_f64(r.cum_regret), fmt_f64(r.avg_regret));
    }
    out
}

fn erm_csv(trace: &[(u64, f64)]) -> String {
    let mut out = String::from("step,train_loss\n");
    for (s, l) in trace {
        let _ = writeln!(out, "{s},{}", fmt_f64(*l));
    }
    out
}

fn moment_csv(grads: &[RealVec], moments: &[RealVec]) -> String {
    let d = grads.first().map_or(0, RealVec::len);
    let mut out = String::from("t");
    for i in 0..d {
        let _ = write!(out, ",g_{i}");
    }
    for i in 0..d {
        let _ = write!(out, ",v_{i}");
    }
    out.push('\n');
    for (k, (g, v)) in grads.iter().zip(moments).enumerate() {
        let _ = write!(out, "{}", k + 1);
        for x in g.iter().chain(v.iter()) {
            let _ = write!(out, ",{}", fmt_f64(*x));
        }
        out.push('\n');
    }
    out
}

fn execute(cfg: &RunConfig) -> Result<(RunResult, Rows)> {
    let start = Instant::now();
    if cfg.scenario.is_erm() {
        let data = cfg.scenario.dataset(cfg.seed)?;
        let mut sampler = MinibatchSampler::new(cfg.seed, cfg.batch_size)?;
        let tc = TrainConfig {
            kind: cfg.optimizer,
            schedule: cfg.schedule,
            steps: cfg.steps,
            eval_every: cfg.record_every,
        };
        let out = train(&data, &mut sampler, &tc, None)?;
        write_file(&cfg.output, &erm_csv(&out.trace))?;
        let result = RunResult {
            optimizer: cfg.optimizer.name().into(),
            final_x: out.params.to_flat().into_inner(),
            regret: None,
            avg_regret: None,
            final_loss: out.trace.last().map(|r| r.1),
            gamma_violations: out.gamma_violations,
            wall_time_s: start.elapsed().as_secs_f64(),
            csv_path: cfg.output.clone(),
        };
        return Ok((result, Rows::Erm(out.trace)));
    }

    let sc = cfg.scenario.linear(cfg.seed)?;
    let x0 = x0_for(cfg, sc.dim())?;
    let opts = TraceOptions {
        record_every: cfg.record_every,
        project: cfg.project,
        keep_grads: cfg.trace.is_some(),
        keep_moments: cfg.trace.is_some(),
        keep_denominators: false,
    };
    let run = simulate(&sc, cfg.optimizer, &cfg.schedule, &x0, cfg.steps, &opts)?;
    write_file(&cfg.output, &linear_csv(&run.rows, sc.dim()))?;
    if let Some(path) = &cfg.trace {
        write_file(path, &moment_csv(&run.grads, &run.moments))?;
    }
    let result = RunResult {
        optimizer: cfg.optimizer.name().into(),
        final_x: run.final_x.into_inner(),
        regret: Some(run.regret),
        avg_regret: Some(run.avg_regret),
        final_loss: run.rows.last().map(|r| r.loss),
        gamma_violations: run.gamma_violations,
        wall_time_s: start.elapsed().as_secs_f64(),
        csv_path: cfg.output.clone(),
    };
    Ok((result, Rows::Linear(run.rows)))
}

/// Executes one configured run and writes its CSV.
pub fn run(cfg: &RunConfig) -> Result<RunResult> {
    execute(cfg).map(|(r, _)| r)
}

fn summary_json(r: &RunResult) -> String {
    let mut v = serde_json::to_value(r).expect("serializable");
    if r.final_x.len() <= 16 {
        v["final_x"] = serde_json::json!(r.final_x);
    } else {
        v["final_x_len"] = serde_json::json!(r.final_x.len());
    }
    v.to_string()
}

/// Runs every config (in parallel) and writes one aligned CSV to `output`.
///
/// Column groups are labelled `<index>_<optimizer>`; summary rows follow in
/// config order.
pub fn compare(cfgs: &[RunConfig], output: &Path) -> Result<Vec<RunResult>> {
    if cfgs.len() < 2 {
        return Err(Error::usage("configs", "compare needs at least two configs"));
    }
    let first = &cfgs[0];
    for c in &cfgs[1..] {
        if c.scenario != first.scenario || c.steps != first.steps || c.record_every != first.record_every {
            return Err(Error::usage(
                "scenario",
                "compared configs must share scenario, T and record_every",
            ));
        }
    }
    let outs: Vec<(RunResult, Rows)> = cfgs.par_iter().map(execute).collect::<Result<_>>()?;
    let labels: Vec<String> = cfgs.iter().enumerate().map(|(i, c)| format!("{i}_{}", c.optimizer.name())).collect();

    let mut csv = String::new();
    match &outs[0].1 {
        Rows::Linear(rows0) => {
            let d = rows0.first().map_or(1, |r| r.x.len());
            csv.push('t');
            for l in &labels {
                for i in 0..d {
                    let _ = write!(csv, ",{l}.x_{i}");
                }
                let _ = write!(csv, ",{l}.loss,{l}.cum_regret,{l}.avg_regret");
            }
            csv.push('\n');
            for (j, r0) in rows0.iter().enumerate() {
                let _ = write!(csv, "{}", r0.t);
                for (_, rows) in &outs {
                    let Rows::Linear(rows) = rows else { unreachable!("same scenario kind") };
                    let r = &rows[j];
                    for x in &r.x {
                        let _ = write!(csv, ",{}", fmt_f64(*x));
                    }
                    let _ = write!(csv, ",{},{},{}", fmt_f64(r.loss), fmt_f64(r.cum_regret), fmt_f64(r.avg_regret));
                }
                csv.push('\n');
            }
        }
        Rows::Erm(rows0) => {
            csv.push_str("step");
            for l in &labels {
                let _ = write!(csv, ",{l}.train_loss");
            }
            csv.push('\n');
            for (j, (s, _)) in rows0.iter().enumerate() {
                let _ = write!(csv, "{s}");
                for (_, rows) in &outs {
                    let Rows::Erm(rows) = rows else { unreachable!("same scenario kind") };
                    let _ = write!(csv, ",{}", fmt_f64(rows[j].1));
                }
                csv.push('\n');
            }
        }
    }
    write_file(output, &csv)?;
    Ok(outs.into_iter().map(|(r, _)| r).collect())
}

/// Text table of compare results, one row per config.
pub fn summary_table(cfgs: &[RunConfig], results: &[RunResult]) -> String {
    let mut out = String::from("index,optimizer,alpha,beta1,beta2,final_avg_regret,final_loss,final_x_0,gamma_violations\n");
    for (i, (c, r)) in cfgs.iter().zip(results).enumerate() {
        let opt = |v: Option<f64>| v.map_or_else(String::new, fmt_f64);
        let _ = writeln!(
            out,
            "{i},{},{},{},{},{},{},{},{}",
            r.optimizer,
            fmt_f64(c.schedule.alpha),
            fmt_f64(c.schedule.beta1),
            fmt_f64(c.schedule.beta2),
            opt(r.avg_regret),
            opt(r.final_loss),
            opt(r.final_x.first().copied()),
            r.gamma_violations
        );
    }
    out
}

/// Reads a `t,g_...,v_...` trace written by `run` with `trace` set.
pub fn read_moment_trace(text: &str) -> Result<(Vec<RealVec>, Vec<RealVec>)> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Format { offset: 0, msg: "empty trace".into() })?;
    let cols: Vec<&str> = header.split(',').collect();
    let d = cols.iter().filter(|c| c.starts_with("g_")).count();
    if cols.first() != Some(&"t") || d == 0 || cols.len() != 1 + 2 * d {
        return Err(Error::Format { offset: 0, msg: format!("unexpected trace header `{header}`") });
    }
    let mut offset = header.len() + 1;
    let (mut grads, mut moments) = (Vec::new(), Vec::new());
    for line in lines {
        let vals: Vec<f64> = line
            .split(',')
            .skip(1)
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Format { offset, msg: e.to_string() })?;
        if vals.len() != 2 * d {
            return Err(Error::Format { offset, msg: format!("expected {} values", 2 * d) });
        }
        grads.push(RealVec::new(vals[..d].to_vec())?);
        moments.push(RealVec::new(vals[d..].to_vec())?);
        offset += line.len() + 1;
    }
    Ok((grads, moments))
}

#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    #[arg(long)]
    scenario: Option<String>,
    #[arg(long)]
    optimizer: Option<String>,
    #[arg(long)]
    alpha: Option<String>,
    #[arg(long)]
    alpha_mode: Option<String>,
    #[arg(long)]
    beta1: Option<String>,
    #[arg(long)]
    beta1_mode: Option<String>,
    #[arg(long)]
    lambda: Option<String>,
    #[arg(long)]
    beta2: Option<String>,
    #[arg(long)]
    beta2_mode: Option<String>,
    #[arg(long)]
    epsilon: Option<String>,
    #[arg(long)]
    debias: Option<String>,
    /// Number of steps.
    #[arg(long = "T", visible_alias = "steps")]
    steps: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    x0: Option<String>,
    #[arg(long)]
    project: Option<String>,
    #[arg(long)]
    batch_size: Option<String>,
    #[arg(long)]
    record_every: Option<String>,
    #[arg(long)]
    output: Option<String>,
    #[arg(long)]
    trace: Option<String>,
}

impl ConfigArgs {
    fn overrides(&self) -> BTreeMap<String, String> {
        let pairs = [
            ("scenario", &self.scenario),
            ("optimizer", &self.optimizer),
            ("alpha", &self.alpha),
            ("alpha_mode", &self.alpha_mode),
            ("beta1", &self.beta1),
            ("beta1_mode", &self.beta1_mode),
            ("lambda", &self.lambda),
            ("beta2", &self.beta2),
            ("beta2_mode", &self.beta2_mode),
            ("epsilon", &self.epsilon),
            ("debias", &self.debias),
            ("T", &self.steps),
            ("seed", &self.seed),
            ("x0", &self.x0),
            ("project", &self.project),
            ("batch_size", &self.batch_size),
            ("record_every", &self.record_every),
            ("output", &self.output),
            ("trace", &self.trace),
        ];
        pairs
            .into_iter()
            .filter_map(|(k, v)| v.as_ref().map(|v| (k.to_string(), v.clone())))
            .collect()
    }
}

fn load_map(file: Option<&Path>, args: &ConfigArgs) -> Result<BTreeMap<String, String>> {
    let mut map = match file {
        Some(p) => parse_config_text(&fs::read_to_string(p)?)?,
        None => BTreeMap::new(),
    };
    map.extend(args.overrides());
    Ok(map)
}

#[derive(Debug, Parser)]
#[command(name = "amsgrad", version, about = "Adaptive optimizer experiments: runs, comparisons and checks")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one optimizer on one scenario and write a CSV trace.
    Run {
        /// Flat `key = value` config file.
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Run several configs on a shared scenario and write an aligned CSV.
    ///
    /// Configs come from repeated `--config` files, or from one base config
    /// crossed with the comma-separated grids below.
    Compare {
        #[arg(long = "config")]
        configs: Vec<PathBuf>,
        /// Comma-separated optimizers to cross with each config.
        #[arg(long)]
        optimizers: Option<String>,
        /// Comma-separated step sizes to cross with each config.
        #[arg(long)]
        alphas: Option<String>,
        /// Comma-separated beta2 values to cross with each config.
        #[arg(long)]
        beta2s: Option<String>,
        /// Aligned CSV path.
        #[arg(long, default_value = "compare.csv")]
        compare_output: String,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Run property batteries; exits nonzero iff a property fails.
    Verify {
        /// Suites to run: gamma, bounds, lemmas, conditions, equivalences, all.
        #[arg(default_value = "all")]
        suites: Vec<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Smallest even C satisfying the period conditions for (beta1, beta2).
    FindC {
        #[arg(long)]
        beta1: f64,
        #[arg(long)]
        beta2: f64,
        #[arg(long, default_value_t = DEFAULT_C_MAX)]
        c_max: u64,
    },
    /// Evaluate the AMSGrad or AdamNc regret bound on a saved trace.
    CheckBound {
        /// Trace CSV written by `run` with `--trace`.
        #[arg(long = "input")]
        input: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Defaults to the scenario's box diameter.
        #[arg(long)]
        d_inf: Option<f64>,
        /// Defaults to the largest gradient entry in the trace.
        #[arg(long)]
        g_inf: Option<f64>,
        /// Use the closed-form momentum term for exponentially decaying beta1.
        #[arg(long)]
        geometric: bool,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
}

fn split_list(s: &Option<String>) -> Vec<Option<String>> {
    match s {
        Some(s) => s.split(',').map(|v| Some(v.trim().to_string())).collect(),
        None => vec![None],
    }
}

fn dispatch(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Run { config, cfg } => {
            let rc = RunConfig::from_map(&load_map(config.as_deref(), &cfg)?)?;
            let r = run(&rc)?;
            println!("{}", summary_json(&r));
            Ok(0)
        }
        Command::Compare { configs, optimizers, alphas, beta2s, compare_output, cfg } => {
            let files: Vec<Option<&Path>> = if configs.is_empty() {
                vec![None]
            } else {
                configs.iter().map(|p| Some(p.as_path())).collect()
            };
            let mut rcs = Vec::new();
            for f in files {
                let base = load_map(f, &cfg)?;
                for o in split_list(&optimizers) {
                    for a in split_list(&alphas) {
                        for b in split_list(&beta2s) {
                            let mut m = base.clone();
                            for (k, v) in [("optimizer", &o), ("alpha", &a), ("beta2", &b)] {
                                if let Some(v) = v {
                                    m.insert(k.into(), v.clone());
                                }
                            }
                            if !m.contains_key("output") {
                                m.insert("output".into(), format!("compare_{}.csv", rcs.len()));
                            }
                            rcs.push(RunConfig::from_map(&m)?);
                        }
                    }
                }
            }
            let results = compare(&rcs, &resolve_output(&compare_output))?;
            print!("{}", summary_table(&rcs, &results));
            Ok(0)
        }
        Command::Verify { suites, seed } => {
            let mut chosen = Vec::new();
            for s in &suites {
                if s.eq_ignore_ascii_case("all") {
                    chosen.extend(Suite::ALL);
                } else {
                    chosen.push(s.parse::<Suite>()?);
                }
            }
            let budget = Budget::default();
            let results: Vec<_> = chosen.par_iter().flat_map(|s| run_suite(*s, seed, &budget)).collect();
            let mut failed = false;
            for r in &results {
                failed |= !r.passed;
                println!("{}", serde_json::to_string(r).expect("serializable"));
            }
            Ok(if failed { 1 } else { 0 })
        }
        Command::FindC { beta1, beta2, c_max } => {
            let c = find_thm2_c(beta1, beta2, c_max)?;
            let check = check_thm2_conditions(beta1, beta2, c)?;
            println!(
                "{}",
                serde_json::json!({ "beta1": beta1, "beta2": beta2, "C": c, "slacks": check.slacks })
            );
            Ok(0)
        }
        Command::CheckBound { input, config, d_inf, g_inf, geometric, cfg } => {
            let rc = RunConfig::from_map(&load_map(config.as_deref(), &cfg)?)?;
            let (grads, moments) = read_moment_trace(&fs::read_to_string(&input)?)?;
            let d_inf = match d_inf {
                Some(d) => d,
                None => rc.scenario.linear(rc.seed)?.bx().diameter(),
            };
            let g_inf = g_inf.unwrap_or_else(|| {
                grads.iter().flat_map(|g| g.iter().map(|x| x.abs())).fold(0.0, f64::max)
            });
            let rep = match rc.optimizer {
                OptimizerKind::AmsGrad => {
                    let mode = if geometric { MomentumTerm::GeometricDecay } else { MomentumTerm::Exact };
                    amsgrad_bound(d_inf, g_inf, &rc.schedule, &grads, &moments, mode)?
                }
                OptimizerKind::AdamNc => adamnc_bound(d_inf, g_inf, &rc.schedule, &grads, &moments)?,
                other => return Err(Error::usage("optimizer", format!("no regret bound for {other}"))),
            };
            println!("{}", serde_json::to_string_pretty(&rep).expect("serializable"));
            Ok(0)
        }
    }
}

/// Entry point; returns the process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Usage { .. } => 2,
                _ => 1,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn scenario_parsing() {
        assert_eq!("thm1(4)".parse::<ScenarioSpec>().unwrap(), ScenarioSpec::Thm1 { c: 4.0 });
        assert_eq!(
            "thm3(C=512, delta=0.05)".parse::<ScenarioSpec>().unwrap(),
            ScenarioSpec::Thm3 { c: 512.0, delta: 0.05 }
        );
        assert_eq!(
            "erm_synthetic(n=10,p=2,k=2,margin=3)".parse::<ScenarioSpec>().unwrap(),
            ScenarioSpec::ErmSynthetic { n: 10, p: 2, k: 2, margin: 3.0 }
        );
        assert!("thm9(1)".parse::<ScenarioSpec>().is_err());
        assert!("thm1".parse::<ScenarioSpec>().is_err());
    }

    #[test]
    fn config_text_and_defaults() {
        let m = parse_config_text("# thm1 baseline\nscenario = thm1(4)\noptimizer = adam\nT = 30000\n").unwrap();
        let rc = RunConfig::from_map(&m).unwrap();
        assert_eq!(rc.optimizer, OptimizerKind::Adam);
        assert_eq!(rc.schedule.beta2, 1.0 / 17.0);
        assert_eq!(rc.schedule.alpha, 0.5);
        assert_eq!(rc.record_every, 100);
        assert!(parse_config_text("nonsense").is_err());
        assert!(parse_config_text("colour = red").is_err());
    }

    #[test]
    fn usage_errors_name_the_field() {
        let field = |m| match RunConfig::from_map(&m) {
            Err(Error::Usage { field, .. }) => field,
            other => panic!("expected usage error, got {other:?}"),
        };
        assert_eq!(field(map(&[("T", "0")])), "T");
        assert_eq!(field(map(&[("beta1_mode", "exp_decay")])), "lambda");
        assert_eq!(field(map(&[("alpha", "fast")])), "alpha");
        assert_eq!(field(map(&[("optimizer", "lbfgs")])), "optimizer");
        assert_eq!(field(map(&[("beta2", "1.5")])), "schedule");
    }

    #[test]
    fn float_format_has_seventeen_digits() {
        assert_eq!(fmt_f64(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt_f64(1.0), "1.0000000000000000e0");
        assert_eq!(fmt_f64(f64::INFINITY), "inf");
    }

    #[test]
    fn moment_trace_round_trip() {
        let g = vec![RealVec::new(vec![1.0, -0.5]).unwrap(), RealVec::new(vec![0.25, 2.0]).unwrap()];
        let v = vec![RealVec::new(vec![0.5, 0.125]).unwrap(), RealVec::new(vec![0.5, 2.0]).unwrap()];
        let (g2, v2) = read_moment_trace(&moment_csv(&g, &v)).unwrap();
        assert_eq!((g2, v2), (g, v));
        assert!(read_moment_trace("t,a\n1,2\n").is_err());
    }
}
