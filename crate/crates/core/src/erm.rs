//! Minibatch softmax regression: datasets, IDX ingestion and training.

use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_xoshiro::SplitMix64;

use crate::error::{Error, Result};
use crate::numcore::{BoxSet, RealVec};
use crate::optim::{GammaMonitor, Optimizer, OptimizerKind, Schedule};

/// `n` examples of `p` features, row-major, with labels in `[0, k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    p: usize,
    k: usize,
}

impl Dataset {
    pub fn new(features: Vec<f64>, labels: Vec<usize>, p: usize, k: usize) -> Result<Self> {
        if labels.is_empty() || p == 0 || k == 0 {
            return Err(Error::Parameter("n, p and k must be positive".into()));
        }
        if features.len() != labels.len() * p {
            return Err(Error::Dimension { expected: labels.len() * p, got: features.len() });
        }
        if let Some(i) = labels.iter().position(|&y| y >= k) {
            return Err(Error::Parameter(format!("label {} at row {i} is not below k = {k}", labels[i])));
        }
        if let Some(i) = features.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite { index: i });
        }
        Ok(Dataset { features, labels, p, k })
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.p..(i + 1) * self.p]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }
}

/// Uniform with-replacement minibatches from a seeded stream.
#[derive(Debug, Clone)]
pub struct MinibatchSampler {
    seed: u64,
    batch_size: usize,
    rng: SplitMix64,
}

impl MinibatchSampler {
    pub const DEFAULT_BATCH: usize = 128;

    pub fn new(seed: u64, batch_size: usize) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::Parameter("batch size must be positive".into()));
        }
        Ok(MinibatchSampler { seed, batch_size, rng: SplitMix64::seed_from_u64(seed) })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    /// Row indices of the next batch drawn from `0..n`.
    pub fn next_batch(&mut self, n: usize) -> Vec<usize> {
        (0..self.batch_size).map(|_| self.rng.gen_range(0..n)).collect()
    }
}

/// Weights (`k x p`, row-major) and biases of a linear softmax model.
///
/// The flat layout used by the optimizers is all weights followed by the
/// `k` biases, `k (p + 1)` entries in total.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxParams {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub k: usize,
    pub p: usize,
}

impl SoftmaxParams {
    pub fn zeros(k: usize, p: usize) -> Self {
        SoftmaxParams { weights: vec![0.0; k * p], bias: vec![0.0; k], k, p }
    }

    pub fn flat_len(k: usize, p: usize) -> usize {
        k * (p + 1)
    }

    pub fn from_flat(flat: &RealVec, k: usize, p: usize) -> Result<Self> {
        let want = Self::flat_len(k, p);
        if flat.len() != want {
            return Err(Error::Dimension { expected: want, got: flat.len() });
        }
        let (w, b) = flat.as_slice().split_at(k * p);
        Ok(SoftmaxParams { weights: w.to_vec(), bias: b.to_vec(), k, p })
    }

    pub fn to_flat(&self) -> RealVec {
        let mut v = self.weights.clone();
        v.extend_from_slice(&self.bias);
        RealVec::new(v).expect("parameters are finite")
    }

    fn logits(&self, x: &[f64], out: &mut [f64]) {
        for (c, z) in out.iter_mut().enumerate() {
            let w = &self.weights[c * self.p..(c + 1) * self.p];
            *z = self.bias[c] + w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
    }
}

fn check_compat(params: &SoftmaxParams, data: &Dataset) -> Result<()> {
    if params.p != data.p() || params.k != data.k() {
        return Err(Error::Contract(format!(
            "model is {}x{} but data has p = {}, k = {}",
            params.k,
            params.p,
            data.p(),
            data.k()
        )));
    }
    if params.weights.len() != params.k * params.p || params.bias.len() != params.k {
        return Err(Error::Contract("parameter buffers do not match k and p".into()));
    }
    Ok(())
}

/// Log-sum-exp with max subtraction; returns `lse` and fills `probs`.
fn softmax_into(z: &[f64], probs: &mut [f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for (pz, &zc) in probs.iter_mut().zip(z) {
        *pz = (zc - m).exp();
        s += *pz;
    }
    for pz in probs.iter_mut() {
        *pz /= s;
    }
    m + s.ln()
}

/// Mean cross-entropy over `rows` and its gradient in the flat layout.
pub fn softmax_loss_grad(params: &SoftmaxParams, data: &Dataset, rows: &[usize]) -> Result<(f64, RealVec)> {
    check_compat(params, data)?;
    if rows.is_empty() {
        return Err(Error::Contract("empty batch".into()));
    }
    if let Some(&r) = rows.iter().find(|&&r| r >= data.n()) {
        return Err(Error::Contract(format!("row {r} is out of range for n = {}", data.n())));
    }
    let (k, p) = (params.k, params.p);
    let mut grad = vec![0.0; SoftmaxParams::flat_len(k, p)];
    let mut z = vec![0.0; k];
    let mut probs = vec![0.0; k];
    let mut loss = 0.0;
    for &r in rows {
        let x = data.row(r);
        let y = data.label(r);
        params.logits(x, &mut z);
        let lse = softmax_into(&z, &mut probs);
        loss += lse - z[y];
        for c in 0..k {
            let err = probs[c] - if c == y { 1.0 } else { 0.0 };
            for (gw, xi) in grad[c * p..(c + 1) * p].iter_mut().zip(x) {
                *gw += err * xi;
            }
            grad[k * p + c] += err;
        }
    }
    let scale = 1.0 / rows.len() as f64;
    grad.iter_mut().for_each(|g| *g *= scale);
    Ok((loss * scale, RealVec::new(grad)?))
}

/// Mean cross-entropy over the whole dataset.
pub fn full_loss(params: &SoftmaxParams, data: &Dataset) -> Result<f64> {
    check_compat(params, data)?;
    let mut z = vec![0.0; params.k];
    let mut probs = vec![0.0; params.k];
    let mut loss = 0.0;
    for r in 0..data.n() {
        params.logits(data.row(r), &mut z);
        loss += softmax_into(&z, &mut probs) - z[data.label(r)];
    }
    Ok(loss / data.n() as f64)
}

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

fn maybe_gunzip(bytes: &[u8]) -> Result<Vec<u8>> {
    if bytes.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(bytes)
            .read_to_end(&mut out)
            .map_err(|e| Error::Format { offset: 0, msg: format!("gzip: {e}") })?;
        Ok(out)
    } else {
        Ok(bytes.to_vec())
    }
}

fn be_u32(buf: &[u8], offset: usize, what: &str) -> Result<u32> {
    buf.get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format { offset: buf.len(), msg: format!("truncated before {what}") })
}

/// Parses an IDX image stream and an IDX label stream (either may be
/// gzipped). Pixels are scaled by `1 / 255`; `k` is one more than the
/// largest label.
pub fn load_idx(images: &[u8], labels: &[u8]) -> Result<Dataset> {
    let images = maybe_gunzip(images)?;
    let labels = maybe_gunzip(labels)?;

    let magic = be_u32(&images, 0, "image magic")?;
    if magic != IMAGE_MAGIC {
        return Err(Error::Format { offset: 0, msg: format!("image magic {magic:#010x}, expected {IMAGE_MAGIC:#010x}") });
    }
    let n = be_u32(&images, 4, "image count")? as usize;
    let rows = be_u32(&images, 8, "row count")? as usize;
    let cols = be_u32(&images, 12, "column count")? as usize;
    let p = rows * cols;
    let body = &images[16..];
    if body.len() < n * p {
        return Err(Error::Format {
            offset: images.len(),
            msg: format!("image data truncated: need {} bytes after the header", n * p),
        });
    }

    let lmagic = be_u32(&labels, 0, "label magic")?;
    if lmagic != LABEL_MAGIC {
        return Err(Error::Format { offset: 0, msg: format!("label magic {lmagic:#010x}, expected {LABEL_MAGIC:#010x}") });
    }
    let ln = be_u32(&labels, 4, "label count")? as usize;
    if ln != n {
        return Err(Error::Format { offset: 4, msg: format!("label count {ln} differs from image count {n}") });
    }
    let lbody = &labels[8..];
    if lbody.len() < n {
        return Err(Error::Format { offset: labels.len(), msg: format!("label data truncated: need {n} bytes") });
    }
    if n == 0 || p == 0 {
        return Err(Error::Format { offset: 4, msg: "empty image set".into() });
    }

    let features = body[..n * p].iter().map(|&b| b as f64 / 255.0).collect();
    let labels: Vec<usize> = lbody[..n].iter().map(|&b| b as usize).collect();
    let k = labels.iter().max().copied().unwrap_or(0) + 1;
    Dataset::new(features, labels, p, k)
}

pub fn load_idx_files(images: &Path, labels: &Path) -> Result<Dataset> {
    load_idx(&std::fs::read(images)?, &std::fs::read(labels)?)
}

/// `k` unit-variance Gaussian blobs whose means are `margin` apart.
///
/// Means sit on scaled coordinate axes when `p >= k` and on a line
/// otherwise. Labels cycle through `0..k`.
pub fn make_synthetic(n: usize, p: usize, k: usize, margin: f64, seed: u64) -> Result<Dataset> {
    if k == 0 || p == 0 || n < k {
        return Err(Error::Parameter(format!("need n >= k >= 1 and p >= 1 (n = {n}, p = {p}, k = {k})")));
    }
    if !(margin > 0.0 && margin.is_finite()) {
        return Err(Error::Parameter(format!("margin = {margin} must be positive")));
    }
    let means = class_means(p, k, margin);
    let mut rng = SplitMix64::seed_from_u64(seed);
    let mut features = Vec::with_capacity(n * p);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let y = i % k;
        labels.push(y);
        for j in 0..p {
            let noise: f64 = rng.sample(StandardNormal);
            features.push(means[y * p + j] + noise);
        }
    }
    Dataset::new(features, labels, p, k)
}

/// Row-major `k x p` class means used by [`make_synthetic`].
pub fn class_means(p: usize, k: usize, margin: f64) -> Vec<f64> {
    let mut means = vec![0.0; k * p];
    for c in 0..k {
        if p >= k {
            means[c * p + c] = margin / std::f64::consts::SQRT_2;
        } else {
            means[c * p] = margin * c as f64;
        }
    }
    means
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub kind: OptimizerKind,
    pub schedule: Schedule,
    pub steps: u64,
    pub eval_every: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    /// `(step, full-data loss)`, starting at step 0 and ending at the last step.
    pub trace: Vec<(u64, f64)>,
    pub params: SoftmaxParams,
    pub gamma_violations: u64,
}

/// Trains from zero parameters, evaluating the full-data loss every
/// `eval_every` steps. `bx = None` trains unconstrained.
pub fn train(
    data: &Dataset,
    sampler: &mut MinibatchSampler,
    cfg: &TrainConfig,
    bx: Option<&BoxSet>,
) -> Result<TrainOutcome> {
    if cfg.steps == 0 {
        return Err(Error::usage("T", "must be >= 1"));
    }
    if cfg.eval_every == 0 {
        return Err(Error::usage("record_every", "must be >= 1"));
    }
    let (k, p) = (data.k(), data.p());
    let mut params = SoftmaxParams::zeros(k, p);
    let mut x = params.to_flat();
    if let Some(bx) = bx {
        if bx.dim() != x.len() {
            return Err(Error::Dimension { expected: x.len(), got: bx.dim() });
        }
        if !bx.contains(&x) {
            return Err(Error::usage("box", "must contain the zero parameters"));
        }
    }
    let mut opt = Optimizer::new(cfg.kind, cfg.schedule, x.len())?;
    let mut monitor = GammaMonitor::new();
    let mut trace = vec![(0, full_loss(&params, data)?)];
    for step in 1..=cfg.steps {
        let rows = sampler.next_batch(data.n());
        let (_, g) = softmax_loss_grad(&params, data, &rows)?;
        x = opt.step(&x, &g, bx)?;
        if let Some(den) = opt.state().last_denominator() {
            monitor.observe(&cfg.schedule, den);
        }
        params = SoftmaxParams::from_flat(&x, k, p)?;
        if step % cfg.eval_every == 0 || step == cfg.steps {
            trace.push((step, full_loss(&params, data)?));
        }
    }
    Ok(TrainOutcome { trace, params, gamma_violations: monitor.violations() })
}
