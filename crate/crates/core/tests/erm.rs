use std::io::Write;

use amsgrad::erm::{
    class_means, full_loss, load_idx, load_idx_files, make_synthetic, softmax_loss_grad, train, Dataset,
    MinibatchSampler, SoftmaxParams, TrainConfig,
};
use amsgrad::numcore::RealVec;
use amsgrad::optim::{AlphaMode, OptimizerKind, Schedule};
use rand::{Rng, SeedableRng};
use rand_xoshiro::SplitMix64;

fn random_params(k: usize, p: usize, rng: &mut SplitMix64) -> SoftmaxParams {
    let flat: Vec<f64> = (0..SoftmaxParams::flat_len(k, p)).map(|_| rng.gen_range(-1.0..1.0)).collect();
    SoftmaxParams::from_flat(&RealVec::new(flat).unwrap(), k, p).unwrap()
}

#[test]
fn gradient_matches_central_differences() {
    let data = make_synthetic(60, 4, 3, 3.0, 2).unwrap();
    let rows: Vec<usize> = (0..60).step_by(3).collect();
    let mut rng = SplitMix64::seed_from_u64(9);
    let h = 1e-5;
    for _ in 0..10 {
        let params = random_params(3, 4, &mut rng);
        let (_, g) = softmax_loss_grad(&params, &data, &rows).unwrap();
        let base = params.to_flat().into_inner();
        for i in 0..base.len() {
            let mut up = base.clone();
            let mut dn = base.clone();
            up[i] += h;
            dn[i] -= h;
            let f = |v: Vec<f64>| {
                let p = SoftmaxParams::from_flat(&RealVec::new(v).unwrap(), 3, 4).unwrap();
                softmax_loss_grad(&p, &data, &rows).unwrap().0
            };
            let fd = (f(up) - f(dn)) / (2.0 * h);
            let gap = (g[i] - fd).abs() / 1f64.max(g[i].abs()).max(fd.abs());
            assert!(gap < 1e-6, "coordinate {i}: analytic {} vs fd {fd}", g[i]);
        }
    }
}

#[test]
fn loss_lies_below_its_chords() {
    let data = make_synthetic(50, 3, 4, 2.0, 4).unwrap();
    let mut rng = SplitMix64::seed_from_u64(21);
    for _ in 0..20 {
        let a = random_params(4, 3, &mut rng).to_flat();
        let b = random_params(4, 3, &mut rng).to_flat().scale(3.0).unwrap();
        let la = full_loss(&SoftmaxParams::from_flat(&a, 4, 3).unwrap(), &data).unwrap();
        let lb = full_loss(&SoftmaxParams::from_flat(&b, 4, 3).unwrap(), &data).unwrap();
        for j in 0..=10 {
            let lam = j as f64 / 10.0;
            let mid = a.scale(lam).unwrap().add(&b.scale(1.0 - lam).unwrap()).unwrap();
            let lm = full_loss(&SoftmaxParams::from_flat(&mid, 4, 3).unwrap(), &data).unwrap();
            assert!(lm <= lam * la + (1.0 - lam) * lb + 1e-9, "lambda {lam}: {lm}");
        }
    }
}

fn idx_bytes(images: &[[u8; 4]], labels: &[u8]) -> (Vec<u8>, Vec<u8>) {
    let mut img = Vec::new();
    for v in [0x0803u32, images.len() as u32, 2, 2] {
        img.extend_from_slice(&v.to_be_bytes());
    }
    for im in images {
        img.extend_from_slice(im);
    }
    let mut lbl = Vec::new();
    for v in [0x0801u32, labels.len() as u32] {
        lbl.extend_from_slice(&v.to_be_bytes());
    }
    lbl.extend_from_slice(labels);
    (img, lbl)
}

#[test]
fn idx_files_load_plain_and_gzipped() {
    let (img, lbl) = idx_bytes(&[[0, 255, 51, 102], [255, 0, 0, 0], [1, 2, 3, 4]], &[2, 0, 1]);
    let dir = tempfile::tempdir().unwrap();
    let plain = (dir.path().join("img"), dir.path().join("lbl"));
    std::fs::write(&plain.0, &img).unwrap();
    std::fs::write(&plain.1, &lbl).unwrap();
    let gz = (dir.path().join("img.gz"), dir.path().join("lbl.gz"));
    for (bytes, path) in [(&img, &gz.0), (&lbl, &gz.1)] {
        let mut enc = flate2::write::GzEncoder::new(std::fs::File::create(path).unwrap(), flate2::Compression::default());
        enc.write_all(bytes).unwrap();
        enc.finish().unwrap();
    }
    let a = load_idx_files(&plain.0, &plain.1).unwrap();
    let b = load_idx_files(&gz.0, &gz.1).unwrap();
    assert_eq!(a, b);
    assert_eq!((a.n(), a.p(), a.k()), (3, 4, 3));
    assert_eq!(a.row(0), &[0.0, 1.0, 0.2, 0.4]);
    assert_eq!(a.labels(), &[2, 0, 1]);
}

#[test]
fn truncated_idx_is_rejected() {
    let (img, lbl) = idx_bytes(&[[0, 0, 0, 0], [1, 1, 1, 1]], &[0, 1]);
    assert!(load_idx(&img[..img.len() - 1], &lbl).is_err());
    assert!(load_idx(&img, &lbl[..lbl.len() - 1]).is_err());
    let (_, short) = idx_bytes(&[[0, 0, 0, 0]], &[0]);
    assert!(load_idx(&img, &short).is_err());
}

fn train_once(data: &Dataset) -> Vec<(u64, f64)> {
    let s = Schedule::new(0.01, 0.9, 0.999).with_alpha_mode(AlphaMode::Constant);
    let cfg = TrainConfig { kind: OptimizerKind::AmsGrad, schedule: s, steps: 300, eval_every: 50 };
    let mut sampler = MinibatchSampler::new(11, 32).unwrap();
    train(data, &mut sampler, &cfg, None).unwrap().trace
}

#[test]
fn training_is_deterministic_and_decreases_loss() {
    let data = make_synthetic(400, 6, 3, 6.0, 7).unwrap();
    let a = train_once(&data);
    let b = train_once(&data);
    assert_eq!(a, b);
    assert_eq!(a.first().unwrap().0, 0);
    assert_eq!(a.last().unwrap().0, 300);
    assert!(a.last().unwrap().1 < 0.5 * a[0].1);
}

#[test]
fn wide_margin_classes_are_separated_by_the_midpoint() {
    let (n, p, k) = (2000, 5, 2);
    let data = make_synthetic(n, p, k, 10.0, 3).unwrap();
    let means = class_means(p, k, 10.0);
    let (m0, m1) = means.split_at(p);
    let d2 = |x: &[f64], m: &[f64]| x.iter().zip(m).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    let correct = (0..n)
        .filter(|&i| {
            let x = data.row(i);
            let guess = if d2(x, m0) <= d2(x, m1) { 0 } else { 1 };
            guess == data.label(i)
        })
        .count();
    assert!(correct as f64 >= 0.99 * n as f64, "{correct} / {n}");
    let gap: f64 = d2(m0, m1).sqrt();
    assert!((gap - 10.0).abs() < 1e-12);
}
