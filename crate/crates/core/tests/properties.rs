use amsgrad::analysis::RegretLedger;
use amsgrad::numcore::{project_weighted, BoxSet, DiagWeights, RealVec};
use amsgrad::optim::{gamma_trace, psd_violations, Beta2Mode, Optimizer, OptimizerKind, Schedule};
use amsgrad::runner::{simulate, TraceOptions};
use amsgrad::scenarios::{Scenario, TableScenario};
use proptest::prelude::*;

fn rv(v: Vec<f64>) -> RealVec {
    RealVec::new(v).unwrap()
}

fn grad_rows(dim: usize, max_len: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-10.0f64..10.0, dim), 1..max_len)
}

fn run_kind(kind: OptimizerKind, s: Schedule, grads: &[Vec<f64>], bx: Option<&BoxSet>) -> (Vec<RealVec>, Optimizer) {
    let dim = grads[0].len();
    let mut opt = Optimizer::new(kind, s, dim).unwrap();
    let mut x = RealVec::zeros(dim);
    let mut xs = vec![x.clone()];
    for g in grads {
        x = opt.step(&x, &rv(g.clone()), bx).unwrap();
        xs.push(x.clone());
    }
    (xs, opt)
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn moments_match_closed_form(
        grads in grad_rows(3, 40),
        beta1 in 0.0f64..0.99,
        beta2 in 0.01f64..0.999,
    ) {
        let s = Schedule::new(0.1, beta1, beta2);
        let (_, opt) = run_kind(OptimizerKind::Adam, s, &grads, None);
        let t = grads.len();
        for j in 0..3 {
            let mut m = 0.0;
            let mut v = 0.0;
            for (i, g) in grads.iter().enumerate() {
                let age = (t - 1 - i) as i32;
                m += (1.0 - beta1) * beta1.powi(age) * g[j];
                v += (1.0 - beta2) * beta2.powi(age) * g[j] * g[j];
            }
            let st = opt.state();
            prop_assert!((st.m[j] - m).abs() <= 1e-12 * (1.0 + m.abs()), "m[{}] {} vs {}", j, st.m[j], m);
            prop_assert!(rel_close(st.v[j], v, 1e-12) || (st.v[j] - v).abs() < 1e-300, "v[{}] {} vs {}", j, st.v[j], v);
        }
    }

    #[test]
    fn amsgrad_vhat_is_monotone_and_dominates_v(
        grads in grad_rows(2, 60),
        beta1 in 0.0f64..0.95,
        beta2 in 0.01f64..0.999,
    ) {
        let mut opt = Optimizer::new(OptimizerKind::AmsGrad, Schedule::new(0.1, beta1, beta2), 2).unwrap();
        let mut x = RealVec::zeros(2);
        let mut prev = RealVec::zeros(2);
        for g in &grads {
            x = opt.step(&x, &rv(g.clone()), None).unwrap();
            let st = opt.state();
            let vhat = st.vhat.clone().unwrap();
            for j in 0..2 {
                prop_assert!(vhat[j] >= prev[j]);
                prop_assert!(vhat[j] >= st.v[j]);
            }
            prev = vhat;
        }
    }

    #[test]
    fn iterates_stay_in_the_box(
        grads in grad_rows(3, 50),
        r in 0.1f64..5.0,
        alpha in 0.01f64..3.0,
    ) {
        let bx = BoxSet::symmetric(3, r).unwrap();
        for kind in OptimizerKind::ALL {
            let mut s = Schedule::new(alpha, 0.9, 0.99);
            if kind == OptimizerKind::AdamNc {
                s = s.with_beta2_mode(Beta2Mode::OneMinusInvT);
            }
            let (xs, _) = run_kind(kind, s, &grads, Some(&bx));
            for x in &xs {
                prop_assert!(bx.contains(x), "{} left the box: {:?}", kind, x.as_slice());
            }
        }
    }

    #[test]
    fn projection_is_idempotent_and_nonexpansive(
        y in prop::collection::vec(-20.0f64..20.0, 4),
        z in prop::collection::vec(-20.0f64..20.0, 4),
        w in prop::collection::vec(0.01f64..10.0, 4),
        r in 0.1f64..10.0,
    ) {
        let bx = BoxSet::symmetric(4, r).unwrap();
        let wts = DiagWeights::new(rv(w)).unwrap();
        let (y, z) = (rv(y), rv(z));
        let py = project_weighted(&bx, &wts, &y).unwrap();
        let pz = project_weighted(&bx, &wts, &z).unwrap();
        prop_assert!(bx.contains(&py));
        prop_assert_eq!(&project_weighted(&bx, &wts, &py).unwrap(), &py);
        prop_assert!(wts.sq_dist(&py, &pz).unwrap() <= wts.sq_dist(&y, &z).unwrap() + 1e-9);
        // Any box point is at least as far from y as the projection is.
        let probe = bx.clamp(&z).unwrap();
        prop_assert!(wts.sq_dist(&py, &y).unwrap() <= wts.sq_dist(&probe, &y).unwrap() + 1e-9);
    }

    #[test]
    fn comparator_beats_every_box_point(
        slopes in grad_rows(2, 30),
        probes in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 2), 1..20),
    ) {
        let bx = BoxSet::symmetric(2, 1.0).unwrap();
        let mut ledger = RegretLedger::new(bx.clone());
        for c in &slopes {
            ledger.record(&RealVec::zeros(2), &rv(c.clone())).unwrap();
        }
        let best = ledger.comparator_loss();
        prop_assert!(bx.contains(&ledger.comparator()));
        for p in probes {
            let p = rv(p);
            let loss: f64 = slopes.iter().map(|c| rv(c.clone()).dot(&p).unwrap()).sum();
            prop_assert!(best <= loss + 1e-9);
        }
    }

    #[test]
    fn regret_is_total_loss_minus_comparator(
        slopes in grad_rows(2, 40),
        xs in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 2), 40),
    ) {
        let bx = BoxSet::symmetric(2, 1.0).unwrap();
        let mut ledger = RegretLedger::new(bx);
        let mut total = 0.0;
        for (c, x) in slopes.iter().zip(&xs) {
            total += ledger.record(&rv(x.clone()), &rv(c.clone())).unwrap();
        }
        prop_assert_eq!(ledger.rounds(), slopes.len() as u64);
        let sum: f64 = ledger.losses().iter().sum();
        prop_assert!((sum - total).abs() <= 1e-9);
        prop_assert!((ledger.regret() - (total - ledger.comparator_loss())).abs() <= 1e-9);
        prop_assert!((ledger.avg_regret() * slopes.len() as f64 - ledger.regret()).abs() <= 1e-9);
    }

    #[test]
    fn gamma_is_psd_for_monotone_methods(
        grads in grad_rows(2, 80),
        alpha in 0.01f64..2.0,
        beta1 in 0.0f64..0.9,
        beta2 in 0.01f64..0.999,
    ) {
        let bx = BoxSet::symmetric(2, 1.0).unwrap();
        let slopes: Vec<RealVec> = grads.iter().cloned().map(rv).collect();
        let scenario = Scenario::Table(TableScenario::new(bx, slopes).unwrap());
        let opts = TraceOptions { keep_denominators: true, ..TraceOptions::default() };
        for kind in [OptimizerKind::Sgd, OptimizerKind::Adagrad, OptimizerKind::AmsGrad, OptimizerKind::AdamNc] {
            let mut s = Schedule::new(alpha, beta1, beta2);
            if kind == OptimizerKind::AdamNc {
                s = s.with_beta2_mode(Beta2Mode::OneMinusInvT);
            }
            let run = simulate(&scenario, kind, &s, &RealVec::zeros(2), grads.len() as u64, &opts).unwrap();
            prop_assert_eq!(run.gamma_violations, 0, "{}", kind);
            let gammas = gamma_trace(&s, &run.denominators).unwrap();
            prop_assert!(psd_violations(&gammas).is_empty(), "{}", kind);
        }
    }

    #[test]
    fn adam_without_momentum_is_rmsprop(
        grads in grad_rows(3, 50),
        alpha in 0.01f64..2.0,
        beta2 in 0.01f64..0.999,
    ) {
        let bx = BoxSet::symmetric(3, 1.0).unwrap();
        let s = Schedule::new(alpha, 0.0, beta2);
        let (a, _) = run_kind(OptimizerKind::Adam, s, &grads, Some(&bx));
        let (b, _) = run_kind(OptimizerKind::RmsProp, s, &grads, Some(&bx));
        prop_assert_eq!(a, b);
    }

    #[test]
    fn adamnc_with_constant_beta2_is_adam(
        grads in grad_rows(2, 50),
        beta1 in 0.0f64..0.95,
        beta2 in 0.01f64..0.999,
    ) {
        let s = Schedule::new(0.3, beta1, beta2);
        let (a, _) = run_kind(OptimizerKind::Adam, s, &grads, None);
        let (b, _) = run_kind(OptimizerKind::AdamNc, s, &grads, None);
        prop_assert_eq!(a, b);
    }
}
