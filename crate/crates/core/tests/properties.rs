//! Property tests over random inputs.

mod common;

use std::path::Path;

use accelat_core::accelat::{run_trace, AccelAtConfig};
use accelat_core::attacks::{fgsm, pgd_linf, AttackSpec};
use accelat_core::config::ConfigFile;
use accelat_core::data::{parse_cifar_binary, parse_idx_images, parse_idx_labels, CifarVariant};
use accelat_core::lr_finder::{select_lr_bounds, Ema, SweepConfig, SweepRecord, SweepSample};
use accelat_core::matrix::Matrix;
use accelat_core::nn::{loss_and_grads, Batch};
use accelat_core::runlog::{EpochRow, RunLog};
use accelat_core::schedule::{ScheduleKind, ScheduleSpec};
use common::{cifar_record, idx_images, idx_labels, linear_net, random_batch, random_net, reference_accelat};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn kind_strategy() -> impl Strategy<Value = ScheduleKind> {
    prop_oneof![
        Just(ScheduleKind::Constant),
        (0.0..0.5f64, 0.5..1.0f64, 0.3..1.0f64).prop_map(|(a, b, f)| ScheduleKind::ThreeStep {
            boundaries: [a, b],
            factor: f
        }),
        Just(ScheduleKind::LinearDecay),
        Just(ScheduleKind::ExponentialDecay),
        Just(ScheduleKind::OneCycle),
        (0.01..0.5f64).prop_map(|s| ScheduleKind::CyclicalTriangular { step_size: s }),
        (0.01..0.5f64, 0.1..1.0f64).prop_map(|(s, g)| ScheduleKind::CyclicalDecreasingMax { step_size: s, gamma: g }),
        (0.01..0.5f64, 1.0..3.0f64).prop_map(|(t0, m)| ScheduleKind::WarmRestartCosine { t0, t_mult: m }),
        (0.01..0.5f64, 0.1..1.0f64).prop_map(|(p, d)| ScheduleKind::WarmRestartLinear { period: p, decay: d }),
    ]
}

/// Kind parameters above are fractions of the horizon; scale them to steps
/// (at least one step where validation requires it).
fn to_steps(kind: ScheduleKind, total: f64) -> ScheduleKind {
    let s = |f: f64| (f * total).max(1.0);
    match kind {
        ScheduleKind::ThreeStep { boundaries: [a, b], factor } => ScheduleKind::ThreeStep {
            boundaries: [a * total, b * total],
            factor,
        },
        ScheduleKind::CyclicalTriangular { step_size } => ScheduleKind::CyclicalTriangular { step_size: s(step_size) },
        ScheduleKind::CyclicalDecreasingMax { step_size, gamma } => ScheduleKind::CyclicalDecreasingMax {
            step_size: s(step_size),
            gamma,
        },
        ScheduleKind::WarmRestartCosine { t0, t_mult } => ScheduleKind::WarmRestartCosine { t0: s(t0), t_mult },
        ScheduleKind::WarmRestartLinear { period, decay } => ScheduleKind::WarmRestartLinear {
            period: s(period),
            decay,
        },
        k => k,
    }
}

proptest! {
    #[test]
    fn schedules_stay_in_bounds_and_are_pure(
        kind in kind_strategy(),
        lr_max in 1e-3..1.0f64,
        ratio in 1e-3..1.0f64,
        total in 10usize..5000,
        frac in prop::collection::vec(0.0..=1.0f64, 1..50),
    ) {
        let kind = to_steps(kind, total as f64);
        let lr_min = match kind {
            // keep the three-step floor above lr_min
            ScheduleKind::ThreeStep { factor, .. } => lr_max * factor * factor * ratio,
            _ => lr_max * ratio,
        };
        let spec = ScheduleSpec::new(kind, lr_max, lr_min, total).unwrap();
        let floor = lr_min.min(lr_max / 1000.0);
        for f in frac {
            let t = f * total as f64;
            let p = spec.point(t).unwrap();
            prop_assert!(p.lr >= floor * (1.0 - 1e-12) && p.lr <= lr_max * (1.0 + 1e-12),
                "{:?} t={} lr={}", kind, t, p.lr);
            prop_assert_eq!(p, spec.point(t).unwrap());
        }
    }

    #[test]
    fn one_cycle_momentum_moves_against_lr(
        total in 100usize..100_000,
        lr_max in 1e-3..1.0f64,
        a in 0.0..0.9f64,
        b in 0.0..0.9f64,
    ) {
        prop_assume!((a - b).abs() > 1e-6);
        let spec = ScheduleSpec::new(ScheduleKind::OneCycle, lr_max, lr_max / 1000.0, total).unwrap();
        let (t1, t2) = (a.min(b) * total as f64, a.max(b) * total as f64);
        // compare only within one ramp of the triangle
        let peak = 0.45 * total as f64;
        prop_assume!((t2 <= peak) || (t1 >= peak));
        let (p1, p2) = (spec.point(t1).unwrap(), spec.point(t2).unwrap());
        let (dl, dm) = (p2.lr - p1.lr, p2.momentum - p1.momentum);
        prop_assert!(dl != 0.0 && dm != 0.0);
        prop_assert!(dl.signum() == -dm.signum(), "dl={} dm={}", dl, dm);
    }

    #[test]
    fn cosine_restarts_continuous_within_runs_and_jump_at_restarts(
        t0 in 5.0..50.0f64,
        t_mult in 1.0..2.5f64,
        hi in 0.01..1.0f64,
        ratio in 0.001..0.5f64,
        u in 0.0..1.0f64,
    ) {
        let lo = hi * ratio;
        let total = 1000usize;
        let spec = ScheduleSpec::new(ScheduleKind::WarmRestartCosine { t0, t_mult }, hi, lo, total).unwrap();
        let mut boundaries = vec![0.0];
        let mut len = t0;
        while *boundaries.last().unwrap() + len < total as f64 {
            let next = boundaries.last().unwrap() + len;
            boundaries.push(next);
            len *= t_mult;
        }
        let h = 1e-6;
        // continuity at a random interior point
        let t = u * (total as f64 - 1.0);
        if boundaries.iter().all(|&b| (t - b).abs() > 2.0 * h && (t + h - b).abs() > 2.0 * h) {
            let d = (spec.lr(t + h).unwrap() - spec.lr(t).unwrap()).abs();
            prop_assert!(d <= (hi - lo) * std::f64::consts::PI / t0 * h * 1.01);
        }
        // every restart jumps from near lo back to hi
        for &b in &boundaries[1..] {
            let before = spec.lr(b - 1e-6).unwrap();
            let after = spec.lr(b + 1e-6).unwrap();
            prop_assert!(hi - after <= 1e-6 * (hi - lo));
            prop_assert!(before - lo <= 1e-6 * (hi - lo));
        }
    }

    #[test]
    fn accelat_ladder_matches_reference(
        lr_max in 1e-4..1.0f64,
        ratio in 0.0001..1.0f64,
        delta in 0.0..0.05f64,
        p in 0.1..=1.0f64,
        n in 1usize..15,
        accs in prop::collection::vec(0.0..=1.0f64, 0..120),
    ) {
        let lr_min = lr_max * ratio;
        let decisions = run_trace(AccelAtConfig::new(lr_max, lr_min, delta, p, n), &accs).unwrap();
        let lrs: Vec<f64> = decisions.iter().map(|d| d.lr).collect();
        prop_assert_eq!(&lrs, &reference_accelat(lr_max, lr_min, delta, p, n, &accs));
        let mut prev = lr_max;
        let mut reductions = 0usize;
        for &lr in &lrs {
            prop_assert!(lr >= lr_min && lr <= lr_max);
            prop_assert!(lr == prev || lr == prev * p || lr == lr_min);
            if lr < prev {
                reductions += 1;
            }
            prev = lr;
        }
        if p < 1.0 && lr_min < lr_max {
            let bound = ((lr_min / lr_max).ln() / p.ln()).ceil() as usize;
            prop_assert!(reductions <= bound);
        }
    }

    #[test]
    fn ema_without_momentum_is_identity(xs in prop::collection::vec(-1e6..1e6f64, 1..100)) {
        let mut ema = Ema::new(0.0);
        for x in xs {
            prop_assert_eq!(ema.push(x), x);
        }
    }

    #[test]
    fn ema_of_constant_is_constant(c in -1e3..1e3f64, beta in 0.0..0.999f64, n in 1usize..200) {
        let mut ema = Ema::new(beta);
        for _ in 0..n {
            let v = ema.push(c);
            prop_assert!((v - c).abs() <= 1e-9 * c.abs().max(1.0));
        }
    }

    #[test]
    fn sweep_lrs_increase_geometrically(
        lr_start in 1e-10..1e-3f64,
        decades in 1.0..12.0f64,
        steps in 1usize..2000,
    ) {
        let lr_end = lr_start * 10f64.powf(decades);
        let cfg = SweepConfig { lr_start, lr_end, steps, ..SweepConfig::default() };
        prop_assert_eq!(cfg.lr_at(0), lr_start);
        let mut prev = 0.0;
        for i in 0..steps {
            let lr = cfg.lr_at(i);
            prop_assert!(lr > prev);
            let expected = lr_start * (lr_end / lr_start).powf(i as f64 / steps as f64);
            prop_assert!((lr - expected).abs() <= 1e-12 * expected);
            prev = lr;
        }
    }

    #[test]
    fn bounds_sit_one_decade_below_the_minimum(
        steps in 50usize..600,
        min_frac in 0.3..0.9f64,
        depth in 0.2..0.9f64,
    ) {
        let cfg = SweepConfig { lr_start: 1e-7, lr_end: 10.0, steps, ..SweepConfig::default() };
        let argmin = (min_frac * steps as f64) as usize;
        let samples: Vec<SweepSample> = (0..steps)
            .map(|i| {
                let x = (i as f64 - argmin as f64) / steps as f64;
                let loss = 1.0 - depth * (-(x * x) * 40.0).exp();
                SweepSample { lr: cfg.lr_at(i), raw_loss: loss, smoothed_loss: loss, accuracy: 0.0 }
            })
            .collect();
        let record = SweepRecord { samples, lr_start: 1e-7, lr_end: 10.0, beta: 0.0, diverged: false };
        if let Ok(b) = select_lr_bounds(&record) {
            prop_assert_eq!(b.lr_at_min, cfg.lr_at(argmin));
            prop_assert_eq!(b.lr_max, cfg.lr_at(argmin) * 0.1);
            prop_assert!(b.lr_min_cyclical < b.lr_max);
        }
    }

    #[test]
    fn attacks_stay_in_ball_and_range(
        seed in any::<u64>(),
        eps in 0.0..0.5f64,
        steps in 1usize..8,
        random_start in any::<bool>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = random_net(&mut rng, &[4, 8, 3]);
        let batch = random_batch(&mut rng, 6, 4, 3);
        let alpha = (eps / 4.0).max(1e-6);
        let outs = [
            fgsm(&net, &batch, &AttackSpec::fgsm(eps)).unwrap(),
            pgd_linf(&net, &batch, &AttackSpec::pgd_with(eps, alpha, steps, random_start), &mut rng).unwrap(),
        ];
        for out in outs {
            for (&a, &x) in out.as_slice().iter().zip(batch.inputs.as_slice()) {
                prop_assert!((a - x).abs() <= eps + 1e-12);
                prop_assert!((0.0..=1.0).contains(&a));
            }
        }
    }

    #[test]
    fn pgd_loss_at_least_fgsm_on_linear_nets(
        w in prop::collection::vec(-2.0..2.0f64, 6),
        x in prop::collection::vec(0.0..1.0f64, 3),
        label in 0usize..2,
        eps in 0.01..0.3f64,
        steps in 1usize..12,
    ) {
        let net = linear_net(&[&w[..3], &w[3..]], &[0.0, 0.0]);
        let batch = Batch::new(Matrix::from_vec(1, 3, x).unwrap(), vec![label], 2).unwrap();
        let alpha = eps / steps as f64 * 1.5;
        let f = fgsm(&net, &batch, &AttackSpec::fgsm(eps)).unwrap();
        let p = pgd_linf(&net, &batch, &AttackSpec::pgd_with(eps, alpha, steps, false), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let loss = |m: Matrix| loss_and_grads(&net, &Batch::new(m, vec![label], 2).unwrap()).unwrap().loss;
        prop_assert!(loss(p) >= loss(f) - 1e-12);
    }

    #[test]
    fn idx_round_trip(
        (n, rows, cols, pixels) in (0u32..6, 1u32..5, 1u32..5).prop_flat_map(|(n, r, c)| {
            (Just(n), Just(r), Just(c), prop::collection::vec(any::<u8>(), (n * r * c) as usize))
        }),
        labels in prop::collection::vec(0u8..10, 0..6),
    ) {
        let path = Path::new("mem");
        let images = parse_idx_images(&idx_images(&pixels, n, rows, cols), path).unwrap();
        prop_assert_eq!((images.rows, images.cols), (rows as usize, cols as usize));
        prop_assert_eq!(images.pixels.rows(), n as usize);
        for (&v, &b) in images.pixels.as_slice().iter().zip(&pixels) {
            prop_assert_eq!(v, b as f64 / 255.0);
        }
        let encoded = accelat_core::data::encode_idx_images(&images.pixels, rows as usize, cols as usize).unwrap();
        prop_assert_eq!(encoded, idx_images(&pixels, n, rows, cols));
        let parsed = parse_idx_labels(&idx_labels(&labels), path).unwrap();
        prop_assert_eq!(parsed, labels.iter().map(|&l| l as usize).collect::<Vec<_>>());
    }

    #[test]
    fn cifar_round_trip(
        records in prop::collection::vec((0u8..20, 0u8..100, any::<u8>(), any::<u8>()), 1..4),
        hundred in any::<bool>(),
    ) {
        let variant = if hundred { CifarVariant::Cifar100 } else { CifarVariant::Cifar10 };
        let mut bytes = Vec::new();
        let mut expected_labels = Vec::new();
        let mut expected_pixels = Vec::new();
        for &(coarse, fine, a, b) in &records {
            let label = if hundred { fine } else { fine % 10 };
            let mut px = [0u8; 3072];
            for (i, p) in px.iter_mut().enumerate() {
                *p = if i % 2 == 0 { a } else { b.wrapping_add(i as u8) };
            }
            bytes.extend(cifar_record(hundred.then_some(coarse), label, &px));
            expected_labels.push(label as usize);
            expected_pixels.extend(px.iter().map(|&v| v as f64 / 255.0));
        }
        let d = parse_cifar_binary(&bytes, variant, Path::new("mem")).unwrap();
        prop_assert_eq!(d.labels, expected_labels);
        prop_assert_eq!(d.inputs.as_slice(), &expected_pixels[..]);
    }

    #[test]
    fn runlog_csv_round_trip(rows in prop::collection::vec(
        (1e-9..1.0f64, 0.0..1.0f64, 0.0..10.0f64, prop::array::uniform4(prop::option::of(0.0..=1.0f64)), any::<u32>(), any::<bool>()),
        0..30,
    )) {
        let log = RunLog {
            rows: rows.into_iter().enumerate().map(|(i, (lr, momentum, loss, acc, wall, red))| EpochRow {
                epoch: i + 1,
                lr,
                momentum,
                loss,
                acc_clean_train: acc[0],
                acc_clean_test: acc[1],
                acc_adv_train: acc[2],
                acc_adv_test: acc[3],
                wall_ms: wall as u64,
                accelat_reduced: red,
            }).collect(),
            ..RunLog::default()
        };
        let parsed = RunLog::from_csv(&log.to_csv()).unwrap();
        prop_assert_eq!(parsed.rows, log.rows);
    }

    #[test]
    fn config_parses_what_it_is_given(
        sections in prop::collection::btree_map("[a-z][a-z0-9_]{0,8}", prop::collection::btree_map("[a-z][a-z_]{0,8}", "[A-Za-z0-9_.,-]{1,12}", 0..6), 0..5),
    ) {
        let mut text = String::from("# generated\n");
        for (name, entries) in &sections {
            text.push_str(&format!("\n[experiment {name}]\n"));
            for (k, v) in entries {
                text.push_str(&format!("  {k} =  {v}\n"));
            }
        }
        let parsed = ConfigFile::parse(&text).unwrap();
        let got: Vec<_> = parsed.sections_of("experiment").collect();
        prop_assert_eq!(got.len(), sections.len());
        for (s, (name, entries)) in got.iter().zip(&sections) {
            prop_assert_eq!(s.name.as_deref(), Some(name.as_str()));
            prop_assert_eq!(s.keys().count(), entries.len());
            for (k, v) in entries {
                prop_assert_eq!(s.get(k), Some(v.as_str()));
            }
        }
    }
}
