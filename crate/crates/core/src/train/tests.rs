use super::*;

fn tiny_data() -> Vec<SketchSample> {
    generate_toy_dataset(&DatasetSpec {
        shapes_per_family: 2,
        poses_per_shape: 2,
        seed: 3,
        ..DatasetSpec::default()
    })
    .unwrap()
}

fn small_cfg(rps: bool, sd: bool) -> TrainConfig {
    TrainConfig {
        steps: 4,
        batch_size: 2,
        views_per_step: 2,
        lr: 1e-3,
        rps,
        sd,
        seed: 11,
        ..TrainConfig::default()
    }
}

#[test]
fn sample_pose_respects_ranges() {
    let dist = PoseDistribution::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..500 {
        let p = sample_pose(&dist, &mut rng);
        assert!((-20.0..40.0).contains(&p.elevation));
        assert!((0.0..360.0).contains(&p.azimuth));
    }
    let point = PoseDistribution {
        elevation: [10.0, 10.0],
        azimuth: [30.0, 30.0],
        distance: 2.0,
    };
    let p = sample_pose(&point, &mut rng);
    assert_eq!((p.elevation, p.azimuth, p.distance), (10.0, 30.0, 2.0));
    assert!(PoseDistribution { elevation: [50.0, 10.0], ..dist }.validate().is_err());
}

#[test]
fn config_validation() {
    assert!(TrainConfig::default().validate().is_ok());
    assert!(TrainConfig { views_per_step: 0, ..TrainConfig::default() }.validate().is_err());
    assert!(TrainConfig { lr: 0.0, ..TrainConfig::default() }.validate().is_err());
    assert!(TrainConfig { stage_fractions: [0.7, 0.2], ..TrainConfig::default() }.validate().is_err());
}

#[test]
fn lr_decays_stepwise() {
    let cfg = TrainConfig::default();
    assert_eq!(cfg.lr_at(0), 1e-4);
    assert_eq!(cfg.lr_at(799), 1e-4);
    assert!((cfg.lr_at(800) - 3e-5).abs() < 1e-18);
    assert!((cfg.lr_at(1600) - 9e-6).abs() < 1e-18);
}

#[test]
fn stage_schedule() {
    let cfg = TrainConfig { steps: 100, ..TrainConfig::default() };
    assert_eq!(cfg.stage_at(0), 0);
    assert_eq!(cfg.stage_at(24), 0);
    assert_eq!(cfg.stage_at(25), 1);
    assert_eq!(cfg.stage_at(59), 1);
    assert_eq!(cfg.stage_at(60), 2);
    assert_eq!(TrainConfig { sd: false, ..cfg }.stage_at(0), 2);
}

#[test]
fn baseline_total_is_sp_r_and_view() {
    let data = tiny_data();
    let mut t = Trainer::new(small_cfg(false, false)).unwrap();
    let m = t.step(&data).unwrap();
    assert_eq!(m.sd, 0.0);
    assert_eq!(m.dd, 0.0);
    assert!(m.d_loss.is_none() && m.stage.is_none());
    assert!((m.total - (m.sp + m.r + 10.0 * m.v)).abs() < 1e-12);
    assert_eq!(t.weights.discriminator_stages(), 1);
}

#[test]
fn adversarial_step_reports_discriminator() {
    let data = tiny_data();
    let mut t = Trainer::new(small_cfg(true, true)).unwrap();
    let m = t.step(&data).unwrap();
    assert_eq!(m.stage, Some(0));
    assert!(m.d_loss.unwrap().is_finite() && m.r1.unwrap() >= 0.0);
    assert!(m.sd > 0.0);
    assert!((m.total - (m.sp + m.r + 10.0 * m.v + 0.1 * m.sd)).abs() < 1e-12);
    assert!(t.weights.is_finite());
}

#[test]
fn discriminator_step_leaves_generator_unchanged() {
    let data = tiny_data();
    let mut t = Trainer::new(small_cfg(true, false)).unwrap();
    t.weights.grow_discriminator(&mut ChaCha8Rng::seed_from_u64(0));
    t.weights.grow_discriminator(&mut ChaCha8Rng::seed_from_u64(1));
    let batch: Vec<&SketchSample> = data.iter().take(2).collect();
    let (_, adv) = t.generator_step(&batch, 2).unwrap();
    let adv = adv.unwrap();
    assert_eq!(adv.real.shape(), &[4, 1, 64, 64]);
    let before = t.weights.clone();
    t.discriminator_step(&adv).unwrap();
    let mut disc_changed = false;
    for (name, p) in &t.weights.params {
        if ModelWeights::is_discriminator_param(name) {
            disc_changed |= p != &before.params[name];
        } else {
            assert_eq!(p, &before.params[name], "{name}");
        }
    }
    assert!(disc_changed);
}

#[test]
fn same_seed_same_run() {
    let data = tiny_data();
    let run = || {
        let mut t = Trainer::new(small_cfg(true, true)).unwrap();
        let m: Vec<StepMetrics> = (0..2).map(|_| t.step(&data).unwrap()).collect();
        (m, t.weights)
    };
    let (a, wa) = run();
    let (b, wb) = run();
    assert_eq!(a, b);
    assert_eq!(wa, wb);
}

#[test]
fn resume_is_bit_exact() {
    let data = tiny_data();
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("run.skf");
    let cfg = TrainConfig { steps: 4, ..small_cfg(true, true) };

    let mut full = Trainer::new(cfg.clone()).unwrap();
    let all = full.run(&data, None, None, 0).unwrap();

    let mut first = Trainer::new(TrainConfig { steps: 2, ..cfg.clone() }).unwrap();
    first.run(&data, None, Some(&ckpt), 0).unwrap();
    let mut second = Trainer::resume(cfg, &ckpt).unwrap();
    assert_eq!(second.step_index(), 2);
    let rest = second.run(&data, None, None, 0).unwrap();
    assert_eq!(&all[2..], &rest[..]);
    assert_eq!(full.weights, second.weights);
    assert_eq!(full.adam, second.adam);

    let plain = crate::nn::load_weights(&ckpt).unwrap();
    assert!(plain.params.keys().all(|k| !k.starts_with("adam.")));
}

#[test]
fn metrics_log_is_jsonl() {
    let data = tiny_data();
    let mut buf = Vec::new();
    let mut t = Trainer::new(TrainConfig { steps: 2, ..small_cfg(false, false) }).unwrap();
    t.run(&data, Some(&mut buf), None, 0).unwrap();
    let lines: Vec<StepMetrics> = String::from_utf8(buf)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[1].step, 1);
}

#[test]
fn loss_decreases_on_fixed_batch() {
    let data: Vec<SketchSample> = tiny_data().into_iter().take(1).collect();
    let cfg = TrainConfig {
        steps: 50,
        batch_size: 1,
        lr: 1e-3,
        rps: false,
        sd: false,
        supervise_at_gt: true,
        ..TrainConfig::default()
    };
    let mut t = Trainer::new(cfg).unwrap();
    let m = t.run(&data, None, None, 0).unwrap();
    let head: f64 = m[..5].iter().map(|m| m.sp).sum::<f64>() / 5.0;
    let tail: f64 = m[45..].iter().map(|m| m.sp).sum::<f64>() / 5.0;
    assert!(tail < head, "{head} -> {tail}");
    assert!(t.weights.is_finite());
}

#[test]
fn generator_gradient_matches_finite_differences() {
    let data = tiny_data();
    let cfg = TrainConfig {
        batch_size: 1,
        rps: false,
        sd: false,
        supervise_at_gt: true,
        raster: RasterParams::with_sharpness(1e-2),
        ..TrainConfig::default()
    };
    let mut t = Trainer::new(cfg).unwrap();
    let batch = [&data[0]];
    let (_, _, grads) = t.generator_pass(&batch, 0).unwrap();
    let mut checked = 0;
    let mut agree = 0;
    for (name, idx) in [("dec.fc2.b", 0), ("dec.fc2.b", 7), ("dec.fc1.b", 3), ("enc.shape_proj.b", 5), ("view_head.fc2.b", 0)] {
        let g = grads[name][idx];
        let h = 1e-5;
        let mut eval = |d: f64| {
            t.weights.params.get_mut(name).unwrap().data_mut()[idx] += d;
            let total = t.generator_pass(&batch, 0).unwrap().0.total;
            t.weights.params.get_mut(name).unwrap().data_mut()[idx] -= d;
            total
        };
        let fd = (eval(h) - eval(-h)) / (2.0 * h);
        checked += 1;
        if (fd - g).abs() <= 1e-5 + 1e-3 * fd.abs().max(g.abs()) {
            agree += 1;
        } else {
            eprintln!("{name}[{idx}]: fd {fd} vs {g}");
        }
    }
    assert_eq!(agree, checked);
}

#[test]
fn evaluate_reports_per_class_table() {
    let data = generate_toy_dataset(&DatasetSpec {
        families: vec![ShapeFamily::Chair, ShapeFamily::Lamp],
        shapes_per_family: 1,
        poses_per_shape: 2,
        ..DatasetSpec::default()
    })
    .unwrap();
    let t = Trainer::new(small_cfg(false, false)).unwrap();
    let r = evaluate(&t.weights, &data, 16).unwrap();
    assert_eq!(r.classes.len(), 2);
    assert_eq!(r.mean.count, 4);
    for m in r.classes.values().chain([&r.mean]) {
        assert!((0.0..=1.0).contains(&m.iou_gt_pose) && (0.0..=1.0).contains(&m.iou_pred_pose));
        assert!((0.0..=180.0).contains(&m.azimuth_mae));
    }
    let table = r.to_table();
    assert!(table.contains("GT Pos") && table.contains("Pred Pos") && table.contains("lamp"));
    assert!(matches!(evaluate(&t.weights, &[], 16), Err(TrainError::EmptyDataset)));
}
