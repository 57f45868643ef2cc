//! Acceptance gate: one test per criterion, so the harness prints one
//! pass/fail line each. Criteria 6-8 share a single desk-scale benchmark
//! run (6x6 grid, 8 services, 28 days, seed 7, 30 epochs) cached in a
//! OnceLock.
//!
//! Run with: cargo test --test acceptance

use std::collections::BTreeMap;
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use traffic_forecast::autodiff::{finite_diff_gradient, rel_err, Tape};
use traffic_forecast::baselines::BaselineConfig;
use traffic_forecast::checkpoint::Checkpoint;
use traffic_forecast::convlstm::S2SConfig;
use traffic_forecast::grid::{
    assignment_cost, brute_force_assign, hungarian_assign, map_antennas_to_grid, project_lonlat,
    AntennaSite,
};
use traffic_forecast::metrics::{
    evaluate, mae, nmae_per_service, psnr, ssim_set, EvalReport, PSNR_MSE_FLOOR,
};
use traffic_forecast::model::{AnyModel, ModelConfig, ModelKind, ModelParams};
use traffic_forecast::pipeline::{
    chronological_split, scatter_snapshot, synthesize_traffic, window_dataset,
    NormalizationStats, SyntheticConfig, TrafficSeries,
};
use traffic_forecast::tensor::Tensor;
use traffic_forecast::train::{train, AdamConfig, AdamState, TrainConfig};

fn tiny_grid_configs(seed: u64) -> Vec<ModelConfig> {
    // 3x3 grid, 2 services, T_in = 3, K = 2, small widths so finite
    // differences stay fast
    let mut convlstm = S2SConfig::desk(3, 3, 2, seed);
    convlstm.t_in = 3;
    convlstm.horizon = 2;
    convlstm.embed_channels = 4;
    convlstm.hidden_channels = vec![4];
    let baseline = |kind: ModelKind| {
        let mut c = BaselineConfig::desk(kind, 3, 3, 2, 3, 2, seed);
        c.depth = 2;
        c.width = 12;
        c.channels = 6;
        c.lstm_layers = 1;
        ModelConfig::Baseline(c)
    };
    vec![
        ModelConfig::ConvLstm(convlstm),
        baseline(ModelKind::Mlp),
        baseline(ModelKind::Cnn),
        baseline(ModelKind::Cnn3d),
        baseline(ModelKind::Lstm),
    ]
}

fn loss_of(config: &ModelConfig, params: &BTreeMap<String, Tensor>, input: &Tensor, target: &Tensor) -> f64 {
    let mut model = AnyModel::init(config).expect("init");
    *model.params_mut() = ModelParams::from_map(params.clone());
    let mut tape = Tape::new();
    let nodes = model.params().leaves(&mut tape);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let loss = model
        .build_loss(&mut tape, &nodes, input, target, 0.0, &mut rng, false)
        .expect("loss graph");
    tape.value(loss).scalar_value().expect("scalar loss")
}

#[test]
fn criterion_1_gradient_fidelity_all_model_kinds() {
    let mut worst = 0.0_f64;
    let mut worst_at = String::new();
    for seed in 1..=5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let mut input = Tensor::zeros(&[3, 2, 3, 3]);
        let mut target = Tensor::zeros(&[2, 2, 3, 3]);
        for v in input.data_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        for v in target.data_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        for config in tiny_grid_configs(seed) {
            let mut model = AnyModel::init(&config).expect("init");
            let mut tape = Tape::new();
            let nodes = model.params().leaves(&mut tape);
            let loss = model
                .build_loss(&mut tape, &nodes, &input, &target, 0.0, &mut rng, false)
                .expect("loss graph");
            let grads = tape.backward(loss).expect("backward");

            let base = model.params().as_map().clone();
            let mut f = |p: &BTreeMap<String, Tensor>| Ok(loss_of(&config, p, &input, &target));
            let numeric = finite_diff_gradient(&mut f, &base, 1e-4).expect("finite differences");
            for (name, node) in &nodes {
                for (a, b) in grads.get(*node).data().iter().zip(numeric[name].data()) {
                    let e = rel_err(*a, *b);
                    if e > worst {
                        worst = e;
                        worst_at = format!("{} {name} seed {seed}", config.kind());
                    }
                }
            }
        }
    }
    println!("criterion 1: max gradient relative error {worst:.3e} ({worst_at})");
    assert!(worst < 1e-4, "gradient fidelity violated: {worst:.3e} at {worst_at}");
}

/// Independent scalar transcription of the whole 1x1-grid forward pass:
/// tanh input embedding, peephole cell steps in gate order i, f, C, o, H,
/// and the linear output embedding.
mod scalar_oracle {
    pub struct Cell {
        pub w_xi: f64,
        pub w_hi: f64,
        pub w_ci: f64,
        pub b_i: f64,
        pub w_xf: f64,
        pub w_hf: f64,
        pub w_cf: f64,
        pub b_f: f64,
        pub w_xc: f64,
        pub w_hc: f64,
        pub b_c: f64,
        pub w_xo: f64,
        pub w_ho: f64,
        pub w_co: f64,
        pub b_o: f64,
    }

    fn sigma(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    pub fn step(p: &Cell, x: f64, h: f64, c: f64) -> (f64, f64) {
        let i = sigma(p.w_xi * x + p.w_hi * h + p.w_ci * c + p.b_i);
        let f = sigma(p.w_xf * x + p.w_hf * h + p.w_cf * c + p.b_f);
        let c_t = f * c + i * (p.w_xc * x + p.w_hc * h + p.b_c).tanh();
        let o = sigma(p.w_xo * x + p.w_ho * h + p.w_co * c_t + p.b_o);
        (o * c_t.tanh(), c_t)
    }
}

#[test]
fn criterion_2_gate_equation_transcription() {
    // 1x1 grid, one service, one channel everywhere: every convolution is
    // a scalar multiply, so the model must match a hand-written recurrence
    let mut config = S2SConfig::desk(1, 1, 1, 0);
    config.embed_channels = 1;
    config.hidden_channels = vec![1];
    config.kernel_size = 1;
    config.t_in = 2;
    config.horizon = 2;

    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0_f64;
    for _ in 0..100 {
        let mut draw = || rng.gen_range(-1.5..1.5);
        let mut model = AnyModel::init(&ModelConfig::ConvLstm(config.clone())).expect("init");
        let names: Vec<String> = model.params().names().cloned().collect();
        for name in &names {
            let t = model.params_mut().get_mut(name).expect("param");
            for v in t.data_mut() {
                *v = draw();
            }
        }
        let p = |name: &str| model.params().get(name).expect("param").at(0);
        let cell = |side: &str| scalar_oracle::Cell {
            w_xi: p(&format!("{side}0.w_xi")),
            w_hi: p(&format!("{side}0.w_hi")),
            w_ci: p(&format!("{side}0.w_ci")),
            b_i: p(&format!("{side}0.b_i")),
            w_xf: p(&format!("{side}0.w_xf")),
            w_hf: p(&format!("{side}0.w_hf")),
            w_cf: p(&format!("{side}0.w_cf")),
            b_f: p(&format!("{side}0.b_f")),
            w_xc: p(&format!("{side}0.w_xc")),
            w_hc: p(&format!("{side}0.w_hc")),
            b_c: p(&format!("{side}0.b_c")),
            w_xo: p(&format!("{side}0.w_xo")),
            w_ho: p(&format!("{side}0.w_ho")),
            w_co: p(&format!("{side}0.w_co")),
            b_o: p(&format!("{side}0.b_o")),
        };
        let (enc, dec) = (cell("enc"), cell("dec"));
        let (k_in, b_in) = (p("embed_in.kernel"), p("embed_in.bias"));
        let (k_out, b_out) = (p("embed_out.kernel"), p("embed_out.bias"));
        let (x0, x1) = (draw(), draw());

        // hand recurrence: encode both snapshots, then roll the decoder
        // autoregressively from the last observed snapshot
        let embed = |x: f64| (k_in * x + b_in).tanh();
        let (h, c) = scalar_oracle::step(&enc, embed(x0), 0.0, 0.0);
        let (h, c) = scalar_oracle::step(&enc, embed(x1), h, c);
        let (dh, dc) = scalar_oracle::step(&dec, embed(x1), h, c);
        let y0 = k_out * dh + b_out;
        let (dh2, _) = scalar_oracle::step(&dec, embed(y0), dh, dc);
        let y1 = k_out * dh2 + b_out;

        let input = Tensor::new(vec![2, 1, 1, 1], vec![x0, x1]).expect("input");
        let out = model.forecast(&input).expect("forecast");
        worst = worst.max((out.at(0) - y0).abs()).max((out.at(1) - y1).abs());
    }
    println!("criterion 2: max transcription deviation {worst:.3e}");
    assert!(worst < 1e-12, "gate equations deviate from the scalar transcription: {worst:.3e}");
}

#[test]
fn criterion_3_hungarian_optimality_and_scale() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    for n in 2..=7 {
        for case in 0..200 {
            let cost: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..n).map(|_| rng.gen_range(0.0..100.0)).collect())
                .collect();
            let fast = hungarian_assign(&cost).expect("hungarian");
            let slow = brute_force_assign(&cost).expect("brute force");
            let (fc, sc) = (assignment_cost(&cost, &fast), assignment_cost(&cost, &slow));
            assert!(
                (fc - sc).abs() < 1e-9,
                "suboptimal assignment at n={n} case {case}: {fc} vs {sc}"
            );
        }
    }

    // 800 antennas onto a 29x28 grid, wall-clock bounded
    let antennas: Vec<AntennaSite> = (0..800)
        .map(|i| AntennaSite {
            id: format!("a{i:03}"),
            x: rng.gen_range(0.0..14000.0),
            y: rng.gen_range(0.0..14500.0),
        })
        .collect();
    let start = std::time::Instant::now();
    let grid = map_antennas_to_grid(&antennas, 29, 28).expect("mapping");
    let elapsed = start.elapsed();
    assert_eq!(grid.assignments.len(), 800);
    assert_eq!(grid.masked_cell_count(), 29 * 28 - 800);
    println!("criterion 3: 1200 matrices optimal; 800->29x28 in {elapsed:.2?}");
    assert!(elapsed.as_secs() < 60, "large assignment took {elapsed:.2?}");
}

#[test]
fn criterion_4_metric_identities() {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let mut truth = Tensor::zeros(&[3, 2, 3, 3]);
    for v in truth.data_mut() {
        *v = rng.gen_range(0.5..10.0);
    }
    let mask = vec![true; 9];

    // pred = truth: MAE 0, SSIM 1, PSNR at its floor-induced cap
    let (steps, total) = mae(&[truth.clone()], &[truth.clone()], &mask).expect("mae");
    assert!(total == 0.0 && steps.iter().all(|&v| v == 0.0));
    let s = ssim_set(&[truth.clone()], &[truth.clone()], &mask).expect("ssim");
    assert!((s - 1.0).abs() <= 1e-12, "SSIM of identical snapshots: {s}");
    let p = psnr(&[truth.clone()], &[truth.clone()], &mask).expect("psnr");
    let d_max = truth.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let cap = 20.0 * d_max.log10() - 10.0 * PSNR_MSE_FLOOR.log10();
    assert!((p - cap).abs() < 1e-9, "PSNR cap: {p} vs {cap}");

    // degenerate spans are excluded and counted: antenna at cell 0 is
    // constant over the horizon, the rest vary
    let mut flat = truth.clone();
    for step in 0..3 {
        for s in 0..2 {
            let idx = flat.idx4(step, s, 0, 0);
            let v = flat.at(flat.idx4(0, s, 0, 0));
            flat.data_mut()[idx] = v;
        }
    }
    let noisy = flat.scale(1.01);
    let per_service = nmae_per_service(&[noisy], &[flat], &mask).expect("nmae");
    assert!(per_service.iter().all(|&(_, ex)| ex == 1), "{per_service:?}");

    // PSNR is invariant under uniform scaling of pred, truth and d_max
    let mut pred = truth.clone();
    for v in pred.data_mut() {
        *v += rng.gen_range(-0.3..0.3);
    }
    let a = psnr(&[pred.clone()], &[truth.clone()], &mask).expect("psnr");
    let b = psnr(&[pred.scale(7.0)], &[truth.scale(7.0)], &mask).expect("psnr");
    assert!((a - b).abs() < 1e-10, "scaling invariance: {a} vs {b}");
    println!("criterion 4: metric identities hold");
}

#[test]
fn criterion_5_pipeline_conservation_and_roundtrips() {
    // grid scattering is a relabeling: totals conserved exactly
    let series = synthesize_traffic(&SyntheticConfig::new(3, 1, 3, 3, 11)).expect("synth");
    let sites = project_lonlat(
        &series.antennas.iter().map(|a| (a.id.clone(), a.lon, a.lat)).collect::<Vec<_>>(),
    )
    .expect("projection");
    let grid = map_antennas_to_grid(&sites, 3, 3).expect("mapping");
    for t in [0, 100, 287] {
        let snap = scatter_snapshot(&series, &grid, t).expect("scatter");
        let direct: f64 = (0..3)
            .flat_map(|s| (0..9).map(move |a| (s, a)))
            .map(|(s, a)| series.volume(t, s, a))
            .sum();
        assert_eq!(snap.sum(), direct, "volume not conserved at bin {t}");
    }

    // normalize/denormalize roundtrip
    let stats = NormalizationStats::compute(&series);
    let snap = scatter_snapshot(&series, &grid, 42).expect("scatter");
    let back = stats.denormalize(&stats.normalize(&snap).expect("norm")).expect("denorm");
    let err = snap
        .data()
        .iter()
        .zip(back.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0_f64, f64::max);
    assert!(err < 1e-9, "roundtrip error {err}");

    // checkpoint save/load bit-identical
    let config = ModelConfig::ConvLstm({
        let mut c = S2SConfig::desk(3, 3, 3, 1);
        c.embed_channels = 4;
        c.hidden_channels = vec![4];
        c
    });
    let model = AnyModel::init(&config).expect("init");
    let ckpt = Checkpoint {
        config,
        data_hash: "t".into(),
        epoch: 1,
        val_loss: 0.5,
        params: model.params().clone(),
        buffers: model.buffers(),
        adam: Some(AdamState::new(model.params(), AdamConfig::default())),
    };
    let dir = tempfile::tempdir().expect("tempdir");
    let p1 = dir.path().join("a.ckpt");
    let p2 = dir.path().join("b.ckpt");
    ckpt.save(&p1).expect("save");
    Checkpoint::load(&p1).expect("load").save(&p2).expect("save again");
    assert_eq!(std::fs::read(&p1).expect("read"), std::fs::read(&p2).expect("read"));

    // identical seeds give byte-identical CLI artifacts
    let bin = env!("CARGO_BIN_EXE_traffic-forecast");
    let gen = |out: &std::path::Path| {
        let status = std::process::Command::new(bin)
            .args([
                "generate", "--services", "2", "--days", "1", "--grid", "2x2", "--seed", "3",
                "--out",
            ])
            .arg(out)
            .status()
            .expect("spawn");
        assert!(status.success());
    };
    let (da, db) = (dir.path().join("ga"), dir.path().join("gb"));
    gen(&da);
    gen(&db);
    for name in ["traffic.csv", "catalog.csv", "manifest.json"] {
        assert_eq!(
            std::fs::read(da.join(name)).expect("read"),
            std::fs::read(db.join(name)).expect("read"),
            "{name} differs between identical runs"
        );
    }
    println!("criterion 5: conservation, roundtrips and CLI determinism hold");
}

/// The shared desk-scale benchmark behind criteria 6-8.
struct BenchmarkRun {
    convlstm: EvalReport,
    cnn: EvalReport,
    persistence: EvalReport,
}

fn benchmark_run() -> &'static BenchmarkRun {
    static RUN: OnceLock<BenchmarkRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let (t_in, horizon, h, w, seed) = (12, 12, 6, 6, 7u64);
        let series =
            synthesize_traffic(&SyntheticConfig::new(8, 28, h, w, seed)).expect("synth");
        let sites = project_lonlat(
            &series.antennas.iter().map(|a| (a.id.clone(), a.lon, a.lat)).collect::<Vec<_>>(),
        )
        .expect("projection");
        let grid = map_antennas_to_grid(&sites, h, w).expect("mapping");
        let (train_series, test_series): (TrafficSeries, TrafficSeries) =
            chronological_split(&series, 0.8, t_in + horizon).expect("split");
        let stats = NormalizationStats::compute(&train_series);
        let train_windows =
            window_dataset(&train_series, &grid, &stats, t_in, horizon, 36).expect("windows");
        let test_windows =
            window_dataset(&test_series, &grid, &stats, t_in, horizon, 12).expect("windows");
        let services = &test_series.services;

        let dir = tempfile::tempdir().expect("tempdir");
        let run_model = |config: ModelConfig| -> EvalReport {
            let mut model = AnyModel::init(&config).expect("init");
            if model.kind().is_trainable() {
                // evaluate the best-validation checkpoint, not the final
                // epoch, matching the CLI workflow
                let ckpt_path = dir.path().join(format!("{}.ckpt", model.kind()));
                let train_config = TrainConfig {
                    epochs: 30,
                    lr: 3e-4,
                    seed,
                    checkpoint_path: Some(ckpt_path.clone()),
                    ..TrainConfig::default()
                };
                train(&mut model, &train_windows, &train_config).expect("training");
                let ckpt = Checkpoint::load(&ckpt_path).expect("checkpoint");
                *model.params_mut() = ckpt.params;
                model.set_buffers(&ckpt.buffers).expect("buffers");
            }
            evaluate(&model, &test_windows, &stats, &grid, services, "benchmark")
                .expect("evaluation")
        };

        let convlstm = run_model(ModelConfig::ConvLstm({
            let mut c = S2SConfig::desk(h, w, 8, seed);
            c.t_in = t_in;
            c.horizon = horizon;
            c
        }));
        let cnn = run_model(ModelConfig::Baseline(BaselineConfig::desk(
            ModelKind::Cnn,
            h,
            w,
            8,
            t_in,
            horizon,
            seed,
        )));
        let persistence = run_model(ModelConfig::Baseline(BaselineConfig::desk(
            ModelKind::Persistence,
            h,
            w,
            8,
            t_in,
            horizon,
            seed,
        )));
        BenchmarkRun { convlstm, cnn, persistence }
    })
}

#[test]
fn criterion_6_model_ordering_at_desk_scale() {
    let run = benchmark_run();
    let (c, n, p) = (run.convlstm.mae, run.cnn.mae, run.persistence.mae);
    let margin = 1.0 - c / p;
    println!(
        "criterion 6: MAE convlstm {c:.0}, cnn {n:.0}, persistence {p:.0} \
         (margin over persistence {:.1}%)",
        margin * 100.0
    );
    assert!(c < n, "ConvLSTM ({c:.0}) did not beat the CNN ({n:.0})");
    assert!(
        c <= 0.85 * p,
        "ConvLSTM ({c:.0}) is not >=15% better than persistence ({p:.0}); margin {:.1}%",
        margin * 100.0
    );
}

#[test]
fn criterion_7_error_grows_with_horizon() {
    let per_step = &benchmark_run().convlstm.mae_per_step;
    assert_eq!(per_step.len(), 12);
    // 3-step moving average, clamped at the edges
    let smooth = |k: usize| -> f64 {
        let lo = k.saturating_sub(1);
        let hi = (k + 1).min(per_step.len() - 1);
        per_step[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
    };
    let (first, last) = (smooth(0), smooth(11));
    println!(
        "criterion 7: smoothed per-step MAE {first:.0} (step 1) -> {last:.0} (step 12), \
         +{:.1}%",
        100.0 * (last / first - 1.0)
    );
    assert!(last > first, "per-step error did not grow: {first} -> {last}");
}

#[test]
fn criterion_8_category_grouping_denoises() {
    let report = &benchmark_run().convlstm;
    let service_mean = report.nmae_per_service.iter().map(|(_, v, _)| v).sum::<f64>()
        / report.nmae_per_service.len() as f64;
    let category_mean = report.nmae_per_category.iter().map(|(_, v, _)| v).sum::<f64>()
        / report.nmae_per_category.len() as f64;
    println!(
        "criterion 8: mean NMAE per service {service_mean:.4}, per category {category_mean:.4}"
    );
    assert!(
        category_mean <= service_mean,
        "category grouping did not reduce NMAE: {category_mean} > {service_mean}"
    );
}

#[test]
fn criterion_9_causality_and_determinism() {
    for case in 0..50u64 {
        let mut config = S2SConfig::desk(3, 3, 2, 9000 + case);
        config.t_in = 3;
        config.horizon = 3;
        config.embed_channels = 3;
        config.hidden_channels = vec![3];
        let model = AnyModel::init(&ModelConfig::ConvLstm(config)).expect("init");
        let convlstm = match &model {
            AnyModel::ConvLstm(m) => m,
            _ => unreachable!(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(case);
        let mut input = Tensor::zeros(&[3, 2, 3, 3]);
        let mut targets = Tensor::zeros(&[3, 2, 3, 3]);
        for v in input.data_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        for v in targets.data_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }

        // decoder step k may consume targets up to k-1 only: perturbing
        // the final target step must not move any prediction
        let mut perturbed = targets.clone();
        let n = perturbed.len();
        for v in perturbed.data_mut()[2 * n / 3..].iter_mut() {
            *v += 10.0;
        }
        let roll = |targets: &Tensor| -> Vec<Tensor> {
            let mut tape = Tape::new();
            let nodes = convlstm.params.leaves(&mut tape);
            let mut rng = ChaCha8Rng::seed_from_u64(7 * case);
            let preds = convlstm
                .forward_graph(&mut tape, &nodes, &input, Some(targets), 1.0, &mut rng)
                .expect("rollout");
            preds.iter().map(|&p| tape.value(p).clone()).collect()
        };
        let a = roll(&targets);
        let b = roll(&perturbed);
        for (k, (x, y)) in a.iter().zip(&b).enumerate() {
            assert_eq!(x, y, "case {case}: prediction {k} depends on a later target");
        }

        // tf_prob = 0 is fully deterministic regardless of RNG state: two
        // rollouts with different RNG seeds agree with each other and with
        // the rng-free forecast path
        let roll0 = |rng_seed: u64| -> Vec<Tensor> {
            let mut tape = Tape::new();
            let nodes = convlstm.params.leaves(&mut tape);
            let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
            let preds = convlstm
                .forward_graph(&mut tape, &nodes, &input, Some(&targets), 0.0, &mut rng)
                .expect("rollout");
            preds.iter().map(|&p| tape.value(p).clone()).collect()
        };
        let (r1, r2) = (roll0(1), roll0(2));
        assert_eq!(r1, r2, "case {case}: tf_prob = 0 rollout depends on the RNG");
        let forecast = model.forecast(&input).expect("forecast");
        let flat: Vec<f64> = r1.iter().flat_map(|p| p.data().iter().copied()).collect();
        assert_eq!(flat, forecast.data(), "case {case}: rollout and forecast disagree");
    }
    println!("criterion 9: causality and determinism hold on 50 instances");
}
