//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Every expected value is computed here from first principles (closed
//! forms, brute-force loops, hand traces) rather than by calling the code
//! under test a second time.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use cellfree::association::{build_serving_sets, combining_complexity, ServingMode};
use cellfree::channel::{mmse_estimate, realize_channels, EstimationParams, LinkMatrices, PilotBook};
use cellfree::combining::{
    build_combiners, lpmmse_combiner, se_from_combiners, CombinerKind, MrNormalization, PowerConfig, SeBound,
    ServedEstimate,
};
use cellfree::dataset::{
    assemble_dataset, read_dataset_from, simulate_setup, split_sizes, write_dataset_to, Manifest, Seeds, SplitSpec,
    TargetMode,
};
use cellfree::geometry::{gain_map, place_network, CaseId, NetworkConfig};
use cellfree::linalg::{CMatrix, CVector, C64};
use cellfree::nn::{
    adam_step, build_conv_net, build_dense_net, train, write_history_csv, AdamConfig, AdamState, ForwardMode,
    SurrogateModel, TensorView, TrainingSchedule,
};
use cellfree::pipeline::{reproduce_case, CaseConfig, CDF_FILE};
use cellfree::rng::{derive_seed, Stream};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rel(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

fn c1_architecture() -> Outcome {
    let dense = build_dense_net::<f32>(240, 12, 0).map_err(|e| e.to_string())?;
    let counts = dense.layer_param_counts();
    ensure(counts == [30848, 8256, 2080, 1056, 792, 300], || format!("dense per-layer {counts:?}"))?;
    ensure(dense.param_count() == 43_332, || format!("dense total {}", dense.param_count()))?;

    let conv = build_conv_net::<f32>(240, 12, 0).map_err(|e| e.to_string())?;
    let counts = conv.layer_param_counts();
    ensure(counts == [80, 1220, 0, 0, 0, 47220, 252], || format!("conv per-layer {counts:?}"))?;
    ensure(conv.param_count() == 48_772, || format!("conv total {}", conv.param_count()))?;
    let shapes: Vec<(usize, usize)> = conv.layer_output_shapes().iter().map(|s| (s.len, s.channels)).collect();
    let expected = [(238, 20), (236, 20), (236, 20), (118, 20), (1, 2360), (1, 20), (1, 12)];
    ensure(shapes == expected, || format!("conv shapes {shapes:?}"))?;

    // Independent count from the layer formulas.
    let dense_formula: usize = [240, 128, 64, 32, 32, 24, 12].windows(2).map(|w| w[0] * w[1] + w[1]).sum();
    let conv_formula = (3 * 20 + 20) + (3 * 20 * 20 + 20) + (118 * 20 * 20 + 20) + (20 * 12 + 12);
    ensure(dense_formula == 43_332 && conv_formula == 48_772, || "formula totals disagree".into())?;
    Ok("dense 43332 / conv 48772, shapes (238,20) (236,20) (118,20) 2360".into())
}

fn fd_max_error(model: &SurrogateModel<f64>, rows: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<f64> = (0..rows * model.input_size()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let t: Vec<f64> = (0..rows * model.output_size()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let loss = |m: &SurrogateModel<f64>| m.loss_and_gradients(&x, &t, rows, ForwardMode::Inference).unwrap();
    let (_, grads) = loss(model);
    let h = 1e-5;
    let mut probe = model.clone();
    let mut worst = 0.0f64;
    #[allow(clippy::needless_range_loop)]
    for i in 0..model.param_count() {
        let orig = probe.params()[i];
        probe.params_mut()[i] = orig + h;
        let up = loss(&probe).0.mse;
        probe.params_mut()[i] = orig - h;
        let down = loss(&probe).0.mse;
        probe.params_mut()[i] = orig;
        let fd = (up - down) / (2.0 * h);
        let err = (fd - grads[i]).abs() / fd.abs().max(grads[i].abs()).max(1e-6);
        worst = worst.max(err);
    }
    worst
}

fn c2_gradients() -> Outcome {
    let mut worst = 0.0f64;
    let mut checked = 0;
    for seed in 0..5u64 {
        // Dense path.
        let dense = build_dense_net::<f64>(7, 3, seed).map_err(|e| e.to_string())?;
        worst = worst.max(fd_max_error(&dense, 4, 100 + seed));
        // conv1d → conv1d → dropout (inference) → maxpool → flatten → dense.
        let conv = build_conv_net::<f64>(11, 3, seed).map_err(|e| e.to_string())?;
        worst = worst.max(fd_max_error(&conv, 3, 200 + seed));
        checked += dense.param_count() + conv.param_count();
    }
    ensure(worst < 1e-4, || format!("max relative error {worst:.3e} over {checked} parameters"))?;
    Ok(format!("{checked} parameters over 5 seeds, max relative error {worst:.2e}"))
}

fn c3_adam() -> Outcome {
    // Hand-executed Kingma-Ba iterations for a scalar with constant gradient.
    let (lr, b1, b2, eps) = (0.01f64, 0.9f64, 0.999f64, 1e-8f64);
    let (theta0, g) = (0.5f64, 0.3f64);
    let m1 = (1.0 - b1) * g;
    let v1 = (1.0 - b2) * g * g;
    let theta1 = theta0 - lr * (m1 / (1.0 - b1)) / ((v1 / (1.0 - b2)).sqrt() + eps);
    let m2 = b1 * m1 + (1.0 - b1) * g;
    let v2 = b2 * v1 + (1.0 - b2) * g * g;
    let theta2 = theta1 - lr * (m2 / (1.0 - b1 * b1)) / ((v2 / (1.0 - b2 * b2)).sqrt() + eps);

    let mut p = vec![theta0];
    let mut state = AdamState::new(AdamConfig { lr, beta1: b1, beta2: b2, epsilon: eps }, 1);
    adam_step(&mut p, &[g], &mut state).map_err(|e| e.to_string())?;
    let step1 = p[0];
    adam_step(&mut p, &[g], &mut state).map_err(|e| e.to_string())?;
    ensure((step1 - theta1).abs() < 1e-12 && (p[0] - theta2).abs() < 1e-12, || {
        format!("trace ({step1}, {}) vs hand ({theta1}, {theta2})", p[0])
    })?;

    let mut q = vec![1.25f64, -3.0, 0.0];
    let before = q.clone();
    let mut s0 = AdamState::new(AdamConfig::with_lr(0.0), 3);
    for _ in 0..3 {
        adam_step(&mut q, &[4.0, -2.0, 1e3], &mut s0).map_err(|e| e.to_string())?;
    }
    ensure(q == before, || "lr = 0 moved the parameters".into())?;

    let mut z = vec![0.0f64];
    let mut s1 = AdamState::new(AdamConfig::with_lr(1e-3), 1);
    adam_step(&mut z, &[10.0], &mut s1).map_err(|e| e.to_string())?;
    ensure((z[0].abs() - 1e-3).abs() < 1e-9, || format!("first step {:.3e}, expected ~1e-3", z[0]))?;
    Ok(format!("two-step error {:.1e}; lr=0 identity; first step {:.6e}", (p[0] - theta2).abs(), z[0]))
}

fn c4_mmse() -> Outcome {
    let (beta, p, tau_p, sigma2) = (2.0f64, 0.5f64, 10usize, 4.0f64);
    let o = 100_000;
    let r = LinkMatrices::new(1, 1, 1, vec![CMatrix::from_element(1, 1, C64::new(beta, 0.0))])
        .map_err(|e| e.to_string())?;
    let h = realize_channels(&r, o, 17).map_err(|e| e.to_string())?;
    let pilots = PilotBook::new(tau_p, vec![0]).map_err(|e| e.to_string())?;
    let est = mmse_estimate(&h, &r, &pilots, &EstimationParams { ue_powers: &[p], noise_power: sigma2 }, 17)
        .map_err(|e| e.to_string())?;

    let closed = beta * sigma2 / (p * tau_p as f64 * beta + sigma2);
    let mut err_pow = 0.0;
    let mut cross = C64::new(0.0, 0.0);
    let mut est_pow = 0.0;
    for k in 0..o {
        let hh = est.h_hat.get(0, 0, k, 0);
        let e = h.get(0, 0, k, 0) - hh;
        err_pow += e.norm_sqr();
        est_pow += hh.norm_sqr();
        cross += hh.conj() * e;
    }
    let n = o as f64;
    let mc = err_pow / n;
    ensure(rel(mc, closed) < 0.03, || format!("error variance {mc:.5} vs closed form {closed:.5}"))?;
    // Normalised correlation; each of its real and imaginary parts has
    // standard error 1/√(2·O) under independence.
    let corr = cross / (err_pow * est_pow).sqrt();
    let se = (1.0 / (2.0 * n)).sqrt();
    ensure(corr.re.abs() < 3.0 * se && corr.im.abs() < 3.0 * se, || {
        format!("estimate/error correlation {corr:.2e} exceeds 3 standard errors ({:.2e})", 3.0 * se)
    })?;
    let analytic_c = est.error_cov.get(0, 0)[(0, 0)].re;
    ensure(rel(analytic_c, closed) < 1e-12, || format!("reported error covariance {analytic_c} vs {closed}"))?;
    Ok(format!(
        "MC error variance {mc:.5} vs closed form {closed:.5} ({:.2}%); correlation {:.1e}",
        100.0 * rel(mc, closed),
        corr.norm()
    ))
}

fn cosine(a: &CVector, b: &CVector) -> f64 {
    a.dotc(b).norm() / (a.norm() * b.norm())
}

fn c5_combining() -> Outcome {
    let mut notes = Vec::new();
    let mut failures = Vec::new();

    // (a) Positive per-UE rescaling leaves SE unchanged.
    let cfg = CaseId::Desk.config();
    let out = simulate_setup(&cfg, CombinerKind::LpMmse, ServingMode::Scalable, 5, 0).map_err(|e| e.to_string())?;
    let powers = PowerConfig::noise_normalized(&cfg);
    let mut worst_a = 0.0f64;
    for kind in [CombinerKind::Mr, CombinerKind::LpMmse] {
        let base = build_combiners(&out.channels, &out.assignment, &powers, kind, MrNormalization::SampleMean)
            .map_err(|e| e.to_string())?;
        let se0 =
            se_from_combiners(&out.channels.h, &out.channels, &base, &powers, cfg.prelog(), SeBound::UseAndForget, 0)
                .map_err(|e| e.to_string())?;
        let mut scaled = base.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for u in 0..cfg.num_ues {
            scaled.scale_ue(u, 10f64.powf(rng.random_range(-3.0..3.0)));
        }
        let se1 =
            se_from_combiners(&out.channels.h, &out.channels, &scaled, &powers, cfg.prelog(), SeBound::UseAndForget, 0)
                .map_err(|e| e.to_string())?;
        for (a, b) in se0.se.iter().zip(&se1.se) {
            worst_a = worst_a.max(rel(*a, *b));
        }
    }
    if worst_a < 1e-9 {
        notes.push(format!("(a) rescaling {worst_a:.1e}"));
    } else {
        failures.push(format!("(a) rescaling changed SE by {worst_a:.2e}"));
    }

    // (b) N = 1 and a single serving AP per UE: MR vs LP-MMSE.
    let single = NetworkConfig { serving_threshold_db: 1e3, ..CaseId::Desk.config() };
    let out = simulate_setup(&single, CombinerKind::Mr, ServingMode::Scalable, 6, 0).map_err(|e| e.to_string())?;
    ensure((0..single.num_ues).all(|u| out.assignment.serving_set(u).len() == 1), || {
        "serving sets not singletons".into()
    })?;
    let powers = PowerConfig::noise_normalized(&single);
    let worst = |bound: SeBound| -> Result<f64, String> {
        let mut se = Vec::new();
        for kind in [CombinerKind::Mr, CombinerKind::LpMmse] {
            let v = build_combiners(&out.channels, &out.assignment, &powers, kind, MrNormalization::SampleMean)
                .map_err(|e| e.to_string())?;
            se.push(
                se_from_combiners(&out.channels.h, &out.channels, &v, &powers, single.prelog(), bound, 0)
                    .map_err(|e| e.to_string())?
                    .se,
            );
        }
        Ok(se[0].iter().zip(&se[1]).map(|(a, b)| rel(*a, *b)).fold(0.0, f64::max))
    };
    let uatf = worst(SeBound::UseAndForget)?;
    let side = worst(SeBound::SideInformation)?;
    if uatf < 1e-9 {
        notes.push(format!("(b) MR = LP-MMSE {uatf:.1e}"));
    } else {
        failures.push(format!(
            "(b) use-and-then-forget SE differs by up to {uatf:.2e} relative (per-realisation bound: {side:.1e})"
        ));
    }

    // (c) Noise-dominated LP-MMSE points along MR.
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let n = 4;
    let mut cvec = || CVector::from_fn(n, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
    let (h0, h1, h2) = (cvec(), cvec(), cvec());
    let c = CMatrix::identity(n, n) * C64::new(0.1, 0.0);
    let served = [
        ServedEstimate { h_hat: &h0, error_cov: &c, power: 1.0 },
        ServedEstimate { h_hat: &h1, error_cov: &c, power: 1.0 },
        ServedEstimate { h_hat: &h2, error_cov: &c, power: 1.0 },
    ];
    let signal = h0.norm_squared() + h1.norm_squared() + h2.norm_squared();
    let v = lpmmse_combiner(&served, 0, 1e6 * signal).map_err(|e| e.to_string())?;
    let cos = cosine(&v, &h0);
    if cos > 1.0 - 1e-6 {
        notes.push(format!("(c) cosine 1-{:.1e}", 1.0 - cos));
    } else {
        failures.push(format!("(c) direction cosine {cos}"));
    }

    if failures.is_empty() {
        Ok(notes.join("; "))
    } else {
        Err(failures.into_iter().chain(notes).collect::<Vec<_>>().join("; "))
    }
}

fn c6_scalability() -> Outcome {
    let mut complexity_by_u: Vec<Vec<(usize, u64)>> = Vec::new();
    for &u in &[8usize, 16, 32] {
        let cfg = NetworkConfig { num_ues: u, ..CaseId::Desk.config() };
        let placement = place_network(&cfg, cfg.ap_placement, 21).map_err(|e| e.to_string())?;
        let gains = gain_map(&cfg, &placement, 21).map_err(|e| e.to_string())?;
        let a = build_serving_sets(&gains, &cfg, ServingMode::Scalable).map_err(|e| e.to_string())?;
        let tau = cfg.pilot_length;
        for p in 0..cfg.num_aps {
            let served: Vec<usize> = (0..u).filter(|&k| a.serving_set(k).contains(&p)).collect();
            ensure(served.len() <= tau, || format!("U={u}: AP {p} serves {} > τ_p", served.len()))?;
            for t in 0..tau {
                let on = served.iter().filter(|&&k| a.pilot(k) == t).count();
                ensure(on <= 1, || format!("U={u}: AP {p} serves {on} UEs on pilot {t}"))?;
            }
        }
        for k in 0..u {
            ensure(a.serving_set(k).contains(&a.master(k)), || format!("U={u}: master of UE {k} not serving"))?;
        }
        let n = cfg.antennas_per_ap;
        let row: Vec<(usize, u64)> = (0..cfg.num_aps)
            .map(|p| {
                let sp = (0..u).filter(|&k| a.serving_set(k).contains(&p)).count();
                (sp, combining_complexity(&a, p, n))
            })
            .collect();
        for &(sp, cx) in &row {
            let expected = (sp * n * n + n * n * n) as u64;
            ensure(cx == expected, || format!("U={u}: complexity {cx} != |S_p|N²+N³ = {expected}"))?;
            ensure(cx <= (tau * n * n + n * n * n) as u64, || format!("U={u}: complexity {cx} exceeds the τ_p bound"))?;
        }
        complexity_by_u.push(row);
    }
    let mut same = 0;
    for i in 0..complexity_by_u.len() {
        for j in i + 1..complexity_by_u.len() {
            for (a, b) in complexity_by_u[i].iter().zip(&complexity_by_u[j]) {
                if a.0 == b.0 {
                    ensure(a.1 == b.1, || "complexity differs for an unchanged |S_p|".into())?;
                    same += 1;
                }
            }
        }
    }
    Ok(format!("τ_p and per-pilot caps hold for U ∈ {{8,16,32}}; {same} unchanged-|S_p| pairs agree"))
}

fn c7_dataset() -> Outcome {
    let paper = Manifest::new(
        CaseId::Two,
        &CaseId::Two.config(),
        Seeds { master: 1 },
        TargetMode::SetupSummary,
        CombinerKind::LpMmse,
        ServingMode::Scalable,
    );
    ensure(paper.feature_dim() == 240, || format!("paper feature width {}", paper.feature_dim()))?;

    let cfg = CaseId::Desk.config();
    let a = assemble_dataset(CaseId::Desk, &cfg, Seeds { master: 7 }, TargetMode::SetupSummary)
        .map_err(|e| e.to_string())?;
    let ds = &a.dataset;
    let expected_n = cfg.num_aps * cfg.antennas_per_ap * cfg.num_realizations * cfg.num_setups;
    ensure(ds.len() == expected_n && ds.len() == 3200, || format!("sample count {}", ds.len()))?;
    ensure(ds.feature_dim == 3 * cfg.num_ues, || format!("feature width {}", ds.feature_dim))?;

    // Case 3 folds N = 8 antennas into samples, keeping width 3U = 240.
    let c3 = NetworkConfig { num_realizations: 2, num_setups: 1, ..CaseId::Three.config() };
    let a3 = assemble_dataset(CaseId::Three, &c3, Seeds { master: 7 }, TargetMode::SetupSummary)
        .map_err(|e| e.to_string())?;
    ensure(a3.dataset.feature_dim == 240 && a3.dataset.len() == 32 * 8 * 2, || {
        format!("case 3: width {} count {}", a3.dataset.feature_dim, a3.dataset.len())
    })?;

    let mut bytes = Vec::new();
    write_dataset_to(ds, &mut bytes).map_err(|e| e.to_string())?;
    let back = read_dataset_from(&mut bytes.as_slice()).map_err(|e| e.to_string())?;
    let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    ensure(bits(&back.features) == bits(&ds.features) && bits(&back.targets) == bits(&ds.targets), || {
        "round trip altered values".into()
    })?;
    ensure(back.manifest == ds.manifest, || "round trip altered the manifest".into())?;
    let mut again = Vec::new();
    write_dataset_to(&back, &mut again).map_err(|e| e.to_string())?;
    ensure(again == bytes, || "rewritten file differs".into())?;

    let (train, val, test) = split_sizes(409_600, &SplitSpec::standard(0)).map_err(|e| e.to_string())?;
    ensure((test, val, train) == (81_920, 10_240, 317_440), || format!("split {train}/{val}/{test}"))?;
    Ok(format!("width 3U; {} samples; bit-exact round trip; 409600 → 81920/10240/317440", ds.len()))
}

fn c8_training() -> Outcome {
    let cfg = CaseId::Desk.config();
    let a = assemble_dataset(CaseId::Desk, &cfg, Seeds { master: 2024 }, TargetMode::SetupSummary)
        .map_err(|e| e.to_string())?;
    let case = CaseConfig::new(CaseId::Desk, 2024);
    let schedule = TrainingSchedule::desk(CaseConfig::schedule_seed(2024));
    ensure(schedule.learning_rates.len() == 1 && schedule.epochs_per_stage == 50, || {
        "desk schedule is not 1 × 50".into()
    })?;
    let (tr, va, _) = cellfree::dataset::split_dataset(&a.dataset, &case.split()).map_err(|e| e.to_string())?;
    let run = || {
        let mut m = build_dense_net::<f32>(
            tr.feature_dim,
            tr.target_dim,
            case.init_seed(cellfree::report::ArchitectureName::Dense),
        )
        .unwrap();
        let h = train(
            &mut m,
            TensorView { x: &tr.features, y: &tr.targets, rows: tr.len() },
            Some(TensorView { x: &va.features, y: &va.targets, rows: va.len() }),
            &schedule,
        )
        .unwrap();
        let mut csv = Vec::new();
        write_history_csv(&mut csv, &h).unwrap();
        // Drop the wall-clock column.
        let text: String = String::from_utf8(csv)
            .unwrap()
            .lines()
            .map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head).to_string() + "\n")
            .collect();
        (h, text, m)
    };
    let (h1, csv1, m1) = run();
    let (h2, csv2, m2) = run();
    ensure(h1.epochs.len() == 50, || format!("{} epochs recorded", h1.epochs.len()))?;
    let ratio = h1.final_train_rmse() / h1.initial_train_rmse;
    ensure(ratio < 0.25, || format!("final/initial RMSE = {ratio:.3}"))?;
    ensure(h1.same_trajectory(&h2) && csv1 == csv2, || "histories differ between reruns".into())?;
    ensure(m1.params() == m2.params(), || "weights differ between reruns".into())?;
    Ok(format!(
        "RMSE {:.4} → {:.4e} (ratio {ratio:.2e}); reruns bit-identical",
        h1.initial_train_rmse,
        h1.final_train_rmse()
    ))
}

fn ks_brute(a: &[f64], b: &[f64]) -> f64 {
    let cdf = |s: &[f64], x: f64| s.iter().filter(|&&v| v <= x).count() as f64 / s.len() as f64;
    a.iter().chain(b).map(|&x| (cdf(a, x) - cdf(b, x)).abs()).fold(0.0, f64::max)
}

fn c9_cdf() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = CaseConfig { target_mode: TargetMode::ServedUe, ..CaseConfig::new(CaseId::Desk, 2024) };
    let bundle = reproduce_case(&cfg, dir.path()).map_err(|e| e.to_string())?;

    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(dir.path().join(CDF_FILE))
        .map_err(|e| e.to_string())?;
    let mut series: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| e.to_string())?;
        let (v, p, label): (f64, f64, String) = (rec[0].parse().unwrap(), rec[1].parse().unwrap(), rec[2].to_string());
        match series.last_mut() {
            Some((l, pts)) if *l == label => pts.push((v, p)),
            _ => series.push((label, vec![(v, p)])),
        }
    }
    let labels: Vec<&str> = series.iter().map(|(l, _)| l.as_str()).collect();
    ensure(labels == ["LP-MMSE", "Dense_Net", "Conv_Net"], || format!("CDF labels {labels:?}"))?;
    for (label, pts) in &series {
        let monotone = pts.windows(2).all(|w| w[0].0 <= w[1].0 && w[0].1 <= w[1].1);
        let last = pts.last().map_or(0.0, |p| p.1);
        ensure(monotone && (last - 1.0).abs() < 1e-12, || format!("{label}: monotone {monotone}, ends at {last}"))?;
    }
    let mut parts = Vec::new();
    let mut failures = Vec::new();
    for e in &bundle.evaluations {
        let name = e.architecture.map_or("?", |a| a.label());
        let ks = ks_brute(&e.predicted, &e.reference);
        ensure((ks - e.ks_distance).abs() < 1e-12, || {
            format!("{name}: reported K-S {} vs brute force {ks}", e.ks_distance)
        })?;
        parts.push(format!("{name} K-S {ks:.4}"));
        if ks >= 0.15 {
            failures.push(format!("{name} K-S {ks:.4} >= 0.15"));
        }
    }
    if failures.is_empty() {
        Ok(format!("3 monotone CDFs ending at 1; {}", parts.join(", ")))
    } else {
        Err(failures.join("; "))
    }
}

fn c10_parallel() -> Outcome {
    let cfg = CaseId::Desk.config();
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let a = assemble_dataset(CaseId::Desk, &cfg, Seeds { master: 99 }, TargetMode::ServedUe).unwrap();
            let mut bytes = Vec::new();
            write_dataset_to(&a.dataset, &mut bytes).unwrap();
            let se: Vec<u64> = a.reports().iter().flat_map(|r| r.se.iter().map(|v| v.to_bits())).collect();
            (bytes, se)
        })
    };
    let (b1, s1) = run(1);
    let (b8, s8) = run(8);
    ensure(b1 == b8, || "dataset bytes differ between 1 and 8 threads".into())?;
    ensure(s1 == s8, || "SE reports differ between 1 and 8 threads".into())?;
    let seed_check = derive_seed(99, Stream::Setup, &[0]) == derive_seed(99, Stream::Setup, &[0]);
    ensure(seed_check, || "substream seeds are not reproducible".into())?;
    Ok(format!("{} dataset bytes and {} SE values identical", b1.len(), s1.len()))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("architecture fidelity", c1_architecture),
        ("gradient correctness", c2_gradients),
        ("Adam oracle", c3_adam),
        ("MMSE estimator closed form", c4_mmse),
        ("combining equivalences", c5_combining),
        ("scalability invariants", c6_scalability),
        ("dataset integrity", c7_dataset),
        ("training property substitute", c8_training),
        ("CDF pipeline", c9_cdf),
        ("determinism under parallelism", c10_parallel),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let id = (i + 1).to_string();
        if !filter.is_empty() && !filter.contains(&id) {
            continue;
        }
        let clock = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or(p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default())
        });
        let secs = clock.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {id:>2} {name}: PASS ({secs:.1} s) {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {id:>2} {name}: FAIL ({secs:.1} s) {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
