//! Release gate for the prediction laboratory. One test walks the nine
//! criteria below in order and prints a PASS or FAIL line for each, so a
//! full `--nocapture` run reads as a checklist:
//!
//!   A1  analytic gradients match finite differences across seeds
//!   A2  closed-form loss identities hold to 1e-12
//!   A3  a pinned synthetic recipe overfits to a tenth of its starting error
//!   A4  the trained model beats zero-velocity on held-out short horizons
//!   A5  jitter agrees with an independent fourth-difference evaluation
//!   A6  attention graphs are row-stochastic at both granularities
//!   A7  the full-size model stays under 1.2M parameters
//!   A8  training is byte-reproducible and resume matches straight-through
//!   A9  sequence files round-trip bitwise and window counts are closed-form
//!
//! A3 and A4 share one training run, so the whole gate costs a few
//! minutes of CPU; everything else is seconds. Budgets are asserted,
//! not just observed: a criterion that trains too slowly fails.

use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

use motionpred::config::{EvalSplit, RunConfig};
use motionpred::data::{window_split, MotionSequence, Units};
use motionpred::harness::{cmd_eval, cmd_gradcheck, cmd_train, TrainOptions};
use motionpred::losses::{adaptive_loss, combined_loss, per_frame_errors, salient_loss, LossConfig};
use motionpred::metrics::{jitter_from_errors, JitterValue};
use motionpred::model::{attention_pose_graph, attention_sample_graph, ModelConfig, Predictor};
use motionpred::{checkpoint, synth, Tape, Tensor};

type Criterion = Result<String, String>;

#[test]
fn acceptance_criteria() {
    let mut lines = Vec::new();
    let mut failures = Vec::new();
    let mut record = |id: &str, what: &str, outcome: Criterion| {
        let line = match &outcome {
            Ok(detail) => format!("{id} {what}: PASS ({detail})"),
            Err(reason) => format!("{id} {what}: FAIL ({reason})"),
        };
        println!("{line}");
        if outcome.is_err() {
            failures.push(id.to_string());
        }
        lines.push(line);
    };

    record("A1", "gradients match finite differences", a1_gradient_check());
    record("A2", "loss identities", a2_loss_identities());
    let (a3, a4) = a3_a4_overfit_and_baseline();
    record("A3", "synthetic overfit", a3);
    record("A4", "beats zero-velocity short-term", a4);
    record("A5", "jitter oracle", a5_jitter_oracle());
    record("A6", "attention rows are stochastic", a6_attention_invariants());
    record("A7", "parameter budget", a7_parameter_budget());
    record("A8", "determinism and resume", a8_determinism_and_resume());
    record("A9", "data round-trips", a9_data_round_trips());

    assert!(
        failures.is_empty(),
        "{} of 9 criteria failed ({}):\n{}",
        failures.len(),
        failures.join(", "),
        lines.join("\n")
    );
}

/// A1: the end-to-end gradient check (combined loss through the full
/// model, every parameter group plus the log-sigmas) passes for 20
/// seeds within its one-minute budget.
fn a1_gradient_check() -> Criterion {
    const SEEDS: u64 = 20;
    const BUDGET_S: f64 = 60.0;
    let started = Instant::now();
    let mut worst = 0.0f64;
    for seed in 0..SEEDS {
        let report = cmd_gradcheck(seed).map_err(|e| format!("seed {seed}: {e}"))?;
        worst = worst.max(report.max_relative_error);
        if !report.passed {
            let bad = report
                .groups
                .iter()
                .filter(|g| !g.passes(motionpred::gradcheck::DEFAULT_TOLERANCE))
                .map(|g| format!("{} rel {:.3e}", g.name, g.rel_error))
                .collect::<Vec<_>>()
                .join("; ");
            return Err(format!("seed {seed} failed: {bad}"));
        }
    }
    let elapsed = started.elapsed().as_secs_f64();
    if elapsed >= BUDGET_S {
        return Err(format!("{SEEDS} seeds took {elapsed:.1}s, budget {BUDGET_S}s"));
    }
    Ok(format!(
        "{SEEDS} seeds, worst relative error {worst:.2e}, {elapsed:.1}s"
    ))
}

/// A2: with all log-sigmas zero the uncertainty-weighted loss reduces to
/// half the error sum; with zero first-frame emphasis the salient loss is
/// the plain error sum; the blend at its endpoints equals each branch.
/// All comparisons to 1e-12 absolute.
fn a2_loss_identities() -> Criterion {
    const TOL: f64 = 1e-12;
    let mut rng = ChaCha8Rng::seed_from_u64(02_2025);
    let mut worst = 0.0f64;
    for case in 0..20 {
        let (frames, joints) = (rng.gen_range(2..30), rng.gen_range(1..23));
        let n = frames * joints * 3;
        let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
        };
        let pred_t = Tensor::new(vec![frames, joints, 3], draw(&mut rng)).unwrap();
        let target_t = Tensor::new(vec![frames, joints, 3], draw(&mut rng)).unwrap();
        let zeros = Tensor::new(vec![frames], vec![0.0; frames]).unwrap();
        // Random log-sigmas keep the blend endpoints honest: the identity
        // must hold because of the weights, not because s is trivial.
        let sig_t = Tensor::new(
            vec![frames],
            (0..frames).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap();

        let mut tape = Tape::new();
        let pred = tape.constant(&pred_t);
        let target = tape.constant(&target_t);
        let zero_s = tape.constant(&zeros);
        let s = tape.constant(&sig_t);

        let value = |tape: &Tape, id| tape.data(id)[0];

        // adaptive(s = 0) = 1/2 * sum of per-frame errors.
        let adaptive = adaptive_loss(&mut tape, pred, target, zero_s, false).unwrap();
        let errors = per_frame_errors(&mut tape, pred, target, false).unwrap();
        let error_sum = tape.sum_all(errors).unwrap();
        let half_sum = tape.scale(error_sum, 0.5).unwrap();
        let d_adaptive = (value(&tape, adaptive) - value(&tape, half_sum)).abs();

        // salient(omega = 0) = sum of per-frame errors.
        let plain = salient_loss(&mut tape, pred, target, 0.0).unwrap();
        let d_salient = (value(&tape, plain) - value(&tape, error_sum)).abs();

        // The blend collapses to one branch at each endpoint.
        let omega = rng.gen_range(0.0..20.0);
        let squared = case % 2 == 0;
        let at = |tape: &mut Tape, lambda: f64| {
            let cfg = LossConfig { lambda, omega, squared_error: squared };
            combined_loss(tape, pred, target, s, &cfg).unwrap()
        };
        let at0 = at(&mut tape, 0.0);
        let at1 = at(&mut tape, 1.0);
        let adaptive_s = adaptive_loss(&mut tape, pred, target, s, squared).unwrap();
        let salient_w = salient_loss(&mut tape, pred, target, omega).unwrap();
        let d_blend0 = (value(&tape, at0) - value(&tape, salient_w)).abs();
        let d_blend1 = (value(&tape, at1) - value(&tape, adaptive_s)).abs();

        for (name, d) in [
            ("adaptive at s=0", d_adaptive),
            ("salient at omega=0", d_salient),
            ("blend at lambda=0", d_blend0),
            ("blend at lambda=1", d_blend1),
        ] {
            if d > TOL {
                return Err(format!("case {case}: {name} off by {d:.3e}, tolerance {TOL:.0e}"));
            }
            worst = worst.max(d);
        }
    }
    Ok(format!("20 random cases, worst deviation {worst:.2e}"))
}

/// The pinned recipe shared by A3 and A4: a small model on sixteen
/// sinusoidal sequences, split three-to-one into train and validation.
fn overfit_recipe() -> RunConfig {
    let toml = r#"
        [model]
        n_joints = 8
        in_frames = 10
        out_frames = 25
        feature_dim = 32
        key_dim = 8
        n_blocks = 2

        # Mostly uncertainty-weighted: a heavy first-frame emphasis
        # fights the equal-weight error this criterion measures.
        [loss]
        lambda = 0.9
        omega = 1.0

        [optimizer]
        lr = 4e-3

        [training]
        steps = 2000
        batch_size = 16
        seed = 7
        log_every = 0
        checkpoint_every = 0

        [data]
        train_fraction = 0.75

        [data.synth]
        n_sequences = 16
        n_frames = 60
        n_joints = 8
        fps = 25.0
        units = "m"
        amp_range = [0.05, 0.15]
        freq_range = [0.3, 0.7]
        families = ["sinusoid"]
    "#;
    RunConfig::from_toml_str(toml).expect("pinned recipe parses")
}

/// A3: 2000 optimizer steps on the pinned recipe drive the training-set
/// error to at most 10% of its starting value inside five minutes.
/// A4: the same checkpoint, on validation windows the model never saw,
/// beats the zero-velocity baseline by at least 20% averaged over the
/// horizons up to 400ms.
fn a3_a4_overfit_and_baseline() -> (Criterion, Criterion) {
    const CONTRACTION: f64 = 0.10;
    const BUDGET_S: f64 = 300.0;
    const MARGIN: f64 = 0.20;
    const HORIZON_CAP_MS: u64 = 400;

    let dir = match TempDir::new() {
        Ok(d) => d,
        Err(e) => {
            let msg = format!("could not create a scratch directory: {e}");
            return (Err(msg.clone()), Err(msg));
        }
    };
    let config = overfit_recipe();
    let started = Instant::now();
    let outcome = cmd_train(
        &config,
        &TrainOptions { out_dir: dir.path(), resume: None, quiet: true },
    );
    let elapsed = started.elapsed().as_secs_f64();
    let outcome = match outcome {
        Ok(o) => o,
        Err(e) => {
            let msg = format!("training failed: {e}");
            return (Err(msg.clone()), Err(msg));
        }
    };

    let ratio = outcome.final_train_mpjpe / outcome.initial_train_mpjpe;
    let a3 = if !ratio.is_finite() || ratio > CONTRACTION {
        Err(format!(
            "train error {:.4} -> {:.4} m is {:.1}% of start, needed <= {:.0}%",
            outcome.initial_train_mpjpe,
            outcome.final_train_mpjpe,
            100.0 * ratio,
            100.0 * CONTRACTION
        ))
    } else if elapsed >= BUDGET_S {
        Err(format!("2000 steps took {elapsed:.0}s, budget {BUDGET_S}s"))
    } else {
        Ok(format!(
            "train error {:.4} -> {:.4} m ({:.1}% of start) in {elapsed:.0}s",
            outcome.initial_train_mpjpe,
            outcome.final_train_mpjpe,
            100.0 * ratio
        ))
    };

    let a4 = (|| -> Criterion {
        let eval = cmd_eval(&outcome.final_checkpoint, Some(EvalSplit::Val))
            .map_err(|e| format!("evaluation failed: {e}"))?;
        let short: Vec<u64> = eval
            .model
            .mpjpe_at_ms
            .keys()
            .copied()
            .filter(|&ms| ms <= HORIZON_CAP_MS)
            .collect();
        if short.is_empty() {
            return Err("no horizons at or below 400ms were evaluated".into());
        }
        let mean = |report: &std::collections::BTreeMap<u64, f64>| {
            short.iter().map(|ms| report[ms]).sum::<f64>() / short.len() as f64
        };
        let model = mean(&eval.model.mpjpe_at_ms);
        let baseline = mean(&eval.zero_velocity.mpjpe_at_ms);
        let improvement = 1.0 - model / baseline;
        if !improvement.is_finite() || improvement < MARGIN {
            return Err(format!(
                "mean over {:?}ms: model {model:.4} vs zero-velocity {baseline:.4} m, \
                 {:.1}% better, needed >= {:.0}%",
                short,
                100.0 * improvement,
                100.0 * MARGIN
            ));
        }
        Ok(format!(
            "mean over {:?}ms: model {model:.4} vs zero-velocity {baseline:.4} m, {:.1}% better",
            short,
            100.0 * improvement
        ))
    })();

    (a3, a4)
}

/// Direct evaluation of jitter as fourth differences of the error series
/// itself, `x[t+4] - 4x[t+3] + 6x[t+2] - 4x[t+1] + x[t]`, which equals
/// the third difference of consecutive first differences term by term.
fn fourth_difference_jitter(errors: &[f64], fps: f64) -> JitterValue {
    let len = errors.len();
    let scale = fps.powi(3) / (len - 5) as f64;
    let mut signed = 0.0;
    let mut abs = 0.0;
    for t in 0..=len - 5 {
        let d = errors[t + 4] - 4.0 * errors[t + 3] + 6.0 * errors[t + 2] - 4.0 * errors[t + 1]
            + errors[t];
        signed += d;
        abs += d.abs();
    }
    JitterValue { signed: scale * signed, abs: scale * abs }
}

/// A5: jitter matches the independent fourth-difference form on 100
/// random series to 1e-10, vanishes exactly on constant, linear, and
/// quadratic series, and reproduces the hand-computed 9.0 case.
fn a5_jitter_oracle() -> Criterion {
    const TOL: f64 = 1e-10;
    let mut rng = ChaCha8Rng::seed_from_u64(05_2025);
    let mut worst = 0.0f64;
    for case in 0..100 {
        let len = rng.gen_range(6..=40);
        let fps = [1.0, 2.0, 5.0][case % 3];
        let errors: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let got = jitter_from_errors(&errors, fps).map_err(|e| format!("case {case}: {e}"))?;
        let want = fourth_difference_jitter(&errors, fps);
        let d = (got.signed - want.signed).abs().max((got.abs - want.abs).abs());
        if d > TOL {
            return Err(format!(
                "case {case} (len {len}, fps {fps}): off by {d:.3e}, tolerance {TOL:.0e}"
            ));
        }
        worst = worst.max(d);
    }

    // Integer-valued polynomial series up to degree two have exactly zero
    // third differences, with no rounding anywhere.
    for (name, series) in [
        ("constant", (0..12).map(|_| 3.0).collect::<Vec<f64>>()),
        ("linear", (0..12).map(|t| (2 * t + 1) as f64).collect()),
        ("quadratic", (0..12).map(|t| (t * t - 4 * t + 2) as f64).collect()),
    ] {
        let j = jitter_from_errors(&series, 25.0).map_err(|e| format!("{name}: {e}"))?;
        if j.signed != 0.0 || j.abs != 0.0 {
            return Err(format!(
                "{name} series gave signed {} abs {}, expected exact zero",
                j.signed, j.abs
            ));
        }
    }

    // First differences 0, 1, 8, 27, 64, 125 (cubes) at one frame per
    // second: third differences are all 6, three terms over divisor two.
    let cubes = [0.0, 0.0, 1.0, 9.0, 36.0, 100.0, 225.0];
    let j = jitter_from_errors(&cubes, 1.0).map_err(|e| format!("cubic case: {e}"))?;
    if j.signed != 9.0 || j.abs != 9.0 {
        return Err(format!(
            "cubic case gave signed {} abs {}, expected exactly 9.0",
            j.signed, j.abs
        ));
    }

    Ok(format!("100 random series, worst deviation {worst:.2e}; exact zeros and 9.0 hold"))
}

/// A6: per-frame attention rows sum to one and pooled rows sum to the
/// window length, over 100 random inputs of varying shape.
fn a6_attention_invariants() -> Criterion {
    const ROW_TOL: f64 = 1e-9;
    const POOLED_TOL: f64 = 1e-8;
    let mut rng = ChaCha8Rng::seed_from_u64(06_2025);
    let mut worst_row = 0.0f64;
    let mut worst_pooled = 0.0f64;
    for case in 0..100 {
        let joints = rng.gen_range(2..12);
        let channels = rng.gen_range(1..16);
        let d_k = rng.gen_range(1..8);
        let frames = rng.gen_range(2..12);
        let scale = 1.0 / (d_k as f64).sqrt();
        let mut draw = |shape: Vec<usize>| {
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
            Tensor::new(shape, data).unwrap()
        };
        let wq = draw(vec![channels, d_k]);
        let wk = draw(vec![channels, d_k]);
        let frame = draw(vec![joints, channels]);
        let window = draw(vec![frames, joints, channels]);

        let mut tape = Tape::new();
        let wq = tape.constant(&wq);
        let wk = tape.constant(&wk);
        let frame = tape.constant(&frame);
        let window = tape.constant(&window);

        let pose = attention_pose_graph(&mut tape, wq, wk, frame, scale)
            .map_err(|e| format!("case {case}: {e}"))?;
        for (row, chunk) in tape.data(pose).chunks(joints).enumerate() {
            let d = (chunk.iter().sum::<f64>() - 1.0).abs();
            if d > ROW_TOL {
                return Err(format!(
                    "case {case}: per-frame row {row} sums to 1{d:+.3e}, tolerance {ROW_TOL:.0e}"
                ));
            }
            worst_row = worst_row.max(d);
        }

        let pooled = attention_sample_graph(&mut tape, wq, wk, window, scale)
            .map_err(|e| format!("case {case}: {e}"))?;
        for (row, chunk) in tape.data(pooled).chunks(joints).enumerate() {
            let d = (chunk.iter().sum::<f64>() - frames as f64).abs();
            if d > POOLED_TOL {
                return Err(format!(
                    "case {case}: pooled row {row} sums to {frames}{d:+.3e}, tolerance {POOLED_TOL:.0e}"
                ));
            }
            worst_pooled = worst_pooled.max(d);
        }
    }
    Ok(format!(
        "100 random inputs, worst per-frame deviation {worst_row:.2e}, pooled {worst_pooled:.2e}"
    ))
}

/// A7: the default full-size configuration stays under 1.2 million
/// parameters; the exact count is part of the pass line.
fn a7_parameter_budget() -> Criterion {
    const BUDGET: usize = 1_200_000;
    let config = ModelConfig::default();
    let predictor = Predictor::init(&config, 0).map_err(|e| e.to_string())?;
    let count = predictor.param_count();
    if count >= BUDGET {
        return Err(format!("{count} parameters, budget {BUDGET}"));
    }
    Ok(format!(
        "{count} parameters for joints {}, features {}, blocks {} (budget {BUDGET})",
        config.n_joints, config.feature_dim, config.n_blocks
    ))
}

/// Recipe for the determinism checks: small enough that three short
/// training runs cost a couple of seconds.
fn determinism_recipe(steps: u64) -> RunConfig {
    let toml = r#"
        [model]
        n_joints = 4
        in_frames = 6
        out_frames = 8
        feature_dim = 16
        key_dim = 4
        n_blocks = 1

        [training]
        steps = 30
        batch_size = 8
        seed = 11
        log_every = 0
        checkpoint_every = 0

        [data]
        train_fraction = 0.8

        [data.synth]
        n_sequences = 6
        n_frames = 30
        n_joints = 4
        units = "m"
        amp_range = [0.05, 0.15]
        freq_range = [0.4, 1.0]
        families = ["sinusoid"]
    "#;
    let mut config = RunConfig::from_toml_str(toml).expect("pinned recipe parses");
    config.training.steps = steps;
    config
}

/// Largest elementwise difference between two parameter stores with the
/// same layout, the log-sigmas included.
fn max_param_difference(a: &checkpoint::TrainState, b: &checkpoint::TrainState) -> f64 {
    let mut worst = 0.0f64;
    let pairs = a
        .predictor
        .params()
        .iter()
        .zip(b.predictor.params().iter())
        .chain(a.uncertainty.store().iter().zip(b.uncertainty.store().iter()));
    for ((_, _, ta), (_, _, tb)) in pairs {
        for (x, y) in ta.data().iter().zip(tb.data()) {
            worst = worst.max((x - y).abs());
        }
    }
    worst
}

/// A8: the same pinned run twice gives byte-identical checkpoints and
/// training logs; stopping at step 18 and resuming to 30 matches the
/// straight 30-step run to 1e-12 in every parameter.
fn a8_determinism_and_resume() -> Criterion {
    const TOL: f64 = 1e-12;
    let dir = TempDir::new().map_err(|e| e.to_string())?;
    let run = |name: &str, config: &RunConfig, resume: Option<&Path>| {
        let out = dir.path().join(name);
        cmd_train(config, &TrainOptions { out_dir: &out, resume, quiet: true })
            .map_err(|e| format!("{name}: {e}"))
    };

    let full = determinism_recipe(30);
    let first = run("first", &full, None)?;
    run("second", &full, None)?;
    for file in ["final.ckpt", "train_log.csv"] {
        let a = fs::read(dir.path().join("first").join(file)).map_err(|e| e.to_string())?;
        let b = fs::read(dir.path().join("second").join(file)).map_err(|e| e.to_string())?;
        if a != b {
            return Err(format!("{file} differs between two identical runs"));
        }
    }

    let partial = run("partial", &determinism_recipe(18), None)?;
    let resumed = run("resumed", &full, Some(partial.final_checkpoint.as_path()))?;
    let straight = checkpoint::load(&first.final_checkpoint).map_err(|e| e.to_string())?;
    let stitched = checkpoint::load(&resumed.final_checkpoint).map_err(|e| e.to_string())?;
    if straight.step != stitched.step {
        return Err(format!(
            "resume stopped at step {}, straight run at {}",
            stitched.step, straight.step
        ));
    }
    let worst = max_param_difference(&straight, &stitched);
    if worst > TOL {
        return Err(format!(
            "resumed parameters differ from straight training by {worst:.3e}, tolerance {TOL:.0e}"
        ));
    }
    Ok(format!(
        "two runs byte-identical; 18+12-step resume within {worst:.1e} of straight 30"
    ))
}

/// A9: fifty generated sequences survive a CSV round-trip bitwise, and
/// window counts match `floor((T - (T_in + T_out)) / stride) + 1` across
/// randomized shapes.
fn a9_data_round_trips() -> Criterion {
    let dir = TempDir::new().map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(09_2025);

    for case in 0..50u64 {
        let spec = synth::SynthSpec {
            n_sequences: 1,
            n_frames: rng.gen_range(2..40),
            n_joints: rng.gen_range(1..6),
            fps: [12.5, 25.0, 50.0][case as usize % 3],
            units: if case % 2 == 0 { Units::Millimeters } else { Units::Meters },
            amp_range: [50.0, 150.0],
            freq_range: [0.4, 1.2],
            families: vec![
                synth::SynthFamily::Sinusoid,
                synth::SynthFamily::Lissajous,
                synth::SynthFamily::PiecewiseLinear,
            ],
            ..synth::SynthSpec::default()
        };
        let seq = synth::generate(&spec, 1000 + case)
            .map_err(|e| format!("case {case}: {e}"))?
            .remove(0);
        // A loaded sequence takes its name from the file, so the file is
        // named after the sequence to make the round trip an identity.
        let case_dir = dir.path().join(format!("case{case:02}"));
        fs::create_dir(&case_dir).map_err(|e| e.to_string())?;
        let path = case_dir.join(format!("{}.csv", seq.name()));
        seq.save_csv(&path).map_err(|e| format!("case {case}: {e}"))?;
        let loaded = MotionSequence::load_csv(&path).map_err(|e| format!("case {case}: {e}"))?;
        if loaded != seq {
            return Err(format!(
                "case {case}: sequence changed across a save/load round-trip"
            ));
        }
    }

    // Window counts against the closed form, including the pinned
    // examples 66, 1, and 0 at a 10+25 window.
    let mut checked = 0usize;
    for (frames, expect) in [(100usize, 66usize), (35, 1), (34, 0)] {
        let seq = one_sequence(frames);
        let pairs = window_split(&seq, 10, 25, 1).map_err(|e| e.to_string())?;
        if pairs.len() != expect {
            return Err(format!(
                "{frames} frames with a 10+25 window gave {} pairs, expected {expect}",
                pairs.len()
            ));
        }
    }
    for _ in 0..100 {
        let frames = rng.gen_range(1..60);
        let t_in = rng.gen_range(1..8);
        let t_out = rng.gen_range(1..8);
        let stride = rng.gen_range(1..5);
        let seq = one_sequence(frames);
        let pairs = window_split(&seq, t_in, t_out, stride).map_err(|e| e.to_string())?;
        let expect = if frames < t_in + t_out {
            0
        } else {
            (frames - (t_in + t_out)) / stride + 1
        };
        if pairs.len() != expect {
            return Err(format!(
                "T={frames} in={t_in} out={t_out} stride={stride} gave {} pairs, \
                 closed form says {expect}",
                pairs.len()
            ));
        }
        for (k, pair) in pairs.iter().enumerate() {
            if pair.start != k * stride {
                return Err(format!(
                    "T={frames} stride={stride}: pair {k} starts at {}, expected {}",
                    pair.start,
                    k * stride
                ));
            }
        }
        checked += 1;
    }
    Ok(format!(
        "50 sequences round-tripped bitwise; {checked} randomized window counts match"
    ))
}

/// A one-joint ramp sequence: frame index in every coordinate, enough
/// structure to make window starts visible.
fn one_sequence(frames: usize) -> MotionSequence {
    let data: Vec<f64> = (0..frames).flat_map(|f| [f as f64; 3]).collect();
    MotionSequence::new(
        "ramp",
        25.0,
        Units::Meters,
        vec!["root".into()],
        Tensor::new(vec![frames, 1, 3], data).unwrap(),
    )
    .unwrap()
}
