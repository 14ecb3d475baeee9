//! Drivers behind the CLI subcommands: training, evaluation, prediction,
//! and the end-to-end gradient check. The test suites call these
//! directly, so everything here returns structured outcomes and leaves
//! printing to the caller except for opt-in progress lines.

use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write as _};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{self, TrainState};
use crate::config::{DataSource, EvalSplit, RunConfig};
use crate::data::{self, Units, WindowPair};
use crate::error::{Error, Result};
use crate::gradcheck::{finite_diff_grad, GroupCheck, DEFAULT_STEP, DEFAULT_TOLERANCE};
use crate::losses::{combined_loss, UncertaintyParams};
use crate::metrics::{self, JitterWindow, MetricsReport};
use crate::model::{ModelConfig, Predictor};
use crate::synth;
use crate::{AdamState, Tape, Tensor};

/// Windowed dataset ready for training and evaluation.
pub struct PreparedData {
    pub train: Vec<WindowPair>,
    pub val: Vec<WindowPair>,
    pub fps: f64,
    pub units: Units,
}

/// Loads or generates sequences, applies preprocessing, splits them into
/// train and validation sides, and cuts windows.
pub fn prepare_data(config: &RunConfig) -> Result<PreparedData> {
    let mut seqs = match config.data.source {
        DataSource::Synth => synth::generate(&config.data.synth, config.training.seed)?,
        DataSource::Dir => data::load_dir(config.data.dir.as_ref().expect("validated"))?,
    };
    if let Some(fps) = config.data.downsample_to_fps {
        seqs = seqs.iter().map(|s| s.downsample(fps)).collect::<Result<_>>()?;
    }
    if let Some(root) = config.data.root_joint {
        seqs = seqs
            .iter()
            .map(|s| s.remove_global_translation(root))
            .collect::<Result<_>>()?;
    }
    let (fps, units, joints) = data::check_compatible(&seqs)?;
    if joints != config.model.n_joints {
        return Err(Error::Config(format!(
            "data has {joints} joints but model.n_joints = {}",
            config.model.n_joints
        )));
    }
    let (train_seqs, val_seqs) =
        data::split_train_val(seqs, config.data.train_fraction, config.training.seed)?;
    let cut = |seqs: &[data::MotionSequence]| -> Result<Vec<WindowPair>> {
        let mut pairs = Vec::new();
        for s in seqs {
            pairs.extend(data::window_split(
                s,
                config.model.in_frames,
                config.model.out_frames,
                config.data.stride,
            )?);
        }
        Ok(pairs)
    };
    let train = cut(&train_seqs)?;
    let val = cut(&val_seqs)?;
    if train.is_empty() {
        return Err(Error::Data(format!(
            "no training windows: sequences are shorter than in_frames + out_frames = {}",
            config.model.in_frames + config.model.out_frames
        )));
    }
    Ok(PreparedData { train, val, fps, units })
}

const SCHEDULE_SALT: u64 = 0x5C4E_D01E_B47C_4A11;

/// Indices of the window pairs making up one optimization step's batch.
///
/// The schedule is a pure function of `(seed, n_pairs, batch_size, step)`:
/// epoch `e` visits a seeded permutation of all pairs, and batches read
/// consecutive positions across epoch boundaries. A resumed run therefore
/// sees exactly the batches an uninterrupted run would have seen, with no
/// sampler state to persist.
pub fn batch_indices(seed: u64, n_pairs: usize, batch_size: usize, step: u64) -> Vec<usize> {
    assert!(n_pairs > 0 && batch_size > 0, "schedule needs pairs and a batch");
    let epoch_perm = |epoch: u64| -> Vec<usize> {
        let mut perm: Vec<usize> = (0..n_pairs).collect();
        let stream = seed ^ SCHEDULE_SALT ^ epoch.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(stream));
        perm
    };
    let n = n_pairs as u64;
    let mut cache: Vec<(u64, Vec<usize>)> = Vec::with_capacity(2);
    (0..batch_size as u64)
        .map(|j| {
            let global = step * batch_size as u64 + j;
            let (epoch, within) = (global / n, (global % n) as usize);
            if !cache.iter().any(|(e, _)| *e == epoch) {
                cache.push((epoch, epoch_perm(epoch)));
            }
            let perm = &cache.iter().find(|(e, _)| *e == epoch).expect("just inserted").1;
            perm[within]
        })
        .collect()
}

/// Mean whole-horizon position error of a predictor over window pairs, in
/// the data's units.
pub fn mean_mpjpe(predictor: &Predictor, pairs: &[WindowPair]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Data("no windows to evaluate".into()));
    }
    let mut sum = 0.0;
    for pair in pairs {
        let pred = predictor.predict(&pair.obs)?;
        sum += metrics::mpjpe(&pred, &pair.target)?;
    }
    Ok(sum / pairs.len() as f64)
}

pub struct TrainOptions<'a> {
    pub out_dir: &'a Path,
    pub resume: Option<&'a Path>,
    /// Suppress progress lines regardless of `training.log_every`.
    pub quiet: bool,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub steps_run: u64,
    /// Mean training-set error before the first executed step.
    pub initial_train_mpjpe: f64,
    /// Mean training-set error after the last step.
    pub final_train_mpjpe: f64,
    pub final_loss: f64,
    pub final_checkpoint: PathBuf,
}

/// Runs (or resumes) training to `config.training.steps` optimization
/// steps, checkpointing into `out_dir`.
pub fn cmd_train(config: &RunConfig, options: &TrainOptions) -> Result<TrainOutcome> {
    config.validate()?;
    fs::create_dir_all(options.out_dir)?;
    let prepared = prepare_data(config)?;
    let t = &config.training;

    let mut state = match options.resume {
        Some(path) => {
            let loaded = checkpoint::load(path)?;
            if !config.compatible_for_resume(&loaded.config) {
                return Err(Error::Config(format!(
                    "checkpoint {} was trained under a different configuration; only training.steps may change",
                    path.display()
                )));
            }
            if loaded.step >= t.steps {
                return Err(Error::Config(format!(
                    "checkpoint has already completed {} of {} steps",
                    loaded.step, t.steps
                )));
            }
            TrainState { config: config.clone(), ..loaded }
        }
        None => {
            let predictor = Predictor::init(&config.model, t.seed)?;
            let uncertainty = UncertaintyParams::new(config.model.out_frames)?;
            let o = &config.optimizer;
            let adam_model = AdamState::new(predictor.params(), o.lr, o.beta1, o.beta2, o.epsilon)?;
            let adam_uncertainty =
                AdamState::new(uncertainty.store(), o.lr, o.beta1, o.beta2, o.epsilon)?;
            TrainState {
                config: config.clone(),
                step: 0,
                predictor,
                uncertainty,
                adam_model,
                adam_uncertainty,
            }
        }
    };

    let n_pairs = prepared.train.len();
    if !options.quiet {
        println!(
            "training: {n_pairs} windows, {} parameters, seed {}, steps {}..{}",
            state.predictor.param_count() + state.uncertainty.horizon(),
            t.seed,
            state.step,
            t.steps
        );
    }
    let initial_train_mpjpe = mean_mpjpe(&state.predictor, &prepared.train)?;

    // One row per step executed by this invocation; a rerun of the same
    // config and seed reproduces the file byte for byte.
    let mut log = io::BufWriter::new(fs::File::create(options.out_dir.join("train_log.csv"))?);
    writeln!(log, "step,loss")?;

    let mut final_loss = f64::NAN;
    while state.step < t.steps {
        let k = state.step;
        let indices = batch_indices(t.seed, n_pairs, t.batch_size, k);
        let loss_value = (|| -> Result<f64> {
            let mut tape = Tape::new();
            let model_bound = state.predictor.params().bind(&mut tape);
            let unc_bound = state.uncertainty.bind(&mut tape);
            let sigmas = state.uncertainty.var(&unc_bound);
            let mut total: Option<crate::VarId> = None;
            for &i in &indices {
                let pair = &prepared.train[i];
                let obs = tape.constant(&pair.obs);
                let target = tape.constant(&pair.target);
                let pred = state.predictor.forward_on_tape(&mut tape, &model_bound, obs)?;
                let loss = combined_loss(&mut tape, pred, target, sigmas, &config.loss)?;
                total = Some(match total {
                    Some(acc) => tape.add(acc, loss)?,
                    None => loss,
                });
            }
            let mean = tape.scale(total.expect("batch is non-empty"), 1.0 / indices.len() as f64)?;
            let value = tape.data(mean)[0];
            if !value.is_finite() {
                return Err(Error::Train("loss became non-finite".into()));
            }
            let grads = tape.backward(mean)?;
            state.predictor.params_mut().apply_gradients(&model_bound, &grads)?;
            state.uncertainty.store_mut().apply_gradients(&unc_bound, &grads)?;
            state.adam_model.step(state.predictor.params_mut())?;
            state.adam_uncertainty.step(state.uncertainty.store_mut())?;
            Ok(value)
        })()
        .map_err(|e| Error::Train(format!("step {}: {e}", k + 1)))?;

        final_loss = loss_value;
        state.step = k + 1;
        writeln!(log, "{},{loss_value:.16e}", state.step)?;
        if !options.quiet && t.log_every > 0 && state.step % t.log_every == 0 {
            println!("step {}/{} loss {loss_value:.6e}", state.step, t.steps);
        }
        if t.checkpoint_every > 0 && state.step % t.checkpoint_every == 0 && state.step < t.steps {
            checkpoint::save(options.out_dir.join(format!("step{:06}.ckpt", state.step)), &state)?;
        }
    }

    log.flush()?;
    let final_train_mpjpe = mean_mpjpe(&state.predictor, &prepared.train)?;
    let final_checkpoint = options.out_dir.join("final.ckpt");
    checkpoint::save(&final_checkpoint, &state)?;
    if !options.quiet {
        println!(
            "done: train error {initial_train_mpjpe:.6} -> {final_train_mpjpe:.6} {}, checkpoint {}",
            prepared.units,
            final_checkpoint.display()
        );
    }
    Ok(TrainOutcome {
        steps_run: t.steps,
        initial_train_mpjpe,
        final_train_mpjpe,
        final_loss,
        final_checkpoint,
    })
}

/// Side-by-side evaluation of the trained model and the zero-velocity
/// baseline on the same windows.
pub struct EvalOutcome {
    pub split: EvalSplit,
    pub n_windows: usize,
    pub model: MetricsReport,
    pub zero_velocity: MetricsReport,
}

impl EvalOutcome {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "split": self.split,
            "n_windows": self.n_windows,
            "model": self.model.to_flat_json(),
            "zero_velocity": self.zero_velocity.to_flat_json(),
        })
    }

    /// Fixed-width table with one metric per row, model and baseline side
    /// by side. Built from the same data as [`to_json`](Self::to_json).
    pub fn render_table(&self) -> String {
        let mut rows: Vec<(String, f64, f64)> = vec![(
            "mpjpe_overall".into(),
            self.model.mpjpe_overall,
            self.zero_velocity.mpjpe_overall,
        )];
        for (ms, v) in &self.model.mpjpe_at_ms {
            rows.push((format!("mpjpe_{ms}ms"), *v, self.zero_velocity.mpjpe_at_ms[ms]));
        }
        for (m, z) in self.model.jitter.iter().zip(&self.zero_velocity.jitter) {
            rows.push((format!("jitter_signed_{}_{}ms", m.start_ms, m.end_ms), m.signed, z.signed));
            rows.push((format!("jitter_abs_{}_{}ms", m.start_ms, m.end_ms), m.abs, z.abs));
        }
        let name_width = rows.iter().map(|(n, _, _)| n.len()).max().unwrap_or(0).max(6);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "split {}, {} windows, positions in {}, jitter in m/s^3",
            self.split, self.n_windows, self.model.units
        );
        let _ = writeln!(out, "{:<name_width$}  {:>15}  {:>15}", "metric", "model", "zero-velocity");
        for (name, model, base) in rows {
            let _ = writeln!(out, "{name:<name_width$}  {model:>15.6}  {base:>15.6}");
        }
        out
    }
}

/// Evaluates the checkpoint on the data its stored config describes.
pub fn cmd_eval(checkpoint_path: &Path, split: Option<EvalSplit>) -> Result<EvalOutcome> {
    let state = checkpoint::load(checkpoint_path)?;
    let config = state.config;
    let prepared = prepare_data(&config)?;
    let split = split.unwrap_or(config.eval.split);
    let all;
    let pairs: &[WindowPair] = match split {
        EvalSplit::Train => &prepared.train,
        EvalSplit::Val => {
            if prepared.val.is_empty() {
                return Err(Error::Data(
                    "validation split is empty; lower data.train_fraction or evaluate on \"train\"".into(),
                ));
            }
            &prepared.val
        }
        EvalSplit::All => {
            all = [prepared.train.as_slice(), prepared.val.as_slice()].concat();
            &all
        }
    };

    let out_frames = config.model.out_frames;
    let windows = config
        .eval
        .jitter_windows
        .clone()
        .unwrap_or_else(|| metrics::default_jitter_windows(prepared.fps, out_frames));
    // A short prediction span reports the horizons it reaches and skips
    // the rest, so the standard list works at every scale. A horizon
    // that does not land on a whole frame is still a config error.
    let mut horizons = Vec::new();
    for &ms in &config.eval.horizons_ms {
        if metrics::horizon_frame(prepared.fps, ms)? <= out_frames {
            horizons.push(ms);
        }
    }
    if horizons.is_empty() {
        return Err(Error::Config(format!(
            "no configured horizon falls within {out_frames} predicted frames at {}fps",
            prepared.fps
        )));
    }

    let report_for = |predict: &dyn Fn(&WindowPair) -> Result<Tensor>| -> Result<MetricsReport> {
        let mut curves = Vec::with_capacity(pairs.len());
        let mut jitter_sums: Vec<(f64, f64)> = vec![(0.0, 0.0); windows.len()];
        for pair in pairs {
            let pred = predict(pair)?;
            let curve = metrics::frame_errors(&pred, &pair.target)?;
            for (sum, w) in jitter_sums
                .iter_mut()
                .zip(metrics::jitter_windows(&curve, prepared.fps, prepared.units, &windows)?)
            {
                sum.0 += w.signed;
                sum.1 += w.abs;
            }
            curves.push(curve);
        }
        let mean = metrics::mean_curves(&curves)?;
        let n = pairs.len() as f64;
        Ok(MetricsReport {
            units: prepared.units,
            n_windows: pairs.len(),
            mpjpe_overall: mean.iter().sum::<f64>() / mean.len() as f64,
            mpjpe_at_ms: metrics::mpjpe_at_horizons(&mean, prepared.fps, &horizons)?,
            jitter: windows
                .iter()
                .zip(&jitter_sums)
                .map(|(&(start_ms, end_ms), &(signed, abs))| JitterWindow {
                    start_ms,
                    end_ms,
                    signed: signed / n,
                    abs: abs / n,
                })
                .collect(),
        })
    };

    let model = report_for(&|pair| state.predictor.predict(&pair.obs))?;
    let zero_velocity = report_for(&|pair| metrics::zero_velocity_baseline(&pair.obs, out_frames))?;
    Ok(EvalOutcome {
        split,
        n_windows: pairs.len(),
        model,
        zero_velocity,
    })
}

/// Predicts the future of a sequence CSV from its last observed window
/// and writes the result as a sequence CSV next to a fresh manifest.
/// The input must already be preprocessed the way the training data was.
pub fn cmd_predict(checkpoint_path: &Path, input: &Path, output: &Path) -> Result<data::MotionSequence> {
    let state = checkpoint::load(checkpoint_path)?;
    let model_cfg = state.predictor.config().clone();
    let seq = data::MotionSequence::load_csv(input)?;
    if seq.n_joints() != model_cfg.n_joints {
        return Err(Error::Data(format!(
            "{} has {} joints but the checkpoint expects {}",
            input.display(),
            seq.n_joints(),
            model_cfg.n_joints
        )));
    }
    if seq.n_frames() < model_cfg.in_frames {
        return Err(Error::Data(format!(
            "{} has {} frames; the model observes {}",
            input.display(),
            seq.n_frames(),
            model_cfg.in_frames
        )));
    }
    let cols = seq.n_joints() * 3;
    let start = seq.n_frames() - model_cfg.in_frames;
    let obs = Tensor::new(
        vec![model_cfg.in_frames, seq.n_joints(), 3],
        seq.frames().data()[start * cols..].to_vec(),
    )?;
    let pred = state.predictor.predict(&obs)?;
    let name = output
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| format!("{}_pred", seq.name()));
    let out_seq = data::MotionSequence::new(
        name,
        seq.fps(),
        seq.units(),
        seq.joint_names().to_vec(),
        pred,
    )?;
    out_seq.save_csv(output)?;
    Ok(out_seq)
}

/// Small but structurally complete model for end-to-end gradient checks:
/// every parameter kind is present and the whole check stays fast.
pub fn gradcheck_config() -> ModelConfig {
    ModelConfig {
        n_joints: 4,
        in_frames: 5,
        out_frames: 6,
        feature_dim: 8,
        key_dim: 4,
        n_blocks: 2,
        tcn_kernel: 3,
        ..ModelConfig::default()
    }
}

pub struct GradcheckReport {
    pub groups: Vec<GroupCheck>,
    pub max_relative_error: f64,
    pub passed: bool,
}

/// Compares every analytic parameter gradient of the full training
/// objective against central finite differences, one group per
/// parameter tensor (log-sigmas included).
pub fn cmd_gradcheck(seed: u64) -> Result<GradcheckReport> {
    let model_cfg = gradcheck_config();
    let loss_cfg = crate::losses::LossConfig::default();
    let mut predictor = Predictor::init(&model_cfg, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5_5A5A_1234_8765);
    let mut uncertainty = UncertaintyParams::from_values(
        (0..model_cfg.out_frames).map(|_| rng.gen_range(-0.3..0.3)).collect(),
    )?;
    let draw = |rng: &mut ChaCha8Rng, shape: Vec<usize>| {
        let n: usize = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    };
    let obs = draw(&mut rng, vec![model_cfg.in_frames, model_cfg.n_joints, 3]);
    let target = draw(&mut rng, vec![model_cfg.out_frames, model_cfg.n_joints, 3]);

    // Analytic gradients from one taped forward/backward pass.
    let (analytic_model, analytic_unc): (Vec<Vec<f64>>, Vec<f64>) = {
        let mut tape = Tape::new();
        let model_bound = predictor.params().bind(&mut tape);
        let unc_bound = uncertainty.bind(&mut tape);
        let obs_var = tape.constant(&obs);
        let target_var = tape.constant(&target);
        let pred = predictor.forward_on_tape(&mut tape, &model_bound, obs_var)?;
        let loss = combined_loss(&mut tape, pred, target_var, uncertainty.var(&unc_bound), &loss_cfg)?;
        let grads = tape.backward(loss)?;
        let model = model_bound
            .vars()
            .iter()
            .map(|&v| {
                grads
                    .get(v)
                    .map(<[f64]>::to_vec)
                    .ok_or_else(|| Error::Autodiff("a parameter is missing its gradient".into()))
            })
            .collect::<Result<_>>()?;
        let unc = grads
            .get(uncertainty.var(&unc_bound))
            .ok_or_else(|| Error::Autodiff("log-sigmas are missing their gradient".into()))?
            .to_vec();
        (model, unc)
    };

    // Numeric gradients, perturbing one store while the other stays fixed.
    let shadow = predictor.clone();
    let unc_fixed = uncertainty.clone();
    let numeric_model = finite_diff_grad(predictor.params_mut(), DEFAULT_STEP, |store| {
        let mut tape = Tape::new();
        let model_bound = store.bind_frozen(&mut tape);
        let unc_bound = unc_fixed.store().bind_frozen(&mut tape);
        let obs_var = tape.constant(&obs);
        let target_var = tape.constant(&target);
        let pred = shadow.forward_on_tape(&mut tape, &model_bound, obs_var)?;
        let loss = combined_loss(&mut tape, pred, target_var, unc_fixed.var(&unc_bound), &loss_cfg)?;
        Ok(tape.data(loss)[0])
    })?;
    let model_fixed = shadow;
    let numeric_unc = finite_diff_grad(uncertainty.store_mut(), DEFAULT_STEP, |store| {
        let mut tape = Tape::new();
        let model_bound = model_fixed.params().bind_frozen(&mut tape);
        let unc_bound = store.bind_frozen(&mut tape);
        let obs_var = tape.constant(&obs);
        let target_var = tape.constant(&target);
        let pred = model_fixed.forward_on_tape(&mut tape, &model_bound, obs_var)?;
        let loss = combined_loss(&mut tape, pred, target_var, unc_bound.vars()[0], &loss_cfg)?;
        Ok(tape.data(loss)[0])
    })?;

    let mut groups = Vec::new();
    for ((_, name, _), (analytic, numeric)) in model_fixed
        .params()
        .iter()
        .zip(analytic_model.iter().zip(&numeric_model))
    {
        groups.push(GroupCheck::compare(name, analytic, numeric));
    }
    groups.push(GroupCheck::compare("uncertainty.s", &analytic_unc, &numeric_unc[0]));

    let max_relative_error = groups.iter().map(|g| g.rel_error).fold(0.0, f64::max);
    let passed = groups.iter().all(|g| g.passes(DEFAULT_TOLERANCE));
    Ok(GradcheckReport {
        groups,
        max_relative_error,
        passed,
    })
}
