//! Binary checkpoint format for a full training state: model parameters,
//! per-frame log-sigmas, both optimizer states, the run configuration,
//! and the step counter.
//!
//! Layout: an 8-byte magic, a little-endian u32 format version, a
//! little-endian u64 header length, a JSON header, then the payload of
//! raw little-endian f64s in a fixed order: model parameters in store
//! order, log-sigmas, then first and second optimizer moments for the
//! model followed by the same for the log-sigmas. Serialization is a
//! pure function of the state, so saving the same state twice produces
//! byte-identical files.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::losses::UncertaintyParams;
use crate::model::{ModelConfig, Predictor};
use crate::{AdamState, ParamStore, Tensor};

const MAGIC: [u8; 8] = *b"MPREDCK\0";
const VERSION: u32 = 1;

/// Everything a training run needs to continue exactly where it stopped.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub config: RunConfig,
    /// Completed optimization steps.
    pub step: u64,
    pub predictor: Predictor,
    pub uncertainty: UncertaintyParams,
    pub adam_model: AdamState,
    pub adam_uncertainty: AdamState,
}

#[derive(Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    model_params: Vec<ParamEntry>,
    uncertainty_params: Vec<ParamEntry>,
    optimizer: OptimizerMeta,
    step: u64,
    run_config: RunConfig,
}

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct OptimizerMeta {
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
}

fn entries(store: &ParamStore) -> Vec<ParamEntry> {
    store
        .iter()
        .map(|(_, name, t)| ParamEntry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
        })
        .collect()
}

fn push_store(payload: &mut Vec<u8>, store: &ParamStore) {
    for (_, _, t) in store.iter() {
        for v in t.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
}

fn push_moments(payload: &mut Vec<u8>, adam: &AdamState) {
    for buf in adam.first_moments().iter().chain(adam.second_moments()) {
        for v in buf {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
}

/// Saves the state; see the module docs for the layout.
pub fn save(path: impl AsRef<Path>, state: &TrainState) -> Result<()> {
    let a = &state.adam_model;
    let b = &state.adam_uncertainty;
    if (a.lr(), a.beta1(), a.beta2(), a.epsilon()) != (b.lr(), b.beta1(), b.beta2(), b.epsilon())
        || a.step_count() != b.step_count()
    {
        return Err(Error::Checkpoint(
            "model and log-sigma optimizer states disagree; they must step in lockstep".into(),
        ));
    }
    if a.step_count() != state.step {
        return Err(Error::Checkpoint(format!(
            "optimizer has taken {} steps but the state claims {}",
            a.step_count(),
            state.step
        )));
    }
    if state.uncertainty.horizon() != state.predictor.config().out_frames {
        return Err(Error::Checkpoint(format!(
            "{} log-sigmas for a {}-frame horizon",
            state.uncertainty.horizon(),
            state.predictor.config().out_frames
        )));
    }

    let header = Header {
        model: state.predictor.config().clone(),
        model_params: entries(state.predictor.params()),
        uncertainty_params: entries(state.uncertainty.store()),
        optimizer: OptimizerMeta {
            lr: a.lr(),
            beta1: a.beta1(),
            beta2: a.beta2(),
            epsilon: a.epsilon(),
        },
        step: state.step,
        run_config: state.config.clone(),
    };
    let header_json = serde_json::to_vec(&header)
        .map_err(|e| Error::Checkpoint(format!("cannot encode header: {e}")))?;

    let mut bytes = Vec::new();
    bytes.extend_from_slice(&MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    bytes.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&header_json);
    push_store(&mut bytes, state.predictor.params());
    push_store(&mut bytes, state.uncertainty.store());
    push_moments(&mut bytes, a);
    push_moments(&mut bytes, b);
    fs::write(path, bytes)?;
    Ok(())
}

/// Loads and fully validates a checkpoint written by [`save`].
pub fn load(path: impl AsRef<Path>) -> Result<TrainState> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    if bytes.len() < MAGIC.len() + 12 || bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Checkpoint(format!(
            "{} is not a checkpoint file",
            path.display()
        )));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version}, this build reads {VERSION}"
        )));
    }
    let header_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let payload_at = 20 + header_len;
    if payload_at > bytes.len() {
        return Err(Error::Checkpoint("header extends past the end of the file".into()));
    }
    let header: Header = serde_json::from_slice(&bytes[20..payload_at])
        .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;

    let payload = &bytes[payload_at..];
    if payload.len() % 8 != 0 {
        return Err(Error::Checkpoint("payload is not a whole number of f64s".into()));
    }
    let floats: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();

    let model_numels: Vec<usize> = header.model_params.iter().map(|e| e.shape.iter().product()).collect();
    let unc_numels: Vec<usize> = header
        .uncertainty_params
        .iter()
        .map(|e| e.shape.iter().product())
        .collect();
    let model_total: usize = model_numels.iter().sum();
    let unc_total: usize = unc_numels.iter().sum();
    let expect = 3 * (model_total + unc_total);
    if floats.len() != expect {
        return Err(Error::Checkpoint(format!(
            "payload holds {} values, the header promises {expect}",
            floats.len()
        )));
    }

    let mut cursor = 0usize;
    let mut take = |n: usize| {
        let slice = floats[cursor..cursor + n].to_vec();
        cursor += n;
        slice
    };

    let mut model_store = ParamStore::new();
    for (entry, &n) in header.model_params.iter().zip(&model_numels) {
        model_store.insert(&entry.name, Tensor::new(entry.shape.clone(), take(n))?)?;
    }
    let predictor = Predictor::from_params(&header.model, model_store)?;

    if header.uncertainty_params.len() != 1 || unc_total != header.model.out_frames {
        return Err(Error::Checkpoint(format!(
            "expected one log-sigma vector of length {}, found {} entries of total length {unc_total}",
            header.model.out_frames,
            header.uncertainty_params.len()
        )));
    }
    let uncertainty = UncertaintyParams::from_values(take(unc_total))?;

    let o = &header.optimizer;
    let model_m: Vec<Vec<f64>> = model_numels.iter().map(|&n| take(n)).collect();
    let model_v: Vec<Vec<f64>> = model_numels.iter().map(|&n| take(n)).collect();
    let unc_m: Vec<Vec<f64>> = unc_numels.iter().map(|&n| take(n)).collect();
    let unc_v: Vec<Vec<f64>> = unc_numels.iter().map(|&n| take(n)).collect();
    let adam_model = AdamState::from_parts(
        predictor.params(),
        o.lr,
        o.beta1,
        o.beta2,
        o.epsilon,
        header.step,
        model_m,
        model_v,
    )?;
    let adam_uncertainty = AdamState::from_parts(
        uncertainty.store(),
        o.lr,
        o.beta1,
        o.beta2,
        o.epsilon,
        header.step,
        unc_m,
        unc_v,
    )?;

    header.run_config.validate()?;
    Ok(TrainState {
        config: header.run_config,
        step: header.step,
        predictor,
        uncertainty,
        adam_model,
        adam_uncertainty,
    })
}
