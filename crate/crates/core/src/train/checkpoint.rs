use std::fs;
use std::path::Path;

use super::{OptimState, TrainState};
use crate::data::{read_rct, write_rct};
use crate::error::{io_err, Result};
use crate::model::{layout, ModelConfig, ModelWeights};
use crate::tensor::Tensor;

const MANIFEST: &str = "manifest.txt";

/// A checkpoint directory's contents.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub state: TrainState,
}

fn file_name(path: &str) -> String {
    format!("{path}.rct")
}

fn write_tensors<'a>(
    dir: &Path,
    tensors: impl Iterator<Item = (&'a String, &'a Tensor)>,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut manifest = String::new();
    for (path, t) in tensors {
        let file = file_name(path);
        write_rct(t, dir.join(&file))?;
        let shape: Vec<String> = t.shape().iter().map(usize::to_string).collect();
        manifest.push_str(&format!("{path}\t{file}\t{}\n", shape.join(",")));
    }
    fs::write(dir.join(MANIFEST), manifest)?;
    Ok(())
}

fn read_tensors(dir: &Path) -> Result<Vec<(String, Tensor)>> {
    let manifest_path = dir.join(MANIFEST);
    let text = fs::read_to_string(&manifest_path)
        .map_err(|e| io_err!("cannot read {}: {e}", manifest_path.display()))?;
    let mut out = Vec::new();
    for (i, line) in text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
    {
        let fields: Vec<&str> = line.split('\t').collect();
        let [path, file, shape] = fields[..] else {
            return Err(io_err!(
                "{}:{}: expected 3 tab-separated fields",
                manifest_path.display(),
                i + 1
            ));
        };
        let shape: Vec<usize> = if shape.is_empty() {
            Vec::new()
        } else {
            shape
                .split(',')
                .map(|s| {
                    s.parse().map_err(|_| {
                        io_err!("{}:{}: bad shape '{shape}'", manifest_path.display(), i + 1)
                    })
                })
                .collect::<Result<_>>()?
        };
        let t = read_rct(dir.join(file))?;
        if t.shape() != shape.as_slice() {
            return Err(io_err!(
                "{file}: shape {:?} does not match manifest {shape:?}",
                t.shape()
            ));
        }
        out.push((path.to_string(), t));
    }
    Ok(out)
}

pub fn save_weights(weights: &ModelWeights, dir: impl AsRef<Path>) -> Result<()> {
    write_tensors(dir.as_ref(), weights.iter())
}

pub fn load_weights(dir: impl AsRef<Path>) -> Result<ModelWeights> {
    let mut w = ModelWeights::new();
    for (k, t) in read_tensors(dir.as_ref())? {
        w.insert(k, t);
    }
    if w.is_empty() {
        return Err(io_err!(
            "{}: checkpoint has no parameters",
            dir.as_ref().display()
        ));
    }
    Ok(w)
}

/// Writes the weights (manifest + one RCT per parameter) and `model.cfg`:
/// everything inference needs.
pub fn save_model(
    dir: impl AsRef<Path>,
    model: &ModelConfig,
    weights: &ModelWeights,
) -> Result<()> {
    let dir = dir.as_ref();
    save_weights(weights, dir)?;
    let cfg: String = model
        .entries()
        .into_iter()
        .map(|(k, v)| format!("{k} = {v}\n"))
        .collect();
    fs::write(dir.join("model.cfg"), cfg)?;
    Ok(())
}

/// Reads what [`save_model`] wrote and checks the weights fit the config.
pub fn load_model(dir: impl AsRef<Path>) -> Result<(ModelConfig, ModelWeights)> {
    let dir = dir.as_ref();
    let weights = load_weights(dir)?;
    let path = dir.join("model.cfg");
    let text =
        fs::read_to_string(&path).map_err(|e| io_err!("cannot read {}: {e}", path.display()))?;
    let mut model = ModelConfig::default();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| io_err!("model.cfg: bad line '{line}'"))?;
        model
            .set(k.trim(), v.trim())
            .map_err(|e| io_err!("model.cfg: {e}"))?;
    }
    for layer in layout(&model) {
        let name = layer.name();
        let present = weights.names().any(|k| {
            k.strip_prefix(name)
                .is_some_and(|r| r.starts_with('.') || r.is_empty())
        });
        if !present {
            return Err(io_err!("{}: no weights for layer '{name}'", dir.display()));
        }
    }
    Ok((model, weights))
}

/// Writes [`save_model`]'s files plus the optimizer moments under `optim/`,
/// the carried memory and `train.state`.
pub fn save_checkpoint(
    dir: impl AsRef<Path>,
    model: &ModelConfig,
    state: &TrainState,
) -> Result<()> {
    let dir = dir.as_ref();
    save_model(dir, model, &state.weights)?;
    let optim = dir.join("optim");
    let moments: Vec<(String, &Tensor)> = state
        .optim
        .m
        .iter()
        .map(|(k, t)| (format!("m.{k}"), t))
        .chain(state.optim.v.iter().map(|(k, t)| (format!("v.{k}"), t)))
        .collect();
    write_tensors(&optim, moments.iter().map(|(k, t)| (k, *t)))?;
    let memory = dir.join("memory.rct");
    match &state.memory {
        Some(m) => write_rct(m, &memory)?,
        None if memory.exists() => fs::remove_file(&memory)?,
        None => {}
    }
    fs::write(
        dir.join("train.state"),
        format!(
            "step = {}\ncursor = {}\nadam_t = {}\n",
            state.step, state.cursor, state.optim.t
        ),
    )?;
    Ok(())
}

fn parse_state(text: &str) -> Result<(usize, usize, u64)> {
    let mut vals = [None; 3];
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| io_err!("train.state: bad line '{line}'"))?;
        let slot = match k.trim() {
            "step" => 0,
            "cursor" => 1,
            "adam_t" => 2,
            other => return Err(io_err!("train.state: unknown key '{other}'")),
        };
        vals[slot] = Some(
            v.trim()
                .parse::<u64>()
                .map_err(|_| io_err!("train.state: bad value '{v}'"))?,
        );
    }
    match vals {
        [Some(s), Some(c), Some(t)] => Ok((s as usize, c as usize, t)),
        _ => Err(io_err!("train.state: missing fields")),
    }
}

pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<Checkpoint> {
    let dir = dir.as_ref();
    let (model, weights) = load_model(dir)?;
    let mut optim = OptimState::default();
    for (k, t) in read_tensors(&dir.join("optim"))? {
        match k.split_once('.') {
            Some(("m", name)) => optim.m.insert(name.to_string(), t),
            Some(("v", name)) => optim.v.insert(name.to_string(), t),
            _ => return Err(io_err!("optim: unexpected entry '{k}'")),
        };
    }
    let state_text = fs::read_to_string(dir.join("train.state"))
        .map_err(|e| io_err!("cannot read {}: {e}", dir.join("train.state").display()))?;
    let (step, cursor, t) = parse_state(&state_text)?;
    optim.t = t;
    let memory_path = dir.join("memory.rct");
    let memory = if memory_path.exists() {
        Some(read_rct(memory_path)?)
    } else {
        None
    };
    Ok(Checkpoint {
        model,
        state: TrainState {
            weights,
            optim,
            step,
            cursor,
            memory,
        },
    })
}
