use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use deepfld::model::{load_checkpoint, save_checkpoint, ModelConfig};
use deepfld::trainkit::Hyperparams;
use deepfld::{Error, ModelParams};

use crate::CliResult;

/// Sidecar of a checkpoint: what is needed to rebuild and describe it.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelCard {
    pub config: ModelConfig,
    /// Year tag of the training cohort.
    pub year_tag: String,
    pub hyper: Hyperparams,
}

pub const CHECKPOINT_FILE: &str = "model.ckpt";

/// `model.ckpt` -> `model.json`.
pub fn card_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("json")
}

pub fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.to_path_buf(), source: e })?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).expect("plain data serializes");
    fs::write(path, text + "\n").map_err(|e| Error::Io { path: path.to_path_buf(), source: e })?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Format { file: path.to_path_buf(), message: e.to_string() }.into())
}

/// Echo of the fully resolved settings of one run.
#[derive(Serialize)]
struct RunRecord<'a, A: Serialize, R: Serialize> {
    command: &'a str,
    version: &'a str,
    args: &'a A,
    resolved: &'a R,
}

pub fn write_run<A: Serialize, R: Serialize>(out: &Path, command: &str, args: &A, resolved: &R) -> CliResult<()> {
    let record = RunRecord { command, version: env!("CARGO_PKG_VERSION"), args, resolved };
    write_json(&out.join("run.json"), &record)
}

pub fn save_model(out: &Path, params: &ModelParams, card: &ModelCard) -> CliResult<PathBuf> {
    let path = out.join(CHECKPOINT_FILE);
    save_checkpoint(params, &path)?;
    write_json(&card_path(&path), card)?;
    Ok(path)
}

pub fn load_model(checkpoint: &Path) -> CliResult<(ModelParams, ModelCard)> {
    if !checkpoint.is_file() {
        return Err(Error::Io {
            path: checkpoint.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "checkpoint not found"),
        }
        .into());
    }
    let card: ModelCard = read_json(&card_path(checkpoint))?;
    let params = load_checkpoint(checkpoint, &card.config)?;
    Ok((params, card))
}

/// Write rows under `header` with the csv crate.
pub fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> CliResult<()> {
    let err = |e: csv::Error| Error::Format { file: path.to_path_buf(), message: e.to_string() };
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record(header).map_err(err)?;
    for row in rows {
        w.write_record(&row).map_err(err)?;
    }
    w.flush().map_err(|e| Error::Io { path: path.to_path_buf(), source: e })?;
    Ok(())
}
