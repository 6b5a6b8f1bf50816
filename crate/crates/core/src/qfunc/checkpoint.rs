use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Architecture, QModel};
use crate::error::{Error, Result};

const FORMAT: &str = "ciql-checkpoint";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    arch: Architecture,
    params: Vec<f64>,
}

pub fn write_checkpoint<W: Write>(mut out: W, model: &QModel) -> std::io::Result<()> {
    let file = CheckpointFile {
        format: FORMAT.into(),
        version: VERSION,
        arch: model.arch.clone(),
        params: model.params().to_vec(),
    };
    serde_json::to_writer(&mut out, &file)?;
    out.write_all(b"\n")?;
    out.flush()
}

pub fn read_checkpoint<R: Read>(reader: R) -> Result<QModel> {
    let file: CheckpointFile = serde_json::from_reader(reader).map_err(|e| Error::Checkpoint(e.to_string()))?;
    if file.format != FORMAT || file.version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint {} v{}",
            file.format, file.version
        )));
    }
    QModel::from_parts(file.arch, file.params)
}

pub fn save_checkpoint(model: &QModel, path: &Path) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_checkpoint(BufWriter::new(f), model).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<QModel> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(BufReader::new(f))
}
