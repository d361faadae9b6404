//! Checkpoint files: the shared binary container with magic `GLCKPT01`.
//!
//! Header fields: `format` = `"gainlab-checkpoint"`, `version` = 1, `n`, `n_in`,
//! `n_out`, `alpha`, `seed`, `gain`, and `blocks` = `w_h` (n·n), `w_x` (n·n_in),
//! `w_out` (n_out·n), each row-major.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::RnnParams;
use crate::container::{self, take_block};
use crate::numerics::Matrix;
use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"GLCKPT01";
const FORMAT: &str = "gainlab-checkpoint";
const VERSION: u32 = 1;

/// Provenance stored alongside the weights.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub seed: u64,
    pub gain: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    n: usize,
    n_in: usize,
    n_out: usize,
    alpha: f64,
    seed: u64,
    gain: f64,
}

pub fn write_checkpoint<W: Write>(w: W, p: &RnnParams, meta: CheckpointMeta) -> Result<()> {
    let header = Header {
        format: FORMAT.into(),
        version: VERSION,
        n: p.n(),
        n_in: p.n_in(),
        n_out: p.n_out(),
        alpha: p.alpha,
        seed: meta.seed,
        gain: meta.gain,
    };
    container::write(
        w,
        MAGIC,
        serde_json::to_value(&header)?,
        &[
            ("w_h", p.w_h.data()),
            ("w_x", p.w_x.data()),
            ("w_out", p.w_out.data()),
        ],
    )
}

pub fn read_checkpoint<R: Read>(r: R) -> Result<(RnnParams, CheckpointMeta)> {
    let (header, mut blocks) = container::read(r, MAGIC)?;
    let h: Header = serde_json::from_value(header)?;
    if h.format != FORMAT || h.version != VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint {} v{}",
            h.format, h.version
        )));
    }
    let mut block = |name: &str, rows: usize, cols: usize| -> Result<Matrix> {
        let data = take_block(&mut blocks, name)?;
        if data.len() != rows * cols {
            return Err(Error::Format(format!(
                "block {name} has {} values, expected {}",
                data.len(),
                rows * cols
            )));
        }
        Ok(Matrix::from_vec(rows, cols, data))
    };
    let w_h = block("w_h", h.n, h.n)?;
    let w_x = block("w_x", h.n, h.n_in)?;
    let w_out = block("w_out", h.n_out, h.n)?;
    let p = RnnParams::from_parts(w_h, w_x, w_out, h.alpha)?;
    Ok((
        p,
        CheckpointMeta {
            seed: h.seed,
            gain: h.gain,
        },
    ))
}

pub fn save_checkpoint(path: &Path, p: &RnnParams, meta: CheckpointMeta) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(&mut w, p, meta)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(RnnParams, CheckpointMeta)> {
    read_checkpoint(BufReader::new(File::open(path)?))
}
