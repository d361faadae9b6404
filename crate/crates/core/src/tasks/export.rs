//! Trial-batch export: the shared binary container with magic `GLBATCH1`.
//!
//! Header fields: `format` = `"gainlab-trial-batch"`, `version` = 1, `task`,
//! `batch` (B), `steps` (T), `n_in`, `n_out`, `meta` (one label object per
//! trial). Blocks: `inputs` (B·T·n_in), `targets` (B·T·n_out), `mask`
//! (B·T·n_out), each trial-major then step-major then channel.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{TaskKind, Trial, TrialBatch, TrialMeta};
use crate::container::{self, take_block};
use crate::numerics::Matrix;
use crate::{Error, Result};

pub const BATCH_MAGIC: &[u8; 8] = b"GLBATCH1";
const FORMAT: &str = "gainlab-trial-batch";

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    task: TaskKind,
    batch: usize,
    steps: usize,
    n_in: usize,
    n_out: usize,
    meta: Vec<TrialMeta>,
}

pub fn write_batch<W: Write>(w: W, batch: &TrialBatch) -> Result<()> {
    let header = Header {
        format: FORMAT.into(),
        version: 1,
        task: batch.task,
        batch: batch.len(),
        steps: batch.steps(),
        n_in: batch.n_in(),
        n_out: batch.n_out(),
        meta: batch.trials.iter().map(|t| t.meta).collect(),
    };
    let flat = |f: fn(&Trial) -> &Matrix| -> Vec<f64> {
        batch.trials.iter().flat_map(|t| f(t).data().iter().copied()).collect()
    };
    let inputs = flat(|t| &t.inputs);
    let targets = flat(|t| &t.targets);
    let mask = flat(|t| &t.mask);
    container::write(
        w,
        BATCH_MAGIC,
        serde_json::to_value(&header)?,
        &[("inputs", &inputs), ("targets", &targets), ("mask", &mask)],
    )
}

pub fn read_batch<R: Read>(r: R) -> Result<TrialBatch> {
    let (header, mut blocks) = container::read(r, BATCH_MAGIC)?;
    let h: Header = serde_json::from_value(header)?;
    if h.format != FORMAT || h.version != 1 || h.meta.len() != h.batch {
        return Err(Error::Format("unsupported or inconsistent trial batch header".into()));
    }
    let mut split = |name: &str, width: usize| -> Result<Vec<Matrix>> {
        let data = take_block(&mut blocks, name)?;
        let per = h.steps * width;
        if data.len() != per * h.batch {
            return Err(Error::Format(format!("block {name} has the wrong length")));
        }
        Ok(data
            .chunks(per.max(1))
            .take(h.batch)
            .map(|c| Matrix::from_vec(h.steps, width, c.to_vec()))
            .collect())
    };
    let inputs = split("inputs", h.n_in)?;
    let targets = split("targets", h.n_out)?;
    let mask = split("mask", h.n_out)?;
    let trials = inputs
        .into_iter()
        .zip(targets)
        .zip(mask)
        .zip(h.meta)
        .map(|(((inputs, targets), mask), meta)| Trial {
            inputs,
            targets,
            mask,
            meta,
        })
        .collect();
    Ok(TrialBatch {
        task: h.task,
        trials,
    })
}
