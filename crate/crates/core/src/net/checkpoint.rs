//! Checkpoints: one JSON header line, then little-endian f64 parameters,
//! followed by the optimizer moments when present.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AdamW, AdamWConfig, NetConfig, ScoreModel};
use crate::lie::GroupKind;
use crate::score::Score;
use crate::{Error, Result};

const MAGIC: &str = "tdm-checkpoint";

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    kind: GroupKind,
    hidden: usize,
    depth: usize,
    time_scale: f64,
    gn_eps: f64,
    iteration: u64,
    n_params: usize,
    optimizer: Option<OptHeader>,
    #[serde(default)]
    meta: serde_json::Value,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct OptHeader {
    cfg: AdamWConfig,
    step: u64,
}

/// A model with its optimizer state and free-form run metadata.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: ScoreModel,
    pub optimizer: Option<AdamW>,
    pub iteration: u64,
    pub meta: serde_json::Value,
}

fn write_f64s(w: &mut impl Write, xs: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(8 * xs.len());
    for x in xs {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

fn read_f64s(r: &mut impl Read, n: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; 8 * n];
    r.read_exact(&mut buf).map_err(|e| Error::Format(format!("truncated checkpoint: {e}")))?;
    Ok(buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    let cfg = ck.model.config();
    let header = Header {
        format: MAGIC.into(),
        version: 1,
        kind: ck.model.kind().clone(),
        hidden: cfg.hidden,
        depth: cfg.depth,
        time_scale: cfg.time_scale,
        gn_eps: cfg.gn_eps,
        iteration: ck.iteration,
        n_params: ck.model.n_params(),
        optimizer: ck.optimizer.as_ref().map(|o| OptHeader { cfg: o.cfg.clone(), step: o.step }),
        meta: ck.meta.clone(),
    };
    let tmp = path.with_extension("tmp");
    {
        let mut w = std::io::BufWriter::new(std::fs::File::create(&tmp)?);
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n")?;
        write_f64s(&mut w, ck.model.params())?;
        if let Some(o) = &ck.optimizer {
            write_f64s(&mut w, &o.m)?;
            write_f64s(&mut w, &o.v)?;
        }
        w.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let mut line = String::new();
    r.read_line(&mut line)?;
    let header: Header = serde_json::from_str(line.trim_end())?;
    if header.format != MAGIC {
        return Err(Error::Format(format!("not a checkpoint: format {:?}", header.format)));
    }
    let cfg = NetConfig { hidden: header.hidden, depth: header.depth, time_scale: header.time_scale, gn_eps: header.gn_eps };
    let params = read_f64s(&mut r, header.n_params)?;
    let model = ScoreModel::from_params(header.kind, cfg, params)?;
    let optimizer = match header.optimizer {
        Some(oh) => {
            let m = read_f64s(&mut r, header.n_params)?;
            let v = read_f64s(&mut r, header.n_params)?;
            Some(AdamW { cfg: oh.cfg, m, v, step: oh.step })
        }
        None => None,
    };
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::Format(format!("{} trailing bytes in checkpoint", rest.len())));
    }
    Ok(Checkpoint { model, optimizer, iteration: header.iteration, meta: header.meta })
}
