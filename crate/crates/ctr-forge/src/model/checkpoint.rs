//! Versioned binary checkpoints.
//!
//! Layout: magic `CTRCKPT1`, a config block of little-endian u64s (scalar
//! fields, then the CIN/DNN size lists and per-field vocab sizes, each
//! length-prefixed), then every tensor in registration order as
//! (name length, name bytes, rows, cols, row-major little-endian f64s).

use super::{FirstOrderHead, ModelConfig, ModelParams};
use crate::error::{CtrError, Result};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"CTRCKPT1";

fn write_u64(w: &mut impl Write, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn read_u64_bounded(r: &mut impl Read, what: &str, bound: u64) -> Result<usize> {
    let v = read_u64(r)?;
    if v > bound {
        return Err(CtrError::Parse(format!(
            "checkpoint field {what} = {v} exceeds sanity bound {bound}"
        )));
    }
    Ok(v as usize)
}

pub fn save(params: &ModelParams, w: &mut impl Write) -> Result<()> {
    let cfg = &params.config;
    w.write_all(MAGIC)?;
    write_u64(w, cfg.n_cat_fields as u64)?;
    write_u64(w, cfg.n_dense_fields as u64)?;
    write_u64(w, cfg.embed_dim as u64)?;
    write_u64(w, cfg.num_heads as u64)?;
    write_u64(w, cfg.use_attention as u64)?;
    write_u64(
        w,
        match cfg.first_order_head {
            FirstOrderHead::Fm => 0,
            FirstOrderHead::Lr => 1,
        },
    )?;
    write_u64(w, cfg.freeze_cin_weight as u64)?;
    write_u64(w, cfg.freeze_dnn_weight as u64)?;
    write_u64(w, cfg.seed)?;
    write_u64(w, cfg.cin_layers.len() as u64)?;
    for &h in &cfg.cin_layers {
        write_u64(w, h as u64)?;
    }
    write_u64(w, cfg.dnn_layers.len() as u64)?;
    for &h in &cfg.dnn_layers {
        write_u64(w, h as u64)?;
    }
    for &v in &params.cat_vocab_sizes {
        write_u64(w, v as u64)?;
    }

    write_u64(w, params.set.len() as u64)?;
    for p in params.set.iter() {
        write_u64(w, p.name.len() as u64)?;
        w.write_all(p.name.as_bytes())?;
        write_u64(w, p.value.rows() as u64)?;
        write_u64(w, p.value.cols() as u64)?;
        for &v in p.value.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn load(r: &mut impl Read) -> Result<ModelParams> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CtrError::Parse(format!(
            "bad checkpoint magic {:?} (want {:?})",
            String::from_utf8_lossy(&magic),
            String::from_utf8_lossy(MAGIC)
        )));
    }

    const DIM_BOUND: u64 = 1 << 32;
    let n_cat = read_u64_bounded(r, "n_cat_fields", DIM_BOUND)?;
    let n_dense = read_u64_bounded(r, "n_dense_fields", DIM_BOUND)?;
    let embed_dim = read_u64_bounded(r, "embed_dim", DIM_BOUND)?;
    let num_heads = read_u64_bounded(r, "num_heads", DIM_BOUND)?;
    let use_attention = read_u64(r)? != 0;
    let first_order_head = match read_u64(r)? {
        0 => FirstOrderHead::Fm,
        1 => FirstOrderHead::Lr,
        v => return Err(CtrError::Parse(format!("bad head code {v}"))),
    };
    let freeze_cin_weight = read_u64(r)? != 0;
    let freeze_dnn_weight = read_u64(r)? != 0;
    let seed = read_u64(r)?;
    let cin_len = read_u64_bounded(r, "cin layer count", 1 << 16)?;
    let cin_layers = (0..cin_len)
        .map(|_| read_u64_bounded(r, "cin size", DIM_BOUND))
        .collect::<Result<Vec<_>>>()?;
    let dnn_len = read_u64_bounded(r, "dnn layer count", 1 << 16)?;
    let dnn_layers = (0..dnn_len)
        .map(|_| read_u64_bounded(r, "dnn size", DIM_BOUND))
        .collect::<Result<Vec<_>>>()?;
    let cat_vocab_sizes = (0..n_cat)
        .map(|_| read_u64_bounded(r, "vocab size", DIM_BOUND))
        .collect::<Result<Vec<_>>>()?;

    let config = ModelConfig {
        n_cat_fields: n_cat,
        n_dense_fields: n_dense,
        embed_dim,
        cin_layers,
        num_heads,
        dnn_layers,
        use_attention,
        first_order_head,
        freeze_cin_weight,
        freeze_dnn_weight,
        seed,
    };
    let mut params = ModelParams::init(&config, &cat_vocab_sizes)?;

    let tensor_count = read_u64_bounded(r, "tensor count", 1 << 24)?;
    if tensor_count != params.set.len() {
        return Err(CtrError::Parse(format!(
            "checkpoint has {tensor_count} tensors, config implies {}",
            params.set.len()
        )));
    }
    for id in params.set.ids().collect::<Vec<_>>() {
        let name_len = read_u64_bounded(r, "name length", 1 << 16)?;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| CtrError::Parse("tensor name is not UTF-8".into()))?;
        let rows = read_u64_bounded(r, "rows", DIM_BOUND)?;
        let cols = read_u64_bounded(r, "cols", DIM_BOUND)?;
        let p = params.set.get_mut(id);
        if p.name != name || p.value.shape() != (rows, cols) {
            return Err(CtrError::Parse(format!(
                "tensor `{name}` ({rows}x{cols}) does not match expected `{}` ({}x{})",
                p.name,
                p.value.rows(),
                p.value.cols()
            )));
        }
        let mut buf = [0u8; 8];
        for v in p.value.data_mut() {
            r.read_exact(&mut buf)?;
            *v = f64::from_le_bytes(buf);
        }
    }
    Ok(params)
}

pub fn save_to_path(params: &ModelParams, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    save(params, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_from_path(path: &Path) -> Result<ModelParams> {
    let mut r = BufReader::new(File::open(path)?);
    load(&mut r)
}
