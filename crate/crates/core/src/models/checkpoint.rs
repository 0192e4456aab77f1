//! Model checkpoint file: a versioned, self-describing list of named
//! parameter tensors, with the experiment configuration embedded as text.
//!
//! Layout (integers little-endian):
//!
//! ```text
//! magic        8 bytes "ASRCKPT1"
//! config_len   u32, then config_len bytes of UTF-8 (flat key-value text)
//! n_params     u32
//! per param:
//!   name_len   u32, then name_len bytes of UTF-8
//!   rank       u32
//!   dims       rank x u32
//!   values     prod(dims) x f64
//! ```

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

const MAGIC: &[u8; 8] = b"ASRCKPT1";

pub struct LoadedCheckpoint {
    pub config_text: String,
    pub params: BTreeMap<String, (Vec<usize>, Vec<f64>)>,
}

pub fn save_checkpoint(path: &Path, config_text: &str, params: &[(String, Tensor)]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    let cfg = config_text.as_bytes();
    w.write_all(&(cfg.len() as u32).to_le_bytes())?;
    w.write_all(cfg)?;
    w.write_all(&(params.len() as u32).to_le_bytes())?;
    for (name, t) in params {
        let nb = name.as_bytes();
        w.write_all(&(nb.len() as u32).to_le_bytes())?;
        w.write_all(nb)?;
        w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for v in t.values().iter() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_string(r: &mut impl Read) -> Result<String> {
    let len = read_u32(r)? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| Error::Checkpoint(format!("bad UTF-8: {e}")))
}

pub fn load_checkpoint(path: &Path) -> Result<LoadedCheckpoint> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad checkpoint magic".into()));
    }
    let config_text = read_string(&mut r)?;
    let n = read_u32(&mut r)? as usize;
    let mut params = BTreeMap::new();
    for _ in 0..n {
        let name = read_string(&mut r)?;
        let rank = read_u32(&mut r)? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(read_u32(&mut r)? as usize);
        }
        let count: usize = dims.iter().product();
        let mut values = vec![0.0; count];
        for v in values.iter_mut() {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            *v = f64::from_le_bytes(b);
        }
        params.insert(name, (dims, values));
    }
    Ok(LoadedCheckpoint {
        config_text,
        params,
    })
}

/// Copy loaded values into a model's parameter set. Every name must match
/// with identical shape on both sides; offenders are listed in the error.
pub fn apply_checkpoint(params: &[(String, Tensor)], loaded: &LoadedCheckpoint) -> Result<()> {
    let mut problems = Vec::new();
    for (name, t) in params {
        match loaded.params.get(name) {
            None => problems.push(format!("missing: {name}")),
            Some((dims, values)) => {
                if dims != t.shape() {
                    problems.push(format!(
                        "shape mismatch: {name} expects {:?}, file has {:?}",
                        t.shape(),
                        dims
                    ));
                } else {
                    t.set_values(values);
                }
            }
        }
    }
    let have: std::collections::BTreeSet<&str> = params.iter().map(|(n, _)| n.as_str()).collect();
    for name in loaded.params.keys() {
        if !have.contains(name.as_str()) {
            problems.push(format!("unexpected: {name}"));
        }
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(Error::Checkpoint(problems.join("; ")))
    }
}
