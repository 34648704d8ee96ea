//! Self-describing parameter container.
//!
//! Layout: 8-byte magic, u32 little-endian header length, JSON header
//! (tensor names/shapes, step counter, RNG seed, free-form meta), then for
//! each tensor its values followed by the two Adam moment arrays, all raw
//! little-endian f64.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::params::ParamStore;
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"NTALNCK1";

#[derive(Serialize, Deserialize)]
struct Header {
    step: u64,
    seed: u64,
    tensors: Vec<TensorEntry>,
    #[serde(default)]
    meta: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
}

pub fn save(path: &Path, store: &ParamStore, meta: &BTreeMap<String, String>) -> Result<()> {
    let ctx = || format!("writing checkpoint {}", path.display());
    let file = File::create(path).map_err(|e| Error::io(ctx(), e))?;
    let mut w = BufWriter::new(file);

    let tensors: Vec<TensorEntry> = store
        .ids()
        .map(|id| {
            let t = store.get(id);
            TensorEntry {
                name: store.name(id).to_string(),
                rows: t.rows(),
                cols: t.cols(),
            }
        })
        .collect();
    let header = Header {
        step: store.step(),
        seed: store.seed(),
        tensors,
        meta: meta.clone(),
    };
    let header_json = serde_json::to_vec(&header)
        .map_err(|e| Error::Invalid(format!("checkpoint header: {e}")))?;

    w.write_all(MAGIC).map_err(|e| Error::io(ctx(), e))?;
    w.write_all(&(header_json.len() as u32).to_le_bytes())
        .map_err(|e| Error::io(ctx(), e))?;
    w.write_all(&header_json).map_err(|e| Error::io(ctx(), e))?;
    for id in store.ids() {
        write_f64s(&mut w, store.get(id).data()).map_err(|e| Error::io(ctx(), e))?;
        let (m, v) = store.moments(id);
        write_f64s(&mut w, m).map_err(|e| Error::io(ctx(), e))?;
        write_f64s(&mut w, v).map_err(|e| Error::io(ctx(), e))?;
    }
    w.flush().map_err(|e| Error::io(ctx(), e))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(ParamStore, BTreeMap<String, String>)> {
    let ctx = || format!("reading checkpoint {}", path.display());
    let file = File::open(path).map_err(|e| Error::io(ctx(), e))?;
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|e| Error::io(ctx(), e))?;
    if &magic != MAGIC {
        return Err(Error::Invalid(format!(
            "{}: not a parameter checkpoint",
            path.display()
        )));
    }
    let mut len_bytes = [0u8; 4];
    r.read_exact(&mut len_bytes).map_err(|e| Error::io(ctx(), e))?;
    let header_len = u32::from_le_bytes(len_bytes) as usize;
    let mut header_json = vec![0u8; header_len];
    r.read_exact(&mut header_json).map_err(|e| Error::io(ctx(), e))?;
    let header: Header = serde_json::from_slice(&header_json)
        .map_err(|e| Error::Invalid(format!("{}: bad header: {e}", path.display())))?;

    let mut store = ParamStore::new(header.seed);
    for entry in &header.tensors {
        let n = entry.rows * entry.cols;
        let data = read_f64s(&mut r, n).map_err(|e| Error::io(ctx(), e))?;
        let m = read_f64s(&mut r, n).map_err(|e| Error::io(ctx(), e))?;
        let v = read_f64s(&mut r, n).map_err(|e| Error::io(ctx(), e))?;
        let id = store.register(&entry.name, Tensor::from_vec(data, entry.rows, entry.cols)?)?;
        store.set_moments(id, m, v)?;
    }
    store.set_step(header.step);
    Ok((store, header.meta))
}

fn write_f64s<W: Write>(w: &mut W, data: &[f64]) -> std::io::Result<()> {
    for x in data {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> std::io::Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::tape::Grads;

    #[test]
    fn roundtrip_preserves_tensors_moments_and_counters() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bank.ckpt");

        let mut store = ParamStore::new(99);
        let a = store
            .register("x", Tensor::from_vec(vec![1.0, -2.5, 3.25, 0.0], 2, 2).unwrap())
            .unwrap();
        store.register("b", Tensor::zeros(3, 1)).unwrap();
        let mut grads = Grads::new(store.len());
        grads.accumulate(a, 0, &[0.1, 0.2, 0.3, 0.4]);
        store.adam_step(&grads, 0.01).unwrap();

        let mut meta = BTreeMap::new();
        meta.insert("config_hash".to_string(), "deadbeef".to_string());
        save(&path, &store, &meta).unwrap();
        let (loaded, got_meta) = load(&path).unwrap();

        assert_eq!(loaded.step(), store.step());
        assert_eq!(loaded.seed(), 99);
        assert_eq!(got_meta.get("config_hash").unwrap(), "deadbeef");
        for id in store.ids() {
            let lid = loaded.id_of(store.name(id)).unwrap();
            assert_eq!(loaded.get(lid).data(), store.get(id).data());
            assert_eq!(loaded.moments(lid), store.moments(id));
        }
    }

    #[test]
    fn rejects_foreign_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.ckpt");
        std::fs::write(&path, b"definitely not a checkpoint").unwrap();
        assert!(load(&path).is_err());
    }
}
