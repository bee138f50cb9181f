//! Checkpoint file format: magic "PPGT", version u16, then per-tensor
//! records (name length + name bytes + rank + extents + little-endian f32
//! payload).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::nn::ParamBank;
use super::Tensor;
use crate::error::{PpgtaError, Result};

const MAGIC: &[u8; 4] = b"PPGT";
const VERSION: u16 = 1;

pub fn save(bank: &ParamBank, path: &Path) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(bank.len() as u32).to_le_bytes())?;
        for (name, t) in bank.iter_named() {
            let nb = name.as_bytes();
            w.write_all(&(nb.len() as u16).to_le_bytes())?;
            w.write_all(nb)?;
            w.write_all(&[t.shape.len() as u8])?;
            for &e in &t.shape {
                w.write_all(&(e as u32).to_le_bytes())?;
            }
            for &v in &t.data {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_records(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let corrupt = |reason: &str| PpgtaError::CorruptFile {
        path: path.display().to_string(),
        reason: reason.to_string(),
    };
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| corrupt("truncated header"))?;
    if &magic != MAGIC {
        return Err(corrupt("bad magic"));
    }
    let mut buf2 = [0u8; 2];
    r.read_exact(&mut buf2).map_err(|_| corrupt("truncated version"))?;
    if u16::from_le_bytes(buf2) != VERSION {
        return Err(corrupt("unsupported version"));
    }
    let mut buf4 = [0u8; 4];
    r.read_exact(&mut buf4).map_err(|_| corrupt("truncated count"))?;
    let count = u32::from_le_bytes(buf4);
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        r.read_exact(&mut buf2).map_err(|_| corrupt("truncated record"))?;
        let name_len = u16::from_le_bytes(buf2) as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name).map_err(|_| corrupt("truncated name"))?;
        let name = String::from_utf8(name).map_err(|_| corrupt("non-utf8 name"))?;
        let mut rank = [0u8; 1];
        r.read_exact(&mut rank).map_err(|_| corrupt("truncated rank"))?;
        let mut shape = Vec::with_capacity(rank[0] as usize);
        for _ in 0..rank[0] {
            r.read_exact(&mut buf4).map_err(|_| corrupt("truncated extent"))?;
            shape.push(u32::from_le_bytes(buf4) as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            r.read_exact(&mut buf4).map_err(|_| corrupt("truncated payload"))?;
            data.push(f32::from_le_bytes(buf4));
        }
        out.push((name, Tensor::from_vec(&shape, data)));
    }
    Ok(out)
}

/// Loads a checkpoint into an already-constructed bank by name.
pub fn load_into(bank: &mut ParamBank, path: &Path) -> Result<()> {
    let records = load_records(path)?;
    for (name, t) in records {
        let idx = bank.index_of(&name).ok_or_else(|| PpgtaError::CorruptFile {
            path: path.display().to_string(),
            reason: format!("unknown parameter {name}"),
        })?;
        if bank.value(idx).shape != t.shape {
            return Err(PpgtaError::CorruptFile {
                path: path.display().to_string(),
                reason: format!("shape mismatch for {name}"),
            });
        }
        *bank.value_mut(idx) = t;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn sample_bank() -> ParamBank {
        let mut rng = crate::rng::stream(3, "ckpt.test");
        let mut bank = ParamBank::new();
        bank.add("enc.w", Tensor::from_vec(&[2, 3], (0..6).map(|_| rng.gen()).collect()));
        bank.add("enc.b", Tensor::from_vec(&[3], (0..3).map(|_| rng.gen()).collect()));
        bank
    }

    #[test]
    fn roundtrip_preserves_names_shapes_and_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ppgt");
        let bank = sample_bank();
        save(&bank, &path).unwrap();
        let records = load_records(&path).unwrap();
        assert_eq!(records.len(), 2);
        assert_eq!(records[0].0, "enc.w");
        assert_eq!(records[0].1.shape, vec![2, 3]);
        assert_eq!(records[0].1.data, bank.value(0).data);
        assert_eq!(records[1].1.data, bank.value(1).data);

        let mut other = sample_bank();
        other.value_mut(0).data.iter_mut().for_each(|v| *v = 0.0);
        load_into(&mut other, &path).unwrap();
        assert_eq!(other.value(0).data, bank.value(0).data);
    }

    #[test]
    fn bad_magic_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ppgt");
        std::fs::write(&path, b"NOPE\x01\x00\x00\x00\x00\x00").unwrap();
        assert!(matches!(
            load_records(&path),
            Err(PpgtaError::CorruptFile { .. })
        ));
    }

    #[test]
    fn truncated_payload_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ppgt");
        save(&sample_bank(), &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(
            load_records(&path),
            Err(PpgtaError::CorruptFile { .. })
        ));
    }

    #[test]
    fn unknown_parameter_is_rejected_on_load_into() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ppgt");
        save(&sample_bank(), &path).unwrap();
        let mut other = ParamBank::new();
        other.add("different", Tensor::zeros(&[2]));
        assert!(load_into(&mut other, &path).is_err());
    }
}
