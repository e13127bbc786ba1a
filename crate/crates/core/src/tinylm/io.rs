//! Versioned binary weight container.
//!
//! Layout (all little-endian): magic `TLM1`, version u32, then the config
//! as seven fields (n_layers, d_model, n_heads, d_ff, vocab_size, max_seq
//! as u32; seed as u64), then raw f32 parameter blocks in the order given
//! by [`Weights::block_names`].

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

use super::{ModelConfig, Weights};

const MAGIC: &[u8; 4] = b"TLM1";
const VERSION: u32 = 1;

pub(crate) fn config_bytes(config: &ModelConfig) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 * 6 + 8);
    for v in [
        config.n_layers,
        config.d_model,
        config.n_heads,
        config.d_ff,
        config.vocab_size,
        config.max_seq,
    ] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&config.seed.to_le_bytes());
    out
}

pub fn save_weights(path: &Path, weights: &Weights) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&config_bytes(&weights.config))?;
    for block in weights.blocks() {
        for v in block {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

pub fn load_weights(path: &Path) -> Result<Weights> {
    let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    file.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::WeightFile(format!(
            "bad magic {magic:?}, expected {MAGIC:?}"
        )));
    }
    let version = read_u32(&mut file)?;
    if version != VERSION {
        return Err(Error::WeightFile(format!("unsupported version {version}")));
    }
    let config = ModelConfig {
        n_layers: read_u32(&mut file)? as usize,
        d_model: read_u32(&mut file)? as usize,
        n_heads: read_u32(&mut file)? as usize,
        d_ff: read_u32(&mut file)? as usize,
        vocab_size: read_u32(&mut file)? as usize,
        max_seq: read_u32(&mut file)? as usize,
        seed: {
            let mut buf = [0u8; 8];
            file.read_exact(&mut buf)?;
            u64::from_le_bytes(buf)
        },
    };
    config.validate()?;

    let mut weights = Weights::init(&config)?;
    for block in weights.blocks_mut() {
        let mut bytes = vec![0u8; block.len() * 4];
        file.read_exact(&mut bytes)?;
        for (i, v) in block.iter_mut().enumerate() {
            *v = f32::from_le_bytes(bytes[i * 4..i * 4 + 4].try_into().expect("4 bytes"));
        }
    }
    let mut rest = [0u8; 1];
    if file.read(&mut rest)? != 0 {
        return Err(Error::WeightFile("trailing bytes after blocks".into()));
    }
    weights.validate_finite()?;
    Ok(weights)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ModelConfig {
        ModelConfig {
            n_layers: 2,
            d_model: 8,
            n_heads: 2,
            d_ff: 16,
            vocab_size: 13,
            max_seq: 10,
            seed: 99,
        }
    }

    #[test]
    fn weight_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("weights.bin");
        let w = Weights::init(&cfg()).unwrap();
        save_weights(&path, &w).unwrap();
        let back = load_weights(&path).unwrap();
        assert_eq!(back.config, w.config);
        for (a, b) in w.blocks().iter().zip(back.blocks().iter()) {
            assert_eq!(a, b);
        }
        assert_eq!(w.content_hash(), back.content_hash());
    }

    #[test]
    fn bad_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("weights.bin");
        std::fs::write(&path, b"NOPE0000").unwrap();
        assert!(matches!(load_weights(&path), Err(Error::WeightFile(_))));
    }

    #[test]
    fn truncated_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("weights.bin");
        let w = Weights::init(&cfg()).unwrap();
        save_weights(&path, &w).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 8]).unwrap();
        assert!(load_weights(&path).is_err());
    }

    #[test]
    fn non_finite_values_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("weights.bin");
        let mut w = Weights::init(&cfg()).unwrap();
        w.wun[3] = f32::NAN;
        save_weights(&path, &w).unwrap();
        assert!(matches!(load_weights(&path), Err(Error::WeightFile(_))));
    }
}
