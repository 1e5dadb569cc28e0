//! The `FNC` checkpoint container.
//!
//! A little-endian `u32` entry count followed by, per entry, a `u16` name
//! length, the UTF-8 name and an embedded `FNT` tensor. Entries are written in
//! name order. The entry `meta.arch` holds the architecture as
//! `[kind, du, df, dv, L, B, K, M, q_activation, grid]`, with kinds numbered
//! `fno, fno++, fno-wt, fno-deq` from zero, `q_activation` 0 for GELU and
//! 1 for identity, and `grid` 1 when coordinate channels are appended.
//! The entry `meta.norm` holds the normalizer as
//! `[in_mean (df), in_std (df), out_mean (du), out_std (du)]`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{ArchConfig, ArchKind, Model, OutputActivation};
use crate::error::{Error, Result};
use crate::format::{read_tensor, write_tensor};
use crate::tensor::Tensor;

const META: &str = "meta.arch";
const NORM: &str = "meta.norm";

fn arch_tensor(c: &ArchConfig) -> Tensor {
    let act = match c.output_activation {
        OutputActivation::Gelu => 0.0,
        OutputActivation::Identity => 1.0,
    };
    let v = [
        c.kind.code() as f64,
        c.du as f64,
        c.df as f64,
        c.dv as f64,
        c.layers as f64,
        c.blocks as f64,
        c.modes as f64,
        c.unroll as f64,
        act,
        c.grid as u8 as f64,
    ];
    Tensor::new(vec![v.len()], v.to_vec()).expect("fixed length")
}

fn arch_from_tensor(t: &Tensor) -> Result<ArchConfig> {
    let d = t.data();
    if d.len() != 10 || d.iter().any(|x| *x < 0.0 || x.fract() != 0.0) {
        return Err(Error::Format(format!("malformed {META} entry")));
    }
    let u = |i: usize| d[i] as usize;
    Ok(ArchConfig {
        kind: ArchKind::from_code(d[0] as u8)?,
        du: u(1),
        df: u(2),
        dv: u(3),
        layers: u(4),
        blocks: u(5),
        modes: u(6),
        unroll: u(7),
        output_activation: match u(8) {
            0 => OutputActivation::Gelu,
            1 => OutputActivation::Identity,
            other => return Err(Error::Format(format!("unknown output activation code {other}"))),
        },
        grid: match u(9) {
            0 => false,
            1 => true,
            other => return Err(Error::Format(format!("unknown grid flag {other}"))),
        },
    })
}

pub fn write_checkpoint<W: Write>(w: &mut W, model: &Model) -> Result<()> {
    let mut entries: BTreeMap<&str, Tensor> = model.params.iter().map(|(k, v)| (k.as_str(), v.clone())).collect();
    entries.insert(META, arch_tensor(&model.config));
    entries.insert(NORM, model.norm.to_tensor());
    w.write_all(&(entries.len() as u32).to_le_bytes())?;
    for (name, t) in entries {
        let bytes = name.as_bytes();
        let len = u16::try_from(bytes.len()).map_err(|_| Error::Format(format!("name too long: {name}")))?;
        w.write_all(&len.to_le_bytes())?;
        w.write_all(bytes)?;
        write_tensor(w, &t)?;
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<Model> {
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let n = u32::from_le_bytes(b4);
    let mut params = BTreeMap::new();
    let mut config = None;
    let mut norm = None;
    for _ in 0..n {
        let mut b2 = [0u8; 2];
        r.read_exact(&mut b2)?;
        let mut name = vec![0u8; u16::from_le_bytes(b2) as usize];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| Error::Format("entry name is not UTF-8".into()))?;
        let t = read_tensor(r)?;
        if name == META {
            config = Some(arch_from_tensor(&t)?);
        } else if name == NORM {
            norm = Some(t);
        } else if params.insert(name.clone(), t).is_some() {
            return Err(Error::Format(format!("duplicate entry '{name}'")));
        }
    }
    let config = config.ok_or_else(|| Error::Format(format!("checkpoint lacks {META}")))?;
    let norm = norm.ok_or_else(|| Error::Format(format!("checkpoint lacks {NORM}")))?;
    let norm = super::Normalizer::from_tensor(&norm, config.df, config.du)?;
    let model = Model { config, params, norm };
    model.validate()?;
    Ok(model)
}

pub fn save_checkpoint(path: impl AsRef<Path>, model: &Model) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(&mut w, model)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Model> {
    read_checkpoint(&mut BufReader::new(File::open(path)?))
}
