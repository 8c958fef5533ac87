//! Parameter and optimizer files.
//!
//! Both start with an ASCII header line. Each record is a text line naming
//! the tensor and its shape, followed by its values as little-endian f64.
//!
//! ```text
//! CKPT1 <n>
//! <name> <frozen 0|1> <ndim> <dims...>      then numel × 8 bytes
//!
//! ADAMW1 <n> <step> <lr> <beta1> <beta2> <eps> <weight_decay>
//! <name> <ndim> <dims...>                   then m and v, numel × 8 bytes each
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::{AdamW, AdamWConfig, Moments, NnError, ParamStore, Tensor};
use crate::textfmt::{join_fields, split_fields};

const CKPT_MAGIC: &str = "CKPT1";
const OPT_MAGIC: &str = "ADAMW1";
const MAX_LINE: usize = 4096;

fn fmt_err(m: impl Into<String>) -> NnError {
    NnError::Format(m.into())
}

fn push_values(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn write_checkpoint(store: &ParamStore) -> Vec<u8> {
    let mut out = format!("{CKPT_MAGIC} {}\n", store.len()).into_bytes();
    for (_, p) in store.iter() {
        let mut fields = vec![p.name.clone(), (p.frozen as u8).to_string(), p.value.shape().len().to_string()];
        fields.extend(p.value.shape().iter().map(|d| d.to_string()));
        out.extend_from_slice(join_fields(&fields).as_bytes());
        out.push(b'\n');
        push_values(&mut out, p.value.data());
    }
    out
}

pub fn save_checkpoint(store: &ParamStore, path: impl AsRef<Path>) -> Result<(), NnError> {
    fs::write(path, write_checkpoint(store))?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn line(&mut self) -> Result<Vec<String>, NnError> {
        let rest = &self.bytes[self.pos..];
        let end = rest
            .iter()
            .take(MAX_LINE)
            .position(|&b| b == b'\n')
            .ok_or_else(|| fmt_err(format!("expected a header line at byte {}", self.pos)))?;
        let text = std::str::from_utf8(&rest[..end]).map_err(|_| fmt_err("header line is not UTF-8"))?;
        self.pos += end + 1;
        split_fields(text).map_err(fmt_err)
    }

    fn values(&mut self, n: usize) -> Result<Vec<f64>, NnError> {
        let len = n.checked_mul(8).ok_or_else(|| fmt_err("tensor too large"))?;
        if self.bytes.len() - self.pos < len {
            return Err(fmt_err(format!("truncated: need {len} bytes at byte {}", self.pos)));
        }
        let vals = self.bytes[self.pos..self.pos + len]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        self.pos += len;
        Ok(vals)
    }

    fn finish(&self) -> Result<(), NnError> {
        if self.pos != self.bytes.len() {
            return Err(fmt_err(format!("{} trailing bytes", self.bytes.len() - self.pos)));
        }
        Ok(())
    }
}

fn parse_num<T: std::str::FromStr>(s: &str, what: &str) -> Result<T, NnError> {
    s.parse().map_err(|_| fmt_err(format!("bad {what} {s:?}")))
}

/// `ndim` then `dims` starting at `fields[0]`.
fn parse_shape(fields: &[String]) -> Result<(Vec<usize>, usize), NnError> {
    let ndim: usize = parse_num(fields.first().ok_or_else(|| fmt_err("missing ndim"))?, "ndim")?;
    if fields.len() != ndim + 1 || ndim == 0 {
        return Err(fmt_err(format!("shape with {ndim} dims has {} fields", fields.len() - 1)));
    }
    let dims: Vec<usize> = fields[1..].iter().map(|d| parse_num(d, "dimension")).collect::<Result<_, _>>()?;
    let mut numel = 1usize;
    for &d in &dims {
        if d == 0 {
            return Err(fmt_err("zero dimension"));
        }
        numel = numel.checked_mul(d).ok_or_else(|| fmt_err("tensor too large"))?;
    }
    Ok((dims, numel))
}

fn header(cur: &mut Cursor<'_>, magic: &str, min_fields: usize) -> Result<Vec<String>, NnError> {
    let h = cur.line()?;
    if h.first().map(String::as_str) != Some(magic) {
        return Err(fmt_err(format!("expected {magic} header")));
    }
    if h.len() != min_fields {
        return Err(fmt_err(format!("{magic} header has {} fields, expected {min_fields}", h.len())));
    }
    Ok(h)
}

pub fn parse_checkpoint(bytes: &[u8]) -> Result<ParamStore, NnError> {
    let mut cur = Cursor { bytes, pos: 0 };
    let h = header(&mut cur, CKPT_MAGIC, 2)?;
    let n: usize = parse_num(&h[1], "parameter count")?;
    let mut store = ParamStore::new();
    for _ in 0..n {
        let fields = cur.line()?;
        if fields.len() < 3 {
            return Err(fmt_err("parameter line needs name, frozen flag and shape"));
        }
        let frozen = match fields[1].as_str() {
            "0" => false,
            "1" => true,
            other => return Err(fmt_err(format!("bad frozen flag {other:?}"))),
        };
        let (shape, numel) = parse_shape(&fields[2..])?;
        let values = cur.values(numel)?;
        store
            .add(fields[0].clone(), Tensor::new(shape, values)?, frozen)
            .map_err(|e| fmt_err(e.to_string()))?;
    }
    cur.finish()?;
    Ok(store)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ParamStore, NnError> {
    parse_checkpoint(&fs::read(path)?)
}

/// Copy values from `loaded` into `store`. Shared names must agree in shape;
/// names only in `loaded` are appended with their stored frozen flag. The
/// frozen flag of a shared name comes from `store`. Returns how many values
/// were overwritten.
pub fn merge_into(store: &mut ParamStore, loaded: &ParamStore) -> Result<usize, NnError> {
    for (_, p) in loaded.iter() {
        if let Some(existing) = store.by_name(&p.name) {
            if existing.value.shape() != p.value.shape() {
                return Err(NnError::CheckpointMismatch {
                    name: p.name.clone(),
                    expected: existing.value.shape().to_vec(),
                    found: p.value.shape().to_vec(),
                });
            }
        }
    }
    let mut overwritten = 0;
    for (_, p) in loaded.iter() {
        match store.id(&p.name) {
            Some(id) => {
                store.get_mut(id).value = p.value.clone();
                overwritten += 1;
            }
            None => {
                store.add(p.name.clone(), p.value.clone(), p.frozen)?;
            }
        }
    }
    Ok(overwritten)
}

pub fn write_optimizer(opt: &AdamW) -> Vec<u8> {
    let c = opt.config;
    let mut out = format!(
        "{OPT_MAGIC} {} {} {} {} {} {} {}\n",
        opt.moments().len(),
        opt.step_count(),
        c.lr,
        c.beta1,
        c.beta2,
        c.eps,
        c.weight_decay
    )
    .into_bytes();
    for (name, mo) in opt.moments() {
        let mut fields = vec![name.clone(), mo.shape.len().to_string()];
        fields.extend(mo.shape.iter().map(|d| d.to_string()));
        out.extend_from_slice(join_fields(&fields).as_bytes());
        out.push(b'\n');
        push_values(&mut out, &mo.m);
        push_values(&mut out, &mo.v);
    }
    out
}

pub fn save_optimizer(opt: &AdamW, path: impl AsRef<Path>) -> Result<(), NnError> {
    fs::write(path, write_optimizer(opt))?;
    Ok(())
}

pub fn parse_optimizer(bytes: &[u8]) -> Result<AdamW, NnError> {
    let mut cur = Cursor { bytes, pos: 0 };
    let h = header(&mut cur, OPT_MAGIC, 8)?;
    let n: usize = parse_num(&h[1], "entry count")?;
    let step: u64 = parse_num(&h[2], "step")?;
    let f = |i: usize, what: &str| -> Result<f64, NnError> {
        let v: f64 = parse_num(&h[i], what)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(fmt_err(format!("{what} must be finite")))
        }
    };
    let config = AdamWConfig {
        lr: f(3, "lr")?,
        beta1: f(4, "beta1")?,
        beta2: f(5, "beta2")?,
        eps: f(6, "eps")?,
        weight_decay: f(7, "weight decay")?,
    };
    let mut moments = BTreeMap::new();
    for _ in 0..n {
        let fields = cur.line()?;
        if fields.len() < 2 {
            return Err(fmt_err("moment line needs name and shape"));
        }
        let (shape, numel) = parse_shape(&fields[1..])?;
        let m = cur.values(numel)?;
        let v = cur.values(numel)?;
        if moments.insert(fields[0].clone(), Moments { shape, m, v }).is_some() {
            return Err(fmt_err(format!("duplicate moment entry {:?}", fields[0])));
        }
    }
    cur.finish()?;
    Ok(AdamW::from_parts(config, step, moments))
}

pub fn load_optimizer(path: impl AsRef<Path>) -> Result<AdamW, NnError> {
    parse_optimizer(&fs::read(path)?)
}
