//! Binary checkpoints.
//!
//! Layout, all little-endian: magic `MWBP`, format version `u32`, entry
//! count `u32`, then per entry a `u16` name length, the UTF-8 name, a dtype
//! code `u8`, `ndim: u8`, `ndim` dims as `u32` and the raw values.
//!
//! Dtype codes: 0 = `f32` (weights and running statistics), 1 = `u64`
//! (architecture and seed), 2 = `f64` (target scaler and preprocessing).
//! Entries named `meta.*` describe the model; all others are weight arrays.

use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use cabp_core::autodiff::Tensor;
use cabp_core::dsp::FilterSpec;
use cabp_core::model::{BlockSpec, Model, ModelConfig};
use cabp_core::train::TargetScaler;

use crate::error::{AppError, AppResult};

pub const MAGIC: &[u8; 4] = b"MWBP";
pub const FORMAT_VERSION: u32 = 1;

const DTYPE_F32: u8 = 0;
const DTYPE_U64: u8 = 1;
const DTYPE_F64: u8 = 2;

/// Preprocessing the model was trained with; evaluation must repeat it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Preprocess {
    pub filter: FilterSpec,
    pub window_s: f64,
}

impl Default for Preprocess {
    fn default() -> Self {
        Self {
            filter: FilterSpec::default(),
            window_s: cabp_core::ingest::WINDOW_S,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model<f32>,
    pub preprocess: Preprocess,
}

#[derive(Debug, Clone, PartialEq)]
enum Data {
    F32(Vec<f32>),
    U64(Vec<u64>),
    F64(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    name: String,
    dims: Vec<usize>,
    data: Data,
}

fn meta_u64(name: &str, dims: &[usize], data: Vec<u64>) -> Entry {
    Entry {
        name: name.into(),
        dims: dims.to_vec(),
        data: Data::U64(data),
    }
}

fn meta_f64(name: &str, data: Vec<f64>) -> Entry {
    Entry {
        name: name.into(),
        dims: vec![data.len()],
        data: Data::F64(data),
    }
}

fn entries(ckpt: &Checkpoint) -> Vec<Entry> {
    let m = &ckpt.model;
    let c = m.config();
    let mut out = vec![
        meta_u64("meta.seed", &[1], vec![m.seed()]),
        meta_u64("meta.channels", &[c.channels_used.len()], c.channels_used.iter().map(|&v| v as u64).collect()),
        meta_u64(
            "meta.blocks",
            &[c.blocks.len(), 3],
            c.blocks.iter().flat_map(|b| [b.kernel, b.channels, b.pool]).map(|v| v as u64).collect(),
        ),
        meta_u64(
            "meta.widths",
            &[6],
            [c.feature_dim, c.attention_dim, c.reg_hidden, c.cls_hidden, c.disc_hidden, c.num_subjects]
                .map(|v| v as u64)
                .to_vec(),
        ),
        meta_u64("meta.heads", &[2], vec![c.enable_cls as u64, c.enable_adv as u64]),
    ];
    let p = ckpt.preprocess;
    out.push(meta_f64(
        "meta.preprocess",
        vec![p.filter.low_hz, p.filter.high_hz, p.filter.order as f64, f64::from(u8::from(p.filter.zero_phase)), p.window_s],
    ));
    if let Some(s) = m.scaler {
        out.push(meta_f64("meta.scaler", vec![s.mean_sbp, s.std_sbp, s.mean_dbp, s.std_dbp]));
    }
    for (name, t) in m.named_arrays() {
        out.push(Entry {
            name,
            dims: t.shape().to_vec(),
            data: Data::F32(t.into_data()),
        });
    }
    out
}

pub fn to_bytes(ckpt: &Checkpoint) -> Vec<u8> {
    let list = entries(ckpt);
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.write_u32::<LE>(FORMAT_VERSION).expect("vec write");
    buf.write_u32::<LE>(list.len() as u32).expect("vec write");
    for e in list {
        buf.write_u16::<LE>(e.name.len() as u16).expect("vec write");
        buf.extend_from_slice(e.name.as_bytes());
        let code = match e.data {
            Data::F32(_) => DTYPE_F32,
            Data::U64(_) => DTYPE_U64,
            Data::F64(_) => DTYPE_F64,
        };
        buf.push(code);
        buf.push(e.dims.len() as u8);
        for d in &e.dims {
            buf.write_u32::<LE>(*d as u32).expect("vec write");
        }
        match e.data {
            Data::F32(v) => v.iter().for_each(|x| buf.write_f32::<LE>(*x).expect("vec write")),
            Data::U64(v) => v.iter().for_each(|x| buf.write_u64::<LE>(*x).expect("vec write")),
            Data::F64(v) => v.iter().for_each(|x| buf.write_f64::<LE>(*x).expect("vec write")),
        }
    }
    buf
}

fn truncated(_: std::io::Error) -> AppError {
    AppError::data("checkpoint is truncated")
}

fn read_entry(cur: &mut Cursor<&[u8]>) -> AppResult<Entry> {
    let len = cur.read_u16::<LE>().map_err(truncated)? as usize;
    let mut name = vec![0u8; len];
    cur.read_exact(&mut name).map_err(truncated)?;
    let name = String::from_utf8(name).map_err(|_| AppError::data("checkpoint entry name is not UTF-8"))?;
    let code = cur.read_u8().map_err(truncated)?;
    let ndim = cur.read_u8().map_err(truncated)? as usize;
    let mut dims = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        dims.push(cur.read_u32::<LE>().map_err(truncated)? as usize);
    }
    let n: usize = dims.iter().product();
    let remaining = cur.get_ref().len() as u64 - cur.position();
    let width = match code {
        DTYPE_F32 => 4,
        DTYPE_U64 | DTYPE_F64 => 8,
        other => return Err(AppError::data(format!("checkpoint entry {name}: unknown dtype {other}"))),
    };
    if (n as u64).saturating_mul(width) > remaining {
        return Err(AppError::data("checkpoint is truncated"));
    }
    let data = match code {
        DTYPE_F32 => Data::F32((0..n).map(|_| cur.read_f32::<LE>()).collect::<Result<_, _>>().map_err(truncated)?),
        DTYPE_U64 => Data::U64((0..n).map(|_| cur.read_u64::<LE>()).collect::<Result<_, _>>().map_err(truncated)?),
        _ => Data::F64((0..n).map(|_| cur.read_f64::<LE>()).collect::<Result<_, _>>().map_err(truncated)?),
    };
    Ok(Entry { name, dims, data })
}

fn take<'a>(entries: &'a [Entry], name: &str) -> AppResult<&'a Entry> {
    entries
        .iter()
        .find(|e| e.name == name)
        .ok_or_else(|| AppError::data(format!("checkpoint lacks {name}")))
}

fn as_u64<'a>(entries: &'a [Entry], name: &str, len: Option<usize>) -> AppResult<&'a [u64]> {
    match &take(entries, name)?.data {
        Data::U64(v) if len.is_none_or(|n| v.len() == n) => Ok(v),
        _ => Err(AppError::data(format!("checkpoint entry {name} has the wrong type or size"))),
    }
}

fn as_f64<'a>(entries: &'a [Entry], name: &str, len: usize) -> AppResult<&'a [f64]> {
    match &take(entries, name)?.data {
        Data::F64(v) if v.len() == len => Ok(v),
        _ => Err(AppError::data(format!("checkpoint entry {name} has the wrong type or size"))),
    }
}

const META: [&str; 7] = [
    "meta.seed",
    "meta.channels",
    "meta.blocks",
    "meta.widths",
    "meta.heads",
    "meta.preprocess",
    "meta.scaler",
];

pub fn from_bytes(bytes: &[u8]) -> AppResult<Checkpoint> {
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(AppError::data("not a checkpoint (bad magic)"));
    }
    let mut cur = Cursor::new(bytes);
    cur.set_position(4);
    let version = cur.read_u32::<LE>().map_err(truncated)?;
    if version != FORMAT_VERSION {
        return Err(AppError::data(format!(
            "checkpoint format version {version} is not supported (expected {FORMAT_VERSION})"
        )));
    }
    let count = cur.read_u32::<LE>().map_err(truncated)?;
    let mut list = Vec::new();
    for _ in 0..count {
        list.push(read_entry(&mut cur)?);
    }
    if cur.position() != bytes.len() as u64 {
        return Err(AppError::data("checkpoint has trailing bytes"));
    }
    let usize_of = |v: u64| usize::try_from(v).map_err(|_| AppError::data("checkpoint value out of range"));
    let seed = as_u64(&list, "meta.seed", Some(1))?[0];
    let channels_used = as_u64(&list, "meta.channels", None)?
        .iter()
        .map(|&v| u32::try_from(v).map_err(|_| AppError::data("bad wavelength")))
        .collect::<AppResult<Vec<_>>>()?;
    let raw_blocks = as_u64(&list, "meta.blocks", None)?;
    if raw_blocks.len() % 3 != 0 {
        return Err(AppError::data("checkpoint entry meta.blocks is malformed"));
    }
    let blocks = raw_blocks
        .chunks(3)
        .map(|b| {
            Ok(BlockSpec {
                kernel: usize_of(b[0])?,
                channels: usize_of(b[1])?,
                pool: usize_of(b[2])?,
            })
        })
        .collect::<AppResult<Vec<_>>>()?;
    let w = as_u64(&list, "meta.widths", Some(6))?;
    let heads = as_u64(&list, "meta.heads", Some(2))?;
    let config = ModelConfig {
        channels_used,
        feature_dim: usize_of(w[0])?,
        blocks,
        attention_dim: usize_of(w[1])?,
        reg_hidden: usize_of(w[2])?,
        cls_hidden: usize_of(w[3])?,
        disc_hidden: usize_of(w[4])?,
        num_subjects: usize_of(w[5])?,
        enable_cls: heads[0] != 0,
        enable_adv: heads[1] != 0,
    };
    let p = as_f64(&list, "meta.preprocess", 5)?;
    let preprocess = Preprocess {
        filter: FilterSpec {
            low_hz: p[0],
            high_hz: p[1],
            order: p[2] as usize,
            zero_phase: p[3] != 0.0,
        },
        window_s: p[4],
    };
    let scaler = match list.iter().any(|e| e.name == "meta.scaler") {
        true => {
            let s = as_f64(&list, "meta.scaler", 4)?;
            Some(TargetScaler {
                mean_sbp: s[0],
                std_sbp: s[1],
                mean_dbp: s[2],
                std_dbp: s[3],
            })
        }
        false => None,
    };
    let mut arrays = Vec::new();
    for e in list {
        if e.name.starts_with("meta.") {
            if !META.contains(&e.name.as_str()) {
                return Err(AppError::data(format!("unknown checkpoint entry {}", e.name)));
            }
            continue;
        }
        let Data::F32(data) = e.data else {
            return Err(AppError::data(format!("checkpoint array {} is not f32", e.name)));
        };
        arrays.push((e.name, Tensor::new(&e.dims, data)?));
    }
    let mut model = Model::from_named_arrays(config, seed, arrays)?;
    model.scaler = scaler;
    Ok(Checkpoint { model, preprocess })
}

pub fn save(path: &Path, ckpt: &Checkpoint) -> AppResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
    }
    fs::write(path, to_bytes(ckpt)).map_err(|e| AppError::io(path, e))
}

pub fn load(path: &Path) -> AppResult<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| AppError::io(path, e))?;
    from_bytes(&bytes).map_err(|e| AppError::data(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let config = ModelConfig {
            channels_used: vec![660, 940],
            feature_dim: 8,
            blocks: vec![BlockSpec { kernel: 3, channels: 4, pool: 2 }],
            num_subjects: 3,
            ..Default::default()
        };
        let mut model = Model::<f32>::new(config, 17).unwrap();
        model.scaler = Some(TargetScaler {
            mean_sbp: 121.3,
            std_sbp: 14.1,
            mean_dbp: 77.7,
            std_dbp: 8.25,
        });
        Checkpoint {
            model,
            preprocess: Preprocess::default(),
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let ckpt = sample();
        let bytes = to_bytes(&ckpt);
        assert_eq!(&bytes[..4], b"MWBP");
        let back = from_bytes(&bytes).unwrap();
        assert_eq!(back, ckpt);
        assert_eq!(to_bytes(&back), bytes);
    }

    #[test]
    fn truncation_and_version_are_rejected() {
        let bytes = to_bytes(&sample());
        for cut in [3, 11, 40, bytes.len() / 2, bytes.len() - 1] {
            assert!(from_bytes(&bytes[..cut]).is_err(), "cut at {cut}");
        }
        let mut v2 = bytes.clone();
        v2[4] = 2;
        assert!(from_bytes(&v2).unwrap_err().to_string().contains("version"));
        let mut extra = bytes;
        extra.push(0);
        assert!(from_bytes(&extra).is_err());
    }

    #[test]
    fn unknown_array_name_is_rejected() {
        let bytes = to_bytes(&sample());
        let needle = b"fusion.attn.weight";
        let pos = bytes.windows(needle.len()).position(|w| w == needle).unwrap();
        let mut bad = bytes.clone();
        bad[pos] = b'X';
        assert!(from_bytes(&bad).unwrap_err().to_string().contains("unknown"));
    }
}
