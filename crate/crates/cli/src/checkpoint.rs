//! Model checkpoint container.
//!
//! All integers little-endian:
//!
//! | field        | size                                   |
//! |--------------|----------------------------------------|
//! | magic        | 4 bytes, `PCKP`                        |
//! | version      | u16, currently 1                       |
//! | config len   | u32                                    |
//! | config       | UTF-8 `key = value` lines              |
//! | state len    | u32                                    |
//! | state        | UTF-8 `key = value` lines              |
//! | tensor count | u32                                    |
//! | tensors      | repeated, see below                    |
//!
//! Each tensor is a u16 name length, the UTF-8 name, a u32 rank, the dims as
//! u32, then the values as f32. Generator parameters keep their names,
//! codebook `i` is stored as `codebook.{i}.entries`, `.ema_counts` and
//! `.ema_sums`, and critic parameters follow under `mpd.` and `msd.`.

use std::path::Path;

use promptcodec_core::disc;
use promptcodec_core::grvq::Codebook;
use promptcodec_core::model::PromptCodec;
use promptcodec_core::nn::{ModelRng, ParamStore};
use promptcodec_core::train::{TrainConfig, Trainer};
use promptcodec_core::Tensor;
use rand::SeedableRng;

use crate::config;
use crate::error::{CliError, Result};

pub const MAGIC: &[u8; 4] = b"PCKP";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub step: u64,
    pub model: PromptCodec,
    pub disc_params: ParamStore,
}

impl Checkpoint {
    pub fn from_trainer(t: &Trainer) -> Self {
        Self {
            config: t.config().clone(),
            step: t.step_count() as u64,
            model: t.model.clone(),
            disc_params: t.disc_params.clone(),
        }
    }

    fn tensors(&self) -> Vec<(String, Tensor)> {
        let mut out: Vec<(String, Tensor)> = self
            .model
            .params
            .iter()
            .map(|(n, t)| (n.to_string(), t.clone()))
            .collect();
        for (i, b) in self.model.codebooks.iter().enumerate() {
            out.push((format!("codebook.{i}.entries"), b.entries.clone()));
            out.push((
                format!("codebook.{i}.ema_counts"),
                Tensor::vector(b.ema_counts.clone()),
            ));
            out.push((format!("codebook.{i}.ema_sums"), b.ema_sums.clone()));
        }
        out.extend(
            self.disc_params
                .iter()
                .map(|(n, t)| (n.to_string(), t.clone())),
        );
        out
    }

    fn state_text(&self) -> String {
        let a = self.model.fusion_weights().alpha;
        format!(
            "step = {}\ncodebooks_initialized = {}\nalpha = {},{},{}\n",
            self.step, self.model.codebooks_initialized, a[0] as f32, a[1] as f32, a[2] as f32
        )
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        for block in [config::format_train_config(&self.config), self.state_text()] {
            out.extend_from_slice(
                &u32::try_from(block.len())
                    .map_err(|_| bad("config block too large"))?
                    .to_le_bytes(),
            );
            out.extend_from_slice(block.as_bytes());
        }
        let tensors = self.tensors();
        out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for (name, t) in tensors {
            if !t.is_finite() {
                return Err(bad(&format!("tensor {name} is not finite")));
            }
            out.extend_from_slice(
                &u16::try_from(name.len())
                    .map_err(|_| bad("tensor name too long"))?
                    .to_le_bytes(),
            );
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(
                    &u32::try_from(d)
                        .map_err(|_| bad("tensor too large"))?
                        .to_le_bytes(),
                );
            }
            for &v in t.data() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(bad("not a checkpoint (bad magic)"));
        }
        let version = r.u16()?;
        if version != VERSION {
            return Err(bad(&format!(
                "unsupported checkpoint version {version}; this build reads version {VERSION}"
            )));
        }
        let cfg_text = r.text()?;
        let state_text = r.text()?;
        let mut cfg = config::parse_train_config(&cfg_text)
            .map_err(|e| bad(&format!("config block: {e}")))?;
        cfg.model.codec.seed = cfg.seed;
        let (step, codebooks_initialized) = parse_state(&state_text)?;

        let n = r.u32()? as usize;
        let mut tensors = std::collections::BTreeMap::new();
        for _ in 0..n {
            let len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| bad("tensor name is not UTF-8"))?
                .to_string();
            let rank = r.u32()? as usize;
            if rank > 8 {
                return Err(bad(&format!("tensor {name} has rank {rank}")));
            }
            let shape: Vec<usize> = (0..rank)
                .map(|_| r.u32().map(|d| d as usize))
                .collect::<Result<_>>()?;
            let count = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| bad("tensor size overflows"))?;
            let raw = r.take(
                count
                    .checked_mul(4)
                    .ok_or_else(|| bad("tensor size overflows"))?,
            )?;
            let data: Vec<f64> = raw
                .chunks_exact(4)
                .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
                .collect();
            if data.iter().any(|v| !v.is_finite()) {
                return Err(bad(&format!("tensor {name} is not finite")));
            }
            if tensors
                .insert(name.clone(), Tensor::new(&shape, data))
                .is_some()
            {
                return Err(bad(&format!("duplicate tensor {name}")));
            }
        }
        if r.pos != bytes.len() {
            return Err(bad("trailing bytes"));
        }

        let mut model = PromptCodec::new(cfg.model.clone())?;
        let mut disc_params = ParamStore::new();
        disc::init_discriminators(&cfg.disc, &mut disc_params, &mut ModelRng::seed_from_u64(0));
        let mut take = |name: &str, like: &[usize]| -> Result<Tensor> {
            let t = tensors
                .remove(name)
                .ok_or_else(|| bad(&format!("missing tensor {name}")))?;
            if t.shape() != like {
                return Err(bad(&format!(
                    "tensor {name} has shape {:?}, expected {like:?}",
                    t.shape()
                )));
            }
            Ok(t)
        };
        for store in [&mut model.params, &mut disc_params] {
            let names: Vec<(String, Vec<usize>)> = store
                .iter()
                .map(|(n, t)| (n.to_string(), t.shape().to_vec()))
                .collect();
            for (name, shape) in names {
                store.insert(name.clone(), take(&name, &shape)?);
            }
        }
        let mut books = Vec::with_capacity(model.codebooks.len());
        for (i, b) in model.codebooks.iter().enumerate() {
            let k = b.ema_counts.len();
            books.push(Codebook {
                entries: take(&format!("codebook.{i}.entries"), b.entries.shape())?,
                ema_counts: take(&format!("codebook.{i}.ema_counts"), &[k])?.into_data(),
                ema_sums: take(&format!("codebook.{i}.ema_sums"), b.ema_sums.shape())?,
            });
        }
        model.codebooks = books;
        model.codebooks_initialized = codebooks_initialized;
        if let Some(extra) = tensors.keys().next() {
            return Err(bad(&format!("unexpected tensor {extra}")));
        }
        Ok(Self {
            config: cfg,
            step,
            model,
            disc_params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        // Write then rename so an interrupted save never clobbers the last good file.
        let tmp = path.with_extension("pckp.tmp");
        std::fs::write(&tmp, bytes).map_err(CliError::io(&tmp))?;
        std::fs::rename(&tmp, path).map_err(CliError::io(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(CliError::io(path))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            CliError::Checkpoint(m) => CliError::Checkpoint(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

fn bad(msg: &str) -> CliError {
    CliError::Checkpoint(msg.to_string())
}

fn parse_state(text: &str) -> Result<(u64, bool)> {
    let ini = ini::Ini::load_from_str(text).map_err(|e| bad(&format!("state block: {e}")))?;
    let sec = ini.general_section();
    let step = sec
        .get("step")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| bad("state block: bad step"))?;
    let init = sec
        .get("codebooks_initialized")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| bad("state block: bad codebooks_initialized"))?;
    Ok((step, init))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| bad("truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(
            self.take(2)?.try_into().expect("two bytes"),
        ))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("four bytes"),
        ))
    }

    fn text(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        Ok(std::str::from_utf8(self.take(n)?)
            .map_err(|_| bad("text block is not UTF-8"))?
            .to_string())
    }
}
