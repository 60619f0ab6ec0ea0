//! Checkpoint container.
//!
//! Layout: a UTF-8 header of `key=value` lines (magic first, then
//! counters, the embedded config text and the array count), followed by
//! named arrays. Each array is `u32` name length, name bytes, `u32` rank,
//! `rank × u64` dims and the little-endian `f32` data. All integers are
//! little-endian.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::models::ParamStore;
use crate::optimizer::{Adam, Moments};

pub const CHECKPOINT_MAGIC: &str = "SEMGAN-CHECKPOINT v1";

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerSnapshot {
    pub step: u64,
    pub lr: f64,
    pub moments: BTreeMap<String, Moments>,
}

impl OptimizerSnapshot {
    pub fn of(opt: &Adam) -> Self {
        let moments = opt
            .names()
            .into_iter()
            .map(|n| {
                let m = opt.moments(&n).cloned().expect("owned name");
                (n, m)
            })
            .collect();
        Self {
            step: opt.step_count(),
            lr: opt.lr(),
            moments,
        }
    }

    pub fn restore_into(&self, opt: &mut Adam) -> Result<()> {
        opt.restore(self.step, self.lr, self.moments.clone())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub digest: String,
    /// Epochs completed.
    pub epoch: u32,
    /// Phase of the last completed epoch.
    pub phase_index: usize,
    /// Batches processed so far.
    pub step: u64,
    /// Patch-sampling stream state.
    pub rng_state: u64,
    /// Best evaluation so far as `(epoch, ssim_percent)`.
    pub best: Option<(u32, f64)>,
    pub config_text: String,
    pub params: ParamStore<f32>,
    pub opt_g: OptimizerSnapshot,
    pub opt_d: OptimizerSnapshot,
}

fn push_array(out: &mut Vec<u8>, name: &str, shape: &[usize], data: &[f32]) {
    out.extend((name.len() as u32).to_le_bytes());
    out.extend(name.as_bytes());
    out.extend((shape.len() as u32).to_le_bytes());
    for &d in shape {
        out.extend((d as u64).to_le_bytes());
    }
    for v in data {
        out.extend(v.to_le_bytes());
    }
}

impl Checkpoint {
    pub fn encode(&self) -> Vec<u8> {
        let (best_epoch, best_ssim) = match self.best {
            Some((e, s)) => (e.to_string(), s.to_string()),
            None => ("none".into(), "none".into()),
        };
        let mut arrays: Vec<(String, Vec<usize>, &[f32])> = Vec::new();
        for (name, t) in self.params.iter() {
            arrays.push((format!("param:{name}"), t.shape().to_vec(), t.data()));
        }
        for (tag, opt) in [("opt_g", &self.opt_g), ("opt_d", &self.opt_d)] {
            for (name, m) in &opt.moments {
                arrays.push((format!("{tag}.m:{name}"), vec![m.m.len()], &m.m));
                arrays.push((format!("{tag}.v:{name}"), vec![m.v.len()], &m.v));
            }
        }
        let mut out = format!(
            "{CHECKPOINT_MAGIC}\ndigest={}\nepoch={}\nphase={}\nstep={}\nrng={}\nbest_epoch={best_epoch}\nbest_ssim={best_ssim}\nopt_g={} {}\nopt_d={} {}\nconfig_bytes={}\n",
            self.digest,
            self.epoch,
            self.phase_index,
            self.step,
            self.rng_state,
            self.opt_g.step,
            self.opt_g.lr,
            self.opt_d.step,
            self.opt_d.lr,
            self.config_text.len(),
        )
        .into_bytes();
        out.extend(self.config_text.as_bytes());
        out.extend(format!("\narrays={}\n", arrays.len()).as_bytes());
        for (name, shape, data) in arrays {
            push_array(&mut out, &name, &shape, data);
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.line()?;
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::Format {
                offset: 0,
                message: format!("expected magic {CHECKPOINT_MAGIC:?}"),
            });
        }
        let digest = r.field("digest")?;
        let epoch = r.parsed("epoch")?;
        let phase_index = r.parsed("phase")?;
        let step = r.parsed("step")?;
        let rng_state = r.parsed("rng")?;
        let best_epoch = r.field("best_epoch")?;
        let best_ssim = r.field("best_ssim")?;
        let best = if best_epoch == "none" {
            None
        } else {
            Some((
                best_epoch.parse().map_err(|_| r.err("bad best_epoch"))?,
                best_ssim.parse().map_err(|_| r.err("bad best_ssim"))?,
            ))
        };
        let opt_g = r.field("opt_g")?;
        let opt_d = r.field("opt_d")?;
        let config_len: usize = r.parsed("config_bytes")?;
        let config_text = String::from_utf8(r.take(config_len)?.to_vec())
            .map_err(|_| r.err("config is not UTF-8"))?;
        if r.take(1)? != b"\n" {
            return Err(r.err("expected newline after config"));
        }
        let count: usize = r.parsed("arrays")?;
        let mut params = ParamStore::new();
        let mut moments: [BTreeMap<String, (Vec<f32>, Vec<f32>)>; 2] = Default::default();
        for _ in 0..count {
            let at = r.pos;
            let name_len = r.u32()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| r.err("array name is not UTF-8"))?;
            let rank = r.u32()? as usize;
            let shape: Vec<usize> = (0..rank)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<_>>()?;
            let n = shape.iter().product::<usize>();
            let raw = r.take(n.checked_mul(4).ok_or_else(|| r.err("array too large"))?)?;
            let data: Vec<f32> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let (kind, key) = name.split_once(':').ok_or_else(|| Error::Format {
                offset: at,
                message: format!("array name {name:?} has no tag"),
            })?;
            match kind {
                "param" => params.insert(key.to_string(), Tensor::new(shape, data)?)?,
                "opt_g.m" | "opt_g.v" | "opt_d.m" | "opt_d.v" => {
                    let slot = moments[usize::from(kind.starts_with("opt_d"))]
                        .entry(key.to_string())
                        .or_default();
                    if kind.ends_with(".m") {
                        slot.0 = data;
                    } else {
                        slot.1 = data;
                    }
                }
                _ => {
                    return Err(Error::Format {
                        offset: at,
                        message: format!("unknown array tag {kind:?}"),
                    })
                }
            }
        }
        if r.pos != bytes.len() {
            return Err(r.err("trailing bytes after arrays"));
        }
        let [mg, md] = moments;
        let snapshot =
            |text: &str, m: BTreeMap<String, (Vec<f32>, Vec<f32>)>| -> Result<OptimizerSnapshot> {
                let (s, lr) = text.split_once(' ').ok_or_else(|| Error::Format {
                    offset: 0,
                    message: format!("bad optimizer header {text:?}"),
                })?;
                let bad = |what: &str| Error::Format {
                    offset: 0,
                    message: format!("bad optimizer {what} in {text:?}"),
                };
                Ok(OptimizerSnapshot {
                    step: s.parse().map_err(|_| bad("step"))?,
                    lr: lr.parse().map_err(|_| bad("lr"))?,
                    moments: m
                        .into_iter()
                        .map(|(k, (m, v))| (k, Moments { m, v }))
                        .collect(),
                })
            };
        Ok(Self {
            digest,
            epoch,
            phase_index,
            step,
            rng_state,
            best,
            config_text,
            params,
            opt_g: snapshot(&opt_g, mg)?,
            opt_d: snapshot(&opt_d, md)?,
        })
    }

    /// Writes to a sibling temp file, syncs it and renames it over `path`.
    pub fn write_atomic(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        {
            let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
            f.write_all(&self.encode())
                .map_err(|e| Error::io(&tmp, e))?;
            f.sync_all().map_err(|e| Error::io(&tmp, e))?;
        }
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::decode(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn err(&self, message: &str) -> Error {
        Error::Format {
            offset: self.pos,
            message: message.to_string(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format {
                offset: self.bytes.len(),
                message: format!("truncated: wanted {n} more bytes"),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn line(&mut self) -> Result<String> {
        let rest = &self.bytes[self.pos..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| self.err("unterminated header line"))?;
        let s = std::str::from_utf8(&rest[..end]).map_err(|_| self.err("header is not UTF-8"))?;
        self.pos += end + 1;
        Ok(s.to_string())
    }

    fn field(&mut self, key: &str) -> Result<String> {
        let at = self.pos;
        let line = self.line()?;
        match line.split_once('=') {
            Some((k, v)) if k == key => Ok(v.to_string()),
            _ => Err(Error::Format {
                offset: at,
                message: format!("expected header field {key}"),
            }),
        }
    }

    fn parsed<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        let at = self.pos;
        self.field(key)?.parse().map_err(|_| Error::Format {
            offset: at,
            message: format!("invalid value for {key}"),
        })
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
