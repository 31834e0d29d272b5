//! Binary checkpoint files.
//!
//! ```text
//! offset   size   field
//! 0        8      magic "MTOKCKPT"
//! 8        4      format version, u32 LE
//! 12       8      payload length n, u64 LE
//! 20       n      payload
//! 20 + n   32     SHA-256 of the payload
//! ```
//!
//! Payload fields are written in a fixed order. Integers are u64 LE, reals
//! are the f64 bit pattern LE, strings are a u64 byte length followed by
//! UTF-8, optional values carry a leading flag byte.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::io_config::{QuarterRange, StandardizationStats};
use crate::tokenizer::TokenizerSpec;
use crate::transformer::{ModelConfig, ModelParams};

use super::train::TrainConfig;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MTOKCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;
const HEADER_LEN: usize = 20;
const DIGEST_LEN: usize = 32;

/// Everything needed to forecast one target variable from raw data.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub target_name: String,
    pub params: ModelParams,
    pub tokenizer: TokenizerSpec,
    pub stats: StandardizationStats,
    pub train: TrainConfig,
    pub initial_loss: f64,
    pub final_train_loss: f64,
    pub best_val_loss: Option<f64>,
    pub steps_run: u64,
    /// Free-form provenance pairs (base seed, derived seeds, corpus checksum, …).
    pub lineage: Vec<(String, String)>,
}

impl Checkpoint {
    pub fn model_config(&self) -> &ModelConfig {
        self.params.config()
    }

    pub fn lineage_value(&self, key: &str) -> Option<&str> {
        self.lineage.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        let m = self.model_config();
        for v in [m.n_vars, m.n_bins, m.var_dim, m.n_layers, m.n_heads, m.context_len, m.target_var, m.mlp_factor] {
            w.usize(v);
        }
        w.str(&self.target_name);

        let t = &self.train;
        w.usize(t.batch_size);
        w.f64(t.alpha);
        w.f64(t.learning_rate);
        w.f64(t.beta1);
        w.f64(t.beta2);
        w.f64(t.adam_eps);
        w.usize(t.max_steps);
        w.usize(t.eval_interval);
        w.usize(t.patience);
        w.f64(t.validation_fraction);
        w.u64(t.seed);

        w.str(&self.tokenizer.to_text());

        let s = &self.stats;
        w.usize(s.var_names.len());
        for name in &s.var_names {
            w.str(name);
        }
        w.f64s(&s.means);
        w.f64s(&s.stds);
        w.opt(s.source_range.map(|r| r.to_string()).as_deref(), Writer::str);

        w.f64s(&self.params.flatten());

        w.f64(self.initial_loss);
        w.f64(self.final_train_loss);
        w.opt(self.best_val_loss, |w, v| w.f64(v));
        w.u64(self.steps_run);
        w.usize(self.lineage.len());
        for (k, v) in &self.lineage {
            w.str(k);
            w.str(v);
        }

        let payload = w.buf;
        let mut out = Vec::with_capacity(HEADER_LEN + payload.len() + DIGEST_LEN);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&payload);
        out.extend_from_slice(&Sha256::digest(&payload));
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic bytes)".into()));
        }
        if bytes.len() < HEADER_LEN {
            return Err(Error::Checkpoint("checksum error: file truncated inside the header".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {version} (this build reads version {CHECKPOINT_VERSION})"
            )));
        }
        let n = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
        let expected = (HEADER_LEN as u64).saturating_add(n).saturating_add(DIGEST_LEN as u64);
        if bytes.len() as u64 != expected {
            return Err(Error::Checkpoint(format!(
                "checksum error: file is {} bytes, header implies {expected}",
                bytes.len()
            )));
        }
        let n = n as usize;
        let payload = &bytes[HEADER_LEN..HEADER_LEN + n];
        if Sha256::digest(payload).as_slice() != &bytes[HEADER_LEN + n..] {
            return Err(Error::Checkpoint("checksum error: payload digest mismatch".into()));
        }

        let mut r = Reader { buf: payload, pos: 0 };
        let mut dims = [0usize; 8];
        for d in &mut dims {
            *d = r.usize()?;
        }
        let [n_vars, n_bins, var_dim, n_layers, n_heads, context_len, target_var, mlp_factor] = dims;
        let model = ModelConfig { n_vars, n_bins, var_dim, n_layers, n_heads, context_len, target_var, mlp_factor };
        let target_name = r.str()?;

        let train = TrainConfig {
            batch_size: r.usize()?,
            alpha: r.f64()?,
            learning_rate: r.f64()?,
            beta1: r.f64()?,
            beta2: r.f64()?,
            adam_eps: r.f64()?,
            max_steps: r.usize()?,
            eval_interval: r.usize()?,
            patience: r.usize()?,
            validation_fraction: r.f64()?,
            seed: r.u64()?,
        };

        let tokenizer = TokenizerSpec::from_text(&r.str()?)?;

        let n_names = r.usize()?;
        let var_names = (0..n_names).map(|_| r.str()).collect::<Result<Vec<_>>>()?;
        let means = r.f64s()?;
        let stds = r.f64s()?;
        let source_range = match r.opt(Reader::str)? {
            Some(s) => Some(s.parse::<QuarterRange>()?),
            None => None,
        };
        let stats = StandardizationStats { var_names, means, stds, source_range };

        let params = ModelParams::unflatten(model, &r.f64s()?)?;

        let initial_loss = r.f64()?;
        let final_train_loss = r.f64()?;
        let best_val_loss = r.opt(Reader::f64)?;
        let steps_run = r.u64()?;
        let n_lineage = r.usize()?;
        let lineage = (0..n_lineage)
            .map(|_| Ok((r.str()?, r.str()?)))
            .collect::<Result<Vec<_>>>()?;
        if r.pos != payload.len() {
            return Err(Error::Checkpoint(format!("{} trailing payload bytes", payload.len() - r.pos)));
        }

        let ck = Checkpoint {
            target_name,
            params,
            tokenizer,
            stats,
            train,
            initial_loss,
            final_train_loss,
            best_val_loss,
            steps_run,
            lineage,
        };
        ck.check_consistency()?;
        Ok(ck)
    }

    fn check_consistency(&self) -> Result<()> {
        let m = self.model_config();
        if self.tokenizer.n_vars() != m.n_vars || self.stats.n_vars() != m.n_vars {
            return Err(Error::Checkpoint(format!(
                "model has {} variables, tokenizer {}, standardization {}",
                m.n_vars,
                self.tokenizer.n_vars(),
                self.stats.n_vars()
            )));
        }
        if self.tokenizer.n_bins() != m.n_bins {
            return Err(Error::Checkpoint("tokenizer and model disagree on the bin count".into()));
        }
        if self.tokenizer.var_names()[m.target_var] != self.target_name {
            return Err(Error::Checkpoint(format!(
                "target {:?} is not variable {} of the tokenizer",
                self.target_name, m.target_var
            )));
        }
        Ok(())
    }
}

/// Writes atomically through a sibling temporary file.
pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<()> {
    let tmp = path.with_extension("ckpt.tmp");
    std::fs::write(&tmp, ck.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes).map_err(|e| match e {
        Error::Checkpoint(msg) => Error::Checkpoint(format!("{}: {msg}", path.display())),
        other => other,
    })
}

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn usize(&mut self, v: usize) {
        self.u64(v as u64);
    }

    fn f64(&mut self, v: f64) {
        self.u64(v.to_bits());
    }

    fn f64s(&mut self, v: &[f64]) {
        self.usize(v.len());
        v.iter().for_each(|x| self.f64(*x));
    }

    fn str(&mut self, s: &str) {
        self.usize(s.len());
        self.buf.extend_from_slice(s.as_bytes());
    }

    fn opt<T>(&mut self, v: Option<T>, put: impl FnOnce(&mut Self, T)) {
        match v {
            Some(x) => {
                self.buf.push(1);
                put(self, x);
            }
            None => self.buf.push(0),
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Checkpoint("payload ends early".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Checkpoint("length does not fit in memory".into()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }

    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.usize()?;
        if n > (self.buf.len() - self.pos) / 8 {
            return Err(Error::Checkpoint("payload ends early".into()));
        }
        (0..n).map(|_| self.f64()).collect()
    }

    fn str(&mut self) -> Result<String> {
        let n = self.usize()?;
        let bytes = self.take(n)?.to_vec();
        String::from_utf8(bytes).map_err(|_| Error::Checkpoint("string field is not UTF-8".into()))
    }

    fn opt<T>(&mut self, get: impl FnOnce(&mut Self) -> Result<T>) -> Result<Option<T>> {
        match self.take(1)?[0] {
            0 => Ok(None),
            1 => get(self).map(Some),
            b => Err(Error::Checkpoint(format!("bad option flag {b}"))),
        }
    }
}
