//! Binary model files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "DRNK"            magic
//! u32               format version
//! u8 u8 u8 u8       architecture (0 cnn, 1 lstm, 2 bilstm), shared flag,
//!                   nonlinearity (0 relu, 1 tanh), reserved
//! u32 u32 u32       vocabulary size, embedding dim, hidden size (0 for cnn)
//! u32 (u32 u32)*    filter group count, then (width, count) per group
//! u32 u32           context and response encoding dims
//! u64               FNV-1a 64 checksum of the vocabulary file bytes
//! u64               payload length in f32 values
//! f32*              embeddings, context encoder, response encoder (when
//!                   separate), M, b; each tensor row-major
//! ```

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::encoders::{Architecture, EncoderConfig, Nonlinearity};
use crate::error::{Error, Result};
use crate::numerics::{HasParameters, Matrix};
use crate::scorer::DualEncoderModel;
use crate::text::{EmbeddingMatrix, Vocabulary};

pub const MAGIC: &[u8; 4] = b"DRNK";
pub const FORMAT_VERSION: u32 = 1;

fn arch_tag(a: Architecture) -> u8 {
    match a {
        Architecture::Cnn => 0,
        Architecture::Lstm => 1,
        Architecture::BiLstm => 2,
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::ModelFormat(format!("{v} does not fit in 32 bits")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub fn to_bytes(model: &DualEncoderModel, vocab_checksum: u64) -> Result<Vec<u8>> {
    let config = model.context_encoder.config();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    let (hidden, filters, nl) = match &config {
        EncoderConfig::Cnn { filters, nonlinearity } => (0, filters.clone(), *nonlinearity),
        EncoderConfig::Lstm { hidden } | EncoderConfig::BiLstm { hidden } => (*hidden, Vec::new(), Nonlinearity::Relu),
    };
    out.extend_from_slice(&[
        arch_tag(model.architecture()),
        model.is_shared() as u8,
        matches!(nl, Nonlinearity::Tanh) as u8,
        0,
    ]);
    put_u32(&mut out, model.embeddings.vocab_size())?;
    put_u32(&mut out, model.embeddings.dim())?;
    put_u32(&mut out, hidden)?;
    put_u32(&mut out, filters.len())?;
    for (w, c) in &filters {
        put_u32(&mut out, *w)?;
        put_u32(&mut out, *c)?;
    }
    put_u32(&mut out, model.scorer.context_dim())?;
    put_u32(&mut out, model.scorer.response_dim())?;
    out.extend_from_slice(&vocab_checksum.to_le_bytes());
    out.extend_from_slice(&(model.parameter_count() as u64).to_le_bytes());
    for p in model.parameters() {
        for &x in p.value.as_slice() {
            let f = x as f32;
            if !f.is_finite() {
                return Err(Error::NonFinite(format!("parameter {} cannot be saved", p.name)));
            }
            out.extend_from_slice(&f.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::ModelFormat(format!("truncated while reading {what}")));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()) as usize)
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

/// Rebuilds a model, refusing files saved against a different vocabulary.
pub fn from_bytes(bytes: &[u8], vocab: &Vocabulary) -> Result<DualEncoderModel> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::ModelFormat("bad magic bytes; not a model file".into()));
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION as usize {
        return Err(Error::ModelFormat(format!("unsupported format version {version}")));
    }
    let arch = match r.u8("architecture")? {
        0 => Architecture::Cnn,
        1 => Architecture::Lstm,
        2 => Architecture::BiLstm,
        t => return Err(Error::ModelFormat(format!("unknown architecture tag {t}"))),
    };
    let shared = match r.u8("shared flag")? {
        0 => false,
        1 => true,
        t => return Err(Error::ModelFormat(format!("bad shared flag {t}"))),
    };
    let nonlinearity = match r.u8("nonlinearity")? {
        0 => Nonlinearity::Relu,
        1 => Nonlinearity::Tanh,
        t => return Err(Error::ModelFormat(format!("unknown nonlinearity tag {t}"))),
    };
    r.u8("reserved")?;
    let vocab_size = r.u32("vocabulary size")?;
    let dim = r.u32("embedding dim")?;
    let hidden = r.u32("hidden size")?;
    let groups = r.u32("filter count")?;
    if groups > 64 {
        return Err(Error::ModelFormat(format!("implausible filter group count {groups}")));
    }
    let mut filters = Vec::with_capacity(groups);
    for _ in 0..groups {
        filters.push((r.u32("filter width")?, r.u32("filter count")?));
    }
    let d_c = r.u32("context dim")?;
    let d_r = r.u32("response dim")?;
    let checksum = r.u64("vocabulary checksum")?;
    let payload_len = r.u64("payload length")?;

    if checksum != vocab.checksum() {
        return Err(Error::ChecksumMismatch {
            expected: checksum,
            found: vocab.checksum(),
        });
    }
    if vocab_size != vocab.len() {
        return Err(Error::ModelFormat(format!(
            "model has {vocab_size} vocabulary rows, vocabulary has {}",
            vocab.len()
        )));
    }
    let available = (bytes.len() - r.pos) / 4;
    let declared = vocab_size
        .checked_mul(dim)
        .ok_or_else(|| Error::ModelFormat("embedding table size overflows".into()))?;
    if declared > available {
        return Err(Error::ModelFormat("truncated payload".into()));
    }

    let config = match arch {
        Architecture::Cnn => EncoderConfig::Cnn { filters, nonlinearity },
        Architecture::Lstm => EncoderConfig::Lstm { hidden },
        Architecture::BiLstm => EncoderConfig::BiLstm { hidden },
    };
    let encoder_size = encoder_size(&config, dim)
        .and_then(|n| if shared { Some(n) } else { n.checked_mul(2) })
        .ok_or_else(|| Error::ModelFormat("encoder size overflows".into()))?;
    if declared.saturating_add(encoder_size) > available {
        return Err(Error::ModelFormat("truncated payload".into()));
    }
    let embeddings = EmbeddingMatrix::new(Matrix::zeros(vocab_size, dim));
    let mut model = DualEncoderModel::new(embeddings, &config, shared, &mut ChaCha8Rng::seed_from_u64(0))?;
    if model.scorer.context_dim() != d_c || model.scorer.response_dim() != d_r {
        return Err(Error::ModelFormat(format!(
            "declared dims {d_c}x{d_r} disagree with the encoder shape"
        )));
    }
    if model.parameter_count() as u64 != payload_len {
        return Err(Error::ModelFormat(format!(
            "payload declares {payload_len} values, the shape needs {}",
            model.parameter_count()
        )));
    }
    for p in model.parameters_mut() {
        let raw = r
            .take(4 * p.len(), "payload")
            .map_err(|_| Error::ModelFormat(format!("truncated payload in {}", p.name)))?;
        for (x, chunk) in p.value.as_mut_slice().iter_mut().zip(raw.chunks_exact(4)) {
            let f = f32::from_le_bytes(chunk.try_into().unwrap());
            if !f.is_finite() {
                return Err(Error::ModelFormat(format!("non-finite value in {}", p.name)));
            }
            *x = f64::from(f);
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::ModelFormat(format!(
            "{} unexpected trailing bytes",
            bytes.len() - r.pos
        )));
    }
    Ok(model)
}

/// Parameter count of one encoder, or `None` on overflow.
fn encoder_size(config: &EncoderConfig, dim: usize) -> Option<usize> {
    let lstm = |h: usize| h.checked_add(dim)?.checked_add(1)?.checked_mul(h)?.checked_mul(4);
    match config {
        EncoderConfig::Cnn { filters, .. } => filters.iter().try_fold(0usize, |acc, &(w, c)| {
            acc.checked_add(w.checked_mul(dim)?.checked_add(1)?.checked_mul(c)?)
        }),
        EncoderConfig::Lstm { hidden } => lstm(*hidden),
        EncoderConfig::BiLstm { hidden } => lstm(*hidden)?.checked_mul(2),
    }
}

pub fn save_model(model: &DualEncoderModel, vocab: &Vocabulary, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(model, vocab.checksum())?)?;
    Ok(())
}

pub fn load_model(path: &Path, vocab: &Vocabulary) -> Result<DualEncoderModel> {
    from_bytes(&std::fs::read(path)?, vocab)
}
