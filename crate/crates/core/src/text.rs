//! Tokenization, vocabulary, pretrained word vectors and fixed-capacity id
//! sequences.

use std::collections::HashMap;
use std::io::BufRead;

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Parameter};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// Half-width of the uniform range used for words without a pretrained vector.
pub const OOV_INIT_RANGE: f64 = 0.25;

pub const DEFAULT_MAX_LEN: usize = 160;

fn is_marker(token: &str) -> bool {
    token.len() > 4
        && token.starts_with("__")
        && token.ends_with("__")
        && token[2..token.len() - 2]
            .chars()
            .all(|c| c.is_alphanumeric() || c == '_')
}

/// Lowercases and splits on whitespace. Corpus markers of the form `__tag__`
/// (entity tags, `__eou__`, `__eot__`) pass through untouched.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|t| if is_marker(t) { t.to_string() } else { t.to_lowercase() })
        .collect()
}

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    bytes
        .iter()
        .fold(OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(PRIME))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    token_to_id: HashMap<String, u32>,
    id_to_token: Vec<String>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocabulary {
    /// A vocabulary holding only the reserved PAD and UNK entries.
    pub fn new() -> Self {
        let mut v = Vocabulary {
            token_to_id: HashMap::new(),
            id_to_token: Vec::new(),
        };
        v.push(PAD_TOKEN.to_string());
        v.push(UNK_TOKEN.to_string());
        v
    }

    fn push(&mut self, token: String) -> u32 {
        let id = self.id_to_token.len() as u32;
        self.token_to_id.insert(token.clone(), id);
        self.id_to_token.push(token);
        id
    }

    /// Builds a vocabulary from an explicit token list, in order.
    pub fn from_tokens<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut v = Self::new();
        for t in tokens {
            let t = t.into();
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(Error::validation(format!("invalid vocabulary token {t:?}")));
            }
            if v.token_to_id.contains_key(&t) {
                return Err(Error::validation(format!("duplicate vocabulary token {t:?}")));
            }
            v.push(t);
        }
        Ok(v)
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.token_to_id.get(token).copied()
    }

    pub fn id_or_unk(&self, token: &str) -> u32 {
        self.id(token).unwrap_or(UNK)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.id_to_token.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.id_to_token
    }

    /// One token per line in id order, each line newline-terminated.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for t in &self.id_to_token {
            out.extend_from_slice(t.as_bytes());
            out.push(b'\n');
        }
        out
    }

    /// Strict inverse of [`Vocabulary::to_bytes`]: any byte sequence that
    /// parses re-serializes to itself, so the checksum of the file equals
    /// [`Vocabulary::checksum`].
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let text =
            std::str::from_utf8(bytes).map_err(|e| Error::validation(format!("vocabulary is not UTF-8: {e}")))?;
        if !text.is_empty() && !text.ends_with('\n') {
            return Err(Error::validation("vocabulary file must end with a newline"));
        }
        let lines: Vec<&str> = text.split_terminator('\n').collect();
        if lines.len() < 2 || lines[0] != PAD_TOKEN || lines[1] != UNK_TOKEN {
            return Err(Error::Parse {
                line: 1,
                message: format!("vocabulary must start with {PAD_TOKEN} and {UNK_TOKEN}"),
            });
        }
        let mut v = Self::new();
        for (i, line) in lines.iter().enumerate().skip(2) {
            if line.is_empty() || line.chars().any(char::is_whitespace) || v.id(line).is_some() {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("invalid or duplicate vocabulary token {line:?}"),
                });
            }
            v.push(line.to_string());
        }
        Ok(v)
    }

    pub fn checksum(&self) -> u64 {
        fnv1a64(&self.to_bytes())
    }
}

/// Counts tokens across all streams and keeps those seen at least
/// `min_count` times, most frequent first (ties lexicographic), at most
/// `max_size` of them in addition to PAD and UNK.
pub fn build_vocabulary<I, D, S>(streams: I, min_count: usize, max_size: usize) -> Result<Vocabulary>
where
    I: IntoIterator<Item = D>,
    D: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    if min_count < 1 {
        return Err(Error::validation("min_count must be at least 1"));
    }
    let mut counts: HashMap<String, usize> = HashMap::new();
    for stream in streams {
        for tok in stream {
            let tok = tok.as_ref();
            if tok == PAD_TOKEN || tok == UNK_TOKEN {
                continue;
            }
            *counts.entry(tok.to_string()).or_default() += 1;
        }
    }
    let mut ranked: Vec<(String, usize)> = counts.into_iter().filter(|(_, c)| *c >= min_count).collect();
    ranked.sort_by(|(ta, ca), (tb, cb)| cb.cmp(ca).then_with(|| ta.cmp(tb)));
    ranked.truncate(max_size);
    Vocabulary::from_tokens(ranked.into_iter().map(|(t, _)| t))
}

/// The |V|×e word-vector table. Rows are trainable except the PAD row, which
/// stays zero.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    pub param: Parameter,
}

impl EmbeddingMatrix {
    pub fn new(mut table: Matrix) -> Self {
        if table.rows() > 0 {
            table.row_mut(PAD as usize).fill(0.0);
        }
        EmbeddingMatrix {
            param: Parameter::new("embeddings", table),
        }
    }

    /// Uniform random rows in `[-OOV_INIT_RANGE, OOV_INIT_RANGE]`.
    pub fn random<R: Rng>(vocab_size: usize, dim: usize, rng: &mut R) -> Self {
        let mut table = Matrix::zeros(vocab_size, dim);
        for x in table.as_mut_slice() {
            *x = rng.gen_range(-OOV_INIT_RANGE..=OOV_INIT_RANGE);
        }
        Self::new(table)
    }

    pub fn dim(&self) -> usize {
        self.param.value.cols()
    }

    pub fn vocab_size(&self) -> usize {
        self.param.value.rows()
    }

    pub fn row(&self, id: u32) -> &[f64] {
        self.param.value.row(id as usize)
    }

    pub fn check_id(&self, id: u32) -> Result<()> {
        if (id as usize) < self.vocab_size() {
            Ok(())
        } else {
            Err(Error::TokenOutOfRange {
                id,
                size: self.vocab_size(),
            })
        }
    }

    /// Adds `grad` to the gradient row of `id`; PAD never accumulates.
    pub fn accumulate_grad(&mut self, id: u32, scale: f64, grad: &[f64]) {
        if id != PAD {
            crate::numerics::axpy(scale, grad, self.param.grad.row_mut(id as usize));
        }
    }

    /// GloVe-style text, one `token v1 ... ve` line per vocabulary entry.
    pub fn to_glove_text(&self, vocab: &Vocabulary) -> String {
        let mut out = String::new();
        for (id, tok) in vocab.tokens().iter().enumerate() {
            out.push_str(tok);
            for x in self.param.value.row(id) {
                out.push(' ');
                out.push_str(&x.to_string());
            }
            out.push('\n');
        }
        out
    }
}

/// Reads GloVe text vectors for the tokens of `vocab`. Tokens missing from
/// the file are drawn uniformly from `[-0.25, 0.25]` in id order.
pub fn load_pretrained<B: BufRead, R: Rng>(
    stream: B,
    vocab: &Vocabulary,
    dim: usize,
    rng: &mut R,
) -> Result<EmbeddingMatrix> {
    if dim == 0 {
        return Err(Error::validation("embedding dimension must be positive"));
    }
    let mut table = Matrix::zeros(vocab.len(), dim);
    let mut found = vec![false; vocab.len()];
    for (lineno, line) in stream.lines().enumerate() {
        let line = line?;
        let mut fields = line.split(' ').filter(|f| !f.is_empty());
        let Some(token) = fields.next() else { continue };
        let values = fields
            .map(|f| {
                f.trim().parse::<f64>().map_err(|e| Error::Parse {
                    line: lineno + 1,
                    message: format!("bad real {f:?} for token {token:?}: {e}"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        if values.len() != dim {
            return Err(Error::EmbeddingDimension {
                token: token.to_string(),
                expected: dim,
                found: values.len(),
            });
        }
        if let Some(id) = vocab.id(token) {
            table.row_mut(id as usize).copy_from_slice(&values);
            found[id as usize] = true;
        }
    }
    for (id, hit) in found.iter().enumerate() {
        if !hit && id != PAD as usize {
            for x in table.row_mut(id) {
                *x = rng.gen_range(-OOV_INIT_RANGE..=OOV_INIT_RANGE);
            }
        }
    }
    Ok(EmbeddingMatrix::new(table))
}

/// Which end of an over-long sequence survives truncation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Keep {
    Head,
    Tail,
}

/// Token ids padded with PAD up to a fixed capacity.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TokenSeq {
    pub ids: Vec<u32>,
    pub true_length: usize,
}

impl TokenSeq {
    pub fn from_ids(ids: &[u32], capacity: usize) -> Result<Self> {
        if ids.len() > capacity {
            return Err(Error::validation(format!(
                "{} ids exceed capacity {capacity}",
                ids.len()
            )));
        }
        let mut padded = ids.to_vec();
        padded.resize(capacity, PAD);
        Ok(TokenSeq {
            ids: padded,
            true_length: ids.len(),
        })
    }

    pub fn capacity(&self) -> usize {
        self.ids.len()
    }

    pub fn tokens(&self) -> &[u32] {
        &self.ids[..self.true_length]
    }
}

pub fn encode<S: AsRef<str>>(tokens: &[S], vocab: &Vocabulary, max_len: usize, keep: Keep) -> TokenSeq {
    let max_len = max_len.max(1);
    let kept = if tokens.len() > max_len {
        match keep {
            Keep::Head => &tokens[..max_len],
            Keep::Tail => &tokens[tokens.len() - max_len..],
        }
    } else {
        tokens
    };
    let mut ids: Vec<u32> = kept.iter().map(|t| vocab.id_or_unk(t.as_ref())).collect();
    let true_length = ids.len();
    ids.resize(max_len, PAD);
    TokenSeq { ids, true_length }
}
