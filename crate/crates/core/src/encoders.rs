//! Sequence encoders mapping token ids to a fixed-length vector: a
//! convolutional encoder with max-over-time pooling, an LSTM returning its
//! last hidden state, and a bidirectional LSTM concatenating both final
//! states.
//!
//! Every encoder reads only the first `true_length` ids of a sequence, so
//! padding never influences an output. Each forward pass returns a cache
//! that the matching backward pass consumes; gradients accumulate into the
//! encoder's parameters and into the embedding rows that were read.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{axpy, sigmoid, HasParameters, Matrix, Parameter};
use crate::text::{EmbeddingMatrix, TokenSeq, PAD};

pub const MAX_FILTER_WIDTH: usize = 5;

/// A batch of id sequences padded to a common length.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SequenceBatch {
    ids: Vec<Vec<u32>>,
    lengths: Vec<usize>,
    width: usize,
}

impl SequenceBatch {
    pub fn from_seqs(seqs: &[TokenSeq]) -> Result<Self> {
        let width = seqs.iter().map(|s| s.true_length).max().unwrap_or(0);
        let mut ids = Vec::with_capacity(seqs.len());
        for s in seqs {
            if s.true_length > s.ids.len() {
                return Err(Error::validation("sequence length exceeds its capacity"));
            }
            let mut row = s.tokens().to_vec();
            row.resize(width, PAD);
            ids.push(row);
        }
        Ok(SequenceBatch {
            ids,
            lengths: seqs.iter().map(|s| s.true_length).collect(),
            width,
        })
    }

    /// The same batch with every row padded out to `width` ids.
    pub fn padded_to(&self, width: usize) -> Result<Self> {
        if width < self.width {
            return Err(Error::validation(format!(
                "cannot pad a batch of width {} down to {width}",
                self.width
            )));
        }
        let mut out = self.clone();
        for row in &mut out.ids {
            row.resize(width, PAD);
        }
        out.width = width;
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn lengths(&self) -> &[usize] {
        &self.lengths
    }

    pub fn row(&self, i: usize) -> &[u32] {
        &self.ids[i]
    }

    /// The unpadded ids of item `i`.
    pub fn item(&self, i: usize) -> &[u32] {
        &self.ids[i][..self.lengths[i]]
    }
}

/// Column `t` of the result is the embedding of token `t`; PAD columns are
/// zero.
pub fn embed(seq: &TokenSeq, emb: &EmbeddingMatrix) -> Result<Matrix> {
    let mut out = Matrix::zeros(emb.dim(), seq.capacity());
    for (t, &id) in seq.ids.iter().enumerate() {
        emb.check_id(id)?;
        if id == PAD || t >= seq.true_length {
            continue;
        }
        for (k, &x) in emb.row(id).iter().enumerate() {
            out[(k, t)] = x;
        }
    }
    Ok(out)
}

fn check_ids(ids: &[u32], emb: &EmbeddingMatrix) -> Result<()> {
    ids.iter().try_for_each(|&id| emb.check_id(id))
}

fn uniform_matrix<R: Rng>(rows: usize, cols: usize, scale: f64, rng: &mut R) -> Matrix {
    let mut m = Matrix::zeros(rows, cols);
    for x in m.as_mut_slice() {
        *x = rng.gen_range(-scale..=scale);
    }
    m
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Nonlinearity {
    Relu,
    Tanh,
}

impl Nonlinearity {
    fn apply(self, z: f64) -> f64 {
        match self {
            Nonlinearity::Relu => z.max(0.0),
            Nonlinearity::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation and the activation.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Nonlinearity::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Nonlinearity::Tanh => 1.0 - a * a,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Nonlinearity::Relu => "relu",
            Nonlinearity::Tanh => "tanh",
        }
    }
}

impl std::str::FromStr for Nonlinearity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Nonlinearity::Relu),
            "tanh" => Ok(Nonlinearity::Tanh),
            other => Err(Error::validation(format!("unknown nonlinearity {other:?}"))),
        }
    }
}

/// `count` filters of one width: kernel rows are flattened `width × e`
/// windows, position-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterGroup {
    pub width: usize,
    pub kernel: Parameter,
    pub bias: Parameter,
}

impl FilterGroup {
    pub fn count(&self) -> usize {
        self.kernel.value.rows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CnnEncoder {
    pub groups: Vec<FilterGroup>,
    pub nonlinearity: Nonlinearity,
    input_dim: usize,
}

#[derive(Debug, Clone)]
pub struct CnnCache {
    ids: Vec<u32>,
    /// Per group, per filter: (winning position, pre-activation there).
    winners: Vec<Vec<(usize, f64)>>,
}

impl CnnEncoder {
    /// `filters` lists `(width, count)` pairs.
    pub fn new<R: Rng>(
        prefix: &str,
        input_dim: usize,
        filters: &[(usize, usize)],
        nonlinearity: Nonlinearity,
        rng: &mut R,
    ) -> Result<Self> {
        if filters.iter().map(|&(_, c)| c).sum::<usize>() == 0 {
            return Err(Error::validation("a convolutional encoder needs at least one filter"));
        }
        let mut groups = Vec::new();
        for &(width, count) in filters {
            if !(1..=MAX_FILTER_WIDTH).contains(&width) {
                return Err(Error::validation(format!(
                    "filter width {width} outside 1..={MAX_FILTER_WIDTH}"
                )));
            }
            if count == 0 {
                continue;
            }
            let fan_in = width * input_dim;
            let scale = 1.0 / (fan_in as f64).sqrt();
            groups.push(FilterGroup {
                width,
                kernel: Parameter::new(
                    format!("{prefix}conv{width}.kernel"),
                    uniform_matrix(count, fan_in, scale, rng),
                ),
                bias: Parameter::new(format!("{prefix}conv{width}.bias"), Matrix::zeros(count, 1)),
            });
        }
        Ok(CnnEncoder {
            groups,
            nonlinearity,
            input_dim,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.groups.iter().map(FilterGroup::count).sum()
    }

    pub fn max_width(&self) -> usize {
        self.groups.iter().map(|g| g.width).max().unwrap_or(1)
    }

    pub fn filter_spec(&self) -> Vec<(usize, usize)> {
        self.groups.iter().map(|g| (g.width, g.count())).collect()
    }

    pub fn forward(&self, ids: &[u32], emb: &EmbeddingMatrix) -> Result<(Vec<f64>, CnnCache)> {
        if self.groups.is_empty() {
            return Err(Error::validation("a convolutional encoder needs at least one filter"));
        }
        check_ids(ids, emb)?;
        let e = self.input_dim;
        if emb.dim() != e {
            return Err(Error::shape(
                "cnn_encode",
                format!("e={e}"),
                format!("embedding dim {}", emb.dim()),
            ));
        }
        // A sequence shorter than a filter is padded with zero vectors up to
        // that filter's width; otherwise only real positions are pooled.
        let zero = vec![0.0; e];
        let column = |t: usize| -> &[f64] {
            match ids.get(t) {
                Some(&id) if id != PAD => emb.row(id),
                _ => &zero,
            }
        };

        let mut out = Vec::with_capacity(self.output_dim());
        let mut winners = Vec::with_capacity(self.groups.len());
        for g in &self.groups {
            let positions = ids.len().max(g.width) - g.width + 1;
            let mut best: Vec<(usize, f64)> = vec![(0, f64::NEG_INFINITY); g.count()];
            let mut best_act = vec![f64::NEG_INFINITY; g.count()];
            for p in 0..positions {
                for (j, (b, a)) in best.iter_mut().zip(best_act.iter_mut()).enumerate() {
                    let w = g.kernel.value.row(j);
                    let mut z = g.bias.value[(j, 0)];
                    for k in 0..g.width {
                        z += crate::numerics::dot(&w[k * e..(k + 1) * e], column(p + k));
                    }
                    let act = self.nonlinearity.apply(z);
                    if act > *a {
                        *a = act;
                        *b = (p, z);
                    }
                }
            }
            out.extend_from_slice(&best_act);
            winners.push(best);
        }
        Ok((
            out,
            CnnCache {
                ids: ids.to_vec(),
                winners,
            },
        ))
    }

    pub fn backward(&mut self, cache: &CnnCache, upstream: &[f64], emb: &mut EmbeddingMatrix) -> Result<()> {
        if upstream.len() != self.output_dim() || cache.winners.len() != self.groups.len() {
            return Err(Error::CacheMismatch(format!(
                "cnn backward with {} upstream values for {} filters",
                upstream.len(),
                self.output_dim()
            )));
        }
        let e = self.input_dim;
        let mut offset = 0;
        for (g, winners) in self.groups.iter_mut().zip(&cache.winners) {
            if winners.len() != g.count() {
                return Err(Error::CacheMismatch("filter count changed since forward".into()));
            }
            for (j, &(p, z)) in winners.iter().enumerate() {
                let up = upstream[offset + j];
                if up == 0.0 {
                    continue;
                }
                let dz = up * self.nonlinearity.derivative(z, self.nonlinearity.apply(z));
                if dz == 0.0 {
                    continue;
                }
                g.bias.grad[(j, 0)] += dz;
                for k in 0..g.width {
                    let Some(&id) = cache.ids.get(p + k) else { continue };
                    if id == PAD {
                        continue;
                    }
                    axpy(dz, emb.row(id), &mut g.kernel.grad.row_mut(j)[k * e..(k + 1) * e]);
                    let w = &g.kernel.value.row(j)[k * e..(k + 1) * e];
                    emb.accumulate_grad(id, dz, w);
                }
            }
            offset += g.count();
        }
        Ok(())
    }

    pub fn encode_batch(&self, batch: &SequenceBatch, emb: &EmbeddingMatrix) -> Result<Vec<Vec<f64>>> {
        (0..batch.len())
            .map(|i| self.forward(batch.item(i), emb).map(|(v, _)| v))
            .collect()
    }
}

impl HasParameters for CnnEncoder {
    fn parameters(&self) -> Vec<&Parameter> {
        self.groups.iter().flat_map(|g| [&g.kernel, &g.bias]).collect()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        self.groups
            .iter_mut()
            .flat_map(|g| [&mut g.kernel, &mut g.bias])
            .collect()
    }
}

const GATE_I: usize = 0;
const GATE_F: usize = 1;
const GATE_C: usize = 2;
const GATE_O: usize = 3;
const GATE_NAMES: [&str; 4] = ["i", "f", "c", "o"];

/// Single-layer LSTM without peepholes. Gate order is input, forget,
/// candidate, output.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmEncoder {
    pub w: [Parameter; 4],
    pub u: [Parameter; 4],
    pub b: [Parameter; 4],
    input_dim: usize,
    hidden: usize,
}

#[derive(Debug, Clone)]
struct LstmStep {
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    gates: [Vec<f64>; 4],
    tanh_c: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LstmCache {
    ids: Vec<u32>,
    steps: Vec<LstmStep>,
}

impl LstmEncoder {
    pub fn new<R: Rng>(prefix: &str, input_dim: usize, hidden: usize, rng: &mut R) -> Result<Self> {
        if hidden == 0 || input_dim == 0 {
            return Err(Error::validation("LSTM sizes must be positive"));
        }
        let scale = 1.0 / ((input_dim + hidden) as f64).sqrt();
        let w =
            GATE_NAMES.map(|g| Parameter::new(format!("{prefix}W_{g}"), uniform_matrix(hidden, input_dim, scale, rng)));
        let u =
            GATE_NAMES.map(|g| Parameter::new(format!("{prefix}U_{g}"), uniform_matrix(hidden, hidden, scale, rng)));
        let b = GATE_NAMES.map(|g| {
            let mut m = Matrix::zeros(hidden, 1);
            if g == "f" {
                m.fill(1.0);
            }
            Parameter::new(format!("{prefix}b_{g}"), m)
        });
        Ok(LstmEncoder {
            w,
            u,
            b,
            input_dim,
            hidden,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn output_dim(&self) -> usize {
        self.hidden
    }

    /// Runs the recurrence over `ids` in the given order and returns the
    /// hidden state after the last one.
    pub fn forward(&self, ids: &[u32], emb: &EmbeddingMatrix) -> Result<(Vec<f64>, LstmCache)> {
        if ids.is_empty() {
            return Err(Error::validation("LSTM input must contain at least one token"));
        }
        if emb.dim() != self.input_dim {
            return Err(Error::shape(
                "lstm_encode",
                format!("e={}", self.input_dim),
                format!("embedding dim {}", emb.dim()),
            ));
        }
        check_ids(ids, emb)?;
        let h = self.hidden;
        let zero_x = vec![0.0; self.input_dim];
        let mut h_prev = vec![0.0; h];
        let mut c_prev = vec![0.0; h];
        let mut steps = Vec::with_capacity(ids.len());
        for &id in ids {
            let x = if id == PAD { &zero_x[..] } else { emb.row(id) };
            let mut gates: [Vec<f64>; 4] = Default::default();
            for (g, gate) in gates.iter_mut().enumerate() {
                let mut z = self.b[g].value.as_slice().to_vec();
                self.w[g].value.matvec_acc(x, &mut z)?;
                self.u[g].value.matvec_acc(&h_prev, &mut z)?;
                for v in z.iter_mut() {
                    *v = if g == GATE_C { v.tanh() } else { sigmoid(*v) };
                }
                *gate = z;
            }
            let c: Vec<f64> = (0..h)
                .map(|k| gates[GATE_F][k] * c_prev[k] + gates[GATE_I][k] * gates[GATE_C][k])
                .collect();
            let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
            let h_new: Vec<f64> = (0..h).map(|k| gates[GATE_O][k] * tanh_c[k]).collect();
            steps.push(LstmStep {
                h_prev: std::mem::replace(&mut h_prev, h_new),
                c_prev: std::mem::replace(&mut c_prev, c),
                gates,
                tanh_c,
            });
        }
        Ok((
            h_prev,
            LstmCache {
                ids: ids.to_vec(),
                steps,
            },
        ))
    }

    /// Backpropagation through time from a gradient on the final hidden
    /// state.
    pub fn backward(&mut self, cache: &LstmCache, upstream: &[f64], emb: &mut EmbeddingMatrix) -> Result<()> {
        let h = self.hidden;
        if upstream.len() != h || cache.steps.first().is_some_and(|s| s.h_prev.len() != h) {
            return Err(Error::CacheMismatch(format!(
                "lstm backward with {} upstream values for hidden size {h}",
                upstream.len()
            )));
        }
        if upstream.iter().all(|&v| v == 0.0) {
            return Ok(());
        }
        let zero_x = vec![0.0; self.input_dim];
        let mut dh = upstream.to_vec();
        let mut dc = vec![0.0; h];
        for (step, &id) in cache.steps.iter().zip(&cache.ids).rev() {
            let [gi, gf, gc, go] = &step.gates;
            let mut dz: [Vec<f64>; 4] = [vec![0.0; h], vec![0.0; h], vec![0.0; h], vec![0.0; h]];
            for k in 0..h {
                let d_o = dh[k] * step.tanh_c[k];
                dc[k] += dh[k] * go[k] * (1.0 - step.tanh_c[k] * step.tanh_c[k]);
                let d_i = dc[k] * gc[k];
                let d_g = dc[k] * gi[k];
                let d_f = dc[k] * step.c_prev[k];
                dz[GATE_I][k] = d_i * gi[k] * (1.0 - gi[k]);
                dz[GATE_F][k] = d_f * gf[k] * (1.0 - gf[k]);
                dz[GATE_C][k] = d_g * (1.0 - gc[k] * gc[k]);
                dz[GATE_O][k] = d_o * go[k] * (1.0 - go[k]);
                dc[k] *= gf[k];
            }
            let x = if id == PAD { &zero_x[..] } else { emb.row(id) };
            let mut dx = vec![0.0; self.input_dim];
            let mut dh_prev = vec![0.0; h];
            for (g, dzg) in dz.iter().enumerate() {
                self.w[g].grad.add_outer(1.0, dzg, x)?;
                self.u[g].grad.add_outer(1.0, dzg, &step.h_prev)?;
                axpy(1.0, dzg, self.b[g].grad.as_mut_slice());
                self.w[g].value.matvec_t_acc(dzg, &mut dx)?;
                self.u[g].value.matvec_t_acc(dzg, &mut dh_prev)?;
            }
            emb.accumulate_grad(id, 1.0, &dx);
            dh = dh_prev;
        }
        Ok(())
    }

    pub fn encode_batch(&self, batch: &SequenceBatch, emb: &EmbeddingMatrix) -> Result<Vec<Vec<f64>>> {
        (0..batch.len())
            .map(|i| self.forward(batch.item(i), emb).map(|(v, _)| v))
            .collect()
    }
}

impl HasParameters for LstmEncoder {
    fn parameters(&self) -> Vec<&Parameter> {
        self.w.iter().chain(&self.u).chain(&self.b).collect()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        self.w
            .iter_mut()
            .chain(self.u.iter_mut())
            .chain(self.b.iter_mut())
            .collect()
    }
}

/// Two independent LSTMs, one reading left to right and one right to left;
/// the output concatenates their final hidden states.
#[derive(Debug, Clone, PartialEq)]
pub struct BiLstmEncoder {
    pub forward: LstmEncoder,
    pub backward: LstmEncoder,
}

#[derive(Debug, Clone)]
pub struct BiLstmCache {
    forward: LstmCache,
    backward: LstmCache,
}

impl BiLstmEncoder {
    pub fn new<R: Rng>(prefix: &str, input_dim: usize, hidden: usize, rng: &mut R) -> Result<Self> {
        Ok(BiLstmEncoder {
            forward: LstmEncoder::new(&format!("{prefix}fwd."), input_dim, hidden, rng)?,
            backward: LstmEncoder::new(&format!("{prefix}bwd."), input_dim, hidden, rng)?,
        })
    }

    pub fn output_dim(&self) -> usize {
        self.forward.output_dim() + self.backward.output_dim()
    }

    pub fn forward(&self, ids: &[u32], emb: &EmbeddingMatrix) -> Result<(Vec<f64>, BiLstmCache)> {
        let (mut out, fwd) = self.forward.forward(ids, emb)?;
        let reversed: Vec<u32> = ids.iter().rev().copied().collect();
        let (tail, bwd) = self.backward.forward(&reversed, emb)?;
        out.extend(tail);
        Ok((
            out,
            BiLstmCache {
                forward: fwd,
                backward: bwd,
            },
        ))
    }

    pub fn backward(&mut self, cache: &BiLstmCache, upstream: &[f64], emb: &mut EmbeddingMatrix) -> Result<()> {
        if upstream.len() != self.output_dim() {
            return Err(Error::CacheMismatch(format!(
                "bilstm backward with {} upstream values for {} outputs",
                upstream.len(),
                self.output_dim()
            )));
        }
        let (up_f, up_b) = upstream.split_at(self.forward.output_dim());
        self.forward.backward(&cache.forward, up_f, emb)?;
        self.backward.backward(&cache.backward, up_b, emb)
    }

    pub fn encode_batch(&self, batch: &SequenceBatch, emb: &EmbeddingMatrix) -> Result<Vec<Vec<f64>>> {
        (0..batch.len())
            .map(|i| self.forward(batch.item(i), emb).map(|(v, _)| v))
            .collect()
    }
}

impl HasParameters for BiLstmEncoder {
    fn parameters(&self) -> Vec<&Parameter> {
        let mut p = self.forward.parameters();
        p.extend(self.backward.parameters());
        p
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        let mut p = self.forward.parameters_mut();
        p.extend(self.backward.parameters_mut());
        p
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Architecture {
    Cnn,
    Lstm,
    BiLstm,
}

impl Architecture {
    pub const ALL: [Architecture; 3] = [Architecture::Cnn, Architecture::Lstm, Architecture::BiLstm];

    pub fn name(self) -> &'static str {
        match self {
            Architecture::Cnn => "cnn",
            Architecture::Lstm => "lstm",
            Architecture::BiLstm => "bilstm",
        }
    }
}

impl std::fmt::Display for Architecture {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cnn" => Ok(Architecture::Cnn),
            "lstm" => Ok(Architecture::Lstm),
            "bilstm" | "bi-lstm" => Ok(Architecture::BiLstm),
            other => Err(Error::validation(format!("unknown architecture {other:?}"))),
        }
    }
}

/// Hyperparameters that determine an encoder's shape.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EncoderConfig {
    Cnn {
        filters: Vec<(usize, usize)>,
        nonlinearity: Nonlinearity,
    },
    Lstm {
        hidden: usize,
    },
    BiLstm {
        hidden: usize,
    },
}

impl EncoderConfig {
    pub fn architecture(&self) -> Architecture {
        match self {
            EncoderConfig::Cnn { .. } => Architecture::Cnn,
            EncoderConfig::Lstm { .. } => Architecture::Lstm,
            EncoderConfig::BiLstm { .. } => Architecture::BiLstm,
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            EncoderConfig::Cnn { filters, .. } => filters.iter().map(|f| f.1).sum(),
            EncoderConfig::Lstm { hidden } => *hidden,
            EncoderConfig::BiLstm { hidden } => 2 * hidden,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum Encoder {
    Cnn(CnnEncoder),
    Lstm(LstmEncoder),
    BiLstm(BiLstmEncoder),
}

#[derive(Debug, Clone)]
pub enum EncoderCache {
    Cnn(CnnCache),
    Lstm(LstmCache),
    BiLstm(BiLstmCache),
}

impl Encoder {
    pub fn new<R: Rng>(prefix: &str, input_dim: usize, config: &EncoderConfig, rng: &mut R) -> Result<Self> {
        Ok(match config {
            EncoderConfig::Cnn { filters, nonlinearity } => {
                Encoder::Cnn(CnnEncoder::new(prefix, input_dim, filters, *nonlinearity, rng)?)
            }
            EncoderConfig::Lstm { hidden } => Encoder::Lstm(LstmEncoder::new(prefix, input_dim, *hidden, rng)?),
            EncoderConfig::BiLstm { hidden } => Encoder::BiLstm(BiLstmEncoder::new(prefix, input_dim, *hidden, rng)?),
        })
    }

    pub fn config(&self) -> EncoderConfig {
        match self {
            Encoder::Cnn(c) => EncoderConfig::Cnn {
                filters: c.filter_spec(),
                nonlinearity: c.nonlinearity,
            },
            Encoder::Lstm(l) => EncoderConfig::Lstm { hidden: l.hidden() },
            Encoder::BiLstm(b) => EncoderConfig::BiLstm {
                hidden: b.forward.hidden(),
            },
        }
    }

    pub fn architecture(&self) -> Architecture {
        match self {
            Encoder::Cnn(_) => Architecture::Cnn,
            Encoder::Lstm(_) => Architecture::Lstm,
            Encoder::BiLstm(_) => Architecture::BiLstm,
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            Encoder::Cnn(c) => c.output_dim(),
            Encoder::Lstm(l) => l.output_dim(),
            Encoder::BiLstm(b) => b.output_dim(),
        }
    }

    /// Encodes the unpadded ids of one sequence.
    pub fn forward(&self, ids: &[u32], emb: &EmbeddingMatrix) -> Result<(Vec<f64>, EncoderCache)> {
        Ok(match self {
            Encoder::Cnn(c) => {
                let (v, cache) = c.forward(ids, emb)?;
                (v, EncoderCache::Cnn(cache))
            }
            Encoder::Lstm(l) => {
                let (v, cache) = l.forward(ids, emb)?;
                (v, EncoderCache::Lstm(cache))
            }
            Encoder::BiLstm(b) => {
                let (v, cache) = b.forward(ids, emb)?;
                (v, EncoderCache::BiLstm(cache))
            }
        })
    }

    pub fn encode(&self, seq: &TokenSeq, emb: &EmbeddingMatrix) -> Result<Vec<f64>> {
        self.forward(seq.tokens(), emb).map(|(v, _)| v)
    }

    pub fn encode_batch(&self, batch: &SequenceBatch, emb: &EmbeddingMatrix) -> Result<Vec<Vec<f64>>> {
        match self {
            Encoder::Cnn(c) => c.encode_batch(batch, emb),
            Encoder::Lstm(l) => l.encode_batch(batch, emb),
            Encoder::BiLstm(b) => b.encode_batch(batch, emb),
        }
    }

    pub fn backward(&mut self, cache: &EncoderCache, upstream: &[f64], emb: &mut EmbeddingMatrix) -> Result<()> {
        match (self, cache) {
            (Encoder::Cnn(c), EncoderCache::Cnn(k)) => c.backward(k, upstream, emb),
            (Encoder::Lstm(l), EncoderCache::Lstm(k)) => l.backward(k, upstream, emb),
            (Encoder::BiLstm(b), EncoderCache::BiLstm(k)) => b.backward(k, upstream, emb),
            (enc, _) => Err(Error::CacheMismatch(format!(
                "cache was not produced by a {} encoder",
                enc.architecture()
            ))),
        }
    }
}

impl HasParameters for Encoder {
    fn parameters(&self) -> Vec<&Parameter> {
        match self {
            Encoder::Cnn(c) => c.parameters(),
            Encoder::Lstm(l) => l.parameters(),
            Encoder::BiLstm(b) => b.parameters(),
        }
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        match self {
            Encoder::Cnn(c) => c.parameters_mut(),
            Encoder::Lstm(l) => l.parameters_mut(),
            Encoder::BiLstm(b) => b.parameters_mut(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradient_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn embeddings(vocab: usize, dim: usize, seed: u64) -> EmbeddingMatrix {
        EmbeddingMatrix::random(vocab, dim, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    /// Encoder plus embeddings as one parameter set for gradient checking.
    struct Probe {
        encoder: Encoder,
        emb: EmbeddingMatrix,
        weights: Vec<f64>,
        ids: Vec<Vec<u32>>,
    }

    impl HasParameters for Probe {
        fn parameters(&self) -> Vec<&Parameter> {
            let mut p = vec![&self.emb.param];
            p.extend(self.encoder.parameters());
            p
        }

        fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
            let mut p = vec![&mut self.emb.param];
            p.extend(self.encoder.parameters_mut());
            p
        }
    }

    impl Probe {
        /// Loss = Σ_items Σ_k weights[k]·out[k] + ½ out[k]².
        fn loss(&self) -> Result<f64> {
            let mut total = 0.0;
            for ids in &self.ids {
                let (out, _) = self.encoder.forward(ids, &self.emb)?;
                total += out
                    .iter()
                    .zip(&self.weights)
                    .map(|(o, w)| w * o + 0.5 * o * o)
                    .sum::<f64>();
            }
            Ok(total)
        }

        fn backprop(&mut self) {
            self.zero_grads();
            for ids in self.ids.clone() {
                let (out, cache) = self.encoder.forward(&ids, &self.emb).unwrap();
                let up: Vec<f64> = out.iter().zip(&self.weights).map(|(o, w)| w + o).collect();
                self.encoder.backward(&cache, &up, &mut self.emb).unwrap();
            }
        }
    }

    fn check(encoder: Encoder, emb: EmbeddingMatrix, ids: Vec<Vec<u32>>) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let weights = (0..encoder.output_dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut probe = Probe {
            encoder,
            emb,
            weights,
            ids,
        };
        probe.backprop();
        assert_eq!(
            probe.emb.param.grad.row(PAD as usize),
            vec![0.0; probe.emb.dim()].as_slice()
        );
        gradient_check(&mut probe, 1e-5, |p| p.loss())
            .unwrap()
            .max_relative_error
    }

    #[test]
    fn embed_shapes() {
        let emb = embeddings(50, 6, 1);
        let ids: Vec<u32> = (0..42).map(|i| 2 + (i % 40)).collect();
        let seq = TokenSeq::from_ids(&ids, 42).unwrap();
        let m = embed(&seq, &emb).unwrap();
        assert_eq!(m.shape(), (6, 42));
        let pad = TokenSeq::from_ids(&[], 5).unwrap();
        assert!(embed(&pad, &emb).unwrap().as_slice().iter().all(|&x| x == 0.0));
        let one = TokenSeq::from_ids(&[7], 1).unwrap();
        assert_eq!(embed(&one, &emb).unwrap().as_slice(), emb.row(7));
        let bad = TokenSeq::from_ids(&[50], 1).unwrap();
        assert!(matches!(embed(&bad, &emb), Err(Error::TokenOutOfRange { .. })));
    }

    #[test]
    fn cnn_dimension_and_constant_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let emb = embeddings(10, 4, 2);
        let mut cnn = CnnEncoder::new("", 4, &[(1, 1), (3, 1)], Nonlinearity::Relu, &mut rng).unwrap();
        assert_eq!(cnn.output_dim(), 2);
        for g in &mut cnn.groups {
            g.kernel.value.fill(0.0);
            g.bias.value.fill(0.7);
        }
        let (out, _) = cnn.forward(&[3, 4, 5, 6], &emb).unwrap();
        assert_eq!(out, vec![0.7, 0.7]);
        assert!(CnnEncoder::new("", 4, &[], Nonlinearity::Relu, &mut rng).is_err());
        assert!(CnnEncoder::new("", 4, &[(6, 1)], Nonlinearity::Relu, &mut rng).is_err());
    }

    #[test]
    fn cnn_handles_sequences_shorter_than_filters() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let emb = embeddings(10, 4, 3);
        let cnn = CnnEncoder::new("", 4, &[(3, 2)], Nonlinearity::Tanh, &mut rng).unwrap();
        let (short, _) = cnn.forward(&[4], &emb).unwrap();
        let (padded, _) = cnn.forward(&[4, PAD, PAD], &emb).unwrap();
        assert_eq!(short, padded);
        assert_eq!(cnn.forward(&[], &emb).unwrap().0.len(), 2);
    }

    #[test]
    fn lstm_zero_parameters_give_zero_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let emb = embeddings(10, 4, 4);
        let mut lstm = LstmEncoder::new("", 4, 5, &mut rng).unwrap();
        lstm.zero_grads();
        for p in lstm.parameters_mut() {
            p.value.fill(0.0);
        }
        let (out, _) = lstm.forward(&[2, 3, 4], &emb).unwrap();
        assert_eq!(out, vec![0.0; 5]);
        assert!(lstm.forward(&[], &emb).is_err());

        let big = LstmEncoder::new("", 4, 200, &mut rng).unwrap();
        assert_eq!(big.forward(&[2], &emb).unwrap().0.len(), 200);
    }

    #[test]
    fn bilstm_dimension_and_palindrome_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let emb = embeddings(10, 4, 5);
        let wide = BiLstmEncoder::new("", 4, 250, &mut rng).unwrap();
        assert_eq!(wide.forward(&[3, 4], &emb).unwrap().0.len(), 500);

        let mut bi = BiLstmEncoder::new("", 4, 3, &mut rng).unwrap();
        bi.backward = bi.forward.clone();
        let (out, _) = bi.forward(&[2, 5, 7, 5, 2], &emb).unwrap();
        assert_eq!(out[..3], out[3..]);

        for p in bi.parameters_mut() {
            p.value.fill(0.0);
        }
        assert_eq!(bi.forward(&[2, 5], &emb).unwrap().0, vec![0.0; 6]);
    }

    #[test]
    fn gradients_cnn() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let cnn = CnnEncoder::new("", 4, &[(1, 2), (2, 2), (3, 1)], Nonlinearity::Relu, &mut rng).unwrap();
        for g in &cnn.groups {
            assert_eq!(g.bias.value.as_slice().iter().sum::<f64>(), 0.0);
        }
        let ids = vec![vec![2, 3, 4, 5, 6, 7, 8], vec![9, 2], vec![3, 1, 4, 1, 5]];
        let err = check(Encoder::Cnn(cnn), embeddings(10, 4, 6), ids);
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn gradients_cnn_tanh() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cnn = CnnEncoder::new("", 4, &[(1, 2), (2, 2), (3, 1)], Nonlinearity::Tanh, &mut rng).unwrap();
        let ids = vec![vec![2, 3, 4, 5, 6, 7, 8], vec![9]];
        let err = check(Encoder::Cnn(cnn), embeddings(10, 4, 7), ids);
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn gradients_lstm() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let lstm = LstmEncoder::new("", 4, 5, &mut rng).unwrap();
        let ids = vec![vec![2, 3, 4, 5, 6, 7], vec![9, 2, 9]];
        let err = check(Encoder::Lstm(lstm), embeddings(10, 4, 8), ids);
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn gradients_bilstm() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let bi = BiLstmEncoder::new("", 4, 3, &mut rng).unwrap();
        let ids = vec![vec![2, 3, 4, 5, 6, 7], vec![8, 1]];
        let err = check(Encoder::BiLstm(bi), embeddings(10, 4, 9), ids);
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn zero_upstream_leaves_gradients_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut emb = embeddings(10, 4, 10);
        for config in [
            EncoderConfig::Cnn {
                filters: vec![(1, 2), (2, 1)],
                nonlinearity: Nonlinearity::Relu,
            },
            EncoderConfig::Lstm { hidden: 3 },
            EncoderConfig::BiLstm { hidden: 2 },
        ] {
            let mut enc = Encoder::new("", 4, &config, &mut rng).unwrap();
            let (out, cache) = enc.forward(&[2, 3, 4], &emb).unwrap();
            enc.backward(&cache, &vec![0.0; out.len()], &mut emb).unwrap();
            assert!(enc
                .parameters()
                .iter()
                .all(|p| p.grad.as_slice().iter().all(|&g| g == 0.0)));
            assert!(emb.param.grad.as_slice().iter().all(|&g| g == 0.0));
        }
    }

    #[test]
    fn mismatched_cache_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut emb = embeddings(10, 4, 11);
        let lstm = Encoder::new("", 4, &EncoderConfig::Lstm { hidden: 3 }, &mut rng).unwrap();
        let mut cnn = Encoder::new(
            "",
            4,
            &EncoderConfig::Cnn {
                filters: vec![(1, 3)],
                nonlinearity: Nonlinearity::Relu,
            },
            &mut rng,
        )
        .unwrap();
        let (_, cache) = lstm.forward(&[2, 3], &emb).unwrap();
        assert!(matches!(
            cnn.backward(&cache, &[1.0, 1.0, 1.0], &mut emb),
            Err(Error::CacheMismatch(_))
        ));
    }
}
