//! Candidate ranking, 1-in-n Recall@k, the TF-IDF cosine baseline and
//! prediction-averaging ensembles.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::corpus::RankingInstance;
use crate::error::{Error, Result};
use crate::scorer::DualEncoderModel;
use crate::text::{encode, tokenize, Keep, TokenSeq, Vocabulary};

/// The (n, k) pairs reported by default: 1 in 2 R@1, 1 in 10 R@1, R@2, R@5.
pub const STANDARD_METRICS: [(usize, usize); 4] = [(2, 1), (10, 1), (10, 2), (10, 5)];

/// Scores a (context, response) pair given as raw text.
pub trait PairScorer: Sync {
    fn score(&self, context: &str, response: &str) -> Result<f64>;

    /// Scores every candidate against one context. Failures carry the
    /// candidate index.
    fn score_candidates(&self, context: &str, candidates: &[String]) -> Result<Vec<f64>> {
        candidates
            .iter()
            .enumerate()
            .map(|(index, c)| {
                self.score(context, c).map_err(|e| Error::Candidate {
                    index,
                    source: Box::new(e),
                })
            })
            .collect()
    }
}

impl<F> PairScorer for F
where
    F: Fn(&str, &str) -> Result<f64> + Sync,
{
    fn score(&self, context: &str, response: &str) -> Result<f64> {
        self(context, response)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TfIdfModel {
    documents: usize,
    df: HashMap<String, usize>,
}

/// Fits document frequencies; every document is one token list.
pub fn tfidf_fit<I, D, S>(documents: I) -> Result<TfIdfModel>
where
    I: IntoIterator<Item = D>,
    D: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut df: HashMap<String, usize> = HashMap::new();
    let mut n = 0;
    for doc in documents {
        n += 1;
        let mut seen: Vec<String> = doc.into_iter().map(|t| t.as_ref().to_string()).collect();
        seen.sort_unstable();
        seen.dedup();
        for t in seen {
            *df.entry(t).or_default() += 1;
        }
    }
    if n == 0 {
        return Err(Error::validation("cannot fit TF-IDF on an empty corpus"));
    }
    Ok(TfIdfModel { documents: n, df })
}

impl TfIdfModel {
    pub fn documents(&self) -> usize {
        self.documents
    }

    pub fn df(&self, token: &str) -> usize {
        self.df.get(token).copied().unwrap_or(0)
    }

    /// `ln(N / df)`; zero for tokens never seen while fitting.
    pub fn idf(&self, token: &str) -> f64 {
        match self.df.get(token) {
            Some(&df) => (self.documents as f64 / df as f64).ln(),
            None => 0.0,
        }
    }

    /// Raw-count tf times idf, keyed and ordered by token.
    pub fn vector<S: AsRef<str>>(&self, tokens: &[S]) -> BTreeMap<String, f64> {
        let mut tf: BTreeMap<String, usize> = BTreeMap::new();
        for t in tokens {
            *tf.entry(t.as_ref().to_string()).or_default() += 1;
        }
        tf.into_iter()
            .map(|(t, c)| {
                let w = c as f64 * self.idf(&t);
                (t, w)
            })
            .filter(|(_, w)| *w != 0.0)
            .collect()
    }

    /// Human-readable description of the weighting variant.
    pub fn variant(&self) -> &'static str {
        "tf=raw-count idf=ln(N/df) unseen-idf=0 similarity=cosine"
    }
}

/// Cosine similarity between the TF-IDF vectors of two token lists; zero
/// when either vector is empty.
pub fn tfidf_score<S: AsRef<str>, T: AsRef<str>>(context: &[S], response: &[T], model: &TfIdfModel) -> f64 {
    let a = model.vector(context);
    let b = model.vector(response);
    let norm = |v: &BTreeMap<String, f64>| v.values().map(|w| w * w).sum::<f64>().sqrt();
    let (na, nb) = (norm(&a), norm(&b));
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    // Walking both ordered maps in token order makes the sum independent
    // of argument order.
    let mut dot = 0.0;
    let (mut ia, mut ib) = (a.iter().peekable(), b.iter().peekable());
    while let (Some((ka, wa)), Some((kb, wb))) = (ia.peek(), ib.peek()) {
        match ka.cmp(kb) {
            std::cmp::Ordering::Less => {
                ia.next();
            }
            std::cmp::Ordering::Greater => {
                ib.next();
            }
            std::cmp::Ordering::Equal => {
                dot += *wa * *wb;
                ia.next();
                ib.next();
            }
        }
    }
    (dot / (na * nb)).clamp(0.0, 1.0)
}

impl PairScorer for TfIdfModel {
    fn score(&self, context: &str, response: &str) -> Result<f64> {
        Ok(tfidf_score(&tokenize(context), &tokenize(response), self))
    }
}

/// Sequence-level scoring shared by single models and ensembles.
pub trait SeqScorer: Sync {
    fn score_seqs(&self, context: &TokenSeq, response: &TokenSeq) -> Result<f64>;
}

impl SeqScorer for DualEncoderModel {
    fn score_seqs(&self, context: &TokenSeq, response: &TokenSeq) -> Result<f64> {
        self.score_pair(context, response)
    }
}

/// Models whose pair probabilities are averaged.
#[derive(Debug, Clone)]
pub struct Ensemble {
    members: Vec<DualEncoderModel>,
}

impl Ensemble {
    pub fn new(members: Vec<DualEncoderModel>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::validation("an ensemble needs at least one member"));
        }
        let vocab_size = members[0].embeddings.vocab_size();
        if members.iter().any(|m| m.embeddings.vocab_size() != vocab_size) {
            return Err(Error::validation("ensemble members must share one vocabulary"));
        }
        Ok(Ensemble { members })
    }

    pub fn members(&self) -> &[DualEncoderModel] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Member count per architecture.
    pub fn composition(&self) -> BTreeMap<crate::encoders::Architecture, usize> {
        let mut out = BTreeMap::new();
        for m in &self.members {
            *out.entry(m.architecture()).or_default() += 1;
        }
        out
    }
}

/// Arithmetic mean of member probabilities. The sum runs over the sorted
/// scores, so member order never changes the result, and the mean is kept
/// inside the members' [min, max] range.
pub fn mean_probability(scores: &mut [f64]) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::validation("cannot average an empty set of scores"));
    }
    scores.sort_by(f64::total_cmp);
    let (lo, hi) = (scores[0], scores[scores.len() - 1]);
    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    Ok(mean.clamp(lo, hi))
}

pub fn ensemble_score(context: &TokenSeq, response: &TokenSeq, ensemble: &Ensemble) -> Result<f64> {
    let mut scores = ensemble
        .members
        .iter()
        .map(|m| m.score_pair(context, response))
        .collect::<Result<Vec<f64>>>()?;
    mean_probability(&mut scores)
}

impl SeqScorer for Ensemble {
    fn score_seqs(&self, context: &TokenSeq, response: &TokenSeq) -> Result<f64> {
        ensemble_score(context, response, self)
    }
}

/// Adapts a sequence scorer to raw text by tokenizing and encoding against
/// a vocabulary (contexts keep their tail, responses their head).
pub struct TextScorer<'a, M: SeqScorer> {
    pub model: &'a M,
    pub vocab: &'a Vocabulary,
    pub max_len: usize,
}

impl<'a, M: SeqScorer> TextScorer<'a, M> {
    pub fn new(model: &'a M, vocab: &'a Vocabulary, max_len: usize) -> Self {
        TextScorer { model, vocab, max_len }
    }

    fn encode(&self, text: &str, keep: Keep) -> TokenSeq {
        encode(&tokenize(text), self.vocab, self.max_len, keep)
    }
}

impl<M: SeqScorer> PairScorer for TextScorer<'_, M> {
    fn score(&self, context: &str, response: &str) -> Result<f64> {
        self.model
            .score_seqs(&self.encode(context, Keep::Tail), &self.encode(response, Keep::Head))
    }

    fn score_candidates(&self, context: &str, candidates: &[String]) -> Result<Vec<f64>> {
        let ctx = self.encode(context, Keep::Tail);
        candidates
            .iter()
            .enumerate()
            .map(|(index, c)| {
                self.model
                    .score_seqs(&ctx, &self.encode(c, Keep::Head))
                    .map_err(|e| Error::Candidate {
                        index,
                        source: Box::new(e),
                    })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankingResult {
    pub scores: Vec<f64>,
    /// Candidate indices, best first.
    pub order: Vec<usize>,
    pub truth_index: usize,
    /// 1-based position of the ground truth in `order`.
    pub rank_of_truth: usize,
}

impl RankingResult {
    /// Sorts scores descending, ties by ascending candidate index.
    pub fn from_scores(scores: Vec<f64>, truth_index: usize) -> Result<Self> {
        if truth_index >= scores.len() {
            return Err(Error::validation(format!(
                "truth index {truth_index} out of range for {} scores",
                scores.len()
            )));
        }
        if let Some(i) = scores.iter().position(|s| s.is_nan()) {
            return Err(Error::Candidate {
                index: i,
                source: Box::new(Error::NonFinite("score".into())),
            });
        }
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        let rank_of_truth = order.iter().position(|&i| i == truth_index).unwrap() + 1;
        Ok(RankingResult {
            scores,
            order,
            truth_index,
            rank_of_truth,
        })
    }

    pub fn n(&self) -> usize {
        self.scores.len()
    }
}

pub fn rank<S: PairScorer + ?Sized>(instance: &RankingInstance, scorer: &S) -> Result<RankingResult> {
    let scores = scorer.score_candidates(&instance.context, &instance.candidates)?;
    RankingResult::from_scores(scores, instance.truth_index)
}

/// Ranks every instance, fanning out over the current rayon pool. Results
/// keep the input order.
pub fn rank_all<S: PairScorer + ?Sized>(instances: &[RankingInstance], scorer: &S) -> Result<Vec<RankingResult>> {
    instances.par_iter().map(|i| rank(i, scorer)).collect()
}

/// A ranking instance already encoded against a vocabulary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedInstance {
    pub context: TokenSeq,
    pub candidates: Vec<TokenSeq>,
    pub truth_index: usize,
}

impl EncodedInstance {
    pub fn encode(instance: &RankingInstance, vocab: &Vocabulary, max_len: usize) -> Self {
        EncodedInstance {
            context: encode(&tokenize(&instance.context), vocab, max_len, Keep::Tail),
            candidates: instance
                .candidates
                .iter()
                .map(|c| encode(&tokenize(c), vocab, max_len, Keep::Head))
                .collect(),
            truth_index: instance.truth_index,
        }
    }

    pub fn n(&self) -> usize {
        self.candidates.len()
    }
}

pub fn rank_encoded<M: SeqScorer + ?Sized>(instance: &EncodedInstance, model: &M) -> Result<RankingResult> {
    let scores = instance
        .candidates
        .iter()
        .enumerate()
        .map(|(index, c)| {
            model.score_seqs(&instance.context, c).map_err(|e| Error::Candidate {
                index,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<f64>>>()?;
    RankingResult::from_scores(scores, instance.truth_index)
}

/// Parallel over instances; output order follows input order.
pub fn rank_all_encoded<M: SeqScorer + ?Sized>(instances: &[EncodedInstance], model: &M) -> Result<Vec<RankingResult>> {
    instances.par_iter().map(|i| rank_encoded(i, model)).collect()
}

/// Fraction of results whose ground truth ranks within the top `k`.
pub fn recall_at_k(results: &[RankingResult], k: usize) -> Result<f64> {
    if results.is_empty() {
        return Err(Error::validation("no ranking results"));
    }
    if let Some(r) = results.iter().find(|r| k < 1 || k > r.n()) {
        return Err(Error::validation(format!("k={k} outside 1..={}", r.n())));
    }
    let hits = results.iter().filter(|r| r.rank_of_truth <= k).count();
    Ok(hits as f64 / results.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub n: usize,
    pub k: usize,
    pub recall: f64,
    pub instances: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsTable {
    pub rows: Vec<MetricRow>,
}

impl MetricsTable {
    pub fn get(&self, n: usize, k: usize) -> Option<f64> {
        self.rows.iter().find(|r| r.n == n && r.k == k).map(|r| r.recall)
    }

    /// `n,k,recall` rows with six decimals.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("n,k,recall\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{:.6}", r.n, r.k, r.recall);
        }
        out
    }
}

pub fn metric_label(n: usize, k: usize) -> String {
    format!("1 in {n} R@{k}")
}

/// Aligned text table, one column per named scorer.
pub fn format_metrics_table(columns: &[(String, MetricsTable)]) -> String {
    let mut keys: Vec<(usize, usize)> = Vec::new();
    for (_, t) in columns {
        for r in &t.rows {
            if !keys.contains(&(r.n, r.k)) {
                keys.push((r.n, r.k));
            }
        }
    }
    let label_width = keys
        .iter()
        .map(|&(n, k)| metric_label(n, k).len())
        .max()
        .unwrap_or(0)
        .max(6);
    let widths: Vec<usize> = columns.iter().map(|(name, _)| name.len().max(7)).collect();
    let mut out = format!("{:label_width$}", "");
    for ((name, _), w) in columns.iter().zip(&widths) {
        let _ = write!(out, " | {name:>w$}");
    }
    out.push('\n');
    let _ = writeln!(
        out,
        "{}",
        "-".repeat(label_width + widths.iter().map(|w| w + 3).sum::<usize>())
    );
    for (n, k) in keys {
        let _ = write!(out, "{:label_width$}", metric_label(n, k));
        for ((_, t), w) in columns.iter().zip(&widths) {
            match t.get(n, k) {
                Some(v) => {
                    let _ = write!(out, " | {:>w$}", format!("{:.1}%", 100.0 * v));
                }
                None => {
                    let _ = write!(out, " | {:>w$}", "-");
                }
            }
        }
        out.push('\n');
    }
    out
}

pub fn group_by_n(instances: Vec<RankingInstance>) -> BTreeMap<usize, Vec<RankingInstance>> {
    let mut out: BTreeMap<usize, Vec<RankingInstance>> = BTreeMap::new();
    for i in instances {
        out.entry(i.n()).or_default().push(i);
    }
    out
}

/// One Recall@k per requested (n, k), each computed on the instance set
/// with exactly n candidates.
pub fn evaluate<S: PairScorer + ?Sized>(
    scorer: &S,
    instances: &BTreeMap<usize, Vec<RankingInstance>>,
    metrics: &[(usize, usize)],
) -> Result<MetricsTable> {
    let mut ranked: BTreeMap<usize, Vec<RankingResult>> = BTreeMap::new();
    for &(n, _) in metrics {
        if ranked.contains_key(&n) {
            continue;
        }
        let set = instances
            .get(&n)
            .filter(|s| !s.is_empty())
            .ok_or_else(|| Error::validation(format!("no ranking instances with n={n}")))?;
        ranked.insert(n, rank_all(set, scorer)?);
    }
    let mut table = MetricsTable::default();
    for &(n, k) in metrics {
        let results = &ranked[&n];
        table.rows.push(MetricRow {
            n,
            k,
            recall: recall_at_k(results, k)?,
            instances: results.len(),
        });
    }
    Ok(table)
}

/// Ranked candidate list laid out as rank, confidence bar, confidence and
/// response text.
pub fn format_nbest(candidates: &[String], result: &RankingResult) -> String {
    let mut out = String::from("N-Best  Confidence         Response\n");
    for (pos, &idx) in result.order.iter().enumerate() {
        let p = result.scores[idx];
        let stars = "*".repeat((p.clamp(0.0, 1.0) * 10.0).round() as usize);
        let _ = writeln!(out, "{:<6}  {:<10} {:.3}  {}", pos + 1, stars, p, candidates[idx]);
    }
    out
}
