//! Built-in checks run by the `selftest` command: full-model gradient
//! checks and small oracle comparisons for ranking, TF-IDF, ensembles and
//! padding.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::RankingInstance;
use crate::encoders::{EncoderConfig, Nonlinearity, SequenceBatch};
use crate::error::Result;
use crate::numerics::{gradient_check, HasParameters};
use crate::ranking::{ensemble_score, rank, recall_at_k, tfidf_fit, tfidf_score, Ensemble};
use crate::scorer::{DualEncoderModel, EncodedPair};
use crate::text::{EmbeddingMatrix, TokenSeq};

pub const GRADIENT_TOLERANCE: f64 = 1e-4;
pub const GRADIENT_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// The small configurations used for gradient checking.
pub fn gradient_configs() -> Vec<EncoderConfig> {
    vec![
        EncoderConfig::Cnn {
            filters: vec![(1, 2), (2, 2), (3, 1)],
            nonlinearity: Nonlinearity::Relu,
        },
        EncoderConfig::Lstm { hidden: 5 },
        EncoderConfig::BiLstm { hidden: 3 },
    ]
}

/// A model with unit-scale embeddings and a perturbed M, plus a small batch
/// of length-7 contexts, so every gradient entry is well above roundoff.
pub fn gradient_fixture(config: &EncoderConfig, seed: u64) -> Result<(DualEncoderModel, Vec<EncodedPair>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocab_size = 12;
    let mut emb = EmbeddingMatrix::random(vocab_size, 4, &mut rng);
    for x in emb.param.value.as_mut_slice().iter_mut() {
        *x *= 4.0;
    }
    let mut model = DualEncoderModel::new(emb, config, true, &mut rng)?;
    for x in model.scorer.m.value.as_mut_slice() {
        *x += rng.gen_range(-0.5..0.5);
    }
    model.scorer.b.value[(0, 0)] = rng.gen_range(-0.5..0.5);
    let mut seq = |len: usize| {
        let ids: Vec<u32> = (0..len).map(|_| rng.gen_range(2..vocab_size as u32)).collect();
        TokenSeq::from_ids(&ids, 7)
    };
    let batch = vec![
        EncodedPair {
            context: seq(7)?,
            response: seq(4)?,
            flag: 1,
        },
        EncodedPair {
            context: seq(7)?,
            response: seq(3)?,
            flag: 0,
        },
        EncodedPair {
            context: seq(5)?,
            response: seq(6)?,
            flag: 1,
        },
    ];
    Ok((model, batch))
}

/// Maximum relative error between backprop and central differences.
/// `corrupt` perturbs the analytic gradients first, to prove the check
/// can fail.
pub fn model_gradient_error(config: &EncoderConfig, seed: u64, corrupt: bool) -> Result<f64> {
    let (mut model, batch) = gradient_fixture(config, seed)?;
    model.loss_and_gradients(&batch)?;
    if corrupt {
        for p in model.parameters_mut() {
            for g in p.grad.as_mut_slice() {
                *g *= 1.01;
            }
        }
    }
    let report = gradient_check(&mut model, GRADIENT_EPS, |m: &DualEncoderModel| m.mean_loss(&batch))?;
    Ok(report.max_relative_error)
}

fn outcome(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> CheckOutcome {
    CheckOutcome {
        name: name.into(),
        passed,
        detail: detail.into(),
    }
}

fn recall_oracle(seed: u64) -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut results = Vec::new();
    let mut ranks = Vec::new();
    for _ in 0..50 {
        let n = rng.gen_range(2..=10);
        // Coarse scores force plenty of ties.
        let scores: Vec<f64> = (0..n).map(|_| f64::from(rng.gen_range(0..4u8))).collect();
        let truth = rng.gen_range(0..n);
        let table: BTreeMap<String, f64> = scores.iter().enumerate().map(|(i, s)| (format!("c{i}"), *s)).collect();
        let inst = RankingInstance::new("ctx", (0..n).map(|i| format!("c{i}")).collect(), truth)?;
        results.push(rank(&inst, &|_: &str, r: &str| Ok(table[r]))?);
        let better = (0..n)
            .filter(|&i| scores[i] > scores[truth] || (scores[i] == scores[truth] && i < truth))
            .count();
        ranks.push((n, better + 1));
    }
    for k in 1..=2 {
        let brute = ranks.iter().filter(|&&(_, r)| r <= k).count() as f64 / ranks.len() as f64;
        if recall_at_k(&results, k)? != brute {
            return Ok(outcome("recall oracle", false, format!("mismatch at k={k}")));
        }
    }
    Ok(outcome("recall oracle", true, "50 instances"))
}

fn tfidf_oracle() -> Result<CheckOutcome> {
    let docs: Vec<Vec<&str>> = vec![
        vec!["the", "cat", "sat", "cat"],
        vec!["the", "dog", "ran"],
        vec!["a", "cat", "ran", "far"],
    ];
    let model = tfidf_fit(docs.clone())?;
    let idf = |w: &str| {
        let df = docs.iter().filter(|d| d.contains(&w)).count();
        if df == 0 {
            0.0
        } else {
            (3.0f64 / df as f64).ln()
        }
    };
    let weights = |t: &[&str]| {
        let mut m: BTreeMap<String, f64> = BTreeMap::new();
        for w in t {
            *m.entry(w.to_string()).or_default() += idf(w);
        }
        m
    };
    let mut worst: f64 = 0.0;
    for a in &docs {
        for b in &docs {
            let (wa, wb) = (weights(a), weights(b));
            let dot: f64 = wa.iter().map(|(k, v)| v * wb.get(k).unwrap_or(&0.0)).sum();
            let na = wa.values().map(|v| v * v).sum::<f64>().sqrt();
            let nb = wb.values().map(|v| v * v).sum::<f64>().sqrt();
            let expected = if na == 0.0 || nb == 0.0 { 0.0 } else { dot / (na * nb) };
            worst = worst.max((tfidf_score(a, b, &model) - expected).abs());
        }
    }
    Ok(outcome(
        "tfidf oracle",
        worst <= 1e-12,
        format!("max deviation {worst:.2e}"),
    ))
}

fn ensemble_identities() -> Result<CheckOutcome> {
    let (a, batch) = gradient_fixture(&EncoderConfig::Lstm { hidden: 3 }, 21)?;
    let (b, _) = gradient_fixture(&EncoderConfig::Lstm { hidden: 4 }, 22)?;
    let single = Ensemble::new(vec![a.clone()])?;
    let pair = Ensemble::new(vec![a.clone(), b.clone()])?;
    for p in &batch {
        let sa = a.score_pair(&p.context, &p.response)?;
        let sb = b.score_pair(&p.context, &p.response)?;
        if ensemble_score(&p.context, &p.response, &single)? != sa {
            return Ok(outcome("ensemble identities", false, "single member differs"));
        }
        let s = ensemble_score(&p.context, &p.response, &pair)?;
        if s < sa.min(sb) || s > sa.max(sb) {
            return Ok(outcome("ensemble identities", false, "mean outside member range"));
        }
    }
    Ok(outcome("ensemble identities", true, ""))
}

fn masking_invariance() -> Result<CheckOutcome> {
    let mut worst: f64 = 0.0;
    for (i, config) in gradient_configs().iter().enumerate() {
        let (model, batch) = gradient_fixture(config, 30 + i as u64)?;
        let seqs: Vec<TokenSeq> = batch.iter().map(|p| p.context.clone()).collect();
        let tight = SequenceBatch::from_seqs(&seqs)?;
        let loose = tight.padded_to(tight.width() + 9)?;
        let a = model.context_encoder.encode_batch(&tight, &model.embeddings)?;
        let b = model.context_encoder.encode_batch(&loose, &model.embeddings)?;
        for (x, y) in a.iter().flatten().zip(b.iter().flatten()) {
            worst = worst.max((x - y).abs());
        }
    }
    Ok(outcome(
        "masking invariance",
        worst <= 1e-12,
        format!("max deviation {worst:.2e}"),
    ))
}

/// Runs every check. With `break_backward` the gradient checks see
/// deliberately wrong gradients and must fail.
pub fn run_all(break_backward: bool) -> Vec<CheckOutcome> {
    let mut out = Vec::new();
    for config in gradient_configs() {
        let name = format!("gradient {}", config.architecture());
        out.push(match model_gradient_error(&config, 7, break_backward) {
            Ok(err) => outcome(name, err < GRADIENT_TOLERANCE, format!("max relative error {err:.2e}")),
            Err(e) => outcome(name, false, e.to_string()),
        });
    }
    type Check = fn() -> Result<CheckOutcome>;
    let suites: [(&str, Check); 4] = [
        ("recall oracle", || recall_oracle(5)),
        ("tfidf oracle", tfidf_oracle),
        ("ensemble identities", ensemble_identities),
        ("masking invariance", masking_invariance),
    ];
    for (name, f) in suites {
        out.push(f().unwrap_or_else(|e| outcome(name, false, e.to_string())));
    }
    out
}
