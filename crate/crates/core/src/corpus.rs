//! Dialogs, (context, response, flag) triples, ranking instances and
//! conversation-level splits.

use std::collections::HashSet;
use std::io::{BufRead, Read, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::text::tokenize;

pub const EOU: &str = "__eou__";
pub const EOT: &str = "__eot__";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Turn {
    pub speaker: String,
    pub utterance: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dialog {
    pub id: String,
    pub turns: Vec<Turn>,
}

impl Dialog {
    pub fn new<S: Into<String>>(id: impl Into<String>, turns: Vec<(S, S)>) -> Self {
        Dialog {
            id: id.into(),
            turns: turns
                .into_iter()
                .map(|(s, u)| Turn {
                    speaker: s.into(),
                    utterance: u.into(),
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.turns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.turns.is_empty()
    }

    /// Serializes the first `upto` turns as a context: every utterance is
    /// followed by `__eou__`, and `__eot__` closes each run of utterances by
    /// the same speaker.
    pub fn context(&self, upto: usize) -> String {
        let turns = &self.turns[..upto.min(self.turns.len())];
        let mut parts: Vec<&str> = Vec::new();
        for (i, t) in turns.iter().enumerate() {
            parts.push(t.utterance.trim());
            parts.push(EOU);
            let speaker_changes = turns.get(i + 1).is_none_or(|next| next.speaker != t.speaker);
            if speaker_changes {
                parts.push(EOT);
            }
        }
        parts.join(" ")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub context: String,
    pub response: String,
    pub flag: u8,
}

impl Example {
    pub fn new(context: impl Into<String>, response: impl Into<String>, flag: u8) -> Result<Self> {
        let ex = Example {
            context: context.into(),
            response: response.into(),
            flag,
        };
        ex.validate()?;
        Ok(ex)
    }

    pub fn validate(&self) -> Result<()> {
        if self.flag > 1 {
            return Err(Error::validation(format!("flag must be 0 or 1, got {}", self.flag)));
        }
        if tokenize(&self.context).is_empty() {
            return Err(Error::validation("empty context"));
        }
        if tokenize(&self.response).is_empty() {
            return Err(Error::validation("empty response"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankingInstance {
    pub context: String,
    pub candidates: Vec<String>,
    pub truth_index: usize,
}

impl RankingInstance {
    pub fn new(context: impl Into<String>, candidates: Vec<String>, truth_index: usize) -> Result<Self> {
        if candidates.len() < 2 {
            return Err(Error::validation(format!(
                "a ranking instance needs at least 2 candidates, got {}",
                candidates.len()
            )));
        }
        if truth_index >= candidates.len() {
            return Err(Error::validation(format!(
                "truth index {truth_index} out of range for {} candidates",
                candidates.len()
            )));
        }
        Ok(RankingInstance {
            context: context.into(),
            candidates,
            truth_index,
        })
    }

    pub fn n(&self) -> usize {
        self.candidates.len()
    }

    pub fn truth(&self) -> &str {
        &self.candidates[self.truth_index]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub test_fraction: f64,
    pub valid_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            test_fraction: 0.02,
            valid_fraction: 0.02,
            seed: 0,
        }
    }
}

/// Uniform sampler over every utterance in a corpus.
#[derive(Debug, Clone)]
pub struct UtterancePool {
    utterances: Vec<String>,
}

impl UtterancePool {
    pub fn new(utterances: Vec<String>) -> Result<Self> {
        if utterances.is_empty() {
            return Err(Error::validation("distractor pool is empty"));
        }
        Ok(UtterancePool { utterances })
    }

    pub fn from_dialogs(dialogs: &[Dialog]) -> Result<Self> {
        Self::new(
            dialogs
                .iter()
                .flat_map(|d| d.turns.iter().map(|t| t.utterance.clone()))
                .filter(|u| !tokenize(u).is_empty())
                .collect(),
        )
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> &str {
        &self.utterances[rng.gen_range(0..self.utterances.len())]
    }

    pub fn contains(&self, utterance: &str) -> bool {
        self.utterances.iter().any(|u| u == utterance)
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }
}

fn check_length(dialog: &Dialog) -> Result<()> {
    if dialog.len() < 3 {
        return Err(Error::TooShort {
            id: dialog.id.clone(),
            turns: dialog.len(),
        });
    }
    Ok(())
}

/// One positive and one sampled negative for every turn from the third on:
/// 2(n−2) examples for a dialog of n turns, in turn order.
pub fn generate_examples<R: Rng>(dialog: &Dialog, pool: &UtterancePool, rng: &mut R) -> Result<Vec<Example>> {
    check_length(dialog)?;
    let mut out = Vec::with_capacity(2 * (dialog.len() - 2));
    for i in 2..dialog.len() {
        let context = dialog.context(i);
        out.push(Example {
            context: context.clone(),
            response: dialog.turns[i].utterance.clone(),
            flag: 1,
        });
        out.push(Example {
            context,
            response: pool.sample(rng).to_string(),
            flag: 0,
        });
    }
    Ok(out)
}

/// Examples for a whole dialog list, shuffled. Dialogs shorter than three
/// turns are skipped.
pub fn generate_training_set<R: Rng>(dialogs: &[Dialog], pool: &UtterancePool, rng: &mut R) -> Result<Vec<Example>> {
    let mut out = Vec::new();
    for d in dialogs.iter().filter(|d| d.len() >= 3) {
        out.extend(generate_examples(d, pool, rng)?);
    }
    out.shuffle(rng);
    Ok(out)
}

/// One instance per (context, true response) pair with `n − 1` uniformly
/// sampled distractors and the truth at a random position.
pub fn build_ranking_instances<R: Rng>(
    dialogs: &[Dialog],
    n: usize,
    pool: &UtterancePool,
    rng: &mut R,
) -> Result<Vec<RankingInstance>> {
    if n < 2 {
        return Err(Error::validation(format!("need n >= 2 candidates, got {n}")));
    }
    if pool.is_empty() {
        return Err(Error::validation("distractor pool is empty"));
    }
    let mut out = Vec::new();
    for d in dialogs {
        check_length(d)?;
        for i in 2..d.len() {
            let truth_index = rng.gen_range(0..n);
            let mut candidates: Vec<String> = (0..n - 1).map(|_| pool.sample(rng).to_string()).collect();
            candidates.insert(truth_index, d.turns[i].utterance.clone());
            out.push(RankingInstance {
                context: d.context(i),
                candidates,
                truth_index,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<Dialog>,
    pub valid: Vec<Dialog>,
    pub test: Vec<Dialog>,
}

/// Partitions dialogs by conversation. Each held-out split gets
/// `max(1, round(fraction · N))` dialogs; the order within a split follows
/// the input order.
pub fn split_dialogs(dialogs: &[Dialog], spec: &SplitSpec) -> Result<Split> {
    for (name, f) in [("test", spec.test_fraction), ("valid", spec.valid_fraction)] {
        if !(f > 0.0 && f < 0.5) {
            return Err(Error::validation(format!("{name} fraction {f} must lie in (0, 0.5)")));
        }
    }
    if spec.test_fraction + spec.valid_fraction >= 1.0 {
        return Err(Error::validation("split fractions sum to 1 or more"));
    }
    if dialogs.len() < 3 {
        return Err(Error::validation(format!(
            "need at least 3 dialogs to split, got {}",
            dialogs.len()
        )));
    }
    let total = dialogs.len();
    let size = |f: f64| ((f * total as f64).round() as usize).max(1);
    let n_test = size(spec.test_fraction);
    let n_valid = size(spec.valid_fraction).min(total - n_test - 1);

    let mut order: Vec<usize> = (0..total).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let mut assignment = vec![0u8; total];
    for &i in &order[..n_test] {
        assignment[i] = 2;
    }
    for &i in &order[n_test..n_test + n_valid] {
        assignment[i] = 1;
    }
    let mut split = Split {
        train: Vec::new(),
        valid: Vec::new(),
        test: Vec::new(),
    };
    for (d, a) in dialogs.iter().zip(assignment) {
        match a {
            0 => split.train.push(d.clone()),
            1 => split.valid.push(d.clone()),
            _ => split.test.push(d.clone()),
        }
    }
    Ok(split)
}

/// Parses the block dialog format: `speaker<TAB>utterance` lines, dialogs
/// separated by blank lines. A line starting with `#` names the dialog it
/// belongs to; unnamed dialogs are numbered from 1.
pub fn read_dialogs<B: BufRead>(stream: B) -> Result<Vec<Dialog>> {
    let mut dialogs = Vec::new();
    let mut current = Dialog {
        id: String::new(),
        turns: Vec::new(),
    };
    let flush = |current: &mut Dialog, dialogs: &mut Vec<Dialog>| {
        if !current.turns.is_empty() {
            if current.id.is_empty() {
                current.id = (dialogs.len() + 1).to_string();
            }
            dialogs.push(std::mem::replace(
                current,
                Dialog {
                    id: String::new(),
                    turns: Vec::new(),
                },
            ));
        }
    };
    for (lineno, line) in stream.lines().enumerate() {
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            flush(&mut current, &mut dialogs);
            continue;
        }
        if let Some(id) = line.strip_prefix('#') {
            current.id = id.trim().to_string();
            continue;
        }
        let (speaker, utterance) = line.split_once('\t').ok_or_else(|| Error::Parse {
            line: lineno + 1,
            message: "expected `speaker<TAB>utterance`".into(),
        })?;
        current.turns.push(Turn {
            speaker: speaker.to_string(),
            utterance: utterance.to_string(),
        });
    }
    flush(&mut current, &mut dialogs);
    Ok(dialogs)
}

pub fn write_dialogs<W: Write>(mut out: W, dialogs: &[Dialog]) -> Result<()> {
    for d in dialogs {
        writeln!(out, "# {}", d.id)?;
        for t in &d.turns {
            writeln!(out, "{}\t{}", t.speaker, t.utterance)?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Reads `context,response,flag` CSV triples in file order.
pub fn load_triples<R: Read>(stream: R, has_header: bool) -> Result<Vec<Example>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(has_header).from_reader(stream);
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != 3 {
            return Err(Error::Parse {
                line,
                message: format!("expected 3 columns, found {}", record.len()),
            });
        }
        let flag = match record[2].trim() {
            "0" => 0,
            "1" => 1,
            other => {
                return Err(Error::validation(format!(
                    "line {line}: flag must be 0 or 1, got {other:?}"
                )))
            }
        };
        let ex = Example {
            context: record[0].to_string(),
            response: record[1].to_string(),
            flag,
        };
        ex.validate()
            .map_err(|e| Error::validation(format!("line {line}: {e}")))?;
        out.push(ex);
    }
    Ok(out)
}

pub fn write_triples<W: Write>(out: W, examples: &[Example]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["context", "response", "flag"])?;
    for ex in examples {
        w.write_record([ex.context.as_str(), ex.response.as_str(), &ex.flag.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads instances written by [`write_instances`]:
/// `context,truth_index,candidate_0,...`; rows may differ in width.
pub fn load_instances<R: Read>(stream: R) -> Result<Vec<RankingInstance>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(stream);
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() < 4 {
            return Err(Error::Parse {
                line,
                message: "expected context, truth_index and at least 2 candidates".into(),
            });
        }
        let truth_index: usize = record[1].trim().parse().map_err(|_| Error::Parse {
            line,
            message: format!("bad truth index {:?}", &record[1]),
        })?;
        let candidates = record.iter().skip(2).map(str::to_string).collect();
        out.push(
            RankingInstance::new(&record[0], candidates, truth_index)
                .map_err(|e| Error::validation(format!("line {line}: {e}")))?,
        );
    }
    Ok(out)
}

pub fn write_instances<W: Write>(out: W, instances: &[RankingInstance]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().flexible(true).from_writer(out);
    let width = instances.first().map_or(2, RankingInstance::n);
    let mut header = vec!["context".to_string(), "truth_index".to_string()];
    header.extend((0..width).map(|i| format!("candidate_{i}")));
    w.write_record(&header)?;
    for inst in instances {
        let mut row = vec![inst.context.clone(), inst.truth_index.to_string()];
        row.extend(inst.candidates.iter().cloned());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Shape of a generated topical dialog corpus.
///
/// Every dialog picks one topic; each turn mixes `topic_tokens` words from
/// that topic's small private word list with `filler_tokens` words shared
/// by all topics. A true response therefore overlaps its context on rare
/// words, while a sampled distractor usually does not.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub topics: usize,
    pub words_per_topic: usize,
    pub filler_vocabulary: usize,
    pub topic_tokens: usize,
    pub filler_tokens: usize,
    pub min_turns: usize,
    pub max_turns: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            topics: 60,
            words_per_topic: 3,
            filler_vocabulary: 30,
            topic_tokens: 2,
            filler_tokens: 3,
            min_turns: 3,
            max_turns: 6,
        }
    }
}

pub fn synthetic_dialogs(count: usize, seed: u64, config: &SyntheticConfig) -> Vec<Dialog> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|d| {
            let topic = rng.gen_range(0..config.topics);
            let turns = rng.gen_range(config.min_turns..=config.max_turns);
            let turns = (0..turns)
                .map(|t| {
                    let mut words: Vec<String> = (0..config.topic_tokens)
                        .map(|_| format!("topic{topic}w{}", rng.gen_range(0..config.words_per_topic)))
                        .collect();
                    for _ in 0..config.filler_tokens {
                        words.push(format!("filler{}", rng.gen_range(0..config.filler_vocabulary)));
                    }
                    words.shuffle(&mut rng);
                    Turn {
                        speaker: if t % 2 == 0 { "A" } else { "B" }.to_string(),
                        utterance: words.join(" "),
                    }
                })
                .collect();
            Dialog {
                id: format!("syn{d}"),
                turns,
            }
        })
        .collect()
}

/// Exactly `n_examples` shuffled examples from three-turn synthetic dialogs
/// (each dialog contributes one positive and one negative).
pub fn synthetic_examples(n_examples: usize, seed: u64, config: &SyntheticConfig) -> (Vec<Dialog>, Vec<Example>) {
    let config = SyntheticConfig {
        min_turns: 3,
        max_turns: 3,
        ..config.clone()
    };
    let dialogs = synthetic_dialogs(n_examples.div_ceil(2), seed, &config);
    let pool = UtterancePool::from_dialogs(&dialogs).expect("synthetic dialogs are non-empty");
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut examples = generate_training_set(&dialogs, &pool, &mut rng).expect("synthetic dialogs have 3 turns");
    examples.truncate(n_examples);
    (dialogs, examples)
}

/// Checks that a split is a disjoint cover of `dialogs` (by id).
pub fn is_partition(dialogs: &[Dialog], split: &Split) -> bool {
    let mut seen = HashSet::new();
    for d in split.train.iter().chain(&split.valid).chain(&split.test) {
        if !seen.insert(d.id.as_str()) {
            return false;
        }
    }
    seen.len() == dialogs.len() && dialogs.iter().all(|d| seen.contains(d.id.as_str()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dialog(n: usize) -> Dialog {
        Dialog::new(
            format!("d{n}"),
            (0..n)
                .map(|i| (if i % 2 == 0 { "A" } else { "B" }, format!("utt {i}")))
                .map(|(s, u)| (s.to_string(), u))
                .collect(),
        )
    }

    fn pool() -> UtterancePool {
        UtterancePool::new(vec!["x y".into(), "z".into()]).unwrap()
    }

    #[test]
    fn load_triple_row() {
        let data = "context,response,flag\nhi __eou__,hello,1\n";
        let ex = load_triples(data.as_bytes(), true).unwrap();
        assert_eq!(ex, vec![Example::new("hi __eou__", "hello", 1).unwrap()]);
    }

    #[test]
    fn load_triples_header_only() {
        assert!(load_triples("context,response,flag\n".as_bytes(), true)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn load_triples_rejects_bad_flag() {
        let err = load_triples("a,b,2\n".as_bytes(), false).unwrap_err();
        assert!(matches!(err, Error::Validation(_)), "{err:?}");
    }

    #[test]
    fn load_triples_reports_line_of_malformed_row() {
        let err = load_triples("context,response,flag\na,b,1\na,b\n".as_bytes(), true).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err:?}");
    }

    #[test]
    fn triples_round_trip_with_quoting() {
        let ex = vec![
            Example::new("a, \"quoted\" __eou__", "b\nc", 1).unwrap(),
            Example::new("d", "e", 0).unwrap(),
        ];
        let mut buf = Vec::new();
        write_triples(&mut buf, &ex).unwrap();
        assert_eq!(load_triples(buf.as_slice(), true).unwrap(), ex);
    }

    #[test]
    fn example_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let three = generate_examples(&dialog(3), &pool(), &mut rng).unwrap();
        assert_eq!(three.len(), 2);
        assert_eq!(three.iter().filter(|e| e.flag == 1).count(), 1);
        let eight = generate_examples(&dialog(8), &pool(), &mut rng).unwrap();
        assert_eq!(eight.iter().filter(|e| e.flag == 1).count(), 6);
        assert_eq!(eight.iter().filter(|e| e.flag == 0).count(), 6);
        assert!(matches!(
            generate_examples(&dialog(2), &pool(), &mut rng),
            Err(Error::TooShort { turns: 2, .. })
        ));
    }

    #[test]
    fn context_markers() {
        let d = Dialog::new("x", vec![("A", "hi"), ("A", "there"), ("B", "yo")]);
        assert_eq!(d.context(3), "hi __eou__ there __eou__ __eot__ yo __eou__ __eot__");
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ex = generate_examples(&dialog(3), &pool(), &mut rng).unwrap();
        assert_eq!(ex[0].context, "utt 0 __eou__ __eot__ utt 1 __eou__ __eot__");
        assert_eq!(ex[0].response, "utt 2");
    }

    #[test]
    fn ranking_instance_sizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let dialogs = vec![dialog(4), dialog(3)];
        for n in [2, 10] {
            let inst = build_ranking_instances(&dialogs, n, &pool(), &mut rng).unwrap();
            assert_eq!(inst.len(), 3);
            for i in &inst {
                assert_eq!(i.n(), n);
                assert!(i.truth().starts_with("utt"));
                assert_eq!(i.candidates.iter().filter(|c| c.starts_with("utt")).count(), 1);
            }
        }
        assert!(build_ranking_instances(&dialogs, 1, &pool(), &mut rng).is_err());
        assert!(UtterancePool::new(vec![]).is_err());
    }

    #[test]
    fn split_sizes_and_determinism() {
        let dialogs: Vec<Dialog> = (0..100)
            .map(|i| Dialog {
                id: i.to_string(),
                ..dialog(3)
            })
            .collect();
        let spec = SplitSpec {
            seed: 11,
            ..SplitSpec::default()
        };
        let s = split_dialogs(&dialogs, &spec).unwrap();
        assert_eq!((s.train.len(), s.valid.len(), s.test.len()), (96, 2, 2));
        assert!(is_partition(&dialogs, &s));
        assert_eq!(split_dialogs(&dialogs, &spec).unwrap(), s);
        let bad = SplitSpec {
            test_fraction: 0.6,
            ..spec
        };
        assert!(split_dialogs(&dialogs, &bad).is_err());
    }

    #[test]
    fn dialog_format_round_trip() {
        let text = "A\thello there\nB\thi\nA\tanyone?\n\n#second\nA\tx\nB\ty\n";
        let dialogs = read_dialogs(text.as_bytes()).unwrap();
        assert_eq!(dialogs.len(), 2);
        assert_eq!(dialogs[0].id, "1");
        assert_eq!(dialogs[1].id, "second");
        assert_eq!(dialogs[0].turns[0].utterance, "hello there");
        let mut buf = Vec::new();
        write_dialogs(&mut buf, &dialogs).unwrap();
        assert_eq!(read_dialogs(buf.as_slice()).unwrap(), dialogs);
        assert!(matches!(
            read_dialogs("A hello\n".as_bytes()),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn instances_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let inst = build_ranking_instances(&[dialog(5)], 3, &pool(), &mut rng).unwrap();
        let mut buf = Vec::new();
        write_instances(&mut buf, &inst).unwrap();
        assert_eq!(load_instances(buf.as_slice()).unwrap(), inst);
    }

    #[test]
    fn synthetic_is_deterministic() {
        let cfg = SyntheticConfig::default();
        let (_, a) = synthetic_examples(200, 5, &cfg);
        let (_, b) = synthetic_examples(200, 5, &cfg);
        assert_eq!(a.len(), 200);
        assert_eq!(a, b);
        assert_eq!(a.iter().filter(|e| e.flag == 1).count(), 100);
    }
}
