//! Ancestral sampling and scoring under the locally-normalised decoder.

use std::io::Write;

use rand::RngCore;
use rayon::prelude::*;
use serde::Serialize;

use crate::lm::{NodeId, Sequence, TabularLm, TokenId};
use crate::pruning::{prune, PrunedConditional, PruningRule};
use crate::seeding::{derive_seed, rng_from_seed, uniform01};
use crate::{Error, Result};

/// A string with its local and unnormalised scores and the per-step local
/// constants `Z_loc(w_<t)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalSample {
    pub sequence: Sequence,
    /// `log q_loc(w)`.
    pub logprob_local: f64,
    /// `log q̃(w)`.
    pub logprob_unnormalized: f64,
    /// One entry per generation step, the EOS step included.
    pub constant_trace: Vec<f64>,
    /// `Z̄_loc(w) = Π_t Z_loc(w_<t)`.
    pub seq_constant: f64,
    pub log_seq_constant: f64,
}

#[derive(Clone, Debug)]
struct NodeTable {
    pruned: PrunedConditional,
    // Positive-mass kept tokens in rank order and their cumulative q_loc.
    tokens: Vec<TokenId>,
    cumulative: Vec<f64>,
}

/// A model paired with a pruning rule, with every node's pruned conditional
/// precomputed. Cheap to share across threads.
#[derive(Clone, Debug)]
pub struct LocalDecoder<'a> {
    lm: &'a TabularLm,
    rule: PruningRule,
    tables: Vec<NodeTable>,
}

impl<'a> LocalDecoder<'a> {
    pub fn new(lm: &'a TabularLm, rule: PruningRule) -> Result<Self> {
        rule.validate(lm.alphabet().size_with_eos())?;
        let mut tables = Vec::with_capacity(lm.node_count());
        for node in 0..lm.node_count() {
            let pruned = prune(rule, lm.logprobs_at(node)).map_err(|e| match e {
                Error::DegenerateSupport { .. } => Error::DegenerateSupport {
                    prefix: lm.prefix_of(node),
                },
                other => other,
            })?;
            let mut tokens = Vec::with_capacity(pruned.keep.len());
            let mut cumulative = Vec::with_capacity(pruned.keep.len());
            let mut acc = 0.0;
            for &t in &pruned.keep {
                let lp = pruned.unnormalized[t as usize];
                if lp == f64::NEG_INFINITY {
                    continue;
                }
                acc += (lp - pruned.log_local_constant).exp();
                tokens.push(t);
                cumulative.push(acc);
            }
            tables.push(NodeTable {
                pruned,
                tokens,
                cumulative,
            });
        }
        Ok(Self { lm, rule, tables })
    }

    pub fn lm(&self) -> &'a TabularLm {
        self.lm
    }

    pub fn rule(&self) -> PruningRule {
        self.rule
    }

    pub fn pruned_at(&self, node: NodeId) -> &PrunedConditional {
        &self.tables[node].pruned
    }

    /// Draws one string from `q_loc` by inverse-CDF sampling at every step.
    pub fn sample<R: RngCore>(&self, rng: &mut R) -> LocalSample {
        let eos = self.lm.alphabet().eos();
        let mut node = self.lm.root();
        let mut tokens = Vec::new();
        loop {
            let table = &self.tables[node];
            let u = uniform01(rng);
            let i = table
                .cumulative
                .iter()
                .position(|&c| u < c)
                .unwrap_or(table.tokens.len() - 1);
            let t = table.tokens[i];
            if t == eos {
                break;
            }
            tokens.push(t);
            node = self
                .lm
                .child(node, t)
                .expect("positive-mass token has a child node");
        }
        self.score(&Sequence::terminated(tokens))
    }

    /// Scores `seq` under `q_loc` and `q̃`. Strings leaving the pruned support
    /// score −∞; the constant trace stops where the model has no node.
    pub fn score(&self, seq: &Sequence) -> LocalSample {
        let eos = self.lm.alphabet().eos();
        let mut steps: Vec<TokenId> = seq.tokens.clone();
        if seq.terminated {
            steps.push(eos);
        }
        let mut logprob_local = 0.0;
        let mut logprob_unnormalized = 0.0;
        let mut log_seq_constant = 0.0;
        let mut constant_trace = Vec::with_capacity(steps.len());
        let mut node = Some(self.lm.root());
        let in_range = seq.len() <= self.lm.max_length();
        for &t in &steps {
            let Some(n) = node else {
                logprob_local = f64::NEG_INFINITY;
                logprob_unnormalized = f64::NEG_INFINITY;
                break;
            };
            let pc = &self.tables[n].pruned;
            constant_trace.push(pc.local_constant);
            log_seq_constant += pc.log_local_constant;
            let lp = pc
                .unnormalized
                .get(t as usize)
                .copied()
                .unwrap_or(f64::NEG_INFINITY);
            logprob_unnormalized += lp;
            logprob_local += lp - pc.log_local_constant;
            node = if t == eos { None } else { self.lm.child(n, t) };
        }
        if !in_range {
            logprob_local = f64::NEG_INFINITY;
            logprob_unnormalized = f64::NEG_INFINITY;
        }
        LocalSample {
            sequence: seq.clone(),
            logprob_local,
            logprob_unnormalized,
            constant_trace,
            seq_constant: log_seq_constant.exp(),
            log_seq_constant,
        }
    }

    /// `n` samples; sample `i` uses the stream seeded by `derive_seed(seed, i)`.
    pub fn sample_batch(&self, n: usize, seed: u64) -> Vec<LocalSample> {
        (0..n as u64)
            .into_par_iter()
            .map(|i| self.sample(&mut rng_from_seed(derive_seed(seed, i))))
            .collect()
    }
}

pub fn sample_local(lm: &TabularLm, rule: PruningRule, rng_seed: u64) -> Result<LocalSample> {
    let decoder = LocalDecoder::new(lm, rule)?;
    Ok(decoder.sample(&mut rng_from_seed(rng_seed)))
}

pub fn score_local(lm: &TabularLm, rule: PruningRule, seq: &Sequence) -> Result<LocalSample> {
    Ok(LocalDecoder::new(lm, rule)?.score(seq))
}

pub fn batch_sample_local(
    lm: &TabularLm,
    rule: PruningRule,
    n: usize,
    rng_seed: u64,
) -> Result<Vec<LocalSample>> {
    if n == 0 {
        return Err(Error::InvalidParameter("batch size must be at least 1".into()));
    }
    Ok(LocalDecoder::new(lm, rule)?.sample_batch(n, rng_seed))
}

#[derive(Serialize)]
struct SampleRecord<'a> {
    tokens: &'a [TokenId],
    logprob_local: f64,
    logprob_unnormalized: f64,
    seq_constant: f64,
}

/// One JSON object per sample: `tokens`, `logprob_local`,
/// `logprob_unnormalized`, `seq_constant`.
pub fn write_samples_jsonl<W: Write>(samples: &[LocalSample], mut w: W) -> Result<()> {
    for s in samples {
        let rec = SampleRecord {
            tokens: &s.sequence.tokens,
            logprob_local: s.logprob_local,
            logprob_unnormalized: s.logprob_unnormalized,
            seq_constant: s.seq_constant,
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}
