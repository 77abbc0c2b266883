//! Locally- and globally-normalised decoding for small autoregressive models.
//!
//! The crate works with explicit tabular language models whose every
//! conditional distribution is stored in a prefix trie. On top of that it
//! provides top-k / top-π pruning, ancestral sampling from the locally
//! renormalised decoder, exact enumeration of the globally renormalised
//! distribution, an independent Metropolis–Hastings sampler targeting the
//! global distribution, and a small evaluation harness (self-BLEU, length and
//! log-likelihood statistics, bootstrap intervals).

pub mod error;
pub mod exact;
pub mod experiment;
pub mod imh;
pub mod lm;
pub mod local;
pub mod logspace;
pub mod metrics;
pub mod pruning;
pub mod seeding;

pub use error::{Error, Result};
pub use exact::{
    enumerate_unnormalized, exact_global, exact_local, exact_model, find_rank_reversal,
    growth_sweep, kl, kl_strict, total_variation, verify_bounds, BoundReport, Construction,
    DistributionKind, Empirical, ExactDistribution, GrowthPoint, RankReversal, DEFAULT_BUDGET,
};
pub use imh::{
    accept_logprob, acceptance_rate, imh_run, imh_run_chains, iteration_sweep, ImhChain,
    ImhRunConfig, SweepPoint,
};
pub use lm::{
    build_forward_construction, build_reverse_construction, random_lm, Alphabet, Sequence,
    TabularLm, TokenId,
};
pub use local::{batch_sample_local, sample_local, score_local, LocalDecoder, LocalSample};
pub use pruning::{keep_set, local_conditional, prune, rule_pmin, PrunedConditional, PruningRule};
