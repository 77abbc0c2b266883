//! Independent Metropolis–Hastings with the local decoder as proposal.
//!
//! A chain draws an initial state from `q_loc`, then performs `N`
//! propose/accept steps. "N iterations" never includes the initial draw.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::exact::{exact_global, Empirical};
use crate::lm::{Sequence, TabularLm};
use crate::local::{LocalDecoder, LocalSample};
use crate::pruning::PruningRule;
use crate::seeding::{derive_seed, rng_from_seed, uniform01, Rng};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ImhChain {
    pub current: Sequence,
    /// `log q̃(current)`.
    pub current_log_unnormalized: f64,
    /// `log q_loc(current)`.
    pub current_log_proposal: f64,
    pub iterations_done: usize,
    pub accepts: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct ImhRunConfig {
    pub n_chains: usize,
    pub n_iterations: usize,
    pub rng_seed: u64,
}

impl ImhRunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_chains == 0 || self.n_iterations == 0 {
            return Err(Error::InvalidParameter(
                "IMH needs at least one chain and one iteration".into(),
            ));
        }
        Ok(())
    }
}

/// `min(0, (q̃(cand) + q_loc(cur)) − (q̃(cur) + q_loc(cand)))` in log space.
pub fn accept_logprob(
    cand_log_unnorm: f64,
    cand_log_prop: f64,
    cur_log_unnorm: f64,
    cur_log_prop: f64,
) -> Result<f64> {
    if !cur_log_unnorm.is_finite() {
        return Err(Error::InvalidState(
            "current state has no mass under the unnormalised target".into(),
        ));
    }
    if cand_log_unnorm == f64::NEG_INFINITY {
        return Ok(f64::NEG_INFINITY);
    }
    // Grouped as difference of log Z̄_loc terms so identical proposals give
    // exactly zero.
    let a = (cand_log_unnorm - cand_log_prop) - (cur_log_unnorm - cur_log_prop);
    Ok(a.min(0.0))
}

/// One trace row per iteration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TraceRow {
    pub chain: usize,
    pub iter: usize,
    pub accepted: bool,
    pub log_unnorm: f64,
}

impl ImhChain {
    fn start(decoder: &LocalDecoder<'_>, rng: &mut Rng) -> Self {
        let s = decoder.sample(rng);
        Self {
            current: s.sequence,
            current_log_unnormalized: s.logprob_unnormalized,
            current_log_proposal: s.logprob_local,
            iterations_done: 0,
            accepts: 0,
        }
    }

    fn step(&mut self, decoder: &LocalDecoder<'_>, rng: &mut Rng) -> Result<bool> {
        let cand: LocalSample = decoder.sample(rng);
        let a = accept_logprob(
            cand.logprob_unnormalized,
            cand.logprob_local,
            self.current_log_unnormalized,
            self.current_log_proposal,
        )?;
        let u = uniform01(rng);
        self.iterations_done += 1;
        let accepted = u <= a.exp();
        if accepted {
            self.current = cand.sequence;
            self.current_log_unnormalized = cand.logprob_unnormalized;
            self.current_log_proposal = cand.logprob_local;
            self.accepts += 1;
        }
        Ok(accepted)
    }
}

fn run_one(
    decoder: &LocalDecoder<'_>,
    chain: usize,
    cfg: &ImhRunConfig,
    snapshots: &[usize],
    mut trace: Option<&mut Vec<TraceRow>>,
) -> Result<(ImhChain, Vec<Sequence>)> {
    let mut rng = rng_from_seed(derive_seed(cfg.rng_seed, chain as u64));
    let mut c = ImhChain::start(decoder, &mut rng);
    let mut snaps = Vec::with_capacity(snapshots.len());
    let mut next = 0;
    for iter in 1..=cfg.n_iterations {
        let accepted = c.step(decoder, &mut rng)?;
        if let Some(t) = trace.as_deref_mut() {
            t.push(TraceRow {
                chain,
                iter,
                accepted,
                log_unnorm: c.current_log_unnormalized,
            });
        }
        while next < snapshots.len() && snapshots[next] == iter {
            snaps.push(c.current.clone());
            next += 1;
        }
    }
    Ok((c, snaps))
}

/// Runs `cfg.n_chains` independent chains; chain `i` uses stream
/// `derive_seed(cfg.rng_seed, i)`.
pub fn imh_run_chains(lm: &TabularLm, rule: PruningRule, cfg: ImhRunConfig) -> Result<Vec<ImhChain>> {
    cfg.validate()?;
    let decoder = LocalDecoder::new(lm, rule)?;
    (0..cfg.n_chains)
        .into_par_iter()
        .map(|i| run_one(&decoder, i, &cfg, &[], None).map(|(c, _)| c))
        .collect()
}

/// Final state of each chain.
pub fn imh_run(lm: &TabularLm, rule: PruningRule, cfg: ImhRunConfig) -> Result<Vec<Sequence>> {
    Ok(imh_run_chains(lm, rule, cfg)?
        .into_iter()
        .map(|c| c.current)
        .collect())
}

/// Same chains as [`imh_run_chains`] plus a per-iteration trace.
pub fn imh_run_traced(
    lm: &TabularLm,
    rule: PruningRule,
    cfg: ImhRunConfig,
) -> Result<(Vec<ImhChain>, Vec<TraceRow>)> {
    cfg.validate()?;
    let decoder = LocalDecoder::new(lm, rule)?;
    let parts: Vec<(ImhChain, Vec<TraceRow>)> = (0..cfg.n_chains)
        .into_par_iter()
        .map(|i| {
            let mut t = Vec::with_capacity(cfg.n_iterations);
            run_one(&decoder, i, &cfg, &[], Some(&mut t)).map(|(c, _)| (c, t))
        })
        .collect::<Result<_>>()?;
    let mut chains = Vec::with_capacity(parts.len());
    let mut trace = Vec::with_capacity(cfg.n_chains * cfg.n_iterations);
    for (c, t) in parts {
        chains.push(c);
        trace.extend(t);
    }
    Ok((chains, trace))
}

pub fn write_trace_jsonl<W: Write>(rows: &[TraceRow], mut w: W) -> Result<()> {
    for r in rows {
        serde_json::to_writer(&mut w, r)?;
        writeln!(w)?;
    }
    Ok(())
}

/// Total accepts over total iterations.
pub fn acceptance_rate(chains: &[ImhChain]) -> f64 {
    let acc: usize = chains.iter().map(|c| c.accepts).sum();
    let its: usize = chains.iter().map(|c| c.iterations_done).sum();
    acc as f64 / its as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SweepPoint {
    pub n: usize,
    pub tv: f64,
}

/// TV between the chains' state after `n` steps and exact `q_glob`, for each
/// `n` in `n_list`. Every `n` reads the same chains, snapshotted as they run.
pub fn iteration_sweep(
    lm: &TabularLm,
    rule: PruningRule,
    n_list: &[usize],
    n_chains: usize,
    rng_seed: u64,
    budget: u64,
) -> Result<Vec<SweepPoint>> {
    let exact = exact_global(lm, rule, budget)?;
    let mut ns: Vec<usize> = n_list.to_vec();
    ns.sort_unstable();
    ns.dedup();
    let max_n = *ns.last().ok_or_else(|| Error::InvalidParameter("empty N list".into()))?;
    let cfg = ImhRunConfig {
        n_chains,
        n_iterations: max_n,
        rng_seed,
    };
    cfg.validate()?;
    let decoder = LocalDecoder::new(lm, rule)?;
    let snaps: Vec<Vec<Sequence>> = (0..n_chains)
        .into_par_iter()
        .map(|i| run_one(&decoder, i, &cfg, &ns, None).map(|(_, s)| s))
        .collect::<Result<_>>()?;
    Ok(n_list
        .iter()
        .map(|&n| {
            let j = ns.binary_search(&n).expect("n is in the deduped list");
            let emp = Empirical::from_samples(snaps.iter().map(|s| &s[j]));
            SweepPoint {
                n,
                tv: emp.tv_to(&exact),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::{exact_local, exact_model, DEFAULT_BUDGET};
    use crate::lm::random_lm;
    use crate::local::score_local;

    #[test]
    fn accept_examples() {
        assert_eq!(accept_logprob(-1.0, -2.0, -1.0, -2.0).unwrap(), 0.0);
        let a = accept_logprob(0.2f64.ln(), 0.1f64.ln(), 0.1f64.ln(), 0.2f64.ln()).unwrap();
        assert_eq!(a, 0.0);
        let a = accept_logprob(0.1f64.ln(), 0.2f64.ln(), 0.2f64.ln(), 0.1f64.ln()).unwrap();
        assert!((a - 0.25f64.ln()).abs() < 1e-12);
        assert_eq!(
            accept_logprob(f64::NEG_INFINITY, -1.0, -1.0, -1.0).unwrap(),
            f64::NEG_INFINITY
        );
        assert!(matches!(
            accept_logprob(-1.0, -1.0, f64::NEG_INFINITY, -1.0),
            Err(Error::InvalidState(_))
        ));
    }

    #[test]
    fn cached_scores_match_rescoring() {
        let lm = random_lm(5, 4, 3, 1.0).unwrap();
        let rule = PruningRule::TopK(2);
        let cfg = ImhRunConfig { n_chains: 200, n_iterations: 20, rng_seed: 1 };
        for c in imh_run_chains(&lm, rule, cfg).unwrap() {
            let s = score_local(&lm, rule, &c.current).unwrap();
            assert!((s.logprob_unnormalized - c.current_log_unnormalized).abs() < 1e-10);
            assert!((s.logprob_local - c.current_log_proposal).abs() < 1e-10);
            assert!(c.accepts <= c.iterations_done);
            assert_eq!(c.iterations_done, 20);
            assert!(c.current_log_unnormalized.is_finite());
        }
    }

    #[test]
    fn rate_is_one_when_proposal_is_target() {
        let lm = random_lm(6, 3, 3, 1.0).unwrap();
        for rule in [PruningRule::None, PruningRule::TopK(4), PruningRule::TopPi(1.0), PruningRule::TopK(1)] {
            let cfg = ImhRunConfig { n_chains: 100, n_iterations: 5, rng_seed: 2 };
            let chains = imh_run_chains(&lm, rule, cfg).unwrap();
            assert_eq!(acceptance_rate(&chains), 1.0, "{rule}");
        }
    }

    #[test]
    fn rate_in_unit_interval_and_reproducible() {
        let lm = random_lm(11, 4, 3, 1.0).unwrap();
        let cfg = ImhRunConfig { n_chains: 300, n_iterations: 10, rng_seed: 3 };
        let a = acceptance_rate(&imh_run_chains(&lm, PruningRule::TopK(2), cfg).unwrap());
        let b = acceptance_rate(&imh_run_chains(&lm, PruningRule::TopK(2), cfg).unwrap());
        assert_eq!(a, b);
        assert!(a > 0.0 && a <= 1.0);
    }

    #[test]
    fn initial_draws_follow_local() {
        let lm = random_lm(12, 3, 3, 1.0).unwrap();
        let rule = PruningRule::TopK(2);
        let decoder = LocalDecoder::new(&lm, rule).unwrap();
        let starts: Vec<Sequence> = (0..20_000u64)
            .map(|i| {
                let mut rng = rng_from_seed(derive_seed(9, i));
                ImhChain::start(&decoder, &mut rng).current
            })
            .collect();
        let local = exact_local(&lm, rule, DEFAULT_BUDGET).unwrap();
        assert!(Empirical::from_samples(&starts).tv_to(&local) < 0.02);
    }

    #[test]
    fn none_rule_tv_small_at_one_step() {
        let lm = random_lm(13, 3, 3, 1.0).unwrap();
        let pts = iteration_sweep(&lm, PruningRule::None, &[1], 20_000, 4, DEFAULT_BUDGET).unwrap();
        assert!(pts[0].tv < 0.02);
        let model = exact_model(&lm, DEFAULT_BUDGET).unwrap();
        let finals = imh_run(&lm, PruningRule::None, ImhRunConfig { n_chains: 20_000, n_iterations: 1, rng_seed: 4 }).unwrap();
        assert!((Empirical::from_samples(&finals).tv_to(&model) - pts[0].tv).abs() < 1e-15);
    }

    #[test]
    fn sweep_matches_direct_runs() {
        let lm = random_lm(14, 3, 2, 1.0).unwrap();
        let rule = PruningRule::TopK(2);
        let pts = iteration_sweep(&lm, rule, &[5, 1], 500, 5, DEFAULT_BUDGET).unwrap();
        assert_eq!(pts.iter().map(|p| p.n).collect::<Vec<_>>(), vec![5, 1]);
        let exact = exact_global(&lm, rule, DEFAULT_BUDGET).unwrap();
        for p in pts {
            let finals = imh_run(&lm, rule, ImhRunConfig { n_chains: 500, n_iterations: p.n, rng_seed: 5 }).unwrap();
            assert_eq!(Empirical::from_samples(&finals).tv_to(&exact), p.tv);
        }
    }

    #[test]
    fn trace_rows() {
        let lm = random_lm(15, 3, 2, 1.0).unwrap();
        let cfg = ImhRunConfig { n_chains: 3, n_iterations: 4, rng_seed: 6 };
        let (chains, trace) = imh_run_traced(&lm, PruningRule::TopK(2), cfg).unwrap();
        assert_eq!(trace.len(), 12);
        assert_eq!(chains, imh_run_chains(&lm, PruningRule::TopK(2), cfg).unwrap());
        let mut buf = Vec::new();
        write_trace_jsonl(&trace, &mut buf).unwrap();
        let first: serde_json::Value =
            serde_json::from_str(String::from_utf8(buf).unwrap().lines().next().unwrap()).unwrap();
        for k in ["chain", "iter", "accepted", "log_unnorm"] {
            assert!(first.get(k).is_some());
        }
    }

    #[test]
    fn config_rejects_zero() {
        let lm = random_lm(1, 2, 2, 1.0).unwrap();
        let cfg = ImhRunConfig { n_chains: 0, n_iterations: 1, rng_seed: 0 };
        assert!(imh_run(&lm, PruningRule::None, cfg).is_err());
    }
}
