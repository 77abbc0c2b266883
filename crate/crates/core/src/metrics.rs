//! Sample-set metrics and percentile bootstrap intervals.

use std::collections::HashMap;
use std::io::Write;

use rand::Rng as _;
use rayon::prelude::*;
use serde::Serialize;

use crate::lm::{Sequence, TabularLm, TokenId};
use crate::local::{LocalDecoder, LocalSample};
use crate::pruning::PruningRule;
use crate::seeding::{derive_seed, rng_from_seed};
use crate::{Error, Result};

pub const DEFAULT_MAX_N: usize = 4;
pub const DEFAULT_RESAMPLES: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricSummary {
    pub name: String,
    pub point: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_resamples: usize,
}

/// Mean BLEU of each sample against all others (EOS excluded from n-grams).
///
/// An order with no hypothesis n-grams is dropped and the remaining orders
/// share the weight. Any zero precision scores that hypothesis 0. An empty
/// hypothesis scores 1 if another sample is also empty, else 0.
pub fn self_bleu(samples: &[Sequence], max_n: usize) -> Result<f64> {
    if samples.len() < 2 {
        return Err(Error::TooFewSamples { need: 2, got: samples.len() });
    }
    if max_n == 0 {
        return Err(Error::InvalidParameter("max_n must be at least 1".into()));
    }
    let index = NgramIndex::build(samples, max_n);
    let n_empty = samples.iter().filter(|s| s.tokens.is_empty()).count();
    let lens: Vec<usize> = samples.iter().map(|s| s.tokens.len()).collect();
    let mut len_counts: Vec<(usize, usize)> = {
        let mut m: HashMap<usize, usize> = HashMap::new();
        for &l in &lens {
            *m.entry(l).or_default() += 1;
        }
        m.into_iter().collect()
    };
    len_counts.sort_unstable();
    let scores: Vec<f64> = (0..samples.len())
        .into_par_iter()
        .map(|i| {
            let hyp = &samples[i].tokens;
            if hyp.is_empty() {
                return if n_empty >= 2 { 1.0 } else { 0.0 };
            }
            let mut log_p = 0.0;
            let mut orders = 0usize;
            for n in 1..=max_n.min(hyp.len()) {
                let mut clipped = 0usize;
                for (g, c) in ngram_counts(hyp, n) {
                    clipped += c.min(index.max_excluding(g, i));
                }
                if clipped == 0 {
                    return 0.0;
                }
                let total = hyp.len() + 1 - n;
                log_p += (clipped as f64 / total as f64).ln();
                orders += 1;
            }
            let r = closest_ref_len(&len_counts, hyp.len());
            let c = hyp.len() as f64;
            let bp = if c > r as f64 { 1.0 } else { (1.0 - r as f64 / c).exp() };
            bp * (log_p / orders as f64).exp()
        })
        .collect();
    Ok(scores.iter().sum::<f64>() / samples.len() as f64)
}

/// Closest length among the other samples; ties go to the shorter.
fn closest_ref_len(len_counts: &[(usize, usize)], own: usize) -> usize {
    len_counts
        .iter()
        .filter(|&&(l, c)| l != own || c >= 2)
        .map(|&(l, _)| l)
        .min_by_key(|&l| (l.abs_diff(own), l))
        .expect("at least one other sample")
}

fn ngram_counts(tokens: &[TokenId], n: usize) -> HashMap<&[TokenId], usize> {
    let mut m = HashMap::new();
    for g in tokens.windows(n) {
        *m.entry(g).or_default() += 1;
    }
    m
}

#[derive(Clone, Copy, Default)]
struct TopTwo {
    best: usize,
    owner: usize,
    second: usize,
}

/// Per n-gram, the largest and second-largest count over samples, so the
/// max over "all samples except i" is O(1).
struct NgramIndex<'a> {
    top: HashMap<&'a [TokenId], TopTwo>,
}

impl<'a> NgramIndex<'a> {
    fn build(samples: &'a [Sequence], max_n: usize) -> Self {
        let mut top: HashMap<&[TokenId], TopTwo> = HashMap::new();
        for (i, s) in samples.iter().enumerate() {
            for n in 1..=max_n {
                for (g, c) in ngram_counts(&s.tokens, n) {
                    let e = top.entry(g).or_default();
                    if c > e.best {
                        e.second = e.best;
                        e.best = c;
                        e.owner = i;
                    } else if c > e.second {
                        e.second = c;
                    }
                }
            }
        }
        Self { top }
    }

    fn max_excluding(&self, g: &[TokenId], i: usize) -> usize {
        match self.top.get(g) {
            Some(t) if t.owner == i => t.second,
            Some(t) => t.best,
            None => 0,
        }
    }
}

/// Mean of `|w| + 1`, counting EOS.
pub fn length_stats(samples: &[Sequence]) -> f64 {
    let total: usize = samples.iter().map(|s| s.len() + 1).sum();
    total as f64 / samples.len() as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Scorer {
    Model,
    Local(PruningRule),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Loglik {
    pub mean: f64,
    pub n_scored: usize,
    pub n_excluded: usize,
}

/// Per-sample log-probabilities; `None` where the score is −∞.
pub fn log_scores(lm: &TabularLm, samples: &[Sequence], scorer: Scorer) -> Result<Vec<Option<f64>>> {
    let raw: Vec<f64> = match scorer {
        Scorer::Model => samples.par_iter().map(|s| lm.sequence_logprob(s)).collect(),
        Scorer::Local(rule) => {
            let d = LocalDecoder::new(lm, rule)?;
            samples.par_iter().map(|s| d.score(s).logprob_local).collect()
        }
    };
    Ok(raw.into_iter().map(|v| v.is_finite().then_some(v)).collect())
}

/// Mean over the finite entries.
pub fn mean_finite(scores: &[Option<f64>]) -> Loglik {
    let finite: Vec<f64> = scores.iter().flatten().copied().collect();
    Loglik {
        mean: finite.iter().sum::<f64>() / finite.len() as f64,
        n_scored: finite.len(),
        n_excluded: scores.len() - finite.len(),
    }
}

/// Mean log-probability under the scorer, with −∞ samples excluded and counted.
pub fn loglik_under(lm: &TabularLm, samples: &[Sequence], scorer: Scorer) -> Result<Loglik> {
    Ok(mean_finite(&log_scores(lm, samples, scorer)?))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConstantHistogram {
    /// Edges in `log Z̄_loc`; `counts.len() + 1` of them.
    pub bin_edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub total: usize,
}

impl ConstantHistogram {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "bin_low,bin_high,count")?;
        for (i, c) in self.counts.iter().enumerate() {
            writeln!(w, "{},{},{}", self.bin_edges[i], self.bin_edges[i + 1], c)?;
        }
        Ok(())
    }
}

/// Equal-width histogram of `log Z̄_loc` over the observed range. A single
/// observed value gets the range `[v − 0.5, v + 0.5]`.
pub fn constant_histogram(samples: &[LocalSample], n_bins: usize) -> Result<ConstantHistogram> {
    if samples.is_empty() || n_bins == 0 {
        return Err(Error::InvalidParameter("histogram needs samples and bins".into()));
    }
    let vals: Vec<f64> = samples.iter().map(|s| s.log_seq_constant).collect();
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("sequence constants must be positive".into()));
    }
    let mut lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
    let mut hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo <= 0.0 {
        lo -= 0.5;
        hi += 0.5;
    }
    let width = (hi - lo) / n_bins as f64;
    let mut bin_edges: Vec<f64> = (0..n_bins).map(|i| lo + i as f64 * width).collect();
    bin_edges.push(hi);
    let mut counts = vec![0usize; n_bins];
    for v in &vals {
        let b = (((v - lo) / width) as usize).min(n_bins - 1);
        counts[b] += 1;
    }
    Ok(ConstantHistogram { bin_edges, counts, total: vals.len() })
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let j = (i + 1).min(sorted.len() - 1);
    let frac = pos - i as f64;
    sorted[i] + frac * (sorted[j] - sorted[i])
}

pub fn interquartile_range(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile(&v, 0.75) - quantile(&v, 0.25)
}

/// Percentile 95% interval over `n_resamples` resamples with replacement.
/// Resample `r` draws its indices from stream `derive_seed(rng_seed, r)`.
pub fn bootstrap<T, F>(
    name: &str,
    metric: F,
    samples: &[T],
    n_resamples: usize,
    rng_seed: u64,
) -> Result<MetricSummary>
where
    T: Clone + Sync,
    F: Fn(&[T]) -> f64 + Sync,
{
    if n_resamples < 2 {
        return Err(Error::InvalidParameter("bootstrap needs at least 2 resamples".into()));
    }
    if samples.is_empty() {
        return Err(Error::TooFewSamples { need: 1, got: 0 });
    }
    let point = metric(samples);
    let mut stats: Vec<f64> = (0..n_resamples)
        .into_par_iter()
        .map(|r| {
            let mut rng = rng_from_seed(derive_seed(rng_seed, r as u64));
            let resample: Vec<T> = (0..samples.len())
                .map(|_| samples[rng.random_range(0..samples.len())].clone())
                .collect();
            metric(&resample)
        })
        .collect();
    stats.sort_by(f64::total_cmp);
    Ok(MetricSummary {
        name: name.to_string(),
        point,
        ci_low: quantile(&stats, 0.025),
        ci_high: quantile(&stats, 0.975),
        n_resamples,
    })
}

pub fn write_metrics_csv<W: Write>(rows: &[MetricSummary], mut w: W) -> Result<()> {
    writeln!(w, "metric,point,ci_low,ci_high,n")?;
    for r in rows {
        writeln!(w, "{},{},{},{},{}", r.name, r.point, r.ci_low, r.ci_high, r.n_resamples)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::{build_reverse_construction, random_lm};
    use crate::local::LocalDecoder;

    fn seq(t: &[TokenId]) -> Sequence {
        Sequence::terminated(t.to_vec())
    }

    #[test]
    fn bleu_identical_and_disjoint() {
        let same = vec![seq(&[0, 1, 2]); 4];
        assert_eq!(self_bleu(&same, 4).unwrap(), 1.0);
        let disjoint = vec![seq(&[0, 0]), seq(&[1]), seq(&[2, 2, 2])];
        assert_eq!(self_bleu(&disjoint, 4).unwrap(), 0.0);
        assert!(matches!(self_bleu(&same[..1], 4), Err(Error::TooFewSamples { .. })));
    }

    #[test]
    fn bleu_empty_hypotheses() {
        assert_eq!(self_bleu(&[seq(&[]), seq(&[])], 4).unwrap(), 1.0);
        assert_eq!(self_bleu(&[seq(&[]), seq(&[0])], 4).unwrap(), 0.0);
    }

    #[test]
    fn bleu_hand_computed() {
        // Hypothesis [0,1] vs ref [0,1,2]: p1 = p2 = 1, c=2 < r=3, BP = e^{-1/2}.
        let s = vec![seq(&[0, 1]), seq(&[0, 1, 2])];
        // Second: hyp [0,1,2] vs ref [0,1]: p1 = 2/3, p2 = 1/2, p3 = 0 → 0.
        let want = (-0.5f64).exp() / 2.0;
        assert!((self_bleu(&s, 4).unwrap() - want).abs() < 1e-15);
    }

    #[test]
    fn length_examples() {
        assert_eq!(length_stats(&[seq(&[0, 1]), seq(&[1, 1])]), 3.0);
        assert_eq!(length_stats(&[seq(&[]), seq(&[])]), 1.0);
        assert_eq!(length_stats(&[seq(&[0]), seq(&[0, 1, 2])]), 3.0);
    }

    #[test]
    fn loglik_examples() {
        let lm = build_reverse_construction(0.5, 2, 2).unwrap();
        let samples = vec![seq(&[0]), seq(&[1, 0]), seq(&[1, 1])];
        let m = loglik_under(&lm, &samples, Scorer::Model).unwrap();
        let l = loglik_under(&lm, &samples, Scorer::Local(PruningRule::None)).unwrap();
        assert_eq!(m, l);
        let k1 = loglik_under(&lm, &samples, Scorer::Local(PruningRule::TopK(1))).unwrap();
        assert_eq!(k1.n_excluded, 2);
        assert_eq!(k1.n_scored, 1);
        assert_eq!(k1.mean, 0.0);
    }

    #[test]
    fn histogram_spike_and_counts() {
        let lm = random_lm(3, 3, 3, 1.0).unwrap();
        let none = LocalDecoder::new(&lm, PruningRule::None).unwrap().sample_batch(500, 1);
        let h = constant_histogram(&none, 10).unwrap();
        assert_eq!(h.counts.iter().sum::<usize>(), 500);
        assert_eq!(h.bin_edges.len(), 11);
        assert!(h.bin_edges.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(h.counts[5], 500);
        let all = LocalDecoder::new(&lm, PruningRule::TopK(4)).unwrap().sample_batch(500, 1);
        assert_eq!(constant_histogram(&all, 10).unwrap(), h);
        let k2 = LocalDecoder::new(&lm, PruningRule::TopK(2)).unwrap().sample_batch(500, 1);
        let h2 = constant_histogram(&k2, 7).unwrap();
        assert_eq!(h2.counts.len(), 7);
        assert_eq!(h2.total, 500);
        let mut buf = Vec::new();
        h2.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 8);
    }

    #[test]
    fn bootstrap_basics() {
        let xs: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let c = bootstrap("c", |_: &[f64]| 2.5, &xs, 10, 1).unwrap();
        assert_eq!((c.ci_low, c.point, c.ci_high), (2.5, 2.5, 2.5));
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let a = bootstrap("m", mean, &xs, 10, 7).unwrap();
        assert_eq!(a, bootstrap("m", mean, &xs, 10, 7).unwrap());
        assert!(a.ci_low <= a.ci_high);
        assert_eq!(a.n_resamples, 10);
        assert!(bootstrap("m", mean, &xs, 1, 7).is_err());
    }

    #[test]
    fn bootstrap_width_shrinks_with_duplication() {
        let lm = random_lm(4, 3, 4, 1.0).unwrap();
        let base: Vec<Sequence> = LocalDecoder::new(&lm, PruningRule::None)
            .unwrap()
            .sample_batch(200, 2)
            .into_iter()
            .map(|s| s.sequence)
            .collect();
        let dup: Vec<Sequence> = (0..10).flat_map(|_| base.iter().cloned()).collect();
        let w = |s: &[Sequence]| {
            let m = bootstrap("len", length_stats, s, 200, 3).unwrap();
            m.ci_high - m.ci_low
        };
        assert!(w(&dup) < w(&base));
    }

    #[test]
    fn metrics_csv() {
        let rows = vec![MetricSummary {
            name: "len".into(),
            point: 2.0,
            ci_low: 1.5,
            ci_high: 2.5,
            n_resamples: 10,
        }];
        let mut buf = Vec::new();
        write_metrics_csv(&rows, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "metric,point,ci_low,ci_high,n\nlen,2,1.5,2.5,10\n"
        );
    }
}
