//! Experiment configuration and the staged driver behind the CLI.
//!
//! Config files are flat `key = value` text; `#` starts a comment.
//!
//! | key                   | value                                              | default |
//! |-----------------------|----------------------------------------------------|---------|
//! | `model`               | `random:seed=S,vocab=V,max_length=T,concentration=C`, `reverse:x=X,vocab=V,max_length=T`, `forward:x=X,k=K,vocab=V,max_length=T`, `reversal:seed=S`, `path:FILE` | `random:seed=0,vocab=4,max_length=3,concentration=1` |
//! | `rules`               | comma list, e.g. `none,top_k:2,top_pi:0.9`         | `none,top_k:2,top_pi:0.9` |
//! | `n_local_samples`     | count                                              | 20000 |
//! | `n_chains`            | count                                              | 2000 |
//! | `n_iterations`        | count                                              | 200 |
//! | `n_sweep`             | comma list of counts                               | unset |
//! | `metrics`             | subset of `self_bleu,length,loglik,histogram`      | all |
//! | `hist_bins`           | count                                              | 20 |
//! | `bootstrap_resamples` | count ≥ 2                                          | 10 |
//! | `self_bleu_max_n`     | count                                              | 4 |
//! | `budget`              | max enumerated strings                             | 10000000 |
//! | `seed`                | integer                                            | 0 |
//! | `output_dir`          | directory                                          | `out` |

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::exact::{
    bound_report, find_rank_reversal, growth_sweep, BoundReport, Construction, Empirical,
    Enumeration, GrowthPoint, DEFAULT_BUDGET,
};
use crate::imh::{
    acceptance_rate, imh_run_chains, imh_run_traced, iteration_sweep, write_trace_jsonl,
    ImhRunConfig, SweepPoint,
};
use crate::lm::{random_lm, Sequence, TabularLm};
use crate::local::{write_samples_jsonl, LocalDecoder, LocalSample};
use crate::metrics::{
    bootstrap, constant_histogram, length_stats, log_scores, mean_finite, self_bleu,
    write_metrics_csv, ConstantHistogram, MetricSummary, Scorer,
};
use crate::pruning::PruningRule;
use crate::seeding::{derive_seed, stage_seed};
use crate::{Error, Result};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    Random { seed: u64, vocab: usize, max_length: usize, concentration: f64 },
    Reverse { x: f64, vocab: usize, max_length: usize },
    Forward { x: f64, k: usize, vocab: usize, max_length: usize },
    Reversal { seed: u64 },
    Path { path: PathBuf },
}

impl ModelSpec {
    /// Parses `kind:key=value,...`; relative paths resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let (kind, rest) = text.split_once(':').unwrap_or((text, ""));
        if kind.trim() == "path" {
            let p = PathBuf::from(rest.trim());
            let path = if p.is_absolute() { p } else { base.join(p) };
            if !path.exists() {
                return Err(Error::Config(format!("model file {} not found", path.display())));
            }
            return Ok(ModelSpec::Path { path });
        }
        let mut kv = std::collections::BTreeMap::new();
        for part in rest.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("expected key=value in `{part}`")))?;
            kv.insert(k.trim().to_string(), v.trim().to_string());
        }
        let take = |kv: &mut std::collections::BTreeMap<String, String>, key: &str| {
            kv.remove(key)
                .ok_or_else(|| Error::Config(format!("model `{kind}` needs `{key}`")))
        };
        let spec = match kind.trim() {
            "random" => ModelSpec::Random {
                seed: num(&take(&mut kv, "seed")?, "seed")?,
                vocab: num(&take(&mut kv, "vocab")?, "vocab")?,
                max_length: num(&take(&mut kv, "max_length")?, "max_length")?,
                concentration: num(&take(&mut kv, "concentration")?, "concentration")?,
            },
            "reverse" => ModelSpec::Reverse {
                x: num(&take(&mut kv, "x")?, "x")?,
                vocab: num(&take(&mut kv, "vocab")?, "vocab")?,
                max_length: num(&take(&mut kv, "max_length")?, "max_length")?,
            },
            "forward" => ModelSpec::Forward {
                x: num(&take(&mut kv, "x")?, "x")?,
                k: num(&take(&mut kv, "k")?, "k")?,
                vocab: num(&take(&mut kv, "vocab")?, "vocab")?,
                max_length: num(&take(&mut kv, "max_length")?, "max_length")?,
            },
            "reversal" => ModelSpec::Reversal { seed: num(&take(&mut kv, "seed")?, "seed")? },
            other => return Err(Error::Config(format!("unknown model kind `{other}`"))),
        };
        if let Some(k) = kv.keys().next() {
            return Err(Error::Config(format!("unknown model parameter `{k}`")));
        }
        Ok(spec)
    }

    /// Builds the model; parameter errors surface as config errors.
    pub fn build(&self) -> Result<TabularLm> {
        let as_config = |e: Error| match e {
            Error::InvalidParameter(m) | Error::InvalidModel(m) => Error::Config(m),
            other => other,
        };
        match self {
            ModelSpec::Random { seed, vocab, max_length, concentration } => {
                random_lm(*seed, *vocab, *max_length, *concentration)
            }
            ModelSpec::Reverse { x, vocab, max_length } => {
                Construction::Reverse { x: *x, vocab: *vocab }.build(*max_length)
            }
            ModelSpec::Forward { x, k, vocab, max_length } => {
                Construction::Forward { x: *x, k: *k, vocab: *vocab }.build(*max_length)
            }
            ModelSpec::Reversal { seed } => Ok(find_rank_reversal(*seed, PruningRule::TopK(2))?.model),
            ModelSpec::Path { path } => TabularLm::read_text(BufReader::new(File::open(path)?)),
        }
        .map_err(as_config)
    }
}

fn num<T: std::str::FromStr>(v: &str, key: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{v}`")))
}

fn positive(v: &str, key: &str) -> Result<usize> {
    let n: usize = num(v, key)?;
    if n == 0 {
        return Err(Error::Config(format!("`{key}` must be positive")));
    }
    Ok(n)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct MetricToggles {
    pub self_bleu: bool,
    pub length: bool,
    pub loglik: bool,
    pub histogram: bool,
}

impl MetricToggles {
    pub const ALL: Self = Self { self_bleu: true, length: true, loglik: true, histogram: true };

    fn parse(v: &str) -> Result<Self> {
        let mut t = Self { self_bleu: false, length: false, loglik: false, histogram: false };
        for name in v.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            match name {
                "self_bleu" => t.self_bleu = true,
                "length" => t.length = true,
                "loglik" => t.loglik = true,
                "histogram" => t.histogram = true,
                other => return Err(Error::Config(format!("unknown metric `{other}`"))),
            }
        }
        Ok(t)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    pub rules: Vec<PruningRule>,
    pub n_local_samples: usize,
    pub n_chains: usize,
    pub n_iterations: usize,
    pub n_sweep: Option<Vec<usize>>,
    pub metrics: MetricToggles,
    pub hist_bins: usize,
    pub bootstrap_resamples: usize,
    pub self_bleu_max_n: usize,
    pub budget: u64,
    pub seed: u64,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model: ModelSpec::Random { seed: 0, vocab: 4, max_length: 3, concentration: 1.0 },
            rules: vec![PruningRule::None, PruningRule::TopK(2), PruningRule::TopPi(0.9)],
            n_local_samples: 20_000,
            n_chains: 2_000,
            n_iterations: 200,
            n_sweep: None,
            metrics: MetricToggles::ALL,
            hist_bins: 20,
            bootstrap_resamples: 10,
            self_bleu_max_n: 4,
            budget: DEFAULT_BUDGET,
            seed: 0,
            output_dir: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", lineno + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "model" => cfg.model = ModelSpec::parse(value, base)?,
                "rules" => {
                    cfg.rules = value
                        .split(',')
                        .map(str::trim)
                        .filter(|s| !s.is_empty())
                        .map(str::parse)
                        .collect::<Result<_>>()?;
                }
                "n_local_samples" => cfg.n_local_samples = positive(value, key)?,
                "n_chains" => cfg.n_chains = positive(value, key)?,
                "n_iterations" => cfg.n_iterations = positive(value, key)?,
                "n_sweep" => {
                    cfg.n_sweep = Some(
                        value
                            .split(',')
                            .map(str::trim)
                            .filter(|s| !s.is_empty())
                            .map(|v| positive(v, key))
                            .collect::<Result<_>>()?,
                    );
                }
                "metrics" => cfg.metrics = MetricToggles::parse(value)?,
                "hist_bins" => cfg.hist_bins = positive(value, key)?,
                "bootstrap_resamples" => cfg.bootstrap_resamples = num(value, key)?,
                "self_bleu_max_n" => cfg.self_bleu_max_n = positive(value, key)?,
                "budget" => cfg.budget = num(value, key)?,
                "seed" => cfg.seed = num(value, key)?,
                "output_dir" => {
                    let p = PathBuf::from(value);
                    cfg.output_dir = if p.is_absolute() { p } else { base.join(p) };
                }
                other => return Err(Error::Config(format!("unknown key `{other}`"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rules.is_empty() {
            return Err(Error::Config("`rules` must not be empty".into()));
        }
        if self.bootstrap_resamples < 2 {
            return Err(Error::Config("`bootstrap_resamples` must be at least 2".into()));
        }
        if matches!(&self.n_sweep, Some(v) if v.is_empty()) {
            return Err(Error::Config("`n_sweep` must not be empty".into()));
        }
        Ok(())
    }

    fn imh_config(&self, rule_index: usize) -> ImhRunConfig {
        ImhRunConfig {
            n_chains: self.n_chains,
            n_iterations: self.n_iterations,
            rng_seed: derive_seed(stage_seed(self.seed, "imh"), rule_index as u64),
        }
    }
}

/// Which parts of the pipeline to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Stages {
    pub local: bool,
    pub exact: bool,
    pub imh: bool,
    pub sweep: bool,
    pub metrics: bool,
    pub figures: bool,
    pub imh_trace: bool,
}

impl Stages {
    pub const ALL: Self = Self {
        local: true,
        exact: true,
        imh: true,
        sweep: true,
        metrics: true,
        figures: true,
        imh_trace: false,
    };
    pub const NONE: Self = Self {
        local: false,
        exact: false,
        imh: false,
        sweep: false,
        metrics: false,
        figures: false,
        imh_trace: false,
    };
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RuleRecord {
    pub rule: PruningRule,
    pub local_metrics: Vec<MetricSummary>,
    pub global_metrics: Vec<MetricSummary>,
    pub bounds: Option<BoundReport>,
    /// Why the exact reference is absent, when it is.
    pub exact_skipped: Option<String>,
    pub tv_local_exact: Option<f64>,
    pub tv_imh_exact: Option<f64>,
    pub acceptance_rate: Option<f64>,
    pub imh_iterations: usize,
    /// Model draws per chain, the initial proposal included.
    pub imh_model_draws: usize,
    pub local_excluded_under_model: Option<usize>,
    pub global_excluded_under_local: Option<usize>,
    pub sweep: Option<Vec<SweepPoint>>,
    pub histogram: Option<ConstantHistogram>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub config: ExperimentConfig,
    pub records: Vec<RuleRecord>,
    pub warnings: Vec<String>,
    pub runtime_seconds: f64,
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

/// Runs every stage and writes all artifacts under `cfg.output_dir`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    run_stages(cfg, Stages::ALL)
}

pub fn run_stages(cfg: &ExperimentConfig, stages: Stages) -> Result<ExperimentReport> {
    cfg.validate()?;
    let started = Instant::now();
    let lm = cfg.model.build()?;
    for &rule in &cfg.rules {
        rule.validate(lm.alphabet().size_with_eos()).map_err(|e| Error::Config(e.to_string()))?;
    }
    let out = &cfg.output_dir;
    fs::create_dir_all(out)?;
    {
        let mut w = create(out, "model.txt")?;
        lm.write_text(&mut w)?;
        w.flush()?;
    }
    let mut warnings = Vec::new();
    let mut records = Vec::with_capacity(cfg.rules.len());
    let mut metric_rows = Vec::new();
    for (ri, &rule) in cfg.rules.iter().enumerate() {
        let label = rule.label();
        let mut rec = RuleRecord {
            rule,
            local_metrics: vec![],
            global_metrics: vec![],
            bounds: None,
            exact_skipped: None,
            tv_local_exact: None,
            tv_imh_exact: None,
            acceptance_rate: None,
            imh_iterations: cfg.n_iterations,
            imh_model_draws: cfg.n_iterations + 1,
            local_excluded_under_model: None,
            global_excluded_under_local: None,
            sweep: None,
            histogram: None,
        };

        let local: Option<Vec<LocalSample>> = if stages.local {
            let d = LocalDecoder::new(&lm, rule)?;
            let s = d.sample_batch(
                cfg.n_local_samples,
                derive_seed(stage_seed(cfg.seed, "local"), ri as u64),
            );
            let mut w = create(out, &format!("local_{label}.jsonl"))?;
            write_samples_jsonl(&s, &mut w)?;
            w.flush()?;
            Some(s)
        } else {
            None
        };

        let enumeration = if stages.exact || stages.sweep {
            match Enumeration::run(&lm, rule, cfg.budget) {
                Ok(en) => Some(en),
                Err(e @ Error::BudgetExceeded { .. }) => {
                    let msg = format!("{rule}: exact reference skipped: {e}");
                    warnings.push(msg.clone());
                    rec.exact_skipped = Some(msg);
                    None
                }
                Err(e) => return Err(e),
            }
        } else {
            None
        };
        let exact_global = enumeration.as_ref().map(|en| en.global());
        if let (true, Some(en)) = (stages.exact, &enumeration) {
            let local_d = en.local();
            let global_d = exact_global.as_ref().expect("present with enumeration");
            let mut w = create(out, &format!("exact_local_{label}.csv"))?;
            local_d.write_csv(&mut w)?;
            w.flush()?;
            let mut w = create(out, &format!("exact_global_{label}.csv"))?;
            global_d.write_csv(&mut w)?;
            w.flush()?;
            let b = bound_report(en, rule);
            let mut w = create(out, &format!("bounds_{label}.json"))?;
            b.write_json(&mut w)?;
            writeln!(w)?;
            w.flush()?;
            rec.bounds = Some(b);
            if let Some(s) = &local {
                let emp = Empirical::from_samples(s.iter().map(|x| &x.sequence));
                rec.tv_local_exact = Some(emp.tv_to(&local_d));
            }
        }

        let finals: Option<Vec<Sequence>> = if stages.imh {
            let icfg = cfg.imh_config(ri);
            let chains = if stages.imh_trace {
                let (chains, trace) = imh_run_traced(&lm, rule, icfg)?;
                let mut w = create(out, &format!("imh_trace_{label}.jsonl"))?;
                write_trace_jsonl(&trace, &mut w)?;
                w.flush()?;
                chains
            } else {
                imh_run_chains(&lm, rule, icfg)?
            };
            rec.acceptance_rate = Some(acceptance_rate(&chains));
            let mut w = create(out, &format!("imh_{label}.csv"))?;
            writeln!(w, "chain,sequence,log_unnorm,accepts")?;
            for (i, c) in chains.iter().enumerate() {
                writeln!(w, "{},{},{},{}", i, c.current, c.current_log_unnormalized, c.accepts)?;
            }
            w.flush()?;
            let finals: Vec<Sequence> = chains.into_iter().map(|c| c.current).collect();
            if let Some(g) = &exact_global {
                rec.tv_imh_exact = Some(Empirical::from_samples(&finals).tv_to(g));
            }
            Some(finals)
        } else {
            None
        };

        if let (true, Some(ns), Some(_)) = (stages.sweep, &cfg.n_sweep, &enumeration) {
            let icfg = cfg.imh_config(ri);
            let pts = iteration_sweep(&lm, rule, ns, icfg.n_chains, icfg.rng_seed, cfg.budget)?;
            let mut w = create(out, &format!("sweep_{label}.csv"))?;
            writeln!(w, "n,tv")?;
            for p in &pts {
                writeln!(w, "{},{}", p.n, p.tv)?;
            }
            w.flush()?;
            rec.sweep = Some(pts);
        }

        if stages.metrics {
            let bseed = derive_seed(stage_seed(cfg.seed, "bootstrap"), ri as u64);
            if let Some(s) = &local {
                let seqs: Vec<Sequence> = s.iter().map(|x| x.sequence.clone()).collect();
                let (m, excl) = sample_metrics(&lm, rule, &seqs, cfg, bseed, "local")?;
                rec.local_metrics = m;
                rec.local_excluded_under_model = excl.0;
                if cfg.metrics.histogram {
                    let h = constant_histogram(s, cfg.hist_bins)?;
                    let mut w = create(out, &format!("hist_{label}.csv"))?;
                    h.write_csv(&mut w)?;
                    w.flush()?;
                    rec.histogram = Some(h);
                }
            }
            if let Some(f) = &finals {
                let (m, excl) = sample_metrics(&lm, rule, f, cfg, derive_seed(bseed, 1 << 32), "global")?;
                rec.global_metrics = m;
                rec.global_excluded_under_local = excl.1;
            }
            for m in rec.local_metrics.iter().chain(&rec.global_metrics) {
                let mut row = m.clone();
                row.name = format!("{label}/{}", m.name);
                metric_rows.push(row);
            }
        }
        records.push(rec);
    }
    if stages.metrics {
        let mut w = create(out, "metrics.csv")?;
        write_metrics_csv(&metric_rows, &mut w)?;
        w.flush()?;
    }
    let report = ExperimentReport {
        schema_version: REPORT_SCHEMA_VERSION,
        config: cfg.clone(),
        records,
        warnings,
        runtime_seconds: started.elapsed().as_secs_f64(),
    };
    if stages.figures {
        emit_figures_data(&report, &out.join("figures"))?;
    }
    let mut w = create(out, "report.json")?;
    serde_json::to_writer_pretty(&mut w, &report)?;
    writeln!(w)?;
    w.flush()?;
    Ok(report)
}

/// Samples excluded under the model and under the local scorer.
type Exclusions = (Option<usize>, Option<usize>);

/// Metrics for one sample set, named `{decoder}/{metric}`. Also returns the
/// exclusion counts under the model and local scorers.
fn sample_metrics(
    lm: &TabularLm,
    rule: PruningRule,
    samples: &[Sequence],
    cfg: &ExperimentConfig,
    seed: u64,
    decoder: &str,
) -> Result<(Vec<MetricSummary>, Exclusions)> {
    let n = cfg.bootstrap_resamples;
    let mut out = Vec::new();
    let mut excl = (None, None);
    if cfg.metrics.self_bleu && samples.len() >= 2 {
        let max_n = cfg.self_bleu_max_n;
        let f = |s: &[Sequence]| self_bleu(s, max_n).unwrap_or(f64::NAN);
        out.push(bootstrap(&format!("{decoder}/self_bleu"), f, samples, n, derive_seed(seed, 0))?);
    }
    if cfg.metrics.length {
        out.push(bootstrap(&format!("{decoder}/length"), length_stats, samples, n, derive_seed(seed, 1))?);
    }
    if cfg.metrics.loglik {
        for (i, (name, scorer)) in [("loglik_model", Scorer::Model), ("loglik_local", Scorer::Local(rule))]
            .into_iter()
            .enumerate()
        {
            let scores = log_scores(lm, samples, scorer)?;
            let summary = mean_finite(&scores);
            if i == 0 {
                excl.0 = Some(summary.n_excluded);
            } else {
                excl.1 = Some(summary.n_excluded);
            }
            let f = |s: &[Option<f64>]| mean_finite(s).mean;
            out.push(bootstrap(
                &format!("{decoder}/{name}"),
                f,
                &scores,
                n,
                derive_seed(seed, 2 + i as u64),
            )?);
        }
    }
    Ok((out, excl))
}

fn find_metric<'a>(ms: &'a [MetricSummary], suffix: &str) -> Option<&'a MetricSummary> {
    ms.iter().find(|m| m.name.ends_with(suffix))
}

/// Writes one CSV per figure analogue plus a README describing the columns.
pub fn emit_figures_data(report: &ExperimentReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut w = create(dir, "constant_histogram.csv")?;
    writeln!(w, "rule,bin_low,bin_high,count")?;
    for r in &report.records {
        if let Some(h) = &r.histogram {
            for (i, c) in h.counts.iter().enumerate() {
                writeln!(w, "{},{},{},{}", r.rule, h.bin_edges[i], h.bin_edges[i + 1], c)?;
            }
        }
    }
    w.flush()?;

    let mut w = create(dir, "tv_vs_n.csv")?;
    writeln!(w, "rule,n,tv")?;
    for r in &report.records {
        for p in r.sweep.iter().flatten() {
            writeln!(w, "{},{},{}", r.rule, p.n, p.tv)?;
        }
    }
    w.flush()?;

    let mut w = create(dir, "length.csv")?;
    writeln!(w, "rule,decoder,mean,ci_low,ci_high")?;
    for r in &report.records {
        for (dec, ms) in [("local", &r.local_metrics), ("global", &r.global_metrics)] {
            if let Some(m) = find_metric(ms, "/length") {
                writeln!(w, "{},{},{},{},{}", r.rule, dec, m.point, m.ci_low, m.ci_high)?;
            }
        }
    }
    w.flush()?;

    let mut w = create(dir, "loglik.csv")?;
    writeln!(w, "rule,decoder,scorer,mean,ci_low,ci_high")?;
    for r in &report.records {
        for (dec, ms) in [("local", &r.local_metrics), ("global", &r.global_metrics)] {
            for (scorer, suffix) in [("model", "/loglik_model"), ("local", "/loglik_local")] {
                if let Some(m) = find_metric(ms, suffix) {
                    writeln!(w, "{},{},{},{},{},{}", r.rule, dec, scorer, m.point, m.ci_low, m.ci_high)?;
                }
            }
        }
    }
    w.flush()?;

    let mut w = create(dir, "README.md")?;
    w.write_all(FIGURES_README.as_bytes())?;
    w.flush()?;
    Ok(())
}

const FIGURES_README: &str = "\
# Figure data

- `constant_histogram.csv`: `rule,bin_low,bin_high,count`. Histogram of the
  log sequence-level local constant `log Z̄_loc(w)` over local samples.
- `tv_vs_n.csv`: `rule,n,tv`. Total variation between IMH chain states after
  `n` steps and the exact global distribution. One row per configured `n`.
- `length.csv`: `rule,decoder,mean,ci_low,ci_high`. Mean length counting EOS,
  for local samples and IMH (global) samples, with 95% bootstrap intervals.
- `loglik.csv`: `rule,decoder,scorer,mean,ci_low,ci_high`. Mean
  log-probability under the model (`scorer=model`) or the local decoder
  (`scorer=local`). Samples with zero probability are excluded.
";

/// One row of the theorem table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TheoremRow {
    pub construction: Construction,
    pub rule: PruningRule,
    pub bounds: Vec<BoundReport>,
    pub growth: Vec<GrowthPoint>,
    /// The construction's target KL grows strictly with `T` (identity rules:
    /// every KL is exactly zero).
    pub growth_ok: bool,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TheoremTable {
    pub rows: Vec<TheoremRow>,
    pub all_passed: bool,
}

impl TheoremTable {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "construction,rule,max_length,kl_forward,kl_reverse,upper_bound,zglob,zglob_lower_bound,passed"
        )?;
        for r in &self.rows {
            for b in &r.bounds {
                writeln!(
                    w,
                    "{},{},{},{},{},{},{},{},{}",
                    r.construction.name(),
                    r.rule,
                    b.max_length,
                    b.kl_forward,
                    b.kl_reverse,
                    b.upper_bound,
                    b.zglob,
                    b.zglob_lower_bound,
                    b.passed && r.growth_ok
                )?;
            }
        }
        Ok(())
    }
}

pub fn default_theorem_grid() -> (Vec<Construction>, Vec<usize>, Vec<PruningRule>) {
    (
        vec![
            Construction::Reverse { x: 0.5, vocab: 4 },
            Construction::Forward { x: 0.6, k: 2, vocab: 4 },
        ],
        (2..=6).collect(),
        vec![PruningRule::TopK(2), PruningRule::None],
    )
}

/// Bounds and growth for every construction × rule over `lengths`.
pub fn verify_theorems(
    constructions: &[Construction],
    lengths: &[usize],
    rules: &[PruningRule],
    budget: u64,
) -> Result<TheoremTable> {
    let mut rows = Vec::new();
    for &c in constructions {
        for &rule in rules {
            let mut bounds = Vec::with_capacity(lengths.len());
            for &t in lengths {
                let lm = c.build(t)?;
                let en = Enumeration::run(&lm, rule, budget)?;
                bounds.push(bound_report(&en, rule));
            }
            let growth = growth_sweep(c, lengths, rule, budget)?;
            let identity = rule.is_identity_for(match c {
                Construction::Reverse { vocab, .. } | Construction::Forward { vocab, .. } => vocab + 1,
            }) || rule == PruningRule::None;
            let growth_ok = if identity {
                growth.iter().all(|g| g.kl_forward == 0.0 && g.kl_reverse == 0.0)
            } else {
                let key = |g: &GrowthPoint| match c {
                    Construction::Reverse { .. } => g.kl_reverse,
                    Construction::Forward { .. } => g.kl_forward,
                };
                growth.windows(2).all(|w| key(&w[1]) > key(&w[0]))
            };
            let passed = growth_ok && bounds.iter().all(|b| b.passed);
            rows.push(TheoremRow { construction: c, rule, bounds, growth, growth_ok, passed });
        }
    }
    let all_passed = rows.iter().all(|r| r.passed);
    Ok(TheoremTable { rows, all_passed })
}
