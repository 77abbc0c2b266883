use std::fs::{self, File};
use std::io::BufWriter;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use globdec::experiment::{
    default_theorem_grid, run_stages, verify_theorems, ExperimentConfig, ExperimentReport, Stages,
};

#[derive(Parser, Debug)]
#[command(name = "globdec", version, about = "Local vs global decoding on tabular language models")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Key-value config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config's global seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the config's output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides the enumeration budget (max strings).
    #[arg(long, global = true)]
    budget: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw local samples for every configured rule.
    SampleLocal,
    /// Enumerate exact local and global distributions and check bounds.
    Exact,
    /// Run IMH chains targeting the global distribution.
    Imh {
        /// Also write a per-iteration JSON-lines trace.
        #[arg(long)]
        trace: bool,
    },
    /// TV to the exact global distribution as a function of N.
    SweepN {
        /// Comma-separated iteration counts; overrides `n_sweep`.
        #[arg(long, value_delimiter = ',')]
        n: Option<Vec<usize>>,
    },
    /// Check the KL bounds and growth on the built-in constructions.
    VerifyTheorems,
    /// Run every stage and write metrics, figure data and report.json.
    Report,
}

const DEFAULT_SWEEP: [usize; 6] = [1, 10, 50, 100, 200, 500];

fn load(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::from_file(p)
            .with_context(|| format!("loading config {}", p.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.output_dir = o.clone();
    }
    if let Some(b) = common.budget {
        cfg.budget = b;
    }
    Ok(cfg)
}

fn summarise(report: &ExperimentReport) -> bool {
    let mut ok = true;
    for r in &report.records {
        let mut line = format!("{:<14}", r.rule.to_string());
        if let Some(b) = &r.bounds {
            line += &format!(
                " kl_fwd={:.6} kl_rev={:.6} bound={:.6} zglob={:.6} {}",
                b.kl_forward,
                b.kl_reverse,
                b.upper_bound,
                b.zglob,
                if b.passed { "ok" } else { "VIOLATED" }
            );
            ok &= b.passed;
        }
        if let Some(a) = r.acceptance_rate {
            line += &format!(" accept={a:.4}");
        }
        if let Some(tv) = r.tv_imh_exact {
            line += &format!(" tv_imh={tv:.4}");
        }
        for p in r.sweep.iter().flatten() {
            line += &format!(" tv@{}={:.4}", p.n, p.tv);
        }
        if let Some(msg) = &r.exact_skipped {
            line += &format!(" [{msg}]");
        }
        println!("{line}");
    }
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    ok
}

fn run(cli: Cli) -> Result<bool> {
    let mut cfg = load(&cli.common)?;
    let stages = match &cli.command {
        Command::SampleLocal => Stages { local: true, ..Stages::NONE },
        Command::Exact => Stages { exact: true, ..Stages::NONE },
        Command::Imh { trace } => Stages { imh: true, imh_trace: *trace, ..Stages::NONE },
        Command::SweepN { n } => {
            if let Some(n) = n {
                cfg.n_sweep = Some(n.clone());
            }
            if cfg.n_sweep.is_none() {
                cfg.n_sweep = Some(DEFAULT_SWEEP.to_vec());
            }
            Stages { sweep: true, ..Stages::NONE }
        }
        Command::VerifyTheorems => {
            let (c, t, r) = default_theorem_grid();
            let table = verify_theorems(&c, &t, &r, cfg.budget)?;
            fs::create_dir_all(&cfg.output_dir)?;
            let path = cfg.output_dir.join("theorems.csv");
            table.write_csv(BufWriter::new(File::create(&path)?))?;
            for row in &table.rows {
                println!(
                    "{:<8} {:<8} T={:?} growth={} {}",
                    row.construction.name(),
                    row.rule.to_string(),
                    row.growth.iter().map(|g| g.max_length).collect::<Vec<_>>(),
                    if row.growth_ok { "ok" } else { "FAIL" },
                    if row.passed { "PASS" } else { "FAIL" }
                );
            }
            println!("wrote {}", path.display());
            return Ok(table.all_passed);
        }
        Command::Report => Stages::ALL,
    };
    let report = run_stages(&cfg, stages)?;
    let ok = summarise(&report);
    println!("wrote {}", cfg.output_dir.display());
    Ok(ok)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
