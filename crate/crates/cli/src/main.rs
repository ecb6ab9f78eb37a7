use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use epitest_core::harness::{compare_policies, run_dir, run_experiment, validate_run, ExperimentConfig, RunOutput};
use epitest_core::population::generate;
use epitest_core::sampler::PolicyKind;

#[derive(Parser)]
#[command(name = "epitest", version, about = "Agent-based epidemic simulation with adaptive testing policies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic population and write it as JSON.
    Generate(Common),
    /// Run one policy for the configured number of replications.
    Simulate(Common),
    /// Run several policies on paired seeds and compare them.
    Compare(Common),
    /// Check a finished run directory (or every run below it) for invariant violations.
    Validate {
        /// Run directory; defaults to --out from the config.
        dir: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Policy name; `compare` accepts a comma-separated list.
    #[arg(long, global = true)]
    policy: Option<String>,
    #[arg(long, global = true)]
    tests_per_day: Option<usize>,
    /// Horizon in days.
    #[arg(long, global = true)]
    days: Option<u32>,
    #[arg(long, global = true)]
    replications: Option<u32>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Run replications sequentially.
    #[arg(long, global = true)]
    deterministic: bool,
}

impl Common {
    /// Config file, then environment overrides, then flags.
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::from_path(p).with_context(|| format!("reading {}", p.display()))?,
            None => ExperimentConfig::default(),
        };
        cfg.apply_env()?;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(t) = self.tests_per_day {
            cfg.tests_per_day = Some(t);
        }
        if let Some(d) = self.days {
            cfg.horizon_days = d;
        }
        if let Some(r) = self.replications {
            cfg.replications = r;
        }
        if let Some(o) = &self.out {
            cfg.out_dir = Some(o.clone());
        }
        cfg.deterministic |= self.deterministic;
        Ok(cfg)
    }

    fn policies(&self) -> Result<Vec<PolicyKind>> {
        match &self.policy {
            Some(list) => list.split(',').map(|p| Ok(p.parse::<PolicyKind>()?)).collect(),
            None => Ok(Vec::new()),
        }
    }
}

fn print_runs(runs: &[RunOutput]) {
    println!("policy,seed,days,total_infected,total_deaths,peak_infections,tests_used,positives_found,precision,mean_detection_lag");
    for r in runs {
        let s = &r.metrics.summary;
        let opt = |x: Option<f64>| x.map(|v| format!("{v:.4}")).unwrap_or_default();
        println!(
            "{},{},{},{},{},{},{},{},{},{}",
            r.policy,
            r.seed,
            s.last_day,
            s.total_infected,
            s.total_deaths,
            s.peak_infections,
            s.tests_used,
            s.positives_found,
            opt(s.precision),
            opt(s.mean_detection_lag)
        );
    }
}

fn find_runs(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    if dir.join("events.jsonl").is_file() {
        out.push(dir.to_path_buf());
        return Ok(());
    }
    let mut entries: Vec<PathBuf> =
        fs::read_dir(dir)?.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.is_dir()).collect();
    entries.sort();
    for e in entries {
        find_runs(&e, out)?;
    }
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Generate(common) => {
            let cfg = common.config()?;
            let pop = generate(&cfg.population, cfg.population_seed.unwrap_or(cfg.seed))?;
            let dir = cfg.out_dir.unwrap_or_else(|| PathBuf::from("."));
            fs::create_dir_all(&dir)?;
            let path = dir.join("population.json");
            pop.write_json(BufWriter::new(File::create(&path)?))?;
            println!("{} agents, {} locations -> {}", pop.len(), pop.locations.len(), path.display());
        }
        Command::Simulate(common) => {
            let mut cfg = common.config()?;
            match common.policies()?.as_slice() {
                [] => {}
                [p] => cfg.policy = *p,
                _ => bail!("simulate takes one policy; use compare for several"),
            }
            let runs = run_experiment(&cfg)?;
            print_runs(&runs);
            if let Some(out) = &cfg.out_dir {
                eprintln!(
                    "outputs under {}",
                    run_dir(out, cfg.policy, cfg.seed).parent().expect("has parent").display()
                );
            }
        }
        Command::Compare(common) => {
            let cfg = common.config()?;
            let mut policies = common.policies()?;
            if policies.is_empty() {
                policies = PolicyKind::ALL.to_vec();
            }
            let (sets, table) = compare_policies(&cfg, &policies)?;
            for s in &sets {
                print_runs(&s.runs);
            }
            println!();
            println!("metric,a,b,n,mean_a,mean_b,mean_diff_b_minus_a,mean_ratio_b_over_a,b_lower,b_higher,p_b_lower,p_b_higher");
            for m in &table.metrics {
                for p in &m.paired {
                    let mean = |label: &str| {
                        m.policies
                            .iter()
                            .find(|s| s.label == label)
                            .and_then(|s| s.mean)
                            .map(|v| format!("{v:.4}"))
                            .unwrap_or_default()
                    };
                    let opt = |x: Option<f64>| x.map(|v| format!("{v:.4}")).unwrap_or_default();
                    println!(
                        "{},{},{},{},{},{},{},{},{},{},{:.4},{:.4}",
                        m.metric,
                        p.a,
                        p.b,
                        p.n,
                        mean(&p.a),
                        mean(&p.b),
                        opt(p.mean_diff),
                        opt(p.mean_ratio),
                        p.b_lower,
                        p.b_higher,
                        p.p_b_lower,
                        p.p_b_higher
                    );
                }
            }
            if table.dispersion_undefined {
                eprintln!("note: one replication, dispersion is undefined");
            }
        }
        Command::Validate { dir, common } => {
            let cfg = common.config()?;
            let root = dir.or(cfg.out_dir).context("no run directory given")?;
            let mut runs = Vec::new();
            find_runs(&root, &mut runs)?;
            if runs.is_empty() {
                bail!("no events.jsonl found under {}", root.display());
            }
            let mut failed = 0;
            for r in &runs {
                let report = validate_run(r).with_context(|| format!("validating {}", r.display()))?;
                if report.is_ok() {
                    println!("ok   {} ({} days)", r.display(), report.days_checked);
                } else {
                    failed += 1;
                    println!("FAIL {} ({} violations)", r.display(), report.violations.len());
                    for v in report.violations.iter().take(20) {
                        println!("     {v}");
                    }
                }
            }
            if failed > 0 {
                bail!("{failed} of {} runs have violations", runs.len());
            }
        }
    }
    Ok(())
}
