use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use socval::experiment::{self, BaselineKind, ExperimentConfig};

#[derive(Parser)]
#[command(
    name = "socval",
    version,
    about = "Learn the value system of a society from pairwise preferences"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base profile (`reference` or `synthetic`).
    #[arg(long)]
    profile: Option<String>,
    /// Single seed; replaces the configured seed list.
    #[arg(long, conflicts_with = "seeds")]
    seed: Option<u64>,
    /// Seed list such as `26-35` or `1,4,9`.
    #[arg(long)]
    seeds: Option<String>,
    /// Maximum number of clusters (a comma list for `sweep`).
    #[arg(long)]
    lmax: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Keep the Lagrange multipliers fixed at their initial values.
    #[arg(long)]
    no_lagrange_ascent: bool,
    /// Route-choice CSV to train on.
    #[arg(long, conflicts_with = "synthetic")]
    dataset: Option<PathBuf>,
    /// Train on the configured synthetic society.
    #[arg(long)]
    synthetic: bool,
    /// Extra `key=value` overrides, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Train and write one result bundle per seed.
    Learn(Common),
    /// Run `learn` for each L_max and write the sweep curve.
    Sweep(Common),
    /// Fit a baseline (`flat-bt` or `sequential`).
    Baseline {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "flat-bt")]
        which: String,
    },
    /// Train with multiplier ascent disabled.
    AblateLagrange(Common),
    /// Generate the synthetic society and export it as CSV.
    Synth(Common),
    /// Recompute and print the report of a result bundle.
    Report {
        /// Bundle directory containing config.snapshot and champion.json.
        bundle: PathBuf,
        /// Print JSON instead of the text table.
        #[arg(long)]
        json: bool,
    },
}

impl Common {
    /// Config pairs in precedence order: file, then flags, then `--set`.
    fn pairs(&self, single_lmax: bool) -> socval::Result<Vec<(String, String)>> {
        let mut pairs = match &self.config {
            Some(path) => experiment::parse_pairs(&std::fs::read_to_string(path)?)?,
            None => Vec::new(),
        };
        let mut push = |k: &str, v: String| pairs.push((k.to_string(), v));
        if let Some(p) = &self.profile {
            push("profile", p.clone());
        }
        if let Some(l) = &self.lmax {
            if single_lmax {
                push("lmax", l.clone());
            }
        }
        if let Some(s) = self.seed {
            push("seeds", s.to_string());
        }
        if let Some(s) = &self.seeds {
            push("seeds", s.clone());
        }
        if let Some(o) = &self.out {
            push("out", o.display().to_string());
        }
        if self.no_lagrange_ascent {
            push("lagrange_ascent", "false".into());
        }
        if let Some(d) = &self.dataset {
            push("dataset", d.display().to_string());
        }
        if self.synthetic {
            push("dataset", String::new());
        }
        for s in &self.set {
            pairs.push(experiment::parse_override(s)?);
        }
        Ok(pairs)
    }

    fn config(&self) -> socval::Result<ExperimentConfig> {
        ExperimentConfig::from_pairs(&self.pairs(true)?)
    }
}

fn run(cli: Cli) -> socval::Result<()> {
    match cli.command {
        Command::Learn(c) => {
            let cfg = c.config()?;
            let rows = experiment::cmd_learn(&cfg)?;
            print!("{}", std::fs::read_to_string(cfg.out.join("summary.txt"))?);
            log::info!("{} bundles written to {}", rows.len(), cfg.out.display());
        }
        Command::AblateLagrange(c) => {
            let cfg = c.config()?;
            experiment::cmd_ablate_lagrange(&cfg)?;
            print!("{}", std::fs::read_to_string(cfg.out.join("summary.txt"))?);
        }
        Command::Sweep(c) => {
            let lmaxes: Vec<usize> = match &c.lmax {
                Some(list) => list
                    .split(',')
                    .map(|x| {
                        x.trim().parse().map_err(|_| socval::Error::Config {
                            field: "lmax".into(),
                            message: format!("cannot parse `{x}`"),
                        })
                    })
                    .collect::<socval::Result<_>>()?,
                None => vec![ExperimentConfig::from_pairs(&c.pairs(false)?)?.lmax],
            };
            let points = experiment::cmd_sweep(&c.pairs(false)?, &lmaxes)?;
            println!("lmax  found  repr            conc            dunn (normalized)");
            for p in points {
                let f = |x: Option<(f64, f64)>| x.map_or("-".to_string(), |(m, s)| format!("{m:.3} ± {s:.3}"));
                println!(
                    "{:<5} {:<6.2} {:<15} {:<15} {} ({})",
                    p.lmax,
                    p.clusters_found,
                    f(Some(p.representativeness)),
                    f(p.conciseness),
                    f(p.dunn),
                    p.dunn_normalized.map_or("-".into(), |d| format!("{d:.3}"))
                );
            }
        }
        Command::Baseline { common, which } => {
            let cfg = common.config()?;
            let kind = BaselineKind::parse(&which)?;
            for r in experiment::cmd_baseline(&cfg, kind)? {
                let chr: Vec<String> = r.coherence.iter().map(|c| format!("{c:.3}")).collect();
                println!(
                    "seed {}: representativeness {:.3}, coherence [{}]",
                    r.seed,
                    r.representativeness,
                    chr.join(", ")
                );
            }
        }
        Command::Synth(c) => {
            let mut pairs = c.pairs(true)?;
            if !pairs.iter().any(|(k, _)| k == "profile") {
                pairs.insert(0, ("profile".into(), "synthetic".into()));
            }
            let cfg = ExperimentConfig::from_pairs(&pairs)?;
            let skipped = experiment::cmd_synth(&cfg)?;
            println!(
                "wrote {} ({skipped} tied pairs left out)",
                cfg.out.join("choices.csv").display()
            );
        }
        Command::Report { bundle, json } => {
            let report = experiment::cmd_report(&bundle)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&report)?);
            } else {
                print!("{}", report.to_table());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
