use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pathrec::config::Config;
use pathrec::pipeline;
use pathrec::synth::{self, PlantedConfig};
use pathrec::Result;

#[derive(Parser)]
#[command(
    name = "pathrec",
    version,
    about = "Explainable session recommendation by knowledge-graph path reasoning"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct Common {
    /// `key = value` config file
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set training.T=3` (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Shorthand for `--set paths.workdir=DIR`
    #[arg(long)]
    workdir: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<Config> {
        let mut cfg = match &self.config {
            Some(p) => Config::load(p)?,
            None => Config::from_env(),
        };
        if let Some(w) = &self.workdir {
            cfg.workdir = w.clone();
        }
        for kv in &self.overrides {
            cfg.apply_override(kv)?;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Sessionize interactions, split, and build the knowledge graph
    BuildKg(Common),
    /// Pretrain translational entity/relation embeddings
    Pretrain(Common),
    /// Train the session encoder and both agents
    Train(Common),
    /// HR@k / NDCG@k on the test split
    Evaluate(Common),
    /// Top-K recommendations with paths as JSON lines
    Recommend {
        #[command(flatten)]
        common: Common,
        /// JSON lines of {"prefix": [...]}; defaults to the test split
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Print explanation paths in arrow notation
    Explain {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: Option<PathBuf>,
        /// Emit path JSON instead of arrows
        #[arg(long)]
        json: bool,
    },
    /// Run every ablation variant over `ablation.seeds`
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Restrict to these variant names (repeatable)
        #[arg(long = "variant")]
        variants: Vec<String>,
    },
    /// build-kg, pretrain, train and evaluate in one go
    Run(Common),
    /// Write a synthetic corpus with a planted brand pattern
    GenPlanted {
        /// Output directory
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Small bundled-size corpus instead of the full planted one
        #[arg(long)]
        toy: bool,
    },
}

fn print_epoch(m: &pathrec::trainer::EpochMetrics) {
    eprintln!(
        "epoch {:>3}  L_ce {:.4}  L_path {:.4}  L_se {:.4}  terminal {:.4}  midpoint {:.4}",
        m.epoch, m.l_ce, m.l_path, m.l_se, m.mean_terminal_reward, m.mean_midpoint_reward
    );
}

fn print_report(r: &pathrec::eval::MetricReport) {
    for (k, hr) in &r.hr {
        println!("HR@{k} = {hr:.4}  NDCG@{k} = {:.4}", r.ndcg[k]);
    }
    println!("instances = {}", r.n_instances);
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::BuildKg(c) => {
            let cfg = c.load()?;
            let s = pipeline::build_kg(&cfg)?;
            println!(
                "graph: {} entities, {} triples; sessions train/valid/test = {}/{}/{}",
                s.stats.num_entities,
                s.stats.num_triples,
                s.train_sessions,
                s.valid_sessions,
                s.test_sessions
            );
        }
        Cmd::Pretrain(c) => {
            let cfg = c.load()?;
            let losses = pipeline::pretrain(&cfg)?;
            if let (Some(first), Some(last)) = (losses.first(), losses.last()) {
                println!(
                    "transe loss {first:.4} -> {last:.4} over {} epochs",
                    losses.len()
                );
            }
        }
        Cmd::Train(c) => {
            let cfg = c.load()?;
            pipeline::train(&cfg, &mut print_epoch)?;
        }
        Cmd::Evaluate(c) => print_report(&pipeline::evaluate(&c.load()?)?),
        Cmd::Recommend { common, input } => {
            let cfg = common.load()?;
            for line in pipeline::recommend(&cfg, input.as_deref())? {
                println!("{}", serde_json::to_string(&line)?);
            }
        }
        Cmd::Explain {
            common,
            input,
            json,
        } => {
            let cfg = common.load()?;
            print!("{}", pipeline::explain(&cfg, input.as_deref(), json)?);
        }
        Cmd::Ablate { common, variants } => {
            let cfg = common.load()?;
            let names: Vec<&str> = variants.iter().map(String::as_str).collect();
            let filter = (!names.is_empty()).then_some(names.as_slice());
            let rows = pipeline::ablate(&cfg, filter, &mut |name, seed, r| {
                eprintln!("{name} seed {seed}: HR@5 {:.4}", r.hr_at(5));
            })?;
            print!("{}", pathrec::eval::ablation_csv(&rows));
        }
        Cmd::Run(c) => {
            let cfg = c.load()?;
            let (_, report) = pipeline::run_all(&cfg, &mut print_epoch)?;
            print_report(&report);
        }
        Cmd::GenPlanted { out, seed, toy } => {
            let base = if toy {
                PlantedConfig::toy()
            } else {
                PlantedConfig::default()
            };
            let corpus = synth::generate(&PlantedConfig { seed, ..base })?;
            let paths = corpus.write(&out)?;
            println!("wrote {}", paths.interactions.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
