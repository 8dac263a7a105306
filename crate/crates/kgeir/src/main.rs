use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use kgeir::config::Config;
use kgeir::core::cdm::ModelKind;
use kgeir::core::harness::{Ablation, Strategy, StrategyKind};
use kgeir::core::synth::SynthConfig;
use kgeir::formats::Dataset;
use kgeir::run::{self, Source};

#[derive(Parser)]
#[command(name = "kgeir", version, about = "Knowledge-graph guided adaptive exercise selection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Interaction log CSV (student_id,exercise_id,correct,timestamp).
    #[arg(long, required_unless_present = "synthetic")]
    log: Option<PathBuf>,
    /// Q-matrix CSV (exercise_id,skill_id).
    #[arg(long = "q-matrix", required_unless_present = "synthetic")]
    q_matrix: Option<PathBuf>,
    /// Knowledge graph JSON.
    #[arg(long, required_unless_present = "synthetic")]
    graph: Option<PathBuf>,
    /// Optional skill vocabulary CSV (skill_id).
    #[arg(long)]
    vocabulary: Option<PathBuf>,
    /// Use a generated population instead of files.
    #[arg(long, conflicts_with_all = ["log", "q_matrix", "graph", "vocabulary"])]
    synthetic: bool,
    #[command(flatten)]
    synth: SynthArgs,
}

#[derive(Args, Clone)]
struct SynthArgs {
    /// Seed of the generated population.
    #[arg(long, default_value_t = 0)]
    data_seed: u64,
    #[arg(long, default_value_t = 200)]
    students: usize,
    #[arg(long, default_value_t = 100)]
    exercises: usize,
    #[arg(long, default_value_t = 10)]
    skills: usize,
    #[arg(long, default_value_t = 60)]
    answers_per_student: usize,
}

impl SynthArgs {
    fn config(&self) -> SynthConfig {
        SynthConfig {
            seed: self.data_seed,
            students: self.students,
            exercises: self.exercises,
            skills: self.skills,
            answers_per_student: self.answers_per_student,
            ..SynthConfig::default()
        }
    }
}

impl DataArgs {
    fn source(&self) -> Source {
        if self.synthetic {
            Source::Synthetic(self.synth.config())
        } else {
            Source::Files {
                log: self.log.clone().expect("required by clap"),
                q: self.q_matrix.clone().expect("required by clap"),
                graph: self.graph.clone().expect("required by clap"),
                vocabulary: self.vocabulary.clone(),
            }
        }
    }

    fn load(&self) -> kgeir::Result<Dataset> {
        self.source().load()
    }
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// key=value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one configuration key, e.g. `--set epochs=20`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> kgeir::Result<Config> {
        let mut cfg = match &self.config {
            Some(p) => Config::load(p)?,
            None => Config::default(),
        };
        for (i, kv) in self.overrides.iter().enumerate() {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| kgeir::Error::Config { line: i + 1, reason: format!("--set expects key=value, found {kv:?}") })?;
            cfg.set(k.trim(), v.trim()).map_err(|reason| kgeir::Error::Config { line: i + 1, reason })?;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Validate the data and print a summary.
    Ingest {
        #[command(flatten)]
        data: DataArgs,
    },
    /// Write a generated population as log, Q-matrix and graph files.
    Synth {
        #[command(flatten)]
        synth: SynthArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a diagnosis model and write a checkpoint.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value = "nacd")]
        model: ModelKind,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute the skill importance table.
    Weights {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Replay held-out questions under one selection strategy.
    Simulate {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value = "kg-eir")]
        strategy: Strategy,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        disable_informativeness: bool,
        #[arg(long)]
        disable_representativeness: bool,
        #[arg(long)]
        disable_knowledge_importance: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Replay the full model and its three single-component ablations.
    Ablate {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rebuild per-step means and the heatmap grid from a run's traces.
    ExportPlots {
        #[command(flatten)]
        data: DataArgs,
        /// Directory written by `simulate` or `ablate`.
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn with_run_options(mut cfg: Config, steps: Option<usize>, seed: Option<u64>) -> Config {
    if let Some(steps) = steps {
        cfg.pipeline.simulation.steps = steps;
    }
    if let Some(seed) = seed {
        cfg.pipeline.train.seed = seed;
        cfg.pipeline.simulation.seed = seed;
    }
    cfg
}

fn print_summaries(summaries: &[(String, Vec<kgeir::core::harness::StepSummary>)]) {
    for (strategy, steps) in summaries {
        if let Some(last) = steps.last() {
            let inf = last.inf.map_or("n/a".to_string(), |v| format!("{v:.4}"));
            println!("{strategy:<24} step {:>3}  inf {inf}  cov {:.4}", last.step, last.cov);
        }
    }
}

fn run(cli: Cli) -> kgeir::Result<()> {
    match cli.command {
        Command::Ingest { data } => {
            let s = run::ingest(&data.load()?)?;
            println!("students           {}", s.students);
            println!("records            {}", s.records);
            println!("exercises          {}", s.exercises);
            println!("exercises answered {}", s.exercises_answered);
            println!("skills             {}", s.skills);
            println!("graph nodes        {}", s.graph_nodes);
            println!("graph edges        {}", s.graph_edges);
            println!("dataset sha256     {}", s.dataset_hash);
        }
        Command::Synth { synth, out } => {
            let ds = Source::Synthetic(synth.config()).load()?;
            ds.save(&out)?;
            println!("wrote {}", out.display());
        }
        Command::Train { data, config, model, out } => {
            let report = run::train(&data.load()?, &config.load()?, model, &out)?;
            if let (Some(first), Some(last)) = (report.losses.first(), report.losses.last()) {
                println!("loss {first:.4} -> {last:.4}");
            }
            match report.heldout_auc {
                Some(a) => println!("held-out auc {a:.4}"),
                None => println!("held-out auc undefined"),
            }
            println!("checkpoint {}", out.display());
        }
        Command::Weights { data, config, out } => {
            let prep = run::weights(&data.load()?, &config.load()?, &out)?;
            for r in &prep.importance.rows {
                println!("{:<16} w_k {:.4}", r.skill_id, r.w_k);
            }
            println!("wrote {}", out.display());
        }
        Command::Simulate {
            data,
            config,
            strategy,
            steps,
            seed,
            disable_informativeness,
            disable_representativeness,
            disable_knowledge_importance,
            out,
        } => {
            let ablation = Ablation { disable_informativeness, disable_representativeness, disable_knowledge_importance };
            let kind = StrategyKind::new(strategy, ablation)?;
            let cfg = with_run_options(config.load()?, steps, seed);
            let result = run::simulate(&data.load()?, &cfg, &[kind], &out)?;
            print_summaries(&result.summaries);
        }
        Command::Ablate { data, config, steps, seed, out } => {
            let cfg = with_run_options(config.load()?, steps, seed);
            let result = run::simulate(&data.load()?, &cfg, &StrategyKind::ablation_variants(), &out)?;
            print_summaries(&result.summaries);
        }
        Command::ExportPlots { data, run: dir, out } => {
            let summaries = run::export_plots(&data.load()?, &dir, &out)?;
            print_summaries(&summaries);
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
