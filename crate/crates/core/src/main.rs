use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use soliton_gpc::config::{self, ExperimentKind, RunConfig, PRESETS};
use soliton_gpc::experiment::{run_experiment, write_error};
use soliton_gpc::Error;

#[derive(Parser)]
#[command(
    name = "soliton-gpc",
    version,
    about = "Soliton-defect scattering and critical-velocity estimation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Propagate one soliton and classify it.
    Single(RunArgs),
    /// Collocation ensemble and its mean mode.
    Ensemble(RunArgs),
    /// Critical velocity from one ensemble.
    Critical(RunArgs),
    /// Critical velocity over a list of defect strengths.
    Sweep(RunArgs),
    /// Critical velocity against node count.
    Convergence(RunArgs),
    /// Critical velocity by bisection.
    Oracle(RunArgs),
    /// Run whatever `kind` the config names.
    Run(RunArgs),
    /// Print the effective config without running it.
    ShowConfig(RunArgs),
    /// List built-in presets.
    Presets,
}

#[derive(Args, Clone, Default)]
struct RunArgs {
    /// TOML config file.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Built-in preset applied before the config file.
    #[arg(long)]
    preset: Option<String>,
    /// Override any key, e.g. `--set chaos.nodes=24`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    velocity: Option<f64>,
    #[arg(long)]
    v_a: Option<f64>,
    #[arg(long)]
    v_b: Option<f64>,
    #[arg(long)]
    nodes: Option<usize>,
    #[arg(long)]
    dt: Option<f64>,
    /// Final time, or `auto`.
    #[arg(long)]
    t_final: Option<String>,
    #[arg(long)]
    points: Option<usize>,
    #[arg(long)]
    half_width: Option<f64>,
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

impl RunArgs {
    fn flag_overrides(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut push = |key: &str, value: Option<String>| {
            if let Some(v) = value {
                out.push(format!("{key}={v}"));
            }
        };
        push("physics.epsilon", self.epsilon.map(|v| v.to_string()));
        push("physics.velocity", self.velocity.map(|v| v.to_string()));
        push("chaos.v_a", self.v_a.map(|v| v.to_string()));
        push("chaos.v_b", self.v_b.map(|v| v.to_string()));
        push("chaos.nodes", self.nodes.map(|v| v.to_string()));
        push("solver.dt", self.dt.map(|v| v.to_string()));
        push(
            "solver.t_final",
            self.t_final
                .as_ref()
                .map(|t| if t == "auto" { "\"auto\"".to_string() } else { t.clone() }),
        );
        push("grid.points", self.points.map(|v| v.to_string()));
        push("grid.half_width", self.half_width.map(|v| v.to_string()));
        push("workers", self.workers.map(|v| v.to_string()));
        push(
            "output.directory",
            self.output.as_ref().map(|p| format!("{:?}", p.display().to_string())),
        );
        out
    }

    fn resolve(&self, kind: Option<ExperimentKind>) -> soliton_gpc::Result<RunConfig> {
        let mut table = match &self.preset {
            Some(name) => config::preset(name)?,
            None => toml::Table::new(),
        };
        if let Some(path) = &self.config {
            config::merge(&mut table, config::read_table(path)?);
        }
        for spec in self.overrides.iter().cloned().chain(self.flag_overrides()) {
            config::merge(&mut table, config::parse_override(&spec)?);
        }
        if let Some(kind) = kind {
            table.insert("kind".into(), toml::Value::String(kind.name().into()));
        }
        if !table.contains_key("kind") {
            return Err(Error::Config(
                "no experiment kind: use a subcommand or set `kind`".into(),
            ));
        }
        config::from_table(table)
    }
}

fn output_dir(args: &RunArgs) -> PathBuf {
    args.output.clone().unwrap_or_else(|| PathBuf::from("out"))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let (args, kind) = match cli.command {
        Command::Presets => {
            for (name, _) in PRESETS {
                println!("{name}");
            }
            return ExitCode::SUCCESS;
        }
        Command::ShowConfig(a) => {
            return match a.resolve(None).and_then(|c| c.to_toml()) {
                Ok(text) => {
                    print!("{text}");
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(e.exit_code() as u8)
                }
            };
        }
        Command::Single(a) => (a, Some(ExperimentKind::Single)),
        Command::Ensemble(a) => (a, Some(ExperimentKind::Ensemble)),
        Command::Critical(a) => (a, Some(ExperimentKind::Critical)),
        Command::Sweep(a) => (a, Some(ExperimentKind::Sweep)),
        Command::Convergence(a) => (a, Some(ExperimentKind::Convergence)),
        Command::Oracle(a) => (a, Some(ExperimentKind::Oracle)),
        Command::Run(a) => (a, None),
    };
    let cfg = match args.resolve(kind) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            let _ = write_error(&output_dir(&args), &e);
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match run_experiment(&cfg) {
        Ok(summary) => {
            for f in &summary.files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
