mod experiments;
mod svg;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{ArgMatches, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use serde_json::json;

use experiments::{criteria, Artifact, Experiment};

/// Experiments on Markov convexity, H-trees and Lipschitz quotients.
#[derive(Parser, Debug)]
#[command(name = "mconvex", version)]
struct Cli {
    /// Directory for report files. Without it reports only go to stdout.
    #[arg(long, global = true, env = "MCONVEX_OUT", value_name = "DIR")]
    out: Option<PathBuf>,
    /// What to print on stdout.
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
    Svg,
}

#[derive(Subcommand, Debug)]
enum Command {
    #[command(flatten)]
    Direct(Experiment),
    /// Runs a named experiment; same as calling it directly.
    Run {
        #[command(subcommand)]
        experiment: Experiment,
    },
    /// Prints the experiment catalog with parameter schemas.
    List,
}

/// Name of the experiment subcommand, looking through `run`.
fn experiment_name(m: &ArgMatches) -> Option<String> {
    match m.subcommand()? {
        ("run", sub) => sub.subcommand_name().map(str::to_string),
        (name, _) => Some(name.to_string()),
    }
}

fn catalog() -> serde_json::Value {
    let cmd = Cli::command();
    let run = cmd.find_subcommand("run").expect("run subcommand");
    let entries: Vec<serde_json::Value> = run
        .get_subcommands()
        .map(|sub| {
            let params: Vec<serde_json::Value> = sub
                .get_arguments()
                .filter(|a| a.get_long().is_some() && !a.is_global_set() && a.get_id() != "help")
                .map(|a| {
                    let ty = a.get_value_names().and_then(|v| v.first()).map_or("FLAG".to_string(), |v| v.to_string());
                    json!({
                        "name": format!("--{}", a.get_long().unwrap()),
                        "type": ty,
                        "default": a.get_default_values().first().map(|d| d.to_string_lossy().into_owned()),
                        "help": a.get_help().map(|h| h.to_string()),
                    })
                })
                .collect();
            let name = sub.get_name().to_string();
            json!({
                "name": name,
                "about": sub.get_about().map(|h| h.to_string()),
                "criteria": criteria(&name),
                "params": params,
            })
        })
        .collect();
    json!({ "experiments": entries })
}

fn write_outputs(dir: &Path, name: &str, doc: &str, art: &Artifact) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    std::fs::write(dir.join(format!("{name}.json")), doc)?;
    if let Some(csv) = &art.csv {
        std::fs::write(dir.join(format!("{name}.csv")), csv)?;
    }
    if let Some(svg) = &art.svg {
        std::fs::write(dir.join(format!("{name}.svg")), svg)?;
    }
    Ok(())
}

fn run(cli: &Cli, name: &str) -> Result<ExitCode> {
    let experiment = match &cli.command {
        Command::List => {
            println!("{}", serde_json::to_string_pretty(&catalog())?);
            return Ok(ExitCode::SUCCESS);
        }
        Command::Direct(e) | Command::Run { experiment: e } => e,
    };
    let art = experiment.run()?;
    let doc = json!({
        "experiment": name,
        "params": experiment,
        "passed": art.passed,
        "report": art.report,
    });
    let doc = serde_json::to_string_pretty(&doc)? + "\n";
    if let Some(dir) = &cli.out {
        write_outputs(dir, name, &doc, &art)?;
    }
    match cli.format {
        Format::Json => print!("{doc}"),
        Format::Csv => print!("{}", art.csv.as_deref().context("this experiment has no CSV output")?),
        Format::Svg => print!("{}", art.svg.as_deref().context("this experiment has no SVG output")?),
    }
    Ok(if art.passed == Some(false) { ExitCode::from(2) } else { ExitCode::SUCCESS })
}

fn error_kind(e: &anyhow::Error) -> String {
    match e.downcast_ref::<mconvex::Error>() {
        Some(me) => format!("{me:?}").split(['(', ' ', '{']).next().unwrap_or("Error").to_string(),
        None => "Input".to_string(),
    }
}

fn main() -> ExitCode {
    let matches = Cli::command().get_matches();
    let cli = Cli::from_arg_matches(&matches).unwrap_or_else(|e| e.exit());
    let name = experiment_name(&matches).unwrap_or_default();
    match run(&cli, &name) {
        Ok(code) => code,
        Err(e) => {
            let err = json!({ "error": { "kind": error_kind(&e), "message": format!("{e:#}") } });
            eprintln!("{err}");
            ExitCode::FAILURE
        }
    }
}
