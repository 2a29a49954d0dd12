//! `sadic`: certified S-adic approximation and flow experiments.
//!
//! Exit codes: 0 ok, 1 error, 2 precision or certification floor (a partial
//! report is still written), 64 usage.

mod commands;
mod config;
mod report;
mod spec;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use serde_json::{json, Value};

use commands::{Cmd, Failure, Outcome};
use config::{Format, GlobalArgs, SessionConfig};

const EXIT_ERROR: u8 = 1;
const EXIT_FLOOR: u8 = 2;
const EXIT_USAGE: u8 = 64;

#[derive(Debug, Parser)]
#[command(
    name = "sadic",
    version,
    about = "Certified S-adic Diophantine approximation and flow experiments"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Top,
}

#[derive(Debug, Subcommand)]
enum Top {
    #[command(flatten)]
    Run(Cmd),
    /// Re-run the invocation stored in a report and compare bytes
    Replay { report: PathBuf },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    let session = match SessionConfig::resolve(&cli.global) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("sadic: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    match cli.command {
        Top::Replay { report } => match replay(&report) {
            Ok(code) => code,
            Err(e) => {
                eprintln!("sadic: {e:#}");
                ExitCode::from(EXIT_ERROR)
            }
        },
        Top::Run(cmd) => run(&cmd, &session, cli.global.out.as_deref()),
    }
}

fn invocation(session: &SessionConfig, cmd: &Cmd) -> Value {
    json!({ "session": session, "command": cmd })
}

/// The report for one run, plus the outcome (absent on a hard floor).
fn execute(cmd: &Cmd, session: &SessionConfig) -> Result<(Value, Option<Outcome>), Failure> {
    let inv = invocation(session, cmd);
    match cmd.run(session) {
        Ok(o) => {
            let status = if o.floor.is_some() {
                "certification-floor"
            } else {
                "ok"
            };
            let mut result = o.result.clone();
            if let (Some(reason), Value::Object(m)) = (&o.floor, &mut result) {
                m.insert("floor_reason".into(), Value::String(reason.clone()));
            }
            Ok((
                report::envelope(cmd.name(), &o.anchor, status, inv, result),
                Some(o),
            ))
        }
        Err(Failure::Floor(reason)) => {
            let result = json!({ "floor_reason": reason });
            Ok((
                report::envelope(
                    cmd.name(),
                    "partial result: precision floor reached",
                    "precision-floor",
                    inv,
                    result,
                ),
                None,
            ))
        }
        Err(e) => Err(e),
    }
}

fn run(cmd: &Cmd, session: &SessionConfig, out: Option<&Path>) -> ExitCode {
    let start = Instant::now();
    let (rep, outcome) = match execute(cmd, session) {
        Ok(x) => x,
        Err(Failure::Usage(m)) => {
            eprintln!("sadic: {m}");
            return ExitCode::from(EXIT_USAGE);
        }
        Err(Failure::Other(m)) | Err(Failure::Floor(m)) => {
            eprintln!("sadic: {m}");
            return ExitCode::from(EXIT_ERROR);
        }
    };
    let text = report::to_text(&rep);
    if let Some(path) = out {
        if let Err(e) = write_report(path, &text, cmd.name(), start.elapsed().as_secs_f64()) {
            eprintln!("sadic: {e:#}");
            return ExitCode::from(EXIT_ERROR);
        }
    }
    print_stdout(session.format, &rep, &text, outcome.as_ref());
    let floor = rep["status"] != "ok";
    if floor {
        eprintln!(
            "sadic: {}",
            rep["result"]["floor_reason"]
                .as_str()
                .unwrap_or("certification floor")
        );
        ExitCode::from(EXIT_FLOOR)
    } else {
        ExitCode::SUCCESS
    }
}

fn write_report(path: &Path, text: &str, name: &str, secs: f64) -> anyhow::Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    let mut side = path.as_os_str().to_owned();
    side.push(".timing.json");
    let timing = json!({ "command": name, "wall_seconds": format!("{secs:.6}") });
    std::fs::write(&side, report::to_text(&timing))
        .with_context(|| format!("writing {:?}", side))?;
    Ok(())
}

fn print_stdout(format: Format, rep: &Value, text: &str, outcome: Option<&Outcome>) {
    let mut so = std::io::stdout().lock();
    let _ = match (format, outcome.and_then(|o| o.table.as_ref())) {
        (Format::Csv, Some(table)) => {
            let mut w = csv::Writer::from_writer(so);
            for row in table {
                let _ = w.write_record(row);
            }
            w.flush()
        }
        (Format::Table, _) => {
            let _ = writeln!(
                so,
                "{}: {}",
                rep["command"].as_str().unwrap_or(""),
                rep["status"].as_str().unwrap_or("")
            );
            let _ = writeln!(so, "  {}", rep["anchor"].as_str().unwrap_or(""));
            if let Value::Object(m) = &rep["result"] {
                for (k, v) in m {
                    if !v.is_array() && !v.is_object() {
                        let shown = v
                            .as_str()
                            .map(str::to_owned)
                            .unwrap_or_else(|| v.to_string());
                        let _ = writeln!(so, "  {k:<24} {}", shown.lines().next().unwrap_or(""));
                    }
                }
            }
            Ok(())
        }
        _ => so.write_all(text.as_bytes()),
    };
}

fn replay(path: &Path) -> anyhow::Result<ExitCode> {
    let stored =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let v: Value = serde_json::from_str(&stored).context("report is not JSON")?;
    if v["schema"] != report::SCHEMA {
        bail!("unsupported report schema {}", v["schema"]);
    }
    let session: SessionConfig = serde_json::from_value(v["invocation"]["session"].clone())
        .context("bad invocation.session")?;
    session.validate().map_err(anyhow::Error::msg)?;
    let cmd: Cmd = serde_json::from_value(v["invocation"]["command"].clone())
        .context("bad invocation.command")?;
    let fresh = match execute(&cmd, &session) {
        Ok((rep, _)) => report::to_text(&rep),
        Err(Failure::Usage(m)) | Err(Failure::Other(m)) | Err(Failure::Floor(m)) => {
            bail!("replay failed: {m}")
        }
    };
    if fresh == stored {
        println!("replay: identical ({} bytes)", stored.len());
        return Ok(ExitCode::SUCCESS);
    }
    let line = stored
        .lines()
        .zip(fresh.lines())
        .position(|(a, b)| a != b)
        .map_or(0, |i| i + 1);
    eprintln!("replay: report differs (first difference at line {line})");
    Ok(ExitCode::from(EXIT_ERROR))
}
