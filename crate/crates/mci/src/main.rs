//! Command line driver: solve problem files into certified outer
//! approximations, grid the ground-truth oracle, or re-verify a saved
//! certificate.  Exit codes: 0 on success, 2 on validation or check
//! failure, 3 when every requested degree fails to solve.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mci::pipeline::{self, RunFlags};
use mci::problem::parse_problem;

#[derive(Parser)]
#[command(name = "mci", version, about = "Certified outer approximations of maximum controlled invariant sets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a problem degree by degree; writes certificates, grid and
    /// contour CSVs, the oracle grid, and a JSON report.
    Run(RunArgs),
    /// Compute and store only the ground-truth oracle grid.
    Oracle(OracleArgs),
    /// Re-verify a saved certificate against its problem file.
    Check(CheckArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Problem description (JSON).
    problem: PathBuf,
    /// Degree pairs `dv:dw` overriding the problem's list.
    #[arg(long, value_name = "DV:DW", value_delimiter = ',', value_parser = parse_degree)]
    degrees: Option<Vec<(u32, u32)>>,
    /// Write the assembled programs in SDPA sparse format instead of
    /// solving them.
    #[arg(long)]
    export_sdpa: bool,
    /// Stop after the oracle grid.
    #[arg(long)]
    oracle_only: bool,
    /// Degree instances solved concurrently.
    #[arg(long, value_name = "N", default_value_t = 1, value_parser = parse_jobs)]
    jobs: usize,
    /// Output directory; defaults to the problem's, then runs/<name>.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct OracleArgs {
    /// Problem description (JSON).
    problem: PathBuf,
    /// Output directory; defaults to the problem's, then runs/<name>.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CheckArgs {
    /// Certificate written by `mci run`.
    certificate: PathBuf,
    /// Problem description the certificate claims to solve.
    problem: PathBuf,
}

fn parse_degree(s: &str) -> Result<(u32, u32), String> {
    let (d_v, d_w) = s
        .split_once(':')
        .ok_or_else(|| format!("expected DV:DW, got {s:?}"))?;
    let d_v: u32 = d_v.trim().parse().map_err(|e| format!("bad DV in {s:?}: {e}"))?;
    let d_w: u32 = d_w.trim().parse().map_err(|e| format!("bad DW in {s:?}: {e}"))?;
    if d_v == 0 || d_v % 2 != 0 || d_w == 0 || d_w % 2 != 0 {
        return Err(format!("degrees must be positive even numbers, got {s:?}"));
    }
    Ok((d_v, d_w))
}

fn parse_jobs(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(0) => Err("at least one job".into()),
        Ok(n) => Ok(n),
        Err(e) => Err(e.to_string()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(args) => run_cmd(args),
        Command::Oracle(args) => oracle_cmd(args),
        Command::Check(args) => check_cmd(args),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn print_report(report: &pipeline::RunReport) {
    if let Some(oracle) = &report.oracle {
        println!(
            "oracle [{}] at {:?}: {} member cells, volume {:.6}, {:.1}s",
            oracle.kind, oracle.resolutions, oracle.member_cells, oracle.volume, oracle.wall_seconds
        );
    }
    for row in &report.rows {
        let head = format!("degrees ({}, {}): {}", row.d_v, row.d_w, row.status);
        match row.objective {
            Some(objective) => {
                let containment = row
                    .containment
                    .map(|c| format!(", containment {c:.4}"))
                    .unwrap_or_default();
                println!(
                    "{head}, objective {objective:.9}{containment}, {} iterations, {:.1}s",
                    row.iterations.unwrap_or(0),
                    row.wall_seconds
                );
            }
            None => {
                let error = row
                    .error
                    .as_deref()
                    .map(|e| format!(" ({e})"))
                    .unwrap_or_default();
                println!("{head}{error}, {:.1}s", row.wall_seconds);
            }
        }
    }
    for flag in &report.flags {
        println!("note: {flag}");
    }
}

fn run_cmd(args: RunArgs) -> anyhow::Result<ExitCode> {
    let problem = parse_problem(&args.problem)?;
    let flags = RunFlags {
        degrees: args.degrees,
        export_sdpa: args.export_sdpa,
        oracle_only: args.oracle_only,
        jobs: args.jobs,
        out: args.out,
    };
    let report = pipeline::run(&problem, &flags)?;
    print_report(&report);
    let nothing_solved = !flags.export_sdpa
        && !flags.oracle_only
        && !report.rows.is_empty()
        && report.rows.iter().all(|row| row.objective.is_none());
    Ok(if nothing_solved {
        ExitCode::from(3)
    } else {
        ExitCode::SUCCESS
    })
}

fn oracle_cmd(args: OracleArgs) -> anyhow::Result<ExitCode> {
    let problem = parse_problem(&args.problem)?;
    let flags = RunFlags {
        oracle_only: true,
        out: args.out,
        ..RunFlags::default()
    };
    let report = pipeline::run(&problem, &flags)?;
    print_report(&report);
    Ok(ExitCode::SUCCESS)
}

fn check_cmd(args: CheckArgs) -> anyhow::Result<ExitCode> {
    let problem = parse_problem(&args.problem)?;
    let lines = pipeline::check_certificate(&args.certificate, &problem)?;
    let mut all_passed = true;
    for line in &lines {
        let mark = if line.passed { "ok  " } else { "FAIL" };
        println!("{mark} {:<11} {}", line.name, line.detail);
        all_passed &= line.passed;
    }
    if all_passed {
        println!("certificate accepted");
        Ok(ExitCode::SUCCESS)
    } else {
        println!("certificate rejected");
        Ok(ExitCode::from(2))
    }
}
