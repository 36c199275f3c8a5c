//! The `protomerge` command line.
//!
//! Exit codes: 0 success, 1 untypable (merge failure, deadlock, mismatch),
//! 2 parse error, 3 undecidable entailment or state space exhausted,
//! 4 bad invocation.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use crate::ast::{Diagnostic, DiagnosticKind, ProtocolType};
use crate::extract::{extract_local_type_with, ExtractError};
use crate::logic::{initial_context, merged_context, Logic, LogicError, DEFAULT_ENUM_CAP};
use crate::merge::{
    merge_all_with, merge_types_with, MergeError, MergeOptions, MergeTrace, DEFAULT_UNFOLD_CAP,
};
use crate::oracle::{
    format_trace, linearize, simulate_with, OracleError, SimOptions, SimOutcome, DEFAULT_STATE_CAP,
};
use crate::syntax::{parse_process, parse_protocol, print_protocol, ParseError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_UNTYPABLE: i32 = 1;
pub const EXIT_PARSE: i32 = 2;
pub const EXIT_UNDECIDABLE: i32 = 3;
pub const EXIT_USAGE: i32 = 4;

#[derive(Debug, Parser)]
#[command(
    name = "protomerge",
    version,
    about = "Infer global protocols for rank-parametric message-passing programs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Number of processes.
    #[arg(long)]
    size: i64,
    /// Assignment budget for brute-force entailment.
    #[arg(long, default_value_t = DEFAULT_ENUM_CAP)]
    enum_cap: u64,
    /// Emit a JSON document instead of text.
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Extract and merge the local types of a program.
    Infer {
        /// One program mentioning `rank`, or one program per rank.
        #[arg(required = true)]
        programs: Vec<PathBuf>,
        #[command(flatten)]
        common: Common,
        /// Merge order, e.g. `2,0,1`.
        #[arg(long, value_delimiter = ',')]
        order: Option<Vec<i64>>,
        /// Largest loop that may be unfolded to retry a failed merge.
        #[arg(long, default_value_t = DEFAULT_UNFOLD_CAP)]
        unfold_cap: u64,
        /// Print the merge derivations.
        #[arg(long)]
        trace: bool,
    },
    /// Print the local type of one rank.
    Extract {
        program: PathBuf,
        #[arg(long)]
        rank: i64,
        #[command(flatten)]
        common: Common,
    },
    /// Merge two protocol types directly.
    Merge {
        left: PathBuf,
        right: PathBuf,
        #[command(flatten)]
        common: Common,
        /// Ranks already merged into the left type.
        #[arg(long, value_delimiter = ',', required = true)]
        merged: Vec<i64>,
        /// Rank of the right type.
        #[arg(long)]
        k: i64,
        #[arg(long)]
        trace: bool,
    },
    /// Run local types under synchronous semantics.
    Simulate {
        /// One global type, or one local type per rank.
        #[arg(required = true)]
        types: Vec<PathBuf>,
        #[command(flatten)]
        common: Common,
        /// Iterations kept from each loop.
        #[arg(long, default_value_t = 2)]
        unroll: u64,
        #[arg(long, default_value_t = DEFAULT_STATE_CAP)]
        state_cap: usize,
    },
}

/// Parses `args` (including the program name) and runs the command,
/// writing all output to `out`. Returns the exit code.
pub fn run<I, T>(args: I, out: &mut impl Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = write!(out, "{}", e.render());
            return code;
        }
    };
    let json = match &cli.command {
        Command::Infer { common, .. }
        | Command::Extract { common, .. }
        | Command::Merge { common, .. }
        | Command::Simulate { common, .. } => common.json,
    };
    let report = match execute(cli.command) {
        Ok(report) => report,
        Err(failure) => failure,
    };
    report.emit(out, json)
}

/// Everything a command prints, in both renderings.
struct Report {
    code: i32,
    text: String,
    json: Value,
}

impl Report {
    fn emit(&self, out: &mut impl Write, json: bool) -> i32 {
        let written = if json {
            writeln!(
                out,
                "{}",
                serde_json::to_string_pretty(&self.json).expect("serializable")
            )
        } else {
            write!(out, "{}", self.text)
        };
        if written.is_err() {
            return EXIT_USAGE;
        }
        self.code
    }

    fn usage(message: String) -> Report {
        Report {
            code: EXIT_USAGE,
            text: format!("error: {message}\n"),
            json: json!({"status": "error", "kind": "Usage", "message": message}),
        }
    }

    fn plain(code: i32, kind: &str, message: String) -> Report {
        Report {
            code,
            text: format!("error[{kind}]: {message}\n"),
            json: json!({"status": "error", "kind": kind, "message": message}),
        }
    }

    fn parse(e: ParseError) -> Report {
        Report {
            code: EXIT_PARSE,
            text: format!("error[ParseError]: {e}\n"),
            json: json!({"status": "error", "kind": "ParseError", "message": e.message, "span": e.span}),
        }
    }

    fn diagnostic(d: &Diagnostic, trace: Option<&MergeTrace>) -> Report {
        let mut text = format!("error[{}]: {}\n", d.kind, d.message);
        if !d.location.is_empty() {
            text.push_str(&format!("  at: {}\n", d.location.join(" / ")));
        }
        for a in &d.rule_trace {
            text.push_str(&format!("  tried {}: {}\n", a.rule, a.failing_premise));
        }
        let mut doc = json!({"status": "error", "kind": d.kind, "diagnostic": d});
        if let Some(t) = trace {
            for line in t.to_text().lines() {
                text.push_str(&format!("# {line}\n"));
            }
            doc["trace"] = json!(t);
        }
        Report {
            code: exit_code(d.kind),
            text,
            json: doc,
        }
    }
}

/// Exit status for a diagnostic kind.
pub fn exit_code(kind: DiagnosticKind) -> i32 {
    match kind {
        DiagnosticKind::EntailmentUndecidable => EXIT_UNDECIDABLE,
        DiagnosticKind::DeadlockSuspected
        | DiagnosticKind::DatatypeMismatch
        | DiagnosticKind::EntailmentFailed
        | DiagnosticKind::UnsolvableEquations => EXIT_UNTYPABLE,
    }
}

fn read(path: &Path) -> Result<String, Report> {
    std::fs::read_to_string(path)
        .map_err(|e| Report::usage(format!("cannot read {}: {e}", path.display())))
}

fn read_protocol(path: &Path) -> Result<ProtocolType, Report> {
    parse_protocol(&read(path)?).map_err(|e| Report::parse(e.with_file(path.display().to_string())))
}

fn check_size(size: i64) -> Result<(), Report> {
    if size < 2 {
        return Err(Report::usage(format!(
            "--size must be at least 2, got {size}"
        )));
    }
    Ok(())
}

fn extract_failure(e: ExtractError) -> Report {
    match e {
        ExtractError::InvalidRank { .. } => Report::usage(e.to_string()),
        ExtractError::Undecidable(LogicError::UndecidableEquivalence(..)) => {
            Report::plain(EXIT_UNDECIDABLE, "EntailmentUndecidable", e.to_string())
        }
        ExtractError::UnsolvableEquations(_) => {
            Report::plain(EXIT_UNTYPABLE, "UnsolvableEquations", e.to_string())
        }
        _ => Report::plain(EXIT_UNTYPABLE, "ExtractionFailed", e.to_string()),
    }
}

fn merge_failure(e: MergeError) -> Report {
    match e {
        MergeError::Failure(f) => Report::diagnostic(&f.diagnostic, Some(&f.trace)),
        MergeError::InvalidInput(_) => Report::usage(e.to_string()),
        other => Report::plain(EXIT_UNTYPABLE, "MergeFailed", other.to_string()),
    }
}

fn oracle_failure(e: OracleError) -> Report {
    match e {
        OracleError::StateSpaceExceeded(_) => {
            Report::plain(EXIT_UNDECIDABLE, "StateSpaceExceeded", e.to_string())
        }
        OracleError::WrongRankCount { .. } => Report::usage(e.to_string()),
        other => Report::plain(EXIT_UNTYPABLE, "SimulationFailed", other.to_string()),
    }
}

fn trace_comments(traces: &[MergeTrace]) -> String {
    traces
        .iter()
        .flat_map(|t| {
            t.to_text()
                .lines()
                .map(|l| format!("# {l}\n"))
                .collect::<Vec<_>>()
        })
        .collect()
}

fn protocol_report(t: &ProtocolType, traces: &[MergeTrace], show_trace: bool) -> Report {
    let mut text = String::new();
    if show_trace {
        text.push_str(&trace_comments(traces));
    }
    text.push_str(&print_protocol(t));
    text.push('\n');
    let mut doc = json!({"status": "ok", "protocol": print_protocol(t)});
    if show_trace {
        doc["traces"] = json!(traces);
    }
    Report {
        code: EXIT_OK,
        text,
        json: doc,
    }
}

fn execute(command: Command) -> Result<Report, Report> {
    match command {
        Command::Infer {
            programs,
            common,
            order,
            unfold_cap,
            trace,
        } => {
            check_size(common.size)?;
            let n = common.size;
            if programs.len() != 1 && programs.len() as i64 != n {
                return Err(Report::usage(format!(
                    "expected one program or {n} per-rank programs, got {}",
                    programs.len()
                )));
            }
            let logic = Logic::new(common.enum_cap);
            let ctx = initial_context(n).map_err(|e| Report::usage(e.to_string()))?;
            let mut parsed = Vec::new();
            for path in &programs {
                let p = parse_process(&read(path)?)
                    .map_err(|e| Report::parse(e.with_file(path.display().to_string())))?;
                parsed.push(p);
            }
            let mut locals = Vec::new();
            for r in 0..n {
                let p = if parsed.len() == 1 {
                    &parsed[0]
                } else {
                    &parsed[r as usize]
                };
                let t = extract_local_type_with(&logic, &ctx, p, r, n).map_err(extract_failure)?;
                locals.push((r, t));
            }
            let opts = MergeOptions { logic, unfold_cap };
            let (t, traces) =
                merge_all_with(&opts, n, &locals, order.as_deref()).map_err(merge_failure)?;
            Ok(protocol_report(&t, &traces, trace))
        }
        Command::Extract {
            program,
            rank,
            common,
        } => {
            check_size(common.size)?;
            let logic = Logic::new(common.enum_cap);
            let ctx = initial_context(common.size).map_err(|e| Report::usage(e.to_string()))?;
            let p = parse_process(&read(&program)?)
                .map_err(|e| Report::parse(e.with_file(program.display().to_string())))?;
            let t = extract_local_type_with(&logic, &ctx, &p, rank, common.size)
                .map_err(extract_failure)?;
            let text = format!("{}\n", print_protocol(&t));
            Ok(Report {
                code: EXIT_OK,
                text,
                json: json!({"status": "ok", "rank": rank, "type": print_protocol(&t)}),
            })
        }
        Command::Merge {
            left,
            right,
            common,
            merged,
            k,
            trace,
        } => {
            check_size(common.size)?;
            let l = read_protocol(&left)?;
            let r = read_protocol(&right)?;
            let merged: BTreeSet<i64> = merged.into_iter().collect();
            if !(0..common.size).contains(&k) {
                return Err(Report::usage(format!(
                    "--k {k} is outside 0..{}",
                    common.size - 1
                )));
            }
            let ctx =
                merged_context(common.size, &merged).map_err(|e| Report::usage(e.to_string()))?;
            let opts = MergeOptions {
                logic: Logic::new(common.enum_cap),
                ..MergeOptions::default()
            };
            let (t, tr) = merge_types_with(&opts, &ctx, &l, &r, k).map_err(merge_failure)?;
            Ok(protocol_report(&t, &[tr], trace))
        }
        Command::Simulate {
            types,
            common,
            unroll,
            state_cap,
        } => {
            check_size(common.size)?;
            let n = common.size;
            if types.len() != 1 && types.len() as i64 != n {
                return Err(Report::usage(format!(
                    "expected one global type or {n} local types, got {}",
                    types.len()
                )));
            }
            let ctx = initial_context(n).map_err(|e| Report::usage(e.to_string()))?;
            let mut parsed = Vec::new();
            for path in &types {
                parsed.push(read_protocol(path)?);
            }
            let mut actions = Vec::new();
            for r in 0..n {
                let t = if parsed.len() == 1 {
                    &parsed[0]
                } else {
                    &parsed[r as usize]
                };
                actions.push(linearize(&ctx, t, r, Some(unroll)).map_err(oracle_failure)?);
            }
            let opts = SimOptions {
                logic: Logic::new(common.enum_cap),
                state_cap,
            };
            let outcome = simulate_with(&opts, &actions, n).map_err(oracle_failure)?;
            Ok(simulation_report(&outcome))
        }
    }
}

fn simulation_report(outcome: &SimOutcome) -> Report {
    let (code, mut text) = match outcome {
        SimOutcome::Completed(events) => (EXIT_OK, format_trace(events)),
        SimOutcome::Deadlocked(stuck) => (
            EXIT_UNTYPABLE,
            stuck
                .iter()
                .map(|(r, a)| format!("rank {r} blocked on {a}\n"))
                .collect(),
        ),
        SimOutcome::Mismatch(detail) => (EXIT_UNTYPABLE, format!("{detail}\n")),
    };
    text.push_str(&format!("verdict: {}\n", outcome.verdict()));
    let detail = match outcome {
        SimOutcome::Completed(events) => {
            json!({"trace": events.iter().map(|e| e.to_string()).collect::<Vec<_>>()})
        }
        SimOutcome::Deadlocked(stuck) => json!({
            "stuck": stuck.iter().map(|(r, a)| (r.to_string(), json!(a.to_string()))).collect::<serde_json::Map<_, _>>()
        }),
        SimOutcome::Mismatch(detail) => json!({"detail": detail}),
    };
    let mut doc = json!({"status": if code == EXIT_OK { "ok" } else { "error" }, "verdict": outcome.verdict()});
    doc.as_object_mut()
        .expect("object")
        .extend(detail.as_object().expect("object").clone());
    Report {
        code,
        text,
        json: doc,
    }
}
