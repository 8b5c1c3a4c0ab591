//! Command-line interface: check, build, run, and trace-summary.
//!
//! Exit codes: 0 success; 1 source diagnostics (errors, or any diagnostic
//! under --werror); 2 environment/configuration problems (unreadable files,
//! malformed machine or cost descriptions, no capable worker); 3 runtime
//! errors during simulated execution.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::diag::Diagnostic;
use crate::driver::{compile_file, CompileOptions, CompileOutcome};
use crate::lowering::artifact::TaskProgram;
use crate::sema::types::TargetConfig;
use crate::sim;
use crate::sim::machine::{MachineDescription, PerfModel};
use crate::sim::policy::Policy;
use crate::sim::trace::Trace;

#[derive(Parser)]
#[command(name = "taskc", about = "Compiler and simulator for task-annotated C programs")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Parse, analyze, and lower a source file, reporting diagnostics.
    Check(CompileFlags),
    /// Compile a source file into a self-contained program artifact.
    Build(BuildArgs),
    /// Compile (or load) a program and execute it on a simulated machine.
    Run(RunArgs),
    /// Validate a trace file and print aggregate statistics.
    TraceSummary(TraceSummaryArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CharSign {
    Signed,
    Unsigned,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DiagFormat {
    Json,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SchedArg {
    Eager,
    Heft,
}

fn parse_bits(s: &str) -> Result<u32, String> {
    match s {
        "32" => Ok(32),
        "64" => Ok(64),
        _ => Err("must be 32 or 64".to_string()),
    }
}

#[derive(Args)]
struct CompileFlags {
    /// Input source file.
    file: PathBuf,
    /// Pointer and long width of the simulated target, in bits.
    #[arg(long = "target-bits", value_parser = parse_bits, default_value = "64")]
    target_bits: u32,
    /// Signedness of plain char on the simulated target.
    #[arg(long = "char", value_enum, default_value_t = CharSign::Signed)]
    char_sign: CharSign,
    /// Skip the may-be-used-unregistered dataflow check.
    #[arg(long = "no-registration-check")]
    no_registration_check: bool,
    /// Any diagnostic (including warnings) makes the command fail.
    #[arg(long)]
    werror: bool,
    /// Print diagnostics as JSON objects, one per line.
    #[arg(long = "diag-format", value_enum)]
    diag_format: Option<DiagFormat>,
}

impl CompileFlags {
    fn options(&self) -> CompileOptions {
        let bits = self.target_bits;
        CompileOptions {
            target: TargetConfig {
                pointer_width_bits: bits,
                long_width_bits: bits,
                char_signed: self.char_sign == CharSign::Signed,
            },
            registration_check: !self.no_registration_check,
        }
    }
}

#[derive(Args)]
struct BuildArgs {
    #[command(flatten)]
    compile: CompileFlags,
    /// Output artifact path (defaults to the input with a .json extension).
    #[arg(short = 'o', long = "output")]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    compile: CompileFlags,
    /// Machine description JSON file; a single-CPU machine when omitted.
    #[arg(long)]
    machine: Option<PathBuf>,
    /// Execution cost model JSON file; unit costs when omitted.
    #[arg(long)]
    perf: Option<PathBuf>,
    /// Scheduling policy.
    #[arg(long, value_enum, default_value_t = SchedArg::Eager)]
    sched: SchedArg,
    /// Write the execution trace to this file as JSON lines.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Print the final contents of every dumped buffer.
    #[arg(long = "dump-buffers")]
    dump_buffers: bool,
}

#[derive(Args)]
struct TraceSummaryArgs {
    /// Trace file written by `run --trace`.
    file: PathBuf,
}

fn emit_diags(diags: &[Diagnostic], format: Option<DiagFormat>) {
    for d in diags {
        match format {
            Some(DiagFormat::Json) => {
                eprintln!("{}", serde_json::to_string(d).expect("diagnostic serialization"));
            }
            None => eprintln!("{}", d.render()),
        }
    }
}

/// The exit code a compile outcome forces, if any.
fn diag_failure(out: &CompileOutcome, werror: bool) -> Option<i32> {
    if out.has_errors() || (werror && !out.diagnostics.is_empty()) {
        Some(1)
    } else {
        None
    }
}

fn fail_env(msg: &str) -> i32 {
    eprintln!("taskc: error: {msg}");
    2
}

fn cmd_check(flags: &CompileFlags) -> i32 {
    let out = match compile_file(&flags.file, &flags.options()) {
        Ok(out) => out,
        Err(msg) => return fail_env(&msg),
    };
    emit_diags(&out.diagnostics, flags.diag_format);
    diag_failure(&out, flags.werror).unwrap_or(0)
}

fn cmd_build(args: &BuildArgs) -> i32 {
    let flags = &args.compile;
    let out = match compile_file(&flags.file, &flags.options()) {
        Ok(out) => out,
        Err(msg) => return fail_env(&msg),
    };
    emit_diags(&out.diagnostics, flags.diag_format);
    if let Some(code) = diag_failure(&out, flags.werror) {
        return code;
    }
    let program = out.program.expect("no errors implies an artifact");
    let dest = args.output.clone().unwrap_or_else(|| flags.file.with_extension("json"));
    if let Err(e) = std::fs::write(&dest, program.to_json()) {
        return fail_env(&format!("cannot write '{}': {e}", dest.display()));
    }
    0
}

/// Obtain the program to run: a prebuilt artifact for .json inputs,
/// otherwise a fresh compile. `Err` carries the failing exit code.
fn load_or_compile(flags: &CompileFlags) -> Result<TaskProgram, i32> {
    if flags.file.extension().is_some_and(|e| e == "json") {
        let text = std::fs::read_to_string(&flags.file)
            .map_err(|e| fail_env(&format!("cannot read '{}': {e}", flags.file.display())))?;
        return TaskProgram::from_json(&text)
            .map_err(|e| fail_env(&format!("malformed artifact '{}': {e}", flags.file.display())));
    }
    let out = match compile_file(&flags.file, &flags.options()) {
        Ok(out) => out,
        Err(msg) => return Err(fail_env(&msg)),
    };
    emit_diags(&out.diagnostics, flags.diag_format);
    if let Some(code) = diag_failure(&out, flags.werror) {
        return Err(code);
    }
    Ok(out.program.expect("no errors implies an artifact"))
}

fn hex(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

fn cmd_run(args: &RunArgs) -> i32 {
    let program = match load_or_compile(&args.compile) {
        Ok(p) => p,
        Err(code) => return code,
    };
    let machine = match &args.machine {
        Some(path) => match MachineDescription::load(path) {
            Ok(m) => m,
            Err(e) => return fail_env(&e.0),
        },
        None => MachineDescription::single_cpu(),
    };
    let perf = match &args.perf {
        Some(path) => match PerfModel::load(path) {
            Ok(p) => p,
            Err(e) => return fail_env(&e.0),
        },
        None => PerfModel::default_for(&program),
    };
    let policy = match args.sched {
        SchedArg::Eager => Policy::Eager,
        SchedArg::Heft => Policy::Heft,
    };
    let result = match sim::run(&program, &machine, &perf, policy) {
        Ok(r) => r,
        Err(e) => return fail_env(&e.0),
    };
    if let Some(path) = &args.trace {
        if let Err(e) = std::fs::write(path, result.trace.to_json_lines()) {
            return fail_env(&format!("cannot write '{}': {e}", path.display()));
        }
    }
    if let Some(fatal) = &result.fatal {
        eprintln!("{fatal}");
        return 3;
    }
    println!("makespan: {}", result.makespan);
    if args.dump_buffers {
        for d in &result.buffer_dump {
            println!("buffer {} {}[{}]: {}", d.label, d.elem.name(), d.nx, hex(&d.bytes));
        }
    }
    0
}

fn cmd_trace_summary(args: &TraceSummaryArgs) -> i32 {
    let text = match std::fs::read_to_string(&args.file) {
        Ok(t) => t,
        Err(e) => return fail_env(&format!("cannot read '{}': {e}", args.file.display())),
    };
    let trace = match Trace::from_json_lines(&text) {
        Ok(t) => t,
        Err(e) => return fail_env(&format!("malformed trace '{}': {e}", args.file.display())),
    };
    if let Err(e) = trace.validate() {
        return fail_env(&format!("inconsistent trace '{}': {e}", args.file.display()));
    }
    print!("{}", trace.summary());
    0
}

/// Parse arguments from the environment and dispatch. Returns the process
/// exit code.
pub fn main() -> i32 {
    let cli = Cli::parse();
    match &cli.cmd {
        Cmd::Check(flags) => cmd_check(flags),
        Cmd::Build(args) => cmd_build(args),
        Cmd::Run(args) => cmd_run(args),
        Cmd::TraceSummary(args) => cmd_trace_summary(args),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn target_bits_accepts_only_32_and_64() {
        assert_eq!(parse_bits("32"), Ok(32));
        assert_eq!(parse_bits("64"), Ok(64));
        assert!(parse_bits("16").is_err());
        assert!(parse_bits("sixty-four").is_err());
    }

    #[test]
    fn hex_rendering_is_lowercase_two_digit() {
        assert_eq!(hex(&[0, 1, 0xab, 0xff]), "0001abff");
        assert_eq!(hex(&[]), "");
    }

    #[test]
    fn run_accepts_artifacts_by_extension() {
        let flags = |p: &str| CompileFlags {
            file: PathBuf::from(p),
            target_bits: 64,
            char_sign: CharSign::Signed,
            no_registration_check: false,
            werror: false,
            diag_format: None,
        };
        assert!(flags("prog.json").file.extension().is_some_and(|e| e == "json"));
        assert!(!flags("prog.tc").file.extension().is_some_and(|e| e == "json"));
    }
}
