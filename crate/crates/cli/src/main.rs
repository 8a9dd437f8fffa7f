use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use taskcomm::experiment::{cmd_analyze, cmd_simulate, BatchSpec};
use taskcomm::trace::{check_transitions, read_trace_file, replay};
use taskcomm::{Config, Mismatch, TaskHypothesis, TeacherScript, TraceRecord, DEFAULT_MAX_TICKS};

#[derive(Parser)]
#[command(name = "taskcomm", version, about = "Teach a robot a ball task with a single button")]
struct Cli {
    /// JSON config with optional `teacher` and `planner` sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a batch of trials against the simulated teacher.
    Simulate(SimulateArgs),
    /// Summarize labeled traces.
    Analyze {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Print a trace tick by tick and check it against the filter.
    Replay {
        #[arg(long)]
        trace: PathBuf,
    },
    /// Serve live teaching sessions over websockets.
    Serve(ServeArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, default_value_t = 200)]
    trials: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fixed true task as `mov,wrt,dist`; sampled per trial otherwise.
    #[arg(long, value_parser = parse_task)]
    task: Option<TaskHypothesis>,
    /// Teacher script with forced or suppressed presses.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_MAX_TICKS)]
    max_ticks: u32,
    /// Multiplies the simulated teacher's mistake rate.
    #[arg(long, default_value_t = 1.0)]
    mistake_scale: f64,
    /// Multiplies the simulated teacher's peak approval hazard.
    #[arg(long, default_value_t = 1.0)]
    peak_scale: f64,
}

#[derive(Args)]
struct ServeArgs {
    /// Address to listen on; defaults to $TASKCOMM_BIND, then 127.0.0.1:8080.
    #[arg(long)]
    bind: Option<String>,
    #[arg(long, default_value = "traces")]
    traces: PathBuf,
    /// Tick length override in milliseconds.
    #[arg(long)]
    pace_ms: Option<u64>,
    #[arg(long, default_value_t = DEFAULT_MAX_TICKS)]
    max_ticks: u32,
}

fn parse_task(s: &str) -> Result<TaskHypothesis, String> {
    TaskHypothesis::parse(s).map_err(|e| e.to_string())
}

struct Failure {
    code: &'static str,
    message: String,
    exit: u8,
}

impl From<taskcomm::Error> for Failure {
    fn from(e: taskcomm::Error) -> Self {
        Failure {
            code: e.code(),
            message: e.to_string(),
            exit: 1,
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        taskcomm::Error::from(e).into()
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            return fail(Failure {
                code: "usage",
                message: e.to_string().trim_end().to_string(),
                exit: 2,
            })
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => fail(f),
    }
}

fn fail(f: Failure) -> ExitCode {
    let body = json!({"error": {"code": f.code, "message": f.message}});
    eprintln!("{body}");
    ExitCode::from(f.exit)
}

fn run(cli: Cli) -> Result<(), Failure> {
    let config = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    let mut stdout = std::io::stdout().lock();
    match cli.command {
        Command::Simulate(a) => {
            let mut spec = BatchSpec::new(a.trials, a.seed);
            spec.task = a.task;
            spec.scenario = a.scenario.as_deref().map(TeacherScript::load).transpose()?;
            spec.config = config;
            spec.max_ticks = a.max_ticks;
            spec.mismatch = Mismatch {
                mistake_scale: a.mistake_scale,
                peak_scale: a.peak_scale,
            };
            let summary = cmd_simulate(&spec, &a.out)?;
            writeln!(
                stdout,
                "{}",
                serde_json::to_string_pretty(&summary).map_err(taskcomm::Error::from)?
            )?;
        }
        Command::Analyze { input, report } => {
            let r = cmd_analyze(&input, &report)?;
            writeln!(
                stdout,
                "{}",
                serde_json::to_string_pretty(&r).map_err(taskcomm::Error::from)?
            )?;
        }
        Command::Replay { trace } => {
            let records = read_trace_file(&trace)?;
            check_transitions(&records)?;
            let replayed = replay(&records, config.teacher)?;
            let mut worst = 0.0f64;
            for (r, b) in records.iter().zip(&replayed) {
                worst = worst.max(deviation(r, b));
                writeln!(stdout, "{}", summary_line(r))?;
            }
            writeln!(
                stdout,
                "{} records, largest belief deviation on replay {worst:.3e}",
                records.len()
            )?;
        }
        Command::Serve(a) => serve(config, a)?,
    }
    Ok(())
}

fn summary_line(r: &TraceRecord) -> String {
    let action = r.action.map_or_else(|| "-".to_string(), |a| a.to_string());
    let press = if r.observation.is_press() { "press" } else { "." };
    let top = &r.belief.top;
    let mut line = format!(
        "{:>4}  {:<16} {:<5} top ({},{},{}) p={:.3}  H={:.3}",
        r.tick, action, press, top.mov, top.wrt, top.dist, top.p, r.belief.entropy
    );
    if let Some(t) = &r.truth {
        line.push_str(&format!("  truth {:?}", t.mental).to_lowercase());
    }
    if let Some(f) = r.world.final_displayed {
        line.push_str(&format!("  final {f}"));
    }
    line
}

fn deviation(r: &TraceRecord, b: &taskcomm::BeliefSnapshot) -> f64 {
    let a = &r.belief;
    let pairs = a
        .marg_mov
        .iter()
        .zip(&b.marg_mov)
        .chain(a.marg_wrt.iter().zip(&b.marg_wrt))
        .chain(a.marg_dist.iter().zip(&b.marg_dist));
    pairs
        .map(|(x, y)| (x - y).abs())
        .fold((a.entropy - b.entropy).abs(), f64::max)
}

fn serve(config: Config, a: ServeArgs) -> Result<(), Failure> {
    let addr = taskcomm_gateway::bind_address(a.bind.as_deref()).map_err(|e| Failure {
        code: "invalid_params",
        message: format!("bad bind address: {e}"),
        exit: 1,
    })?;
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();
    let mut cfg = taskcomm_gateway::GatewayConfig::new(config, a.traces);
    cfg.pace = a.pace_ms.map(Duration::from_millis);
    cfg.max_ticks = a.max_ticks;
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        eprintln!("listening on {}", listener.local_addr()?);
        taskcomm_gateway::serve(listener, taskcomm_gateway::AppState::new(cfg)).await
    })?;
    Ok(())
}
