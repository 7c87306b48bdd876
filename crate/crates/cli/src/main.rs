use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use sgfd::analysis::{asymptotic_a_constant, asymptotic_b_constant, bound_a, bound_b, fit_rate, BoundParams};
use sgfd::harness::{run_experiment, verify_suite_with, EntryStatus, ExperimentSpec, Faults, Level};
use sgfd::Trace;

/// Environment variable holding the worker-thread count.
const WORKERS_ENV: &str = "SGFD_WORKERS";

#[derive(Parser)]
#[command(name = "sgfd", version, about = "Gradient-free stochastic optimization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every combination in a TOML experiment spec.
    Run {
        spec: PathBuf,
        /// Overrides `output_dir` from the experiment file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the verification suite. Exits with 2 if any check fails.
    Verify(VerifyArgs),
    /// Fit a power-law rate to the gap column of a trace CSV.
    Rates {
        trace: PathBuf,
        /// Fit window `k_lo:k_hi`; defaults to the last decade of the trace.
        #[arg(long)]
        window: Option<String>,
        #[arg(long)]
        json: bool,
    },
    /// Evaluate the contraction product A_k and noise sum B_k.
    Bounds {
        #[arg(long)]
        beta: f64,
        #[arg(long)]
        sigma: f64,
        #[arg(long)]
        l: f64,
        #[arg(long)]
        k: u64,
        /// 1 for plain SGFD, 2 for momentum.
        #[arg(long, default_value_t = 1)]
        divisor: u32,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, conflicts_with = "full")]
    fast: bool,
    #[arg(long)]
    full: bool,
    /// Also write the report as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
    #[arg(long, hide = true)]
    inject_direction_scale: Option<f64>,
    #[arg(long, hide = true)]
    inject_drop_normalization: bool,
}

fn configure_workers() -> Result<()> {
    let Ok(raw) = std::env::var(WORKERS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| anyhow!("{WORKERS_ENV} must be a positive integer, got `{raw}`"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .context("configuring worker pool")
}

fn parse_window(s: &str) -> Result<(u64, u64)> {
    let (lo, hi) = s
        .split_once(':')
        .ok_or_else(|| anyhow!("window must look like k_lo:k_hi, got `{s}`"))?;
    Ok((
        lo.trim().parse().with_context(|| format!("bad k_lo `{lo}`"))?,
        hi.trim().parse().with_context(|| format!("bad k_hi `{hi}`"))?,
    ))
}

fn cmd_run(spec: PathBuf, out: Option<PathBuf>) -> Result<ExitCode> {
    let mut spec = ExperimentSpec::load(&spec).with_context(|| format!("loading {}", spec.display()))?;
    if let Some(out) = out {
        spec.output_dir = out;
    }
    let report = run_experiment(&spec)?;
    for e in &report.entries {
        match e.status {
            EntryStatus::Ok => {
                let rate = e
                    .rate_fit
                    .as_ref()
                    .map_or_else(|| "n/a".to_string(), |f| format!("{:.3}", f.slope));
                let env = e
                    .envelope
                    .as_ref()
                    .map_or_else(|| "n/a".to_string(), |s| format!("{:.3}", s.check.fraction));
                println!("{:<32} ok        slope {rate:>8}  envelope {env}", e.name);
            }
            EntryStatus::Diverged => println!(
                "{:<32} DIVERGED  {}",
                e.name,
                e.error.as_deref().unwrap_or("")
            ),
        }
        if let Some(meta) = &e.meta {
            for w in &meta.warnings {
                eprintln!("warning: {}: {w}", e.name);
            }
        }
    }
    println!("wrote {}", report.output_dir.join(sgfd::harness::REPORT_FILE).display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_verify(args: VerifyArgs) -> Result<ExitCode> {
    let level = if args.full { Level::Full } else { Level::Fast };
    let faults = Faults {
        direction_scale: args.inject_direction_scale,
        drop_normalization: args.inject_drop_normalization,
    };
    let report = verify_suite_with(level, faults);
    for c in &report.checks {
        println!(
            "{} {}: {:.6e} {}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.statistic,
            c.threshold
        );
    }
    let failed = report.failures().count();
    println!(
        "{} of {} checks passed in {:.1}s",
        report.checks.len() - failed,
        report.checks.len(),
        report.elapsed_secs
    );
    if let Some(path) = args.json {
        std::fs::write(&path, serde_json::to_string_pretty(&report)? + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(if report.passed() { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

fn cmd_rates(path: PathBuf, window: Option<String>, json: bool) -> Result<ExitCode> {
    let trace = Trace::load_csv(&path)?;
    let window = window.as_deref().map(parse_window).transpose()?;
    let fit = fit_rate(&trace, window)?;
    if json {
        println!("{}", serde_json::to_string_pretty(&fit)?);
    } else {
        println!(
            "slope {:.6}  intercept {:.6}  window {}:{}  residual {:.3e}  points {}  dropped {}",
            fit.slope, fit.intercept, fit.window.0, fit.window.1, fit.residual, fit.points, fit.dropped
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_bounds(beta: f64, sigma: f64, l: f64, k: u64, divisor: u32, json: bool) -> Result<ExitCode> {
    if k == 0 {
        bail!("k must be at least 1");
    }
    let params = BoundParams::with_divisor(beta, sigma, l, k, divisor)?;
    let a = bound_a(&params)?;
    let b = bound_b(&params)?;
    // the limits only exist when the effective rate exceeds 1
    let ca = asymptotic_a_constant(&params).ok();
    let cb = asymptotic_b_constant(&params).ok();
    if json {
        let v = serde_json::json!({
            "beta": beta, "sigma": sigma, "l": l, "k": k, "rate_divisor": divisor,
            "a_k": a, "b_k": b, "a_k_times_k_pow_a_limit": ca, "b_k_times_k_plus_1_plus_sigma_limit": cb,
        });
        println!("{}", serde_json::to_string_pretty(&v)?);
    } else {
        println!("A_k = {a:.12e}");
        println!("B_k = {b:.12e}");
        if let Some(ca) = ca {
            println!("A_k * k^a         -> {ca:.12e}");
        }
        if let Some(cb) = cb {
            println!("B_k * (k+1+sigma) -> {cb:.12e}");
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    // clap exits with 2 on usage errors, which is reserved for verify failures
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = configure_workers().and_then(|()| match cli.command {
        Command::Run { spec, out } => cmd_run(spec, out),
        Command::Verify(args) => cmd_verify(args),
        Command::Rates { trace, window, json } => cmd_rates(trace, window, json),
        Command::Bounds {
            beta,
            sigma,
            l,
            k,
            divisor,
            json,
        } => cmd_bounds(beta, sigma, l, k, divisor, json),
    });
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
