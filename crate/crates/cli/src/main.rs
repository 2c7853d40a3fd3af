//! `ombrl` — command-line front end for the training service.
//!
//! The CLI is a client: it validates the config locally, then drives a
//! service over HTTP. Without `--server` it spins up an in-process service
//! on a loopback port, so the binary is self-contained.
//!
//! Exit codes (stable contract):
//!   0  success
//!   1  internal/transport error
//!   2  config, file, or usage error (nothing was written)
//!   3  numeric fault (training ran but episodes faulted)
//!   4  grad-check oracle gate failed (relative error > 1e-5)

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};

use ombrl_api as api;
use ombrl_client::{Client, ClientError};
use ombrl_engine::config::TrainerConfig;

const EXIT_INTERNAL: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERIC: u8 = 3;
const EXIT_GRAD_GATE: u8 = 4;

#[derive(Parser)]
#[command(
    name = "ombrl",
    version,
    about = "Online model-based RL: trajectory tracking on simulated plants",
    after_help = "Exit codes: 0 success, 1 internal error, 2 config/file error, \
                  3 numeric fault during training, 4 grad-check oracle gate failed."
)]
struct Cli {
    /// URL of a running service; if omitted, an in-process service is used.
    #[arg(long, global = true)]
    server: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Path to the TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Override the output directory from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the master seed from the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the online training loop; writes JSONL log, checkpoints, summary.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Override the number of episodes.
        #[arg(long)]
        episodes: Option<u64>,
        /// Resume from a checkpoint file.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpointed policy on the standard reference suite.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Use the checkpoint's best-by-eval policy instead of the last one.
        #[arg(long)]
        best: bool,
    },
    /// Cross-check the closed-loop gradient against the finite-difference
    /// oracle (true-Jacobian mode, plus the learned model if a checkpoint is
    /// given).
    GradCheck {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Testing hook: negate the policy feedback blocks (negative control).
        #[arg(long, hide = true)]
        corrupt_k: bool,
    },
    /// Policy-regret report for a finished run against a comparator
    /// checkpoint.
    Regret {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Training log (JSONL) of the run under analysis.
        #[arg(long)]
        log: PathBuf,
        /// Checkpoint providing the comparator policy.
        #[arg(long)]
        comparator: PathBuf,
        /// Slope-fit window start episode (1-based).
        #[arg(long)]
        fit_start: Option<u64>,
        /// Slope-fit window end episode (1-based).
        #[arg(long)]
        fit_end: Option<u64>,
    },
    /// Export a training log to the fixed-column CSV.
    Export {
        /// Training log (JSONL) to export.
        #[arg(long)]
        log: PathBuf,
        /// CSV output path.
        #[arg(long)]
        out: PathBuf,
    },
}

/// Keeps the in-process service's runtime thread alive for the CLI's
/// lifetime.
struct LocalServer {
    url: String,
    _thread: std::thread::JoinHandle<()>,
}

fn spawn_local_server() -> Result<LocalServer, String> {
    let (tx, rx) = std::sync::mpsc::channel();
    let thread = std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()
            .expect("tokio runtime");
        rt.block_on(async move {
            match ombrl_server::bind("127.0.0.1:0".parse().unwrap()).await {
                Ok((addr, listener)) => {
                    let _ = tx.send(Ok(addr));
                    let _ = ombrl_server::serve(listener).await;
                }
                Err(e) => {
                    let _ = tx.send(Err(e.to_string()));
                }
            }
        });
    });
    let addr = rx
        .recv()
        .map_err(|_| "service thread died".to_string())?
        .map_err(|e| format!("cannot bind local service: {e}"))?;
    Ok(LocalServer {
        url: format!("http://{addr}"),
        _thread: thread,
    })
}

fn load_config(args: &ConfigArgs, episodes: Option<u64>) -> Result<TrainerConfig, String> {
    let mut cfg = TrainerConfig::load(&args.config).map_err(|e| e.to_string())?;
    if let Some(out) = &args.out {
        cfg.output.dir = out.clone();
    }
    if let Some(seed) = args.seed {
        cfg.trainer.seed = seed;
    }
    if let Some(eps) = episodes {
        cfg.trainer.episodes = eps;
    }
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

fn exit_for(err: &ClientError) -> u8 {
    match err {
        ClientError::Service { kind, .. } => match kind.as_str() {
            "config" | "contract" | "checkpoint" | "log" | "io" => EXIT_CONFIG,
            "numeric" => EXIT_NUMERIC,
            _ => EXIT_INTERNAL,
        },
        ClientError::Transport(_) => EXIT_INTERNAL,
    }
}

fn run(cli: Cli, client: &Client) -> u8 {
    match cli.command {
        Command::Train {
            cfg,
            episodes,
            resume,
        } => {
            let config = match load_config(&cfg, episodes) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e}");
                    return EXIT_CONFIG;
                }
            };
            let total = config.trainer.episodes;
            let req = api::TrainRequest {
                config,
                resume_from: resume,
            };
            let started = match client.start_train(&req) {
                Ok(s) => s,
                Err(e) => {
                    eprintln!("error: {e}");
                    return exit_for(&e);
                }
            };
            let progress_every = (total / 10).max(1);
            let status = client.wait_for_job(started.job_id, Duration::from_millis(100), |rec| {
                if (rec.episode + 1) % progress_every == 0 || rec.episode + 1 == total {
                    println!(
                        "episode {:>5}/{total}  g_t {:>12.4}  probe_loss {}",
                        rec.episode + 1,
                        rec.g_t,
                        rec.probe_loss
                            .map(|p| format!("{p:.3e}"))
                            .unwrap_or_else(|| "-".into()),
                    );
                }
            });
            match status {
                Ok(status) => match status.state {
                    api::JobState::Done => {
                        let summary = status.summary.expect("done job has summary");
                        println!(
                            "done: {} episodes, final g_t {:.4}, log {}",
                            summary.episodes, summary.final_g, summary.log_path
                        );
                        if summary.faulted_episodes > 0 {
                            eprintln!(
                                "warning: {} faulted episode(s)",
                                summary.faulted_episodes
                            );
                            EXIT_NUMERIC
                        } else {
                            0
                        }
                    }
                    _ => {
                        eprintln!(
                            "training failed: {}",
                            status.error.unwrap_or_else(|| "unknown".into())
                        );
                        EXIT_NUMERIC
                    }
                },
                Err(e) => {
                    eprintln!("error: {e}");
                    exit_for(&e)
                }
            }
        }
        Command::Eval {
            cfg,
            checkpoint,
            best,
        } => {
            let config = match load_config(&cfg, None) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e}");
                    return EXIT_CONFIG;
                }
            };
            let out_dir = config.output.dir.clone();
            let req = api::EvalRequest {
                config,
                checkpoint,
                use_best: best,
            };
            match client.eval(&req) {
                Ok(resp) => {
                    let m = &resp.metrics;
                    println!("mean tracking error  {:.6}", m.mean_tracking_error);
                    println!("max tracking error   {:.6}", m.max_tracking_error);
                    println!("mean velocity        {:.6}", m.mean_velocity);
                    println!("max velocity         {:.6}", m.max_velocity);
                    println!("rho (max err / max vel) {:.6}", m.rho);
                    println!("mean episode cost    {:.6}", m.mean_episode_cost);
                    let path = out_dir.join("eval_metrics.json");
                    if std::fs::create_dir_all(&out_dir).is_ok() {
                        if let Ok(body) = serde_json::to_string_pretty(&m) {
                            let _ = std::fs::write(&path, body);
                            println!("metrics written to {}", path.display());
                        }
                    }
                    0
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    exit_for(&e)
                }
            }
        }
        Command::GradCheck {
            cfg,
            checkpoint,
            corrupt_k,
        } => {
            let config = match load_config(&cfg, None) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e}");
                    return EXIT_CONFIG;
                }
            };
            if config.horizon() < 2 {
                eprintln!("usage error: grad-check needs a horizon of at least 2 steps");
                return EXIT_CONFIG;
            }
            let req = api::GradCheckRequest {
                config,
                checkpoint,
                corrupt_k,
            };
            match client.grad_check(&req) {
                Ok(resp) => {
                    let print = |label: &str, r: &api::GradCheckReport| {
                        println!(
                            "{label}: |delta| {:.6e}  rel err {:.6e}  cosine {:.9}  (|grad| {:.4e}, {} params)",
                            r.delta_norm, r.rel_error, r.cosine, r.grad_norm, r.n_params
                        );
                    };
                    print("oracle  (true jacobians)", &resp.oracle);
                    if let Some(learned) = &resp.learned {
                        print("learned (model jacobians)", learned);
                    }
                    if resp.oracle_pass {
                        println!("PASS: oracle-mode relative error within 1e-5");
                        0
                    } else {
                        println!("FAIL: oracle-mode relative error above 1e-5");
                        EXIT_GRAD_GATE
                    }
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    exit_for(&e)
                }
            }
        }
        Command::Regret {
            cfg,
            log,
            comparator,
            fit_start,
            fit_end,
        } => {
            let config = match load_config(&cfg, None) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e}");
                    return EXIT_CONFIG;
                }
            };
            let out_dir = config.output.dir.clone();
            let fit_window = match (fit_start, fit_end) {
                (Some(a), Some(b)) => Some([a, b]),
                (None, None) => None,
                _ => {
                    eprintln!("usage error: give both --fit-start and --fit-end or neither");
                    return EXIT_CONFIG;
                }
            };
            let req = api::RegretRequest {
                config,
                log_path: log,
                comparator_checkpoint: comparator,
                fit_window,
            };
            match client.regret(&req) {
                Ok(resp) => {
                    let r = &resp.report;
                    println!("episodes evaluated   {}", r.episodes.len());
                    println!(
                        "cumulative regret    {:.4}",
                        r.cumulative.last().copied().unwrap_or(0.0)
                    );
                    match r.slope {
                        Some(s) => println!(
                            "log-log slope        {s:.4} over episodes {}..{}",
                            r.fit_window[0], r.fit_window[1]
                        ),
                        None => println!("log-log slope        (not enough points)"),
                    }
                    let path = out_dir.join("regret_report.json");
                    if std::fs::create_dir_all(&out_dir).is_ok() {
                        if let Ok(body) = serde_json::to_string_pretty(r) {
                            let _ = std::fs::write(&path, body);
                            println!("report written to {}", path.display());
                        }
                    }
                    0
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    exit_for(&e)
                }
            }
        }
        Command::Export { log, out } => {
            let req = api::ExportRequest {
                log_path: log,
                out_path: out,
            };
            match client.export(&req) {
                Ok(resp) => {
                    println!("wrote {} rows to {}", resp.rows, resp.out_path.display());
                    0
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    exit_for(&e)
                }
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let local;
    let url = match &cli.server {
        Some(url) => url.clone(),
        None => {
            local = match spawn_local_server() {
                Ok(s) => s,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(EXIT_INTERNAL);
                }
            };
            local.url.clone()
        }
    };
    let client = match Client::new(&url) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_INTERNAL);
        }
    };
    ExitCode::from(run(cli, &client))
}
