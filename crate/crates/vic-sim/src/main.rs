//! `vic-sim`: scenario runner, report differ, offsets exporter, and the
//! QMP-style input endpoint for the introspection-cheating sandbox.

use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use vic_sim::anticheat::{apply_mitigation, HypervisorProfile, Mitigation};
use vic_sim::game::GameConfig;
use vic_sim::harness::{
    diff_report, events_per_player_correlation, run_scenario, Scenario, ScenarioKind, SessionReport,
};
use vic_sim::input::QmpServer;

#[derive(Parser)]
#[command(name = "vic-sim", version, about = "Deterministic VM-introspection cheating sandbox")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct GameArgs {
    /// Scripted players in the session (max 32).
    #[arg(long, default_value_t = 24)]
    players: u32,
    /// Deterministic seed; repetitions use seed, seed+1, ...
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Comma-separated mitigations: huge_pages,colocate,encrypt.
    #[arg(long, value_delimiter = ',')]
    mitigations: Vec<String>,
}

impl GameArgs {
    fn to_config(&self) -> anyhow::Result<GameConfig> {
        let mut config = GameConfig { players: self.players, seed: self.seed, ..Default::default() };
        if config.players > 32 {
            bail!("--players must be at most 32");
        }
        for name in &self.mitigations {
            if name.is_empty() {
                continue;
            }
            apply_mitigation(&mut config, Mitigation::parse(name)?);
        }
        Ok(config)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write the session report.
    Run {
        /// benchmark | radar | wallhack | triggerbot_poll | triggerbot_event
        /// | triggerbot_event_spp
        #[arg(long)]
        scenario: String,
        #[command(flatten)]
        game: GameArgs,
        /// Simulated session length in seconds.
        #[arg(long = "session-secs", default_value_t = 600)]
        session_secs: u32,
        /// Repetitions averaged into the report.
        #[arg(long, default_value_t = 3)]
        reps: u32,
        /// Narrow the event trigger-bot's guard with sub-page protection.
        #[arg(long, default_value_t = false)]
        spp: bool,
        /// Hide vmexit latency and fault faithfully: the stealthy
        /// hypervisor profile.
        #[arg(long = "faithful-hypervisor", default_value_t = false)]
        faithful_hypervisor: bool,
        /// Realize trigger-bot fire commands as direct memory writes
        /// instead of input injection.
        #[arg(long = "unsafe-memory-fire", default_value_t = false)]
        unsafe_memory_fire: bool,
        /// Reader/overlay poll interval in simulated milliseconds.
        #[arg(long = "poll-ms", default_value_t = 16)]
        poll_ms: u64,
        /// Write repetition 0's overlay/radar frames to this file.
        #[arg(long = "overlay-log")]
        overlay_log: Option<PathBuf>,
        /// Report output path.
        #[arg(long)]
        report: PathBuf,
    },
    /// Subtract a cheat report from a baseline report and print the
    /// quartile summary.
    Diff {
        #[arg(long)]
        baseline: PathBuf,
        #[arg(long)]
        cheat: PathBuf,
        /// Optional JSON output for the difference statistics.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export the game's offsets file.
    Offsets {
        #[command(flatten)]
        game: GameArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve the input-injection wire protocol on a unix socket.
    QmpServe {
        /// Socket path to bind.
        #[arg(long)]
        endpoint: PathBuf,
        /// Write accepted events to this file as JSON lines.
        #[arg(long = "trace-out")]
        trace_out: Option<PathBuf>,
    },
    /// Run the event trigger-bot across player counts and report the
    /// events-per-second series.
    Correlate {
        #[command(flatten)]
        game: GameArgs,
        /// Player counts to sweep.
        #[arg(long, value_delimiter = ',', default_values_t = vec![4u32, 8, 16, 24, 32])]
        players_sweep: Vec<u32>,
        #[arg(long = "session-secs", default_value_t = 120)]
        session_secs: u32,
        #[arg(long, default_value_t = 1)]
        reps: u32,
        /// Optional JSON output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::Run {
            scenario,
            game,
            session_secs,
            reps,
            spp,
            faithful_hypervisor,
            unsafe_memory_fire,
            poll_ms,
            overlay_log,
            report,
        } => {
            let mut kind = ScenarioKind::parse(&scenario)?;
            if spp && kind == ScenarioKind::TriggerbotEvent {
                kind = ScenarioKind::TriggerbotEventSpp;
            }
            let mut sc = Scenario::new(kind);
            sc.config = game.to_config()?;
            sc.session_seconds = session_secs;
            sc.repetitions = reps;
            sc.poll_interval_ms = poll_ms;
            sc.unsafe_memory_fire = unsafe_memory_fire;
            sc.overlay_log = overlay_log;
            if faithful_hypervisor {
                sc.profile = HypervisorProfile::faithful();
            }
            let out = run_scenario(&sc)?;
            out.save(&report)?;
            println!(
                "{}: mean tick rate {:.3}, events {:?}, probes clean/suspicious/detected {}/{}/{}",
                out.scenario,
                out.mean_tick_rate,
                out.total_events_per_rep,
                out.probe_clean,
                out.probe_suspicious,
                out.probe_detected,
            );
            println!("report written to {}", report.display());
        }
        Command::Diff { baseline, cheat, out } => {
            let baseline = SessionReport::load(&baseline)?;
            let cheat = SessionReport::load(&cheat)?;
            let stats = diff_report(&cheat, &baseline)?;
            print!("{}", stats.summary_table());
            if let Some(path) = out {
                stats.save(&path)?;
            }
        }
        Command::Offsets { game, out } => {
            // Initialize a game with the requested flags and export what it
            // actually publishes.
            let sandbox = vic_sim::Sandbox::new(game.to_config()?, HypervisorProfile::default())?;
            sandbox.layout()?.export(&out)?;
            println!("offsets written to {}", out.display());
        }
        Command::QmpServe { endpoint, trace_out } => {
            if endpoint.exists() {
                std::fs::remove_file(&endpoint)
                    .with_context(|| format!("removing stale socket {}", endpoint.display()))?;
            }
            let server = QmpServer::bind(&endpoint)?;
            println!("listening on {}", endpoint.display());
            let mut trace: Vec<String> = Vec::new();
            let accepted = server.serve_connection(|payload| {
                trace.push(String::from_utf8_lossy(&payload.guest_bytes()).into_owned());
            })?;
            if let Some(path) = trace_out {
                std::fs::write(&path, trace.join("\n") + "\n")?;
            }
            println!("connection closed after {accepted} accepted events");
        }
        Command::Correlate { game, players_sweep, session_secs, reps, out } => {
            let mut base = Scenario::new(ScenarioKind::TriggerbotEvent);
            base.config = game.to_config()?;
            base.session_seconds = session_secs;
            base.repetitions = reps;
            let report = events_per_player_correlation(&base, &players_sweep)?;
            for p in &report.points {
                println!(
                    "players {:>3}: {:>12.1} events/s, mean tick rate {:.3}",
                    p.players, p.events_per_second, p.mean_tick_rate
                );
            }
            println!(
                "events/s strictly increasing: {}",
                if report.strictly_increasing { "yes" } else { "no" }
            );
            if let Some(path) = out {
                let mut text = serde_json::to_string_pretty(&report)?;
                text.push('\n');
                std::fs::write(path, text)?;
            }
        }
    }
    Ok(())
}
