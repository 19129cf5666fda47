//! Scenario runner and report generator: benchmark vs. cheat sessions,
//! per-second tick-rate sampling, repetition averaging, baseline
//! subtraction, and quartile statistics.
//!
//! Sessions run on simulated seconds: a "600-second" session is logical
//! time, not wall time. Repetitions use seeds `seed`, `seed+1`, ... and run
//! in parallel threads; results are assembled in repetition order, so
//! reports are byte-identical across invocations.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::anticheat::{HypervisorProfile, Verdict};
use crate::cheats::{
    radar_frame, CheatKind, CheatRunConfig, CheatRuntime, FileSink, NullSink, OverlaySink,
    RadarMode,
};
use crate::error::{Result, SimError};
use crate::game::{Game, GameConfig};
use crate::guest::{Guest, GuestConfig};
use crate::input::InputQueue;
use crate::sandbox::Sandbox;
use crate::vmi::VmiSession;

pub const REPORT_VERSION: u32 = 1;
pub const NS_PER_SEC: u64 = 1_000_000_000;

/// The six scenario kinds the harness knows how to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Benchmark,
    Radar,
    Wallhack,
    TriggerbotPoll,
    TriggerbotEvent,
    TriggerbotEventSpp,
}

impl ScenarioKind {
    pub fn parse(name: &str) -> Result<ScenarioKind> {
        match name {
            "benchmark" => Ok(ScenarioKind::Benchmark),
            "radar" => Ok(ScenarioKind::Radar),
            "wallhack" => Ok(ScenarioKind::Wallhack),
            "triggerbot_poll" => Ok(ScenarioKind::TriggerbotPoll),
            "triggerbot_event" => Ok(ScenarioKind::TriggerbotEvent),
            "triggerbot_event_spp" => Ok(ScenarioKind::TriggerbotEventSpp),
            other => Err(SimError::BadReport(format!("unknown scenario {other:?}"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ScenarioKind::Benchmark => "benchmark",
            ScenarioKind::Radar => "radar",
            ScenarioKind::Wallhack => "wallhack",
            ScenarioKind::TriggerbotPoll => "triggerbot_poll",
            ScenarioKind::TriggerbotEvent => "triggerbot_event",
            ScenarioKind::TriggerbotEventSpp => "triggerbot_event_spp",
        }
    }

    fn cheat_kind(&self) -> Option<CheatKind> {
        match self {
            ScenarioKind::Benchmark => None,
            ScenarioKind::Radar => Some(CheatKind::Radar),
            ScenarioKind::Wallhack => Some(CheatKind::Wallhack),
            ScenarioKind::TriggerbotPoll => Some(CheatKind::TriggerbotPoll),
            ScenarioKind::TriggerbotEvent | ScenarioKind::TriggerbotEventSpp => {
                Some(CheatKind::TriggerbotEvent)
            }
        }
    }
}

/// Everything needed to reproduce one measurement.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub kind: ScenarioKind,
    pub config: GameConfig,
    pub profile: HypervisorProfile,
    pub session_seconds: u32,
    pub repetitions: u32,
    pub poll_interval_ms: u64,
    pub unsafe_memory_fire: bool,
    /// Overlay frame log for repetition 0 (seeds `seed`).
    pub overlay_log: Option<PathBuf>,
}

impl Scenario {
    pub fn new(kind: ScenarioKind) -> Scenario {
        Scenario {
            kind,
            config: GameConfig::default(),
            profile: HypervisorProfile::default(),
            session_seconds: 600,
            repetitions: 3,
            poll_interval_ms: 16,
            unsafe_memory_fire: false,
            overlay_log: None,
        }
    }
}

/// Per-second results of one full scenario.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionReport {
    pub version: u32,
    pub scenario: String,
    pub players: u32,
    pub seed: u64,
    pub session_secs: u32,
    pub repetitions: u32,
    pub mitigations: Vec<String>,
    pub spp: bool,
    pub unsafe_memory_fire: bool,
    /// Achieved ticks per second, one series per repetition.
    pub tick_rate_per_rep: Vec<Vec<u32>>,
    /// Pointwise mean of the repetition series.
    pub tick_rate_avg: Vec<f64>,
    /// Trapped memory events per second, averaged across repetitions.
    pub events_per_second_avg: Vec<f64>,
    pub total_events_per_rep: Vec<u64>,
    pub probe_clean: u64,
    pub probe_suspicious: u64,
    pub probe_detected: u64,
    pub redundancy_mismatches: u64,
    /// FNV over the per-tick game-state hashes, one per repetition.
    pub state_trace_hash_per_rep: Vec<String>,
    pub frames_emitted_per_rep: Vec<u64>,
    pub commands_issued_per_rep: Vec<u64>,
    pub mean_tick_rate: f64,
}

impl SessionReport {
    pub fn aggregate_verdict(&self) -> Verdict {
        if self.probe_detected > 0 {
            Verdict::Detected
        } else if self.probe_suspicious > 0 {
            Verdict::Suspicious
        } else {
            Verdict::Clean
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)
            .map_err(|e| SimError::BadReport(e.to_string()))?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<SessionReport> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| SimError::BadReport(e.to_string()))
    }
}

struct RepOutcome {
    ticks_per_sec: Vec<u32>,
    events_per_sec: Vec<u64>,
    total_events: u64,
    trace_hash: u64,
    probe_clean: u64,
    probe_suspicious: u64,
    probe_detected: u64,
    redundancy_mismatches: u64,
    frames_emitted: u64,
    commands_issued: u64,
}

fn fnv_mix(hash: u64, value: u64) -> u64 {
    let mut h = hash;
    for b in value.to_le_bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

fn run_rep(scenario: &Scenario, rep: u32, sink: Box<dyn OverlaySink + Send>) -> Result<RepOutcome> {
    let mut config = scenario.config.clone();
    config.seed = scenario.config.seed + rep as u64;
    let sandbox = Sandbox::new(config, scenario.profile)?;
    let secs = scenario.session_seconds as usize;
    let end_ns = scenario.session_seconds as u64 * NS_PER_SEC;

    let mut session;
    let mut runtime = match scenario.kind.cheat_kind() {
        None => {
            session = None;
            None
        }
        Some(kind) => {
            session = Some(VmiSession::attach(&sandbox)?);
            let mut cfg = CheatRunConfig::new(kind);
            cfg.poll_interval_ms = scenario.poll_interval_ms;
            cfg.unsafe_memory_fire = scenario.unsafe_memory_fire;
            cfg.use_spp = scenario.kind == ScenarioKind::TriggerbotEventSpp;
            Some(CheatRuntime::new(session.as_mut().unwrap(), cfg, sink)?)
        }
    };

    let mut ticks_per_sec = vec![0u32; secs];
    let mut events_per_sec = vec![0u64; secs];
    let mut trace_hash: u64 = 0xCBF2_9CE4_8422_2325;
    loop {
        if sandbox.clock_ns()? >= end_ns {
            break;
        }
        if let Some(rt) = runtime.as_mut() {
            rt.pre_tick()?;
        }
        let out = sandbox.tick()?;
        if let Some(rt) = runtime.as_mut() {
            rt.post_tick()?;
        }
        let window = (out.end_ns / NS_PER_SEC) as usize;
        if window < secs {
            ticks_per_sec[window] += 1;
            events_per_sec[window] += out.trapped_events;
        }
        trace_hash = fnv_mix(trace_hash, sandbox.state_hash()?);
    }

    let telemetry = match runtime {
        Some(rt) => Some(rt.finish()?),
        None => None,
    };
    drop(session);

    let probes = sandbox.probe_reports()?;
    let (redundancy_mismatches, _) = sandbox.redundancy_stats()?;
    let ledger = sandbox.ledger()?;
    Ok(RepOutcome {
        ticks_per_sec,
        events_per_sec,
        total_events: ledger.trapped_accesses,
        trace_hash,
        probe_clean: probes.iter().filter(|p| p.verdict == Verdict::Clean).count() as u64,
        probe_suspicious: probes.iter().filter(|p| p.verdict == Verdict::Suspicious).count() as u64,
        probe_detected: probes.iter().filter(|p| p.verdict == Verdict::Detected).count() as u64,
        redundancy_mismatches,
        frames_emitted: telemetry.as_ref().map(|t| t.frames_emitted).unwrap_or(0),
        commands_issued: telemetry.as_ref().map(|t| t.commands.len() as u64).unwrap_or(0),
    })
}

/// Run every repetition of a scenario (in parallel; sessions are isolated)
/// and assemble the report.
pub fn run_scenario(scenario: &Scenario) -> Result<SessionReport> {
    let reps = scenario.repetitions.max(1);
    let outcomes: Vec<Result<RepOutcome>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..reps)
            .map(|rep| {
                let scenario = &*scenario;
                scope.spawn(move || {
                    let sink: Box<dyn OverlaySink + Send> = match (&scenario.overlay_log, rep) {
                        (Some(path), 0) => Box::new(FileSink::create(path)?),
                        _ => Box::new(NullSink),
                    };
                    run_rep(scenario, rep, sink)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("scenario repetition panicked"))
            .collect()
    });
    let mut reps_done = Vec::with_capacity(reps as usize);
    for outcome in outcomes {
        reps_done.push(outcome?);
    }

    let secs = scenario.session_seconds as usize;
    let mut tick_rate_avg = vec![0.0f64; secs];
    let mut events_avg = vec![0.0f64; secs];
    for rep in &reps_done {
        for i in 0..secs {
            tick_rate_avg[i] += rep.ticks_per_sec[i] as f64;
            events_avg[i] += rep.events_per_sec[i] as f64;
        }
    }
    let n = reps_done.len() as f64;
    for i in 0..secs {
        tick_rate_avg[i] /= n;
        events_avg[i] /= n;
    }
    let mean_tick_rate = tick_rate_avg.iter().sum::<f64>() / secs.max(1) as f64;

    let mut mitigations = Vec::new();
    if scenario.config.huge_pages {
        mitigations.push("huge_pages".to_string());
    }
    if scenario.config.colocate_code_data {
        mitigations.push("colocate".to_string());
    }
    if scenario.config.memory_encryption {
        mitigations.push("encrypt".to_string());
    }

    Ok(SessionReport {
        version: REPORT_VERSION,
        scenario: scenario.kind.name().to_string(),
        players: scenario.config.players,
        seed: scenario.config.seed,
        session_secs: scenario.session_seconds,
        repetitions: reps,
        mitigations,
        spp: scenario.kind == ScenarioKind::TriggerbotEventSpp,
        unsafe_memory_fire: scenario.unsafe_memory_fire,
        tick_rate_per_rep: reps_done.iter().map(|r| r.ticks_per_sec.clone()).collect(),
        tick_rate_avg,
        events_per_second_avg: events_avg,
        total_events_per_rep: reps_done.iter().map(|r| r.total_events).collect(),
        probe_clean: reps_done.iter().map(|r| r.probe_clean).sum(),
        probe_suspicious: reps_done.iter().map(|r| r.probe_suspicious).sum(),
        probe_detected: reps_done.iter().map(|r| r.probe_detected).sum(),
        redundancy_mismatches: reps_done.iter().map(|r| r.redundancy_mismatches).sum(),
        state_trace_hash_per_rep: reps_done
            .iter()
            .map(|r| format!("{:016x}", r.trace_hash))
            .collect(),
        frames_emitted_per_rep: reps_done.iter().map(|r| r.frames_emitted).collect(),
        commands_issued_per_rep: reps_done.iter().map(|r| r.commands_issued).collect(),
        mean_tick_rate,
    })
}

// ----------------------------------------------------------------------
// Baseline subtraction
// ----------------------------------------------------------------------

/// Pointwise `baseline - cheat` statistics; positive numbers mean the cheat
/// ran slower.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiffStats {
    pub baseline_scenario: String,
    pub cheat_scenario: String,
    pub series: Vec<f64>,
    pub mean: f64,
    pub q1: f64,
    pub q2: f64,
    pub q3: f64,
    pub min: f64,
    pub max: f64,
}

/// Linear-interpolation quantile on a sorted copy (the R-7 definition).
fn quantile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn diff_report(cheat: &SessionReport, baseline: &SessionReport) -> Result<DiffStats> {
    if cheat.tick_rate_avg.len() != baseline.tick_rate_avg.len() {
        return Err(SimError::LengthMismatch {
            left: baseline.tick_rate_avg.len(),
            right: cheat.tick_rate_avg.len(),
        });
    }
    let series: Vec<f64> = baseline
        .tick_rate_avg
        .iter()
        .zip(&cheat.tick_rate_avg)
        .map(|(b, c)| b - c)
        .collect();
    let mut sorted = series.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite diffs"));
    let mean = series.iter().sum::<f64>() / series.len().max(1) as f64;
    Ok(DiffStats {
        baseline_scenario: baseline.scenario.clone(),
        cheat_scenario: cheat.scenario.clone(),
        mean,
        q1: quantile(&sorted, 0.25),
        q2: quantile(&sorted, 0.5),
        q3: quantile(&sorted, 0.75),
        min: *sorted.first().unwrap_or(&f64::NAN),
        max: *sorted.last().unwrap_or(&f64::NAN),
        series,
    })
}

impl DiffStats {
    /// Quartile-box summary table, one scenario pair per call.
    pub fn summary_table(&self) -> String {
        format!(
            "baseline - cheat tick-rate difference ({} vs {})\n\
             {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}\n\
             {:>8.3} {:>8.3} {:>8.3} {:>8.3} {:>8.3} {:>8.3}\n",
            self.baseline_scenario,
            self.cheat_scenario,
            "mean",
            "min",
            "q1",
            "median",
            "q3",
            "max",
            self.mean,
            self.min,
            self.q1,
            self.q2,
            self.q3,
            self.max,
        )
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)
            .map_err(|e| SimError::BadReport(e.to_string()))?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }
}

// ----------------------------------------------------------------------
// Player-count correlation
// ----------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorrelationPoint {
    pub players: u32,
    pub events_per_second: f64,
    pub mean_tick_rate: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub points: Vec<CorrelationPoint>,
    pub non_decreasing: bool,
    pub strictly_increasing: bool,
}

/// Run the scenario per player count and relate event rates to player
/// counts; the plot-ready series for the scaling claim.
pub fn events_per_player_correlation(base: &Scenario, player_counts: &[u32]) -> Result<CorrelationReport> {
    let mut points = Vec::with_capacity(player_counts.len());
    for &players in player_counts {
        let mut scenario = base.clone();
        scenario.config.players = players;
        scenario.overlay_log = None;
        let report = run_scenario(&scenario)?;
        let events_total: u64 = report.total_events_per_rep.iter().sum();
        let events_per_second = events_total as f64
            / (report.repetitions as f64 * report.session_secs as f64);
        points.push(CorrelationPoint {
            players,
            events_per_second,
            mean_tick_rate: report.mean_tick_rate,
        });
    }
    let non_decreasing = points.windows(2).all(|w| w[1].events_per_second >= w[0].events_per_second);
    let strictly_increasing = points.windows(2).all(|w| w[1].events_per_second > w[0].events_per_second);
    Ok(CorrelationReport { points, non_decreasing, strictly_increasing })
}

// ----------------------------------------------------------------------
// Radar ground-truth comparison
// ----------------------------------------------------------------------

#[derive(Debug, Deserialize)]
struct RadarLogDot {
    x: u16,
    y: u16,
    #[allow(dead_code)]
    team: String,
}

#[derive(Debug, Deserialize)]
struct RadarLogLine {
    tick: u64,
    kind: String,
    shapes: Vec<RadarLogDot>,
}

/// Mean distance in radar pixels between logged radar dots and a
/// cheat-free ground-truth replay at the same ticks. Missing dots count as
/// half the radar diagonal. This is the decorrelation metric for the
/// memory-encryption mitigation.
pub fn radar_mean_dot_error(scenario: &Scenario, log_lines: &[String]) -> Result<f64> {
    let frames: Vec<RadarLogLine> = log_lines
        .iter()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| SimError::BadReport(e.to_string())))
        .collect::<Result<_>>()?;
    let frames: Vec<RadarLogLine> = frames.into_iter().filter(|f| f.kind == "radar").collect();
    if frames.is_empty() {
        return Err(SimError::BadReport("no radar frames in log".into()));
    }

    // Replay the guest without any cheat attached; host reads during the
    // original run were invisible, so the trajectories are identical.
    let mut guest = Guest::new(GuestConfig {
        encryption_seed: scenario
            .config
            .memory_encryption
            .then_some(scenario.config.seed ^ 0xE9C7_11D5_3A40_81B3),
        ..Default::default()
    })?;
    let mut game = Game::init(&mut guest, scenario.config.clone())?;
    let mut input = InputQueue::new();

    let half_diagonal = ((crate::cheats::RADAR_SIZE as f64).powi(2) * 2.0).sqrt() / 2.0;
    let mut total_error = 0.0f64;
    let mut samples = 0u64;
    let mut frame_iter = frames.iter().peekable();
    let max_tick = frames.iter().map(|f| f.tick).max().unwrap_or(0);
    for tick in 0..=max_tick {
        while let Some(frame) = frame_iter.peek() {
            if frame.tick != tick {
                break;
            }
            let frame = frame_iter.next().unwrap();
            let truth = game.ground_truth(&guest)?;
            let snapshot = crate::cheats::GameSnapshot {
                tick,
                local_pos: crate::math::Vec3::default(),
                view_proj: crate::math::Mat4::IDENTITY,
                crosshair_entity: -1,
                entities: truth
                    .iter()
                    .map(|t| crate::cheats::SnapshotEntity { pos: t.pos, team: t.team, alive: t.alive })
                    .collect(),
            };
            let expected = radar_frame(&snapshot, RadarMode::Absolute);
            for (i, truth_dot) in expected.dots.iter().enumerate() {
                match frame.shapes.get(i) {
                    Some(dot) => {
                        let dx = dot.x as f64 - truth_dot.x as f64;
                        let dy = dot.y as f64 - truth_dot.y as f64;
                        total_error += (dx * dx + dy * dy).sqrt();
                    }
                    None => total_error += half_diagonal,
                }
                samples += 1;
            }
        }
        if tick < max_tick {
            game.tick(&mut guest, &mut input)?;
        }
    }
    if samples == 0 {
        return Err(SimError::BadReport("ground truth produced no dots".into()));
    }
    Ok(total_error / samples as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles_interpolate() {
        let sorted = vec![1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&sorted, 0.0), 1.0);
        assert_eq!(quantile(&sorted, 1.0), 4.0);
        assert_eq!(quantile(&sorted, 0.5), 2.5);
        assert_eq!(quantile(&sorted, 0.25), 1.75);
    }

    #[test]
    fn diff_of_identical_reports_is_zero() {
        let mut scenario = Scenario::new(ScenarioKind::Benchmark);
        scenario.session_seconds = 3;
        scenario.repetitions = 1;
        scenario.config.players = 2;
        let report = run_scenario(&scenario).unwrap();
        let diff = diff_report(&report, &report).unwrap();
        assert_eq!(diff.mean, 0.0);
        assert!(diff.series.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn diff_sign_convention_baseline_minus_cheat() {
        let mut scenario = Scenario::new(ScenarioKind::Benchmark);
        scenario.session_seconds = 2;
        scenario.repetitions = 1;
        scenario.config.players = 2;
        let baseline = run_scenario(&scenario).unwrap();
        let mut cheat = baseline.clone();
        for v in &mut cheat.tick_rate_avg {
            *v -= 3.0;
        }
        let diff = diff_report(&cheat, &baseline).unwrap();
        assert_eq!(diff.mean, 3.0);
    }

    #[test]
    fn mismatched_lengths_error() {
        let mut scenario = Scenario::new(ScenarioKind::Benchmark);
        scenario.session_seconds = 2;
        scenario.repetitions = 1;
        scenario.config.players = 2;
        let a = run_scenario(&scenario).unwrap();
        scenario.session_seconds = 3;
        let b = run_scenario(&scenario).unwrap();
        assert!(matches!(diff_report(&a, &b), Err(SimError::LengthMismatch { .. })));
    }

    #[test]
    fn benchmark_holds_nominal_rate() {
        let mut scenario = Scenario::new(ScenarioKind::Benchmark);
        scenario.session_seconds = 5;
        scenario.repetitions = 2;
        scenario.config.players = 8;
        let report = run_scenario(&scenario).unwrap();
        for series in &report.tick_rate_per_rep {
            assert!(series.iter().all(|&t| t == 60), "series {series:?}");
        }
        assert_eq!(report.total_events_per_rep, vec![0, 0]);
    }
}
