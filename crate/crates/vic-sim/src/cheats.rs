//! The three introspection cheats, built purely on the VMI session and the
//! input channel: a 2-D radar, a wall-hack overlay, and a trigger-bot in
//! polling and page-guard flavours.
//!
//! The runtime has the classic two-task shape: a reader task snapshots game
//! state from guest memory on a poll interval, an overlay task renders the
//! latest snapshot into a frame log. The overlay task never touches guest
//! memory, only snapshots. Fire commands are realized as synthetic input by
//! default; the deliberately careless `unsafe_memory_fire` mode writes the
//! primary fire state directly and leaves the shadow copy behind for the
//! anti-cheat to find.

use std::cell::RefCell;
use std::io::{BufWriter, Write};
use std::rc::Rc;

use serde::Serialize;

use crate::error::{Result, SimError};
use crate::game::{self, GameLayout};
use crate::input::{InputOrigin, InputPayload, MouseButton};
use crate::math::{entity_screen_rect, project_to_screen, Mat4, Vec3};
use crate::paging::GuestVirtAddr;
use crate::vmi::{SessionTask, VmiSession, WatchHandle};

pub const RADAR_SIZE: u16 = 256;

// Entity record field offsets within one stride, part of the published
// layout contract.
pub const ENTITY_POS_OFFSET: u64 = 0;
pub const ENTITY_TEAM_OFFSET: u64 = 24;
pub const ENTITY_ALIVE_OFFSET: u64 = 25;

/// How radar coordinates are anchored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RadarMode {
    #[default]
    Absolute,
    PlayerRelative,
}

/// Linear world-to-radar projection with y-flip and clamping. The f32 stage
/// before rounding/clamping is exposed for the affine-map property tests.
pub fn radar_project_f(
    world_xy: (f32, f32),
    map_half_extent: f32,
    radar: (u16, u16),
    mode: RadarMode,
    player_xy: (f32, f32),
) -> (f32, f32) {
    let (ox, oy) = match mode {
        RadarMode::Absolute => (0.0, 0.0),
        RadarMode::PlayerRelative => player_xy,
    };
    let rx = world_xy.0 - ox;
    let ry = world_xy.1 - oy;
    let span = 2.0 * map_half_extent;
    (
        (rx + map_half_extent) / span * radar.0 as f32,
        (map_half_extent - ry) / span * radar.1 as f32,
    )
}

pub fn radar_project(
    world_xy: (f32, f32),
    map_half_extent: f32,
    radar: (u16, u16),
    mode: RadarMode,
    player_xy: (f32, f32),
) -> (u16, u16) {
    let (fx, fy) = radar_project_f(world_xy, map_half_extent, radar, mode, player_xy);
    // `as` saturates (NaN -> 0), so garbage world coordinates still land on
    // the radar instead of panicking.
    let px = (fx.floor() as i64).clamp(0, radar.0 as i64 - 1) as u16;
    let py = (fy.floor() as i64).clamp(0, radar.1 as i64 - 1) as u16;
    (px, py)
}

/// World point to screen pixels through a world-to-clip matrix. `Ok(None)`
/// means behind the camera.
pub fn world_to_screen(point: Vec3, view_proj: &Mat4, screen: (f32, f32)) -> Result<Option<(f32, f32)>> {
    if !view_proj.is_finite() {
        return Err(SimError::InvalidMatrix);
    }
    Ok(project_to_screen(point, view_proj, screen))
}

/// One entity as captured by the reader task.
#[derive(Debug, Clone, Copy)]
pub struct SnapshotEntity {
    pub pos: Vec3,
    pub team: u8,
    pub alive: bool,
}

/// Immutable game state captured in one reader pass; the hand-off value
/// between the reader and overlay tasks.
#[derive(Debug, Clone)]
pub struct GameSnapshot {
    pub tick: u64,
    pub local_pos: Vec3,
    pub view_proj: Mat4,
    pub crosshair_entity: i32,
    pub entities: Vec<SnapshotEntity>,
}

/// Build a snapshot via host reads. Header reads that land on unmapped
/// pages surface as [`SimError::StaleOffsets`]; a garbage entity-list
/// pointer (the memory-encryption case) degrades to an empty entity list
/// rather than an error.
pub fn build_snapshot(session: &mut VmiSession, layout: &GameLayout) -> Result<GameSnapshot> {
    let process = "toygame";
    let stale = |e: SimError| match e {
        SimError::PageNotPresent { gva, level } => {
            SimError::StaleOffsets(format!("gva {gva:#x} unmapped at level {level}"))
        }
        other => other,
    };
    let tick = session.sandbox().current_tick()?;
    let base = layout.base;
    let lp = session
        .read(process, base.add(layout.local_player_offset), 12)
        .map_err(stale)?;
    let local_pos = Vec3::new(
        f32::from_le_bytes(lp[0..4].try_into().unwrap()),
        f32::from_le_bytes(lp[4..8].try_into().unwrap()),
        f32::from_le_bytes(lp[8..12].try_into().unwrap()),
    );
    let vp_bytes = session
        .read(process, base.add(layout.view_proj_matrix_offset), 64)
        .map_err(stale)?;
    let mut vp = [0f32; 16];
    for (i, chunk) in vp_bytes.chunks_exact(4).enumerate() {
        vp[i] = f32::from_le_bytes(chunk.try_into().unwrap());
    }
    let crosshair = i32::from_le_bytes(
        session
            .read(process, base.add(layout.crosshair_entity_offset), 4)
            .map_err(stale)?
            .try_into()
            .unwrap(),
    );
    let count = u32::from_le_bytes(
        session
            .read(process, base.add(layout.entity_count_offset), 4)
            .map_err(stale)?
            .try_into()
            .unwrap(),
    )
    .min(layout.max_entities);
    let list_gva = u64::from_le_bytes(
        session
            .read(process, base.add(layout.entity_list_addr_offset), 8)
            .map_err(stale)?
            .try_into()
            .unwrap(),
    );
    let mut entities = Vec::new();
    if GuestVirtAddr(list_gva).is_canonical() {
        for i in 0..count {
            let rec_gva = GuestVirtAddr(list_gva).add(i as u64 * layout.entity_stride);
            match session.read(process, rec_gva, 32) {
                Ok(rec) => entities.push(SnapshotEntity {
                    pos: Vec3::new(
                        f32::from_le_bytes(rec[0..4].try_into().unwrap()),
                        f32::from_le_bytes(rec[4..8].try_into().unwrap()),
                        f32::from_le_bytes(rec[8..12].try_into().unwrap()),
                    ),
                    team: rec[ENTITY_TEAM_OFFSET as usize],
                    alive: rec[ENTITY_ALIVE_OFFSET as usize] == 1,
                }),
                Err(_) => {
                    entities.clear();
                    break;
                }
            }
        }
    }
    Ok(GameSnapshot { tick, local_pos, view_proj: Mat4(vp), crosshair_entity: crosshair, entities })
}

// ----------------------------------------------------------------------
// Frames and the overlay sink
// ----------------------------------------------------------------------

#[derive(Debug, Clone, Copy, Serialize, PartialEq)]
pub struct RadarDot {
    pub x: u16,
    pub y: u16,
    pub team: &'static str,
}

#[derive(Debug, Clone, Serialize)]
pub struct RadarFrame {
    pub tick: u64,
    pub width: u16,
    pub height: u16,
    pub dots: Vec<RadarDot>,
}

#[derive(Debug, Clone, Copy, Serialize, PartialEq)]
pub struct OverlayRect {
    pub x: f32,
    pub y: f32,
    pub w: f32,
    pub h: f32,
    pub color: &'static str,
}

#[derive(Debug, Clone, Serialize)]
pub struct OverlayFrame {
    pub tick: u64,
    pub shapes: Vec<OverlayRect>,
}

fn team_tag(team: u8) -> &'static str {
    if team == 1 {
        "enemy"
    } else {
        "ally"
    }
}

fn team_color(team: u8) -> &'static str {
    if team == 1 {
        "red"
    } else {
        "blue"
    }
}

/// Radar frame: every alive entity projected onto the minimap.
pub fn radar_frame(snapshot: &GameSnapshot, mode: RadarMode) -> RadarFrame {
    let player = (snapshot.local_pos.x, snapshot.local_pos.y);
    let dots = snapshot
        .entities
        .iter()
        .filter(|e| e.alive)
        .map(|e| {
            let (x, y) = radar_project(
                (e.pos.x, e.pos.y),
                game::MAP_HALF_EXTENT,
                (RADAR_SIZE, RADAR_SIZE),
                mode,
                player,
            );
            RadarDot { x, y, team: team_tag(e.team) }
        })
        .collect();
    RadarFrame { tick: snapshot.tick, width: RADAR_SIZE, height: RADAR_SIZE, dots }
}

/// Wall-hack frame: a clipped rectangle around every alive entity with an
/// on-screen projection, enemies red, allies blue. Occlusion is the whole
/// point: all entities project, walls or not.
pub fn wallhack_frame(snapshot: &GameSnapshot, screen: (f32, f32)) -> Result<OverlayFrame> {
    if !snapshot.view_proj.is_finite() {
        return Err(SimError::InvalidMatrix);
    }
    let mut shapes = Vec::new();
    for e in snapshot.entities.iter().filter(|e| e.alive) {
        if let Some(rect) = entity_screen_rect(e.pos, game::ENTITY_HEIGHT, &snapshot.view_proj, screen)
        {
            if let Some(clipped) = rect.clipped(screen) {
                shapes.push(OverlayRect {
                    x: clipped.x,
                    y: clipped.y,
                    w: clipped.w,
                    h: clipped.h,
                    color: team_color(e.team),
                });
            }
        }
    }
    Ok(OverlayFrame { tick: snapshot.tick, shapes })
}

/// The screen-overlap fallback predicate: the entity index under the
/// crosshair judged purely from the snapshot, mirroring what the in-game
/// raycast stores.
pub fn on_target_by_overlap(snapshot: &GameSnapshot, screen: (f32, f32)) -> i32 {
    let center = (screen.0 * 0.5, screen.1 * 0.5);
    let mut best = -1i32;
    let mut best_depth = f32::INFINITY;
    for (i, e) in snapshot.entities.iter().enumerate() {
        if !e.alive {
            continue;
        }
        if let Some(rect) = entity_screen_rect(e.pos, game::ENTITY_HEIGHT, &snapshot.view_proj, screen)
        {
            if rect.contains(center.0, center.1) {
                let depth = snapshot.view_proj.transform(e.pos, 1.0)[3];
                if depth < best_depth {
                    best_depth = depth;
                    best = i as i32;
                }
            }
        }
    }
    best
}

/// Destination for rendered frames: one JSON object per line.
pub trait OverlaySink {
    fn push_line(&mut self, line: &str) -> Result<()>;
}

impl<T: OverlaySink + ?Sized> OverlaySink for Box<T> {
    fn push_line(&mut self, line: &str) -> Result<()> {
        (**self).push_line(line)
    }
}

pub struct FileSink {
    writer: BufWriter<std::fs::File>,
}

impl FileSink {
    pub fn create(path: &std::path::Path) -> Result<FileSink> {
        Ok(FileSink { writer: BufWriter::new(std::fs::File::create(path)?) })
    }
}

impl OverlaySink for FileSink {
    fn push_line(&mut self, line: &str) -> Result<()> {
        writeln!(self.writer, "{line}")?;
        Ok(())
    }
}

impl Drop for FileSink {
    fn drop(&mut self) {
        let _ = self.writer.flush();
    }
}

#[derive(Debug, Default)]
pub struct MemorySink {
    pub lines: Vec<String>,
}

impl OverlaySink for MemorySink {
    fn push_line(&mut self, line: &str) -> Result<()> {
        self.lines.push(line.to_string());
        Ok(())
    }
}

pub struct NullSink;

impl OverlaySink for NullSink {
    fn push_line(&mut self, _line: &str) -> Result<()> {
        Ok(())
    }
}

#[derive(Serialize)]
struct FrameLine<'a, T: Serialize> {
    tick: u64,
    kind: &'a str,
    shapes: &'a [T],
}

fn radar_line(frame: &RadarFrame) -> String {
    serde_json::to_string(&FrameLine { tick: frame.tick, kind: "radar", shapes: &frame.dots })
        .expect("frame serializes")
}

fn wallhack_line(frame: &OverlayFrame) -> String {
    serde_json::to_string(&FrameLine { tick: frame.tick, kind: "wallhack", shapes: &frame.shapes })
        .expect("frame serializes")
}

// ----------------------------------------------------------------------
// Trigger-bot
// ----------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FireAction {
    Start,
    Stop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct FireCommand {
    pub action: FireAction,
    pub issued_at: u64,
}

/// Alternating start/stop state machine: `Start` exactly when an alive
/// enemy comes under the crosshair, `Stop` exactly when it leaves.
#[derive(Debug, Default)]
pub struct TriggerState {
    pub firing: bool,
}

impl TriggerState {
    pub fn decide(&mut self, on_enemy: bool) -> Option<FireAction> {
        match (on_enemy, self.firing) {
            (true, false) => {
                self.firing = true;
                Some(FireAction::Start)
            }
            (false, true) => {
                self.firing = false;
                Some(FireAction::Stop)
            }
            _ => None,
        }
    }
}

fn is_alive_enemy(session: &mut VmiSession, layout: &GameLayout, index: i32) -> Result<bool> {
    if index < 0 || index as u32 >= layout.max_entities {
        return Ok(false);
    }
    let list_gva = u64::from_le_bytes(
        session
            .read("toygame", layout.base.add(layout.entity_list_addr_offset), 8)?
            .try_into()
            .unwrap(),
    );
    let rec = GuestVirtAddr(list_gva).add(index as u64 * layout.entity_stride);
    let team = session.read("toygame", rec.add(ENTITY_TEAM_OFFSET), 1)?[0];
    let alive = session.read("toygame", rec.add(ENTITY_ALIVE_OFFSET), 1)?[0];
    Ok(team == 1 && alive == 1)
}

/// One polling-loop iteration: read the crosshair, compare against the
/// current fire state, emit at most one command.
pub fn triggerbot_poll_step(
    session: &mut VmiSession,
    layout: &GameLayout,
    state: &mut TriggerState,
) -> Result<Option<FireCommand>> {
    let stale = |e: SimError| match e {
        SimError::PageNotPresent { gva, level } => {
            SimError::StaleOffsets(format!("gva {gva:#x} unmapped at level {level}"))
        }
        other => other,
    };
    let crosshair = i32::from_le_bytes(
        session
            .read("toygame", layout.base.add(layout.crosshair_entity_offset), 4)
            .map_err(stale)?
            .try_into()
            .unwrap(),
    );
    let on_enemy = is_alive_enemy(session, layout, crosshair).map_err(stale)?;
    let tick = session.sandbox().current_tick()?;
    Ok(state.decide(on_enemy).map(|action| FireCommand { action, issued_at: tick }))
}

/// Crosshair values captured by the page-guard callback, waiting for the
/// pump to act on them outside the trap context.
pub type PendingTriggerValues = Rc<RefCell<Vec<i32>>>;

/// Register the page-guard watch on the crosshair address. The callback
/// only records the new value; the runtime turns values into commands at
/// the next tick boundary.
pub fn triggerbot_event_setup(
    session: &mut VmiSession,
    layout: &GameLayout,
    pending: PendingTriggerValues,
    use_spp: bool,
) -> Result<WatchHandle> {
    session.register_watch(
        "toygame",
        layout.base.add(layout.crosshair_entity_offset),
        4,
        Box::new(move |ev| {
            if let Some(new) = &ev.new_value {
                if new.len() == 4 {
                    pending
                        .borrow_mut()
                        .push(i32::from_le_bytes(new[..4].try_into().unwrap()));
                }
            }
        }),
        use_spp,
    )
}

// ----------------------------------------------------------------------
// The two-task cheat runtime
// ----------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheatKind {
    Radar,
    Wallhack,
    TriggerbotPoll,
    TriggerbotEvent,
}

#[derive(Debug, Clone)]
pub struct CheatRunConfig {
    pub kind: CheatKind,
    /// Reader/overlay cadence in simulated milliseconds.
    pub poll_interval_ms: u64,
    pub radar_mode: RadarMode,
    /// Realize fire commands by writing the primary fire state instead of
    /// injecting input. Detectably sloppy; exists so the redundancy check
    /// has something to catch.
    pub unsafe_memory_fire: bool,
    /// Narrow the event trigger-bot's guard with a sub-page bitmap.
    pub use_spp: bool,
}

impl CheatRunConfig {
    pub fn new(kind: CheatKind) -> Self {
        CheatRunConfig {
            kind,
            poll_interval_ms: 16,
            radar_mode: RadarMode::Absolute,
            unsafe_memory_fire: false,
            use_spp: false,
        }
    }
}

#[derive(Debug, Default, Clone)]
pub struct CheatTelemetry {
    pub snapshots_built: u64,
    pub frames_emitted: u64,
    pub commands: Vec<FireCommand>,
    /// Guest-memory reads issued from the overlay task; stays zero by
    /// construction.
    pub overlay_direct_reads: u64,
}

/// Reader + overlay tasks scheduled between game ticks on the simulation
/// clock. Drive with `pre_tick` / `post_tick` around each `Sandbox::tick`.
pub struct CheatRuntime<'s, S: OverlaySink> {
    session: &'s mut VmiSession,
    layout: GameLayout,
    cfg: CheatRunConfig,
    sink: S,
    interval_ns: u64,
    next_reader_ns: u64,
    next_overlay_ns: u64,
    latest: Option<GameSnapshot>,
    trigger: TriggerState,
    pending: PendingTriggerValues,
    watch: Option<WatchHandle>,
    pub telemetry: CheatTelemetry,
}

impl<'s, S: OverlaySink> CheatRuntime<'s, S> {
    pub fn new(session: &'s mut VmiSession, cfg: CheatRunConfig, sink: S) -> Result<Self> {
        let layout = session.sandbox().layout()?;
        let pending: PendingTriggerValues = Rc::new(RefCell::new(Vec::new()));
        let watch = if cfg.kind == CheatKind::TriggerbotEvent {
            Some(triggerbot_event_setup(session, &layout, pending.clone(), cfg.use_spp)?)
        } else {
            None
        };
        let start = session.sandbox().clock_ns()?;
        let interval_ns = cfg.poll_interval_ms * 1_000_000;
        Ok(CheatRuntime {
            session,
            layout,
            cfg,
            sink,
            interval_ns,
            next_reader_ns: start,
            next_overlay_ns: start,
            latest: None,
            trigger: TriggerState::default(),
            pending,
            watch,
            telemetry: CheatTelemetry::default(),
        })
    }

    fn has_overlay(&self) -> bool {
        matches!(self.cfg.kind, CheatKind::Radar | CheatKind::Wallhack)
    }

    fn realize(&mut self, command: FireCommand) -> Result<()> {
        if self.cfg.unsafe_memory_fire {
            // Write only the primary copy; the shadow copy is exactly the
            // trap a dual-stored state sets for memory writers.
            let addr = self.layout.base.add(self.layout.fire_state_primary_offset);
            let value = (command.action == FireAction::Start) as u32;
            self.session.write("toygame", addr, &value.to_le_bytes())?;
        } else {
            self.session.sandbox().inject(
                InputPayload::Button {
                    button: MouseButton::Left,
                    down: command.action == FireAction::Start,
                },
                InputOrigin::Synthetic,
            )?;
        }
        self.telemetry.commands.push(command);
        Ok(())
    }

    fn run_reader(&mut self) -> Result<()> {
        self.session.set_task(SessionTask::Reader);
        match self.cfg.kind {
            CheatKind::Radar | CheatKind::Wallhack => {
                let snap = build_snapshot(self.session, &self.layout)?;
                self.telemetry.snapshots_built += 1;
                self.latest = Some(snap);
            }
            CheatKind::TriggerbotPoll => {
                self.telemetry.snapshots_built += 1;
                let mut state = std::mem::take(&mut self.trigger);
                let cmd = triggerbot_poll_step(self.session, &self.layout, &mut state)?;
                self.trigger = state;
                if let Some(cmd) = cmd {
                    self.realize(cmd)?;
                }
            }
            CheatKind::TriggerbotEvent => {}
        }
        self.session.set_task(SessionTask::Control);
        Ok(())
    }

    fn run_overlay(&mut self) -> Result<()> {
        if !self.has_overlay() {
            return Ok(());
        }
        self.session.set_task(SessionTask::Overlay);
        let reads_before = self.session.telemetry.overlay_reads;
        if let Some(snap) = &self.latest {
            let line = match self.cfg.kind {
                CheatKind::Radar => radar_line(&radar_frame(snap, self.cfg.radar_mode)),
                CheatKind::Wallhack => {
                    wallhack_line(&wallhack_frame(snap, (game::SCREEN_W, game::SCREEN_H))?)
                }
                _ => unreachable!(),
            };
            self.sink.push_line(&line)?;
            self.telemetry.frames_emitted += 1;
        }
        self.telemetry.overlay_direct_reads += self.session.telemetry.overlay_reads - reads_before;
        self.session.set_task(SessionTask::Control);
        Ok(())
    }

    /// Run every task whose scheduled time has arrived. Call before each
    /// game tick.
    pub fn pre_tick(&mut self) -> Result<()> {
        let clock = self.session.sandbox().clock_ns()?;
        while self.next_reader_ns <= clock {
            self.run_reader()?;
            self.next_reader_ns += self.interval_ns;
        }
        while self.next_overlay_ns <= clock {
            self.run_overlay()?;
            self.next_overlay_ns += self.interval_ns;
        }
        Ok(())
    }

    /// Act on page-guard deliveries. Call after each game tick.
    pub fn post_tick(&mut self) -> Result<()> {
        let _ = self.session.sandbox().with_sim(|sim| sim.guest.drain_deliveries())?;
        if self.cfg.kind != CheatKind::TriggerbotEvent {
            return Ok(());
        }
        let values: Vec<i32> = self.pending.borrow_mut().drain(..).collect();
        if let Some(latest) = values.last().copied() {
            let on_enemy = is_alive_enemy(self.session, &self.layout, latest)?;
            if let Some(action) = self.trigger.decide(on_enemy) {
                let issued_at = self.session.sandbox().current_tick()?;
                self.realize(FireCommand { action, issued_at })?;
            }
        }
        Ok(())
    }

    /// Tear down the watch and return the telemetry.
    pub fn finish(mut self) -> Result<CheatTelemetry> {
        if let Some(watch) = self.watch.take() {
            self.session.unregister_watch(&watch)?;
        }
        Ok(self.telemetry)
    }
}

/// Run a cheat for `duration_ticks` game ticks and return its telemetry.
pub fn cheat_run<S: OverlaySink>(
    session: &mut VmiSession,
    cfg: CheatRunConfig,
    sink: S,
    duration_ticks: u64,
) -> Result<CheatTelemetry> {
    let mut runtime = CheatRuntime::new(session, cfg, sink)?;
    for _ in 0..duration_ticks {
        runtime.pre_tick()?;
        runtime.session.sandbox().tick()?;
        runtime.post_tick()?;
    }
    runtime.finish()
}
