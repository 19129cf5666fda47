//! The toy FPS living in guest memory: a deterministic, scriptable cheat
//! target whose whole state sits behind published offsets.
//!
//! Layout (offsets from `base`, all little-endian):
//!
//! ```text
//! 0x000 frame_counter   u32
//! 0x008 entity_count    u32
//! 0x010 entity_list_ptr u64   gva of the entity array (one indirection)
//! 0x080 crosshair       i32   ray-traced hit entity index, -1 = none
//! 0x100 fire_primary    u32   dual-stored fire state
//! 0x104 fire_shadow     u32   mirrored from primary every tick
//! 0x140 local player    pos 3xf32, yaw f32, pitch f32
//! 0x1C0 code word       u32   executed once per tick under colocation
//! 0x200 view_proj       16xf32 column-major
//! 0x400 entities        32 records x 96 bytes (fills the page exactly)
//! ```
//!
//! A second page at `base + 0x1000` holds per-tick render scratch. With the
//! huge-pages mitigation both pages live inside one 2 MiB mapping, so a page
//! guard anywhere in the game state covers the scratch traffic too.
//!
//! Entity motion is a closed-form walk along seeded piecewise-linear
//! waypoint loops, which keeps an independent test oracle trivial. The
//! engine touches state field by field every tick (the realistic compiled
//! access pattern); that per-field traffic is exactly what a page guard on
//! the hot frame ends up trapping.

use std::io::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::anticheat::{self, ProbeReport};
use crate::error::{Result, SimError};
use crate::guest::{Guest, TickOutcome};
use crate::input::{InputPayload, InputQueue, KeyCode, MouseButton};
use crate::math::{camera_basis, entity_screen_rect, Mat4, Vec3};
use crate::paging::{GuestVirtAddr, PageSize, Perms, ProcessContext};

pub const SCREEN_W: f32 = 1280.0;
pub const SCREEN_H: f32 = 720.0;
pub const VFOV_RADIANS: f32 = std::f32::consts::FRAC_PI_2;
pub const NEAR_PLANE: f32 = 0.1;
pub const FAR_PLANE: f32 = 10_000.0;
pub const EYE_HEIGHT: f32 = 60.0;
pub const ENTITY_HEIGHT: f32 = 72.0;
pub const MAP_HALF_EXTENT: f32 = 4096.0;
pub const MOVE_SPEED: f32 = 300.0;
pub const MOUSE_SENSITIVITY: f32 = 0.002;
pub const WEAPON_DAMAGE: i32 = 5;
pub const RESPAWN_TICKS: i32 = 90;
pub const MAX_ENTITIES: u32 = 32;
pub const ENTITY_STRIDE: u64 = 96;

pub const GAME_BASE: u64 = 0x4000_0000;

// Header offsets.
const OFF_FRAME_COUNTER: u64 = 0x000;
const OFF_ENTITY_COUNT: u64 = 0x008;
const OFF_ENTITY_LIST_PTR: u64 = 0x010;
const OFF_CROSSHAIR: u64 = 0x080;
const OFF_FIRE_PRIMARY: u64 = 0x100;
const OFF_FIRE_SHADOW: u64 = 0x104;
const OFF_LOCAL_PLAYER: u64 = 0x140;
const OFF_CODE_WORD: u64 = 0x1C0;
const OFF_VIEW_PROJ: u64 = 0x200;
const OFF_ENTITIES: u64 = 0x400;
const SCRATCH_PAGE: u64 = 0x1000;
const OFF_SCRATCH_COUNTER: u64 = SCRATCH_PAGE;
const OFF_SCRATCH_BBOX: u64 = SCRATCH_PAGE + 0x40;

// Entity record field offsets.
const ENT_POS: u64 = 0;
const ENT_VEL: u64 = 12;
const ENT_TEAM: u64 = 24;
const ENT_ALIVE: u64 = 25;
const ENT_WAYPOINT: u64 = 26;
const ENT_HEALTH: u64 = 28;
const ENT_TRANSFORM: u64 = 32;

/// The offsets contract shared with the cheats.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GameLayout {
    pub base: GuestVirtAddr,
    pub entity_list_addr_offset: u64,
    pub entity_count_offset: u64,
    pub local_player_offset: u64,
    pub view_proj_matrix_offset: u64,
    pub crosshair_entity_offset: u64,
    pub fire_state_primary_offset: u64,
    pub fire_state_shadow_offset: u64,
    pub frame_counter_offset: u64,
    pub entity_stride: u64,
    pub max_entities: u32,
}

impl GameLayout {
    fn standard() -> Self {
        GameLayout {
            base: GuestVirtAddr(GAME_BASE),
            entity_list_addr_offset: OFF_ENTITY_LIST_PTR,
            entity_count_offset: OFF_ENTITY_COUNT,
            local_player_offset: OFF_LOCAL_PLAYER,
            view_proj_matrix_offset: OFF_VIEW_PROJ,
            crosshair_entity_offset: OFF_CROSSHAIR,
            fire_state_primary_offset: OFF_FIRE_PRIMARY,
            fire_state_shadow_offset: OFF_FIRE_SHADOW,
            frame_counter_offset: OFF_FRAME_COUNTER,
            entity_stride: ENTITY_STRIDE,
            max_entities: MAX_ENTITIES,
        }
    }

    /// Serialize as `key = 0xHEX` lines in a fixed order.
    pub fn to_offsets_string(&self) -> String {
        let mut out = String::new();
        let mut push = |k: &str, v: u64| out.push_str(&format!("{k} = {v:#x}\n"));
        push("base", self.base.0);
        push("entity_list_addr", self.entity_list_addr_offset);
        push("entity_count", self.entity_count_offset);
        push("local_player", self.local_player_offset);
        push("view_proj_matrix", self.view_proj_matrix_offset);
        push("crosshair_entity", self.crosshair_entity_offset);
        push("fire_state_primary", self.fire_state_primary_offset);
        push("fire_state_shadow", self.fire_state_shadow_offset);
        push("frame_counter", self.frame_counter_offset);
        push("entity_stride", self.entity_stride);
        push("max_entities", self.max_entities as u64);
        out
    }

    pub fn export(&self, path: &Path) -> Result<()> {
        let mut file = std::fs::File::create(path)?;
        file.write_all(self.to_offsets_string().as_bytes())?;
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs = std::collections::BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| SimError::BadOffsetsLine {
                line: i + 1,
                reason: "expected `key = value`".into(),
            })?;
            let value = value.trim();
            let value = value.strip_prefix("0x").ok_or_else(|| SimError::BadOffsetsLine {
                line: i + 1,
                reason: "value must be hex with 0x prefix".into(),
            })?;
            let parsed = u64::from_str_radix(value, 16).map_err(|e| SimError::BadOffsetsLine {
                line: i + 1,
                reason: e.to_string(),
            })?;
            pairs.insert(key.trim().to_string(), parsed);
        }
        let need = |k: &'static str| pairs.get(k).copied().ok_or(SimError::MissingOffsetKey(k));
        Ok(GameLayout {
            base: GuestVirtAddr(need("base")?),
            entity_list_addr_offset: need("entity_list_addr")?,
            entity_count_offset: need("entity_count")?,
            local_player_offset: need("local_player")?,
            view_proj_matrix_offset: need("view_proj_matrix")?,
            crosshair_entity_offset: need("crosshair_entity")?,
            fire_state_primary_offset: need("fire_state_primary")?,
            fire_state_shadow_offset: need("fire_state_shadow")?,
            frame_counter_offset: need("frame_counter")?,
            entity_stride: need("entity_stride")?,
            max_entities: need("max_entities")? as u32,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

/// Per-tick time accounting: the single performance law is
/// `achieved = min(nominal, 1e9 / (work_ns + event_cost_ns))`.
#[derive(Debug, Clone, Copy)]
pub struct TickBudget {
    pub nominal_rate: u32,
    pub work_ns: u64,
}

impl TickBudget {
    pub fn budget_ns(&self) -> u64 {
        1_000_000_000 / self.nominal_rate as u64
    }

    pub fn achieved_rate(&self, event_cost_ns: u64) -> f64 {
        let cost = self.work_ns + event_cost_ns;
        (self.nominal_rate as f64).min(1e9 / cost as f64)
    }
}

#[derive(Debug, Clone)]
pub struct GameConfig {
    pub players: u32,
    pub seed: u64,
    pub nominal_tick_rate: u32,
    /// Base simulation work per tick, microseconds.
    pub work_us: u64,
    pub huge_pages: bool,
    pub colocate_code_data: bool,
    pub memory_encryption: bool,
    /// In-guest anti-cheat probe cadence in ticks; 0 disables probes.
    pub probe_interval_ticks: u64,
}

impl Default for GameConfig {
    fn default() -> Self {
        GameConfig {
            players: 24,
            seed: 7,
            nominal_tick_rate: 60,
            work_us: 2_000,
            huge_pages: false,
            colocate_code_data: false,
            memory_encryption: false,
            probe_interval_ticks: 60,
        }
    }
}

#[derive(Debug, Clone)]
struct WaypointLoop {
    points: Vec<Vec3>,
    speed: f32,
    perimeter: f32,
}

impl WaypointLoop {
    fn new(points: Vec<Vec3>, speed: f32) -> Self {
        let mut perimeter = 0.0;
        for i in 0..points.len() {
            let next = points[(i + 1) % points.len()];
            perimeter += next.sub(points[i]).length();
        }
        WaypointLoop { points, speed, perimeter }
    }

    /// Closed-form position after `ticks` ticks of `dt` seconds each:
    /// distance travelled modulo the loop perimeter, walked segment by
    /// segment. Returns (position, segment index, segment direction).
    fn sample(&self, ticks: u64, dt: f32) -> (Vec3, u16, Vec3) {
        let travelled = (self.speed as f64 * dt as f64 * ticks as f64) % self.perimeter as f64;
        let mut remaining = travelled as f32;
        let n = self.points.len();
        for i in 0..n {
            let a = self.points[i];
            let b = self.points[(i + 1) % n];
            let seg = b.sub(a);
            let len = seg.length();
            if remaining <= len {
                let dir = seg.normalized();
                return (a.add(dir.scale(remaining)), i as u16, dir);
            }
            remaining -= len;
        }
        (self.points[0], 0, Vec3::new(1.0, 0.0, 0.0))
    }
}

/// Generate the waypoint script for entity `index`. Entity 1 always patrols
/// a fixed rectangle crossing the local player's forward axis so that
/// trigger-bot scenarios have a guaranteed crossing enemy.
fn waypoint_loop(seed: u64, index: u32) -> WaypointLoop {
    if index == 1 {
        return WaypointLoop::new(
            vec![
                Vec3::new(600.0, -300.0, 0.0),
                Vec3::new(600.0, 300.0, 0.0),
                Vec3::new(800.0, 300.0, 0.0),
                Vec3::new(800.0, -300.0, 0.0),
            ],
            150.0,
        );
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9).wrapping_add(index as u64));
    let count = rng.gen_range(4..=6);
    let mut points = Vec::with_capacity(count);
    for _ in 0..count {
        let x = rng.gen_range(-3500.0f32..3500.0);
        let y = rng.gen_range(-3500.0f32..3500.0);
        points.push(Vec3::new(x, y, 0.0));
    }
    let speed = rng.gen_range(80.0f32..240.0);
    WaypointLoop::new(points, speed)
}

#[derive(Debug, Default, Clone, Copy)]
struct HeldKeys {
    w: bool,
    a: bool,
    s: bool,
    d: bool,
}

/// The running game instance (host-side engine state; all gameplay state
/// proper lives in guest memory).
pub struct Game {
    pub layout: GameLayout,
    pub config: GameConfig,
    pub process: ProcessContext,
    pub budget: TickBudget,
    data_base_gfn: u64,
    waypoints: Vec<WaypointLoop>,
    held: HeldKeys,
    view_proj: Mat4,
    /// Redundancy-check outcome of the most recent tick.
    pub last_redundancy_mismatch: bool,
    /// Latched until the next scheduled probe reports it.
    mismatch_since_last_probe: bool,
    pub redundancy_mismatch_count: u64,
    pub first_redundancy_mismatch_tick: Option<u64>,
    pub probe_reports: Vec<ProbeReport>,
}

impl Game {
    /// Allocate and map game memory, write the initial state, and return the
    /// engine. With `huge_pages` the state lives inside a single 2 MiB
    /// mapping; with `colocate_code_data` the hot frame also hosts an
    /// instruction word executed every tick.
    pub fn init(guest: &mut Guest, config: GameConfig) -> Result<Game> {
        assert!(config.players <= MAX_ENTITIES, "player count exceeds the entity table");
        let process = guest.create_process("toygame")?;
        let base = GuestVirtAddr(GAME_BASE);
        let data_gpa = if config.huge_pages {
            let gpa = guest.alloc_frame(PageSize::Size2M)?;
            guest.map_page(&process, base, gpa, PageSize::Size2M, Perms::RWX)?;
            gpa
        } else {
            let hot = guest.alloc_frame(PageSize::Size4K)?;
            let scratch = guest.alloc_frame(PageSize::Size4K)?;
            guest.map_page(&process, base, hot, PageSize::Size4K, Perms::RWX)?;
            guest.map_page(&process, base.add(SCRATCH_PAGE), scratch, PageSize::Size4K, Perms::RWX)?;
            hot
        };

        let waypoints = (0..config.players).map(|i| waypoint_loop(config.seed, i)).collect();
        let budget = TickBudget {
            nominal_rate: config.nominal_tick_rate,
            work_ns: config.work_us * 1_000,
        };
        let mut game = Game {
            layout: GameLayout::standard(),
            process,
            budget,
            data_base_gfn: data_gpa.gfn(),
            waypoints,
            held: HeldKeys::default(),
            view_proj: Mat4::IDENTITY,
            last_redundancy_mismatch: false,
            mismatch_since_last_probe: false,
            redundancy_mismatch_count: 0,
            first_redundancy_mismatch_tick: None,
            probe_reports: Vec::new(),
            config,
        };
        game.write_initial_state(guest)?;
        Ok(game)
    }

    fn dt(&self) -> f32 {
        1.0 / self.config.nominal_tick_rate as f32
    }

    fn addr(&self, offset: u64) -> GuestVirtAddr {
        self.layout.base.add(offset)
    }

    fn entity_field(&self, index: u32, field: u64) -> GuestVirtAddr {
        self.addr(OFF_ENTITIES + index as u64 * ENTITY_STRIDE + field)
    }

    // Field-sized guest accessors; each call is one walked, priced access.
    fn r_u32(&self, guest: &mut Guest, a: GuestVirtAddr) -> Result<u32> {
        Ok(u32::from_le_bytes(guest.guest_read(&self.process, a, 4)?.try_into().unwrap()))
    }
    fn w_u32(&self, guest: &mut Guest, a: GuestVirtAddr, v: u32) -> Result<()> {
        guest.guest_write(&self.process, a, &v.to_le_bytes())
    }
    fn r_i32(&self, guest: &mut Guest, a: GuestVirtAddr) -> Result<i32> {
        Ok(i32::from_le_bytes(guest.guest_read(&self.process, a, 4)?.try_into().unwrap()))
    }
    fn w_i32(&self, guest: &mut Guest, a: GuestVirtAddr, v: i32) -> Result<()> {
        guest.guest_write(&self.process, a, &v.to_le_bytes())
    }
    fn r_f32(&self, guest: &mut Guest, a: GuestVirtAddr) -> Result<f32> {
        Ok(f32::from_le_bytes(guest.guest_read(&self.process, a, 4)?.try_into().unwrap()))
    }
    fn w_f32(&self, guest: &mut Guest, a: GuestVirtAddr, v: f32) -> Result<()> {
        guest.guest_write(&self.process, a, &v.to_le_bytes())
    }
    fn r_u8(&self, guest: &mut Guest, a: GuestVirtAddr) -> Result<u8> {
        Ok(guest.guest_read(&self.process, a, 1)?[0])
    }
    fn w_u8(&self, guest: &mut Guest, a: GuestVirtAddr, v: u8) -> Result<()> {
        guest.guest_write(&self.process, a, &[v])
    }
    fn r_u16(&self, guest: &mut Guest, a: GuestVirtAddr) -> Result<u16> {
        Ok(u16::from_le_bytes(guest.guest_read(&self.process, a, 2)?.try_into().unwrap()))
    }
    fn w_u16(&self, guest: &mut Guest, a: GuestVirtAddr, v: u16) -> Result<()> {
        guest.guest_write(&self.process, a, &v.to_le_bytes())
    }

    fn r_vec3(&self, guest: &mut Guest, a: GuestVirtAddr) -> Result<Vec3> {
        Ok(Vec3::new(
            self.r_f32(guest, a)?,
            self.r_f32(guest, a.add(4))?,
            self.r_f32(guest, a.add(8))?,
        ))
    }
    fn w_vec3(&self, guest: &mut Guest, a: GuestVirtAddr, v: Vec3) -> Result<()> {
        self.w_f32(guest, a, v.x)?;
        self.w_f32(guest, a.add(4), v.y)?;
        self.w_f32(guest, a.add(8), v.z)
    }

    fn write_initial_state(&mut self, guest: &mut Guest) -> Result<()> {
        self.w_u32(guest, self.addr(OFF_FRAME_COUNTER), 0)?;
        self.w_u32(guest, self.addr(OFF_ENTITY_COUNT), self.config.players)?;
        guest.guest_write(
            &self.process,
            self.addr(OFF_ENTITY_LIST_PTR),
            &(GAME_BASE + OFF_ENTITIES).to_le_bytes(),
        )?;
        self.w_i32(guest, self.addr(OFF_CROSSHAIR), -1)?;
        self.w_u32(guest, self.addr(OFF_FIRE_PRIMARY), 0)?;
        self.w_u32(guest, self.addr(OFF_FIRE_SHADOW), 0)?;
        let lp = self.addr(OFF_LOCAL_PLAYER);
        self.w_vec3(guest, lp, Vec3::default())?;
        self.w_f32(guest, lp.add(12), 0.0)?;
        self.w_f32(guest, lp.add(16), 0.0)?;
        self.w_u32(guest, self.addr(OFF_CODE_WORD), 0x90)?;
        self.write_view_proj(guest, Vec3::default(), 0.0, 0.0)?;
        for i in 0..self.config.players {
            let (pos, wp, dir) = self.waypoints[i as usize].sample(0, self.dt());
            let speed = self.waypoints[i as usize].speed;
            self.w_vec3(guest, self.entity_field(i, ENT_POS), pos)?;
            self.w_vec3(guest, self.entity_field(i, ENT_VEL), dir.scale(speed))?;
            self.w_u8(guest, self.entity_field(i, ENT_TEAM), (i % 2 == 1) as u8)?;
            self.w_u8(guest, self.entity_field(i, ENT_ALIVE), 1)?;
            self.w_u16(guest, self.entity_field(i, ENT_WAYPOINT), wp)?;
            self.w_i32(guest, self.entity_field(i, ENT_HEALTH), 100)?;
            self.write_entity_transform(guest, i, pos)?;
        }
        self.w_u32(guest, self.addr(OFF_SCRATCH_COUNTER), 0)?;
        Ok(())
    }

    fn write_entity_transform(&self, guest: &mut Guest, index: u32, pos: Vec3) -> Result<()> {
        let mut m = Mat4::IDENTITY;
        m.set(0, 3, pos.x);
        m.set(1, 3, pos.y);
        m.set(2, 3, pos.z);
        let base = self.entity_field(index, ENT_TRANSFORM);
        for (k, v) in m.0.iter().enumerate() {
            self.w_f32(guest, base.add(k as u64 * 4), *v)?;
        }
        Ok(())
    }

    fn write_view_proj(&mut self, guest: &mut Guest, lp_pos: Vec3, yaw: f32, pitch: f32) -> Result<()> {
        let eye = lp_pos.add(Vec3::new(0.0, 0.0, EYE_HEIGHT));
        let (right, up, forward) = camera_basis(yaw, pitch);
        let view = Mat4::look_basis(eye, right, up, forward);
        let proj = Mat4::perspective(VFOV_RADIANS, SCREEN_W / SCREEN_H, NEAR_PLANE, FAR_PLANE);
        self.view_proj = proj.mul(&view);
        let base = self.addr(OFF_VIEW_PROJ);
        for (k, v) in self.view_proj.0.iter().enumerate() {
            self.w_f32(guest, base.add(k as u64 * 4), *v)?;
        }
        Ok(())
    }

    /// The current world-to-clip matrix, as most recently written to guest
    /// memory.
    pub fn view_proj(&self) -> Mat4 {
        self.view_proj
    }

    fn apply_input(&mut self, guest: &mut Guest, events: Vec<InputPayload>) -> Result<(f32, f32)> {
        let mut dyaw = 0.0f32;
        let mut dpitch = 0.0f32;
        for ev in events {
            match ev {
                InputPayload::Key { key, down } => match key {
                    KeyCode::W => self.held.w = down,
                    KeyCode::A => self.held.a = down,
                    KeyCode::S => self.held.s = down,
                    KeyCode::D => self.held.d = down,
                    KeyCode::Space => {}
                },
                InputPayload::MouseMove { dx, dy } => {
                    dyaw += dx as f32 * MOUSE_SENSITIVITY;
                    dpitch += dy as f32 * MOUSE_SENSITIVITY;
                }
                InputPayload::Button { button: MouseButton::Left, down } => {
                    // The input handler stores the fire state; the mirror
                    // step copies it to the shadow slot later this tick.
                    self.w_u32(guest, self.addr(OFF_FIRE_PRIMARY), down as u32)?;
                }
                InputPayload::Button { .. } => {}
            }
        }
        Ok((dyaw, dpitch))
    }

    /// Advance the simulation one tick. Pipeline: probes, input, entity
    /// motion, camera, crosshair raycast, fire, mirror, render scratch,
    /// frame counter, colocated code fetch, then close the tick against the
    /// budget.
    pub fn tick(&mut self, guest: &mut Guest, input: &mut InputQueue) -> Result<TickOutcome> {
        guest.begin_tick();
        let dt = self.dt();
        let tick = guest.tick;

        // Anti-cheat redundancy sample, before anything rewrites the pair.
        let primary = self.r_u32(guest, self.addr(OFF_FIRE_PRIMARY))?;
        let shadow = self.r_u32(guest, self.addr(OFF_FIRE_SHADOW))?;
        self.last_redundancy_mismatch = primary != shadow;
        if self.last_redundancy_mismatch {
            self.mismatch_since_last_probe = true;
            self.redundancy_mismatch_count += 1;
            self.first_redundancy_mismatch_tick.get_or_insert(tick);
        }
        if self.config.probe_interval_ticks > 0 && tick % self.config.probe_interval_ticks == 0 {
            let report = anticheat::run_probes(guest, self.mismatch_since_last_probe);
            self.mismatch_since_last_probe = false;
            self.probe_reports.push(report);
        }

        // Input.
        let events = input.drain_through(tick);
        let (dyaw, dpitch) = self.apply_input(guest, events)?;

        // Local player kinematics.
        let lp = self.addr(OFF_LOCAL_PLAYER);
        let pos = self.r_vec3(guest, lp)?;
        let yaw = self.r_f32(guest, lp.add(12))?;
        let pitch = self.r_f32(guest, lp.add(16))?;
        let new_yaw = yaw + dyaw;
        let new_pitch = (pitch + dpitch).clamp(-1.4, 1.4);
        let (right, _, fwd) = camera_basis(new_yaw, 0.0);
        let mut step = Vec3::default();
        if self.held.w {
            step = step.add(fwd);
        }
        if self.held.s {
            step = step.sub(fwd);
        }
        if self.held.d {
            step = step.add(right);
        }
        if self.held.a {
            step = step.sub(right);
        }
        let new_pos = pos.add(step.scale(MOVE_SPEED * dt));
        self.w_vec3(guest, lp, new_pos)?;
        self.w_f32(guest, lp.add(12), new_yaw)?;
        self.w_f32(guest, lp.add(16), new_pitch)?;

        // Entity pass: scripted waypoint motion plus health/respawn upkeep.
        let motion_ticks = tick + 1;
        for i in 0..self.config.players {
            let _wp = self.r_u16(guest, self.entity_field(i, ENT_WAYPOINT))?;
            let _old = self.r_vec3(guest, self.entity_field(i, ENT_POS))?;
            let alive = self.r_u8(guest, self.entity_field(i, ENT_ALIVE))?;
            let health = self.r_i32(guest, self.entity_field(i, ENT_HEALTH))?;
            let (pos, wp, dir) = self.waypoints[i as usize].sample(motion_ticks, dt);
            let speed = self.waypoints[i as usize].speed;
            let (new_alive, new_health) = if alive == 1 {
                (1u8, health)
            } else if health + 1 >= 0 {
                (1u8, 100)
            } else {
                (0u8, health + 1)
            };
            self.w_vec3(guest, self.entity_field(i, ENT_POS), pos)?;
            self.w_u16(guest, self.entity_field(i, ENT_WAYPOINT), wp)?;
            self.w_vec3(guest, self.entity_field(i, ENT_VEL), dir.scale(speed))?;
            self.w_u8(guest, self.entity_field(i, ENT_ALIVE), new_alive)?;
            self.w_i32(guest, self.entity_field(i, ENT_HEALTH), new_health)?;
            self.write_entity_transform(guest, i, pos)?;
        }

        // Camera and the published world-to-clip matrix.
        let cam_pos = self.r_vec3(guest, lp)?;
        let cam_yaw = self.r_f32(guest, lp.add(12))?;
        let cam_pitch = self.r_f32(guest, lp.add(16))?;
        self.write_view_proj(guest, cam_pos, cam_yaw, cam_pitch)?;

        // Crosshair raycast: nearest alive entity whose projected bounding
        // box contains the screen center.
        let center = (SCREEN_W * 0.5, SCREEN_H * 0.5);
        let mut best: i32 = -1;
        let mut best_depth = f32::INFINITY;
        for i in 0..self.config.players {
            let pos = self.r_vec3(guest, self.entity_field(i, ENT_POS))?;
            let alive = self.r_u8(guest, self.entity_field(i, ENT_ALIVE))?;
            let _team = self.r_u8(guest, self.entity_field(i, ENT_TEAM))?;
            if alive != 1 {
                continue;
            }
            if let Some(rect) = entity_screen_rect(pos, ENTITY_HEIGHT, &self.view_proj, (SCREEN_W, SCREEN_H)) {
                if rect.contains(center.0, center.1) {
                    let depth = self.view_proj.transform(pos, 1.0)[3];
                    if depth < best_depth {
                        best_depth = depth;
                        best = i as i32;
                    }
                }
            }
        }
        self.w_i32(guest, self.addr(OFF_CROSSHAIR), best)?;

        // Fire: hitscan damage while the fire state is held on a target.
        let crosshair = self.r_i32(guest, self.addr(OFF_CROSSHAIR))?;
        let firing = self.r_u32(guest, self.addr(OFF_FIRE_PRIMARY))?;
        if firing != 0 && crosshair >= 0 {
            let target = crosshair as u32;
            let health = self.r_i32(guest, self.entity_field(target, ENT_HEALTH))?;
            let new_health = health - WEAPON_DAMAGE;
            if new_health <= 0 {
                self.w_u8(guest, self.entity_field(target, ENT_ALIVE), 0)?;
                self.w_i32(guest, self.entity_field(target, ENT_HEALTH), -RESPAWN_TICKS)?;
            } else {
                self.w_i32(guest, self.entity_field(target, ENT_HEALTH), new_health)?;
            }
        }

        // Mirror the dual-stored fire state.
        let primary_now = self.r_u32(guest, self.addr(OFF_FIRE_PRIMARY))?;
        self.w_u32(guest, self.addr(OFF_FIRE_SHADOW), primary_now)?;

        // Render scratch: the engine re-reads every record and caches the
        // projected boxes on the scratch page.
        for i in 0..self.config.players {
            let tbase = self.entity_field(i, ENT_TRANSFORM);
            let mut m = [0f32; 16];
            for (k, slot) in m.iter_mut().enumerate() {
                *slot = self.r_f32(guest, tbase.add(k as u64 * 4))?;
            }
            let pos = self.r_vec3(guest, self.entity_field(i, ENT_POS))?;
            let _team = self.r_u8(guest, self.entity_field(i, ENT_TEAM))?;
            let alive = self.r_u8(guest, self.entity_field(i, ENT_ALIVE))?;
            let _health = self.r_i32(guest, self.entity_field(i, ENT_HEALTH))?;
            let rect = if alive == 1 {
                entity_screen_rect(pos, ENTITY_HEIGHT, &self.view_proj, (SCREEN_W, SCREEN_H))
            } else {
                None
            };
            let out = rect.map(|r| [r.x, r.y, r.w, r.h]).unwrap_or([0.0; 4]);
            let sbase = self.addr(OFF_SCRATCH_BBOX + i as u64 * 16);
            for (k, v) in out.iter().enumerate() {
                self.w_f32(guest, sbase.add(k as u64 * 4), *v)?;
            }
        }
        let scount = self.r_u32(guest, self.addr(OFF_SCRATCH_COUNTER))?;
        self.w_u32(guest, self.addr(OFF_SCRATCH_COUNTER), scount.wrapping_add(1))?;

        // Frame counter.
        let counter = self.r_u32(guest, self.addr(OFF_FRAME_COUNTER))?;
        self.w_u32(guest, self.addr(OFF_FRAME_COUNTER), counter.wrapping_add(1))?;

        // Colocated code: one instruction fetch from the hot frame per tick.
        if self.config.colocate_code_data {
            guest.guest_execute(&self.process, self.addr(OFF_CODE_WORD))?;
        }

        Ok(guest.end_tick(self.budget.work_ns, self.budget.budget_ns()))
    }

    /// FNV-1a over the game's stored frames (hot + scratch); the per-tick
    /// determinism fingerprint.
    pub fn state_hash(&self, guest: &Guest) -> u64 {
        guest.hash_frames(self.data_base_gfn, 2)
    }

    /// Ground-truth entity snapshot read host-side (free), for oracles and
    /// report metrics.
    pub fn ground_truth(&self, guest: &Guest) -> Result<Vec<EntityTruth>> {
        let mut out = Vec::with_capacity(self.config.players as usize);
        for i in 0..self.config.players {
            let rec = guest.host_read(
                &self.process,
                self.addr(OFF_ENTITIES + i as u64 * ENTITY_STRIDE),
                32,
            )?;
            // Host reads see ciphertext under encryption; ground truth wants
            // plaintext, so decode through the guest view instead.
            let _ = rec;
            let pos = Vec3::new(
                self.truth_f32(guest, i, ENT_POS)?,
                self.truth_f32(guest, i, ENT_POS + 4)?,
                self.truth_f32(guest, i, ENT_POS + 8)?,
            );
            out.push(EntityTruth {
                pos,
                team: self.truth_u8(guest, i, ENT_TEAM)?,
                alive: self.truth_u8(guest, i, ENT_ALIVE)? == 1,
            });
        }
        Ok(out)
    }

    fn truth_f32(&self, guest: &Guest, i: u32, field: u64) -> Result<f32> {
        let tr = guest.translate(&self.process, self.entity_field(i, field))?;
        let mut buf = [0u8; 4];
        guest.phys_read_guest(tr.gpa, &mut buf)?;
        Ok(f32::from_le_bytes(buf))
    }

    fn truth_u8(&self, guest: &Guest, i: u32, field: u64) -> Result<u8> {
        let tr = guest.translate(&self.process, self.entity_field(i, field))?;
        let mut buf = [0u8; 1];
        guest.phys_read_guest(tr.gpa, &mut buf)?;
        Ok(buf[0])
    }

    /// Closed-form waypoint position oracle for tests and scripted-path
    /// predictions.
    pub fn scripted_position(&self, entity: u32, ticks: u64) -> Vec3 {
        self.waypoints[entity as usize].sample(ticks, self.dt()).0
    }
}

/// Host-side ground truth for one entity.
#[derive(Debug, Clone, Copy)]
pub struct EntityTruth {
    pub pos: Vec3,
    pub team: u8,
    pub alive: bool,
}
