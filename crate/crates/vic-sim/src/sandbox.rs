//! Ties a guest, the toy game, and the input queue into one co-simulation
//! behind a cloneable handle.
//!
//! All public operations borrow the simulation for their duration. Guard
//! callbacks run while a guest access holds that borrow, so a callback that
//! tries to re-enter guest execution through a cloned handle gets
//! [`SimError::RecursiveGuestEntry`] instead of silently recursing.

use std::cell::RefCell;
use std::rc::Rc;

use crate::anticheat::{HypervisorProfile, Mitigation, ProbeReport};
use crate::error::{Result, SimError};
use crate::game::{Game, GameConfig, GameLayout};
use crate::guest::{Guest, GuestConfig, TickOutcome};
use crate::input::{InputOrigin, InputPayload, InputQueue};
use crate::paging::GuestVirtAddr;
use crate::slat::CostLedger;

pub struct Sim {
    pub guest: Guest,
    pub game: Game,
    pub input: InputQueue,
}

/// Cloneable handle to one running simulation.
#[derive(Clone)]
pub struct Sandbox {
    inner: Rc<RefCell<Sim>>,
}

impl Sandbox {
    /// Build a guest for `config` under the given hypervisor profile and
    /// initialize the game in it. Mitigations must already be set on the
    /// config; they require the relayout that happens here.
    pub fn new(config: GameConfig, profile: HypervisorProfile) -> Result<Sandbox> {
        Self::with_cost(config, profile, crate::slat::CostModel::default())
    }

    /// Like [`Sandbox::new`] with an explicit access cost model.
    pub fn with_cost(
        config: GameConfig,
        profile: HypervisorProfile,
        cost: crate::slat::CostModel,
    ) -> Result<Sandbox> {
        let mut guest_config = GuestConfig {
            cost,
            ud_on_vmread: profile.ud_on_vmread,
            encryption_seed: config
                .memory_encryption
                .then_some(config.seed ^ 0xE9C7_11D5_3A40_81B3),
            ..Default::default()
        };
        guest_config.cost.tsc_offset_enabled = profile.tsc_offset_enabled;
        let mut guest = Guest::new(guest_config)?;
        let game = Game::init(&mut guest, config)?;
        Ok(Sandbox {
            inner: Rc::new(RefCell::new(Sim { guest, game, input: InputQueue::new() })),
        })
    }

    /// Borrow the simulation; fails with `RecursiveGuestEntry` when called
    /// from inside a guard callback (the tick still holds the borrow).
    pub(crate) fn with_sim<R>(&self, f: impl FnOnce(&mut Sim) -> R) -> Result<R> {
        let mut sim = self
            .inner
            .try_borrow_mut()
            .map_err(|_| SimError::RecursiveGuestEntry)?;
        Ok(f(&mut sim))
    }

    /// Run one game tick.
    pub fn tick(&self) -> Result<TickOutcome> {
        self.with_sim(|sim| {
            let Sim { guest, game, input } = sim;
            game.tick(guest, input)
        })?
    }

    /// Mitigations relayout the game; on a live sandbox they are always too
    /// late.
    pub fn apply_mitigation(&self, which: Mitigation) -> Result<()> {
        Err(SimError::IncompatibleAtRuntime(which.name().to_string()))
    }

    pub fn layout(&self) -> Result<GameLayout> {
        self.with_sim(|sim| sim.game.layout.clone())
    }

    pub fn config(&self) -> Result<GameConfig> {
        self.with_sim(|sim| sim.game.config.clone())
    }

    pub fn current_tick(&self) -> Result<u64> {
        self.with_sim(|sim| sim.guest.tick)
    }

    pub fn clock_ns(&self) -> Result<u64> {
        self.with_sim(|sim| sim.guest.clock_ns)
    }

    pub fn ledger(&self) -> Result<CostLedger> {
        self.with_sim(|sim| sim.guest.ledger)
    }

    /// Append an input event; it becomes guest-visible at the next tick
    /// boundary.
    pub fn inject(&self, payload: InputPayload, origin: InputOrigin) -> Result<()> {
        self.with_sim(|sim| {
            let now = sim.guest.tick;
            sim.input.inject(payload, origin, now)
        })?
    }

    /// Guest-originated access, e.g. for scripting guest-side activity in
    /// tests. Routes through the SLAT funnel like game code.
    pub fn guest_write(&self, gva: GuestVirtAddr, data: &[u8]) -> Result<()> {
        self.with_sim(|sim| {
            let process = sim.game.process.clone();
            sim.guest.guest_write(&process, gva, data)
        })?
    }

    pub fn guest_read(&self, gva: GuestVirtAddr, len: usize) -> Result<Vec<u8>> {
        self.with_sim(|sim| {
            let process = sim.game.process.clone();
            sim.guest.guest_read(&process, gva, len)
        })?
    }

    /// Determinism fingerprint of the game's guest memory.
    pub fn state_hash(&self) -> Result<u64> {
        self.with_sim(|sim| sim.game.state_hash(&sim.guest))
    }

    pub fn probe_reports(&self) -> Result<Vec<ProbeReport>> {
        self.with_sim(|sim| sim.game.probe_reports.clone())
    }

    pub fn redundancy_stats(&self) -> Result<(u64, Option<u64>)> {
        self.with_sim(|sim| {
            (
                sim.game.redundancy_mismatch_count,
                sim.game.first_redundancy_mismatch_tick,
            )
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mitigations_are_compile_time_for_a_live_game() {
        let sandbox = Sandbox::new(GameConfig::default(), HypervisorProfile::default()).unwrap();
        let err = sandbox.apply_mitigation(Mitigation::HugePages);
        assert!(matches!(err, Err(SimError::IncompatibleAtRuntime(_))));
    }

    #[test]
    fn ticks_advance_clock_on_budget() {
        let sandbox = Sandbox::new(
            GameConfig { players: 2, ..Default::default() },
            HypervisorProfile::default(),
        )
        .unwrap();
        sandbox.tick().unwrap();
        sandbox.tick().unwrap();
        assert_eq!(sandbox.current_tick().unwrap(), 2);
        assert_eq!(sandbox.clock_ns().unwrap(), 2 * 16_666_666);
    }
}
