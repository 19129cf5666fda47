//! Host-side introspection surface: translated reads and writes into a
//! named guest process, watch registration on guest addresses, and the
//! event pump that advances the co-simulation.
//!
//! Host accesses bypass the SLAT guards and the cost model entirely; from
//! inside the guest they are invisible. What a watch costs the guest is the
//! trap traffic its page guard generates, never the host's reads.

use std::cell::RefCell;
use std::rc::Rc;

use crate::error::{Result, SimError};
use crate::guest::Delivery;
use crate::paging::{GuestVirtAddr, PageSize, PAGE_SIZE_4K};
use crate::sandbox::Sandbox;
use crate::slat::{AccessKinds, GuardId, MemoryEvent, SPP_SUB_RANGE};

/// Which cheat task is currently using the session; only telemetry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SessionTask {
    Control,
    Reader,
    Overlay,
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SessionTelemetry {
    pub control_reads: u64,
    pub reader_reads: u64,
    pub overlay_reads: u64,
    pub writes: u64,
}

/// An installed watch. Watches spanning a page boundary install one guard
/// per frame under the same handle.
#[derive(Debug, Clone)]
pub struct WatchHandle {
    pub watch_id: u64,
    pub pid: u32,
    pub gva: GuestVirtAddr,
    pub len: u64,
    pub uses_spp: bool,
    guard_ids: Vec<GuardId>,
}

pub type WatchCallback = Box<dyn FnMut(&MemoryEvent)>;

/// Exclusive introspection session on one guest.
pub struct VmiSession {
    sandbox: Sandbox,
    next_watch_id: u64,
    current_task: SessionTask,
    pub telemetry: SessionTelemetry,
}

impl VmiSession {
    /// Attach to the guest; at most one live session per guest.
    pub fn attach(sandbox: &Sandbox) -> Result<VmiSession> {
        sandbox.with_sim(|sim| {
            if sim.guest.session_attached {
                return Err(SimError::SessionAlreadyAttached);
            }
            sim.guest.session_attached = true;
            Ok(())
        })??;
        Ok(VmiSession {
            sandbox: sandbox.clone(),
            next_watch_id: 1,
            current_task: SessionTask::Control,
            telemetry: SessionTelemetry::default(),
        })
    }

    pub fn set_task(&mut self, task: SessionTask) {
        self.current_task = task;
    }

    /// Translated read from a named process. Charges the guest nothing and
    /// fires no guards; under memory encryption the stored bytes come back
    /// as-is.
    pub fn read(&mut self, process_name: &str, gva: GuestVirtAddr, len: usize) -> Result<Vec<u8>> {
        match self.current_task {
            SessionTask::Control => self.telemetry.control_reads += 1,
            SessionTask::Reader => self.telemetry.reader_reads += 1,
            SessionTask::Overlay => self.telemetry.overlay_reads += 1,
        }
        self.sandbox.with_sim(|sim| {
            let process = sim.guest.process_by_name(process_name)?;
            sim.guest.host_read(&process, gva, len)
        })?
    }

    /// Translated write into a named process; invisible to guards.
    pub fn write(&mut self, process_name: &str, gva: GuestVirtAddr, data: &[u8]) -> Result<()> {
        self.telemetry.writes += 1;
        self.sandbox.with_sim(|sim| {
            let process = sim.guest.process_by_name(process_name)?;
            sim.guest.host_write(&process, gva, data)
        })?
    }

    /// Install a page guard over the frame(s) containing
    /// `[gva, gva + len)`. The guard traps every access kind on those
    /// frames (the gfn-remap mechanism is that coarse); the callback fires
    /// for relevant write events. With `use_spp` the trap surface narrows to
    /// the 128-byte sub-ranges covering the watched bytes.
    pub fn register_watch(
        &mut self,
        process_name: &str,
        gva: GuestVirtAddr,
        len: u64,
        callback: WatchCallback,
        use_spp: bool,
    ) -> Result<WatchHandle> {
        if len == 0 || len > PAGE_SIZE_4K {
            return Err(SimError::PreconditionViolated("watch length must be 1..=4096"));
        }
        let shared = Rc::new(RefCell::new(callback));
        let watch_id = self.next_watch_id;
        self.next_watch_id += 1;
        let (pid, guard_ids) = self.sandbox.with_sim(|sim| {
            let process = sim.guest.process_by_name(process_name)?;
            let mut guard_ids = Vec::new();
            let mut cursor = 0u64;
            while cursor < len {
                let va = gva.add(cursor);
                let tr = sim.guest.translate(&process, va)?;
                if use_spp && tr.page_size != PageSize::Size4K {
                    for id in &guard_ids {
                        sim.guest.slat.remove_guard(*id)?;
                    }
                    return Err(SimError::HugePageUnsupported);
                }
                let page_bytes = tr.page_size.bytes();
                let page_remaining = page_bytes - (va.0 & (page_bytes - 1));
                let span = (len - cursor).min(page_remaining);
                let cb = shared.clone();
                let guard_id = sim.guest.set_page_guard(
                    tr,
                    tr.gpa.0,
                    span,
                    AccessKinds::ALL,
                    Some(Box::new(move |ev: &MemoryEvent| (cb.borrow_mut())(ev))),
                )?;
                if use_spp {
                    let frame_off = tr.gpa.0 & (PAGE_SIZE_4K - 1);
                    let first = frame_off / SPP_SUB_RANGE;
                    let last = (frame_off + span - 1) / SPP_SUB_RANGE;
                    let mut bitmap = 0u32;
                    for bit in first..=last {
                        bitmap |= 1 << bit;
                    }
                    sim.guest.slat.set_spp_bitmap(guard_id, bitmap)?;
                }
                guard_ids.push(guard_id);
                cursor += span;
            }
            Ok::<_, SimError>((process.pid, guard_ids))
        })??;
        Ok(WatchHandle { watch_id, pid, gva, len, uses_spp: use_spp, guard_ids })
    }

    /// Number of page guards backing a handle; watches that span a page
    /// boundary install one per frame.
    pub fn guard_count(handle: &WatchHandle) -> usize {
        handle.guard_ids.len()
    }

    pub fn unregister_watch(&mut self, handle: &WatchHandle) -> Result<()> {
        self.sandbox.with_sim(|sim| {
            for id in &handle.guard_ids {
                sim.guest.slat.remove_guard(*id)?;
            }
            Ok(())
        })?
    }

    /// Advance the co-simulation until the wall clock reaches
    /// `max_logical_ns`, returning the callback deliveries that happened,
    /// in order.
    pub fn pump_events(&mut self, max_logical_ns: u64) -> Result<Vec<Delivery>> {
        let mut out = Vec::new();
        loop {
            let clock = self.sandbox.clock_ns()?;
            if clock >= max_logical_ns {
                break;
            }
            self.sandbox.tick()?;
            out.extend(self.sandbox.with_sim(|sim| sim.guest.drain_deliveries())?);
        }
        Ok(out)
    }

    pub fn sandbox(&self) -> &Sandbox {
        &self.sandbox
    }
}

impl Drop for VmiSession {
    fn drop(&mut self) {
        // Best effort: free the exclusivity slot when the session goes away.
        let _ = self.sandbox.with_sim(|sim| sim.guest.session_attached = false);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anticheat::HypervisorProfile;
    use crate::game::GameConfig;

    fn sandbox(players: u32) -> Sandbox {
        Sandbox::new(GameConfig { players, ..Default::default() }, HypervisorProfile::default())
            .unwrap()
    }

    #[test]
    fn session_is_exclusive() {
        let sb = sandbox(2);
        let _first = VmiSession::attach(&sb).unwrap();
        assert!(matches!(VmiSession::attach(&sb), Err(SimError::SessionAlreadyAttached)));
    }

    #[test]
    fn session_slot_freed_on_drop() {
        let sb = sandbox(2);
        drop(VmiSession::attach(&sb).unwrap());
        let _second = VmiSession::attach(&sb).unwrap();
    }

    #[test]
    fn read_matches_guest_view_and_is_free() {
        let sb = sandbox(2);
        let mut session = VmiSession::attach(&sb).unwrap();
        let layout = sb.layout().unwrap();
        let addr = layout.base.add(layout.entity_count_offset);
        let before = sb.ledger().unwrap();
        let host = session.read("toygame", addr, 4).unwrap();
        let after = sb.ledger().unwrap();
        assert_eq!(u32::from_le_bytes(host.try_into().unwrap()), 2);
        assert_eq!(before.total_charged_ns, after.total_charged_ns);
        assert_eq!(before.trapped_accesses, after.trapped_accesses);
    }

    #[test]
    fn unknown_process_is_an_error() {
        let sb = sandbox(2);
        let mut session = VmiSession::attach(&sb).unwrap();
        let err = session.read("notepad", GuestVirtAddr(0x1000), 4);
        assert!(matches!(err, Err(SimError::NoSuchProcess(_))));
    }

    #[test]
    fn watch_sees_guest_writes_with_old_new() {
        let sb = sandbox(2);
        let mut session = VmiSession::attach(&sb).unwrap();
        let layout = sb.layout().unwrap();
        let addr = layout.base.add(layout.crosshair_entity_offset);
        let log: Rc<RefCell<Vec<(Vec<u8>, Vec<u8>)>>> = Rc::new(RefCell::new(Vec::new()));
        let sink = log.clone();
        session
            .register_watch(
                "toygame",
                addr,
                4,
                Box::new(move |ev| {
                    sink.borrow_mut().push((
                        ev.old_value.clone().unwrap_or_default(),
                        ev.new_value.clone().unwrap_or_default(),
                    ));
                }),
                false,
            )
            .unwrap();
        sb.guest_write(addr, &3i32.to_le_bytes()).unwrap();
        let log = log.borrow();
        assert_eq!(log.len(), 1);
        assert_eq!(log[0].0, (-1i32).to_le_bytes());
        assert_eq!(log[0].1, 3i32.to_le_bytes());
    }

    #[test]
    fn callbacks_cannot_reenter_guest_execution() {
        let sb = sandbox(2);
        let mut session = VmiSession::attach(&sb).unwrap();
        let layout = sb.layout().unwrap();
        let addr = layout.base.add(layout.crosshair_entity_offset);
        let reentry = sb.clone();
        let observed: Rc<RefCell<Option<SimError>>> = Rc::new(RefCell::new(None));
        let seen = observed.clone();
        session
            .register_watch(
                "toygame",
                addr,
                4,
                Box::new(move |_| {
                    if let Err(e) = reentry.guest_write(addr, &0i32.to_le_bytes()) {
                        *seen.borrow_mut() = Some(e);
                    }
                }),
                false,
            )
            .unwrap();
        sb.guest_write(addr, &1i32.to_le_bytes()).unwrap();
        assert!(matches!(*observed.borrow(), Some(SimError::RecursiveGuestEntry)));
    }

    #[test]
    fn pump_delivers_in_order_until_deadline() {
        let sb = sandbox(2);
        let mut session = VmiSession::attach(&sb).unwrap();
        let layout = sb.layout().unwrap();
        // Watch the frame counter: the game writes it every tick.
        let addr = layout.base.add(layout.frame_counter_offset);
        session
            .register_watch("toygame", addr, 4, Box::new(|_| {}), false)
            .unwrap();
        let budget = 16_666_666u64;
        let deliveries = session.pump_events(3 * budget).unwrap();
        assert_eq!(deliveries.len(), 3);
        for (i, d) in deliveries.iter().enumerate() {
            assert_eq!(d.timestamp, i as u64);
            assert_eq!(
                d.new_value.as_deref(),
                Some(&(i as u32 + 1).to_le_bytes()[..])
            );
        }
        // Pumping to the same deadline again delivers nothing new.
        assert!(session.pump_events(3 * budget).unwrap().is_empty());
    }

    #[test]
    fn reads_and_writes_to_unmapped_gvas_fail() {
        let sb = sandbox(2);
        let mut session = VmiSession::attach(&sb).unwrap();
        let err = session.read("toygame", GuestVirtAddr(0x9_0000_0000), 4);
        assert!(matches!(err, Err(SimError::PageNotPresent { .. })));
        let err = session.write("toygame", GuestVirtAddr(0x9_0000_0000), &[1]);
        assert!(matches!(err, Err(SimError::PageNotPresent { .. })));
    }

    #[test]
    fn host_write_lands_before_next_tick() {
        let sb = sandbox(2);
        let mut session = VmiSession::attach(&sb).unwrap();
        let layout = sb.layout().unwrap();
        let addr = layout.base.add(layout.fire_state_primary_offset);
        session.write("toygame", addr, &1u32.to_le_bytes()).unwrap();
        assert_eq!(sb.guest_read(addr, 4).unwrap(), 1u32.to_le_bytes());
    }

    #[test]
    fn watch_spanning_two_frames_installs_two_guards() {
        let sb = sandbox(2);
        let mut session = VmiSession::attach(&sb).unwrap();
        let layout = sb.layout().unwrap();
        // The game maps two contiguous pages; straddle their boundary.
        let hits = Rc::new(RefCell::new(0u32));
        let sink = hits.clone();
        let handle = session
            .register_watch(
                "toygame",
                layout.base.add(0xFFE),
                4,
                Box::new(move |_| *sink.borrow_mut() += 1),
                false,
            )
            .unwrap();
        assert_eq!(VmiSession::guard_count(&handle), 2);
        // A write on either side of the boundary delivers through the same
        // handle.
        sb.guest_write(layout.base.add(0xFFE), &[1, 2]).unwrap();
        sb.guest_write(layout.base.add(0x1000), &[3]).unwrap();
        assert_eq!(*hits.borrow(), 2);
    }

    #[test]
    fn spp_on_huge_pages_is_rejected() {
        let sb = Sandbox::new(
            GameConfig { players: 2, huge_pages: true, ..Default::default() },
            HypervisorProfile::default(),
        )
        .unwrap();
        let mut session = VmiSession::attach(&sb).unwrap();
        let layout = sb.layout().unwrap();
        let addr = layout.base.add(layout.crosshair_entity_offset);
        let err = session.register_watch("toygame", addr, 4, Box::new(|_| {}), true);
        assert!(matches!(err, Err(SimError::HugePageUnsupported)));
    }
}
