//! Second-level address translation: the gfn -> host-frame map, permission
//! based page guards, sub-page protection bitmaps, and the cost model that
//! prices every guest access.
//!
//! The table stores entries at 4 KiB granularity. A guard covers the whole
//! guest page containing the watched bytes (one frame for 4 KiB mappings,
//! 512 for 2 MiB), so any guest access of a guarded kind anywhere in that
//! page traps and is charged the vmexit cost. Trap-and-emulate is atomic
//! within one access: the guard stays armed, the access is emulated by the
//! hypervisor, and the next access traps again.

use std::collections::BTreeMap;

use crate::error::{Result, SimError};
use crate::paging::Perms;

/// What a guest access is doing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AccessKind {
    Read,
    Write,
    Execute,
}

/// Set of access kinds a guard traps on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AccessKinds {
    pub read: bool,
    pub write: bool,
    pub execute: bool,
}

impl AccessKinds {
    pub const WRITE: AccessKinds = AccessKinds { read: false, write: true, execute: false };
    /// The coarse trap surface of a gfn-remap style guard: every access kind
    /// faults; relevance filtering happens afterwards.
    pub const ALL: AccessKinds = AccessKinds { read: true, write: true, execute: true };

    pub fn contains(self, kind: AccessKind) -> bool {
        match kind {
            AccessKind::Read => self.read,
            AccessKind::Write => self.write,
            AccessKind::Execute => self.execute,
        }
    }
}

/// One trapped guest access.
#[derive(Debug, Clone)]
pub struct MemoryEvent {
    pub gpa: u64,
    pub gva: u64,
    pub pid: u32,
    pub kind: AccessKind,
    /// Bytes replaced by a write; `None` for reads and executes.
    pub old_value: Option<Vec<u8>>,
    /// Bytes stored by a write; `None` for reads and executes.
    pub new_value: Option<Vec<u8>>,
    /// True iff the access intersects a registered watch range.
    pub relevant: bool,
    /// Logical tick at which the access happened.
    pub timestamp: u64,
}

/// Simulated cost of guest accesses, in integer nanoseconds so that cost
/// accounting is exact.
#[derive(Debug, Clone, Copy)]
pub struct CostModel {
    /// Charged to the guest per trapped access. Default 50 us.
    pub vmexit_cost_ns: u64,
    /// Charged per untrapped access. Default 0.1 us.
    pub baseline_access_cost_ns: u64,
    /// When set, the hypervisor subtracts vmexit charges from the
    /// guest-visible clock.
    pub tsc_offset_enabled: bool,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            vmexit_cost_ns: 50_000,
            baseline_access_cost_ns: 100,
            tsc_offset_enabled: false,
        }
    }
}

impl CostModel {
    pub fn validate(&self) -> Result<()> {
        if self.vmexit_cost_ns <= self.baseline_access_cost_ns {
            return Err(SimError::BadReport(
                "vmexit cost must exceed the baseline access cost".into(),
            ));
        }
        Ok(())
    }
}

/// Running totals for charged access costs and emitted events.
#[derive(Debug, Clone, Copy, Default)]
pub struct CostLedger {
    /// Event cost accumulated within the current tick (reset per tick).
    pub tick_charged_ns: u64,
    pub total_charged_ns: u64,
    pub trapped_accesses: u64,
    pub untrapped_accesses: u64,
    pub relevant_events: u64,
    /// Guest time concealed by TSC offsetting.
    pub hidden_ns: u64,
}

impl CostLedger {
    pub fn charge(&mut self, ns: u64) {
        self.tick_charged_ns += ns;
        self.total_charged_ns += ns;
    }
}

pub type GuardId = u64;
pub type GuardCallback = Box<dyn FnMut(&MemoryEvent)>;

/// A page guard: trap surface plus the watch ranges that make an event
/// relevant. Ranges are byte offsets relative to the guarded region base.
pub struct PageGuard {
    pub id: GuardId,
    pub base_gfn: u64,
    pub frame_count: u64,
    pub watch_ranges: Vec<(u64, u64)>,
    pub kinds: AccessKinds,
    /// One bit per 128-byte sub-range of a 4 KiB frame; clear bits do not
    /// trap. Only valid for single-frame guards.
    pub spp_bitmap: Option<u32>,
    callback: Option<GuardCallback>,
}

impl PageGuard {
    fn region_len(&self) -> u64 {
        self.frame_count << crate::paging::PAGE_SHIFT
    }

    fn traps(&self, region_off: u64, len: u64, kind: AccessKind) -> bool {
        if !self.kinds.contains(kind) {
            return false;
        }
        match self.spp_bitmap {
            None => true,
            Some(bits) => {
                let first = region_off / SPP_SUB_RANGE;
                let last = (region_off + len - 1) / SPP_SUB_RANGE;
                (first..=last).any(|i| bits & (1u32 << i) != 0)
            }
        }
    }

    fn watches(&self, region_off: u64, len: u64) -> bool {
        self.watch_ranges
            .iter()
            .any(|&(start, rlen)| region_off < start + rlen && start < region_off + len)
    }
}

/// Sub-page protection granularity.
pub const SPP_SUB_RANGE: u64 = 128;

#[derive(Debug, Clone)]
pub struct SlatEntry {
    pub host_frame: u32,
    pub perms: Perms,
    pub guarded: bool,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Classification {
    pub trapped: bool,
    pub relevant: bool,
}

/// The guest-physical to host-physical map plus all active guards.
pub struct SlatTable {
    entries: Vec<Option<SlatEntry>>,
    guards: BTreeMap<GuardId, PageGuard>,
    guards_by_gfn: BTreeMap<u64, Vec<GuardId>>,
    next_guard_id: GuardId,
    /// Debug switch: deliver irrelevant events to callbacks as well.
    pub deliver_irrelevant: bool,
}

impl SlatTable {
    pub fn new(gfn_capacity: u64) -> Self {
        SlatTable {
            entries: vec![None; gfn_capacity as usize],
            guards: BTreeMap::new(),
            guards_by_gfn: BTreeMap::new(),
            next_guard_id: 1,
            deliver_irrelevant: false,
        }
    }

    pub fn map(&mut self, gfn: u64, host_frame: u32, perms: Perms) -> Result<()> {
        let slot = self
            .entries
            .get_mut(gfn as usize)
            .ok_or(SimError::UnmappedFrame(gfn))?;
        if slot.is_some() {
            return Err(SimError::DuplicateMapping(gfn));
        }
        *slot = Some(SlatEntry { host_frame, perms, guarded: false });
        Ok(())
    }

    pub fn unmap(&mut self, gfn: u64) -> Result<SlatEntry> {
        let slot = self
            .entries
            .get_mut(gfn as usize)
            .ok_or(SimError::UnmappedFrame(gfn))?;
        slot.take().ok_or(SimError::UnmappedFrame(gfn))
    }

    #[inline]
    pub fn resolve(&self, gfn: u64) -> Option<&SlatEntry> {
        self.entries.get(gfn as usize).and_then(|e| e.as_ref())
    }

    pub fn mapped_gfns(&self) -> impl Iterator<Item = u64> + '_ {
        self.entries
            .iter()
            .enumerate()
            .filter_map(|(i, e)| e.as_ref().map(|_| i as u64))
    }

    /// Install a guard over `frame_count` frames starting at `base_gfn`.
    /// `watch_ranges` are byte offsets relative to the region base.
    pub fn add_guard(
        &mut self,
        base_gfn: u64,
        frame_count: u64,
        watch_ranges: Vec<(u64, u64)>,
        kinds: AccessKinds,
        callback: Option<GuardCallback>,
    ) -> Result<GuardId> {
        for gfn in base_gfn..base_gfn + frame_count {
            if self.resolve(gfn).is_none() {
                return Err(SimError::UnmappedFrame(gfn));
            }
        }
        let region_len = frame_count << crate::paging::PAGE_SHIFT;
        for &(start, len) in &watch_ranges {
            if len == 0 || start + len > region_len {
                return Err(SimError::Misaligned { addr: start, required: region_len });
            }
        }
        let id = self.next_guard_id;
        self.next_guard_id += 1;
        self.guards.insert(
            id,
            PageGuard {
                id,
                base_gfn,
                frame_count,
                watch_ranges,
                kinds,
                spp_bitmap: None,
                callback,
            },
        );
        for gfn in base_gfn..base_gfn + frame_count {
            self.guards_by_gfn.entry(gfn).or_default().push(id);
            if let Some(Some(entry)) = self.entries.get_mut(gfn as usize) {
                entry.guarded = true;
            }
        }
        Ok(id)
    }

    /// Remove a guard; the frame's effective permissions revert to the
    /// mapping's original permissions once no guard covers it.
    pub fn remove_guard(&mut self, id: GuardId) -> Result<()> {
        let guard = self.guards.remove(&id).ok_or(SimError::NoSuchGuard(id))?;
        for gfn in guard.base_gfn..guard.base_gfn + guard.frame_count {
            let empty = if let Some(ids) = self.guards_by_gfn.get_mut(&gfn) {
                ids.retain(|g| *g != id);
                ids.is_empty()
            } else {
                false
            };
            if empty {
                self.guards_by_gfn.remove(&gfn);
                if let Some(Some(entry)) = self.entries.get_mut(gfn as usize) {
                    entry.guarded = false;
                }
            }
        }
        Ok(())
    }

    /// Restrict a guard to 128-byte sub-ranges of its (single) frame.
    pub fn set_spp_bitmap(&mut self, id: GuardId, bitmap: u32) -> Result<()> {
        let guard = self.guards.get_mut(&id).ok_or(SimError::NoSuchGuard(id))?;
        if guard.frame_count != 1 {
            return Err(SimError::HugePageUnsupported);
        }
        guard.spp_bitmap = Some(bitmap);
        Ok(())
    }

    pub fn guard(&self, id: GuardId) -> Option<&PageGuard> {
        self.guards.get(&id)
    }

    /// Effective permissions for a gfn: the original mapping permissions
    /// minus every kind currently cleared by a guard.
    pub fn effective_perms(&self, gfn: u64) -> Option<Perms> {
        let entry = self.resolve(gfn)?;
        let mut perms = entry.perms;
        if let Some(ids) = self.guards_by_gfn.get(&gfn) {
            for id in ids {
                let guard = &self.guards[id];
                perms.read &= !guard.kinds.read;
                perms.write &= !guard.kinds.write;
                perms.execute &= !guard.kinds.execute;
            }
        }
        Some(perms)
    }

    /// Decide whether an access to `gfn` at `offset_in_frame` traps, without
    /// performing it.
    #[inline]
    pub fn classify(&self, gfn: u64, offset_in_frame: u64, len: u64, kind: AccessKind) -> Classification {
        let mut out = Classification::default();
        let Some(ids) = self.guards_by_gfn.get(&gfn) else {
            return out;
        };
        for id in ids {
            let guard = &self.guards[id];
            let region_off = ((gfn - guard.base_gfn) << crate::paging::PAGE_SHIFT) + offset_in_frame;
            debug_assert!(region_off + len <= guard.region_len());
            if guard.traps(region_off, len, kind) {
                out.trapped = true;
                if guard.watches(region_off, len) {
                    out.relevant = true;
                }
            }
        }
        out
    }

    /// Invoke callbacks for a trapped event. Callbacks fire for relevant
    /// write events ("relevant address modification"); the
    /// `deliver_irrelevant` debug switch widens delivery to every trapped
    /// event. Returns the guard ids that received the event.
    pub fn deliver(&mut self, event: &MemoryEvent) -> Vec<GuardId> {
        let gfn = event.gpa >> crate::paging::PAGE_SHIFT;
        let Some(ids) = self.guards_by_gfn.get(&gfn).cloned() else {
            return Vec::new();
        };
        let len = event
            .new_value
            .as_ref()
            .map(|v| v.len() as u64)
            .unwrap_or(1);
        let mut delivered = Vec::new();
        for id in ids {
            let guard = self.guards.get_mut(&id).expect("guard index consistent");
            let region_off = ((gfn - guard.base_gfn) << crate::paging::PAGE_SHIFT)
                + (event.gpa & (crate::paging::PAGE_SIZE_4K - 1));
            if !guard.traps(region_off, len, event.kind) {
                continue;
            }
            let wants = if self.deliver_irrelevant {
                true
            } else {
                event.kind == AccessKind::Write && guard.watches(region_off, len)
            };
            if wants {
                if let Some(cb) = guard.callback.as_mut() {
                    cb(event);
                }
                delivered.push(id);
            }
        }
        delivered
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table_with_frame() -> SlatTable {
        let mut t = SlatTable::new(16);
        t.map(3, 0, Perms::RWX).unwrap();
        t
    }

    #[test]
    fn duplicate_mapping_rejected() {
        let mut t = table_with_frame();
        assert!(matches!(t.map(3, 1, Perms::RWX), Err(SimError::DuplicateMapping(3))));
    }

    #[test]
    fn guard_on_unmapped_frame_rejected() {
        let mut t = table_with_frame();
        let err = t.add_guard(7, 1, vec![(0, 4)], AccessKinds::ALL, None);
        assert!(matches!(err, Err(SimError::UnmappedFrame(7))));
    }

    #[test]
    fn classify_respects_kinds_and_ranges() {
        let mut t = table_with_frame();
        t.add_guard(3, 1, vec![(0x10, 4)], AccessKinds::WRITE, None).unwrap();
        let hit = t.classify(3, 0x10, 4, AccessKind::Write);
        assert!(hit.trapped && hit.relevant);
        let off = t.classify(3, 0x800, 4, AccessKind::Write);
        assert!(off.trapped && !off.relevant);
        let read = t.classify(3, 0x10, 4, AccessKind::Read);
        assert!(!read.trapped);
    }

    #[test]
    fn guard_removal_restores_perms() {
        let mut t = table_with_frame();
        let id = t.add_guard(3, 1, vec![(0, 4)], AccessKinds::WRITE, None).unwrap();
        assert!(!t.effective_perms(3).unwrap().write);
        t.remove_guard(id).unwrap();
        let perms = t.effective_perms(3).unwrap();
        assert!(perms.write && perms.read && perms.execute);
        assert!(!t.classify(3, 0, 4, AccessKind::Write).trapped);
    }

    #[test]
    fn spp_bitmap_gates_sub_ranges() {
        let mut t = table_with_frame();
        let id = t.add_guard(3, 1, vec![(0x00, 4)], AccessKinds::ALL, None).unwrap();
        t.set_spp_bitmap(id, 0b1).unwrap();
        assert!(t.classify(3, 0x40, 4, AccessKind::Write).trapped);
        assert!(!t.classify(3, 0x100, 4, AccessKind::Write).trapped);
        // Straddling into a set sub-range still traps.
        assert!(t.classify(3, 0x7C, 8, AccessKind::Write).trapped);
    }

    #[test]
    fn spp_requires_single_frame_guard() {
        let mut t = SlatTable::new(1024);
        for gfn in 512..512 + 8 {
            t.map(gfn, (gfn - 512) as u32, Perms::RWX).unwrap();
        }
        let id = t.add_guard(512, 8, vec![(0, 4)], AccessKinds::ALL, None).unwrap();
        assert!(matches!(t.set_spp_bitmap(id, u32::MAX), Err(SimError::HugePageUnsupported)));
    }
}
