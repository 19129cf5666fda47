//! The simulated guest: host frame store, guest-physical frame allocator,
//! per-process page tables, the SLAT access funnel, and the logical clock.
//!
//! Every guest access walks the page tables (no TLB is simulated) and is
//! priced by the [`CostModel`]: trapped accesses cost a vmexit, untrapped
//! ones the baseline. Host-side introspection reads and writes go straight
//! to the stored frame bytes: they charge nothing, fire no guards, and see
//! ciphertext when frame encryption is enabled.

use crate::error::{Result, SimError};
use crate::paging::{
    check_alignment, GuestPhysAddr, GuestVirtAddr, PageSize, PageTableEntry, Perms,
    ProcessContext, Translation, PAGE_SHIFT, PAGE_SIZE_4K,
};
use crate::slat::{
    AccessKind, AccessKinds, Classification, CostLedger, CostModel, GuardCallback, GuardId,
    MemoryEvent, SlatTable,
};

const FRAME_BYTES: usize = PAGE_SIZE_4K as usize;

type Frame = [u8; FRAME_BYTES];

/// Keyed per-frame keystream standing in for guest memory encryption.
/// Deterministic and invertible; strength is a non-goal, host opacity is
/// the point.
#[derive(Debug, Clone, Copy)]
pub struct FrameCipher {
    seed: u64,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

impl FrameCipher {
    pub fn new(seed: u64) -> Self {
        FrameCipher { seed }
    }

    #[inline]
    fn keystream_word(&self, gfn: u64, word_index: u64) -> u64 {
        splitmix64(
            self.seed
                ^ gfn.wrapping_mul(0xA076_1D64_78BD_642F)
                ^ word_index.wrapping_mul(0xE703_7ED1_A0B4_28DB),
        )
    }

    /// XOR the keystream for `[offset, offset + buf.len())` of frame `gfn`
    /// into `buf`. Applying twice round-trips.
    pub fn apply(&self, gfn: u64, offset: u64, buf: &mut [u8]) {
        for (i, byte) in buf.iter_mut().enumerate() {
            let pos = offset + i as u64;
            let word = self.keystream_word(gfn, pos / 8);
            *byte ^= (word >> ((pos % 8) * 8)) as u8;
        }
    }
}

/// Guest-wide knobs fixed at construction.
#[derive(Debug, Clone)]
pub struct GuestConfig {
    pub ram_bytes: u64,
    pub cost: CostModel,
    /// Faithful #UD behaviour for privileged VMX instructions executed by
    /// the guest. `false` betrays the hypervisor to the emulation probe.
    pub ud_on_vmread: bool,
    /// Keyed frame transform applied to all guest frames (the domain-enclave
    /// analog). `None` stores plaintext.
    pub encryption_seed: Option<u64>,
}

impl Default for GuestConfig {
    fn default() -> Self {
        GuestConfig {
            ram_bytes: 256 << 20,
            cost: CostModel::default(),
            ud_on_vmread: true,
            encryption_seed: None,
        }
    }
}

/// Result of one access through the SLAT funnel.
#[derive(Debug, Clone, Copy)]
pub struct AccessOutcome {
    pub trapped: bool,
    pub relevant: bool,
    pub charged_ns: u64,
}

/// A callback delivery recorded for the event pump.
#[derive(Debug, Clone)]
pub struct Delivery {
    pub guard_id: GuardId,
    pub timestamp: u64,
    pub gva: u64,
    pub gpa: u64,
    pub old_value: Option<Vec<u8>>,
    pub new_value: Option<Vec<u8>>,
    pub relevant: bool,
}

/// Summary of one completed logical tick.
#[derive(Debug, Clone, Copy)]
pub struct TickOutcome {
    pub tick: u64,
    pub start_ns: u64,
    pub end_ns: u64,
    /// work + charged event cost + extra guest work, before the budget floor.
    pub cost_ns: u64,
    pub trapped_events: u64,
}

pub struct Guest {
    config: GuestConfig,
    frames: Vec<Option<Box<Frame>>>,
    pub slat: SlatTable,
    next_gpa: u64,
    processes: Vec<ProcessContext>,
    next_pid: u32,
    cipher: Option<FrameCipher>,
    pub ledger: CostLedger,
    /// Completed ticks.
    pub tick: u64,
    /// Wall-side logical clock in nanoseconds.
    pub clock_ns: u64,
    tick_extra_ns: u64,
    tick_start_trapped: u64,
    deliveries: Vec<Delivery>,
    pub session_attached: bool,
}

impl Guest {
    pub fn new(config: GuestConfig) -> Result<Self> {
        config.cost.validate()?;
        let gfn_capacity = config.ram_bytes >> PAGE_SHIFT;
        Ok(Guest {
            cipher: config.encryption_seed.map(FrameCipher::new),
            slat: SlatTable::new(gfn_capacity),
            frames: Vec::new(),
            next_gpa: 0,
            processes: Vec::new(),
            next_pid: 100,
            ledger: CostLedger::default(),
            tick: 0,
            clock_ns: 0,
            tick_extra_ns: 0,
            tick_start_trapped: 0,
            deliveries: Vec::new(),
            session_attached: false,
            config,
        })
    }

    pub fn config(&self) -> &GuestConfig {
        &self.config
    }

    pub fn encryption_enabled(&self) -> bool {
        self.cipher.is_some()
    }

    // ------------------------------------------------------------------
    // Frame allocation and SLAT setup
    // ------------------------------------------------------------------

    /// Reserve a host frame slot; content is all zeros until written.
    pub fn host_alloc_frame(&mut self) -> u32 {
        self.frames.push(None);
        (self.frames.len() - 1) as u32
    }

    /// Allocate a zero-filled guest-physical frame of the given size class,
    /// aligned to it, and back it with host frames in the SLAT.
    pub fn alloc_frame(&mut self, size: PageSize) -> Result<GuestPhysAddr> {
        let bytes = size.bytes();
        let base = (self.next_gpa + bytes - 1) & !(bytes - 1);
        if base + bytes > self.config.ram_bytes {
            return Err(SimError::OutOfGuestMemory);
        }
        let base_gfn = base >> PAGE_SHIFT;
        for gfn in base_gfn..base_gfn + size.frames() {
            let hf = self.host_alloc_frame();
            self.slat.map(gfn, hf, Perms::RWX)?;
        }
        // Zero-filled means zero in the guest view; under encryption that
        // stores the keystream rather than literal zeros.
        if self.cipher.is_some() {
            let zeros = [0u8; FRAME_BYTES];
            for gfn in base_gfn..base_gfn + size.frames() {
                self.phys_write_guest(GuestPhysAddr(gfn << PAGE_SHIFT), &zeros)?;
            }
        }
        self.next_gpa = base + bytes;
        Ok(GuestPhysAddr(base))
    }

    // ------------------------------------------------------------------
    // Raw physical access (host frame store)
    // ------------------------------------------------------------------

    fn host_frame_of(&self, gfn: u64) -> Result<u32> {
        self.slat
            .resolve(gfn)
            .map(|e| e.host_frame)
            .ok_or(SimError::SlatViolationUnhandled(gfn << PAGE_SHIFT))
    }

    /// Copy stored bytes without decryption. The host-side view.
    pub fn phys_read_raw(&self, gpa: GuestPhysAddr, buf: &mut [u8]) -> Result<()> {
        let mut done = 0usize;
        while done < buf.len() {
            let pos = gpa.0 + done as u64;
            let off = (pos & (PAGE_SIZE_4K - 1)) as usize;
            let chunk = buf.len().min(done + FRAME_BYTES - off) - done;
            let hf = self.host_frame_of(pos >> PAGE_SHIFT)? as usize;
            match &self.frames[hf] {
                Some(frame) => buf[done..done + chunk].copy_from_slice(&frame[off..off + chunk]),
                None => buf[done..done + chunk].fill(0),
            }
            done += chunk;
        }
        Ok(())
    }

    /// Store bytes without encryption. The host-side view.
    pub fn phys_write_raw(&mut self, gpa: GuestPhysAddr, data: &[u8]) -> Result<()> {
        let mut done = 0usize;
        while done < data.len() {
            let pos = gpa.0 + done as u64;
            let off = (pos & (PAGE_SIZE_4K - 1)) as usize;
            let chunk = data.len().min(done + FRAME_BYTES - off) - done;
            let hf = self.host_frame_of(pos >> PAGE_SHIFT)? as usize;
            let frame = self.frames[hf].get_or_insert_with(|| Box::new([0u8; FRAME_BYTES]));
            frame[off..off + chunk].copy_from_slice(&data[done..done + chunk]);
            done += chunk;
        }
        Ok(())
    }

    /// Guest-view physical read: stored bytes passed through the cipher.
    /// Used by the walker and by guest data accesses; charges nothing.
    pub fn phys_read_guest(&self, gpa: GuestPhysAddr, buf: &mut [u8]) -> Result<()> {
        self.phys_read_raw(gpa, buf)?;
        if let Some(cipher) = &self.cipher {
            // Accesses stay within one frame per chunk in practice, but be
            // correct for arbitrary spans.
            let mut done = 0usize;
            while done < buf.len() {
                let pos = gpa.0 + done as u64;
                let off = pos & (PAGE_SIZE_4K - 1);
                let chunk = buf.len().min(done + (PAGE_SIZE_4K - off) as usize) - done;
                cipher.apply(pos >> PAGE_SHIFT, off, &mut buf[done..done + chunk]);
                done += chunk;
            }
        }
        Ok(())
    }

    /// Guest-view physical write: plaintext enciphered before storing.
    pub fn phys_write_guest(&mut self, gpa: GuestPhysAddr, data: &[u8]) -> Result<()> {
        match self.cipher {
            None => self.phys_write_raw(gpa, data),
            Some(cipher) => {
                let mut owned = data.to_vec();
                let mut done = 0usize;
                while done < owned.len() {
                    let pos = gpa.0 + done as u64;
                    let off = pos & (PAGE_SIZE_4K - 1);
                    let chunk = owned.len().min(done + (PAGE_SIZE_4K - off) as usize) - done;
                    cipher.apply(pos >> PAGE_SHIFT, off, &mut owned[done..done + chunk]);
                    done += chunk;
                }
                self.phys_write_raw(gpa, &owned)
            }
        }
    }

    fn phys_read_u64_guest(&self, gpa: GuestPhysAddr) -> Result<u64> {
        let mut buf = [0u8; 8];
        self.phys_read_guest(gpa, &mut buf)?;
        Ok(u64::from_le_bytes(buf))
    }

    fn phys_write_u64_guest(&mut self, gpa: GuestPhysAddr, value: u64) -> Result<()> {
        self.phys_write_guest(gpa, &value.to_le_bytes())
    }

    // ------------------------------------------------------------------
    // Processes and page tables
    // ------------------------------------------------------------------

    /// Register a process and allocate its root page table frame.
    pub fn create_process(&mut self, name: &str) -> Result<ProcessContext> {
        let root = self.alloc_frame(PageSize::Size4K)?;
        let ctx = ProcessContext {
            pid: self.next_pid,
            page_directory_base: root,
            name: name.to_string(),
        };
        self.next_pid += 1;
        self.processes.push(ctx.clone());
        Ok(ctx)
    }

    pub fn process_by_name(&self, name: &str) -> Result<ProcessContext> {
        self.processes
            .iter()
            .find(|p| p.name == name)
            .cloned()
            .ok_or_else(|| SimError::NoSuchProcess(name.to_string()))
    }

    pub fn process_by_pid(&self, pid: u32) -> Result<ProcessContext> {
        self.processes
            .iter()
            .find(|p| p.pid == pid)
            .cloned()
            .ok_or_else(|| SimError::NoSuchProcess(format!("pid {pid}")))
    }

    fn read_table_entry(&self, table: GuestPhysAddr, index: u64) -> Result<PageTableEntry> {
        let raw = self.phys_read_u64_guest(GuestPhysAddr(table.0 + index * 8))?;
        Ok(PageTableEntry::decode(raw))
    }

    fn write_table_entry(
        &mut self,
        table: GuestPhysAddr,
        index: u64,
        entry: PageTableEntry,
    ) -> Result<()> {
        self.phys_write_u64_guest(GuestPhysAddr(table.0 + index * 8), entry.encode())
    }

    /// Map `gva -> gpa` with the given size class, creating intermediate
    /// tables on demand. Remapping requires an explicit unmap first.
    pub fn map_page(
        &mut self,
        process: &ProcessContext,
        gva: GuestVirtAddr,
        gpa: GuestPhysAddr,
        size: PageSize,
        perms: Perms,
    ) -> Result<()> {
        if !gva.is_canonical() {
            return Err(SimError::NonCanonicalAddress(gva.0));
        }
        check_alignment(gva.0, size.bytes())?;
        check_alignment(gpa.0, size.bytes())?;
        let leaf_level = size.leaf_level();
        let mut table = process.page_directory_base;
        for level in (leaf_level + 1..=4).rev() {
            let index = gva.index(level);
            let entry = self.read_table_entry(table, index)?;
            if entry.present {
                if entry.leaf {
                    return Err(SimError::AlreadyMapped(gva.0));
                }
                table = entry.frame;
            } else {
                let next = self.alloc_frame(PageSize::Size4K)?;
                self.write_table_entry(
                    table,
                    index,
                    PageTableEntry {
                        present: true,
                        writable: true,
                        executable: true,
                        leaf: false,
                        frame: next,
                    },
                )?;
                table = next;
            }
        }
        let index = gva.index(leaf_level);
        let existing = self.read_table_entry(table, index)?;
        if existing.present {
            return Err(SimError::AlreadyMapped(gva.0));
        }
        self.write_table_entry(
            table,
            index,
            PageTableEntry {
                present: true,
                writable: perms.write,
                executable: perms.execute,
                leaf: leaf_level > 1,
                frame: gpa,
            },
        )
    }

    /// Clear the leaf entry for `gva`.
    pub fn unmap_page(&mut self, process: &ProcessContext, gva: GuestVirtAddr) -> Result<()> {
        let tr = self.translate(process, gva)?;
        let leaf_level = tr.page_size.leaf_level();
        let mut table = process.page_directory_base;
        for level in (leaf_level + 1..=4).rev() {
            let entry = self.read_table_entry(table, gva.index(level))?;
            table = entry.frame;
        }
        self.write_table_entry(table, gva.index(leaf_level), PageTableEntry::default())
    }

    /// Four-level walk with the 9/9/9/9/12 split; leaf entries are honored
    /// at levels 2 (2 MiB) and 3 (1 GiB). Walker reads charge nothing.
    pub fn translate(&self, process: &ProcessContext, gva: GuestVirtAddr) -> Result<Translation> {
        if !gva.is_canonical() {
            return Err(SimError::NonCanonicalAddress(gva.0));
        }
        let mut table = process.page_directory_base;
        for level in (1..=4).rev() {
            let entry = self.read_table_entry(table, gva.index(level))?;
            if !entry.present {
                return Err(SimError::PageNotPresent { gva: gva.0, level });
            }
            if level == 1 || entry.leaf {
                let size = match level {
                    1 => PageSize::Size4K,
                    2 => PageSize::Size2M,
                    3 => PageSize::Size1G,
                    _ => return Err(SimError::PageNotPresent { gva: gva.0, level }),
                };
                return Ok(Translation {
                    gpa: GuestPhysAddr(entry.frame.0 | gva.offset(size)),
                    page_size: size,
                    writable: entry.writable,
                    executable: entry.executable,
                });
            }
            table = entry.frame;
        }
        unreachable!("walk terminates at level 1");
    }

    // ------------------------------------------------------------------
    // The guest access funnel
    // ------------------------------------------------------------------

    /// Route one within-frame access through the SLAT: price it, trap it if
    /// guarded, emulate it, and deliver the event. The single funnel for all
    /// guest-originated accesses.
    fn slat_access(
        &mut self,
        pid: u32,
        gva: GuestVirtAddr,
        gpa: GuestPhysAddr,
        kind: AccessKind,
        data: AccessData<'_>,
    ) -> Result<AccessOutcome> {
        let gfn = gpa.gfn();
        let offset = gpa.0 & (PAGE_SIZE_4K - 1);
        let len = data.len() as u64;
        debug_assert!(offset + len <= PAGE_SIZE_4K);
        let entry = self
            .slat
            .resolve(gfn)
            .ok_or(SimError::SlatViolationUnhandled(gpa.0))?;
        let allowed = match kind {
            AccessKind::Read => entry.perms.read,
            AccessKind::Write => entry.perms.write,
            AccessKind::Execute => entry.perms.execute,
        };
        if !allowed {
            return Err(SimError::SlatViolationUnhandled(gpa.0));
        }
        let Classification { trapped, relevant } = self.slat.classify(gfn, offset, len, kind);

        let charged = if trapped {
            self.ledger.trapped_accesses += 1;
            if relevant {
                self.ledger.relevant_events += 1;
            }
            let cost = self.config.cost.vmexit_cost_ns;
            if self.config.cost.tsc_offset_enabled {
                self.ledger.hidden_ns += cost;
            }
            cost
        } else {
            self.ledger.untrapped_accesses += 1;
            self.config.cost.baseline_access_cost_ns
        };
        self.ledger.charge(charged);

        // Emulate the access. For trapped writes capture old bytes first.
        let mut old_value = None;
        let mut new_value = None;
        match data {
            AccessData::Read(buf) => self.phys_read_guest(gpa, buf)?,
            AccessData::Write(bytes) => {
                if trapped {
                    let mut old = vec![0u8; bytes.len()];
                    self.phys_read_guest(gpa, &mut old)?;
                    old_value = Some(old);
                    new_value = Some(bytes.to_vec());
                }
                self.phys_write_guest(gpa, bytes)?;
            }
            AccessData::Execute => {
                let mut fetch = [0u8; 1];
                self.phys_read_guest(gpa, &mut fetch)?;
            }
        }

        if trapped {
            let event = MemoryEvent {
                gpa: gpa.0,
                gva: gva.0,
                pid,
                kind,
                old_value,
                new_value,
                relevant,
                timestamp: self.tick,
            };
            let delivered = self.slat.deliver(&event);
            for guard_id in delivered {
                self.deliveries.push(Delivery {
                    guard_id,
                    timestamp: event.timestamp,
                    gva: event.gva,
                    gpa: event.gpa,
                    old_value: event.old_value.clone(),
                    new_value: event.new_value.clone(),
                    relevant: event.relevant,
                });
            }
        }
        Ok(AccessOutcome { trapped, relevant, charged_ns: charged })
    }

    fn guest_access(
        &mut self,
        process: &ProcessContext,
        gva: GuestVirtAddr,
        kind: AccessKind,
        mut data: AccessData<'_>,
    ) -> Result<()> {
        let len = data.len();
        if len == 0 {
            return Ok(());
        }
        // Validate every touched page up front so partial failures cannot
        // leave a half-performed access behind.
        let mut translations = Vec::new();
        let mut done = 0usize;
        while done < len {
            let va = gva.add(done as u64);
            let tr = self.translate(process, va)?;
            if kind == AccessKind::Write && !tr.writable {
                return Err(SimError::WriteProtected(va.0));
            }
            if kind == AccessKind::Execute && !tr.executable {
                return Err(SimError::SlatViolationUnhandled(tr.gpa.0));
            }
            let frame_off = (va.0 & (PAGE_SIZE_4K - 1)) as usize;
            let chunk = len.min(done + FRAME_BYTES - frame_off) - done;
            translations.push((done, chunk, va, tr.gpa));
            done += chunk;
        }
        for (start, chunk, va, gpa) in translations {
            let piece = match &mut data {
                AccessData::Read(buf) => AccessData::Read(&mut buf[start..start + chunk]),
                AccessData::Write(bytes) => AccessData::Write(&bytes[start..start + chunk]),
                AccessData::Execute => AccessData::Execute,
            };
            self.slat_access(process.pid, va, gpa, kind, piece)?;
        }
        Ok(())
    }

    /// Guest-originated read; routes through the SLAT so guards fire.
    pub fn guest_read(
        &mut self,
        process: &ProcessContext,
        gva: GuestVirtAddr,
        len: usize,
    ) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; len];
        self.guest_access(process, gva, AccessKind::Read, AccessData::Read(&mut buf))?;
        Ok(buf)
    }

    /// Guest-originated write; requires a writable mapping.
    pub fn guest_write(
        &mut self,
        process: &ProcessContext,
        gva: GuestVirtAddr,
        data: &[u8],
    ) -> Result<()> {
        self.guest_access(process, gva, AccessKind::Write, AccessData::Write(data))
    }

    /// Guest instruction fetch at `gva` (one byte).
    pub fn guest_execute(&mut self, process: &ProcessContext, gva: GuestVirtAddr) -> Result<()> {
        self.guest_access(process, gva, AccessKind::Execute, AccessData::Execute)
    }

    // ------------------------------------------------------------------
    // Host-side (introspection) access
    // ------------------------------------------------------------------

    /// Translated host read: walks the target's tables, then copies the
    /// stored frame bytes. No guards fire and no cost is charged; under
    /// encryption the stored (transformed) bytes come back verbatim.
    pub fn host_read(
        &self,
        process: &ProcessContext,
        gva: GuestVirtAddr,
        len: usize,
    ) -> Result<Vec<u8>> {
        let mut out = vec![0u8; len];
        let mut done = 0usize;
        while done < len {
            let va = gva.add(done as u64);
            let tr = self.translate(process, va)?;
            let frame_off = (va.0 & (PAGE_SIZE_4K - 1)) as usize;
            let chunk = len.min(done + FRAME_BYTES - frame_off) - done;
            self.phys_read_raw(tr.gpa, &mut out[done..done + chunk])?;
            done += chunk;
        }
        Ok(out)
    }

    /// Translated host write; ignores guest page permissions (the hypervisor
    /// outranks them) and is invisible to guards.
    pub fn host_write(
        &mut self,
        process: &ProcessContext,
        gva: GuestVirtAddr,
        data: &[u8],
    ) -> Result<()> {
        let mut done = 0usize;
        while done < data.len() {
            let va = gva.add(done as u64);
            let tr = self.translate(process, va)?;
            let frame_off = (va.0 & (PAGE_SIZE_4K - 1)) as usize;
            let chunk = data.len().min(done + FRAME_BYTES - frame_off) - done;
            self.phys_write_raw(tr.gpa, &data[done..done + chunk])?;
            done += chunk;
        }
        Ok(())
    }

    // ------------------------------------------------------------------
    // Guards (vmi-facing wrappers)
    // ------------------------------------------------------------------

    /// Install a page guard over the guest page containing `translation`.
    /// Watch ranges are absolute gpa ranges clipped to the region.
    pub fn set_page_guard(
        &mut self,
        translation: Translation,
        watch_gpa: u64,
        watch_len: u64,
        kinds: AccessKinds,
        callback: Option<GuardCallback>,
    ) -> Result<GuardId> {
        let base_gfn = translation.page_base_gfn();
        let frames = translation.page_size.frames();
        let region_base = base_gfn << PAGE_SHIFT;
        let region_end = region_base + (frames << PAGE_SHIFT);
        let start = watch_gpa.max(region_base);
        let end = (watch_gpa + watch_len).min(region_end);
        let ranges = if start < end {
            vec![(start - region_base, end - start)]
        } else {
            Vec::new()
        };
        self.slat.add_guard(base_gfn, frames, ranges, kinds, callback)
    }

    pub fn drain_deliveries(&mut self) -> Vec<Delivery> {
        std::mem::take(&mut self.deliveries)
    }

    pub fn pending_deliveries(&self) -> usize {
        self.deliveries.len()
    }

    // ------------------------------------------------------------------
    // Clock and tick accounting
    // ------------------------------------------------------------------

    /// Guest-visible clock: the wall clock minus whatever the hypervisor
    /// hid via TSC offsetting.
    pub fn guest_visible_ns(&self) -> u64 {
        self.clock_ns - self.ledger.hidden_ns
    }

    pub fn begin_tick(&mut self) {
        self.ledger.tick_charged_ns = 0;
        self.tick_extra_ns = 0;
        self.tick_start_trapped = self.ledger.trapped_accesses;
    }

    /// Charge additional in-guest work (probes and the like) to this tick.
    pub fn charge_extra(&mut self, ns: u64) {
        self.tick_extra_ns += ns;
    }

    /// Finish the tick: the tick occupies `max(budget, work + charges)` of
    /// wall time.
    pub fn end_tick(&mut self, work_ns: u64, budget_ns: u64) -> TickOutcome {
        let cost = work_ns + self.ledger.tick_charged_ns + self.tick_extra_ns;
        let span = cost.max(budget_ns);
        let outcome = TickOutcome {
            tick: self.tick,
            start_ns: self.clock_ns,
            end_ns: self.clock_ns + span,
            cost_ns: cost,
            trapped_events: self.ledger.trapped_accesses - self.tick_start_trapped,
        };
        self.clock_ns += span;
        self.tick += 1;
        outcome
    }

    // ------------------------------------------------------------------
    // In-guest probe primitives
    // ------------------------------------------------------------------

    /// Run the serializing-instruction timing sequence. Each iteration costs
    /// the instruction baseline plus a vmexit; TSC offsetting hides the
    /// vmexit share from the guest-visible clock. Returns probed/baseline.
    /// The full cost is charged to the current tick.
    pub fn timing_probe_ratio(&mut self, iterations: u32) -> f64 {
        let iters = iterations as u64;
        let baseline = self.config.cost.baseline_access_cost_ns;
        let vmexit = self.config.cost.vmexit_cost_ns;
        let visible = if self.config.cost.tsc_offset_enabled {
            self.ledger.hidden_ns += iters * vmexit;
            iters * baseline
        } else {
            iters * (baseline + vmexit)
        };
        self.charge_extra(iters * (baseline + vmexit));
        visible as f64 / (iters * baseline) as f64
    }

    /// Execute the privileged-instruction check: on faithful hardware the
    /// instruction raises #UD; a sloppy hypervisor lets it "succeed".
    /// Returns true when the artifact betrays virtualization.
    pub fn vmread_artifact(&self) -> bool {
        !self.config.ud_on_vmread
    }

    // ------------------------------------------------------------------
    // State hashing (determinism checks)
    // ------------------------------------------------------------------

    /// FNV-1a over the stored bytes of `count` frames starting at
    /// `base_gfn`. Host-side and free.
    pub fn hash_frames(&self, base_gfn: u64, count: u64) -> u64 {
        let mut hash: u64 = 0xCBF2_9CE4_8422_2325;
        let mut buf = [0u8; FRAME_BYTES];
        for gfn in base_gfn..base_gfn + count {
            if let Ok(hf) = self.host_frame_of(gfn) {
                match &self.frames[hf as usize] {
                    Some(frame) => buf.copy_from_slice(&frame[..]),
                    None => buf.fill(0),
                }
                for b in buf {
                    hash ^= b as u64;
                    hash = hash.wrapping_mul(0x0000_0100_0000_01B3);
                }
            }
        }
        hash
    }
}

enum AccessData<'a> {
    Read(&'a mut [u8]),
    Write(&'a [u8]),
    Execute,
}

impl AccessData<'_> {
    fn len(&self) -> usize {
        match self {
            AccessData::Read(buf) => buf.len(),
            AccessData::Write(bytes) => bytes.len(),
            AccessData::Execute => 1,
        }
    }
}
