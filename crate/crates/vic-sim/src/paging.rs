//! Guest-virtual addressing: 48-bit canonical addresses, the 9/9/9/9/12
//! index split, and the page-table entry encoding used by the simulated
//! guest.
//!
//! Page tables live inside guest physical frames like any other data; the
//! walk itself is performed by [`crate::guest::Guest::translate`], which
//! reads entries through the SLAT-backed frame store.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

pub const PAGE_SHIFT: u32 = 12;
pub const PAGE_SIZE_4K: u64 = 1 << PAGE_SHIFT;
pub const ENTRIES_PER_TABLE: u64 = 512;

/// Guest-virtual address. Bits 48..64 must sign-extend bit 47.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GuestVirtAddr(pub u64);

impl GuestVirtAddr {
    pub fn is_canonical(self) -> bool {
        let upper = self.0 >> 47;
        upper == 0 || upper == 0x1FFFF
    }

    /// Table index for a walk level (4 = root .. 1 = last table).
    #[inline]
    pub fn index(self, level: u8) -> u64 {
        debug_assert!((1..=4).contains(&level));
        (self.0 >> (PAGE_SHIFT + 9 * (level as u32 - 1))) & (ENTRIES_PER_TABLE - 1)
    }

    #[inline]
    pub fn offset(self, size: PageSize) -> u64 {
        self.0 & (size.bytes() - 1)
    }

    pub fn add(self, delta: u64) -> GuestVirtAddr {
        GuestVirtAddr(self.0.wrapping_add(delta))
    }
}

/// Guest-physical address; valid values stay below the configured RAM size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct GuestPhysAddr(pub u64);

impl GuestPhysAddr {
    #[inline]
    pub fn gfn(self) -> u64 {
        self.0 >> PAGE_SHIFT
    }
}

/// Mapping granularities supported by the walk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PageSize {
    Size4K,
    Size2M,
    Size1G,
}

impl PageSize {
    pub const fn bytes(self) -> u64 {
        match self {
            PageSize::Size4K => 4 << 10,
            PageSize::Size2M => 2 << 20,
            PageSize::Size1G => 1 << 30,
        }
    }

    pub const fn frames(self) -> u64 {
        self.bytes() >> PAGE_SHIFT
    }

    /// Walk level at which a leaf of this size terminates.
    pub const fn leaf_level(self) -> u8 {
        match self {
            PageSize::Size4K => 1,
            PageSize::Size2M => 2,
            PageSize::Size1G => 3,
        }
    }
}

/// Access permissions carried by page-table entries and SLAT entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Perms {
    pub read: bool,
    pub write: bool,
    pub execute: bool,
}

impl Perms {
    pub const RWX: Perms = Perms { read: true, write: true, execute: true };
    pub const RX: Perms = Perms { read: true, write: false, execute: true };
    pub const RW: Perms = Perms { read: true, write: true, execute: false };
    pub const R: Perms = Perms { read: true, write: false, execute: false };
}

/// One page-table entry, stored in guest memory as a u64.
///
/// bit 0 present, bit 1 writable, bit 2 executable, bit 7 leaf (levels 2/3),
/// bits 12..52 frame base.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PageTableEntry {
    pub present: bool,
    pub writable: bool,
    pub executable: bool,
    pub leaf: bool,
    pub frame: GuestPhysAddr,
}

const PTE_PRESENT: u64 = 1 << 0;
const PTE_WRITABLE: u64 = 1 << 1;
const PTE_EXECUTABLE: u64 = 1 << 2;
const PTE_LEAF: u64 = 1 << 7;
const PTE_ADDR_MASK: u64 = 0x000F_FFFF_FFFF_F000;

impl PageTableEntry {
    pub fn encode(self) -> u64 {
        if !self.present {
            return 0;
        }
        let mut raw = PTE_PRESENT | (self.frame.0 & PTE_ADDR_MASK);
        if self.writable {
            raw |= PTE_WRITABLE;
        }
        if self.executable {
            raw |= PTE_EXECUTABLE;
        }
        if self.leaf {
            raw |= PTE_LEAF;
        }
        raw
    }

    pub fn decode(raw: u64) -> PageTableEntry {
        PageTableEntry {
            present: raw & PTE_PRESENT != 0,
            writable: raw & PTE_WRITABLE != 0,
            executable: raw & PTE_EXECUTABLE != 0,
            leaf: raw & PTE_LEAF != 0,
            frame: GuestPhysAddr(raw & PTE_ADDR_MASK),
        }
    }
}

/// A registered guest process: pid, root table frame, display name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProcessContext {
    pub pid: u32,
    pub page_directory_base: GuestPhysAddr,
    pub name: String,
}

/// Outcome of a successful walk.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Translation {
    pub gpa: GuestPhysAddr,
    pub page_size: PageSize,
    pub writable: bool,
    pub executable: bool,
}

impl Translation {
    /// Base gfn of the containing guest page.
    pub fn page_base_gfn(self) -> u64 {
        (self.gpa.0 & !(self.page_size.bytes() - 1)) >> PAGE_SHIFT
    }
}

pub fn check_alignment(addr: u64, required: u64) -> Result<()> {
    if addr & (required - 1) != 0 {
        return Err(SimError::Misaligned { addr, required });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_boundaries() {
        assert!(GuestVirtAddr(0).is_canonical());
        assert!(GuestVirtAddr(0x0000_7FFF_FFFF_FFFF).is_canonical());
        assert!(!GuestVirtAddr(0x0000_8000_0000_0000).is_canonical());
        assert!(GuestVirtAddr(0xFFFF_8000_0000_0000).is_canonical());
        assert!(!GuestVirtAddr(0xFFFE_8000_0000_0000).is_canonical());
    }

    #[test]
    fn index_split_matches_bit_slices() {
        // Independent bit-slice computation of the 9/9/9/9/12 split.
        let gva = GuestVirtAddr(0x0000_7FFF_FFFF_F123);
        let oracle = |shift: u32| (gva.0 >> shift) & 0x1FF;
        assert_eq!(gva.index(4), oracle(39));
        assert_eq!(gva.index(3), oracle(30));
        assert_eq!(gva.index(2), oracle(21));
        assert_eq!(gva.index(1), oracle(12));
        assert_eq!(
            (gva.index(4), gva.index(3), gva.index(2), gva.index(1)),
            (255, 511, 511, 511)
        );
        assert_eq!(gva.offset(PageSize::Size4K), 0x123);
    }

    #[test]
    fn pte_round_trip() {
        let pte = PageTableEntry {
            present: true,
            writable: true,
            executable: false,
            leaf: true,
            frame: GuestPhysAddr(0x20_0000),
        };
        assert_eq!(PageTableEntry::decode(pte.encode()), pte);
        assert_eq!(PageTableEntry::decode(0), PageTableEntry::default());
    }

    #[test]
    fn non_present_encodes_to_zero() {
        let pte = PageTableEntry { present: false, writable: true, ..Default::default() };
        assert_eq!(pte.encode(), 0);
    }
}
