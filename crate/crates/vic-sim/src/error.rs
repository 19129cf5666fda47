//! Error type shared across the simulation layers.

use thiserror::Error;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, SimError>;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("out of guest memory")]
    OutOfGuestMemory,
    #[error("address {addr:#x} not aligned to {required:#x}")]
    Misaligned { addr: u64, required: u64 },
    #[error("virtual address {0:#x} is already mapped")]
    AlreadyMapped(u64),
    #[error("page not present at walk level {level} for gva {gva:#x}")]
    PageNotPresent { gva: u64, level: u8 },
    #[error("non-canonical virtual address {0:#x}")]
    NonCanonicalAddress(u64),
    #[error("write to read-only page at gva {0:#x}")]
    WriteProtected(u64),
    #[error("gfn {0:#x} is already mapped in the SLAT")]
    DuplicateMapping(u64),
    #[error("gfn {0:#x} is not mapped in the SLAT")]
    UnmappedFrame(u64),
    #[error("sub-page protection requires a 4 KiB frame")]
    HugePageUnsupported,
    #[error("unhandled SLAT violation at gpa {0:#x}")]
    SlatViolationUnhandled(u64),
    #[error("guard callback attempted to re-enter guest execution")]
    RecursiveGuestEntry,
    #[error("no process named {0:?} is registered")]
    NoSuchProcess(String),
    #[error("a session is already attached to this guest")]
    SessionAlreadyAttached,
    #[error("input endpoint unavailable: {0}")]
    EndpointUnavailable(String),
    #[error("input channel is closed")]
    ChannelClosed,
    #[error("no guard with id {0}")]
    NoSuchGuard(u64),
    #[error("cheat offsets no longer resolve: {0}")]
    StaleOffsets(String),
    #[error("mitigation {0:?} must be applied before game initialization")]
    IncompatibleAtRuntime(String),
    #[error("series length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("precondition violated: {0}")]
    PreconditionViolated(&'static str),
    #[error("projection matrix contains non-finite entries")]
    InvalidMatrix,
    #[error("offsets file missing required key {0:?}")]
    MissingOffsetKey(&'static str),
    #[error("malformed offsets line {line}: {reason}")]
    BadOffsetsLine { line: usize, reason: String },
    #[error("malformed report: {0}")]
    BadReport(String),
    #[error("io failure: {0}")]
    Io(#[from] std::io::Error),
}
