//! The defender side: in-guest probes (timing, emulation artifacts, state
//! redundancy) and the game-side mitigations (huge pages, code+data
//! colocation, memory encryption).
//!
//! Probes run inside the guest's tick budget and are charged like any guest
//! code, so heavy probing itself costs frames.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::game::{Game, GameConfig};
use crate::guest::Guest;

/// Timing ratio above this is an outright detection; the regimes the cost
/// model produces sit orders of magnitude apart.
pub const TIMING_DETECTED_THRESHOLD: f64 = 10.0;
/// Gray zone between faithful and visibly-virtualized timing.
pub const TIMING_SUSPICIOUS_THRESHOLD: f64 = 2.0;
/// Iterations of the serializing-instruction sequence per scheduled probe.
pub const PROBE_ITERATIONS: u32 = 100;

/// How the hypervisor presents itself to in-guest probes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HypervisorProfile {
    /// Hide vmexit latency from the guest-visible clock.
    pub tsc_offset_enabled: bool,
    /// Raise #UD on vmread exactly like bare metal would.
    pub ud_on_vmread: bool,
}

impl Default for HypervisorProfile {
    fn default() -> Self {
        HypervisorProfile { tsc_offset_enabled: false, ud_on_vmread: true }
    }
}

impl HypervisorProfile {
    /// A profile that leaks nothing to the probes implemented here.
    pub fn faithful() -> Self {
        HypervisorProfile { tsc_offset_enabled: true, ud_on_vmread: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Clean,
    Suspicious,
    Detected,
}

/// One probe sample. `verdict` is `Detected` iff any flag is set or the
/// timing ratio exceeds [`TIMING_DETECTED_THRESHOLD`].
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ProbeReport {
    pub timing_ratio: f64,
    pub vm_instruction_artifact: bool,
    pub redundancy_mismatch: bool,
    pub verdict: Verdict,
}

pub fn evaluate(timing_ratio: f64, vm_instruction_artifact: bool, redundancy_mismatch: bool) -> ProbeReport {
    let verdict = if vm_instruction_artifact
        || redundancy_mismatch
        || timing_ratio > TIMING_DETECTED_THRESHOLD
    {
        Verdict::Detected
    } else if timing_ratio > TIMING_SUSPICIOUS_THRESHOLD {
        Verdict::Suspicious
    } else {
        Verdict::Clean
    };
    ProbeReport { timing_ratio, vm_instruction_artifact, redundancy_mismatch, verdict }
}

/// The rdtsc-fenced serializing-instruction loop: measures how long the
/// always-exiting instruction appears to take on the guest clock, relative
/// to the baseline instruction cost. TSC offsetting drives the ratio to 1.
pub fn timing_probe(guest: &mut Guest, iterations: u32) -> Result<f64> {
    if iterations < 100 {
        return Err(SimError::PreconditionViolated("timing probe needs at least 100 iterations"));
    }
    Ok(guest.timing_probe_ratio(iterations))
}

/// Execute the privileged vmread check: true when the missing #UD betrays
/// the hypervisor.
pub fn emulation_probe(guest: &Guest) -> bool {
    guest.vmread_artifact()
}

/// Dual-stored fire state comparison, as sampled by the game at the top of
/// the current tick (before the mirror step).
pub fn redundancy_check(game: &Game) -> bool {
    game.last_redundancy_mismatch
}

/// The per-interval probe bundle the toy game schedules.
pub fn run_probes(guest: &mut Guest, redundancy_mismatch: bool) -> ProbeReport {
    let ratio = guest.timing_probe_ratio(PROBE_ITERATIONS);
    let artifact = guest.vmread_artifact();
    evaluate(ratio, artifact, redundancy_mismatch)
}

/// Game-side mitigations. All of them require a relayout, so they are only
/// legal before `Game::init`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mitigation {
    HugePages,
    ColocateCodeData,
    MemoryEncryption,
}

impl Mitigation {
    pub fn parse(name: &str) -> Result<Mitigation> {
        match name {
            "huge_pages" => Ok(Mitigation::HugePages),
            "colocate" | "colocate_code_data" => Ok(Mitigation::ColocateCodeData),
            "encrypt" | "memory_encryption" => Ok(Mitigation::MemoryEncryption),
            other => Err(SimError::BadReport(format!("unknown mitigation {other:?}"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Mitigation::HugePages => "huge_pages",
            Mitigation::ColocateCodeData => "colocate",
            Mitigation::MemoryEncryption => "encrypt",
        }
    }
}

/// Flip a mitigation on in a pre-init config.
pub fn apply_mitigation(config: &mut GameConfig, which: Mitigation) {
    match which {
        Mitigation::HugePages => config.huge_pages = true,
        Mitigation::ColocateCodeData => config.colocate_code_data = true,
        Mitigation::MemoryEncryption => config.memory_encryption = true,
    }
}
