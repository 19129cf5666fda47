//! Synthetic input injection: a line-delimited, QMP-style command protocol
//! that enqueues mouse/keyboard events which the guest drains at tick
//! boundaries.
//!
//! Origin (synthetic vs scripted) is host-side telemetry only; the
//! guest-visible serialization of an event is identical either way.
//!
//! Wire format, one JSON object per line, UTF-8:
//!
//! * greeting on connect: `{"QMP":{"version":{"sandbox":1}}}`
//! * command: `{"execute":"input-send-event","arguments":{"device":"mouse0",
//!   "events":[{"type":"btn","data":{"down":true,"button":"left"}}]}}`
//! * success: `{"return":{}}`
//! * failure: `{"error":{"class":"CommandNotFound","desc":"..."}}`

use std::collections::VecDeque;
use std::io::{BufRead, BufReader, Write};
use std::os::unix::net::UnixListener;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MouseButton {
    Left,
    Right,
    Middle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KeyCode {
    W,
    A,
    S,
    D,
    Space,
}

/// Input device, derivable from the payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputDevice {
    Mouse,
    Keyboard,
}

/// The guest-visible part of an input event.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InputPayload {
    Button { button: MouseButton, down: bool },
    Key { key: KeyCode, down: bool },
    MouseMove { dx: i32, dy: i32 },
}

impl InputPayload {
    pub fn device(&self) -> InputDevice {
        match self {
            InputPayload::Button { .. } | InputPayload::MouseMove { .. } => InputDevice::Mouse,
            InputPayload::Key { .. } => InputDevice::Keyboard,
        }
    }

    /// Canonical byte serialization as the guest sees it. Synthetic and
    /// scripted events with equal payloads serialize identically.
    pub fn guest_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(&WireEvent::from(*self)).expect("payload serializes")
    }
}

/// Who produced an event. Never exposed to the guest.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputOrigin {
    Synthetic,
    Scripted,
}

#[derive(Debug, Clone)]
struct QueuedInput {
    payload: InputPayload,
    origin: InputOrigin,
    arrival_tick: u64,
    seq: u64,
}

/// The host->guest input queue. The producer appends, the guest drains at
/// tick boundaries, in timestamp order with ties broken by enqueue order.
#[derive(Debug, Default)]
pub struct InputQueue {
    queue: VecDeque<QueuedInput>,
    next_seq: u64,
    closed: bool,
    /// Extra delivery delay in ticks on top of next-tick-boundary delivery.
    pub latency_ticks: u64,
    pub injected_synthetic: u64,
    pub injected_scripted: u64,
}

impl InputQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn close(&mut self) {
        self.closed = true;
    }

    /// Append an event; it becomes visible at the next tick boundary plus
    /// the configured latency.
    pub fn inject(&mut self, payload: InputPayload, origin: InputOrigin, now_tick: u64) -> Result<()> {
        if self.closed {
            return Err(SimError::ChannelClosed);
        }
        match origin {
            InputOrigin::Synthetic => self.injected_synthetic += 1,
            InputOrigin::Scripted => self.injected_scripted += 1,
        }
        self.queue.push_back(QueuedInput {
            payload,
            origin,
            arrival_tick: now_tick + self.latency_ticks,
            seq: self.next_seq,
        });
        self.next_seq += 1;
        Ok(())
    }

    /// Drain every event with `arrival_tick <= tick`, origin stripped.
    /// Called once per game tick.
    pub fn drain_through(&mut self, tick: u64) -> Vec<InputPayload> {
        let mut due: Vec<QueuedInput> = Vec::new();
        let mut rest: VecDeque<QueuedInput> = VecDeque::new();
        for item in self.queue.drain(..) {
            if item.arrival_tick <= tick {
                due.push(item);
            } else {
                rest.push_back(item);
            }
        }
        self.queue = rest;
        due.sort_by_key(|q| (q.arrival_tick, q.seq));
        due.into_iter().map(|q| q.payload).collect()
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    /// Host-side telemetry view of the undelivered queue; the guest never
    /// sees origins.
    pub fn pending_origins(&self) -> Vec<InputOrigin> {
        self.queue.iter().map(|q| q.origin).collect()
    }
}

// ----------------------------------------------------------------------
// Wire protocol
// ----------------------------------------------------------------------

pub const PROTOCOL_VERSION: u32 = 1;

/// Exact greeting line emitted on connect (without the trailing newline).
pub fn greeting_line() -> String {
    r#"{"QMP":{"version":{"sandbox":1}}}"#.to_string()
}

/// Exact success line.
pub fn success_line() -> String {
    r#"{"return":{}}"#.to_string()
}

pub fn error_line(class: &str, desc: &str) -> String {
    #[derive(Serialize)]
    struct Body<'a> {
        class: &'a str,
        desc: &'a str,
    }
    #[derive(Serialize)]
    struct ErrorLine<'a> {
        error: Body<'a>,
    }
    serde_json::to_string(&ErrorLine { error: Body { class, desc } }).expect("serializes")
}

/// One event inside `input-send-event` arguments. The same shape doubles as
/// the guest-visible serialization of a payload.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "type", content = "data")]
pub enum WireEvent {
    #[serde(rename = "btn")]
    Button { down: bool, button: MouseButton },
    #[serde(rename = "key")]
    Key { down: bool, key: KeyCode },
    #[serde(rename = "rel")]
    Rel { dx: i32, dy: i32 },
}

impl From<InputPayload> for WireEvent {
    fn from(p: InputPayload) -> Self {
        match p {
            InputPayload::Button { button, down } => WireEvent::Button { down, button },
            InputPayload::Key { key, down } => WireEvent::Key { down, key },
            InputPayload::MouseMove { dx, dy } => WireEvent::Rel { dx, dy },
        }
    }
}

impl From<WireEvent> for InputPayload {
    fn from(w: WireEvent) -> Self {
        match w {
            WireEvent::Button { down, button } => InputPayload::Button { button, down },
            WireEvent::Key { down, key } => InputPayload::Key { key, down },
            WireEvent::Rel { dx, dy } => InputPayload::MouseMove { dx, dy },
        }
    }
}

#[derive(Debug, Deserialize)]
struct SendEventArgs {
    #[serde(default)]
    #[allow(dead_code)]
    device: Option<String>,
    events: Vec<WireEvent>,
}

#[derive(Debug, Deserialize)]
struct CommandLine {
    execute: String,
    #[serde(default)]
    arguments: serde_json::Value,
}

/// Stateless command interpreter shared by the socket transport and the
/// in-process channel: one request line in, one response line out, plus the
/// payloads accepted for injection.
#[derive(Debug, Default)]
pub struct QmpEngine;

impl QmpEngine {
    pub fn handle_line(&self, line: &str) -> (String, Vec<InputPayload>) {
        let cmd: CommandLine = match serde_json::from_str(line) {
            Ok(cmd) => cmd,
            Err(_) => return (error_line("GenericError", "invalid command JSON"), Vec::new()),
        };
        match cmd.execute.as_str() {
            "qmp_capabilities" => (success_line(), Vec::new()),
            "input-send-event" => {
                let args: SendEventArgs = match serde_json::from_value(cmd.arguments) {
                    Ok(args) => args,
                    Err(_) => {
                        return (error_line("GenericError", "invalid input-send-event arguments"), Vec::new())
                    }
                };
                let payloads = args.events.into_iter().map(InputPayload::from).collect();
                (success_line(), payloads)
            }
            other => (
                error_line("CommandNotFound", &format!("The command {other} has not been found")),
                Vec::new(),
            ),
        }
    }
}

/// Unix-socket transport for the wire protocol. Serves one client at a time;
/// accepted payloads go to the provided sink.
pub struct QmpServer {
    listener: UnixListener,
}

impl QmpServer {
    pub fn bind(path: &Path) -> Result<Self> {
        let listener = UnixListener::bind(path)
            .map_err(|e| SimError::EndpointUnavailable(format!("{}: {e}", path.display())))?;
        Ok(QmpServer { listener })
    }

    /// Accept one connection and serve it until EOF. `sink` receives every
    /// accepted payload; unknown commands produce an error response but keep
    /// the connection open.
    pub fn serve_connection(&self, mut sink: impl FnMut(InputPayload)) -> Result<u64> {
        let (stream, _) = self.listener.accept()?;
        let mut writer = stream.try_clone()?;
        writeln!(writer, "{}", greeting_line())?;
        let engine = QmpEngine;
        let reader = BufReader::new(stream);
        let mut accepted = 0u64;
        for line in reader.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let (response, payloads) = engine.handle_line(&line);
            accepted += payloads.len() as u64;
            for p in payloads {
                sink(p);
            }
            writeln!(writer, "{response}")?;
        }
        Ok(accepted)
    }
}

/// Every distinct button/key payload, for exhaustive indistinguishability
/// checks; mouse moves are sampled separately since dx/dy are unbounded.
pub fn button_key_vocabulary() -> Vec<InputPayload> {
    let mut out = Vec::new();
    for button in [MouseButton::Left, MouseButton::Right, MouseButton::Middle] {
        for down in [true, false] {
            out.push(InputPayload::Button { button, down });
        }
    }
    for key in [KeyCode::W, KeyCode::A, KeyCode::S, KeyCode::D, KeyCode::Space] {
        for down in [true, false] {
            out.push(InputPayload::Key { key, down });
        }
    }
    out
}
