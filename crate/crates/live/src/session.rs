//! One live cooperation session: the held human command, the bounded
//! outgoing queue and the tick loop that runs training episodes with the
//! live human as the partner.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use rand_chacha::ChaCha8Rng;

use evl_core::board::{clamp_command, BoardState, Controller, Trajectory};
use evl_core::metrics::MetricsRecord;
use evl_core::ppo::Policy;
use evl_core::train::{Session, SessionConfig};
use evl_core::Result;

use crate::protocol::{BoardInfo, Envelope, Phase, ServerMessage, PROTOCOL_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ingest {
    Applied,
    Clamped,
    Dropped,
}

/// Zero-order hold of the latest human command.
#[derive(Debug, Clone, Default)]
pub struct CommandHold {
    current: [f64; 2],
    last_seq: Option<u64>,
    pub received: u64,
    pub dropped: u64,
    pub clamped: u64,
}

impl CommandHold {
    /// Replaces the held command unless `seq` is not newer than the last
    /// accepted one. Out-of-range values are clamped to `[-1, 1]`.
    pub fn ingest(&mut self, seq: u64, roll: f64, pitch: f64) -> Ingest {
        self.received += 1;
        if self.last_seq.is_some_and(|s| seq <= s) {
            self.dropped += 1;
            return Ingest::Dropped;
        }
        self.last_seq = Some(seq);
        let cmd = clamp_command([roll, pitch]);
        self.current = cmd;
        if cmd != [roll, pitch] {
            self.clamped += 1;
            Ingest::Clamped
        } else {
            Ingest::Applied
        }
    }

    pub fn current(&self) -> [f64; 2] {
        self.current
    }
}

/// Per-client outgoing queue. Messages are renumbered in delivery order.
/// When full, the oldest `state` message makes room; other messages are
/// never dropped.
#[derive(Debug, Clone)]
pub struct OutQueue {
    capacity: usize,
    items: VecDeque<Envelope<ServerMessage>>,
    next_seq: u64,
    pub dropped_states: u64,
}

impl OutQueue {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            items: VecDeque::new(),
            next_seq: 0,
            dropped_states: 0,
        }
    }

    pub fn push(&mut self, mut msg: Envelope<ServerMessage>) {
        if self.items.len() >= self.capacity {
            if let Some(i) = self.items.iter().position(|m| m.body.is_state()) {
                self.items.remove(i);
                self.dropped_states += 1;
            } else if msg.body.is_state() {
                self.dropped_states += 1;
                return;
            }
        }
        self.next_seq += 1;
        msg.seq = self.next_seq;
        self.items.push_back(msg);
    }

    pub fn drain(&mut self) -> Vec<Envelope<ServerMessage>> {
        self.items.drain(..).collect()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// The parts of a session the network side writes to.
#[derive(Debug, Clone, Default)]
pub struct Handle {
    pub hold: Arc<Mutex<CommandHold>>,
    /// Ends training at the next tick.
    pub stop: Arc<AtomicBool>,
    /// The client is gone: stop pacing and finish quickly.
    pub abort: Arc<AtomicBool>,
}

impl Handle {
    pub fn ingest(&self, seq: u64, roll: f64, pitch: f64) -> Ingest {
        self.hold.lock().expect("command hold poisoned").ingest(seq, roll, pitch)
    }

    pub fn request_stop(&self) {
        self.stop.store(true, Ordering::SeqCst);
    }

    pub fn stop_requested(&self) -> bool {
        self.stop.load(Ordering::SeqCst)
    }

    pub fn aborted(&self) -> bool {
        self.abort.load(Ordering::SeqCst)
    }
}

/// Sleeps until the next tick deadline; falls back to "now" after a stall
/// longer than one period.
#[derive(Debug, Clone)]
pub struct Pacer {
    period: Duration,
    next: Option<Instant>,
}

impl Pacer {
    pub fn new(period: Duration) -> Self {
        Self { period, next: None }
    }

    pub fn wait(&mut self) {
        let now = Instant::now();
        let next = self.next.unwrap_or(now);
        if next > now {
            std::thread::sleep(next - now);
        }
        let after = next + self.period;
        self.next = Some(if after + self.period < now { now + self.period } else { after });
    }
}

/// The live human: calls the tick hook, then returns the held command.
struct HeldHuman<'a> {
    hold: &'a Mutex<CommandHold>,
    tick: &'a mut dyn FnMut(&BoardState, usize),
    iteration: usize,
}

impl Controller for HeldHuman<'_> {
    fn act(&mut self, state: &BoardState, _: &mut ChaCha8Rng) -> [f64; 2] {
        (self.tick)(state, self.iteration);
        self.hold.lock().expect("command hold poisoned").current()
    }
}

#[derive(Debug, Clone)]
pub struct LiveOutcome {
    pub iterations: usize,
    pub stopped_by_human: bool,
    pub validation: MetricsRecord,
    pub validation_trajectory: Trajectory,
}

pub struct LiveSession {
    pub id: String,
    session: Session,
    handle: Handle,
    phase: Phase,
    seq: u64,
}

impl LiveSession {
    pub fn open(id: impl Into<String>, cfg: SessionConfig, seed: u64, initial_policy: Option<Policy>) -> Result<Self> {
        Ok(Self {
            id: id.into(),
            session: Session::new(cfg, seed, initial_policy)?,
            handle: Handle::default(),
            phase: Phase::Collecting,
            seq: 0,
        })
    }

    pub fn handle(&self) -> Handle {
        self.handle.clone()
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn session(&self) -> &Session {
        &self.session
    }

    pub fn hello(&self) -> ServerMessage {
        let cfg = &self.session.cfg;
        ServerMessage::Hello {
            protocol: PROTOCOL_VERSION,
            env: cfg.env,
            preset: cfg.preset,
            method: cfg.method,
            board: BoardInfo::from(&cfg.board),
            validation_steps: cfg.validation_steps(),
        }
    }

    /// Wraps `body` in the next envelope of this session.
    pub fn envelope(&mut self, body: ServerMessage) -> Envelope<ServerMessage> {
        self.seq += 1;
        Envelope {
            session: self.id.clone(),
            seq: self.seq,
            body,
        }
    }

    fn set_phase(&mut self, phase: Phase, emit: &mut dyn FnMut(Envelope<ServerMessage>)) {
        self.phase = phase;
        let msg = self.envelope(ServerMessage::Phase { phase });
        emit(msg);
    }

    fn emit_fields(&mut self, emit: &mut dyn FnMut(Envelope<ServerMessage>)) {
        let reward = ServerMessage::field(&self.session.reward().to_dump());
        let goal = ServerMessage::field(&self.session.goal().to_dump());
        for body in [reward, goal] {
            let msg = self.envelope(body);
            emit(msg);
        }
    }

    /// Trains until the client stops or the iteration budget runs out, then
    /// runs the frozen validation episode. `tick` is called before every
    /// simulation step with the current state and iteration; `emit` receives
    /// every outgoing message.
    pub fn run(
        &mut self,
        tick: &mut dyn FnMut(&BoardState, usize),
        emit: &mut dyn FnMut(Envelope<ServerMessage>),
    ) -> Result<LiveOutcome> {
        let handle = self.handle.clone();
        self.set_phase(Phase::Collecting, emit);
        self.emit_fields(emit);
        let mut stopped_by_human = false;
        loop {
            let k = self.session.iteration();
            let (id, seq) = (self.id.clone(), &mut self.seq);
            let mut on_state = |s: &BoardState| {
                if s.step_index > 0 {
                    *seq += 1;
                    emit(Envelope {
                        session: id.clone(),
                        seq: *seq,
                        body: ServerMessage::state(s, k),
                    });
                }
            };
            let mut human = HeldHuman {
                hold: &handle.hold,
                tick: &mut *tick,
                iteration: k,
            };
            let log = self.session.run_iteration(&mut human, &mut |_| handle.stop_requested(), &mut on_state)?;
            if handle.stop_requested() {
                stopped_by_human = true;
                break;
            }
            self.set_phase(Phase::Updating, emit);
            self.emit_fields(emit);
            let msg = self.envelope(ServerMessage::metrics(&log.metrics, false));
            emit(msg);
            if self.session.iteration() >= self.session.cfg.max_iterations {
                break;
            }
            self.set_phase(Phase::Collecting, emit);
        }

        self.set_phase(Phase::Stopped, emit);
        let k = self.session.iteration();
        let (id, seq) = (self.id.clone(), &mut self.seq);
        let mut on_state = |s: &BoardState| {
            if s.step_index > 0 {
                *seq += 1;
                emit(Envelope {
                    session: id.clone(),
                    seq: *seq,
                    body: ServerMessage::state(s, k),
                });
            }
        };
        let mut human = HeldHuman {
            hold: &handle.hold,
            tick: &mut *tick,
            iteration: k,
        };
        let (validation_trajectory, validation) = self.session.validate(&mut human, &mut on_state)?;
        let msg = self.envelope(ServerMessage::metrics(&validation, true));
        emit(msg);
        self.set_phase(Phase::Idle, emit);
        Ok(LiveOutcome {
            iterations: k,
            stopped_by_human,
            validation,
            validation_trajectory,
        })
    }
}
