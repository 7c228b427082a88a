//! WebSocket server: one live session per connection on `/ws`.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::IntoResponse;
use axum::routing::get;
use axum::Router;
use futures::{SinkExt, StreamExt};
use tokio::net::TcpListener;
use tokio::sync::Notify;

use evl_core::board::{EnvKind, Preset};
use evl_core::harness::bundled_keeper;
use evl_core::ppo::Checkpoint;
use evl_core::train::{Method, SessionConfig};

use crate::protocol::{encode, parse_client, ClientMessage, Envelope, ErrorCode, ServerMessage};
use crate::session::{Handle, LiveSession, OutQueue, Pacer};

#[derive(Debug, Clone)]
pub struct ServeConfig {
    pub env: EnvKind,
    pub preset: Preset,
    pub method: Method,
    pub seed: u64,
    pub max_iterations: usize,
    /// Pace ticks at the sample time; off runs the simulation flat out.
    pub realtime: bool,
    pub queue_capacity: usize,
    pub max_sessions: usize,
    /// Keeper for the fixed method; the bundled one when absent.
    pub keeper: Option<Checkpoint>,
}

impl ServeConfig {
    pub fn new(env: EnvKind, preset: Preset) -> Self {
        Self {
            env,
            preset,
            method: Method::Evl,
            seed: 0,
            max_iterations: 40,
            realtime: true,
            queue_capacity: 256,
            max_sessions: 8,
            keeper: None,
        }
    }

    fn session_config(&self) -> SessionConfig {
        let mut cfg = SessionConfig::new(self.env, self.preset, self.method);
        cfg.max_iterations = self.max_iterations;
        cfg
    }
}

struct AppState {
    cfg: ServeConfig,
    active: AtomicUsize,
    opened: AtomicUsize,
}

pub fn router(cfg: ServeConfig) -> Router {
    let state = Arc::new(AppState {
        cfg,
        active: AtomicUsize::new(0),
        opened: AtomicUsize::new(0),
    });
    Router::new()
        .route("/ws", get(ws_handler))
        .route("/health", get(|| async { "ok" }))
        .with_state(state)
}

/// Serves on an already bound listener until the task is dropped.
pub async fn serve_listener(listener: TcpListener, cfg: ServeConfig) -> std::io::Result<()> {
    axum::serve(listener, router(cfg)).await
}

pub async fn serve(addr: SocketAddr, cfg: ServeConfig) -> std::io::Result<()> {
    let listener = TcpListener::bind(addr).await?;
    log::info!("listening on ws://{}/ws", listener.local_addr()?);
    serve_listener(listener, cfg).await
}

async fn ws_handler(ws: WebSocketUpgrade, State(state): State<Arc<AppState>>) -> impl IntoResponse {
    ws.on_upgrade(move |socket| handle_socket(socket, state))
}

fn reply(session: &str, body: ServerMessage) -> Message {
    Message::Text(
        encode(&Envelope {
            session: session.to_string(),
            seq: 0,
            body,
        })
        .into(),
    )
}

async fn handle_socket(socket: WebSocket, state: Arc<AppState>) {
    let (mut tx, mut rx) = socket.split();

    // Handshake: the first valid message must be `hello`.
    loop {
        let Some(Ok(msg)) = rx.next().await else {
            return;
        };
        let text = match msg {
            Message::Text(t) => t,
            Message::Close(_) => return,
            Message::Ping(_) | Message::Pong(_) => continue,
            Message::Binary(_) => {
                let _ = tx.send(reply("", ServerMessage::error(ErrorCode::Malformed, "binary frames are not supported"))).await;
                continue;
            }
        };
        match parse_client(&text) {
            Ok(Envelope {
                body: ClientMessage::Hello { .. },
                ..
            }) => break,
            Ok(_) => {
                let _ = tx.send(reply("", ServerMessage::error(ErrorCode::NotReady, "send hello first"))).await;
            }
            Err(e) => {
                let _ = tx.send(reply("", e.to_message())).await;
            }
        }
    }

    let cfg = &state.cfg;
    if state.active.fetch_add(1, Ordering::SeqCst) >= cfg.max_sessions {
        state.active.fetch_sub(1, Ordering::SeqCst);
        let _ = tx.send(reply("", ServerMessage::error(ErrorCode::Refused, "session limit reached"))).await;
        let _ = tx.close().await;
        return;
    }
    let id = format!("s{}", state.opened.fetch_add(1, Ordering::SeqCst) + 1);
    let policy = match cfg.method {
        Method::Fixed => match cfg.keeper.clone().map(Ok).unwrap_or_else(|| bundled_keeper(cfg.env)) {
            Ok(ckpt) => Some(ckpt.policy),
            Err(e) => {
                let _ = tx.send(reply(&id, ServerMessage::error(ErrorCode::Internal, e.to_string()))).await;
                state.active.fetch_sub(1, Ordering::SeqCst);
                return;
            }
        },
        _ => None,
    };
    let mut live = match LiveSession::open(id.clone(), cfg.session_config(), cfg.seed, policy) {
        Ok(s) => s,
        Err(e) => {
            let _ = tx.send(reply(&id, ServerMessage::error(ErrorCode::Refused, e.to_string()))).await;
            state.active.fetch_sub(1, Ordering::SeqCst);
            return;
        }
    };
    let handle = live.handle();
    let queue = Arc::new(Mutex::new(OutQueue::new(cfg.queue_capacity)));
    let notify = Arc::new(Notify::new());
    let done = Arc::new(AtomicBool::new(false));
    let hello = live.hello();
    let hello = live.envelope(hello);
    queue.lock().expect("queue poisoned").push(hello);
    notify.notify_one();

    let sim = {
        let (queue, notify, done, handle) = (queue.clone(), notify.clone(), done.clone(), handle.clone());
        let realtime = cfg.realtime;
        let period = Duration::from_secs_f64(cfg.session_config().board.sample_time);
        tokio::task::spawn_blocking(move || {
            let mut pacer = Pacer::new(period);
            let mut tick = |_: &evl_core::board::BoardState, _: usize| {
                if realtime && !handle.aborted() {
                    pacer.wait();
                }
            };
            let mut emit = |m: Envelope<ServerMessage>| {
                queue.lock().expect("queue poisoned").push(m);
                notify.notify_one();
            };
            let result = live.run(&mut tick, &mut emit);
            if let Err(e) = result {
                let msg = live.envelope(ServerMessage::error(ErrorCode::Internal, e.to_string()));
                emit(msg);
            }
            done.store(true, Ordering::SeqCst);
            notify.notify_one();
        })
    };

    let writer = {
        let (queue, notify, done) = (queue.clone(), notify.clone(), done.clone());
        tokio::spawn(async move {
            loop {
                notify.notified().await;
                let batch = queue.lock().expect("queue poisoned").drain();
                for m in batch {
                    if tx.send(Message::Text(encode(&m).into())).await.is_err() {
                        return;
                    }
                }
                if done.load(Ordering::SeqCst) && queue.lock().expect("queue poisoned").is_empty() {
                    let _ = tx.close().await;
                    return;
                }
            }
        })
    };

    while let Some(Ok(msg)) = rx.next().await {
        let text = match msg {
            Message::Text(t) => t,
            Message::Close(_) => break,
            Message::Ping(_) | Message::Pong(_) => continue,
            Message::Binary(_) => {
                push_error(&queue, &notify, &id, ErrorCode::Malformed, "binary frames are not supported");
                continue;
            }
        };
        match parse_client(&text) {
            Ok(env) if env.session != id => {
                push_error(&queue, &notify, &id, ErrorCode::UnknownSession, &format!("unknown session `{}`", env.session));
            }
            Ok(env) => apply(&handle, &queue, &notify, &id, env),
            Err(e) => push_error(&queue, &notify, &id, e.code, &e.message),
        }
    }
    handle.request_stop();
    handle.abort.store(true, Ordering::SeqCst);
    let _ = sim.await;
    let _ = writer.await;
    state.active.fetch_sub(1, Ordering::SeqCst);
}

fn apply(handle: &Handle, queue: &Mutex<OutQueue>, notify: &Notify, id: &str, env: Envelope<ClientMessage>) {
    match env.body {
        ClientMessage::HumanAction { roll, pitch } => {
            handle.ingest(env.seq, roll, pitch);
        }
        ClientMessage::Stop => handle.request_stop(),
        ClientMessage::Hello { .. } => push_error(queue, notify, id, ErrorCode::NotReady, "session already open"),
    }
}

fn push_error(queue: &Mutex<OutQueue>, notify: &Notify, id: &str, code: ErrorCode, message: &str) {
    queue.lock().expect("queue poisoned").push(Envelope {
        session: id.to_string(),
        seq: 0,
        body: ServerMessage::error(code, message),
    });
    notify.notify_one();
}
