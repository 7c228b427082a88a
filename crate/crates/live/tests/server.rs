use std::time::Duration;

use evl_core::board::{EnvKind, Preset};
use evl_live::protocol::{encode, parse_server, ClientMessage, Envelope, ErrorCode, Phase, ServerMessage, PROTOCOL_VERSION};
use evl_live::{serve_listener, ServeConfig};
use futures::{SinkExt, StreamExt};
use tokio::net::TcpListener;
use tokio_tungstenite::tungstenite::Message;

type Ws = tokio_tungstenite::WebSocketStream<tokio_tungstenite::MaybeTlsStream<tokio::net::TcpStream>>;

async fn start(max_sessions: usize) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let mut cfg = ServeConfig::new(EnvKind::Env2, Preset::Sim);
    cfg.realtime = false;
    cfg.max_iterations = 2;
    cfg.max_sessions = max_sessions;
    cfg.queue_capacity = 100_000;
    tokio::spawn(serve_listener(listener, cfg));
    format!("ws://{addr}/ws")
}

async fn send(ws: &mut Ws, session: &str, seq: u64, body: ClientMessage) {
    let text = encode(&Envelope {
        session: session.to_string(),
        seq,
        body,
    });
    ws.send(Message::Text(text.into())).await.unwrap();
}

async fn recv(ws: &mut Ws) -> Option<Envelope<ServerMessage>> {
    loop {
        let msg = tokio::time::timeout(Duration::from_secs(120), ws.next()).await.expect("server went quiet")?;
        match msg.ok()? {
            Message::Text(t) => return Some(parse_server(&t).expect("valid server message")),
            Message::Close(_) => return None,
            _ => continue,
        }
    }
}

async fn recv_until(ws: &mut Ws, pred: impl Fn(&ServerMessage) -> bool) -> Envelope<ServerMessage> {
    loop {
        let m = recv(ws).await.expect("connection closed early");
        if pred(&m.body) {
            return m;
        }
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn full_session_over_websocket() {
    let url = start(4).await;
    let (mut ws, _) = tokio_tungstenite::connect_async(&url).await.unwrap();

    ws.send(Message::Text("garbage".into())).await.unwrap();
    let err = recv(&mut ws).await.unwrap();
    assert!(matches!(err.body, ServerMessage::Error { code: ErrorCode::Malformed, .. }));

    send(&mut ws, "", 1, ClientMessage::Stop).await;
    let err = recv(&mut ws).await.unwrap();
    assert!(matches!(err.body, ServerMessage::Error { code: ErrorCode::NotReady, .. }));

    send(&mut ws, "", 2, ClientMessage::Hello { protocol: PROTOCOL_VERSION }).await;
    let hello = recv_until(&mut ws, |m| matches!(m, ServerMessage::Hello { .. })).await;
    let session = hello.session.clone();
    let ServerMessage::Hello { protocol, env, board, .. } = hello.body else {
        unreachable!()
    };
    assert_eq!((protocol, env), (PROTOCOL_VERSION, EnvKind::Env2));
    assert!(!board.walls.right && !board.walls.top);

    send(&mut ws, "nope", 3, ClientMessage::HumanAction { roll: 0.1, pitch: 0.1 }).await;
    recv_until(&mut ws, |m| matches!(m, ServerMessage::Error { code: ErrorCode::UnknownSession, .. })).await;
    send(&mut ws, &session, 4, ClientMessage::HumanAction { roll: 2.0, pitch: -0.2 }).await;

    recv_until(&mut ws, |m| matches!(m, ServerMessage::Field { .. })).await;
    send(&mut ws, &session, 5, ClientMessage::Stop).await;

    let mut last_seq = 0;
    let mut stopped = false;
    let mut finals = 0;
    while let Some(m) = recv(&mut ws).await {
        if m.seq > 0 {
            assert!(m.seq > last_seq);
            last_seq = m.seq;
        }
        match m.body {
            ServerMessage::Phase { phase: Phase::Stopped } => stopped = true,
            ServerMessage::Field { .. } => assert!(!stopped, "field after stop"),
            ServerMessage::Metrics { is_final, .. } if stopped => {
                assert!(is_final);
                finals += 1;
            }
            ServerMessage::Phase { phase: Phase::Idle } => break,
            _ => {}
        }
    }
    assert!(stopped);
    assert_eq!(finals, 1);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn sessions_are_independent_and_limited() {
    let url = start(2).await;
    let mut ids = Vec::new();
    let mut sockets = Vec::new();
    for _ in 0..2 {
        let (mut ws, _) = tokio_tungstenite::connect_async(&url).await.unwrap();
        send(&mut ws, "", 1, ClientMessage::Hello { protocol: PROTOCOL_VERSION }).await;
        let hello = recv_until(&mut ws, |m| matches!(m, ServerMessage::Hello { .. })).await;
        ids.push(hello.session);
        sockets.push(ws);
    }
    assert_ne!(ids[0], ids[1]);

    let (mut ws, _) = tokio_tungstenite::connect_async(&url).await.unwrap();
    send(&mut ws, "", 1, ClientMessage::Hello { protocol: PROTOCOL_VERSION }).await;
    let refused = recv(&mut ws).await.unwrap();
    assert!(matches!(refused.body, ServerMessage::Error { code: ErrorCode::Refused, .. }));

    for (ws, id) in sockets.iter_mut().zip(&ids) {
        send(ws, id, 2, ClientMessage::Stop).await;
        recv_until(ws, |m| *m == ServerMessage::Phase { phase: Phase::Idle }).await;
    }
}
