use std::time::Duration;

use futures::{SinkExt, StreamExt};
use serde_json::{json, Value};
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::oneshot;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{connect_async, MaybeTlsStream, WebSocketStream};

use pieeg_core::session::{standard, SourceConfig};
use pieeg_core::sim::{blink_rate_script, NoiseModel};
use pieeg_core::SessionConfig;
use pieeg_server::LiveServer;

type Ws = WebSocketStream<MaybeTlsStream<TcpStream>>;

struct Running {
    addr: std::net::SocketAddr,
    stop: Option<oneshot::Sender<()>>,
    done: tokio::task::JoinHandle<()>,
}

impl Running {
    async fn start(config: SessionConfig, static_dir: Option<std::path::PathBuf>) -> Self {
        let server = LiveServer::start(config, None).unwrap();
        let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
        let addr = listener.local_addr().unwrap();
        let (tx, rx) = oneshot::channel();
        let done = tokio::spawn(async move {
            server
                .serve(listener, static_dir, async {
                    let _ = rx.await;
                })
                .await
                .unwrap();
        });
        Self { addr, stop: Some(tx), done }
    }

    async fn connect(&self) -> Ws {
        connect_async(format!("ws://{}/stream", self.addr)).await.unwrap().0
    }

    async fn stop(mut self) {
        let _ = self.stop.take().unwrap().send(());
        tokio::time::timeout(Duration::from_secs(10), self.done).await.unwrap().unwrap();
    }
}

/// Blinks early and paced, so a test sees events within a few seconds.
fn quick_config(duration_s: f64, speed: f64, amplitude_uv: f64) -> SessionConfig {
    SessionConfig {
        source: SourceConfig::Simulate {
            duration_s,
            speed,
            script: blink_rate_script(1.0, (duration_s - 2.0) as usize, 1.5, amplitude_uv).unwrap(),
            noise: NoiseModel::default(),
        },
        ..SessionConfig::default()
    }
}

async fn next_json(ws: &mut Ws) -> Value {
    loop {
        let msg = tokio::time::timeout(Duration::from_secs(15), ws.next())
            .await
            .expect("message within timeout")
            .expect("stream open")
            .unwrap();
        if let Message::Text(t) = msg {
            return serde_json::from_str(&t).unwrap();
        }
    }
}

/// Reads until `pred` matches, checking seq monotonicity on the way.
async fn until(ws: &mut Ws, last_seq: &mut u64, pred: impl Fn(&Value) -> bool) -> Value {
    loop {
        let v = next_json(ws).await;
        let seq = v["seq"].as_u64().unwrap();
        assert!(seq > *last_seq, "seq {seq} after {last_seq}");
        *last_seq = seq;
        if pred(&v) {
            return v;
        }
    }
}

async fn send(ws: &mut Ws, v: Value) {
    ws.send(Message::Text(v.to_string().into())).await.unwrap();
}

async fn http_get(addr: std::net::SocketAddr, path: &str) -> String {
    let mut s = TcpStream::connect(addr).await.unwrap();
    s.write_all(format!("GET {path} HTTP/1.1\r\nHost: x\r\nConnection: close\r\n\r\n").as_bytes())
        .await
        .unwrap();
    let mut out = String::new();
    s.read_to_string(&mut out).await.unwrap();
    out
}

#[tokio::test(flavor = "multi_thread")]
async fn healthz_and_index() {
    let server = Running::start(quick_config(60.0, 1.0, 100.0), None).await;
    let r = http_get(server.addr, "/healthz").await;
    assert!(r.starts_with("HTTP/1.1 200"), "{r}");
    assert!(r.ends_with("\r\n\r\nok"), "{r}");
    let r = http_get(server.addr, "/").await;
    assert!(r.starts_with("HTTP/1.1 200") && r.contains("/stream"), "{r}");
    server.stop().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn serves_static_assets() {
    let dir = tempfile_dir();
    std::fs::write(dir.join("index.html"), "<h1>scope</h1>").unwrap();
    std::fs::write(dir.join("app.js"), "console.log(1)").unwrap();
    let server = Running::start(quick_config(60.0, 1.0, 100.0), Some(dir.clone())).await;
    assert!(http_get(server.addr, "/").await.contains("<h1>scope</h1>"));
    assert!(http_get(server.addr, "/app.js").await.contains("console.log(1)"));
    assert!(http_get(server.addr, "/healthz").await.ends_with("ok"));
    server.stop().await;
    std::fs::remove_dir_all(dir).unwrap();
}

fn tempfile_dir() -> std::path::PathBuf {
    let d = std::env::temp_dir().join(format!("pieeg-static-{}", std::process::id()));
    std::fs::create_dir_all(&d).unwrap();
    d
}

#[tokio::test(flavor = "multi_thread")]
async fn first_message_is_status_snapshot() {
    let server = Running::start(quick_config(60.0, 1.0, 100.0), None).await;
    let mut ws = server.connect().await;
    let v = next_json(&mut ws).await;
    assert_eq!(v["kind"], "status");
    assert_eq!(v["seq"], 1);
    assert_eq!(v["running"], true);
    assert_eq!(v["config"]["device"]["sample_rate_sps"], 250);
    assert_eq!(v["config"]["detectors"][0]["detector_id"], "bandA");
    server.stop().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn control_commands_are_acked_and_validated() {
    let server = Running::start(quick_config(60.0, 1.0, 100.0), None).await;
    let mut ws = server.connect().await;
    let mut seq = 0;
    until(&mut ws, &mut seq, |v| v["kind"] == "status").await;

    send(&mut ws, json!({"kind":"control","cmd":"set_threshold","detector_id":"bandA","threshold_uv":100.0})).await;
    let ack = until(&mut ws, &mut seq, |v| v["kind"] == "ack").await;
    assert_eq!(ack["ok"], true);
    assert_eq!(ack["config"]["threshold_uv"], 100.0);
    let status = until(&mut ws, &mut seq, |v| v["kind"] == "status").await;
    assert_eq!(status["config"]["detectors"][0]["threshold_uv"], 100.0);
    assert_eq!(status["control_seq"], ack["cmd_seq"]);

    send(&mut ws, json!({"kind":"control","cmd":"set_band","detector_id":"bandA","low_hz":7.0,"high_hz":3.0})).await;
    let ack = until(&mut ws, &mut seq, |v| v["kind"] == "ack").await;
    assert_eq!(ack["ok"], false);
    assert!(ack["reason"].as_str().unwrap().contains("low ≥ high"), "{ack}");

    send(&mut ws, json!({"kind":"control","cmd":"enable_detector","detector_id":"bandB"})).await;
    let ack = until(&mut ws, &mut seq, |v| v["kind"] == "ack").await;
    assert_eq!(ack["ok"], false);
    assert!(ack["reason"].as_str().unwrap().contains("uncalibrated"), "{ack}");

    send(&mut ws, json!({"kind":"nonsense"})).await;
    let ack = until(&mut ws, &mut seq, |v| v["kind"] == "ack").await;
    assert_eq!(ack["ok"], false);

    send(&mut ws, json!({"kind":"control","cmd":"stop"})).await;
    until(&mut ws, &mut seq, |v| v["kind"] == "ack" && v["ok"] == true).await;
    until(&mut ws, &mut seq, |v| v["kind"] == "status" && v["running"] == false).await;
    server.stop().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn acks_go_only_to_the_sender() {
    let server = Running::start(quick_config(60.0, 1.0, 100.0), None).await;
    let mut a = server.connect().await;
    let mut b = server.connect().await;
    let (mut sa, mut sb) = (0, 0);
    until(&mut a, &mut sa, |v| v["kind"] == "status").await;
    until(&mut b, &mut sb, |v| v["kind"] == "status").await;
    send(&mut a, json!({"kind":"control","cmd":"set_refractory","detector_id":"bandA","refractory_s":0.5})).await;
    until(&mut a, &mut sa, |v| v["kind"] == "ack").await;
    let status = until(&mut b, &mut sb, |v| v["kind"] == "status" || v["kind"] == "ack").await;
    assert_eq!(status["kind"], "status", "b saw {status}");
    assert_eq!(status["config"]["detectors"][0]["refractory_s"], 0.5);
    server.stop().await;
}

/// The operator flow: set a threshold from a client, then watch a blink
/// produce an event and a pin 31 flash.
#[tokio::test(flavor = "multi_thread")]
async fn threshold_drag_then_blink_flashes_pin_31() {
    let server = Running::start(quick_config(6.0, 1.0, 800.0), None).await;
    let mut ws = server.connect().await;
    let mut seq = 0;
    until(&mut ws, &mut seq, |v| v["kind"] == "status").await;
    send(&mut ws, json!({"kind":"control","cmd":"set_threshold","detector_id":"bandA","threshold_uv":100.0})).await;
    let ack = until(&mut ws, &mut seq, |v| v["kind"] == "ack").await;
    assert_eq!(ack["ok"], true);
    let status = until(&mut ws, &mut seq, |v| v["kind"] == "status").await;
    assert_eq!(status["config"]["detectors"][0]["threshold_uv"], 100.0);
    send(&mut ws, json!({"kind":"control","cmd":"enable_detector","detector_id":"bandA","enabled":true})).await;
    until(&mut ws, &mut seq, |v| v["kind"] == "ack" && v["ok"] == true).await;

    let event = until(&mut ws, &mut seq, |v| v["kind"] == "event").await;
    assert_eq!(event["detector_id"], "bandA");
    assert!(event["peak_uv"].as_f64().unwrap() >= 100.0);
    let pin = until(&mut ws, &mut seq, |v| v["kind"] == "pin_state").await;
    assert_eq!(pin["pin"], 31);
    assert_eq!(pin["asserted"], true);
    assert_eq!(pin["t_ns"], event["t_ns"]);
    server.stop().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn slow_client_still_gets_every_event() {
    let mut config = standard::standard_config(31, false);
    if let SourceConfig::Simulate { speed, .. } = &mut config.source {
        *speed = 4.0;
    }
    let config = standard::calibrate_config(config, 77, 0.5).unwrap().0;
    let server = Running::start(config, None).await;
    let fast = server.connect().await;
    let slow = server.connect().await;

    let read_all = |mut ws: Ws, delay: Duration| async move {
        tokio::time::sleep(delay).await;
        let mut seq = 0;
        let mut events = Vec::new();
        let mut lossy = 0;
        loop {
            let v = until(&mut ws, &mut seq, |_| true).await;
            match v["kind"].as_str().unwrap() {
                "event" => events.push(v["t_ns"].as_u64().unwrap()),
                "spectrum" | "samples" => lossy += 1,
                "status" if v["running"] == false => return (events, lossy),
                _ => {}
            }
        }
    };
    let (f, s) = tokio::join!(read_all(fast, Duration::ZERO), read_all(slow, Duration::from_secs(3)));
    assert!(f.0.len() >= 16, "{f:?}");
    assert_eq!(f.0, s.0);
    assert!(s.1 <= f.1);
    server.stop().await;
}
