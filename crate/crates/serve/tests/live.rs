use std::sync::{Arc, OnceLock};
use std::time::{Duration, Instant};

use aba_core::runtime::live::{LiveSession, Snapshot, Status, SNAPSHOT_SCHEMA_VERSION};
use aba_core::runtime::{Components, InterventionConfig, Method, RolloutSpec};
use aba_core::sim::{Task, TaskConfig};
use aba_serve::{router, spawn_rollout, AppState, Rejection};
use futures_util::StreamExt;
use serde_json::json;

fn components() -> Arc<Components> {
    static COMP: OnceLock<Arc<Components>> = OnceLock::new();
    COMP.get_or_init(|| {
        Arc::new(
            Components::build(TaskConfig::builtin(Task::PlaceInCup), 20, 0.02, 7)
                .expect("build components"),
        )
    })
    .clone()
}

struct Harness {
    base: String,
    client: reqwest::Client,
    session: Arc<LiveSession>,
    rollout: Option<std::thread::JoinHandle<Option<aba_core::runtime::RolloutRecord>>>,
}

async fn start(scenario: &str, object: &str, method: Method, paused: bool) -> Harness {
    let comp = components();
    let session = LiveSession::with_gallery(paused, Arc::new(comp.dataset.clone()));
    let state = AppState {
        session: Arc::clone(&session),
        registry: Arc::new(comp.config.registry.clone()),
    };
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(aba_serve::serve(
        listener,
        router(state),
        std::future::pending(),
    ));
    let spec = RolloutSpec {
        scenario: scenario.into(),
        object: object.into(),
        method,
        seed: 11,
    };
    let rollout = spawn_rollout(
        comp,
        spec,
        InterventionConfig::default(),
        Arc::clone(&session),
        Duration::from_secs(60),
    );
    Harness {
        base: format!("http://{addr}"),
        client: reqwest::Client::new(),
        session,
        rollout: Some(rollout),
    }
}

impl Harness {
    async fn state(&self) -> Snapshot {
        self.client
            .get(format!("{}/state", self.base))
            .send()
            .await
            .unwrap()
            .json()
            .await
            .unwrap()
    }

    async fn wait_for(&self, what: &str, pred: impl Fn(&Snapshot) -> bool) -> Snapshot {
        let deadline = Instant::now() + Duration::from_secs(60);
        loop {
            let s = self.state().await;
            if pred(&s) {
                return s;
            }
            assert!(
                Instant::now() < deadline,
                "timed out waiting for {what}: {s:?}"
            );
            tokio::time::sleep(Duration::from_millis(10)).await;
        }
    }

    async fn feedback(&self, text: &str) -> reqwest::Response {
        self.client
            .post(format!("{}/feedback", self.base))
            .json(&json!({ "text": text }))
            .send()
            .await
            .unwrap()
    }

    async fn control(&self, body: serde_json::Value) -> reqwest::Response {
        self.client
            .post(format!("{}/control", self.base))
            .json(&body)
            .send()
            .await
            .unwrap()
    }
}

impl Drop for Harness {
    fn drop(&mut self) {
        self.session.stop();
        if let Some(h) = self.rollout.take() {
            let _ = h.join();
        }
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn nominal_stepping_reports_no_ood_and_no_query() {
    let h = start("place-id-pen", "pen", Method::Aba, true).await;
    let first = h
        .wait_for("first cycle", |s| s.status == Status::Paused)
        .await;
    assert_eq!(first.schema_version, SNAPSHOT_SCHEMA_VERSION);
    assert_eq!(first.scenario, "place-id-pen");
    assert!(first.image.is_some());

    let resp = h.control(json!({ "action": "step" })).await;
    assert_eq!(resp.status(), 200);
    let s = h
        .wait_for("one planning cycle", |s| {
            s.status == Status::Paused && s.last_entry.is_some()
        })
        .await;
    let entry = s.last_entry.as_ref().unwrap();
    assert!(
        !entry.ood,
        "ID observation flagged: score {}",
        entry.id_score
    );
    assert!(s.pending_query.is_none());
    assert!(entry.actions.len() <= InterventionConfig::default().exec_horizon);

    // Paused: the timestep holds still.
    tokio::time::sleep(Duration::from_millis(200)).await;
    assert_eq!(h.state().await.timestep, s.timestep);

    let resp = h.feedback("match pen with pen").await;
    assert_eq!(resp.status(), 409);
    let body: Rejection = resp.json().await.unwrap();
    assert_eq!(body.error, "no-pending-query");

    h.control(json!({ "action": "resume" })).await;
    let done = h.wait_for("completion", |s| s.status == Status::Done).await;
    assert_eq!(done.success, Some(true));
    assert_eq!(h.control(json!({ "action": "pause" })).await.status(), 409);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn control_rejects_unknown_actions() {
    let h = start("place-id-marker", "marker", Method::Vanilla, true).await;
    let resp = h.control(json!({ "action": "rewind" })).await;
    assert!(resp.status().is_client_error());
    let resp = h
        .client
        .post(format!("{}/control", h.base))
        .header("content-type", "application/json")
        .body("{not json")
        .send()
        .await
        .unwrap();
    assert!(resp.status().is_client_error());
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn pending_query_suspends_stepping_and_rejects_malformed_feedback() {
    let h = start("place-ood-pencil", "pencil", Method::Aba, false).await;
    let pending = h
        .wait_for("expert query", |s| s.pending_query.is_some())
        .await;
    assert_eq!(pending.status, Status::AwaitingFeedback);
    let query = pending.pending_query.clone().unwrap();
    assert!(query.scene_labels.iter().any(|l| l == "pencil"));
    assert!(!pending.thumbnails.is_empty());

    // Bad grammar and an unknown label are both rejected with a position.
    for bad in ["match pencil wiht pen", "match pencil with spoon"] {
        let resp = h.feedback(bad).await;
        assert_eq!(resp.status(), 422, "{bad}");
        let body: Rejection = resp.json().await.unwrap();
        assert_eq!(body.error, "invalid-feedback");
        assert!(body.position.is_some(), "{bad}: {body:?}");
    }
    let resp = h
        .client
        .post(format!("{}/feedback", h.base))
        .header("content-type", "application/json")
        .body("{\"txt\": 1}")
        .send()
        .await
        .unwrap();
    assert!(resp.status().is_client_error());

    // No simulator step while the query is outstanding.
    tokio::time::sleep(Duration::from_millis(300)).await;
    let still = h.state().await;
    assert_eq!(still.pending_query.as_ref(), Some(&query));
    assert_eq!(still.timestep, pending.timestep);
    assert_eq!(still.feedback_total, pending.feedback_total);

    let resp = h.feedback("match pencil with pen").await;
    assert_eq!(resp.status(), 202);
    h.wait_for("query answered", |s| {
        s.pending_query.as_ref() != Some(&query)
    })
    .await;

    // Answer the rest from the bundled script, then pass.
    let mut answers = vec!["align-edge left pencil pen"].into_iter();
    loop {
        let s = h
            .wait_for("query or completion", |s| {
                s.pending_query.is_some() || s.status == Status::Done
            })
            .await;
        if s.status == Status::Done {
            assert!(s.success.is_some());
            assert!(s.feedback_total >= 1);
            assert!(
                s.description.contains("match pencil with pen"),
                "{}",
                s.description
            );
            break;
        }
        let text = answers.next().unwrap_or("pass");
        assert_eq!(h.feedback(text).await.status(), 202);
        h.wait_for("answer consumed", |n| {
            n.seq > s.seq && n.pending_query != s.pending_query
        })
        .await;
    }
    assert_eq!(h.feedback("pass").await.status(), 409);
}

type Ws =
    tokio_tungstenite::WebSocketStream<tokio_tungstenite::MaybeTlsStream<tokio::net::TcpStream>>;

async fn next_snapshot(ws: &mut Ws) -> Snapshot {
    loop {
        let msg = tokio::time::timeout(Duration::from_secs(30), ws.next())
            .await
            .expect("snapshot within timeout")
            .unwrap()
            .unwrap();
        if let tokio_tungstenite::tungstenite::Message::Text(t) = msg {
            return serde_json::from_str(&t).unwrap();
        }
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn websocket_streams_versioned_snapshots_in_order() {
    let h = start("place-id-pen", "pen", Method::Vanilla, true).await;
    let url = format!("{}/ws/state", h.base.replacen("http", "ws", 1));
    let (mut ws, _) = tokio_tungstenite::connect_async(url).await.unwrap();
    let first = next_snapshot(&mut ws).await;
    assert_eq!(first.schema_version, SNAPSHOT_SCHEMA_VERSION);
    h.control(json!({ "action": "resume" })).await;
    let mut last = first.seq;
    loop {
        let s = next_snapshot(&mut ws).await;
        assert_eq!(s.schema_version, SNAPSHOT_SCHEMA_VERSION);
        assert!(s.seq > last, "snapshots out of order");
        last = s.seq;
        if s.status == Status::Done {
            assert_eq!(s.success, Some(true));
            break;
        }
    }
}
