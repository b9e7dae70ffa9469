use std::collections::BTreeSet;
use std::sync::{Arc, RwLock};

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde_json::{json, Value};
use vrlab_core::archive::export_experiment;
use vrlab_core::ids::{ExperimentId, Timestamp, WorkerId};
use vrlab_core::panel::DeviceType;
use vrlab_core::session::SessionState;
use vrlab_core::sim::{enroll, panel_fixture, simulate, SimConfig, Study};
use vrlab_core::wire::{CreateSessionRequest, LabApi, LocalApi, SessionHandle};
use vrlab_core::{Lab, LabOptions};
use vrlab_gateway::{session_token, AppState, HttpApi, ServerConfig};

const T0: Timestamp = Timestamp::from_millis(1_500_000_000_000);
const SECRET: &[u8] = b"test-secret";

struct Server {
    base: String,
    lab: Arc<RwLock<Lab>>,
    gear: Vec<WorkerId>,
}

fn seeded_lab() -> (Arc<RwLock<Lab>>, Vec<WorkerId>) {
    let lab = Arc::new(RwLock::new(Lab::new(LabOptions { code_key: 0x5eed })));
    enroll(&LocalApi::new(lab.clone()), &panel_fixture(1), T0).unwrap();
    let gear = lab.read().unwrap().eligible_workers(&BTreeSet::from([DeviceType::GearVR]));
    for study in Study::ALL {
        let exp = study.experiment();
        let id = exp.experiment_id.clone();
        let mut l = lab.write().unwrap();
        l.create_experiment(exp, T0.plus_secs(1_000_000)).unwrap();
        l.activate_experiment(&id, T0.plus_secs(1_000_001)).unwrap();
    }
    (lab, gear)
}

fn start(admin_token: Option<&str>) -> Server {
    let (lab, gear) = seeded_lab();
    let config = ServerConfig { token_secret: SECRET.to_vec(), simulated_clock: true, admin_token: admin_token.map(str::to_owned) };
    let state = AppState::new(lab.clone(), config);
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build().unwrap();
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            axum::serve(listener, vrlab_gateway::router(state)).await.unwrap();
        });
    });
    let addr = rx.recv().unwrap();
    Server { base: format!("http://{addr}"), lab, gear }
}

fn crowd() -> ExperimentId {
    Study::Crowd.experiment().experiment_id
}

impl Server {
    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    fn create(&self, worker: &WorkerId) -> (String, String) {
        let resp = Client::new()
            .post(self.url("/v1/sessions"))
            .header("x-vrlab-sim-time", T0.plus_secs(2_000_000).0.to_string())
            .json(&json!({"worker_id": worker, "experiment_id": crowd()}))
            .send()
            .unwrap();
        assert_eq!(resp.status(), StatusCode::CREATED);
        let v: Value = resp.json().unwrap();
        (v["session"]["session_id"].as_str().unwrap().to_owned(), v["token"].as_str().unwrap().to_owned())
    }
}

#[test]
fn simulation_over_http_matches_in_process_run() {
    let server = start(None);
    let id = crowd();
    let config = SimConfig::new(5, T0.plus_secs(2_000_000));
    let http = HttpApi::new(server.base.clone());
    let report = simulate(&http, &id, &server.gear[..8], &|_| Study::Crowd.profile(), &config).unwrap();
    assert!(report.runs.iter().all(|r| r.session.state == SessionState::SurveyComplete));

    let (local_lab, gear) = seeded_lab();
    simulate(&LocalApi::new(local_lab.clone()), &id, &gear[..8], &|_| Study::Crowd.profile(), &config).unwrap();
    let over_http = export_experiment(&server.lab.read().unwrap(), &id).unwrap();
    let in_process = export_experiment(&local_lab.read().unwrap(), &id).unwrap();
    assert_eq!(over_http.files, in_process.files);

    let served = http.export(&id).unwrap();
    assert_eq!(served.files.len(), over_http.files.len());
    for (name, text) in &served.files {
        assert_eq!(text.as_bytes(), &over_http.files[name][..], "{name}");
    }
}

#[test]
fn game_study_runs_over_http() {
    let server = start(Some("admin"));
    let id = Study::Proteus.experiment().experiment_id;
    let http = HttpApi::new(server.base.clone()).with_admin_token(Some("admin".into()));
    let report = simulate(&http, &id, &server.gear[..4], &|_| Study::Proteus.profile(), &SimConfig::new(2, T0.plus_secs(2_000_000))).unwrap();
    for run in &report.runs {
        let game = run.session.game.as_ref().unwrap();
        assert!(game.complete && game.rounds_played == 8);
    }
}

#[test]
fn session_endpoints_need_the_session_token() {
    let server = start(None);
    let (sid, token) = server.create(&server.gear[0]);
    assert_eq!(token, session_token(SECRET, &sid.as_str().into()));
    let client = Client::new();
    let url = server.url(&format!("/v1/sessions/{sid}/headset"));
    let missing = client.post(&url).json(&json!({"present": true})).send().unwrap();
    assert_eq!(missing.status(), StatusCode::UNAUTHORIZED);
    assert_eq!(missing.json::<Value>().unwrap()["error"], "Unauthorized");
    let (_, other_token) = server.create(&server.gear[1]);
    let wrong = client.post(&url).bearer_auth(other_token).json(&json!({"present": true})).send().unwrap();
    assert_eq!(wrong.status(), StatusCode::UNAUTHORIZED);
    let ok = client.post(&url).bearer_auth(&token).json(&json!({"present": true})).send().unwrap();
    assert_eq!(ok.status(), StatusCode::OK);
    assert_eq!(ok.json::<Value>().unwrap()["state"], "HeadsetVerified");
    let view: Value = client.get(server.url(&format!("/v1/sessions/{sid}"))).bearer_auth(&token).send().unwrap().json().unwrap();
    assert_eq!(view["state"], "HeadsetVerified");
}

#[test]
fn errors_carry_kind_and_status() {
    let server = start(None);
    let http = HttpApi::new(server.base.clone());
    let now = T0.plus_secs(2_000_000);
    let req = |worker: &str, exp: &str| CreateSessionRequest { worker_id: worker.into(), experiment_id: exp.into(), posting_id: None };
    let e = http.create_session(&req(server.gear[0].as_str(), "nope"), now).unwrap_err();
    assert_eq!((e.status, e.kind()), (404, "UnknownExperiment"));
    let e = http.create_session(&req("stranger", crowd().as_str()), now).unwrap_err();
    assert_eq!((e.status, e.kind()), (403, "NotEligible"));
    let created = http.create_session(&req(server.gear[0].as_str(), crowd().as_str()), now).unwrap();
    let e = http.create_session(&req(server.gear[0].as_str(), crowd().as_str()), now).unwrap_err();
    assert_eq!((e.status, e.kind()), (409, "ActiveSessionExists"));
    let handle = SessionHandle { session_id: created.session.session_id.clone(), token: created.token };
    let e = http.redeem(&handle, "ABCDEF", now).unwrap_err();
    assert_eq!((e.status, e.kind()), (409, "WrongState"));

    let bad = Client::new().post(server.url("/v1/sessions")).header("content-type", "application/json").body("{").send().unwrap();
    assert!(bad.status().is_client_error());
    assert_eq!(bad.json::<Value>().unwrap()["error"], "ValidationError");
}

#[test]
fn idempotency_key_replays_the_first_reply() {
    let server = start(None);
    let (sid, token) = server.create(&server.gear[0]);
    let client = Client::new();
    let post = |path: &str, body: Value, key: &str| {
        client
            .post(server.url(&format!("/v1/sessions/{sid}/{path}")))
            .bearer_auth(&token)
            .header("idempotency-key", key)
            .header("x-vrlab-sim-time", T0.plus_secs(2_000_100).0.to_string())
            .json(&body)
            .send()
            .unwrap()
    };
    post("headset", json!({"present": true}), "h1");
    post("advance", json!({"event": "EnterVr"}), "a1");
    let batch = json!([{"seq": 0, "t_ms": 0, "yaw_deg": 1.0, "pitch_deg": 0.0, "roll_deg": 0.0},
                       {"seq": 1, "t_ms": 200, "yaw_deg": 2.0, "pitch_deg": 0.0, "roll_deg": 0.0}]);
    let first: Value = post("telemetry", batch.clone(), "t1").json().unwrap();
    let records = server.lab.read().unwrap().records().len();
    let again = post("telemetry", batch.clone(), "t1");
    assert_eq!(again.status(), StatusCode::OK);
    assert_eq!(again.json::<Value>().unwrap(), first);
    assert_eq!(server.lab.read().unwrap().records().len(), records);
    assert_eq!(first, json!({"accepted": 2, "total": 2}));

    // without the key the retry is still harmless: the samples are old
    let fresh: Value = post("telemetry", batch, "t2").json().unwrap();
    assert_eq!(fresh, json!({"accepted": 0, "total": 2}));
}

#[test]
fn admin_endpoints_need_the_admin_token() {
    let server = start(Some("s3cret"));
    let client = Client::new();
    let export = server.url(&format!("/v1/experiments/{}/export", crowd()));
    assert_eq!(client.get(&export).send().unwrap().status(), StatusCode::UNAUTHORIZED);
    assert_eq!(client.get(&export).bearer_auth("s3cret").send().unwrap().status(), StatusCode::OK);
    assert_eq!(client.post(server.url("/v1/admin/sweep")).send().unwrap().status(), StatusCode::UNAUTHORIZED);
    let workers: Vec<Value> = client.get(server.url("/v1/panel/workers")).bearer_auth("s3cret").send().unwrap().json().unwrap();
    assert_eq!(workers.len(), 242);
    // participants need no admin token
    server.create(&server.gear[0]);
}

#[test]
fn simulated_clock_drives_the_sweep() {
    let server = start(None);
    let (sid, _) = server.create(&server.gear[0]);
    let http = HttpApi::new(server.base.clone());
    assert!(http.sweep(T0.plus_secs(2_000_000 + 3_599)).unwrap().is_empty());
    assert_eq!(http.sweep(T0.plus_secs(2_000_000 + 3_601)).unwrap(), vec![sid.as_str().into()]);
}
