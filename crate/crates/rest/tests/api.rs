use std::collections::BTreeSet;
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use provflow::fixtures;
use provflow::process::builtins::ADD_JOB;
use provflow::process::scheduler::SimConfig;
use provflow::process::transport::Computer;
use provflow::query::{self, format_filters};
use provflow::{Engine, EngineConfig, Inputs, Node, NodeKind, ProcessState, Registry, Store};
use provflow_rest::{router, AppState, Options};
use rand::prelude::*;
use serde_json::{json, Value};
use tower::ServiceExt;
use uuid::Uuid;

fn app(dir: &std::path::Path, options: Options) -> Router {
    router(AppState::new(dir, options).unwrap())
}

async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header("content-type", "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

async fn get_json(app: &Router, uri: &str) -> (StatusCode, Value) {
    let (status, bytes) = call(app, Method::GET, uri, None).await;
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

fn nodes_uri(filters: &str, limit: usize, offset: usize) -> String {
    let qs = serde_urlencoded::to_string([("filters", filters), ("limit", &limit.to_string()), ("offset", &offset.to_string())]).unwrap();
    format!("/api/v1/nodes?{qs}")
}

/// Every page of a listing, in order.
async fn all_pages(app: &Router, filters: &str, limit: usize) -> Vec<Value> {
    let mut items = Vec::new();
    let mut offset = 0;
    loop {
        let (status, page) = get_json(app, &nodes_uri(filters, limit, offset)).await;
        assert_eq!(status, StatusCode::OK, "{page}");
        let got = page["items"].as_array().unwrap();
        assert!(got.len() <= limit);
        items.extend(got.iter().cloned());
        match page["next"].as_u64() {
            Some(n) => offset = n as usize,
            None => {
                assert_eq!(items.len() as u64, page["total"].as_u64().unwrap());
                return items;
            }
        }
    }
}

#[tokio::test]
async fn random_filter_sets_match_the_query_module_and_pages_partition() {
    let dir = tempfile::tempdir().unwrap();
    let store = Store::open(dir.path()).unwrap();
    let mut rng = fixtures::rng(3);
    store.write(|tx| fixtures::random_graph(tx, &mut rng, 60)).unwrap();
    let app = app(dir.path(), Options::default());
    let mut nonempty = 0;
    for _ in 0..20 {
        let filters = fixtures::random_filters(&mut rng);
        let text = format_filters(&filters);
        let direct: Vec<String> = store
            .read(|tx| query::filter_nodes(tx, &filters))
            .unwrap()
            .iter()
            .map(|n| n.uuid().to_string())
            .collect();
        let limit = rng.random_range(1..=9);
        let items = all_pages(&app, &text, limit).await;
        let via_http: Vec<String> = items.iter().map(|i| i["uuid"].as_str().unwrap().to_string()).collect();
        let unique: BTreeSet<&String> = via_http.iter().collect();
        assert_eq!(unique.len(), via_http.len(), "pages overlap for `{text}`");
        assert_eq!(unique, direct.iter().collect(), "filters `{text}`");
        let ids: Vec<i64> = items.iter().map(|i| i["id"].as_i64().unwrap()).collect();
        assert!(ids.windows(2).all(|w| w[0] < w[1]));
        nonempty += usize::from(!direct.is_empty());
    }
    assert!(nonempty >= 10, "only {nonempty} filter sets matched anything");
}

#[tokio::test]
async fn pagination_defaults_and_bounds() {
    let dir = tempfile::tempdir().unwrap();
    let store = Store::open(dir.path()).unwrap();
    store
        .write(|tx| {
            for i in 0..25 {
                tx.store_node(&mut Node::int(i))?;
            }
            Ok(())
        })
        .unwrap();
    let app = app(dir.path(), Options::default());
    let (_, page) = get_json(&app, "/api/v1/nodes").await;
    assert_eq!(page["total"], 25);
    assert_eq!(page["limit"], 20);
    assert_eq!(page["items"].as_array().unwrap().len(), 20);
    assert_eq!(page["next"], 20);
    assert_eq!(page["prev"], Value::Null);
    let (_, page) = get_json(&app, "/api/v1/nodes?limit=2&offset=24").await;
    assert_eq!(page["items"].as_array().unwrap().len(), 1);
    assert_eq!(page["next"], Value::Null);
    assert_eq!(page["prev"], 22);
    for bad in ["limit=0", "limit=401"] {
        let (status, body) = get_json(&app, &format!("/api/v1/nodes?{bad}")).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{bad}: {body}");
    }
    let (status, _) = get_json(&app, "/api/v1/nodes?limit=400").await;
    assert_eq!(status, StatusCode::OK);
}

#[tokio::test]
async fn relax_parameters_are_found_by_attribute_filter() {
    let dir = tempfile::tempdir().unwrap();
    let store = Store::open(dir.path()).unwrap();
    store.write(fixtures::s1).unwrap();
    let direct = store.read(|tx| query::filter_nodes(tx, &query::parse_filters("attributes.type==\"relax\"")?)).unwrap();
    assert!(!direct.is_empty());
    let app = app(dir.path(), Options::default());
    let items = all_pages(&app, "attributes.type==\"relax\"", 400).await;
    assert_eq!(items.len(), direct.len());
    assert!(items.iter().all(|i| i["kind"] == NodeKind::DICT));
}

#[tokio::test]
async fn malformed_filters_and_unknown_paths_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path(), Options::default());
    let (status, body) = get_json(&app, &nodes_uri("label", 20, 0)).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["error"], "bad_query");
    let (status, _) = get_json(&app, &nodes_uri("label==\"unterminated", 20, 0)).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, body) = get_json(&app, &nodes_uri("colour==\"red\"", 20, 0)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["error"], "unknown_path");
}

#[tokio::test]
async fn node_documents_and_typed_link_listings() {
    let dir = tempfile::tempdir().unwrap();
    let store = Store::open(dir.path()).unwrap();
    let f = store.write(|tx| fixtures::fig2(tx, 1, 2, 3)).unwrap();
    let five = store.write(|tx| {
        let mut n = Node::int(5);
        tx.store_node(&mut n)?;
        Ok(n.uuid())
    });
    let five = five.unwrap();
    store.set_extra(five, "tag", json!("five")).unwrap();
    let app = app(dir.path(), Options::default());

    let (status, attrs) = get_json(&app, &format!("/api/v1/nodes/{five}/attributes")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(attrs, json!({"value": 5}));
    let (_, extras) = get_json(&app, &format!("/api/v1/nodes/{five}/extras")).await;
    assert_eq!(extras["tag"], "five");
    let (_, doc) = get_json(&app, &format!("/api/v1/nodes/{five}")).await;
    assert_eq!(doc["uuid"], five.to_string());
    assert_eq!(doc["kind"], NodeKind::INT);
    assert_eq!(doc["attributes"]["value"], 5);

    let d5 = f.d[4];
    let (_, incoming) = get_json(&app, &format!("/api/v1/nodes/{d5}/links/incoming")).await;
    let got: BTreeSet<(String, String, String)> = incoming
        .as_array()
        .unwrap()
        .iter()
        .map(|l| (l["type"].as_str().unwrap().into(), l["source"].as_str().unwrap().into(), l["label"].as_str().unwrap().into()))
        .collect();
    let want: BTreeSet<(String, String, String)> =
        [("CREATE".into(), f.c2.to_string(), "result".into()), ("RETURN".into(), f.w1.to_string(), "result".into())].into();
    assert_eq!(got, want);

    let (_, outgoing) = get_json(&app, &format!("/api/v1/nodes/{}/links/outgoing", f.w1)).await;
    let (_, into_w1) = get_json(&app, &format!("/api/v1/nodes/{}/links/incoming", f.w1)).await;
    let count = |v: &Value, ty: &str| v.as_array().unwrap().iter().filter(|l| l["type"] == ty).count();
    assert_eq!(count(&into_w1, "INPUT_WORK"), 3);
    assert_eq!(count(&outgoing, "CALL_CALC"), 2);
    assert_eq!(count(&outgoing, "RETURN"), 1);

    for uri in [
        format!("/api/v1/nodes/{}", Uuid::new_v4()),
        format!("/api/v1/nodes/{}/attributes", Uuid::new_v4()),
        format!("/api/v1/nodes/{}/links/incoming", Uuid::new_v4()),
        "/api/v1/nodes/not-a-uuid".to_string(),
        "/api/v1/nowhere".to_string(),
    ] {
        let (status, body) = get_json(&app, &uri).await;
        assert_eq!(status, StatusCode::NOT_FOUND, "{uri}");
        assert_eq!(body["error"], "not_found");
    }
}

#[tokio::test]
async fn repository_files_round_trip_byte_exact() {
    let dir = tempfile::tempdir().unwrap();
    let store = Store::open(dir.path()).unwrap();
    let bytes: Vec<u8> = (0..=255u8).chain((0..=255u8).rev()).collect();
    let mut node = Node::new(NodeKind::builtin(NodeKind::CALCJOB));
    node.put_file("_submit.sh", "#!/bin/bash\necho hi\n").unwrap();
    node.put_file("raw/blob.bin", bytes.clone()).unwrap();
    store.store_node(&mut node).unwrap();
    let u = node.uuid();
    let app = app(dir.path(), Options::default());

    let (_, list) = get_json(&app, &format!("/api/v1/nodes/{u}/repo/list")).await;
    let names: Vec<&str> = list.as_array().unwrap().iter().map(|f| f["path"].as_str().unwrap()).collect();
    assert_eq!(names, ["_submit.sh", "raw/blob.bin"]);
    let (status, got) = call(&app, Method::GET, &format!("/api/v1/nodes/{u}/repo/contents?path=raw/blob.bin"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(got, bytes);
    let (_, script) = call(&app, Method::GET, &format!("/api/v1/nodes/{u}/repo/contents?path=_submit.sh"), None).await;
    assert_eq!(script, store.read_file(u, "_submit.sh").unwrap());
    for path in ["missing.txt", "../etc/passwd"] {
        let (status, _) = call(&app, Method::GET, &format!("/api/v1/nodes/{u}/repo/contents?path={path}"), None).await;
        assert_eq!(status, StatusCode::NOT_FOUND, "{path}");
    }
    let (status, _) = call(&app, Method::GET, &format!("/api/v1/nodes/{u}/repo/contents"), None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

fn slow_engine(dir: &std::path::Path) -> Engine {
    let mut e = Engine::open(dir, Arc::new(Registry::with_builtins())).unwrap();
    e.configure(EngineConfig { heartbeat: 0.2, tick: 0.01, ..EngineConfig::default() }).unwrap();
    e.store()
        .write(|tx| {
            let mut c = Computer::local("slow");
            c.scheduler = SimConfig { queued_delay: 1.0, running_delay: 1.0, fail_ordinals: vec![] };
            c.save(tx)
        })
        .unwrap();
    e
}

fn slow_job(e: &Engine) -> Uuid {
    let inputs = Inputs::from([
        ("x".to_string(), Node::int(1)),
        ("y".to_string(), Node::int(2)),
        ("code".to_string(), Node::code("slowbash", "slow", "bash")),
    ]);
    e.submit(ADD_JOB, inputs).unwrap()
}

async fn wait_for_state(app: &Router, uuid: Uuid, state: &str) {
    let deadline = Instant::now() + Duration::from_secs(10);
    loop {
        let (_, rows) = get_json(app, &format!("/api/v1/processes?state={state}")).await;
        if rows["items"].as_array().unwrap().iter().any(|r| r["uuid"] == uuid.to_string()) {
            return;
        }
        assert!(Instant::now() < deadline, "{uuid} never reached {state}");
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn process_control_through_the_api() {
    let dir = tempfile::tempdir().unwrap();
    let e = slow_engine(dir.path());
    let job = slow_job(&e);
    let app = app(dir.path(), Options::default());

    // No worker alive yet.
    let (status, body) = get_json(&app, "/api/v1/daemon/status").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["alive"], 0);
    let (status, _) = call(&app, Method::POST, &format!("/api/v1/processes/{job}/action"), Some(json!({"action": "pause"}))).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);

    let workers: Vec<_> = (0..4).map(|i| e.spawn_worker(&format!("w{i}")).unwrap()).collect();
    let deadline = Instant::now() + Duration::from_secs(10);
    let body = loop {
        let (_, body) = get_json(&app, "/api/v1/daemon/status").await;
        if body["alive"] == 4 || Instant::now() > deadline {
            break body;
        }
        tokio::time::sleep(Duration::from_millis(20)).await;
    };
    assert_eq!(body["workers"].as_array().unwrap().len(), 4);
    assert_eq!(body["alive"], 4);
    assert!(body["workers"][0]["heartbeat_age"].as_f64().unwrap() >= 0.0);

    wait_for_state(&app, job, "waiting").await;
    let action = |a: &str| json!({"action": a});
    let uri = format!("/api/v1/processes/{job}/action");
    let (status, body) = call(&app, Method::POST, &uri, Some(action("pause"))).await;
    assert_eq!(status, StatusCode::OK, "{}", String::from_utf8_lossy(&body));
    let row: Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(row["state"], "paused");
    wait_for_state(&app, job, "paused").await;
    let (_, listed) = get_json(&app, &format!("/api/v1/processes?kind={}&process_type={ADD_JOB}", NodeKind::CALCJOB)).await;
    assert_eq!(listed["total"], 1);
    let (_, none) = get_json(&app, &format!("/api/v1/processes?kind={}", NodeKind::WORKFLOW)).await;
    assert_eq!(none["total"], 0);

    let (_, row) = {
        let (s, b) = call(&app, Method::POST, &uri, Some(action("play"))).await;
        (s, serde_json::from_slice::<Value>(&b).unwrap())
    };
    assert_eq!(row["state"], "waiting");
    let (status, _) = call(&app, Method::POST, &uri, Some(action("kill"))).await;
    assert_eq!(status, StatusCode::OK);
    let (status, body) = call(&app, Method::POST, &uri, Some(action("kill"))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(serde_json::from_slice::<Value>(&body).unwrap()["error"], "terminal");

    let (status, report) = get_json(&app, &format!("/api/v1/processes/{job}/report")).await;
    assert_eq!(status, StatusCode::OK);
    let states: Vec<&str> = report["history"].as_array().unwrap().iter().map(|h| h["new_state"].as_str().unwrap()).collect();
    assert_eq!(states.last(), Some(&"killed"));
    assert!(states.contains(&"paused"));
    assert_eq!(report["process"]["state"], "killed");

    let (status, _) = call(&app, Method::POST, &uri, Some(action("explode"))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = call(&app, Method::POST, &format!("/api/v1/processes/{}/action", Uuid::new_v4()), Some(action("pause"))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = get_json(&app, "/api/v1/processes?state=sleeping").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    for w in workers {
        w.stop().unwrap();
    }
    assert_eq!(e.status(job).unwrap().state, ProcessState::Killed);
}

#[tokio::test]
async fn read_only_mode_keeps_browsing_and_drops_control() {
    let dir = tempfile::tempdir().unwrap();
    let e = slow_engine(dir.path());
    let job = slow_job(&e);
    let f = e.store().write(|tx| fixtures::fig2(tx, 1, 2, 3)).unwrap();
    let app = app(dir.path(), Options { allow_control: false, ..Options::default() });
    let (status, _) = call(&app, Method::POST, &format!("/api/v1/processes/{job}/action"), Some(json!({"action": "kill"}))).await;
    assert_ne!(status, StatusCode::OK);
    assert!(status.is_client_error());
    assert_eq!(e.status(job).unwrap().state, ProcessState::Created);
    let (status, _) = get_json(&app, &format!("/api/v1/nodes/{}/links/outgoing", f.w1)).await;
    assert_eq!(status, StatusCode::OK);
    let (status, listed) = get_json(&app, "/api/v1/processes").await;
    assert_eq!(status, StatusCode::OK);
    assert!(listed["total"].as_u64().unwrap() >= 1);
    let (status, _) = get_json(&app, &format!("/api/v1/processes/{job}/report")).await;
    assert_eq!(status, StatusCode::OK);
}

#[tokio::test]
async fn cors_preflight_is_answered() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path(), Options { cors_origins: vec!["http://console.local".into()], ..Options::default() });
    let req = Request::builder()
        .method(Method::OPTIONS)
        .uri("/api/v1/processes")
        .header("origin", "http://console.local")
        .header("access-control-request-method", "POST")
        .body(Body::empty())
        .unwrap();
    let resp = app.oneshot(req).await.unwrap();
    assert_eq!(resp.headers()["access-control-allow-origin"], "http://console.local");
}
