use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use taxo_cli::data;
use taxo_cli::server::{router, AppState};
use taxo_core::graph::{split_dataset, SplitConfig};
use taxo_core::scoring::init_params;
use taxo_core::service::{
    generate_prompts, session_metrics, Condition, DecisionLog, ManualClock, PromptConfig, PromptSet, Workspace,
};
use taxo_core::synth::balanced_tree;
use taxo_core::{EmbeddingStore, WordVectorTable};

const DIM: usize = 8;
const BUDGET: u64 = 60_000;

struct Fixture {
    _dir: tempfile::TempDir,
    graph_path: PathBuf,
    log_dir: PathBuf,
    clock: Arc<ManualClock>,
    app: Router,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let graph_path = dir.path().join("graph.tsv");
    let log_dir = dir.path().join("logs");
    std::fs::write(&graph_path, balanced_tree(&[2, 3, 3]).to_edge_list()).unwrap();
    let g = data::load_graph(&graph_path).unwrap();
    let store = EmbeddingStore::random(g.len(), DIM, 7);
    let params = init_params(DIM, 2, &[4], 7).unwrap();
    let split = split_dataset(&g, &SplitConfig { seed: 1, ..SplitConfig::default() }).unwrap();
    let cfg = PromptConfig::new(Condition::Hf, 3);
    let prompts = generate_prompts(&g, &split.test, &cfg).unwrap();
    let set = PromptSet::new(&cfg, prompts);
    let ws = Workspace::new(&graph_path, g, store, params, WordVectorTable::new(DIM)).unwrap();
    let clock = Arc::new(ManualClock::new(1_000));
    let state = AppState::new(ws, clock.clone())
        .with_prompt_set(set)
        .with_log_dir(log_dir.clone())
        .with_budget_ms(BUDGET);
    Fixture {
        _dir: dir,
        graph_path,
        log_dir,
        clock,
        app: router(Arc::new(state)),
    }
}

async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap()
    };
    (status, value)
}

async fn get(app: &Router, uri: &str) -> (StatusCode, Value) {
    call(app, Method::GET, uri, None).await
}

async fn post(app: &Router, uri: &str, body: Value) -> (StatusCode, Value) {
    call(app, Method::POST, uri, Some(body)).await
}

fn dummy_id(graph_path: &Path) -> u64 {
    data::load_graph(graph_path).unwrap().dummy_root().unwrap().index() as u64
}

#[tokio::test]
async fn tree_expands_to_requested_depth() {
    let f = fixture();
    let (status, root) = get(&f.app, "/graph/tree?depth=3").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(root["label"], "<root>");
    let top = &root["children"][0];
    assert_eq!(root["children"].as_array().unwrap().len(), 1);
    assert_eq!(top["child_count"], 2);
    let tops = top["children"].as_array().unwrap();
    assert_eq!(tops.len(), 2);
    for t in tops {
        assert_eq!(t["child_count"], 3);
        let mids = t["children"].as_array().unwrap();
        assert_eq!(mids.len(), 3);
        assert!(mids.iter().all(|m| m["children"].as_array().unwrap().is_empty()));
        assert!(mids.iter().all(|m| m["child_count"] == 3));
    }

    let id = tops[0]["id"].as_u64().unwrap();
    let (status, sub) = get(&f.app, &format!("/graph/tree?root={id}&depth=0")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(sub["id"], id);
    assert!(sub["children"].as_array().unwrap().is_empty());

    let (status, err) = get(&f.app, "/graph/tree?root=9999").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(err["error"], "unknown_node");
}

#[tokio::test]
async fn neighborhood_lists_nodes_by_distance() {
    let f = fixture();
    let g = data::load_graph(&f.graph_path).unwrap();
    let leaf = g.leaves()[0];
    let (status, n) = get(&f.app, &format!("/node/{}/neighborhood?h=2", leaf.index())).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(n["center"], leaf.index() as u64);
    assert_eq!(n["h"], 2);
    let nodes = n["nodes"].as_array().unwrap();
    // parent, two siblings, grandparent
    assert_eq!(nodes.len(), 4);
    let dists: Vec<u64> = nodes.iter().map(|e| e["distance"].as_u64().unwrap()).collect();
    assert_eq!(dists, [1, 2, 2, 2]);
    let dummy = dummy_id(&f.graph_path);
    assert!(nodes.iter().all(|e| e["id"] != dummy && e["id"] != n["center"]));

    let (status, _) = get(&f.app, "/node/9999/neighborhood").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn session_flow_scores_and_logs_decisions() {
    let f = fixture();
    let (status, created) = post(&f.app, "/sessions", json!({"condition": "HF", "session_id": "alice"})).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(created["session_id"], "alice");
    assert_eq!(created["budget_ms"], BUDGET);
    assert_eq!(created["started_ms"], 1_000);
    let total = created["total"].as_u64().unwrap();
    assert!(total >= 2);

    let (status, err) = post(&f.app, "/sessions", json!({"condition": "HF", "session_id": "alice"})).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(err["error"], "duplicate_session");
    let (status, _) = post(&f.app, "/sessions", json!({"condition": "NHF"})).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = post(&f.app, "/sessions", json!({"condition": "HF", "session_id": "../x"})).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let dummy = dummy_id(&f.graph_path);
    let mut last_score = 0i64;
    for i in 1..=total {
        let (status, next) = get(&f.app, "/sessions/alice/next").await;
        assert_eq!(status, StatusCode::OK);
        assert_eq!(next["index"], i);
        assert_eq!(next["total"], total);
        let prompt = &next["prompt"];
        // the reviewer never sees the answer
        assert!(prompt.get("true_parent").is_none());
        assert!(prompt.get("support_correct").is_none());
        let pid = prompt["prompt_id"].as_u64().unwrap();

        if i == 1 {
            let (status, err) = get(&f.app, "/sessions/alice/metrics").await;
            assert_eq!(status, StatusCode::CONFLICT);
            assert_eq!(err["error"], "session_open");
            let (status, err) = post(
                &f.app,
                "/sessions/alice/decisions",
                json!({"prompt_id": pid, "chosen_id": dummy}),
            )
            .await;
            assert_eq!(status, StatusCode::BAD_REQUEST);
            assert_eq!(err["error"], "dummy_choice");
            let (status, err) = post(
                &f.app,
                "/sessions/alice/decisions",
                json!({"prompt_id": pid + 1, "chosen_id": 0}),
            )
            .await;
            assert_eq!(status, StatusCode::CONFLICT);
            assert_eq!(err["error"], "not_issued");
        }

        f.clock.advance(500);
        let chosen = prompt["preselected"].clone();
        let (status, ack) = post(
            &f.app,
            "/sessions/alice/decisions",
            json!({"prompt_id": pid, "chosen_id": chosen}),
        )
        .await;
        assert_eq!(status, StatusCode::CREATED);
        assert!(ack.get("true_parent").is_none());
        assert_eq!(ack["elapsed_ms"], 500);
        assert_eq!(ack["closed"], i == total);
        let score = ack["score"].as_i64().unwrap();
        assert_eq!((score - last_score).abs(), 1);
        assert_eq!(
            score,
            ack["correct"].as_i64().unwrap() - ack["incorrect"].as_i64().unwrap()
        );
        last_score = score;

        if i == 1 {
            let (status, err) = post(
                &f.app,
                "/sessions/alice/decisions",
                json!({"prompt_id": pid, "chosen_id": chosen}),
            )
            .await;
            assert_eq!(status, StatusCode::CONFLICT);
            assert_eq!(err["error"], "duplicate_decision");
        }
    }

    let (status, err) = get(&f.app, "/sessions/alice/next").await;
    assert_eq!(status, StatusCode::GONE);
    assert_eq!(err["error"], "finished");

    let (status, export) = get(&f.app, "/sessions/alice/metrics").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(export["decisions"].as_array().unwrap().len() as u64, total);
    // accepting every preselection: correct exactly on the supported half
    let overall = &export["metrics"]["overall"];
    assert_eq!(overall["decisions"], total);
    assert_eq!(overall["compliance_pct"], 100.0);
    assert_eq!(overall["mean_time_per_prompt_s"], 0.5);
    assert_eq!(overall["incorrect"], export["metrics"]["support_incorrect"]["decisions"]);
    assert_eq!(overall["total_score"], last_score);

    let replayed = DecisionLog::replay(&f.log_dir.join("alice.jsonl")).unwrap();
    assert_eq!(replayed.len() as u64, total);
    let from_log = serde_json::to_value(session_metrics(&replayed).unwrap()).unwrap();
    assert_eq!(from_log, export["metrics"]);
}

#[tokio::test]
async fn sessions_expire_with_the_clock() {
    let f = fixture();
    let (_, created) = post(&f.app, "/sessions", json!({"condition": "HF"})).await;
    assert_eq!(created["session_id"], "s1");
    let (_, next) = get(&f.app, "/sessions/s1/next").await;
    let pid = next["prompt"]["prompt_id"].clone();
    let chosen = next["prompt"]["preselected"].clone();
    f.clock.advance(BUDGET - 1);
    let (status, ack) = post(&f.app, "/sessions/s1/decisions", json!({"prompt_id": pid, "chosen_id": chosen})).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(ack["remaining_ms"], 1);

    f.clock.advance(1);
    let (status, err) = get(&f.app, "/sessions/s1/next").await;
    assert_eq!(status, StatusCode::GONE);
    assert_eq!(err["error"], "expired");
    let (status, export) = get(&f.app, "/sessions/s1/metrics").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(export["decisions"].as_array().unwrap().len(), 1);

    let (status, err) = get(&f.app, "/sessions/nobody/next").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(err["error"], "unknown_session");
}

#[tokio::test]
async fn attach_persists_and_reindex_admits() {
    let f = fixture();
    let (status, pred) = post(&f.app, "/predict", json!({"text": "brand new topic", "k": 3})).await;
    assert_eq!(status, StatusCode::OK);
    let cands = pred["candidates"].as_array().unwrap();
    assert_eq!(cands.len(), 3);
    let parent = cands[0]["id"].as_u64().unwrap();
    let before = std::fs::read_to_string(&f.graph_path).unwrap();

    let (status, att) = post(&f.app, "/attach", json!({"label": "brand new topic", "parent_id": parent})).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(att["pending"], true);
    assert_eq!(att["parent_id"], parent);
    let after = std::fs::read_to_string(&f.graph_path).unwrap();
    assert_eq!(after.lines().count(), before.lines().count() + 1);
    assert!(after.lines().last().unwrap().starts_with("brand new topic\t"));

    let (status, err) = post(&f.app, "/attach", json!({"label": "brand new topic", "parent_id": parent})).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(err["error"], "duplicate_label");
    let (status, _) = post(&f.app, "/attach", json!({"label": "x", "parent_id": 9999})).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    // pending nodes are not candidates until re-indexed
    let new_id = att["id"].clone();
    let (_, pred) = post(&f.app, "/predict", json!({"text": "anything", "k": 1000})).await;
    assert!(pred["candidates"].as_array().unwrap().iter().all(|c| c["id"] != new_id));

    let (status, re) = post(&f.app, "/reindex", json!(null)).await;
    assert_eq!(status, StatusCode::OK, "{re}");
    assert_eq!(re["admitted"], 1);
    let g = data::load_graph(&f.graph_path).unwrap();
    assert_eq!(re["nodes"], (g.len() - 1) as u64);
    let (_, pred) = post(&f.app, "/predict", json!({"text": "anything", "k": 1000})).await;
    assert!(pred["candidates"].as_array().unwrap().iter().any(|c| c["id"] == new_id));
}
