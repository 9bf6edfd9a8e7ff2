use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use relent::{
    classify, Backend, EntailmentScore, FixtureBackend, InferenceConfig, LexicalBackend, MissPolicy,
    PremiseHypothesisPair, RelationEntry, RelationExample, RelationSchema, RemoteBackend, Span,
};
use relent_service::{nli_router, router, AppState, Persistence, ProbeResponse, SchemaView, VERSION_HEADER};
use serde_json::{json, Value};
use tower::ServiceExt;

const NEG: &str = "no_relation";

async fn send(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Option<u64>, Vec<u8>) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string()))
            .unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let version = resp
        .headers()
        .get(VERSION_HEADER)
        .map(|v| v.to_str().unwrap().parse().unwrap());
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, version, bytes)
}

fn json_of(bytes: &[u8]) -> Value {
    serde_json::from_slice(bytes).unwrap()
}

fn small_schema() -> RelationSchema {
    RelationSchema::new(
        [
            RelationEntry::new("per:date_of_birth", ["{subj} was born on {obj}"], ["PERSON"], ["DATE"]).unwrap(),
            RelationEntry::new(
                "org:top_members/employees",
                ["{obj} is a high level member of {subj}"],
                ["ORGANIZATION"],
                ["PERSON"],
            )
            .unwrap(),
        ],
        NEG,
        Some("{subj} and {obj} are not related"),
    )
    .unwrap()
}

fn example(id: &str, sentence: &str, st: &str, ot: &str) -> RelationExample {
    let tokens: Vec<String> = sentence.split(' ').map(String::from).collect();
    let n = tokens.len();
    RelationExample::new(id, tokens, Span::new(0, 1), Span::new(n - 1, n), st, ot, None).unwrap()
}

fn app_with(schema: RelationSchema, backend: impl Backend + 'static, persistence: Persistence) -> (Router, AppState) {
    let state = AppState::new(schema, InferenceConfig::new(Arc::new(backend)), persistence).unwrap();
    (router(state.clone()), state)
}

fn score(e: f64) -> EntailmentScore {
    EntailmentScore::new(e, (1.0 - e) / 2.0, (1.0 - e) / 2.0).unwrap()
}

#[tokio::test]
async fn schema_document_and_version() {
    let (app, _) = app_with(RelationSchema::tacred(), LexicalBackend, Persistence::default());
    let (status, version, body) = send(&app, "GET", "/schema", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(version, Some(1));
    let schema = RelationSchema::from_toml_str(std::str::from_utf8(&body).unwrap()).unwrap();
    assert_eq!(schema.len(), 41);
    assert_eq!(schema, RelationSchema::tacred());

    let (_, _, body) = send(&app, "GET", "/schema?format=json", None).await;
    let view: SchemaView = serde_json::from_slice(&body).unwrap();
    assert_eq!(view.relations.len(), 41);
    assert_eq!(view.version, 1);
    assert_eq!(send(&app, "GET", "/schema?format=yaml", None).await.0, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn empty_schema_serves_empty_relations() {
    let empty = RelationSchema::new([], NEG, None).unwrap();
    let (app, _) = app_with(empty, LexicalBackend, Persistence::default());
    let (_, _, body) = send(&app, "GET", "/schema", None).await;
    let reloaded = RelationSchema::from_toml_str(std::str::from_utf8(&body).unwrap()).unwrap();
    assert!(reloaded.is_empty());
    let (_, _, body) = send(&app, "GET", "/schema?format=json", None).await;
    assert!(json_of(&body)["relations"].as_object().unwrap().is_empty());
}

#[tokio::test]
async fn template_edit_is_versioned_and_persisted() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("schema.toml");
    std::fs::write(&path, small_schema().to_toml_string()).unwrap();
    let (app, _) = app_with(small_schema(), LexicalBackend, Persistence::beside(&path));

    let templates = ["{subj} was born on {obj}", "{subj}'s birthday is on {obj}"];
    let (status, version, body) = send(
        &app,
        "PUT",
        "/schema/per:date_of_birth/templates",
        Some(json!({"version": 1, "templates": templates})),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{}", String::from_utf8_lossy(&body));
    assert_eq!(version, Some(2));
    assert_eq!(json_of(&body)["relations"]["per:date_of_birth"]["templates"], json!(templates));

    let (_, version, body) = send(&app, "GET", "/schema", None).await;
    assert_eq!(version, Some(2));
    let served = RelationSchema::from_toml_str(std::str::from_utf8(&body).unwrap()).unwrap();
    assert_eq!(served.relation("per:date_of_birth").unwrap().templates().len(), 2);
    assert_eq!(RelationSchema::load(&path).unwrap(), served);

    // Stale token.
    let (status, _, _) = send(
        &app,
        "PUT",
        "/schema/per:date_of_birth/templates",
        Some(json!({"version": 1, "templates": ["{subj} x {obj}"]})),
    )
    .await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(RelationSchema::load(&path).unwrap(), served);
}

#[tokio::test]
async fn invalid_edits_leave_schema_unchanged() {
    let (app, state) = app_with(small_schema(), LexicalBackend, Persistence::default());
    let before = state.schema();
    for body in [
        json!({"version": 1, "templates": ["{subj} has no object"]}),
        json!({"version": 1, "templates": []}),
        json!({"version": 1, "templates": vec!["{subj} {obj} t"; 9]}),
        json!({"templates": ["{subj} x {obj}"]}),
    ] {
        let (status, _, _) = send(&app, "PUT", "/schema/per:date_of_birth/templates", Some(body)).await;
        assert_eq!(status, StatusCode::BAD_REQUEST);
    }
    let (status, _, _) = send(
        &app,
        "PUT",
        "/schema/per:nope/templates",
        Some(json!({"version": 1, "templates": ["{subj} x {obj}"]})),
    )
    .await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(state.schema(), before);
}

#[tokio::test]
async fn slash_in_label_must_be_percent_encoded() {
    let (app, _) = app_with(small_schema(), LexicalBackend, Persistence::default());
    let body = json!({"version": 1, "templates": ["{obj} works for {subj}"]});
    let (status, _, _) = send(&app, "PUT", "/schema/org:top_members%2Femployees/templates", Some(body)).await;
    assert_eq!(status, StatusCode::OK);
}

#[tokio::test]
async fn racing_writers_get_one_conflict() {
    let (app, _) = app_with(small_schema(), LexicalBackend, Persistence::default());
    let put = |t: &'static str| {
        let app = app.clone();
        async move {
            send(
                &app,
                "PUT",
                "/schema/per:date_of_birth/templates",
                Some(json!({"version": 1, "templates": [t]})),
            )
            .await
            .0
        }
    };
    let (a, b) = tokio::join!(
        tokio::spawn(put("{subj} was born in {obj}")),
        tokio::spawn(put("{subj} birth date {obj}"))
    );
    let mut statuses = [a.unwrap(), b.unwrap()];
    statuses.sort();
    assert_eq!(statuses, [StatusCode::OK, StatusCode::CONFLICT]);
}

#[tokio::test]
async fn probe_scores_match_direct_backend_calls() {
    let mut fixture = FixtureBackend::default();
    fixture.insert("Smith was born 1960", "Smith was born on 1960", score(0.9));
    fixture.insert("Jones arrived in 1999", "Jones was born on 1999", score(0.2));
    let direct = fixture.clone();
    let (app, _) = app_with(small_schema(), fixture, Persistence::default());
    let examples = vec![
        example("a", "Smith was born 1960", "PERSON", "DATE"),
        example("b", "Jones arrived in 1999", "PERSON", "DATE"),
        example("c", "Lee left 2001", "PERSON", "DATE"),
    ];
    let (status, _, body) = send(
        &app,
        "POST",
        "/probe-template",
        Some(json!({"template": "{subj} was born on {obj}", "relation": "per:date_of_birth", "examples": examples})),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    let resp: ProbeResponse = serde_json::from_slice(&body).unwrap();
    assert_eq!(resp.results.len(), 3);
    assert_eq!(resp.results[0].score, score(0.9));
    for (r, e) in resp.results.iter().zip(&examples) {
        let one = direct
            .score_batch(&[PremiseHypothesisPair::new(relent::premise_of(e), r.hypothesis.clone())])
            .unwrap();
        assert_eq!(r.score, one[0]);
        assert_eq!(r.example_id, e.id());
    }
}

#[tokio::test]
async fn probe_errors() {
    let strict = FixtureBackend::new(Default::default(), MissPolicy::Strict);
    let (app, _) = app_with(small_schema(), strict, Persistence::default());
    let ex = vec![example("a", "Smith was born 1960", "PERSON", "DATE")];
    let cases = [
        (json!({"template": "{subj} was born", "relation": "per:date_of_birth", "examples": ex}), StatusCode::BAD_REQUEST),
        (json!({"template": "{subj} x {obj}", "relation": "per:date_of_birth", "examples": []}), StatusCode::BAD_REQUEST),
        (json!({"template": "{subj} x {obj}", "relation": "per:nope", "examples": ex}), StatusCode::NOT_FOUND),
        (json!({"template": "{subj} x {obj}", "relation": "per:date_of_birth", "examples": ex}), StatusCode::BAD_GATEWAY),
    ];
    for (body, expected) in cases {
        let (status, _, bytes) = send(&app, "POST", "/probe-template", Some(body)).await;
        assert_eq!(status, expected, "{}", String::from_utf8_lossy(&bytes));
        assert!(json_of(&bytes)["error"].is_string());
    }
}

#[tokio::test]
async fn classify_one_agrees_with_library() {
    let mut fixture = FixtureBackend::default();
    fixture.insert("Smith was born 1960", "Smith was born on 1960", score(0.6));
    let config = InferenceConfig::new(Arc::new(fixture.clone()));
    let (app, _) = app_with(small_schema(), fixture, Persistence::default());
    let e = example("a", "Smith was born 1960", "PERSON", "DATE");

    let (status, _, body) = send(&app, "POST", "/classify-one", Some(serde_json::to_value(&e).unwrap())).await;
    assert_eq!(status, StatusCode::OK);
    let served: relent::Prediction = serde_json::from_slice(&body).unwrap();
    assert_eq!(served, classify(&e, &small_schema(), &config).unwrap());
    assert_eq!(served.label, "per:date_of_birth");

    let (_, _, body) = send(&app, "POST", "/classify-one?threshold=0.7", Some(serde_json::to_value(&e).unwrap())).await;
    assert_eq!(json_of(&body)["label"], NEG);

    let gated = example("g", "Acme Paris", "ORGANIZATION", "CITY");
    let (_, _, body) = send(&app, "POST", "/classify-one", Some(serde_json::to_value(&gated).unwrap())).await;
    let p: relent::Prediction = serde_json::from_slice(&body).unwrap();
    assert_eq!(p.label, NEG);
    assert!(p.per_relation.is_empty());

    let bad = json!({"id": "x", "tokens": ["a"], "subj_span": [0, 1], "obj_span": [0, 1], "subj_type": "A", "obj_type": "B"});
    assert_eq!(send(&app, "POST", "/classify-one", Some(bad)).await.0, StatusCode::BAD_REQUEST);
    let (status, _, _) = send(&app, "POST", "/classify-one?threshold=2", Some(serde_json::to_value(&e).unwrap())).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn probe_examples_round_trip_through_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("schema.toml");
    std::fs::write(&path, small_schema().to_toml_string()).unwrap();
    let (app, _) = app_with(small_schema(), LexicalBackend, Persistence::beside(&path));
    let (_, _, body) = send(&app, "GET", "/probes/per:date_of_birth", None).await;
    assert_eq!(json_of(&body), json!([]));

    let probes = vec![example("a", "Smith was born 1960", "PERSON", "DATE")];
    let (status, _, _) = send(&app, "PUT", "/probes/per:date_of_birth", Some(serde_json::to_value(&probes).unwrap())).await;
    assert_eq!(status, StatusCode::OK);

    // A fresh server reads the sidecar back.
    let (app, _) = app_with(small_schema(), LexicalBackend, Persistence::beside(&path));
    let (_, _, body) = send(&app, "GET", "/probes/per:date_of_birth", None).await;
    let back: Vec<RelationExample> = serde_json::from_slice(&body).unwrap();
    assert_eq!(back, probes);
    assert_eq!(send(&app, "GET", "/probes/per:nope", None).await.0, StatusCode::NOT_FOUND);
}

#[test]
fn nli_router_speaks_the_remote_protocol() {
    let rt = tokio::runtime::Runtime::new().unwrap();
    let listener = rt.block_on(tokio::net::TcpListener::bind("127.0.0.1:0")).unwrap();
    let addr = listener.local_addr().unwrap();
    rt.spawn(async move {
        axum::serve(listener, nli_router(Arc::new(LexicalBackend))).await.unwrap();
    });
    let remote = RemoteBackend::new(&addr.to_string(), 4, std::time::Duration::from_secs(5)).unwrap();
    let pairs: Vec<_> = (0..10)
        .map(|i| PremiseHypothesisPair::new(format!("a b c {i}"), format!("a {i} z")))
        .collect();
    assert_eq!(remote.score_batch(&pairs).unwrap(), LexicalBackend.score_batch(&pairs).unwrap());
}
