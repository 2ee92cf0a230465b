use axum::body::Body;
use axum::http::{header, Method, Request, StatusCode};
use axum::Router;
use chrono::{TimeZone, Utc};
use factorlens_core::em::{fit, EmConfig};
use factorlens_core::factor::DecisionParams;
use factorlens_core::oracle::{
    placeholder_factor_set, random_ground_truth, Clock, OracleBackend, OracleClient, SyntheticOracleSpec,
};
use factorlens_core::probing::{collect_dataset, plan_configurations, CollectOptions};
use factorlens_core::store::Store;
use factorlens_core::verbal::canonical_map;
use factorlens_service::{router, AppState, ServiceConfig};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

const N: usize = 4;

fn clock() -> Clock {
    Clock::Fixed(Utc.with_ymd_and_hms(2026, 3, 1, 12, 0, 0).unwrap())
}

fn truth() -> DecisionParams {
    random_ground_truth(N, 2.0, 2, 7).unwrap()
}

fn spec() -> SyntheticOracleSpec {
    SyntheticOracleSpec::new(truth(), canonical_map(), 7)
}

/// Temp store holding one model fitted on a clean synthetic probe.
fn fitted_store() -> (tempfile::TempDir, Store, String) {
    let dir = tempfile::tempdir().unwrap();
    let store = Store::open(dir.path()).unwrap();
    let oracle = OracleClient::from_backend(&OracleBackend::Synthetic(spec()), clock()).unwrap();
    let fs = placeholder_factor_set(N).unwrap();
    let plan = plan_configurations(N, 256, 7).unwrap();
    let opts = CollectOptions {
        clock: clock(),
        ..Default::default()
    };
    let ds = collect_dataset(&oracle, &fs, &plan, opts).unwrap();
    let cfg = EmConfig {
        max_iters: 20,
        ..EmConfig::default()
    };
    let model = fit(&ds, &cfg).unwrap();
    let hash = store.save(&model, clock().now()).unwrap();
    (dir, store, hash)
}

fn app_with(store: Store, config: ServiceConfig) -> Router {
    router(AppState::new(store, config).unwrap())
}

fn app(store: Store) -> Router {
    app_with(
        store,
        ServiceConfig {
            clock: clock(),
            ..Default::default()
        },
    )
}

async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header(header::CONTENT_TYPE, "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let v = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap()
    };
    (status, v)
}

async fn get(app: &Router, uri: &str) -> (StatusCode, Value) {
    call(app, Method::GET, uri, None).await
}

async fn post(app: &Router, uri: &str, body: Value) -> (StatusCode, Value) {
    call(app, Method::POST, uri, Some(body)).await
}

async fn version(app: &Router, hash: &str) -> String {
    let (s, card) = get(app, &format!("/api/v1/models/{hash}")).await;
    assert_eq!(s, StatusCode::OK);
    card["version"].as_str().unwrap().to_string()
}

async fn what_if(app: &Router, hash: &str, bits: &[u8]) -> f64 {
    let (s, r) = post(app, &format!("/api/v1/models/{hash}/what-if"), json!({"config": bits})).await;
    assert_eq!(s, StatusCode::OK, "{r}");
    r["probability"].as_f64().unwrap()
}

#[tokio::test]
async fn list_card_and_ames() {
    let (_d, store, hash) = fitted_store();
    let app = app(store);
    let (s, list) = get(&app, "/api/v1/models").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(list.as_array().unwrap().len(), 1);
    assert_eq!(list[0]["hash"], hash);
    assert_eq!(list[0]["head"], true);

    let (s, card) = get(&app, &format!("/api/v1/models/{}", &hash[..10])).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(card["hash"], hash);
    assert_eq!(card["map"].as_array().unwrap().len(), 7);
    assert_eq!(card["factor_set"]["factors"].as_array().unwrap().len(), N);
    let v = card["version"].as_str().unwrap();
    assert_eq!(v.len(), 16);

    let (s, ames) = get(&app, "/api/v1/models/latest/ames").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(ames["version"], v);
    assert_eq!(ames["source"], "working");
    assert_eq!(ames["values"].as_array().unwrap().len(), N);
}

#[tokio::test]
async fn unknown_model_is_404() {
    let (_d, store, _) = fitted_store();
    let app = app(store);
    for uri in ["/api/v1/models/ffff0000", "/api/v1/models/not-a-hash/ames"] {
        let (s, body) = get(&app, uri).await;
        assert_eq!(s, StatusCode::NOT_FOUND, "{uri}");
        assert_eq!(body["error"], "not_found");
    }
    let (s, _) = post(&app, "/api/v1/models/ffff0000/what-if", json!({"config": [0, 0, 0, 0]})).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn what_if_matches_model_prediction() {
    let (_d, store, hash) = fitted_store();
    let model: factorlens_core::em::TrainedModel =
        store.load(&factorlens_core::store::ArtifactRef::Hash(hash.clone())).unwrap();
    let app = app(store);
    let bits = [1u8, 0, 1, 1];
    let p = what_if(&app, &hash, &bits).await;
    let c = factorlens_core::factor::FactorConfiguration::from_bits(&[true, false, true, true]).unwrap();
    assert_eq!(p, model.predict(&c).unwrap());

    let (s, r) = post(&app, &format!("/api/v1/models/{hash}/what-if"), json!({"config": [1, 0, 2, 1]})).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(r["error"], "invalid_request");
    let (s, _) = post(&app, &format!("/api/v1/models/{hash}/what-if"), json!({"config": [1, 0]})).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let (s, _) = post(&app, &format!("/api/v1/models/{hash}/what-if"), json!({})).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let (s, _) = post(&app, &format!("/api/v1/models/{hash}/what-if"), json!({"config": "x"})).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn exclusion_preview_makes_what_if_invariant_then_commits() {
    let (_d, store, hash) = fitted_store();
    let app = app(store);
    let base = version(&app, &hash).await;
    let k = 2;
    let before = (
        what_if(&app, &hash, &[1, 0, 0, 1]).await,
        what_if(&app, &hash, &[1, 0, 1, 1]).await,
    );

    let (s, pv) = post(
        &app,
        &format!("/api/v1/models/{hash}/edits/preview"),
        json!({"version": base, "edit": {"type": "exclude", "factor": k}, "author": "ana"}),
    )
    .await;
    assert_eq!(s, StatusCode::OK, "{pv}");
    assert_eq!(pv["base_version"], base);
    assert_ne!(pv["version"], base);
    assert_eq!(pv["ames_after"][k], 0.0);
    assert_eq!(pv["edit"]["author"], "ana");

    // working params now reflect the preview
    let off = what_if(&app, &hash, &[1, 0, 0, 1]).await;
    let on = what_if(&app, &hash, &[1, 0, 1, 1]).await;
    assert_eq!(off, on);
    assert_ne!(before.0, before.1);
    let (_, ames) = get(&app, &format!("/api/v1/models/{hash}/ames")).await;
    assert_eq!(ames["version"], pv["version"]);
    let (_, committed) = get(&app, &format!("/api/v1/models/{hash}/ames?params=committed")).await;
    assert_eq!(committed["version"], base);
    let (_, card) = get(&app, &format!("/api/v1/models/{hash}")).await;
    assert_eq!(card["pending"]["version"], pv["version"]);

    // nothing persisted yet
    let (_, list) = get(&app, "/api/v1/models").await;
    assert_eq!(list.as_array().unwrap().len(), 1);

    let (s, cm) = post(
        &app,
        &format!("/api/v1/models/{hash}/edits/commit"),
        json!({"version": base}),
    )
    .await;
    assert_eq!(s, StatusCode::OK, "{cm}");
    assert_eq!(cm["version"], pv["version"]);
    let child = cm["model"].as_str().unwrap().to_string();

    let (s, log) = get(&app, &format!("/api/v1/models/{child}/edits")).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(log["head"], cm["edit"]["id"]);
    assert_eq!(log["edits"].as_array().unwrap().len(), 1);
    assert_eq!(log["version"], cm["version"]);

    let (_, list) = get(&app, "/api/v1/models").await;
    let heads: Vec<_> = list
        .as_array()
        .unwrap()
        .iter()
        .map(|m| (m["hash"].as_str().unwrap().to_string(), m["head"].as_bool().unwrap()))
        .collect();
    assert!(heads.contains(&(hash.clone(), false)));
    assert!(heads.contains(&(child.clone(), true)));

    // committed child stays invariant to f_k
    assert_eq!(
        what_if(&app, &child, &[0, 1, 0, 0]).await,
        what_if(&app, &child, &[0, 1, 1, 0]).await
    );
}

#[tokio::test]
async fn stale_versions_conflict() {
    let (_d, store, hash) = fitted_store();
    let app = app(store);
    let base = version(&app, &hash).await;
    let preview = |v: &str| json!({"version": v, "edit": {"type": "exclude", "factor": 0}});

    let (s, body) = post(&app, &format!("/api/v1/models/{hash}/edits/preview"), preview("0123456789abcdef")).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(body["error"], "stale_version");
    assert_eq!(body["current_version"], base);

    let (s, _) = post(&app, &format!("/api/v1/models/{hash}/edits/preview"), preview(&base)).await;
    assert_eq!(s, StatusCode::OK);
    let (s, _) = post(&app, &format!("/api/v1/models/{hash}/edits/commit"), json!({"version": base})).await;
    assert_eq!(s, StatusCode::OK);

    // a second editor still holding the old head loses
    let (s, body) = post(&app, &format!("/api/v1/models/{hash}/edits/preview"), preview(&base)).await;
    assert_eq!(s, StatusCode::CONFLICT, "{body}");
    let (s, _) = post(&app, &format!("/api/v1/models/{hash}/edits/commit"), json!({"version": base})).await;
    assert_eq!(s, StatusCode::CONFLICT);
}

#[tokio::test]
async fn successor_links_survive_restart() {
    let (dir, store, hash) = fitted_store();
    let app1 = app(store);
    let base = version(&app1, &hash).await;
    post(
        &app1,
        &format!("/api/v1/models/{hash}/edits/preview"),
        json!({"version": base, "edit": {"type": "exclude", "factor": 1}}),
    )
    .await;
    let (s, _) = post(&app1, &format!("/api/v1/models/{hash}/edits/commit"), json!({"version": base})).await;
    assert_eq!(s, StatusCode::OK);

    let app2 = app(Store::open(dir.path()).unwrap());
    let (_, card) = get(&app2, &format!("/api/v1/models/{hash}")).await;
    assert_eq!(card["head"], false);
    let (s, _) = post(
        &app2,
        &format!("/api/v1/models/{hash}/edits/preview"),
        json!({"version": base, "edit": {"type": "exclude", "factor": 0}}),
    )
    .await;
    assert_eq!(s, StatusCode::CONFLICT);
}

#[tokio::test]
async fn invalid_edits_are_422() {
    let (_d, store, hash) = fitted_store();
    let app = app(store);
    let base = version(&app, &hash).await;
    let uri = format!("/api/v1/models/{hash}/edits/preview");
    for edit in [
        json!({"type": "exclude", "factor": 9}),
        json!({"type": "ratio", "anchor": 0, "target": 0, "rho": 2.0}),
        json!({"type": "ratio", "anchor": 0, "target": 1, "rho": -1.0}),
        json!({"type": "shrink", "factor": 0}),
    ] {
        let (s, body) = post(&app, &uri, json!({"version": base, "edit": edit})).await;
        assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY, "{edit}: {body}");
    }
    // no preview parked, so commit has nothing to do
    let (s, _) = post(&app, &format!("/api/v1/models/{hash}/edits/commit"), json!({"version": base})).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn ratio_preview_reports_residuals() {
    let (_d, store, hash) = fitted_store();
    let app = app(store);
    let base = version(&app, &hash).await;
    let (s, pv) = post(
        &app,
        &format!("/api/v1/models/{hash}/edits/preview"),
        json!({"version": base, "edit": {"type": "ratio", "anchor": 0, "target": 1, "rho": 2.0}}),
    )
    .await;
    assert_eq!(s, StatusCode::OK, "{pv}");
    let a = pv["ames_after"].as_array().unwrap();
    let (a0, a1) = (a[0].as_f64().unwrap(), a[1].as_f64().unwrap());
    assert!((a1 / a0 - 2.0).abs() < 1e-3, "{a1} / {a0}");
    assert!(pv["edit"]["side_effect"].as_f64().is_some());
    assert!(pv["edit"]["residuals"].as_array().is_some());
}

#[tokio::test]
async fn revert_commits_pre_edit_params() {
    let (_d, store, hash) = fitted_store();
    let app = app(store);
    let base = version(&app, &hash).await;
    post(
        &app,
        &format!("/api/v1/models/{hash}/edits/preview"),
        json!({"version": base, "edit": {"type": "exclude", "factor": 3}}),
    )
    .await;
    let (_, cm) = post(&app, &format!("/api/v1/models/{hash}/edits/commit"), json!({"version": base})).await;
    let child = cm["model"].as_str().unwrap();
    let edit_id = cm["edit"]["id"].as_str().unwrap();
    let v1 = cm["version"].as_str().unwrap();

    let (s, _) = post(&app, &format!("/api/v1/models/{child}/edits/ffff/revert"), json!({"version": v1})).await;
    assert_eq!(s, StatusCode::NOT_FOUND);

    let (s, rv) = post(
        &app,
        &format!("/api/v1/models/{child}/edits/{edit_id}/revert"),
        json!({"version": v1}),
    )
    .await;
    assert_eq!(s, StatusCode::OK, "{rv}");
    assert_eq!(rv["version"], base);
    let (_, log) = get(&app, &format!("/api/v1/models/{}/edits", rv["model"].as_str().unwrap())).await;
    assert_eq!(log["edits"].as_array().unwrap().len(), 2);
    assert_eq!(log["head"], rv["edit"]["id"]);
}

#[tokio::test]
async fn discard_preview_restores_committed_params() {
    let (_d, store, hash) = fitted_store();
    let app = app(store);
    let base = version(&app, &hash).await;
    post(
        &app,
        &format!("/api/v1/models/{hash}/edits/preview"),
        json!({"version": base, "edit": {"type": "exclude", "factor": 0}}),
    )
    .await;
    let (s, _) = call(&app, Method::DELETE, &format!("/api/v1/models/{hash}/edits/preview"), None).await;
    assert_eq!(s, StatusCode::NO_CONTENT);
    let (_, ames) = get(&app, &format!("/api/v1/models/{hash}/ames")).await;
    assert_eq!(ames["version"], base);
    let (s, _) = call(&app, Method::DELETE, &format!("/api/v1/models/{hash}/edits/preview"), None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn partial_what_if_needs_a_backend() {
    let (dir, store, hash) = fitted_store();
    let app1 = app(store);
    let body = json!({"observed": [1, null, null, 0], "samples": 8});
    let (s, r) = post(&app1, &format!("/api/v1/models/{hash}/what-if"), body.clone()).await;
    assert_eq!(s, StatusCode::BAD_GATEWAY);
    assert_eq!(r["error"], "backend_failure");

    let app2 = app_with(
        Store::open(dir.path()).unwrap(),
        ServiceConfig {
            backend: Some(OracleBackend::Synthetic(spec())),
            clock: clock(),
            ..Default::default()
        },
    );
    let (s, r) = post(&app2, &format!("/api/v1/models/{hash}/what-if"), body.clone()).await;
    assert_eq!(s, StatusCode::OK, "{r}");
    assert_eq!(r["samples_used"], 8);
    let samples = r["samples"].as_array().unwrap();
    assert_eq!(samples.len(), 8);
    for smp in samples {
        assert_eq!(smp[0], 1);
        assert_eq!(smp[3], 0);
    }
    let p = r["probability"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&p));
    assert!(r["standard_error"].as_f64().is_some());
    // same seed, same answer
    let (_, again) = post(&app2, &format!("/api/v1/models/{hash}/what-if"), body).await;
    assert_eq!(again, r);

    let (s, _) = post(
        &app2,
        &format!("/api/v1/models/{hash}/what-if"),
        json!({"observed": [1, null, null, 0], "samples": 0}),
    )
    .await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn read_endpoints_leave_store_untouched() {
    let (dir, store, hash) = fitted_store();
    let app = app(store);
    let snapshot = || {
        let mut files: Vec<_> = walk(dir.path());
        files.sort();
        files
    };
    let before = snapshot();
    get(&app, "/api/v1/models").await;
    get(&app, &format!("/api/v1/models/{hash}")).await;
    get(&app, &format!("/api/v1/models/{hash}/ames")).await;
    get(&app, &format!("/api/v1/models/{hash}/edits")).await;
    what_if(&app, &hash, &[0, 0, 0, 0]).await;
    assert_eq!(before, snapshot());
}

fn walk(p: &std::path::Path) -> Vec<(std::path::PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(p).unwrap() {
        let path = e.unwrap().path();
        if path.is_dir() {
            out.extend(walk(&path));
        } else {
            let bytes = std::fs::read(&path).unwrap();
            out.push((path, bytes));
        }
    }
    out
}

#[tokio::test]
async fn token_and_cors() {
    let (_d, store, _) = fitted_store();
    let app = app_with(
        store,
        ServiceConfig {
            clock: clock(),
            token: Some("s3cret".into()),
            allowed_origin: Some("http://localhost:5173".into()),
            ..Default::default()
        },
    );
    let (s, body) = get(&app, "/api/v1/models").await;
    assert_eq!(s, StatusCode::UNAUTHORIZED);
    assert_eq!(body["error"], "unauthorized");

    let req = Request::get("/api/v1/models")
        .header(header::AUTHORIZATION, "Bearer s3cret")
        .header(header::ORIGIN, "http://localhost:5173")
        .body(Body::empty())
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    assert_eq!(
        resp.headers()[header::ACCESS_CONTROL_ALLOW_ORIGIN],
        "http://localhost:5173"
    );

    let preflight = Request::builder()
        .method(Method::OPTIONS)
        .uri("/api/v1/models")
        .header(header::ORIGIN, "http://localhost:5173")
        .header(header::ACCESS_CONTROL_REQUEST_METHOD, "POST")
        .body(Body::empty())
        .unwrap();
    let resp = app.clone().oneshot(preflight).await.unwrap();
    assert!(resp.status().is_success());
}
