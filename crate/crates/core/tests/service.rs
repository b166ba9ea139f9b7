mod common;

use std::path::{Path, PathBuf};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use relabel::project::{Project, ProjectConfig};
use relabel::service::{router, AppState, PAGE_SIZE};

const CONFIG: &str = r#"
[[tokens]]
token = "root"
actor = "admin"
role = "admin"

[[tokens]]
token = "expert"
actor = "expert"
role = "adjudicator"

[[tokens]]
token = "expert-as-annotator"
actor = "expert"
role = "annotator"
"#;

/// Project dir with the planted corpus ingested and classified through the CLI.
fn project_dir() -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let files = common::write_inputs(dir.path());
    let mut toml = CONFIG.to_string();
    for lang in common::LANGUAGES {
        toml += &format!("\n[[tokens]]\ntoken = \"tok-{lang}\"\nactor = \"ann-{lang}\"\nrole = \"annotator\"\n");
    }
    let config = dir.path().join("relabel.toml");
    std::fs::write(&config, toml).unwrap();
    cli(&config, &["ingest", "--in", files.corpus.to_str().unwrap()]);
    let judgments = dir.path().join("data/judgments/meat-eater.jsonl");
    std::fs::create_dir_all(judgments.parent().unwrap()).unwrap();
    cli(
        &config,
        &[
            "classify",
            "--label",
            common::LABEL,
            "--backend",
            "stub",
            "--stub-responses",
            files.recorded.to_str().unwrap(),
            "--out",
            judgments.to_str().unwrap(),
        ],
    );
    (dir, config)
}

fn cli(config: &Path, args: &[&str]) -> String {
    let mut argv = vec!["relabel", "--config", config.to_str().unwrap()];
    argv.extend(args);
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = relabel::cli::run_with(argv, &mut out, &mut err);
    assert_eq!(code, 0, "{args:?}: {}", String::from_utf8_lossy(&err));
    String::from_utf8(out).unwrap()
}

fn app(config: &Path) -> Router {
    let project = Project::open(ProjectConfig::load(config).unwrap()).unwrap();
    router(AppState::new(project))
}

async fn call(app: &Router, method: &str, uri: &str, token: Option<&str>, body: Option<Value>) -> (StatusCode, Value) {
    let (status, text) = call_raw(app, method, uri, token, body).await;
    let value = serde_json::from_str(&text).unwrap_or(Value::String(text));
    (status, value)
}

async fn call_raw(
    app: &Router,
    method: &str,
    uri: &str,
    token: Option<&str>,
    body: Option<Value>,
) -> (StatusCode, String) {
    let mut req = Request::builder().method(method).uri(uri);
    if let Some(t) = token {
        req = req.header("authorization", format!("Bearer {t}"));
    }
    let req = match body {
        Some(b) => req.header("content-type", "application/json").body(Body::from(b.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, String::from_utf8(bytes.to_vec()).unwrap())
}

fn token_for(instance: &str) -> String {
    let i: usize = instance[1..].parse().unwrap();
    format!("tok-{}", common::LANGUAGES[i % 4])
}

fn human(instance: &str) -> Value {
    json!({ common::LABEL: u8::from(common::human(instance)) })
}

async fn create(app: &Router, ids: impl IntoIterator<Item = usize>) -> String {
    let ids: Vec<String> = ids.into_iter().map(common::id).collect();
    let (s, v) =
        call(app, "POST", "/batches", Some("root"), Some(json!({ "instance_ids": ids, "labels": [common::LABEL] })))
            .await;
    assert_eq!(s, StatusCode::OK, "{v}");
    v["batch_id"].as_str().unwrap().to_string()
}

#[tokio::test]
async fn reveal_is_gated_on_a_submitted_judgment() {
    let (_dir, config) = project_dir();
    let app = app(&config);
    let b = create(&app, 60..64).await;
    let task = format!("/tasks/{b}:i060");

    let (s, v) = call(&app, "POST", &format!("{task}/reveal"), Some("tok-en"), None).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(v["code"], "gating_error");

    let (s, v) =
        call(&app, "POST", &format!("{task}/judgment"), Some("tok-en"), Some(json!({ "values": human("i060") }))).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["state"], "judged");

    let (s, v) = call(&app, "POST", &format!("{task}/reveal"), Some("tok-en"), None).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["judgments"][0]["label_id"], common::LABEL);
    assert_eq!(v["judgments"][0]["score"], 1);

    let (s, v) =
        call(&app, "POST", &format!("{task}/judgment"), Some("tok-en"), Some(json!({ "values": human("i060") }))).await;
    assert_eq!(s, StatusCode::CONFLICT, "{v}");
}

#[tokio::test]
async fn roles_and_tokens_are_enforced() {
    let (_dir, config) = project_dir();
    let app = app(&config);
    let b = create(&app, 0..8).await;
    let task = format!("/tasks/{b}:i000");

    assert_eq!(call(&app, "GET", "/batches", None, None).await.0, StatusCode::UNAUTHORIZED);
    assert_eq!(call(&app, "GET", "/batches", Some("nope"), None).await.0, StatusCode::UNAUTHORIZED);
    assert_eq!(
        call(&app, "POST", "/batches", Some("tok-en"), Some(json!({ "instance_ids": ["i001"], "group": "diet" })))
            .await
            .0,
        StatusCode::FORBIDDEN
    );

    let (s, v) =
        call(&app, "POST", &format!("{task}/judgment"), Some("expert"), Some(json!({ "values": human("i000") }))).await;
    assert_eq!(s, StatusCode::FORBIDDEN, "{v}");
    assert_eq!(v["code"], "forbidden");

    let (s, _) = call(&app, "POST", &format!("{task}/adjudicate"), Some("tok-en"), Some(json!({ "note": "" }))).await;
    assert_eq!(s, StatusCode::FORBIDDEN);

    // an expert who judged a task cannot adjudicate it
    let (s, v) = call(
        &app,
        "POST",
        &format!("{task}/judgment"),
        Some("expert-as-annotator"),
        Some(json!({ "values": human("i000") })),
    )
    .await;
    assert_eq!(s, StatusCode::OK, "{v}");
    let (s, _) =
        call(&app, "POST", &format!("{task}/flag"), Some("expert-as-annotator"), Some(json!({ "note": "unsure" })))
            .await;
    assert_eq!(s, StatusCode::OK);
    let (s, v) = call(&app, "POST", &format!("{task}/adjudicate"), Some("expert"), Some(json!({ "note": "" }))).await;
    assert_eq!(s, StatusCode::FORBIDDEN, "{v}");

    // the language is now held by the expert
    let (s, v) = call(
        &app,
        "POST",
        &format!("/tasks/{b}:i004/judgment"),
        Some("tok-en"),
        Some(json!({ "values": human("i004") })),
    )
    .await;
    assert_eq!(s, StatusCode::CONFLICT, "{v}");
    assert_eq!(v["code"], "annotator_conflict");
}

#[tokio::test]
async fn malformed_requests_get_typed_errors() {
    let (_dir, config) = project_dir();
    let app = app(&config);
    let b = create(&app, 0..4).await;

    let (s, v) = call(&app, "GET", "/batches/b99/progress", Some("root"), None).await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::NOT_FOUND, Some("not_found")));
    assert_eq!(call(&app, "GET", "/no/such/route", Some("root"), None).await.0, StatusCode::NOT_FOUND);

    let (s, v) =
        call(&app, "POST", &format!("/tasks/{b}:i001/judgment"), Some("tok-ja"), Some(json!({ "values": {} }))).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY, "{v}");
    assert_eq!(v["code"], "missing_labels");

    let (s, _) =
        call(&app, "POST", &format!("/tasks/{b}:i001/judgment"), Some("tok-ja"), Some(json!({ "values": 3 }))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);

    let (s, v) = call(&app, "POST", &format!("/batches/{b}/finalize"), Some("root"), None).await;
    assert_eq!(s, StatusCode::CONFLICT, "{v}");
}

#[tokio::test]
async fn adjudication_queue_pages_through_every_flagged_task() {
    let (_dir, config) = project_dir();
    let app = app(&config);
    let n = 2 * PAGE_SIZE + 20;
    let b = create(&app, 0..n).await;

    loop {
        let mut progressed = false;
        for lang in common::LANGUAGES {
            let tok = format!("tok-{lang}");
            let (s, v) = call(&app, "GET", &format!("/batches/{b}/next-task"), Some(&tok), None).await;
            assert_eq!(s, StatusCode::OK);
            let Some(id) = v["task"]["task_id"].as_str() else { continue };
            let inst = v["task"]["instance_id"].as_str().unwrap().to_string();
            assert_eq!(v["task"]["language"], lang);
            let (s, _) = call(
                &app,
                "POST",
                &format!("/tasks/{id}/judgment"),
                Some(&tok),
                Some(json!({ "values": human(&inst) })),
            )
            .await;
            assert_eq!(s, StatusCode::OK);
            let (s, _) =
                call(&app, "POST", &format!("/tasks/{id}/flag"), Some(&tok), Some(json!({ "note": "check" }))).await;
            assert_eq!(s, StatusCode::OK);
            progressed = true;
        }
        if !progressed {
            break;
        }
    }

    let mut seen = Vec::new();
    let mut cursor: Option<String> = None;
    let mut pages = 0;
    loop {
        let uri = match &cursor {
            Some(c) => format!("/batches/{b}/adjudication-queue?cursor={c}"),
            None => format!("/batches/{b}/adjudication-queue"),
        };
        let (s, v) = call(&app, "GET", &uri, Some("expert"), None).await;
        assert_eq!(s, StatusCode::OK, "{v}");
        assert_eq!(v["total"], n);
        let items = v["items"].as_array().unwrap();
        assert!(items.len() <= PAGE_SIZE);
        for item in items {
            assert_eq!(item["flags"][0]["note"], "check");
            let agree = item["diff"][0]["agree"].as_bool().unwrap();
            let inst = item["instance_id"].as_str().unwrap();
            let i: usize = inst[1..].parse().unwrap();
            // humans revise FP items to 1, so only FN items still disagree with the model
            assert_eq!(agree, !common::FN.contains(&i));
            seen.push(inst.to_string());
        }
        pages += 1;
        match v["next_cursor"].as_str() {
            Some(c) => cursor = Some(c.to_string()),
            None => break,
        }
    }
    assert_eq!(pages, 3);
    let expected: Vec<String> = (0..n).map(common::id).collect();
    let mut sorted = seen.clone();
    sorted.sort();
    assert_eq!(sorted, expected, "every queued task appears exactly once");
}

#[tokio::test]
async fn restart_replays_to_identical_responses_and_reports_match_the_cli() {
    let (_dir, config) = project_dir();
    let app1 = app(&config);
    let ids: Vec<usize> = (0..200).step_by(5).collect();
    let b = create(&app1, ids.iter().copied()).await;
    for &i in &ids {
        let inst = common::id(i);
        let tok = token_for(&inst);
        let task = format!("/tasks/{b}:{inst}");
        assert_eq!(
            call(&app1, "POST", &format!("{task}/judgment"), Some(&tok), Some(json!({ "values": human(&inst) })))
                .await
                .0,
            StatusCode::OK
        );
        assert_eq!(call(&app1, "POST", &format!("{task}/reveal"), Some(&tok), None).await.0, StatusCode::OK);
    }
    assert_eq!(call(&app1, "POST", &format!("/batches/{b}/qc"), Some("root"), None).await.0, StatusCode::OK);
    let (s, v) = call(
        &app1,
        "POST",
        &format!("/batches/{b}/audit"),
        Some("root"),
        Some(json!({ "fraction": 0.2, "targeted": true, "seed": 3 })),
    )
    .await;
    assert_eq!(s, StatusCode::OK, "{v}");
    let (_, queue) = call(&app1, "GET", &format!("/batches/{b}/adjudication-queue"), Some("expert"), None).await;
    for item in queue["items"].as_array().unwrap() {
        let id = item["task_id"].as_str().unwrap();
        let (s, v) =
            call(&app1, "POST", &format!("/tasks/{id}/adjudicate"), Some("expert"), Some(json!({ "note": "" }))).await;
        assert_eq!(s, StatusCode::OK, "{v}");
    }

    let probes = [
        "/batches".to_string(),
        format!("/batches/{b}/progress"),
        format!("/tasks/{b}:i005"),
        format!("/batches/{b}/adjudication-queue"),
    ];
    let before: Vec<_> = get_all(&app1, &probes).await;
    let app2 = app(&config);
    assert_eq!(get_all(&app2, &probes).await, before);

    let (s, v) = call(&app2, "POST", &format!("/batches/{b}/finalize"), Some("root"), None).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["finalized"], ids.len());

    let (s, http_kappa) = call_raw(&app2, "GET", "/reports/kappa?format=csv", Some("root"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(http_kappa, cli(&config, &["kappa", "--format", "matrix"]));
    let (_, http_f1) = call_raw(&app2, "GET", "/reports/metrics?format=long", Some("root"), None).await;
    assert_eq!(http_f1, cli(&config, &["metrics", "--format", "csv"]));
    let (_, json_kappa) = call(&app2, "GET", "/reports/kappa", Some("root"), None).await;
    assert_eq!(json_kappa, serde_json::from_str::<Value>(&cli(&config, &["kappa", "--format", "json"])).unwrap());
}

async fn get_all(app: &Router, uris: &[String]) -> Vec<(StatusCode, Value)> {
    let mut out = Vec::new();
    for u in uris {
        out.push(call(app, "GET", u, Some("root"), None).await);
    }
    out
}
