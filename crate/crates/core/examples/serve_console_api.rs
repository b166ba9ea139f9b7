//! Start the HTTP API on an ephemeral port and drive it the way the annotation
//! console does: create a batch, fetch the next task, judge, reveal, report.
//!
//!     cargo run --example serve_console_api

use std::path::Path;

use relabel::project::{Project, ProjectConfig};
use relabel::service::{router, AppState};
use serde_json::{json, Value};

const CONFIG: &str = r#"
[backend]
kind = "stub"
stub_responses = "responses.jsonl"

[[tokens]]
token = "admin-token"
actor = "admin"
role = "admin"

[[tokens]]
token = "yuki-token"
actor = "yuki"
role = "annotator"
"#;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let examples = Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/data");
    let root = tempfile::tempdir()?;
    std::fs::write(root.path().join("relabel.toml"), CONFIG)?;
    std::fs::copy(examples.join("meat_eater_responses.jsonl"), root.path().join("responses.jsonl"))?;
    let config = root.path().join("relabel.toml");
    let c = config.to_str().unwrap();

    // populate the project through the CLI, as an operator would
    let run = |args: &[&str]| {
        let mut argv = vec!["relabel", "--config", c];
        argv.extend(args);
        assert_eq!(relabel::cli::run(argv), 0, "{args:?}");
    };
    run(&["ingest", "--in", examples.join("utterances.jsonl").to_str().unwrap()]);
    let judgments = root.path().join("data/judgments/meat-eater.jsonl");
    std::fs::create_dir_all(judgments.parent().unwrap())?;
    run(&["classify", "--label", "meat-eater", "--out", judgments.to_str().unwrap()]);

    let project = Project::open(ProjectConfig::load(&config)?)?;
    let runtime = tokio::runtime::Runtime::new()?;
    let listener = runtime.block_on(tokio::net::TcpListener::bind("127.0.0.1:0"))?;
    let base = format!("http://{}", listener.local_addr()?);
    runtime.spawn(async move { axum::serve(listener, router(AppState::new(project))).await });
    println!("serving on {base}");

    let http = reqwest::blocking::Client::new();
    let call = |method: &str, path: &str, token: &str, body: Option<Value>| -> Result<(u16, Value), reqwest::Error> {
        let mut req = http.request(method.parse().unwrap(), format!("{base}{path}")).bearer_auth(token);
        if let Some(b) = body {
            req = req.json(&b);
        }
        let resp = req.send()?;
        let status = resp.status().as_u16();
        Ok((status, resp.json().unwrap_or(Value::Null)))
    };

    let (_, batch) = call(
        "POST",
        "/batches",
        "admin-token",
        Some(json!({ "instance_ids": ["ja01", "ja02", "ja04"], "group": "diet" })),
    )?;
    let b = batch["batch_id"].as_str().unwrap().to_string();
    println!("created {batch}");

    let (_, next) = call("GET", &format!("/batches/{b}/next-task"), "yuki-token", None)?;
    let task = next["task"]["task_id"].as_str().unwrap().to_string();
    println!("next task {task}: {}", next["task"]["text"]);

    let (status, err) = call("POST", &format!("/tasks/{task}/reveal"), "yuki-token", None)?;
    println!("reveal before judging -> {status} {}", err["code"]);

    let values = json!({ "values": { "meat-eater": 1, "vegetarian": 0, "serious": 0 } });
    let (status, _) = call("POST", &format!("/tasks/{task}/judgment"), "yuki-token", Some(values))?;
    println!("judgment -> {status}");
    let (_, reveal) = call("POST", &format!("/tasks/{task}/reveal"), "yuki-token", None)?;
    for j in reveal["judgments"].as_array().unwrap() {
        println!("model on {}: {} ({})", j["label_id"], j["score"], j["rationale"]);
    }

    let (_, progress) = call("GET", &format!("/batches/{b}/progress"), "yuki-token", None)?;
    println!("progress {}", progress["progress"]["by_state"]);
    let (status, _) = call("POST", &format!("/batches/{b}/finalize"), "yuki-token", None)?;
    println!("annotator tries to finalize -> {status}");
    Ok(())
}
