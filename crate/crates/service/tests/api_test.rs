//! End-to-end API tests: a real server on an ephemeral port, a blocking
//! HTTP client, and the simulated clock driven over the wire.

use serde_json::{json, Value};

use slicer_core::engine::EngineOptions;
use slicer_core::fabric::LatencyParams;
use slicer_core::scenario::reference_cluster;
use slicer_core::time::Millis;
use slicer_service::{build, serve, ServeMode};

struct TestServer {
    base: String,
    client: ureq::Agent,
    _runtime: tokio::runtime::Runtime,
}

fn start(mode: ServeMode, params: LatencyParams) -> TestServer {
    start_with_cluster(mode, params, reference_cluster())
}

fn start_with_cluster(
    mode: ServeMode,
    params: LatencyParams,
    cluster: slicer_core::ClusterConfig,
) -> TestServer {
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(2)
        .enable_all()
        .build()
        .unwrap();
    let router = build(
        cluster,
        EngineOptions {
            params: Some(params),
            ..EngineOptions::default()
        },
        mode,
    )
    .unwrap();
    let listener = runtime.block_on(async {
        tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap()
    });
    let addr = listener.local_addr().unwrap();
    runtime.spawn(async move {
        let _ = serve(listener, router).await;
    });
    let config = ureq::Agent::config_builder()
        .http_status_as_error(false)
        .build();
    TestServer {
        base: format!("http://{addr}"),
        client: config.into(),
        _runtime: runtime,
    }
}

fn example_params() -> LatencyParams {
    LatencyParams {
        attach_s: Millis::from_secs(6),
        detach_s: Millis::from_secs(5),
        machine_boot_s: Millis::from_secs(30),
        prepare_s: Millis::from_secs(5),
        launch_per_device_s: Millis::from_secs(4),
        destroy_s: Millis::from_secs(10),
        bandwidth_ratio: 0.2,
    }
}

impl TestServer {
    fn get(&self, path: &str) -> (u16, Value) {
        let mut res = self.client.get(format!("{}{path}", self.base)).call().unwrap();
        let status = res.status().as_u16();
        let body = res.body_mut().read_to_string().unwrap();
        let value = if body.is_empty() {
            Value::Null
        } else {
            serde_json::from_str(&body).unwrap()
        };
        (status, value)
    }

    fn post(&self, path: &str, body: &str) -> (u16, Value) {
        let mut res = self
            .client
            .post(format!("{}{path}", self.base))
            .header("content-type", "application/json")
            .send(body)
            .unwrap();
        let status = res.status().as_u16();
        let text = res.body_mut().read_to_string().unwrap();
        let value = if text.is_empty() {
            Value::Null
        } else {
            serde_json::from_str(&text).unwrap()
        };
        (status, value)
    }

    fn delete(&self, path: &str) -> (u16, Value) {
        let mut res = self
            .client
            .delete(format!("{}{path}", self.base))
            .call()
            .unwrap();
        let status = res.status().as_u16();
        let text = res.body_mut().read_to_string().unwrap();
        let value = if text.is_empty() {
            Value::Null
        } else {
            serde_json::from_str(&text).unwrap()
        };
        (status, value)
    }

    fn advance(&self, seconds: f64) {
        let (status, _) = self.post("/v1/clock/advance", &json!({"seconds": seconds}).to_string());
        assert_eq!(status, 200);
    }
}

fn job_body(id: &str, nodes: u32, gpus: u32, duration_s: f64) -> String {
    let kind = if nodes == 1 { "single_node" } else { "multi_node" };
    let tasks: Vec<Value> = (0..nodes)
        .map(|i| json!({"name": format!("rank{i}"), "duration_s": duration_s}))
        .collect();
    json!({
        "id": id,
        "kind": kind,
        "slice": {
            "node_count": nodes,
            "devices_per_node": [{"kind": "gpu", "model": "P100", "count": gpus}]
        },
        "tasks": tasks
    })
    .to_string()
}

#[test]
fn submit_poll_and_fetch_timeline() {
    let server = start(ServeMode::Sim, example_params());
    let (status, body) = server.post("/v1/jobs", &job_body("j1", 2, 2, 100.0));
    assert_eq!(status, 201);
    assert_eq!(body["job_id"], "j1");
    assert_eq!(body["phase"], "attaching");

    // phase sequence over polls must be monotone in lifecycle order
    let order = [
        "queued",
        "attaching",
        "launching_machines",
        "preparing",
        "launching_tasks",
        "running",
        "detaching",
        "destroying",
        "done",
        "failed",
    ];
    let mut last = 0usize;
    for _ in 0..40 {
        let (status, body) = server.get("/v1/jobs/j1");
        assert_eq!(status, 200);
        let phase = body["phase"].as_str().unwrap().to_string();
        let idx = order.iter().position(|p| *p == phase).unwrap();
        assert!(idx >= last, "phase went backwards: {} -> {}", order[last], phase);
        last = idx;
        if phase == "done" {
            break;
        }
        // timeline of an unfinished job is a conflict
        let (t_status, _) = server.get("/v1/jobs/j1/timeline");
        assert_eq!(t_status, 409);
        server.advance(20.0);
    }
    assert_eq!(order[last], "done");

    let (status, timeline) = server.get("/v1/jobs/j1/timeline");
    assert_eq!(status, 200);
    for phase in [
        "attach_device",
        "launch_machine",
        "prepare_task",
        "launch_task",
        "run_task",
        "detach_device",
        "destroy_machine",
    ] {
        assert!(timeline[phase]["start_s"].is_number(), "missing {phase}");
    }
    // contiguous: run lasted the configured 100 s
    let run = &timeline["run_task"];
    let dur = run["end_s"].as_f64().unwrap() - run["start_s"].as_f64().unwrap();
    assert!((dur - 100.0).abs() < 1e-9);
}

#[test]
fn malformed_body_is_a_400() {
    let server = start(ServeMode::Sim, example_params());
    let (status, body) = server.post("/v1/jobs", "{not json");
    assert_eq!(status, 400);
    assert_eq!(body["code"], "malformed");
    // invariant violations are also client errors
    let bad = json!({
        "id": "x", "kind": "single_node",
        "slice": {"node_count": 2},
        "tasks": [{"name": "t", "duration_s": 1.0}]
    });
    let (status, _) = server.post("/v1/jobs", &bad.to_string());
    assert_eq!(status, 400);
}

#[test]
fn infeasible_job_is_a_422_naming_the_constraint() {
    let server = start(ServeMode::Sim, example_params());
    let (status, body) = server.post("/v1/jobs", &job_body("big", 5, 0, 1.0));
    assert_eq!(status, 422);
    assert_eq!(body["code"], "infeasible");
    assert!(body["detail"]
        .as_str()
        .unwrap()
        .contains("node_count exceeds cluster"));
}

#[test]
fn unknown_ids_are_404s() {
    let server = start(ServeMode::Sim, example_params());
    assert_eq!(server.get("/v1/jobs/ghost").0, 404);
    assert_eq!(server.get("/v1/jobs/ghost/timeline").0, 404);
    assert_eq!(server.delete("/v1/jobs/ghost").0, 404);
}

#[test]
fn queued_cancel_fails_the_job_immediately() {
    let server = start(ServeMode::Sim, example_params());
    assert_eq!(server.post("/v1/jobs", &job_body("a", 1, 4, 50.0)).0, 201);
    let (_, queued) = server.post("/v1/jobs", &job_body("b", 1, 4, 50.0));
    assert_eq!(queued["phase"], "queued");
    assert_eq!(queued["queue_position"], 0);
    let (status, _) = server.delete("/v1/jobs/b");
    assert_eq!(status, 202);
    let (_, body) = server.get("/v1/jobs/b");
    assert_eq!(body["phase"], "failed");
    assert_eq!(body["failure_reason"], "cancelled");
    // a finished job cannot be cancelled again
    assert_eq!(server.delete("/v1/jobs/b").0, 409);
}

#[test]
fn cluster_view_tracks_attachments() {
    let server = start(ServeMode::Sim, example_params());
    let (status, view) = server.get("/v1/cluster");
    assert_eq!(status, 200);
    assert_eq!(view["nodes"].as_array().unwrap().len(), 4);
    assert!(view["devices"]
        .as_array()
        .unwrap()
        .iter()
        .all(|d| d["state"] == "free"));

    server.post("/v1/jobs", &job_body("j", 1, 4, 50.0));
    server.advance(30.0); // past the serialized attach phase
    let (_, view) = server.get("/v1/cluster");
    let attached: Vec<&Value> = view["devices"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|d| d["state"] == "attached")
        .collect();
    assert_eq!(attached.len(), 4);
    assert!(attached.iter().all(|d| d["job"] == "j" && d["node"] == "n0"));
}

#[test]
fn event_pages_concatenate_without_gaps_or_duplicates() {
    let server = start(ServeMode::Sim, example_params());
    server.post("/v1/jobs", &job_body("j", 2, 1, 30.0));
    server.advance(500.0);
    let (_, full) = server.get("/v1/events?since=0&limit=1000");
    let total = full["total"].as_u64().unwrap();
    assert!(total > 10);

    let mut stitched = Vec::new();
    let mut since = 0u64;
    loop {
        let (status, page) = server.get(&format!("/v1/events?since={since}&limit=3"));
        assert_eq!(status, 200);
        let events = page["events"].as_array().unwrap();
        if events.is_empty() {
            break;
        }
        for event in events {
            assert_eq!(event["seq"].as_u64().unwrap(), stitched.len() as u64);
            stitched.push(event.clone());
        }
        since = page["next_since"].as_u64().unwrap();
    }
    assert_eq!(stitched.len() as u64, total);
    assert_eq!(&stitched[..], full["events"].as_array().unwrap().as_slice());
}

#[test]
fn advance_is_rejected_in_wall_mode() {
    let zero = LatencyParams {
        attach_s: Millis::ZERO,
        detach_s: Millis::ZERO,
        machine_boot_s: Millis::ZERO,
        prepare_s: Millis::ZERO,
        launch_per_device_s: Millis::ZERO,
        destroy_s: Millis::ZERO,
        bandwidth_ratio: 0.2,
    };
    let server = start(ServeMode::Wall, zero);
    let (status, body) = server.post("/v1/clock/advance", &json!({"seconds": 5.0}).to_string());
    assert_eq!(status, 409);
    assert_eq!(body["code"], "wrong_mode");
}

#[test]
fn wall_mode_runs_real_commands() {
    let zero = LatencyParams {
        attach_s: Millis::ZERO,
        detach_s: Millis::ZERO,
        machine_boot_s: Millis::ZERO,
        prepare_s: Millis::ZERO,
        launch_per_device_s: Millis::ZERO,
        destroy_s: Millis::ZERO,
        bandwidth_ratio: 0.2,
    };
    // zero the image too: wall mode paces the simulated download against
    // real time, and 3 GB over 1 Gbps would hold the test for 24 s
    let mut cluster = reference_cluster();
    cluster.image_gb = 0.0;
    let server = start_with_cluster(ServeMode::Wall, zero, cluster);
    let body = json!({
        "id": "shell",
        "kind": "single_node",
        "slice": {"node_count": 1},
        "tasks": [
            {"name": "ok", "command": "sleep 0.2"},
            {"name": "bad", "command": "false"}
        ]
    });
    let (status, _) = server.post("/v1/jobs", &body.to_string());
    assert_eq!(status, 201);
    let deadline = std::time::Instant::now() + std::time::Duration::from_secs(60);
    loop {
        let (_, status_body) = server.get("/v1/jobs/shell");
        let phase = status_body["phase"].as_str().unwrap();
        if phase == "done" || phase == "failed" {
            assert_eq!(phase, "failed", "the failing task must fail the slice");
            assert!(status_body["failure_reason"]
                .as_str()
                .unwrap()
                .contains("bad"));
            break;
        }
        assert!(
            std::time::Instant::now() < deadline,
            "wall job stuck in {phase}"
        );
        std::thread::sleep(std::time::Duration::from_millis(50));
    }
}
