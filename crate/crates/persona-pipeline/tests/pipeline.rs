//! End-to-end CLI tests: every stage is exercised through the real binary
//! with recorded chat tapes, so no test needs a live model service.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use persona_core::domain::Day;
use persona_pipeline::cassette::{chat_envelope, Cassette, CassetteMode};
use persona_pipeline::chat::{ChatMessage, ChatRequest};
use persona_pipeline::formats::{read_jsonl, CandidateRecord, MemoryRecord, ScoreRecord};
use persona_pipeline::prompts;
use persona_pipeline::stages::GenerateSummary;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

/// The binary under test, with any ambient pipeline configuration scrubbed
/// so results depend only on the flags each test passes.
fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_persona-pipeline"));
    for (key, _) in std::env::vars() {
        if key.starts_with("PERSONA_") {
            cmd.env_remove(key);
        }
    }
    cmd
}

fn run_ok(cmd: &mut Command) -> std::process::Output {
    let out = cmd.output().expect("binary spawns");
    assert!(
        out.status.success(),
        "expected success, got {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr),
    );
    out
}

/// Builds the exact chat request the summarize stage sends for one
/// (user, day) unit of log lines.
fn summarize_request(lines: &[&str]) -> ChatRequest {
    let prompt = prompts::render(prompts::SUMMARIZE, &[("logs", &lines.join("\n"))])
        .expect("summarize template renders");
    ChatRequest {
        model: String::new(),
        messages: vec![ChatMessage::user(&prompt)],
        temperature: 0.0,
        top_p: None,
        sample_index: None,
    }
}

/// Builds the exact chat request the generate stage sends for sample
/// `index` over a window whose numbered memory block is `memory_block`.
fn generate_request(memory_block: &str, index: u32) -> ChatRequest {
    let prompt = prompts::render(prompts::INDUCE, &[("memories", memory_block)])
        .expect("induction template renders");
    ChatRequest {
        model: String::new(),
        messages: vec![ChatMessage::user(&prompt)],
        temperature: 0.9,
        top_p: Some(0.9),
        sample_index: Some(index),
    }
}

/// Records one reply per (request, reply) pair onto a fresh tape. Repeated
/// identical requests queue up in order, which is how retries are scripted.
fn record_tape(path: &Path, exchanges: &[(&ChatRequest, &str)]) {
    let tape = Cassette::open(path, CassetteMode::Record).expect("tape opens for recording");
    for (request, reply) in exchanges {
        tape.exchange(&chat_envelope(request), &|| Ok((*reply).to_string()))
            .expect("recording succeeds");
    }
}

#[test]
fn summarize_replays_a_recorded_marketplace_day() {
    let dir = tempfile::tempdir().unwrap();
    let logs = fixture("marketplace_day_logs.jsonl");
    let reply = fs::read_to_string(fixture("marketplace_day_reply.txt")).unwrap();
    let out_path = dir.path().join("memories.jsonl");
    let tape_path = dir.path().join("tape.jsonl");

    let records: Vec<persona_pipeline::formats::LogRecord> = read_jsonl(&logs).unwrap();
    assert_eq!(records.len(), 30, "fixture holds one full day of activity");
    let lines: Vec<&str> = records.iter().map(|r| r.text.as_str()).collect();
    record_tape(&tape_path, &[(&summarize_request(&lines), reply.as_str())]);

    let out = run_ok(bin().args([
        "summarize",
        "--logs",
        logs.to_str().unwrap(),
        "--out",
        out_path.to_str().unwrap(),
        "--cassette",
        tape_path.to_str().unwrap(),
    ]));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("1 days → 16 memories"), "stderr was: {stderr}");

    let memories: Vec<MemoryRecord> = read_jsonl(&out_path).unwrap();
    assert_eq!(memories.len(), 16);
    let day = Day::parse("2023-05-12").unwrap();
    for (i, record) in memories.iter().enumerate() {
        assert_eq!(record.user_id, "27011435");
        assert_eq!(record.memory.id, i as u32 + 1, "ids are sequential from 1");
        assert_eq!(record.memory.day, day, "the source day is preserved");
        assert!(!record.memory.description.is_empty());
    }
    assert_eq!(
        memories[0].memory.label,
        "Cactus Jack Fragment shirts (Men's T-shirts + Purchase Consideration)"
    );
    assert!(memories[0]
        .memory
        .description
        .starts_with("The user repeatedly viewed and liked Cactus Jack Fragment shirts"));
    assert_eq!(
        memories[8].memory.label,
        "New Balance 990 series (Men's and Kids' Athletic Shoes + Purchase Consideration)"
    );
    assert_eq!(memories[13].memory.label, "Kaws Reese’s Puffs (Vintage Collectibles + Collecting)");
    assert_eq!(memories[15].memory.label, "Supreme t shirts (Men's T-shirts + Style Exploration)");
}

#[test]
fn summarize_accepts_an_empty_log_file() {
    let dir = tempfile::tempdir().unwrap();
    let logs = dir.path().join("logs.jsonl");
    let out_path = dir.path().join("memories.jsonl");
    let tape_path = dir.path().join("tape.jsonl");
    fs::write(&logs, "").unwrap();
    record_tape(&tape_path, &[]);

    run_ok(bin().args([
        "summarize",
        "--logs",
        logs.to_str().unwrap(),
        "--out",
        out_path.to_str().unwrap(),
        "--cassette",
        tape_path.to_str().unwrap(),
    ]));
    let memories: Vec<MemoryRecord> = read_jsonl(&out_path).unwrap();
    assert!(memories.is_empty());
}

#[test]
fn summarize_skips_a_day_whose_reply_stays_malformed_after_one_retry() {
    let dir = tempfile::tempdir().unwrap();
    let logs = dir.path().join("logs.jsonl");
    let out_path = dir.path().join("memories.jsonl");
    let tape_path = dir.path().join("tape.jsonl");

    let good_lines = ["checked hiking boots", "compared trail packs"];
    let bad_lines = ["browsed tents"];
    fs::write(
        &logs,
        concat!(
            "{\"user_id\":\"u-1\",\"day\":\"2024-03-01\",\"text\":\"checked hiking boots\"}\n",
            "{\"user_id\":\"u-1\",\"day\":\"2024-03-01\",\"text\":\"compared trail packs\"}\n",
            "{\"user_id\":\"u-1\",\"day\":\"2024-03-02\",\"text\":\"browsed tents\"}\n",
        ),
    )
    .unwrap();

    let good_reply = r#"[{"intent_memory": "Hiking gear (Outdoor + Purchase Consideration)",
        "description": "The user compared boots and packs, pointing at a planned trip."}]"#;
    let bad_reply = "I could not find any clear intent in these logs.";
    let good_request = summarize_request(&good_lines);
    let bad_request = summarize_request(&bad_lines);
    // The malformed day is recorded twice: the stage retries once before
    // giving up on the day.
    record_tape(
        &tape_path,
        &[(&good_request, good_reply), (&bad_request, bad_reply), (&bad_request, bad_reply)],
    );

    let out = run_ok(bin().args([
        "summarize",
        "--logs",
        logs.to_str().unwrap(),
        "--out",
        out_path.to_str().unwrap(),
        "--cassette",
        tape_path.to_str().unwrap(),
    ]));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("warning: skipping day"), "stderr was: {stderr}");
    assert!(stderr.contains("2 days → 1 memories (1 days skipped after retry)"));

    let memories: Vec<MemoryRecord> = read_jsonl(&out_path).unwrap();
    assert_eq!(memories.len(), 1);
    assert_eq!(memories[0].memory.label, "Hiking gear (Outdoor + Purchase Consideration)");
    assert_eq!(memories[0].memory.day, Day::parse("2024-03-01").unwrap());
}

fn write_three_memory_window(path: &Path) -> String {
    fs::write(
        path,
        concat!(
            "{\"user_id\":\"u-1\",\"id\":1,\"day\":\"2024-04-01\",\"label\":\"trail boots\",\"description\":\"compared waterproof hiking boots\"}\n",
            "{\"user_id\":\"u-1\",\"id\":2,\"day\":\"2024-04-02\",\"label\":\"trail packs\",\"description\":\"looked at ultralight backpacks\"}\n",
            "{\"user_id\":\"u-1\",\"id\":3,\"day\":\"2024-04-03\",\"label\":\"camp stoves\",\"description\":\"read reviews of canister stoves\"}\n",
        ),
    )
    .unwrap();
    // The numbered block the generate stage renders into its prompt.
    "1. trail boots: compared waterproof hiking boots\n\
     2. trail packs: looked at ultralight backpacks\n\
     3. camp stoves: read reviews of canister stoves\n"
        .to_string()
}

#[test]
fn generate_keeps_valid_samples_and_records_why_the_rest_were_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let memories = dir.path().join("memories.jsonl");
    let out_path = dir.path().join("candidates.jsonl");
    let tape_path = dir.path().join("tape.jsonl");
    let block = write_three_memory_window(&memories);

    let valid_a = r#"{"personas": [{"persona": "hike preparation",
        "description": ["researches boots and packs for a trip"],
        "evidence_memory_ids": [1, 2]}]}"#;
    let valid_b = r#"{"personas": [{"persona": "camp kitchen setup",
        "description": ["compares cooking gear"],
        "evidence_memory_ids": [2, 3]}]}"#;
    let no_json = "The user seems to enjoy the outdoors.";
    let empty_list = r#"{"personas": []}"#;
    let requests: Vec<ChatRequest> = (0..4).map(|i| generate_request(&block, i)).collect();
    record_tape(
        &tape_path,
        &[
            (&requests[0], valid_a),
            (&requests[1], no_json),
            (&requests[2], empty_list),
            (&requests[3], valid_b),
        ],
    );

    run_ok(bin().args([
        "--data-dir",
        dir.path().to_str().unwrap(),
        "--set",
        "gdpo.candidates_per_window=4",
        "generate",
        "--memories",
        memories.to_str().unwrap(),
        "--out",
        out_path.to_str().unwrap(),
        "--cassette",
        tape_path.to_str().unwrap(),
    ]));

    let candidates: Vec<CandidateRecord> = read_jsonl(&out_path).unwrap();
    assert_eq!(candidates.len(), 4, "every sample is kept, valid or not");
    assert_eq!(
        candidates.iter().map(|c| c.valid).collect::<Vec<_>>(),
        [true, false, false, true]
    );
    for candidate in &candidates {
        assert_eq!(candidate.user_id, "u-1");
        assert_eq!(candidate.valid, candidate.rejection.is_none());
        assert_eq!(candidate.valid, candidate.personas.is_some());
    }
    assert_eq!(candidates[0].personas.as_ref().unwrap()[0].label, "hike preparation");
    assert_eq!(candidates[3].personas.as_ref().unwrap()[0].label, "camp kitchen setup");

    let summary: GenerateSummary =
        serde_json::from_str(&fs::read_to_string(dir.path().join("generate_summary.json")).unwrap())
            .unwrap();
    assert_eq!((summary.windows, summary.candidates, summary.valid), (1, 4, 2));
    assert!(summary.unusable_windows.is_empty());
}

#[test]
fn generate_flags_a_window_with_no_usable_sample() {
    let dir = tempfile::tempdir().unwrap();
    let memories = dir.path().join("memories.jsonl");
    let out_path = dir.path().join("candidates.jsonl");
    let tape_path = dir.path().join("tape.jsonl");
    let block = write_three_memory_window(&memories);

    let requests: Vec<ChatRequest> = (0..4).map(|i| generate_request(&block, i)).collect();
    let exchanges: Vec<(&ChatRequest, &str)> =
        requests.iter().map(|r| (r, "nothing structured here")).collect();
    record_tape(&tape_path, &exchanges);

    let out = run_ok(bin().args([
        "--data-dir",
        dir.path().to_str().unwrap(),
        "--set",
        "gdpo.candidates_per_window=4",
        "generate",
        "--memories",
        memories.to_str().unwrap(),
        "--out",
        out_path.to_str().unwrap(),
        "--cassette",
        tape_path.to_str().unwrap(),
    ]));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("u-1"), "the unusable window is called out: {stderr}");

    let candidates: Vec<CandidateRecord> = read_jsonl(&out_path).unwrap();
    assert_eq!(candidates.len(), 4);
    assert!(candidates.iter().all(|c| !c.valid));

    let summary: GenerateSummary =
        serde_json::from_str(&fs::read_to_string(dir.path().join("generate_summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary.valid, 0);
    assert_eq!(summary.unusable_windows, ["u-1"]);
}

#[test]
fn score_output_does_not_depend_on_candidate_record_order() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().to_str().unwrap();
    run_ok(bin().args(["--data-dir", data, "synth"]));

    let scores_a = dir.path().join("scores_a.jsonl");
    run_ok(bin().args([
        "--data-dir",
        data,
        "score",
        "--judge",
        "mock",
        "--out",
        scores_a.to_str().unwrap(),
    ]));

    // Reverse the candidate file line order and score again.
    let candidates = dir.path().join("candidates.jsonl");
    let mut lines: Vec<String> =
        fs::read_to_string(&candidates).unwrap().lines().map(str::to_owned).collect();
    lines.reverse();
    fs::write(&candidates, lines.join("\n") + "\n").unwrap();

    let scores_b = dir.path().join("scores_b.jsonl");
    run_ok(bin().args([
        "--data-dir",
        data,
        "score",
        "--judge",
        "mock",
        "--out",
        scores_b.to_str().unwrap(),
    ]));

    let bytes_a = fs::read(&scores_a).unwrap();
    let bytes_b = fs::read(&scores_b).unwrap();
    assert!(!bytes_a.is_empty());
    assert_eq!(bytes_a, bytes_b, "scores are keyed by candidate index, not file position");

    let parsed: Vec<ScoreRecord> = read_jsonl(&scores_a).unwrap();
    assert!(parsed.iter().all(|r| r.scalar_reward.is_finite()));
}

#[test]
fn exit_codes_separate_usage_upstream_and_data_failures() {
    // Usage: an unknown flag is rejected by the parser.
    let out = bin().arg("--definitely-not-a-flag").output().unwrap();
    assert_eq!(out.status.code(), Some(1));

    // Usage: a missing input file.
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["summarize", "--logs", dir.path().join("absent.jsonl").to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));

    // Upstream: the live judge replays an empty tape and misses.
    let data = dir.path().to_str().unwrap();
    run_ok(bin().args(["--data-dir", data, "synth"]));
    let empty_tape = dir.path().join("empty_tape.jsonl");
    fs::write(&empty_tape, "").unwrap();
    let out = bin()
        .args([
            "--data-dir",
            data,
            "score",
            "--judge",
            "live",
            "--cassette",
            empty_tape.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(2),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );

    // Data: the report rejects mismatched user sets across levels.
    let report_dir = tempfile::tempdir().unwrap();
    let logs = report_dir.path().join("logs.jsonl");
    let memories = report_dir.path().join("memories.jsonl");
    let personas = report_dir.path().join("chosen.jsonl");
    fs::write(&logs, "{\"user_id\":\"u-a\",\"day\":\"2024-01-01\",\"text\":\"browsed\"}\n").unwrap();
    fs::write(
        &memories,
        "{\"user_id\":\"u-b\",\"id\":1,\"day\":\"2024-01-01\",\"label\":\"x\",\"description\":\"y\"}\n",
    )
    .unwrap();
    fs::write(
        &personas,
        "{\"user_id\":\"u-b\",\"candidate_index\":0,\"personas\":[{\"persona\":\"x\",\"description\":[\"y\"],\"evidence_memory_ids\":[1]}]}\n",
    )
    .unwrap();
    let out = bin()
        .args([
            "report",
            "--logs",
            logs.to_str().unwrap(),
            "--memories",
            memories.to_str().unwrap(),
            "--personas",
            personas.to_str().unwrap(),
            "--out",
            report_dir.path().join("report.json").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(3),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}
