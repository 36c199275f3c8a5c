mod common;

use common::*;
use serde_json::Value;

fn data(name: &str) -> String {
    data_path(name).display().to_string()
}

#[test]
fn infer_nbody_golden() {
    let (code, out) = cli(&["infer", &data("nbody.proc"), "--size", "3"]);
    assert_eq!(code, 0, "{out}");
    assert_eq!(ptype(&out), data_ptype("nbody_global.ptype"));
    assert_eq!(
        out,
        format!(
            "{}\n",
            protomerge::syntax::print_protocol(&data_ptype("nbody_global.ptype"))
        )
    );
}

#[test]
fn infer_skip() {
    let (code, out) = cli(&["infer", &data("skip.proc"), "--size", "2"]);
    assert_eq!((code, out.as_str()), (0, "skip\n"));
}

#[test]
fn infer_ring_deadlocks() {
    for size in ["2", "3"] {
        let (code, out) = cli(&["infer", &data("ring.proc"), "--size", size, "--json"]);
        assert_eq!(code, 1, "{out}");
        let doc: Value = serde_json::from_str(&out).unwrap();
        assert_eq!(doc["kind"], "DeadlockSuspected");
        assert!(!doc["diagnostic"]["rule_trace"]
            .as_array()
            .unwrap()
            .is_empty());
    }
}

#[test]
fn infer_per_rank_programs_and_order() {
    let one = data("one_to_all.proc");
    let (code, out) = cli(&["infer", &one, &one, &one, "--size", "3", "--order", "2,1,0"]);
    assert_eq!(code, 0, "{out}");
    let (code, out) = cli(&["infer", &one, &one, "--size", "3"]);
    assert_eq!(code, 4, "{out}");
}

#[test]
fn extract_rank_listings() {
    for r in 0..3 {
        let (code, out) = cli(&[
            "extract",
            &data("nbody.proc"),
            "--rank",
            &r.to_string(),
            "--size",
            "3",
        ]);
        assert_eq!(code, 0);
        assert_eq!(ptype(&out), data_ptype(&format!("nbody_rank{r}.ptype")));
    }
    let (code, out) = cli(&[
        "extract",
        &data("one_to_all.proc"),
        "--rank",
        "0",
        "--size",
        "3",
    ]);
    assert_eq!(code, 0);
    assert_eq!(out, "foreach i: 1..2 {\n  message 0 i float[n * 4]\n}\n");
    let (code, _) = cli(&["extract", &data("skip.proc"), "--rank", "3", "--size", "3"]);
    assert_eq!(code, 4);
}

#[test]
fn merge_steps() {
    let (code, out) = cli(&[
        "merge",
        &data("step1_left.ptype"),
        &data("step1_right.ptype"),
        "--size",
        "3",
        "--merged",
        "0",
        "--k",
        "1",
        "--json",
        "--trace",
    ]);
    assert_eq!(code, 0, "{out}");
    let doc: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(
        ptype(doc["protocol"].as_str().unwrap()),
        data_ptype("step_result.ptype")
    );
    let rules: Vec<&str> = doc["traces"][0]["steps"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| s["rule"].as_str().unwrap())
        .collect();
    assert_eq!(rules, ["seq-seq", "msg-msg-eq", "msg-msg-right"]);

    let (code, out) = cli(&[
        "merge",
        &data("step2_left.ptype"),
        &data("step2_right.ptype"),
        "--size",
        "3",
        "--merged",
        "0,1",
        "--k",
        "2",
        "--trace",
    ]);
    assert_eq!(code, 0, "{out}");
    assert!(out.contains("#   msgT-msgT-left: "));
    let protocol: String = out
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| format!("{l}\n"))
        .collect();
    assert_eq!(ptype(&protocol), data_ptype("step_result.ptype"));
}

#[test]
fn merge_crossed_pair_fails() {
    let (code, out) = cli(&[
        "merge",
        &data("crossed_left.ptype"),
        &data("crossed_right.ptype"),
        "--size",
        "2",
        "--merged",
        "0",
        "--k",
        "1",
    ]);
    assert_eq!(code, 1);
    assert!(out.starts_with("error[DeadlockSuspected]"), "{out}");
}

#[test]
fn merge_rejects_bad_rank_sets() {
    let l = data("crossed_left.ptype");
    let (code, _) = cli(&["merge", &l, &l, "--size", "2", "--merged", "0", "--k", "0"]);
    assert_eq!(code, 4);
    let (code, _) = cli(&["merge", &l, &l, "--size", "2", "--merged", "5", "--k", "1"]);
    assert_eq!(code, 4);
}

#[test]
fn simulate_verdicts() {
    let (code, out) = cli(&[
        "simulate",
        &data("nbody_global.ptype"),
        "--size",
        "3",
        "--unroll",
        "1",
    ]);
    assert_eq!(code, 0, "{out}");
    assert!(out.starts_with("0 -> 1 : float[1000000 / 3 * 4]\n1 -> 2 : "));
    assert!(out.ends_with("allreduce min float\nverdict: completed\n"));

    let ranks: Vec<String> = (0..3)
        .map(|r| data(&format!("nbody_rank{r}.ptype")))
        .collect();
    let (code, out) = cli(&["simulate", &ranks[0], &ranks[1], &ranks[2], "--size", "3"]);
    assert_eq!(code, 0, "{out}");

    let (code, out) = cli(&[
        "simulate",
        &data("crossed_left.ptype"),
        &data("crossed_right.ptype"),
        "--size",
        "2",
    ]);
    assert_eq!(code, 1);
    assert!(out.ends_with("verdict: deadlocked\n"), "{out}");

    let (code, out) = cli(&["simulate", &data("skip.proc"), "--size", "2"]);
    assert_eq!((code, out.as_str()), (0, "verdict: completed\n"));
}

#[test]
fn simulate_state_cap() {
    let (code, out) = cli(&[
        "simulate",
        &data("nbody_global.ptype"),
        "--size",
        "3",
        "--state-cap",
        "3",
    ]);
    assert_eq!(code, 3, "{out}");
}

#[test]
fn parse_errors_exit_two() {
    let dir = std::env::temp_dir().join(format!("protomerge-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let bad = dir.join("bad.proc");
    std::fs::write(&bad, "send to 1\n").unwrap();
    let (code, out) = cli(&["infer", bad.to_str().unwrap(), "--size", "2"]);
    assert_eq!(code, 2);
    assert!(out.contains("bad.proc:1:10"), "{out}");
    let (code, out) = cli(&["infer", bad.to_str().unwrap(), "--size", "2", "--json"]);
    assert_eq!(code, 2);
    let doc: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(doc["span"]["start_line"], 1);
}

#[test]
fn undecidable_exits_three() {
    let dir = std::env::temp_dir().join(format!("protomerge-undecidable-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let t = dir.join("sq.ptype");
    std::fs::write(&t, "foreach i: 0..1000000 { message 0 (i * i) integer }").unwrap();
    let t = t.to_str().unwrap();
    let (code, out) = cli(&["merge", t, t, "--size", "2", "--merged", "0", "--k", "1"]);
    assert_eq!(code, 3, "{out}");
    assert!(out.starts_with("error[EntailmentUndecidable]"));
}

#[test]
fn bad_invocations_exit_four() {
    assert_eq!(cli(&[]).0, 4);
    assert_eq!(cli(&["infer", &data("skip.proc")]).0, 4);
    assert_eq!(cli(&["infer", &data("skip.proc"), "--size", "1"]).0, 4);
    assert_eq!(cli(&["infer", "/nonexistent/x.proc", "--size", "2"]).0, 4);
    assert_eq!(cli(&["frobnicate"]).0, 4);
}

#[test]
fn output_is_deterministic() {
    let args = ["infer", &data("ring.proc"), "--size", "3", "--json"];
    assert_eq!(cli(&args), cli(&args));
    let args = ["infer", &data("nbody.proc"), "--size", "3", "--trace"];
    assert_eq!(cli(&args), cli(&args));
}

#[test]
fn json_and_text_agree_on_verdicts() {
    for (file, size) in [
        ("nbody.proc", "3"),
        ("ring.proc", "2"),
        ("one_to_all.proc", "4"),
    ] {
        let (text_code, _) = cli(&["infer", &data(file), "--size", size]);
        let (json_code, out) = cli(&["infer", &data(file), "--size", size, "--json"]);
        assert_eq!(text_code, json_code);
        let doc: Value = serde_json::from_str(&out).unwrap();
        assert_eq!(doc["status"] == "ok", json_code == 0);
    }
}
