//! Acceptance criteria, one PASS/FAIL line each.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};

use common::*;
use proptest::prelude::*;
use protomerge::ast::{ArithOp, Datatype, DiagnosticKind, IndexTerm, ProtocolType, ReduceOp};
use protomerge::extract::extract_local_type;
use protomerge::logic::{dtype_equiv, initial_context};
use protomerge::merge::{merge_all, normalize_seq};
use protomerge::oracle::{linearize, simulate, SimOutcome};
use protomerge::syntax::{
    parse_process, parse_protocol, print_process, print_protocol, print_protocol_inline,
};
use serde_json::Value;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn int(v: i64) -> IndexTerm {
    IndexTerm::Int(v)
}

/// `float[1000000 / s * 4]` with `s` a literal or `size`.
fn d(s: IndexTerm) -> Datatype {
    Datatype::array(
        Datatype::Float,
        IndexTerm::bin(
            ArithOp::Mul,
            IndexTerm::bin(ArithOp::Div, int(1_000_000), s),
            int(4),
        ),
    )
}

fn msg(a: i64, b: i64, payload: &Datatype) -> ProtocolType {
    ProtocolType::message(int(a), int(b), payload.clone())
}

fn nbody_shape(pipe_body: Vec<ProtocolType>) -> ProtocolType {
    ProtocolType::foreach(
        "iter",
        int(1),
        int(5_000_000),
        ProtocolType::seq(
            ProtocolType::foreach("pipe", int(1), int(2), ProtocolType::seq_of(pipe_body)),
            ProtocolType::allreduce(ReduceOp::Min, Datatype::Float),
        ),
    )
}

fn is_subsequence(needle: &[&str], hay: &[String]) -> bool {
    let mut it = hay.iter();
    needle.iter().all(|n| it.any(|h| h == n))
}

fn nbody_inference() -> Outcome {
    let d3 = d(int(3));
    let expected = nbody_shape(vec![msg(0, 1, &d3), msg(1, 2, &d3), msg(2, 0, &d3)]);
    let path = data_path("nbody.proc");
    let (code, out) = cli(&["infer", path.to_str().unwrap(), "--size", "3"]);
    if code != 0 {
        return Err(format!("exit {code}: {out}"));
    }
    let got = parse_protocol(&out).map_err(|e| e.to_string())?;
    if normalize_seq(&got) != normalize_seq(&expected) {
        return Err(format!("got\n{out}"));
    }
    Ok("exact AST match".into())
}

fn merge_steps() -> Outcome {
    let sized = d(IndexTerm::var("size"));
    let expected = ProtocolType::seq_of([msg(0, 1, &sized), msg(1, 2, &sized), msg(2, 0, &sized)]);
    let steps: [(&str, &str, &str, &str, &[&str]); 2] = [
        (
            "step1_left.ptype",
            "step1_right.ptype",
            "0",
            "1",
            &["seq-seq", "msg-msg-eq", "msg-msg-right"],
        ),
        (
            "step2_left.ptype",
            "step2_right.ptype",
            "0,1",
            "2",
            &["msgT-msgT-left", "seq-seq", "msg-msg-eq", "msg-msg-eq"],
        ),
    ];
    let mut traces = Vec::new();
    for (l, r, merged, k, cited) in steps {
        let (l, r) = (data_path(l), data_path(r));
        let (code, out) = cli(&[
            "merge",
            l.to_str().unwrap(),
            r.to_str().unwrap(),
            "--size",
            "3",
            "--merged",
            merged,
            "--k",
            k,
            "--json",
            "--trace",
        ]);
        if code != 0 {
            return Err(format!("exit {code}: {out}"));
        }
        let doc: Value = serde_json::from_str(&out).map_err(|e| e.to_string())?;
        let got = parse_protocol(doc["protocol"].as_str().unwrap_or_default())
            .map_err(|e| e.to_string())?;
        if got != expected {
            return Err(format!("merge into rank {k} gave {got}"));
        }
        let rules: Vec<String> = doc["traces"][0]["steps"]
            .as_array()
            .ok_or("missing trace")?
            .iter()
            .map(|s| s["rule"].as_str().unwrap_or_default().to_string())
            .collect();
        if !is_subsequence(cited, &rules) {
            return Err(format!("trace {rules:?} lacks {cited:?}"));
        }
        traces.push(rules.join(", "));
    }
    Ok(format!("traces [{}] and [{}]", traces[0], traces[1]))
}

fn nbody_extraction() -> Outcome {
    let program = parse_process(&read_data("nbody.proc")).map_err(|e| e.to_string())?;
    let ctx = initial_context(3).map_err(|e| e.to_string())?;
    let d3 = d(int(3));
    let listings = [
        vec![msg(0, 1, &d3), msg(2, 0, &d3)],
        vec![msg(0, 1, &d3), msg(1, 2, &d3)],
        vec![msg(1, 2, &d3), msg(2, 0, &d3)],
    ];
    for (r, body) in listings.into_iter().enumerate() {
        let got = extract_local_type(&ctx, &program, r as i64, 3).map_err(|e| e.to_string())?;
        let expected = nbody_shape(body);
        if got != expected {
            return Err(format!("rank {r}: got\n{}", print_protocol(&got)));
        }
    }
    match dtype_equiv(&ctx, &d(IndexTerm::var("size")), &d3) {
        Ok(true) => {
            Ok("three listings equal; float[1000000 / size * 4] == float[1000000 / 3 * 4]".into())
        }
        other => Err(format!("payload equivalence: {other:?}")),
    }
}

fn one_to_all() -> Outcome {
    let program = parse_process(&read_data("one_to_all.proc")).map_err(|e| e.to_string())?;
    let ctx = initial_context(3).map_err(|e| e.to_string())?;
    let table = [
        "foreach i: 1..2 { message 0 i float[n * 4] }",
        "message 0 1 float[n * 4]",
        "message 0 2 float[n * 4]",
    ];
    let mut locals = Vec::new();
    for (r, text) in table.iter().enumerate() {
        let got = extract_local_type(&ctx, &program, r as i64, 3).map_err(|e| e.to_string())?;
        if got != ptype(text) {
            return Err(format!("rank {r}: got {got}"));
        }
        locals.push((r as i64, got));
    }
    let (global, traces) = merge_all(3, &locals, None).map_err(|e| e.to_string())?;
    if traces[0].unfolded.is_none() {
        return Err("expected the first step to unfold rank 0's loop".into());
    }
    let actions: Vec<_> = (0..3)
        .map(|r| linearize(&ctx, &global, r, None))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    match simulate(&actions, 3).map_err(|e| e.to_string())? {
        SimOutcome::Completed(_) => Ok(format!(
            "merged `{}`, simulation completed",
            print_protocol_inline(&global)
        )),
        other => Err(format!("simulation gave {other:?}")),
    }
}

fn ring_deadlock() -> Outcome {
    let program = parse_process(&read_data("ring.proc")).map_err(|e| e.to_string())?;
    for n in [2, 3] {
        let ctx = initial_context(n).map_err(|e| e.to_string())?;
        let locals: Vec<_> = (0..n)
            .map(|r| extract_local_type(&ctx, &program, r, n).map(|t| (r, t)))
            .collect::<Result<_, _>>()
            .map_err(|e| e.to_string())?;
        match merge_all(n, &locals, None) {
            Err(e) if e.diagnostic().map(|d| d.kind) == Some(DiagnosticKind::DeadlockSuspected) => {
            }
            other => return Err(format!("size {n}: merge gave {other:?}")),
        }
        let actions: Vec<_> = locals
            .iter()
            .map(|(r, t)| linearize(&ctx, t, *r, None))
            .collect::<Result<_, _>>()
            .map_err(|e| e.to_string())?;
        match simulate(&actions, n).map_err(|e| e.to_string())? {
            SimOutcome::Deadlocked(_) => {}
            other => return Err(format!("size {n}: simulation gave {other:?}")),
        }
    }
    Ok("sizes 2 and 3: DeadlockSuspected and Deadlocked".into())
}

fn rule_fidelity() -> Outcome {
    let mut passed = 0;
    let mut failures = Vec::new();
    for case in rule_cases() {
        let (pos, neg) = check_rule_case(&case);
        for r in [pos, neg] {
            match r {
                Ok(()) => passed += 1,
                Err(e) => failures.push(e),
            }
        }
    }
    if failures.is_empty() && passed == 36 {
        Ok("36/36 checks".into())
    } else {
        Err(format!("{passed}/36 checks; {}", failures.join("; ")))
    }
}

const CORPUS_SEED: u8 = 7;

fn merge_soundness() -> Outcome {
    let corpus = sample(&merge_instance(), 500, CORPUS_SEED);
    let mut merged = 0;
    for inst in &corpus {
        if check_soundness(inst)? {
            merged += 1;
        }
    }
    Ok(format!("500 instances, {merged} merged, 0 counterexamples"))
}

fn entailment_vs_enumeration() -> Outcome {
    let cases = sample(&(enum_context(), small_prop()), 1000, 11);
    let mut undecidable = 0;
    for (ec, p) in &cases {
        let p = close_over(p, ec);
        if domain_product(ec) > 10_000 {
            return Err(format!("context too large: {}", ec.ctx));
        }
        if let Some(msg) = entailment_disagreement(ec, &p) {
            return Err(msg);
        }
        if protomerge::logic::entails(&ec.ctx, &p) == protomerge::logic::Verdict::Undecidable {
            undecidable += 1;
        }
    }
    Ok(format!(
        "1000 propositions, {undecidable} undecidable, 0 disagreements"
    ))
}

fn round_trip() -> Outcome {
    let protocols = sample(
        &protocol_tree().prop_filter("depth", |t| protocol_depth(t) <= 6),
        1000,
        13,
    );
    for t in &protocols {
        let text = print_protocol(t);
        match parse_protocol(&text) {
            Ok(back) if back == *t => {}
            other => return Err(format!("`{text}` reparsed as {other:?}")),
        }
    }
    let processes = sample(
        &process_tree().prop_filter("depth", |p| process_depth(p) <= 6),
        1000,
        17,
    );
    for p in &processes {
        let text = print_process(p);
        match parse_process(&text) {
            Ok(back) if back == *p => {}
            other => return Err(format!("`{text}` reparsed as {other:?}")),
        }
    }
    Ok("1000 protocols and 1000 processes".into())
}

fn conservation() -> Outcome {
    let corpus = sample(&merge_instance(), 500, CORPUS_SEED);
    let mut merged = 0;
    for inst in &corpus {
        if check_conservation(inst)? {
            merged += 1;
        }
    }
    Ok(format!("{merged} successful merges checked"))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("n-body protocol inference", nbody_inference),
        ("two merge steps with rule traces", merge_steps),
        ("n-body local type extraction", nbody_extraction),
        ("one-to-all with unfolding", one_to_all),
        ("send-first ring rejected", ring_deadlock),
        ("rule fidelity", rule_fidelity),
        ("merge soundness against the simulator", merge_soundness),
        ("entailment against enumeration", entailment_vs_enumeration),
        ("parser round trip", round_trip),
        ("message conservation and order", conservation),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            Err(e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match result {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {why}", i + 1);
            }
        }
    }
    println!("{} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
