//! Fixtures, generators and checks shared by the integration tests and the
//! acceptance harness.
#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::PathBuf;

use proptest::prelude::*;
use proptest::strategy::ValueTree;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};

use protomerge::ast::{
    eval_prop, ArithOp, Assignment, BaseType, CmpOp, Datatype, IndexTerm, Process, Prop,
    ProtocolType, ReduceOp, TypingContext,
};
use protomerge::logic::{initial_context, merged_context, Logic, Verdict};
use protomerge::merge::{merge_all, try_rule, Rule};
use protomerge::oracle::{linearize, simulate, RankAction, SimOutcome};
use protomerge::syntax::parse_protocol;

pub fn data_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("data")
        .join(name)
}

pub fn read_data(name: &str) -> String {
    std::fs::read_to_string(data_path(name)).unwrap()
}

pub fn ptype(text: &str) -> ProtocolType {
    parse_protocol(text).unwrap_or_else(|e| panic!("{e}: {text}"))
}

pub fn data_ptype(name: &str) -> ProtocolType {
    ptype(&read_data(name))
}

/// Runs the command line in-process.
pub fn cli(args: &[&str]) -> (i32, String) {
    let mut out = Vec::new();
    let argv = std::iter::once("protomerge").chain(args.iter().copied());
    let code = protomerge::cli::run(argv, &mut out);
    (code, String::from_utf8(out).unwrap())
}

pub fn runner(cases: u32, seed: u8) -> TestRunner {
    let config = Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    };
    TestRunner::new_with_rng(
        config,
        TestRng::from_seed(RngAlgorithm::ChaCha, &[seed; 32]),
    )
}

/// Draws `count` values without shrinking.
pub fn sample<S: Strategy>(strategy: &S, count: usize, seed: u8) -> Vec<S::Value> {
    let mut r = runner(count as u32, seed);
    (0..count)
        .map(|_| strategy.new_tree(&mut r).unwrap().current())
        .collect()
}

// ---------------------------------------------------------------------------
// Syntax trees

const VARS: &[&str] = &["i", "j", "n", "x", "rank", "size", "len2"];
const BINDERS: &[&str] = &["i", "j", "x", "iter", "pipe"];

fn ident() -> impl Strategy<Value = String> {
    prop::sample::select(VARS).prop_map(String::from)
}

fn binder() -> impl Strategy<Value = String> {
    prop::sample::select(BINDERS).prop_map(String::from)
}

fn arith_op() -> impl Strategy<Value = ArithOp> {
    prop::sample::select(vec![ArithOp::Add, ArithOp::Sub, ArithOp::Mul, ArithOp::Div])
}

fn cmp_op() -> impl Strategy<Value = CmpOp> {
    prop::sample::select(vec![
        CmpOp::Eq,
        CmpOp::Ne,
        CmpOp::Lt,
        CmpOp::Le,
        CmpOp::Gt,
        CmpOp::Ge,
    ])
}

fn reduce_op() -> impl Strategy<Value = ReduceOp> {
    prop::sample::select(ReduceOp::ALL.to_vec())
}

pub fn index_term() -> BoxedStrategy<IndexTerm> {
    let leaf = prop_oneof![
        (-20i64..100).prop_map(IndexTerm::Int),
        ident().prop_map(IndexTerm::Var)
    ];
    leaf.prop_recursive(3, 12, 3, |inner| {
        prop_oneof![
            3 => (arith_op(), inner.clone(), inner.clone()).prop_map(|(o, a, b)| IndexTerm::bin(o, a, b)),
            1 => (cmp_op(), inner.clone(), inner.clone(), inner.clone(), inner)
                .prop_map(|(o, l, r, a, b)| IndexTerm::cond(Prop::cmp(o, l, r), a, b)),
        ]
    })
    .boxed()
}

pub fn prop_tree() -> BoxedStrategy<Prop> {
    let leaf = prop_oneof![
        1 => Just(Prop::True),
        4 => (cmp_op(), index_term(), index_term()).prop_map(|(o, a, b)| Prop::cmp(o, a, b)),
    ];
    leaf.prop_recursive(2, 6, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Prop::and(a, b)),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Prop::or(a, b)),
            inner.prop_map(Prop::not),
        ]
    })
    .boxed()
}

pub fn datatype() -> BoxedStrategy<Datatype> {
    let base = prop::sample::select(vec![BaseType::Integer, BaseType::Float]);
    let leaf = prop_oneof![
        3 => Just(Datatype::Integer),
        3 => Just(Datatype::Float),
        1 => prop::sample::select(vec!["h", "a", "b"]).prop_map(|h| Datatype::Hole(h.into())),
        2 => (base, prop_tree()).prop_map(|(b, p)| Datatype::refined("v", b, p)),
    ];
    leaf.prop_recursive(2, 4, 1, |inner| {
        (inner, index_term()).prop_map(|(d, len)| Datatype::array(d, len))
    })
    .boxed()
}

fn endpoint() -> BoxedStrategy<IndexTerm> {
    prop_oneof![3 => (0i64..4).prop_map(IndexTerm::Int), 1 => index_term()].boxed()
}

fn flat_protocol(items: Vec<ProtocolType>) -> ProtocolType {
    let mut flat = Vec::new();
    for t in &items {
        flat.extend(t.seq_items().into_iter().cloned());
    }
    ProtocolType::seq_of(flat)
}

/// Protocol types in the shape the parser produces: sequences nest to the
/// right and a binder-less collective has no continuation.
pub fn protocol_tree() -> BoxedStrategy<ProtocolType> {
    let leaf = prop_oneof![
        1 => Just(ProtocolType::Skip),
        4 => (endpoint(), endpoint(), datatype()).prop_map(|(a, b, d)| ProtocolType::message(a, b, d)),
        1 => (reduce_op(), datatype()).prop_map(|(o, d)| ProtocolType::allreduce(o, d)),
    ];
    leaf.prop_recursive(5, 24, 3, |inner| {
        prop_oneof![
            2 => prop::collection::vec(inner.clone(), 2..4).prop_map(flat_protocol),
            1 => (binder(), index_term(), index_term(), inner.clone())
                .prop_map(|(x, lo, hi, body)| ProtocolType::foreach(&x, lo, hi, body)),
            1 => (reduce_op(), binder(), datatype(), inner).prop_map(|(op, x, payload, cont)| {
                ProtocolType::Allreduce { op, binder: x, payload, cont: Box::new(cont) }
            }),
        ]
    })
    .boxed()
}

fn flat_process(items: Vec<Process>) -> Process {
    fn push(p: Process, out: &mut Vec<Process>) {
        match p {
            Process::Seq(a, b) => {
                push(*a, out);
                push(*b, out);
            }
            other => out.push(other),
        }
    }
    let mut flat = Vec::new();
    for p in items {
        push(p, &mut flat);
    }
    let mut it = flat.into_iter().rev();
    let last = it.next().unwrap_or(Process::Skip);
    it.fold(last, |acc, p| Process::seq(p, acc))
}

pub fn process_tree() -> BoxedStrategy<Process> {
    let leaf = prop_oneof![
        1 => Just(Process::Skip),
        3 => (endpoint(), datatype()).prop_map(|(to, payload)| Process::Send { to, payload }),
        3 => (endpoint(), datatype()).prop_map(|(from, payload)| Process::Recv { from, payload }),
        1 => (reduce_op(), datatype()).prop_map(|(op, payload)| Process::Allreduce { op, payload }),
        1 => (datatype(), datatype()).prop_map(|(lhs, rhs)| Process::Constraint { lhs, rhs }),
    ];
    leaf.prop_recursive(5, 24, 3, |inner| {
        prop_oneof![
            2 => prop::collection::vec(inner.clone(), 2..4).prop_map(flat_process),
            1 => (binder(), index_term(), index_term(), inner.clone()).prop_map(|(x, lo, hi, body)| {
                Process::For { binder: x, lo, hi, body: Box::new(body) }
            }),
            1 => (prop_tree(), inner.clone(), inner).prop_map(|(test, a, b)| Process::If {
                test,
                then: Box::new(a),
                els: Box::new(b),
            }),
        ]
    })
    .boxed()
}

/// Nesting depth of a protocol; the items of a sequence sit one level
/// below it.
pub fn protocol_depth(t: &ProtocolType) -> usize {
    match t {
        ProtocolType::Skip | ProtocolType::Message { .. } => 1,
        ProtocolType::Allreduce { cont, .. } => 1 + protocol_depth(cont),
        ProtocolType::Foreach { body, .. } => 1 + protocol_depth(body),
        ProtocolType::Seq(..) => {
            1 + t
                .seq_items()
                .iter()
                .map(|i| protocol_depth(i))
                .max()
                .unwrap_or(0)
        }
    }
}

pub fn process_depth(p: &Process) -> usize {
    fn items(p: &Process, out: &mut Vec<usize>) {
        match p {
            Process::Seq(a, b) => {
                items(a, out);
                items(b, out);
            }
            other => out.push(process_depth(other)),
        }
    }
    match p {
        Process::For { body, .. } => 1 + process_depth(body),
        Process::If { then, els, .. } => 1 + process_depth(then).max(process_depth(els)),
        Process::Seq(..) => {
            let mut depths = Vec::new();
            items(p, &mut depths);
            1 + depths.into_iter().max().unwrap_or(0)
        }
        _ => 1,
    }
}

// ---------------------------------------------------------------------------
// Entailment

/// A context of integer refinements together with a superset of each
/// variable's values, used for brute-force checking.
#[derive(Debug, Clone)]
pub struct EnumContext {
    pub ctx: TypingContext,
    pub ranges: Vec<(String, i64, i64)>,
    pub preds: Vec<Prop>,
}

fn v() -> IndexTerm {
    IndexTerm::var("v")
}

fn refinement(
    kind: u8,
    a: i64,
    width: i64,
    earlier: Option<&(String, i64, i64)>,
) -> (Prop, i64, i64) {
    let int = IndexTerm::Int;
    match kind {
        0 => (
            Prop::and(
                Prop::cmp(CmpOp::Le, int(a), v()),
                Prop::cmp(CmpOp::Le, v(), int(a + width)),
            ),
            a,
            a + width,
        ),
        1 => {
            let set = [a, a + width / 2, a + width];
            (
                Prop::any(set.iter().map(|x| Prop::cmp(CmpOp::Eq, v(), int(*x)))),
                a,
                a + width,
            )
        }
        2 => (Prop::cmp(CmpOp::Eq, v(), int(a)), a, a),
        _ => match earlier {
            // Bounded above by an earlier variable.
            Some((x, lo, hi)) => (
                Prop::and(
                    Prop::cmp(CmpOp::Le, int(lo - 2), v()),
                    Prop::cmp(CmpOp::Le, v(), IndexTerm::var(x)),
                ),
                lo - 2,
                *hi,
            ),
            None => refinement(0, a, width, None),
        },
    }
}

pub fn enum_context() -> impl Strategy<Value = EnumContext> {
    prop::collection::vec((0u8..4, -10i64..10, 0i64..16), 1..=3).prop_map(|specs| {
        let names = ["x", "y", "z"];
        let mut ctx = TypingContext::new();
        let mut ranges: Vec<(String, i64, i64)> = Vec::new();
        let mut preds = Vec::new();
        for (idx, (kind, a, width)) in specs.into_iter().enumerate() {
            let name = names[idx];
            let (pred, lo, hi) = refinement(kind, a, width, ranges.last());
            ctx.push(
                name,
                Datatype::refined("v", BaseType::Integer, pred.clone()),
            )
            .unwrap();
            ranges.push((name.to_string(), lo, hi));
            preds.push(pred);
        }
        EnumContext { ctx, ranges, preds }
    })
}

fn small_term() -> BoxedStrategy<IndexTerm> {
    let leaf = prop_oneof![
        (-12i64..12).prop_map(IndexTerm::Int),
        prop::sample::select(vec!["x", "y", "z"]).prop_map(IndexTerm::var),
    ];
    leaf.prop_recursive(2, 6, 2, |inner| {
        (arith_op(), inner.clone(), inner).prop_map(|(o, a, b)| IndexTerm::bin(o, a, b))
    })
    .boxed()
}

pub fn small_prop() -> BoxedStrategy<Prop> {
    let leaf = prop_oneof![
        1 => Just(Prop::True),
        6 => (cmp_op(), small_term(), small_term()).prop_map(|(o, a, b)| Prop::cmp(o, a, b)),
    ];
    leaf.prop_recursive(3, 8, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Prop::and(a, b)),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Prop::or(a, b)),
            inner.prop_map(Prop::not),
        ]
    })
    .boxed()
}

/// Restricts a proposition to the variables the context binds.
pub fn close_over(p: &Prop, ec: &EnumContext) -> Prop {
    let bound: BTreeSet<String> = ec.ranges.iter().map(|(n, _, _)| n.clone()).collect();
    p.free_vars()
        .iter()
        .filter(|x| !bound.contains(*x))
        .fold(p.clone(), |p, x| p.subst(x, &IndexTerm::Int(1)))
}

/// Validity by enumeration; evaluation errors count as false.
pub fn brute_force(ec: &EnumContext, p: &Prop) -> bool {
    fn go(ec: &EnumContext, p: &Prop, idx: usize, env: &mut Assignment) -> bool {
        if idx == ec.ranges.len() {
            return eval_prop(env, p).unwrap_or(false);
        }
        let (name, lo, hi) = &ec.ranges[idx];
        for value in *lo..=*hi {
            let mut with_v = env.clone();
            with_v.insert("v".into(), value);
            if !eval_prop(&with_v, &ec.preds[idx]).unwrap_or(false) {
                continue;
            }
            env.insert(name.clone(), value);
            let ok = go(ec, p, idx + 1, env);
            env.remove(name);
            if !ok {
                return false;
            }
        }
        true
    }
    go(ec, p, 0, &mut Assignment::new())
}

pub fn domain_product(ec: &EnumContext) -> u64 {
    ec.ranges
        .iter()
        .map(|(_, lo, hi)| (hi - lo + 1) as u64)
        .product()
}

/// `None` when the verdict agrees with enumeration (or is undecidable),
/// otherwise a description of the disagreement.
pub fn entailment_disagreement(ec: &EnumContext, p: &Prop) -> Option<String> {
    let verdict = Logic::default().entails(&ec.ctx, p);
    let truth = brute_force(ec, p);
    match (verdict, truth) {
        (Verdict::Valid, true) | (Verdict::Invalid, false) | (Verdict::Undecidable, _) => None,
        _ => Some(format!(
            "{} |= {p}: got {verdict:?}, enumeration says {truth}",
            ec.ctx
        )),
    }
}

// ---------------------------------------------------------------------------
// Merge instances

/// Local types of ranks `0..n`, each a sequence of messages.
#[derive(Debug, Clone)]
pub struct Instance {
    pub n: i64,
    pub locals: Vec<(i64, ProtocolType)>,
}

fn payload(tag: u8) -> Datatype {
    match tag {
        0 => Datatype::Integer,
        1 => Datatype::array(Datatype::Float, IndexTerm::Int(4)),
        _ => Datatype::array(
            Datatype::Float,
            IndexTerm::bin(ArithOp::Mul, IndexTerm::var("size"), IndexTerm::Int(2)),
        ),
    }
}

fn msg(a: i64, b: i64, tag: u8) -> ProtocolType {
    ProtocolType::message(IndexTerm::Int(a), IndexTerm::Int(b), payload(tag))
}

/// A global message sequence projected onto each rank, optionally
/// perturbed in one rank (adjacent swap, removal or payload change), which
/// usually makes the program deadlock or mismatch.
pub fn merge_instance() -> impl Strategy<Value = Instance> {
    (2i64..=4)
        .prop_flat_map(|n| {
            let pair = (0..n, 1..n, 0u8..3).prop_map(move |(a, d, tag)| (a, (a + d) % n, tag));
            (
                Just(n),
                prop::collection::vec(pair, 0..10),
                0u8..5,
                0..n,
                0usize..6,
            )
        })
        .prop_map(|(n, global, perturb, victim, at)| {
            let mut per_rank: Vec<Vec<(i64, i64, u8)>> = vec![Vec::new(); n as usize];
            for (a, b, tag) in global {
                if per_rank[a as usize].len() < 6 && per_rank[b as usize].len() < 6 {
                    per_rank[a as usize].push((a, b, tag));
                    per_rank[b as usize].push((a, b, tag));
                }
            }
            let list = &mut per_rank[victim as usize];
            if !list.is_empty() {
                let i = at % list.len();
                match perturb {
                    0 if i + 1 < list.len() => list.swap(i, i + 1),
                    1 => {
                        list.remove(i);
                    }
                    2 => list[i].2 = (list[i].2 + 1) % 3,
                    _ => {}
                }
            }
            let locals = per_rank
                .into_iter()
                .enumerate()
                .map(|(r, ms)| {
                    (
                        r as i64,
                        ProtocolType::seq_of(ms.into_iter().map(|(a, b, t)| msg(a, b, t))),
                    )
                })
                .collect();
            Instance { n, locals }
        })
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SoundnessStats {
    pub merged: usize,
    pub rejected: usize,
}

/// Runs merge and the simulator on one instance. Returns whether merging
/// succeeded, or a counterexample.
pub fn check_soundness(inst: &Instance) -> Result<bool, String> {
    let ctx = initial_context(inst.n).unwrap();
    let Ok((global, _)) = merge_all(inst.n, &inst.locals, None) else {
        return Ok(false);
    };
    let actions: Vec<_> = inst
        .locals
        .iter()
        .map(|(r, t)| linearize(&ctx, t, *r, None).unwrap())
        .collect();
    match simulate(&actions, inst.n) {
        Ok(SimOutcome::Completed(_)) => {}
        other => {
            return Err(format!(
                "merge produced `{global}` but simulation gave {other:?} for {:?}",
                inst.locals
            ))
        }
    }
    let global_actions: Vec<_> = (0..inst.n)
        .map(|r| linearize(&ctx, &global, r, None).unwrap())
        .collect();
    match simulate(&global_actions, inst.n) {
        Ok(SimOutcome::Completed(_)) => Ok(true),
        other => Err(format!("merged type `{global}` does not run: {other:?}")),
    }
}

/// Equal up to payload equivalence.
fn same_actions(ctx: &TypingContext, a: &[RankAction], b: &[RankAction]) -> bool {
    let logic = Logic::default();
    let eq = |d1: &Datatype, d2: &Datatype| logic.dtype_equiv(ctx, d1, d2) == Ok(true);
    a.len() == b.len()
        && a.iter().zip(b).all(|pair| match pair {
            (
                RankAction::SendTo {
                    peer: p,
                    payload: d1,
                },
                RankAction::SendTo {
                    peer: q,
                    payload: d2,
                },
            )
            | (
                RankAction::RecvFrom {
                    peer: p,
                    payload: d1,
                },
                RankAction::RecvFrom {
                    peer: q,
                    payload: d2,
                },
            ) => p == q && eq(d1, d2),
            (
                RankAction::Collective {
                    op: o1,
                    payload: d1,
                },
                RankAction::Collective {
                    op: o2,
                    payload: d2,
                },
            ) => o1 == o2 && eq(d1, d2),
            _ => false,
        })
}

/// Every message of every local type occurs in the merged type, and each
/// rank sees its messages in its own order.
pub fn check_conservation(inst: &Instance) -> Result<bool, String> {
    let ctx = initial_context(inst.n).unwrap();
    let Ok((global, _)) = merge_all(inst.n, &inst.locals, None) else {
        return Ok(false);
    };
    let mut local_total = 0;
    for (r, t) in &inst.locals {
        let local = linearize(&ctx, t, *r, None).unwrap();
        let projected = linearize(&ctx, &global, *r, None).unwrap();
        if !same_actions(&ctx, &local, &projected) {
            return Err(format!(
                "rank {r}: local {local:?} but merged projects to {projected:?}"
            ));
        }
        local_total += local.len();
    }
    let global_messages = global
        .seq_items()
        .iter()
        .filter(|t| matches!(t, ProtocolType::Message { .. }))
        .count();
    if 2 * global_messages != local_total {
        return Err(format!(
            "merged type has {global_messages} messages, local types have {local_total} endpoints"
        ));
    }
    Ok(true)
}

// ---------------------------------------------------------------------------
// Rule fidelity

pub struct RuleCase {
    pub rule: Rule,
    pub n: i64,
    pub merged: &'static [i64],
    pub k: i64,
    pub left: &'static str,
    pub right: &'static str,
    pub expected: &'static str,
    /// Same goal with one premise conjunct falsified.
    pub negated: (&'static str, &'static str),
}

/// One positive and one negated instance per rule. Unless noted, the left
/// type covers rank 0 and the right type is rank 1 of four.
pub fn rule_cases() -> Vec<RuleCase> {
    let case = |rule, left, right, expected, negated| RuleCase {
        rule,
        n: 4,
        merged: &[0],
        k: 1,
        left,
        right,
        expected,
        negated,
    };
    vec![
        case(
            Rule::SkipSkip,
            "skip",
            "skip",
            "skip",
            ("skip", "message 1 2 integer"),
        ),
        case(
            Rule::SkipMsgS,
            "skip",
            "message 2 3 integer",
            "skip",
            ("skip", "message 2 1 integer"),
        ),
        case(
            Rule::SkipMsg,
            "skip",
            "message 1 2 integer",
            "message 1 2 integer",
            ("skip", "message 1 0 integer"),
        ),
        case(
            Rule::MsgSSkip,
            "message 2 3 integer",
            "skip",
            "skip",
            ("message 2 0 integer", "skip"),
        ),
        case(
            Rule::MsgSkip,
            "message 0 2 integer",
            "skip",
            "message 0 2 integer",
            ("message 0 1 integer", "skip"),
        ),
        case(
            Rule::MsgSMsgS,
            "message 2 3 integer",
            "message 2 3 integer",
            "skip",
            ("message 2 3 integer", "message 1 3 integer"),
        ),
        case(
            Rule::MsgMsgS,
            "message 0 2 integer",
            "message 2 3 integer",
            "message 0 2 integer",
            ("message 0 2 integer", "message 2 1 integer"),
        ),
        case(
            Rule::MsgSMsg,
            "message 2 3 integer",
            "message 1 2 integer",
            "message 1 2 integer",
            ("message 2 0 integer", "message 1 2 integer"),
        ),
        case(
            Rule::MsgMsgEq,
            "message 0 1 float[size * 2]",
            "message 0 1 float[8]",
            "message 0 1 float[size * 2]",
            ("message 0 1 float[size * 2]", "message 0 1 float[9]"),
        ),
        case(
            Rule::AllredAllred,
            "allreduce min float",
            "allreduce min float",
            "allreduce min float",
            ("allreduce min float", "allreduce min integer"),
        ),
        case(
            Rule::ForeachForeach,
            "foreach i: 1..size - 1 { message 0 1 float[i] }",
            "foreach j: 1..3 { message 0 1 float[j] }",
            "foreach i: 1..size - 1 { message 0 1 float[i] }",
            (
                "foreach i: 1..size - 1 { message 0 1 float[i] }",
                "foreach j: 1..2 { message 0 1 float[j] }",
            ),
        ),
        case(
            Rule::SeqSeq,
            "message 0 1 integer; message 0 2 integer",
            "message 0 1 integer",
            "message 0 1 integer; message 0 2 integer",
            (
                "message 0 1 integer; message 0 2 integer",
                "message 1 0 integer",
            ),
        ),
        case(
            Rule::SkipMsgT,
            "skip",
            "message 1 2 integer; message 2 3 integer",
            "message 1 2 integer",
            ("skip", "message 1 0 integer; message 2 3 integer"),
        ),
        case(
            Rule::MsgTSkipT,
            "message 0 2 integer; message 2 3 integer",
            "skip",
            "message 0 2 integer",
            ("message 0 1 integer; message 2 3 integer", "skip"),
        ),
        case(
            Rule::MsgMsgRight,
            "message 0 2 integer",
            "message 1 2 integer",
            "message 1 2 integer; message 0 2 integer",
            ("message 0 2 integer", "message 1 0 integer"),
        ),
        case(
            Rule::MsgMsgLeft,
            "message 0 2 integer",
            "message 1 2 integer",
            "message 0 2 integer; message 1 2 integer",
            ("message 0 1 integer", "message 1 2 integer"),
        ),
        case(
            Rule::MsgTMsgTRight,
            "message 0 2 integer",
            "message 1 2 integer; message 1 3 integer",
            "message 1 2 integer; message 1 3 integer; message 0 2 integer",
            (
                "message 0 2 integer",
                "message 1 0 integer; message 1 3 integer",
            ),
        ),
        case(
            Rule::MsgTMsgTLeft,
            "message 0 2 integer; message 0 3 integer",
            "message 1 2 integer",
            "message 0 2 integer; message 1 2 integer; message 0 3 integer",
            (
                "message 0 1 integer; message 0 3 integer",
                "message 1 2 integer",
            ),
        ),
    ]
}

/// Checks the positive and the negated instance of a case.
pub fn check_rule_case(c: &RuleCase) -> (Result<(), String>, Result<(), String>) {
    let merged: BTreeSet<i64> = c.merged.iter().copied().collect();
    let ctx = merged_context(c.n, &merged).unwrap();
    let positive = match try_rule(&ctx, c.rule, &ptype(c.left), &ptype(c.right), c.k) {
        Ok(Some((v, trace))) if v == ptype(c.expected) && trace.steps[0].rule == c.rule.name() => {
            Ok(())
        }
        other => Err(format!(
            "{}: expected `{}`, got {other:?}",
            c.rule, c.expected
        )),
    };
    let negative = match try_rule(&ctx, c.rule, &ptype(c.negated.0), &ptype(c.negated.1), c.k) {
        Ok(None) => Ok(()),
        other => Err(format!(
            "{}: negated instance still applies: {other:?}",
            c.rule
        )),
    };
    (positive, negative)
}
