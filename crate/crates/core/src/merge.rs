//! The merge judgment `Γ ⊢ T ∥ U @ k ⇝ V`.
//!
//! `T` is the type of the ranks merged so far (recorded as `rank` in `Γ`),
//! `U` the local type of rank `k`. A goal is solved by trying the rules of
//! [`Rule::ALL`] in order with depth-first backtracking; the first
//! derivation found wins. Goals are memoized per call.
//!
//! Premises mentioning `rank` read it as the set of merged ranks: `i = rank`
//! holds when `i` is one of them and `i != rank` when it is none of them.

use std::collections::{BTreeSet, HashMap};
use std::fmt::{self, Write as _};

use serde::Serialize;
use thiserror::Error;

use crate::ast::{
    eval_index, Assignment, BaseType, CmpOp, Datatype, Diagnostic, DiagnosticKind, IndexTerm, Prop,
    ProtocolType, RuleAttempt, TypingContext, ANON_BINDER,
};
use crate::logic::{merged_context, Domain, Logic, LogicError, Verdict};
use crate::syntax::print_protocol_inline;

pub const DEFAULT_UNFOLD_CAP: u64 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(into = "String")]
pub enum Rule {
    SkipSkip,
    SkipMsgS,
    SkipMsg,
    MsgSSkip,
    MsgSkip,
    MsgSMsgS,
    MsgMsgS,
    MsgSMsg,
    MsgMsgEq,
    AllredAllred,
    ForeachForeach,
    SeqSeq,
    SkipMsgT,
    MsgTSkipT,
    MsgMsgRight,
    MsgMsgLeft,
    MsgTMsgTRight,
    MsgTMsgTLeft,
}

impl Rule {
    /// Every rule, in the order the engine tries them.
    pub const ALL: [Rule; 18] = [
        Rule::SkipSkip,
        Rule::SkipMsgS,
        Rule::SkipMsg,
        Rule::MsgSSkip,
        Rule::MsgSkip,
        Rule::MsgSMsgS,
        Rule::MsgMsgS,
        Rule::MsgSMsg,
        Rule::MsgMsgEq,
        Rule::AllredAllred,
        Rule::ForeachForeach,
        Rule::SeqSeq,
        Rule::SkipMsgT,
        Rule::MsgTSkipT,
        Rule::MsgMsgRight,
        Rule::MsgMsgLeft,
        Rule::MsgTMsgTRight,
        Rule::MsgTMsgTLeft,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Rule::SkipSkip => "skip-skip",
            Rule::SkipMsgS => "skip-msgS",
            Rule::SkipMsg => "skip-msg",
            Rule::MsgSSkip => "msgS-skip",
            Rule::MsgSkip => "msg-skip",
            Rule::MsgSMsgS => "msgS-msgS",
            Rule::MsgMsgS => "msg-msgS",
            Rule::MsgSMsg => "msgS-msg",
            Rule::MsgMsgEq => "msg-msg-eq",
            Rule::AllredAllred => "allred-allred",
            Rule::ForeachForeach => "foreach-foreach",
            Rule::SeqSeq => "seq-seq",
            Rule::SkipMsgT => "skip-msgT",
            Rule::MsgTSkipT => "msgT-skipT",
            Rule::MsgMsgRight => "msg-msg-right",
            Rule::MsgMsgLeft => "msg-msg-left",
            Rule::MsgTMsgTRight => "msgT-msgT-right",
            Rule::MsgTMsgTLeft => "msgT-msgT-left",
        }
    }

    pub fn from_name(name: &str) -> Option<Rule> {
        Rule::ALL.into_iter().find(|r| r.name() == name)
    }

    /// Mirror rules are derived by swapping the roles of the two operands.
    pub fn is_mirror(self) -> bool {
        matches!(
            self,
            Rule::MsgSSkip
                | Rule::MsgMsgS
                | Rule::MsgSMsg
                | Rule::MsgMsgLeft
                | Rule::MsgTMsgTRight
                | Rule::MsgTSkipT
        )
    }
}

impl From<Rule> for String {
    fn from(r: Rule) -> String {
        r.name().to_string()
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PremiseResult {
    /// Schematic form, e.g. `i1 != k`.
    pub premise: String,
    /// The instance that was checked.
    pub instance: String,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TraceStep {
    pub rule: String,
    pub depth: usize,
    pub left: String,
    pub right: String,
    pub premises: Vec<PremiseResult>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct MergeTrace {
    /// Ranks already merged into the left operand.
    pub merged: Vec<i64>,
    pub k: i64,
    /// Which operand had its leading loop unfolded before merging, if any.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub unfolded: Option<String>,
    pub steps: Vec<TraceStep>,
}

impl MergeTrace {
    pub fn rule_names(&self) -> Vec<&str> {
        self.steps.iter().map(|s| s.rule.as_str()).collect()
    }

    /// Line-oriented log: one line per rule application, premises indented
    /// below it.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let merged: Vec<String> = self.merged.iter().map(i64::to_string).collect();
        let _ = writeln!(
            out,
            "merge rank {{{}}} with rank {}",
            merged.join(", "),
            self.k
        );
        if let Some(side) = &self.unfolded {
            let _ = writeln!(out, "unfolded leading foreach on the {side}");
        }
        for step in &self.steps {
            let pad = "  ".repeat(step.depth + 1);
            let _ = writeln!(out, "{pad}{}: {} || {}", step.rule, step.left, step.right);
            for p in &step.premises {
                let _ = writeln!(
                    out,
                    "{pad}  [{:?}] {}: {}",
                    p.verdict, p.premise, p.instance
                );
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MergeFailure {
    pub diagnostic: Diagnostic,
    /// Rule attempts at the deepest goal that could not be solved.
    pub trace: MergeTrace,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MergeError {
    #[error("{}", .0.diagnostic.message)]
    Failure(Box<MergeFailure>),
    #[error("foreach bounds `{0}` are not constant")]
    NonConstantBounds(String),
    #[error("unfolding would produce {0} iterations, more than the cap of {1}")]
    UnfoldCapExceeded(u128, u64),
    #[error("invalid merge input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Context(#[from] LogicError),
}

impl MergeError {
    pub fn diagnostic(&self) -> Option<&Diagnostic> {
        match self {
            MergeError::Failure(f) => Some(&f.diagnostic),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MergeOptions {
    pub logic: Logic,
    pub unfold_cap: u64,
}

impl Default for MergeOptions {
    fn default() -> Self {
        MergeOptions {
            logic: Logic::default(),
            unfold_cap: DEFAULT_UNFOLD_CAP,
        }
    }
}

// ---------------------------------------------------------------------------
// Normal form

/// Right-associates sequences and drops `skip` units, also inside loop
/// bodies and collective continuations.
pub fn normalize_seq(t: &ProtocolType) -> ProtocolType {
    let mut items = Vec::new();
    flatten(t, &mut items);
    ProtocolType::seq_of(items)
}

fn flatten(t: &ProtocolType, out: &mut Vec<ProtocolType>) {
    match t {
        ProtocolType::Skip => {}
        ProtocolType::Seq(a, b) => {
            flatten(a, out);
            flatten(b, out);
        }
        ProtocolType::Message { .. } => out.push(t.clone()),
        ProtocolType::Allreduce {
            op,
            binder,
            payload,
            cont,
        } => out.push(ProtocolType::Allreduce {
            op: *op,
            binder: binder.clone(),
            payload: payload.clone(),
            cont: Box::new(normalize_seq(cont)),
        }),
        ProtocolType::Foreach {
            binder,
            lo,
            hi,
            body,
        } => out.push(ProtocolType::Foreach {
            binder: binder.clone(),
            lo: lo.clone(),
            hi: hi.clone(),
            body: Box::new(normalize_seq(body)),
        }),
    }
}

// ---------------------------------------------------------------------------
// Unfolding

/// Assignment of the context variables whose value is fixed.
fn fixed_values(logic: &Logic, ctx: &TypingContext) -> Assignment {
    let mut env = Assignment::new();
    for (name, _) in ctx.entries() {
        match logic.domain_of(ctx, name) {
            Ok(Domain::FiniteSet(v)) if v.len() == 1 => {
                env.insert(name.clone(), v[0]);
            }
            Ok(Domain::Interval(a, b)) if a == b => {
                env.insert(name.clone(), a);
            }
            _ => {}
        }
    }
    env
}

fn constant_bounds(
    logic: &Logic,
    ctx: &TypingContext,
    lo: &IndexTerm,
    hi: &IndexTerm,
) -> Option<(i64, i64)> {
    let env = fixed_values(logic, ctx);
    Some((eval_index(&env, lo).ok()?, eval_index(&env, hi).ok()?))
}

pub fn unfold_foreach(ctx: &TypingContext, t: &ProtocolType) -> Result<ProtocolType, MergeError> {
    unfold_foreach_with(&MergeOptions::default(), ctx, t)
}

pub fn unfold_foreach_with(
    opts: &MergeOptions,
    ctx: &TypingContext,
    t: &ProtocolType,
) -> Result<ProtocolType, MergeError> {
    let ProtocolType::Foreach {
        binder,
        lo,
        hi,
        body,
    } = t
    else {
        return Err(MergeError::InvalidInput(format!(
            "`{}` is not a foreach",
            print_protocol_inline(t)
        )));
    };
    let Some((a, b)) = constant_bounds(&opts.logic, ctx, lo, hi) else {
        return Err(MergeError::NonConstantBounds(format!("{lo}..{hi}")));
    };
    if b < a {
        return Ok(ProtocolType::Skip);
    }
    let count = (b as i128 - a as i128 + 1) as u128;
    if count > opts.unfold_cap as u128 {
        return Err(MergeError::UnfoldCapExceeded(count, opts.unfold_cap));
    }
    let items = (a..=b).map(|v| body.subst(binder, &IndexTerm::Int(v)));
    Ok(normalize_seq(&ProtocolType::seq_of(items)))
}

// ---------------------------------------------------------------------------
// The engine

type Abort = Box<MergeFailure>;

#[derive(Debug, Clone)]
struct Derivation {
    result: ProtocolType,
    /// Pre-order rule applications, depths relative to this goal.
    steps: Vec<TraceStep>,
}

impl Derivation {
    fn nested(&self, depth: usize) -> impl Iterator<Item = TraceStep> + '_ {
        self.steps.iter().cloned().map(move |mut s| {
            s.depth += depth;
            s
        })
    }
}

#[derive(Debug, Clone)]
struct FailedGoal {
    depth: usize,
    location: Vec<String>,
    left: ProtocolType,
    right: ProtocolType,
    attempts: Vec<(RuleAttempt, TraceStep, PremiseKind)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PremiseKind {
    Ranks,
    Datatype,
    Bounds,
    Shape,
    SubMerge,
}

enum Outcome {
    /// The operands do not have the shape the rule expects.
    NotApplicable,
    Failed {
        premise: String,
        kind: PremiseKind,
        premises: Vec<PremiseResult>,
    },
    Derived(Derivation),
}

struct Msg<'a> {
    from: &'a IndexTerm,
    to: &'a IndexTerm,
    payload: &'a Datatype,
}

fn as_msg(t: &ProtocolType) -> Option<Msg<'_>> {
    match t {
        ProtocolType::Message { from, to, payload } => Some(Msg { from, to, payload }),
        _ => None,
    }
}

/// Splits a type into head and tail; a lone item has a `skip` tail.
fn split(t: &ProtocolType) -> (&ProtocolType, &ProtocolType) {
    match t {
        ProtocolType::Seq(a, b) => (a, b),
        other => (other, &ProtocolType::Skip),
    }
}

struct Engine<'a> {
    opts: &'a MergeOptions,
    ranks: Vec<i64>,
    k: i64,
    memo: HashMap<(TypingContext, ProtocolType, ProtocolType), Option<Derivation>>,
    deepest: Option<FailedGoal>,
}

/// Builder for the premises of one rule application.
struct Premises<'e, 'a> {
    engine: &'e Engine<'a>,
    ctx: &'e TypingContext,
    results: Vec<PremiseResult>,
    location: &'e [String],
}

enum Check {
    Holds,
    Fails(String, PremiseKind),
}

impl<'e, 'a> Premises<'e, 'a> {
    fn prop(&mut self, premise: &str, p: Prop, kind: PremiseKind) -> Result<Check, Abort> {
        let verdict = self.engine.opts.logic.entails(self.ctx, &p);
        self.results.push(PremiseResult {
            premise: premise.to_string(),
            instance: p.to_string(),
            verdict,
        });
        match verdict {
            Verdict::Valid => Ok(Check::Holds),
            Verdict::Invalid => Ok(Check::Fails(premise.to_string(), kind)),
            Verdict::Undecidable => Err(self.undecidable(format!(
                "cannot decide premise `{premise}` instantiated as `{p}` under {}",
                self.ctx
            ))),
        }
    }

    fn dtypes(&mut self, d1: &Datatype, d2: &Datatype) -> Result<Check, Abort> {
        let premise = "D1 == D2";
        match self.engine.opts.logic.dtype_equiv(self.ctx, d1, d2) {
            Ok(eq) => {
                self.results.push(PremiseResult {
                    premise: premise.into(),
                    instance: format!("{d1} == {d2}"),
                    verdict: if eq { Verdict::Valid } else { Verdict::Invalid },
                });
                Ok(if eq {
                    Check::Holds
                } else {
                    Check::Fails(premise.into(), PremiseKind::Datatype)
                })
            }
            Err(e) => Err(self.undecidable(e.to_string())),
        }
    }

    fn undecidable(&self, message: String) -> Abort {
        Box::new(MergeFailure {
            diagnostic: Diagnostic {
                kind: DiagnosticKind::EntailmentUndecidable,
                message,
                location: self.location.to_vec(),
                rule_trace: vec![RuleAttempt {
                    rule: "entailment".into(),
                    failing_premise: "undecidable".into(),
                }],
            },
            trace: MergeTrace::default(),
        })
    }

    fn fail(self, check: Check) -> Outcome {
        match check {
            Check::Fails(premise, kind) => Outcome::Failed {
                premise,
                kind,
                premises: self.results,
            },
            Check::Holds => unreachable!("only failing checks end a rule"),
        }
    }
}

macro_rules! require {
    ($prem:ident, $check:expr) => {
        match $check? {
            Check::Holds => {}
            failed => return Ok($prem.fail(failed)),
        }
    };
}

impl<'a> Engine<'a> {
    fn in_ranks(&self, i: &IndexTerm) -> Prop {
        Prop::any(
            self.ranks
                .iter()
                .map(|r| Prop::cmp(CmpOp::Eq, i.clone(), IndexTerm::Int(*r))),
        )
    }

    fn not_in_ranks(&self, i: &IndexTerm) -> Prop {
        Prop::all(
            self.ranks
                .iter()
                .map(|r| Prop::cmp(CmpOp::Ne, i.clone(), IndexTerm::Int(*r))),
        )
    }

    fn is_k(&self, i: &IndexTerm) -> Prop {
        Prop::cmp(CmpOp::Eq, i.clone(), IndexTerm::Int(self.k))
    }

    fn not_k(&self, i: &IndexTerm) -> Prop {
        Prop::cmp(CmpOp::Ne, i.clone(), IndexTerm::Int(self.k))
    }

    fn left_active(&self, m: &Msg) -> Prop {
        Prop::or(self.in_ranks(m.from), self.in_ranks(m.to))
    }

    fn right_active(&self, m: &Msg) -> Prop {
        Prop::or(self.is_k(m.from), self.is_k(m.to))
    }

    /// Solves one goal with the full rule catalogue.
    fn goal(
        &mut self,
        ctx: &TypingContext,
        left: &ProtocolType,
        right: &ProtocolType,
        depth: usize,
        location: &[String],
    ) -> Result<Option<Derivation>, Abort> {
        let left = normalize_seq(left);
        let right = normalize_seq(right);
        let key = (ctx.clone(), left.clone(), right.clone());
        if let Some(done) = self.memo.get(&key) {
            return Ok(done.clone());
        }
        let mut attempts = Vec::new();
        let mut found = None;
        for rule in Rule::ALL {
            match self.apply(rule, ctx, &left, &right, depth, location)? {
                Outcome::NotApplicable => {}
                Outcome::Derived(d) => {
                    found = Some(d);
                    break;
                }
                Outcome::Failed {
                    premise,
                    kind,
                    premises,
                } => attempts.push((
                    RuleAttempt {
                        rule: rule.name().into(),
                        failing_premise: premise,
                    },
                    TraceStep {
                        rule: rule.name().into(),
                        depth,
                        left: print_protocol_inline(&left),
                        right: print_protocol_inline(&right),
                        premises,
                    },
                    kind,
                )),
            }
        }
        if found.is_none() {
            if attempts.is_empty() {
                attempts.push((
                    RuleAttempt {
                        rule: "none".into(),
                        failing_premise: format!(
                            "no rule merges a {} with a {}",
                            shape_name(&left),
                            shape_name(&right)
                        ),
                    },
                    TraceStep {
                        rule: "none".into(),
                        depth,
                        left: print_protocol_inline(&left),
                        right: print_protocol_inline(&right),
                        premises: Vec::new(),
                    },
                    PremiseKind::Shape,
                ));
            }
            if self.deepest.as_ref().is_none_or(|d| depth > d.depth) {
                self.deepest = Some(FailedGoal {
                    depth,
                    location: location.to_vec(),
                    left: left.clone(),
                    right: right.clone(),
                    attempts,
                });
            }
        }
        self.memo.insert(key, found.clone());
        Ok(found)
    }

    fn sub(
        &mut self,
        ctx: &TypingContext,
        left: &ProtocolType,
        right: &ProtocolType,
        depth: usize,
        location: &[String],
        part: String,
    ) -> Result<Option<Derivation>, Abort> {
        let mut loc = location.to_vec();
        loc.push(part);
        self.goal(ctx, left, right, depth + 1, &loc)
    }

    fn apply(
        &mut self,
        rule: Rule,
        ctx: &TypingContext,
        left: &ProtocolType,
        right: &ProtocolType,
        depth: usize,
        location: &[String],
    ) -> Result<Outcome, Abort> {
        use ProtocolType as P;
        let mut prem = Premises {
            engine: self,
            ctx,
            results: Vec::new(),
            location,
        };
        let step = |premises: Vec<PremiseResult>| TraceStep {
            rule: rule.name().into(),
            depth,
            left: print_protocol_inline(left),
            right: print_protocol_inline(right),
            premises,
        };
        let done = |premises, result: ProtocolType, children: Vec<&Derivation>| {
            let mut steps = vec![step(premises)];
            for child in children {
                steps.extend(child.nested(1));
            }
            Ok(Outcome::Derived(Derivation {
                result: normalize_seq(&result),
                steps,
            }))
        };
        let ranks = PremiseKind::Ranks;
        match rule {
            Rule::SkipSkip => {
                if !(matches!(left, P::Skip) && matches!(right, P::Skip)) {
                    return Ok(Outcome::NotApplicable);
                }
                done(prem.results, P::Skip, vec![])
            }
            Rule::SkipMsgS | Rule::SkipMsg => {
                let (P::Skip, Some(m)) = (left, as_msg(right)) else {
                    return Ok(Outcome::NotApplicable);
                };
                let e = prem.engine;
                if rule == Rule::SkipMsgS {
                    require!(prem, prem.prop("i3 != k", e.not_k(m.from), ranks));
                    require!(prem, prem.prop("i4 != k", e.not_k(m.to), ranks));
                    done(prem.results, P::Skip, vec![])
                } else {
                    require!(prem, prem.prop("i3 != rank", e.not_in_ranks(m.from), ranks));
                    require!(prem, prem.prop("i4 != rank", e.not_in_ranks(m.to), ranks));
                    require!(
                        prem,
                        prem.prop("i3 = k or i4 = k", e.right_active(&m), ranks)
                    );
                    done(prem.results, right.clone(), vec![])
                }
            }
            Rule::MsgSSkip | Rule::MsgSkip => {
                let (Some(m), P::Skip) = (as_msg(left), right) else {
                    return Ok(Outcome::NotApplicable);
                };
                let e = prem.engine;
                if rule == Rule::MsgSSkip {
                    require!(prem, prem.prop("i1 != rank", e.not_in_ranks(m.from), ranks));
                    require!(prem, prem.prop("i2 != rank", e.not_in_ranks(m.to), ranks));
                    done(prem.results, P::Skip, vec![])
                } else {
                    require!(
                        prem,
                        prem.prop("i1 = rank or i2 = rank", e.left_active(&m), ranks)
                    );
                    require!(prem, prem.prop("i1 != k", e.not_k(m.from), ranks));
                    require!(prem, prem.prop("i2 != k", e.not_k(m.to), ranks));
                    done(prem.results, left.clone(), vec![])
                }
            }
            Rule::MsgSMsgS
            | Rule::MsgMsgS
            | Rule::MsgSMsg
            | Rule::MsgMsgEq
            | Rule::MsgMsgRight
            | Rule::MsgMsgLeft => {
                let (Some(m1), Some(m2)) = (as_msg(left), as_msg(right)) else {
                    return Ok(Outcome::NotApplicable);
                };
                let e = prem.engine;
                match rule {
                    Rule::MsgSMsgS => {
                        require!(
                            prem,
                            prem.prop("i1 != rank", e.not_in_ranks(m1.from), ranks)
                        );
                        require!(prem, prem.prop("i2 != rank", e.not_in_ranks(m1.to), ranks));
                        require!(prem, prem.prop("i3 != k", e.not_k(m2.from), ranks));
                        require!(prem, prem.prop("i4 != k", e.not_k(m2.to), ranks));
                        done(prem.results, P::Skip, vec![])
                    }
                    Rule::MsgMsgS => {
                        require!(
                            prem,
                            prem.prop("i1 = rank or i2 = rank", e.left_active(&m1), ranks)
                        );
                        require!(prem, prem.prop("i1 != k", e.not_k(m1.from), ranks));
                        require!(prem, prem.prop("i2 != k", e.not_k(m1.to), ranks));
                        require!(prem, prem.prop("i3 != k", e.not_k(m2.from), ranks));
                        require!(prem, prem.prop("i4 != k", e.not_k(m2.to), ranks));
                        done(prem.results, left.clone(), vec![])
                    }
                    Rule::MsgSMsg => {
                        require!(
                            prem,
                            prem.prop("i1 != rank", e.not_in_ranks(m1.from), ranks)
                        );
                        require!(prem, prem.prop("i2 != rank", e.not_in_ranks(m1.to), ranks));
                        require!(
                            prem,
                            prem.prop("i3 != rank", e.not_in_ranks(m2.from), ranks)
                        );
                        require!(prem, prem.prop("i4 != rank", e.not_in_ranks(m2.to), ranks));
                        require!(
                            prem,
                            prem.prop("i3 = k or i4 = k", e.right_active(&m2), ranks)
                        );
                        done(prem.results, right.clone(), vec![])
                    }
                    Rule::MsgMsgEq => {
                        require!(
                            prem,
                            prem.prop("i1 = rank or i2 = rank", e.left_active(&m1), ranks)
                        );
                        require!(
                            prem,
                            prem.prop("i3 = k or i4 = k", e.right_active(&m2), ranks)
                        );
                        let same_from = Prop::cmp(CmpOp::Eq, m1.from.clone(), m2.from.clone());
                        let same_to = Prop::cmp(CmpOp::Eq, m1.to.clone(), m2.to.clone());
                        require!(prem, prem.prop("i1 = i3", same_from, ranks));
                        require!(prem, prem.prop("i2 = i4", same_to, ranks));
                        require!(prem, prem.dtypes(m1.payload, m2.payload));
                        done(prem.results, left.clone(), vec![])
                    }
                    _ => {
                        // Two unrelated communications, interleaved.
                        require!(
                            prem,
                            prem.prop("i1 = rank or i2 = rank", e.left_active(&m1), ranks)
                        );
                        require!(
                            prem,
                            prem.prop("i3 = k or i4 = k", e.right_active(&m2), ranks)
                        );
                        require!(prem, prem.prop("i1 != k", e.not_k(m1.from), ranks));
                        require!(prem, prem.prop("i2 != k", e.not_k(m1.to), ranks));
                        require!(
                            prem,
                            prem.prop("i3 != rank", e.not_in_ranks(m2.from), ranks)
                        );
                        require!(prem, prem.prop("i4 != rank", e.not_in_ranks(m2.to), ranks));
                        let result = if rule == Rule::MsgMsgRight {
                            P::seq(right.clone(), left.clone())
                        } else {
                            P::seq(left.clone(), right.clone())
                        };
                        done(prem.results, result, vec![])
                    }
                }
            }
            Rule::AllredAllred => {
                let (
                    P::Allreduce {
                        op: op1,
                        binder: x1,
                        payload: d1,
                        cont: t1,
                    },
                    P::Allreduce {
                        op: op2,
                        binder: x2,
                        payload: d2,
                        cont: t2,
                    },
                ) = (left, right)
                else {
                    return Ok(Outcome::NotApplicable);
                };
                prem.results.push(PremiseResult {
                    premise: "op1 = op2".into(),
                    instance: format!("{} = {}", op1.keyword(), op2.keyword()),
                    verdict: if op1 == op2 {
                        Verdict::Valid
                    } else {
                        Verdict::Invalid
                    },
                });
                if op1 != op2 {
                    return Ok(prem.fail(Check::Fails("op1 = op2".into(), PremiseKind::Datatype)));
                }
                require!(prem, prem.dtypes(d1, d2));
                let results = prem.results;
                // Bring both continuations under one binder that is fresh
                // for the context.
                let mut avoid = ctx.names();
                avoid.extend(t1.free_vars());
                avoid.extend(t2.free_vars());
                let name = if ctx.contains(x1) || x1 == ANON_BINDER {
                    crate::ast::fresh_name(if x1 == ANON_BINDER { "r" } else { x1 }, &avoid)
                } else {
                    x1.clone()
                };
                let var = IndexTerm::Var(name.clone());
                let c1 = if *x1 == name {
                    (**t1).clone()
                } else {
                    t1.subst(x1, &var)
                };
                let c2 = t2.subst(x2, &var);
                let inner = ctx.with(&name, d1.clone()).expect("binder is fresh");
                let sub = self.sub(&inner, &c1, &c2, depth, location, format!("{rule}.cont"))?;
                let Some(sub) = sub else {
                    return Ok(Outcome::Failed {
                        premise: "continuations merge".into(),
                        kind: PremiseKind::SubMerge,
                        premises: results,
                    });
                };
                // Keep the binder-less form when nothing refers to the binder.
                let (binder, cont) = if x1 == ANON_BINDER && !sub.result.free_vars().contains(&name)
                {
                    (ANON_BINDER.to_string(), sub.result.clone())
                } else {
                    (name, sub.result.clone())
                };
                let result = P::Allreduce {
                    op: *op1,
                    binder,
                    payload: d1.clone(),
                    cont: Box::new(cont),
                };
                done(results, result, vec![&sub])
            }
            Rule::ForeachForeach => {
                let (
                    P::Foreach {
                        binder: x1,
                        lo: lo1,
                        hi: hi1,
                        body: t1,
                    },
                    P::Foreach {
                        binder: x2,
                        lo: lo2,
                        hi: hi2,
                        body: t2,
                    },
                ) = (left, right)
                else {
                    return Ok(Outcome::NotApplicable);
                };
                let bounds = PremiseKind::Bounds;
                require!(
                    prem,
                    prem.prop(
                        "i1 = i2",
                        Prop::cmp(CmpOp::Eq, lo1.clone(), lo2.clone()),
                        bounds
                    )
                );
                require!(
                    prem,
                    prem.prop(
                        "i1' = i2'",
                        Prop::cmp(CmpOp::Eq, hi1.clone(), hi2.clone()),
                        bounds
                    )
                );
                let results = prem.results;
                let mut avoid = ctx.names();
                avoid.extend(t1.free_vars());
                avoid.extend(t2.free_vars());
                let name = if ctx.contains(x1) {
                    crate::ast::fresh_name(x1, &avoid)
                } else {
                    x1.clone()
                };
                let var = IndexTerm::Var(name.clone());
                let b1 = if *x1 == name {
                    (**t1).clone()
                } else {
                    t1.subst(x1, &var)
                };
                let b2 = t2.subst(x2, &var);
                let mut bound_vars = lo1.free_vars();
                bound_vars.extend(hi1.free_vars());
                bound_vars.insert(name.clone());
                let y = if bound_vars.contains("y") {
                    crate::ast::fresh_name("y", &bound_vars)
                } else {
                    "y".to_string()
                };
                let yv = IndexTerm::Var(y.clone());
                let range = Datatype::refined(
                    &y,
                    BaseType::Integer,
                    Prop::and(
                        Prop::cmp(CmpOp::Le, lo1.clone(), yv.clone()),
                        Prop::cmp(CmpOp::Le, yv, hi1.clone()),
                    ),
                );
                let inner = ctx.with(&name, range).expect("binder is fresh");
                let sub = self.sub(
                    &inner,
                    &b1,
                    &b2,
                    depth,
                    location,
                    format!("{rule}.body({name})"),
                )?;
                let Some(sub) = sub else {
                    return Ok(Outcome::Failed {
                        premise: "bodies merge".into(),
                        kind: PremiseKind::SubMerge,
                        premises: results,
                    });
                };
                let result = P::foreach(&name, lo1.clone(), hi1.clone(), sub.result.clone());
                done(results, result, vec![&sub])
            }
            Rule::SeqSeq => {
                let is_seq = |t: &P| matches!(t, P::Seq(..));
                if !(is_seq(left) || is_seq(right))
                    || matches!(left, P::Skip)
                    || matches!(right, P::Skip)
                {
                    return Ok(Outcome::NotApplicable);
                }
                let (t1, t2) = split(left);
                let (t3, t4) = split(right);
                self.sequence(rule, ctx, (t1, t3), (t2, t4), depth, location, step, P::seq)
            }
            Rule::SkipMsgT | Rule::MsgTSkipT => {
                let (skip_left, seq) = match (left, right) {
                    (P::Skip, P::Seq(..)) if rule == Rule::SkipMsgT => (true, right),
                    (P::Seq(..), P::Skip) if rule == Rule::MsgTSkipT => (false, left),
                    _ => return Ok(Outcome::NotApplicable),
                };
                let (m, rest) = split(seq);
                if as_msg(m).is_none() {
                    return Ok(Outcome::NotApplicable);
                }
                let skip = &P::Skip;
                let (first, second) = if skip_left {
                    ((skip, m), (skip, rest))
                } else {
                    ((m, skip), (rest, skip))
                };
                self.sequence(rule, ctx, first, second, depth, location, step, |a, b| {
                    P::seq(a, b)
                })
            }
            Rule::MsgTMsgTRight | Rule::MsgTMsgTLeft => {
                if !(matches!(left, P::Seq(..)) || matches!(right, P::Seq(..))) {
                    return Ok(Outcome::NotApplicable);
                }
                let (h1, t1) = split(left);
                let (h2, t2) = split(right);
                let (Some(m1), Some(m2)) = (as_msg(h1), as_msg(h2)) else {
                    return Ok(Outcome::NotApplicable);
                };
                let e = prem.engine;
                require!(
                    prem,
                    prem.prop("i1 = rank or i2 = rank", e.left_active(&m1), ranks)
                );
                require!(
                    prem,
                    prem.prop("i3 = k or i4 = k", e.right_active(&m2), ranks)
                );
                let (head, l, r) = if rule == Rule::MsgTMsgTLeft {
                    require!(prem, prem.prop("i1 != k", e.not_k(m1.from), ranks));
                    require!(prem, prem.prop("i2 != k", e.not_k(m1.to), ranks));
                    (h1, t1, right)
                } else {
                    require!(
                        prem,
                        prem.prop("i3 != rank", e.not_in_ranks(m2.from), ranks)
                    );
                    require!(prem, prem.prop("i4 != rank", e.not_in_ranks(m2.to), ranks));
                    (h2, left, t2)
                };
                let results = prem.results;
                let sub = self.sub(ctx, l, r, depth, location, format!("{rule}.tail"))?;
                let Some(sub) = sub else {
                    return Ok(Outcome::Failed {
                        premise: "remainder merges".into(),
                        kind: PremiseKind::SubMerge,
                        premises: results,
                    });
                };
                let result = P::seq(head.clone(), sub.result.clone());
                done(results, result, vec![&sub])
            }
        }
    }

    /// Shared shape of the rules with two independent sub-merges whose
    /// results are sequenced.
    #[allow(clippy::too_many_arguments)]
    fn sequence(
        &mut self,
        rule: Rule,
        ctx: &TypingContext,
        first: (&ProtocolType, &ProtocolType),
        second: (&ProtocolType, &ProtocolType),
        depth: usize,
        location: &[String],
        step: impl Fn(Vec<PremiseResult>) -> TraceStep,
        join: impl Fn(ProtocolType, ProtocolType) -> ProtocolType,
    ) -> Result<Outcome, Abort> {
        let a = self.sub(
            ctx,
            first.0,
            first.1,
            depth,
            location,
            format!("{rule}.first"),
        )?;
        let Some(a) = a else {
            return Ok(Outcome::Failed {
                premise: "first components merge".into(),
                kind: PremiseKind::SubMerge,
                premises: Vec::new(),
            });
        };
        let b = self.sub(
            ctx,
            second.0,
            second.1,
            depth,
            location,
            format!("{rule}.second"),
        )?;
        let Some(b) = b else {
            return Ok(Outcome::Failed {
                premise: "second components merge".into(),
                kind: PremiseKind::SubMerge,
                premises: Vec::new(),
            });
        };
        let mut steps = vec![step(Vec::new())];
        steps.extend(a.nested(1));
        steps.extend(b.nested(1));
        Ok(Outcome::Derived(Derivation {
            result: normalize_seq(&join(a.result.clone(), b.result.clone())),
            steps,
        }))
    }

    fn failure(&self, root_left: &ProtocolType, root_right: &ProtocolType) -> MergeFailure {
        let trace_base = MergeTrace {
            merged: self.ranks.clone(),
            k: self.k,
            unfolded: None,
            steps: Vec::new(),
        };
        let Some(goal) = &self.deepest else {
            return MergeFailure {
                diagnostic: Diagnostic {
                    kind: DiagnosticKind::DeadlockSuspected,
                    message: format!(
                        "cannot merge `{}` with `{}`",
                        print_protocol_inline(root_left),
                        print_protocol_inline(root_right)
                    ),
                    location: Vec::new(),
                    rule_trace: vec![RuleAttempt {
                        rule: "none".into(),
                        failing_premise: "no derivation".into(),
                    }],
                },
                trace: trace_base,
            };
        };
        let kinds: BTreeSet<_> = goal.attempts.iter().map(|(_, _, k)| *k as u8).collect();
        let kind = if kinds.contains(&(PremiseKind::Datatype as u8)) {
            DiagnosticKind::DatatypeMismatch
        } else if kinds.contains(&(PremiseKind::Bounds as u8)) {
            DiagnosticKind::EntailmentFailed
        } else {
            DiagnosticKind::DeadlockSuspected
        };
        let what = match kind {
            DiagnosticKind::DatatypeMismatch => "payloads or operators disagree",
            DiagnosticKind::EntailmentFailed => "loop bounds differ",
            _ => "no rule orders these communications consistently",
        };
        let message = format!(
            "cannot merge `{}` with `{}` at rank {}: {what}",
            print_protocol_inline(&goal.left),
            print_protocol_inline(&goal.right),
            self.k
        );
        MergeFailure {
            diagnostic: Diagnostic {
                kind,
                message,
                location: goal.location.clone(),
                rule_trace: goal.attempts.iter().map(|(a, _, _)| a.clone()).collect(),
            },
            trace: MergeTrace {
                steps: goal.attempts.iter().map(|(_, s, _)| s.clone()).collect(),
                ..trace_base
            },
        }
    }
}

fn shape_name(t: &ProtocolType) -> &'static str {
    match t {
        ProtocolType::Skip => "skip",
        ProtocolType::Message { .. } => "message",
        ProtocolType::Allreduce { .. } => "allreduce",
        ProtocolType::Foreach { .. } => "foreach",
        ProtocolType::Seq(..) => "sequence",
    }
}

fn engine<'a>(
    opts: &'a MergeOptions,
    ctx: &TypingContext,
    k: i64,
) -> Result<Engine<'a>, MergeError> {
    let ranks = match opts.logic.domain_of(ctx, "rank") {
        Ok(Domain::FiniteSet(v)) => v,
        Ok(Domain::Interval(a, b)) if b - a < 4096 => (a..=b).collect(),
        Ok(other) => {
            return Err(MergeError::InvalidInput(format!(
                "the merged ranks must be a finite set, found {other:?}"
            )))
        }
        Err(e) => return Err(e.into()),
    };
    if ranks.contains(&k) {
        return Err(MergeError::InvalidInput(format!(
            "rank {k} has already been merged"
        )));
    }
    Ok(Engine {
        opts,
        ranks,
        k,
        memo: HashMap::new(),
        deepest: None,
    })
}

pub fn merge_types(
    ctx: &TypingContext,
    left: &ProtocolType,
    right: &ProtocolType,
    k: i64,
) -> Result<(ProtocolType, MergeTrace), MergeError> {
    merge_types_with(&MergeOptions::default(), ctx, left, right, k)
}

pub fn merge_types_with(
    opts: &MergeOptions,
    ctx: &TypingContext,
    left: &ProtocolType,
    right: &ProtocolType,
    k: i64,
) -> Result<(ProtocolType, MergeTrace), MergeError> {
    for t in [left, right] {
        if t.has_holes() {
            return Err(MergeError::InvalidInput(format!(
                "`{}` contains unsolved datatype holes",
                print_protocol_inline(t)
            )));
        }
    }
    let mut e = engine(opts, ctx, k)?;
    match e.goal(ctx, left, right, 0, &[]) {
        Err(abort) => Err(MergeError::Failure(abort)),
        Ok(Some(d)) => Ok((
            d.result,
            MergeTrace {
                merged: e.ranks.clone(),
                k,
                unfolded: None,
                steps: d.steps,
            },
        )),
        Ok(None) => Err(MergeError::Failure(Box::new(e.failure(left, right)))),
    }
}

/// Applies a single rule at the root of the goal; sub-goals use the whole
/// catalogue. `Ok(None)` means the rule does not apply.
pub fn try_rule(
    ctx: &TypingContext,
    rule: Rule,
    left: &ProtocolType,
    right: &ProtocolType,
    k: i64,
) -> Result<Option<(ProtocolType, MergeTrace)>, MergeError> {
    let opts = MergeOptions::default();
    let mut e = engine(&opts, ctx, k)?;
    let left = normalize_seq(left);
    let right = normalize_seq(right);
    match e.apply(rule, ctx, &left, &right, 0, &[]) {
        Err(abort) => Err(MergeError::Failure(abort)),
        Ok(Outcome::Derived(d)) => Ok(Some((
            d.result,
            MergeTrace {
                merged: e.ranks.clone(),
                k,
                unfolded: None,
                steps: d.steps,
            },
        ))),
        Ok(_) => Ok(None),
    }
}

fn head(t: &ProtocolType) -> &ProtocolType {
    split(t).0
}

/// Replaces a leading constant-bound foreach by its unfolding.
fn unfold_head(opts: &MergeOptions, ctx: &TypingContext, t: &ProtocolType) -> Option<ProtocolType> {
    let (h, rest) = split(t);
    let ProtocolType::Foreach { lo, hi, .. } = h else {
        return None;
    };
    constant_bounds(&opts.logic, ctx, lo, hi)?;
    let unfolded = unfold_foreach_with(opts, ctx, h).ok()?;
    Some(normalize_seq(&ProtocolType::seq(unfolded, rest.clone())))
}

/// Merges the local types of ranks `0..n` in `order` (default ascending).
pub fn merge_all(
    n: i64,
    local_types: &[(i64, ProtocolType)],
    order: Option<&[i64]>,
) -> Result<(ProtocolType, Vec<MergeTrace>), MergeError> {
    merge_all_with(&MergeOptions::default(), n, local_types, order)
}

pub fn merge_all_with(
    opts: &MergeOptions,
    n: i64,
    local_types: &[(i64, ProtocolType)],
    order: Option<&[i64]>,
) -> Result<(ProtocolType, Vec<MergeTrace>), MergeError> {
    let mut by_rank = std::collections::BTreeMap::new();
    for (r, t) in local_types {
        if !(0..n).contains(r) {
            return Err(MergeError::InvalidInput(format!(
                "rank {r} is outside 0..{}",
                n - 1
            )));
        }
        if by_rank.insert(*r, t).is_some() {
            return Err(MergeError::InvalidInput(format!(
                "rank {r} has two local types"
            )));
        }
    }
    if by_rank.len() as i64 != n {
        return Err(MergeError::InvalidInput(format!(
            "expected {n} local types, got {}",
            by_rank.len()
        )));
    }
    let default: Vec<i64> = (0..n).collect();
    let order = order.unwrap_or(&default);
    let mut sorted = order.to_vec();
    sorted.sort_unstable();
    if sorted != default {
        return Err(MergeError::InvalidInput(format!(
            "merge order {order:?} is not a permutation of 0..{}",
            n - 1
        )));
    }
    let mut acc = normalize_seq(by_rank[&order[0]]);
    let mut merged = BTreeSet::from([order[0]]);
    let mut traces = Vec::new();
    for &k in &order[1..] {
        let ctx = merged_context(n, &merged)?;
        let right = normalize_seq(by_rank[&k]);
        let (result, trace) = match merge_types_with(opts, &ctx, &acc, &right, k) {
            Ok(ok) => ok,
            Err(MergeError::Failure(f))
                if f.diagnostic.kind != DiagnosticKind::EntailmentUndecidable =>
            {
                let left_loop = matches!(head(&acc), ProtocolType::Foreach { .. });
                let right_loop = matches!(head(&right), ProtocolType::Foreach { .. });
                let retry = match (left_loop, right_loop) {
                    (true, false) => {
                        unfold_head(opts, &ctx, &acc).map(|l| ("left", l, right.clone()))
                    }
                    (false, true) => {
                        unfold_head(opts, &ctx, &right).map(|r| ("right", acc.clone(), r))
                    }
                    _ => None,
                };
                let Some((side, l, r)) = retry else {
                    return Err(MergeError::Failure(f));
                };
                match merge_types_with(opts, &ctx, &l, &r, k) {
                    Ok((result, mut trace)) => {
                        trace.unfolded = Some(side.to_string());
                        (result, trace)
                    }
                    Err(MergeError::Failure(f2))
                        if f2.diagnostic.kind == DiagnosticKind::EntailmentUndecidable =>
                    {
                        return Err(MergeError::Failure(f2))
                    }
                    Err(_) => return Err(MergeError::Failure(f)),
                }
            }
            Err(e) => return Err(e),
        };
        acc = result;
        merged.insert(k);
        traces.push(trace);
    }
    Ok((acc, traces))
}
