//! Synchronous execution of local types.
//!
//! Each rank runs its action list in order. A send and the matching receive
//! fire together; a collective fires when every rank has it at the head of
//! its list. [`simulate`] explores every schedule, so a `Deadlocked` verdict
//! means no interleaving completes.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::ast::{
    eval_index, Assignment, Datatype, IndexTerm, ProtocolType, ReduceOp, TypingContext,
};
use crate::logic::{initial_context, Domain, Logic, LogicError};

pub const DEFAULT_STATE_CAP: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub enum RankAction {
    SendTo { peer: i64, payload: Datatype },
    RecvFrom { peer: i64, payload: Datatype },
    Collective { op: ReduceOp, payload: Datatype },
}

impl fmt::Display for RankAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RankAction::SendTo { peer, payload } => write!(f, "send to {peer} {payload}"),
            RankAction::RecvFrom { peer, payload } => write!(f, "recv from {peer} {payload}"),
            RankAction::Collective { op, payload } => {
                write!(f, "allreduce {} {payload}", op.keyword())
            }
        }
    }
}

/// One matched event of a completed run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum Event {
    Message {
        from: i64,
        to: i64,
        payload: Datatype,
    },
    Collective {
        op: ReduceOp,
        payload: Datatype,
    },
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Event::Message { from, to, payload } => write!(f, "{from} -> {to} : {payload}"),
            Event::Collective { op, payload } => write!(f, "allreduce {} {payload}", op.keyword()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum SimOutcome {
    Completed(Vec<Event>),
    /// Pending head action of every rank that did not finish.
    Deadlocked(BTreeMap<i64, RankAction>),
    Mismatch(String),
}

impl SimOutcome {
    pub fn verdict(&self) -> &'static str {
        match self {
            SimOutcome::Completed(_) => "completed",
            SimOutcome::Deadlocked(_) => "deadlocked",
            SimOutcome::Mismatch(_) => "mismatch",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OracleError {
    #[error("foreach bounds `{0}` are not constant")]
    NonConstantBounds(String),
    #[error("index term `{0}` is not closed")]
    OpenIndexTerm(String),
    #[error("rank {rank} names peer {peer}, outside 0..{}", .size - 1)]
    PeerOutOfRange { rank: i64, peer: i64, size: i64 },
    #[error("expected {expected} action lists, got {got}")]
    WrongRankCount { expected: i64, got: usize },
    #[error("explored more than {0} states")]
    StateSpaceExceeded(usize),
    #[error("cannot compare payloads: {0}")]
    Payload(String),
    #[error(transparent)]
    Context(#[from] LogicError),
}

/// Values of the context variables that are fixed to a single integer.
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

fn payload_under(env: &Assignment, d: &Datatype) -> Datatype {
    env.iter()
        .fold(d.clone(), |d, (x, v)| d.subst(x, &IndexTerm::Int(*v)))
}

/// Interprets a local type as the action list of `self_rank`. Loops must
/// have constant bounds; with `unroll = Some(b)` only their first `b`
/// iterations are kept.
pub fn linearize(
    ctx: &TypingContext,
    t: &ProtocolType,
    self_rank: i64,
    unroll: Option<u64>,
) -> Result<Vec<RankAction>, OracleError> {
    let env = fixed_values(&Logic::default(), ctx);
    let mut out = Vec::new();
    walk(&env, t, self_rank, unroll, &mut out)?;
    Ok(out)
}

fn walk(
    env: &Assignment,
    t: &ProtocolType,
    me: i64,
    unroll: Option<u64>,
    out: &mut Vec<RankAction>,
) -> Result<(), OracleError> {
    let value =
        |i: &IndexTerm| eval_index(env, i).map_err(|_| OracleError::OpenIndexTerm(i.to_string()));
    match t {
        ProtocolType::Skip => {}
        ProtocolType::Message { from, to, payload } => {
            let (a, b) = (value(from)?, value(to)?);
            let payload = payload_under(env, payload);
            if a == me {
                out.push(RankAction::SendTo { peer: b, payload });
            } else if b == me {
                out.push(RankAction::RecvFrom { peer: a, payload });
            }
        }
        ProtocolType::Allreduce {
            op,
            binder,
            payload,
            cont,
        } => {
            out.push(RankAction::Collective {
                op: *op,
                payload: payload_under(env, payload),
            });
            let mut inner = env.clone();
            inner.remove(binder);
            walk(&inner, cont, me, unroll, out)?;
        }
        ProtocolType::Foreach {
            binder,
            lo,
            hi,
            body,
        } => {
            let bounds = || OracleError::NonConstantBounds(format!("{lo}..{hi}"));
            let a = eval_index(env, lo).map_err(|_| bounds())?;
            let b = eval_index(env, hi).map_err(|_| bounds())?;
            let mut last = b;
            if let Some(cap) = unroll {
                last = last.min(a.saturating_add(cap as i64).saturating_sub(1));
            }
            let mut inner = env.clone();
            let mut v = a;
            while v <= last {
                inner.insert(binder.clone(), v);
                walk(&inner, body, me, unroll, out)?;
                v += 1;
            }
        }
        ProtocolType::Seq(a, b) => {
            walk(env, a, me, unroll, out)?;
            walk(env, b, me, unroll, out)?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy)]
pub struct SimOptions {
    pub logic: Logic,
    pub state_cap: usize,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            logic: Logic::default(),
            state_cap: DEFAULT_STATE_CAP,
        }
    }
}

pub fn simulate(actions: &[Vec<RankAction>], n: i64) -> Result<SimOutcome, OracleError> {
    simulate_with(&SimOptions::default(), actions, n)
}

struct Payloads<'a> {
    logic: &'a Logic,
    ctx: TypingContext,
    cache: HashMap<(Datatype, Datatype), bool>,
}

impl Payloads<'_> {
    fn equiv(&mut self, a: &Datatype, b: &Datatype) -> Result<bool, OracleError> {
        if a == b {
            return Ok(true);
        }
        let key = (a.clone(), b.clone());
        if let Some(v) = self.cache.get(&key) {
            return Ok(*v);
        }
        let v = self
            .logic
            .dtype_equiv(&self.ctx, a, b)
            .map_err(|e| OracleError::Payload(e.to_string()))?;
        self.cache.insert(key, v);
        Ok(v)
    }
}

enum Step {
    Fire(Vec<usize>, Event),
    Mismatch(String),
}

pub fn simulate_with(
    opts: &SimOptions,
    actions: &[Vec<RankAction>],
    n: i64,
) -> Result<SimOutcome, OracleError> {
    if actions.len() as i64 != n {
        return Err(OracleError::WrongRankCount {
            expected: n,
            got: actions.len(),
        });
    }
    for (rank, list) in actions.iter().enumerate() {
        for a in list {
            if let RankAction::SendTo { peer, .. } | RankAction::RecvFrom { peer, .. } = a {
                if !(0..n).contains(peer) || *peer == rank as i64 {
                    return Err(OracleError::PeerOutOfRange {
                        rank: rank as i64,
                        peer: *peer,
                        size: n,
                    });
                }
            }
        }
    }
    let mut payloads = Payloads {
        logic: &opts.logic,
        ctx: initial_context(n.max(2))?,
        cache: HashMap::new(),
    };
    let start = vec![0usize; actions.len()];
    let mut parent: HashMap<Vec<usize>, Option<(Vec<usize>, Event)>> = HashMap::new();
    parent.insert(start.clone(), None);
    let mut stack = vec![start];
    let mut first_stuck: Option<Vec<usize>> = None;
    let mut seen = HashSet::new();
    while let Some(state) = stack.pop() {
        if !seen.insert(state.clone()) {
            continue;
        }
        if seen.len() > opts.state_cap {
            return Err(OracleError::StateSpaceExceeded(opts.state_cap));
        }
        if state.iter().zip(actions).all(|(p, l)| *p == l.len()) {
            return Ok(SimOutcome::Completed(trace_to(&parent, state)));
        }
        let steps = successors(actions, &state, &mut payloads)?;
        if steps.is_empty() && first_stuck.is_none() {
            first_stuck = Some(state.clone());
        }
        for step in steps {
            match step {
                Step::Mismatch(detail) => return Ok(SimOutcome::Mismatch(detail)),
                Step::Fire(next, event) => {
                    if !parent.contains_key(&next) {
                        parent.insert(next.clone(), Some((state.clone(), event)));
                    }
                    stack.push(next);
                }
            }
        }
    }
    let stuck = first_stuck.expect("a search without completion ends in a stuck state");
    let pending = stuck
        .iter()
        .zip(actions)
        .enumerate()
        .filter(|(_, (p, l))| **p < l.len())
        .map(|(r, (p, l))| (r as i64, l[*p].clone()))
        .collect();
    Ok(SimOutcome::Deadlocked(pending))
}

fn trace_to(
    parent: &HashMap<Vec<usize>, Option<(Vec<usize>, Event)>>,
    mut state: Vec<usize>,
) -> Vec<Event> {
    let mut events = Vec::new();
    while let Some(Some((prev, event))) = parent.get(&state) {
        events.push(event.clone());
        state = prev.clone();
    }
    events.reverse();
    events
}

fn successors(
    actions: &[Vec<RankAction>],
    state: &[usize],
    payloads: &mut Payloads,
) -> Result<Vec<Step>, OracleError> {
    let head = |r: usize| actions[r].get(state[r]);
    let mut steps = Vec::new();
    for a in 0..actions.len() {
        let Some(RankAction::SendTo { peer, payload }) = head(a) else {
            continue;
        };
        let b = *peer as usize;
        let Some(RankAction::RecvFrom {
            peer: src,
            payload: expected,
        }) = head(b)
        else {
            continue;
        };
        if *src as usize != a {
            continue;
        }
        if !payloads.equiv(payload, expected)? {
            steps.push(Step::Mismatch(format!(
                "rank {a} sends {payload} but rank {b} expects {expected}"
            )));
            continue;
        }
        let mut next = state.to_vec();
        next[a] += 1;
        next[b] += 1;
        steps.push(Step::Fire(
            next,
            Event::Message {
                from: a as i64,
                to: b as i64,
                payload: payload.clone(),
            },
        ));
    }
    let heads: Option<Vec<(ReduceOp, &Datatype)>> = (0..actions.len())
        .map(|r| match head(r) {
            Some(RankAction::Collective { op, payload }) => Some((*op, payload)),
            _ => None,
        })
        .collect();
    if let Some(heads) = heads.filter(|h| !h.is_empty()) {
        let (op, payload) = heads[0];
        for (r, (op2, payload2)) in heads.iter().enumerate().skip(1) {
            if *op2 != op || !payloads.equiv(payload, payload2)? {
                steps.push(Step::Mismatch(format!(
                    "rank 0 reaches allreduce {} {payload} but rank {r} reaches allreduce {} {payload2}",
                    op.keyword(),
                    op2.keyword()
                )));
                return Ok(steps);
            }
        }
        let next = state.iter().map(|p| p + 1).collect();
        steps.push(Step::Fire(
            next,
            Event::Collective {
                op,
                payload: payload.clone(),
            },
        ));
    }
    Ok(steps)
}

/// One event per line.
pub fn format_trace(events: &[Event]) -> String {
    events.iter().map(|e| format!("{e}\n")).collect()
}
