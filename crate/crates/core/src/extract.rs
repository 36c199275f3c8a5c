//! Per-rank local types from a process.
//!
//! A program is first specialized to one rank (`rank` and `size` become
//! literals and decidable conditionals are resolved), then mapped onto a
//! protocol type while `where D1 = D2` constraints are collected, and
//! finally the collected datatype equations are solved by unification.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::ast::{
    eval_index, eval_prop, fold_prop, Assignment, Datatype, EquationSystem, EvalError, IndexTerm,
    Process, ProtocolType, Substitution, TypingContext,
};
use crate::logic::{Domain, Logic, LogicError, Verdict};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExtractError {
    #[error("rank {rank} is outside 0..{size}")]
    InvalidRank { rank: i64, size: i64 },
    #[error("while specializing `{at}`: {source}")]
    Eval { at: String, source: EvalError },
    #[error("conditional on `{0}` cannot be resolved for this rank")]
    ResidualConditional(String),
    #[error("rank {rank} addresses rank {peer}, which is outside 0..{size}")]
    EndpointOutOfRange { rank: i64, peer: i64, size: i64 },
    #[error("rank {0} sends a message to itself")]
    SelfMessage(i64),
    #[error("unsolvable datatype equations: {0}")]
    UnsolvableEquations(String),
    #[error(transparent)]
    Undecidable(#[from] LogicError),
}

/// Replaces `rank` and `size` by literals and resolves what that decides.
pub fn specialize(p: &Process, rank: i64, size: i64) -> Result<Process, ExtractError> {
    if !(0..size).contains(&rank) {
        return Err(ExtractError::InvalidRank { rank, size });
    }
    let p = p
        .subst("rank", &IndexTerm::Int(rank))
        .subst("size", &IndexTerm::Int(size));
    partial_eval(&p)
}

fn fold_at(t: &IndexTerm, at: &Process) -> Result<IndexTerm, ExtractError> {
    t.fold().map_err(|source| ExtractError::Eval {
        at: at.to_string(),
        source,
    })
}

fn partial_eval(p: &Process) -> Result<Process, ExtractError> {
    Ok(match p {
        Process::Skip | Process::Allreduce { .. } | Process::Constraint { .. } => p.clone(),
        Process::Send { to, payload } => Process::Send {
            to: fold_at(to, p)?,
            payload: payload.clone(),
        },
        Process::Recv { from, payload } => Process::Recv {
            from: fold_at(from, p)?,
            payload: payload.clone(),
        },
        Process::For {
            binder,
            lo,
            hi,
            body,
        } => {
            let lo = fold_at(lo, p)?;
            let hi = fold_at(hi, p)?;
            if let (IndexTerm::Int(a), IndexTerm::Int(b)) = (&lo, &hi) {
                if b < a {
                    return Ok(Process::Skip);
                }
            }
            Process::For {
                binder: binder.clone(),
                lo,
                hi,
                body: Box::new(partial_eval(body)?),
            }
        }
        Process::If { test, then, els } => {
            let err = |source| ExtractError::Eval {
                at: test.to_string(),
                source,
            };
            let test = fold_prop(test).map_err(err)?;
            if test.is_closed() {
                let taken = if eval_prop(&Assignment::new(), &test).map_err(err)? {
                    then
                } else {
                    els
                };
                return partial_eval(taken);
            }
            Process::If {
                test,
                then: Box::new(partial_eval(then)?),
                els: Box::new(partial_eval(els)?),
            }
        }
        Process::Seq(a, b) => Process::seq(partial_eval(a)?, partial_eval(b)?),
    })
}

fn flatten<'a>(p: &'a Process, out: &mut Vec<&'a Process>) {
    match p {
        Process::Seq(a, b) => {
            flatten(a, out);
            flatten(b, out);
        }
        other => out.push(other),
    }
}

/// The size recorded in `ctx`, when it is a single known value.
fn known_size(ctx: &TypingContext) -> Option<i64> {
    match Logic::default().domain_of(ctx, "size") {
        Ok(Domain::FiniteSet(v)) if v.len() == 1 => Some(v[0]),
        _ => None,
    }
}

/// Maps a rank-free process onto a protocol type seen from `self_rank`,
/// collecting the datatype equations its `where` constraints impose.
pub fn collect(
    ctx: &TypingContext,
    p: &Process,
    self_rank: i64,
) -> Result<(EquationSystem, ProtocolType), ExtractError> {
    let mut eqs = EquationSystem::default();
    let size = known_size(ctx);
    let t = collect_into(p, self_rank, size, &mut eqs)?;
    Ok((eqs, t))
}

fn check_peer(peer: &IndexTerm, rank: i64, size: Option<i64>) -> Result<(), ExtractError> {
    let IndexTerm::Int(peer) = *peer else {
        return Ok(());
    };
    if peer == rank {
        return Err(ExtractError::SelfMessage(rank));
    }
    if let Some(size) = size {
        if !(0..size).contains(&peer) {
            return Err(ExtractError::EndpointOutOfRange { rank, peer, size });
        }
    }
    Ok(())
}

fn collect_into(
    p: &Process,
    me: i64,
    size: Option<i64>,
    eqs: &mut EquationSystem,
) -> Result<ProtocolType, ExtractError> {
    let me_term = IndexTerm::Int(me);
    Ok(match p {
        Process::Skip => ProtocolType::Skip,
        Process::Send { to, payload } => {
            check_peer(to, me, size)?;
            ProtocolType::message(me_term, to.clone(), payload.clone())
        }
        Process::Recv { from, payload } => {
            check_peer(from, me, size)?;
            ProtocolType::message(from.clone(), me_term, payload.clone())
        }
        Process::Allreduce { op, payload } => ProtocolType::allreduce(*op, payload.clone()),
        Process::For {
            binder,
            lo,
            hi,
            body,
        } => ProtocolType::foreach(
            binder,
            lo.clone(),
            hi.clone(),
            collect_into(body, me, size, eqs)?,
        ),
        Process::If { test, .. } => {
            return Err(ExtractError::ResidualConditional(test.to_string()))
        }
        Process::Constraint { lhs, rhs } => {
            eqs.0.push((lhs.clone(), rhs.clone()));
            ProtocolType::Skip
        }
        Process::Seq(..) => {
            let mut items = Vec::new();
            flatten(p, &mut items);
            let mut types = Vec::new();
            for item in items {
                let t = collect_into(item, me, size, eqs)?;
                // Constraints only contribute equations.
                if !matches!(item, Process::Constraint { .. }) {
                    types.push(t);
                }
            }
            ProtocolType::seq_of(types)
        }
    })
}

/// Solves datatype equations by first-order unification; pairs without
/// holes are discharged by datatype equivalence under `ctx`.
pub fn solve(ctx: &TypingContext, eqs: &EquationSystem) -> Result<Substitution, ExtractError> {
    solve_with(&Logic::default(), ctx, eqs)
}

pub fn solve_with(
    logic: &Logic,
    ctx: &TypingContext,
    eqs: &EquationSystem,
) -> Result<Substitution, ExtractError> {
    let mut sub = Substitution(BTreeMap::new());
    let mut work: Vec<(Datatype, Datatype)> = eqs.0.iter().rev().cloned().collect();
    let clash = |a: &Datatype, b: &Datatype| {
        ExtractError::UnsolvableEquations(format!("`{a}` cannot equal `{b}`"))
    };
    while let Some((a, b)) = work.pop() {
        let a = a.apply(&sub);
        let b = b.apply(&sub);
        match (&a, &b) {
            (Datatype::Hole(x), Datatype::Hole(y)) if x == y => {}
            (Datatype::Hole(x), t) | (t, Datatype::Hole(x)) => {
                if t.holes().contains(x) {
                    return Err(ExtractError::UnsolvableEquations(format!(
                        "`?{x}` occurs in `{t}`"
                    )));
                }
                sub.0.insert(x.clone(), t.clone());
            }
            (Datatype::Array(e1, l1), Datatype::Array(e2, l2))
                if a.has_holes() || b.has_holes() =>
            {
                let eq = crate::ast::Prop::cmp(crate::ast::CmpOp::Eq, l1.clone(), l2.clone());
                match logic.entails(ctx, &eq) {
                    Verdict::Valid => work.push(((**e1).clone(), (**e2).clone())),
                    Verdict::Invalid => return Err(clash(&a, &b)),
                    Verdict::Undecidable => {
                        return Err(LogicError::UndecidableEquivalence(
                            a.to_string(),
                            b.to_string(),
                        )
                        .into())
                    }
                }
            }
            _ if a.has_holes() || b.has_holes() => return Err(clash(&a, &b)),
            _ => {
                if !logic.dtype_equiv(ctx, &a, &b)? {
                    return Err(clash(&a, &b));
                }
            }
        }
    }
    let mut solved = BTreeMap::new();
    for (hole, d) in &sub.0 {
        let d = d.apply(&sub);
        if let Some(open) = d.holes().into_iter().next() {
            return Err(ExtractError::UnsolvableEquations(format!(
                "`?{open}` is not determined"
            )));
        }
        solved.insert(hole.clone(), d);
    }
    Ok(Substitution(solved))
}

/// Specialize, collect, solve and apply.
pub fn extract_local_type(
    ctx: &TypingContext,
    p: &Process,
    self_rank: i64,
    size: i64,
) -> Result<ProtocolType, ExtractError> {
    extract_local_type_with(&Logic::default(), ctx, p, self_rank, size)
}

pub fn extract_local_type_with(
    logic: &Logic,
    ctx: &TypingContext,
    p: &Process,
    self_rank: i64,
    size: i64,
) -> Result<ProtocolType, ExtractError> {
    let specialized = specialize(p, self_rank, size)?;
    let (eqs, t) = collect(ctx, &specialized, self_rank)?;
    let sub = solve_with(logic, ctx, &eqs)?;
    let t = t.apply(&sub);
    if t.has_holes() {
        return Err(ExtractError::UnsolvableEquations(
            "a datatype hole is never constrained".into(),
        ));
    }
    Ok(t)
}

/// Value of a closed index term, used by callers checking endpoints.
pub fn closed_value(t: &IndexTerm) -> Option<i64> {
    eval_index(&Assignment::new(), t).ok()
}
