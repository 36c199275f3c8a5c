//! Entailment `Γ ⊨ p`, datatype equivalence and the contexts used while
//! merging.
//!
//! Entailment first evaluates the proposition over interval abstractions of
//! the context variables. When that is inconclusive every assignment is
//! enumerated, provided the product of the domain sizes stays under a cap.
//! Anything larger is reported as [`Verdict::Undecidable`].
//!
//! An assignment under which the proposition fails to evaluate (division by
//! zero, overflow) counts as one where it does not hold.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

use crate::ast::{
    eval_prop, fresh_name, ArithOp, Assignment, BaseType, CmpOp, Datatype, IndexTerm, Prop,
    TypingContext,
};

pub const DEFAULT_ENUM_CAP: u64 = 100_000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Domain {
    Empty,
    FiniteSet(Vec<i64>),
    Interval(i64, i64),
    Unbounded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Verdict {
    Valid,
    Invalid,
    Undecidable,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LogicError {
    #[error("`{0}` is not bound in the context")]
    Unbound(String),
    #[error("`{0}` is not an integer refinement")]
    NotIntegerRefined(String),
    #[error("cannot decide whether `{0}` and `{1}` are equivalent")]
    UndecidableEquivalence(String, String),
    #[error("datatype `{0}` contains an unsolved hole")]
    UnsolvedHole(String),
    #[error("invalid rank set: {0}")]
    InvalidRankSet(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Logic {
    pub enum_cap: u64,
}

impl Default for Logic {
    fn default() -> Self {
        Logic {
            enum_cap: DEFAULT_ENUM_CAP,
        }
    }
}

pub fn entails(ctx: &TypingContext, p: &Prop) -> Verdict {
    Logic::default().entails(ctx, p)
}

pub fn dtype_equiv(ctx: &TypingContext, d1: &Datatype, d2: &Datatype) -> Result<bool, LogicError> {
    Logic::default().dtype_equiv(ctx, d1, d2)
}

pub fn domain_of(ctx: &TypingContext, name: &str) -> Result<Domain, LogicError> {
    Logic::default().domain_of(ctx, name)
}

/// `size: {x: integer | x = n}`.
pub fn initial_context(n: i64) -> Result<TypingContext, LogicError> {
    if n < 2 {
        return Err(LogicError::InvalidRankSet(format!(
            "a program needs at least 2 processes, got {n}"
        )));
    }
    let mut ctx = TypingContext::new();
    ctx.push("size", singleton_refinement(&[n]))
        .expect("fresh context");
    Ok(ctx)
}

/// `size: {x: integer | x = n}, rank: {x: integer | x = r0 or ... or x = rm}`.
pub fn merged_context(n: i64, merged: &BTreeSet<i64>) -> Result<TypingContext, LogicError> {
    let mut ctx = initial_context(n)?;
    if merged.is_empty() {
        return Err(LogicError::InvalidRankSet("no rank has been merged".into()));
    }
    if let Some(bad) = merged.iter().find(|r| !(0..n).contains(*r)) {
        return Err(LogicError::InvalidRankSet(format!(
            "rank {bad} is outside 0..{}",
            n - 1
        )));
    }
    let ranks: Vec<i64> = merged.iter().copied().collect();
    ctx.push("rank", singleton_refinement(&ranks))
        .expect("size is the only other entry");
    Ok(ctx)
}

fn singleton_refinement(values: &[i64]) -> Datatype {
    let x = IndexTerm::var("x");
    Datatype::refined(
        "x",
        BaseType::Integer,
        Prop::any(
            values
                .iter()
                .map(|v| Prop::cmp(CmpOp::Eq, x.clone(), IndexTerm::Int(*v))),
        ),
    )
}

// ---------------------------------------------------------------------------
// Abstract intervals

/// Interval over mathematical integers; `None` is an infinite bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Iv {
    lo: Option<i128>,
    hi: Option<i128>,
    may_error: bool,
}

const T: u8 = 1;
const F: u8 = 2;
const E: u8 = 4;

impl Iv {
    const TOP: Iv = Iv {
        lo: None,
        hi: None,
        may_error: false,
    };

    fn point(v: i128) -> Iv {
        Iv {
            lo: Some(v),
            hi: Some(v),
            may_error: false,
        }
    }

    fn as_point(&self) -> Option<i128> {
        match (self.lo, self.hi) {
            (Some(a), Some(b)) if a == b => Some(a),
            _ => None,
        }
    }

    fn with_error(mut self, e: bool) -> Iv {
        self.may_error |= e;
        self
    }

    /// Values beyond the i64 range can only be reached through an overflow
    /// error, so they are cut off and recorded as a possible error.
    fn clamp(mut self) -> Iv {
        let (min, max) = (i64::MIN as i128, i64::MAX as i128);
        if let Some(lo) = self.lo {
            if lo < min {
                self.lo = Some(min);
                self.may_error = true;
            } else if lo > max {
                self.lo = Some(max);
                self.may_error = true;
            }
        }
        if let Some(hi) = self.hi {
            if hi > max {
                self.hi = Some(max);
                self.may_error = true;
            } else if hi < min {
                self.hi = Some(min);
                self.may_error = true;
            }
        }
        self
    }

    fn hull(a: Iv, b: Iv) -> Iv {
        Iv {
            lo: a.lo.zip(b.lo).map(|(x, y)| x.min(y)),
            hi: a.hi.zip(b.hi).map(|(x, y)| x.max(y)),
            may_error: a.may_error || b.may_error,
        }
    }

    fn arith(op: ArithOp, l: Iv, r: Iv) -> Iv {
        let err = l.may_error || r.may_error;
        let out = match op {
            ArithOp::Add => Iv {
                lo: l.lo.zip(r.lo).map(|(a, b)| a + b),
                hi: l.hi.zip(r.hi).map(|(a, b)| a + b),
                may_error: false,
            },
            ArithOp::Sub => Iv {
                lo: l.lo.zip(r.hi).map(|(a, b)| a - b),
                hi: l.hi.zip(r.lo).map(|(a, b)| a - b),
                may_error: false,
            },
            ArithOp::Mul => {
                if l.as_point() == Some(0) || r.as_point() == Some(0) {
                    Iv::point(0)
                } else {
                    match (l.lo, l.hi, r.lo, r.hi) {
                        (Some(a), Some(b), Some(c), Some(d)) => corners(a, b, c, d, |x, y| x * y),
                        _ => Iv::TOP,
                    }
                }
            }
            ArithOp::Div => return Iv::divide(l, r).with_error(err),
        };
        out.with_error(err).clamp()
    }

    fn divide(l: Iv, r: Iv) -> Iv {
        let zero_possible = r.lo.is_none_or(|lo| lo <= 0) && r.hi.is_none_or(|hi| hi >= 0);
        let mut parts = Vec::new();
        // Split the divisor into its negative and positive parts.
        if r.lo.is_none_or(|lo| lo < 0) {
            parts.push((r.lo, Some(r.hi.map_or(-1, |hi| hi.min(-1)))));
        }
        if r.hi.is_none_or(|hi| hi > 0) {
            parts.push((Some(r.lo.map_or(1, |lo| lo.max(1))), r.hi));
        }
        let mut acc: Option<Iv> = None;
        for (c, d) in parts {
            let piece = match (l.lo, l.hi, c, d) {
                (Some(a), Some(b), Some(c), Some(d)) => corners(a, b, c, d, |x, y| x / y),
                // An unbounded divisor with a bounded dividend: the quotient
                // lies between -|dividend| and |dividend|.
                (Some(a), Some(b), _, _) => {
                    let m = a.abs().max(b.abs());
                    Iv {
                        lo: Some(-m),
                        hi: Some(m),
                        may_error: false,
                    }
                }
                _ => Iv::TOP,
            };
            acc = Some(match acc {
                None => piece,
                Some(prev) => Iv::hull(prev, piece),
            });
        }
        match acc {
            // The divisor is exactly zero: evaluation always fails.
            None => Iv {
                lo: Some(0),
                hi: Some(0),
                may_error: true,
            },
            Some(iv) => iv.with_error(zero_possible).clamp(),
        }
    }
}

fn corners(a: i128, b: i128, c: i128, d: i128, f: impl Fn(i128, i128) -> i128) -> Iv {
    let vals = [f(a, c), f(a, d), f(b, c), f(b, d)];
    Iv {
        lo: vals.iter().min().copied(),
        hi: vals.iter().max().copied(),
        may_error: false,
    }
}

type AbsEnv = BTreeMap<String, Iv>;

fn abs_index(env: &AbsEnv, t: &IndexTerm) -> Iv {
    match t {
        IndexTerm::Int(v) => Iv::point(*v as i128),
        IndexTerm::Var(v) => env.get(v).copied().unwrap_or(Iv::TOP),
        IndexTerm::Bin(op, l, r) => Iv::arith(*op, abs_index(env, l), abs_index(env, r)),
        IndexTerm::Cond(test, a, b) => {
            let o = abs_prop(env, test);
            let mut out: Option<Iv> = None;
            if o & T != 0 {
                out = Some(abs_index(env, a));
            }
            if o & F != 0 {
                let e = abs_index(env, b);
                out = Some(out.map_or(e, |prev| Iv::hull(prev, e)));
            }
            out.unwrap_or(Iv::point(0)).with_error(o & E != 0)
        }
    }
}

/// Possible outcomes of evaluating `p`, as a set of `T`, `F` and `E`.
fn abs_prop(env: &AbsEnv, p: &Prop) -> u8 {
    match p {
        Prop::True => T,
        Prop::Cmp(op, l, r) => {
            let li = abs_index(env, l);
            let ri = abs_index(env, r);
            let err = if li.may_error || ri.may_error { E } else { 0 };
            if l == r {
                // Identical operands compare equal whenever they evaluate.
                return err
                    | match op {
                        CmpOp::Eq | CmpOp::Le | CmpOp::Ge => T,
                        CmpOp::Ne | CmpOp::Lt | CmpOp::Gt => F,
                    };
            }
            err | abs_cmp(*op, li, ri)
        }
        Prop::And(a, b) => {
            let oa = abs_prop(env, a);
            let mut out = oa & (E | F);
            if oa & T != 0 {
                out |= abs_prop(env, b);
            }
            out
        }
        Prop::Or(a, b) => {
            let oa = abs_prop(env, a);
            let mut out = oa & (E | T);
            if oa & F != 0 {
                out |= abs_prop(env, b);
            }
            out
        }
        Prop::Not(a) => {
            let o = abs_prop(env, a);
            (o & E) | if o & T != 0 { F } else { 0 } | if o & F != 0 { T } else { 0 }
        }
    }
}

fn abs_cmp(op: CmpOp, l: Iv, r: Iv) -> u8 {
    // Definitely l < r, definitely l <= r, and so on.
    let lt = matches!((l.hi, r.lo), (Some(a), Some(b)) if a < b);
    let le = matches!((l.hi, r.lo), (Some(a), Some(b)) if a <= b);
    let gt = matches!((l.lo, r.hi), (Some(a), Some(b)) if a > b);
    let ge = matches!((l.lo, r.hi), (Some(a), Some(b)) if a >= b);
    let eq = matches!((l.as_point(), r.as_point()), (Some(a), Some(b)) if a == b);
    let ne = lt || gt;
    let (yes, no) = match op {
        CmpOp::Eq => (eq, ne),
        CmpOp::Ne => (ne, eq),
        CmpOp::Lt => (lt, ge),
        CmpOp::Le => (le, gt),
        CmpOp::Gt => (gt, le),
        CmpOp::Ge => (ge, lt),
    };
    match (yes, no) {
        (true, _) => T,
        (false, true) => F,
        (false, false) => T | F,
    }
}

// ---------------------------------------------------------------------------
// Reading domains off refinements

/// What a refinement `{b: integer | pred}` says about its binder.
#[derive(Debug, Default)]
struct Shape<'a> {
    lowers: Vec<(&'a IndexTerm, i128)>,
    uppers: Vec<(&'a IndexTerm, i128)>,
    sets: Vec<Vec<&'a IndexTerm>>,
    /// Some conjunct is neither a bound nor an equality set.
    filtered: bool,
}

fn shape_of<'a>(binder: &str, pred: &'a Prop) -> Shape<'a> {
    let mut shape = Shape::default();
    for conjunct in pred.conjuncts() {
        if *conjunct == Prop::True {
            continue;
        }
        if let Some((op, other)) = binder_cmp(binder, conjunct) {
            match op {
                CmpOp::Le => shape.uppers.push((other, 0)),
                CmpOp::Lt => shape.uppers.push((other, -1)),
                CmpOp::Ge => shape.lowers.push((other, 0)),
                CmpOp::Gt => shape.lowers.push((other, 1)),
                CmpOp::Eq => shape.sets.push(vec![other]),
                CmpOp::Ne => shape.filtered = true,
            }
            continue;
        }
        let members: Option<Vec<_>> = conjunct
            .disjuncts()
            .into_iter()
            .map(|d| match binder_cmp(binder, d) {
                Some((CmpOp::Eq, other)) => Some(other),
                _ => None,
            })
            .collect();
        match members {
            Some(m) if conjunct.disjuncts().len() > 1 => shape.sets.push(m),
            _ => shape.filtered = true,
        }
    }
    shape
}

/// Recognizes `b op t` and `t op b` where `t` does not mention `b`, returning
/// the operator oriented as `b op t`.
fn binder_cmp<'a>(binder: &str, p: &'a Prop) -> Option<(CmpOp, &'a IndexTerm)> {
    let Prop::Cmp(op, l, r) = p else { return None };
    let is_b = |t: &IndexTerm| matches!(t, IndexTerm::Var(v) if v == binder);
    if is_b(l) && !r.free_vars().contains(binder) {
        Some((*op, r))
    } else if is_b(r) && !l.free_vars().contains(binder) {
        Some((op.flip(), l))
    } else {
        None
    }
}

/// Static over-approximation of one variable's values.
#[derive(Debug, Clone)]
struct Hull {
    iv: Iv,
    /// Exact candidate values when an equality set pins them down.
    points: Option<BTreeSet<i128>>,
    /// The variable's values are exactly those described by `iv`/`points`
    /// for every assignment of earlier variables.
    exact: bool,
}

impl Hull {
    fn unbounded() -> Hull {
        Hull {
            iv: Iv::TOP,
            points: None,
            exact: true,
        }
    }

    fn is_empty(&self) -> bool {
        let bounds_empty = matches!((self.iv.lo, self.iv.hi), (Some(a), Some(b)) if a > b);
        bounds_empty || self.points.as_ref().is_some_and(|p| p.is_empty())
    }

    /// Number of candidates, if finite.
    fn size(&self) -> Option<u128> {
        if self.is_empty() {
            return Some(0);
        }
        if let Some(p) = &self.points {
            return Some(p.len() as u128);
        }
        match (self.iv.lo, self.iv.hi) {
            (Some(a), Some(b)) => Some((b - a + 1) as u128),
            _ => None,
        }
    }

    fn candidates(&self) -> Vec<i64> {
        if self.is_empty() {
            return Vec::new();
        }
        if let Some(p) = &self.points {
            return p.iter().map(|v| *v as i64).collect();
        }
        let (Some(a), Some(b)) = (self.iv.lo, self.iv.hi) else {
            return Vec::new();
        };
        (a as i64..=b as i64).collect()
    }
}

/// The refinement of an integer-valued context entry, if any.
fn integer_refinement(ty: &Datatype) -> Option<(Option<&str>, Option<&Prop>)> {
    match ty {
        Datatype::Integer => Some((None, None)),
        Datatype::Refined {
            binder,
            base: BaseType::Integer,
            pred,
        } => Some((Some(binder), Some(pred))),
        _ => None,
    }
}

fn hull_of(binder: &str, pred: &Prop, env: &AbsEnv) -> Hull {
    let shape = shape_of(binder, pred);
    let mut exact = !shape.filtered;
    let mut lo: Option<i128> = None;
    let mut hi: Option<i128> = None;
    let mut err = false;
    for (t, off) in &shape.lowers {
        let iv = abs_index(env, t);
        err |= iv.may_error;
        exact &= iv.as_point().is_some();
        if let Some(v) = iv.lo {
            lo = Some(lo.map_or(v + off, |cur| cur.max(v + off)));
        }
    }
    for (t, off) in &shape.uppers {
        let iv = abs_index(env, t);
        err |= iv.may_error;
        exact &= iv.as_point().is_some();
        if let Some(v) = iv.hi {
            hi = Some(hi.map_or(v + off, |cur| cur.min(v + off)));
        }
    }
    let mut points: Option<BTreeSet<i128>> = None;
    for set in &shape.sets {
        let ivs: Vec<Iv> = set.iter().map(|t| abs_index(env, t)).collect();
        err |= ivs.iter().any(|iv| iv.may_error);
        let pts: Option<BTreeSet<i128>> = ivs.iter().map(|iv| iv.as_point()).collect();
        match pts {
            Some(pts) => {
                points = Some(match points {
                    None => pts,
                    Some(prev) => prev.intersection(&pts).copied().collect(),
                })
            }
            None => {
                exact = false;
                let h = ivs.into_iter().reduce(Iv::hull).expect("non-empty set");
                if let Some(v) = h.lo {
                    lo = Some(lo.map_or(v, |cur| cur.max(v)));
                }
                if let Some(v) = h.hi {
                    hi = Some(hi.map_or(v, |cur| cur.min(v)));
                }
            }
        }
    }
    if let Some(pts) = &mut points {
        pts.retain(|v| lo.is_none_or(|l| *v >= l) && hi.is_none_or(|h| *v <= h));
        lo = pts.first().copied();
        hi = pts.last().copied();
        if pts.is_empty() {
            lo = Some(1);
            hi = Some(0);
        }
    }
    Hull {
        iv: Iv {
            lo,
            hi,
            may_error: false,
        },
        points,
        // A bound that may fail to evaluate makes the set of admitted
        // values depend on error handling; fall back to enumeration.
        exact: exact && !err,
    }
}

/// Context variables `p` depends on, directly or through refinements, in
/// context order.
fn relevant_vars(ctx: &TypingContext, p: &Prop) -> Vec<String> {
    dependencies(ctx, p.free_vars())
}

fn dependencies(ctx: &TypingContext, mut wanted: BTreeSet<String>) -> Vec<String> {
    for (name, ty) in ctx.entries().iter().rev() {
        if wanted.contains(name) {
            wanted.extend(ty.free_vars());
        }
    }
    ctx.entries()
        .iter()
        .map(|(n, _)| n.clone())
        .filter(|n| wanted.contains(n))
        .collect()
}

impl Logic {
    pub fn new(enum_cap: u64) -> Logic {
        Logic { enum_cap }
    }

    fn hulls(&self, ctx: &TypingContext, vars: &[String]) -> (AbsEnv, Vec<Hull>) {
        let mut env = AbsEnv::new();
        let mut hulls = Vec::new();
        for name in vars {
            let ty = ctx.get(name).expect("relevant vars come from the context");
            let hull = match integer_refinement(ty) {
                Some((Some(b), Some(pred))) => hull_of(b, pred, &env),
                _ => Hull::unbounded(),
            };
            env.insert(name.clone(), hull.iv);
            hulls.push(hull);
        }
        (env, hulls)
    }

    pub fn entails(&self, ctx: &TypingContext, p: &Prop) -> Verdict {
        let vars = relevant_vars(ctx, p);
        let (env, hulls) = self.hulls(ctx, &vars);
        if hulls.iter().any(Hull::is_empty) {
            return Verdict::Valid;
        }
        let outcome = abs_prop(&env, p);
        if outcome == T {
            return Verdict::Valid;
        }
        let free_outside = p.free_vars().iter().any(|v| !ctx.contains(v));
        if outcome & T == 0 && hulls.iter().all(|h| h.exact) {
            return Verdict::Invalid;
        }
        if free_outside {
            return Verdict::Undecidable;
        }
        let mut product: u128 = 1;
        for h in &hulls {
            match h.size() {
                Some(s) => product = product.saturating_mul(s.max(1)),
                None => return Verdict::Undecidable,
            }
        }
        if product > self.enum_cap as u128 {
            return Verdict::Undecidable;
        }
        let mut assignment = Assignment::new();
        if self.enumerate(ctx, &vars, &hulls, 0, &mut assignment, p) {
            Verdict::Valid
        } else {
            Verdict::Invalid
        }
    }

    /// True when `p` holds under every assignment extending `assignment`.
    fn enumerate(
        &self,
        ctx: &TypingContext,
        vars: &[String],
        hulls: &[Hull],
        i: usize,
        assignment: &mut Assignment,
        p: &Prop,
    ) -> bool {
        let Some(name) = vars.get(i) else {
            return eval_prop(assignment, p).unwrap_or(false);
        };
        let refinement = ctx.get(name).and_then(integer_refinement);
        for v in hulls[i].candidates() {
            if let Some((Some(b), Some(pred))) = refinement {
                let mut inner = assignment.clone();
                inner.insert(b.to_string(), v);
                if !eval_prop(&inner, pred).unwrap_or(false) {
                    continue;
                }
            }
            assignment.insert(name.clone(), v);
            let ok = self.enumerate(ctx, vars, hulls, i + 1, assignment, p);
            assignment.remove(name);
            if !ok {
                return false;
            }
        }
        true
    }

    pub fn domain_of(&self, ctx: &TypingContext, name: &str) -> Result<Domain, LogicError> {
        let pos = ctx
            .position(name)
            .ok_or_else(|| LogicError::Unbound(name.to_string()))?;
        let (_, ty) = &ctx.entries()[pos];
        let (binder, pred) = match integer_refinement(ty) {
            Some((Some(b), Some(p))) => (b, p),
            Some(_) => return Ok(Domain::Unbounded),
            None => return Err(LogicError::NotIntegerRefined(name.to_string())),
        };
        let earlier: Vec<String> = dependencies(ctx, ty.free_vars())
            .into_iter()
            .filter(|n| ctx.position(n).is_some_and(|i| i < pos))
            .collect();
        let (env, _) = self.hulls(ctx, &earlier);
        let hull = hull_of(binder, pred, &env);
        if hull.is_empty() && hull.exact {
            return Ok(Domain::Empty);
        }
        if !hull.exact {
            // Filter the hull by the refinement when it only talks about
            // the binder itself.
            let closed = pred.free_vars().iter().all(|v| v == binder);
            match hull.size() {
                Some(s) if closed && s <= self.enum_cap as u128 => {
                    let vals: Vec<i64> = hull
                        .candidates()
                        .into_iter()
                        .filter(|v| {
                            let env = Assignment::from([(binder.to_string(), *v)]);
                            eval_prop(&env, pred).unwrap_or(false)
                        })
                        .collect();
                    return Ok(if vals.is_empty() {
                        Domain::Empty
                    } else {
                        Domain::FiniteSet(vals)
                    });
                }
                _ => return Ok(Domain::Unbounded),
            }
        }
        if let Some(points) = &hull.points {
            return Ok(Domain::FiniteSet(
                points.iter().map(|v| *v as i64).collect(),
            ));
        }
        Ok(match (hull.iv.lo, hull.iv.hi) {
            (Some(a), Some(b)) => Domain::Interval(a as i64, b as i64),
            _ => Domain::Unbounded,
        })
    }

    pub fn dtype_equiv(
        &self,
        ctx: &TypingContext,
        d1: &Datatype,
        d2: &Datatype,
    ) -> Result<bool, LogicError> {
        for d in [d1, d2] {
            if d.has_holes() {
                return Err(LogicError::UnsolvedHole(d.to_string()));
            }
        }
        if d1 == d2 {
            return Ok(true);
        }
        let undecided = || LogicError::UndecidableEquivalence(d1.to_string(), d2.to_string());
        match (d1, d2) {
            (Datatype::Array(e1, l1), Datatype::Array(e2, l2)) => {
                if !self.dtype_equiv(ctx, e1, e2)? {
                    return Ok(false);
                }
                match self.entails(ctx, &Prop::cmp(CmpOp::Eq, l1.clone(), l2.clone())) {
                    Verdict::Valid => Ok(true),
                    Verdict::Invalid => Ok(false),
                    Verdict::Undecidable => Err(undecided()),
                }
            }
            (Datatype::Array(..), _) | (_, Datatype::Array(..)) => Ok(false),
            _ => {
                let (Some((b1, base1, p1)), Some((b2, base2, p2))) =
                    (as_refined(d1), as_refined(d2))
                else {
                    return Ok(false);
                };
                if base1 != base2 {
                    return Ok(false);
                }
                // Alpha-rename both predicates to a binder fresh for the context.
                let mut avoid = ctx.names();
                avoid.extend(p1.free_vars());
                avoid.extend(p2.free_vars());
                let v = fresh_name("v", &avoid);
                let var = IndexTerm::Var(v.clone());
                let q1 = p1.subst(b1, &var);
                let q2 = p2.subst(b2, &var);
                if q1 == q2 {
                    return Ok(true);
                }
                if base1 == BaseType::Float {
                    return Err(undecided());
                }
                self.integer_refinements_equiv(ctx, &v, &q1, &q2)
                    .ok_or_else(undecided)
            }
        }
    }

    fn integer_refinements_equiv(
        &self,
        ctx: &TypingContext,
        v: &str,
        q1: &Prop,
        q2: &Prop,
    ) -> Option<bool> {
        let (env, hulls) = self.hulls(ctx, &relevant_vars(ctx, &Prop::and(q1.clone(), q2.clone())));
        let h1 = hull_of(v, q1, &env);
        let h2 = hull_of(v, q2, &env);
        let context_exact = hulls.iter().all(|h| h.exact);
        if h1.exact && h2.exact && context_exact {
            if h1.is_empty() || h2.is_empty() {
                return Some(h1.is_empty() && h2.is_empty());
            }
            match (&h1.points, &h2.points) {
                (None, None) => return Some(h1.iv.lo == h2.iv.lo && h1.iv.hi == h2.iv.hi),
                _ => {
                    if let (Some(s1), Some(s2)) = (h1.size(), h2.size()) {
                        if s1 <= self.enum_cap as u128 && s2 <= self.enum_cap as u128 {
                            return Some(h1.candidates() == h2.candidates());
                        }
                    }
                }
            }
        }
        // Check the two predicates agree on every value of the joint hull.
        let joint = Iv::hull(h1.iv, h2.iv);
        let (Some(lo), Some(hi)) = (joint.lo, joint.hi) else {
            return None;
        };
        let x = IndexTerm::Var(v.to_string());
        let bounded = Datatype::refined(
            v,
            BaseType::Integer,
            Prop::and(
                Prop::cmp(CmpOp::Le, IndexTerm::Int(lo as i64), x.clone()),
                Prop::cmp(CmpOp::Le, x, IndexTerm::Int(hi as i64)),
            ),
        );
        let ext = ctx.with(v, bounded).ok()?;
        let iff = Prop::or(
            Prop::and(q1.clone(), q2.clone()),
            Prop::and(Prop::not(q1.clone()), Prop::not(q2.clone())),
        );
        match self.entails(&ext, &iff) {
            Verdict::Valid => Some(true),
            Verdict::Invalid => Some(false),
            Verdict::Undecidable => None,
        }
    }
}

fn as_refined(d: &Datatype) -> Option<(&str, BaseType, Prop)> {
    match d {
        Datatype::Integer => Some(("_", BaseType::Integer, Prop::True)),
        Datatype::Float => Some(("_", BaseType::Float, Prop::True)),
        Datatype::Refined { binder, base, pred } => Some((binder, *base, pred.clone())),
        _ => None,
    }
}
