//! Syntax trees for protocol types, payload datatypes, index arithmetic,
//! typing contexts and the per-rank process language.
//!
//! Everything here is an immutable value. Evaluation of index terms follows
//! C integer semantics: `/` truncates toward zero and dividing by zero is an
//! error rather than a value.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::Serialize;
use thiserror::Error;

/// Variable assignment used when evaluating closed index terms.
pub type Assignment = BTreeMap<String, i64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum ArithOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl ArithOp {
    pub fn symbol(self) -> &'static str {
        match self {
            ArithOp::Add => "+",
            ArithOp::Sub => "-",
            ArithOp::Mul => "*",
            ArithOp::Div => "/",
        }
    }

    pub fn apply(self, l: i64, r: i64) -> Result<i64, EvalError> {
        let out = match self {
            ArithOp::Add => l.checked_add(r),
            ArithOp::Sub => l.checked_sub(r),
            ArithOp::Mul => l.checked_mul(r),
            ArithOp::Div => {
                if r == 0 {
                    return Err(EvalError::DivisionByZero);
                }
                // Rust's `/` truncates toward zero, matching C.
                l.checked_div(r)
            }
        };
        out.ok_or(EvalError::Overflow)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Eq => "=",
            CmpOp::Ne => "!=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }

    pub fn holds(self, l: i64, r: i64) -> bool {
        match self {
            CmpOp::Eq => l == r,
            CmpOp::Ne => l != r,
            CmpOp::Lt => l < r,
            CmpOp::Le => l <= r,
            CmpOp::Gt => l > r,
            CmpOp::Ge => l >= r,
        }
    }

    /// The operator obtained by swapping the operands: `a < b` iff `b > a`.
    pub fn flip(self) -> CmpOp {
        match self {
            CmpOp::Eq => CmpOp::Eq,
            CmpOp::Ne => CmpOp::Ne,
            CmpOp::Lt => CmpOp::Gt,
            CmpOp::Le => CmpOp::Ge,
            CmpOp::Gt => CmpOp::Lt,
            CmpOp::Ge => CmpOp::Le,
        }
    }
}

/// Integer arithmetic appearing inside types: message endpoints, array
/// lengths and loop bounds.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum IndexTerm {
    Int(i64),
    Var(String),
    Bin(ArithOp, Box<IndexTerm>, Box<IndexTerm>),
    Cond(Box<Prop>, Box<IndexTerm>, Box<IndexTerm>),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Prop {
    True,
    Cmp(CmpOp, IndexTerm, IndexTerm),
    And(Box<Prop>, Box<Prop>),
    Or(Box<Prop>, Box<Prop>),
    Not(Box<Prop>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum BaseType {
    Integer,
    Float,
}

impl BaseType {
    pub fn keyword(self) -> &'static str {
        match self {
            BaseType::Integer => "integer",
            BaseType::Float => "float",
        }
    }
}

/// Payload types carried by messages and collectives.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Datatype {
    Integer,
    Float,
    Array(Box<Datatype>, IndexTerm),
    Refined {
        binder: String,
        base: BaseType,
        pred: Prop,
    },
    /// Placeholder solved during extraction; never present in a solved type.
    Hole(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum ReduceOp {
    Min,
    Max,
    Sum,
    Prod,
}

impl ReduceOp {
    pub const ALL: [ReduceOp; 4] = [ReduceOp::Min, ReduceOp::Max, ReduceOp::Sum, ReduceOp::Prod];

    pub fn keyword(self) -> &'static str {
        match self {
            ReduceOp::Min => "min",
            ReduceOp::Max => "max",
            ReduceOp::Sum => "sum",
            ReduceOp::Prod => "prod",
        }
    }

    pub fn from_keyword(s: &str) -> Option<ReduceOp> {
        ReduceOp::ALL.into_iter().find(|op| op.keyword() == s)
    }
}

/// Binder given to `allreduce op D` written without a binder.
pub const ANON_BINDER: &str = "_";

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum ProtocolType {
    Skip,
    Message {
        from: IndexTerm,
        to: IndexTerm,
        payload: Datatype,
    },
    Allreduce {
        op: ReduceOp,
        binder: String,
        payload: Datatype,
        cont: Box<ProtocolType>,
    },
    Foreach {
        binder: String,
        lo: IndexTerm,
        hi: IndexTerm,
        body: Box<ProtocolType>,
    },
    Seq(Box<ProtocolType>, Box<ProtocolType>),
}

/// Ordered variable bindings. Names are unique; a refinement may mention
/// names bound earlier in the list.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct TypingContext {
    entries: Vec<(String, Datatype)>,
}

/// A per-rank program in the small process language.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Process {
    Skip,
    Send {
        to: IndexTerm,
        payload: Datatype,
    },
    Recv {
        from: IndexTerm,
        payload: Datatype,
    },
    Allreduce {
        op: ReduceOp,
        payload: Datatype,
    },
    For {
        binder: String,
        lo: IndexTerm,
        hi: IndexTerm,
        body: Box<Process>,
    },
    If {
        test: Prop,
        then: Box<Process>,
        els: Box<Process>,
    },
    Seq(Box<Process>, Box<Process>),
    /// `where D1 = D2`: asks extraction to equate two datatypes.
    Constraint {
        lhs: Datatype,
        rhs: Datatype,
    },
}

/// Equations over datatypes collected from one process.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EquationSystem(pub Vec<(Datatype, Datatype)>);

/// Solution of an [`EquationSystem`]: hole name to datatype.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Substitution(pub BTreeMap<String, Datatype>);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum DiagnosticKind {
    DeadlockSuspected,
    DatatypeMismatch,
    EntailmentFailed,
    EntailmentUndecidable,
    UnsolvableEquations,
}

/// One attempted rule and the premise that stopped it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RuleAttempt {
    pub rule: String,
    pub failing_premise: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub kind: DiagnosticKind,
    pub message: String,
    /// Path from the root of the merge goal to the offending operands.
    pub location: Vec<String>,
    pub rule_trace: Vec<RuleAttempt>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("division by zero")]
    DivisionByZero,
    #[error("unbound variable `{0}`")]
    UnboundVariable(String),
    #[error("arithmetic overflow")]
    Overflow,
}

pub fn eval_index(env: &Assignment, term: &IndexTerm) -> Result<i64, EvalError> {
    match term {
        IndexTerm::Int(v) => Ok(*v),
        IndexTerm::Var(name) => env
            .get(name)
            .copied()
            .ok_or_else(|| EvalError::UnboundVariable(name.clone())),
        IndexTerm::Bin(op, l, r) => {
            let l = eval_index(env, l)?;
            let r = eval_index(env, r)?;
            op.apply(l, r)
        }
        IndexTerm::Cond(test, then, els) => {
            if eval_prop(env, test)? {
                eval_index(env, then)
            } else {
                eval_index(env, els)
            }
        }
    }
}

pub fn eval_prop(env: &Assignment, p: &Prop) -> Result<bool, EvalError> {
    match p {
        Prop::True => Ok(true),
        Prop::Cmp(op, l, r) => Ok(op.holds(eval_index(env, l)?, eval_index(env, r)?)),
        Prop::And(a, b) => Ok(eval_prop(env, a)? && eval_prop(env, b)?),
        Prop::Or(a, b) => Ok(eval_prop(env, a)? || eval_prop(env, b)?),
        Prop::Not(a) => Ok(!eval_prop(env, a)?),
    }
}

/// Returns a name based on `base` that does not occur in `avoid`.
pub fn fresh_name(base: &str, avoid: &BTreeSet<String>) -> String {
    let stem = base.trim_end_matches(|c: char| c.is_ascii_digit() || c == '_');
    let stem = if stem.is_empty() { "v" } else { stem };
    (1..)
        .map(|i| format!("{stem}_{i}"))
        .find(|cand| !avoid.contains(cand))
        .expect("infinite supply of names")
}

impl IndexTerm {
    pub fn var(name: &str) -> IndexTerm {
        IndexTerm::Var(name.to_string())
    }

    pub fn bin(op: ArithOp, l: IndexTerm, r: IndexTerm) -> IndexTerm {
        IndexTerm::Bin(op, Box::new(l), Box::new(r))
    }

    pub fn cond(test: Prop, then: IndexTerm, els: IndexTerm) -> IndexTerm {
        IndexTerm::Cond(Box::new(test), Box::new(then), Box::new(els))
    }

    pub fn free_vars(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    pub(crate) fn collect_vars(&self, out: &mut BTreeSet<String>) {
        match self {
            IndexTerm::Int(_) => {}
            IndexTerm::Var(v) => {
                out.insert(v.clone());
            }
            IndexTerm::Bin(_, l, r) => {
                l.collect_vars(out);
                r.collect_vars(out);
            }
            IndexTerm::Cond(t, a, b) => {
                t.collect_vars(out);
                a.collect_vars(out);
                b.collect_vars(out);
            }
        }
    }

    pub fn is_closed(&self) -> bool {
        self.free_vars().is_empty()
    }

    pub fn subst(&self, name: &str, with: &IndexTerm) -> IndexTerm {
        match self {
            IndexTerm::Int(_) => self.clone(),
            IndexTerm::Var(v) if v == name => with.clone(),
            IndexTerm::Var(_) => self.clone(),
            IndexTerm::Bin(op, l, r) => {
                IndexTerm::bin(*op, l.subst(name, with), r.subst(name, with))
            }
            IndexTerm::Cond(t, a, b) => IndexTerm::cond(
                t.subst(name, with),
                a.subst(name, with),
                b.subst(name, with),
            ),
        }
    }

    /// Replaces every maximal closed subterm by its value. A closed condition
    /// selects its branch even when the branches are open.
    pub fn fold(&self) -> Result<IndexTerm, EvalError> {
        if self.is_closed() {
            return eval_index(&Assignment::new(), self).map(IndexTerm::Int);
        }
        Ok(match self {
            IndexTerm::Int(_) | IndexTerm::Var(_) => self.clone(),
            IndexTerm::Bin(op, l, r) => IndexTerm::bin(*op, l.fold()?, r.fold()?),
            IndexTerm::Cond(t, a, b) => {
                if t.is_closed() {
                    return if eval_prop(&Assignment::new(), t)? {
                        a.fold()
                    } else {
                        b.fold()
                    };
                }
                IndexTerm::cond(t.fold()?, a.fold()?, b.fold()?)
            }
        })
    }
}

impl Prop {
    pub fn cmp(op: CmpOp, l: IndexTerm, r: IndexTerm) -> Prop {
        Prop::Cmp(op, l, r)
    }

    pub fn and(a: Prop, b: Prop) -> Prop {
        Prop::And(Box::new(a), Box::new(b))
    }

    pub fn or(a: Prop, b: Prop) -> Prop {
        Prop::Or(Box::new(a), Box::new(b))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(a: Prop) -> Prop {
        Prop::Not(Box::new(a))
    }

    /// Left-nested conjunction; `true` for an empty list.
    pub fn all(props: impl IntoIterator<Item = Prop>) -> Prop {
        props.into_iter().reduce(Prop::and).unwrap_or(Prop::True)
    }

    /// Left-nested disjunction; `not true` for an empty list.
    pub fn any(props: impl IntoIterator<Item = Prop>) -> Prop {
        props
            .into_iter()
            .reduce(Prop::or)
            .unwrap_or_else(|| Prop::not(Prop::True))
    }

    pub fn free_vars(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    pub(crate) fn collect_vars(&self, out: &mut BTreeSet<String>) {
        match self {
            Prop::True => {}
            Prop::Cmp(_, l, r) => {
                l.collect_vars(out);
                r.collect_vars(out);
            }
            Prop::And(a, b) | Prop::Or(a, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
            Prop::Not(a) => a.collect_vars(out),
        }
    }

    pub fn is_closed(&self) -> bool {
        self.free_vars().is_empty()
    }

    pub fn subst(&self, name: &str, with: &IndexTerm) -> Prop {
        match self {
            Prop::True => Prop::True,
            Prop::Cmp(op, l, r) => Prop::Cmp(*op, l.subst(name, with), r.subst(name, with)),
            Prop::And(a, b) => Prop::and(a.subst(name, with), b.subst(name, with)),
            Prop::Or(a, b) => Prop::or(a.subst(name, with), b.subst(name, with)),
            Prop::Not(a) => Prop::not(a.subst(name, with)),
        }
    }

    fn fold(&self) -> Result<Prop, EvalError> {
        Ok(match self {
            Prop::True => Prop::True,
            Prop::Cmp(op, l, r) => Prop::Cmp(*op, l.fold()?, r.fold()?),
            Prop::And(a, b) => Prop::and(a.fold()?, b.fold()?),
            Prop::Or(a, b) => Prop::or(a.fold()?, b.fold()?),
            Prop::Not(a) => Prop::not(a.fold()?),
        })
    }

    /// Splits nested conjunctions into a flat list.
    pub fn conjuncts(&self) -> Vec<&Prop> {
        match self {
            Prop::And(a, b) => {
                let mut out = a.conjuncts();
                out.extend(b.conjuncts());
                out
            }
            other => vec![other],
        }
    }

    pub fn disjuncts(&self) -> Vec<&Prop> {
        match self {
            Prop::Or(a, b) => {
                let mut out = a.disjuncts();
                out.extend(b.disjuncts());
                out
            }
            other => vec![other],
        }
    }
}

impl Datatype {
    pub fn array(elem: Datatype, len: IndexTerm) -> Datatype {
        Datatype::Array(Box::new(elem), len)
    }

    pub fn refined(binder: &str, base: BaseType, pred: Prop) -> Datatype {
        Datatype::Refined {
            binder: binder.to_string(),
            base,
            pred,
        }
    }

    pub fn free_vars(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    pub(crate) fn collect_vars(&self, out: &mut BTreeSet<String>) {
        match self {
            Datatype::Integer | Datatype::Float | Datatype::Hole(_) => {}
            Datatype::Array(elem, len) => {
                elem.collect_vars(out);
                len.collect_vars(out);
            }
            Datatype::Refined { binder, pred, .. } => {
                let mut inner = pred.free_vars();
                inner.remove(binder);
                out.extend(inner);
            }
        }
    }

    pub fn holes(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_holes(&mut out);
        out
    }

    fn collect_holes(&self, out: &mut BTreeSet<String>) {
        match self {
            Datatype::Hole(h) => {
                out.insert(h.clone());
            }
            Datatype::Array(elem, _) => elem.collect_holes(out),
            _ => {}
        }
    }

    pub fn has_holes(&self) -> bool {
        !self.holes().is_empty()
    }

    pub fn subst(&self, name: &str, with: &IndexTerm) -> Datatype {
        match self {
            Datatype::Integer | Datatype::Float | Datatype::Hole(_) => self.clone(),
            Datatype::Array(elem, len) => {
                Datatype::array(elem.subst(name, with), len.subst(name, with))
            }
            Datatype::Refined { binder, base, pred } => {
                if binder == name {
                    return self.clone();
                }
                let (binder, pred) = if with.free_vars().contains(binder) {
                    let mut avoid = with.free_vars();
                    avoid.extend(pred.free_vars());
                    avoid.insert(name.to_string());
                    let fresh = fresh_name(binder, &avoid);
                    let renamed = pred.subst(binder, &IndexTerm::Var(fresh.clone()));
                    (fresh, renamed)
                } else {
                    (binder.clone(), pred.clone())
                };
                Datatype::Refined {
                    base: *base,
                    pred: pred.subst(name, with),
                    binder,
                }
            }
        }
    }

    /// Replaces holes according to `sub`, leaving unknown holes in place.
    pub fn apply(&self, sub: &Substitution) -> Datatype {
        match self {
            Datatype::Hole(h) => match sub.0.get(h) {
                Some(d) => d.apply(sub),
                None => self.clone(),
            },
            Datatype::Array(elem, len) => Datatype::array(elem.apply(sub), len.clone()),
            _ => self.clone(),
        }
    }
}

impl ProtocolType {
    pub fn message(from: IndexTerm, to: IndexTerm, payload: Datatype) -> ProtocolType {
        ProtocolType::Message { from, to, payload }
    }

    pub fn seq(first: ProtocolType, second: ProtocolType) -> ProtocolType {
        ProtocolType::Seq(Box::new(first), Box::new(second))
    }

    /// Right-nested sequence of `items`; `skip` when empty.
    pub fn seq_of(items: impl IntoIterator<Item = ProtocolType>) -> ProtocolType {
        let mut items: Vec<_> = items.into_iter().collect();
        let Some(mut acc) = items.pop() else {
            return ProtocolType::Skip;
        };
        while let Some(prev) = items.pop() {
            acc = ProtocolType::seq(prev, acc);
        }
        acc
    }

    pub fn foreach(binder: &str, lo: IndexTerm, hi: IndexTerm, body: ProtocolType) -> ProtocolType {
        ProtocolType::Foreach {
            binder: binder.to_string(),
            lo,
            hi,
            body: Box::new(body),
        }
    }

    /// `allreduce op D` without a binder or continuation.
    pub fn allreduce(op: ReduceOp, payload: Datatype) -> ProtocolType {
        ProtocolType::Allreduce {
            op,
            binder: ANON_BINDER.to_string(),
            payload,
            cont: Box::new(ProtocolType::Skip),
        }
    }

    pub fn free_vars(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut BTreeSet<String>) {
        match self {
            ProtocolType::Skip => {}
            ProtocolType::Message { from, to, payload } => {
                from.collect_vars(out);
                to.collect_vars(out);
                payload.collect_vars(out);
            }
            ProtocolType::Allreduce {
                binder,
                payload,
                cont,
                ..
            } => {
                payload.collect_vars(out);
                let mut inner = cont.free_vars();
                inner.remove(binder);
                out.extend(inner);
            }
            ProtocolType::Foreach {
                binder,
                lo,
                hi,
                body,
            } => {
                lo.collect_vars(out);
                hi.collect_vars(out);
                let mut inner = body.free_vars();
                inner.remove(binder);
                out.extend(inner);
            }
            ProtocolType::Seq(a, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
        }
    }

    /// Every binder introduced anywhere in the type.
    pub fn binders(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_binders(&mut out);
        out
    }

    fn collect_binders(&self, out: &mut BTreeSet<String>) {
        match self {
            ProtocolType::Allreduce { binder, cont, .. } => {
                out.insert(binder.clone());
                cont.collect_binders(out);
            }
            ProtocolType::Foreach { binder, body, .. } => {
                out.insert(binder.clone());
                body.collect_binders(out);
            }
            ProtocolType::Seq(a, b) => {
                a.collect_binders(out);
                b.collect_binders(out);
            }
            _ => {}
        }
    }

    /// Capture-avoiding substitution of an index term for a variable.
    pub fn subst(&self, name: &str, with: &IndexTerm) -> ProtocolType {
        match self {
            ProtocolType::Skip => ProtocolType::Skip,
            ProtocolType::Message { from, to, payload } => ProtocolType::Message {
                from: from.subst(name, with),
                to: to.subst(name, with),
                payload: payload.subst(name, with),
            },
            ProtocolType::Allreduce {
                op,
                binder,
                payload,
                cont,
            } => {
                let payload = payload.subst(name, with);
                let (binder, cont) = rebind(binder, cont, name, with);
                ProtocolType::Allreduce {
                    op: *op,
                    binder,
                    payload,
                    cont: Box::new(cont),
                }
            }
            ProtocolType::Foreach {
                binder,
                lo,
                hi,
                body,
            } => {
                let lo = lo.subst(name, with);
                let hi = hi.subst(name, with);
                let (binder, body) = rebind(binder, body, name, with);
                ProtocolType::Foreach {
                    binder,
                    lo,
                    hi,
                    body: Box::new(body),
                }
            }
            ProtocolType::Seq(a, b) => ProtocolType::seq(a.subst(name, with), b.subst(name, with)),
        }
    }

    pub fn has_holes(&self) -> bool {
        match self {
            ProtocolType::Skip => false,
            ProtocolType::Message { payload, .. } => payload.has_holes(),
            ProtocolType::Allreduce { payload, cont, .. } => {
                payload.has_holes() || cont.has_holes()
            }
            ProtocolType::Foreach { body, .. } => body.has_holes(),
            ProtocolType::Seq(a, b) => a.has_holes() || b.has_holes(),
        }
    }

    pub fn apply(&self, sub: &Substitution) -> ProtocolType {
        match self {
            ProtocolType::Skip => ProtocolType::Skip,
            ProtocolType::Message { from, to, payload } => ProtocolType::Message {
                from: from.clone(),
                to: to.clone(),
                payload: payload.apply(sub),
            },
            ProtocolType::Allreduce {
                op,
                binder,
                payload,
                cont,
            } => ProtocolType::Allreduce {
                op: *op,
                binder: binder.clone(),
                payload: payload.apply(sub),
                cont: Box::new(cont.apply(sub)),
            },
            ProtocolType::Foreach {
                binder,
                lo,
                hi,
                body,
            } => ProtocolType::Foreach {
                binder: binder.clone(),
                lo: lo.clone(),
                hi: hi.clone(),
                body: Box::new(body.apply(sub)),
            },
            ProtocolType::Seq(a, b) => ProtocolType::seq(a.apply(sub), b.apply(sub)),
        }
    }

    /// Items of the top-level sequence, left to right.
    pub fn seq_items(&self) -> Vec<&ProtocolType> {
        match self {
            ProtocolType::Seq(a, b) => {
                let mut out = a.seq_items();
                out.extend(b.seq_items());
                out
            }
            other => vec![other],
        }
    }
}

fn rebind(
    binder: &str,
    body: &ProtocolType,
    name: &str,
    with: &IndexTerm,
) -> (String, ProtocolType) {
    if binder == name {
        return (binder.to_string(), body.clone());
    }
    if with.free_vars().contains(binder) {
        let mut avoid = with.free_vars();
        avoid.extend(body.free_vars());
        avoid.extend(body.binders());
        avoid.insert(name.to_string());
        let fresh = fresh_name(binder, &avoid);
        let renamed = body.subst(binder, &IndexTerm::Var(fresh.clone()));
        return (fresh, renamed.subst(name, with));
    }
    (binder.to_string(), body.subst(name, with))
}

impl Process {
    pub fn seq(first: Process, second: Process) -> Process {
        Process::Seq(Box::new(first), Box::new(second))
    }

    pub fn subst(&self, name: &str, with: &IndexTerm) -> Process {
        match self {
            Process::Skip => Process::Skip,
            Process::Send { to, payload } => Process::Send {
                to: to.subst(name, with),
                payload: payload.subst(name, with),
            },
            Process::Recv { from, payload } => Process::Recv {
                from: from.subst(name, with),
                payload: payload.subst(name, with),
            },
            Process::Allreduce { op, payload } => Process::Allreduce {
                op: *op,
                payload: payload.subst(name, with),
            },
            Process::For {
                binder,
                lo,
                hi,
                body,
            } => Process::For {
                binder: binder.clone(),
                lo: lo.subst(name, with),
                hi: hi.subst(name, with),
                body: if binder == name {
                    body.clone()
                } else {
                    Box::new(body.subst(name, with))
                },
            },
            Process::If { test, then, els } => Process::If {
                test: test.subst(name, with),
                then: Box::new(then.subst(name, with)),
                els: Box::new(els.subst(name, with)),
            },
            Process::Seq(a, b) => Process::seq(a.subst(name, with), b.subst(name, with)),
            Process::Constraint { lhs, rhs } => Process::Constraint {
                lhs: lhs.subst(name, with),
                rhs: rhs.subst(name, with),
            },
        }
    }
}

pub(crate) fn fold_prop(p: &Prop) -> Result<Prop, EvalError> {
    p.fold()
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("name `{0}` is already bound in the context")]
pub struct DuplicateName(pub String);

impl TypingContext {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entries(&self) -> &[(String, Datatype)] {
        &self.entries
    }

    pub fn get(&self, name: &str) -> Option<&Datatype> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, d)| d)
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|(n, _)| n == name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.position(name).is_some()
    }

    pub fn names(&self) -> BTreeSet<String> {
        self.entries.iter().map(|(n, _)| n.clone()).collect()
    }

    pub fn push(&mut self, name: &str, ty: Datatype) -> Result<(), DuplicateName> {
        if self.contains(name) {
            return Err(DuplicateName(name.to_string()));
        }
        self.entries.push((name.to_string(), ty));
        Ok(())
    }

    /// A copy of the context with one more entry.
    pub fn with(&self, name: &str, ty: Datatype) -> Result<TypingContext, DuplicateName> {
        let mut out = self.clone();
        out.push(name, ty)?;
        Ok(out)
    }
}

impl fmt::Display for TypingContext {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (name, ty)) in self.entries.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{name}: {}", crate::syntax::print_datatype(ty))?;
        }
        Ok(())
    }
}

impl fmt::Display for DiagnosticKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl fmt::Display for IndexTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&crate::syntax::print_index(self))
    }
}

impl fmt::Display for Prop {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&crate::syntax::print_prop(self))
    }
}

impl fmt::Display for Datatype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&crate::syntax::print_datatype(self))
    }
}

impl fmt::Display for ProtocolType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&crate::syntax::print_protocol(self))
    }
}

impl fmt::Display for Process {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&crate::syntax::print_process(self))
    }
}


/// Serialized as concrete syntax.
macro_rules! serialize_as_text {
    ($($t:ty),*) => {$(
        impl Serialize for $t {
            fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.collect_str(self)
            }
        }
    )*};
}

serialize_as_text!(IndexTerm, Prop, Datatype, ProtocolType);
