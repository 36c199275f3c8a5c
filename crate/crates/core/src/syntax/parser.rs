use super::lexer::{tokenize, Tok, Token};
use super::{ParseError, SourceSpan};
use crate::ast::{
    ArithOp, BaseType, CmpOp, Datatype, IndexTerm, Process, Prop, ProtocolType, ReduceOp,
};

/// Words that can never be used as variable names.
pub const KEYWORDS: &[&str] = &[
    "skip",
    "message",
    "allreduce",
    "foreach",
    "integer",
    "float",
    "true",
    "and",
    "or",
    "not",
    "send",
    "recv",
    "to",
    "from",
    "for",
    "if",
    "else",
    "where",
];

/// Identifiers the process language binds implicitly.
pub const RESERVED: &[&str] = &["rank", "size"];

const OTHER_COLLECTIVES: &[&str] = &[
    "broadcast",
    "bcast",
    "reduce",
    "barrier",
    "gather",
    "scatter",
    "alltoall",
];

// Binding powers, loosest first.
const BP_COND: u8 = 1;
const BP_OR: u8 = 2;
const BP_AND: u8 = 3;
const BP_NOT: u8 = 4;
const BP_CMP: u8 = 5;
const BP_ADD: u8 = 6;
const BP_MUL: u8 = 7;

/// Index terms and propositions share one expression grammar; the sort is
/// checked once the expression is complete.
enum Expr {
    Index(IndexTerm),
    Prop(Prop),
}

pub(crate) struct Parser {
    toks: Vec<Token>,
    pos: usize,
}

type PResult<T> = Result<T, ParseError>;

impl Parser {
    pub(crate) fn new(text: &str) -> PResult<Parser> {
        Ok(Parser {
            toks: tokenize(text)?,
            pos: 0,
        })
    }

    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek_at(&self, offset: usize) -> &Tok {
        let idx = (self.pos + offset).min(self.toks.len() - 1);
        &self.toks[idx].tok
    }

    fn span_here(&self) -> SourceSpan {
        let t = &self.toks[self.pos];
        SourceSpan::new(t.start, t.end)
    }

    fn span_from(&self, start: usize) -> SourceSpan {
        let end = self.pos.saturating_sub(1).max(start);
        SourceSpan::new(self.toks[start].start, self.toks[end].end)
    }

    fn advance(&mut self) -> Tok {
        let t = self.toks[self.pos].tok.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn error<T>(&self, msg: impl Into<String>) -> PResult<T> {
        Err(ParseError::new(msg.into(), self.span_here()))
    }

    fn unexpected<T>(&self, wanted: &str) -> PResult<T> {
        self.error(format!(
            "expected {wanted}, found {}",
            self.peek().describe()
        ))
    }

    fn eat(&mut self, tok: &Tok) -> bool {
        if self.peek() == tok {
            self.advance();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, tok: Tok, wanted: &str) -> PResult<()> {
        if self.eat(&tok) {
            Ok(())
        } else {
            self.unexpected(wanted)
        }
    }

    fn is_word(&self, word: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s == word)
    }

    fn eat_word(&mut self, word: &str) -> bool {
        if self.is_word(word) {
            self.advance();
            true
        } else {
            false
        }
    }

    fn expect_word(&mut self, word: &str) -> PResult<()> {
        if self.eat_word(word) {
            Ok(())
        } else {
            self.unexpected(&format!("`{word}`"))
        }
    }

    fn ident(&mut self, what: &str) -> PResult<String> {
        match self.peek().clone() {
            Tok::Ident(s) if !KEYWORDS.contains(&s.as_str()) => {
                self.advance();
                Ok(s)
            }
            Tok::Ident(s) => self.error(format!("`{s}` is a keyword and cannot be used as {what}")),
            _ => self.unexpected(what),
        }
    }

    pub(crate) fn finish(&mut self) -> PResult<()> {
        if matches!(self.peek(), Tok::Eof) {
            Ok(())
        } else {
            self.unexpected("end of input")
        }
    }

    // ---- expressions ----

    pub(crate) fn index(&mut self) -> PResult<IndexTerm> {
        let start = self.pos;
        let e = self.expr(0)?;
        self.to_index(e, start)
    }

    pub(crate) fn prop(&mut self) -> PResult<Prop> {
        let start = self.pos;
        let e = self.expr(0)?;
        self.to_prop(e, start)
    }

    fn to_index(&self, e: Expr, start: usize) -> PResult<IndexTerm> {
        match e {
            Expr::Index(t) => Ok(t),
            Expr::Prop(_) => Err(ParseError::new(
                "expected an index term, found a proposition".into(),
                self.span_from(start),
            )),
        }
    }

    fn to_prop(&self, e: Expr, start: usize) -> PResult<Prop> {
        match e {
            Expr::Prop(p) => Ok(p),
            Expr::Index(_) => Err(ParseError::new(
                "expected a proposition, found an index term".into(),
                self.span_from(start),
            )),
        }
    }

    fn cmp_op(&self) -> Option<CmpOp> {
        Some(match self.peek() {
            Tok::Eq => CmpOp::Eq,
            Tok::Ne => CmpOp::Ne,
            Tok::Lt => CmpOp::Lt,
            Tok::Le => CmpOp::Le,
            Tok::Gt => CmpOp::Gt,
            Tok::Ge => CmpOp::Ge,
            _ => return None,
        })
    }

    fn expr(&mut self, min_bp: u8) -> PResult<Expr> {
        let start = self.pos;
        let mut lhs = self.prefix()?;
        loop {
            if let Some(op) = self.cmp_op() {
                if min_bp > BP_CMP {
                    break;
                }
                let mut left = self.to_index(lhs, start)?;
                self.advance();
                let rstart = self.pos;
                let e = self.expr(BP_CMP + 1)?;
                let mut right = self.to_index(e, rstart)?;
                let mut prop = Prop::cmp(op, left.clone(), right.clone());
                // `a <= b <= c` is shorthand for `a <= b and b <= c`.
                while let Some(op) = self.cmp_op() {
                    self.advance();
                    left = right;
                    let rstart = self.pos;
                    let e = self.expr(BP_CMP + 1)?;
                    right = self.to_index(e, rstart)?;
                    prop = Prop::and(prop, Prop::cmp(op, left.clone(), right.clone()));
                }
                lhs = Expr::Prop(prop);
                continue;
            }
            let (bp, arith) = match self.peek() {
                Tok::Plus => (BP_ADD, Some(ArithOp::Add)),
                Tok::Minus => (BP_ADD, Some(ArithOp::Sub)),
                Tok::Star => (BP_MUL, Some(ArithOp::Mul)),
                Tok::Slash => (BP_MUL, Some(ArithOp::Div)),
                Tok::Ident(w) if w == "and" => (BP_AND, None),
                Tok::Ident(w) if w == "or" => (BP_OR, None),
                Tok::Question if matches!(lhs, Expr::Prop(_)) => (BP_COND, None),
                _ => break,
            };
            if bp < min_bp {
                break;
            }
            let tok = self.advance();
            lhs = match (tok, arith) {
                (_, Some(op)) => {
                    let l = self.to_index(lhs, start)?;
                    let rstart = self.pos;
                    let e = self.expr(bp + 1)?;
                    Expr::Index(IndexTerm::bin(op, l, self.to_index(e, rstart)?))
                }
                (Tok::Question, None) => {
                    let test = self.to_prop(lhs, start)?;
                    let then = self.index()?;
                    self.expect(Tok::Colon, "`:` in conditional term")?;
                    let estart = self.pos;
                    let e = self.expr(BP_COND)?;
                    Expr::Index(IndexTerm::cond(test, then, self.to_index(e, estart)?))
                }
                (Tok::Ident(w), None) => {
                    let l = self.to_prop(lhs, start)?;
                    let rstart = self.pos;
                    let e = self.expr(bp + 1)?;
                    let r = self.to_prop(e, rstart)?;
                    Expr::Prop(if w == "and" {
                        Prop::and(l, r)
                    } else {
                        Prop::or(l, r)
                    })
                }
                _ => unreachable!("operator table covers every case"),
            };
        }
        Ok(lhs)
    }

    fn prefix(&mut self) -> PResult<Expr> {
        match self.peek().clone() {
            Tok::Int(v) => {
                self.advance();
                Ok(Expr::Index(IndexTerm::Int(v)))
            }
            Tok::Minus => {
                if let Tok::Int(v) = *self.peek_at(1) {
                    self.advance();
                    self.advance();
                    Ok(Expr::Index(IndexTerm::Int(-v)))
                } else {
                    self.error("unary minus only applies to integer literals")
                }
            }
            Tok::LParen => {
                self.advance();
                let e = self.expr(0)?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(e)
            }
            Tok::Ident(w) if w == "true" => {
                self.advance();
                Ok(Expr::Prop(Prop::True))
            }
            Tok::Ident(w) if w == "not" => {
                self.advance();
                let start = self.pos;
                let e = self.expr(BP_NOT)?;
                Ok(Expr::Prop(Prop::not(self.to_prop(e, start)?)))
            }
            Tok::Ident(_) => Ok(Expr::Index(IndexTerm::Var(self.ident("a variable")?))),
            _ => self.unexpected("an index term or proposition"),
        }
    }

    // ---- datatypes ----

    pub(crate) fn datatype(&mut self) -> PResult<Datatype> {
        let mut d = match self.peek().clone() {
            Tok::Ident(w) if w == "integer" => {
                self.advance();
                Datatype::Integer
            }
            Tok::Ident(w) if w == "float" => {
                self.advance();
                Datatype::Float
            }
            Tok::LBrace => {
                self.advance();
                let binder = self.ident("a refinement binder")?;
                self.expect(Tok::Colon, "`:` after refinement binder")?;
                let base = if self.eat_word("integer") {
                    BaseType::Integer
                } else if self.eat_word("float") {
                    BaseType::Float
                } else {
                    return self.unexpected("`integer` or `float`");
                };
                self.expect(Tok::Bar, "`|` in refinement")?;
                let pred = self.prop()?;
                self.expect(Tok::RBrace, "`}` closing refinement")?;
                Datatype::Refined { binder, base, pred }
            }
            Tok::Question => {
                self.advance();
                Datatype::Hole(self.ident("a placeholder name")?)
            }
            _ => return self.unexpected("a datatype"),
        };
        while self.eat(&Tok::LBracket) {
            let len = self.index()?;
            self.expect(Tok::RBracket, "`]`")?;
            d = Datatype::array(d, len);
        }
        Ok(d)
    }

    fn reduce_op(&mut self) -> PResult<ReduceOp> {
        match self.peek().clone() {
            Tok::Ident(w) => match ReduceOp::from_keyword(&w) {
                Some(op) => {
                    self.advance();
                    Ok(op)
                }
                None => self.error(format!(
                    "unknown reduction operator `{w}` (expected min, max, sum or prod)"
                )),
            },
            _ => self.unexpected("a reduction operator"),
        }
    }

    fn reject_other_collective(&self) -> PResult<()> {
        if let Tok::Ident(w) = self.peek() {
            if OTHER_COLLECTIVES.contains(&w.as_str()) {
                return self.error(format!(
                    "unsupported collective `{w}`: only allreduce is available"
                ));
            }
        }
        Ok(())
    }

    // ---- protocols ----

    pub(crate) fn protocol_seq(&mut self) -> PResult<ProtocolType> {
        let mut items = vec![self.protocol_item()?];
        while self.eat(&Tok::Semi) {
            if matches!(self.peek(), Tok::RBrace | Tok::Eof) {
                break;
            }
            items.push(self.protocol_item()?);
        }
        Ok(ProtocolType::seq_of(items))
    }

    fn block<T>(&mut self, inner: impl FnOnce(&mut Self) -> PResult<T>) -> PResult<T> {
        self.expect(Tok::LBrace, "`{`")?;
        let out = inner(self)?;
        self.expect(Tok::RBrace, "`}`")?;
        Ok(out)
    }

    fn protocol_item(&mut self) -> PResult<ProtocolType> {
        self.reject_other_collective()?;
        if self.eat_word("skip") {
            Ok(ProtocolType::Skip)
        } else if self.eat_word("message") {
            let from = self.index()?;
            let to = self.index()?;
            let payload = self.datatype()?;
            Ok(ProtocolType::Message { from, to, payload })
        } else if self.eat_word("allreduce") {
            let op = self.reduce_op()?;
            if matches!(self.peek(), Tok::Ident(_)) && *self.peek_at(1) == Tok::Colon {
                let binder = self.ident("an allreduce binder")?;
                self.advance();
                let payload = self.datatype()?;
                let cont = self.block(Self::protocol_seq)?;
                Ok(ProtocolType::Allreduce {
                    op,
                    binder,
                    payload,
                    cont: Box::new(cont),
                })
            } else {
                Ok(ProtocolType::allreduce(op, self.datatype()?))
            }
        } else if self.eat_word("foreach") {
            let binder = self.ident("a loop variable")?;
            self.expect(Tok::Colon, "`:` after loop variable")?;
            let lo = self.index()?;
            self.expect(Tok::DotDot, "`..` in loop range")?;
            let hi = self.index()?;
            let body = self.block(Self::protocol_seq)?;
            Ok(ProtocolType::Foreach {
                binder,
                lo,
                hi,
                body: Box::new(body),
            })
        } else {
            self.unexpected("`skip`, `message`, `allreduce` or `foreach`")
        }
    }

    // ---- processes ----

    pub(crate) fn process_seq(&mut self) -> PResult<Process> {
        let mut items = vec![self.process_item()?];
        while self.eat(&Tok::Semi) {
            if matches!(self.peek(), Tok::RBrace | Tok::Eof) {
                break;
            }
            items.push(self.process_item()?);
        }
        let mut acc = items.pop().expect("at least one item");
        while let Some(prev) = items.pop() {
            acc = Process::seq(prev, acc);
        }
        Ok(acc)
    }

    fn process_item(&mut self) -> PResult<Process> {
        self.reject_other_collective()?;
        if self.eat_word("skip") {
            Ok(Process::Skip)
        } else if self.eat_word("send") {
            self.expect_word("to")?;
            let to = self.index()?;
            Ok(Process::Send {
                to,
                payload: self.datatype()?,
            })
        } else if self.eat_word("recv") {
            self.expect_word("from")?;
            let from = self.index()?;
            Ok(Process::Recv {
                from,
                payload: self.datatype()?,
            })
        } else if self.eat_word("allreduce") {
            let op = self.reduce_op()?;
            Ok(Process::Allreduce {
                op,
                payload: self.datatype()?,
            })
        } else if self.eat_word("for") {
            let here = self.span_here();
            let binder = self.ident("a loop variable")?;
            if RESERVED.contains(&binder.as_str()) {
                return Err(ParseError::new(
                    format!("`{binder}` is reserved and cannot be rebound"),
                    here,
                ));
            }
            self.expect(Tok::Colon, "`:` after loop variable")?;
            let lo = self.index()?;
            self.expect(Tok::DotDot, "`..` in loop range")?;
            let hi = self.index()?;
            let body = self.block(Self::process_seq)?;
            Ok(Process::For {
                binder,
                lo,
                hi,
                body: Box::new(body),
            })
        } else if self.eat_word("if") {
            let test = self.prop()?;
            let then = self.block(Self::process_seq)?;
            let els = if self.eat_word("else") {
                self.block(Self::process_seq)?
            } else {
                Process::Skip
            };
            Ok(Process::If {
                test,
                then: Box::new(then),
                els: Box::new(els),
            })
        } else if self.eat_word("where") {
            let lhs = self.datatype()?;
            self.expect(Tok::Eq, "`=` in datatype constraint")?;
            let rhs = self.datatype()?;
            Ok(Process::Constraint { lhs, rhs })
        } else {
            self.unexpected("`skip`, `send`, `recv`, `allreduce`, `for`, `if` or `where`")
        }
    }
}
