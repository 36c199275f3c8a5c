use crate::ast::{ArithOp, Datatype, IndexTerm, Process, Prop, ProtocolType, ANON_BINDER};

const ATOM: u8 = 9;

fn index_prec(t: &IndexTerm) -> u8 {
    match t {
        IndexTerm::Bin(ArithOp::Add | ArithOp::Sub, ..) => 6,
        IndexTerm::Bin(ArithOp::Mul | ArithOp::Div, ..) => 7,
        // Conditionals and negative literals always carry their own parens.
        IndexTerm::Int(_) | IndexTerm::Var(_) | IndexTerm::Cond(..) => ATOM,
    }
}

fn index_at(t: &IndexTerm, min: u8, out: &mut String) {
    let wrap = index_prec(t) < min;
    if wrap {
        out.push('(');
    }
    match t {
        IndexTerm::Int(v) if *v < 0 => out.push_str(&format!("({v})")),
        IndexTerm::Int(v) => out.push_str(&v.to_string()),
        IndexTerm::Var(v) => out.push_str(v),
        IndexTerm::Bin(op, l, r) => {
            let p = index_prec(t);
            index_at(l, p, out);
            out.push(' ');
            out.push_str(op.symbol());
            out.push(' ');
            index_at(r, p + 1, out);
        }
        IndexTerm::Cond(test, a, b) => {
            out.push('(');
            prop_at(test, 0, out);
            out.push_str(" ? ");
            index_at(a, 0, out);
            out.push_str(" : ");
            index_at(b, 0, out);
            out.push(')');
        }
    }
    if wrap {
        out.push(')');
    }
}

fn prop_prec(p: &Prop) -> u8 {
    match p {
        Prop::Or(..) => 2,
        Prop::And(..) => 3,
        Prop::Not(_) => 4,
        Prop::Cmp(..) => 5,
        Prop::True => ATOM,
    }
}

fn prop_at(p: &Prop, min: u8, out: &mut String) {
    let prec = prop_prec(p);
    let wrap = prec < min;
    if wrap {
        out.push('(');
    }
    match p {
        Prop::True => out.push_str("true"),
        Prop::Cmp(op, l, r) => {
            index_at(l, 0, out);
            out.push(' ');
            out.push_str(op.symbol());
            out.push(' ');
            index_at(r, 0, out);
        }
        Prop::And(a, b) | Prop::Or(a, b) => {
            prop_at(a, prec, out);
            out.push_str(if matches!(p, Prop::And(..)) {
                " and "
            } else {
                " or "
            });
            prop_at(b, prec + 1, out);
        }
        Prop::Not(a) => {
            out.push_str("not ");
            prop_at(a, prec, out);
        }
    }
    if wrap {
        out.push(')');
    }
}

pub fn print_index(t: &IndexTerm) -> String {
    let mut out = String::new();
    index_at(t, 0, &mut out);
    out
}

pub fn print_prop(p: &Prop) -> String {
    let mut out = String::new();
    prop_at(p, 0, &mut out);
    out
}

pub fn print_datatype(d: &Datatype) -> String {
    match d {
        Datatype::Integer => "integer".to_string(),
        Datatype::Float => "float".to_string(),
        Datatype::Array(elem, len) => format!("{}[{}]", print_datatype(elem), print_index(len)),
        Datatype::Refined { binder, base, pred } => {
            format!("{{{binder}: {} | {}}}", base.keyword(), print_prop(pred))
        }
        Datatype::Hole(h) => format!("?{h}"),
    }
}

/// Message endpoints are juxtaposed, so anything beyond a variable or a
/// non-negative literal is parenthesized.
fn endpoint(t: &IndexTerm) -> String {
    match t {
        IndexTerm::Int(v) if *v >= 0 => v.to_string(),
        IndexTerm::Var(v) => v.clone(),
        IndexTerm::Int(_) | IndexTerm::Cond(..) => print_index(t),
        _ => format!("({})", print_index(t)),
    }
}

struct Layout {
    multiline: bool,
    out: String,
}

impl Layout {
    fn newline(&mut self, indent: usize) {
        if self.multiline {
            self.out.push('\n');
            for _ in 0..indent {
                self.out.push_str("  ");
            }
        } else {
            self.out.push(' ');
        }
    }

    fn block(&mut self, indent: usize, inner: impl FnOnce(&mut Self)) {
        self.out.push_str(" {");
        self.newline(indent + 1);
        inner(self);
        self.newline(indent);
        self.out.push('}');
    }

    fn protocol(&mut self, t: &ProtocolType, indent: usize) {
        let items = t.seq_items();
        for (i, item) in items.iter().enumerate() {
            if i > 0 {
                self.out.push(';');
                self.newline(indent);
            }
            self.protocol_item(item, indent);
        }
    }

    fn protocol_item(&mut self, t: &ProtocolType, indent: usize) {
        match t {
            ProtocolType::Skip => self.out.push_str("skip"),
            ProtocolType::Message { from, to, payload } => {
                self.out.push_str(&format!(
                    "message {} {} {}",
                    endpoint(from),
                    endpoint(to),
                    print_datatype(payload)
                ));
            }
            ProtocolType::Allreduce {
                op,
                binder,
                payload,
                cont,
            } => {
                if binder == ANON_BINDER && **cont == ProtocolType::Skip {
                    self.out.push_str(&format!(
                        "allreduce {} {}",
                        op.keyword(),
                        print_datatype(payload)
                    ));
                } else {
                    self.out.push_str(&format!(
                        "allreduce {} {binder}: {}",
                        op.keyword(),
                        print_datatype(payload)
                    ));
                    self.block(indent, |l| l.protocol(cont, indent + 1));
                }
            }
            ProtocolType::Foreach {
                binder,
                lo,
                hi,
                body,
            } => {
                self.out.push_str(&format!(
                    "foreach {binder}: {}..{}",
                    print_index(lo),
                    print_index(hi)
                ));
                self.block(indent, |l| l.protocol(body, indent + 1));
            }
            ProtocolType::Seq(..) => unreachable!("sequences are flattened by the caller"),
        }
    }

    fn process(&mut self, p: &Process, indent: usize) {
        let mut items = Vec::new();
        flatten_process(p, &mut items);
        for (i, item) in items.iter().enumerate() {
            if i > 0 {
                self.out.push(';');
                self.newline(indent);
            }
            self.process_item(item, indent);
        }
    }

    fn process_item(&mut self, p: &Process, indent: usize) {
        match p {
            Process::Skip => self.out.push_str("skip"),
            Process::Send { to, payload } => {
                self.out.push_str(&format!(
                    "send to {} {}",
                    endpoint(to),
                    print_datatype(payload)
                ));
            }
            Process::Recv { from, payload } => {
                self.out.push_str(&format!(
                    "recv from {} {}",
                    endpoint(from),
                    print_datatype(payload)
                ));
            }
            Process::Allreduce { op, payload } => {
                self.out.push_str(&format!(
                    "allreduce {} {}",
                    op.keyword(),
                    print_datatype(payload)
                ));
            }
            Process::For {
                binder,
                lo,
                hi,
                body,
            } => {
                self.out.push_str(&format!(
                    "for {binder}: {}..{}",
                    print_index(lo),
                    print_index(hi)
                ));
                self.block(indent, |l| l.process(body, indent + 1));
            }
            Process::If { test, then, els } => {
                self.out.push_str(&format!("if {}", print_prop(test)));
                self.block(indent, |l| l.process(then, indent + 1));
                self.out.push_str(" else");
                self.block(indent, |l| l.process(els, indent + 1));
            }
            Process::Constraint { lhs, rhs } => {
                self.out.push_str(&format!(
                    "where {} = {}",
                    print_datatype(lhs),
                    print_datatype(rhs)
                ));
            }
            Process::Seq(..) => unreachable!("sequences are flattened by the caller"),
        }
    }
}

fn flatten_process<'a>(p: &'a Process, out: &mut Vec<&'a Process>) {
    match p {
        Process::Seq(a, b) => {
            flatten_process(a, out);
            flatten_process(b, out);
        }
        other => out.push(other),
    }
}

pub fn print_protocol(t: &ProtocolType) -> String {
    let mut l = Layout {
        multiline: true,
        out: String::new(),
    };
    l.protocol(t, 0);
    l.out
}

/// Single-line rendering, used in traces and diagnostics.
pub fn print_protocol_inline(t: &ProtocolType) -> String {
    let mut l = Layout {
        multiline: false,
        out: String::new(),
    };
    l.protocol(t, 0);
    l.out
}

pub fn print_process(p: &Process) -> String {
    let mut l = Layout {
        multiline: true,
        out: String::new(),
    };
    l.process(p, 0);
    l.out
}
