//! Text formats for protocol types (`.ptype`) and the process language
//! (`.proc`).
//!
//! # Protocol grammar
//!
//! ```text
//! T ::= skip | message I I D | allreduce OP D | allreduce OP x: D { T }
//!     | foreach x: I..I { T } | T ; T
//! D ::= integer | float | D[I] | {x: integer | P} | {x: float | P} | ?name
//! I ::= int | ident | I + I | I - I | I * I | I / I | (I) | P ? I : I
//! P ::= true | I = I | I != I | I < I | I <= I | I > I | I >= I
//!     | P and P | P or P | not P | (P)
//! ```
//!
//! # Process grammar
//!
//! ```text
//! S ::= skip | send to I D | recv from I D | allreduce OP D
//!     | for x: I..I { S } | if P { S } else { S } | where D = D | S ; S
//! ```
//!
//! `;` is right-associative, `#` starts a line comment, `==` is accepted as
//! an alias for `=` and comparisons chain (`1 <= v <= 9`).

mod lexer;
mod parser;
mod printer;

use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::ast::{Process, ProtocolType};

pub use parser::{KEYWORDS, RESERVED};
pub use printer::{
    print_datatype, print_index, print_process, print_prop, print_protocol, print_protocol_inline,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct Pos {
    pub line: usize,
    pub col: usize,
}

/// A 1-based, inclusive source range.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SourceSpan {
    pub file: String,
    pub start_line: usize,
    pub start_col: usize,
    pub end_line: usize,
    pub end_col: usize,
}

impl SourceSpan {
    pub(crate) fn new(start: Pos, end: Pos) -> SourceSpan {
        let end = end.max(start);
        SourceSpan {
            file: "<input>".to_string(),
            start_line: start.line,
            start_col: start.col,
            end_line: end.line,
            end_col: end.col,
        }
    }
}

impl fmt::Display for SourceSpan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.file, self.start_line, self.start_col)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize)]
#[error("{span}: {message}")]
pub struct ParseError {
    pub message: String,
    pub span: SourceSpan,
}

impl ParseError {
    pub(crate) fn new(message: String, span: SourceSpan) -> ParseError {
        ParseError { message, span }
    }

    /// Attaches the file name the text was read from.
    pub fn with_file(mut self, file: impl Into<String>) -> ParseError {
        self.span.file = file.into();
        self
    }
}

pub fn parse_protocol(text: &str) -> Result<ProtocolType, ParseError> {
    let mut p = parser::Parser::new(text)?;
    let t = p.protocol_seq()?;
    p.finish()?;
    Ok(t)
}

pub fn parse_process(text: &str) -> Result<Process, ParseError> {
    let mut p = parser::Parser::new(text)?;
    let s = p.process_seq()?;
    p.finish()?;
    Ok(s)
}

pub fn parse_datatype(text: &str) -> Result<crate::ast::Datatype, ParseError> {
    let mut p = parser::Parser::new(text)?;
    let d = p.datatype()?;
    p.finish()?;
    Ok(d)
}

pub fn parse_index(text: &str) -> Result<crate::ast::IndexTerm, ParseError> {
    let mut p = parser::Parser::new(text)?;
    let t = p.index()?;
    p.finish()?;
    Ok(t)
}

pub fn parse_prop(text: &str) -> Result<crate::ast::Prop, ParseError> {
    let mut p = parser::Parser::new(text)?;
    let t = p.prop()?;
    p.finish()?;
    Ok(t)
}
