pub mod ast;
pub mod cli;
pub mod extract;
pub mod logic;
pub mod merge;
pub mod oracle;
pub mod syntax;
