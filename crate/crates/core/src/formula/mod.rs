//! Tokenizer, parser and printer for Wilkinson-style model formulae.
//!
//! One grammar covers both random-effect dialects: grouped terms such as
//! `(1 + Time | Chick)` and structural calls such as `us(site):id(gen)`.
//! Which constructs are legal where is decided by the lowering passes, not
//! here.

mod ast;
mod parser;
mod token;

pub use ast::{Arg, Expr, Formula, Func};
pub use parser::{parse, parse_formula};
pub use token::{tokenize, Token, TokenKind};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("unexpected character `{character}` at byte {position}")]
    UnexpectedCharacter { character: char, position: usize },
    #[error("unterminated string literal starting at byte {position}")]
    UnterminatedString { position: usize },
    #[error("unbalanced parentheses at byte {position}")]
    UnbalancedParentheses { position: usize },
    #[error("operator `{operator}` at byte {position} has no right operand")]
    DanglingOperator { operator: String, position: usize },
    #[error("formula has an empty right-hand side")]
    EmptyRhs,
    #[error("formula has no `~`")]
    MissingTilde,
    #[error("`|` at byte {position} must be enclosed in parentheses")]
    BarOutsideParentheses { position: usize },
    #[error("unknown function `{name}` at byte {position}")]
    UnknownFunction { name: String, position: usize },
    #[error("exponent `{text}` at byte {position} must be an integer >= 2")]
    InvalidExponent { text: String, position: usize },
    #[error("numeric literal `{text}` at byte {position} is only allowed as a function argument or exponent")]
    InvalidNumber { text: String, position: usize },
    #[error("unexpected `{found}` at byte {position}")]
    UnexpectedToken { found: String, position: usize },
}

impl ParseError {
    /// Byte offset the error points at, when it has one.
    pub fn position(&self) -> Option<usize> {
        match self {
            ParseError::UnexpectedCharacter { position, .. }
            | ParseError::UnterminatedString { position }
            | ParseError::UnbalancedParentheses { position }
            | ParseError::DanglingOperator { position, .. }
            | ParseError::BarOutsideParentheses { position }
            | ParseError::UnknownFunction { position, .. }
            | ParseError::InvalidExponent { position, .. }
            | ParseError::InvalidNumber { position, .. }
            | ParseError::UnexpectedToken { position, .. } => Some(*position),
            ParseError::EmptyRhs | ParseError::MissingTilde => None,
        }
    }

    /// Short machine-friendly name of the error variant.
    pub fn kind(&self) -> &'static str {
        match self {
            ParseError::UnexpectedCharacter { .. } => "UnexpectedCharacter",
            ParseError::UnterminatedString { .. } => "UnterminatedString",
            ParseError::UnbalancedParentheses { .. } => "UnbalancedParentheses",
            ParseError::DanglingOperator { .. } => "DanglingOperator",
            ParseError::EmptyRhs => "EmptyRhs",
            ParseError::MissingTilde => "MissingTilde",
            ParseError::BarOutsideParentheses { .. } => "BarOutsideParentheses",
            ParseError::UnknownFunction { .. } => "UnknownFunction",
            ParseError::InvalidExponent { .. } => "InvalidExponent",
            ParseError::InvalidNumber { .. } => "InvalidNumber",
            ParseError::UnexpectedToken { .. } => "UnexpectedToken",
        }
    }

    /// Two-line rendering of `source` with a caret under the error position.
    pub fn caret(&self, source: &str) -> Option<String> {
        let pos = self.position()?;
        let col = source[..pos.min(source.len())].chars().count();
        Some(format!("{source}\n{}^", " ".repeat(col)))
    }
}

/// Parses a one-sided formula such as `~ idv(gen)`; a leading `~` is added
/// when missing.
pub fn parse_one_sided(text: &str) -> Result<Formula, ParseError> {
    let trimmed = text.trim_start();
    if trimmed.starts_with('~') {
        parse_formula(text)
    } else {
        let offset = text.len() - trimmed.len();
        parse_formula(&format!("~{trimmed}")).map_err(|e| shift_position(e, offset as isize - 1))
    }
}

fn shift_position(err: ParseError, delta: isize) -> ParseError {
    let shift = |p: usize| (p as isize + delta).max(0) as usize;
    match err {
        ParseError::UnexpectedCharacter {
            character,
            position,
        } => ParseError::UnexpectedCharacter {
            character,
            position: shift(position),
        },
        ParseError::UnterminatedString { position } => ParseError::UnterminatedString {
            position: shift(position),
        },
        ParseError::UnbalancedParentheses { position } => ParseError::UnbalancedParentheses {
            position: shift(position),
        },
        ParseError::DanglingOperator { operator, position } => ParseError::DanglingOperator {
            operator,
            position: shift(position),
        },
        ParseError::BarOutsideParentheses { position } => ParseError::BarOutsideParentheses {
            position: shift(position),
        },
        ParseError::UnknownFunction { name, position } => ParseError::UnknownFunction {
            name,
            position: shift(position),
        },
        ParseError::InvalidExponent { text, position } => ParseError::InvalidExponent {
            text,
            position: shift(position),
        },
        ParseError::InvalidNumber { text, position } => ParseError::InvalidNumber {
            text,
            position: shift(position),
        },
        ParseError::UnexpectedToken { found, position } => ParseError::UnexpectedToken {
            found,
            position: shift(position),
        },
        other => other,
    }
}
