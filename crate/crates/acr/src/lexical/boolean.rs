//! Boolean query language over the inverted index.
//!
//! Grammar (keywords case-insensitive, `NOT` binds tightest, then `AND`,
//! then `OR`, all left-associative):
//!
//! ```text
//! expr := or
//! or   := and (OR and)*
//! and  := not (AND not)*
//! not  := NOT not | atom
//! atom := TERM | "(" expr ")"
//! ```

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::lexical::{tokenize, LexicalIndex};

/// Parsed Boolean query tree. `Term` leaves hold single lowercase tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BooleanExpr {
    Term(String),
    And(Box<BooleanExpr>, Box<BooleanExpr>),
    Or(Box<BooleanExpr>, Box<BooleanExpr>),
    Not(Box<BooleanExpr>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    LParen,
    RParen,
    And,
    Or,
    Not,
    Term(String),
}

/// Lexer output: token plus the byte offset where it starts.
fn lex(input: &str) -> Result<Vec<(usize, Tok)>> {
    let mut toks = Vec::new();
    let mut chars = input.char_indices().peekable();
    while let Some(&(offset, ch)) = chars.peek() {
        if ch.is_whitespace() {
            chars.next();
        } else if ch == '(' {
            chars.next();
            toks.push((offset, Tok::LParen));
        } else if ch == ')' {
            chars.next();
            toks.push((offset, Tok::RParen));
        } else if ch.is_alphanumeric() {
            let mut word = String::new();
            while let Some(&(_, c)) = chars.peek() {
                if c.is_alphanumeric() {
                    word.push(c);
                    chars.next();
                } else {
                    break;
                }
            }
            let tok = match word.to_ascii_uppercase().as_str() {
                "AND" => Tok::And,
                "OR" => Tok::Or,
                "NOT" => Tok::Not,
                _ => {
                    let mut tokens = tokenize(&word);
                    debug_assert_eq!(tokens.len(), 1, "alphanumeric run is one token");
                    Tok::Term(tokens.pop().unwrap_or_default())
                }
            };
            toks.push((offset, tok));
        } else {
            return Err(Error::Syntax {
                offset,
                message: format!("unexpected character {ch:?}"),
            });
        }
    }
    Ok(toks)
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    pos: usize,
    input_len: usize,
}

impl Parser {
    fn peek(&self) -> Option<&(usize, Tok)> {
        self.toks.get(self.pos)
    }

    fn offset(&self) -> usize {
        self.peek().map_or(self.input_len, |(o, _)| *o)
    }

    fn bump(&mut self) -> Option<(usize, Tok)> {
        let tok = self.toks.get(self.pos).cloned();
        if tok.is_some() {
            self.pos += 1;
        }
        tok
    }

    fn error(&self, message: impl Into<String>) -> Error {
        Error::Syntax {
            offset: self.offset(),
            message: message.into(),
        }
    }

    fn parse_or(&mut self) -> Result<BooleanExpr> {
        let mut lhs = self.parse_and()?;
        while matches!(self.peek(), Some((_, Tok::Or))) {
            self.bump();
            let rhs = self.parse_and()?;
            lhs = BooleanExpr::Or(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn parse_and(&mut self) -> Result<BooleanExpr> {
        let mut lhs = self.parse_not()?;
        while matches!(self.peek(), Some((_, Tok::And))) {
            self.bump();
            let rhs = self.parse_not()?;
            lhs = BooleanExpr::And(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn parse_not(&mut self) -> Result<BooleanExpr> {
        if matches!(self.peek(), Some((_, Tok::Not))) {
            self.bump();
            let inner = self.parse_not()?;
            return Ok(BooleanExpr::Not(Box::new(inner)));
        }
        self.parse_atom()
    }

    fn parse_atom(&mut self) -> Result<BooleanExpr> {
        match self.peek().cloned() {
            Some((_, Tok::Term(term))) => {
                self.bump();
                Ok(BooleanExpr::Term(term))
            }
            Some((open, Tok::LParen)) => {
                self.bump();
                let inner = self.parse_or()?;
                match self.bump() {
                    Some((_, Tok::RParen)) => Ok(inner),
                    _ => Err(Error::Syntax {
                        offset: open,
                        message: "unbalanced parenthesis".into(),
                    }),
                }
            }
            _ => Err(self.error("expected a term or '('")),
        }
    }
}

/// Parses a Boolean query. Errors carry the byte offset of the problem.
pub fn parse_boolean(input: &str) -> Result<BooleanExpr> {
    let toks = lex(input)?;
    let mut parser = Parser {
        toks,
        pos: 0,
        input_len: input.len(),
    };
    let expr = parser.parse_or()?;
    match parser.peek() {
        None => Ok(expr),
        Some((offset, Tok::RParen)) => Err(Error::Syntax {
            offset: *offset,
            message: "unbalanced parenthesis".into(),
        }),
        Some((offset, _)) => Err(Error::Syntax {
            offset: *offset,
            message: "trailing input after expression".into(),
        }),
    }
}

/// Evaluates a Boolean query to a set of chunk ids.
///
/// `Term` resolves to the term's posting set; `NOT` complements against the
/// full chunk-id universe of the index.
pub fn eval_boolean(index: &LexicalIndex, expr: &BooleanExpr) -> BTreeSet<String> {
    match expr {
        BooleanExpr::Term(term) => index
            .postings(term)
            .map(|postings| postings.iter().map(|(id, _)| id.clone()).collect())
            .unwrap_or_default(),
        BooleanExpr::And(a, b) => {
            let sa = eval_boolean(index, a);
            let sb = eval_boolean(index, b);
            sa.intersection(&sb).cloned().collect()
        }
        BooleanExpr::Or(a, b) => {
            let sa = eval_boolean(index, a);
            let sb = eval_boolean(index, b);
            sa.union(&sb).cloned().collect()
        }
        BooleanExpr::Not(inner) => {
            let excluded = eval_boolean(index, inner);
            index
                .chunk_ids()
                .filter(|id| !excluded.contains(*id))
                .map(str::to_string)
                .collect()
        }
    }
}
