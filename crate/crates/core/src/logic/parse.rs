//! Text grammar for co-safe LTL.
//!
//! ```text
//! expr   := or
//! or     := and ('|' and)*
//! and    := until ('&' until)*
//! until  := unary ('U' until)?          right-associative
//! unary  := ('!' | 'X' | 'F') unary | atom | 'true' | 'false' | '(' expr ')'
//! ```
//!
//! Negation is pushed down to the atoms while building the [`Formula`];
//! anything that cannot be brought into the co-safe fragment is rejected.

use super::formula::Formula;
use super::LogicError;

#[derive(Clone, Debug, PartialEq)]
enum Token {
    Ident(String),
    True,
    False,
    Not,
    And,
    Or,
    Next,
    Until,
    Eventually,
    Globally,
    LParen,
    RParen,
}

fn tokenize(text: &str) -> Result<Vec<(usize, Token)>, LogicError> {
    let mut out = Vec::new();
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let single = match c {
            '!' => Some(Token::Not),
            '&' => Some(Token::And),
            '|' => Some(Token::Or),
            '(' => Some(Token::LParen),
            ')' => Some(Token::RParen),
            _ => None,
        };
        if let Some(tok) = single {
            out.push((i, tok));
            i += 1;
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            let word = &text[start..i];
            let tok = match word {
                "true" => Token::True,
                "false" => Token::False,
                "X" => Token::Next,
                "U" => Token::Until,
                "F" => Token::Eventually,
                "G" => Token::Globally,
                _ => Token::Ident(word.to_string()),
            };
            out.push((start, tok));
            continue;
        }
        return Err(LogicError::Syntax {
            pos: i,
            msg: format!("unexpected character '{c}'"),
        });
    }
    Ok(out)
}

/// Syntax tree before negation push-down.
enum Raw {
    True,
    False,
    Atom(String),
    Not(Box<Raw>),
    And(Box<Raw>, Box<Raw>),
    Or(Box<Raw>, Box<Raw>),
    Next(Box<Raw>),
    Until(Box<Raw>, Box<Raw>),
    Eventually(Box<Raw>),
    Globally,
}

struct Parser {
    tokens: Vec<(usize, Token)>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos).map(|(_, t)| t)
    }

    fn offset(&self) -> usize {
        self.tokens.get(self.pos).map(|(p, _)| *p).unwrap_or(self.end)
    }

    fn error(&self, msg: impl Into<String>) -> LogicError {
        LogicError::Syntax {
            pos: self.offset(),
            msg: msg.into(),
        }
    }

    fn or(&mut self) -> Result<Raw, LogicError> {
        let mut lhs = self.and()?;
        while self.peek() == Some(&Token::Or) {
            self.pos += 1;
            let rhs = self.and()?;
            lhs = Raw::Or(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn and(&mut self) -> Result<Raw, LogicError> {
        let mut lhs = self.until()?;
        while self.peek() == Some(&Token::And) {
            self.pos += 1;
            let rhs = self.until()?;
            lhs = Raw::And(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn until(&mut self) -> Result<Raw, LogicError> {
        let lhs = self.unary()?;
        if self.peek() == Some(&Token::Until) {
            self.pos += 1;
            let rhs = self.until()?;
            return Ok(Raw::Until(Box::new(lhs), Box::new(rhs)));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Raw, LogicError> {
        let tok = self
            .peek()
            .cloned()
            .ok_or_else(|| self.error("unexpected end of input"))?;
        self.pos += 1;
        match tok {
            Token::Not => Ok(Raw::Not(Box::new(self.unary()?))),
            Token::Next => Ok(Raw::Next(Box::new(self.unary()?))),
            Token::Eventually => Ok(Raw::Eventually(Box::new(self.unary()?))),
            Token::Globally => {
                self.unary()?;
                Ok(Raw::Globally)
            }
            Token::True => Ok(Raw::True),
            Token::False => Ok(Raw::False),
            Token::Ident(name) => Ok(Raw::Atom(name)),
            Token::LParen => {
                let inner = self.or()?;
                if self.peek() != Some(&Token::RParen) {
                    return Err(self.error("expected ')'"));
                }
                self.pos += 1;
                Ok(inner)
            }
            other => {
                self.pos -= 1;
                Err(self.error(format!("unexpected token {other:?}")))
            }
        }
    }
}

fn to_pnf(raw: &Raw, negated: bool) -> Result<Formula, LogicError> {
    Ok(match raw {
        Raw::True => bool_const(!negated),
        Raw::False => bool_const(negated),
        Raw::Atom(a) if negated => Formula::not_atom(a.clone()),
        Raw::Atom(a) => Formula::atom(a.clone()),
        Raw::Not(inner) => to_pnf(inner, !negated)?,
        Raw::And(l, r) | Raw::Or(l, r) => {
            let parts = [to_pnf(l, negated)?, to_pnf(r, negated)?];
            // De Morgan swaps the connective under negation.
            if matches!(raw, Raw::And(..)) != negated {
                Formula::and(parts)
            } else {
                Formula::or(parts)
            }
        }
        Raw::Next(inner) => Formula::next(to_pnf(inner, negated)?),
        Raw::Until(l, r) => {
            if negated {
                return Err(LogicError::NotCoSafe("negated 'U' is a release".into()));
            }
            Formula::until(to_pnf(l, false)?, to_pnf(r, false)?)
        }
        Raw::Eventually(inner) => {
            if negated {
                return Err(LogicError::NotCoSafe("negated 'F' is an always".into()));
            }
            Formula::eventually(to_pnf(inner, false)?)
        }
        Raw::Globally => return Err(LogicError::NotCoSafe("'G' is outside the co-safe fragment".into())),
    })
}

fn bool_const(b: bool) -> Formula {
    if b {
        Formula::True
    } else {
        Formula::False
    }
}

/// Parse and normalize a co-safe LTL formula.
pub fn parse_co_safe(text: &str) -> Result<Formula, LogicError> {
    let tokens = tokenize(text)?;
    let mut parser = Parser {
        tokens,
        pos: 0,
        end: text.len(),
    };
    let raw = parser.or()?;
    if parser.pos != parser.tokens.len() {
        return Err(parser.error("trailing input"));
    }
    to_pnf(&raw, false)
}
