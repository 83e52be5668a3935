use std::fmt;

use super::LogicError;
use crate::numeric::RngStream;

pub const NUM_VARS: usize = 6;
/// Eleven symbols plus padding.
pub const VOCAB_SIZE: usize = 12;
pub const PAD: usize = 11;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Token {
    Var(u8),
    And,
    Or,
    Not,
    Open,
    Close,
    Pad,
}

impl Token {
    pub fn id(self) -> usize {
        match self {
            Token::Var(v) => v as usize,
            Token::And => 6,
            Token::Or => 7,
            Token::Not => 8,
            Token::Open => 9,
            Token::Close => 10,
            Token::Pad => PAD,
        }
    }

    pub fn from_id(id: usize) -> Option<Token> {
        Some(match id {
            0..=5 => Token::Var(id as u8),
            6 => Token::And,
            7 => Token::Or,
            8 => Token::Not,
            9 => Token::Open,
            10 => Token::Close,
            PAD => Token::Pad,
            _ => return None,
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Token::Var(v) => ["a", "b", "c", "d", "e", "f"][v as usize],
            Token::And => "and",
            Token::Or => "or",
            Token::Not => "not",
            Token::Open => "(",
            Token::Close => ")",
            Token::Pad => "<pad>",
        }
    }

    /// Symbol for every id, in id order.
    pub fn vocab() -> Vec<&'static str> {
        (0..VOCAB_SIZE).map(|i| Token::from_id(i).expect("dense ids").as_str()).collect()
    }

    pub fn from_symbol(s: &str) -> Option<Token> {
        (0..VOCAB_SIZE).map(|i| Token::from_id(i).expect("dense ids")).find(|t| t.as_str() == s)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Sentence {
    Var(u8),
    Not(Box<Sentence>),
    And(Box<Sentence>, Box<Sentence>),
    Or(Box<Sentence>, Box<Sentence>),
}

impl Sentence {
    pub fn var(v: u8) -> Self {
        Sentence::Var(v)
    }

    pub fn not(s: Sentence) -> Self {
        Sentence::Not(Box::new(s))
    }

    pub fn and(a: Sentence, b: Sentence) -> Self {
        Sentence::And(Box::new(a), Box::new(b))
    }

    pub fn or(a: Sentence, b: Sentence) -> Self {
        Sentence::Or(Box::new(a), Box::new(b))
    }

    pub fn op_count(&self) -> usize {
        match self {
            Sentence::Var(_) => 0,
            Sentence::Not(x) => 1 + x.op_count(),
            Sentence::And(a, b) | Sentence::Or(a, b) => 1 + a.op_count() + b.op_count(),
        }
    }

    /// Truth value under an assignment whose bit `j` is variable `j`.
    pub fn eval(&self, assignment: u64) -> bool {
        match self {
            Sentence::Var(v) => assignment >> v & 1 == 1,
            Sentence::Not(x) => !x.eval(assignment),
            Sentence::And(a, b) => a.eval(assignment) && b.eval(assignment),
            Sentence::Or(a, b) => a.eval(assignment) || b.eval(assignment),
        }
    }

    /// Bit `k` is set iff the sentence holds under assignment `k`.
    pub fn satisfying_set(&self) -> u64 {
        (0..1u64 << NUM_VARS).filter(|&k| self.eval(k)).fold(0, |m, k| m | 1 << k)
    }

    pub fn tokens(&self) -> Vec<Token> {
        let mut out = Vec::new();
        self.push_tokens(&mut out);
        out
    }

    fn push_tokens(&self, out: &mut Vec<Token>) {
        match self {
            Sentence::Var(v) => out.push(Token::Var(*v)),
            Sentence::Not(x) => {
                out.extend([Token::Open, Token::Not]);
                x.push_tokens(out);
                out.push(Token::Close);
            }
            Sentence::And(a, b) | Sentence::Or(a, b) => {
                out.push(Token::Open);
                a.push_tokens(out);
                out.push(if matches!(self, Sentence::And(..)) { Token::And } else { Token::Or });
                b.push_tokens(out);
                out.push(Token::Close);
            }
        }
    }

    pub fn token_ids(&self) -> Vec<usize> {
        self.tokens().into_iter().map(Token::id).collect()
    }
}

impl fmt::Display for Sentence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let words: Vec<&str> = self.tokens().into_iter().map(Token::as_str).collect();
        f.write_str(&words.join(" "))
    }
}

/// Random sentence with exactly `ops` operators. Each operator node is
/// Not, And or Or with equal probability; binary nodes split the remaining
/// operators uniformly between their children.
pub fn generate_sentence(rng: &mut RngStream, ops: usize) -> Sentence {
    if ops == 0 {
        return Sentence::Var(rng.below(NUM_VARS as u64) as u8);
    }
    match rng.below(3) {
        0 => Sentence::not(generate_sentence(rng, ops - 1)),
        kind => {
            let left = rng.below(ops as u64) as usize;
            let a = generate_sentence(rng, left);
            let b = generate_sentence(rng, ops - 1 - left);
            if kind == 1 {
                Sentence::and(a, b)
            } else {
                Sentence::or(a, b)
            }
        }
    }
}

/// Recursive-descent parser for the printed form.
pub fn parse(ids: &[usize]) -> Result<Sentence, LogicError> {
    let mut pos = 0;
    let s = parse_expr(ids, &mut pos)?;
    if pos != ids.len() {
        return Err(LogicError::Parse {
            position: pos,
            message: "trailing tokens".into(),
        });
    }
    Ok(s)
}

fn next(ids: &[usize], pos: &mut usize) -> Result<Token, LogicError> {
    let id = *ids.get(*pos).ok_or_else(|| LogicError::Parse {
        position: *pos,
        message: "unexpected end of input".into(),
    })?;
    let tok = Token::from_id(id).ok_or_else(|| LogicError::Parse {
        position: *pos,
        message: format!("unknown token id {id}"),
    })?;
    *pos += 1;
    Ok(tok)
}

fn expect(ids: &[usize], pos: &mut usize, want: Token) -> Result<(), LogicError> {
    let at = *pos;
    match next(ids, pos)? {
        t if t == want => Ok(()),
        t => Err(LogicError::Parse {
            position: at,
            message: format!("expected '{}', found '{}'", want.as_str(), t.as_str()),
        }),
    }
}

fn parse_expr(ids: &[usize], pos: &mut usize) -> Result<Sentence, LogicError> {
    let at = *pos;
    match next(ids, pos)? {
        Token::Var(v) => Ok(Sentence::Var(v)),
        Token::Open => {
            if ids.get(*pos) == Some(&Token::Not.id()) {
                *pos += 1;
                let x = parse_expr(ids, pos)?;
                expect(ids, pos, Token::Close)?;
                return Ok(Sentence::not(x));
            }
            let a = parse_expr(ids, pos)?;
            let op_at = *pos;
            let op = next(ids, pos)?;
            if !matches!(op, Token::And | Token::Or) {
                return Err(LogicError::Parse {
                    position: op_at,
                    message: format!("expected 'and' or 'or', found '{}'", op.as_str()),
                });
            }
            let b = parse_expr(ids, pos)?;
            expect(ids, pos, Token::Close)?;
            Ok(if op == Token::And {
                Sentence::and(a, b)
            } else {
                Sentence::or(a, b)
            })
        }
        t => Err(LogicError::Parse {
            position: at,
            message: format!("unexpected '{}'", t.as_str()),
        }),
    }
}
