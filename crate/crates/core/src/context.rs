//! Tokens, fixed-order contexts, and the positional row encoding.
//!
//! Policies are tables over all length-m contexts. A context maps to its table
//! row via a base-V positional code with the most recent token in the least
//! significant digit, which makes "slide the window and append" a cheap
//! arithmetic update on row indices.

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::Result;

/// Vocabulary token id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Token(pub u16);

impl Token {
    pub fn id(self) -> usize {
        self.0 as usize
    }
}

/// Teacher branch a batch or prompt belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    General,
    Domain,
}

impl std::fmt::Display for Branch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Branch::General => write!(f, "general"),
            Branch::Domain => write!(f, "domain"),
        }
    }
}

/// The last m tokens, oldest first.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Context {
    tokens: Vec<Token>,
}

impl Context {
    /// Build a context from exactly m tokens, validating ids against V.
    pub fn new(tokens: Vec<Token>, vocab: usize, order: usize) -> Result<Self> {
        if tokens.len() != order {
            return Err(Error::LengthMismatch {
                left: tokens.len(),
                right: order,
            });
        }
        for t in &tokens {
            if t.id() >= vocab {
                return Err(Error::InvalidToken { id: t.id(), vocab });
            }
        }
        Ok(Context { tokens })
    }

    /// Build from up to m trailing tokens; shorter inputs are left-padded with
    /// the BOS token (id 0).
    pub fn padded(tail: &[Token], vocab: usize, order: usize) -> Result<Self> {
        if tail.len() > order {
            return Err(Error::LengthMismatch {
                left: tail.len(),
                right: order,
            });
        }
        let mut tokens = vec![Token(0); order - tail.len()];
        tokens.extend_from_slice(tail);
        Context::new(tokens, vocab, order)
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn order(&self) -> usize {
        self.tokens.len()
    }

    /// Slide the window: drop the oldest token, append `next`.
    pub fn advance(&self, next: Token) -> Context {
        let mut tokens = Vec::with_capacity(self.tokens.len());
        tokens.extend_from_slice(&self.tokens[1..]);
        tokens.push(next);
        Context { tokens }
    }
}

/// Base-V positional code of a length-m context; most recent token is the
/// least significant digit. Bijective onto [0, V^m).
pub fn encode_context(ctx: &Context, vocab: usize, order: usize) -> Result<usize> {
    if ctx.order() != order {
        return Err(Error::LengthMismatch {
            left: ctx.order(),
            right: order,
        });
    }
    let mut row = 0usize;
    for t in ctx.tokens() {
        if t.id() >= vocab {
            return Err(Error::InvalidToken { id: t.id(), vocab });
        }
        row = row * vocab + t.id();
    }
    Ok(row)
}

/// Inverse of [`encode_context`].
pub fn decode_context(row: usize, vocab: usize, order: usize) -> Result<Context> {
    let rows = vocab.pow(order as u32);
    if row >= rows {
        return Err(Error::RowOutOfRange { row, rows });
    }
    let mut tokens = vec![Token(0); order];
    let mut rest = row;
    for slot in (0..order).rev() {
        tokens[slot] = Token((rest % vocab) as u16);
        rest /= vocab;
    }
    Ok(Context { tokens })
}

/// Row-index form of [`Context::advance`]: drop the most significant digit,
/// shift, append `next` as the new least significant digit.
pub fn advance_row(row: usize, next: Token, vocab: usize, order: usize) -> usize {
    debug_assert!(next.id() < vocab);
    let high = vocab.pow(order as u32 - 1);
    (row % high) * vocab + next.id()
}

/// A rollout start point: seed context plus the branch it belongs to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prompt {
    pub id: usize,
    pub seed: Context,
    pub branch: Branch,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx(ids: &[u16], vocab: usize) -> Context {
        Context::new(ids.iter().map(|&i| Token(i)).collect(), vocab, ids.len()).unwrap()
    }

    #[test]
    fn encode_known_values() {
        assert_eq!(encode_context(&ctx(&[0, 0], 12), 12, 2).unwrap(), 0);
        assert_eq!(encode_context(&ctx(&[0, 1], 12), 12, 2).unwrap(), 1);
        assert_eq!(encode_context(&ctx(&[3, 5], 12), 12, 2).unwrap(), 41);
    }

    #[test]
    fn encode_rejects_bad_inputs() {
        let short = ctx(&[3], 12);
        assert!(matches!(
            encode_context(&short, 12, 2),
            Err(Error::LengthMismatch { left: 1, right: 2 })
        ));
        assert!(matches!(
            Context::new(vec![Token(12), Token(0)], 12, 2),
            Err(Error::InvalidToken { id: 12, vocab: 12 })
        ));
    }

    #[test]
    fn encode_decode_bijection_exhaustive() {
        // Default table shape: V = 12, m = 2, 144 rows.
        let mut seen = [false; 144];
        for a in 0..12u16 {
            for b in 0..12u16 {
                let c = ctx(&[a, b], 12);
                let row = encode_context(&c, 12, 2).unwrap();
                assert!(!seen[row], "row {row} hit twice");
                seen[row] = true;
                assert_eq!(decode_context(row, 12, 2).unwrap(), c);
            }
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn decode_rejects_out_of_range_row() {
        assert!(matches!(
            decode_context(144, 12, 2),
            Err(Error::RowOutOfRange {
                row: 144,
                rows: 144
            })
        ));
    }

    #[test]
    fn advance_row_agrees_with_context_advance() {
        for row in 0..144 {
            let c = decode_context(row, 12, 2).unwrap();
            for next in 0..12u16 {
                let stepped = c.advance(Token(next));
                let direct = advance_row(row, Token(next), 12, 2);
                assert_eq!(encode_context(&stepped, 12, 2).unwrap(), direct);
            }
        }
    }

    #[test]
    fn padded_prepends_bos() {
        let c = Context::padded(&[Token(5)], 12, 2).unwrap();
        assert_eq!(c.tokens(), &[Token(0), Token(5)]);
        let full = Context::padded(&[Token(3), Token(5)], 12, 2).unwrap();
        assert_eq!(encode_context(&full, 12, 2).unwrap(), 41);
        assert!(Context::padded(&[Token(1), Token(2), Token(3)], 12, 2).is_err());
    }

    #[test]
    fn higher_order_roundtrip() {
        // Spot-check a non-default shape: V = 5, m = 3.
        for row in [0usize, 1, 24, 63, 124] {
            let c = decode_context(row, 5, 3).unwrap();
            assert_eq!(encode_context(&c, 5, 3).unwrap(), row);
        }
    }
}
