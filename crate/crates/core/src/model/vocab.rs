//! Fixed token mapping for the synthetic arithmetic task.
//!
//! | id    | symbol              |
//! |-------|---------------------|
//! | 0..=9 | `'0'..='9'`         |
//! | 10    | `'+'`               |
//! | 11    | `'='`               |
//! | 12    | `' '`               |
//! | 13    | terminator (`'\n'`) |
//!
//! Ids from 14 up to the vocabulary size are valid but never produced by
//! [`encode`]; they decode to `'?'`.

use crate::error::{Result, VpsError};

pub const PLUS: usize = 10;
pub const EQUALS: usize = 11;
pub const SPACE: usize = 12;
pub const EOS: usize = 13;
pub const USED_IDS: usize = 14;

pub fn encode(text: &str) -> Result<Vec<usize>> {
    text.chars()
        .map(|c| match c {
            '0'..='9' => Ok(c as usize - '0' as usize),
            '+' => Ok(PLUS),
            '=' => Ok(EQUALS),
            ' ' => Ok(SPACE),
            '\n' => Ok(EOS),
            other => Err(VpsError::Argument(format!("character {other:?} has no token id"))),
        })
        .collect()
}

pub fn decode(tokens: &[usize]) -> String {
    tokens
        .iter()
        .map(|&t| match t {
            0..=9 => char::from(b'0' + t as u8),
            PLUS => '+',
            EQUALS => '=',
            SPACE => ' ',
            EOS => '\n',
            _ => '?',
        })
        .collect()
}
