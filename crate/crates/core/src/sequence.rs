use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type TokenId = u32;

/// A tokenised prompt bound to a vocabulary. Position `t` is explained using
/// the context `tokens[..t]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    tokens: Vec<TokenId>,
    vocab_size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    surfaces: Option<Vec<String>>,
}

impl TokenSequence {
    pub fn new(tokens: Vec<TokenId>, vocab_size: usize) -> Result<Self> {
        if vocab_size == 0 {
            return Err(Error::Config("vocabulary size must be positive".into()));
        }
        if tokens.len() < 2 {
            return Err(Error::Validation(format!(
                "a sequence needs at least one context token and one target, got {} token(s)",
                tokens.len()
            )));
        }
        validate_tokens(&tokens, vocab_size)?;
        Ok(Self {
            tokens,
            vocab_size,
            surfaces: None,
        })
    }

    pub fn with_surfaces(mut self, surfaces: Vec<String>) -> Result<Self> {
        if surfaces.len() != self.tokens.len() {
            return Err(Error::LengthMismatch {
                expected: self.tokens.len(),
                actual: surfaces.len(),
            });
        }
        self.surfaces = Some(surfaces);
        Ok(self)
    }

    pub fn tokens(&self) -> &[TokenId] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn surfaces(&self) -> Option<&[String]> {
        self.surfaces.as_deref()
    }

    /// Display string for the token at `pos`: its surface form when known,
    /// otherwise the numeric id.
    pub fn surface(&self, pos: usize) -> String {
        match &self.surfaces {
            Some(s) => s[pos].clone(),
            None => self.tokens[pos].to_string(),
        }
    }

    /// Context preceding `target_pos`.
    pub fn context(&self, target_pos: usize) -> Result<&[TokenId]> {
        self.check_target(target_pos)?;
        Ok(&self.tokens[..target_pos])
    }

    pub fn target(&self, target_pos: usize) -> Result<TokenId> {
        self.check_target(target_pos)?;
        Ok(self.tokens[target_pos])
    }

    fn check_target(&self, target_pos: usize) -> Result<()> {
        if target_pos == 0 {
            return Err(Error::EmptyContext);
        }
        if target_pos >= self.tokens.len() {
            return Err(Error::Validation(format!(
                "target position {target_pos} is outside a sequence of length {}",
                self.tokens.len()
            )));
        }
        Ok(())
    }
}

pub(crate) fn validate_tokens(tokens: &[TokenId], vocab_size: usize) -> Result<()> {
    match tokens.iter().find(|&&t| t as usize >= vocab_size) {
        Some(&token) => Err(Error::InvalidToken { token, vocab_size }),
        None => Ok(()),
    }
}
