use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense 0-based token identifier within a [`Vocabulary`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenId(pub u32);

impl TokenId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl From<usize> for TokenId {
    fn from(i: usize) -> Self {
        TokenId(u32::try_from(i).expect("token id overflows u32"))
    }
}

impl fmt::Display for TokenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// Ordered set of distinct, non-empty, whitespace-free token strings.
#[derive(Clone, Debug, Default)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocabulary {
    pub fn new<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut vocab = Vocabulary::default();
        for token in tokens {
            let token = token.into();
            if token.is_empty() || token.chars().any(char::is_whitespace) {
                return Err(Error::InvalidVocabulary(format!("token {token:?} is empty or contains whitespace")));
            }
            if vocab.index.contains_key(&token) {
                return Err(Error::InvalidVocabulary(format!("duplicate token {token:?}")));
            }
            vocab.push(token);
        }
        Ok(vocab)
    }

    /// Builds a vocabulary from the tokens of `sequences` in first-occurrence order.
    pub fn from_sequences<'a, I, T>(sequences: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a T>,
        T: AsRef<[String]> + 'a + ?Sized,
    {
        let mut vocab = Vocabulary::default();
        for seq in sequences {
            for token in seq.as_ref() {
                if !vocab.index.contains_key(token) {
                    if token.is_empty() || token.chars().any(char::is_whitespace) {
                        return Err(Error::InvalidVocabulary(format!(
                            "token {token:?} is empty or contains whitespace"
                        )));
                    }
                    vocab.push(token.clone());
                }
            }
        }
        Ok(vocab)
    }

    fn push(&mut self, token: String) {
        let id = TokenId::from(self.tokens.len());
        self.index.insert(token.clone(), id);
        self.tokens.push(token);
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    /// Like [`Vocabulary::id`], but an unknown token is an error.
    pub fn require(&self, token: &str) -> Result<TokenId> {
        self.id(token).ok_or_else(|| Error::UnknownToken { token: token.to_owned() })
    }

    pub fn token(&self, id: TokenId) -> &str {
        &self.tokens[id.index()]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn ids(&self) -> impl Iterator<Item = TokenId> + '_ {
        (0..self.tokens.len()).map(TokenId::from)
    }

    pub fn encode(&self, tokens: &[String]) -> Result<Vec<TokenId>> {
        tokens.iter().map(|t| self.require(t)).collect()
    }
}
