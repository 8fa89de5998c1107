//! Token vocabulary, greedy encoding and the per-step token mask.
//!
//! A vocabulary document is line oriented: each token is a double-quoted
//! string with C-style escapes, and the single `#eos` directive marks the
//! end-of-sequence token. Every token line and the `#eos` line take the next
//! id in order; blank lines and `#` comments take none.

use std::collections::HashMap;
use std::fmt;

use bitvec::prelude::*;

use crate::escape::{escape_bytes, unescape_quoted};

pub type TokenId = u32;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum VocabError {
    #[error("line {line}: duplicate token {token}")]
    DuplicateToken { line: usize, token: String },
    #[error("vocabulary has no #eos entry")]
    MissingEos,
    #[error("line {line}: second #eos entry")]
    MultipleEos { line: usize },
    #[error("line {line}: empty token (only the eos token may be empty)")]
    EmptyToken { line: usize },
    #[error("line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("cannot encode byte {offset} of input: no token matches")]
    Unencodable { offset: usize },
    #[error("token id {0} out of range")]
    IdOutOfRange(TokenId),
    #[error("eos token at position {0} is not final")]
    EosNotFinal(usize),
}

#[derive(Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<Vec<u8>>,
    eos: TokenId,
    by_bytes: HashMap<Vec<u8>, TokenId>,
    max_len: usize,
}

impl fmt::Debug for Vocabulary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Vocabulary")
            .field("size", &self.tokens.len())
            .field("eos", &self.eos)
            .finish()
    }
}

impl Vocabulary {
    /// Builds a vocabulary from token byte strings; `eos` must index an empty
    /// entry and every other entry must be non-empty and unique.
    pub fn new(tokens: Vec<Vec<u8>>, eos: TokenId) -> Result<Self, VocabError> {
        if eos as usize >= tokens.len() {
            return Err(VocabError::MissingEos);
        }
        let mut by_bytes = HashMap::with_capacity(tokens.len());
        let mut max_len = 0;
        for (id, tok) in tokens.iter().enumerate() {
            if id == eos as usize {
                if !tok.is_empty() {
                    return Err(VocabError::Malformed {
                        line: id,
                        msg: "eos token must have an empty byte string".into(),
                    });
                }
                continue;
            }
            if tok.is_empty() {
                return Err(VocabError::EmptyToken { line: id });
            }
            if by_bytes.insert(tok.clone(), id as TokenId).is_some() {
                return Err(VocabError::DuplicateToken {
                    line: id,
                    token: escape_bytes(tok),
                });
            }
            max_len = max_len.max(tok.len());
        }
        Ok(Self {
            tokens,
            eos,
            by_bytes,
            max_len,
        })
    }

    /// Parses the line-oriented vocabulary document.
    pub fn parse(doc: &str) -> Result<Self, VocabError> {
        let mut tokens = Vec::new();
        let mut seen = HashMap::new();
        let mut eos = None;
        for (lineno, raw) in doc.lines().enumerate() {
            let line_no = lineno + 1;
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if line == "#eos" {
                if eos.is_some() {
                    return Err(VocabError::MultipleEos { line: line_no });
                }
                eos = Some(tokens.len() as TokenId);
                tokens.push(Vec::new());
                continue;
            }
            if line.starts_with('#') {
                continue;
            }
            let bytes = unescape_quoted(line).map_err(|msg| VocabError::Malformed {
                line: line_no,
                msg,
            })?;
            if bytes.is_empty() {
                return Err(VocabError::EmptyToken { line: line_no });
            }
            if seen.insert(bytes.clone(), line_no).is_some() {
                return Err(VocabError::DuplicateToken {
                    line: line_no,
                    token: escape_bytes(&bytes),
                });
            }
            tokens.push(bytes);
        }
        let eos = eos.ok_or(VocabError::MissingEos)?;
        Self::new(tokens, eos)
    }

    /// Renders the vocabulary back into its document form.
    pub fn to_document(&self) -> String {
        let mut out = String::new();
        for (id, tok) in self.tokens.iter().enumerate() {
            if id == self.eos as usize {
                out.push_str("#eos\n");
            } else {
                out.push('"');
                out.push_str(&escape_bytes(tok));
                out.push_str("\"\n");
            }
        }
        out
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn eos(&self) -> TokenId {
        self.eos
    }

    pub fn bytes(&self, id: TokenId) -> Option<&[u8]> {
        self.tokens.get(id as usize).map(Vec::as_slice)
    }

    /// Looks a token up by its exact byte string.
    pub fn id_of(&self, bytes: &[u8]) -> Option<TokenId> {
        self.by_bytes.get(bytes).copied()
    }

    /// Iterates `(id, bytes)` over every token except eos.
    pub fn iter(&self) -> impl Iterator<Item = (TokenId, &[u8])> + '_ {
        self.tokens
            .iter()
            .enumerate()
            .filter(move |(id, _)| *id != self.eos as usize)
            .map(|(id, t)| (id as TokenId, t.as_slice()))
    }

    /// Greedy longest-match segmentation.
    pub fn encode(&self, text: &[u8]) -> Result<Vec<TokenId>, VocabError> {
        let mut out = Vec::new();
        let mut pos = 0;
        while pos < text.len() {
            let longest = (1..=self.max_len.min(text.len() - pos))
                .rev()
                .find_map(|len| self.by_bytes.get(&text[pos..pos + len]).map(|id| (*id, len)));
            match longest {
                Some((id, len)) => {
                    out.push(id);
                    pos += len;
                }
                None => return Err(VocabError::Unencodable { offset: pos }),
            }
        }
        Ok(out)
    }

    /// Concatenates token bytes. Eos may only appear last and adds nothing.
    pub fn decode(&self, ids: &[TokenId]) -> Result<Vec<u8>, VocabError> {
        let mut out = Vec::new();
        for (i, &id) in ids.iter().enumerate() {
            let tok = self.bytes(id).ok_or(VocabError::IdOutOfRange(id))?;
            if id == self.eos && i + 1 != ids.len() {
                return Err(VocabError::EosNotFinal(i));
            }
            out.extend_from_slice(tok);
        }
        Ok(out)
    }

    /// Human-readable form of a token for listings.
    pub fn display(&self, id: TokenId) -> String {
        if id == self.eos {
            "<eos>".to_string()
        } else {
            match self.bytes(id) {
                Some(b) => format!("\"{}\"", escape_bytes(b)),
                None => format!("<{id}?>"),
            }
        }
    }
}

/// Bitset over the vocabulary marking sampleable tokens.
#[derive(Clone, PartialEq, Eq)]
pub struct TokenMask {
    allowed: BitVec,
}

impl fmt::Debug for TokenMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.iter_allowed()).finish()
    }
}

impl TokenMask {
    pub fn none(size: usize) -> Self {
        Self {
            allowed: bitvec![0; size],
        }
    }

    pub fn all(size: usize) -> Self {
        Self {
            allowed: bitvec![1; size],
        }
    }

    pub fn len(&self) -> usize {
        self.allowed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.allowed.is_empty()
    }

    pub fn allow(&mut self, id: TokenId) {
        self.allowed.set(id as usize, true);
    }

    pub fn forbid(&mut self, id: TokenId) {
        self.allowed.set(id as usize, false);
    }

    pub fn is_allowed(&self, id: TokenId) -> bool {
        self.allowed.get(id as usize).map(|b| *b).unwrap_or(false)
    }

    pub fn count(&self) -> usize {
        self.allowed.count_ones()
    }

    pub fn any(&self) -> bool {
        self.allowed.any()
    }

    pub fn iter_allowed(&self) -> impl Iterator<Item = TokenId> + '_ {
        self.allowed.iter_ones().map(|i| i as TokenId)
    }

    /// True when every token allowed here is also allowed in `other`.
    pub fn is_subset(&self, other: &TokenMask) -> bool {
        self.len() == other.len() && self.iter_allowed().all(|id| other.is_allowed(id))
    }
}

/// Prefix trie over the non-eos tokens of a vocabulary.
#[derive(Debug, Clone)]
pub struct VocabTrie {
    nodes: Vec<TrieNode>,
}

#[derive(Debug, Clone, Default)]
pub struct TrieNode {
    pub children: Vec<(u8, usize)>,
    pub token: Option<TokenId>,
}

impl VocabTrie {
    pub fn new(vocab: &Vocabulary) -> Self {
        let mut nodes = vec![TrieNode::default()];
        for (id, bytes) in vocab.iter() {
            let mut cur = 0;
            for &b in bytes {
                cur = match nodes[cur].children.iter().find(|(c, _)| *c == b) {
                    Some(&(_, next)) => next,
                    None => {
                        nodes.push(TrieNode::default());
                        let next = nodes.len() - 1;
                        nodes[cur].children.push((b, next));
                        next
                    }
                };
            }
            nodes[cur].token = Some(id);
        }
        for n in &mut nodes {
            n.children.sort_unstable();
        }
        Self { nodes }
    }

    pub fn root(&self) -> usize {
        0
    }

    pub fn node(&self, idx: usize) -> &TrieNode {
        &self.nodes[idx]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.len() <= 1
    }
}
