//! WordPiece-style subword tokenizer.
//!
//! Vocabularies are learned by frequency-driven pair merging over
//! whitespace-split words, where every non-initial piece carries the `##`
//! continuation prefix. Encoding is greedy longest-match per word.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const MASK: &str = "[MASK]";
pub const SPECIALS: [&str; 5] = [PAD, UNK, CLS, SEP, MASK];
pub const CONTINUATION: &str = "##";

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const CLS_ID: u32 = 2;
pub const SEP_ID: u32 = 3;
pub const MASK_ID: u32 = 4;

const MAX_WORD_CHARS: usize = 100;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    lowercase: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedSequence {
    pub ids: Vec<u32>,
    pub attention_mask: Vec<u8>,
    pub true_length: usize,
}

impl TokenizedSequence {
    pub fn max_len(&self) -> usize {
        self.ids.len()
    }
}

/// Optional tweet cleaners. Both are off by default.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Cleaner {
    pub strip_urls: bool,
    pub strip_mentions: bool,
}

impl Cleaner {
    pub fn apply(&self, text: &str) -> String {
        text.split_whitespace()
            .filter(|w| {
                !(self.strip_urls
                    && (w.starts_with("http://") || w.starts_with("https://") || w.starts_with("www.")))
            })
            .map(|w| if self.strip_mentions && w.starts_with('@') && w.len() > 1 { "@user" } else { w })
            .collect::<Vec<_>>()
            .join(" ")
    }
}

fn split_words(text: &str, lowercase: bool) -> impl Iterator<Item = String> + '_ {
    text.split_whitespace()
        .map(move |w| if lowercase { w.to_lowercase() } else { w.to_string() })
}

impl Vocabulary {
    /// Builds a vocabulary from explicit tokens; specials are prepended.
    pub fn from_tokens<I, S>(tokens: I, lowercase: bool) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let all = SPECIALS
            .iter()
            .map(|s| s.to_string())
            .chain(tokens.into_iter().map(Into::into).filter(|t| !SPECIALS.contains(&t.as_str())));
        Self::from_ordered(all.collect(), lowercase)
    }

    fn from_ordered(tokens: Vec<String>, lowercase: bool) -> Result<Self> {
        for (i, s) in SPECIALS.iter().enumerate() {
            if tokens.get(i).map(String::as_str) != Some(*s) {
                return Err(Error::invalid("vocabulary", format!("special token {s} must have id {i}")));
            }
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(Error::invalid("vocabulary", format!("invalid token {t:?} at id {i}")));
            }
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::invalid("vocabulary", format!("duplicate token {t:?}")));
            }
        }
        Ok(Self {
            tokens,
            index,
            lowercase,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn lowercase(&self) -> bool {
        self.lowercase
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// One token per line, line number = id.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for t in &self.tokens {
            out.push_str(t);
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str, lowercase: bool) -> Result<Self> {
        let body = text.strip_suffix('\n').unwrap_or(text);
        Self::from_ordered(body.split('\n').map(str::to_string).collect(), lowercase)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path, lowercase: bool) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, lowercase)
    }

    /// Greedy longest-match segmentation of a single word. `None` if some
    /// suffix cannot be matched.
    pub fn segment_word(&self, word: &str) -> Option<Vec<u32>> {
        let chars: Vec<char> = word.chars().collect();
        if chars.len() > MAX_WORD_CHARS {
            return None;
        }
        let mut pieces = Vec::new();
        let mut start = 0;
        let mut candidate = String::new();
        while start < chars.len() {
            let mut found = None;
            for end in (start + 1..=chars.len()).rev() {
                candidate.clear();
                if start > 0 {
                    candidate.push_str(CONTINUATION);
                }
                candidate.extend(&chars[start..end]);
                if let Some(id) = self.id(&candidate) {
                    found = Some((id, end));
                    break;
                }
            }
            let (id, end) = found?;
            pieces.push(id);
            start = end;
        }
        Some(pieces)
    }

    pub fn tokenize(&self, text: &str) -> Vec<u32> {
        split_words(text, self.lowercase)
            .flat_map(|w| self.segment_word(&w).unwrap_or_else(|| vec![UNK_ID]))
            .collect()
    }

    /// Inverse of segmentation for covered words: specials are dropped and
    /// `##` pieces glue onto the previous piece.
    pub fn decode(&self, ids: &[u32]) -> String {
        let mut out = String::new();
        for &id in ids {
            if id == UNK_ID {
                if !out.is_empty() {
                    out.push(' ');
                }
                out.push_str(UNK);
                continue;
            }
            let Some(tok) = self.token(id) else { continue };
            if SPECIALS.contains(&tok) {
                continue;
            }
            if let Some(rest) = tok.strip_prefix(CONTINUATION) {
                out.push_str(rest);
            } else {
                if !out.is_empty() {
                    out.push(' ');
                }
                out.push_str(tok);
            }
        }
        out
    }
}

/// Learns a vocabulary of at most `target_size` entries.
///
/// Contents: the specials, every character seen (both as a word-initial piece
/// and as a `##` continuation), then merged pieces in order of pair frequency.
/// Ties go to the lexicographically smallest pair.
pub fn build_vocab<S: AsRef<str>>(corpus: &[S], target_size: usize, min_freq: usize, lowercase: bool) -> Result<Vocabulary> {
    if corpus.is_empty() {
        return Err(Error::invalid("build_vocab", "empty corpus"));
    }
    if target_size <= SPECIALS.len() + 256 {
        return Err(Error::invalid(
            "build_vocab",
            format!("target size {target_size} must exceed {}", SPECIALS.len() + 256),
        ));
    }

    let mut word_freq: BTreeMap<String, usize> = BTreeMap::new();
    for text in corpus {
        for w in split_words(text.as_ref(), lowercase) {
            if w.chars().count() <= MAX_WORD_CHARS {
                *word_freq.entry(w).or_default() += 1;
            }
        }
    }

    let mut alphabet = BTreeSet::new();
    for w in word_freq.keys() {
        for c in w.chars() {
            alphabet.insert(c.to_string());
            alphabet.insert(format!("{CONTINUATION}{c}"));
        }
    }
    if SPECIALS.len() + alphabet.len() > target_size {
        return Err(Error::invalid(
            "build_vocab",
            format!(
                "target size {target_size} is below specials + alphabet ({})",
                SPECIALS.len() + alphabet.len()
            ),
        ));
    }

    let mut symbols: Vec<String> = Vec::new();
    let mut symbol_ids: HashMap<String, u32> = HashMap::new();
    let mut intern = |s: String, symbols: &mut Vec<String>| -> u32 {
        *symbol_ids.entry(s.clone()).or_insert_with(|| {
            symbols.push(s);
            (symbols.len() - 1) as u32
        })
    };

    let mut words: Vec<(Vec<u32>, usize)> = Vec::with_capacity(word_freq.len());
    for (w, &f) in &word_freq {
        let pieces = w
            .chars()
            .enumerate()
            .map(|(i, c)| {
                let s = if i == 0 { c.to_string() } else { format!("{CONTINUATION}{c}") };
                intern(s, &mut symbols)
            })
            .collect();
        words.push((pieces, f));
    }

    let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
    let mut in_vocab: BTreeSet<String> = tokens.iter().cloned().collect();
    for a in &alphabet {
        if in_vocab.insert(a.clone()) {
            tokens.push(a.clone());
        }
    }

    type Pair = (u32, u32);
    let mut counts: HashMap<Pair, usize> = HashMap::new();
    let mut where_: HashMap<Pair, BTreeSet<usize>> = HashMap::new();
    for (wi, (pieces, f)) in words.iter().enumerate() {
        for p in pieces.windows(2) {
            *counts.entry((p[0], p[1])).or_default() += f;
            where_.entry((p[0], p[1])).or_default().insert(wi);
        }
    }

    while tokens.len() < target_size {
        let best = counts
            .iter()
            .filter(|(_, &c)| c > 0 && c >= min_freq)
            .min_by(|(pa, ca), (pb, cb)| {
                cb.cmp(ca)
                    .then_with(|| symbols[pa.0 as usize].cmp(&symbols[pb.0 as usize]))
                    .then_with(|| symbols[pa.1 as usize].cmp(&symbols[pb.1 as usize]))
            })
            .map(|(&p, _)| p);
        let Some(pair) = best else { break };

        let right = symbols[pair.1 as usize].trim_start_matches(CONTINUATION).to_string();
        let merged = format!("{}{}", symbols[pair.0 as usize], right);
        let merged_id = intern(merged.clone(), &mut symbols);
        if in_vocab.insert(merged.clone()) {
            tokens.push(merged);
        }

        let affected = where_.remove(&pair).unwrap_or_default();
        for wi in affected {
            let (pieces, f) = &mut words[wi];
            for p in pieces.windows(2) {
                let key = (p[0], p[1]);
                if let Some(c) = counts.get_mut(&key) {
                    *c -= *f;
                }
            }
            let mut next = Vec::with_capacity(pieces.len());
            let mut i = 0;
            while i < pieces.len() {
                if i + 1 < pieces.len() && (pieces[i], pieces[i + 1]) == pair {
                    next.push(merged_id);
                    i += 2;
                } else {
                    next.push(pieces[i]);
                    i += 1;
                }
            }
            *pieces = next;
            for p in pieces.windows(2) {
                let key = (p[0], p[1]);
                *counts.entry(key).or_default() += *f;
                where_.entry(key).or_default().insert(wi);
            }
        }
        counts.remove(&pair);
    }

    Vocabulary::from_ordered(tokens, lowercase)
}

/// `[CLS] pieces.. [SEP]` then `[PAD]` up to `max_len`. Truncation drops
/// trailing pieces, never the markers.
pub fn encode(text: &str, vocab: &Vocabulary, max_len: usize) -> Result<TokenizedSequence> {
    if max_len < 2 {
        return Err(Error::invalid("encode", format!("max_len {max_len} < 2")));
    }
    let mut pieces = vocab.tokenize(text);
    pieces.truncate(max_len - 2);
    let mut ids = Vec::with_capacity(max_len);
    ids.push(CLS_ID);
    ids.extend(pieces);
    ids.push(SEP_ID);
    let true_length = ids.len();
    ids.resize(max_len, PAD_ID);
    let mut attention_mask = vec![1u8; true_length];
    attention_mask.resize(max_len, 0);
    Ok(TokenizedSequence {
        ids,
        attention_mask,
        true_length,
    })
}

/// Stacks sequences into `(ids[B, T], mask[B, T])`; ids are stored as exact
/// small integers in `f32`.
pub fn pad_batch(seqs: &[TokenizedSequence]) -> Result<(Tensor, Tensor)> {
    let first = seqs
        .first()
        .ok_or_else(|| Error::invalid("pad_batch", "empty batch"))?;
    let t = first.max_len();
    if let Some(bad) = seqs.iter().find(|s| s.max_len() != t) {
        return Err(Error::invalid(
            "pad_batch",
            format!("sequence length {} differs from {t}", bad.max_len()),
        ));
    }
    let ids = seqs.iter().flat_map(|s| s.ids.iter().map(|&i| i as f32)).collect();
    let mask = seqs
        .iter()
        .flat_map(|s| s.attention_mask.iter().map(|&m| f32::from(m)))
        .collect();
    Ok((
        Tensor::new(vec![seqs.len(), t], ids)?,
        Tensor::new(vec![seqs.len(), t], mask)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn play_vocab() -> Vocabulary {
        Vocabulary::from_tokens(["play", "##ing", "p", "##l"], true).unwrap()
    }

    #[test]
    fn merges_frequent_pair() {
        let v = build_vocab(&["aa", "aa", "ab"], 300, 1, true).unwrap();
        for t in ["a", "b", "aa"] {
            assert!(v.contains(t), "missing {t}");
        }
        // (a, ##a) occurs twice and is merged before (a, ##b)
        assert!(v.id("aa").unwrap() < v.id("ab").unwrap());
        assert_eq!(v.id(PAD), Some(0));
    }

    #[test]
    fn build_vocab_preconditions() {
        assert!(build_vocab::<&str>(&[], 300, 1, true).is_err());
        assert!(build_vocab(&["abc"], 261, 1, true).is_err());
        let wide: String = (0..200u32)
            .filter_map(|c| char::from_u32(0x4e00 + c))
            .map(|c| format!("{c} "))
            .collect();
        assert!(build_vocab(&[wide.as_str()], 300, 1, true).is_err());
    }

    #[test]
    fn build_vocab_is_deterministic() {
        let corpus = ["the cat sat", "the hat", "a cat in a hat", "that"];
        let a = build_vocab(&corpus, 400, 1, true).unwrap();
        let b = build_vocab(&corpus, 400, 1, true).unwrap();
        assert_eq!(a.tokens(), b.tokens());
    }

    #[test]
    fn min_freq_stops_merging() {
        let v = build_vocab(&["ab", "cd", "cd"], 300, 2, true).unwrap();
        assert!(v.contains("cd"));
        assert!(!v.contains("ab"));
    }

    #[test]
    fn encode_examples() {
        let v = play_vocab();
        let s = encode("", &v, 6).unwrap();
        assert_eq!(s.ids, vec![CLS_ID, SEP_ID, PAD_ID, PAD_ID, PAD_ID, PAD_ID]);
        assert_eq!(s.true_length, 2);

        let s = encode("playing", &v, 6).unwrap();
        let play = v.id("play").unwrap();
        let ing = v.id("##ing").unwrap();
        assert_eq!(s.ids, vec![CLS_ID, play, ing, SEP_ID, PAD_ID, PAD_ID]);
        assert_eq!(s.attention_mask, vec![1, 1, 1, 1, 0, 0]);

        let s = encode("zzz", &v, 4).unwrap();
        assert_eq!(s.ids, vec![CLS_ID, UNK_ID, SEP_ID, PAD_ID]);
        assert!(encode("x", &v, 1).is_err());
    }

    #[test]
    fn truncation_keeps_markers() {
        let v = play_vocab();
        let s = encode("playing playing playing", &v, 4).unwrap();
        assert_eq!(s.ids.len(), 4);
        assert_eq!(s.ids[0], CLS_ID);
        assert_eq!(s.ids[3], SEP_ID);
        assert_eq!(s.true_length, 4);
    }

    #[test]
    fn pad_batch_examples() {
        let v = play_vocab();
        let one = encode("play", &v, 8).unwrap();
        let (ids, mask) = pad_batch(std::slice::from_ref(&one)).unwrap();
        assert_eq!(ids.shape(), &[1, 8]);
        assert_eq!(ids.data()[1], v.id("play").unwrap() as f32);

        let a = encode("p", &v, 8).unwrap();
        let b = encode("play playing", &v, 8).unwrap();
        let (_, mask2) = pad_batch(&[a.clone(), b]).unwrap();
        let sums: Vec<f32> = (0..2).map(|i| mask2.row(i).iter().sum()).collect();
        assert_eq!(sums, vec![3.0, 5.0]);
        assert_eq!(mask.row(0).iter().sum::<f32>(), 3.0);

        let short = encode("p", &v, 4).unwrap();
        assert!(pad_batch(&[a, short]).is_err());
    }

    #[test]
    fn vocab_file_round_trips() {
        let v = build_vocab(&["hello world", "help"], 300, 1, true).unwrap();
        let text = v.to_text();
        let back = Vocabulary::from_text(&text, true).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.to_text(), text);
        assert!(Vocabulary::from_text("[UNK]\n[PAD]\n", true).is_err());
    }

    #[test]
    fn cleaners_are_opt_in() {
        let text = "see https://t.co/x @bob now";
        assert_eq!(Cleaner::default().apply(text), text);
        let c = Cleaner {
            strip_urls: true,
            strip_mentions: true,
        };
        assert_eq!(c.apply(text), "see @user now");
    }

    #[test]
    fn lowercasing_is_configurable() {
        let lower = Vocabulary::from_tokens(["hi"], true).unwrap();
        let cased = Vocabulary::from_tokens(["hi"], false).unwrap();
        assert_eq!(lower.tokenize("HI"), vec![lower.id("hi").unwrap()]);
        assert_eq!(cased.tokenize("HI"), vec![UNK_ID]);
    }
}
