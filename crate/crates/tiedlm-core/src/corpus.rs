//! Tokenized corpora: vocabulary construction, encoding, and the
//! contiguous batch layout used for truncated BPTT.
//!
//! Conventions: tokens are whitespace-separated, every line is terminated
//! by [`EOS`], and anything absent from the vocabulary encodes as [`UNK`].
//! Ids are assigned by descending frequency with ties broken
//! lexicographically, so the same text always produces the same ids.

use alloc::borrow::ToOwned;
use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::rng::rng_from;
use rand::RngExt;

pub const UNK: &str = "<unk>";
pub const EOS: &str = "<eos>";

#[derive(Clone, Debug)]
pub struct Vocabulary {
    words: Vec<String>,
    index: BTreeMap<String, u32>,
    unk: u32,
    eos: u32,
}

impl Vocabulary {
    /// Build from lines of text.  `<eos>` is counted once per line; `<unk>`
    /// is always present even if the text never contains it.
    pub fn build<'a>(lines: impl IntoIterator<Item = &'a str>) -> Vocabulary {
        let mut counts: BTreeMap<&str, u64> = BTreeMap::new();
        counts.insert(UNK, 0);
        counts.insert(EOS, 0);
        for line in lines {
            for tok in line.split_whitespace() {
                *counts.entry(tok).or_insert(0) += 1;
            }
            *counts.get_mut(EOS).expect("inserted above") += 1;
        }
        let mut entries: Vec<(&str, u64)> = counts.into_iter().collect();
        // Descending frequency, ascending token on ties.
        entries.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let words: Vec<String> = entries.into_iter().map(|(w, _)| w.to_owned()).collect();
        Self::from_id_order(words).expect("specials inserted above")
    }

    /// Rebuild from an id-ordered word list (the sidecar format).  Requires
    /// both specials to be present and no duplicates.
    pub fn from_id_order(words: Vec<String>) -> Result<Vocabulary> {
        let mut index = BTreeMap::new();
        for (i, w) in words.iter().enumerate() {
            if index.insert(w.clone(), i as u32).is_some() {
                return Err(Error::InvalidConfig(alloc::format!(
                    "duplicate vocabulary entry {w:?}"
                )));
            }
        }
        let unk = *index
            .get(UNK)
            .ok_or_else(|| Error::InvalidConfig("vocabulary is missing <unk>".into()))?;
        let eos = *index
            .get(EOS)
            .ok_or_else(|| Error::InvalidConfig("vocabulary is missing <eos>".into()))?;
        Ok(Vocabulary {
            words,
            index,
            unk,
            eos,
        })
    }

    pub fn size(&self) -> usize {
        self.words.len()
    }

    /// Encode one token; unknown tokens map to `<unk>`.
    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(self.unk)
    }

    pub fn token(&self, id: u32) -> Result<&str> {
        self.words
            .get(id as usize)
            .map(String::as_str)
            .ok_or(Error::TokenOutOfRange {
                id,
                vocab: self.words.len(),
            })
    }

    pub fn unk_id(&self) -> u32 {
        self.unk
    }

    pub fn eos_id(&self) -> u32 {
        self.eos
    }

    /// Words in id order.
    pub fn words(&self) -> &[String] {
        &self.words
    }
}

/// A flat encoded token sequence, tagged with the vocabulary size its ids
/// live in so later stages can check compatibility.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenStream {
    ids: Vec<u32>,
    vocab_size: usize,
}

impl TokenStream {
    /// Encode lines of text: each line's tokens followed by `<eos>`.
    pub fn encode<'a>(vocab: &Vocabulary, lines: impl IntoIterator<Item = &'a str>) -> TokenStream {
        let mut ids = Vec::new();
        for line in lines {
            ids.extend(line.split_whitespace().map(|t| vocab.id(t)));
            ids.push(vocab.eos_id());
        }
        TokenStream {
            ids,
            vocab_size: vocab.size(),
        }
    }

    pub fn from_ids(ids: Vec<u32>, vocab_size: usize) -> Result<TokenStream> {
        for &id in &ids {
            if id as usize >= vocab_size {
                return Err(Error::TokenOutOfRange {
                    id,
                    vocab: vocab_size,
                });
            }
        }
        Ok(TokenStream { ids, vocab_size })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn slice(&self, offset: usize, len: usize) -> Result<TokenStream> {
        let end = offset.checked_add(len);
        match end {
            Some(end) if end <= self.ids.len() => Ok(TokenStream {
                ids: self.ids[offset..end].to_vec(),
                vocab_size: self.vocab_size,
            }),
            _ => Err(Error::SliceOutOfRange {
                offset,
                len,
                stream_len: self.ids.len(),
            }),
        }
    }
}

/// Take a contiguous slice of `len` tokens at a seed-determined offset,
/// uniform over all valid positions.
pub fn take_contiguous(stream: &TokenStream, len: usize, seed: u64) -> Result<TokenStream> {
    if len == 0 || len > stream.len() {
        return Err(Error::StreamTooShort {
            len: stream.len(),
            need: len.max(1),
        });
    }
    let max_offset = stream.len() - len;
    let offset = if max_offset == 0 {
        0
    } else {
        rng_from(seed).random_range(0..=max_offset)
    };
    stream.slice(offset, len)
}

/// One truncated-BPTT window: `batch x steps` inputs and the targets
/// shifted one position ahead, both row-major by batch row.
#[derive(Clone, Debug, PartialEq)]
pub struct BpttBatch {
    inputs: Vec<u32>,
    targets: Vec<u32>,
    batch: usize,
    steps: usize,
}

impl BpttBatch {
    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// batch * steps, the number of predictions the window contributes.
    pub fn positions(&self) -> usize {
        self.batch * self.steps
    }

    #[inline]
    pub fn input(&self, b: usize, t: usize) -> u32 {
        self.inputs[b * self.steps + t]
    }

    #[inline]
    pub fn target(&self, b: usize, t: usize) -> u32 {
        self.targets[b * self.steps + t]
    }

    pub fn targets(&self) -> &[u32] {
        &self.targets
    }

    pub fn inputs(&self) -> &[u32] {
        &self.inputs
    }
}

/// Split a stream into `batch_size` contiguous rows (trailing remainder
/// dropped) and cut each row into BPTT windows of at most `bptt_steps`
/// predictions.  Consecutive windows continue where the previous one ended,
/// so hidden state can be carried across them.
pub fn batchify(
    stream: &TokenStream,
    batch_size: usize,
    bptt_steps: usize,
) -> Result<Vec<BpttBatch>> {
    if batch_size == 0 || bptt_steps == 0 {
        return Err(Error::InvalidConfig(
            "batch_size and bptt_steps must be positive".into(),
        ));
    }
    let row_len = stream.len() / batch_size;
    if row_len < 2 {
        return Err(Error::StreamTooShort {
            len: stream.len(),
            need: 2 * batch_size,
        });
    }
    let rows: Vec<&[u32]> = (0..batch_size)
        .map(|b| &stream.ids[b * row_len..(b + 1) * row_len])
        .collect();

    let mut windows = Vec::new();
    let mut t0 = 0;
    while t0 < row_len - 1 {
        let steps = bptt_steps.min(row_len - 1 - t0);
        let mut inputs = Vec::with_capacity(batch_size * steps);
        let mut targets = Vec::with_capacity(batch_size * steps);
        for row in &rows {
            inputs.extend_from_slice(&row[t0..t0 + steps]);
            targets.extend_from_slice(&row[t0 + 1..t0 + 1 + steps]);
        }
        windows.push(BpttBatch {
            inputs,
            targets,
            batch: batch_size,
            steps,
        });
        t0 += steps;
    }
    Ok(windows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vocab_orders_by_frequency_then_token() {
        // "a" x2, "b" x1, "c" x1, <eos> x2; ties: <eos> vs a -> "<" < "a",
        // b vs c lexicographic.
        let v = Vocabulary::build(["a b", "a c"]);
        assert_eq!(v.size(), 5);
        assert_eq!(v.token(0).unwrap(), EOS);
        assert_eq!(v.token(1).unwrap(), "a");
        assert_eq!(v.token(2).unwrap(), "b");
        assert_eq!(v.token(3).unwrap(), "c");
        assert_eq!(v.token(4).unwrap(), UNK); // count 0 sorts last
        assert_eq!(v.id("a"), 1);
        assert_eq!(v.id("zebra"), v.unk_id());
    }

    #[test]
    fn vocab_counts_literal_unk_occurrences() {
        let v = Vocabulary::build(["<unk> <unk> x"]);
        // <unk> x2 beats <eos> x1 and x x1.
        assert_eq!(v.token(0).unwrap(), UNK);
        assert_eq!(v.unk_id(), 0);
    }

    #[test]
    fn empty_lines_still_emit_eos() {
        let v = Vocabulary::build(["", "a"]);
        let s = TokenStream::encode(&v, ["", "a"]);
        assert_eq!(s.ids(), &[v.eos_id(), v.id("a"), v.eos_id()]);
    }

    #[test]
    fn from_id_order_requires_specials_and_uniqueness() {
        assert!(Vocabulary::from_id_order(vec!["a".into(), "<eos>".into()]).is_err());
        assert!(Vocabulary::from_id_order(vec![
            "<unk>".into(),
            "<eos>".into(),
            "a".into(),
            "a".into()
        ])
        .is_err());
        let v =
            Vocabulary::from_id_order(vec!["x".into(), "<eos>".into(), "<unk>".into()]).unwrap();
        assert_eq!(v.unk_id(), 2);
        assert_eq!(v.eos_id(), 1);
    }

    #[test]
    fn encode_round_trips_known_tokens() {
        let v = Vocabulary::build(["the cat sat", "the dog"]);
        let s = TokenStream::encode(&v, ["the cat"]);
        let back: Vec<&str> = s.ids().iter().map(|&i| v.token(i).unwrap()).collect();
        assert_eq!(back, vec!["the", "cat", "<eos>"]);
    }

    fn stream_0_to(n: u32) -> TokenStream {
        TokenStream::from_ids((0..n).collect(), n as usize).unwrap()
    }

    #[test]
    fn batchify_hand_trace() {
        // Stream 0..10, batch 2, bptt 2: rows [0..5] and [5..10].
        let s = stream_0_to(10);
        let w = batchify(&s, 2, 2).unwrap();
        assert_eq!(w.len(), 2);
        assert_eq!(w[0].inputs(), &[0, 1, 5, 6]);
        assert_eq!(w[0].targets(), &[1, 2, 6, 7]);
        assert_eq!(w[1].inputs(), &[2, 3, 7, 8]);
        assert_eq!(w[1].targets(), &[3, 4, 8, 9]);
        // Per row: row_len - 1 = 4 predictions, all covered exactly once.
        let total: usize = w.iter().map(|b| b.positions()).sum();
        assert_eq!(total, 2 * 4);
    }

    #[test]
    fn batchify_drops_remainder_and_handles_short_tail() {
        // 11 tokens, batch 2 -> row_len 5, token 10 dropped.
        let s = stream_0_to(11);
        let w = batchify(&s, 2, 3).unwrap();
        assert_eq!(w.len(), 2);
        assert_eq!(w[0].steps(), 3);
        assert_eq!(w[1].steps(), 1); // 4 predictions per row = 3 + 1
        assert_eq!(w[1].inputs(), &[3, 8]);
        assert_eq!(w[1].targets(), &[4, 9]);
    }

    #[test]
    fn batchify_batch_one_covers_everything() {
        let s = stream_0_to(7);
        let w = batchify(&s, 1, 100).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].inputs(), &[0, 1, 2, 3, 4, 5]);
        assert_eq!(w[0].targets(), &[1, 2, 3, 4, 5, 6]);
    }

    #[test]
    fn batchify_rejects_degenerate_inputs() {
        let s = stream_0_to(3);
        assert!(matches!(
            batchify(&s, 2, 2),
            Err(Error::StreamTooShort { .. })
        ));
        assert!(batchify(&s, 0, 2).is_err());
        assert!(batchify(&s, 1, 0).is_err());
    }

    #[test]
    fn take_contiguous_is_seeded_and_in_range() {
        let s = stream_0_to(100);
        let a = take_contiguous(&s, 20, 5).unwrap();
        let b = take_contiguous(&s, 20, 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 20);
        // The slice is contiguous in the original stream.
        let start = a.ids()[0];
        let expect: Vec<u32> = (start..start + 20).collect();
        assert_eq!(a.ids(), &expect[..]);
        // Different seeds eventually give different offsets.
        let c = take_contiguous(&s, 20, 6).unwrap();
        let d = take_contiguous(&s, 20, 7).unwrap();
        assert!(a != c || a != d);
    }

    #[test]
    fn take_contiguous_full_length_and_overlong() {
        let s = stream_0_to(10);
        assert_eq!(take_contiguous(&s, 10, 3).unwrap(), s);
        assert!(matches!(
            take_contiguous(&s, 11, 3),
            Err(Error::StreamTooShort { .. })
        ));
        assert!(take_contiguous(&s, 0, 3).is_err());
    }

    #[test]
    fn from_ids_checks_range() {
        assert!(TokenStream::from_ids(vec![0, 1, 5], 5).is_err());
        assert!(TokenStream::from_ids(vec![0, 1, 4], 5).is_ok());
    }
}
