//! Tokenization, vocabulary, attribute encoding, corpus loading and batching.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Real;

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;
pub const NUM_RESERVED: usize = 4;
const RESERVED_NAMES: [&str; NUM_RESERVED] = ["<pad>", "<bos>", "<eos>", "<unk>"];

/// Token/id bijection with fixed reserved ids.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    id_to_token: Vec<String>,
    token_to_id: HashMap<String, u32>,
}

impl Vocabulary {
    /// Frequency-ranked vocabulary over a stream of raw sentences, ties
    /// broken lexicographically. Tokens occurring fewer than `min_count`
    /// times are dropped; at most `max_size` non-reserved tokens are kept.
    pub fn build<'a>(
        sentences: impl IntoIterator<Item = &'a str>,
        min_count: usize,
        max_size: usize,
    ) -> Result<Self> {
        let mut counts: HashMap<String, usize> = HashMap::new();
        let mut any = false;
        for s in sentences {
            any = true;
            for tok in tokenize(s) {
                *counts.entry(tok).or_insert(0) += 1;
            }
        }
        if !any {
            return Err(Error::Parse("cannot build a vocabulary from an empty stream".into()));
        }
        let mut ranked: Vec<(String, usize)> =
            counts.into_iter().filter(|(_, c)| *c >= min_count).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(max_size);

        let mut id_to_token: Vec<String> =
            RESERVED_NAMES.iter().map(|s| s.to_string()).collect();
        id_to_token.extend(ranked.into_iter().map(|(t, _)| t));
        let token_to_id = id_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Ok(Vocabulary { id_to_token, token_to_id })
    }

    pub fn size(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn id(&self, token: &str) -> u32 {
        self.token_to_id.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: u32) -> &str {
        self.id_to_token.get(id as usize).map(String::as_str).unwrap_or("<unk>")
    }

    pub fn contains(&self, token: &str) -> bool {
        self.token_to_id.contains_key(token)
    }

    /// Encode a raw sentence into content ids (no framing).
    pub fn encode(&self, sentence: &str) -> Vec<u32> {
        tokenize(sentence).map(|t| self.id(&t)).collect()
    }

    pub fn decode(&self, ids: &[u32]) -> String {
        ids.iter().map(|&i| self.token(i)).collect::<Vec<_>>().join(" ")
    }

    /// One token per line in rank order; reserved tokens implicit.
    pub fn save(&self, path: &Path) -> Result<()> {
        let body: String = self.id_to_token[NUM_RESERVED..]
            .iter()
            .map(|t| format!("{t}\n"))
            .collect();
        fs::write(path, body)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut id_to_token: Vec<String> =
            RESERVED_NAMES.iter().map(|s| s.to_string()).collect();
        for line in text.lines() {
            let tok = line.trim();
            if !tok.is_empty() {
                id_to_token.push(tok.to_string());
            }
        }
        let token_to_id = id_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Ok(Vocabulary { id_to_token, token_to_id })
    }
}

/// Lowercase + whitespace tokenization.
pub fn tokenize(sentence: &str) -> impl Iterator<Item = String> + '_ {
    sentence.split_whitespace().map(|t| t.to_lowercase())
}

/// Ordered set of K categorical attributes, each with a finite label set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttributeSchema {
    attributes: Vec<(String, Vec<String>)>,
}

impl AttributeSchema {
    pub fn new(attributes: Vec<(String, Vec<String>)>) -> Result<Self> {
        if attributes.is_empty() {
            return Err(Error::Schema("schema needs at least one attribute".into()));
        }
        let mut names: Vec<&str> = attributes.iter().map(|(n, _)| n.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        if names.len() != attributes.len() {
            return Err(Error::Schema("attribute names must be unique".into()));
        }
        for (name, labels) in &attributes {
            if labels.len() < 2 {
                return Err(Error::Schema(format!("attribute {name} needs at least 2 labels")));
            }
        }
        Ok(AttributeSchema { attributes })
    }

    pub fn num_attributes(&self) -> usize {
        self.attributes.len()
    }

    pub fn attribute_name(&self, k: usize) -> &str {
        &self.attributes[k].0
    }

    pub fn labels(&self, k: usize) -> &[String] {
        &self.attributes[k].1
    }

    pub fn attribute_index(&self, name: &str) -> Option<usize> {
        self.attributes.iter().position(|(n, _)| n == name)
    }

    /// Width of the concatenated one-hot encoding.
    pub fn encoding_width(&self) -> usize {
        self.attributes.iter().map(|(_, l)| l.len()).sum()
    }

    /// Total number of label combinations.
    pub fn num_combinations(&self) -> usize {
        self.attributes.iter().map(|(_, l)| l.len()).product()
    }

    /// Encode one label per attribute, by name, into an attribute vector.
    pub fn encode(&self, labels: &[(&str, &str)]) -> Result<AttributeVector> {
        if labels.len() != self.attributes.len() {
            return Err(Error::Schema(format!(
                "expected {} labels, got {}",
                self.attributes.len(),
                labels.len()
            )));
        }
        let mut indices = vec![usize::MAX; self.attributes.len()];
        for (name, label) in labels {
            let k = self
                .attribute_index(name)
                .ok_or_else(|| Error::Schema(format!("unknown attribute {name}")))?;
            let li = self.attributes[k]
                .1
                .iter()
                .position(|l| l == label)
                .ok_or_else(|| Error::Schema(format!("unknown label {label} for attribute {name}")))?;
            indices[k] = li;
        }
        if indices.iter().any(|&i| i == usize::MAX) {
            return Err(Error::Schema("missing label for some attribute".into()));
        }
        Ok(AttributeVector { indices })
    }

    /// Attribute vector from per-attribute label indices, in schema order.
    pub fn from_indices(&self, indices: Vec<usize>) -> Result<AttributeVector> {
        if indices.len() != self.attributes.len() {
            return Err(Error::Schema("wrong number of label indices".into()));
        }
        for (k, &i) in indices.iter().enumerate() {
            if i >= self.attributes[k].1.len() {
                return Err(Error::Schema(format!(
                    "label index {i} out of range for attribute {}",
                    self.attributes[k].0
                )));
            }
        }
        Ok(AttributeVector { indices })
    }

    /// Recover per-attribute label names from an attribute vector.
    pub fn decode<'a>(&'a self, v: &AttributeVector) -> Vec<(&'a str, &'a str)> {
        v.indices
            .iter()
            .enumerate()
            .map(|(k, &i)| (self.attributes[k].0.as_str(), self.attributes[k].1[i].as_str()))
            .collect()
    }

    /// Enumerate every label combination in lexicographic index order.
    pub fn all_combinations(&self) -> Vec<AttributeVector> {
        let mut out = vec![AttributeVector { indices: vec![0; self.attributes.len()] }];
        for (k, (_, labels)) in self.attributes.iter().enumerate() {
            let mut next = Vec::with_capacity(out.len() * labels.len());
            for base in &out {
                for li in 0..labels.len() {
                    let mut ind = base.indices.clone();
                    ind[k] = li;
                    next.push(AttributeVector { indices: ind });
                }
            }
            out = next;
        }
        out
    }

    fn combination_rank(&self, v: &AttributeVector) -> usize {
        let mut rank = 0;
        for (k, &i) in v.indices.iter().enumerate() {
            rank = rank * self.attributes[k].1.len() + i;
        }
        rank
    }

    fn combination_from_rank(&self, mut rank: usize) -> AttributeVector {
        let mut indices = vec![0; self.attributes.len()];
        for k in (0..self.attributes.len()).rev() {
            let n = self.attributes[k].1.len();
            indices[k] = rank % n;
            rank /= n;
        }
        AttributeVector { indices }
    }

    /// Uniform draw over all label combinations different from `l`.
    pub fn sample_mismatched<R: Rng>(&self, l: &AttributeVector, rng: &mut R) -> Result<AttributeVector> {
        let total = self.num_combinations();
        if total < 2 {
            return Err(Error::Schema("schema admits only one label combination".into()));
        }
        let own = self.combination_rank(l);
        let mut draw = rng.gen_range(0..total - 1);
        if draw >= own {
            draw += 1;
        }
        Ok(self.combination_from_rank(draw))
    }

    /// Schema file: one attribute per line, `name: label1,label2,...`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let body: String = self
            .attributes
            .iter()
            .map(|(n, ls)| format!("{n}: {}\n", ls.join(",")))
            .collect();
        fs::write(path, body)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut attributes = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (name, labels) = line.split_once(':').ok_or_else(|| {
                Error::Parse(format!("schema line {}: expected `name: l1,l2,...`", lineno + 1))
            })?;
            let labels: Vec<String> = labels
                .split(',')
                .map(|l| l.trim().to_string())
                .filter(|l| !l.is_empty())
                .collect();
            attributes.push((name.trim().to_string(), labels));
        }
        AttributeSchema::new(attributes)
    }
}

/// One label per attribute plus its concatenated one-hot encoding.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AttributeVector {
    indices: Vec<usize>,
}

impl AttributeVector {
    pub fn label_index(&self, k: usize) -> usize {
        self.indices[k]
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    /// Binary encoding: one 1 per attribute's one-hot block.
    pub fn encoding(&self, schema: &AttributeSchema) -> Vec<Real> {
        let mut v = vec![0.0; schema.encoding_width()];
        let mut offset = 0;
        for (k, &i) in self.indices.iter().enumerate() {
            v[offset + i] = 1.0;
            offset += schema.labels(k).len();
        }
        v
    }

    /// Copy with attribute `k` set to label index `li`.
    pub fn with_label(&self, k: usize, li: usize) -> AttributeVector {
        let mut indices = self.indices.clone();
        indices[k] = li;
        AttributeVector { indices }
    }
}

/// Integer-encoded sentence framed as `BOS content... EOS`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    ids: Vec<u32>,
}

impl TokenSequence {
    /// Frame content ids with BOS/EOS, truncating content to `max_len`.
    /// Returns the sequence and whether truncation happened.
    pub fn from_content(content: &[u32], max_len: usize) -> Result<(Self, bool)> {
        if content.is_empty() {
            return Err(Error::Contract("token sequence needs at least one content token".into()));
        }
        if content.iter().any(|&t| t == PAD) {
            return Err(Error::Contract("PAD must not appear inside a sequence".into()));
        }
        let truncated = content.len() > max_len;
        let kept = &content[..content.len().min(max_len)];
        let mut ids = Vec::with_capacity(kept.len() + 2);
        ids.push(BOS);
        ids.extend_from_slice(kept);
        ids.push(EOS);
        Ok((TokenSequence { ids }, truncated))
    }

    /// Content tokens, without BOS/EOS framing.
    pub fn content(&self) -> &[u32] {
        &self.ids[1..self.ids.len() - 1]
    }

    /// Full framed ids: `BOS content... EOS`.
    pub fn framed(&self) -> &[u32] {
        &self.ids
    }

    pub fn content_len(&self) -> usize {
        self.ids.len() - 2
    }

    /// Number of decoding steps: content plus the EOS position.
    pub fn num_steps(&self) -> usize {
        self.ids.len() - 1
    }
}

impl fmt::Display for TokenSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.ids)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Valid,
    Test,
}

/// Sentences with attribute labels conforming to one schema.
#[derive(Debug, Clone)]
pub struct LabeledCorpus {
    pub schema: AttributeSchema,
    pub split: Split,
    pub items: Vec<(TokenSequence, AttributeVector)>,
}

impl LabeledCorpus {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Longest content length over the corpus.
    pub fn max_content_len(&self) -> usize {
        self.items.iter().map(|(s, _)| s.content_len()).max().unwrap_or(0)
    }

    /// Split off the last `n` items as a separate corpus with the given tag.
    pub fn split_tail(mut self, n: usize, tag: Split) -> (LabeledCorpus, LabeledCorpus) {
        let n = n.min(self.items.len());
        let tail = self.items.split_off(self.items.len() - n);
        let head_schema = self.schema.clone();
        (
            LabeledCorpus { schema: head_schema.clone(), split: self.split, items: self.items },
            LabeledCorpus { schema: head_schema, split: tag, items: tail },
        )
    }
}

/// Number of rows truncated while loading, reported alongside the corpus.
#[derive(Debug, Clone, Copy)]
pub struct LoadStats {
    pub truncated_rows: usize,
}

/// Parse the corpus TSV format: `sentence<TAB>attr1=label<TAB>attr2=label...`.
pub fn load_corpus(
    path: &Path,
    schema: &AttributeSchema,
    vocab: &Vocabulary,
    max_len: usize,
    split: Split,
) -> Result<(LabeledCorpus, LoadStats)> {
    let text = fs::read_to_string(path)?;
    parse_corpus(&text, schema, vocab, max_len, split)
}

pub fn parse_corpus(
    text: &str,
    schema: &AttributeSchema,
    vocab: &Vocabulary,
    max_len: usize,
    split: Split,
) -> Result<(LabeledCorpus, LoadStats)> {
    let mut items = Vec::new();
    let mut truncated_rows = 0;
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut cols = line.split('\t');
        let sentence = cols
            .next()
            .ok_or_else(|| Error::Parse(format!("line {}: empty row", lineno + 1)))?;
        let mut labels: Vec<(&str, &str)> = Vec::new();
        for col in cols {
            let (name, label) = col.split_once('=').ok_or_else(|| {
                Error::Parse(format!("line {}: expected attr=label, got `{col}`", lineno + 1))
            })?;
            labels.push((name, label));
        }
        if labels.len() != schema.num_attributes() {
            return Err(Error::Parse(format!(
                "line {}: expected {} attribute columns, got {}",
                lineno + 1,
                schema.num_attributes(),
                labels.len()
            )));
        }
        let attr = schema
            .encode(&labels)
            .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))?;
        let ids = vocab.encode(sentence);
        if ids.is_empty() {
            return Err(Error::Parse(format!("line {}: empty sentence", lineno + 1)));
        }
        let (seq, truncated) = TokenSequence::from_content(&ids, max_len)
            .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))?;
        if truncated {
            truncated_rows += 1;
        }
        items.push((seq, attr));
    }
    Ok((LabeledCorpus { schema: schema.clone(), split, items }, LoadStats { truncated_rows }))
}

/// Serialize a corpus back into the TSV format.
pub fn corpus_to_tsv(corpus: &LabeledCorpus, vocab: &Vocabulary) -> String {
    let mut out = String::new();
    for (seq, attr) in &corpus.items {
        out.push_str(&vocab.decode(seq.content()));
        for (name, label) in corpus.schema.decode(attr) {
            out.push('\t');
            out.push_str(name);
            out.push('=');
            out.push_str(label);
        }
        out.push('\n');
    }
    out
}

/// One padded batch: row-major ids, true lengths, labels.
#[derive(Debug, Clone)]
pub struct Batch {
    /// Framed ids right-padded with PAD to the batch maximum.
    pub rows: Vec<Vec<u32>>,
    /// True framed lengths per row.
    pub lens: Vec<usize>,
    pub labels: Vec<AttributeVector>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Reconstruct the unpadded sequence for row `i`.
    pub fn sequence(&self, i: usize) -> TokenSequence {
        let content = &self.rows[i][1..self.lens[i] - 1];
        TokenSequence::from_content(content, content.len().max(1)).expect("valid row").0
    }
}

/// Shuffle the corpus with a seeded RNG and yield padded batches.
pub fn make_batches<R: Rng>(corpus: &LabeledCorpus, batch_size: usize, rng: &mut R) -> Vec<Batch> {
    assert!(batch_size >= 1, "batch_size must be >= 1");
    let mut order: Vec<usize> = (0..corpus.items.len()).collect();
    order.shuffle(rng);
    order
        .chunks(batch_size)
        .map(|chunk| {
            let max_len = chunk
                .iter()
                .map(|&i| corpus.items[i].0.framed().len())
                .max()
                .unwrap_or(0);
            let mut rows = Vec::with_capacity(chunk.len());
            let mut lens = Vec::with_capacity(chunk.len());
            let mut labels = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let (seq, attr) = &corpus.items[i];
                let mut row = seq.framed().to_vec();
                lens.push(row.len());
                row.resize(max_len, PAD);
                rows.push(row);
                labels.push(attr.clone());
            }
            Batch { rows, lens, labels }
        })
        .collect()
}

/// Plain-text embedding file: `token v1 v2 ... vd` per line. Returns one row
/// per vocabulary entry; tokens absent from the file keep `None`.
pub fn load_embedding_file(path: &Path, vocab: &Vocabulary, dim: usize) -> Result<Vec<Option<Vec<Real>>>> {
    let text = fs::read_to_string(path)?;
    let mut rows: Vec<Option<Vec<Real>>> = vec![None; vocab.size()];
    for (lineno, line) in text.lines().enumerate() {
        let mut parts = line.split_whitespace();
        let Some(token) = parts.next() else { continue };
        let values: Vec<Real> = parts
            .map(|v| {
                v.parse::<Real>()
                    .map_err(|_| Error::Parse(format!("embedding line {}: bad float", lineno + 1)))
            })
            .collect::<Result<_>>()?;
        if values.len() != dim {
            return Err(Error::Parse(format!(
                "embedding line {}: expected {dim} values, got {}",
                lineno + 1,
                values.len()
            )));
        }
        if vocab.contains(token) {
            rows[vocab.id(token) as usize] = Some(values);
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn two_attr_schema() -> AttributeSchema {
        AttributeSchema::new(vec![
            ("tense".into(), vec!["past".into(), "pres".into(), "fut".into()]),
            ("neg".into(), vec!["no".into(), "yes".into()]),
        ])
        .unwrap()
    }

    #[test]
    fn vocab_frequency_then_lexicographic() {
        let v = Vocabulary::build(["a b", "a"], 1, 100).unwrap();
        assert_eq!(v.size(), NUM_RESERVED + 2);
        assert_eq!(v.id("a"), 4);
        assert_eq!(v.id("b"), 5);
    }

    #[test]
    fn vocab_min_count_excludes_to_unk() {
        let v = Vocabulary::build(["a b", "a"], 2, 100).unwrap();
        assert!(!v.contains("b"));
        assert_eq!(v.encode("b"), vec![UNK]);
    }

    #[test]
    fn vocab_empty_stream_errors() {
        assert!(Vocabulary::build(std::iter::empty(), 1, 100).is_err());
    }

    #[test]
    fn vocab_counts_match_independent_enumeration() {
        // Distinct-token count via an independent hash-set pass.
        let sentences: Vec<String> =
            (0..500).map(|i| format!("tok{} tok{} shared", i % 37, (i * 7) % 53)).collect();
        let refs: Vec<&str> = sentences.iter().map(String::as_str).collect();
        let v = Vocabulary::build(refs.iter().copied(), 1, 10_000).unwrap();
        let mut distinct = std::collections::HashSet::new();
        for s in &refs {
            for t in s.split_whitespace() {
                distinct.insert(t.to_lowercase());
            }
        }
        assert_eq!(v.size(), distinct.len() + NUM_RESERVED);
    }

    #[test]
    fn attribute_encoding_is_block_onehot() {
        let schema =
            AttributeSchema::new(vec![("sentiment".into(), vec!["neg".into(), "pos".into()])])
                .unwrap();
        let v = schema.encode(&[("sentiment", "pos")]).unwrap();
        assert_eq!(v.encoding(&schema), vec![0.0, 1.0]);

        let schema = two_attr_schema();
        let v = schema.encode(&[("tense", "fut"), ("neg", "no")]).unwrap();
        assert_eq!(v.encoding(&schema), vec![0.0, 0.0, 1.0, 1.0, 0.0]);
        assert!(schema.encode(&[("tense", "woops"), ("neg", "no")]).is_err());
    }

    #[test]
    fn attribute_round_trip_exhaustive() {
        let schema = AttributeSchema::new(vec![
            ("a".into(), vec!["x".into(), "y".into()]),
            ("b".into(), vec!["p".into(), "q".into(), "r".into()]),
            ("c".into(), vec!["0".into(), "1".into()]),
            ("d".into(), vec!["m".into(), "n".into()]),
        ])
        .unwrap();
        for combo in schema.all_combinations() {
            let named = schema.decode(&combo);
            let back = schema.encode(&named).unwrap();
            assert_eq!(back, combo);
        }
        assert_eq!(schema.all_combinations().len(), schema.num_combinations());
    }

    #[test]
    fn corpus_parses_and_reports_line_numbers() {
        let schema = two_attr_schema();
        let vocab = Vocabulary::build(["john walked home"], 1, 100).unwrap();
        let good = "john walked\ttense=past\tneg=no\nhome\ttense=fut\tneg=yes\njohn\ttense=pres\tneg=no\n";
        let (c, stats) = parse_corpus(good, &schema, &vocab, 16, Split::Train).unwrap();
        assert_eq!(c.len(), 3);
        assert_eq!(stats.truncated_rows, 0);

        let bad = "john walked\ttense=past\tneg=no\nhome\ttense=later\tneg=yes\n";
        let err = parse_corpus(bad, &schema, &vocab, 16, Split::Train).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn corpus_truncation_counted() {
        let schema = two_attr_schema();
        let vocab = Vocabulary::build(["a b c d e"], 1, 100).unwrap();
        let text = "a b c d e\ttense=past\tneg=no\n";
        let (c, stats) = parse_corpus(text, &schema, &vocab, 3, Split::Train).unwrap();
        assert_eq!(stats.truncated_rows, 1);
        assert_eq!(c.items[0].0.content_len(), 3);
    }

    #[test]
    fn batches_cover_corpus_and_are_seeded() {
        let schema = two_attr_schema();
        let sentences: Vec<String> = (0..10).map(|i| format!("w x{i}")).collect();
        let vocab =
            Vocabulary::build(sentences.iter().map(String::as_str), 1, 100).unwrap();
        let rows: String =
            sentences.iter().map(|s| format!("{s}\ttense=past\tneg=no\n")).collect();
        let (c, _) = parse_corpus(&rows, &schema, &vocab, 16, Split::Train).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let batches = make_batches(&c, 4, &mut rng);
        assert_eq!(batches.iter().map(Batch::len).collect::<Vec<_>>(), vec![4, 4, 2]);

        let order = |seed: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            make_batches(&c, 4, &mut rng)
                .iter()
                .flat_map(|b| b.rows.clone())
                .collect::<Vec<_>>()
        };
        assert_eq!(order(13), order(13));
        assert_ne!(order(13), order(14));
    }

    #[test]
    fn mismatched_labels_forced_for_binary() {
        let schema =
            AttributeSchema::new(vec![("sentiment".into(), vec!["neg".into(), "pos".into()])])
                .unwrap();
        let l = schema.encode(&[("sentiment", "pos")]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..64 {
            let lp = schema.sample_mismatched(&l, &mut rng).unwrap();
            assert_eq!(schema.decode(&lp)[0].1, "neg");
        }
    }

    #[test]
    fn mismatched_labels_uniform_over_alternatives() {
        let schema = AttributeSchema::new(vec![(
            "cls".into(),
            vec!["a".into(), "b".into(), "c".into()],
        )])
        .unwrap();
        let l = schema.encode(&[("cls", "a")]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut counts = [0usize; 3];
        for _ in 0..10_000 {
            let lp = schema.sample_mismatched(&l, &mut rng).unwrap();
            counts[lp.label_index(0)] += 1;
        }
        assert_eq!(counts[0], 0);
        for &c in &counts[1..] {
            let frac = c as f64 / 10_000.0;
            assert!((frac - 0.5).abs() < 0.03, "frac {frac}");
        }
    }

    #[test]
    fn mismatched_never_equal_across_schema() {
        let schema = two_attr_schema();
        let l = schema.encode(&[("tense", "pres"), ("neg", "yes")]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10_000 {
            assert_ne!(schema.sample_mismatched(&l, &mut rng).unwrap(), l);
        }
        let single = AttributeSchema::new(vec![("only".into(), vec!["a".into(), "b".into()])]).unwrap();
        // Two combinations exist, so sampling works; a single-combination
        // schema is unrepresentable (every attribute needs >= 2 labels).
        let la = single.encode(&[("only", "a")]).unwrap();
        assert!(single.sample_mismatched(&la, &mut rng).is_ok());
    }

    #[test]
    fn schema_file_round_trip() {
        let schema = two_attr_schema();
        let dir = std::env::temp_dir().join(format!("restyle-schema-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("schema.txt");
        schema.save(&path).unwrap();
        let back = AttributeSchema::load(&path).unwrap();
        assert_eq!(schema, back);
        std::fs::remove_dir_all(&dir).ok();
    }
}
