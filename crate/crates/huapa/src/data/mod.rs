//! Corpus ingestion, vocabulary construction, encoding, and embeddings.
//!
//! The on-disk corpus is line-oriented: `user`, `product`, `rating`, `text`,
//! separated by a configurable field separator (default: two tab characters).
//! Sentences inside `text` are split on a delimiter token (default
//! `<sssss>`), words on whitespace. File ratings are 1-based and are shifted
//! to 0-based class labels internally.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

mod synthetic;

pub use synthetic::{gen_synthetic, gen_synthetic_opts, sentiment_pools, SyntheticCorpus};

/// Reserved word id for padding. Never appears at an unpadded position.
pub const PAD: u32 = 0;
/// Reserved word id for out-of-vocabulary tokens.
pub const UNK: u32 = 1;
/// Reserved id for users/products unseen in training.
pub const UNK_CTX: u32 = 0;

pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

#[derive(Debug, Clone, PartialEq)]
pub enum DataError {
    Io { path: String, msg: String },
    WrongFieldCount { line: usize, got: usize },
    EmptyField { line: usize, field: &'static str },
    BadLabel { line: usize, raw: String, classes: usize },
    EmptyText { line: usize },
    EmptyCorpus,
    EmbeddingDim { line: usize, got: usize, want: usize },
    MalformedLine { line: usize, msg: String },
    VocabFormat { line: usize, msg: String },
}

impl fmt::Display for DataError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DataError::Io { path, msg } => write!(f, "{path}: {msg}"),
            DataError::WrongFieldCount { line, got } => {
                write!(f, "line {line}: expected 4 fields, got {got}")
            }
            DataError::EmptyField { line, field } => {
                write!(f, "line {line}: empty {field} field")
            }
            DataError::BadLabel { line, raw, classes } => {
                write!(f, "line {line}: label {raw:?} is not an integer in 1..={classes}")
            }
            DataError::EmptyText { line } => write!(f, "line {line}: empty review text"),
            DataError::EmptyCorpus => write!(f, "corpus contains no documents"),
            DataError::EmbeddingDim { line, got, want } => {
                write!(f, "line {line}: embedding has {got} dimensions, expected {want}")
            }
            DataError::MalformedLine { line, msg } => write!(f, "line {line}: {msg}"),
            DataError::VocabFormat { line, msg } => {
                write!(f, "vocabulary file, line {line}: {msg}")
            }
        }
    }
}

impl std::error::Error for DataError {}

fn io_err(path: &Path, e: std::io::Error) -> DataError {
    DataError::Io { path: path.display().to_string(), msg: e.to_string() }
}

/// How corpus files are laid out on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusFormat {
    /// Number of rating classes; file labels must lie in `1..=classes`.
    pub classes: usize,
    pub field_separator: String,
    pub sentence_delimiter: String,
    pub lowercase: bool,
}

impl Default for CorpusFormat {
    fn default() -> Self {
        CorpusFormat {
            classes: 5,
            field_separator: "\t\t".to_string(),
            sentence_delimiter: "<sssss>".to_string(),
            lowercase: true,
        }
    }
}

/// One review: author, product, 0-based label, tokenized sentences.
#[derive(Debug, Clone, PartialEq)]
pub struct ReviewDoc {
    pub user: String,
    pub product: String,
    pub label: u32,
    pub sentences: Vec<Vec<String>>,
}

/// Parse a corpus file. Each line yields one document, order preserved.
pub fn parse_corpus(path: &Path, fmt: &CorpusFormat) -> Result<Vec<ReviewDoc>, DataError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    parse_corpus_reader(BufReader::new(file), fmt)
}

pub fn parse_corpus_reader<R: BufRead>(
    reader: R,
    fmt: &CorpusFormat,
) -> Result<Vec<ReviewDoc>, DataError> {
    let mut docs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| DataError::MalformedLine { line: line_no, msg: e.to_string() })?;
        let fields: Vec<&str> = line.split(fmt.field_separator.as_str()).collect();
        if fields.len() != 4 {
            return Err(DataError::WrongFieldCount { line: line_no, got: fields.len() });
        }
        let user = fields[0].trim();
        let product = fields[1].trim();
        if user.is_empty() {
            return Err(DataError::EmptyField { line: line_no, field: "user" });
        }
        if product.is_empty() {
            return Err(DataError::EmptyField { line: line_no, field: "product" });
        }
        let rating: i64 = fields[2].trim().parse().map_err(|_| DataError::BadLabel {
            line: line_no,
            raw: fields[2].trim().to_string(),
            classes: fmt.classes,
        })?;
        if rating < 1 || rating > fmt.classes as i64 {
            return Err(DataError::BadLabel {
                line: line_no,
                raw: fields[2].trim().to_string(),
                classes: fmt.classes,
            });
        }
        let text = if fmt.lowercase { fields[3].to_lowercase() } else { fields[3].to_string() };
        let sentences: Vec<Vec<String>> = text
            .split(fmt.sentence_delimiter.as_str())
            .map(|s| s.split_whitespace().map(str::to_string).collect::<Vec<_>>())
            .filter(|s: &Vec<String>| !s.is_empty())
            .collect();
        if sentences.is_empty() {
            return Err(DataError::EmptyText { line: line_no });
        }
        docs.push(ReviewDoc {
            user: user.to_string(),
            product: product.to_string(),
            label: (rating - 1) as u32,
            sentences,
        });
    }
    Ok(docs)
}

/// Write documents in the same format `parse_corpus` reads (1-based ratings).
pub fn write_corpus(path: &Path, docs: &[ReviewDoc], fmt: &CorpusFormat) -> Result<(), DataError> {
    let mut out = String::new();
    let joiner = format!(" {} ", fmt.sentence_delimiter);
    for doc in docs {
        let text: Vec<String> = doc.sentences.iter().map(|s| s.join(" ")).collect();
        out.push_str(&format!(
            "{}{sep}{}{sep}{}{sep}{}\n",
            doc.user,
            doc.product,
            doc.label + 1,
            text.join(&joiner),
            sep = fmt.field_separator
        ));
    }
    std::fs::write(path, out).map_err(|e| io_err(path, e))
}

/// Hashes of the three id maps, embedded in checkpoints so that evaluation
/// refuses to run against a different vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VocabHashes {
    pub words: u64,
    pub users: u64,
    pub products: u64,
}

fn fnv1a64(chunks: impl Iterator<Item = u8>) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in chunks {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn hash_tokens(tokens: &[String]) -> u64 {
    fnv1a64(tokens.iter().flat_map(|t| t.bytes().chain(std::iter::once(b'\n'))))
}

/// Bidirectional token/id maps for words, users, and products.
///
/// Word ids 0 and 1 are reserved for padding and unknown tokens; user and
/// product id 0 is the unknown entry. Ids are dense and assigned in first
/// appearance order over the training split, so rebuilding from the same
/// input reproduces the same mapping.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    words: Vec<String>,
    word_ids: HashMap<String, u32>,
    word_freq: Vec<u32>,
    users: Vec<String>,
    user_ids: HashMap<String, u32>,
    products: Vec<String>,
    product_ids: HashMap<String, u32>,
}

impl Vocabulary {
    pub fn n_words(&self) -> usize {
        self.words.len()
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_products(&self) -> usize {
        self.products.len()
    }

    /// Id for a word token; unknown tokens map to [`UNK`].
    pub fn word_id(&self, token: &str) -> u32 {
        self.word_ids.get(token).copied().unwrap_or(UNK)
    }

    pub fn user_id(&self, user: &str) -> u32 {
        self.user_ids.get(user).copied().unwrap_or(UNK_CTX)
    }

    pub fn product_id(&self, product: &str) -> u32 {
        self.product_ids.get(product).copied().unwrap_or(UNK_CTX)
    }

    pub fn word(&self, id: u32) -> &str {
        &self.words[id as usize]
    }

    pub fn user(&self, id: u32) -> &str {
        &self.users[id as usize]
    }

    pub fn product(&self, id: u32) -> &str {
        &self.products[id as usize]
    }

    /// Training-split frequency of a retained word id (0 for PAD; the UNK
    /// entry carries the total count of all dropped tokens).
    pub fn word_frequency(&self, id: u32) -> u32 {
        self.word_freq.get(id as usize).copied().unwrap_or(0)
    }

    pub fn hashes(&self) -> VocabHashes {
        VocabHashes {
            words: hash_tokens(&self.words),
            users: hash_tokens(&self.users),
            products: hash_tokens(&self.products),
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        let mut out = String::from("#huapa-vocab v1\n");
        for (header, tokens) in [
            ("#words", &self.words),
            ("#users", &self.users),
            ("#products", &self.products),
        ] {
            out.push_str(&format!("{header} {}\n", tokens.len()));
            for (id, tok) in tokens.iter().enumerate() {
                out.push_str(&format!("{tok}\t{id}\n"));
            }
        }
        std::fs::write(path, out).map_err(|e| io_err(path, e))
    }

    pub fn load(path: &Path) -> Result<Vocabulary, DataError> {
        let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        let mut lines = text.lines().enumerate();
        let bad = |line: usize, msg: &str| DataError::VocabFormat { line, msg: msg.to_string() };
        match lines.next() {
            Some((_, "#huapa-vocab v1")) => {}
            _ => return Err(bad(1, "missing '#huapa-vocab v1' header")),
        }
        let mut sections: Vec<Vec<String>> = Vec::new();
        let mut rest = lines.peekable();
        for header in ["#words", "#users", "#products"] {
            let (line_no, line) = rest.next().ok_or_else(|| bad(0, "truncated file"))?;
            let count: usize = line
                .strip_prefix(header)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| bad(line_no + 1, &format!("expected '{header} <count>'")))?;
            let mut tokens = Vec::with_capacity(count);
            for expect_id in 0..count {
                let (line_no, line) = rest.next().ok_or_else(|| bad(0, "truncated section"))?;
                let (tok, id) = line
                    .rsplit_once('\t')
                    .ok_or_else(|| bad(line_no + 1, "expected 'token<TAB>id'"))?;
                let id: usize = id
                    .parse()
                    .map_err(|_| bad(line_no + 1, "id is not an integer"))?;
                if id != expect_id {
                    return Err(bad(line_no + 1, &format!("ids not dense: expected {expect_id}, got {id}")));
                }
                tokens.push(tok.to_string());
            }
            sections.push(tokens);
        }
        let products = sections.pop().unwrap();
        let users = sections.pop().unwrap();
        let words = sections.pop().unwrap();
        if words.len() < 2 || words[0] != PAD_TOKEN || words[1] != UNK_TOKEN {
            return Err(bad(2, "word section must start with <pad>, <unk>"));
        }
        if users.is_empty() || users[0] != UNK_TOKEN || products.is_empty() || products[0] != UNK_TOKEN {
            return Err(bad(2, "user/product sections must start with <unk>"));
        }
        let index = |ts: &[String]| {
            ts.iter()
                .enumerate()
                .map(|(i, t)| (t.clone(), i as u32))
                .collect::<HashMap<_, _>>()
        };
        let n_words = words.len();
        Ok(Vocabulary {
            word_ids: index(&words),
            user_ids: index(&users),
            product_ids: index(&products),
            words,
            word_freq: vec![0; n_words],
            users,
            products,
        })
    }
}

/// Build a vocabulary from the training split only.
///
/// Words seen fewer than `min_frequency` times map to [`UNK`]. Every training
/// user and product receives an id; ids follow first appearance order.
pub fn build_vocab(docs: &[ReviewDoc], min_frequency: u32) -> Result<Vocabulary, DataError> {
    if docs.is_empty() {
        return Err(DataError::EmptyCorpus);
    }
    let mut counts: HashMap<&str, u32> = HashMap::new();
    for doc in docs {
        for sent in &doc.sentences {
            for tok in sent {
                *counts.entry(tok.as_str()).or_insert(0) += 1;
            }
        }
    }
    let mut words = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
    let mut word_freq = vec![0u32, 0u32];
    let mut word_ids: HashMap<String, u32> = HashMap::new();
    let mut users = vec![UNK_TOKEN.to_string()];
    let mut user_ids: HashMap<String, u32> = HashMap::new();
    let mut products = vec![UNK_TOKEN.to_string()];
    let mut product_ids: HashMap<String, u32> = HashMap::new();
    for doc in docs {
        if !user_ids.contains_key(&doc.user) {
            user_ids.insert(doc.user.clone(), users.len() as u32);
            users.push(doc.user.clone());
        }
        if !product_ids.contains_key(&doc.product) {
            product_ids.insert(doc.product.clone(), products.len() as u32);
            products.push(doc.product.clone());
        }
        for sent in &doc.sentences {
            for tok in sent {
                if word_ids.contains_key(tok) {
                    continue;
                }
                let freq = counts[tok.as_str()];
                if freq >= min_frequency {
                    word_ids.insert(tok.clone(), words.len() as u32);
                    words.push(tok.clone());
                    word_freq.push(freq);
                } else {
                    word_freq[UNK as usize] += 1;
                }
            }
        }
    }
    Ok(Vocabulary {
        words,
        word_ids,
        word_freq,
        users,
        user_ids,
        products,
        product_ids,
    })
}

/// One encoded document: a rectangular word-id grid with masks.
///
/// The grid has one row per kept sentence and a shared width equal to the
/// longest kept sentence; shorter rows are padded with [`PAD`] and masked
/// off. Mask rows are contiguous-prefix by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedDoc {
    pub words: Vec<Vec<u32>>,
    pub word_mask: Vec<Vec<bool>>,
    pub sent_mask: Vec<bool>,
    pub user: u32,
    pub product: u32,
    pub label: u32,
}

impl EncodedDoc {
    pub fn n_sents(&self) -> usize {
        self.words.len()
    }

    pub fn width(&self) -> usize {
        self.words.first().map_or(0, |r| r.len())
    }

    /// Number of real tokens in sentence `i`.
    pub fn sentence_len(&self, i: usize) -> usize {
        self.word_mask[i].iter().take_while(|&&m| m).count()
    }
}

/// Counters reported after encoding.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct EncodeStats {
    pub docs: usize,
    /// Documents that lost sentences to the sentence cap.
    pub sents_truncated: usize,
    /// Sentences that lost words to the word cap.
    pub words_truncated: usize,
    pub unk_tokens: usize,
    pub total_tokens: usize,
}

/// Encode documents against a vocabulary, truncating to the first
/// `max_sents` sentences and the first `max_words` words per sentence.
pub fn encode(
    docs: &[ReviewDoc],
    vocab: &Vocabulary,
    max_sents: usize,
    max_words: usize,
) -> (Vec<EncodedDoc>, EncodeStats) {
    let mut stats = EncodeStats { docs: docs.len(), ..Default::default() };
    let mut out = Vec::with_capacity(docs.len());
    for doc in docs {
        assert!(
            doc.sentences.iter().any(|s| !s.is_empty()),
            "document has no non-empty sentences"
        );
        let kept: Vec<&Vec<String>> =
            doc.sentences.iter().filter(|s| !s.is_empty()).take(max_sents).collect();
        if doc.sentences.len() > max_sents {
            stats.sents_truncated += 1;
        }
        let width = kept.iter().map(|s| s.len().min(max_words)).max().unwrap();
        let mut words = Vec::with_capacity(kept.len());
        let mut word_mask = Vec::with_capacity(kept.len());
        for sent in &kept {
            if sent.len() > max_words {
                stats.words_truncated += 1;
            }
            let mut row = vec![PAD; width];
            let mut mask = vec![false; width];
            for (j, tok) in sent.iter().take(max_words).enumerate() {
                let id = vocab.word_id(tok);
                if id == UNK {
                    stats.unk_tokens += 1;
                }
                stats.total_tokens += 1;
                row[j] = id;
                mask[j] = true;
            }
            words.push(row);
            word_mask.push(mask);
        }
        out.push(EncodedDoc {
            sent_mask: vec![true; words.len()],
            words,
            word_mask,
            user: vocab.user_id(&doc.user),
            product: vocab.product_id(&doc.product),
            label: doc.label,
        });
    }
    (out, stats)
}

/// Word embedding table plus the count of rows that had to be random-filled.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    /// Row-major `[n_words x dim]`.
    pub data: Vec<f64>,
    pub dim: usize,
    pub random_rows: usize,
}

/// Random table: every row drawn from U(-0.01, 0.01) except the all-zero
/// PAD row.
pub fn random_embeddings(vocab: &Vocabulary, dim: usize, seed: u64) -> EmbeddingTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = vocab.n_words();
    let mut data = vec![0.0; n * dim];
    for row in 1..n {
        for v in data[row * dim..(row + 1) * dim].iter_mut() {
            *v = rng.gen_range(-0.01..0.01);
        }
    }
    EmbeddingTable { data, dim, random_rows: n - 1 }
}

/// Load text-format embeddings: an optional `count dim` header line, then one
/// `token v1 .. v_dim` line per word. Vocabulary tokens missing from the file
/// are drawn from U(-0.01, 0.01); the PAD row is always zero.
pub fn load_embeddings(
    path: &Path,
    vocab: &Vocabulary,
    dim: usize,
    seed: u64,
) -> Result<EmbeddingTable, DataError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    load_embeddings_reader(BufReader::new(file), vocab, dim, seed)
}

pub fn load_embeddings_reader<R: Read>(
    reader: R,
    vocab: &Vocabulary,
    dim: usize,
    seed: u64,
) -> Result<EmbeddingTable, DataError> {
    let mut table = random_embeddings(vocab, dim, seed);
    let mut filled = vec![false; vocab.n_words()];
    let reader = BufReader::new(reader);
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| DataError::MalformedLine { line: line_no, msg: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let token = parts.next().unwrap();
        let values: Vec<&str> = parts.collect();
        if line_no == 1 && values.len() == 1 && token.parse::<usize>().is_ok() {
            // "count dim" header
            if let Ok(header_dim) = values[0].parse::<usize>() {
                if header_dim != dim {
                    return Err(DataError::EmbeddingDim { line: 1, got: header_dim, want: dim });
                }
                continue;
            }
        }
        if values.len() != dim {
            return Err(DataError::EmbeddingDim { line: line_no, got: values.len(), want: dim });
        }
        let id = vocab.word_id(token);
        if id == PAD || (id == UNK && token != UNK_TOKEN) {
            continue; // padding row stays zero; token not in vocabulary
        }
        let row = id as usize;
        for (j, v) in values.iter().enumerate() {
            table.data[row * dim + j] = v.parse::<f64>().map_err(|_| DataError::MalformedLine {
                line: line_no,
                msg: format!("bad float {v:?}"),
            })?;
        }
        if !filled[row] {
            filled[row] = true;
            table.random_rows -= 1;
        }
    }
    // PAD stays zero no matter what the file contained.
    for v in table.data[..dim].iter_mut() {
        *v = 0.0;
    }
    Ok(table)
}

#[cfg(test)]
mod tests;
