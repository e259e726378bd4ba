//! File formats and the known/novel split protocol.
//!
//! * Word vectors: word2vec text format, `token r1 ... rD` per line with an
//!   optional `count dim` header.
//! * Annotations: CSV, header `instance_id,<attr1>,...`, cells `0`/`1`.
//! * Features: CSV, header `instance_id,f1,...,fD`, decimal reals.
//! * Scores: CSV, header `instance_id,<attr1>,...`, one row per instance.
//! * Splits: JSON `{seed, split_index, known, novel, train_ids, test_ids}`.
//!
//! Reals are written with Rust's shortest round-trip formatting, so a
//! write/read cycle reproduces every value bit for bit.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{
    AnnotationMatrix, AttributeEmbeddings, AttributeVocabulary, DatasetSplit, FeatureMatrix,
    ScoreMatrix,
};
use crate::error::{Error, Result};

/// Token to vector map with a fixed dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct WordVectorTable {
    dim: usize,
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    vectors: Vec<Vec<f64>>,
}

impl WordVectorTable {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidConfig(
                "word-vector dimension must be positive".into(),
            ));
        }
        Ok(Self {
            dim,
            tokens: Vec::new(),
            index: HashMap::new(),
            vectors: Vec::new(),
        })
    }

    /// Adds a token; `line` is only used for error reporting.
    pub fn insert(&mut self, token: String, vector: Vec<f64>, line: usize) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::LengthMismatch {
                line,
                expected: self.dim,
                found: vector.len(),
            });
        }
        if self.index.contains_key(&token) {
            return Err(Error::DuplicateToken { token, line });
        }
        self.index.insert(token.clone(), self.tokens.len());
        self.tokens.push(token);
        self.vectors.push(vector);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.index.get(token).map(|&i| self.vectors[i].as_slice())
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn parse_real(s: &str, line: usize) -> Result<f64> {
    let v: f64 = s.parse().map_err(|_| Error::Parse {
        line,
        message: format!("`{s}` is not a number"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            line,
            message: format!("`{s}` is not finite"),
        });
    }
    Ok(v)
}

pub fn load_word_vectors(path: impl AsRef<Path>) -> Result<WordVectorTable> {
    let path = path.as_ref();
    read_word_vectors(open(path)?).map_err(|e| e.in_file(path))
}

/// Parses the word2vec text format.
///
/// A first line made of exactly two unsigned integers is taken as the
/// `count dim` header; otherwise the dimension comes from the first record.
pub fn read_word_vectors(reader: impl BufRead) -> Result<WordVectorTable> {
    let mut table: Option<WordVectorTable> = None;
    let mut declared_count = None;
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        let mut fields = line.split_ascii_whitespace();
        let Some(token) = fields.next() else {
            continue;
        };
        let rest: Vec<&str> = fields.collect();
        if lineno == 1 && rest.len() == 1 {
            if let (Ok(count), Ok(dim)) = (token.parse::<usize>(), rest[0].parse::<usize>()) {
                table = Some(WordVectorTable::new(dim).map_err(|_| Error::Parse {
                    line: 1,
                    message: "header dimension must be positive".into(),
                })?);
                declared_count = Some(count);
                continue;
            }
        }
        let values = rest
            .iter()
            .map(|s| parse_real(s, lineno))
            .collect::<Result<Vec<_>>>()?;
        let table = match table.as_mut() {
            Some(t) => t,
            None => table.insert(
                WordVectorTable::new(values.len()).map_err(|_| Error::Parse {
                    line: lineno,
                    message: "record has no values".into(),
                })?,
            ),
        };
        table.insert(token.to_string(), values, lineno)?;
    }
    let table = table.ok_or(Error::Empty("word-vector file"))?;
    if let Some(count) = declared_count {
        if count != table.len() {
            return Err(Error::Parse {
                line: 1,
                message: format!("header declares {count} records, found {}", table.len()),
            });
        }
    }
    Ok(table)
}

pub fn write_word_vectors(table: &WordVectorTable, mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "{} {}", table.len(), table.dim())?;
    for (token, vector) in table.tokens.iter().zip(&table.vectors) {
        write!(out, "{token}")?;
        for v in vector {
            write!(out, " {v}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

pub fn save_word_vectors(table: &WordVectorTable, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    write_word_vectors(table, &mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

/// Lowercases, trims and collapses internal whitespace.
pub fn normalize_name(name: &str) -> String {
    name.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// Word vector for an attribute name.
///
/// The normalised name is looked up as a whole (also in its underscore
/// phrase form); failing that, the mean of its in-vocabulary whitespace
/// tokens is returned.
pub fn embed_attribute(name: &str, table: &WordVectorTable) -> Result<Vec<f64>> {
    let norm = normalize_name(name);
    if norm.is_empty() {
        return Err(Error::InvalidConfig("attribute name is empty".into()));
    }
    if let Some(v) = table.get(&norm) {
        return Ok(v.to_vec());
    }
    let phrase = norm.replace(' ', "_");
    if let Some(v) = table.get(&phrase) {
        return Ok(v.to_vec());
    }
    let tokens: Vec<&str> = norm.split(' ').collect();
    let mut sum = vec![0.0; table.dim()];
    let mut hits = 0usize;
    for t in &tokens {
        if let Some(v) = table.get(t) {
            for (s, x) in sum.iter_mut().zip(v) {
                *s += x;
            }
            hits += 1;
        }
    }
    if hits == 0 {
        return Err(Error::OutOfVocabulary(
            tokens.iter().map(|t| t.to_string()).collect(),
        ));
    }
    Ok(sum.into_iter().map(|s| s / hits as f64).collect())
}

/// Embeds every attribute of `vocabulary`, one row each.
pub fn embed_vocabulary(
    vocabulary: &AttributeVocabulary,
    table: &WordVectorTable,
) -> Result<AttributeEmbeddings> {
    let mut m = DMatrix::zeros(vocabulary.len(), table.dim());
    for (i, name) in vocabulary.names().iter().enumerate() {
        let v = embed_attribute(name, table)?;
        m.row_mut(i).copy_from_slice(&v);
    }
    AttributeEmbeddings::new(vocabulary.clone(), m)
}

/// Header plus rows of a `instance_id,...` CSV file, with file line numbers.
struct CsvTable {
    header: Vec<String>,
    rows: Vec<(usize, String, Vec<String>)>,
}

fn read_csv_table(reader: impl Read, what: &'static str) -> Result<CsvTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut records = rdr.records();
    let header = match records.next() {
        Some(r) => r.map_err(csv_error)?,
        None => return Err(Error::Empty(what)),
    };
    let header: Vec<String> = header.iter().map(|s| s.trim().to_string()).collect();
    if header.first().map(String::as_str) != Some("instance_id") {
        return Err(Error::Parse {
            line: 1,
            message: "header must start with `instance_id`".into(),
        });
    }
    if header.len() < 2 {
        return Err(Error::Parse {
            line: 1,
            message: "header names no columns".into(),
        });
    }
    let mut rows = Vec::new();
    let mut seen = HashSet::new();
    for rec in records {
        let rec = rec.map_err(csv_error)?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() == 1 && rec[0].trim().is_empty() {
            continue;
        }
        if rec.len() != header.len() {
            return Err(Error::RaggedRow {
                line,
                expected: header.len(),
                found: rec.len(),
            });
        }
        let id = rec[0].trim().to_string();
        if !seen.insert(id.clone()) {
            return Err(Error::DuplicateId(id));
        }
        let cells = rec.iter().skip(1).map(|s| s.trim().to_string()).collect();
        rows.push((line, id, cells));
    }
    Ok(CsvTable { header, rows })
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    Error::Parse {
        line,
        message: e.to_string(),
    }
}

pub fn load_annotations(path: impl AsRef<Path>) -> Result<AnnotationMatrix> {
    let path = path.as_ref();
    read_annotations(open(path)?).map_err(|e| e.in_file(path))
}

pub fn read_annotations(reader: impl Read) -> Result<AnnotationMatrix> {
    let table = read_csv_table(reader, "annotation file")?;
    let vocabulary = AttributeVocabulary::new(table.header[1..].iter().cloned())?;
    let mut cells = DMatrix::zeros(vocabulary.len(), table.rows.len());
    let mut ids = Vec::with_capacity(table.rows.len());
    for (col, (line, id, row)) in table.rows.into_iter().enumerate() {
        for (r, cell) in row.iter().enumerate() {
            cells[(r, col)] = match cell.as_str() {
                "0" => 0,
                "1" => 1,
                _ => {
                    return Err(Error::NonBinary {
                        line,
                        value: cell.clone(),
                    })
                }
            };
        }
        ids.push(id);
    }
    AnnotationMatrix::new(vocabulary, ids, cells)
}

pub fn write_annotations(m: &AnnotationMatrix, out: impl Write) -> Result<()> {
    let cells = m.cells();
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["instance_id".to_string()];
    header.extend(m.vocabulary().names().iter().cloned());
    w.write_record(&header).map_err(csv_error)?;
    for (c, id) in m.instance_ids().iter().enumerate() {
        let mut rec = vec![id.clone()];
        rec.extend((0..cells.nrows()).map(|r| cells[(r, c)].to_string()));
        w.write_record(&rec).map_err(csv_error)?;
    }
    w.flush().map_err(|e| Error::io("<annotations>", e))
}

pub fn save_annotations(m: &AnnotationMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    write_annotations(m, create(path)?)
}

pub fn load_features(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    let path = path.as_ref();
    read_features(open(path)?).map_err(|e| e.in_file(path))
}

/// Reads a feature CSV; the dimension is the header's column count.
pub fn read_features(reader: impl Read) -> Result<FeatureMatrix> {
    let table = read_csv_table(reader, "feature file")?;
    let dim = table.header.len() - 1;
    let mut data = DMatrix::zeros(dim, table.rows.len());
    let mut ids = Vec::with_capacity(table.rows.len());
    for (col, (line, id, row)) in table.rows.into_iter().enumerate() {
        for (r, cell) in row.iter().enumerate() {
            data[(r, col)] = parse_real(cell, line)?;
        }
        ids.push(id);
    }
    FeatureMatrix::new(ids, data)
}

fn write_real_table(
    out: impl Write,
    columns: &[String],
    ids: &[String],
    data: &DMatrix<f64>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["instance_id".to_string()];
    header.extend(columns.iter().cloned());
    w.write_record(&header).map_err(csv_error)?;
    for (c, id) in ids.iter().enumerate() {
        let mut rec = vec![id.clone()];
        rec.extend((0..data.nrows()).map(|r| data[(r, c)].to_string()));
        w.write_record(&rec).map_err(csv_error)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))
}

pub fn write_features(m: &FeatureMatrix, out: impl Write) -> Result<()> {
    let columns: Vec<String> = (1..=m.dim()).map(|i| format!("f{i}")).collect();
    write_real_table(out, &columns, m.instance_ids(), m.data())
}

pub fn save_features(m: &FeatureMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    write_features(m, create(path)?)
}

pub fn write_scores(m: &ScoreMatrix, out: impl Write) -> Result<()> {
    write_real_table(out, m.vocabulary().names(), m.instance_ids(), m.scores())
}

pub fn save_scores(m: &ScoreMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    write_scores(m, create(path)?)
}

pub fn read_scores(reader: impl Read) -> Result<ScoreMatrix> {
    let table = read_csv_table(reader, "score file")?;
    let vocabulary = AttributeVocabulary::new(table.header[1..].iter().cloned())?;
    let mut data = DMatrix::zeros(vocabulary.len(), table.rows.len());
    let mut ids = Vec::with_capacity(table.rows.len());
    for (col, (line, id, row)) in table.rows.into_iter().enumerate() {
        for (r, cell) in row.iter().enumerate() {
            data[(r, col)] = parse_real(cell, line)?;
        }
        ids.push(id);
    }
    ScoreMatrix::new(vocabulary, ids, data)
}

pub fn load_scores(path: impl AsRef<Path>) -> Result<ScoreMatrix> {
    let path = path.as_ref();
    read_scores(open(path)?).map_err(|e| e.in_file(path))
}

/// One instance id per line; blank lines ignored.
pub fn load_id_list(path: impl AsRef<Path>) -> Result<HashSet<String>> {
    let path = path.as_ref();
    let mut out = HashSet::new();
    for line in open(path)?.lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let t = line.trim();
        if !t.is_empty() {
            out.insert(t.to_string());
        }
    }
    Ok(out)
}

/// Attribute vocabulary from a file with one name per line.
pub fn load_vocabulary(path: impl AsRef<Path>) -> Result<AttributeVocabulary> {
    let path = path.as_ref();
    let mut names = Vec::new();
    for line in open(path)?.lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let t = line.trim();
        if !t.is_empty() {
            names.push(t.to_string());
        }
    }
    AttributeVocabulary::new(names)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    pub num_novel: usize,
    pub num_splits: usize,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            num_novel: 9,
            num_splits: 50,
            seed: 0,
        }
    }
}

impl SplitConfig {
    pub fn validate(&self, vocabulary_size: usize) -> Result<()> {
        if self.num_novel == 0 {
            return Err(Error::InvalidConfig("num_novel must be positive".into()));
        }
        if self.num_splits == 0 {
            return Err(Error::InvalidConfig("num_splits must be at least 1".into()));
        }
        if self.num_novel >= vocabulary_size {
            return Err(Error::InvalidConfig(format!(
                "num_novel {} must be smaller than the vocabulary size {vocabulary_size}",
                self.num_novel
            )));
        }
        Ok(())
    }
}

/// The split generator: ChaCha8 keyed by `seed`, stream `split_index`.
pub fn split_rng(seed: u64, split_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(split_index);
    rng
}

/// Draws `k` distinct indices from `0..n` by a partial Fisher-Yates shuffle.
pub fn sample_indices(rng: &mut impl Rng, n: usize, k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..k.min(n) {
        let j = rng.random_range(i..n);
        idx.swap(i, j);
    }
    idx.truncate(k.min(n));
    idx
}

/// Random known/novel split.
///
/// Novel attributes are drawn uniformly; instances with no positive novel
/// label go to training, every other instance to testing. Attribute lists
/// keep vocabulary order, id lists keep annotation order.
pub fn generate_split(
    vocabulary: &AttributeVocabulary,
    annotations: &AnnotationMatrix,
    cfg: &SplitConfig,
    split_index: usize,
) -> Result<DatasetSplit> {
    cfg.validate(vocabulary.len())?;
    if split_index >= cfg.num_splits {
        return Err(Error::InvalidConfig(format!(
            "split index {split_index} out of range for {} splits",
            cfg.num_splits
        )));
    }
    let mut rng = split_rng(cfg.seed, split_index as u64);
    let mut is_novel = vec![false; vocabulary.len()];
    for i in sample_indices(&mut rng, vocabulary.len(), cfg.num_novel) {
        is_novel[i] = true;
    }
    let (novel, known): (Vec<_>, Vec<_>) = vocabulary
        .names()
        .iter()
        .zip(&is_novel)
        .partition(|(_, &n)| n);
    let known = AttributeVocabulary::new(known.into_iter().map(|(n, _)| n.clone()))?;
    let novel = AttributeVocabulary::new(novel.into_iter().map(|(n, _)| n.clone()))?;

    let rows = annotations.vocabulary().positions_of(&novel)?;
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (c, id) in annotations.instance_ids().iter().enumerate() {
        if rows.iter().any(|&r| annotations.get(r, c)) {
            test.push(id.clone());
        } else {
            train.push(id.clone());
        }
    }
    DatasetSplit::new(cfg.seed, split_index as u64, known, novel, train, test)
}

/// Holds out the named attributes for detection on unseen data.
///
/// A seeded `test_fraction` of the instances forms the test set whatever
/// their labels; the remaining instances train the known models, minus any
/// positive on a held-out attribute.
pub fn holdout_split(
    annotations: &AnnotationMatrix,
    novel_names: &[&str],
    test_fraction: f64,
    seed: u64,
) -> Result<DatasetSplit> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "test fraction must be in (0, 1), got {test_fraction}"
        )));
    }
    let vocab = annotations.vocabulary();
    let novel = AttributeVocabulary::new(novel_names.iter().copied())?;
    let rows = vocab
        .positions_of(&novel)
        .map_err(|_| Error::UnknownAttribute(novel_names.join(",")))?;
    let known =
        AttributeVocabulary::new(vocab.names().iter().filter(|n| !novel.contains(n)).cloned())?;
    let n = annotations.len();
    let k = ((n as f64) * test_fraction).round() as usize;
    let mut in_test = vec![false; n];
    for i in sample_indices(&mut split_rng(seed, 0), n, k) {
        in_test[i] = true;
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (c, id) in annotations.instance_ids().iter().enumerate() {
        if in_test[c] {
            test.push(id.clone());
        } else if !rows.iter().any(|&r| annotations.get(r, c)) {
            train.push(id.clone());
        }
    }
    DatasetSplit::new(seed, 0, known, novel, train, test)
}

pub fn save_split(split: &DatasetSplit, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, split).map_err(|e| Error::json(path, e))?;
    w.write_all(b"\n")
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn load_split(path: impl AsRef<Path>) -> Result<DatasetSplit> {
    let path = path.as_ref();
    let split: DatasetSplit =
        serde_json::from_reader(open(path)?).map_err(|e| Error::json(path, e))?;
    DatasetSplit::new(
        split.seed,
        split.split_index,
        split.known,
        split.novel,
        split.train_ids,
        split.test_ids,
    )
}
