//! Reading word2vec text vectors and persisting fitted models.
//!
//! A model directory holds `meta.json`, `vocab.txt` and four row-major
//! little-endian `f32` matrices: `mean.f32` (D), `whitening.f32` (C×D),
//! `unmixing.f32` (C×C) and `sources.f32` (V×C). Matrices are kept in `f64`
//! in memory and rounded to `f32` on save.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fastica::{Contrast, IcaModel};
use crate::whitening::WhiteningModel;

pub const MODEL_FORMAT_VERSION: u64 = 1;

const META_FILE: &str = "meta.json";
const VOCAB_FILE: &str = "vocab.txt";
const MEAN_FILE: &str = "mean.f32";
const WHITENING_FILE: &str = "whitening.f32";
const UNMIXING_FILE: &str = "unmixing.f32";
const SOURCES_FILE: &str = "sources.f32";

/// Ordered list of unique tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Builds a vocabulary, rejecting empty input, duplicates and tokens
    /// containing whitespace.
    pub fn new(tokens: Vec<String>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::InvalidArgument("vocabulary is empty".into()));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, token) in tokens.iter().enumerate() {
            if token.is_empty() || token.chars().any(char::is_whitespace) {
                return Err(Error::InvalidArgument(format!(
                    "token {i} ({token:?}) is empty or contains whitespace"
                )));
            }
            if index.insert(token.clone(), i).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate token {token:?}")));
            }
        }
        Ok(Vocabulary { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, i: usize) -> &str {
        &self.tokens[i]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }
}

/// V×D embedding matrix stored at 32-bit precision; row `i` belongs to
/// vocabulary token `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    data: Array2<f32>,
}

impl EmbeddingMatrix {
    pub fn new(data: Array2<f32>) -> Result<Self> {
        if let Some(((i, j), v)) = data.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite value {v} at row {i}, column {j}"
            )));
        }
        Ok(EmbeddingMatrix { data })
    }

    pub fn from_f64(data: &Array2<f64>) -> Result<Self> {
        Self::new(data.mapv(|v| v as f32))
    }

    pub fn v(&self) -> usize {
        self.data.nrows()
    }

    pub fn d(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &Array2<f32> {
        &self.data
    }

    /// Widened copy used by the numerical routines.
    pub fn to_f64(&self) -> Array2<f64> {
        self.data.mapv(f64::from)
    }
}

/// Loads a word2vec text file: a `V D` header followed by V lines of
/// `token x1 .. xD`. Fields are separated by spaces or tabs; LF and CRLF
/// line endings are accepted.
pub fn load_text_embeddings(path: impl AsRef<Path>) -> Result<(Vocabulary, EmbeddingMatrix)> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_text_embeddings(BufReader::new(file), path)
}

/// Parser behind [`load_text_embeddings`]; `origin` only labels diagnostics.
pub fn parse_text_embeddings<R: BufRead>(
    reader: R,
    origin: &Path,
) -> Result<(Vocabulary, EmbeddingMatrix)> {
    let err = |line: usize, message: String| Error::Parse {
        path: origin.to_path_buf(),
        line,
        message,
    };
    let mut lines = reader.lines().enumerate().map(|(i, l)| (i + 1, l));

    let (v, d) = match lines.next() {
        None => return Err(err(1, "empty file, expected `V D` header".into())),
        Some((n, line)) => {
            let line = line.map_err(|e| Error::io(origin, e))?;
            let fields: Vec<&str> = split_fields(&line).collect();
            if fields.len() != 2 {
                return Err(err(n, format!("header must be `V D`, got {line:?}")));
            }
            let parse = |s: &str, what: &str| {
                s.parse::<usize>()
                    .map_err(|_| err(n, format!("header {what} {s:?} is not a non-negative integer")))
            };
            (parse(fields[0], "V")?, parse(fields[1], "D")?)
        }
    };
    if v == 0 || d == 0 {
        return Err(err(1, format!("header declares an empty matrix ({v} x {d})")));
    }

    let mut tokens = Vec::with_capacity(v);
    let mut seen: HashMap<String, usize> = HashMap::with_capacity(v);
    let mut data = Vec::with_capacity(v * d);
    let mut last_line = 1;

    for (n, line) in lines {
        let line = line.map_err(|e| Error::io(origin, e))?;
        last_line = n;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if tokens.len() == v {
            if line.trim().is_empty() {
                continue;
            }
            return Err(err(n, format!("header says {v} rows but more rows follow")));
        }
        let mut fields = split_fields(line);
        let token = match fields.next() {
            Some(t) => t,
            None => return Err(err(n, "empty line inside the vector body".into())),
        };
        if let Some(&first) = seen.get(token) {
            return Err(err(n, format!("duplicate token {token:?} (first seen on line {first})")));
        }
        let before = data.len();
        for field in fields {
            let value: f32 = field
                .parse()
                .map_err(|_| err(n, format!("non-numeric value {field:?}")))?;
            if !value.is_finite() {
                return Err(err(n, format!("non-finite value {field:?}")));
            }
            data.push(value);
        }
        let got = data.len() - before;
        if got != d {
            return Err(err(n, format!("expected {d} values for {token:?}, found {got}")));
        }
        seen.insert(token.to_string(), n);
        tokens.push(token.to_string());
    }

    if tokens.len() != v {
        return Err(err(
            last_line + 1,
            format!("header says {v} rows but the file has {}", tokens.len()),
        ));
    }

    let vocab = Vocabulary::new(tokens)?;
    let matrix = Array2::from_shape_vec((v, d), data)
        .map_err(|e| Error::Shape(e.to_string()))?;
    Ok((vocab, EmbeddingMatrix::new(matrix)?))
}

fn split_fields(line: &str) -> impl Iterator<Item = &str> {
    line.split([' ', '\t']).filter(|f| !f.is_empty())
}

/// Writes vectors in word2vec text format (used for fixtures and exports).
pub fn write_text_embeddings(
    path: impl AsRef<Path>,
    vocab: &Vocabulary,
    embeddings: &EmbeddingMatrix,
) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let write = |out: &mut BufWriter<fs::File>| -> std::io::Result<()> {
        writeln!(out, "{} {}", embeddings.v(), embeddings.d())?;
        for (token, row) in vocab.tokens().iter().zip(embeddings.data().rows()) {
            write!(out, "{token}")?;
            for v in row {
                write!(out, " {v}")?;
            }
            writeln!(out)?;
        }
        out.flush()
    };
    write(&mut out).map_err(|e| Error::io(path, e))
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ModelMeta {
    format_version: u64,
    v: usize,
    d: usize,
    c: usize,
    seed: u64,
    tolerance: f64,
    max_iter: usize,
    contrast: Contrast,
    #[serde(default = "one")]
    restarts: usize,
    iterations: usize,
    converged: bool,
    sign_flips: Option<Vec<i8>>,
    explained_variance: Vec<f64>,
}

/// Persists a model. An existing directory that already holds a model is
/// only overwritten when `force` is set.
pub fn save_model(model: &IcaModel, dir: impl AsRef<Path>, force: bool) -> Result<()> {
    let dir = dir.as_ref();
    if dir.join(META_FILE).exists() && !force {
        return Err(Error::WouldOverwrite(dir.to_path_buf()));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let meta = ModelMeta {
        format_version: MODEL_FORMAT_VERSION,
        v: model.vocab.len(),
        d: model.whitening.mean.len(),
        c: model.w.nrows(),
        seed: model.seed,
        tolerance: model.tolerance,
        max_iter: model.max_iter,
        restarts: model.restarts,
        contrast: model.contrast,
        iterations: model.iterations_run,
        converged: model.converged,
        sign_flips: model.sign_flips.clone(),
        explained_variance: model.whitening.explained_variance.to_vec(),
    };
    let json = serde_json::to_string_pretty(&meta)?;
    write_file(&dir.join(META_FILE), format!("{json}\n").as_bytes())?;

    let mut vocab = String::new();
    for token in model.vocab.tokens() {
        vocab.push_str(token);
        vocab.push('\n');
    }
    write_file(&dir.join(VOCAB_FILE), vocab.as_bytes())?;

    write_f32(&dir.join(MEAN_FILE), model.whitening.mean.iter())?;
    write_f32(&dir.join(WHITENING_FILE), model.whitening.k.iter())?;
    write_f32(&dir.join(UNMIXING_FILE), model.w.iter())?;
    write_f32(&dir.join(SOURCES_FILE), model.s.iter())?;
    Ok(())
}

/// Reads a model written by [`save_model`], validating every matrix size
/// against `meta.json`.
pub fn load_model(dir: impl AsRef<Path>) -> Result<IcaModel> {
    let dir = dir.as_ref();
    let model_err = |message: String| Error::Model {
        path: dir.to_path_buf(),
        message,
    };

    let meta_path = dir.join(META_FILE);
    let raw = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let value: serde_json::Value = serde_json::from_str(&raw)
        .map_err(|e| model_err(format!("corrupt {META_FILE}: {e}")))?;
    match value.get("format_version").and_then(serde_json::Value::as_u64) {
        Some(MODEL_FORMAT_VERSION) => {}
        Some(other) => return Err(Error::UnsupportedVersion(other)),
        None => return Err(model_err(format!("{META_FILE} lacks format_version"))),
    }
    let meta: ModelMeta = serde_json::from_value(value)
        .map_err(|e| model_err(format!("corrupt {META_FILE}: {e}")))?;

    if meta.c == 0 || meta.c > meta.d {
        return Err(model_err(format!("component count {} invalid for D = {}", meta.c, meta.d)));
    }
    if meta.explained_variance.len() != meta.c {
        return Err(model_err(format!(
            "explained_variance has {} entries, expected {}",
            meta.explained_variance.len(),
            meta.c
        )));
    }
    if let Some(flips) = &meta.sign_flips {
        if flips.len() != meta.c || flips.iter().any(|&f| f != 1 && f != -1) {
            return Err(model_err("sign_flips must hold C entries of +1/-1".into()));
        }
    }

    let vocab_path = dir.join(VOCAB_FILE);
    let vocab_raw = fs::read_to_string(&vocab_path).map_err(|e| Error::io(&vocab_path, e))?;
    let tokens: Vec<String> = vocab_raw.lines().map(str::to_string).collect();
    if tokens.len() != meta.v {
        return Err(model_err(format!(
            "{VOCAB_FILE} has {} tokens, meta.json says {}",
            tokens.len(),
            meta.v
        )));
    }
    let vocab = Vocabulary::new(tokens).map_err(|e| model_err(e.to_string()))?;

    let mean = Array1::from(read_f32(&dir.join(MEAN_FILE), meta.d)?);
    let k = to_matrix(read_f32(&dir.join(WHITENING_FILE), meta.c * meta.d)?, meta.c, meta.d)?;
    let w = to_matrix(read_f32(&dir.join(UNMIXING_FILE), meta.c * meta.c)?, meta.c, meta.c)?;
    let s = to_matrix(read_f32(&dir.join(SOURCES_FILE), meta.v * meta.c)?, meta.v, meta.c)?;

    Ok(IcaModel {
        vocab,
        whitening: WhiteningModel {
            mean,
            k,
            explained_variance: Array1::from(meta.explained_variance),
        },
        w,
        s,
        seed: meta.seed,
        tolerance: meta.tolerance,
        max_iter: meta.max_iter,
        restarts: meta.restarts,
        contrast: meta.contrast,
        iterations_run: meta.iterations,
        converged: meta.converged,
        sign_flips: meta.sign_flips,
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn write_f32<'a>(path: &Path, values: impl Iterator<Item = &'a f64>) -> Result<()> {
    let mut bytes = Vec::new();
    for &v in values {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    write_file(path, &bytes)
}

fn read_f32(path: &PathBuf, expected: usize) -> Result<Vec<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != expected * 4 {
        return Err(Error::Model {
            path: path.clone(),
            message: format!("expected {} bytes ({expected} f32 values), found {}", expected * 4, bytes.len()),
        });
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|b| f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]])))
        .collect())
}

fn to_matrix(values: Vec<f64>, rows: usize, cols: usize) -> Result<Array2<f64>> {
    Array2::from_shape_vec((rows, cols), values).map_err(|e| Error::Shape(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn parse(text: &str) -> Result<(Vocabulary, EmbeddingMatrix)> {
        parse_text_embeddings(text.as_bytes(), Path::new("test.vec"))
    }

    fn parse_line(result: Result<(Vocabulary, EmbeddingMatrix)>) -> usize {
        match result {
            Err(Error::Parse { line, .. }) => line,
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn reads_simple_file() {
        let (vocab, m) = parse("2 3\na 1 0 0\nb 0 1 0").unwrap();
        assert_eq!(vocab.tokens(), &["a".to_string(), "b".to_string()]);
        assert_eq!(vocab.index_of("b"), Some(1));
        assert_eq!(m.data(), &array![[1.0f32, 0.0, 0.0], [0.0, 1.0, 0.0]]);
    }

    #[test]
    fn accepts_crlf_and_tabs() {
        let (vocab, m) = parse("2 2\r\nx\t0.5\t-1\r\ny 2 3\r\n").unwrap();
        assert_eq!(vocab.len(), 2);
        assert_eq!(m.data()[[0, 1]], -1.0);
    }

    #[test]
    fn duplicate_token_reports_line() {
        let r = parse("2 3\na 1 0 0\na 0 1 0");
        assert_eq!(parse_line(r), 3);
    }

    #[test]
    fn short_body_is_count_mismatch() {
        let r = parse("3 2\na 1 0");
        let msg = r.unwrap_err().to_string();
        assert!(msg.contains("header says 3 rows"), "{msg}");
    }

    #[test]
    fn long_body_is_count_mismatch() {
        assert_eq!(parse_line(parse("1 1\na 1\nb 2\n")), 3);
    }

    #[test]
    fn non_numeric_and_dimension_errors() {
        assert_eq!(parse_line(parse("2 2\na 1 0\nb 1 x\n")), 3);
        assert_eq!(parse_line(parse("2 2\na 1 0 4\nb 1 1\n")), 2);
        assert_eq!(parse_line(parse("1 2\na nan 0\n")), 2);
        assert_eq!(parse_line(parse("two 2\n")), 1);
    }
}
