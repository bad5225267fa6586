//! Token-embedding containers and role alignment.
//!
//! `CTXEMB1` layout (all integers little-endian):
//!
//! ```text
//! b"CTXEMB1\n"
//! u32 header length, then UTF-8 JSON {"encoder_id","layer","dim","count"}
//! count times:
//!     u16 id length, id bytes
//!     u32 token count
//!     token_count * dim f32, row-major
//! ```
//!
//! The header is written as compact JSON with keys in the order above.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use indexmap::IndexMap;
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::genset::{Dataset, Role, SentenceItem, Split};

pub const MAGIC: &[u8; 8] = b"CTXEMB1\n";
pub const GLOVE_ID: &str = "glove";

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("bad magic bytes, not a CTXEMB1 container")]
    BadMagic,
    #[error("malformed header: {0}")]
    Header(String),
    #[error("payload truncated in sentence `{0}`")]
    Truncated(String),
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("duplicate sentence id `{0}`")]
    DuplicateId(String),
    #[error("{0} trailing bytes after the last sentence")]
    TrailingData(usize),
    #[error("sentence `{0}` missing from embedding set")]
    MissingSentence(String),
    #[error("sentence `{id}` has {tokens} tokens but {rows} embedding rows")]
    TokenCountMismatch { id: String, tokens: usize, rows: usize },
    #[error("sentence `{id}` has no `{role}` role")]
    MissingRole { id: String, role: Role },
    #[error("token `{0}` has no vector")]
    OutOfVocabulary(String),
    #[error("vector file line {line}: {msg}")]
    VectorParse { line: usize, msg: String },
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    encoder_id: String,
    layer: i32,
    dim: usize,
    count: usize,
}

/// Per-sentence token vectors for one encoder and layer.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    pub encoder_id: String,
    /// Negative-from-end layer index; -1 is the final layer.
    pub layer: i32,
    pub dim: usize,
    pub sentences: IndexMap<String, Array2<f32>>,
}

impl EmbeddingSet {
    pub fn new(encoder_id: impl Into<String>, layer: i32, dim: usize) -> Self {
        EmbeddingSet {
            encoder_id: encoder_id.into(),
            layer,
            dim,
            sentences: IndexMap::new(),
        }
    }

    pub fn insert(&mut self, id: impl Into<String>, matrix: Array2<f32>) -> Result<(), EmbedError> {
        let id = id.into();
        if matrix.ncols() != self.dim {
            return Err(EmbedError::DimMismatch(format!(
                "sentence `{id}` has width {}, set dim is {}",
                matrix.ncols(),
                self.dim
            )));
        }
        if self.sentences.contains_key(&id) {
            return Err(EmbedError::DuplicateId(id));
        }
        self.sentences.insert(id, matrix);
        Ok(())
    }
}

pub fn read_container(path: impl AsRef<Path>) -> Result<EmbeddingSet, EmbedError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| EmbedError::Io {
        path: path.to_owned(),
        source,
    })?;
    read_container_from(BufReader::new(file))
}

pub fn read_container_from(mut r: impl Read) -> Result<EmbeddingSet, EmbedError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| EmbedError::BadMagic)?;
    if &magic != MAGIC {
        return Err(EmbedError::BadMagic);
    }
    let hlen = r
        .read_u32::<LittleEndian>()
        .map_err(|_| EmbedError::Header("missing header length".into()))?;
    let mut hbytes = vec![0u8; hlen as usize];
    r.read_exact(&mut hbytes)
        .map_err(|_| EmbedError::Header("header truncated".into()))?;
    let header: Header = serde_json::from_slice(&hbytes).map_err(|e| EmbedError::Header(e.to_string()))?;
    if header.dim == 0 {
        return Err(EmbedError::DimMismatch("header dim is 0".into()));
    }

    let mut es = EmbeddingSet::new(header.encoder_id, header.layer, header.dim);
    for n in 0..header.count {
        let id_len = r
            .read_u16::<LittleEndian>()
            .map_err(|_| EmbedError::Truncated(format!("#{n}")))?;
        let mut id = vec![0u8; id_len as usize];
        r.read_exact(&mut id)
            .map_err(|_| EmbedError::Truncated(format!("#{n}")))?;
        let id = String::from_utf8(id).map_err(|_| EmbedError::Header(format!("sentence #{n}: id is not UTF-8")))?;
        let tokens = r
            .read_u32::<LittleEndian>()
            .map_err(|_| EmbedError::Truncated(id.clone()))? as usize;
        let mut data = vec![0f32; tokens * header.dim];
        r.read_f32_into::<LittleEndian>(&mut data)
            .map_err(|_| EmbedError::Truncated(id.clone()))?;
        let m = Array2::from_shape_vec((tokens, header.dim), data).expect("shape matches buffer");
        es.insert(id, m)?;
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest).map_err(|source| EmbedError::Io {
        path: PathBuf::new(),
        source,
    })?;
    if !rest.is_empty() {
        return Err(EmbedError::TrailingData(rest.len()));
    }
    Ok(es)
}

pub fn write_container(path: impl AsRef<Path>, es: &EmbeddingSet) -> Result<(), EmbedError> {
    let path = path.as_ref();
    let io_err = |source| EmbedError::Io {
        path: path.to_owned(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
    write_container_to(&mut w, es)?;
    w.flush().map_err(io_err)
}

pub fn write_container_to(mut w: impl Write, es: &EmbeddingSet) -> Result<(), EmbedError> {
    let io_err = |source| EmbedError::Io {
        path: PathBuf::new(),
        source,
    };
    let header = Header {
        encoder_id: es.encoder_id.clone(),
        layer: es.layer,
        dim: es.dim,
        count: es.sentences.len(),
    };
    let hbytes = serde_json::to_vec(&header).expect("serializable header");
    w.write_all(MAGIC).map_err(io_err)?;
    w.write_u32::<LittleEndian>(hbytes.len() as u32).map_err(io_err)?;
    w.write_all(&hbytes).map_err(io_err)?;
    for (id, m) in &es.sentences {
        if m.ncols() != es.dim {
            return Err(EmbedError::DimMismatch(format!("sentence `{id}` width {} vs dim {}", m.ncols(), es.dim)));
        }
        let id_len = u16::try_from(id.len()).map_err(|_| EmbedError::Header(format!("id `{id}` too long")))?;
        w.write_u16::<LittleEndian>(id_len).map_err(io_err)?;
        w.write_all(id.as_bytes()).map_err(io_err)?;
        w.write_u32::<LittleEndian>(m.nrows() as u32).map_err(io_err)?;
        for &v in m.iter() {
            w.write_f32::<LittleEndian>(v).map_err(io_err)?;
        }
    }
    Ok(())
}

/// Probe inputs for one split: one row per item, taken at the probed role.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub task_id: String,
    pub probed_role: Role,
    pub split: Split,
    pub rows: Array2<f32>,
    pub labels: Vec<String>,
}

impl FeatureTable {
    pub fn dim(&self) -> usize {
        self.rows.ncols()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Selects the embedding row of `probed_role` for every item of both splits.
pub fn align(es: &EmbeddingSet, ds: &Dataset, probed_role: Role) -> Result<(FeatureTable, FeatureTable), EmbedError> {
    let task_id = ds.spec.id();
    let table = |split: Split| -> Result<FeatureTable, EmbedError> {
        let items = ds.split(split);
        let mut rows = Array2::zeros((items.len(), es.dim));
        for (i, it) in items.iter().enumerate() {
            let m = sentence_matrix(es, it)?;
            let pos = *it.roles.get(&probed_role).ok_or_else(|| EmbedError::MissingRole {
                id: it.id.clone(),
                role: probed_role,
            })?;
            rows.row_mut(i).assign(&m.row(pos));
        }
        Ok(FeatureTable {
            task_id: task_id.clone(),
            probed_role,
            split,
            rows,
            labels: items.iter().map(|it| it.label.clone()).collect(),
        })
    };
    Ok((table(Split::Train)?, table(Split::Test)?))
}

fn sentence_matrix<'a>(es: &'a EmbeddingSet, it: &SentenceItem) -> Result<&'a Array2<f32>, EmbedError> {
    let m = es
        .sentences
        .get(&it.id)
        .ok_or_else(|| EmbedError::MissingSentence(it.id.clone()))?;
    if m.nrows() != it.tokens.len() {
        return Err(EmbedError::TokenCountMismatch {
            id: it.id.clone(),
            tokens: it.tokens.len(),
            rows: m.nrows(),
        });
    }
    Ok(m)
}

/// Alignment problems for every item, without building tables.
pub fn alignment_failures(es: &EmbeddingSet, ds: &Dataset) -> Vec<String> {
    ds.items()
        .filter_map(|it| sentence_matrix(es, it).err().map(|e| e.to_string()))
        .collect()
}

/// Type-level (context-independent) word vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct GloveVectors {
    pub dim: usize,
    pub vectors: HashMap<String, Vec<f32>>,
}

impl GloveVectors {
    /// Reads a whitespace-separated text vector file. With `vocab`, only
    /// those words are kept. A leading `count dim` line is skipped.
    pub fn load(path: impl AsRef<Path>, vocab: Option<&HashSet<String>>) -> Result<Self, EmbedError> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|source| EmbedError::Io {
            path: path.to_owned(),
            source,
        })?;
        Self::read(BufReader::new(file), vocab)
    }

    pub fn read(r: impl BufRead, vocab: Option<&HashSet<String>>) -> Result<Self, EmbedError> {
        let mut dim = 0usize;
        let mut vectors = HashMap::new();
        for (i, line) in r.lines().enumerate() {
            let line = line.map_err(|source| EmbedError::Io {
                path: PathBuf::new(),
                source,
            })?;
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.is_empty() {
                continue;
            }
            if i == 0 && fields.len() == 2 && fields.iter().all(|f| f.parse::<usize>().is_ok()) {
                continue;
            }
            if dim == 0 {
                dim = fields.len() - 1;
                if dim == 0 {
                    return Err(EmbedError::VectorParse {
                        line: i + 1,
                        msg: "no vector components".into(),
                    });
                }
            }
            if fields.len() <= dim {
                return Err(EmbedError::VectorParse {
                    line: i + 1,
                    msg: format!("expected a word and {dim} components"),
                });
            }
            // words containing spaces keep everything before the last `dim` fields
            let split = fields.len() - dim;
            let word = fields[..split].join(" ");
            if vocab.is_some_and(|v| !v.contains(&word)) {
                continue;
            }
            let vec = fields[split..]
                .iter()
                .map(|f| f.parse::<f32>())
                .collect::<Result<Vec<f32>, _>>()
                .map_err(|e| EmbedError::VectorParse {
                    line: i + 1,
                    msg: e.to_string(),
                })?;
            vectors.entry(word).or_insert(vec);
        }
        Ok(GloveVectors { dim, vectors })
    }
}

/// Distinct tokens used anywhere in `ds`.
pub fn dataset_vocab(ds: &Dataset) -> HashSet<String> {
    ds.items().flat_map(|it| it.tokens.iter().cloned()).collect()
}

/// Non-contextual baseline: every token row is its type-level vector.
pub fn glove_lookup(vectors: &GloveVectors, ds: &Dataset) -> Result<EmbeddingSet, EmbedError> {
    let mut es = EmbeddingSet::new(GLOVE_ID, -1, vectors.dim);
    for it in ds.items() {
        let mut m = Array2::zeros((it.tokens.len(), vectors.dim));
        for (r, tok) in it.tokens.iter().enumerate() {
            let v = vectors
                .vectors
                .get(tok)
                .ok_or_else(|| EmbedError::OutOfVocabulary(tok.clone()))?;
            m.row_mut(r).assign(&ndarray::ArrayView1::from(v.as_slice()));
        }
        es.insert(it.id.clone(), m)?;
    }
    Ok(es)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genset::{InfoType, TaskSpec, Template};
    use ndarray::array;

    fn item(id: &str, tokens: &[&str]) -> SentenceItem {
        let mut roles = IndexMap::new();
        for (i, r) in Role::CORE.iter().enumerate() {
            roles.insert(*r, i);
        }
        SentenceItem {
            id: id.into(),
            tokens: tokens.iter().map(|s| s.to_string()).collect(),
            roles,
            label: "SINGULAR".into(),
        }
    }

    fn dataset(items: Vec<SentenceItem>) -> Dataset {
        let mut spec = TaskSpec::new(InfoType::Number, Role::Subject, Template::Base, 1);
        spec.n_train = items.len();
        Dataset {
            spec,
            lexicon_checksum: String::new(),
            train: items,
            test: vec![],
        }
    }

    fn bytes(es: &EmbeddingSet) -> Vec<u8> {
        let mut buf = Vec::new();
        write_container_to(&mut buf, es).unwrap();
        buf
    }

    #[test]
    fn header_dim_gives_shape() {
        let mut es = EmbeddingSet::new("bert-base", -1, 768);
        es.insert("s1", Array2::from_elem((5, 768), 0.25)).unwrap();
        let back = read_container_from(bytes(&es).as_slice()).unwrap();
        assert_eq!(back.sentences["s1"].dim(), (5, 768));
        assert_eq!(back, es);
    }

    #[test]
    fn byte_identical_rewrite() {
        let mut es = EmbeddingSet::new("gpt", -2, 3);
        es.insert("b", array![[1.0, -0.0, f32::MIN_POSITIVE], [3.5, 1e-30, -7.0]]).unwrap();
        es.insert("a", array![[f32::NAN, 2.0, 3.0]]).unwrap();
        let raw = bytes(&es);
        let back = read_container_from(raw.as_slice()).unwrap();
        assert_eq!(bytes(&back), raw);
        assert!(raw.starts_with(b"CTXEMB1\n"));
        let hlen = u32::from_le_bytes(raw[8..12].try_into().unwrap()) as usize;
        assert_eq!(
            std::str::from_utf8(&raw[12..12 + hlen]).unwrap(),
            r#"{"encoder_id":"gpt","layer":-2,"dim":3,"count":2}"#
        );
    }

    #[test]
    fn truncated_payload_names_sentence() {
        let mut es = EmbeddingSet::new("x", -1, 4);
        es.insert("first", Array2::zeros((2, 4))).unwrap();
        es.insert("second", Array2::zeros((5, 4))).unwrap();
        let raw = bytes(&es);
        let cut = &raw[..raw.len() - 6];
        match read_container_from(cut) {
            Err(EmbedError::Truncated(id)) => assert_eq!(id, "second"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn container_errors() {
        assert!(matches!(read_container_from(&b"CTXEMB2\nxxxx"[..]), Err(EmbedError::BadMagic)));
        let mut es = EmbeddingSet::new("x", -1, 2);
        es.insert("a", Array2::zeros((1, 2))).unwrap();
        assert!(matches!(es.insert("a", Array2::zeros((1, 2))), Err(EmbedError::DuplicateId(_))));
        assert!(matches!(es.insert("b", Array2::zeros((1, 3))), Err(EmbedError::DimMismatch(_))));
        let mut raw = bytes(&es);
        raw.push(0);
        assert!(matches!(read_container_from(raw.as_slice()), Err(EmbedError::TrailingData(1))));

        // hand-built duplicate
        let mut raw = Vec::new();
        raw.extend_from_slice(MAGIC);
        let h = br#"{"encoder_id":"x","layer":-1,"dim":1,"count":2}"#;
        raw.extend_from_slice(&(h.len() as u32).to_le_bytes());
        raw.extend_from_slice(h);
        for _ in 0..2 {
            raw.extend_from_slice(&1u16.to_le_bytes());
            raw.push(b'a');
            raw.extend_from_slice(&1u32.to_le_bytes());
            raw.extend_from_slice(&1f32.to_le_bytes());
        }
        assert!(matches!(read_container_from(raw.as_slice()), Err(EmbedError::DuplicateId(_))));
    }

    #[test]
    fn align_selects_role_row() {
        let ds = dataset(vec![
            item("s0", &["the", "lawyer", "betrayed", "the", "judge"]),
            item("s1", &["the", "lawyers", "found", "the", "judge"]),
        ]);
        let mut es = EmbeddingSet::new("m", -1, 2);
        for (n, id) in ["s0", "s1"].iter().enumerate() {
            let m = Array2::from_shape_fn((5, 2), |(r, c)| (n * 100 + r * 10 + c) as f32);
            es.insert(*id, m).unwrap();
        }
        let (train, test) = align(&es, &ds, Role::Verb).unwrap();
        assert_eq!(train.rows, array![[20.0, 21.0], [120.0, 121.0]]);
        assert_eq!(train.labels, ["SINGULAR", "SINGULAR"]);
        assert!(test.is_empty());
    }

    #[test]
    fn align_errors() {
        let ds = dataset(vec![item("s0", &["the", "lawyer", "betrayed", "the", "judge"])]);
        let mut es = EmbeddingSet::new("m", -1, 2);
        es.insert("s0", Array2::zeros((4, 2))).unwrap();
        assert!(matches!(align(&es, &ds, Role::Subject), Err(EmbedError::TokenCountMismatch { rows: 4, tokens: 5, .. })));
        let empty = EmbeddingSet::new("m", -1, 2);
        assert!(matches!(align(&empty, &ds, Role::Subject), Err(EmbedError::MissingSentence(id)) if id == "s0"));
        assert_eq!(alignment_failures(&empty, &ds).len(), 1);
    }

    fn glove_text(words: &[&str], dim: usize) -> String {
        words
            .iter()
            .enumerate()
            .map(|(i, w)| {
                let v: Vec<String> = (0..dim).map(|d| format!("{}", (i * dim + d) as f32 * 0.01)).collect();
                format!("{w} {}\n", v.join(" "))
            })
            .collect()
    }

    #[test]
    fn glove_rows_are_context_free() {
        let ds = dataset(vec![
            item("s0", &["the", "lawyer", "betrayed", "the", "judge"]),
            item("s1", &["the", "judge", "betrayed", "the", "lawyer"]),
        ]);
        let text = glove_text(&["the", "lawyer", "betrayed", "judge", "unused"], 300);
        let vocab = dataset_vocab(&ds);
        let gv = GloveVectors::read(text.as_bytes(), Some(&vocab)).unwrap();
        assert_eq!(gv.vectors.len(), 4);
        let es = glove_lookup(&gv, &ds).unwrap();
        assert_eq!(es.dim, 300);
        assert_eq!(es.encoder_id, "glove");
        let s0 = &es.sentences["s0"];
        let s1 = &es.sentences["s1"];
        assert_eq!(s0.row(0), s0.row(3));
        assert_eq!(s0.row(1), s1.row(4));
        assert_ne!(s0.row(1), s0.row(4));
    }

    #[test]
    fn glove_oov_is_an_error() {
        let ds = dataset(vec![item("s0", &["the", "lawyer", "betrayed", "the", "judge"])]);
        let text = "2 3\nthe 1 2 3\nlawyer 1 2 3\nbetrayed 1 2 3\n";
        let gv = GloveVectors::read(text.as_bytes(), None).unwrap();
        assert_eq!(gv.dim, 3);
        match glove_lookup(&gv, &ds) {
            Err(EmbedError::OutOfVocabulary(t)) => assert_eq!(t, "judge"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
