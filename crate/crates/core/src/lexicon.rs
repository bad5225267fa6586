//! Feature-annotated vocabulary.
//!
//! The lexicon file is UTF-8 TSV with one entry per line:
//!
//! ```text
//! # comment
//! lawyer	noun	number=sg;gender=none;animacy=animate;encoders=bert,elmo,glove,gpt
//! ```
//!
//! The `encoders` key lists the encoders under which the surface form is a
//! single vocabulary token. Every other key is a linguistic feature.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::index;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::rng::Stream;

/// Number of target words drawn per feature value, and of context words per slot.
pub const POOL_SIZE: usize = 100;

#[derive(Debug, Error)]
pub enum LexiconError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("line {line}: duplicate entry ({surface}, {pos})")]
    Duplicate {
        line: usize,
        surface: String,
        pos: Pos,
    },
    #[error("line {line}: unknown value `{value}` for feature `{feature}`")]
    UnknownValue {
        line: usize,
        feature: String,
        value: String,
    },
    #[error("line {line}: {pos} entry `{surface}` is missing required feature `{feature}`")]
    MissingFeature {
        line: usize,
        surface: String,
        pos: Pos,
        feature: Feature,
    },
    #[error("required encoder set is empty")]
    EmptyRequirement,
    #[error("fewer than {POOL_SIZE} entries for: {}", format_deficits(.0))]
    Deficient(Vec<Deficit>),
    #[error("insufficient entries for {pos} {what}: have {have}, need {need}")]
    Insufficient {
        pos: Pos,
        what: String,
        have: usize,
        need: usize,
    },
    #[error("vocab report line {line}: {msg}")]
    VocabReport { line: usize, msg: String },
}

/// A (feature, value) pair whose entry count fell below the pool size.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Deficit {
    pub pos: Pos,
    pub feature: Feature,
    pub value: &'static str,
    pub count: usize,
}

fn format_deficits(d: &[Deficit]) -> String {
    d.iter()
        .map(|d| format!("({}, {}) [{} {}]", d.feature, d.value, d.count, d.pos))
        .collect::<Vec<_>>()
        .join(", ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Pos {
    Noun,
    Verb,
    Adjective,
    Determiner,
    RcFragment,
}

impl Pos {
    pub fn as_str(self) -> &'static str {
        match self {
            Pos::Noun => "noun",
            Pos::Verb => "verb",
            Pos::Adjective => "adjective",
            Pos::Determiner => "determiner",
            Pos::RcFragment => "rc-fragment",
        }
    }
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Pos {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "noun" => Pos::Noun,
            "verb" => Pos::Verb,
            "adjective" => Pos::Adjective,
            "determiner" => Pos::Determiner,
            "rc-fragment" => Pos::RcFragment,
            _ => return Err(format!("unknown part of speech `{s}`")),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Feature {
    Number,
    Gender,
    Animacy,
    Tense,
    Causative,
    Dynamic,
    Transitivity,
    /// Marks capitalized proper forms, which are exempt from the lowercase rule.
    Proper,
}

impl Feature {
    pub const ALL: [Feature; 8] = [
        Feature::Number,
        Feature::Gender,
        Feature::Animacy,
        Feature::Tense,
        Feature::Causative,
        Feature::Dynamic,
        Feature::Transitivity,
        Feature::Proper,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Feature::Number => "number",
            Feature::Gender => "gender",
            Feature::Animacy => "animacy",
            Feature::Tense => "tense",
            Feature::Causative => "causative",
            Feature::Dynamic => "dynamic",
            Feature::Transitivity => "transitivity",
            Feature::Proper => "proper",
        }
    }

    /// Every value the lexicon accepts for this feature.
    pub fn values(self) -> &'static [&'static str] {
        match self {
            Feature::Number => &["sg", "pl"],
            Feature::Gender => &["masc", "fem", "none"],
            Feature::Animacy => &["animate", "inanimate"],
            Feature::Tense => &["past", "present"],
            Feature::Causative => &["yes", "no"],
            Feature::Dynamic => &["dynamic", "stative"],
            Feature::Transitivity => &["transitive", "intransitive", "ditransitive"],
            Feature::Proper => &["yes", "no"],
        }
    }

    /// The two values that define the classes of a probing task on this
    /// feature. Gender `none` is never a class.
    pub fn task_values(self) -> &'static [&'static str] {
        match self {
            Feature::Gender => &["masc", "fem"],
            Feature::Transitivity => &["transitive", "intransitive"],
            f => f.values(),
        }
    }

    /// Value assumed when an entry does not carry the feature.
    pub fn default_value(self) -> Option<&'static str> {
        match self {
            Feature::Gender => Some("none"),
            Feature::Proper => Some("no"),
            _ => None,
        }
    }

    fn canonical_value(self, v: &str) -> Option<&'static str> {
        self.values().iter().copied().find(|x| *x == v)
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Feature {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Feature::ALL
            .iter()
            .copied()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| format!("unknown feature `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LexicalEntry {
    pub surface: String,
    pub pos: Pos,
    pub features: BTreeMap<Feature, &'static str>,
    pub encoders: BTreeSet<String>,
}

impl LexicalEntry {
    /// Feature value, falling back to the feature's default.
    pub fn value(&self, feature: Feature) -> Option<&'static str> {
        self.features
            .get(&feature)
            .copied()
            .or_else(|| feature.default_value())
    }

    pub fn matches(&self, constraints: &[(Feature, &str)]) -> bool {
        constraints.iter().all(|(f, v)| self.value(*f) == Some(*v))
    }

    /// Whitespace tokens of the surface form (more than one only for rc fragments).
    pub fn tokens(&self) -> Vec<String> {
        self.surface.split_whitespace().map(str::to_owned).collect()
    }

    fn required_features(pos: Pos) -> &'static [Feature] {
        match pos {
            Pos::Noun => &[Feature::Number, Feature::Animacy],
            Pos::Verb => &[
                Feature::Tense,
                Feature::Causative,
                Feature::Dynamic,
                Feature::Transitivity,
            ],
            _ => &[],
        }
    }

    fn to_line(&self) -> String {
        let mut kv: Vec<String> = self
            .features
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect();
        if !self.encoders.is_empty() {
            let enc: Vec<&str> = self.encoders.iter().map(String::as_str).collect();
            kv.push(format!("encoders={}", enc.join(",")));
        }
        format!("{}\t{}\t{}\n", self.surface, self.pos, kv.join(";"))
    }
}

/// An immutable, validated vocabulary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lexicon {
    pub entries: Vec<LexicalEntry>,
    pub source: PathBuf,
    /// SHA-256 of the canonical serialization.
    pub checksum: String,
}

pub fn load_lexicon(path: impl AsRef<Path>) -> Result<Lexicon, LexiconError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| LexiconError::Io {
        path: path.to_owned(),
        source,
    })?;
    parse_lexicon(&text, path)
}

pub fn parse_lexicon(text: &str, source: impl Into<PathBuf>) -> Result<Lexicon, LexiconError> {
    let mut entries = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, raw) in text.split('\n').enumerate() {
        let line = i + 1;
        let raw = raw.strip_suffix('\r').unwrap_or(raw);
        if raw.trim().is_empty() || raw.starts_with('#') {
            continue;
        }
        let entry = parse_line(raw, line)?;
        if !seen.insert((entry.surface.clone(), entry.pos)) {
            return Err(LexiconError::Duplicate {
                line,
                surface: entry.surface,
                pos: entry.pos,
            });
        }
        entries.push(entry);
    }
    Ok(Lexicon::from_entries(entries, source))
}

fn parse_line(raw: &str, line: usize) -> Result<LexicalEntry, LexiconError> {
    let malformed = |msg: String| LexiconError::Malformed { line, msg };
    let cols: Vec<&str> = raw.split('\t').collect();
    if cols.len() < 2 || cols.len() > 3 {
        return Err(malformed(format!(
            "expected 2 or 3 tab-separated columns, found {}",
            cols.len()
        )));
    }
    let surface = cols[0];
    let pos: Pos = cols[1].parse().map_err(malformed)?;

    let mut features = BTreeMap::new();
    let mut encoders = BTreeSet::new();
    for kv in cols.get(2).copied().unwrap_or("").split(';') {
        if kv.is_empty() {
            continue;
        }
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| malformed(format!("expected key=value, found `{kv}`")))?;
        if k == "encoders" {
            for e in v.split(',') {
                if e.is_empty() || !e.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
                    return Err(malformed(format!("bad encoder id `{e}`")));
                }
                encoders.insert(e.to_owned());
            }
            continue;
        }
        let feature: Feature = k.parse().map_err(malformed)?;
        let value = feature
            .canonical_value(v)
            .ok_or_else(|| LexiconError::UnknownValue {
                line,
                feature: k.to_owned(),
                value: v.to_owned(),
            })?;
        if features.insert(feature, value).is_some() {
            return Err(malformed(format!("feature `{k}` given twice")));
        }
    }

    if surface.is_empty() {
        return Err(malformed("empty surface".into()));
    }
    if pos != Pos::RcFragment && surface.chars().any(char::is_whitespace) {
        return Err(malformed(format!("surface `{surface}` contains whitespace")));
    }
    if pos == Pos::RcFragment && surface.split(' ').any(str::is_empty) {
        return Err(malformed(format!("rc fragment `{surface}` has empty tokens")));
    }
    let proper = features.get(&Feature::Proper) == Some(&"yes");
    if !proper && surface.chars().any(char::is_uppercase) {
        return Err(malformed(format!(
            "surface `{surface}` is not lowercase and not marked proper"
        )));
    }
    for &f in LexicalEntry::required_features(pos) {
        if !features.contains_key(&f) {
            return Err(LexiconError::MissingFeature {
                line,
                surface: surface.to_owned(),
                pos,
                feature: f,
            });
        }
    }

    Ok(LexicalEntry {
        surface: surface.to_owned(),
        pos,
        features,
        encoders,
    })
}

/// A (part of speech, feature) combination a task draws balanced pools from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureUse {
    pub pos: Pos,
    pub feature: Feature,
}

/// Constrained pool request: entries of `pos` satisfying `constraints`,
/// partitioned by the task values of `feature`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolQuery {
    pub pos: Pos,
    pub feature: Feature,
    pub constraints: Vec<(Feature, &'static str)>,
}

/// Sampled entries per feature value, disjoint across values.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordPool {
    pub feature: Feature,
    pub by_value: Vec<(&'static str, Vec<LexicalEntry>)>,
}

impl WordPool {
    pub fn get(&self, value: &str) -> Option<&[LexicalEntry]> {
        self.by_value
            .iter()
            .find(|(v, _)| *v == value)
            .map(|(_, e)| e.as_slice())
    }
}

impl Lexicon {
    pub fn from_entries(entries: Vec<LexicalEntry>, source: impl Into<PathBuf>) -> Self {
        let mut lex = Lexicon {
            entries,
            source: source.into(),
            checksum: String::new(),
        };
        lex.checksum = hex::encode(Sha256::digest(lex.to_tsv().as_bytes()));
        lex
    }

    /// Canonical TSV serialization; `parse_lexicon` of this text yields `self`.
    pub fn to_tsv(&self) -> String {
        self.entries.iter().map(LexicalEntry::to_line).collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), LexiconError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_tsv()).map_err(|source| LexiconError::Io {
            path: path.to_owned(),
            source,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries_of(&self, pos: Pos) -> impl Iterator<Item = &LexicalEntry> {
        self.entries.iter().filter(move |e| e.pos == pos)
    }

    pub fn find(&self, surface: &str, pos: Pos) -> Option<&LexicalEntry> {
        self.entries
            .iter()
            .find(|e| e.pos == pos && e.surface == surface)
    }

    /// Keeps entries whose encoder set covers `required`, without balance checks.
    pub fn retain_encoders(&self, required: &BTreeSet<String>) -> Lexicon {
        let entries = self
            .entries
            .iter()
            .filter(|e| required.is_subset(&e.encoders))
            .cloned()
            .collect();
        Lexicon::from_entries(entries, self.source.clone())
    }

    /// Restricts the lexicon to the vocabulary intersection of `required`
    /// encoders and checks that every declared task feature still has at
    /// least [`POOL_SIZE`] entries per value.
    pub fn filter_by_encoders(
        &self,
        required: &BTreeSet<String>,
        declared: &[FeatureUse],
    ) -> Result<Lexicon, LexiconError> {
        if required.is_empty() {
            return Err(LexiconError::EmptyRequirement);
        }
        let filtered = self.retain_encoders(required);
        let deficits = filtered.balance_deficits(declared);
        if deficits.is_empty() {
            Ok(filtered)
        } else {
            Err(LexiconError::Deficient(deficits))
        }
    }

    pub fn balance_deficits(&self, declared: &[FeatureUse]) -> Vec<Deficit> {
        let mut out = Vec::new();
        for u in declared {
            for &value in u.feature.task_values() {
                let count = self
                    .entries_of(u.pos)
                    .filter(|e| e.value(u.feature) == Some(value))
                    .count();
                if count < POOL_SIZE && !out.iter().any(|d: &Deficit| d.feature == u.feature && d.value == value && d.pos == u.pos) {
                    out.push(Deficit {
                        pos: u.pos,
                        feature: u.feature,
                        value,
                        count,
                    });
                }
            }
        }
        out
    }

    /// Replaces encoder memberships for `models` with the contents of a
    /// vocab report. Rc fragments take the intersection over their tokens.
    pub fn apply_vocab_report(&self, report: &VocabReport, models: &BTreeSet<String>) -> Lexicon {
        let lookup = |e: &LexicalEntry| -> Option<BTreeSet<String>> {
            let tokens = e.tokens();
            let mut acc: Option<BTreeSet<String>> = None;
            for t in &tokens {
                let set = report.words.get(t)?;
                acc = Some(match acc {
                    None => set.clone(),
                    Some(a) => a.intersection(set).cloned().collect(),
                });
            }
            acc
        };
        let entries = self
            .entries
            .iter()
            .map(|e| {
                let mut e = e.clone();
                if let Some(set) = lookup(&e) {
                    for m in models {
                        if set.contains(m) {
                            e.encoders.insert(m.clone());
                        } else {
                            e.encoders.remove(m);
                        }
                    }
                }
                e
            })
            .collect();
        Lexicon::from_entries(entries, self.source.clone())
    }
}

/// Draws exactly [`POOL_SIZE`] entries per task value of `feature`.
pub fn sample_word_pool(
    lex: &Lexicon,
    pos: Pos,
    feature: Feature,
    seed: u64,
) -> Result<WordPool, LexiconError> {
    let query = PoolQuery {
        pos,
        feature,
        constraints: Vec::new(),
    };
    sample_pool(lex, &query, POOL_SIZE, seed)
}

pub fn sample_pool(
    lex: &Lexicon,
    query: &PoolQuery,
    per_value: usize,
    seed: u64,
) -> Result<WordPool, LexiconError> {
    let mut by_value = Vec::new();
    for &value in query.feature.task_values() {
        let mut constraints = query.constraints.clone();
        constraints.push((query.feature, value));
        let what = format!("{}={}{}", query.feature, value, constraint_suffix(&query.constraints));
        let tag = format!("pool/{}/{}", query.pos, what);
        let picked = sample_entries(lex, query.pos, &constraints, per_value, seed, &tag)
            .map_err(|e| match e {
                LexiconError::Insufficient { pos, have, need, .. } => LexiconError::Insufficient {
                    pos,
                    what: what.clone(),
                    have,
                    need,
                },
                e => e,
            })?;
        by_value.push((value, picked));
    }
    Ok(WordPool {
        feature: query.feature,
        by_value,
    })
}

fn constraint_suffix(c: &[(Feature, &str)]) -> String {
    c.iter().map(|(f, v)| format!(",{f}={v}")).collect()
}

/// Draws `n` distinct entries of `pos` matching `constraints`, keeping
/// lexicon order. The draw depends on the lexicon checksum, `seed` and `tag`.
pub fn sample_entries(
    lex: &Lexicon,
    pos: Pos,
    constraints: &[(Feature, &str)],
    n: usize,
    seed: u64,
    tag: &str,
) -> Result<Vec<LexicalEntry>, LexiconError> {
    let eligible: Vec<&LexicalEntry> = lex
        .entries_of(pos)
        .filter(|e| e.matches(constraints))
        .collect();
    if eligible.len() < n {
        return Err(LexiconError::Insufficient {
            pos,
            what: constraint_suffix(constraints).trim_start_matches(',').to_owned(),
            have: eligible.len(),
            need: n,
        });
    }
    let mut rng = Stream::root(seed).tag(&lex.checksum).tag(tag).rng();
    let mut idx = index::sample(&mut rng, eligible.len(), n).into_vec();
    idx.sort_unstable();
    Ok(idx.into_iter().map(|i| eligible[i].clone()).collect())
}

/// Exporter vocabulary report: `word<TAB>model,model,...` per line.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct VocabReport {
    pub words: BTreeMap<String, BTreeSet<String>>,
}

impl VocabReport {
    pub fn parse(text: &str) -> Result<Self, LexiconError> {
        let mut words = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            if raw.is_empty() || raw.starts_with('#') {
                continue;
            }
            let (word, models) = raw.split_once('\t').ok_or_else(|| LexiconError::VocabReport {
                line: i + 1,
                msg: "expected word<TAB>models".into(),
            })?;
            let set = models
                .split(',')
                .filter(|m| !m.is_empty())
                .map(str::to_owned)
                .collect();
            words.insert(word.to_owned(), set);
        }
        Ok(VocabReport { words })
    }
}
