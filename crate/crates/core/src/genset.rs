//! Controlled probing datasets.
//!
//! Sentences follow `DET SUBJ-N VB DET OBJ-N`; the distance template splices a
//! relative-clause fragment after the subject and an `ADJ and ADJ`
//! conjunction before the object. Items are generated in frames: one frame
//! fixes every non-target word (and any inserted material), then emits one
//! sentence per class with only the target word varying. Labels are therefore
//! exactly balanced and every non-target feature has identical counts in every
//! class.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lexicon::{
    sample_entries, sample_pool, Feature, FeatureUse, LexicalEntry, Lexicon, LexiconError, PoolQuery, Pos,
    POOL_SIZE,
};
use crate::rng::Stream;

pub const DEFAULT_TRAIN: usize = 4000;
pub const DEFAULT_TEST: usize = 1000;
pub const DEFAULT_IDENTITY_K: usize = 30;
pub const RC_POOL_SIZE: usize = 20;
pub const ADJ_POOL_SIZE: usize = 40;
pub const DETERMINER: &str = "the";
pub const CONJUNCTION: &str = "and";

const MAX_FRAME_ATTEMPTS: u64 = 200;
const MAX_TARGET_ATTEMPTS: u64 = 32;

#[derive(Debug, Error)]
pub enum GenError {
    #[error("invalid task spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Lexicon(#[from] LexiconError),
    #[error("pools exhausted while generating {split} frame {frame} of {task}")]
    PoolExhausted {
        task: String,
        split: Split,
        frame: usize,
    },
    #[error("{0}")]
    Modifiers(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> GenError + '_ {
    move |source| GenError::Io {
        path: path.to_owned(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InfoType {
    Number,
    Gender,
    Animacy,
    Tense,
    Causative,
    Dynamic,
    Identity,
}

impl InfoType {
    pub const ALL: [InfoType; 7] = [
        InfoType::Number,
        InfoType::Gender,
        InfoType::Animacy,
        InfoType::Tense,
        InfoType::Causative,
        InfoType::Dynamic,
        InfoType::Identity,
    ];

    pub fn feature(self) -> Option<Feature> {
        match self {
            InfoType::Number => Some(Feature::Number),
            InfoType::Gender => Some(Feature::Gender),
            InfoType::Animacy => Some(Feature::Animacy),
            InfoType::Tense => Some(Feature::Tense),
            InfoType::Causative => Some(Feature::Causative),
            InfoType::Dynamic => Some(Feature::Dynamic),
            InfoType::Identity => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            InfoType::Number => "number",
            InfoType::Gender => "gender",
            InfoType::Animacy => "animacy",
            InfoType::Tense => "tense",
            InfoType::Causative => "causative",
            InfoType::Dynamic => "dynamic",
            InfoType::Identity => "identity",
        }
    }

    pub fn is_noun_feature(self) -> bool {
        matches!(self, InfoType::Number | InfoType::Gender | InfoType::Animacy)
    }
}

impl fmt::Display for InfoType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for InfoType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        InfoType::ALL
            .iter()
            .copied()
            .find(|i| i.as_str() == s)
            .ok_or_else(|| format!("unknown info type `{s}`"))
    }
}

/// Class name for a feature value.
pub fn feature_label(feature: Feature, value: &str) -> String {
    let s = match (feature, value) {
        (Feature::Number, "sg") => "SINGULAR",
        (Feature::Number, "pl") => "PLURAL",
        (Feature::Gender, "masc") => "MASCULINE",
        (Feature::Gender, "fem") => "FEMININE",
        (Feature::Animacy, "animate") => "ANIMATE",
        (Feature::Animacy, "inanimate") => "INANIMATE",
        (Feature::Tense, "past") => "PAST",
        (Feature::Tense, "present") => "PRESENT",
        (Feature::Causative, "yes") => "YES-CAUSATIVE",
        (Feature::Causative, "no") => "NO-CAUSATIVE",
        (Feature::Dynamic, "dynamic") => "DYNAMIC",
        (Feature::Dynamic, "stative") => "STATIVE",
        (f, v) => return format!("{}-{}", f, v).to_uppercase(),
    };
    s.to_owned()
}

/// Sentence positions. `Rc` and `Adj` mark the first token of the spans
/// inserted by the distance template.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Det1,
    Subject,
    Rc,
    Verb,
    Det2,
    Adj,
    Object,
}

impl Role {
    /// The five positions present in every template, in sentence order.
    pub const CORE: [Role; 5] = [Role::Det1, Role::Subject, Role::Verb, Role::Det2, Role::Object];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Det1 => "det1",
            Role::Subject => "subject",
            Role::Rc => "rc",
            Role::Verb => "verb",
            Role::Det2 => "det2",
            Role::Adj => "adj",
            Role::Object => "object",
        }
    }

    fn content_pos(self) -> Option<Pos> {
        match self {
            Role::Subject | Role::Object => Some(Pos::Noun),
            Role::Verb => Some(Pos::Verb),
            _ => None,
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        [Role::Det1, Role::Subject, Role::Rc, Role::Verb, Role::Det2, Role::Adj, Role::Object]
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| format!("unknown role `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Template {
    Base,
    Distance,
}

impl Template {
    pub fn as_str(self) -> &'static str {
        match self {
            Template::Base => "base",
            Template::Distance => "distance",
        }
    }
}

impl fmt::Display for Template {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One probing experiment definition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub info_type: InfoType,
    pub target_role: Role,
    pub template: Template,
    pub n_train: usize,
    pub n_test: usize,
    pub k: usize,
    pub seed: u64,
}

impl TaskSpec {
    /// Spec with default sizes: 4000/1000 for binary feature tasks and the
    /// largest multiples of `k` below those for identity tasks.
    pub fn new(info_type: InfoType, target_role: Role, template: Template, seed: u64) -> Self {
        let k = if info_type == InfoType::Identity {
            DEFAULT_IDENTITY_K
        } else {
            2
        };
        Self::with_k(info_type, target_role, template, k, seed)
    }

    pub fn with_k(info_type: InfoType, target_role: Role, template: Template, k: usize, seed: u64) -> Self {
        let k1 = k.max(1);
        TaskSpec {
            info_type,
            target_role,
            template,
            n_train: k1 * (DEFAULT_TRAIN / k1),
            n_test: k1 * (DEFAULT_TEST / k1),
            k,
            seed,
        }
    }

    /// `<info_type>_<target_role>_<template>`
    pub fn id(&self) -> String {
        format!("{}_{}_{}", self.info_type, self.target_role, self.template)
    }

    pub fn validate(&self) -> Result<(), GenError> {
        let bad = |m: String| Err(GenError::InvalidSpec(format!("{}: {m}", self.id())));
        let role_ok = match self.info_type {
            i if i.is_noun_feature() => matches!(self.target_role, Role::Subject | Role::Object),
            InfoType::Identity => matches!(self.target_role, Role::Subject | Role::Verb | Role::Object),
            _ => self.target_role == Role::Verb,
        };
        if !role_ok {
            return bad(format!("target role {} not allowed", self.target_role));
        }
        if self.k < 2 {
            return bad("k must be at least 2".into());
        }
        if self.info_type != InfoType::Identity && self.k != 2 {
            return bad("feature tasks are binary (k = 2)".into());
        }
        if self.n_train == 0 || self.n_test == 0 {
            return bad("n_train and n_test must be positive".into());
        }
        if self.n_train % self.k != 0 || self.n_test % self.k != 0 {
            return bad(format!(
                "n_train ({}) and n_test ({}) must be divisible by k ({})",
                self.n_train, self.n_test, self.k
            ));
        }
        Ok(())
    }

    pub fn size(&self, split: Split) -> usize {
        match split {
            Split::Train => self.n_train,
            Split::Test => self.n_test,
        }
    }

    /// Lexicon (pos, feature) pairs whose balance this task depends on.
    pub fn feature_use(&self) -> Option<FeatureUse> {
        let feature = self.info_type.feature()?;
        Some(FeatureUse {
            pos: self.target_role.content_pos()?,
            feature,
        })
    }

    fn slot_constraints(&self, role: Role) -> Vec<(Feature, &'static str)> {
        match role {
            Role::Verb if self.info_type == InfoType::Tense => {
                vec![(Feature::Transitivity, "transitive")]
            }
            Role::Verb => vec![(Feature::Transitivity, "transitive"), (Feature::Tense, "past")],
            Role::Subject if self.info_type == InfoType::Tense => vec![(Feature::Number, "sg")],
            _ => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceItem {
    pub id: String,
    pub tokens: Vec<String>,
    pub roles: IndexMap<Role, usize>,
    pub label: String,
}

impl SentenceItem {
    pub fn word(&self, role: Role) -> Option<&str> {
        self.roles.get(&role).map(|&i| self.tokens[i].as_str())
    }

    /// Tokens of the inserted relative clause, if any.
    pub fn rc_span(&self) -> Option<&[String]> {
        let start = *self.roles.get(&Role::Rc)?;
        let end = *self.roles.get(&Role::Verb)?;
        self.tokens.get(start..end)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub spec: TaskSpec,
    pub lexicon_checksum: String,
    pub train: Vec<SentenceItem>,
    pub test: Vec<SentenceItem>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> &[SentenceItem] {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }

    pub fn items(&self) -> impl Iterator<Item = &SentenceItem> {
        self.train.iter().chain(&self.test)
    }
}

/// Material spliced in by the distance template.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Modifiers {
    pub rc_pool: Vec<Vec<String>>,
    pub adj_pool: Vec<String>,
}

impl Modifiers {
    pub fn new(rc_pool: &[&str], adj_pool: &[&str]) -> Self {
        Modifiers {
            rc_pool: rc_pool
                .iter()
                .map(|s| s.split_whitespace().map(str::to_owned).collect())
                .collect(),
            adj_pool: adj_pool.iter().map(|s| s.to_string()).collect(),
        }
    }

    /// Samples the default-sized fragment and adjective pools from `lex`.
    pub fn sample(lex: &Lexicon, seed: u64) -> Result<Self, GenError> {
        let rc = sample_entries(lex, Pos::RcFragment, &[], RC_POOL_SIZE, seed, "modifiers/rc")?;
        let adj = sample_entries(lex, Pos::Adjective, &[], ADJ_POOL_SIZE, seed, "modifiers/adj")?;
        Ok(Modifiers {
            rc_pool: rc.iter().map(LexicalEntry::tokens).collect(),
            adj_pool: adj.into_iter().map(|e| e.surface).collect(),
        })
    }

    fn validate(&self) -> Result<(), GenError> {
        if self.rc_pool.is_empty() || self.rc_pool.iter().any(Vec::is_empty) {
            return Err(GenError::Modifiers("rc pool is empty or has an empty fragment".into()));
        }
        let distinct: HashSet<&String> = self.adj_pool.iter().collect();
        if distinct.len() < 2 || distinct.len() != self.adj_pool.len() {
            return Err(GenError::Modifiers(
                "adjective pool needs at least two distinct adjectives and no repeats".into(),
            ));
        }
        Ok(())
    }
}

/// Generates a base-template dataset for a binary feature task.
pub fn generate_feature_dataset(spec: &TaskSpec, lex: &Lexicon) -> Result<Dataset, GenError> {
    if spec.info_type == InfoType::Identity {
        return Err(GenError::InvalidSpec("identity tasks use generate_identity_dataset".into()));
    }
    if spec.template != Template::Base {
        return Err(GenError::InvalidSpec("distance tasks use generate_distance_dataset".into()));
    }
    build(spec, lex, None)
}

/// Generates a distance-template dataset (feature or identity task).
pub fn generate_distance_dataset(
    spec: &TaskSpec,
    lex: &Lexicon,
    rc_pool: &[Vec<String>],
    adj_pool: &[String],
) -> Result<Dataset, GenError> {
    if spec.template != Template::Distance {
        return Err(GenError::InvalidSpec(format!("{} is not a distance task", spec.id())));
    }
    let mods = Modifiers {
        rc_pool: rc_pool.to_vec(),
        adj_pool: adj_pool.to_vec(),
    };
    mods.validate()?;
    build(spec, lex, Some(&mods))
}

/// Generates a k-way word identity dataset on the base template.
pub fn generate_identity_dataset(spec: &TaskSpec, lex: &Lexicon) -> Result<Dataset, GenError> {
    if spec.info_type != InfoType::Identity {
        return Err(GenError::InvalidSpec(format!("{} is not an identity task", spec.id())));
    }
    if spec.template != Template::Base {
        return Err(GenError::InvalidSpec("distance tasks use generate_distance_dataset".into()));
    }
    build(spec, lex, None)
}

/// Dispatches on the spec; distance tasks draw their modifier pools from `lex`.
pub fn generate_dataset(spec: &TaskSpec, lex: &Lexicon) -> Result<Dataset, GenError> {
    match (spec.template, spec.info_type) {
        (Template::Distance, _) => {
            let mods = Modifiers::sample(lex, spec.seed)?;
            generate_distance_dataset(spec, lex, &mods.rc_pool, &mods.adj_pool)
        }
        (Template::Base, InfoType::Identity) => generate_identity_dataset(spec, lex),
        (Template::Base, _) => generate_feature_dataset(spec, lex),
    }
}

struct Class {
    label: String,
    words: Vec<LexicalEntry>,
}

fn build(spec: &TaskSpec, lex: &Lexicon, mods: Option<&Modifiers>) -> Result<Dataset, GenError> {
    spec.validate()?;
    let target = spec.target_role;
    let target_pos = target.content_pos().expect("validated target role");
    let target_constraints = spec.slot_constraints(target);

    let classes: Vec<Class> = match spec.info_type.feature() {
        Some(feature) => {
            let query = PoolQuery {
                pos: target_pos,
                feature,
                constraints: target_constraints,
            };
            sample_pool(lex, &query, POOL_SIZE, spec.seed)?
                .by_value
                .into_iter()
                .map(|(value, words)| Class {
                    label: feature_label(feature, value),
                    words,
                })
                .collect()
        }
        None => {
            let tag = format!("identity/{target}");
            sample_entries(lex, target_pos, &target_constraints, spec.k, spec.seed, &tag)?
                .into_iter()
                .map(|e| Class {
                    label: e.surface.clone(),
                    words: vec![e],
                })
                .collect()
        }
    };

    let mut context: Vec<(Role, Vec<LexicalEntry>)> = Vec::new();
    for role in [Role::Subject, Role::Verb, Role::Object] {
        if role == target {
            continue;
        }
        let pos = role.content_pos().unwrap();
        let tag = format!("context/{role}");
        let words = sample_entries(lex, pos, &spec.slot_constraints(role), POOL_SIZE, spec.seed, &tag)?;
        context.push((role, words));
    }

    let task = spec.id();
    let mut seen: HashSet<Vec<String>> = HashSet::new();
    let mut splits = Vec::new();
    for split in [Split::Train, Split::Test] {
        let frames = spec.size(split) / spec.k;
        let mut items = Vec::with_capacity(spec.size(split));
        for frame in 0..frames {
            let sentences = sample_frame(spec, split, frame, &classes, &context, mods, &mut seen)
                .ok_or_else(|| GenError::PoolExhausted {
                    task: task.clone(),
                    split,
                    frame,
                })?;
            for (label, tokens, roles) in sentences {
                items.push(SentenceItem {
                    id: format!("{task}-{split}-{:05}", items.len()),
                    tokens,
                    roles,
                    label,
                });
            }
        }
        splits.push(items);
    }
    let test = splits.pop().unwrap();
    let train = splits.pop().unwrap();
    Ok(Dataset {
        spec: spec.clone(),
        lexicon_checksum: lex.checksum.clone(),
        train,
        test,
    })
}

type Generated = (String, Vec<String>, IndexMap<Role, usize>);

fn sample_frame(
    spec: &TaskSpec,
    split: Split,
    frame: usize,
    classes: &[Class],
    context: &[(Role, Vec<LexicalEntry>)],
    mods: Option<&Modifiers>,
    seen: &mut HashSet<Vec<String>>,
) -> Option<Vec<Generated>> {
    for attempt in 0..MAX_FRAME_ATTEMPTS {
        let stream = Stream::root(spec.seed)
            .tag(split.as_str())
            .index(frame as u64)
            .index(attempt);

        let mut words: BTreeMap<Role, &str> = BTreeMap::new();
        for (role, pool) in context {
            let mut rng = stream.clone().tag(role.as_str()).rng();
            words.insert(*role, &pool[rng.random_range(0..pool.len())].surface);
        }
        let inserted = mods.map(|m| {
            let mut rng = stream.clone().tag("rc").rng();
            let rc = &m.rc_pool[rng.random_range(0..m.rc_pool.len())];
            let mut rng = stream.clone().tag("adj").rng();
            let pick = index::sample(&mut rng, m.adj_pool.len(), 2);
            (rc, [&m.adj_pool[pick.index(0)], &m.adj_pool[pick.index(1)]])
        });

        let mut out: Vec<Generated> = Vec::with_capacity(classes.len());
        let mut ok = true;
        for (c, class) in classes.iter().enumerate() {
            let mut accepted = None;
            for t in 0..MAX_TARGET_ATTEMPTS {
                let mut rng = stream.clone().tag("target").index(c as u64).index(t).rng();
                let word = &class.words[rng.random_range(0..class.words.len())].surface;
                let mut w = words.clone();
                w.insert(spec.target_role, word);
                if w[&Role::Subject] == w[&Role::Object] {
                    continue;
                }
                let (tokens, roles) = assemble(&w, inserted);
                if seen.contains(&tokens) || out.iter().any(|(_, t, _)| *t == tokens) {
                    continue;
                }
                accepted = Some((class.label.clone(), tokens, roles));
                break;
            }
            match accepted {
                Some(g) => out.push(g),
                None => {
                    ok = false;
                    break;
                }
            }
        }
        if ok {
            for (_, tokens, _) in &out {
                seen.insert(tokens.clone());
            }
            return Some(out);
        }
    }
    None
}

fn assemble(
    words: &BTreeMap<Role, &str>,
    inserted: Option<(&Vec<String>, [&String; 2])>,
) -> (Vec<String>, IndexMap<Role, usize>) {
    let mut tokens = Vec::new();
    let mut roles = IndexMap::new();
    let mut put = |role: Option<Role>, tok: &str, tokens: &mut Vec<String>| {
        if let Some(r) = role {
            roles.insert(r, tokens.len());
        }
        tokens.push(tok.to_owned());
    };
    put(Some(Role::Det1), DETERMINER, &mut tokens);
    put(Some(Role::Subject), words[&Role::Subject], &mut tokens);
    if let Some((rc, _)) = inserted {
        for (i, t) in rc.iter().enumerate() {
            put((i == 0).then_some(Role::Rc), t, &mut tokens);
        }
    }
    put(Some(Role::Verb), words[&Role::Verb], &mut tokens);
    put(Some(Role::Det2), DETERMINER, &mut tokens);
    if let Some((_, [a, b])) = inserted {
        put(Some(Role::Adj), a, &mut tokens);
        put(None, CONJUNCTION, &mut tokens);
        put(None, b, &mut tokens);
    }
    put(Some(Role::Object), words[&Role::Object], &mut tokens);
    (tokens, roles)
}

/// Structural problems in one split: label balance, template shape and role
/// layout. Messages name `origin` (usually the file).
pub fn validate_split(spec: &TaskSpec, split: Split, items: &[SentenceItem], origin: &str) -> Vec<String> {
    let mut failures = Vec::new();
    let expected_n = spec.size(split);
    if items.len() != expected_n {
        failures.push(format!("{origin}: {} items, expected {expected_n}", items.len()));
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for it in items {
        *counts.entry(it.label.as_str()).or_default() += 1;
    }
    let per_class = spec.size(split) / spec.k;
    if counts.len() != spec.k || counts.values().any(|&c| c != per_class) {
        let split_desc: Vec<String> = counts.iter().map(|(l, c)| format!("{l}={c}")).collect();
        failures.push(format!(
            "{origin}: label imbalance ({}), expected {} classes x {per_class}",
            split_desc.join("/"),
            spec.k
        ));
    }
    let mut ids = HashSet::new();
    for it in items {
        if !ids.insert(it.id.as_str()) {
            failures.push(format!("{origin}: duplicate id {}", it.id));
        }
        if let Some(msg) = check_layout(spec.template, it) {
            failures.push(format!("{origin}: item {}: {msg}", it.id));
        }
    }
    failures
}

fn check_layout(template: Template, it: &SentenceItem) -> Option<String> {
    let expected: &[Role] = match template {
        Template::Base => &Role::CORE,
        Template::Distance => &[
            Role::Det1,
            Role::Subject,
            Role::Rc,
            Role::Verb,
            Role::Det2,
            Role::Adj,
            Role::Object,
        ],
    };
    let roles: Vec<Role> = it.roles.keys().copied().collect();
    if roles != expected {
        return Some(format!("roles {roles:?} do not match the {template} template"));
    }
    let idx: Vec<usize> = it.roles.values().copied().collect();
    if idx.windows(2).any(|w| w[0] >= w[1]) || idx.iter().any(|&i| i >= it.tokens.len()) {
        return Some(format!("role indices {idx:?} not increasing or out of range"));
    }
    let expected_len = match template {
        Template::Base => 5,
        Template::Distance => 5 + it.rc_span().map_or(0, <[String]>::len) + 3,
    };
    if it.tokens.len() != expected_len {
        return Some(format!("{} tokens, expected {expected_len}", it.tokens.len()));
    }
    if template == Template::Distance && it.roles[&Role::Object] != it.roles[&Role::Adj] + 3 {
        return Some("adjective conjunction is not immediately before the object".into());
    }
    None
}

/// Dataset-level invariants: per-split structure plus train/test disjointness.
pub fn validate_dataset(ds: &Dataset) -> Vec<String> {
    let id = ds.spec.id();
    let mut failures = validate_split(&ds.spec, Split::Train, &ds.train, &format!("{id}.train"));
    failures.extend(validate_split(&ds.spec, Split::Test, &ds.test, &format!("{id}.test")));
    let train: HashSet<&Vec<String>> = ds.train.iter().map(|it| &it.tokens).collect();
    for it in &ds.test {
        if train.contains(&it.tokens) {
            failures.push(format!("{id}: test item {} also occurs in train", it.id));
        }
    }
    failures
}

/// Per-class counts of every non-target feature value and of inserted
/// material, keyed by `(split, slot, feature=value)`.
pub type StratTable = BTreeMap<(Split, String, String), BTreeMap<String, usize>>;

pub fn nontarget_feature_counts(ds: &Dataset, lex: &Lexicon) -> Result<StratTable, String> {
    let mut table: StratTable = BTreeMap::new();
    for split in [Split::Train, Split::Test] {
        for it in ds.split(split) {
            let mut keys: Vec<(String, String)> = Vec::new();
            for role in [Role::Subject, Role::Verb, Role::Object] {
                if role == ds.spec.target_role {
                    continue;
                }
                let word = it.word(role).ok_or_else(|| format!("item {} lacks {role}", it.id))?;
                let pos = role.content_pos().unwrap();
                let entry = lex
                    .find(word, pos)
                    .ok_or_else(|| format!("item {}: `{word}` not in lexicon", it.id))?;
                let feats: &[Feature] = match pos {
                    Pos::Noun => &[Feature::Number, Feature::Gender, Feature::Animacy],
                    _ => &[Feature::Tense, Feature::Causative, Feature::Dynamic],
                };
                for &f in feats {
                    let v = entry.value(f).unwrap_or("-");
                    keys.push((role.to_string(), format!("{f}={v}")));
                }
            }
            if let Some(rc) = it.rc_span() {
                keys.push(("rc".into(), rc.join(" ")));
                let a = it.roles[&Role::Adj];
                keys.push(("adj".into(), format!("{} and {}", it.tokens[a], it.tokens[a + 2])));
            }
            for key in keys {
                *table
                    .entry((split, key.0, key.1))
                    .or_default()
                    .entry(it.label.clone())
                    .or_default() += 1;
            }
        }
    }
    Ok(table)
}

/// Slots whose feature counts differ between classes.
pub fn stratification_failures(ds: &Dataset, lex: &Lexicon) -> Vec<String> {
    let table = match nontarget_feature_counts(ds, lex) {
        Ok(t) => t,
        Err(e) => return vec![e],
    };
    let id = ds.spec.id();
    table
        .into_iter()
        .filter_map(|((split, slot, fv), per_class)| {
            let first = per_class.values().next().copied();
            let uniform = per_class.len() == ds.spec.k && per_class.values().all(|&c| Some(c) == first);
            (!uniform).then(|| format!("{id}.{split}: {slot} {fv} not stratified: {per_class:?}"))
        })
        .collect()
}

/// First line of every dataset file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitHeader {
    pub spec: TaskSpec,
    pub lexicon_checksum: String,
    pub split: Split,
}

pub fn split_file_name(spec: &TaskSpec, split: Split) -> String {
    format!("{}.{}.jsonl", spec.id(), split)
}

pub fn write_split(path: &Path, header: &SplitHeader, items: &[SentenceItem]) -> Result<(), GenError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    let line = |w: &mut BufWriter<File>, v: String| -> std::io::Result<()> {
        w.write_all(v.as_bytes())?;
        w.write_all(b"\n")
    };
    line(&mut w, serde_json::to_string(header).expect("serializable header")).map_err(io_err(path))?;
    for it in items {
        line(&mut w, serde_json::to_string(it).expect("serializable item")).map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_split(path: &Path) -> Result<(SplitHeader, Vec<SentenceItem>), GenError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut lines = BufReader::new(file).lines();
    let parse_err = |line: usize, msg: String| GenError::Parse {
        path: path.to_owned(),
        line,
        msg,
    };
    let first = lines
        .next()
        .ok_or_else(|| parse_err(1, "missing header line".into()))?
        .map_err(io_err(path))?;
    let header: SplitHeader = serde_json::from_str(&first).map_err(|e| parse_err(1, e.to_string()))?;
    let mut items = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.is_empty() {
            continue;
        }
        items.push(serde_json::from_str(&line).map_err(|e| parse_err(i + 2, e.to_string()))?);
    }
    Ok((header, items))
}

/// Writes `<id>.train.jsonl` and `<id>.test.jsonl` into `dir`.
pub fn write_dataset(dir: &Path, ds: &Dataset) -> Result<[PathBuf; 2], GenError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut out = Vec::new();
    for split in [Split::Train, Split::Test] {
        let path = dir.join(split_file_name(&ds.spec, split));
        let header = SplitHeader {
            spec: ds.spec.clone(),
            lexicon_checksum: ds.lexicon_checksum.clone(),
            split,
        };
        write_split(&path, &header, ds.split(split))?;
        out.push(path);
    }
    Ok(out.try_into().unwrap())
}

pub fn read_dataset(dir: &Path, spec: &TaskSpec) -> Result<Dataset, GenError> {
    let (train_h, train) = read_split(&dir.join(split_file_name(spec, Split::Train)))?;
    let test_path = dir.join(split_file_name(spec, Split::Test));
    let (test_h, test) = read_split(&test_path)?;
    if train_h.spec != test_h.spec || train_h.lexicon_checksum != test_h.lexicon_checksum {
        return Err(GenError::Parse {
            path: test_path,
            line: 1,
            msg: "train and test headers disagree".into(),
        });
    }
    Ok(Dataset {
        spec: train_h.spec,
        lexicon_checksum: train_h.lexicon_checksum,
        train,
        test,
    })
}
