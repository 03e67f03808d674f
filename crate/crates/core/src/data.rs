//! Triple files, vocabularies and the indices built over them.
//!
//! Files use the FB15k-237 / WN18RR distribution format: one
//! `head<TAB>relation<TAB>tail` triple per line. Vocabulary ids are dense and
//! assigned in first-appearance order over train, valid, then test.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use indexmap::IndexSet;
use sha2::{Digest, Sha256};
use thiserror::Error;

pub type EntityId = u32;
pub type RelationId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

impl Triple {
    pub fn new(head: EntityId, relation: RelationId, tail: EntityId) -> Self {
        Self { head, relation, tail }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn file_name(self) -> &'static str {
        match self {
            Split::Train => "train.txt",
            Split::Valid => "valid.txt",
            Split::Test => "test.txt",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{source_name}:{line}: expected 3 tab-separated fields, found {found}")]
    Parse {
        source_name: String,
        line: usize,
        found: usize,
    },
    #[error("{source_name}:{line}: unknown {kind} '{name}'")]
    UnknownName {
        source_name: String,
        line: usize,
        kind: &'static str,
        name: String,
    },
    #[error("vocabulary exceeds u32 id space")]
    TooLarge,
}

/// Bijective name ↔ id maps for entities and relations.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Vocabulary {
    entities: IndexSet<String>,
    relations: IndexSet<String>,
}

impl Vocabulary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn entity_id(&self, name: &str) -> Option<EntityId> {
        self.entities.get_index_of(name).map(|i| i as EntityId)
    }

    pub fn relation_id(&self, name: &str) -> Option<RelationId> {
        self.relations.get_index_of(name).map(|i| i as RelationId)
    }

    pub fn entity_name(&self, id: EntityId) -> Option<&str> {
        self.entities.get_index(id as usize).map(String::as_str)
    }

    pub fn relation_name(&self, id: RelationId) -> Option<&str> {
        self.relations.get_index(id as usize).map(String::as_str)
    }

    pub fn entities(&self) -> impl Iterator<Item = &str> {
        self.entities.iter().map(String::as_str)
    }

    pub fn relations(&self) -> impl Iterator<Item = &str> {
        self.relations.iter().map(String::as_str)
    }

    pub fn intern_entity(&mut self, name: &str) -> Result<EntityId, DataError> {
        intern(&mut self.entities, name)
    }

    pub fn intern_relation(&mut self, name: &str) -> Result<RelationId, DataError> {
        intern(&mut self.relations, name)
    }

    /// Stable 64-bit digest of the entity names in id order.
    pub fn entity_hash(&self) -> u64 {
        names_hash(self.entities.iter())
    }

    pub fn relation_hash(&self) -> u64 {
        names_hash(self.relations.iter())
    }

    /// Writes `id<TAB>name` lines to `entities.dict` and `relations.dict` in `dir`.
    pub fn dump(&self, dir: &Path) -> Result<(), DataError> {
        std::fs::create_dir_all(dir).map_err(|source| DataError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        write_dict(&dir.join("entities.dict"), self.entities.iter())?;
        write_dict(&dir.join("relations.dict"), self.relations.iter())
    }
}

fn intern(set: &mut IndexSet<String>, name: &str) -> Result<u32, DataError> {
    if let Some(i) = set.get_index_of(name) {
        return Ok(i as u32);
    }
    if set.len() >= u32::MAX as usize {
        return Err(DataError::TooLarge);
    }
    let (i, _) = set.insert_full(name.to_string());
    Ok(i as u32)
}

fn names_hash<'a>(names: impl Iterator<Item = &'a String>) -> u64 {
    let mut hasher = Sha256::new();
    for n in names {
        hasher.update(n.as_bytes());
        hasher.update([0u8]);
    }
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

fn write_dict<'a>(path: &Path, names: impl Iterator<Item = &'a String>) -> Result<(), DataError> {
    let io = |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut f = std::io::BufWriter::new(File::create(path).map_err(io)?);
    for (i, n) in names.enumerate() {
        writeln!(f, "{i}\t{n}").map_err(io)?;
    }
    f.flush().map_err(io)
}

/// Raw name triples of one file, before id assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTriples {
    pub source_name: String,
    /// `(line number, [head, relation, tail])`, 1-based line numbers.
    pub rows: Vec<(usize, [String; 3])>,
}

impl RawTriples {
    pub fn read(path: &Path) -> Result<Self, DataError> {
        let file = File::open(path).map_err(|source| DataError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(BufReader::new(file), &path.display().to_string())
    }

    pub fn parse<R: BufRead>(reader: R, source_name: &str) -> Result<Self, DataError> {
        let mut rows = Vec::new();
        for (idx, line) in reader.lines().enumerate() {
            let line = line.map_err(|source| DataError::Io {
                path: PathBuf::from(source_name),
                source,
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
            if fields.len() != 3 || fields.iter().any(|f| f.is_empty()) {
                return Err(DataError::Parse {
                    source_name: source_name.to_string(),
                    line: idx + 1,
                    found: fields.len(),
                });
            }
            rows.push((
                idx + 1,
                [fields[0].to_string(), fields[1].to_string(), fields[2].to_string()],
            ));
        }
        Ok(Self {
            source_name: source_name.to_string(),
            rows,
        })
    }
}

/// Dense vocabulary over the given raw files, in first-appearance order.
pub fn build_vocab(sources: &[&RawTriples]) -> Result<Vocabulary, DataError> {
    let mut vocab = Vocabulary::new();
    for src in sources {
        for (_, [h, r, t]) in &src.rows {
            vocab.intern_entity(h)?;
            vocab.intern_relation(r)?;
            vocab.intern_entity(t)?;
        }
    }
    Ok(vocab)
}

/// How [`load_triples`] treats names missing from the vocabulary.
pub enum VocabMode<'a> {
    /// Unseen names are appended.
    Build(&'a mut Vocabulary),
    /// Unseen names are an error.
    Fixed(&'a Vocabulary),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripleStore {
    pub split: Split,
    pub triples: Vec<Triple>,
}

impl TripleStore {
    pub fn new(split: Split, triples: Vec<Triple>) -> Self {
        Self { split, triples }
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Triple> {
        self.triples.iter()
    }
}

/// Maps raw rows to ids. Duplicate triples are kept and reported once with a warning.
pub fn resolve(raw: &RawTriples, split: Split, mode: VocabMode<'_>) -> Result<TripleStore, DataError> {
    let mut triples = Vec::with_capacity(raw.rows.len());
    let unknown = |line: usize, kind: &'static str, name: &str| DataError::UnknownName {
        source_name: raw.source_name.clone(),
        line,
        kind,
        name: name.to_string(),
    };
    match mode {
        VocabMode::Build(vocab) => {
            for (_, [h, r, t]) in &raw.rows {
                let head = vocab.intern_entity(h)?;
                let relation = vocab.intern_relation(r)?;
                let tail = vocab.intern_entity(t)?;
                triples.push(Triple::new(head, relation, tail));
            }
        }
        VocabMode::Fixed(vocab) => {
            for (line, [h, r, t]) in &raw.rows {
                let head = vocab.entity_id(h).ok_or_else(|| unknown(*line, "entity", h))?;
                let relation = vocab.relation_id(r).ok_or_else(|| unknown(*line, "relation", r))?;
                let tail = vocab.entity_id(t).ok_or_else(|| unknown(*line, "entity", t))?;
                triples.push(Triple::new(head, relation, tail));
            }
        }
    }
    let distinct: HashSet<&Triple> = triples.iter().collect();
    if distinct.len() != triples.len() {
        log::warn!(
            "{}: {} duplicate triple line(s) kept",
            raw.source_name,
            triples.len() - distinct.len()
        );
    }
    Ok(TripleStore::new(split, triples))
}

pub fn load_triples(path: &Path, split: Split, mode: VocabMode<'_>) -> Result<TripleStore, DataError> {
    resolve(&RawTriples::read(path)?, split, mode)
}

/// Train/valid/test splits of one benchmark with a shared vocabulary.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub vocab: Vocabulary,
    pub train: TripleStore,
    pub valid: TripleStore,
    pub test: TripleStore,
}

impl Dataset {
    /// Loads `train.txt`, `valid.txt` and `test.txt` from `dir`.
    pub fn load(dir: &Path) -> Result<Self, DataError> {
        let raws = Split::ALL
            .iter()
            .map(|s| RawTriples::read(&dir.join(s.file_name())))
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_raw(&raws[0], &raws[1], &raws[2])
    }

    pub fn from_raw(train: &RawTriples, valid: &RawTriples, test: &RawTriples) -> Result<Self, DataError> {
        let vocab = build_vocab(&[train, valid, test])?;
        Ok(Self {
            train: resolve(train, Split::Train, VocabMode::Fixed(&vocab))?,
            valid: resolve(valid, Split::Valid, VocabMode::Fixed(&vocab))?,
            test: resolve(test, Split::Test, VocabMode::Fixed(&vocab))?,
            vocab,
        })
    }

    /// Builds a dataset with synthetic names `e<id>` / `r<id>` from id triples.
    pub fn from_ids(
        num_entities: usize,
        num_relations: usize,
        train: Vec<Triple>,
        valid: Vec<Triple>,
        test: Vec<Triple>,
    ) -> Self {
        let mut vocab = Vocabulary::new();
        for e in 0..num_entities {
            vocab.intern_entity(&format!("e{e}")).expect("small vocabulary");
        }
        for r in 0..num_relations {
            vocab.intern_relation(&format!("r{r}")).expect("small vocabulary");
        }
        Self {
            vocab,
            train: TripleStore::new(Split::Train, train),
            valid: TripleStore::new(Split::Valid, valid),
            test: TripleStore::new(Split::Test, test),
        }
    }

    pub fn split(&self, split: Split) -> &TripleStore {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    pub fn filter_index(&self) -> FilterIndex {
        FilterIndex::build(&[&self.train, &self.valid, &self.test])
    }

    pub fn context_index(&self) -> ContextIndex {
        ContextIndex::build(self.vocab.num_entities(), &self.train)
    }

    pub fn pair_counts(&self) -> PairCounts {
        PairCounts::build(&self.train)
    }

    pub fn stats(&self) -> DatasetStats {
        let counts = self.pair_counts();
        let mut valid_categories = [0usize; 4];
        for t in self.valid.iter() {
            valid_categories[classify_triple(t, &counts).index()] += 1;
        }
        let n = self.vocab.num_entities().max(1);
        DatasetStats {
            entities: self.vocab.num_entities(),
            relations: self.vocab.num_relations(),
            train: self.train.len(),
            valid: self.valid.len(),
            test: self.test.len(),
            valid_one_to_n: valid_categories[Category::OneToN.index()],
            valid_n_to_one: valid_categories[Category::NToOne.index()],
            valid_n_to_n: valid_categories[Category::NToN.index()],
            valid_other: valid_categories[Category::Other.index()],
            mean_train_degree: 2.0 * self.train.len() as f64 / n as f64,
        }
    }
}

/// Summary counts reported by `prepare`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DatasetStats {
    pub entities: usize,
    pub relations: usize,
    pub train: usize,
    pub valid: usize,
    pub test: usize,
    pub valid_one_to_n: usize,
    pub valid_n_to_one: usize,
    pub valid_n_to_n: usize,
    pub valid_other: usize,
    /// In- plus out-degree per entity over the training split.
    pub mean_train_degree: f64,
}

/// Incoming `(head, relation)` and outgoing `(relation, tail)` pairs per entity,
/// from the training split only. Stored in CSR form.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextIndex {
    in_offsets: Vec<usize>,
    incoming: Vec<(EntityId, RelationId)>,
    out_offsets: Vec<usize>,
    outgoing: Vec<(RelationId, EntityId)>,
}

impl ContextIndex {
    pub fn build(num_entities: usize, train: &TripleStore) -> Self {
        let mut in_deg = vec![0usize; num_entities + 1];
        let mut out_deg = vec![0usize; num_entities + 1];
        for t in train.iter() {
            in_deg[t.tail as usize + 1] += 1;
            out_deg[t.head as usize + 1] += 1;
        }
        for i in 0..num_entities {
            in_deg[i + 1] += in_deg[i];
            out_deg[i + 1] += out_deg[i];
        }
        let mut incoming = vec![(0, 0); train.len()];
        let mut outgoing = vec![(0, 0); train.len()];
        let mut in_fill = in_deg.clone();
        let mut out_fill = out_deg.clone();
        for t in train.iter() {
            let slot = &mut in_fill[t.tail as usize];
            incoming[*slot] = (t.head, t.relation);
            *slot += 1;
            let slot = &mut out_fill[t.head as usize];
            outgoing[*slot] = (t.relation, t.tail);
            *slot += 1;
        }
        Self {
            in_offsets: in_deg,
            incoming,
            out_offsets: out_deg,
            outgoing,
        }
    }

    pub fn num_entities(&self) -> usize {
        self.in_offsets.len() - 1
    }

    /// `Ng(t)`: pairs `(h', r')` with `(h', r', t)` in training.
    pub fn head_rel_pairs(&self, entity: EntityId) -> &[(EntityId, RelationId)] {
        let e = entity as usize;
        &self.incoming[self.in_offsets[e]..self.in_offsets[e + 1]]
    }

    /// `Ng(h)`: pairs `(r', t')` with `(h, r', t')` in training.
    pub fn rel_tail_pairs(&self, entity: EntityId) -> &[(RelationId, EntityId)] {
        let e = entity as usize;
        &self.outgoing[self.out_offsets[e]..self.out_offsets[e + 1]]
    }

    pub fn total_pairs(&self) -> usize {
        self.incoming.len()
    }
}

/// All known true triples, for filtered ranking.
#[derive(Debug, Clone, Default)]
pub struct FilterIndex {
    tails: HashMap<(EntityId, RelationId), HashSet<EntityId>>,
    heads: HashMap<(RelationId, EntityId), HashSet<EntityId>>,
    len: usize,
}

impl FilterIndex {
    pub fn build(stores: &[&TripleStore]) -> Self {
        let mut idx = Self::default();
        for store in stores {
            for t in store.iter() {
                idx.insert(*t);
            }
        }
        idx
    }

    pub fn insert(&mut self, t: Triple) {
        if self.tails.entry((t.head, t.relation)).or_default().insert(t.tail) {
            self.len += 1;
        }
        self.heads.entry((t.relation, t.tail)).or_default().insert(t.head);
    }

    pub fn contains(&self, t: &Triple) -> bool {
        self.tails
            .get(&(t.head, t.relation))
            .is_some_and(|s| s.contains(&t.tail))
    }

    pub fn tails_of(&self, head: EntityId, relation: RelationId) -> Option<&HashSet<EntityId>> {
        self.tails.get(&(head, relation))
    }

    pub fn heads_of(&self, relation: RelationId, tail: EntityId) -> Option<&HashSet<EntityId>> {
        self.heads.get(&(relation, tail))
    }

    /// Number of distinct triples.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// Training-split counts of `(h, r)` and `(r, t)` pairs.
#[derive(Debug, Clone, Default)]
pub struct PairCounts {
    head_rel: HashMap<(EntityId, RelationId), u32>,
    rel_tail: HashMap<(RelationId, EntityId), u32>,
}

impl PairCounts {
    pub fn build(train: &TripleStore) -> Self {
        let mut c = Self::default();
        for t in train.iter() {
            *c.head_rel.entry((t.head, t.relation)).or_default() += 1;
            *c.rel_tail.entry((t.relation, t.tail)).or_default() += 1;
        }
        c
    }

    pub fn head_rel(&self, head: EntityId, relation: RelationId) -> u32 {
        self.head_rel.get(&(head, relation)).copied().unwrap_or(0)
    }

    pub fn rel_tail(&self, relation: RelationId, tail: EntityId) -> u32 {
        self.rel_tail.get(&(relation, tail)).copied().unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Category {
    OneToN,
    NToOne,
    NToN,
    Other,
}

impl Category {
    pub const ALL: [Category; 4] = [Category::OneToN, Category::NToOne, Category::NToN, Category::Other];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn label(self) -> &'static str {
        match self {
            Category::OneToN => "1-to-N",
            Category::NToOne => "N-to-1",
            Category::NToN => "N-to-N",
            Category::Other => "other",
        }
    }

    pub fn key(self) -> &'static str {
        match self {
            Category::OneToN => "one_to_n",
            Category::NToOne => "n_to_one",
            Category::NToN => "n_to_n",
            Category::Other => "other",
        }
    }
}

/// Category from training pair counts; unseen pairs count as 0.
pub fn classify_counts(head_rel: u32, rel_tail: u32) -> Category {
    match (head_rel > 1, rel_tail > 1) {
        (true, false) => Category::NToOne,
        (false, true) => Category::OneToN,
        (true, true) => Category::NToN,
        (false, false) => Category::Other,
    }
}

pub fn classify_triple(t: &Triple, counts: &PairCounts) -> Category {
    classify_counts(counts.head_rel(t.head, t.relation), counts.rel_tail(t.relation, t.tail))
}
