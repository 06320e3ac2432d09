//! Knowledge graph storage: vocabularies, split triples with reciprocal relations,
//! and adjacency indexes over unions of splits.
//!
//! Every base relation `r` with id `i` gets a reciprocal `inv_r` with id
//! `i + num_base_relations`, and every stored triple `<s, r, o>` is accompanied
//! by `<o, inv_r, s>` in the same split.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Prefix of generated reciprocal relation names.
pub const INVERSE_PREFIX: &str = "inv_";

/// Version written into vocabulary dumps.
pub const VOCAB_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EntityId(pub u32);

impl EntityId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RelationId(pub u32);

impl RelationId {
    pub fn index(self) -> usize {
        self.0 as usize
    }

    /// The reciprocal relation, given the number of base (non-reciprocal) relations.
    pub fn inverse(self, num_base: u32) -> RelationId {
        if self.0 < num_base {
            RelationId(self.0 + num_base)
        } else {
            RelationId(self.0 - num_base)
        }
    }
}

impl fmt::Display for RelationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Error)]
pub enum KgError {
    #[error("{path}:{line}: expected 3 tab-separated fields, found {found}")]
    Parse {
        path: PathBuf,
        line: usize,
        found: usize,
    },
    #[error("{path}:{line}: invalid id `{token}`")]
    BadId {
        path: PathBuf,
        line: usize,
        token: String,
    },
    #[error("empty split: {0}")]
    EmptySplit(String),
    #[error("relation name `{0}` collides with a generated reciprocal name")]
    ReciprocalCollision(String),
    #[error("vocabulary ids are not dense: {0}")]
    NonDenseIds(String),
    #[error("unsupported vocabulary format version {0}")]
    VocabVersion(u32),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("vocabulary json: {0}")]
    Json(#[from] serde_json::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> KgError + '_ {
    move |source| KgError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Entity and relation vocabularies with dense, 0-based ids.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Vocab {
    entity_names: Vec<String>,
    relation_names: Vec<String>,
    num_base_relations: u32,
    entity_ids: HashMap<String, EntityId>,
    relation_ids: HashMap<String, RelationId>,
}

#[derive(Serialize, Deserialize)]
struct VocabDump {
    format_version: u32,
    entities: Vec<String>,
    relations: Vec<String>,
}

impl Vocab {
    /// Builds a vocabulary from entity names and base relation names, appending reciprocals.
    pub fn new(entities: Vec<String>, base_relations: Vec<String>) -> Result<Self, KgError> {
        let mut entity_ids = HashMap::with_capacity(entities.len());
        for (i, name) in entities.iter().enumerate() {
            if entity_ids.insert(name.clone(), EntityId(i as u32)).is_some() {
                return Err(KgError::NonDenseIds(format!("duplicate entity `{name}`")));
            }
        }
        let num_base = base_relations.len() as u32;
        let mut relation_names = base_relations.clone();
        relation_names.extend(base_relations.iter().map(|r| format!("{INVERSE_PREFIX}{r}")));
        let mut relation_ids = HashMap::with_capacity(relation_names.len());
        for (i, name) in relation_names.iter().enumerate() {
            if relation_ids.insert(name.clone(), RelationId(i as u32)).is_some() {
                return Err(KgError::ReciprocalCollision(name.clone()));
            }
        }
        Ok(Vocab {
            entity_names: entities,
            relation_names,
            num_base_relations: num_base,
            entity_ids,
            relation_ids,
        })
    }

    pub fn num_entities(&self) -> usize {
        self.entity_names.len()
    }

    /// Number of relations including reciprocals.
    pub fn num_relations(&self) -> usize {
        self.relation_names.len()
    }

    pub fn num_base_relations(&self) -> u32 {
        self.num_base_relations
    }

    pub fn entity_id(&self, name: &str) -> Option<EntityId> {
        self.entity_ids.get(name).copied()
    }

    pub fn relation_id(&self, name: &str) -> Option<RelationId> {
        self.relation_ids.get(name).copied()
    }

    pub fn entity_name(&self, id: EntityId) -> &str {
        &self.entity_names[id.index()]
    }

    pub fn relation_name(&self, id: RelationId) -> &str {
        &self.relation_names[id.index()]
    }

    pub fn entity_names(&self) -> &[String] {
        &self.entity_names
    }

    pub fn relation_names(&self) -> &[String] {
        &self.relation_names
    }

    pub fn inverse(&self, p: RelationId) -> RelationId {
        p.inverse(self.num_base_relations)
    }

    pub fn to_json(&self) -> Result<String, KgError> {
        let dump = VocabDump {
            format_version: VOCAB_FORMAT_VERSION,
            entities: self.entity_names.clone(),
            relations: self.relation_names[..self.num_base_relations as usize].to_vec(),
        };
        Ok(serde_json::to_string_pretty(&dump)?)
    }

    pub fn from_json(text: &str) -> Result<Self, KgError> {
        let dump: VocabDump = serde_json::from_str(text)?;
        if dump.format_version != VOCAB_FORMAT_VERSION {
            return Err(KgError::VocabVersion(dump.format_version));
        }
        Vocab::new(dump.entities, dump.relations)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Triple {
    pub s: EntityId,
    pub p: RelationId,
    pub o: EntityId,
}

impl Triple {
    pub fn new(s: u32, p: u32, o: u32) -> Self {
        Triple {
            s: EntityId(s),
            p: RelationId(p),
            o: EntityId(o),
        }
    }

    pub fn reciprocal(self, num_base: u32) -> Triple {
        Triple {
            s: self.o,
            p: self.p.inverse(num_base),
            o: self.s,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

/// A union of splits.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SplitSet {
    pub train: bool,
    pub valid: bool,
    pub test: bool,
}

impl SplitSet {
    pub const TRAIN: SplitSet = SplitSet {
        train: true,
        valid: false,
        test: false,
    };
    pub const TRAIN_VALID: SplitSet = SplitSet {
        train: true,
        valid: true,
        test: false,
    };
    pub const ALL: SplitSet = SplitSet {
        train: true,
        valid: true,
        test: true,
    };

    pub fn contains(self, split: Split) -> bool {
        match split {
            Split::Train => self.train,
            Split::Valid => self.valid,
            Split::Test => self.test,
        }
    }
}

type AdjacencyMap = HashMap<(EntityId, RelationId), Vec<EntityId>>;

fn build_index(triples: &[Triple]) -> AdjacencyMap {
    let mut index: AdjacencyMap = HashMap::new();
    for t in triples {
        index.entry((t.s, t.p)).or_default().push(t.o);
    }
    for objects in index.values_mut() {
        objects.sort_unstable();
        objects.dedup();
    }
    index
}

/// Triple counts per split, with and without reciprocal edges.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct SplitCounts {
    pub raw: usize,
    pub with_reciprocals: usize,
}

/// An immutable knowledge graph with train/valid/test splits.
#[derive(Clone, Debug)]
pub struct KnowledgeGraph {
    vocab: Vocab,
    splits: [Vec<Triple>; 3],
    raw_counts: [usize; 3],
    indexes: [AdjacencyMap; 3],
}

impl KnowledgeGraph {
    /// Builds a graph from base (non-reciprocal) triples per split.
    ///
    /// Duplicates are removed, a triple already present in an earlier split
    /// (train, then valid, then test) is dropped from later ones, and reciprocals
    /// are materialized.
    pub fn from_base_triples(
        vocab: Vocab,
        train: Vec<Triple>,
        valid: Vec<Triple>,
        test: Vec<Triple>,
    ) -> Result<Self, KgError> {
        let num_base = vocab.num_base_relations();
        let mut seen: HashSet<Triple> = HashSet::new();
        let mut splits: [Vec<Triple>; 3] = Default::default();
        let mut raw_counts = [0usize; 3];
        for (i, (split, base)) in Split::ALL.iter().zip([train, valid, test]).enumerate() {
            let mut kept = Vec::with_capacity(base.len() * 2);
            let mut dropped = 0usize;
            for t in base {
                debug_assert!(t.p.0 < num_base, "base triples use base relations");
                if seen.insert(t) {
                    kept.push(t);
                } else {
                    dropped += 1;
                }
            }
            if dropped > 0 {
                log::debug!("{}: dropped {dropped} duplicate triples", split.name());
            }
            raw_counts[i] = kept.len();
            let reciprocals: Vec<Triple> = kept.iter().map(|t| t.reciprocal(num_base)).collect();
            kept.extend(reciprocals);
            splits[i] = kept;
        }
        if splits[0].is_empty() {
            return Err(KgError::EmptySplit("train".into()));
        }
        let indexes = [
            build_index(&splits[0]),
            build_index(&splits[1]),
            build_index(&splits[2]),
        ];
        Ok(KnowledgeGraph {
            vocab,
            splits,
            raw_counts,
            indexes,
        })
    }

    /// Loads three tab-separated `subject<TAB>relation<TAB>object` files.
    ///
    /// Ids are assigned in first-occurrence order over train, valid, test.
    pub fn load_tsv(train: &Path, valid: &Path, test: &Path) -> Result<Self, KgError> {
        Self::load_tsv_with_vocab(train, valid, test, None)
    }

    fn load_tsv_with_vocab(
        train: &Path,
        valid: &Path,
        test: &Path,
        seed_vocab: Option<Vocab>,
    ) -> Result<Self, KgError> {
        let mut named = Vec::with_capacity(3);
        for path in [train, valid, test] {
            named.push(read_named_triples(path)?);
        }
        if named[0].is_empty() {
            return Err(KgError::EmptySplit(train.display().to_string()));
        }
        let mut entities: Vec<String> = Vec::new();
        let mut relations: Vec<String> = Vec::new();
        let mut entity_ids: HashMap<String, u32> = HashMap::new();
        let mut relation_ids: HashMap<String, u32> = HashMap::new();
        if let Some(v) = &seed_vocab {
            for name in v.entity_names() {
                entity_ids.insert(name.clone(), entities.len() as u32);
                entities.push(name.clone());
            }
            for name in &v.relation_names()[..v.num_base_relations() as usize] {
                relation_ids.insert(name.clone(), relations.len() as u32);
                relations.push(name.clone());
            }
        }
        let intern = |map: &mut HashMap<String, u32>, names: &mut Vec<String>, key: &str| {
            if let Some(&id) = map.get(key) {
                id
            } else {
                let id = names.len() as u32;
                map.insert(key.to_string(), id);
                names.push(key.to_string());
                id
            }
        };
        let mut encoded: Vec<Vec<Triple>> = Vec::with_capacity(3);
        for split in &named {
            let mut out = Vec::with_capacity(split.len());
            for (s, p, o) in split {
                let s = intern(&mut entity_ids, &mut entities, s);
                let p = intern(&mut relation_ids, &mut relations, p);
                let o = intern(&mut entity_ids, &mut entities, o);
                out.push(Triple::new(s, p, o));
            }
            encoded.push(out);
        }
        let vocab = Vocab::new(entities, relations)?;
        let test = encoded.pop().unwrap_or_default();
        let valid = encoded.pop().unwrap_or_default();
        let train = encoded.pop().unwrap_or_default();
        Self::from_base_triples(vocab, train, valid, test)
    }

    /// Loads `train.txt`, `valid.txt`, `test.txt` from a directory. When a
    /// `vocab.json` dump is present it fixes the id assignment.
    pub fn load_dir(dir: &Path) -> Result<Self, KgError> {
        let vocab_path = dir.join("vocab.json");
        let seed = if vocab_path.exists() {
            let text = fs::read_to_string(&vocab_path).map_err(io_err(&vocab_path))?;
            Some(Vocab::from_json(&text)?)
        } else {
            None
        };
        Self::load_tsv_with_vocab(
            &dir.join("train.txt"),
            &dir.join("valid.txt"),
            &dir.join("test.txt"),
            seed,
        )
    }

    /// Loads the id-mapped layout: `entity2id.txt` and `relation2id.txt`
    /// (`name<TAB>id` per line, optional leading count line) plus
    /// `train.txt`/`valid.txt`/`test.txt` holding integer id triples.
    pub fn load_id_mapped(dir: &Path) -> Result<Self, KgError> {
        let entities = read_id_map(&dir.join("entity2id.txt"))?;
        let relations = read_id_map(&dir.join("relation2id.txt"))?;
        let vocab = Vocab::new(entities, relations)?;
        let mut splits = Vec::with_capacity(3);
        for name in ["train.txt", "valid.txt", "test.txt"] {
            let path = dir.join(name);
            let mut triples = Vec::new();
            for (line_no, (s, p, o)) in read_named_triples_numbered(&path)? {
                let parse = |tok: &str, bound: usize| -> Result<u32, KgError> {
                    tok.parse::<u32>()
                        .ok()
                        .filter(|&v| (v as usize) < bound)
                        .ok_or_else(|| KgError::BadId {
                            path: path.clone(),
                            line: line_no,
                            token: tok.to_string(),
                        })
                };
                triples.push(Triple::new(
                    parse(&s, vocab.num_entities())?,
                    parse(&p, vocab.num_base_relations() as usize)?,
                    parse(&o, vocab.num_entities())?,
                ));
            }
            splits.push(triples);
        }
        let test = splits.pop().unwrap_or_default();
        let valid = splits.pop().unwrap_or_default();
        let train = splits.pop().unwrap_or_default();
        Self::from_base_triples(vocab, train, valid, test)
    }

    /// Writes `vocab.json` and the three base-triple TSV files.
    pub fn save_dir(&self, dir: &Path) -> Result<(), KgError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let vocab_path = dir.join("vocab.json");
        fs::write(&vocab_path, self.vocab.to_json()?).map_err(io_err(&vocab_path))?;
        for split in Split::ALL {
            let path = dir.join(format!("{}.txt", split.name()));
            let mut out = std::io::BufWriter::new(fs::File::create(&path).map_err(io_err(&path))?);
            for t in self.base_triples(split) {
                writeln!(
                    out,
                    "{}\t{}\t{}",
                    self.vocab.entity_name(t.s),
                    self.vocab.relation_name(t.p),
                    self.vocab.entity_name(t.o)
                )
                .map_err(io_err(&path))?;
            }
            out.flush().map_err(io_err(&path))?;
        }
        Ok(())
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn num_entities(&self) -> usize {
        self.vocab.num_entities()
    }

    pub fn num_relations(&self) -> usize {
        self.vocab.num_relations()
    }

    /// All triples of a split, reciprocals included.
    pub fn triples(&self, split: Split) -> &[Triple] {
        &self.splits[split as usize]
    }

    /// The base triples of a split, in load order.
    pub fn base_triples(&self, split: Split) -> &[Triple] {
        &self.splits[split as usize][..self.raw_counts[split as usize]]
    }

    pub fn counts(&self, split: Split) -> SplitCounts {
        SplitCounts {
            raw: self.raw_counts[split as usize],
            with_reciprocals: self.splits[split as usize].len(),
        }
    }

    /// `{ o : <s, p, o> in the selected splits }`.
    pub fn answers(&self, splits: SplitSet, s: EntityId, p: RelationId) -> BTreeSet<EntityId> {
        let mut out = BTreeSet::new();
        for split in Split::ALL {
            if splits.contains(split) {
                if let Some(objects) = self.indexes[split as usize].get(&(s, p)) {
                    out.extend(objects.iter().copied());
                }
            }
        }
        out
    }

    pub fn contains(&self, splits: SplitSet, t: &Triple) -> bool {
        Split::ALL.iter().any(|&split| {
            splits.contains(split)
                && self.indexes[split as usize]
                    .get(&(t.s, t.p))
                    .is_some_and(|objects| objects.binary_search(&t.o).is_ok())
        })
    }

    /// Materializes a merged adjacency view over the selected splits.
    pub fn graph(&self, splits: SplitSet) -> Graph {
        let n = self.num_entities();
        let mut out: Vec<Vec<(RelationId, EntityId)>> = vec![Vec::new(); n];
        for split in Split::ALL {
            if splits.contains(split) {
                for t in self.triples(split) {
                    out[t.s.index()].push((t.p, t.o));
                }
            }
        }
        for edges in &mut out {
            edges.sort_unstable();
            edges.dedup();
        }
        Graph { out }
    }
}

/// Sorted outgoing adjacency lists `s -> [(p, o)]` over a union of splits.
///
/// Because reciprocals are materialized, incoming edges of `o` via `p` are the
/// outgoing edges of `o` via `inv(p)`.
#[derive(Clone, Debug)]
pub struct Graph {
    out: Vec<Vec<(RelationId, EntityId)>>,
}

impl Graph {
    pub fn num_entities(&self) -> usize {
        self.out.len()
    }

    pub fn edges(&self, s: EntityId) -> &[(RelationId, EntityId)] {
        &self.out[s.index()]
    }

    /// Objects reachable from `s` via `p`, sorted.
    pub fn objects(&self, s: EntityId, p: RelationId) -> impl Iterator<Item = EntityId> + '_ {
        let edges = &self.out[s.index()];
        let start = edges.partition_point(|&(r, _)| r < p);
        edges[start..]
            .iter()
            .take_while(move |&&(r, _)| r == p)
            .map(|&(_, o)| o)
    }

    pub fn has_edge(&self, s: EntityId, p: RelationId, o: EntityId) -> bool {
        self.out[s.index()].binary_search(&(p, o)).is_ok()
    }
}

type NamedTriple = (String, String, String);

fn read_named_triples(path: &Path) -> Result<Vec<NamedTriple>, KgError> {
    Ok(read_named_triples_numbered(path)?
        .into_iter()
        .map(|(_, t)| t)
        .collect())
}

fn read_named_triples_numbered(path: &Path) -> Result<Vec<(usize, NamedTriple)>, KgError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(KgError::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                found: fields.len(),
            });
        }
        out.push((
            i + 1,
            (
                fields[0].to_string(),
                fields[1].to_string(),
                fields[2].to_string(),
            ),
        ));
    }
    Ok(out)
}

fn read_id_map(path: &Path) -> Result<Vec<String>, KgError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut pairs: Vec<(u32, String)> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if i == 0 && fields.len() == 1 && fields[0].trim().parse::<u32>().is_ok() {
            continue;
        }
        if fields.len() != 2 {
            return Err(KgError::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                found: fields.len(),
            });
        }
        let id = fields[1].trim().parse::<u32>().map_err(|_| KgError::BadId {
            path: path.to_path_buf(),
            line: i + 1,
            token: fields[1].to_string(),
        })?;
        pairs.push((id, fields[0].to_string()));
    }
    pairs.sort();
    for (expected, (id, name)) in pairs.iter().enumerate() {
        if *id as usize != expected {
            return Err(KgError::NonDenseIds(format!(
                "{}: `{name}` has id {id}, expected {expected}",
                path.display()
            )));
        }
    }
    Ok(pairs.into_iter().map(|(_, name)| name).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn write_split(dir: &Path, name: &str, lines: &[&str]) -> PathBuf {
        let path = dir.join(name);
        fs::write(&path, lines.join("\n")).unwrap();
        path
    }

    fn toy(lines: &[&str]) -> KnowledgeGraph {
        let dir = tempfile::tempdir().unwrap();
        let train = write_split(dir.path(), "train.txt", lines);
        let valid = write_split(dir.path(), "valid.txt", &[]);
        let test = write_split(dir.path(), "test.txt", &[]);
        KnowledgeGraph::load_tsv(&train, &valid, &test).unwrap()
    }

    #[test]
    fn reciprocals_are_materialized() {
        let kg = toy(&["a\tr\tb", "b\tr\tc"]);
        assert_eq!(kg.num_entities(), 3);
        assert_eq!(kg.num_relations(), 2);
        assert_eq!(kg.vocab().relation_name(RelationId(1)), "inv_r");
        assert_eq!(kg.triples(Split::Train).len(), 4);
        assert_eq!(
            kg.counts(Split::Train),
            SplitCounts {
                raw: 2,
                with_reciprocals: 4
            }
        );
        for t in kg.triples(Split::Train) {
            let r = t.reciprocal(kg.vocab().num_base_relations());
            assert!(kg.contains(SplitSet::TRAIN, &r));
            assert_eq!(r.reciprocal(1), *t);
        }
    }

    #[test]
    fn empty_train_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let train = write_split(dir.path(), "train.txt", &[]);
        let valid = write_split(dir.path(), "valid.txt", &["a\tr\tb"]);
        let test = write_split(dir.path(), "test.txt", &[]);
        let err = KnowledgeGraph::load_tsv(&train, &valid, &test).unwrap_err();
        assert!(err.to_string().contains("empty split"), "{err}");
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let train = write_split(dir.path(), "train.txt", &["a\tr\tb", "a\tr"]);
        let valid = write_split(dir.path(), "valid.txt", &[]);
        let test = write_split(dir.path(), "test.txt", &[]);
        match KnowledgeGraph::load_tsv(&train, &valid, &test).unwrap_err() {
            KgError::Parse { line, found, .. } => {
                assert_eq!(line, 2);
                assert_eq!(found, 2);
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn duplicates_match_brute_force_dedup() {
        let lines = ["a\tr\tb", "a\tr\tb", "b\tq\ta", "a\tr\tc", "b\tq\ta"];
        let kg = toy(&lines);
        let expected: BTreeSet<&str> = lines.iter().copied().collect();
        let got: BTreeSet<String> = kg
            .base_triples(Split::Train)
            .iter()
            .map(|t| {
                format!(
                    "{}\t{}\t{}",
                    kg.vocab().entity_name(t.s),
                    kg.vocab().relation_name(t.p),
                    kg.vocab().entity_name(t.o)
                )
            })
            .collect();
        assert_eq!(got.iter().map(String::as_str).collect::<BTreeSet<_>>(), expected);
    }

    #[test]
    fn answers_direct_and_reciprocal() {
        let kg = toy(&["a\tr\tb", "a\tr\tc"]);
        let v = kg.vocab();
        let (a, b, c) = (
            v.entity_id("a").unwrap(),
            v.entity_id("b").unwrap(),
            v.entity_id("c").unwrap(),
        );
        let r = v.relation_id("r").unwrap();
        assert_eq!(kg.answers(SplitSet::ALL, a, r), BTreeSet::from([b, c]));
        assert!(kg.answers(SplitSet::ALL, b, r).is_empty());
        assert_eq!(kg.answers(SplitSet::ALL, b, v.inverse(r)), BTreeSet::from([a]));
    }

    #[test]
    fn later_splits_drop_triples_seen_earlier() {
        let vocab = Vocab::new(vec!["a".into(), "b".into()], vec!["r".into()]).unwrap();
        let t = Triple::new(0, 0, 1);
        let kg = KnowledgeGraph::from_base_triples(vocab, vec![t], vec![t], vec![]).unwrap();
        assert!(kg.triples(Split::Valid).is_empty());
    }

    #[test]
    fn reciprocal_name_collision_is_an_error() {
        let err = Vocab::new(vec![], vec!["r".into(), "inv_r".into()]).unwrap_err();
        assert!(matches!(err, KgError::ReciprocalCollision(_)));
    }

    #[test]
    fn save_load_round_trip_keeps_ids() {
        let kg = toy(&["x\tr\ty", "y\tq\tz", "z\tr\tx"]);
        let dir = tempfile::tempdir().unwrap();
        kg.save_dir(dir.path()).unwrap();
        let back = KnowledgeGraph::load_dir(dir.path()).unwrap();
        assert_eq!(back.vocab(), kg.vocab());
        for split in Split::ALL {
            assert_eq!(back.triples(split), kg.triples(split));
        }
    }

    #[test]
    fn id_mapped_layout_loads() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("entity2id.txt"), "3\nb\t1\na\t0\nc\t2\n").unwrap();
        fs::write(dir.path().join("relation2id.txt"), "r\t0\n").unwrap();
        fs::write(dir.path().join("train.txt"), "0\t0\t1\n1\t0\t2\n").unwrap();
        fs::write(dir.path().join("valid.txt"), "0\t0\t2\n").unwrap();
        fs::write(dir.path().join("test.txt"), "").unwrap();
        let kg = KnowledgeGraph::load_id_mapped(dir.path()).unwrap();
        assert_eq!(kg.vocab().entity_name(EntityId(1)), "b");
        assert_eq!(kg.counts(Split::Valid).raw, 1);
        fs::write(dir.path().join("test.txt"), "0\t5\t1\n").unwrap();
        assert!(matches!(
            KnowledgeGraph::load_id_mapped(dir.path()),
            Err(KgError::BadId { .. })
        ));
    }

    #[test]
    fn answers_agree_with_linear_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 25u32;
        let names: Vec<String> = (0..n).map(|i| format!("e{i}")).collect();
        let vocab = Vocab::new(names, vec!["r0".into(), "r1".into(), "r2".into()]).unwrap();
        let mut draw = |count: usize| -> Vec<Triple> {
            (0..count)
                .map(|_| Triple::new(rng.random_range(0..n), rng.random_range(0..3), rng.random_range(0..n)))
                .collect()
        };
        let (train, valid, test) = (draw(200), draw(30), draw(30));
        let kg = KnowledgeGraph::from_base_triples(vocab, train, valid, test).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for probe in 0..1000 {
            let splits = [SplitSet::TRAIN, SplitSet::TRAIN_VALID, SplitSet::ALL][probe % 3];
            let s = EntityId(rng.random_range(0..n));
            let p = RelationId(rng.random_range(0..6));
            let mut scan = BTreeSet::new();
            for split in Split::ALL {
                if splits.contains(split) {
                    for t in kg.triples(split) {
                        if t.s == s && t.p == p {
                            scan.insert(t.o);
                        }
                    }
                }
            }
            assert_eq!(kg.answers(splits, s, p), scan);
            let graph = kg.graph(splits);
            assert_eq!(graph.objects(s, p).collect::<BTreeSet<_>>(), scan);
        }
    }
}
