//! Triple storage, dataset I/O, filtered-candidate indexes, relation
//! profiling and a synthetic KG generator.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple {
    pub h: usize,
    pub r: usize,
    pub t: usize,
}

impl Triple {
    pub fn new(h: usize, r: usize, t: usize) -> Self {
        Triple { h, r, t }
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

    pub fn file_name(self) -> &'static str {
        match self {
            Split::Train => "train.txt",
            Split::Valid => "valid.txt",
            Split::Test => "test.txt",
        }
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" | "validation" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(Error::invalid(format!("unknown split '{other}'"))),
        }
    }
}

/// Dense name <-> id map.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Vocab {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_names(names: impl IntoIterator<Item = String>) -> Result<Self> {
        let mut v = Vocab::new();
        for n in names {
            if v.index.contains_key(&n) {
                return Err(Error::invalid(format!("duplicate vocabulary name '{n}'")));
            }
            v.intern(&n);
        }
        Ok(v)
    }

    pub fn intern(&mut self, name: &str) -> usize {
        if let Some(&id) = self.index.get(name) {
            return id;
        }
        let id = self.names.len();
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), id);
        id
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: usize) -> Option<&str> {
        self.names.get(id).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

/// Train/valid/test triples over dense entity and relation ids.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TripleStore {
    pub entities: Vocab,
    pub relations: Vocab,
    pub train: Vec<Triple>,
    pub valid: Vec<Triple>,
    pub test: Vec<Triple>,
}

impl TripleStore {
    pub fn n_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn n_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn split(&self, split: Split) -> &[Triple] {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    pub fn all_triples(&self) -> impl Iterator<Item = &Triple> {
        self.train.iter().chain(&self.valid).chain(&self.test)
    }

    /// Checks that every id is in range.
    pub fn validate(&self) -> Result<()> {
        let (ne, nr) = (self.n_entities(), self.n_relations());
        if let Some(t) = self.all_triples().find(|t| t.h >= ne || t.t >= ne || t.r >= nr) {
            return Err(Error::invalid(format!("triple {t:?} references an unknown id")));
        }
        Ok(())
    }

    /// Writes `train.txt`, `valid.txt`, `test.txt` (tab-separated names) and
    /// the `entities.tsv` / `relations.tsv` vocabularies (`name<TAB>id`).
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for split in Split::ALL {
            let path = dir.join(split.file_name());
            let mut w = create(&path)?;
            for t in self.split(split) {
                writeln!(
                    w,
                    "{}\t{}\t{}",
                    self.entities.names[t.h], self.relations.names[t.r], self.entities.names[t.t]
                )
                .map_err(|e| Error::io(&path, e))?;
            }
            w.flush().map_err(|e| Error::io(&path, e))?;
        }
        for (file, vocab) in [("entities.tsv", &self.entities), ("relations.tsv", &self.relations)] {
            let path = dir.join(file);
            let mut w = create(&path)?;
            for (id, name) in vocab.names.iter().enumerate() {
                writeln!(w, "{name}\t{id}").map_err(|e| Error::io(&path, e))?;
            }
            w.flush().map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

fn read_vocab(path: &Path) -> Result<Option<Vocab>> {
    if !path.exists() {
        return Ok(None);
    }
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut names = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: n + 1,
            message,
        };
        let (name, id) = line
            .rsplit_once('\t')
            .ok_or_else(|| parse_err("expected name<TAB>id".into()))?;
        let id: usize = id
            .parse()
            .map_err(|_| parse_err(format!("invalid id '{id}'")))?;
        if id != names.len() {
            return Err(parse_err(format!("ids must be dense and ordered, found {id}")));
        }
        names.push(name.to_string());
    }
    Vocab::from_names(names).map(Some)
}

/// Loads a benchmark-layout directory.
///
/// Ids come from `entities.tsv` / `relations.tsv` when present; otherwise (and
/// for names missing from them) ids are assigned by first appearance over
/// train, valid, test. Duplicate lines within a split are dropped.
pub fn load_dataset(dir: &Path) -> Result<TripleStore> {
    let mut store = TripleStore {
        entities: read_vocab(&dir.join("entities.tsv"))?.unwrap_or_default(),
        relations: read_vocab(&dir.join("relations.tsv"))?.unwrap_or_default(),
        ..TripleStore::default()
    };
    for split in Split::ALL {
        let path = dir.join(split.file_name());
        let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
        let mut seen = HashSet::new();
        let mut triples = Vec::new();
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(&path, e))?;
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(Error::Parse {
                    path: path.clone(),
                    line: n + 1,
                    message: format!("expected 3 tab-separated fields, found {}", fields.len()),
                });
            }
            let h = store.entities.intern(fields[0]);
            let r = store.relations.intern(fields[1]);
            let t = store.entities.intern(fields[2]);
            let triple = Triple::new(h, r, t);
            if seen.insert(triple) {
                triples.push(triple);
            }
        }
        match split {
            Split::Train => store.train = triples,
            Split::Valid => store.valid = triples,
            Split::Test => store.test = triples,
        }
    }
    Ok(store)
}

/// Known tails of `(h, r)` and heads of `(r, t)` over all three splits.
#[derive(Clone, Debug, Default)]
pub struct FilterIndex {
    tails: HashMap<(usize, usize), Vec<usize>>,
    heads: HashMap<(usize, usize), Vec<usize>>,
}

impl FilterIndex {
    pub fn tails_of(&self, h: usize, r: usize) -> &[usize] {
        self.tails.get(&(h, r)).map_or(&[], Vec::as_slice)
    }

    pub fn heads_of(&self, r: usize, t: usize) -> &[usize] {
        self.heads.get(&(r, t)).map_or(&[], Vec::as_slice)
    }

    pub fn tail_entries(&self) -> usize {
        self.tails.values().map(Vec::len).sum()
    }

    pub fn head_entries(&self) -> usize {
        self.heads.values().map(Vec::len).sum()
    }
}

pub fn build_filter_index(store: &TripleStore) -> FilterIndex {
    let mut idx = FilterIndex::default();
    for t in store.all_triples() {
        idx.tails.entry((t.h, t.r)).or_default().push(t.t);
        idx.heads.entry((t.r, t.t)).or_default().push(t.h);
    }
    for v in idx.tails.values_mut().chain(idx.heads.values_mut()) {
        v.sort_unstable();
        v.dedup();
    }
    idx
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelationKind {
    Symmetric,
    AntiSymmetric,
    GeneralAsymmetric,
}

impl fmt::Display for RelationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RelationKind::Symmetric => "symmetric",
            RelationKind::AntiSymmetric => "anti-symmetric",
            RelationKind::GeneralAsymmetric => "general-asymmetric",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelationStats {
    pub relation: usize,
    pub name: String,
    pub n_triples: usize,
    /// Triples whose reverse is also present under the same relation.
    pub n_reversed: usize,
    pub kind: RelationKind,
    /// Another relation holding the reverse of more than half of this one.
    pub inverse_of: Option<usize>,
    pub inverse_count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelationProfile {
    pub split: Split,
    pub relations: Vec<RelationStats>,
}

/// Classifies every relation by how many of its triples in `split` have
/// reverses (same relation, and other relations).
pub fn profile_relations(store: &TripleStore, split: Split) -> RelationProfile {
    let nr = store.n_relations();
    let mut pairs: Vec<HashSet<(usize, usize)>> = vec![HashSet::new(); nr];
    for t in store.split(split) {
        pairs[t.r].insert((t.h, t.t));
    }
    let relations = (0..nr)
        .map(|r| {
            let own = &pairs[r];
            let n = own.len();
            let reversed = own.iter().filter(|(h, t)| own.contains(&(*t, *h))).count();
            let kind = if n > 0 && 2 * reversed > n {
                RelationKind::Symmetric
            } else if n > 0 && reversed == 0 {
                RelationKind::AntiSymmetric
            } else {
                RelationKind::GeneralAsymmetric
            };
            let mut inverse_of = None;
            let mut inverse_count = 0;
            for (other, set) in pairs.iter().enumerate() {
                if other == r || n == 0 {
                    continue;
                }
                let c = own.iter().filter(|(h, t)| set.contains(&(*t, *h))).count();
                if 2 * c > n && c > inverse_count {
                    inverse_of = Some(other);
                    inverse_count = c;
                }
            }
            RelationStats {
                relation: r,
                name: store.relations.name(r).unwrap_or_default().to_string(),
                n_triples: n,
                n_reversed: reversed,
                kind,
                inverse_of,
                inverse_count,
            }
        })
        .collect();
    RelationProfile { split, relations }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticKind {
    Symmetric,
    AntiSymmetric,
    /// Two relations, the second holding the reverse of every triple of the first.
    InversePair,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticRelation {
    pub kind: SyntheticKind,
    pub n_triples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_entities: usize,
    pub relations: Vec<SyntheticRelation>,
    /// Latent entity groups; defaults to `max(5, n_entities / 20)`.
    #[serde(default)]
    pub n_clusters: Option<usize>,
}

impl SyntheticSpec {
    /// 200 entities with one symmetric, one anti-symmetric and one inverse
    /// pair of relations, roughly 3,000 triples in total.
    pub fn mixed_200() -> Self {
        SyntheticSpec {
            n_entities: 200,
            relations: vec![
                SyntheticRelation { kind: SyntheticKind::Symmetric, n_triples: 800 },
                SyntheticRelation { kind: SyntheticKind::AntiSymmetric, n_triples: 750 },
                SyntheticRelation { kind: SyntheticKind::InversePair, n_triples: 725 },
            ],
            n_clusters: None,
        }
    }
}

/// Generates a KG whose relations follow latent cluster/position rules.
///
/// Entities are shuffled into clusters, each with a cyclic position. A
/// symmetric relation links entities of the same cluster at a small positional
/// offset (both directions); an anti-symmetric one links cluster `c` to
/// `c + 1`; an inverse pair links `c` to `c + 2` and back. Units (a triple, or
/// a symmetric pair) are split 80/10/10 at random.
pub fn generate_synthetic_kg(spec: &SyntheticSpec, seed: u64) -> Result<TripleStore> {
    let n = spec.n_entities;
    if n < 4 {
        return Err(Error::invalid("synthetic KG needs at least 4 entities"));
    }
    if spec.relations.is_empty() || spec.relations.iter().any(|r| r.n_triples == 0) {
        return Err(Error::invalid("every synthetic relation needs at least one triple"));
    }
    let c = spec
        .n_clusters
        .unwrap_or_else(|| (n / 20).max(5))
        .min(n / 2)
        .max(3);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); c];
    let mut cluster = vec![0; n];
    let mut position = vec![0; n];
    for (slot, &e) in order.iter().enumerate() {
        cluster[e] = slot % c;
        position[e] = slot / c;
        members[slot % c].push(e);
    }

    let mut relations = Vocab::new();
    let mut units: Vec<Vec<Triple>> = Vec::new();
    for (i, rel) in spec.relations.iter().enumerate() {
        let (shift, pair) = match rel.kind {
            SyntheticKind::Symmetric => (0, true),
            SyntheticKind::AntiSymmetric => (1, false),
            SyntheticKind::InversePair => (2, false),
        };
        let r = relations.intern(&format!("r{i}"));
        let partner = (rel.kind == SyntheticKind::InversePair)
            .then(|| relations.intern(&format!("r{i}_inv")));
        let wanted = if pair { rel.n_triples.div_ceil(2) } else { rel.n_triples };
        let window = (wanted.div_ceil(n) + 1).max(2);
        let mut seen = HashSet::new();
        let mut made = 0;
        let mut attempts = 0;
        while made < wanted && attempts < 50 * wanted {
            attempts += 1;
            let a = rng.gen_range(0..n);
            let target = (cluster[a] + shift) % c;
            let size = members[target].len();
            let offset = if pair { rng.gen_range(1..=window) } else { rng.gen_range(0..window) };
            let b = members[target][(position[a] + offset) % size];
            if a == b {
                continue;
            }
            let key = if pair { (a.min(b), a.max(b)) } else { (a, b) };
            if !seen.insert(key) {
                continue;
            }
            made += 1;
            if pair {
                units.push(vec![Triple::new(a, r, b), Triple::new(b, r, a)]);
            } else {
                units.push(vec![Triple::new(a, r, b)]);
                if let Some(p) = partner {
                    units.push(vec![Triple::new(b, p, a)]);
                }
            }
        }
    }
    units.shuffle(&mut rng);
    let n_units = units.len();
    let n_train = (n_units * 8).div_ceil(10);
    let n_valid = (n_units - n_train) / 2;
    let mut store = TripleStore {
        entities: Vocab::from_names((0..n).map(|e| format!("e{e}")))?,
        relations,
        ..TripleStore::default()
    };
    for (i, unit) in units.into_iter().enumerate() {
        let dst = if i < n_train {
            &mut store.train
        } else if i < n_train + n_valid {
            &mut store.valid
        } else {
            &mut store.test
        };
        dst.extend(unit);
    }
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) {
        std::fs::write(dir.join(name), body).unwrap();
    }

    #[test]
    fn loads_small_dataset() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "train.txt", "a\tr\tb\nb\tr\tc\na\tr\tb\n");
        write(dir.path(), "valid.txt", "");
        write(dir.path(), "test.txt", "c\tr\ta\n");
        let store = load_dataset(dir.path()).unwrap();
        assert_eq!(store.n_entities(), 3);
        assert_eq!(store.n_relations(), 1);
        assert_eq!(store.train.len(), 2);
        assert!(store.valid.is_empty());
        assert_eq!(store.entities.id("c"), Some(2));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "train.txt", "a\tr\tb\nbroken line\n");
        write(dir.path(), "valid.txt", "");
        write(dir.path(), "test.txt", "");
        match load_dataset(dir.path()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
        std::fs::remove_file(dir.path().join("test.txt")).unwrap();
        write(dir.path(), "train.txt", "a\tr\tb\n");
        assert!(matches!(load_dataset(dir.path()), Err(Error::Io { .. })));
    }

    #[test]
    fn filter_index_basics() {
        let mut store = TripleStore::default();
        for n in ["a", "b"] {
            store.entities.intern(n);
        }
        store.relations.intern("r");
        store.train = vec![Triple::new(0, 0, 1)];
        let idx = build_filter_index(&store);
        assert_eq!(idx.tails_of(0, 0), &[1]);
        assert_eq!(idx.heads_of(0, 1), &[0]);
        assert!(idx.tails_of(1, 0).is_empty());
        store.test = vec![Triple::new(1, 0, 0)];
        let idx = build_filter_index(&store);
        assert_eq!(idx.tails_of(1, 0), &[0]);
        assert_eq!(idx.heads_of(0, 0), &[1]);
    }

    #[test]
    fn profile_examples() {
        let mut store = TripleStore::default();
        for i in 0..6 {
            store.entities.intern(&format!("e{i}"));
        }
        for r in ["sym", "anti", "fwd", "back", "empty"] {
            store.relations.intern(r);
        }
        store.train = vec![
            Triple::new(0, 0, 1),
            Triple::new(1, 0, 0),
            Triple::new(2, 1, 3),
            Triple::new(3, 1, 4),
            Triple::new(0, 2, 5),
            Triple::new(1, 2, 4),
            Triple::new(5, 3, 0),
            Triple::new(4, 3, 1),
        ];
        let p = profile_relations(&store, Split::Train);
        assert_eq!(p.relations[0].kind, RelationKind::Symmetric);
        assert_eq!(p.relations[1].kind, RelationKind::AntiSymmetric);
        assert_eq!(p.relations[2].inverse_of, Some(3));
        assert_eq!(p.relations[3].inverse_of, Some(2));
        assert_eq!(p.relations[4].kind, RelationKind::GeneralAsymmetric);
        assert_eq!(p.relations[4].n_triples, 0);
    }

    #[test]
    fn synthetic_matches_declared_types() {
        let store = generate_synthetic_kg(&SyntheticSpec::mixed_200(), 7).unwrap();
        store.validate().unwrap();
        let total = store.all_triples().count();
        assert!((2900..=3100).contains(&total), "{total}");
        let p = profile_relations(&store, Split::Train);
        assert_eq!(p.relations[0].kind, RelationKind::Symmetric);
        assert_eq!(p.relations[1].kind, RelationKind::AntiSymmetric);
        assert_eq!(p.relations[2].inverse_of, Some(3));
        assert_eq!(p.relations[3].inverse_of, Some(2));
        let all: HashSet<_> = store.all_triples().collect();
        assert_eq!(all.len(), total, "splits must be disjoint");
        assert_eq!(store, generate_synthetic_kg(&SyntheticSpec::mixed_200(), 7).unwrap());
    }

    #[test]
    fn save_load_round_trip() {
        let store = generate_synthetic_kg(&SyntheticSpec::mixed_200(), 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        store.save(dir.path()).unwrap();
        assert_eq!(load_dataset(dir.path()).unwrap(), store);
    }
}
