//! Triple datasets: vocabulary, TSV loading, the filter index used for
//! filtered ranking, and redundant-triple removal under background rules.

use std::collections::HashMap;
use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Stream};
use crate::rules::{BoundRule, Rule, RuleKind};

/// A `(head, relation, tail)` fact over dense integer ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple {
    pub head: usize,
    pub relation: usize,
    pub tail: usize,
}

impl Triple {
    pub const fn new(head: usize, relation: usize, tail: usize) -> Self {
        Triple {
            head,
            relation,
            tail,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct Interner {
    names: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Interner {
    fn get(&self, name: &str) -> Option<usize> {
        self.ids.get(name).copied()
    }

    fn intern(&mut self, name: &str) -> usize {
        if let Some(id) = self.ids.get(name) {
            return *id;
        }
        let id = self.names.len();
        self.names.push(name.to_owned());
        self.ids.insert(name.to_owned(), id);
        id
    }
}

/// Bidirectional mapping between entity/relation names and contiguous ids.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocabulary {
    entities: Interner,
    relations: Interner,
}

impl Vocabulary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn num_entities(&self) -> usize {
        self.entities.names.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.names.len()
    }

    pub fn entity_id(&self, name: &str) -> Option<usize> {
        self.entities.get(name)
    }

    pub fn relation_id(&self, name: &str) -> Option<usize> {
        self.relations.get(name)
    }

    pub fn entity_name(&self, id: usize) -> Option<&str> {
        self.entities.names.get(id).map(String::as_str)
    }

    pub fn relation_name(&self, id: usize) -> Option<&str> {
        self.relations.names.get(id).map(String::as_str)
    }

    pub fn entity_names(&self) -> &[String] {
        &self.entities.names
    }

    pub fn relation_names(&self) -> &[String] {
        &self.relations.names
    }

    /// Returns the id for `name`, assigning the next free id if unseen.
    pub fn intern_entity(&mut self, name: &str) -> usize {
        self.entities.intern(name)
    }

    pub fn intern_relation(&mut self, name: &str) -> usize {
        self.relations.intern(name)
    }

    /// Writes `id<TAB>name` lines for entities and relations to two files.
    pub fn export(&self, entities_path: &Path, relations_path: &Path) -> Result<()> {
        write_id_names(entities_path, &self.entities.names)?;
        write_id_names(relations_path, &self.relations.names)
    }

    /// Reads the two files written by [`Vocabulary::export`].
    pub fn import(entities_path: &Path, relations_path: &Path) -> Result<Self> {
        Ok(Vocabulary {
            entities: read_id_names(entities_path)?,
            relations: read_id_names(relations_path)?,
        })
    }

    fn resolve(&mut self, fields: [&str; 3], extend: bool) -> std::result::Result<Triple, Error> {
        let [h, r, t] = fields;
        if extend {
            return Ok(Triple::new(
                self.intern_entity(h),
                self.intern_relation(r),
                self.intern_entity(t),
            ));
        }
        let entity = |name: &str| {
            self.entity_id(name).ok_or_else(|| Error::UnknownName {
                kind: "entity",
                name: name.to_owned(),
            })
        };
        let head = entity(h)?;
        let tail = entity(t)?;
        let relation = self.relation_id(r).ok_or_else(|| Error::UnknownName {
            kind: "relation",
            name: r.to_owned(),
        })?;
        Ok(Triple::new(head, relation, tail))
    }
}

fn write_id_names(path: &Path, names: &[String]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for (id, name) in names.iter().enumerate() {
        writeln!(out, "{id}\t{name}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

fn read_id_names(path: &Path) -> Result<Interner> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut interner = Interner::default();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_owned(),
            line: idx + 1,
            message,
        };
        let (id, name) = line
            .split_once('\t')
            .ok_or_else(|| parse_err("expected `id<TAB>name`".into()))?;
        let id: usize = id
            .parse()
            .map_err(|_| parse_err(format!("invalid id `{id}`")))?;
        if id != interner.names.len() || interner.get(name).is_some() {
            return Err(parse_err(format!(
                "ids must be contiguous and names distinct (id {id}, name `{name}`)"
            )));
        }
        interner.intern(name);
    }
    Ok(interner)
}

/// Parses TSV triples from `reader`, collapsing duplicate lines.
///
/// Returns the triples in first-seen order and the number of duplicates dropped.
fn parse_triples<R: BufRead>(
    reader: R,
    path: &Path,
    vocab: &mut Vocabulary,
    extend: bool,
) -> Result<(Vec<Triple>, usize)> {
    let mut triples = Vec::new();
    let mut seen = HashSet::new();
    let mut duplicates = 0;
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let fields: [&str; 3] = fields.try_into().map_err(|f: Vec<&str>| Error::Parse {
            path: path.to_owned(),
            line: idx + 1,
            message: format!("expected 3 tab-separated fields, found {}", f.len()),
        })?;
        if fields.iter().any(|f| f.is_empty()) {
            return Err(Error::Parse {
                path: path.to_owned(),
                line: idx + 1,
                message: "empty field".into(),
            });
        }
        let triple = vocab.resolve(fields, extend)?;
        if seen.insert(triple) {
            triples.push(triple);
        } else {
            duplicates += 1;
        }
    }
    if duplicates > 0 {
        log::warn!(
            "{}: collapsed {duplicates} duplicate triples",
            path.display()
        );
    }
    Ok((triples, duplicates))
}

/// Loads a `head<TAB>relation<TAB>tail` file.
///
/// With `vocab = Some(..)` the vocabulary is fixed and unknown names are an
/// error; with `None` a fresh vocabulary is built in first-seen order.
pub fn load_triples(path: &Path, vocab: Option<&Vocabulary>) -> Result<(Vec<Triple>, Vocabulary)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let extend = vocab.is_none();
    let mut vocab = vocab.cloned().unwrap_or_default();
    let (triples, _) = parse_triples(BufReader::new(file), path, &mut vocab, extend)?;
    Ok((triples, vocab))
}

/// Like [`load_triples`] but grows `vocab` in place; returns the duplicate count too.
pub fn load_triples_extending(path: &Path, vocab: &mut Vocabulary) -> Result<(Vec<Triple>, usize)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_triples(BufReader::new(file), path, vocab, true)
}

pub fn write_triples(path: &Path, triples: &[Triple], vocab: &Vocabulary) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for t in triples {
        let name = |n: Option<&str>, what, id| {
            n.map(str::to_owned)
                .ok_or(Error::Index { what, id, size: 0 })
        };
        let h = name(vocab.entity_name(t.head), "entity", t.head)?;
        let r = name(vocab.relation_name(t.relation), "relation", t.relation)?;
        let tl = name(vocab.entity_name(t.tail), "entity", t.tail)?;
        writeln!(out, "{h}\t{r}\t{tl}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Train/valid/test splits plus a membership index over their union.
#[derive(Debug, Clone, Default)]
pub struct TripleSet {
    pub train: Vec<Triple>,
    pub valid: Vec<Triple>,
    pub test: Vec<Triple>,
    filter: HashSet<Triple>,
}

impl TripleSet {
    /// True if the triple appears in any split.
    pub fn contains(&self, triple: &Triple) -> bool {
        self.filter.contains(triple)
    }

    /// Number of distinct triples across all splits.
    pub fn filter_len(&self) -> usize {
        self.filter.len()
    }

    /// Number of split entries that duplicate a triple from another split.
    pub fn overlap_count(&self) -> usize {
        self.train.len() + self.valid.len() + self.test.len() - self.filter.len()
    }
}

pub fn build_filter_index(train: Vec<Triple>, valid: Vec<Triple>, test: Vec<Triple>) -> TripleSet {
    let filter = train
        .iter()
        .chain(valid.iter())
        .chain(test.iter())
        .copied()
        .collect();
    TripleSet {
        train,
        valid,
        test,
        filter,
    }
}

/// A dataset directory loaded under one vocabulary.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub vocab: Vocabulary,
    pub triples: TripleSet,
    /// Duplicate lines collapsed within train, valid and test.
    pub duplicates: [usize; 3],
}

pub const SPLITS: [&str; 3] = ["train", "valid", "test"];

/// Locates the file for `split` inside `dir`.
///
/// Accepts `train.txt`, `train.tsv`, or any `*-train.txt` / `*_train.txt`
/// (the original WordNet/Freebase distribution naming).
pub fn find_split_file(dir: &Path, split: &str) -> Result<PathBuf> {
    for candidate in [format!("{split}.txt"), format!("{split}.tsv")] {
        let p = dir.join(candidate);
        if p.is_file() {
            return Ok(p);
        }
    }
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut matches: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .map(|n| {
                    n.ends_with(&format!("-{split}.txt")) || n.ends_with(&format!("_{split}.txt"))
                })
                .unwrap_or(false)
        })
        .collect();
    matches.sort();
    matches.into_iter().next().ok_or_else(|| {
        Error::io(
            dir.join(format!("{split}.txt")),
            std::io::Error::new(std::io::ErrorKind::NotFound, "split file not found"),
        )
    })
}

impl Dataset {
    /// Loads train, valid and test from `dir`; ids are assigned in
    /// first-seen order over train, then valid, then test.
    pub fn load(dir: &Path) -> Result<Self> {
        let mut vocab = Vocabulary::new();
        let mut splits: [Vec<Triple>; 3] = Default::default();
        let mut duplicates = [0; 3];
        for (i, split) in SPLITS.iter().enumerate() {
            let path = find_split_file(dir, split)?;
            let (triples, dups) = load_triples_extending(&path, &mut vocab)?;
            splits[i] = triples;
            duplicates[i] = dups;
        }
        let [train, valid, test] = splits;
        let triples = build_filter_index(train, valid, test);
        let overlap = triples.overlap_count();
        if overlap > 0 {
            log::warn!(
                "{}: {overlap} triples appear in more than one split",
                dir.display()
            );
        }
        Ok(Dataset {
            vocab,
            triples,
            duplicates,
        })
    }
}

fn partners(triple: &Triple, rules: &[BoundRule], out: &mut Vec<Triple>) {
    out.clear();
    let Triple {
        head,
        relation,
        tail,
    } = *triple;
    for rule in rules {
        match rule.kind {
            RuleKind::Symmetric if rule.first == relation && head != tail => {
                out.push(Triple::new(tail, relation, head));
            }
            RuleKind::Inverse => {
                if rule.first == relation {
                    out.push(Triple::new(tail, rule.second, head));
                }
                if rule.second == relation && rule.first != rule.second {
                    out.push(Triple::new(tail, rule.first, head));
                }
            }
            RuleKind::Equivalence => {
                if rule.first == relation {
                    out.push(Triple::new(head, rule.second, tail));
                }
                if rule.second == relation {
                    out.push(Triple::new(head, rule.first, tail));
                }
            }
            _ => {}
        }
    }
}

/// Drops one member of every pair of training triples where one can be
/// inferred from the other under `rules`.
///
/// The member to drop is chosen by the `dedupe` stream of `seed`. The output
/// keeps the input order, so it is a subsequence of `train`.
pub fn remove_redundant(
    train: &[Triple],
    rules: &[Rule],
    vocab: &Vocabulary,
    seed: u64,
) -> Result<Vec<Triple>> {
    let bound = rules
        .iter()
        .map(|r| r.bind(vocab))
        .collect::<Result<Vec<_>>>()?;

    let mut position: HashMap<Triple, usize> = HashMap::with_capacity(train.len());
    for (i, t) in train.iter().enumerate() {
        position.entry(*t).or_insert(i);
    }

    let mut pairs = Vec::new();
    let mut scratch = Vec::new();
    for (i, t) in train.iter().enumerate() {
        partners(t, &bound, &mut scratch);
        for p in &scratch {
            if let Some(&j) = position.get(p) {
                if j > i {
                    pairs.push((i, j));
                }
            }
        }
    }

    let mut rng = rng::stream(seed, Stream::Dedupe);
    let mut removed = vec![false; train.len()];
    for (i, j) in pairs {
        if removed[i] || removed[j] {
            continue;
        }
        if rng.gen::<bool>() {
            removed[i] = true;
        } else {
            removed[j] = true;
        }
    }
    Ok(train
        .iter()
        .zip(removed)
        .filter(|(_, r)| !r)
        .map(|(t, _)| *t)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn parse(text: &str) -> Result<(Vec<Triple>, Vocabulary)> {
        let mut vocab = Vocabulary::new();
        parse_triples(Cursor::new(text), Path::new("mem"), &mut vocab, true)
            .map(|(t, _)| (t, vocab))
    }

    #[test]
    fn two_line_file() {
        let (triples, vocab) = parse("a\tr\tb\nb\tr\ta\n").unwrap();
        assert_eq!(triples, vec![Triple::new(0, 0, 1), Triple::new(1, 0, 0)]);
        assert_eq!(vocab.num_entities(), 2);
        assert_eq!(vocab.num_relations(), 1);
    }

    #[test]
    fn empty_input_leaves_vocab_unchanged() {
        let (triples, vocab) = parse("").unwrap();
        assert!(triples.is_empty());
        assert_eq!(vocab, Vocabulary::new());
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let err = parse("a\tr\tb\n\na\tr\n").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn fixed_vocab_rejects_unknown_names() {
        let (_, vocab) = parse("a\tr\tb\n").unwrap();
        let mut fixed = vocab.clone();
        let err = parse_triples(
            Cursor::new("a\tr\tc\n"),
            Path::new("mem"),
            &mut fixed,
            false,
        )
        .unwrap_err();
        assert!(matches!(err, Error::UnknownName { kind: "entity", .. }));
        assert_eq!(fixed, vocab);
    }

    #[test]
    fn duplicates_collapse() {
        let mut vocab = Vocabulary::new();
        let (triples, dups) = parse_triples(
            Cursor::new("a\tr\tb\r\na\tr\tb\nb\tr\ta\n"),
            Path::new("mem"),
            &mut vocab,
            true,
        )
        .unwrap();
        assert_eq!(triples.len(), 2);
        assert_eq!(dups, 1);
    }

    #[test]
    fn filter_index_membership() {
        let set = build_filter_index(
            vec![Triple::new(0, 0, 1)],
            vec![],
            vec![Triple::new(1, 0, 0)],
        );
        assert!(set.contains(&Triple::new(0, 0, 1)));
        assert!(set.contains(&Triple::new(1, 0, 0)));
        assert!(!set.contains(&Triple::new(0, 0, 0)));
    }

    #[test]
    fn filter_index_counts_shared_triple_once() {
        let t = Triple::new(0, 0, 1);
        let set = build_filter_index(vec![t], vec![t], vec![]);
        assert_eq!(set.filter_len(), 1);
        assert_eq!(set.overlap_count(), 1);
    }

    fn wordnet_like() -> Vocabulary {
        let mut v = Vocabulary::new();
        for e in ["a", "b", "c"] {
            v.intern_entity(e);
        }
        for r in ["hyponym", "hypernym", "similarTo", "partOf"] {
            v.intern_relation(r);
        }
        v
    }

    #[test]
    fn inverse_pair_keeps_one() {
        let vocab = wordnet_like();
        let rules = vec![Rule::inverse("hyponym", "hypernym")];
        let train = vec![Triple::new(0, 0, 1), Triple::new(1, 1, 0)];
        for seed in 0..8 {
            let out = remove_redundant(&train, &rules, &vocab, seed).unwrap();
            assert_eq!(out.len(), 1);
        }
    }

    #[test]
    fn symmetric_pair_keeps_one_but_not_self_loops() {
        let vocab = wordnet_like();
        let rules = vec![Rule::symmetric("similarTo")];
        let train = vec![
            Triple::new(0, 2, 1),
            Triple::new(1, 2, 0),
            Triple::new(2, 2, 2),
        ];
        let out = remove_redundant(&train, &rules, &vocab, 3).unwrap();
        assert_eq!(out.len(), 2);
        assert!(out.contains(&Triple::new(2, 2, 2)));
    }

    #[test]
    fn antisymmetric_rule_removes_nothing() {
        let vocab = wordnet_like();
        let rules = vec![Rule::antisymmetric("partOf")];
        let train = vec![Triple::new(0, 3, 1), Triple::new(1, 3, 0)];
        assert_eq!(remove_redundant(&train, &rules, &vocab, 0).unwrap(), train);
    }

    #[test]
    fn unknown_rule_relation_is_an_error() {
        let vocab = wordnet_like();
        let rules = vec![Rule::symmetric("nope")];
        assert!(matches!(
            remove_redundant(&[], &rules, &vocab, 0),
            Err(Error::UnknownName {
                kind: "relation",
                ..
            })
        ));
    }

    #[test]
    fn seed_changes_choice_not_count() {
        let vocab = wordnet_like();
        let rules = vec![Rule::inverse("hyponym", "hypernym")];
        let train: Vec<Triple> = (0..3)
            .flat_map(|h| (0..3).flat_map(move |t| [Triple::new(h, 0, t), Triple::new(t, 1, h)]))
            .collect();
        let sizes: HashSet<usize> = (0..16)
            .map(|s| remove_redundant(&train, &rules, &vocab, s).unwrap().len())
            .collect();
        assert_eq!(sizes.len(), 1);
        let outputs: HashSet<Vec<Triple>> = (0..16)
            .map(|s| remove_redundant(&train, &rules, &vocab, s).unwrap())
            .collect();
        assert!(outputs.len() > 1);
    }

    #[test]
    fn vocab_export_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let vocab = wordnet_like();
        let (e, r) = (dir.path().join("e.tsv"), dir.path().join("r.tsv"));
        vocab.export(&e, &r).unwrap();
        assert_eq!(Vocabulary::import(&e, &r).unwrap(), vocab);
    }
}
