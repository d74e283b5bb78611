//! On-disk checkpoints.
//!
//! A checkpoint is a directory holding `meta.json`, four raw little-endian
//! `f64` row-major matrices (`head.bin`, `tail.bin`, `rel_fwd.bin`,
//! `rel_inv.bin`) and `checksum.txt` with one `file<TAB>crc32-hex` line per
//! matrix. DistMult has no tail matrix; its `tail.bin` is empty.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Direction, ModelKind, ModelParams, Slot, TieEntry};
use crate::rules::TieSpec;

pub const FORMAT_MAGIC: &str = "kge-checkpoint";
pub const FORMAT_VERSION: u32 = 1;

const FILES: [&str; 4] = ["head.bin", "tail.bin", "rel_fwd.bin", "rel_inv.bin"];

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TieRecord {
    pub relation: usize,
    pub target: Direction,
    pub canonical_relation: usize,
    pub canonical_slot: Direction,
    pub sign: i8,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Meta {
    pub magic: String,
    pub format_version: u32,
    pub model_kind: ModelKind,
    pub dim: usize,
    pub num_entities: usize,
    pub num_relations: usize,
    pub tie_table: Vec<TieRecord>,
}

impl Meta {
    pub fn of(params: &ModelParams) -> Self {
        Meta {
            magic: FORMAT_MAGIC.into(),
            format_version: FORMAT_VERSION,
            model_kind: params.kind(),
            dim: params.dim(),
            num_entities: params.num_entities(),
            num_relations: params.num_relations(),
            tie_table: params
                .ties()
                .iter()
                .map(|t| TieRecord {
                    relation: t.target.relation,
                    target: t.target.dir,
                    canonical_relation: t.canonical.relation,
                    canonical_slot: t.canonical.dir,
                    sign: t.sign,
                })
                .collect(),
        }
    }

    fn expected_len(&self, file: &str) -> usize {
        match file {
            "head.bin" => self.num_entities * self.dim,
            "tail.bin" if self.model_kind.has_tail_matrix() => self.num_entities * self.dim,
            "tail.bin" => 0,
            _ => self.num_relations * self.dim,
        }
    }
}

fn to_bytes(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn from_bytes(bytes: &[u8]) -> Vec<f64> {
    bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect()
}

/// Reads only `meta.json` from a checkpoint directory.
pub fn load_meta(dir: &Path) -> Result<Meta> {
    let path = dir.join("meta.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("meta.json: {e}")))?;
    if value.get("magic").and_then(|m| m.as_str()) != Some(FORMAT_MAGIC) {
        return Err(Error::Format(
            "meta.json is missing the checkpoint magic string".into(),
        ));
    }
    let version = value
        .get("format_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::Format("meta.json has no format_version".into()))?;
    if version != u64::from(FORMAT_VERSION) {
        return Err(Error::Version {
            found: version as u32,
            expected: FORMAT_VERSION,
        });
    }
    serde_json::from_value(value).map_err(|e| Error::Format(format!("meta.json: {e}")))
}

pub fn save_params(params: &ModelParams, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let meta = Meta::of(params);
    let json = serde_json::to_string_pretty(&meta).expect("meta serialises");
    let meta_path = dir.join("meta.json");
    fs::write(&meta_path, json + "\n").map_err(|e| Error::io(&meta_path, e))?;

    let matrices = [
        params.head_matrix(),
        params.tail_matrix(),
        params.rel_fwd_matrix(),
        params.rel_inv_matrix(),
    ];
    let mut checksums = String::new();
    for (name, values) in FILES.iter().zip(matrices) {
        let bytes = to_bytes(values);
        checksums.push_str(&format!("{name}\t{:08x}\n", crc32fast::hash(&bytes)));
        let path = dir.join(name);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    }
    let sum_path = dir.join("checksum.txt");
    fs::write(&sum_path, checksums).map_err(|e| Error::io(&sum_path, e))
}

pub fn load_params(dir: &Path) -> Result<ModelParams> {
    let meta = load_meta(dir)?;
    if meta.dim == 0 {
        return Err(Error::Format("dim must be positive".into()));
    }

    let sum_path = dir.join("checksum.txt");
    let sums = fs::read_to_string(&sum_path).map_err(|e| Error::io(&sum_path, e))?;
    let recorded = |file: &str| {
        sums.lines()
            .filter_map(|l| l.split_once('\t'))
            .find(|(name, _)| *name == file)
            .map(|(_, sum)| sum.trim().to_ascii_lowercase())
            .ok_or_else(|| Error::Format(format!("checksum.txt has no entry for {file}")))
    };

    let mut matrices = Vec::with_capacity(4);
    for file in FILES {
        let path = dir.join(file);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let expected = meta.expected_len(file) * 8;
        if bytes.len() != expected {
            return Err(Error::Truncated {
                file: file.into(),
                expected,
                found: bytes.len(),
            });
        }
        let computed = format!("{:08x}", crc32fast::hash(&bytes));
        let recorded = recorded(file)?;
        if computed != recorded {
            return Err(Error::Checksum {
                file: file.into(),
                recorded,
                computed,
            });
        }
        matrices.push(from_bytes(&bytes));
    }
    let [head, tail, rel_fwd, rel_inv]: [Vec<f64>; 4] = matrices.try_into().expect("four matrices");

    // Tied rows are zero in storage and rewritten as zero by apply_ties.
    let mut params = ModelParams::from_raw(
        meta.model_kind,
        meta.dim,
        meta.num_entities,
        meta.num_relations,
        head,
        tail,
        rel_fwd,
        rel_inv,
    );
    let spec = TieSpec {
        entries: meta
            .tie_table
            .iter()
            .map(|t| {
                TieEntry::new(
                    Slot {
                        relation: t.relation,
                        dir: t.target,
                    },
                    Slot {
                        relation: t.canonical_relation,
                        dir: t.canonical_slot,
                    },
                    t.sign,
                )
            })
            .collect(),
    };
    params.apply_ties(&spec)?;
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rules::TieSpec;

    fn tied_params() -> ModelParams {
        let mut p = ModelParams::init(ModelKind::SimplE, 7, 3, 5, 9);
        p.apply_ties(&TieSpec {
            entries: vec![
                TieEntry::new(Slot::inverse(0), Slot::forward(0), -1),
                TieEntry::new(Slot::inverse(1), Slot::forward(2), 1),
                TieEntry::new(Slot::inverse(2), Slot::forward(1), 1),
            ],
        })
        .unwrap();
        p
    }

    #[test]
    fn roundtrip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p = tied_params();
        save_params(&p, dir.path()).unwrap();
        let q = load_params(dir.path()).unwrap();
        assert_eq!(p, q);
        let bits = |m: &[f64]| m.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(p.head_matrix()), bits(q.head_matrix()));
        assert_eq!(q.ties(), p.ties());
    }

    #[test]
    fn distmult_roundtrip_has_empty_tail() {
        let dir = tempfile::tempdir().unwrap();
        let p = ModelParams::init(ModelKind::DistMult, 4, 2, 3, 1);
        save_params(&p, dir.path()).unwrap();
        assert_eq!(fs::metadata(dir.path().join("tail.bin")).unwrap().len(), 0);
        assert_eq!(load_params(dir.path()).unwrap(), p);
    }

    #[test]
    fn wrong_magic() {
        let dir = tempfile::tempdir().unwrap();
        save_params(&tied_params(), dir.path()).unwrap();
        let path = dir.path().join("meta.json");
        let text = fs::read_to_string(&path)
            .unwrap()
            .replace(FORMAT_MAGIC, "something-else");
        fs::write(&path, text).unwrap();
        assert!(matches!(load_params(dir.path()), Err(Error::Format(_))));
    }

    #[test]
    fn wrong_version() {
        let dir = tempfile::tempdir().unwrap();
        save_params(&tied_params(), dir.path()).unwrap();
        let path = dir.path().join("meta.json");
        let text = fs::read_to_string(&path)
            .unwrap()
            .replace("\"format_version\": 1", "\"format_version\": 99");
        fs::write(&path, text).unwrap();
        assert!(matches!(
            load_params(dir.path()),
            Err(Error::Version { found: 99, .. })
        ));
    }

    #[test]
    fn truncated_file() {
        let dir = tempfile::tempdir().unwrap();
        save_params(&tied_params(), dir.path()).unwrap();
        let path = dir.path().join("rel_fwd.bin");
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(
            load_params(dir.path()),
            Err(Error::Truncated { .. })
        ));
    }

    #[test]
    fn corrupted_file() {
        let dir = tempfile::tempdir().unwrap();
        save_params(&tied_params(), dir.path()).unwrap();
        let path = dir.path().join("head.bin");
        let mut bytes = fs::read(&path).unwrap();
        bytes[5] ^= 0xff;
        fs::write(&path, bytes).unwrap();
        assert!(matches!(
            load_params(dir.path()),
            Err(Error::Checksum { .. })
        ));
    }

    #[test]
    fn expected_sizes_follow_shape() {
        let meta = Meta {
            magic: FORMAT_MAGIC.into(),
            format_version: FORMAT_VERSION,
            model_kind: ModelKind::SimplE,
            dim: 200,
            num_entities: 40_943,
            num_relations: 18,
            tie_table: vec![],
        };
        assert_eq!(meta.expected_len("head.bin"), 8_188_600);
        assert_eq!(meta.expected_len("rel_inv.bin"), 3_600);
    }
}
