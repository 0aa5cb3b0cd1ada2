//! On-disk dataset format.
//!
//! Each split is one little-endian binary file:
//!
//! ```text
//! magic "GIMD" | version u32 | T u32 | d u32 | class-count u32 |
//! sequence-count u32 | labels: u32 × sequence-count |
//! data: f32 × sequence-count·T·d   ([seq][t][feature])
//! ```
//!
//! A plain-text `manifest.txt` in the same directory lists the subtask files
//! in stream order together with the permutation seed and the original
//! classes of every subtask.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use crate::data::{SequenceBatch, Split, Subtask, SubtaskStream};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"GIMD";
const VERSION: u32 = 1;
pub const MANIFEST_NAME: &str = "manifest.txt";

fn push_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

/// Serializes one split to the GIMD byte layout.
pub fn encode_split(batch: &SequenceBatch) -> Vec<u8> {
    let mut buf = Vec::with_capacity(24 + batch.len() * 4 + batch.raw_data().len() * 4);
    buf.extend_from_slice(MAGIC);
    push_u32(&mut buf, VERSION);
    push_u32(&mut buf, batch.t_len() as u32);
    push_u32(&mut buf, batch.feat_dim() as u32);
    push_u32(&mut buf, batch.classes() as u32);
    push_u32(&mut buf, batch.len() as u32);
    for &label in batch.labels() {
        push_u32(&mut buf, label as u32);
    }
    for &v in batch.raw_data() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format("GIMD file truncated"));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f32(&mut self) -> Result<f32> {
        let b = self.take(4)?;
        Ok(f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Parses one split from GIMD bytes.
pub fn decode_split(bytes: &[u8]) -> Result<SequenceBatch> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::format("bad GIMD magic"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::format(format!("unsupported GIMD version {version}")));
    }
    let t_len = r.u32()? as usize;
    let feat_dim = r.u32()? as usize;
    let classes = r.u32()? as usize;
    let count = r.u32()? as usize;
    let mut labels = Vec::with_capacity(count);
    for _ in 0..count {
        labels.push(r.u32()? as usize);
    }
    let values = count * t_len * feat_dim;
    let mut data = Vec::with_capacity(values);
    for _ in 0..values {
        data.push(r.f32()? as f64);
    }
    if r.pos != bytes.len() {
        return Err(Error::format("trailing bytes in GIMD file"));
    }
    SequenceBatch::new(t_len, feat_dim, classes, data, labels)
        .map_err(|e| Error::format(format!("inconsistent GIMD contents: {e}")))
}

fn split_file_name(subtask: usize, split: Split) -> String {
    let tag = match split {
        Split::Train => "train",
        Split::Val => "val",
        Split::Test => "test",
    };
    format!("subtask{subtask}_{tag}.gimd")
}

/// Writes every split of the stream plus `manifest.txt` into `dir`.
pub fn write_stream(stream: &SubtaskStream, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut manifest = String::new();
    manifest.push_str(&format!(
        "permutation_seed={}\n",
        stream.permutation_seed()
    ));
    for st in stream.subtasks() {
        let classes: Vec<String> = st.original_classes.iter().map(|c| c.to_string()).collect();
        for (split, batch) in [
            (Split::Train, &st.train),
            (Split::Val, &st.val),
            (Split::Test, &st.test),
        ] {
            let name = split_file_name(st.id, split);
            fs::write(dir.join(&name), encode_split(batch))?;
            let tag = match split {
                Split::Train => "train",
                Split::Val => "val",
                Split::Test => "test",
            };
            manifest.push_str(&format!(
                "subtask={} split={tag} classes={} file={name}\n",
                st.id,
                classes.join(",")
            ));
        }
    }
    fs::write(dir.join(MANIFEST_NAME), manifest)?;
    Ok(())
}

/// Loads a stream previously written by [`write_stream`].
pub fn load_stream(dir: &Path) -> Result<SubtaskStream> {
    let manifest_path = dir.join(MANIFEST_NAME);
    let mut text = String::new();
    fs::File::open(&manifest_path)
        .map_err(|e| Error::format(format!("cannot open {}: {e}", manifest_path.display())))?
        .read_to_string(&mut text)?;

    let mut permutation_seed: Option<u64> = None;
    struct Pending {
        original_classes: Vec<usize>,
        train: Option<SequenceBatch>,
        val: Option<SequenceBatch>,
        test: Option<SequenceBatch>,
    }
    let mut pending: Vec<Pending> = Vec::new();

    for (line_no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(seed) = line.strip_prefix("permutation_seed=") {
            permutation_seed = Some(seed.parse().map_err(|_| {
                Error::format(format!("bad permutation_seed on line {}", line_no + 1))
            })?);
            continue;
        }
        let mut fields = std::collections::HashMap::new();
        for item in line.split_whitespace() {
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| Error::format(format!("bad manifest line {}", line_no + 1)))?;
            fields.insert(k, v);
        }
        let subtask: usize = fields
            .get("subtask")
            .ok_or_else(|| Error::format("manifest line missing subtask="))?
            .parse()
            .map_err(|_| Error::format("bad subtask index"))?;
        let split = match fields.get("split").copied() {
            Some("train") => Split::Train,
            Some("val") => Split::Val,
            Some("test") => Split::Test,
            other => return Err(Error::format(format!("bad split {other:?}"))),
        };
        let classes: Vec<usize> = fields
            .get("classes")
            .ok_or_else(|| Error::format("manifest line missing classes="))?
            .split(',')
            .map(|c| c.parse().map_err(|_| Error::format("bad class id")))
            .collect::<Result<_>>()?;
        let file = fields
            .get("file")
            .ok_or_else(|| Error::format("manifest line missing file="))?;
        let bytes = fs::read(dir.join(file))?;
        let batch = decode_split(&bytes)?;

        while pending.len() <= subtask {
            pending.push(Pending {
                original_classes: Vec::new(),
                train: None,
                val: None,
                test: None,
            });
        }
        let slot = &mut pending[subtask];
        slot.original_classes = classes;
        match split {
            Split::Train => slot.train = Some(batch),
            Split::Val => slot.val = Some(batch),
            Split::Test => slot.test = Some(batch),
        }
    }

    let permutation_seed =
        permutation_seed.ok_or_else(|| Error::format("manifest missing permutation_seed"))?;
    let mut subtasks = Vec::with_capacity(pending.len());
    for (id, p) in pending.into_iter().enumerate() {
        let missing = |what: &str| Error::format(format!("subtask {id} missing {what} split"));
        subtasks.push(Subtask {
            id,
            original_classes: p.original_classes,
            train: p.train.ok_or_else(|| missing("train"))?,
            val: p.val.ok_or_else(|| missing("val"))?,
            test: p.test.ok_or_else(|| missing("test"))?,
        });
    }
    SubtaskStream::new(subtasks, permutation_seed)
}

/// Directory containing a written stream, for manifests and logs.
pub fn manifest_path(dir: &Path) -> PathBuf {
    dir.join(MANIFEST_NAME)
}

/// Writes arbitrary bytes, mapping failures to IO errors (exit code 4).
pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut f = fs::File::create(path)?;
    f.write_all(bytes)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic::{build_synthetic_stream, SyntheticConfig};

    #[test]
    fn split_round_trip_is_lossless() {
        let cfg = SyntheticConfig::two_subtask_pm2(11);
        let stream = build_synthetic_stream(&cfg).unwrap();
        let split = &stream.subtask(0).train;
        let bytes = encode_split(split);
        let back = decode_split(&bytes).unwrap();
        // generation rounds through f32, so the f32 file is lossless
        assert_eq!(back.raw_data(), split.raw_data());
        assert_eq!(back.labels(), split.labels());
        assert_eq!(back.t_len(), split.t_len());
        assert_eq!(back.classes(), split.classes());
    }

    #[test]
    fn header_layout_is_pinned() {
        let batch = SequenceBatch::new(2, 1, 2, vec![0.5, 1.0, 0.25, 0.75], vec![0, 1]).unwrap();
        let bytes = encode_split(&batch);
        assert_eq!(&bytes[0..4], b"GIMD");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1); // version
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 2); // T
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 1); // d
        assert_eq!(u32::from_le_bytes(bytes[16..20].try_into().unwrap()), 2); // classes
        assert_eq!(u32::from_le_bytes(bytes[20..24].try_into().unwrap()), 2); // count
        assert_eq!(u32::from_le_bytes(bytes[24..28].try_into().unwrap()), 0); // label 0
        assert_eq!(u32::from_le_bytes(bytes[28..32].try_into().unwrap()), 1); // label 1
        assert_eq!(
            f32::from_le_bytes(bytes[32..36].try_into().unwrap()),
            0.5f32
        );
        assert_eq!(bytes.len(), 32 + 4 * 4);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let batch = SequenceBatch::new(1, 1, 1, vec![0.0], vec![0]).unwrap();
        let mut bytes = encode_split(&batch);
        bytes[0] = b'X';
        assert!(matches!(decode_split(&bytes), Err(Error::Format(_))));
        let bytes = encode_split(&batch);
        assert!(decode_split(&bytes[..bytes.len() - 1]).is_err());
        let mut bytes = encode_split(&batch);
        bytes.push(0);
        assert!(decode_split(&bytes).is_err());
    }

    #[test]
    fn stream_round_trip_via_directory() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SyntheticConfig::two_subtask_pm2(3);
        let stream = build_synthetic_stream(&cfg).unwrap();
        write_stream(&stream, dir.path()).unwrap();
        let loaded = load_stream(dir.path()).unwrap();
        assert_eq!(loaded.len(), stream.len());
        assert_eq!(loaded.permutation_seed(), stream.permutation_seed());
        for s in 0..stream.len() {
            assert_eq!(
                loaded.subtask(s).original_classes,
                stream.subtask(s).original_classes
            );
            assert_eq!(
                loaded.subtask(s).val.raw_data(),
                stream.subtask(s).val.raw_data()
            );
        }
    }
}
