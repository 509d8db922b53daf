//! Sample batches on disk.
//!
//! Binary layout, all integers little-endian:
//!
//! ```text
//! magic        4 bytes  "EVGS"
//! version      u32      1 = no split tags, 2 = split tags present
//! count        u64      number of samples
//! flat_length  u64      values per sample
//! [version 2]  count bytes of split tags (0 none, 1 train, 2 test)
//! data         count * flat_length f32 values, sample-major
//! ```
//!
//! The CSV form holds one sample per line. An optional leading non-numeric
//! field (`train` / `test`) tags the split; blank lines and lines starting
//! with `#` are skipped.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"EVGS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Unspecified,
    Train,
    Test,
}

impl Split {
    fn code(self) -> u8 {
        match self {
            Split::Unspecified => 0,
            Split::Train => 1,
            Split::Test => 2,
        }
    }

    fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Split::Unspecified),
            1 => Ok(Split::Train),
            2 => Ok(Split::Test),
            other => Err(Error::Dataset(format!("unknown split tag {other}"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Unspecified => "",
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub flat_length: usize,
    pub samples: Vec<Vec<f64>>,
    pub splits: Vec<Split>,
}

impl Dataset {
    pub fn new(samples: Vec<Vec<f64>>) -> Result<Self> {
        let splits = vec![Split::Unspecified; samples.len()];
        Self::with_splits(samples, splits)
    }

    pub fn with_splits(samples: Vec<Vec<f64>>, splits: Vec<Split>) -> Result<Self> {
        let flat_length = samples.first().map_or(0, Vec::len);
        if let Some(i) = samples.iter().position(|s| s.len() != flat_length) {
            return Err(Error::Dataset(format!(
                "sample {i} has {} values, expected {flat_length}",
                samples[i].len()
            )));
        }
        if splits.len() != samples.len() {
            return Err(Error::Dataset("one split tag per sample required".into()));
        }
        Ok(Self {
            flat_length,
            samples,
            splits,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    fn has_splits(&self) -> bool {
        self.splits.iter().any(|&s| s != Split::Unspecified)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let tagged = self.has_splits();
        let mut out = Vec::with_capacity(24 + self.len() * (1 + 4 * self.flat_length));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(if tagged { 2u32 } else { 1u32 }).to_le_bytes());
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        out.extend_from_slice(&(self.flat_length as u64).to_le_bytes());
        if tagged {
            out.extend(self.splits.iter().map(|s| s.code()));
        }
        for v in self.samples.iter().flatten() {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let header = bytes
            .get(..24)
            .ok_or_else(|| Error::Dataset("truncated header".into()))?;
        if &header[..4] != MAGIC {
            return Err(Error::Dataset("bad magic, expected EVGS".into()));
        }
        let u32_at = |o: usize| u32::from_le_bytes(header[o..o + 4].try_into().unwrap());
        let u64_at = |o: usize| u64::from_le_bytes(header[o..o + 8].try_into().unwrap());
        let version = u32_at(4);
        let count = u64_at(8) as usize;
        let flat_length = u64_at(16) as usize;
        let tagged = match version {
            1 => false,
            2 => true,
            v => return Err(Error::Dataset(format!("unsupported version {v}"))),
        };
        let mut offset = 24;
        let splits = if tagged {
            let tags = bytes
                .get(offset..offset + count)
                .ok_or_else(|| Error::Dataset("truncated split tags".into()))?;
            offset += count;
            tags.iter().map(|&t| Split::from_code(t)).collect::<Result<Vec<_>>>()?
        } else {
            vec![Split::Unspecified; count]
        };
        let expected = count
            .checked_mul(flat_length)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::Dataset("header sizes overflow".into()))?;
        let body = &bytes[offset..];
        if body.len() != expected {
            return Err(Error::Dataset(format!(
                "expected {expected} data bytes for {count}x{flat_length}, found {}",
                body.len()
            )));
        }
        let values: Vec<f64> = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        let samples = if flat_length == 0 {
            vec![Vec::new(); count]
        } else {
            values.chunks(flat_length).map(<[f64]>::to_vec).collect()
        };
        Ok(Self {
            flat_length,
            samples,
            splits,
        })
    }

    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let mut samples = Vec::new();
        let mut splits = Vec::new();
        for (line, record) in reader.records().enumerate() {
            let record = record.map_err(|e| Error::Dataset(format!("csv: {e}")))?;
            let mut fields = record.iter().filter(|f| !f.is_empty()).peekable();
            let split = match fields.peek().copied() {
                Some("train") => Some(Split::Train),
                Some("test") => Some(Split::Test),
                _ => None,
            };
            if split.is_some() {
                fields.next();
            }
            let values = fields
                .map(|f| {
                    f.parse::<f64>().map_err(|_| {
                        Error::Dataset(format!("csv record {}: bad number `{f}`", line + 1))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            if values.is_empty() {
                continue;
            }
            samples.push(values);
            splits.push(split.unwrap_or(Split::Unspecified));
        }
        Self::with_splits(samples, splits)
    }

    /// Loads by extension: `.csv` as text, anything else as binary.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            Self::from_csv_str(&text)
        } else {
            let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
            Self::from_bytes(&bytes)
        }
    }

    /// One sample per line, prefixed by its split tag when any sample has one.
    pub fn to_csv_string(&self) -> String {
        let tagged = self.has_splits();
        let mut out = String::new();
        for (sample, split) in self.samples.iter().zip(&self.splits) {
            let mut fields: Vec<String> = sample.iter().map(|v| v.to_string()).collect();
            if tagged {
                fields.insert(0, split.as_str().to_string());
            }
            out.push_str(&fields.join(","));
            out.push('\n');
        }
        out
    }

    /// Saves by extension, mirroring [`Dataset::load`].
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
            self.to_csv_string().into_bytes()
        } else {
            self.to_bytes()
        };
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let plain = Dataset::new(vec![vec![1.0, 2.5], vec![-3.0, 0.1]]).unwrap();
        assert_eq!(Dataset::from_csv_str(&plain.to_csv_string()).unwrap(), plain);
        let tagged = Dataset::with_splits(vec![vec![1.0], vec![2.0]], vec![Split::Train, Split::Test]).unwrap();
        assert_eq!(Dataset::from_csv_str(&tagged.to_csv_string()).unwrap(), tagged);
    }

    #[test]
    fn binary_round_trip_with_and_without_tags() {
        let plain = Dataset::new(vec![vec![1.0, 2.5], vec![-3.0, 0.125]]).unwrap();
        assert_eq!(Dataset::from_bytes(&plain.to_bytes()).unwrap(), plain);
        assert_eq!(&plain.to_bytes()[4..8], &1u32.to_le_bytes());

        let tagged = Dataset::with_splits(
            vec![vec![1.0], vec![2.0], vec![3.0]],
            vec![Split::Train, Split::Test, Split::Unspecified],
        )
        .unwrap();
        let bytes = tagged.to_bytes();
        assert_eq!(&bytes[..4], b"EVGS");
        assert_eq!(&bytes[4..8], &2u32.to_le_bytes());
        assert_eq!(Dataset::from_bytes(&bytes).unwrap(), tagged);
    }

    #[test]
    fn corrupt_headers_are_rejected() {
        let bytes = Dataset::new(vec![vec![1.0, 2.0]]).unwrap().to_bytes();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Dataset::from_bytes(&bad).is_err());
        assert!(Dataset::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(Dataset::from_bytes(&bytes[..10]).is_err());
    }

    #[test]
    fn csv_with_optional_split_column() {
        let text = "# tiny\n1, 2, 3\ntrain,4,5,6\n\ntest, 7,8,9\n";
        let d = Dataset::from_csv_str(text).unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.samples[1], vec![4.0, 5.0, 6.0]);
        assert_eq!(d.splits, vec![Split::Unspecified, Split::Train, Split::Test]);
        assert!(Dataset::from_csv_str("1,2\n3\n").is_err());
        assert!(Dataset::from_csv_str("1,x\n").is_err());
    }
}
