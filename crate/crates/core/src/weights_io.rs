//! SWPT: a small little-endian container for ordered, named `f32` tensors.
//!
//! ```text
//! "SWPT" | version: u32 = 1 | entry_count: u64 |
//!   per entry: path_len: u16 | path (UTF-8) | ndim: u8 | dims: ndim x u64 | payload: prod(dims) x f32
//! ```

use std::collections::HashMap;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"SWPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SwptError {
    #[error("bad magic: expected \"SWPT\", found {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported SWPT version {0} (this build reads version {VERSION})")]
    UnsupportedVersion(u32),
    #[error("truncated stream while reading {what} of entry #{index} ({path})")]
    Truncated {
        index: u64,
        path: String,
        what: &'static str,
    },
    #[error("duplicate tensor path {0:?}")]
    DuplicatePath(String),
    #[error("entry #{index}: path is not valid UTF-8")]
    InvalidPath { index: u64 },
    #[error("entry #{index} ({path}): invalid shape {dims:?}")]
    InvalidShape {
        index: u64,
        path: String,
        dims: Vec<u64>,
    },
    #[error("tensor path {0:?} is longer than 65535 bytes")]
    PathTooLong(String),
    #[error("tensor {path:?} has rank {rank}, at most 255 is supported")]
    RankTooLarge { path: String, rank: usize },
    #[error("{path}: {source}")]
    File {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Ordered map from parameter path to tensor.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NamedWeights {
    entries: Vec<(String, Tensor)>,
    index: HashMap<String, usize>,
}

impl NamedWeights {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends an entry; paths must be unique.
    pub fn insert(&mut self, path: impl Into<String>, tensor: Tensor) -> Result<(), SwptError> {
        let path = path.into();
        if self.index.contains_key(&path) {
            return Err(SwptError::DuplicatePath(path));
        }
        self.index.insert(path.clone(), self.entries.len());
        self.entries.push((path, tensor));
        Ok(())
    }

    pub fn get(&self, path: &str) -> Option<&Tensor> {
        self.index.get(path).map(|&i| &self.entries[i].1)
    }

    pub fn contains(&self, path: &str) -> bool {
        self.index.contains_key(path)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(p, t)| (p.as_str(), t))
    }

    pub fn paths(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(p, _)| p.as_str())
    }

    /// Total number of scalars across all entries.
    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    /// SHA-256 over the serialized form; equal checksums mean bit-identical contents and order.
    pub fn checksum(&self) -> String {
        let mut hasher = Sha256::new();
        let mut sink = HashWriter(&mut hasher);
        save(self, &mut sink).expect("hashing never fails");
        hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

struct HashWriter<'a>(&'a mut Sha256);

impl Write for HashWriter<'_> {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.0.update(buf);
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

/// Writes `weights` in SWPT format, returning the number of bytes written.
pub fn save(weights: &NamedWeights, sink: &mut impl Write) -> Result<u64, SwptError> {
    let mut written = 0u64;
    let mut put = |bytes: &[u8]| -> io::Result<()> {
        sink.write_all(bytes)?;
        written += bytes.len() as u64;
        Ok(())
    };
    put(MAGIC)?;
    put(&VERSION.to_le_bytes())?;
    put(&(weights.len() as u64).to_le_bytes())?;
    for (path, tensor) in weights.iter() {
        let path_len =
            u16::try_from(path.len()).map_err(|_| SwptError::PathTooLong(path.to_string()))?;
        let rank = u8::try_from(tensor.rank()).map_err(|_| SwptError::RankTooLarge {
            path: path.to_string(),
            rank: tensor.rank(),
        })?;
        put(&path_len.to_le_bytes())?;
        put(path.as_bytes())?;
        put(&[rank])?;
        for &d in tensor.shape() {
            put(&(d as u64).to_le_bytes())?;
        }
        let mut payload = Vec::with_capacity(tensor.len() * 4);
        for v in tensor.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        put(&payload)?;
    }
    Ok(written)
}

fn read_exact_or<R: Read>(
    src: &mut R,
    buf: &mut [u8],
    index: u64,
    path: &str,
    what: &'static str,
) -> Result<(), SwptError> {
    src.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => SwptError::Truncated {
            index,
            path: path.to_string(),
            what,
        },
        _ => SwptError::Io(e),
    })
}

/// Reads an SWPT stream. Payload buffers grow only as bytes actually arrive,
/// so a header that over-declares sizes fails as truncated instead of
/// allocating the declared amount up front.
pub fn load(source: &mut impl Read) -> Result<NamedWeights, SwptError> {
    let mut magic = [0u8; 4];
    read_exact_or(source, &mut magic, 0, "<header>", "magic")?;
    if &magic != MAGIC {
        return Err(SwptError::BadMagic(magic));
    }
    let mut word = [0u8; 4];
    read_exact_or(source, &mut word, 0, "<header>", "version")?;
    let version = u32::from_le_bytes(word);
    if version != VERSION {
        return Err(SwptError::UnsupportedVersion(version));
    }
    let mut long = [0u8; 8];
    read_exact_or(source, &mut long, 0, "<header>", "entry count")?;
    let count = u64::from_le_bytes(long);

    let mut weights = NamedWeights::new();
    for index in 0..count {
        let mut short = [0u8; 2];
        read_exact_or(source, &mut short, index, "<unnamed>", "path length")?;
        let mut raw = vec![0u8; u16::from_le_bytes(short) as usize];
        read_exact_or(source, &mut raw, index, "<unnamed>", "path")?;
        let path = String::from_utf8(raw).map_err(|_| SwptError::InvalidPath { index })?;

        let mut ndim = [0u8; 1];
        read_exact_or(source, &mut ndim, index, &path, "rank")?;
        let mut dims = Vec::with_capacity(ndim[0] as usize);
        for _ in 0..ndim[0] {
            read_exact_or(source, &mut long, index, &path, "dims")?;
            dims.push(u64::from_le_bytes(long));
        }
        let invalid = || SwptError::InvalidShape {
            index,
            path: path.clone(),
            dims: dims.clone(),
        };
        if dims.is_empty() || dims.contains(&0) {
            return Err(invalid());
        }
        let numel = dims
            .iter()
            .try_fold(1u64, |acc, &d| acc.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(invalid)?;
        let shape = dims
            .iter()
            .map(|&d| usize::try_from(d).map_err(|_| invalid()))
            .collect::<Result<Vec<_>, _>>()?;

        let mut payload = Vec::new();
        source.by_ref().take(numel).read_to_end(&mut payload)?;
        if payload.len() as u64 != numel {
            return Err(SwptError::Truncated {
                index,
                path,
                what: "payload",
            });
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let tensor = Tensor::new(shape, data).map_err(|_| invalid())?;
        weights.insert(path, tensor)?;
    }
    Ok(weights)
}

pub fn save_file(weights: &NamedWeights, path: impl AsRef<Path>) -> Result<u64, SwptError> {
    let path = path.as_ref();
    let ctx = |source| SwptError::File {
        path: path.display().to_string(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(ctx)?);
    let n = save(weights, &mut w).map_err(|e| match e {
        SwptError::Io(source) => ctx(source),
        other => other,
    })?;
    w.flush().map_err(ctx)?;
    Ok(n)
}

pub fn load_file(path: impl AsRef<Path>) -> Result<NamedWeights, SwptError> {
    let path = path.as_ref();
    let ctx = |source| SwptError::File {
        path: path.display().to_string(),
        source,
    };
    let mut r = BufReader::new(File::open(path).map_err(ctx)?);
    load(&mut r).map_err(|e| match e {
        SwptError::Io(source) => ctx(source),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample() -> NamedWeights {
        let mut w = NamedWeights::new();
        w.insert(
            "head.weight",
            Tensor::new(vec![2, 3], vec![1.0, -2.0, 3.5, 0.0, f32::MIN_POSITIVE, -0.0]).unwrap(),
        )
        .unwrap();
        w
    }

    #[test]
    fn empty_is_header_only() {
        let mut buf = Vec::new();
        let n = save(&NamedWeights::new(), &mut buf).unwrap();
        assert_eq!(n, 16);
        assert_eq!(buf.len(), 16);
        assert_eq!(&buf[..4], b"SWPT");
        assert_eq!(&buf[8..16], &0u64.to_le_bytes());
        assert!(load(&mut buf.as_slice()).unwrap().is_empty());
    }

    #[test]
    fn one_entry_layout() {
        let mut buf = Vec::new();
        let n = save(&sample(), &mut buf).unwrap();
        // header 16 + path_len 2 + "head.weight" 11 + ndim 1 + dims 16 + payload 24
        assert_eq!(n, 16 + 2 + 11 + 1 + 16 + 24);
        assert_eq!(buf.len() as u64, n);
        assert_eq!(&buf[16..18], &11u16.to_le_bytes());
        assert_eq!(&buf[29], &2u8);
    }

    #[test]
    fn roundtrip_fifty_random_tensors() {
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        let mut w = NamedWeights::new();
        for i in 0..50 {
            let rank = rng.random_range(1..4);
            let shape: Vec<usize> = (0..rank).map(|_| rng.random_range(1..6)).collect();
            let t = Tensor::from_fn(shape, |_| rng.random::<f32>() * 4.0 - 2.0).unwrap();
            w.insert(format!("layer.{}.p{}", 49 - i, i), t).unwrap();
        }
        let mut buf = Vec::new();
        save(&w, &mut buf).unwrap();
        let back = load(&mut buf.as_slice()).unwrap();
        let bits = |w: &NamedWeights| -> Vec<(String, Vec<usize>, Vec<u32>)> {
            w.iter()
                .map(|(p, t)| {
                    (
                        p.to_string(),
                        t.shape().to_vec(),
                        t.data().iter().map(|v| v.to_bits()).collect(),
                    )
                })
                .collect()
        };
        assert_eq!(bits(&w), bits(&back));
        let mut again = Vec::new();
        save(&back, &mut again).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn bad_magic() {
        let mut buf = Vec::new();
        save(&sample(), &mut buf).unwrap();
        buf[0] = b'X';
        let err = load(&mut buf.as_slice()).unwrap_err();
        assert!(matches!(err, SwptError::BadMagic(_)));
        assert!(err.to_string().contains("bad magic"));
    }

    #[test]
    fn unsupported_version() {
        let mut buf = Vec::new();
        save(&sample(), &mut buf).unwrap();
        buf[4] = 2;
        assert!(matches!(
            load(&mut buf.as_slice()),
            Err(SwptError::UnsupportedVersion(2))
        ));
    }

    #[test]
    fn truncated_payload_names_entry() {
        let mut buf = Vec::new();
        save(&sample(), &mut buf).unwrap();
        buf.truncate(buf.len() - 5);
        let err = load(&mut buf.as_slice()).unwrap_err();
        match &err {
            SwptError::Truncated { path, what, .. } => {
                assert_eq!(path, "head.weight");
                assert_eq!(*what, "payload");
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(err.to_string().contains("truncated"));
    }

    #[test]
    fn duplicate_path_rejected() {
        let mut buf = Vec::new();
        save(&sample(), &mut buf).unwrap();
        let entry = buf[16..].to_vec();
        buf[8..16].copy_from_slice(&2u64.to_le_bytes());
        buf.extend_from_slice(&entry);
        assert!(matches!(
            load(&mut buf.as_slice()),
            Err(SwptError::DuplicatePath(p)) if p == "head.weight"
        ));
        let mut w = sample();
        assert!(w.insert("head.weight", Tensor::zeros(vec![1]).unwrap()).is_err());
    }

    #[test]
    fn oversized_declaration_fails_without_allocating() {
        let mut buf = Vec::new();
        buf.extend_from_slice(b"SWPT");
        buf.extend_from_slice(&1u32.to_le_bytes());
        buf.extend_from_slice(&1u64.to_le_bytes());
        buf.extend_from_slice(&1u16.to_le_bytes());
        buf.push(b'x');
        buf.push(2);
        buf.extend_from_slice(&(1u64 << 20).to_le_bytes());
        buf.extend_from_slice(&(1u64 << 20).to_le_bytes());
        buf.extend_from_slice(&[0u8; 64]);
        assert!(matches!(
            load(&mut buf.as_slice()),
            Err(SwptError::Truncated { what: "payload", .. })
        ));
    }

    #[test]
    fn file_errors_carry_path() {
        let err = load_file("/nonexistent/dir/w.swpt").unwrap_err();
        assert!(err.to_string().contains("/nonexistent/dir/w.swpt"));
    }

    #[test]
    fn checksum_tracks_contents() {
        let a = sample();
        let mut b = sample();
        assert_eq!(a.checksum(), b.checksum());
        b.insert("x", Tensor::zeros(vec![1]).unwrap()).unwrap();
        assert_ne!(a.checksum(), b.checksum());
    }

    proptest! {
        #[test]
        fn load_save_identity_on_bytes(
            tensors in prop::collection::vec(
                (prop::collection::vec(1usize..4, 1..4), any::<u32>()), 0..8)
        ) {
            let mut w = NamedWeights::new();
            for (i, (shape, seed)) in tensors.into_iter().enumerate() {
                let mut s = seed;
                let t = Tensor::from_fn(shape, |_| {
                    s = s.wrapping_mul(1664525).wrapping_add(1013904223);
                    f32::from_bits(s & 0x7f7f_ffff)
                }).unwrap();
                w.insert(format!("t{i}"), t).unwrap();
            }
            let mut bytes = Vec::new();
            save(&w, &mut bytes).unwrap();
            let back = load(&mut bytes.as_slice()).unwrap();
            let mut again = Vec::new();
            save(&back, &mut again).unwrap();
            prop_assert_eq!(bytes, again);
        }
    }
}
