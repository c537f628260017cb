//! `CFSE` dataset files.
//!
//! ```text
//! "CFSE" | version u32 | n_samples u64 | feature_dim u32 | target_dim u32
//! | features f32[n * feature_dim] | targets f32[n * target_dim]
//! | manifest_len u64 | manifest (UTF-8 JSON)
//! ```
//! All integers and floats are little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{canonical_provenance, Dataset, Manifest};
use crate::{Error, Result};

pub const MAGIC: [u8; 4] = *b"CFSE";
pub const FORMAT_VERSION: u32 = 1;

pub fn write_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_dataset_to(ds, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn write_dataset_to<W: Write>(ds: &Dataset, w: &mut W) -> Result<()> {
    if ds.features.len() != ds.len() * ds.feature_dim || ds.targets.len() != ds.len() * ds.target_dim {
        return Err(Error::shape("dataset buffers disagree with sample count"));
    }
    w.write_all(&MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(ds.len() as u64).to_le_bytes())?;
    w.write_all(&(ds.feature_dim as u32).to_le_bytes())?;
    w.write_all(&(ds.target_dim as u32).to_le_bytes())?;
    write_f32s(w, &ds.features)?;
    write_f32s(w, &ds.targets)?;
    let manifest = serde_json::to_vec(&ds.manifest)?;
    w.write_all(&(manifest.len() as u64).to_le_bytes())?;
    w.write_all(&manifest)?;
    Ok(())
}

pub(crate) fn write_f32s<W: Write>(w: &mut W, values: &[f32]) -> Result<()> {
    let mut buf = Vec::with_capacity(values.len() * 4);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    read_dataset_from(&mut BufReader::new(File::open(path)?))
}

pub fn read_dataset_from<R: Read>(r: &mut R) -> Result<Dataset> {
    let mut magic = [0u8; 4];
    read_exact(r, &mut magic, "magic")?;
    if magic != MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}, expected \"CFSE\"")));
    }
    let version = read_u32(r, "version")?;
    if version != FORMAT_VERSION {
        return Err(Error::Version { found: version, expected: FORMAT_VERSION });
    }
    let n = read_u64(r, "sample count")? as usize;
    let feature_dim = read_u32(r, "feature dimension")? as usize;
    let target_dim = read_u32(r, "target dimension")? as usize;
    let features =
        read_f32s(r, n.checked_mul(feature_dim).ok_or_else(|| Error::Format("size overflow".into()))?, "features")?;
    let targets =
        read_f32s(r, n.checked_mul(target_dim).ok_or_else(|| Error::Format("size overflow".into()))?, "targets")?;
    let len = read_u64(r, "manifest length")? as usize;
    let mut json = vec![0u8; len];
    read_exact(r, &mut json, "manifest")?;
    let manifest: Manifest =
        serde_json::from_slice(&json).map_err(|e| Error::Format(format!("manifest is not valid JSON: {e}")))?;
    let computed = manifest.compute_hash();
    if computed != manifest.config_hash {
        return Err(Error::HashMismatch { stored: manifest.config_hash.clone(), computed });
    }
    if manifest.feature_dim() != feature_dim || manifest.setups != target_dim || manifest.sample_count() != n {
        return Err(Error::Format("header dimensions disagree with manifest".into()));
    }
    let provenance = canonical_provenance(&manifest);
    Ok(Dataset { manifest, feature_dim, target_dim, features, targets, provenance })
}

pub(crate) fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Truncated(format!("file ends inside {what}")),
        _ => Error::Io(e),
    })
}

pub(crate) fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_u64<R: Read>(r: &mut R, what: &str) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b, what)?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn read_f32s<R: Read>(r: &mut R, count: usize, what: &str) -> Result<Vec<f32>> {
    let mut bytes = vec![0u8; count * 4];
    read_exact(r, &mut bytes, what)?;
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::association::ServingMode;
    use crate::combining::CombinerKind;
    use crate::dataset::{Seeds, TargetMode};
    use crate::geometry::{CaseId, NetworkConfig};

    fn tiny() -> Dataset {
        let cfg = NetworkConfig { num_realizations: 2, num_setups: 3, ..NetworkConfig::base(4, 1, 2) };
        let manifest = Manifest::new(
            CaseId::Desk,
            &cfg,
            Seeds { master: 3 },
            TargetMode::SetupSummary,
            CombinerKind::LpMmse,
            ServingMode::Scalable,
        );
        let n = manifest.sample_count();
        Dataset {
            feature_dim: 6,
            target_dim: 3,
            features: (0..n * 6).map(|i| i as f32 * 0.25 - 7.0).collect(),
            targets: (0..n * 3).map(|i| (i as f32).sin()).collect(),
            provenance: canonical_provenance(&manifest),
            manifest,
        }
    }

    fn bytes(ds: &Dataset) -> Vec<u8> {
        let mut buf = Vec::new();
        write_dataset_to(ds, &mut buf).unwrap();
        buf
    }

    #[test]
    fn round_trip_is_exact() {
        let ds = tiny();
        let back = read_dataset_from(&mut bytes(&ds).as_slice()).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn bad_magic_and_version() {
        let mut b = bytes(&tiny());
        b[0] = b'X';
        assert!(matches!(read_dataset_from(&mut b.as_slice()), Err(Error::Format(_))));
        let mut b = bytes(&tiny());
        b[4] = 9;
        assert!(matches!(read_dataset_from(&mut b.as_slice()), Err(Error::Version { found: 9, .. })));
    }

    #[test]
    fn truncation_detected() {
        let b = bytes(&tiny());
        for cut in [2, 10, 30, b.len() - 5] {
            assert!(matches!(read_dataset_from(&mut &b[..cut]), Err(Error::Truncated(_))), "cut at {cut}");
        }
    }

    #[test]
    fn edited_manifest_fails_hash_check() {
        let b = bytes(&tiny());
        let needle = b"\"master\":3";
        let pos = b.windows(needle.len()).position(|w| w == needle).expect("seed in manifest");
        let mut edited = b.clone();
        edited[pos + 9] = b'4';
        assert!(matches!(read_dataset_from(&mut edited.as_slice()), Err(Error::HashMismatch { .. })));
    }
}
