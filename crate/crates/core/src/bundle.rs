//! Persistence of trained pipeline state.
//!
//! On-disk layout:
//!
//! ```text
//! magic "ANTB" | u32 format version | u64 payload length |
//! 32-byte SHA-256 of the payload | payload (JSON)
//! ```
//!
//! The JSON payload holds the schema, scaling statistics, fitted mixtures,
//! generator/discriminator parameters, and the seeds that produced them, so a
//! reloaded bundle reproduces identical samples under the same noise stream.

use crate::comparability::ComparabilityConfig;
use crate::data::{ScalingStats, Standardizer};
use crate::error::{Error, Result};
use crate::gan::{DiscriminatorNet, GanHyperparams, GeneratorNet};
use crate::gmm::ColumnGMM;
use crate::schema::FeatureSchema;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::io::{Read, Write};
use std::path::Path;

pub const BUNDLE_MAGIC: &[u8; 4] = b"ANTB";
pub const BUNDLE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactBundle {
    pub version: u32,
    pub schema: FeatureSchema,
    pub scaling: ScalingStats,
    pub standardizer: Standardizer,
    pub gmms: Vec<ColumnGMM>,
    pub generator: GeneratorNet,
    pub discriminator: DiscriminatorNet,
    pub comparability: ComparabilityConfig,
    pub gan: GanHyperparams,
    pub root_seed: u64,
    /// Creation time, seconds since the Unix epoch.
    pub created_unix: u64,
}

impl ArtifactBundle {
    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        let payload = serde_json::to_vec(self)
            .map_err(|e| Error::Format(format!("bundle serialize: {e}")))?;
        let digest = Sha256::digest(&payload);
        w.write_all(BUNDLE_MAGIC)?;
        w.write_all(&BUNDLE_FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(payload.len() as u64).to_le_bytes())?;
        w.write_all(&digest)?;
        w.write_all(&payload)?;
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != BUNDLE_MAGIC {
            return Err(Error::Format("bad bundle magic".into()));
        }
        let mut buf4 = [0u8; 4];
        r.read_exact(&mut buf4)?;
        let version = u32::from_le_bytes(buf4);
        if version != BUNDLE_FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported bundle version {version}")));
        }
        let mut buf8 = [0u8; 8];
        r.read_exact(&mut buf8)?;
        let len = u64::from_le_bytes(buf8) as usize;
        let mut expected = [0u8; 32];
        r.read_exact(&mut expected)?;
        let mut payload = vec![0u8; len];
        r.read_exact(&mut payload)?;
        let digest = Sha256::digest(&payload);
        if digest.as_slice() != expected {
            return Err(Error::Format("bundle checksum mismatch".into()));
        }
        serde_json::from_slice(&payload).map_err(|e| Error::Format(format!("bundle parse: {e}")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::experiment::write_atomic(path, |w| self.write(w))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read(std::io::BufReader::new(file))
    }

    pub fn now_unix() -> u64 {
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::encode_train;
    use crate::gmm::{fit_all_gmms, GmmFitOptions, SliceMap};

    fn tiny_bundle() -> ArtifactBundle {
        let schema = crate::synthetic::schema();
        let raw = crate::synthetic::generate(80, 0);
        let (ds, scaling) = encode_train(&raw, &schema);
        let standardizer = Standardizer::fit(&ds);
        let gmms = fit_all_gmms(&ds, &GmmFitOptions::default(), 0);
        let map = SliceMap::for_dataset(&ds, &gmms);
        let generator = GeneratorNet::new(map.clone(), 8, 0.2, 0);
        let discriminator = DiscriminatorNet::new(map.width, 1);
        ArtifactBundle {
            version: BUNDLE_FORMAT_VERSION,
            schema,
            scaling,
            standardizer,
            gmms,
            generator,
            discriminator,
            comparability: ComparabilityConfig::default(),
            gan: GanHyperparams::default(),
            root_seed: 7,
            created_unix: 1_700_000_000,
        }
    }

    #[test]
    fn roundtrip_preserves_everything_and_bytes() {
        let bundle = tiny_bundle();
        let mut bytes = Vec::new();
        bundle.write(&mut bytes).unwrap();
        let back = ArtifactBundle::read(bytes.as_slice()).unwrap();
        assert_eq!(bundle, back);
        let mut bytes2 = Vec::new();
        back.write(&mut bytes2).unwrap();
        assert_eq!(bytes, bytes2);
    }

    #[test]
    fn corruption_is_detected() {
        let bundle = tiny_bundle();
        let mut bytes = Vec::new();
        bundle.write(&mut bytes).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 0x01;
        assert!(matches!(ArtifactBundle::read(bytes.as_slice()), Err(Error::Format(_))));
        // Bad magic.
        bytes[0] = b'X';
        assert!(ArtifactBundle::read(bytes.as_slice()).is_err());
    }
}
