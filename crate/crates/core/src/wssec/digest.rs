use std::io::{self, Read, Write};

use super::algorithms::Hasher;
use super::{DigestAlgorithm, WssecError};
use crate::xop::Base64Encoder;

/// Incremental digest of `prefix ++ base64(binary) ++ suffix`.
pub struct ReferenceDigester {
    encoder: Base64Encoder<Hasher>,
    binary_len: u64,
}

impl ReferenceDigester {
    pub fn new(algorithm: DigestAlgorithm, prefix: &[u8]) -> Self {
        let mut hasher = algorithm.hasher();
        hasher.update(prefix);
        ReferenceDigester {
            encoder: Base64Encoder::new(hasher),
            binary_len: 0,
        }
    }

    /// Feeds raw binary bytes.
    pub fn update(&mut self, binary: &[u8]) {
        self.binary_len += binary.len() as u64;
        self.encoder.write_all(binary).expect("hashing cannot fail");
    }

    pub fn binary_len(&self) -> u64 {
        self.binary_len
    }

    pub fn finish(self, suffix: &[u8]) -> Vec<u8> {
        let (mut hasher, _) = self.encoder.finish().expect("hashing cannot fail");
        hasher.update(suffix);
        hasher.finalize()
    }
}

/// Digest of `element_prefix ++ base64(binary) ++ element_suffix`, reading
/// `binary` once in chunks.
pub fn digest_reference_streaming(
    element_prefix: &[u8],
    binary: &mut dyn Read,
    element_suffix: &[u8],
    algorithm: DigestAlgorithm,
) -> Result<Vec<u8>, WssecError> {
    let mut digester = ReferenceDigester::new(algorithm, element_prefix);
    let mut buf = vec![0u8; crate::config::chunk_size()];
    loop {
        match binary.read(&mut buf) {
            Ok(0) => break,
            Ok(n) => digester.update(&buf[..n]),
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(WssecError::Source(e)),
        }
    }
    Ok(digester.finish(element_suffix))
}
