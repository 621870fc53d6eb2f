use std::io;

use sha2::{Digest, Sha256, Sha512};

use super::WssecError;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum DigestAlgorithm {
    #[default]
    Sha256,
    Sha512,
}

impl DigestAlgorithm {
    pub fn uri(self) -> &'static str {
        match self {
            DigestAlgorithm::Sha256 => "http://www.w3.org/2001/04/xmlenc#sha256",
            DigestAlgorithm::Sha512 => "http://www.w3.org/2001/04/xmlenc#sha512",
        }
    }

    pub fn from_uri(uri: &str) -> Result<Self, WssecError> {
        [DigestAlgorithm::Sha256, DigestAlgorithm::Sha512]
            .into_iter()
            .find(|a| a.uri() == uri)
            .ok_or_else(|| WssecError::UnsupportedAlgorithm(uri.to_owned()))
    }

    pub fn output_len(self) -> usize {
        match self {
            DigestAlgorithm::Sha256 => 32,
            DigestAlgorithm::Sha512 => 64,
        }
    }

    pub(crate) fn hasher(self) -> Hasher {
        match self {
            DigestAlgorithm::Sha256 => Hasher::Sha256(Sha256::new()),
            DigestAlgorithm::Sha512 => Hasher::Sha512(Sha512::new()),
        }
    }

    pub fn digest(self, bytes: &[u8]) -> Vec<u8> {
        let mut h = self.hasher();
        h.update(bytes);
        h.finalize()
    }
}

pub(crate) enum Hasher {
    Sha256(Sha256),
    Sha512(Sha512),
}

impl Hasher {
    pub(crate) fn update(&mut self, bytes: &[u8]) {
        match self {
            Hasher::Sha256(h) => h.update(bytes),
            Hasher::Sha512(h) => h.update(bytes),
        }
    }

    pub(crate) fn finalize(self) -> Vec<u8> {
        match self {
            Hasher::Sha256(h) => h.finalize().to_vec(),
            Hasher::Sha512(h) => h.finalize().to_vec(),
        }
    }
}

impl io::Write for Hasher {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.update(buf);
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

/// The restricted canonical form implemented by `xmlcore::canonicalize`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum CanonicalizationAlgorithm {
    #[default]
    Restricted,
}

impl CanonicalizationAlgorithm {
    pub fn uri(self) -> &'static str {
        "urn:streamsign:c14n:restricted"
    }

    pub fn from_uri(uri: &str) -> Result<Self, WssecError> {
        if uri == CanonicalizationAlgorithm::Restricted.uri() {
            Ok(CanonicalizationAlgorithm::Restricted)
        } else {
            Err(WssecError::UnsupportedAlgorithm(uri.to_owned()))
        }
    }
}

/// RSASSA-PKCS1-v1_5 with SHA-256.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum SignatureAlgorithm {
    #[default]
    RsaSha256,
}

impl SignatureAlgorithm {
    pub fn uri(self) -> &'static str {
        "http://www.w3.org/2001/04/xmldsig-more#rsa-sha256"
    }

    pub fn from_uri(uri: &str) -> Result<Self, WssecError> {
        if uri == SignatureAlgorithm::RsaSha256.uri() {
            Ok(SignatureAlgorithm::RsaSha256)
        } else {
            Err(WssecError::UnsupportedAlgorithm(uri.to_owned()))
        }
    }
}

/// AES-256-GCM with a 96-bit nonce prepended to the ciphertext.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum EncryptionAlgorithm {
    #[default]
    Aes256Gcm,
}

impl EncryptionAlgorithm {
    pub fn uri(self) -> &'static str {
        "http://www.w3.org/2009/xmlenc11#aes256-gcm"
    }

    pub fn from_uri(uri: &str) -> Result<Self, WssecError> {
        if uri == EncryptionAlgorithm::Aes256Gcm.uri() {
            Ok(EncryptionAlgorithm::Aes256Gcm)
        } else {
            Err(WssecError::UnsupportedAlgorithm(uri.to_owned()))
        }
    }
}
