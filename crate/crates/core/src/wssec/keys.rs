use std::fmt;

use rsa::pkcs8::{DecodePrivateKey, DecodePublicKey, EncodePrivateKey, EncodePublicKey, LineEnding};
use rsa::{Pkcs1v15Sign, RsaPrivateKey, RsaPublicKey};
use sha2::{Digest, Sha256};

use super::WssecError;
use crate::xop::{base64_decode, base64_encode};

pub const RSA_BITS: usize = 2048;
pub const WRAP_KEY_BYTES: usize = 32;

/// RSA key pair (or public half) plus the wrap key used in strict mode.
///
/// The key name placed in `ds:KeyInfo` defaults to the hex SHA-256 of the
/// DER-encoded public key.
#[derive(Clone)]
pub struct KeyMaterial {
    signing_key: Option<RsaPrivateKey>,
    verification_key: RsaPublicKey,
    wrap_key: Option<[u8; WRAP_KEY_BYTES]>,
    key_name: String,
}

impl fmt::Debug for KeyMaterial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyMaterial")
            .field("key_name", &self.key_name)
            .field("can_sign", &self.signing_key.is_some())
            .field("has_wrap_key", &self.wrap_key.is_some())
            .finish()
    }
}

fn key_err(e: impl fmt::Display) -> WssecError {
    WssecError::Key(e.to_string())
}

fn fingerprint(key: &RsaPublicKey) -> Result<String, WssecError> {
    let der = key.to_public_key_der().map_err(key_err)?;
    Ok(crate::hex(&Sha256::digest(der.as_bytes())))
}

impl KeyMaterial {
    /// Fresh RSA-2048 key pair and 256-bit wrap key.
    pub fn generate(rng: &mut (impl rand::CryptoRng + rand::RngCore)) -> Result<Self, WssecError> {
        let private = RsaPrivateKey::new(rng, RSA_BITS).map_err(key_err)?;
        let mut wrap = [0u8; WRAP_KEY_BYTES];
        rng.fill_bytes(&mut wrap);
        Self::from_private_key(private)?.with_wrap_key(wrap)
    }

    pub fn from_private_key(private: RsaPrivateKey) -> Result<Self, WssecError> {
        let public = private.to_public_key();
        let keys = KeyMaterial {
            key_name: fingerprint(&public)?,
            signing_key: Some(private),
            verification_key: public,
            wrap_key: None,
        };
        keys.self_test()?;
        Ok(keys)
    }

    pub fn from_public_key(public: RsaPublicKey) -> Result<Self, WssecError> {
        Ok(KeyMaterial {
            key_name: fingerprint(&public)?,
            signing_key: None,
            verification_key: public,
            wrap_key: None,
        })
    }

    /// PKCS#8 private key PEM. The public key is derived from it.
    pub fn from_private_pem(pem: &str) -> Result<Self, WssecError> {
        Self::from_private_key(RsaPrivateKey::from_pkcs8_pem(pem).map_err(key_err)?)
    }

    /// SubjectPublicKeyInfo PEM; the result can verify but not sign.
    pub fn from_public_pem(pem: &str) -> Result<Self, WssecError> {
        Self::from_public_key(RsaPublicKey::from_public_key_pem(pem).map_err(key_err)?)
    }

    /// Either kind of PEM, told apart by its label.
    pub fn from_pem(pem: &str) -> Result<Self, WssecError> {
        if pem.contains("PRIVATE KEY") {
            Self::from_private_pem(pem)
        } else {
            Self::from_public_pem(pem)
        }
    }

    pub fn with_wrap_key(mut self, key: [u8; WRAP_KEY_BYTES]) -> Result<Self, WssecError> {
        self.wrap_key = Some(key);
        Ok(self)
    }

    /// Wrap key given as one base64 line.
    pub fn with_wrap_key_text(self, text: &str) -> Result<Self, WssecError> {
        let bytes = base64_decode(text.trim()).map_err(key_err)?;
        let key: [u8; WRAP_KEY_BYTES] = bytes
            .try_into()
            .map_err(|_| WssecError::Key(format!("wrap key must be {WRAP_KEY_BYTES} bytes")))?;
        self.with_wrap_key(key)
    }

    pub fn with_key_name(mut self, name: impl Into<String>) -> Self {
        self.key_name = name.into();
        self
    }

    /// Drops the private key.
    pub fn verifier(&self) -> KeyMaterial {
        KeyMaterial {
            signing_key: None,
            ..self.clone()
        }
    }

    pub fn key_name(&self) -> &str {
        &self.key_name
    }

    pub fn can_sign(&self) -> bool {
        self.signing_key.is_some()
    }

    pub fn wrap_key(&self) -> Option<&[u8; WRAP_KEY_BYTES]> {
        self.wrap_key.as_ref()
    }

    pub fn private_pem(&self) -> Result<String, WssecError> {
        let key = self.signing_key.as_ref().ok_or_else(|| key_err("no private key"))?;
        Ok(key.to_pkcs8_pem(LineEnding::LF).map_err(key_err)?.to_string())
    }

    pub fn public_pem(&self) -> Result<String, WssecError> {
        self.verification_key.to_public_key_pem(LineEnding::LF).map_err(key_err)
    }

    pub fn wrap_key_text(&self) -> Option<String> {
        self.wrap_key.map(|k| base64_encode(&k))
    }

    fn self_test(&self) -> Result<(), WssecError> {
        let probe = b"streamsign key self-test";
        let sig = self.sign(probe)?;
        if !self.verify_signature(probe, &sig) {
            return Err(key_err("public key does not match private key"));
        }
        Ok(())
    }

    /// RSASSA-PKCS1-v1_5 / SHA-256 over `message`.
    pub(crate) fn sign(&self, message: &[u8]) -> Result<Vec<u8>, WssecError> {
        let key = self.signing_key.as_ref().ok_or_else(|| key_err("no private key"))?;
        key.sign(Pkcs1v15Sign::new::<Sha256>(), &Sha256::digest(message)).map_err(key_err)
    }

    pub(crate) fn verify_signature(&self, message: &[u8], signature: &[u8]) -> bool {
        self.verification_key
            .verify(Pkcs1v15Sign::new::<Sha256>(), &Sha256::digest(message), signature)
            .is_ok()
    }
}
