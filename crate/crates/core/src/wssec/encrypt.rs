use aes_gcm::aead::{Aead, KeyInit};
use aes_gcm::{Aes256Gcm, Key, Nonce};
use rand::RngCore;

use super::signature::{expect_attributes, expect_children, include};
use super::{EncryptionAlgorithm, WssecError, XENC_NS};
use crate::xmlcore::{canonicalize, XmlName, XmlNode};

pub const NONCE_BYTES: usize = 12;
const ELEMENT_TYPE: &str = "http://www.w3.org/2001/04/xmlenc#Element";

fn xenc(local: &str) -> XmlNode {
    XmlNode::new(XmlName::new("xenc", local, XENC_NS).expect("valid name"))
}

/// `xenc:EncryptedData` whose `xenc:CipherValue` content is an `xop:Include`
/// of `cid`.
pub fn strict_placeholder(cid: &str) -> XmlNode {
    let local = |n: &str| XmlName::local(n).expect("valid name");
    xenc("EncryptedData")
        .with_attribute(local("Type"), ELEMENT_TYPE)
        .expect("unprefixed attribute")
        .with_child(
            xenc("EncryptionMethod")
                .with_attribute(local("Algorithm"), EncryptionAlgorithm::Aes256Gcm.uri())
                .expect("unprefixed attribute"),
        )
        .with_child(xenc("CipherData").with_child(xenc("CipherValue").with_child(include(cid))))
}

/// Encrypts the canonical form of `signature`. Returns the header
/// placeholder (pointing at `cid`) and `nonce ++ ciphertext ++ tag`.
pub fn encrypt_signature(
    signature: &XmlNode,
    wrap_key: &[u8; 32],
    cid: &str,
) -> Result<(XmlNode, Vec<u8>), WssecError> {
    let cipher = Aes256Gcm::new(Key::<Aes256Gcm>::from_slice(wrap_key));
    let mut nonce = [0u8; NONCE_BYTES];
    rand::rngs::OsRng.fill_bytes(&mut nonce);
    let sealed = cipher
        .encrypt(Nonce::from_slice(&nonce), canonicalize(signature).as_bytes())
        .map_err(|_| WssecError::Key("encryption failed".into()))?;
    let mut out = Vec::with_capacity(NONCE_BYTES + sealed.len());
    out.extend_from_slice(&nonce);
    out.extend_from_slice(&sealed);
    Ok((strict_placeholder(cid), out))
}

/// Inverse of [`encrypt_signature`]: the canonical signature bytes.
pub fn decrypt_signature(ciphertext: &[u8], wrap_key: &[u8; 32]) -> Result<Vec<u8>, WssecError> {
    if ciphertext.len() < NONCE_BYTES {
        return Err(WssecError::DecryptFailed);
    }
    let (nonce, sealed) = ciphertext.split_at(NONCE_BYTES);
    Aes256Gcm::new(Key::<Aes256Gcm>::from_slice(wrap_key))
        .decrypt(Nonce::from_slice(nonce), sealed)
        .map_err(|_| WssecError::DecryptFailed)
}

/// Checks the exact placeholder shape and returns the `xop:Include` element.
pub(crate) fn parse_strict_placeholder(node: &XmlNode) -> Result<&XmlNode, WssecError> {
    expect_attributes(node, &["Type"])?;
    if node.attribute("", "Type") != Some(ELEMENT_TYPE) {
        return Err(WssecError::MalformedMessage("unexpected EncryptedData Type".into()));
    }
    let parts = expect_children(node, XENC_NS, &["EncryptionMethod", "CipherData"])?;
    expect_attributes(parts[0], &["Algorithm"])?;
    expect_children(parts[0], XENC_NS, &[])?;
    EncryptionAlgorithm::from_uri(parts[0].attribute("", "Algorithm").expect("checked"))?;
    expect_attributes(parts[1], &[])?;
    let value = expect_children(parts[1], XENC_NS, &["CipherValue"])?[0];
    expect_attributes(value, &[])?;
    match value.elements().collect::<Vec<_>>().as_slice() {
        [inc] if value.children.len() == 1 => Ok(inc),
        _ => Err(WssecError::MalformedMessage("CipherValue must hold one xop:Include".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wssec::signature::ds;

    fn sig() -> XmlNode {
        ds("Signature").with_child(ds("SignatureValue").with_text("AAAA"))
    }

    #[test]
    fn round_trip_and_fresh_nonce() {
        let key = [7u8; 32];
        let (placeholder, c1) = encrypt_signature(&sig(), &key, "s@x").unwrap();
        let (_, c2) = encrypt_signature(&sig(), &key, "s@x").unwrap();
        assert_ne!(c1, c2);
        assert_eq!(decrypt_signature(&c1, &key).unwrap(), canonicalize(&sig()).into_vec());
        let inc = parse_strict_placeholder(&placeholder).unwrap();
        assert_eq!(inc.attribute("", "href"), Some("cid:s@x"));
    }

    #[test]
    fn tampering_fails_authentication() {
        let key = [7u8; 32];
        let (_, ct) = encrypt_signature(&sig(), &key, "s@x").unwrap();
        for i in [0, NONCE_BYTES, ct.len() - 1] {
            let mut bad = ct.clone();
            bad[i] ^= 1;
            assert!(matches!(decrypt_signature(&bad, &key), Err(WssecError::DecryptFailed)));
        }
        assert!(matches!(decrypt_signature(&ct, &[8u8; 32]), Err(WssecError::DecryptFailed)));
        assert!(matches!(decrypt_signature(&ct[..5], &key), Err(WssecError::DecryptFailed)));
    }
}
