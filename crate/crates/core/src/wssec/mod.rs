//! WS-Security signing of XOP packages, blocking and streaming, plus a
//! single-pass verifier.
//!
//! Every signed message carries one `#id` reference per SOAP header block
//! (other than the security header) and for the Body, digested over the
//! canonical optimized form (with `xop:Include` children), and one `cid:`
//! reference per attachment, digested over the canonical element with the
//! attachment inlined as base64. The streaming signer computes the latter
//! from the element's canonical tags and the raw bytes as they go out.

mod algorithms;
mod digest;
mod encrypt;
mod envelope;
mod keys;
mod sign;
mod signature;
mod verify;

use std::io;
use std::time::Instant;

pub use algorithms::{
    CanonicalizationAlgorithm, DigestAlgorithm, EncryptionAlgorithm, SignatureAlgorithm,
};
pub use digest::{digest_reference_streaming, ReferenceDigester};
pub use encrypt::{decrypt_signature, encrypt_signature, strict_placeholder};
pub use keys::KeyMaterial;
pub use sign::{sign_blocking, sign_blocking_with, sign_streaming, sign_streaming_with, SignOptions};
pub use signature::build_signed_info;
pub use verify::{verify, verify_with, ReferenceCheck, VerificationReport, VerifyOptions};

use crate::mime::MimeError;
use crate::xmlcore::XmlError;
use crate::xop::XopError;

pub const DS_NS: &str = "http://www.w3.org/2000/09/xmldsig#";
pub const XENC_NS: &str = "http://www.w3.org/2001/04/xmlenc#";
pub const WSSE_NS: &str =
    "http://docs.oasis-open.org/wss/2004/01/oasis-200401-wss-wssecurity-secext-1.0.xsd";
pub const WSU_NS: &str =
    "http://docs.oasis-open.org/wss/2004/01/oasis-200401-wss-wssecurity-utility-1.0.xsd";
pub const SOAP12_NS: &str = "http://www.w3.org/2003/05/soap-envelope";
pub const SOAP11_NS: &str = "http://schemas.xmlsoap.org/soap/envelope/";

/// Media type of the deferred signature part in lax mode.
pub const SIGNATURE_PART_TYPE: &str = "application/xml";
/// Media type of the deferred signature part in strict mode.
pub const CIPHERTEXT_PART_TYPE: &str = "application/octet-stream";

#[derive(Debug, thiserror::Error)]
pub enum WssecError {
    #[error("key error: {0}")]
    Key(String),
    #[error("sink error: {0}")]
    Sink(#[source] io::Error),
    #[error("source error: {0}")]
    Source(#[source] io::Error),
    #[error("invalid envelope: {0}")]
    InvalidEnvelope(String),
    #[error("reference {0} has no digest value")]
    MissingDigest(String),
    #[error("invalid manifest: {0}")]
    InvalidManifest(String),
    #[error("malformed message: {0}")]
    MalformedMessage(String),
    #[error("unresolved reference {0}")]
    UnresolvedReference(String),
    #[error("unsupported algorithm {0}")]
    UnsupportedAlgorithm(String),
    #[error("signature decryption failed")]
    DecryptFailed,
    #[error(transparent)]
    Xop(XopError),
}

impl From<XopError> for WssecError {
    fn from(e: XopError) -> Self {
        match e {
            XopError::Sink(e) | XopError::Mime(MimeError::Sink(e)) => WssecError::Sink(e),
            XopError::Source(e) | XopError::Mime(MimeError::BodyRead(e)) => WssecError::Source(e),
            other => WssecError::Xop(other),
        }
    }
}

impl From<MimeError> for WssecError {
    fn from(e: MimeError) -> Self {
        match e {
            MimeError::Sink(e) => WssecError::Sink(e),
            MimeError::BodyRead(e) => WssecError::Source(e),
            other => WssecError::MalformedMessage(other.to_string()),
        }
    }
}

impl From<XmlError> for WssecError {
    fn from(e: XmlError) -> Self {
        WssecError::MalformedMessage(e.to_string())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Unsigned,
    Blocking,
    StreamingLax,
    StreamingStrict,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Unsigned => "unsigned",
            Mode::Blocking => "blocking",
            Mode::StreamingLax => "streaming_lax",
            Mode::StreamingStrict => "streaming_strict",
        }
    }

    pub fn parse(s: &str) -> Option<Mode> {
        [Mode::Unsigned, Mode::Blocking, Mode::StreamingLax, Mode::StreamingStrict]
            .into_iter()
            .find(|m| m.as_str() == s)
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    EnvelopeElement,
    XopPart,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Reference {
    pub uri: String,
    pub digest_algorithm: DigestAlgorithm,
    digest_value: Vec<u8>,
    pub target_kind: TargetKind,
}

impl Reference {
    pub fn new(uri: impl Into<String>, digest_algorithm: DigestAlgorithm) -> Self {
        let uri = uri.into();
        let target_kind = if uri.starts_with("cid:") {
            TargetKind::XopPart
        } else {
            TargetKind::EnvelopeElement
        };
        Reference {
            uri,
            digest_algorithm,
            digest_value: Vec::new(),
            target_kind,
        }
    }

    pub fn digest_value(&self) -> &[u8] {
        &self.digest_value
    }

    pub fn set_digest(&mut self, value: Vec<u8>) -> Result<(), WssecError> {
        if value.len() != self.digest_algorithm.output_len() {
            return Err(WssecError::InvalidManifest(format!(
                "digest for {} has {} bytes, {} expects {}",
                self.uri,
                value.len(),
                self.digest_algorithm.uri(),
                self.digest_algorithm.output_len()
            )));
        }
        self.digest_value = value;
        Ok(())
    }

    pub fn with_digest(mut self, value: Vec<u8>) -> Result<Self, WssecError> {
        self.set_digest(value)?;
        Ok(self)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SignatureManifest {
    pub canonicalization_algorithm: CanonicalizationAlgorithm,
    pub signature_algorithm: SignatureAlgorithm,
    references: Vec<Reference>,
}

impl SignatureManifest {
    pub fn new(
        canonicalization_algorithm: CanonicalizationAlgorithm,
        signature_algorithm: SignatureAlgorithm,
        references: Vec<Reference>,
    ) -> Result<Self, WssecError> {
        if references.is_empty() {
            return Err(WssecError::InvalidManifest("no references".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for r in &references {
            if !seen.insert(r.uri.as_str()) {
                return Err(WssecError::InvalidManifest(format!("duplicate reference {}", r.uri)));
            }
        }
        Ok(SignatureManifest {
            canonicalization_algorithm,
            signature_algorithm,
            references,
        })
    }

    pub fn references(&self) -> &[Reference] {
        &self.references
    }
}

/// Wall-clock milestones of one signing session.
#[derive(Clone, Copy, Debug)]
pub struct SignTimeline {
    pub started: Instant,
    /// First byte handed to the sink.
    pub first_byte: Option<Instant>,
    /// Payload bytes digested when the first byte was written.
    pub digested_at_first_byte: u64,
    /// Every reference digest computed and the signature value produced.
    pub signed: Instant,
    pub finished: Instant,
}

/// Outcome of a signing session. The wire bytes went to the caller's sink.
#[derive(Clone, Debug)]
pub struct SignedMessage {
    pub mode: Mode,
    pub manifest: SignatureManifest,
    /// Package-level `Content-Type` for the transport.
    pub content_type: String,
    pub bytes_written: u64,
    pub payload_bytes: u64,
    pub timeline: SignTimeline,
}
