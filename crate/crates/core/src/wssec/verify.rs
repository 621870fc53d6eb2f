use std::collections::{HashMap, HashSet};
use std::io::{self, Cursor, Read};

use super::encrypt::{decrypt_signature, parse_strict_placeholder};
use super::envelope::{analyze, include_cid};
use super::signature::{parse_signature, ParsedSignature};
use super::{
    DigestAlgorithm, KeyMaterial, Mode, ReferenceDigester, WssecError, CIPHERTEXT_PART_TYPE, DS_NS,
    SIGNATURE_PART_TYPE, WSSE_NS, XENC_NS,
};
use crate::mime::{Boundary, PackageReader, TransferEncoding};
use crate::xmlcore::{canonical_tags, canonicalize, parse, XmlNode};
use crate::xop::{XopPackage, XMIME_NS, XOP_NS};

/// Largest root part the verifier accepts.
pub const MAX_ROOT_BYTES: usize = 16 << 20;
/// Largest deferred signature part the verifier accepts.
pub const MAX_SIGNATURE_BYTES: usize = 1 << 20;

#[derive(Clone, Debug)]
pub struct VerifyOptions {
    /// Digest algorithm for attachments. Streaming messages announce their
    /// algorithms only in the final part, so the receiver fixes it up front.
    pub digest_algorithm: DigestAlgorithm,
    pub chunk_size: usize,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            digest_algorithm: DigestAlgorithm::default(),
            chunk_size: crate::config::chunk_size(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReferenceCheck {
    pub uri: String,
    pub computed_digest: Vec<u8>,
    pub declared_digest: Vec<u8>,
    pub matches: bool,
}

#[derive(Clone, Debug)]
pub struct VerificationReport {
    /// Every digest matches and the signature verifies under our key name.
    pub signature_valid: bool,
    pub per_reference: Vec<ReferenceCheck>,
    pub mode_detected: Mode,
    pub signature_value_valid: bool,
    pub key_name: Option<String>,
    pub payload_bytes: u64,
}

impl VerificationReport {
    pub fn failed_references(&self) -> impl Iterator<Item = &str> {
        self.per_reference.iter().filter(|r| !r.matches).map(|r| r.uri.as_str())
    }

    /// One-line JSON summary.
    pub fn to_json(&self) -> String {
        serde_json::json!({
            "valid": self.signature_valid,
            "mode": self.mode_detected,
            "signature_value_valid": self.signature_value_valid,
            "payload_bytes": self.payload_bytes,
            "references": self.per_reference.iter().map(|r| serde_json::json!({
                "uri": r.uri,
                "match": r.matches,
                "computed": crate::hex(&r.computed_digest),
                "declared": crate::hex(&r.declared_digest),
            })).collect::<Vec<_>>(),
            "failed": self.failed_references().collect::<Vec<_>>(),
        })
        .to_string()
    }
}

fn malformed(what: impl Into<String>) -> WssecError {
    WssecError::MalformedMessage(what.into())
}

/// Reads the first line (`--boundary CRLF`) byte by byte.
fn read_boundary_line(source: &mut dyn Read) -> Result<(Boundary, Vec<u8>), WssecError> {
    let mut line = Vec::with_capacity(72);
    let mut byte = [0u8; 1];
    while !line.ends_with(b"\r\n") {
        if line.len() > 2 + 60 + 2 {
            return Err(malformed("no multipart boundary on the first line"));
        }
        match source.read(&mut byte) {
            Ok(0) => return Err(malformed("empty or truncated message")),
            Ok(_) => line.push(byte[0]),
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(WssecError::Source(e)),
        }
    }
    let text = std::str::from_utf8(&line[..line.len() - 2])
        .ok()
        .and_then(|t| t.strip_prefix("--"))
        .ok_or_else(|| malformed("no multipart boundary on the first line"))?;
    let boundary = Boundary::new(text).map_err(|e| malformed(e.to_string()))?;
    Ok((boundary, line))
}

fn read_limited<R: Read>(reader: &mut PackageReader<R>, limit: usize) -> Result<Vec<u8>, WssecError> {
    let mut out = Vec::new();
    let mut buf = [0u8; 8192];
    loop {
        let n = reader.read_body(&mut buf)?;
        if n == 0 {
            return Ok(out);
        }
        if out.len() + n > limit {
            return Err(malformed("part exceeds size limit"));
        }
        out.extend_from_slice(&buf[..n]);
    }
}

/// Parses `bytes` and insists they are already in canonical form.
fn parse_canonical(bytes: &[u8]) -> Result<XmlNode, WssecError> {
    let node = parse(bytes)?;
    if canonicalize(&node).as_bytes() != bytes {
        return Err(malformed("XML part is not in canonical form"));
    }
    Ok(node)
}

enum Placeholder {
    Unsigned,
    Inline(ParsedSignature),
    Deferred { cid: String, strict: bool },
}

fn detect(security_child: Option<&XmlNode>) -> Result<Placeholder, WssecError> {
    let Some(child) = security_child else {
        return Ok(Placeholder::Unsigned);
    };
    if child.name.is(DS_NS, "Signature") {
        let inner: Vec<&XmlNode> = child.elements().collect();
        if let [inc] = inner.as_slice() {
            if inc.name.is(XOP_NS, "Include") {
                if child.children.len() != 1 || !child.attributes.is_empty() {
                    return Err(malformed("unexpected content around signature placeholder"));
                }
                return Ok(Placeholder::Deferred {
                    cid: include_cid(inc)?,
                    strict: false,
                });
            }
        }
        return Ok(Placeholder::Inline(parse_signature(child)?));
    }
    if child.name.is(XENC_NS, "EncryptedData") {
        let inc = parse_strict_placeholder(child)?;
        return Ok(Placeholder::Deferred {
            cid: include_cid(inc)?,
            strict: true,
        });
    }
    Err(malformed("unrecognized security header content"))
}

fn has_security_header(root: &XmlNode) -> bool {
    root.elements()
        .flat_map(|top| top.elements())
        .any(|e| e.name.is(WSSE_NS, "Security"))
}

pub fn verify(source: impl Read, keys: &KeyMaterial) -> Result<VerificationReport, WssecError> {
    verify_with(source, keys, &VerifyOptions::default())
}

struct Expected {
    prefix: Vec<u8>,
    suffix: Vec<u8>,
    content_type: Option<String>,
}

/// Single-pass verification. Attachments are digested as they are read and
/// never buffered; only the root part and the deferred signature part are
/// held in memory, each under a fixed size limit.
pub fn verify_with(
    mut source: impl Read,
    keys: &KeyMaterial,
    options: &VerifyOptions,
) -> Result<VerificationReport, WssecError> {
    let (boundary, first_line) = read_boundary_line(&mut source)?;
    let mut reader = PackageReader::new(Cursor::new(first_line).chain(source), &boundary, options.chunk_size)
        .strict(true);

    let root_part = reader.next_part()?.ok_or_else(|| malformed("no root part"))?;
    if root_part.raw_headers != XopPackage::root_headers().to_wire() {
        return Err(malformed("unexpected root part headers"));
    }
    let root_bytes = read_limited(&mut reader, MAX_ROOT_BYTES)?;
    let root = parse_canonical(&root_bytes)?;
    drop(root_bytes);

    if !has_security_header(&root) {
        let mut payload_bytes = 0;
        while let Some(part) = reader.next_part()? {
            if part.raw_headers != part.headers.to_wire() {
                return Err(malformed("non-canonical part headers"));
            }
            payload_bytes += reader.skip_body()?;
        }
        return Ok(VerificationReport {
            signature_valid: false,
            per_reference: Vec::new(),
            mode_detected: Mode::Unsigned,
            signature_value_valid: false,
            key_name: None,
            payload_bytes,
        });
    }

    let analysis = analyze(&root)?;
    let placeholder = detect(analysis.security_child)?;
    let mut expected: HashMap<String, Expected> = HashMap::new();
    for (cid, element) in &analysis.attachments {
        let (prefix, suffix) = canonical_tags(element);
        let content_type = element.attribute(XMIME_NS, "contentType").map(str::to_owned);
        expected.insert(cid.clone(), Expected { prefix, suffix, content_type });
    }
    let (deferred_cid, strict) = match &placeholder {
        Placeholder::Deferred { cid, strict } => (Some(cid.as_str()), *strict),
        _ => (None, false),
    };
    if deferred_cid.is_some_and(|c| expected.contains_key(c)) {
        return Err(malformed("signature part referenced from the envelope"));
    }

    let alg = options.digest_algorithm;
    let mut computed: HashMap<String, Vec<u8>> = HashMap::new();
    let mut deferred: Option<Vec<u8>> = None;
    let mut payload_bytes = 0u64;
    while let Some(part) = reader.next_part()? {
        let headers = &part.headers;
        if part.raw_headers != headers.to_wire() || headers.content_transfer_encoding != TransferEncoding::Binary {
            return Err(malformed("non-canonical part headers"));
        }
        if deferred.is_some() {
            return Err(malformed("part after the signature part"));
        }
        let cid = headers.content_id.as_str();
        if Some(cid) == deferred_cid {
            let want = if strict { CIPHERTEXT_PART_TYPE } else { SIGNATURE_PART_TYPE };
            if headers.content_type != want {
                return Err(malformed("unexpected signature part type"));
            }
            deferred = Some(read_limited(&mut reader, MAX_SIGNATURE_BYTES)?);
            continue;
        }
        let exp = expected
            .get(cid)
            .ok_or_else(|| malformed(format!("part {cid} is not referenced from the envelope")))?;
        if computed.contains_key(cid) {
            return Err(malformed(format!("duplicate part {cid}")));
        }
        if exp.content_type.as_deref() != Some(headers.content_type.as_str()) {
            return Err(malformed(format!("content type of {cid} does not match xmime:contentType")));
        }
        let mut digester = ReferenceDigester::new(alg, &exp.prefix);
        payload_bytes += reader.for_each_body_chunk(|chunk| digester.update(chunk))?;
        let digest = digester.finish(&exp.suffix);
        computed.insert(cid.to_owned(), digest);
    }
    if let Some((cid, _)) = expected.iter().find(|(cid, _)| !computed.contains_key(*cid)) {
        return Err(WssecError::UnresolvedReference(format!("cid:{cid}")));
    }

    let (signature, mode) = match placeholder {
        Placeholder::Unsigned => unreachable!("security header present"),
        Placeholder::Inline(sig) => (sig, Mode::Blocking),
        Placeholder::Deferred { strict, .. } => {
            let bytes = deferred.ok_or_else(|| malformed("signature part missing"))?;
            let plaintext = if strict {
                let key = keys
                    .wrap_key()
                    .ok_or_else(|| WssecError::Key("strict message needs a wrap key".into()))?;
                decrypt_signature(&bytes, key)?
            } else {
                bytes
            };
            let node = parse_canonical(&plaintext)?;
            let mode = if strict { Mode::StreamingStrict } else { Mode::StreamingLax };
            (parse_signature(&node)?, mode)
        }
    };

    let mut targets: HashMap<String, &XmlNode> = analysis.id_targets.iter().map(|(u, n)| (u.clone(), *n)).collect();
    let mut covered = HashSet::new();
    let mut per_reference = Vec::new();
    for r in signature.manifest.references() {
        let computed_digest = if let Some(cid) = r.uri.strip_prefix("cid:") {
            let digest = computed
                .get(cid)
                .ok_or_else(|| WssecError::UnresolvedReference(r.uri.clone()))?;
            if r.digest_algorithm != alg {
                return Err(WssecError::UnsupportedAlgorithm(format!(
                    "{} for attachments (receiver expects {})",
                    r.digest_algorithm.uri(),
                    alg.uri()
                )));
            }
            digest.clone()
        } else {
            let node = targets
                .remove(&r.uri)
                .ok_or_else(|| WssecError::UnresolvedReference(r.uri.clone()))?;
            r.digest_algorithm.digest(&canonicalize(node))
        };
        covered.insert(r.uri.clone());
        per_reference.push(ReferenceCheck {
            uri: r.uri.clone(),
            matches: computed_digest == r.digest_value(),
            declared_digest: r.digest_value().to_vec(),
            computed_digest,
        });
    }
    if let Some(uri) = targets.keys().next() {
        return Err(malformed(format!("{uri} is not covered by the signature")));
    }
    if let Some(cid) = computed.keys().find(|c| !covered.contains(&format!("cid:{c}"))) {
        return Err(malformed(format!("cid:{cid} is not covered by the signature")));
    }

    let signature_value_valid = keys.verify_signature(&canonicalize(&signature.signed_info), &signature.signature_value);
    let key_ok = signature.key_name == keys.key_name();
    Ok(VerificationReport {
        signature_valid: signature_value_valid && key_ok && per_reference.iter().all(|r| r.matches),
        per_reference,
        mode_detected: mode,
        signature_value_valid,
        key_name: Some(signature.key_name),
        payload_bytes,
    })
}
