use std::io::{self, Cursor, Write};
use std::time::Instant;

use rand::rngs::OsRng;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::encrypt::encrypt_signature;
use super::envelope::{id_targets, prepare, security_mut};
use super::signature::{lax_placeholder, signature_element};
use super::{
    build_signed_info, strict_placeholder, DigestAlgorithm, KeyMaterial, Mode, Reference,
    ReferenceDigester, SignTimeline, SignatureManifest, SignedMessage, WssecError,
    CIPHERTEXT_PART_TYPE, SIGNATURE_PART_TYPE,
};
use crate::mime::{generate_boundary, package_content_type, Boundary, MimeHeaders, PackageWriter};
use crate::xmlcore::{canonical_tags, canonicalize, Child, XmlNode};
use crate::xop::{
    extract_using, node_at, node_at_mut, reconstitute, unique_content_ids, Base64DecodeReader,
    BinaryContent, ElementPath, XopPackage, ROOT_CONTENT_ID,
};

#[derive(Clone, Debug)]
pub struct SignOptions {
    pub digest_algorithm: DigestAlgorithm,
    pub chunk_size: usize,
    /// Fixed multipart boundary, so a transport can announce the package
    /// Content-Type before signing starts. Random when `None`.
    pub boundary: Option<Boundary>,
    /// Seed for Content-ID generation. Two sessions with the same seed and
    /// designations produce the same Content-IDs, hence comparable digests.
    pub content_id_seed: Option<u64>,
}

impl SignOptions {
    fn rng(&self) -> Box<dyn RngCore> {
        match self.content_id_seed {
            Some(seed) => Box::new(ChaCha20Rng::seed_from_u64(seed)),
            None => Box::new(OsRng),
        }
    }
}

impl Default for SignOptions {
    fn default() -> Self {
        SignOptions {
            digest_algorithm: DigestAlgorithm::default(),
            chunk_size: crate::config::chunk_size(),
            boundary: None,
            content_id_seed: None,
        }
    }
}

/// Sink wrapper that remembers when the first byte went out.
struct FirstByte<'a> {
    inner: &'a mut dyn Write,
    first: Option<Instant>,
}

impl Write for FirstByte<'_> {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        if self.first.is_none() && !buf.is_empty() {
            self.first = Some(Instant::now());
        }
        self.inner.write(buf)
    }

    fn flush(&mut self) -> io::Result<()> {
        self.inner.flush()
    }
}

fn routes(root: &XmlNode, paths: &[ElementPath]) -> Vec<Vec<usize>> {
    paths
        .iter()
        .map(|p| p.resolve(root).expect("path resolved during extraction"))
        .collect()
}

fn envelope_references(root: &XmlNode, algorithm: DigestAlgorithm) -> Result<Vec<Reference>, WssecError> {
    id_targets(root)
        .into_iter()
        .map(|(uri, node)| Reference::new(uri, algorithm).with_digest(algorithm.digest(&canonicalize(node))))
        .collect()
}

fn signature(manifest: &SignatureManifest, keys: &KeyMaterial) -> Result<XmlNode, WssecError> {
    let signed_info = build_signed_info(manifest)?;
    let value = keys.sign(&canonicalize(&signed_info))?;
    Ok(signature_element(signed_info, &value, keys.key_name()))
}

fn check_keys(keys: &KeyMaterial, strict: bool) -> Result<(), WssecError> {
    if !keys.can_sign() {
        return Err(WssecError::Key("no private key".into()));
    }
    if strict && keys.wrap_key().is_none() {
        return Err(WssecError::Key("strict mode needs a wrap key".into()));
    }
    Ok(())
}

pub fn sign_blocking(
    envelope: XmlNode,
    binaries: Vec<(ElementPath, BinaryContent)>,
    keys: &KeyMaterial,
    sink: &mut dyn Write,
) -> Result<SignedMessage, WssecError> {
    sign_blocking_with(envelope, binaries, keys, &SignOptions::default(), sink)
}

/// Signs the fully reconstituted message, then packages and writes it.
/// Nothing reaches `sink` before the signature value exists.
pub fn sign_blocking_with(
    envelope: XmlNode,
    binaries: Vec<(ElementPath, BinaryContent)>,
    keys: &KeyMaterial,
    options: &SignOptions,
    sink: &mut dyn Write,
) -> Result<SignedMessage, WssecError> {
    let started = Instant::now();
    check_keys(keys, false)?;
    let alg = options.digest_algorithm;
    let paths: Vec<ElementPath> = binaries.iter().map(|(p, _)| p.clone()).collect();
    let media_types: Vec<String> = binaries.iter().map(|(_, b)| b.media_type.clone()).collect();
    let designations: Vec<(&ElementPath, &str)> =
        paths.iter().zip(&media_types).map(|(p, m)| (p, m.as_str())).collect();

    let prepared = prepare(envelope, &designations, None)?;
    let mut rng = options.rng();
    let cids = unique_content_ids(binaries.len(), &mut *rng);
    let boundary = options.boundary.clone().unwrap_or_else(|| generate_boundary(&mut *rng));

    // The optimized form fixes the Content-IDs that the envelope digests cover.
    let optimized = extract_using(prepared, binaries, cids.clone(), boundary.clone())?;
    let mut references = envelope_references(&optimized.root, alg)?;
    let routes = routes(&optimized.root, &paths);

    let mut full = reconstitute(optimized).map_err(WssecError::from)?;
    for (route, cid) in routes.iter().zip(&cids) {
        let node = node_at(&full, route);
        let canonical = canonicalize(node);
        references.push(Reference::new(format!("cid:{cid}"), alg).with_digest(alg.digest(&canonical))?);
    }
    let manifest = SignatureManifest::new(Default::default(), Default::default(), references)?;
    let sig = signature(&manifest, keys)?;
    let signed = Instant::now();
    security_mut(&mut full).children.push(Child::Element(sig));

    let mut payload_bytes = 0u64;
    let mut inline = Vec::with_capacity(routes.len());
    for (route, media_type) in routes.iter().zip(media_types) {
        let node = node_at_mut(&mut full, route);
        let text = match std::mem::take(&mut node.children).pop() {
            Some(Child::Text(t)) => t,
            _ => String::new(),
        };
        payload_bytes += decoded_len(&text);
        let reader = Base64DecodeReader::new(Cursor::new(text.into_bytes()));
        inline.push(BinaryContent::new(reader, media_type));
    }
    let package = extract_using(full, paths.into_iter().zip(inline).collect(), cids, boundary.clone())?;

    let mut tracked = FirstByte { inner: sink, first: None };
    let bytes_written = package.write_to(&mut tracked, options.chunk_size)?;
    Ok(SignedMessage {
        mode: Mode::Blocking,
        manifest,
        content_type: package_content_type(&boundary, ROOT_CONTENT_ID),
        bytes_written,
        payload_bytes,
        timeline: SignTimeline {
            started,
            first_byte: tracked.first,
            digested_at_first_byte: payload_bytes,
            signed,
            finished: Instant::now(),
        },
    })
}

fn decoded_len(text: &str) -> u64 {
    let pad = text.bytes().rev().take_while(|&b| b == b'=').count() as u64;
    (text.len() as u64 / 4) * 3 - pad
}

pub fn sign_streaming(
    envelope: XmlNode,
    binaries: Vec<(ElementPath, BinaryContent)>,
    keys: &KeyMaterial,
    strict: bool,
    sink: &mut dyn Write,
) -> Result<SignedMessage, WssecError> {
    sign_streaming_with(envelope, binaries, keys, strict, &SignOptions::default(), sink)
}

/// Writes the envelope at once with a placeholder for the signature,
/// digests each attachment while it is written, and appends the signature
/// (encrypted when `strict`) as the final part.
pub fn sign_streaming_with(
    envelope: XmlNode,
    binaries: Vec<(ElementPath, BinaryContent)>,
    keys: &KeyMaterial,
    strict: bool,
    options: &SignOptions,
    sink: &mut dyn Write,
) -> Result<SignedMessage, WssecError> {
    let started = Instant::now();
    check_keys(keys, strict)?;
    let alg = options.digest_algorithm;
    let paths: Vec<ElementPath> = binaries.iter().map(|(p, _)| p.clone()).collect();
    let media_types: Vec<String> = binaries.iter().map(|(_, b)| b.media_type.clone()).collect();
    let designations: Vec<(&ElementPath, &str)> =
        paths.iter().zip(&media_types).map(|(p, m)| (p, m.as_str())).collect();

    let mut rng = options.rng();
    let mut cids = unique_content_ids(binaries.len() + 1, &mut *rng);
    let signature_cid = cids.pop().expect("at least one id");
    let placeholder = if strict {
        strict_placeholder(&signature_cid)
    } else {
        lax_placeholder(&signature_cid)
    };
    let prepared = prepare(envelope, &designations, Some(placeholder))?;
    let boundary = options.boundary.clone().unwrap_or_else(|| generate_boundary(&mut *rng));
    let XopPackage { root, parts, boundary } = extract_using(prepared, binaries, cids, boundary)?;

    let mut references = envelope_references(&root, alg)?;
    let tags: Vec<(Vec<u8>, Vec<u8>)> = routes(&root, &paths)
        .iter()
        .map(|r| canonical_tags(node_at(&root, r)))
        .collect();

    let mut tracked = FirstByte { inner: sink, first: None };
    let mut writer = PackageWriter::new(&mut tracked, boundary.clone(), options.chunk_size);
    writer.start_part(&XopPackage::root_headers())?;
    writer.write_body(&canonicalize(&root))?;
    drop(root);

    let mut payload_bytes = 0u64;
    for (mut part, (start, end)) in parts.into_iter().zip(tags) {
        writer.start_part(&part.headers)?;
        let mut digester = ReferenceDigester::new(alg, &start);
        payload_bytes += writer.copy_body(&mut part.body, |chunk| digester.update(chunk))?;
        let uri = format!("cid:{}", part.headers.content_id);
        references.push(Reference::new(uri, alg).with_digest(digester.finish(&end))?);
    }

    let manifest = SignatureManifest::new(Default::default(), Default::default(), references)?;
    let sig = signature(&manifest, keys)?;
    let signed = Instant::now();
    let (body, media_type) = if strict {
        let key = keys.wrap_key().expect("checked above");
        (encrypt_signature(&sig, key, &signature_cid)?.1, CIPHERTEXT_PART_TYPE)
    } else {
        (canonicalize(&sig).into_vec(), SIGNATURE_PART_TYPE)
    };
    writer.start_part(&MimeHeaders::binary(signature_cid, media_type)?)?;
    writer.write_body(&body)?;
    let (bytes_written, _) = writer.finish()?;

    Ok(SignedMessage {
        mode: if strict { Mode::StreamingStrict } else { Mode::StreamingLax },
        manifest,
        content_type: package_content_type(&boundary, ROOT_CONTENT_ID),
        bytes_written,
        payload_bytes,
        timeline: SignTimeline {
            started,
            first_byte: tracked.first,
            digested_at_first_byte: 0,
            signed,
            finished: Instant::now(),
        },
    })
}
