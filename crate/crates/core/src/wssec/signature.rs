use super::{
    CanonicalizationAlgorithm, DigestAlgorithm, Reference, SignatureAlgorithm, SignatureManifest,
    WssecError, DS_NS,
};
use crate::xmlcore::{Child, XmlName, XmlNode};
use crate::xop::{base64_decode, base64_encode, XOP_NS};

pub(crate) fn ds(local: &str) -> XmlNode {
    XmlNode::new(XmlName::new("ds", local, DS_NS).expect("valid name"))
}

fn with_algorithm(node: XmlNode, uri: &str) -> XmlNode {
    node.with_attribute(XmlName::local("Algorithm").expect("valid name"), uri)
        .expect("unprefixed attribute")
}

/// `ds:SignedInfo` for a manifest whose digests are all set.
pub fn build_signed_info(manifest: &SignatureManifest) -> Result<XmlNode, WssecError> {
    let mut info = ds("SignedInfo")
        .with_child(with_algorithm(ds("CanonicalizationMethod"), manifest.canonicalization_algorithm.uri()))
        .with_child(with_algorithm(ds("SignatureMethod"), manifest.signature_algorithm.uri()));
    for r in manifest.references() {
        if r.digest_value().is_empty() {
            return Err(WssecError::MissingDigest(r.uri.clone()));
        }
        let reference = ds("Reference")
            .with_attribute(XmlName::local("URI").expect("valid name"), r.uri.as_str())
            .expect("unprefixed attribute")
            .with_child(with_algorithm(ds("DigestMethod"), r.digest_algorithm.uri()))
            .with_child(ds("DigestValue").with_text(base64_encode(r.digest_value())));
        info = info.with_child(reference);
    }
    Ok(info)
}

/// Complete `ds:Signature` element.
pub(crate) fn signature_element(signed_info: XmlNode, signature_value: &[u8], key_name: &str) -> XmlNode {
    ds("Signature")
        .with_child(signed_info)
        .with_child(ds("SignatureValue").with_text(base64_encode(signature_value)))
        .with_child(ds("KeyInfo").with_child(ds("KeyName").with_text(key_name)))
}

/// Lax-mode header placeholder: `ds:Signature` whose content is one `xop:Include`.
pub(crate) fn lax_placeholder(cid: &str) -> XmlNode {
    ds("Signature").with_child(include(cid))
}

pub(crate) fn include(cid: &str) -> XmlNode {
    XmlNode::new(XmlName::new("xop", "Include", XOP_NS).expect("valid name"))
        .with_attribute(XmlName::local("href").expect("valid name"), format!("cid:{cid}"))
        .expect("unprefixed attribute")
}

/// A `ds:Signature` taken apart. Shape is checked exactly.
pub(crate) struct ParsedSignature {
    pub manifest: SignatureManifest,
    pub signed_info: XmlNode,
    pub signature_value: Vec<u8>,
    pub key_name: String,
}

fn malformed(what: impl Into<String>) -> WssecError {
    WssecError::MalformedMessage(what.into())
}

/// Child elements of `node` with the given `ds:` names, in this order, and no text.
pub(crate) fn expect_children<'a>(node: &'a XmlNode, ns: &str, names: &[&str]) -> Result<Vec<&'a XmlNode>, WssecError> {
    let mut out = Vec::with_capacity(names.len());
    for child in &node.children {
        match child {
            Child::Text(_) => return Err(malformed(format!("unexpected text in {}", node.name.local_name()))),
            Child::Element(e) => out.push(e),
        }
    }
    if out.len() != names.len() || out.iter().zip(names).any(|(e, n)| !e.name.is(ns, n)) {
        return Err(malformed(format!("unexpected content in {}", node.name.local_name())));
    }
    Ok(out)
}

pub(crate) fn expect_attributes(node: &XmlNode, names: &[&str]) -> Result<(), WssecError> {
    let ok = node.attributes.len() == names.len()
        && names.iter().all(|n| node.attribute("", n).is_some());
    if ok {
        Ok(())
    } else {
        Err(malformed(format!("unexpected attributes on {}", node.name.local_name())))
    }
}

/// Text of an element that holds only text (possibly none).
pub(crate) fn text_only(node: &XmlNode) -> Result<&str, WssecError> {
    match node.children.as_slice() {
        [] => Ok(""),
        [Child::Text(t)] => Ok(t),
        _ => Err(malformed(format!("{} must hold only text", node.name.local_name()))),
    }
}

fn algorithm(node: &XmlNode) -> Result<&str, WssecError> {
    expect_attributes(node, &["Algorithm"])?;
    expect_children(node, DS_NS, &[])?;
    Ok(node.attribute("", "Algorithm").expect("checked"))
}

fn decode(text: &str) -> Result<Vec<u8>, WssecError> {
    base64_decode(text).map_err(|e| malformed(e.to_string()))
}

pub(crate) fn parse_signature(node: &XmlNode) -> Result<ParsedSignature, WssecError> {
    if !node.name.is(DS_NS, "Signature") {
        return Err(malformed("expected ds:Signature"));
    }
    expect_attributes(node, &[])?;
    let parts = expect_children(node, DS_NS, &["SignedInfo", "SignatureValue", "KeyInfo"])?;
    let (info, value, key_info) = (parts[0], parts[1], parts[2]);

    expect_attributes(info, &[])?;
    let elements: Vec<&XmlNode> = info.elements().collect();
    if elements.len() < 3 || elements.len() != info.children.len() {
        return Err(malformed("ds:SignedInfo needs methods and at least one reference"));
    }
    let mut names = vec!["CanonicalizationMethod", "SignatureMethod"];
    names.resize(elements.len(), "Reference");
    let elements = expect_children(info, DS_NS, &names)?;
    let c14n = CanonicalizationAlgorithm::from_uri(algorithm(elements[0])?)?;
    let sig_alg = SignatureAlgorithm::from_uri(algorithm(elements[1])?)?;
    let mut references = Vec::new();
    for r in &elements[2..] {
        expect_attributes(r, &["URI"])?;
        let inner = expect_children(r, DS_NS, &["DigestMethod", "DigestValue"])?;
        let alg = DigestAlgorithm::from_uri(algorithm(inner[0])?)?;
        expect_attributes(inner[1], &[])?;
        let digest = decode(text_only(inner[1])?)?;
        let reference = Reference::new(r.attribute("", "URI").expect("checked"), alg)
            .with_digest(digest)
            .map_err(|e| malformed(e.to_string()))?;
        references.push(reference);
    }
    let manifest = SignatureManifest::new(c14n, sig_alg, references).map_err(|e| malformed(e.to_string()))?;

    expect_attributes(value, &[])?;
    let signature_value = decode(text_only(value)?)?;
    expect_attributes(key_info, &[])?;
    let key_name_el = expect_children(key_info, DS_NS, &["KeyName"])?[0];
    expect_attributes(key_name_el, &[])?;
    let key_name = text_only(key_name_el)?.to_owned();

    Ok(ParsedSignature {
        manifest,
        signed_info: info.clone(),
        signature_value,
        key_name,
    })
}
