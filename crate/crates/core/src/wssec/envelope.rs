use std::collections::HashSet;

use super::{WssecError, SOAP11_NS, SOAP12_NS, WSSE_NS, WSU_NS};
use crate::xmlcore::{Child, XmlName, XmlNode};
use crate::xop::{ElementPath, XMIME_NS, XOP_NS};

fn invalid(what: impl Into<String>) -> WssecError {
    WssecError::InvalidEnvelope(what.into())
}

fn malformed(what: impl Into<String>) -> WssecError {
    WssecError::MalformedMessage(what.into())
}

fn soap_ns(root: &XmlNode) -> Option<&'static str> {
    [SOAP12_NS, SOAP11_NS]
        .into_iter()
        .find(|ns| root.name.is(ns, "Envelope"))
}

fn is_security(node: &XmlNode) -> bool {
    node.name.is(WSSE_NS, "Security")
}

fn wsu_id(node: &XmlNode) -> Option<&str> {
    node.attribute(WSU_NS, "Id")
}

/// Removes whitespace-only text children; fails on any other text.
fn strip_whitespace(node: &mut XmlNode) -> Result<(), WssecError> {
    for child in &node.children {
        if let Child::Text(t) = child {
            if !t.chars().all(|c| c.is_ascii_whitespace()) {
                return Err(invalid(format!("text content in {}", node.name.local_name())));
            }
        }
    }
    node.children.retain(|c| matches!(c, Child::Element(_)));
    Ok(())
}

/// Brings an application envelope into signable shape.
///
/// Afterwards the Envelope holds exactly Header and Body with no stray text.
/// Designated elements carry `xmime:contentType`. Header blocks and the Body
/// carry a `wsu:Id`, and a `wsse:Security` block holding `security_content`
/// comes first in the header.
pub(crate) fn prepare(
    mut envelope: XmlNode,
    designations: &[(&ElementPath, &str)],
    security_content: Option<XmlNode>,
) -> Result<XmlNode, WssecError> {
    let ns = soap_ns(&envelope).ok_or_else(|| invalid("root is not a SOAP Envelope"))?;
    if !envelope.attributes.is_empty() {
        return Err(invalid("attributes on Envelope are not supported"));
    }
    strip_whitespace(&mut envelope)?;
    let names: Vec<&str> = envelope.elements().map(|e| e.name.local_name()).collect();
    let all_soap = envelope.elements().all(|e| e.name.namespace_uri() == ns);
    match names.as_slice() {
        ["Header", "Body"] if all_soap => {}
        ["Body"] if all_soap => {
            let prefix = envelope.name.prefix().to_owned();
            let header = XmlNode::new(XmlName::new(prefix, "Header", ns)?);
            envelope.children.insert(0, Child::Element(header));
        }
        _ => return Err(invalid("Envelope must contain an optional Header followed by Body")),
    }
    {
        let header = header_mut(&mut envelope);
        if !header.attributes.is_empty() {
            return Err(invalid("attributes on Header are not supported"));
        }
        strip_whitespace(header)?;
        if header.elements().any(is_security) {
            return Err(invalid("envelope already has a security header"));
        }
    }

    for (path, media_type) in designations {
        let route = path
            .resolve(&envelope)
            .ok_or_else(|| WssecError::Xop(crate::xop::XopError::PathNotFound(path.to_string())))?;
        if route.len() < 2 && !(route.len() == 1 && route[0] == 1) {
            return Err(invalid(format!("{path} is not inside a header block or the Body")));
        }
        let node = crate::xop::node_at_mut(&mut envelope, &route);
        node.set_attribute(XmlName::new("xmime", "contentType", XMIME_NS)?, *media_type)?;
    }

    let mut ids = HashSet::new();
    let mut stack = vec![&envelope];
    while let Some(node) = stack.pop() {
        if let Some(id) = wsu_id(node) {
            if !ids.insert(id.to_owned()) {
                return Err(invalid(format!("duplicate wsu:Id {id}")));
            }
        }
        stack.extend(node.elements());
    }
    let mut fresh = |base: String| {
        let mut candidate = base.clone();
        let mut k = 1;
        while ids.contains(&candidate) {
            k += 1;
            candidate = format!("{base}-{k}");
        }
        ids.insert(candidate.clone());
        candidate
    };
    let id_name = XmlName::new("wsu", "Id", WSU_NS)?;
    for (i, block) in header_mut(&mut envelope).elements_mut().enumerate() {
        if wsu_id(block).is_none() {
            block.set_attribute(id_name.clone(), fresh(format!("id-header-{}", i + 1)))?;
        }
    }
    let body = body_mut(&mut envelope);
    if wsu_id(body).is_none() {
        body.set_attribute(id_name, fresh("id-body".into()))?;
    }

    let mut security = XmlNode::new(XmlName::new("wsse", "Security", WSSE_NS)?);
    if let Some(content) = security_content {
        security.children.push(Child::Element(content));
    }
    header_mut(&mut envelope).children.insert(0, Child::Element(security));
    Ok(envelope)
}

fn header_mut(envelope: &mut XmlNode) -> &mut XmlNode {
    match &mut envelope.children[0] {
        Child::Element(e) => e,
        Child::Text(_) => unreachable!("prepared envelope"),
    }
}

fn body_mut(envelope: &mut XmlNode) -> &mut XmlNode {
    match &mut envelope.children[1] {
        Child::Element(e) => e,
        Child::Text(_) => unreachable!("prepared envelope"),
    }
}

/// The `wsse:Security` block of a prepared envelope.
pub(crate) fn security_mut(envelope: &mut XmlNode) -> &mut XmlNode {
    header_mut(envelope)
        .elements_mut()
        .find(|e| is_security(e))
        .expect("prepared envelope has a security header")
}

/// `#id` reference targets of a prepared envelope, in document order.
pub(crate) fn id_targets(envelope: &XmlNode) -> Vec<(String, &XmlNode)> {
    let mut out = Vec::new();
    for top in envelope.elements() {
        let blocks: Vec<&XmlNode> = if top.name.local_name() == "Header" {
            top.elements().filter(|e| !is_security(e)).collect()
        } else {
            vec![top]
        };
        for b in blocks {
            if let Some(id) = wsu_id(b) {
                out.push((format!("#{id}"), b));
            }
        }
    }
    out
}

/// Receiver-side view of a signed envelope, with its shape checked.
pub(crate) struct Analysis<'a> {
    /// Content of the security header; `None` for an unsigned message.
    pub security_child: Option<&'a XmlNode>,
    pub id_targets: Vec<(String, &'a XmlNode)>,
    /// Content-ID and the element the attachment logically belongs to.
    pub attachments: Vec<(String, &'a XmlNode)>,
}

pub(crate) fn include_cid(include: &XmlNode) -> Result<String, WssecError> {
    if !include.name.is(XOP_NS, "Include") || !include.children.is_empty() || include.attributes.len() != 1 {
        return Err(malformed("malformed xop:Include"));
    }
    let href = include
        .attribute("", "href")
        .ok_or_else(|| malformed("xop:Include without href"))?;
    crate::xop::href_content_id(href).ok_or_else(|| WssecError::UnresolvedReference(href.to_owned()))
}

pub(crate) fn analyze(envelope: &XmlNode) -> Result<Analysis<'_>, WssecError> {
    let ns = soap_ns(envelope).ok_or_else(|| malformed("root is not a SOAP Envelope"))?;
    if !envelope.attributes.is_empty() {
        return Err(malformed("attributes on Envelope"));
    }
    let top: Vec<&XmlNode> = envelope.elements().collect();
    let [header, body] = top.as_slice() else {
        return Err(malformed("Envelope must hold Header and Body"));
    };
    if top.len() != envelope.children.len()
        || !header.name.is(ns, "Header")
        || !body.name.is(ns, "Body")
        || !header.attributes.is_empty()
        || header.elements().count() != header.children.len()
    {
        return Err(malformed("unexpected Envelope or Header content"));
    }

    let securities: Vec<&XmlNode> = header.elements().filter(|e| is_security(e)).collect();
    let security_child = match securities.as_slice() {
        [] => None,
        [s] => match s.children.as_slice() {
            [Child::Element(e)] if s.attributes.is_empty() => Some(e),
            _ => return Err(malformed("security header must hold exactly one element")),
        },
        _ => return Err(malformed("more than one security header")),
    };

    let mut ids = HashSet::new();
    let mut attachments = Vec::new();
    let mut cids = HashSet::new();
    let mut stack: Vec<&XmlNode> = vec![envelope];
    while let Some(node) = stack.pop() {
        if let Some(id) = wsu_id(node) {
            if !ids.insert(id) {
                return Err(malformed(format!("duplicate wsu:Id {id}")));
            }
        }
        if is_security(node) {
            continue;
        }
        for child in node.elements() {
            if child.name.is(XOP_NS, "Include") {
                if node.children.len() != 1 {
                    return Err(malformed("xop:Include must be the only child of its parent"));
                }
                let cid = include_cid(child)?;
                if !cids.insert(cid.clone()) {
                    return Err(malformed(format!("{cid} included twice")));
                }
                attachments.push((cid, node));
            } else {
                stack.push(child);
            }
        }
    }
    // Document order.
    attachments.reverse();

    let id_targets = id_targets(envelope);
    let expected = header.elements().filter(|e| !is_security(e)).count() + 1;
    if id_targets.len() != expected {
        return Err(malformed("header block or Body without wsu:Id"));
    }
    Ok(Analysis {
        security_child,
        id_targets,
        attachments,
    })
}
