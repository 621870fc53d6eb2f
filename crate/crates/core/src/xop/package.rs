use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::{self, Read, Write};
use std::str::FromStr;

use rand::RngCore;

use super::{base64_encode_stream, XopError, XOP_NS};
use crate::mime::{generate_boundary, package_content_type, Boundary, MimeHeaders, MimePart, PackageWriter};
use crate::xmlcore::{canonicalize, Child, XmlName, XmlNode};

/// Media type of the root part.
pub const ROOT_CONTENT_TYPE: &str = "application/xop+xml; charset=UTF-8; type=\"application/soap+xml\"";

/// Content-ID of the root part. Attachment ids are random, so a fixed root id
/// cannot collide with them.
pub const ROOT_CONTENT_ID: &str = "root.envelope@xop.streamsign";

pub const CID_SUFFIX: &str = "@xop.streamsign";

/// 128 random bits in hex plus [`CID_SUFFIX`].
pub fn new_content_id(rng: &mut dyn RngCore) -> String {
    let mut bytes = [0u8; 16];
    rng.fill_bytes(&mut bytes);
    format!("{}{CID_SUFFIX}", crate::hex(&bytes))
}

/// Location of an element: `/Envelope/Body/Upload/Data[2]`.
///
/// Steps match local names (namespaces are ignored). An optional 1-based
/// index selects among same-named siblings; the default is the first.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ElementPath {
    steps: Vec<(String, usize)>,
}

impl ElementPath {
    pub fn steps(&self) -> impl Iterator<Item = (&str, usize)> {
        self.steps.iter().map(|(n, i)| (n.as_str(), *i))
    }

    /// Child-index route from `root` to the addressed element.
    pub fn resolve(&self, root: &XmlNode) -> Option<Vec<usize>> {
        let (first, index) = self.steps.first()?;
        if root.name.local_name() != first || *index != 1 {
            return None;
        }
        let mut route = Vec::with_capacity(self.steps.len() - 1);
        let mut node = root;
        for (name, index) in &self.steps[1..] {
            let (pos, next) = node
                .children
                .iter()
                .enumerate()
                .filter_map(|(i, c)| match c {
                    Child::Element(e) if e.name.local_name() == name => Some((i, e)),
                    _ => None,
                })
                .nth(index - 1)?;
            route.push(pos);
            node = next;
        }
        Some(route)
    }

    /// Path of the element reached by `route` from `root`.
    pub fn of(root: &XmlNode, route: &[usize]) -> Option<ElementPath> {
        let mut steps = vec![(root.name.local_name().to_owned(), 1)];
        let mut node = root;
        for &pos in route {
            let child = match node.children.get(pos)? {
                Child::Element(e) => e,
                Child::Text(_) => return None,
            };
            let index = node.children[..pos]
                .iter()
                .filter(|c| matches!(c, Child::Element(e) if e.name.local_name() == child.name.local_name()))
                .count()
                + 1;
            steps.push((child.name.local_name().to_owned(), index));
            node = child;
        }
        Some(ElementPath { steps })
    }
}

impl FromStr for ElementPath {
    type Err = XopError;

    fn from_str(s: &str) -> Result<Self, XopError> {
        let invalid = || XopError::InvalidPath(s.to_owned());
        let rest = s.strip_prefix('/').ok_or_else(invalid)?;
        let mut steps = Vec::new();
        for step in rest.split('/') {
            let (name, index) = match step.split_once('[') {
                Some((name, idx)) => {
                    let idx = idx.strip_suffix(']').ok_or_else(invalid)?;
                    let n: usize = idx.parse().map_err(|_| invalid())?;
                    (name, n)
                }
                None => (step, 1),
            };
            if index == 0 || !crate::xmlcore::is_ncname(name) {
                return Err(invalid());
            }
            steps.push((name.to_owned(), index));
        }
        Ok(ElementPath { steps })
    }
}

impl fmt::Display for ElementPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (name, index) in &self.steps {
            write!(f, "/{name}")?;
            if *index != 1 {
                write!(f, "[{index}]")?;
            }
        }
        Ok(())
    }
}

pub(crate) fn node_at<'a>(root: &'a XmlNode, route: &[usize]) -> &'a XmlNode {
    route.iter().fold(root, |node, &i| match &node.children[i] {
        Child::Element(e) => e,
        Child::Text(_) => panic!("route points at text"),
    })
}

pub(crate) fn node_at_mut<'a>(root: &'a mut XmlNode, route: &[usize]) -> &'a mut XmlNode {
    route.iter().fold(root, |node, &i| match &mut node.children[i] {
        Child::Element(e) => e,
        Child::Text(_) => panic!("route points at text"),
    })
}

/// Binary data bound to an element.
pub struct BinaryContent {
    pub source: Box<dyn Read + Send>,
    pub declared_length: Option<u64>,
    pub media_type: String,
}

impl BinaryContent {
    pub fn new(source: impl Read + Send + 'static, media_type: impl Into<String>) -> Self {
        BinaryContent {
            source: Box::new(source),
            declared_length: None,
            media_type: media_type.into(),
        }
    }

    pub fn from_bytes(bytes: Vec<u8>, media_type: impl Into<String>) -> Self {
        let len = bytes.len() as u64;
        Self::new(io::Cursor::new(bytes), media_type).with_length(len)
    }

    pub fn with_length(mut self, length: u64) -> Self {
        self.declared_length = Some(length);
        self
    }

    /// The source, failing with `InvalidData` if it yields a byte count
    /// other than the declared length.
    pub fn into_reader(self) -> Box<dyn Read + Send> {
        match self.declared_length {
            None => self.source,
            Some(expected) => Box::new(LengthChecked {
                inner: self.source,
                expected,
                seen: 0,
            }),
        }
    }
}

impl fmt::Debug for BinaryContent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BinaryContent")
            .field("declared_length", &self.declared_length)
            .field("media_type", &self.media_type)
            .finish_non_exhaustive()
    }
}

struct LengthChecked {
    inner: Box<dyn Read + Send>,
    expected: u64,
    seen: u64,
}

impl Read for LengthChecked {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        let n = self.inner.read(buf)?;
        self.seen += n as u64;
        if self.seen > self.expected || (n == 0 && !buf.is_empty() && self.seen != self.expected) {
            return Err(io::Error::new(
                io::ErrorKind::InvalidData,
                format!("binary source yielded {} bytes, declared {}", self.seen, self.expected),
            ));
        }
        Ok(n)
    }
}

/// An optimized envelope plus its attachments.
#[derive(Debug)]
pub struct XopPackage {
    pub root: XmlNode,
    pub parts: Vec<MimePart>,
    pub boundary: Boundary,
}

impl XopPackage {
    pub fn root_headers() -> MimeHeaders {
        MimeHeaders::binary(ROOT_CONTENT_ID, ROOT_CONTENT_TYPE).expect("constant headers are valid")
    }

    /// Package-level `Content-Type` header value.
    pub fn content_type(&self) -> String {
        package_content_type(&self.boundary, ROOT_CONTENT_ID)
    }

    /// Writes the root part (canonical form) followed by every attachment.
    pub fn write_to<W: Write>(self, sink: W, chunk_size: usize) -> Result<u64, XopError> {
        let mut writer = PackageWriter::new(sink, self.boundary, chunk_size);
        writer.start_part(&Self::root_headers())?;
        writer.write_body(&canonicalize(&self.root))?;
        for mut part in self.parts {
            writer.write_part(&part.headers, &mut part.body)?;
        }
        Ok(writer.finish()?.0)
    }
}

fn include_element(cid: &str) -> XmlNode {
    XmlNode::new(XmlName::new("xop", "Include", XOP_NS).expect("valid name"))
        .with_attribute(XmlName::local("href").expect("valid name"), format!("cid:{cid}"))
        .expect("unprefixed attribute")
}

/// Moves each designated element's content into its own MIME part.
pub fn extract(
    envelope: XmlNode,
    binaries: Vec<(ElementPath, BinaryContent)>,
) -> Result<XopPackage, XopError> {
    extract_with(envelope, binaries, &mut rand::rngs::OsRng)
}

/// [`extract`] drawing Content-IDs and the boundary from `rng`.
pub fn extract_with(
    envelope: XmlNode,
    binaries: Vec<(ElementPath, BinaryContent)>,
    rng: &mut dyn RngCore,
) -> Result<XopPackage, XopError> {
    let cids = unique_content_ids(binaries.len(), rng);
    let boundary = generate_boundary(rng);
    extract_using(envelope, binaries, cids, boundary)
}

/// `n` distinct Content-IDs, none equal to [`ROOT_CONTENT_ID`].
pub(crate) fn unique_content_ids(n: usize, rng: &mut dyn RngCore) -> Vec<String> {
    let mut used = HashSet::from([ROOT_CONTENT_ID.to_owned()]);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let cid = new_content_id(rng);
        if used.insert(cid.clone()) {
            out.push(cid);
        }
    }
    out
}

/// [`extract`] with caller-chosen Content-IDs (one per binary) and boundary.
pub(crate) fn extract_using(
    mut envelope: XmlNode,
    binaries: Vec<(ElementPath, BinaryContent)>,
    cids: Vec<String>,
    boundary: Boundary,
) -> Result<XopPackage, XopError> {
    assert_eq!(cids.len(), binaries.len());
    let mut routes: Vec<Vec<usize>> = Vec::with_capacity(binaries.len());
    for (path, _) in &binaries {
        let route = path
            .resolve(&envelope)
            .ok_or_else(|| XopError::PathNotFound(path.to_string()))?;
        if routes.contains(&route) {
            return Err(XopError::DuplicatePath(path.to_string()));
        }
        if node_at(&envelope, &route).elements().next().is_some() {
            return Err(XopError::NotBinaryContent(path.to_string()));
        }
        routes.push(route);
    }
    let mut seen = HashSet::from([ROOT_CONTENT_ID]);
    for cid in &cids {
        if !seen.insert(cid.as_str()) {
            return Err(XopError::DuplicateContentId(cid.clone()));
        }
    }

    let mut parts = Vec::with_capacity(binaries.len());
    for (((_, content), route), cid) in binaries.into_iter().zip(&routes).zip(cids) {
        let node = node_at_mut(&mut envelope, route);
        node.children = vec![Child::Element(include_element(&cid))];
        let headers = MimeHeaders::binary(cid, content.media_type.clone())?;
        parts.push(MimePart {
            headers,
            body: content.into_reader(),
        });
    }
    Ok(XopPackage {
        root: envelope,
        parts,
        boundary,
    })
}

/// Content-ID named by an `xop:Include` href (`cid:` URL, percent-decoded).
pub(crate) fn href_content_id(href: &str) -> Option<String> {
    let rest = href.strip_prefix("cid:")?;
    let bytes = rest.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'%' {
            let hex = rest.get(i + 1..i + 3)?;
            out.push(u8::from_str_radix(hex, 16).ok()?);
            i += 3;
        } else {
            out.push(bytes[i]);
            i += 1;
        }
    }
    let cid = String::from_utf8(out).ok()?;
    (!cid.is_empty()).then_some(cid)
}

fn is_include(node: &XmlNode) -> bool {
    node.name.is(XOP_NS, "Include")
}

fn include_target(node: &XmlNode) -> Result<String, XopError> {
    if !node.children.is_empty() || node.attributes.len() != 1 {
        return Err(XopError::InvalidPackage("xop:Include must be empty with only href".into()));
    }
    let href = node
        .attribute("", "href")
        .ok_or_else(|| XopError::InvalidPackage("xop:Include without href".into()))?;
    href_content_id(href).ok_or_else(|| XopError::UnresolvedReference(href.to_owned()))
}

/// Inlines every attachment as base64 text, rebuilding the full infoset.
pub fn reconstitute(package: XopPackage) -> Result<XmlNode, XopError> {
    let XopPackage { mut root, parts, .. } = package;
    let mut by_cid: HashMap<String, MimePart> = HashMap::with_capacity(parts.len());
    for part in parts {
        let cid = part.headers.content_id.clone();
        if by_cid.insert(cid.clone(), part).is_some() {
            return Err(XopError::DuplicateContentId(cid));
        }
    }
    let mut consumed: HashSet<String> = HashSet::new();
    if is_include(&root) {
        return Err(XopError::InvalidPackage("root element is xop:Include".into()));
    }
    let mut stack: Vec<&mut XmlNode> = vec![&mut root];
    while let Some(node) = stack.pop() {
        let mut replaced = false;
        for child in node.children.iter_mut() {
            let Child::Element(e) = child else { continue };
            if !is_include(e) {
                continue;
            }
            let cid = include_target(e)?;
            let mut part = match by_cid.remove(&cid) {
                Some(p) => p,
                None if consumed.contains(&cid) => {
                    return Err(XopError::InvalidPackage(format!("{cid} referenced twice")))
                }
                None => return Err(XopError::UnresolvedReference(format!("cid:{cid}"))),
            };
            consumed.insert(cid);
            let mut text = Vec::new();
            base64_encode_stream(&mut part.body, &mut text)?;
            *child = Child::Text(String::from_utf8(text).expect("base64 is ASCII"));
            replaced = true;
        }
        if replaced {
            let mut merged: Vec<Child> = Vec::with_capacity(node.children.len());
            for child in node.children.drain(..) {
                match (merged.last_mut(), child) {
                    (_, Child::Text(t)) if t.is_empty() => {}
                    (Some(Child::Text(prev)), Child::Text(t)) => prev.push_str(&t),
                    (_, c) => merged.push(c),
                }
            }
            node.children = merged;
        }
        stack.extend(node.elements_mut());
    }
    Ok(root)
}

/// Checks the reference invariants of a package: every `xop:Include` is
/// well-formed and names exactly one part, and no part is named twice.
pub fn check_package(package: &XopPackage) -> Result<(), XopError> {
    let mut cids = HashSet::new();
    for part in &package.parts {
        if !cids.insert(part.headers.content_id.as_str()) {
            return Err(XopError::DuplicateContentId(part.headers.content_id.clone()));
        }
    }
    if cids.contains(ROOT_CONTENT_ID) {
        return Err(XopError::DuplicateContentId(ROOT_CONTENT_ID.into()));
    }
    let mut referenced = HashSet::new();
    let mut stack = vec![&package.root];
    while let Some(node) = stack.pop() {
        if is_include(node) {
            let cid = include_target(node)?;
            if !cids.contains(cid.as_str()) {
                return Err(XopError::UnresolvedReference(format!("cid:{cid}")));
            }
            if !referenced.insert(cid.clone()) {
                return Err(XopError::InvalidPackage(format!("{cid} referenced twice")));
            }
        }
        stack.extend(node.elements());
    }
    Ok(())
}
