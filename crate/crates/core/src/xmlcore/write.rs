use std::ops::Deref;

use super::{Child, XmlName, XmlNode};

/// Output of [`canonicalize`]: the exact bytes that get digested and signed.
#[derive(Clone, PartialEq, Eq)]
pub struct CanonicalBytes(Vec<u8>);

impl CanonicalBytes {
    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<u8> {
        self.0
    }
}

impl Deref for CanonicalBytes {
    type Target = [u8];

    fn deref(&self) -> &[u8] {
        &self.0
    }
}

impl AsRef<[u8]> for CanonicalBytes {
    fn as_ref(&self) -> &[u8] {
        &self.0
    }
}

impl std::fmt::Debug for CanonicalBytes {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "CanonicalBytes({:?})", String::from_utf8_lossy(&self.0))
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Style {
    /// Sorted attributes and namespace declarations, `<a></a>` for empty elements.
    Canonical,
    /// Document order, `<a/>` for empty elements.
    Plain,
}

/// Restricted canonical form.
///
/// Rules: UTF-8, no XML declaration, namespace declarations emitted on the
/// element where the prefix is first used and sorted by prefix, attributes
/// sorted by (namespace URI, local name), empty elements written as a
/// start/end tag pair, text escaped as `&amp;` `&lt;` `&gt;` `&#xD;`.
/// Attribute values additionally escape `"`, tab, LF and CR.
pub fn canonicalize(node: &XmlNode) -> CanonicalBytes {
    let mut out = Vec::new();
    write_tree(node, Style::Canonical, &mut out);
    CanonicalBytes(out)
}

/// Well-formed serialization that keeps attribute order and uses empty-element tags.
pub fn serialize(node: &XmlNode) -> Vec<u8> {
    let mut out = Vec::new();
    write_tree(node, Style::Plain, &mut out);
    out
}

/// Canonical start and end tag of `node` considered as a standalone element,
/// ignoring its children. For an element whose only child is text `t`,
/// `canonicalize(node) == start ++ escape(t) ++ end`.
pub fn canonical_tags(node: &XmlNode) -> (Vec<u8>, Vec<u8>) {
    let mut scope = Scope::default();
    let mut start = Vec::new();
    open_tag(node, Style::Canonical, &mut scope, &mut start);
    let mut end = Vec::new();
    close_tag(&node.name, &mut end);
    (start, end)
}

#[derive(Default)]
struct Scope {
    bindings: Vec<(String, String)>,
}

impl Scope {
    fn lookup(&self, prefix: &str) -> &str {
        self.bindings
            .iter()
            .rev()
            .find(|(p, _)| p == prefix)
            .map(|(_, u)| u.as_str())
            .unwrap_or("")
    }
}

enum Step<'a> {
    Open(&'a XmlNode),
    Text(&'a str),
    Close(&'a XmlName, usize),
}

fn write_tree(root: &XmlNode, style: Style, out: &mut Vec<u8>) {
    let mut scope = Scope::default();
    let mut stack = vec![Step::Open(root)];
    while let Some(step) = stack.pop() {
        match step {
            Step::Open(node) => {
                let before = scope.bindings.len();
                if open_tag(node, style, &mut scope, out) {
                    scope.bindings.truncate(before);
                    continue;
                }
                stack.push(Step::Close(&node.name, before));
                for child in node.children.iter().rev() {
                    stack.push(match child {
                        Child::Element(e) => Step::Open(e),
                        Child::Text(t) => Step::Text(t),
                    });
                }
            }
            Step::Text(text) => escape_text(text, out),
            Step::Close(name, before) => {
                close_tag(name, out);
                scope.bindings.truncate(before);
            }
        }
    }
}

/// Writes the start tag. Returns true when the element was written as `<a/>`.
fn open_tag(node: &XmlNode, style: Style, scope: &mut Scope, out: &mut Vec<u8>) -> bool {
    fn need(prefix: &str, uri: &str, scope: &mut Scope, decls: &mut Vec<(String, String)>) {
        if prefix != "xml" && scope.lookup(prefix) != uri {
            scope.bindings.push((prefix.to_owned(), uri.to_owned()));
            decls.push((prefix.to_owned(), uri.to_owned()));
        }
    }
    let mut decls: Vec<(String, String)> = Vec::new();
    need(node.name.prefix(), node.name.namespace_uri(), scope, &mut decls);
    for attr in &node.attributes {
        if !attr.name.prefix().is_empty() {
            need(attr.name.prefix(), attr.name.namespace_uri(), scope, &mut decls);
        }
    }

    out.push(b'<');
    write_qname(&node.name, out);

    let mut attrs: Vec<_> = node.attributes.iter().collect();
    if style == Style::Canonical {
        decls.sort();
        attrs.sort_by(|a, b| {
            (a.name.namespace_uri(), a.name.local_name())
                .cmp(&(b.name.namespace_uri(), b.name.local_name()))
        });
    }
    for (prefix, uri) in &decls {
        if prefix.is_empty() {
            out.extend_from_slice(b" xmlns=\"");
        } else {
            out.extend_from_slice(b" xmlns:");
            out.extend_from_slice(prefix.as_bytes());
            out.extend_from_slice(b"=\"");
        }
        escape_attr(uri, out);
        out.push(b'"');
    }
    for attr in attrs {
        out.push(b' ');
        write_qname(&attr.name, out);
        out.extend_from_slice(b"=\"");
        escape_attr(&attr.value, out);
        out.push(b'"');
    }
    if style == Style::Plain && node.children.is_empty() {
        out.extend_from_slice(b"/>");
        return true;
    }
    out.push(b'>');
    false
}

fn close_tag(name: &XmlName, out: &mut Vec<u8>) {
    out.extend_from_slice(b"</");
    write_qname(name, out);
    out.push(b'>');
}

fn write_qname(name: &XmlName, out: &mut Vec<u8>) {
    if !name.prefix().is_empty() {
        out.extend_from_slice(name.prefix().as_bytes());
        out.push(b':');
    }
    out.extend_from_slice(name.local_name().as_bytes());
}

pub(crate) fn escape_text(text: &str, out: &mut Vec<u8>) {
    escape_with(text, out, |b| match b {
        b'&' => Some(b"&amp;"),
        b'<' => Some(b"&lt;"),
        b'>' => Some(b"&gt;"),
        b'\r' => Some(b"&#xD;"),
        _ => None,
    });
}

fn escape_attr(text: &str, out: &mut Vec<u8>) {
    escape_with(text, out, |b| match b {
        b'&' => Some(b"&amp;"),
        b'<' => Some(b"&lt;"),
        b'"' => Some(b"&quot;"),
        b'\t' => Some(b"&#x9;"),
        b'\n' => Some(b"&#xA;"),
        b'\r' => Some(b"&#xD;"),
        _ => None,
    });
}

fn escape_with(text: &str, out: &mut Vec<u8>, replace: impl Fn(u8) -> Option<&'static [u8]>) {
    let bytes = text.as_bytes();
    let mut run_start = 0;
    for (i, &b) in bytes.iter().enumerate() {
        if let Some(rep) = replace(b) {
            out.extend_from_slice(&bytes[run_start..i]);
            out.extend_from_slice(rep);
            run_start = i + 1;
        }
    }
    out.extend_from_slice(&bytes[run_start..]);
}
