//! Minimal XML infoset model.
//!
//! The tree keeps qualified names with their namespace URI and the prefix the
//! producer chose. Namespace declarations are not stored as attributes; they
//! are derived on output, emitted on the element where a prefix is first used.
//! This is enough for the envelopes and security headers this crate produces
//! and signs, and nothing more: no DTDs, no processing instructions, no
//! comments survive parsing.

mod parse;
mod write;

use std::fmt;

pub use parse::{parse, MAX_DEPTH};
pub use write::{canonical_tags, canonicalize, serialize, CanonicalBytes};

/// Namespace bound to the reserved `xml` prefix.
pub const XML_NAMESPACE: &str = "http://www.w3.org/XML/1998/namespace";

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum XmlError {
    #[error("malformed XML at byte {position}: {reason}")]
    MalformedXml { position: usize, reason: String },
    #[error("unsupported XML construct at byte {position}: {construct}")]
    UnsupportedConstruct { position: usize, construct: String },
    #[error("invalid name {0:?}")]
    InvalidName(String),
}

/// Qualified name of an element or attribute.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct XmlName {
    local: String,
    namespace_uri: String,
    prefix: String,
}

impl XmlName {
    pub fn new(
        prefix: impl Into<String>,
        local: impl Into<String>,
        namespace_uri: impl Into<String>,
    ) -> Result<Self, XmlError> {
        let name = XmlName {
            local: local.into(),
            namespace_uri: namespace_uri.into(),
            prefix: prefix.into(),
        };
        if !is_ncname(&name.local) {
            return Err(XmlError::InvalidName(name.local));
        }
        if !name.prefix.is_empty() {
            if !is_ncname(&name.prefix) || name.namespace_uri.is_empty() {
                return Err(XmlError::InvalidName(format!("{}:{}", name.prefix, name.local)));
            }
            if (name.prefix == "xml") != (name.namespace_uri == XML_NAMESPACE) {
                return Err(XmlError::InvalidName(format!("{}:{}", name.prefix, name.local)));
            }
        }
        if name.prefix.starts_with("xmlns") || (name.prefix.is_empty() && name.local == "xmlns")
        {
            return Err(XmlError::InvalidName(name.local));
        }
        Ok(name)
    }

    /// Name without a namespace.
    pub fn local(local: impl Into<String>) -> Result<Self, XmlError> {
        Self::new("", local, "")
    }

    pub fn local_name(&self) -> &str {
        &self.local
    }

    pub fn namespace_uri(&self) -> &str {
        &self.namespace_uri
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    /// True when the name is `local` in namespace `ns`, whatever the prefix.
    pub fn is(&self, ns: &str, local: &str) -> bool {
        self.namespace_uri == ns && self.local == local
    }

    pub(crate) fn qualified(&self) -> String {
        if self.prefix.is_empty() {
            self.local.clone()
        } else {
            format!("{}:{}", self.prefix, self.local)
        }
    }
}

impl fmt::Debug for XmlName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.namespace_uri.is_empty() {
            write!(f, "{}", self.qualified())
        } else {
            write!(f, "{{{}}}{}", self.namespace_uri, self.qualified())
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Attribute {
    pub name: XmlName,
    pub value: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Child {
    Element(XmlNode),
    Text(String),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct XmlNode {
    pub name: XmlName,
    pub attributes: Vec<Attribute>,
    pub children: Vec<Child>,
}

impl XmlNode {
    pub fn new(name: XmlName) -> Self {
        XmlNode {
            name,
            attributes: Vec::new(),
            children: Vec::new(),
        }
    }

    /// Adds an attribute, replacing any existing one with the same
    /// namespace and local name. Namespaced attributes must carry a prefix.
    pub fn set_attribute(&mut self, name: XmlName, value: impl Into<String>) -> Result<(), XmlError> {
        if !name.namespace_uri.is_empty() && name.prefix.is_empty() {
            return Err(XmlError::InvalidName(name.local));
        }
        let value = value.into();
        match self
            .attributes
            .iter_mut()
            .find(|a| a.name.namespace_uri == name.namespace_uri && a.name.local == name.local)
        {
            Some(existing) => {
                existing.name = name;
                existing.value = value;
            }
            None => self.attributes.push(Attribute { name, value }),
        }
        Ok(())
    }

    pub fn with_attribute(mut self, name: XmlName, value: impl Into<String>) -> Result<Self, XmlError> {
        self.set_attribute(name, value)?;
        Ok(self)
    }

    pub fn with_child(mut self, child: XmlNode) -> Self {
        self.children.push(Child::Element(child));
        self
    }

    pub fn with_text(mut self, text: impl Into<String>) -> Self {
        self.children.push(Child::Text(text.into()));
        self
    }

    pub fn attribute(&self, ns: &str, local: &str) -> Option<&str> {
        self.attributes
            .iter()
            .find(|a| a.name.is(ns, local))
            .map(|a| a.value.as_str())
    }

    pub fn elements(&self) -> impl Iterator<Item = &XmlNode> {
        self.children.iter().filter_map(|c| match c {
            Child::Element(e) => Some(e),
            Child::Text(_) => None,
        })
    }

    pub fn elements_mut(&mut self) -> impl Iterator<Item = &mut XmlNode> {
        self.children.iter_mut().filter_map(|c| match c {
            Child::Element(e) => Some(e),
            Child::Text(_) => None,
        })
    }

    pub fn first_child(&self, ns: &str, local: &str) -> Option<&XmlNode> {
        self.elements().find(|e| e.name.is(ns, local))
    }

    pub fn first_child_mut(&mut self, ns: &str, local: &str) -> Option<&mut XmlNode> {
        self.elements_mut().find(|e| e.name.is(ns, local))
    }

    /// Concatenated text children (not descendants).
    pub fn text(&self) -> String {
        self.children
            .iter()
            .filter_map(|c| match c {
                Child::Text(t) => Some(t.as_str()),
                Child::Element(_) => None,
            })
            .collect()
    }

    /// Merges adjacent text children and drops empty ones, recursively.
    /// Parsing always yields normalized trees.
    pub fn normalize(&mut self) {
        let mut stack: Vec<&mut XmlNode> = vec![self];
        while let Some(node) = stack.pop() {
            let mut merged: Vec<Child> = Vec::with_capacity(node.children.len());
            for child in node.children.drain(..) {
                match (merged.last_mut(), child) {
                    (_, Child::Text(t)) if t.is_empty() => {}
                    (Some(Child::Text(prev)), Child::Text(t)) => prev.push_str(&t),
                    (_, c) => merged.push(c),
                }
            }
            node.children = merged;
            for child in node.children.iter_mut() {
                if let Child::Element(e) = child {
                    stack.push(e);
                }
            }
        }
    }
}

pub(crate) fn is_name_start(c: char) -> bool {
    c.is_ascii_alphabetic()
        || c == '_'
        || matches!(c,
            '\u{C0}'..='\u{D6}' | '\u{D8}'..='\u{F6}' | '\u{F8}'..='\u{2FF}'
            | '\u{370}'..='\u{37D}' | '\u{37F}'..='\u{1FFF}' | '\u{200C}'..='\u{200D}'
            | '\u{2070}'..='\u{218F}' | '\u{2C00}'..='\u{2FEF}' | '\u{3001}'..='\u{D7FF}'
            | '\u{F900}'..='\u{FDCF}' | '\u{FDF0}'..='\u{FFFD}' | '\u{10000}'..='\u{EFFFF}')
}

pub(crate) fn is_name_char(c: char) -> bool {
    is_name_start(c)
        || c.is_ascii_digit()
        || matches!(c, '-' | '.' | '\u{B7}' | '\u{300}'..='\u{36F}' | '\u{203F}'..='\u{2040}')
}

/// Non-colonized XML name.
pub fn is_ncname(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if is_name_start(c) => chars.all(is_name_char),
        _ => false,
    }
}
