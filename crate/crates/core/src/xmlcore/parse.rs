use super::{is_name_char, is_name_start, Attribute, Child, XmlError, XmlName, XmlNode, XML_NAMESPACE};

/// Deepest element nesting accepted by [`parse`].
pub const MAX_DEPTH: usize = 1024;

/// Parses a single-rooted UTF-8 document.
///
/// DTDs and processing instructions are rejected, as is any encoding
/// declaration other than UTF-8. Comments are dropped. Entity references are
/// limited to the five predefined ones plus character references.
pub fn parse(input: &[u8]) -> Result<XmlNode, XmlError> {
    let text = std::str::from_utf8(input).map_err(|e| XmlError::MalformedXml {
        position: e.valid_up_to(),
        reason: "invalid UTF-8".into(),
    })?;
    Parser { src: text, pos: 0 }.document()
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
}

struct Open {
    node: XmlNode,
    raw_name: String,
    bindings_before: usize,
}

impl<'a> Parser<'a> {
    fn malformed<T>(&self, reason: impl Into<String>) -> Result<T, XmlError> {
        Err(XmlError::MalformedXml {
            position: self.pos,
            reason: reason.into(),
        })
    }

    fn unsupported<T>(&self, construct: impl Into<String>) -> Result<T, XmlError> {
        Err(XmlError::UnsupportedConstruct {
            position: self.pos,
            construct: construct.into(),
        })
    }

    fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    fn starts_with(&self, s: &str) -> bool {
        self.rest().starts_with(s)
    }

    fn peek(&self) -> Option<char> {
        self.rest().chars().next()
    }

    fn skip_ws(&mut self) {
        let trimmed = self.rest().trim_start_matches([' ', '\t', '\r', '\n']);
        self.pos = self.src.len() - trimmed.len();
    }

    fn expect(&mut self, s: &str) -> Result<(), XmlError> {
        if self.starts_with(s) {
            self.pos += s.len();
            Ok(())
        } else {
            self.malformed(format!("expected {s:?}"))
        }
    }

    fn document(mut self) -> Result<XmlNode, XmlError> {
        if self.starts_with("\u{FEFF}") {
            self.pos += 3;
        }
        if self.starts_with("<?xml") && self.rest()[5..].starts_with([' ', '\t', '\r', '\n']) {
            self.xml_declaration()?;
        }
        self.misc()?;
        if !self.starts_with("<") {
            return self.malformed("expected root element");
        }
        let root = self.element_tree()?;
        self.misc()?;
        if self.pos != self.src.len() {
            return self.malformed("content after root element");
        }
        Ok(root)
    }

    fn xml_declaration(&mut self) -> Result<(), XmlError> {
        let end = match self.rest().find("?>") {
            Some(end) => end,
            None => return self.malformed("unterminated XML declaration"),
        };
        let decl = &self.rest()[5..end];
        if let Some(idx) = decl.find("encoding") {
            let value = decl[idx + 8..]
                .trim_start()
                .strip_prefix('=')
                .map(|v| v.trim_start())
                .and_then(|v| {
                    let quote = v.chars().next()?;
                    if quote != '"' && quote != '\'' {
                        return None;
                    }
                    v[1..].split(quote).next()
                });
            match value {
                Some(enc) if enc.eq_ignore_ascii_case("utf-8") => {}
                Some(enc) => return self.unsupported(format!("encoding {enc}")),
                None => return self.malformed("bad encoding declaration"),
            }
        }
        self.pos += end + 2;
        Ok(())
    }

    /// Whitespace and comments outside the root element.
    fn misc(&mut self) -> Result<(), XmlError> {
        loop {
            self.skip_ws();
            if self.starts_with("<!--") {
                self.comment()?;
            } else if self.starts_with("<!DOCTYPE") {
                return self.unsupported("DTD");
            } else if self.starts_with("<?") {
                return self.unsupported("processing instruction");
            } else {
                return Ok(());
            }
        }
    }

    fn comment(&mut self) -> Result<(), XmlError> {
        self.pos += 4;
        match self.rest().find("--") {
            Some(i) if self.rest()[i..].starts_with("-->") => {
                self.pos += i + 3;
                Ok(())
            }
            Some(_) => self.malformed("'--' inside comment"),
            None => self.malformed("unterminated comment"),
        }
    }

    fn name(&mut self) -> Result<&'a str, XmlError> {
        let start = self.pos;
        let mut chars = self.rest().char_indices();
        match chars.next() {
            Some((_, c)) if is_name_start(c) || c == ':' => {}
            _ => return self.malformed("expected name"),
        }
        let len = chars
            .find(|&(_, c)| !(is_name_char(c) || c == ':'))
            .map(|(i, _)| i)
            .unwrap_or(self.src.len() - start);
        self.pos += len;
        Ok(&self.src[start..start + len])
    }

    fn element_tree(&mut self) -> Result<XmlNode, XmlError> {
        // (prefix, uri); "" is the default namespace.
        let mut bindings: Vec<(String, String)> = Vec::new();
        let mut stack: Vec<Open> = Vec::new();
        let mut text = String::new();

        loop {
            if self.pos >= self.src.len() {
                return self.malformed("unexpected end of input");
            }
            if !self.starts_with("<") {
                self.char_data(&mut text)?;
                continue;
            }
            if self.starts_with("<!--") {
                self.comment()?;
            } else if self.starts_with("<![CDATA[") {
                self.pos += 9;
                match self.rest().find("]]>") {
                    Some(end) => {
                        push_normalized(&mut text, &self.rest()[..end]);
                        self.pos += end + 3;
                    }
                    None => return self.malformed("unterminated CDATA section"),
                }
            } else if self.starts_with("<?") {
                return self.unsupported("processing instruction");
            } else if self.starts_with("<!") {
                return self.unsupported("markup declaration");
            } else if self.starts_with("</") {
                flush_text(&mut stack, &mut text);
                self.pos += 2;
                let name = self.name()?;
                self.skip_ws();
                self.expect(">")?;
                let open = match stack.pop() {
                    Some(open) => open,
                    None => return self.malformed("unbalanced end tag"),
                };
                if open.raw_name != name {
                    return self.malformed(format!("end tag {name} does not match {}", open.raw_name));
                }
                bindings.truncate(open.bindings_before);
                match stack.last_mut() {
                    Some(parent) => parent.node.children.push(Child::Element(open.node)),
                    None => return Ok(open.node),
                }
            } else {
                flush_text(&mut stack, &mut text);
                let (open, empty) = self.start_tag(&mut bindings)?;
                if stack.len() >= MAX_DEPTH {
                    return self.malformed(format!("nesting deeper than {MAX_DEPTH}"));
                }
                if empty {
                    bindings.truncate(open.bindings_before);
                    match stack.last_mut() {
                        Some(parent) => parent.node.children.push(Child::Element(open.node)),
                        None => return Ok(open.node),
                    }
                } else {
                    stack.push(open);
                }
            }
            if stack.is_empty() {
                return self.malformed("text outside root element");
            }
        }
    }

    fn start_tag(&mut self, bindings: &mut Vec<(String, String)>) -> Result<(Open, bool), XmlError> {
        let tag_start = self.pos;
        self.pos += 1;
        let raw_name = self.name()?;
        let bindings_before = bindings.len();
        let mut raw_attrs: Vec<(&'a str, String)> = Vec::new();
        let empty = loop {
            let had_ws = self.pos;
            self.skip_ws();
            if self.starts_with("/>") {
                self.pos += 2;
                break true;
            }
            if self.starts_with(">") {
                self.pos += 1;
                break false;
            }
            if had_ws == self.pos {
                return self.malformed("expected whitespace before attribute");
            }
            let name = self.name()?;
            self.skip_ws();
            self.expect("=")?;
            self.skip_ws();
            let value = self.attr_value()?;
            if raw_attrs.iter().any(|(n, _)| *n == name) {
                return self.malformed(format!("duplicate attribute {name}"));
            }
            raw_attrs.push((name, value));
        };

        let mut attrs = Vec::new();
        for (name, value) in raw_attrs {
            if name == "xmlns" {
                if value == XML_NAMESPACE {
                    return self.malformed("xml namespace bound as default");
                }
                bindings.push((String::new(), value));
            } else if let Some(prefix) = name.strip_prefix("xmlns:") {
                if value.is_empty() {
                    return self.malformed(format!("empty namespace for prefix {prefix}"));
                }
                if prefix == "xmlns" || (prefix == "xml") != (value == XML_NAMESPACE) {
                    return self.malformed(format!("illegal binding for prefix {prefix}"));
                }
                bindings.push((prefix.to_owned(), value));
            } else {
                attrs.push((name, value));
            }
        }

        let element_name = self.resolve(raw_name, bindings, true, tag_start)?;
        let mut node = XmlNode::new(element_name);
        for (raw, value) in attrs {
            let name = self.resolve(raw, bindings, false, tag_start)?;
            if node.attributes.iter().any(|a| a.name.is(name.namespace_uri(), name.local_name())) {
                return self.malformed(format!("duplicate attribute {raw}"));
            }
            node.attributes.push(Attribute { name, value });
        }
        Ok((
            Open {
                node,
                raw_name: raw_name.to_owned(),
                bindings_before,
            },
            empty,
        ))
    }

    fn resolve(
        &self,
        raw: &str,
        bindings: &[(String, String)],
        is_element: bool,
        position: usize,
    ) -> Result<XmlName, XmlError> {
        let (prefix, local) = match raw.split_once(':') {
            Some((p, l)) => (p, l),
            None => ("", raw),
        };
        let uri = if prefix == "xml" {
            XML_NAMESPACE
        } else if prefix.is_empty() && !is_element {
            ""
        } else {
            match bindings.iter().rev().find(|(p, _)| p == prefix) {
                Some((_, uri)) => uri.as_str(),
                None if prefix.is_empty() => "",
                None => {
                    return Err(XmlError::MalformedXml {
                        position,
                        reason: format!("unbound prefix {prefix}"),
                    })
                }
            }
        };
        XmlName::new(prefix, local, uri).map_err(|_| XmlError::MalformedXml {
            position,
            reason: format!("invalid name {raw}"),
        })
    }

    fn attr_value(&mut self) -> Result<String, XmlError> {
        let quote = match self.peek() {
            Some(q @ ('"' | '\'')) => q,
            _ => return self.malformed("expected quoted attribute value"),
        };
        self.pos += 1;
        let mut value = String::new();
        loop {
            let rest = self.rest();
            let stop = match rest.find([quote, '&', '<']) {
                Some(i) => i,
                None => return self.malformed("unterminated attribute value"),
            };
            // Line ends are normalized first, then literal whitespace becomes a space.
            let mut run = String::new();
            push_normalized(&mut run, &rest[..stop]);
            value.extend(run.chars().map(|c| match c {
                '\t' | '\n' => ' ',
                c => c,
            }));
            self.pos += stop;
            match self.peek() {
                Some('&') => {
                    let c = self.reference()?;
                    value.push(c);
                }
                Some('<') => return self.malformed("'<' in attribute value"),
                _ => {
                    self.pos += 1;
                    return Ok(value);
                }
            }
        }
    }

    fn char_data(&mut self, text: &mut String) -> Result<(), XmlError> {
        let rest = self.rest();
        let stop = rest.find(['<', '&']).unwrap_or(rest.len());
        if rest[..stop].contains("]]>") {
            return self.malformed("']]>' in character data");
        }
        push_normalized(text, &rest[..stop]);
        self.pos += stop;
        if self.starts_with("&") {
            let c = self.reference()?;
            text.push(c);
        }
        Ok(())
    }

    fn reference(&mut self) -> Result<char, XmlError> {
        let rest = self.rest();
        let end = match rest.find(';') {
            Some(end) if end <= 12 => end,
            _ => return self.malformed("unterminated reference"),
        };
        let body = &rest[1..end];
        let c = match body {
            "lt" => '<',
            "gt" => '>',
            "amp" => '&',
            "quot" => '"',
            "apos" => '\'',
            _ => {
                let code = if let Some(hex) = body.strip_prefix("#x") {
                    u32::from_str_radix(hex, 16).ok()
                } else if let Some(dec) = body.strip_prefix('#') {
                    dec.parse::<u32>().ok()
                } else {
                    return self.unsupported(format!("entity reference &{body};"));
                };
                match code.and_then(char::from_u32) {
                    Some(c) if is_xml_char(c) => c,
                    _ => return self.malformed(format!("bad character reference &{body};")),
                }
            }
        };
        self.pos += end + 1;
        Ok(c)
    }
}

fn is_xml_char(c: char) -> bool {
    matches!(c, '\t' | '\n' | '\r' | '\u{20}'..='\u{D7FF}' | '\u{E000}'..='\u{FFFD}' | '\u{10000}'..)
}

/// Line-end normalization: CRLF and lone CR become LF.
fn push_normalized(out: &mut String, s: &str) {
    if !s.contains('\r') {
        out.push_str(s);
        return;
    }
    out.push_str(&s.replace("\r\n", "\n").replace('\r', "\n"));
}

fn flush_text(stack: &mut [Open], text: &mut String) {
    if text.is_empty() {
        return;
    }
    if let Some(top) = stack.last_mut() {
        match top.node.children.last_mut() {
            Some(Child::Text(prev)) => prev.push_str(text),
            _ => top.node.children.push(Child::Text(std::mem::take(text))),
        }
    }
    text.clear();
}
