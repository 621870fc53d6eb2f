//! multipart/related framing with bounded memory.
//!
//! The writer streams each body through a single chunk buffer; the reader
//! exposes each body as a pull stream and never holds more than one buffer
//! of body bytes. Boundaries are random rather than content-checked, so a
//! package can be emitted without a pre-pass over its attachments.

mod reader;
mod writer;

use std::fmt;
use std::io::{self, Read};

use rand::RngCore;

pub use reader::{BodyReader, PackageReader, ReadPart};
pub use writer::{write_package, PackageWriter};

/// Largest header block accepted per part.
pub const MAX_HEADER_BYTES: usize = 16 * 1024;

/// Sentinel that starts every generated boundary.
pub const BOUNDARY_PREFIX: &str = "=_";

#[derive(Debug, thiserror::Error)]
pub enum MimeError {
    #[error("sink error: {0}")]
    Sink(#[source] io::Error),
    #[error("body read error: {0}")]
    BodyRead(#[source] io::Error),
    #[error("missing boundary")]
    MissingBoundary,
    #[error("truncated package")]
    TruncatedPackage,
    #[error("malformed headers: {0}")]
    MalformedHeaders(String),
    #[error("malformed framing: {0}")]
    MalformedFraming(String),
    #[error("invalid boundary {0:?}")]
    InvalidBoundary(String),
    #[error("boundary occurs inside a part body")]
    BoundaryCollision,
    #[error("previous part body not consumed")]
    BodyNotConsumed,
    #[error("{0}")]
    Usage(&'static str),
}

impl MimeError {
    /// Maps reader-side failures into `io::Error` for the `Read` adapters.
    pub(crate) fn into_io(self) -> io::Error {
        match self {
            MimeError::TruncatedPackage => io::Error::new(io::ErrorKind::UnexpectedEof, self),
            MimeError::BodyRead(e) | MimeError::Sink(e) => e,
            other => io::Error::new(io::ErrorKind::InvalidData, other),
        }
    }

    /// Inverse of [`MimeError::into_io`] for errors that passed through a `Read`.
    pub(crate) fn from_io(err: io::Error) -> MimeError {
        if err.get_ref().map(|e| e.is::<MimeError>()).unwrap_or(false) {
            let kind = err.kind();
            match err.into_inner().map(|e| e.downcast::<MimeError>()) {
                Some(Ok(e)) => *e,
                _ => MimeError::BodyRead(io::Error::from(kind)),
            }
        } else if err.kind() == io::ErrorKind::UnexpectedEof {
            MimeError::TruncatedPackage
        } else {
            MimeError::BodyRead(err)
        }
    }
}

/// A multipart boundary: 16 to 60 characters of the MIME boundary alphabet.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Boundary(String);

impl Boundary {
    pub fn new(value: impl Into<String>) -> Result<Self, MimeError> {
        let value = value.into();
        let valid_len = (16..=60).contains(&value.len());
        let valid_chars = value.bytes().all(|b| {
            b.is_ascii_alphanumeric() || b"'()+_,-./:=? ".contains(&b)
        });
        if !valid_len || !valid_chars || value.ends_with(' ') {
            return Err(MimeError::InvalidBoundary(value));
        }
        Ok(Boundary(value))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Boundary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for Boundary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Boundary({})", self.0)
    }
}

/// `=_` followed by 128 random bits in hex (34 characters).
pub fn generate_boundary(entropy: &mut (impl RngCore + ?Sized)) -> Boundary {
    let mut bytes = [0u8; 16];
    entropy.fill_bytes(&mut bytes);
    Boundary(format!("{BOUNDARY_PREFIX}{}", crate::hex(&bytes)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TransferEncoding {
    Binary,
    Base64,
    EightBit,
}

impl TransferEncoding {
    pub fn as_str(self) -> &'static str {
        match self {
            TransferEncoding::Binary => "binary",
            TransferEncoding::Base64 => "base64",
            TransferEncoding::EightBit => "8bit",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "binary" => Some(TransferEncoding::Binary),
            "base64" => Some(TransferEncoding::Base64),
            "8bit" | "7bit" => Some(TransferEncoding::EightBit),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MimeHeaders {
    /// Stored without angle brackets. Empty only for a root part without an id.
    pub content_id: String,
    pub content_type: String,
    pub content_transfer_encoding: TransferEncoding,
}

impl MimeHeaders {
    pub fn new(
        content_id: impl Into<String>,
        content_type: impl Into<String>,
        content_transfer_encoding: TransferEncoding,
    ) -> Result<Self, MimeError> {
        let headers = MimeHeaders {
            content_id: content_id.into(),
            content_type: content_type.into(),
            content_transfer_encoding,
        };
        headers.validate()?;
        Ok(headers)
    }

    pub fn binary(content_id: impl Into<String>, content_type: impl Into<String>) -> Result<Self, MimeError> {
        Self::new(content_id, content_type, TransferEncoding::Binary)
    }

    fn validate(&self) -> Result<(), MimeError> {
        if self
            .content_id
            .bytes()
            .any(|b| b.is_ascii_whitespace() || b == b'<' || b == b'>' || b.is_ascii_control())
        {
            return Err(MimeError::MalformedHeaders(format!("bad Content-ID {:?}", self.content_id)));
        }
        if !is_media_type(&self.content_type) {
            return Err(MimeError::MalformedHeaders(format!(
                "bad Content-Type {:?}",
                self.content_type
            )));
        }
        Ok(())
    }

    /// Header block exactly as the writer emits it, blank line included.
    pub fn to_wire(&self) -> Vec<u8> {
        let mut out = format!(
            "Content-Type: {}\r\nContent-Transfer-Encoding: {}\r\n",
            self.content_type,
            self.content_transfer_encoding.as_str()
        );
        if !self.content_id.is_empty() {
            out.push_str(&format!("Content-ID: <{}>\r\n", self.content_id));
        }
        out.push_str("\r\n");
        out.into_bytes()
    }

    /// Parses a header block (lines without the terminating blank line).
    /// LF-only line ends and folded continuation lines are accepted.
    pub(crate) fn parse_block(block: &[u8]) -> Result<Self, MimeError> {
        let text = std::str::from_utf8(block)
            .map_err(|_| MimeError::MalformedHeaders("non-UTF-8 header".into()))?;
        let mut fields: Vec<(String, String)> = Vec::new();
        for line in text.split('\n') {
            let line = line.strip_suffix('\r').unwrap_or(line);
            if line.is_empty() {
                continue;
            }
            if line.starts_with([' ', '\t']) {
                match fields.last_mut() {
                    Some((_, value)) => {
                        value.push(' ');
                        value.push_str(line.trim());
                        continue;
                    }
                    None => return Err(MimeError::MalformedHeaders("continuation without field".into())),
                }
            }
            let (name, value) = line
                .split_once(':')
                .ok_or_else(|| MimeError::MalformedHeaders(format!("no colon in {line:?}")))?;
            if name.is_empty() || !name.bytes().all(|b| b.is_ascii_graphic()) {
                return Err(MimeError::MalformedHeaders(format!("bad field name {name:?}")));
            }
            fields.push((name.to_ascii_lowercase(), value.trim().to_owned()));
        }

        let mut content_type = None;
        let mut content_id = String::new();
        let mut cte = TransferEncoding::Binary;
        for (name, value) in fields {
            match name.as_str() {
                "content-type" => content_type = Some(value),
                "content-id" => {
                    content_id = value
                        .strip_prefix('<')
                        .and_then(|v| v.strip_suffix('>'))
                        .unwrap_or(&value)
                        .to_owned();
                    if content_id.is_empty() {
                        return Err(MimeError::MalformedHeaders("empty Content-ID".into()));
                    }
                }
                "content-transfer-encoding" => {
                    cte = TransferEncoding::parse(&value).ok_or_else(|| {
                        MimeError::MalformedHeaders(format!("unsupported transfer encoding {value:?}"))
                    })?
                }
                _ => {}
            }
        }
        let content_type =
            content_type.ok_or_else(|| MimeError::MalformedHeaders("missing Content-Type".into()))?;
        Self::new(content_id, content_type, cte)
    }
}

fn is_token(s: &str) -> bool {
    !s.is_empty()
        && s.bytes()
            .all(|b| b.is_ascii_graphic() && !b"()<>@,;:\\\"/[]?=".contains(&b))
}

fn is_media_type(s: &str) -> bool {
    let essence = s.split(';').next().unwrap_or("").trim();
    match essence.split_once('/') {
        Some((t, sub)) => is_token(t) && is_token(sub),
        None => false,
    }
}

/// One part of a package: headers plus a body that is read once.
pub struct MimePart {
    pub headers: MimeHeaders,
    pub body: Box<dyn Read + Send>,
}

impl MimePart {
    pub fn new(headers: MimeHeaders, body: impl Read + Send + 'static) -> Self {
        MimePart {
            headers,
            body: Box::new(body),
        }
    }

    pub fn from_bytes(headers: MimeHeaders, body: Vec<u8>) -> Self {
        Self::new(headers, io::Cursor::new(body))
    }
}

impl fmt::Debug for MimePart {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MimePart").field("headers", &self.headers).finish_non_exhaustive()
    }
}

/// Value for the package-level `Content-Type` header.
pub fn package_content_type(boundary: &Boundary, root_content_id: &str) -> String {
    format!(
        "multipart/related; type=\"application/xop+xml\"; boundary=\"{boundary}\"; start=\"<{root_content_id}>\""
    )
}

/// Extracts the `boundary` parameter from a multipart content type.
pub fn boundary_from_content_type(content_type: &str) -> Result<Boundary, MimeError> {
    for param in content_type.split(';').skip(1) {
        if let Some((name, value)) = param.split_once('=') {
            if name.trim().eq_ignore_ascii_case("boundary") {
                let value = value.trim();
                let value = value
                    .strip_prefix('"')
                    .and_then(|v| v.strip_suffix('"'))
                    .unwrap_or(value);
                return Boundary::new(value);
            }
        }
    }
    Err(MimeError::MissingBoundary)
}
