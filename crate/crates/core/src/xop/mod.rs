//! XOP packaging: binary element content travels as raw MIME parts and the
//! element keeps an `xop:Include` pointing at the part by Content-ID.

mod base64;
mod package;

use std::io;

pub use base64::{
    base64_decode_stream, base64_encode_stream, decode as base64_decode, encode as base64_encode,
    encoded_len, Base64DecodeReader, Base64Decoder, Base64Encoder,
};
pub use package::{
    check_package, extract, extract_with, new_content_id, reconstitute, BinaryContent,
    ElementPath, XopPackage, CID_SUFFIX, ROOT_CONTENT_ID, ROOT_CONTENT_TYPE,
};
pub(crate) use package::{extract_using, href_content_id, node_at, node_at_mut, unique_content_ids};

use crate::mime::MimeError;
use crate::xmlcore::XmlError;

pub const XOP_NS: &str = "http://www.w3.org/2004/08/xop/include";
pub const XMIME_NS: &str = "http://www.w3.org/2005/05/xmlmime";

#[derive(Debug, thiserror::Error)]
pub enum XopError {
    #[error("invalid base64 at character {position}: {reason}")]
    InvalidBase64 { position: u64, reason: String },
    #[error("sink error: {0}")]
    Sink(#[source] io::Error),
    #[error("source error: {0}")]
    Source(#[source] io::Error),
    #[error("invalid element path {0:?}")]
    InvalidPath(String),
    #[error("no element at {0}")]
    PathNotFound(String),
    #[error("element designated twice: {0}")]
    DuplicatePath(String),
    #[error("element at {0} has element content and cannot hold binary data")]
    NotBinaryContent(String),
    #[error("unresolved reference {0}")]
    UnresolvedReference(String),
    #[error("duplicate Content-ID {0}")]
    DuplicateContentId(String),
    #[error("invalid package: {0}")]
    InvalidPackage(String),
    #[error(transparent)]
    Mime(#[from] MimeError),
    #[error(transparent)]
    Xml(#[from] XmlError),
}
