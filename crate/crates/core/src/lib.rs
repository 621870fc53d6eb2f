//! Blocking and streaming signature of MTOM/XOP-packaged SOAP messages.
//!
//! The blocking path rebuilds the full XML infoset (base64 inlined) before it
//! can sign and send anything. The streaming path writes the envelope first
//! with a placeholder in its security header, digests each attachment while
//! it goes out, and sends the finished `ds:Signature` (optionally encrypted)
//! as the last MIME part. Both produce identical reference digests.

pub mod alloc_track;
pub mod bench;
pub mod config;
pub mod mime;
pub mod transport;
pub mod wssec;
pub mod xmlcore;
pub mod xop;

pub(crate) fn hex(bytes: &[u8]) -> String {
    use std::fmt::Write;
    bytes.iter().fold(String::with_capacity(bytes.len() * 2), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}
