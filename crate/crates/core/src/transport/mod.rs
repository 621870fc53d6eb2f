//! Minimal HTTP/1.1 transport for MIME packages: one POST per connection
//! with a chunked body. The client paces its egress with a token bucket and
//! records first and last byte times.

mod client;
mod http;
mod server;
mod throttle;

use std::fmt;
use std::io;
use std::str::FromStr;

pub use client::{send, Response, Timing, CONNECT_TIMEOUT};
pub use http::{ChunkedReader, ChunkedWriter};
pub use server::{verifying_handler, Handler, Request, Server, ServerHandle, IDLE_TIMEOUT};
pub use throttle::{throttled_sink, DEFAULT_BUCKET_CHUNKS, ThrottleConfig, ThrottledSink, TimingSink, WriteTimes};

#[derive(Debug, thiserror::Error)]
pub enum TransportError {
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: String, source: io::Error },
    #[error("cannot connect to {addr}: {source}")]
    Connect { addr: String, source: io::Error },
    #[error("sink error: {0}")]
    Sink(#[source] io::Error),
    #[error("body producer failed: {0}")]
    Producer(#[source] Box<dyn std::error::Error + Send + Sync>),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("invalid endpoint {0:?}")]
    InvalidEndpoint(String),
    #[error("invalid throttle: {0}")]
    InvalidThrottle(String),
}

/// `host:port` plus a request path.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Endpoint {
    pub host: String,
    pub port: u16,
    pub path: String,
}

pub const DEFAULT_PATH: &str = "/upload";

impl Endpoint {
    pub fn new(host: impl Into<String>, port: u16, path: impl Into<String>) -> Result<Self, TransportError> {
        let e = Endpoint {
            host: host.into(),
            port,
            path: path.into(),
        };
        if e.host.is_empty() || e.port == 0 || !e.path.starts_with('/') || e.path.contains(char::is_whitespace) {
            return Err(TransportError::InvalidEndpoint(e.to_string()));
        }
        Ok(e)
    }

    pub fn authority(&self) -> String {
        if self.host.contains(':') {
            format!("[{}]:{}", self.host, self.port)
        } else {
            format!("{}:{}", self.host, self.port)
        }
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.authority(), self.path)
    }
}

/// Parses `host:port[/path]`; the path defaults to [`DEFAULT_PATH`].
impl FromStr for Endpoint {
    type Err = TransportError;

    fn from_str(s: &str) -> Result<Self, TransportError> {
        let invalid = || TransportError::InvalidEndpoint(s.to_owned());
        let s2 = s.strip_prefix("http://").unwrap_or(s);
        let (authority, path) = match s2.find('/') {
            Some(i) => (&s2[..i], &s2[i..]),
            None => (s2, DEFAULT_PATH),
        };
        let (host, port) = authority.rsplit_once(':').ok_or_else(invalid)?;
        let host = host.trim_start_matches('[').trim_end_matches(']');
        let port: u16 = port.parse().map_err(|_| invalid())?;
        Endpoint::new(host, port, path).map_err(|_| invalid())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoint_parsing() {
        let e: Endpoint = "127.0.0.1:8080".parse().unwrap();
        assert_eq!((e.host.as_str(), e.port, e.path.as_str()), ("127.0.0.1", 8080, DEFAULT_PATH));
        let e: Endpoint = "http://localhost:9/x/y".parse().unwrap();
        assert_eq!(e.path, "/x/y");
        assert_eq!(e.to_string(), "localhost:9/x/y");
        let e: Endpoint = "[::1]:5".parse().unwrap();
        assert_eq!(e.authority(), "[::1]:5");
        for bad in ["localhost", "h:0", "h:70000", ":80", "h:x"] {
            assert!(bad.parse::<Endpoint>().is_err(), "{bad}");
        }
    }
}
