use std::error::Error;
use std::io::{self, BufReader, Read, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::time::{Duration, Instant};

use super::http::Head;
use super::{throttled_sink, ChunkedWriter, Endpoint, ThrottleConfig, TimingSink, TransportError};

pub const CONNECT_TIMEOUT: Duration = Duration::from_secs(10);
const MAX_RESPONSE_BYTES: u64 = 1 << 20;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Response {
    pub status: u16,
    pub body: String,
}

impl Response {
    pub fn ok(body: impl Into<String>) -> Self {
        Response {
            status: 200,
            body: body.into(),
        }
    }

    /// `{"valid":false,"error":...}` with the given status.
    pub fn error(status: u16, message: &str) -> Self {
        Response {
            status,
            body: serde_json::json!({ "valid": false, "error": message }).to_string(),
        }
    }
}

/// Client-side clock readings for one upload.
#[derive(Clone, Copy, Debug)]
pub struct Timing {
    /// Before connecting.
    pub started: Instant,
    /// When the first body byte was handed to the socket.
    pub first_byte: Instant,
    /// When the last body byte (including the final chunk) was accepted by the socket.
    pub last_byte: Instant,
    /// When the response had been read in full.
    pub response_at: Instant,
    /// Body bytes produced, excluding chunk framing.
    pub body_bytes: u64,
    /// Bytes written after the request head, including chunk framing.
    pub wire_bytes: u64,
}

impl Timing {
    pub fn time_to_first_byte(&self) -> Duration {
        self.first_byte - self.started
    }

    pub fn transfer(&self) -> Duration {
        self.last_byte - self.first_byte
    }

    pub fn total(&self) -> Duration {
        self.response_at - self.started
    }
}

/// Posts one request whose body is written by `producer`.
///
/// The body is sent with chunked encoding as the producer writes it, through
/// the optional throttle, and the call returns once the server has replied.
/// `chunk_size` sets the chunk framing and socket write granularity.
pub fn send<T, E>(
    endpoint: &Endpoint,
    content_type: &str,
    chunk_size: usize,
    throttle: Option<ThrottleConfig>,
    producer: impl FnOnce(&mut dyn Write) -> Result<T, E>,
) -> Result<(Response, Timing, T), TransportError>
where
    E: Into<Box<dyn Error + Send + Sync>>,
{
    if content_type.contains(['\r', '\n']) {
        return Err(TransportError::Protocol("content type contains a line break".into()));
    }
    let started = Instant::now();
    let stream = connect(endpoint)?;
    let sink_err = TransportError::Sink;
    stream.set_nodelay(true).map_err(sink_err)?;

    let head = format!(
        "POST {} HTTP/1.1\r\nHost: {}\r\nContent-Type: {}\r\nTransfer-Encoding: chunked\r\nConnection: close\r\n\r\n",
        endpoint.path,
        endpoint.authority(),
        content_type
    );
    (&stream).write_all(head.as_bytes()).map_err(sink_err)?;

    let paced: Box<dyn Write> = match throttle {
        Some(config) => Box::new(throttled_sink(&stream, config)),
        None => Box::new(&stream),
    };
    let timed = TimingSink::new(paced);
    let times = timed.times();
    let mut body = ChunkedWriter::new(timed, chunk_size);
    let value = producer(&mut body).map_err(|e| TransportError::Producer(e.into()))?;
    let body_bytes = body.body_bytes();
    body.finish().map_err(sink_err)?;
    let times = *times.lock().expect("timing lock");

    let mut reader = BufReader::new(&stream);
    let response = read_response(&mut reader).map_err(|e| match e.kind() {
        io::ErrorKind::InvalidData => TransportError::Protocol(e.to_string()),
        _ => TransportError::Sink(e),
    })?;
    let response_at = Instant::now();
    let timing = Timing {
        started,
        first_byte: times.first.unwrap_or(response_at),
        last_byte: times.last.unwrap_or(response_at),
        response_at,
        body_bytes,
        wire_bytes: times.bytes,
    };
    Ok((response, timing, value))
}

fn connect(endpoint: &Endpoint) -> Result<TcpStream, TransportError> {
    let connect_err = |source| TransportError::Connect {
        addr: endpoint.authority(),
        source,
    };
    let mut last = io::Error::new(io::ErrorKind::NotFound, "no addresses");
    for addr in (endpoint.host.as_str(), endpoint.port).to_socket_addrs().map_err(connect_err)? {
        match TcpStream::connect_timeout(&addr, CONNECT_TIMEOUT) {
            Ok(stream) => return Ok(stream),
            Err(e) => last = e,
        }
    }
    Err(connect_err(last))
}

fn read_response(reader: &mut (impl io::BufRead + Send)) -> io::Result<Response> {
    let head = Head::read(reader)?;
    let mut status = head.start.splitn(3, ' ');
    let version = status.next().unwrap_or("");
    let code = status.next().and_then(|c| c.parse::<u16>().ok());
    let Some(code) = code.filter(|_| version.starts_with("HTTP/1.")) else {
        return Err(io::Error::new(io::ErrorKind::InvalidData, format!("bad status line {:?}", head.start)));
    };
    let mut body = Vec::new();
    head.body(reader)?.take(MAX_RESPONSE_BYTES).read_to_end(&mut body)?;
    let body = String::from_utf8(body)
        .map_err(|_| io::Error::new(io::ErrorKind::InvalidData, "response body is not UTF-8"))?;
    Ok(Response { status: code, body })
}
