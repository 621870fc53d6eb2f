use std::io::{self, BufReader, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use super::http::Head;
use super::{Endpoint, Response, TransportError};
use crate::wssec::{verify_with, KeyMaterial, Mode, VerifyOptions};

/// A connection that stays silent this long is dropped.
pub const IDLE_TIMEOUT: Duration = Duration::from_secs(300);

/// An incoming POST. `body` yields the de-chunked request body; a client
/// that disconnects early shows up as an `UnexpectedEof` read error.
pub struct Request<'a> {
    pub path: &'a str,
    pub content_type: Option<&'a str>,
    pub body: &'a mut (dyn Read + Send),
}

pub type Handler = Arc<dyn for<'a> Fn(Request<'a>) -> Response + Send + Sync>;

struct Shared {
    stop: AtomicBool,
    served: AtomicU64,
    workers: Mutex<Vec<JoinHandle<()>>>,
}

/// Listening server. Each connection gets its own thread and carries a
/// single request.
pub struct Server;

impl Server {
    /// Binds `endpoint` and starts accepting.
    pub fn serve(endpoint: &Endpoint, handler: Handler) -> Result<ServerHandle, TransportError> {
        Self::serve_on(&endpoint.authority(), &endpoint.path, handler)
    }

    /// Like [`Server::serve`] but takes a socket address, so port 0 picks a free port.
    pub fn serve_on(addr: &str, path: &str, handler: Handler) -> Result<ServerHandle, TransportError> {
        let bind_err = |source| TransportError::Bind {
            addr: addr.to_owned(),
            source,
        };
        let addrs: Vec<SocketAddr> = addr.to_socket_addrs().map_err(bind_err)?.collect();
        let listener = TcpListener::bind(&addrs[..]).map_err(bind_err)?;
        let local = listener.local_addr().map_err(bind_err)?;
        let endpoint = Endpoint::new(local.ip().to_string(), local.port(), path)?;
        let shared = Arc::new(Shared {
            stop: AtomicBool::new(false),
            served: AtomicU64::new(0),
            workers: Mutex::new(Vec::new()),
        });
        let accept = {
            let shared = Arc::clone(&shared);
            let path = endpoint.path.clone();
            thread::Builder::new()
                .name("streamsign-accept".into())
                .spawn(move || accept_loop(listener, path, handler, shared))
                .map_err(bind_err)?
        };
        Ok(ServerHandle {
            endpoint,
            local,
            shared,
            accept: Some(accept),
        })
    }
}

pub struct ServerHandle {
    endpoint: Endpoint,
    local: SocketAddr,
    shared: Arc<Shared>,
    accept: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn endpoint(&self) -> &Endpoint {
        &self.endpoint
    }

    /// Requests fully received and answered, whatever the status.
    pub fn requests_served(&self) -> u64 {
        self.shared.served.load(Ordering::SeqCst)
    }

    /// Stops accepting and waits for in-flight requests.
    pub fn shutdown(mut self) {
        self.stop();
    }

    /// Serves until the process exits.
    pub fn wait(mut self) {
        if let Some(accept) = self.accept.take() {
            let _ = accept.join();
        }
    }

    fn stop(&mut self) {
        let Some(accept) = self.accept.take() else {
            return;
        };
        self.shared.stop.store(true, Ordering::SeqCst);
        // Wake the blocking accept.
        let _ = TcpStream::connect_timeout(&self.local, Duration::from_secs(1));
        let _ = accept.join();
        let workers = std::mem::take(&mut *self.shared.workers.lock().expect("worker list"));
        for w in workers {
            let _ = w.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop();
    }
}

fn accept_loop(listener: TcpListener, path: String, handler: Handler, shared: Arc<Shared>) {
    let path: Arc<str> = path.into();
    for stream in listener.incoming() {
        if shared.stop.load(Ordering::SeqCst) {
            break;
        }
        let Ok(stream) = stream else { continue };
        let (handler, path, worker_shared) = (Arc::clone(&handler), Arc::clone(&path), Arc::clone(&shared));
        let spawned = thread::Builder::new()
            .name("streamsign-conn".into())
            .spawn(move || {
                let _ = handle_connection(&stream, &path, &*handler, &worker_shared.served);
                let _ = stream.shutdown(Shutdown::Both);
            });
        if let Ok(worker) = spawned {
            let mut workers = shared.workers.lock().expect("worker list");
            workers.retain(|w| !w.is_finished());
            workers.push(worker);
        }
    }
}

fn handle_connection(
    stream: &TcpStream,
    path: &str,
    handler: &(dyn for<'a> Fn(Request<'a>) -> Response + Send + Sync),
    served: &AtomicU64,
) -> io::Result<()> {
    stream.set_read_timeout(Some(IDLE_TIMEOUT))?;
    stream.set_nodelay(true)?;
    let mut reader = BufReader::with_capacity(crate::config::chunk_size(), stream);
    let head = match Head::read(&mut reader) {
        Ok(head) => head,
        Err(e) if e.kind() == io::ErrorKind::InvalidData => {
            return write_response(stream, &Response::error(400, &e.to_string()));
        }
        Err(e) => return Err(e),
    };
    let mut parts = head.start.split(' ');
    let (method, target) = (parts.next().unwrap_or(""), parts.next().unwrap_or(""));
    let mut body = match head.body(&mut reader) {
        Ok(body) => body,
        Err(e) => return write_response(stream, &Response::error(400, &e.to_string())),
    };
    let response = if method != "POST" {
        Response::error(405, "method not allowed")
    } else if target != path {
        Response::error(404, "not found")
    } else {
        handler(Request {
            path: target,
            content_type: head.header("content-type"),
            body: &mut body,
        })
    };
    // Whatever the handler left unread must arrive before the reply.
    io::copy(&mut body, &mut io::sink())?;
    served.fetch_add(1, Ordering::SeqCst);
    write_response(stream, &response)
}

fn write_response(mut stream: &TcpStream, response: &Response) -> io::Result<()> {
    let head = format!(
        "HTTP/1.1 {} {}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
        response.status,
        reason(response.status),
        response.body.len()
    );
    stream.write_all(head.as_bytes())?;
    stream.write_all(response.body.as_bytes())?;
    stream.flush()
}

fn reason(status: u16) -> &'static str {
    match status {
        200 => "OK",
        400 => "Bad Request",
        404 => "Not Found",
        405 => "Method Not Allowed",
        _ => "Unknown",
    }
}

/// Handler that verifies each upload with `keys` and answers with the
/// one-line JSON report: 200 when the signature is valid, 400 otherwise.
/// Unsigned messages pass only when `accept_unsigned` is set.
pub fn verifying_handler(keys: KeyMaterial, options: VerifyOptions, accept_unsigned: bool) -> Handler {
    Arc::new(move |request: Request<'_>| match verify_with(request.body, &keys, &options) {
        Ok(report) => {
            let ok = report.signature_valid || (accept_unsigned && report.mode_detected == Mode::Unsigned);
            Response {
                status: if ok { 200 } else { 400 },
                body: report.to_json(),
            }
        }
        Err(e) => Response::error(400, &e.to_string()),
    })
}
