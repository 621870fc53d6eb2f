//! Loopback client and server: verification over the wire plus failure
//! handling and throttled timing.

mod common;

use std::io::{self, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::{mpsc, Arc, Mutex};
use std::thread;
use std::time::Duration;

use common::{keys, payload, SIGNED_MODES};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use streamsign::alloc_track::{self, TrackingAllocator};
use streamsign::mime::{package_content_type, Boundary, MimeError, PackageReader};
use streamsign::transport::{
    send, verifying_handler, Endpoint, Handler, Request, Response, Server, ServerHandle, ThrottleConfig,
    TransportError,
};
use streamsign::wssec::{
    sign_blocking_with, sign_streaming_with, Mode, SignOptions, SignedMessage, VerifyOptions, WssecError,
};
use streamsign::xop::{BinaryContent, ElementPath, ROOT_CONTENT_ID};

#[global_allocator]
static ALLOC: TrackingAllocator = TrackingAllocator;

const CHUNK: usize = 64 * 1024;

fn boundary(tag: &str) -> Boundary {
    Boundary::new(format!("=_transport-{tag}-0123456789")).unwrap()
}

fn content_type(b: &Boundary) -> String {
    package_content_type(b, ROOT_CONTENT_ID)
}

fn verifying_server() -> ServerHandle {
    let handler = verifying_handler(keys().verifier(), VerifyOptions::default(), false);
    Server::serve_on("127.0.0.1:0", "/upload", handler).unwrap()
}

fn options(b: &Boundary) -> SignOptions {
    SignOptions {
        boundary: Some(b.clone()),
        ..SignOptions::default()
    }
}

fn sign_into(
    mode: Mode,
    binaries: Vec<(ElementPath, BinaryContent)>,
    opts: &SignOptions,
    sink: &mut dyn Write,
) -> Result<SignedMessage, WssecError> {
    let mut rng = ChaCha8Rng::seed_from_u64(binaries.len() as u64);
    let (envelope, _) = common::random_envelope(&mut rng, binaries.len());
    match mode {
        Mode::Blocking => sign_blocking_with(envelope, binaries, keys(), opts, sink),
        Mode::StreamingLax => sign_streaming_with(envelope, binaries, keys(), false, opts, sink),
        Mode::StreamingStrict => sign_streaming_with(envelope, binaries, keys(), true, opts, sink),
        Mode::Unsigned => unreachable!(),
    }
}

fn binaries(sizes: &[usize], seed: u64) -> Vec<(ElementPath, BinaryContent)> {
    let mut rng = ChaCha8Rng::seed_from_u64(sizes.len() as u64);
    let (_, paths) = common::random_envelope(&mut rng, sizes.len());
    let payloads: Vec<_> = sizes.iter().enumerate().map(|(i, &n)| payload(n, seed + i as u64)).collect();
    common::designations(&paths, &payloads, seed)
}

fn json(body: &str) -> serde_json::Value {
    serde_json::from_str(body).unwrap()
}

#[test]
fn signed_uploads_verify_over_the_wire() {
    let server = verifying_server();
    for (i, mode) in SIGNED_MODES.into_iter().enumerate() {
        let b = boundary(mode.as_str());
        let opts = options(&b);
        let (response, timing, msg) = send(server.endpoint(), &content_type(&b), CHUNK, None, |sink| {
            sign_into(mode, binaries(&[300_000, 5], 40 + i as u64), &opts, sink)
        })
        .unwrap();
        assert_eq!(response.status, 200, "{mode}: {}", response.body);
        let report = json(&response.body);
        assert_eq!(report["valid"], true);
        assert_eq!(report["mode"], mode.as_str());
        assert_eq!(timing.body_bytes, msg.bytes_written);
        assert!(timing.wire_bytes > timing.body_bytes);
        assert!(timing.started <= timing.first_byte);
        assert!(timing.first_byte <= timing.last_byte);
        assert!(timing.last_byte <= timing.response_at);
    }
    assert_eq!(server.requests_served(), 3);
    server.shutdown();
}

fn signed_wire(mode: Mode, seed: u64) -> (Vec<u8>, String) {
    let b = boundary(&format!("w{seed}"));
    let mut wire = Vec::new();
    sign_into(mode, binaries(&[50_000], seed), &options(&b), &mut wire).unwrap();
    (wire, content_type(&b))
}

fn post(endpoint: &Endpoint, wire: &[u8], ct: &str) -> Response {
    send(endpoint, ct, CHUNK, None, |sink| sink.write_all(wire)).unwrap().0
}

#[test]
fn tampered_upload_is_rejected_with_report() {
    let server = verifying_server();
    let (mut wire, ct) = signed_wire(Mode::StreamingLax, 7);
    let n = wire.len();
    wire[n / 2] ^= 0x01;
    let response = post(server.endpoint(), &wire, &ct);
    assert_eq!(response.status, 400);
    let report = json(&response.body);
    assert_eq!(report["valid"], false);
}

#[test]
fn concurrent_uploads_are_independent() {
    let server = verifying_server();
    let endpoint = server.endpoint().clone();
    let (good, good_ct) = signed_wire(Mode::StreamingStrict, 11);
    let (mut bad, bad_ct) = signed_wire(Mode::Blocking, 12);
    let n = bad.len();
    bad[n - 200] ^= 0x20;
    // Both bodies are paced so the two connections overlap.
    let pace = ThrottleConfig::new(200_000.0, CHUNK as u64).unwrap();
    let uploads: Vec<_> = [(good, good_ct), (bad, bad_ct)]
        .into_iter()
        .map(|(wire, ct)| {
            let endpoint = endpoint.clone();
            thread::spawn(move || {
                send(&endpoint, &ct, 4096, Some(pace), |sink| sink.write_all(&wire)).unwrap()
            })
        })
        .collect();
    let results: Vec<_> = uploads.into_iter().map(|h| h.join().unwrap()).collect();
    let (good, bad) = (&results[0], &results[1]);
    assert!(good.1.first_byte < bad.1.last_byte && bad.1.first_byte < good.1.last_byte);
    assert_eq!(good.0.status, 200, "{}", good.0.body);
    assert_eq!(json(&good.0.body)["mode"], "streaming_strict");
    assert_eq!(bad.0.status, 400);
    assert_eq!(json(&bad.0.body)["mode"], "blocking");
    assert_eq!(server.requests_served(), 2);
}

#[test]
fn disconnect_mid_body_surfaces_as_truncated_package() {
    let b = boundary("cut");
    let (tx, rx) = mpsc::channel();
    let tx = Mutex::new(tx);
    let reader_boundary = b.clone();
    let handler: Handler = Arc::new(move |request: Request<'_>| {
        let mut reader = PackageReader::new(request.body, &reader_boundary, CHUNK).strict(true);
        let outcome = (|| -> Result<u64, MimeError> {
            let mut total = 0;
            while reader.next_part()?.is_some() {
                total += reader.skip_body()?;
            }
            Ok(total)
        })();
        tx.lock().unwrap().send(outcome).unwrap();
        Response::ok("{}")
    });
    let server = Server::serve_on("127.0.0.1:0", "/upload", handler).unwrap();

    let mut wire = Vec::new();
    sign_into(Mode::StreamingLax, binaries(&[200_000], 3), &options(&b), &mut wire).unwrap();
    let endpoint = server.endpoint();
    let mut stream = TcpStream::connect(endpoint.authority()).unwrap();
    write!(
        stream,
        "POST /upload HTTP/1.1\r\nHost: x\r\nContent-Type: {}\r\nTransfer-Encoding: chunked\r\n\r\n",
        content_type(&b)
    )
    .unwrap();
    let half = &wire[..wire.len() / 2];
    write!(stream, "{:x}\r\n", half.len()).unwrap();
    stream.write_all(half).unwrap();
    stream.write_all(b"\r\n").unwrap();
    drop(stream);

    let outcome = rx.recv_timeout(Duration::from_secs(30)).unwrap();
    assert!(matches!(outcome, Err(MimeError::TruncatedPackage)), "{outcome:?}");
    server.shutdown();
}

#[test]
fn unreachable_endpoint_is_connect_error() {
    let port = {
        let l = TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().port()
    };
    let endpoint = Endpoint::new("127.0.0.1", port, "/upload").unwrap();
    let err = send(&endpoint, "text/plain", CHUNK, None, |sink| sink.write_all(b"x")).unwrap_err();
    assert!(matches!(err, TransportError::Connect { .. }), "{err:?}");
}

#[test]
fn bind_conflict_is_bind_error() {
    let server = verifying_server();
    let err = Server::serve(server.endpoint(), verifying_handler(keys().verifier(), VerifyOptions::default(), false))
        .err()
        .unwrap();
    assert!(matches!(err, TransportError::Bind { .. }), "{err:?}");
}

#[test]
fn wrong_path_and_method() {
    let server = verifying_server();
    let e = server.endpoint();
    let other = Endpoint::new(e.host.clone(), e.port, "/elsewhere").unwrap();
    let response = send(&other, "text/plain", CHUNK, None, |sink| sink.write_all(b"abc")).unwrap().0;
    assert_eq!(response.status, 404);

    let mut stream = TcpStream::connect(e.authority()).unwrap();
    stream.write_all(b"GET /upload HTTP/1.1\r\nHost: x\r\n\r\n").unwrap();
    let mut reply = String::new();
    stream.read_to_string(&mut reply).unwrap();
    assert!(reply.starts_with("HTTP/1.1 405 "), "{reply}");
}

#[test]
fn producer_error_is_reported() {
    let server = verifying_server();
    let err = send(server.endpoint(), "text/plain", CHUNK, None, |sink| {
        sink.write_all(b"partial")?;
        Err::<(), _>(io::Error::other("source failed"))
    })
    .unwrap_err();
    assert!(matches!(err, TransportError::Producer(_)), "{err:?}");
}

fn draining_server() -> ServerHandle {
    let handler: Handler = Arc::new(|request: Request<'_>| {
        let n = io::copy(request.body, &mut io::sink()).unwrap();
        Response::ok(format!("{{\"bytes\":{n}}}"))
    });
    Server::serve_on("127.0.0.1:0", "/upload", handler).unwrap()
}

#[test]
fn one_mib_per_second_moves_ten_mib_in_ten_seconds() {
    const SIZE: u64 = 10 << 20;
    let server = draining_server();
    let throttle = ThrottleConfig::with_rate((1 << 20) as f64).unwrap();
    let (response, timing, ()) = send(server.endpoint(), "application/octet-stream", CHUNK, Some(throttle), |sink| {
        io::copy(&mut io::repeat(0x42).take(SIZE), sink).map(drop)
    })
    .unwrap();
    assert_eq!(json(&response.body)["bytes"], SIZE);
    let seconds = timing.transfer().as_secs_f64();
    assert!((10.0..=10.5).contains(&seconds), "{seconds}");
}

#[test]
fn throttle_lower_bound_at_100_mib() {
    const SIZE: u64 = 100 << 20;
    let server = draining_server();
    let rate = 12.5 * (1 << 20) as f64;
    let throttle = ThrottleConfig::with_rate(rate).unwrap();
    let (_, timing, ()) = send(server.endpoint(), "application/octet-stream", CHUNK, Some(throttle), |sink| {
        io::copy(&mut io::repeat(7).take(SIZE), sink).map(drop)
    })
    .unwrap();
    let seconds = timing.transfer().as_secs_f64();
    assert!(seconds >= 8.0, "{seconds}");
    let measured = timing.wire_bytes as f64 / seconds;
    assert!((measured / rate - 1.0).abs() <= 0.05, "rate {measured}");
}

#[test]
fn timing_grows_with_payload_under_fixed_throttle() {
    let server = draining_server();
    let throttle = ThrottleConfig::new(4.0 * (1 << 20) as f64, CHUNK as u64).unwrap();
    let mut previous = Duration::ZERO;
    for size in [256u64 << 10, 1 << 20, 2 << 20] {
        let (_, timing, ()) = send(server.endpoint(), "application/octet-stream", CHUNK, Some(throttle), |sink| {
            io::copy(&mut io::repeat(1).take(size), sink).map(drop)
        })
        .unwrap();
        let elapsed = timing.last_byte - timing.started;
        assert!(elapsed > previous, "{size}");
        previous = elapsed;
    }
}

#[test]
fn server_memory_per_connection_is_bounded() {
    const SIZE: u64 = 256 << 20;
    let (tx, rx) = mpsc::channel();
    let tx = Mutex::new(tx);
    let verifier = keys().verifier();
    let handler: Handler = Arc::new(move |request: Request<'_>| {
        let (result, peak) = alloc_track::measure(|| streamsign::wssec::verify(request.body, &verifier));
        let report = result.unwrap();
        tx.lock().unwrap().send((report.signature_valid, report.payload_bytes, peak)).unwrap();
        Response::ok(report.to_json())
    });
    let server = Server::serve_on("127.0.0.1:0", "/upload", handler).unwrap();
    let b = boundary("big");
    let opts = options(&b);
    let (response, _, _) = send(server.endpoint(), &content_type(&b), CHUNK, None, |sink| {
        let (_, paths) = common::random_envelope(&mut ChaCha8Rng::seed_from_u64(1), 1);
        let big = BinaryContent::new(io::repeat(0xEE).take(SIZE), "application/octet-stream").with_length(SIZE);
        sign_into(Mode::StreamingLax, vec![(paths[0].clone(), big)], &opts, sink)
    })
    .unwrap();
    assert_eq!(response.status, 200, "{}", response.body);
    let (valid, bytes, peak) = rx.recv().unwrap();
    assert!(valid);
    assert_eq!(bytes, SIZE);
    assert!(peak < 1 << 20, "server peak {peak}");
}
