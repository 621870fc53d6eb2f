use std::io::{self, Read, Write};
use std::time::{Duration, Instant};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{median, BenchConfig, BenchError, BenchReport, BenchRow};
use crate::alloc_track;
use crate::mime::{package_content_type, Boundary};
use crate::transport::{send, Endpoint, TransportError};
use crate::wssec::{
    digest_reference_streaming, sign_blocking_with, sign_streaming_with, DigestAlgorithm, KeyMaterial, Mode,
    SignOptions, SOAP12_NS,
};
use crate::xmlcore::{canonical_tags, XmlName, XmlNode};
use crate::xop::{extract_with, node_at, BinaryContent, ElementPath, ROOT_CONTENT_ID};

/// Request path the benchmark posts to.
pub const BENCH_PATH: &str = "/upload";

const PAYLOAD_PATH: &str = "/Envelope/Body/Upload/Data";

/// Deterministic pseudorandom byte stream of a fixed length, generated on
/// the fly so the payload itself never occupies memory.
pub struct SeededPayload {
    rng: ChaCha8Rng,
    block: Box<[u8; BLOCK]>,
    pos: usize,
    remaining: u64,
}

const BLOCK: usize = 4096;

impl SeededPayload {
    pub fn new(seed: u64, len: u64) -> Self {
        SeededPayload {
            rng: ChaCha8Rng::seed_from_u64(seed),
            block: Box::new([0; BLOCK]),
            pos: BLOCK,
            remaining: len,
        }
    }
}

// Whole blocks are drawn from the generator so the byte stream does not
// depend on read sizes.
impl Read for SeededPayload {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        let want = buf.len().min(self.remaining.min(usize::MAX as u64) as usize);
        let mut done = 0;
        while done < want {
            if self.pos == BLOCK {
                self.rng.fill_bytes(&mut self.block[..]);
                self.pos = 0;
            }
            let n = (want - done).min(BLOCK - self.pos);
            buf[done..done + n].copy_from_slice(&self.block[self.pos..self.pos + n]);
            self.pos += n;
            done += n;
        }
        self.remaining -= want as u64;
        Ok(want)
    }
}

/// SOAP 1.2 upload request with one `Data` element to carry the payload.
pub fn bench_envelope() -> (XmlNode, ElementPath) {
    let soap = |local: &str| XmlNode::new(XmlName::new("soap", local, SOAP12_NS).expect("valid name"));
    let app = |local: &str| XmlNode::new(XmlName::new("b", local, "urn:streamsign:bench").expect("valid name"));
    let envelope = soap("Envelope").with_child(soap("Body").with_child(
        app("Upload")
            .with_child(app("Name").with_text("payload.bin"))
            .with_child(XmlNode::new(XmlName::local("Data").expect("valid name"))),
    ));
    (envelope, PAYLOAD_PATH.parse().expect("valid path"))
}

fn payload_seed(seed: u64, size: u64) -> u64 {
    seed ^ size.rotate_left(32)
}

fn binaries(config: &BenchConfig, size: u64) -> Vec<(ElementPath, BinaryContent)> {
    let (_, path) = bench_envelope();
    let source = SeededPayload::new(payload_seed(config.seed, size), size);
    vec![(path, BinaryContent::new(source, "application/octet-stream").with_length(size))]
}

/// Single-pass digest rate of the client on one payload.
#[derive(Clone, Copy, Debug)]
pub struct Calibration {
    pub bytes: u64,
    pub digest_pass: Duration,
}

impl Calibration {
    /// Payload bytes per second.
    pub fn rate(&self) -> f64 {
        self.bytes as f64 / self.digest_pass.as_secs_f64()
    }
}

/// Times one full reference digest over a `size`-byte payload, including
/// payload generation. Every signed run does at least this much work before
/// its signature can exist.
pub fn calibrate_digest(size: u64, seed: u64, algorithm: DigestAlgorithm) -> Calibration {
    let (envelope, path) = bench_envelope();
    let route = path.resolve(&envelope).expect("payload element exists");
    let (prefix, suffix) = canonical_tags(node_at(&envelope, &route));
    let mut source = SeededPayload::new(payload_seed(seed, size), size);
    let start = Instant::now();
    digest_reference_streaming(&prefix, &mut source, &suffix, algorithm).expect("in-memory source");
    Calibration {
        bytes: size,
        digest_pass: start.elapsed(),
    }
}

struct Sample {
    wall: f64,
    first_byte: f64,
    peak: u64,
}

fn run_once(
    config: &BenchConfig,
    keys: &KeyMaterial,
    endpoint: &Endpoint,
    mode: Mode,
    size: u64,
    run: usize,
) -> Result<Sample, BenchError> {
    let boundary = Boundary::new(format!("=_bench-{:016x}-{run:04}", config.seed)).expect("valid boundary");
    let content_type = package_content_type(&boundary, ROOT_CONTENT_ID);
    let options = SignOptions {
        digest_algorithm: config.digest_algorithm,
        chunk_size: config.chunk_size,
        boundary: Some(boundary.clone()),
        content_id_seed: Some(config.seed),
    };
    let (envelope, _) = bench_envelope();
    let bins = binaries(config, size);
    let produce = |sink: &mut dyn Write| -> Result<u64, BenchError> {
        let (result, peak) = alloc_track::measure(|| -> Result<(), BenchError> {
            match mode {
                Mode::Unsigned => {
                    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
                    let mut package = extract_with(envelope, bins, &mut rng).map_err(crate::wssec::WssecError::from)?;
                    package.boundary = boundary;
                    package.write_to(sink, config.chunk_size).map_err(crate::wssec::WssecError::from)?;
                }
                Mode::Blocking => {
                    sign_blocking_with(envelope, bins, keys, &options, sink)?;
                }
                Mode::StreamingLax | Mode::StreamingStrict => {
                    let strict = mode == Mode::StreamingStrict;
                    sign_streaming_with(envelope, bins, keys, strict, &options, sink)?;
                }
            }
            Ok(())
        });
        result.map(|()| peak)
    };
    let (response, timing, peak) =
        send(endpoint, &content_type, config.chunk_size, config.throttle, produce).map_err(|e| match e {
            TransportError::Connect { .. } => BenchError::ServerUnavailable(e),
            TransportError::Producer(inner) => match inner.downcast::<BenchError>() {
                Ok(b) => *b,
                Err(other) => BenchError::Transport(TransportError::Producer(other)),
            },
            other => BenchError::Transport(other),
        })?;

    let failed = |detail: String| BenchError::VerificationFailed { size, mode, detail };
    if response.status != 200 {
        return Err(failed(format!("status {}: {}", response.status, response.body)));
    }
    let report: serde_json::Value = serde_json::from_str(&response.body).map_err(|e| failed(e.to_string()))?;
    if report["mode"] != mode.as_str() {
        return Err(failed(format!("server saw mode {}", report["mode"])));
    }
    if mode != Mode::Unsigned && report["valid"] != true {
        return Err(failed(response.body));
    }
    Ok(Sample {
        wall: timing.total().as_secs_f64(),
        first_byte: timing.time_to_first_byte().as_secs_f64(),
        peak,
    })
}

/// Runs the sweep against a verifying server at `endpoint`.
///
/// Runs are sequential. Each (size, mode) cell discards `warmup` runs and
/// reports medians over `repetitions`. A run the server does not accept
/// aborts the sweep. Peak memory is 0 unless the calling binary installs
/// [`crate::alloc_track::TrackingAllocator`].
pub fn run_benchmark(config: &BenchConfig, keys: &KeyMaterial, endpoint: &Endpoint) -> Result<BenchReport, BenchError> {
    config.validate()?;
    let mut modes = config.modes.clone();
    modes.sort();
    let mut rows = Vec::new();
    let mut run = 0;
    for &size in &config.sizes {
        for &mode in &modes {
            let mut samples = Vec::with_capacity(config.repetitions);
            for i in 0..config.warmup + config.repetitions {
                run += 1;
                let sample = run_once(config, keys, endpoint, mode, size, run)?;
                if i >= config.warmup {
                    samples.push(sample);
                }
            }
            let walls: Vec<f64> = samples.iter().map(|s| s.wall).collect();
            let median_s = median(&walls);
            rows.push(BenchRow {
                size,
                mode,
                median_s,
                throughput_bps: if median_s > 0.0 { size as f64 / median_s } else { 0.0 },
                first_byte_s: median(&samples.iter().map(|s| s.first_byte).collect::<Vec<_>>()),
                peak_mem_bytes: samples.iter().map(|s| s.peak).max().unwrap_or(0),
                repetitions: samples.len(),
                wall_times_s: walls,
            });
        }
    }
    Ok(BenchReport {
        seed: config.seed,
        throttle_rate: config.throttle.map(|t| t.rate),
        rows,
    })
}
