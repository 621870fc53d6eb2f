//! Acceptance criteria, one PASS/FAIL line each.
//!
//! Runs sequentially so the throttled timing runs do not compete with other
//! work for the CPU. Pass criterion numbers as arguments to run a subset:
//! `cargo test --test acceptance -- 1 5`.

mod common;

use std::io::{self, Read, Write};
use std::process::ExitCode;
use std::time::Instant;

use base64::Engine;
use common::{keys, Chunky};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use streamsign::alloc_track::{self, TrackingAllocator};
use streamsign::bench::{
    bench_envelope, calibrate_digest, median, run_benchmark, BenchConfig, SeededPayload, BENCH_PATH, MIB,
};
use streamsign::mime::{generate_boundary, write_package, MimeHeaders, MimePart, PackageReader};
use streamsign::transport::{verifying_handler, Server, ThrottleConfig};
use streamsign::wssec::{
    sign_blocking_with, sign_streaming_with, verify, DigestAlgorithm, Mode, SignOptions, SignedMessage, VerifyOptions,
};
use streamsign::xmlcore::{parse, Child, XmlNode};
use streamsign::xop::{
    extract_with, reconstitute, Base64Decoder, Base64Encoder, BinaryContent, ElementPath, XopPackage,
};

#[global_allocator]
static ALLOC: TrackingAllocator = TrackingAllocator;

struct Outcome {
    id: &'static str,
    title: &'static str,
    pass: bool,
    detail: String,
}

fn outcome(id: &'static str, title: &'static str, pass: bool, detail: String) -> Outcome {
    let line = format!("{} [{id}] {title}: {detail}", if pass { "PASS" } else { "FAIL" });
    println!("{line}");
    Outcome { id, title, pass, detail }
}

fn b64(data: &[u8]) -> String {
    base64::engine::general_purpose::STANDARD.encode(data)
}

// ---------------------------------------------------------------- 1

const SIZES: [usize; 8] = [0, 1, 2, 3, 4, 5, 1024, 1 << 20];

fn digests(msg: &SignedMessage) -> Vec<(String, Vec<u8>)> {
    msg.manifest
        .references()
        .iter()
        .map(|r| (r.uri.clone(), r.digest_value().to_vec()))
        .collect()
}

fn sign_mode(
    mode: Mode,
    envelope: XmlNode,
    binaries: Vec<(ElementPath, BinaryContent)>,
    options: &SignOptions,
    sink: &mut dyn Write,
) -> SignedMessage {
    match mode {
        Mode::Blocking => sign_blocking_with(envelope, binaries, keys(), options, sink),
        Mode::StreamingLax => sign_streaming_with(envelope, binaries, keys(), false, options, sink),
        Mode::StreamingStrict => sign_streaming_with(envelope, binaries, keys(), true, options, sink),
        Mode::Unsigned => unreachable!(),
    }
    .unwrap()
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xC1);
    let mut mismatches = 0;
    let mut references = 0;
    for case in 0..200u64 {
        let leaves = rng.gen_range(1..=3);
        let (envelope, paths) = common::random_envelope(&mut rng, leaves);
        let payloads: Vec<Vec<u8>> = (0..leaves)
            .map(|i| common::payload(SIZES[rng.gen_range(0..SIZES.len())], case * 16 + i as u64))
            .collect();
        let options = SignOptions {
            content_id_seed: Some(case),
            chunk_size: rng.gen_range(1..=65536),
            ..SignOptions::default()
        };
        let mut per_mode = Vec::new();
        for mode in common::SIGNED_MODES {
            let chunk_seed = rng.gen_range(0..100_000);
            let bins = common::designations(&paths, &payloads, chunk_seed);
            let msg = sign_mode(mode, envelope.clone(), bins, &options, &mut io::sink());
            per_mode.push(digests(&msg));
        }
        references += per_mode[0].len();
        if per_mode[1] != per_mode[0] || per_mode[2] != per_mode[0] {
            mismatches += 1;
        }
    }
    outcome(
        "1",
        "digest equivalence",
        mismatches == 0,
        format!(
            "200 cases, {references} references, {mismatches} mismatching cases, {:.1}s",
            start.elapsed().as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------- 2

/// Index of the MIME part holding byte `pos`, counting delimiters before it.
fn part_index(wire: &[u8], delimiter: &[u8], pos: usize) -> usize {
    wire[..pos].windows(delimiter.len()).filter(|w| *w == delimiter).count()
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xC2);
    let mut mutations = 0;
    let mut false_accepts = Vec::new();
    let mut false_rejects = 0;
    let mut regions = [0usize; 3];
    for mode in common::SIGNED_MODES {
        let (envelope, paths) = common::random_envelope(&mut rng, 2);
        let payloads = vec![common::payload(700, 1), common::payload(301, 2)];
        let mut wire = Vec::new();
        sign_mode(mode, envelope, common::designations(&paths, &payloads, 9), &SignOptions::default(), &mut wire);
        match verify(&wire[..], keys()) {
            Ok(r) if r.signature_valid => {}
            _ => false_rejects += 1,
        }
        let first_line = wire.iter().position(|&b| b == b'\r').unwrap();
        let mut delimiter = b"\r\n".to_vec();
        delimiter.extend_from_slice(&wire[..first_line]);
        let parts = part_index(&wire, &delimiter, wire.len());
        for pos in 0..wire.len() {
            let index = part_index(&wire, &delimiter, pos);
            let region = if index == 0 {
                0
            } else if mode != Mode::Blocking && index >= parts - 1 {
                2
            } else {
                1
            };
            regions[region] += 1;
            let mut tampered = wire.clone();
            tampered[pos] ^= rng.gen_range(1..=255u8);
            mutations += 1;
            if let Ok(report) = verify(&tampered[..], keys()) {
                if report.signature_valid {
                    false_accepts.push((mode, pos));
                }
            }
        }
    }
    outcome(
        "2",
        "cross-mode verification",
        mutations >= 500 && false_accepts.is_empty() && false_rejects == 0,
        format!(
            "{mutations} single-byte mutations (root {}, payload {}, signature part {}), \
             {} false accepts {:?}, {false_rejects} false rejects, {:.1}s",
            regions[0],
            regions[1],
            regions[2],
            false_accepts.len(),
            &false_accepts[..false_accepts.len().min(5)],
            start.elapsed().as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------- 3, 4, 6 and the unsigned floor

const BENCH_SIZE: u64 = 256 * MIB;
const RATE: f64 = 12_500_000.0;

fn throughput_criteria() -> Vec<Outcome> {
    let start = Instant::now();
    let calibrations: Vec<_> = (0..3)
        .map(|_| calibrate_digest(BENCH_SIZE, BenchConfig::default().seed, DigestAlgorithm::Sha256))
        .collect();
    let digest_pass = median(&calibrations.iter().map(|c| c.digest_pass.as_secs_f64()).collect::<Vec<_>>());
    let s = BENCH_SIZE as f64;
    let d = s / digest_pass;

    let handler = verifying_handler(keys().verifier(), VerifyOptions::default(), true);
    let server = Server::serve_on("127.0.0.1:0", BENCH_PATH, handler).unwrap();
    let config = BenchConfig {
        sizes: vec![BENCH_SIZE],
        modes: vec![Mode::Unsigned, Mode::Blocking, Mode::StreamingStrict],
        repetitions: 5,
        warmup: 1,
        throttle: Some(ThrottleConfig::with_rate(RATE).unwrap()),
        ..BenchConfig::default()
    };
    let report = match run_benchmark(&config, keys(), server.endpoint()) {
        Ok(r) => r,
        Err(e) => {
            let msg = format!("benchmark failed: {e}");
            return ["3", "4", "6", "floor"]
                .into_iter()
                .map(|id| outcome(id, "throttled benchmark", false, msg.clone()))
                .collect();
        }
    };
    server.shutdown();
    let unsigned = report.row(BENCH_SIZE, Mode::Unsigned).unwrap();
    let blocking = report.row(BENCH_SIZE, Mode::Blocking).unwrap();
    let streaming = report.row(BENCH_SIZE, Mode::StreamingStrict).unwrap();
    println!(
        "      calibration: S = {} B, R = {RATE} B/s, digest pass {:.3}s (D = {:.1} MB/s); \
         walls unsigned {:?} blocking {:?} streaming_strict {:?}; total {:.0}s",
        BENCH_SIZE,
        digest_pass,
        d / 1e6,
        unsigned.wall_times_s,
        blocking.wall_times_s,
        streaming.wall_times_s,
        start.elapsed().as_secs_f64()
    );

    let ratio = streaming.throughput_bps / blocking.throughput_bps;
    let c3 = outcome(
        "3",
        "throughput ratio",
        ratio >= 1.3,
        format!(
            "streaming_strict {:.3} MB/s vs blocking {:.3} MB/s, ratio {ratio:.4} (floor 1.3)",
            streaming.throughput_bps / 1e6,
            blocking.throughput_bps / 1e6
        ),
    );

    let (t_s, t_b) = (streaming.median_s, blocking.median_s);
    let predicted_s = (s / RATE).max(s / d);
    let predicted_b = s / RATE + s / d;
    let err_s = (t_s - predicted_s).abs() / t_s;
    let err_b = (t_b - predicted_b).abs() / t_b;
    let c4 = outcome(
        "4",
        "overlap law",
        err_s <= 0.15 && err_b <= 0.15,
        format!(
            "streaming {t_s:.3}s vs max(S/R,S/D) {predicted_s:.3}s (error {:.2}%), \
             blocking {t_b:.3}s vs S/R+S/D {predicted_b:.3}s (error {:.2}%), tolerance 15%",
            err_s * 100.0,
            err_b * 100.0
        ),
    );

    let c6 = outcome(
        "6",
        "first-byte latency",
        streaming.first_byte_s <= 0.5 && blocking.first_byte_s >= digest_pass,
        format!(
            "streaming_strict first byte {:.4}s (limit 0.5s), blocking first byte {:.3}s (digest pass {digest_pass:.3}s)",
            streaming.first_byte_s, blocking.first_byte_s
        ),
    );

    let share = unsigned.throughput_bps / RATE;
    let floor = outcome(
        "floor",
        "unsigned throughput",
        (0.7..=1.0).contains(&share),
        format!(
            "{:.3} MB/s = {:.1}% of the {:.1} MB/s throttle (bounds 70%..100%)",
            unsigned.throughput_bps / 1e6,
            share * 100.0,
            RATE / 1e6
        ),
    );
    vec![c3, c4, c6, floor]
}

// ---------------------------------------------------------------- 5

fn signing_peak(mode: Mode, size: u64) -> u64 {
    let (envelope, path) = bench_envelope();
    let source = SeededPayload::new(size, size);
    let bins = vec![(path, BinaryContent::new(source, "application/octet-stream").with_length(size))];
    let options = SignOptions::default();
    let (msg, peak) = alloc_track::measure(|| sign_mode(mode, envelope, bins, &options, &mut io::sink()));
    assert_eq!(msg.payload_bytes, size);
    peak
}

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let stream_small = signing_peak(Mode::StreamingStrict, MIB);
    let stream_large = signing_peak(Mode::StreamingStrict, 1024 * MIB);
    let block_small = signing_peak(Mode::Blocking, MIB);
    let block_large = signing_peak(Mode::Blocking, 256 * MIB);
    let stream_ratio = stream_small.max(stream_large) as f64 / stream_small.min(stream_large) as f64;
    let block_growth = block_large as f64 / block_small as f64;
    let block_share = block_large as f64 / (256 * MIB) as f64;
    outcome(
        "5",
        "memory asymmetry",
        stream_ratio < 2.0 && block_growth >= 100.0 && block_share >= 1.3,
        format!(
            "streaming_strict peak {stream_small} B at 1 MiB, {stream_large} B at 1 GiB (ratio {stream_ratio:.3}, limit 2); \
             blocking peak {block_small} B at 1 MiB, {block_large} B at 256 MiB (growth {block_growth:.1}x, \
             {block_share:.3}x payload); {:.1}s",
            start.elapsed().as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------- 7

fn cuts(len: usize) -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(0..=len, 0..10).prop_map(|mut c| {
        c.sort_unstable();
        c
    })
}

fn pieces<'a>(data: &'a [u8], cuts: &[usize]) -> Vec<&'a [u8]> {
    let mut out = Vec::new();
    let mut prev = 0;
    for &c in cuts {
        out.push(&data[prev..c]);
        prev = c;
    }
    out.push(&data[prev..]);
    out
}

fn runner() -> TestRunner {
    TestRunner::new(Config {
        cases: 1000,
        failure_persistence: None,
        ..Config::default()
    })
}

fn mime_round_trip() -> Result<(), String> {
    let strategy = (
        prop::collection::vec(prop::collection::vec(any::<u8>(), 0..2000), 0..6),
        1usize..5000,
        1usize..5000,
        any::<u64>(),
    );
    runner()
        .run(&strategy, |(bodies, write_chunk, read_chunk, seed)| {
            let boundary = generate_boundary(&mut ChaCha8Rng::seed_from_u64(seed));
            let headers = |i: usize| MimeHeaders::binary(format!("p{i}@acceptance"), "application/octet-stream").unwrap();
            let parts = bodies.iter().enumerate().map(|(i, b)| MimePart::from_bytes(headers(i), b.clone()));
            let mut wire = Vec::new();
            write_package(&mut wire, &boundary, parts, write_chunk).unwrap();
            let mut reader = PackageReader::new(Chunky::new(&wire[..], seed, read_chunk), &boundary, read_chunk).strict(true);
            let mut got = Vec::new();
            while let Some(part) = reader.next_part().unwrap() {
                let mut body = Vec::new();
                reader.body().read_to_end(&mut body).unwrap();
                prop_assert_eq!(&part.headers, &headers(got.len()));
                got.push(body);
            }
            prop_assert_eq!(got, bodies);
            Ok(())
        })
        .map_err(|e| e.to_string())
}

fn inline(envelope: &XmlNode, paths: &[ElementPath], bodies: &[Vec<u8>]) -> XmlNode {
    let mut node = envelope.clone();
    for (p, body) in paths.iter().zip(bodies) {
        let mut target = &mut node;
        for i in p.resolve(envelope).unwrap() {
            target = match &mut target.children[i] {
                Child::Element(e) => e,
                Child::Text(_) => unreachable!(),
            };
        }
        target.children = vec![Child::Text(b64(body))];
        target.normalize();
    }
    node
}

fn xop_round_trip() -> Result<(), String> {
    let strategy = (1usize..5, prop::collection::vec(0usize..700, 5), any::<u64>(), 1usize..3000);
    runner()
        .run(&strategy, |(leaves, lens, seed, chunk)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (envelope, paths) = common::random_envelope(&mut rng, leaves);
            let bodies: Vec<Vec<u8>> = lens[..leaves].iter().enumerate().map(|(i, &n)| common::payload(n, seed ^ i as u64)).collect();
            let designations = paths
                .iter()
                .zip(&bodies)
                .map(|(p, b)| (p.clone(), BinaryContent::from_bytes(b.clone(), "application/octet-stream")))
                .collect();
            let package = extract_with(envelope.clone(), designations, &mut rng).unwrap();
            let boundary = package.boundary.clone();
            let mut wire = Vec::new();
            package.write_to(&mut wire, chunk).unwrap();

            // Read the package back from the wire before reconstituting.
            let mut reader = PackageReader::new(&wire[..], &boundary, chunk).strict(true);
            reader.next_part().unwrap().unwrap();
            let mut root = Vec::new();
            reader.body().read_to_end(&mut root).unwrap();
            let mut parts = Vec::new();
            while let Some(part) = reader.next_part().unwrap() {
                let mut body = Vec::new();
                reader.body().read_to_end(&mut body).unwrap();
                parts.push(MimePart::from_bytes(part.headers, body));
            }
            let received = XopPackage { root: parse(&root).unwrap(), parts, boundary };
            prop_assert_eq!(reconstitute(received).unwrap(), inline(&envelope, &paths, &bodies));
            Ok(())
        })
        .map_err(|e| e.to_string())
}

fn base64_chunking() -> Result<(), String> {
    let strategy = prop::collection::vec(any::<u8>(), 0..1500).prop_flat_map(|data| {
        let n = data.len();
        let text = 4 * n.div_ceil(3);
        (Just(data), cuts(n), cuts(text))
    });
    runner()
        .run(&strategy, |(data, raw_cuts, text_cuts)| {
            let expected = b64(&data);
            let mut encoder = Base64Encoder::new(Vec::new());
            for p in pieces(&data, &raw_cuts) {
                encoder.write_all(p).unwrap();
            }
            let (encoded, _) = encoder.finish().unwrap();
            prop_assert_eq!(String::from_utf8(encoded).unwrap(), expected.clone());
            let mut decoder = Base64Decoder::new(Vec::new());
            for p in pieces(expected.as_bytes(), &text_cuts) {
                decoder.feed(p).unwrap();
            }
            let (decoded, n) = decoder.finish().unwrap();
            prop_assert_eq!(n as usize, data.len());
            prop_assert_eq!(decoded, data);
            Ok(())
        })
        .map_err(|e| e.to_string())
}

fn criterion_7() -> Outcome {
    let start = Instant::now();
    let suites = [
        ("MIME read/write", mime_round_trip()),
        ("XOP extract/reconstitute", xop_round_trip()),
        ("base64 chunking", base64_chunking()),
    ];
    let failures: Vec<String> = suites
        .iter()
        .filter_map(|(name, r)| r.as_ref().err().map(|e| format!("{name}: {e}")))
        .collect();
    outcome(
        "7",
        "wire/codec soundness",
        failures.is_empty(),
        if failures.is_empty() {
            format!("3 suites x 1000 cases, {:.1}s", start.elapsed().as_secs_f64())
        } else {
            failures.join("; ")
        },
    )
}

fn main() -> ExitCode {
    let selected: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let wanted = |id: &str| selected.is_empty() || selected.iter().any(|s| s == id);
    let started = Instant::now();
    let mut outcomes = Vec::new();
    if wanted("1") {
        outcomes.push(criterion_1());
    }
    if wanted("2") {
        outcomes.push(criterion_2());
    }
    if wanted("3") || wanted("4") || wanted("6") || wanted("floor") {
        outcomes.extend(throughput_criteria());
    }
    if wanted("5") {
        outcomes.push(criterion_5());
    }
    if wanted("7") {
        outcomes.push(criterion_7());
    }

    let failed: Vec<&Outcome> = outcomes.iter().filter(|o| !o.pass).collect();
    println!(
        "acceptance: {} passed, {} failed, {:.0}s",
        outcomes.len() - failed.len(),
        failed.len(),
        started.elapsed().as_secs_f64()
    );
    for o in &failed {
        println!("failed [{}] {}: {}", o.id, o.title, o.detail);
    }
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
