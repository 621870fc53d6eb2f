use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use bytesize::ByteSize;
use clap::{Args, Parser, Subcommand, ValueEnum};
use streamsign::bench::{self, emit_csv, emit_plot_data, run_benchmark, BenchConfig, BenchError};
use streamsign::config::chunk_size;
use streamsign::mime::{package_content_type, Boundary};
use streamsign::transport::{self, verifying_handler, Endpoint, Server, ThrottleConfig, TransportError};
use streamsign::wssec::{
    sign_blocking_with, sign_streaming_with, verify_with, DigestAlgorithm, KeyMaterial, Mode, SignOptions,
    VerifyOptions, WssecError,
};
use streamsign::xmlcore::{parse, Child, XmlNode};
use streamsign::xop::{extract, BinaryContent, ElementPath, XopError, ROOT_CONTENT_ID};

use crate::CliError;

#[derive(Parser, Debug)]
#[command(name = "streamsign", version, about = "Sign, verify and stream MTOM/XOP SOAP messages")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Package an envelope and attachments as an unsigned XOP message
    Pack(PackArgs),
    /// Sign an envelope and attachments
    Sign(SignArgs),
    /// Verify a signed message; exits 0 only when the signature is valid
    Verify(VerifyArgs),
    /// Upload a message file to a server
    Send(SendArgs),
    /// Run a verifying server
    Serve(ServeArgs),
    /// Run the throttled benchmark and write a CSV report
    Bench(BenchArgs),
    /// Generate a signing key pair and a wrap key
    Keygen(KeygenArgs),
}

#[derive(Args, Debug)]
struct Attachments {
    /// SOAP envelope (XML file)
    #[arg(long)]
    envelope: PathBuf,
    /// `[PATH=]FILE`: attach FILE at element PATH (e.g. /Envelope/Body/Upload/Data[2]).
    /// Without PATH the next empty element in the Body is used
    #[arg(long = "attach", value_name = "[PATH=]FILE")]
    attach: Vec<String>,
    /// Media type recorded for every attachment
    #[arg(long, default_value = "application/octet-stream")]
    media_type: String,
    /// Output file, `-` for standard output
    #[arg(long, default_value = "-")]
    out: String,
}

#[derive(Args, Debug)]
struct PackArgs {
    #[command(flatten)]
    input: Attachments,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SignMode {
    Blocking,
    Streaming,
}

#[derive(Clone, Copy, Debug, Default, ValueEnum)]
enum Digest {
    #[default]
    Sha256,
    Sha512,
}

impl From<Digest> for DigestAlgorithm {
    fn from(d: Digest) -> Self {
        match d {
            Digest::Sha256 => DigestAlgorithm::Sha256,
            Digest::Sha512 => DigestAlgorithm::Sha512,
        }
    }
}

#[derive(Args, Debug)]
struct KeyArgs {
    /// PEM key: private for signing, public or private for verifying
    #[arg(long)]
    key: PathBuf,
    /// Base64 wrap key file, needed for strict streaming mode
    #[arg(long)]
    wrap_key: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SignArgs {
    #[arg(long, value_enum)]
    mode: SignMode,
    /// Encrypt the deferred signature part (streaming mode only)
    #[arg(long)]
    strict: bool,
    #[command(flatten)]
    keys: KeyArgs,
    #[arg(long, value_enum, default_value_t)]
    digest: Digest,
    #[command(flatten)]
    input: Attachments,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    #[command(flatten)]
    keys: KeyArgs,
    /// Signed message, `-` for standard input
    #[arg(long = "in", default_value = "-")]
    input: String,
    /// Digest algorithm the receiver expects
    #[arg(long, value_enum, default_value_t)]
    digest: Digest,
}

#[derive(Args, Debug)]
struct SendArgs {
    /// `host:port[/path]`
    #[arg(long)]
    to: Endpoint,
    /// Message file, `-` for standard input
    #[arg(long = "in", default_value = "-")]
    input: String,
    /// Egress limit in bytes per second (e.g. 12500000 or 12.5MB)
    #[arg(long, value_parser = parse_rate)]
    rate: Option<f64>,
}

#[derive(Args, Debug)]
struct ServeArgs {
    /// `host:port[/path]`; port 0 picks a free port
    #[arg(long, default_value = "127.0.0.1:8080")]
    listen: String,
    #[command(flatten)]
    keys: KeyArgs,
    #[arg(long, value_enum, default_value_t)]
    digest: Digest,
    /// Answer 200 to unsigned messages
    #[arg(long)]
    accept_unsigned: bool,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// Comma-separated payload sizes, strictly increasing (e.g. 1MiB,4MiB)
    #[arg(long, value_delimiter = ',', value_parser = parse_size)]
    sizes: Option<Vec<u64>>,
    /// Comma-separated modes: unsigned, blocking, streaming_lax, streaming_strict
    #[arg(long, value_delimiter = ',', value_parser = parse_mode)]
    modes: Option<Vec<Mode>>,
    /// Throttle in bytes per second, or `none`
    #[arg(long, default_value = "12500000")]
    rate: String,
    #[arg(long, default_value_t = 3)]
    reps: usize,
    #[arg(long, default_value_t = 1)]
    warmup: usize,
    #[arg(long, default_value_t = bench::DEFAULT_SEED)]
    seed: u64,
    /// Server to benchmark against; an in-process server is started when omitted
    #[arg(long)]
    to: Option<Endpoint>,
    /// Signing key; a fresh key set is generated when omitted
    #[arg(long)]
    key: Option<PathBuf>,
    #[arg(long)]
    wrap_key: Option<PathBuf>,
    /// CSV report path
    #[arg(long)]
    out: PathBuf,
    /// Also write whitespace-separated plot data here
    #[arg(long)]
    plot_data: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct KeygenArgs {
    #[arg(long)]
    out_dir: PathBuf,
}

fn parse_size(s: &str) -> Result<u64, String> {
    s.trim().parse::<ByteSize>().map(|b| b.as_u64())
}

fn parse_rate(s: &str) -> Result<f64, String> {
    let s = s.trim().trim_end_matches("/s");
    let rate = match s.parse::<f64>() {
        Ok(r) => r,
        Err(_) => parse_size(s)? as f64,
    };
    if rate.is_finite() && rate > 0.0 {
        Ok(rate)
    } else {
        Err(format!("rate must be positive, got {s}"))
    }
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    Mode::parse(s.trim()).ok_or_else(|| format!("unknown mode {s:?}"))
}

pub fn run(cli: Cli) -> Result<u8, CliError> {
    match cli.command {
        Command::Pack(a) => pack(a),
        Command::Sign(a) => sign(a),
        Command::Verify(a) => verify(a),
        Command::Send(a) => send(a),
        Command::Serve(a) => serve(a),
        Command::Bench(a) => run_bench(a),
        Command::Keygen(a) => keygen(a),
    }
}

fn io_err(context: impl std::fmt::Display) -> impl FnOnce(io::Error) -> CliError {
    move |e| CliError::Io(format!("{context}: {e}"))
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(io_err(path.display()))
}

fn wssec_err(e: WssecError) -> CliError {
    match e {
        WssecError::Sink(e) | WssecError::Source(e) => CliError::Io(e.to_string()),
        WssecError::Xop(XopError::Sink(e) | XopError::Source(e)) => CliError::Io(e.to_string()),
        WssecError::Key(m) => CliError::Usage(format!("key: {m}")),
        other => CliError::Usage(other.to_string()),
    }
}

fn transport_err(e: TransportError) -> CliError {
    CliError::Io(e.to_string())
}

fn load_keys(key: &Path, wrap: Option<&Path>) -> Result<KeyMaterial, CliError> {
    let mut keys = KeyMaterial::from_pem(&read_text(key)?).map_err(wssec_err)?;
    if let Some(path) = wrap {
        keys = keys.with_wrap_key_text(&read_text(path)?).map_err(wssec_err)?;
    }
    Ok(keys)
}

fn open_input(name: &str) -> Result<Box<dyn Read + Send>, CliError> {
    if name == "-" {
        Ok(Box::new(io::stdin()))
    } else {
        Ok(Box::new(File::open(name).map_err(io_err(name))?))
    }
}

fn open_output(name: &str) -> Result<Box<dyn Write>, CliError> {
    let inner: Box<dyn Write> = if name == "-" {
        Box::new(io::stdout().lock())
    } else {
        Box::new(File::create(name).map_err(io_err(name))?)
    };
    Ok(Box::new(BufWriter::with_capacity(chunk_size(), inner)))
}

/// Empty elements under the Body in document order.
fn empty_body_elements(envelope: &XmlNode) -> Vec<ElementPath> {
    let Some(body) = envelope.elements().find(|e| e.name.local_name() == "Body") else {
        return Vec::new();
    };
    let body_index = envelope
        .children
        .iter()
        .position(|c| matches!(c, Child::Element(e) if std::ptr::eq(e, body)))
        .expect("body is a child");
    let mut found = Vec::new();
    let mut stack = vec![(vec![body_index], body)];
    while let Some((route, node)) = stack.pop() {
        if node.children.is_empty() && route.len() > 1 {
            found.push(ElementPath::of(envelope, &route).expect("route is valid"));
        }
        for (i, child) in node.children.iter().enumerate().rev() {
            if let Child::Element(e) = child {
                let mut r = route.clone();
                r.push(i);
                stack.push((r, e));
            }
        }
    }
    found
}

fn load_input(input: &Attachments) -> Result<(XmlNode, Vec<(ElementPath, BinaryContent)>), CliError> {
    let bytes = fs::read(&input.envelope).map_err(io_err(input.envelope.display()))?;
    let envelope = parse(&bytes).map_err(|e| CliError::Usage(format!("envelope: {e}")))?;
    let mut free = empty_body_elements(&envelope).into_iter();
    let mut taken: Vec<ElementPath> = Vec::new();
    let mut binaries = Vec::new();
    for arg in &input.attach {
        let (path, file) = match arg.split_once('=') {
            Some((p, f)) if p.starts_with('/') => {
                let path: ElementPath = p.parse().map_err(|e: XopError| CliError::Usage(format!("{p}: {e}")))?;
                (path, f)
            }
            _ => {
                let path = free
                    .find(|p| !taken.contains(p))
                    .ok_or_else(|| CliError::Usage(format!("no empty Body element left for {arg}")))?;
                (path, arg.as_str())
            }
        };
        let f = File::open(file).map_err(io_err(file))?;
        let len = f.metadata().map_err(io_err(file))?.len();
        taken.push(path.clone());
        binaries.push((path, BinaryContent::new(f, input.media_type.clone()).with_length(len)));
    }
    Ok((envelope, binaries))
}

fn pack(args: PackArgs) -> Result<u8, CliError> {
    let (envelope, binaries) = load_input(&args.input)?;
    let package = extract(envelope, binaries).map_err(|e| wssec_err(e.into()))?;
    let mut out = open_output(&args.input.out)?;
    package.write_to(&mut out, chunk_size()).map_err(|e| wssec_err(e.into()))?;
    out.flush().map_err(io_err("output"))?;
    Ok(0)
}

fn sign(args: SignArgs) -> Result<u8, CliError> {
    if args.strict && !matches!(args.mode, SignMode::Streaming) {
        return Err(CliError::Usage("--strict applies to --mode streaming".into()));
    }
    if args.strict && args.keys.wrap_key.is_none() {
        return Err(CliError::Usage("--strict needs --wrap-key".into()));
    }
    let keys = load_keys(&args.keys.key, args.keys.wrap_key.as_deref())?;
    if !keys.can_sign() {
        return Err(CliError::Usage("--key must be a private key to sign".into()));
    }
    let (envelope, binaries) = load_input(&args.input)?;
    let options = SignOptions {
        digest_algorithm: args.digest.into(),
        ..SignOptions::default()
    };
    let mut out = open_output(&args.input.out)?;
    let msg = match args.mode {
        SignMode::Blocking => sign_blocking_with(envelope, binaries, &keys, &options, &mut out),
        SignMode::Streaming => sign_streaming_with(envelope, binaries, &keys, args.strict, &options, &mut out),
    }
    .map_err(wssec_err)?;
    out.flush().map_err(io_err("output"))?;
    eprintln!(
        "signed mode={} references={} payload_bytes={} bytes_written={}",
        msg.mode,
        msg.manifest.references().len(),
        msg.payload_bytes,
        msg.bytes_written
    );
    Ok(0)
}

fn verify(args: VerifyArgs) -> Result<u8, CliError> {
    let keys = load_keys(&args.keys.key, args.keys.wrap_key.as_deref())?.verifier();
    let options = VerifyOptions {
        digest_algorithm: args.digest.into(),
        ..VerifyOptions::default()
    };
    let input = BufReader::with_capacity(chunk_size(), open_input(&args.input)?);
    match verify_with(input, &keys, &options) {
        Ok(report) => {
            println!("{}", report.to_json());
            Ok(if report.signature_valid { 0 } else { 1 })
        }
        Err(e @ (WssecError::Source(_) | WssecError::Sink(_))) => Err(wssec_err(e)),
        Err(e) => {
            println!("{}", serde_json::json!({ "valid": false, "error": e.to_string() }));
            Err(CliError::Invalid(e.to_string()))
        }
    }
}

/// Content-Type for a stored message, rebuilt from its opening delimiter line.
fn message_content_type(reader: &mut impl BufRead) -> Result<String, CliError> {
    let head = reader.fill_buf().map_err(io_err("input"))?;
    let line_end = head.iter().position(|&b| b == b'\r').unwrap_or(head.len());
    let line = std::str::from_utf8(&head[..line_end]).unwrap_or("");
    let boundary = line
        .strip_prefix("--")
        .and_then(|b| Boundary::new(b).ok())
        .ok_or_else(|| CliError::Usage("input does not start with a MIME boundary".into()))?;
    Ok(package_content_type(&boundary, ROOT_CONTENT_ID))
}

fn send(args: SendArgs) -> Result<u8, CliError> {
    let throttle = args
        .rate
        .map(ThrottleConfig::with_rate)
        .transpose()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let mut input = BufReader::with_capacity(chunk_size(), open_input(&args.input)?);
    let content_type = message_content_type(&mut input)?;
    let (response, timing, sent) = transport::send(&args.to, &content_type, chunk_size(), throttle, |sink| {
        io::copy(&mut input, sink)
    })
    .map_err(transport_err)?;
    println!("{}", response.body);
    eprintln!(
        "status={} bytes={} first_byte_s={:.6} transfer_s={:.6} total_s={:.6}",
        response.status,
        sent,
        timing.time_to_first_byte().as_secs_f64(),
        timing.transfer().as_secs_f64(),
        timing.total().as_secs_f64()
    );
    Ok(if response.status == 200 { 0 } else { 1 })
}

fn serve(args: ServeArgs) -> Result<u8, CliError> {
    let keys = load_keys(&args.keys.key, args.keys.wrap_key.as_deref())?.verifier();
    let (addr, path) = match args.listen.find('/') {
        Some(i) => (&args.listen[..i], &args.listen[i..]),
        None => (args.listen.as_str(), transport::DEFAULT_PATH),
    };
    let options = VerifyOptions {
        digest_algorithm: args.digest.into(),
        ..VerifyOptions::default()
    };
    let handler = verifying_handler(keys, options, args.accept_unsigned);
    let server = Server::serve_on(addr, path, handler).map_err(transport_err)?;
    eprintln!("listening on {}", server.endpoint());
    server.wait();
    Ok(0)
}

fn bench_err(e: BenchError) -> CliError {
    match e {
        BenchError::InvalidConfig(_) => CliError::Usage(e.to_string()),
        BenchError::VerificationFailed { .. } => CliError::Invalid(e.to_string()),
        _ => CliError::Io(e.to_string()),
    }
}

fn run_bench(args: BenchArgs) -> Result<u8, CliError> {
    let throttle = match args.rate.trim() {
        "none" | "0" => None,
        r => Some(
            ThrottleConfig::with_rate(parse_rate(r).map_err(CliError::Usage)?)
                .map_err(|e| CliError::Usage(e.to_string()))?,
        ),
    };
    let defaults = BenchConfig::default();
    let config = BenchConfig {
        sizes: args.sizes.unwrap_or(defaults.sizes),
        modes: args.modes.unwrap_or(defaults.modes),
        repetitions: args.reps,
        warmup: args.warmup,
        throttle,
        seed: args.seed,
        ..defaults
    };
    config.validate().map_err(bench_err)?;
    let keys = match &args.key {
        Some(path) => load_keys(path, args.wrap_key.as_deref())?,
        None => KeyMaterial::generate(&mut rand::rngs::OsRng).map_err(wssec_err)?,
    };
    if config.modes.contains(&Mode::StreamingStrict) && keys.wrap_key().is_none() {
        return Err(CliError::Usage("streaming_strict needs --wrap-key".into()));
    }
    let local = match &args.to {
        Some(_) => None,
        None => {
            let handler = verifying_handler(keys.verifier(), VerifyOptions::default(), true);
            Some(Server::serve_on("127.0.0.1:0", bench::BENCH_PATH, handler).map_err(transport_err)?)
        }
    };
    let endpoint = match (&args.to, &local) {
        (Some(e), _) => e.clone(),
        (None, Some(server)) => server.endpoint().clone(),
        (None, None) => unreachable!(),
    };
    eprintln!("bench seed={} endpoint={endpoint}", config.seed);
    let report = run_benchmark(&config, &keys, &endpoint).map_err(bench_err)?;
    emit_csv(&report, &args.out).map_err(bench_err)?;
    if let Some(path) = &args.plot_data {
        emit_plot_data(&report, path).map_err(bench_err)?;
    }
    for row in &report.rows {
        eprintln!(
            "size={} mode={} median_s={:.3} throughput_Bps={:.0} first_byte_s={:.4} peak_mem_B={}",
            row.size, row.mode, row.median_s, row.throughput_bps, row.first_byte_s, row.peak_mem_bytes
        );
    }
    Ok(0)
}

fn keygen(args: KeygenArgs) -> Result<u8, CliError> {
    let keys = KeyMaterial::generate(&mut rand::rngs::OsRng).map_err(wssec_err)?;
    fs::create_dir_all(&args.out_dir).map_err(io_err(args.out_dir.display()))?;
    let write = |name: &str, text: String| -> Result<(), CliError> {
        let path = args.out_dir.join(name);
        fs::write(&path, text).map_err(io_err(path.display()))
    };
    write("signing.pem", keys.private_pem().map_err(wssec_err)?)?;
    write("verify.pem", keys.public_pem().map_err(wssec_err)?)?;
    write("wrap.key", keys.wrap_key_text().expect("generated keys carry a wrap key") + "\n")?;
    eprintln!("wrote signing.pem verify.pem wrap.key to {}", args.out_dir.display());
    Ok(0)
}
