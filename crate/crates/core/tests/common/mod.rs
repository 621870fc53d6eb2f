#![allow(dead_code)]

use std::io::{self, Read};
use std::sync::OnceLock;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::{ChaCha20Rng, ChaCha8Rng};
use streamsign::wssec::{
    sign_blocking_with, sign_streaming_with, KeyMaterial, Mode, SignOptions, SignedMessage,
};
use streamsign::xmlcore::{XmlName, XmlNode};
use streamsign::xop::{BinaryContent, ElementPath};

pub const SOAP: &str = "http://www.w3.org/2003/05/soap-envelope";

pub fn keys() -> &'static KeyMaterial {
    static KEYS: OnceLock<KeyMaterial> = OnceLock::new();
    KEYS.get_or_init(|| KeyMaterial::generate(&mut ChaCha20Rng::seed_from_u64(0x5eed)).unwrap())
}

pub fn payload(len: usize, seed: u64) -> Vec<u8> {
    let mut v = vec![0u8; len];
    ChaCha8Rng::seed_from_u64(seed).fill_bytes(&mut v);
    v
}

/// Read adapter handing out pseudo-random short reads.
pub struct Chunky<R> {
    inner: R,
    rng: ChaCha8Rng,
    max: usize,
}

impl<R: Read> Chunky<R> {
    pub fn new(inner: R, seed: u64, max: usize) -> Self {
        Chunky {
            inner,
            rng: ChaCha8Rng::seed_from_u64(seed),
            max: max.max(1),
        }
    }
}

impl<R: Read> Read for Chunky<R> {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        let n = self.rng.gen_range(1..=self.max).min(buf.len());
        self.inner.read(&mut buf[..n])
    }
}

fn soap(local: &str) -> XmlNode {
    XmlNode::new(XmlName::new("soap", local, SOAP).unwrap())
}

fn local(name: &str) -> XmlNode {
    XmlNode::new(XmlName::local(name).unwrap())
}

/// A SOAP envelope with random header blocks and body nesting, holding
/// `leaves` empty `Data` elements. Returns the envelope and their paths.
pub fn random_envelope(rng: &mut impl Rng, leaves: usize) -> (XmlNode, Vec<ElementPath>) {
    let mut header = soap("Header");
    for i in 0..rng.gen_range(0..3) {
        let block = XmlNode::new(XmlName::new("app", format!("Block{i}"), "urn:example:app").unwrap())
            .with_attribute(XmlName::new("soap", "mustUnderstand", SOAP).unwrap(), "true")
            .unwrap()
            .with_text(format!("value <{}> & more", rng.gen::<u16>()));
        header = header.with_child(block);
    }
    let mut body = soap("Body");
    let mut upload = XmlNode::new(XmlName::new("", "Upload", "urn:example:upload").unwrap());
    upload = upload.with_child(local("Name").with_text("report.bin"));
    let mut names = Vec::new();
    for i in 0..leaves {
        let nested = rng.gen_bool(0.5);
        let mut data = local("Data");
        if rng.gen_bool(0.5) {
            data = data.with_attribute(XmlName::local("seq").unwrap(), i.to_string()).unwrap();
        }
        if nested {
            upload = upload.with_child(local("Item").with_child(data));
            names.push(("Item", true));
        } else {
            upload = upload.with_child(data);
            names.push(("Data", false));
        }
    }
    body = body.with_child(upload);
    let envelope = soap("Envelope").with_child(header).with_child(body);

    let mut paths = Vec::new();
    let (mut items, mut datas) = (0, 0);
    for (_, nested) in names {
        let p = if nested {
            items += 1;
            format!("/Envelope/Body/Upload/Item[{items}]/Data")
        } else {
            datas += 1;
            format!("/Envelope/Body/Upload/Data[{datas}]")
        };
        paths.push(p.parse().unwrap());
    }
    (envelope, paths)
}

pub fn designations(paths: &[ElementPath], payloads: &[Vec<u8>], chunk_seed: u64) -> Vec<(ElementPath, BinaryContent)> {
    paths
        .iter()
        .zip(payloads)
        .enumerate()
        .map(|(i, (p, data))| {
            let len = data.len() as u64;
            let src = Chunky::new(io::Cursor::new(data.clone()), chunk_seed + i as u64, 1 + (chunk_seed as usize % 5000));
            (p.clone(), BinaryContent::new(src, "application/octet-stream").with_length(len))
        })
        .collect()
}

pub fn sign(mode: Mode, envelope: XmlNode, binaries: Vec<(ElementPath, BinaryContent)>, options: &SignOptions) -> (Vec<u8>, SignedMessage) {
    let mut wire = Vec::new();
    let msg = match mode {
        Mode::Blocking => sign_blocking_with(envelope, binaries, keys(), options, &mut wire),
        Mode::StreamingLax => sign_streaming_with(envelope, binaries, keys(), false, options, &mut wire),
        Mode::StreamingStrict => sign_streaming_with(envelope, binaries, keys(), true, options, &mut wire),
        Mode::Unsigned => panic!("not a signing mode"),
    }
    .unwrap();
    assert_eq!(msg.bytes_written as usize, wire.len());
    (wire, msg)
}

pub const SIGNED_MODES: [Mode; 3] = [Mode::Blocking, Mode::StreamingLax, Mode::StreamingStrict];
