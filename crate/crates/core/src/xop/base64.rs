//! Streaming base64 (standard alphabet, `=` padding, no line breaks).
//!
//! The encoder keeps at most two pending input bytes between writes, so its
//! output does not depend on how the input is chunked. The decoder skips
//! ASCII whitespace and rejects anything that would not re-encode to the
//! same text, including misplaced padding and non-zero trailing bits.

use std::io::{self, Read, Write};

use super::XopError;

const ALPHABET: &[u8; 64] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

const INVALID: u8 = 0xFF;
const SKIP: u8 = 0xFE;
const PAD: u8 = 0xFD;

const DECODE: [u8; 256] = {
    let mut table = [INVALID; 256];
    let mut i = 0;
    while i < 64 {
        table[ALPHABET[i] as usize] = i as u8;
        i += 1;
    }
    table[b' ' as usize] = SKIP;
    table[b'\t' as usize] = SKIP;
    table[b'\r' as usize] = SKIP;
    table[b'\n' as usize] = SKIP;
    table[b'=' as usize] = PAD;
    table
};

/// Input bytes encoded per internal block; yields 4096 output characters.
const BLOCK: usize = 3 * 1024;

/// Encoded length of `n` input bytes.
pub fn encoded_len(n: u64) -> u64 {
    n.div_ceil(3) * 4
}

#[inline]
fn encode_triple(a: u8, b: u8, c: u8, out: &mut [u8]) {
    out[0] = ALPHABET[(a >> 2) as usize];
    out[1] = ALPHABET[(((a & 0x03) << 4) | (b >> 4)) as usize];
    out[2] = ALPHABET[(((b & 0x0F) << 2) | (c >> 6)) as usize];
    out[3] = ALPHABET[(c & 0x3F) as usize];
}

/// `Write` adapter that base64-encodes everything written into it.
/// Call [`finish`](Self::finish) to flush the carry and padding.
pub struct Base64Encoder<W: Write> {
    inner: W,
    carry: [u8; 2],
    carry_len: usize,
    out: Box<[u8; BLOCK / 3 * 4]>,
    encoded: u64,
}

impl<W: Write> Base64Encoder<W> {
    pub fn new(inner: W) -> Self {
        Base64Encoder {
            inner,
            carry: [0; 2],
            carry_len: 0,
            out: Box::new([0; BLOCK / 3 * 4]),
            encoded: 0,
        }
    }

    /// Characters emitted so far (excluding the pending carry).
    pub fn encoded_len(&self) -> u64 {
        self.encoded
    }

    pub fn get_ref(&self) -> &W {
        &self.inner
    }

    pub fn get_mut(&mut self) -> &mut W {
        &mut self.inner
    }

    fn encode_block(&mut self, input: &[u8]) -> io::Result<()> {
        debug_assert!(input.len().is_multiple_of(3) && input.len() <= BLOCK);
        let n = input.len() / 3 * 4;
        for (src, dst) in input.chunks_exact(3).zip(self.out.chunks_exact_mut(4)) {
            encode_triple(src[0], src[1], src[2], dst);
        }
        self.inner.write_all(&self.out[..n])?;
        self.encoded += n as u64;
        Ok(())
    }

    /// Writes the final quantum with padding and returns the inner writer
    /// and the total number of characters produced.
    pub fn finish(mut self) -> io::Result<(W, u64)> {
        let mut quad = [0u8; 4];
        match self.carry_len {
            1 => {
                encode_triple(self.carry[0], 0, 0, &mut quad);
                quad[2] = b'=';
                quad[3] = b'=';
            }
            2 => {
                encode_triple(self.carry[0], self.carry[1], 0, &mut quad);
                quad[3] = b'=';
            }
            _ => return Ok((self.inner, self.encoded)),
        }
        self.inner.write_all(&quad)?;
        self.encoded += 4;
        Ok((self.inner, self.encoded))
    }
}

impl<W: Write> Write for Base64Encoder<W> {
    fn write(&mut self, mut buf: &[u8]) -> io::Result<usize> {
        let len = buf.len();
        if self.carry_len > 0 {
            let need = 3 - self.carry_len;
            if buf.len() < need {
                self.carry[self.carry_len..self.carry_len + buf.len()].copy_from_slice(buf);
                self.carry_len += buf.len();
                return Ok(len);
            }
            let triple = [
                self.carry[0],
                if self.carry_len > 1 { self.carry[1] } else { buf[0] },
                buf[need - 1],
            ];
            self.carry_len = 0;
            buf = &buf[need..];
            self.encode_block(&triple)?;
        }
        let whole = buf.len() - buf.len() % 3;
        for block in buf[..whole].chunks(BLOCK) {
            self.encode_block(block)?;
        }
        let rest = &buf[whole..];
        self.carry[..rest.len()].copy_from_slice(rest);
        self.carry_len = rest.len();
        Ok(len)
    }

    fn flush(&mut self) -> io::Result<()> {
        self.inner.flush()
    }
}

/// `Write` adapter that decodes base64 text written into it.
pub struct Base64Decoder<W: Write> {
    inner: W,
    quad: [u8; 4],
    quad_len: usize,
    /// Padding characters seen in the current quantum.
    pad: usize,
    /// A padded quantum has ended; only whitespace may follow.
    done: bool,
    position: u64,
    out: Vec<u8>,
    decoded: u64,
}

impl<W: Write> Base64Decoder<W> {
    pub fn new(inner: W) -> Self {
        Base64Decoder {
            inner,
            quad: [0; 4],
            quad_len: 0,
            pad: 0,
            done: false,
            position: 0,
            out: Vec::with_capacity(3 * 1024),
            decoded: 0,
        }
    }

    fn invalid(&self, reason: &str) -> XopError {
        XopError::InvalidBase64 {
            position: self.position,
            reason: reason.to_owned(),
        }
    }

    /// Feeds encoded text.
    pub fn feed(&mut self, text: &[u8]) -> Result<(), XopError> {
        for &c in text {
            let v = DECODE[c as usize];
            match v {
                SKIP => {}
                INVALID => return Err(self.invalid("invalid character")),
                _ if self.done => return Err(self.invalid("data after padding")),
                PAD => {
                    if self.quad_len < 2 {
                        return Err(self.invalid("misplaced padding"));
                    }
                    self.pad += 1;
                    self.quad_len += 1;
                }
                _ => {
                    if self.pad > 0 {
                        return Err(self.invalid("data after padding"));
                    }
                    self.quad[self.quad_len] = v;
                    self.quad_len += 1;
                }
            }
            self.position += 1;
            if self.quad_len == 4 {
                self.flush_quad()?;
            }
        }
        if self.out.len() >= 3 * 1024 - 3 {
            self.drain()?;
        }
        Ok(())
    }

    fn flush_quad(&mut self) -> Result<(), XopError> {
        let [a, b, c, d] = self.quad;
        match self.pad {
            0 => self.out.extend_from_slice(&[(a << 2) | (b >> 4), (b << 4) | (c >> 2), (c << 6) | d]),
            1 => {
                if c & 0x03 != 0 {
                    return Err(self.invalid("non-zero trailing bits"));
                }
                self.out.extend_from_slice(&[(a << 2) | (b >> 4), (b << 4) | (c >> 2)]);
                self.done = true;
            }
            _ => {
                if b & 0x0F != 0 {
                    return Err(self.invalid("non-zero trailing bits"));
                }
                self.out.push((a << 2) | (b >> 4));
                self.done = true;
            }
        }
        self.quad_len = 0;
        self.pad = 0;
        if self.out.len() >= 3 * 1024 {
            self.drain()?;
        }
        Ok(())
    }

    fn drain(&mut self) -> Result<(), XopError> {
        self.inner.write_all(&self.out).map_err(XopError::Sink)?;
        self.decoded += self.out.len() as u64;
        self.out.clear();
        Ok(())
    }

    /// Checks that the input ended on a quantum boundary and returns the
    /// inner writer and the number of decoded bytes.
    pub fn finish(mut self) -> Result<(W, u64), XopError> {
        if self.quad_len != 0 {
            return Err(self.invalid("incomplete final quantum"));
        }
        self.drain()?;
        Ok((self.inner, self.decoded))
    }
}

/// Encodes everything from `input` into `sink`; returns the encoded length.
pub fn base64_encode_stream(input: &mut dyn Read, sink: &mut dyn Write) -> Result<u64, XopError> {
    let mut encoder = Base64Encoder::new(sink);
    let mut buf = vec![0u8; crate::config::chunk_size()];
    loop {
        let n = match input.read(&mut buf) {
            Ok(0) => break,
            Ok(n) => n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(XopError::Source(e)),
        };
        encoder.write_all(&buf[..n]).map_err(XopError::Sink)?;
    }
    let (_, len) = encoder.finish().map_err(XopError::Sink)?;
    Ok(len)
}

/// Decodes base64 text from `input` into `sink`; returns the decoded length.
pub fn base64_decode_stream(input: &mut dyn Read, sink: &mut dyn Write) -> Result<u64, XopError> {
    let mut decoder = Base64Decoder::new(sink);
    let mut buf = vec![0u8; crate::config::chunk_size()];
    loop {
        let n = match input.read(&mut buf) {
            Ok(0) => break,
            Ok(n) => n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(XopError::Source(e)),
        };
        decoder.feed(&buf[..n])?;
    }
    let (_, len) = decoder.finish()?;
    Ok(len)
}

pub fn encode(bytes: &[u8]) -> String {
    let mut encoder = Base64Encoder::new(Vec::with_capacity(encoded_len(bytes.len() as u64) as usize));
    encoder.write_all(bytes).expect("Vec write");
    let (out, _) = encoder.finish().expect("Vec write");
    String::from_utf8(out).expect("base64 is ASCII")
}

pub fn decode(text: &str) -> Result<Vec<u8>, XopError> {
    let mut decoder = Base64Decoder::new(Vec::with_capacity(text.len() / 4 * 3));
    decoder.feed(text.as_bytes())?;
    decoder.finish().map(|(out, _)| out)
}

/// `Read` adapter producing decoded bytes from a base64 text source.
pub struct Base64DecodeReader<R: Read> {
    src: R,
    decoder: Option<Base64Decoder<Vec<u8>>>,
    pending: Vec<u8>,
    offset: usize,
    text: Vec<u8>,
}

impl<R: Read> Base64DecodeReader<R> {
    pub fn new(src: R) -> Self {
        Base64DecodeReader {
            src,
            decoder: Some(Base64Decoder::new(Vec::new())),
            pending: Vec::new(),
            offset: 0,
            text: vec![0; 4096],
        }
    }
}

impl<R: Read> Read for Base64DecodeReader<R> {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        loop {
            if self.offset < self.pending.len() {
                let n = buf.len().min(self.pending.len() - self.offset);
                buf[..n].copy_from_slice(&self.pending[self.offset..self.offset + n]);
                self.offset += n;
                return Ok(n);
            }
            let decoder = match self.decoder.as_mut() {
                Some(d) => d,
                None => return Ok(0),
            };
            let n = self.src.read(&mut self.text)?;
            let to_io = |e: XopError| io::Error::new(io::ErrorKind::InvalidData, e);
            if n == 0 {
                let decoder = self.decoder.take().expect("checked above");
                let (rest, _) = decoder.finish().map_err(to_io)?;
                self.pending = rest;
            } else {
                decoder.feed(&self.text[..n]).map_err(to_io)?;
                decoder.drain().map_err(to_io)?;
                self.pending.clear();
                std::mem::swap(&mut self.pending, &mut decoder.inner);
            }
            self.offset = 0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_octets_become_four_characters() {
        assert_eq!(encode(b"Man"), "TWFu");
        assert_eq!(encoded_len(3), 4);
        assert_eq!(encode(&[0u8; 300]).len(), 400);
    }

    #[test]
    fn padding_cases() {
        assert_eq!(encode(b""), "");
        assert_eq!(encode(b"f"), "Zg==");
        assert_eq!(encode(b"fo"), "Zm8=");
        assert_eq!(encode(b"foo"), "Zm9v");
        assert_eq!(encode(b"foob"), "Zm9vYg==");
        assert_eq!(decode("Zm9vYg==").unwrap(), b"foob");
        assert_eq!(decode(" Zm9v\r\nYg==\n").unwrap(), b"foob");
    }

    #[test]
    fn empty_stream() {
        let mut out = Vec::new();
        assert_eq!(base64_encode_stream(&mut &b""[..], &mut out).unwrap(), 0);
        assert!(out.is_empty());
    }

    #[test]
    fn rejects_malformed() {
        for bad in ["====", "Zg=", "Zg", "Z===", "Zg==Zg==", "Zm9v!", "Zh==", "Zm9=", "Zg=a"] {
            assert!(matches!(decode(bad), Err(XopError::InvalidBase64 { .. })), "{bad}");
        }
    }

    #[test]
    fn byte_at_a_time_encoding() {
        let data: Vec<u8> = (0..=255u8).cycle().take(1000).collect();
        let mut enc = Base64Encoder::new(Vec::new());
        for b in &data {
            enc.write_all(std::slice::from_ref(b)).unwrap();
        }
        let (out, n) = enc.finish().unwrap();
        assert_eq!(n, encoded_len(1000));
        assert_eq!(String::from_utf8(out).unwrap(), encode(&data));
    }

    #[test]
    fn decode_reader() {
        let data: Vec<u8> = (0..10_000u32).map(|i| (i * 7 % 251) as u8).collect();
        let text = encode(&data);
        let mut out = Vec::new();
        Base64DecodeReader::new(text.as_bytes()).read_to_end(&mut out).unwrap();
        assert_eq!(out, data);
        let err = Base64DecodeReader::new(&b"Zg="[..]).read_to_end(&mut Vec::new());
        assert!(err.is_err());
    }
}
