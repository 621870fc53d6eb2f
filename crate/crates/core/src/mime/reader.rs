use std::io::{self, Read};

use super::{Boundary, MimeError, MimeHeaders, MAX_HEADER_BYTES};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum State {
    /// Nothing read yet; the source must start with the dash-boundary.
    Start,
    /// Inside a part body.
    Body,
    /// A delimiter has been consumed; the next two bytes decide what follows.
    AfterDelimiter,
    Finished,
}

/// Headers of a part as returned by [`PackageReader::next_part`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReadPart {
    pub headers: MimeHeaders,
    /// Header block exactly as received, including the terminating blank line.
    pub raw_headers: Vec<u8>,
}

/// Pull-based multipart reader.
///
/// Call [`next_part`](Self::next_part), then drain the body with
/// [`read_body`](Self::read_body) (or [`body`](Self::body) /
/// [`skip_body`](Self::skip_body)) before asking for the next part. Memory is
/// one fixed buffer of `max(chunk, header limit)` plus the delimiter length.
pub struct PackageReader<R: Read> {
    src: R,
    buf: Vec<u8>,
    start: usize,
    end: usize,
    eof: bool,
    delimiter: Vec<u8>,
    state: State,
    strict: bool,
    consumed: u64,
}

impl<R: Read> PackageReader<R> {
    pub fn new(src: R, boundary: &Boundary, chunk_size: usize) -> Self {
        let delimiter = format!("\r\n--{boundary}").into_bytes();
        let capacity = chunk_size.max(MAX_HEADER_BYTES + 4) + delimiter.len() + 2;
        PackageReader {
            src,
            buf: vec![0; capacity],
            start: 0,
            end: 0,
            eof: false,
            delimiter,
            state: State::Start,
            strict: false,
            consumed: 0,
        }
    }

    /// Strict framing: no transport padding after delimiters, header lines
    /// must end in CRLF, and nothing but a single CRLF may follow the close
    /// delimiter.
    pub fn strict(mut self, strict: bool) -> Self {
        self.strict = strict;
        self
    }

    /// Bytes consumed from the source so far.
    pub fn bytes_consumed(&self) -> u64 {
        self.consumed
    }

    fn available(&self) -> &[u8] {
        &self.buf[self.start..self.end]
    }

    fn advance(&mut self, n: usize) {
        self.start += n;
        self.consumed += n as u64;
    }

    /// Reads more input. Returns false at end of input.
    fn fill(&mut self) -> Result<bool, MimeError> {
        if self.eof {
            return Ok(false);
        }
        if self.start > 0 {
            self.buf.copy_within(self.start..self.end, 0);
            self.end -= self.start;
            self.start = 0;
        }
        if self.end == self.buf.len() {
            return Err(MimeError::Usage("reader buffer full"));
        }
        loop {
            match self.src.read(&mut self.buf[self.end..]) {
                Ok(0) => {
                    self.eof = true;
                    return Ok(false);
                }
                Ok(n) => {
                    self.end += n;
                    return Ok(true);
                }
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(e) => return Err(MimeError::from_io(e)),
            }
        }
    }

    /// Ensures at least `n` bytes are buffered. Returns false on early EOF.
    fn want(&mut self, n: usize) -> Result<bool, MimeError> {
        while self.available().len() < n {
            if !self.fill()? {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// Advances to the next part. Returns `None` after the close delimiter.
    pub fn next_part(&mut self) -> Result<Option<ReadPart>, MimeError> {
        match self.state {
            State::Finished => return Ok(None),
            State::Body => return Err(MimeError::BodyNotConsumed),
            State::Start => {
                let len = self.delimiter.len() - 2;
                if !self.want(len)? || self.available()[..len] != self.delimiter[2..] {
                    return Err(MimeError::MissingBoundary);
                }
                self.advance(len);
            }
            State::AfterDelimiter => {}
        }

        if !self.want(2)? {
            return Err(MimeError::TruncatedPackage);
        }
        if self.available().starts_with(b"--") {
            self.advance(2);
            self.state = State::Finished;
            return self.close().map(|_| None);
        }
        if !self.strict {
            // transport padding
            loop {
                if !self.want(1)? {
                    return Err(MimeError::TruncatedPackage);
                }
                match self.available()[0] {
                    b' ' | b'\t' => self.advance(1),
                    _ => break,
                }
            }
            if !self.want(2)? {
                return Err(MimeError::TruncatedPackage);
            }
        }
        if self.available().starts_with(b"\r\n") {
            self.advance(2);
        } else if !self.strict && self.available().starts_with(b"\n") {
            self.advance(1);
        } else {
            return Err(MimeError::MalformedFraming("garbage after boundary".into()));
        }

        let part = self.headers()?;
        self.state = State::Body;
        Ok(Some(part))
    }

    fn close(&mut self) -> Result<(), MimeError> {
        if !self.strict {
            return Ok(());
        }
        // Exactly one CRLF, then end of input.
        self.want(3)?;
        if self.available() != b"\r\n" {
            return Err(MimeError::MalformedFraming("data after close delimiter".into()));
        }
        self.advance(2);
        Ok(())
    }

    fn headers(&mut self) -> Result<ReadPart, MimeError> {
        loop {
            let avail = self.available();
            let mut line_start = 0;
            let mut terminator = None;
            while let Some(i) = avail[line_start..].iter().position(|&b| b == b'\n') {
                let line_end = line_start + i;
                let line = &avail[line_start..line_end];
                if self.strict && !line.ends_with(b"\r") {
                    return Err(MimeError::MalformedHeaders("bare LF in header block".into()));
                }
                if line.is_empty() || line == b"\r" {
                    terminator = Some((line_start, line_end + 1));
                    break;
                }
                line_start = line_end + 1;
            }
            if let Some((block_end, total)) = terminator {
                if total > MAX_HEADER_BYTES {
                    return Err(MimeError::MalformedHeaders("header block too large".into()));
                }
                let headers = MimeHeaders::parse_block(&avail[..block_end])?;
                let raw_headers = avail[..total].to_vec();
                self.advance(total);
                return Ok(ReadPart { headers, raw_headers });
            }
            if avail.len() > MAX_HEADER_BYTES {
                return Err(MimeError::MalformedHeaders("header block too large".into()));
            }
            if !self.fill()? {
                return Err(MimeError::TruncatedPackage);
            }
        }
    }

    /// Reads body bytes of the current part. Returns 0 at the end of the body.
    pub fn read_body(&mut self, out: &mut [u8]) -> Result<usize, MimeError> {
        if self.state != State::Body || out.is_empty() {
            return Ok(0);
        }
        loop {
            let avail = self.available();
            let dl = self.delimiter.len();
            match find_delimiter(avail, &self.delimiter) {
                Some(0) => {
                    self.advance(dl);
                    self.state = State::AfterDelimiter;
                    return Ok(0);
                }
                Some(i) => {
                    let n = i.min(out.len());
                    out[..n].copy_from_slice(&avail[..n]);
                    self.advance(n);
                    return Ok(n);
                }
                None => {
                    // A suffix shorter than the delimiter may be its beginning.
                    let safe = avail.len().saturating_sub(dl - 1);
                    if safe > 0 {
                        let n = safe.min(out.len());
                        out[..n].copy_from_slice(&avail[..n]);
                        self.advance(n);
                        return Ok(n);
                    }
                    if !self.fill()? {
                        return Err(MimeError::TruncatedPackage);
                    }
                }
            }
        }
    }

    /// Visits the rest of the current body chunk by chunk without copying.
    pub fn for_each_body_chunk(&mut self, mut f: impl FnMut(&[u8])) -> Result<u64, MimeError> {
        let mut total = 0u64;
        if self.state != State::Body {
            return Ok(0);
        }
        loop {
            let dl = self.delimiter.len();
            let avail = &self.buf[self.start..self.end];
            let (n, done) = match find_delimiter(avail, &self.delimiter) {
                Some(i) => (i, true),
                None => (avail.len().saturating_sub(dl - 1), false),
            };
            if n > 0 {
                f(&avail[..n]);
                total += n as u64;
                self.advance(n);
            }
            if done {
                self.advance(dl);
                self.state = State::AfterDelimiter;
                return Ok(total);
            }
            if !self.fill()? {
                return Err(MimeError::TruncatedPackage);
            }
        }
    }

    /// Discards the rest of the current body.
    pub fn skip_body(&mut self) -> Result<u64, MimeError> {
        self.for_each_body_chunk(|_| {})
    }

    /// The current body as an `io::Read`. Framing errors surface as
    /// `io::Error`s wrapping the [`MimeError`].
    pub fn body(&mut self) -> BodyReader<'_, R> {
        BodyReader { reader: self }
    }

    pub fn into_inner(self) -> R {
        self.src
    }
}

fn find_delimiter(haystack: &[u8], delimiter: &[u8]) -> Option<usize> {
    let mut from = 0;
    while let Some(i) = haystack[from..].iter().position(|&b| b == b'\r') {
        let at = from + i;
        let rest = &haystack[at..];
        if rest.len() < delimiter.len() {
            return None;
        }
        if rest.starts_with(delimiter) {
            return Some(at);
        }
        from = at + 1;
    }
    None
}

pub struct BodyReader<'a, R: Read> {
    reader: &'a mut PackageReader<R>,
}

impl<R: Read> Read for BodyReader<'_, R> {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        self.reader.read_body(buf).map_err(MimeError::into_io)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mime::{write_package, MimePart};

    fn boundary() -> Boundary {
        Boundary::new("=_0123456789abcdef").unwrap()
    }

    fn package(bodies: &[&[u8]]) -> Vec<u8> {
        let parts = bodies.iter().enumerate().map(|(i, b)| {
            MimePart::from_bytes(
                MimeHeaders::binary(format!("p{i}@x"), "application/octet-stream").unwrap(),
                b.to_vec(),
            )
        });
        let mut out = Vec::new();
        write_package(&mut out, &boundary(), parts, 7).unwrap();
        out
    }

    fn read_all(bytes: &[u8], chunk: usize, strict: bool) -> Result<Vec<(MimeHeaders, Vec<u8>)>, MimeError> {
        let mut r = PackageReader::new(bytes, &boundary(), chunk).strict(strict);
        let mut parts = Vec::new();
        while let Some(p) = r.next_part()? {
            let mut body = Vec::new();
            r.body().read_to_end(&mut body).map_err(MimeError::from_io)?;
            parts.push((p.headers, body));
        }
        Ok(parts)
    }

    #[test]
    fn round_trip_three_parts() {
        let bodies: [&[u8]; 3] = [b"<root/>", b"", b"binary\r\n-\r\n--x\x00\xff"];
        let bytes = package(&bodies);
        for strict in [false, true] {
            let parts = read_all(&bytes, 1, strict).unwrap();
            assert_eq!(parts.len(), 3);
            for (i, (h, body)) in parts.iter().enumerate() {
                assert_eq!(h.content_id, format!("p{i}@x"));
                assert_eq!(&body[..], bodies[i]);
            }
        }
    }

    #[test]
    fn truncated_mid_body() {
        let bytes = package(&[b"0123456789abcdef0123456789"]);
        let cut = &bytes[..bytes.len() - 40];
        assert!(matches!(read_all(cut, 16, false), Err(MimeError::TruncatedPackage)));
        assert!(matches!(read_all(&bytes[..10], 16, false), Err(MimeError::MissingBoundary)));
        let headers_cut = &bytes[..30];
        assert!(matches!(read_all(headers_cut, 16, false), Err(MimeError::TruncatedPackage)));
    }

    #[test]
    fn missing_boundary() {
        assert!(matches!(read_all(b"hello world, no boundary here", 16, false), Err(MimeError::MissingBoundary)));
    }

    #[test]
    fn must_consume_body_first() {
        let bytes = package(&[b"abc", b"def"]);
        let mut r = PackageReader::new(&bytes[..], &boundary(), 16);
        r.next_part().unwrap().unwrap();
        assert!(matches!(r.next_part(), Err(MimeError::BodyNotConsumed)));
        assert_eq!(r.skip_body().unwrap(), 3);
        assert_eq!(r.next_part().unwrap().unwrap().headers.content_id, "p1@x");
    }

    #[test]
    fn lenient_lf_headers_and_padding() {
        let b = boundary();
        let text = format!("--{b}  \r\nContent-Type: text/plain\nContent-ID: <a@b>\n\nbody\r\n--{b}--\r\nepilogue");
        let parts = read_all(text.as_bytes(), 16, false).unwrap();
        assert_eq!(parts[0].1, b"body");
        assert!(read_all(text.as_bytes(), 16, true).is_err());
    }

    #[test]
    fn strict_rejects_epilogue() {
        let mut bytes = package(&[b"x"]);
        assert!(read_all(&bytes, 16, true).is_ok());
        bytes.push(b'!');
        assert!(matches!(read_all(&bytes, 16, true), Err(MimeError::MalformedFraming(_))));
        assert!(read_all(&bytes, 16, false).is_ok());
    }

    #[test]
    fn oversized_header_block() {
        let b = boundary();
        let text = format!("--{b}\r\nContent-Type: text/plain\r\nX: {}\r\n\r\n\r\n--{b}--\r\n", "a".repeat(MAX_HEADER_BYTES));
        assert!(matches!(read_all(text.as_bytes(), 16, false), Err(MimeError::MalformedHeaders(_))));
    }

    #[test]
    fn raw_headers_are_exact() {
        let bytes = package(&[b"x"]);
        let mut r = PackageReader::new(&bytes[..], &boundary(), 16);
        let p = r.next_part().unwrap().unwrap();
        assert_eq!(p.raw_headers, p.headers.to_wire());
    }
}
