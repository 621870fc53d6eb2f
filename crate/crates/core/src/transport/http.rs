use std::io::{self, BufRead, Read, Write};

/// Longest request or status line plus headers accepted by either side.
pub(crate) const MAX_HEAD_BYTES: usize = 16 * 1024;

/// HTTP/1.1 chunked transfer-encoding writer. Bytes are gathered into chunks
/// of `chunk_size`; `flush` emits a short chunk for whatever is pending.
pub struct ChunkedWriter<W: Write> {
    inner: W,
    buf: Vec<u8>,
    chunk_size: usize,
    body_bytes: u64,
}

impl<W: Write> ChunkedWriter<W> {
    pub fn new(inner: W, chunk_size: usize) -> Self {
        let chunk_size = chunk_size.max(1);
        ChunkedWriter {
            inner,
            buf: Vec::with_capacity(chunk_size),
            chunk_size,
            body_bytes: 0,
        }
    }

    /// Body bytes accepted so far, excluding chunk framing.
    pub fn body_bytes(&self) -> u64 {
        self.body_bytes
    }

    fn emit(&mut self) -> io::Result<()> {
        if self.buf.is_empty() {
            return Ok(());
        }
        let mut frame = format!("{:x}\r\n", self.buf.len()).into_bytes();
        frame.reserve(self.buf.len() + 2);
        frame.extend_from_slice(&self.buf);
        frame.extend_from_slice(b"\r\n");
        self.inner.write_all(&frame)?;
        self.buf.clear();
        Ok(())
    }

    /// Writes the pending chunk and the terminating zero-length chunk.
    pub fn finish(mut self) -> io::Result<W> {
        self.emit()?;
        self.inner.write_all(b"0\r\n\r\n")?;
        self.inner.flush()?;
        Ok(self.inner)
    }
}

impl<W: Write> Write for ChunkedWriter<W> {
    fn write(&mut self, data: &[u8]) -> io::Result<usize> {
        let n = data.len().min(self.chunk_size - self.buf.len());
        self.buf.extend_from_slice(&data[..n]);
        self.body_bytes += n as u64;
        if self.buf.len() == self.chunk_size {
            self.emit()?;
        }
        Ok(n)
    }

    fn flush(&mut self) -> io::Result<()> {
        self.emit()?;
        self.inner.flush()
    }
}

/// Decoder for a chunked body. End of input before the terminating chunk is
/// reported as `UnexpectedEof`.
pub struct ChunkedReader<R: BufRead> {
    inner: R,
    remaining: u64,
    done: bool,
}

impl<R: BufRead> ChunkedReader<R> {
    pub fn new(inner: R) -> Self {
        ChunkedReader {
            inner,
            remaining: 0,
            done: false,
        }
    }

    pub fn into_inner(self) -> R {
        self.inner
    }

    fn next_chunk(&mut self) -> io::Result<()> {
        let line = read_line(&mut self.inner, 1024)?;
        let size = line.split(';').next().unwrap_or("").trim();
        let size = u64::from_str_radix(size, 16)
            .map_err(|_| invalid(format!("bad chunk size {line:?}")))?;
        if size == 0 {
            // Trailer section up to the empty line.
            let mut total = 0;
            loop {
                let t = read_line(&mut self.inner, MAX_HEAD_BYTES)?;
                total += t.len();
                if t.is_empty() {
                    break;
                }
                if total > MAX_HEAD_BYTES {
                    return Err(invalid("trailer too long".into()));
                }
            }
            self.done = true;
        }
        self.remaining = size;
        Ok(())
    }
}

impl<R: BufRead> Read for ChunkedReader<R> {
    fn read(&mut self, out: &mut [u8]) -> io::Result<usize> {
        if out.is_empty() || self.done {
            return Ok(0);
        }
        if self.remaining == 0 {
            self.next_chunk()?;
            if self.done {
                return Ok(0);
            }
        }
        let want = out.len().min(self.remaining.min(usize::MAX as u64) as usize);
        let n = self.inner.read(&mut out[..want])?;
        if n == 0 {
            return Err(io::ErrorKind::UnexpectedEof.into());
        }
        self.remaining -= n as u64;
        if self.remaining == 0 {
            let mut crlf = [0u8; 2];
            self.inner.read_exact(&mut crlf)?;
            if &crlf != b"\r\n" {
                return Err(invalid("chunk not followed by CRLF".into()));
            }
        }
        Ok(n)
    }
}

/// Body with a declared Content-Length; short input is `UnexpectedEof`.
pub(crate) struct LengthReader<R: Read> {
    inner: R,
    remaining: u64,
}

impl<R: Read> LengthReader<R> {
    pub(crate) fn new(inner: R, length: u64) -> Self {
        LengthReader { inner, remaining: length }
    }
}

impl<R: Read> Read for LengthReader<R> {
    fn read(&mut self, out: &mut [u8]) -> io::Result<usize> {
        if self.remaining == 0 || out.is_empty() {
            return Ok(0);
        }
        let want = out.len().min(self.remaining.min(usize::MAX as u64) as usize);
        let n = self.inner.read(&mut out[..want])?;
        if n == 0 {
            return Err(io::ErrorKind::UnexpectedEof.into());
        }
        self.remaining -= n as u64;
        Ok(n)
    }
}

fn invalid(msg: String) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg)
}

/// Reads one CRLF-terminated line without the terminator.
pub(crate) fn read_line(r: &mut impl BufRead, limit: usize) -> io::Result<String> {
    let mut line = Vec::new();
    (&mut *r).take(limit as u64 + 2).read_until(b'\n', &mut line)?;
    if line.last() != Some(&b'\n') {
        return Err(if line.len() > limit {
            invalid("line too long".into())
        } else {
            io::ErrorKind::UnexpectedEof.into()
        });
    }
    line.pop();
    if line.pop() != Some(b'\r') {
        return Err(invalid("bare LF line ending".into()));
    }
    String::from_utf8(line).map_err(|_| invalid("non-UTF-8 header line".into()))
}

/// Start line and headers of a request or response.
#[derive(Debug)]
pub(crate) struct Head {
    pub start: String,
    pub headers: Vec<(String, String)>,
}

impl Head {
    pub(crate) fn read(r: &mut impl BufRead) -> io::Result<Head> {
        let start = read_line(r, MAX_HEAD_BYTES)?;
        let mut total = start.len();
        let mut headers = Vec::new();
        loop {
            let line = read_line(r, MAX_HEAD_BYTES)?;
            if line.is_empty() {
                break;
            }
            total += line.len();
            if total > MAX_HEAD_BYTES {
                return Err(invalid("header section too long".into()));
            }
            let (name, value) = line
                .split_once(':')
                .ok_or_else(|| invalid(format!("malformed header {line:?}")))?;
            headers.push((name.trim().to_ascii_lowercase(), value.trim().to_owned()));
        }
        Ok(Head { start, headers })
    }

    pub(crate) fn header(&self, name: &str) -> Option<&str> {
        self.headers
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_str())
    }

    pub(crate) fn is_chunked(&self) -> bool {
        self.header("transfer-encoding")
            .map(|v| v.eq_ignore_ascii_case("chunked"))
            .unwrap_or(false)
    }

    pub(crate) fn content_length(&self) -> io::Result<Option<u64>> {
        self.header("content-length")
            .map(|v| v.parse().map_err(|_| invalid(format!("bad content-length {v:?}"))))
            .transpose()
    }

    /// Body reader selected by the framing headers. No framing means no body.
    pub(crate) fn body<'a, R: BufRead + Send + 'a>(&self, r: R) -> io::Result<Box<dyn Read + Send + 'a>> {
        Ok(if self.is_chunked() {
            Box::new(ChunkedReader::new(r))
        } else {
            Box::new(LengthReader::new(r, self.content_length()?.unwrap_or(0)))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use io::BufReader;

    fn chunked(data: &[u8], chunk: usize, pieces: usize) -> Vec<u8> {
        let mut w = ChunkedWriter::new(Vec::new(), chunk);
        for part in data.chunks(pieces.max(1)) {
            w.write_all(part).unwrap();
        }
        w.finish().unwrap()
    }

    #[test]
    fn framing_is_exact() {
        assert_eq!(chunked(b"hello world", 4, 3), b"4\r\nhell\r\n4\r\no wo\r\n3\r\nrld\r\n0\r\n\r\n");
        assert_eq!(chunked(b"", 4, 1), b"0\r\n\r\n");
        let mut w = ChunkedWriter::new(Vec::new(), 100);
        w.write_all(b"ab").unwrap();
        w.flush().unwrap();
        w.write_all(b"c").unwrap();
        assert_eq!(w.body_bytes(), 3);
        assert_eq!(w.finish().unwrap(), b"2\r\nab\r\n1\r\nc\r\n0\r\n\r\n");
    }

    #[test]
    fn round_trip_at_odd_sizes() {
        let data: Vec<u8> = (0..10_000u32).map(|i| (i * 7 % 256) as u8).collect();
        for (chunk, pieces, read) in [(1, 1, 1), (17, 5, 3), (4096, 999, 8192), (100_000, 10_000, 7)] {
            let wire = chunked(&data, chunk, pieces);
            let mut r = ChunkedReader::new(BufReader::with_capacity(read.max(2), &wire[..]));
            let mut out = Vec::new();
            r.read_to_end(&mut out).unwrap();
            assert_eq!(out, data);
        }
    }

    #[test]
    fn reader_accepts_extensions_and_trailers() {
        let wire = b"3;x=y\r\nabc\r\n0\r\nX-T: 1\r\n\r\nrest";
        let mut r = ChunkedReader::new(&wire[..]);
        let mut out = Vec::new();
        r.read_to_end(&mut out).unwrap();
        assert_eq!(out, b"abc");
        assert_eq!(r.into_inner(), b"rest");
    }

    #[test]
    fn truncation_is_unexpected_eof() {
        let wire = chunked(&[9u8; 1000], 300, 1000);
        for cut in [0, 1, 5, 300, 305, wire.len() - 3] {
            let mut out = Vec::new();
            let err = ChunkedReader::new(&wire[..cut]).read_to_end(&mut out).unwrap_err();
            assert_eq!(err.kind(), io::ErrorKind::UnexpectedEof, "cut {cut}");
        }
        let mut out = Vec::new();
        let err = LengthReader::new(&b"abc"[..], 5).read_to_end(&mut out).unwrap_err();
        assert_eq!(err.kind(), io::ErrorKind::UnexpectedEof);
    }

    #[test]
    fn malformed_chunks_are_invalid_data() {
        for wire in [&b"zz\r\nabc"[..], b"3\r\nabcXY0\r\n\r\n", b"3\nabc\r\n"] {
            let mut out = Vec::new();
            let err = ChunkedReader::new(wire).read_to_end(&mut out).unwrap_err();
            assert_eq!(err.kind(), io::ErrorKind::InvalidData, "{wire:?}");
        }
    }

    #[test]
    fn head_parsing() {
        let wire = b"POST /upload HTTP/1.1\r\nContent-Type: a/b; x=\"y\"\r\nTransfer-Encoding: chunked\r\n\r\n";
        let head = Head::read(&mut &wire[..]).unwrap();
        assert_eq!(head.start, "POST /upload HTTP/1.1");
        assert_eq!(head.header("content-type"), Some("a/b; x=\"y\""));
        assert!(head.is_chunked());
        assert!(Head::read(&mut &b"GET / HTTP/1.1\r\nbroken\r\n\r\n"[..]).is_err());
        let long = format!("GET / HTTP/1.1\r\nA: {}\r\n\r\n", "x".repeat(MAX_HEAD_BYTES));
        assert!(Head::read(&mut long.as_bytes()).is_err());
    }
}
