use std::io::{Read, Write};

use super::{Boundary, MimeError, MimeHeaders, MimePart};

/// Incremental multipart writer.
///
/// Parts are emitted strictly in call order. Each part is
/// `--boundary CRLF headers CRLF body`, and the CRLF preceding the next
/// dash-boundary belongs to the delimiter.
pub struct PackageWriter<W: Write> {
    sink: W,
    boundary: Boundary,
    chunk: Vec<u8>,
    written: u64,
    in_part: bool,
    collision_check: Option<CollisionScanner>,
}

impl<W: Write> PackageWriter<W> {
    pub fn new(sink: W, boundary: Boundary, chunk_size: usize) -> Self {
        PackageWriter {
            sink,
            boundary,
            chunk: vec![0; chunk_size.max(1)],
            written: 0,
            in_part: false,
            collision_check: None,
        }
    }

    /// Scan every body for the boundary string and fail on a hit.
    pub fn with_collision_check(mut self, enabled: bool) -> Self {
        self.collision_check = enabled.then(|| CollisionScanner::new(&self.boundary));
        self
    }

    pub fn boundary(&self) -> &Boundary {
        &self.boundary
    }

    pub fn bytes_written(&self) -> u64 {
        self.written
    }

    fn emit(&mut self, bytes: &[u8]) -> Result<(), MimeError> {
        self.sink.write_all(bytes).map_err(MimeError::Sink)?;
        self.written += bytes.len() as u64;
        Ok(())
    }

    fn end_part(&mut self) -> Result<(), MimeError> {
        if self.in_part {
            self.emit(b"\r\n")?;
            self.in_part = false;
        }
        Ok(())
    }

    /// Emits the delimiter and header block of the next part.
    pub fn start_part(&mut self, headers: &MimeHeaders) -> Result<(), MimeError> {
        self.end_part()?;
        let mut head = Vec::with_capacity(self.boundary.as_str().len() + 128);
        head.extend_from_slice(b"--");
        head.extend_from_slice(self.boundary.as_str().as_bytes());
        head.extend_from_slice(b"\r\n");
        head.extend_from_slice(&headers.to_wire());
        self.emit(&head)?;
        if let Some(scanner) = &mut self.collision_check {
            scanner.reset();
        }
        self.in_part = true;
        Ok(())
    }

    /// Appends body bytes to the current part.
    pub fn write_body(&mut self, bytes: &[u8]) -> Result<(), MimeError> {
        if !self.in_part {
            return Err(MimeError::Usage("write_body outside a part"));
        }
        if let Some(scanner) = &mut self.collision_check {
            if scanner.feed(bytes) {
                return Err(MimeError::BoundaryCollision);
            }
        }
        self.emit(bytes)
    }

    /// Streams `body` into the current part in chunks, handing every chunk to
    /// `observe` before it is written. Returns the body length.
    pub fn copy_body(
        &mut self,
        body: &mut dyn Read,
        mut observe: impl FnMut(&[u8]),
    ) -> Result<u64, MimeError> {
        let mut chunk = std::mem::take(&mut self.chunk);
        let mut total = 0u64;
        let result = loop {
            let n = match read_full(body, &mut chunk) {
                Ok(n) => n,
                Err(e) => break Err(MimeError::BodyRead(e)),
            };
            if n == 0 {
                break Ok(total);
            }
            observe(&chunk[..n]);
            if let Err(e) = self.write_body(&chunk[..n]) {
                break Err(e);
            }
            total += n as u64;
        };
        self.chunk = chunk;
        result
    }

    /// Writes a whole part.
    pub fn write_part(&mut self, headers: &MimeHeaders, body: &mut dyn Read) -> Result<u64, MimeError> {
        self.start_part(headers)?;
        self.copy_body(body, |_| {})
    }

    /// Emits the closing delimiter and flushes. Returns total bytes written.
    pub fn finish(mut self) -> Result<(u64, W), MimeError> {
        self.end_part()?;
        let close = format!("--{}--\r\n", self.boundary);
        self.emit(close.as_bytes())?;
        self.sink.flush().map_err(MimeError::Sink)?;
        Ok((self.written, self.sink))
    }
}

/// Fills `buf` as far as the source allows; short only at end of input.
pub(crate) fn read_full(src: &mut dyn Read, buf: &mut [u8]) -> std::io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match src.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}

/// Writes `parts` in order and returns the number of bytes emitted.
pub fn write_package(
    sink: &mut dyn Write,
    boundary: &Boundary,
    parts: impl IntoIterator<Item = MimePart>,
    chunk_size: usize,
) -> Result<u64, MimeError> {
    let mut writer = PackageWriter::new(sink, boundary.clone(), chunk_size);
    for mut part in parts {
        writer.write_part(&part.headers, &mut part.body)?;
    }
    let (total, _) = writer.finish()?;
    Ok(total)
}

/// Substring scanner for `CRLF--boundary` that works across chunk edges.
struct CollisionScanner {
    needle: Vec<u8>,
    tail: Vec<u8>,
}

impl CollisionScanner {
    fn new(boundary: &Boundary) -> Self {
        CollisionScanner {
            needle: format!("--{boundary}").into_bytes(),
            tail: Vec::new(),
        }
    }

    fn reset(&mut self) {
        self.tail.clear();
    }

    fn feed(&mut self, bytes: &[u8]) -> bool {
        let keep = self.needle.len() - 1;
        let mut window = std::mem::take(&mut self.tail);
        window.extend_from_slice(&bytes[..bytes.len().min(keep)]);
        let hit = contains(&window, &self.needle) || contains(bytes, &self.needle);
        let src: &[u8] = if bytes.len() >= keep { bytes } else { &window };
        self.tail = src[src.len().saturating_sub(keep)..].to_vec();
        hit
    }
}

pub(crate) fn contains(haystack: &[u8], needle: &[u8]) -> bool {
    haystack.windows(needle.len()).any(|w| w == needle)
}
