use std::io::{self, Write};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use super::TransportError;

pub const DEFAULT_BUCKET_CHUNKS: usize = 4;

/// Token-bucket parameters: long-run `rate` in bytes per second and a
/// `bucket` capacity that bounds bursts.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ThrottleConfig {
    pub rate: f64,
    pub bucket: u64,
}

impl ThrottleConfig {
    pub fn new(rate: f64, bucket: u64) -> Result<Self, TransportError> {
        if !(rate.is_finite() && rate > 0.0) {
            return Err(TransportError::InvalidThrottle(format!("rate {rate}")));
        }
        if bucket < crate::config::chunk_size() as u64 {
            return Err(TransportError::InvalidThrottle(format!("bucket {bucket} is smaller than one chunk")));
        }
        Ok(ThrottleConfig { rate, bucket })
    }

    /// `rate` with a bucket of [`DEFAULT_BUCKET_CHUNKS`] chunks. Headroom
    /// above one chunk lets credit earned while oversleeping carry over to
    /// the next write instead of being clipped at the cap.
    pub fn with_rate(rate: f64) -> Result<Self, TransportError> {
        Self::new(rate, (DEFAULT_BUCKET_CHUNKS * crate::config::chunk_size()) as u64)
    }
}

/// Writer that paces bytes into `inner` with a token bucket. The bucket
/// starts empty, so a write of `n` bytes never completes before `n/rate`
/// seconds of accumulated credit, and each call writes at most `bucket` bytes.
pub struct ThrottledSink<W: Write> {
    inner: W,
    config: ThrottleConfig,
    tokens: f64,
    last: Instant,
}

pub fn throttled_sink<W: Write>(inner: W, config: ThrottleConfig) -> ThrottledSink<W> {
    ThrottledSink {
        inner,
        config,
        tokens: 0.0,
        last: Instant::now(),
    }
}

impl<W: Write> ThrottledSink<W> {
    pub fn into_inner(self) -> W {
        self.inner
    }

    pub fn get_ref(&self) -> &W {
        &self.inner
    }

    fn refill(&mut self) {
        let now = Instant::now();
        let earned = now.duration_since(self.last).as_secs_f64() * self.config.rate;
        self.tokens = (self.tokens + earned).min(self.config.bucket as f64);
        self.last = now;
    }
}

impl<W: Write> Write for ThrottledSink<W> {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        if buf.is_empty() {
            return Ok(0);
        }
        let n = buf.len().min(self.config.bucket as usize);
        self.refill();
        while self.tokens < n as f64 {
            let wait = (n as f64 - self.tokens) / self.config.rate;
            thread::sleep(Duration::from_secs_f64(wait));
            self.refill();
        }
        self.tokens -= n as f64;
        self.inner.write_all(&buf[..n])?;
        Ok(n)
    }

    fn flush(&mut self) -> io::Result<()> {
        self.inner.flush()
    }
}

/// First and last write instants seen by a [`TimingSink`].
#[derive(Clone, Copy, Debug, Default)]
pub struct WriteTimes {
    /// Entry into the first non-empty write.
    pub first: Option<Instant>,
    /// Return from the most recent write.
    pub last: Option<Instant>,
    pub bytes: u64,
}

/// Pass-through writer recording [`WriteTimes`] into a shared cell.
pub struct TimingSink<W: Write> {
    inner: W,
    times: Arc<Mutex<WriteTimes>>,
}

impl<W: Write> TimingSink<W> {
    pub fn new(inner: W) -> Self {
        TimingSink {
            inner,
            times: Arc::default(),
        }
    }

    pub fn times(&self) -> Arc<Mutex<WriteTimes>> {
        Arc::clone(&self.times)
    }

    pub fn into_inner(self) -> W {
        self.inner
    }
}

impl<W: Write> Write for TimingSink<W> {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        if buf.is_empty() {
            return Ok(0);
        }
        let entered = Instant::now();
        let n = self.inner.write(buf)?;
        let mut t = self.times.lock().expect("timing lock");
        t.first.get_or_insert(entered);
        t.last = Some(Instant::now());
        t.bytes += n as u64;
        Ok(n)
    }

    fn flush(&mut self) -> io::Result<()> {
        self.inner.flush()
    }
}
