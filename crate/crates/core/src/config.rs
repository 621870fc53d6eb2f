/// Default streaming chunk size in bytes.
pub const DEFAULT_CHUNK_BYTES: usize = 64 * 1024;

/// Environment variable overriding [`DEFAULT_CHUNK_BYTES`].
pub const CHUNK_ENV: &str = "STREAMSIGN_CHUNK_BYTES";

/// Chunk size used by every streaming path: `STREAMSIGN_CHUNK_BYTES` if set to
/// a positive integer, otherwise 64 KiB.
pub fn chunk_size() -> usize {
    std::env::var(CHUNK_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or(DEFAULT_CHUNK_BYTES)
}
