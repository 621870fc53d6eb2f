//! Per-thread allocation accounting.
//!
//! Install [`TrackingAllocator`] as the global allocator in a binary or test
//! target, then wrap the code of interest in a [`PeakScope`]. Counters are
//! thread-local, so concurrent tests and server threads do not disturb a
//! measurement taken on the signing thread. Memory freed on a different
//! thread than it was allocated on shows up as a negative drift on the
//! freeing thread; the signing paths never hand buffers across threads.

use std::alloc::{GlobalAlloc, Layout, System};
use std::cell::Cell;
use std::sync::atomic::{AtomicBool, Ordering};

thread_local! {
    static CURRENT: Cell<isize> = const { Cell::new(0) };
    static PEAK: Cell<isize> = const { Cell::new(0) };
}

static INSTALLED: AtomicBool = AtomicBool::new(false);

pub struct TrackingAllocator;

#[inline]
fn record(delta: isize) {
    let _ = CURRENT.try_with(|current| {
        let now = current.get() + delta;
        current.set(now);
        let _ = PEAK.try_with(|peak| {
            if now > peak.get() {
                peak.set(now);
            }
        });
    });
}

unsafe impl GlobalAlloc for TrackingAllocator {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        let ptr = System.alloc(layout);
        if !ptr.is_null() {
            if !INSTALLED.load(Ordering::Relaxed) {
                INSTALLED.store(true, Ordering::Relaxed);
            }
            record(layout.size() as isize);
        }
        ptr
    }

    unsafe fn alloc_zeroed(&self, layout: Layout) -> *mut u8 {
        let ptr = System.alloc_zeroed(layout);
        if !ptr.is_null() {
            record(layout.size() as isize);
        }
        ptr
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        System.dealloc(ptr, layout);
        record(-(layout.size() as isize));
    }

    unsafe fn realloc(&self, ptr: *mut u8, layout: Layout, new_size: usize) -> *mut u8 {
        let new = System.realloc(ptr, layout, new_size);
        if !new.is_null() {
            record(new_size as isize - layout.size() as isize);
        }
        new
    }
}

/// True once a [`TrackingAllocator`] has served at least one allocation.
pub fn is_installed() -> bool {
    INSTALLED.load(Ordering::Relaxed)
}

/// Live bytes allocated by the calling thread (net of its frees).
pub fn current_bytes() -> isize {
    CURRENT.with(Cell::get)
}

/// High-water mark of the calling thread's allocations since the scope began.
pub struct PeakScope {
    base: isize,
}

impl PeakScope {
    pub fn start() -> Self {
        let base = CURRENT.with(Cell::get);
        PEAK.with(|p| p.set(base));
        PeakScope { base }
    }

    pub fn peak_bytes(&self) -> u64 {
        (PEAK.with(Cell::get) - self.base).max(0) as u64
    }
}

/// Runs `f` and returns its result with the peak bytes it allocated on this thread.
pub fn measure<T>(f: impl FnOnce() -> T) -> (T, u64) {
    let scope = PeakScope::start();
    let out = f();
    let peak = scope.peak_bytes();
    (out, peak)
}
