use std::sync::Once;

static TUNE: Once = Once::new();

/// Raises glibc's mmap and trim thresholds so that the tape-sized blocks
/// freed after each update are reused rather than handed back to the kernel.
pub fn retain_freed_memory() {
    TUNE.call_once(|| {
        #[cfg(all(target_os = "linux", target_env = "gnu"))]
        unsafe {
            libc::mallopt(libc::M_MMAP_THRESHOLD, 64 << 20);
            libc::mallopt(libc::M_TRIM_THRESHOLD, 256 << 20);
            libc::mallopt(libc::M_TOP_PAD, 64 << 20);
        }
    });
}
