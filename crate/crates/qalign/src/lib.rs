//! qalign: a quantized embedding-alignment engine.
//!
//! The crate reproduces a complete numerical pipeline end to end:
//!
//! - [`numerics`] — dense matrices/tensors, matmul, mean pooling, row concat
//! - [`quant`] — symmetric INT8 quantization, the integer linear kernel,
//!   activation-to-weight scale migration, and the dequantization-gap
//!   demonstration
//! - [`encoder`] — text normalization, hash tokenization, batching, and a
//!   seeded feed-forward encoder in FP32 and W8A8 modes
//! - [`align`] — cosine similarity matrices and argmax mapping selection
//! - [`metrics`] — EDRM, mean average precision, Spearman correlation,
//!   classification metrics, and a combined cross-entropy + MSE loss
//! - [`bench`] — latency measurement, size accounting, CO2 conversion, and
//!   before/after trade-off summaries
//! - [`search`] — constraint-filtered configuration search with Pareto
//!   frontier extraction
//! - [`cli`] — the `qalign` command-line entry point
//!
//! The narrative guide lives in `book/`; its code snippets compile and run
//! as doctests of this crate (see the `booktest` module at the bottom).

pub mod align;
pub mod bench;
pub mod cli;
pub mod container;
pub mod encoder;
pub mod error;
pub mod metrics;
pub mod numerics;
pub mod quant;
pub mod search;

pub use error::{Error, Result};

/// Writes a file atomically: the payload lands in a temporary file in the
/// destination directory and is renamed into place, so readers never observe
/// a truncated output.
pub fn write_atomic(path: &std::path::Path, bytes: &[u8]) -> Result<()> {
    use std::io::Write;
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => std::path::PathBuf::from("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(&dir)?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// Worker-thread cap: `QALIGN_THREADS` when set to a positive number, host
/// parallelism (capped at 8) when unset or 0.
pub(crate) fn worker_threads() -> usize {
    match std::env::var("QALIGN_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
    {
        Some(n) if n > 0 => n,
        _ => std::thread::available_parallelism()
            .map(|n| n.get().min(8))
            .unwrap_or(1),
    }
}

/// Doctests for every chapter of the book, so the guide's snippets cannot
/// drift from the library.
#[cfg(doctest)]
mod booktest {
    macro_rules! booktest {
        ($name:ident, $file:expr) => {
            #[doc = include_str!(concat!("../../../book/src/", $file))]
            mod $name {}
        };
    }
    booktest!(ch01_arrays, "ch01-dense-arrays.md");
    booktest!(ch02_quantization, "ch02-int8-quantization.md");
    booktest!(ch03_dequant_gap, "ch03-the-dequantization-gap.md");
    booktest!(ch04_smoothing, "ch04-scale-migration.md");
    booktest!(ch05_encoder, "ch05-the-encoder.md");
    booktest!(ch06_alignment, "ch06-alignment.md");
    booktest!(ch07_metrics, "ch07-evaluation-metrics.md");
    booktest!(ch08_bench, "ch08-benchmark-reports.md");
    booktest!(ch09_search, "ch09-configuration-search.md");
}
