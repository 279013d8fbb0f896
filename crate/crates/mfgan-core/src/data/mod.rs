//! Dataset preparation: interaction ingestion, k-core filtering, per-user
//! chronological sequences, leave-one-out splitting, factor binning, and
//! fixed-length windowing.

mod bins;
mod ingest;
mod kcore;
mod manifest;
mod split;

pub use bins::{bin_factor_values, BinKind, BinSpec, FactorValue};
pub use ingest::{ingest_interactions, write_interactions, IngestReport, InteractionRecord};
pub use kcore::k_core_filter;
pub use manifest::{
    bins_reference_lines, collect_warnings, factor_file_from_pairs, prepare_factor,
    read_factor_file, read_manifest, write_manifest, FactorDeclaration, FactorFile,
    FactorSource, Manifest, PreparedFactor,
};
pub use split::{build_user_sequences, leave_one_out_split, DatasetSplit, UserSequence, UserSplit};

/// Keep the most recent `min(len, n)` items and left-pad with the reserved
/// id 0 to exactly length `n`.
pub fn window_pad(sequence: &[usize], n: usize) -> Vec<usize> {
    assert!(n >= 1, "window length must be >= 1");
    let keep = sequence.len().min(n);
    let mut out = vec![0usize; n - keep];
    out.extend_from_slice(&sequence[sequence.len() - keep..]);
    out
}
