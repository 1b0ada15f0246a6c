//! Datasets, file formats, synthetic systems and sample-size corrections.

mod alignment;
mod contacts;
mod dataset;
mod io;
mod neff;
mod reweight;
mod synthetic;

pub use alignment::{parse_alignment, read_alignment, AlignmentOptions, AMINO_ACIDS, GAP_STATE};
pub use contacts::{evaluate_contacts, rank_pairs, ContactTruth, DEFAULT_CONTACT_THRESHOLD};
pub use dataset::WeightedDataset;
pub use io::{file_hash, model_hash, read_samples, read_sidecar, samples_to_tsv, sidecar_path, write_samples, SampleSidecar};
pub use neff::{
    estimate_neff, mean_pairwise_mi, plugin_mi, sample_null_mi, site_frequencies, NeffConfig, NeffEstimate,
};
pub use reweight::{reweight_sequences, DEFAULT_REWEIGHT_THRESHOLD};
pub use synthetic::{
    generate_system, generate_system_with_truth, lattice_edges, sample_system, SamplingPlan, SyntheticSystem,
    SyntheticSystemSpec, SystemKind, DEFAULT_POTTS_THINNING,
};
