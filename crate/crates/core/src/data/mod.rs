//! Dataset ingestion, spike encoding, synthetic task generation and batch
//! iteration.

mod dataset;
mod encode;
mod events;
mod idx;
mod synth;

pub use dataset::{batches, BatchIter, Dataset};
pub use encode::encode_poisson;
pub use events::{
    events_from_tensor, load_event_manifest, load_events_csv, EventManifest, EventRecord,
};
pub use idx::{load_idx_images, load_idx_labels, IdxImages};
pub use synth::{synth_pattern_dataset, synth_templates, SynthSpec};
