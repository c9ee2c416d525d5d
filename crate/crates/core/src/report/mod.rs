//! Tables, heatmaps and the end-to-end audit bundle.

pub mod audit;
pub mod csv_io;
pub mod heatmap;
pub mod markdown;

pub use audit::{run_audit, AuditRunConfig, FeaturizerConfig, Manifest, ManifestEntry, OutputFormat};
pub use csv_io::{reencode, CsvArtifact, CsvDoc};
pub use heatmap::{render_heatmap, HeatmapOptions, PALETTE};
