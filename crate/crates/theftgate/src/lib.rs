//! Two-stage malware detection and data-theft classification from non-root
//! Android usage telemetry.

pub mod experiments;
pub mod featsel;
pub mod ingest;
pub mod learners;
pub mod metrics;
pub mod pipeline;
pub mod synthgen;
pub mod telemetry;

mod binio;
pub mod seed;
