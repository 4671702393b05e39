//! File formats: PFM depth maps, sparse-sample CSV, the named-array bundle
//! container, and PNG image helpers. All formats are documented
//! byte-exactly in `docs/FORMATS.md`.

mod bundle;
mod pfm;
mod preview;
mod samples;

pub use bundle::{ArrayBundle, BundleData, BundleEntry};
pub use pfm::{read_pfm, write_pfm};
pub use preview::{read_image_rgb, rgb_to_image, write_png};
pub use samples::{read_samples_csv, write_samples_csv};
