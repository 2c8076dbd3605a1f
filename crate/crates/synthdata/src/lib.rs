//! Synthetic fine-grained image data.
//!
//! Every object is a plate carrying four part glyphs whose arrangement
//! fixes the class (or identity). Backgrounds are striped color textures
//! that can be tied to the training labels to plant a shortcut that does
//! not hold at test time. Each sample records the object's bounding box,
//! so attention quality can be scored against ground truth.

mod error;
mod generate;
mod io;
mod ppm;
pub mod render;
mod spec;

pub use error::{Result, SynthError};
pub use generate::{
    generate_dataset, image_batch, make_retrieval_split, BBox, RetrievalSplit, SyntheticSample,
};
pub use io::{
    load_bundle, load_dataset, read_dataset, save_bundle, save_dataset, write_dataset,
    DatasetBundle, DATASET_MAGIC, DATASET_VERSION, MANIFEST_FILE,
};
pub use ppm::{to_byte, PpmImage};
pub use spec::DatasetSpec;
