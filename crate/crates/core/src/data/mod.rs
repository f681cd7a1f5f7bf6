//! Dataset ingestion, distilled-set persistence and image export.

mod cifar;
mod dataset;
mod export;
mod gsd;

pub use cifar::{
    encode_cifar, load_cifar_binary, load_cifar_binary_raw, parse_cifar_bytes, record_size,
    CIFAR_SIDE,
};
pub use dataset::{toy_blobs, ChannelStats, LabeledImageDataset};
pub use export::{decode_ppm, encode_ppm, export_image, export_png, export_ppm, to_rgb8};
pub use gsd::{
    decode_gsd, encode_gsd, gsd_file_size, load_gsd, save_gsd, GSD_HEADER_LEN, GSD_MAGIC,
    GSD_VERSION,
};
