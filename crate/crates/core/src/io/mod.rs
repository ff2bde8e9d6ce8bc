//! Files in and out: images, detections, matches, flow and configuration.

mod config;
mod formats;
mod image;

pub use config::{CanvasPolicy, StitchConfig};
pub use formats::{
    detection_from_record, detections_to_records, matches_to_records, parse_detections, parse_matches,
    DetectionRecord, DetectionSet, FlowFile, MatchRecord,
};
pub use image::{palette_color, raster_from_image, read_label_map, read_raster, write_label_map, write_png};
