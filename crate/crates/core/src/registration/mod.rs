//! Geometric alignment of candidate images to the reference frame.

pub mod cpw;
pub mod homography;
pub mod warp;

pub use cpw::{cpw_refine, FlowSample, MeshConfig, MeshWarp};
pub use homography::{
    estimate_homography, filter_candidates, fit_homography_dlt, similarity_deviation, Homography,
    HomographyCandidate, RansacConfig,
};
pub use warp::{warp_image, Canvas};
