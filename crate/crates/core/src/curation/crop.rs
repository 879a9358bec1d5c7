use image::DynamicImage;

use super::{CurationConfig, Detection};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Crop {
    pub detection: Detection,
    pub image: DynamicImage,
}

#[derive(Debug, Clone)]
pub enum CropDecision {
    /// At least one vehicle crop met the size floor. `too_small` counts the
    /// vehicle crops that did not.
    Accepted { crops: Vec<Crop>, too_small: usize },
    RejectedNoVehicle,
    RejectedTooSmall,
}

/// Keep vehicle-labelled detections and crop each to its box.
///
/// A box outside the image is an invariant violation (a detector bug), not a
/// rejection.
pub fn crop_and_filter(
    image: &DynamicImage,
    detections: &[Detection],
    config: &CurationConfig,
) -> Result<CropDecision> {
    let (w, h) = (image.width(), image.height());
    for d in detections {
        if !d.bbox.fits(w, h) {
            return Err(Error::Invariant(format!(
                "box {:?} outside {w}x{h} image",
                d.bbox
            )));
        }
    }
    let vehicles: Vec<&Detection> = detections.iter().filter(|d| config.is_vehicle(&d.label)).collect();
    if vehicles.is_empty() {
        return Ok(CropDecision::RejectedNoVehicle);
    }
    let mut crops = Vec::new();
    let mut too_small = 0;
    for d in vehicles {
        if d.bbox.width < config.min_crop_side || d.bbox.height < config.min_crop_side {
            too_small += 1;
            continue;
        }
        let b = d.bbox;
        crops.push(Crop {
            detection: d.clone(),
            image: image.crop_imm(b.x, b.y, b.width, b.height),
        });
    }
    if crops.is_empty() {
        Ok(CropDecision::RejectedTooSmall)
    } else {
        Ok(CropDecision::Accepted { crops, too_small })
    }
}
