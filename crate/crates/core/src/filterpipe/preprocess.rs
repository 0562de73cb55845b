use image::imageops::FilterType;
use serde::{Deserialize, Serialize};

use crate::backend::{BackendMetadata, InputTensor};

/// Square input sizes used by the supported model families.
pub const SUPPORTED_SIZES: [u32; 4] = [224, 300, 320, 512];

#[derive(Debug, thiserror::Error)]
pub enum PreprocessError {
    #[error("cannot decode image: {0}")]
    Decode(String),
    #[error("unsupported target size {0}; expected one of 224, 300, 320, 512")]
    TargetSize(u32),
    #[error("target size {spec} does not match the model input {model}")]
    ModelMismatch { spec: u32, model: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PixelScale {
    /// `[-1, 1]`, used by MobileNetV2-style classifiers.
    Symmetric,
    /// `[0, 1]`, used by EfficientNet-style classifiers.
    Unit,
}

impl PixelScale {
    #[inline]
    fn apply(self, v: u8) -> f32 {
        match self {
            PixelScale::Unit => v as f32 / 255.0,
            PixelScale::Symmetric => v as f32 / 127.5 - 1.0,
        }
    }

    pub fn range(self) -> (f32, f32) {
        match self {
            PixelScale::Unit => (0.0, 1.0),
            PixelScale::Symmetric => (-1.0, 1.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ResizeMethod {
    #[default]
    Bilinear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreprocessSpec {
    pub target_size: u32,
    pub pixel_scale: PixelScale,
    #[serde(default)]
    pub resize_method: ResizeMethod,
}

impl PreprocessSpec {
    pub fn new(target_size: u32, pixel_scale: PixelScale) -> Result<Self, PreprocessError> {
        if !SUPPORTED_SIZES.contains(&target_size) {
            return Err(PreprocessError::TargetSize(target_size));
        }
        Ok(PreprocessSpec {
            target_size,
            pixel_scale,
            resize_method: ResizeMethod::Bilinear,
        })
    }

    pub fn validate_for(&self, metadata: &BackendMetadata) -> Result<(), PreprocessError> {
        match metadata.input_resolution {
            Some(model) if model != self.target_size => Err(PreprocessError::ModelMismatch {
                spec: self.target_size,
                model,
            }),
            _ => Ok(()),
        }
    }
}

/// Decodes, resizes straight to the square target (no letterboxing) and
/// scales pixels. Output is `target × target × 3`.
pub fn preprocess(bytes: &[u8], spec: &PreprocessSpec) -> Result<InputTensor, PreprocessError> {
    let img = image::load_from_memory(bytes).map_err(|e| PreprocessError::Decode(e.to_string()))?;
    let rgb = img.to_rgb8();
    let size = spec.target_size;
    let filter = match spec.resize_method {
        ResizeMethod::Bilinear => FilterType::Triangle,
    };
    let resized = if rgb.dimensions() == (size, size) {
        rgb
    } else {
        image::imageops::resize(&rgb, size, size, filter)
    };
    let data = resized
        .into_raw()
        .into_iter()
        .map(|v| spec.pixel_scale.apply(v))
        .collect();
    Ok(InputTensor::new(size as usize, size as usize, 3, data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{ImageFormat, Rgb, RgbImage};
    use std::io::Cursor;

    fn png(w: u32, h: u32, value: u8) -> Vec<u8> {
        let img = RgbImage::from_pixel(w, h, Rgb([value, value, value]));
        let mut buf = Cursor::new(Vec::new());
        img.write_to(&mut buf, ImageFormat::Png).unwrap();
        buf.into_inner()
    }

    #[test]
    fn mid_gray_unit_and_symmetric() {
        let bytes = png(40, 30, 128);
        let unit = preprocess(&bytes, &PreprocessSpec::new(224, PixelScale::Unit).unwrap()).unwrap();
        assert!(unit.data.iter().all(|&v| (v - 0.5).abs() < 0.01));
        let sym = preprocess(&bytes, &PreprocessSpec::new(224, PixelScale::Symmetric).unwrap()).unwrap();
        assert!(sym.data.iter().all(|&v| v.abs() < 0.01));
    }

    #[test]
    fn output_shape_and_range() {
        let bytes = png(100, 50, 255);
        let t = preprocess(&bytes, &PreprocessSpec::new(224, PixelScale::Symmetric).unwrap()).unwrap();
        assert_eq!(t.shape(), [224, 224, 3]);
        assert_eq!(t.data.len(), 224 * 224 * 3);
        assert!(t.data.iter().all(|&v| (-1.0..=1.0).contains(&v)));
    }

    #[test]
    fn rejects_garbage_and_bad_sizes() {
        let spec = PreprocessSpec::new(320, PixelScale::Unit).unwrap();
        assert!(matches!(preprocess(b"not an image", &spec), Err(PreprocessError::Decode(_))));
        assert!(matches!(PreprocessSpec::new(256, PixelScale::Unit), Err(PreprocessError::TargetSize(256))));
    }
}
