use std::path::Path;

use image::{DynamicImage, ImageFormat};

use crate::error::{Error, Result};

#[derive(Debug)]
pub enum Validation {
    Ok {
        image: DynamicImage,
        format: ImageFormat,
    },
    RejectedCorrupt(String),
    RejectedTypeMismatch {
        sniffed: ImageFormat,
        extension: String,
    },
}

impl Validation {
    pub fn is_ok(&self) -> bool {
        matches!(self, Validation::Ok { .. })
    }
}

const SUPPORTED: [ImageFormat; 5] = [
    ImageFormat::Jpeg,
    ImageFormat::Png,
    ImageFormat::Gif,
    ImageFormat::Bmp,
    ImageFormat::WebP,
];

pub fn format_for_extension(ext: &str) -> Option<ImageFormat> {
    match ext.to_ascii_lowercase().as_str() {
        "jpg" | "jpeg" | "jpe" => Some(ImageFormat::Jpeg),
        "png" => Some(ImageFormat::Png),
        "gif" => Some(ImageFormat::Gif),
        "bmp" => Some(ImageFormat::Bmp),
        "webp" => Some(ImageFormat::WebP),
        _ => None,
    }
}

/// Sniff the format from magic bytes, require it to agree with the file
/// name's extension, then require a full decode.
pub fn validate_bytes(bytes: &[u8], file_name: &str) -> Validation {
    let sniffed = match image::guess_format(bytes) {
        Ok(f) => f,
        Err(e) => return Validation::RejectedCorrupt(format!("unrecognized image data: {e}")),
    };
    if !SUPPORTED.contains(&sniffed) {
        return Validation::RejectedCorrupt(format!("unsupported format {sniffed:?}"));
    }
    let extension = Path::new(file_name)
        .extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_string();
    if format_for_extension(&extension) != Some(sniffed) {
        return Validation::RejectedTypeMismatch { sniffed, extension };
    }
    match image::load_from_memory_with_format(bytes, sniffed) {
        Ok(image) if image.width() > 0 && image.height() > 0 => Validation::Ok { image, format: sniffed },
        Ok(_) => Validation::RejectedCorrupt("zero-sized image".into()),
        Err(e) => Validation::RejectedCorrupt(e.to_string()),
    }
}

/// Read then validate. I/O failures are errors, not rejections.
pub fn validate_file(path: &Path) -> Result<Validation> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
    Ok(validate_bytes(&bytes, name))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn encoded(format: ImageFormat) -> Vec<u8> {
        let img = image::RgbImage::from_fn(48, 32, |x, y| image::Rgb([x as u8 * 5, y as u8 * 7, 90]));
        let mut out = Cursor::new(Vec::new());
        DynamicImage::ImageRgb8(img).write_to(&mut out, format).unwrap();
        out.into_inner()
    }

    #[test]
    fn matching_jpeg_is_ok() {
        assert!(validate_bytes(&encoded(ImageFormat::Jpeg), "a.jpg").is_ok());
        assert!(validate_bytes(&encoded(ImageFormat::Jpeg), "a.JPEG").is_ok());
        assert!(validate_bytes(&encoded(ImageFormat::Png), "a.png").is_ok());
    }

    #[test]
    fn png_named_jpg_is_mismatch() {
        match validate_bytes(&encoded(ImageFormat::Png), "b.jpg") {
            Validation::RejectedTypeMismatch { sniffed, extension } => {
                assert_eq!(sniffed, ImageFormat::Png);
                assert_eq!(extension, "jpg");
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            validate_bytes(&encoded(ImageFormat::Png), "noext"),
            Validation::RejectedTypeMismatch { .. }
        ));
    }

    #[test]
    fn truncated_jpeg_is_corrupt() {
        let bytes = encoded(ImageFormat::Jpeg);
        assert!(matches!(validate_bytes(&bytes[..100], "t.jpg"), Validation::RejectedCorrupt(_)));
    }

    #[test]
    fn garbage_is_corrupt() {
        assert!(matches!(validate_bytes(b"<html>not an image</html>", "x.jpg"), Validation::RejectedCorrupt(_)));
        assert!(matches!(validate_bytes(&[], "x.jpg"), Validation::RejectedCorrupt(_)));
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(validate_file(Path::new("/nonexistent/zzz.jpg")), Err(Error::Io { .. })));
    }
}
