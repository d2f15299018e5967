//! 8-bit PNG I/O and atomic file output.
//!
//! Pixel values map linearly between `[0, 255]` and `[0, 1]`; no gamma or
//! color management is applied.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ccdc_tensor::Tensor;
use image::{DynamicImage, ImageBuffer, Luma, Rgb};

use crate::error::{Error, Result};
use crate::imageops::{luminance, ColorImage, GrayImage};

fn image_error(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Image { path: path.to_path_buf(), message: e.to_string() }
}

fn open(path: &Path) -> Result<DynamicImage> {
    if !path.exists() {
        return Err(Error::io(path, std::io::Error::new(std::io::ErrorKind::NotFound, "file not found")));
    }
    image::open(path).map_err(|e| image_error(path, e))
}

pub fn read_color_png(path: &Path) -> Result<ColorImage> {
    let rgb = open(path)?.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let mut data = vec![0.0f32; 3 * h * w];
    for (x, y, p) in rgb.enumerate_pixels() {
        for c in 0..3 {
            data[(c * h + y as usize) * w + x as usize] = p.0[c] as f32 / 255.0;
        }
    }
    ColorImage::new(Tensor::new(vec![3, h, w], data)?).map_err(|e| image_error(path, e))
}

/// Reads a grayscale PNG; color files are converted with the BT.601 luma.
pub fn read_gray_png(path: &Path) -> Result<GrayImage> {
    let img = open(path)?;
    if img.color().has_color() {
        return Ok(luminance(&read_color_png(path)?));
    }
    let gray = img.to_luma8();
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    let data = gray.pixels().map(|p| p.0[0] as f32 / 255.0).collect();
    GrayImage::new(Tensor::new(vec![1, h, w], data)?).map_err(|e| image_error(path, e))
}

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn color_to_png_bytes(img: &ColorImage) -> Result<Vec<u8>> {
    let (h, w) = img.size();
    let buf = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let p = img.pixel(y as usize, x as usize);
        Rgb([quantize(p[0]), quantize(p[1]), quantize(p[2])])
    });
    encode(DynamicImage::ImageRgb8(buf))
}

pub fn gray_to_png_bytes(img: &GrayImage) -> Result<Vec<u8>> {
    let (h, w) = img.size();
    let buf = ImageBuffer::from_fn(w as u32, h as u32, |x, y| Luma([quantize(img.get(y as usize, x as usize))]));
    encode(DynamicImage::ImageLuma8(buf))
}

/// Encodes an interleaved 8-bit RGB buffer.
pub fn rgb8_to_png_bytes(width: usize, height: usize, rgb: Vec<u8>) -> Result<Vec<u8>> {
    let buf = ImageBuffer::<Rgb<u8>, _>::from_raw(width as u32, height as u32, rgb)
        .ok_or_else(|| Error::Shape("RGB buffer does not match its size".into()))?;
    encode(DynamicImage::ImageRgb8(buf))
}

fn encode(img: DynamicImage) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    img.write_to(&mut std::io::Cursor::new(&mut bytes), image::ImageFormat::Png)
        .map_err(|e| Error::Image { path: PathBuf::from("<memory>"), message: e.to_string() })?;
    Ok(bytes)
}

pub fn write_color_png(path: &Path, img: &ColorImage) -> Result<()> {
    write_atomic(path, &color_to_png_bytes(img)?)
}

pub fn write_gray_png(path: &Path, img: &GrayImage) -> Result<()> {
    write_atomic(path, &gray_to_png_bytes(img)?)
}

fn staging_path(path: &Path) -> PathBuf {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!(".{name}.tmp{}", std::process::id()))
}

/// Writes `bytes` to a sibling temporary file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let tmp = staging_path(path);
    let mut file = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    file.write_all(bytes).and_then(|_| file.sync_all()).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Populates a fresh directory through `fill`, then swaps it into place,
/// replacing any previous directory at `path`.
pub fn write_dir_atomic(path: &Path, fill: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    let tmp = staging_path(path);
    if tmp.exists() {
        fs::remove_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
    }
    fs::create_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
    if let Err(e) = fill(&tmp) {
        let _ = fs::remove_dir_all(&tmp);
        return Err(e);
    }
    if path.exists() {
        fs::remove_dir_all(path).map_err(|e| Error::io(path, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
