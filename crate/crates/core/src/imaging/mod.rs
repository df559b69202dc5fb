//! Image I/O at the PNG boundary, tensor conversion, dataset cropping, and
//! a deterministic synthetic texture generator for smoke runs.

pub mod metrics;
pub mod resize;

use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::rng::SeededRng;
use crate::numerics::tensor::Tensor;
use crate::scalar::{from_f64, to_f64, Scalar};

pub use metrics::{compression_ratio, psnr, ssim};
pub use resize::bicubic_resize;

/// 8-bit RGB image, row-major interleaved samples.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument("image extents must be positive".into()));
        }
        if data.len() != 3 * width * height {
            return Err(Error::InvalidArgument(format!(
                "{}x{} RGB image needs {} samples, got {}",
                width,
                height,
                3 * width * height,
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }
}

fn read_error(e: image::ImageError) -> Error {
    match e {
        image::ImageError::IoError(io) => Error::Io(io),
        other => Error::ImageDecode(other.to_string()),
    }
}

/// Reads an 8-bit RGB or RGBA PNG; alpha is dropped with a warning. Other
/// bit depths and color types are rejected.
pub fn png_read(path: &Path) -> Result<ImageBuffer> {
    let img = image::open(path).map_err(read_error)?;
    match img {
        image::DynamicImage::ImageRgb8(rgb) => {
            let (w, h) = (rgb.width() as usize, rgb.height() as usize);
            ImageBuffer::new(w, h, rgb.into_raw())
        }
        image::DynamicImage::ImageRgba8(rgba) => {
            log::warn!("{}: dropping alpha channel", path.display());
            let (w, h) = (rgba.width() as usize, rgba.height() as usize);
            let mut data = Vec::with_capacity(3 * w * h);
            for px in rgba.pixels() {
                data.extend_from_slice(&px.0[..3]);
            }
            ImageBuffer::new(w, h, data)
        }
        image::DynamicImage::ImageLuma16(_)
        | image::DynamicImage::ImageLumaA16(_)
        | image::DynamicImage::ImageRgb16(_)
        | image::DynamicImage::ImageRgba16(_) => Err(Error::UnsupportedImage(format!(
            "{}: unsupported bit depth 16, only 8-bit RGB/RGBA is handled",
            path.display()
        ))),
        other => Err(Error::UnsupportedImage(format!(
            "{}: unsupported color type {:?}, only 8-bit RGB/RGBA is handled",
            path.display(),
            other.color()
        ))),
    }
}

/// Writes an 8-bit RGB PNG.
pub fn png_write(path: &Path, img: &ImageBuffer) -> Result<()> {
    image::save_buffer_with_format(
        path,
        &img.data,
        img.width as u32,
        img.height as u32,
        image::ExtendedColorType::Rgb8,
        image::ImageFormat::Png,
    )
    .map_err(|e| match e {
        image::ImageError::IoError(io) => Error::Io(io),
        other => Error::ImageEncode(other.to_string()),
    })
}

/// (3, H, W) tensor in [0,1], v = sample / 255.
pub fn to_tensor<T: Scalar>(img: &ImageBuffer) -> Tensor<T> {
    let (h, w) = (img.height, img.width);
    Tensor::from_fn(&[3, h, w], |i| {
        let c = i / (h * w);
        let site = i % (h * w);
        from_f64(f64::from(img.data[site * 3 + c]) / 255.0)
    })
}

/// Clamps to [0,1] and rounds to the 255-level grid, the same rule as the
/// LR quantizer, so quantized tensors survive the PNG boundary bitwise.
pub fn from_tensor<T: Scalar>(t: &Tensor<T>) -> Result<ImageBuffer> {
    if t.rank() != 3 || t.dims()[0] != 3 {
        return Err(Error::ShapeMismatch(format!(
            "from_tensor expects (3,H,W), got {:?}",
            t.dims()
        )));
    }
    let (h, w) = (t.dims()[1], t.dims()[2]);
    let mut data = vec![0u8; 3 * h * w];
    for c in 0..3 {
        for site in 0..h * w {
            let v = to_f64(t.data()[c * h * w + site]).clamp(0.0, 1.0);
            data[site * 3 + c] = (v * 255.0).round() as u8;
        }
    }
    ImageBuffer::new(w, h, data)
}

/// Draws `count` seeded random crops from the image list. Each draw picks an
/// image, then a position; every image must be at least crop-sized.
pub fn crop_batch<T: Scalar>(
    images: &[Tensor<T>],
    crop: usize,
    count: usize,
    rng: &mut SeededRng,
) -> Result<Vec<Tensor<T>>> {
    if images.is_empty() || crop == 0 {
        return Err(Error::InvalidArgument("crop_batch needs images and a positive crop".into()));
    }
    for img in images {
        if img.rank() != 3 || img.dims()[1] < crop || img.dims()[2] < crop {
            return Err(Error::InvalidArgument(format!(
                "image {:?} is smaller than the {crop}x{crop} crop",
                img.dims()
            )));
        }
    }
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let img = &images[rng.below(images.len())];
        let (c, h, w) = (img.dims()[0], img.dims()[1], img.dims()[2]);
        let y0 = rng.below(h - crop + 1);
        let x0 = rng.below(w - crop + 1);
        let mut patch = Tensor::zeros(&[c, crop, crop]);
        for ci in 0..c {
            for y in 0..crop {
                let src = ci * h * w + (y0 + y) * w + x0;
                let dst = ci * crop * crop + y * crop;
                patch.data_mut()[dst..dst + crop].copy_from_slice(&img.data()[src..src + crop]);
            }
        }
        out.push(patch);
    }
    Ok(out)
}

/// Deterministic synthetic dataset: per-image smooth low-frequency content
/// plus one fixed high-frequency pattern with the given period, shared by
/// every image in the set. The shared pattern gives the discarded detail
/// channels a consistent nonzero mean, which is what a detail prior can
/// learn; all values stay inside (0,1) so no clamping disturbs it.
pub fn textured_dataset<T: Scalar>(
    count: usize,
    h: usize,
    w: usize,
    period: usize,
    seed: u64,
) -> Vec<Tensor<T>> {
    use std::f64::consts::TAU;
    let rng = SeededRng::new(seed);
    let mut pat_rng = rng.split("pattern");
    let pattern: Vec<f64> = (0..3 * period * period)
        .map(|_| pat_rng.uniform::<f64>(-0.15, 0.15))
        .collect();
    (0..count)
        .map(|i| {
            let mut img_rng = rng.split(&format!("image{i}"));
            let waves: Vec<[f64; 6]> = (0..3)
                .map(|_| {
                    [
                        img_rng.uniform::<f64>(1.0, 3.0),
                        img_rng.uniform::<f64>(0.0, 1.0),
                        img_rng.uniform::<f64>(1.0, 3.0),
                        img_rng.uniform::<f64>(0.0, 1.0),
                        img_rng.uniform::<f64>(1.0, 2.0),
                        img_rng.uniform::<f64>(0.0, 1.0),
                    ]
                })
                .collect();
            Tensor::from_fn(&[3, h, w], |idx| {
                let c = idx / (h * w);
                let y = (idx / w) % h;
                let x = idx % w;
                let [fy, py, fx, px, fd, pd] = waves[c];
                let smooth = 0.5
                    + 0.1 * (TAU * (fy * y as f64 / h as f64 + py)).sin()
                    + 0.1 * (TAU * (fx * x as f64 / w as f64 + px)).sin()
                    + 0.1 * (TAU * (fd * (y + x) as f64 / (h + w) as f64 + pd)).sin();
                let tex = pattern[c * period * period + (y % period) * period + (x % period)];
                from_f64(smooth + tex)
            })
        })
        .collect()
}
