use image::imageops::{self, FilterType};
use image::RgbImage;

use crate::error::{Error, Result};
use crate::exec;
use crate::tensor::Tensor;

/// Resizes to `resolution`² (bilinear) and maps `[0,255]` to `[-1,1]`,
/// channels first. Returns a batch of one.
pub fn preprocess(image: &RgbImage, resolution: usize) -> Result<Tensor> {
    let data = to_chw(image, resolution)?;
    Tensor::from_vec([1, 3, resolution, resolution], data)
}

pub fn preprocess_batch(images: &[RgbImage], resolution: usize) -> Result<Tensor> {
    if images.is_empty() {
        return Err(Error::Invalid("empty image batch".into()));
    }
    let items = exec::map(images, |img| to_chw(img, resolution));
    let mut data = Vec::with_capacity(images.len() * 3 * resolution * resolution);
    for item in items {
        data.extend(item?);
    }
    Tensor::from_vec([images.len(), 3, resolution, resolution], data)
}

fn to_chw(image: &RgbImage, resolution: usize) -> Result<Vec<f32>> {
    if image.width() == 0 || image.height() == 0 {
        return Err(Error::Invalid("cannot preprocess a zero-sized image".into()));
    }
    if resolution == 0 {
        return Err(Error::Invalid("resolution must be positive".into()));
    }
    let r = resolution as u32;
    let resized;
    let img = if image.width() == r && image.height() == r {
        image
    } else {
        resized = imageops::resize(image, r, r, FilterType::Triangle);
        &resized
    };
    let plane = resolution * resolution;
    let mut out = vec![0.0; 3 * plane];
    for (i, px) in img.pixels().enumerate() {
        for c in 0..3 {
            out[c * plane + i] = px[c] as f32 * (2.0 / 255.0) - 1.0;
        }
    }
    Ok(out)
}

/// Inverse of `preprocess` for item `n` of a 3-channel batch: clamps to
/// `[-1,1]` and rounds to the nearest gray level.
pub fn postprocess(t: &Tensor, n: usize) -> RgbImage {
    assert_eq!(t.channels(), 3, "postprocess expects RGB tensors");
    let (h, w) = (t.height(), t.width());
    let plane = h * w;
    let item = t.item(n);
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let i = y as usize * w + x as usize;
        let px = |c: usize| ((item[c * plane + i].clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8;
        image::Rgb([px(0), px(1), px(2)])
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_and_midpoint() {
        for (v, want) in [(0u8, -1.0f32), (255, 1.0), (128, 2.0 * 128.0 / 255.0 - 1.0)] {
            let t = preprocess(&RgbImage::from_pixel(5, 5, image::Rgb([v; 3])), 5).unwrap();
            assert!(t.data().iter().all(|&x| (x - want).abs() < 1e-6), "{v}");
        }
    }

    #[test]
    fn resizes_and_rejects_empty() {
        let t = preprocess(&RgbImage::from_pixel(10, 7, image::Rgb([9; 3])), 4).unwrap();
        assert_eq!(t.shape(), [1, 3, 4, 4]);
        assert!(preprocess(&RgbImage::new(0, 0), 4).is_err());
    }

    #[test]
    fn channels_first_layout() {
        let img = RgbImage::from_pixel(2, 2, image::Rgb([0, 255, 0]));
        let t = preprocess(&img, 2).unwrap();
        assert_eq!(&t.data()[..4], &[-1.0; 4]);
        assert_eq!(&t.data()[4..8], &[1.0; 4]);
    }
}
