//! Offline classifier tuned to the synthetic avatar cues.
//!
//! Face gate: dark eyes and mouth against skin, and skin distinct from the
//! background. Attribute: hair below the cheeks (long hair) and a warm
//! background vote for B; bare strips and a cool background vote for A.

use std::sync::atomic::{AtomicUsize, Ordering};

use image::RgbImage;

use super::client::{ClientKind, FaceAnalysisClient, FaceAnalysisResult};
use crate::dataset::Attribute;
use crate::error::Result;

const EYE_CONTRAST: f64 = 10.0;
const MOUTH_CONTRAST: f64 = 8.0;
const SKIN_VS_BACKGROUND: f64 = 6.0;
const HAIR_DISTANCE: f64 = 60.0;

#[derive(Debug, Default)]
pub struct StubClassifier {
    calls: AtomicUsize,
}

impl StubClassifier {
    pub fn new() -> Self {
        Self::default()
    }
}

/// Diagnostics behind a stub decision.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StubCues {
    pub eye_contrast: f64,
    pub mouth_contrast: f64,
    pub skin_background_distance: f64,
    pub warmth: f64,
    pub hair_fraction: f64,
    pub score: f64,
}

fn luminance(p: [f64; 3]) -> f64 {
    0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]
}

fn distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Pixel coordinates whose centres fall in `[u0,u1]×[v0,v1]`; falls back to
/// the pixel nearest the box centre when the box is thinner than a pixel.
fn window(img: &RgbImage, u0: f64, u1: f64, v0: f64, v1: f64) -> Vec<(u32, u32)> {
    let (w, h) = (img.width() as f64, img.height() as f64);
    let mut px = Vec::new();
    for y in 0..img.height() {
        let v = (y as f64 + 0.5) / h;
        if v < v0 || v > v1 {
            continue;
        }
        for x in 0..img.width() {
            let u = (x as f64 + 0.5) / w;
            if u >= u0 && u <= u1 {
                px.push((x, y));
            }
        }
    }
    if px.is_empty() {
        let x = (((u0 + u1) / 2.0) * w).floor().clamp(0.0, w - 1.0) as u32;
        let y = (((v0 + v1) / 2.0) * h).floor().clamp(0.0, h - 1.0) as u32;
        px.push((x, y));
    }
    px
}

fn mean_color(img: &RgbImage, px: &[(u32, u32)]) -> [f64; 3] {
    let mut s = [0.0; 3];
    for &(x, y) in px {
        let p = img.get_pixel(x, y);
        for c in 0..3 {
            s[c] += p[c] as f64;
        }
    }
    s.map(|v| v / px.len() as f64)
}

fn box_around(img: &RgbImage, u: f64, v: f64, ru: f64, rv: f64) -> [f64; 3] {
    mean_color(img, &window(img, u - ru, u + ru, v - rv, v + rv))
}

pub fn stub_cues(img: &RgbImage) -> StubCues {
    let bg_px: Vec<(u32, u32)> = window(img, 0.0, 0.12, 0.0, 0.12)
        .into_iter()
        .chain(window(img, 0.88, 1.0, 0.0, 0.12))
        .collect();
    let bg = mean_color(img, &bg_px);
    let skin_samples = [
        box_around(img, 0.37, 0.60, 0.03, 0.03),
        box_around(img, 0.63, 0.60, 0.03, 0.03),
        box_around(img, 0.50, 0.38, 0.04, 0.03),
    ];
    let skin = [0, 1, 2].map(|c| skin_samples.iter().map(|s| s[c]).sum::<f64>() / 3.0);
    let skin_l = luminance(skin);
    let eye_l = luminance(box_around(img, 0.40, 0.50, 0.03, 0.02)).min(luminance(box_around(img, 0.60, 0.50, 0.03, 0.02)));
    let mouth_l = luminance(box_around(img, 0.50, 0.70, 0.05, 0.015));

    let strips: Vec<(u32, u32)> = window(img, 0.15, 0.22, 0.60, 0.88)
        .into_iter()
        .chain(window(img, 0.78, 0.85, 0.60, 0.88))
        .collect();
    let hair = strips
        .iter()
        .filter(|&&(x, y)| {
            let p = img.get_pixel(x, y);
            distance([p[0] as f64, p[1] as f64, p[2] as f64], bg) > HAIR_DISTANCE
        })
        .count() as f64
        / strips.len() as f64;
    let warmth = (bg[0] - bg[2]) / 255.0;
    StubCues {
        eye_contrast: skin_l - eye_l,
        mouth_contrast: skin_l - mouth_l,
        skin_background_distance: distance(skin, bg),
        warmth,
        hair_fraction: hair,
        score: 1.5 * warmth + 2.0 * (hair - 0.5),
    }
}

pub fn stub_classify(img: &RgbImage) -> FaceAnalysisResult {
    let c = stub_cues(img);
    if c.eye_contrast <= EYE_CONTRAST
        || c.mouth_contrast <= MOUTH_CONTRAST
        || c.skin_background_distance <= SKIN_VS_BACKGROUND
    {
        return FaceAnalysisResult::no_face();
    }
    FaceAnalysisResult {
        face_detected: true,
        attribute: Some(if c.score > 0.0 { Attribute::B } else { Attribute::A }),
        confidence: 0.5 + 0.5 * (2.0 * c.score.abs()).tanh(),
    }
}

impl FaceAnalysisClient for StubClassifier {
    fn kind(&self) -> ClientKind {
        ClientKind::Stub
    }

    fn analyze(&self, image: &RgbImage) -> Result<FaceAnalysisResult> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        Ok(stub_classify(image))
    }

    fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }
}
