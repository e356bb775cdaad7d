//! Procedural avatars standing in for a real face corpus.
//!
//! Attribute A: short hair cap, cool background. Attribute B: the same cap
//! plus long hair falling past the cheeks, warm background. Side poses shear
//! the figure horizontally and drop the far eye.

use std::fs;
use std::path::{Path, PathBuf};

use image::RgbImage;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{Attribute, Pose};
use crate::error::{Error, IoContext, Result};
use crate::exec;
use crate::mix_seed;

pub const SHEAR: f32 = 0.35;
const BG_A: [f32; 3] = [70.0, 105.0, 165.0];
const BG_B: [f32; 3] = [175.0, 115.0, 70.0];
const BG_JITTER: i32 = 18;
const SKIN_LIGHT: [f32; 3] = [232.0, 196.0, 168.0];
const SKIN_DARK: [f32; 3] = [140.0, 98.0, 72.0];
const HAIR_DARK: [f32; 3] = [25.0, 20.0, 18.0];
const HAIR_LIGHT: [f32; 3] = [75.0, 55.0, 40.0];
const EYE: [f32; 3] = [35.0, 28.0, 28.0];
const MOUTH: [f32; 3] = [120.0, 35.0, 45.0];
const EYE_U: [f32; 2] = [0.40, 0.60];

#[derive(Clone, Debug, PartialEq)]
pub struct SynthOptions {
    pub n_subjects: usize,
    pub resolution: usize,
    pub seed: u64,
    /// Fraction of subjects with attribute A.
    pub attribute_ratio: f64,
}

/// Per-subject appearance; backgrounds are drawn per image.
#[derive(Clone, Debug)]
pub struct Avatar {
    pub attribute: Attribute,
    pub skin: [f32; 3],
    pub hair: [f32; 3],
    pub head_scale: (f32, f32),
}

fn lerp(a: [f32; 3], b: [f32; 3], t: f32) -> [f32; 3] {
    [a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t, a[2] + (b[2] - a[2]) * t]
}

fn in_ellipse(u: f32, v: f32, cu: f32, cv: f32, ru: f32, rv: f32) -> bool {
    let (du, dv) = ((u - cu) / ru, (v - cv) / rv);
    du * du + dv * dv <= 1.0
}

impl Avatar {
    pub fn sample(attribute: Attribute, rng: &mut impl Rng) -> Self {
        Self {
            attribute,
            skin: lerp(SKIN_LIGHT, SKIN_DARK, rng.random()),
            hair: lerp(HAIR_DARK, HAIR_LIGHT, rng.random()),
            head_scale: (rng.random_range(0.95..1.05), rng.random_range(0.95..1.05)),
        }
    }

    /// Background tint for this attribute, jittered per image.
    pub fn background(&self, rng: &mut impl Rng) -> [f32; 3] {
        let base = match self.attribute {
            Attribute::A => BG_A,
            Attribute::B => BG_B,
        };
        base.map(|c| c + rng.random_range(-BG_JITTER..=BG_JITTER) as f32)
    }

    fn shade(&self, pose: Pose, u: f32, v: f32, bg: [f32; 3]) -> [f32; 3] {
        let (s, hidden) = match pose {
            Pose::Front => (0.0, None),
            Pose::Left => (-SHEAR, Some(EYE_U[1])),
            Pose::Right => (SHEAR, Some(EYE_U[0])),
        };
        let u = u - s * (v - 0.5);
        let mut c = bg;
        if self.attribute == Attribute::B
            && (in_ellipse(u, v, 0.5, 0.46, 0.36, 0.34) || ((u - 0.5).abs() < 0.36 && (0.46..=0.92).contains(&v)))
        {
            c = self.hair;
        }
        if in_ellipse(u, v, 0.5, 0.52, 0.25 * self.head_scale.0, 0.33 * self.head_scale.1) {
            c = self.skin;
        }
        if v < 0.30 && in_ellipse(u, v, 0.5, 0.50, 0.27, 0.36) {
            c = self.hair;
        }
        for eu in EYE_U {
            if Some(eu) != hidden && in_ellipse(u, v, eu, 0.50, 0.045, 0.028) {
                c = EYE;
            }
        }
        if in_ellipse(u, v, 0.5, 0.70, 0.08, 0.022) {
            c = MOUTH;
        }
        c
    }

    /// Renders with 2×2 supersampling.
    pub fn render(&self, pose: Pose, background: [f32; 3], resolution: usize) -> RgbImage {
        let r = resolution as f32;
        RgbImage::from_fn(resolution as u32, resolution as u32, |x, y| {
            let mut acc = [0.0f32; 3];
            for sy in 0..2 {
                for sx in 0..2 {
                    let u = (x as f32 + 0.25 + 0.5 * sx as f32) / r;
                    let v = (y as f32 + 0.25 + 0.5 * sy as f32) / r;
                    let c = self.shade(pose, u, v, background);
                    for k in 0..3 {
                        acc[k] += c[k];
                    }
                }
            }
            image::Rgb(acc.map(|a| (a / 4.0).round().clamp(0.0, 255.0) as u8))
        })
    }
}

#[derive(Serialize)]
struct Row<'a> {
    id: &'a str,
    subject_id: &'a str,
    attribute: Attribute,
    pose: Pose,
    session: &'a str,
    image_path: String,
}

const POSES: [Pose; 3] = [Pose::Left, Pose::Right, Pose::Front];

/// Writes `<dir>/images/<id>.png` for three poses per subject plus
/// `<dir>/manifest.csv`. Returns `(image directory, manifest path)`.
pub fn make_synthetic_corpus(opts: &SynthOptions, dir: &Path) -> Result<(PathBuf, PathBuf)> {
    if opts.n_subjects < 2 {
        return Err(Error::Invalid("synthetic corpus needs at least 2 subjects".into()));
    }
    if !(opts.attribute_ratio > 0.0 && opts.attribute_ratio < 1.0) {
        return Err(Error::Invalid(format!(
            "attribute_ratio must lie in (0,1), got {}",
            opts.attribute_ratio
        )));
    }
    if opts.resolution < 8 {
        return Err(Error::Invalid("synthetic resolution must be at least 8".into()));
    }
    let images = dir.join("images");
    fs::create_dir_all(&images).at(&images)?;

    let n = opts.n_subjects;
    let n_a = ((n as f64 * opts.attribute_ratio).round() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(opts.seed, 0xA771)));
    let mut attrs = vec![Attribute::B; n];
    for &i in &order[..n_a] {
        attrs[i] = Attribute::A;
    }

    let written = exec::map_range(n, |i| -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(opts.seed, i as u64 + 1));
        let avatar = Avatar::sample(attrs[i], &mut rng);
        for pose in POSES {
            let bg = avatar.background(&mut rng);
            let img = avatar.render(pose, bg, opts.resolution);
            let path = images.join(format!("{}.png", record_id(i, pose)));
            img.save(&path).map_err(|e| Error::Image {
                path: path.clone(),
                message: e.to_string(),
            })?;
        }
        Ok(())
    });
    written.into_iter().collect::<Result<()>>()?;

    let manifest = dir.join("manifest.csv");
    let mut w = csv::Writer::from_path(&manifest)?;
    for (i, &attribute) in attrs.iter().enumerate() {
        let subject = format!("s{i:04}");
        for pose in POSES {
            let id = record_id(i, pose);
            w.serialize(Row {
                id: &id,
                subject_id: &subject,
                attribute,
                pose,
                session: "1",
                image_path: format!("images/{id}.png"),
            })?;
        }
    }
    w.flush().at(&manifest)?;
    Ok((images, manifest))
}

fn record_id(subject: usize, pose: Pose) -> String {
    format!("s{subject:04}_{pose}")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn avatar(attribute: Attribute) -> Avatar {
        Avatar {
            attribute,
            skin: SKIN_LIGHT,
            hair: HAIR_DARK,
            head_scale: (1.0, 1.0),
        }
    }

    #[test]
    fn long_hair_only_for_b() {
        let a = avatar(Attribute::A).render(Pose::Front, BG_A, 64);
        let b = avatar(Attribute::B).render(Pose::Front, BG_B, 64);
        // Lower cheek strip, outside the head ellipse.
        let (x, y) = ((0.18 * 64.0) as u32, (0.75 * 64.0) as u32);
        assert_eq!(a.get_pixel(x, y).0, [70, 105, 165]);
        assert_eq!(b.get_pixel(x, y).0, [25, 20, 18]);
    }

    #[test]
    fn side_pose_hides_far_eye() {
        let av = avatar(Attribute::A);
        let dark = |img: &RgbImage| img.pixels().filter(|p| p.0 == [35, 28, 28]).count();
        let front = dark(&av.render(Pose::Front, BG_A, 64));
        let left = dark(&av.render(Pose::Left, BG_A, 64));
        assert!(front > 0);
        assert!(left * 3 < front * 2, "front {front} left {left}");
    }
}
