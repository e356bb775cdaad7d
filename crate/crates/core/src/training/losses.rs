//! Adversarial, L1, identity and pair losses.
//!
//! Values are reported in f64. Discriminator outputs are logits; the losses
//! pass them through a sigmoid and clamp every log argument at `LOG_FLOOR`.

use crate::error::{Error, Result};
use crate::models::Discriminator;
use crate::tensor::Tensor;

use super::config::LossWeights;

pub const LOG_FLOOR: f64 = 1e-12;

pub fn sigmoid(x: f32) -> f64 {
    1.0 / (1.0 + (-(x as f64)).exp())
}

/// Patch probabilities for a logit map.
pub fn probabilities(logits: &Tensor) -> Vec<f64> {
    logits.data().iter().map(|&x| sigmoid(x)).collect()
}

fn ln(p: f64) -> f64 {
    p.max(LOG_FLOOR).ln()
}

fn mean(v: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = v.len();
    v.sum::<f64>() / n as f64
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdversarialLoss {
    pub loss_d: f64,
    pub loss_g_adv: f64,
}

/// `loss_D = -mean log D(x,y) - mean log(1 - D(x,ŷ))` and the non-saturating
/// `loss_G_adv = -mean log D(x,ŷ)`, given patch probabilities.
pub fn adversarial_loss(real: &[f64], fake: &[f64]) -> Result<AdversarialLoss> {
    if real.len() != fake.len() || real.is_empty() {
        return Err(Error::Shape(format!(
            "patch maps differ or are empty: {} real vs {} fake",
            real.len(),
            fake.len()
        )));
    }
    Ok(AdversarialLoss {
        loss_d: -mean(real.iter().map(|&p| ln(p))) - mean(fake.iter().map(|&q| ln(1.0 - q))),
        loss_g_adv: -mean(fake.iter().map(|&q| ln(q))),
    })
}

/// Runs `d` on the real pair `(x, y)` and the fake pair `(x, ŷ)`.
pub fn discriminate(d: &Discriminator, x: &Tensor, y: &Tensor, y_hat: &Tensor) -> Result<AdversarialLoss> {
    y.check_same_shape(y_hat, "real/fake")?;
    let (real, _) = d.forward(x, y)?;
    let (fake, _) = d.forward(x, y_hat)?;
    adversarial_loss(&probabilities(&real), &probabilities(&fake))
}

/// Mean absolute difference over all elements.
pub fn l1(a: &Tensor, b: &Tensor) -> Result<f64> {
    a.check_same_shape(b, "l1 operands")?;
    Ok(mean(a.data().iter().zip(b.data()).map(|(&p, &q)| (p as f64 - q as f64).abs())))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pix2pixLoss {
    pub loss_g: f64,
    pub loss_d: f64,
    pub loss_g_adv: f64,
    pub loss_l1: f64,
}

/// `loss_G = λ_adv·loss_G_adv + λ_L1·mean|y − G(x)|`.
pub fn pix2pix_loss(
    weights: &LossWeights,
    real: &[f64],
    fake: &[f64],
    generated: &Tensor,
    target: &Tensor,
) -> Result<Pix2pixLoss> {
    let adv = adversarial_loss(real, fake)?;
    let loss_l1 = l1(generated, target)?;
    Ok(Pix2pixLoss {
        loss_g: weights.adv * adv.loss_g_adv + weights.l1 * loss_l1,
        loss_d: adv.loss_d,
        loss_g_adv: adv.loss_g_adv,
        loss_l1,
    })
}

/// One side of a pairwise batch: discriminator probabilities on the real and
/// fake pairs, `G(x_side)` and `G(y)`.
pub struct SideOutputs<'a> {
    pub real: &'a [f64],
    pub fake: &'a [f64],
    pub generated: &'a Tensor,
    pub identity: &'a Tensor,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SideLoss {
    pub loss_d: f64,
    pub loss_g_adv: f64,
    pub loss_l1: f64,
    pub loss_identity: f64,
    /// Side term plus the weighted pair term.
    pub loss_g: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairwiseLoss {
    pub left: SideLoss,
    pub right: SideLoss,
    pub loss_pair: f64,
    pub w_identity: f64,
    pub w_pair: f64,
}

/// Per-side `λ_adv·adv + λ_L1·|y − G(x)| + w_id·|y − G(y)|` plus the shared
/// `w_pair·|G_left(x_left) − G_right(x_right)|`, schedules evaluated at
/// `epoch` of `total_epochs`.
pub fn pairwise_loss(
    weights: &LossWeights,
    epoch: usize,
    total_epochs: usize,
    left: &SideOutputs<'_>,
    right: &SideOutputs<'_>,
    target: &Tensor,
) -> Result<PairwiseLoss> {
    left.generated
        .check_same_shape(right.generated, "left/right outputs of a triple")?;
    let w_identity = weights.identity.value(epoch, total_epochs);
    let w_pair = weights.pair.value(epoch, total_epochs);
    let loss_pair = l1(left.generated, right.generated)?;
    let side = |s: &SideOutputs<'_>| -> Result<SideLoss> {
        let adv = adversarial_loss(s.real, s.fake)?;
        let loss_l1 = l1(s.generated, target)?;
        let loss_identity = l1(target, s.identity)?;
        Ok(SideLoss {
            loss_d: adv.loss_d,
            loss_g_adv: adv.loss_g_adv,
            loss_l1,
            loss_identity,
            loss_g: weights.adv * adv.loss_g_adv
                + weights.l1 * loss_l1
                + w_identity * loss_identity
                + w_pair * loss_pair,
        })
    };
    Ok(PairwiseLoss {
        left: side(left)?,
        right: side(right)?,
        loss_pair,
        w_identity,
        w_pair,
    })
}

/// Gradient of the discriminator loss w.r.t. real and fake logits.
pub(crate) fn d_loss_grad(real_logits: &Tensor, fake_logits: &Tensor) -> (Tensor, Tensor) {
    let n = real_logits.len() as f64;
    let real = real_logits.map(|a| ((sigmoid(a) - 1.0) / n) as f32);
    let fake = fake_logits.map(|b| (sigmoid(b) / n) as f32);
    (real, fake)
}

/// Gradient of `weight · loss_G_adv` w.r.t. the fake logits.
pub(crate) fn g_adv_grad(fake_logits: &Tensor, weight: f64) -> Tensor {
    let n = fake_logits.len() as f64;
    fake_logits.map(|b| (weight * (sigmoid(b) - 1.0) / n) as f32)
}

/// Adds `weight · d/da mean|a − b|` into `grad`.
pub(crate) fn add_l1_grad(grad: &mut [f32], a: &[f32], b: &[f32], weight: f64) {
    let k = (weight / a.len() as f64) as f32;
    for ((g, &p), &q) in grad.iter_mut().zip(a).zip(b) {
        if p > q {
            *g += k;
        } else if p < q {
            *g -= k;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_half_discriminator() {
        let l = adversarial_loss(&[0.5; 4], &[0.5; 4]).unwrap();
        assert!((l.loss_d - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn perfect_discriminator_has_zero_loss() {
        let l = adversarial_loss(&[1.0; 3], &[0.0; 3]).unwrap();
        assert_eq!(l.loss_d, 0.0);
        // Clamped rather than infinite.
        assert!((l.loss_g_adv + LOG_FLOOR.ln()).abs() < 1e-9);
    }

    #[test]
    fn mismatched_maps_are_rejected() {
        assert!(adversarial_loss(&[0.5; 4], &[0.5; 3]).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let logits = Tensor::from_vec([1, 1, 1, 3], vec![0.3, -1.2, 2.0]).unwrap();
        let other = Tensor::from_vec([1, 1, 1, 3], vec![-0.4, 0.1, 1.5]).unwrap();
        let (gr, gf) = d_loss_grad(&logits, &other);
        let gg = g_adv_grad(&other, 1.0);
        let loss = |r: &Tensor, f: &Tensor| adversarial_loss(&probabilities(r), &probabilities(f)).unwrap();
        let eps = 1e-3;
        for i in 0..3 {
            let mut up = logits.clone();
            up.data_mut()[i] += eps;
            let mut dn = logits.clone();
            dn.data_mut()[i] -= eps;
            let fd = (loss(&up, &other).loss_d - loss(&dn, &other).loss_d) / (2.0 * eps as f64);
            assert!((fd - gr.data()[i] as f64).abs() < 1e-4);

            let mut up = other.clone();
            up.data_mut()[i] += eps;
            let mut dn = other.clone();
            dn.data_mut()[i] -= eps;
            let fd = (loss(&logits, &up).loss_d - loss(&logits, &dn).loss_d) / (2.0 * eps as f64);
            assert!((fd - gf.data()[i] as f64).abs() < 1e-4);
            let fd = (loss(&logits, &up).loss_g_adv - loss(&logits, &dn).loss_g_adv) / (2.0 * eps as f64);
            assert!((fd - gg.data()[i] as f64).abs() < 1e-4);
        }
    }
}
