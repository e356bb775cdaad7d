use serde::{Deserialize, Serialize};

use super::client::FaceAnalysisResult;
use crate::dataset::Attribute;

/// One value per attribute; `None` when the group had nothing to measure.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AttributeRates {
    #[serde(rename = "A")]
    pub a: Option<f64>,
    #[serde(rename = "B")]
    pub b: Option<f64>,
}

impl AttributeRates {
    pub fn get(&self, attr: Attribute) -> Option<f64> {
        match attr {
            Attribute::A => self.a,
            Attribute::B => self.b,
        }
    }

    fn set(&mut self, attr: Attribute, v: Option<f64>) {
        match attr {
            Attribute::A => self.a = v,
            Attribute::B => self.b = v,
        }
    }
}

/// Integer counts behind the rates of one ground-truth group.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupCounts {
    pub evaluated: usize,
    pub detected: usize,
    pub matched: usize,
}

impl GroupCounts {
    pub fn add(&mut self, truth: Attribute, r: &FaceAnalysisResult, weight: usize) {
        self.evaluated += weight;
        if r.face_detected {
            self.detected += weight;
            if r.attribute == Some(truth) {
                self.matched += weight;
            }
        }
    }

    pub fn recovery(&self) -> Option<f64> {
        (self.evaluated > 0).then(|| self.detected as f64 / self.evaluated as f64)
    }

    pub fn matching(&self) -> Option<f64> {
        (self.detected > 0).then(|| self.matched as f64 / self.detected as f64)
    }
}

fn counts(results: &[(Attribute, FaceAnalysisResult)]) -> [GroupCounts; 2] {
    let mut c = [GroupCounts::default(); 2];
    for (truth, r) in results {
        c[*truth as usize].add(*truth, r, 1);
    }
    c
}

/// Fraction of outputs with a detected face, per ground-truth attribute.
pub fn recovery_rate(results: &[(Attribute, FaceAnalysisResult)]) -> AttributeRates {
    let c = counts(results);
    let mut out = AttributeRates::default();
    for attr in Attribute::ALL {
        out.set(attr, c[attr as usize].recovery());
    }
    out
}

/// Fraction of detected faces classified as the source attribute. Undetected
/// outputs are left out of the denominator.
pub fn match_rate(results: &[(Attribute, FaceAnalysisResult)]) -> AttributeRates {
    let c = counts(results);
    let mut out = AttributeRates::default();
    for attr in Attribute::ALL {
        out.set(attr, c[attr as usize].matching());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn face(a: Attribute) -> FaceAnalysisResult {
        FaceAnalysisResult { face_detected: true, attribute: Some(a), confidence: 1.0 }
    }

    #[test]
    fn denominators() {
        let mut r: Vec<_> = (0..7).map(|_| (Attribute::B, face(Attribute::B))).collect();
        r.extend((0..3).map(|_| (Attribute::B, FaceAnalysisResult::no_face())));
        assert_eq!(recovery_rate(&r).b, Some(0.7));
        assert_eq!(recovery_rate(&r).a, None);

        let mut r: Vec<_> = (0..3).map(|_| (Attribute::A, face(Attribute::A))).collect();
        r.push((Attribute::A, face(Attribute::B)));
        r.push((Attribute::A, FaceAnalysisResult::no_face()));
        assert_eq!(match_rate(&r).a, Some(0.75));
        assert_eq!(recovery_rate(&r).a, Some(0.8));
    }

    #[test]
    fn nothing_detected_is_absent() {
        let r = vec![(Attribute::A, FaceAnalysisResult::no_face())];
        assert_eq!(match_rate(&r).a, None);
        assert_eq!(recovery_rate(&r).a, Some(0.0));
    }
}
