//! Entropy-based evaluation of class distributions: inter-entropy `H(y)`,
//! mean intra-entropy `H(y|v)` and the inception score. Natural log
//! throughout; `0 ln 0 = 0`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synth::VideoClip;

/// Tolerance on the probability sum.
const SUM_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassDistribution {
    probs: Vec<f64>,
}

impl ClassDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::invalid("empty class distribution"));
        }
        if probs.iter().any(|p| *p < 0.0 || !p.is_finite()) {
            return Err(Error::invalid(format!(
                "negative or non-finite probability in {probs:?}"
            )));
        }
        let s: f64 = probs.iter().sum();
        if (s - 1.0).abs() > SUM_TOL {
            return Err(Error::invalid(format!("probabilities sum to {s}")));
        }
        Ok(ClassDistribution { probs })
    }

    /// Softmax of raw scores.
    pub fn from_logits(logits: &[f64]) -> Result<Self> {
        if logits.is_empty() {
            return Err(Error::invalid("empty logits"));
        }
        let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logits.iter().map(|v| (v - mx).exp()).collect();
        let s: f64 = e.iter().sum();
        let mut probs: Vec<f64> = e.iter().map(|v| v / s).collect();
        // Renormalise once more so the sum check holds to rounding.
        let s2: f64 = probs.iter().sum();
        probs.iter_mut().for_each(|p| *p /= s2);
        Self::new(probs)
    }

    pub fn one_hot(k: usize, classes: usize) -> Result<Self> {
        if k >= classes {
            return Err(Error::OutOfRange {
                op: "one_hot",
                index: k,
                limit: classes,
            });
        }
        let mut p = vec![0.0; classes];
        p[k] = 1.0;
        Self::new(p)
    }

    pub fn uniform(classes: usize) -> Result<Self> {
        if classes == 0 {
            return Err(Error::invalid("zero classes"));
        }
        Self::new(vec![1.0 / classes as f64; classes])
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn classes(&self) -> usize {
        self.probs.len()
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }

    pub fn entropy(&self) -> f64 {
        entropy(&self.probs)
    }
}

fn entropy(p: &[f64]) -> f64 {
    0.0 - p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum::<f64>()
}

fn check(dists: &[ClassDistribution]) -> Result<usize> {
    let first = dists.first().ok_or_else(|| Error::invalid("no distributions"))?;
    let k = first.classes();
    if let Some(d) = dists.iter().find(|d| d.classes() != k) {
        return Err(Error::invalid(format!("class count mismatch: {k} vs {}", d.classes())));
    }
    Ok(k)
}

fn marginal(dists: &[ClassDistribution], k: usize) -> Vec<f64> {
    let mut m = vec![0.0; k];
    for d in dists {
        for (a, p) in m.iter_mut().zip(&d.probs) {
            *a += p;
        }
    }
    let n = dists.len() as f64;
    m.iter_mut().for_each(|a| *a /= n);
    m
}

/// Entropy of the mean distribution.
pub fn inter_entropy(dists: &[ClassDistribution]) -> Result<f64> {
    let k = check(dists)?;
    Ok(entropy(&marginal(dists, k)))
}

/// Mean of per-sample entropies.
pub fn mean_intra_entropy(dists: &[ClassDistribution]) -> Result<f64> {
    check(dists)?;
    Ok(dists.iter().map(|d| d.entropy()).sum::<f64>() / dists.len() as f64)
}

/// `exp(H(y) - mean H(y|v))`.
pub fn inception_score(dists: &[ClassDistribution]) -> Result<f64> {
    Ok((inter_entropy(dists)? - mean_intra_entropy(dists)?).exp())
}

/// Same quantity as `exp(mean KL(p(y|v) || p(y)))`.
pub fn inception_score_kl(dists: &[ClassDistribution]) -> Result<f64> {
    let k = check(dists)?;
    let m = marginal(dists, k);
    let kl: f64 = dists
        .iter()
        .map(|d| {
            d.probs
                .iter()
                .zip(&m)
                .filter(|(&p, _)| p > 0.0)
                .map(|(&p, &q)| p * (p / q).ln())
                .sum::<f64>()
        })
        .sum::<f64>()
        / dists.len() as f64;
    Ok(kl.exp())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(rename = "K")]
    pub classes: usize,
    #[serde(rename = "N")]
    pub count: usize,
    pub inter_entropy: f64,
    pub mean_intra_entropy: f64,
    pub inception_score: f64,
}

impl MetricsReport {
    pub fn from_distributions(dists: &[ClassDistribution]) -> Result<Self> {
        let h = inter_entropy(dists)?;
        let hc = mean_intra_entropy(dists)?;
        Ok(MetricsReport {
            classes: dists[0].classes(),
            count: dists.len(),
            inter_entropy: h,
            mean_intra_entropy: hc,
            inception_score: (h - hc).exp(),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Anything that maps a clip to a class distribution.
pub trait ClipClassifier {
    fn classes(&self) -> usize;
    fn classify(&self, clip: &VideoClip) -> Result<ClassDistribution>;
}

/// Classify every clip and summarise.
pub fn evaluate_with_classifier<C: ClipClassifier + ?Sized>(
    clips: &[VideoClip],
    classifier: &C,
) -> Result<MetricsReport> {
    let dists = clips
        .iter()
        .map(|c| classifier.classify(c))
        .collect::<Result<Vec<_>>>()?;
    if let Some(d) = dists.iter().find(|d| d.classes() != classifier.classes()) {
        return Err(Error::invalid(format!(
            "classifier declared {} classes but returned {}",
            classifier.classes(),
            d.classes()
        )));
    }
    MetricsReport::from_distributions(&dists)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{gen_clip, ActionLabel, ClipSpec};

    fn balanced(k: usize) -> Vec<ClassDistribution> {
        (0..k).map(|i| ClassDistribution::one_hot(i, k).unwrap()).collect()
    }

    #[test]
    fn bounds() {
        let d = balanced(90);
        assert!((inter_entropy(&d).unwrap() - 90f64.ln()).abs() < 1e-12);
        assert_eq!(mean_intra_entropy(&d).unwrap(), 0.0);
        assert!((inception_score(&d).unwrap() - 90.0).abs() < 1e-9);
        assert!((inception_score(&balanced(20)).unwrap() - 20.0).abs() < 1e-9);
        let u = vec![ClassDistribution::uniform(6).unwrap(); 5];
        assert!((mean_intra_entropy(&u).unwrap() - 6f64.ln()).abs() < 1e-12);
        assert!((inception_score(&u).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn small_cases() {
        let same = vec![ClassDistribution::one_hot(1, 3).unwrap(); 4];
        assert_eq!(inter_entropy(&same).unwrap(), 0.0);
        let two = balanced(2);
        assert!((inter_entropy(&two).unwrap() - 2f64.ln()).abs() < 1e-12);
        let mixed = vec![
            ClassDistribution::one_hot(0, 2).unwrap(),
            ClassDistribution::uniform(2).unwrap(),
        ];
        assert!((mean_intra_entropy(&mixed).unwrap() - 2f64.ln() / 2.0).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        assert!(inter_entropy(&[]).is_err());
        let bad = vec![
            ClassDistribution::uniform(2).unwrap(),
            ClassDistribution::uniform(3).unwrap(),
        ];
        assert!(inception_score(&bad).is_err());
        assert!(ClassDistribution::new(vec![0.5, 0.6]).is_err());
        assert!(ClassDistribution::new(vec![-0.1, 1.1]).is_err());
    }

    #[test]
    fn kl_form_agrees() {
        let d = vec![
            ClassDistribution::new(vec![0.7, 0.2, 0.1]).unwrap(),
            ClassDistribution::new(vec![0.1, 0.1, 0.8]).unwrap(),
            ClassDistribution::new(vec![0.3, 0.4, 0.3]).unwrap(),
        ];
        assert!((inception_score(&d).unwrap() - inception_score_kl(&d).unwrap()).abs() < 1e-9);
    }

    struct Oracle;
    impl ClipClassifier for Oracle {
        fn classes(&self) -> usize {
            4
        }
        fn classify(&self, clip: &VideoClip) -> Result<ClassDistribution> {
            ClassDistribution::one_hot(clip.action, 4)
        }
    }

    struct Flat;
    impl ClipClassifier for Flat {
        fn classes(&self) -> usize {
            4
        }
        fn classify(&self, _: &VideoClip) -> Result<ClassDistribution> {
            ClassDistribution::uniform(4)
        }
    }

    #[test]
    fn classifier_reports() {
        let spec = ClipSpec {
            frames: 2,
            size: 16,
            channels: 1,
        };
        let clips: Vec<_> = (0..8)
            .map(|i| gen_clip(ActionLabel::new(i % 4, 4).unwrap(), i as u64, &spec).unwrap())
            .collect();
        let r = evaluate_with_classifier(&clips, &Oracle).unwrap();
        assert!((r.inception_score - 4.0).abs() < 0.05);
        assert_eq!((r.classes, r.count), (4, 8));
        let f = evaluate_with_classifier(&clips, &Flat).unwrap();
        assert_eq!(f.inception_score, 1.0);
        assert!((r.inception_score - (r.inter_entropy - r.mean_intra_entropy).exp()).abs() < 1e-12);
        let json: serde_json::Value = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        for key in ["K", "N", "inter_entropy", "mean_intra_entropy", "inception_score"] {
            assert!(json.get(key).is_some(), "{key}");
        }
    }
}
