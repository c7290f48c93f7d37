//! Feature binarization and BPSK mapping.
//!
//! The encoder emits real features in `(-1, 1)`. The quantizer maps them to
//! `{-1, +1}` by sign (zero maps to `+1`); on the backward pass the sign is
//! replaced by a hard-tanh straight-through estimator that passes the
//! upstream gradient wherever `|a| <= 1`.

use crate::error::{ensure_finite, Error, Result};

/// Bound of the straight-through pass-through region.
pub const STE_CLIP: f64 = 1.0;

/// Real-valued encoder output for one user.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidInput("feature vector is empty".into()));
        }
        ensure_finite(&values, "feature vector")?;
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// A code over `{-1, +1}`, stored as `f64` so it can be fed to the channel.
#[derive(Debug, Clone, PartialEq)]
pub struct BipolarCode(Vec<f64>);

impl BipolarCode {
    pub fn new(symbols: Vec<f64>) -> Result<Self> {
        if symbols.is_empty() {
            return Err(Error::InvalidInput("code is empty".into()));
        }
        if let Some(i) = symbols.iter().position(|&s| s != 1.0 && s != -1.0) {
            return Err(Error::InvalidInput(format!(
                "code entry {i} is {} (expected +1 or -1)",
                symbols[i]
            )));
        }
        Ok(Self(symbols))
    }

    pub fn symbols(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Mean symbol energy, always 1 for a bipolar code.
    pub fn mean_energy(&self) -> f64 {
        self.0.iter().map(|s| s * s).sum::<f64>() / self.0.len() as f64
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

#[inline]
fn sign(v: f64) -> f64 {
    if v >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// Sign quantizer.
pub fn binarize(a: &[f64]) -> Result<BipolarCode> {
    if a.is_empty() {
        return Err(Error::InvalidInput("feature vector is empty".into()));
    }
    ensure_finite(a, "binarize")?;
    Ok(BipolarCode(a.iter().copied().map(sign).collect()))
}

/// Clipped straight-through gradient of [`binarize`].
pub fn ste_backward(a: &[f64], upstream: &[f64]) -> Result<Vec<f64>> {
    if a.len() != upstream.len() {
        return Err(Error::InvalidInput(format!(
            "ste_backward: feature length {} != upstream length {}",
            a.len(),
            upstream.len()
        )));
    }
    Ok(a.iter()
        .zip(upstream)
        .map(|(&ai, &gi)| if ai.abs() <= STE_CLIP { gi } else { 0.0 })
        .collect())
}

/// BPSK over `{-1, +1}` is the identity onto unit-energy real symbols.
pub fn bpsk_modulate(z: &BipolarCode) -> BipolarCode {
    z.clone()
}

/// Scale `t` to unit L2 norm.
pub fn normalize_vector(t: &[f64]) -> Result<Vec<f64>> {
    ensure_finite(t, "normalize_vector")?;
    let norm = t.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 || t.is_empty() {
        return Err(Error::Degenerate("cannot normalize a zero vector".into()));
    }
    Ok(t.iter().map(|v| v / norm).collect())
}

/// How the quantizer stage behaves inside a differentiable pipeline.
///
/// `Hard` is the deployed path: sign forward, STE backward. `Surrogate`
/// replaces the sign by the identity so the whole loss is smooth; inside the
/// clip region its exact gradient coincides with the STE gradient, which is
/// what lets finite differences check the backward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Quantizer {
    #[default]
    Hard,
    Surrogate,
}

impl Quantizer {
    pub fn forward(self, a: &[f64]) -> Vec<f64> {
        match self {
            Quantizer::Hard => a.iter().copied().map(sign).collect(),
            Quantizer::Surrogate => a.to_vec(),
        }
    }

    /// Gradient w.r.t. the features given the gradient w.r.t. the symbols.
    /// Lengths must already agree.
    pub fn backward(self, a: &[f64], upstream: &[f64]) -> Vec<f64> {
        debug_assert_eq!(a.len(), upstream.len());
        a.iter()
            .zip(upstream)
            .map(|(&ai, &gi)| {
                if self == Quantizer::Surrogate || ai.abs() <= STE_CLIP {
                    gi
                } else {
                    0.0
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn binarize_examples() {
        assert_eq!(binarize(&[0.3, -0.7]).unwrap().symbols(), &[1.0, -1.0]);
        assert_eq!(binarize(&[0.0, 0.0]).unwrap().symbols(), &[1.0, 1.0]);
        assert_eq!(binarize(&[-0.0]).unwrap().symbols(), &[1.0]);
    }

    #[test]
    fn binarize_rejects_non_finite() {
        assert!(matches!(
            binarize(&[0.1, f64::NAN]),
            Err(Error::InvalidInput(_))
        ));
        assert!(binarize(&[f64::INFINITY]).is_err());
        assert!(FeatureVector::new(vec![f64::NEG_INFINITY]).is_err());
    }

    #[test]
    fn ste_examples() {
        assert_eq!(ste_backward(&[0.5], &[2.0]).unwrap(), vec![2.0]);
        assert_eq!(ste_backward(&[1.5], &[2.0]).unwrap(), vec![0.0]);
        assert_eq!(
            ste_backward(&[-0.9, 0.2], &[1.0, 1.0]).unwrap(),
            vec![1.0, 1.0]
        );
        assert!(ste_backward(&[0.1, 0.2], &[1.0]).is_err());
    }

    #[test]
    fn ste_clip_boundary_is_inclusive() {
        assert_eq!(
            ste_backward(&[1.0, -1.0], &[3.0, 3.0]).unwrap(),
            vec![3.0, 3.0]
        );
    }

    #[test]
    fn bpsk_is_identity_with_unit_energy() {
        let z = BipolarCode::new(vec![1.0, -1.0]).unwrap();
        assert_eq!(bpsk_modulate(&z), z);
        let z = BipolarCode::new(vec![-1.0; 3]).unwrap();
        assert_eq!(bpsk_modulate(&z).symbols(), &[-1.0, -1.0, -1.0]);
        assert_eq!(bpsk_modulate(&z).mean_energy(), 1.0);
        assert!(BipolarCode::new(vec![1.0, 0.5]).is_err());
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_vector(&[1.0; 4]).unwrap(), vec![0.5; 4]);
        let v = normalize_vector(&[3.0, 4.0]).unwrap();
        assert!((v[0] - 0.6).abs() < 1e-15 && (v[1] - 0.8).abs() < 1e-15);
        assert!(matches!(
            normalize_vector(&[0.0, 0.0]),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn surrogate_gradient_matches_finite_differences() {
        // loss(a) = sum_j w_j * tanh(q(a_j))^2 with q the surrogate quantizer
        let a = [0.3, -0.8, 0.05, 0.99];
        let w = [1.5, -0.4, 2.0, 0.7];
        let loss = |a: &[f64]| -> f64 {
            Quantizer::Surrogate
                .forward(a)
                .iter()
                .zip(&w)
                .map(|(x, wj)| wj * x.tanh().powi(2))
                .sum()
        };
        let x = Quantizer::Surrogate.forward(&a);
        let up: Vec<f64> = x
            .iter()
            .zip(&w)
            .map(|(x, wj)| wj * 2.0 * x.tanh() * (1.0 - x.tanh().powi(2)))
            .collect();
        let analytic = Quantizer::Surrogate.backward(&a, &up);
        // STE agrees with the surrogate inside the clip region
        assert_eq!(analytic, Quantizer::Hard.backward(&a, &up));
        let h = 1e-6;
        for j in 0..a.len() {
            let mut ap = a;
            let mut am = a;
            ap[j] += h;
            am[j] -= h;
            let fd = (loss(&ap) - loss(&am)) / (2.0 * h);
            let rel = (fd - analytic[j]).abs() / fd.abs().max(analytic[j].abs()).max(1e-12);
            assert!(rel < 1e-6, "dim {j}: fd {fd} analytic {}", analytic[j]);
        }
    }

    proptest! {
        #[test]
        fn binarize_alphabet_and_idempotence(a in prop::collection::vec(-1e6f64..1e6, 1..64)) {
            let z = binarize(&a).unwrap();
            prop_assert!(z.symbols().iter().all(|&s| s == 1.0 || s == -1.0));
            prop_assert_eq!(binarize(z.symbols()).unwrap(), z.clone());
            if a.iter().all(|&v| v != 0.0) {
                prop_assert!(z.symbols().iter().zip(&a).all(|(s, v)| s.signum() == v.signum()));
            }
        }

        #[test]
        fn ste_is_linear_in_upstream(
            a in prop::collection::vec(-2.0f64..2.0, 8),
            u in prop::collection::vec(-5.0f64..5.0, 8),
            v in prop::collection::vec(-5.0f64..5.0, 8),
            c in -3.0f64..3.0,
        ) {
            let combo: Vec<f64> = u.iter().zip(&v).map(|(x, y)| x + c * y).collect();
            let lhs = ste_backward(&a, &combo).unwrap();
            let gu = ste_backward(&a, &u).unwrap();
            let gv = ste_backward(&a, &v).unwrap();
            for j in 0..8 {
                prop_assert!((lhs[j] - (gu[j] + c * gv[j])).abs() < 1e-12);
            }
        }

        #[test]
        fn normalized_vectors_have_unit_norm(t in prop::collection::vec(-100.0f64..100.0, 1..32)) {
            prop_assume!(t.iter().any(|v| v.abs() > 1e-6));
            let n = normalize_vector(&t).unwrap();
            let norm = n.iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assert!((norm - 1.0).abs() < 1e-12);
        }
    }
}
