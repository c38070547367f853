//! Communication weights.
//!
//! Only the power-law family `psi(r) = (1 + r^2)^(-beta/2)` is built in. It is
//! positive, bounded by `psi(0) = 1`, non-increasing and Lipschitz with
//! constant `beta/2`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Anything the right-hand side can use as a pairwise weight.
///
/// The hot path calls [`CommunicationWeight::weight`] with distances that are
/// already known to be non-negative, so no validation happens there.
pub trait CommunicationWeight: Sync {
    fn weight(&self, r: f64) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    PowerLaw,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "KernelRepr", into = "KernelRepr")]
pub struct KernelSpec {
    family: KernelFamily,
    beta: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct KernelRepr {
    family: KernelFamily,
    beta: f64,
}

impl TryFrom<KernelRepr> for KernelSpec {
    type Error = Error;

    fn try_from(repr: KernelRepr) -> Result<Self> {
        match repr.family {
            KernelFamily::PowerLaw => KernelSpec::power_law(repr.beta),
        }
    }
}

impl From<KernelSpec> for KernelRepr {
    fn from(k: KernelSpec) -> Self {
        KernelRepr {
            family: k.family,
            beta: k.beta,
        }
    }
}

impl KernelSpec {
    pub fn power_law(beta: f64) -> Result<Self> {
        if !beta.is_finite() || beta < 0.0 {
            return Err(Error::config(
                "kernel.beta",
                format!("exponent must be finite and non-negative, got {beta}"),
            ));
        }
        Ok(KernelSpec {
            family: KernelFamily::PowerLaw,
            beta,
        })
    }

    /// The constant kernel `psi = 1`.
    pub fn constant() -> Self {
        KernelSpec {
            family: KernelFamily::PowerLaw,
            beta: 0.0,
        }
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// `psi(r)` for a validated distance.
    pub fn evaluate(&self, r: f64) -> Result<f64> {
        if !r.is_finite() || r < 0.0 {
            return Err(Error::Domain(format!(
                "kernel distance must be finite and non-negative, got {r}"
            )));
        }
        Ok(self.eval_unchecked(r))
    }

    /// Long-range regime `beta < 1`, in which `alpha * psi(D + alpha)` grows
    /// without bound and the flocking condition can always be met.
    pub fn is_long_range(&self) -> bool {
        self.beta < 1.0
    }

    // exp(-(beta/2) * log1p(r^2)) keeps large r finite. Past r ~ 1e154 the
    // square overflows to +inf and the weight collapses to 0 for beta > 0;
    // at r > 1e150 only the leading digits of psi are meaningful anyway.
    #[inline]
    fn eval_unchecked(&self, r: f64) -> f64 {
        if self.beta == 0.0 {
            return 1.0;
        }
        let s = r * r;
        if s.is_finite() {
            (-0.5 * self.beta * s.ln_1p()).exp()
        } else {
            (-self.beta * r.ln()).exp()
        }
    }
}

impl CommunicationWeight for KernelSpec {
    #[inline]
    fn weight(&self, r: f64) -> f64 {
        self.eval_unchecked(r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn closed_form_values() {
        let k0 = KernelSpec::power_law(0.0).unwrap();
        assert_eq!(k0.evaluate(7.3).unwrap(), 1.0);
        let k1 = KernelSpec::power_law(1.0).unwrap();
        assert!((k1.evaluate(3f64.sqrt()).unwrap() - 0.5).abs() < 1e-15);
        let k2 = KernelSpec::power_law(2.0).unwrap();
        assert!((k2.evaluate(1.0).unwrap() - 0.5).abs() < 1e-15);
        for beta in [0.0, 0.25, 0.5, 1.0, 2.0, 7.5] {
            assert_eq!(KernelSpec::power_law(beta).unwrap().evaluate(0.0).unwrap(), 1.0);
        }
    }

    #[test]
    fn long_range_threshold() {
        assert!(KernelSpec::power_law(0.5).unwrap().is_long_range());
        assert!(!KernelSpec::power_law(1.0).unwrap().is_long_range());
        assert!(!KernelSpec::power_law(2.0).unwrap().is_long_range());
    }

    #[test]
    fn rejects_bad_inputs() {
        let k = KernelSpec::power_law(0.5).unwrap();
        assert!(matches!(k.evaluate(-1.0), Err(Error::Domain(_))));
        assert!(matches!(k.evaluate(f64::NAN), Err(Error::Domain(_))));
        assert!(matches!(k.evaluate(f64::INFINITY), Err(Error::Domain(_))));
        assert!(KernelSpec::power_law(-0.1).is_err());
        assert!(KernelSpec::power_law(f64::NAN).is_err());
    }

    #[test]
    fn huge_distances_stay_positive() {
        let k = KernelSpec::power_law(0.5).unwrap();
        let v = k.evaluate(1e200).unwrap();
        assert!(v > 0.0 && v < 1e-49);
        let v = k.evaluate(1e140).unwrap();
        assert!((v / 1e-70 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn json_shape() {
        let k: KernelSpec = serde_json::from_str(r#"{"family":"power_law","beta":0.5}"#).unwrap();
        assert_eq!(k.beta(), 0.5);
        assert_eq!(
            serde_json::to_string(&k).unwrap(),
            r#"{"family":"power_law","beta":0.5}"#
        );
        assert!(serde_json::from_str::<KernelSpec>(r#"{"family":"power_law","beta":-1}"#).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn monotone_and_in_range(beta in 0.0f64..8.0, a in 0.0f64..1e6, b in 0.0f64..1e6) {
            let k = KernelSpec::power_law(beta).unwrap();
            let (r1, r2) = if a <= b { (a, b) } else { (b, a) };
            let (p1, p2) = (k.evaluate(r1).unwrap(), k.evaluate(r2).unwrap());
            prop_assert!(p1 >= p2);
            for p in [p1, p2] {
                prop_assert!(p > 0.0 && p <= 1.0 && !p.is_nan());
            }
        }

        #[test]
        fn lipschitz_witness(beta in 0.0f64..8.0, a in 0.0f64..50.0, b in 0.0f64..50.0) {
            let k = KernelSpec::power_law(beta).unwrap();
            let lip = beta / 2.0;
            let diff = (k.evaluate(a).unwrap() - k.evaluate(b).unwrap()).abs();
            prop_assert!(diff <= lip * (a - b).abs() + 1e-15);
        }
    }
}
