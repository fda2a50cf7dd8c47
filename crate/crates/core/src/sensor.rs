//! Power-law model of the fingertip proximity sensor.
//!
//! The summed phototransistor current falls off as `alpha * (d + d0)^-n`,
//! where `alpha` is the surface's infrared reflectance and `(d0, n)` are fixed
//! per sensor. Because the model is exactly invertible, any error in the
//! assumed reflectance maps directly into a distance error.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Offset and decay exponent of the sensor's power law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawIntrinsics", into = "RawIntrinsics")]
pub struct SensorIntrinsics {
    d0: f64,
    n: f64,
}

#[derive(Serialize, Deserialize)]
struct RawIntrinsics {
    d0: f64,
    n: f64,
}

impl TryFrom<RawIntrinsics> for SensorIntrinsics {
    type Error = Error;
    fn try_from(raw: RawIntrinsics) -> Result<Self> {
        SensorIntrinsics::new(raw.d0, raw.n)
    }
}

impl From<SensorIntrinsics> for RawIntrinsics {
    fn from(s: SensorIntrinsics) -> Self {
        RawIntrinsics { d0: s.d0, n: s.n }
    }
}

impl SensorIntrinsics {
    /// Library default used by examples and tests only. Data-processing
    /// paths always take intrinsics from configuration.
    pub const EXAMPLE: SensorIntrinsics = SensorIntrinsics { d0: 1.0, n: 2.0 };

    pub fn new(d0: f64, n: f64) -> Result<Self> {
        if !d0.is_finite() || d0 < 0.0 {
            return Err(Error::Domain(format!(
                "offset d0 must be finite and >= 0, got {d0}"
            )));
        }
        if !n.is_finite() || n <= 0.0 {
            return Err(Error::Domain(format!(
                "exponent n must be finite and > 0, got {n}"
            )));
        }
        Ok(Self { d0, n })
    }

    pub fn d0(&self) -> f64 {
        self.d0
    }

    pub fn n(&self) -> f64 {
        self.n
    }

    /// Geometric factor `(d + d0)^-n`, i.e. the current for unit reflectance.
    pub fn gain(&self, d: f64) -> Result<f64> {
        let r = d + self.d0;
        if !(r > 0.0) || !r.is_finite() {
            return Err(Error::Domain(format!(
                "d + d0 must be positive (d = {d}, d0 = {})",
                self.d0
            )));
        }
        Ok(r.powf(-self.n))
    }
}

/// Infrared reflectance in `(0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Reflectance(f64);

impl Reflectance {
    pub const ONE: Reflectance = Reflectance(1.0);
    pub const HALF: Reflectance = Reflectance(0.5);

    pub fn new(alpha: f64) -> Result<Self> {
        if alpha.is_finite() && alpha > 0.0 && alpha <= 1.0 {
            Ok(Self(alpha))
        } else {
            Err(Error::Domain(format!(
                "reflectance must lie in (0, 1], got {alpha}"
            )))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Reflectance {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        Reflectance::new(v)
    }
}

impl From<Reflectance> for f64 {
    fn from(r: Reflectance) -> f64 {
        r.0
    }
}

/// Summed photocurrent in arbitrary sensor units.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct CurrentReading(f64);

impl CurrentReading {
    pub fn new(i_all: f64) -> Result<Self> {
        if i_all.is_finite() && i_all > 0.0 {
            Ok(Self(i_all))
        } else {
            Err(Error::Domain(format!(
                "current reading must be finite and > 0, got {i_all}"
            )))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

/// Current the sensor reports for a surface of reflectance `alpha` at distance `d` mm.
pub fn forward_current(
    intrinsics: &SensorIntrinsics,
    alpha: Reflectance,
    d: f64,
) -> Result<CurrentReading> {
    if !(d >= 0.0) {
        return Err(Error::Domain(format!("distance must be >= 0, got {d}")));
    }
    let g = intrinsics.gain(d)?;
    CurrentReading::new(alpha.get() * g)
}

/// Distance implied by `reading` when the surface is assumed to have
/// reflectance `alpha`.
///
/// The result may be negative when `alpha` underestimates the true
/// reflectance; it is returned as-is.
pub fn invert_distance(
    intrinsics: &SensorIntrinsics,
    alpha: Reflectance,
    reading: CurrentReading,
) -> f64 {
    (alpha.get() / reading.get()).powf(intrinsics.n().recip()) - intrinsics.d0()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn ex() -> SensorIntrinsics {
        SensorIntrinsics::EXAMPLE
    }

    #[test]
    fn forward_examples() {
        let i = forward_current(&ex(), Reflectance::ONE, 0.0).unwrap();
        assert_eq!(i.get(), 1.0);
        let i = forward_current(&ex(), Reflectance::HALF, 1.0).unwrap();
        assert_eq!(i.get(), 0.125);
    }

    #[test]
    #[allow(clippy::excessive_precision)]
    fn forward_matches_extended_precision_value() {
        // 0.326 * 19.8^-1.7 evaluated with 40 significant digits.
        let expected = 0.002_036_511_076_898_903_310_3_f64;
        let s = SensorIntrinsics::new(2.5, 1.7).unwrap();
        let got = forward_current(&s, Reflectance::new(0.326).unwrap(), 17.3).unwrap();
        assert_relative_eq!(got.get(), expected, max_relative = 1e-14);
    }

    #[test]
    fn singularity_is_a_domain_error() {
        let s = SensorIntrinsics::new(0.0, 2.0).unwrap();
        assert!(matches!(
            forward_current(&s, Reflectance::ONE, 0.0),
            Err(Error::Domain(_))
        ));
        assert!(forward_current(&ex(), Reflectance::ONE, -0.5).is_err());
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(SensorIntrinsics::new(-1.0, 2.0).is_err());
        assert!(SensorIntrinsics::new(1.0, 0.0).is_err());
        assert!(SensorIntrinsics::new(f64::NAN, 2.0).is_err());
        assert!(Reflectance::new(0.0).is_err());
        assert!(Reflectance::new(1.0 + 1e-12).is_err());
        assert!(Reflectance::new(1.0).is_ok());
        assert!(CurrentReading::new(0.0).is_err());
        assert!(CurrentReading::new(-1.0).is_err());
    }

    #[test]
    fn inversion_examples() {
        let a = Reflectance::new(0.7).unwrap();
        let r = forward_current(&ex(), a, 12.0).unwrap();
        assert!((invert_distance(&ex(), a, r) - 12.0).abs() <= 1e-9);

        let d = invert_distance(&ex(), Reflectance::ONE, CurrentReading::new(1.0).unwrap());
        assert_eq!(d, 0.0);
    }

    #[test]
    #[allow(clippy::excessive_precision)]
    fn overestimated_reflectance_overestimates_distance() {
        // Root of 0.5 * 11^-2 = (x + 1)^-2 found by 200 bisection steps at 40 digits.
        let brute_force = 14.556_349_186_104_045_320_9_f64;
        let r = forward_current(&ex(), Reflectance::HALF, 10.0).unwrap();
        let d_hat = invert_distance(&ex(), Reflectance::ONE, r);
        assert_relative_eq!(d_hat, brute_force, max_relative = 1e-13);
        assert_relative_eq!(d_hat, 2f64.sqrt() * 11.0 - 1.0, max_relative = 1e-13);
    }

    #[test]
    fn underestimated_reflectance_can_go_negative() {
        let r = forward_current(&ex(), Reflectance::ONE, 0.5).unwrap();
        let d_hat = invert_distance(&ex(), Reflectance::new(0.1).unwrap(), r);
        assert!(d_hat < 0.0);
    }

    proptest! {
        #[test]
        fn round_trip(d0 in 0.0..10.0f64, n in 0.3..4.0f64, alpha in 1e-3..1.0f64, d in 0.1..100.0f64) {
            let s = SensorIntrinsics::new(d0, n).unwrap();
            let a = Reflectance::new(alpha).unwrap();
            let r = forward_current(&s, a, d).unwrap();
            prop_assert!((invert_distance(&s, a, r) - d).abs() <= 1e-9 * (1.0 + d));
        }

        #[test]
        fn strictly_decreasing_in_distance(d0 in 0.0..10.0f64, n in 0.3..4.0f64, d1 in 0.0..100.0f64, gap in 1e-3..50.0f64) {
            let s = SensorIntrinsics::new(d0 + 0.01, n).unwrap();
            let a = Reflectance::new(0.6).unwrap();
            let near = forward_current(&s, a, d1).unwrap();
            let far = forward_current(&s, a, d1 + gap).unwrap();
            prop_assert!(near > far);
        }

        #[test]
        fn linear_in_alpha(d0 in 0.0..10.0f64, n in 0.3..4.0f64, alpha in 1e-3..0.5f64, d in 0.1..100.0f64) {
            let s = SensorIntrinsics::new(d0, n).unwrap();
            let one = forward_current(&s, Reflectance::new(alpha).unwrap(), d).unwrap().get();
            let two = forward_current(&s, Reflectance::new(2.0 * alpha).unwrap(), d).unwrap().get();
            prop_assert!((two - 2.0 * one).abs() <= 1e-12 * two);
        }

        #[test]
        fn overshoot_identity(d0 in 0.0..10.0f64, n in 0.3..4.0f64, alpha in 1e-2..1.0f64, alpha_hat in 1e-2..1.0f64, d in 0.1..100.0f64) {
            let s = SensorIntrinsics::new(d0, n).unwrap();
            let r = forward_current(&s, Reflectance::new(alpha).unwrap(), d).unwrap();
            let got = invert_distance(&s, Reflectance::new(alpha_hat).unwrap(), r);
            let want = (alpha_hat / alpha).powf(1.0 / n) * (d + d0) - d0;
            prop_assert!((got - want).abs() <= 1e-9 * want.abs().max(d + d0));
        }
    }
}
