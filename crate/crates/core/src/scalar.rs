//! Floating-point scalar abstraction shared by the numerical modules.

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};
use rand::Rng;
use rand_distr::{Distribution, Gamma, Open01, StandardNormal};

/// Real scalar used by every density, sampler and estimator in the crate.
///
/// Implemented for `f32` and `f64`. Arithmetic and elementary functions come
/// from [`RealField`]; conversions go through `num-traits`. The random-variate
/// hooks exist because `rand_distr` is generic over `num_traits::Float`, which
/// would clash with `RealField` method resolution if it were a supertrait.
pub trait Scalar:
    RealField + Copy + FromPrimitive + ToPrimitive + Default + std::iter::Sum + Send + Sync
{
    /// Lossy conversion from an `f64` literal.
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 is representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }

    fn of_usize(n: usize) -> Self {
        Self::of(n as f64)
    }

    /// Smallest positive normal value.
    fn tiny() -> Self;

    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// Uniform draw on the open interval (0, 1).
    fn open01<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// Gamma draw in shape/rate form. Callers validate the parameters.
    fn gamma_shape_rate<R: Rng + ?Sized>(shape: Self, rate: Self, rng: &mut R) -> Self;

    fn is_finite_value(self) -> bool {
        self.as_f64().is_finite()
    }
}

macro_rules! impl_scalar {
    ($t:ty) => {
        impl Scalar for $t {
            fn tiny() -> Self {
                <$t>::MIN_POSITIVE
            }

            fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
                StandardNormal.sample(rng)
            }

            fn open01<R: Rng + ?Sized>(rng: &mut R) -> Self {
                Open01.sample(rng)
            }

            fn gamma_shape_rate<R: Rng + ?Sized>(shape: Self, rate: Self, rng: &mut R) -> Self {
                Gamma::new(shape, 1.0 / rate)
                    .expect("validated gamma parameters")
                    .sample(rng)
            }

            fn is_finite_value(self) -> bool {
                self.is_finite()
            }
        }
    };
}

impl_scalar!(f32);
impl_scalar!(f64);
