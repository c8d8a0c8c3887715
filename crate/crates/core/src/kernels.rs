//! Isotropic positive-definite kernels with unit diagonal.
//!
//! Every kernel here is a function of the Euclidean distance only, so
//! `K(x, x) = 1` and `K(x, y) = K(y, x)` hold exactly in floating point.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("dimension mismatch: kernel has d = {expected}, got points of length {left} and {right}")]
    DimensionMismatch {
        expected: usize,
        left: usize,
        right: usize,
    },
    #[error("lengthscale must be positive and finite, got {0}")]
    BadLengthscale(f64),
    #[error("rational quadratic shape mu = {mu} must exceed d/2 = {half_dim}")]
    ShapeTooSmall { mu: f64, half_dim: f64 },
    #[error("Matern nu = {0} is not one of 1/2, 3/2, 5/2, 7/2")]
    UnsupportedNu(f64),
    #[error("dimension must be positive")]
    ZeroDimension,
    #[error("unknown kernel family `{0}` (expected one of: rq, se, matern)")]
    UnknownFamily(String),
}

/// Half-integer Matérn smoothness values with closed-form expressions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MaternNu {
    Half,
    ThreeHalves,
    FiveHalves,
    SevenHalves,
}

impl MaternNu {
    pub fn from_f64(nu: f64) -> Result<Self, KernelError> {
        match nu {
            x if x == 0.5 => Ok(Self::Half),
            x if x == 1.5 => Ok(Self::ThreeHalves),
            x if x == 2.5 => Ok(Self::FiveHalves),
            x if x == 3.5 => Ok(Self::SevenHalves),
            other => Err(KernelError::UnsupportedNu(other)),
        }
    }

    pub fn value(self) -> f64 {
        match self {
            Self::Half => 0.5,
            Self::ThreeHalves => 1.5,
            Self::FiveHalves => 2.5,
            Self::SevenHalves => 3.5,
        }
    }
}

/// Which kernel formula to evaluate, together with its family-specific
/// parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelFamily<T> {
    /// `(1 + s^2 / (2 mu l^2))^(-mu)`
    RationalQuadratic { shape: T },
    /// `exp(-s^2 / (2 l^2))`
    SquaredExponential,
    Matern { nu: MaternNu },
}

impl<T> KernelFamily<T> {
    pub fn name(&self) -> &'static str {
        match self {
            Self::RationalQuadratic { .. } => "rq",
            Self::SquaredExponential => "se",
            Self::Matern { .. } => "matern",
        }
    }
}

/// Names accepted by [`FromStr`] for kernel families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FamilyName {
    Rq,
    Se,
    Matern,
}

impl FromStr for FamilyName {
    type Err = KernelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "rq" | "rational_quadratic" | "rational-quadratic" => Ok(Self::Rq),
            "se" | "squared_exponential" | "squared-exponential" | "rbf" => Ok(Self::Se),
            "matern" => Ok(Self::Matern),
            _ => Err(KernelError::UnknownFamily(s.to_string())),
        }
    }
}

impl fmt::Display for FamilyName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Rq => "rq",
            Self::Se => "se",
            Self::Matern => "matern",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kernel<T> {
    family: KernelFamily<T>,
    lengthscale: T,
    dim: usize,
}

impl<T: Real> Kernel<T> {
    fn check_common(dim: usize, lengthscale: T) -> Result<(), KernelError> {
        if dim == 0 {
            return Err(KernelError::ZeroDimension);
        }
        let l = lengthscale.as_f64();
        if !(l > 0.0 && l.is_finite()) {
            return Err(KernelError::BadLengthscale(l));
        }
        Ok(())
    }

    pub fn rational_quadratic(dim: usize, lengthscale: T, shape: T) -> Result<Self, KernelError> {
        Self::check_common(dim, lengthscale)?;
        let half_dim = dim as f64 / 2.0;
        if !(shape.as_f64() > half_dim) {
            return Err(KernelError::ShapeTooSmall {
                mu: shape.as_f64(),
                half_dim,
            });
        }
        Ok(Self {
            family: KernelFamily::RationalQuadratic { shape },
            lengthscale,
            dim,
        })
    }

    pub fn squared_exponential(dim: usize, lengthscale: T) -> Result<Self, KernelError> {
        Self::check_common(dim, lengthscale)?;
        Ok(Self {
            family: KernelFamily::SquaredExponential,
            lengthscale,
            dim,
        })
    }

    pub fn matern(dim: usize, lengthscale: T, nu: MaternNu) -> Result<Self, KernelError> {
        Self::check_common(dim, lengthscale)?;
        Ok(Self {
            family: KernelFamily::Matern { nu },
            lengthscale,
            dim,
        })
    }

    /// RQ kernel with the experiment defaults `mu = 2d`, `l = 0.3 sqrt(d)`.
    pub fn default_rq(dim: usize) -> Result<Self, KernelError> {
        let d = T::lit(dim as f64);
        Self::rational_quadratic(dim, T::lit(0.3) * d.sqrt(), T::lit(2.0) * d)
    }

    /// SE kernel with the experiment default `l = 0.2 sqrt(d)`.
    pub fn default_se(dim: usize) -> Result<Self, KernelError> {
        Self::squared_exponential(dim, T::lit(0.2) * T::lit(dim as f64).sqrt())
    }

    pub fn family(&self) -> KernelFamily<T> {
        self.family
    }

    pub fn lengthscale(&self) -> T {
        self.lengthscale
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Checked evaluation.
    pub fn evaluate(&self, x: &[T], y: &[T]) -> Result<T, KernelError> {
        if x.len() != self.dim || y.len() != self.dim {
            return Err(KernelError::DimensionMismatch {
                expected: self.dim,
                left: x.len(),
                right: y.len(),
            });
        }
        Ok(self.eval(x, y))
    }

    /// Unchecked evaluation for hot loops; callers guarantee dimensions.
    #[inline]
    pub fn eval(&self, x: &[T], y: &[T]) -> T {
        debug_assert_eq!(x.len(), self.dim);
        debug_assert_eq!(y.len(), self.dim);
        let mut s2 = T::zero();
        for (a, b) in x.iter().zip(y) {
            let diff = *a - *b;
            s2 += diff * diff;
        }
        self.of_sq_dist(s2)
    }

    /// Kernel value as a function of the squared distance `s^2`.
    #[inline]
    pub fn of_sq_dist(&self, s2: T) -> T {
        let l = self.lengthscale;
        match self.family {
            KernelFamily::SquaredExponential => (-s2 / (T::lit(2.0) * l * l)).exp(),
            KernelFamily::RationalQuadratic { shape } => {
                (T::one() + s2 / (T::lit(2.0) * shape * l * l)).powf(-shape)
            }
            KernelFamily::Matern { nu } => matern_closed_form(nu, s2.sqrt() / l),
        }
    }

    /// Diagonal value; always one for the supported families.
    #[inline]
    pub fn diag(&self, _x: &[T]) -> T {
        T::one()
    }
}

/// Serializable kernel description used by configuration and environment
/// files. The lengthscale is either given directly or as a factor of
/// `sqrt(d)`; unset fields fall back to the experiment defaults.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    pub family: FamilyName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lengthscale: Option<f64>,
    /// Lengthscale as a multiple of `sqrt(d)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lengthscale_factor: Option<f64>,
    /// RQ shape `mu`; defaults to `2d`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shape: Option<f64>,
    /// Matérn smoothness; defaults to 3/2.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu: Option<f64>,
}

impl KernelSpec {
    pub fn with_factor(family: FamilyName, factor: f64) -> Self {
        Self {
            family,
            lengthscale: None,
            lengthscale_factor: Some(factor),
            shape: None,
            nu: None,
        }
    }

    /// Lengthscale in dimension `dim`.
    pub fn lengthscale_in(&self, dim: usize) -> f64 {
        if let Some(l) = self.lengthscale {
            return l;
        }
        let factor = self.lengthscale_factor.unwrap_or(match self.family {
            FamilyName::Rq => 0.3,
            FamilyName::Se | FamilyName::Matern => 0.2,
        });
        factor * (dim as f64).sqrt()
    }

    pub fn build(&self, dim: usize) -> Result<Kernel<f64>, KernelError> {
        let l = self.lengthscale_in(dim);
        match self.family {
            FamilyName::Rq => Kernel::rational_quadratic(dim, l, self.shape.unwrap_or(2.0 * dim as f64)),
            FamilyName::Se => Kernel::squared_exponential(dim, l),
            FamilyName::Matern => Kernel::matern(dim, l, MaternNu::from_f64(self.nu.unwrap_or(1.5))?),
        }
    }

    /// Short label such as `rq(l=0.3sqrt(d))`.
    pub fn label(&self) -> String {
        let ls = match (self.lengthscale, self.lengthscale_factor) {
            (Some(l), _) => format!("l={l}"),
            (None, Some(f)) => format!("l={f}sqrt(d)"),
            (None, None) => "l=default".to_string(),
        };
        match self.family {
            FamilyName::Matern => format!("matern{}({ls})", self.nu.unwrap_or(1.5)),
            other => format!("{other}({ls})"),
        }
    }
}

/// Half-integer Matérn kernel at scaled distance `r = s / l`.
fn matern_closed_form<T: Real>(nu: MaternNu, r: T) -> T {
    match nu {
        MaternNu::Half => (-r).exp(),
        MaternNu::ThreeHalves => {
            let z = T::lit(3.0f64.sqrt()) * r;
            (T::one() + z) * (-z).exp()
        }
        MaternNu::FiveHalves => {
            let z = T::lit(5.0f64.sqrt()) * r;
            (T::one() + z + z * z / T::lit(3.0)) * (-z).exp()
        }
        MaternNu::SevenHalves => {
            let z = T::lit(7.0f64.sqrt()) * r;
            let z2 = z * z;
            (T::one() + z + T::lit(0.4) * z2 + z2 * z / T::lit(15.0)) * (-z).exp()
        }
    }
}
