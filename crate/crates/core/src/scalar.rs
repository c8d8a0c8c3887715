//! Scalar abstraction shared by the numeric layers.

use nalgebra::RealField;
use num_traits::ToPrimitive;

/// Real floating-point scalar usable by kernels, trackers and the
/// Newton-basis builder. Implemented for `f32` and `f64`.
pub trait Real: RealField + Copy + ToPrimitive {
    /// Lossy conversion from an `f64` literal.
    #[inline]
    fn lit(x: f64) -> Self {
        nalgebra::convert(x)
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl<T: RealField + Copy + ToPrimitive> Real for T {}

/// Index of the largest value; ties resolve to the lowest index.
/// `NaN` entries never win.
pub fn argmax<T: Real>(values: impl IntoIterator<Item = T>) -> Option<usize> {
    let mut best: Option<(usize, T)> = None;
    for (i, v) in values.into_iter().enumerate() {
        match best {
            None if v == v => best = Some((i, v)),
            Some((_, b)) if v > b => best = Some((i, v)),
            _ => {}
        }
    }
    best.map(|(i, _)| i)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_prefers_lowest_index() {
        assert_eq!(argmax([1.0, 3.0, 3.0, 2.0]), Some(1));
        assert_eq!(argmax([f64::NAN, 0.5, 0.5]), Some(1));
        assert_eq!(argmax(Vec::<f64>::new()), None);
    }

    #[test]
    fn literal_conversion_for_f32() {
        let x: f32 = Real::lit(0.25);
        assert_eq!(x, 0.25f32);
        assert_eq!(Real::as_f64(x), 0.25);
    }
}

#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn argmax_is_first_maximum(v in proptest::collection::vec(-3i32..3, 1..30)) {
            let xs: Vec<f64> = v.iter().map(|&i| i as f64).collect();
            let i = argmax(xs.iter().copied()).unwrap();
            prop_assert!(xs.iter().all(|&x| x <= xs[i]));
            prop_assert!(xs[..i].iter().all(|&x| x < xs[i]));
        }
    }
}
