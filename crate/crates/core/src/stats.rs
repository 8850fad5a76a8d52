use statrs::distribution::{ContinuousCDF, StudentsT};

/// Mean and half-width of the two-sided 95% Student-t interval.
/// A single value or a constant sample has zero width.
pub fn mean_ci95(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    if var == 0.0 {
        return (mean, 0.0);
    }
    let t = StudentsT::new(0.0, 1.0, n - 1.0)
        .expect("valid degrees of freedom")
        .inverse_cdf(0.975);
    (mean, t * (var / n).sqrt())
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// SplitMix64 step, used to derive independent stream seeds.
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(parts: &[u64]) -> u64 {
    parts.iter().fold(0x5EED_u64, |acc, p| mix(acc ^ mix(*p)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_sample_has_zero_width() {
        assert_eq!(mean_ci95(&[0.0; 8]), (0.0, 0.0));
        assert_eq!(mean_ci95(&[3.0]), (3.0, 0.0));
        assert_eq!(mean_ci95(&[]), (0.0, 0.0));
    }

    #[test]
    fn two_point_interval() {
        let (m, hw) = mean_ci95(&[1000.0, 0.0]);
        assert_eq!(m, 500.0);
        // t_{0.975, 1} = 12.706; standard error = 500
        assert!((hw - 12.7062 * 500.0).abs() < 1.0);
    }

    #[test]
    fn seeds_differ_by_position() {
        assert_ne!(derive_seed(&[1, 2]), derive_seed(&[2, 1]));
        assert_eq!(derive_seed(&[7, 8, 9]), derive_seed(&[7, 8, 9]));
    }
}
