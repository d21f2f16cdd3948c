//! Small numerical helpers shared across modules.

/// Euler–Mascheroni constant, 20 significant digits.
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_860_61;

pub const LN_2PI: f64 = 1.837_877_066_409_345_483_56;

/// Fixed-order pairwise summation. The result depends only on the input
/// order, never on how the terms were produced.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const BLOCK: usize = 32;
    if xs.len() <= BLOCK {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// `log(sum(exp(xs)))`, stable against overflow and underflow.
/// Returns `-inf` when every term is `-inf` (or the slice is empty).
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let s: f64 = xs.iter().map(|&x| (x - max).exp()).sum();
    max + s.ln()
}

/// Natural log of `Γ(k/2)` for a positive integer `k`, by the exact
/// recurrences from `Γ(1/2) = √π` and `Γ(1) = 1`.
pub fn ln_gamma_half(k: u32) -> f64 {
    assert!(k > 0, "ln_gamma_half requires k >= 1");
    let (mut acc, mut base) = if k % 2 == 0 {
        (0.0, 2u32)
    } else {
        (0.5 * std::f64::consts::PI.ln(), 1u32)
    };
    // Γ(x + 1) = x Γ(x), stepping x by one (k by two).
    while base < k {
        acc += (base as f64 / 2.0).ln();
        base += 2;
    }
    acc
}

/// Linear-interpolation quantile (R type 7) of an already sorted slice.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    if sorted.len() == 1 {
        return sorted[0];
    }
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    if lo == hi {
        return sorted[lo];
    }
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, q)
}

/// SplitMix64 finaliser; a stable 64-bit mixing function.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) fn mean(xs: &[f64]) -> f64 {
    pairwise_sum(xs) / xs.len() as f64
}

/// Population (divide-by-n) variance.
pub(crate) fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    let sq: Vec<f64> = xs.iter().map(|x| (x - m) * (x - m)).collect();
    pairwise_sum(&sq) / xs.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ln_gamma_half_small_values() {
        let pi = std::f64::consts::PI;
        // Γ(1/2) = √π, Γ(1) = 1, Γ(3/2) = √π/2, Γ(2) = 1, Γ(5/2) = 3√π/4, Γ(3) = 2
        let want = [
            pi.sqrt(),
            1.0,
            pi.sqrt() / 2.0,
            1.0,
            0.75 * pi.sqrt(),
            2.0,
        ];
        for (k, w) in (1..=6).zip(want) {
            assert!((ln_gamma_half(k).exp() - w).abs() < 1e-14, "k={k}");
        }
    }

    #[test]
    fn log_sum_exp_matches_naive() {
        let xs = [-1.0, 0.5, -3.0];
        let naive = xs.iter().map(|x: &f64| x.exp()).sum::<f64>().ln();
        assert!((log_sum_exp(&xs) - naive).abs() < 1e-14);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY; 3]), f64::NEG_INFINITY);
        // naive path would underflow here
        assert!((log_sum_exp(&[-1000.0, -1000.0]) - (-1000.0 + 2f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn quantiles_interpolate() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile_sorted(&v, 0.5), 3.0);
        assert!((quantile_sorted(&v, 0.1) - 1.4).abs() < 1e-15);
        assert_eq!(quantile(&[7.0], 0.9), 7.0);
    }

    #[test]
    fn pairwise_sum_agrees_with_naive() {
        let xs: Vec<f64> = (0..1000).map(|i| (i as f64).sin()).collect();
        let naive: f64 = xs.iter().sum();
        assert!((pairwise_sum(&xs) - naive).abs() < 1e-10);
    }
}
