//! Summary statistics. Quantiles use linear interpolation between order
//! statistics (position h = (n − 1) q, the "type 7" convention).

/// Linear-interpolation quantile of unsorted data; `None` when empty.
pub fn quantile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() || !(0.0..=1.0).contains(&q) {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let h = (v.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    Some(v[lo] + (h - lo as f64) * (v[hi] - v[lo]))
}

pub fn median(values: &[f64]) -> Option<f64> {
    quantile(values, 0.5)
}

/// Q(0.75) − Q(0.25).
pub fn iqr(values: &[f64]) -> Option<f64> {
    Some(quantile(values, 0.75)? - quantile(values, 0.25)?)
}

pub fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// Trailing moving average; entry k averages rows max(0, k + 1 − window)..=k.
/// The flag is set when the series is shorter than the window.
pub fn moving_average(values: &[f64], window: usize) -> (Vec<f64>, bool) {
    let window = window.max(1);
    let mut out = Vec::with_capacity(values.len());
    let mut acc = 0.0;
    for (k, &v) in values.iter().enumerate() {
        acc += v;
        if k >= window {
            acc -= values[k - window];
        }
        out.push(acc / (k + 1).min(window) as f64);
    }
    (out, values.len() < window)
}

/// Mean of the last `window` entries (all of them when fewer), plus the
/// clipping flag.
pub fn final_window_mean(values: &[f64], window: usize) -> Option<(f64, bool)> {
    let w = window.max(1).min(values.len());
    Some((mean(&values[values.len() - w..])?, values.len() < window))
}

/// Least-squares slope, intercept and R² of y against x.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Option<(f64, f64, f64)> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return None;
    }
    let mx = mean(x)?;
    let my = mean(y)?;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxx += (a - mx) * (a - mx);
        sxy += (a - mx) * (b - my);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Some((slope, my - slope * mx, r2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn examples() {
        assert_eq!(median(&[3.0]), Some(3.0));
        assert_eq!(iqr(&[3.0]), Some(0.0));
        assert_eq!(iqr(&[1.0, 5.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), Some(2.5));
        assert_eq!(quantile(&[1.0, 2.0, 3.0, 4.0, 5.0], 0.25), Some(2.0));
        assert_eq!(median(&[]), None);
        let (ma, clipped) = moving_average(&[1.0, 2.0, 3.0, 4.0], 2);
        assert_eq!(ma, vec![1.0, 1.5, 2.5, 3.5]);
        assert!(!clipped);
        let fifty: Vec<f64> = (0..50).map(|k| k as f64).collect();
        let (_, clipped) = moving_average(&fifty, 100);
        assert!(clipped);
        assert_eq!(final_window_mean(&fifty, 100), Some((24.5, true)));
        let (s, b, r2) = linear_fit(&[0.0, 1.0, 2.0], &[1.0, 3.0, 5.0]).unwrap();
        assert!((s - 2.0).abs() < 1e-15 && (b - 1.0).abs() < 1e-15 && (r2 - 1.0).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn two_point_iqr_is_half_gap(a in -1e6f64..1e6, b in -1e6f64..1e6) {
            let got = iqr(&[a, b]).unwrap();
            prop_assert!((got - (a - b).abs() / 2.0).abs() <= 1e-9 * (1.0 + a.abs() + b.abs()));
        }

        #[test]
        fn quantiles_are_ordered(v in prop::collection::vec(-1e3f64..1e3, 1..40)) {
            let lo = quantile(&v, 0.25).unwrap();
            let mid = median(&v).unwrap();
            let hi = quantile(&v, 0.75).unwrap();
            prop_assert!(lo <= mid && mid <= hi);
        }
    }
}
