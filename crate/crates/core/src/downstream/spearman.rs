use crate::error::{Error, Result};

/// Average ranks (1-based); tied values share the mean of their positions.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i + 1;
        while j < idx.len() && xs[idx[j]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j + 1) as f64 / 2.0; // mean of positions i+1..=j
        for &k in &idx[i..j] {
            ranks[k] = avg;
        }
        i = j;
    }
    ranks
}

/// Spearman's rank correlation with average-rank tie handling, computed as
/// the Pearson correlation of the ranks. Without ties this equals
/// `1 - 6 Σd² / (n(n² - 1))`.
///
/// Returns an error when either input has all-equal values, since no
/// ranking exists to correlate.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::Correlation(format!("length mismatch: {} vs {}", xs.len(), ys.len())));
    }
    if xs.len() < 2 {
        return Err(Error::Correlation(format!("need at least 2 observations, got {}", xs.len())));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::Correlation("non-finite observation".into()));
    }
    let rx = average_ranks(xs);
    let ry = average_ranks(ys);
    let n = rx.len() as f64;
    let mean = (n + 1.0) / 2.0;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mean) * (b - mean);
        sxx += (a - mean) * (a - mean);
        syy += (b - mean) * (b - mean);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Correlation("degenerate ranking: all values tied".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Footnote formula on ranks, valid when there are no ties.
    fn rank_difference_formula(xs: &[f64], ys: &[f64]) -> f64 {
        let (rx, ry) = (average_ranks(xs), average_ranks(ys));
        let d2: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - b).powi(2)).sum();
        let n = xs.len() as f64;
        1.0 - 6.0 * d2 / (n * (n * n - 1.0))
    }

    #[test]
    fn perfect_and_reversed() {
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(spearman(&xs, &[10.0, 20.0, 30.0, 40.0, 50.0]).unwrap(), 1.0);
        assert_eq!(spearman(&xs, &[5.0, 4.0, 3.0, 2.0, 1.0]).unwrap(), -1.0);
    }

    #[test]
    fn one_swap() {
        let r = spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
        assert!((r - 0.8).abs() < 1e-12);
        assert!((rank_difference_formula(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]) - 0.8).abs() < 1e-12);
    }

    #[test]
    fn ties_get_average_rank() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
        // hand computed: ranks x=(1,2.5,2.5,4), y=(1,2,3,4)
        let r = spearman(&[1.0, 2.0, 2.0, 3.0], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        let expect = 4.5 / (4.5f64 * 5.0).sqrt();
        assert!((r - expect).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        assert!(spearman(&[1.0, 2.0], &[1.0]).is_err());
        assert!(spearman(&[1.0], &[1.0]).is_err());
        assert!(matches!(spearman(&[2.0, 2.0, 2.0], &[1.0, 2.0, 3.0]), Err(Error::Correlation(_))));
    }

    proptest! {
        #[test]
        fn agrees_with_rank_difference_formula(v in proptest::collection::btree_set(-1000i32..1000, 2..30), seed in any::<u64>()) {
            let xs: Vec<f64> = v.iter().map(|&a| a as f64).collect();
            let mut ys = xs.clone();
            // deterministic shuffle
            let mut s = seed;
            for i in (1..ys.len()).rev() {
                s = crate::seed::splitmix64(s);
                ys.swap(i, (s % (i as u64 + 1)) as usize);
            }
            let a = spearman(&xs, &ys).unwrap();
            prop_assert!((a - rank_difference_formula(&xs, &ys)).abs() < 1e-9);
        }

        #[test]
        fn monotone_transform_invariant(xs in proptest::collection::vec(-50.0f64..50.0, 3..20), ys in proptest::collection::vec(-50.0f64..50.0, 3..20)) {
            let n = xs.len().min(ys.len());
            let (xs, ys) = (&xs[..n], &ys[..n]);
            let tx: Vec<f64> = xs.iter().map(|v| (v / 10.0).exp() * 3.0 + 1.0).collect();
            let ty: Vec<f64> = ys.iter().map(|v| v * v * v - 4.0).collect();
            match (spearman(xs, ys), spearman(&tx, &ty)) {
                (Ok(a), Ok(b)) => prop_assert_eq!(a, b),
                (Err(_), Err(_)) => {}
                other => prop_assert!(false, "mismatch {:?}", other),
            }
        }

        #[test]
        fn bounded(xs in proptest::collection::vec(-5.0f64..5.0, 2..15), ys in proptest::collection::vec(-5.0f64..5.0, 2..15)) {
            let n = xs.len().min(ys.len());
            if let Ok(r) = spearman(&xs[..n], &ys[..n]) {
                prop_assert!((-1.0..=1.0).contains(&r));
            }
        }
    }
}
