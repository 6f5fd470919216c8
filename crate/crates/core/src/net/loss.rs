use crate::cloud::FeatureMap;
use crate::error::{Error, Result};
use crate::real::Real;

/// Softmax cross-entropy averaged over rows (one row per point, or a single
/// row for a whole-cloud prediction). Returns the loss and its gradient with
/// respect to the logits.
pub fn softmax_xent<T: Real>(logits: &FeatureMap<T>, targets: &[u32]) -> Result<(T, FeatureMap<T>)> {
    let classes = logits.channels();
    if classes < 2 {
        return Err(Error::Shape(format!("{classes} classes, need at least 2")));
    }
    if targets.len() != logits.rows() || targets.is_empty() {
        return Err(Error::Shape(format!(
            "{} targets for {} logit rows",
            targets.len(),
            logits.rows()
        )));
    }
    if let Some(t) = targets.iter().find(|&&t| t as usize >= classes) {
        return Err(Error::InvalidArgument(format!("target {t} out of range for {classes} classes")));
    }
    let scale = T::one() / T::from_usize(logits.rows());
    let mut grad = FeatureMap::zeros(logits.rows(), classes);
    let mut loss = T::zero();
    for (r, &t) in targets.iter().enumerate() {
        let z = logits.row(r);
        let m = z.iter().copied().fold(T::neg_infinity(), T::max);
        let sum: T = z.iter().map(|&v| (v - m).exp()).sum();
        let log_sum = sum.ln();
        loss += log_sum - (z[t as usize] - m);
        for (c, g) in grad.row_mut(r).iter_mut().enumerate() {
            let p = (z[c] - m - log_sum).exp();
            let onehot = if c == t as usize { T::one() } else { T::zero() };
            *g = (p - onehot) * scale;
        }
    }
    Ok((loss * scale, grad))
}

/// Argmax per row; ties go to the lowest class id.
pub fn predict<T: Real>(logits: &FeatureMap<T>) -> Vec<u32> {
    (0..logits.rows())
        .map(|r| {
            let row = logits.row(r);
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            best as u32
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::XorShift64;

    #[test]
    fn symmetric_pair() {
        let z = FeatureMap::from_vec(1, 2, vec![0.0f64, 0.0]).unwrap();
        let (l, g) = softmax_xent(&z, &[0]).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(g.as_slice(), &[-0.5, 0.5]);
    }

    #[test]
    fn large_logits_do_not_overflow() {
        let z = FeatureMap::from_vec(1, 2, vec![1000.0f64, 0.0]).unwrap();
        let (l, g) = softmax_xent(&z, &[0]).unwrap();
        assert!(l.is_finite() && l.abs() < 1e-300);
        assert!(g.is_finite());
        let z32 = FeatureMap::from_vec(1, 2, vec![1000.0f32, -1000.0]).unwrap();
        let (l, _) = softmax_xent(&z32, &[1]).unwrap();
        assert!((l - 2000.0).abs() < 1e-3);
    }

    #[test]
    fn errors() {
        let z = FeatureMap::from_vec(1, 2, vec![0.0f64, 0.0]).unwrap();
        assert!(softmax_xent(&z, &[2]).is_err());
        assert!(softmax_xent(&z, &[0, 1]).is_err());
        let one = FeatureMap::from_vec(1, 1, vec![0.0f64]).unwrap();
        assert!(softmax_xent(&one, &[0]).is_err());
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = XorShift64::new(21);
        for _ in 0..10 {
            let rows = 1 + rng.below(5);
            let classes = 2 + rng.below(4);
            let z = FeatureMap::from_fn(rows, classes, |_, _| rng.uniform(-3.0, 3.0));
            let t: Vec<u32> = (0..rows).map(|_| rng.below(classes) as u32).collect();
            let (_, g) = softmax_xent(&z, &t).unwrap();
            let h = 1e-5;
            for at in 0..z.as_slice().len() {
                let mut zp = z.clone();
                zp.as_mut_slice()[at] += h;
                let mut zm = z.clone();
                zm.as_mut_slice()[at] -= h;
                let num = (softmax_xent(&zp, &t).unwrap().0 - softmax_xent(&zm, &t).unwrap().0) / (2.0 * h);
                assert!((num - g.as_slice()[at]).abs() < 1e-7, "{num} vs {}", g.as_slice()[at]);
            }
        }
    }

    #[test]
    fn argmax() {
        let z = FeatureMap::from_vec(3, 3, vec![0.0f32, 2.0, 1.0, 5.0, 5.0, 0.0, -1.0, -2.0, -0.5]).unwrap();
        assert_eq!(predict(&z), vec![1, 0, 2]);
    }
}
