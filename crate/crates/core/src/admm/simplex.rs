use crate::{Error, Result};

/// Euclidean projection of `d` onto the probability simplex
/// `{u : u >= 0, sum(u) = 1}` by the sort-and-threshold method:
/// `u = [d - nu]+` where `nu` is the root of `sum([d - nu]+) = 1`.
pub fn simplex_project(d: &[f64]) -> Result<Vec<f64>> {
    if d.is_empty() {
        return Err(Error::Infeasible("cannot project an empty vector".into()));
    }
    if let Some(bad) = d.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("simplex projection input {bad}")));
    }
    let nu = threshold(d);
    Ok(d.iter().map(|&v| (v - nu).max(0.0)).collect())
}

/// The threshold `nu` for [`simplex_project`].
pub fn simplex_threshold(d: &[f64]) -> Result<f64> {
    if d.is_empty() {
        return Err(Error::Infeasible("cannot project an empty vector".into()));
    }
    if let Some(bad) = d.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("simplex projection input {bad}")));
    }
    Ok(threshold(d))
}

fn threshold(d: &[f64]) -> f64 {
    let mut sorted = d.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).expect("inputs checked finite"));
    let mut prefix = 0.0;
    let mut nu = 0.0;
    for (i, &v) in sorted.iter().enumerate() {
        prefix += v;
        let candidate = (prefix - 1.0) / (i + 1) as f64;
        if v - candidate > 0.0 {
            nu = candidate;
        } else {
            break;
        }
    }
    nu
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Independent oracle: bisection on the monotone decreasing function
    /// `g(nu) = sum([d - nu]+) - 1`.
    fn bisection_project(d: &[f64]) -> Vec<f64> {
        let lo0 = d.iter().cloned().fold(f64::INFINITY, f64::min) - 1.0;
        let hi0 = d.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let g = |nu: f64| d.iter().map(|&v| (v - nu).max(0.0)).sum::<f64>() - 1.0;
        let (mut lo, mut hi) = (lo0, hi0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if g(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let nu = 0.5 * (lo + hi);
        d.iter().map(|&v| (v - nu).max(0.0)).collect()
    }

    #[test]
    fn already_on_simplex_is_fixed() {
        assert_eq!(simplex_project(&[0.5, 0.5]).unwrap(), vec![0.5, 0.5]);
        let u = simplex_project(&[0.25; 4]).unwrap();
        assert_eq!(u, vec![0.25; 4]);
    }

    #[test]
    fn two_point_example() {
        let u = simplex_project(&[2.0, 0.0]).unwrap();
        assert!((u[0] - 1.0).abs() < 1e-12);
        assert_eq!(u[1], 0.0);
        assert!((simplex_threshold(&[2.0, 0.0]).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn three_point_example() {
        let u = simplex_project(&[0.6, 0.4, 0.2]).unwrap();
        let want = [8.0 / 15.0, 5.0 / 15.0, 2.0 / 15.0];
        for (a, b) in u.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
        let nu = simplex_threshold(&[0.6, 0.4, 0.2]).unwrap();
        assert!((nu - 1.0 / 15.0).abs() < 1e-12);
    }

    #[test]
    fn singleton_projects_to_one() {
        assert_eq!(simplex_project(&[-3.5]).unwrap(), vec![1.0]);
    }

    #[test]
    fn non_finite_inputs_are_rejected() {
        assert!(simplex_project(&[f64::NAN, 0.0]).is_err());
        assert!(simplex_project(&[f64::INFINITY]).is_err());
        assert!(simplex_project(&[]).is_err());
    }

    proptest! {
        #[test]
        fn matches_bisection_oracle(
            d in proptest::collection::vec(-10.0f64..10.0, 1..40)
        ) {
            let got = simplex_project(&d).unwrap();
            let want = bisection_project(&d);
            let sum: f64 = got.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-9);
            prop_assert!(got.iter().all(|&v| v >= 0.0));
            for (a, b) in got.iter().zip(&want) {
                prop_assert!((a - b).abs() < 1e-9, "{} vs {}", a, b);
            }
        }
    }
}
