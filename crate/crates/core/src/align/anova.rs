//! One-way ANOVA F statistic of a feature grouped by a binary label.

/// How an F value came about.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FFlag {
    Finite,
    /// Zero within-group variance with separated means: F is +inf.
    PerfectSeparation,
    /// Zero variance everywhere: no signal, F reported as 0.
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FResult {
    pub f: f64,
    pub flag: FFlag,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AnovaError {
    #[error("feature has {feature} values but there are {labels} labels")]
    LengthMismatch { feature: usize, labels: usize },
    #[error("both classes need at least one row and the data at least three rows")]
    TooFewRows,
}

/// F = (SSB / (k - 1)) / (SSW / (N - k)) with k = 2 groups.
pub fn f_statistic(feature: &[f64], labels: &[bool]) -> Result<FResult, AnovaError> {
    if feature.len() != labels.len() {
        return Err(AnovaError::LengthMismatch {
            feature: feature.len(),
            labels: labels.len(),
        });
    }
    let n = feature.len();
    let (mut n1, mut s1, mut n0, mut s0) = (0usize, 0.0, 0usize, 0.0);
    for (&x, &y) in feature.iter().zip(labels) {
        if y {
            n1 += 1;
            s1 += x;
        } else {
            n0 += 1;
            s0 += x;
        }
    }
    if n1 == 0 || n0 == 0 || n < 3 {
        return Err(AnovaError::TooFewRows);
    }
    let m1 = s1 / n1 as f64;
    let m0 = s0 / n0 as f64;
    let grand = (s1 + s0) / n as f64;
    let ssb = n1 as f64 * (m1 - grand).powi(2) + n0 as f64 * (m0 - grand).powi(2);
    let ssw: f64 = feature
        .iter()
        .zip(labels)
        .map(|(&x, &y)| (x - if y { m1 } else { m0 }).powi(2))
        .sum();
    let constant_within = |class: bool| {
        let mut vals = feature.iter().zip(labels).filter(|(_, &y)| y == class).map(|(x, _)| *x);
        let first = vals.next()?;
        vals.all(|x| x == first).then_some(first)
    };
    // Decided on the raw values, so rounding in the means cannot turn a
    // perfect separator into a huge finite F.
    if let (Some(a), Some(b)) = (constant_within(true), constant_within(false)) {
        return Ok(if a != b {
            FResult {
                f: f64::INFINITY,
                flag: FFlag::PerfectSeparation,
            }
        } else {
            FResult {
                f: 0.0,
                flag: FFlag::Constant,
            }
        });
    }
    Ok(FResult {
        f: ssb / (ssw / (n - 2) as f64),
        flag: FFlag::Finite,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separator_is_infinite() {
        let r = f_statistic(&[1.0, 1.0, 0.0, 0.0], &[true, true, false, false]).unwrap();
        assert_eq!(r.flag, FFlag::PerfectSeparation);
        assert!(r.f.is_infinite());
    }

    #[test]
    fn equal_means_give_zero() {
        let r = f_statistic(&[1.0, 0.0, 1.0, 0.0], &[true, true, false, false]).unwrap();
        assert_eq!(r.f, 0.0);
        assert_eq!(r.flag, FFlag::Finite);
    }

    #[test]
    fn hand_worked() {
        // groups [1,2,3] and [4,5]: means 2, 4.5; grand 3; SSB = 3*1 + 2*2.25 = 7.5;
        // SSW = 2 + 0.5 = 2.5; F = 7.5 / (2.5 / 3) = 9
        let r = f_statistic(&[1.0, 2.0, 3.0, 4.0, 5.0], &[true, true, true, false, false]).unwrap();
        assert!((r.f - 9.0).abs() < 1e-12);
    }

    #[test]
    fn single_class_rejected() {
        assert_eq!(f_statistic(&[1.0, 0.0, 1.0], &[true; 3]), Err(AnovaError::TooFewRows));
    }
}
