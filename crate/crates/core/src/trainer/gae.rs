//! Generalized advantage estimation over one rollout segment of one
//! environment.

use crate::error::{Error, Result};

/// Advantages and returns for a segment.
///
/// `values[t]` is the critic estimate at step `t` and `bootstrap` the
/// estimate for the observation after the last step. At a terminated step
/// the future is worth zero; at a truncated step it is worth
/// `final_values[t]`, the critic estimate of the episode's last
/// observation. The recursion never crosses an episode boundary.
#[allow(clippy::too_many_arguments)]
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    bootstrap: f64,
    terminated: &[bool],
    truncated: &[bool],
    final_values: &[f64],
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = rewards.len();
    if values.len() != n || terminated.len() != n || truncated.len() != n || final_values.len() != n {
        return Err(Error::Input(format!(
            "GAE inputs disagree in length: rewards {n}, values {}, terminated {}, truncated {}, final values {}",
            values.len(),
            terminated.len(),
            truncated.len(),
            final_values.len()
        )));
    }
    let mut adv = vec![0.0; n];
    let mut carry = 0.0;
    for t in (0..n).rev() {
        let (next_value, cut) = if terminated[t] {
            (0.0, true)
        } else if truncated[t] {
            (final_values[t], true)
        } else if t + 1 < n {
            (values[t + 1], false)
        } else {
            (bootstrap, false)
        };
        let delta = rewards[t] + gamma * next_value - values[t];
        if cut {
            carry = 0.0;
        }
        carry = delta + gamma * lambda * carry;
        adv[t] = carry;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}

/// Shifts and scales to zero mean and unit standard deviation.
pub fn normalize_advantages(adv: &mut [f64]) {
    if adv.is_empty() {
        return;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let std = var.sqrt() + 1e-8;
    for a in adv.iter_mut() {
        *a = (*a - mean) / std;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_step_td() {
        let (a, r) = compute_gae(&[1.0], &[0.0], 5.0, &[true], &[false], &[0.0], 0.99, 0.0).unwrap();
        assert_eq!(a, vec![1.0]);
        assert_eq!(r, vec![1.0]);
    }

    #[test]
    fn undiscounted_returns() {
        let (a, _) = compute_gae(
            &[1.0; 3],
            &[0.0; 3],
            0.0,
            &[false, false, true],
            &[false; 3],
            &[0.0; 3],
            1.0,
            1.0,
        )
        .unwrap();
        assert_eq!(a, vec![3.0, 2.0, 1.0]);
    }

    #[test]
    fn truncation_bootstraps_final_value() {
        let (a, _) =
            compute_gae(&[1.0, 0.0], &[0.0, 0.0], 9.0, &[false, false], &[true, false], &[2.0, 0.0], 0.5, 1.0)
                .unwrap();
        assert_eq!(a, vec![2.0, 4.5]);
    }

    #[test]
    fn length_mismatch() {
        assert!(matches!(
            compute_gae(&[1.0], &[], 0.0, &[false], &[false], &[0.0], 0.9, 0.9),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn normalization() {
        let mut a: Vec<f64> = (0..100).map(|i| (i as f64).sin() * 3.0 + 1.0).collect();
        normalize_advantages(&mut a);
        let m = a.iter().sum::<f64>() / 100.0;
        let s = (a.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / 100.0).sqrt();
        assert!(m.abs() < 1e-6);
        assert!((s - 1.0).abs() < 1e-3);
    }
}
