//! Probability-simplex helpers: Euclidean projection and lattice points.

/// Euclidean projection of `y` onto the probability simplex
/// `{x : x ≥ 0, Σx = 1}` (sort-based, O(n log n)).
pub fn project_simplex(y: &[f64]) -> Vec<f64> {
    let n = y.len();
    assert!(n > 0, "cannot project onto an empty simplex");
    let mut u = y.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (i, &ui) in u.iter().enumerate() {
        cumsum += ui;
        let t = (cumsum - 1.0) / (i + 1) as f64;
        if ui - t > 0.0 {
            theta = t;
        }
    }
    let mut x: Vec<f64> = y.iter().map(|&v| (v - theta).max(0.0)).collect();
    // absorb rounding so rows sum to one within 1e-15
    let sum: f64 = x.iter().sum();
    if sum > 0.0 {
        x.iter_mut().for_each(|v| *v /= sum);
    } else {
        x = vec![1.0 / n as f64; n];
    }
    x
}

/// `C(n, k)` in `u128`, saturating at `u128::MAX`.
pub fn binomial(n: u64, k: u64) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = match acc.checked_mul((n - i) as u128) {
            Some(v) => v / (i + 1) as u128,
            None => return u128::MAX,
        };
    }
    acc
}

/// Number of ways to write `total` as an ordered sum of `parts` non-negative
/// integers.
pub fn count_compositions(total: usize, parts: usize) -> u128 {
    if parts == 0 {
        return u128::from(total == 0);
    }
    binomial((total + parts - 1) as u64, (parts - 1) as u64)
}

/// Every composition of `total` into `parts` non-negative integers, in
/// increasing lexicographic order.
#[derive(Debug, Clone)]
pub struct Compositions {
    current: Option<Vec<usize>>,
    total: usize,
}

impl Compositions {
    pub fn new(total: usize, parts: usize) -> Compositions {
        assert!(parts > 0, "compositions need at least one part");
        let mut first = vec![0; parts];
        first[parts - 1] = total;
        Compositions {
            current: Some(first),
            total,
        }
    }
}

impl Iterator for Compositions {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        let out = self.current.take()?;
        // successor: bump the slot just left of the last non-zero entry and
        // push the remaining mass to the end
        if let Some(m) = out.iter().rposition(|&v| v > 0).filter(|&m| m > 0) {
            let mut next = out.clone();
            let j = m - 1;
            next[j] += 1;
            let used: usize = next[..=j].iter().sum();
            next[j + 1..].iter_mut().for_each(|v| *v = 0);
            let last = next.len() - 1;
            next[last] = self.total - used;
            self.current = Some(next);
        }
        Some(out)
    }
}

/// Points of the simplex lattice `{k / (resolution - 1)}` in dimension
/// `parts`, in the order of [`Compositions`].
pub fn lattice_points(resolution: usize, parts: usize) -> Vec<Vec<f64>> {
    assert!(resolution >= 2, "resolution must be at least 2");
    let n = resolution - 1;
    Compositions::new(n, parts)
        .map(|c| c.into_iter().map(|k| k as f64 / n as f64).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projection_of_simplex_point_is_identity() {
        let x = project_simplex(&[0.2, 0.3, 0.5]);
        for (a, b) in x.iter().zip([0.2, 0.3, 0.5]) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn projection_clips_and_shifts() {
        assert_eq!(project_simplex(&[2.0, 0.0]), vec![1.0, 0.0]);
        let x = project_simplex(&[0.5, 0.5, -1.0]);
        assert_eq!(x, vec![0.5, 0.5, 0.0]);
        let x = project_simplex(&[1.0, 1.0]);
        assert_eq!(x, vec![0.5, 0.5]);
    }

    #[test]
    fn composition_counts() {
        assert_eq!(count_compositions(2, 2), 3);
        assert_eq!(count_compositions(2, 3), 6);
        assert_eq!(count_compositions(40, 2), 41);
        assert_eq!(count_compositions(0, 4), 1);
    }

    #[test]
    fn compositions_are_lexicographic_and_complete() {
        let all: Vec<_> = Compositions::new(2, 3).collect();
        assert_eq!(
            all,
            vec![
                vec![0, 0, 2],
                vec![0, 1, 1],
                vec![0, 2, 0],
                vec![1, 0, 1],
                vec![1, 1, 0],
                vec![2, 0, 0],
            ]
        );
        for (total, parts) in [(5, 1), (4, 2), (6, 3), (3, 5)] {
            let v: Vec<_> = Compositions::new(total, parts).collect();
            assert_eq!(v.len() as u128, count_compositions(total, parts));
            assert!(v.windows(2).all(|w| w[0] < w[1]));
            assert!(v.iter().all(|c| c.iter().sum::<usize>() == total));
        }
    }

    #[test]
    fn lattice_points_for_two_actions() {
        let p = lattice_points(3, 2);
        assert_eq!(p, vec![vec![0.0, 1.0], vec![0.5, 0.5], vec![1.0, 0.0]]);
    }

    #[test]
    fn binomial_saturates() {
        assert_eq!(binomial(10, 3), 120);
        assert_eq!(binomial(3, 5), 0);
        assert_eq!(binomial(400, 200), u128::MAX);
    }
}
