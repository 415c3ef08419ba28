//! Strictly increasing multi-indices, in lexicographic order.

pub fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
}

/// All strictly increasing `k`-subsets of `0..m`, lexicographically sorted.
pub fn combinations(m: usize, k: usize) -> Vec<Vec<usize>> {
    fn go(start: usize, m: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..m {
            cur.push(i);
            go(i + 1, m, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::with_capacity(binomial(m, k));
    go(0, m, k, &mut Vec::with_capacity(k), &mut out);
    out
}

/// Position of an increasing multi-index in [`combinations`]`(m, idx.len())`.
pub fn rank(m: usize, idx: &[usize]) -> usize {
    // Count the subsets that precede `idx` lexicographically.
    let k = idx.len();
    let mut r = 0;
    let mut prev = 0;
    for (pos, &v) in idx.iter().enumerate() {
        for skipped in prev..v {
            r += binomial(m - skipped - 1, k - pos - 1);
        }
        prev = v + 1;
    }
    r
}

/// Sorts `idx`, returning the sign of the sorting permutation, or `None` when
/// an index repeats.
pub fn normalize(idx: &[usize]) -> Option<(Vec<usize>, f64)> {
    let mut v = idx.to_vec();
    let mut sign = 1.0;
    for i in 1..v.len() {
        let mut j = i;
        while j > 0 && v[j - 1] > v[j] {
            v.swap(j - 1, j);
            sign = -sign;
            j -= 1;
        }
    }
    if v.windows(2).any(|w| w[0] == w[1]) {
        None
    } else {
        Some((v, sign))
    }
}

/// Positions (in `combinations(m, k)`) of the multi-indices avoiding `skip`.
pub fn avoiding(m: usize, k: usize, skip: usize) -> Vec<usize> {
    combinations(m, k)
        .iter()
        .enumerate()
        .filter(|(_, c)| !c.contains(&skip))
        .map(|(i, _)| i)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_inverts_combinations() {
        for m in 2..=6 {
            for k in 0..=m.min(4) {
                let all = combinations(m, k);
                assert_eq!(all.len(), binomial(m, k));
                for (i, c) in all.iter().enumerate() {
                    assert_eq!(rank(m, c), i, "m={m} k={k} {c:?}");
                }
            }
        }
    }

    #[test]
    fn normalize_signs() {
        assert_eq!(normalize(&[2, 0, 1]), Some((vec![0, 1, 2], 1.0)));
        assert_eq!(normalize(&[1, 0]), Some((vec![0, 1], -1.0)));
        assert_eq!(normalize(&[3, 1, 3]), None);
    }
}
