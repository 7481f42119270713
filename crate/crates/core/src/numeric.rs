//! Small numerical helpers shared by the estimation modules.

use nalgebra::{DMatrix, SymmetricEigen};

/// `log(sum(exp(v)))` with the usual max shift. Returns `-inf` for an empty
/// slice or when every entry is `-inf`.
pub fn logsumexp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Nodes and weights of the `k`-point Gauss-Hermite rule for the standard
/// normal density (probabilists' convention), via Golub-Welsch. Nodes are
/// ascending and weights sum to one.
pub fn gauss_hermite(k: usize) -> (Vec<f64>, Vec<f64>) {
    if k == 0 {
        return (vec![], vec![]);
    }
    let jacobi = DMatrix::from_fn(k, k, |r, c| if r + 1 == c || c + 1 == r { (r.max(c) as f64).sqrt() } else { 0.0 });
    let eig = SymmetricEigen::new(jacobi);
    let mut pairs: Vec<(f64, f64)> = (0..k).map(|j| (eig.eigenvalues[j], eig.eigenvectors[(0, j)].powi(2))).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    let mut nodes: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    // exact symmetry
    for j in 0..k / 2 {
        let m = 0.5 * (nodes[k - 1 - j] - nodes[j]);
        nodes[j] = -m;
        nodes[k - 1 - j] = m;
    }
    if k % 2 == 1 {
        nodes[k / 2] = 0.0;
    }
    (nodes, pairs.iter().map(|p| p.1 / total).collect())
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic child seed for a labelled sub-stream.
pub fn derive_seed(seed: u64, labels: &[u64]) -> u64 {
    labels.iter().fold(splitmix64(seed), |acc, &l| splitmix64(acc ^ splitmix64(l)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logsumexp_stable() {
        assert!((logsumexp(&[1000.0, 1000.0]) - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(logsumexp(&[]), f64::NEG_INFINITY);
        assert_eq!(logsumexp(&[f64::NEG_INFINITY, f64::NEG_INFINITY]), f64::NEG_INFINITY);
        assert!((logsumexp(&[-1.0, f64::NEG_INFINITY]) + 1.0).abs() < 1e-15);
    }

    #[test]
    fn hermite_rule_integrates_normal_moments() {
        for k in 1..=10 {
            let (x, w) = gauss_hermite(k);
            // E Z^(2m) = (2m-1)!!, exact for 2m <= 2k-1
            for m in 0..k {
                let moment: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(2 * m as i32)).sum();
                let expected: f64 = (1..=m).map(|j| (2 * j - 1) as f64).product();
                assert!((moment - expected).abs() < 1e-9 * expected.max(1.0), "k={k} m={m}");
            }
        }
        let (x, _) = gauss_hermite(3);
        assert!((x[2] - 3f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn derived_seeds_differ() {
        assert_ne!(derive_seed(1, &[0]), derive_seed(1, &[1]));
        assert_ne!(derive_seed(1, &[0, 1]), derive_seed(1, &[1, 0]));
        assert_eq!(derive_seed(7, &[3, 4]), derive_seed(7, &[3, 4]));
    }
}
