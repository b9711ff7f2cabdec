use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Minimum SSE over every assignment of `codes` to exactly `k` nonempty clusters.
pub fn optimal_inertia(codes: &[Vec<f64>], k: usize) -> f64 {
    let n = codes.len();
    let dim = codes[0].len();
    let mut best = f64::INFINITY;
    let mut labels = vec![0usize; n];
    loop {
        let mut counts = vec![0usize; k];
        labels.iter().for_each(|&l| counts[l] += 1);
        if counts.iter().all(|&c| c > 0) {
            let mut sse = 0.0;
            for c in 0..k {
                let members: Vec<&Vec<f64>> = codes.iter().zip(&labels).filter(|(_, &l)| l == c).map(|(z, _)| z).collect();
                for d in 0..dim {
                    let mean = members.iter().map(|z| z[d]).sum::<f64>() / members.len() as f64;
                    sse += members.iter().map(|z| (z[d] - mean).powi(2)).sum::<f64>();
                }
            }
            best = best.min(sse);
        }
        // odometer over k^n assignments
        let mut i = 0;
        while i < n {
            labels[i] += 1;
            if labels[i] < k {
                break;
            }
            labels[i] = 0;
            i += 1;
        }
        if i == n {
            return best;
        }
    }
}

pub fn random_codes(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
}

/// `k` tight blobs of points whose centers are far apart relative to their spread.
pub fn separated_instance(rng: &mut ChaCha8Rng) -> (Vec<Vec<f64>>, usize) {
    let n = rng.random_range(1..=8);
    let k = rng.random_range(1..=3.min(n));
    let dim = rng.random_range(1..=3);
    let centers: Vec<Vec<f64>> = (0..k).map(|c| (0..dim).map(|d| if d == 0 { 100.0 * c as f64 } else { 0.0 }).collect()).collect();
    let codes = (0..n)
        .map(|i| {
            // the first k points seed every blob
            let c = if i < k { i } else { rng.random_range(0..k) };
            centers[c].iter().map(|x| x + rng.random_range(-1.0..1.0)).collect()
        })
        .collect();
    (codes, k)
}

/// Argmax s1, then s2, then lowest position, all evaluated by plain loops.
pub fn brute_force_choice(bank: &[Vec<usize>], labels: &[usize], codes: &[Vec<f64>]) -> usize {
    let score = |p: &Vec<usize>| {
        let mut distinct: Vec<usize> = p.iter().map(|&i| labels[i]).collect();
        distinct.sort();
        distinct.dedup();
        let mut s2 = 0.0;
        for &a in p {
            for &b in p {
                s2 += codes[a].iter().zip(&codes[b]).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            }
        }
        (distinct.len(), s2)
    };
    let mut best = 0;
    for i in 1..bank.len() {
        let (a, b) = (score(&bank[i]), score(&bank[best]));
        if a.0 > b.0 || (a.0 == b.0 && a.1 > b.1) {
            best = i;
        }
    }
    best
}

pub fn random_instance(rng: &mut ChaCha8Rng) -> (Vec<Vec<usize>>, Vec<usize>, Vec<Vec<f64>>) {
    let n = rng.random_range(2..=12);
    let k = rng.random_range(1..=n.min(5));
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(1..=k)).collect();
    // coarse integer codes make exact s2 ties common
    let codes: Vec<Vec<f64>> = (0..n).map(|_| (0..2).map(|_| rng.random_range(0..3) as f64).collect()).collect();
    let bank = (0..rng.random_range(1..=12))
        .map(|_| {
            let mut p = rand::seq::index::sample(rng, n, k).into_vec();
            p.sort();
            p
        })
        .collect();
    (bank, labels, codes)
}
