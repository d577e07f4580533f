//! Independent scalar reference implementations, written directly from the
//! textbook formulas on plain `Vec`s. They share no code with the library.
#![allow(dead_code)]

pub type Rows = Vec<Vec<f64>>;

fn column(rows: &Rows, k: usize) -> Vec<f64> {
    rows.iter().map(|r| r[k]).collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sd_population(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
}

/// Pearson r as cov / (sd·sd); 0 when either side is constant.
fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let (sa, sb) = (sd_population(a), sd_population(b));
    if sa == 0.0 || sb == 0.0 {
        return 0.0;
    }
    let (ma, mb) = (mean(a), mean(b));
    let cov = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - ma) * (y - mb))
        .sum::<f64>()
        / a.len() as f64;
    (cov / (sa * sb)).clamp(-1.0, 1.0)
}

/// CRITIC weights with the equal-weight fallback for total information
/// `<= 1e-12` and a single metric mapped to weight 1.
pub fn critic(rows: &Rows) -> Vec<f64> {
    let n = rows[0].len();
    if n == 1 {
        return vec![1.0];
    }
    let cols: Vec<Vec<f64>> = (0..n).map(|k| column(rows, k)).collect();
    let info: Vec<f64> = (0..n)
        .map(|k| {
            let mut conflict = 0.0;
            for j in 0..n {
                if j != k {
                    conflict += correlation(&cols[k], &cols[j]);
                }
            }
            sd_population(&cols[k]) * (1.0 - conflict / (n - 1) as f64)
        })
        .collect();
    let total: f64 = info.iter().sum();
    if total.is_nan() || total <= 1e-12 {
        return vec![1.0 / n as f64; n];
    }
    info.iter().map(|i| i / total).collect()
}

pub fn topsis(rows: &Rows, weights: &[f64]) -> Vec<f64> {
    let n = weights.len();
    let norms: Vec<f64> = (0..n)
        .map(|k| rows.iter().map(|r| r[k] * r[k]).sum::<f64>().sqrt())
        .collect();
    let v: Rows = rows
        .iter()
        .map(|r| {
            (0..n)
                .map(|k| {
                    if norms[k] == 0.0 {
                        0.0
                    } else {
                        weights[k] * r[k] / norms[k]
                    }
                })
                .collect()
        })
        .collect();
    let best: Vec<f64> = (0..n)
        .map(|k| column(&v, k).into_iter().fold(f64::MIN, f64::max))
        .collect();
    let worst: Vec<f64> = (0..n)
        .map(|k| column(&v, k).into_iter().fold(f64::MAX, f64::min))
        .collect();
    v.iter()
        .map(|r| {
            let dist = |target: &[f64]| {
                r.iter()
                    .zip(target)
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt()
            };
            let (plus, minus) = (dist(&best), dist(&worst));
            if plus + minus == 0.0 {
                0.5
            } else {
                minus / (plus + minus)
            }
        })
        .collect()
}

/// `-Σ p ln p` of the normalized loss trace (0 for an all-zero trace).
pub fn loss_entropy(losses: &[f64]) -> f64 {
    let total: f64 = losses.iter().sum();
    if total == 0.0 {
        return 0.0;
    }
    -losses
        .iter()
        .filter(|&&l| l > 0.0)
        .map(|l| (l / total) * (l / total).ln())
        .sum::<f64>()
}

pub fn label_entropy(counts: &[u64]) -> f64 {
    let total: u64 = counts.iter().sum();
    let t = total as f64;
    let s: f64 = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| (c as f64 / t) * (c as f64 / t).ln())
        .sum();
    (-t.ln() * s).max(0.0)
}

pub fn gini_simpson(counts: &[u64]) -> f64 {
    let t: u64 = counts.iter().sum();
    1.0 - counts
        .iter()
        .map(|&c| (c as f64 / t as f64).powi(2))
        .sum::<f64>()
}

/// Plain FedAvg of flattened parameter vectors.
pub fn fedavg(vectors: &[Vec<f64>], volumes: &[f64]) -> Vec<f64> {
    let total: f64 = volumes.iter().sum();
    let mut out = vec![0.0; vectors[0].len()];
    for (v, &w) in vectors.iter().zip(volumes) {
        for (o, x) in out.iter_mut().zip(v) {
            *o += w / total * x;
        }
    }
    out
}

/// LoRA trainable parameters of a dense layer: `A`, `B` and the bias.
pub fn lora_params(input: usize, output: usize, rank: usize) -> usize {
    rank * input + output * rank + output
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Every `rows × cols` matrix with entries in `0..=max`, in odometer order.
pub fn integer_grid(rows: usize, cols: usize, max: u32) -> impl Iterator<Item = Rows> {
    let cells = rows * cols;
    let count = (max as usize + 1).pow(cells as u32);
    (0..count).map(move |mut code| {
        let mut flat = Vec::with_capacity(cells);
        for _ in 0..cells {
            flat.push((code % (max as usize + 1)) as f64);
            code /= max as usize + 1;
        }
        flat.chunks(cols).map(<[f64]>::to_vec).collect()
    })
}
