pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

pub fn sd(xs: &[f64]) -> f64 {
    variance(xs).sqrt()
}

/// Population (divide-by-n) standard deviation.
pub fn pop_sd(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64).sqrt()
}

pub fn correlation(xs: &[f64], ys: &[f64]) -> f64 {
    let (mx, my) = (mean(xs), mean(ys));
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    sxy / (sxx * syy).sqrt()
}

pub fn expit(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Linear-interpolation quantile (R type 7) of already sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = h - lo as f64;
    if frac == 0.0 {
        sorted[lo]
    } else {
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    }
}

fn autocov(x: &[f64], m: f64, lag: usize) -> f64 {
    let n = x.len();
    x[..n - lag]
        .iter()
        .zip(&x[lag..])
        .map(|(a, b)| (a - m) * (b - m))
        .sum::<f64>()
        / n as f64
}

/// Effective sample size of equal-length chains stored back to back.
///
/// Autocorrelations are pooled across chains against the between/within
/// variance estimate and truncated with Geyer's initial monotone sequence.
/// Constant input returns the draw count.
pub fn ess(draws: &[f64], chains: usize) -> f64 {
    let total = draws.len();
    let chains = chains.max(1);
    let n = total / chains;
    if n < 4 {
        return total as f64;
    }
    let split: Vec<&[f64]> = (0..chains).map(|c| &draws[c * n..(c + 1) * n]).collect();
    let means: Vec<f64> = split.iter().map(|c| mean(c)).collect();
    let acov0: Vec<f64> = split.iter().zip(&means).map(|(c, &m)| autocov(c, m, 0)).collect();
    let nf = n as f64;
    let w = acov0.iter().map(|a| a * nf / (nf - 1.0)).sum::<f64>() / chains as f64;
    let b = if chains > 1 { nf * variance(&means) } else { 0.0 };
    let var_plus = (nf - 1.0) / nf * w + b / nf;
    if !(var_plus > 0.0) || !var_plus.is_finite() {
        return total as f64;
    }
    let rho = |lag: usize| -> f64 {
        let mean_acov = if lag == 0 {
            acov0.iter().sum::<f64>() / chains as f64
        } else {
            split
                .iter()
                .zip(&means)
                .map(|(c, &m)| autocov(c, m, lag))
                .sum::<f64>()
                / chains as f64
        };
        1.0 - (w - mean_acov) / var_plus
    };
    let mut sum = 0.0;
    let mut prev = f64::INFINITY;
    let mut lag = 0;
    while lag + 1 < n {
        let mut pair = rho(lag) + rho(lag + 1);
        if pair <= 0.0 {
            break;
        }
        pair = pair.min(prev);
        sum += pair;
        prev = pair;
        lag += 2;
    }
    let tau = -1.0 + 2.0 * sum;
    (total as f64 / tau.max(1.0 / (total as f64).log10().max(1.0))).max(1.0)
}

/// Split-chain potential scale reduction factor.
pub fn split_rhat(draws: &[f64], chains: usize) -> f64 {
    let chains = chains.max(1);
    let n = draws.len() / chains;
    let half = n / 2;
    if half < 2 {
        return f64::NAN;
    }
    let mut parts: Vec<&[f64]> = Vec::with_capacity(2 * chains);
    for c in 0..chains {
        let chain = &draws[c * n..(c + 1) * n];
        parts.push(&chain[..half]);
        parts.push(&chain[n - half..]);
    }
    let hf = half as f64;
    let means: Vec<f64> = parts.iter().map(|p| mean(p)).collect();
    let w = parts.iter().map(|p| variance(p)).sum::<f64>() / parts.len() as f64;
    let b = hf * variance(&means);
    if w == 0.0 {
        return if b == 0.0 { 1.0 } else { f64::INFINITY };
    }
    (((hf - 1.0) / hf * w + b / hf) / w).sqrt()
}
