//! Real-valued water-filling under per-item bounds, and largest-remainder
//! (Hamilton) rounding to integers.

/// Distributes `target` in proportion to `weights`, subject to
/// `lo[i] <= x[i] <= hi[i]`.
///
/// Violators are clamped in rounds: when the total excess above the upper
/// bounds is at least the total deficit below the lower bounds the upper
/// violators are fixed, otherwise the lower ones, and the residual is shared
/// again among the free items. Free items with zero total weight share the
/// residual evenly. Requires `sum(lo) <= target <= sum(hi)`.
pub fn water_fill(weights: &[f64], target: f64, lo: &[f64], hi: &[f64]) -> Vec<f64> {
    let n = weights.len();
    assert!(lo.len() == n && hi.len() == n, "bound lengths");
    let mut fixed: Vec<Option<f64>> = vec![None; n];
    loop {
        let free: Vec<usize> = (0..n).filter(|&i| fixed[i].is_none()).collect();
        if free.is_empty() {
            break;
        }
        let assigned: f64 = fixed.iter().flatten().sum();
        let remaining = (target - assigned).max(0.0);
        let wsum: f64 = free.iter().map(|&i| weights[i]).sum();
        let share = |i: usize| {
            if wsum > 0.0 {
                weights[i] / wsum * remaining
            } else {
                remaining / free.len() as f64
            }
        };
        let mut over = 0.0;
        let mut under = 0.0;
        for &i in &free {
            let s = share(i);
            over += (s - hi[i]).max(0.0);
            under += (lo[i] - s).max(0.0);
        }
        if over == 0.0 && under == 0.0 {
            for &i in &free {
                fixed[i] = Some(share(i));
            }
            break;
        }
        for &i in &free {
            let s = share(i);
            if over >= under && s > hi[i] {
                fixed[i] = Some(hi[i]);
            } else if over < under && s < lo[i] {
                fixed[i] = Some(lo[i]);
            }
        }
    }
    fixed.into_iter().map(|v| v.unwrap_or(0.0)).collect()
}

/// Rounds fractional quotas to integers summing to `total`, flooring each and
/// handing the leftover units to the largest fractional parts (lower index
/// first on ties). Units never push an item above `hi`.
fn round_bounded(shares: &[f64], total: usize, lo: &[usize], hi: &[usize]) -> Vec<usize> {
    let mut out: Vec<usize> = shares
        .iter()
        .zip(lo.iter().zip(hi))
        .map(|(&s, (&l, &h))| (s.max(0.0).floor() as usize).clamp(l, h))
        .collect();
    let assigned: usize = out.iter().sum();
    if assigned >= total {
        return out;
    }
    let mut order: Vec<usize> = (0..shares.len()).collect();
    let frac = |i: usize| shares[i] - out[i] as f64;
    order.sort_by(|&a, &b| frac(b).total_cmp(&frac(a)).then(a.cmp(&b)));
    let mut left = total - assigned;
    // more than one pass only when float error left several units
    while left > 0 {
        let mut progressed = false;
        for &i in &order {
            if left == 0 {
                break;
            }
            if out[i] < hi[i] {
                out[i] += 1;
                left -= 1;
                progressed = true;
            }
        }
        if !progressed {
            break;
        }
    }
    out
}

/// Hamilton apportionment of `total` units by `weights`.
pub fn largest_remainder(weights: &[f64], total: usize) -> Vec<usize> {
    let n = weights.len();
    if n == 0 {
        return Vec::new();
    }
    bounded_apportion(weights, total, &vec![0; n], &vec![total; n])
}

/// Integer apportionment of `min(total, sum(hi))` units by `weights` within
/// `[lo, hi]`: water-filling followed by largest-remainder rounding.
/// Requires `sum(lo) <= total`.
pub fn bounded_apportion(weights: &[f64], total: usize, lo: &[usize], hi: &[usize]) -> Vec<usize> {
    let target = total.min(hi.iter().sum());
    let lo_f: Vec<f64> = lo.iter().map(|&v| v as f64).collect();
    let hi_f: Vec<f64> = hi.iter().map(|&v| v as f64).collect();
    let shares = water_fill(weights, target as f64, &lo_f, &hi_f);
    round_bounded(&shares, target, lo, hi)
}
