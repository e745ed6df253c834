//! Exact 0/1 and multiple-choice knapsack solvers on a fixed weight grid.
//!
//! Weights are fractions of one task slot. They are mapped to integers on a
//! grid of [`WEIGHT_SCALE`] units per slot, rounding weights up and the
//! capacity down, so a grid-feasible selection is always feasible for the true
//! weights. Rounding can only forgo value, never overfill the server.
//!
//! Ties between selections of equal value go to the smaller total grid
//! weight, then to the selection whose sorted index list is lexicographically
//! smallest (earlier items are preferred).

use crate::scalar::Real;

/// Grid units per unit of weight.
pub const WEIGHT_SCALE: f64 = 1e4;

/// One candidate trade: an offloading rate and the revenue it brings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KnapsackItem<T> {
    pub weight: T,
    pub value: T,
    /// Buyer the item belongs to.
    pub owner: usize,
    /// Unit price the option was quoted at.
    pub price: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection<T> {
    pub chosen: Vec<bool>,
    pub value: T,
    /// Sum of the true (unrounded) weights.
    pub weight: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupedSelection<T> {
    /// Chosen option per group, if any.
    pub choice: Vec<Option<usize>>,
    pub value: T,
    pub weight: T,
}

/// Weight in grid units, never below the true weight.
pub fn grid_weight<T: Real>(w: T) -> usize {
    let w = w.as_f64().max(0.0);
    // Nearest first: the product can land just off a whole unit.
    let mut g = (w * WEIGHT_SCALE).round();
    if g / WEIGHT_SCALE < w {
        g += 1.0;
    }
    g as usize
}

/// Capacity in grid units, never above the true capacity.
pub fn grid_capacity<T: Real>(c: T) -> usize {
    let c = c.as_f64();
    if !(c > 0.0) {
        return 0;
    }
    let mut g = (c * WEIGHT_SCALE).round();
    if g / WEIGHT_SCALE > c {
        g -= 1.0;
    }
    g.max(0.0) as usize
}

/// Exact-weight dynamic program over groups of options, processed last to first.
///
/// `options[g]` lists `(grid weight, value, option index)`; returns the chosen
/// option index per group.
fn solve_groups<T: Real>(options: &[Vec<(usize, T, usize)>], cap: usize) -> (Vec<Option<usize>>, T) {
    let n = options.len();
    let neg = T::neg_infinity();
    let mut next = vec![neg; cap + 1];
    next[0] = T::zero();
    let mut cur = vec![neg; cap + 1];
    // choice[g][w] = 1 + position in options[g], or 0 for "none".
    let mut choice: Vec<Vec<u16>> = Vec::with_capacity(n);
    for g in (0..n).rev() {
        let mut ch = vec![0u16; cap + 1];
        cur.copy_from_slice(&next);
        for (pos, &(w, v, _)) in options[g].iter().enumerate().rev() {
            if w > cap {
                continue;
            }
            for x in w..=cap {
                let cand = next[x - w] + v;
                // Options are visited from last to first, so `>=` leaves the
                // earliest option among equals; taking beats skipping on ties.
                if cand >= cur[x] && cand != neg {
                    cur[x] = cand;
                    ch[x] = (pos + 1) as u16;
                }
            }
        }
        choice.push(ch);
        std::mem::swap(&mut cur, &mut next);
    }
    choice.reverse();
    // `next` now holds the table for groups 0..n.
    let mut best_w = 0;
    for w in 1..=cap {
        if next[w] > next[best_w] {
            best_w = w;
        }
    }
    let value = next[best_w];
    let mut out = vec![None; n];
    let mut w = best_w;
    for g in 0..n {
        let c = choice[g][w];
        if c > 0 {
            let (wg, _, idx) = options[g][c as usize - 1];
            out[g] = Some(idx);
            w -= wg;
        }
    }
    (out, value)
}

/// Orders candidates by value descending, then grid weight, then index.
fn rank<T: Real>(va: T, wa: usize, ia: usize, vb: T, wb: usize, ib: usize) -> std::cmp::Ordering {
    vb.partial_cmp(&va)
        .unwrap_or(std::cmp::Ordering::Equal)
        .then(wa.cmp(&wb))
        .then(ia.cmp(&ib))
}

/// Size `m` such that any `m` of the candidates fit together and no `m + 1` do.
///
/// Each candidate is given as `(lightest, heaviest)` grid weight. When such an
/// `m` exists and all values are positive, an optimal selection is simply the
/// `m` most valuable candidates, which spares the dynamic program.
fn uniform_cardinality(spans: &[(usize, usize)], cap: usize) -> Option<usize> {
    let mut lo: Vec<usize> = spans.iter().map(|s| s.0).collect();
    lo.sort_unstable();
    let mut m = 0;
    let mut acc = 0usize;
    for &w in &lo {
        if acc + w > cap {
            break;
        }
        acc += w;
        m += 1;
    }
    let mut hi: Vec<usize> = spans.iter().map(|s| s.1).collect();
    hi.sort_unstable_by(|a, b| b.cmp(a));
    (hi[..m].iter().sum::<usize>() <= cap).then_some(m)
}

/// Maximises total value subject to total weight at most `capacity`.
pub fn solve_binary<T: Real>(items: &[KnapsackItem<T>], capacity: T) -> Selection<T> {
    let cap = grid_capacity(capacity);
    let grid: Vec<usize> = items.iter().map(|it| grid_weight(it.weight)).collect();
    let useful: Vec<usize> = (0..items.len()).filter(|&i| items[i].value > T::zero() && grid[i] <= cap).collect();

    let mut chosen = vec![false; items.len()];
    let weights: Vec<(usize, usize)> = useful.iter().map(|&i| (grid[i], grid[i])).collect();
    if let Some(m) = uniform_cardinality(&weights, cap) {
        let mut order = useful.clone();
        order.sort_by(|&a, &b| rank(items[a].value, grid[a], a, items[b].value, grid[b], b));
        for &i in &order[..m] {
            chosen[i] = true;
        }
    } else {
        let options: Vec<Vec<(usize, T, usize)>> = useful.iter().map(|&i| vec![(grid[i], items[i].value, 0)]).collect();
        let (pick, _) = solve_groups(&options, cap);
        for (k, &i) in useful.iter().enumerate() {
            chosen[i] = pick[k].is_some();
        }
    }
    let (mut value, mut weight) = (T::zero(), T::zero());
    for (it, &c) in items.iter().zip(&chosen) {
        if c {
            value += it.value;
            weight += it.weight;
        }
    }
    Selection { chosen, value, weight }
}

/// Options of one group that are not dominated by another option of the same group.
///
/// An option is dropped when another one is no heavier and worth at least as
/// much; of two identical options the earlier is kept.
fn undominated<T: Real>(group: &[KnapsackItem<T>], cap: usize) -> Vec<(usize, T, usize)> {
    let mut cands: Vec<(usize, T, usize)> = group
        .iter()
        .enumerate()
        .filter(|(_, o)| o.value > T::zero())
        .map(|(i, o)| (grid_weight(o.weight), o.value, i))
        .filter(|&(w, _, _)| w <= cap)
        .collect();
    cands.sort_by(|a, b| {
        a.0.cmp(&b.0)
            .then(b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal))
            .then(a.2.cmp(&b.2))
    });
    let mut out: Vec<(usize, T, usize)> = Vec::new();
    for c in cands {
        if out.last().is_none_or(|last| c.1 > last.1) {
            out.push(c);
        }
    }
    out.sort_by_key(|c| c.2);
    out
}

/// Chooses at most one option per group, maximising total value under the capacity.
pub fn solve_grouped<T: Real>(groups: &[Vec<KnapsackItem<T>>], capacity: T) -> GroupedSelection<T> {
    let cap = grid_capacity(capacity);
    let options: Vec<Vec<(usize, T, usize)>> = groups.iter().map(|g| undominated(g, cap)).collect();

    // Best option per group: highest value, then lighter, then earlier.
    let best: Vec<Option<(usize, T, usize)>> = options
        .iter()
        .map(|opts| {
            opts.iter().copied().fold(None, |acc: Option<(usize, T, usize)>, o| match acc {
                Some(b) if rank(b.1, b.0, b.2, o.1, o.0, o.2).is_le() => Some(b),
                _ => Some(o),
            })
        })
        .collect();
    let live: Vec<usize> = (0..options.len()).filter(|&g| !options[g].is_empty()).collect();
    let spans: Vec<(usize, usize)> = live
        .iter()
        .map(|&g| {
            let ws = options[g].iter().map(|o| o.0);
            (ws.clone().min().unwrap_or(0), ws.max().unwrap_or(0))
        })
        .collect();
    let choice = if let Some(m) = uniform_cardinality(&spans, cap) {
        let mut order = live.clone();
        order.sort_by(|&a, &b| {
            let (x, y) = (best[a].unwrap(), best[b].unwrap());
            rank(x.1, x.0, a, y.1, y.0, b)
        });
        let mut choice = vec![None; options.len()];
        for &g in &order[..m] {
            choice[g] = best[g].map(|o| o.2);
        }
        choice
    } else {
        solve_groups(&options, cap).0
    };

    let (mut value, mut weight) = (T::zero(), T::zero());
    for (g, c) in choice.iter().enumerate() {
        if let Some(i) = *c {
            value += groups[g][i].value;
            weight += groups[g][i].weight;
        }
    }
    GroupedSelection { choice, value, weight }
}
