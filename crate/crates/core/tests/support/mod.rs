//! Independent reference implementations used by the acceptance suite.
//!
//! Nothing here calls into the library's numerical code: edit distance is
//! evaluated straight from its recursive definition, and regressions are
//! solved with explicit dummy variables through double-double normal
//! equations.

#![allow(dead_code)]

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use twofloat::TwoFloat;

// ---------------------------------------------------------------------------
// Edit distance
// ---------------------------------------------------------------------------

/// OSA distance by direct recursion on prefix lengths; exponential time.
pub fn osa_recursive(a: &[char], b: &[char]) -> usize {
    fn d(a: &[char], b: &[char], i: usize, j: usize) -> usize {
        if i == 0 {
            return j;
        }
        if j == 0 {
            return i;
        }
        let cost = usize::from(a[i - 1] != b[j - 1]);
        let mut best = (d(a, b, i - 1, j) + 1)
            .min(d(a, b, i, j - 1) + 1)
            .min(d(a, b, i - 1, j - 1) + cost);
        if i > 1 && j > 1 && a[i - 1] == b[j - 2] && a[i - 2] == b[j - 1] {
            best = best.min(d(a, b, i - 2, j - 2) + 1);
        }
        best
    }
    d(a, b, a.len(), b.len())
}

/// The same recurrence, memoized so it handles headline-length strings.
pub fn osa_memo(a: &[char], b: &[char]) -> usize {
    fn d(a: &[char], b: &[char], i: usize, j: usize, memo: &mut HashMap<(usize, usize), usize>) -> usize {
        if i == 0 {
            return j;
        }
        if j == 0 {
            return i;
        }
        if let Some(&v) = memo.get(&(i, j)) {
            return v;
        }
        let cost = usize::from(a[i - 1] != b[j - 1]);
        let mut best = (d(a, b, i - 1, j, memo) + 1)
            .min(d(a, b, i, j - 1, memo) + 1)
            .min(d(a, b, i - 1, j - 1, memo) + cost);
        if i > 1 && j > 1 && a[i - 1] == b[j - 2] && a[i - 2] == b[j - 1] {
            best = best.min(d(a, b, i - 2, j - 2, memo) + 1);
        }
        memo.insert((i, j), best);
        best
    }
    d(a, b, a.len(), b.len(), &mut HashMap::new())
}

pub fn oracle_similarity(a: &str, b: &str) -> f64 {
    let (a, b): (Vec<char>, Vec<char>) = (a.chars().collect(), b.chars().collect());
    let longest = a.len().max(b.len());
    if longest == 0 {
        return 1.0;
    }
    1.0 - osa_memo(&a, &b) as f64 / longest as f64
}

/// Every string over `alphabet` with length at most `max_len`.
pub fn all_strings(alphabet: &[char], max_len: usize) -> Vec<Vec<char>> {
    let mut out = vec![Vec::new()];
    let mut frontier = vec![Vec::new()];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for s in &frontier {
            for &c in alphabet {
                let mut t = s.clone();
                t.push(c);
                next.push(t);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

// ---------------------------------------------------------------------------
// Synthetic panels
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct TestPanel {
    pub n_firms: usize,
    pub n_dates: usize,
    pub firm: Vec<usize>,
    pub date: Vec<usize>,
    pub y: Vec<f64>,
    /// Regressor columns.
    pub x: Vec<Vec<f64>>,
}

impl TestPanel {
    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn k(&self) -> usize {
        (self.n_firms - 1) + (self.n_dates - 1) + self.x.len() + 1
    }
}

fn connected(n_firms: usize, n_dates: usize, firm: &[usize], date: &[usize]) -> bool {
    // union-find over firm nodes 0..F and date nodes F..F+T
    let mut parent: Vec<usize> = (0..n_firms + n_dates).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    for (&f, &t) in firm.iter().zip(date) {
        let (a, b) = (find(&mut parent, f), find(&mut parent, n_firms + t));
        parent[a] = b;
    }
    let root = find(&mut parent, 0);
    (0..n_firms + n_dates).all(|i| find(&mut parent, i) == root)
}

/// Unbalanced panel with firm and date effects and `n_regressors` columns.
/// Roughly 20% of firm-date cells are missing; the bipartite firm-date
/// graph is kept connected so the dummy design has full rank.
pub fn random_panel(seed: u64) -> TestPanel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let n_firms = rng.gen_range(5..=20);
        let n_dates = rng.gen_range(5..=20);
        let p = rng.gen_range(1..=3);
        let mut firm = Vec::new();
        let mut date = Vec::new();
        for f in 0..n_firms {
            for t in 0..n_dates {
                if rng.gen_bool(0.8) {
                    firm.push(f);
                    date.push(t);
                }
            }
        }
        let n = firm.len();
        let k = (n_firms - 1) + (n_dates - 1) + p + 1;
        let covers = (0..n_firms).all(|f| firm.contains(&f)) && (0..n_dates).all(|t| date.contains(&t));
        if n <= k + 2 || !covers || !connected(n_firms, n_dates, &firm, &date) {
            continue;
        }
        let alpha: Vec<f64> = (0..n_firms).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let gamma: Vec<f64> = (0..n_dates).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let beta: Vec<f64> = (0..p).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let x: Vec<Vec<f64>> = (0..p)
            .map(|_| (0..n).map(|i| rng.gen_range(-1.0..1.0) + 0.3 * alpha[firm[i]]).collect())
            .collect();
        let y = (0..n)
            .map(|i| {
                let signal: f64 = (0..p).map(|j| beta[j] * x[j][i]).sum();
                alpha[firm[i]] + gamma[date[i]] + signal + rng.gen_range(-0.5..0.5)
            })
            .collect();
        return TestPanel {
            n_firms,
            n_dates,
            firm,
            date,
            y,
            x,
        };
    }
}

// ---------------------------------------------------------------------------
// Dummy-variable OLS in double-double arithmetic
// ---------------------------------------------------------------------------

type Dd = TwoFloat;

fn dd(v: f64) -> Dd {
    Dd::from(v)
}

/// Columns: regressors, firm dummies 1.., date dummies 1.., intercept.
fn dummy_design(panel: &TestPanel, with_regressors: bool) -> Vec<Vec<f64>> {
    let n = panel.n();
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let mut row = Vec::new();
        if with_regressors {
            row.extend(panel.x.iter().map(|c| c[i]));
        }
        row.extend((1..panel.n_firms).map(|f| f64::from(u8::from(panel.firm[i] == f))));
        row.extend((1..panel.n_dates).map(|t| f64::from(u8::from(panel.date[i] == t))));
        row.push(1.0);
        rows.push(row);
    }
    rows
}

/// Inverse by Gauss-Jordan elimination with partial pivoting.
fn invert(mut a: Vec<Vec<Dd>>) -> Vec<Vec<Dd>> {
    let m = a.len();
    let mut inv: Vec<Vec<Dd>> = (0..m)
        .map(|i| (0..m).map(|j| dd(if i == j { 1.0 } else { 0.0 })).collect())
        .collect();
    for col in 0..m {
        let pivot = (col..m)
            .max_by(|&r, &s| f64::from(a[r][col].abs()).total_cmp(&f64::from(a[s][col].abs())))
            .unwrap();
        assert!(f64::from(a[pivot][col].abs()) > 1e-12, "oracle design is singular");
        a.swap(col, pivot);
        inv.swap(col, pivot);
        let p = a[col][col];
        for j in 0..m {
            a[col][j] /= p;
            inv[col][j] /= p;
        }
        for r in 0..m {
            if r == col {
                continue;
            }
            let factor = a[r][col];
            if f64::from(factor) == 0.0 && factor.lo() == 0.0 {
                continue;
            }
            for j in 0..m {
                let (pa, pi) = (a[col][j], inv[col][j]);
                a[r][j] -= factor * pa;
                inv[r][j] -= factor * pi;
            }
        }
    }
    inv
}

pub struct OracleFit {
    pub beta: Vec<f64>,
    pub residuals: Vec<f64>,
    /// Rows of `(ZᵀZ)⁻¹Zᵀ` belonging to the regressors (p × n).
    influence: Vec<Vec<Dd>>,
    residuals_dd: Vec<Dd>,
    pub ssr: f64,
    /// Residual sum of squares of `y` on the fixed effects alone.
    pub sst_within: f64,
}

fn least_squares(z: &[Vec<f64>], y: &[f64]) -> (Vec<Dd>, Vec<Vec<Dd>>, Vec<Dd>) {
    let n = z.len();
    let m = z[0].len();
    let mut ztz = vec![vec![dd(0.0); m]; m];
    let mut zty = vec![dd(0.0); m];
    for i in 0..n {
        for a in 0..m {
            let za = dd(z[i][a]);
            zty[a] += za * dd(y[i]);
            for b in 0..m {
                ztz[a][b] += za * dd(z[i][b]);
            }
        }
    }
    let inv = invert(ztz);
    let coef: Vec<Dd> = (0..m)
        .map(|a| (0..m).fold(dd(0.0), |acc, b| acc + inv[a][b] * zty[b]))
        .collect();
    let resid: Vec<Dd> = (0..n)
        .map(|i| (0..m).fold(dd(y[i]), |acc, a| acc - dd(z[i][a]) * coef[a]))
        .collect();
    (coef, inv, resid)
}

pub fn dummy_ols(panel: &TestPanel) -> OracleFit {
    let z = dummy_design(panel, true);
    let (coef, inv, resid) = least_squares(&z, &panel.y);
    let p = panel.x.len();
    let m = z[0].len();
    let influence: Vec<Vec<Dd>> = (0..p)
        .map(|a| {
            (0..panel.n())
                .map(|i| (0..m).fold(dd(0.0), |acc, b| acc + inv[a][b] * dd(z[i][b])))
                .collect()
        })
        .collect();
    let ssr = resid.iter().fold(dd(0.0), |acc, &u| acc + u * u);
    let fe_only = dummy_design(panel, false);
    let (_, _, within_y) = least_squares(&fe_only, &panel.y);
    let sst = within_y.iter().fold(dd(0.0), |acc, &u| acc + u * u);
    OracleFit {
        beta: coef[..p].iter().map(|&c| f64::from(c)).collect(),
        residuals: resid.iter().map(|&u| f64::from(u)).collect(),
        influence,
        residuals_dd: resid,
        ssr: f64::from(ssr),
        sst_within: f64::from(sst),
    }
}

/// Brute-force one-way cluster sandwich `c · Σ_g s_g s_gᵀ` with
/// `s_g = Σ_{i∈g} a_i u_i` and `c = G/(G−1)·(N−1)/(N−K)`.
pub fn cluster_sandwich(fit: &OracleFit, labels: &[usize], k: usize) -> Vec<Vec<f64>> {
    let p = fit.influence.len();
    let n = labels.len();
    let mut groups: Vec<usize> = labels.to_vec();
    groups.sort_unstable();
    groups.dedup();
    let g = groups.len();
    let mut v = vec![vec![dd(0.0); p]; p];
    for &label in &groups {
        let s: Vec<Dd> = (0..p)
            .map(|a| {
                (0..n)
                    .filter(|&i| labels[i] == label)
                    .fold(dd(0.0), |acc, i| acc + fit.influence[a][i] * fit.residuals_dd[i])
            })
            .collect();
        for a in 0..p {
            for b in 0..p {
                v[a][b] += s[a] * s[b];
            }
        }
    }
    let c = (g as f64 / (g as f64 - 1.0)) * ((n as f64 - 1.0) / (n as f64 - k as f64));
    v.iter().map(|row| row.iter().map(|&e| f64::from(e) * c).collect()).collect()
}

/// Firm + date − firm×date, each with its own cluster count.
pub fn two_way_sandwich(fit: &OracleFit, panel: &TestPanel, k: usize) -> Vec<Vec<f64>> {
    let vf = cluster_sandwich(fit, &panel.firm, k);
    let vd = cluster_sandwich(fit, &panel.date, k);
    let both: Vec<usize> = panel
        .firm
        .iter()
        .zip(&panel.date)
        .map(|(&f, &t)| f * panel.n_dates + t)
        .collect();
    let vfd = cluster_sandwich(fit, &both, k);
    let p = vf.len();
    (0..p)
        .map(|a| (0..p).map(|b| vf[a][b] + vd[a][b] - vfd[a][b]).collect())
        .collect()
}

pub struct OracleStats {
    pub r2: f64,
    pub adj_r2: f64,
    pub aic: f64,
    pub bic: f64,
}

pub fn fit_formulas(fit: &OracleFit, n: usize, k: usize) -> OracleStats {
    let (nf, kf) = (n as f64, k as f64);
    let r2 = 1.0 - fit.ssr / fit.sst_within;
    OracleStats {
        r2,
        adj_r2: 1.0 - (1.0 - r2) * (nf - 1.0) / (nf - kf),
        aic: nf * (fit.ssr / nf).ln() + 2.0 * kf,
        bic: nf * (fit.ssr / nf).ln() + kf * nf.ln(),
    }
}

/// Largest entrywise gap relative to the largest reference entry.
pub fn relative_gap(a: &[Vec<f64>], reference: &[Vec<f64>]) -> f64 {
    let scale = reference
        .iter()
        .flatten()
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(f64::MIN_POSITIVE);
    a.iter()
        .flatten()
        .zip(reference.iter().flatten())
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
        / scale
}

// ---------------------------------------------------------------------------
// Scoring fixture
// ---------------------------------------------------------------------------

pub const RIMINI_COMPANY: &str = "Oracle";
pub const RIMINI_HEADLINE: &str = "Rimini Street Fined $630,000 in Case Against Oracle";
pub const RIMINI_REPLY: &str = "YES\n\nThe fine against Rimini Street could potentially boost investor confidence \
in Oracle's ability to protect its intellectual property and increase demand for its products and services.";
