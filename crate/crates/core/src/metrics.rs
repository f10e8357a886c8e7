//! MUC, B³, and CEAF_φ4 scorers with corpus-level aggregation.

use std::collections::HashMap;

use num_rational::Ratio;
use num_traits::{CheckedAdd, CheckedDiv, CheckedMul, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

/// Clusters of mention ids. Clusters are assumed disjoint and non-empty.
pub type Partition = Vec<Vec<usize>>;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    #[serde(rename = "p")]
    pub precision: f64,
    #[serde(rename = "r")]
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    pub fn new(precision: f64, recall: f64) -> Self {
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Prf {
            precision,
            recall,
            f1,
        }
    }

    fn from_counts(p_num: f64, p_den: f64, r_num: f64, r_den: f64) -> Self {
        let ratio = |n: f64, d: f64| if d > 0.0 { n / d } else { 0.0 };
        Prf::new(ratio(p_num, p_den), ratio(r_num, r_den))
    }
}

fn cluster_index(p: &[Vec<usize>]) -> HashMap<usize, usize> {
    p.iter()
        .enumerate()
        .flat_map(|(ci, c)| c.iter().map(move |&m| (m, ci)))
        .collect()
}

/// Link-based counts for one direction: `Σ (|k| - |parts(k)|)` and `Σ (|k| - 1)`,
/// where mentions missing from `other` each form their own part.
fn muc_direction(key: &[Vec<usize>], other: &[Vec<usize>]) -> (u64, u64) {
    let idx = cluster_index(other);
    let mut num = 0;
    let mut den = 0;
    for k in key {
        let mut parts = std::collections::HashSet::new();
        let mut missing = 0;
        for m in k {
            match idx.get(m) {
                Some(&c) => {
                    parts.insert(c);
                }
                None => missing += 1,
            }
        }
        num += (k.len() - parts.len() - missing) as u64;
        den += k.len() as u64 - 1;
    }
    (num, den)
}

/// Numerators and denominators of all three metrics, summable across documents.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Counts {
    pub muc: [f64; 4],
    pub b3: [f64; 4],
    pub ceaf: [f64; 4],
}

impl Counts {
    pub fn of(gold: &[Vec<usize>], sys: &[Vec<usize>]) -> Self {
        let (mr_n, mr_d) = muc_direction(gold, sys);
        let (mp_n, mp_d) = muc_direction(sys, gold);
        let (bp_n, bp_d) = b3_direction(sys, gold);
        let (br_n, br_d) = b3_direction(gold, sys);
        let phi = ceaf_similarity_total(gold, sys);
        Counts {
            muc: [mp_n as f64, mp_d as f64, mr_n as f64, mr_d as f64],
            b3: [ratio_to_f64(&bp_n), bp_d as f64, ratio_to_f64(&br_n), br_d as f64],
            ceaf: [phi, sys.len() as f64, phi, gold.len() as f64],
        }
    }

    pub fn add(&mut self, other: &Counts) {
        for (a, b) in [
            (&mut self.muc, &other.muc),
            (&mut self.b3, &other.b3),
            (&mut self.ceaf, &other.ceaf),
        ] {
            for i in 0..4 {
                a[i] += b[i];
            }
        }
    }

    pub fn scores(&self) -> Scores {
        let prf = |c: &[f64; 4]| Prf::from_counts(c[0], c[1], c[2], c[3]);
        Scores::new(prf(&self.muc), prf(&self.b3), prf(&self.ceaf))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub muc: Prf,
    pub b3: Prf,
    pub ceaf_phi4: Prf,
    pub conll_f1: f64,
}

impl Scores {
    pub fn new(muc: Prf, b3: Prf, ceaf_phi4: Prf) -> Self {
        Scores {
            muc,
            b3,
            ceaf_phi4,
            conll_f1: conll_f1(&muc, &b3, &ceaf_phi4),
        }
    }
}

pub fn muc(gold: &[Vec<usize>], sys: &[Vec<usize>]) -> Prf {
    let (r_n, r_d) = muc_direction(gold, sys);
    let (p_n, p_d) = muc_direction(sys, gold);
    Prf::from_counts(p_n as f64, p_d as f64, r_n as f64, r_d as f64)
}

/// Exact rational, or a float once the exact value no longer fits.
#[derive(Clone, Debug)]
enum Exact {
    Ratio(Ratio<i128>),
    Float(f64),
}

fn ratio_to_f64(x: &Exact) -> f64 {
    match x {
        Exact::Ratio(r) => r.to_f64().expect("finite ratio"),
        Exact::Float(f) => *f,
    }
}

impl Exact {
    fn add(self, num: i128, den: i128) -> Exact {
        match self {
            Exact::Ratio(r) => match r.checked_add(&Ratio::new(num, den)) {
                Some(s) => Exact::Ratio(s),
                None => Exact::Float(ratio_to_f64(&Exact::Ratio(r)) + num as f64 / den as f64),
            },
            Exact::Float(f) => Exact::Float(f + num as f64 / den as f64),
        }
    }
}

/// `Σ_k Σ_o |k ∩ o|² / |k|` and `Σ |k|`; mentions of `key` absent from
/// `other` contribute nothing to the numerator.
fn b3_direction(key: &[Vec<usize>], other: &[Vec<usize>]) -> (Exact, usize) {
    let idx = cluster_index(other);
    let mut num = Exact::Ratio(Ratio::zero());
    let mut den = 0;
    for k in key {
        let mut overlap: HashMap<usize, i128> = HashMap::new();
        for m in k {
            if let Some(&c) = idx.get(m) {
                *overlap.entry(c).or_default() += 1;
            }
        }
        let sq: i128 = overlap.values().map(|v| v * v).sum();
        if sq > 0 {
            num = num.add(sq, k.len() as i128);
        }
        den += k.len();
    }
    (num, den)
}

fn exact_ratio(num: Exact, den: usize) -> Exact {
    if den == 0 {
        return Exact::Ratio(Ratio::zero());
    }
    match num {
        Exact::Ratio(r) => match r.checked_div(&Ratio::from_integer(den as i128)) {
            Some(q) => Exact::Ratio(q),
            None => Exact::Float(ratio_to_f64(&Exact::Ratio(r)) / den as f64),
        },
        Exact::Float(f) => Exact::Float(f / den as f64),
    }
}

fn exact_f1(p: &Exact, r: &Exact) -> Option<f64> {
    let (Exact::Ratio(p), Exact::Ratio(r)) = (p, r) else {
        return None;
    };
    let sum = p.checked_add(r)?;
    if sum.is_zero() {
        return Some(0.0);
    }
    let prod = p.checked_mul(r)?.checked_mul(&Ratio::from_integer(2))?;
    prod.checked_div(&sum)?.to_f64()
}

/// B³ in the intersection form. Precision, recall, and F1 are computed as
/// exact fractions before rounding, so the result does not depend on the
/// order of clusters or mentions.
pub fn b_cubed(gold: &[Vec<usize>], sys: &[Vec<usize>]) -> Prf {
    let (p_num, p_den) = b3_direction(sys, gold);
    let (r_num, r_den) = b3_direction(gold, sys);
    let p = exact_ratio(p_num, p_den);
    let r = exact_ratio(r_num, r_den);
    let mut prf = Prf::new(ratio_to_f64(&p), ratio_to_f64(&r));
    if let Some(f1) = exact_f1(&p, &r) {
        prf.f1 = f1;
    }
    prf
}

fn phi4(a: &[usize], b: &[usize]) -> f64 {
    let inter = a.iter().filter(|m| b.contains(m)).count();
    2.0 * inter as f64 / (a.len() + b.len()) as f64
}

fn ceaf_similarity_total(gold: &[Vec<usize>], sys: &[Vec<usize>]) -> f64 {
    let n = gold.len().max(sys.len());
    if n == 0 {
        return 0.0;
    }
    let mut sim = vec![vec![0.0; n]; n];
    let sys_idx = cluster_index(sys);
    for (i, g) in gold.iter().enumerate() {
        let mut touched: Vec<usize> = g.iter().filter_map(|m| sys_idx.get(m).copied()).collect();
        touched.sort_unstable();
        touched.dedup();
        for j in touched {
            sim[i][j] = phi4(g, &sys[j]);
        }
    }
    let assignment = hungarian(&sim);
    assignment.iter().enumerate().map(|(i, &j)| sim[i][j]).sum()
}

pub fn ceaf_phi4(gold: &[Vec<usize>], sys: &[Vec<usize>]) -> Prf {
    let phi = ceaf_similarity_total(gold, sys);
    Prf::from_counts(phi, sys.len() as f64, phi, gold.len() as f64)
}

pub fn conll_f1(muc: &Prf, b3: &Prf, ceaf: &Prf) -> f64 {
    (muc.f1 + b3.f1 + ceaf.f1) / 3.0
}

pub fn score(gold: &[Vec<usize>], sys: &[Vec<usize>]) -> Scores {
    Scores::new(muc(gold, sys), b_cubed(gold, sys), ceaf_phi4(gold, sys))
}

/// Maximum-weight perfect matching on a square matrix (Kuhn-Munkres with
/// potentials). Returns `col[row]`.
pub fn hungarian(similarity: &[Vec<f64>]) -> Vec<usize> {
    let n = similarity.len();
    if n == 0 {
        return Vec::new();
    }
    assert!(similarity.iter().all(|r| r.len() == n), "matrix must be square");
    // minimise cost = -similarity; 1-based arrays with a sentinel column 0
    let cost = |i: usize, j: usize| -similarity[i - 1][j - 1];
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost(i0, j) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut col = vec![0; n];
    for j in 1..=n {
        col[p[j] - 1] = j - 1;
    }
    col
}
