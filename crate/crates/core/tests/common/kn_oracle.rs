//! Brute-force interpolated modified Kneser-Ney, evaluated straight from the
//! textbook formulas by rescanning the corpus for every count it needs.

pub const BOS: usize = usize::MAX;

pub struct Oracle {
    pub n: usize,
    pub v: usize,
    padded: Vec<Vec<usize>>,
}

impl Oracle {
    pub fn new(sentences: &[Vec<usize>], n: usize, v: usize) -> Self {
        let padded = sentences
            .iter()
            .map(|s| {
                let mut p = vec![BOS; n - 1];
                p.extend(s);
                p.push(0);
                p
            })
            .collect();
        Self { n, v, padded }
    }

    /// Occurrences of `g` ending at a predicted position.
    pub fn raw(&self, g: &[usize]) -> u64 {
        let k = g.len();
        let mut c = 0;
        for p in &self.padded {
            for end in self.n - 1..p.len() {
                if end + 1 >= k && &p[end + 1 - k..=end] == g {
                    c += 1;
                }
            }
        }
        c
    }

    fn left_symbols(&self) -> Vec<usize> {
        let mut s: Vec<usize> = (0..self.v).collect();
        s.push(BOS);
        s
    }

    /// Count used at the order of `g`.
    pub fn kn_count(&self, g: &[usize]) -> u64 {
        if g.len() == self.n || g[0] == BOS {
            return self.raw(g);
        }
        self.left_symbols()
            .into_iter()
            .filter(|&u| {
                let mut e = vec![u];
                e.extend(g);
                self.raw(&e) > 0
            })
            .count() as u64
    }

    fn all_grams(&self, k: usize) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        for p in &self.padded {
            for end in self.n - 1..p.len() {
                let g = p[end + 1 - k..=end].to_vec();
                if !out.contains(&g) {
                    out.push(g);
                }
            }
        }
        out
    }

    pub fn discounts(&self, k: usize) -> [f64; 3] {
        let mut nn = [0f64; 4];
        for g in self.all_grams(k) {
            let c = self.kn_count(&g);
            if (1..=4).contains(&c) {
                nn[c as usize - 1] += 1.0;
            }
        }
        if nn.contains(&0.0) {
            return [0.75; 3];
        }
        let y = nn[0] / (nn[0] + 2.0 * nn[1]);
        let d1 = 1.0 - 2.0 * y * nn[1] / nn[0];
        let d2 = 2.0 - 3.0 * y * nn[2] / nn[1];
        let d3 = 3.0 - 4.0 * y * nn[3] / nn[2];
        if (0.0..1.0).contains(&d1) && (0.0..2.0).contains(&d2) && (0.0..3.0).contains(&d3) {
            [d1, d2, d3]
        } else {
            [0.75; 3]
        }
    }

    /// `p(w | h)` with `h` of length at most `n − 1`.
    pub fn prob(&self, h: &[usize], w: usize) -> f64 {
        if h.len() >= self.n {
            return self.prob(&h[h.len() - (self.n - 1)..], w);
        }
        let lower = if h.is_empty() {
            1.0 / self.v as f64
        } else {
            self.prob(&h[1..], w)
        };
        let k = h.len() + 1;
        let d = self.discounts(k);
        let count = |u: usize| {
            let mut g = h.to_vec();
            g.push(u);
            self.kn_count(&g)
        };
        let counts: Vec<u64> = (0..self.v).map(count).collect();
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return lower;
        }
        let disc = |c: u64| match c {
            0 => 0.0,
            1 => d[0],
            2 => d[1],
            _ => d[2],
        };
        let gamma: f64 = counts.iter().map(|&c| disc(c)).sum::<f64>() / total as f64;
        let c = counts[w] as f64;
        (c - disc(counts[w])).max(0.0) / total as f64 + gamma * lower
    }
}
