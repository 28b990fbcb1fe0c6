use crate::error::{Error, Result};

/// Pair counts behind Harrell's estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConcordanceCounts {
    pub concordant: u64,
    pub discordant: u64,
    pub risk_ties: u64,
}

impl ConcordanceCounts {
    pub fn comparable(&self) -> u64 {
        self.concordant + self.discordant + self.risk_ties
    }

    /// `(concordant + ½·ties) / comparable`, computed as a single division of
    /// integers so it agrees with a pairwise enumeration to the last bit.
    pub fn c_index(&self) -> Result<f64> {
        let comparable = self.comparable();
        if comparable == 0 {
            return Err(Error::UndefinedCIndex);
        }
        Ok((2 * self.concordant + self.risk_ties) as f64 / (2 * comparable) as f64)
    }

    /// Counts comparable pairs in O(n log n). A pair is comparable when one
    /// subject has a strictly earlier time and an event; subjects sharing a
    /// time are never compared.
    pub fn count(risks: &[f64], times: &[f64], events: &[u8]) -> Result<Self> {
        let n = risks.len();
        if times.len() != n || events.len() != n {
            return Err(Error::Shape(format!(
                "c-index needs aligned inputs, got {n} risks, {} times, {} events",
                times.len(),
                events.len()
            )));
        }
        if risks.iter().chain(times).any(|v| !v.is_finite()) {
            return Err(Error::Shape("c-index inputs must be finite".into()));
        }
        if events.iter().any(|&e| e > 1) {
            return Err(Error::Shape("event indicators must be 0 or 1".into()));
        }

        // Dense ranks of the risks, 1-based, equal risks share a rank.
        let mut by_risk: Vec<usize> = (0..n).collect();
        by_risk.sort_by(|&a, &b| risks[a].total_cmp(&risks[b]));
        let mut rank = vec![0usize; n];
        let mut levels = 0;
        for (k, &i) in by_risk.iter().enumerate() {
            if k == 0 || risks[i] != risks[by_risk[k - 1]] {
                levels += 1;
            }
            rank[i] = levels;
        }

        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| times[b].total_cmp(&times[a]));
        let mut tree = Fenwick::new(levels);
        let mut counts = Self::default();
        let mut k = 0;
        while k < n {
            let t = times[order[k]];
            let end = (k..n).find(|&e| times[order[e]] != t).unwrap_or(n);
            // Everyone in the tree has a strictly later time.
            let later = tree.total();
            for &i in &order[k..end] {
                if events[i] == 1 {
                    let below = tree.prefix(rank[i] - 1);
                    let at_or_below = tree.prefix(rank[i]);
                    counts.concordant += below;
                    counts.risk_ties += at_or_below - below;
                    counts.discordant += later - at_or_below;
                }
            }
            for &i in &order[k..end] {
                tree.add(rank[i]);
            }
            k = end;
        }
        Ok(counts)
    }
}

/// Harrell's concordance index: among comparable pairs, the share in which
/// the earlier failure has the higher risk, risk ties counted one half.
pub fn c_index(risks: &[f64], times: &[f64], events: &[u8]) -> Result<f64> {
    ConcordanceCounts::count(risks, times, events)?.c_index()
}

struct Fenwick {
    tree: Vec<u64>,
    total: u64,
}

impl Fenwick {
    fn new(size: usize) -> Self {
        Self {
            tree: vec![0; size + 1],
            total: 0,
        }
    }

    fn add(&mut self, mut i: usize) {
        self.total += 1;
        while i < self.tree.len() {
            self.tree[i] += 1;
            i += i & i.wrapping_neg();
        }
    }

    /// Count of inserted ranks in `1..=i`.
    fn prefix(&self, mut i: usize) -> u64 {
        let mut s = 0;
        while i > 0 {
            s += self.tree[i];
            i &= i - 1;
        }
        s
    }

    fn total(&self) -> u64 {
        self.total
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_ranking() {
        assert_eq!(c_index(&[3.0, 2.0, 1.0], &[1.0, 2.0, 3.0], &[1, 1, 1]).unwrap(), 1.0);
    }

    #[test]
    fn single_discordant_pair() {
        let c = ConcordanceCounts::count(&[2.0, 1.0, 3.0], &[5.0, 2.0, 8.0], &[1, 0, 1]).unwrap();
        assert_eq!(c.comparable(), 1);
        assert_eq!(c.c_index().unwrap(), 0.0);
    }

    #[test]
    fn risk_ties_count_half() {
        assert_eq!(c_index(&[1.0, 1.0], &[1.0, 2.0], &[1, 1]).unwrap(), 0.5);
    }

    #[test]
    fn tied_times_are_not_comparable() {
        assert!(matches!(c_index(&[1.0, 2.0], &[4.0, 4.0], &[1, 1]), Err(Error::UndefinedCIndex)));
    }

    #[test]
    fn all_censored_is_undefined() {
        assert!(matches!(c_index(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0], &[0, 0, 0]), Err(Error::UndefinedCIndex)));
    }

    #[test]
    fn misaligned_inputs_rejected() {
        assert!(c_index(&[1.0], &[1.0, 2.0], &[1, 1]).is_err());
    }
}
