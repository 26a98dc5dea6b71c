//! Bracketing search over the loss scale `c`.
//!
//! Starting at `c = 1e-3` with bounds `[0, 1e10]`: a successful round
//! lowers the upper bound to `c`; a failed round raises the lower bound to
//! `c`. While the upper bound is still at least `1e9` failures multiply `c`
//! by ten, otherwise `c` moves to the midpoint of the bounds. The best
//! successful candidate over all rounds is kept.

use crate::error::Result;

pub const C_INIT: f64 = 1e-3;
pub const UPPER_INIT: f64 = 1e10;
/// Bisection starts once the upper bound drops below this.
pub const UPPER_ACTIVE: f64 = 1e9;

/// What the search needs from one attack run.
pub trait Candidate {
    fn is_success(&self) -> bool;

    /// Larger is better; compared only among successful candidates.
    fn quality(&self) -> f64;
}

/// One search round: the `c` that was tried and the bounds after the update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchRound {
    pub c: f64,
    pub success: bool,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone)]
pub struct SearchResult<T> {
    /// Highest-quality successful candidate and the `c` that produced it.
    pub best: Option<(T, f64)>,
    /// Candidate of the final round and its `c`.
    pub last: (T, f64),
    pub rounds: Vec<SearchRound>,
}

impl<T> SearchResult<T> {
    /// The best successful candidate, or the last one if none succeeded.
    pub fn into_chosen(self) -> (T, f64) {
        self.best.unwrap_or(self.last)
    }
}

/// Runs `rounds` rounds of the search, calling `attack(c)` once per round.
pub fn binary_search_c<T, F>(rounds: usize, mut attack: F) -> Result<SearchResult<T>>
where
    T: Candidate + Clone,
    F: FnMut(f64) -> Result<T>,
{
    assert!(rounds >= 1, "binary search needs at least one round");
    let mut c = C_INIT;
    let (mut lower, mut upper) = (0.0f64, UPPER_INIT);
    let mut best: Option<(T, f64)> = None;
    let mut trace = Vec::with_capacity(rounds);
    let mut last = None;
    for _ in 0..rounds {
        let cand = attack(c)?;
        let success = cand.is_success();
        let tried = c;
        if success {
            if best.as_ref().is_none_or(|(b, _)| cand.quality() > b.quality()) {
                best = Some((cand.clone(), tried));
            }
            upper = upper.min(c);
            if upper < UPPER_ACTIVE {
                c = (lower + upper) / 2.0;
            }
        } else {
            lower = lower.max(c);
            if upper < UPPER_ACTIVE {
                c = (lower + upper) / 2.0;
            } else {
                c *= 10.0;
            }
        }
        trace.push(SearchRound { c: tried, success, lower, upper });
        last = Some((cand, tried));
    }
    Ok(SearchResult { best, last: last.expect("rounds >= 1"), rounds: trace })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Clone, Debug)]
    struct Stub {
        success: bool,
        quality: f64,
    }

    impl Candidate for Stub {
        fn is_success(&self) -> bool {
            self.success
        }
        fn quality(&self) -> f64 {
            self.quality
        }
    }

    #[test]
    fn always_failing_grows_tenfold() {
        let r = binary_search_c(9, |_| Ok(Stub { success: false, quality: 0.0 })).unwrap();
        let cs: Vec<f64> = r.rounds.iter().map(|r| r.c).collect();
        let mut want = vec![1e-3];
        for _ in 1..9 {
            let next = want.last().unwrap() * 10.0;
            want.push(next);
        }
        assert_eq!(cs, want);
        assert!(r.best.is_none());
        assert!(!r.into_chosen().0.success);
    }

    #[test]
    fn always_succeeding_halves() {
        let r = binary_search_c(3, |c| Ok(Stub { success: true, quality: -c })).unwrap();
        let cs: Vec<f64> = r.rounds.iter().map(|r| r.c).collect();
        assert_eq!(cs, vec![1e-3, 5e-4, 2.5e-4]);
        assert_eq!(r.best.unwrap().1, 2.5e-4);
    }

    #[test]
    fn threshold_attack_keeps_upper_bound_monotone() {
        let r = binary_search_c(12, |c| Ok(Stub { success: c >= 1.0, quality: -c })).unwrap();
        for w in r.rounds.windows(2) {
            assert!(w[1].upper <= w[0].upper);
            assert!(w[1].lower >= w[0].lower);
        }
        let (best, c) = r.best.unwrap();
        assert!(best.success && c >= 1.0);
        // Bisection converges onto the threshold from above.
        assert!(c < 1.1);
    }
}
