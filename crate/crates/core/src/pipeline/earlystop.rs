//! Patience-based early stopping over a metric history.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Continue,
    Stop,
}

/// Stops once the last strict improvement is at least `patience` iterations
/// old. History entries are (iteration, metric value), higher is better.
pub fn early_stop_check(history: &[(u64, f64)], patience: u64) -> StopDecision {
    let Some(&(now, _)) = history.last() else {
        return StopDecision::Continue;
    };
    let mut best = f64::NEG_INFINITY;
    let mut best_at = 0u64;
    for &(step, value) in history {
        if value > best {
            best = value;
            best_at = step;
        }
    }
    if now - best_at >= patience {
        StopDecision::Stop
    } else {
        StopDecision::Continue
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn improving_history_continues() {
        let h: Vec<(u64, f64)> = (1..=10).map(|i| (i, i as f64)).collect();
        assert_eq!(early_stop_check(&h, 3), StopDecision::Continue);
    }

    #[test]
    fn flat_history_stops_after_patience() {
        let h: Vec<(u64, f64)> = (1..=10).map(|i| (i, 5.0)).collect();
        assert_eq!(early_stop_check(&h, 4), StopDecision::Stop);
    }

    #[test]
    fn boundary_arithmetic() {
        // best at iteration 10, patience 5
        let mut h = vec![(10u64, 9.0)];
        for i in 11..=14 {
            h.push((i, 3.0));
        }
        // now = 14 = 10 + patience - 1 -> continue
        assert_eq!(early_stop_check(&h, 5), StopDecision::Continue);
        h.push((15, 3.0));
        // now = 15 = 10 + patience -> stop
        assert_eq!(early_stop_check(&h, 5), StopDecision::Stop);
    }

    #[test]
    fn ties_do_not_reset_patience() {
        let h = vec![(1u64, 7.0), (2, 7.0), (3, 7.0), (4, 7.0)];
        assert_eq!(early_stop_check(&h, 3), StopDecision::Stop);
    }

    #[test]
    fn empty_history_continues() {
        assert_eq!(early_stop_check(&[], 1), StopDecision::Continue);
    }
}
