//! Linear warmup followed by linear decay to zero.

/// Learning rate at `step`: `peak · step / warmup` up to `warmup`, then
/// `peak · (total − step) / (total − warmup)`, clamped at zero past `total`.
pub fn lr_at(step: u64, peak: f64, warmup: u64, total: u64) -> f64 {
    if step <= warmup {
        if warmup == 0 {
            return peak;
        }
        return peak * step as f64 / warmup as f64;
    }
    if step >= total {
        return 0.0;
    }
    peak * (total - step) as f64 / (total - warmup) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints() {
        assert_eq!(lr_at(0, 1e-4, 500, 30_000), 0.0);
        assert_eq!(lr_at(500, 1e-4, 500, 30_000), 1e-4);
        assert_eq!(lr_at(30_000, 1e-4, 500, 30_000), 0.0);
        assert_eq!(lr_at(40_000, 1e-4, 500, 30_000), 0.0);
        assert_eq!(lr_at(15_250, 1.0, 500, 30_000), 0.5);
    }

    #[test]
    fn no_warmup() {
        assert_eq!(lr_at(0, 2.0, 0, 10), 2.0);
        assert_eq!(lr_at(5, 2.0, 0, 10), 1.0);
    }
}
