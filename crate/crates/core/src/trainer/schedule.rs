/// Linear warmup followed by a single cosine decay to zero.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WarmupCosine {
    pub lr_max: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
}

impl WarmupCosine {
    /// `warmup_epochs` may be fractional; the step count is rounded.
    pub fn from_epochs(lr_max: f64, warmup_epochs: f64, epochs: usize, steps_per_epoch: usize) -> Self {
        let total_steps = (epochs * steps_per_epoch) as u64;
        let warmup_steps = ((warmup_epochs * steps_per_epoch as f64).round() as u64).min(total_steps.saturating_sub(1));
        Self {
            lr_max,
            warmup_steps,
            total_steps,
        }
    }
}

pub fn lr_at(step: u64, spec: &WarmupCosine) -> f64 {
    let WarmupCosine {
        lr_max,
        warmup_steps,
        total_steps,
    } = *spec;
    if step < warmup_steps {
        return lr_max * step as f64 / warmup_steps as f64;
    }
    let decay = total_steps.saturating_sub(warmup_steps).max(1) as f64;
    let t = ((step - warmup_steps) as f64 / decay).min(1.0);
    (lr_max * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints() {
        let s = WarmupCosine {
            lr_max: 1e-3,
            warmup_steps: 20,
            total_steps: 200,
        };
        assert_eq!(lr_at(0, &s), 0.0);
        assert_eq!(lr_at(20, &s), 1e-3);
        assert!((lr_at(110, &s) - 5e-4).abs() < 1e-15);
        assert!(lr_at(200, &s) < 1e-18);
        assert!(lr_at(10_000, &s) >= 0.0);
    }

    #[test]
    fn no_warmup() {
        let s = WarmupCosine {
            lr_max: 2.0,
            warmup_steps: 0,
            total_steps: 10,
        };
        assert_eq!(lr_at(0, &s), 2.0);
    }

    #[test]
    fn from_epochs_uses_ten_percent() {
        let s = WarmupCosine::from_epochs(1.0, 2.0, 20, 8);
        assert_eq!((s.warmup_steps, s.total_steps), (16, 160));
    }
}
