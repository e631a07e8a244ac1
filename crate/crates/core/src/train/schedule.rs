use crate::train::optim::OptimConfig;

/// Learning rate for `epoch`: linear warm-up from `warmup_start_lr` to
/// `base_lr` over the warm-up epochs, then halved every `halve_every` epochs
/// counted from the end of warm-up.
pub fn lr_at(epoch: usize, config: &OptimConfig) -> f64 {
    let warm = config.warmup_epochs;
    if epoch < warm {
        let t = epoch as f64 / warm as f64;
        return config.warmup_start_lr + (config.base_lr - config.warmup_start_lr) * t;
    }
    let halvings = (epoch - warm).checked_div(config.halve_every).unwrap_or(0);
    config.base_lr * 0.5f64.powi(halvings as i32)
}
