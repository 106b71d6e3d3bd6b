//! Published FDR and power values at nu = 0.3 for the replicated tables.

/// `(block, method, fdr at 5/10/15%, power at 5/10/15%)`.
pub type Row = (&'static str, &'static str, [f64; 3], [f64; 3]);

pub const TABLE1: &[Row] = &[
    ("normal", "yd", [4.18, 9.05, 14.14], [92.95, 96.27, 97.51]),
    ("normal", "sbh", [7.42, 13.73, 19.97], [96.67, 98.12, 98.77]),
    ("normal", "sn", [6.26, 12.03, 17.78], [58.67, 71.87, 79.75]),
    ("lognormal", "yd", [4.60, 9.23, 14.24], [92.10, 95.74, 97.03]),
    ("lognormal", "sbh", [12.31, 18.75, 24.75], [94.61, 96.05, 96.93]),
    ("lognormal", "sn", [9.82, 16.22, 22.41], [62.65, 74.92, 82.22]),
];

pub const TABLE2: &[Row] = &[
    ("garch_arma", "yd", [4.71, 9.57, 14.70], [88.72, 93.68, 95.61]),
    ("garch_arma", "sbh", [12.87, 21.32, 28.96], [96.08, 97.90, 98.62]),
    ("garch_arma", "sn", [6.48, 12.19, 17.90], [54.36, 67.84, 76.24]),
];

/// Reference `(fdr, power)` for one cell, if published.
pub fn lookup(rows: &[Row], block: &str, method: &str, beta: f64) -> Option<(f64, f64)> {
    let k = [0.05, 0.10, 0.15].iter().position(|b| (b - beta).abs() < 1e-9)?;
    rows.iter()
        .find(|r| r.0 == block && r.1 == method)
        .map(|r| (r.2[k], r.3[k]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lookup_by_level() {
        assert_eq!(lookup(TABLE1, "normal", "yd", 0.10), Some((9.05, 96.27)));
        assert_eq!(lookup(TABLE2, "garch_arma", "sbh", 0.05), Some((12.87, 96.08)));
        assert_eq!(lookup(TABLE1, "normal", "bh", 0.05), None);
        assert_eq!(lookup(TABLE1, "normal", "yd", 0.2), None);
    }
}
