use serde::{Deserialize, Serialize};

/// A named residual with its magnitude and, within a refinement ladder, the
/// observed order against the previous resolution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub name: String,
    pub abs: f64,
    /// `abs / scale` for the check's reference scale (`abs` itself when the scale is zero).
    pub rel: f64,
    pub h: f64,
    pub order_vs_prev: Option<f64>,
}

impl ResidualReport {
    pub fn new(name: impl Into<String>, abs: f64, scale: f64, h: f64) -> Self {
        let abs = abs.abs();
        let rel = if scale > 0.0 { abs / scale } else { abs };
        ResidualReport { name: name.into(), abs, rel, h, order_vs_prev: None }
    }
}

/// `ln(e1 / e2) / ln(h1 / h2)`; `None` if either residual is zero or the
/// spacings coincide.
pub fn observed_order(e1: f64, h1: f64, e2: f64, h2: f64) -> Option<f64> {
    if e1 <= 0.0 || e2 <= 0.0 || h1 == h2 || !e1.is_finite() || !e2.is_finite() {
        return None;
    }
    Some((e1 / e2).ln() / (h1 / h2).ln())
}

/// Fills `order_vs_prev` along a ladder of reports for one check.
pub fn annotate_orders(ladder: &mut [ResidualReport]) {
    for i in 1..ladder.len() {
        let (prev, cur) = (&ladder[i - 1], &ladder[i]);
        let o = observed_order(prev.abs, prev.h, cur.abs, cur.h);
        ladder[i].order_vs_prev = o;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_of_power_law() {
        let o = observed_order(1.0, 0.1, 1.0 / 16.0, 0.05).unwrap();
        assert!((o - 4.0).abs() < 1e-12);
        assert_eq!(observed_order(0.0, 0.1, 1.0, 0.05), None);
    }

    #[test]
    fn annotate() {
        let mut l = vec![
            ResidualReport::new("x", 1.0, 2.0, 0.1),
            ResidualReport::new("x", 0.25, 2.0, 0.05),
        ];
        annotate_orders(&mut l);
        assert_eq!(l[0].order_vs_prev, None);
        assert!((l[1].order_vs_prev.unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(l[0].rel, 0.5);
        assert_eq!(ResidualReport::new("z", 0.0, 0.0, 1.0).rel, 0.0);
    }
}
