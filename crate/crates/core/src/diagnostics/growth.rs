//! Dimension-growth ratios along a sweep of `(d, n)` cells.

use crate::error::{Error, Result};

/// Which family of rate conditions applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    /// `d⁴/n` and `d^{4+α+δ}/n`.
    Multinomial,
    /// `d^{4.5}/n`.
    MomentRestricted,
    /// `d_r⁵/n` and `d_r·d_c³/n`; `d` is `d_r`.
    MvLinear,
}

/// One sweep cell. Dimensions are real so exact power sweeps can be checked.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrowthCell {
    pub d: f64,
    pub d_c: Option<f64>,
    pub n: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Decreasing,
    Increasing,
    Mixed,
}

impl Verdict {
    pub fn label(&self) -> &'static str {
        match self {
            Verdict::Decreasing => "decreasing",
            Verdict::Increasing => "increasing",
            Verdict::Mixed => "mixed",
        }
    }

    fn of(values: &[f64]) -> Verdict {
        if values.windows(2).all(|w| w[1] < w[0]) {
            Verdict::Decreasing
        } else if values.windows(2).all(|w| w[1] > w[0]) {
            Verdict::Increasing
        } else {
            Verdict::Mixed
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrowthRatio {
    pub label: String,
    pub values: Vec<f64>,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrowthReport {
    pub regime_name: String,
    pub cells: Vec<GrowthCell>,
    pub ratios: Vec<GrowthRatio>,
}

type Condition = Box<dyn Fn(&GrowthCell) -> Result<f64>>;

pub fn growth_check(regime_name: &str, regime: Regime, cells: &[GrowthCell], alpha: f64, delta: f64) -> Result<GrowthReport> {
    if cells.len() < 2 {
        return Err(Error::InvalidSpec("growth check needs at least two cells".into()));
    }
    for cell in cells {
        if !(cell.d > 0.0 && cell.n > 0.0 && cell.d.is_finite() && cell.n.is_finite()) {
            return Err(Error::InvalidSpec(format!("bad growth cell {cell:?}")));
        }
    }
    if !(alpha >= 0.0 && delta >= 0.0) {
        return Err(Error::InvalidSpec("alpha and delta must be nonnegative".into()));
    }
    let mut conditions: Vec<(String, Condition)> = Vec::new();
    match regime {
        Regime::Multinomial => {
            conditions.push(("d^4/n".into(), Box::new(|c| Ok(c.d.powi(4) / c.n))));
            let e = 4.0 + alpha + delta;
            conditions.push((format!("d^{e}/n"), Box::new(move |c| Ok(c.d.powf(e) / c.n))));
        }
        Regime::MomentRestricted => conditions.push(("d^4.5/n".into(), Box::new(|c| Ok(c.d.powf(4.5) / c.n)))),
        Regime::MvLinear => {
            conditions.push(("d_r^5/n".into(), Box::new(|c| Ok(c.d.powi(5) / c.n))));
            conditions.push((
                "d_r*d_c^3/n".into(),
                Box::new(|c| {
                    let dc = c.d_c.ok_or_else(|| Error::InvalidSpec("mv-linear cells need d_c".into()))?;
                    Ok(c.d * dc.powi(3) / c.n)
                }),
            ));
        }
    }
    let mut ratios = Vec::with_capacity(conditions.len());
    for (label, f) in conditions {
        let values = cells.iter().map(f).collect::<Result<Vec<f64>>>()?;
        ratios.push(GrowthRatio { label, verdict: Verdict::of(&values), values });
    }
    Ok(GrowthReport { regime_name: regime_name.to_string(), cells: cells.to_vec(), ratios })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sweep(power: f64) -> Vec<GrowthCell> {
        [1e3, 1e4, 1e5, 1e6].iter().map(|&n: &f64| GrowthCell { d: n.powf(power), d_c: None, n }).collect()
    }

    #[test]
    fn power_sweeps() {
        let r = growth_check("slow", Regime::Multinomial, &sweep(0.2), 0.0, 0.0).unwrap();
        assert_eq!(r.ratios[0].verdict, Verdict::Decreasing);
        for (v, c) in r.ratios[0].values.iter().zip(&r.cells) {
            assert!((v / c.n.powf(-0.2) - 1.0).abs() < 1e-9);
        }
        let r = growth_check("fast", Regime::Multinomial, &sweep(1.0 / 3.0), 0.0, 0.0).unwrap();
        assert_eq!(r.ratios[0].verdict, Verdict::Increasing);
        let r = growth_check("alpha", Regime::Multinomial, &sweep(1.0 / 7.0), 2.0, 0.1).unwrap();
        assert_eq!(r.ratios[1].label, "d^6.1/n");
        assert_eq!(r.ratios[1].verdict, Verdict::Decreasing);
    }

    #[test]
    fn mv_linear_needs_column_dimension() {
        let cells = sweep(0.1);
        assert!(growth_check("mv", Regime::MvLinear, &cells, 0.0, 0.0).is_err());
        let cells: Vec<_> = cells.into_iter().map(|c| GrowthCell { d_c: Some(2.0), ..c }).collect();
        let r = growth_check("mv", Regime::MvLinear, &cells, 0.0, 0.0).unwrap();
        assert!(r.ratios.iter().all(|g| g.verdict == Verdict::Decreasing && g.values.iter().all(|v| v.is_finite() && *v >= 0.0)));
        assert!(growth_check("one", Regime::MomentRestricted, &cells[..1], 0.0, 0.0).is_err());
    }

    #[test]
    fn flat_sweep_is_mixed() {
        let cells = vec![GrowthCell { d: 2.0, d_c: None, n: 10.0 }; 3];
        let r = growth_check("flat", Regime::MomentRestricted, &cells, 0.0, 0.0).unwrap();
        assert_eq!(r.ratios[0].verdict, Verdict::Mixed);
    }
}
