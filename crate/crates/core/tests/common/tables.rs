//! Printed accuracy, cost and A/C values of the two results tables.

use steproute::costs::{eval_report, AccuracyScale, CostBasis, CostBreakdown};

pub const DATASETS: [&str; 3] = ["GSM8K", "MATH500", "OmniMath"];

/// (method, [(accuracy %, avg cost, printed A/C); 3 datasets])
type Table = &'static [(&'static str, [(f64, f64, Option<f64>); 3])];

/// FLOPs table: accuracy in percent, cost in 10^12 FLOPs.
pub const FLOPS_TABLE: Table = &[
    ("1.5B Only", [(85.2, 0.973, Some(87.56)), (73.0, 1.82, Some(40.1)), (26.4, 2.72, Some(9.7))]),
    ("7B Only", [(94.6, 4.42, Some(21.40)), (79.6, 9.10, Some(8.75)), (28.2, 13.56, Some(2.08))]),
    ("SpecReason", [(85.2, 1.03, Some(82.72)), (77.4, 7.74, Some(10.0)), (28.0, 12.8, Some(2.18))]),
    ("RSD", [(94.4, 2.27, Some(41.59)), (79.8, 4.56, Some(17.5)), (30.0, 8.54, Some(3.51))]),
    ("STEER", [(94.4, 2.66, Some(35.49)), (79.6, 6.38, Some(12.4)), (28.3, 9.16, Some(3.09))]),
    ("Ours", [(94.5, 2.03, Some(46.55)), (82.8, 5.34, Some(15.5)), (29.1, 8.24, Some(3.53))]),
];

/// API table: accuracy in percent (reported as a fraction), cost in cents.
/// The open 7B model is free, so its A/C is printed as "--".
pub const API_TABLE: Table = &[
    ("7B Only", [(94.6, 0.0, None), (79.6, 0.0, None), (28.2, 0.0, None)]),
    ("GPT-4.1-mini", [(95.2, 0.0293, Some(32.4)), (84.8, 0.1313, Some(6.46)), (43.0, 0.3356, Some(1.28))]),
    ("SpecReason", [(94.9, 0.0994, Some(9.55)), (80.8, 0.3653, Some(2.21)), (26.0, 0.5691, Some(0.46))]),
    ("RSD", [(93.5, 0.0093, Some(100.5)), (87.1, 0.0331, Some(26.31)), (40.2, 0.2932, Some(1.52))]),
    ("STEER", [(94.5, 0.0608, Some(15.54)), (84.0, 0.0827, Some(10.16)), (30.0, 0.0823, Some(3.64))]),
    ("Ours", [(94.5, 0.0205, Some(46.09)), (85.0, 0.0493, Some(17.24)), (38.6, 0.285, Some(1.35))]),
];

pub struct RowCheck {
    pub label: String,
    pub printed: Option<f64>,
    pub computed: Option<f64>,
}

impl RowCheck {
    pub fn within(&self, tol: f64) -> bool {
        match (self.printed, self.computed) {
            (Some(p), Some(c)) => (p - c).abs() <= tol,
            (None, None) => true,
            _ => false,
        }
    }
}

/// Runs every row through `eval_report` on 1000 problems whose solve count
/// and per-problem cost reproduce the printed accuracy and cost.
pub fn check_rows() -> Vec<RowCheck> {
    let mut out = Vec::new();
    for (name, table, basis) in [("Table 1", FLOPS_TABLE, CostBasis::Flops), ("Table 2", API_TABLE, CostBasis::Api)] {
        let scale = AccuracyScale::conventional(basis);
        for (method, cells) in table {
            for (dataset, (acc, cost, printed)) in DATASETS.iter().zip(cells) {
                let solved = (acc * 10.0).round() as usize;
                let mut c = CostBreakdown::default();
                match basis {
                    CostBasis::Flops => c.flops_e12 = *cost,
                    CostBasis::Api => c.api_cents = *cost,
                }
                let results: Vec<_> = (0..1000).map(|i| (i < solved, c)).collect();
                let report = eval_report(&results, basis, scale).unwrap();
                out.push(RowCheck {
                    label: format!("{name} {method} {dataset}"),
                    printed: *printed,
                    computed: report.ac_ratio,
                });
            }
        }
    }
    out
}
