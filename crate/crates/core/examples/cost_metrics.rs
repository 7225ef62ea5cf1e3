//! FLOPs and API cost models, and Accuracy-per-Cost under each table's
//! accuracy convention.

use steproute::costs::{api_cost, eval_report, flops_cost, AccuracyScale, CostBasis, CostBreakdown, TokenCounts};
use steproute::trace::ApiPricing;

fn main() -> steproute::Result<()> {
    // 2N FLOPs per generated token, reported in 10^12
    println!("1.5B model, 1000 tokens: {} TFLOPs", flops_cost(1_500_000_000, 1000));
    println!("7B model, 1000 tokens:   {} TFLOPs", flops_cost(7_000_000_000, 1000));

    let tokens = TokenCounts::new(1000, 200, 500);
    println!("{tokens:?} at GPT-4.1-mini rates: {} cents", api_cost(&ApiPricing::GPT_4_1_MINI, tokens));

    // 945 of 1000 problems solved at 2.03 TFLOPs each
    let cost = CostBreakdown { flops_e12: 2.03, ..Default::default() };
    let results: Vec<_> = (0..1000).map(|i| (i < 945, cost)).collect();
    let r = eval_report(&results, CostBasis::Flops, AccuracyScale::conventional(CostBasis::Flops))?;
    println!("FLOPs basis: accuracy {} avg cost {} A/C {:?}", r.accuracy, r.avg_cost, r.ac_ratio);

    let cost = CostBreakdown { api_cents: 0.0205, ..Default::default() };
    let results: Vec<_> = (0..1000).map(|i| (i < 945, cost)).collect();
    let r = eval_report(&results, CostBasis::Api, AccuracyScale::conventional(CostBasis::Api))?;
    println!("API basis:   accuracy {} avg cost {} A/C {:?}", r.accuracy, r.avg_cost, r.ac_ratio);
    Ok(())
}
