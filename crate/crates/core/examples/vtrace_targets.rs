//! V-trace value targets for one episode, on-policy and with clipped
//! importance ratios.

use steproute::vtrace::{vtrace_episode, VTraceConfig};

fn main() {
    let rewards = [1.0, 1.0, 4.67, 4.67];
    let values = [9.0, 8.5, 9.0, 4.5];
    let cfg = VTraceConfig::default();

    let on = vtrace_episode(&rewards, &values, &[1.0; 4], &cfg);
    println!("on-policy targets (the returns): {:?}", on.targets);

    let ratios = [0.5, 3.0, 1.0, 0.0];
    let off = vtrace_episode(&rewards, &values, &ratios, &cfg);
    println!("ratios          {ratios:?}");
    println!("clipped rho     {:?}", off.rhos);
    println!("targets         {:?}", off.targets);
    println!("advantages      {:?}", off.advantages);
    println!("behavior adv.   {:?}", off.behavior_advantages);
}
