//! Scratch probe: paired policy runs on the symmetric workload.

use gridshare::config::Policy;
use gridshare::fixtures::symmetric_workload;
use gridshare::sim::run;

fn main() {
    let mut fair_gini_wins = 0;
    let mut util_wins = 0;
    for seed in 0..10u64 {
        let fair = run(symmetric_workload(seed, Policy::FairnessOn, 0.7)).unwrap();
        let fcfs = run(symmetric_workload(seed, Policy::FcfsDp, 0.7)).unwrap();
        let greedy = run(symmetric_workload(seed, Policy::Greedy, 0.7)).unwrap();
        let gw = fair.final_gini < fcfs.final_gini;
        let uw = fair.total_utility >= greedy.total_utility;
        fair_gini_wins += gw as u32;
        util_wins += uw as u32;
        println!(
            "seed {seed}: gini fair={:.4} fcfs={:.4} {} | util fair={:.1} greedy={:.1} {} | served f/c/g {}/{}/{} wait {:.1}/{:.1}/{:.1}",
            fair.final_gini,
            fcfs.final_gini,
            if gw { "WIN" } else { "LOSS" },
            fair.total_utility.to_f64(),
            greedy.total_utility.to_f64(),
            if uw { "WIN" } else { "LOSS" },
            fair.waiting.served,
            fcfs.waiting.served,
            greedy.waiting.served,
            fair.waiting.mean_minutes,
            fcfs.waiting.mean_minutes,
            greedy.waiting.mean_minutes,
        );
    }
    println!("gini wins {fair_gini_wins}/10, utility wins {util_wins}/10");

    println!("\nrelocation fraction sweep (seed 3):");
    for frac in [0.0, 0.3, 0.5, 0.7, 0.9] {
        let r = run(symmetric_workload(3, Policy::FairnessOn, frac)).unwrap();
        println!(
            "frac {frac}: gini={:.4} util={:.1} wait={:.1} served={}",
            r.final_gini,
            r.total_utility.to_f64(),
            r.waiting.mean_minutes,
            r.waiting.served
        );
    }
}
