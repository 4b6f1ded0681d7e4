use patient_queues::equilibrium::*;
use patient_queues::instance::*;
use patient_queues::rates::compute_rates;

fn main() {
    // Hand-built symmetric tight system: 4 queues, 2 unit servers, margin 1.04.
    let inst = Instance::new(vec![0.48; 4], vec![1.0, 1.0]).unwrap();
    let p = StrategyProfile::uniform(4, 2);
    let part = compute_rates(&p, &inst).unwrap();
    println!("uniform ratios {:?} rates {:?}", part.ratios, part.per_queue);
    let cert = certify_nash(&p, &inst, 1e-6, CostModel::AgingRate).unwrap();
    println!("uniform is_nash={} viol={:?}", cert.is_nash, cert.violations);

    // Random tight instance like the corpus draws.
    let inst = random_feasible(4, 2, 1.05, 12345).unwrap();
    println!("inst λ={:?} μ={:?} margin={}", inst.arrival_rates(), inst.service_rates(), inst.feasibility_margin());
    let out = find_nash(&inst, StrategyProfile::uniform(4, 2), &NashSearchConfig { max_rounds: 60, ..Default::default() }).unwrap();
    let part = compute_rates(&out.profile, &inst).unwrap();
    println!("converged={} rounds={} ratios={:?}", out.converged, out.rounds, part.ratios);
    println!("profile={:?}", out.profile.rows());
}
