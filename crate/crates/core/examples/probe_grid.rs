fn main() {
    let spec = tasid_core::envs::GridworldSpec::new(0.1, 3);
    let g = tasid_core::envs::build_gridworld(&spec).unwrap();
    println!("safe={} robust={} horizon={}", g.safe_path_len, g.robust_path_len, g.horizon);
    let sol = tasid_core::robust::robust_dp(g.m0.as_episodic(), 0.1).unwrap();
    println!("v_rho_worst={:.6}", sol.initial_value(g.m0.as_episodic()));
    let v = tasid_core::mdp::evaluate_policy(&g.target, &sol.rho).unwrap();
    println!("v_rho_in_target={:.6}", v.initial);
    let (pol, vstar) = tasid_core::mdp::value_iteration(g.m0.as_episodic()).unwrap();
    println!("v_star={:.6} v_opt_in_target={:.6}", vstar.initial, tasid_core::mdp::evaluate_policy(&g.target, &pol).unwrap().initial);
}
