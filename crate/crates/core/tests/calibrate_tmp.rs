use cbf_taskstack::scenario::{builtin, Scenario};
use cbf_taskstack::sim;

#[test]
fn trial_run() {
    let scenario = Scenario::from_json(builtin::PAPER_7DOF).unwrap();
    let built = scenario.build().unwrap();
    let trace = match built.run() {
        Ok(t) => t,
        Err(f) => panic!("aborted at {}: {}", f.at, f.source),
    };
    for &t in &[0.0, 2.0, 5.0, 9.99, 10.5, 11.0, 13.0, 15.0, 19.99, 20.5, 21.0, 23.0, 25.0, 29.99] {
        let k = trace.index_at(t);
        let hq = trace.barrier_min_curve(0)[k];
        let hv = trace.barrier_min_curve(1)[k];
        let hp = trace.barrier_min_curve(2)[k];
        println!(
            "t={:6.2} hq={:+.4e} hv={:+.4e} hp={:+.4e} d=({:+.3e},{:+.3e},{:+.3e}) |u|={:.4}",
            t, hq, hv, hp,
            trace.slacks[k][0], trace.slacks[k][1], trace.slacks[k][2],
            trace.controls[k].norm()
        );
    }
    let report = sim::make_report(&trace, &built.tasks, 0.5);
    println!("min_h: {:?}", report.invariance.min_h);
    println!("final errors: {:?}", report.final_errors);
    println!("median solve us: {:.1}", report.median_solve_us);
    println!("max du/dt: {:.4}", report.continuity.max_du_dt);
    for (t, j) in &report.continuity.event_jumps {
        println!("event {t}: jump {j:.3e}");
    }
}
