use buyin::dca::{self, DcaConfig};
use buyin::ingest::load_meanstd_correlation_path;
use buyin::model::PortfolioInstance;
use buyin::qp;
use nalgebra::DVector;
use std::time::Instant;

fn main() {
    let stats = load_meanstd_correlation_path(std::path::Path::new("/tmp/synth85.txt")).unwrap();
    let n = stats.num_assets();
    let inst = PortfolioInstance::from_statistics(
        &stats, 0.001,
        DVector::from_element(n, 0.05),
        DVector::from_element(n, 1.0),
    ).unwrap();

    // one relaxation QP, timed, with iteration count
    let t0 = Instant::now();
    let sub = dca::build_subproblem(&inst, &DVector::zeros(n)).unwrap();
    println!("build_subproblem: {:?}", t0.elapsed());
    let t0 = Instant::now();
    let sol = qp::solve_qp(&sub, 1e-8);
    println!("relaxation solve: {:?} status {:?} iters {} kkt {:?} polished {}",
        t0.elapsed(), sol.status, sol.iterations, sol.kkt, sol.diagnostics.polished);

    let t0 = Instant::now();
    let cfg = DcaConfig { escalate: false, ..DcaConfig::default() };
    match dca::solve_with_escalation(&inst, &cfg) {
        Ok(run) => println!("dca total: {:?} value {:.6e} iters {:?}", t0.elapsed(), run.value, run.report.iterations),
        Err(e) => println!("dca error after {:?}: {e}", t0.elapsed()),
    }
}
