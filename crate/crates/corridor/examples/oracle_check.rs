//! Cross-checks of the fast planning paths against their slow reference
//! implementations, at reduced instance counts. `corridor verify` runs
//! the same suites at release-gate sizes.

use corridor::oracle::{exactness_suite, qp_equivalence_suite, scheduler_suite};

fn main() {
    let ex = exactness_suite(30, 7);
    println!(
        "solver exactness:    {}/{} ok, max structural residual {:.2e}",
        ex.total - ex.failures,
        ex.total,
        ex.max_residual
    );

    let qp = qp_equivalence_suite(10, 0.01, 7);
    println!(
        "qp equivalence:      {}/{} ok ({} speed-limited, {} rear-end), max relative cost gap {:.2e}",
        qp.total - qp.failures,
        qp.total,
        qp.vmax_active,
        qp.rear_end_active,
        qp.max_rel_gap
    );

    let sch = scheduler_suite(200, 7);
    println!(
        "scheduler vs brute:  {}/{} ok, {} idle-zero bit mismatches",
        sch.total - sch.failures,
        sch.total,
        sch.idle_zero_mismatches
    );
}
