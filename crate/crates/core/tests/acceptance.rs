mod common;

use std::time::Instant;

use common::*;
use ecopart::diact::{diact_storages, distributions, static_diact, DiactKind, FlowScope};
use ecopart::interact::{classify, Basis, Normalization, Sign, Source};
use ecopart::model::CompartmentalModel;
use ecopart::odeint::{integrate, linear_solution, scaled_substorage, OdeConfig};
use ecopart::partition::{linear_system, PartitionTrajectory};
use ecopart::pathflow::{cumulative_transient, parse_path, summed_inflow, transient_flows, SolveMode};
use ecopart::staticnet::{find_steady_state, output_oriented, static_cumulative, static_partition, SteadyConfig};
use nalgebra::DMatrix;
use rand::{rngs::StdRng, Rng, SeedableRng};

fn aggregate_run(model: &CompartmentalModel, t_end: f64, cfg: &OdeConfig) -> ecopart::odeint::Trajectory {
    let m = model.clone();
    integrate(
        move |t, x, dx| {
            dx.copy_from_slice(m.rhs(t, x)?.as_slice());
            Ok(())
        },
        model.x_init.as_slice(),
        0.0,
        t_end,
        cfg,
    )
    .unwrap()
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |a, v| a.max(v.abs()))
}

fn c01_hippe_aggregate() -> Outcome {
    let started = Instant::now();
    let model = hippe();
    let traj = aggregate_run(&model, 5.0, &OdeConfig::default());
    let mut worst = 0.0f64;
    for t in [0.5, 1.0, 2.0, 5.0] {
        let x = traj.interpolate(t).unwrap();
        let exact = 2.0 * (-t).exp() + 1.0;
        for v in x {
            worst = worst.max((v - exact).abs());
        }
    }
    let secs = started.elapsed().as_secs_f64();
    check(worst <= 1e-6 && secs < 1.0, format!("max err {worst:.2e}, {secs:.3} s"))
}

fn c02_hippe_static_substorage() -> Outcome {
    let model = hippe();
    let x_ss = find_steady_state(&model, &model.x_init, &SteadyConfig::default()).unwrap();
    let sol = static_partition(&model, &x_ss).unwrap();
    let expect = DMatrix::from_row_slice(2, 2, &[7.0 / 9.0, 2.0 / 9.0, 4.0 / 9.0, 5.0 / 9.0]);
    let err_static = max_abs(&(&sol.x_sub - &expect));
    let part = run(&model, 50.0, &tight());
    let err_dynamic = max_abs(&(&part.state(50.0).unwrap().x_sub - &expect));
    check(
        err_static <= 1e-9 && err_dynamic <= 1e-6,
        format!("static {err_static:.2e}, dynamic(50) {err_dynamic:.2e}"),
    )
}

type Closed = fn(f64) -> f64;

fn x_forms() -> [(&'static str, usize, usize, Closed); 4] {
    [
        ("x11", 0, 0, |t| {
            7.0 / 3.0 - 11.0 * t.cos() / 30.0 + 13.0 * t.sin() / 30.0
                - 5.0 * (-t).exp() / 3.0
                - 3.0 * (-3.0 * t).exp() / 10.0
        }),
        ("x12", 0, 1, |t| {
            2.0 / 3.0 - 16.0 * (2.0 * t).cos() / 195.0 - 2.0 * (2.0 * t).sin() / 195.0 - 13.0 * (-t).exp() / 15.0
                + 11.0 * (-3.0 * t).exp() / 39.0
        }),
        ("x21", 1, 0, |t| {
            4.0 / 3.0 - 4.0 * t.cos() / 15.0 + 2.0 * t.sin() / 15.0 - 5.0 * (-t).exp() / 3.0
                + 3.0 * (-3.0 * t).exp() / 5.0
        }),
        ("x22", 1, 1, |t| {
            5.0 / 3.0 - 46.0 * (2.0 * t).cos() / 195.0 + 43.0 * (2.0 * t).sin() / 195.0
                - 13.0 * (-t).exp() / 15.0
                - 22.0 * (-3.0 * t).exp() / 39.0
        }),
    ]
}

fn tau_forms() -> [(&'static str, usize, usize, Closed); 4] {
    [
        ("tau11", 0, 0, |t| {
            35.0 / 9.0 - 8.0 * t.cos() / 45.0 + 49.0 * t.sin() / 45.0 - 10.0 * (-t).exp() / 9.0
                + 2.0 * (-3.0 * t).exp() / 5.0
        }),
        ("tau12", 0, 1, |t| {
            742.0 / 585.0 - 184.0 * t.cos().powi(2) / 585.0 + 86.0 * (2.0 * t).sin() / 585.0
                - 26.0 * (-t).exp() / 45.0
                - 44.0 * (-3.0 * t).exp() / 117.0
        }),
        ("tau21", 1, 0, |t| {
            28.0 / 9.0 - 22.0 * t.cos() / 45.0 + 26.0 * t.sin() / 45.0
                - 20.0 * (-t).exp() / 9.0
                - 2.0 * (-3.0 * t).exp() / 5.0
        }),
        ("tau22", 1, 1, |t| {
            2339.0 / 585.0 - 128.0 * t.cos().powi(2) / 585.0 + 577.0 * (2.0 * t).sin() / 585.0
                - 52.0 * (-t).exp() / 45.0
                + 44.0 * (-3.0 * t).exp() / 117.0
        }),
    ]
}

fn c03_hippe_periodic_closed_forms() -> Outcome {
    let started = Instant::now();
    let part = run(&hippe_periodic(), 10.0, &tight());
    let mut worst = (0.0f64, "");
    let mut note = |name: &'static str, got: f64, want: f64| {
        let e = (got - want).abs();
        if e > worst.0 {
            worst = (e, name);
        }
    };
    for t in [1.0, 3.0, 10.0] {
        let st = part.state(t).unwrap();
        let sub = part.subthroughflows(t).unwrap();
        let e = (-t).exp();
        note("x10", st.x0[0], 3.0 * e);
        note("x20", st.x0[1], 3.0 * e);
        note("tau10", sub.tau0_in[0], 2.0 * e);
        note("tau20", sub.tau0_in[1], 4.0 * e);
        for (name, i, k, f) in x_forms() {
            note(name, st.x_sub[(i, k)], f(t));
        }
        for (name, i, k, f) in tau_forms() {
            note(name, sub.t_in[(i, k)], f(t));
        }
    }
    let secs = started.elapsed().as_secs_f64();
    check(
        worst.0 <= 1e-6 && secs < 5.0,
        format!("max err {:.2e} ({}), {secs:.3} s", worst.0, worst.1),
    )
}

fn c04_initial_transfer_closed_forms() -> Outcome {
    let part = run(&hippe_periodic(), 5.0, &tight());
    let st = diact_storages(&part, &[DiactKind::Transfer], 0.0).unwrap();
    let mut worst = 0.0f64;
    for t in [0.5, 1.0, 2.0, 5.0] {
        let flow = st
            .distributions(t)
            .unwrap()
            .flows(DiactKind::Transfer, FlowScope::Subsystem(0))
            .unwrap();
        let x = st.subsystem(DiactKind::Transfer, 0, t).unwrap();
        worst = worst.max((flow[(0, 1)] - 2.0 * (-t).exp()).abs());
        worst = worst.max((x[(0, 1)] - (3.0 * (-t).exp() - 3.0 * (-5.0 * t / 3.0).exp())).abs());
    }
    check(worst <= 1e-6, format!("max err {worst:.2e}"))
}

fn printed_transfer_flow(t: f64) -> f64 {
    let (c, s) = (t.cos(), t.sin());
    -493.0 / 585.0 - 8.0 * c / 45.0 + 4.0 * s / 45.0 - 998.0 * c * s / 585.0 - 184.0 * c * c / 585.0
        + 14.0 * (-t).exp() / 45.0
        + 14.0 * (-3.0 * t).exp() / 585.0
}

fn printed_transfer_storage(t: f64) -> f64 {
    let (c, s) = (t.cos(), t.sin());
    -9671.0 / 11895.0 - 26.0 * c / 255.0 - 2.0 * s / 255.0 - 6094.0 * c * s / 11895.0
        + 5068.0 * c * c / 11895.0
        + 7.0 * (-t).exp() / 15.0
        + 417.0 * (-5.0 * t / 3.0).exp() / 10370.0
        - 7.0 * (-3.0 * t).exp() / 390.0
}

fn c04b_printed_composite_transfer() -> Outcome {
    let part = run(&hippe_periodic(), 5.0, &tight());
    let st = diact_storages(&part, &[DiactKind::Transfer], 0.0).unwrap();
    let mut worst = 0.0f64;
    let mut rows = Vec::new();
    for t in [1.0, 2.0, 5.0] {
        let flow = st
            .distributions(t)
            .unwrap()
            .flows(DiactKind::Transfer, FlowScope::Composite)
            .unwrap()[(0, 1)];
        let x = st.composite(DiactKind::Transfer, t).unwrap()[(0, 1)];
        let (pf, px) = (printed_transfer_flow(t), printed_transfer_storage(t));
        worst = worst.max((flow - pf).abs()).max((x - px).abs());
        rows.push(format!("t={t}: flow {flow:.5} vs {pf:.5}, storage {x:.5} vs {px:.5}"));
    }
    check(worst <= 1e-5, format!("max err {worst:.2e}; {}", rows.join("; ")))
}

fn reconciliation_gap(part: &PartitionTrajectory, cycles: usize) -> f64 {
    let model = &part.model;
    let records: Vec<_> = ["k=1: 0 -> 1 -> 2 -> 1", "k=2: 0 -> 2 -> 1 -> 2 -> 1"]
        .iter()
        .map(|spec| {
            let mut path = parse_path(spec, model).unwrap();
            path.cycles = cycles;
            cumulative_transient(part, &path, 0.0, SolveMode::Simultaneous).unwrap()
        })
        .collect();
    let mut worst = 0.0f64;
    for step in 0..=1000 {
        let t = step as f64 * 0.01;
        let via_paths = summed_inflow(&records, t).unwrap();
        let dynamic = distributions(part, t)
            .unwrap()
            .flows(DiactKind::Transfer, FlowScope::Composite)
            .unwrap()[(0, 1)];
        worst = worst.max((via_paths - dynamic).abs());
    }
    worst
}

fn c05_path_dynamic_reconciliation() -> Outcome {
    let part = run(&hippe_periodic(), 10.0, &OdeConfig::default());
    let gaps: Vec<f64> = [2, 4, 8].iter().map(|&m| reconciliation_gap(&part, m)).collect();
    let monotone = gaps.windows(2).all(|w| w[1] <= w[0]);
    check(
        gaps[2] <= 1e-2 && monotone,
        format!("gaps m=2,4,8: {:.2e}, {:.2e}, {:.2e}", gaps[0], gaps[1], gaps[2]),
    )
}

fn relative(a: f64, b: f64, scale: f64) -> f64 {
    (a - b).abs() / scale.max(f64::MIN_POSITIVE)
}

fn exhaustiveness(model: &CompartmentalModel, t_end: f64, seed: u64) -> f64 {
    let cfg = tight();
    let part = run(model, t_end, &cfg);
    let agg = aggregate_run(model, t_end, &cfg);
    let mut rng = StdRng::seed_from_u64(seed);
    let n = model.n;
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let t = rng.random_range(0.0..t_end);
        let st = part.state(t).unwrap();
        let x = agg.interpolate(t).unwrap();
        let scale = x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let sum = st.aggregate();
        for i in 0..n {
            worst = worst.max(relative(sum[i], x[i], scale));
        }
        let x_dec = sum.as_slice().to_vec();
        let f = model.flow_matrix(t, &x_dec).unwrap();
        let mut f_sum = DMatrix::zeros(n, n);
        for k in 0..=n {
            f_sum += part.subsystem_matrices(t, k).unwrap().f_k;
        }
        worst = worst.max(max_abs(&(&f_sum - &f)) / max_abs(&f));
        let si = model.storage_intensities(t, &x_dec).unwrap();
        let sub = part.subthroughflows(t).unwrap();
        let mut r_inv_x = st.x_sub.clone();
        for i in 0..n {
            r_inv_x.row_mut(i).scale_mut(si.r_inv[i]);
        }
        let qx_x = &si.qx * &st.x_sub;
        worst = worst.max(max_abs(&(&sub.t_tilde - &qx_x)) / max_abs(&sub.t_tilde));
        worst = worst.max(max_abs(&(&sub.t_out - &r_inv_x)) / max_abs(&sub.t_out));
    }
    worst
}

fn c06_exhaustiveness() -> Outcome {
    let hippe_err = exhaustiveness(&hippe_periodic(), 20.0, 11);
    let hallam_err = exhaustiveness(&hallam(), 30.0, 12);
    check(
        hippe_err <= 1e-7 && hallam_err <= 1e-7,
        format!("relative err Hippe {hippe_err:.2e}, Hallam {hallam_err:.2e}"),
    )
}

fn diact_algebra(model: &CompartmentalModel, t_end: f64) -> f64 {
    let part = run(model, t_end, &OdeConfig::default());
    let st = diact_storages(&part, &DiactKind::ALL, 0.0).unwrap();
    let n = model.n;
    let mut worst = 0.0f64;
    let scopes: Vec<FlowScope> = std::iter::once(FlowScope::Composite)
        .chain((0..=n).map(FlowScope::Subsystem))
        .chain(std::iter::once(FlowScope::Simple))
        .collect();
    for &t in st.times() {
        let set = st.distributions(t).unwrap();
        let mut mats: Vec<[DMatrix<f64>; 5]> = scopes
            .iter()
            .map(|&s| DiactKind::ALL.map(|k| set.flows(k, s).unwrap()))
            .collect();
        mats.push(DiactKind::ALL.map(|k| st.composite(k, t).unwrap()));
        mats.push(DiactKind::ALL.map(|k| st.simple(k, t).unwrap()));
        for l in 0..=n {
            mats.push(DiactKind::ALL.map(|k| st.subsystem(k, l, t).unwrap()));
        }
        for [d, i, a, c, tr] in &mats {
            worst = worst.max(max_abs(&(tr - d - i)));
            worst = worst.max(max_abs(&(tr - c - a)));
            for q in 0..n {
                worst = worst.max((c[(q, q)] - tr[(q, q)]).abs());
                worst = worst.max((i[(q, q)] - tr[(q, q)]).abs());
            }
        }
    }
    worst
}

fn c07_diact_algebra() -> Outcome {
    let hippe_err = diact_algebra(&hippe_periodic(), 10.0);
    let hallam_err = diact_algebra(&hallam(), 20.0);
    check(
        hippe_err <= 1e-8 && hallam_err <= 1e-8,
        format!("max err Hippe {hippe_err:.2e}, Hallam {hallam_err:.2e}"),
    )
}

fn c08_hallam_residence_times() -> Outcome {
    let started = Instant::now();
    let pulse = run(&hallam_pulse(), 30.0, &OdeConfig::default());
    let expect = [
        (10.0, [0.98, 0.27, 0.33]),
        (15.0, [0.85, 0.27, 0.33]),
        (25.0, [0.98, 0.27, 0.33]),
    ];
    let mut worst = 0.0f64;
    let mut seen = Vec::new();
    for (t, want) in expect {
        let r = pulse.intensities(t).unwrap().r;
        for i in 0..3 {
            worst = worst.max((r[i] - want[i]).abs());
        }
        seen.push(format!("R({t}) = [{:.3}, {:.3}, {:.3}]", r[0], r[1], r[2]));
    }
    let steady = run(&hallam(), 30.0, &OdeConfig::default());
    let r1 = steady.intensities(30.0).unwrap().r[0];
    worst = worst.max((r1 - 0.87).abs());
    let secs = started.elapsed().as_secs_f64();
    check(
        worst <= 0.01 && secs < 10.0,
        format!(
            "{}; constant r1 = {r1:.3}; max dev {worst:.3}, {secs:.2} s",
            seen.join(", ")
        ),
    )
}

fn c09_hallam_substorage() -> Outcome {
    let model = hallam();
    let part = run(&model, 20.0, &OdeConfig::default());
    let x13 = part.state(20.0).unwrap().x_sub[(0, 2)];
    let x8 = part.aggregate(8.0).unwrap();
    let residual = model.rhs(8.0, x8.as_slice()).unwrap().amax();
    check(
        (x13 - 0.64).abs() <= 0.01 && residual < 1e-3,
        format!("x13(20) = {x13:.4}, residual(8) = {residual:.2e}"),
    )
}

fn c10_hallam_exit_bound() -> Outcome {
    let model = hallam();
    let part = run(&model, 30.0, &OdeConfig::default());
    let path = parse_path("k=1: 0 -> 1 -> 2 -> 3 -> 1 -> 2 -> 1 -> 0", &model).unwrap();
    let rec = transient_flows(&part, &path, 0.0, SolveMode::Simultaneous).unwrap();
    let mut peak = (0.0f64, 0.0);
    for step in 0..=6000 {
        let t = step as f64 * 0.005;
        let out = rec.nodes_at(t).unwrap().last().unwrap().outflow;
        if out > peak.0 {
            peak = (out, t);
        }
    }
    check(peak.0 <= 7e-5, format!("max {:.3e} at t = {:.2}", peak.0, peak.1))
}

fn c11_hallam_interactions() -> Outcome {
    let part = run(&hallam_pulse(), 30.0, &OdeConfig::default());
    let st = diact_storages(&part, &DiactKind::ALL, 0.0).unwrap();
    let grid: Vec<f64> = (5..=300).map(|s| s as f64 * 0.1).collect();
    let reports: Vec<_> = DiactKind::ALL
        .iter()
        .map(|&k| {
            classify(
                &st,
                (2, 1),
                k,
                Basis::Storage,
                Source::Composite,
                Normalization::PairwiseThroughflow,
                &grid,
            )
            .unwrap()
        })
        .collect();
    let [d, i, a, c, tr] = [0, 1, 2, 3, 4].map(|q| &reports[q].points);
    let mut sign_misses = 0;
    let mut order_misses = 0;
    let mut first_miss = None;
    for p in 0..grid.len() {
        let t = grid[p];
        if (5.0..=25.0).contains(&t) {
            let ok = d[p].delta == Sign::Positive && [i, a, c, tr].iter().all(|s| s[p].delta == Sign::Negative);
            if !ok {
                sign_misses += 1;
                first_miss.get_or_insert(t);
            }
        }
        let ordered = c[p].mu < d[p].mu && d[p].mu < a[p].mu && a[p].mu < tr[p].mu && tr[p].mu < i[p].mu;
        if !ordered {
            order_misses += 1;
            first_miss.get_or_insert(t);
        }
    }
    let at20 = grid.iter().position(|&t| (t - 20.0).abs() < 1e-9).unwrap();
    let mus = [c, d, a, tr, i].map(|s| s[at20].mu);
    check(
            sign_misses == 0 && order_misses == 0,
            format!(
                "sign misses {sign_misses}, order misses {order_misses}, first {first_miss:?}; mu(20) c,d,a,t,i = {:.3}, {:.3}, {:.3}, {:.3}, {:.3}",
                mus[0], mus[1], mus[2], mus[3], mus[4]
            ),
        )
}

fn c12_static_dualities() -> Outcome {
    let model = hippe();
    let x_ss = find_steady_state(&model, &model.x_init, &SteadyConfig::default()).unwrap();
    let sol = static_partition(&model, &x_ss).unwrap();
    let dual = output_oriented(&sol).unwrap();
    let xd = DMatrix::from_diagonal(&sol.x_ss);
    let td = DMatrix::from_diagonal(&sol.tau);
    let zd = DMatrix::from_diagonal(&sol.z);
    let rd = DMatrix::from_diagonal(&sol.r);
    let mut worst = 0.0f64;
    worst = worst.max(max_abs(&(&sol.s_mat * &xd - &xd * dual.s_bar.transpose())));
    worst = worst.max(max_abs(&(&sol.n_mat * &td - &td * dual.n_bar.transpose())));
    let sz = &sol.s_mat * &sol.z;
    worst = worst.max((&sz - &sol.x_ss).amax());
    worst = worst.max((&rd * &sol.n_mat * &sol.z - &sol.x_ss).amax());
    worst = worst.max((&rd * &sol.tau - &sol.x_ss).amax());
    worst = worst.max(max_abs(&(&sol.s_mat * &zd - &sol.x_sub)));
    worst = worst.max(max_abs(&(&rd * &sol.n_mat * &zd - &sol.x_sub)));
    worst = worst.max(max_abs(&(&rd * &sol.t_sub - &sol.x_sub)));

    let mut lap = parse_path("k=1: 0 -> 1 -> 2 -> 1", &model).unwrap();
    lap.cycles = 60;
    let (nodes, arrivals) = static_cumulative(&sol, &lap, Some(sol.z[0])).unwrap();
    let summed: f64 = arrivals.iter().map(|&a| nodes[a].inflow).sum();
    let cycling = static_diact(&sol, DiactKind::Cycling).unwrap().t_simple[(0, 0)];
    let g = 8.0 / 35.0;
    let geometric = (summed - cycling).abs().max((summed - g / (1.0 - g)).abs());
    check(
        worst <= 1e-9 && geometric <= 1e-9,
        format!("identities {worst:.2e}; laps {summed:.12} vs cycling {cycling:.12}"),
    )
}

fn c13_solver_cross_validation() -> Outcome {
    let model = hippe();
    let sys = linear_system(&model).unwrap();
    let cfg = tight();
    let part = run(&model, 10.0, &cfg);
    let x0 = model.x_init.clone();
    let mut worst = 0.0f64;
    for step in 0..=100 {
        let t = step as f64 * 0.1;
        let exact = linear_solution(&sys, &x0, 0.0, t, &cfg).unwrap();
        let st = part.state(t).unwrap();
        worst = worst.max(max_abs(&(&st.x_sub - &exact.x_sub)));
        worst = worst.max((&st.x0 - &exact.x0).amax());
    }
    let inv = sys.a.clone().try_inverse().unwrap();
    let steady_err = max_abs(&(scaled_substorage(&sys.a, 50.0) + inv));
    check(
        worst <= 1e-7 && steady_err <= 1e-8,
        format!("trajectory {worst:.2e}, S(50) vs -A^-1 {steady_err:.2e}"),
    )
}

type Criterion = (&'static str, &'static str, fn() -> Outcome);

const CRITERIA: [Criterion; 14] = [
    ("c01", "Hippe aggregate x(t) = 2e^-t + 1", c01_hippe_aggregate),
    (
        "c02",
        "Hippe static and long-time substorage",
        c02_hippe_static_substorage,
    ),
    (
        "c03",
        "Hippe periodic substorages and subthroughflows",
        c03_hippe_periodic_closed_forms,
    ),
    (
        "c04",
        "initial-subsystem transfer flow and storage",
        c04_initial_transfer_closed_forms,
    ),
    (
        "c04b",
        "printed composite transfer expressions",
        c04b_printed_composite_transfer,
    ),
    (
        "c05",
        "path-based vs dynamic composite transfer",
        c05_path_dynamic_reconciliation,
    ),
    (
        "c06",
        "storage, flow and subthroughflow exhaustiveness",
        c06_exhaustiveness,
    ),
    ("c07", "transfer splits and diagonal reflexivity", c07_diact_algebra),
    ("c08", "Hallam residence times", c08_hallam_residence_times),
    (
        "c09",
        "Hallam x_{1_3} limit and steady-state onset",
        c09_hallam_substorage,
    ),
    ("c10", "Hallam exit flow along the extended path", c10_hallam_exit_bound),
    (
        "c11",
        "Hallam producer-consumer storage interactions",
        c11_hallam_interactions,
    ),
    (
        "c12",
        "static dualities, holistic relations and cycling",
        c12_static_dualities,
    ),
    (
        "c13",
        "integrator vs closed-form linear solution",
        c13_solver_cross_validation,
    ),
];

/// Checks whose reference values are known to be mistyped. They are run
/// against the same bound and reported as FAIL; the target fails only if
/// one of them unexpectedly passes or another criterion fails.
const EXPECTED_FAILURES: [&str; 1] = ["c04b"];

fn main() {
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = Vec::new();
    let mut unexpected = Vec::new();
    for (id, what, f) in CRITERIA {
        if !filter.is_empty() && !filter.iter().any(|p| id.contains(p.as_str())) {
            continue;
        }
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let expected = EXPECTED_FAILURES.contains(&id);
        match outcome {
            Ok(detail) => {
                println!("{id} PASS {what}: {detail}");
                if expected {
                    unexpected.push(format!("{id} passed but is listed as an expected failure"));
                }
            }
            Err(detail) => {
                let note = if expected {
                    " [expected failure: mistyped reference]"
                } else {
                    ""
                };
                println!("{id} FAIL {what}: {detail}{note}");
                failed.push(id);
                if !expected {
                    unexpected.push(format!("{id} failed"));
                }
            }
        }
    }
    println!("acceptance: {} failed ({})", failed.len(), failed.join(", "));
    if !unexpected.is_empty() {
        println!("acceptance: unexpected outcome: {}", unexpected.join("; "));
        std::process::exit(1);
    }
}
