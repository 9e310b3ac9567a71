//! Acceptance suite. Runs every criterion, prints one `PASS`/`FAIL` line per
//! criterion and exits non-zero if any failed.
//!
//! `cargo test -p certsynth-cli --test acceptance`

use std::panic::{self, AssertUnwindSafe};
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use certsynth::dynamics::{self, Builtin};
use certsynth::dynexpr::{self, Expr};
use certsynth::experiment::{ExperimentConfig, Setup};
use certsynth::synthesis::{self, SynthesisResult};
use certsynth::{bounds, validation, CertificateNet, NetworkSpec, Trajectory};

type Verdict = Result<String, String>;

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

/// One synthesis run kept around for the cross-cutting checks.
struct Run {
    label: String,
    cfg: ExperimentConfig,
    setup: Setup,
    samples: Vec<Trajectory>,
    result: SynthesisResult,
}

impl Run {
    fn new(label: &str, cfg: ExperimentConfig) -> Result<Self, String> {
        let setup = cfg.build().map_err(|e| e.to_string())?;
        let samples = dynamics::sample_trajectories(&setup.system, &setup.dist, cfg.samples.n, cfg.horizon)
            .map_err(|e| e.to_string())?;
        let ids: Vec<usize> = (0..samples.len()).collect();
        let theta0 = setup.model.net().init_params(cfg.synth.seed);
        let result = synthesis::algorithm2(&setup.model, &samples, &ids, &theta0, &cfg.hyper())
            .map_err(|e| e.to_string())?;
        Ok(Run { label: label.to_string(), cfg, setup, samples, result })
    }
}

#[derive(Default)]
struct Shared {
    runs: Vec<Run>,
    /// Label and trace of every algorithm1 call made outside `runs`.
    traces: Vec<(String, Vec<f64>)>,
}

fn preset(name: &str, overrides: &[&str]) -> Result<ExperimentConfig, String> {
    let overrides: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    certsynth::preset(name)
        .and_then(|c| c.with_overrides(&overrides))
        .map_err(|e| e.to_string())
}

// 1 -------------------------------------------------------------------------

fn direct_zero_violations(_: &mut Shared) -> Verdict {
    let t = Instant::now();
    let eps = bounds::epsilon_direct(0, 1e-5, 1000).map_err(|e| e.to_string())?;
    let secs = t.elapsed().as_secs_f64();
    ensure((eps - 0.01825).abs() <= 1e-4, format!("eps = {eps}"))?;
    ensure(secs < 1.0, format!("took {secs:.3}s"))?;
    Ok(format!("eps_direct(0, 1e-5, 1000) = {eps:.6} in {:.2} ms", secs * 1e3))
}

// 2 -------------------------------------------------------------------------

fn boundary_case(_: &mut Shared) -> Verdict {
    for n in [10, 100, 1000] {
        for beta in [1e-5, 0.05] {
            let c = bounds::epsilon_compression(n, beta, n).map_err(|e| e.to_string())?;
            let d = bounds::epsilon_direct(n, beta, n).map_err(|e| e.to_string())?;
            ensure(c == 1.0 && d == 1.0, format!("N={n} beta={beta}: {c} {d}"))?;
        }
    }
    Ok("both bounds are exactly 1 at k = N for N in {10, 100, 1000}".into())
}

// 3 -------------------------------------------------------------------------

/// `m * 2^e`, enough range for binomial probabilities of any size here.
#[derive(Clone, Copy)]
struct Scaled {
    m: f64,
    e: i64,
}

impl Scaled {
    const ONE: Scaled = Scaled { m: 1.0, e: 0 };
    const ZERO: Scaled = Scaled { m: 0.0, e: 0 };

    fn norm(mut self) -> Self {
        if self.m == 0.0 {
            return Scaled::ZERO;
        }
        let big = 2f64.powi(64);
        while self.m.abs() >= big {
            self.m /= big;
            self.e += 64;
        }
        while self.m.abs() < 1.0 / big {
            self.m *= big;
            self.e -= 64;
        }
        self
    }

    fn mul(self, v: f64) -> Self {
        Scaled { m: self.m * v, e: self.e }.norm()
    }

    fn add(self, o: Scaled) -> Self {
        if self.m == 0.0 {
            return o;
        }
        if o.m == 0.0 {
            return self;
        }
        let (hi, lo) = if self.e >= o.e { (self, o) } else { (o, self) };
        let shift = (hi.e - lo.e).min(2000) as i32;
        Scaled { m: hi.m + lo.m * 2f64.powi(-shift), e: hi.e }.norm()
    }

    fn to_f64(self) -> f64 {
        let mut v = self.m;
        let mut e = self.e;
        while e > 0 {
            let s = e.min(512);
            v *= 2f64.powi(s as i32);
            e -= s;
        }
        while e < 0 {
            let s = (-e).min(512);
            v *= 2f64.powi(-(s as i32));
            e += s;
        }
        v
    }
}

/// Compression equation left-hand side by plain recurrences on the terms
/// `C(m,k)/C(N,k) (1-ε)^(m-N)`, walking outwards from `m = N` where the term is 1.
fn oracle_compression_lhs(k: usize, beta: f64, n: usize, eps: f64) -> f64 {
    let q = 1.0 - eps;
    let mut low = 0.0;
    let mut t = 1.0;
    for m in (k + 1..=n).rev() {
        t *= (m - k) as f64 / m as f64 / q;
        low += t;
    }
    let mut high = 0.0;
    let mut t = 1.0;
    for m in n..4 * n {
        t *= (m + 1) as f64 / (m + 1 - k) as f64 * q;
        high += t;
    }
    beta / (2.0 * n as f64) * low + beta / (6.0 * n as f64) * high
}

/// `P[Bin(N, ε) <= r]` by the pmf recurrence in scaled arithmetic.
fn oracle_binomial_tail(r: usize, n: usize, eps: f64) -> Scaled {
    let q = 1.0 - eps;
    let mut p = Scaled::ONE;
    for _ in 0..n {
        p = p.mul(q);
    }
    let mut sum = p;
    for j in 0..r {
        p = p.mul((n - j) as f64 / (j + 1) as f64 * eps / q);
        sum = sum.add(p);
    }
    sum
}

fn root_residuals(_: &mut Shared) -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(20_250_301);
    let (mut worst_c, mut worst_d) = (0.0f64, 0.0f64);
    for _ in 0..50 {
        let n = rng.random_range(1..=2000usize);
        let k = rng.random_range(0..n);
        let beta = 10f64.powf(rng.random_range(-6.0..(0.5f64).log10()));

        let ec = bounds::epsilon_compression(k, beta, n).map_err(|e| format!("({k},{beta},{n}): {e}"))?;
        let lhs = oracle_compression_lhs(k, beta, n, ec);
        let rc = (lhs - 1.0).abs();
        ensure(rc <= 1e-6, format!("compression ({k}, {beta:e}, {n}): eps {ec}, LHS {lhs}"))?;
        worst_c = worst_c.max(rc);

        let ed = bounds::epsilon_direct(k, beta, n).map_err(|e| format!("({k},{beta},{n}): {e}"))?;
        let target = beta / n as f64;
        let ratio = oracle_binomial_tail(k, n, ed).mul(1.0 / target).to_f64();
        let tail = ratio * target;
        ensure(
            (tail - target).abs() <= 1e-6 && (ratio - 1.0).abs() <= 1e-6,
            format!("direct ({k}, {beta:e}, {n}): eps {ed}, tail/target {ratio}"),
        )?;
        worst_d = worst_d.max((ratio - 1.0).abs());
    }
    Ok(format!(
        "50 draws; max |LHS-1| compression {worst_c:.2e}, max relative tail error direct {worst_d:.2e}"
    ))
}

// 4 -------------------------------------------------------------------------

fn monotonicity(_: &mut Shared) -> Verdict {
    let ks = [0usize, 1, 2, 3, 5, 8, 13, 21, 34, 55];
    let ns = [100usize, 200, 300, 500, 750, 1000, 1500, 2000, 3000, 5000];
    let beta = 1e-5;
    let mut table = vec![vec![0.0; ns.len()]; ks.len()];
    for (i, &k) in ks.iter().enumerate() {
        for (j, &n) in ns.iter().enumerate() {
            table[i][j] = bounds::epsilon_compression(k, beta, n).map_err(|e| e.to_string())?;
        }
    }
    let mut violations = Vec::new();
    for i in 0..ks.len() {
        for j in 0..ns.len() {
            if i + 1 < ks.len() && table[i + 1][j] < table[i][j] {
                violations.push(format!("k {}->{} at N={}", ks[i], ks[i + 1], ns[j]));
            }
            if j + 1 < ns.len() && table[i][j + 1] > table[i][j] {
                violations.push(format!("N {}->{} at k={}", ns[j], ns[j + 1], ks[i]));
            }
        }
    }
    ensure(violations.is_empty(), violations.join("; "))?;
    Ok("100 queries, 0 violations".into())
}

// 5 -------------------------------------------------------------------------

fn gradients(_: &mut Shared) -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for (dim, hidden) in [(2, vec![5]), (2, vec![5, 5]), (8, vec![10, 10])] {
        let net = CertificateNet::new(NetworkSpec::new(dim, hidden.clone()));
        for trial in 0..100 {
            let mut theta = net.init_params(trial);
            for t in theta.iter_mut() {
                *t += rng.random_range(-1.0..1.0);
            }
            let x: Vec<f64> = (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect();
            let g = net.grad_params(&theta, &x);
            let h = 1e-6;
            let fd: Vec<f64> = (0..theta.len())
                .map(|i| {
                    let mut p = theta.clone();
                    p[i] += h;
                    let up = net.eval(&p, &x);
                    p[i] -= 2.0 * h;
                    (up - net.eval(&p, &x)) / (2.0 * h)
                })
                .collect();
            let diff: f64 = g.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let scale: f64 = g.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-12);
            let rel = diff / scale;
            ensure(rel <= 1e-5, format!("{hidden:?} trial {trial}: relative error {rel:e}"))?;
            worst = worst.max(rel);
        }
    }
    Ok(format!("300 checks over [5], [5,5], [10,10]; max relative error {worst:.2e}"))
}

// 6 -------------------------------------------------------------------------

fn reproducibility(shared: &mut Shared) -> Verdict {
    let t = Instant::now();
    let cfg = preset("spiral-safe", &["samples.N=100"])?;
    let setup = cfg.build().map_err(|e| e.to_string())?;
    let model = &setup.model;
    let samples = dynamics::sample_trajectories(&setup.system, &setup.dist, 100, cfg.horizon)
        .map_err(|e| e.to_string())?;
    let all: Vec<usize> = (0..100).collect();
    let theta0 = model.net().init_params(cfg.synth.seed);
    let h = cfg.hyper();
    let err = |e: synthesis::SynthesisError| e.to_string();

    let a = synthesis::algorithm1(model, &samples, &all, &theta0, &h).map_err(err)?;
    let mut c = a.compression.clone();
    c.sort_unstable();
    let a_again = synthesis::algorithm1(model, &samples, &c, &theta0, &h).map_err(err)?;
    shared.traces.push(("algorithm1 on D (N=100)".into(), a.loss_trace.clone()));
    shared.traces.push(("algorithm1 on C_N".into(), a_again.loss_trace.clone()));
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    ensure(bits(&a.theta) == bits(&a_again.theta), "algorithm1 replay on C_N changed theta")?;

    let r = synthesis::algorithm2(model, &samples, &all, &theta0, &h).map_err(err)?;
    let mut rn = r.compression.clone();
    rn.sort_unstable();
    let r_again = synthesis::algorithm2(model, &samples, &rn, &theta0, &h).map_err(err)?;
    for (i, tr) in r.loss_traces.iter().chain(&r_again.loss_traces).enumerate() {
        shared.traces.push((format!("algorithm2 replay call {i}"), tr.clone()));
    }
    ensure(bits(&r.theta) == bits(&r_again.theta), "algorithm2 replay on R_N changed theta")?;
    let secs = t.elapsed().as_secs_f64();
    ensure(secs < 600.0, format!("took {secs:.0}s"))?;
    Ok(format!(
        "|C_N| = {}, |R_N| = {}, both replays bitwise identical ({secs:.1}s)",
        c.len(),
        rn.len()
    ))
}

// 7 -------------------------------------------------------------------------

fn trace_monotone(shared: &mut Shared) -> Verdict {
    let mut traces: Vec<(String, &[f64])> = shared.traces.iter().map(|(l, t)| (l.clone(), t.as_slice())).collect();
    for run in &shared.runs {
        for (i, t) in run.result.loss_traces.iter().enumerate() {
            traces.push((format!("{} call {i}", run.label), t));
        }
    }
    ensure(!traces.is_empty(), "no traces recorded")?;
    let mut points = 0;
    for (label, t) in &traces {
        points += t.len();
        if let Some(k) = t.windows(2).position(|w| w[1] > w[0]) {
            return Err(format!("{label}: L rises at step {}: {} -> {}", k + 1, t[k], t[k + 1]));
        }
    }
    Ok(format!("{} traces, {points} iterates, none increasing", traces.len()))
}

// 8 -------------------------------------------------------------------------

fn spiral_safe(shared: &mut Shared) -> Verdict {
    let run = Run::new("spiral-safe N=1000", preset("spiral-safe", &[])?)?;
    let res = &run.result;
    let eps = bounds::epsilon_compression(res.compression.len(), run.cfg.beta, run.cfg.samples.n)
        .map_err(|e| e.to_string())?;
    let v = validation::empirical_risks(
        &run.setup.model,
        &res.theta,
        &run.setup.system,
        &run.cfg.property.initial,
        1000,
        run.cfg.validation.seed,
    )
    .map_err(|e| e.to_string())?;
    let summary = format!(
        "final max loss {}, R_N {}, eps {eps:.4}, certificate risk {} on {} fresh, {:.1}s",
        res.final_max_loss,
        res.compression.len(),
        v.certificate_risk,
        v.m,
        res.wall_time_s
    );
    let ok = res.certified && res.final_max_loss == 0.0 && v.certificate_violations == 0 && eps <= 0.15;
    shared.runs.push(run);
    ensure(ok, summary.clone())?;
    Ok(summary)
}

// 9 -------------------------------------------------------------------------

fn spiral_unsafe(shared: &mut Shared) -> Verdict {
    let run = Run::new("spiral-unsafe N=1000", preset("spiral-unsafe", &[])?)?;
    let res = &run.result;
    let spec = run.setup.model.spec();
    let violations = validation::direct_discard_count(spec, &run.samples);
    let eps_d = bounds::epsilon_direct(violations, run.cfg.beta, run.cfg.samples.n).map_err(|e| e.to_string())?;
    let v = validation::empirical_risks(
        &run.setup.model,
        &res.theta,
        &run.setup.system,
        &run.cfg.property.initial,
        run.cfg.validation.m,
        run.cfg.validation.seed,
    )
    .map_err(|e| e.to_string())?;
    let summary = format!(
        "discarded {}, property risk {} on {} fresh, {violations} violating samples, eps_direct {eps_d:.4}",
        res.compression.len(),
        v.property_risk,
        v.m
    );
    let ok = !res.compression.is_empty()
        && (0.003..=0.03).contains(&v.property_risk)
        && (0.03..=0.06).contains(&eps_d);
    shared.runs.push(run);
    ensure(ok, summary.clone())?;
    Ok(summary)
}

// 10 ------------------------------------------------------------------------

fn telescoping(shared: &mut Shared) -> Verdict {
    let run = Run::new("spiral-reach N=1000", preset("spiral-reach", &[])?)?;
    let model = &run.setup.model;
    let res = &run.result;
    let delta = model.spec().delta;
    let horizon = run.cfg.horizon;
    let discarded: std::collections::HashSet<usize> = res.compression.iter().copied().collect();
    // Fresh trajectories that meet every condition are held to the same invariant.
    let dist = certsynth::SamplingDistribution::new(run.cfg.property.initial.clone(), run.cfg.validation.seed);
    let fresh = dynamics::sample_validation_trajectories(&run.setup.system, &dist, 1000, horizon)
        .map_err(|e| e.to_string())?;
    let retained = run.samples.iter().enumerate().filter(|(i, _)| !discarded.contains(i)).map(|(_, xi)| xi);

    let (mut train, mut held_out, mut at_horizon) = (0, 0, 0);
    let mut failures = Vec::new();
    let mut ws = model.net().workspace();
    for (xi, is_train) in retained.map(|xi| (xi, true)).chain(fresh.iter().map(|xi| (xi, false))) {
        let zero_loss = model.check_conditions(&res.theta, xi).map_err(|e| e.to_string())?;
        if is_train && !zero_loss {
            failures.push("retained training trajectory with positive loss".to_string());
        }
        if !zero_loss {
            continue;
        }
        if is_train {
            train += 1;
        } else {
            held_out += 1;
        }
        let values = model.values_along(&res.theta, xi, &mut ws);
        // k_G = T covers both a first crossing at T and no crossing at all.
        if certsynth::loss::k_goal(&values, delta) == horizon {
            at_horizon += 1;
            if values[horizon] > -delta + 1e-9 {
                failures.push(format!("V(x(T)) = {}", values[horizon]));
            }
        }
    }
    let summary = format!(
        "{train} retained training + {held_out} fresh zero-loss trajectories, {at_horizon} with k_G = T, {} violations",
        failures.len()
    );
    let (certified, max_loss) = (res.certified, res.final_max_loss);
    shared.runs.push(run);
    ensure(certified, format!("reach run not certified: max loss {max_loss}"))?;
    ensure(failures.is_empty(), format!("{summary}: {}", failures.join("; ")))?;
    Ok(summary)
}

// 11 ------------------------------------------------------------------------

fn compare_bounds(_: &mut Shared) -> Verdict {
    let out = Command::new(env!("CARGO_BIN_EXE_certsynth"))
        .args(["compare-bounds", "--preset", "spiral-safe", "--ns", "100,250,500,1000"])
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), String::from_utf8_lossy(&out.stderr).into_owned())?;
    let csv = String::from_utf8(out.stdout).map_err(|e| e.to_string())?;
    let mut lines = csv.lines();
    ensure(
        lines.next() == Some("N,R_N,eps_compression,direct_violations,eps_direct"),
        "unexpected header",
    )?;
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|v| v.parse::<f64>().map_err(|e| e.to_string())).collect())
        .collect::<Result<_, _>>()?;
    ensure(rows.len() == 4, format!("{} rows", rows.len()))?;
    let gaps: Vec<f64> = rows.iter().map(|r| r[2] - r[4]).collect();
    let shown: Vec<String> = rows
        .iter()
        .map(|r| format!("N={} R_N={} {:.4}>={:.4}", r[0], r[1], r[2], r[4]))
        .collect();
    let summary = shown.join(", ");
    ensure(gaps.iter().all(|&g| g >= 0.0), format!("compression below direct: {summary}"))?;
    ensure(gaps.windows(2).all(|w| w[1] < w[0]), format!("gap not decreasing: {summary}"))?;
    Ok(summary)
}

// 12 ------------------------------------------------------------------------

fn parser(_: &mut Shared) -> Verdict {
    let x = [0.7, -1.3, 2.1, 0.4];
    let (x1, x2, x3, x4) = (x[0], x[1], x[2], x[3]);
    // Source, same expression with every grouping explicit, value computed in Rust.
    let cases: Vec<(&str, &str, f64)> = vec![
        ("x1 - 0.05*x2", "x1 - (0.05*x2)", x1 - 0.05 * x2),
        ("x2 + 0.05*(x1 - x2)", "x2 + (0.05*(x1 - x2))", x2 + 0.05 * (x1 - x2)),
        (
            "x1 + 0.1*(x1*x2/5 - x3*x4/2)",
            "x1 + (0.1*((((x1*x2)/5)) - ((x3*x4)/2)))",
            x1 + 0.1 * (x1 * x2 / 5.0 - x3 * x4 / 2.0),
        ),
        ("x2 + 0.1*cos(x4)", "x2 + (0.1*(cos(x4)))", x2 + 0.1 * x4.cos()),
        ("x3 + 0.001*sqrt(abs(x1))", "x3 + (0.001*sqrt(abs(x1)))", x3 + 0.001 * x1.abs().sqrt()),
        (
            "x4 + 0.1*(-x1 - x2^2 + sin(x4))",
            "x4 + (0.1*(((-x1) - (x2^2)) + sin(x4)))",
            x4 + 0.1 * (-x1 - x2 * x2 + x4.sin()),
        ),
        ("1 - 2 - 3", "(1 - 2) - 3", -4.0),
        ("8/4/2", "(8/4)/2", 1.0),
        ("x2^3*x1", "(x2^3)*x1", x2 * x2 * x2 * x1),
        ("-x1^2", "-(x1^2)", -(x1 * x1)),
        ("2*-x1", "2*(-x1)", 2.0 * -x1),
        ("-(x1 + x2)", "-((x1 + x2))", -(x1 + x2)),
        ("x1*x2 + x3*x4", "(x1*x2) + (x3*x4)", x1 * x2 + x3 * x4),
        ("x1 + x2*x3", "x1 + (x2*x3)", x1 + x2 * x3),
        ("(x1 + x2)*x3", "((x1 + x2))*x3", (x1 + x2) * x3),
        ("x1 - (x2 - x3)", "x1 - ((x2 - x3))", x1 - (x2 - x3)),
        ("x1/(x2*x3)", "x1/((x2*x3))", x1 / (x2 * x3)),
        ("x1/x2*x3", "(x1/x2)*x3", x1 / x2 * x3),
        ("--x1", "-(-x1)", x1),
        ("sin(x1)^2", "(sin(x1))^2", x1.sin() * x1.sin()),
        ("cos(x1 - x2)", "cos((x1 - x2))", (x1 - x2).cos()),
        ("1e-3*x1", "(1e-3)*x1", 1e-3 * x1),
        ("2.5e2 - x2", "(2.5e2) - x2", 250.0 - x2),
        ("abs(-3)", "abs((-3))", 3.0),
        ("x1 ^ 0", "(x1)^0", 1.0),
        ("  x1+x2  ", "(x1)+(x2)", x1 + x2),
        ("0.5*x1*x1 - 0.25", "((0.5*x1)*x1) - 0.25", 0.5 * x1 * x1 - 0.25),
        ("sqrt(x1*x1 + x2*x2)", "sqrt(((x1*x1) + (x2*x2)))", (x1 * x1 + x2 * x2).sqrt()),
        ("x1 - -x2", "x1 - (-x2)", x1 - -x2),
        ("(((x3)))", "x3", x3),
    ];
    let parse = |s: &str| dynexpr::parse(s).map_err(|e| format!("`{s}`: {e}"));
    for (src, grouped, want) in &cases {
        let e: Expr = parse(src)?;
        ensure(e == parse(grouped)?, format!("`{src}` parses differently from `{grouped}`"))?;
        let printed = e.to_string();
        ensure(parse(&printed)? == e, format!("`{src}` -> `{printed}` does not round-trip"))?;
        ensure(parse(&printed)?.to_string() == printed, format!("`{printed}` printing is not stable"))?;
        let got = e.eval(&x).map_err(|err| err.to_string())?;
        ensure(got.to_bits() == want.to_bits(), format!("`{src}` = {got}, expected {want}"))?;
    }

    // The four-state system written as expressions steps exactly like the built-in.
    let sources = &cases[2..6].iter().map(|c| c.0).collect::<Vec<_>>();
    let from_text = certsynth::System::from_expressions(sources).map_err(|e| e.to_string())?;
    let builtin = certsynth::System::Builtin(Builtin::Nonlinear4);
    let mut a = x.to_vec();
    let mut b = x.to_vec();
    for _ in 0..20 {
        a = from_text.step(&a).map_err(|e| e.to_string())?;
        b = builtin.step(&b).map_err(|e| e.to_string())?;
    }
    ensure(
        a.iter().zip(&b).all(|(p, q)| p.to_bits() == q.to_bits()),
        format!("expression system diverged: {a:?} vs {b:?}"),
    )?;
    Ok(format!("{} cases exact; four-state expressions match the built-in over 20 steps", cases.len()))
}

fn main() {
    type Criterion = fn(&mut Shared) -> Verdict;
    // Trace monotonicity goes last so that it sees every run.
    let order: [(usize, &str, Criterion); 12] = [
        (1, "direct bound exactness", direct_zero_violations),
        (2, "boundary case", boundary_case),
        (3, "root residual oracle", root_residuals),
        (4, "monotonicity", monotonicity),
        (5, "gradient correctness", gradients),
        (6, "compression reproducibility", reproducibility),
        (8, "spiral safety end-to-end", spiral_safe),
        (9, "partially unsafe spiral", spiral_unsafe),
        (10, "telescoping invariant", telescoping),
        (11, "bound comparison curve", compare_bounds),
        (12, "parser suite", parser),
        (7, "loss-trace monotonicity", trace_monotone),
    ];
    let mut shared = Shared::default();
    let mut lines = Vec::new();
    for (id, name, f) in order {
        let t = Instant::now();
        let verdict = panic::catch_unwind(AssertUnwindSafe(|| f(&mut shared)))
            .unwrap_or_else(|p| Err(format!("panicked: {p:?}")));
        let (tag, detail) = match &verdict {
            Ok(d) => ("PASS", d.as_str()),
            Err(d) => ("FAIL", d.as_str()),
        };
        let line = format!("criterion {id:>2} {tag}  {name}: {detail} [{:.1}s]", t.elapsed().as_secs_f64());
        eprintln!("{line}");
        lines.push((id, verdict.is_ok(), line));
    }
    lines.sort_by_key(|l| l.0);
    println!("\nacceptance summary");
    for (_, _, line) in &lines {
        println!("{line}");
    }
    let failed = lines.iter().filter(|l| !l.1).count();
    println!("{} passed, {failed} failed", lines.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
