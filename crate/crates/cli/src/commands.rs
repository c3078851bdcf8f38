use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use multiflag::arm_model::{gamma, gamma_inverse, AngularConfig, ArmDims, ConfigRecord};
use multiflag::dynamics::{
    integrate_arm, integrate_car, integrate_cartesian, integrate_subarm_induced, singular_scan as scan_states,
    velocity_report_at, ArmState, ControlSignal, ControlValue, IntegratorSettings, SingularEvent,
    Trajectory, TrajectoryRecord,
};
use multiflag::flag_verifier::{FlagReport, Verdict, VerifyOptions};
use multiflag::sampling::RegularSampling;
use multiflag::sweep::{sample_config, sample_rng, verify_sweep, Execution, SampleKind};
use serde::{Deserialize, Serialize};

use crate::args::{Controls, Mode, Preset, RunArgs, ScanArgs, SimulateArgs, VerifyArgs};

const RANDOM_CONFIG_STREAM: usize = 0;
const RANDOM_CONTROL_STREAM: usize = 1;

#[derive(Deserialize)]
struct ControlFile {
    times: Vec<f64>,
    values: Vec<ControlValue>,
}

fn dims_of(k: usize, n: usize) -> Result<ArmDims> {
    ensure!(k >= 1, "k must be at least 1");
    Ok(ArmDims::new(k, n)?)
}

fn read_config(path: &Path, dims: ArmDims) -> Result<AngularConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let record: ConfigRecord =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    ensure!(
        record.k == dims.k && record.n == dims.n,
        "{} holds a k = {}, n = {} configuration, expected k = {}, n = {}",
        path.display(),
        record.k,
        record.n,
        dims.k,
        dims.n
    );
    Ok(AngularConfig::try_from(record)?)
}

fn initial_config(run: &RunArgs, dims: ArmDims) -> Result<AngularConfig> {
    if let Some(path) = &run.config {
        return read_config(path, dims);
    }
    Ok(match run.preset {
        Preset::Straight => {
            let d = dims.space();
            let mut e1 = nalgebra::DVector::zeros(d);
            e1[0] = 1.0;
            AngularConfig::new(nalgebra::DVector::zeros(d), vec![e1; dims.segments()])?
        }
        Preset::Random => sample_config(
            dims,
            SampleKind::Regular(RegularSampling::default()),
            run.seed,
            RANDOM_CONFIG_STREAM,
        ),
    })
}

fn control_signal(run: &RunArgs, k: usize) -> Result<ControlSignal> {
    if let Some(path) = &run.controls_file {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let file: ControlFile =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let signal = ControlSignal::sampled(file.times, file.values)?;
        ensure!(
            signal.k() == k,
            "{} has {} tangential channels, expected {k}",
            path.display(),
            signal.k()
        );
        return Ok(signal);
    }
    Ok(match run.controls {
        Controls::Constant => ControlSignal::constant(run.vn, vec![run.wn; k]),
        Controls::Sinusoidal => ControlSignal::sinusoidal(k, run.vn, run.wn, run.freq),
        Controls::Random => ControlSignal::random(k, &mut sample_rng(run.seed, RANDOM_CONTROL_STREAM)),
    })
}

fn validate_run(run: &RunArgs, dims: ArmDims) -> Result<()> {
    ensure!(run.t_end.is_finite() && run.t_end >= 0.0, "T must be finite and >= 0");
    ensure!(run.h.is_finite() && run.h > 0.0, "h must be > 0");
    ensure!(run.stride >= 1, "stride must be >= 1");
    match run.mode {
        Mode::Car => ensure!(dims.k == 1, "mode car requires k = 1"),
        Mode::Subarm => {
            let (Some(p), Some(m)) = (run.p, run.m) else {
                bail!("mode subarm requires --p and --m");
            };
            ensure!(
                1 <= p && p < m && m <= dims.n,
                "mode subarm requires 1 <= p < m <= n, got p = {p}, m = {m}, n = {}",
                dims.n
            );
        }
        Mode::Arm | Mode::Cartesian => {}
    }
    Ok(())
}

/// Simulation result with every trajectory rendered to arm coordinates.
struct Run {
    header: String,
    label: String,
    main: Trajectory<AngularConfig>,
    /// Full arm behind a sub-arm run.
    full: Option<Trajectory<AngularConfig>>,
    cascade: f64,
}

fn max_cascade<S: ArmState>(traj: &Trajectory<S>) -> Result<f64> {
    let mut worst = 0.0f64;
    for (i, q) in traj.states.iter().enumerate() {
        let r = velocity_report_at(q, traj.times[i], &traj.controls[i])?;
        worst = worst.max(r.cascade_residual);
    }
    Ok(worst)
}

fn run_simulation(run: &RunArgs, command: &str) -> Result<Run> {
    let dims = dims_of(run.dims.k, run.dims.n)?;
    validate_run(run, dims)?;
    let q0 = initial_config(run, dims)?;
    let u = control_signal(run, dims.k)?;
    let settings = IntegratorSettings::new(run.h)?.with_stride(run.stride);
    let mode = match run.mode {
        Mode::Car => "car".to_string(),
        Mode::Arm => "arm".to_string(),
        Mode::Cartesian => "cartesian".to_string(),
        Mode::Subarm => format!("subarm p={} m={}", run.p.unwrap(), run.m.unwrap()),
    };
    let source = match &run.config {
        Some(p) => format!("config={}", p.display()),
        None => format!("preset={:?}", run.preset).to_lowercase(),
    };
    let header = format!(
        "multiflag {command} mode={mode} k={} n={} {source} controls=\"{}\" seed={} T={} h={} stride={}",
        dims.k,
        dims.n,
        u.label(),
        run.seed,
        run.t_end,
        run.h,
        run.stride
    );
    let (main, full, cascade) = match run.mode {
        Mode::Car => {
            let t = integrate_car(&q0, &u, run.t_end, &settings)?;
            let c = max_cascade(&t)?;
            (t, None, c)
        }
        Mode::Arm => {
            let t = integrate_arm(&q0, &u, run.t_end, &settings)?;
            let c = max_cascade(&t)?;
            (t, None, c)
        }
        Mode::Cartesian => {
            let t = integrate_cartesian(&gamma_inverse(&q0), &u, run.t_end, &settings)?;
            let c = max_cascade(&t)?;
            (t.map_states(gamma)?, None, c)
        }
        Mode::Subarm => {
            let (sub, full) =
                integrate_subarm_induced(&q0, run.p.unwrap(), run.m.unwrap(), &u, run.t_end, &settings)?;
            let c = max_cascade(&sub)?;
            (sub, Some(full), c)
        }
    };
    Ok(Run {
        header,
        label: u.label().to_string(),
        main,
        full,
        cascade,
    })
}

#[derive(Serialize)]
struct Summary<'a> {
    header: &'a str,
    mode: String,
    k: usize,
    n: usize,
    seed: u64,
    controls: &'a str,
    t_end: f64,
    h: f64,
    samples: usize,
    max_drift: f64,
    max_step_drift: f64,
    max_collinearity: f64,
    max_cascade_residual: f64,
    /// `None` when the arm has a single segment.
    min_abs_a: Option<f64>,
    final_x0: Vec<f64>,
    final_z: Vec<Vec<f64>>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn write_trajectory(dir: &Path, stem: &str, traj: &Trajectory<AngularConfig>, header: &str) -> Result<()> {
    let csv = dir.join(format!("{stem}.csv"));
    let mut w = BufWriter::new(File::create(&csv).with_context(|| format!("creating {}", csv.display()))?);
    traj.write_csv(&mut w, header)?;
    w.flush()?;
    write_json(&dir.join(format!("{stem}.json")), &traj.to_record())
}

pub fn simulate(a: &SimulateArgs) -> Result<bool> {
    let run = run_simulation(&a.run, "simulate")?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    write_trajectory(&a.out, "trajectory", &run.main, &run.header)?;
    if let Some(full) = &run.full {
        write_trajectory(&a.out, "full_trajectory", full, &run.header)?;
    }
    let last = run.main.last();
    let min_a = run.main.min_abs_a();
    let summary = Summary {
        header: &run.header,
        mode: format!("{:?}", a.run.mode).to_lowercase(),
        k: a.run.dims.k,
        n: a.run.dims.n,
        seed: a.run.seed,
        controls: &run.label,
        t_end: a.run.t_end,
        h: a.run.h,
        samples: run.main.len(),
        max_drift: run.main.max_drift(),
        max_step_drift: run.main.max_step_drift,
        max_collinearity: run.main.max_collinearity(),
        max_cascade_residual: run.cascade,
        min_abs_a: min_a.is_finite().then_some(min_a),
        final_x0: last.x0().as_slice().to_vec(),
        final_z: last.directions().iter().map(|d| d.z().as_slice().to_vec()).collect(),
    };
    write_json(&a.out.join("summary.json"), &summary)?;
    println!("{}", run.header);
    println!(
        "{} samples, max drift {:.3e}, max collinearity {:.3e}, max cascade {:.3e}, min |A_i| {}",
        summary.samples,
        summary.max_drift,
        summary.max_collinearity,
        summary.max_cascade_residual,
        summary.min_abs_a.map_or("-".into(), |x| format!("{x:.6}"))
    );
    println!("wrote {}", a.out.display());
    Ok(true)
}

#[derive(Serialize)]
struct VerifySummary<'a> {
    k: usize,
    n: usize,
    seed: u64,
    options: VerifyOptions,
    regular_points: usize,
    regular_passed: usize,
    singular_points: usize,
    pass: bool,
    first_failure: Option<Failure>,
    reports: &'a [FlagReport],
}

#[derive(Serialize)]
struct Failure {
    sample: usize,
    check: String,
    detail: String,
}

pub fn verify(a: &VerifyArgs) -> Result<bool> {
    let dims = dims_of(a.dims.k, a.dims.n)?;
    ensure!(a.tol > 0.0 && a.residual_tol > 0.0 && a.bracket_step > 0.0, "tolerances must be > 0");
    ensure!(
        a.inject_singular == 0 || dims.n >= 1,
        "singular samples need n >= 1"
    );
    let opts = VerifyOptions {
        rank_tol: a.tol,
        residual_tol: a.residual_tol,
        step: a.bracket_step,
        ..VerifyOptions::default()
    };
    let mut configs = Vec::new();
    if let Some(path) = &a.config {
        configs.push(read_config(path, dims)?);
    } else {
        let kind = SampleKind::Regular(RegularSampling::default());
        configs.extend((0..a.samples).map(|i| sample_config(dims, kind, a.seed, i)));
    }
    let base = configs.len();
    configs.extend((0..a.inject_singular).map(|j| {
        let kind = SampleKind::Singular {
            index: 1 + j % dims.n.max(1),
        };
        sample_config(dims, kind, a.seed, base + j)
    }));
    ensure!(!configs.is_empty(), "nothing to verify");

    let reports = verify_sweep(&configs, opts, Execution::default())?;
    let regular: Vec<usize> = (0..reports.len()).filter(|&i| reports[i].verdict.is_regular()).collect();
    let passed = regular.iter().filter(|&&i| reports[i].pass).count();
    let first_failure = regular.iter().find(|&&i| !reports[i].pass).map(|&i| {
        let c = reports[i].failed_checks().next().expect("failed report has a failed check");
        Failure {
            sample: i,
            check: c.name.clone(),
            detail: c.detail.clone(),
        }
    });
    let pass = first_failure.is_none();
    let summary = VerifySummary {
        k: dims.k,
        n: dims.n,
        seed: a.seed,
        options: opts,
        regular_points: regular.len(),
        regular_passed: passed,
        singular_points: reports.len() - regular.len(),
        pass,
        first_failure,
        reports: &reports,
    };

    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    write_json(&a.out.join("report.json"), &summary)?;
    let mut text = format!(
        "# multiflag verify k={} n={} samples={} inject_singular={} seed={} tol={:e} residual_tol={:e}\n",
        dims.k, dims.n, a.samples, a.inject_singular, a.seed, a.tol, a.residual_tol
    );
    for (i, r) in reports.iter().enumerate() {
        text.push_str(&format!("\n== sample {i} ==\n{}\n", r.render()));
    }
    fs::write(a.out.join("report.txt"), &text)?;

    if let Some(r) = regular.first().map(|&i| &reports[i]) {
        println!("{}", r.render());
    }
    if a.verbose {
        for r in reports.iter().skip(1) {
            println!("\n{}", r.render());
        }
    }
    println!(
        "\nregular points: {passed}/{} PASS, singular points: {}",
        regular.len(),
        summary.singular_points
    );
    for r in reports.iter().filter(|r| !r.verdict.is_regular()) {
        if let Verdict::Singular { indices } = &r.verdict {
            println!("  singular sample, A_i = 0 at i in {indices:?}");
        }
    }
    if let Some(f) = &summary.first_failure {
        eprintln!("FAIL: sample {} failed '{}': {}", f.sample, f.check, f.detail);
    }
    println!("{}", if pass { "PASS" } else { "FAIL" });
    Ok(pass)
}

#[derive(Serialize)]
struct ScanReport<'a> {
    source: String,
    eps: f64,
    samples: usize,
    events: &'a [SingularEvent],
}

pub fn singular_scan(a: &ScanArgs) -> Result<bool> {
    ensure!(a.eps >= 0.0, "eps must be >= 0");
    let (source, times, states) = match &a.trajectory {
        Some(path) => {
            let record = TrajectoryRecord::load(path).with_context(|| format!("loading {}", path.display()))?;
            (format!("trajectory={}", path.display()), record.times.clone(), record.states()?)
        }
        None => {
            let run = run_simulation(&a.run, "singular-scan")?;
            (run.header, run.main.times, run.main.states)
        }
    };
    let events = scan_states(&times, &states, a.eps);
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    write_json(
        &a.out.join("singular_scan.json"),
        &ScanReport {
            source: source.clone(),
            eps: a.eps,
            samples: times.len(),
            events: &events,
        },
    )?;
    println!("# {source}");
    if events.is_empty() {
        println!("no singular crossings");
    }
    for e in &events {
        println!(
            "t = {:.6} A_{} {:?}, zero velocity at joints {:?}",
            e.t, e.index, e.kind, e.zero_velocity
        );
    }
    Ok(true)
}
