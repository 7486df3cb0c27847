//! Scenario runners behind the subcommands: build the configured system,
//! sweep it, and write CSV tables, SVG plots, and a run manifest.
//!
//! CSV files carry only reproducible numbers — wall-clock times go to the
//! manifest, so identical config + seed gives byte-identical tables.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use qmlab::expr::Expr;
use qmlab::geometry::{fenchel_dual_on_demand, CohomologyClass, Hamiltonian};
use qmlab::gfqi::{action_gf, gf_filtration, gf_of_function, one_step_gf, GeneratingFunction, OneStepParams};
use qmlab::grid::GridData;
use qmlab::persistence::{compute_persistence, spectral_invariants, MemoryBudget};
use qmlab::quasimorphism::{battery_passes, check_axioms, cross_check_routes, InvariantParams};
use qmlab::variational::{extrapolate_limit, minimize_action, ActionParams};

use crate::config::{Config, ConfigError, Section};
use crate::svg;

#[derive(Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    Alpha,
    Homogenize,
    GfqiSpectra,
    Check,
    CrossCheck,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::Alpha => "alpha",
            Scenario::Homogenize => "homogenize",
            Scenario::GfqiSpectra => "gfqi-spectra",
            Scenario::Check => "check",
            Scenario::CrossCheck => "cross-check",
        }
    }
}

pub struct Flags {
    pub config: PathBuf,
    pub out: PathBuf,
    pub jobs: Option<usize>,
    pub seed: Option<u64>,
    pub tolerance_scale: Option<f64>,
}

struct Manifest {
    head: Vec<String>,
    resolved: Vec<String>,
    outputs: Vec<String>,
    times: Vec<(String, Duration)>,
    config_echo: String,
}

impl Manifest {
    fn new(scenario: &str, config_path: &Path, config_text: &str) -> Manifest {
        Manifest {
            head: vec![
                format!("qmlab {}", env!("CARGO_PKG_VERSION")),
                format!("scenario = {scenario}"),
                format!("config = {}", config_path.display()),
            ],
            resolved: Vec::new(),
            outputs: Vec::new(),
            times: Vec::new(),
            config_echo: config_text.to_string(),
        }
    }

    fn note(&mut self, key: &str, value: impl std::fmt::Display) {
        self.resolved.push(format!("{key} = {value}"));
    }

    fn stage(&mut self, name: &str, d: Duration) {
        self.times.push((name.to_string(), d));
    }

    fn write(&self, out_dir: &Path) -> Result<()> {
        let mut text = String::new();
        for line in &self.head {
            writeln!(text, "{line}")?;
        }
        writeln!(text, "\n--- resolved parameters ---")?;
        for line in &self.resolved {
            writeln!(text, "{line}")?;
        }
        writeln!(text, "\n--- outputs ---")?;
        for line in &self.outputs {
            writeln!(text, "{line}")?;
        }
        writeln!(text, "\n--- wall times ---")?;
        for (name, d) in &self.times {
            writeln!(text, "{name}: {:.3} s", d.as_secs_f64())?;
        }
        writeln!(text, "\n--- config echo ---\n{}", self.config_echo)?;
        fs::write(out_dir.join("manifest.txt"), text).context("writing manifest.txt")?;
        Ok(())
    }
}

fn write_artifact(out_dir: &Path, name: &str, content: &str, manifest: &mut Manifest) -> Result<()> {
    fs::write(out_dir.join(name), content).with_context(|| format!("writing {name}"))?;
    manifest.outputs.push(name.to_string());
    println!("wrote {}", out_dir.join(name).display());
    Ok(())
}

fn csv_field(s: &str) -> String {
    if s.contains(',') || s.contains('"') || s.contains('\n') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Run one scenario end to end; returns the process exit code.
pub fn run(scenario: Scenario, flags: &Flags) -> Result<i32> {
    let text = fs::read_to_string(&flags.config)
        .with_context(|| format!("reading config {}", flags.config.display()))?;
    let cfg = Config::parse(&text)?;

    let run_sec = cfg.section("run");
    if let Some(sec) = run_sec {
        if let Some(s) = sec.get("scenario") {
            if s != scenario.name() {
                bail!(
                    "config names scenario `{s}` but the `{}` subcommand was invoked",
                    scenario.name()
                );
            }
        }
    }
    let seed = match flags.seed {
        Some(s) => s,
        None => run_sec.map(|s| s.u64_opt("seed")).transpose()?.flatten().unwrap_or(0),
    };
    let tol_scale = match flags.tolerance_scale {
        Some(t) => t,
        None => run_sec.map(|s| s.f64_opt("tolerance_scale")).transpose()?.flatten().unwrap_or(1.0),
    };
    if tol_scale <= 0.0 {
        bail!("tolerance scale must be positive, got {tol_scale}");
    }
    let jobs = match flags.jobs {
        Some(j) => Some(j),
        None => run_sec.map(|s| s.usize_opt("jobs")).transpose()?.flatten(),
    };
    if let Some(j) = jobs {
        if j == 0 {
            bail!("--jobs must be at least 1");
        }
        // ignore the error if a global pool already exists (tests re-enter)
        let _ = rayon::ThreadPoolBuilder::new().num_threads(j).build_global();
    }

    fs::create_dir_all(&flags.out)
        .with_context(|| format!("creating output directory {}", flags.out.display()))?;
    let config_dir = flags.config.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));

    let mut manifest = Manifest::new(scenario.name(), &flags.config, &text);
    manifest.note("seed", seed);
    manifest.note("tolerance_scale", tol_scale);
    manifest.note("jobs", jobs.map(|j| j.to_string()).unwrap_or_else(|| "default".into()));

    let t_total = Instant::now();
    let code = match scenario {
        Scenario::Alpha => run_profile(&cfg, &config_dir, &flags.out, seed, &mut manifest, ProfileKind::Alpha)?,
        Scenario::Homogenize => {
            run_profile(&cfg, &config_dir, &flags.out, seed, &mut manifest, ProfileKind::Homogenize)?
        }
        Scenario::GfqiSpectra => run_gfqi_spectra(&cfg, &config_dir, &flags.out, &mut manifest)?,
        Scenario::Check => run_check(&flags.out, tol_scale, &mut manifest)?,
        Scenario::CrossCheck => run_cross_check(&cfg, &config_dir, &flags.out, seed, &mut manifest)?,
    };
    manifest.stage("total", t_total.elapsed());
    manifest.write(&flags.out)?;
    println!("wrote {}", flags.out.join("manifest.txt").display());
    Ok(code)
}

fn build_hamiltonian(cfg: &Config, config_dir: &Path, manifest: &mut Manifest) -> Result<Hamiltonian> {
    let sec = cfg.require_section("hamiltonian")?;
    let tonelli = sec.bool_or("tonelli", true)?;
    let fiber_radius = sec.f64_or("fiber_radius", 2.5)?;
    let h = if let Some(src) = sec.get("expr") {
        let dim = sec.usize_or("dim", 1)?;
        Hamiltonian::from_expr(src, dim, tonelli, fiber_radius)?
    } else if let Some(rel) = sec.get("grid_file") {
        let path = config_dir.join(rel);
        let data = GridData::read_file(&path)
            .with_context(|| format!("reading grid file {}", path.display()))?;
        Hamiltonian::from_grid(data, tonelli)?
    } else {
        return Err(ConfigError::new(
            sec.line,
            "hamiltonian.expr",
            "section needs `expr = …` or `grid_file = …`",
        )
        .into());
    };
    manifest.note("hamiltonian", &h.label);
    manifest.note("hamiltonian.dim", h.dim());
    manifest.note("hamiltonian.tonelli", tonelli);
    manifest.note("hamiltonian.fiber_radius", fiber_radius);
    Ok(h)
}

fn action_params(sec: &Section, seed: u64) -> Result<ActionParams> {
    let d = ActionParams::default();
    Ok(ActionParams {
        steps_per_unit: sec.usize_or("steps_per_unit", d.steps_per_unit)?,
        coarse_steps_per_unit: sec.usize_or("coarse_steps_per_unit", d.coarse_steps_per_unit)?,
        slope_radius: sec.f64_or("slope_radius", d.slope_radius)?,
        slope_step: sec.f64_or("slope_step", d.slope_step)?,
        base_offsets: sec.usize_or("base_offsets", d.base_offsets)?,
        polish_starts: sec.usize_or("polish_starts", d.polish_starts)?,
        max_iters: sec.usize_or("max_iters", d.max_iters)?,
        grad_tol: sec.f64_or("grad_tol", d.grad_tol)?,
        seed,
    })
}

#[derive(Clone, Copy, PartialEq)]
enum ProfileKind {
    Alpha,
    Homogenize,
}

/// α_H(a) over an a-grid, or H̄(p) over a p-grid — the same sweep with
/// different labels: for Tonelli systems the homogenized Hamiltonian at p is
/// the alpha value at the class p.
fn run_profile(
    cfg: &Config,
    config_dir: &Path,
    out_dir: &Path,
    seed: u64,
    manifest: &mut Manifest,
    kind: ProfileKind,
) -> Result<i32> {
    let (sec_name, grid_key, col_prefix, value_name, file_stem) = match kind {
        ProfileKind::Alpha => ("alpha", "a_grid", "a", "alpha", "alpha"),
        ProfileKind::Homogenize => ("homogenize", "p_grid", "p", "hbar", "hbar"),
    };
    let h = build_hamiltonian(cfg, config_dir, manifest)?;
    if !h.tonelli {
        bail!("the {sec_name} scenario needs a Tonelli (fiberwise convex, superlinear) Hamiltonian");
    }
    let sec = cfg.require_section(sec_name)?;
    let classes = sec
        .vector_grid(grid_key, h.dim())?
        .ok_or_else(|| ConfigError::new(sec.line, &format!("{sec_name}.{grid_key}"), "missing required key"))?;
    let ks = sec.usize_list_or("k_schedule", &[2, 4, 8, 16])?;
    if ks.is_empty() {
        bail!("k_schedule must not be empty");
    }
    let params = action_params(sec, seed)?;
    manifest.note(grid_key, format!("{} points", classes.len()));
    manifest.note("k_schedule", format!("{ks:?}"));
    manifest.note("steps_per_unit", params.steps_per_unit);

    let t0 = Instant::now();
    let dual = fenchel_dual_on_demand(&h);
    let n = h.dim();

    let mut rows = String::new();
    for i in 1..=n {
        write!(rows, "{col_prefix}{i},")?;
    }
    rows.push_str("k,m,value,value_per_k,gradient_norm,starts_used\n");
    let mut profile = String::new();
    for i in 1..=n {
        write!(profile, "{col_prefix}{i},")?;
    }
    writeln!(profile, "{value_name},uncertainty,fekete_upper")?;

    let mut plot_main = Vec::new();
    let mut plot_fekete = Vec::new();
    for (ci, comps) in classes.iter().enumerate() {
        let class = CohomologyClass(comps.clone());
        let mut ratios = Vec::with_capacity(ks.len());
        for &k in &ks {
            let rep = minimize_action(&dual, &class, k, &params);
            let m = (params.steps_per_unit * k).max(2);
            for c in comps {
                write!(rows, "{c},")?;
            }
            writeln!(
                rows,
                "{k},{m},{},{},{},{}",
                rep.value,
                -rep.value / k as f64,
                rep.grad_norm,
                rep.starts_tried
            )?;
            ratios.push((k, -rep.value / k as f64));
        }
        let est = extrapolate_limit(&ratios);
        let fekete = ratios.iter().map(|&(_, r)| r).fold(f64::INFINITY, f64::min);
        for c in comps {
            write!(profile, "{c},")?;
        }
        writeln!(profile, "{},{},{}", est.value, est.uncertainty, fekete)?;
        let x = if n == 1 { comps[0] } else { ci as f64 };
        plot_main.push((x, est.value));
        plot_fekete.push((x, fekete));
    }
    manifest.stage("minimization sweep", t0.elapsed());

    write_artifact(out_dir, &format!("{file_stem}_rows.csv"), &rows, manifest)?;
    write_artifact(out_dir, &format!("{file_stem}_profile.csv"), &profile, manifest)?;
    let (title, x_label) = match kind {
        ProfileKind::Alpha => ("alpha profile", if n == 1 { "a" } else { "class index" }),
        ProfileKind::Homogenize => ("homogenized Hamiltonian", if n == 1 { "p" } else { "class index" }),
    };
    let plot = svg::line_plot(
        &format!("{title} [{}]", h.label),
        x_label,
        value_name,
        &[
            (value_name.to_string(), plot_main),
            ("fekete upper bound".to_string(), plot_fekete),
        ],
    );
    write_artifact(out_dir, &format!("{file_stem}_profile.svg"), &plot, manifest)?;
    Ok(0)
}

fn build_generating_function(
    cfg: &Config,
    config_dir: &Path,
    sec: &Section,
    manifest: &mut Manifest,
) -> Result<GeneratingFunction> {
    let family = sec.require("family")?;
    manifest.note("family", family);
    match family {
        "one-step" => {
            let h = build_hamiltonian(cfg, config_dir, manifest)?;
            let tau = sec
                .f64_opt("tau")?
                .ok_or_else(|| ConfigError::new(sec.line, "gfqi.tau", "one-step family needs `tau`"))?;
            let t0 = sec.f64_or("t0", 0.0)?;
            let d = OneStepParams::default();
            let params = OneStepParams {
                x_res: sec.usize_or("x_res", d.x_res)?,
                v_radius: sec.f64_or("v_radius", d.v_radius)?,
                v_res: sec.usize_or("v_res", d.v_res)?,
                flow_steps: sec.usize_or("flow_steps", d.flow_steps)?,
                ..d
            };
            manifest.note("tau", tau);
            manifest.note("t0", t0);
            Ok(one_step_gf(&h, t0, tau, &params)?)
        }
        "loops" => {
            let h = build_hamiltonian(cfg, config_dir, manifest)?;
            if !h.tonelli {
                bail!("the loop family needs a Tonelli Hamiltonian");
            }
            let k = sec.usize_or("k", 1)?;
            let spu = sec.usize_or("segments_per_unit", 2)?;
            let xi_radius = sec.f64_or("xi_radius", 1.75)?;
            manifest.note("k", k);
            manifest.note("segments_per_unit", spu);
            manifest.note("xi_radius", xi_radius);
            let dual = fenchel_dual_on_demand(&h);
            Ok(action_gf(&dual, k, spu, xi_radius))
        }
        "function" => {
            let dim = sec.usize_or("dim", 1)?;
            let src = sec.require("f_expr")?;
            let expr = Expr::parse(src, dim)?;
            if expr.uses_t() {
                bail!("f_expr must not depend on t");
            }
            manifest.note("f_expr", src);
            let zeros = vec![0.0; dim];
            Ok(gf_of_function(dim, src, move |q: &[f64]| expr.eval(0.0, q, &zeros)))
        }
        other => Err(ConfigError::new(
            sec.line,
            "gfqi.family",
            format!("unknown family `{other}` (expected one-step | loops | function)"),
        )
        .into()),
    }
}

fn run_gfqi_spectra(cfg: &Config, config_dir: &Path, out_dir: &Path, manifest: &mut Manifest) -> Result<i32> {
    let sec = cfg.require_section("gfqi")?;
    let t0 = Instant::now();
    let g = build_generating_function(cfg, config_dir, sec, manifest)?;
    manifest.stage("family construction", t0.elapsed());
    let base_res = sec.usize_or("base_res", 64)?;
    let fiber_res = sec.usize_or("fiber_res", 33)?;
    manifest.note("base_res", base_res);
    manifest.note("fiber_res", fiber_res);

    let t1 = Instant::now();
    let filt = gf_filtration(&g, base_res, fiber_res, &MemoryBudget::default())?;
    let diagram = compute_persistence(&filt);
    let inv = spectral_invariants(&filt, &diagram)?;
    manifest.stage("filtration + reduction", t1.elapsed());

    let mut spectra = String::from("label,base_dim,fiber_dim,neg_index,ell_minus,ell_plus\n");
    writeln!(
        spectra,
        "{},{},{},{},{},{}",
        csv_field(&g.label),
        g.base_dim,
        g.fiber_dim,
        g.index_at_infinity(),
        inv.ell_minus,
        inv.ell_plus
    )?;
    write_artifact(out_dir, "spectra.csv", &spectra, manifest)?;

    let mut dg = String::from("dim,birth,death\n");
    for bar in &diagram.pairs {
        writeln!(dg, "{},{},{}", bar.dim, bar.birth, bar.death)?;
    }
    for e in &diagram.essential {
        writeln!(dg, "{},{},inf", e.dim, e.birth)?;
    }
    write_artifact(out_dir, "diagram.csv", &dg, manifest)?;

    let finite: Vec<(usize, f64, f64)> = diagram.pairs.iter().map(|b| (b.dim, b.birth, b.death)).collect();
    let essential: Vec<(usize, f64)> = diagram.essential.iter().map(|e| (e.dim, e.birth)).collect();
    let plot = svg::persistence_diagram(&format!("persistence [{}]", g.label), &finite, &essential);
    write_artifact(out_dir, "diagram.svg", &plot, manifest)?;

    println!("ell_minus = {}, ell_plus = {}", inv.ell_minus, inv.ell_plus);
    Ok(0)
}

fn run_check(out_dir: &Path, tol_scale: f64, manifest: &mut Manifest) -> Result<i32> {
    let t0 = Instant::now();
    let records = check_axioms(tol_scale)?;
    manifest.stage("battery", t0.elapsed());

    let mut csv = String::from("property,detail,lhs,rhs,tolerance,pass,must_fail\n");
    for r in &records {
        writeln!(
            csv,
            "{},{},{},{},{},{},{}",
            csv_field(r.id),
            csv_field(&r.detail),
            r.lhs,
            r.rhs,
            r.tolerance,
            r.pass,
            r.must_fail
        )?;
    }
    write_artifact(out_dir, "battery.csv", &csv, manifest)?;

    let mut txt = String::new();
    let mut passed = 0usize;
    let mut failed = 0usize;
    for r in &records {
        let ok = r.pass != r.must_fail;
        if ok {
            passed += 1;
        } else {
            failed += 1;
        }
        let marker = if ok { "ok  " } else { "FAIL" };
        let ctrl = if r.must_fail { " [negative control]" } else { "" };
        writeln!(txt, "{marker} {:28} {}{}", r.id, r.detail, ctrl)?;
    }
    writeln!(txt, "\n{passed} passed, {failed} failed, {} records", records.len())?;
    write_artifact(out_dir, "battery.txt", &txt, manifest)?;
    print!("{txt}");

    Ok(if battery_passes(&records) { 0 } else { 2 })
}

fn run_cross_check(
    cfg: &Config,
    config_dir: &Path,
    out_dir: &Path,
    seed: u64,
    manifest: &mut Manifest,
) -> Result<i32> {
    let h = build_hamiltonian(cfg, config_dir, manifest)?;
    if !h.tonelli {
        bail!("the cross-check scenario needs a Tonelli Hamiltonian");
    }
    let sec = cfg.require_section("cross-check")?;
    let ks = sec.usize_list_or("k_schedule", &[1, 2])?;
    let defaults = InvariantParams::default();
    let params = InvariantParams {
        action: action_params(sec, seed)?,
        gf_segments_per_unit: sec.usize_or("segments_per_unit", defaults.gf_segments_per_unit)?,
        gf_xi_radius: sec.f64_or("xi_radius", defaults.gf_xi_radius)?,
        gf_base_res: sec.usize_or("base_res", defaults.gf_base_res)?,
        gf_fiber_res: sec.usize_or("fiber_res", defaults.gf_fiber_res)?,
        ..defaults
    };
    manifest.note("k_schedule", format!("{ks:?}"));
    manifest.note("base_res", params.gf_base_res);
    manifest.note("fiber_res", params.gf_fiber_res);

    let t0 = Instant::now();
    let dual = fenchel_dual_on_demand(&h);
    let rows = cross_check_routes(&dual, &ks, &params)?;
    manifest.stage("route comparison", t0.elapsed());

    let mut csv = String::from("k,variational,loop_family,flipped_family,rel_gap\n");
    for r in &rows {
        writeln!(csv, "{},{},{},{},{}", r.k, r.variational, r.loop_family, r.flipped_family, r.rel_gap)?;
        println!(
            "k = {}: variational {} vs loop family {} (flip {}), rel gap {:.4}",
            r.k, r.variational, r.loop_family, r.flipped_family, r.rel_gap
        );
    }
    write_artifact(out_dir, "cross_check.csv", &csv, manifest)?;
    Ok(0)
}
