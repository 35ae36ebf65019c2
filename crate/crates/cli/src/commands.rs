use std::path::{Path, PathBuf};

use bodf::bingham::BinghamComponent;
use bodf::export::{euler_grid, pole_figure, write_euler_grid, write_pole_figure, GridKind, GridSpec, POLE_FIGURE_KAPPA};
use bodf::io::{ingest, read_quaternion_csv, read_trace, write_quaternion_csv, TraceWriter};
use bodf::kde::{kde_estimate, select_bandwidth, BandwidthChoice, Kde, KernelSpec};
use bodf::mixture::{Dataset, MixtureOdf, MixtureState, Odf};
use bodf::normalizer::NormalizerTable;
use bodf::predict::{map_estimate, ppd_density, ppd_sample, summarize, BandwidthPolicy, PosteriorSummary};
use bodf::rjmcmc::{run_streaming, MoveStats, Target, TraceRecord, Tuning};
use bodf::synthetic::{santafe_generate, sbm_generate};
use bodf::tempering::{run_pt_streaming, SwapRule};
use bodf::{SymmetryGroup, UnitQuaternion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{Needs, RunConfig};
use crate::manifest::{write_json, Manifest};
use crate::{CliError, Command, ExportSource, SimulateKind, TableCommand};

pub fn dispatch(cmd: Command, cfg: RunConfig, args: Vec<String>) -> Result<(), CliError> {
    match cmd {
        Command::Fit => fit(cfg, &args, false),
        Command::PtFit => fit(cfg, &args, true),
        Command::Ppd {
            trace,
            n_new,
            kappa,
            grid,
        } => ppd(cfg, &args, &trace, n_new, kappa, grid),
        Command::Kde { kappa } => kde(cfg, &args, kappa),
        Command::Simulate { kind, n, state } => simulate(cfg, &args, kind, n, state.as_deref()),
        Command::Table { action } => table(cfg, &args, action),
        Command::Export {
            source,
            trace,
            draws,
            kappa,
        } => export(cfg, &args, source, trace.as_deref(), draws.as_deref(), kappa),
        Command::Report { trace, bins } => report(cfg, &args, &trace, bins),
    }
}

fn require(cfg: &RunConfig, needs: Needs, extra: Vec<String>) -> Result<(), CliError> {
    let mut p = cfg.problems(needs);
    p.extend(extra);
    if p.is_empty() {
        Ok(())
    } else {
        Err(CliError::Config(p))
    }
}

fn missing_file(flag: &str, path: Option<&Path>) -> Option<String> {
    match path {
        None => Some(format!("{flag} is required")),
        Some(p) if !p.is_file() => Some(format!("{flag} {} does not exist", p.display())),
        _ => None,
    }
}

fn load_data(cfg: &RunConfig, manifest: &mut Manifest) -> Result<Vec<UnitQuaternion>, CliError> {
    let path = cfg.data.as_deref().expect("validated");
    let (obs, _) = ingest(path, cfg.format, cfg.angle_unit)?;
    manifest.input(path)?;
    log::info!("read {} orientations from {}", obs.len(), path.display());
    Ok(obs)
}

fn load_table(cfg: &RunConfig, manifest: &mut Manifest) -> Result<NormalizerTable, CliError> {
    let t = cfg.load_table()?;
    if let Some(p) = &cfg.table {
        manifest.input(p)?;
    }
    Ok(t)
}

#[derive(Serialize)]
struct FitSummary<'a> {
    posterior: PosteriorSummary,
    initial: &'a TraceRecord,
    adaptation: &'a [Tuning],
    final_tuning: Tuning,
    stats: &'a MoveStats,
}

#[derive(Serialize)]
struct SwapReport<'a> {
    rule: SwapRule,
    temps: &'a [f64],
    proposed: &'a [u64],
    accepted: &'a [u64],
    rates: Vec<f64>,
    rung_tuning: &'a [Tuning],
}

fn fit(cfg: RunConfig, args: &[String], tempered: bool) -> Result<(), CliError> {
    require(
        &cfg,
        Needs {
            data: true,
            seed: true,
            out: true,
            table: true,
        },
        Vec::new(),
    )?;
    let name = if tempered { "pt-fit" } else { "fit" };
    let mut manifest = Manifest::new(name, args, &cfg)?;
    let dir = cfg.out_dir()?;
    let (qc, qs) = cfg.groups()?;
    let obs = load_data(&cfg, &mut manifest)?;
    let table = load_table(&cfg, &mut manifest)?;
    let data = Dataset::new(obs, qc, qs)?;
    let target = Target::posterior(&data, &table, cfg.hyperparams, cfg.forced_uniform)?;
    let sampler = cfg.sampler_config();
    let trace_path = dir.join("trace.ndjson");
    let mut writer = TraceWriter::create(&trace_path)?;
    let mut sink = |r: &TraceRecord| writer.write(r);
    let (trace, swaps) = if tempered {
        let pt = run_pt_streaming(&target, &sampler, &cfg.ladder, cfg.swap_rule, &mut sink)?;
        let report = SwapReport {
            rule: cfg.swap_rule,
            temps: &pt.temps,
            proposed: &pt.swaps.proposed,
            accepted: &pt.swaps.accepted,
            rates: pt.swaps.rates(),
            rung_tuning: &pt.rung_tuning,
        };
        let swaps_path = dir.join("swaps.json");
        write_json(&swaps_path, &report)?;
        (pt.trace, Some(swaps_path))
    } else {
        (run_streaming(&target, &sampler, &mut sink)?, None)
    };
    drop(writer);
    manifest.output(&trace_path)?;
    let summary = FitSummary {
        posterior: summarize(&trace.records, cfg.hyperparams.m_max)?,
        initial: &trace.initial,
        adaptation: &trace.adaptation,
        final_tuning: trace.final_tuning,
        stats: &trace.stats,
    };
    log::info!("P(M | data) = {:?}", summary.posterior.p_m);
    let summary_path = dir.join("summary.json");
    write_json(&summary_path, &summary)?;
    manifest.output(&summary_path)?;
    if let Some(p) = swaps {
        manifest.output(&p)?;
    }
    manifest.write(&dir)?;
    Ok(())
}

fn ppd_count(cfg: &RunConfig, n_new: Option<usize>) -> usize {
    n_new.or(cfg.ppd.n_new).unwrap_or(10_000)
}

fn policy(cfg_policy: BandwidthPolicy, kappa: Option<f64>) -> BandwidthPolicy {
    match kappa {
        Some(kappa) => BandwidthPolicy::Fixed { kappa },
        None => cfg_policy,
    }
}

fn trace_states(path: &Path, manifest: &mut Manifest) -> Result<(Vec<TraceRecord>, Vec<MixtureState>), CliError> {
    let records = read_trace(path)?;
    if records.is_empty() {
        return Err(CliError::Parse(format!("{}: trace has no records", path.display())));
    }
    manifest.input(path)?;
    let states = records.iter().map(|r| r.state()).collect::<Result<Vec<_>, _>>()?;
    Ok((records, states))
}

/// Writes the configured grid for `odf` (Euler grid) or `samples` (pole
/// figures) into `dir` with the given file stem.
fn write_grid(
    dir: &Path,
    stem: &str,
    spec: &GridSpec,
    odf: &dyn Odf,
    samples: &[UnitQuaternion],
    qc: &SymmetryGroup,
    qs: &SymmetryGroup,
    manifest: &mut Manifest,
) -> Result<(), CliError> {
    match spec.kind {
        GridKind::EulerGrid => {
            let rows = euler_grid(odf, spec)?;
            let p = dir.join(format!("{stem}.csv"));
            write_euler_grid(&p, &rows)?;
            manifest.output(&p)?;
        }
        GridKind::PoleFigure => {
            for (i, pole) in spec.poles.iter().enumerate() {
                let rows = pole_figure(samples, *pole, qc, qs, spec, POLE_FIGURE_KAPPA)?;
                let p = dir.join(format!("{stem}_pole{i}.csv"));
                write_pole_figure(&p, &rows)?;
                manifest.output(&p)?;
            }
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct BandwidthReport {
    kappa: f64,
    cross_validation: Option<BandwidthChoice>,
}

fn ppd(
    cfg: RunConfig,
    args: &[String],
    trace: &Path,
    n_new: Option<usize>,
    kappa: Option<f64>,
    grid: bool,
) -> Result<(), CliError> {
    let extra: Vec<String> = missing_file("--trace", Some(trace)).into_iter().collect();
    require(
        &cfg,
        Needs {
            seed: true,
            out: true,
            ..Needs::default()
        },
        extra,
    )?;
    let mut manifest = Manifest::new("ppd", args, &cfg)?;
    let dir = cfg.out_dir()?;
    let (qc, qs) = cfg.groups()?;
    let (_, states) = trace_states(trace, &mut manifest)?;
    let n = ppd_count(&cfg, n_new);
    let draws = ppd_sample(&states, n, &qc, &qs, cfg.seed.expect("validated"))?;
    let p = dir.join("ppd_draws.csv");
    write_quaternion_csv(&p, &draws)?;
    manifest.output(&p)?;
    if grid {
        let (est, choice) = ppd_density(&draws, &qc, &qs, policy(cfg.ppd.bandwidth, kappa))?;
        let bw = dir.join("ppd_bandwidth.json");
        write_json(
            &bw,
            &BandwidthReport {
                kappa: est.spec().kappa,
                cross_validation: choice,
            },
        )?;
        manifest.output(&bw)?;
        write_grid(&dir, "ppd_grid", &cfg.grid, &est, &draws, &qc, &qs, &mut manifest)?;
    }
    manifest.write(&dir)?;
    Ok(())
}

fn fit_kde(
    obs: &[UnitQuaternion],
    qc: &SymmetryGroup,
    qs: &SymmetryGroup,
    kappa: Option<f64>,
    cap: usize,
) -> Result<(Kde, Option<BandwidthChoice>), CliError> {
    Ok(match kappa {
        Some(k) => (kde_estimate(obs, KernelSpec::new(k)?, qc, qs)?, None),
        None => {
            let choice = select_bandwidth(obs, qc, qs, cap)?;
            if choice.fallback {
                log::warn!("every cross-validation score was -inf; using kappa = {}", choice.spec.kappa);
            }
            (kde_estimate(obs, choice.spec, qc, qs)?, Some(choice))
        }
    })
}

fn kde(cfg: RunConfig, args: &[String], kappa: Option<f64>) -> Result<(), CliError> {
    require(
        &cfg,
        Needs {
            data: true,
            out: true,
            ..Needs::default()
        },
        Vec::new(),
    )?;
    let mut manifest = Manifest::new("kde", args, &cfg)?;
    let dir = cfg.out_dir()?;
    let (qc, qs) = cfg.groups()?;
    let obs = load_data(&cfg, &mut manifest)?;
    let (est, choice) = fit_kde(&obs, &qc, &qs, kappa.or(cfg.kde.kappa), cfg.kde.loo_cap)?;
    let p = dir.join("kde.json");
    write_json(
        &p,
        &BandwidthReport {
            kappa: est.spec().kappa,
            cross_validation: choice,
        },
    )?;
    manifest.output(&p)?;
    write_grid(&dir, "kde_grid", &cfg.grid, &est, &obs, &qc, &qs, &mut manifest)?;
    manifest.write(&dir)?;
    Ok(())
}

/// Two well-separated components used by `simulate sbm` without `--state`.
pub fn default_sbm_state() -> MixtureState {
    let a = UnitQuaternion::from_axis_angle([1.0, 0.0, 0.0], 0.3).expect("unit axis");
    let b = UnitQuaternion::from_axis_angle([0.0, 1.0, 1.0], 0.5).expect("nonzero axis");
    let comps = vec![
        BinghamComponent::from_v1([30.0, 20.0, 10.0], a).expect("ordered scales"),
        BinghamComponent::from_v1([12.0, 6.0, 2.0], b).expect("ordered scales"),
    ];
    MixtureState::new(vec![0.4, 0.6], comps, false).expect("valid state")
}

fn simulate(cfg: RunConfig, args: &[String], kind: SimulateKind, n: usize, state: Option<&Path>) -> Result<(), CliError> {
    let mut extra = Vec::new();
    if n == 0 {
        extra.push("--n must be at least 1".into());
    }
    if let Some(p) = state {
        extra.extend(missing_file("--state", Some(p)));
    }
    require(
        &cfg,
        Needs {
            seed: true,
            out: true,
            ..Needs::default()
        },
        extra,
    )?;
    let mut manifest = Manifest::new("simulate", args, &cfg)?;
    let dir = cfg.out_dir()?;
    let (qc, qs) = cfg.groups()?;
    let seed = cfg.seed.expect("validated");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = match kind {
        SimulateKind::Santafe => santafe_generate(n, &qs, &mut rng)?,
        SimulateKind::Sbm => {
            let s = match state {
                Some(p) => {
                    manifest.input(p)?;
                    serde_json::from_str(&std::fs::read_to_string(p)?)?
                }
                None => default_sbm_state(),
            };
            sbm_generate(n, &s, &qc, &qs, &mut rng)
        }
    };
    data.seed = Some(seed);
    let p = dir.join("data.csv");
    write_quaternion_csv(&p, &data.observations)?;
    manifest.output(&p)?;
    let t = dir.join("truth.json");
    write_json(&t, &serde_json::json!({ "truth": data.truth, "seed": seed, "n": n, "labels": data.labels }))?;
    manifest.output(&t)?;
    manifest.write(&dir)?;
    Ok(())
}

fn table(cfg: RunConfig, args: &[String], action: TableCommand) -> Result<(), CliError> {
    match action {
        TableCommand::Build { lambda_max, nodes } => {
            let mut cfg = cfg;
            if let Some(v) = lambda_max {
                cfg.table_lambda_max = v;
            }
            if let Some(v) = nodes {
                cfg.table_nodes = v;
            }
            let target = cfg.table.take();
            let mut extra = Vec::new();
            if target.is_none() && cfg.out.is_none() {
                extra.push("table build needs --table FILE or --out DIR".into());
            }
            require(
                &cfg,
                Needs {
                    table: true,
                    ..Needs::default()
                },
                extra,
            )?;
            let t = NormalizerTable::build(cfg.table_lambda_max, cfg.table_nodes)?;
            let report = t.check();
            if !report.ok() {
                return Err(CliError::TableCheck(format!("{report:?}")));
            }
            let path = match target {
                Some(p) => p,
                None => cfg.out_dir()?.join("table.txt"),
            };
            t.save(&path)?;
            let mut manifest = Manifest::new("table build", args, &cfg)?;
            manifest.output(&path)?;
            if let Some(dir) = &cfg.out {
                std::fs::create_dir_all(dir)?;
                manifest.write(dir)?;
            }
            println!("wrote {} ({} nodes per axis, lambda_max {})", path.display(), t.nodes(), t.lambda_max());
            Ok(())
        }
        TableCommand::Check { path } => {
            let path: PathBuf = path
                .or(cfg.table.clone())
                .ok_or_else(|| CliError::Config(vec!["table check needs a table path".into()]))?;
            if !path.is_file() {
                return Err(CliError::Config(vec![format!("table file {} does not exist", path.display())]));
            }
            let t = NormalizerTable::load(&path).map_err(|e| CliError::TableCheck(e.to_string()))?;
            let report = t.check();
            println!("{}", serde_json::to_string_pretty(&report)?);
            if report.ok() {
                Ok(())
            } else {
                Err(CliError::TableCheck(format!(
                    "F(0) = {} (error {:e}), all positive: {}, monotone: {}",
                    report.f_at_zero, report.f_at_zero_error, report.all_positive, report.monotone
                )))
            }
        }
    }
}

fn export(
    cfg: RunConfig,
    args: &[String],
    source: ExportSource,
    trace: Option<&Path>,
    draws: Option<&Path>,
    kappa: Option<f64>,
) -> Result<(), CliError> {
    let mut extra = Vec::new();
    let mut needs = Needs {
        out: true,
        ..Needs::default()
    };
    match source {
        ExportSource::Map => {
            extra.extend(missing_file("--trace", trace));
            needs.table = true;
            needs.seed = cfg.grid.kind == GridKind::PoleFigure;
        }
        ExportSource::Ppd => extra.extend(missing_file("--draws", draws)),
        ExportSource::Kde => needs.data = true,
    }
    require(&cfg, needs, extra)?;
    let mut manifest = Manifest::new("export", args, &cfg)?;
    let dir = cfg.out_dir()?;
    let (qc, qs) = cfg.groups()?;
    match source {
        ExportSource::Map => {
            let path = trace.expect("validated");
            let (records, _) = trace_states(path, &mut manifest)?;
            let map = map_estimate(&records)?.state()?;
            let table = load_table(&cfg, &mut manifest)?;
            let samples = if cfg.grid.kind == GridKind::PoleFigure {
                let n = ppd_count(&cfg, None);
                ppd_sample(std::slice::from_ref(&map), n, &qc, &qs, cfg.seed.expect("validated"))?
            } else {
                Vec::new()
            };
            let odf = MixtureOdf::new(map, qc.clone(), qs.clone(), &table)?;
            write_grid(&dir, "map_grid", &cfg.grid, &odf, &samples, &qc, &qs, &mut manifest)?;
        }
        ExportSource::Ppd => {
            let path = draws.expect("validated");
            let (samples, _) = read_quaternion_csv(path)?;
            manifest.input(path)?;
            let (est, _) = ppd_density(&samples, &qc, &qs, policy(cfg.ppd.bandwidth, kappa))?;
            write_grid(&dir, "ppd_grid", &cfg.grid, &est, &samples, &qc, &qs, &mut manifest)?;
        }
        ExportSource::Kde => {
            let obs = load_data(&cfg, &mut manifest)?;
            let (est, _) = fit_kde(&obs, &qc, &qs, kappa.or(cfg.kde.kappa), cfg.kde.loo_cap)?;
            write_grid(&dir, "kde_grid", &cfg.grid, &est, &obs, &qc, &qs, &mut manifest)?;
        }
    }
    manifest.write(&dir)?;
    Ok(())
}

#[derive(Serialize)]
struct Report {
    #[serde(flatten)]
    summary: PosteriorSummary,
    /// `E[α | M = m]` for every visited `m`, components ordered by
    /// decreasing `λ1`.
    conditional_alpha: Vec<Option<Vec<f64>>>,
}

fn report(cfg: RunConfig, args: &[String], trace: &Path, bins: usize) -> Result<(), CliError> {
    let mut extra: Vec<String> = missing_file("--trace", Some(trace)).into_iter().collect();
    if bins == 0 {
        extra.push("--bins must be at least 1".into());
    }
    require(
        &cfg,
        Needs {
            out: true,
            ..Needs::default()
        },
        extra,
    )?;
    let mut manifest = Manifest::new("report", args, &cfg)?;
    let dir = cfg.out_dir()?;
    let (records, states) = trace_states(trace, &mut manifest)?;
    let m_max = cfg.hyperparams.m_max.max(records.iter().map(|r| r.m).max().unwrap_or(1));
    let summary = summarize(&records, m_max)?;

    let sorted: Vec<MixtureState> = states.iter().map(|s| s.sorted_by_concentration()).collect();
    let mut sums: Vec<Vec<f64>> = (1..=m_max).map(|m| vec![0.0; m]).collect();
    let mut counts = vec![0usize; m_max];
    for s in &sorted {
        counts[s.m() - 1] += 1;
        for (t, a) in sums[s.m() - 1].iter_mut().zip(s.alpha()) {
            *t += a;
        }
    }
    let conditional_alpha = sums
        .into_iter()
        .zip(&counts)
        .map(|(v, &c)| (c > 0).then(|| v.into_iter().map(|x| x / c as f64).collect()))
        .collect();

    let rj = dir.join("report.json");
    write_json(
        &rj,
        &Report {
            summary: summary.clone(),
            conditional_alpha,
        },
    )?;
    manifest.output(&rj)?;

    let mut m_csv = String::from("M,count,probability\n");
    for (i, c) in counts.iter().enumerate() {
        m_csv.push_str(&format!("{},{},{}\n", i + 1, c, *c as f64 / records.len() as f64));
    }
    let mh = dir.join("m_histogram.csv");
    std::fs::write(&mh, m_csv)?;
    manifest.output(&mh)?;

    let modal = summary.modal_m;
    let mut hist = vec![vec![0usize; bins]; modal];
    for s in sorted.iter().filter(|s| s.m() == modal) {
        for (h, a) in hist.iter_mut().zip(s.alpha()) {
            let b = ((a * bins as f64) as usize).min(bins - 1);
            h[b] += 1;
        }
    }
    let mut a_csv = String::from("M,component,bin_lo,bin_hi,count\n");
    for (k, h) in hist.iter().enumerate() {
        for (b, c) in h.iter().enumerate() {
            let lo = b as f64 / bins as f64;
            let hi = (b + 1) as f64 / bins as f64;
            a_csv.push_str(&format!("{modal},{},{lo},{hi},{c}\n", k + 1));
        }
    }
    let ah = dir.join("alpha_histogram.csv");
    std::fs::write(&ah, a_csv)?;
    manifest.output(&ah)?;
    manifest.write(&dir)?;
    println!(
        "modal M = {}, P(M | data) = {:?}, E[alpha | M = {}] = {:?}",
        modal, summary.p_m, modal, summary.mean_alpha
    );
    Ok(())
}
