//! Subcommand implementations.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use helevel::arch::{build, make_he_friendly, preset, with_poly_degree};
use helevel::cost::{compare as compare_reports, price_census, Comparison, CostReport, OpCensus};
use helevel::graph::{emit_graph, parse_graph};
use helevel::mock::{
    cleartext_reference, container, execute, noise_bound, random_inputs, random_weights,
    ExecOptions, PolyTable,
};
use helevel::planner::{plan, verify_plan};
use helevel::{Config, Graph, Plan};

use crate::error::CliError;
use crate::{Common, Format, Target};

/// Degree used when an input graph still carries ReLUs and none is given.
const DEFAULT_DEGREE: u32 = 8;
const DEFAULT_OUT: &str = "helevel-out";
/// Cleartext agreement tolerance at zero noise.
const TRANSPARENCY_TOL: f64 = 1e-4;

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn load_config(common: &Common) -> Result<Config, CliError> {
    let mut cfg = Config::default();
    for path in [&common.config, &common.weights_config]
        .into_iter()
        .flatten()
    {
        cfg.apply(&read(path)?)
            .map_err(|e| CliError::config("ConfigError", format!("{}: {e}", path.display())))?;
    }
    if let Some(m) = common.max_level {
        cfg.planner.max_level = m;
        cfg.planner.check()?;
    }
    if let Some(s) = common.seed {
        cfg.noise.seed = s;
    }
    Ok(cfg)
}

enum Source<'a> {
    Preset(&'a str),
    File(&'a Path),
}

impl<'a> Source<'a> {
    fn of(t: &'a Target) -> Self {
        match (&t.preset, &t.graph) {
            (Some(p), _) => Source::Preset(p),
            (None, Some(g)) => Source::File(g),
            (None, None) => unreachable!("clap requires one target"),
        }
    }
}

/// Network label and graph for a target at an optional degree.
fn load(src: &Source, degree: Option<u32>) -> Result<(String, Graph), CliError> {
    match src {
        Source::Preset(name) => {
            let mut arch = preset(name)?;
            arch.poly_degree = degree.unwrap_or(arch.poly_degree);
            Ok((format!("{name}@d{}", arch.poly_degree), build(&arch)?))
        }
        Source::File(path) => {
            let g = parse_graph(&read(path)?)?;
            let stem = path
                .file_stem()
                .map_or("graph".into(), |s| s.to_string_lossy().into_owned());
            if g.is_planned() {
                return Ok((stem, g));
            }
            let g = match degree {
                Some(d) => with_poly_degree(&g, d)?,
                None => make_he_friendly(&g, DEFAULT_DEGREE)?,
            };
            let label = degree.map_or(stem.clone(), |d| format!("{stem}@d{d}"));
            Ok((label, g))
        }
    }
}

/// Plan unplanned graphs; planned ones are taken as given.
fn plan_for(g: &Graph, cfg: &Config) -> Result<Plan, CliError> {
    if g.is_planned() {
        Ok(Plan::from_planned(g.clone(), &cfg.rules, &cfg.planner)?)
    } else {
        Ok(plan(g, &cfg.rules, &cfg.planner)?)
    }
}

fn out_dir(common: &Common) -> Result<PathBuf, CliError> {
    let dir = common.out.clone().unwrap_or_else(|| DEFAULT_OUT.into());
    fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    Ok(dir)
}

fn file_stem(label: &str) -> String {
    label.replace(['@', '/', '\\'], "-")
}

fn report_table(p: &Plan, r: &CostReport) -> String {
    let mut out = format!(
        "network      {}\nbootstraps   {}\nrescales     {}\ntransforms   {}\ndepth        {}\nmax_level    {}\ncpu_seconds  {:.3}\n\n",
        r.variant_name,
        p.bootstrap_count,
        p.rescale_count,
        p.transform_count,
        p.trace.depth,
        p.config.max_level,
        r.total_cpu_seconds
    );
    out.push_str(&format!(
        "{:<18} {:>8} {:>16}\n",
        "op_class", "count", "subtotal_seconds"
    ));
    for (class, item) in &r.breakdown {
        out.push_str(&format!(
            "{:<18} {:>8} {:>16.3}\n",
            class.name(),
            item.count,
            item.subtotal
        ));
    }
    out
}

pub fn analyze(target: &Target, common: &Common, degree: Option<u32>) -> Result<(), CliError> {
    let cfg = load_config(common)?;
    let (label, g) = load(&Source::of(target), degree)?;
    let p = plan_for(&g, &cfg)?;
    let report = price_census(&label, &OpCensus::of(&p), &cfg.weights);

    let dir = out_dir(common)?;
    let stem = file_stem(&label);
    write(&dir.join(format!("{stem}.report.json")), &report.to_json())?;
    write(&dir.join(format!("{stem}.report.csv")), &report.to_csv())?;
    write(
        &dir.join(format!("{stem}.planned.hegraph")),
        &emit_graph(&p.planned),
    )?;
    write(&dir.join(format!("{stem}.plan.json")), &p.counters_json())?;

    match common.format {
        Format::Csv => print!("{}", report.to_csv()),
        Format::Json => println!("{}", report.to_json()),
        Format::Table => print!("{}", report_table(&p, &report)),
    }
    Ok(())
}

fn comparison_table(c: &Comparison) -> String {
    let mut out = format!(
        "{:<24} {:>10} {:>9} {:>10} {:>14} {:>9} {:>10}\n",
        "variant", "bootstraps", "rescales", "transforms", "cpu_seconds", "cpu_ratio", "boot_ratio"
    );
    for r in &c.rows {
        out.push_str(&format!(
            "{:<24} {:>10} {:>9} {:>10} {:>14.3} {:>9.3} {:>10.3}\n",
            r.variant,
            r.bootstraps,
            r.rescales,
            r.transforms,
            r.cpu_seconds,
            r.ratio_vs_ref,
            r.bootstrap_ratio_vs_ref
        ));
    }
    out
}

pub fn compare(
    presets: &[String],
    graphs: &[PathBuf],
    common: &Common,
    degrees: &[u32],
) -> Result<(), CliError> {
    let mut sources: Vec<Source> = presets.iter().map(|p| Source::Preset(p)).collect();
    sources.extend(graphs.iter().map(|g| Source::File(g)));
    if sources.len() < 2 {
        return Err(CliError::config(
            "UsageError",
            "compare needs at least two targets",
        ));
    }
    let cfg = load_config(common)?;
    let jobs: Vec<(u32, &Source)> = degrees
        .iter()
        .flat_map(|&d| sources.iter().map(move |s| (d, s)))
        .collect();
    let reports: Vec<CostReport> = jobs
        .par_iter()
        .map(|(d, src)| {
            let (label, g) = load(src, Some(*d))?;
            let p = plan_for(&g, &cfg)?;
            Ok(price_census(&label, &OpCensus::of(&p), &cfg.weights))
        })
        .collect::<Result<_, CliError>>()?;
    // Ratios are taken against the first target at the same degree.
    let rows = reports
        .chunks(sources.len())
        .flat_map(|group| compare_reports(group).rows)
        .collect();
    let comparison = Comparison { rows };

    if common.out.is_some() {
        let dir = out_dir(common)?;
        write(&dir.join("comparison.csv"), &comparison.to_csv())?;
    }
    match common.format {
        Format::Csv => print!("{}", comparison.to_csv()),
        Format::Json => println!(
            "{}",
            serde_json::to_string_pretty(&comparison).expect("comparisons serialize")
        ),
        Format::Table => print!("{}", comparison_table(&comparison)),
    }
    Ok(())
}

pub fn validate(
    target: &Target,
    common: &Common,
    degree: Option<u32>,
    weights_path: Option<&Path>,
) -> Result<(), CliError> {
    let cfg = load_config(common)?;
    let (label, g) = load(&Source::of(target), degree)?;
    let p = plan_for(&g, &cfg)?;
    let seed = cfg.noise.seed;
    let inputs = random_inputs(&p.planned, seed);
    let weights = match weights_path {
        Some(path) => container::read_file(path)?,
        None => random_weights(&p.planned, seed.wrapping_add(1))?,
    };
    let acts = PolyTable::shipped().with_overrides(&cfg.activations);
    let opts = ExecOptions {
        noise: cfg.noise,
        activations: acts.clone(),
    };

    println!(
        "validating {label} (max_level {}, epsilon {})",
        p.config.max_level, cfg.noise.epsilon
    );
    let exec = execute(&p, &inputs, &weights, &opts)?;
    println!(
        "ok   mock execution within budget ({} nodes)",
        exec.values.len()
    );
    verify_plan(&p)?;
    println!("ok   static plan invariants");

    if let Some((id, &got)) = exec
        .runtime_trace
        .cidx_of
        .iter()
        .find(|(id, c)| p.trace.cidx_of.get(*id) != Some(c))
    {
        return Err(CliError::module(
            "TraceMismatchError",
            format!(
                "node `{id}` ran at cidx {got}, static trace says {:?}",
                p.trace.cidx_of.get(id)
            ),
        ));
    }
    println!("ok   runtime trace equals static trace");
    if exec.census != OpCensus::of(&p) {
        return Err(CliError::module(
            "CensusMismatchError",
            "executed op census differs from the plan",
        ));
    }
    println!("ok   op census equals plan counters");

    let clear = cleartext_reference(&p.planned, &inputs, &weights, &acts)?;
    if cfg.noise.epsilon == 0.0 {
        for (id, t) in &exec.outputs {
            let diff = t.max_abs_diff(&clear[id]);
            if diff > TRANSPARENCY_TOL {
                return Err(CliError::module(
                    "CleartextMismatchError",
                    format!("output `{id}` differs from cleartext by {diff:e}"),
                ));
            }
        }
        println!("ok   outputs match cleartext within {TRANSPARENCY_TOL:e}");
    } else {
        let bound = noise_bound(&p.planned, &inputs, &weights, &acts, cfg.noise.epsilon)?;
        let mut worst = 0.0f64;
        for (id, t) in &exec.outputs {
            for ((e, c), b) in t.data.iter().zip(&clear[id].data).zip(&bound[id].data) {
                let dev = (e - c).abs();
                if dev > b + 1e-9 {
                    return Err(CliError::module(
                        "NoiseBoundError",
                        format!("output `{id}` deviates by {dev:e}, bound {b:e}"),
                    ));
                }
                worst = worst.max(dev);
            }
        }
        println!("ok   noise within interval bound (largest deviation {worst:.3e})");
    }
    println!("validate: all checks passed");
    Ok(())
}
