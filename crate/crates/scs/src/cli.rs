//! Command-line front end.
//!
//! Subcommands compose through files: `scs` writes a screening result
//! (scs.json + records.csv) that `metrics` consumes, so expensive
//! screening passes are reusable. `simulate` and `theory` drive the
//! synthetic studies, `check` tests one candidate selection. Every
//! output directory gets a manifest recording parameters, input
//! digests, and the tool version.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::loss::{normal_quantile, CovMode, LossSpec};
use crate::metrics::{
    cii_graph_dot, cii_graph_export, co_inclusion, lower_boundary_of, rmi,
};
use crate::panel::{CsvOptions, ReturnPanel};
use crate::screening::{build_scs, plausibility_check, ScreenConfig, ScsResult};
use crate::selection::SelectionMask;
use crate::simulate::{
    realize_population, run_mc, substream, theoretical_expected_size, CorrelationModel,
    GeneratorSpec, McConfig, MeanRule,
};

/// Unit of the input return panel; outputs echo losses in percent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    /// Input values are percentages (e.g. 1.5 for 1.5%).
    Percent,
    /// Input values are plain fractions (e.g. 0.015).
    Fraction,
}

impl Scale {
    /// Multiplier turning a loss in input units into percent.
    fn to_percent(self) -> f64 {
        match self {
            Scale::Percent => 1.0,
            Scale::Fraction => 100.0,
        }
    }
}

/// Serialized screening output (scs.json).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScsFile {
    pub version: String,
    pub scale: Scale,
    pub labels: Vec<String>,
    pub result: ScsResult,
}

/// Reproducibility record written next to every command's outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub parameters: serde_json::Value,
    pub input_digests: BTreeMap<String, String>,
    pub started_at_unix: u64,
    pub finished_at_unix: u64,
}

#[derive(Parser)]
#[command(
    name = "scs",
    version,
    about = "Selection confidence sets for equally weighted portfolios"
)]
struct Cli {
    /// Worker threads (default: machine parallelism; env SCS_THREADS).
    #[arg(long, global = true, env = "SCS_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Screen every selection against the empirical optimum.
    Scs(ScsArgs),
    /// Post-selection metrics from a saved screening result.
    Metrics(MetricsArgs),
    /// Monte Carlo size/coverage study on synthetic populations.
    Simulate(SimulateArgs),
    /// Asymptotic expected size and bounds from exact moments.
    Theory(TheoryArgs),
    /// Test whether one candidate selection is plausible.
    Check(CheckArgs),
}

#[derive(Args)]
struct PanelArgs {
    /// Input return panel CSV (header row of labels, one row per period).
    #[arg(long)]
    input: PathBuf,
    /// Loss: mv:gamma=G[,scale=C] | sharpe | es:level=L
    #[arg(long)]
    loss: LossSpec,
    /// Confidence parameter in (0,1).
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Covariance estimator for the studentizer.
    #[arg(long, default_value = "gaussian")]
    cov_mode: CovMode,
    /// Unit of the input values.
    #[arg(long, value_enum, default_value_t = Scale::Fraction)]
    scale: Scale,
}

#[derive(Args)]
struct ScsArgs {
    #[command(flatten)]
    panel: PanelArgs,
    /// Restrict the universe to selections of at most this many assets.
    #[arg(long)]
    filter_max_assets: Option<u32>,
    /// Output directory.
    #[arg(long, env = "SCS_OUT_DIR")]
    out: PathBuf,
}

#[derive(Args)]
struct MetricsArgs {
    /// scs.json produced by the `scs` command.
    #[arg(long)]
    scs: PathBuf,
    /// Levels for the metrics table and II profile.
    #[arg(long, value_delimiter = ',', default_values_t = [0.01, 0.05, 0.10])]
    alphas: Vec<f64>,
    /// Minimum co-inclusion for a graph edge.
    #[arg(long, default_value_t = 0.01)]
    cii_threshold: f64,
    #[arg(long, env = "SCS_OUT_DIR")]
    out: PathBuf,
}

#[derive(Args)]
struct ModelArgs {
    /// Correlation design: model1 | model2
    #[arg(long)]
    model: String,
    /// Model 1 precision edge weight.
    #[arg(long)]
    v: Option<f64>,
    /// Model 2 exchangeable correlation.
    #[arg(long)]
    rho: Option<f64>,
    /// Universe size.
    #[arg(long)]
    n: usize,
    /// Mean-rule noise parameter.
    #[arg(long, default_value_t = 0.012)]
    noise: f64,
    /// Interpret --noise as a variance instead of a standard deviation.
    #[arg(long, default_value_t = false)]
    noise_is_variance: bool,
    /// Master seed.
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

impl ModelArgs {
    fn generator(&self) -> Result<GeneratorSpec> {
        let model = match self.model.as_str() {
            "model1" => CorrelationModel::Model1 {
                v: self.v.ok_or_else(|| {
                    Error::InvalidArgument("model1 requires --v".into())
                })?,
            },
            "model2" => CorrelationModel::Model2 {
                rho: self.rho.ok_or_else(|| {
                    Error::InvalidArgument("model2 requires --rho".into())
                })?,
            },
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown model {other:?} (expected model1 or model2)"
                )))
            }
        };
        Ok(GeneratorSpec {
            model,
            n_assets: self.n,
            mean_rule: MeanRule {
                noise_param: self.noise,
                noise_is_variance: self.noise_is_variance,
                ..MeanRule::default()
            },
            seed: self.seed,
        })
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Sample sizes, e.g. 100,250,1000
    #[arg(long = "T", value_delimiter = ',', required = true)]
    ts: Vec<usize>,
    /// Losses, e.g. sharpe,mv:gamma=0.5,es:level=0.1
    #[arg(long, value_delimiter = ',', required = true)]
    losses: Vec<LossSpec>,
    #[arg(long, value_delimiter = ',', default_values_t = [0.10, 0.05, 0.01])]
    alphas: Vec<f64>,
    #[arg(long, default_value_t = 300)]
    runs: usize,
    /// Share a single population realization across runs instead of
    /// redrawing per run.
    #[arg(long, default_value_t = false)]
    fixed_population: bool,
    #[arg(long, default_value = "gaussian")]
    cov_mode: CovMode,
    #[arg(long, env = "SCS_OUT_DIR")]
    out: PathBuf,
}

#[derive(Args)]
struct TheoryArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    loss: LossSpec,
    #[arg(long, value_delimiter = ',', default_values_t = [0.05])]
    alphas: Vec<f64>,
    #[arg(long = "T", value_delimiter = ',', required = true)]
    ts: Vec<usize>,
    #[arg(long, env = "SCS_OUT_DIR")]
    out: PathBuf,
}

#[derive(Args)]
struct CheckArgs {
    #[command(flatten)]
    panel: PanelArgs,
    /// Candidate selection: comma-separated labels or hex mask 0x../N.
    #[arg(long)]
    candidate: String,
}

pub fn run() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        // best effort: the global pool may already exist in tests
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    let outcome = match cli.command {
        Command::Scs(args) => cmd_scs(&args),
        Command::Metrics(args) => cmd_metrics(&args),
        Command::Simulate(args) => cmd_simulate(&args),
        Command::Theory(args) => cmd_theory(&args),
        Command::Check(args) => cmd_check(&args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn file_digest(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    write_text(path, &(text + "\n"))
}

fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_manifest(
    out: &Path,
    command: &str,
    parameters: serde_json::Value,
    inputs: &[&Path],
    started_at_unix: u64,
) -> Result<()> {
    let mut input_digests = BTreeMap::new();
    for path in inputs {
        input_digests.insert(path.display().to_string(), file_digest(path)?);
    }
    let manifest = RunManifest {
        command: command.to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        parameters,
        input_digests,
        started_at_unix,
        finished_at_unix: now_unix(),
    };
    write_json(&out.join("manifest.json"), &manifest)
}

fn load_panel(args: &PanelArgs) -> Result<ReturnPanel> {
    ReturnPanel::load_csv(&args.input, &CsvOptions::default())
}

fn screen_config(args: &PanelArgs) -> Result<ScreenConfig> {
    ScreenConfig::new(args.alpha, args.cov_mode)
}

fn cmd_scs(args: &ScsArgs) -> Result<()> {
    let started = now_unix();
    let panel = load_panel(&args.panel)?;
    let mut config = screen_config(&args.panel)?;
    if let Some(k) = args.filter_max_assets {
        if k == 0 {
            return Err(Error::InvalidArgument(
                "--filter-max-assets must be at least 1".into(),
            ));
        }
        config.mask_filter = Some(std::sync::Arc::new(move |m: &SelectionMask| {
            m.weight() <= k
        }));
    }
    let result = build_scs(&panel, &args.panel.loss, &config)?;
    ensure_dir(&args.out)?;

    // records.csv: one row per screened mask
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["mask", "labels", "weight", "loss", "z", "included", "degenerate"])
        .map_err(Error::from)?;
    for r in &result.records {
        w.write_record([
            r.mask.to_hex(),
            r.mask.label_list(panel.labels()),
            r.mask.weight().to_string(),
            format!("{:?}", r.loss),
            format!("{:?}", r.z),
            r.included.to_string(),
            r.degenerate.to_string(),
        ])
        .map_err(Error::from)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Internal(format!("csv flush: {e}")))?;
    write_text(
        &args.out.join("records.csv"),
        &String::from_utf8(bytes).map_err(|e| Error::Internal(e.to_string()))?,
    )?;

    let file = ScsFile {
        version: env!("CARGO_PKG_VERSION").to_string(),
        scale: args.panel.scale,
        labels: panel.labels().to_vec(),
        result,
    };
    write_json(&args.out.join("scs.json"), &file)?;

    let params = serde_json::json!({
        "input": args.panel.input.display().to_string(),
        "loss": args.panel.loss,
        "alpha": args.panel.alpha,
        "cov_mode": args.panel.cov_mode,
        "scale": args.panel.scale,
        "filter_max_assets": args.filter_max_assets,
    });
    write_manifest(&args.out, "scs", params, &[&args.panel.input], started)?;
    println!(
        "reference {} ({}), {} of {} selections retained at alpha = {}",
        file.result.reference.to_hex(),
        file.result.reference.label_list(&file.labels),
        file.result.included_count,
        file.result.universe_size,
        file.result.alpha
    );
    Ok(())
}

fn load_scs_file(path: &Path) -> Result<ScsFile> {
    let bytes = fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(serde_json::from_slice(&bytes)?)
}

fn cmd_metrics(args: &MetricsArgs) -> Result<()> {
    let started = now_unix();
    let file = load_scs_file(&args.scs)?;
    let scs = &file.result;
    let pct = file.scale.to_percent();
    ensure_dir(&args.out)?;

    for &alpha in &args.alphas {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "alpha must lie in (0,1), got {alpha}"
            )));
        }
        if !scs.records_complete && alpha < scs.alpha {
            return Err(Error::RecordsIncomplete);
        }
    }

    // metrics.csv: one row per level, losses in percent
    let mut metrics_csv = String::from(
        "alpha,scs_size,lb_size,rmi_pct,loss_min_pct,loss_max_pct,spread_pct\n",
    );
    // ii_profile.csv: level x asset table
    let mut ii_csv = String::from("alpha");
    for label in &file.labels {
        ii_csv.push(',');
        ii_csv.push_str(label);
    }
    ii_csv.push('\n');

    for &alpha in &args.alphas {
        let q = normal_quantile(1.0 - alpha)?;
        let included: Vec<SelectionMask> = scs
            .records
            .iter()
            .filter(|r| r.z <= q)
            .map(|r| r.mask)
            .collect();
        if included.is_empty() {
            return Err(Error::Internal(format!(
                "no selections retained at alpha = {alpha}"
            )));
        }
        let loss_max = scs
            .records
            .iter()
            .filter(|r| r.z <= q)
            .map(|r| r.loss)
            .fold(f64::NEG_INFINITY, f64::max);
        let lb = lower_boundary_of(&included, scs.n_assets);
        let rmi_value = rmi(included.len(), scs.universe_size)?;
        metrics_csv.push_str(&format!(
            "{},{},{},{:.2},{:.2},{:.2},{:.2}\n",
            alpha,
            included.len(),
            lb.len(),
            100.0 * rmi_value,
            pct * scs.reference_loss,
            pct * loss_max,
            pct * (loss_max - scs.reference_loss),
        ));

        let mut counts = vec![0usize; scs.n_assets];
        for m in &included {
            for j in m.assets() {
                counts[j] += 1;
            }
        }
        ii_csv.push_str(&format!("{alpha}"));
        for &c in &counts {
            ii_csv.push_str(&format!(",{:?}", c as f64 / included.len() as f64));
        }
        ii_csv.push('\n');
    }
    write_text(&args.out.join("metrics.csv"), &metrics_csv)?;
    write_text(&args.out.join("ii_profile.csv"), &ii_csv)?;

    // inclusion / co-inclusion / graph at the build level
    let ii = crate::metrics::inclusion_importance(scs)?;
    let mut inclusion_csv = String::from("asset,label,ii\n");
    for (j, v) in ii.iter().enumerate() {
        inclusion_csv.push_str(&format!("{},{},{:?}\n", j, file.labels[j], v));
    }
    write_text(&args.out.join("inclusion.csv"), &inclusion_csv)?;

    let cii = co_inclusion(scs)?;
    let mut cii_csv = String::from("label");
    for label in &file.labels {
        cii_csv.push(',');
        cii_csv.push_str(label);
    }
    cii_csv.push('\n');
    for (i, row) in cii.iter().enumerate() {
        cii_csv.push_str(&file.labels[i]);
        for v in row {
            cii_csv.push_str(&format!(",{v:?}"));
        }
        cii_csv.push('\n');
    }
    write_text(&args.out.join("cii.csv"), &cii_csv)?;

    let edges = cii_graph_export(scs, args.cii_threshold)?;
    write_text(
        &args.out.join("cii.dot"),
        &cii_graph_dot(&edges, &file.labels, args.cii_threshold),
    )?;

    let params = serde_json::json!({
        "scs": args.scs.display().to_string(),
        "alphas": args.alphas,
        "cii_threshold": args.cii_threshold,
    });
    write_manifest(&args.out, "metrics", params, &[&args.scs], started)?;
    Ok(())
}

fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let started = now_unix();
    let genspec = args.model.generator()?;
    let config = McConfig {
        runs: args.runs,
        redraw_population: !args.fixed_population,
        cov_mode: args.cov_mode,
        ..McConfig::default()
    };
    let report = run_mc(&genspec, &args.losses, &args.alphas, &args.ts, &config)?;
    ensure_dir(&args.out)?;

    // table.csv in the loss x T layout with per-level column groups
    let mut table = String::from("loss,T");
    for &alpha in &args.alphas {
        let level = 1.0 - alpha;
        table.push_str(&format!(
            ",kappa@{level},kappa_se@{level},coverage_pct@{level},coverage_se_pct@{level},kappa_lb@{level},kappa_lb_se@{level}"
        ));
    }
    table.push('\n');
    for (li, loss) in args.losses.iter().enumerate() {
        for (ti, &t) in args.ts.iter().enumerate() {
            table.push_str(&format!("{loss},{t}"));
            for ai in 0..args.alphas.len() {
                let idx = (li * args.alphas.len() + ai) * args.ts.len() + ti;
                let c = &report.cells[idx];
                table.push_str(&format!(
                    ",{:.1},{:.1},{:.1},{:.1},{:.1},{:.1}",
                    c.kappa,
                    c.kappa_se,
                    100.0 * c.coverage,
                    100.0 * c.coverage_se,
                    c.kappa_lower,
                    c.kappa_lower_se
                ));
            }
            table.push('\n');
        }
    }
    write_text(&args.out.join("table.csv"), &table)?;
    write_json(&args.out.join("runs.json"), &report)?;

    let params = serde_json::json!({
        "generator": genspec,
        "losses": args.losses,
        "alphas": args.alphas,
        "T": args.ts,
        "runs": args.runs,
        "fixed_population": args.fixed_population,
        "cov_mode": args.cov_mode,
    });
    write_manifest(&args.out, "simulate", params, &[], started)?;
    Ok(())
}

fn cmd_theory(args: &TheoryArgs) -> Result<()> {
    let started = now_unix();
    let genspec = args.model.generator()?;
    let model = realize_population(&genspec, &mut substream(genspec.seed, 0, 1))?;
    ensure_dir(&args.out)?;
    let mut csv = String::from(
        "alpha,T,expected,lower_bound,upper_bound,gamma_min,s0_size,universe_size\n",
    );
    for &alpha in &args.alphas {
        for &t in &args.ts {
            let th = theoretical_expected_size(&model, &args.loss, alpha, t)?;
            csv.push_str(&format!(
                "{},{},{:?},{:?},{:?},{:?},{},{}\n",
                alpha,
                t,
                th.expected,
                th.lower_bound,
                th.upper_bound,
                th.gamma_min,
                th.s0_size,
                th.universe_size
            ));
        }
    }
    write_text(&args.out.join("theory.csv"), &csv)?;
    let params = serde_json::json!({
        "generator": genspec,
        "loss": args.loss,
        "alphas": args.alphas,
        "T": args.ts,
    });
    write_manifest(&args.out, "theory", params, &[], started)?;
    Ok(())
}

fn parse_candidate(text: &str, panel: &ReturnPanel) -> Result<SelectionMask> {
    if text.starts_with("0x") {
        return SelectionMask::from_hex(text);
    }
    let mut bits = 0u32;
    for label in text.split(',') {
        let label = label.trim();
        let j = panel
            .label_index(label)
            .ok_or_else(|| Error::UnknownLabel(label.to_string()))?;
        bits |= 1 << j;
    }
    SelectionMask::new(bits, panel.assets())
}

fn cmd_check(args: &CheckArgs) -> Result<()> {
    let panel = load_panel(&args.panel)?;
    let config = screen_config(&args.panel)?;
    let candidate = parse_candidate(&args.candidate, &panel)?;
    let report = plausibility_check(&panel, &args.panel.loss, &config, &candidate)?;
    let pct = args.panel.scale.to_percent();
    println!(
        "candidate {} ({})",
        report.candidate.to_hex(),
        report.candidate.label_list(panel.labels())
    );
    println!(
        "reference {} ({})",
        report.reference.to_hex(),
        report.reference.label_list(panel.labels())
    );
    println!(
        "loss {:.4}% vs reference {:.4}%",
        pct * report.candidate_loss,
        pct * report.reference_loss
    );
    println!("z = {:.4}, q = {:.4}", report.z, report.q);
    println!(
        "verdict: {} at alpha = {}",
        if report.included { "included" } else { "excluded" },
        args.panel.alpha
    );
    Ok(())
}
