//! The subcommands. Each writes its artifacts into the output directory and
//! returns their paths.

use std::path::{Path, PathBuf};

use clap::Args;
use hybrid_imc::devlib::{builtin_device_table, find_device, load_device_table, DeviceSpec};
use hybrid_imc::hwcost::{CostReport, HybridConfig};
use hybrid_imc::nn::{load_checkpoint, save_checkpoint, Checkpoint, Network, ParentArchitecture};
use hybrid_imc::search::{
    evaluate_at_time, finetune, normalized_costs, run_search, DeployedModel, RETENTION_GRID,
};

use crate::config::{RunConfig, TaskProfile};
use crate::dataset::load_data;
use crate::error::{CliError, CliResult};
use crate::experiments::{irdrop_accuracy, irdrop_study, run_adc_sweep, DEFAULT_ADC_BITS, DEFAULT_SIZES};
use crate::output::{atomic_write, num, Csv};

/// Options shared by every subcommand.
#[derive(Args, Clone, Debug, Default)]
pub struct GlobalArgs {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed; overrides the config's.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory. Defaults to the config's `out`, then $HYBRID_IMC_OUT/<command>, then runs/<command>.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Device table (TOML) replacing the built-in SRAM/PCM/FeFET entries.
    #[arg(long, global = true)]
    pub device_table: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub profile: Option<TaskProfile>,
    /// Layer list, `vgg16` or `desk`.
    #[arg(long, global = true)]
    pub topology: Option<String>,
}

/// Resolved run state for one command.
pub struct Context {
    pub run: RunConfig,
    pub devices: Vec<DeviceSpec>,
    pub out: PathBuf,
}

impl Context {
    pub fn new(g: &GlobalArgs, command: &str) -> CliResult<Self> {
        let mut run = match &g.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = g.seed {
            run.seed = s;
        }
        if let Some(p) = &g.device_table {
            run.device_table = Some(p.clone());
        }
        if let Some(p) = g.profile {
            run.profile = p;
        }
        if let Some(t) = &g.topology {
            run.topology = t.clone();
        }
        run.search.seed = run.seed;
        run.search.profile = run.profile.cost_profile();
        run.finetune.seed = run.seed;
        run.check_paths()?;
        let devices = match &run.device_table {
            Some(p) => load_device_table(p)?,
            None => builtin_device_table(),
        };
        let out = match (&g.out, &run.out, std::env::var_os("HYBRID_IMC_OUT")) {
            (Some(o), _, _) => o.clone(),
            (None, Some(o), _) => o.clone(),
            (None, None, Some(root)) => PathBuf::from(root).join(command),
            (None, None, None) => PathBuf::from("runs").join(command),
        };
        std::fs::create_dir_all(&out)?;
        Ok(Context { run, devices, out })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn write(&self, name: &str, text: &str, artifacts: &mut Vec<PathBuf>) -> CliResult<()> {
        let p = self.path(name);
        atomic_write(&p, text.as_bytes())?;
        artifacts.push(p);
        Ok(())
    }
}

/// A configuration from a hybrid-config file or a single device name.
#[derive(Args, Clone, Debug, Default)]
pub struct ConfigChoice {
    /// Hybrid configuration written by `search`.
    #[arg(long, conflicts_with = "device")]
    pub hybrid: Option<PathBuf>,
    /// Homogeneous configuration on this device (name or letter).
    #[arg(long)]
    pub device: Option<String>,
}

impl ConfigChoice {
    fn resolve(&self, ctx: &Context, layers: usize) -> CliResult<Option<(String, HybridConfig)>> {
        if let Some(p) = &self.hybrid {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::MissingInput(format!("hybrid config {}: {e}", p.display())))?;
            let cfg = HybridConfig::parse_text(&text, &ctx.devices)?;
            cfg.validate(layers, &ctx.devices)?;
            return Ok(Some(("hybrid".into(), cfg)));
        }
        if let Some(d) = &self.device {
            let name = find_device(&ctx.devices, d)?.name.clone();
            let cfg = HybridConfig::homogeneous(&name, layers, ctx.run.profile.cost_profile());
            return Ok(Some((format!("all-{name}"), cfg)));
        }
        Ok(None)
    }
}

#[derive(Args, Clone, Debug, Default)]
pub struct SearchArgs {
    #[arg(long)]
    pub lambda1: Option<f64>,
    #[arg(long)]
    pub lambda2: Option<f64>,
    /// Drift time applied to the device branches, seconds.
    #[arg(long)]
    pub drift_time: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

pub fn cmd_search(ctx: &Context, a: &SearchArgs) -> CliResult<Vec<PathBuf>> {
    let mut cfg = ctx.run.search.clone();
    if let Some(x) = a.lambda1 {
        cfg.lambda1 = x;
    }
    if let Some(x) = a.lambda2 {
        cfg.lambda2 = x;
    }
    if let Some(x) = a.drift_time {
        cfg.drift_time = x;
    }
    if let Some(x) = a.epochs {
        cfg.epochs = x;
    }
    cfg.validate()?;
    let data = load_data(&ctx.run.data, ctx.run.seed)?;
    let net = Network::new(ctx.run.topology()?, ctx.run.seed)?;
    let mut parent = ParentArchitecture::new(net, ctx.devices.clone())?;
    let costs = normalized_costs(&parent.net, &ctx.devices, &ctx.run.cost_model())?;
    let (hybrid, trace) = run_search(&mut parent, &data.train, &cfg, &costs)?;
    println!("searched configuration: {}", hybrid.letters(&ctx.devices));

    let mut artifacts = Vec::new();
    ctx.write("hybrid.txt", &hybrid.to_text(&ctx.devices), &mut artifacts)?;
    ctx.write("trace.jsonl", &trace.to_jsonl(), &mut artifacts)?;
    let ckpt = Checkpoint::from_network(&parent.net, Some(&parent.affinity), ctx.run.seed, cfg.epochs as u64);
    let p = ctx.path("parent.ckpt");
    save_checkpoint(&ckpt, &p)?;
    artifacts.push(p);
    Ok(artifacts)
}

#[derive(Args, Clone, Debug, Default)]
pub struct FinetuneArgs {
    #[command(flatten)]
    pub choice: ConfigChoice,
    /// Start from this checkpoint (e.g. the searched parent) instead of a fresh initialization.
    #[arg(long)]
    pub from: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Train without device noise or ADC quantization.
    #[arg(long)]
    pub noise_free: bool,
}

pub fn cmd_finetune(ctx: &Context, a: &FinetuneArgs) -> CliResult<Vec<PathBuf>> {
    let net = match &a.from {
        Some(p) => load_checkpoint(p)?.to_network()?,
        None => Network::new(ctx.run.topology()?, ctx.run.seed)?,
    };
    let (name, cfg) = a
        .choice
        .resolve(ctx, net.conv_count())?
        .ok_or_else(|| CliError::MissingInput("finetune needs --hybrid FILE or --device NAME".into()))?;
    let mut ft = ctx.run.finetune.clone();
    if let Some(e) = a.epochs {
        ft.epochs = e;
    }
    if a.noise_free {
        ft.device_aware = false;
        ft.adc = false;
    }
    let data = load_data(&ctx.run.data, ctx.run.seed)?;
    let (model, log) = finetune(net, &cfg, &ctx.devices, &data.train, &ft)?;
    let acc = evaluate_at_time(&model, &data.test, 0.0, ctx.run.seed)?;
    println!("{name}: test accuracy at t = 0: {acc:.4}");

    let mut artifacts = Vec::new();
    let mut csv = Csv::new("finetune-log v1", &["epoch", "loss", "train_accuracy"]);
    for (i, (l, a)) in log.loss.iter().zip(&log.train_accuracy).enumerate() {
        csv.row(&[(i + 1).to_string(), num(*l), num(*a)]);
    }
    ctx.write("finetune.csv", csv.as_str(), &mut artifacts)?;
    let p = ctx.path("model.ckpt");
    save_checkpoint(&model.to_checkpoint(&ctx.devices, ctx.run.seed, ft.epochs as u64), &p)?;
    artifacts.push(p);
    Ok(artifacts)
}

fn load_model(path: &Path, devices: &[DeviceSpec]) -> CliResult<DeployedModel> {
    Ok(DeployedModel::from_checkpoint(&load_checkpoint(path)?, devices)?)
}

#[derive(Args, Clone, Debug, Default)]
pub struct EvalArgs {
    /// Checkpoint written by `finetune`.
    #[arg(long)]
    pub model: PathBuf,
    /// Inference times in seconds, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub time_grid: Option<Vec<f64>>,
}

pub fn cmd_eval(ctx: &Context, a: &EvalArgs) -> CliResult<Vec<PathBuf>> {
    let model = load_model(&a.model, &ctx.devices)?;
    let grid = a.time_grid.clone().unwrap_or_else(|| RETENTION_GRID.to_vec());
    if let Some(t) = grid.iter().find(|t| !(**t >= 0.0)) {
        return Err(CliError::Invalid(format!("inference time {t} must be non-negative")));
    }
    let data = load_data(&ctx.run.data, ctx.run.seed)?;
    let mut csv = Csv::new("retention v1", &["time_s", "accuracy"]);
    for &t in &grid {
        let acc = evaluate_at_time(&model, &data.test, t, ctx.run.seed)?;
        println!("t = {t:e} s: accuracy {acc:.4}");
        csv.row(&[num(t), num(acc)]);
    }
    let mut artifacts = Vec::new();
    ctx.write("retention.csv", csv.as_str(), &mut artifacts)?;
    Ok(artifacts)
}

pub const COST_TABLE_SCHEMA: &str = "cost-table v1";
pub const COST_TABLE_HEADER: [&str; 10] = [
    "name",
    "devices",
    "imc_area_mm2",
    "prog_energy_j",
    "adc_area_mm2",
    "adc_energy_j",
    "tops_per_mm2",
    "area_vs_pcm",
    "prog_energy_vs_pcm",
    "density_vs_sram",
];

pub fn cmd_cost(ctx: &Context, a: &ConfigChoice) -> CliResult<Vec<PathBuf>> {
    let topology = ctx.run.topology()?;
    let layers = topology.conv_count();
    let model = ctx.run.cost_model();
    let profile = ctx.run.profile.cost_profile();
    let mut rows: Vec<(String, HybridConfig)> = ["SRAM", "PCM", "FeFET"]
        .iter()
        .filter(|d| find_device(&ctx.devices, d).is_ok())
        .map(|d| (format!("all-{d}"), HybridConfig::homogeneous(d, layers, profile)))
        .collect();
    let chosen = a.resolve(ctx, layers)?;
    if let Some((name, cfg)) = &chosen {
        if !rows.iter().any(|(n, _)| n == name) {
            rows.push((name.clone(), cfg.clone()));
        }
    }
    let reports: Vec<(String, HybridConfig, CostReport)> = rows
        .into_iter()
        .map(|(n, c)| {
            let r = model.evaluate(&topology, &c, &ctx.devices)?;
            Ok((n, c, r))
        })
        .collect::<CliResult<_>>()?;
    let find = |n: &str| reports.iter().find(|(name, _, _)| name == n).map(|(_, _, r)| r);
    let pcm = find("all-PCM");
    let sram = find("all-SRAM");
    let ratio = |x: f64, base: Option<f64>| base.map_or(String::new(), |b| num(x / b));

    let mut artifacts = Vec::new();
    let mut table = Csv::new(COST_TABLE_SCHEMA, &COST_TABLE_HEADER);
    let mut summary = String::new();
    for (name, cfg, r) in &reports {
        let letters = cfg.letters(&ctx.devices).replace(' ', "");
        table.row(&[
            name.clone(),
            letters.clone(),
            num(r.imc_area_mm2),
            num(r.prog_energy_j),
            num(r.adc_area_mm2),
            num(r.adc_energy_j),
            num(r.tops_per_mm2),
            ratio(r.imc_area_mm2, pcm.map(|p| p.imc_area_mm2)),
            ratio(r.prog_energy_j, pcm.map(|p| p.prog_energy_j)),
            ratio(r.tops_per_mm2, sram.map(|s| s.tops_per_mm2)),
        ]);
        summary.push_str(&r.summary_line(name, &letters));
        summary.push('\n');
    }
    print!("{summary}");
    ctx.write("cost-table.csv", table.as_str(), &mut artifacts)?;
    ctx.write("cost-summary.txt", &summary, &mut artifacts)?;
    if let Some((_, cfg)) = &chosen {
        let r = model.evaluate(&topology, cfg, &ctx.devices)?;
        ctx.write("cost.csv", &r.to_csv(), &mut artifacts)?;
    }
    Ok(artifacts)
}

#[derive(Args, Clone, Debug, Default)]
pub struct SweepAdcArgs {
    /// ADC precisions to evaluate, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub bits: Option<Vec<u32>>,
    /// Number of random input vectors.
    #[arg(long, default_value_t = 64)]
    pub inputs: usize,
    #[arg(long, default_value_t = 0.0)]
    pub drift_time: f64,
}

pub fn cmd_sweep_adc(ctx: &Context, a: &SweepAdcArgs) -> CliResult<Vec<PathBuf>> {
    let bits = a.bits.clone().unwrap_or_else(|| DEFAULT_ADC_BITS.to_vec());
    let points = run_adc_sweep(&ctx.devices, ctx.run.seed, a.inputs, &bits, a.drift_time, &ctx.run.crossbar)?;
    let mut csv = Csv::new("adc-sweep v1", &["device", "adc_bits", "mse_analog", "mse_adc"]);
    for p in &points {
        csv.row(&[p.device.clone(), p.adc_bits.to_string(), num(p.mse_analog), num(p.mse_adc)]);
    }
    let mut artifacts = Vec::new();
    ctx.write("adc_sweep.csv", csv.as_str(), &mut artifacts)?;
    Ok(artifacts)
}

#[derive(Args, Clone, Debug, Default)]
pub struct IrdropArgs {
    /// Square crossbar sizes, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub sizes: Option<Vec<usize>>,
    /// Also report this model's test accuracy with every layer read through the parasitic arrays.
    #[arg(long)]
    pub model: Option<PathBuf>,
}

pub fn cmd_irdrop(ctx: &Context, a: &IrdropArgs) -> CliResult<Vec<PathBuf>> {
    let sizes = a.sizes.clone().unwrap_or_else(|| DEFAULT_SIZES.to_vec());
    if sizes.contains(&0) {
        return Err(CliError::Invalid("crossbar sizes must be positive".into()));
    }
    let rows = irdrop_study(&sizes, &ctx.devices, ctx.run.seed, &ctx.run.crossbar)?;
    let mut accuracy = Vec::new();
    if let Some(p) = &a.model {
        let model = load_model(p, &ctx.devices)?;
        let data = load_data(&ctx.run.data, ctx.run.seed)?;
        for &n in &sizes {
            accuracy.push((n, irdrop_accuracy(&model, &data.test, n, &ctx.run.crossbar)?));
        }
    }
    let mut csv = Csv::new("irdrop v1", &["size", "device", "relative_deviation", "model_accuracy"]);
    for r in &rows {
        let acc = accuracy.iter().find(|(n, _)| *n == r.size).map_or(String::new(), |(_, a)| num(*a));
        csv.row(&[r.size.to_string(), r.device.clone(), num(r.deviation), acc]);
    }
    let mut artifacts = Vec::new();
    ctx.write("irdrop.csv", csv.as_str(), &mut artifacts)?;
    Ok(artifacts)
}
