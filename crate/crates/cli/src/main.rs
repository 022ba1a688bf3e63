use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hybrid_imc_cli::commands::*;
use hybrid_imc_cli::output::write_run_meta;

#[derive(Parser)]
#[command(name = "hybrid-imc", version, about = "Hybrid-device IMC search, simulation and cost reports")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Search a per-layer device configuration.
    Search(SearchArgs),
    /// Device-aware training of a fixed configuration.
    Finetune(FinetuneArgs),
    /// Test accuracy over inference time (retention curve).
    Eval(EvalArgs),
    /// Area, energy and density for the homogeneous baselines and an optional configuration.
    Cost(ConfigChoice),
    /// Output error against ADC precision for each device on a fixed layer.
    SweepAdc(SweepAdcArgs),
    /// IR-drop deviation (and optionally model accuracy) against crossbar size.
    Irdrop(IrdropArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let name = match &cli.command {
        Command::Search(_) => "search",
        Command::Finetune(_) => "finetune",
        Command::Eval(_) => "eval",
        Command::Cost(_) => "cost",
        Command::SweepAdc(_) => "sweep-adc",
        Command::Irdrop(_) => "irdrop",
    };
    let result = Context::new(&cli.global, name).and_then(|ctx| {
        let artifacts = match &cli.command {
            Command::Search(a) => cmd_search(&ctx, a),
            Command::Finetune(a) => cmd_finetune(&ctx, a),
            Command::Eval(a) => cmd_eval(&ctx, a),
            Command::Cost(a) => cmd_cost(&ctx, a),
            Command::SweepAdc(a) => cmd_sweep_adc(&ctx, a),
            Command::Irdrop(a) => cmd_irdrop(&ctx, a),
        }?;
        write_run_meta(&ctx.out, name, ctx.run.seed, &artifacts)?;
        for a in &artifacts {
            eprintln!("wrote {}", a.display());
        }
        Ok(())
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
