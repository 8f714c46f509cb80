use std::process::ExitCode;

use assayplan_cli::{
    cmd_benchmark, cmd_plan, cmd_serve, cmd_validate, invalid, Cli, CliResult, Command,
};
use clap::Parser;

fn run(cli: Cli) -> CliResult<u8> {
    match cli.command {
        Command::Validate(flags) => {
            let report = cmd_validate(&flags)?;
            print!("{report}");
            Ok(u8::from(!report.is_clean()))
        }
        Command::Plan(flags) => {
            let out = cmd_plan(&flags)?;
            print!("{}", out.report.summary());
            println!("wrote {}", out.dir.display());
            Ok(0)
        }
        Command::Benchmark(flags) => {
            let out = cmd_benchmark(&flags)?;
            let r = &out.report;
            println!(
                "{} trials: top-1 {:.2}, top-2 {:.2}, simulated {:.2}",
                r.rows.len(),
                r.t1_rate,
                r.t2_rate,
                r.sim_rate
            );
            println!("wrote {}", out.dir.display());
            Ok(0)
        }
        Command::Serve(flags) => {
            let runtime = tokio::runtime::Runtime::new().map_err(invalid)?;
            runtime.block_on(cmd_serve(&flags))?;
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
