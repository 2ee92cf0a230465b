use std::process::ExitCode;

use clap::Parser;
use factorlens_cli::args::{Cli, Format};
use factorlens_cli::run;
use serde_json::json;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            // help and version requests are not usage errors
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(&cli.globals, &cli.command) {
        Ok(report) => {
            match cli.globals.format {
                Format::Json => {
                    let out = json!({"result": report.json, "manifest": report.manifest});
                    println!("{}", serde_json::to_string_pretty(&out).expect("json values serialise"));
                }
                Format::Text => {
                    print!("{}", report.text);
                    if let Some(m) = report.manifest {
                        println!("run manifest {m}");
                    }
                }
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            let code = e.exit_code();
            match cli.globals.format {
                Format::Json => eprintln!("{}", json!({"error": e.to_string(), "exit_code": code})),
                Format::Text => eprintln!("error: {e}"),
            }
            ExitCode::from(code as u8)
        }
    }
}
